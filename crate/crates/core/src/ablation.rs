//! Ablation grids: named config overrides trained and evaluated on shared data.
//!
//! Grid file, one entry per line, `#` starts a comment:
//!
//! ```text
//! full: ablation=full
//! lgv_only: ablation=lgv-only
//! baseline_fast: ablation=concat-baseline lr=0.002
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ModelConfig;
use crate::data::Sample;
use crate::error::{PfosError, Result};
use crate::train::{evaluate, train, EvalReport};

#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl GridEntry {
    pub fn config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_grid(text: &str) -> Result<Vec<GridEntry>> {
    let mut entries: Vec<GridEntry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |why: &str| PfosError::Config(format!("grid line {}: {why}: `{raw}`", n + 1));
        let (name, rest) = line.split_once(':').ok_or_else(|| bad("expected `name: key=value ...`"))?;
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(bad("entry names are single non-empty words"));
        }
        if entries.iter().any(|e| e.name == name) {
            return Err(bad("duplicate entry name"));
        }
        let overrides = rest
            .split_whitespace()
            .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| bad("expected key=value")))
            .collect::<Result<Vec<_>>>()?;
        entries.push(GridEntry { name: name.to_string(), overrides });
    }
    if entries.is_empty() {
        return Err(PfosError::Config("ablation grid has no entries".into()));
    }
    Ok(entries)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub config: ModelConfig,
    pub best_epoch: usize,
    pub report: EvalReport,
}

/// Trains every entry on `train`, selects on `val` and scores on `test`.
/// With `out_dir`, each entry writes its run under `out_dir/<name>`.
pub fn run_grid(
    base: &ModelConfig,
    entries: &[GridEntry],
    vocab_size: usize,
    train_set: &[Sample],
    val: &[Sample],
    test: &[Sample],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for e in entries {
        let cfg = e.config(base)?;
        log::info!("ablation `{}`: {}", e.name, cfg.to_line());
        let dir = out_dir.map(|d| d.join(&e.name));
        let outcome = train(&cfg, vocab_size, train_set, val, dir.as_deref())?;
        let report = evaluate(&outcome.best, test)?;
        rows.push(AblationRow { name: e.name.clone(), config: cfg, best_epoch: outcome.best_epoch, report });
    }
    Ok(rows)
}

pub fn table_text(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<20} {:<10} {:>8} {:>8} {:>8} {:>8}\n", "name", "ablation", "acc", "easy", "hard", "mIoU");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<20} {:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.name,
            r.config.ablation.to_string(),
            r.report.accuracy,
            r.report.easy_accuracy,
            r.report.hard_accuracy,
            r.report.mean_iou
        );
    }
    out
}

pub fn table_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("name,ablation,best_epoch,accuracy,easy_accuracy,hard_accuracy,mean_iou\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.name,
            r.config.ablation,
            r.best_epoch,
            r.report.accuracy,
            r.report.easy_accuracy,
            r.report.hard_accuracy,
            r.report.mean_iou
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;

    #[test]
    fn parses_entries_and_applies_overrides() {
        let g = parse_grid("# grid\nfull: ablation=full\n\nlgv: ablation=lgv-only lr=0.002 # faster\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].overrides, vec![("ablation".into(), "lgv-only".into()), ("lr".into(), "0.002".into())]);
        let cfg = g[1].config(&ModelConfig::desk()).unwrap();
        assert_eq!(cfg.ablation, Ablation::LgvOnly);
        assert_eq!(cfg.lr, 0.002);
    }

    #[test]
    fn rejects_malformed_grids() {
        assert!(parse_grid("").is_err());
        assert!(parse_grid("full ablation=full").is_err());
        assert!(parse_grid("a: lr").is_err());
        assert!(parse_grid("a: lr=1\na: lr=2").is_err());
        let g = parse_grid("a: nonsense=1").unwrap();
        assert!(g[0].config(&ModelConfig::desk()).is_err());
    }
}
