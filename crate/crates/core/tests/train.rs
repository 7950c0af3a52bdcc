mod common;

use std::fs;

use pfos_core::ablation::{parse_grid, run_grid, table_csv, table_text};
use pfos_core::data::{grammar_vocabulary, Split};
use pfos_core::heatmap::export_heatmaps;
use pfos_core::train::{train, Trainer, BEST_CHECKPOINT, DIVERGENCE_DUMP, METRICS_FILE, METRICS_HEADER};
use pfos_core::{Ablation, ModelConfig, Pfos, PfosError};

fn tiny() -> ModelConfig {
    ModelConfig {
        d: 16,
        heads: 2,
        cross_layers: 1,
        fusion_layers: 2,
        grid_channels: 16,
        ffn_dim: 32,
        batch_size: 4,
        epochs: 3,
        ..ModelConfig::desk()
    }
}

#[test]
fn learning_rate_halves_every_ten_epochs() {
    let cfg = ModelConfig::desk();
    for k in 0..5 {
        assert_eq!(cfg.learning_rate_at(10 * k), cfg.lr * 0.5f64.powi(k as i32));
        assert_eq!(cfg.learning_rate_at(10 * k + 9), cfg.lr * 0.5f64.powi(k as i32));
    }
}

#[test]
fn identical_runs_write_identical_metrics() {
    let tr = common::samples(Split::Train, 12, 31);
    let va = common::samples(Split::Val, 6, 31);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny();
    let ra = train(&cfg, common::vocab_size(), &tr, &va, Some(a.path())).unwrap();
    let rb = train(&cfg, common::vocab_size(), &tr, &va, Some(b.path())).unwrap();
    let (ma, mb) = (fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());
    assert_eq!(ma, mb);
    let text = String::from_utf8(ma).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().count(), 1 + cfg.epochs);
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(ra.best.store, rb.best.store);
    let best = Pfos::load(&a.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.store, ra.best.store);
    // The logged rate follows the schedule.
    for m in &ra.metrics {
        assert_eq!(m.lr, cfg.learning_rate_at(m.epoch));
    }
    let other = train(&ModelConfig { seed: 1, ..cfg }, common::vocab_size(), &tr, &va, None).unwrap();
    assert_ne!(other.metrics, ra.metrics);
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let mut tr = common::samples(Split::Train, 4, 32);
    let va = common::samples(Split::Val, 2, 32);
    tr[2].image.data[7] = f64::NAN;
    let dir = tempfile::tempdir().unwrap();
    let err = train(&tiny(), common::vocab_size(), &tr, &va, Some(dir.path())).unwrap_err();
    assert!(matches!(err, PfosError::NonFinite(_)), "{err}");
    let dump = fs::read_to_string(dir.path().join(DIVERGENCE_DUMP)).unwrap();
    assert!(dump.contains(&tr[2].tokens.text), "{dump}");
}

#[test]
fn trainer_step_reduces_loss_on_a_fixed_batch() {
    let batch = common::samples(Split::Train, 2, 33);
    let refs: Vec<_> = batch.iter().collect();
    let mut t = Trainer::new(Pfos::new(&tiny(), common::vocab_size()).unwrap());
    let first = t.step(&refs, 1e-3).unwrap();
    let mut last = first;
    for _ in 0..30 {
        last = t.step(&refs, 1e-3).unwrap();
    }
    assert!(last.total < first.total, "{} -> {}", first.total, last.total);
    assert_eq!(t.steps, 31);
}

#[test]
fn heatmaps_cover_every_fusion_layer() {
    let cfg = ModelConfig::desk();
    let model = Pfos::new(&cfg, common::vocab_size()).unwrap();
    let vocab = grammar_vocabulary();
    for s in common::samples(Split::Test, 5, 34) {
        let h = export_heatmaps(&model, &s, &vocab).unwrap();
        assert_eq!(h.fusion.len(), cfg.fusion_layers);
        for m in &h.fusion {
            assert!((m.words.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((m.grid.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(m.grid.len(), 64);
            for (w, &valid) in m.words.iter().zip(&s.tokens.valid) {
                if !valid {
                    assert_eq!(*w, 0.0);
                }
            }
        }
        assert_eq!(h.lgv.len(), cfg.cross_layers);
        assert_eq!(h.lgv[0].len(), cfg.heads);
        assert_eq!((h.lgv[0][0].queries, h.lgv[0][0].keys), (12, 64));
        assert_eq!((h.vgl[0][0].queries, h.vgl[0][0].keys), (64, 12));
        let dir = tempfile::tempdir().unwrap();
        let files = h.write(dir.path()).unwrap();
        let words = files.iter().filter(|p| p.to_string_lossy().ends_with("_words.csv")).count();
        let grids = files.iter().filter(|p| p.to_string_lossy().ends_with("_grid.csv")).count();
        assert_eq!((words, grids), (cfg.fusion_layers, cfg.fusion_layers));
        let pred = fs::read_to_string(dir.path().join("prediction.txt")).unwrap();
        assert!(pred.contains("box "));
        let grid = fs::read_to_string(dir.path().join("fusion0_grid.csv")).unwrap();
        assert_eq!(grid.lines().count(), 8);
        assert!(grid.lines().all(|l| l.split(',').count() == 8));
    }
}

#[test]
fn ablation_rows_share_one_schema() {
    let tr = common::samples(Split::Train, 8, 35);
    let va = common::samples(Split::Val, 4, 35);
    let te = common::samples(Split::Test, 4, 35);
    let grid = parse_grid("base: ablation=concat-baseline\nfull: ablation=full\n").unwrap();
    let rows = run_grid(&ModelConfig { epochs: 1, ..tiny() }, &grid, common::vocab_size(), &tr, &va, &te, None).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].config.ablation, Ablation::ConcatBaseline);
    assert_eq!(rows[1].config.ablation, Ablation::Full);
    let csv = table_csv(&rows);
    let cols: Vec<usize> = csv.lines().map(|l| l.split(',').count()).collect();
    assert_eq!(cols.len(), 3);
    assert!(cols.iter().all(|&c| c == cols[0]));
    assert_eq!(table_text(&rows).lines().count(), 3);
}
