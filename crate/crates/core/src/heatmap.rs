//! Attention maps of one prediction: per fusion layer, the attention of the
//! predicted center cell over the words and over the grid; per cross layer
//! and head, the full LGV / VGL weight matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pfos_tensor::Graph;

use crate::encoders::Vocabulary;
use crate::error::{io_err, PfosError, Result};
use crate::localization::{decode, Decoded, HeadOutput};
use crate::model::{Pfos, SampleRef};
use crate::data::Sample;

/// Attention of the predicted center cell in one fusion layer, averaged over
/// heads. Both parts are renormalized to sum to 1 (the word part over word
/// keys, the grid part over grid keys).
#[derive(Clone, Debug, PartialEq)]
pub struct FusionLayerMap {
    pub words: Vec<f64>,
    /// Row-major `grid_h × grid_w`.
    pub grid: Vec<f64>,
}

/// Row-major `[queries × keys]` weights of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMatrix {
    pub queries: usize,
    pub keys: usize,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapExport {
    pub tokens: Vec<String>,
    pub grid_w: usize,
    pub grid_h: usize,
    pub prediction: Decoded,
    pub fusion: Vec<FusionLayerMap>,
    /// `[layer][head]`, words attending to grid cells.
    pub lgv: Vec<Vec<HeadMatrix>>,
    /// `[layer][head]`, grid cells attending to words.
    pub vgl: Vec<Vec<HeadMatrix>>,
}

fn split_heads(w: &[f64], heads: usize) -> Vec<&[f64]> {
    w.chunks_exact(w.len() / heads).collect()
}

fn head_matrices(w: &[f64], heads: usize, queries: usize, keys: usize) -> Vec<HeadMatrix> {
    split_heads(w, heads).into_iter().map(|h| HeadMatrix { queries, keys, weights: h.to_vec() }).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.into_iter().map(|x| x / s).collect()
    } else {
        v
    }
}

pub fn export_heatmaps(model: &Pfos, sample: &Sample, vocab: &Vocabulary) -> Result<HeatmapExport> {
    let cfg = &model.cfg;
    let mut g = Graph::inference();
    let trace = model.forward_batch(&mut g, &[SampleRef { image: &sample.image, tokens: &sample.tokens }], false)?;
    let s = &trace.samples[0];
    let out = HeadOutput::from_rows(g.value(s.head), cfg.grid_w, cfg.grid_h);
    let prediction = decode(&out, cfg);
    let (t, cells, heads) = (cfg.max_tokens, cfg.cells(), cfg.heads);
    let weights = |v| g.attention_weights(v).ok_or_else(|| PfosError::Validation("missing attention weights".into()));

    let mut fusion = Vec::new();
    if let Some(f) = &s.fused {
        let rows = t + cells;
        let q = t + prediction.cell;
        for &v in &f.weights {
            let w = weights(v)?;
            let mut avg = vec![0.0; rows];
            for h in split_heads(w, heads) {
                for (a, x) in avg.iter_mut().zip(&h[q * rows..(q + 1) * rows]) {
                    *a += x / heads as f64;
                }
            }
            let grid = avg.split_off(t);
            fusion.push(FusionLayerMap { words: normalized(avg), grid: normalized(grid) });
        }
    }
    let lgv = s.cross.lgv_weights.iter().map(|&v| Ok(head_matrices(weights(v)?, heads, t, cells))).collect::<Result<_>>()?;
    let vgl = s.cross.vgl_weights.iter().map(|&v| Ok(head_matrices(weights(v)?, heads, cells, t))).collect::<Result<_>>()?;
    let tokens = sample.tokens.ids.iter().map(|&id| vocab.token(id).unwrap_or("[UNK]").to_string()).collect();
    Ok(HeatmapExport { tokens, grid_w: cfg.grid_w, grid_h: cfg.grid_h, prediction, fusion, lgv, vgl })
}

fn matrix_csv(values: &[f64], cols: usize) -> String {
    let mut out = String::new();
    for row in values.chunks_exact(cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

impl HeatmapExport {
    /// Writes `fusion{l}_words.csv`, `fusion{l}_grid.csv`, `lgv{l}_head{h}.csv`,
    /// `vgl{l}_head{h}.csv` and `prediction.txt`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
            files.push(p);
            Ok(())
        };
        for (l, m) in self.fusion.iter().enumerate() {
            let mut words = String::from("position,token,weight\n");
            for (i, (tok, w)) in self.tokens.iter().zip(&m.words).enumerate() {
                let _ = writeln!(words, "{i},{tok},{w:.6}");
            }
            put(format!("fusion{l}_words.csv"), words)?;
            put(format!("fusion{l}_grid.csv"), matrix_csv(&m.grid, self.grid_w))?;
        }
        for (name, stack) in [("lgv", &self.lgv), ("vgl", &self.vgl)] {
            for (l, heads) in stack.iter().enumerate() {
                for (h, m) in heads.iter().enumerate() {
                    put(format!("{name}{l}_head{h}.csv"), matrix_csv(&m.weights, m.keys))?;
                }
            }
        }
        let b = &self.prediction.bbox;
        put(
            "prediction.txt".into(),
            format!(
                "cell {} {}\nscore {:.6}\nbox {:.6} {:.6} {:.6} {:.6}\n",
                self.prediction.cell % self.grid_w,
                self.prediction.cell / self.grid_w,
                self.prediction.score,
                b.cx,
                b.cy,
                b.w,
                b.h
            ),
        )?;
        Ok(files)
    }
}
