//! The assembled grounding model: encoders, cross-attention, fusion (or the
//! concatenation path for ablations) and the localization head.

use std::path::Path;

use pfos_tensor::{BatchNormMode, BatchStats, Checkpoint, Graph, NamedArray, ParamId, ParamStore, RunningStats, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{cross_attention_module, spatial_positional_encoding, CrossOutputs, CrossParams};
use crate::config::{Ablation, ModelConfig};
use crate::encoders::{
    encode_image, encode_text, project_linear, project_normalize, GridFeatures, ImageEncoderParams,
    ProjectionParams, TextEncoderParams, TokenSequence, WordFeatures,
};
use crate::error::{PfosError, Result};
use crate::fusion::{fuse, slice_visual, FusedSequence, FusionParams};
use crate::image::Image;
use crate::init;
use crate::localization::{head_forward, HeadOutput, HeadParams};

pub const MODEL_FORMAT: &str = "pfos-model v1";
const BN_MEAN: &str = "proj.bn.running_mean";
const BN_VAR: &str = "proj.bn.running_var";

/// Two-layer MLP on `[grid ‖ tiled sentence feature]` used by the ablation variants.
#[derive(Clone, Copy, Debug)]
pub struct ConcatParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ConcatParams {
    fn register(store: &mut ParamStore, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConcatParams {
            w1: store.add("concat.w1", &[2 * d, d], init::kaiming(rng, 2 * d, 2 * d * d))?,
            b1: store.add("concat.b1", &[d], vec![0.0; d])?,
            w2: store.add("concat.w2", &[d, d], init::kaiming(rng, d, d * d))?,
            b2: store.add("concat.b2", &[d], vec![0.0; d])?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SampleRef<'a> {
    pub image: &'a Image,
    pub tokens: &'a TokenSequence,
}

/// Graph handles for one sample of a batch.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    pub words: WordFeatures,
    pub grid: GridFeatures,
    pub cross: CrossOutputs,
    pub fused: Option<FusedSequence>,
    pub visual: Var,
    /// `[cells × 5]` sigmoid activations.
    pub head: Var,
}

#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub samples: Vec<SampleTrace>,
    /// Batch statistics of the projection norm (training mode only).
    pub bn_stats: Option<BatchStats>,
}

#[derive(Clone, Debug)]
pub struct Pfos {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub bn: RunningStats,
    pub text: TextEncoderParams,
    pub image: ImageEncoderParams,
    pub proj: ProjectionParams,
    pub cross: CrossParams,
    pub fusion: Option<FusionParams>,
    pub concat: Option<ConcatParams>,
    pub head: HeadParams,
    pe: Vec<f64>,
}

impl Pfos {
    /// Fresh parameters drawn from `cfg.seed`.
    pub fn new(cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let text = TextEncoderParams::register(&mut store, vocab_size, cfg, &mut rng)?;
        let image = ImageEncoderParams::register(&mut store, cfg, &mut rng)?;
        let proj = ProjectionParams::register(&mut store, cfg, &mut rng)?;
        let cross = CrossParams::register(&mut store, cfg, &mut rng)?;
        let (fusion, concat) = match cfg.ablation {
            Ablation::Full => (Some(FusionParams::register(&mut store, cfg, &mut rng)?), None),
            _ => (None, Some(ConcatParams::register(&mut store, cfg.d, &mut rng)?)),
        };
        let head = HeadParams::register(&mut store, cfg.d, cfg.cells(), &mut rng)?;
        Ok(Pfos {
            cfg: cfg.clone(),
            vocab_size,
            store,
            bn: RunningStats::new(cfg.d, cfg.bn_momentum),
            text,
            image,
            proj,
            cross,
            fusion,
            concat,
            head,
            pe: spatial_positional_encoding(cfg.grid_w, cfg.grid_h, cfg.d)?,
        })
    }

    pub fn positional_encoding(&self) -> &[f64] {
        &self.pe
    }

    /// Forward pass over a batch. `training` selects batch statistics for the
    /// projection norm (which couples the samples); otherwise running statistics
    /// are used and each sample is independent of the others.
    pub fn forward_batch<'p>(&'p self, g: &mut Graph<'p>, batch: &[SampleRef<'_>], training: bool) -> Result<BatchTrace> {
        let cfg = &self.cfg;
        let cells = cfg.cells();
        if batch.is_empty() {
            return Err(PfosError::Validation("empty batch".into()));
        }
        let mut pre = Vec::with_capacity(batch.len());
        let mut words = Vec::with_capacity(batch.len());
        for s in batch {
            s.tokens.check()?;
            words.push(encode_text(g, &self.store, &self.text, s.tokens)?);
            let grid = encode_image(g, &self.store, &self.image, s.image, cfg)?;
            pre.push(project_linear(g, &self.store, &self.proj, grid.g)?);
        }
        let stacked = if pre.len() == 1 { pre[0] } else { g.concat_rows(&pre)? };
        let mode = if training {
            BatchNormMode::Train
        } else {
            BatchNormMode::Infer { mean: &self.bn.mean, var: &self.bn.var }
        };
        let (normed, bn_stats) = project_normalize(g, &self.store, &self.proj, stacked, mode)?;
        let pe = g.constant(&[cells, cfg.d], self.pe.clone())?;
        let mut samples = Vec::with_capacity(batch.len());
        for (i, w) in words.into_iter().enumerate() {
            let gv = if batch.len() == 1 { normed } else { g.slice_rows(normed, i * cells, cells)? };
            let grid = GridFeatures { g: gv, grid_w: cfg.grid_w, grid_h: cfg.grid_h };
            samples.push(self.forward_tail(g, w, grid, pe)?);
        }
        Ok(BatchTrace { samples, bn_stats })
    }

    fn forward_tail<'p>(&'p self, g: &mut Graph<'p>, words: WordFeatures, grid: GridFeatures, pe: Var) -> Result<SampleTrace> {
        let cross = cross_attention_module(g, &self.store, &self.cross, &words, &grid, pe, &self.cfg)?;
        let (fused, visual) = match (&self.fusion, &self.concat) {
            (Some(fp), _) => {
                let pos = if self.cfg.fusion_positional { Some(pe) } else { None };
                let f = fuse(g, &self.store, fp, &cross, &words.valid, pos)?;
                let v = slice_visual(g, &f)?;
                (Some(f), v)
            }
            (None, Some(cp)) => (None, self.concat_path(g, cp, &cross, &words, &grid, pe)?),
            (None, None) => return Err(PfosError::Config("model has neither fusion nor concat parameters".into())),
        };
        let head = head_forward(g, &self.store, &self.head, visual)?;
        Ok(SampleTrace { words, grid, cross, fused, visual, head })
    }

    /// Sentence feature (masked mean of the word rows) tiled over the grid and
    /// concatenated with the grid rows, then two ReLU layers. Raw grid rows get
    /// the positional encoding added; VGL output already carries it.
    fn concat_path<'p>(
        &'p self,
        g: &mut Graph<'p>,
        cp: &ConcatParams,
        cross: &CrossOutputs,
        words: &WordFeatures,
        grid: &GridFeatures,
        pe: Var,
    ) -> Result<Var> {
        let cells = self.cfg.cells();
        let sentence = g.mean_rows(cross.h_lgv, Some(&words.valid))?;
        let tiled = g.tile_rows(sentence, cells)?;
        let grid_rows = if cross.vgl_weights.is_empty() { g.add(grid.g, pe)? } else { cross.h_vgl };
        let x = g.concat_cols(grid_rows, tiled)?;
        let (w1, b1) = (g.param(&self.store, cp.w1), g.param(&self.store, cp.b1));
        let h = g.linear(x, w1, b1)?;
        let h = g.relu(h);
        let (w2, b2) = (g.param(&self.store, cp.w2), g.param(&self.store, cp.b2));
        let h = g.linear(h, w2, b2)?;
        Ok(g.relu(h))
    }

    /// Inference on one sample without recording a gradient graph.
    pub fn predict(&self, image: &Image, tokens: &TokenSequence) -> Result<HeadOutput> {
        let mut g = Graph::inference();
        let trace = self.forward_batch(&mut g, &[SampleRef { image, tokens }], false)?;
        Ok(HeadOutput::from_rows(g.value(trace.samples[0].head), self.cfg.grid_w, self.cfg.grid_h))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays: Vec<NamedArray> = self
            .store
            .iter()
            .map(|(_, p)| NamedArray { name: p.name.clone(), shape: p.shape.clone(), values: p.value.clone() })
            .collect();
        let d = self.cfg.d;
        arrays.push(NamedArray { name: BN_MEAN.into(), shape: vec![d], values: self.bn.mean.clone() });
        arrays.push(NamedArray { name: BN_VAR.into(), shape: vec![d], values: self.bn.var.clone() });
        Checkpoint {
            meta: vec![
                ("format".into(), MODEL_FORMAT.into()),
                ("config".into(), self.cfg.to_line()),
                ("vocab_size".into(), self.vocab_size.to_string()),
            ],
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.meta("format") {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(PfosError::Version(format!("expected model format `{MODEL_FORMAT}`, found {other:?}")))
            }
        }
        let cfg = ModelConfig::from_line(ck.meta("config").ok_or_else(|| PfosError::Version("missing config".into()))?)?;
        let vocab_size: usize = ck
            .meta("vocab_size")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PfosError::Version("missing vocab_size".into()))?;
        let mut model = Pfos::new(&cfg, vocab_size)?;
        let expected = model.store.len() + 2;
        if ck.arrays.len() != expected {
            return Err(PfosError::Version(format!("{} arrays stored, model has {expected}", ck.arrays.len())));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let a = ck.array(name).ok_or_else(|| PfosError::Version(format!("missing array `{name}`")))?;
            if a.shape != shape {
                return Err(PfosError::Version(format!("array `{name}` has shape {:?}, model wants {shape:?}", a.shape)));
            }
            Ok(a.values.clone())
        };
        let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = model.store.get(id);
            let v = fetch(&p.name.clone(), &p.shape.clone())?;
            model.store.get_mut(id).value = v;
        }
        model.bn.mean = fetch(BN_MEAN, &[cfg.d])?;
        model.bn.var = fetch(BN_VAR, &[cfg.d])?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Loads and checks that the architecture matches `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(path)?;
        if !model.cfg.same_architecture(expected) {
            return Err(PfosError::Version(format!(
                "checkpoint config `{}` does not match `{}`",
                model.cfg.to_line(),
                expected.to_line()
            )));
        }
        Ok(model)
    }
}
