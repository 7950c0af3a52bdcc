//! Trainable stand-ins for the text and image backbones, and the projection
//! that brings grid features to the common width `d`.

use std::collections::HashMap;
use std::path::Path;

use pfos_tensor::{BatchNormMode, BatchStats, ConvGeometry, Graph, ParamId, ParamStore, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{io_err, PfosError, Result};
use crate::image::Image;
use crate::init;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Token list; the line number in the vocabulary file is the id.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Special tokens followed by `words` in the given order.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let tokens: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(words.iter().map(|w| w.as_ref().to_string())).collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != SPECIAL_TOKENS {
            return Err(PfosError::Vocabulary("ids 0..3 must be [PAD], [CLS], [SEP], [UNK]".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(PfosError::Vocabulary(format!("invalid token `{t}` at line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(PfosError::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }
}

/// Fixed-length token ids: `[CLS] words… [SEP] [PAD]…`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// `false` exactly at `[PAD]` positions.
    pub valid: Vec<bool>,
    pub text: String,
}

impl TokenSequence {
    /// Rebuild from stored ids; checks the layout invariants.
    pub fn from_ids(ids: Vec<usize>, text: String) -> Result<Self> {
        let seq = TokenSequence { valid: ids.iter().map(|&i| i != PAD).collect(), ids, text };
        seq.check()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-[PAD] positions.
    pub fn valid_len(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(PfosError::Validation(format!("token sequence: {m}")));
        if self.ids.first() != Some(&CLS) {
            return bad("must start with [CLS]".into());
        }
        let seps: Vec<usize> = self.ids.iter().enumerate().filter(|(_, &t)| t == SEP).map(|(i, _)| i).collect();
        if seps.len() != 1 {
            return bad(format!("expected one [SEP], found {}", seps.len()));
        }
        let sep = seps[0];
        if self.ids[..sep].contains(&PAD) || self.ids[sep + 1..].iter().any(|&t| t != PAD) {
            return bad("[PAD] must fill exactly the positions after [SEP]".into());
        }
        if self.valid.len() != self.ids.len() || self.ids.iter().zip(&self.valid).any(|(&t, &v)| v != (t != PAD)) {
            return bad("valid mask disagrees with [PAD] positions".into());
        }
        Ok(())
    }
}

/// Whitespace tokenization into exactly `max_len` ids. Words that do not
/// fit are dropped with a warning.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let words: Vec<&str> = text.split_whitespace().collect();
    let room = max_len.saturating_sub(2);
    if words.len() > room {
        log::warn!("query `{text}` has {} words, truncating to {room}", words.len());
    }
    let mut ids = vec![CLS];
    ids.extend(words.iter().take(room).map(|w| vocab.id(&w.to_lowercase()).unwrap_or(UNK)));
    ids.push(SEP);
    ids.resize(max_len, PAD);
    TokenSequence { valid: ids.iter().map(|&i| i != PAD).collect(), ids, text: text.to_string() }
}

/// Word-level features `E` (`[T × d]`) and the non-[PAD] mask.
#[derive(Clone, Debug)]
pub struct WordFeatures {
    pub e: Var,
    pub valid: Vec<bool>,
}

/// Grid-level features (`[w·h × channels]`), row `i` is cell `(i mod w, i div w)`.
#[derive(Clone, Copy, Debug)]
pub struct GridFeatures {
    pub g: Var,
    pub grid_w: usize,
    pub grid_h: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TextEncoderParams {
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
}

impl TextEncoderParams {
    pub fn register(store: &mut ParamStore, vocab_size: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.d;
        let word_emb = store.add("text.word_emb", &[vocab_size, d], init::normal(rng, vocab_size * d, 1.0))?;
        let pos_emb = store.add("text.pos_emb", &[cfg.max_tokens, d], init::normal(rng, cfg.max_tokens * d, 0.5))?;
        Ok(TextEncoderParams { word_emb, pos_emb })
    }
}

/// `E[t] = word_emb[ids[t]] + pos_emb[t]`.
pub fn encode_text<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &TextEncoderParams,
    tokens: &TokenSequence,
) -> Result<WordFeatures> {
    let emb = store.get(p.word_emb);
    let (vocab, d) = (emb.shape[0], emb.shape[1]);
    let t = tokens.len();
    if store.get(p.pos_emb).shape[0] != t {
        return Err(PfosError::Validation(format!("sequence of {t} tokens for a {}-position encoder", store.get(p.pos_emb).shape[0])));
    }
    if let Some(&bad) = tokens.ids.iter().find(|&&id| id >= vocab) {
        return Err(PfosError::Vocabulary(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let idx: Vec<usize> = tokens.ids.iter().flat_map(|&id| (0..d).map(move |j| id * d + j)).collect();
    let table = g.param(store, p.word_emb);
    let words = g.gather(table, &idx)?;
    let words = g.reshape(words, &[t, d])?;
    let pos = g.param(store, p.pos_emb);
    let e = g.add(words, pos)?;
    Ok(WordFeatures { e, valid: tokens.valid.clone() })
}

#[derive(Clone, Debug)]
pub struct ImageEncoderParams {
    /// Per stride-2 layer: weight, bias, geometry.
    pub layers: Vec<(ParamId, ParamId, ConvGeometry)>,
}

impl ImageEncoderParams {
    /// Channel plan `3 → 16 → 32 → … → grid_channels`, one stride-2 3×3 conv per halving.
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let depth = cfg.encoder_depth();
        let (mut h, mut w, mut c) = (cfg.image_h, cfg.image_w, 3);
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let out_c = if i + 1 == depth { cfg.grid_channels } else { (16usize << i).min(cfg.grid_channels) };
            let geom = ConvGeometry { in_h: h, in_w: w, in_c: c, kernel: 3, stride: 2, pad: 1 };
            let fan_in = geom.patch_len();
            let wid = store.add(format!("image.conv{i}.w"), &[fan_in, out_c], init::kaiming(rng, fan_in, fan_in * out_c))?;
            let bid = store.add(format!("image.conv{i}.b"), &[out_c], vec![0.0; out_c])?;
            layers.push((wid, bid, geom));
            (h, w, c) = (geom.out_h(), geom.out_w(), out_c);
        }
        Ok(ImageEncoderParams { layers })
    }
}

/// Convolution stack with ReLU; input pixels are centered on mid-gray.
pub fn encode_image<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &ImageEncoderParams,
    image: &Image,
    cfg: &ModelConfig,
) -> Result<GridFeatures> {
    if image.width != cfg.image_w || image.height != cfg.image_h {
        return Err(PfosError::Validation(format!(
            "image is {}x{}, model expects {}x{}",
            image.width, image.height, cfg.image_w, cfg.image_h
        )));
    }
    let centered: Vec<f64> = image.data.iter().map(|v| v - 0.5).collect();
    let mut x = g.constant(&[image.width * image.height, 3], centered)?;
    for &(w, b, geom) in &p.layers {
        let wv = g.param(store, w);
        let bv = g.param(store, b);
        let y = g.conv2d(x, wv, bv, geom)?;
        x = g.relu(y);
    }
    Ok(GridFeatures { g: x, grid_w: cfg.grid_w, grid_h: cfg.grid_h })
}

/// No bias before the normalization: the batch mean would cancel it.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionParams {
    pub w: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ProjectionParams {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (dg, d) = (cfg.grid_channels, cfg.d);
        Ok(ProjectionParams {
            w: store.add("proj.w", &[dg, d], init::xavier(rng, dg, d))?,
            gamma: store.add("proj.bn.gamma", &[d], vec![1.0; d])?,
            beta: store.add("proj.bn.beta", &[d], vec![0.0; d])?,
        })
    }
}

/// The 1×1 convolution part of the projection (before normalization).
pub fn project_linear<'p>(g: &mut Graph<'p>, store: &'p ParamStore, p: &ProjectionParams, x: Var) -> Result<Var> {
    let w = g.param(store, p.w);
    Ok(g.matmul(x, w)?)
}

/// Batch norm then ReLU over the rows of `x` (all cells of all samples in a batch).
pub fn project_normalize<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &ProjectionParams,
    x: Var,
    mode: BatchNormMode<'_>,
) -> Result<(Var, Option<BatchStats>)> {
    let gamma = g.param(store, p.gamma);
    let beta = g.param(store, p.beta);
    let (y, stats) = g.batch_norm(x, gamma, beta, mode)?;
    Ok((g.relu(y), stats))
}

/// 1×1 conv → batch norm → ReLU for a single sample.
pub fn project<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &ProjectionParams,
    grid: GridFeatures,
    mode: BatchNormMode<'_>,
) -> Result<(GridFeatures, Option<BatchStats>)> {
    let z = project_linear(g, store, p, grid.g)?;
    let (y, stats) = project_normalize(g, store, p, z, mode)?;
    Ok((GridFeatures { g: y, ..grid }, stats))
}
