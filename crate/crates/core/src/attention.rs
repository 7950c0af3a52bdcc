//! Bidirectional grid–word cross-attention: language-guides-vision (LGV)
//! and vision-guides-language (VGL) stacks built from one post-norm layer.

use pfos_tensor::{Graph, ParamId, ParamStore, Var};
use rand::Rng;

use crate::config::{Ablation, ModelConfig};
use crate::encoders::{GridFeatures, WordFeatures};
use crate::error::{PfosError, Result};
use crate::init;

pub const PE_TEMPERATURE: f64 = 10000.0;

/// Sinusoidal 2-D positions, `[w·h × d]` row-major. Channels `0..d/2` encode
/// the column index as interleaved (sin, cos) pairs, `d/2..d` the row index.
pub fn spatial_positional_encoding(w: usize, h: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(PfosError::Config(format!("positional encoding needs d divisible by 4, got {d}")));
    }
    let half = d / 2;
    let freqs: Vec<f64> = (0..half / 2).map(|k| PE_TEMPERATURE.powf(-((2 * k) as f64) / half as f64)).collect();
    let mut out = Vec::with_capacity(w * h * d);
    for y in 0..h {
        for x in 0..w {
            for coord in [x as f64, y as f64] {
                for f in &freqs {
                    out.push((coord * f).sin());
                    out.push((coord * f).cos());
                }
            }
        }
    }
    Ok(out)
}

/// Init gain of the projections that feed a residual sum (attention output
/// and second FFN layer); keeps early updates from swamping the skip path.
pub const RESIDUAL_INIT_GAIN: f64 = 0.3;

/// One attention + FFN block. Projections are stored `[in × out]`. The key
/// projection has no bias: it would add the same score to every key of a
/// query, which the softmax cancels.
#[derive(Clone, Debug)]
pub struct AttentionLayerParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub heads: usize,
}

impl AttentionLayerParams {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d, f) = (cfg.d, cfg.ffn_dim);
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(PfosError::Config(format!("d={d} not divisible by {} heads", cfg.heads)));
        }
        let mut mat = |name: &str, i: usize, o: usize, scale: f64| {
            let v = init::xavier(rng, i, o).into_iter().map(|x| x * scale).collect();
            store.add(format!("{prefix}.{name}"), &[i, o], v)
        };
        let wq = mat("wq", d, d, 1.0)?;
        let wk = mat("wk", d, d, 1.0)?;
        let wv = mat("wv", d, d, 1.0)?;
        let wo = mat("wo", d, d, RESIDUAL_INIT_GAIN)?;
        let ff1_w = mat("ff1.w", d, f, 1.0)?;
        let ff2_w = mat("ff2.w", f, d, RESIDUAL_INIT_GAIN)?;
        let mut vec = |name: &str, n: usize, v: f64| store.add(format!("{prefix}.{name}"), &[n], vec![v; n]);
        Ok(AttentionLayerParams {
            wq,
            bq: vec("bq", d, 0.0)?,
            wk,
            wv,
            bv: vec("bv", d, 0.0)?,
            wo,
            bo: vec("bo", d, 0.0)?,
            ln1_g: vec("ln1.g", d, 1.0)?,
            ln1_b: vec("ln1.b", d, 0.0)?,
            ff1_w,
            ff1_b: vec("ff1.b", f, 0.0)?,
            ff2_w,
            ff2_b: vec("ff2.b", d, 0.0)?,
            ln2_g: vec("ln2.g", d, 1.0)?,
            ln2_b: vec("ln2.b", d, 0.0)?,
            heads: cfg.heads,
        })
    }
}

fn linear<'p>(g: &mut Graph<'p>, store: &'p ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (g.param(store, w), g.param(store, b));
    Ok(g.linear(x, w, b)?)
}

/// Output of an attention application plus the node holding its weights
/// (`Graph::attention_weights` gives `[heads × queries × keys]`).
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Var,
}

/// Project, attend per head with `1/sqrt(d/m)` scaling, concatenate heads and
/// apply the output projection.
pub fn multi_head_attention<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &AttentionLayerParams,
    queries: Var,
    keys: Var,
    values: Var,
    key_mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let q = linear(g, store, queries, p.wq, p.bq)?;
    let wk = g.param(store, p.wk);
    let k = g.matmul(keys, wk)?;
    let v = linear(g, store, values, p.wv, p.bv)?;
    let weights = g.attention(q, k, v, key_mask, p.heads)?;
    let out = linear(g, store, weights, p.wo, p.bo)?;
    Ok(AttentionOutput { out, weights })
}

/// Inputs of one post-norm layer; `residual` is added to the attention output.
#[derive(Clone, Copy, Debug)]
pub struct LayerInputs<'m> {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub residual: Var,
    pub key_mask: Option<&'m [bool]>,
}

/// `x = LN(residual + MHA(q, k, v))`, `out = LN(x + FFN(x))`.
pub fn transformer_layer<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &AttentionLayerParams,
    inp: LayerInputs<'_>,
) -> Result<AttentionOutput> {
    let att = multi_head_attention(g, store, p, inp.query, inp.key, inp.value, inp.key_mask)?;
    let x = g.add(inp.residual, att.out)?;
    let (g1, b1) = (g.param(store, p.ln1_g), g.param(store, p.ln1_b));
    let x = g.layer_norm(x, g1, b1)?;
    let h = linear(g, store, x, p.ff1_w, p.ff1_b)?;
    let h = g.relu(h);
    let h = linear(g, store, h, p.ff2_w, p.ff2_b)?;
    let y = g.add(x, h)?;
    let (g2, b2) = (g.param(store, p.ln2_g), g.param(store, p.ln2_b));
    let out = g.layer_norm(y, g2, b2)?;
    Ok(AttentionOutput { out, weights: att.weights })
}

/// Words query the grid: keys `G + PE`, values `G`.
pub fn lgv_layer<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &AttentionLayerParams,
    e_in: Var,
    g_in: Var,
    pe: Var,
) -> Result<AttentionOutput> {
    let key = g.add(g_in, pe)?;
    transformer_layer(g, store, p, LayerInputs { query: e_in, key, value: g_in, residual: e_in, key_mask: None })
}

/// Grid cells query the words: queries `G + PE` (also the residual branch),
/// keys and values `E` with `[PAD]` keys masked.
pub fn vgl_layer<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &AttentionLayerParams,
    g_in: Var,
    e_in: Var,
    valid: &[bool],
    pe: Var,
) -> Result<AttentionOutput> {
    let query = g.add(g_in, pe)?;
    transformer_layer(g, store, p, LayerInputs { query, key: e_in, value: e_in, residual: query, key_mask: Some(valid) })
}

#[derive(Clone, Debug, Default)]
pub struct CrossParams {
    pub lgv: Vec<AttentionLayerParams>,
    pub vgl: Vec<AttentionLayerParams>,
}

impl CrossParams {
    /// Registers only the stacks the ablation uses.
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.cross_layers == 0 {
            return Err(PfosError::Config("cross-attention needs at least one layer".into()));
        }
        let n = cfg.cross_layers;
        let mut out = CrossParams::default();
        if matches!(cfg.ablation, Ablation::Full | Ablation::LgvOnly) {
            for i in 0..n {
                out.lgv.push(AttentionLayerParams::register(store, &format!("lgv.{i}"), cfg, rng)?);
            }
        }
        if matches!(cfg.ablation, Ablation::Full | Ablation::VglOnly) {
            for i in 0..n {
                out.vgl.push(AttentionLayerParams::register(store, &format!("vgl.{i}"), cfg, rng)?);
            }
        }
        Ok(out)
    }
}

/// `H_LGV` (`[T × d]`), `H_VGL` (`[w·h × d]`) and per-layer attention nodes.
#[derive(Clone, Debug)]
pub struct CrossOutputs {
    pub h_lgv: Var,
    pub h_vgl: Var,
    pub lgv_weights: Vec<Var>,
    pub vgl_weights: Vec<Var>,
}

/// Runs the LGV and VGL stacks. In parallel mode both read the original
/// `E` and `G`; in interleaved mode layer `n` of each stack reads the other
/// stack's layer `n−1` output. A stack with no parameters passes its raw
/// input through.
pub fn cross_attention_module<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &CrossParams,
    words: &WordFeatures,
    grid: &GridFeatures,
    pe: Var,
    cfg: &ModelConfig,
) -> Result<CrossOutputs> {
    if cfg.cross_layers == 0 {
        return Err(PfosError::Config("cross-attention needs at least one layer".into()));
    }
    let (mut e, mut v) = (words.e, grid.g);
    let (mut lgv_weights, mut vgl_weights) = (Vec::new(), Vec::new());
    let layers = p.lgv.len().max(p.vgl.len());
    for n in 0..layers {
        let (g_src, e_src) = if cfg.interleaved_cross { (v, e) } else { (grid.g, words.e) };
        if let Some(lp) = p.lgv.get(n) {
            let o = lgv_layer(g, store, lp, e, g_src, pe)?;
            lgv_weights.push(o.weights);
            e = o.out;
        }
        if let Some(vp) = p.vgl.get(n) {
            let o = vgl_layer(g, store, vp, v, e_src, &words.valid, pe)?;
            vgl_weights.push(o.weights);
            v = o.out;
        }
    }
    Ok(CrossOutputs { h_lgv: e, h_vgl: v, lgv_weights, vgl_weights })
}
