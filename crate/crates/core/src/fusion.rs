//! Self-attention over the concatenated word and grid sequences.

use pfos_tensor::{Graph, ParamStore, Var};
use rand::Rng;

use crate::attention::{transformer_layer, AttentionLayerParams, CrossOutputs, LayerInputs};
use crate::config::ModelConfig;
use crate::error::{PfosError, Result};

#[derive(Clone, Debug, Default)]
pub struct FusionParams {
    pub layers: Vec<AttentionLayerParams>,
}

impl FusionParams {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.fusion_layers == 0 {
            return Err(PfosError::Config("fusion needs at least one layer".into()));
        }
        let layers = (0..cfg.fusion_layers)
            .map(|i| AttentionLayerParams::register(store, &format!("fusion.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(FusionParams { layers })
    }
}

/// Rows `0..words` are word rows, `words..words + cells` grid rows in cell order.
#[derive(Clone, Debug)]
pub struct FusedSequence {
    pub h: Var,
    pub words: usize,
    pub cells: usize,
    /// Key mask over all rows; word rows at `[PAD]` are `false`.
    pub key_mask: Vec<bool>,
    /// Attention node of each layer, `[heads × rows × rows]`.
    pub weights: Vec<Var>,
}

/// Key mask for the concatenated sequence.
pub fn fused_mask(valid: &[bool], cells: usize) -> Vec<bool> {
    valid.iter().copied().chain(std::iter::repeat_n(true, cells)).collect()
}

/// Concatenates `H_LGV` over `H_VGL` and runs the fusion layers. With
/// `positional = Some(pe)` the grid positions are added to queries and keys
/// of every layer.
pub fn fuse<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    p: &FusionParams,
    cross: &CrossOutputs,
    valid: &[bool],
    positional: Option<Var>,
) -> Result<FusedSequence> {
    if p.layers.is_empty() {
        return Err(PfosError::Config("fusion needs at least one layer".into()));
    }
    let words = g.shape(cross.h_lgv)[0];
    let cells = g.shape(cross.h_vgl)[0];
    if valid.len() != words {
        return Err(PfosError::Validation(format!("{} mask entries for {words} word rows", valid.len())));
    }
    let key_mask = fused_mask(valid, cells);
    let pos = match positional {
        Some(pe) => {
            let d = g.shape(pe)[1];
            let zeros = g.constant(&[words, d], vec![0.0; words * d])?;
            Some(g.concat_rows(&[zeros, pe])?)
        }
        None => None,
    };
    let mut h = g.concat_rows(&[cross.h_lgv, cross.h_vgl])?;
    let mut weights = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let qk = match pos {
            Some(pos) => g.add(h, pos)?,
            None => h,
        };
        let o = transformer_layer(
            g,
            store,
            lp,
            LayerInputs { query: qk, key: qk, value: h, residual: h, key_mask: Some(&key_mask) },
        )?;
        weights.push(o.weights);
        h = o.out;
    }
    Ok(FusedSequence { h, words, cells, key_mask, weights })
}

/// The grid rows of the final fused layer.
pub fn slice_visual(g: &mut Graph<'_>, f: &FusedSequence) -> Result<Var> {
    Ok(g.slice_rows(f.h, f.words, f.cells)?)
}
