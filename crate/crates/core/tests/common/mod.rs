#![allow(dead_code)]

use pfos_core::data::{generate_split, grammar_vocabulary, GenerationSpec, Sample, Split};
use pfos_core::localization::{build_target, loss_graph};
use pfos_core::{ModelConfig, Pfos, Result, SampleRef};
use pfos_tensor::gradcheck::{central_difference, relative_error};
use pfos_tensor::{Graph, Grads, Var};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn samples(split: Split, n: usize, base_seed: u64) -> Vec<Sample> {
    generate_split(split, n, &GenerationSpec::desk(base_seed), &grammar_vocabulary()).expect("generation succeeds")
}

pub fn vocab_size() -> usize {
    grammar_vocabulary().len()
}

/// Mean total loss of a batch with training-mode normalization.
pub fn batch_loss<'p>(model: &'p Pfos, g: &mut Graph<'p>, batch: &[Sample]) -> Result<Var> {
    let refs: Vec<SampleRef<'_>> = batch.iter().map(|s| SampleRef { image: &s.image, tokens: &s.tokens }).collect();
    let trace = model.forward_batch(g, &refs, true)?;
    let mut sum = None;
    for (s, t) in trace.samples.iter().zip(batch) {
        let target = build_target(&t.target, &model.cfg)?;
        let total = loss_graph(g, s.head, &target, &model.cfg)?.total;
        sum = Some(match sum {
            None => total,
            Some(acc) => g.add(acc, total)?,
        });
    }
    Ok(g.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f64))
}

fn loss_value(model: &Pfos, batch: &[Sample]) -> f64 {
    let mut g = Graph::inference();
    let l = batch_loss(model, &mut g, batch).expect("forward succeeds");
    g.scalar(l)
}

/// Gradients whose analytic and numeric norms both stay below this are exact
/// zeros seen through rounding noise (embedding rows of absent tokens).
pub const ZERO_GRAD_FLOOR: f64 = 1e-9;

/// Finite-difference step for whole-model checks. A conv bias shifts every
/// pixel at once, and at 1e-5 enough ReLU inputs cross zero to skew the
/// central difference by a few percent.
pub const MODEL_STEP: f64 = 1e-6;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per parameter tensor: relative error between backprop and central
/// differences on its `top` largest-gradient coordinates plus `random` others.
pub fn model_gradient_errors(cfg: &ModelConfig, batch: &[Sample], top: usize, random: usize) -> Vec<(String, f64)> {
    let mut model = Pfos::new(cfg, vocab_size()).expect("model builds");
    let mut grads = Grads::zeros_like(&model.store);
    {
        let mut g = Graph::new();
        let l = batch_loss(&model, &mut g, batch).expect("forward succeeds");
        g.backward(l).expect("backward succeeds");
        g.accumulate_param_grads(&mut grads, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);
    let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone(), p.value.clone())).collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, name, base) in ids {
        let analytic = grads.get(id).to_vec();
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
        let mut coords: Vec<usize> = order.iter().copied().take(top).collect();
        let rest = &order[coords.len()..];
        if !rest.is_empty() {
            coords.extend(sample_indices(&mut rng, rest.len(), random.min(rest.len())).into_iter().map(|i| rest[i]));
        }
        let numeric = central_difference(
            |x| {
                let p = &mut model.store.get_mut(id).value;
                for &c in &coords {
                    p[c] = x[c];
                }
                loss_value(&model, batch)
            },
            &base,
            &coords,
            MODEL_STEP,
        );
        model.store.get_mut(id).value = base;
        let a: Vec<f64> = coords.iter().map(|&c| analytic[c]).collect();
        let err = if norm(&a).max(norm(&numeric)) < ZERO_GRAD_FLOOR { 0.0 } else { relative_error(&a, &numeric) };
        out.push((name, err));
    }
    out
}

/// IoU and GIoU by counting the centers of an `n × n` lattice over the
/// enclosing box.
pub fn lattice_iou_giou(a: &pfos_core::localization::BBox, b: &pfos_core::localization::BBox, n: usize) -> (f64, f64) {
    let (x0, x1) = (a.x1().min(b.x1()), a.x2().max(b.x2()));
    let (y0, y1) = (a.y1().min(b.y1()), a.y2().max(b.y2()));
    let inside = |bx: &pfos_core::localization::BBox, x: f64, y: f64| x >= bx.x1() && x < bx.x2() && y >= bx.y1() && y < bx.y2();
    let (mut inter, mut union) = (0usize, 0usize);
    for j in 0..n {
        let y = y0 + (j as f64 + 0.5) * (y1 - y0) / n as f64;
        for i in 0..n {
            let x = x0 + (i as f64 + 0.5) * (x1 - x0) / n as f64;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    let total = (n * n) as f64;
    let iou = inter as f64 / union as f64;
    (iou, iou - (total - union as f64) / total)
}

/// Random box with corners inside `[0, extent)`, sides at least `min_side`.
pub fn random_box(rng: &mut impl rand::Rng, extent: f64, min_side: f64) -> pfos_core::localization::BBox {
    let w = rng.random_range(min_side..extent / 2.0);
    let h = rng.random_range(min_side..extent / 2.0);
    let x = rng.random_range(0.0..extent - w);
    let y = rng.random_range(0.0..extent - h);
    pfos_core::localization::BBox::from_corners(x, y, x + w, y + h)
}
