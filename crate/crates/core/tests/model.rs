mod common;

use pfos_core::data::Split;
use pfos_core::train::evaluate;
use pfos_core::{Ablation, ModelConfig, Pfos, PfosError, SampleRef};
use pfos_tensor::{recorded_ops, Graph};

fn tiny(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d: 16,
        heads: 2,
        cross_layers: 1,
        fusion_layers: 1,
        grid_channels: 16,
        ffn_dim: 32,
        ablation,
        ..ModelConfig::desk()
    }
}

#[test]
fn tiny_model_gradients_match_finite_differences_in_every_variant() {
    let batch = common::samples(Split::Train, 2, 21);
    let mut variants: Vec<ModelConfig> = Ablation::ALL.iter().map(|&a| tiny(a)).collect();
    variants.push(ModelConfig { interleaved_cross: true, ..tiny(Ablation::Full) });
    variants.push(ModelConfig { fusion_positional: true, ..tiny(Ablation::Full) });
    for cfg in variants {
        for (name, err) in common::model_gradient_errors(&cfg, &batch, 2, 2) {
            assert!(err < 1e-4, "{} / {name}: relative error {err}", cfg.ablation);
        }
    }
}

#[test]
fn ablations_register_only_what_they_use() {
    let names = |a| {
        let m = Pfos::new(&tiny(a), common::vocab_size()).unwrap();
        m.store.iter().map(|(_, p)| p.name.clone()).collect::<Vec<_>>()
    };
    let has = |v: &[String], prefix: &str| v.iter().any(|n| n.starts_with(prefix));
    let full = names(Ablation::Full);
    assert!(has(&full, "lgv.") && has(&full, "vgl.") && has(&full, "fusion.") && !has(&full, "concat."));
    let lgv = names(Ablation::LgvOnly);
    assert!(has(&lgv, "lgv.") && !has(&lgv, "vgl.") && !has(&lgv, "fusion.") && has(&lgv, "concat."));
    let vgl = names(Ablation::VglOnly);
    assert!(!has(&vgl, "lgv.") && has(&vgl, "vgl.") && has(&vgl, "concat."));
    let base = names(Ablation::ConcatBaseline);
    assert!(!has(&base, "lgv.") && !has(&base, "vgl.") && !has(&base, "fusion.") && has(&base, "concat."));
}

#[test]
fn loss_gradient_reaches_both_cross_outputs() {
    let cfg = ModelConfig::desk();
    let model = Pfos::new(&cfg, common::vocab_size()).unwrap();
    let batch = common::samples(Split::Train, 2, 22);
    let refs: Vec<SampleRef<'_>> = batch.iter().map(|s| SampleRef { image: &s.image, tokens: &s.tokens }).collect();
    let mut g = Graph::new();
    let trace = model.forward_batch(&mut g, &refs, true).unwrap();
    let target = pfos_core::localization::build_target(&batch[0].target, &cfg).unwrap();
    let loss = pfos_core::localization::loss_graph(&mut g, trace.samples[0].head, &target, &cfg).unwrap();
    g.backward(loss.total).unwrap();
    let cross = &trace.samples[0].cross;
    for v in [cross.h_lgv, cross.h_vgl] {
        assert!(g.grad(v).is_some_and(|gr| gr.iter().any(|&x| x != 0.0)));
    }
}

#[test]
fn inference_records_no_graph() {
    let model = Pfos::new(&ModelConfig::desk(), common::vocab_size()).unwrap();
    let s = &common::samples(Split::Test, 1, 23)[0];
    let before = recorded_ops();
    let out = model.predict(&s.image, &s.tokens).unwrap();
    assert_eq!(recorded_ops(), before);
    assert_eq!(out.score.len(), 64);
}

#[test]
fn inference_is_per_sample() {
    let model = Pfos::new(&ModelConfig::desk(), common::vocab_size()).unwrap();
    let batch = common::samples(Split::Test, 3, 24);
    let refs: Vec<SampleRef<'_>> = batch.iter().map(|s| SampleRef { image: &s.image, tokens: &s.tokens }).collect();
    let mut g = Graph::inference();
    let trace = model.forward_batch(&mut g, &refs, false).unwrap();
    for (t, s) in trace.samples.iter().zip(&batch) {
        let single = model.predict(&s.image, &s.tokens).unwrap();
        let joint = pfos_core::localization::HeadOutput::from_rows(g.value(t.head), 8, 8);
        assert_eq!(single, joint);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig { seed: 5, ..ModelConfig::desk() };
    let mut model = Pfos::new(&cfg, common::vocab_size()).unwrap();
    model.bn.mean.iter_mut().enumerate().for_each(|(i, m)| *m = 0.01 * i as f64);
    model.save(&path).unwrap();
    let loaded = Pfos::load(&path).unwrap();
    assert_eq!(loaded.store, model.store);
    assert_eq!(loaded.bn.mean, model.bn.mean);
    assert_eq!(loaded.bn.var, model.bn.var);
    assert_eq!(loaded.cfg, model.cfg);
    let test = common::samples(Split::Test, 8, 25);
    let (a, b) = (evaluate(&model, &test).unwrap(), evaluate(&loaded, &test).unwrap());
    assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    assert_eq!(a.predictions, b.predictions);
    assert!(Pfos::load_for(&path, &cfg).is_ok());
}

#[test]
fn checkpoint_config_mismatch_is_a_version_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Pfos::new(&ModelConfig::desk(), common::vocab_size()).unwrap().save(&path).unwrap();
    for other in [
        ModelConfig { d: 32, ..ModelConfig::desk() },
        ModelConfig { ablation: Ablation::LgvOnly, ..ModelConfig::desk() },
        ModelConfig { fusion_layers: 2, ..ModelConfig::desk() },
    ] {
        assert!(matches!(Pfos::load_for(&path, &other), Err(PfosError::Version(_))));
    }
    // Training-only keys do not make a checkpoint incompatible.
    assert!(Pfos::load_for(&path, &ModelConfig { lr: 0.5, epochs: 3, ..ModelConfig::desk() }).is_ok());
    std::fs::write(&path, "not a checkpoint\n").unwrap();
    assert!(Pfos::load(&path).is_err());
}
