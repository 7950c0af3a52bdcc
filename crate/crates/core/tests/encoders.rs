mod common;

use pfos_core::data::{grammar_vocabulary, tokenize, Split};
use pfos_core::encoders::{
    encode_image, encode_text, project, GridFeatures, ImageEncoderParams, ProjectionParams, TextEncoderParams,
};
use pfos_core::{Image, ModelConfig, Pfos};
use pfos_tensor::gradcheck::{check_inputs, DEFAULT_STEP};
use pfos_tensor::{BatchNormMode, ConvGeometry, Graph, Grads, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn text_params(cfg: &ModelConfig, seed: u64) -> (ParamStore, TextEncoderParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = TextEncoderParams::register(&mut store, grammar_vocabulary().len(), cfg, &mut rng).unwrap();
    (store, p)
}

fn words(store: &ParamStore, p: &TextEncoderParams, text: &str) -> Vec<f64> {
    let vocab = grammar_vocabulary();
    let mut g = Graph::inference();
    let w = encode_text(&mut g, store, p, &tokenize(text, &vocab, 12)).unwrap();
    g.value(w.e).to_vec()
}

fn image_params(cfg: &ModelConfig, seed: u64) -> (ParamStore, ImageEncoderParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ImageEncoderParams::register(&mut store, cfg, &mut rng).unwrap();
    (store, p)
}

#[test]
fn text_rows_depend_only_on_their_own_token() {
    let cfg = ModelConfig::desk();
    let (store, p) = text_params(&cfg, 1);
    let a = words(&store, &p, "the red circle");
    let b = words(&store, &p, "the red circle left of the square");
    // [CLS] the red circle share rows 0..4; row 4 is [SEP] in one, `left` in the other.
    assert_eq!(a[..4 * 64], b[..4 * 64]);
    let c = words(&store, &p, "the blue circle");
    for t in 0..12 {
        let same = a[t * 64..(t + 1) * 64] == c[t * 64..(t + 1) * 64];
        assert_eq!(same, t != 2, "row {t}");
    }
}

#[test]
fn zero_embeddings_give_zero_features() {
    let cfg = ModelConfig::desk();
    let (mut store, p) = text_params(&cfg, 2);
    store.get_mut(p.word_emb).value.fill(0.0);
    store.get_mut(p.pos_emb).value.fill(0.0);
    assert!(words(&store, &p, "the large blue square").iter().all(|&x| x == 0.0));
}

#[test]
fn swapping_words_matches_the_table_oracle() {
    let cfg = ModelConfig::desk();
    let (store, p) = text_params(&cfg, 3);
    let vocab = grammar_vocabulary();
    let a = words(&store, &p, "the red circle");
    let b = words(&store, &p, "the circle red");
    let emb = &store.get(p.word_emb).value;
    let pos = &store.get(p.pos_emb).value;
    let (red, circle) = (vocab.id("red").unwrap(), vocab.id("circle").unwrap());
    for (t, id_a, id_b) in [(2, red, circle), (3, circle, red)] {
        for j in 0..64 {
            let delta = (emb[id_b * 64 + j] - emb[id_a * 64 + j]) + (pos[t * 64 + j] - pos[t * 64 + j]);
            assert!((b[t * 64 + j] - a[t * 64 + j] - delta).abs() < 1e-12);
            assert_eq!(b[t * 64 + j], emb[id_b * 64 + j] + pos[t * 64 + j]);
        }
    }
}

#[test]
fn out_of_range_token_ids_are_rejected() {
    let cfg = ModelConfig::desk();
    let (store, p) = text_params(&cfg, 4);
    let vocab = grammar_vocabulary();
    let mut tokens = tokenize("the red circle", &vocab, 12);
    tokens.ids[1] = vocab.len() + 3;
    let mut g = Graph::inference();
    assert!(encode_text(&mut g, &store, &p, &tokens).is_err());
}

fn grid_of(store: &ParamStore, p: &ImageEncoderParams, img: &Image, cfg: &ModelConfig) -> (Vec<f64>, usize, usize) {
    let mut g = Graph::inference();
    let out = encode_image(&mut g, store, p, img, cfg).unwrap();
    (g.value(out.g).to_vec(), out.grid_w, out.grid_h)
}

#[test]
fn zero_input_with_zero_biases_gives_a_zero_grid() {
    let cfg = ModelConfig::desk();
    let (store, p) = image_params(&cfg, 5);
    // Pixels are centered on 0.5 before the first convolution.
    let img = Image::filled(64, 64, [0.5; 3]);
    let (g, w, h) = grid_of(&store, &p, &img, &cfg);
    assert_eq!((w, h), (8, 8));
    assert_eq!(g.len(), 64 * cfg.grid_channels);
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn wrong_image_size_is_rejected() {
    let cfg = ModelConfig::desk();
    let (store, p) = image_params(&cfg, 5);
    let mut g = Graph::inference();
    assert!(encode_image(&mut g, &store, &p, &Image::filled(32, 64, [0.5; 3]), &cfg).is_err());
}

#[test]
fn shifting_a_delta_by_one_stride_shifts_the_grid_by_one_cell() {
    let cfg = ModelConfig::desk();
    let (store, p) = image_params(&cfg, 6);
    let delta = |x: usize, y: usize| {
        let mut img = Image::filled(64, 64, [0.5; 3]);
        img.set_pixel(x, y, [1.0, 0.2, 0.9]);
        img
    };
    let c = cfg.grid_channels;
    let (a, _, _) = grid_of(&store, &p, &delta(27, 29), &cfg);
    let (b, _, _) = grid_of(&store, &p, &delta(35, 29), &cfg);
    let (v, _, _) = grid_of(&store, &p, &delta(27, 37), &cfg);
    assert!(a.iter().any(|&x| x != 0.0));
    for cy in 0..8 {
        for cx in 0..8 {
            let cell = |m: &[f64], x: usize, y: usize| m[(y * 8 + x) * c..(y * 8 + x + 1) * c].to_vec();
            if cx + 1 < 8 {
                assert_eq!(cell(&b, cx + 1, cy), cell(&a, cx, cy));
            }
            if cy + 1 < 8 {
                assert_eq!(cell(&v, cx, cy + 1), cell(&a, cx, cy));
            }
        }
    }
}

fn proj_cfg() -> ModelConfig {
    ModelConfig { d: 64, grid_channels: 64, ..ModelConfig::desk() }
}

#[test]
fn identity_projection_of_normalized_input_is_relu() {
    let cfg = proj_cfg();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = ProjectionParams::register(&mut store, &cfg, &mut rng).unwrap();
    let w = &mut store.get_mut(p.w).value;
    w.fill(0.0);
    for i in 0..64 {
        w[i * 64 + i] = 1.0;
    }
    // Columns of ±1 in equal numbers: mean 0, variance 1.
    let rows = 16;
    let x: Vec<f64> = (0..rows * 64).map(|k| if (k / 64 + k % 64) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut g = Graph::inference();
    let xv = g.constant(&[rows, 64], x.clone()).unwrap();
    let (out, _) = project(&mut g, &store, &p, GridFeatures { g: xv, grid_w: 4, grid_h: 4 }, BatchNormMode::Train).unwrap();
    for (y, x) in g.value(out.g).iter().zip(&x) {
        assert!((y - x.max(0.0)).abs() < 1e-4);
    }
}

#[test]
fn conv_bn_relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let geom = ConvGeometry { in_h: 6, in_w: 6, in_c: 3, kernel: 3, stride: 2, pad: 1 };
    let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mix = r(9 * 4);
    let inputs = vec![
        (vec![36, 3], r(108)),
        (vec![geom.patch_len(), 5], r(geom.patch_len() * 5)),
        (vec![5], r(5)),
        (vec![5, 4], r(20)),
        (vec![4], r(4).iter().map(|x| 1.0 + 0.3 * x).collect()),
        (vec![4], r(4)),
    ];
    let errs = check_inputs(
        |g, v| {
            let c = g.conv2d(v[0], v[1], v[2], geom)?;
            let c = g.relu(c);
            let z = g.matmul(c, v[3])?;
            let (n, _) = g.batch_norm(z, v[4], v[5], BatchNormMode::Train)?;
            let y = g.relu(n);
            let m = g.constant(&[9, 4], mix.clone())?;
            let y = g.mul(y, m)?;
            Ok(g.sum(y))
        },
        &inputs,
        DEFAULT_STEP,
    )
    .unwrap();
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < 1e-4, "input {i}: relative error {e}");
    }
}

#[test]
fn every_encoder_parameter_gets_gradient() {
    let cfg = ModelConfig::desk();
    let model = Pfos::new(&cfg, common::vocab_size()).unwrap();
    let batch = common::samples(Split::Train, 4, 11);
    let mut grads = Grads::zeros_like(&model.store);
    let mut g = Graph::new();
    let l = common::batch_loss(&model, &mut g, &batch).unwrap();
    g.backward(l).unwrap();
    g.accumulate_param_grads(&mut grads, 1.0);
    for (id, p) in model.store.iter() {
        if p.name.starts_with("text.") || p.name.starts_with("image.") || p.name.starts_with("proj.") {
            // Only rows of tokens present in the batch can receive gradient.
            assert!(grads.get(id).iter().any(|&x| x != 0.0), "{} has zero gradient", p.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_non_negative(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let cfg = ModelConfig::desk();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ProjectionParams::register(&mut store, &cfg, &mut rng).unwrap();
        let x: Vec<f64> = (0..16 * cfg.grid_channels).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::inference();
        let xv = g.constant(&[16, cfg.grid_channels], x).unwrap();
        let (out, _) = project(&mut g, &store, &p, GridFeatures { g: xv, grid_w: 4, grid_h: 4 }, BatchNormMode::Train).unwrap();
        prop_assert!(g.value(out.g).iter().all(|&v| v >= 0.0));
    }
}
