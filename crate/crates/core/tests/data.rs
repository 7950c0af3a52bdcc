use std::collections::HashSet;

use pfos_core::data::{
    generate_query, generate_sample, generate_scene, grammar_vocabulary, letterbox, read_split, read_vocabulary, render,
    sample_seed, split_of_seed, tokenize, write_split, write_vocabulary, Category, CategoryMix, Color, GenerationSpec,
    Query, SceneObject, SceneSpec, ShapeKind, SizeClass, Split,
};
use pfos_core::data::dataset::generate_split;
use pfos_core::encoders::{CLS, PAD, SEP, UNK};
use pfos_core::localization::{iou, BBox};
use pfos_core::Image;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn obj(kind: ShapeKind, color: Color, x: f64, y: f64, side: f64, order: usize) -> SceneObject {
    let size = if side >= 17.0 { SizeClass::Large } else { SizeClass::Small };
    SceneObject { kind, color, size, bbox: BBox::from_corners(x, y, x + side, y + side), draw_order: order }
}

#[test]
fn scenes_are_deterministic() {
    let spec = SceneSpec::desk();
    for seed in [0, 1, 99, u64::MAX] {
        let (a, b) = (generate_scene(seed, &spec).unwrap(), generate_scene(seed, &spec).unwrap());
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.image.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.image.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn two_object_scenes_respect_the_overlap_bound() {
    let spec = SceneSpec { min_objects: 2, max_objects: 2, ..SceneSpec::desk() };
    for seed in 0..200 {
        let s = generate_scene(seed, &spec).unwrap();
        assert_eq!(s.objects.len(), 2);
        assert!(iou(&s.objects[0].bbox, &s.objects[1].bbox) < 0.1);
        for o in &s.objects {
            assert!(o.bbox.x1() >= 0.0 && o.bbox.y1() >= 0.0 && o.bbox.x2() <= 64.0 && o.bbox.y2() <= 64.0);
        }
    }
}

#[test]
fn object_count_outside_range_is_rejected() {
    assert!(generate_scene(0, &SceneSpec { min_objects: 1, max_objects: 3, ..SceneSpec::desk() }).is_err());
    assert!(generate_scene(0, &SceneSpec { min_objects: 2, max_objects: 7, ..SceneSpec::desk() }).is_err());
}

#[test]
fn square_pixel_count_equals_its_area() {
    let o = obj(ShapeKind::Square, Color::Red, 10.0, 20.0, 13.0, 0);
    let img = render(&[o], 64, 64);
    let red = Color::Red.rgb8().map(|c| c as f64 / 255.0);
    let n = (0..64).flat_map(|y| (0..64).map(move |x| (x, y))).filter(|&(x, y)| img.pixel(x, y) == red).count();
    assert_eq!(n, 13 * 13);
    // A circle covers about pi/4 of its box.
    let c = obj(ShapeKind::Circle, Color::Blue, 5.0, 5.0, 24.0, 0);
    let img = render(&[c], 64, 64);
    let blue = Color::Blue.rgb8().map(|c| c as f64 / 255.0);
    let n = (0..64).flat_map(|y| (0..64).map(move |x| (x, y))).filter(|&(x, y)| img.pixel(x, y) == blue).count();
    assert!((n as f64 - std::f64::consts::FRAC_PI_4 * 576.0).abs() < 24.0, "{n}");
}

#[test]
fn attribute_query_is_unique_or_rejected() {
    let scene = [
        obj(ShapeKind::Circle, Color::Red, 2.0, 2.0, 12.0, 0),
        obj(ShapeKind::Square, Color::Blue, 30.0, 2.0, 12.0, 1),
        obj(ShapeKind::Square, Color::Blue, 2.0, 40.0, 20.0, 2),
    ];
    let q = Query::parse("the red circle").unwrap();
    assert_eq!(q.resolve(&scene, 64, 64), vec![0]);
    let twins = [scene[0], obj(ShapeKind::Circle, Color::Red, 40.0, 40.0, 12.0, 1)];
    assert_eq!(q.resolve(&twins, 64, 64).len(), 2);
    // The generator never emits an expression that resolves to the wrong set.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        if let Some(g) = generate_query(&twins, 64, 64, Category::Attribute, &mut rng) {
            assert_eq!(g.query.resolve(&twins, 64, 64), vec![g.target]);
            assert_ne!(g.query.text(), "the red circle");
        }
    }
}

#[test]
fn biggest_selects_the_largest_object() {
    let scene = [
        obj(ShapeKind::Triangle, Color::Green, 2.0, 2.0, 10.0, 0),
        obj(ShapeKind::Triangle, Color::Green, 20.0, 2.0, 20.0, 1),
        obj(ShapeKind::Triangle, Color::Green, 2.0, 30.0, 30.0, 2),
    ];
    let q = Query::parse("the biggest triangle").unwrap();
    assert_eq!(q.resolve(&scene, 64, 64), vec![2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = (0..20).find_map(|_| generate_query(&scene, 64, 64, Category::Compare, &mut rng)).unwrap();
    assert_eq!(g.query.resolve(&scene, 64, 64), vec![g.target]);
}

#[test]
fn relation_resolves_against_a_unique_anchor() {
    let scene = [
        obj(ShapeKind::Square, Color::Red, 2.0, 20.0, 12.0, 0),
        obj(ShapeKind::Circle, Color::Blue, 26.0, 20.0, 12.0, 1),
        obj(ShapeKind::Square, Color::Yellow, 48.0, 20.0, 12.0, 2),
    ];
    assert_eq!(Query::parse("the square left of the blue circle").unwrap().resolve(&scene, 64, 64), vec![0]);
    assert_eq!(Query::parse("the square right of the blue circle").unwrap().resolve(&scene, 64, 64), vec![2]);
    assert!(Query::parse("the square left of the square").unwrap().resolve(&scene, 64, 64).is_empty());
}

#[test]
fn query_text_round_trips_through_the_parser() {
    let spec = GenerationSpec::desk(3);
    let vocab = grammar_vocabulary();
    for s in generate_split(Split::Train, 200, &spec, &vocab).unwrap() {
        let q = Query::parse(&s.tokens.text).unwrap();
        assert_eq!(q.text(), s.tokens.text);
        assert_eq!(q.category(), s.category);
    }
    assert!(Query::parse("the circle of the red").is_err());
    assert!(Query::parse("").is_err());
}

#[test]
fn every_sample_has_exactly_one_referent() {
    let spec = GenerationSpec::desk(4);
    let vocab = grammar_vocabulary();
    for split in Split::ALL {
        for s in generate_split(split, 400, &spec, &vocab).unwrap() {
            let scene = generate_scene(s.seed, &spec.scene).unwrap();
            let hits = Query::parse(&s.tokens.text).unwrap().resolve(&scene.objects, 64, 64);
            assert_eq!(hits.len(), 1, "`{}` in scene {}", s.tokens.text, s.seed);
            assert_eq!(scene.objects[hits[0]].bbox, s.target);
            assert_eq!(scene.image, s.image);
        }
    }
}

#[test]
fn tokenize_examples() {
    let vocab = grammar_vocabulary();
    let t = tokenize("red circle", &vocab, 12);
    let mut want = vec![CLS, vocab.id("red").unwrap(), vocab.id("circle").unwrap(), SEP];
    want.resize(12, PAD);
    assert_eq!(t.ids, want);
    assert_eq!(t.valid, (0..12).map(|i| i < 4).collect::<Vec<_>>());
    let empty = tokenize("", &vocab, 12);
    let mut want = vec![CLS, SEP];
    want.resize(12, PAD);
    assert_eq!(empty.ids, want);
    let unk = tokenize("the crimson circle", &vocab, 12);
    assert_eq!(unk.ids[2], UNK);
    assert_eq!(unk.len(), 12);
    let long = tokenize(&["red"; 20].join(" "), &vocab, 12);
    assert_eq!(long.len(), 12);
    assert_eq!(long.ids[11], SEP);
    assert!(long.check().is_ok());
    assert_eq!(tokenize("RED Circle", &vocab, 12).ids, t.ids);
}

#[test]
fn letterbox_examples() {
    let img = Image::filled(64, 64, [0.2, 0.4, 0.6]);
    let (out, tf) = letterbox(&img, 64, [0.5; 3]);
    assert_eq!((tf.scale, tf.pad_x, tf.pad_y), (1.0, 0.0, 0.0));
    assert_eq!(out, img);
    let wide = Image::filled(128, 64, [0.9, 0.1, 0.1]);
    let (out, tf) = letterbox(&wide, 64, [0.5, 0.5, 0.5]);
    assert_eq!((out.width, out.height), (64, 64));
    assert_eq!((tf.scale, tf.pad_x, tf.pad_y), (0.5, 0.0, 16.0));
    assert_eq!(out.pixel(10, 5), [0.5; 3]);
    assert_eq!(out.pixel(10, 60), [0.5; 3]);
    for (a, b) in out.pixel(10, 30).iter().zip([0.9, 0.1, 0.1]) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn letterbox_box_round_trip(w in 8usize..300, h in 8usize..300, cx in 0.0f64..1.0, cy in 0.0f64..1.0, bw in 0.01f64..1.0, bh in 0.01f64..1.0) {
        let img = Image::filled(w, h, [0.3; 3]);
        let (out, tf) = letterbox(&img, 64, img.mean_pixel());
        prop_assert_eq!((out.width, out.height), (64, 64));
        let ar_in = w as f64 / h as f64;
        let (sw, sh) = (w as f64 * tf.scale, h as f64 * tf.scale);
        prop_assert!((sw.max(sh) - 64.0).abs() < 1e-9);
        prop_assert!(((sw / sh) - ar_in).abs() / ar_in < 1e-9);
        let b = BBox::new(cx * w as f64, cy * h as f64, bw * w as f64, bh * h as f64);
        let r = tf.invert(&tf.apply(&b));
        for (x, y) in [(r.cx, b.cx), (r.cy, b.cy), (r.w, b.w), (r.h, b.h)] {
            prop_assert!((x - y).abs() < 0.5);
        }
    }
}

#[test]
fn splits_have_disjoint_seeds() {
    let spec = GenerationSpec::desk(7);
    let vocab = grammar_vocabulary();
    let mut seen: HashSet<u64> = HashSet::new();
    for split in Split::ALL {
        for s in generate_split(split, 300, &spec, &vocab).unwrap() {
            assert_eq!(split_of_seed(s.seed), Some(split));
            assert!(seen.insert(s.seed));
        }
    }
    for (i, a) in (0..2000).map(|i| (i, sample_seed(Split::Train, 7, i, 0))) {
        assert_ne!(a, sample_seed(Split::Val, 7, i, 0));
        assert_ne!(a, sample_seed(Split::Test, 7, i, 0));
    }
}

#[test]
fn category_mix_is_achieved_within_two_percent() {
    let vocab = grammar_vocabulary();
    for mix in ["absolute:1,attribute:1,relation:1,compare:1", "absolute:1,relation:3", "attribute:2,compare:1,relation:1"] {
        let spec = GenerationSpec { mix: CategoryMix::parse(mix).unwrap(), ..GenerationSpec::desk(8) };
        let samples = generate_split(Split::Train, 10_000, &spec, &vocab).unwrap();
        for c in Category::ALL {
            let got = samples.iter().filter(|s| s.category == c).count() as f64 / samples.len() as f64;
            assert!((got - spec.mix.fraction(c)).abs() < 0.02, "{mix}: {c} at {got}");
        }
    }
    assert!(CategoryMix::parse("").is_err());
    assert!(CategoryMix::parse("nonsense:1").is_err());
    assert!(CategoryMix::parse("absolute:-1").is_err());
}

#[test]
fn dataset_and_vocabulary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenerationSpec::desk(9);
    let vocab = grammar_vocabulary();
    write_vocabulary(dir.path(), &vocab).unwrap();
    let back = read_vocabulary(dir.path()).unwrap();
    assert_eq!(back, vocab);
    let samples = generate_split(Split::Val, 30, &spec, &vocab).unwrap();
    write_split(dir.path(), Split::Val, &samples).unwrap();
    assert_eq!(read_split(dir.path(), Split::Val, &vocab).unwrap(), samples);
    assert_eq!(generate_sample(Split::Val, 4, &spec, &vocab).unwrap(), samples[4]);
    let index = dir.path().join("val").join("index.tsv");
    let text = std::fs::read_to_string(&index).unwrap();
    std::fs::write(&index, text.replacen("v1", "v9", 1)).unwrap();
    assert!(read_split(dir.path(), Split::Val, &vocab).is_err());
}
