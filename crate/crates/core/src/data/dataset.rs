//! Split generation and the on-disk dataset layout:
//!
//! ```text
//! DIR/vocab.txt
//! DIR/<split>/index.tsv
//! DIR/<split>/images/<id>.ppm
//! ```

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::query::{generate_query, grammar_words, Category};
use super::scene::{generate_scene, SceneSpec};
use crate::encoders::{tokenize, TokenSequence, Vocabulary};
use crate::error::{io_err, PfosError, Result};
use crate::image::Image;
use crate::localization::BBox;

pub const DATASET_HEADER: &str = "# pfos-dataset v1";
pub const INDEX_COLUMNS: &str = "id\tseed\tcategory\tcx\tcy\tw\th\ttokens\timage\ttext";
/// Scene attempts per sample before generation gives up.
pub const MAX_ATTEMPTS: u64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = PfosError;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| PfosError::Validation(format!("unknown split `{s}`")))
    }
}

/// Scene seed: split tag in bits 62..64, base seed (mod 2^22) in 40..62,
/// sample index in 8..40 and attempt in 0..8. Different splits never share seeds.
pub fn sample_seed(split: Split, base: u64, index: usize, attempt: u64) -> u64 {
    debug_assert!((index as u64) < 1 << 32 && attempt < MAX_ATTEMPTS);
    split.tag() << 62 | (base & ((1 << 22) - 1)) << 40 | (index as u64) << 8 | attempt
}

pub fn split_of_seed(seed: u64) -> Option<Split> {
    Split::ALL.into_iter().find(|s| s.tag() == seed >> 62)
}

/// Relative category weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryMix {
    pub weights: [f64; 4],
}

impl Default for CategoryMix {
    fn default() -> Self {
        CategoryMix { weights: [1.0; 4] }
    }
}

impl CategoryMix {
    /// `absolute,relation` (equal weights) or `absolute:1,relation:3`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut weights = [0.0; 4];
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, w) = match item.split_once(':') {
                Some((n, w)) => {
                    let w: f64 = w.parse().map_err(|_| PfosError::Validation(format!("bad weight in `{item}`")))?;
                    (n, w)
                }
                None => (item, 1.0),
            };
            let cat: Category = name.parse()?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(PfosError::Validation(format!("bad weight in `{item}`")));
            }
            weights[cat as usize] += w;
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(PfosError::Validation(format!("no categories selected in `{list}`")));
        }
        Ok(CategoryMix { weights })
    }

    pub fn fraction(&self, c: Category) -> f64 {
        self.weights[c as usize] / self.weights.iter().sum::<f64>()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Category {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for c in Category::ALL {
            u -= self.weights[c as usize];
            if u < 0.0 {
                return c;
            }
        }
        *Category::ALL.iter().rev().find(|c| self.weights[**c as usize] > 0.0).expect("non-empty mix")
    }
}

#[derive(Clone, Debug)]
pub struct GenerationSpec {
    pub scene: SceneSpec,
    pub mix: CategoryMix,
    pub max_tokens: usize,
    pub base_seed: u64,
}

impl GenerationSpec {
    pub fn desk(base_seed: u64) -> Self {
        GenerationSpec { scene: SceneSpec::desk(), mix: CategoryMix::default(), max_tokens: 12, base_seed }
    }
}

/// One grounding problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// Seed of the scene the sample was drawn from.
    pub seed: u64,
    pub category: Category,
    pub target: BBox,
    pub tokens: TokenSequence,
    pub image: Image,
}

/// The vocabulary of the query grammar.
pub fn grammar_vocabulary() -> Vocabulary {
    Vocabulary::new(&grammar_words()).expect("grammar words are distinct")
}

/// Draws sample `index` of `split`: a category from the mix, then scenes
/// until one admits an unambiguous query of that category.
pub fn generate_sample(split: Split, index: usize, spec: &GenerationSpec, vocab: &Vocabulary) -> Result<Sample> {
    let mut cat_rng = ChaCha8Rng::seed_from_u64(sample_seed(split, spec.base_seed, index, 0));
    cat_rng.set_stream(2);
    let category = spec.mix.sample(&mut cat_rng);
    for attempt in 0..MAX_ATTEMPTS {
        let seed = sample_seed(split, spec.base_seed, index, attempt);
        let scene = match generate_scene(seed, &spec.scene) {
            Ok(s) => s,
            Err(PfosError::Generation(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        if let Some(g) = generate_query(&scene.objects, spec.scene.width, spec.scene.height, category, &mut rng) {
            let tokens = tokenize(&g.query.text(), vocab, spec.max_tokens);
            return Ok(Sample { id: index, seed, category, target: scene.objects[g.target].bbox, tokens, image: scene.image });
        }
    }
    Err(PfosError::Generation(format!("{split} sample {index}: no {category} query after {MAX_ATTEMPTS} scenes")))
}

pub fn generate_split(split: Split, n: usize, spec: &GenerationSpec, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    (0..n).map(|k| generate_sample(split, k, spec, vocab)).collect()
}

fn image_rel_path(id: usize) -> String {
    format!("images/{id:06}.ppm")
}

pub fn write_vocabulary(dir: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    vocab.save(&dir.join("vocab.txt"))
}

pub fn read_vocabulary(dir: &Path) -> Result<Vocabulary> {
    Vocabulary::load(&dir.join("vocab.txt"))
}

pub fn split_dir(dir: &Path, split: Split) -> PathBuf {
    dir.join(split.as_str())
}

/// Writes `samples` as `DIR/<split>/index.tsv` plus one PPM per sample.
pub fn write_split(dir: &Path, split: Split, samples: &[Sample]) -> Result<()> {
    let sd = split_dir(dir, split);
    let images = sd.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let index = sd.join("index.tsv");
    let file = fs::File::create(&index).map_err(io_err(&index))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{DATASET_HEADER}")?;
        writeln!(w, "{INDEX_COLUMNS}")?;
        for s in samples {
            let ids: Vec<String> = s.tokens.ids.iter().map(|i| i.to_string()).collect();
            let t = &s.target;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.id,
                s.seed,
                s.category,
                t.cx,
                t.cy,
                t.w,
                t.h,
                ids.join(","),
                image_rel_path(s.id),
                s.tokens.text
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(&index))?;
    for s in samples {
        s.image.save_ppm(&sd.join(image_rel_path(s.id)))?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: Split, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    let sd = split_dir(dir, split);
    let index = sd.join("index.tsv");
    let file = fs::File::open(&index).map_err(io_err(&index))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || lines.next().transpose().map_err(io_err(&index));
    match next()? {
        Some(h) if h == DATASET_HEADER => {}
        other => return Err(PfosError::Version(format!("{}: expected `{DATASET_HEADER}`, found {other:?}", index.display()))),
    }
    if next()?.as_deref() != Some(INDEX_COLUMNS) {
        return Err(PfosError::Dataset(format!("{}: unexpected column header", index.display())));
    }
    let mut out = Vec::new();
    let mut lineno = 2;
    while let Some(line) = next()? {
        lineno += 1;
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| PfosError::Dataset(format!("{}:{lineno}: {m}", index.display()));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(bad(&format!("expected 10 fields, found {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(&format!("bad number `{}`", f[i])));
        let ids = f[7]
            .split(',')
            .map(|t| t.parse::<usize>().map_err(|_| bad(&format!("bad token id `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(&t) = ids.iter().find(|&&t| t >= vocab.len()) {
            return Err(bad(&format!("token id {t} outside vocabulary")));
        }
        let tokens = TokenSequence::from_ids(ids, f[9].to_string()).map_err(|e| bad(&e.to_string()))?;
        let image = Image::load_ppm(&sd.join(f[8]))?;
        out.push(Sample {
            id: f[0].parse().map_err(|_| bad("bad id"))?,
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            category: f[2].parse().map_err(|_| bad("bad category"))?,
            target: BBox::new(num(3)?, num(4)?, num(5)?, num(6)?),
            tokens,
            image,
        });
    }
    Ok(out)
}
