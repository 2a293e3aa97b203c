//! CIFAR-10 binary ingestion, per-channel normalization and stratified
//! train/validation splitting.
//!
//! A record is one label byte followed by 3072 pixel bytes: the red plane,
//! then green, then blue, each 32×32 row-major.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const IMAGE_SHAPE: (usize, usize, usize) = (3, 32, 32);
pub const PIXELS: usize = 3 * 32 * 32;
pub const RECORD_LEN: usize = PIXELS + 1;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
/// Environment variable consulted when no data root is given explicitly.
pub const DATA_ENV: &str = "RWE_NAS_DATA";

/// Per-channel mean and standard deviation in `[0, 1]` pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Images stored as `f32` NCHW plus labels.
///
/// Freshly loaded sets hold raw byte values (0..=255); after [`normalize`]
/// they hold `(x/255 − mean)/std` and remember the statistics used.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub image_shape: (usize, usize, usize),
    pub provenance: String,
    pub stats: Option<ChannelStats>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        let (c, h, w) = self.image_shape;
        c * h * w
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Copies the listed images, in order.
    pub fn subset(&self, indices: &[usize]) -> LabeledImageSet {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        LabeledImageSet {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_shape: self.image_shape,
            provenance: self.provenance.clone(),
            stats: self.stats,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; NUM_CLASSES.max(self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0))];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Re-encodes into CIFAR-10 records, undoing normalization if present.
    pub fn to_records(&self) -> Vec<u8> {
        let plane = self.image_shape.1 * self.image_shape.2;
        let mut out = Vec::with_capacity(self.len() * (self.image_len() + 1));
        for i in 0..self.len() {
            out.push(self.labels[i]);
            for (k, &v) in self.image(i).iter().enumerate() {
                let raw = match self.stats {
                    Some(s) => {
                        let c = k / plane;
                        (v * s.std[c] + s.mean[c]) * 255.0
                    }
                    None => v,
                };
                out.push(raw.round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Parses concatenated CIFAR-10 records.
pub fn parse_records(bytes: &[u8], file: &Path) -> Result<LabeledImageSet> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        let whole = bytes.len() / RECORD_LEN;
        return Err(Error::CorruptRecord {
            file: file.to_path_buf(),
            offset: (whole * RECORD_LEN) as u64,
        });
    }
    let n = bytes.len() / RECORD_LEN;
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if usize::from(rec[0]) >= NUM_CLASSES {
            return Err(Error::CorruptRecord {
                file: file.to_path_buf(),
                offset: (r * RECORD_LEN) as u64,
            });
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&b| f32::from(b)));
    }
    Ok(LabeledImageSet {
        images,
        labels,
        image_shape: IMAGE_SHAPE,
        provenance: file.display().to_string(),
        stats: None,
    })
}

fn read_batch(path: PathBuf) -> Result<LabeledImageSet> {
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path)?;
    parse_records(&bytes, &path)
}

fn concat(parts: Vec<LabeledImageSet>, provenance: String) -> LabeledImageSet {
    let mut out = LabeledImageSet {
        images: Vec::new(),
        labels: Vec::new(),
        image_shape: IMAGE_SHAPE,
        provenance,
        stats: None,
    };
    for p in parts {
        out.images.extend(p.images);
        out.labels.extend(p.labels);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cifar10 {
    pub train: LabeledImageSet,
    /// Absent when the directory carries no `test_batch.bin`.
    pub test: Option<LabeledImageSet>,
}

/// Loads `data_batch_{1..5}.bin` (and `test_batch.bin` when present) from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Cifar10> {
    let train = TRAIN_FILES
        .iter()
        .map(|f| read_batch(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let test_path = dir.join(TEST_FILE);
    let test = if test_path.is_file() {
        Some(read_batch(test_path)?)
    } else {
        None
    };
    Ok(Cifar10 {
        train: concat(train, format!("cifar10:{}", dir.display())),
        test,
    })
}

/// Resolves the dataset root: explicit path, else `$RWE_NAS_DATA`.
pub fn resolve_data_root(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
}

/// One-pass per-channel mean/std of a raw (unnormalized) set, in `[0, 1]` units.
pub fn channel_stats(set: &LabeledImageSet) -> Result<ChannelStats> {
    if set.stats.is_some() {
        return Err(Error::InvalidStats("set is already normalized".into()));
    }
    if set.is_empty() {
        return Err(Error::InvalidStats("empty set".into()));
    }
    let plane = set.image_shape.1 * set.image_shape.2;
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    for i in 0..set.len() {
        for (c, p) in set.image(i).chunks_exact(plane).enumerate().take(3) {
            for &v in p {
                let x = f64::from(v) / 255.0;
                sum[c] += x;
                sq[c] += x * x;
            }
        }
    }
    let n = (set.len() * plane) as f64;
    let mut stats = ChannelStats {
        mean: [0.0; 3],
        std: [0.0; 3],
    };
    for c in 0..3 {
        let m = sum[c] / n;
        stats.mean[c] = m as f32;
        stats.std[c] = (sq[c] / n - m * m).max(0.0).sqrt() as f32;
    }
    Ok(stats)
}

/// Maps raw pixels to `(x/255 − mean)/std` per channel.
pub fn normalize(set: &LabeledImageSet, stats: &ChannelStats) -> Result<LabeledImageSet> {
    if let Some(c) = stats.std.iter().position(|&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::InvalidStats(format!(
            "std[{c}] = {} must be positive",
            stats.std[c]
        )));
    }
    if set.stats.is_some() {
        return Err(Error::InvalidStats("set is already normalized".into()));
    }
    let plane = set.image_shape.1 * set.image_shape.2;
    let mut out = set.clone();
    for img in out.images.chunks_exact_mut(set.image_len()) {
        for (c, p) in img.chunks_exact_mut(plane).enumerate() {
            let (m, s) = (stats.mean[c], stats.std[c]);
            p.iter_mut().for_each(|v| *v = (*v / 255.0 - m) / s);
        }
    }
    out.stats = Some(*stats);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Stratified subsample `(n_train, n_val)` drawn after the split.
    pub subsample: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Largest-remainder allocation of `total` across classes proportionally to
/// `counts`; ties go to the lower class index.
fn allocate(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut take: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(k, &c)| (c * total % n, k)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - take.iter().sum::<usize>();
    for &(_, k) in &rem {
        if left == 0 {
            break;
        }
        if take[k] < counts[k] {
            take[k] += 1;
            left -= 1;
        }
    }
    take
}

fn by_class(labels: &[u8], pool: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); classes];
    for &i in pool {
        groups[labels[i] as usize].push(i);
    }
    groups
}

/// Picks `total` items from `pool` stratified by label.
fn stratified_pick(labels: &[u8], pool: &[usize], total: usize, rng: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut groups = by_class(labels, pool);
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let take = allocate(&counts, total);
    let (mut picked, mut rest) = (Vec::with_capacity(total), Vec::new());
    for (g, t) in groups.iter_mut().zip(take) {
        g.shuffle(rng);
        picked.extend_from_slice(&g[..t]);
        rest.extend_from_slice(&g[t..]);
    }
    picked.sort_unstable();
    rest.sort_unstable();
    (picked, rest)
}

/// Stratified split of `labels` into train/validation indices, with the
/// optional stratified subsample applied to each side afterwards.
pub fn split_indices(labels: &[u8], spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train_fraction {} must lie strictly between 0 and 1",
            spec.train_fraction
        )));
    }
    if labels.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            available: labels.len(),
        });
    }
    let mut r = rng::rng(rng::derive(spec.seed, 0x5F11));
    let all: Vec<usize> = (0..labels.len()).collect();
    let n_train = (labels.len() as f64 * spec.train_fraction).round() as usize;
    let (mut train, mut val) = stratified_pick(labels, &all, n_train, &mut r);
    if let Some((nt, nv)) = spec.subsample {
        for (need, have) in [(nt, train.len()), (nv, val.len())] {
            if need > have {
                return Err(Error::TooFewSamples {
                    needed: need,
                    available: have,
                });
            }
        }
        train = stratified_pick(labels, &train, nt, &mut r).0;
        val = stratified_pick(labels, &val, nv, &mut r).0;
    }
    Ok(SplitIndices { train, val })
}

/// Materialized form of [`split_indices`].
pub fn split(set: &LabeledImageSet, spec: &SplitSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let idx = split_indices(&set.labels, spec)?;
    Ok((set.subset(&idx.train), set.subset(&idx.val)))
}

/// Training and validation sets handed to the evaluator, both normalized
/// with statistics of the training side.
#[derive(Debug, Clone)]
pub struct SearchData {
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
}

/// Split → statistics from the training side → normalize both sides.
pub fn prepare(set: &LabeledImageSet, spec: &SplitSpec) -> Result<SearchData> {
    let (train, val) = split(set, spec)?;
    let stats = channel_stats(&train)?;
    Ok(SearchData {
        train: normalize(&train, &stats)?,
        val: normalize(&val, &stats)?,
    })
}

/// Class-structured CIFAR-format records for smoke runs when the real
/// archive is unavailable: each class has a smooth colour pattern, images
/// add a random brightness offset, spatial jitter and pixel noise.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<u8> {
    use rand::Rng;
    let mut r = rng::rng(seed);
    let mut out = Vec::with_capacity(n * RECORD_LEN);
    for i in 0..n {
        let class = i % NUM_CLASSES;
        out.push(class as u8);
        let fx = 1.0 + (class % 5) as f32;
        let fy = 1.0 + (class / 5) as f32 * 2.0;
        let (dx, dy): (f32, f32) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let bright: f32 = r.gen_range(-30.0..30.0);
        for c in 0..3 {
            let phase = (class * 3 + c) as f32 * 0.7;
            for y in 0..32 {
                for x in 0..32 {
                    let u = (x as f32 + dx) / 32.0 * std::f32::consts::TAU;
                    let v = (y as f32 + dy) / 32.0 * std::f32::consts::TAU;
                    let s = (fx * u + phase).sin() * (fy * v - phase).cos();
                    let px = 128.0 + bright + 70.0 * s + r.gen_range(-40.0..40.0);
                    out.push(px.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

/// Writes five training batch files (and a test batch) of synthetic records.
pub fn write_synthetic_cifar10(dir: &Path, per_file: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, f) in TRAIN_FILES.iter().enumerate() {
        fs::write(dir.join(f), synthetic_records(per_file, rng::derive(seed, k as u64)))?;
    }
    fs::write(dir.join(TEST_FILE), synthetic_records(per_file, rng::derive(seed, 99)))?;
    Ok(())
}
