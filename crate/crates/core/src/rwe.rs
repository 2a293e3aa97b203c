//! Random-Weight Evaluation.
//!
//! The backbone is decoded, randomly initialized once and never updated.
//! Features are extracted once for the training and validation images; the
//! training rows are dealt into `L` folds and classifier `i` is trained on
//! every fold except fold `i` (all rows when `L = 1`). Validation labels are
//! predicted by plurality vote over the ensemble, and the error rate is
//! returned together with the FLOPs of the network.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::complexity::count_flops;
use crate::data::SearchData;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{extract_features, fan_in_uniform, init_weights, ForwardOptions, LinearClassifier, Matrix, WeightBank};
use crate::rng;
use crate::search_space::{decode, Genome, MacroConfig, NetworkPlan};

/// Hyperparameters of the linear-head training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    /// Z-score features before SGD. The scaling is folded back into the
    /// returned weights, so the classifier still consumes raw features.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 512,
            lr0: 0.25,
            momentum: 0.9,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Ensemble size `L`.
    pub num_classifiers: usize,
    pub train: TrainConfig,
    pub macro_cfg: MacroConfig,
    pub seed: u64,
    /// Images per forward batch; normalization statistics are per batch.
    pub infer_batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            num_classifiers: 5,
            train: TrainConfig::default(),
            macro_cfg: MacroConfig::default(),
            seed: 0,
            infer_batch: 250,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classifiers == 0 {
            return bad("number of classifiers must be at least 1");
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if self.train.lr0.is_nan() || self.train.lr0 < 0.0 || !(0.0..1.0).contains(&self.train.momentum) {
            return bad("lr0 must be non-negative and momentum in [0, 1)");
        }
        if self.infer_batch == 0 {
            return bad("infer_batch must be positive");
        }
        self.macro_cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub error: f64,
    pub flops: u64,
    #[serde(with = "secs")]
    pub wall_time: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Deals `0..n` into `l` disjoint folds whose sizes differ by at most one.
pub fn split_folds(n: usize, l: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if l == 0 || n < l {
        return Err(Error::TooFewSamples {
            needed: l.max(1),
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut folds = vec![Vec::with_capacity(n / l + 1); l];
    for (k, i) in order.into_iter().enumerate() {
        folds[k % l].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Rows classifier `i` trains on: every fold but `i`, or everything when
/// there is a single fold.
pub fn training_rows(folds: &[Vec<usize>], i: usize) -> Vec<usize> {
    if folds.len() == 1 {
        return folds[0].clone();
    }
    let mut rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    rows.sort_unstable();
    rows
}

/// Cosine-annealed learning rate at `epoch` of `total`.
pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    lr0 * (1.0 + (PI * epoch as f64 / total as f64).cos()) / 2.0
}

fn column_stats(x: &Matrix) -> (Vec<f32>, Vec<f32>) {
    let mut mean = vec![0f64; x.cols];
    let mut sq = vec![0f64; x.cols];
    for r in 0..x.rows {
        for (c, &v) in x.row(r).iter().enumerate() {
            mean[c] += f64::from(v);
            sq[c] += f64::from(v) * f64::from(v);
        }
    }
    let n = x.rows.max(1) as f64;
    let mut m32 = Vec::with_capacity(x.cols);
    let mut s32 = Vec::with_capacity(x.cols);
    for c in 0..x.cols {
        let m = mean[c] / n;
        let var = (sq[c] / n - m * m).max(0.0);
        m32.push(m as f32);
        s32.push(if var > 1e-12 { var.sqrt() as f32 } else { 1.0 });
    }
    (m32, s32)
}

/// Numerically stable softmax in place.
pub fn softmax(logits: &mut [f32]) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
}

/// Trains an affine head with softmax cross-entropy and momentum SGD on the
/// cosine schedule. Minibatch order is shuffled each epoch from `seed`.
pub fn train_classifier(
    features: &Matrix,
    labels: &[u8],
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LinearClassifier> {
    if features.rows != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} labels",
            features.rows,
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
        return Err(Error::ShapeMismatch(format!("label {l} outside {num_classes} classes")));
    }
    if features.rows == 0 {
        return Err(Error::TooFewSamples {
            needed: 1,
            available: 0,
        });
    }
    let (d, k) = (features.cols, num_classes);
    let mut rng = rng::rng(seed);

    let (mean, std) = if cfg.standardize {
        column_stats(features)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let mut x = features.clone();
    for r in 0..x.rows {
        for ((v, m), s) in x.data[r * d..(r + 1) * d].iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }

    let mut w = fan_in_uniform(&mut rng, d.max(1), d * k);
    let mut b = vec![0f32; k];
    let mut vw = vec![0f32; d * k];
    let mut vb = vec![0f32; k];
    let mut gw = vec![0f32; d * k];
    let mut gb = vec![0f32; k];
    let mut probs = vec![0f32; k];
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mu = cfg.momentum as f32;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr0, epoch, cfg.epochs) as f32;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            for &r in batch {
                let row = x.row(r);
                probs.copy_from_slice(&b);
                for (f, &xv) in row.iter().enumerate() {
                    probs
                        .iter_mut()
                        .zip(&w[f * k..(f + 1) * k])
                        .for_each(|(p, &wv)| *p += xv * wv);
                }
                softmax(&mut probs);
                probs[usize::from(labels[r])] -= 1.0;
                probs.iter_mut().for_each(|p| *p *= scale);
                for (f, &xv) in row.iter().enumerate() {
                    gw[f * k..(f + 1) * k]
                        .iter_mut()
                        .zip(&probs)
                        .for_each(|(g, &p)| *g += xv * p);
                }
                gb.iter_mut().zip(&probs).for_each(|(g, &p)| *g += p);
            }
            for ((wv, v), g) in w.iter_mut().zip(vw.iter_mut()).zip(&gw) {
                *v = mu * *v + g;
                *wv -= lr * *v;
            }
            for ((bv, v), g) in b.iter_mut().zip(vb.iter_mut()).zip(&gb) {
                *v = mu * *v + g;
                *bv -= lr * *v;
            }
        }
    }

    // fold the standardization into the affine map
    for f in 0..d {
        for c in 0..k {
            let wf = w[f * k + c] / std[f];
            b[c] -= mean[f] * wf;
            w[f * k + c] = wf;
        }
    }
    Ok(LinearClassifier {
        feature_dim: d,
        num_classes: k,
        weights: w,
        bias: b,
    })
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Plurality vote over per-classifier logits. Ties go to the label with the
/// highest summed softmax probability, then to the lowest label.
pub fn vote(logits: &[Vec<f32>]) -> Result<usize> {
    let k = match logits.first() {
        Some(l) if !l.is_empty() => l.len(),
        _ => return Err(Error::ShapeMismatch("empty ensemble".into())),
    };
    let mut votes = vec![0usize; k];
    let mut mass = vec![0f64; k];
    for l in logits {
        if l.len() != k {
            return Err(Error::ShapeMismatch("classifiers disagree on class count".into()));
        }
        votes[argmax(l)] += 1;
        let mut p = l.clone();
        softmax(&mut p);
        mass.iter_mut().zip(&p).for_each(|(m, &v)| *m += f64::from(v));
    }
    let top = *votes.iter().max().expect("k > 0");
    let mut best: Option<usize> = None;
    for c in (0..k).filter(|&c| votes[c] == top) {
        match best {
            Some(b) if mass[c] <= mass[b] => {}
            _ => best = Some(c),
        }
    }
    Ok(best.expect("at least one label has the top count"))
}

/// Label chosen by the ensemble for one feature row.
pub fn ensemble_predict(ensemble: &[LinearClassifier], row: &[f32]) -> Result<usize> {
    let logits = ensemble
        .iter()
        .map(|c| {
            if c.feature_dim != row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "row has {} features, classifier expects {}",
                    row.len(),
                    c.feature_dim
                )));
            }
            let mut out = vec![0.0; c.num_classes];
            c.logits_into(row, &mut out);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    vote(&logits)
}

/// Fraction of rows whose ensemble label differs from `labels`.
pub fn ensemble_error(ensemble: &[LinearClassifier], features: &Matrix, labels: &[u8]) -> Result<f64> {
    if features.rows == 0 {
        return Err(Error::EmptyValidation);
    }
    let mut wrong = 0usize;
    for (r, &l) in labels.iter().enumerate() {
        if ensemble_predict(ensemble, features.row(r))? != usize::from(l) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / features.rows as f64)
}

/// Seed of the random streams used for one genome under a global seed.
pub fn genome_seed(global: u64, genome: &Genome) -> u64 {
    rng::derive(global, genome.content_hash())
}

/// Cached features and trained heads, exposed for instrumentation.
#[derive(Debug, Clone)]
pub struct EvalTrace {
    pub folds: Vec<Vec<usize>>,
    pub ensemble: Vec<LinearClassifier>,
    pub train_features: Matrix,
    pub val_features: Matrix,
}

/// Runs the evaluation against an already built, frozen weight bank.
pub fn evaluate_plan(
    plan: &NetworkPlan,
    weights: &WeightBank,
    data: &SearchData,
    cfg: &EvalConfig,
    seed: u64,
    exec: Exec,
) -> Result<(f64, EvalTrace)> {
    cfg.validate()?;
    if data.val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if data.train.labels.len() < cfg.num_classifiers {
        return Err(Error::TooFewSamples {
            needed: cfg.num_classifiers,
            available: data.train.labels.len(),
        });
    }
    let opts = ForwardOptions { batch_norm: true, exec };
    let train_features = extract_features(plan, weights, &data.train.images, cfg.infer_batch, &opts)?;
    let val_features = extract_features(plan, weights, &data.val.images, cfg.infer_batch, &opts)?;

    let folds = split_folds(train_features.rows, cfg.num_classifiers, rng::derive(seed, 2))?;
    let ids: Vec<usize> = (0..cfg.num_classifiers).collect();
    let ensemble = exec
        .map(&ids, |&i| {
            let rows = training_rows(&folds, i);
            debug_assert!(folds.len() == 1 || !rows.iter().any(|r| folds[i].binary_search(r).is_ok()));
            let x = train_features.select_rows(&rows);
            let y: Vec<u8> = rows.iter().map(|&r| data.train.labels[r]).collect();
            train_classifier(&x, &y, plan.num_classes, &cfg.train, rng::derive(seed, 16 + i as u64))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let error = ensemble_error(&ensemble, &val_features, &data.val.labels)?;
    Ok((
        error,
        EvalTrace {
            folds,
            ensemble,
            train_features,
            val_features,
        },
    ))
}

/// Scores `genome`: validation error of the random-feature ensemble and the
/// network's FLOPs. Deterministic in `(genome, cfg.seed, data)`.
pub fn evaluate(genome: &Genome, data: &SearchData, cfg: &EvalConfig, exec: Exec) -> Result<EvalResult> {
    let start = Instant::now();
    let plan = decode(genome, &cfg.macro_cfg)?;
    let seed = genome_seed(cfg.seed, genome);
    let weights = init_weights(&plan, rng::derive(seed, 1));
    let (error, _) = evaluate_plan(&plan, &weights, data, cfg, seed, exec)?;
    Ok(EvalResult {
        error,
        flops: count_flops(&plan).flops,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(r: &mut impl Rng) -> f32 {
        let u1: f64 = r.gen_range(f64::EPSILON..1.0);
        let u2: f64 = r.gen();
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    #[test]
    fn folds_of_ten() {
        let f = split_folds(10, 5, 1).unwrap();
        assert!(f.iter().all(|x| x.len() == 2));
    }

    #[test]
    fn folds_of_eleven() {
        let f = split_folds(11, 5, 1).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_partition_for_many_seeds() {
        for seed in 0..100 {
            let f = split_folds(37, 5, seed).unwrap();
            let mut all: Vec<usize> = f.concat();
            all.sort_unstable();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
        }
        assert_eq!(split_folds(37, 5, 4).unwrap(), split_folds(37, 5, 4).unwrap());
    }

    #[test]
    fn too_few_for_folds() {
        assert!(matches!(split_folds(3, 5, 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn training_rows_exclude_own_fold() {
        let f = split_folds(23, 5, 7).unwrap();
        for i in 0..5 {
            let rows = training_rows(&f, i);
            assert!(rows.iter().all(|r| !f[i].contains(r)));
            assert_eq!(rows.len() + f[i].len(), 23);
        }
        let one = split_folds(9, 1, 7).unwrap();
        assert_eq!(training_rows(&one, 0), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.25, 0, 30), 0.25);
        assert!(cosine_lr(0.25, 30, 30).abs() < 1e-15);
        assert!((cosine_lr(0.25, 15, 30) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn separable_clusters_are_learned_exactly() {
        let mut r = rng::rng(5);
        let n = 400;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let centre = if y == 0 { -4.0 } else { 4.0 };
            data.push(centre + 0.3 * gaussian(&mut r));
            data.push(0.3 * gaussian(&mut r));
            labels.push(y);
        }
        let x = Matrix::from_vec(n, 2, data).unwrap();
        // the closed-form separator x0 = 0 classifies every point
        for (i, &y) in labels.iter().enumerate() {
            assert_eq!((x.row(i)[0] > 0.0) as u8, y);
        }
        for standardize in [true, false] {
            let cfg = TrainConfig {
                standardize,
                ..TrainConfig::default()
            };
            let clf = train_classifier(&x, &labels, 2, &cfg, 3).unwrap();
            assert_eq!(ensemble_error(&[clf], &x, &labels).unwrap(), 0.0);
        }
    }

    #[test]
    fn training_is_seeded() {
        let mut r = rng::rng(6);
        let x = Matrix::from_vec(50, 3, (0..150).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<u8> = (0..50).map(|i| (i % 3) as u8).collect();
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        assert_eq!(
            train_classifier(&x, &y, 3, &cfg, 1).unwrap(),
            train_classifier(&x, &y, 3, &cfg, 1).unwrap()
        );
    }

    #[test]
    fn bad_labels_rejected() {
        let x = Matrix::zeros(2, 2);
        assert!(train_classifier(&x, &[0, 5], 3, &TrainConfig::default(), 0).is_err());
        assert!(train_classifier(&x, &[0], 3, &TrainConfig::default(), 0).is_err());
    }

    fn one_hot(c: usize, k: usize, v: f32) -> Vec<f32> {
        let mut l = vec![0.0; k];
        l[c] = v;
        l
    }

    #[test]
    fn strict_plurality() {
        let logits: Vec<Vec<f32>> = [1, 1, 2, 3, 1].iter().map(|&c| one_hot(c, 4, 5.0)).collect();
        assert_eq!(vote(&logits).unwrap(), 1);
    }

    #[test]
    fn single_classifier_is_argmax() {
        assert_eq!(vote(&[vec![0.1, 0.7, 0.3]]).unwrap(), 1);
    }

    #[test]
    fn tie_broken_by_probability_mass() {
        // votes (1,1,2,2,3); class-2 voters are far more confident
        let logits = vec![
            one_hot(1, 4, 0.5),
            one_hot(1, 4, 0.5),
            one_hot(2, 4, 9.0),
            one_hot(2, 4, 9.0),
            one_hot(3, 4, 1.0),
        ];
        assert_eq!(vote(&logits).unwrap(), 2);
        // symmetric confidence falls through to the lowest label
        let even = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        assert_eq!(vote(&even).unwrap(), 0);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        assert!(vote(&[]).is_err());
        assert!(ensemble_predict(&[], &[1.0]).is_err());
    }
}
