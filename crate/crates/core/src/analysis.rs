//! Rank correlation between predicted and ground-truth scores, and Pareto
//! front extraction from a search history.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moea::{dominates, GenerationSnapshot, SearchHistory};
use crate::search_space::Genome;

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average-ranked data.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("need at least two observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite score"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or(Error::DegenerateInput("constant input"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub id: String,
    pub predicted: f64,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: f64,
    pub n: usize,
    pub pairs: Vec<ScorePair>,
    /// Where the ground truth came from (usually the truth file path).
    pub truth_provenance: String,
}

/// Joins predictions with ground truth by id and correlates them. Pairs keep
/// the order of `predictions`.
pub fn correlation_study(
    predictions: &[(String, f64)],
    truth: &HashMap<String, f64>,
    truth_provenance: &str,
) -> Result<CorrelationReport> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(predictions.len());
    for (id, p) in predictions {
        if !seen.insert(id.as_str()) {
            return Err(Error::Config(format!("duplicate id {id:?} in predictions")));
        }
        let t = truth
            .get(id)
            .ok_or_else(|| Error::MissingGroundTruth { id: id.clone() })?;
        pairs.push(ScorePair {
            id: id.clone(),
            predicted: *p,
            ground_truth: *t,
        });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.ground_truth).collect();
    Ok(CorrelationReport {
        rho: spearman(&xs, &ys)?,
        n: pairs.len(),
        pairs,
        truth_provenance: truth_provenance.to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    id: String,
    accuracy: f64,
}

/// Reads an `id,accuracy` CSV, preserving row order. Ids must be unique.
pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::Config(format!(
                "duplicate id {:?} in {}",
                row.id,
                path.display()
            )));
        }
        out.push((row.id, row.accuracy));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub genome: Genome,
    pub error: f64,
    pub flops: u64,
}

/// Rank-0 members of one snapshot, one per distinct objective pair, by
/// ascending FLOPs (then error).
pub fn snapshot_front(snap: &GenerationSnapshot) -> Vec<FrontPoint> {
    let mut out: Vec<FrontPoint> = Vec::new();
    for i in snap.individuals.iter().filter(|i| i.rank == 0) {
        if !out.iter().any(|p| p.error == i.error && p.flops == i.flops) {
            out.push(FrontPoint {
                genome: i.genome,
                error: i.error,
                flops: i.flops,
            });
        }
    }
    out.sort_by(|a, b| a.flops.cmp(&b.flops).then(a.error.total_cmp(&b.error)));
    out
}

/// Final-generation Pareto front.
pub fn extract_front(history: &SearchHistory) -> Vec<FrontPoint> {
    history.generations.last().map(snapshot_front).unwrap_or_default()
}

/// True when no point dominates another.
pub fn is_antichain(points: &[FrontPoint]) -> bool {
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [p.error, p.flops as f64]).collect();
    pts.iter().all(|a| pts.iter().all(|b| !dominates(a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &rev).unwrap() + 1.0).abs() < 1e-12);
        let ys = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((spearman(&xs, &ys).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn study_join() {
        let preds = vec![("a".to_string(), 0.5), ("b".to_string(), 0.7), ("c".to_string(), 0.6)];
        let truth: HashMap<String, f64> = preds.iter().map(|(k, v)| (k.clone(), v * v)).collect();
        let r = correlation_study(&preds, &truth, "sq").unwrap();
        assert_eq!(r.n, 3);
        assert!((r.rho - 1.0).abs() < 1e-12);
        let mut partial = truth.clone();
        partial.remove("b");
        match correlation_study(&preds, &partial, "x") {
            Err(Error::MissingGroundTruth { id }) => assert_eq!(id, "b"),
            other => panic!("{other:?}"),
        }
    }
}
