#![allow(dead_code)]

use std::path::Path;

use rwe_nas::data::{self, SearchData, SplitSpec};
use rwe_nas::moea::Objectives;
use rwe_nas::{Genome, MacroConfig, Result};

/// FLOPs and params computed straight from the genome, without the decoder
/// or the complexity module.
pub fn oracle_cost(genome: &Genome, m: &MacroConfig) -> (u64, u64) {
    let g = genome.flatten();
    let (cin, h0, _) = m.input_shape;
    let c0 = m.init_channels;
    let mut flops = h0 * h0 * c0 * cin * 9 + 2 * c0 * h0 * h0;
    let mut params = c0 * cin * 9;

    // (channels, resolution) of the two previous cell outputs
    let mut pp = (c0, h0);
    let mut p = (c0, h0);
    let mut w = c0;
    for layer in 1..=m.num_layers {
        let red = m.reduction_positions.contains(&layer);
        if red {
            w *= 2;
        }
        let cell = if red { &g[20..40] } else { &g[0..20] };
        let h = p.1;
        let hw = h * h;

        // two input adapters to width w, each followed by a norm; a factorized
        // reduce costs the same as a plain 1x1 map
        flops += hw * w * pp.0 + 2 * w * hw;
        params += w * pp.0;
        flops += hw * w * p.0 + 2 * w * hw;
        params += w * p.0;

        let oh = if red { h.div_ceil(2) } else { h };
        let ohw = oh * oh;
        let mut used = [false; 7];
        for node in 0..5 {
            for side in 0..2 {
                let input = cell[node * 4 + side * 2] as usize;
                let op = cell[node * 4 + side * 2 + 1];
                used[input] = true;
                let stride2 = red && input < 2;
                match op {
                    0 if stride2 => {
                        flops += ohw * w * w + 2 * w * ohw;
                        params += w * w;
                    }
                    0 => {}
                    1..=4 => {
                        let k = if op == 1 || op == 3 { 3 } else { 5 };
                        flops += ohw * w * k * k + ohw * w * w + 2 * w * ohw;
                        params += w * k * k + w * w;
                    }
                    _ => flops += ohw * w * 9,
                }
            }
        }
        let unused = (2..7).filter(|&n| !used[n]).count();
        pp = p;
        p = (unused * w, oh);
    }
    flops += p.0 * m.num_classes;
    params += p.0 * m.num_classes + m.num_classes;
    (flops as u64, params as u64)
}

pub fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Peels off nondominated layers by exhaustive pairwise checks.
pub fn brute_force_fronts(points: &[[f64; 2]]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Objectives `(Σg, 248 − Σg)`: every genome sits on one trade-off line.
pub fn gene_sum(g: &Genome) -> Result<Objectives> {
    let s: u64 = g.flatten().iter().map(|&v| u64::from(v)).sum();
    Ok(Objectives {
        error: s as f64,
        flops: 248 - s,
    })
}

/// Normalized synthetic split of `n_train` / `n_val` images.
pub fn synthetic_search_data(n_train: usize, n_val: usize, seed: u64) -> SearchData {
    let total = (5 * n_val).max(2 * n_train) + 100;
    let bytes = data::synthetic_records(total, seed);
    let set = data::parse_records(&bytes, Path::new("synthetic")).unwrap();
    let spec = SplitSpec {
        subsample: Some((n_train, n_val)),
        seed,
        ..SplitSpec::default()
    };
    data::prepare(&set, &spec).unwrap()
}
