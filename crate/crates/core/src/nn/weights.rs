use rand::distributions::{Distribution, Uniform};

use crate::rng::{self, Rng};
use crate::search_space::{factorized_split, NetworkPlan, OpPlan, Preprocess};

/// Draws `n` values i.i.d. uniform on `[-1/√fan_in, 1/√fan_in]`.
pub fn fan_in_uniform(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let bound = fan_in_bound(fan_in);
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn fan_in_bound(fan_in: usize) -> f32 {
    (1.0 / (fan_in as f64).sqrt()) as f32
}

/// Weights of a channel-aligning preprocessing step.
#[derive(Debug, Clone, PartialEq)]
pub enum PreWeights {
    /// `[out_c][in_c]`
    Conv1x1(Vec<f32>),
    /// Two `[half][in_c]` branches.
    Factorized(Vec<f32>, Vec<f32>),
}

/// Weights of one node operation.
#[derive(Debug, Clone, PartialEq)]
pub enum OpWeights {
    /// Parameter-free ops (identity at stride 1, pools).
    None,
    Factorized(Vec<f32>, Vec<f32>),
    /// `depthwise` is `[c][k][k]`, `pointwise` is `[c][c]`.
    Separable {
        depthwise: Vec<f32>,
        pointwise: Vec<f32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub preprocess: [PreWeights; 2],
    pub ops: Vec<[OpWeights; 2]>,
}

/// Frozen random backbone weights for one plan. Built once and only ever
/// borrowed immutably afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBank {
    seed: u64,
    /// `[init_c][in_c][3][3]`
    pub(crate) stem: Vec<f32>,
    pub(crate) cells: Vec<CellWeights>,
}

impl WeightBank {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stem(&self) -> &[f32] {
        &self.stem
    }

    pub fn cells(&self) -> &[CellWeights] {
        &self.cells
    }

    /// Visits every weight tensor in initialization order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&[f32])) {
        f(&self.stem);
        for cell in &self.cells {
            for p in &cell.preprocess {
                match p {
                    PreWeights::Conv1x1(w) => f(w),
                    PreWeights::Factorized(a, b) => {
                        f(a);
                        f(b);
                    }
                }
            }
            for pair in &cell.ops {
                for op in pair {
                    match op {
                        OpWeights::None => {}
                        OpWeights::Factorized(a, b) => {
                            f(a);
                            f(b);
                        }
                        OpWeights::Separable { depthwise, pointwise } => {
                            f(depthwise);
                            f(pointwise);
                        }
                    }
                }
            }
        }
    }

    pub fn num_weights(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|t| n += t.len());
        n
    }

    /// FNV-1a over the bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.num_weights() * 4);
        self.for_each_tensor(|t| {
            t.iter()
                .for_each(|v| bytes.extend_from_slice(&v.to_bits().to_le_bytes()))
        });
        rng::fnv1a(bytes)
    }
}

fn init_pre(rng: &mut Rng, p: &Preprocess) -> PreWeights {
    match *p {
        Preprocess::Conv1x1 { in_c, out_c } => PreWeights::Conv1x1(fan_in_uniform(rng, in_c, out_c * in_c)),
        Preprocess::FactorizedReduce { in_c, out_c } => {
            let (a, b) = factorized_split(out_c);
            PreWeights::Factorized(fan_in_uniform(rng, in_c, a * in_c), fan_in_uniform(rng, in_c, b * in_c))
        }
    }
}

fn init_op(rng: &mut Rng, op: &OpPlan) -> OpWeights {
    let c = op.channels;
    if op.is_factorized_identity() {
        let (a, b) = factorized_split(c);
        return OpWeights::Factorized(fan_in_uniform(rng, c, a * c), fan_in_uniform(rng, c, b * c));
    }
    if op.op.is_conv() {
        let k = op.op.kernel();
        return OpWeights::Separable {
            depthwise: fan_in_uniform(rng, k * k, c * k * k),
            pointwise: fan_in_uniform(rng, c, c * c),
        };
    }
    OpWeights::None
}

/// Draws every backbone weight for `plan` from a stream seeded by `seed`.
///
/// Fan-in is `in_channels × k × k`; depthwise kernels see a single input
/// channel so their fan-in is `k × k`.
pub fn init_weights(plan: &NetworkPlan, seed: u64) -> WeightBank {
    let mut rng = rng::rng(seed);
    let in_c = plan.input.c;
    let stem = fan_in_uniform(&mut rng, in_c * 9, plan.stem_out.c * in_c * 9);
    let cells = plan
        .cells
        .iter()
        .map(|cell| {
            let preprocess = [
                init_pre(&mut rng, &cell.preprocess[0]),
                init_pre(&mut rng, &cell.preprocess[1]),
            ];
            let ops = cell
                .nodes
                .iter()
                .map(|n| [init_op(&mut rng, &n.ops[0]), init_op(&mut rng, &n.ops[1])])
                .collect();
            CellWeights { preprocess, ops }
        })
        .collect();
    WeightBank { seed, stem, cells }
}
