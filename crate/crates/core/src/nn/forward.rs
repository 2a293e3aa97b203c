use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::search_space::{factorized_split, strided, CellPlan, NetworkPlan, OpCode, OpPlan, Preprocess};

use super::kernels::{self, Geom};
use super::tensor::{Matrix, Tensor};
use super::weights::{CellWeights, OpWeights, PreWeights, WeightBank};

/// Denominator guard of the batch-statistics normalization.
pub const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Per-batch normalization after every conv block. When disabled each
    /// image is processed fully independently of the rest of the batch.
    pub batch_norm: bool,
    pub exec: Exec,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            batch_norm: true,
            exec: Exec::Parallel,
        }
    }
}

fn per_image(x: &Tensor, out_chw: [usize; 3], exec: Exec, f: impl Fn(&[f32], &mut [f32]) + Sync + Send) -> Tensor {
    let [c, h, w] = out_chw;
    let mut out = Tensor::zeros([x.batch(), c, h, w]);
    let len = out.image_len();
    exec.for_each_chunk_mut(out.data_mut(), len, |i, dst| f(x.image(i), dst));
    out
}

fn relu(x: &Tensor, exec: Exec) -> Tensor {
    let [_, c, h, w] = x.shape();
    per_image(x, [c, h, w], exec, |src, dst| {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s.max(0.0);
        }
    })
}

/// Normalizes every channel with its mean and biased variance over
/// (batch, height, width). Constant channels come out as zeros.
pub fn batch_norm(t: &mut Tensor, exec: Exec) {
    let [n, c, _, _] = t.shape();
    let plane = t.plane_len();
    let count = (n * plane) as f32;
    let idx: Vec<usize> = (0..n).collect();

    let sums = exec.map(&idx, |&i| {
        t.image(i)
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f32>())
            .collect::<Vec<f32>>()
    });
    let mut mean = vec![0f32; c];
    for s in &sums {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let sq = exec.map(&idx, |&i| {
        t.image(i)
            .chunks_exact(plane)
            .zip(&mean)
            .map(|(p, &m)| p.iter().map(|&v| (v - m) * (v - m)).sum::<f32>())
            .collect::<Vec<f32>>()
    });
    let mut var = vec![0f32; c];
    for s in &sq {
        var.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v / count + NORM_EPS).sqrt()).collect();

    let len = t.image_len();
    exec.for_each_chunk_mut(t.data_mut(), len, |_, img| {
        for ((p, &m), &s) in img.chunks_exact_mut(plane).zip(&mean).zip(&inv_std) {
            p.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
    });
}

fn maybe_norm(mut t: Tensor, opts: &ForwardOptions) -> Tensor {
    if opts.batch_norm {
        batch_norm(&mut t, opts.exec);
    }
    t
}

/// ReLU → two offset stride-2 1×1 convs → channel concat → normalization.
fn factorized_reduce(x: &Tensor, first: &[f32], second: &[f32], out_c: usize, opts: &ForwardOptions) -> Result<Tensor> {
    let [_, in_c, h, w] = x.shape();
    let (ca, cb) = factorized_split(out_c);
    if first.len() != ca * in_c || second.len() != cb * in_c {
        return Err(Error::ShapeMismatch(format!(
            "factorized reduce {in_c}->{out_c} got weight lengths {} and {}",
            first.len(),
            second.len()
        )));
    }
    let (oh, ow) = (strided(h, 2), strided(w, 2));
    let plane = oh * ow;
    let r = relu(x, opts.exec);
    let out = per_image(&r, [out_c, oh, ow], opts.exec, |src, dst| {
        let mut sub = vec![0f32; in_c * plane];
        kernels::subsample2(src, in_c, h, w, 0, &mut sub);
        let (lo, hi) = dst.split_at_mut(ca * plane);
        kernels::pointwise(&sub, in_c, ca, plane, first, lo);
        kernels::subsample2(src, in_c, h, w, 1, &mut sub);
        kernels::pointwise(&sub, in_c, cb, plane, second, hi);
    });
    Ok(maybe_norm(out, opts))
}

fn conv1x1(x: &Tensor, weights: &[f32], out_c: usize, opts: &ForwardOptions) -> Result<Tensor> {
    let [_, in_c, h, w] = x.shape();
    if weights.len() != out_c * in_c {
        return Err(Error::ShapeMismatch(format!(
            "1x1 conv {in_c}->{out_c} got {} weights",
            weights.len()
        )));
    }
    let r = relu(x, opts.exec);
    let out = per_image(&r, [out_c, h, w], opts.exec, |src, dst| {
        kernels::pointwise(src, in_c, out_c, h * w, weights, dst)
    });
    Ok(maybe_norm(out, opts))
}

/// Aligns a cell input to the cell's node width.
pub fn preprocess(p: &Preprocess, x: &Tensor, weights: &PreWeights, opts: &ForwardOptions) -> Result<Tensor> {
    match (p, weights) {
        (Preprocess::Conv1x1 { in_c, out_c }, PreWeights::Conv1x1(wt)) if x.channels() == *in_c => {
            conv1x1(x, wt, *out_c, opts)
        }
        (Preprocess::FactorizedReduce { in_c, out_c }, PreWeights::Factorized(a, b)) if x.channels() == *in_c => {
            factorized_reduce(x, a, b, *out_c, opts)
        }
        _ => Err(Error::ShapeMismatch(format!(
            "preprocess {p:?} cannot take {} channels with the given weights",
            x.channels()
        ))),
    }
}

/// Applies one node operation. Output has `op.channels` channels and
/// `ceil(extent / stride)` resolution.
pub fn apply_op(op: &OpPlan, x: &Tensor, weights: &OpWeights, opts: &ForwardOptions) -> Result<Tensor> {
    let [_, c, h, w] = x.shape();
    if c != op.channels {
        return Err(Error::ShapeMismatch(format!(
            "{} expects {} channels, got {c}",
            op.op.name(),
            op.channels
        )));
    }
    let k = op.op.kernel();
    let g = Geom::new(h, w, k, op.stride, op.op.dilation());
    match (op.op, weights) {
        (OpCode::Identity, OpWeights::None) if op.stride == 1 => Ok(x.clone()),
        (OpCode::Identity, OpWeights::Factorized(a, b)) if op.stride == 2 => factorized_reduce(x, a, b, c, opts),
        (o, OpWeights::Separable { depthwise, pointwise }) if o.is_conv() => {
            if depthwise.len() != c * k * k || pointwise.len() != c * c {
                return Err(Error::ShapeMismatch(format!("{} weight sizes", o.name())));
            }
            let r = relu(x, opts.exec);
            let out = per_image(&r, [c, g.oh, g.ow], opts.exec, |src, dst| {
                let mut mid = vec![0f32; c * g.oh * g.ow];
                kernels::depthwise(src, c, &g, depthwise, &mut mid);
                kernels::pointwise(&mid, c, c, g.oh * g.ow, pointwise, dst);
            });
            Ok(maybe_norm(out, opts))
        }
        (OpCode::AvgPool3x3, OpWeights::None) => Ok(per_image(x, [c, g.oh, g.ow], opts.exec, |src, dst| {
            kernels::avg_pool(src, c, &g, dst)
        })),
        (OpCode::MaxPool3x3, OpWeights::None) => Ok(per_image(x, [c, g.oh, g.ow], opts.exec, |src, dst| {
            kernels::max_pool(src, c, &g, dst)
        })),
        (o, _) => Err(Error::ShapeMismatch(format!(
            "weights do not match {} at stride {}",
            o.name(),
            op.stride
        ))),
    }
}

fn add_assign(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "sum of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    Ok(())
}

fn concat_channels(parts: &[&Tensor], exec: Exec) -> Tensor {
    let [n, _, h, w] = parts[0].shape();
    let c: usize = parts.iter().map(|t| t.channels()).sum();
    let mut out = Tensor::zeros([n, c, h, w]);
    let len = out.image_len();
    exec.for_each_chunk_mut(out.data_mut(), len, |i, dst| {
        let mut off = 0;
        for p in parts {
            let src = p.image(i);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    });
    out
}

pub fn forward_cell(
    cell: &CellPlan,
    weights: &CellWeights,
    s0: &Tensor,
    s1: &Tensor,
    opts: &ForwardOptions,
) -> Result<Tensor> {
    let mut states = Vec::with_capacity(2 + cell.nodes.len());
    states.push(preprocess(&cell.preprocess[0], s0, &weights.preprocess[0], opts)?);
    states.push(preprocess(&cell.preprocess[1], s1, &weights.preprocess[1], opts)?);
    for (node, w) in cell.nodes.iter().zip(&weights.ops) {
        let mut a = apply_op(&node.ops[0], &states[node.inputs[0]], &w[0], opts)?;
        let b = apply_op(&node.ops[1], &states[node.inputs[1]], &w[1], opts)?;
        add_assign(&mut a, &b)?;
        states.push(a);
    }
    let parts: Vec<&Tensor> = cell.concat.iter().map(|&j| &states[j]).collect();
    Ok(concat_channels(&parts, opts.exec))
}

fn global_avg_pool(x: &Tensor) -> Matrix {
    let plane = x.plane_len();
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f32>() / plane as f32)
        .collect();
    Matrix {
        rows: x.batch(),
        cols: x.channels(),
        data,
    }
}

fn forward_impl(
    plan: &NetworkPlan,
    weights: &WeightBank,
    batch: &Tensor,
    opts: &ForwardOptions,
    mut trace: Option<&mut Vec<[usize; 4]>>,
) -> Result<Matrix> {
    let [_, c, h, w] = batch.shape();
    if (c, h, w) != (plan.input.c, plan.input.h, plan.input.w) {
        return Err(Error::ShapeMismatch(format!(
            "batch images are {c}x{h}x{w}, network expects {}x{}x{}",
            plan.input.c, plan.input.h, plan.input.w
        )));
    }
    if weights.cells.len() != plan.cells.len() {
        return Err(Error::ShapeMismatch("weight bank was built for another plan".into()));
    }
    let out_c = plan.stem_out.c;
    if weights.stem.len() != out_c * c * 9 {
        return Err(Error::ShapeMismatch("stem weights".into()));
    }
    let g = Geom::new(h, w, 3, 1, 1);
    let stem = per_image(batch, [out_c, h, w], opts.exec, |src, dst| {
        kernels::dense(src, c, out_c, &g, &weights.stem, dst)
    });
    let stem = maybe_norm(stem, opts);
    if let Some(t) = trace.as_deref_mut() {
        t.push(stem.shape());
    }

    let mut prev_prev = stem.clone();
    let mut prev = stem;
    for (cell, cw) in plan.cells.iter().zip(&weights.cells) {
        let out = forward_cell(cell, cw, &prev_prev, &prev, opts)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(out.shape());
        }
        prev_prev = std::mem::replace(&mut prev, out);
    }
    Ok(global_avg_pool(&prev))
}

/// Runs stem → cells → global average pooling and returns one feature row
/// per image. No classification layer is applied.
pub fn forward_features(
    plan: &NetworkPlan,
    weights: &WeightBank,
    batch: &Tensor,
    opts: &ForwardOptions,
) -> Result<Matrix> {
    forward_impl(plan, weights, batch, opts, None)
}

/// Like [`forward_features`], also returning the activation shape after the
/// stem and after every cell.
pub fn forward_traced(
    plan: &NetworkPlan,
    weights: &WeightBank,
    batch: &Tensor,
    opts: &ForwardOptions,
) -> Result<(Matrix, Vec<[usize; 4]>)> {
    let mut trace = Vec::with_capacity(plan.cells.len() + 1);
    let m = forward_impl(plan, weights, batch, opts, Some(&mut trace))?;
    Ok((m, trace))
}

/// Extracts features for `images` (`n` images laid out NCHW) in consecutive
/// chunks of `chunk` images; normalization statistics are per chunk.
pub fn extract_features(
    plan: &NetworkPlan,
    weights: &WeightBank,
    images: &[f32],
    chunk: usize,
    opts: &ForwardOptions,
) -> Result<Matrix> {
    let img_len = plan.input.numel();
    if !images.len().is_multiple_of(img_len) {
        return Err(Error::ShapeMismatch(format!(
            "{} values is not a whole number of {img_len}-value images",
            images.len()
        )));
    }
    let chunk = chunk.max(1);
    let mut parts = Vec::new();
    for piece in images.chunks(chunk * img_len) {
        let n = piece.len() / img_len;
        let t = Tensor::from_vec([n, plan.input.c, plan.input.h, plan.input.w], piece.to_vec())?;
        parts.push(forward_features(plan, weights, &t, opts)?);
    }
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, plan.feature_dim));
    }
    Matrix::vstack(parts)
}
