//! Per-image convolution and pooling kernels over CHW slices.
//!
//! All window ops use zero same-padding: `pad = dilation * (k - 1) / 2` and
//! output extent `ceil(extent / stride)`.

use crate::search_space::strided;

#[derive(Debug, Clone, Copy)]
pub struct Geom {
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl Geom {
    pub fn new(h: usize, w: usize, k: usize, stride: usize, dilation: usize) -> Self {
        Geom {
            h,
            w,
            oh: strided(h, stride),
            ow: strided(w, stride),
            k,
            stride,
            dilation,
            pad: dilation * (k - 1) / 2,
        }
    }

    /// Output columns `[lo, hi)` whose input column for tap `kx` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.w, self.ow, self.stride, kx * self.dilation, self.pad)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.h, self.oh, self.stride, ky * self.dilation, self.pad)
    }
}

/// Outputs `o` in `[0, n_out)` with `0 <= o*stride + offset - pad < n_in`.
fn valid_range(n_in: usize, n_out: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).div_ceil(stride);
    // o*stride + offset - pad <= n_in - 1
    let hi = if n_in + pad < offset + 1 {
        0
    } else {
        ((n_in - 1 + pad - offset) / stride + 1).min(n_out)
    };
    (lo.min(hi), hi)
}

/// Accumulates `weight * x[shifted]` into `out` for one tap of one channel plane.
#[inline]
fn accumulate_tap(out: &mut [f32], x: &[f32], g: &Geom, ky: usize, kx: usize, weight: f32) {
    let (r0, r1) = g.valid_rows(ky);
    let (c0, c1) = g.valid_cols(kx);
    if c0 >= c1 {
        return;
    }
    for oy in r0..r1 {
        let iy = oy * g.stride + ky * g.dilation - g.pad;
        let in_row = &x[iy * g.w..(iy + 1) * g.w];
        let out_row = &mut out[oy * g.ow..(oy + 1) * g.ow];
        let ix0 = c0 * g.stride + kx * g.dilation - g.pad;
        if g.stride == 1 {
            let src = &in_row[ix0..ix0 + (c1 - c0)];
            for (o, &v) in out_row[c0..c1].iter_mut().zip(src) {
                *o += weight * v;
            }
        } else {
            for (j, o) in out_row[c0..c1].iter_mut().enumerate() {
                *o += weight * in_row[ix0 + j * g.stride];
            }
        }
    }
}

/// Depthwise conv: `weights` is `[c][k][k]`; `out` is `[c][oh][ow]` and is overwritten.
pub fn depthwise(x: &[f32], c: usize, g: &Geom, weights: &[f32], out: &mut [f32]) {
    let (ip, op, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    out.fill(0.0);
    for ch in 0..c {
        let xp = &x[ch * ip..(ch + 1) * ip];
        let yp = &mut out[ch * op..(ch + 1) * op];
        for ky in 0..g.k {
            for kx in 0..g.k {
                accumulate_tap(yp, xp, g, ky, kx, weights[ch * kk + ky * g.k + kx]);
            }
        }
    }
}

/// Dense conv: `weights` is `[out_c][in_c][k][k]`.
pub fn dense(x: &[f32], in_c: usize, out_c: usize, g: &Geom, weights: &[f32], out: &mut [f32]) {
    let (ip, op, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    out.fill(0.0);
    for o in 0..out_c {
        let yp = &mut out[o * op..(o + 1) * op];
        for i in 0..in_c {
            let xp = &x[i * ip..(i + 1) * ip];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = weights[(o * in_c + i) * kk + ky * g.k + kx];
                    accumulate_tap(yp, xp, g, ky, kx, wv);
                }
            }
        }
    }
}

/// 1×1 conv at stride 1: `weights` is `[out_c][in_c]`, planes of `plane` pixels.
pub fn pointwise(x: &[f32], in_c: usize, out_c: usize, plane: usize, weights: &[f32], out: &mut [f32]) {
    out.fill(0.0);
    for o in 0..out_c {
        let yp = &mut out[o * plane..(o + 1) * plane];
        for i in 0..in_c {
            let wv = weights[o * in_c + i];
            let xp = &x[i * plane..(i + 1) * plane];
            for (y, &v) in yp.iter_mut().zip(xp) {
                *y += wv * v;
            }
        }
    }
}

/// Samples every second pixel starting at `(offset, offset)`; positions past
/// the edge read as zero. Output is `[c][ceil(h/2)][ceil(w/2)]`.
pub fn subsample2(x: &[f32], c: usize, h: usize, w: usize, offset: usize, out: &mut [f32]) {
    let (oh, ow) = (strided(h, 2), strided(w, 2));
    for ch in 0..c {
        for oy in 0..oh {
            let iy = 2 * oy + offset;
            for ox in 0..ow {
                let ix = 2 * ox + offset;
                out[(ch * oh + oy) * ow + ox] = if iy < h && ix < w {
                    x[(ch * h + iy) * w + ix]
                } else {
                    0.0
                };
            }
        }
    }
}

/// 3×3-style average pool; divides by the full window area, padding included.
pub fn avg_pool(x: &[f32], c: usize, g: &Geom, out: &mut [f32]) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let scale = 1.0 / (g.k * g.k) as f32;
    out.fill(0.0);
    for ch in 0..c {
        let xp = &x[ch * ip..(ch + 1) * ip];
        let yp = &mut out[ch * op..(ch + 1) * op];
        for ky in 0..g.k {
            for kx in 0..g.k {
                accumulate_tap(yp, xp, g, ky, kx, 1.0);
            }
        }
        yp.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Max pool; padded positions contribute zeros to the max.
pub fn max_pool(x: &[f32], c: usize, g: &Geom, out: &mut [f32]) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    for ch in 0..c {
        let xp = &x[ch * ip..(ch + 1) * ip];
        let yp = &mut out[ch * op..(ch + 1) * op];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        let v = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            xp[iy as usize * g.w + ix as usize]
                        } else {
                            0.0
                        };
                        m = m.max(v);
                    }
                }
                yp[oy * g.ow + ox] = m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of a single-channel correlation, for cross-checking.
    fn naive(x: &[f32], g: &Geom, w: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; g.oh * g.ow];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut s = 0.0;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            s += w[ky * g.k + kx] * x[iy as usize * g.w + ix as usize];
                        }
                    }
                }
                out[oy * g.ow + ox] = s;
            }
        }
        out
    }

    #[test]
    fn depthwise_matches_naive_over_geometries() {
        let mut r = crate::rng::rng(3);
        use rand::Rng;
        for &(h, w) in &[(8, 8), (7, 5), (1, 1), (2, 3)] {
            for &k in &[3, 5] {
                for &s in &[1, 2] {
                    for &d in &[1, 2] {
                        let g = Geom::new(h, w, k, s, d);
                        let x: Vec<f32> = (0..h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
                        let wt: Vec<f32> = (0..k * k).map(|_| r.gen_range(-1.0..1.0)).collect();
                        let mut out = vec![0.0; g.oh * g.ow];
                        depthwise(&x, 1, &g, &wt, &mut out);
                        let want = naive(&x, &g, &wt);
                        for (a, b) in out.iter().zip(&want) {
                            assert!((a - b).abs() < 1e-5, "{h}x{w} k{k} s{s} d{d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn max_pool_of_ones_is_ones() {
        let g = Geom::new(6, 6, 3, 1, 1);
        let x = vec![1.0; 36];
        let mut out = vec![0.0; 36];
        max_pool(&x, 1, &g, &mut out);
        assert!(out.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn max_pool_sees_zero_padding() {
        // all −1: corners and edges touch padding, interior does not
        let g = Geom::new(4, 4, 3, 1, 1);
        let x = vec![-1.0; 16];
        let mut out = vec![0.0; 16];
        max_pool(&x, 1, &g, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[5], -1.0);
    }

    #[test]
    fn avg_pool_counts_padding() {
        let g = Geom::new(4, 4, 3, 1, 1);
        let x = vec![1.0; 16];
        let mut out = vec![0.0; 16];
        avg_pool(&x, 1, &g, &mut out);
        assert!((out[0] - 4.0 / 9.0).abs() < 1e-6);
        assert!((out[1] - 6.0 / 9.0).abs() < 1e-6);
        assert!((out[5] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn subsample_offsets() {
        let x: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let mut out = vec![0.0; 4];
        subsample2(&x, 1, 3, 3, 0, &mut out);
        assert_eq!(out, vec![0.0, 2.0, 6.0, 8.0]);
        subsample2(&x, 1, 3, 3, 1, &mut out);
        assert_eq!(out, vec![4.0, 0.0, 0.0, 0.0]);
    }
}
