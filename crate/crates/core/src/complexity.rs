//! Analytic FLOPs and parameter counts for a [`NetworkPlan`].
//!
//! One multiply-add counts as one FLOP. Costs per primitive, with `oh × ow`
//! the output resolution:
//!
//! | primitive        | FLOPs                          | params           |
//! |------------------|--------------------------------|------------------|
//! | dense k×k conv   | `oh·ow·out_c·in_c·k²`          | `out_c·in_c·k²`  |
//! | depthwise k×k    | `oh·ow·c·k²`                   | `c·k²`           |
//! | pointwise 1×1    | `oh·ow·out_c·in_c`             | `out_c·in_c`     |
//! | k×k pool         | `oh·ow·c·k²`                   | 0                |
//! | normalization    | `2·c·oh·ow`                    | 0                |
//! | linear head      | `feature_dim·num_classes`      | `fd·nc + nc`     |
//!
//! Identity, ReLU, node sums, concatenation and global pooling are free.

use serde::{Deserialize, Serialize};

use crate::search_space::{factorized_split, CellPlan, NetworkPlan, OpPlan, Preprocess, Shape3};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub flops: u64,
    pub params: u64,
    /// (channels, height, width) of the primitive's output.
    pub output_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub flops: u64,
    pub params: u64,
    pub per_layer: Vec<LayerCost>,
}

struct Tally(Vec<LayerCost>);

impl Tally {
    fn push(&mut self, layer: String, flops: usize, params: usize, out: Shape3) {
        self.0.push(LayerCost {
            layer,
            flops: flops as u64,
            params: params as u64,
            output_shape: [out.c, out.h, out.w],
        });
    }

    fn norm(&mut self, prefix: &str, out: Shape3) {
        self.push(format!("{prefix}.norm"), 2 * out.numel(), 0, out);
    }

    fn factorized(&mut self, prefix: &str, in_c: usize, out: Shape3) {
        let (a, b) = factorized_split(out.c);
        let plane = out.h * out.w;
        self.push(
            format!("{prefix}.reduce_a"),
            plane * a * in_c,
            a * in_c,
            Shape3::new(a, out.h, out.w),
        );
        self.push(
            format!("{prefix}.reduce_b"),
            plane * b * in_c,
            b * in_c,
            Shape3::new(b, out.h, out.w),
        );
        self.norm(prefix, out);
    }

    fn preprocess(&mut self, prefix: &str, p: &Preprocess, cell: &CellPlan) {
        let out = Shape3::new(p.out_channels(), cell.in_hw.0, cell.in_hw.1);
        match *p {
            Preprocess::Conv1x1 { in_c, out_c } => {
                self.push(
                    format!("{prefix}.conv"),
                    out.h * out.w * out_c * in_c,
                    out_c * in_c,
                    out,
                );
                self.norm(prefix, out);
            }
            Preprocess::FactorizedReduce { in_c, .. } => self.factorized(prefix, in_c, out),
        }
    }

    fn op(&mut self, prefix: &str, op: &OpPlan) {
        let c = op.channels;
        let out = Shape3::new(c, op.out_h(), op.out_w());
        let plane = out.h * out.w;
        let kk = op.op.kernel() * op.op.kernel();
        if op.is_factorized_identity() {
            self.factorized(prefix, c, out);
        } else if op.op.is_conv() {
            self.push(format!("{prefix}.depthwise"), plane * c * kk, c * kk, out);
            self.push(format!("{prefix}.pointwise"), plane * c * c, c * c, out);
            self.norm(prefix, out);
        } else if op.op.is_pool() {
            self.push(format!("{prefix}.pool"), plane * c * kk, 0, out);
        }
    }
}

/// Per-primitive FLOPs and parameters of the whole network including the head.
pub fn count_flops(plan: &NetworkPlan) -> ComplexityReport {
    let mut t = Tally(Vec::new());
    let s = plan.stem_out;
    t.push(
        "stem.conv".into(),
        s.h * s.w * s.c * plan.input.c * 9,
        s.c * plan.input.c * 9,
        s,
    );
    t.norm("stem", s);

    for (i, cell) in plan.cells.iter().enumerate() {
        let id = format!("cell{}", i + 1);
        t.preprocess(&format!("{id}.pre0"), &cell.preprocess[0], cell);
        t.preprocess(&format!("{id}.pre1"), &cell.preprocess[1], cell);
        for (k, node) in cell.nodes.iter().enumerate() {
            for (side, op) in ["a", "b"].iter().zip(&node.ops) {
                t.op(&format!("{id}.node{}.{side}", k + 2), op);
            }
        }
    }

    let (fd, nc) = (plan.feature_dim, plan.num_classes);
    t.push("head".into(), fd * nc, fd * nc + nc, Shape3::new(nc, 1, 1));

    let flops = t.0.iter().map(|l| l.flops).sum();
    let params = t.0.iter().map(|l| l.params).sum();
    ComplexityReport {
        flops,
        params,
        per_layer: t.0,
    }
}

/// Weight count of the backbone plus the affine head.
pub fn count_params(plan: &NetworkPlan) -> u64 {
    count_flops(plan).params
}
