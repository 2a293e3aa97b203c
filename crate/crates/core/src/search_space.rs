//! Genome encoding of the normal/reduction cell pair and its decoding into a
//! channel- and stride-resolved [`NetworkPlan`].
//!
//! Layout of the 40-integer vector: 20 genes for the normal cell followed by
//! 20 for the reduction cell. Each cell lists nodes 2..=6 in order, and each
//! node contributes `(input_a, op_a, input_b, op_b)`. Nodes 0 and 1 are the
//! two cell inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const GENOME_LEN: usize = 40;
pub const NODES_PER_CELL: usize = 5;
pub const GENES_PER_NODE: usize = 4;
pub const GENES_PER_CELL: usize = NODES_PER_CELL * GENES_PER_NODE;
/// Index of the first computed node; 0 and 1 are the cell inputs.
pub const FIRST_NODE: usize = 2;
pub const MAX_OP_CODE: u8 = 6;

/// Candidate operation applied to one node input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpCode {
    Identity = 0,
    SepConv3x3 = 1,
    SepConv5x5 = 2,
    DilConv3x3 = 3,
    DilConv5x5 = 4,
    AvgPool3x3 = 5,
    MaxPool3x3 = 6,
}

impl OpCode {
    pub const ALL: [OpCode; 7] = [
        OpCode::Identity,
        OpCode::SepConv3x3,
        OpCode::SepConv5x5,
        OpCode::DilConv3x3,
        OpCode::DilConv5x5,
        OpCode::AvgPool3x3,
        OpCode::MaxPool3x3,
    ];

    pub fn from_code(code: u8) -> Option<OpCode> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Spatial kernel size (1 for identity).
    pub fn kernel(self) -> usize {
        match self {
            OpCode::Identity => 1,
            OpCode::SepConv3x3 | OpCode::DilConv3x3 | OpCode::AvgPool3x3 | OpCode::MaxPool3x3 => 3,
            OpCode::SepConv5x5 | OpCode::DilConv5x5 => 5,
        }
    }

    pub fn dilation(self) -> usize {
        match self {
            OpCode::DilConv3x3 | OpCode::DilConv5x5 => 2,
            _ => 1,
        }
    }

    /// Depthwise + pointwise convolution ops.
    pub fn is_conv(self) -> bool {
        matches!(
            self,
            OpCode::SepConv3x3 | OpCode::SepConv5x5 | OpCode::DilConv3x3 | OpCode::DilConv5x5
        )
    }

    pub fn is_pool(self) -> bool {
        matches!(self, OpCode::AvgPool3x3 | OpCode::MaxPool3x3)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpCode::Identity => "identity",
            OpCode::SepConv3x3 => "sep_conv_3x3",
            OpCode::SepConv5x5 => "sep_conv_5x5",
            OpCode::DilConv3x3 => "dil_conv_3x3",
            OpCode::DilConv5x5 => "dil_conv_5x5",
            OpCode::AvgPool3x3 => "avg_pool_3x3",
            OpCode::MaxPool3x3 => "max_pool_3x3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeGene {
    pub input_a: u8,
    pub op_a: OpCode,
    pub input_b: u8,
    pub op_b: OpCode,
}

impl NodeGene {
    pub const IDENTITY: NodeGene = NodeGene {
        input_a: 0,
        op_a: OpCode::Identity,
        input_b: 0,
        op_b: OpCode::Identity,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellGenome {
    /// Nodes 2..=6 in order.
    pub nodes: [NodeGene; NODES_PER_CELL],
}

impl CellGenome {
    /// Computed nodes (2..=6) that no later node consumes; these are
    /// concatenated into the cell output.
    pub fn unused_nodes(&self) -> Vec<usize> {
        let mut used = [false; FIRST_NODE + NODES_PER_CELL];
        for n in &self.nodes {
            used[usize::from(n.input_a)] = true;
            used[usize::from(n.input_b)] = true;
        }
        (FIRST_NODE..FIRST_NODE + NODES_PER_CELL)
            .filter(|&j| !used[j])
            .collect()
    }
}

/// A normal cell and a reduction cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome {
    pub normal: CellGenome,
    pub reduction: CellGenome,
}

/// Inclusive upper bound of the gene at `position` in the flat vector.
pub fn gene_bound(position: usize) -> u8 {
    let within_cell = position % GENES_PER_CELL;
    let node = FIRST_NODE + within_cell / GENES_PER_NODE;
    if within_cell.is_multiple_of(2) {
        (node - 1) as u8
    } else {
        MAX_OP_CODE
    }
}

impl Genome {
    pub fn all_identity() -> Genome {
        let cell = CellGenome {
            nodes: [NodeGene::IDENTITY; NODES_PER_CELL],
        };
        Genome {
            normal: cell,
            reduction: cell,
        }
    }

    pub fn flatten(&self) -> [u8; GENOME_LEN] {
        let mut out = [0u8; GENOME_LEN];
        for (c, cell) in [&self.normal, &self.reduction].into_iter().enumerate() {
            for (n, node) in cell.nodes.iter().enumerate() {
                let base = c * GENES_PER_CELL + n * GENES_PER_NODE;
                out[base] = node.input_a;
                out[base + 1] = node.op_a.code();
                out[base + 2] = node.input_b;
                out[base + 3] = node.op_b.code();
            }
        }
        out
    }

    /// Parses a flat gene vector, checking every positional bound.
    pub fn parse(genes: &[i64]) -> Result<Genome> {
        if genes.len() != GENOME_LEN {
            return Err(Error::InvalidLength(genes.len()));
        }
        let mut checked = [0u8; GENOME_LEN];
        for (position, (&value, slot)) in genes.iter().zip(checked.iter_mut()).enumerate() {
            let bound = gene_bound(position);
            if value < 0 || value > i64::from(bound) {
                return Err(Error::OutOfBounds { position, value, bound });
            }
            *slot = value as u8;
        }
        Ok(Self::from_checked(&checked))
    }

    /// Same as [`Genome::parse`] for an already byte-sized vector.
    pub fn from_genes(genes: &[u8]) -> Result<Genome> {
        let wide: Vec<i64> = genes.iter().map(|&g| i64::from(g)).collect();
        Self::parse(&wide)
    }

    fn from_checked(genes: &[u8; GENOME_LEN]) -> Genome {
        let cell = |c: usize| {
            let mut nodes = [NodeGene::IDENTITY; NODES_PER_CELL];
            for (n, node) in nodes.iter_mut().enumerate() {
                let g = &genes[c * GENES_PER_CELL + n * GENES_PER_NODE..][..GENES_PER_NODE];
                *node = NodeGene {
                    input_a: g[0],
                    op_a: OpCode::from_code(g[1]).expect("bound-checked"),
                    input_b: g[2],
                    op_b: OpCode::from_code(g[3]).expect("bound-checked"),
                };
            }
            CellGenome { nodes }
        };
        Genome {
            normal: cell(0),
            reduction: cell(1),
        }
    }

    /// Each gene uniform over its positional range.
    pub fn random(rng: &mut impl rand::Rng) -> Genome {
        let mut genes = [0u8; GENOME_LEN];
        for (p, g) in genes.iter_mut().enumerate() {
            *g = rng.gen_range(0..=gene_bound(p));
        }
        Self::from_checked(&genes)
    }

    /// Stable content hash used to key per-genome random streams.
    pub fn content_hash(&self) -> u64 {
        rng::fnv1a(self.flatten())
    }
}

/// Deterministic random genome for `seed`.
pub fn random_genome(seed: u64) -> Genome {
    Genome::random(&mut rng::rng(seed))
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.flatten().iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl FromStr for Genome {
    type Err = Error;

    /// Whitespace-separated decimal integers.
    fn from_str(s: &str) -> Result<Genome> {
        let genes = s
            .split_whitespace()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| Error::GenomeSyntax(format!("not an integer: {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Genome::parse(&genes)
    }
}

impl Serialize for Genome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Macro skeleton: how many cells, how wide, where the reductions go.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub num_layers: usize,
    pub init_channels: usize,
    /// 1-based layer indices of reduction cells.
    pub reduction_positions: Vec<usize>,
    pub num_classes: usize,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            num_layers: 5,
            init_channels: 10,
            reduction_positions: vec![2, 4],
            num_classes: 10,
            input_shape: (3, 32, 32),
        }
    }
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidMacro(m.to_string()));
        if self.num_layers == 0 {
            return bad("num_layers must be positive");
        }
        if self.init_channels == 0 {
            return bad("init_channels must be positive");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return bad("input dimensions must be positive");
        }
        for &p in &self.reduction_positions {
            if p == 0 || p > self.num_layers {
                return Err(Error::InvalidMacro(format!(
                    "reduction position {p} outside 1..={}",
                    self.num_layers
                )));
            }
        }
        Ok(())
    }

    pub fn is_reduction(&self, layer: usize) -> bool {
        self.reduction_positions.contains(&layer)
    }
}

/// Channel/height/width of a single image-shaped activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape3 { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Output extent of a same-padded window op.
pub fn strided(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Normal,
    Reduction,
}

/// Channel alignment applied to a cell input before the nodes see it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preprocess {
    /// ReLU → 1×1 conv → normalization.
    Conv1x1 { in_c: usize, out_c: usize },
    /// ReLU → two offset stride-2 1×1 convs, concatenated → normalization.
    FactorizedReduce { in_c: usize, out_c: usize },
}

impl Preprocess {
    pub fn out_channels(&self) -> usize {
        match *self {
            Preprocess::Conv1x1 { out_c, .. } | Preprocess::FactorizedReduce { out_c, .. } => out_c,
        }
    }
}

/// Split of a factorized-reduce output between its two branches.
pub fn factorized_split(out_c: usize) -> (usize, usize) {
    (out_c / 2, out_c - out_c / 2)
}

/// One resolved operation on a node input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpPlan {
    pub op: OpCode,
    pub stride: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl OpPlan {
    pub fn out_h(&self) -> usize {
        strided(self.in_h, self.stride)
    }

    pub fn out_w(&self) -> usize {
        strided(self.in_w, self.stride)
    }

    /// Identity at stride 2 is realized as a factorized reduce.
    pub fn is_factorized_identity(&self) -> bool {
        self.op == OpCode::Identity && self.stride == 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePlan {
    pub inputs: [usize; 2],
    pub ops: [OpPlan; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPlan {
    pub kind: CellKind,
    /// Shapes of the two incoming tensors (cell k−2 and cell k−1).
    pub input_shapes: [Shape3; 2],
    pub preprocess: [Preprocess; 2],
    pub node_width: usize,
    /// Resolution of the preprocessed inputs (nodes 0 and 1).
    pub in_hw: (usize, usize),
    /// Resolution of the computed nodes and the cell output.
    pub out_hw: (usize, usize),
    pub nodes: Vec<NodePlan>,
    /// Node indices concatenated into the output, ascending.
    pub concat: Vec<usize>,
}

impl CellPlan {
    pub fn out_shape(&self) -> Shape3 {
        Shape3::new(self.concat.len() * self.node_width, self.out_hw.0, self.out_hw.1)
    }
}

/// Decoded network: stem → cells → global average pool → linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub input: Shape3,
    /// Stem is a single 3×3 conv followed by normalization.
    pub stem_out: Shape3,
    pub cells: Vec<CellPlan>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// Decodes `genome` under `macro_cfg` into an executable plan.
pub fn decode(genome: &Genome, macro_cfg: &MacroConfig) -> Result<NetworkPlan> {
    macro_cfg.validate()?;
    let (in_c, h, w) = macro_cfg.input_shape;
    let input = Shape3::new(in_c, h, w);
    let stem_out = Shape3::new(macro_cfg.init_channels, h, w);

    let mut prev_prev = stem_out;
    let mut prev = stem_out;
    let mut width = macro_cfg.init_channels;
    let mut cells = Vec::with_capacity(macro_cfg.num_layers);

    for layer in 1..=macro_cfg.num_layers {
        let reduction = macro_cfg.is_reduction(layer);
        let (kind, cell) = if reduction {
            (CellKind::Reduction, &genome.reduction)
        } else {
            (CellKind::Normal, &genome.normal)
        };
        if reduction {
            if prev.h < 2 || prev.w < 2 {
                return Err(Error::DegenerateResolution {
                    layer,
                    height: prev.h,
                    width: prev.w,
                });
            }
            width *= 2;
        }

        let in_hw = (prev.h, prev.w);
        let pre0 = if (prev_prev.h, prev_prev.w) == in_hw {
            Preprocess::Conv1x1 {
                in_c: prev_prev.c,
                out_c: width,
            }
        } else if (strided(prev_prev.h, 2), strided(prev_prev.w, 2)) == in_hw {
            Preprocess::FactorizedReduce {
                in_c: prev_prev.c,
                out_c: width,
            }
        } else {
            return Err(Error::InvalidMacro(format!(
                "layer {layer}: cannot align {}x{} input to {}x{}",
                prev_prev.h, prev_prev.w, in_hw.0, in_hw.1
            )));
        };
        let pre1 = Preprocess::Conv1x1 {
            in_c: prev.c,
            out_c: width,
        };
        let out_hw = if reduction {
            (strided(in_hw.0, 2), strided(in_hw.1, 2))
        } else {
            in_hw
        };

        let nodes = cell
            .nodes
            .iter()
            .map(|g| {
                let resolve = |input: u8, op: OpCode| {
                    let from_cell_input = input < FIRST_NODE as u8;
                    let stride = if reduction && from_cell_input { 2 } else { 1 };
                    let (ih, iw) = if from_cell_input { in_hw } else { out_hw };
                    OpPlan {
                        op,
                        stride,
                        channels: width,
                        in_h: ih,
                        in_w: iw,
                    }
                };
                NodePlan {
                    inputs: [usize::from(g.input_a), usize::from(g.input_b)],
                    ops: [resolve(g.input_a, g.op_a), resolve(g.input_b, g.op_b)],
                }
            })
            .collect();

        let plan = CellPlan {
            kind,
            input_shapes: [prev_prev, prev],
            preprocess: [pre0, pre1],
            node_width: width,
            in_hw,
            out_hw,
            nodes,
            concat: cell.unused_nodes(),
        };
        prev_prev = prev;
        prev = plan.out_shape();
        cells.push(plan);
    }

    Ok(NetworkPlan {
        input,
        stem_out,
        cells,
        feature_dim: prev.c,
        num_classes: macro_cfg.num_classes,
    })
}
