//! Topology-adaptive graph convolution layers and the multi-block
//! deformation network built from them.
//!
//! A layer computes `f(sum_k Ā^k X W_k + b)` for `k = 0..=K`, so its weights
//! do not depend on the number of vertices or their connectivity. Blocks
//! stack these layers with identity shortcuts and end in a coordinate branch
//! that predicts per-vertex displacements. Between blocks the mesh is refined
//! by midpoint unpooling.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mesh::{AdjacencyOperator, Normalization, TriangleMesh};
use crate::sparse::SparseMatrix;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hops: usize,
    pub channels: usize,
    pub layers_per_block: usize,
    pub blocks: usize,
    pub normalization: Normalization,
    /// Layer `i` (1-based) receives the output of layer `i - r` when
    /// `i > r` and `(i - 1) % r == 0`. Zero disables shortcuts.
    pub residual_every: usize,
    pub use_bias: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            channels: 192,
            layers_per_block: 14,
            blocks: 3,
            normalization: Normalization::Symmetric,
            residual_every: 2,
            use_bias: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.layers_per_block == 0 || self.blocks == 0 {
            return Err(Error::Config(
                "channels, layers_per_block and blocks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Hands out bound parameter tensors in declaration order.
struct Binder<'a> {
    tensors: &'a [Tensor],
    next: usize,
}

impl Binder<'_> {
    fn take(&mut self) -> Tensor {
        let t = self.tensors[self.next];
        self.next += 1;
        t
    }
}

/// One topology-adaptive convolution: `K + 1` weight matrices and an
/// optional bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct TagcnLayer {
    weights: Vec<Array2<f64>>,
    bias: Option<Array2<f64>>,
    activation: Activation,
}

impl TagcnLayer {
    /// Glorot-uniform weights over the stacked `(K + 1) * in x out` matrix,
    /// zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        hops: usize,
        use_bias: bool,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / ((hops + 1) * in_channels + out_channels) as f64).sqrt();
        let weights = (0..=hops)
            .map(|_| Array2::from_shape_fn((in_channels, out_channels), |_| rng.gen_range(-bound..bound)))
            .collect();
        Self {
            weights,
            bias: use_bias.then(|| Array2::zeros((1, out_channels))),
            activation,
        }
    }

    /// A layer whose weights are all zero.
    pub fn zeros(in_channels: usize, out_channels: usize, hops: usize, use_bias: bool, activation: Activation) -> Self {
        Self {
            weights: vec![Array2::zeros((in_channels, out_channels)); hops + 1],
            bias: use_bias.then(|| Array2::zeros((1, out_channels))),
            activation,
        }
    }

    pub fn from_weights(weights: Vec<Array2<f64>>, bias: Option<Array2<f64>>, activation: Activation) -> Result<Self> {
        let first = weights.first().ok_or(Error::EmptyInput("layer needs at least W0"))?;
        let shape = first.dim();
        if let Some(w) = weights.iter().find(|w| w.dim() != shape) {
            return Err(Error::Dimension {
                op: "TagcnLayer::from_weights",
                left: shape,
                right: w.dim(),
            });
        }
        if let Some(b) = &bias {
            if b.dim() != (1, shape.1) {
                return Err(Error::Dimension {
                    op: "TagcnLayer::from_weights",
                    left: (1, shape.1),
                    right: b.dim(),
                });
            }
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn hops(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn in_channels(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_channels(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    fn parameters(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn parameter_names(&self, prefix: &str) -> Vec<String> {
        let mut names: Vec<String> = (0..self.weights.len()).map(|k| format!("{prefix}.w{k}")).collect();
        if self.bias.is_some() {
            names.push(format!("{prefix}.bias"));
        }
        names
    }

    /// Records the layer's parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.parameters().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Forward pass with the layer's own weights recorded as constants.
    pub fn forward(&self, tape: &Tape, adj: &AdjacencyOperator, x: Tensor) -> Result<Tensor> {
        let bound: Vec<Tensor> = self.parameters().map(|p| tape.constant(p.clone())).collect();
        self.forward_bound(tape, adj, x, &bound)
    }

    /// Forward pass with externally bound parameters (see [`TagcnLayer::bind`]).
    pub fn forward_bound(&self, tape: &Tape, adj: &AdjacencyOperator, x: Tensor, params: &[Tensor]) -> Result<Tensor> {
        self.forward_with(tape, adj, x, &mut Binder { tensors: params, next: 0 })
    }

    fn forward_with(&self, tape: &Tape, adj: &AdjacencyOperator, x: Tensor, params: &mut Binder<'_>) -> Result<Tensor> {
        if x.rows() != adj.vertex_count() {
            return Err(Error::Dimension {
                op: "tagcn_forward (vertices)",
                left: x.shape(),
                right: (adj.vertex_count(), adj.vertex_count()),
            });
        }
        if x.cols() != self.in_channels() {
            return Err(Error::Dimension {
                op: "tagcn_forward (channels)",
                left: x.shape(),
                right: self.weights[0].dim(),
            });
        }
        if adj.hops() < self.hops() {
            return Err(Error::Config(format!(
                "layer needs {} hops, adjacency has {}",
                self.hops(),
                adj.hops()
            )));
        }
        let w0 = params.take();
        let mut acc = tape.matmul(x, w0)?;
        for k in 1..=self.hops() {
            let wk = params.take();
            let propagated = tape.sparse_matmul(adj.power(k), x)?;
            acc = tape.add(acc, tape.matmul(propagated, wk)?)?;
        }
        if self.bias.is_some() {
            let b = params.take();
            let ones = tape.constant(Array2::ones((x.rows(), 1)));
            acc = tape.add(acc, tape.matmul(ones, b)?)?;
        }
        Ok(tape.activate(self.activation, acc))
    }
}

/// A stack of graph convolutions with identity shortcuts and a coordinate
/// branch predicting vertex displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationBlock {
    layers: Vec<TagcnLayer>,
    coordinate_branch: TagcnLayer,
    residual_every: usize,
}

impl DeformationBlock {
    /// Hidden layers get Glorot weights; the coordinate branch starts at zero
    /// so a fresh block leaves vertices where they are.
    pub fn new(input_width: usize, config: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let c = config.channels;
        let layers = (0..config.layers_per_block)
            .map(|i| {
                let width = if i == 0 { input_width } else { c };
                TagcnLayer::new(width, c, config.hops, config.use_bias, Activation::Relu, rng)
            })
            .collect();
        Self {
            layers,
            coordinate_branch: TagcnLayer::zeros(c, 3, config.hops, config.use_bias, Activation::Identity),
            residual_every: config.residual_every,
        }
    }

    pub fn from_layers(layers: Vec<TagcnLayer>, coordinate_branch: TagcnLayer, residual_every: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("block needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::Dimension {
                    op: "DeformationBlock::from_layers",
                    left: pair[0].weights[0].dim(),
                    right: pair[1].weights[0].dim(),
                });
            }
        }
        let last = layers.last().expect("non-empty").out_channels();
        if coordinate_branch.in_channels() != last || coordinate_branch.out_channels() != 3 {
            return Err(Error::Dimension {
                op: "DeformationBlock::from_layers (coordinate branch)",
                left: (last, 3),
                right: coordinate_branch.weights[0].dim(),
            });
        }
        Ok(Self {
            layers,
            coordinate_branch,
            residual_every,
        })
    }

    pub fn layers(&self) -> &[TagcnLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").out_channels()
    }

    fn all_layers(&self) -> impl Iterator<Item = &TagcnLayer> {
        self.layers.iter().chain(std::iter::once(&self.coordinate_branch))
    }

    fn all_layers_mut(&mut self) -> impl Iterator<Item = &mut TagcnLayer> {
        self.layers.iter_mut().chain(std::iter::once(&mut self.coordinate_branch))
    }

    fn parameter_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            names.extend(layer.parameter_names(&format!("{prefix}.layer{}", i + 1)));
        }
        names.extend(self.coordinate_branch.parameter_names(&format!("{prefix}.coord")));
        names
    }

    /// Forward pass with weights recorded as constants.
    pub fn forward(
        &self,
        tape: &Tape,
        adj: &AdjacencyOperator,
        vertices: Tensor,
        features: Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let bound: Vec<Tensor> = self
            .all_layers()
            .flat_map(|l| l.parameters())
            .map(|p| tape.constant(p.clone()))
            .collect();
        self.forward_with(tape, adj, vertices, features, &mut Binder { tensors: &bound, next: 0 })
    }

    fn forward_with(
        &self,
        tape: &Tape,
        adj: &AdjacencyOperator,
        vertices: Tensor,
        features: Tensor,
        params: &mut Binder<'_>,
    ) -> Result<(Tensor, Tensor)> {
        if vertices.shape() != (adj.vertex_count(), 3) {
            return Err(Error::Dimension {
                op: "block_forward (vertices)",
                left: vertices.shape(),
                right: (adj.vertex_count(), 3),
            });
        }
        let r = self.residual_every;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { features } else { outputs[i - 1] };
            let mut out = layer.forward_with(tape, adj, input, params)?;
            let number = i + 1;
            if r > 0 && number > r && (number - 1) % r == 0 {
                out = tape.add(out, outputs[i - r])?;
            }
            outputs.push(out);
        }
        let last = *outputs.last().expect("block has layers");
        let displacement = self.coordinate_branch.forward_with(tape, adj, last, params)?;
        let predicted = tape.add(vertices, displacement)?;
        Ok((predicted, last))
    }
}

/// Midpoint unpooling of a mesh and its per-vertex features: one new vertex
/// per edge, each face split in four, new features the mean of the edge's
/// endpoint features.
pub fn graph_unpool(tape: &Tape, mesh: &TriangleMesh, features: Tensor) -> Result<(TriangleMesh, Tensor)> {
    let sub = mesh.subdivide();
    let op = Arc::new(sub.operator);
    let out = tape.sparse_matmul(&op, features)?;
    Ok((sub.mesh, out))
}

/// Connectivity-dependent operators for one block, reusable across forwards
/// as long as the input topology is unchanged.
#[derive(Debug, Clone)]
pub struct Stage {
    /// Topology of the block (positions are those of the block's nominal input).
    pub mesh: TriangleMesh,
    pub adjacency: AdjacencyOperator,
    pub laplacian: Arc<SparseMatrix>,
    pub edge_difference: Arc<SparseMatrix>,
    /// Maps this stage's vertices to the next stage's; `None` for the last.
    pub unpool: Option<Arc<SparseMatrix>>,
}

/// Precomputed stages for a given initial mesh.
#[derive(Debug, Clone)]
pub struct ForwardPlan {
    pub stages: Vec<Stage>,
}

impl ForwardPlan {
    pub fn new(initial: &TriangleMesh, config: &NetworkConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(config.blocks);
        let mut mesh = initial.clone();
        for b in 0..config.blocks {
            let adjacency = AdjacencyOperator::build(&mesh, config.hops, config.normalization)?;
            let laplacian = Arc::new(mesh.laplacian_operator());
            let edge_difference = Arc::new(mesh.edge_difference_operator());
            let (next, unpool) = if b + 1 < config.blocks {
                let sub = mesh.subdivide();
                (Some(sub.mesh), Some(Arc::new(sub.operator)))
            } else {
                (None, None)
            };
            stages.push(Stage {
                mesh: mesh.clone(),
                adjacency,
                laplacian,
                edge_difference,
                unpool,
            });
            if let Some(next) = next {
                mesh = next;
            }
        }
        Ok(Self { stages })
    }
}

/// Per-block tensors recorded by [`DeformationNetwork::forward`].
#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    /// Vertex positions fed into the block.
    pub input: Tensor,
    /// Vertex positions predicted by the block.
    pub predicted: Tensor,
}

#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub blocks: Vec<BlockOutput>,
}

impl NetworkOutput {
    /// Predicted mesh of every block.
    pub fn meshes(&self, tape: &Tape, plan: &ForwardPlan) -> Result<Vec<TriangleMesh>> {
        self.blocks
            .iter()
            .zip(&plan.stages)
            .map(|(b, stage)| stage.mesh.with_vertex_matrix(&tape.value(b.predicted)))
            .collect()
    }
}

/// The full network: `blocks` deformation blocks separated by unpooling.
///
/// Block 1 sees raw vertex coordinates as features. Later blocks see the
/// unpooled hidden features of the previous block concatenated with the
/// unpooled predicted coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationNetwork {
    config: NetworkConfig,
    blocks: Vec<DeformationBlock>,
}

impl DeformationNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let blocks = (0..config.blocks)
            .map(|b| {
                let width = if b == 0 { 3 } else { config.channels + 3 };
                DeformationBlock::new(width, &config, &mut rng)
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[DeformationBlock] {
        &self.blocks
    }

    /// Sets every weight and bias to zero: the identity deformation.
    pub fn zero(&mut self) {
        for p in self.parameters_mut() {
            p.fill(0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(|p| p.len()).sum()
    }

    /// Parameters in a fixed order shared by binding, optimizers and checkpoints.
    pub fn parameters(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.blocks
            .iter()
            .flat_map(|b| b.all_layers())
            .flat_map(|l| l.parameters())
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.all_layers_mut())
            .flat_map(|l| l.parameters_mut())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.parameter_names(&format!("block{}", i + 1)))
            .collect()
    }

    /// Records all parameters as trainable leaves, in [`Self::parameters`] order.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.parameters().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records all parameters as constants (evaluation only).
    pub fn bind_constant(&self, tape: &Tape) -> Vec<Tensor> {
        self.parameters().map(|p| tape.constant(p.clone())).collect()
    }

    pub fn plan(&self, initial: &TriangleMesh) -> Result<ForwardPlan> {
        ForwardPlan::new(initial, &self.config)
    }

    /// Runs all blocks on `initial`, whose topology must match `plan`.
    pub fn forward(
        &self,
        tape: &Tape,
        params: &[Tensor],
        plan: &ForwardPlan,
        initial: &TriangleMesh,
    ) -> Result<NetworkOutput> {
        if plan.stages.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "plan has {} stages for {} blocks",
                plan.stages.len(),
                self.blocks.len()
            )));
        }
        if initial.vertex_count() != plan.stages[0].adjacency.vertex_count() {
            return Err(Error::InvalidMesh("initial mesh does not match the forward plan".into()));
        }
        let mut binder = Binder { tensors: params, next: 0 };
        let mut vertices = tape.constant(initial.vertex_matrix());
        let mut features = vertices;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for (block, stage) in self.blocks.iter().zip(&plan.stages) {
            let (predicted, hidden) = block.forward_with(tape, &stage.adjacency, vertices, features, &mut binder)?;
            outputs.push(BlockOutput {
                input: vertices,
                predicted,
            });
            if let Some(unpool) = &stage.unpool {
                vertices = tape.sparse_matmul(unpool, predicted)?;
                let hidden = tape.sparse_matmul(unpool, hidden)?;
                features = tape.concat_cols(&[hidden, vertices])?;
            }
        }
        Ok(NetworkOutput { blocks: outputs })
    }

    /// Convenience: evaluation-only forward returning the predicted meshes.
    pub fn deform(&self, initial: &TriangleMesh) -> Result<Vec<TriangleMesh>> {
        let plan = self.plan(initial)?;
        let tape = Tape::new();
        let params = self.bind_constant(&tape);
        let out = self.forward(&tape, &params, &plan, initial)?;
        out.meshes(&tape, &plan)
    }

    // -- checkpoints ------------------------------------------------------

    /// Writes `STDN0001`, a one-line JSON header, then every parameter as
    /// little-endian `f64` in header order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            parameters: self
                .parameter_names()
                .into_iter()
                .zip(self.parameters())
                .map(|(name, p)| ParameterEntry {
                    name,
                    shape: [p.nrows(), p.ncols()],
                })
                .collect(),
        };
        w.write_all(CHECKPOINT_MAGIC)?;
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.parameter_count() * 8);
        for p in self.parameters() {
            for x in p.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| Error::Checkpoint("missing STDN0001 magic".into()))?;
        let newline = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unterminated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&rest[..newline])?;
        let data = &rest[newline + 1..];

        let mut net = DeformationNetwork::new(header.config.clone())?;
        let names = net.parameter_names();
        if names.len() != header.parameters.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, header lists {}",
                names.len(),
                header.parameters.len()
            )));
        }
        let mut offset = 0;
        for ((expected, entry), p) in names.iter().zip(&header.parameters).zip(net.parameters_mut()) {
            if *expected != entry.name || [p.nrows(), p.ncols()] != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    entry.name,
                    entry.shape,
                    expected,
                    p.dim()
                )));
            }
            let len = p.len() * 8;
            let chunk = data
                .get(offset..offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", entry.name)))?;
            for (x, b) in p.iter_mut().zip(chunk.chunks_exact(8)) {
                *x = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
            }
            offset += len;
        }
        if offset != data.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameters",
                data.len() - offset
            )));
        }
        Ok(net)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STDN0001";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: NetworkConfig,
    parameters: Vec<ParameterEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParameterEntry {
    name: String,
    shape: [usize; 2],
}
