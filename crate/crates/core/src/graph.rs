//! Layered computation graph with per-node state, prediction and error buffers.
//!
//! State nodes sit at the input, after every trainable edge and at the output.
//! A trainable edge is one `Conv2D` or `Dense` layer together with its
//! activation; a `MaxPool` directly after a convolution is fused into that
//! convolution's edge, and a `Flatten` is fused into the dense edge after it.
//!
//! The free energy is `F = ½ Σ_i ‖ε_i‖²` with `ε_i = v_i − v̂_i`. Predictions
//! `v̂` come from one feedforward pass and stay frozen while the states `v`
//! relax; the edge Jacobians (ReLU masks, pool winners) are frozen at that
//! same pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, PoolIndex, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2D { out_channels: usize, kernel: usize },
    MaxPool { size: usize },
    Flatten,
    Dense { out_features: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv2d(out_channels: usize, kernel: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2D {
                out_channels,
                kernel,
            },
            activation,
        }
    }

    pub fn maxpool(size: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool { size },
            activation: Activation::Linear,
        }
    }

    pub fn flatten() -> Self {
        LayerSpec {
            kind: LayerKind::Flatten,
            activation: Activation::Linear,
        }
    }

    pub fn dense(out_features: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { out_features },
            activation,
        }
    }
}

/// Input shape plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>) -> Self {
        Architecture {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// 1×128×128 input, Conv(124, k=5)+ReLU, MaxPool(2), Flatten,
    /// Dense(200)+ReLU, Dense(128) linear, Dense(20) linear.
    pub fn full_size() -> Self {
        Architecture::conv_net(&[1, 128, 128], 124, 5, 200, 128, 20)
    }

    /// The same layer pattern as [`Architecture::full_size`] with free sizes.
    pub fn conv_net(
        input_shape: &[usize],
        filters: usize,
        kernel: usize,
        hidden: usize,
        penultimate: usize,
        classes: usize,
    ) -> Self {
        use Activation::*;
        Architecture::new(
            input_shape,
            vec![
                LayerSpec::conv2d(filters, kernel, Relu),
                LayerSpec::maxpool(2),
                LayerSpec::flatten(),
                LayerSpec::dense(hidden, Relu),
                LayerSpec::dense(penultimate, Linear),
                LayerSpec::dense(classes, Linear),
            ],
        )
    }

    /// Fully connected chain `sizes[0] → sizes[1] → …`, `activation` on every
    /// edge except the last, which is linear.
    pub fn mlp(sizes: &[usize], activation: Activation) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (1..sizes.len())
            .map(|i| {
                let act = if i == n { Activation::Linear } else { activation };
                LayerSpec::dense(sizes[i], act)
            })
            .collect();
        Architecture::new(&sizes[..1.min(sizes.len())], layers)
    }

    /// Resolves the layer list into trainable edges, validating shapes.
    pub fn compile(&self) -> Result<Vec<Edge>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Build {
                layer: 0,
                detail: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        let mut edges: Vec<Edge> = Vec::new();
        let mut shape = self.input_shape.clone();
        let mut pending_flatten = false;
        // whether the most recent layer was an unpooled convolution
        let mut poolable = false;
        for (li, spec) in self.layers.iter().enumerate() {
            let fail = |detail: String| Error::Build { layer: li, detail };
            match spec.kind {
                LayerKind::Conv2D {
                    out_channels,
                    kernel,
                } => {
                    if pending_flatten {
                        return Err(fail("Conv2D cannot follow Flatten".into()));
                    }
                    if shape.len() != 3 {
                        return Err(fail(format!("Conv2D needs a [C,H,W] input, got {shape:?}")));
                    }
                    if out_channels == 0 {
                        return Err(fail("Conv2D with zero filters".into()));
                    }
                    let (oh, ow) = tensor::conv_output_hw(shape[1], shape[2], kernel)
                        .ok_or_else(|| {
                            fail(format!("kernel {kernel} does not fit input {shape:?}"))
                        })?;
                    let out = vec![out_channels, oh, ow];
                    edges.push(Edge {
                        op: EdgeOp::Conv { kernel },
                        activation: spec.activation,
                        pool: None,
                        in_shape: shape.clone(),
                        pre_shape: out.clone(),
                        out_shape: out.clone(),
                    });
                    shape = out;
                    poolable = true;
                }
                LayerKind::MaxPool { size } => {
                    if spec.activation != Activation::Linear {
                        return Err(fail("MaxPool carries no activation".into()));
                    }
                    if !poolable {
                        return Err(fail("MaxPool must directly follow a Conv2D".into()));
                    }
                    if size == 0 || !shape[1].is_multiple_of(size) || !shape[2].is_multiple_of(size) {
                        return Err(fail(format!(
                            "pool size {size} does not divide spatial dims of {shape:?}"
                        )));
                    }
                    let edge = edges.last_mut().expect("poolable implies an edge");
                    shape = vec![shape[0], shape[1] / size, shape[2] / size];
                    edge.pool = Some(size);
                    edge.out_shape = shape.clone();
                    poolable = false;
                }
                LayerKind::Flatten => {
                    if spec.activation != Activation::Linear {
                        return Err(fail("Flatten carries no activation".into()));
                    }
                    pending_flatten = true;
                    poolable = false;
                }
                LayerKind::Dense { out_features } => {
                    if shape.len() != 1 && !pending_flatten {
                        return Err(fail(format!(
                            "Dense on a {}-D node {shape:?} needs a Flatten first",
                            shape.len()
                        )));
                    }
                    if out_features == 0 {
                        return Err(fail("Dense with zero outputs".into()));
                    }
                    edges.push(Edge {
                        op: EdgeOp::Dense,
                        activation: spec.activation,
                        pool: None,
                        in_shape: shape.clone(),
                        pre_shape: vec![out_features],
                        out_shape: vec![out_features],
                    });
                    shape = vec![out_features];
                    pending_flatten = false;
                    poolable = false;
                }
            }
        }
        if pending_flatten {
            return Err(Error::Build {
                layer: self.layers.len().saturating_sub(1),
                detail: "Flatten must be followed by a Dense layer".into(),
            });
        }
        if edges.is_empty() {
            return Err(Error::Build {
                layer: 0,
                detail: "architecture has no trainable layer".into(),
            });
        }
        Ok(edges)
    }

    /// Shapes of all state nodes, input first.
    pub fn node_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let edges = self.compile()?;
        let mut shapes = vec![self.input_shape.clone()];
        shapes.extend(edges.iter().map(|e| e.out_shape.clone()));
        Ok(shapes)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .compile()?
            .iter()
            .map(|e| e.weight_shape().iter().product::<usize>() + e.bias_len())
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOp {
    Conv { kernel: usize },
    Dense,
}

/// One trainable edge: conv or dense, then activation, then optional pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub op: EdgeOp,
    pub activation: Activation,
    pub pool: Option<usize>,
    pub in_shape: Vec<usize>,
    pub pre_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl Edge {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.op {
            EdgeOp::Conv { kernel } => vec![self.pre_shape[0], self.in_shape[0], kernel, kernel],
            EdgeOp::Dense => vec![self.pre_shape[0], self.in_shape.iter().product()],
        }
    }

    pub fn bias_len(&self) -> usize {
        self.pre_shape[0]
    }

    pub fn fan_in(&self) -> usize {
        match self.op {
            EdgeOp::Conv { kernel } => self.in_shape[0] * kernel * kernel,
            EdgeOp::Dense => self.in_shape.iter().product(),
        }
    }

    /// Applies the edge and records its linearization point.
    pub fn forward(&self, params: &EdgeParams, input: &Tensor) -> Result<(Tensor, EdgeCache)> {
        if input.shape() != self.in_shape.as_slice() {
            return Err(Error::dim(
                "edge forward",
                format!("input {:?}, edge expects {:?}", input.shape(), self.in_shape),
            ));
        }
        let pre = match self.op {
            EdgeOp::Conv { .. } => tensor::conv2d_forward(input, &params.weight, &params.bias)?,
            EdgeOp::Dense => tensor::dense_forward(input, &params.weight, &params.bias)?,
        };
        let act = match self.activation {
            Activation::Relu => tensor::relu(&pre),
            Activation::Linear => pre.clone(),
        };
        let (out, pool) = match self.pool {
            Some(size) => {
                let (y, idx) = tensor::maxpool_forward(&act, size)?;
                (y, Some(idx))
            }
            None => (act, None),
        };
        Ok((
            out,
            EdgeCache {
                input: input.clone(),
                pre,
                pool,
            },
        ))
    }

    /// Pulls an output-shaped adjoint back to the pre-activation.
    fn pre_adjoint(&self, cache: &EdgeCache, upstream: &Tensor) -> Result<Tensor> {
        if upstream.shape() != self.out_shape.as_slice() {
            return Err(Error::dim(
                "edge adjoint",
                format!("upstream {:?}, edge output {:?}", upstream.shape(), self.out_shape),
            ));
        }
        let mut u = match &cache.pool {
            Some(idx) => tensor::maxpool_vjp(idx, upstream)?,
            None => upstream.clone(),
        };
        if self.activation == Activation::Relu {
            for (g, &z) in u.data_mut().iter_mut().zip(cache.pre.data()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Ok(u)
    }

    /// Adjoint with respect to the edge input only.
    pub fn vjp_input(&self, params: &EdgeParams, cache: &EdgeCache, upstream: &Tensor) -> Result<Tensor> {
        let u = self.pre_adjoint(cache, upstream)?;
        match self.op {
            EdgeOp::Conv { .. } => Ok(tensor::conv2d_vjp(&cache.input, &params.weight, &u)?.0),
            EdgeOp::Dense => tensor::dense_vjp_input(&self.in_shape, &params.weight, &u),
        }
    }

    /// Full adjoint: (d input, d weight, d bias).
    pub fn vjp(
        &self,
        params: &EdgeParams,
        cache: &EdgeCache,
        upstream: &Tensor,
    ) -> Result<(Tensor, EdgeParams)> {
        let u = self.pre_adjoint(cache, upstream)?;
        let (dx, dw, db) = match self.op {
            EdgeOp::Conv { .. } => tensor::conv2d_vjp(&cache.input, &params.weight, &u)?,
            EdgeOp::Dense => tensor::dense_vjp(&cache.input, &params.weight, &u)?,
        };
        Ok((
            dx,
            EdgeParams {
                weight: dw,
                bias: db,
            },
        ))
    }
}

/// The inputs needed to evaluate an edge's Jacobian at a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCache {
    pub input: Tensor,
    pub pre: Tensor,
    pub pool: Option<PoolIndex>,
}

/// Weights and biases of one edge. Also used for gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl EdgeParams {
    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight elements followed by bias elements.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weight.data().iter().chain(self.bias.data())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NodeBuffers {
    v: Tensor,
    v_hat: Tensor,
    eps: Tensor,
}

impl NodeBuffers {
    fn zeros(shape: &[usize]) -> Self {
        NodeBuffers {
            v: Tensor::zeros(shape),
            v_hat: Tensor::zeros(shape),
            eps: Tensor::zeros(shape),
        }
    }
}

/// Hidden-node states carried from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub values: Vec<Tensor>,
}

/// A chain of trainable edges with predictive-coding node buffers.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    arch: Architecture,
    seed: u64,
    edges: Vec<Edge>,
    params: Vec<EdgeParams>,
    nodes: Vec<NodeBuffers>,
    caches: Vec<Option<EdgeCache>>,
}

impl LayerGraph {
    /// Validates `arch` and draws every parameter uniformly from
    /// `±1/√fan_in` with a ChaCha8 stream seeded by `seed`.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        let edges = arch.compile()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = edges
            .iter()
            .map(|e| {
                let bound = 1.0 / (e.fan_in() as f64).sqrt();
                let wshape = e.weight_shape();
                let wn = wshape.iter().product::<usize>();
                let w: Vec<f64> = (0..wn).map(|_| rng.gen_range(-bound..bound)).collect();
                let b: Vec<f64> = (0..e.bias_len()).map(|_| rng.gen_range(-bound..bound)).collect();
                EdgeParams {
                    weight: Tensor::new(wshape, w).expect("shape product matches"),
                    bias: Tensor::vector(&b),
                }
            })
            .collect();
        Ok(Self::assemble(arch.clone(), seed, edges, params))
    }

    /// [`Architecture::full_size`] built with `seed`.
    pub fn build_paper_architecture(seed: u64) -> Result<Self> {
        LayerGraph::build(&Architecture::full_size(), seed)
    }

    /// Graph with caller-provided parameters (checkpoint loading, fixtures).
    pub fn with_params(arch: &Architecture, seed: u64, params: Vec<EdgeParams>) -> Result<Self> {
        let edges = arch.compile()?;
        if params.len() != edges.len() {
            return Err(Error::Build {
                layer: 0,
                detail: format!("{} parameter sets for {} edges", params.len(), edges.len()),
            });
        }
        for (i, (e, p)) in edges.iter().zip(&params).enumerate() {
            if p.weight.shape() != e.weight_shape().as_slice() || p.bias.shape() != [e.bias_len()] {
                return Err(Error::Build {
                    layer: i,
                    detail: format!(
                        "edge {i} expects weight {:?} and bias [{}], got {:?} and {:?}",
                        e.weight_shape(),
                        e.bias_len(),
                        p.weight.shape(),
                        p.bias.shape()
                    ),
                });
            }
        }
        Ok(Self::assemble(arch.clone(), seed, edges, params))
    }

    fn assemble(arch: Architecture, seed: u64, edges: Vec<Edge>, params: Vec<EdgeParams>) -> Self {
        let mut nodes = vec![NodeBuffers::zeros(&arch.input_shape)];
        nodes.extend(edges.iter().map(|e| NodeBuffers::zeros(&e.out_shape)));
        let caches = vec![None; edges.len()];
        LayerGraph {
            arch,
            seed,
            edges,
            params,
            nodes,
            caches,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn output_index(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn hidden_indices(&self) -> std::ops::Range<usize> {
        1..self.output_index()
    }

    pub fn node_shapes(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.v.shape().to_vec()).collect()
    }

    pub fn params(&self) -> &[EdgeParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [EdgeParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(EdgeParams::len).sum()
    }

    pub fn v(&self, node: usize) -> &Tensor {
        &self.nodes[node].v
    }

    pub fn v_hat(&self, node: usize) -> &Tensor {
        &self.nodes[node].v_hat
    }

    pub fn eps(&self, node: usize) -> &Tensor {
        &self.nodes[node].eps
    }

    /// Frozen linearization point of `edge`, if predictions have been computed.
    pub fn edge_cache(&self, edge: usize) -> Option<&EdgeCache> {
        self.caches.get(edge).and_then(Option::as_ref)
    }

    /// Overwrites the state of one node. Errors are not refreshed.
    pub fn set_state(&mut self, node: usize, value: Tensor) -> Result<()> {
        let n = self.nodes.len();
        let buf = self.nodes.get_mut(node).ok_or_else(|| Error::Index {
            index: node,
            detail: format!("graph has {n} nodes"),
        })?;
        if buf.v.shape() != value.shape() {
            return Err(Error::dim(
                "set_state",
                format!("node {node} is {:?}, value is {:?}", buf.v.shape(), value.shape()),
            ));
        }
        buf.v = value;
        Ok(())
    }

    /// Plain feedforward pass: every edge output plus its cache. Does not
    /// touch the node buffers.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Vec<(Tensor, EdgeCache)>> {
        if x.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::dim(
                "forward",
                format!("input x {:?}, graph expects {:?}", x.shape(), self.arch.input_shape),
            ));
        }
        let mut trace: Vec<(Tensor, EdgeCache)> = Vec::with_capacity(self.edges.len());
        for (i, (edge, p)) in self.edges.iter().zip(&self.params).enumerate() {
            let input = if i == 0 { x } else { &trace[i - 1].0 };
            let step = edge.forward(p, input)?;
            trace.push(step);
        }
        Ok(trace)
    }

    /// Output of a plain feedforward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.pop().expect("at least one edge").0)
    }

    /// Clamps the input node to `x` and computes frozen predictions `v̂` and
    /// edge linearization points for every node.
    pub fn forward_predictions(&mut self, x: &Tensor) -> Result<()> {
        let trace = self.forward_trace(x)?;
        let input = &mut self.nodes[0];
        input.v = x.clone();
        input.v_hat = x.clone();
        input.eps = Tensor::zeros(x.shape());
        for (i, (out, cache)) in trace.into_iter().enumerate() {
            self.nodes[i + 1].v_hat = out;
            self.caches[i] = Some(cache);
        }
        Ok(())
    }

    /// `v := v̂` on every non-input node, then refreshes errors.
    pub fn init_states_from_predictions(&mut self) {
        for node in &mut self.nodes[1..] {
            node.v = node.v_hat.clone();
        }
        self.refresh_errors();
    }

    /// Overwrites hidden states with `snapshot`; predictions are untouched.
    pub fn restore_states(&mut self, snapshot: &StateSnapshot) -> Result<()> {
        let hidden = self.hidden_indices();
        if snapshot.values.len() != hidden.len() {
            return Err(Error::Snapshot(format!(
                "snapshot holds {} tensors, graph has {} hidden nodes",
                snapshot.values.len(),
                hidden.len()
            )));
        }
        for (i, value) in hidden.clone().zip(&snapshot.values) {
            if value.shape() != self.nodes[i].v.shape() {
                return Err(Error::Snapshot(format!(
                    "hidden node {i} is {:?}, snapshot value is {:?}",
                    self.nodes[i].v.shape(),
                    value.shape()
                )));
            }
        }
        for (i, value) in hidden.zip(&snapshot.values) {
            self.nodes[i].v = value.clone();
        }
        self.refresh_errors();
        Ok(())
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            values: self.hidden_indices().map(|i| self.nodes[i].v.clone()).collect(),
        }
    }

    /// `ε := v − v̂` on every non-input node.
    pub fn refresh_errors(&mut self) {
        for node in &mut self.nodes[1..] {
            for ((e, &v), &p) in node
                .eps
                .data_mut()
                .iter_mut()
                .zip(node.v.data())
                .zip(node.v_hat.data())
            {
                *e = v - p;
            }
        }
    }

    /// `½ Σ ‖ε_i‖²` over all non-input nodes.
    pub fn vfe(&self) -> f64 {
        0.5 * self.nodes[1..].iter().map(|n| n.eps.norm_sq()).sum::<f64>()
    }

    fn cache_for(&self, edge: usize) -> Result<&EdgeCache> {
        self.edge_cache(edge).ok_or_else(|| Error::Index {
            index: edge,
            detail: "no predictions computed for this edge yet".into(),
        })
    }

    /// Descent direction of `F` for hidden node `node`:
    /// `−ε_i + J_iᵀ ε_{i+1}` with `J_i` frozen at the prediction pass.
    pub fn state_gradient(&self, node: usize) -> Result<Tensor> {
        if !self.hidden_indices().contains(&node) {
            return Err(Error::Index {
                index: node,
                detail: format!("hidden nodes are {:?}", self.hidden_indices()),
            });
        }
        let mut grad = self.edges[node].vjp_input(
            &self.params[node],
            self.cache_for(node)?,
            &self.nodes[node + 1].eps,
        )?;
        grad.axpy(-1.0, &self.nodes[node].eps)?;
        Ok(grad)
    }

    /// Descent direction of `F` for the parameters of `edge`: the parameter
    /// adjoint of the edge applied to the error at its output node.
    pub fn weight_gradient(&self, edge: usize) -> Result<EdgeParams> {
        if edge >= self.edges.len() {
            return Err(Error::Index {
                index: edge,
                detail: format!("graph has {} edges", self.edges.len()),
            });
        }
        let (_, d) =
            self.edges[edge].vjp(&self.params[edge], self.cache_for(edge)?, &self.nodes[edge + 1].eps)?;
        Ok(d)
    }
}
