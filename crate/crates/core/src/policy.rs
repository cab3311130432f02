//! Multimodal actor-critic network for circuit sizing.
//!
//! A graph branch (GCN or GAT) embeds the sized topology, a dense branch
//! embeds the normalized specification observation, and their concatenation
//! runs through shared tanh layers into an M x 3 action head (row softmax)
//! plus a scalar value head. The value function is by default a twin network
//! with its own weights and a scalar last layer; a config flag collapses the
//! two into one trunk with two heads. A structure-blind baseline variant
//! drops the graph branch and widens its dense layers until the total
//! parameter count matches the GCN variant's budget.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint format version {got}, this build reads {supported}")]
    Version { got: u32, supported: u32 },
    #[error("checkpoint weight `{name}` is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    WeightShape { name: String, got_rows: usize, got_cols: usize, rows: usize, cols: usize },
    #[error("checkpoint is missing weight `{0}`")]
    MissingWeight(String),
    #[error("checkpoint holds unknown weight `{0}`")]
    UnknownWeight(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GcnFc,
    GatFc,
    MlpBaseline,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GcnFc => "gcn_fc",
            Variant::GatFc => "gat_fc",
            Variant::MlpBaseline => "mlp_baseline",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "gcn_fc" => Some(Variant::GcnFc),
            "gat_fc" => Some(Variant::GatFc),
            "mlp_baseline" => Some(Variant::MlpBaseline),
            _ => None,
        }
    }

    fn has_graph_branch(self) -> bool {
        !matches!(self, Variant::MlpBaseline)
    }
}

/// What the dense branch sees: the full goal-plus-measured observation, or
/// the goal half alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecObservation {
    GoalAndIntermediate,
    GoalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySizes {
    pub graph_hidden: usize,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub spec_hidden: usize,
    pub trunk_hidden: usize,
}

impl Default for PolicySizes {
    fn default() -> Self {
        PolicySizes {
            graph_hidden: 32,
            gat_heads: 4,
            gat_head_dim: 8,
            spec_hidden: 32,
            trunk_hidden: 64,
        }
    }
}

pub const GAT_LEAKY_SLOPE: f64 = 0.2;
const GRAPH_LAYERS: usize = 2;
const SPEC_LAYERS: usize = 2;
const TRUNK_LAYERS: usize = 2;
/// Additive mask pushing non-neighbor attention logits to -inf.
const MASK_NEG: f64 = -1e9;

/// Everything needed to rebuild the network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub variant: Variant,
    pub spec_observation: SpecObservation,
    pub share_value_trunk: bool,
    pub sizes: PolicySizes,
    pub node_feature_width: usize,
    /// Action rows M (one per tunable parameter).
    pub action_rows: usize,
    /// Specification count N; the observation is 2N (or N for goal-only).
    pub spec_count: usize,
    /// Widened dense width for the baseline variant; 0 otherwise.
    pub baseline_hidden: usize,
}

impl ArchDescriptor {
    fn spec_in(&self) -> usize {
        match self.spec_observation {
            SpecObservation::GoalAndIntermediate => 2 * self.spec_count,
            SpecObservation::GoalOnly => self.spec_count,
        }
    }

    fn graph_out(&self) -> usize {
        match self.variant {
            Variant::GcnFc => self.sizes.graph_hidden,
            Variant::GatFc => self.sizes.gat_heads * self.sizes.gat_head_dim,
            Variant::MlpBaseline => 0,
        }
    }

    fn dense_hidden(&self) -> usize {
        if self.variant == Variant::MlpBaseline {
            self.baseline_hidden
        } else {
            self.sizes.spec_hidden
        }
    }

    fn trunk_in(&self) -> usize {
        self.graph_out() + self.dense_hidden()
    }
}

enum Init {
    Xavier,
    Zero,
}

/// Ordered parameter plan; construction, binding, and the forward pass all
/// walk this same order.
struct Plan {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Plan {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
    }

    fn scalar_count(&self) -> usize {
        self.shapes.iter().map(|&(r, c)| r * c).sum()
    }
}

fn plan_net(plan: &mut Plan, arch: &ArchDescriptor, net: &str, heads: &[&str]) {
    let s = &arch.sizes;
    if arch.variant.has_graph_branch() {
        let mut width = arch.node_feature_width;
        for l in 0..GRAPH_LAYERS {
            match arch.variant {
                Variant::GcnFc => {
                    plan.push(format!("{net}.graph{l}.w"), width, s.graph_hidden, Init::Xavier);
                    width = s.graph_hidden;
                }
                Variant::GatFc => {
                    for h in 0..s.gat_heads {
                        plan.push(
                            format!("{net}.graph{l}.head{h}.w"),
                            width,
                            s.gat_head_dim,
                            Init::Xavier,
                        );
                        plan.push(
                            format!("{net}.graph{l}.head{h}.a_src"),
                            s.gat_head_dim,
                            1,
                            Init::Xavier,
                        );
                        plan.push(
                            format!("{net}.graph{l}.head{h}.a_dst"),
                            s.gat_head_dim,
                            1,
                            Init::Xavier,
                        );
                    }
                    width = s.gat_heads * s.gat_head_dim;
                }
                Variant::MlpBaseline => unreachable!("no graph branch"),
            }
        }
    }
    let mut width = arch.spec_in();
    for l in 0..SPEC_LAYERS {
        let out = arch.dense_hidden();
        plan.push(format!("{net}.spec{l}.w"), width, out, Init::Xavier);
        plan.push(format!("{net}.spec{l}.b"), 1, out, Init::Zero);
        width = out;
    }
    let mut width = arch.trunk_in();
    for l in 0..TRUNK_LAYERS {
        plan.push(format!("{net}.trunk{l}.w"), width, s.trunk_hidden, Init::Xavier);
        plan.push(format!("{net}.trunk{l}.b"), 1, s.trunk_hidden, Init::Zero);
        width = s.trunk_hidden;
    }
    for &head in heads {
        let out = if head == "action_head" { 3 * arch.action_rows } else { 1 };
        plan.push(format!("{net}.{head}.w"), s.trunk_hidden, out, Init::Xavier);
        plan.push(format!("{net}.{head}.b"), 1, out, Init::Zero);
    }
}

fn plan_for(arch: &ArchDescriptor) -> Plan {
    let mut plan = Plan { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() };
    if arch.share_value_trunk {
        plan_net(&mut plan, arch, "shared", &["action_head", "value_head"]);
    } else {
        plan_net(&mut plan, arch, "policy", &["action_head"]);
        plan_net(&mut plan, arch, "value", &["value_head"]);
    }
    plan
}

/// Width for the baseline's dense layers that brings its total scalar count
/// closest to the GCN variant's at the same dimensions.
fn match_baseline_width(reference: &ArchDescriptor) -> usize {
    let target = plan_for(reference).scalar_count();
    let mut best = (usize::MAX, 1);
    for h in 1..=2048 {
        let candidate = ArchDescriptor {
            variant: Variant::MlpBaseline,
            baseline_hidden: h,
            ..*reference
        };
        let count = plan_for(&candidate).scalar_count();
        let gap = count.abs_diff(target);
        if gap < best.0 {
            best = (gap, h);
        }
        if count > target && gap > best.0 {
            break;
        }
    }
    best.1
}

/// Network output for one state: row-stochastic move distribution and value.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub action_probs: Mat,
    pub value: f64,
}

impl PolicyOutput {
    /// Natural log of every action probability, same M x 3 layout.
    pub fn row_log_probs(&self) -> Mat {
        self.action_probs.map(f64::ln)
    }
}

/// Tape handles for every parameter, in plan order.
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Tape handles for the two network heads.
#[derive(Debug, Clone, Copy)]
pub struct ForwardIds {
    /// Raw action logits, M x 3.
    pub logits: TensorId,
    /// State value, 1 x 1.
    pub value: TensorId,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    arch: ArchDescriptor,
    names: Vec<String>,
    params: Vec<Mat>,
}

impl PolicyNet {
    /// Builds a freshly initialized network. Weights draw from a scaled
    /// uniform range, biases start at zero; the baseline variant's dense
    /// width is solved here to match the GCN parameter budget.
    pub fn new(
        variant: Variant,
        spec_observation: SpecObservation,
        share_value_trunk: bool,
        sizes: PolicySizes,
        node_feature_width: usize,
        action_rows: usize,
        spec_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut arch = ArchDescriptor {
            variant,
            spec_observation,
            share_value_trunk,
            sizes,
            node_feature_width,
            action_rows,
            spec_count,
            baseline_hidden: 0,
        };
        if variant == Variant::MlpBaseline {
            let reference = ArchDescriptor { variant: Variant::GcnFc, ..arch };
            arch.baseline_hidden = match_baseline_width(&reference);
        }
        Self::from_arch(arch, rng)
    }

    fn from_arch(arch: ArchDescriptor, rng: &mut impl Rng) -> Self {
        let plan = plan_for(&arch);
        let params = plan
            .shapes
            .iter()
            .zip(&plan.inits)
            .map(|(&(rows, cols), init)| match init {
                Init::Zero => Mat::zeros(rows, cols),
                Init::Xavier => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    let mut m = Mat::zeros(rows, cols);
                    for x in m.data_mut() {
                        *x = rng.random_range(-bound..bound);
                    }
                    m
                }
            })
            .collect();
        PolicyNet { arch, names: plan.names, params }
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    /// Registers every parameter as a tape leaf, in plan order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding { ids: self.params.iter().map(|p| tape.leaf(p.clone())).collect() }
    }

    /// Records the full forward pass on `tape`. `spec_input` is always the
    /// full goal-plus-measured vector (2N); goal-only networks slice it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        a_star: &Mat,
        features: &Mat,
        spec_input: &[f64],
    ) -> ForwardIds {
        assert_eq!(
            spec_input.len(),
            2 * self.arch.spec_count,
            "spec observation length mismatch"
        );
        let mut cursor = 0usize;
        let obs = &spec_input[..self.arch.spec_in()];

        let graph_inputs = if self.arch.variant.has_graph_branch() {
            assert_eq!(features.cols(), self.arch.node_feature_width, "feature width mismatch");
            let a = tape.constant(a_star.clone());
            let x = tape.constant(features.clone());
            let mask = tape.constant(mask_bias(a_star));
            Some((a, x, mask))
        } else {
            None
        };
        let spec_x = tape.constant(Mat::row_vector(obs));

        if self.arch.share_value_trunk {
            let trunk = self.net_trunk(tape, binding, &mut cursor, graph_inputs, spec_x);
            let logits = self.head(tape, binding, &mut cursor, trunk, 3 * self.arch.action_rows);
            let logits = tape.reshape(logits, self.arch.action_rows, 3);
            let value = self.head(tape, binding, &mut cursor, trunk, 1);
            ForwardIds { logits, value }
        } else {
            let trunk_p = self.net_trunk(tape, binding, &mut cursor, graph_inputs, spec_x);
            let logits = self.head(tape, binding, &mut cursor, trunk_p, 3 * self.arch.action_rows);
            let logits = tape.reshape(logits, self.arch.action_rows, 3);
            let trunk_v = self.net_trunk(tape, binding, &mut cursor, graph_inputs, spec_x);
            let value = self.head(tape, binding, &mut cursor, trunk_v, 1);
            ForwardIds { logits, value }
        }
    }

    /// Graph branch + dense branch + trunk, returning the trunk output id.
    fn net_trunk(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        cursor: &mut usize,
        graph_inputs: Option<(TensorId, TensorId, TensorId)>,
        spec_x: TensorId,
    ) -> TensorId {
        let take = |cursor: &mut usize| {
            let id = binding.ids[*cursor];
            *cursor += 1;
            id
        };

        let graph_emb = graph_inputs.map(|(a, x, mask)| {
            let mut h = x;
            for _ in 0..GRAPH_LAYERS {
                h = match self.arch.variant {
                    Variant::GcnFc => {
                        let w = take(cursor);
                        gcn_layer(tape, h, a, w)
                    }
                    Variant::GatFc => {
                        let heads: Vec<(TensorId, TensorId, TensorId)> = (0..self
                            .arch
                            .sizes
                            .gat_heads)
                            .map(|_| {
                                let w = take(cursor);
                                let a_src = take(cursor);
                                let a_dst = take(cursor);
                                (w, a_src, a_dst)
                            })
                            .collect();
                        gat_layer(tape, h, mask, &heads, GAT_LEAKY_SLOPE)
                    }
                    Variant::MlpBaseline => unreachable!("no graph branch"),
                };
            }
            tape.mean_rows(h)
        });

        let mut d = spec_x;
        for _ in 0..SPEC_LAYERS {
            let w = take(cursor);
            let b = take(cursor);
            let z = tape.matmul(d, w);
            let z = tape.add(z, b);
            d = tape.tanh(z);
        }

        let mut t = match graph_emb {
            Some(g) => tape.concat_cols(g, d),
            None => d,
        };
        for _ in 0..TRUNK_LAYERS {
            let w = take(cursor);
            let b = take(cursor);
            let z = tape.matmul(t, w);
            let z = tape.add(z, b);
            t = tape.tanh(z);
        }
        t
    }

    fn head(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        cursor: &mut usize,
        trunk: TensorId,
        out: usize,
    ) -> TensorId {
        let w = binding.ids[*cursor];
        let b = binding.ids[*cursor + 1];
        *cursor += 2;
        let z = tape.matmul(trunk, w);
        let id = tape.add(z, b);
        debug_assert_eq!(tape.value(id).cols(), out);
        id
    }

    /// One inference pass: probabilities and value, detached from any tape.
    pub fn act(&self, a_star: &Mat, features: &Mat, spec_input: &[f64]) -> PolicyOutput {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let ids = self.forward(&mut tape, &binding, a_star, features, spec_input);
        let probs = tape.softmax_rows(ids.logits);
        PolicyOutput {
            action_probs: tape.value(probs).clone(),
            value: tape.scalar(ids.value),
        }
    }
}

/// One graph-convolution layer: tanh(A* H W).
pub fn gcn_layer(tape: &mut Tape, h: TensorId, a_star: TensorId, w: TensorId) -> TensorId {
    let ah = tape.matmul(a_star, h);
    let ahw = tape.matmul(ah, w);
    tape.tanh(ahw)
}

/// Additive attention mask from the normalized adjacency's sparsity pattern:
/// zero where an edge (or self-loop) exists, a large negative number
/// elsewhere, so masked logits vanish under the row softmax.
pub fn mask_bias(a_star: &Mat) -> Mat {
    let mut m = Mat::zeros(a_star.rows(), a_star.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if a_star.get(r, c) == 0.0 {
                m.set(r, c, MASK_NEG);
            }
        }
    }
    m
}

/// One multi-head graph-attention layer. Per head: scores
/// e_ij = LeakyReLU(a_srcT (W h_i) + a_dstT (W h_j)) are softmax-normalized
/// over each node's neighborhood plus itself (via the additive `mask`), the
/// attention-weighted sum runs through tanh, and head outputs concatenate.
pub fn gat_layer(
    tape: &mut Tape,
    h: TensorId,
    mask: TensorId,
    heads: &[(TensorId, TensorId, TensorId)],
    slope: f64,
) -> TensorId {
    let n = tape.value(h).rows();
    let ones_row = tape.constant(Mat::filled(1, n, 1.0));
    let ones_col = tape.constant(Mat::filled(n, 1, 1.0));
    let mut outs: Vec<TensorId> = Vec::with_capacity(heads.len());
    for &(w, a_src, a_dst) in heads {
        let hw = tape.matmul(h, w);
        let s = tape.matmul(hw, a_src);
        let d = tape.matmul(hw, a_dst);
        let d_t = tape.transpose(d);
        let s_bc = tape.matmul(s, ones_row);
        let d_bc = tape.matmul(ones_col, d_t);
        let scores = tape.add(s_bc, d_bc);
        let scores = tape.leaky_relu(scores, slope);
        let masked = tape.add(scores, mask);
        let alpha = tape.softmax_rows(masked);
        let mixed = tape.matmul(alpha, hw);
        outs.push(tape.tanh(mixed));
    }
    let mut cat = outs[0];
    for &o in &outs[1..] {
        cat = tape.concat_cols(cat, o);
    }
    cat
}

/// Samples one choice per row; returns the choices and the joint log-prob
/// (sum of row log-probs).
pub fn sample_action(out: &PolicyOutput, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    let probs = &out.action_probs;
    let mut choices = Vec::with_capacity(probs.rows());
    let mut log_prob = 0.0;
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (c, &p) in row.iter().enumerate() {
            acc += p;
            if draw < acc {
                pick = c;
                break;
            }
        }
        choices.push(pick);
        log_prob += row[pick].ln();
    }
    (choices, log_prob)
}

/// Deployment-time action: argmax per row (first index wins ties).
pub fn greedy_action(out: &PolicyOutput) -> Vec<usize> {
    let probs = &out.action_probs;
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Joint log-probability of a specific choice vector under `probs`.
pub fn log_prob_of(probs: &Mat, choices: &[usize]) -> f64 {
    assert_eq!(probs.rows(), choices.len(), "one choice per action row");
    choices.iter().enumerate().map(|(r, &c)| probs.get(r, c).ln()).sum()
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config_hash: String,
    arch: ArchDescriptor,
    weights: BTreeMap<String, WeightArray>,
}

impl PolicyNet {
    /// Writes a versioned checkpoint: architecture descriptor, named weight
    /// arrays in decimal, and the caller's config fingerprint.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), PolicyError> {
        let weights = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(name, p)| {
                (
                    name.clone(),
                    WeightArray { rows: p.rows(), cols: p.cols(), data: p.data().to_vec() },
                )
            })
            .collect();
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            arch: self.arch,
            weights,
        };
        let text = serde_json::to_string_pretty(&ck)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a checkpoint; every weight must be present with its exact shape.
    pub fn load(path: &Path) -> Result<(Self, String), PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let mut ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version {
                got: ck.format_version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let plan = plan_for(&ck.arch);
        let mut params = Vec::with_capacity(plan.names.len());
        for (name, &(rows, cols)) in plan.names.iter().zip(&plan.shapes) {
            let w = ck
                .weights
                .remove(name)
                .ok_or_else(|| PolicyError::MissingWeight(name.clone()))?;
            if w.rows != rows || w.cols != cols || w.data.len() != rows * cols {
                return Err(PolicyError::WeightShape {
                    name: name.clone(),
                    got_rows: w.rows,
                    got_cols: w.cols,
                    rows,
                    cols,
                });
            }
            params.push(Mat::from_vec(rows, cols, w.data));
        }
        if let Some(extra) = ck.weights.into_keys().next() {
            return Err(PolicyError::UnknownWeight(extra));
        }
        Ok((PolicyNet { arch: ck.arch, names: plan.names, params }, ck.config_hash))
    }

    /// Errors unless `other` describes this exact architecture.
    pub fn ensure_arch(&self, other: &ArchDescriptor) -> Result<(), PolicyError> {
        if &self.arch != other {
            return Err(PolicyError::ArchMismatch(format!(
                "expected {other:?}, checkpoint holds {:?}",
                self.arch
            )));
        }
        Ok(())
    }
}
