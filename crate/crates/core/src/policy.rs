//! Squashed-Gaussian sub-policies and their chain-rule composition.
//!
//! Node `i` maps `[state ⧺ parent actions]` to a diagonal Gaussian over its
//! own pre-squash action `u_i`, samples `u_i = μ + σ·ε` and emits
//! `a_i = tanh(u_i)` (or `u_i` itself when squashing is off). Parents are
//! realized first, so a joint sample walks the graph in topological order and
//! the joint log-density is the sum of the per-node conditional log-densities.

use serde::{Deserialize, Serialize};

use crate::bsn::BsnGraph;
use crate::error::{Error, Result};
use crate::numerics::tensor;
use crate::numerics::{Activation, Mlp, ParamKey, Parameters, SeededRng, Tape, Tensor, Var};

/// Added inside `log(1 - tanh(u)^2 + ε)` to keep the Jacobian term finite.
pub const SQUASH_EPS: f64 = 1e-6;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Squash {
    Tanh,
    Off,
}

/// Conditional Gaussian policy for one BSN node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubPolicy {
    pub node_id: String,
    pub net: Mlp,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub squash: Squash,
}

/// Taped output of one node.
#[derive(Clone, Copy, Debug)]
pub struct NodeSample {
    pub action: Var,
    pub log_prob: Var,
}

impl SubPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        node_id: &str,
        input_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        squash: Squash,
        log_std_bounds: (f64, f64),
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let net = Mlp::new(format!("policy.{node_id}"), &sizes, activation, rng)?;
        SubPolicy::from_net(node_id, net, action_dim, squash, log_std_bounds)
    }

    pub fn from_net(node_id: &str, net: Mlp, action_dim: usize, squash: Squash, log_std_bounds: (f64, f64)) -> Result<Self> {
        if net.out_dim() != 2 * action_dim {
            return Err(Error::shape(format!(
                "sub-policy `{node_id}` network outputs {} values, needs {}",
                net.out_dim(),
                2 * action_dim
            )));
        }
        if !(log_std_bounds.0 < log_std_bounds.1) {
            return Err(Error::Config(format!("empty log-std range {log_std_bounds:?}")));
        }
        Ok(SubPolicy {
            node_id: node_id.to_string(),
            net,
            action_dim,
            log_std_min: log_std_bounds.0,
            log_std_max: log_std_bounds.1,
            squash,
        })
    }

    fn input(&self, tape: &mut Tape, state: Var, parents: Option<Var>) -> Result<Var> {
        match parents {
            Some(p) => tape.concat_cols(&[state, p]),
            None => Ok(state),
        }
    }

    /// Mean and clamped log-std, both `[b, d]`.
    pub fn head(&self, tape: &mut Tape, state: Var, parents: Option<Var>, trainable: bool) -> Result<(Var, Var)> {
        let x = self.input(tape, state, parents)?;
        let out = self.net.forward_taped(tape, x, trainable)?;
        if !tape.value(out).is_finite() {
            return Err(Error::Numeric(format!("sub-policy `{}` produced a non-finite output", self.node_id)));
        }
        let d = self.action_dim;
        let mu = tape.slice_cols(out, 0, d)?;
        let raw = tape.slice_cols(out, d, 2 * d)?;
        let log_std = tape.clamp(raw, self.log_std_min, self.log_std_max);
        Ok((mu, log_std))
    }

    /// Reparameterized sample with log-density, differentiable through `noise`.
    pub fn sample_taped(
        &self,
        tape: &mut Tape,
        state: Var,
        parents: Option<Var>,
        noise: &Tensor,
        trainable: bool,
    ) -> Result<NodeSample> {
        let (mu, log_std) = self.head(tape, state, parents, trainable)?;
        if tape.value(mu).shape() != noise.shape() {
            return Err(Error::shape(format!(
                "noise for `{}` has shape {:?}, expected {:?}",
                self.node_id,
                noise.shape(),
                tape.value(mu).shape()
            )));
        }
        let std = tape.exp(log_std);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mu, spread)?;

        // log N(u; μ, σ) = -ε²/2 - log σ - log(2π)/2 per coordinate
        let neg_log_std = tape.scale(log_std, -1.0);
        let quad = tape.constant(noise.map(|e| -0.5 * e * e - HALF_LN_2PI));
        let per_coord = tape.add(neg_log_std, quad)?;
        let gauss = tape.sum_cols(per_coord)?;

        match self.squash {
            Squash::Off => Ok(NodeSample { action: u, log_prob: gauss }),
            Squash::Tanh => {
                let a = tape.tanh(u);
                let jac = tape.sech2(u);
                let inner = tape.shift(jac, SQUASH_EPS);
                let log_jac = tape.ln(inner);
                let corr = tape.sum_cols(log_jac)?;
                let log_prob = tape.sub(gauss, corr)?;
                Ok(NodeSample { action: a, log_prob })
            }
        }
    }

    /// Log-density of a given action (`[b, d]`, post-squash) under this node.
    pub fn log_prob_taped(
        &self,
        tape: &mut Tape,
        state: Var,
        parents: Option<Var>,
        action: &Tensor,
        trainable: bool,
    ) -> Result<Var> {
        let (pre, corr) = match self.squash {
            Squash::Off => (action.clone(), None),
            Squash::Tanh => {
                if let Some(bad) = action.data().iter().find(|v| !(v.abs() < 1.0)) {
                    return Err(Error::Domain(format!(
                        "action coordinate {bad} of `{}` is outside (-1, 1)",
                        self.node_id
                    )));
                }
                let corr = tensor::row_sums(&action.map(|a| (-(a * a) + (1.0 + SQUASH_EPS)).ln()));
                (action.map(f64::atanh), Some(corr))
            }
        };
        let (mu, log_std) = self.head(tape, state, parents, trainable)?;
        let u = tape.constant(pre);
        let diff = tape.sub(u, mu)?;
        let neg_log_std = tape.scale(log_std, -1.0);
        let inv_std = tape.exp(neg_log_std);
        let z = tape.mul(diff, inv_std)?;
        let z2 = tape.square(z);
        let half = tape.scale(z2, -0.5);
        let per_coord = tape.sub(half, log_std)?;
        let per_coord = tape.shift(per_coord, -HALF_LN_2PI);
        let gauss = tape.sum_cols(per_coord)?;
        match corr {
            None => Ok(gauss),
            Some(c) => {
                let c = tape.constant(c);
                tape.sub(gauss, c)
            }
        }
    }

    /// Deterministic action: `tanh(μ)` or `μ`.
    pub fn mean_action_taped(&self, tape: &mut Tape, state: Var, parents: Option<Var>) -> Result<Var> {
        let (mu, _) = self.head(tape, state, parents, false)?;
        Ok(match self.squash {
            Squash::Tanh => tape.tanh(mu),
            Squash::Off => mu,
        })
    }
}

/// Free-function form of [`SubPolicy::sample_taped`] on plain tensors.
///
/// `state` is `[b, s]`, `parents` is `[b, p]` (`p` may be 0) and `noise` `[b, d]`.
/// Returns the action `[b, d]` and log-density `[b, 1]`.
pub fn sub_sample(
    sub: &SubPolicy,
    state: &Tensor,
    parents: &Tensor,
    noise: &Tensor,
    tape: Option<&mut Tape>,
) -> Result<(Tensor, Tensor)> {
    let mut scratch = Tape::new();
    let tape = tape.unwrap_or(&mut scratch);
    let s = tape.constant(state.as_row()?);
    let p = if parents.is_empty() { None } else { Some(tape.constant(parents.as_row()?)) };
    let out = sub.sample_taped(tape, s, p, &noise.as_row()?, true)?;
    Ok((tape.value(out.action).clone(), tape.value(out.log_prob).clone()))
}

/// Standard-normal noise for every node, indexed like `graph.nodes()`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeNoise(pub Vec<Tensor>);

/// Joint sample recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapedJointSample {
    /// `[b, D]` in joint-action coordinates.
    pub action: Var,
    /// Per node, indexed like `graph.nodes()`; each `[b, 1]`.
    pub node_log_probs: Vec<Var>,
    /// Sum of the node log-densities in topological order; `[b, 1]`.
    pub log_prob: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub action: Tensor,
    /// `(node id, [b, 1] log-density)` in topological order.
    pub node_log_probs: Vec<(String, Tensor)>,
    pub log_prob: Tensor,
}

impl JointSample {
    pub fn node_log_prob(&self, id: &str) -> Option<&Tensor> {
        self.node_log_probs.iter().find(|(n, _)| n == id).map(|(_, t)| t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub joint: f64,
    /// `(node id, conditional entropy estimate)` in topological order.
    pub per_node: Vec<(String, f64)>,
    /// Monte-Carlo standard error of `joint`.
    pub std_error: f64,
    pub samples: usize,
}

/// Product of sub-policies over a [`BsnGraph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRecord", into = "PolicyRecord")]
pub struct JointPolicy {
    graph: BsnGraph,
    state_dim: usize,
    subs: Vec<SubPolicy>,
    /// Column permutation from topo-ordered node outputs to joint coordinates;
    /// `None` when it is the identity.
    scatter: Option<Vec<usize>>,
}

/// On-disk form: graph, evaluation order and every sub-policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub graph: BsnGraph,
    pub node_order: Vec<String>,
    pub state_dim: usize,
    pub sub_policies: Vec<SubPolicy>,
}

impl From<JointPolicy> for PolicyRecord {
    fn from(p: JointPolicy) -> Self {
        let node_order = p.graph.topo_order().into_iter().map(str::to_string).collect();
        PolicyRecord { graph: p.graph, node_order, state_dim: p.state_dim, sub_policies: p.subs }
    }
}

impl TryFrom<PolicyRecord> for JointPolicy {
    type Error = Error;

    fn try_from(r: PolicyRecord) -> Result<Self> {
        let order: Vec<String> = r.graph.topo_order().into_iter().map(str::to_string).collect();
        if order != r.node_order {
            return Err(Error::Checkpoint(format!(
                "stored node order {:?} disagrees with graph order {order:?}",
                r.node_order
            )));
        }
        JointPolicy::from_parts(r.graph, r.state_dim, r.sub_policies)
    }
}

impl JointPolicy {
    /// Fresh networks, initialized node by node in topological order.
    pub fn new(
        graph: BsnGraph,
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        squash: Squash,
        log_std_bounds: (f64, f64),
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut slots: Vec<Option<SubPolicy>> = vec![None; graph.len()];
        for &i in graph.order() {
            let node = &graph.nodes()[i];
            let input = state_dim + graph.parent_width(i);
            slots[i] = Some(SubPolicy::new(
                &node.id,
                input,
                node.dims.len(),
                hidden,
                activation,
                squash,
                log_std_bounds,
                rng,
            )?);
        }
        let subs = slots.into_iter().map(|s| s.expect("every node visited")).collect();
        JointPolicy::from_parts(graph, state_dim, subs)
    }

    /// Assemble from existing sub-policies, indexed like `graph.nodes()`.
    pub fn from_parts(graph: BsnGraph, state_dim: usize, subs: Vec<SubPolicy>) -> Result<Self> {
        if subs.len() != graph.len() {
            return Err(Error::shape(format!("{} sub-policies for {} nodes", subs.len(), graph.len())));
        }
        for (i, (node, sub)) in graph.nodes().iter().zip(&subs).enumerate() {
            if node.id != sub.node_id {
                return Err(Error::shape(format!("sub-policy `{}` sits at node `{}`", sub.node_id, node.id)));
            }
            if sub.action_dim != node.dims.len() {
                return Err(Error::shape(format!("sub-policy `{}` has action dim {}", sub.node_id, sub.action_dim)));
            }
            let want = state_dim + graph.parent_width(i);
            if sub.net.in_dim() != want {
                return Err(Error::shape(format!(
                    "sub-policy `{}` takes {} inputs, needs state {state_dim} + parents {}",
                    sub.node_id,
                    sub.net.in_dim(),
                    want - state_dim
                )));
            }
        }
        if subs.windows(2).any(|w| w[0].squash != w[1].squash) {
            return Err(Error::Config("all sub-policies must share one squash mode".into()));
        }

        // concatenating node outputs in topo order yields columns `stacked`;
        // joint column j is found at position scatter[j]
        let stacked: Vec<usize> = graph.order().iter().flat_map(|&i| graph.nodes()[i].dims.iter().copied()).collect();
        let mut scatter = vec![0; stacked.len()];
        for (pos, &col) in stacked.iter().enumerate() {
            scatter[col] = pos;
        }
        let identity = scatter.iter().enumerate().all(|(j, &p)| j == p);
        Ok(JointPolicy { graph, state_dim, subs, scatter: (!identity).then_some(scatter) })
    }

    pub fn graph(&self) -> &BsnGraph {
        &self.graph
    }

    pub fn sub_policies(&self) -> &[SubPolicy] {
        &self.subs
    }

    pub fn sub_policies_mut(&mut self) -> &mut [SubPolicy] {
        &mut self.subs
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.graph.total_action_dim()
    }

    /// Number of sub-policies `m`.
    pub fn node_count(&self) -> usize {
        self.subs.len()
    }

    pub fn squash(&self) -> Squash {
        self.subs[0].squash
    }

    /// Draw `[batch, d_i]` standard normals per node, in topological order.
    pub fn draw_noise(&self, batch: usize, rng: &mut SeededRng) -> NodeNoise {
        let mut slots: Vec<Option<Tensor>> = vec![None; self.subs.len()];
        for &i in self.graph.order() {
            slots[i] = Some(rng.normal_tensor(batch, self.subs[i].action_dim));
        }
        NodeNoise(slots.into_iter().map(|t| t.expect("every node visited")).collect())
    }

    fn parents_var(&self, tape: &mut Tape, i: usize, actions: &[Option<Var>]) -> Result<Option<Var>> {
        let parents: Vec<Var> = self.graph.nodes()[i]
            .parents
            .iter()
            .map(|p| actions[self.graph.index_of(p).expect("validated")].expect("parents come first"))
            .collect();
        match parents.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(*one)),
            many => Ok(Some(tape.concat_cols(many)?)),
        }
    }

    fn assemble(&self, tape: &mut Tape, actions: &[Option<Var>]) -> Result<Var> {
        let ordered: Vec<Var> = self.graph.order().iter().map(|&i| actions[i].expect("sampled")).collect();
        let stacked = match ordered.as_slice() {
            [one] => *one,
            many => tape.concat_cols(many)?,
        };
        match &self.scatter {
            None => Ok(stacked),
            Some(index) => tape.gather_cols(stacked, index),
        }
    }

    fn sum_in_order(&self, tape: &mut Tape, per_node: &[Var]) -> Result<Var> {
        let mut order = self.graph.order().iter();
        let mut total = per_node[*order.next().expect("non-empty graph")];
        for &i in order {
            total = tape.add(total, per_node[i])?;
        }
        Ok(total)
    }

    /// Sequential reparameterized sample of every node.
    pub fn sample_taped(&self, tape: &mut Tape, state: Var, noise: &NodeNoise, trainable: bool) -> Result<TapedJointSample> {
        if noise.0.len() != self.subs.len() {
            return Err(Error::shape(format!("noise for {} nodes, policy has {}", noise.0.len(), self.subs.len())));
        }
        self.check_state(tape.value(state))?;
        let mut actions: Vec<Option<Var>> = vec![None; self.subs.len()];
        let mut log_probs: Vec<Option<Var>> = vec![None; self.subs.len()];
        for &i in self.graph.order() {
            let parents = self.parents_var(tape, i, &actions)?;
            let out = self.subs[i].sample_taped(tape, state, parents, &noise.0[i], trainable)?;
            actions[i] = Some(out.action);
            log_probs[i] = Some(out.log_prob);
        }
        let node_log_probs: Vec<Var> = log_probs.into_iter().map(|v| v.expect("sampled")).collect();
        let action = self.assemble(tape, &actions)?;
        let log_prob = self.sum_in_order(tape, &node_log_probs)?;
        Ok(TapedJointSample { action, node_log_probs, log_prob })
    }

    fn check_state(&self, state: &Tensor) -> Result<()> {
        if state.cols() != self.state_dim {
            return Err(Error::shape(format!("state width {} but policy expects {}", state.cols(), self.state_dim)));
        }
        Ok(())
    }

    /// Untaped joint sample; `state` is `[s]` or `[b, s]`.
    pub fn joint_sample(&self, state: &Tensor, noise: &NodeNoise) -> Result<JointSample> {
        let mut tape = Tape::new();
        let s = tape.constant(state.as_row()?);
        let out = self.sample_taped(&mut tape, s, noise, false)?;
        let node_log_probs = self
            .graph
            .order()
            .iter()
            .map(|&i| (self.subs[i].node_id.clone(), tape.value(out.node_log_probs[i]).clone()))
            .collect();
        let mut action = tape.value(out.action).clone();
        if state.rank() == 1 {
            action = action.reshape(vec![self.action_dim()])?;
        }
        Ok(JointSample { action, node_log_probs, log_prob: tape.value(out.log_prob).clone() })
    }

    /// Joint log-density of given actions, returning `(joint, per node)` vars.
    pub fn log_prob_taped(&self, tape: &mut Tape, state: Var, action: &Tensor, trainable: bool) -> Result<(Var, Vec<Var>)> {
        self.check_state(tape.value(state))?;
        let action = action.as_row()?;
        if action.cols() != self.action_dim() || action.rows() != tape.value(state).rows() {
            return Err(Error::shape(format!(
                "action shape {:?} for {} states of a {}-dim policy",
                action.shape(),
                tape.value(state).rows(),
                self.action_dim()
            )));
        }
        let mut per_node: Vec<Option<Var>> = vec![None; self.subs.len()];
        for &i in self.graph.order() {
            let node = &self.graph.nodes()[i];
            let own = tensor::gather_cols(&action, &node.dims)?;
            let parent_cols = self.graph.parent_columns(i);
            let parents = if parent_cols.is_empty() {
                None
            } else {
                Some(tape.constant(tensor::gather_cols(&action, &parent_cols)?))
            };
            per_node[i] = Some(self.subs[i].log_prob_taped(tape, state, parents, &own, trainable)?);
        }
        let per_node: Vec<Var> = per_node.into_iter().map(|v| v.expect("visited")).collect();
        let joint = self.sum_in_order(tape, &per_node)?;
        Ok((joint, per_node))
    }

    /// `Σ_i log π_i(a_i | s, a_parents(i))`, `[b, 1]` (or `[1]` for a single state).
    pub fn joint_log_prob(&self, state: &Tensor, action: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = tape.constant(state.as_row()?);
        let (joint, _) = self.log_prob_taped(&mut tape, s, action, false)?;
        let out = tape.value(joint).clone();
        if state.rank() == 1 {
            out.reshape(vec![1])
        } else {
            Ok(out)
        }
    }

    /// Deterministic joint action: every node emits its mean given its parents' means.
    pub fn greedy_action(&self, state: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = tape.constant(state.as_row()?);
        self.check_state(tape.value(s))?;
        let mut actions: Vec<Option<Var>> = vec![None; self.subs.len()];
        for &i in self.graph.order() {
            let parents = self.parents_var(&mut tape, i, &actions)?;
            actions[i] = Some(self.subs[i].mean_action_taped(&mut tape, s, parents)?);
        }
        let a = self.assemble(&mut tape, &actions)?;
        let out = tape.value(a).clone();
        if state.rank() == 1 {
            out.reshape(vec![self.action_dim()])
        } else {
            Ok(out)
        }
    }

    /// Monte-Carlo entropy of the joint policy at one state, with per-node
    /// conditional entropies estimated on the same samples.
    pub fn entropy_estimate(&self, state: &Tensor, n_samples: usize, rng: &mut SeededRng) -> Result<EntropyEstimate> {
        if n_samples == 0 {
            return Err(Error::usage("entropy_estimate needs at least one sample"));
        }
        let row = state.as_row()?;
        if row.rows() != 1 {
            return Err(Error::shape("entropy_estimate takes a single state"));
        }
        const CHUNK: usize = 4096;
        let order: Vec<usize> = self.graph.order().to_vec();
        let mut node_sums = vec![0.0; self.subs.len()];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut done = 0;
        while done < n_samples {
            let b = CHUNK.min(n_samples - done);
            let states = Tensor::matrix(b, self.state_dim, row.data().repeat(b))?;
            let noise = self.draw_noise(b, rng);
            let mut tape = Tape::new();
            let s = tape.constant(states);
            let out = self.sample_taped(&mut tape, s, &noise, false)?;
            for &i in &order {
                node_sums[i] -= tape.value(out.node_log_probs[i]).sum();
            }
            for &lp in tape.value(out.log_prob).data() {
                sum -= lp;
                sum_sq += lp * lp;
            }
            done += b;
        }
        let n = n_samples as f64;
        let joint = sum / n;
        let var = (sum_sq / n - joint * joint).max(0.0);
        let per_node = order.iter().map(|&i| (self.subs[i].node_id.clone(), node_sums[i] / n)).collect();
        Ok(EntropyEstimate { joint, per_node, std_error: (var / n).sqrt(), samples: n_samples })
    }
}

impl Parameters for JointPolicy {
    fn params(&self) -> Vec<(ParamKey, &Tensor)> {
        self.subs.iter().flat_map(|s| s.net.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<(ParamKey, &mut Tensor)> {
        self.subs.iter_mut().flat_map(|s| s.net.params_mut()).collect()
    }
}

/// Free-function form of [`JointPolicy::joint_sample`], optionally recording on `tape`.
pub fn joint_sample(policy: &JointPolicy, state: &Tensor, noise: &NodeNoise, tape: Option<&mut Tape>) -> Result<JointSample> {
    match tape {
        None => policy.joint_sample(state, noise),
        Some(tape) => {
            let s = tape.constant(state.as_row()?);
            let out = policy.sample_taped(tape, s, noise, true)?;
            let node_log_probs = policy
                .graph
                .order()
                .iter()
                .map(|&i| (policy.subs[i].node_id.clone(), tape.value(out.node_log_probs[i]).clone()))
                .collect();
            Ok(JointSample {
                action: tape.value(out.action).clone(),
                node_log_probs,
                log_prob: tape.value(out.log_prob).clone(),
            })
        }
    }
}

pub fn joint_log_prob(policy: &JointPolicy, state: &Tensor, action: &Tensor) -> Result<Tensor> {
    policy.joint_log_prob(state, action)
}

pub fn entropy_estimate(policy: &JointPolicy, state: &Tensor, n_samples: usize, rng: &mut SeededRng) -> Result<EntropyEstimate> {
    policy.entropy_estimate(state, n_samples, rng)
}
