//! Sizing environment: a fixed-topology circuit whose device parameters are
//! nudged step by step until the simulated performance meets a sampled target.

mod opamp;
mod rfpa;

pub use opamp::{opamp_env, OpampConstants, OpampEvaluator};
pub use rfpa::{rfpa_env, rfpa_fom_mode, Fidelity, RfpaConstants, RfpaEvaluator};

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::mat::Mat;
use crate::netlist::{
    self, build_graph, node_features, normalized_adjacency, CircuitGraph, Netlist, NetlistError,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("netlist problem: {0}")]
    Netlist(#[from] NetlistError),
    #[error("device {0} missing from netlist")]
    MissingDevice(String),
    #[error("expected {expected} specification values, got {got}")]
    SpecLength { got: usize, expected: usize },
    #[error("specification {name} must be positive, got {value}")]
    NonPositiveSpec { name: String, value: f64 },
    #[error("expected {expected} action choices, got {got}")]
    ActionLength { got: usize, expected: usize },
    #[error("action choice {0} out of range (valid: 0, 1, 2)")]
    BadChoice(usize),
    #[error("episode already finished; reset before stepping again")]
    EpisodeOver,
    #[error("configuration: {0}")]
    Config(String),
}

/// Replaces the sampling range of the named metric, for configuration
/// overrides applied before an evaluator is boxed into an environment.
pub fn override_spec_range(
    defs: &mut [SpecDef],
    name: &str,
    lo: f64,
    hi: f64,
) -> Result<(), EnvError> {
    if !(lo > 0.0) || !(hi > lo) {
        return Err(EnvError::Config(format!(
            "sampling range for {name} must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    let def = defs
        .iter_mut()
        .find(|d| d.name == name)
        .ok_or_else(|| EnvError::Config(format!("no specification named {name}")))?;
    def.sample_lo = lo;
    def.sample_hi = hi;
    Ok(())
}

/// Whether a larger measured value is better or worse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

/// One performance metric: its target-sampling range and orientation.
#[derive(Debug, Clone)]
pub struct SpecDef {
    pub name: String,
    pub unit: String,
    pub direction: Direction,
    /// Target sampling bounds, inclusive.
    pub sample_lo: f64,
    pub sample_hi: f64,
    /// Sample and normalize on a log axis (quantities spanning decades).
    pub log_scaled: bool,
}

impl SpecDef {
    fn axis(&self, v: f64) -> f64 {
        if self.log_scaled {
            v.ln()
        } else {
            v
        }
    }

    /// Map a value into [0, 1] over the sampling range (outside values exceed it).
    pub fn normalize(&self, v: f64) -> f64 {
        let lo = self.axis(self.sample_lo);
        let hi = self.axis(self.sample_hi);
        (self.axis(v) - lo) / (hi - lo)
    }

    /// True when `achieved` satisfies a target of `goal` on this metric.
    pub fn met(&self, achieved: f64, goal: f64) -> bool {
        match self.direction {
            Direction::Maximize => achieved >= goal,
            Direction::Minimize => achieved <= goal,
        }
    }
}

/// Normalized shortfall of `achieved` against `goal`: each metric contributes
/// (achieved - goal) / (achieved + goal), orientation-flipped for Minimize and
/// clipped to zero once satisfied, so every term lies in (-1, 0]. A sum of
/// exactly zero means every target is met and the reward becomes `bonus`
/// (replacing the sum, not adding to it).
pub fn reward(
    achieved: &[f64],
    goal: &[f64],
    defs: &[SpecDef],
    bonus: f64,
) -> Result<f64, EnvError> {
    if achieved.len() != defs.len() || goal.len() != defs.len() {
        return Err(EnvError::SpecLength {
            got: achieved.len().min(goal.len()),
            expected: defs.len(),
        });
    }
    let mut total = 0.0;
    for ((&a, &g), def) in achieved.iter().zip(goal).zip(defs) {
        for (label, v) in [("achieved", a), ("goal", g)] {
            if v <= 0.0 {
                return Err(EnvError::NonPositiveSpec {
                    name: format!("{} {}", label, def.name),
                    value: v,
                });
            }
        }
        let diff = match def.direction {
            Direction::Maximize => (a - g) / (a + g),
            Direction::Minimize => (g - a) / (a + g),
        };
        total += diff.min(0.0);
    }
    Ok(if total == 0.0 { bonus } else { total })
}

/// True when every metric of `achieved` satisfies `goal`.
pub fn dominates(achieved: &[f64], goal: &[f64], defs: &[SpecDef]) -> bool {
    defs.iter()
        .zip(achieved)
        .zip(goal)
        .all(|((def, &a), &g)| def.met(a, g))
}

/// Weighted normalized surplus of `achieved` over fixed reference levels:
/// sum of w_j * (v_j - ref_j) / (v_j + ref_j). Unlike goal-seeking reward the
/// terms are not clipped, so exceeding a reference keeps paying off.
pub fn fom_reward(
    achieved: &[f64],
    refs: &[f64],
    weights: &[f64],
    defs: &[SpecDef],
) -> Result<f64, EnvError> {
    if achieved.len() != defs.len() || refs.len() != defs.len() || weights.len() != defs.len() {
        return Err(EnvError::SpecLength {
            got: achieved.len().min(refs.len()).min(weights.len()),
            expected: defs.len(),
        });
    }
    let mut total = 0.0;
    for (((&v, &r), &w), def) in achieved.iter().zip(refs).zip(weights).zip(defs) {
        for (label, x) in [("achieved", v), ("reference", r)] {
            if x <= 0.0 {
                return Err(EnvError::NonPositiveSpec {
                    name: format!("{} {}", label, def.name),
                    value: x,
                });
            }
        }
        total += w * (v - r) / (v + r);
    }
    Ok(total)
}

/// Plain weighted sum of metric values, the scale used when logging
/// figure-of-merit progress.
pub fn fom_value(achieved: &[f64], weights: &[f64]) -> f64 {
    achieved.iter().zip(weights).map(|(&v, &w)| v * w).sum()
}

/// Analytical stand-in for a circuit simulator.
pub trait Evaluator {
    fn spec_defs(&self) -> &[SpecDef];
    /// Measure performance at the given parameter values (same order as the
    /// netlist parameter space).
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, EnvError>;
}

/// How step rewards are produced.
#[derive(Debug, Clone)]
pub enum RewardMode {
    /// Chase a per-episode target vector; meeting it ends the episode with a bonus.
    GoalSeek { bonus: f64 },
    /// Climb a weighted figure of merit; episodes always run to full length.
    FigureOfMerit { refs: Vec<f64>, weights: Vec<f64> },
}

/// A live episode: current parameters, their measured performance, the target.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub params: Vec<f64>,
    pub achieved: Vec<f64>,
    pub goal: Vec<f64>,
    pub steps: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Episode ended because every target was met (never set in FoM mode).
    pub reached_goal: bool,
}

/// Fixed topology plus evaluator plus episode rules.
pub struct Env {
    graph: CircuitGraph,
    a_star: Mat,
    supply_voltages: BTreeMap<String, f64>,
    evaluator: Box<dyn Evaluator>,
    pub mode: RewardMode,
    pub max_episode_len: usize,
}

impl Env {
    pub fn new(
        netlist: &Netlist,
        evaluator: Box<dyn Evaluator>,
        mode: RewardMode,
        max_episode_len: usize,
    ) -> Result<Self, EnvError> {
        let graph = build_graph(netlist)?;
        let a_star = normalized_adjacency(&graph);
        Ok(Env {
            supply_voltages: netlist.supply_voltage_map(),
            graph,
            a_star,
            evaluator,
            mode,
            max_episode_len,
        })
    }

    pub fn graph(&self) -> &CircuitGraph {
        &self.graph
    }

    pub fn param_space(&self) -> &netlist::ParamSpace {
        self.graph.param_space()
    }

    pub fn spec_defs(&self) -> &[SpecDef] {
        self.evaluator.spec_defs()
    }

    pub fn evaluator(&self) -> &dyn Evaluator {
        self.evaluator.as_ref()
    }

    /// Symmetrically normalized adjacency with self-loops, fixed per topology.
    pub fn adjacency(&self) -> &Mat {
        &self.a_star
    }

    pub fn param_count(&self) -> usize {
        self.param_space().len()
    }

    pub fn spec_count(&self) -> usize {
        self.spec_defs().len()
    }

    /// Draw a target vector uniformly over each metric's sampling range
    /// (log-uniform for log-scaled metrics).
    pub fn sample_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.spec_defs()
            .iter()
            .map(|def| {
                let lo = def.axis(def.sample_lo);
                let hi = def.axis(def.sample_hi);
                let v = rng.random_range(lo..=hi);
                if def.log_scaled {
                    v.exp()
                } else {
                    v
                }
            })
            .collect()
    }

    /// Start an episode at mid-range parameters.
    pub fn reset(&self, goal: Vec<f64>) -> Result<EnvState, EnvError> {
        if goal.len() != self.spec_count() {
            return Err(EnvError::SpecLength {
                got: goal.len(),
                expected: self.spec_count(),
            });
        }
        let params = self.param_space().mid_init();
        let achieved = self.evaluator.evaluate(&params)?;
        Ok(EnvState {
            params,
            achieved,
            goal,
            steps: 0,
            done: false,
        })
    }

    /// Apply one per-parameter choice vector (0 = decrease, 1 = keep,
    /// 2 = increase), re-measure, and score the new state.
    pub fn step(&self, state: &mut EnvState, choices: &[usize]) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeOver);
        }
        if choices.len() != self.param_count() {
            return Err(EnvError::ActionLength {
                got: choices.len(),
                expected: self.param_count(),
            });
        }
        if let Some(&bad) = choices.iter().find(|&&c| c > 2) {
            return Err(EnvError::BadChoice(bad));
        }
        state.params = self.param_space().apply(&state.params, choices);
        state.achieved = self.evaluator.evaluate(&state.params)?;
        state.steps += 1;

        let (r, reached) = match &self.mode {
            RewardMode::GoalSeek { bonus } => {
                let r = reward(&state.achieved, &state.goal, self.spec_defs(), *bonus)?;
                (r, r == *bonus)
            }
            RewardMode::FigureOfMerit { refs, weights } => (
                fom_reward(&state.achieved, refs, weights, self.spec_defs())?,
                false,
            ),
        };
        state.done = reached || state.steps >= self.max_episode_len;
        Ok(StepOutcome {
            reward: r,
            done: state.done,
            reached_goal: reached,
        })
    }

    /// Node feature matrix for the current parameters.
    pub fn features(&self, state: &EnvState) -> Mat {
        node_features(&self.graph, &state.params, &self.supply_voltages)
            .expect("parameter vector length fixed by the space")
    }

    /// Flat observation for the spec branch: normalized goal values followed by
    /// normalized achieved values. Achieved values can leave the sampling range
    /// mid-episode, so they are clamped to [-1, 2] to keep the input bounded.
    pub fn spec_input(&self, state: &EnvState) -> Vec<f64> {
        let defs = self.spec_defs();
        let mut out = Vec::with_capacity(2 * defs.len());
        for (&g, def) in state.goal.iter().zip(defs) {
            out.push(def.normalize(g));
        }
        for (&a, def) in state.achieved.iter().zip(defs) {
            out.push(def.normalize(a).clamp(-1.0, 2.0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_spec(name: &str) -> SpecDef {
        SpecDef {
            name: name.into(),
            unit: String::new(),
            direction: Direction::Maximize,
            sample_lo: 1.0,
            sample_hi: 10.0,
            log_scaled: false,
        }
    }

    fn min_spec(name: &str) -> SpecDef {
        SpecDef {
            direction: Direction::Minimize,
            ..max_spec(name)
        }
    }

    mod rewards {
        use super::*;

        #[test]
        fn boundary_equality_earns_the_bonus() {
            let defs = [max_spec("gain")];
            assert_eq!(reward(&[400.0], &[400.0], &defs, 10.0).unwrap(), 10.0);
        }

        #[test]
        fn met_specs_clip_to_zero_and_shortfalls_accumulate() {
            let defs = [max_spec("gain"), max_spec("bw")];
            // First metric short by (250-500)/750 = -1/3, second met (clipped).
            let r = reward(&[250.0, 2.0], &[500.0, 1.0], &defs, 10.0).unwrap();
            assert!((r - (-1.0 / 3.0)).abs() < 1e-12, "r = {r}");
        }

        #[test]
        fn minimize_flips_the_difference() {
            let defs = [min_spec("power")];
            let r = reward(&[2e-3], &[1e-3], &defs, 10.0).unwrap();
            assert!((r - (-1.0 / 3.0)).abs() < 1e-12, "r = {r}");
        }

        #[test]
        fn bonus_replaces_the_sum_instead_of_adding() {
            let defs = [max_spec("gain"), min_spec("power")];
            // Both comfortably met; the raw surplus terms would be nonzero.
            let r = reward(&[900.0, 0.5e-3], &[400.0, 1e-3], &defs, 10.0).unwrap();
            assert_eq!(r, 10.0);
        }

        #[test]
        fn every_term_stays_in_unit_interval() {
            let defs = [max_spec("gain")];
            // Extreme shortfall approaches but never reaches -1.
            let r = reward(&[1e-6], &[1e6], &defs, 10.0).unwrap();
            assert!(r > -1.0 && r < 0.0, "r = {r}");
        }

        #[test]
        fn nonpositive_values_are_rejected() {
            let defs = [max_spec("gain")];
            assert!(matches!(
                reward(&[0.0], &[1.0], &defs, 10.0),
                Err(EnvError::NonPositiveSpec { .. })
            ));
            assert!(matches!(
                reward(&[1.0], &[-2.0], &defs, 10.0),
                Err(EnvError::NonPositiveSpec { .. })
            ));
        }

        #[test]
        fn improving_a_metric_never_lowers_the_reward() {
            let defs = [max_spec("gain"), min_spec("power")];
            let goal = [5.0, 2.0];
            let base = reward(&[3.0, 4.0], &goal, &defs, 10.0).unwrap();
            let better_gain = reward(&[3.5, 4.0], &goal, &defs, 10.0).unwrap();
            let better_power = reward(&[3.0, 3.0], &goal, &defs, 10.0).unwrap();
            assert!(better_gain >= base);
            assert!(better_power >= base);
        }

        #[test]
        fn fom_surplus_is_weighted_and_unclipped() {
            let defs = [max_spec("pout"), max_spec("eff")];
            let weights = [1.0, 3.0];
            let refs = [2.0, 0.5];
            // At the reference point the score is zero.
            let at_ref = fom_reward(&[2.0, 0.5], &refs, &weights, &defs).unwrap();
            assert_eq!(at_ref, 0.0);
            // Equal relative surplus counts three times as much on the second metric.
            let p_up = fom_reward(&[3.0, 0.5], &refs, &weights, &defs).unwrap();
            let e_up = fom_reward(&[2.0, 0.75], &refs, &weights, &defs).unwrap();
            assert!((e_up - 3.0 * p_up).abs() < 1e-12);
            // Exceeding the reference keeps paying (no clipping).
            assert!(p_up > 0.0);
        }

        #[test]
        fn fom_value_is_the_plain_weighted_sum() {
            assert_eq!(fom_value(&[2.5, 0.6], &[1.0, 3.0]), 2.5 + 1.8);
        }

        #[test]
        fn dominance_matches_met_on_every_axis() {
            let defs = [max_spec("gain"), min_spec("power")];
            assert!(dominates(&[5.0, 1.0], &[5.0, 2.0], &defs));
            assert!(!dominates(&[4.9, 1.0], &[5.0, 2.0], &defs));
            assert!(!dominates(&[5.0, 2.1], &[5.0, 2.0], &defs));
        }
    }

    mod episodes {
        use super::*;
        use crate::netlist::parse_netlist;

        /// One resistor; spec value equals its resistance.
        struct Identity;

        impl Evaluator for Identity {
            fn spec_defs(&self) -> &[SpecDef] {
                static DEFS: std::sync::OnceLock<Vec<SpecDef>> = std::sync::OnceLock::new();
                DEFS.get_or_init(|| {
                    vec![SpecDef {
                        name: "value".into(),
                        unit: "ohm".into(),
                        direction: Direction::Maximize,
                        sample_lo: 1.0,
                        sample_hi: 9.0,
                        log_scaled: false,
                    }]
                })
            }

            fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, EnvError> {
                Ok(vec![params[0]])
            }
        }

        fn tiny_env(mode: RewardMode, max_len: usize) -> Env {
            let nl = parse_netlist(
                "DEVICE R1 RES a b PARAM r=5 BOUNDS 1 9 STEP 1\nSUPPLY GND b\n",
            )
            .unwrap();
            Env::new(&nl, Box::new(Identity), mode, max_len).unwrap()
        }

        #[test]
        fn reset_starts_mid_range_and_measures() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 5);
            let state = env.reset(vec![7.0]).unwrap();
            assert_eq!(state.params, vec![5.0]);
            assert_eq!(state.achieved, vec![5.0]);
            assert_eq!(state.steps, 0);
            assert!(!state.done);
        }

        #[test]
        fn keep_choice_leaves_parameters_alone() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 5);
            let mut state = env.reset(vec![9.0]).unwrap();
            let out = env.step(&mut state, &[1]).unwrap();
            assert_eq!(state.params, vec![5.0]);
            assert_eq!(state.steps, 1);
            assert!(out.reward < 0.0);
        }

        #[test]
        fn reaching_the_goal_ends_with_the_bonus() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 50);
            let mut state = env.reset(vec![7.0]).unwrap();
            let r = env.step(&mut state, &[2]).unwrap();
            assert!(!r.done, "one step up reaches 6, goal is 7: {r:?}");
            let r = env.step(&mut state, &[2]).unwrap();
            assert!(r.done && r.reached_goal);
            assert_eq!(r.reward, 10.0);
            assert!(env.step(&mut state, &[1]).is_err());
        }

        #[test]
        fn truncation_ends_without_goal_flag() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 2);
            let mut state = env.reset(vec![9.0]).unwrap();
            env.step(&mut state, &[2]).unwrap();
            let last = env.step(&mut state, &[2]).unwrap();
            assert!(last.done && !last.reached_goal);
        }

        #[test]
        fn fom_mode_runs_full_length_even_past_references() {
            let env = tiny_env(
                RewardMode::FigureOfMerit {
                    refs: vec![2.0],
                    weights: vec![1.0],
                },
                3,
            );
            let mut state = env.reset(vec![2.0]).unwrap();
            for step in 0..3 {
                let out = env.step(&mut state, &[2]).unwrap();
                assert!(out.reward > 0.0, "already above the reference");
                assert!(!out.reached_goal);
                assert_eq!(out.done, step == 2);
            }
        }

        #[test]
        fn spec_input_orders_goal_before_achieved() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 5);
            let state = env.reset(vec![9.0]).unwrap();
            let obs = env.spec_input(&state);
            // Goal 9 normalizes to 1, achieved 5 to 0.5 over [1, 9].
            assert_eq!(obs, vec![1.0, 0.5]);
        }

        #[test]
        fn bad_actions_are_rejected() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 5);
            let mut state = env.reset(vec![9.0]).unwrap();
            assert!(matches!(
                env.step(&mut state, &[3]),
                Err(EnvError::BadChoice(3))
            ));
            assert!(matches!(
                env.step(&mut state, &[1, 1]),
                Err(EnvError::ActionLength { .. })
            ));
        }

        #[test]
        fn goal_sampling_respects_bounds() {
            let env = tiny_env(RewardMode::GoalSeek { bonus: 10.0 }, 5);
            let mut rng = crate::rng::stream_rng(7, "sampler");
            for _ in 0..200 {
                let g = env.sample_goal(&mut rng);
                assert!(g[0] >= 1.0 && g[0] <= 9.0);
            }
        }
    }
}
