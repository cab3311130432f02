//! Proximal policy optimization over the sizing environment.
//!
//! Rollouts sample one episode per fresh goal, generalized advantage
//! estimation scores each step, and the clipped surrogate loss (plus entropy
//! bonus and value regression) is assembled on the autodiff tape sample by
//! sample, so one backward pass yields exact gradients for Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{Env, EnvError, EnvState};
use crate::mat::Mat;
use crate::policy::{greedy_action, sample_action, Binding, PolicyNet};
use crate::tensor::{Adam, Tape, TensorId};

/// Training hyperparameters. `validate` guards the documented ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub episodes_per_batch: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub eval_every_batches: usize,
    pub eval_goals: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch: 64,
            episodes_per_batch: 20,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            eval_every_batches: 50,
            eval_goals: 20,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.clip <= 0.0 {
            return Err(format!("clip ratio {} must be positive", self.clip));
        }
        if self.learning_rate <= 0.0 {
            return Err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.episodes_per_batch == 0 {
            return Err("epochs, minibatch, and episodes_per_batch must be nonzero".into());
        }
        if self.eval_every_batches == 0 || self.eval_goals == 0 {
            return Err("eval cadence and goal count must be nonzero".into());
        }
        Ok(())
    }
}

/// One decision point as stored during a rollout. `params_after` and
/// `achieved_after` describe the design right after the step landed.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Mat,
    pub spec_input: Vec<f64>,
    pub choices: Vec<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub params_after: Vec<f64>,
    pub achieved_after: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub samples: Vec<Sample>,
    pub reached_goal: bool,
    pub goal: Vec<f64>,
    pub initial_params: Vec<f64>,
    pub initial_achieved: Vec<f64>,
    pub final_params: Vec<f64>,
    pub final_achieved: Vec<f64>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum()
    }
}

/// Runs `count` fresh-goal episodes under the current policy. Returns the
/// episodes and the number of evaluator calls spent (one per reset, one per
/// step). An episode that trips an evaluator error is dropped with a warning.
pub fn collect_trajectories(
    env: &Env,
    net: &PolicyNet,
    count: usize,
    rng: &mut impl Rng,
) -> (Vec<Episode>, u64) {
    let mut episodes = Vec::with_capacity(count);
    let mut evals = 0u64;
    let mut attempts = 0usize;
    while episodes.len() < count && attempts < count.saturating_mul(3).max(3) {
        attempts += 1;
        let goal = env.sample_goal(rng);
        match run_episode(env, net, goal, rng) {
            Ok((episode, cost)) => {
                evals += cost;
                episodes.push(episode);
            }
            Err(e) => {
                log::warn!("dropping episode after evaluator error: {e}");
            }
        }
    }
    (episodes, evals)
}

fn run_episode(
    env: &Env,
    net: &PolicyNet,
    goal: Vec<f64>,
    rng: &mut impl Rng,
) -> Result<(Episode, u64), EnvError> {
    let mut state = env.reset(goal)?;
    let initial_params = state.params.clone();
    let initial_achieved = state.achieved.clone();
    let mut evals = 1u64;
    let mut samples = Vec::new();
    let mut reached = false;
    while !state.done {
        let features = env.features(&state);
        let spec_input = env.spec_input(&state);
        let out = net.act(env.adjacency(), &features, &spec_input);
        let (choices, log_prob) = sample_action(&out, rng);
        let outcome = env.step(&mut state, &choices)?;
        evals += 1;
        samples.push(Sample {
            features,
            spec_input,
            choices,
            log_prob,
            reward: outcome.reward,
            value: out.value,
            params_after: state.params.clone(),
            achieved_after: state.achieved.clone(),
        });
        reached = outcome.reached_goal;
    }
    Ok((
        Episode {
            samples,
            reached_goal: reached,
            goal: state.goal.clone(),
            initial_params,
            initial_achieved,
            final_params: state.params.clone(),
            final_achieved: state.achieved.clone(),
        },
        evals,
    ))
}

/// Generalized advantage estimation over one episode, bootstrapping a zero
/// value past the last step (terminal and truncated episodes alike).
/// Returns (advantages, returns) with returns = advantages + values.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * lambda * carry;
        advantages[t] = carry;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales a batch of advantages to zero mean, unit spread.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) * scale;
    }
}

/// One flattened, advantage-scored decision point ready for the loss.
#[derive(Debug, Clone)]
pub struct FlatSample {
    pub features: Mat,
    pub spec_input: Vec<f64>,
    pub choices: Vec<usize>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Flattens episodes into loss-ready samples with batch-normalized
/// advantages.
pub fn flatten_batch(episodes: &[Episode], gamma: f64, lambda: f64) -> Vec<FlatSample> {
    let mut flat = Vec::new();
    for ep in episodes {
        let rewards: Vec<f64> = ep.samples.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = ep.samples.iter().map(|s| s.value).collect();
        let (advantages, returns) = compute_gae(&rewards, &values, gamma, lambda);
        for ((s, adv), ret) in ep.samples.iter().zip(advantages).zip(returns) {
            flat.push(FlatSample {
                features: s.features.clone(),
                spec_input: s.spec_input.clone(),
                choices: s.choices.clone(),
                old_log_prob: s.log_prob,
                advantage: adv,
                ret,
            });
        }
    }
    let mut advs: Vec<f64> = flat.iter().map(|s| s.advantage).collect();
    normalize_advantages(&mut advs);
    for (s, a) in flat.iter_mut().zip(advs) {
        s.advantage = a;
    }
    flat
}

/// Loss weights for the surrogate assembly.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub clip: f64,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
}

/// Records the full PPO loss for `samples` on `tape`:
/// -mean(min(b A, clip(b) A)) - c_e mean(entropy) + c_v mean((V - R)^2),
/// with b the new/old probability ratio. Returns the scalar loss id.
pub fn ppo_loss_on_tape(
    tape: &mut Tape,
    net: &PolicyNet,
    binding: &Binding,
    a_star: &Mat,
    samples: &[FlatSample],
    weights: &LossWeights,
) -> TensorId {
    assert!(!samples.is_empty(), "loss needs at least one sample");
    let inv_b = 1.0 / samples.len() as f64;
    let mut surr_total: Option<TensorId> = None;
    let mut entropy_total: Option<TensorId> = None;
    let mut value_total: Option<TensorId> = None;
    for s in samples {
        let ids = net.forward(tape, binding, a_star, &s.features, &s.spec_input);
        let log_probs = tape.log_softmax_rows(ids.logits);
        let probs = tape.softmax_rows(ids.logits);

        let mut onehot = Mat::zeros(s.choices.len(), 3);
        for (r, &c) in s.choices.iter().enumerate() {
            onehot.set(r, c, 1.0);
        }
        let onehot = tape.constant(onehot);
        let picked = tape.mul(log_probs, onehot);
        let new_log_prob = tape.sum(picked);

        let old = tape.constant(Mat::from_rows(&[vec![s.old_log_prob]]));
        let diff = tape.sub(new_log_prob, old);
        let ratio = tape.exp(diff);
        let unclipped = tape.mul_scalar(ratio, s.advantage);
        let clipped_ratio = tape.clip(ratio, 1.0 - weights.clip, 1.0 + weights.clip);
        let clipped = tape.mul_scalar(clipped_ratio, s.advantage);
        let surr = tape.min_elem(unclipped, clipped);
        surr_total = Some(match surr_total {
            Some(acc) => tape.add(acc, surr),
            None => surr,
        });

        // sum(p log p) is the negated entropy; it enters the loss with a
        // positive coefficient.
        let p_logp = tape.mul(probs, log_probs);
        let neg_entropy = tape.sum(p_logp);
        entropy_total = Some(match entropy_total {
            Some(acc) => tape.add(acc, neg_entropy),
            None => neg_entropy,
        });

        let target = tape.constant(Mat::from_rows(&[vec![s.ret]]));
        let err = tape.sub(ids.value, target);
        let sq = tape.mul(err, err);
        value_total = Some(match value_total {
            Some(acc) => tape.add(acc, sq),
            None => sq,
        });
    }
    let policy_term = tape.mul_scalar(surr_total.unwrap(), -inv_b);
    let entropy_term = tape.mul_scalar(entropy_total.unwrap(), weights.entropy_coeff * inv_b);
    let value_term = tape.mul_scalar(value_total.unwrap(), weights.value_coeff * inv_b);
    let partial = tape.add(policy_term, entropy_term);
    tape.add(partial, value_term)
}

/// Per-update diagnostics averaged over every minibatch step.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub value_loss: f64,
}

/// Runs the epoch/minibatch schedule over one batch of samples, stepping
/// Adam after each minibatch. A non-finite loss aborts with diagnostics.
pub fn ppo_update(
    env: &Env,
    net: &mut PolicyNet,
    samples: &[FlatSample],
    config: &PpoConfig,
    adam: &mut Adam,
    rng: &mut impl Rng,
) -> Result<UpdateStats, String> {
    if samples.is_empty() {
        return Err("ppo update on an empty batch".into());
    }
    let weights = LossWeights {
        clip: config.clip,
        entropy_coeff: config.entropy_coeff,
        value_coeff: config.value_coeff,
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    let mut steps = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let minibatch: Vec<FlatSample> =
                chunk.iter().map(|&i| samples[i].clone()).collect();
            let mut tape = Tape::new();
            let binding = net.bind(&mut tape);
            let loss = ppo_loss_on_tape(
                &mut tape,
                net,
                &binding,
                env.adjacency(),
                &minibatch,
                &weights,
            );
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(format!(
                    "non-finite loss {loss_value} on a minibatch of {} (adam step {})",
                    minibatch.len(),
                    adam.timestep()
                ));
            }
            tape.backward(loss).map_err(|e| e.to_string())?;
            let grads: Vec<Mat> =
                binding.ids().iter().map(|&id| tape.grad(id).clone()).collect();
            adam.step(net.params_mut(), &grads);

            let (ratio_sum, clipped, entropy_sum, value_sum) =
                minibatch_diagnostics(net, &minibatch, config.clip, env);
            let n = minibatch.len() as f64;
            stats.loss += loss_value;
            stats.mean_ratio += ratio_sum / n;
            stats.clip_fraction += clipped / n;
            stats.entropy += entropy_sum / n;
            stats.value_loss += value_sum / n;
            steps += 1;
        }
    }
    let steps = steps as f64;
    stats.loss /= steps;
    stats.mean_ratio /= steps;
    stats.clip_fraction /= steps;
    stats.entropy /= steps;
    stats.value_loss /= steps;
    Ok(stats)
}

/// Ratio, clip, entropy, and value diagnostics under the post-step weights.
fn minibatch_diagnostics(
    net: &PolicyNet,
    minibatch: &[FlatSample],
    clip: f64,
    env: &Env,
) -> (f64, f64, f64, f64) {
    let mut ratio_sum = 0.0;
    let mut clipped = 0.0;
    let mut entropy_sum = 0.0;
    let mut value_sum = 0.0;
    for s in minibatch {
        let out = net.act(env.adjacency(), &s.features, &s.spec_input);
        let lp = crate::policy::log_prob_of(&out.action_probs, &s.choices);
        let ratio = (lp - s.old_log_prob).exp();
        ratio_sum += ratio;
        if ratio < 1.0 - clip || ratio > 1.0 + clip {
            clipped += 1.0;
        }
        let mut h = 0.0;
        for r in 0..out.action_probs.rows() {
            for c in 0..3 {
                let p = out.action_probs.get(r, c);
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        entropy_sum += h;
        let err = out.value - s.ret;
        value_sum += err * err;
    }
    (ratio_sum, clipped, entropy_sum, value_sum)
}

/// Per-episode training record.
#[derive(Debug, Clone)]
pub struct EpisodeStat {
    pub episode: usize,
    pub batch: usize,
    pub reward: f64,
    pub steps: usize,
    pub reached: bool,
}

/// Per-batch optimizer record.
#[derive(Debug, Clone)]
pub struct BatchStat {
    pub batch: usize,
    pub episodes_done: usize,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub stats: UpdateStats,
    /// Seconds since training started, taken after the update.
    pub wall_secs: f64,
}

/// Periodic greedy evaluation record.
#[derive(Debug, Clone)]
pub struct EvalStat {
    pub after_episode: usize,
    pub accuracy: f64,
    pub mean_steps: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub net: PolicyNet,
    pub episodes: Vec<EpisodeStat>,
    pub batches: Vec<BatchStat>,
    pub evals: Vec<EvalStat>,
    pub env_evals: u64,
}

/// Goal-seeking training loop: batches of fresh-goal episodes, PPO updates,
/// periodic greedy evaluation on a fixed goal set, optional checkpoint flush
/// after each evaluation.
pub fn train(
    env: &Env,
    mut net: PolicyNet,
    config: &PpoConfig,
    total_episodes: usize,
    rollout_rng: &mut impl Rng,
    shuffle_rng: &mut impl Rng,
    eval_goals: &[Vec<f64>],
    checkpoint: Option<(&Path, &str)>,
) -> Result<TrainResult, String> {
    config.validate()?;
    let started = std::time::Instant::now();
    let mut adam = Adam::new(config.learning_rate);
    let mut episodes_done = 0usize;
    let mut batch_index = 0usize;
    let mut episode_stats = Vec::new();
    let mut batch_stats = Vec::new();
    let mut eval_stats = Vec::new();
    let mut env_evals = 0u64;
    while episodes_done < total_episodes {
        let want = config.episodes_per_batch.min(total_episodes - episodes_done);
        let (episodes, evals) = collect_trajectories(env, &net, want, rollout_rng);
        if episodes.is_empty() {
            return Err("trajectory collection produced no episodes".into());
        }
        env_evals += evals;
        batch_index += 1;
        for ep in &episodes {
            episodes_done += 1;
            episode_stats.push(EpisodeStat {
                episode: episodes_done,
                batch: batch_index,
                reward: ep.total_reward(),
                steps: ep.samples.len(),
                reached: ep.reached_goal,
            });
        }
        let mean_reward =
            episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        let mean_len =
            episodes.iter().map(|e| e.samples.len()).sum::<usize>() as f64 / episodes.len() as f64;
        let flat = flatten_batch(&episodes, config.gamma, config.lambda);
        let stats = ppo_update(env, &mut net, &flat, config, &mut adam, shuffle_rng)?;
        batch_stats.push(BatchStat {
            batch: batch_index,
            episodes_done,
            mean_reward,
            mean_len,
            stats,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        if batch_index % config.eval_every_batches == 0 {
            let report = deployment_accuracy(env, &net, eval_goals)
                .map_err(|e| format!("evaluation rollout failed: {e}"))?;
            log::info!(
                "batch {batch_index}: episode {episodes_done}, mean reward {mean_reward:.3}, accuracy {:.2}",
                report.accuracy
            );
            eval_stats.push(EvalStat {
                after_episode: episodes_done,
                accuracy: report.accuracy,
                mean_steps: report.mean_steps,
            });
            if let Some((path, hash)) = checkpoint {
                net.save(path, hash).map_err(|e| e.to_string())?;
            }
        }
    }
    if let Some((path, hash)) = checkpoint {
        net.save(path, hash).map_err(|e| e.to_string())?;
    }
    Ok(TrainResult {
        net,
        episodes: episode_stats,
        batches: batch_stats,
        evals: eval_stats,
        env_evals,
    })
}

/// One greedy rollout step trace entry.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub params: Vec<f64>,
    pub achieved: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct DeployTrace {
    pub goal: Vec<f64>,
    pub initial_params: Vec<f64>,
    pub initial_achieved: Vec<f64>,
    pub steps: Vec<TraceStep>,
    pub reached_goal: bool,
    pub final_params: Vec<f64>,
    pub final_achieved: Vec<f64>,
    pub env_evals: u64,
}

/// Rolls an episode with an arbitrary step chooser. The policy-independent
/// core of deployment; baselines and tests reuse it.
pub fn rollout_with(
    env: &Env,
    goal: Vec<f64>,
    mut choose: impl FnMut(&EnvState) -> Vec<usize>,
) -> Result<DeployTrace, EnvError> {
    let mut state = env.reset(goal)?;
    let mut trace = DeployTrace {
        goal: state.goal.clone(),
        initial_params: state.params.clone(),
        initial_achieved: state.achieved.clone(),
        steps: Vec::new(),
        reached_goal: false,
        final_params: state.params.clone(),
        final_achieved: state.achieved.clone(),
        env_evals: 1,
    };
    while !state.done {
        let choices = choose(&state);
        let outcome = env.step(&mut state, &choices)?;
        trace.env_evals += 1;
        trace.steps.push(TraceStep {
            params: state.params.clone(),
            achieved: state.achieved.clone(),
            reward: outcome.reward,
        });
        trace.reached_goal = outcome.reached_goal;
    }
    trace.final_params = state.params.clone();
    trace.final_achieved = state.achieved.clone();
    Ok(trace)
}

/// Deterministic argmax rollout toward one goal.
pub fn greedy_rollout(env: &Env, net: &PolicyNet, goal: Vec<f64>) -> Result<DeployTrace, EnvError> {
    rollout_with(env, goal, |state| {
        let out = net.act(env.adjacency(), &env.features(state), &env.spec_input(state));
        greedy_action(&out)
    })
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub accuracy: f64,
    /// Mean steps over successful goals; 0.0 when nothing succeeded.
    pub mean_steps: f64,
    pub successes: usize,
    pub goals: usize,
}

/// Greedy success rate over a goal set, with mean steps-to-success.
pub fn deployment_accuracy(
    env: &Env,
    net: &PolicyNet,
    goals: &[Vec<f64>],
) -> Result<AccuracyReport, EnvError> {
    let mut successes = 0usize;
    let mut step_sum = 0usize;
    for goal in goals {
        let trace = greedy_rollout(env, net, goal.clone())?;
        if trace.reached_goal {
            successes += 1;
            step_sum += trace.steps.len();
        }
    }
    let mean_steps = if successes > 0 { step_sum as f64 / successes as f64 } else { 0.0 };
    Ok(AccuracyReport {
        accuracy: successes as f64 / goals.len().max(1) as f64,
        mean_steps,
        successes,
        goals: goals.len(),
    })
}

/// Figure-of-merit training outcome.
#[derive(Debug)]
pub struct FomResult {
    pub net: PolicyNet,
    pub best_fom: f64,
    pub best_params: Vec<f64>,
    pub best_achieved: Vec<f64>,
    pub final_fom: f64,
    pub final_params: Vec<f64>,
    pub env_evals: u64,
    pub episodes: Vec<EpisodeStat>,
    pub fom_curve: Vec<(u64, f64)>,
}

/// Trains in figure-of-merit mode under a hard evaluator-call budget. Every
/// evaluation seen during training updates the running best; a final greedy
/// rollout (also inside the budget) gives the deployed design.
pub fn train_fom(
    env: &Env,
    mut net: PolicyNet,
    config: &PpoConfig,
    eval_budget: u64,
    rollout_rng: &mut impl Rng,
    shuffle_rng: &mut impl Rng,
) -> Result<FomResult, String> {
    config.validate()?;
    // In FoM mode the observation's goal slot holds the fixed reference
    // point, so every episode sees the same target.
    let (refs, fom_weights) = match &env.mode {
        crate::env::RewardMode::FigureOfMerit { refs, weights } => {
            (refs.clone(), weights.clone())
        }
        _ => return Err("figure-of-merit training needs a figure-of-merit environment".into()),
    };
    let episode_cost = env.max_episode_len as u64 + 1;
    if eval_budget < 2 * episode_cost {
        return Err(format!(
            "budget {eval_budget} cannot cover one training episode plus deployment ({})",
            2 * episode_cost
        ));
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut best_fom = f64::NEG_INFINITY;
    let mut best_params = Vec::new();
    let mut best_achieved = Vec::new();
    let mut fom_curve = Vec::new();
    let mut env_evals = 0u64;
    let mut episodes_done = 0usize;
    let mut batch_index = 0usize;
    let mut episode_stats = Vec::new();
    // Reserve the deployment rollout inside the same budget.
    let training_budget = eval_budget - episode_cost;
    loop {
        let affordable = ((training_budget - env_evals) / episode_cost) as usize;
        let want = config.episodes_per_batch.min(affordable);
        if want == 0 {
            break;
        }
        let mut episodes = Vec::with_capacity(want);
        for _ in 0..want {
            let (episode, cost) = run_episode(env, &net, refs.clone(), rollout_rng)
                .map_err(|e| format!("rollout failed: {e}"))?;
            env_evals += cost;
            episodes.push(episode);
        }
        batch_index += 1;
        for ep in &episodes {
            episodes_done += 1;
            episode_stats.push(EpisodeStat {
                episode: episodes_done,
                batch: batch_index,
                reward: ep.total_reward(),
                steps: ep.samples.len(),
                reached: false,
            });
            // Every evaluator call, the reset included, competes for best-seen.
            let mut consider = |params: &[f64], achieved: &[f64]| {
                let fom = crate::env::fom_value(achieved, &fom_weights);
                if fom > best_fom {
                    best_fom = fom;
                    best_params = params.to_vec();
                    best_achieved = achieved.to_vec();
                }
            };
            consider(&ep.initial_params, &ep.initial_achieved);
            for s in &ep.samples {
                consider(&s.params_after, &s.achieved_after);
            }
            fom_curve.push((env_evals, best_fom));
        }
        let flat = flatten_batch(&episodes, config.gamma, config.lambda);
        ppo_update(env, &mut net, &flat, config, &mut adam, shuffle_rng)?;
    }
    let trace = rollout_with(env, refs.clone(), |state| {
        let out = net.act(env.adjacency(), &env.features(state), &env.spec_input(state));
        greedy_action(&out)
    })
    .map_err(|e| format!("deployment rollout failed: {e}"))?;
    env_evals += trace.env_evals;
    let final_fom = crate::env::fom_value(&trace.final_achieved, &fom_weights);
    for step in &trace.steps {
        let fom = crate::env::fom_value(&step.achieved, &fom_weights);
        if fom > best_fom {
            best_fom = fom;
            best_params = step.params.clone();
            best_achieved = step.achieved.clone();
        }
    }
    fom_curve.push((env_evals, best_fom));
    Ok(FomResult {
        net,
        best_fom,
        best_params,
        best_achieved,
        final_fom,
        final_params: trace.final_params,
        env_evals,
        episodes: episode_stats,
        fom_curve,
    })
}
