//! Search baselines over the same parameter space the policy works in:
//! a generational genetic algorithm and plain uniform random search. Both
//! run against an arbitrary objective (higher is better) and account for
//! every objective call, so budget-matched comparisons are exact.

use rand::Rng;

use crate::env::EnvError;
use crate::netlist::ParamSpace;

/// Objective wrapper: evaluate a design, higher is better.
pub type Objective<'a> = dyn FnMut(&[f64]) -> Result<f64, EnvError> + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Individuals per tournament; the fittest of the draw parents.
    pub tournament: usize,
    pub crossover_prob: f64,
    /// Per-gene mutation probability.
    pub mutation_prob: f64,
    /// Mutations move up to this many grid steps in either direction.
    pub mutation_span: usize,
    pub eval_budget: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 40,
            generations: 250,
            tournament: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.25,
            mutation_span: 4,
            eval_budget: u64::MAX,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.population < 2 {
            return Err("population needs at least two individuals".into());
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(format!(
                "tournament size {} must be in 1..={}",
                self.tournament, self.population
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob)
            || !(0.0..=1.0).contains(&self.mutation_prob)
        {
            return Err("crossover and mutation probabilities must be in [0, 1]".into());
        }
        if self.mutation_span == 0 {
            return Err("mutation span must be nonzero".into());
        }
        if self.eval_budget == 0 {
            return Err("evaluation budget must be nonzero".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub evals_used: u64,
    /// Objective calls spent when the success threshold was first met.
    pub evals_to_success: Option<u64>,
    /// Running best after each objective call: (calls so far, best value).
    pub curve: Vec<(u64, f64)>,
}

impl SearchOutcome {
    fn new() -> Self {
        SearchOutcome {
            best_params: Vec::new(),
            best_value: f64::NEG_INFINITY,
            evals_used: 0,
            evals_to_success: None,
            curve: Vec::new(),
        }
    }

    /// Accounts one objective call; returns true once success is reached.
    fn observe(&mut self, params: &[f64], value: f64, success_at: Option<f64>) -> bool {
        self.evals_used += 1;
        if value > self.best_value {
            self.best_value = value;
            self.best_params = params.to_vec();
        }
        self.curve.push((self.evals_used, self.best_value));
        if self.evals_to_success.is_none() {
            if let Some(threshold) = success_at {
                if value >= threshold {
                    self.evals_to_success = Some(self.evals_used);
                    return true;
                }
            }
        }
        false
    }
}

/// Generational genetic search: tournament selection, uniform crossover,
/// grid-step mutation with bound clamping. Stops at the success threshold,
/// the generation cap, or the evaluation budget, whichever lands first.
pub fn genetic_search(
    space: &ParamSpace,
    objective: &mut Objective,
    success_at: Option<f64>,
    config: &GaConfig,
    rng: &mut impl Rng,
) -> Result<SearchOutcome, EnvError> {
    config.validate().map_err(EnvError::Config)?;
    let mut outcome = SearchOutcome::new();
    let mut population: Vec<Vec<f64>> =
        (0..config.population).map(|_| space.sample_uniform(rng)).collect();
    let mut fitness = Vec::with_capacity(config.population);
    for individual in &population {
        if outcome.evals_used >= config.eval_budget {
            return Ok(outcome);
        }
        let value = objective(individual)?;
        if outcome.observe(individual, value, success_at) {
            return Ok(outcome);
        }
        fitness.push(value);
    }

    for _ in 0..config.generations {
        if outcome.evals_used >= config.eval_budget {
            break;
        }
        let mut next = Vec::with_capacity(config.population);
        // The incumbent best survives unchanged (already evaluated, no
        // extra objective call).
        let elite = argmax(&fitness);
        next.push(population[elite].clone());
        while next.len() < config.population {
            let a = tournament_pick(&fitness, config.tournament, rng);
            let b = tournament_pick(&fitness, config.tournament, rng);
            let mut child = if rng.random::<f64>() < config.crossover_prob {
                crossover(&population[a], &population[b], rng)
            } else {
                population[a].clone()
            };
            mutate(space, &mut child, config, rng);
            next.push(child);
        }
        let mut next_fitness = vec![fitness[elite]];
        for individual in &next[1..] {
            if outcome.evals_used >= config.eval_budget {
                return Ok(outcome);
            }
            let value = objective(individual)?;
            if outcome.observe(individual, value, success_at) {
                return Ok(outcome);
            }
            next_fitness.push(value);
        }
        population = next;
        fitness = next_fitness;
    }
    Ok(outcome)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn tournament_pick(fitness: &[f64], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let contender = rng.random_range(0..fitness.len());
        if fitness[contender] > fitness[best] {
            best = contender;
        }
    }
    best
}

fn crossover(a: &[f64], b: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
        .collect()
}

fn mutate(space: &ParamSpace, child: &mut [f64], config: &GaConfig, rng: &mut impl Rng) {
    for (value, spec) in child.iter_mut().zip(space.specs()) {
        if rng.random::<f64>() >= config.mutation_prob {
            continue;
        }
        let span = config.mutation_span as i64;
        let mut steps = 0;
        while steps == 0 {
            steps = rng.random_range(-span..=span);
        }
        let mut v = *value + steps as f64 * spec.step;
        v = v.clamp(spec.min, spec.max);
        if spec.integer {
            v = v.round().clamp(spec.min, spec.max);
        }
        *value = v;
    }
}

/// Uniform random search under a fixed objective-call budget.
pub fn random_search(
    space: &ParamSpace,
    objective: &mut Objective,
    success_at: Option<f64>,
    eval_budget: u64,
    rng: &mut impl Rng,
) -> Result<SearchOutcome, EnvError> {
    if eval_budget == 0 {
        return Err(EnvError::Config("evaluation budget must be nonzero".into()));
    }
    let mut outcome = SearchOutcome::new();
    while outcome.evals_used < eval_budget {
        let candidate = space.sample_uniform(rng);
        let value = objective(&candidate)?;
        if outcome.observe(&candidate, value, success_at) {
            break;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;
    use crate::rng::stream_rng;

    fn three_param_space() -> ParamSpace {
        let nl = parse_netlist(
            "DEVICE R1 RES a b PARAM r=50 BOUNDS 1 100 STEP 1\n\
             DEVICE R2 RES b c PARAM r=50 BOUNDS 1 100 STEP 1\n\
             DEVICE R3 RES c d PARAM r=50 BOUNDS 1 100 STEP 1\n\
             SUPPLY GND d\n",
        )
        .unwrap();
        ParamSpace::from_netlist(&nl)
    }

    /// Smooth single-peak objective; optimum at (30, 60, 77).
    fn convex_objective(params: &[f64]) -> Result<f64, EnvError> {
        let target = [30.0, 60.0, 77.0];
        Ok(-params
            .iter()
            .zip(&target)
            .map(|(p, t)| {
                let d = (p - t) / 100.0;
                d * d
            })
            .sum::<f64>())
    }

    #[test]
    fn ga_solves_a_convex_objective_on_every_seed() {
        let space = three_param_space();
        let config = GaConfig { eval_budget: 500, ..GaConfig::default() };
        for seed in 0..10 {
            let mut rng = stream_rng(seed, "ga");
            let outcome = genetic_search(
                &space,
                &mut |p| convex_objective(p),
                Some(-1e-2),
                &config,
                &mut rng,
            )
            .unwrap();
            assert!(
                outcome.evals_to_success.is_some(),
                "seed {seed} never reached -1e-2; best {}",
                outcome.best_value
            );
            assert!(outcome.evals_used <= 500);
            assert!(outcome.best_value >= -1e-2);
        }
    }

    #[test]
    fn ga_respects_bounds_integrality_and_budget() {
        let nl = parse_netlist(
            "DEVICE M1 NMOS d g s PARAM width_um=50 BOUNDS 1 100 STEP 1 \
             PARAM fingers=16 BOUNDS 2 32 STEP 1\nSUPPLY GND s\n",
        )
        .unwrap();
        let space = ParamSpace::from_netlist(&nl);
        let config = GaConfig {
            eval_budget: 137,
            mutation_prob: 1.0,
            ..GaConfig::default()
        };
        let mut rng = stream_rng(3, "ga");
        let mut calls = 0u64;
        let outcome = genetic_search(
            &space,
            &mut |p| {
                calls += 1;
                for (v, s) in p.iter().zip(space.specs()) {
                    assert!(*v >= s.min && *v <= s.max, "out of bounds: {v}");
                    if s.integer {
                        assert_eq!(v.fract(), 0.0, "fractional finger count: {v}");
                    }
                }
                Ok(-(p[0] - 30.0).abs() - (p[1] - 7.0).abs())
            },
            None,
            &config,
            &mut rng,
        )
        .unwrap();
        assert_eq!(outcome.evals_used, calls);
        assert!(outcome.evals_used <= 137);
        assert!(outcome.evals_to_success.is_none());
    }

    #[test]
    fn ga_early_stops_the_moment_success_appears() {
        let space = three_param_space();
        let mut rng = stream_rng(4, "ga");
        // Success everywhere: must stop after exactly one evaluation.
        let outcome = genetic_search(
            &space,
            &mut |_| Ok(5.0),
            Some(5.0),
            &GaConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(outcome.evals_used, 1);
        assert_eq!(outcome.evals_to_success, Some(1));
    }

    #[test]
    fn ga_is_deterministic_for_a_fixed_seed() {
        let space = three_param_space();
        let config = GaConfig { eval_budget: 300, ..GaConfig::default() };
        let run = |seed| {
            let mut rng = stream_rng(seed, "ga");
            genetic_search(&space, &mut |p| convex_objective(p), None, &config, &mut rng)
                .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.best_value, b.best_value);
        assert_eq!(a.curve, b.curve);
        let c = run(8);
        assert!(a.curve != c.curve || a.best_params != c.best_params);
    }

    #[test]
    fn ga_rejects_nonsense_configs() {
        let space = three_param_space();
        let mut rng = stream_rng(1, "ga");
        for bad in [
            GaConfig { population: 1, ..GaConfig::default() },
            GaConfig { tournament: 0, ..GaConfig::default() },
            GaConfig { tournament: 99, population: 10, ..GaConfig::default() },
            GaConfig { crossover_prob: 1.5, ..GaConfig::default() },
            GaConfig { mutation_span: 0, ..GaConfig::default() },
            GaConfig { eval_budget: 0, ..GaConfig::default() },
        ] {
            assert!(
                genetic_search(&space, &mut |p| convex_objective(p), None, &bad, &mut rng)
                    .is_err()
            );
        }
    }

    #[test]
    fn random_search_tracks_the_prefix_maximum() {
        let space = three_param_space();
        let mut rng = stream_rng(5, "random");
        let mut seen = Vec::new();
        let outcome = random_search(
            &space,
            &mut |p| {
                let v = convex_objective(p)?;
                seen.push(v);
                Ok(v)
            },
            None,
            64,
            &mut rng,
        )
        .unwrap();
        assert_eq!(outcome.evals_used, 64);
        assert_eq!(outcome.curve.len(), 64);
        let mut best = f64::NEG_INFINITY;
        for (i, &(calls, curve_best)) in outcome.curve.iter().enumerate() {
            best = best.max(seen[i]);
            assert_eq!(calls, i as u64 + 1);
            assert_eq!(curve_best, best, "curve must be the running maximum");
        }
        assert_eq!(outcome.best_value, best);
    }

    #[test]
    fn random_search_stops_on_success_and_needs_a_budget() {
        let space = three_param_space();
        let mut rng = stream_rng(6, "random");
        let outcome =
            random_search(&space, &mut |_| Ok(1.0), Some(0.5), 100, &mut rng).unwrap();
        assert_eq!(outcome.evals_used, 1);
        assert_eq!(outcome.evals_to_success, Some(1));
        assert!(random_search(&space, &mut |_| Ok(1.0), None, 0, &mut rng).is_err());
    }
}
