//! Closed-form performance model of the two-stage Miller op-amp fixture.
//!
//! Square-law devices with a fixed bias point: drain currents scale with
//! gate area (width times fingers), transconductances follow the square-law
//! root, and the two-pole Miller compensation sets bandwidth and phase
//! margin. The model is a smooth stand-in for a simulator, not a replacement
//! for one; its constants are chosen so the target sampling box is largely
//! coverable from inside the parameter bounds.

use super::{Direction, Env, EnvError, Evaluator, RewardMode, SpecDef};
use crate::netlist::{builtin, parse_netlist, ParamSpace};

/// Device physics and operating-point scale factors.
#[derive(Debug, Clone, Copy)]
pub struct OpampConstants {
    /// Bias current per um of gate width per finger (A).
    pub current_density: f64,
    /// Square-law transconductance scale per um per finger (A/V^2).
    pub gm_scale: f64,
    /// Channel-length modulation, PMOS side (1/V).
    pub lambda_p: f64,
    /// Channel-length modulation, NMOS side (1/V).
    pub lambda_n: f64,
    /// Supply voltage (V).
    pub vdd: f64,
    /// Load capacitance at the output node (F).
    pub c_load: f64,
}

impl Default for OpampConstants {
    fn default() -> Self {
        OpampConstants {
            current_density: 0.5e-6,
            gm_scale: 2.0e-6,
            lambda_p: 0.1,
            lambda_n: 0.1,
            vdd: 1.0,
            c_load: 1.0e-12,
        }
    }
}

/// An unstable sizing can push the computed phase margin to zero or below;
/// it is floored here so downstream normalized differences stay defined.
pub const PHASE_MARGIN_FLOOR_DEG: f64 = 1e-3;

/// Resolved parameter indices for the fixed op-amp topology.
pub struct OpampEvaluator {
    defs: Vec<SpecDef>,
    consts: OpampConstants,
    input_w: usize,
    input_f: usize,
    tail_w: usize,
    tail_f: usize,
    driver_w: usize,
    driver_f: usize,
    source_w: usize,
    source_f: usize,
    comp_cap: usize,
}

fn opamp_spec_defs() -> Vec<SpecDef> {
    vec![
        SpecDef {
            name: "gain".into(),
            unit: "V/V".into(),
            direction: Direction::Maximize,
            sample_lo: 300.0,
            sample_hi: 500.0,
            log_scaled: false,
        },
        SpecDef {
            name: "bandwidth".into(),
            unit: "Hz".into(),
            direction: Direction::Maximize,
            sample_lo: 1.0e6,
            sample_hi: 2.5e7,
            log_scaled: true,
        },
        SpecDef {
            name: "phase_margin".into(),
            unit: "deg".into(),
            direction: Direction::Maximize,
            sample_lo: 55.0,
            sample_hi: 60.0,
            log_scaled: false,
        },
        SpecDef {
            name: "power".into(),
            unit: "W".into(),
            direction: Direction::Minimize,
            sample_lo: 1.0e-4,
            sample_hi: 1.0e-2,
            log_scaled: true,
        },
    ]
}

impl OpampEvaluator {
    pub fn new(space: &ParamSpace, consts: OpampConstants) -> Result<Self, EnvError> {
        let idx = |device: &str, param: &str| {
            space
                .index_of(device, param)
                .ok_or_else(|| EnvError::MissingDevice(format!("{device}.{param}")))
        };
        Ok(OpampEvaluator {
            defs: opamp_spec_defs(),
            consts,
            input_w: idx("M1", "width_um")?,
            input_f: idx("M1", "fingers")?,
            tail_w: idx("M5", "width_um")?,
            tail_f: idx("M5", "fingers")?,
            driver_w: idx("M6", "width_um")?,
            driver_f: idx("M6", "fingers")?,
            source_w: idx("M7", "width_um")?,
            source_f: idx("M7", "fingers")?,
            comp_cap: idx("C1", "value")?,
        })
    }

    /// Mutable metric definitions, for sampling-range overrides.
    pub fn defs_mut(&mut self) -> &mut [SpecDef] {
        &mut self.defs
    }
}

impl Evaluator for OpampEvaluator {
    fn spec_defs(&self) -> &[SpecDef] {
        &self.defs
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, EnvError> {
        let c = &self.consts;
        let area = |w: usize, f: usize| params[w] * params[f];

        // Bias chain: the tail device sets the first-stage current (split
        // across the pair); the output current source sets the second's.
        let i_tail = c.current_density * area(self.tail_w, self.tail_f);
        let i1 = 0.5 * i_tail;
        let i6 = c.current_density * area(self.source_w, self.source_f);

        let gm1 = (2.0 * c.gm_scale * area(self.input_w, self.input_f) * i1).sqrt();
        let gm6 = (2.0 * c.gm_scale * area(self.driver_w, self.driver_f) * i6).sqrt();

        let lambda = c.lambda_p + c.lambda_n;
        let gain = (gm1 / (lambda * i1)) * (gm6 / (lambda * i6));

        let cc = params[self.comp_cap] * 1e-12; // netlist stores pF
        let two_pi = std::f64::consts::TAU;
        let bandwidth = gm1 / (two_pi * cc);

        // Second pole at the loaded output, right-half-plane zero through the
        // compensation capacitor; both eat into the margin at the unity point.
        let pole2 = gm6 / (two_pi * c.c_load);
        let zero = gm6 / (two_pi * cc);
        let pm = 90.0
            - (bandwidth / pole2).atan().to_degrees()
            - (bandwidth / zero).atan().to_degrees();
        let phase_margin = pm.max(PHASE_MARGIN_FLOOR_DEG);

        let power = c.vdd * (i_tail + i6);

        Ok(vec![gain, bandwidth, phase_margin, power])
    }
}

/// Ready-made op-amp sizing environment on the built-in netlist.
pub fn opamp_env(mode: RewardMode, max_episode_len: usize) -> Env {
    let nl = parse_netlist(builtin::OPAMP).expect("built-in netlist parses");
    let graph_space = crate::netlist::build_graph(&nl).expect("built-in netlist builds");
    let eval = OpampEvaluator::new(graph_space.param_space(), OpampConstants::default())
        .expect("built-in netlist has the expected devices");
    Env::new(&nl, Box::new(eval), mode, max_episode_len).expect("built-in env constructs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::dominates;
    use crate::rng::stream_rng;

    fn fixture() -> (Env, Vec<f64>) {
        let env = opamp_env(RewardMode::GoalSeek { bonus: 10.0 }, 50);
        let mid = env.param_space().mid_init();
        (env, mid)
    }

    /// Sets one named parameter in a full value vector.
    fn with(env: &Env, base: &[f64], device: &str, param: &str, v: f64) -> Vec<f64> {
        let mut out = base.to_vec();
        out[env.param_space().index_of(device, param).unwrap()] = v;
        out
    }

    fn measure(env: &Env, params: &[f64]) -> Vec<f64> {
        env.evaluator().evaluate(params).unwrap()
    }

    /// Recomputes the model from scratch with independent arithmetic: currents
    /// from gate areas, square-law transconductances, the two-stage gain
    /// product, and the margin via the gm-ratio identity
    /// pm = 90 - atan(rho * C_L/Cc) - atan(rho) with rho = gm1/gm6.
    #[test]
    fn matches_independent_recomputation_at_a_reference_point() {
        let (env, _) = fixture();
        let mut params = env.param_space().mid_init();
        for (dev, p, v) in [
            ("M1", "width_um", 80.0),
            ("M1", "fingers", 20.0),
            ("M5", "width_um", 30.0),
            ("M5", "fingers", 4.0),
            ("M6", "width_um", 60.0),
            ("M6", "fingers", 12.0),
            ("M7", "width_um", 40.0),
            ("M7", "fingers", 6.0),
            ("C1", "value", 3.0),
        ] {
            params[env.param_space().index_of(dev, p).unwrap()] = v;
        }
        let got = measure(&env, &params);

        let i1: f64 = 0.5 * 0.5e-6 * 30.0 * 4.0;
        let i6: f64 = 0.5e-6 * 40.0 * 6.0;
        let gm1 = (2.0 * 2.0e-6 * 80.0 * 20.0 * i1).sqrt();
        let gm6 = (2.0 * 2.0e-6 * 60.0 * 12.0 * i6).sqrt();
        let gain = gm1 * gm6 / (0.2 * i1 * 0.2 * i6);
        let bw = gm1 / (std::f64::consts::TAU * 3.0e-12);
        let rho = gm1 / gm6;
        let pm = 90.0
            - (rho * 1.0e-12 / 3.0e-12).atan().to_degrees()
            - rho.atan().to_degrees();
        let power = 0.5e-6 * 30.0 * 4.0 + i6;

        for (g, e) in got.iter().zip([gain, bw, pm, power]) {
            assert!((g - e).abs() <= 1e-9 * e.abs().max(1.0), "got {g}, expected {e}");
        }
    }

    /// A known strong sizing: max input and driver areas, light bias chain,
    /// mid compensation. Frozen values double as a regression pin.
    #[test]
    fn strong_corner_dominates_the_whole_target_box() {
        let (env, mid) = fixture();
        let mut p = mid;
        for (dev, pa, v) in [
            ("M1", "width_um", 100.0),
            ("M1", "fingers", 32.0),
            ("M5", "width_um", 20.0),
            ("M5", "fingers", 2.0),
            ("M6", "width_um", 100.0),
            ("M6", "fingers", 32.0),
            ("M7", "width_um", 80.0),
            ("M7", "fingers", 2.0),
            ("C1", "value", 2.0),
        ] {
            p = with(&env, &p, dev, pa, v);
        }
        let m = measure(&env, &p);
        assert!(m[0] > 11000.0 && m[0] < 11700.0, "gain {}", m[0]);
        assert!(m[1] > 2.8e7, "bandwidth {}", m[1]);
        assert!(m[2] > 60.0, "phase margin {}", m[2]);
        assert!((m[3] - 1e-4).abs() < 1e-12, "power {}", m[3]);
        // Dominates the far corner of the sampling box.
        let defs = env.spec_defs();
        assert!(dominates(&m, &[500.0, 2.5e7, 60.0, 1e-4], defs));
    }

    #[test]
    fn compensation_capacitor_trades_bandwidth_for_margin() {
        let (env, mid) = fixture();
        let small = measure(&env, &with(&env, &mid, "C1", "value", 1.0));
        let large = measure(&env, &with(&env, &mid, "C1", "value", 8.0));
        assert!(large[1] < small[1], "bigger Cc must cut bandwidth");
        assert!(large[2] > small[2], "bigger Cc must buy margin");
        // Power ignores the capacitor entirely.
        assert_eq!(large[3], small[3]);
    }

    #[test]
    fn bias_devices_set_power() {
        let (env, mid) = fixture();
        let lean = measure(&env, &with(&env, &mid, "M5", "width_um", 10.0));
        let base = measure(&env, &mid);
        assert!(lean[3] < base[3]);
        // Input-pair size never shows up in power draw.
        let wide_input = measure(&env, &with(&env, &mid, "M1", "width_um", 100.0));
        assert_eq!(wide_input[3], base[3]);
    }

    #[test]
    fn unstable_corner_floors_the_margin_positive() {
        let (env, mid) = fixture();
        // Huge first-stage gm against a starved second stage, tiny Cc: the
        // raw margin goes deeply negative.
        let mut p = mid;
        for (dev, pa, v) in [
            ("M1", "width_um", 100.0),
            ("M1", "fingers", 32.0),
            ("M5", "width_um", 100.0),
            ("M5", "fingers", 32.0),
            ("M6", "width_um", 1.0),
            ("M6", "fingers", 2.0),
            ("M7", "width_um", 1.0),
            ("M7", "fingers", 2.0),
            ("C1", "value", 0.1),
        ] {
            p = with(&env, &p, dev, pa, v);
        }
        let m = measure(&env, &p);
        assert_eq!(m[2], PHASE_MARGIN_FLOOR_DEG);
    }

    #[test]
    fn every_sampled_sizing_measures_positive() {
        let (env, _) = fixture();
        let mut rng = stream_rng(11, "env");
        for _ in 0..1000 {
            let p = env.param_space().sample_uniform(&mut rng);
            for (v, def) in measure(&env, &p).iter().zip(env.spec_defs()) {
                assert!(*v > 0.0, "{} came out nonpositive: {v}", def.name);
            }
        }
    }

    /// Random sizings must be able to satisfy a healthy share of random
    /// targets, otherwise the target sampler is trivially unreachable.
    #[test]
    fn random_designs_cover_a_fifth_of_random_targets() {
        let (env, _) = fixture();
        let mut rng = stream_rng(3, "env");
        let designs: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let p = env.param_space().sample_uniform(&mut rng);
                measure(&env, &p)
            })
            .collect();
        let mut sampler = stream_rng(3, "sampler");
        let goals: Vec<Vec<f64>> = (0..1000).map(|_| env.sample_goal(&mut sampler)).collect();
        let defs = env.spec_defs();
        let covered = goals
            .iter()
            .filter(|g| designs.iter().any(|d| dominates(d, g, defs)))
            .count();
        assert!(
            covered >= 200,
            "only {covered}/1000 targets covered by 10k random sizings"
        );
    }
}
