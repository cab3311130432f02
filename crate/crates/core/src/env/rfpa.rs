//! Closed-form performance model of the RF power-amplifier fixture.
//!
//! The seven stages D1..D5, DF, M1 form a drive chain ordered by gate area
//! s = width * fingers. Output power saturates with the power stage's area
//! and with the final drive ratio s_DF / s_M1; drain efficiency peaks when
//! every consecutive stage ratio s_{i+1} / s_i sits at the matched taper
//! and falls off in the summed squared log taper error. Two fidelities are
//! offered: Fine is the model itself, Coarse multiplies each metric by a
//! smooth deterministic ripple over the normalized sizing vector, bounded
//! to +/-3%, standing in for a cheap low-accuracy simulation mode.

use super::{Direction, Env, EnvError, Evaluator, RewardMode, SpecDef};
use crate::netlist::{builtin, parse_netlist, ParamSpace};
use crate::rng::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy)]
pub struct RfpaConstants {
    /// Output power ceiling (W).
    pub p_max: f64,
    /// Power-stage area saturation rate (per um*finger).
    pub area_rate: f64,
    /// Final drive ratio s_DF / s_M1 at which the drive factor reaches one half.
    pub drive_half: f64,
    /// Efficiency ceiling (fraction).
    pub e_max: f64,
    /// Efficiency falloff rate in the summed squared log taper error.
    pub mismatch_rate: f64,
    /// Matched taper: efficiency peaks when every s_{i+1} / s_i equals this.
    pub matched_ratio: f64,
    /// Coarse-fidelity ripple amplitude (relative).
    pub ripple: f64,
}

impl Default for RfpaConstants {
    fn default() -> Self {
        RfpaConstants {
            p_max: 4.0,
            area_rate: 0.0015,
            drive_half: 0.15,
            e_max: 0.8,
            mismatch_rate: 0.12,
            matched_ratio: 2.0,
            ripple: 0.03,
        }
    }
}

fn rfpa_spec_defs() -> Vec<SpecDef> {
    vec![
        SpecDef {
            name: "output_power".into(),
            unit: "W".into(),
            direction: Direction::Maximize,
            sample_lo: 2.0,
            sample_hi: 3.0,
            log_scaled: false,
        },
        SpecDef {
            name: "efficiency".into(),
            unit: "frac".into(),
            direction: Direction::Maximize,
            sample_lo: 0.5,
            sample_hi: 0.6,
            log_scaled: false,
        },
    ]
}

/// Reference levels and weights for the figure-of-merit objective:
/// score = (P - 2)/(P + 2) + 3 (E - 0.5)/(E + 0.5).
pub fn rfpa_fom_mode() -> RewardMode {
    RewardMode::FigureOfMerit {
        refs: vec![2.0, 0.5],
        weights: vec![1.0, 3.0],
    }
}

pub struct RfpaEvaluator {
    defs: Vec<SpecDef>,
    consts: RfpaConstants,
    fidelity: Fidelity,
    out_w: usize,
    out_f: usize,
    drivers: Vec<(usize, usize)>,
    /// Per-spec coarse ripple: phase plus one weight per normalized parameter,
    /// both derived from stable hashes of the spec name.
    ripple_coeffs: Vec<(f64, Vec<f64>)>,
    space: ParamSpace,
}

/// Hash to [0, 1).
fn unit_hash(text: &str) -> f64 {
    fnv1a64(text.as_bytes()) as f64 / (u64::MAX as f64 + 1.0)
}

impl RfpaEvaluator {
    pub fn new(
        space: &ParamSpace,
        consts: RfpaConstants,
        fidelity: Fidelity,
    ) -> Result<Self, EnvError> {
        let idx = |device: &str, param: &str| {
            space
                .index_of(device, param)
                .ok_or_else(|| EnvError::MissingDevice(format!("{device}.{param}")))
        };
        let mut drivers = Vec::new();
        for name in ["D1", "D2", "D3", "D4", "D5", "DF"] {
            drivers.push((idx(name, "width_um")?, idx(name, "fingers")?));
        }
        let defs = rfpa_spec_defs();
        let ripple_coeffs = defs
            .iter()
            .map(|def| {
                let phase = std::f64::consts::TAU * unit_hash(&def.name);
                let weights = (0..space.len())
                    .map(|k| 1.0 + 2.0 * unit_hash(&format!("{}:{k}", def.name)))
                    .collect();
                (phase, weights)
            })
            .collect();
        Ok(RfpaEvaluator {
            defs,
            consts,
            fidelity,
            out_w: idx("M1", "width_um")?,
            out_f: idx("M1", "fingers")?,
            drivers,
            ripple_coeffs,
            space: space.clone(),
        })
    }

    /// Mutable metric definitions, for sampling-range overrides.
    pub fn defs_mut(&mut self) -> &mut [SpecDef] {
        &mut self.defs
    }

    fn fine(&self, params: &[f64]) -> Vec<f64> {
        let c = &self.consts;
        let mut sizes: Vec<f64> =
            self.drivers.iter().map(|&(w, f)| params[w] * params[f]).collect();
        sizes.push(params[self.out_w] * params[self.out_f]);
        let s_out = sizes[sizes.len() - 1];
        let r_final = sizes[sizes.len() - 2] / s_out;

        let drive_factor = r_final / (r_final + c.drive_half);
        let p_out = c.p_max * (1.0 - (-c.area_rate * s_out).exp()) * drive_factor;

        let taper_err: f64 = sizes
            .windows(2)
            .map(|w| (w[1] / w[0] / c.matched_ratio).ln().powi(2))
            .sum();
        let eff = c.e_max * (-c.mismatch_rate * taper_err).exp();

        vec![p_out, eff]
    }
}

impl Evaluator for RfpaEvaluator {
    fn spec_defs(&self) -> &[SpecDef] {
        &self.defs
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>, EnvError> {
        let mut out = self.fine(params);
        if self.fidelity == Fidelity::Coarse {
            let x = self.space.normalize(params);
            for (v, (phase, weights)) in out.iter_mut().zip(&self.ripple_coeffs) {
                let arg: f64 = phase + weights.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
                *v *= 1.0 + self.consts.ripple * arg.sin();
            }
        }
        Ok(out)
    }
}

/// Ready-made power-amplifier sizing environment on the built-in netlist.
pub fn rfpa_env(fidelity: Fidelity, mode: RewardMode, max_episode_len: usize) -> Env {
    let nl = parse_netlist(builtin::RFPA).expect("built-in netlist parses");
    let graph = crate::netlist::build_graph(&nl).expect("built-in netlist builds");
    let eval = RfpaEvaluator::new(graph.param_space(), RfpaConstants::default(), fidelity)
        .expect("built-in netlist has the expected devices");
    Env::new(&nl, Box::new(eval), mode, max_episode_len).expect("built-in env constructs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::dominates;
    use crate::rng::stream_rng;

    fn fine_env() -> Env {
        rfpa_env(Fidelity::Fine, RewardMode::GoalSeek { bonus: 10.0 }, 30)
    }

    fn measure(env: &Env, params: &[f64]) -> Vec<f64> {
        env.evaluator().evaluate(params).unwrap()
    }

    fn with(env: &Env, base: &[f64], device: &str, param: &str, v: f64) -> Vec<f64> {
        let mut out = base.to_vec();
        out[env.param_space().index_of(device, param).unwrap()] = v;
        out
    }

    #[test]
    fn matches_independent_recomputation_at_a_reference_point() {
        let env = fine_env();
        let mut p = env.param_space().mid_init();
        p = with(&env, &p, "M1", "width_um", 80.0);
        p = with(&env, &p, "M1", "fingers", 10.0);
        p = with(&env, &p, "D3", "width_um", 40.0);
        p = with(&env, &p, "D3", "fingers", 5.0);
        let got = measure(&env, &p);

        // Mid sizing is W=58, F=8 except the overrides above, so the drive
        // chain D1..D5, DF, M1 carries these gate areas.
        let chain = [464.0, 464.0, 200.0, 464.0, 464.0, 464.0, 800.0_f64];
        let r_final = 464.0 / 800.0;
        let p_out = 4.0 * (1.0 - (-0.0015 * 800.0_f64).exp()) * (r_final / (r_final + 0.15));
        let taper: f64 = (0..6).map(|i| (chain[i + 1] / chain[i] / 2.0).ln().powi(2)).sum();
        let eff = 0.8 * (-0.12 * taper).exp();
        assert!((got[0] - p_out).abs() <= 1e-12 * p_out, "{} vs {p_out}", got[0]);
        assert!((got[1] - eff).abs() <= 1e-12 * eff, "{} vs {eff}", got[1]);
    }

    #[test]
    fn deeper_final_drive_raises_power_and_matched_taper_hits_the_ceiling() {
        let env = fine_env();
        let mid = env.param_space().mid_init();
        let weak = measure(&env, &with(&env, &with(&env, &mid, "DF", "width_um", 16.0), "DF", "fingers", 1.0));
        let strong = measure(&env, &with(&env, &with(&env, &mid, "DF", "width_um", 100.0), "DF", "fingers", 16.0));
        assert!(strong[0] > weak[0], "final drive strength must raise output power");

        // Efficiency is maximal exactly on the matched taper: every stage
        // doubles its predecessor's gate area.
        let mut tapered = mid.clone();
        let stages = [
            ("D1", 16.0, 1.0),
            ("D2", 32.0, 1.0),
            ("D3", 64.0, 1.0),
            ("D4", 64.0, 2.0),
            ("D5", 64.0, 4.0),
            ("DF", 64.0, 8.0),
            ("M1", 64.0, 16.0),
        ];
        for (d, w, f) in stages {
            tapered = with(&env, &tapered, d, "width_um", w);
            tapered = with(&env, &tapered, d, "fingers", f);
        }
        let m = measure(&env, &tapered);
        assert!((m[1] - 0.8).abs() < 1e-12, "matched taper hits the ceiling: {}", m[1]);
    }

    #[test]
    fn coarse_stays_inside_the_ripple_band_and_is_deterministic() {
        let fine = fine_env();
        let coarse = rfpa_env(Fidelity::Coarse, RewardMode::GoalSeek { bonus: 10.0 }, 30);
        let coarse2 = rfpa_env(Fidelity::Coarse, RewardMode::GoalSeek { bonus: 10.0 }, 30);
        let mut rng = stream_rng(5, "env");
        let band = RfpaConstants::default().ripple;
        let mut max_dev = 0.0_f64;
        for _ in 0..200 {
            let p = fine.param_space().sample_uniform(&mut rng);
            let f = measure(&fine, &p);
            let c = measure(&coarse, &p);
            assert_eq!(c, measure(&coarse2, &p));
            for (cv, fv) in c.iter().zip(&f) {
                let dev = (cv / fv - 1.0).abs();
                assert!(dev <= band + 1e-12, "ripple {dev} exceeds the band");
                max_dev = max_dev.max(dev);
            }
        }
        // The ripple must actually bite, not sit near zero.
        assert!(max_dev > band / 2.0, "ripple never got near its band ({max_dev})");
    }

    #[test]
    fn random_designs_cover_a_fifth_of_random_targets() {
        let env = fine_env();
        let mut rng = stream_rng(9, "env");
        let designs: Vec<Vec<f64>> = (0..10_000)
            .map(|_| measure(&env, &env.param_space().sample_uniform(&mut rng)))
            .collect();
        let mut sampler = stream_rng(9, "sampler");
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

    #[test]
    fn fom_score_rises_toward_the_heavy_drive_corner() {
        let env = rfpa_env(Fidelity::Fine, rfpa_fom_mode(), 30);
        let mid = env.param_space().mid_init();
        let mid_m = measure(&env, &mid);
        let mut corner = mid.clone();
        corner = with(&env, &corner, "M1", "width_um", 100.0);
        corner = with(&env, &corner, "M1", "fingers", 16.0);
        for d in ["D1", "D2", "D3", "D4", "D5", "DF"] {
            corner = with(&env, &corner, d, "width_um", 100.0);
            corner = with(&env, &corner, d, "fingers", 16.0);
        }
        let corner_m = measure(&env, &corner);
        let weights = [1.0, 3.0];
        let mid_fom = crate::env::fom_value(&mid_m, &weights);
        let corner_fom = crate::env::fom_value(&corner_m, &weights);
        assert!(
            corner_fom > mid_fom && corner_fom > 4.6,
            "corner {corner_fom} vs mid {mid_fom}"
        );
    }
}
