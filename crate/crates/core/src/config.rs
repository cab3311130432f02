//! Run configuration: one TOML file names the circuit, policy variant,
//! training settings, baseline settings, and output location. Unknown keys
//! are rejected so typos surface instead of silently using defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::baselines::GaConfig;
use crate::env::{
    override_spec_range, Env, EnvError, Fidelity, OpampConstants, OpampEvaluator, RewardMode,
    RfpaConstants, RfpaEvaluator,
};
use crate::netlist::{build_graph, parse_netlist, Netlist};
use crate::policy::{PolicyNet, PolicySizes, SpecObservation, Variant};
use crate::ppo::PpoConfig;
use crate::rng::{fnv1a64, stream_rng};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Netlist(#[from] crate::netlist::NetlistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Circuit {
    Opamp,
    Rfpa,
}

impl Circuit {
    pub fn as_str(self) -> &'static str {
        match self {
            Circuit::Opamp => "opamp",
            Circuit::Rfpa => "rfpa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityChoice {
    Coarse,
    Fine,
}

impl From<FidelityChoice> for Fidelity {
    fn from(choice: FidelityChoice) -> Fidelity {
        match choice {
            FidelityChoice::Coarse => Fidelity::Coarse,
            FidelityChoice::Fine => Fidelity::Fine,
        }
    }
}

/// Sampling-range override for one metric.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecRange {
    pub name: String,
    pub sample_lo: f64,
    pub sample_hi: f64,
}

macro_rules! section {
    ($name:ident from $target:ident { $($field:ident : $ty:ty),+ $(,)? }) => {
        #[derive(Debug, Clone, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            $(pub $field: $ty,)+
        }

        impl Default for $name {
            fn default() -> Self {
                let d = $target::default();
                $name { $($field: d.$field,)+ }
            }
        }

        impl $name {
            pub fn to_config(&self) -> $target {
                $target { $($field: self.$field.clone(),)+ }
            }
        }
    };
}

section!(PpoSection from PpoConfig {
    gamma: f64,
    lambda: f64,
    clip: f64,
    learning_rate: f64,
    epochs: usize,
    minibatch: usize,
    episodes_per_batch: usize,
    entropy_coeff: f64,
    value_coeff: f64,
    eval_every_batches: usize,
    eval_goals: usize,
});

section!(GaSection from GaConfig {
    population: usize,
    generations: usize,
    tournament: usize,
    crossover_prob: f64,
    mutation_prob: f64,
    mutation_span: usize,
    eval_budget: u64,
});

section!(SizesSection from PolicySizes {
    graph_hidden: usize,
    gat_heads: usize,
    gat_head_dim: usize,
    spec_hidden: usize,
    trunk_hidden: usize,
});

/// Figure-of-merit experiment settings: the reference point, per-metric
/// weights, and the shared evaluation budget for every method.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FomSection {
    pub refs: Vec<f64>,
    pub weights: Vec<f64>,
    pub eval_budget: u64,
}

impl Default for FomSection {
    fn default() -> Self {
        FomSection { refs: vec![2.0, 0.5], weights: vec![1.0, 3.0], eval_budget: 1000 }
    }
}

fn default_variant() -> Variant {
    Variant::GcnFc
}

fn default_observation() -> SpecObservation {
    SpecObservation::GoalAndIntermediate
}

fn default_fidelity() -> FidelityChoice {
    FidelityChoice::Fine
}

fn default_bonus() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub circuit: Circuit,
    /// Overrides the built-in netlist for the chosen circuit.
    #[serde(default)]
    pub netlist_path: Option<PathBuf>,
    #[serde(default = "default_variant")]
    pub policy_variant: Variant,
    #[serde(default = "default_observation")]
    pub spec_observation: SpecObservation,
    #[serde(default)]
    pub share_value_trunk: bool,
    #[serde(default = "default_fidelity")]
    pub fidelity: FidelityChoice,
    #[serde(default)]
    pub max_episode_len: Option<usize>,
    #[serde(default)]
    pub episodes: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Off by default so emitted CSVs stay byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_bonus")]
    pub goal_bonus: f64,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub fom: FomSection,
    #[serde(default)]
    pub sizes: SizesSection,
    #[serde(default)]
    pub specs: Vec<SpecRange>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if let Some(e) = self.episodes {
            if e == 0 {
                return Err(ConfigError::Invalid("episodes must be nonzero".into()));
            }
        }
        if let Some(len) = self.max_episode_len {
            if len == 0 {
                return Err(ConfigError::Invalid("max_episode_len must be nonzero".into()));
            }
        }
        if self.goal_bonus <= 0.0 {
            return Err(ConfigError::Invalid(format!(
                "goal_bonus {} must be positive",
                self.goal_bonus
            )));
        }
        if let Some(path) = &self.netlist_path {
            if !path.exists() {
                return Err(ConfigError::Invalid(format!(
                    "netlist_path {} does not exist",
                    path.display()
                )));
            }
        }
        self.ppo.to_config().validate().map_err(ConfigError::Invalid)?;
        self.ga.to_config().validate().map_err(ConfigError::Invalid)?;
        if self.fom.refs.is_empty() || self.fom.refs.len() != self.fom.weights.len() {
            return Err(ConfigError::Invalid(format!(
                "fom.refs ({}) and fom.weights ({}) must be nonempty and the same length",
                self.fom.refs.len(),
                self.fom.weights.len()
            )));
        }
        if self.fom.eval_budget == 0 {
            return Err(ConfigError::Invalid("fom.eval_budget must be nonzero".into()));
        }
        Ok(())
    }

    /// Episode budget: explicit value, or the circuit's standard budget.
    pub fn episodes(&self) -> usize {
        self.episodes.unwrap_or(match self.circuit {
            Circuit::Opamp => 35_000,
            Circuit::Rfpa => 3_500,
        })
    }

    /// Episode step cap: explicit value, or the circuit's standard cap.
    pub fn max_episode_len(&self) -> usize {
        self.max_episode_len.unwrap_or(match self.circuit {
            Circuit::Opamp => 50,
            Circuit::Rfpa => 30,
        })
    }

    pub fn netlist(&self) -> Result<Netlist, ConfigError> {
        let text = match &self.netlist_path {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.clone(), source })?,
            None => match self.circuit {
                Circuit::Opamp => crate::netlist::builtin::OPAMP.to_string(),
                Circuit::Rfpa => crate::netlist::builtin::RFPA.to_string(),
            },
        };
        let origin = self
            .netlist_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| format!("built-in {} netlist", self.circuit.as_str()));
        parse_netlist(&text)
            .map_err(|e| ConfigError::Parse { origin, message: e.to_string() })
    }

    /// Goal-seeking environment with any configured sampling overrides,
    /// at the given step cap (callers may raise it past the default).
    pub fn build_env_with_len(&self, max_len: usize) -> Result<Env, ConfigError> {
        let mode = RewardMode::GoalSeek { bonus: self.goal_bonus };
        self.build_env_mode(mode, max_len)
    }

    pub fn build_env(&self) -> Result<Env, ConfigError> {
        self.build_env_with_len(self.max_episode_len())
    }

    /// Figure-of-merit environment (fixed-length episodes, no bonus).
    pub fn build_fom_env(&self) -> Result<Env, ConfigError> {
        let mode = RewardMode::FigureOfMerit {
            refs: self.fom.refs.clone(),
            weights: self.fom.weights.clone(),
        };
        self.build_env_mode(mode, self.max_episode_len())
    }

    fn build_env_mode(&self, mode: RewardMode, max_len: usize) -> Result<Env, ConfigError> {
        let netlist = self.netlist()?;
        let graph = build_graph(&netlist)?;
        let space = graph.param_space();
        let env = match self.circuit {
            Circuit::Opamp => {
                let mut eval = OpampEvaluator::new(space, OpampConstants::default())?;
                for o in &self.specs {
                    override_spec_range(eval.defs_mut(), &o.name, o.sample_lo, o.sample_hi)?;
                }
                Env::new(&netlist, Box::new(eval), mode, max_len)?
            }
            Circuit::Rfpa => {
                let mut eval = RfpaEvaluator::new(
                    space,
                    RfpaConstants::default(),
                    self.fidelity.into(),
                )?;
                for o in &self.specs {
                    override_spec_range(eval.defs_mut(), &o.name, o.sample_lo, o.sample_hi)?;
                }
                Env::new(&netlist, Box::new(eval), mode, max_len)?
            }
        };
        if matches!(env.mode, RewardMode::FigureOfMerit { .. })
            && self.fom.refs.len() != env.spec_count()
        {
            return Err(ConfigError::Invalid(format!(
                "fom.refs has {} entries but the circuit measures {} metrics",
                self.fom.refs.len(),
                env.spec_count()
            )));
        }
        Ok(env)
    }

    /// Fresh policy network for one seed, drawn from that seed's init stream.
    pub fn build_policy(&self, env: &Env, seed: u64) -> PolicyNet {
        let mut rng = stream_rng(seed, "policy-init");
        PolicyNet::new(
            self.policy_variant,
            self.spec_observation,
            self.share_value_trunk,
            self.sizes.to_config(),
            crate::netlist::NODE_FEATURE_WIDTH,
            env.param_count(),
            env.spec_count(),
            &mut rng,
        )
    }

    /// Stable fingerprint of the effective configuration, stored in
    /// checkpoints so stale weights are detectable.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(format!("{self:?}").as_bytes()))
    }
}

/// Output root resolution: command-line flag, then the config file, then the
/// CIRCUIT_SIZER_OUT environment value, then ./runs.
pub fn resolve_output_root(
    cli: Option<&Path>,
    config: &RunConfig,
    env_root: Option<&Path>,
) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output_dir {
        return p.clone();
    }
    if let Some(p) = env_root {
        return p.to_path_buf();
    }
    PathBuf::from("runs")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(circuit: &str) -> String {
        format!("circuit = \"{circuit}\"\nseeds = [0]\n")
    }

    #[test]
    fn minimal_configs_pick_circuit_defaults() {
        let opamp = RunConfig::from_toml_str(&minimal("opamp"), "test").unwrap();
        assert_eq!(opamp.episodes(), 35_000);
        assert_eq!(opamp.max_episode_len(), 50);
        assert_eq!(opamp.policy_variant, Variant::GcnFc);
        assert_eq!(opamp.ppo.to_config(), PpoConfig::default());
        assert_eq!(opamp.ga.to_config(), GaConfig::default());
        assert!(!opamp.record_wall_time);

        let rfpa = RunConfig::from_toml_str(&minimal("rfpa"), "test").unwrap();
        assert_eq!(rfpa.episodes(), 3_500);
        assert_eq!(rfpa.max_episode_len(), 30);
        assert_eq!(rfpa.fom.refs, vec![2.0, 0.5]);
        assert_eq!(rfpa.fom.weights, vec![1.0, 3.0]);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = format!("{}banana = 3\n", minimal("opamp"));
        let err = RunConfig::from_toml_str(&text, "test").unwrap_err();
        assert!(err.to_string().contains("banana"), "error should name the key: {err}");

        let nested = format!("{}[ppo]\ngamna = 0.9\n", minimal("opamp"));
        let err = RunConfig::from_toml_str(&nested, "test").unwrap_err();
        assert!(err.to_string().contains("gamna"), "error should name the key: {err}");
    }

    #[test]
    fn sections_override_individual_fields() {
        let text = format!(
            "{}episodes = 123\n[ppo]\ngamma = 0.5\n[ga]\npopulation = 12\n[sizes]\ntrunk_hidden = 16\n",
            minimal("opamp")
        );
        let cfg = RunConfig::from_toml_str(&text, "test").unwrap();
        assert_eq!(cfg.episodes(), 123);
        assert_eq!(cfg.ppo.to_config().gamma, 0.5);
        assert_eq!(cfg.ppo.to_config().lambda, PpoConfig::default().lambda);
        assert_eq!(cfg.ga.to_config().population, 12);
        assert_eq!(cfg.sizes.to_config().trunk_hidden, 16);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "circuit = \"opamp\"\nseeds = []\n".to_string(),
            format!("{}episodes = 0\n", minimal("opamp")),
            format!("{}goal_bonus = -1.0\n", minimal("opamp")),
            format!("{}[ppo]\ngamma = 2.0\n", minimal("opamp")),
            format!("{}[ga]\npopulation = 1\n", minimal("opamp")),
            format!("{}[fom]\nrefs = [1.0]\nweights = [1.0, 2.0]\n", minimal("rfpa")),
            format!("{}netlist_path = \"/no/such/file.ckt\"\n", minimal("opamp")),
        ] {
            assert!(
                RunConfig::from_toml_str(&text, "test").is_err(),
                "should reject: {text}"
            );
        }
    }

    #[test]
    fn spec_overrides_reach_the_environment() {
        let text = format!(
            "{}[[specs]]\nname = \"gain\"\nsample_lo = 310.0\nsample_hi = 320.0\n",
            minimal("opamp")
        );
        let cfg = RunConfig::from_toml_str(&text, "test").unwrap();
        let env = cfg.build_env().unwrap();
        let gain = &env.spec_defs()[0];
        assert_eq!(gain.name, "gain");
        assert_eq!((gain.sample_lo, gain.sample_hi), (310.0, 320.0));

        let bad = format!(
            "{}[[specs]]\nname = \"nope\"\nsample_lo = 1.0\nsample_hi = 2.0\n",
            minimal("opamp")
        );
        let cfg = RunConfig::from_toml_str(&bad, "test").unwrap();
        assert!(cfg.build_env().is_err());
    }

    #[test]
    fn fom_reference_length_must_match_the_circuit() {
        let text = format!(
            "{}[fom]\nrefs = [1.0, 2.0, 3.0]\nweights = [1.0, 1.0, 1.0]\n",
            minimal("rfpa")
        );
        let cfg = RunConfig::from_toml_str(&text, "test").unwrap();
        assert!(cfg.build_fom_env().is_err());
        assert!(cfg.build_env().is_ok(), "goal-seek mode ignores fom refs");
    }

    #[test]
    fn environments_and_policies_come_out_sized() {
        let cfg = RunConfig::from_toml_str(&minimal("rfpa"), "test").unwrap();
        let env = cfg.build_fom_env().unwrap();
        assert_eq!(env.param_count(), 14);
        assert_eq!(env.max_episode_len, 30);
        let net = cfg.build_policy(&env, 0);
        assert_eq!(net.arch().action_rows, 14);
        let again = cfg.build_policy(&env, 0);
        assert_eq!(net.params()[0].data(), again.params()[0].data());
        let other = cfg.build_policy(&env, 1);
        assert_ne!(net.params()[0].data(), other.params()[0].data());
    }

    #[test]
    fn fingerprints_track_effective_settings() {
        let a = RunConfig::from_toml_str(&minimal("opamp"), "test").unwrap();
        let b = RunConfig::from_toml_str(&minimal("opamp"), "test").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c =
            RunConfig::from_toml_str(&format!("{}episodes = 5\n", minimal("opamp")), "test")
                .unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn output_root_resolution_orders_sources() {
        let cfg = RunConfig::from_toml_str(&minimal("opamp"), "test").unwrap();
        let with_dir = RunConfig {
            output_dir: Some(PathBuf::from("cfgdir")),
            ..cfg.clone()
        };
        let cli = Path::new("clidir");
        let envp = Path::new("envdir");
        assert_eq!(resolve_output_root(Some(cli), &with_dir, Some(envp)), Path::new("clidir"));
        assert_eq!(resolve_output_root(None, &with_dir, Some(envp)), Path::new("cfgdir"));
        assert_eq!(resolve_output_root(None, &cfg, Some(envp)), Path::new("envdir"));
        assert_eq!(resolve_output_root(None, &cfg, None), Path::new("runs"));
    }
}
