//! Experiment configuration files.

use std::path::{Path, PathBuf};

use dfalgebra::algebra::{AlgebraStructure, Block};
use dfalgebra::dynamics::{ComplementPolicy, Granularity};
use dfalgebra::physmodels::WaveguideParams;
use dfalgebra::training::TrainConfig;
use dfalgebra::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default chain-count scale for desk runs; `--full` sets it to 1.
pub const DESK_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Random model of the given structure: Haar `U`, Gaussian `β, κ, μ`.
    Structured {
        structure: AlgebraStructure,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        lindblad_count: Option<usize>,
    },
    Waveguide(WaveguideParams),
}

fn one() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn n(&self) -> usize {
        match self {
            Self::Structured { structure, .. } => structure.n(),
            Self::Waveguide(p) => 1 << p.atoms,
        }
    }

    pub fn structure(&self) -> Option<&AlgebraStructure> {
        match self {
            Self::Structured { structure, .. } => Some(structure),
            Self::Waveguide(_) => None,
        }
    }
}

/// Synthetic train/test data drawn from one generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub generator: GeneratorSpec,
    /// Accessible algebra; defaults to all of `M_n`.
    #[serde(default)]
    pub accessible: Option<AlgebraStructure>,
    /// Full-scale chain count, multiplied by the run's scale factor.
    pub chains: usize,
    /// Defaults to `chains`.
    #[serde(default)]
    pub test_chains: Option<usize>,
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub complement: ComplementPolicy,
}

fn default_tau() -> f64 {
    0.5
}

impl ProblemSpec {
    pub fn accessible_structure(&self) -> Result<AlgebraStructure> {
        let n = self.generator.n();
        let s = match &self.accessible {
            Some(s) => s.clone(),
            None => AlgebraStructure::unital(&[(n, 1)])?,
        };
        if s.n() != n {
            return Err(Error::DimensionMismatch {
                what: "accessible algebra".into(),
                expected: n,
                found: s.n(),
            });
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.steps == 0 || self.test_chains == Some(0) {
            return Err(Error::InvalidArgument(
                "chains, test_chains and steps must be positive".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if let GeneratorSpec::Structured { structure, scale, .. } = &self.generator {
            structure.require_unital()?;
            if !(*scale >= 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument("generator scale must be non-negative".into()));
            }
        }
        if let GeneratorSpec::Waveguide(p) = &self.generator {
            p.validate()?;
        }
        self.accessible_structure()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generate(ProblemSpec),
    Files { train: PathBuf, test: PathBuf },
}

impl DataSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Generate(p) => p.validate(),
            Self::Files { train, test } => {
                for p in [train, test] {
                    if !p.is_file() {
                        return Err(Error::InvalidArgument(format!(
                            "input file {} does not exist",
                            p.display()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidates {
    /// `"all"`: every canonical unital structure of the data dimension.
    Keyword(String),
    List(Vec<AlgebraStructure>),
}

impl Default for Candidates {
    fn default() -> Self {
        Self::Keyword("all".into())
    }
}

impl Candidates {
    pub fn resolve(&self, n: usize) -> Result<Vec<AlgebraStructure>> {
        match self {
            Self::Keyword(k) if k == "all" => dfalgebra::algebra::enumerate_structures(n, true, false),
            Self::Keyword(k) => Err(Error::InvalidArgument(format!("unknown candidate set `{k}`"))),
            Self::List(l) if l.is_empty() => Err(Error::InvalidArgument("empty candidate list".into())),
            Self::List(l) => {
                for s in l {
                    s.require_unital()?;
                    if s.n() != n {
                        return Err(Error::DimensionMismatch {
                            what: format!("candidate {s}"),
                            expected: n,
                            found: s.n(),
                        });
                    }
                }
                Ok(l.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub problem: ProblemSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerateConfig {
    pub n: usize,
    #[serde(default)]
    pub allow_n0: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub n: usize,
    /// Defaults to every canonical unital structure of dimension `n`.
    #[serde(default)]
    pub structures: Option<Vec<AlgebraStructure>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperimentConfig {
    pub data: DataSource,
    pub structure: AlgebraStructure,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub data: DataSource,
    #[serde(default)]
    pub candidates: Candidates,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    dfalgebra::training::DEFAULT_MARGIN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffConfig {
    pub generator: GeneratorSpec,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Full-scale `N·S`; multiplied by the run's scale factor.
    pub product: usize,
    pub chain_lengths: Vec<usize>,
    pub test_chains: usize,
    pub test_steps: usize,
    /// Model to train; defaults to the generating structure.
    #[serde(default)]
    pub structure: Option<AlgebraStructure>,
    /// Batch size as a fraction of the training chains (at least one chain).
    #[serde(default)]
    pub batch_fraction: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictedConfig {
    pub generator: GeneratorSpec,
    pub n0_values: Vec<usize>,
    pub chains: usize,
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub structure: Option<AlgebraStructure>,
    /// Treatment of the zero-block outcome in restricted data.
    #[serde(default = "postselect")]
    pub complement: ComplementPolicy,
    #[serde(default)]
    pub train: TrainConfig,
}

fn postselect() -> ComplementPolicy {
    ComplementPolicy::Postselect
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideConfig {
    #[serde(default)]
    pub model: WaveguideParams,
    pub chains: usize,
    pub steps: usize,
    #[serde(default = "waveguide_tau")]
    pub tau: f64,
    pub candidates: Vec<AlgebraStructure>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn waveguide_tau() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    pub models_per_structure: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Sequence enumeration is exponential; only `n ≤ 3`, `N ≤ 3` are summed.
    #[serde(default = "three")]
    pub enumeration_steps: usize,
    #[serde(default = "default_gradient_structures")]
    pub gradient_structures: Vec<AlgebraStructure>,
}

fn default_tol() -> f64 {
    1e-8
}

fn three() -> usize {
    3
}

fn default_gradient_structures() -> Vec<AlgebraStructure> {
    ["({1,2})", "({2,2})", "({1,2},{1,1},{1,1})"]
        .iter()
        .map(|s| s.parse().expect("valid literal"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    GenData(GenDataConfig),
    Enumerate(EnumerateConfig),
    Hierarchy(HierarchyConfig),
    Train(TrainExperimentConfig),
    Scan(ScanConfig),
    Tradeoff(TradeoffConfig),
    Restricted(RestrictedConfig),
    Waveguide(WaveguideConfig),
    Verify(VerifyConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::GenData(_) => "gen_data",
            Self::Enumerate(_) => "enumerate",
            Self::Hierarchy(_) => "hierarchy",
            Self::Train(_) => "train",
            Self::Scan(_) => "scan",
            Self::Tradeoff(_) => "tradeoff",
            Self::Restricted(_) => "restricted",
            Self::Waveguide(_) => "waveguide",
            Self::Verify(_) => "verify",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidArgument(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::GenData(c) => c.problem.validate(),
            Self::Enumerate(c) => positive("n", c.n),
            Self::Hierarchy(c) => {
                positive("n", c.n)?;
                if let Some(list) = &c.structures {
                    Candidates::List(list.clone()).resolve(c.n)?;
                }
                Ok(())
            }
            Self::Train(c) => {
                c.data.validate()?;
                c.train.validate()?;
                c.structure.require_unital()
            }
            Self::Scan(c) => {
                c.data.validate()?;
                c.train.validate()?;
                if !(c.margin >= 0.0 && c.margin.is_finite()) {
                    return Err(Error::InvalidArgument("margin must be non-negative".into()));
                }
                Ok(())
            }
            Self::Tradeoff(c) => {
                positive("product", c.product)?;
                positive("test_chains", c.test_chains)?;
                positive("test_steps", c.test_steps)?;
                if c.chain_lengths.is_empty() || c.chain_lengths.contains(&0) {
                    return Err(Error::InvalidArgument(
                        "chain_lengths must be positive and non-empty".into(),
                    ));
                }
                if let Some(f) = c.batch_fraction {
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(Error::InvalidArgument("batch_fraction must lie in (0, 1]".into()));
                    }
                }
                check_generator(&c.generator, c.tau)?;
                c.train.validate()
            }
            Self::Restricted(c) => {
                positive("chains", c.chains)?;
                positive("steps", c.steps)?;
                let n = c.generator.n();
                if c.n0_values.is_empty() || c.n0_values.iter().any(|&n0| n0 >= n) {
                    return Err(Error::InvalidArgument(format!(
                        "n0_values must be non-empty and below n = {n}"
                    )));
                }
                check_generator(&c.generator, c.tau)?;
                c.train.validate()
            }
            Self::Waveguide(c) => {
                positive("chains", c.chains)?;
                positive("steps", c.steps)?;
                c.model.validate()?;
                Candidates::List(c.candidates.clone()).resolve(c.model.n())?;
                check_generator(&GeneratorSpec::Waveguide(c.model), c.tau)?;
                c.train.validate()
            }
            Self::Verify(c) => {
                positive("n", c.n)?;
                positive("models_per_structure", c.models_per_structure)?;
                if !(c.tau > 0.0 && c.tol > 0.0) {
                    return Err(Error::InvalidArgument("tau and tol must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Built-in configuration used when a subcommand runs without `--config`.
    pub fn default_for(kind: &str) -> Result<Self> {
        let st = |s: &str| -> AlgebraStructure { s.parse().expect("valid literal") };
        let structured = |s: &str| GeneratorSpec::Structured {
            structure: st(s),
            scale: 1.0,
            lindblad_count: None,
        };
        let train = |epochs: usize| TrainConfig {
            epochs,
            batch_size: Some(10),
            eval_every: 5,
            ..Default::default()
        };
        Ok(match kind {
            "gen_data" => Self::GenData(GenDataConfig {
                problem: ProblemSpec {
                    generator: structured("({1,4})"),
                    accessible: None,
                    chains: 1000,
                    test_chains: None,
                    steps: 200,
                    tau: 0.5,
                    granularity: Granularity::Fine,
                    complement: ComplementPolicy::Record,
                },
            }),
            "enumerate" => Self::Enumerate(EnumerateConfig { n: 4, allow_n0: false }),
            "hierarchy" => Self::Hierarchy(HierarchyConfig { n: 4, structures: None }),
            "train" => Self::Train(TrainExperimentConfig {
                data: DataSource::Generate(ProblemSpec {
                    generator: structured("({1,2},{1,1},{1,1})"),
                    accessible: None,
                    chains: 500,
                    test_chains: None,
                    steps: 100,
                    tau: 0.5,
                    granularity: Granularity::Fine,
                    complement: ComplementPolicy::Record,
                }),
                structure: st("({1,2},{1,1},{1,1})"),
                train: train(100),
            }),
            "scan" => Self::Scan(ScanConfig {
                data: DataSource::Generate(ProblemSpec {
                    generator: structured("({1,4})"),
                    accessible: None,
                    chains: 500,
                    test_chains: None,
                    steps: 100,
                    tau: 0.5,
                    granularity: Granularity::Fine,
                    complement: ComplementPolicy::Record,
                }),
                candidates: Candidates::default(),
                train: train(150),
                margin: default_margin(),
            }),
            "tradeoff" => Self::Tradeoff(TradeoffConfig {
                generator: structured("({1,2},{1,2})"),
                tau: 0.5,
                product: 60_000,
                chain_lengths: vec![10, 50, 100, 200],
                test_chains: 60,
                test_steps: 100,
                structure: None,
                batch_fraction: Some(0.2),
                train: train(100),
            }),
            "restricted" => Self::Restricted(RestrictedConfig {
                generator: structured("({2,2},{1,1})"),
                n0_values: vec![0, 2],
                chains: 500,
                steps: 100,
                tau: 0.5,
                structure: None,
                complement: ComplementPolicy::Postselect,
                train: train(100),
            }),
            "waveguide" => Self::Waveguide(WaveguideConfig {
                model: WaveguideParams::default(),
                chains: 500,
                steps: 100,
                tau: 0.2,
                candidates: vec![st("({1,8})"), st("({2,1}^4)"), st("({8,1})")],
                train: train(60),
            }),
            "verify" => Self::Verify(VerifyConfig {
                n: 4,
                models_per_structure: 50,
                tau: 0.5,
                tol: 1e-8,
                enumeration_steps: 3,
                gradient_structures: default_gradient_structures(),
            }),
            other => return Err(Error::InvalidArgument(format!("unknown experiment kind `{other}`"))),
        })
    }

    /// Structures of the full waveguide table, most general first.
    pub fn waveguide_full_candidates() -> Vec<AlgebraStructure> {
        [
            "({1,8})",
            "({1,4}^2)",
            "({1,2}^4)",
            "({1,4},{1,1}^4)",
            "({1,2},{1,1}^6)",
            "({1,1}^8)",
            "({2,1},{1,1}^6)",
            "({2,1}^4)",
            "({4,1},{1,1}^4)",
            "({4,1}^2)",
            "({8,1})",
        ]
        .iter()
        .map(|s| s.parse().expect("valid literal"))
        .collect()
    }
}

fn check_generator(g: &GeneratorSpec, tau: f64) -> Result<()> {
    ProblemSpec {
        generator: g.clone(),
        accessible: None,
        chains: 1,
        test_chains: None,
        steps: 1,
        tau,
        granularity: Granularity::Fine,
        complement: ComplementPolicy::Record,
    }
    .validate()
}

/// A config file: the experiment plus optional run-level settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

/// Chain count after applying the scale factor, never below one.
pub fn scaled(count: usize, scale: f64) -> usize {
    ((count as f64 * scale).round() as usize).max(1)
}

/// Unital accessible structure with a zero block of size `n0`.
pub fn restricted_structure(n: usize, n0: usize) -> Result<AlgebraStructure> {
    AlgebraStructure::new(n0, vec![Block { dim: n - n0, mult: 1 }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        for kind in [
            "gen_data",
            "enumerate",
            "hierarchy",
            "train",
            "scan",
            "tradeoff",
            "restricted",
            "waveguide",
            "verify",
        ] {
            let e = Experiment::default_for(kind).unwrap();
            assert_eq!(e.kind(), kind);
            e.validate().unwrap();
            let text = serde_json::to_string(&e).unwrap();
            assert_eq!(serde_json::from_str::<Experiment>(&text).unwrap(), e);
        }
        assert!(Experiment::default_for("nope").is_err());
    }

    #[test]
    fn zero_chains_are_rejected() {
        let Experiment::GenData(mut c) = Experiment::default_for("gen_data").unwrap() else {
            unreachable!()
        };
        c.problem.chains = 0;
        assert!(Experiment::GenData(c).validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"kind":"enumerate","n":4,"colour":"blue"}"#;
        assert!(serde_json::from_str::<Experiment>(text).is_err());
    }

    #[test]
    fn config_file_carries_run_settings() {
        let text = r#"{"kind":"enumerate","n":3,"seed":5,"scale":1.0}"#;
        let c: ConfigFile = serde_json::from_str(text).unwrap();
        assert_eq!(c.seed, Some(5));
        assert_eq!(
            c.experiment,
            Experiment::Enumerate(EnumerateConfig { n: 3, allow_n0: false })
        );
        let back: ConfigFile = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ConfigFile>(r#"{"kind":"enumerate","n":3,"sede":5}"#).is_err());
    }

    #[test]
    fn candidates_parse() {
        let c: Candidates = serde_json::from_str(r#""all""#).unwrap();
        assert_eq!(c.resolve(4).unwrap().len(), 11);
        let c: Candidates = serde_json::from_str(r#"[{"n0":0,"blocks":[[2,1]]}]"#).unwrap();
        assert_eq!(c.resolve(2).unwrap().len(), 1);
        assert!(c.resolve(3).is_err());
    }

    #[test]
    fn scaling_rounds_and_floors() {
        assert_eq!(scaled(500, 0.1), 50);
        assert_eq!(scaled(3, 0.1), 1);
        assert_eq!(scaled(60_000, 1.0), 60_000);
    }

    #[test]
    fn full_waveguide_list_has_eleven_structures_of_dimension_eight() {
        let l = Experiment::waveguide_full_candidates();
        assert_eq!(l.len(), 11);
        assert!(l.iter().all(|s| s.n() == 8));
    }
}
