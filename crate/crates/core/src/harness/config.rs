//! Experiment configuration: TOML in, typed parameters out.
//!
//! Parsing happens in two passes so that every error names the offending
//! field: the envelope (`experiment`, `seed`, `threads`, `[output]`) first,
//! then `[params]` against the parameter type of the chosen experiment.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gkp::GkpLattice;
use crate::readout::{ErrorPlacement, VoteMode};
use crate::shift_ec::DecoderMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Wigner,
    FidelityScan,
    HomodyneMisid,
    PhaseEst,
    Prep,
    Compile,
    ShiftEc,
    SurfaceThreshold,
    HybridCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::Wigner,
        Self::FidelityScan,
        Self::HomodyneMisid,
        Self::PhaseEst,
        Self::Prep,
        Self::Compile,
        Self::ShiftEc,
        Self::SurfaceThreshold,
        Self::HybridCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wigner => "wigner",
            Self::FidelityScan => "fidelity-scan",
            Self::HomodyneMisid => "homodyne-misid",
            Self::PhaseEst => "phase-est",
            Self::Prep => "prep",
            Self::Compile => "compile",
            Self::ShiftEc => "shift-ec",
            Self::SurfaceThreshold => "surface-threshold",
            Self::HybridCheck => "hybrid-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Lattice selector. In TOML: `"square"`, `"hexagonal"` or `{ rectangular = λ }`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeChoice {
    #[default]
    Square,
    Hexagonal,
    Rectangular(f64),
}

impl LatticeChoice {
    pub fn build(self) -> Result<GkpLattice> {
        match self {
            Self::Square => Ok(GkpLattice::square()),
            Self::Hexagonal => Ok(GkpLattice::hexagonal()),
            Self::Rectangular(l) => GkpLattice::rectangular(l),
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Square => "square".into(),
            Self::Hexagonal => "hexagonal".into(),
            Self::Rectangular(l) => format!("rectangular-{l}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Simple,
    Improved,
}

impl SchemeChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Improved => "improved",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerParams {
    pub lattice: LatticeChoice,
    pub delta: Vec<f64>,
    /// Logical codewords to render (0 and/or 1).
    pub codewords: Vec<u8>,
    /// Fock cutoff; chosen from `Δ` when absent.
    pub dim: Option<usize>,
    pub grid_points: usize,
    pub grid_half_width: f64,
}

impl Default for WignerParams {
    fn default() -> Self {
        Self { lattice: LatticeChoice::Square, delta: vec![0.3], codewords: vec![0, 1], dim: None, grid_points: 121, grid_half_width: 6.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePoint {
    pub kappa_t: f64,
    pub kappa_phi_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FidelityParams {
    pub noise: Vec<NoisePoint>,
    pub delta: Vec<f64>,
    pub dim: usize,
}

impl Default for FidelityParams {
    fn default() -> Self {
        Self {
            noise: vec![NoisePoint { kappa_t: 0.01, kappa_phi_t: 0.0 }, NoisePoint { kappa_t: 0.0, kappa_phi_t: 0.01 }],
            delta: vec![0.6, 0.5, 0.45, 0.4, 0.35, 0.3],
            dim: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomodyneParams {
    pub lattice: LatticeChoice,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for HomodyneParams {
    fn default() -> Self {
        Self { lattice: LatticeChoice::Square, delta: vec![0.2, 0.25, 0.3, 0.35, 0.4], eta: vec![0.75, 0.8, 0.85, 0.9, 0.95, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseEstParams {
    pub lattice: LatticeChoice,
    pub delta: Vec<f64>,
    pub rounds: Vec<usize>,
    pub schemes: Vec<SchemeChoice>,
    pub vote: VoteMode,
}

impl Default for PhaseEstParams {
    fn default() -> Self {
        Self {
            lattice: LatticeChoice::Square,
            delta: vec![0.2, 0.25, 0.3],
            rounds: vec![1, 3, 5],
            schemes: vec![SchemeChoice::Simple, SchemeChoice::Improved],
            vote: VoteMode::Reuse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncillaNoise {
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub placement: ErrorPlacement,
}

impl Default for AncillaNoise {
    fn default() -> Self {
        Self { p_x: 0.0, p_y: 0.0, p_z: 0.0, placement: ErrorPlacement::DuringCdUniform }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepParams {
    pub lattice: LatticeChoice,
    pub epsilon: Vec<f64>,
    pub cycles: usize,
    pub trajectories: usize,
    pub ancilla: AncillaNoise,
    /// Full round-by-round traces written for this many trajectories per `ε`.
    pub traces: usize,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self { lattice: LatticeChoice::Square, epsilon: vec![0.16, 0.09, 0.04], cycles: 40, trajectories: 100, ancilla: AncillaNoise::default(), traces: 2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompileParams {
    /// Inline circuit text.
    pub circuit: Option<String>,
    /// Circuit file, relative to the working directory.
    pub circuit_file: Option<PathBuf>,
    /// Additional random circuits checked for soundness.
    pub random_circuits: usize,
    pub max_qubits: usize,
    pub max_gates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftEcParams {
    pub sigma: Vec<f64>,
    pub trials: u64,
    /// Ancilla shifts drawn with the same `σ` as the data; clean otherwise.
    pub noisy_ancillas: bool,
    /// Extra Gaussian noise on each homodyne readout.
    pub measurement_sigma: f64,
}

impl Default for ShiftEcParams {
    fn default() -> Self {
        Self { sigma: (0..=10).map(|i| 0.2 + 0.04 * i as f64).collect(), trials: 100_000, noisy_ancillas: true, measurement_sigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceParams {
    pub lattice: LatticeChoice,
    pub d_list: Vec<usize>,
    pub sigma: Vec<f64>,
    pub trials: u64,
    pub decoders: Vec<DecoderMode>,
    /// Code-capacity draws dumped as JSON lines per `(d, σ)` point.
    pub dump_samples: u64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            lattice: LatticeChoice::Square,
            d_list: vec![3, 5, 7],
            sigma: (0..8).map(|i| 0.50 + 0.02 * i as f64).collect(),
            trials: 100_000,
            decoders: vec![DecoderMode::Analog, DecoderMode::Binary],
            dump_samples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridParams {
    pub lattice: LatticeChoice,
    pub delta: Vec<f64>,
    pub weights: Vec<usize>,
    pub schemes: Vec<SchemeChoice>,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self { lattice: LatticeChoice::Square, delta: vec![0.2, 0.25, 0.3, 0.35], weights: vec![1, 4], schemes: vec![SchemeChoice::Simple, SchemeChoice::Improved] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Wigner(WignerParams),
    FidelityScan(FidelityParams),
    HomodyneMisid(HomodyneParams),
    PhaseEst(PhaseEstParams),
    Prep(PrepParams),
    Compile(CompileParams),
    ShiftEc(ShiftEcParams),
    SurfaceThreshold(SurfaceParams),
    HybridCheck(HybridParams),
}

impl Params {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Wigner => Self::Wigner(Default::default()),
            ExperimentKind::FidelityScan => Self::FidelityScan(Default::default()),
            ExperimentKind::HomodyneMisid => Self::HomodyneMisid(Default::default()),
            ExperimentKind::PhaseEst => Self::PhaseEst(Default::default()),
            ExperimentKind::Prep => Self::Prep(Default::default()),
            ExperimentKind::Compile => Self::Compile(Default::default()),
            ExperimentKind::ShiftEc => Self::ShiftEc(Default::default()),
            ExperimentKind::SurfaceThreshold => Self::SurfaceThreshold(Default::default()),
            ExperimentKind::HybridCheck => Self::HybridCheck(Default::default()),
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            Self::Wigner(_) => ExperimentKind::Wigner,
            Self::FidelityScan(_) => ExperimentKind::FidelityScan,
            Self::HomodyneMisid(_) => ExperimentKind::HomodyneMisid,
            Self::PhaseEst(_) => ExperimentKind::PhaseEst,
            Self::Prep(_) => ExperimentKind::Prep,
            Self::Compile(_) => ExperimentKind::Compile,
            Self::ShiftEc(_) => ExperimentKind::ShiftEc,
            Self::SurfaceThreshold(_) => ExperimentKind::SurfaceThreshold,
            Self::HybridCheck(_) => ExperimentKind::HybridCheck,
        }
    }

    fn from_value(kind: ExperimentKind, v: toml::Value) -> Result<Self> {
        Ok(match kind {
            ExperimentKind::Wigner => Self::Wigner(typed(v, "params")?),
            ExperimentKind::FidelityScan => Self::FidelityScan(typed(v, "params")?),
            ExperimentKind::HomodyneMisid => Self::HomodyneMisid(typed(v, "params")?),
            ExperimentKind::PhaseEst => Self::PhaseEst(typed(v, "params")?),
            ExperimentKind::Prep => Self::Prep(typed(v, "params")?),
            ExperimentKind::Compile => Self::Compile(typed(v, "params")?),
            ExperimentKind::ShiftEc => Self::ShiftEc(typed(v, "params")?),
            ExperimentKind::SurfaceThreshold => Self::SurfaceThreshold(typed(v, "params")?),
            ExperimentKind::HybridCheck => Self::HybridCheck(typed(v, "params")?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A complete, validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub output: OutputConfig,
    pub params: Params,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    experiment: ExperimentKind,
    seed: u64,
    #[serde(default)]
    threads: Option<usize>,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    params: Option<toml::Value>,
}

fn path_error(prefix: &str, e: serde_path_to_error::Error<toml::de::Error>) -> Error {
    let inner = e.path().to_string();
    let path = match (prefix.is_empty(), inner.as_str()) {
        (true, _) => inner.clone(),
        (false, ".") => prefix.to_string(),
        (false, _) => format!("{prefix}.{inner}"),
    };
    let msg = e.into_inner().message().to_string();
    Error::config(if path.is_empty() { "." } else { &path }, msg)
}

fn typed<T: DeserializeOwned>(v: toml::Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| path_error(prefix, e))
}

impl ExperimentConfig {
    pub fn new(params: Params, seed: u64) -> Self {
        Self { experiment: params.kind(), seed, threads: None, output: OutputConfig::default(), params }
    }

    /// Parse and validate TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let env: Envelope = serde_path_to_error::deserialize(de).map_err(|e| path_error("", e))?;
        let params = match env.params {
            Some(v) => Params::from_value(env.experiment, v)?,
            None => Params::default_for(env.experiment),
        };
        let cfg = Self { experiment: env.experiment, seed: env.seed, threads: env.threads, output: env.output, params };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML with worker count and output directory
    /// removed, since neither changes the results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        c.output = OutputConfig::default();
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Check every parameter against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        if self.params.kind() != self.experiment {
            return Err(Error::config("params", format!("parameters do not belong to experiment `{}`", self.experiment.as_str())));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        match &self.params {
            Params::Wigner(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.delta", &p.delta, |d| d > 0.0 && d < 1.0, "in (0, 1)")?;
                grid("params.codewords", &p.codewords, |m| m <= 1, "0 or 1")?;
                if let Some(d) = p.dim {
                    at_least("params.dim", d, 2)?;
                }
                at_least("params.grid_points", p.grid_points, 2)?;
                positive("params.grid_half_width", p.grid_half_width)?;
            }
            Params::FidelityScan(p) => {
                if p.noise.is_empty() {
                    return Err(Error::config("params.noise", "must not be empty"));
                }
                for (i, n) in p.noise.iter().enumerate() {
                    unit(&format!("params.noise[{i}].kappa_t"), n.kappa_t)?;
                    unit(&format!("params.noise[{i}].kappa_phi_t"), n.kappa_phi_t)?;
                }
                grid("params.delta", &p.delta, |d| d > 0.0 && d < 1.0, "in (0, 1)")?;
                at_least("params.dim", p.dim, 8)?;
            }
            Params::HomodyneMisid(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.delta", &p.delta, |d| d > 0.0 && d < 1.0, "in (0, 1)")?;
                grid("params.eta", &p.eta, |e| e > 0.0 && e <= 1.0, "in (0, 1]")?;
            }
            Params::PhaseEst(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.delta", &p.delta, |d| d > 0.0 && d < 1.0, "in (0, 1)")?;
                grid("params.rounds", &p.rounds, |n| n % 2 == 1 && n <= 15, "odd and at most 15")?;
                nonempty("params.schemes", &p.schemes)?;
            }
            Params::Prep(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.epsilon", &p.epsilon, |e| e > 0.0 && e < 1.0, "in (0, 1)")?;
                at_least("params.cycles", p.cycles, 1)?;
                at_least("params.trajectories", p.trajectories, 1)?;
                let a = p.ancilla;
                crate::readout::AncillaModel::new(a.p_x, a.p_y, a.p_z, a.placement)
                    .map_err(|e| Error::config("params.ancilla", e.to_string()))?;
            }
            Params::Compile(p) => {
                if p.circuit.is_some() && p.circuit_file.is_some() {
                    return Err(Error::config("params.circuit", "give either `circuit` or `circuit_file`, not both"));
                }
                if p.circuit.is_none() && p.circuit_file.is_none() && p.random_circuits == 0 {
                    return Err(Error::config("params", "nothing to compile: set `circuit`, `circuit_file` or `random_circuits`"));
                }
                if p.random_circuits > 0 {
                    if !(1..=crate::clifford::sim::MAX_STATEVECTOR_QUBITS).contains(&p.max_qubits) {
                        return Err(Error::config("params.max_qubits", "must be between 1 and the state-vector limit"));
                    }
                    at_least("params.max_gates", p.max_gates, 1)?;
                }
            }
            Params::ShiftEc(p) => {
                grid("params.sigma", &p.sigma, |s| s > 0.0 && s.is_finite(), "positive")?;
                at_least("params.trials", p.trials, 1)?;
                if !(p.measurement_sigma >= 0.0) || !p.measurement_sigma.is_finite() {
                    return Err(Error::config("params.measurement_sigma", "must be finite and non-negative"));
                }
            }
            Params::SurfaceThreshold(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.d_list", &p.d_list, |d| d >= 3 && d % 2 == 1 && d <= 25, "odd, between 3 and 25")?;
                grid("params.sigma", &p.sigma, |s| s > 0.0 && s.is_finite(), "positive")?;
                at_least("params.trials", p.trials, 1)?;
                nonempty("params.decoders", &p.decoders)?;
            }
            Params::HybridCheck(p) => {
                lattice("params.lattice", p.lattice)?;
                grid("params.delta", &p.delta, |d| d > 0.0 && d < 1.0, "in (0, 1)")?;
                grid("params.weights", &p.weights, |w| (1..=8).contains(&w), "between 1 and 8")?;
                nonempty("params.schemes", &p.schemes)?;
            }
        }
        Ok(())
    }
}

fn lattice(path: &str, l: LatticeChoice) -> Result<()> {
    l.build().map(|_| ()).map_err(|e| Error::config(path, e.to_string()))
}

fn nonempty<T>(path: &str, xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::config(path, "must not be empty"));
    }
    Ok(())
}

fn grid<T: Copy + std::fmt::Display>(path: &str, xs: &[T], ok: impl Fn(T) -> bool, what: &str) -> Result<()> {
    nonempty(path, xs)?;
    for (i, &x) in xs.iter().enumerate() {
        if !ok(x) {
            return Err(Error::config(format!("{path}[{i}]"), format!("{x} is not {what}")));
        }
    }
    Ok(())
}

fn at_least<T: PartialOrd + std::fmt::Display>(path: &str, x: T, min: T) -> Result<()> {
    if x < min {
        return Err(Error::config(path, format!("{x} is below the minimum {min}")));
    }
    Ok(())
}

fn positive(path: &str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::config(path, format!("{x} is not a positive number")));
    }
    Ok(())
}

fn unit(path: &str, x: f64) -> Result<()> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::config(path, format!("{x} is not in [0, 1)")));
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
