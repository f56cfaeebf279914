//! JSON run configurations, one per subcommand. Unknown keys are rejected
//! and every defaulted field is written back out in `resolved_config.json`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coarse::Warnings;
use crate::data::{Axis, NoiseKind};
use crate::error::{Error, Result};
use crate::library::{fokker_planck_library, ode_poly_trig_library, pde_poly_library, FeatureLibrary, Term};
use crate::pipeline::{SparseSettings, WeakSettings};
use crate::sim::{BuiltinOde, Diffusion, Drift, InitialDistribution, ParticleEnsemble};
use crate::wendy::{OeSettings, WendySettings};

pub const SCHEMA: u32 = 1;

/// Read a config file, check the schema version and resolve relative paths
/// against the file's directory.
pub fn load<T: DeserializeOwned + Paths>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut cfg: T = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    match value.get("schema") {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(u64::from(SCHEMA)) => {}
        Some(other) => return Err(Error::Config(format!("unsupported schema {other}; expected {SCHEMA}"))),
        None => return Err(Error::Config("missing field `schema`".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

/// Configs that reference files.
pub trait Paths {
    fn resolve_paths(&mut self, base: &Path);
}

fn absolutize(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        let joined = base.join(&*p);
        *p = std::path::absolute(&joined).unwrap_or(joined);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    #[serde(default)]
    pub kind: NoiseKind,
    pub level: f64,
}

fn default_schema() -> u32 {
    SCHEMA
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SimModel {
    Ks {
        #[serde(default = "default_modes")]
        initial_modes: usize,
        #[serde(default = "crate::sim::ks_space_axis")]
        x: Axis,
        #[serde(default = "crate::sim::ks_time_axis")]
        t: Axis,
        #[serde(default = "default_ks_dt")]
        dt: f64,
    },
    Ode {
        model: BuiltinOde,
        #[serde(default)]
        t: Option<Axis>,
        #[serde(default)]
        initial: Option<Vec<f64>>,
        #[serde(default = "default_ode_tol")]
        tol: f64,
    },
    Particles(ParticleSpec),
}

fn default_modes() -> usize {
    16
}

fn default_ks_dt() -> f64 {
    crate::sim::KS_DT
}

fn default_ode_tol() -> f64 {
    1e-10
}

/// Particle system plus the histogram grid its density is reported on.
/// The ensemble seed comes from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_initial")]
    pub initial: InitialDistribution,
    #[serde(default = "default_drift")]
    pub drift: Drift,
    #[serde(default = "default_diffusion")]
    pub diffusion: Diffusion,
    #[serde(default = "default_hist_x")]
    pub x: Axis,
    #[serde(default = "default_hist_t")]
    pub t: Axis,
    #[serde(default = "default_em_dt")]
    pub dt: f64,
}

fn default_particles() -> usize {
    100_000
}
fn default_initial() -> InitialDistribution {
    InitialDistribution::Gaussian { mean: 2.0, std: 0.3 }
}
fn default_drift() -> Drift {
    Drift::Linear { theta: 1.0 }
}
fn default_diffusion() -> Diffusion {
    Diffusion::Constant { d: 0.5 }
}
fn default_hist_x() -> Axis {
    Axis { n: 161, lo: -4.0, hi: 4.0 }
}
fn default_hist_t() -> Axis {
    Axis { n: 81, lo: 0.0, hi: 4.0 }
}
fn default_em_dt() -> f64 {
    1e-3
}

impl ParticleSpec {
    pub fn ensemble(&self, seed: u64) -> ParticleEnsemble {
        ParticleEnsemble { particles: self.particles, initial: self.initial, drift: self.drift, diffusion: self.diffusion, seed }
    }
}

impl Default for ParticleSpec {
    fn default() -> Self {
        ParticleSpec {
            particles: default_particles(),
            initial: default_initial(),
            drift: default_drift(),
            diffusion: default_diffusion(),
            x: default_hist_x(),
            t: default_hist_t(),
            dt: default_em_dt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub model: SimModel,
    #[serde(default)]
    pub noise: Option<NoiseLevel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// File name inside `out`; `.csv` selects CSV, anything else binary.
    #[serde(default = "default_data_name")]
    pub output: String,
}

fn default_data_name() -> String {
    "data.bin".into()
}

impl Paths for SimulateConfig {
    fn resolve_paths(&mut self, _base: &Path) {}
}

// ---------------------------------------------------------------- noise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub input: PathBuf,
    pub noise: NoiseLevel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_noisy_name")]
    pub output: String,
}

fn default_noisy_name() -> String {
    "noisy.bin".into()
}

impl Paths for NoiseConfig {
    fn resolve_paths(&mut self, base: &Path) {
        absolutize(&mut self.input, base);
    }
}

// ---------------------------------------------------------------- library

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LibrarySpec {
    /// `d_x^k (u^p)` for one field on one spatial axis.
    PdePoly { max_derivative: u32, max_power: u32 },
    /// Monomials in every component up to `max_degree`, plus sines and
    /// cosines of each component at `trig_freqs`.
    OdePoly {
        max_degree: u32,
        #[serde(default)]
        trig_freqs: Vec<u32>,
    },
    /// `d_x^k (x^r p)` for a density on one spatial axis.
    FokkerPlanck { max_derivative: u32, max_coord_power: u32 },
    Terms { components: usize, spatial_dims: usize, terms: Vec<Term> },
}

impl LibrarySpec {
    /// Build for a dataset with `components` fields.
    pub fn build(&self, components: usize) -> Result<FeatureLibrary> {
        let lib = match self {
            LibrarySpec::PdePoly { max_derivative, max_power } => pde_poly_library(*max_derivative, *max_power),
            LibrarySpec::OdePoly { max_degree, trig_freqs } => ode_poly_trig_library(components, *max_degree, trig_freqs)?,
            LibrarySpec::FokkerPlanck { max_derivative, max_coord_power } => fokker_planck_library(*max_derivative, *max_coord_power),
            LibrarySpec::Terms { components, spatial_dims, terms } => {
                FeatureLibrary::new(*components, *spatial_dims, terms.clone()).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        if lib.is_empty() {
            return Err(Error::Config("library is empty".into()));
        }
        Ok(lib)
    }
}

// ---------------------------------------------------------------- discover

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoverConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub input: PathBuf,
    pub library: LibrarySpec,
    #[serde(default)]
    pub weak: WeakSettings,
    #[serde(default)]
    pub sparse: SparseSettings,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Paths for DiscoverConfig {
    fn resolve_paths(&mut self, base: &Path) {
        absolutize(&mut self.input, base);
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Wendy,
    Oe,
    Both,
}

impl Method {
    pub fn runs_wendy(self) -> bool {
        matches!(self, Method::Wendy | Method::Both)
    }

    pub fn runs_oe(self) -> bool {
        matches!(self, Method::Oe | Method::Both)
    }
}

/// Fixed model structure: term labels per component, optionally with the
/// true coefficients in the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub library: LibrarySpec,
    pub terms: Vec<Vec<String>>,
    #[serde(default)]
    pub truth: Option<Vec<Vec<f64>>>,
}

impl ModelSpec {
    /// Library plus per-component support indices.
    pub fn resolve(&self, components: usize) -> Result<(FeatureLibrary, Vec<Vec<usize>>)> {
        let lib = self.library.build(components)?;
        let labels = lib.labels();
        let supports = self
            .terms
            .iter()
            .map(|row| {
                row.iter()
                    .map(|l| {
                        labels.iter().position(|x| x == l).ok_or_else(|| {
                            Error::Config(format!("term `{l}` is not in the library; available: {}", labels.join(", ")))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if supports.len() != lib.components() {
            return Err(Error::Config(format!("{} term lists for {} components", supports.len(), lib.components())));
        }
        if let Some(t) = &self.truth {
            if t.len() != supports.len() || t.iter().zip(&supports).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::Config("`truth` must match the shape of `terms`".into()));
            }
        }
        Ok((lib, supports))
    }

    pub fn truth_flat(&self) -> Option<Vec<f64>> {
        self.truth.as_ref().map(|t| t.iter().flatten().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub input: PathBuf,
    pub model: ModelSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub wendy: WendySettings,
    #[serde(default)]
    pub oe: OeSettings,
    /// Output-error starting point (flattened support coefficients);
    /// defaults to the weak-form least-squares solution.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_method() -> Method {
    Method::Wendy
}

impl Paths for EstimateConfig {
    fn resolve_paths(&mut self, base: &Path) {
        absolutize(&mut self.input, base);
    }
}

// ---------------------------------------------------------------- coarsegrain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarsegrainConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default)]
    pub particles: ParticleSpec,
    #[serde(default = "default_fp_library")]
    pub library: LibrarySpec,
    #[serde(default)]
    pub weak: WeakSettings,
    #[serde(default)]
    pub sparse: SparseSettings,
    #[serde(default)]
    pub warnings: Warnings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_fp_library() -> LibrarySpec {
    LibrarySpec::FokkerPlanck { max_derivative: 2, max_coord_power: 2 }
}

impl Paths for CoarsegrainConfig {
    fn resolve_paths(&mut self, _base: &Path) {}
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BenchProblem {
    /// KS from fresh band-limited initial data per trial, with the canonical
    /// three-term model.
    Ks {
        #[serde(default = "default_modes")]
        initial_modes: usize,
        #[serde(default = "crate::sim::ks_space_axis")]
        x: Axis,
        #[serde(default = "crate::sim::ks_time_axis")]
        t: Axis,
    },
    /// A built-in ODE with its generating support.
    Ode { model: BuiltinOde },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Wendy,
    /// Weak-form ordinary least squares (the first WENDy iterate).
    WeakOls,
    /// Finite-difference equation error with ordinary least squares.
    EeOls,
    Oe,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Wendy => "wendy",
            BenchMethod::WeakOls => "weak-ols",
            BenchMethod::EeOls => "ee-ols",
            BenchMethod::Oe => "oe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub problem: BenchProblem,
    #[serde(default = "default_levels")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<BenchMethod>,
    #[serde(default)]
    pub wendy: WendySettings,
    #[serde(default)]
    pub oe: OeSettings,
    /// Output error starts from the truth with each coefficient scaled by
    /// `1 + u`, `u` uniform in `[-p, p]`.
    #[serde(default = "default_perturbation")]
    pub initial_perturbation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_levels() -> Vec<f64> {
    vec![0.2]
}
fn default_trials() -> usize {
    10
}
fn default_methods() -> Vec<BenchMethod> {
    vec![BenchMethod::Wendy, BenchMethod::Oe]
}
fn default_perturbation() -> f64 {
    0.2
}

impl Paths for BenchConfig {
    fn resolve_paths(&mut self, _base: &Path) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_schema_named() {
        let e = parse::<SimulateConfig>(r#"{"model": {"kind": "ks"}}"#).unwrap_err();
        assert!(e.to_string().contains("schema"), "{e}");
    }

    #[test]
    fn missing_key_named() {
        let e = parse::<DiscoverConfig>(r#"{"schema": 1, "input": "a.bin"}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("library"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse::<SimulateConfig>(r#"{"schema": 1, "model": {"kind": "ks"}, "colour": 3}"#).is_err());
        assert!(parse::<SimulateConfig>(r#"{"schema": 1, "model": {"kind": "ks", "modes": 3}}"#).is_err());
    }

    #[test]
    fn wrong_schema_rejected() {
        assert!(parse::<SimulateConfig>(r#"{"schema": 2, "model": {"kind": "ks"}}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c: SimulateConfig = parse(r#"{"schema": 1, "model": {"kind": "ks"}}"#).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: SimulateConfig = parse(&text).unwrap();
        assert_eq!(c, back);
        match c.model {
            SimModel::Ks { x, t, .. } => assert_eq!((x.n, t.n), (256, 301)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_method_rejected() {
        let e = parse::<EstimateConfig>(
            r#"{"schema": 1, "input": "d.bin", "method": "magic",
                "model": {"library": {"kind": "ode-poly", "max_degree": 2}, "terms": [["u^1"]]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn empty_terms_library_is_config_error() {
        let spec = LibrarySpec::Terms { components: 1, spatial_dims: 1, terms: vec![] };
        assert!(matches!(spec.build(1), Err(Error::Config(_))));
    }
}
