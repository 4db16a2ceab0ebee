//! Run configuration: JSON document, defaults and validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vm_core::{AssetParams, ModelParams, RateCurve, UtilityKind, UtilitySpec, V0Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub nu: f64,
    pub theta: f64,
    pub rho: f64,
    pub mu0: f64,
    pub c: f64,
}

/// Piecewise-constant short rate: `rates[j]` applies from `starts[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub starts: Vec<f64>,
    pub rates: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub assets: Vec<AssetConfig>,
    #[serde(default)]
    pub rate: Option<RateConfig>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "one")]
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_sim: usize,
    pub n_riccati: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_sim: 600,
            n_riccati: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum V0Config {
    Mean,
    Gaussian,
}

impl From<V0Config> for V0Mode {
    fn from(v: V0Config) -> Self {
        match v {
            V0Config::Mean => V0Mode::Mean,
            V0Config::Gaussian => V0Mode::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    /// Paths per RNG block.
    pub blocks: usize,
    /// Initial variance for strategy evaluation; stationarity always samples V_0.
    pub v0: V0Config,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 42,
            blocks: vm_core::simulate::DEFAULT_BLOCK_SIZE,
            v0: V0Config::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindConfig {
    Power,
    Exponential,
}

impl From<KindConfig> for UtilityKind {
    fn from(k: KindConfig) -> Self {
        match k {
            KindConfig::Power => UtilityKind::Power,
            KindConfig::Exponential => UtilityKind::Exponential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub kind: Vec<KindConfig>,
    pub gamma: Vec<f64>,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self {
            kind: vec![KindConfig::Power, KindConfig::Exponential],
            gamma: vec![0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Thresholds used by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative discretisation allowance added to 2·SE in the value check.
    pub value_allowance: f64,
    /// Largest tolerated negative Δ, in paired SEs.
    pub perturbation_z: f64,
    /// Largest tolerated max/min ratio of Δ/ε² per direction.
    pub curvature_spread: f64,
    /// Width, in SEs, of the Δ/ε² intervals used by the curvature check.
    pub curvature_z: f64,
    /// Profile flatness bound in SEs.
    pub flatness_z: f64,
    /// Stationarity bound in SEs.
    pub stationarity_z: f64,
    /// Relative tolerance of the profile endpoints.
    pub endpoint_rel: f64,
    /// Number of profile points including both endpoints.
    pub profile_points: usize,
    /// Perturbation sizes.
    pub epsilons: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value_allowance: 0.005,
            perturbation_z: 3.0,
            curvature_spread: 1.3,
            curvature_z: 2.0,
            flatness_z: 3.0,
            stationarity_z: 3.0,
            endpoint_rel: 1e-6,
            profile_points: 11,
            epsilons: vec![0.1, 0.2, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub utility: UtilityConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("malformed configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model parameters, validated by the core constructors.
    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let assets = m
            .assets
            .iter()
            .map(|a| AssetParams {
                alpha: a.alpha,
                lambda: a.lambda,
                nu: a.nu,
                theta: a.theta,
                rho: a.rho,
                mu0: a.mu0,
                c: a.c,
            })
            .collect();
        let rate = match &m.rate {
            None => RateCurve::zero(),
            Some(r) => RateCurve::new(r.starts.clone(), r.rates.clone()).context("model.rate")?,
        };
        ModelParams::new(assets, rate, m.horizon, m.x0).context("model")
    }

    /// Every configured (kind, γ) pair, kinds outermost.
    pub fn utilities(&self) -> Result<Vec<UtilitySpec>> {
        let mut out = Vec::new();
        for &k in &self.utility.kind {
            for &g in &self.utility.gamma {
                out.push(
                    UtilitySpec::new(k.into(), g)
                        .with_context(|| format!("utility: kind {:?}, gamma {g}", k))?,
                );
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params()?;
        if self.grids.n_sim == 0 {
            bail!("grids.n_sim: must be >= 1");
        }
        if self.grids.n_riccati < 2 || self.grids.n_riccati % 2 != 0 {
            bail!("grids.n_riccati: must be even and >= 2, got {}", self.grids.n_riccati);
        }
        if self.mc.paths < 2 {
            bail!("mc.paths: must be >= 2, got {}", self.mc.paths);
        }
        if self.mc.blocks == 0 {
            bail!("mc.blocks: must be >= 1");
        }
        if self.utility.kind.is_empty() {
            bail!("utility.kind: list must not be empty");
        }
        if self.utility.gamma.is_empty() {
            bail!("utility.gamma: list must not be empty");
        }
        self.utilities()?;
        let t = &self.tolerances;
        let positive = [
            ("tolerances.value_allowance", t.value_allowance >= 0.0),
            ("tolerances.perturbation_z", t.perturbation_z >= 0.0),
            ("tolerances.curvature_spread", t.curvature_spread >= 1.0),
            ("tolerances.curvature_z", t.curvature_z >= 0.0),
            ("tolerances.flatness_z", t.flatness_z > 0.0),
            ("tolerances.stationarity_z", t.stationarity_z > 0.0),
            ("tolerances.endpoint_rel", t.endpoint_rel > 0.0),
        ];
        for (field, ok) in positive {
            if !ok {
                bail!("{field}: out of range");
            }
        }
        if t.profile_points < 2 {
            bail!("tolerances.profile_points: must be >= 2");
        }
        if t.epsilons.is_empty() || t.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            bail!("tolerances.epsilons: need at least one positive value");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form without the output directory, hex encoded.
    pub fn hash(&self) -> String {
        let mut inputs = self.clone();
        inputs.outputs = OutputConfig::default();
        let canonical = serde_json::to_string(&inputs).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_json(&text).with_context(|| format!("in {}", path.display()))
}

/// The two-asset calibration with all defaults.
pub fn default_config() -> RunConfig {
    let p = ModelParams::two_asset_example();
    RunConfig {
        model: ModelConfig {
            assets: p
                .assets
                .iter()
                .map(|a| AssetConfig {
                    alpha: a.alpha,
                    lambda: a.lambda,
                    nu: a.nu,
                    theta: a.theta,
                    rho: a.rho,
                    mu0: a.mu0,
                    c: a.c,
                })
                .collect(),
            rate: None,
            horizon: p.horizon,
            x0: p.x0,
        },
        grids: GridConfig::default(),
        mc: McConfig::default(),
        utility: UtilityConfig::default(),
        outputs: OutputConfig::default(),
        tolerances: Tolerances::default(),
    }
}
