//! Experiment configuration: a sectioned TOML file plus `--set key=value` overrides.

use std::fmt;

use heatflow::density::MixtureComponent;
use heatflow::{
    FlowConfig, PerturbationFamily, Quadrature, QuadratureMethod, QuadratureSpec, TargetDensity, TimeParametrization,
    VelocityMode, WeierstrassSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Transport,
    MapGrid,
    Regularity,
    Verify,
    ScoreTable,
    MarginalCheck,
    ExponentSweep,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Transport => "transport",
            Self::MapGrid => "map-grid",
            Self::Regularity => "regularity",
            Self::Verify => "verify",
            Self::ScoreTable => "score-table",
            Self::MarginalCheck => "marginal-check",
            Self::ExponentSweep => "exponent-sweep",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub output_dir: String,
    pub density: DensityConfig,
    pub quadrature: QuadratureConfig,
    pub flow: FlowSection,
    pub transport: TransportConfig,
    pub map_grid: GridConfig,
    pub regularity: RegularityConfig,
    pub score_table: ScoreTableConfig,
    pub marginal_check: MarginalConfig,
    pub exponent_sweep: SweepConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            output_dir: "heatflow-out".into(),
            density: DensityConfig::default(),
            quadrature: QuadratureConfig::default(),
            flow: FlowSection::default(),
            transport: TransportConfig::default(),
            map_grid: GridConfig::default(),
            regularity: RegularityConfig::default(),
            score_table: ScoreTableConfig::default(),
            marginal_check: MarginalConfig::default(),
            exponent_sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityShape {
    GaussianPerturbation,
    BallSupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Zero,
    ConjugateGaussian,
    LogMixtureRatio,
    WeierstrassFourier,
}

/// Family parameters are flat: a mixture lists `weights`, `means` (component
/// means concatenated) and `variances`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub kind: DensityShape,
    pub family: FamilyName,
    pub dim: usize,
    #[serde(alias = "K")]
    pub k: f64,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness_order: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family_seed: Option<u64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            kind: DensityShape::GaussianPerturbation,
            family: FamilyName::Zero,
            dim: 1,
            k: 1.0,
            beta: 1.0,
            smoothness_order: None,
            mean: None,
            variance: None,
            weights: None,
            means: None,
            variances: None,
            amplitude: None,
            base: None,
            terms: None,
            family_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureName {
    GaussHermite,
    Importance,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub method: QuadratureName,
    pub order: usize,
    pub samples: usize,
    pub antithetic: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            method: QuadratureName::GaussHermite,
            order: 48,
            samples: 4096,
            antithetic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeName {
    Direct,
    LogSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Auto,
    MomentForm,
    IbpForm,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step_fraction: f64,
    pub time_parametrization: TimeName,
    pub velocity_mode: ModeName,
    pub bounding_radius: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            t_end: d.t_end,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            max_step_fraction: d.max_step_fraction,
            time_parametrization: TimeName::Direct,
            velocity_mode: ModeName::Auto,
            bounding_radius: d.bounding_radius,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub n: usize,
    pub t_stop: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { n: 1000, t_stop: 1.0 }
    }
}

/// Rectangular grid `[lo, hi]^d` with `points` per axis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            points: 61,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityConfig {
    pub order: usize,
    pub pairs: usize,
    /// Strictly descending.
    pub scales: Vec<f64>,
    /// Empty means the origin.
    pub center: Vec<f64>,
    pub radius: f64,
    pub probe_half_width: Option<f64>,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            order: 1,
            pairs: 64,
            scales: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            center: Vec::new(),
            radius: 1.0,
            probe_half_width: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreTableConfig {
    pub taus: Vec<f64>,
    pub grid: GridConfig,
}

impl Default for ScoreTableConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.01, 0.1, 1.0],
            grid: GridConfig {
                lo: -3.0,
                hi: 3.0,
                points: 13,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MarginalConfig {
    pub times: Vec<f64>,
    pub n: usize,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        Self {
            times: vec![0.3, 0.6, 0.9],
            n: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepQuantity {
    GradientNorm,
    LambdaMax,
    ScoreEigmax,
}

/// Log-spaced sweep of `1 - t²` (or `τ` for the score) with a slope band.
/// Unset bounds default from `beta` of the density.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub quantity: SweepQuantity,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub count: usize,
    pub sup_points: usize,
    pub half_width: Option<f64>,
    pub band_low: Option<f64>,
    pub band_high: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            quantity: SweepQuantity::GradientNorm,
            lo: None,
            hi: None,
            count: 9,
            sup_points: 256,
            half_width: None,
            band_low: None,
            band_high: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub anchors: usize,
    pub samples: usize,
    pub marginal_t: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            anchors: 8,
            samples: 2000,
            marginal_t: 0.5,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Parse { line: usize, column: usize, message: String },
    Override { key: String, message: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { line, column, message } => {
                write!(f, "config parse error at line {line}, column {column}: {}", message.trim_end())
            }
            Self::Override { key, message } => write!(f, "bad override --set {key}: {}", message.trim_end()),
            Self::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
    ConfigError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Parses the file text, then applies `key=value` overrides (dotted keys,
/// TOML-typed values, bare words read as strings).
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override {
            key: o.clone(),
            message: "expected key=value".into(),
        })?;
        let key = key.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut table;
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::Override {
                    key: key.to_string(),
                    message: format!("`{p}` is not a section"),
                })?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
    }
    ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError::Override {
        key: overrides.join(", "),
        message: e.message().to_string(),
    })
}

impl ExperimentConfig {
    /// Fills every derived default so the written config reproduces the run.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        self.density.resolve(self.seed)?;
        let dim = self.density.dim;
        let ball = self.density.kind == DensityShape::BallSupported;
        let rc = &mut self.regularity;
        if rc.center.is_empty() {
            rc.center = vec![0.0; dim];
        }
        rc.probe_half_width.get_or_insert(rc.radius);
        let sc = &mut self.exponent_sweep;
        let score = sc.quantity == SweepQuantity::ScoreEigmax;
        sc.lo.get_or_insert(if score { 1e-4 } else { 1e-6 });
        sc.hi.get_or_insert(if score { 1.0 } else { 1e-2 });
        sc.half_width.get_or_insert(if ball { 0.9 } else { 3.0 });
        let centre = self.density.beta.fract() / 2.0 - 1.0;
        sc.band_low.get_or_insert(centre - 0.2);
        if !score {
            sc.band_high.get_or_insert(centre + 0.3);
        }
        Ok(())
    }
}

fn forbid(present: bool, key: &str, family: FamilyName) -> Result<(), ConfigError> {
    if present {
        Err(ConfigError::Invalid(format!("density.{key} does not apply to family {family:?}")))
    } else {
        Ok(())
    }
}

impl DensityConfig {
    /// Fills the family defaults and rejects parameters of other families.
    pub fn resolve(&mut self, seed: u64) -> Result<(), ConfigError> {
        let f = self.family;
        let conj = matches!(f, FamilyName::ConjugateGaussian);
        let mix = matches!(f, FamilyName::LogMixtureRatio);
        let wei = matches!(f, FamilyName::WeierstrassFourier);
        forbid(!conj && self.mean.is_some(), "mean", f)?;
        forbid(!conj && self.variance.is_some(), "variance", f)?;
        forbid(!mix && self.weights.is_some(), "weights", f)?;
        forbid(!mix && self.means.is_some(), "means", f)?;
        forbid(!mix && self.variances.is_some(), "variances", f)?;
        forbid(!wei && self.amplitude.is_some(), "amplitude", f)?;
        forbid(!wei && self.base.is_some(), "base", f)?;
        forbid(!wei && self.terms.is_some(), "terms", f)?;
        forbid(!wei && self.family_seed.is_some(), "family_seed", f)?;
        if conj {
            self.mean.get_or_insert_with(|| vec![0.0; self.dim]);
            self.variance.get_or_insert(1.0);
        }
        if mix && (self.weights.is_none() || self.means.is_none() || self.variances.is_none()) {
            return Err(ConfigError::Invalid(
                "log-mixture-ratio needs density.weights, density.means and density.variances".into(),
            ));
        }
        if wei {
            let d = WeierstrassSpec::new(0.5, self.beta, seed);
            self.amplitude.get_or_insert(d.amplitude);
            self.base.get_or_insert(d.base);
            self.terms.get_or_insert(d.terms);
            self.family_seed.get_or_insert(seed);
        }
        Ok(())
    }

    /// Expects [`resolve`](Self::resolve) to have run.
    pub fn build(&self) -> heatflow::Result<TargetDensity> {
        let mut family = match self.family {
            FamilyName::Zero => PerturbationFamily::zero(),
            FamilyName::ConjugateGaussian => {
                PerturbationFamily::conjugate_gaussian(self.mean.clone().unwrap_or_default(), self.variance.unwrap_or(1.0))
            }
            FamilyName::LogMixtureRatio => {
                let w = self.weights.as_deref().unwrap_or_default();
                let m = self.means.as_deref().unwrap_or_default();
                let v = self.variances.as_deref().unwrap_or_default();
                if v.len() != w.len() || m.len() != w.len() * self.dim {
                    return Err(heatflow::Error::InvalidConfig(format!(
                        "mixture needs {} variances and {} concatenated mean coordinates for {} weights",
                        w.len(),
                        w.len() * self.dim,
                        w.len()
                    )));
                }
                PerturbationFamily::log_mixture_ratio(
                    w.iter()
                        .enumerate()
                        .map(|(i, &weight)| MixtureComponent {
                            weight,
                            mean: m[i * self.dim..(i + 1) * self.dim].to_vec(),
                            variance: v[i],
                        })
                        .collect(),
                )
            }
            FamilyName::WeierstrassFourier => PerturbationFamily::weierstrass(WeierstrassSpec {
                amplitude: self.amplitude.unwrap_or(0.5),
                base: self.base.unwrap_or(2.0),
                beta: self.beta,
                terms: self.terms.unwrap_or(12),
                seed: self.family_seed.unwrap_or(0),
            }),
        };
        if let Some(order) = self.smoothness_order {
            family = family.with_smoothness_order(order);
        }
        match self.kind {
            DensityShape::GaussianPerturbation => TargetDensity::gaussian_perturbation(family, self.k, self.beta, self.dim),
            DensityShape::BallSupported => TargetDensity::ball_supported(family, self.k, self.beta, self.dim),
        }
    }
}

impl QuadratureConfig {
    pub fn build(&self, dim: usize, seed: u64) -> heatflow::Result<Quadrature> {
        let spec = match self.method {
            QuadratureName::GaussHermite => QuadratureSpec::gauss_hermite(dim, self.order),
            QuadratureName::Importance => QuadratureSpec {
                method: QuadratureMethod::SelfNormalizedIs {
                    samples: self.samples,
                    antithetic: self.antithetic,
                },
                dim,
                seed,
            },
        };
        Quadrature::new(spec)
    }
}

impl FlowSection {
    pub fn build(&self) -> heatflow::Result<FlowConfig> {
        let cfg = FlowConfig {
            t_end: self.t_end,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step_fraction: self.max_step_fraction,
            time_parametrization: match self.time_parametrization {
                TimeName::Direct => TimeParametrization::Direct,
                TimeName::LogSwitch => TimeParametrization::LogSwitch,
            },
            velocity_mode: match self.velocity_mode {
                ModeName::Auto => None,
                ModeName::MomentForm => Some(VelocityMode::MomentForm),
                ModeName::IbpForm => Some(VelocityMode::IbpForm),
            },
            bounding_radius: self.bounding_radius,
            ..FlowConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(load(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "seed = 1\n[flow]\nrel_tol = 1e-6\nbogus = 3\n";
        match load(text, &[]) {
            Err(ConfigError::Parse { line, column, .. }) => assert_eq!((line, column), (4, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = load("", &["flow.rel_tol=1e-6".into(), "density.family=conjugate-gaussian".into(), "seed=9".into()])
            .unwrap();
        assert_eq!(cfg.flow.rel_tol, 1e-6);
        assert_eq!(cfg.density.family, FamilyName::ConjugateGaussian);
        assert_eq!(cfg.seed, 9);
        assert!(matches!(load("", &["flow.nope=1".into()]), Err(ConfigError::Override { .. })));
        assert!(matches!(load("", &["seed".into()]), Err(ConfigError::Override { .. })));
    }

    #[test]
    fn family_parameters_are_checked() {
        let mut d = DensityConfig {
            amplitude: Some(1.0),
            ..Default::default()
        };
        assert!(d.resolve(0).is_err());
        let mut d = DensityConfig {
            family: FamilyName::WeierstrassFourier,
            beta: 0.5,
            k: 2.0,
            ..Default::default()
        };
        d.resolve(3).unwrap();
        assert_eq!((d.terms, d.family_seed), (Some(12), Some(3)));
        assert!(d.build().is_ok());
        let mut d = DensityConfig {
            family: FamilyName::LogMixtureRatio,
            weights: Some(vec![0.5, 0.5]),
            means: Some(vec![-1.0]),
            variances: Some(vec![0.5, 0.5]),
            ..Default::default()
        };
        d.resolve(0).unwrap();
        assert!(d.build().is_err());
    }
}
