//! Experiment files: TOML with nested tables, validated against each other
//! before anything runs.

use std::fmt;
use std::path::{Path, PathBuf};

use limitlab::kernels::{FracOrder, HomogeneousKernel, KernelShape, ProfileShape, RadialProfile};
use limitlab::limits::{limit_target, target_with_kind, LimitTarget, SweepConfig, TargetKind};
use limitlab::{Dimension, EvalOptions, FreeFunction, Measure, OperatorSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimension: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Overrides the family's default limit target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetKind>,
    pub operator: OperatorConfig,
    pub measure: MeasureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dini: Option<DiniSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerics: Option<NumericsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

fn default_seed() -> u64 {
    1
}

fn default_budget() -> usize {
    1 << 14
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    RadialMaximal {
        #[serde(default)]
        alpha: f64,
        profile: ProfileShape,
    },
    HomogMaximal {
        #[serde(default)]
        alpha: f64,
        kernel: KernelShape,
    },
    FracIntegral {
        #[serde(default)]
        alpha: f64,
        kernel: KernelShape,
    },
    TruncatedMaximal {
        kernel: KernelShape,
    },
    Convolution {
        g: GConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GConfig {
    Heat,
    Bump {
        #[serde(default = "one")]
        radius: f64,
    },
    Power {
        exponent: f64,
    },
    TruncatedPower {
        exponent: f64,
        cap: f64,
    },
    Homogeneous {
        #[serde(default)]
        alpha: f64,
        kernel: KernelShape,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    Dirac {
        point: Vec<f64>,
        #[serde(default = "one")]
        weight: f64,
    },
    Atomic {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Constant `density` on `B(0, radius)`.
    UniformBall {
        #[serde(default = "one")]
        radius: f64,
        #[serde(default = "one")]
        density: f64,
    },
    UniformProbability {
        #[serde(default = "one")]
        radius: f64,
    },
    /// Shell values on `(radii[k-1], radii[k]]`.
    Radial {
        radii: Vec<f64>,
        values: Vec<f64>,
    },
    /// Standard Gaussian density truncated at `outer`, `steps` shells.
    Gaussian {
        outer: f64,
        steps: usize,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        cells: Vec<usize>,
        values: Vec<f64>,
    },
    /// `(point, weight)` rows; relative paths resolve against the config.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub rho: f64,
    pub outer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_type1_range")]
    pub type1_lambda_range: [f64; 2],
    #[serde(default = "default_type1_points")]
    pub type1_lambda_points: usize,
}

fn default_type1_range() -> [f64; 2] {
    [1e-4, 1e2]
}

fn default_type1_points() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiniSection {
    pub q: f64,
    pub s: f64,
    #[serde(default = "one")]
    pub t_max: f64,
    /// Sphere rule size passed to the quadrature builder.
    #[serde(default = "default_dini_order")]
    pub order: usize,
    #[serde(default = "default_dini_levels")]
    pub levels: usize,
    #[serde(default = "default_shift_budget")]
    pub shift_budget: usize,
}

fn default_dini_order() -> usize {
    256
}

fn default_dini_levels() -> usize {
    24
}

fn default_shift_budget() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    pub p: f64,
    pub t: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_outer_factor")]
    pub outer_factor: f64,
}

fn default_outer_factor() -> f64 {
    2000.0
}

/// Quadrature knobs; anything omitted keeps the library default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_directions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_directions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pv_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_stem")]
    pub stem: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stem() -> String {
    "sweep".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            stem: default_stem(),
        }
    }
}

/// Parse or validation failure, pointing at a line of the source when one
/// can be identified.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line whose key is `key`, ignoring table headers and comments.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

/// Everything an experiment needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dim: Dimension,
    pub spec: OperatorSpec,
    pub measure: Measure,
    pub target: LimitTarget,
    pub options: EvalOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_in(text, None)
    }

    /// Like [`Self::from_toml`], resolving relative CSV paths against `base`.
    pub fn from_toml_in(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let (MeasureConfig::Csv { path }, Some(base)) = (&mut cfg.measure, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.build_in().map_err(|(key, message)| ConfigError {
            line: key.and_then(|k| line_of_key(text, k)),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::from_toml_in(&text, path.parent()).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    /// Fails for values TOML cannot hold, such as seeds above `i64::MAX`.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError { line: None, message: e.to_string() })
    }

    pub fn build(&self) -> Result<Experiment, ConfigError> {
        self.build_in().map_err(|(_, message)| ConfigError { line: None, message })
    }

    /// Cross-validation. Errors carry the key most likely at fault.
    fn build_in(&self) -> Result<Experiment, (Option<&'static str>, String)> {
        let dim = Dimension::new(self.dimension).map_err(|e| (Some("dimension"), e.to_string()))?;
        let frac = |a: f64| FracOrder::new(a, dim).map_err(|e| (Some("alpha"), e.to_string()));
        let kernel = |k: &KernelShape| HomogeneousKernel::new(dim, k.clone()).map_err(|e| (Some("kind"), e.to_string()));
        let spec = match &self.operator {
            OperatorConfig::RadialMaximal { alpha, profile } => OperatorSpec::RadialMaximal {
                profile: RadialProfile::new(dim, profile.clone()).map_err(|e| (Some("kind"), e.to_string()))?,
                alpha: frac(*alpha)?,
            },
            OperatorConfig::HomogMaximal { alpha, kernel: k } => OperatorSpec::HomogMaximal {
                kernel: kernel(k)?,
                alpha: frac(*alpha)?,
            },
            OperatorConfig::FracIntegral { alpha, kernel: k } => OperatorSpec::FracIntegral {
                kernel: kernel(k)?,
                alpha: frac(*alpha)?,
            },
            OperatorConfig::TruncatedMaximal { kernel: k } => OperatorSpec::TruncatedMaximal { kernel: kernel(k)? },
            OperatorConfig::Convolution { g } => OperatorSpec::Convolution {
                g: match g {
                    GConfig::Heat => FreeFunction::Heat,
                    GConfig::Bump { radius } => FreeFunction::Bump { radius: *radius },
                    GConfig::Power { exponent } => FreeFunction::Power { exponent: *exponent },
                    GConfig::TruncatedPower { exponent, cap } => FreeFunction::TruncatedPower {
                        exponent: *exponent,
                        cap: *cap,
                    },
                    GConfig::Homogeneous { alpha, kernel: k } => FreeFunction::Homogeneous {
                        kernel: kernel(k)?,
                        alpha: frac(*alpha)?,
                    },
                },
            },
        };
        spec.validate(dim).map_err(|e| (Some("family"), e.to_string()))?;
        let measure = self.measure_for(dim).map_err(|e| (Some("kind"), e))?;
        let target = match self.target {
            Some(kind) => target_with_kind(&spec, &measure, kind),
            None => limit_target(&spec, &measure),
        }
        .map_err(|e| (Some("target"), e.to_string()))?;
        if let Some(d) = &self.domain {
            if !(d.rho > 0.0 && d.rho < d.outer) {
                return Err((Some("rho"), format!("need 0 < rho < outer (got {}, {})", d.rho, d.outer)));
            }
        }
        if let Some(s) = &self.sweep {
            if s.t.windows(2).any(|w| w[1] >= w[0]) || s.t.iter().any(|t| !(*t > 0.0)) {
                return Err((Some("t"), "t values must be positive and strictly decreasing".into()));
            }
            if s.lambdas.is_empty() || s.lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err((Some("lambdas"), "thresholds must be positive".into()));
            }
            if self.domain.is_none() {
                return Err((None, "a sweep needs a [domain] table".into()));
            }
        }
        if self.budget < limitlab::lorentz::MIN_BUDGET {
            return Err((Some("budget"), format!("budget must be at least {}", limitlab::lorentz::MIN_BUDGET)));
        }
        let mut options = EvalOptions::default();
        if let Some(nm) = &self.numerics {
            if let Some(v) = nm.near_directions {
                options.near_directions = v;
            }
            if let Some(v) = nm.far_directions {
                options.far_directions = v;
            }
            if let Some(v) = nm.radius_grid {
                options.radius_grid = v;
            }
            if let Some(v) = nm.pv_tol {
                options.pv_tol = v;
            }
        }
        Ok(Experiment {
            dim,
            spec,
            measure,
            target,
            options,
        })
    }

    fn measure_for(&self, dim: Dimension) -> Result<Measure, String> {
        let m = match &self.measure {
            MeasureConfig::Dirac { point, weight } => Measure::dirac(point.clone(), *weight).and_then(|m| {
                if m.dim() == dim {
                    Ok(m)
                } else {
                    Err(limitlab::Error::DimensionMismatch {
                        expected: dim.get(),
                        got: m.dim().get(),
                    })
                }
            }),
            MeasureConfig::Atomic { points, weights } => Measure::atomic(dim, points.clone(), weights.clone()),
            MeasureConfig::UniformBall { radius, density } => Measure::uniform_ball(dim, *radius, *density),
            MeasureConfig::UniformProbability { radius } => Measure::uniform_probability(dim, *radius),
            MeasureConfig::Radial { radii, values } => Measure::radial(dim, radii.clone(), values.clone()),
            MeasureConfig::Gaussian { outer, steps } => {
                let c = (2.0 * std::f64::consts::PI).powf(-dim.as_f64() / 2.0);
                Measure::radial_from_fn(dim, |r| c * (-0.5 * r * r).exp(), *outer, *steps)
            }
            MeasureConfig::Box {
                lower,
                upper,
                cells,
                values,
            } => Measure::box_density(dim, lower.clone(), upper.clone(), cells.clone(), values.clone()),
            MeasureConfig::Csv { path } => {
                let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Measure::atomic_from_csv(dim, std::io::BufReader::new(file))
            }
        };
        m.map_err(|e| e.to_string())
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, ConfigError> {
        let err = |m: &str| ConfigError {
            line: None,
            message: m.to_string(),
        };
        let s = self.sweep.as_ref().ok_or_else(|| err("missing [sweep] table"))?;
        let d = self.domain.as_ref().ok_or_else(|| err("missing [domain] table"))?;
        Ok(SweepConfig {
            t_values: s.t.clone(),
            rho: d.rho,
            outer: d.outer,
            lambdas: s.lambdas.clone(),
            type1_lambda_range: (s.type1_lambda_range[0], s.type1_lambda_range[1]),
            type1_lambda_points: s.type1_lambda_points,
            budget: self.budget,
            seed: self.seed,
        })
    }
}
