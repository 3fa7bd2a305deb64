//! `t -> 0+` experiments: limit targets, convergence sweeps of type 1
//! (restricted weak norm), type 2 (in measure) and type 3 (distribution
//! functions), the dilated-ball counterexample and the truncated power
//! example separating types 1 and 2.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ball_volume, sphere_quadrature, unit_ball_volume, Dimension, SphereRule};
use crate::kernels::{FracOrder, HomogeneousKernel, RadialProfile};
use crate::lorentz::{lambda_grid, closed_form_levelset, EvalDomain, LevelSetEstimate, PointSet, Samples, WeakNormEstimate};
use crate::measures::{Measure, MeasureKind};
use crate::operators::{maximal_radial, EvalOptions, FreeFunction, OperatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `sup_r φ_r^α(x) V(ℝⁿ)`.
    RadialSup,
    /// `|Ω(x)| / |x|^{n-α} V(ℝⁿ)`.
    HomogAbs,
    /// `Ω(x) / |x|^{n-α} V(ℝⁿ)`.
    HomogSigned,
    /// `g(x) V(ℝⁿ)`.
    Convolution,
}

#[derive(Debug, Clone)]
enum TargetKernel {
    Profile(RadialProfile),
    Homog(HomogeneousKernel),
    Free(FreeFunction),
}

/// Pointwise limit of `T V_t` as `t -> 0+`. Singular at the origin except
/// for bounded convolution kernels.
#[derive(Debug, Clone)]
pub struct LimitTarget {
    kind: TargetKind,
    dim: Dimension,
    alpha: FracOrder,
    mass: f64,
    kernel: TargetKernel,
}

/// Default pairing: maximal families with absolute targets, fractional
/// integrals with the signed target, convolutions with `g`.
pub fn limit_target(spec: &OperatorSpec, v: &Measure) -> Result<LimitTarget> {
    let kind = match spec {
        OperatorSpec::RadialMaximal { .. } => TargetKind::RadialSup,
        OperatorSpec::HomogMaximal { .. } | OperatorSpec::TruncatedMaximal { .. } => TargetKind::HomogAbs,
        OperatorSpec::FracIntegral { .. } => TargetKind::HomogSigned,
        OperatorSpec::Convolution { g: FreeFunction::Homogeneous { .. } } => TargetKind::HomogSigned,
        OperatorSpec::Convolution { .. } => TargetKind::Convolution,
    };
    target_with_kind(spec, v, kind)
}

/// Explicit pairing, used to compare against a mismatched target.
pub fn target_with_kind(spec: &OperatorSpec, v: &Measure, kind: TargetKind) -> Result<LimitTarget> {
    spec.validate(v.dim())?;
    let kernel = match (spec, kind) {
        (OperatorSpec::RadialMaximal { profile, .. }, TargetKind::RadialSup) => TargetKernel::Profile(profile.clone()),
        (
            OperatorSpec::HomogMaximal { kernel, .. }
            | OperatorSpec::FracIntegral { kernel, .. }
            | OperatorSpec::TruncatedMaximal { kernel }
            | OperatorSpec::Convolution { g: FreeFunction::Homogeneous { kernel, .. } },
            TargetKind::HomogAbs | TargetKind::HomogSigned,
        ) => TargetKernel::Homog(kernel.clone()),
        (OperatorSpec::Convolution { g }, TargetKind::Convolution) if g.is_radial() => TargetKernel::Free(g.clone()),
        _ => {
            return Err(Error::Unsupported(format!(
                "target {kind:?} does not pair with the {} family",
                spec.family()
            )))
        }
    };
    Ok(LimitTarget {
        kind,
        dim: v.dim(),
        alpha: spec.alpha(),
        mass: v.total_mass(),
        kernel,
    })
}

impl LimitTarget {
    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.dim.check(x)?;
        let r = crate::norm(x);
        let beta = self.alpha.exponent(self.dim);
        match &self.kernel {
            TargetKernel::Profile(p) => Ok(p.sup_dilate(self.alpha, x)? * self.mass),
            TargetKernel::Homog(k) => {
                let o = k.eval(x)?;
                let o = if self.kind == TargetKind::HomogAbs { o.abs() } else { o };
                Ok(o * r.powf(-beta) * self.mass)
            }
            TargetKernel::Free(g) => Ok(g.eval(x)? * self.mass),
        }
    }

    /// `|{x ∈ ℝⁿ : |target(x)| > λ}|` in closed form.
    pub fn level_set(&self, lambda: f64, rule: &SphereRule) -> Result<f64> {
        if !(lambda > 0.0) {
            return invalid(format!("threshold must be positive (got {lambda})"));
        }
        let beta = self.alpha.exponent(self.dim);
        match &self.kernel {
            TargetKernel::Profile(p) => {
                let s = p.sup_scale(self.alpha).0 * self.mass;
                Ok(ball_volume(self.dim, (s / lambda).powf(1.0 / beta)))
            }
            TargetKernel::Homog(k) if self.mass > 0.0 => closed_form_levelset(k, self.alpha, lambda / self.mass, rule),
            TargetKernel::Free(g) if self.mass > 0.0 => g
                .distribution(lambda / self.mass, self.dim)
                .ok_or_else(|| Error::Unsupported("no closed-form level set".into())),
            _ => Ok(0.0),
        }
    }
}

/// Parameters of a `t -> 0+` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Strictly decreasing dilation parameters.
    pub t_values: Vec<f64>,
    /// Inner radius of the type-1 domain.
    pub rho: f64,
    /// Outer truncation radius for every domain.
    pub outer: f64,
    /// Thresholds for the type-2 and type-3 measurements.
    pub lambdas: Vec<f64>,
    /// Threshold range scanned by the type-1 weak norm.
    pub type1_lambda_range: (f64, f64),
    pub type1_lambda_points: usize,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub lambda: f64,
    /// `|{|T V_t - target| > λ}|`.
    pub type2: LevelSetEstimate,
    /// `|{|T V_t| > λ}|`.
    pub type3_op: LevelSetEstimate,
    /// `|{|target| > λ}|`.
    pub type3_target: LevelSetEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TRecord {
    pub t: f64,
    pub r_t: f64,
    /// `r_t < ρ / 2`; values are still computed otherwise.
    pub usable: bool,
    pub eps_t: f64,
    /// Two-sided bracket from the concentration split; `None` when the
    /// point is not usable.
    pub beta_t: Option<f64>,
    /// Weak-`L^{n/(n-α),∞}` norm of `T V_t - target` on `ρ <= |x| <= R`.
    pub type1: WeakNormEstimate,
    pub levels: Vec<LevelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub family: String,
    pub target: TargetKind,
    pub dim: usize,
    pub alpha: f64,
    pub mass: f64,
    pub rho: f64,
    pub outer: f64,
    pub budget: usize,
    pub seed: u64,
    pub t_values: Vec<f64>,
    pub records: Vec<TRecord>,
    pub warnings: Vec<String>,
}

/// Points closer than this (relative to the atom norm, absolute near the
/// origin) to an atom are excluded from sweeps.
const ATOM_GUARD: f64 = 1e-9;

pub fn sweep(spec: &OperatorSpec, v: &Measure, cfg: &SweepConfig, opts: &EvalOptions) -> Result<SweepReport> {
    let target = limit_target(spec, v)?;
    sweep_with_target(spec, v, &target, cfg, opts)
}

pub fn sweep_with_target(
    spec: &OperatorSpec,
    v: &Measure,
    target: &LimitTarget,
    cfg: &SweepConfig,
    opts: &EvalOptions,
) -> Result<SweepReport> {
    let n = v.dim();
    spec.validate(n)?;
    if cfg.t_values.is_empty() || cfg.t_values.iter().any(|t| !(*t > 0.0)) {
        return invalid("sweep needs positive t values");
    }
    if cfg.t_values.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("t values must be strictly decreasing");
    }
    if !(cfg.rho > 0.0 && cfg.rho < cfg.outer) {
        return invalid(format!("need 0 < rho < R (got {}, {})", cfg.rho, cfg.outer));
    }
    if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|l| !(*l > 0.0)) {
        return invalid("sweep needs positive thresholds");
    }
    let mut warnings = Vec::new();
    if cfg.t_values[0] >= 1.0 {
        warnings.push("t >= 1 is outside the small-scale regime".to_string());
    }
    if v.is_atomic() && target.kind() == TargetKind::HomogSigned {
        warnings.push("signed target with an atomic measure: convergence is not guaranteed".to_string());
    }
    let alpha = spec.alpha();
    let beta = alpha.exponent(n);
    let p = alpha.weak_exponent(n);
    let grid = lambda_grid(cfg.type1_lambda_range.0, cfg.type1_lambda_range.1, cfg.type1_lambda_points)?;
    let rule = target_rule(n)?;
    let type1_domain = EvalDomain::exterior(n, cfg.rho, cfg.outer)?;
    let full_domain = EvalDomain::exterior(n, 0.0, cfg.outer)?;

    let mut records = Vec::with_capacity(cfg.t_values.len());
    for (i, &t) in cfg.t_values.iter().enumerate() {
        let split = v.split(t)?;
        let vt = v.dilate(t)?;
        let r_t = split.r_t;
        let usable = cfg.rho > 2.0 * r_t;
        if !usable {
            warnings.push(format!("t = {t}: rho <= 2 sqrt(t), split radius reaches the annulus"));
        }
        let beta_t = usable.then(|| {
            let up = (cfg.rho / (cfg.rho - r_t)).powf(beta) - 1.0;
            let down = 1.0 - (cfg.rho / (cfg.rho + r_t)).powf(beta) * (1.0 - split.eps_t);
            up.max(down)
        });
        let guard = atom_guard(&vt);
        let op = |x: &[f64]| if guard(x) { Ok(0.0) } else { spec.eval(&vt, x, opts) };
        let tg = |x: &[f64]| if guard(x) { Ok(0.0) } else { target.eval(x) };

        let set1 = PointSet::sample(&type1_domain, cfg.budget, cfg.seed, 2 * i as u32)?;
        let diff1 = difference(&set1, &op, &tg)?;
        let type1 = diff1.weak_norm(p, &grid)?;

        let set2 = PointSet::sample(&full_domain, cfg.budget, cfg.seed, 2 * i as u32 + 1)?;
        let op2 = set2.evaluate(op)?;
        let tg2 = set2.evaluate(tg)?;
        let diff2 = op2.zip_with(&tg2, |a, b| a - b)?;
        let levels = cfg
            .lambdas
            .iter()
            .map(|&l| {
                let type3_target = match target.level_set(l, &rule) {
                    Ok(v) => LevelSetEstimate::closed_form(l, v),
                    Err(_) => tg2.level_set(l),
                };
                LevelRecord {
                    lambda: l,
                    type2: diff2.level_set(l),
                    type3_op: op2.level_set(l),
                    type3_target,
                }
            })
            .collect();
        records.push(TRecord {
            t,
            r_t,
            usable,
            eps_t: split.eps_t,
            beta_t,
            type1,
            levels,
        });
    }
    Ok(SweepReport {
        family: spec.family().to_string(),
        target: target.kind(),
        dim: n.get(),
        alpha: alpha.get(),
        mass: v.total_mass(),
        rho: cfg.rho,
        outer: cfg.outer,
        budget: cfg.budget,
        seed: cfg.seed,
        t_values: cfg.t_values.clone(),
        records,
        warnings,
    })
}

fn difference(
    set: &PointSet,
    op: &(impl Fn(&[f64]) -> Result<f64> + Sync),
    tg: &(impl Fn(&[f64]) -> Result<f64> + Sync),
) -> Result<Samples> {
    set.evaluate(|x| Ok(op(x)? - tg(x)?))
}

fn atom_guard(vt: &Measure) -> impl Fn(&[f64]) -> bool + Sync + '_ {
    move |x: &[f64]| match vt.kind() {
        MeasureKind::Atomic { points, .. } => points
            .iter()
            .any(|p| crate::dist(p, x) <= ATOM_GUARD * crate::norm(p).max(1.0)),
        _ => false,
    }
}

/// Sphere rule used for closed-form homogeneous level sets.
fn target_rule(n: Dimension) -> Result<SphereRule> {
    match n.get() {
        1 => sphere_quadrature(n, 1),
        2 => sphere_quadrature(n, 512),
        3 => sphere_quadrature(n, 48),
        _ => sphere_quadrature(n, 1 << 16),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "t,rho,lambda,type1_norm,type1_std_error,type2_measure,type2_std_error,type3_op,type3_op_std_error,type3_target,type3_target_std_error,eps_t,beta_t,usable";

    /// One row per `(t, λ)`; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            for l in &r.levels {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    fmt_f(r.t),
                    fmt_f(self.rho),
                    fmt_f(l.lambda),
                    fmt_f(r.type1.value),
                    fmt_f(r.type1.std_error),
                    fmt_f(l.type2.estimate),
                    fmt_f(l.type2.std_error),
                    fmt_f(l.type3_op.estimate),
                    fmt_f(l.type3_op.std_error),
                    fmt_f(l.type3_target.estimate),
                    fmt_f(l.type3_target.std_error),
                    fmt_f(r.eps_t),
                    r.beta_t.map(fmt_f).unwrap_or_else(|| "NaN".into()),
                    r.usable
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn type1_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.type1.value).collect()
    }

    /// Type-2 measures at threshold index `k`, one per `t`.
    pub fn type2_series(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.levels[k].type2.estimate).collect()
    }

    pub fn type3_op_series(&self, k: usize) -> Vec<LevelSetEstimate> {
        self.records.iter().map(|r| r.levels[k].type3_op.clone()).collect()
    }
}

/// Desk-scale convergence: last over first at most `0.25` and nonincreasing
/// over the second half of the series.
pub fn convergence_verified(series: &[f64]) -> bool {
    if series.len() < 2 || !(series[0] > 0.0) {
        return false;
    }
    let tail = &series[series.len() / 2..];
    series[series.len() - 1] <= 0.25 * series[0] && tail.windows(2).all(|w| w[1] <= w[0])
}

/// Certificate for `dV = χ_{B(0,1)} dx`: the type-1 quantity does not
/// vanish on the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub n: usize,
    pub t: f64,
    /// `2 V(ℝⁿ) / tⁿ`.
    pub lambda0: f64,
    /// `|B(0, t/2)|`.
    pub inner_ball: f64,
    pub product: f64,
    /// `ω_n² / 2^{n-1}`.
    pub expected: f64,
    pub product_rel_error: f64,
    /// Largest relative deviation of `M V_t` from `ω_n / tⁿ` on the grid.
    pub plateau_max_rel_error: f64,
    pub points_checked: usize,
    /// Grid points where `|M V_t(x) - V(ℝⁿ)/|x|ⁿ| > λ₀`.
    pub gap_points: usize,
    /// `λ₀ |{x ∈ B(0,t/2) : |M V_t(x) - V(ℝⁿ)/|x|ⁿ| > λ₀}|`, exact. Equals
    /// `product` for `n >= 2`; smaller in one dimension, where the gap
    /// only exceeds `λ₀` on `|x| < t/3`.
    pub verified_product: f64,
}

pub fn counterexample_rm13(n: usize, t: f64, points: usize, opts: &EvalOptions) -> Result<Counterexample> {
    let dim = Dimension::new(n)?;
    if !(t > 0.0 && t < 1.0) {
        return invalid(format!("counterexample needs 0 < t < 1 (got {t})"));
    }
    if points == 0 {
        return invalid("counterexample needs at least one grid point");
    }
    let omega = unit_ball_volume(dim);
    let v = Measure::uniform_ball(dim, 1.0, 1.0)?;
    let vt = v.dilate(t)?;
    let mass = v.total_mass();
    let tn = t.powi(n as i32);
    let lambda0 = 2.0 * mass / tn;
    let inner_ball = ball_volume(dim, t / 2.0);
    let product = lambda0 * inner_ball;
    let expected = omega * omega / 2f64.powi(n as i32 - 1);
    let plateau = omega / tn;
    let profile = RadialProfile::indicator(dim);
    let mut worst: f64 = 0.0;
    let mut gap_points = 0;
    let grid = inner_grid(n, t / 2.0, points);
    for x in &grid {
        let m = maximal_radial(&profile, FracOrder::zero(), &vt, x, opts)?;
        worst = worst.max((m - plateau).abs() / plateau);
        let r = crate::norm(x);
        if r > 0.0 && (m - mass / r.powi(n as i32)).abs() > lambda0 {
            gap_points += 1;
        }
    }
    // |x| < t 3^{-1/n} is where ω/|x|ⁿ - ω/tⁿ > 2ω/tⁿ
    let gap_radius = (t / 2.0).min(t * 3f64.powf(-1.0 / n as f64));
    Ok(Counterexample {
        n,
        t,
        lambda0,
        inner_ball,
        product,
        expected,
        product_rel_error: (product - expected).abs() / expected,
        plateau_max_rel_error: worst,
        points_checked: grid.len(),
        gap_points,
        verified_product: lambda0 * ball_volume(dim, gap_radius),
    })
}

/// About `count` points of the closed ball `B(0, radius)`, boundary
/// included.
fn inner_grid(n: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => (0..count)
            .map(|k| vec![-radius + 2.0 * radius * k as f64 / (count.max(2) - 1) as f64])
            .collect(),
        _ => {
            let per = (count as f64).powf(1.0 / n as f64).ceil() as usize;
            let mut out = Vec::new();
            let mut idx = vec![0usize; n];
            'outer: loop {
                let x: Vec<f64> = idx
                    .iter()
                    .map(|&k| -radius + 2.0 * radius * k as f64 / (per.max(2) - 1) as f64)
                    .collect();
                if crate::norm(&x) <= radius {
                    out.push(x);
                }
                for d in 0..n {
                    idx[d] += 1;
                    if idx[d] < per {
                        continue 'outer;
                    }
                    idx[d] = 0;
                }
                break;
            }
            out.truncate(count);
            out
        }
    }
}

/// `g(x) = |x|^{-n/p}` against its truncation `g_(t) = g χ_{B(0,1/t)}`:
/// convergence in measure holds while the weak norm of the difference
/// stays bounded below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub n: usize,
    pub p: f64,
    pub t_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Outer radius as a multiple of `1/t`.
    pub outer_factor: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            n: 1,
            p: 1.0,
            t_values: vec![0.1, 0.01, 0.001],
            lambdas: vec![0.5, 1.0],
            outer_factor: 2000.0,
            budget: 1 << 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub t: f64,
    pub type2: Vec<LevelSetEstimate>,
    /// `|{|x| > 1/t, |x|^{-n/p} > λ}|`.
    pub type2_exact: Vec<f64>,
    pub weak_norm: WeakNormEstimate,
    /// Weak norm of the difference over the truncated domain, in closed
    /// form on the same threshold grid.
    pub weak_norm_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub config: HierarchyConfig,
    pub records: Vec<HierarchyRecord>,
    /// Smallest measured weak norm across `t`.
    pub weak_norm_lower_bound: f64,
}

pub fn hierarchy_demo(cfg: &HierarchyConfig) -> Result<HierarchyReport> {
    let dim = Dimension::new(cfg.n)?;
    if !(cfg.p > 0.0) {
        return invalid(format!("exponent must be positive (got {})", cfg.p));
    }
    if cfg.t_values.windows(2).any(|w| w[1] >= w[0]) || cfg.t_values.iter().any(|t| !(*t > 0.0)) {
        return invalid("t values must be positive and strictly decreasing");
    }
    if !(cfg.outer_factor > 1.0) {
        return invalid("outer radius must exceed 1/t");
    }
    let e = cfg.n as f64 / cfg.p;
    let omega = unit_ball_volume(dim);
    let nf = cfg.n as f64;
    let mut records = Vec::new();
    for (i, &t) in cfg.t_values.iter().enumerate() {
        let cut = 1.0 / t;
        let outer = cfg.outer_factor * cut;
        let f = |x: &[f64]| {
            let r = crate::norm(x);
            Ok(if r > cut { r.powf(-e) } else { 0.0 })
        };
        let domain = EvalDomain::exterior(dim, 0.0, outer)?;
        let samples = PointSet::sample(&domain, cfg.budget, cfg.seed, i as u32)?.evaluate(f)?;
        let type2 = cfg.lambdas.iter().map(|&l| samples.level_set(l)).collect();
        let exact = |l: f64, outer: f64| omega * (l.powf(-1.0 / e).min(outer).powf(nf) - cut.powf(nf)).max(0.0);
        let type2_exact = cfg.lambdas.iter().map(|&l| exact(l, f64::INFINITY)).collect();
        // thresholds down to g(R) resolve the truncated tail
        let grid = lambda_grid(outer.powf(-e) * 0.5, cut.powf(-e), 64)?;
        let weak_norm = samples.weak_norm(cfg.p, &grid)?;
        let weak_norm_exact = grid.iter().map(|&l| l * exact(l, outer).powf(1.0 / cfg.p)).fold(0.0, f64::max);
        records.push(HierarchyRecord {
            t,
            type2,
            type2_exact,
            weak_norm,
            weak_norm_exact,
        });
    }
    let weak_norm_lower_bound = records.iter().map(|r| r.weak_norm.value).fold(f64::INFINITY, f64::min);
    Ok(HierarchyReport {
        config: cfg.clone(),
        records,
        weak_norm_lower_bound,
    })
}
