//! Level-set measures and weak-`L^{p,∞}` quasi-norms.
//!
//! Level sets are measured by stratified Monte Carlo over a bounded domain.
//! Points are drawn once per [`PointSet`]; every function evaluated on the
//! same set and every threshold share those points, so estimates are
//! monotone in `λ` and differences of functions are measured consistently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ball_volume, Dimension, SphereRule};
use crate::kernels::{sphere_norm, FracOrder, HomogeneousKernel};
use crate::measures::Measure;
use crate::operators::{convolve, EvalOptions, FreeFunction};
use crate::rng::{self, StreamRng};
use rand::Rng;

/// Smallest accepted sampling budget.
pub const MIN_BUDGET: usize = 100;
/// Default number of strata.
pub const DEFAULT_STRATA: usize = 64;
/// Default number of thresholds in a weak-norm scan.
pub const DEFAULT_LAMBDA_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainShape {
    /// `inner <= |x| <= outer`.
    ExteriorOfBall { inner: f64, outer: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `[-half_width, half_width]^n` minus the open ball of radius `hole`.
    FullSpaceProxy { half_width: f64, hole: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDomain {
    dim: Dimension,
    shape: DomainShape,
}

impl EvalDomain {
    pub fn new(dim: Dimension, shape: DomainShape) -> Result<Self> {
        match &shape {
            DomainShape::ExteriorOfBall { inner, outer } => {
                if !(*inner >= 0.0 && inner < outer && outer.is_finite()) {
                    return invalid(format!("exterior domain needs 0 <= inner < outer (got {inner}, {outer})"));
                }
            }
            DomainShape::Box { lower, upper } => {
                dim.check(lower)?;
                dim.check(upper)?;
                if lower.iter().zip(upper).any(|(a, b)| !(b > a && (b - a).is_finite())) {
                    return invalid("box domain needs lower < upper on every axis");
                }
            }
            DomainShape::FullSpaceProxy { half_width, hole } => {
                if !(*hole >= 0.0 && *half_width > 0.0 && half_width.is_finite()) {
                    return invalid("full-space proxy needs a positive half width and nonnegative hole");
                }
                if *hole >= *half_width * dim.as_f64().sqrt() {
                    return invalid("full-space proxy hole swallows the whole box");
                }
            }
        }
        Ok(Self { dim, shape })
    }

    pub fn exterior(dim: Dimension, inner: f64, outer: f64) -> Result<Self> {
        Self::new(dim, DomainShape::ExteriorOfBall { inner, outer })
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        let n = self.dim;
        match &self.shape {
            DomainShape::ExteriorOfBall { inner, outer } => ball_volume(n, *outer) - ball_volume(n, *inner),
            DomainShape::Box { lower, upper } => lower.iter().zip(upper).map(|(a, b)| b - a).product(),
            DomainShape::FullSpaceProxy { half_width, hole } => {
                let nf = n.as_f64();
                let cube = (2.0 * half_width).powf(nf);
                if *hole <= *half_width {
                    cube - ball_volume(n, *hole)
                } else {
                    // ball pokes out of the cube: fall back to the sampler's own estimate
                    let set = PointSet::sample(self, 1 << 16, 0x0d0a, 0).expect("valid domain");
                    set.strata.iter().map(|s| s.measure * s.accepted as f64 / s.drawn as f64).sum()
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            DomainShape::ExteriorOfBall { inner, outer } => {
                let r = crate::norm(x);
                r >= *inner && r <= *outer
            }
            DomainShape::Box { lower, upper } => x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v >= a && v <= b),
            DomainShape::FullSpaceProxy { half_width, hole } => {
                x.iter().all(|v| v.abs() <= *half_width) && crate::norm(x) >= *hole
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    Grid,
    MonteCarlo,
    ClosedForm,
}

/// Estimate of `|{x ∈ D : |f(x)| > λ}|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetEstimate {
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
    pub samples: usize,
    pub seed: u64,
}

impl LevelSetEstimate {
    pub fn closed_form(lambda: f64, value: f64) -> Self {
        Self {
            lambda,
            estimate: value,
            std_error: 0.0,
            method: EstimateMethod::ClosedForm,
            samples: 0,
            seed: 0,
        }
    }
}

/// `sup_λ λ |{|f| > λ}|^{1/p}` over a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakNormEstimate {
    pub p: f64,
    pub value: f64,
    /// Delta-method error of the value at the argmax threshold.
    pub std_error: f64,
    pub argmax_lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct StratumPoints {
    measure: f64,
    drawn: usize,
    accepted: usize,
    /// Accepted points, flattened.
    points: Vec<f64>,
}

/// Stratified sample of a domain.
#[derive(Debug, Clone)]
pub struct PointSet {
    dim: Dimension,
    strata: Vec<StratumPoints>,
    samples: usize,
    seed: u64,
}

impl PointSet {
    /// Draws `budget` points in [`DEFAULT_STRATA`] strata. `tag` separates
    /// independent experiments sharing a seed.
    pub fn sample(domain: &EvalDomain, budget: usize, seed: u64, tag: u32) -> Result<Self> {
        Self::sample_with_strata(domain, budget, DEFAULT_STRATA, seed, tag)
    }

    pub fn sample_with_strata(domain: &EvalDomain, budget: usize, strata: usize, seed: u64, tag: u32) -> Result<Self> {
        if budget < MIN_BUDGET {
            return invalid(format!("sampling budget {budget} below the minimum of {MIN_BUDGET}"));
        }
        if strata == 0 {
            return invalid("at least one stratum is required");
        }
        let n = domain.dim.get();
        let k = strata.min(budget / 2);
        let strata: Vec<StratumPoints> = (0..k)
            .into_par_iter()
            .map(|i| {
                let m = budget / k + usize::from(i < budget % k);
                let mut r = rng::stream(seed, rng::stream_id(tag, i as u32));
                draw_stratum(domain, i, k, m, n, &mut r)
            })
            .collect();
        Ok(Self {
            dim: domain.dim,
            strata,
            samples: budget,
            seed,
        })
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Accepted points in stratum order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        let n = self.dim.get();
        self.strata.iter().flat_map(move |s| s.points.chunks(n))
    }

    /// Evaluates `f` at every accepted point, strata in parallel.
    pub fn evaluate<F>(&self, f: F) -> Result<Samples>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let n = self.dim.get();
        let values: Result<Vec<Vec<f64>>> = self
            .strata
            .par_iter()
            .map(|s| s.points.chunks(n).map(&f).collect::<Result<Vec<f64>>>())
            .collect();
        Ok(Samples {
            measures: self.strata.iter().map(|s| s.measure).collect(),
            drawn: self.strata.iter().map(|s| s.drawn).collect(),
            values: values?,
            samples: self.samples,
            seed: self.seed,
        })
    }
}

fn draw_stratum(domain: &EvalDomain, i: usize, k: usize, m: usize, n: usize, r: &mut StreamRng) -> StratumPoints {
    let mut points = Vec::with_capacity(m * n);
    let mut p = vec![0.0; n];
    match &domain.shape {
        DomainShape::ExteriorOfBall { inner, outer } => {
            let nf = n as f64;
            let (a, b) = (inner.powf(nf), outer.powf(nf));
            let lo = a + (b - a) * i as f64 / k as f64;
            let hi = a + (b - a) * (i + 1) as f64 / k as f64;
            for _ in 0..m {
                let u: f64 = r.random();
                let rad = (lo + u * (hi - lo)).powf(1.0 / nf);
                rng::unit_direction(r, &mut p);
                points.extend(p.iter().map(|v| v * rad));
            }
            StratumPoints {
                measure: domain.measure() / k as f64,
                drawn: m,
                accepted: m,
                points,
            }
        }
        DomainShape::Box { lower, upper } => {
            let (lo, hi) = slab(lower[0], upper[0], i, k);
            for _ in 0..m {
                p[0] = lo + r.random::<f64>() * (hi - lo);
                for j in 1..n {
                    p[j] = lower[j] + r.random::<f64>() * (upper[j] - lower[j]);
                }
                points.extend_from_slice(&p);
            }
            let measure = (hi - lo) * (1..n).map(|j| upper[j] - lower[j]).product::<f64>();
            StratumPoints { measure, drawn: m, accepted: m, points }
        }
        DomainShape::FullSpaceProxy { half_width, hole } => {
            let l = *half_width;
            let (lo, hi) = slab(-l, l, i, k);
            for _ in 0..m {
                p[0] = lo + r.random::<f64>() * (hi - lo);
                for v in p.iter_mut().skip(1) {
                    *v = -l + r.random::<f64>() * 2.0 * l;
                }
                if crate::norm(&p) >= *hole {
                    points.extend_from_slice(&p);
                }
            }
            let measure = (hi - lo) * (2.0 * l).powi(n as i32 - 1);
            StratumPoints { measure, drawn: m, accepted: points.len() / n, points }
        }
    }
}

fn slab(a: f64, b: f64, i: usize, k: usize) -> (f64, f64) {
    (a + (b - a) * i as f64 / k as f64, a + (b - a) * (i + 1) as f64 / k as f64)
}

/// Function values on a [`PointSet`].
#[derive(Debug, Clone)]
pub struct Samples {
    measures: Vec<f64>,
    drawn: Vec<usize>,
    values: Vec<Vec<f64>>,
    samples: usize,
    seed: u64,
}

impl Samples {
    /// Pointwise combination of two evaluations on the same point set.
    pub fn zip_with(&self, other: &Samples, op: impl Fn(f64, f64) -> f64) -> Result<Samples> {
        if self.drawn != other.drawn || self.values.iter().map(Vec::len).ne(other.values.iter().map(Vec::len)) {
            return invalid("samples come from different point sets");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| op(*u, *v)).collect())
            .collect();
        Ok(Samples { values, ..self.clone() })
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Samples {
        let values = self.values.iter().map(|s| s.iter().map(|v| op(*v)).collect()).collect();
        Samples { values, ..self.clone() }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    /// Stratified estimate of `|{|f| > λ}|`.
    pub fn level_set(&self, lambda: f64) -> LevelSetEstimate {
        let mut est = 0.0;
        let mut var = 0.0;
        for ((meas, m), vals) in self.measures.iter().zip(&self.drawn).zip(&self.values) {
            let hits = vals.iter().filter(|v| v.abs() > lambda).count();
            let p = hits as f64 / *m as f64;
            est += meas * p;
            if *m > 1 {
                var += meas * meas * p * (1.0 - p) / (*m - 1) as f64;
            }
        }
        LevelSetEstimate {
            lambda,
            estimate: est,
            std_error: var.sqrt(),
            method: EstimateMethod::MonteCarlo,
            samples: self.samples,
            seed: self.seed,
        }
    }

    pub fn weak_norm(&self, p: f64, grid: &[f64]) -> Result<WeakNormEstimate> {
        if !(p > 0.0) {
            return invalid(format!("weak-norm exponent must be positive (got {p})"));
        }
        if grid.is_empty() {
            return invalid("empty threshold grid");
        }
        let mut best = (0.0, grid[0], 0.0);
        for &l in grid {
            let e = self.level_set(l);
            let v = l * e.estimate.powf(1.0 / p);
            if v > best.0 {
                let se = if e.estimate > 0.0 { l / p * e.estimate.powf(1.0 / p - 1.0) * e.std_error } else { 0.0 };
                best = (v, l, se);
            }
        }
        Ok(WeakNormEstimate {
            p,
            value: best.0,
            std_error: best.2,
            argmax_lambda: best.1,
            lambda_grid: grid.to_vec(),
            samples: self.samples,
            seed: self.seed,
        })
    }
}

/// `count` geometric thresholds from `lo` to `hi`.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return invalid(format!("threshold range must satisfy 0 < lo <= hi (got {lo}, {hi})"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let r = (hi / lo).ln();
    Ok((0..count).map(|i| lo * (r * i as f64 / (count - 1) as f64).exp()).collect())
}

/// `|{x ∈ D : |f(x)| > λ}|` by stratified Monte Carlo.
pub fn distribution<F>(f: F, lambda: f64, domain: &EvalDomain, budget: usize, seed: u64) -> Result<LevelSetEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(lambda > 0.0) {
        return invalid(format!("threshold must be positive (got {lambda})"));
    }
    Ok(PointSet::sample(domain, budget, seed, 0)?.evaluate(f)?.level_set(lambda))
}

/// Weak-`L^{p,∞}` quasi-norm of `f` over `domain`, scanning
/// [`DEFAULT_LAMBDA_POINTS`] geometric thresholds in `lambda_range`. A lower
/// bound limited by the grid.
pub fn weak_norm<F>(f: F, p: f64, domain: &EvalDomain, lambda_range: (f64, f64), budget: usize, seed: u64) -> Result<WeakNormEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let grid = lambda_grid(lambda_range.0, lambda_range.1, DEFAULT_LAMBDA_POINTS)?;
    PointSet::sample(domain, budget, seed, 0)?.evaluate(f)?.weak_norm(p, &grid)
}

/// `|{x : |Ω(x)| / |x|^{n-α} > λ}| = ‖Ω‖_p^p / (n λ^p)` with
/// `p = n / (n - α)`.
pub fn closed_form_levelset(kernel: &HomogeneousKernel, alpha: FracOrder, lambda: f64, rule: &SphereRule) -> Result<f64> {
    if !(lambda > 0.0) {
        return invalid(format!("threshold must be positive (got {lambda})"));
    }
    let n = kernel.dim();
    let p = alpha.weak_exponent(n);
    let norm = sphere_norm(kernel, p, rule)?;
    Ok(norm.powf(p) / (n.as_f64() * lambda.powf(p)))
}

/// Weak Young check `‖f * g‖_{q,∞} <= C ‖g‖_{r,∞} ‖f‖_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YoungReport {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub convolution_norm: WeakNormEstimate,
    pub kernel_norm: f64,
    pub mass: f64,
    pub ratio: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn weak_young_check(
    g: &FreeFunction,
    f: &Measure,
    p: f64,
    q: f64,
    r: f64,
    domain: &EvalDomain,
    lambda_range: (f64, f64),
    budget: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<YoungReport> {
    if ((1.0 + 1.0 / q) - (1.0 / p + 1.0 / r)).abs() > 1e-12 {
        return invalid(format!("exponents violate 1 + 1/q = 1/p + 1/r (p={p}, q={q}, r={r})"));
    }
    if p != 1.0 {
        return Err(Error::Unsupported("weak Young check is implemented for p = 1".into()));
    }
    if f.dim() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim().get(), got: f.dim().get() });
    }
    let n = f.dim();
    let grid = lambda_grid(lambda_range.0, lambda_range.1, DEFAULT_LAMBDA_POINTS)?;
    let conv = PointSet::sample(domain, budget, seed, 0)?
        .evaluate(|x| convolve(g, f, x, opts))?
        .weak_norm(q, &grid)?;
    // kernel norm from its closed-form distribution over a wide grid
    let wide = lambda_grid(lambda_range.0 * 1e-3, lambda_range.1 * 1e3, 4096)?;
    let kernel_norm = wide
        .iter()
        .map(|l| g.distribution(*l, n).map(|d| l * d.powf(1.0 / r)))
        .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
        .ok_or_else(|| Error::Unsupported("weak norm of a non-radial kernel".into()))?;
    let mass = f.total_mass();
    Ok(YoungReport {
        p,
        q,
        r,
        ratio: conv.value / (kernel_norm * mass),
        convolution_norm: conv,
        kernel_norm,
        mass,
    })
}
