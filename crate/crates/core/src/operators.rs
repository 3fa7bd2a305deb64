//! Pointwise evaluation of the five operator families on finite measures.
//!
//! Atomic measures are handled exactly: every supremum over a radius or a
//! truncation level is attained at an atom distance, so sorting distances
//! and scanning partial sums is enough.
//!
//! Densities are piecewise constant, so a ray `ρ ↦ x + ρθ` leaving the
//! evaluation point crosses them in finitely many segments of constant
//! density. Radial integrals along each segment have closed forms for the
//! homogeneous kernels, and the angular integral uses a sphere rule. When
//! the point is far from a radial density the rays barely see it, so the
//! integral is taken over the source instead.

use std::sync::{Arc, OnceLock};

use crate::error::{invalid, Error, Result};
use crate::geometry::{sphere_quadrature, unit_ball_volume, Dimension, SphereRule};
use crate::kernels::{mean_zero_defect, FracOrder, HomogeneousKernel, ProfileShape, RadialProfile};
use crate::measures::{Measure, MeasureKind};
use crate::quad::{sup_over_radius, GaussLegendre};

/// Free convolution kernels `g` for `T_g V = g * V`.
#[derive(Debug, Clone, PartialEq)]
pub enum FreeFunction {
    /// `e^{-π|x|²}`.
    Heat,
    /// `exp(-1 / (1 - |x/radius|²))` inside the ball, zero outside.
    Bump { radius: f64 },
    /// `|x|^{-exponent}`.
    Power { exponent: f64 },
    /// `min(|x|^{-exponent}, cap)`.
    TruncatedPower { exponent: f64, cap: f64 },
    /// `Ω(x) / |x|^{n-α}`.
    Homogeneous { kernel: HomogeneousKernel, alpha: FracOrder },
}

impl FreeFunction {
    pub fn validate(&self, n: Dimension) -> Result<()> {
        match self {
            FreeFunction::Heat => Ok(()),
            FreeFunction::Bump { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                invalid("bump radius must be positive")
            }
            FreeFunction::Power { exponent } if !(*exponent > 0.0) => invalid("power exponent must be positive"),
            FreeFunction::TruncatedPower { exponent, cap } if !(*exponent > 0.0 && *cap > 0.0) => {
                invalid("truncated power needs a positive exponent and cap")
            }
            FreeFunction::Homogeneous { kernel, alpha } => {
                if kernel.dim() != n {
                    return Err(Error::DimensionMismatch { expected: n.get(), got: kernel.dim().get() });
                }
                FracOrder::new(alpha.get(), n).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// `g(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let r = crate::norm(x);
        match self {
            FreeFunction::Homogeneous { kernel, alpha } => {
                let omega = kernel.eval(x)?;
                Ok(omega * r.powf(-alpha.exponent(kernel.dim())))
            }
            _ => self
                .radial_value(r)
                .ok_or_else(|| Error::Singularity("free kernel evaluated at the origin".into())),
        }
    }

    /// `g` as a function of `|x|` for the radial variants; `None` at a
    /// singularity or for the homogeneous variant.
    pub fn radial_value(&self, r: f64) -> Option<f64> {
        match self {
            FreeFunction::Heat => Some((-std::f64::consts::PI * r * r).exp()),
            FreeFunction::Bump { radius } => {
                let s = r / radius;
                Some(if s < 1.0 { (-1.0 / (1.0 - s * s)).exp() } else { 0.0 })
            }
            FreeFunction::Power { exponent } => (r > 0.0).then(|| r.powf(-exponent)),
            FreeFunction::TruncatedPower { exponent, cap } => {
                Some(if r > 0.0 { r.powf(-exponent).min(*cap) } else { *cap })
            }
            FreeFunction::Homogeneous { .. } => None,
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self, FreeFunction::Homogeneous { .. })
    }

    /// `|{x : |g(x)| > λ}|` for the radial variants.
    pub fn distribution(&self, lambda: f64, n: Dimension) -> Option<f64> {
        if !(lambda > 0.0) {
            return None;
        }
        let omega = unit_ball_volume(n);
        let nf = n.as_f64();
        let ball = |r: f64| omega * r.max(0.0).powf(nf);
        match self {
            FreeFunction::Heat => Some(if lambda >= 1.0 { 0.0 } else { ball((-lambda.ln() / std::f64::consts::PI).sqrt()) }),
            FreeFunction::Bump { radius } => {
                let l = -lambda.ln();
                Some(if l <= 1.0 { 0.0 } else { ball(radius * (1.0 - 1.0 / l).sqrt()) })
            }
            FreeFunction::Power { exponent } => Some(ball(lambda.powf(-1.0 / exponent))),
            FreeFunction::TruncatedPower { exponent, cap } => {
                Some(if lambda >= *cap { 0.0 } else { ball(lambda.powf(-1.0 / exponent)) })
            }
            FreeFunction::Homogeneous { .. } => None,
        }
    }

    /// `∫_a^b g(ρ) ρ^{n-1} dρ` for the radial variants.
    fn shell_integral(&self, a: f64, b: f64, n: Dimension) -> Result<f64> {
        let nf = n.as_f64();
        if b <= a {
            return Ok(0.0);
        }
        let power = |e: f64, a: f64, b: f64| -> Result<f64> {
            let p = nf - e;
            if a == 0.0 && p <= 0.0 {
                return Err(Error::Singularity("free kernel is not locally integrable at the origin".into()));
            }
            Ok(if p == 0.0 { (b / a).ln() } else { (b.powf(p) - a.powf(p)) / p })
        };
        match self {
            FreeFunction::Power { exponent } => power(*exponent, a, b),
            FreeFunction::TruncatedPower { exponent, cap } => {
                let rc = cap.powf(-1.0 / exponent);
                let mut acc = 0.0;
                if a < rc {
                    let hi = b.min(rc);
                    acc += cap * (hi.powf(nf) - a.powf(nf)) / nf;
                }
                if b > rc {
                    acc += power(*exponent, a.max(rc), b)?;
                }
                Ok(acc)
            }
            FreeFunction::Heat => Ok(gl_composite(a, b.min(7.0), 0.125, |r| self.radial_value(r).unwrap_or(0.0) * r.powf(nf - 1.0))),
            FreeFunction::Bump { radius } => Ok(gl_composite(a, b.min(*radius), radius / 16.0, |r| {
                self.radial_value(r).unwrap_or(0.0) * r.powf(nf - 1.0)
            })),
            FreeFunction::Homogeneous { .. } => Err(Error::Unsupported("shell integral of a homogeneous kernel".into())),
        }
    }
}

/// Operator family together with its kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// `sup_r (φ_r^α * μ)(x)`.
    RadialMaximal { profile: RadialProfile, alpha: FracOrder },
    /// `sup_r r^{-(n-α)} ∫_{B(x,r)} |Ω(x-y)| dμ(y)`.
    HomogMaximal { kernel: HomogeneousKernel, alpha: FracOrder },
    /// `∫ Ω(x-y) / |x-y|^{n-α} dμ(y)`, principal value when `α = 0`.
    FracIntegral { kernel: HomogeneousKernel, alpha: FracOrder },
    /// `sup_ε |∫_{|x-y|>ε} Ω(x-y) / |x-y|^n dμ(y)|`.
    TruncatedMaximal { kernel: HomogeneousKernel },
    /// `∫ g(x-y) dμ(y)`.
    Convolution { g: FreeFunction },
}

impl OperatorSpec {
    /// Dimension fixed by the kernel; `None` for radial free kernels.
    pub fn dim(&self) -> Option<Dimension> {
        match self {
            OperatorSpec::RadialMaximal { profile, .. } => Some(profile.dim()),
            OperatorSpec::HomogMaximal { kernel, .. }
            | OperatorSpec::FracIntegral { kernel, .. }
            | OperatorSpec::TruncatedMaximal { kernel } => Some(kernel.dim()),
            OperatorSpec::Convolution { g: FreeFunction::Homogeneous { kernel, .. } } => Some(kernel.dim()),
            OperatorSpec::Convolution { .. } => None,
        }
    }

    pub fn alpha(&self) -> FracOrder {
        match self {
            OperatorSpec::RadialMaximal { alpha, .. }
            | OperatorSpec::HomogMaximal { alpha, .. }
            | OperatorSpec::FracIntegral { alpha, .. } => *alpha,
            OperatorSpec::TruncatedMaximal { .. } => FracOrder::zero(),
            OperatorSpec::Convolution { g: FreeFunction::Homogeneous { alpha, .. } } => *alpha,
            OperatorSpec::Convolution { .. } => FracOrder::zero(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            OperatorSpec::RadialMaximal { .. } => "radial_maximal",
            OperatorSpec::HomogMaximal { .. } => "homog_maximal",
            OperatorSpec::FracIntegral { .. } => "frac_integral",
            OperatorSpec::TruncatedMaximal { .. } => "truncated_maximal",
            OperatorSpec::Convolution { .. } => "convolution",
        }
    }

    /// Checks that the kernel and the order fit dimension `n`.
    pub fn validate(&self, n: Dimension) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != n {
                return Err(Error::DimensionMismatch { expected: n.get(), got: d.get() });
            }
        }
        FracOrder::new(self.alpha().get(), n)?;
        if let OperatorSpec::Convolution { g } = self {
            g.validate(n)?;
        }
        Ok(())
    }

    pub fn eval(&self, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
        match self {
            OperatorSpec::RadialMaximal { profile, alpha } => maximal_radial(profile, *alpha, mu, x, opts),
            OperatorSpec::HomogMaximal { kernel, alpha } => maximal_homog(kernel, *alpha, mu, x, opts),
            OperatorSpec::FracIntegral { kernel, alpha } => frac_integral(kernel, *alpha, mu, x, opts),
            OperatorSpec::TruncatedMaximal { kernel } => truncated_maximal(kernel, mu, x, opts),
            OperatorSpec::Convolution { g } => convolve(g, mu, x, opts),
        }
    }
}

/// Resolution settings for density measures. Atomic evaluations ignore
/// everything here except `radius_grid` and `radius_tol` for smooth
/// profiles.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Approximate number of ray directions around the evaluation point.
    pub near_directions: usize,
    /// Approximate number of directions for source-centered quadrature.
    pub far_directions: usize,
    /// Log-grid points per interval when maximizing over a radius.
    pub radius_grid: usize,
    /// Golden-section tolerance in `ln r`.
    pub radius_tol: f64,
    /// Relative tolerance between successive principal-value extrapolants.
    pub pv_tol: f64,
    pub pv_max_halvings: usize,
    cache: Arc<RuleCache>,
}

#[derive(Debug, Default)]
struct RuleCache {
    near: OnceLock<(usize, usize, Arc<SphereRule>)>,
    far: OnceLock<(usize, usize, Arc<SphereRule>)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            near_directions: 1024,
            far_directions: 64,
            radius_grid: 16,
            radius_tol: 1e-10,
            pv_tol: 1e-6,
            pv_max_halvings: 48,
            cache: Arc::default(),
        }
    }
}

impl EvalOptions {
    pub fn near_rule(&self, n: Dimension) -> Result<Arc<SphereRule>> {
        cached_rule(&self.cache.near, n, self.near_directions)
    }

    pub fn far_rule(&self, n: Dimension) -> Result<Arc<SphereRule>> {
        cached_rule(&self.cache.far, n, self.far_directions)
    }
}

fn cached_rule(cell: &OnceLock<(usize, usize, Arc<SphereRule>)>, n: Dimension, count: usize) -> Result<Arc<SphereRule>> {
    if let Some((dim, c, rule)) = cell.get() {
        if *dim == n.get() && *c == count {
            return Ok(rule.clone());
        }
    }
    let order = match n.get() {
        1 => 1,
        3 => ((count as f64 / 2.0).sqrt().ceil() as usize).max(1),
        _ => count.max(1),
    };
    let rule = Arc::new(sphere_quadrature(n, order)?);
    let _ = cell.set((n.get(), count, rule.clone()));
    Ok(rule)
}

fn gl16() -> &'static GaussLegendre {
    static GL: OnceLock<GaussLegendre> = OnceLock::new();
    GL.get_or_init(|| GaussLegendre::new(16))
}

fn gl_composite(a: f64, b: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = ((b - a) / h).ceil().max(1.0) as usize;
    let step = (b - a) / m as f64;
    (0..m)
        .map(|k| gl16().integrate(a + k as f64 * step, a + (k + 1) as f64 * step, &mut f))
        .sum()
}

/// Sorted distances from `x` with tied atoms merged: `(d, Σ value)`.
fn merged_distances(points: &[Vec<f64>], values: impl Iterator<Item = f64>, x: &[f64]) -> Vec<(f64, f64)> {
    let mut d: Vec<(f64, f64)> = points.iter().zip(values).map(|(p, v)| (crate::dist(p, x), v)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(d.len());
    for (r, v) in d {
        match out.last_mut() {
            Some(last) if last.0 == r => last.1 += v,
            _ => out.push((r, v)),
        }
    }
    out
}

fn check_not_atom(points: &[Vec<f64>], x: &[f64]) -> Result<()> {
    if points.iter().any(|p| p.as_slice() == x) {
        return Err(Error::Singularity("evaluation point coincides with an atom".into()));
    }
    Ok(())
}

fn check_dims(n: Dimension, mu: &Measure, x: &[f64]) -> Result<()> {
    if mu.dim() != n {
        return Err(Error::DimensionMismatch { expected: n.get(), got: mu.dim().get() });
    }
    n.check(x)
}

/// `max_k P_k / d_k^β` over merged prefix sums.
fn prefix_sup(merged: &[(f64, f64)], beta: f64) -> f64 {
    let mut acc = 0.0;
    let mut best: f64 = 0.0;
    for (d, v) in merged {
        acc += v;
        best = best.max(acc / d.powf(beta));
    }
    best
}

pub fn maximal_radial(profile: &RadialProfile, alpha: FracOrder, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
    let n = profile.dim();
    check_dims(n, mu, x)?;
    if mu.is_empty() {
        return Ok(0.0);
    }
    let beta = alpha.exponent(n);
    match mu.kind() {
        MeasureKind::Atomic { points, weights } => {
            check_not_atom(points, x)?;
            let merged = merged_distances(points, weights.iter().copied(), x);
            match profile.shape() {
                ProfileShape::Indicator => Ok(prefix_sup(&merged, beta)),
                ProfileShape::Table { radii, .. } => {
                    let h = |r: f64| r.powf(-beta) * merged.iter().map(|(d, w)| w * profile.value(d / r)).sum::<f64>();
                    let mut best: f64 = 0.0;
                    for (d, _) in &merged {
                        for rk in radii {
                            // nudged up so that d / r does not round past the step
                            let r = d / rk * (1.0 + 4.0 * f64::EPSILON);
                            best = best.max(h(r));
                        }
                    }
                    Ok(best)
                }
                _ => {
                    let s_star = profile.sup_scale(alpha).1;
                    let h = |r: f64| r.powf(-beta) * merged.iter().map(|(d, w)| w * profile.value(d / r)).sum::<f64>();
                    let cands: Vec<f64> = merged.iter().map(|(d, _)| d / s_star).collect();
                    let lo = cands[0];
                    let hi = cands[cands.len() - 1];
                    Ok(sup_over_radius(h, &cands, lo, hi, opts.radius_grid, opts.radius_tol).1.max(0.0))
                }
            }
        }
        _ => {
            let breaks = mu.breakpoints_about(x);
            let far = mu.max_distance_from(x);
            let ball = |r: f64| mu.ball_mass(x, r).unwrap_or(0.0);
            let lo_of = |c: &[f64]| c.iter().copied().filter(|v| *v > 0.0).fold(far, f64::min) * 1e-3;
            match profile.steps() {
                Some(steps) => {
                    let mass = |r: f64| steps.iter().map(|(rk, drop)| drop * ball(r * rk)).sum::<f64>();
                    let h = |r: f64| r.powf(-beta) * mass(r);
                    let mut cands = Vec::new();
                    for b in &breaks {
                        for (rk, _) in &steps {
                            cands.push(b / rk);
                        }
                    }
                    if n.get() == 1 {
                        return Ok(piecewise_linear_sup(cands, mass, beta));
                    }
                    let hi = steps.iter().map(|(rk, _)| far / rk).fold(0.0, f64::max);
                    let lo = lo_of(&cands).min(hi * 1e-6);
                    Ok(sup_over_radius(h, &cands, lo, hi, opts.radius_grid, opts.radius_tol).1.max(0.0))
                }
                None => {
                    let mass = mu.total_mass();
                    let h = |r: f64| {
                        let s_full = far / r;
                        let mut knots: Vec<f64> = breaks.iter().map(|b| b / r).filter(|s| *s < s_full).collect();
                        knots.insert(0, 0.0);
                        knots.push(s_full);
                        let mut acc = mass * profile.value(s_full);
                        for w in knots.windows(2) {
                            acc += gl_composite(w[0], w[1], ((w[1] - w[0]) / 4.0).max(1e-300), |s| {
                                ball(r * s) * profile.neg_derivative(s).unwrap_or(0.0)
                            });
                        }
                        acc * r.powf(-beta)
                    };
                    let s_star = profile.sup_scale(alpha).1;
                    let cands: Vec<f64> = breaks.iter().map(|b| b / s_star).collect();
                    let hi = far / s_star * 10.0;
                    let lo = lo_of(&cands).min(hi * 1e-6);
                    Ok(sup_over_radius(h, &cands, lo, hi, opts.radius_grid, opts.radius_tol).1.max(0.0))
                }
            }
        }
    }
}

/// `sup_r m(r) / r^β` for `m` linear between the sorted knots and constant
/// past the last one, with `m(0) = 0` and `0 < β <= 1`. On a piece
/// `m = c0 + c1 r` the only interior critical point is
/// `r = β c0 / ((1 - β) c1)`.
fn piecewise_linear_sup(mut knots: Vec<f64>, m: impl Fn(f64) -> f64, beta: f64) -> f64 {
    knots.retain(|k| *k > 0.0 && k.is_finite());
    knots.sort_by(|a, b| a.total_cmp(b));
    knots.dedup();
    let h = |r: f64, v: f64| v * r.powf(-beta);
    let mut best: f64 = 0.0;
    let (mut a, mut ma) = (0.0, 0.0);
    for &b in &knots {
        let mb = m(b);
        best = best.max(h(b, mb));
        if beta < 1.0 {
            let c1 = (mb - ma) / (b - a);
            let c0 = ma - c1 * a;
            if c1 > 0.0 && c0 > 0.0 {
                let r = beta * c0 / ((1.0 - beta) * c1);
                if r > a && r < b {
                    best = best.max(h(r, c0 + c1 * r));
                }
            }
        }
        (a, ma) = (b, mb);
    }
    best
}

/// A constant-density piece `[a, b]` of a ray, with its angular weight
/// already multiplied in.
#[derive(Debug, Clone, Copy)]
struct Seg {
    a: f64,
    b: f64,
    c: f64,
}

/// Constant-density pieces of the ray `ρ ↦ x + ρθ`: `(a, b, density)`.
fn ray_segments(mu: &Measure, x: &[f64], theta: &[f64], out: &mut Vec<(f64, f64, f64)>) {
    out.clear();
    let mut cuts = vec![0.0];
    match mu.kind() {
        MeasureKind::Atomic { .. } => return,
        MeasureKind::RadialDensity { radii, .. } => {
            let b: f64 = x.iter().zip(theta).map(|(u, v)| u * v).sum();
            let x2: f64 = x.iter().map(|v| v * v).sum();
            for r in radii {
                let disc = b * b - (x2 - r * r);
                if disc > 0.0 {
                    let s = disc.sqrt();
                    for rho in [-b - s, -b + s] {
                        if rho > 0.0 {
                            cuts.push(rho);
                        }
                    }
                }
            }
        }
        MeasureKind::BoxDensity { lower, upper, cells, .. } => {
            for i in 0..x.len() {
                if theta[i] == 0.0 {
                    continue;
                }
                let h = (upper[i] - lower[i]) / cells[i] as f64;
                for k in 0..=cells[i] {
                    let rho = (lower[i] + k as f64 * h - x[i]) / theta[i];
                    if rho > 0.0 {
                        cuts.push(rho);
                    }
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut mid = vec![0.0; x.len()];
    for w in cuts.windows(2) {
        let m = 0.5 * (w[0] + w[1]);
        for i in 0..x.len() {
            mid[i] = x[i] + m * theta[i];
        }
        let f = mu.density_at(&mid).unwrap_or(0.0);
        if f > 0.0 {
            out.push((w[0], w[1], f));
        }
    }
}

/// Traces every ray of `rule` from `x`, scaling densities by
/// `weight · angular(θ)`.
fn trace(mu: &Measure, x: &[f64], rule: &SphereRule, angular: impl Fn(&[f64]) -> f64) -> Vec<Seg> {
    let mut segs = Vec::new();
    let mut buf = Vec::new();
    for (theta, w) in rule.iter() {
        let c = w * angular(theta);
        if c == 0.0 {
            continue;
        }
        ray_segments(mu, x, theta, &mut buf);
        segs.extend(buf.iter().map(|&(a, b, f)| Seg { a, b, c: c * f }));
    }
    segs
}

/// Whether [`cone_trace`] applies: a radial density in two or three
/// dimensions whose support does not contain `x`.
fn use_cone(mu: &Measure, x: &[f64]) -> bool {
    matches!(mu.kind(), MeasureKind::RadialDensity { .. })
        && (x.len() == 2 || x.len() == 3)
        && crate::norm(x) > mu.support_radius()
}

/// Like [`trace`], with directions confined to the cone from `x` that meets
/// a radial density. The polar angle from `-x` is split at every shell's
/// tangent angle; on each panel `δ = hi - (hi - lo) s²` removes the square
/// root in the chord length. Segments depend on the polar angle only, so
/// the angular factor is summed over azimuths.
fn cone_trace(mu: &Measure, x: &[f64], count: usize, angular: impl Fn(&[f64]) -> f64) -> Vec<Seg> {
    let MeasureKind::RadialDensity { radii, .. } = mu.kind() else {
        return Vec::new();
    };
    let n = x.len();
    let d = crate::norm(x);
    let e: Vec<f64> = x.iter().map(|v| -v / d).collect();
    // orthonormal complement of e
    let (u, v) = if n == 2 {
        (vec![-e[1], e[0]], Vec::new())
    } else {
        let k = (0..3).min_by(|&i, &j| e[i].abs().total_cmp(&e[j].abs())).unwrap_or(0);
        let mut a = vec![0.0; 3];
        a[k] = 1.0;
        let dot: f64 = a.iter().zip(&e).map(|(p, q)| p * q).sum();
        let mut u: Vec<f64> = a.iter().zip(&e).map(|(p, q)| p - dot * q).collect();
        let un = crate::norm(&u);
        u.iter_mut().for_each(|c| *c /= un);
        let v = vec![e[1] * u[2] - e[2] * u[1], e[2] * u[0] - e[0] * u[2], e[0] * u[1] - e[1] * u[0]];
        (u, v)
    };
    let mut breaks: Vec<f64> = radii.iter().map(|r| (r / d).min(1.0).asin()).collect();
    breaks.insert(0, 0.0);
    breaks.dedup_by(|a, b| *a <= *b);
    let panels = breaks.len() - 1;
    let (per_panel, azimuths) = if n == 2 {
        ((count / (2 * panels)).max(16), 2)
    } else {
        let az = ((count as f64).sqrt().ceil() as usize).max(8);
        ((count / (az * panels)).max(16), az)
    };
    let gl = GaussLegendre::new(per_panel);
    let mut segs = Vec::new();
    let mut buf = Vec::new();
    let mut theta = vec![0.0; n];
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for (sn, sw) in gl.nodes.iter().zip(&gl.weights) {
            let s = 0.5 * (sn + 1.0);
            let delta = hi - (hi - lo) * s * s;
            let jac = 0.5 * sw * 2.0 * (hi - lo) * s;
            let (c, sd) = (delta.cos(), delta.sin());
            let mut ang = 0.0;
            if n == 2 {
                for sign in [1.0, -1.0] {
                    for i in 0..2 {
                        theta[i] = c * e[i] + sign * sd * u[i];
                    }
                    ang += angular(&theta);
                }
                ang *= jac;
            } else {
                for k in 0..azimuths {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / azimuths as f64;
                    let (cp, sp) = (phi.cos(), phi.sin());
                    for i in 0..3 {
                        theta[i] = c * e[i] + sd * (cp * u[i] + sp * v[i]);
                    }
                    ang += angular(&theta);
                }
                ang *= jac * sd * 2.0 * std::f64::consts::PI / azimuths as f64;
            }
            if ang == 0.0 {
                continue;
            }
            for i in 0..n {
                theta[i] = c * e[i] + sd * u[i];
            }
            ray_segments(mu, x, &theta, &mut buf);
            segs.extend(buf.iter().map(|&(a, b, f)| Seg { a, b, c: ang * f }));
        }
    }
    segs
}

/// `Ω(-θ)`, the kernel seen from `x` along `θ` (`x - y = -ρθ`).
fn kernel_back(kernel: &HomogeneousKernel) -> impl Fn(&[f64]) -> f64 + '_ {
    move |theta: &[f64]| {
        let u: Vec<f64> = theta.iter().map(|v| -v).collect();
        kernel.eval_unit(&u)
    }
}

/// Kernel values on the reversed nodes, shifted to exact mean zero on the
/// rule. Rejects kernels whose defect exceeds `1e-8`.
fn projected_kernel(kernel: &HomogeneousKernel, rule: &SphereRule) -> Result<Vec<f64>> {
    let defect = mean_zero_defect(kernel, rule)?;
    if defect >= 1e-8 {
        return Err(Error::NotMeanZero { defect });
    }
    let back = kernel_back(kernel);
    let vals: Vec<f64> = rule.nodes().iter().map(|t| back(t)).collect();
    let total: f64 = rule.weights().iter().sum();
    let mean = rule.weights().iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>() / total;
    Ok(vals.into_iter().map(|v| v - mean).collect())
}

/// Radial density far enough away that source-centered quadrature is
/// smooth: `|x| > 2 R`.
fn use_far_field(mu: &Measure, x: &[f64]) -> bool {
    matches!(mu.kind(), MeasureKind::RadialDensity { .. })
        && x.len() >= 2
        && crate::norm(x) > 2.0 * mu.support_radius()
}

/// `∫ K(x - y) dμ(y)` by Gauss-Legendre in `|y|` times a sphere rule.
fn far_field(mu: &Measure, x: &[f64], rule: &SphereRule, k: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let MeasureKind::RadialDensity { radii, values } = mu.kind() else {
        return Err(Error::Unsupported("far-field quadrature needs a radial density".into()));
    };
    let n = x.len() as i32;
    let scale = radii[radii.len() - 1];
    let mut z = vec![0.0; x.len()];
    let mut acc = 0.0;
    let mut err = None;
    let mut prev = 0.0;
    for (r, f) in radii.iter().zip(values) {
        if *f > 0.0 {
            acc += f * gl_composite(prev, *r, scale / 4.0, |s| {
                let mut inner = 0.0;
                for (phi, w) in rule.iter() {
                    for i in 0..z.len() {
                        z[i] = x[i] - s * phi[i];
                    }
                    match k(&z) {
                        Ok(v) => inner += w * v,
                        Err(e) => err = Some(e),
                    }
                }
                inner * s.powi(n - 1)
            });
        }
        prev = *r;
    }
    match err {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

pub fn maximal_homog(kernel: &HomogeneousKernel, alpha: FracOrder, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
    let n = kernel.dim();
    check_dims(n, mu, x)?;
    if mu.is_empty() {
        return Ok(0.0);
    }
    let beta = alpha.exponent(n);
    match mu.kind() {
        MeasureKind::Atomic { points, weights } => {
            check_not_atom(points, x)?;
            let vals = points.iter().zip(weights).map(|(p, w)| {
                let z: Vec<f64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
                kernel.eval(&z).map(|o| o.abs() * w).unwrap_or(0.0)
            });
            let merged = merged_distances(points, vals.collect::<Vec<_>>().into_iter(), x);
            Ok(prefix_sup(&merged, beta))
        }
        _ => {
            let back = kernel_back(kernel);
            let segs = if use_cone(mu, x) {
                cone_trace(mu, x, opts.near_directions, |t| back(t).abs())
            } else {
                trace(mu, x, &*opts.near_rule(n)?, |t| back(t).abs())
            };
            Ok(ball_integral_sup(&segs, n.as_f64(), alpha.get()))
        }
    }
}

/// `sup_r r^{-(n-α)} Σ c (clamp(r, a, b)^n - a^n) / n`.
///
/// Between consecutive endpoints the sum is `c0 + c1 r^n`, so the supremum
/// is attained at an endpoint or at the single interior critical point.
fn ball_integral_sup(segs: &[Seg], n: f64, alpha: f64) -> f64 {
    let beta = n - alpha;
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * segs.len());
    for s in segs {
        let q = s.c / n;
        events.push((s.a, q, -q * s.a.powf(n)));
        events.push((s.b, -q, q * s.b.powf(n)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut c0, mut c1) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    let h = |r: f64, c0: f64, c1: f64| c0 * r.powf(-beta) + c1 * r.powf(alpha);
    let mut i = 0;
    while i < events.len() {
        let r = events[i].0;
        while i < events.len() && events[i].0 == r {
            c1 += events[i].1;
            c0 += events[i].2;
            i += 1;
        }
        if r > 0.0 {
            best = best.max(h(r, c0, c1));
        } else if alpha == 0.0 {
            // limit r -> 0+ of c1 + c0 / r^n with c0 = 0 here
            best = best.max(c1);
        }
        let next = events.get(i).map(|e| e.0).unwrap_or(f64::INFINITY);
        if alpha > 0.0 && c1 > 0.0 {
            let rn = beta * c0 / (alpha * c1);
            if rn > 0.0 {
                let rs = rn.powf(1.0 / n);
                if rs > r && rs < next {
                    best = best.max(h(rs, c0, c1));
                }
            }
        }
    }
    best
}

pub fn frac_integral(kernel: &HomogeneousKernel, alpha: FracOrder, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
    let n = kernel.dim();
    check_dims(n, mu, x)?;
    if mu.is_empty() {
        return Ok(0.0);
    }
    let beta = alpha.exponent(n);
    match mu.kind() {
        MeasureKind::Atomic { points, weights } => {
            check_not_atom(points, x)?;
            let mut acc = 0.0;
            let mut z = vec![0.0; x.len()];
            for (p, w) in points.iter().zip(weights) {
                for i in 0..z.len() {
                    z[i] = x[i] - p[i];
                }
                acc += kernel.eval(&z)? * crate::norm(&z).powf(-beta) * w;
            }
            Ok(acc)
        }
        _ if use_far_field(mu, x) => {
            let rule = opts.far_rule(n)?;
            far_field(mu, x, &rule, |z| Ok(kernel.eval(z)? * crate::norm(z).powf(-beta)))
        }
        _ => {
            let rule = opts.near_rule(n)?;
            let a = alpha.get();
            if a > 0.0 {
                let back = kernel_back(kernel);
                let segs = trace(mu, x, &rule, back);
                return Ok(segs.iter().map(|s| s.c * (s.b.powf(a) - s.a.powf(a)) / a).sum());
            }
            let proj = projected_kernel(kernel, &rule)?;
            let segs = trace_weighted(mu, x, &rule, &proj);
            principal_value(&segs, opts)
        }
    }
}

/// Like [`trace`] with angular values given per rule node.
fn trace_weighted(mu: &Measure, x: &[f64], rule: &SphereRule, values: &[f64]) -> Vec<Seg> {
    let mut segs = Vec::new();
    let mut buf = Vec::new();
    for ((theta, w), v) in rule.iter().zip(values) {
        let c = w * v;
        if c == 0.0 {
            continue;
        }
        ray_segments(mu, x, theta, &mut buf);
        segs.extend(buf.iter().map(|&(a, b, f)| Seg { a, b, c: c * f }));
    }
    segs
}

/// `∫_{|x-y|>ε} Ω(x-y) / |x-y|^n dμ(y)` on traced segments.
fn truncated_at(segs: &[Seg], eps: f64) -> f64 {
    segs.iter()
        .filter(|s| s.b > eps)
        .map(|s| s.c * (s.b / s.a.max(eps)).ln())
        .sum()
}

/// Limit of [`truncated_at`] as `ε = 2^{-k} ε_0 -> 0` with two-term
/// Richardson extrapolation.
fn principal_value(segs: &[Seg], opts: &EvalOptions) -> Result<f64> {
    if segs.is_empty() {
        return Ok(0.0);
    }
    let smallest = segs
        .iter()
        .flat_map(|s| [s.a, s.b])
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let eps0 = 0.5 * smallest;
    let scale: f64 = segs.iter().map(|s| (s.c * (s.b / s.a.max(eps0)).ln()).abs()).sum();
    let mut prev_i = truncated_at(segs, eps0);
    let mut prev_e: Option<f64> = None;
    let mut eps = eps0;
    for k in 1..=opts.pv_max_halvings {
        eps *= 0.5;
        let cur = truncated_at(segs, eps);
        let extrap = 2.0 * cur - prev_i;
        if let Some(pe) = prev_e {
            if (extrap - pe).abs() <= opts.pv_tol * extrap.abs() + 1e-14 * scale {
                return Ok(extrap);
            }
        }
        if k == opts.pv_max_halvings {
            break;
        }
        prev_e = Some(extrap);
        prev_i = cur;
    }
    Err(Error::NoConvergence { iterations: opts.pv_max_halvings })
}

pub fn truncated_maximal(kernel: &HomogeneousKernel, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
    let n = kernel.dim();
    check_dims(n, mu, x)?;
    if mu.is_empty() {
        return Ok(0.0);
    }
    let beta = n.as_f64();
    match mu.kind() {
        MeasureKind::Atomic { points, weights } => {
            check_not_atom(points, x)?;
            let mut terms = Vec::with_capacity(points.len());
            let mut z = vec![0.0; x.len()];
            for (p, w) in points.iter().zip(weights) {
                for i in 0..z.len() {
                    z[i] = x[i] - p[i];
                }
                terms.push(kernel.eval(&z)? * crate::norm(&z).powf(-beta) * w);
            }
            let merged = merged_distances(points, terms.into_iter(), x);
            // ε just below each distance keeps every atom at or beyond it
            let mut acc = 0.0;
            let mut best: f64 = 0.0;
            for (_, v) in merged.iter().rev() {
                acc += v;
                best = best.max(acc.abs());
            }
            Ok(best)
        }
        _ if use_cone(mu, x) => {
            // outside the support nothing is singular, so no projection
            let rule = opts.near_rule(n)?;
            mean_zero_defect(kernel, &rule).and_then(|defect| match defect < 1e-8 {
                true => Ok(()),
                false => Err(Error::NotMeanZero { defect }),
            })?;
            truncation_sup(&cone_trace(mu, x, opts.near_directions, kernel_back(kernel)))
        }
        _ => {
            let rule = opts.near_rule(n)?;
            let proj = projected_kernel(kernel, &rule)?;
            let segs = trace_weighted(mu, x, &rule, &proj);
            truncation_sup(&segs)
        }
    }
}

/// `sup_ε |truncated_at(ε)|`. In `L = ln ε` the truncated integral is
/// piecewise linear with kinks at segment endpoints, so the supremum sits
/// at an endpoint or in the `ε -> 0` limit.
fn truncation_sup(segs: &[Seg]) -> Result<f64> {
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * segs.len());
    let mut mag = 0.0;
    for s in segs {
        mag += s.c.abs();
        events.push((s.b, s.c * s.b.ln(), -s.c));
        if s.a > 0.0 {
            events.push((s.a, -s.c * s.a.ln(), s.c));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut a, mut b) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    for (r, da, db) in events {
        a += da;
        b += db;
        best = best.max((a + b * r.ln()).abs());
    }
    if b.abs() > 1e-10 * mag {
        return Err(Error::Singularity("truncated integral diverges as the truncation shrinks".into()));
    }
    Ok(best.max(a.abs()))
}

pub fn convolve(g: &FreeFunction, mu: &Measure, x: &[f64], opts: &EvalOptions) -> Result<f64> {
    let n = mu.dim();
    n.check(x)?;
    g.validate(n)?;
    if let FreeFunction::Homogeneous { kernel, alpha } = g {
        return frac_integral(kernel, *alpha, mu, x, opts);
    }
    if mu.is_empty() {
        return Ok(0.0);
    }
    match mu.kind() {
        MeasureKind::Atomic { points, weights } => {
            let mut acc = 0.0;
            let mut z = vec![0.0; x.len()];
            for (p, w) in points.iter().zip(weights) {
                for i in 0..z.len() {
                    z[i] = x[i] - p[i];
                }
                acc += g.eval(&z)? * w;
            }
            Ok(acc)
        }
        _ if use_far_field(mu, x) => {
            let rule = opts.far_rule(n)?;
            far_field(mu, x, &rule, |z| g.eval(z))
        }
        _ => {
            let rule = opts.near_rule(n)?;
            let segs = trace(mu, x, &rule, |_| 1.0);
            let mut acc = 0.0;
            for s in &segs {
                acc += s.c * g.shell_integral(s.a, s.b, n)?;
            }
            Ok(acc)
        }
    }
}
