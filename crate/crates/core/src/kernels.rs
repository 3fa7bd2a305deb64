//! Radial profiles `φ` and degree-zero kernels `Ω`.
//!
//! A [`RadialProfile`] is a nonincreasing `Φ: [0, ∞) -> [0, ∞)` with
//! `φ(x) = Φ(|x|)`; its dilations are `φ_r^α(x) = r^{-(n-α)} Φ(|x| / r)`.
//! A [`HomogeneousKernel`] is a function on `S^{n-1}` extended to
//! `ℝⁿ \ {0}` by `Ω(x) = Ω(x / |x|)`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Dimension, SphereRule};
use crate::rng;

/// Fractional order `α ∈ [0, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64, n: Dimension) -> Result<Self> {
        if !(alpha >= 0.0 && alpha < n.as_f64()) {
            return invalid(format!("fractional order {alpha} outside [0, {})", n.get()));
        }
        Ok(Self(alpha))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// The homogeneity exponent `n - α`.
    pub fn exponent(self, n: Dimension) -> f64 {
        n.as_f64() - self.0
    }

    /// The weak-type exponent `n / (n - α)`.
    pub fn weak_exponent(self, n: Dimension) -> f64 {
        n.as_f64() / self.exponent(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    /// `χ_{B(0,1)}`, closed ball.
    Indicator,
    /// `c_n (1 + s²)^{-(n+1)/2}` normalized to unit mass.
    Poisson,
    /// `e^{-π s²}`.
    Heat,
    /// Step function: `values[k]` on `(radii[k-1], radii[k]]`, zero past
    /// the last radius.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    dim: Dimension,
    shape: ProfileShape,
}

/// `c_n = Γ((n+1)/2) / π^{(n+1)/2}`, the Poisson normalization.
pub fn poisson_normalization(n: Dimension) -> f64 {
    let h = (n.as_f64() + 1.0) / 2.0;
    gamma(h) / PI.powf(h)
}

/// `sup_{r>0} P_r(e_1) = c_n n^{n/2} / (1+n)^{(n+1)/2}`.
pub fn poisson_sup_constant(n: Dimension) -> f64 {
    let nf = n.as_f64();
    poisson_normalization(n) * nf.powf(nf / 2.0) / (1.0 + nf).powf((nf + 1.0) / 2.0)
}

/// Radius attaining [`poisson_sup_constant`]: `1 / √n`.
pub fn poisson_critical_radius(n: Dimension) -> f64 {
    1.0 / n.as_f64().sqrt()
}

/// `sup_{r>0} G_r(e_1) = (n / (2πe))^{n/2}`.
pub fn heat_sup_constant(n: Dimension) -> f64 {
    let nf = n.as_f64();
    (nf / (2.0 * PI * E)).powf(nf / 2.0)
}

/// Radius attaining [`heat_sup_constant`]: `√(2π / n)`.
pub fn heat_critical_radius(n: Dimension) -> f64 {
    (2.0 * PI / n.as_f64()).sqrt()
}

impl RadialProfile {
    pub fn new(dim: Dimension, shape: ProfileShape) -> Result<Self> {
        if let ProfileShape::Table { radii, values } = &shape {
            if radii.is_empty() || radii.len() != values.len() {
                return invalid("table profile needs matching, nonempty radii and values");
            }
            if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                return invalid("table radii must be positive and strictly increasing");
            }
            if values.iter().any(|v| !(*v >= 0.0)) || values.windows(2).any(|w| w[1] > w[0]) {
                return invalid("table values must be nonnegative and nonincreasing");
            }
        }
        Ok(Self { dim, shape })
    }

    pub fn indicator(dim: Dimension) -> Self {
        Self {
            dim,
            shape: ProfileShape::Indicator,
        }
    }

    pub fn poisson(dim: Dimension) -> Self {
        Self {
            dim,
            shape: ProfileShape::Poisson,
        }
    }

    pub fn heat(dim: Dimension) -> Self {
        Self {
            dim,
            shape: ProfileShape::Heat,
        }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn shape(&self) -> &ProfileShape {
        &self.shape
    }

    /// `Φ(s)` for `s >= 0`.
    pub fn value(&self, s: f64) -> f64 {
        let n = self.dim.as_f64();
        match &self.shape {
            ProfileShape::Indicator => {
                if s <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ProfileShape::Poisson => {
                poisson_normalization(self.dim) * (1.0 + s * s).powf(-(n + 1.0) / 2.0)
            }
            ProfileShape::Heat => (-PI * s * s).exp(),
            ProfileShape::Table { radii, values } => {
                let k = radii.partition_point(|&r| r < s);
                values.get(k).copied().unwrap_or(0.0)
            }
        }
    }

    /// `-Φ'(s)` for the smooth shapes; `None` for step profiles.
    pub(crate) fn neg_derivative(&self, s: f64) -> Option<f64> {
        let n = self.dim.as_f64();
        match &self.shape {
            ProfileShape::Poisson => Some(
                poisson_normalization(self.dim) * (n + 1.0) * s * (1.0 + s * s).powf(-(n + 3.0) / 2.0),
            ),
            ProfileShape::Heat => Some(2.0 * PI * s * (-PI * s * s).exp()),
            _ => None,
        }
    }

    /// Jumps of a step profile as `(radius, drop)` pairs, so that
    /// `Φ(s) = Σ drop · [s <= radius]`.
    pub(crate) fn steps(&self) -> Option<Vec<(f64, f64)>> {
        match &self.shape {
            ProfileShape::Indicator => Some(vec![(1.0, 1.0)]),
            ProfileShape::Table { radii, values } => {
                let mut out = Vec::with_capacity(radii.len());
                for k in 0..radii.len() {
                    let next = values.get(k + 1).copied().unwrap_or(0.0);
                    let drop = values[k] - next;
                    if drop > 0.0 {
                        out.push((radii[k], drop));
                    }
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// `φ_r^α(x) = r^{-(n-α)} Φ(|x| / r)`.
    pub fn eval_dilate(&self, alpha: FracOrder, r: f64, x: &[f64]) -> Result<f64> {
        self.dim.check(x)?;
        if !(r > 0.0) {
            return invalid(format!("dilation radius must be positive (got {r})"));
        }
        let beta = alpha.exponent(self.dim);
        Ok(r.powf(-beta) * self.value(crate::norm(x) / r))
    }

    /// `S = sup_{s>0} s^{n-α} Φ(s)` together with the maximizing `s`.
    ///
    /// Then `sup_{r>0} φ_r^α(x) = S / |x|^{n-α}`, attained at `r = |x| / s`.
    pub fn sup_scale(&self, alpha: FracOrder) -> (f64, f64) {
        let beta = alpha.exponent(self.dim);
        let n = self.dim.as_f64();
        match &self.shape {
            ProfileShape::Indicator => (1.0, 1.0),
            ProfileShape::Poisson => {
                let s = (beta / (n + 1.0 - beta)).sqrt();
                (s.powf(beta) * self.value(s), s)
            }
            ProfileShape::Heat => {
                let s = (beta / (2.0 * PI)).sqrt();
                ((beta / (2.0 * PI * E)).powf(beta / 2.0), s)
            }
            ProfileShape::Table { radii, values } => radii
                .iter()
                .zip(values)
                .map(|(r, v)| (r.powf(beta) * v, *r))
                .fold((0.0, radii[0]), |a, b| if b.0 > a.0 { b } else { a }),
        }
    }

    /// `sup_{r>0} φ_r^α(x) = |x|^{-(n-α)} sup_{r>0} φ_r^α(e_1)`.
    pub fn sup_dilate(&self, alpha: FracOrder, x: &[f64]) -> Result<f64> {
        self.dim.check(x)?;
        let d = crate::norm(x);
        if d == 0.0 {
            return Err(Error::Singularity("sup of dilations at the origin".into()));
        }
        Ok(self.sup_scale(alpha).0 * d.powf(-alpha.exponent(self.dim)))
    }
}

/// A spherical cap `{x' : x'·center >= cos(half_angle)}` carrying `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub center: Vec<f64>,
    pub half_angle: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelShape {
    Constant {
        value: f64,
    },
    /// `n = 2` only: `constant + Σ cos[k-1] cos(kθ) + sin[k-1] sin(kθ)`.
    AngularTrig {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// `Ω(x') = x'_axis`; in one dimension this is `sign`.
    Component {
        axis: usize,
    },
    /// Sum of cap indicators weighted by their values.
    SignedCaps {
        caps: Vec<Cap>,
    },
    /// Nearest-node lookup into values given on sphere nodes.
    Table {
        nodes: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousKernel {
    dim: Dimension,
    shape: KernelShape,
}

impl HomogeneousKernel {
    pub fn new(dim: Dimension, shape: KernelShape) -> Result<Self> {
        let n = dim.get();
        match &mut shape.clone() {
            KernelShape::AngularTrig { .. } if n != 2 => {
                return invalid("angular trigonometric kernels live on S^1 (n = 2)")
            }
            KernelShape::Component { axis } if *axis >= n => {
                return invalid(format!("component axis {axis} out of range for n = {n}"))
            }
            KernelShape::SignedCaps { caps } => {
                for c in caps.iter() {
                    dim.check(&c.center)?;
                    if crate::norm(&c.center) == 0.0 {
                        return invalid("cap center must be nonzero");
                    }
                }
            }
            KernelShape::Table { nodes, values } => {
                if nodes.is_empty() || nodes.len() != values.len() {
                    return invalid("kernel table needs matching, nonempty nodes and values");
                }
                for v in nodes.iter() {
                    dim.check(v)?;
                    if crate::norm(v) == 0.0 {
                        return invalid("kernel table node at the origin");
                    }
                }
            }
            _ => {}
        }
        let shape = match shape {
            KernelShape::SignedCaps { caps } => KernelShape::SignedCaps {
                caps: caps
                    .into_iter()
                    .map(|c| {
                        let r = crate::norm(&c.center);
                        Cap {
                            center: c.center.iter().map(|v| v / r).collect(),
                            ..c
                        }
                    })
                    .collect(),
            },
            KernelShape::Table { nodes, values } => KernelShape::Table {
                nodes: nodes
                    .into_iter()
                    .map(|v| {
                        let r = crate::norm(&v);
                        v.iter().map(|c| c / r).collect()
                    })
                    .collect(),
                values,
            },
            s => s,
        };
        Ok(Self { dim, shape })
    }

    pub fn constant(dim: Dimension, value: f64) -> Self {
        Self {
            dim,
            shape: KernelShape::Constant { value },
        }
    }

    /// `sign(x)` on the real line.
    pub fn sign() -> Self {
        Self {
            dim: Dimension::new(1).expect("1 >= 1"),
            shape: KernelShape::Component { axis: 0 },
        }
    }

    /// Tabulates `f` on the nodes of `rule`.
    pub fn tabulate(rule: &SphereRule, f: impl Fn(&[f64]) -> f64) -> Self {
        Self {
            dim: rule.dim(),
            shape: KernelShape::Table {
                nodes: rule.nodes().to_vec(),
                values: rule.nodes().iter().map(|x| f(x)).collect(),
            },
        }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    /// `Ω(x) = Ω(x / |x|)`; the origin is rejected.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.dim.check(x)?;
        let r = crate::norm(x);
        if r == 0.0 {
            return Err(Error::Singularity("degree-zero kernel at the origin".into()));
        }
        if r == 1.0 {
            return Ok(self.eval_unit(x));
        }
        let u: Vec<f64> = x.iter().map(|v| v / r).collect();
        Ok(self.eval_unit(&u))
    }

    /// Evaluation on a unit vector; no normalization is performed.
    pub fn eval_unit(&self, u: &[f64]) -> f64 {
        match &self.shape {
            KernelShape::Constant { value } => *value,
            KernelShape::AngularTrig { constant, cos, sin } => {
                let th = u[1].atan2(u[0]);
                let mut acc = *constant;
                for (k, c) in cos.iter().enumerate() {
                    acc += c * ((k + 1) as f64 * th).cos();
                }
                for (k, s) in sin.iter().enumerate() {
                    acc += s * ((k + 1) as f64 * th).sin();
                }
                acc
            }
            KernelShape::Component { axis } => u[*axis],
            KernelShape::SignedCaps { caps } => caps
                .iter()
                .filter(|c| dot(u, &c.center) >= c.half_angle.cos())
                .map(|c| c.value)
                .sum(),
            KernelShape::Table { nodes, values } => {
                let mut best = (f64::NEG_INFINITY, 0.0);
                for (v, val) in nodes.iter().zip(values) {
                    let d = dot(u, v);
                    if d > best.0 {
                        best = (d, *val);
                    }
                }
                best.1
            }
        }
    }

    /// Upper bound of `|Ω|` on the sphere, exact for every variant except
    /// trigonometric series where the coefficient sum is used.
    pub fn sup_abs(&self) -> f64 {
        match &self.shape {
            KernelShape::Constant { value } => value.abs(),
            KernelShape::AngularTrig { constant, cos, sin } => {
                constant.abs() + cos.iter().chain(sin).map(|c| c.abs()).sum::<f64>()
            }
            KernelShape::Component { .. } => 1.0,
            KernelShape::SignedCaps { caps } => caps.iter().map(|c| c.value.abs()).sum(),
            KernelShape::Table { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rule(kernel: &HomogeneousKernel, rule: &SphereRule) -> Result<()> {
    if kernel.dim() != rule.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim().get(),
            got: rule.dim().get(),
        });
    }
    Ok(())
}

/// `|∫_{S^{n-1}} Ω dσ|` under `rule`.
pub fn mean_zero_defect(kernel: &HomogeneousKernel, rule: &SphereRule) -> Result<f64> {
    check_rule(kernel, rule)?;
    Ok(rule.integrate(|u| kernel.eval_unit(u)).abs())
}

/// `(∫_{S^{n-1}} |Ω|^q dσ)^{1/q}` under `rule`.
pub fn sphere_norm(kernel: &HomogeneousKernel, q: f64, rule: &SphereRule) -> Result<f64> {
    check_rule(kernel, rule)?;
    if !(q >= 1.0) {
        return invalid(format!("sphere norm exponent must be >= 1 (got {q})"));
    }
    Ok(rule.integrate(|u| kernel.eval_unit(u).abs().powf(q)).powf(1.0 / q))
}

/// Smallest shift magnitude visited by the dyadic chain in
/// [`dini_modulus`].
pub const DINI_FLOOR: f64 = 1e-4;

const DINI_STREAM: u64 = 0xd1_1100;

/// `max_h ∫ |Ω((x'+h)/|x'+h|) - Ω(x')|^q dσ` over the first `budget`
/// shifts of magnitude at most `s`, without the `1/q` root.
///
/// The shift sequence starts with `±s e_i`, then alternates uniform draws
/// in the ball with perturbations of the worst shift found so far. It only
/// depends on `(n, budget)` and scales with `s`, so a larger budget visits
/// a superset of shifts.
fn dini_raw(kernel: &HomogeneousKernel, q: f64, s: f64, rule: &SphereRule, budget: usize) -> f64 {
    use rand::Rng;
    let n = kernel.dim().get();
    let base: Vec<f64> = rule.nodes().iter().map(|u| kernel.eval_unit(u)).collect();
    let diff = |h: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut y = vec![0.0; n];
        for ((u, w), b) in rule.iter().zip(&base) {
            let mut r2 = 0.0;
            for k in 0..n {
                y[k] = u[k] + h[k];
                r2 += y[k] * y[k];
            }
            if r2 < 1e-28 {
                continue;
            }
            let r = r2.sqrt();
            y.iter_mut().for_each(|v| *v /= r);
            acc += w * (kernel.eval_unit(&y) - b).abs().powf(q);
        }
        acc
    };
    let mut rng = rng::stream(DINI_STREAM, n as u64);
    let mut best = 0.0f64;
    let mut best_h = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut dir = vec![0.0; n];
    for k in 0..budget {
        let u: f64 = rng.random();
        rng::unit_direction(&mut rng, &mut dir);
        if k < 2 * n {
            h.iter_mut().for_each(|v| *v = 0.0);
            h[k / 2] = if k % 2 == 0 { s } else { -s };
        } else if (k - 2 * n) % 2 == 0 {
            let rad = s * u.powf(1.0 / n as f64);
            for i in 0..n {
                h[i] = rad * dir[i];
            }
        } else {
            for i in 0..n {
                h[i] = best_h[i] + 0.1 * s * u * dir[i];
            }
            let r = crate::norm(&h);
            if r > s {
                h.iter_mut().for_each(|v| *v *= s / r);
            }
        }
        let v = diff(&h);
        if v > best {
            best = v;
            best_h.copy_from_slice(&h);
        }
    }
    best
}

/// Lower-bound estimate of the integral continuity modulus
/// `ω_q(t) = (sup_{|h|<=t} ∫ |Ω(x'+h) - Ω(x')|^q dσ(x'))^{1/q}`.
///
/// The kernel is evaluated off the sphere through its degree-zero
/// extension. The estimate maximizes over shift sets at magnitudes
/// `t, t/2, t/4, ...` down to [`DINI_FLOOR`], so it is nondecreasing
/// both in `t` along dyadic ratios and in `shift_budget`.
pub fn dini_modulus(
    kernel: &HomogeneousKernel,
    q: f64,
    t: f64,
    rule: &SphereRule,
    shift_budget: usize,
) -> Result<f64> {
    check_rule(kernel, rule)?;
    if !(t > 0.0 && t <= 1.0) {
        return invalid(format!("Dini shift radius must lie in (0, 1] (got {t})"));
    }
    if !(q >= 1.0) {
        return invalid(format!("Dini exponent must be >= 1 (got {q})"));
    }
    let mut s = t;
    let mut best = dini_raw(kernel, q, s, rule, shift_budget);
    while s / 2.0 >= DINI_FLOOR {
        s /= 2.0;
        best = best.max(dini_raw(kernel, q, s, rule, shift_budget));
    }
    Ok(best.powf(1.0 / q))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiniIntegral {
    /// Estimate of `∫_0^{t_max} ω_q(t) t^{-1-s} dt` (including a geometric
    /// tail correction when the blocks decay).
    pub value: f64,
    /// `(t_k, ω_q(t_k))` on the dyadic grid `t_k = t_max 2^{-k}`.
    pub moduli: Vec<(f64, f64)>,
    /// Contribution of each dyadic block `[t_{k+1}, t_k]`.
    pub blocks: Vec<f64>,
    pub divergence_suspected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiniOptions {
    pub levels: usize,
    pub shift_budget: usize,
}

impl Default for DiniOptions {
    fn default() -> Self {
        Self {
            levels: 24,
            shift_budget: 64,
        }
    }
}

/// Dyadic estimate of the Dini integral `∫_0^{t_max} ω_q(t) / t^{1+s} dt`.
///
/// Divergence is flagged when none of the last five blocks shrinks by at
/// least 5% relative to its predecessor while still contributing.
pub fn dini_integral(
    kernel: &HomogeneousKernel,
    q: f64,
    s: f64,
    t_max: f64,
    rule: &SphereRule,
    opts: DiniOptions,
) -> Result<DiniIntegral> {
    check_rule(kernel, rule)?;
    let n = kernel.dim().as_f64();
    if !(0.0..n).contains(&s) {
        return invalid(format!("Dini smoothness index {s} outside [0, {n})"));
    }
    if !(t_max > 0.0 && t_max <= 1.0) {
        return invalid(format!("t_max must lie in (0, 1] (got {t_max})"));
    }
    if !(q >= 1.0) {
        return invalid(format!("Dini exponent must be >= 1 (got {q})"));
    }
    let levels = opts.levels.max(6);
    let ts: Vec<f64> = (0..=levels).map(|k| t_max * 0.5f64.powi(k as i32)).collect();
    let raw: Vec<f64> = ts
        .iter()
        .map(|&t| dini_raw(kernel, q, t, rule, opts.shift_budget))
        .collect();
    // running max from the small end keeps the profile monotone
    let mut omega = vec![0.0; ts.len()];
    let mut acc = 0.0f64;
    for k in (0..ts.len()).rev() {
        acc = acc.max(raw[k]);
        omega[k] = acc.powf(1.0 / q);
    }
    let ln2 = std::f64::consts::LN_2;
    let blocks: Vec<f64> = (0..levels)
        .map(|k| {
            let a = omega[k] * ts[k].powf(-s);
            let b = omega[k + 1] * ts[k + 1].powf(-s);
            0.5 * ln2 * (a + b)
        })
        .collect();
    let mut value: f64 = blocks.iter().sum();
    let tail = &blocks[blocks.len() - 6..];
    let last = *tail.last().expect("at least six blocks");
    let stalled = tail.windows(2).all(|w| w[1] >= 0.95 * w[0]);
    let divergence_suspected = stalled && last > 1e-12 * (1.0 + value);
    if !divergence_suspected && last > 0.0 {
        let ratio = last / tail[tail.len() - 2];
        if ratio < 1.0 {
            value += last * ratio / (1.0 - ratio);
        }
    }
    Ok(DiniIntegral {
        value,
        moduli: ts.into_iter().zip(omega).collect(),
        blocks,
        divergence_suspected,
    })
}
