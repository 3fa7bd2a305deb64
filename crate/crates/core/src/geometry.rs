//! Euclidean primitives: ball volumes, ball intersections and quadrature
//! rules on the unit sphere.
//!
//! All balls are closed. Intersections are computed in closed form for
//! `n <= 3`; higher dimensions fall back to randomized quasi-Monte Carlo.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad::{first_primes, radical_inverse, GaussLegendre};
use crate::rng;

/// Ambient dimension `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("dimension must be at least 1");
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub(crate) fn check(self, point: &[f64]) -> Result<()> {
        if point.len() != self.0 {
            return Err(Error::DimensionMismatch {
                expected: self.0,
                got: point.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<usize> for Dimension {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Dimension::new(n)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

/// Volume of the unit ball, `pi^(n/2) / Gamma(n/2 + 1)`.
pub fn unit_ball_volume(n: Dimension) -> f64 {
    let h = n.as_f64() / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

/// Surface measure of the unit sphere, `n * omega_n`.
pub fn sphere_area(n: Dimension) -> f64 {
    n.as_f64() * unit_ball_volume(n)
}

/// Volume of a ball of radius `r`.
pub fn ball_volume(n: Dimension, r: f64) -> f64 {
    unit_ball_volume(n) * r.powi(n.get() as i32)
}

/// A volume together with its Monte Carlo standard error (zero for closed
/// forms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    pub value: f64,
    pub std_error: f64,
}

impl Volume {
    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

/// Sample budget used by [`ball_intersection_volume`] when `n >= 4`.
pub const DEFAULT_QMC_BUDGET: usize = 1 << 14;

/// Lebesgue measure of `B(c1, r1) ∩ B(c2, r2)`.
pub fn ball_intersection_volume(c1: &[f64], r1: f64, c2: &[f64], r2: f64) -> Result<Volume> {
    ball_intersection_volume_qmc(c1, r1, c2, r2, DEFAULT_QMC_BUDGET, 0x5eed)
}

/// As [`ball_intersection_volume`] with an explicit quasi-Monte Carlo
/// budget and seed for `n >= 4`.
pub fn ball_intersection_volume_qmc(
    c1: &[f64],
    r1: f64,
    c2: &[f64],
    r2: f64,
    budget: usize,
    seed: u64,
) -> Result<Volume> {
    if !(r1 > 0.0 && r2 > 0.0) {
        return invalid(format!("radii must be positive (got {r1}, {r2})"));
    }
    if c1.len() != c2.len() || c1.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: c1.len(),
            got: c2.len(),
        });
    }
    let n = Dimension::new(c1.len())?;
    let d = crate::dist(c1, c2);
    Ok(lens_volume(n, d, r1, r2).unwrap_or_else(|| qmc_lens(n, d, r1, r2, budget, seed)))
}

/// Closed form in terms of the center distance; `None` when `n >= 4`
/// and the balls overlap partially.
pub(crate) fn lens_volume(n: Dimension, d: f64, r1: f64, r2: f64) -> Option<Volume> {
    if d >= r1 + r2 {
        return Some(Volume::exact(0.0));
    }
    let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if d <= large - small {
        return Some(Volume::exact(ball_volume(n, small)));
    }
    let v = match n.get() {
        1 => r1 + r2 - d,
        2 => {
            // two circular segments over the common chord; written in the
            // chord half-height h and the center offsets, acos near ±1 would
            // lose half the digits close to tangency
            let k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
            let h = k.max(0.0).sqrt() / (2.0 * d);
            let x1 = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
            let x2 = d - x1;
            let seg = |x: f64| (h * h + x * x) * h.atan2(x) - h * x;
            seg(x1) + seg(x2)
        }
        3 => {
            let s = r1 + r2 - d;
            PI * s * s * (d * d + 2.0 * d * (r1 + r2) - 3.0 * (r1 - r2) * (r1 - r2)) / (12.0 * d)
        }
        _ => return None,
    };
    Some(Volume::exact(v.max(0.0)))
}

/// Randomized Halton estimate: fraction of the smaller ball covered by the
/// larger one, averaged over independent Cranley-Patterson shifts.
fn qmc_lens(n: Dimension, d: f64, r1: f64, r2: f64, budget: usize, seed: u64) -> Volume {
    use rand::Rng;
    let dim = n.get();
    let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    // small ball centered at the origin, large ball at distance d on axis 0
    let replicates = 8usize;
    let per = (budget / replicates).max(64);
    let primes = first_primes(dim);
    let mut rng = rng::stream(seed, 0);
    let mut fracs = Vec::with_capacity(replicates);
    let mut p = vec![0.0; dim];
    for _ in 0..replicates {
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let (mut inside, mut both) = (0usize, 0usize);
        for i in 1..=per as u64 {
            let mut r2sum = 0.0;
            for k in 0..dim {
                let u = (radical_inverse(i, primes[k]) + shift[k]).fract();
                p[k] = small * (2.0 * u - 1.0);
                r2sum += p[k] * p[k];
            }
            if r2sum > small * small {
                continue;
            }
            inside += 1;
            let dx = p[0] - d;
            let rest = r2sum - p[0] * p[0];
            if dx * dx + rest <= large * large {
                both += 1;
            }
        }
        fracs.push(if inside == 0 { 0.0 } else { both as f64 / inside as f64 });
    }
    let mean = fracs.iter().sum::<f64>() / replicates as f64;
    let var = fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (replicates as f64 - 1.0);
    let vol = ball_volume(n, small);
    Volume {
        value: vol * mean,
        std_error: vol * (var / replicates as f64).sqrt(),
    }
}

/// Quadrature rule on the unit sphere `S^{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    dim: Dimension,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SphereRule {
    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.nodes.iter().map(|v| v.as_slice()).zip(self.weights.iter().copied())
    }

    /// `∫ f dσ` under this rule.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// Builds a rule from explicit nodes and weights; nodes are normalized
    /// and weights must be positive.
    pub fn from_parts(dim: Dimension, nodes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return invalid("sphere rule needs as many weights as nodes");
        }
        let mut normed = Vec::with_capacity(nodes.len());
        for v in nodes {
            dim.check(&v)?;
            let r = crate::norm(&v);
            if r == 0.0 {
                return invalid("sphere rule node at the origin");
            }
            normed.push(v.iter().map(|c| c / r).collect());
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return invalid("sphere rule weights must be positive");
        }
        Ok(Self {
            dim,
            nodes: normed,
            weights,
        })
    }
}

/// Quadrature on `S^{n-1}`.
///
/// * `n = 1`: the two points `±1` with unit weights.
/// * `n = 2`: `order` equally spaced angles; exact for trigonometric
///   polynomials of degree `< order`.
/// * `n = 3`: Gauss-Legendre in `cos θ` (`order` nodes) times
///   `2 * order` equally spaced azimuths.
/// * `n >= 4`: `order` seeded Monte Carlo nodes with equal weights.
pub fn sphere_quadrature(n: Dimension, order: usize) -> Result<SphereRule> {
    if order < 1 {
        return invalid("sphere quadrature order must be at least 1");
    }
    let (nodes, weights) = match n.get() {
        1 => (vec![vec![1.0], vec![-1.0]], vec![1.0, 1.0]),
        2 => {
            let w = 2.0 * PI / order as f64;
            let nodes = (0..order)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / order as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect();
            (nodes, vec![w; order])
        }
        3 => {
            let gl = GaussLegendre::new(order);
            let naz = 2 * order;
            let dphi = 2.0 * PI / naz as f64;
            let mut nodes = Vec::with_capacity(order * naz);
            let mut weights = Vec::with_capacity(order * naz);
            for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                let s = (1.0 - z * z).max(0.0).sqrt();
                for j in 0..naz {
                    let ph = (j as f64 + 0.5) * dphi;
                    nodes.push(vec![s * ph.cos(), s * ph.sin(), *z]);
                    weights.push(wz * dphi);
                }
            }
            (nodes, weights)
        }
        dim => {
            let mut r = rng::stream(0x5fe4e, dim as u64);
            let w = sphere_area(n) / order as f64;
            let nodes = (0..order)
                .map(|_| {
                    let mut v = vec![0.0; dim];
                    rng::unit_direction(&mut r, &mut v);
                    v
                })
                .collect();
            (nodes, vec![w; order])
        }
    };
    Ok(SphereRule {
        dim: n,
        nodes,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn disc_lens_near_internal_tangency() {
        // the sliver outside the large disc is O(δ^{3/2}), far below 1e-13
        for delta in [1e-14, 1e-12, 1e-10] {
            let v = lens_volume(Dimension::new(2).unwrap(), (1.0 - 0.3) * (1.0 + delta), 0.3, 1.0).unwrap().value;
            let full = PI * 0.09;
            assert!(v <= full * (1.0 + 1e-15) && (full - v) / full < 1e-13, "{delta}: {v}");
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert_relative_eq!(unit_ball_volume(dim(1)), 2.0, max_relative = 1e-14);
        assert_relative_eq!(unit_ball_volume(dim(2)), PI, max_relative = 1e-14);
        assert_relative_eq!(unit_ball_volume(dim(3)), 4.0 * PI / 3.0, max_relative = 1e-14);
        // omega_n = 2 pi / n * omega_{n-2}
        for n in 3..12 {
            let lhs = unit_ball_volume(dim(n));
            let rhs = 2.0 * PI / n as f64 * unit_ball_volume(dim(n - 2));
            assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
        }
    }

    #[test]
    fn dimension_zero_rejected() {
        assert!(Dimension::new(0).is_err());
    }

    #[test]
    fn interval_overlap() {
        let v = ball_intersection_volume(&[0.0], 1.0, &[0.5], 1.0).unwrap();
        assert_eq!(v.value, 1.5);
        assert_eq!(v.std_error, 0.0);
    }

    #[test]
    fn identical_disks() {
        let v = ball_intersection_volume(&[0.3, -0.2], 1.0, &[0.3, -0.2], 1.0).unwrap();
        assert_relative_eq!(v.value, PI, max_relative = 1e-15);
    }

    #[test]
    fn nonpositive_radius_rejected() {
        assert!(ball_intersection_volume(&[0.0], 0.0, &[0.0], 1.0).is_err());
        assert!(ball_intersection_volume(&[0.0], 1.0, &[0.0], -1.0).is_err());
    }

    #[test]
    fn unit_lens_matches_monte_carlo() {
        // oracle: 10^7 uniform samples in the bounding box of the first disk
        let exact = ball_intersection_volume(&[0.0, 0.0], 1.0, &[1.0, 0.0], 1.0)
            .unwrap()
            .value;
        let formula = 2.0 * (0.5f64).acos() - 0.5 * 3f64.sqrt();
        assert_relative_eq!(exact, formula, max_relative = 1e-14);
        let mut r = rng::stream(99, 1);
        let m = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..m {
            let x: f64 = r.random::<f64>() * 2.0 - 1.0;
            let y: f64 = r.random::<f64>() * 2.0 - 1.0;
            if x * x + y * y <= 1.0 && (x - 1.0) * (x - 1.0) + y * y <= 1.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / m as f64;
        let est = 4.0 * p;
        let se = 4.0 * (p * (1.0 - p) / m as f64).sqrt();
        assert!((est - exact).abs() < 3.0 * se, "est {est} exact {exact} se {se}");
    }

    #[test]
    fn spherical_lens_unequal_radii() {
        // brute-force cross-check of the cap formula by a fine lattice
        let (r1, r2, d) = (1.0, 0.7, 1.2);
        let exact = ball_intersection_volume(&[0.0, 0.0, 0.0], r1, &[d, 0.0, 0.0], r2)
            .unwrap()
            .value;
        let k = 200;
        let h = 2.0 / k as f64;
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let p = [
                        -1.0 + (i as f64 + 0.5) * h,
                        -1.0 + (j as f64 + 0.5) * h,
                        -1.0 + (l as f64 + 0.5) * h,
                    ];
                    let a = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                    let b = (p[0] - d).powi(2) + p[1] * p[1] + p[2] * p[2];
                    if a <= r1 * r1 && b <= r2 * r2 {
                        acc += h * h * h;
                    }
                }
            }
        }
        assert!((acc - exact).abs() < 5e-3, "{acc} vs {exact}");
    }

    #[test]
    fn high_dimension_uses_qmc_with_error_bar() {
        let n = 4;
        let c1 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        c2[0] = 1.0;
        let v = ball_intersection_volume_qmc(&c1, 1.0, &c2, 1.0, 1 << 16, 3).unwrap();
        assert!(v.std_error > 0.0);
        // symmetric lens in R^4: 2 * cap volume of height 1/2, closed form
        // V_cap(h) = pi^2/2 * ... evaluated via the regularized formula
        // omega_{n-1} ∫_{1/2}^{1} (1 - x^2)^{(n-1)/2} dx
        let gl = GaussLegendre::new(40);
        let cap = unit_ball_volume(dim(3)) * gl.integrate(0.5, 1.0, |x| (1.0 - x * x).powf(1.5));
        assert!((v.value - 2.0 * cap).abs() < 4.0 * v.std_error + 1e-3);
        // touching and containing cases are exact
        let far = ball_intersection_volume(&c1, 1.0, &[2.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(far.value, 0.0);
        let inner = ball_intersection_volume(&c1, 3.0, &c2, 1.0).unwrap();
        assert_relative_eq!(inner.value, unit_ball_volume(dim(4)), max_relative = 1e-14);
    }

    #[test]
    fn sphere_rules() {
        let r1 = sphere_quadrature(dim(1), 5).unwrap();
        assert_eq!(r1.nodes(), &[vec![1.0], vec![-1.0]]);
        assert_eq!(r1.weights(), &[1.0, 1.0]);

        let r2 = sphere_quadrature(dim(2), 64).unwrap();
        assert!(r2.integrate(|x| x[0]).abs() < 1e-14);
        assert_relative_eq!(r2.integrate(|_| 1.0), 2.0 * PI, max_relative = 1e-14);
        // cos^2 has degree 2 < order
        assert_relative_eq!(r2.integrate(|x| x[0] * x[0]), PI, max_relative = 1e-13);

        let r3 = sphere_quadrature(dim(3), 32).unwrap();
        assert!((r3.integrate(|_| 1.0) - 4.0 * PI).abs() < 1e-10);
        assert!((r3.integrate(|x| x[2] * x[2]) - 4.0 * PI / 3.0).abs() < 1e-10);

        for rule in [&r1, &r2, &r3] {
            for (x, w) in rule.iter() {
                assert!(w > 0.0);
                assert!((crate::norm(x) - 1.0).abs() < 1e-12);
            }
        }
        let r5 = sphere_quadrature(dim(5), 100).unwrap();
        assert!((r5.weights().iter().sum::<f64>() - sphere_area(dim(5))).abs() < 1e-10);
        assert!(sphere_quadrature(dim(2), 0).is_err());
    }

    proptest! {
        #[test]
        fn intersection_symmetry_bounds_and_translation(
            n in 1usize..=3,
            c in proptest::collection::vec(-2.0f64..2.0, 6),
            s in proptest::collection::vec(-5.0f64..5.0, 3),
            r1 in 0.05f64..2.0,
            r2 in 0.05f64..2.0,
        ) {
            let a = &c[..n];
            let b = &c[3..3 + n];
            let v = ball_intersection_volume(a, r1, b, r2).unwrap().value;
            let w = ball_intersection_volume(b, r2, a, r1).unwrap().value;
            prop_assert!((v - w).abs() <= 1e-12 * (1.0 + v.abs()));
            let cap = ball_volume(dim(n), r1).min(ball_volume(dim(n), r2));
            prop_assert!(v <= cap * (1.0 + 1e-12) && v >= 0.0);
            if crate::dist(a, b) >= r1 + r2 {
                prop_assert_eq!(v, 0.0);
            }
            let a2: Vec<f64> = a.iter().zip(&s).map(|(x, y)| x + y).collect();
            let b2: Vec<f64> = b.iter().zip(&s).map(|(x, y)| x + y).collect();
            let u = ball_intersection_volume(&a2, r1, &b2, r2).unwrap().value;
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }
}
