//! One-dimensional numerical building blocks: Gauss-Legendre rules,
//! golden-section search and low-discrepancy sequences.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the Legendre recurrence, seeded with the
    /// Chebyshev-like asymptotic guess.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let m = order;
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for i in 0..m.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[m - 1 - i] = z;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
///
/// Returns `(argmax, max)` of the best point seen, endpoints included.
/// Exact for unimodal functions up to `tol` in the abscissa.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let fa = f(lo);
    let fb = f(hi);
    let mut best = if fa >= fb { (lo, fa) } else { (hi, fb) };
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iters = 0;
    while (hi - lo) > tol && iters < 200 {
        iters += 1;
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Maximizes `h(r)` over `r > 0` given candidate radii where the maximum
/// may sit (kinks, single-atom optima) and a bracketing range.
///
/// Evaluates every candidate, scans a log grid between consecutive
/// breakpoints and refines each local grid maximum by golden section in
/// `log r`. The result is a lower bound of the true supremum that is exact
/// when `h` is unimodal between breakpoints.
pub fn sup_over_radius(
    mut h: impl FnMut(f64) -> f64,
    candidates: &[f64],
    lo: f64,
    hi: f64,
    grid_per_interval: usize,
    tol: f64,
) -> (f64, f64) {
    let mut pts: Vec<f64> = candidates
        .iter()
        .copied()
        .filter(|r| r.is_finite() && *r > 0.0)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());

    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let consider =|r: f64, v: f64, best: &mut (f64, f64)| {
        if v > best.1 {
            *best = (r, v);
        }
    };
    for &r in &pts {
        let v = h(r);
        consider(r, v, &mut best);
    }
    let g = grid_per_interval.max(2);
    for w in pts.windows(2) {
        let (a, b) = (w[0].ln(), w[1].ln());
        if b - a <= 1e-14 {
            continue;
        }
        // grid including both ends
        let us: Vec<f64> = (0..=g).map(|i| a + (b - a) * i as f64 / g as f64).collect();
        let vs: Vec<f64> = us.iter().map(|&u| h(u.exp())).collect();
        for i in 0..=g {
            consider(us[i].exp(), vs[i], &mut best);
            let left = if i == 0 { f64::NEG_INFINITY } else { vs[i - 1] };
            let right = if i == g { f64::NEG_INFINITY } else { vs[i + 1] };
            if vs[i] >= left && vs[i] >= right {
                let ua = if i == 0 { us[0] } else { us[i - 1] };
                let ub = if i == g { us[g] } else { us[i + 1] };
                let (u, v) = golden_max(|u| h(u.exp()), ua, ub, tol);
                consider(u.exp(), v, &mut best);
            }
        }
    }
    best
}

/// Radical inverse of `index` in base `base` (van der Corput).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// First `k` primes, used as Halton bases.
pub fn first_primes(k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(k);
    let mut c = 2u64;
    while out.len() < k {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}
