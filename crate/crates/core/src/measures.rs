//! Finite positive measures, their dilations `V_t(E) = V(E / t)`, and the
//! concentration split `V_t = V_t¹ + V_t²` at radius `r_t = √t`.

use std::io::BufRead;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ball_intersection_volume, ball_volume, Dimension};

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    /// `Σ w_i δ_{y_i}`.
    Atomic {
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Density `values[k]` on the shell `radii[k-1] < |y| <= radii[k]`
    /// (with `radii[-1] = 0`), zero outside the last radius.
    RadialDensity { radii: Vec<f64>, values: Vec<f64> },
    /// Piecewise-constant density on a regular grid of cells covering the
    /// box `[lower, upper]`. Cells are stored row-major, axis 0 slowest.
    BoxDensity {
        lower: Vec<f64>,
        upper: Vec<f64>,
        cells: Vec<usize>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    dim: Dimension,
    kind: MeasureKind,
}

/// `V_t` cut at the closed ball `B(0, r_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMeasure {
    /// `V_t¹ = V_t χ_{B(0, r_t)}`.
    pub inner: Measure,
    /// `V_t² = V_t - V_t¹`.
    pub outer: Measure,
    pub r_t: f64,
    /// Relative tail mass `V_t²(ℝⁿ) / V(ℝⁿ)`.
    pub eps_t: f64,
}

impl Measure {
    pub fn atomic(dim: Dimension, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return invalid("atomic measure needs one weight per point");
        }
        for p in &points {
            dim.check(p)?;
            if p.iter().any(|v| !v.is_finite()) {
                return invalid("atom location must be finite");
            }
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return invalid("atom weights must be positive and finite");
        }
        Ok(Self {
            dim,
            kind: MeasureKind::Atomic { points, weights },
        })
    }

    /// A single atom.
    pub fn dirac(point: Vec<f64>, weight: f64) -> Result<Self> {
        let dim = Dimension::new(point.len())?;
        Self::atomic(dim, vec![point], vec![weight])
    }

    pub fn radial(dim: Dimension, radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return invalid("radial density needs matching, nonempty radii and values");
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) || !radii[radii.len() - 1].is_finite() {
            return invalid("radial density radii must be positive, finite and increasing");
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return invalid("densities must be nonnegative and finite");
        }
        Ok(Self {
            dim,
            kind: MeasureKind::RadialDensity { radii, values },
        })
    }

    /// `density · χ_{B(0, radius)} dx`.
    pub fn uniform_ball(dim: Dimension, radius: f64, density: f64) -> Result<Self> {
        Self::radial(dim, vec![radius], vec![density])
    }

    /// Uniform probability on `B(0, radius)`.
    pub fn uniform_probability(dim: Dimension, radius: f64) -> Result<Self> {
        Self::uniform_ball(dim, radius, 1.0 / ball_volume(dim, radius))
    }

    /// Step approximation of a radial density `f(|y|)` truncated at `outer`,
    /// using the shell midpoint value on `steps` equal-width shells.
    pub fn radial_from_fn(dim: Dimension, f: impl Fn(f64) -> f64, outer: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(outer > 0.0) {
            return invalid("radial density needs a positive truncation radius and step count");
        }
        let h = outer / steps as f64;
        let radii = (1..=steps).map(|k| k as f64 * h).collect();
        let values = (0..steps).map(|k| f((k as f64 + 0.5) * h)).collect();
        Self::radial(dim, radii, values)
    }

    pub fn box_density(dim: Dimension, lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        dim.check(&lower)?;
        dim.check(&upper)?;
        if cells.len() != dim.get() || cells.iter().any(|&c| c == 0) {
            return invalid("box density needs a positive cell count per axis");
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(b > a)) {
            return invalid("box upper corner must exceed the lower corner on every axis");
        }
        if values.len() != cells.iter().product::<usize>() {
            return invalid("box density value count must equal the number of cells");
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return invalid("densities must be nonnegative and finite");
        }
        Ok(Self {
            dim,
            kind: MeasureKind::BoxDensity { lower, upper, cells, values },
        })
    }

    /// Reads `x_1,...,x_n,weight` rows. Blank lines, `#` comments and a
    /// non-numeric header row are skipped.
    pub fn atomic_from_csv(dim: Dimension, reader: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidArgument(format!("reading atoms: {e}")))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let fields = match fields {
                Ok(v) => v,
                Err(_) if points.is_empty() && lineno == 0 => continue,
                Err(e) => return invalid(format!("line {}: {e}", lineno + 1)),
            };
            if fields.len() != dim.get() + 1 {
                return invalid(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    dim.get() + 1,
                    fields.len()
                ));
            }
            weights.push(fields[dim.get()]);
            points.push(fields[..dim.get()].to_vec());
        }
        Self::atomic(dim, points, weights)
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.kind, MeasureKind::Atomic { .. })
    }

    pub fn is_empty(&self) -> bool {
        self.total_mass() == 0.0
    }

    pub fn total_mass(&self) -> f64 {
        match &self.kind {
            MeasureKind::Atomic { weights, .. } => weights.iter().sum(),
            MeasureKind::RadialDensity { radii, values } => {
                let mut prev = 0.0;
                let mut acc = 0.0;
                for (r, v) in radii.iter().zip(values) {
                    let vol = ball_volume(self.dim, *r);
                    acc += v * (vol - prev);
                    prev = vol;
                }
                acc
            }
            MeasureKind::BoxDensity { lower, upper, cells, values } => {
                let cell_vol: f64 = lower
                    .iter()
                    .zip(upper)
                    .zip(cells)
                    .map(|((a, b), c)| (b - a) / *c as f64)
                    .product();
                values.iter().sum::<f64>() * cell_vol
            }
        }
    }

    /// Density at `y` for absolutely continuous measures.
    pub fn density_at(&self, y: &[f64]) -> Option<f64> {
        match &self.kind {
            MeasureKind::Atomic { .. } => None,
            MeasureKind::RadialDensity { radii, values } => {
                let r = crate::norm(y);
                let k = radii.partition_point(|&b| b < r);
                Some(values.get(k).copied().unwrap_or(0.0))
            }
            MeasureKind::BoxDensity { lower, upper, cells, values } => {
                let mut idx = 0usize;
                for i in 0..y.len() {
                    if y[i] < lower[i] || y[i] > upper[i] {
                        return Some(0.0);
                    }
                    let h = (upper[i] - lower[i]) / cells[i] as f64;
                    let c = (((y[i] - lower[i]) / h) as usize).min(cells[i] - 1);
                    idx = idx * cells[i] + c;
                }
                Some(values[idx])
            }
        }
    }

    /// Radius of the smallest origin-centered closed ball holding the
    /// support.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            MeasureKind::Atomic { points, .. } => points.iter().map(|p| crate::norm(p)).fold(0.0, f64::max),
            MeasureKind::RadialDensity { radii, .. } => radii[radii.len() - 1],
            MeasureKind::BoxDensity { lower, upper, .. } => lower
                .iter()
                .zip(upper)
                .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Radii `ρ` at which the density restricted to the sphere
    /// `|y - x| = ρ` changes character. Used to place quadrature breaks.
    pub(crate) fn breakpoints_about(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        match &self.kind {
            MeasureKind::Atomic { .. } => {}
            MeasureKind::RadialDensity { radii, .. } => {
                let d = crate::norm(x);
                for r in radii {
                    out.push((r - d).abs());
                    out.push(r + d);
                }
            }
            MeasureKind::BoxDensity { lower, upper, cells, .. } => {
                // distances to the grid planes along each axis
                for i in 0..x.len() {
                    let h = (upper[i] - lower[i]) / cells[i] as f64;
                    for k in 0..=cells[i] {
                        out.push((lower[i] + k as f64 * h - x[i]).abs());
                    }
                }
                let far = lower
                    .iter()
                    .zip(upper)
                    .zip(x)
                    .map(|((a, b), c)| (a - c).abs().max((b - c).abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                out.push(far);
            }
        }
        out.retain(|v| *v > 0.0 && v.is_finite());
        out.sort_by(|a, b| a.total_cmp(b));
        out.dedup();
        out
    }

    /// Largest `|y - x|` over the support.
    pub(crate) fn max_distance_from(&self, x: &[f64]) -> f64 {
        match &self.kind {
            MeasureKind::Atomic { points, .. } => points.iter().map(|p| crate::dist(p, x)).fold(0.0, f64::max),
            MeasureKind::RadialDensity { radii, .. } => radii[radii.len() - 1] + crate::norm(x),
            MeasureKind::BoxDensity { lower, upper, .. } => lower
                .iter()
                .zip(upper)
                .zip(x)
                .map(|((a, b), c)| (a - c).abs().max((b - c).abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// The pushforward under `y ↦ t y`: `V_t(E) = V(E / t)`.
    pub fn dilate(&self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("dilation factor must be positive (got {t})"));
        }
        let scale = t.powi(-(self.dim.get() as i32));
        let kind = match &self.kind {
            MeasureKind::Atomic { points, weights } => MeasureKind::Atomic {
                points: points.iter().map(|p| p.iter().map(|v| v * t).collect()).collect(),
                weights: weights.clone(),
            },
            MeasureKind::RadialDensity { radii, values } => MeasureKind::RadialDensity {
                radii: radii.iter().map(|r| r * t).collect(),
                values: values.iter().map(|v| v * scale).collect(),
            },
            MeasureKind::BoxDensity { lower, upper, cells, values } => MeasureKind::BoxDensity {
                lower: lower.iter().map(|v| v * t).collect(),
                upper: upper.iter().map(|v| v * t).collect(),
                cells: cells.clone(),
                values: values.iter().map(|v| v * scale).collect(),
            },
        };
        Ok(Self { dim: self.dim, kind })
    }

    /// The probability measure `V / V(ℝⁿ)` and the original mass.
    pub fn normalized(&self) -> Result<(Self, f64)> {
        let m = self.total_mass();
        if !(m > 0.0) {
            return invalid("cannot normalize a measure with zero mass");
        }
        let kind = match &self.kind {
            MeasureKind::Atomic { points, weights } => MeasureKind::Atomic {
                points: points.clone(),
                weights: weights.iter().map(|w| w / m).collect(),
            },
            MeasureKind::RadialDensity { radii, values } => MeasureKind::RadialDensity {
                radii: radii.clone(),
                values: values.iter().map(|v| v / m).collect(),
            },
            MeasureKind::BoxDensity { lower, upper, cells, values } => MeasureKind::BoxDensity {
                lower: lower.clone(),
                upper: upper.clone(),
                cells: cells.clone(),
                values: values.iter().map(|v| v / m).collect(),
            },
        };
        Ok((Self { dim: self.dim, kind }, m))
    }

    /// Dilates by `t` and cuts at `r_t = √t`. Box densities are cut at
    /// cell resolution (cells whose center lies in the ball go inside).
    pub fn split(&self, t: f64) -> Result<SplitMeasure> {
        let vt = self.dilate(t)?;
        let r_t = t.sqrt();
        let mass = self.total_mass();
        let (inner, outer) = match &vt.kind {
            MeasureKind::Atomic { points, weights } => {
                let (mut ip, mut iw, mut op, mut ow) = (vec![], vec![], vec![], vec![]);
                for (p, w) in points.iter().zip(weights) {
                    if crate::norm(p) <= r_t {
                        ip.push(p.clone());
                        iw.push(*w);
                    } else {
                        op.push(p.clone());
                        ow.push(*w);
                    }
                }
                (
                    Measure { dim: self.dim, kind: MeasureKind::Atomic { points: ip, weights: iw } },
                    Measure { dim: self.dim, kind: MeasureKind::Atomic { points: op, weights: ow } },
                )
            }
            MeasureKind::RadialDensity { radii, values } => {
                let (mut ir, mut iv) = (vec![], vec![]);
                let (mut or, mut ov) = (vec![], vec![]);
                for (r, v) in radii.iter().zip(values) {
                    if *r <= r_t {
                        ir.push(*r);
                        iv.push(*v);
                        or.push(*r);
                        ov.push(0.0);
                    } else {
                        if ir.last().is_none_or(|last| *last < r_t) {
                            ir.push(r_t);
                            iv.push(*v);
                            or.push(r_t);
                            ov.push(0.0);
                        }
                        or.push(*r);
                        ov.push(*v);
                    }
                }
                if ir.is_empty() {
                    ir.push(r_t);
                    iv.push(0.0);
                }
                if or.is_empty() {
                    or.push(r_t);
                    ov.push(0.0);
                }
                (
                    Measure { dim: self.dim, kind: MeasureKind::RadialDensity { radii: ir, values: iv } },
                    Measure { dim: self.dim, kind: MeasureKind::RadialDensity { radii: or, values: ov } },
                )
            }
            MeasureKind::BoxDensity { lower, upper, cells, values } => {
                let n = self.dim.get();
                let mut iv = values.clone();
                let mut ov = values.clone();
                let mut idx = vec![0usize; n];
                for lin in 0..values.len() {
                    let mut rem = lin;
                    for i in (0..n).rev() {
                        idx[i] = rem % cells[i];
                        rem /= cells[i];
                    }
                    let c2: f64 = (0..n)
                        .map(|i| {
                            let h = (upper[i] - lower[i]) / cells[i] as f64;
                            (lower[i] + (idx[i] as f64 + 0.5) * h).powi(2)
                        })
                        .sum();
                    if c2.sqrt() <= r_t {
                        ov[lin] = 0.0;
                    } else {
                        iv[lin] = 0.0;
                    }
                }
                let mk = |values| Measure {
                    dim: self.dim,
                    kind: MeasureKind::BoxDensity {
                        lower: lower.clone(),
                        upper: upper.clone(),
                        cells: cells.clone(),
                        values,
                    },
                };
                (mk(iv), mk(ov))
            }
        };
        let eps_t = if mass > 0.0 { outer.total_mass() / mass } else { 0.0 };
        Ok(SplitMeasure { inner, outer, r_t, eps_t })
    }

    /// `V(B(center, radius))` for the closed ball.
    pub fn ball_mass(&self, center: &[f64], radius: f64) -> Result<f64> {
        self.dim.check(center)?;
        if !(radius >= 0.0) {
            return invalid(format!("ball radius must be nonnegative (got {radius})"));
        }
        match &self.kind {
            MeasureKind::Atomic { points, weights } => Ok(points
                .iter()
                .zip(weights)
                .filter(|(p, _)| crate::dist(p, center) <= radius)
                .map(|(_, w)| w)
                .sum()),
            MeasureKind::RadialDensity { radii, values } => {
                if radius == 0.0 {
                    return Ok(0.0);
                }
                let origin = vec![0.0; center.len()];
                let mut prev = 0.0;
                let mut acc = 0.0;
                for (r, v) in radii.iter().zip(values) {
                    let cur = ball_intersection_volume(center, radius, &origin, *r)?.value;
                    acc += v * (cur - prev);
                    prev = cur;
                }
                Ok(acc.max(0.0))
            }
            MeasureKind::BoxDensity { lower, upper, cells, values } => Ok(box_ball_mass(
                lower, upper, cells, values, center, radius,
            )),
        }
    }
}

/// Cells fully inside or outside the ball are exact; cut cells use a
/// midpoint rule with about 4096 points (exact interval overlap when
/// `n = 1`).
fn box_ball_mass(lower: &[f64], upper: &[f64], cells: &[usize], values: &[f64], c: &[f64], r: f64) -> f64 {
    let n = lower.len();
    let h: Vec<f64> = (0..n).map(|i| (upper[i] - lower[i]) / cells[i] as f64).collect();
    let cell_vol: f64 = h.iter().product();
    let mut idx = vec![0usize; n];
    let mut acc = 0.0;
    for (lin, v) in values.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let mut rem = lin;
        for i in (0..n).rev() {
            idx[i] = rem % cells[i];
            rem /= cells[i];
        }
        let lo: Vec<f64> = (0..n).map(|i| lower[i] + idx[i] as f64 * h[i]).collect();
        let near: f64 = (0..n)
            .map(|i| {
                let d = (lo[i] - c[i]).max(c[i] - lo[i] - h[i]).max(0.0);
                d * d
            })
            .sum();
        if near.sqrt() > r {
            continue;
        }
        let far: f64 = (0..n)
            .map(|i| {
                let d = (lo[i] - c[i]).abs().max((lo[i] + h[i] - c[i]).abs());
                d * d
            })
            .sum();
        if far.sqrt() <= r {
            acc += v * cell_vol;
            continue;
        }
        if n == 1 {
            let a = lo[0].max(c[0] - r);
            let b = (lo[0] + h[0]).min(c[0] + r);
            acc += v * (b - a).max(0.0);
            continue;
        }
        let k = (4096f64.powf(1.0 / n as f64).floor() as usize).max(2);
        let total = k.pow(n as u32);
        let mut inside = 0usize;
        let mut sub = vec![0usize; n];
        for s in 0..total {
            let mut rem = s;
            for i in 0..n {
                sub[i] = rem % k;
                rem /= k;
            }
            let d2: f64 = (0..n)
                .map(|i| {
                    let p = lo[i] + (sub[i] as f64 + 0.5) / k as f64 * h[i];
                    (p - c[i]).powi(2)
                })
                .sum();
            if d2 <= r * r {
                inside += 1;
            }
        }
        acc += v * cell_vol * inside as f64 / total as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unit_ball_volume;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn dilate_atom() {
        let v = Measure::dirac(vec![3.0], 1.0).unwrap();
        let vt = v.dilate(0.5).unwrap();
        assert_eq!(vt, Measure::dirac(vec![1.5], 1.0).unwrap());
        assert_eq!(v.dilate(1.0).unwrap(), v);
        assert!(v.dilate(0.0).is_err());
        assert!(v.dilate(-1.0).is_err());
    }

    #[test]
    fn dilate_uniform_ball_density() {
        for n in 1..=3 {
            let v = Measure::uniform_ball(dim(n), 1.0, 1.0).unwrap();
            let vt = v.dilate(0.1).unwrap();
            match vt.kind() {
                MeasureKind::RadialDensity { radii, values } => {
                    assert_relative_eq!(radii[0], 0.1, max_relative = 1e-15);
                    assert_relative_eq!(values[0], 10f64.powi(n as i32), max_relative = 1e-12);
                }
                _ => unreachable!(),
            }
            // mass by midpoint quadrature over the radius
            let steps = 100_000;
            let h = 0.2 / steps as f64;
            let q: f64 = (0..steps)
                .map(|k| {
                    let r = (k as f64 + 0.5) * h;
                    vt.density_at(&{
                        let mut p = vec![0.0; n];
                        p[0] = r;
                        p
                    })
                    .unwrap()
                        * n as f64
                        * unit_ball_volume(dim(n))
                        * r.powi(n as i32 - 1)
                        * h
                })
                .sum();
            assert!((q - v.total_mass()).abs() < 1e-8 * v.total_mass().max(1.0) + 1e-4 * h.powi(0), "n={n}");
            assert!((vt.total_mass() - v.total_mass()).abs() < 1e-12 * v.total_mass());
        }
    }

    #[test]
    fn split_examples() {
        for n in 1..=3 {
            let v = Measure::uniform_ball(dim(n), 1.0, 1.0).unwrap();
            let s = v.split(0.25).unwrap();
            assert_eq!(s.eps_t, 0.0);
            assert_eq!(s.r_t, 0.5);
        }
        let atom = Measure::dirac(vec![4.0], 1.0).unwrap();
        let s = atom.split(0.04).unwrap();
        assert_eq!(s.eps_t, 0.0);
        assert!((s.r_t - 0.2).abs() < 1e-15);
        assert_eq!(s.inner.total_mass(), 1.0);

        // Gaussian-like radial density on [0, 10] in one dimension
        let g = Measure::radial_from_fn(dim(1), |r| (-r * r / 2.0).exp(), 10.0, 10_000).unwrap();
        assert_eq!(g.split(0.01).unwrap().eps_t, 0.0);
        let s = g.split(4.0).unwrap();
        // oracle: V({|y| > 0.5}) / V(ℝ) by direct summation of the step density
        let h = 10.0 / 10_000.0;
        let tail: f64 = (0..10_000)
            .map(|k| (k as f64 + 0.5) * h)
            .filter(|r| *r > 0.5)
            .map(|r| 2.0 * (-r * r / 2.0).exp() * h)
            .sum();
        assert_relative_eq!(s.eps_t, tail / g.total_mass(), max_relative = 1e-10);
        assert_relative_eq!(
            s.inner.total_mass() + s.outer.total_mass(),
            g.total_mass(),
            max_relative = 1e-12
        );
        // eps_t = 1 - V(B(0, t^{-1/2})) for the normalized measure
        let (p, _) = g.normalized().unwrap();
        let direct = 1.0 - p.ball_mass(&[0.0], 0.5).unwrap();
        assert!((s.eps_t - direct).abs() < 1e-12);
    }

    #[test]
    fn eps_t_nonincreasing_as_t_decreases() {
        let v = Measure::radial_from_fn(dim(2), |r| 1.0 / (1.0 + r * r).powi(2), 50.0, 500).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..12 {
            let t = 4.0 * 0.5f64.powi(k);
            let e = v.split(t).unwrap().eps_t;
            assert!(e <= prev + 1e-15);
            prev = e;
        }
        // tail of the profile beyond 1/sqrt(t) is pi/(1 + 1/t) out of pi
        assert!(prev < 3e-3);
    }

    #[test]
    fn ball_mass_examples() {
        let atom = Measure::dirac(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(atom.ball_mass(&[0.3, 0.4], 0.5).unwrap(), 1.0);
        assert_eq!(atom.ball_mass(&[0.3, 0.4], 0.49).unwrap(), 0.0);
        for n in 1..=3 {
            let v = Measure::uniform_probability(dim(n), 1.0).unwrap();
            let m = v.ball_mass(&vec![0.0; n], 0.5).unwrap();
            assert_relative_eq!(m, 0.5f64.powi(n as i32), max_relative = 1e-13);
        }
        let v = Measure::uniform_ball(dim(2), 1.0, 1.0).unwrap();
        let lens = v.ball_mass(&[1.0, 0.0], 1.0).unwrap();
        // Monte Carlo oracle over the square [-1, 1]^2
        let mut r = crate::rng::stream(5, 5);
        let m = 2_000_000;
        let hits = (0..m)
            .filter(|_| {
                let x: f64 = r.random::<f64>() * 2.0 - 1.0;
                let y: f64 = r.random::<f64>() * 2.0 - 1.0;
                x * x + y * y <= 1.0 && (x - 1.0).powi(2) + y * y <= 1.0
            })
            .count();
        let p = hits as f64 / m as f64;
        let se = 4.0 * (p * (1.0 - p) / m as f64).sqrt();
        assert!((4.0 * p - lens).abs() < 3.0 * se);
        assert!(v.ball_mass(&[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn box_density_matches_radial_on_uniform_square() {
        let b = Measure::box_density(dim(2), vec![-1.0, -1.0], vec![1.0, 1.0], vec![4, 4], vec![0.25; 16]).unwrap();
        assert_relative_eq!(b.total_mass(), 1.0, max_relative = 1e-14);
        assert_eq!(b.ball_mass(&[0.0, 0.0], 10.0).unwrap(), 1.0);
        let m = b.ball_mass(&[0.0, 0.0], 0.5).unwrap();
        assert!((m - 0.25 * std::f64::consts::PI * 0.25).abs() < 2e-3);
        let b1 = Measure::box_density(dim(1), vec![0.0], vec![2.0], vec![2], vec![1.0, 3.0]).unwrap();
        assert_relative_eq!(b1.ball_mass(&[1.0], 0.5).unwrap(), 0.5 + 1.5, max_relative = 1e-14);
        let s = b1.split(1.0).unwrap();
        assert_relative_eq!(s.inner.total_mass() + s.outer.total_mass(), 4.0, max_relative = 1e-14);
    }

    #[test]
    fn csv_atoms() {
        let text = "x,y,w\n0.0,1.0,0.5\n# comment\n\n2.0,-1.0,0.25\n";
        let m = Measure::atomic_from_csv(dim(2), text.as_bytes()).unwrap();
        assert_eq!(m.total_mass(), 0.75);
        assert!(Measure::atomic_from_csv(dim(2), "1,2\n".as_bytes()).is_err());
        assert!(Measure::atomic_from_csv(dim(1), "1,-2\n".as_bytes()).is_err());
    }

    #[test]
    fn invalid_measures() {
        assert!(Measure::atomic(dim(1), vec![vec![0.0]], vec![0.0]).is_err());
        assert!(Measure::radial(dim(1), vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(Measure::radial(dim(1), vec![1.0], vec![-1.0]).is_err());
    }

    proptest! {
        #[test]
        fn dilation_preserves_mass(t in 1e-3f64..1e3, which in 0usize..3) {
            let v = match which {
                0 => Measure::atomic(dim(2), vec![vec![1.0, 2.0], vec![-3.0, 0.5]], vec![0.3, 1.7]).unwrap(),
                1 => Measure::radial(dim(3), vec![0.5, 1.0, 4.0], vec![2.0, 0.0, 0.1]).unwrap(),
                _ => Measure::box_density(dim(2), vec![-1.0, 0.0], vec![1.0, 2.0], vec![2, 3], vec![1.0, 2.0, 0.0, 0.5, 0.5, 3.0]).unwrap(),
            };
            let m = v.total_mass();
            let mt = v.dilate(t).unwrap().total_mass();
            if which == 0 { prop_assert_eq!(m, mt); } else { prop_assert!((m - mt).abs() <= 1e-12 * m); }
        }

        #[test]
        fn ball_mass_monotone_in_radius(cx in -2.0f64..2.0, cy in -2.0f64..2.0, r1 in 0.0f64..3.0, dr in 0.0f64..3.0) {
            let v = Measure::radial(dim(2), vec![0.5, 1.5], vec![1.0, 0.3]).unwrap();
            let a = v.ball_mass(&[cx, cy], r1).unwrap();
            let b = v.ball_mass(&[cx, cy], r1 + dr).unwrap();
            prop_assert!(a <= b + 1e-12);
            let big = v.ball_mass(&[cx, cy], 100.0).unwrap();
            prop_assert!((big - v.total_mass()).abs() < 1e-12);
        }
    }
}
