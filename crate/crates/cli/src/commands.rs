use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use limitlab::geometry::{sphere_area, sphere_quadrature, unit_ball_volume};
use limitlab::kernels::{
    dini_integral, heat_critical_radius, heat_sup_constant, poisson_critical_radius, poisson_sup_constant,
    DiniIntegral, DiniOptions, HomogeneousKernel,
};
use limitlab::limits::{counterexample_rm13, hierarchy_demo, sweep_with_target, Counterexample, HierarchyConfig, HierarchyReport, SweepReport};
use limitlab::{Dimension, EvalOptions, FreeFunction, OperatorSpec};
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub x: Vec<f64>,
    pub t: f64,
    pub operator: f64,
    /// `None` where the target is singular.
    pub target: Option<f64>,
    pub difference: Option<f64>,
}

/// `T V_t(x)` next to the limit target. Singular points of the operator
/// are errors.
pub fn cmd_eval(cfg: &ExperimentConfig, x: &[f64], t: f64) -> anyhow::Result<EvalOutput> {
    let e = cfg.build()?;
    let vt = e.measure.dilate(t)?;
    let operator = e.spec.eval(&vt, x, &e.options)?;
    let target = e.target.eval(x).ok();
    Ok(EvalOutput {
        x: x.to_vec(),
        t,
        operator,
        target,
        difference: target.map(|v| operator - v),
    })
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Runs the configured sweep and writes `<stem>.csv` and `<stem>.json`.
/// `out` overrides the configured directory.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<SweepOutcome> {
    let e = cfg.build()?;
    let sc = cfg.sweep_config()?;
    let report = sweep_with_target(&e.spec, &e.measure, &e.target, &sc, &e.options)?;
    let section = cfg.output.clone().unwrap_or_default();
    let dir = out.map(Path::to_path_buf).unwrap_or(section.dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join(format!("{}.csv", section.stem));
    let json = dir.join(format!("{}.json", section.stem));
    std::fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    std::fs::write(&json, report.to_json()).with_context(|| format!("writing {}", json.display()))?;
    Ok(SweepOutcome { report, csv, json })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub n: usize,
    pub unit_ball_volume: f64,
    pub sphere_area: f64,
    pub poisson_sup: f64,
    pub poisson_critical_radius: f64,
    pub heat_sup: f64,
    pub heat_critical_radius: f64,
    /// `ω_n² / 2^{n-1}`.
    pub counterexample_bound: f64,
}

pub fn cmd_constants(n: usize) -> anyhow::Result<Constants> {
    let d = Dimension::new(n)?;
    let w = unit_ball_volume(d);
    Ok(Constants {
        n,
        unit_ball_volume: w,
        sphere_area: sphere_area(d),
        poisson_sup: poisson_sup_constant(d),
        poisson_critical_radius: poisson_critical_radius(d),
        heat_sup: heat_sup_constant(d),
        heat_critical_radius: heat_critical_radius(d),
        counterexample_bound: w * w / 2f64.powi(n as i32 - 1),
    })
}

impl fmt::Display for Constants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n                        {}", self.n)?;
        for (name, v) in [
            ("unit_ball_volume", self.unit_ball_volume),
            ("sphere_area", self.sphere_area),
            ("poisson_sup", self.poisson_sup),
            ("poisson_critical_radius", self.poisson_critical_radius),
            ("heat_sup", self.heat_sup),
            ("heat_critical_radius", self.heat_critical_radius),
            ("counterexample_bound", self.counterexample_bound),
        ] {
            writeln!(f, "{name:<24} {v:.16e}")?;
        }
        Ok(())
    }
}

fn kernel_of(spec: &OperatorSpec) -> Option<&HomogeneousKernel> {
    match spec {
        OperatorSpec::HomogMaximal { kernel, .. }
        | OperatorSpec::FracIntegral { kernel, .. }
        | OperatorSpec::TruncatedMaximal { kernel }
        | OperatorSpec::Convolution {
            g: FreeFunction::Homogeneous { kernel, .. },
        } => Some(kernel),
        _ => None,
    }
}

pub fn cmd_dini(cfg: &ExperimentConfig) -> anyhow::Result<DiniIntegral> {
    let e = cfg.build()?;
    let kernel = kernel_of(&e.spec).ok_or_else(|| anyhow!("dini needs a homogeneous kernel"))?;
    let d = cfg.dini.as_ref().ok_or_else(|| anyhow!("missing [dini] table"))?;
    let rule = sphere_quadrature(e.dim, d.order)?;
    let opts = DiniOptions {
        levels: d.levels,
        shift_budget: d.shift_budget,
    };
    Ok(dini_integral(kernel, d.q, d.s, d.t_max, &rule, opts)?)
}

pub fn dini_table(d: &DiniIntegral) -> String {
    let mut out = String::from("t,omega_q\n");
    for (t, w) in &d.moduli {
        out.push_str(&format!("{t:.16e},{w:.16e}\n"));
    }
    out.push_str(&format!("# integral {:.16e}\n", d.value));
    out.push_str(&format!("# divergence_suspected {}\n", d.divergence_suspected));
    out
}

pub fn cmd_counterexample(n: usize, ts: &[f64], points: usize) -> anyhow::Result<Vec<Counterexample>> {
    let opts = EvalOptions::default();
    ts.iter()
        .map(|&t| counterexample_rm13(n, t, points, &opts).map_err(Into::into))
        .collect()
}

/// Hierarchy demo from the config's `[hierarchy]` table when present.
pub fn cmd_hierarchy(cfg: Option<&ExperimentConfig>, seed: Option<u64>, budget: Option<usize>) -> anyhow::Result<HierarchyReport> {
    let mut h = HierarchyConfig::default();
    if let Some(c) = cfg {
        h.n = c.dimension;
        h.seed = c.seed;
        h.budget = c.budget;
        if let Some(s) = &c.hierarchy {
            h.p = s.p;
            h.t_values = s.t.clone();
            h.lambdas = s.lambdas.clone();
            h.outer_factor = s.outer_factor;
        }
    }
    if let Some(s) = seed {
        h.seed = s;
    }
    if let Some(b) = budget {
        h.budget = b;
    }
    Ok(hierarchy_demo(&h)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_closed_forms() {
        let c = cmd_constants(1).unwrap();
        assert!((c.unit_ball_volume - 2.0).abs() < 1e-14);
        assert!((c.poisson_sup - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((c.counterexample_bound - 4.0).abs() < 1e-13);
        let c = cmd_constants(2).unwrap();
        assert!((c.heat_sup - 1.0 / (std::f64::consts::PI * std::f64::consts::E)).abs() < 1e-15);
        assert!(cmd_constants(0).is_err());
        assert!(c.to_string().contains("heat_sup"));
    }

    #[test]
    fn eval_dirac() {
        let cfg = ExperimentConfig::from_toml(
            r#"
dimension = 2
[operator]
family = "radial_maximal"
profile = { kind = "indicator" }
[measure]
kind = "dirac"
point = [0.0, 0.0]
"#,
        )
        .unwrap();
        let out = cmd_eval(&cfg, &[2.0, 0.0], 1.0).unwrap();
        assert!((out.operator - 0.25).abs() < 1e-15);
        assert!((out.target.unwrap() - 0.25).abs() < 1e-15);
        let err = cmd_eval(&cfg, &[0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err.downcast_ref::<limitlab::Error>(), Some(limitlab::Error::Singularity(_))));
    }
}
