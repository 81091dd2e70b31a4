//! `malliavin`: per-path Malliavin norms at the probe points.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use spdelab_core::malliavin::{
    malliavin_norm_adjoint, second_malliavin_norm, CoefficientPath,
};
use spdelab_core::solver::solve_path;

use crate::config::ExperimentConfig;
use crate::report::{write_json, write_text};
use crate::CliError;

#[derive(Serialize)]
struct MalliavinSummary {
    n_paths: usize,
    probes: usize,
    with_second: bool,
    min_norm_sq: f64,
    max_norm_sq: f64,
}

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    if config.probes.is_empty() {
        return Err(CliError::Validation(
            "malliavin requires at least one probe point".into(),
        ));
    }
    let solver_config = config.solver_config()?;
    let evaluator = solver_config
        .drift
        .evaluator()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let with_second = config.malliavin.with_second;

    let mut table = String::from("path\tt\tx\tdnorm2");
    if with_second {
        table.push_str("\td2norm2");
    }
    table.push('\n');

    let mut min_norm = f64::INFINITY;
    let mut max_norm = f64::NEG_INFINITY;
    for path in 0..config.malliavin.n_paths as u64 {
        let traj =
            solve_path(&solver_config, path).map_err(|e| CliError::Numerical(e.to_string()))?;
        let coeffs = CoefficientPath::from_trajectory(&traj, &evaluator, solver_config.eta)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        for probe in &config.probes {
            let norm = malliavin_norm_adjoint(&traj, &solver_config.noise, &coeffs, probe.t, &probe.x)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            min_norm = min_norm.min(norm);
            max_norm = max_norm.max(norm);
            let label: Vec<String> = probe.x.iter().map(|v| format!("{v}")).collect();
            write!(table, "{path}\t{}\t{}\t{norm}", probe.t, label.join(",")).expect("string write");
            if with_second {
                let t_index = traj.time_index(probe.t).ok_or_else(|| {
                    CliError::Validation(format!("probe time {} not on grid", probe.t))
                })?;
                let second = second_malliavin_norm(
                    &traj,
                    &solver_config.noise,
                    &coeffs,
                    &evaluator,
                    t_index,
                    &probe.x,
                )
                .map_err(|e| CliError::Numerical(e.to_string()))?;
                write!(table, "\t{second}").expect("string write");
            }
            table.push('\n');
        }
    }
    write_text(&out_dir.join("malliavin.tsv"), &table)?;

    let summary = MalliavinSummary {
        n_paths: config.malliavin.n_paths,
        probes: config.probes.len(),
        with_second,
        min_norm_sq: min_norm,
        max_norm_sq: max_norm,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}
