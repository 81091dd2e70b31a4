//! `density`: ensemble generation, KDE, small-ball and negative-moment
//! diagnostics, and the weakened lower-bound curve.

use std::path::Path;

use serde::Serialize;
use spdelab_core::density::{
    gaussian_density, kde, negative_moment, weakened_condition_check, run_ensemble, sample_grid,
    small_ball_curve, small_ball_exponent_pair, write_xy, DensityError,
};
use spdelab_core::solver::g_closed_form;

use crate::config::ExperimentConfig;
use crate::report::{write_json, write_text};
use crate::CliError;

#[derive(Serialize)]
struct ProbeSummary {
    t: f64,
    x: Vec<f64>,
    n_samples: usize,
    kde_bandwidth: f64,
    kde_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaussian_sup_error_over_peak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_moment: Option<NegativeMomentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    small_ball_exponent_pair: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weakened_condition_degenerate_at: Option<f64>,
}

#[derive(Serialize)]
struct NegativeMomentSummary {
    order: f64,
    estimate: f64,
    trimmed_estimate: f64,
    relative_shift: f64,
    trim_stable: bool,
}

#[derive(Serialize)]
struct DensitySummary {
    n_paths: usize,
    failures: usize,
    probes: Vec<ProbeSummary>,
}

fn density_err(e: DensityError) -> CliError {
    match e {
        DensityError::TooFewPaths { .. }
        | DensityError::TooFewSamples { .. }
        | DensityError::ProbeTimeOffGrid { .. }
        | DensityError::ProbeOutOfDomain { .. }
        | DensityError::NonPositiveEpsilon { .. } => CliError::Validation(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    if config.probes.is_empty() {
        return Err(CliError::Validation(
            "density requires at least one probe point".into(),
        ));
    }
    let solver_config = config.solver_config()?;
    let probes = config.probes();
    let with_malliavin = config.ensemble.with_malliavin;
    let ensemble = run_ensemble(&solver_config, config.ensemble.n_paths, &probes, with_malliavin)
        .map_err(density_err)?;

    let mut columnar = Vec::new();
    ensemble.write_columnar(&mut columnar).map_err(CliError::Io)?;
    std::fs::write(out_dir.join("ensemble.tsv"), columnar).map_err(CliError::Io)?;

    let drift_is_linear_case = solver_config.drift.function.is_identically_zero()
        && solver_config.eta == 0.0;

    let mut probe_summaries = Vec::new();
    for (i, probe) in probes.iter().enumerate() {
        let samples = ensemble.values(i);
        let grid = sample_grid(&samples, config.density.grid_points, config.density.span_sigmas);
        let estimate = kde(&samples, &grid, config.density.bandwidth).map_err(density_err)?;
        let mut buf = Vec::new();
        estimate.write_xy(&mut buf).map_err(CliError::Io)?;
        std::fs::write(out_dir.join(format!("kde_{i}.tsv")), buf).map_err(CliError::Io)?;

        // Exact Gaussian benchmark for the zero-drift case.
        let gaussian_sup_error_over_peak = if drift_is_linear_case {
            let var = g_closed_form(&solver_config.noise, &probe.x, probe.t)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let mut text = String::from("# value kde exact_gaussian\n");
            let mut sup = 0.0f64;
            for (x, v) in estimate.grid.iter().zip(&estimate.values) {
                let exact = gaussian_density(*x, 0.0, var);
                sup = sup.max((v - exact).abs());
                text.push_str(&format!("{x}\t{v}\t{exact}\n"));
            }
            write_text(&out_dir.join(format!("gaussian_benchmark_{i}.tsv")), &text)?;
            Some(sup / estimate.peak())
        } else {
            None
        };

        let (negative_moment_summary, exponent_pair, weakened_condition_degenerate_at) = if with_malliavin {
            let norms = ensemble.norms_sq(i).map_err(density_err)?;
            let eps_grid = config.density.epsilon_grid.clone().unwrap_or_else(|| {
                let max = norms.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
                (0..12).map(|k| max * 2.0 * 0.5f64.powi(k)).collect()
            });
            let curve = small_ball_curve(&norms, &eps_grid).map_err(density_err)?;
            let rows: Vec<(f64, f64)> = curve.iter().map(|p| (p.epsilon, p.probability)).collect();
            let mut buf = Vec::new();
            write_xy(
                &mut buf,
                "epsilon P(norm2 < epsilon), Wilson bands in small_ball json",
                &rows,
            )
            .map_err(CliError::Io)?;
            std::fs::write(out_dir.join(format!("small_ball_{i}.tsv")), buf)
                .map_err(CliError::Io)?;

            let report = negative_moment(&norms, config.density.negative_moment_order)
                .map_err(density_err)?;
            let weakened = weakened_condition_check(&solver_config.noise, &probe.x, &config.density.weakened_condition_deltas)
                .map_err(density_err)?;
            let mut buf = Vec::new();
            write_xy(&mut buf, "delta weakened_condition_quantity", &weakened.points).map_err(CliError::Io)?;
            std::fs::write(out_dir.join(format!("weakened_condition_{i}.tsv")), buf)
                .map_err(CliError::Io)?;

            (
                Some(NegativeMomentSummary {
                    order: report.order,
                    estimate: report.estimate,
                    trimmed_estimate: report.trimmed_estimate,
                    relative_shift: report.relative_shift,
                    trim_stable: report.relative_shift
                        <= spdelab_core::tolerances::NEGATIVE_MOMENT_TRIM_STABILITY,
                }),
                Some(small_ball_exponent_pair(
                    config.density.negative_moment_order,
                    config.lower_bound.gamma,
                )),
                weakened.degenerate_at,
            )
        } else {
            (None, None, None)
        };

        probe_summaries.push(ProbeSummary {
            t: probe.t,
            x: probe.x.clone(),
            n_samples: samples.len(),
            kde_bandwidth: estimate.bandwidth,
            kde_mass: estimate.mass(),
            gaussian_sup_error_over_peak,
            negative_moment: negative_moment_summary,
            small_ball_exponent_pair: exponent_pair,
            weakened_condition_degenerate_at,
        });
    }

    let summary = DensitySummary {
        n_paths: ensemble.n_paths(),
        failures: ensemble.failure_count(),
        probes: probe_summaries,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}
