//! `simulate`: integrate one path and export it.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::write_json;
use crate::CliError;

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    dimension: usize,
    modes_per_axis: usize,
    steps: usize,
    horizon: f64,
    final_l2_norm: f64,
    outputs: Vec<String>,
}

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let solver_config = config.solver_config()?;
    let traj = spdelab_core::solver::solve_path(&solver_config, 0)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let mut outputs = Vec::new();

    let mut columnar = Vec::new();
    traj.write_columnar(&mut columnar).map_err(CliError::Io)?;
    std::fs::write(out_dir.join("trajectory.tsv"), columnar).map_err(CliError::Io)?;
    outputs.push("trajectory.tsv".into());

    let mut cache = Vec::new();
    traj.write_cache(&mut cache).map_err(CliError::Io)?;
    std::fs::write(out_dir.join("trajectory.bin"), cache).map_err(CliError::Io)?;
    outputs.push("trajectory.bin".into());

    if !config.probes.is_empty() {
        let points: Vec<Vec<f64>> = config.probes.iter().map(|p| p.x.clone()).collect();
        let mut series = Vec::new();
        traj.write_probe_series(&points, &mut series)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        std::fs::write(out_dir.join("probes.tsv"), series).map_err(CliError::Io)?;
        outputs.push("probes.tsv".into());
    }

    let final_field = traj.state_field(traj.n_steps());
    let summary = SimulateSummary {
        seed: solver_config.seed,
        dimension: config.solver.dimension,
        modes_per_axis: config.solver.modes_per_axis,
        steps: config.solver.steps,
        horizon: config.solver.horizon,
        final_l2_norm: final_field.l2_norm(),
        outputs,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}
