//! `verify`: named invariant suites with one PASS/FAIL line per check.
//!
//! Suites: drift (resolvent and Yosida facts, derivative recursion,
//! mollifier), kernels (semigroup/heat-kernel facts and evolution-operator
//! comparisons), noise (martingale-measure covariance identity), malliavin
//! (adjoint/forward/finite-difference oracles, domination, positivity),
//! convergence (regularization ladders and Δt refinement under common noise).

use std::path::Path;

use spdelab_core::density::sample_mean;
use spdelab_core::drift::{DriftFunction, Mollifier, NewtonSettings, RegularizedDrift};
use spdelab_core::malliavin::{
    evolution_kernel, last_slice_contribution, malliavin_fd_check, malliavin_norm_adjoint_at_index,
    malliavin_norm_forward, CoefficientPath,
};
use spdelab_core::rng::NoiseStreams;
use spdelab_core::solver::{
    coarsen_increments, covariance_selftest, g_closed_form, solve_path,
    solve_path_with_increments, DriftSpec, DriftVariant, InitialData, NoiseModel, SolverConfig,
    StepTables,
};
use spdelab_core::spectral::{synthesize_on_grid, MultiIndex, SineBasis, SpectralField, TransformPlan};
use spdelab_core::tolerances as tol;

use crate::report::{write_json, CheckLine, SuiteReport};
use crate::CliError;

pub fn run(suite: &str, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let checks = match suite {
        "drift" => drift_suite(seed),
        "kernels" => kernels_suite(seed),
        "noise" => noise_suite(seed),
        "malliavin" => malliavin_suite(seed),
        "convergence" => convergence_suite(seed),
        other => {
            return Err(CliError::Validation(format!(
                "unknown suite '{other}' (expected drift|kernels|noise|malliavin|convergence)"
            )))
        }
    }?;
    let report = SuiteReport::new(suite, checks);
    for check in &report.checks {
        check.print();
    }
    write_json(&out_dir.join(format!("verify_{suite}.json")), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Suite(format!("suite '{suite}' failed")))
    }
}

fn num(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn catalog() -> Vec<DriftFunction> {
    vec![
        DriftFunction::Cubic,
        DriftFunction::LinearCubic,
        DriftFunction::Linear { slope: 2.0 },
    ]
}

fn drift_suite(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let mut checks = Vec::new();
    let lambdas = [1.0, 0.1, 0.01];
    let grid: Vec<f64> = (0..1000).map(|i| -5.0 + 10.0 * i as f64 / 999.0).collect();
    let streams = NoiseStreams::new(seed);

    let mut max_residual = 0.0f64;
    let mut max_domination_excess = f64::NEG_INFINITY;
    let mut max_contraction_excess = f64::NEG_INFINITY;
    let mut max_lipschitz_excess = f64::NEG_INFINITY;
    let mut max_d1_above_cap = f64::NEG_INFINITY;
    let mut min_d1 = f64::INFINITY;
    for f in catalog() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let rd = RegularizedDrift::new(f.clone(), lambda, NewtonSettings::default())
                .map_err(num)?;
            for &y in &grid {
                let j = rd.resolvent(y).map_err(num)?;
                max_residual = max_residual.max((j + lambda * f.eval(j) - y).abs());
                let fl = rd.yosida(y).map_err(num)?;
                max_domination_excess = max_domination_excess.max(fl.abs() - f.eval(y).abs());
                let d1 = rd.yosida_d1(y).map_err(num)?;
                max_d1_above_cap = max_d1_above_cap.max(d1 - 1.0 / lambda);
                min_d1 = min_d1.min(d1);
            }
            for pair in 0..10_000u128 {
                let y1 = streams.uniform(li as u64, 2 * pair) * 10.0 - 5.0;
                let y2 = streams.uniform(li as u64, 2 * pair + 1) * 10.0 - 5.0;
                let j1 = rd.resolvent(y1).map_err(num)?;
                let j2 = rd.resolvent(y2).map_err(num)?;
                max_contraction_excess =
                    max_contraction_excess.max((j1 - j2).abs() - (y1 - y2).abs());
                let f1 = rd.yosida(y1).map_err(num)?;
                let f2 = rd.yosida(y2).map_err(num)?;
                max_lipschitz_excess = max_lipschitz_excess
                    .max(((f1 - f2).abs() - (y1 - y2).abs() / lambda) * lambda);
            }
        }
    }
    checks.push(CheckLine::le(
        "drift.resolvent_residual",
        max_residual,
        tol::RESOLVENT_RESIDUAL,
    ));
    checks.push(CheckLine::le(
        "drift.contraction_excess",
        max_contraction_excess,
        tol::YOSIDA_IDENTITY_SLACK,
    ));
    checks.push(CheckLine::le(
        "drift.lipschitz_excess_scaled",
        max_lipschitz_excess,
        tol::YOSIDA_IDENTITY_SLACK,
    ));
    checks.push(CheckLine::le(
        "drift.domination_excess",
        max_domination_excess,
        tol::YOSIDA_IDENTITY_SLACK,
    ));
    checks.push(CheckLine::le(
        "drift.first_derivative_above_1_over_lambda",
        max_d1_above_cap,
        tol::YOSIDA_IDENTITY_SLACK,
    ));
    checks.push(CheckLine::ge("drift.first_derivative_min", min_d1, 0.0));

    // Pointwise λ-ladder convergence, monotone in λ (n = 0).
    let ladder = [1.0, 0.3, 0.1, 0.03, 0.01];
    let mut max_gap_increase = f64::NEG_INFINITY;
    for f in catalog() {
        for &y in grid.iter().step_by(25) {
            let mut prev = f64::INFINITY;
            for &lambda in &ladder {
                let rd = RegularizedDrift::new(f.clone(), lambda, NewtonSettings::default())
                    .map_err(num)?;
                let gap = (rd.yosida(y).map_err(num)? - f.eval(y)).abs();
                max_gap_increase = max_gap_increase.max(gap - prev);
                prev = gap;
            }
        }
    }
    checks.push(CheckLine::le(
        "drift.lambda_ladder_gap_increase",
        max_gap_increase,
        tol::YOSIDA_IDENTITY_SLACK,
    ));

    // Derivative recursion vs nested central differences, f = x³, n = 2, 3.
    for n in 2..=3usize {
        let h = tol::derivative_fd_step(n);
        let mut worst = 0.0f64;
        for &lambda in &lambdas {
            let rd = RegularizedDrift::new(DriftFunction::Cubic, lambda, tol::oracle_newton())
                .map_err(num)?;
            let mut sup = 0.0f64;
            let mut err = 0.0f64;
            for &y in grid.iter().step_by(10) {
                let exact = rd.yosida_dn(n, y).map_err(num)?;
                sup = sup.max(exact.abs());
                let fd = nested_central(&rd, n, y, h)?;
                err = err.max((exact - fd).abs());
            }
            worst = worst.max(err / sup.max(1.0));
        }
        checks.push(CheckLine::le(
            &format!("drift.recursion_vs_fd_n{n}"),
            worst,
            tol::DERIVATIVE_FD_REL,
        ));
    }

    // λ-uniform envelope band at the top tested order (n = 3, q = 0).
    let envs: Result<Vec<f64>, CliError> = lambdas
        .iter()
        .map(|&l| {
            RegularizedDrift::new(DriftFunction::Cubic, l, NewtonSettings::default())
                .map_err(num)?
                .growth_envelope(3, &grid, 0)
                .map_err(num)
        })
        .collect();
    let envs = envs?;
    let ratio = envs.iter().cloned().fold(0.0f64, f64::max)
        / envs.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(CheckLine::le("drift.envelope_band_n3_q0", ratio, 2.0));

    // Mollifier: unit mass and β-ladder convergence toward f_λ.
    let mass_defect = (Mollifier::new(0.3).map_err(num)?.discrete_mass() - 1.0).abs();
    checks.push(CheckLine::le("drift.mollifier_mass_defect", mass_defect, 1e-6));

    let mut prev_gap = f64::INFINITY;
    let mut max_beta_increase = f64::NEG_INFINITY;
    for &beta in &[0.3, 0.1, 0.03] {
        let rd = RegularizedDrift::new(DriftFunction::Cubic, 0.1, NewtonSettings::default())
            .map_err(num)?
            .with_mollifier(beta)
            .map_err(num)?;
        let mut gap = 0.0f64;
        for &y in grid.iter().step_by(25) {
            gap = gap.max((rd.mollified(0, y).map_err(num)? - rd.yosida(y).map_err(num)?).abs());
        }
        max_beta_increase = max_beta_increase.max(gap - prev_gap);
        prev_gap = gap;
    }
    checks.push(CheckLine::le(
        "drift.mollified_beta_ladder_gap_increase",
        max_beta_increase,
        0.0,
    ));

    // β-uniform envelope: the constant fitted at β = 1 bounds all β ≤ 1.
    let fit = RegularizedDrift::new(DriftFunction::Cubic, 0.5, NewtonSettings::default())
        .map_err(num)?
        .with_mollifier(1.0)
        .map_err(num)?;
    let mut n_const = 0.0f64;
    for &y in &grid {
        n_const = n_const.max(fit.mollified(0, y).map_err(num)?.abs() / (1.0 + y.abs().powi(3)));
    }
    let mut worst_ratio = 0.0f64;
    for &beta in &[0.5, 0.1, 0.02] {
        let rd = RegularizedDrift::new(DriftFunction::Cubic, 0.5, NewtonSettings::default())
            .map_err(num)?
            .with_mollifier(beta)
            .map_err(num)?;
        for &y in &grid {
            let v = rd.mollified(0, y).map_err(num)?.abs() / (1.0 + y.abs().powi(3));
            worst_ratio = worst_ratio.max(v / n_const);
        }
    }
    checks.push(CheckLine::le(
        "drift.mollified_envelope_beta_uniform",
        worst_ratio,
        1.0 + 1e-9,
    ));

    // Quasi-monotone ingestion: the net form (η = 0) and the normalized
    // monotone form (Lipschitz norm moved into η) integrate to the same
    // trajectory under common noise.
    let text = format!(
        r#"
seed = {seed}

[solver]
dimension = 1
modes_per_axis = 8
steps = 64
horizon = 0.5

[solver.initial]
kind = "parabola"
amplitude = 0.5

[noise]
kind = "identity"

[drift]
kind = "quasi_monotone_cubic_sine"
"#
    );
    let experiment: crate::config::ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let normalized = experiment.solver_config()?;
    let (raw_drift, raw_eta) = experiment.drift_raw()?;
    let raw = SolverConfig {
        drift: raw_drift,
        eta: raw_eta,
        ..normalized.clone()
    };
    let a = solve_path(&normalized, 0).map_err(num)?;
    let b = solve_path(&raw, 0).map_err(num)?;
    let gap = a
        .states()
        .iter()
        .zip(b.states())
        .flat_map(|(sa, sb)| sa.iter().zip(sb).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    checks.push(CheckLine::le("drift.quasi_monotone_normalization_gap", gap, 1e-12));

    Ok(checks)
}

fn nested_central(
    rd: &RegularizedDrift,
    n: usize,
    y: f64,
    h: f64,
) -> Result<f64, CliError> {
    // n-fold nested central first differences: binomial stencil of width n·h.
    let mut acc = 0.0;
    for j in 0..=n {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let binom = (0..j).fold(1.0, |b, i| b * (n - i) as f64 / (i + 1) as f64);
        let x = y + (n as f64 / 2.0 - j as f64) * h;
        acc += sign * binom * rd.yosida(x).map_err(num)?;
    }
    Ok(acc / h.powi(n as i32))
}

fn kernels_suite(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let mut checks = Vec::new();

    // Orthonormality by quadrature at small truncation.
    let basis = SineBasis::new(1, 6);
    let n_quad = 2000usize;
    let h = std::f64::consts::PI / n_quad as f64;
    let mut ortho_defect = 0.0f64;
    for a in 0..basis.n_modes() {
        for b in a..basis.n_modes() {
            let (ka, kb) = (basis.mode(a), basis.mode(b));
            let mut acc = 0.0;
            for i in 0..n_quad {
                let x = [(i as f64 + 0.5) * h];
                acc += basis.eval_basis(&ka, &x).map_err(num)?
                    * basis.eval_basis(&kb, &x).map_err(num)?;
            }
            acc *= h;
            let expect = if a == b { 1.0 } else { 0.0 };
            ortho_defect = ortho_defect.max((acc - expect).abs());
        }
    }
    checks.push(CheckLine::le("kernels.orthonormality_defect", ortho_defect, 1e-8));

    // Exponential law on coefficients.
    let mut coeffs = vec![0.0; basis.n_modes()];
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c = ((i + 1) as f64).recip();
    }
    let field = SpectralField::from_coeffs(basis, coeffs).map_err(num)?;
    let one = field
        .apply_semigroup(0.6)
        .and_then(|f| f.apply_semigroup(0.4))
        .map_err(num)?;
    let two = field.apply_semigroup(1.0).map_err(num)?;
    let comp_err = one
        .coeffs()
        .iter()
        .zip(two.coeffs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.push(CheckLine::le("kernels.semigroup_composition", comp_err, 1e-14));

    // Heat kernel symmetry and the mass bound G_t(x,O) ≤ 1.
    let big = SineBasis::new(1, 64);
    let sym = (big.heat_kernel(0.3, &[1.0], &[2.0]).map_err(num)?
        - big.heat_kernel(0.3, &[2.0], &[1.0]).map_err(num)?)
    .abs();
    checks.push(CheckLine::le("kernels.heat_kernel_symmetry", sym, 0.0));

    let mut mass_excess = f64::NEG_INFINITY;
    let mut mass_increase = f64::NEG_INFINITY;
    for i in 1..40 {
        let x = [i as f64 * std::f64::consts::PI / 40.0];
        let mut prev = f64::INFINITY;
        for j in 1..=20 {
            let t = 0.05 * j as f64;
            let m = big.kernel_mass(t, &x).map_err(num)?;
            mass_excess = mass_excess.max(m - 1.0);
            mass_increase = mass_increase.max(m - prev);
            prev = m;
        }
    }
    checks.push(CheckLine::le("kernels.mass_excess_over_one", mass_excess, 1e-3));
    checks.push(CheckLine::le("kernels.mass_nonmonotone_excess", mass_increase, 1e-12));

    // Evolution-operator positivity and comparison on sampled cubic paths.
    let k = 8usize;
    let basis = SineBasis::new(1, k);
    let config = SolverConfig {
        basis,
        noise: NoiseModel::identity(basis).map_err(num)?,
        drift: DriftSpec::exact(DriftFunction::Cubic),
        eta: 0.0,
        horizon: 0.25,
        steps: 64,
        initial: InitialData::Zero,
        seed,
    };
    let evaluator = config.drift.evaluator().map_err(num)?;
    let mut pos_defect = 0.0f64;
    let mut cmp_defect = 0.0f64;
    let mut sup = 0.0f64;
    let mut identity_err = 0.0f64;
    for path in 0..20 {
        let traj = solve_path(&config, path).map_err(num)?;
        let coeffs = CoefficientPath::from_trajectory(&traj, &evaluator, 0.0).map_err(num)?;
        let u = evolution_kernel(&coeffs, &config.noise, 64, 32).map_err(num)?;
        pos_defect = pos_defect.max(u.positivity_defect());
        cmp_defect = cmp_defect.max(u.comparison_defect());
        sup = sup.max(u.kernel_sup());
        let id = evolution_kernel(&coeffs, &config.noise, 32, 32).map_err(num)?;
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                identity_err = identity_err.max((id.entry(i, j) - expect).abs());
            }
        }
    }
    let eps = tol::evolution_kernel_eps(k);
    checks.push(CheckLine::le("kernels.evolution_positivity_defect", pos_defect, eps));
    checks.push(CheckLine::le("kernels.evolution_comparison_defect", cmp_defect, eps));
    checks.push(CheckLine::le("kernels.evolution_kernel_sup", sup, 10.0));
    checks.push(CheckLine::le("kernels.evolution_identity_at_equal_times", identity_err, 0.0));

    Ok(checks)
}

fn noise_suite(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let mut checks = Vec::new();
    let basis = SineBasis::new(1, 16);
    let noise = NoiseModel::identity(basis).map_err(num)?;
    let n = 100_000;

    let k1 = MultiIndex::new(vec![1]).unwrap();
    let k2 = MultiIndex::new(vec![2]).unwrap();
    let e1 = SpectralField::single_mode(basis, &k1, 1.0).map_err(num)?;
    let e2 = SpectralField::single_mode(basis, &k2, 1.0).map_err(num)?;

    let same = covariance_selftest(&noise, &e1, &e1, 1.0, 1.0, n, seed).map_err(num)?;
    checks.push(CheckLine::le(
        "noise.covariance_e1_e1_sigmas",
        (same.empirical - same.exact).abs() / same.std_error,
        tol::MC_SIGMAS,
    ));

    let cross = covariance_selftest(&noise, &e1, &e2, 0.5, 1.0, n, seed + 1).map_err(num)?;
    checks.push(CheckLine::le(
        "noise.covariance_e1_e2_sigmas",
        (cross.empirical - cross.exact).abs() / cross.std_error,
        tol::MC_SIGMAS,
    ));

    let streams = NoiseStreams::new(seed ^ 0xa5a5);
    let mut hc = vec![0.0; basis.n_modes()];
    let mut gc = vec![0.0; basis.n_modes()];
    streams.fill_standard_normal(0, 0, &mut hc);
    streams.fill_standard_normal(1, 0, &mut gc);
    let h = SpectralField::from_coeffs(basis, hc).map_err(num)?;
    let g = SpectralField::from_coeffs(basis, gc).map_err(num)?;
    let random = covariance_selftest(&noise, &h, &g, 0.3, 0.7, n, seed + 2).map_err(num)?;
    checks.push(CheckLine::le(
        "noise.covariance_random_fields_sigmas",
        (random.empirical - random.exact).abs() / random.std_error,
        tol::MC_SIGMAS,
    ));

    // One-step variance table approaches q_k Δt.
    let tables = StepTables::new(basis, &noise, 1e-6);
    let defect = (0..basis.n_modes())
        .map(|k| {
            let v = tables.noise_std[k] * tables.noise_std[k];
            (v / (noise.q(k) * 1e-6) - 1.0).abs()
        })
        .fold(0.0f64, f64::max);
    checks.push(CheckLine::le("noise.one_step_variance_defect", defect, 1e-3));

    Ok(checks)
}

fn malliavin_suite(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let mut checks = Vec::new();
    let basis = SineBasis::new(1, 8);
    let config = SolverConfig {
        basis,
        noise: NoiseModel::identity(basis).map_err(num)?,
        drift: DriftSpec::exact(DriftFunction::Cubic),
        eta: 0.0,
        horizon: 0.25,
        steps: 64,
        initial: InitialData::Zero,
        seed,
    };
    let x = [std::f64::consts::PI / 2.0];
    let evaluator = config.drift.evaluator().map_err(num)?;

    let traj = solve_path(&config, 0).map_err(num)?;
    let coeffs = CoefficientPath::from_trajectory(&traj, &evaluator, 0.0).map_err(num)?;
    let adj = malliavin_norm_adjoint_at_index(&traj, &config.noise, &coeffs, 64, &x).map_err(num)?;
    let fwd = malliavin_norm_forward(&traj, &config.noise, &coeffs, 64, &x).map_err(num)?;
    checks.push(CheckLine::le(
        "malliavin.adjoint_vs_forward_rel",
        (adj - fwd).abs() / adj.max(fwd),
        tol::ORACLE_EQUIVALENCE_REL,
    ));

    let fd = malliavin_fd_check(&config, 0, 64, &x, tol::FD_CHECK_BUMP).map_err(num)?;
    checks.push(CheckLine::le(
        "malliavin.fd_vs_variational_rel",
        fd.max_relative_error,
        tol::FD_CHECK_REL,
    ));

    let g = g_closed_form(&config.noise, &x, 0.25).map_err(num)?;
    let mut worst_ratio = 0.0f64;
    let mut min_norm = f64::INFINITY;
    let mut min_last = f64::INFINITY;
    for path in 0..20 {
        let traj = solve_path(&config, path).map_err(num)?;
        let coeffs = CoefficientPath::from_trajectory(&traj, &evaluator, 0.0).map_err(num)?;
        let norm =
            malliavin_norm_adjoint_at_index(&traj, &config.noise, &coeffs, 64, &x).map_err(num)?;
        worst_ratio = worst_ratio.max(norm / g);
        min_norm = min_norm.min(norm);
        min_last = min_last
            .min(last_slice_contribution(&traj, &config.noise, &coeffs, 64, &x).map_err(num)?);
    }
    checks.push(CheckLine::le(
        "malliavin.domination_ratio",
        worst_ratio,
        1.0 + tol::DOMINATION_SLACK,
    ));
    checks.push(CheckLine::ge("malliavin.min_norm", min_norm, 1e-12));
    checks.push(CheckLine::ge("malliavin.min_last_slice", min_last, 1e-12));

    // λ-uniformity of the empirical second moment at matched seeds.
    let mut means = Vec::new();
    for &lambda in &[1.0, 0.1, 0.01] {
        let cfg = SolverConfig {
            drift: DriftSpec {
                function: DriftFunction::Cubic,
                variant: DriftVariant::Yosida { lambda },
                newton: NewtonSettings::default(),
            },
            ..config.clone()
        };
        let eval = cfg.drift.evaluator().map_err(num)?;
        let mut norms = Vec::new();
        for path in 0..50 {
            let traj = solve_path(&cfg, path).map_err(num)?;
            let coeffs = CoefficientPath::from_trajectory(&traj, &eval, 0.0).map_err(num)?;
            norms.push(
                malliavin_norm_adjoint_at_index(&traj, &cfg.noise, &coeffs, 64, &x).map_err(num)?,
            );
        }
        means.push(sample_mean(&norms));
    }
    let spread = means.iter().cloned().fold(0.0f64, f64::max)
        / means.iter().cloned().fold(f64::INFINITY, f64::min)
        - 1.0;
    checks.push(CheckLine::le("malliavin.lambda_uniformity_spread", spread, 0.10));

    Ok(checks)
}

fn convergence_suite(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let mut checks = Vec::new();
    let basis = SineBasis::new(1, 16);
    let make = |variant: DriftVariant, steps: usize, seed: u64| SolverConfig {
        basis,
        noise: NoiseModel::identity(basis).expect("d=1"),
        drift: DriftSpec {
            function: DriftFunction::Cubic,
            variant,
            newton: NewtonSettings::default(),
        },
        eta: 0.0,
        horizon: 0.25,
        steps,
        initial: InitialData::Zero,
        seed,
    };
    let plan = TransformPlan::new(basis);
    let sup_distance = |a: &spdelab_core::solver::Trajectory,
                        b: &spdelab_core::solver::Trajectory|
     -> Result<f64, CliError> {
        let mut sup = 0.0f64;
        for n in 0..=a.n_steps() {
            let sa = synthesize_on_grid(&plan, &a.state_field(n)).map_err(num)?;
            let sb = synthesize_on_grid(&plan, &b.state_field(n)).map_err(num)?;
            for (x, y) in sa.iter().zip(&sb) {
                sup = sup.max((x - y).abs());
            }
        }
        Ok(sup)
    };

    let mut yosida_increase = f64::NEG_INFINITY;
    let mut mollified_increase = f64::NEG_INFINITY;
    for s in 0..3u64 {
        let run_seed = seed + s;
        let exact = solve_path(&make(DriftVariant::Exact, 64, run_seed), 0).map_err(num)?;
        let mut prev = f64::INFINITY;
        for &lambda in &[0.5, 0.1, 0.02] {
            let traj =
                solve_path(&make(DriftVariant::Yosida { lambda }, 64, run_seed), 0).map_err(num)?;
            let dist = sup_distance(&exact, &traj)?;
            yosida_increase = yosida_increase.max(dist - prev);
            prev = dist;
        }
        let yosida =
            solve_path(&make(DriftVariant::Yosida { lambda: 0.1 }, 64, run_seed), 0).map_err(num)?;
        let mut prev = f64::INFINITY;
        for &beta in &[0.3, 0.1, 0.03] {
            let traj = solve_path(
                &make(DriftVariant::Mollified { lambda: 0.1, beta }, 64, run_seed),
                0,
            )
            .map_err(num)?;
            let dist = sup_distance(&yosida, &traj)?;
            mollified_increase = mollified_increase.max(dist - prev);
            prev = dist;
        }
    }
    checks.push(CheckLine::le(
        "convergence.yosida_ladder_distance_increase",
        yosida_increase,
        0.0,
    ));
    checks.push(CheckLine::le(
        "convergence.mollified_ladder_distance_increase",
        mollified_increase,
        0.0,
    ));

    // Δt refinement under coupled noise, averaged over paths (a single
    // pathwise comparison can invert by chance).
    let fine_cfg = make(DriftVariant::Exact, 256, seed + 17);
    let x = [std::f64::consts::PI / 2.0];
    let mut gap_mid = 0.0;
    let mut gap_coarse = 0.0;
    for path in 0..10 {
        let fine = solve_path(&fine_cfg, path).map_err(num)?;
        let mid_inc = coarsen_increments(basis, fine.increments(), fine_cfg.dt());
        let mid =
            solve_path_with_increments(&make(DriftVariant::Exact, 128, seed + 17), mid_inc.clone())
                .map_err(num)?;
        let coarse_inc = coarsen_increments(basis, &mid_inc, fine_cfg.dt() * 2.0);
        let coarse =
            solve_path_with_increments(&make(DriftVariant::Exact, 64, seed + 17), coarse_inc)
                .map_err(num)?;
        let u_fine = fine.value_at(256, &x).map_err(num)?;
        gap_mid += (mid.value_at(128, &x).map_err(num)? - u_fine).abs();
        gap_coarse += (coarse.value_at(64, &x).map_err(num)? - u_fine).abs();
    }
    checks.push(CheckLine::le(
        "convergence.dt_refinement_mean_gap_ratio",
        gap_mid / gap_coarse,
        1.0,
    ));

    Ok(checks)
}
