//! Malliavin derivative norms along a stored trajectory.
//!
//! The linearization of the exponential-Euler step around the state u^n is
//! T_n = E + Φ A W_n S, where E and Φ are the diagonal step tables, S/A the
//! collocation transform pair, and W_n = diag(η - f'(u^n(x_j))) = -diag(F_n).
//! The Malliavin slice D_{τ_n,k} u(t_m, x) propagates the impulse B e_k from
//! time τ_n through T_{m-1}···T_n; its adjoint computation runs the transposed
//! recursion p(n) = T_nᵀ p(n+1) backward from p(m) = δ_x, where δ_x is the
//! spectral projection Σ_k e_k(x) e_k. Because A = w Sᵀ, the transpose is
//! T_nᵀ = E + A W_n S Φ and uses the same transform plumbing, so adjoint and
//! forward evaluations agree to rounding rather than to O(Δt).
//!
//! The H-norm is the Riemann sum ‖Du(t,x)‖² = Σ_{n<m} Δt Σ_k q_k p_k(n)²,
//! which for F = 0 is a strict underestimate of g(x,t); the comparison
//! mechanism k(t,s) ≤ G_{t-s} then keeps monotone drifts below g as well.

use thiserror::Error;

use crate::drift::DriftError;
use crate::solver::{DriftEvaluator, NoiseModel, SolverConfig, SolverError, StepTables, Trajectory};
use crate::spectral::{SineBasis, SpectralError, SpectralField, TransformPlan};

#[derive(Debug, Error)]
pub enum MalliavinError {
    #[error("time {t} is not on the trajectory grid")]
    TimeNotOnGrid { t: f64 },
    #[error("target index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("step index {tau} must precede target index {target}")]
    TauBeyondTarget { tau: usize, target: usize },
    #[error("mode {mode} outside truncation {max}")]
    ModeOutOfRange { mode: usize, max: usize },
    #[error("coefficient path has negative entry {value} at step {step}, point {point} (η-normalization required)")]
    NegativeCoefficient { step: usize, point: usize, value: f64 },
    #[error("evolution span requires s ≤ t, got s={s}, t={t}")]
    SpanOrder { s: usize, t: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Collocation samples of F(t_n, ·) = f'(u(t_n, ·)) - η for every step of a
/// trajectory, with the variant drift derivative configured by the evaluator.
#[derive(Debug, Clone)]
pub struct CoefficientPath {
    basis: SineBasis,
    dt: f64,
    /// f[n][j] = f'(u(t_n, x_j)) - η, for n = 0..M-1.
    values: Vec<Vec<f64>>,
}

impl CoefficientPath {
    pub fn from_trajectory(
        traj: &Trajectory,
        evaluator: &DriftEvaluator,
        eta: f64,
    ) -> Result<Self, MalliavinError> {
        let plan = TransformPlan::new(traj.basis());
        let n = traj.basis().n_modes();
        let mut values = Vec::with_capacity(traj.n_steps());
        let mut samples = vec![0.0; n];
        for step in 0..traj.n_steps() {
            plan.coeffs_to_samples(traj.state(step), &mut samples);
            let mut row = vec![0.0; n];
            for (j, s) in samples.iter().enumerate() {
                row[j] = evaluator.derivative(*s)? - eta;
            }
            values.push(row);
        }
        Ok(CoefficientPath {
            basis: traj.basis(),
            dt: traj.dt(),
            values,
        })
    }

    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    pub fn step_values(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter())
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

/// Shared plumbing for applying T_n and T_nᵀ.
struct LinearizedOps {
    plan: TransformPlan,
    tables: StepTables,
    samples: Vec<f64>,
    coeffs: Vec<f64>,
}

impl LinearizedOps {
    fn new(basis: SineBasis, noise: &NoiseModel, dt: f64) -> Self {
        let n = basis.n_modes();
        LinearizedOps {
            plan: TransformPlan::new(basis),
            tables: StepTables::new(basis, noise, dt),
            samples: vec![0.0; n],
            coeffs: vec![0.0; n],
        }
    }

    /// delta ← T_n delta, with f_row the samples of F(t_n, ·).
    fn forward_step(&mut self, delta: &mut [f64], f_row: &[f64]) {
        self.plan.coeffs_to_samples(delta, &mut self.samples);
        for (s, f) in self.samples.iter_mut().zip(f_row) {
            *s *= -f;
        }
        let (samples, coeffs) = (&self.samples, &mut self.coeffs);
        self.plan.samples_to_coeffs(samples, coeffs);
        for (k, d) in delta.iter_mut().enumerate() {
            *d = self.tables.decay[k] * *d + self.tables.phi[k] * self.coeffs[k];
        }
    }

    /// p ← T_nᵀ p = E p + A W_n S Φ p.
    fn adjoint_step(&mut self, p: &mut [f64], f_row: &[f64]) {
        for (k, c) in self.coeffs.iter_mut().enumerate() {
            *c = self.tables.phi[k] * p[k];
        }
        let (coeffs, samples) = (&self.coeffs, &mut self.samples);
        self.plan.coeffs_to_samples(coeffs, samples);
        for (s, f) in self.samples.iter_mut().zip(f_row) {
            *s *= -f;
        }
        let (samples, coeffs) = (&self.samples, &mut self.coeffs);
        self.plan.samples_to_coeffs(samples, coeffs);
        for (k, v) in p.iter_mut().enumerate() {
            *v = self.tables.decay[k] * *v + self.coeffs[k];
        }
    }
}

/// Coefficients of the truncated delta at x: (δ_x)_k = e_k(x).
pub fn truncated_delta(basis: SineBasis, x: &[f64]) -> Result<Vec<f64>, MalliavinError> {
    let n = basis.n_modes();
    let mut coeffs = vec![0.0; n];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        let k = basis.mode(flat);
        *c = basis.eval_basis(&k, x)?;
    }
    Ok(coeffs)
}

fn check_target(traj: &Trajectory, t_index: usize) -> Result<(), MalliavinError> {
    if t_index == 0 || t_index > traj.n_steps() {
        return Err(MalliavinError::IndexOutOfRange {
            index: t_index,
            max: traj.n_steps(),
        });
    }
    Ok(())
}

/// Backward adjoint states p(n) = T_nᵀ···T_{m-1}ᵀ δ_x for n = 0..m-1,
/// returned in forward order. p(m) = δ_x is not stored.
pub fn adjoint_states(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    t_index: usize,
    x: &[f64],
) -> Result<Vec<Vec<f64>>, MalliavinError> {
    check_target(traj, t_index)?;
    let mut ops = LinearizedOps::new(traj.basis(), noise, traj.dt());
    let mut p = truncated_delta(traj.basis(), x)?;
    let mut states = vec![Vec::new(); t_index];
    for n in (0..t_index).rev() {
        ops.adjoint_step(&mut p, coeffs.step_values(n));
        states[n] = p.clone();
    }
    Ok(states)
}

/// ‖Du(t,x)‖²_H = Σ_{n<m} Δt Σ_k q_k p_k(τ_n)², by the adjoint recursion.
pub fn malliavin_norm_adjoint(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    t: f64,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    let t_index = traj
        .time_index(t)
        .ok_or(MalliavinError::TimeNotOnGrid { t })?;
    malliavin_norm_adjoint_at_index(traj, noise, coeffs, t_index, x)
}

pub fn malliavin_norm_adjoint_at_index(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    let mut ops = LinearizedOps::new(traj.basis(), noise, traj.dt());
    let mut p = truncated_delta(traj.basis(), x)?;
    let mut acc = 0.0;
    for n in (0..t_index).rev() {
        ops.adjoint_step(&mut p, coeffs.step_values(n));
        let slice: f64 = p
            .iter()
            .enumerate()
            .map(|(k, v)| noise.q(k) * v * v)
            .sum();
        acc += traj.dt() * slice;
    }
    Ok(acc)
}

/// Contribution of the last time slice alone, Δt Σ_k q_k p_k(τ_{m-1})²: the
/// computable core of the almost-sure positivity of ‖Du(t,x)‖_H.
pub fn last_slice_contribution(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    let mut ops = LinearizedOps::new(traj.basis(), noise, traj.dt());
    let mut p = truncated_delta(traj.basis(), x)?;
    ops.adjoint_step(&mut p, coeffs.step_values(t_index - 1));
    Ok(traj.dt()
        * p.iter()
            .enumerate()
            .map(|(k, v)| noise.q(k) * v * v)
            .sum::<f64>())
}

/// Forward Malliavin slice D_{τ,k} u(t_m, ·): the impulse B e_k placed at
/// time τ_n and propagated by T_{m-1}···T_n. Oracle for the adjoint route.
pub fn malliavin_derivative_forward(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    tau_index: usize,
    mode: usize,
    t_index: usize,
) -> Result<SpectralField, MalliavinError> {
    check_target(traj, t_index)?;
    if tau_index >= t_index {
        return Err(MalliavinError::TauBeyondTarget {
            tau: tau_index,
            target: t_index,
        });
    }
    let basis = traj.basis();
    if mode >= basis.n_modes() {
        return Err(MalliavinError::ModeOutOfRange {
            mode,
            max: basis.n_modes(),
        });
    }
    let mut ops = LinearizedOps::new(basis, noise, traj.dt());
    let mut delta = vec![0.0; basis.n_modes()];
    delta[mode] = noise.b(mode);
    for n in tau_index..t_index {
        ops.forward_step(&mut delta, coeffs.step_values(n));
    }
    Ok(SpectralField::from_coeffs(basis, delta)?)
}

/// ‖Du(t,x)‖²_H assembled from forward slices: Σ_{n,k} Δt (D_{τ_n,k}u(t,x))².
pub fn malliavin_norm_forward(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    let basis = traj.basis();
    let mut acc = 0.0;
    for tau in 0..t_index {
        for mode in 0..basis.n_modes() {
            let field = malliavin_derivative_forward(traj, noise, coeffs, tau, mode, t_index)?;
            let v = field.synthesize(x)?;
            acc += traj.dt() * v * v;
        }
    }
    Ok(acc)
}

/// Sensitivity ∂u(t_m, x)/∂ξ^n_k of the discrete solution map to one stored
/// increment: the unit impulse enters u^{n+1} and propagates through
/// T_{n+1}···T_{m-1}. This is the object the finite-difference check probes.
pub fn increment_sensitivity(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    step: usize,
    mode: usize,
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    if step >= t_index {
        return Err(MalliavinError::TauBeyondTarget {
            tau: step,
            target: t_index,
        });
    }
    let basis = traj.basis();
    let mut ops = LinearizedOps::new(basis, noise, traj.dt());
    let mut delta = vec![0.0; basis.n_modes()];
    delta[mode] = 1.0;
    for n in step + 1..t_index {
        ops.forward_step(&mut delta, coeffs.step_values(n));
    }
    Ok(SpectralField::from_coeffs(basis, delta)?.synthesize(x)?)
}

#[derive(Debug, Clone)]
pub struct FdCheckReport {
    pub bump: f64,
    pub max_relative_error: f64,
    pub pairs_checked: usize,
}

/// Central finite differences of u(t,x) in the stored increments versus the
/// forward variational sensitivity, over a deterministic sample of
/// (step, mode) pairs. Relative errors are measured against the scale of the
/// largest sampled sensitivity, so unresolvably damped modes do not dominate.
pub fn malliavin_fd_check(
    config: &SolverConfig,
    path_index: u64,
    t_index: usize,
    x: &[f64],
    bump: f64,
) -> Result<FdCheckReport, MalliavinError> {
    let traj = crate::solver::solve_path(config, path_index)?;
    check_target(&traj, t_index)?;
    let evaluator = config.drift.evaluator()?;
    let coeffs = CoefficientPath::from_trajectory(&traj, &evaluator, config.eta)?;
    let basis = config.basis;
    let n_modes = basis.n_modes();

    let step_picks: Vec<usize> = [t_index / 4, t_index / 2, (3 * t_index) / 4, t_index - 1]
        .iter()
        .copied()
        .filter(|&s| s < t_index)
        .collect();
    let mode_picks: Vec<usize> = [0, 1, n_modes / 2, n_modes - 1]
        .iter()
        .copied()
        .filter(|&m| m < n_modes)
        .collect();

    let mut entries = Vec::new();
    let mut scale = 0.0f64;
    for &s in &step_picks {
        for &m in &mode_picks {
            let sens = increment_sensitivity(&traj, &config.noise, &coeffs, s, m, t_index, x)?;
            scale = scale.max(sens.abs());
            entries.push((s, m, sens));
        }
    }

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (s, m, sens) in entries {
        let mut plus = traj.increments().to_vec();
        plus[s][m] += bump;
        let mut minus = traj.increments().to_vec();
        minus[s][m] -= bump;
        let up = crate::solver::solve_path_with_increments(config, plus)?;
        let down = crate::solver::solve_path_with_increments(config, minus)?;
        let fd = (up.value_at(t_index, x)? - down.value_at(t_index, x)?) / (2.0 * bump);
        let rel = (fd - sens).abs() / scale.max(1e-300);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(FdCheckReport {
        bump,
        max_relative_error: max_rel,
        pairs_checked: checked,
    })
}

/// The discrete evolution operator U(t,s) = T_{t-1}···T_s in spectral
/// coordinates, for a frozen coefficient path.
#[derive(Debug, Clone)]
pub struct EvolutionKernelMatrix {
    basis: SineBasis,
    t_index: usize,
    s_index: usize,
    dt: f64,
    /// Column-major n×n: column j is U e_j.
    data: Vec<f64>,
}

/// Builds U(t_index, s_index). Requires the η-normalized setting F ≥ 0.
pub fn evolution_kernel(
    coeffs: &CoefficientPath,
    noise: &NoiseModel,
    t_index: usize,
    s_index: usize,
) -> Result<EvolutionKernelMatrix, MalliavinError> {
    if s_index > t_index {
        return Err(MalliavinError::SpanOrder {
            s: s_index,
            t: t_index,
        });
    }
    if t_index > coeffs.n_steps() {
        return Err(MalliavinError::IndexOutOfRange {
            index: t_index,
            max: coeffs.n_steps(),
        });
    }
    for n in s_index..t_index {
        for (point, &v) in coeffs.step_values(n).iter().enumerate() {
            if v < 0.0 {
                return Err(MalliavinError::NegativeCoefficient {
                    step: n,
                    point,
                    value: v,
                });
            }
        }
    }
    let basis = coeffs.basis();
    let n = basis.n_modes();
    let mut ops = LinearizedOps::new(basis, noise, coeffs.dt());
    let mut data = vec![0.0; n * n];
    let mut column = vec![0.0; n];
    for j in 0..n {
        column.iter_mut().for_each(|c| *c = 0.0);
        column[j] = 1.0;
        for step in s_index..t_index {
            ops.forward_step(&mut column, coeffs.step_values(step));
        }
        data[j * n..(j + 1) * n].copy_from_slice(&column);
    }
    Ok(EvolutionKernelMatrix {
        basis,
        t_index,
        s_index,
        dt: coeffs.dt(),
        data,
    })
}

impl EvolutionKernelMatrix {
    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn span(&self) -> (usize, usize) {
        (self.s_index, self.t_index)
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.basis.n_modes() + row]
    }

    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.basis.n_modes();
        let mut out = vec![0.0; n];
        for (j, &c) in coeffs.iter().enumerate() {
            for (o, u) in out.iter_mut().zip(&self.data[j * n..(j + 1) * n]) {
                *o += u * c;
            }
        }
        out
    }

    /// Dense synthesis matrix S[j,k] = e_k(x_j) on the collocation grid.
    fn synthesis_matrix(&self) -> Vec<f64> {
        let n = self.basis.n_modes();
        let mut s = vec![0.0; n * n];
        for j in 0..n {
            let x = self.basis.grid_point(j);
            for k in 0..n {
                let idx = self.basis.mode(k);
                s[j * n + k] = self.basis.eval_basis(&idx, &x).expect("grid point inside");
            }
        }
        s
    }

    /// Largest negative excursion when U acts on nonnegative grid functions:
    /// max(0, -min entry of S U A) with A = w Sᵀ.
    pub fn positivity_defect(&self) -> f64 {
        let n = self.basis.n_modes();
        let s = self.synthesis_matrix();
        let w = TransformPlan::new(self.basis).quadrature_weight();
        // P = S U (w Sᵀ)
        let mut min_entry = f64::INFINITY;
        for j in 0..n {
            // column j of A is w * (row j of S)ᵀ
            let mut ucol = vec![0.0; n];
            for l in 0..n {
                let a = w * s[j * n + l];
                if a != 0.0 {
                    for (u, d) in ucol.iter_mut().zip(&self.data[l * n..(l + 1) * n]) {
                        *u += d * a;
                    }
                }
            }
            for i in 0..n {
                let mut p = 0.0;
                for k in 0..n {
                    p += s[i * n + k] * ucol[k];
                }
                min_entry = min_entry.min(p);
            }
        }
        (-min_entry).max(0.0)
    }

    /// Largest excess of the evolution kernel over the heat kernel on the
    /// collocation grid: max over (i,j) of k_U(x_i,x_j) - G_{t-s}(x_i,x_j).
    pub fn comparison_defect(&self) -> f64 {
        let n = self.basis.n_modes();
        let s = self.synthesis_matrix();
        let span = (self.t_index - self.s_index) as f64 * self.dt;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let mut ku = 0.0;
                let mut kg = 0.0;
                for a in 0..n {
                    let sa = s[i * n + a];
                    if sa == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        ku += sa * self.data[b * n + a] * s[j * n + b];
                    }
                    kg += sa * (-self.basis.eigenvalue(a) * span).exp() * s[j * n + a];
                }
                worst = worst.max(ku - kg);
            }
        }
        worst.max(0.0)
    }

    /// sup |k_U| over the collocation grid (finite ultracontractivity proxy).
    pub fn kernel_sup(&self) -> f64 {
        let n = self.basis.n_modes();
        let s = self.synthesis_matrix();
        let mut sup = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut ku = 0.0;
                for a in 0..n {
                    let sa = s[i * n + a];
                    if sa == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        ku += sa * self.data[b * n + a] * s[j * n + b];
                    }
                }
                sup = sup.max(ku.abs());
            }
        }
        sup
    }
}

/// ‖D²u(t,x)‖²_{H⊗H} for the stored path, by pairing all first-variational
/// slices through the adjoint states:
/// D²_{(n,k),(n',k')} = Σ_{s,j} ρ_{s,j} a^{(n,k)}_{s,j} a^{(n',k')}_{s,j}
/// with ρ_{s,j} = -w [SΦp(s+1)]_j f''(u(t_s,x_j)), so the norm is the squared
/// Frobenius norm of X diag(ρ) Xᵀ scaled by Δt².
pub fn second_malliavin_norm(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    evaluator: &DriftEvaluator,
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    let basis = traj.basis();
    let n_modes = basis.n_modes();
    let m = t_index;
    let dt = traj.dt();

    // Adjoint states p(n), n = 0..m-1, plus p(m) = δ_x.
    let mut p_states = adjoint_states(traj, noise, coeffs, m, x)?;
    p_states.push(truncated_delta(basis, x)?);

    // ρ over columns (s, j), s = 0..m-1.
    let plan = TransformPlan::new(basis);
    let tables = StepTables::new(basis, noise, dt);
    let w_quad = plan.quadrature_weight();
    let mut rho = vec![0.0; m * n_modes];
    let mut phi_p = vec![0.0; n_modes];
    let mut phi_p_samples = vec![0.0; n_modes];
    let mut u_samples = vec![0.0; n_modes];
    for s in 0..m {
        for k in 0..n_modes {
            phi_p[k] = tables.phi[k] * p_states[s + 1][k];
        }
        plan.coeffs_to_samples(&phi_p, &mut phi_p_samples);
        plan.coeffs_to_samples(traj.state(s), &mut u_samples);
        for j in 0..n_modes {
            let f2 = evaluator.second(u_samples[j])?;
            rho[s * n_modes + j] = -w_quad * phi_p_samples[j] * f2;
        }
    }

    // X rows: impulse (n,k) → samples of the first variation at every step.
    let rows = m * n_modes;
    let cols = m * n_modes;
    let mut x_mat = vec![0.0; rows * cols];
    let mut ops = LinearizedOps::new(basis, noise, dt);
    let mut delta = vec![0.0; n_modes];
    let mut delta_samples = vec![0.0; n_modes];
    for n in 0..m {
        for k in 0..n_modes {
            let row = n * n_modes + k;
            delta.iter_mut().for_each(|d| *d = 0.0);
            delta[k] = noise.b(k);
            for s in n..m {
                plan.coeffs_to_samples(&delta, &mut delta_samples);
                let base = row * cols + s * n_modes;
                x_mat[base..base + n_modes].copy_from_slice(&delta_samples);
                if s + 1 < m {
                    ops.forward_step(&mut delta, coeffs.step_values(s));
                } else {
                    break;
                }
            }
        }
    }

    // G = X diag(ρ) Xᵀ; ‖D²‖² = Δt² ‖G‖_F². Exploit symmetry of G.
    let mut frob_sq = 0.0;
    let mut weighted = vec![0.0; cols];
    for r1 in 0..rows {
        let x1 = &x_mat[r1 * cols..(r1 + 1) * cols];
        for (c, wv) in weighted.iter_mut().enumerate() {
            *wv = rho[c] * x1[c];
        }
        for r2 in r1..rows {
            let x2 = &x_mat[r2 * cols..(r2 + 1) * cols];
            let g: f64 = weighted.iter().zip(x2).map(|(a, b)| a * b).sum();
            frob_sq += if r1 == r2 { g * g } else { 2.0 * g * g };
        }
    }
    Ok(dt * dt * frob_sq)
}

/// Direct second variation for one pair of increment bumps: propagates the
/// pair of first variations and the second-variation source together.
/// Impulses are unit vectors in the increments (convention matching
/// `increment_sensitivity`); independent oracle for the Gram computation and
/// for finite differences.
#[allow(clippy::too_many_arguments)]
pub fn second_derivative_wrt_increments(
    traj: &Trajectory,
    noise: &NoiseModel,
    coeffs: &CoefficientPath,
    evaluator: &DriftEvaluator,
    first: (usize, usize),
    second: (usize, usize),
    t_index: usize,
    x: &[f64],
) -> Result<f64, MalliavinError> {
    check_target(traj, t_index)?;
    let basis = traj.basis();
    let n_modes = basis.n_modes();
    let plan = TransformPlan::new(basis);
    let tables = StepTables::new(basis, noise, traj.dt());
    let mut ops = LinearizedOps::new(basis, noise, traj.dt());

    let mut d1 = vec![0.0; n_modes];
    let mut d2 = vec![0.0; n_modes];
    let mut psi = vec![0.0; n_modes];
    let mut a1 = vec![0.0; n_modes];
    let mut a2 = vec![0.0; n_modes];
    let mut u_samples = vec![0.0; n_modes];
    let mut source = vec![0.0; n_modes];
    let mut source_coeffs = vec![0.0; n_modes];

    let start = first.0.min(second.0) + 1;
    for s in start..=t_index {
        // Inject impulses entering u^s.
        if s == first.0 + 1 {
            d1[first.1] += 1.0;
        }
        if s == second.0 + 1 {
            d2[second.1] += 1.0;
        }
        if s == t_index {
            break;
        }
        // Source from linearizing step s around u^s.
        plan.coeffs_to_samples(&d1, &mut a1);
        plan.coeffs_to_samples(&d2, &mut a2);
        plan.coeffs_to_samples(traj.state(s), &mut u_samples);
        for j in 0..n_modes {
            source[j] = -evaluator.second(u_samples[j])? * a1[j] * a2[j];
        }
        plan.samples_to_coeffs(&source, &mut source_coeffs);
        ops.forward_step(&mut psi, coeffs.step_values(s));
        for k in 0..n_modes {
            psi[k] += tables.phi[k] * source_coeffs[k];
        }
        ops.forward_step(&mut d1, coeffs.step_values(s));
        ops.forward_step(&mut d2, coeffs.step_values(s));
    }
    Ok(SpectralField::from_coeffs(basis, psi)?.synthesize(x)?)
}
