//! Time integration of the truncated mild equation.
//!
//! The scheme is exponential Euler on the spectral coefficients: the linear
//! heat flow is exact, the nonlinearity is evaluated pointwise on the
//! collocation grid and re-projected, and the stochastic convolution increment
//! is sampled with its exact per-mode one-step variance
//! v_k(Δt) = q_k (1 - e^{-2|k|²Δt})/(2|k|²). Noise draws are counter-addressed
//! by (path, step, mode), so paths replay bit-identically under any schedule.

use std::io::{Read, Write};

use thiserror::Error;

use crate::drift::{DriftError, DriftFunction, NewtonSettings, RegularizedDrift};
use crate::rng::{derive_seed, NoiseStreams};
use crate::spectral::{SineBasis, SpectralError, SpectralField, TransformPlan};

/// Stream tag separating path noise from other consumers of the master seed.
const PATH_NOISE_TAG: u64 = 0x70617468;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error("state blew up at step {step}, mode {mode}")]
    BlowUp { step: usize, mode: usize },
    #[error("drift evaluation produced a non-finite value at step {step}, grid point {point}")]
    DriftEval { step: usize, point: usize },
    #[error("identity covariance has finite heat trace only in d=1, got d={d}")]
    IdentityNoiseDimension { d: usize },
    #[error("noise eigenvalue list has length {got}, basis has {expected} modes")]
    NoiseLength { got: usize, expected: usize },
    #[error("noise eigenvalue q[{index}] = {value} is negative")]
    NegativeNoiseEigenvalue { index: usize, value: f64 },
    #[error("lower-bound exponent must lie in (0,2), got {gamma}")]
    GammaOutOfRange { gamma: f64 },
    #[error("lower-bound time grid entry {t} is outside (0,1]")]
    TimeGridOutOfRange { t: f64 },
    #[error("covariance self-test needs at least 1000 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("invalid solver configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("trajectory cache: {0}")]
    CacheFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Diagonal covariance Q on the sine basis; B = Q^{1/2}.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    basis: SineBasis,
    q: Vec<f64>,
    kind: NoiseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Identity,
    Smoothed,
    Custom,
}

impl NoiseModel {
    /// Cylindrical noise q_k = 1. Only admissible in d = 1, where the heat
    /// trace Σ q_k |k|^{-2} stays summable.
    pub fn identity(basis: SineBasis) -> Result<Self, SolverError> {
        if basis.dim() != 1 {
            return Err(SolverError::IdentityNoiseDimension { d: basis.dim() });
        }
        Ok(NoiseModel {
            basis,
            q: vec![1.0; basis.n_modes()],
            kind: NoiseKind::Identity,
        })
    }

    /// B = (I-Δ)^{-m_Q}, hence q_k = (1+|k|²)^{-2 m_Q}.
    pub fn smoothed(basis: SineBasis, m_q: f64) -> Self {
        let q = (0..basis.n_modes())
            .map(|flat| (1.0 + basis.eigenvalue(flat)).powf(-2.0 * m_q))
            .collect();
        NoiseModel {
            basis,
            q,
            kind: NoiseKind::Smoothed,
        }
    }

    pub fn custom(basis: SineBasis, q: Vec<f64>) -> Result<Self, SolverError> {
        if q.len() != basis.n_modes() {
            return Err(SolverError::NoiseLength {
                got: q.len(),
                expected: basis.n_modes(),
            });
        }
        if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(SolverError::NegativeNoiseEigenvalue { index, value });
        }
        Ok(NoiseModel {
            basis,
            q,
            kind: NoiseKind::Custom,
        })
    }

    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.q
    }

    pub fn q(&self, flat: usize) -> f64 {
        self.q[flat]
    }

    pub fn b(&self, flat: usize) -> f64 {
        self.q[flat].sqrt()
    }

    /// Σ q_k |k|^{-2}: the truncated trace controlling the stochastic
    /// convolution (finite by construction, reported as a diagnostic).
    pub fn heat_trace(&self) -> f64 {
        self.q
            .iter()
            .enumerate()
            .map(|(flat, q)| q / self.basis.eigenvalue(flat))
            .sum()
    }
}

/// Which drift enters the equation: f itself, f_λ, or f_{λβ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftVariant {
    Exact,
    Yosida { lambda: f64 },
    Mollified { lambda: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub function: DriftFunction,
    pub variant: DriftVariant,
    pub newton: NewtonSettings,
}

impl DriftSpec {
    pub fn exact(function: DriftFunction) -> Self {
        DriftSpec {
            function,
            variant: DriftVariant::Exact,
            newton: NewtonSettings::default(),
        }
    }

    pub fn evaluator(&self) -> Result<DriftEvaluator, DriftError> {
        let inner = match self.variant {
            DriftVariant::Exact => EvalInner::Exact(self.function.clone()),
            DriftVariant::Yosida { lambda } => EvalInner::Yosida(RegularizedDrift::new(
                self.function.clone(),
                lambda,
                self.newton,
            )?),
            DriftVariant::Mollified { lambda, beta } => EvalInner::Mollified(
                RegularizedDrift::new(self.function.clone(), lambda, self.newton)?
                    .with_mollifier(beta)?,
            ),
        };
        Ok(DriftEvaluator { inner })
    }
}

/// Pointwise drift evaluation for the configured variant, with first and
/// second derivatives for the variational machinery.
#[derive(Debug, Clone)]
pub struct DriftEvaluator {
    inner: EvalInner,
}

#[derive(Debug, Clone)]
enum EvalInner {
    Exact(DriftFunction),
    Yosida(RegularizedDrift),
    Mollified(RegularizedDrift),
}

impl DriftEvaluator {
    pub fn value(&self, x: f64) -> Result<f64, DriftError> {
        match &self.inner {
            EvalInner::Exact(f) => Ok(f.eval(x)),
            EvalInner::Yosida(r) => r.yosida(x),
            EvalInner::Mollified(r) => r.mollified(0, x),
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64, DriftError> {
        match &self.inner {
            EvalInner::Exact(f) => Ok(f.derivative(1, x)),
            EvalInner::Yosida(r) => r.yosida_d1(x),
            EvalInner::Mollified(r) => r.mollified(1, x),
        }
    }

    pub fn second(&self, x: f64) -> Result<f64, DriftError> {
        match &self.inner {
            EvalInner::Exact(f) => Ok(f.derivative(2, x)),
            EvalInner::Yosida(r) => r.yosida_dn(2, x),
            EvalInner::Mollified(r) => r.mollified(2, x),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(&self.inner, EvalInner::Exact(f) if f.is_identically_zero())
    }
}

/// Continuous closed-form initial data, sampled on the collocation grid and
/// projected onto the truncated basis.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Zero,
    /// Finite sum Σ amplitude·e_k.
    Modes(Vec<(Vec<u32>, f64)>),
    /// amplitude · ∏_i x_i (π - x_i), vanishing on the boundary.
    Parabola { amplitude: f64 },
}

impl InitialData {
    fn eval(&self, basis: SineBasis, x: &[f64]) -> Result<f64, SolverError> {
        match self {
            InitialData::Zero => Ok(0.0),
            InitialData::Modes(terms) => {
                let mut acc = 0.0;
                for (comps, amp) in terms {
                    let k = crate::spectral::MultiIndex::new(comps.clone()).ok_or(
                        SolverError::InvalidConfig {
                            reason: format!("invalid initial mode {comps:?}"),
                        },
                    )?;
                    acc += amp * basis.eval_basis(&k, x)?;
                }
                Ok(acc)
            }
            InitialData::Parabola { amplitude } => {
                let mut prod = *amplitude;
                for &xi in x {
                    prod *= xi * (std::f64::consts::PI - xi);
                }
                Ok(prod)
            }
        }
    }

    pub fn project(&self, basis: SineBasis, plan: &TransformPlan) -> Result<SpectralField, SolverError> {
        let n = basis.n_modes();
        let mut samples = vec![0.0; n];
        for (flat, s) in samples.iter_mut().enumerate() {
            *s = self.eval(basis, &basis.grid_point(flat))?;
        }
        Ok(crate::spectral::analyze_grid(plan, &samples)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub basis: SineBasis,
    pub noise: NoiseModel,
    pub drift: DriftSpec,
    pub eta: f64,
    pub horizon: f64,
    pub steps: usize,
    pub initial: InitialData,
    pub seed: u64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.horizon > 0.0) {
            return Err(SolverError::InvalidConfig {
                reason: format!("horizon must be positive, got {}", self.horizon),
            });
        }
        if self.steps == 0 {
            return Err(SolverError::InvalidConfig {
                reason: "step count must be at least 1".into(),
            });
        }
        if !(self.eta >= 0.0) {
            return Err(SolverError::InvalidConfig {
                reason: format!("eta must be nonnegative, got {}", self.eta),
            });
        }
        if self.noise.basis() != self.basis {
            return Err(SolverError::InvalidConfig {
                reason: "noise model truncation does not match solver basis".into(),
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Per-mode one-step tables of the exponential-Euler scheme.
#[derive(Debug, Clone)]
pub struct StepTables {
    /// e^{-|k|² Δt}
    pub decay: Vec<f64>,
    /// φ_k(Δt) = (1 - e^{-|k|² Δt}) / |k|²
    pub phi: Vec<f64>,
    /// √(v_k(Δt)), v_k = q_k (1 - e^{-2|k|²Δt}) / (2|k|²)
    pub noise_std: Vec<f64>,
}

impl StepTables {
    pub fn new(basis: SineBasis, noise: &NoiseModel, dt: f64) -> Self {
        let n = basis.n_modes();
        let mut decay = vec![0.0; n];
        let mut phi = vec![0.0; n];
        let mut noise_std = vec![0.0; n];
        for flat in 0..n {
            let lambda = basis.eigenvalue(flat);
            let e = (-lambda * dt).exp();
            decay[flat] = e;
            phi[flat] = (1.0 - e) / lambda;
            noise_std[flat] = (noise.q(flat) * (1.0 - e * e) / (2.0 * lambda)).sqrt();
        }
        StepTables {
            decay,
            phi,
            noise_std,
        }
    }
}

/// One exponential-Euler step. `increments` are the already-scaled stochastic
/// convolution increments ξ_k ~ N(0, v_k(Δt)); `step_index` only labels errors.
pub fn step(
    state: &SpectralField,
    drift: &DriftEvaluator,
    eta: f64,
    noise: &NoiseModel,
    dt: f64,
    increments: &[f64],
) -> Result<SpectralField, SolverError> {
    let basis = state.basis();
    let plan = TransformPlan::new(basis);
    let tables = StepTables::new(basis, noise, dt);
    let mut ctx = StepContext::new(basis, plan, tables, eta);
    let mut out = state.coeffs().to_vec();
    ctx.advance(&mut out, drift, increments, 0)?;
    Ok(SpectralField::from_coeffs(basis, out)?)
}

struct StepContext {
    plan: TransformPlan,
    tables: StepTables,
    eta: f64,
    samples: Vec<f64>,
    reaction: Vec<f64>,
}

impl StepContext {
    fn new(basis: SineBasis, plan: TransformPlan, tables: StepTables, eta: f64) -> Self {
        let n = basis.n_modes();
        StepContext {
            plan,
            tables,
            eta,
            samples: vec![0.0; n],
            reaction: vec![0.0; n],
        }
    }

    fn advance(
        &mut self,
        state: &mut [f64],
        drift: &DriftEvaluator,
        increments: &[f64],
        step_index: usize,
    ) -> Result<(), SolverError> {
        let n = state.len();
        if drift.is_identically_zero() {
            // ηu - f(u) = ηu is diagonal; skip the collocation transforms.
            for k in 0..n {
                state[k] = self.tables.decay[k] * state[k]
                    + self.tables.phi[k] * self.eta * state[k]
                    + increments[k];
            }
        } else {
            self.plan.coeffs_to_samples(state, &mut self.samples);
            for (point, s) in self.samples.iter().enumerate() {
                let r = self.eta * s - drift.value(*s)?;
                if !r.is_finite() {
                    return Err(SolverError::DriftEval {
                        step: step_index,
                        point,
                    });
                }
                self.reaction[point] = r;
            }
            let (reaction, samples) = (&mut self.reaction, &mut self.samples);
            std::mem::swap(reaction, samples);
            self.plan.samples_to_coeffs(&self.samples, &mut self.reaction);
            for k in 0..n {
                state[k] = self.tables.decay[k] * state[k]
                    + self.tables.phi[k] * self.reaction[k]
                    + increments[k];
            }
        }
        for (mode, v) in state.iter().enumerate() {
            if !v.is_finite() {
                return Err(SolverError::BlowUp {
                    step: step_index,
                    mode,
                });
            }
        }
        Ok(())
    }
}

/// A time-discretized solution path with the noise increments it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    basis: SineBasis,
    dt: f64,
    /// states[n] are the coefficients at t_n = nΔt, n = 0..=M.
    states: Vec<Vec<f64>>,
    /// increments[n] are the scaled ξ_k consumed by step n, n = 0..M.
    increments: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|n| n as f64 * self.dt).collect()
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    pub fn state_field(&self, n: usize) -> SpectralField {
        SpectralField::from_coeffs(self.basis, self.states[n].clone())
            .expect("stored states are finite")
    }

    /// u(t_n, x).
    pub fn value_at(&self, n: usize, x: &[f64]) -> Result<f64, SpectralError> {
        self.state_field(n).synthesize(x)
    }

    /// Index of the grid time matching `t`, if any.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let raw = t / self.dt;
        let idx = raw.round() as isize;
        if idx < 0 || idx as usize > self.n_steps() {
            return None;
        }
        if (raw - idx as f64).abs() > 1e-9 * (1.0 + raw.abs()) {
            return None;
        }
        Some(idx as usize)
    }

    /// Columnar export: one row per grid time, one column per mode.
    pub fn write_columnar<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "time")?;
        for flat in 0..self.basis.n_modes() {
            let label: Vec<String> = self
                .basis
                .mode(flat)
                .components()
                .iter()
                .map(|k| k.to_string())
                .collect();
            write!(w, "\tu_{}", label.join("_"))?;
        }
        writeln!(w)?;
        for (n, state) in self.states.iter().enumerate() {
            write!(w, "{}", n as f64 * self.dt)?;
            for c in state {
                write!(w, "\t{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Point-evaluation series at the probe points.
    pub fn write_probe_series<W: Write>(&self, probes: &[Vec<f64>], mut w: W) -> Result<(), SolverError> {
        write!(w, "time")?;
        for x in probes {
            let label: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            write!(w, "\tu({})", label.join(","))?;
        }
        writeln!(w)?;
        for n in 0..=self.n_steps() {
            write!(w, "{}", n as f64 * self.dt)?;
            let field = self.state_field(n);
            for x in probes {
                write!(w, "\t{}", field.synthesize(x)?)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.basis.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.basis.k_per_axis() as u32).to_le_bytes())?;
        w.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for state in &self.states {
            for c in state {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for inc in &self.increments {
            for c in inc {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self, SolverError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(SolverError::CacheFormat("bad magic header".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(SolverError::CacheFormat(format!(
                "unsupported version {version}, expected {CACHE_VERSION}"
            )));
        }
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        if d == 0 || k == 0 {
            return Err(SolverError::CacheFormat("zero dimension or truncation".into()));
        }
        let m = read_u64(&mut r)? as usize;
        let dt = read_f64(&mut r)?;
        let basis = SineBasis::new(d, k);
        let n = basis.n_modes();
        let mut states = Vec::with_capacity(m + 1);
        for _ in 0..=m {
            states.push(read_f64_vec(&mut r, n)?);
        }
        let mut increments = Vec::with_capacity(m);
        for _ in 0..m {
            increments.push(read_f64_vec(&mut r, n)?);
        }
        Ok(Trajectory {
            basis,
            dt,
            states,
            increments,
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"SPDETRJ1";
const CACHE_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    for x in v.iter_mut() {
        *x = read_f64(r)?;
    }
    Ok(v)
}

/// Integrates one path. Noise is addressed by (seed, path_index, step, mode)
/// with the mode index in the low counter bits, so the result is a pure
/// function of those values. In d = 1 the flat mode order is the mode number
/// itself, so runs at different truncations K share the draws of their common
/// modes and K-refinement studies are coupled to the same driving noise.
pub fn solve_path(config: &SolverConfig, path_index: u64) -> Result<Trajectory, SolverError> {
    config.validate()?;
    let streams = NoiseStreams::new(derive_seed(config.seed, PATH_NOISE_TAG));
    let n = config.basis.n_modes();
    assert!(n < (1usize << 32), "mode count exceeds the counter layout");
    let tables = StepTables::new(config.basis, &config.noise, config.dt());
    let mut raw = vec![0.0; n];
    let mut increments = Vec::with_capacity(config.steps);
    for step_idx in 0..config.steps {
        let counter = (step_idx as u128) << 32;
        streams.fill_standard_normal(path_index, counter, &mut raw);
        increments.push(
            raw.iter()
                .zip(&tables.noise_std)
                .map(|(z, s)| z * s)
                .collect(),
        );
    }
    solve_path_with_increments(config, increments)
}

/// Integrates one path with externally supplied increments (replay, bump
/// tests, Δt-coupling). `increments[n][k]` is the scaled ξ consumed at step n.
pub fn solve_path_with_increments(
    config: &SolverConfig,
    increments: Vec<Vec<f64>>,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    if increments.len() != config.steps || increments.iter().any(|v| v.len() != config.basis.n_modes())
    {
        return Err(SolverError::InvalidConfig {
            reason: "increment array dimensions do not match steps x modes".into(),
        });
    }
    let plan = TransformPlan::new(config.basis);
    let tables = StepTables::new(config.basis, &config.noise, config.dt());
    let evaluator = config.drift.evaluator()?;
    let u0 = config.initial.project(config.basis, &plan)?;

    let mut ctx = StepContext::new(config.basis, plan, tables, config.eta);
    let mut state = u0.coeffs().to_vec();
    let mut states = Vec::with_capacity(config.steps + 1);
    states.push(state.clone());
    for (step_idx, xi) in increments.iter().enumerate() {
        ctx.advance(&mut state, &evaluator, xi, step_idx)?;
        states.push(state.clone());
    }
    Ok(Trajectory {
        basis: config.basis,
        dt: config.dt(),
        states,
        increments,
    })
}

/// Builds coarse-step increments from fine-step ones (two fine per coarse):
/// ξ_coarse = e^{-|k|²Δt_fine} ξ_fine,even + ξ_fine,odd. This is the exact
/// aggregation law of the stochastic convolution, so a Δt-refinement study
/// couples both resolutions to the same driving noise.
pub fn coarsen_increments(
    basis: SineBasis,
    fine_increments: &[Vec<f64>],
    dt_fine: f64,
) -> Vec<Vec<f64>> {
    assert!(fine_increments.len() % 2 == 0, "need an even number of fine steps");
    let n = basis.n_modes();
    let decay: Vec<f64> = (0..n).map(|k| (-basis.eigenvalue(k) * dt_fine).exp()).collect();
    fine_increments
        .chunks_exact(2)
        .map(|pair| {
            (0..n)
                .map(|k| decay[k] * pair[0][k] + pair[1][k])
                .collect()
        })
        .collect()
}

/// g(x,t) = ½ Σ_k q_k |k|^{-2} (1 - e^{-2t|k|²}) e_k(x)², truncated at K.
pub fn g_closed_form(noise: &NoiseModel, x: &[f64], t: f64) -> Result<f64, SolverError> {
    if !(t >= 0.0) {
        return Err(SolverError::Spectral(SpectralError::InvalidTime {
            t,
            requirement: "t >= 0",
        }));
    }
    let basis = noise.basis();
    let mut sum = 0.0;
    for flat in 0..basis.n_modes() {
        let q = noise.q(flat);
        if q == 0.0 {
            continue;
        }
        let lambda = basis.eigenvalue(flat);
        let k = basis.mode(flat);
        let e = basis.eval_basis(&k, x)?;
        sum += 0.5 * q * (1.0 - (-2.0 * t * lambda).exp()) / lambda * e * e;
    }
    Ok(sum)
}

/// inf over the time grid of g(x,t)/t^γ; a positive value certifies the
/// lower-bound condition numerically at this truncation.
pub fn g_lower_bound_check(
    noise: &NoiseModel,
    x: &[f64],
    gamma: f64,
    t_grid: &[f64],
) -> Result<f64, SolverError> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(SolverError::GammaOutOfRange { gamma });
    }
    let mut inf = f64::INFINITY;
    for &t in t_grid {
        if !(t > 0.0 && t <= 1.0) {
            return Err(SolverError::TimeGridOutOfRange { t });
        }
        inf = inf.min(g_closed_form(noise, x, t)? / t.powf(gamma));
    }
    Ok(inf)
}

/// Reference constant for the cube lower bound g(x,t) ≥ c_x t, built from the
/// first mode k = (1,…,1) of the configured covariance:
/// c_x = q_{(1,…,1)} (1+2Td)^{-1} (2/π)^{d/2} sin(x_1)···sin(x_d).
/// The sine product enters unsquared here; `cube_cx_single_mode` carries the
/// literal |e_k(x)|² summand instead and is always the smaller of the two.
pub fn cube_cx_reference(noise: &NoiseModel, t_horizon: f64, x: &[f64]) -> f64 {
    let d = noise.basis().dim();
    let q_first = noise.q(0);
    let sines: f64 = x.iter().map(|xi| xi.sin()).product();
    q_first * (1.0 + 2.0 * t_horizon * d as f64).recip()
        * (2.0 / std::f64::consts::PI).powf(d as f64 / 2.0)
        * sines
}

/// The actual k=(1,…,1) summand bound, which carries |e_k(x)|² rather than
/// |e_k(x)|: q_{(1,…,1)} (1+2Td)^{-1} (2/π)^d sin²(x_1)···sin²(x_d).
pub fn cube_cx_single_mode(noise: &NoiseModel, t_horizon: f64, x: &[f64]) -> f64 {
    let d = noise.basis().dim();
    let q_first = noise.q(0);
    let sines: f64 = x.iter().map(|xi| xi.sin() * xi.sin()).product();
    q_first * (1.0 + 2.0 * t_horizon * d as f64).recip()
        * (2.0 / std::f64::consts::PI).powi(d as i32)
        * sines
}

/// g on the unit interval (0,1) with identity covariance: the sine basis is
/// rescaled affinely, giving eigenpairs (π²k², √2 sin(kπx)).
pub fn g_unit_interval_identity(x: f64, t: f64, k_max: usize) -> f64 {
    let mut sum = 0.0;
    for k in 1..=k_max {
        let lambda = (std::f64::consts::PI * k as f64).powi(2);
        let e = std::f64::consts::SQRT_2 * (k as f64 * std::f64::consts::PI * x).sin();
        sum += 0.5 * (1.0 - (-2.0 * t * lambda).exp()) / lambda * e * e;
    }
    sum
}

#[derive(Debug, Clone, Copy)]
pub struct CovarianceCheck {
    pub empirical: f64,
    pub exact: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl CovarianceCheck {
    pub fn within(&self, k_sigma: f64) -> bool {
        (self.empirical - self.exact).abs() <= k_sigma * self.std_error
    }
}

/// Simulates the martingale-measure pairing W̄_h(s), W̄_g(t) and compares the
/// empirical covariance with (s∧t)⟨Qh,g⟩.
pub fn covariance_selftest(
    noise: &NoiseModel,
    h: &SpectralField,
    g: &SpectralField,
    s: f64,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceCheck, SolverError> {
    if n_samples < 1000 {
        return Err(SolverError::TooFewSamples { n: n_samples });
    }
    let basis = noise.basis();
    let n = basis.n_modes();
    let (early, late, h_is_early) = if s <= t { (s, t, true) } else { (t, s, false) };
    let streams = NoiseStreams::new(derive_seed(seed, 0x636f76));
    let mut z = vec![0.0; 2 * n];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for sample in 0..n_samples {
        streams.fill_standard_normal(sample as u64, 0, &mut z);
        let mut w_h = 0.0;
        let mut w_g = 0.0;
        for k in 0..n {
            let b = noise.b(k);
            let w_early = early.sqrt() * z[2 * k];
            let w_late = w_early + (late - early).sqrt() * z[2 * k + 1];
            let (wh, wg) = if h_is_early {
                (w_early, w_late)
            } else {
                (w_late, w_early)
            };
            w_h += b * h.coeffs()[k] * wh;
            w_g += b * g.coeffs()[k] * wg;
        }
        let prod = w_h * w_g;
        sum += prod;
        sum_sq += prod * prod;
    }
    let mean = sum / n_samples as f64;
    let var = (sum_sq / n_samples as f64 - mean * mean).max(0.0);
    let exact: f64 = s.min(t)
        * (0..n)
            .map(|k| noise.q(k) * h.coeffs()[k] * g.coeffs()[k])
            .sum::<f64>();
    Ok(CovarianceCheck {
        empirical: mean,
        exact,
        std_error: (var / n_samples as f64).sqrt(),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::MultiIndex;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn basis1(k: usize) -> SineBasis {
        SineBasis::new(1, k)
    }

    fn zero_drift() -> DriftSpec {
        DriftSpec::exact(DriftFunction::Linear { slope: 0.0 })
    }

    fn config_linear(k: usize, steps: usize, horizon: f64, seed: u64) -> SolverConfig {
        let basis = basis1(k);
        SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: zero_drift(),
            eta: 0.0,
            horizon,
            steps,
            initial: InitialData::Zero,
            seed,
        }
    }

    #[test]
    fn zero_config_stays_zero() {
        let basis = basis1(4);
        let mut config = config_linear(4, 16, 0.5, 7);
        config.noise = NoiseModel::custom(basis, vec![0.0; 4]).unwrap();
        let traj = solve_path(&config, 0).unwrap();
        for state in traj.states() {
            assert!(state.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn deterministic_mode_decays_exactly() {
        let basis = basis1(4);
        let mut config = config_linear(4, 32, 1.0, 9);
        config.noise = NoiseModel::custom(basis, vec![0.0; 4]).unwrap();
        config.initial = InitialData::Modes(vec![(vec![1], 1.0)]);
        let traj = solve_path(&config, 0).unwrap();
        for (n, state) in traj.states().iter().enumerate() {
            let t = n as f64 * traj.dt();
            assert_relative_eq!(state[0], (-t).exp(), max_relative = 1e-12);
            for c in &state[1..] {
                assert!(c.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_drift_matches_scalar_ou_recursion() {
        let a = 1.7;
        let eta = 0.4;
        let basis = basis1(4);
        let config = SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec::exact(DriftFunction::Linear { slope: a }),
            eta,
            horizon: 0.5,
            steps: 64,
            initial: InitialData::Modes(vec![(vec![1], 0.8)]),
            seed: 21,
        };
        let traj = solve_path(&config, 3).unwrap();
        let tables = StepTables::new(basis, &config.noise, config.dt());
        let mut u = 0.8;
        for n in 0..config.steps {
            u = tables.decay[0] * u + tables.phi[0] * (eta - a) * u + traj.increments()[n][0];
            assert_relative_eq!(traj.state(n + 1)[0], u, max_relative = 1e-11, epsilon = 1e-13);
        }
    }

    #[test]
    fn single_step_matches_solver_loop() {
        let basis = basis1(6);
        let config = SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec::exact(DriftFunction::Cubic),
            eta: 0.3,
            horizon: 0.25,
            steps: 8,
            initial: InitialData::Parabola { amplitude: 0.7 },
            seed: 2,
        };
        let traj = solve_path(&config, 0).unwrap();
        let evaluator = config.drift.evaluator().unwrap();
        let state = traj.state_field(3);
        let next = step(
            &state,
            &evaluator,
            config.eta,
            &config.noise,
            config.dt(),
            &traj.increments()[3],
        )
        .unwrap();
        for (a, b) in next.coeffs().iter().zip(traj.state(4)) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn blow_up_guard_reports_step() {
        // Large η with no damping drift grows like e^{(η-1)t} and overflows
        // well before the horizon.
        let basis = basis1(4);
        let config = SolverConfig {
            basis,
            noise: NoiseModel::custom(basis, vec![0.0; 4]).unwrap(),
            drift: zero_drift(),
            eta: 200.0,
            horizon: 50.0,
            steps: 200,
            initial: InitialData::Modes(vec![(vec![1], 1.0)]),
            seed: 1,
        };
        match solve_path(&config, 0) {
            Err(SolverError::BlowUp { step, .. }) => assert!(step > 0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let config = config_linear(8, 32, 0.25, 1234);
        let a = solve_path(&config, 5).unwrap();
        let b = solve_path(&config, 5).unwrap();
        assert_eq!(a, b);
        let c = solve_path(&config, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_step_variance_approaches_q_dt() {
        let basis = basis1(8);
        let noise = NoiseModel::identity(basis).unwrap();
        for flat in 0..8 {
            let mut prev_gap = f64::INFINITY;
            for &dt in &[1e-2, 1e-3, 1e-4, 1e-5] {
                let tables = StepTables::new(basis, &noise, dt);
                let v = tables.noise_std[flat] * tables.noise_std[flat];
                let gap = (v / (noise.q(flat) * dt) - 1.0).abs();
                assert!(gap <= prev_gap, "v_k/(q_k dt) not converging at mode {flat}");
                prev_gap = gap;
            }
        }
    }

    #[test]
    fn identity_noise_rejected_above_d1() {
        let basis = SineBasis::new(2, 4);
        assert!(matches!(
            NoiseModel::identity(basis),
            Err(SolverError::IdentityNoiseDimension { d: 2 })
        ));
    }

    #[test]
    fn smoothed_noise_trace_stabilizes_on_k_ladder() {
        // q_k = (1+|k|²)^{-1} in d=2 keeps Σ q_k |k|^{-2} summable; the
        // truncated trace increments shrink as the truncation grows.
        let trace = |k: usize| {
            let basis = SineBasis::new(2, k);
            NoiseModel::smoothed(basis, 0.5).heat_trace()
        };
        let (t8, t16, t32) = (trace(8), trace(16), trace(32));
        assert!(t8 < t16 && t16 < t32);
        assert!(t32 - t16 < 0.5 * (t16 - t8), "trace not stabilizing");
    }

    #[test]
    fn custom_noise_validation() {
        let basis = basis1(4);
        assert!(NoiseModel::custom(basis, vec![1.0; 3]).is_err());
        assert!(NoiseModel::custom(basis, vec![1.0, -0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn g_closed_form_anchors() {
        let basis = basis1(64);
        let noise = NoiseModel::identity(basis).unwrap();
        assert_eq!(g_closed_form(&noise, &[PI / 2.0], 0.0).unwrap(), 0.0);

        // Large-time limit with K = 10^4 is the odd-k series (1/π)Σ k^{-2} = π/8.
        let big = basis1(10_000);
        let noise_big = NoiseModel::identity(big).unwrap();
        let g_inf = g_closed_form(&noise_big, &[PI / 2.0], 50.0).unwrap();
        assert!((g_inf - PI / 8.0).abs() < 1e-4, "g = {g_inf}");

        // Nondecreasing in t.
        let mut prev = 0.0;
        for i in 1..=20 {
            let g = g_closed_form(&noise, &[PI / 2.0], 0.05 * i as f64).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn lower_bound_checks() {
        let basis = basis1(512);
        let noise = NoiseModel::identity(basis).unwrap();
        let grid: Vec<f64> = (0..60)
            .map(|i| 1e-4 * (1e4f64).powf(i as f64 / 59.0))
            .collect();
        let inf = g_lower_bound_check(&noise, &[PI / 2.0], 0.5, &grid).unwrap();
        assert!(inf > 0.3, "infimum {inf}");

        assert!(matches!(
            g_lower_bound_check(&noise, &[PI / 2.0], 2.0, &grid),
            Err(SolverError::GammaOutOfRange { .. })
        ));
        assert!(matches!(
            g_lower_bound_check(&noise, &[PI / 2.0], 0.5, &[1.5]),
            Err(SolverError::TimeGridOutOfRange { .. })
        ));
    }

    #[test]
    fn cube_example_cx_holds_in_d2() {
        let basis = SineBasis::new(2, 32);
        let noise = NoiseModel::smoothed(basis, 0.5);
        let x = [PI / 2.0, PI / 2.0];
        let grid: Vec<f64> = (0..60)
            .map(|i| 1e-4 * (1e4f64).powf(i as f64 / 59.0))
            .collect();
        let inf = g_lower_bound_check(&noise, &x, 1.0, &grid).unwrap();
        let cx = cube_cx_reference(&noise, 1.0, &x);
        assert!(inf >= 0.9 * cx, "inf {inf} vs 0.9 c_x {}", 0.9 * cx);
        // The literal summand bound is weaker than the reference constant.
        assert!(cube_cx_single_mode(&noise, 1.0, &x) <= cx);
        assert!(inf >= cube_cx_single_mode(&noise, 1.0, &x));
    }

    #[test]
    fn unit_interval_is_the_rescaled_cube_case() {
        // Affine rescaling identity: g_(0,1)(x,t) = π^{-1} g_(0,π)(πx, π²t).
        let basis = basis1(256);
        let noise = NoiseModel::identity(basis).unwrap();
        for &(x, t) in &[(0.5, 0.02), (0.25, 0.1), (0.7, 0.5)] {
            let left = g_unit_interval_identity(x, t, 256);
            let right = g_closed_form(&noise, &[PI * x], PI * PI * t).unwrap() / PI;
            assert_relative_eq!(left, right, max_relative = 1e-12);
        }
    }

    #[test]
    fn unit_interval_identity_gamma_half() {
        let grid: Vec<f64> = (0..40)
            .map(|i| 1e-4 * (1e4f64).powf(i as f64 / 39.0))
            .collect();
        let inf = grid
            .iter()
            .map(|&t| g_unit_interval_identity(0.5, t, 512) / t.sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(inf > 0.1, "infimum {inf}");
    }

    #[test]
    fn covariance_selftest_single_mode() {
        let basis = basis1(4);
        let noise = NoiseModel::identity(basis).unwrap();
        let k1 = MultiIndex::new(vec![1]).unwrap();
        let e1 = SpectralField::single_mode(basis, &k1, 1.0).unwrap();
        let check = covariance_selftest(&noise, &e1, &e1, 1.0, 1.0, 20_000, 11).unwrap();
        assert_relative_eq!(check.exact, 1.0);
        assert!(check.within(4.0), "emp {} exact {}", check.empirical, check.exact);

        let k2 = MultiIndex::new(vec![2]).unwrap();
        let e2 = SpectralField::single_mode(basis, &k2, 1.0).unwrap();
        let cross = covariance_selftest(&noise, &e1, &e2, 0.5, 1.0, 20_000, 11).unwrap();
        assert_eq!(cross.exact, 0.0);
        assert!(cross.within(4.0));
        assert!(covariance_selftest(&noise, &e1, &e2, 0.5, 1.0, 10, 1).is_err());
    }

    #[test]
    fn quasi_monotone_normalization_matches() {
        // Net drift x³ + sin x with η = 0 versus its normalized form
        // x³ + sin x + x with η = 1, under common noise.
        let basis = basis1(8);
        let mk = |shift: f64, eta: f64| SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec::exact(DriftFunction::CubicSine { shift }),
            eta,
            horizon: 0.5,
            steps: 64,
            initial: InitialData::Parabola { amplitude: 0.5 },
            seed: 77,
        };
        let raw = solve_path(&mk(0.0, 0.0), 0).unwrap();
        let normalized = solve_path(&mk(1.0, 1.0), 0).unwrap();
        for (a, b) in raw.states().iter().zip(normalized.states()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12, "|{x} - {y}|");
            }
        }
    }

    #[test]
    fn yosida_ladder_approaches_exact_path() {
        let basis = basis1(8);
        let mk = |variant: DriftVariant| SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec {
                function: DriftFunction::Cubic,
                variant,
                newton: NewtonSettings::default(),
            },
            eta: 0.0,
            horizon: 0.25,
            steps: 64,
            initial: InitialData::Zero,
            seed: 3,
        };
        let exact = solve_path(&mk(DriftVariant::Exact), 0).unwrap();
        let mut prev = f64::INFINITY;
        for &lambda in &[0.5, 0.1, 0.02] {
            let reg = solve_path(&mk(DriftVariant::Yosida { lambda }), 0).unwrap();
            let dist = sup_grid_distance(&exact, &reg);
            assert!(dist < prev, "distance {dist} at lambda={lambda}");
            prev = dist;
        }
    }

    #[test]
    fn mollified_ladder_approaches_yosida_path() {
        let basis = basis1(8);
        let lambda = 0.1;
        let mk = |variant: DriftVariant| SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec {
                function: DriftFunction::Cubic,
                variant,
                newton: NewtonSettings::default(),
            },
            eta: 0.0,
            horizon: 0.25,
            steps: 32,
            initial: InitialData::Zero,
            seed: 5,
        };
        let yosida = solve_path(&mk(DriftVariant::Yosida { lambda }), 0).unwrap();
        let mut prev = f64::INFINITY;
        for &beta in &[0.3, 0.1, 0.03] {
            let reg = solve_path(&mk(DriftVariant::Mollified { lambda, beta }), 0).unwrap();
            let dist = sup_grid_distance(&yosida, &reg);
            assert!(dist < prev, "distance {dist} at beta={beta}");
            prev = dist;
        }
    }

    fn sup_grid_distance(a: &Trajectory, b: &Trajectory) -> f64 {
        let plan = TransformPlan::new(a.basis());
        let mut sup = 0.0f64;
        for n in 0..=a.n_steps() {
            let sa = crate::spectral::synthesize_on_grid(&plan, &a.state_field(n)).unwrap();
            let sb = crate::spectral::synthesize_on_grid(&plan, &b.state_field(n)).unwrap();
            for (x, y) in sa.iter().zip(&sb) {
                sup = sup.max((x - y).abs());
            }
        }
        sup
    }

    #[test]
    fn dt_refinement_with_coupled_noise() {
        let basis = basis1(8);
        let mk = |steps: usize| SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec::exact(DriftFunction::Cubic),
            eta: 0.0,
            horizon: 0.25,
            steps,
            initial: InitialData::Zero,
            seed: 13,
        };
        let fine_cfg = mk(256);
        let x = [PI / 2.0];
        let mut gap_mid = 0.0;
        let mut gap_coarse = 0.0;
        for path in 0..10 {
            let fine = solve_path(&fine_cfg, path).unwrap();
            let mid_inc = coarsen_increments(basis, fine.increments(), fine_cfg.dt());
            let mid = solve_path_with_increments(&mk(128), mid_inc.clone()).unwrap();
            let coarse_inc = coarsen_increments(basis, &mid_inc, mk(128).dt());
            let coarse = solve_path_with_increments(&mk(64), coarse_inc).unwrap();
            let u_fine = fine.value_at(256, &x).unwrap();
            gap_mid += (mid.value_at(128, &x).unwrap() - u_fine).abs();
            gap_coarse += (coarse.value_at(64, &x).unwrap() - u_fine).abs();
        }
        assert!(gap_mid < gap_coarse, "mid {gap_mid} coarse {gap_coarse}");
    }

    #[test]
    fn cubic_paths_do_not_blow_up() {
        // Dissipativity smoke test: the mean pathwise sup-norm is finite and
        // stable under step refinement.
        let basis = basis1(8);
        let mk = |steps: usize| SolverConfig {
            basis,
            noise: NoiseModel::identity(basis).unwrap(),
            drift: DriftSpec::exact(DriftFunction::Cubic),
            eta: 0.0,
            horizon: 1.0,
            steps,
            initial: InitialData::Zero,
            seed: 17,
        };
        let plan = TransformPlan::new(basis);
        let mean_sup = |steps: usize| {
            let config = mk(steps);
            let mut acc = 0.0;
            for path in 0..50 {
                let traj = solve_path(&config, path).unwrap();
                let mut sup = 0.0f64;
                for n in 0..=traj.n_steps() {
                    let s =
                        crate::spectral::synthesize_on_grid(&plan, &traj.state_field(n)).unwrap();
                    sup = s.iter().fold(sup, |m, v| m.max(v.abs()));
                }
                acc += sup;
            }
            acc / 50.0
        };
        let coarse = mean_sup(64);
        let fine = mean_sup(128);
        assert!(coarse.is_finite() && coarse < 10.0, "mean sup {coarse}");
        assert!(
            (fine - coarse).abs() < 0.5 * coarse,
            "mean sup unstable under refinement: {coarse} vs {fine}"
        );
    }

    #[test]
    fn cache_round_trip() {
        let config = config_linear(8, 16, 0.25, 99);
        let traj = solve_path(&config, 2).unwrap();
        let mut buf = Vec::new();
        traj.write_cache(&mut buf).unwrap();
        let back = Trajectory::read_cache(&buf[..]).unwrap();
        assert_eq!(traj, back);

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(Trajectory::read_cache(&corrupt[..]).is_err());
    }

    #[test]
    fn columnar_export_has_header_and_rows() {
        let config = config_linear(4, 4, 0.1, 1);
        let traj = solve_path(&config, 0).unwrap();
        let mut buf = Vec::new();
        traj.write_columnar(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time\tu_1\tu_2\tu_3\tu_4");
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn time_index_lookup() {
        let config = config_linear(4, 10, 1.0, 1);
        let traj = solve_path(&config, 0).unwrap();
        assert_eq!(traj.time_index(0.5), Some(5));
        assert_eq!(traj.time_index(1.0), Some(10));
        assert_eq!(traj.time_index(0.55), None);
        assert_eq!(traj.time_index(1.2), None);
    }
}
