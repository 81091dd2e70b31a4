//! Tensor sine basis of the Dirichlet Laplacian on the cube (0,π)^d.
//!
//! Basis functions are e_k(x) = (2/π)^{d/2} sin(k_1 x_1)···sin(k_d x_d) with
//! -Δ e_k = |k|² e_k. The module provides the heat semigroup acting diagonally
//! on coefficients, the truncated heat kernel, and the pseudo-spectral
//! transform pair between coefficients and samples on the tensor collocation
//! grid x_j = jπ/(K+1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("point component {value} lies outside the open interval (0, π)")]
    PointOutsideDomain { value: f64 },
    #[error("point has dimension {got}, basis has dimension {expected}")]
    PointDimension { got: usize, expected: usize },
    #[error("time {t} is outside the valid range ({requirement})")]
    InvalidTime { t: f64, requirement: &'static str },
    #[error("coefficient vector has length {got}, basis has {expected} modes")]
    CoefficientLength { got: usize, expected: usize },
    #[error("sample grid has length {got}, collocation grid has {expected} points")]
    GridLength { got: usize, expected: usize },
    #[error("multi-index component must be in 1..={max}, got {got}")]
    ModeOutOfRange { got: u32, max: usize },
    #[error("non-finite coefficient at mode {index}")]
    NonFiniteCoefficient { index: usize },
}

/// Mode index k = (k_1,…,k_d), every component ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(components: Vec<u32>) -> Option<Self> {
        if components.is_empty() || components.contains(&0) {
            return None;
        }
        Some(MultiIndex(components))
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// |k|² = k_1² + … + k_d², the Dirichlet Laplacian eigenvalue of e_k.
    pub fn abs_squared(&self) -> f64 {
        self.0.iter().map(|&k| (k as f64) * (k as f64)).sum()
    }
}

/// Truncated tensor sine basis: modes 1..=K per axis on (0,π)^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SineBasis {
    d: usize,
    k_per_axis: usize,
}

impl SineBasis {
    pub fn new(d: usize, k_per_axis: usize) -> Self {
        assert!(d >= 1, "spatial dimension must be at least 1");
        assert!(k_per_axis >= 1, "per-axis truncation must be at least 1");
        SineBasis { d, k_per_axis }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k_per_axis(&self) -> usize {
        self.k_per_axis
    }

    pub fn n_modes(&self) -> usize {
        self.k_per_axis.pow(self.d as u32)
    }

    /// Flat mode order: axis 0 varies fastest.
    pub fn mode(&self, flat: usize) -> MultiIndex {
        debug_assert!(flat < self.n_modes());
        let mut rest = flat;
        let mut comps = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            comps.push((rest % self.k_per_axis) as u32 + 1);
            rest /= self.k_per_axis;
        }
        MultiIndex(comps)
    }

    pub fn flat_index(&self, k: &MultiIndex) -> Result<usize, SpectralError> {
        if k.dim() != self.d {
            return Err(SpectralError::PointDimension {
                got: k.dim(),
                expected: self.d,
            });
        }
        let mut flat = 0usize;
        for &ki in k.components().iter().rev() {
            if ki as usize > self.k_per_axis {
                return Err(SpectralError::ModeOutOfRange {
                    got: ki,
                    max: self.k_per_axis,
                });
            }
            flat = flat * self.k_per_axis + (ki as usize - 1);
        }
        Ok(flat)
    }

    /// Eigenvalue |k|² of the flat mode, without allocating the index.
    pub fn eigenvalue(&self, flat: usize) -> f64 {
        let mut rest = flat;
        let mut sum = 0.0;
        for _ in 0..self.d {
            let k = (rest % self.k_per_axis + 1) as f64;
            rest /= self.k_per_axis;
            sum += k * k;
        }
        sum
    }

    fn check_point(&self, x: &[f64]) -> Result<(), SpectralError> {
        if x.len() != self.d {
            return Err(SpectralError::PointDimension {
                got: x.len(),
                expected: self.d,
            });
        }
        for &xi in x {
            if !(xi > 0.0 && xi < std::f64::consts::PI) {
                return Err(SpectralError::PointOutsideDomain { value: xi });
            }
        }
        Ok(())
    }

    /// e_k(x) = (2/π)^{d/2} sin(k_1 x_1)···sin(k_d x_d), x strictly inside the cube.
    pub fn eval_basis(&self, k: &MultiIndex, x: &[f64]) -> Result<f64, SpectralError> {
        self.check_point(x)?;
        let flat = self.flat_index(k)?;
        Ok(self.eval_mode_unchecked(flat, x))
    }

    fn eval_mode_unchecked(&self, flat: usize, x: &[f64]) -> f64 {
        let norm = (2.0 / std::f64::consts::PI).powf(self.d as f64 / 2.0);
        let mut rest = flat;
        let mut prod = norm;
        for &xi in x.iter().take(self.d) {
            let k = (rest % self.k_per_axis + 1) as f64;
            rest /= self.k_per_axis;
            prod *= (k * xi).sin();
        }
        prod
    }

    /// 1-d collocation nodes x_j = jπ/(K+1), j = 1..=K. The tensor grid is the
    /// d-fold product, flattened with axis 0 fastest.
    pub fn collocation_nodes_1d(&self) -> Vec<f64> {
        let k = self.k_per_axis;
        (1..=k)
            .map(|j| j as f64 * std::f64::consts::PI / (k + 1) as f64)
            .collect()
    }

    /// Coordinates of flat grid point `flat` on the tensor collocation grid.
    pub fn grid_point(&self, flat: usize) -> Vec<f64> {
        let nodes = self.collocation_nodes_1d();
        let mut rest = flat;
        let mut x = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            x.push(nodes[rest % self.k_per_axis]);
            rest /= self.k_per_axis;
        }
        x
    }

    /// Heat kernel value G_t(x,y) of the truncated semigroup, t > 0.
    pub fn heat_kernel(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, SpectralError> {
        if !(t > 0.0) {
            return Err(SpectralError::InvalidTime {
                t,
                requirement: "t > 0",
            });
        }
        self.check_point(x)?;
        self.check_point(y)?;
        let mut sum = 0.0;
        for flat in 0..self.n_modes() {
            let lambda = self.eigenvalue(flat);
            // Group e_k(x)e_k(y) first so the sum is bit-exact under x ↔ y.
            let pair = self.eval_mode_unchecked(flat, x) * self.eval_mode_unchecked(flat, y);
            sum += (-t * lambda).exp() * pair;
        }
        Ok(sum)
    }

    /// G_t(x, O) = S(t)1_O evaluated at x: the semigroup applied to the indicator of
    /// the cube, evaluated at x. Uses the exact sine coefficients of 1_O.
    pub fn kernel_mass(&self, t: f64, x: &[f64]) -> Result<f64, SpectralError> {
        if !(t > 0.0) {
            return Err(SpectralError::InvalidTime {
                t,
                requirement: "t > 0",
            });
        }
        self.check_point(x)?;
        let ind = self.indicator_field();
        let evolved = ind.apply_semigroup(t)?;
        Ok(evolved.synthesize_unchecked(x))
    }

    /// Exact L² projection of the indicator 1_O onto the truncated basis:
    /// ⟨1, e_k⟩ = ∏_i sqrt(2/π) (1-cos k_i π)/k_i, i.e. zero unless all k_i odd.
    pub fn indicator_field(&self) -> SpectralField {
        let norm_1d = (2.0 / std::f64::consts::PI).sqrt();
        let mut coeffs = vec![0.0; self.n_modes()];
        for (flat, c) in coeffs.iter_mut().enumerate() {
            let mut rest = flat;
            let mut prod = 1.0;
            for _ in 0..self.d {
                let k = rest % self.k_per_axis + 1;
                rest /= self.k_per_axis;
                if k % 2 == 0 {
                    prod = 0.0;
                    break;
                }
                prod *= norm_1d * 2.0 / k as f64;
            }
            *c = prod;
        }
        SpectralField {
            basis: *self,
            coeffs,
        }
    }

    /// Time below which pointwise statements about the truncated heat kernel
    /// (positivity, comparison) are dominated by Gibbs oscillation and are
    /// skipped by the self-checks.
    pub fn pointwise_time_floor(&self) -> f64 {
        let k = self.k_per_axis as f64;
        8.0 / (k * k)
    }
}

/// Coefficients of a function on the truncated tensor sine basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    basis: SineBasis,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zero(basis: SineBasis) -> Self {
        SpectralField {
            basis,
            coeffs: vec![0.0; basis.n_modes()],
        }
    }

    pub fn from_coeffs(basis: SineBasis, coeffs: Vec<f64>) -> Result<Self, SpectralError> {
        if coeffs.len() != basis.n_modes() {
            return Err(SpectralError::CoefficientLength {
                got: coeffs.len(),
                expected: basis.n_modes(),
            });
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(SpectralError::NonFiniteCoefficient { index });
        }
        Ok(SpectralField { basis, coeffs })
    }

    pub fn single_mode(basis: SineBasis, k: &MultiIndex, amplitude: f64) -> Result<Self, SpectralError> {
        let flat = basis.flat_index(k)?;
        let mut coeffs = vec![0.0; basis.n_modes()];
        coeffs[flat] = amplitude;
        Ok(SpectralField { basis, coeffs })
    }

    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// S(t) acting diagonally: coefficient k is scaled by exp(-t|k|²), t ≥ 0.
    pub fn apply_semigroup(&self, t: f64) -> Result<SpectralField, SpectralError> {
        if !(t >= 0.0) {
            return Err(SpectralError::InvalidTime {
                t,
                requirement: "t >= 0",
            });
        }
        let mut out = self.clone();
        for (flat, c) in out.coeffs.iter_mut().enumerate() {
            *c *= (-t * self.basis.eigenvalue(flat)).exp();
        }
        Ok(out)
    }

    /// Point evaluation Σ_k c_k e_k(x), x strictly inside the cube.
    pub fn synthesize(&self, x: &[f64]) -> Result<f64, SpectralError> {
        self.basis.check_point(x)?;
        Ok(self.synthesize_unchecked(x))
    }

    fn synthesize_unchecked(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(flat, c)| c * self.basis.eval_mode_unchecked(flat, x))
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Precomputed pseudo-spectral transform pair on the tensor collocation grid.
///
/// `coeffs_to_samples` evaluates a truncated field at the grid nodes;
/// `samples_to_coeffs` is its exact inverse (discrete sine orthogonality),
/// so the round trip is the identity up to rounding.
#[derive(Debug, Clone)]
pub struct TransformPlan {
    basis: SineBasis,
    /// sin(j k π/(K+1)) for j,k = 1..=K, row-major in j.
    sin_1d: Vec<f64>,
    /// (2/π)^{1/2} applied per axis in synthesis.
    norm_1d: f64,
    /// Quadrature weight per axis for analysis.
    weight_1d: f64,
    scratch_len: usize,
}

impl TransformPlan {
    pub fn new(basis: SineBasis) -> Self {
        let k = basis.k_per_axis();
        let mut sin_1d = vec![0.0; k * k];
        for j in 1..=k {
            for m in 1..=k {
                sin_1d[(j - 1) * k + (m - 1)] =
                    (j as f64 * m as f64 * std::f64::consts::PI / (k + 1) as f64).sin();
            }
        }
        TransformPlan {
            basis,
            sin_1d,
            norm_1d: (2.0 / std::f64::consts::PI).sqrt(),
            weight_1d: std::f64::consts::PI / (k + 1) as f64,
            scratch_len: basis.n_modes(),
        }
    }

    pub fn basis(&self) -> SineBasis {
        self.basis
    }

    /// Tensor quadrature weight (π/(K+1))^d of the analysis rule, i.e. the
    /// proportionality constant in A = w Sᵀ between the two transforms.
    pub fn quadrature_weight(&self) -> f64 {
        self.weight_1d.powi(self.basis.dim() as i32)
    }

    /// Applies the 1-d sine matrix along every axis with per-axis factor `scale`.
    fn apply_all_axes(&self, data: &mut [f64], scale: f64) {
        let k = self.basis.k_per_axis();
        let d = self.basis.dim();
        let mut tmp = vec![0.0; self.scratch_len];
        for axis in 0..d {
            let stride = k.pow(axis as u32);
            let outer = self.scratch_len / (k * stride);
            tmp.copy_from_slice(data);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * k * stride + s;
                    for j in 0..k {
                        let mut acc = 0.0;
                        for m in 0..k {
                            acc += self.sin_1d[j * k + m] * tmp[base + m * stride];
                        }
                        data[base + j * stride] = scale * acc;
                    }
                }
            }
        }
    }

    /// Samples of the field on the tensor collocation grid.
    pub fn coeffs_to_samples(&self, coeffs: &[f64], samples: &mut [f64]) {
        assert_eq!(coeffs.len(), self.scratch_len);
        assert_eq!(samples.len(), self.scratch_len);
        samples.copy_from_slice(coeffs);
        self.apply_all_axes(samples, self.norm_1d);
    }

    /// Coefficients of the truncated field whose grid samples are given.
    pub fn samples_to_coeffs(&self, samples: &[f64], coeffs: &mut [f64]) {
        assert_eq!(coeffs.len(), self.scratch_len);
        assert_eq!(samples.len(), self.scratch_len);
        coeffs.copy_from_slice(samples);
        self.apply_all_axes(coeffs, self.norm_1d * self.weight_1d);
    }
}

/// Samples `field` on the collocation grid (operation `synthesize` in grid form).
pub fn synthesize_on_grid(plan: &TransformPlan, field: &SpectralField) -> Result<Vec<f64>, SpectralError> {
    if field.basis() != plan.basis() {
        return Err(SpectralError::CoefficientLength {
            got: field.coeffs().len(),
            expected: plan.basis().n_modes(),
        });
    }
    let mut samples = vec![0.0; field.coeffs().len()];
    plan.coeffs_to_samples(field.coeffs(), &mut samples);
    Ok(samples)
}

/// Projects grid samples back onto the truncated basis (operation `analyze`).
pub fn analyze_grid(plan: &TransformPlan, samples: &[f64]) -> Result<SpectralField, SpectralError> {
    if samples.len() != plan.basis().n_modes() {
        return Err(SpectralError::GridLength {
            got: samples.len(),
            expected: plan.basis().n_modes(),
        });
    }
    let mut coeffs = vec![0.0; samples.len()];
    plan.samples_to_coeffs(samples, &mut coeffs);
    SpectralField::from_coeffs(plan.basis(), coeffs)
}
