//! Monotone scalar drifts and their Yosida and mollified regularizations.
//!
//! For an increasing f the resolvent J_λ = (I + λf)^{-1} is computed by a
//! safeguarded Newton solve (monotonicity always supplies a bracket), and the
//! Yosida approximation is f_λ = (y - J_λ(y))/λ = f(J_λ(y)). Derivatives of
//! f_λ of any order follow from the Faà di Bruno expansion of f∘J_λ, using
//! J_λ^{(i)} = -λ f_λ^{(i)} for i ≥ 2 to close the recursion. Mollification
//! convolves with a scaled bump by fixed Gauss-Legendre quadrature.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("resolvent Newton did not converge at y={y} (residual {residual:.3e} after {iterations} iterations)")]
    NewtonDiverged {
        y: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("drift is not nondecreasing: f'({x}) = {value}")]
    NotMonotone { x: f64, value: f64 },
    #[error("derivative order {n} exceeds supported order {max}")]
    DerivativeOrder { n: usize, max: usize },
    #[error("mollified evaluation requires a width beta")]
    MissingMollifier,
    #[error("mollifier width must lie in (0, 1], got {beta}")]
    InvalidWidth { beta: f64 },
    #[error("Yosida parameter must be positive, got {lambda}")]
    InvalidLambda { lambda: f64 },
}

/// A monotone scalar nonlinearity with analytic derivatives of every order.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFunction {
    /// f(x) = a x, a ≥ 0.
    Linear { slope: f64 },
    /// f(x) = x³.
    Cubic,
    /// f(x) = x + x³.
    LinearCubic,
    /// f(x) = x³ + sin x + shift·x. shift = 0 is the raw quasi-monotone net
    /// drift; shift = ‖sin‖_Lip = 1 is its normalized monotone part.
    CubicSine { shift: f64 },
    /// Coefficients in ascending powers; nondecreasing on the test grid.
    Polynomial { coeffs: Vec<f64> },
}

impl DriftFunction {
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self, DriftError> {
        let f = DriftFunction::Polynomial { coeffs };
        // Monotonicity cannot be decided symbolically for arbitrary
        // coefficients; reject when the derivative dips negative on a wide grid.
        for i in 0..=2000 {
            let x = -50.0 + i as f64 * 0.05;
            let d = f.derivative(1, x);
            if d < 0.0 {
                return Err(DriftError::NotMonotone { x, value: d });
            }
        }
        Ok(f)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// n-th derivative, n = 0 being the function itself.
    pub fn derivative(&self, n: usize, x: f64) -> f64 {
        match self {
            DriftFunction::Linear { slope } => match n {
                0 => slope * x,
                1 => *slope,
                _ => 0.0,
            },
            DriftFunction::Cubic => cubic_derivative(n, x),
            DriftFunction::LinearCubic => {
                cubic_derivative(n, x)
                    + match n {
                        0 => x,
                        1 => 1.0,
                        _ => 0.0,
                    }
            }
            DriftFunction::CubicSine { shift } => {
                let lin = match n {
                    0 => shift * x,
                    1 => *shift,
                    _ => 0.0,
                };
                cubic_derivative(n, x) + sine_derivative(n, x) + lin
            }
            DriftFunction::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (p, &c) in coeffs.iter().enumerate().skip(n) {
                    let mut fall = 1.0;
                    for j in 0..n {
                        fall *= (p - j) as f64;
                    }
                    acc += c * fall * x.powi((p - n) as i32);
                }
                acc
            }
        }
    }

    /// Polynomial-growth exponent p with |f(x)| ≲ 1 + |x|^p.
    pub fn degree(&self) -> u32 {
        match self {
            DriftFunction::Linear { .. } => 1,
            DriftFunction::Cubic | DriftFunction::LinearCubic | DriftFunction::CubicSine { .. } => 3,
            DriftFunction::Polynomial { coeffs } => coeffs.len().saturating_sub(1) as u32,
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            DriftFunction::Linear { slope } => *slope == 0.0,
            DriftFunction::Polynomial { coeffs } => coeffs.iter().all(|c| *c == 0.0),
            _ => false,
        }
    }

    /// sup over the grid of |f^{(n)}(x)| / (1 + |x|^q).
    pub fn growth_envelope(&self, n: usize, grid: &[f64], q: u32) -> f64 {
        grid.iter().fold(0.0f64, |m, &x| {
            m.max(self.derivative(n, x).abs() / (1.0 + x.abs().powi(q as i32)))
        })
    }
}

fn cubic_derivative(n: usize, x: f64) -> f64 {
    match n {
        0 => x * x * x,
        1 => 3.0 * x * x,
        2 => 6.0 * x,
        3 => 6.0,
        _ => 0.0,
    }
}

fn sine_derivative(n: usize, x: f64) -> f64 {
    match n % 4 {
        0 => x.sin(),
        1 => x.cos(),
        2 => -x.sin(),
        _ => -x.cos(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tolerance: 1e-13,
            max_iterations: 100,
        }
    }
}

/// The standard bump ζ(x) ∝ exp(-1/(1-x²)) on (-1,1), scaled to width β,
/// together with the fixed 32-node Gauss-Legendre rule on [-β, β].
///
/// The convolution weights are normalized so the discrete rule has unit mass;
/// the raw quadrature defect of the rule on ζ is ~1e-8.
#[derive(Debug, Clone)]
pub struct Mollifier {
    width: f64,
    /// Quadrature nodes on [-β, β].
    nodes: Vec<f64>,
    /// Raw Gauss-Legendre weights mapped to [-β, β].
    weights: Vec<f64>,
    /// Normalization constant of the unit bump, from a 200-node rule.
    bump_norm: f64,
    /// Discrete mass of ζ_β under the 32-node rule, before renormalization.
    raw_mass: f64,
}

const MOLLIFIER_QUAD_NODES: usize = 32;

impl Mollifier {
    pub fn new(beta: f64) -> Result<Self, DriftError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(DriftError::InvalidWidth { beta });
        }
        let (ref_nodes, ref_weights) = gauss_legendre(MOLLIFIER_QUAD_NODES);
        let nodes: Vec<f64> = ref_nodes.iter().map(|x| x * beta).collect();
        let weights: Vec<f64> = ref_weights.iter().map(|w| w * beta).collect();

        let (fine_nodes, fine_weights) = gauss_legendre(200);
        let bump_norm: f64 = fine_nodes
            .iter()
            .zip(&fine_weights)
            .map(|(x, w)| w * raw_bump(*x))
            .sum();

        let mut m = Mollifier {
            width: beta,
            nodes,
            weights,
            bump_norm,
            raw_mass: 0.0,
        };
        m.raw_mass = m
            .nodes
            .iter()
            .zip(&m.weights)
            .map(|(z, w)| w * m.zeta_beta(0, *z))
            .sum();
        Ok(m)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// j-th derivative of ζ_β, j ≤ 2.
    pub fn zeta_beta(&self, j: usize, x: f64) -> f64 {
        let s = x / self.width;
        let scale = self.width.powi(-(j as i32) - 1);
        scale * self.zeta_unit(j, s)
    }

    fn zeta_unit(&self, j: usize, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let base = raw_bump(s) / self.bump_norm;
        let one_m = 1.0 - s * s;
        // w = d/ds log ζ(s)
        let w = -2.0 * s / (one_m * one_m);
        match j {
            0 => base,
            1 => base * w,
            2 => {
                let w_prime = -2.0 / (one_m * one_m) - 8.0 * s * s / (one_m * one_m * one_m);
                base * (w * w + w_prime)
            }
            _ => unreachable!("zeta derivatives supported up to order 2"),
        }
    }

    /// Discrete mass ∫ζ_β under the operational rule (≈ 1, self-test value).
    pub fn discrete_mass(&self) -> f64 {
        self.raw_mass
    }

    /// Convolution ∫ g(y - z) ζ_β^{(j)}(z) dz by the 32-node rule. For j = 0
    /// the weights are mass-normalized so constants are reproduced exactly.
    fn convolve<G: Fn(f64) -> Result<f64, DriftError>>(
        &self,
        j: usize,
        y: f64,
        g: G,
    ) -> Result<f64, DriftError> {
        let mut acc = 0.0;
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * self.zeta_beta(j, *z) * g(y - z)?;
        }
        Ok(acc / self.raw_mass)
    }
}

fn raw_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A monotone drift together with its Yosida parameter λ and an optional
/// mollifier width β.
#[derive(Debug, Clone)]
pub struct RegularizedDrift {
    base: DriftFunction,
    lambda: f64,
    mollifier: Option<Mollifier>,
    newton: NewtonSettings,
}

impl RegularizedDrift {
    pub fn new(base: DriftFunction, lambda: f64, newton: NewtonSettings) -> Result<Self, DriftError> {
        if !(lambda > 0.0) {
            return Err(DriftError::InvalidLambda { lambda });
        }
        Ok(RegularizedDrift {
            base,
            lambda,
            mollifier: None,
            newton,
        })
    }

    pub fn with_mollifier(mut self, beta: f64) -> Result<Self, DriftError> {
        self.mollifier = Some(Mollifier::new(beta)?);
        Ok(self)
    }

    pub fn base(&self) -> &DriftFunction {
        &self.base
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> Option<f64> {
        self.mollifier.as_ref().map(|m| m.width())
    }

    pub fn newton(&self) -> NewtonSettings {
        self.newton
    }

    /// J_λ(y): the unique root x of x + λ f(x) = y.
    ///
    /// Safeguarded Newton: monotonicity makes [y - λf(y), y] (sorted) a
    /// bracket, the first iterate is y/(1 + λ f'(y)), and any step leaving
    /// the bracket falls back to bisection.
    pub fn resolvent(&self, y: f64) -> Result<f64, DriftError> {
        let lambda = self.lambda;
        let g = |x: f64| x + lambda * self.base.eval(x) - y;

        let fy = self.base.eval(y);
        let other = y - lambda * fy;
        let (mut lo, mut hi) = if other <= y { (other, y) } else { (y, other) };
        let mut g_lo = g(lo);
        if g_lo == 0.0 {
            return Ok(lo);
        }
        let g_hi = g(hi);
        if g_hi == 0.0 {
            return Ok(hi);
        }
        debug_assert!(g_lo <= 0.0 && g_hi >= 0.0, "monotone bracket failed");

        let mut x = y / (1.0 + lambda * self.base.derivative(1, y));
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let mut residual = g(x);
        for iteration in 0..self.newton.max_iterations {
            if residual.abs() <= self.newton.tolerance {
                return Ok(x);
            }
            if residual > 0.0 {
                hi = x;
            } else {
                lo = x;
                g_lo = residual;
            }
            let slope = 1.0 + lambda * self.base.derivative(1, x);
            let mut next = x - residual / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            // A collapsed bracket means we are at the rounding floor.
            if next == x || (hi - lo) <= f64::EPSILON * (1.0 + x.abs()) {
                let candidate = if g_lo.abs() < residual.abs() { lo } else { x };
                let r = g(candidate);
                if r.abs() <= self.newton.tolerance * 1e3 {
                    return Ok(candidate);
                }
                return Err(DriftError::NewtonDiverged {
                    y,
                    residual: r,
                    iterations: iteration,
                });
            }
            x = next;
            residual = g(x);
        }
        if residual.abs() <= self.newton.tolerance {
            return Ok(x);
        }
        Err(DriftError::NewtonDiverged {
            y,
            residual,
            iterations: self.newton.max_iterations,
        })
    }

    /// f_λ(y) = (y - J_λ(y))/λ.
    pub fn yosida(&self, y: f64) -> Result<f64, DriftError> {
        let j = self.resolvent(y)?;
        Ok((y - j) / self.lambda)
    }

    /// f'_λ(y) = f'(J_λ(y)) / (1 + λ f'(J_λ(y))), in [0, 1/λ].
    pub fn yosida_d1(&self, y: f64) -> Result<f64, DriftError> {
        let j = self.resolvent(y)?;
        let fp = self.base.derivative(1, j);
        Ok(fp / (1.0 + self.lambda * fp))
    }

    /// n-th derivative of f_λ by the Faà di Bruno recursion on f∘J_λ,
    /// closed with J^{(i)}_λ = -λ f^{(i)}_λ for i ≥ 2. n = 0 is f_λ itself.
    pub fn yosida_dn(&self, n: usize, y: f64) -> Result<f64, DriftError> {
        if n == 0 {
            return self.yosida(y);
        }
        let j = self.resolvent(y)?;
        let fp = self.base.derivative(1, j);
        let j_prime = 1.0 / (1.0 + self.lambda * fp);

        // yd[i] = f_λ^{(i)}(y); jd[i] = J_λ^{(i)}(y), index 0 unused.
        let mut yd = vec![0.0; n + 1];
        let mut jd = vec![0.0; n + 1];
        yd[1] = fp * j_prime;
        jd[1] = j_prime;
        for order in 2..=n {
            let mut rhs = 0.0;
            for_each_partition(order, &mut |blocks: &[usize]| {
                // Skip the single partition containing J^{(order)}.
                if blocks[order - 1] == 1 {
                    return;
                }
                let k: usize = blocks.iter().sum();
                let mut term = self.base.derivative(k, j) * faa_di_bruno_coefficient(order, blocks);
                for (i, &b) in blocks.iter().enumerate() {
                    if b > 0 {
                        term *= jd[i + 1].powi(b as i32);
                    }
                }
                rhs += term;
            });
            yd[order] = rhs / (1.0 + self.lambda * fp);
            jd[order] = -self.lambda * yd[order];
        }
        Ok(yd[n])
    }

    /// f^{(n)}_{λβ}(y): mollified value for n = 0, and f'_λ ∗ ζ^{(n-1)}_β for
    /// n ≥ 1. Supported up to n = 3 (ζ derivatives up to order 2).
    pub fn mollified(&self, n: usize, y: f64) -> Result<f64, DriftError> {
        let moll = self.mollifier.as_ref().ok_or(DriftError::MissingMollifier)?;
        match n {
            0 => moll.convolve(0, y, |x| self.yosida(x)),
            1..=3 => moll.convolve(n - 1, y, |x| self.yosida_d1(x)),
            _ => Err(DriftError::DerivativeOrder { n, max: 3 }),
        }
    }

    /// sup over the grid of |f^{(n)}_λ(x)| / (1 + |x|^q).
    pub fn growth_envelope(&self, n: usize, grid: &[f64], q: u32) -> Result<f64, DriftError> {
        let mut sup = 0.0f64;
        for &x in grid {
            let v = self.yosida_dn(n, x)?.abs() / (1.0 + x.abs().powi(q as i32));
            sup = sup.max(v);
        }
        Ok(sup)
    }
}

/// n!/(b_1! b_2! ⋯ b_n! (1!)^{b_1} (2!)^{b_2} ⋯) for a partition of n.
fn faa_di_bruno_coefficient(n: usize, blocks: &[usize]) -> f64 {
    let mut coeff = factorial(n);
    for (i, &b) in blocks.iter().enumerate() {
        coeff /= factorial(b) * factorial(i + 1).powi(b as i32);
    }
    coeff
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Visits every (b_1,…,b_n) with b_1 + 2b_2 + … + n b_n = n.
fn for_each_partition(n: usize, visit: &mut dyn FnMut(&[usize])) {
    fn recurse(
        remaining: usize,
        part: usize,
        blocks: &mut [usize],
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if part == blocks.len() {
            if remaining == 0 {
                visit(blocks);
            }
            return;
        }
        let size = part + 1;
        let max_count = remaining / size;
        for count in 0..=max_count {
            blocks[part] = count;
            recurse(remaining - count * size, part + 1, blocks, visit);
        }
        blocks[part] = 0;
    }
    let mut blocks = vec![0usize; n];
    recurse(n, 0, &mut blocks, visit);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rd(base: DriftFunction, lambda: f64) -> RegularizedDrift {
        RegularizedDrift::new(base, lambda, NewtonSettings::default()).unwrap()
    }

    #[test]
    fn resolvent_linear_closed_form() {
        for &(a, lambda, y) in &[(2.0, 0.5, 3.0), (0.3, 1.0, -7.0), (5.0, 0.01, 0.4)] {
            let r = rd(DriftFunction::Linear { slope: a }, lambda);
            assert_relative_eq!(
                r.resolvent(y).unwrap(),
                y / (1.0 + lambda * a),
                max_relative = 1e-13
            );
            assert_relative_eq!(
                r.yosida(y).unwrap(),
                a * y / (1.0 + lambda * a),
                max_relative = 1e-12
            );
            assert_relative_eq!(r.yosida_d1(y).unwrap(), a / (1.0 + lambda * a), max_relative = 1e-13);
        }
    }

    #[test]
    fn resolvent_cubic_values() {
        let r = rd(DriftFunction::Cubic, 1.0);
        assert_relative_eq!(r.resolvent(2.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.yosida(2.0).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(r.resolvent(0.0).unwrap(), 0.0);
        assert_eq!(r.yosida(0.0).unwrap(), 0.0);
    }

    #[test]
    fn yosida_first_derivative_cubic() {
        let r = rd(DriftFunction::Cubic, 1.0);
        // J(2) = 1, f'(1) = 3: f'_λ = 3/4.
        assert_relative_eq!(r.yosida_d1(2.0).unwrap(), 0.75, max_relative = 1e-12);
        // Lipschitz bound 1/λ.
        for &lambda in &[1.0, 0.1, 0.01] {
            let r = rd(DriftFunction::Cubic, lambda);
            for i in 0..50 {
                let y = -5.0 + 0.2 * i as f64;
                let d = r.yosida_d1(y).unwrap();
                assert!(d >= 0.0 && d <= 1.0 / lambda + 1e-12);
            }
        }
    }

    #[test]
    fn yosida_second_derivative_matches_recursion_and_fd() {
        let r = rd(DriftFunction::Cubic, 1.0);
        let d2 = r.yosida_dn(2, 2.0).unwrap();
        assert_relative_eq!(d2, 3.0 / 32.0, max_relative = 1e-10);

        // Independent oracle: nested central second difference of f_λ.
        let h = 1e-4;
        let fd = (r.yosida(2.0 + h).unwrap() - 2.0 * r.yosida(2.0).unwrap()
            + r.yosida(2.0 - h).unwrap())
            / (h * h);
        assert_relative_eq!(d2, fd, max_relative = 1e-5);
    }

    #[test]
    fn yosida_dn_base_cases() {
        let r = rd(DriftFunction::Cubic, 0.3);
        for i in 0..20 {
            let y = -4.0 + 0.4 * i as f64;
            assert_relative_eq!(
                r.yosida_dn(1, y).unwrap(),
                r.yosida_d1(y).unwrap(),
                max_relative = 1e-13
            );
        }
        let lin = rd(DriftFunction::Linear { slope: 2.0 }, 0.5);
        for n in 2..=4 {
            assert_eq!(lin.yosida_dn(n, 1.7).unwrap(), 0.0);
        }
    }

    #[test]
    fn yosida_third_derivative_fd_oracle() {
        for &lambda in &[1.0, 0.1] {
            let r = rd(DriftFunction::Cubic, lambda);
            let h = 1e-2;
            for &y in &[0.7, 2.0, -1.3] {
                let d3 = r.yosida_dn(3, y).unwrap();
                let fd = (-0.5 * r.yosida(y - 2.0 * h).unwrap() + r.yosida(y - h).unwrap()
                    - r.yosida(y + h).unwrap()
                    + 0.5 * r.yosida(y + 2.0 * h).unwrap())
                    / (h * h * h);
                assert!(
                    (d3 - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                    "d3={d3} fd={fd} at y={y} lambda={lambda}"
                );
            }
        }
    }

    #[test]
    fn contraction_and_domination() {
        let r = rd(DriftFunction::LinearCubic, 0.2);
        let tol = 2.0 * r.newton().tolerance;
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
        };
        for _ in 0..500 {
            let (y1, y2) = (next(), next());
            let j1 = r.resolvent(y1).unwrap();
            let j2 = r.resolvent(y2).unwrap();
            assert!((j1 - j2).abs() <= (y1 - y2).abs() + tol);
            let f1 = r.yosida(y1).unwrap();
            assert!(f1.abs() <= r.base().eval(y1).abs() + 1e-12);
            let f2 = r.yosida(y2).unwrap();
            assert!((f1 - f2).abs() <= (y1 - y2).abs() / r.lambda() + tol / r.lambda());
        }
    }

    #[test]
    fn yosida_nondecreasing_on_sorted_grid() {
        for &lambda in &[1.0, 0.1, 0.01] {
            for f in [DriftFunction::Cubic, DriftFunction::LinearCubic] {
                let r = rd(f, lambda);
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=200 {
                    let y = -5.0 + 0.05 * i as f64;
                    let v = r.yosida(y).unwrap();
                    assert!(v >= prev - 1e-12, "f_lambda decreased at y={y}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn pointwise_lambda_ladder_converges() {
        let ladder = [1.0, 0.3, 0.1, 0.03, 0.01];
        for i in 0..=40 {
            let y = -4.0 + 0.2 * i as f64;
            let f = DriftFunction::Cubic.eval(y);
            let mut prev = f64::INFINITY;
            for &lambda in &ladder {
                let gap = (rd(DriftFunction::Cubic, lambda).yosida(y).unwrap() - f).abs();
                assert!(gap <= prev + 1e-12, "gap {gap} grew at lambda={lambda} y={y}");
                prev = gap;
            }
        }
    }

    #[test]
    fn mollifier_mass_and_positivity() {
        for &beta in &[1.0, 0.3, 0.05] {
            let m = Mollifier::new(beta).unwrap();
            assert!((m.discrete_mass() - 1.0).abs() < 1e-6, "mass {}", m.discrete_mass());
            for i in 0..50 {
                let x = -beta + 2.0 * beta * i as f64 / 49.0;
                assert!(m.zeta_beta(0, x) >= 0.0);
            }
        }
        assert!(Mollifier::new(0.0).is_err());
        assert!(Mollifier::new(1.5).is_err());
    }

    #[test]
    fn mollified_linear_is_exact_at_center() {
        let r = rd(DriftFunction::Linear { slope: 3.0 }, 0.5)
            .with_mollifier(0.25)
            .unwrap();
        for &y in &[0.0, 1.0, -2.5] {
            let m = r.mollified(0, y).unwrap();
            let f = r.yosida(y).unwrap();
            assert_relative_eq!(m, f, max_relative = 1e-13, epsilon = 1e-13);
        }
    }

    #[test]
    fn mollified_requires_width_and_bounded_order() {
        let r = rd(DriftFunction::Cubic, 0.5);
        assert!(matches!(r.mollified(0, 1.0), Err(DriftError::MissingMollifier)));
        let r = r.with_mollifier(0.1).unwrap();
        assert!(matches!(r.mollified(4, 1.0), Err(DriftError::DerivativeOrder { .. })));
    }

    #[test]
    fn mollified_beta_ladder_shrinks_gap() {
        let base = DriftFunction::Cubic;
        let grid: Vec<f64> = (0..=20).map(|i| -2.0 + 0.2 * i as f64).collect();
        let mut prev = f64::INFINITY;
        for &beta in &[0.5, 0.2, 0.08] {
            let r = rd(base.clone(), 0.2).with_mollifier(beta).unwrap();
            let mut gap = 0.0f64;
            for &y in &grid {
                gap = gap.max((r.mollified(0, y).unwrap() - r.yosida(y).unwrap()).abs());
            }
            assert!(gap <= prev, "gap {gap} grew at beta={beta}");
            prev = gap;
        }
    }

    #[test]
    fn mollified_envelope_constant_uniform_in_beta() {
        // Fit N at beta = 1 and reuse for smaller widths (p = 3 for the cubic).
        let base = DriftFunction::Cubic;
        let grid: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
        let fit = rd(base.clone(), 0.5).with_mollifier(1.0).unwrap();
        let mut n_const = 0.0f64;
        for &y in &grid {
            n_const = n_const.max(fit.mollified(0, y).unwrap().abs() / (1.0 + y.abs().powi(3)));
        }
        for &beta in &[0.5, 0.1, 0.02] {
            let r = rd(base.clone(), 0.5).with_mollifier(beta).unwrap();
            for &y in &grid {
                let v = r.mollified(0, y).unwrap().abs();
                assert!(
                    v <= n_const * (1.0 + y.abs().powi(3)) * (1.0 + 1e-9),
                    "envelope violated at beta={beta}, y={y}"
                );
            }
        }
    }

    #[test]
    fn growth_envelope_cubic() {
        let grid: Vec<f64> = (0..=200).map(|i| -5.0 + 0.05 * i as f64).collect();
        let base = DriftFunction::Cubic;
        // |f_λ| ≤ |f| makes the n=0 envelope no larger than the base one.
        for &lambda in &[1.0, 0.1, 0.01] {
            let r = rd(base.clone(), lambda);
            let e0 = r.growth_envelope(0, &grid, 3).unwrap();
            assert!(e0 <= base.growth_envelope(0, &grid, 3) + 1e-12);
        }
        // f''_λ envelopes with q = 1 increase toward the λ→0 limit envelope of
        // f'' = 6x; the λ-independent bound is that limit, and the measured
        // spread across {1, 0.1, 0.01} is ≈ 4.1x.
        let bound = base.growth_envelope(2, &grid, 1);
        let envs: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&l| rd(base.clone(), l).growth_envelope(2, &grid, 1).unwrap())
            .collect();
        for e in &envs {
            assert!(*e <= bound + 1e-12, "envelope {e} above limit {bound}");
        }
        let (lo, hi) = envs
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        assert!(hi / lo < 5.0, "envelopes {envs:?}");

        // Top-order derivative: f'''_λ(0) = 6 pins the (n=3, q=0) envelope at
        // every λ, so that instance is λ-uniform within a 2x band.
        let top: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&l| rd(base.clone(), l).growth_envelope(3, &grid, 0).unwrap())
            .collect();
        let (lo, hi) = top
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        assert!(hi / lo < 2.0, "top-order envelopes {top:?}");
    }

    #[test]
    fn dn_converges_to_base_derivative() {
        // Pointwise convergence f^{(n)}_λ → f^{(n)}; the gap is only
        // guaranteed monotone for n = 0.
        let base = DriftFunction::Cubic;
        for n in 0..=3usize {
            for &y in &[0.5, -1.5, 3.0] {
                let exact = base.derivative(n, y);
                let gaps: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
                    .iter()
                    .map(|&l| (rd(base.clone(), l).yosida_dn(n, y).unwrap() - exact).abs())
                    .collect();
                if n == 0 {
                    for w in gaps.windows(2) {
                        assert!(w[1] <= w[0] + 1e-12, "n=0 gap grew at y={y}: {gaps:?}");
                    }
                }
                let last = *gaps.last().unwrap();
                assert!(
                    last <= 0.25 * gaps[0].max(1e-6),
                    "n={n} y={y} (exact {exact}): gaps {gaps:?}"
                );
            }
        }
    }

    #[test]
    fn polynomial_monotonicity_check() {
        assert!(DriftFunction::polynomial(vec![0.0, 1.0, 0.0, 2.0]).is_ok());
        assert!(matches!(
            DriftFunction::polynomial(vec![0.0, -1.0]),
            Err(DriftError::NotMonotone { .. })
        ));
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(8);
        // Degree-15 exactness: ∫ x^14 = 2/15.
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(i14, 2.0 / 15.0, max_relative = 1e-12);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-14);
    }
}
