//! Experiment configuration: a single TOML tree, schema-validated with
//! unknown keys rejected. The defaults-resolved form is echoed into the
//! output directory and re-parses to an identical configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spdelab_core::drift::{DriftFunction, NewtonSettings};
use spdelab_core::solver::{DriftSpec, DriftVariant, InitialData, NoiseModel, SolverConfig};
use spdelab_core::spectral::SineBasis;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub solver: SolverSection,
    pub noise: NoiseSection,
    pub drift: DriftSection,
    #[serde(default)]
    pub probes: Vec<ProbeSection>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub lower_bound: LowerBoundSection,
    #[serde(default)]
    pub malliavin: MalliavinSection,
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dimension: usize,
    pub modes_per_axis: usize,
    pub steps: usize,
    pub horizon: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub initial: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<ModeAmplitude>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: "zero".into(),
            modes: None,
            amplitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeAmplitude {
    pub index: Vec<u32>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton: Option<NewtonSection>,
}

fn default_variant() -> String {
    "exact".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_paths: usize,
    pub with_malliavin: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            n_paths: 1000,
            with_malliavin: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub grid_points: usize,
    pub span_sigmas: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_grid: Option<Vec<f64>>,
    pub negative_moment_order: f64,
    pub weakened_condition_deltas: Vec<f64>,
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            grid_points: 401,
            span_sigmas: 6.0,
            bandwidth: None,
            epsilon_grid: None,
            negative_moment_order: 2.0,
            weakened_condition_deltas: vec![0.1, 0.03, 0.01, 0.003],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSection {
    pub gamma: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for LowerBoundSection {
    fn default() -> Self {
        LowerBoundSection {
            gamma: 0.5,
            t_min: 1e-4,
            t_max: 1.0,
            points: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinSection {
    pub n_paths: usize,
    pub with_second: bool,
}

impl Default for MalliavinSection {
    fn default() -> Self {
        MalliavinSection {
            n_paths: 4,
            with_second: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |msg: String| Err(CliError::Validation(msg));
        if self.solver.dimension == 0 || self.solver.modes_per_axis == 0 {
            return v("dimension and modes_per_axis must be at least 1".into());
        }
        if self.solver.steps == 0 {
            return v("steps must be at least 1".into());
        }
        if !(self.solver.horizon > 0.0) {
            return v(format!("horizon must be positive, got {}", self.solver.horizon));
        }
        if !(self.solver.eta >= 0.0) {
            return v(format!("eta must be nonnegative, got {}", self.solver.eta));
        }
        match self.solver.initial.kind.as_str() {
            "zero" => {}
            "modes" => {
                if self.solver.initial.modes.is_none() {
                    return v("initial kind 'modes' requires a modes list".into());
                }
            }
            "parabola" => {
                if self.solver.initial.amplitude.is_none() {
                    return v("initial kind 'parabola' requires an amplitude".into());
                }
            }
            other => return v(format!("unknown initial kind '{other}'")),
        }
        match self.noise.kind.as_str() {
            "identity" => {
                if self.noise.m_q.is_some() || self.noise.q.is_some() {
                    return v("identity noise takes neither m_q nor q".into());
                }
            }
            "smoothed" => {
                if self.noise.m_q.is_none() {
                    return v("smoothed noise requires m_q".into());
                }
            }
            "custom" => {
                if self.noise.q.is_none() {
                    return v("custom noise requires the eigenvalue list q".into());
                }
            }
            other => return v(format!("unknown noise kind '{other}'")),
        }
        match self.drift.kind.as_str() {
            "cubic" | "linear_cubic" | "quasi_monotone_cubic_sine" => {}
            "linear" => match self.drift.slope {
                None => return v("linear drift requires a slope".into()),
                Some(slope) if slope < 0.0 => {
                    return v(format!("linear drift must be nondecreasing, got slope {slope}"))
                }
                Some(_) => {}
            },
            "polynomial" => {
                if self.drift.coeffs.is_none() {
                    return v("polynomial drift requires a coefficient list".into());
                }
            }
            other => return v(format!("unknown drift kind '{other}'")),
        }
        match self.drift.variant.as_str() {
            "exact" => {
                if self.drift.lambda.is_some() || self.drift.beta.is_some() {
                    return v("exact drift variant takes neither lambda nor beta".into());
                }
            }
            "yosida" => {
                if self.drift.lambda.is_none() {
                    return v("yosida variant requires lambda".into());
                }
                if self.drift.beta.is_some() {
                    return v("beta is only meaningful for the mollified variant".into());
                }
            }
            "mollified" => {
                if self.drift.lambda.is_none() || self.drift.beta.is_none() {
                    return v("mollified variant requires both lambda and beta".into());
                }
            }
            other => return v(format!("unknown drift variant '{other}'")),
        }
        if let Some(lambda) = self.drift.lambda {
            if !(lambda > 0.0) {
                return v(format!("lambda must be positive, got {lambda}"));
            }
        }
        if let Some(beta) = self.drift.beta {
            if !(beta > 0.0 && beta <= 1.0) {
                return v(format!("beta must lie in (0, 1], got {beta}"));
            }
        }
        for probe in &self.probes {
            if probe.x.len() != self.solver.dimension {
                return v(format!(
                    "probe x {:?} has dimension {}, solver dimension is {}",
                    probe.x,
                    probe.x.len(),
                    self.solver.dimension
                ));
            }
        }
        if self.ensemble.n_paths == 0 {
            return v("ensemble.n_paths must be at least 1".into());
        }
        if !(self.lower_bound.gamma > 0.0 && self.lower_bound.gamma < 2.0) {
            return v(format!(
                "lower_bound.gamma must lie in (0, 2), got {}",
                self.lower_bound.gamma
            ));
        }
        if !(self.lower_bound.t_min > 0.0 && self.lower_bound.t_min < self.lower_bound.t_max) {
            return v("lower_bound time window must satisfy 0 < t_min < t_max".into());
        }
        if self.lower_bound.t_max > 1.0 {
            return v("lower_bound.t_max must not exceed 1".into());
        }
        if self.lower_bound.points < 2 {
            return v("lower_bound.points must be at least 2".into());
        }
        if self.density.grid_points < 2 {
            return v("density.grid_points must be at least 2".into());
        }
        Ok(())
    }

    pub fn basis(&self) -> SineBasis {
        SineBasis::new(self.solver.dimension, self.solver.modes_per_axis)
    }

    pub fn noise_model(&self) -> Result<NoiseModel, CliError> {
        let basis = self.basis();
        let model = match self.noise.kind.as_str() {
            "identity" => NoiseModel::identity(basis)
                .map_err(|e| CliError::Validation(e.to_string()))?,
            "smoothed" => NoiseModel::smoothed(basis, self.noise.m_q.unwrap()),
            "custom" => NoiseModel::custom(basis, self.noise.q.clone().unwrap())
                .map_err(|e| CliError::Validation(e.to_string()))?,
            _ => unreachable!("validated"),
        };
        Ok(model)
    }

    fn newton(&self) -> NewtonSettings {
        match &self.drift.newton {
            Some(n) => NewtonSettings {
                tolerance: n.tolerance,
                max_iterations: n.max_iterations,
            },
            None => NewtonSettings::default(),
        }
    }

    fn variant(&self) -> DriftVariant {
        match self.drift.variant.as_str() {
            "exact" => DriftVariant::Exact,
            "yosida" => DriftVariant::Yosida {
                lambda: self.drift.lambda.unwrap(),
            },
            "mollified" => DriftVariant::Mollified {
                lambda: self.drift.lambda.unwrap(),
                beta: self.drift.beta.unwrap(),
            },
            _ => unreachable!("validated"),
        }
    }

    /// Normalized drift: quasi-monotone kinds are converted to their monotone
    /// part with the Lipschitz norm moved into η (here ‖sin‖_Lip = 1).
    pub fn drift_normalized(&self) -> Result<(DriftSpec, f64), CliError> {
        let (function, extra_eta) = match self.drift.kind.as_str() {
            "cubic" => (DriftFunction::Cubic, 0.0),
            "linear_cubic" => (DriftFunction::LinearCubic, 0.0),
            "linear" => (
                DriftFunction::Linear {
                    slope: self.drift.slope.unwrap(),
                },
                0.0,
            ),
            "quasi_monotone_cubic_sine" => (DriftFunction::CubicSine { shift: 1.0 }, 1.0),
            "polynomial" => (
                DriftFunction::polynomial(self.drift.coeffs.clone().unwrap())
                    .map_err(|e| CliError::Validation(e.to_string()))?,
                0.0,
            ),
            _ => unreachable!("validated"),
        };
        Ok((
            DriftSpec {
                function,
                variant: self.variant(),
                newton: self.newton(),
            },
            self.solver.eta + extra_eta,
        ))
    }

    /// The un-normalized form of a quasi-monotone drift (net nonlinearity with
    /// the configured η), kept for the equivalence self-test.
    pub fn drift_raw(&self) -> Result<(DriftSpec, f64), CliError> {
        if self.drift.kind == "quasi_monotone_cubic_sine" {
            Ok((
                DriftSpec {
                    function: DriftFunction::CubicSine { shift: 0.0 },
                    variant: self.variant(),
                    newton: self.newton(),
                },
                self.solver.eta,
            ))
        } else {
            self.drift_normalized()
        }
    }

    fn initial(&self) -> InitialData {
        match self.solver.initial.kind.as_str() {
            "zero" => InitialData::Zero,
            "modes" => InitialData::Modes(
                self.solver
                    .initial
                    .modes
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|m| (m.index.clone(), m.amplitude))
                    .collect(),
            ),
            "parabola" => InitialData::Parabola {
                amplitude: self.solver.initial.amplitude.unwrap(),
            },
            _ => unreachable!("validated"),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let (drift, eta) = self.drift_normalized()?;
        let config = SolverConfig {
            basis: self.basis(),
            noise: self.noise_model()?,
            drift,
            eta,
            horizon: self.solver.horizon,
            steps: self.solver.steps,
            initial: self.initial(),
            seed: self.seed,
        };
        config
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(config)
    }

    pub fn probes(&self) -> Vec<spdelab_core::density::Probe> {
        self.probes
            .iter()
            .map(|p| spdelab_core::density::Probe {
                t: p.t,
                x: p.x.clone(),
            })
            .collect()
    }

    /// Geometric time grid of the lower-bound window.
    pub fn lower_bound_grid(&self) -> Vec<f64> {
        let lb = &self.lower_bound;
        let ratio = lb.t_max / lb.t_min;
        (0..lb.points)
            .map(|i| lb.t_min * ratio.powf(i as f64 / (lb.points - 1) as f64))
            .collect()
    }

    /// Serializes the defaults-resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
