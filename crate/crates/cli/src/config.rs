//! Scenario files: flat `key = value` lines with bracketed lists.

use std::f64::consts::PI;

use hybrid_attitude::controllers::{ClosedLoop, ControllerGains, ControllerKind, LoopState};
use hybrid_attitude::hybrid::{Priority, SolverConfig};
use hybrid_attitude::potential::{build_params, Bounded, PotentialError, PotentialParams};
use hybrid_attitude::rigid_body::{check_acceleration, error_from, BodyState, Inertia, MeasurementNoise, RefState, ReferenceProfile};
use hybrid_attitude::so3::angle_axis;
use hybrid_attitude::{Mat3, Rotation, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

fn d_a() -> [f64; 3] {
    [2.0, 4.0, 6.0]
}
fn d_k_r() -> f64 {
    1.5
}
fn d_k_omega() -> f64 {
    0.2
}
fn d_k_theta() -> f64 {
    50.0
}
fn d_k_zeta() -> f64 {
    150.0
}
fn d_k_beta() -> f64 {
    3.0
}
fn d_gamma_gain() -> [f64; 3] {
    [30.0; 3]
}
fn d_rho() -> f64 {
    0.0146
}
fn d_delta_prime() -> f64 {
    0.162
}
fn d_inertia() -> [f64; 3] {
    [0.0159, 0.0150, 0.0297]
}
fn d_e3() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn d_reference() -> String {
    "sine".into()
}
fn d_m_bound() -> f64 {
    2.0
}
fn d_dt() -> f64 {
    1e-3
}
fn d_t_max() -> f64 {
    20.0
}
fn d_j_max() -> usize {
    50
}
fn d_priority() -> String {
    "jump".into()
}
fn d_stride() -> usize {
    10
}

/// Everything needed to reproduce a batch of closed-loop runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Controller kinds: basic, non_hybrid, smooth, smooth_relaxed,
    /// velocity_free.
    pub controllers: Vec<String>,

    #[serde(default = "d_a")]
    pub a_diag: [f64; 3],
    /// Θ in radians. Exactly one of `theta_set` and `theta_set_pi` is given.
    pub theta_set: Option<Vec<f64>>,
    /// Θ in multiples of π.
    pub theta_set_pi: Option<Vec<f64>>,
    /// Warping axis; constructed from the spectrum of A when absent.
    pub u: Option<[f64; 3]>,
    /// γ values to sweep. Exactly one of `gamma` and `gamma_frac` is given.
    pub gamma: Option<Vec<f64>>,
    /// γ values as fractions of 4Δ*/π².
    pub gamma_frac: Option<Vec<f64>>,
    /// δ directly. Exactly one of `delta` and `delta_frac` is given.
    pub delta: Option<f64>,
    /// δ as a fraction of (4Δ*/π² - γ) θ_m²/2.
    pub delta_frac: Option<f64>,

    #[serde(default = "d_k_r")]
    pub k_r: f64,
    #[serde(default = "d_k_omega")]
    pub k_omega: f64,
    #[serde(default = "d_k_theta")]
    pub k_theta: f64,
    #[serde(default = "d_k_zeta")]
    pub k_zeta: f64,
    #[serde(default = "d_k_beta")]
    pub k_beta: f64,
    /// Diagonal of Γ.
    #[serde(default = "d_gamma_gain")]
    pub gamma_gain_diag: [f64; 3],
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_delta_prime")]
    pub delta_prime: f64,

    #[serde(default = "d_inertia")]
    pub inertia_diag: [f64; 3],

    #[serde(default)]
    pub r0_angle: f64,
    #[serde(default = "d_e3")]
    pub r0_axis: [f64; 3],
    #[serde(default)]
    pub omega0: [f64; 3],
    #[serde(default)]
    pub rr0_angle: f64,
    #[serde(default = "d_e3")]
    pub rr0_axis: [f64; 3],
    #[serde(default)]
    pub omega_r0: [f64; 3],
    #[serde(default)]
    pub theta0: f64,
    #[serde(default)]
    pub zeta0: [f64; 3],
    #[serde(default)]
    pub rbar0_angle: f64,
    #[serde(default = "d_e3")]
    pub rbar0_axis: [f64; 3],
    #[serde(default)]
    pub theta_bar0: f64,

    /// Named reference acceleration profile.
    #[serde(default = "d_reference")]
    pub reference: String,
    /// Bound m on the reference acceleration norm.
    #[serde(default = "d_m_bound")]
    pub m_bound: f64,

    #[serde(default)]
    pub noise_var_r: f64,
    #[serde(default)]
    pub noise_var_w: f64,
    #[serde(default)]
    pub seed: u64,

    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_max")]
    pub t_max: f64,
    #[serde(default = "d_j_max")]
    pub j_max: usize,
    /// `jump` or `flow`.
    #[serde(default = "d_priority")]
    pub priority: String,
    /// Write every n-th flow sample to CSV; jump samples are always kept.
    #[serde(default = "d_stride")]
    pub csv_stride: usize,
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
}

/// One closed-loop simulation of a scenario.
#[derive(Debug, Clone)]
pub struct Member {
    pub label: String,
    pub kind: ControllerKind,
    pub closed_loop: ClosedLoop,
    pub x0: Vec<f64>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub members: Vec<Member>,
    pub solver: SolverConfig,
    pub csv_stride: usize,
    pub warnings: Vec<String>,
}

fn unit_axis(field: &'static str, v: [f64; 3]) -> Result<Vec3, ConfigError> {
    let v = Vec3::from(v);
    let n = v.norm();
    if !(n.is_finite() && n > 1e-12) {
        return Err(invalid(field, "axis must be a nonzero finite vector"));
    }
    Ok(v / n)
}

fn rotation(angle_field: &'static str, angle: f64, axis_field: &'static str, axis: [f64; 3]) -> Result<Rotation, ConfigError> {
    if !angle.is_finite() {
        return Err(invalid(angle_field, "angle must be finite"));
    }
    angle_axis(angle, &unit_axis(axis_field, axis)?).map_err(|e| invalid(axis_field, e.to_string()))
}

fn exactly_one<T>(a: Option<T>, a_name: &str, b: Option<T>, b_name: &str, field: &'static str) -> Result<(T, bool), ConfigError> {
    match (a, b) {
        (Some(x), None) => Ok((x, true)),
        (None, Some(x)) => Ok((x, false)),
        (Some(_), Some(_)) => Err(invalid(field, format!("give either `{a_name}` or `{b_name}`, not both"))),
        (None, None) => Err(invalid(field, format!("one of `{a_name}` or `{b_name}` is required"))),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are plain values")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dt) = o.dt {
            self.dt = dt;
        }
        if let Some(t_max) = o.t_max {
            self.t_max = t_max;
        }
    }

    fn theta_set(&self) -> Result<Vec<f64>, ConfigError> {
        let (values, radians) = exactly_one(
            self.theta_set.clone(),
            "theta_set",
            self.theta_set_pi.clone(),
            "theta_set_pi",
            "theta_set",
        )?;
        Ok(if radians { values } else { values.iter().map(|v| v * PI).collect() })
    }

    fn params_for(&self, gamma: Bounded, theta_set: &[f64]) -> Result<PotentialParams, ConfigError> {
        let delta = match (self.delta, self.delta_frac) {
            (Some(d), None) => Bounded::Value(d),
            (None, Some(f)) => Bounded::Fraction(f),
            (Some(_), Some(_)) => return Err(invalid("delta", "give either `delta` or `delta_frac`, not both")),
            (None, None) => return Err(invalid("delta", "one of `delta` or `delta_frac` is required")),
        };
        let u = self.u.map(|u| unit_axis("u", u)).transpose()?;
        let gamma_field = if matches!(gamma, Bounded::Fraction(_)) { "gamma_frac" } else { "gamma" };
        let theta_field = if self.theta_set.is_some() { "theta_set" } else { "theta_set_pi" };
        build_params(Mat3::from_diagonal(&Vec3::from(self.a_diag)), theta_set.to_vec(), u, gamma, delta).map_err(|e| {
            let field = match &e {
                PotentialError::NotSymmetric(_)
                | PotentialError::NotPositiveDefinite(_)
                | PotentialError::RepeatedTopEigenvalue(_) => "a_diag",
                PotentialError::EmptyThetaSet | PotentialError::ThetaOutOfRange(_) => theta_field,
                PotentialError::NonUnitAxis(_) | PotentialError::NonPositiveGap(_) => "u",
                PotentialError::GammaOutOfRange { .. } => gamma_field,
                PotentialError::DeltaOutOfRange { .. } => "delta",
                PotentialError::FractionOutOfRange { name, .. } => name,
            };
            invalid(field, e.to_string())
        })
    }

    fn gains(&self) -> ControllerGains {
        ControllerGains {
            k_r: self.k_r,
            k_omega: self.k_omega,
            k_theta: self.k_theta,
            k_zeta: self.k_zeta,
            k_beta: self.k_beta,
            gamma_mat: Mat3::from_diagonal(&Vec3::from(self.gamma_gain_diag)),
            rho: self.rho,
            delta_prime: self.delta_prime,
        }
    }

    fn solver(&self) -> Result<SolverConfig, ConfigError> {
        let priority = match self.priority.as_str() {
            "jump" => Priority::Jump,
            "flow" => Priority::Flow,
            other => return Err(invalid("priority", format!("expected `jump` or `flow`, got `{other}`"))),
        };
        let cfg = SolverConfig {
            dt: self.dt,
            t_max: self.t_max,
            j_max: self.j_max,
            priority,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| {
            let field = if self.dt.is_nan() || self.dt <= 0.0 {
                "dt"
            } else if self.j_max < 1 {
                "j_max"
            } else {
                "t_max"
            };
            invalid(field, e.to_string())
        })?;
        Ok(cfg)
    }

    fn initial_state(&self) -> Result<LoopState, ConfigError> {
        let body = BodyState {
            r: rotation("r0_angle", self.r0_angle, "r0_axis", self.r0_axis)?,
            omega: Vec3::from(self.omega0),
        };
        let reference = RefState {
            rr: rotation("rr0_angle", self.rr0_angle, "rr0_axis", self.rr0_axis)?,
            omega_r: Vec3::from(self.omega_r0),
        };
        let rbar = rotation("rbar0_angle", self.rbar0_angle, "rbar0_axis", self.rbar0_axis)?;
        let e = error_from(&body, &reference);
        Ok(LoopState {
            re: e.re,
            theta: self.theta0,
            omega_e: e.omega_e,
            rr: reference.rr,
            omega_r: reference.omega_r,
            zeta: Vec3::from(self.zeta0),
            rtilde: rbar.transpose() * e.re,
            theta_bar: self.theta_bar0,
        })
    }

    /// Validates every field and assembles the runs.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a nonempty file-name-safe string"));
        }
        if self.controllers.is_empty() {
            return Err(invalid("controllers", "at least one controller is required"));
        }
        let kinds = self
            .controllers
            .iter()
            .map(|c| ControllerKind::by_name(c).map_err(|e| invalid("controllers", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if self.csv_stride < 1 {
            return Err(invalid("csv_stride", "must be at least 1"));
        }
        let solver = self.solver()?;
        let theta_set = self.theta_set()?;
        let inertia = Inertia::new(Mat3::from_diagonal(&Vec3::from(self.inertia_diag)))
            .map_err(|e| invalid("inertia_diag", e.to_string()))?;
        let reference = ReferenceProfile::by_name(&self.reference).map_err(|e| invalid("reference", e.to_string()))?;
        if self.m_bound.is_nan() || self.m_bound <= 0.0 {
            return Err(invalid("m_bound", "must be positive"));
        }
        let steps = (self.t_max / self.dt).ceil() as usize;
        for k in 0..=steps {
            let t = (k as f64 * self.dt).min(self.t_max);
            check_acceleration(t, &reference.z(t), self.m_bound).map_err(|e| invalid("m_bound", e.to_string()))?;
        }
        let noise = MeasurementNoise::from_variances(self.noise_var_r, self.noise_var_w, self.seed)
            .map_err(|e| invalid("noise_var_r", e.to_string()))?;
        let x0 = self.initial_state()?.to_vec();
        let gains = self.gains();

        let (gammas, direct) = exactly_one(self.gamma.clone(), "gamma", self.gamma_frac.clone(), "gamma_frac", "gamma")?;
        if gammas.is_empty() {
            return Err(invalid(if direct { "gamma" } else { "gamma_frac" }, "list is empty"));
        }
        let bounded = |g: f64| if direct { Bounded::Value(g) } else { Bounded::Fraction(g) };
        let sweep: Vec<(f64, PotentialParams)> = gammas
            .iter()
            .map(|&g| self.params_for(bounded(g), &theta_set).map(|p| (g, p)))
            .collect::<Result<_, _>>()?;

        let mut members = Vec::new();
        let mut warnings = Vec::new();
        for kind in kinds {
            // The non-hybrid law ignores γ: run it once.
            let runs = if kind.is_hybrid() { &sweep[..] } else { &sweep[..1] };
            for (g, params) in runs {
                for w in gains.validate(kind, params).map_err(|e| invalid("controllers", e.to_string()))? {
                    let text = format!("{kind}: {w}");
                    if !warnings.contains(&text) {
                        warnings.push(text);
                    }
                }
                let label = if runs.len() == 1 {
                    kind.name().to_string()
                } else if direct {
                    format!("{}_g{}", kind.name(), g)
                } else {
                    format!("{}_gf{}", kind.name(), g)
                };
                let closed_loop = ClosedLoop::new(kind, params.clone(), gains.clone(), inertia, reference, self.m_bound)
                    .map_err(|e| invalid("controllers", e.to_string()))?
                    .with_noise(noise.clone());
                members.push(Member {
                    label,
                    kind,
                    closed_loop,
                    x0: x0.clone(),
                });
            }
        }
        Ok(Scenario {
            name: self.name.clone(),
            members,
            solver,
            csv_stride: self.csv_stride,
            warnings,
        })
    }
}

/// Scenario files shipped with the binary.
pub const BUNDLED: [(&str, &str); 2] = [
    ("fig3", include_str!("../scenarios/fig3.toml")),
    ("fig4", include_str!("../scenarios/fig4.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn list_scenarios() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}
