//! Bloch-vector dynamics of a driven two-level system with Lindblad
//! dephasing (`sqrt(Γz) σz`), absorption (`sqrt(Γ+) σ+`) and emission
//! (`sqrt(Γ-) σ-`).
//!
//! Components are `x = ρ01 + ρ10`, `y = 2 Im ρ01`, `z = ρ00 - ρ11`, with
//! `|0⟩` the `z = +1` state and `σ+ = |0⟩⟨1|`, so that absorption pumps
//! toward `z = +1`. In these variables
//! `ρ = (I + x σx - y σy + z σz) / 2`, the unitary part of the generator is
//! antisymmetric and the state stays inside the unit ball. ħ = 1.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};
use crate::expm::expm;

/// Control Hamiltonian `H = (d/2)(sinθ σx + cosθ σz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub d: f64,
    pub theta: f64,
}

impl HamiltonianParams {
    pub fn new(d: f64, theta: f64) -> Result<Self> {
        let h = Self { d, theta };
        h.validate()?;
        Ok(h)
    }

    /// No driving field.
    pub const fn idle() -> Self {
        Self { d: 0.0, theta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.d, "Hamiltonian magnitude d")?;
        ensure_finite(self.theta, "Hamiltonian angle theta")?;
        if self.d < 0.0 {
            return Err(Error::InvalidInput(format!("d must be >= 0, got {}", self.d)));
        }
        if !(0.0..=PI).contains(&self.theta) {
            return Err(Error::InvalidInput(format!(
                "theta must lie in [0, pi], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Coefficient of σz in units of d, i.e. `d cosθ`.
    pub fn sigma_z_component(&self) -> f64 {
        self.d * self.theta.cos()
    }

    pub fn sigma_x_component(&self) -> f64 {
        self.d * self.theta.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoherenceRates {
    #[serde(default)]
    pub gamma_z: f64,
    #[serde(default)]
    pub gamma_plus: f64,
    #[serde(default)]
    pub gamma_minus: f64,
}

impl DecoherenceRates {
    pub fn new(gamma_z: f64, gamma_plus: f64, gamma_minus: f64) -> Result<Self> {
        let r = Self { gamma_z, gamma_plus, gamma_minus };
        r.validate()?;
        Ok(r)
    }

    pub fn dephasing(gamma_z: f64) -> Self {
        Self { gamma_z, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.gamma_z, "gamma_z"),
            (self.gamma_plus, "gamma_plus"),
            (self.gamma_minus, "gamma_minus"),
        ] {
            ensure_finite(v, what)?;
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("{what} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_unitary(&self) -> bool {
        self.gamma_z == 0.0 && self.gamma_plus == 0.0 && self.gamma_minus == 0.0
    }

    /// Population relaxation rate `Γ+ + Γ-`.
    pub fn population_rate(&self) -> f64 {
        self.gamma_plus + self.gamma_minus
    }

    /// Decay rate of the coherences, `2Γz + (Γ+ + Γ-)/2`.
    pub fn coherence_rate(&self) -> f64 {
        2.0 * self.gamma_z + 0.5 * self.population_rate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Slack allowed on `|r| <= 1` for propagated states.
pub const BLOCH_NORM_TOLERANCE: f64 = 1e-9;

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Pure state along the measurement axis, `z = ±1`.
    pub const fn polarized(z: f64) -> Self {
        Self { x: 0.0, y: 0.0, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { x: v[0], y: v[1], z: v[2] }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite(self.x, "Bloch x")?;
        ensure_finite(self.y, "Bloch y")?;
        ensure_finite(self.z, "Bloch z")?;
        if self.norm() > 1.0 + BLOCH_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "Bloch vector norm {} exceeds 1",
                self.norm()
            )));
        }
        Ok(())
    }
}

/// `dr/dt = linear_part · r + constant_part`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGenerator {
    pub linear_part: Matrix3<f64>,
    pub constant_part: Vector3<f64>,
}

impl AffineGenerator {
    pub fn apply(&self, r: &BlochVector) -> Vector3<f64> {
        self.linear_part * r.as_vector() + self.constant_part
    }

    /// Homogeneous 4×4 form acting on `(x, y, z, 1)`.
    pub fn augmented(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear_part);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.constant_part);
        m
    }

    /// Exact one-step propagator `exp(augmented · dt)`.
    pub fn step_propagator(&self, dt: f64) -> Result<Matrix4<f64>> {
        expm(&(self.augmented() * dt)).ok_or(Error::NonFinite("step propagator"))
    }
}

/// `z(t)` for the undamped system prepared in `z = +1`.
pub fn closed_evolution_z(h: &HamiltonianParams, t: f64) -> f64 {
    let (s, c) = h.theta.sin_cos();
    (h.d * t).cos() * s * s + c * c
}

pub fn build_generator(h: &HamiltonianParams, rates: &DecoherenceRates) -> AffineGenerator {
    let (s, c) = h.theta.sin_cos();
    let (dc, ds) = (h.d * c, h.d * s);
    let g_perp = rates.coherence_rate();
    let g_pop = rates.population_rate();
    #[rustfmt::skip]
    let linear_part = Matrix3::new(
        -g_perp, dc,      0.0,
        -dc,     -g_perp, ds,
        0.0,     -ds,     -g_pop,
    );
    let constant_part = Vector3::new(0.0, 0.0, rates.gamma_plus - rates.gamma_minus);
    AffineGenerator { linear_part, constant_part }
}

/// Bloch vectors at `t = 0, dt, …, (n_t - 1) dt`.
pub fn propagate(
    h: &HamiltonianParams,
    rates: &DecoherenceRates,
    init: BlochVector,
    dt: f64,
    n_t: usize,
) -> Result<Vec<BlochVector>> {
    h.validate()?;
    rates.validate()?;
    init.validate()?;
    ensure_finite(dt, "time step")?;
    if dt <= 0.0 {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if n_t == 0 {
        return Err(Error::InvalidInput("n_t must be >= 1".into()));
    }
    let step = build_generator(h, rates).step_propagator(dt)?;
    let mut state = Vector4::new(init.x, init.y, init.z, 1.0);
    let mut out = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        out.push(BlochVector::new(state[0], state[1], state[2]));
        state = step * state;
    }
    Ok(out)
}

/// z-projection of [`propagate`].
pub fn propagate_z(
    h: &HamiltonianParams,
    rates: &DecoherenceRates,
    init_z: f64,
    dt: f64,
    n_t: usize,
) -> Result<Vec<f64>> {
    Ok(propagate(h, rates, BlochVector::polarized(init_z), dt, n_t)?
        .into_iter()
        .map(|r| r.z)
        .collect())
}

/// The `K` factor relating `y(∞) = K z(∞)`.
pub fn steady_state_k(h: &HamiltonianParams, rates: &DecoherenceRates) -> f64 {
    let (s, c) = h.theta.sin_cos();
    let m0 = 4.0 * rates.gamma_z + rates.population_rate();
    let denom = 4.0 * h.d * h.d * c * c + m0 * m0;
    if denom == 0.0 {
        return 0.0;
    }
    2.0 * h.d * s * m0 / denom
}

pub fn steady_state(h: &HamiltonianParams, rates: &DecoherenceRates) -> Result<BlochVector> {
    h.validate()?;
    rates.validate()?;
    let (s, _) = h.theta.sin_cos();
    let k = steady_state_k(h, rates);
    let denom = rates.population_rate() + h.d * s * k;
    if !(denom > 0.0) {
        return Err(Error::DegenerateSteadyState);
    }
    let z = (rates.gamma_plus - rates.gamma_minus) / denom;
    let y = k * z;
    let m0 = 4.0 * rates.gamma_z + rates.population_rate();
    let x = 2.0 * h.d * h.theta.cos() * y / m0;
    Ok(BlochVector::new(x, y, z))
}

/// `z₁(t) - z₋₁(t)` for the undriven system.
pub fn decay_difference(rates: &DecoherenceRates, t: f64) -> f64 {
    2.0 * (-t * rates.population_rate()).exp()
}
