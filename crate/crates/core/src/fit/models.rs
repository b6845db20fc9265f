//! Continuous Fourier-domain response `Z(ω) = ∫₀^∞ z(t) e^{-iωt} dt` of the
//! three decoherence models, scaled by the free amplitude.
//!
//! With `s = iω`, `p = s + γ⊥`, `γ⊥ = 2Γz + (Γ+ + Γ-)/2` and
//! `Γs = Γ+ + Γ-`, the shifted response `z(t) - z(∞)` transforms to
//! `N(s) / D(s)` with
//!
//! ```text
//! D(s) = (s + Γs)(p² + d²cos²θ) + d² sin²θ p
//! N(s) = (z0 - z∞)(p² + d²cos²θ) + d sinθ (p y∞ - d cosθ x∞)
//! ```
//!
//! The cubic `D` supplies the poles used by the grid-exact discretization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::{steady_state, BlochVector, DecoherenceRates, HamiltonianParams};
use crate::error::{Error, Result};

/// Below this `|denominator|` a model evaluation is rejected.
pub const POLE_GUARD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Decoherence-free: spectral lines at 0 and ±d.
    Delta,
    /// Pure dephasing.
    Dephasing,
    /// Dephasing plus absorption and emission.
    General,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Self::Delta),
            "dephasing" => Ok(Self::Dephasing),
            "general" => Ok(Self::General),
            other => Err(Error::InvalidInput(format!(
                "unknown model '{other}' (expected delta, dephasing or general)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Delta => "delta",
            Self::Dephasing => "dephasing",
            Self::General => "general",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub h: HamiltonianParams,
    pub rates: DecoherenceRates,
    /// Overall scale of the measured signal; `1 - 2η` for ideal data.
    pub amplitude: f64,
    /// Steady-state z of the unscaled dynamics, derived from the rates.
    pub z_inf: f64,
    /// Prepared state, `+1` or `-1`.
    #[serde(default = "one")]
    pub init_z: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(h: HamiltonianParams, rates: DecoherenceRates, amplitude: f64) -> Self {
        let mut p = Self { h, rates, amplitude, z_inf: 0.0, init_z: 1.0 };
        p.refresh_steady_state();
        p
    }

    /// Recomputes `z_inf` from the rates, using 0 when the steady state is
    /// not unique.
    pub fn refresh_steady_state(&mut self) {
        self.z_inf = self.steady().z;
    }

    pub(crate) fn steady(&self) -> BlochVector {
        if self.rates.population_rate() == 0.0 {
            return BlochVector::default();
        }
        steady_state(&self.h, &self.rates).unwrap_or_default()
    }
}

/// Coefficients of the response: `D(s) = s³ + c2 s² + c1 s + c0` and
/// `N(s) = n2 s² + n1 s + n0`, before amplitude scaling.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rational {
    pub d: [f64; 3],
    pub n: [f64; 3],
}

impl Rational {
    pub fn new(p: &ModelParams, ss: BlochVector) -> Self {
        let (sn, cs) = p.h.theta.sin_cos();
        let d = p.h.d;
        let g = p.rates.coherence_rate();
        let big = p.rates.population_rate();
        let e = d * d * cs * cs;
        let f = d * d * sn * sn;
        let c2 = 2.0 * g + big;
        let c1 = g * g + e + 2.0 * g * big + f;
        let c0 = big * (g * g + e) + f * g;
        let a = p.init_z - ss.z;
        let n2 = a;
        let n1 = 2.0 * g * a + d * sn * ss.y;
        let n0 = a * (g * g + e) + d * sn * (g * ss.y - d * cs * ss.x);
        Self { d: [c0, c1, c2], n: [n0, n1, n2] }
    }

    pub fn denom(&self, s: Complex64) -> Complex64 {
        ((s + self.d[2]) * s + self.d[1]) * s + self.d[0]
    }

    pub fn denom_prime(&self, s: Complex64) -> Complex64 {
        (s * 3.0 + 2.0 * self.d[2]) * s + self.d[1]
    }

    pub fn numer(&self, s: Complex64) -> Complex64 {
        (s * self.n[2] + self.n[1]) * s + self.n[0]
    }
}

/// Bin-resolved line model: the magnitude expected in a bin of width
/// `resolution` centred at `omega`.
pub fn model_delta(p: &ModelParams, omega: f64, resolution: f64) -> f64 {
    let (sn, cs) = p.h.theta.sin_cos();
    let half = 0.5 * resolution;
    let mut out = 0.0;
    if omega.abs() <= half {
        out += cs * cs;
    }
    if (omega.abs() - p.h.d).abs() <= half {
        out += 0.5 * sn * sn;
    }
    p.amplitude * out
}

/// Pure-dephasing response,
/// `A / (iω + d²(2Γz + iω) sin²θ / ((2Γz + iω)² + d² cos²θ))`.
pub fn model_dephasing(p: &ModelParams, omega: f64) -> Result<Complex64> {
    let (sn, cs) = p.h.theta.sin_cos();
    let d = p.h.d;
    let s = Complex64::new(0.0, omega);
    let q = s + 2.0 * p.rates.gamma_z;
    let inner = q * q + d * d * cs * cs;
    if inner.norm() < POLE_GUARD {
        return Err(Error::PoleGuard { omega });
    }
    let denom = s + d * d * sn * sn * q / inner;
    if denom.norm() < POLE_GUARD {
        return Err(Error::PoleGuard { omega });
    }
    Ok(p.amplitude * p.init_z / denom)
}

/// Response of `z(t) - z(∞)` for the full model. The constant `z(∞)`
/// contributes only to the zero-frequency bin of a discrete spectrum.
pub fn model_general(p: &ModelParams, omega: f64) -> Result<Complex64> {
    let r = Rational::new(p, p.steady());
    let s = Complex64::new(0.0, omega);
    let den = r.denom(s);
    if den.norm() < POLE_GUARD {
        return Err(Error::PoleGuard { omega });
    }
    Ok(p.amplitude * r.numer(s) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::propagate_z;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(d: f64, theta: f64, gz: f64, gp: f64, gm: f64) -> ModelParams {
        ModelParams::new(
            HamiltonianParams::new(d, theta).unwrap(),
            DecoherenceRates::new(gz, gp, gm).unwrap(),
            1.0,
        )
    }

    #[test]
    fn delta_line_weights() {
        let p = params(1.0, FRAC_PI_2, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(model_delta(&p, 0.0, 0.01), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(model_delta(&p, 1.0, 0.01), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(model_delta(&p, -1.0, 0.01), 0.5, epsilon = 1e-15);
        assert_eq!(model_delta(&p, 0.5, 0.01), 0.0);
        let p = params(1.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(model_delta(&p, 0.0, 0.01), 1.0);
        assert_eq!(model_delta(&p, 1.0, 0.01), 0.0);
        let mut p = params(1.0, 0.9, 0.0, 0.0, 0.0);
        p.amplitude = 0.8;
        let total = model_delta(&p, 0.0, 0.01) + 2.0 * model_delta(&p, 1.0, 0.01);
        assert_abs_diff_eq!(total, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn lorentzian_near_resonance() {
        // Expanding to first order about ω = d gives half the printed
        // Lorentzian: each of the ±d lines carries weight 1/2.
        let gz = 0.001;
        let p = params(1.0, FRAC_PI_2, gz, 0.0, 0.0);
        for dw in [-2.0 * gz, -gz, 0.0, 0.5 * gz, 3.0 * gz] {
            let z = model_dephasing(&p, 1.0 + dw).unwrap();
            let lorentz = 0.5 * gz / (dw * dw + gz * gz);
            assert!((z.re / lorentz - 1.0).abs() < 0.01, "dw={dw}: {} vs {lorentz}", z.re);
        }
    }

    #[test]
    fn dephasing_pole_guard() {
        let p = params(1.0, FRAC_PI_2, 0.0, 0.0, 0.0);
        assert!(matches!(model_dephasing(&p, 0.0), Err(Error::PoleGuard { .. })));
        assert!(model_dephasing(&p, 0.3).is_ok());
    }

    #[test]
    fn weak_dephasing_concentrates_weight() {
        // Integrate Re Z over windows around 0 and d; the lobes carry
        // π cos²θ and π sin²θ / 2.
        let theta = 1.0f64;
        let gz = 1e-3;
        let p = params(1.0, theta, gz, 0.0, 0.0);
        let lobe = |centre: f64, width: f64| -> f64 {
            let n = 400_000;
            let h = 2.0 * width / n as f64;
            (0..n)
                .map(|k| {
                    let w = centre - width + (k as f64 + 0.5) * h;
                    model_dephasing(&p, w).unwrap().re * h
                })
                .sum()
        };
        let f0 = lobe(0.0, 0.3);
        let fp = lobe(1.0, 0.3);
        let (s2, c2) = (theta.sin().powi(2), theta.cos().powi(2));
        assert!((f0 / (PI * c2) - 1.0).abs() < 0.02, "f0 {f0}");
        assert!((fp / (PI * s2 / 2.0) - 1.0).abs() < 0.02, "fp {fp}");
        assert!((f0 / fp / (2.0 * c2 / s2) - 1.0).abs() < 0.03);
    }

    #[test]
    fn general_decays_as_inverse_frequency() {
        let p = params(1.0, 1.0, 0.05, 0.02, 0.1);
        let a = model_general(&p, 1e4).unwrap().norm();
        let b = model_general(&p, 2e4).unwrap().norm();
        assert_abs_diff_eq!(a / b, 2.0, epsilon = 1e-3);
        assert!(a * 1e4 < 2.0);
    }

    #[test]
    fn general_matches_laplace_quadrature() {
        // Direct numerical transform of the propagated, shifted trajectory.
        let p = params(1.0, 1.0, 0.05, 0.02, 0.1);
        let dt = 0.005;
        let n = 300_000;
        let z = propagate_z(&p.h, &p.rates, 1.0, dt, n).unwrap();
        for omega in [0.0, 0.3, 1.0, 1.7] {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, zk) in z.iter().enumerate() {
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                acc += Complex64::from_polar(w * (zk - p.z_inf) * dt, -omega * k as f64 * dt);
            }
            let model = model_general(&p, omega).unwrap();
            assert!((acc - model).norm() <= 1e-4 * model.norm().max(1.0), "omega {omega}");
        }
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("general".parse::<ModelKind>().unwrap(), ModelKind::General);
        assert!("lorentz".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::Dephasing.to_string(), "dephasing");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn general_nests_dephasing(d in 0.1..2.0f64, theta in 0.05..PI, gz in 0.0..1.0f64, omega in 0.01..5.0f64) {
            let p = params(d, theta, gz, 0.0, 0.0);
            let a = model_general(&p, omega).unwrap();
            let b = model_dephasing(&p, omega).unwrap();
            prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }
}
