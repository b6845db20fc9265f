//! Exact DFT of a model trajectory sampled on the experiment's grid.
//!
//! A model trajectory is a sum of exponentials `z_k = Σ_j r_j μ_j^k` with
//! `μ_j = exp(λ_j Δt)`. Its zero-padded normalized DFT is the geometric sum
//! `value_n = (1/N) Σ_j r_j (1 - (μ_j w_n)^{N0}) / (1 - μ_j w_n)`,
//! `w_n = exp(2πi n/N)`, so sampling, truncation and padding are reproduced
//! without any continuum approximation.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fit::models::{ModelKind, ModelParams, Rational};
use crate::spectrum::Spectrum;

/// Relative separation below which two poles count as coincident.
pub const POLE_SEPARATION: f64 = 1e-7;

/// Sampling geometry shared by every evaluation against one spectrum.
#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Transform length (after padding).
    pub n: usize,
    /// Number of recorded samples.
    pub n0: usize,
    pub dt: f64,
    /// Constant subtracted from the record before transforming.
    pub shift: f64,
    w: Vec<Complex64>,
    w_n0: Vec<Complex64>,
}

impl GridSpec {
    pub fn new(n: usize, n0: usize, dt: f64, shift: f64) -> Result<Self> {
        if n0 < 2 || n < n0 {
            return Err(Error::InvalidInput(format!("invalid grid: n = {n}, n0 = {n0}")));
        }
        if !(dt > 0.0) || !dt.is_finite() || !shift.is_finite() {
            return Err(Error::InvalidInput("grid needs finite dt > 0 and a finite shift".into()));
        }
        let bins = n / 2 + 1;
        let tau = 2.0 * std::f64::consts::PI / n as f64;
        let w = (0..bins).map(|k| Complex64::from_polar(1.0, tau * k as f64)).collect();
        let w_n0 = (0..bins)
            .map(|k| Complex64::from_polar(1.0, tau * ((k as u128 * n0 as u128) % n as u128) as f64))
            .collect();
        Ok(Self { n, n0, dt, shift, w, w_n0 })
    }

    pub fn for_spectrum(sp: &Spectrum, shift: f64) -> Result<Self> {
        Self::new(sp.len(), sp.n_original, sp.dt, shift)
    }

    /// Non-negative frequency bins `0..=N/2`.
    pub fn bins(&self) -> usize {
        self.w.len()
    }

    /// Length of the real residual vector built by [`pack_residuals`].
    pub fn residual_len(&self) -> usize {
        self.n
    }

    /// Adds `residue · Σ_{k<N0} (μ w_n)^k / N` to every bin.
    fn accumulate(&self, out: &mut [Complex64], lambda: Complex64, residue: Complex64) {
        let mu = (lambda * self.dt).exp();
        let mu_n0 = (lambda * (self.dt * self.n0 as f64)).exp();
        let scale = residue / self.n as f64;
        for (k, o) in out.iter_mut().enumerate() {
            let q = mu * self.w[k];
            let one_minus_q = Complex64::new(1.0, 0.0) - q;
            let g = if one_minus_q.norm() > 1e-6 {
                (Complex64::new(1.0, 0.0) - mu_n0 * self.w_n0[k]) / one_minus_q
            } else {
                self.geometric_near_one(lambda, k)
            };
            *o += scale * g;
        }
    }

    /// Cancellation-free geometric sum for `μ w_n ≈ 1`.
    fn geometric_near_one(&self, lambda: Complex64, k: usize) -> Complex64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let phase = |num: u128| -> f64 {
            let r = (num % self.n as u128) as f64 / self.n as f64;
            two_pi * if r > 0.5 { r - 1.0 } else { r }
        };
        let x = lambda * self.dt + Complex64::new(0.0, phase(k as u128));
        if x.norm() == 0.0 {
            return Complex64::new(self.n0 as f64, 0.0);
        }
        let xn = lambda * (self.dt * self.n0 as f64) + Complex64::new(0.0, phase(k as u128 * self.n0 as u128));
        expm1(xn) / expm1(x)
    }
}

fn expm1(x: Complex64) -> Complex64 {
    let (s, c) = x.im.sin_cos();
    let half = (0.5 * x.im).sin();
    let em1 = x.re.exp_m1();
    // e^{a+ib} - 1 = (e^a - 1) e^{ib} + (e^{ib} - 1)
    Complex64::new(em1 * c - 2.0 * half * half, em1 * s + s)
}

/// Poles and residues of a model's trajectory, scaled by the amplitude.
#[derive(Debug, Clone)]
pub struct PoleExpansion {
    pub terms: Vec<(Complex64, Complex64)>,
}

impl PoleExpansion {
    /// Value of the expansion at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(l, r)| (r * (l * t).exp()).re).sum()
    }
}

pub fn pole_expansion(kind: ModelKind, p: &ModelParams, shift: f64) -> Result<PoleExpansion> {
    let a = p.amplitude;
    let mut terms = Vec::with_capacity(4);
    match kind {
        ModelKind::Delta => {
            let (sn, cs) = p.h.theta.sin_cos();
            let z0 = p.init_z * a;
            terms.push((Complex64::new(0.0, 0.0), Complex64::new(z0 * cs * cs - shift, 0.0)));
            let side = Complex64::new(0.5 * z0 * sn * sn, 0.0);
            if p.h.d == 0.0 {
                terms[0].1 += side * 2.0;
            } else {
                terms.push((Complex64::new(0.0, p.h.d), side));
                terms.push((Complex64::new(0.0, -p.h.d), side));
            }
        }
        ModelKind::Dephasing | ModelKind::General => {
            let mut q = *p;
            if kind == ModelKind::Dephasing {
                q.rates.gamma_plus = 0.0;
                q.rates.gamma_minus = 0.0;
            }
            let ss = q.steady();
            let rat = Rational::new(&q, ss);
            let poles = cubic_roots(rat.d)?;
            check_separation(&poles)?;
            for &l in &poles {
                let dp = rat.denom_prime(l);
                if dp.norm() == 0.0 {
                    return Err(Error::DegeneratePoles);
                }
                terms.push((l, a * rat.numer(l) / dp));
            }
            let offset = a * ss.z - shift;
            if offset != 0.0 {
                terms.push((Complex64::new(0.0, 0.0), Complex64::new(offset, 0.0)));
            }
        }
    }
    Ok(PoleExpansion { terms })
}

fn check_separation(poles: &[Complex64]) -> Result<()> {
    let scale = poles.iter().map(|p| p.norm()).fold(1e-300, f64::max);
    for i in 0..poles.len() {
        for j in i + 1..poles.len() {
            if (poles[i] - poles[j]).norm() < POLE_SEPARATION * scale {
                return Err(Error::DegeneratePoles);
            }
        }
    }
    Ok(())
}

/// Roots of `s³ + c[2] s² + c[1] s + c[0]`, from the companion matrix and
/// polished by Newton steps.
fn cubic_roots(c: [f64; 3]) -> Result<[Complex64; 3]> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("characteristic polynomial"));
    }
    #[rustfmt::skip]
    let companion = Matrix3::new(
        -c[2], -c[1], -c[0],
        1.0,   0.0,   0.0,
        0.0,   1.0,   0.0,
    );
    let eig = companion.complex_eigenvalues();
    let mut roots = [eig[0], eig[1], eig[2]];
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let f = ((*r + c[2]) * *r + c[1]) * *r + c[0];
            let fp = (*r * 3.0 + 2.0 * c[2]) * *r + c[1];
            if fp.norm() == 0.0 {
                break;
            }
            let step = f / fp;
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    Ok(roots)
}

/// Model spectrum on bins `0..=N/2` of `grid`.
pub fn grid_values(kind: ModelKind, p: &ModelParams, grid: &GridSpec) -> Result<Vec<Complex64>> {
    let exp = pole_expansion(kind, p, grid.shift)?;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.bins()];
    for &(l, r) in &exp.terms {
        grid.accumulate(&mut out, l, r);
    }
    if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("grid model"));
    }
    Ok(out)
}

/// Real residual layout: `Re v₀`, then `Re vₙ, Im vₙ` for `0 < n < N/2`,
/// then `Re v_{N/2}` for even `N`; `N` entries in total.
pub fn pack_residuals(data: &[Complex64], model: &[Complex64], n: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(data[0].re - model[0].re);
    let upper = n.div_ceil(2);
    for k in 1..upper {
        let r = data[k] - model[k];
        out.push(r.re);
        out.push(r.im);
    }
    if n % 2 == 0 {
        out.push(data[n / 2].re - model[n / 2].re);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{propagate_z, DecoherenceRates, HamiltonianParams};
    use crate::measurement::TimeSeries;
    use crate::spectrum::dft_shifted;
    use proptest::prelude::*;

    fn params(d: f64, theta: f64, gz: f64, gp: f64, gm: f64, amp: f64) -> ModelParams {
        ModelParams::new(
            HamiltonianParams::new(d, theta).unwrap(),
            DecoherenceRates::new(gz, gp, gm).unwrap(),
            amp,
        )
    }

    fn check_against_dft(kind: ModelKind, p: &ModelParams, dt: f64, n0: usize, n: usize, shift: f64) -> f64 {
        let z = propagate_z(&p.h, &p.rates, p.init_z, dt, n0).unwrap();
        let series = TimeSeries::exact(dt, z.iter().map(|v| p.amplitude * v).collect());
        let sp = dft_shifted(&series, shift, Some(n)).unwrap();
        let grid = GridSpec::for_spectrum(&sp, shift).unwrap();
        let model = grid_values(kind, p, &grid).unwrap();
        model.iter().zip(&sp.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn pole_expansion_reproduces_trajectory() {
        let p = params(1.2, 0.8, 0.07, 0.03, 0.2, 1.0);
        let exp = pole_expansion(ModelKind::General, &p, 0.0).unwrap();
        let z = propagate_z(&p.h, &p.rates, 1.0, 0.1, 200).unwrap();
        for (k, zk) in z.iter().enumerate() {
            assert!((exp.at(k as f64 * 0.1) - zk).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_grid_matches_dft() {
        let p = params(1.37, 0.6, 0.0, 0.0, 0.0, 0.9);
        assert!(check_against_dft(ModelKind::Delta, &p, 0.05, 300, 1024, 0.0) < 1e-12);
    }

    #[test]
    fn dephasing_grid_matches_dft() {
        let p = params(1.0, 1.0, 0.1, 0.0, 0.0, 1.0);
        assert!(check_against_dft(ModelKind::Dephasing, &p, 0.015, 1000, 2048, 0.0) < 1e-12);
    }

    #[test]
    fn general_grid_matches_shifted_dft() {
        let p = params(1.0, 1.0, 0.05, 0.02, 0.1, 0.8);
        let shift = -0.13;
        assert!(check_against_dft(ModelKind::General, &p, 0.03, 700, 2048, shift) < 1e-12);
        let mut q = p;
        q.init_z = -1.0;
        assert!(check_against_dft(ModelKind::General, &q, 0.03, 700, 700, 0.0) < 1e-12);
    }

    #[test]
    fn undamped_sigma_z_has_pole_at_origin() {
        // θ = 0 with pure dephasing conserves z: a root of D at zero.
        let p = params(1.0, 0.0, 0.1, 0.0, 0.0, 1.0);
        assert!(check_against_dft(ModelKind::Dephasing, &p, 0.1, 64, 128, 0.0) < 1e-12);
    }

    #[test]
    fn coincident_poles_rejected() {
        // θ = π/2, Γ± = 0: D = (s + 2Γ)(s² + 2Γs + d²) has a double root
        // at s = -d when Γ = d.
        let p = params(1.0, std::f64::consts::FRAC_PI_2, 1.0, 0.0, 0.0, 1.0);
        assert!(matches!(pole_expansion(ModelKind::Dephasing, &p, 0.0), Err(Error::DegeneratePoles)));
    }

    #[test]
    fn residual_layout() {
        let data: Vec<Complex64> = (0..5).map(|k| Complex64::new(k as f64, -(k as f64))).collect();
        let zero = vec![Complex64::new(0.0, 0.0); 5];
        let mut out = vec![];
        pack_residuals(&data, &zero, 8, &mut out);
        assert_eq!(out, vec![0.0, 1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0]);
        pack_residuals(&data, &zero, 7, &mut out);
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn expm1_accuracy() {
        let x = Complex64::new(1e-12, -3e-13);
        let e = expm1(x);
        assert!((e - x).norm() < 1e-24);
        let y = Complex64::new(0.3, 2.0);
        assert!((expm1(y) - (y.exp() - 1.0)).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn general_grid_matches_dft_randomized(
            d in 0.3..2.0f64, theta in 0.1..3.0f64,
            gz in 0.0..0.3f64, gp in 0.0..0.3f64, gm in 0.0..0.3f64,
            amp in 0.5..1.0f64, pad in prop::bool::ANY,
        ) {
            let p = params(d, theta, gz, gp, gm, amp);
            prop_assume!(pole_expansion(ModelKind::General, &p, 0.0).is_ok());
            let n0 = 300;
            let n = if pad { 1024 } else { n0 };
            let shift = amp * p.z_inf;
            prop_assert!(check_against_dft(ModelKind::General, &p, 0.07, n0, n, shift) < 1e-11);
        }
    }
}
