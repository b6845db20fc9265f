//! Rate recovery from the undriven two-branch relaxation experiment.
//!
//! The branch difference `z₁ - z₋₁ = 2 e^{-Γs t}` gives `Γs = Γ+ + Γ-` by a
//! weighted straight-line fit of its logarithm. The steady state follows from
//! a linear least-squares fit of both branches to
//! `z_b(t) = z∞ (1 - e^{-Γs t}) + a_b e^{-Γs t}`, and then
//! `Γ± = Γs (1 ± z∞) / 2`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::TimeSeries;

/// Fraction of the record treated as the tail.
pub const TAIL_FRACTION: f64 = 0.1;

/// Smallest drift tolerance for exact (noise-free) records.
pub const EXACT_TAIL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxConstraints {
    pub gamma_sum: f64,
    pub z_inf: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

/// Per-point variance of an ensemble mean; zero for exact records.
fn point_variance(z: f64, n_e: u64) -> f64 {
    if n_e == 0 {
        0.0
    } else {
        // a floor of one count keeps saturated points from getting
        // infinite weight
        (1.0 - z * z).max(1.0 / n_e as f64) / n_e as f64
    }
}

fn tail_check(z1: &TimeSeries, zm1: &TimeSeries) -> Result<()> {
    let n = z1.len();
    let len = ((n as f64 * TAIL_FRACTION).ceil() as usize).clamp(2, n);
    let start = n - len;
    let mid = start + len / 2;
    let mean_var = |s: &TimeSeries, r: std::ops::Range<usize>| -> (f64, f64) {
        let cnt = r.len() as f64;
        let m = s.z_mean[r.clone()].iter().sum::<f64>() / cnt;
        let v = r.map(|k| point_variance(s.z_mean[k], s.n_e)).sum::<f64>() / (cnt * cnt);
        (m, v)
    };
    let mut checks = Vec::new();
    for s in [z1, zm1] {
        let (a, va) = mean_var(s, start..mid);
        let (b, vb) = mean_var(s, mid..n);
        checks.push(((a - b).abs(), (va + vb).sqrt()));
    }
    let (a, va) = mean_var(z1, start..n);
    let (b, vb) = mean_var(zm1, start..n);
    checks.push(((a - b).abs(), (va + vb).sqrt()));
    for (drift, sigma) in checks {
        let tolerance = (3.0 * sigma).max(EXACT_TAIL_TOLERANCE);
        if drift > tolerance {
            return Err(Error::TailNotSettled { drift, tolerance });
        }
    }
    Ok(())
}

pub fn fit_aux_decay(z1: &TimeSeries, zm1: &TimeSeries) -> Result<AuxConstraints> {
    z1.validate()?;
    zm1.validate()?;
    if z1.times != zm1.times {
        return Err(Error::InvalidInput("auxiliary branches must share the time grid".into()));
    }
    if z1.len() < 3 {
        return Err(Error::InvalidInput("auxiliary branches need at least 3 points".into()));
    }
    let exact = z1.n_e == 0 && zm1.n_e == 0;

    // Weighted regression of ln(z₁ - z₋₁) on t, skipping the conditioning
    // outcome at t = 0.
    let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for k in 1..z1.len() {
        let diff = z1.z_mean[k] - zm1.z_mean[k];
        let var = point_variance(z1.z_mean[k], z1.n_e) + point_variance(zm1.z_mean[k], zm1.n_e);
        if diff <= (3.0 * var.sqrt()).max(1e-12) {
            continue;
        }
        // rounding error in exact records is absolute, so the log needs the same
        // diff² weighting as projection noise
        let w = if exact { diff * diff } else { diff * diff / var };
        let (t, y) = (z1.times[k], diff.ln());
        sw += w;
        st += w * t;
        sy += w * y;
        stt += w * t * t;
        sty += w * t * y;
        used += 1;
    }
    if used < 2 {
        return Err(Error::DegenerateDecay);
    }
    let det = sw * stt - st * st;
    if !(det > 0.0) {
        return Err(Error::DegenerateDecay);
    }
    let slope = (sw * sty - st * sy) / det;
    let slope_sigma = if exact { 0.0 } else { (sw / det).sqrt() };
    let gamma_sum = -slope;
    let t_max = *z1.times.last().unwrap();
    if !gamma_sum.is_finite() || gamma_sum <= 3.0 * slope_sigma || gamma_sum * t_max < 1e-9 {
        return Err(Error::DegenerateDecay);
    }

    tail_check(z1, zm1)?;

    // Linear least squares for (z∞, a₊, a₋).
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (branch, s) in [z1, zm1].into_iter().enumerate() {
        for k in 1..s.len() {
            let e = (-gamma_sum * s.times[k]).exp();
            let mut row = Vector3::new(1.0 - e, 0.0, 0.0);
            row[1 + branch] = e;
            let var = point_variance(s.z_mean[k], s.n_e);
            let w = if exact { 1.0 } else { 1.0 / var };
            ata += w * row * row.transpose();
            atb += w * row * s.z_mean[k];
        }
    }
    let sol = ata.cholesky().ok_or(Error::DegenerateDecay)?.solve(&atb);
    let z_inf = sol[0].clamp(-1.0, 1.0);
    Ok(AuxConstraints {
        gamma_sum,
        z_inf,
        gamma_plus: 0.5 * gamma_sum * (1.0 + z_inf),
        gamma_minus: 0.5 * gamma_sum * (1.0 - z_inf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::DecoherenceRates;
    use crate::measurement::{derive_seed, expected_aux_series, sample_aux_experiment, AuxInterval, ExperimentConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn noiseless_inversion_is_exact() {
        let rates = DecoherenceRates::new(0.0, 1.0, 5.0).unwrap();
        let aux = expected_aux_series(&rates, &ExperimentConfig::new(0.02, 150, 1)).unwrap();
        let c = fit_aux_decay(&aux.z1, &aux.zm1).unwrap();
        assert_abs_diff_eq!(c.gamma_sum, 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.z_inf, -2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.gamma_plus, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.gamma_minus, 5.0, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_rates() {
        let rates = DecoherenceRates::new(0.0, 2.0, 2.0).unwrap();
        let aux = expected_aux_series(&rates, &ExperimentConfig::new(0.02, 300, 1)).unwrap();
        let c = fit_aux_decay(&aux.z1, &aux.zm1).unwrap();
        assert_abs_diff_eq!(c.z_inf, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.gamma_plus, c.gamma_sum / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.gamma_minus, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_rates_are_degenerate() {
        let aux = expected_aux_series(&DecoherenceRates::default(), &ExperimentConfig::new(0.02, 50, 1)).unwrap();
        assert!(matches!(fit_aux_decay(&aux.z1, &aux.zm1), Err(Error::DegenerateDecay)));
        let cfg = ExperimentConfig::new(0.02, 50, 1000).with_seed(1);
        let aux = sample_aux_experiment(&DecoherenceRates::default(), &cfg).unwrap();
        assert!(matches!(fit_aux_decay(&aux.z1, &aux.zm1), Err(Error::DegenerateDecay)));
    }

    #[test]
    fn unsettled_tail_rejected() {
        let rates = DecoherenceRates::new(0.0, 0.1, 0.5).unwrap();
        let aux = expected_aux_series(&rates, &ExperimentConfig::new(0.02, 150, 1)).unwrap();
        assert!(matches!(fit_aux_decay(&aux.z1, &aux.zm1), Err(Error::TailNotSettled { .. })));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let rates = DecoherenceRates::new(0.0, 1.0, 5.0).unwrap();
        let a = expected_aux_series(&rates, &ExperimentConfig::new(0.02, 150, 1)).unwrap();
        let b = expected_aux_series(&rates, &ExperimentConfig::new(0.03, 150, 1)).unwrap();
        assert!(fit_aux_decay(&a.z1, &b.zm1).is_err());
    }

    #[test]
    fn sampled_rates_within_five_percent() {
        let rates = DecoherenceRates::new(0.0, 1.0, 5.0).unwrap();
        for mode in [AuxInterval::Fixed, AuxInterval::Growing] {
            let mut ok = 0;
            for s in 0..20 {
                let mut cfg = ExperimentConfig::new(0.02, 150, 10_000).with_seed(derive_seed(31, s));
                cfg.aux_interval = mode;
                let aux = sample_aux_experiment(&rates, &cfg).unwrap();
                let c = fit_aux_decay(&aux.z1, &aux.zm1).unwrap();
                ok += ((c.gamma_plus - 1.0).abs() < 0.05 && (c.gamma_minus / 5.0 - 1.0).abs() < 0.05) as usize;
            }
            assert!(ok >= 18, "{mode:?}: {ok}/20");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn noiseless_inversion_randomized(gp in 0.2..5.0f64, gm in 0.2..5.0f64) {
            let rates = DecoherenceRates::new(0.0, gp, gm).unwrap();
            // long enough to settle: Γs t_max ≥ 30
            let dt = 30.0 / (gp + gm) / 149.0;
            let aux = expected_aux_series(&rates, &ExperimentConfig::new(dt, 150, 1)).unwrap();
            let c = fit_aux_decay(&aux.z1, &aux.zm1).unwrap();
            prop_assert!((c.gamma_plus - gp).abs() <= 1e-9 * gp.max(1.0));
            prop_assert!((c.gamma_minus - gm).abs() <= 1e-9 * gm.max(1.0));
        }
    }
}
