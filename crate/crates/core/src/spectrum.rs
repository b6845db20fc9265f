//! Normalized discrete Fourier transform of z records.
//!
//! `value(n) = Σ_k z(k) exp(+2πi k n / N) / N` on the grid
//! `ω_n = 2π n / (N Δt)`; bins above `N/2` are negative frequencies. With
//! this kernel `Σ_n value(n) = z(0)` exactly.

use std::io::{Read, Write};
use std::ops::Range;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::measurement::TimeSeries;

/// Lengths at or above this use the FFT path.
pub const FFT_THRESHOLD: usize = 4096;

/// Minimum number of low-frequency bins treated as the DC feature.
pub const MIN_DC_EXCLUSION: usize = 2;

/// Peak must exceed `mean + PEAK_SIGMAS · sigma` of the noise floor.
pub const PEAK_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Series length before zero padding.
    pub n_original: usize,
    pub dt: f64,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    omega: f64,
    re: f64,
    im: f64,
    abs: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn delta_omega(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.len() as f64 * self.dt)
    }

    pub fn is_padded(&self) -> bool {
        self.len() > self.n_original
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&omega, v) in self.omega.iter().zip(&self.values) {
            w.serialize(CsvRow { omega, re: v.re, im: v.im, abs: v.norm() })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a spectrum written by [`Spectrum::write_csv`]. The pre-padding
    /// length is not stored, so it must be supplied.
    pub fn read_csv<R: Read>(reader: R, n_original: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let (mut omega, mut values) = (vec![], vec![]);
        for row in r.deserialize::<CsvRow>() {
            let row = row?;
            omega.push(row.omega);
            values.push(Complex64::new(row.re, row.im));
        }
        if omega.len() < 2 {
            return Err(Error::InvalidInput("spectrum needs at least 2 bins".into()));
        }
        let dt = 2.0 * std::f64::consts::PI / (omega.len() as f64 * omega[1]);
        Ok(Self { omega, values, n_original, dt })
    }
}

/// Smallest power of two at least twice `n`.
pub fn padded_length(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

pub fn frequency_grid(n: usize, dt: f64) -> Vec<f64> {
    let dw = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    (0..n).map(|k| k as f64 * dw).collect()
}

/// O(N²) reference transform of `z` zero-padded to `n`.
pub fn direct_dft(z: &[f64], n: usize) -> Vec<Complex64> {
    let scale = 1.0 / n as f64;
    let twiddle: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / n as f64))
        .collect();
    (0..n)
        .map(|bin| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0usize;
            for &zk in z {
                acc += twiddle[idx] * zk;
                idx += bin;
                if idx >= n {
                    idx -= n;
                }
            }
            acc * scale
        })
        .collect()
}

pub fn fft_dft(z: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = z.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

fn transform(z: &[f64], n: usize) -> Vec<Complex64> {
    if n < FFT_THRESHOLD {
        direct_dft(z, n)
    } else {
        fft_dft(z, n)
    }
}

/// Transform of `series - shift`, zero-padded to `pad_to` when given.
pub fn dft_shifted(series: &TimeSeries, shift: f64, pad_to: Option<usize>) -> Result<Spectrum> {
    ensure_finite(shift, "steady-state shift")?;
    let n0 = series.len();
    if n0 < 2 {
        return Err(Error::InvalidInput("series needs at least 2 points".into()));
    }
    let dt = series.dt();
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput("series time step must be > 0".into()));
    }
    let n = pad_to.unwrap_or(n0);
    if n < n0 {
        return Err(Error::InvalidInput(format!("pad_to {n} is shorter than the series ({n0})")));
    }
    let z: Vec<f64> = series.z_mean.iter().map(|v| v - shift).collect();
    Ok(Spectrum { omega: frequency_grid(n, dt), values: transform(&z, n), n_original: n0, dt })
}

pub fn dft(series: &TimeSeries, pad_to: Option<usize>) -> Result<Spectrum> {
    dft_shifted(series, 0.0, pad_to)
}

/// `Σ_n value(n)`, which reproduces the first (shifted) sample.
pub fn spectrum_sum(sp: &Spectrum) -> f64 {
    sp.values.iter().map(|v| v.re).sum()
}

/// Mirror of a bin range onto the negative-frequency half.
pub fn mirrored(range: &Range<usize>, n: usize) -> Range<usize> {
    let start = n.saturating_sub(range.end.saturating_sub(1)).max(1).min(n);
    let end = if range.start == 0 { n } else { (n + 1 - range.start).min(n) };
    start.min(end)..end
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFloor {
    pub mean: f64,
    pub sigma: f64,
    /// Number of bins the statistics were taken over.
    pub bins: usize,
}

impl NoiseFloor {
    /// Root-mean-square bin magnitude, `sqrt(mean² + sigma²)`.
    pub fn rms(&self) -> f64 {
        self.mean.hypot(self.sigma)
    }
}

/// Mean and standard deviation of `|value|` over bins outside every window.
pub fn noise_floor(sp: &Spectrum, signal_windows: &[Range<usize>]) -> Result<NoiseFloor> {
    let n = sp.len();
    let mut masked = vec![false; n];
    for w in signal_windows {
        for m in masked.iter_mut().take(w.end.min(n)).skip(w.start) {
            *m = true;
        }
    }
    let covered = masked.iter().filter(|&&m| m).count();
    if 2 * covered >= n {
        return Err(Error::InvalidInput(format!(
            "signal windows cover {covered} of {n} bins; at least half must remain"
        )));
    }
    let mags: Vec<f64> = sp
        .values
        .iter()
        .zip(&masked)
        .filter(|(_, &m)| !m)
        .map(|(v, _)| v.norm())
        .collect();
    let count = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / count;
    let var = if mags.len() > 1 {
        mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(NoiseFloor { mean, sigma: var.sqrt(), bins: mags.len() })
}

/// Bins `[0, width)`, their mirror, and nothing else: the high-frequency
/// floor used where only the DC-adjacent signal matters.
fn low_band_windows(n: usize, width: usize) -> Vec<Range<usize>> {
    let w = 0..width.min(n);
    vec![w.clone(), mirrored(&w, n)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaEstimate {
    /// Clamped to `[0, 0.5)`.
    pub eta: f64,
    /// Unclamped `(1 - (Σ + z_inf)) / 2`.
    pub raw: f64,
    /// One-sigma projection-noise uncertainty of `raw`.
    pub sigma: f64,
    /// Raw estimate below zero by more than three sigma, which the error
    /// model cannot produce.
    pub negative_warning: bool,
}

/// η from the sum rule `Σ value + z_inf = 1 - 2η` for a series prepared in
/// `z = +1`.
pub fn estimate_eta(sp: &Spectrum, z_inf: f64) -> Result<EtaEstimate> {
    ensure_finite(z_inf, "z_inf")?;
    let raw = 0.5 * (1.0 - (spectrum_sum(sp) + z_inf));
    let n = sp.len();
    let sigma = match noise_floor(sp, &low_band_windows(n, n / 5 + 1)) {
        // a single sample carries σ_point = N·rms/√N0
        Ok(f) => 0.5 * n as f64 * f.rms() / (sp.n_original as f64).sqrt(),
        Err(_) => 0.0,
    };
    let negative_warning = raw < -3.0 * sigma.max(1e-12);
    Ok(EtaEstimate { eta: raw.clamp(0.0, 0.5 - f64::EPSILON), raw, sigma, negative_warning })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Refined angular frequency.
    pub omega: f64,
    /// `|value|` at the peak bin.
    pub height: f64,
    pub bin: usize,
    /// Number of low bins (from DC) excluded from the search.
    pub dc_exclusion: usize,
    pub floor: NoiseFloor,
}

/// Median and scaled median absolute deviation of `|value|` on the high
/// band (outside the lowest fifth and its mirror). Robust to a strong peak
/// in the band.
fn robust_floor(sp: &Spectrum) -> Option<(f64, f64)> {
    let n = sp.len();
    let lo = n / 5 + 1;
    if n < 2 * lo + 3 {
        return None;
    }
    let mut mags: Vec<f64> = sp.values[lo..n - lo].iter().map(|v| v.norm()).collect();
    let mid = mags.len() / 2;
    let median = *mags.select_nth_unstable_by(mid, f64::total_cmp).1;
    let mut dev: Vec<f64> = mags.iter().map(|m| (m - median).abs()).collect();
    let mad = *dev.select_nth_unstable_by(mid, f64::total_cmp).1;
    Some((median, 1.4826 * mad))
}

/// Low-frequency exclusion: at least `min_bins`, extended along the DC
/// tail until the magnitude rises more than three robust noise sigmas above
/// the lowest value seen or falls to the noise floor. The walk starts at the
/// top of the first resolution cell, where padding may place the DC maximum.
pub fn dc_exclusion(sp: &Spectrum, min_bins: usize) -> usize {
    let half = sp.len() / 2;
    let (level, sigma) = robust_floor(sp).unwrap_or((0.0, 0.0));
    let tol = 3.0 * sigma;
    let mag = |k: usize| sp.values[k].norm();
    let cell = sp.len().div_ceil(sp.n_original.max(1)).clamp(1, half.max(1));
    let mut k = (1..=cell).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap_or(1);
    let mut lowest = mag(k);
    while k < half {
        let next = mag(k + 1);
        if next > lowest + tol || (tol > 0.0 && mag(k) <= level + tol) {
            break;
        }
        lowest = lowest.min(next);
        k += 1;
    }
    k.max(min_bins).max(MIN_DC_EXCLUSION).min(half)
}

/// Largest non-DC feature on `(0, π/Δt]`, refined by a three-point
/// parabola through `ln|value|`.
pub fn find_peak(sp: &Spectrum, exclude_dc_bins: usize) -> Result<Peak> {
    if exclude_dc_bins < 1 {
        return Err(Error::InvalidInput("exclude_dc_bins must be >= 1".into()));
    }
    let n = sp.len();
    let half = n / 2;
    if n < 4 {
        return Err(Error::InvalidInput("spectrum too short for peak search".into()));
    }
    let excl = dc_exclusion(sp, exclude_dc_bins);
    let mags: Vec<f64> = sp.values.iter().map(|v| v.norm()).collect();
    let Some((bin, &height)) = mags
        .iter()
        .enumerate()
        .take(half + 1)
        .skip(excl)
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return Err(Error::NoPeak { max: 0.0, threshold: 0.0 });
    };

    let guard = excl.max(n / 100).max(1);
    let dc = 0..excl;
    let pk = bin.saturating_sub(guard)..(bin + guard + 1).min(n);
    let windows = [dc.clone(), mirrored(&dc, n), pk.clone(), mirrored(&pk, n)];
    let floor = noise_floor(sp, &windows)?;
    let threshold = floor.mean + PEAK_SIGMAS * floor.sigma;
    if !(height > threshold) {
        return Err(Error::NoPeak { max: height, threshold });
    }

    let mut offset = 0.0;
    if bin < half {
        let (a, b, c) = (mags[bin - 1], height, mags[bin + 1]);
        if a > 1e-9 * b && c > 1e-9 * b {
            let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
            let curv = la - 2.0 * lb + lc;
            if curv < 0.0 {
                offset = (0.5 * (la - lc) / curv).clamp(-0.5, 0.5);
            }
        }
    }
    Ok(Peak { omega: (bin as f64 + offset) * sp.delta_omega(), height, bin, dc_exclusion: excl, floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{propagate_z, DecoherenceRates, HamiltonianParams};
    use crate::measurement::{derive_seed, sample_experiment, ExperimentConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn series(z: Vec<f64>, dt: f64) -> TimeSeries {
        TimeSeries::exact(dt, z)
    }

    #[test]
    fn constant_series_is_dc_only() {
        let sp = dft(&series(vec![1.0; 64], 0.1), None).unwrap();
        assert_abs_diff_eq!(sp.values[0].re, 1.0, epsilon = 1e-12);
        for v in &sp.values[1..] {
            assert!(v.norm() <= 1e-12);
        }
    }

    #[test]
    fn single_tone_on_grid() {
        let n = 128;
        let m = 9;
        let z = (0..n).map(|k| (2.0 * PI * (m * k) as f64 / n as f64).cos()).collect();
        let sp = dft(&series(z, 0.05), None).unwrap();
        assert!(sp.values[0].norm() <= 1e-12);
        assert_abs_diff_eq!(sp.values[m].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.values[n - m].re, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn decoherence_free_peak_relations() {
        let (n, m) = (200usize, 10usize);
        let dt = 0.05;
        let d = 2.0 * PI * m as f64 / (n as f64 * dt);
        let theta = 0.7;
        let h = HamiltonianParams::new(d, theta).unwrap();
        let z = propagate_z(&h, &DecoherenceRates::default(), 1.0, dt, n).unwrap();
        let sp = dft(&series(z, dt), None).unwrap();
        let (f0, fp) = (sp.values[0].re, sp.values[m].re);
        assert_abs_diff_eq!(f0, theta.cos().powi(2), epsilon = 1e-10);
        assert_abs_diff_eq!(f0, 1.0 - 2.0 * fp, epsilon = 1e-10);
        let peak = find_peak(&sp, 1).unwrap();
        assert_eq!(peak.bin, m);
        assert_abs_diff_eq!(peak.omega, d, epsilon = 1e-12);
    }

    #[test]
    fn direct_and_fft_agree() {
        let z: Vec<f64> = (0..5000).map(|k| ((k * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        for n in [5000, 8192] {
            let a = direct_dft(&z, n);
            let b = fft_dft(&z, n);
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn shifted_sum_rule() {
        let z: Vec<f64> = (0..300).map(|k| -2.0 / 3.0 + (5.0 / 3.0) * (-0.05 * k as f64).exp()).collect();
        let sp = dft_shifted(&series(z, 0.1), -2.0 / 3.0, Some(1024)).unwrap();
        assert_abs_diff_eq!(spectrum_sum(&sp), 5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eta_from_noiseless_series() {
        let h = HamiltonianParams::new(1.0, FRAC_PI_2).unwrap();
        let rates = DecoherenceRates::dephasing(0.1);
        for eta in [0.0, 0.1] {
            let z = propagate_z(&h, &rates, 1.0, 0.05, 1000).unwrap();
            let z: Vec<f64> = z.iter().map(|v| (1.0 - 2.0 * eta) * v).collect();
            let sp = dft(&series(z, 0.05), Some(2048)).unwrap();
            assert_abs_diff_eq!(spectrum_sum(&sp), 1.0 - 2.0 * eta, epsilon = 1e-12);
            let e = estimate_eta(&sp, 0.0).unwrap();
            assert_abs_diff_eq!(e.eta, eta, epsilon = 1e-12);
            assert!(!e.negative_warning);
        }
    }

    #[test]
    fn eta_from_sampled_series_within_three_sigma() {
        let h = HamiltonianParams::new(1.0, 1.0).unwrap();
        let rates = DecoherenceRates::dephasing(0.1);
        let mut hits = 0;
        let trials = 200;
        for s in 0..trials {
            let cfg = ExperimentConfig::new(0.015, 1000, 50).with_eta(0.1).with_seed(derive_seed(3, s));
            let data = sample_experiment(&h, &rates, &cfg).unwrap();
            let e = estimate_eta(&dft(&data, Some(2048)).unwrap(), 0.0).unwrap();
            hits += ((e.raw - 0.1).abs() <= 3.0 * e.sigma) as usize;
        }
        assert!(hits as f64 >= 0.97 * trials as f64, "{hits}/{trials}");
    }

    #[test]
    fn negative_eta_flagged() {
        let z = (0..256).map(|k| (-0.2 * k as f64).exp()).collect();
        let sp = dft(&series(z, 0.1), Some(512)).unwrap();
        let e = estimate_eta(&sp, 0.5).unwrap();
        assert!(e.raw < 0.0);
        assert_eq!(e.eta, 0.0);
        assert!(e.negative_warning);
    }

    #[test]
    fn dephasing_peak_within_one_bin() {
        let h = HamiltonianParams::new(1.0, FRAC_PI_2).unwrap();
        let z = propagate_z(&h, &DecoherenceRates::dephasing(0.1), 1.0, 0.015, 1000).unwrap();
        let sp = dft(&series(z, 0.015), Some(2048)).unwrap();
        let peak = find_peak(&sp, 1).unwrap();
        assert!((peak.omega - 1.0).abs() <= sp.delta_omega());
    }

    #[test]
    fn noisy_dc_tail_does_not_hide_the_peak() {
        // strong population decay: a wide DC feature with projection noise on it
        let h = HamiltonianParams::new(1.0, 1.0).unwrap();
        let rates = DecoherenceRates::new(0.05, 0.05, 0.15).unwrap();
        let cfg = ExperimentConfig::new(0.05, 3000, 2000).with_seed(11);
        let data = sample_experiment(&h, &rates, &cfg).unwrap();
        let tail = &data.z_mean[2700..];
        let shift = tail.iter().sum::<f64>() / tail.len() as f64;
        let sp = dft_shifted(&data, shift, Some(8192)).unwrap();
        let peak = find_peak(&sp, 1).unwrap();
        assert!((peak.omega - 1.0).abs() < 0.05, "{peak:?}");
        assert!(peak.dc_exclusion < peak.bin);
    }

    #[test]
    fn dc_exclusion_stops_before_a_nearby_peak() {
        // long record: the peak sits only a few bins above DC
        let h = HamiltonianParams::new(1.0, 1.0).unwrap();
        let z = propagate_z(&h, &DecoherenceRates::dephasing(0.1), 1.0, 0.0015, 10_000).unwrap();
        let sp = dft(&series(z, 0.0015), Some(32_768)).unwrap();
        let peak = find_peak(&sp, 1).unwrap();
        assert!((peak.omega - 1.0).abs() < sp.delta_omega(), "{peak:?}");
    }

    #[test]
    fn pure_noise_has_no_peak() {
        let h = HamiltonianParams::new(1.0, FRAC_PI_2).unwrap();
        // η near 1/2 washes out the signal
        let rates = DecoherenceRates::dephasing(0.1);
        let trials = 1000;
        let mut none = 0;
        for s in 0..trials {
            let cfg = ExperimentConfig::new(0.05, 512, 50).with_eta(0.5 - 1e-9).with_seed(derive_seed(9, s));
            let data = sample_experiment(&h, &rates, &cfg).unwrap();
            none += matches!(find_peak(&dft(&data, None).unwrap(), 1), Err(Error::NoPeak { .. })) as usize;
        }
        assert!(none as f64 >= 0.97 * trials as f64, "{none}/{trials}");
    }

    #[test]
    fn noise_floor_of_noiseless_series() {
        let n = 256;
        let m = 20;
        let z = (0..n).map(|k| (2.0 * PI * (m * k) as f64 / n as f64).cos()).collect();
        let sp = dft(&series(z, 0.1), None).unwrap();
        let w = m - 2..m + 3;
        let f = noise_floor(&sp, &[0..2, w.clone(), mirrored(&w, n)]).unwrap();
        assert!(f.sigma <= 1e-12 && f.mean <= 1e-12);
    }

    #[test]
    fn noise_floor_scales_with_ensemble() {
        // an on-grid undamped tone leaks nothing, so the floor is pure
        // projection noise
        let (n, m, dt) = (1000usize, 40usize, 0.05);
        let d = 2.0 * PI * m as f64 / (n as f64 * dt);
        let h = HamiltonianParams::new(d, FRAC_PI_2).unwrap();
        let rates = DecoherenceRates::default();
        let floor = |n_e: u64| -> f64 {
            (0..100)
                .map(|s| {
                    let cfg = ExperimentConfig::new(dt, n, n_e).with_seed(derive_seed(21, s));
                    let sp = dft(&sample_experiment(&h, &rates, &cfg).unwrap(), None).unwrap();
                    let peak = find_peak(&sp, 1).unwrap();
                    peak.floor.sigma
                })
                .sum::<f64>()
                / 100.0
        };
        let ratio = floor(50) / floor(5000);
        assert!((ratio / 10.0 - 1.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn noise_floor_rejects_wide_windows() {
        let sp = dft(&series(vec![0.0; 16], 0.1), None).unwrap();
        assert!(noise_floor(&sp, &[0..8]).is_err());
    }

    #[test]
    fn mirror_ranges() {
        assert_eq!(mirrored(&(0..3), 16), 14..16);
        assert_eq!(mirrored(&(4..7), 16), 10..13);
        assert_eq!(mirrored(&(1..2), 16), 15..16);
    }

    #[test]
    fn padding_keeps_sum_and_peak() {
        let h = HamiltonianParams::new(1.3, 1.0).unwrap();
        let dt = 0.05;
        let z = propagate_z(&h, &DecoherenceRates::dephasing(0.2), 1.0, dt, 1000).unwrap();
        let s = series(z, dt);
        let raw = dft(&s, None).unwrap();
        let pad = dft(&s, Some(padded_length(s.len()))).unwrap();
        assert_abs_diff_eq!(spectrum_sum(&raw), spectrum_sum(&pad), epsilon = 1e-12);
        let (a, b) = (find_peak(&raw, 1).unwrap(), find_peak(&pad, 1).unwrap());
        assert!((a.omega - b.omega).abs() <= raw.delta_omega());
    }

    #[test]
    fn csv_round_trip() {
        let z: Vec<f64> = (0..40).map(|k| (0.3 * k as f64).cos() * (-0.05 * k as f64).exp()).collect();
        let sp = dft(&series(z, 0.2), Some(64)).unwrap();
        let mut buf = Vec::new();
        sp.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"omega,re,im,abs\n"));
        let back = Spectrum::read_csv(buf.as_slice(), 40).unwrap();
        assert_eq!(back.values, sp.values);
        assert_eq!(back.omega, sp.omega);
        assert_abs_diff_eq!(back.dt, sp.dt, epsilon = 1e-15);
    }

    #[test]
    fn rejects_short_padding() {
        assert!(dft(&series(vec![1.0; 10], 0.1), Some(5)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sum_rule_exact(z in prop::collection::vec(-1.0..1.0f64, 2..300), pad in 0usize..100) {
            let n = z.len() + pad;
            let z0 = z[0];
            let sp = dft(&series(z, 0.1), Some(n)).unwrap();
            prop_assert!((spectrum_sum(&sp) - z0).abs() <= 1e-12);
        }

        #[test]
        fn parseval_and_symmetry(z in prop::collection::vec(-1.0..1.0f64, 2..300)) {
            let n = z.len();
            let energy: f64 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let sp = dft(&series(z, 0.1), None).unwrap();
            let spec_energy: f64 = sp.values.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!((energy - spec_energy).abs() <= 1e-10);
            for k in 1..n {
                prop_assert!((sp.values[k] - sp.values[n - k].conj()).norm() <= 1e-12);
            }
        }
    }
}
