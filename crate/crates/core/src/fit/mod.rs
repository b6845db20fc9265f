//! Fourier-domain model fitting.

pub mod aux;
pub mod grid;
pub mod lm;
pub mod models;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bloch::DecoherenceRates;
use crate::error::{Error, Result};
use crate::spectrum::{find_peak, mirrored, spectrum_sum, Spectrum};
use grid::{grid_values, pack_residuals, GridSpec};
use lm::{levenberg_marquardt, Bound, LmOptions};
pub use models::{model_delta, model_dephasing, model_general, ModelKind, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    D,
    Theta,
    GammaZ,
    GammaPlus,
    GammaMinus,
    Amplitude,
}

impl ParamName {
    pub const ALL: [ParamName; 6] = [
        ParamName::D,
        ParamName::Theta,
        ParamName::GammaZ,
        ParamName::GammaPlus,
        ParamName::GammaMinus,
        ParamName::Amplitude,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::D => "d",
            ParamName::Theta => "theta",
            ParamName::GammaZ => "gamma_z",
            ParamName::GammaPlus => "gamma_plus",
            ParamName::GammaMinus => "gamma_minus",
            ParamName::Amplitude => "amplitude",
        }
    }

    fn get(self, p: &ModelParams) -> f64 {
        match self {
            ParamName::D => p.h.d,
            ParamName::Theta => p.h.theta,
            ParamName::GammaZ => p.rates.gamma_z,
            ParamName::GammaPlus => p.rates.gamma_plus,
            ParamName::GammaMinus => p.rates.gamma_minus,
            ParamName::Amplitude => p.amplitude,
        }
    }

    fn set(self, p: &mut ModelParams, v: f64) {
        match self {
            ParamName::D => p.h.d = v,
            ParamName::Theta => p.h.theta = v,
            ParamName::GammaZ => p.rates.gamma_z = v,
            ParamName::GammaPlus => p.rates.gamma_plus = v,
            ParamName::GammaMinus => p.rates.gamma_minus = v,
            ParamName::Amplitude => p.amplitude = v,
        }
    }

    fn bound(self) -> Bound {
        match self {
            ParamName::Theta => Bound::Interval(0.0, PI),
            ParamName::GammaZ | ParamName::GammaPlus | ParamName::GammaMinus => Bound::NonNegative,
            ParamName::D | ParamName::Amplitude => Bound::Positive,
        }
    }
}

impl std::str::FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{s}'")))
    }
}

impl std::fmt::Display for ParamName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn model_params(kind: ModelKind) -> &'static [ParamName] {
    use ParamName::*;
    match kind {
        ModelKind::Delta => &[D, Theta, Amplitude],
        ModelKind::Dephasing => &[D, Theta, GammaZ, Amplitude],
        ModelKind::General => &[D, Theta, GammaZ, GammaPlus, GammaMinus, Amplitude],
    }
}

/// Parameters removed from the fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitConstraints {
    /// Parameters held at the given values, keyed by name.
    #[serde(default)]
    pub fixed: BTreeMap<ParamName, f64>,
    /// Fixed `Γ- / Γ+`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_gamma: Option<f64>,
    /// Fixed `Γ+ + Γ-`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_gamma: Option<f64>,
}

impl FitConstraints {
    /// Constraints from the auxiliary experiment: both rates become fixed.
    pub fn from_aux(aux: &aux::AuxConstraints) -> Self {
        let mut c = Self::default();
        if aux.gamma_plus > 0.0 {
            c.ratio_gamma = Some(aux.gamma_minus / aux.gamma_plus);
            c.sum_gamma = Some(aux.gamma_sum);
        } else {
            c.fixed.insert(ParamName::GammaPlus, aux.gamma_plus);
            c.fixed.insert(ParamName::GammaMinus, aux.gamma_minus);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (name, &v) in &self.fixed {
            if !v.is_finite() || (*name != ParamName::Theta && v < 0.0) {
                return Err(Error::InvalidInput(format!("fixed {name} = {v} is not allowed")));
            }
        }
        for (v, what) in [(self.ratio_gamma, "ratio_gamma"), (self.sum_gamma, "sum_gamma")] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!("{what} must be finite and >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Parameters of `kind` left free.
    pub fn free_params(&self, kind: ModelKind) -> Vec<ParamName> {
        let both = self.ratio_gamma.is_some() && self.sum_gamma.is_some();
        let one = self.ratio_gamma.is_some() || self.sum_gamma.is_some();
        model_params(kind)
            .iter()
            .copied()
            .filter(|p| !self.fixed.contains_key(p))
            .filter(|p| match p {
                ParamName::GammaPlus => !both,
                ParamName::GammaMinus => !one,
                _ => true,
            })
            .collect()
    }

    /// Imposes fixed values and the rate relations on `p`.
    pub fn apply(&self, p: &mut ModelParams) {
        for (&name, &v) in &self.fixed {
            name.set(p, v);
        }
        match (self.ratio_gamma, self.sum_gamma) {
            (Some(r), Some(s)) => {
                p.rates.gamma_plus = s / (1.0 + r);
                p.rates.gamma_minus = s * r / (1.0 + r);
            }
            (Some(r), None) => p.rates.gamma_minus = r * p.rates.gamma_plus,
            (None, Some(s)) => {
                p.rates.gamma_plus = p.rates.gamma_plus.min(s);
                p.rates.gamma_minus = s - p.rates.gamma_plus;
            }
            (None, None) => {}
        }
    }

    fn bound(&self, name: ParamName) -> Bound {
        match (name, self.sum_gamma, self.ratio_gamma) {
            (ParamName::GammaPlus, Some(s), None) => Bound::Interval(0.0, s),
            _ => name.bound(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub estimates: ModelParams,
    pub residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelKind,
    pub estimates: ModelParams,
    pub free: Vec<ParamName>,
    /// `(JᵀJ)⁻¹` over `free` in natural units, scaled by `N/N0` when the
    /// spectrum was zero padded (padded bins are not independent). Multiply
    /// by `residual_norm² / (m - p)` for the parameter covariance.
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    /// Number of real residuals `m`.
    pub residual_count: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Refit cycles that changed the estimates.
    pub cycles: usize,
    pub history: Vec<CycleRecord>,
    /// The raw θ estimate lay in `(π/2, π]` and was reported as `π - θ`;
    /// the z record cannot distinguish the two.
    pub theta_folded: bool,
}

impl FitResult {
    pub fn index_of(&self, name: ParamName) -> Option<usize> {
        self.free.iter().position(|&p| p == name)
    }

    pub fn residual_scale(&self) -> Result<f64> {
        let (m, p) = (self.residual_count, self.free.len());
        if m <= p {
            return Err(Error::UndefinedCovariance { residuals: m, params: p });
        }
        Ok(self.residual_norm / ((m - p) as f64).sqrt())
    }

    /// `sigma_level · sqrt(gᵀ C g) · scale` for a derived quantity with
    /// gradient `grad` over the free parameters.
    pub fn derived_uncertainty(&self, grad: &[(ParamName, f64)], sigma_level: f64) -> Result<f64> {
        let scale = self.residual_scale()?;
        let mut var = 0.0;
        for &(a, ga) in grad {
            for &(b, gb) in grad {
                if let (Some(i), Some(j)) = (self.index_of(a), self.index_of(b)) {
                    var += ga * gb * self.covariance[(i, j)];
                }
            }
        }
        Ok(sigma_level * var.max(0.0).sqrt() * scale)
    }
}

/// `δx_i = k · sqrt(C_ii · rss / (m - p))` for each free parameter.
pub fn confidence_intervals(fit: &FitResult, sigma_level: f64) -> Result<Vec<(ParamName, f64)>> {
    let scale = fit.residual_scale()?;
    Ok(fit
        .free
        .iter()
        .enumerate()
        .map(|(i, &name)| (name, sigma_level * fit.covariance[(i, i)].max(0.0).sqrt() * scale))
        .collect())
}

/// Fits `active` (a subset of the model's free parameters) with the rest
/// held at `init`. `shift` is the constant removed from the record before
/// transforming.
pub fn fit_model(
    data: &Spectrum,
    kind: ModelKind,
    init: &ModelParams,
    constraints: &FitConstraints,
    shift: f64,
    active: &[ParamName],
    opts: &LmOptions,
) -> Result<FitResult> {
    constraints.validate()?;
    let grid = GridSpec::for_spectrum(data, shift)?;
    let n = grid.n;
    let bins = grid.bins();
    let observed = &data.values[..bins];
    let mut base = *init;
    constraints.apply(&mut base);
    base.refresh_steady_state();

    let build = |x: &[f64]| -> ModelParams {
        let mut p = base;
        for (name, &v) in active.iter().zip(x) {
            name.set(&mut p, v);
        }
        constraints.apply(&mut p);
        p
    };
    let residual_fn = |x: &[f64]| -> Result<Vec<f64>> {
        let model = grid_values(kind, &build(x), &grid)?;
        let mut out = Vec::with_capacity(n);
        pack_residuals(observed, &model, n, &mut out);
        Ok(out)
    };

    let x0: Vec<f64> = active.iter().map(|p| p.get(&base)).collect();
    let bounds: Vec<Bound> = active.iter().map(|&p| constraints.bound(p)).collect();
    let rep = levenberg_marquardt(residual_fn, &x0, &bounds, opts)?;

    let mut estimates = build(&rep.x);
    estimates.refresh_steady_state();
    let pad_factor = n as f64 / data.n_original as f64;
    Ok(FitResult {
        model: kind,
        estimates,
        free: active.to_vec(),
        covariance: &rep.covariance * pad_factor,
        residual_norm: rep.residual_norm(),
        residual_count: n,
        iterations: rep.iterations,
        converged: rep.converged,
        cycles: 0,
        history: vec![],
        theta_folded: false,
    })
}

pub const REFIT_TOLERANCE: f64 = 1e-6;
pub const MAX_REFIT_CYCLES: usize = 20;
/// Restart points, as fractions of `d`, for a rate stuck at zero.
const RATE_PROBES: [f64; 2] = [1e-2, 1e-1];

fn relative_change(a: &ModelParams, b: &ModelParams, free: &[ParamName]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &p in free {
        num += (p.get(a) - p.get(b)).powi(2);
        den += p.get(b).powi(2);
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

fn fold_theta(fit: &mut FitResult) {
    if fit.estimates.h.theta > FRAC_PI_2 {
        fit.estimates.h.theta = PI - fit.estimates.h.theta;
        fit.theta_folded = true;
        // dθ_reported/dθ = -1 flips the θ row and column of the covariance
        if let Some(i) = fit.index_of(ParamName::Theta) {
            for j in 0..fit.free.len() {
                if j != i {
                    fit.covariance[(i, j)] = -fit.covariance[(i, j)];
                    fit.covariance[(j, i)] = -fit.covariance[(j, i)];
                }
            }
        }
    }
}

/// Refits each free parameter alone, in the order d, Γz, θ, Γ+, Γ-,
/// amplitude, then all jointly; repeats until the joint estimates move by
/// less than [`REFIT_TOLERANCE`] (relative) or [`MAX_REFIT_CYCLES`] pass.
/// [`fit_model`], plus restarts for rates sitting at zero. Near zero the
/// rate transform has a vanishing derivative, so a rate that reached the
/// boundary barely moves even when the optimum lies inside. Each such rate
/// is restarted from small positive values and the cheapest fit is kept.
fn fit_with_restarts(
    data: &Spectrum,
    kind: ModelKind,
    init: &ModelParams,
    constraints: &FitConstraints,
    shift: f64,
    params: &[ParamName],
    opts: &LmOptions,
) -> Result<FitResult> {
    let mut best = fit_model(data, kind, init, constraints, shift, params, opts)?;
    let scale = init.h.d;
    for &p in params {
        if p.bound() != Bound::NonNegative || p.get(&best.estimates) >= RATE_PROBES[0] * scale {
            continue;
        }
        for probe in RATE_PROBES {
            let mut start = best.estimates;
            p.set(&mut start, probe * scale);
            start.refresh_steady_state();
            if let Ok(f) = fit_model(data, kind, &start, constraints, shift, params, opts) {
                if f.residual_norm < best.residual_norm {
                    best = f;
                }
            }
        }
    }
    Ok(best)
}

pub fn iterative_refit(
    data: &Spectrum,
    kind: ModelKind,
    init: &ModelParams,
    constraints: &FitConstraints,
    shift: f64,
) -> Result<FitResult> {
    use ParamName::*;
    let free = constraints.free_params(kind);
    if free.is_empty() {
        return Err(Error::InvalidInput("every parameter is constrained".into()));
    }
    let order: Vec<ParamName> =
        [D, GammaZ, Theta, GammaPlus, GammaMinus, Amplitude].into_iter().filter(|p| free.contains(p)).collect();
    let opts = LmOptions::default();
    let mut current = *init;
    constraints.apply(&mut current);
    let mut history = Vec::new();
    let mut last: Option<FitResult> = None;
    let mut settled = false;
    let mut cycles = 0;

    for _ in 0..MAX_REFIT_CYCLES {
        for &p in &order {
            if let Ok(single) = fit_with_restarts(data, kind, &current, constraints, shift, &[p], &opts) {
                current = single.estimates;
            }
        }
        let joint = fit_with_restarts(data, kind, &current, constraints, shift, &free, &opts)?;
        history.push(CycleRecord {
            estimates: joint.estimates,
            residual_norm: joint.residual_norm,
            converged: joint.converged,
        });
        let change = last.as_ref().map(|prev| relative_change(&joint.estimates, &prev.estimates, &free));
        current = joint.estimates;
        last = Some(joint);
        match change {
            Some(c) if c < REFIT_TOLERANCE => {
                settled = true;
                break;
            }
            _ => cycles += 1,
        }
    }

    let mut fit = last.expect("at least one cycle runs");
    fit.converged = fit.converged && settled;
    fit.cycles = cycles;
    fit.history = history;
    fold_theta(&mut fit);
    Ok(fit)
}

/// Starting point from the spectrum: `d` from the peak position, θ from the
/// weight of the DC feature against the side peaks, Γz from the peak width,
/// and the amplitude from the sum rule.
pub fn initial_guess(data: &Spectrum, kind: ModelKind, shift: f64, init_z: f64) -> Result<ModelParams> {
    let peak = find_peak(data, 1)?;
    let n = data.len();
    let mags: Vec<f64> = data.values.iter().map(|v| v.norm()).collect();

    let dc = 0..peak.dc_exclusion;
    let f0: f64 = dc.clone().chain(mirrored(&dc, n)).map(|k| data.values[k].re).sum::<f64>() * init_z;
    let half_height = 0.5 * peak.height;
    let (mut lo, mut hi) = (peak.bin, peak.bin);
    while lo > peak.dc_exclusion && mags[lo - 1] > half_height {
        lo -= 1;
    }
    while hi < n / 2 && mags[hi + 1] > half_height {
        hi += 1;
    }
    let fp: f64 = (lo.saturating_sub(1).max(peak.dc_exclusion)..=(hi + 1).min(n / 2))
        .map(|k| data.values[k].re)
        .sum::<f64>()
        * init_z;
    let cos2 = if f0 + 2.0 * fp > 0.0 { (f0.max(0.0) / (f0.max(0.0) + 2.0 * fp.max(0.0))).clamp(0.01, 0.95) } else { 0.3 };
    let theta = cos2.sqrt().acos();

    // |Lorentzian| falls to half height at √3 half-widths.
    let hwhm = ((hi - lo + 1) as f64 * 0.5 * data.delta_omega()).max(0.5 * data.delta_omega());
    let gamma = hwhm / 3f64.sqrt() / (1.0 + cos2);

    let amplitude = {
        let a = (spectrum_sum(data) + shift) / init_z;
        if a > 0.05 {
            a.min(1.0)
        } else {
            1.0
        }
    };
    let mut p = ModelParams::new(
        crate::bloch::HamiltonianParams { d: peak.omega, theta },
        DecoherenceRates::default(),
        amplitude,
    );
    p.init_z = init_z;
    match kind {
        ModelKind::Delta => {}
        ModelKind::Dephasing => p.rates.gamma_z = gamma,
        ModelKind::General => {
            p.rates = general_rate_guess(data, &p, gamma, shift)?;
        }
    }
    p.refresh_steady_state();
    Ok(p)
}

/// Rate split for the general model: the peak width fixes only a
/// combination of the three rates, so a coarse grid over `(Γz, Γs, Γ+/Γs)`
/// around the width estimate `gamma` is scored against the data.
fn general_rate_guess(data: &Spectrum, p: &ModelParams, gamma: f64, shift: f64) -> Result<DecoherenceRates> {
    const GZ: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];
    const SUM: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
    const FRAC: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
    let grid = GridSpec::for_spectrum(data, shift)?;
    let observed = &data.values[..grid.bins()];
    let mut best = (f64::INFINITY, DecoherenceRates::new(0.5 * gamma, 0.5 * gamma, 0.5 * gamma)?);
    let mut residuals = Vec::with_capacity(grid.n);
    for gz in GZ {
        for sum in SUM {
            for frac in FRAC {
                let mut q = *p;
                q.rates = DecoherenceRates::new(gz * gamma, frac * sum * gamma, (1.0 - frac) * sum * gamma)?;
                q.refresh_steady_state();
                let Ok(model) = grid_values(ModelKind::General, &q, &grid) else { continue };
                residuals.clear();
                pack_residuals(observed, &model, grid.n, &mut residuals);
                let cost: f64 = residuals.iter().map(|r| r * r).sum();
                if cost < best.0 {
                    best = (cost, q.rates);
                }
            }
        }
    }
    Ok(best.1)
}
