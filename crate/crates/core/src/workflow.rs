//! End-to-end characterization: record → spectrum → iterative fit, and
//! replicated studies of how the uncertainties scale with effort.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{DecoherenceRates, HamiltonianParams};
use crate::error::{Error, Result};
use crate::fit::{confidence_intervals, initial_guess, iterative_refit, FitConstraints, FitResult, ModelKind, ParamName};
use crate::measurement::{derive_seed, expected_series, sample_experiment, ExperimentConfig, TimeSeries};
use crate::spectrum::{
    dft_shifted, estimate_eta, mirrored, noise_floor, padded_length, EtaEstimate, NoiseFloor, Spectrum,
};

/// Default confidence level of reported intervals.
pub const DEFAULT_SIGMA_LEVEL: f64 = 3.0;

/// A residual norm this many times the noise-floor prediction marks the
/// model as inappropriate.
pub const MISMATCH_FACTOR: f64 = 5.0;

const TAIL_FRACTION: f64 = 0.1;
const EXACT_TAIL_RMS: f64 = 1e-12;

/// Generating parameters of a simulated experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub d: f64,
    pub theta: f64,
    #[serde(default)]
    pub gamma_z: f64,
    #[serde(default)]
    pub gamma_plus: f64,
    #[serde(default)]
    pub gamma_minus: f64,
}

impl Truth {
    pub fn hamiltonian(&self) -> Result<HamiltonianParams> {
        HamiltonianParams::new(self.d, self.theta)
    }

    pub fn rates(&self) -> Result<DecoherenceRates> {
        DecoherenceRates::new(self.gamma_z, self.gamma_plus, self.gamma_minus)
    }

    pub fn value(&self, name: ParamName) -> Option<f64> {
        match name {
            ParamName::D => Some(self.d),
            ParamName::Theta => Some(self.theta),
            ParamName::GammaZ => Some(self.gamma_z),
            ParamName::GammaPlus => Some(self.gamma_plus),
            ParamName::GammaMinus => Some(self.gamma_minus),
            ParamName::Amplitude => None,
        }
    }

    /// Noise-free record, or one sampled with `cfg.seed`.
    pub fn series(&self, cfg: &ExperimentConfig, noiseless: bool) -> Result<TimeSeries> {
        let (h, rates) = (self.hamiltonian()?, self.rates()?);
        if noiseless {
            expected_series(&h, &rates, cfg)
        } else {
            sample_experiment(&h, &rates, cfg)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadPolicy {
    /// Pad when the record's tail has reached the steady state.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeOptions {
    pub model: ModelKind,
    pub constraints: FitConstraints,
    /// Prepared state of the record, `+1` or `-1`.
    pub init_z: f64,
    pub sigma_level: f64,
    pub pad: PadPolicy,
}

impl CharacterizeOptions {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            constraints: FitConstraints::default(),
            init_z: 1.0,
            sigma_level: DEFAULT_SIGMA_LEVEL,
            pad: PadPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Characterization {
    pub fit: FitResult,
    pub spectrum: Spectrum,
    /// Constant removed from the record before transforming.
    pub shift: f64,
    pub eta: EtaEstimate,
    /// High-frequency floor of the spectrum.
    pub noise: NoiseFloor,
    /// Residual norm expected from projection noise alone; `None` for exact
    /// records.
    pub expected_residual: Option<f64>,
    pub mismatch: bool,
    pub warnings: Vec<String>,
}

impl Characterization {
    /// Accepted fit: converged and consistent with the noise floor.
    pub fn is_success(&self) -> bool {
        self.fit.converged && !self.mismatch
    }

    pub fn report(&self) -> Result<FitReport> {
        FitReport::new(self)
    }
}

fn tail(z: &[f64]) -> &[f64] {
    let len = ((z.len() as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, z.len());
    &z[z.len() - len..]
}

/// Steady-state offset removed before transforming: the tail mean when the
/// model has a nonzero `z(∞)`, otherwise zero.
pub fn record_shift(series: &TimeSeries, model: ModelKind) -> f64 {
    match model {
        ModelKind::General => {
            let t = tail(&series.z_mean);
            t.iter().sum::<f64>() / t.len() as f64
        }
        ModelKind::Delta | ModelKind::Dephasing => 0.0,
    }
}

/// Whether the tail of `series - shift` is within projection noise of zero,
/// so that zero padding does not introduce a step.
pub fn tail_settled(series: &TimeSeries, shift: f64) -> bool {
    let t = tail(&series.z_mean);
    let rms = (t.iter().map(|z| (z - shift).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
    if series.is_exact() {
        rms <= EXACT_TAIL_RMS
    } else {
        rms <= 3.0 * ((1.0 - shift * shift).max(0.0) / series.n_e as f64).sqrt()
    }
}

fn high_band(n: usize) -> Vec<Range<usize>> {
    let low = 0..(n / 5 + 1).min(n);
    vec![low.clone(), mirrored(&low, n)]
}

pub fn characterize(series: &TimeSeries, opts: &CharacterizeOptions) -> Result<Characterization> {
    series.validate()?;
    opts.constraints.validate()?;
    if opts.init_z != 1.0 && opts.init_z != -1.0 {
        return Err(Error::InvalidInput(format!("init_z must be +1 or -1, got {}", opts.init_z)));
    }
    let mut warnings = Vec::new();
    let shift = record_shift(series, opts.model);
    let pad = match opts.pad {
        PadPolicy::Always => true,
        PadPolicy::Never => false,
        PadPolicy::Auto => {
            let settled = tail_settled(series, shift);
            if !settled {
                warnings.push(
                    "record tail has not reached the steady state; zero padding disabled, expect spectral leakage"
                        .to_string(),
                );
            }
            settled
        }
    };
    let spectrum = dft_shifted(series, shift, pad.then(|| padded_length(series.len())))?;

    let mut init = initial_guess(&spectrum, opts.model, shift, opts.init_z)?;
    opts.constraints.apply(&mut init);
    init.refresh_steady_state();
    let fit = iterative_refit(&spectrum, opts.model, &init, &opts.constraints, shift)?;
    if !fit.converged {
        warnings.push(format!("fit did not converge after {} cycles", fit.history.len()));
    }
    if fit.theta_folded {
        warnings.push("theta reported as pi - theta; the record cannot tell them apart".to_string());
    }

    let mut eta = estimate_eta(&spectrum, shift)?;
    if opts.init_z < 0.0 {
        eta.raw = 1.0 - eta.raw;
        eta.eta = eta.raw.clamp(0.0, 0.5 - f64::EPSILON);
        eta.negative_warning = eta.raw < -3.0 * eta.sigma.max(1e-12);
    }
    if eta.negative_warning {
        warnings.push(format!("sum rule gives eta = {:.3e} < 0 beyond 3 sigma", eta.raw));
    }

    let noise = noise_floor(&spectrum, &high_band(spectrum.len()))?;
    let expected_residual = (!series.is_exact()).then(|| {
        let dof = fit.residual_count.saturating_sub(fit.free.len()) as f64;
        (dof * noise.rms().powi(2) / 2.0).sqrt()
    });
    let mismatch = expected_residual.is_some_and(|e| fit.residual_norm > MISMATCH_FACTOR * e);
    if mismatch {
        warnings.push(format!(
            "residual norm {:.3e} exceeds {MISMATCH_FACTOR} x the noise prediction {:.3e}; the model looks inappropriate",
            fit.residual_norm,
            expected_residual.unwrap_or(0.0)
        ));
    }
    Ok(Characterization { fit, spectrum, shift, eta, noise, expected_residual, mismatch, warnings })
}

/// Estimates as written to `fit.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedEstimates {
    pub d: f64,
    pub theta: f64,
    pub gamma_z: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub amplitude: f64,
    pub z_inf: f64,
    pub eta: f64,
}

/// Serializable summary of a characterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub estimates: ReportedEstimates,
    /// Half-widths at `sigma_level`, free parameters only.
    pub confidence: BTreeMap<ParamName, f64>,
    pub sigma_level: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cycles: usize,
    pub residual_count: usize,
    pub free: Vec<ParamName>,
    /// Unscaled `(JᵀJ)⁻¹`, row-major over `free`.
    pub covariance: Vec<Vec<f64>>,
    pub theta_folded: bool,
    pub shift: f64,
    pub padded: bool,
    pub eta_sigma: f64,
    pub expected_residual: Option<f64>,
    pub mismatch: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    fn new(c: &Characterization) -> Result<Self> {
        let f = &c.fit;
        let e = &f.estimates;
        let confidence = match confidence_intervals(f, DEFAULT_SIGMA_LEVEL) {
            Ok(ci) => ci.into_iter().collect(),
            Err(Error::UndefinedCovariance { .. }) => BTreeMap::new(),
            Err(err) => return Err(err),
        };
        let p = f.free.len();
        Ok(Self {
            model: f.model,
            estimates: ReportedEstimates {
                d: e.h.d,
                theta: e.h.theta,
                gamma_z: e.rates.gamma_z,
                gamma_plus: e.rates.gamma_plus,
                gamma_minus: e.rates.gamma_minus,
                amplitude: e.amplitude,
                z_inf: e.z_inf,
                eta: c.eta.eta,
            },
            confidence,
            sigma_level: DEFAULT_SIGMA_LEVEL,
            residual_norm: f.residual_norm,
            iterations: f.iterations,
            converged: f.converged,
            cycles: f.cycles,
            residual_count: f.residual_count,
            free: f.free.clone(),
            covariance: (0..p).map(|i| (0..p).map(|j| f.covariance[(i, j)]).collect()).collect(),
            theta_folded: f.theta_folded,
            shift: c.shift,
            padded: c.spectrum.is_padded(),
            eta_sigma: c.eta.sigma,
            expected_residual: c.expected_residual,
            mismatch: c.mismatch,
            warnings: c.warnings.clone(),
        })
    }

    /// Rescales the intervals to another confidence level.
    pub fn with_sigma_level(mut self, sigma_level: f64) -> Self {
        let k = sigma_level / self.sigma_level;
        self.confidence.values_mut().for_each(|v| *v *= k);
        self.sigma_level = sigma_level;
        self
    }
}

/// Quantity tracked by a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracked {
    Param(ParamName),
    /// `d cos θ`, the σz coefficient of the Hamiltonian.
    HZ,
    /// `d sin θ`, the σx coefficient.
    HX,
}

impl Tracked {
    pub fn label(self) -> &'static str {
        match self {
            Tracked::Param(p) => p.as_str(),
            Tracked::HZ => "h_z",
            Tracked::HX => "h_x",
        }
    }

    /// Estimate and `sigma_level` uncertainty from a fit, if the quantity
    /// depends on free parameters only.
    pub fn estimate(self, fit: &FitResult, sigma_level: f64) -> Result<Option<(f64, f64)>> {
        let e = &fit.estimates;
        let (d, theta) = (e.h.d, e.h.theta);
        let (value, grad) = match self {
            Tracked::Param(p) => {
                if fit.index_of(p).is_none() {
                    return Ok(None);
                }
                let value = match p {
                    ParamName::D => d,
                    ParamName::Theta => theta,
                    ParamName::GammaZ => e.rates.gamma_z,
                    ParamName::GammaPlus => e.rates.gamma_plus,
                    ParamName::GammaMinus => e.rates.gamma_minus,
                    ParamName::Amplitude => e.amplitude,
                };
                (value, vec![(p, 1.0)])
            }
            Tracked::HZ => (d * theta.cos(), vec![(ParamName::D, theta.cos()), (ParamName::Theta, -d * theta.sin())]),
            Tracked::HX => (d * theta.sin(), vec![(ParamName::D, theta.sin()), (ParamName::Theta, d * theta.cos())]),
        };
        Ok(Some((value, fit.derived_uncertainty(&grad, sigma_level)?)))
    }
}

/// Fractional uncertainties of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub converged: bool,
    pub mismatch: bool,
    pub frac: BTreeMap<Tracked, f64>,
    pub estimates: BTreeMap<Tracked, f64>,
}

/// Simulates and characterizes one replicate.
pub fn run_replicate(
    truth: &Truth,
    cfg: &ExperimentConfig,
    opts: &CharacterizeOptions,
    tracked: &[Tracked],
) -> Result<ReplicateOutcome> {
    let series = truth.series(cfg, false)?;
    let c = characterize(&series, opts)?;
    let mut frac = BTreeMap::new();
    let mut estimates = BTreeMap::new();
    for &q in tracked {
        if let Some((v, u)) = q.estimate(&c.fit, opts.sigma_level)? {
            frac.insert(q, u / v.abs());
            estimates.insert(q, v);
        }
    }
    Ok(ReplicateOutcome { seed: cfg.seed, converged: c.fit.converged, mismatch: c.mismatch, frac, estimates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Ensemble sizes, at least three distinct values.
    pub n_e: Vec<u64>,
    /// Replicates per ensemble size, at least 10.
    pub seeds: usize,
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut distinct = self.n_e.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::InvalidInput("scaling study needs at least 3 distinct n_e values".into()));
        }
        if distinct[0] == 0 {
            return Err(Error::InvalidInput("n_e values must be >= 1".into()));
        }
        if self.seeds < 10 {
            return Err(Error::InvalidInput(format!("scaling study needs >= 10 seeds per n_e, got {}", self.seeds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_total: u64,
    pub param: String,
    pub frac_uncertainty_mean: f64,
    pub frac_uncertainty_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub param: String,
    pub slope: f64,
    pub intercept: f64,
    /// `mean frac · √N_T` averaged over the ensemble sizes.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    pub slopes: Vec<SlopeFit>,
    /// Replicates dropped for non-convergence, per `n_total`.
    pub excluded: BTreeMap<u64, usize>,
}

/// Default tracked quantities for `model`.
pub fn default_tracked(model: ModelKind) -> Vec<Tracked> {
    let mut t: Vec<Tracked> = match model {
        ModelKind::Delta => vec![ParamName::D, ParamName::Theta],
        ModelKind::Dephasing => vec![ParamName::D, ParamName::Theta, ParamName::GammaZ],
        ModelKind::General => {
            vec![ParamName::D, ParamName::Theta, ParamName::GammaZ, ParamName::GammaPlus, ParamName::GammaMinus]
        }
    }
    .into_iter()
    .map(Tracked::Param)
    .collect();
    t.extend([Tracked::HZ, Tracked::HX]);
    t
}

/// Least-squares `y = a + b x`, returning `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Runs `scaling.seeds` replicates for each ensemble size. Replicate `j` at
/// ensemble size index `i` uses seed `derive_seed(base.seed, i·seeds + j)`.
/// Non-converged replicates are excluded and counted; any hard failure
/// aborts the study.
pub fn scaling_study(
    truth: &Truth,
    base: &ExperimentConfig,
    opts: &CharacterizeOptions,
    scaling: &ScalingConfig,
    tracked: &[Tracked],
) -> Result<ScalingStudy> {
    scaling.validate()?;
    base.validate()?;
    let jobs: Vec<(usize, ExperimentConfig)> = scaling
        .n_e
        .iter()
        .enumerate()
        .flat_map(|(i, &n_e)| {
            (0..scaling.seeds).map(move |j| {
                let mut cfg = base.clone();
                cfg.n_e = n_e;
                cfg.seed = derive_seed(base.seed, (i * scaling.seeds + j) as u64);
                (i, cfg)
            })
        })
        .collect();
    let outcomes: Vec<(usize, ReplicateOutcome)> = jobs
        .par_iter()
        .map(|(i, cfg)| Ok((*i, run_replicate(truth, cfg, opts, tracked)?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut excluded = BTreeMap::new();
    let mut series: BTreeMap<Tracked, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, &n_e) in scaling.n_e.iter().enumerate() {
        let n_total = n_e * base.n_t as u64;
        let kept: Vec<&ReplicateOutcome> =
            outcomes.iter().filter(|(k, o)| *k == i && o.converged).map(|(_, o)| o).collect();
        excluded.insert(n_total, scaling.seeds - kept.len());
        for &q in tracked {
            let v: Vec<f64> = kept.iter().filter_map(|o| o.frac.get(&q).copied()).collect();
            if v.is_empty() {
                continue;
            }
            let (m, sd) = mean_sd(&v);
            rows.push(ScalingRow {
                n_total,
                param: q.label().to_string(),
                frac_uncertainty_mean: m,
                frac_uncertainty_sd: sd,
            });
            series.entry(q).or_default().push((n_total as f64, m));
        }
    }
    let slopes = series
        .into_iter()
        .filter(|(_, pts)| pts.len() >= 2)
        .map(|(q, pts)| {
            let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            let (intercept, slope) = linear_fit(&x, &y);
            let normalized = pts.iter().map(|(n, m)| m * n.sqrt()).sum::<f64>() / pts.len() as f64;
            SlopeFit { param: q.label().to_string(), slope, intercept, normalized }
        })
        .collect();
    Ok(ScalingStudy { rows, slopes, excluded })
}
