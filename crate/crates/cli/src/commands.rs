use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use hamid_core::workflow::default_tracked;
use hamid_core::{
    characterize, expected_aux_series, fit_aux_decay, sample_aux_experiment, scaling_study, CharacterizeOptions,
    FitReport, TimeSeries,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{ensure_dir, write_json, OutputSet};

/// How a command that ran to completion went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Results were written but a fit did not converge or failed the
    /// mismatch check.
    Degraded,
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<Status> {
    let truth = cfg.truth()?;
    let base = cfg.experiment()?;
    let seeds = cfg.seeds()?;
    let series: Vec<(u64, TimeSeries)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut e = base.clone();
            e.seed = seed;
            Ok((seed, truth.series(&e, cfg.noiseless)?))
        })
        .collect::<anyhow::Result<_>>()?;

    ensure_dir(&cfg.outputs)?;
    let mut out = OutputSet::default();
    for (seed, s) in &series {
        out.write(cfg.outputs.join(format!("series_{seed}.csv")), |w| Ok(s.write_csv(w)?))?;
    }
    for p in out.commit() {
        println!("wrote {}", p.display());
    }
    Ok(Status::Ok)
}

fn read_series(path: &Path) -> anyhow::Result<TimeSeries> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TimeSeries::read_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn file_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "series".into())
}

pub fn characterize_cmd(cfg: &RunConfig, sigma_level: f64) -> anyhow::Result<Status> {
    let jobs: Vec<(String, TimeSeries)> = if !cfg.inputs.is_empty() {
        cfg.inputs.iter().map(|p| Ok((file_label(p), read_series(p)?))).collect::<anyhow::Result<_>>()?
    } else if cfg.truth.is_some() {
        let truth = cfg.truth()?;
        let base = cfg.experiment()?;
        cfg.seeds()?
            .into_iter()
            .map(|seed| {
                let mut e = base.clone();
                e.seed = seed;
                Ok((format!("seed_{seed}"), truth.series(&e, cfg.noiseless)?))
            })
            .collect::<anyhow::Result<_>>()?
    } else {
        bail!("nothing to characterize: pass --input files or give `truth` and `experiment` in the config");
    };

    let mut opts = CharacterizeOptions::new(cfg.model);
    opts.constraints = cfg.constraints.clone();
    opts.pad = cfg.pad;
    if let Some(e) = &cfg.experiment {
        opts.init_z = e.init_z;
    }
    let results: Vec<(String, hamid_core::Characterization)> = jobs
        .par_iter()
        .map(|(label, s)| {
            let c = characterize(s, &opts).with_context(|| format!("characterizing {label}"))?;
            Ok((label.clone(), c))
        })
        .collect::<anyhow::Result<_>>()?;

    ensure_dir(&cfg.outputs)?;
    let mut status = Status::Ok;
    let mut out = OutputSet::default();
    let nested = results.len() > 1;
    for (label, c) in &results {
        let dir = if nested { cfg.outputs.join(label) } else { cfg.outputs.clone() };
        ensure_dir(&dir)?;
        let report = c.report()?.with_sigma_level(sigma_level);
        out.write_json(dir.join("fit.json"), &report)?;
        out.write(dir.join("spectrum.csv"), |w| Ok(c.spectrum.write_csv(w)?))?;
        print_report(label, &report);
        if !c.is_success() {
            status = Status::Degraded;
        }
    }
    out.commit();
    Ok(status)
}

fn print_report(label: &str, r: &FitReport) {
    let e = &r.estimates;
    println!(
        "{label}: model {} converged={} mismatch={} residual {:.4e}",
        r.model, r.converged, r.mismatch, r.residual_norm
    );
    let values = [
        ("d", e.d),
        ("theta", e.theta),
        ("gamma_z", e.gamma_z),
        ("gamma_plus", e.gamma_plus),
        ("gamma_minus", e.gamma_minus),
    ];
    for (name, v) in values {
        let ci = r.confidence.iter().find(|(p, _)| p.to_string() == name).map(|(_, w)| *w);
        match ci {
            Some(w) => println!("  {name:<12} {v:.6} ± {w:.2e} ({}σ)", r.sigma_level),
            None => println!("  {name:<12} {v:.6} (fixed)"),
        }
    }
    println!("  {:<12} {:.4} ± {:.1e} (1σ)", "eta", e.eta, r.eta_sigma);
    for w in &r.warnings {
        eprintln!("warning: {label}: {w}");
    }
}

pub fn aux(cfg: &RunConfig) -> anyhow::Result<Status> {
    let truth = cfg.truth()?;
    if truth.d != 0.0 && truth.theta != 0.0 {
        bail!("the auxiliary experiment needs d = 0 or theta = 0 (got d = {}, theta = {})", truth.d, truth.theta);
    }
    let e = cfg.experiment()?;
    let rates = truth.rates()?;
    let series = if cfg.noiseless { expected_aux_series(&rates, e)? } else { sample_aux_experiment(&rates, e)? };

    ensure_dir(&cfg.outputs)?;
    let mut out = OutputSet::default();
    out.write(cfg.outputs.join("aux_up.csv"), |w| Ok(series.z1.write_csv(w)?))?;
    out.write(cfg.outputs.join("aux_down.csv"), |w| Ok(series.zm1.write_csv(w)?))?;
    // the branch records stay even when the fit below fails
    out.commit();

    let c = fit_aux_decay(&series.z1, &series.zm1)?;
    let path = cfg.outputs.join("constraints.json");
    write_json(&path, &c)?;
    println!(
        "gamma_plus {:.6}, gamma_minus {:.6}, gamma_sum {:.6}, z_inf {:.6}",
        c.gamma_plus, c.gamma_minus, c.gamma_sum, c.z_inf
    );
    println!("wrote {}", path.display());
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ScalingSummary<'a> {
    sigma_level: f64,
    slopes: &'a [hamid_core::workflow::SlopeFit],
    excluded: &'a std::collections::BTreeMap<u64, usize>,
}

pub fn scaling(cfg: &RunConfig, sigma_level: f64) -> anyhow::Result<Status> {
    let truth = cfg.truth()?;
    let base = cfg.experiment()?;
    let scaling = cfg.scaling.as_ref().context("config has no `scaling` section (or pass --n-e and --seeds)")?;
    scaling.validate()?;
    let mut opts = CharacterizeOptions::new(cfg.model);
    opts.constraints = cfg.constraints.clone();
    opts.pad = cfg.pad;
    opts.init_z = base.init_z;
    opts.sigma_level = sigma_level;

    // any replicate failing outright invalidates the study
    let study = scaling_study(truth, base, &opts, scaling, &default_tracked(cfg.model))
        .map_err(|e| anyhow!("scaling study aborted: {e}"))?;

    ensure_dir(&cfg.outputs)?;
    let mut out = OutputSet::default();
    out.write(cfg.outputs.join("scaling.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in &study.rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let summary = ScalingSummary { sigma_level, slopes: &study.slopes, excluded: &study.excluded };
    out.write_json(cfg.outputs.join("scaling_summary.json"), &summary)?;
    let written: Vec<PathBuf> = out.commit();

    for s in &study.slopes {
        println!(
            "{:<12} slope {:+.3}  mean frac·sqrt(N_T) {:.3} ({}σ)",
            s.param, s.slope, s.normalized, sigma_level
        );
    }
    for (n_total, k) in &study.excluded {
        if *k > 0 {
            eprintln!("warning: {k} non-converged replicates excluded at N_T = {n_total}");
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(Status::Ok)
}
