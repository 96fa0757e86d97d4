//! Monte-Carlo drivers and their CSV artifacts.
//!
//! Every driver runs one trial per seed on a worker pool, sorts the results
//! by seed and formats numbers with a fixed precision, so identical configs
//! and seed lists give byte-identical files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::comm::{qos_satisfied, BeamState, RateReport};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{build_scenario, ChannelSet};
use crate::joint::{algorithm3, baseline_ris_isac, orthogonal_links, JointOutcome, OuterStep};
use crate::linalg::{diag_conj_mul, trace_re, CMat, RMat};
use crate::sensing::{beampattern_gain, desired_beampattern, illumination_heatmap, normalize_by_max, AngleGrid};

/// Version tag written into every artifact header.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Noma,
    Baseline,
}

/// Everything recorded about one (scenario, seed) trial.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub n_ris: usize,
    pub system: System,
    /// min beampattern gain over the interested angles, W
    pub chi: f64,
    /// `P_max·M·‖G‖_F²`, the unit of the optimizer tolerances
    pub gain_scale: f64,
    /// gain at every grid angle, W
    pub gains: Vec<f64>,
    /// NOMA rate report (absent for the orthogonal system)
    pub rates: Option<RateReport>,
    /// per-link rates of the orthogonal system
    pub link_rates: Vec<f64>,
    /// smallest `R − R_min` over all users, bits/s/Hz
    pub worst_rate_margin: f64,
    pub qos_ok: bool,
    pub outer_trace: Vec<f64>,
    pub steps: Vec<OuterStep>,
    pub converged: bool,
    /// `‖W − wwᴴ‖_F/‖W‖_F` per beam
    pub extraction_errors: Vec<f64>,
    pub phase_fidelity: f64,
    pub refit_events: usize,
    pub wall_clock_s: f64,
}

impl ExperimentResult {
    /// Minimum recorded gain over the interested grid points.
    pub fn min_interested_gain(&self, config: &SystemConfig) -> f64 {
        AngleGrid::new(config).interested.iter().map(|&i| self.gains[i]).fold(f64::INFINITY, f64::min)
    }
}

fn grid_gains(v_cov: &CMat, w_cov: &[CMat], channels: &ChannelSet, config: &SystemConfig) -> Result<Vec<f64>> {
    AngleGrid::new(config)
        .grid
        .iter()
        .map(|&t| beampattern_gain(v_cov, w_cov, &channels.g, t, config.spacing_ratio))
        .collect()
}

/// NOMA trial on prepared channels.
pub fn noma_trial(channels: &ChannelSet, config: &SystemConfig, seed: u64) -> Result<(ExperimentResult, JointOutcome)> {
    let start = Instant::now();
    let out = algorithm3(channels, config, seed)?;
    let extracted = out.state.extracted();
    let rates = RateReport::evaluate(&extracted, channels, config)?;
    let result = ExperimentResult {
        seed,
        n_ris: config.n_ris,
        system: System::Noma,
        chi: out.chi,
        gain_scale: out.gain_scale,
        gains: grid_gains(&out.state.v_cov, &out.state.w_cov, channels, config)?,
        worst_rate_margin: rates.worst_margin(config),
        qos_ok: qos_satisfied(&rates, config, 1e-3),
        rates: Some(rates),
        link_rates: Vec::new(),
        outer_trace: out.outer_trace.clone(),
        steps: out.steps.clone(),
        converged: out.converged,
        extraction_errors: out.extraction_errors.clone(),
        phase_fidelity: out.phase_fidelity,
        refit_events: 0,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((result, out))
}

/// Orthogonal-system trial on prepared channels.
pub fn baseline_trial(channels: &ChannelSet, config: &SystemConfig, seed: u64) -> Result<ExperimentResult> {
    let start = Instant::now();
    let out = baseline_ris_isac(channels, config, seed)?;
    let links = orthogonal_links(channels, config);
    let w_cov: Vec<CMat> = out.w.iter().map(crate::linalg::outer).collect();
    let v_cov = crate::comm::ris_covariance(&out.v);
    let noise = config.noise_power;
    let link_rates: Vec<f64> = links
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let gamma = diag_conj_mul(&l.channel, &channels.g);
            let p: Vec<f64> = w_cov.iter().map(|w| trace_re(&v_cov, &(&gamma * w * gamma.adjoint()))).collect();
            let inter: f64 = p.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, x)| x).sum();
            (1.0 + p[k] / (inter + noise)).log2()
        })
        .collect();
    let worst = links.iter().zip(&link_rates).map(|(l, r)| r - l.rate_min).fold(f64::INFINITY, f64::min);
    Ok(ExperimentResult {
        seed,
        n_ris: config.n_ris,
        system: System::Baseline,
        chi: out.chi,
        gain_scale: out.gain_scale,
        gains: grid_gains(&out.v_cov, &out.w_cov, channels, config)?,
        rates: None,
        link_rates,
        worst_rate_margin: worst,
        qos_ok: worst >= -1e-3,
        outer_trace: out.outer_trace,
        steps: Vec::new(),
        converged: out.converged,
        extraction_errors: Vec::new(),
        phase_fidelity: 0.0,
        refit_events: out.refit_events,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Single NOMA trial.
pub fn run_trial(config: &SystemConfig, seed: u64) -> Result<ExperimentResult> {
    let (_, channels) = build_scenario(config, seed)?;
    noma_trial(&channels, config, seed).map(|(r, _)| r)
}

/// NOMA and orthogonal trials on the same channel draw.
pub fn run_paired(config: &SystemConfig, seed: u64) -> Result<(ExperimentResult, ExperimentResult)> {
    let (_, channels) = build_scenario(config, seed)?;
    let (noma, _) = noma_trial(&channels, config, seed)?;
    let base = baseline_trial(&channels, config, seed)?;
    Ok((noma, base))
}

/// Runs `f` for every seed on `workers` threads; results come back sorted
/// by seed.
pub fn map_seeds<T, F>(seeds: &[u64], workers: usize, f: F) -> Result<Vec<(u64, Result<T>)>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("worker pool: {e}")))?;
    let mut out: Vec<(u64, Result<T>)> = pool.install(|| seeds.par_iter().map(|&s| (s, f(s))).collect());
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

/// Mean and 95% normal-approximation half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Header lines and body of one CSV artifact.
#[derive(Clone, Debug)]
pub struct Csv {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt_f(x: f64) -> String {
    format!("{x:.9e}")
}

impl Csv {
    pub fn new(config: &SystemConfig, command: &str, columns: &[&str]) -> Self {
        Csv {
            meta: vec![
                ("version".into(), VERSION.into()),
                ("config_hash".into(), config.hash()),
                ("command".into(), command.into()),
            ],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }
}

fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

fn failure(r: &Result<impl Sized>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(Error::Infeasible(_)) => "infeasible".into(),
        Err(_) => "error".into(),
    }
}

/// Per-M beampattern curves averaged over seeds.
#[derive(Debug)]
pub struct BeampatternTable {
    pub angles: Vec<f64>,
    pub mask: Vec<f64>,
    /// `(M, mean physical gain per angle, mean normalized to max 1, seeds used)`
    pub curves: Vec<(usize, Vec<f64>, Vec<f64>, usize)>,
    pub trials: Vec<(usize, u64, Result<ExperimentResult>)>,
}

impl BeampatternTable {
    /// Mean physical gain over the grid points of the target windows.
    pub fn mean_target_gain(&self, config: &SystemConfig, m: usize) -> Option<f64> {
        let idx = AngleGrid::new(config).interested;
        let (_, gains, _, n) = self.curves.iter().find(|c| c.0 == m)?;
        (*n > 0).then(|| idx.iter().map(|&i| gains[i]).sum::<f64>() / idx.len() as f64)
    }

    pub fn to_csv(&self, config: &SystemConfig, seeds: &[u64]) -> Csv {
        let mut cols = vec!["angle_deg".to_string(), "mask".to_string()];
        for (m, ..) in &self.curves {
            cols.push(format!("norm_m{m}"));
        }
        for (m, ..) in &self.curves {
            cols.push(format!("gain_m{m}"));
        }
        let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
        let mut csv = Csv::new(config, "beampattern", &refs).meta("seeds", seed_list(seeds));
        for (i, a) in self.angles.iter().enumerate() {
            let mut row = vec![format!("{:.4}", a.to_degrees()), fmt_f(self.mask[i])];
            row.extend(self.curves.iter().map(|c| fmt_f(c.2[i])));
            row.extend(self.curves.iter().map(|c| fmt_f(c.1[i])));
            csv.push(row);
        }
        csv
    }
}

/// Mean beampattern per RIS size, from seeded NOMA runs.
pub fn beampattern(config: &SystemConfig, m_list: &[usize], seeds: &[u64], workers: usize) -> Result<BeampatternTable> {
    let jobs: Vec<(usize, u64)> = m_list.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("worker pool: {e}")))?;
    let trials: Vec<(usize, u64, Result<ExperimentResult>)> =
        pool.install(|| jobs.par_iter().map(|&(m, s)| (m, s, run_trial(&config.with_n_ris(m), s))).collect());
    Ok(beampattern_from_trials(config, m_list, trials))
}

/// Aggregates already computed trials into a [`BeampatternTable`].
pub fn beampattern_from_trials(
    config: &SystemConfig,
    m_list: &[usize],
    mut trials: Vec<(usize, u64, Result<ExperimentResult>)>,
) -> BeampatternTable {
    trials.sort_by_key(|(m, s, _)| (*m, *s));
    let grid = AngleGrid::new(config).grid;
    let mask: Vec<f64> = grid.iter().map(|&t| desired_beampattern(t, &config.targets, config.beam_width)).collect();
    let curves = m_list
        .iter()
        .map(|&m| {
            let ok: Vec<&ExperimentResult> = trials
                .iter()
                .filter(|(mm, ..)| *mm == m)
                .filter_map(|(_, _, r)| r.as_ref().ok())
                .collect();
            let mut mean = vec![0.0; grid.len()];
            for r in &ok {
                for (acc, g) in mean.iter_mut().zip(&r.gains) {
                    *acc += g / ok.len() as f64;
                }
            }
            let norm = normalize_by_max(&mean);
            (m, mean, norm, ok.len())
        })
        .collect();
    BeampatternTable { angles: grid, mask, curves, trials }
}

/// One row of the M sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub m: usize,
    /// seeds for which both systems returned a solution
    pub paired: usize,
    pub mean_noma: f64,
    pub ci95_noma: f64,
    pub mean_baseline: f64,
    pub ci95_baseline: f64,
}

#[derive(Debug)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(M, seed, NOMA result, orthogonal result)`
    pub trials: Vec<(usize, u64, Result<ExperimentResult>, Result<ExperimentResult>)>,
}

impl SweepTable {
    pub fn to_csv(&self, config: &SystemConfig, seeds: &[u64]) -> Csv {
        let cols = ["m", "paired", "mean_noma", "ci95_noma", "mean_baseline", "ci95_baseline"];
        let mut csv = Csv::new(config, "sweep-m", &cols).meta("seeds", seed_list(seeds));
        for r in &self.rows {
            csv.push(vec![
                r.m.to_string(),
                r.paired.to_string(),
                fmt_f(r.mean_noma),
                fmt_f(r.ci95_noma),
                fmt_f(r.mean_baseline),
                fmt_f(r.ci95_baseline),
            ]);
        }
        csv
    }

    pub fn trials_csv(&self, config: &SystemConfig, seeds: &[u64]) -> Csv {
        let cols = ["m", "seed", "status_noma", "chi_noma", "status_baseline", "chi_baseline", "refit_events"];
        let mut csv = Csv::new(config, "sweep-m trials", &cols).meta("seeds", seed_list(seeds));
        for (m, s, n, b) in &self.trials {
            let chi = |r: &Result<ExperimentResult>| r.as_ref().map_or("nan".into(), |x| fmt_f(x.chi));
            csv.push(vec![
                m.to_string(),
                s.to_string(),
                failure(n),
                chi(n),
                failure(b),
                chi(b),
                b.as_ref().map_or(0, |x| x.refit_events).to_string(),
            ]);
        }
        csv
    }
}

/// Paired NOMA/orthogonal runs for every `(M, seed)`.
pub fn sweep_m(config: &SystemConfig, m_list: &[usize], seeds: &[u64], workers: usize) -> Result<SweepTable> {
    let jobs: Vec<(usize, u64)> = m_list.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("worker pool: {e}")))?;
    let trials = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| {
                let cfg = config.with_n_ris(m);
                match build_scenario(&cfg, s) {
                    Ok((_, ch)) => (m, s, noma_trial(&ch, &cfg, s).map(|(r, _)| r), baseline_trial(&ch, &cfg, s)),
                    Err(e) => (m, s, Err(Error::Domain(e.to_string())), Err(e)),
                }
            })
            .collect()
    });
    Ok(sweep_from_trials(m_list, trials))
}

pub fn sweep_from_trials(
    m_list: &[usize],
    mut trials: Vec<(usize, u64, Result<ExperimentResult>, Result<ExperimentResult>)>,
) -> SweepTable {
    trials.sort_by_key(|(m, s, ..)| (*m, *s));
    let rows = m_list
        .iter()
        .map(|&m| {
            let pairs: Vec<(f64, f64)> = trials
                .iter()
                .filter(|t| t.0 == m)
                .filter_map(|(_, _, n, b)| Some((n.as_ref().ok()?.chi, b.as_ref().ok()?.chi)))
                .collect();
            let (mean_noma, ci95_noma) = mean_ci95(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let (mean_baseline, ci95_baseline) = mean_ci95(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            SweepRow { m, paired: pairs.len(), mean_noma, ci95_noma, mean_baseline, ci95_baseline }
        })
        .collect();
    SweepTable { rows, trials }
}

/// Per-seed NOMA vs orthogonal comparison at the configured M.
pub fn baseline_csv(config: &SystemConfig, seeds: &[u64], workers: usize) -> Result<Csv> {
    let results = map_seeds(seeds, workers, |s| Ok(run_paired(config, s)))?;
    let cols = ["seed", "status", "chi_noma", "chi_baseline", "qos_noma", "qos_baseline", "refit_events"];
    let mut csv = Csv::new(config, "baseline", &cols).meta("seeds", seed_list(seeds));
    for (s, r) in results {
        let r = r.and_then(|x| x);
        let row = match &r {
            Ok((n, b)) => vec![
                s.to_string(),
                "ok".into(),
                fmt_f(n.chi),
                fmt_f(b.chi),
                n.qos_ok.to_string(),
                b.qos_ok.to_string(),
                b.refit_events.to_string(),
            ],
            Err(_) => vec![s.to_string(), failure(&r), "nan".into(), "nan".into(), "".into(), "".into(), "".into()],
        };
        csv.push(row);
    }
    Ok(csv)
}

/// Illumination map of one NOMA run on `resolution × resolution` points of
/// the configured window.
pub fn heatmap(config: &SystemConfig, seed: u64, resolution: usize) -> Result<(Vec<f64>, Vec<f64>, RMat)> {
    if resolution < 2 {
        return Err(Error::Domain("heatmap resolution must be at least 2".into()));
    }
    let axis = |[lo, hi]: [f64; 2]| -> Vec<f64> {
        (0..resolution).map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64).collect()
    };
    let (xs, ys) = (axis(config.heatmap_x), axis(config.heatmap_y));
    let (_, channels) = build_scenario(config, seed)?;
    let out = algorithm3(&channels, config, seed)?;
    let state: BeamState = out.state;
    let map = illumination_heatmap(&state, &channels, config, &xs, &ys)?;
    Ok((xs, ys, map))
}

pub fn heatmap_csv(config: &SystemConfig, seed: u64, xs: &[f64], ys: &[f64], map: &RMat) -> Csv {
    let mut cols = vec!["y_m".to_string()];
    cols.extend(xs.iter().map(|x| format!("{x:.3}")));
    let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(config, "heatmap", &refs).meta("seed", seed).meta("columns", "x_m");
    for (i, y) in ys.iter().enumerate() {
        let mut row = vec![format!("{y:.3}")];
        row.extend(map.row(i).iter().map(|v| fmt_f(*v)));
        csv.push(row);
    }
    csv
}
