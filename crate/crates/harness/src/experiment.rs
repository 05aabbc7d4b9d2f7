//! Experiment plans: cells of (mechanism, setting, trader counts,
//! repetition), run in parallel and aggregated into CSV tables.
//!
//! Cells of one repetition share their instance and initial networks across
//! mechanisms and settings, so settings are compared on paired draws. Each
//! repetition draws a fresh instance and fresh networks.

use crate::config::{PlanConfig, Setting};
use crate::instance::{generate_instance, InstanceSpec};
use crate::seeds::cell_seed;
use critical_market::clearing::Mechanism;
use critical_market::learning::{nashconv, train_policies, EpisodeMetrics, PolicySet, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub mechanism: Mechanism,
    pub setting: Setting,
    pub buyers: usize,
    pub sellers: usize,
    pub repetition: usize,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.mechanism.name(), self.setting, self.draw_key())
    }

    /// Shared by all cells of one repetition at one size.
    fn draw_key(&self) -> String {
        format!("{}x{}/r{}", self.buyers, self.sellers, self.repetition)
    }

    fn group(&self) -> Group {
        (self.mechanism.name(), self.setting.to_string(), self.buyers, self.sellers)
    }
}

type Group = (&'static str, String, usize, usize);

pub fn plan_cells(plan: &PlanConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &(buyers, sellers) in &plan.traders {
        for &mechanism in &plan.mechanisms {
            for &setting in &plan.settings {
                for repetition in 0..plan.repetitions {
                    cells.push(Cell { mechanism, setting, buyers, sellers, repetition });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellOptions {
    pub nashconv: bool,
    pub initial_nashconv: bool,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub curve: Vec<EpisodeMetrics>,
    /// Averages over the last tenth of the episodes.
    pub poa: f64,
    pub frustration: Vec<f64>,
    pub mean_ask: f64,
    pub mean_right_ask: Option<f64>,
    pub cleared_volume: f64,
    pub nashconv: Option<f64>,
    pub initial_nashconv: Option<f64>,
    /// Wall-clock of the whole cell, NashConv included.
    pub seconds: f64,
    pub train_seconds: f64,
}

/// Episodes averaged for the final metrics.
pub fn final_window(curve: &[EpisodeMetrics]) -> &[EpisodeMetrics] {
    let n = curve.len();
    &curve[n - (n / 10).max(1).min(n)..]
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in v {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn run_cell(
    cell: &Cell,
    spec: &InstanceSpec,
    train: &TrainConfig,
    master_seed: u64,
    options: CellOptions,
) -> Result<CellResult, String> {
    let started = Instant::now();
    let draw = cell.draw_key();
    let spec = spec.clone().with_traders(cell.buyers, cell.sellers);
    let mut instance_rng = ChaCha8Rng::seed_from_u64(cell_seed(master_seed, &format!("instance/{draw}")));
    let instance = generate_instance(
        &spec,
        cell.mechanism,
        cell.setting.fairness,
        cell.setting.repeats,
        &mut instance_rng,
    )?;
    let crisis = &instance.config;
    train.validate().map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(master_seed, &format!("learner/{draw}")));
    let eval_seed = cell_seed(master_seed, &format!("nashconv/{draw}"));
    let mut policies = PolicySet::new(crisis, train, &mut rng);
    let initial_nashconv = if options.initial_nashconv {
        Some(nashconv(&policies, crisis, train, eval_seed).map_err(|e| e.to_string())?.total)
    } else {
        None
    };
    let training = Instant::now();
    let curve = train_policies(&mut policies, crisis, train, &mut rng).map_err(|e| e.to_string())?;
    let train_seconds = training.elapsed().as_secs_f64();
    let nashconv = if options.nashconv {
        Some(nashconv(&policies, crisis, train, eval_seed).map_err(|e| e.to_string())?.total)
    } else {
        None
    };

    let window = final_window(&curve);
    if window.is_empty() {
        return Err("no training episodes".into());
    }
    let frustration = (0..cell.buyers)
        .map(|b| mean(window.iter().map(|m| m.frustration[b])).unwrap_or(0.0))
        .collect();
    Ok(CellResult {
        cell: *cell,
        poa: mean(window.iter().map(|m| m.poa)).unwrap_or(0.0),
        frustration,
        mean_ask: mean(window.iter().map(|m| m.mean_ask)).unwrap_or(0.0),
        mean_right_ask: mean(window.iter().filter_map(|m| m.mean_right_ask)),
        cleared_volume: mean(window.iter().map(|m| m.cleared_volume)).unwrap_or(0.0),
        nashconv,
        initial_nashconv,
        seconds: started.elapsed().as_secs_f64(),
        train_seconds,
        curve,
    })
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell on a pool of `workers` threads. Results come back in
/// plan order; a failing cell is recorded and the rest continue.
pub fn run_sweep(
    cells: &[Cell],
    spec: &InstanceSpec,
    train: &TrainConfig,
    master_seed: u64,
    options: CellOptions,
    workers: usize,
) -> Result<SweepOutput, String> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let outcomes: Vec<Result<CellResult, String>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, spec, train, master_seed, options)).collect());
    let mut out = SweepOutput::default();
    for (cell, r) in cells.iter().zip(outcomes) {
        match r {
            Ok(r) => out.results.push(r),
            Err(error) => out.failures.push(CellFailure { cell: *cell, error }),
        }
    }
    Ok(out)
}

/// Mean and standard error of the mean; the error is undefined below two
/// samples.
pub fn mean_se(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, None);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, Some((var / n).sqrt()))
}

fn groups(results: &[CellResult]) -> Vec<(Group, Vec<&CellResult>)> {
    // plan order of first appearance keeps output stable
    let mut order: Vec<Group> = Vec::new();
    let mut map: BTreeMap<usize, Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        let g = r.cell.group();
        let i = order.iter().position(|x| *x == g).unwrap_or_else(|| {
            order.push(g.clone());
            order.len() - 1
        });
        map.entry(i).or_default().push(r);
    }
    map.into_iter().map(|(i, v)| (order[i].clone(), v)).collect()
}

#[derive(Serialize)]
struct PoaRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    episode: usize,
    n: usize,
    poa_mean: f64,
    poa_se: Option<f64>,
}

#[derive(Serialize)]
struct FrustrationRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    buyer: usize,
    n: usize,
    frustration_mean: f64,
    frustration_se: Option<f64>,
}

#[derive(Serialize)]
struct NashConvRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    profile: &'a str,
    n: usize,
    nashconv_mean: f64,
    nashconv_se: Option<f64>,
}

#[derive(Serialize)]
struct PriceRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    n: usize,
    good_ask_mean: f64,
    good_ask_se: Option<f64>,
    right_ask_mean: Option<f64>,
    right_ask_se: Option<f64>,
    cleared_volume_mean: f64,
    cleared_volume_se: Option<f64>,
}

#[derive(Serialize)]
struct RunRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    repetition: usize,
    episodes: usize,
    poa: f64,
    good_ask: f64,
    right_ask: Option<f64>,
    cleared_volume: f64,
    nashconv: Option<f64>,
    initial_nashconv: Option<f64>,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    mechanism: &'a str,
    setting: &'a str,
    buyers: usize,
    sellers: usize,
    n: usize,
    seconds_mean: f64,
    seconds_se: Option<f64>,
}

#[derive(Serialize)]
struct FailureRow<'a> {
    key: &'a str,
    error: &'a str,
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), String> {
    let err = |e: csv::Error| format!("{}: {e}", path.display());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

pub const POA_HEADER: &[&str] = &["mechanism", "setting", "buyers", "sellers", "episode", "n", "poa_mean", "poa_se"];
pub const FRUSTRATION_HEADER: &[&str] =
    &["mechanism", "setting", "buyers", "sellers", "buyer", "n", "frustration_mean", "frustration_se"];
pub const NASHCONV_HEADER: &[&str] =
    &["mechanism", "setting", "buyers", "sellers", "profile", "n", "nashconv_mean", "nashconv_se"];
pub const PRICES_HEADER: &[&str] = &[
    "mechanism",
    "setting",
    "buyers",
    "sellers",
    "n",
    "good_ask_mean",
    "good_ask_se",
    "right_ask_mean",
    "right_ask_se",
    "cleared_volume_mean",
    "cleared_volume_se",
];
pub const RUNS_HEADER: &[&str] = &[
    "mechanism",
    "setting",
    "buyers",
    "sellers",
    "repetition",
    "episodes",
    "poa",
    "good_ask",
    "right_ask",
    "cleared_volume",
    "nashconv",
    "initial_nashconv",
];
pub const TIMING_HEADER: &[&str] = &["mechanism", "setting", "buyers", "sellers", "n", "seconds_mean", "seconds_se"];
pub const FAILURES_HEADER: &[&str] = &["key", "error"];

/// Writes poa.csv (per-episode PoA), frustration.csv, nashconv.csv,
/// prices.csv, runs.csv (one row per cell) and failures.csv into `dir`.
/// Wall-clock timings go to timing.csv only when `timing` is set, since
/// they differ between otherwise identical runs.
pub fn write_outputs(dir: &Path, out: &SweepOutput, timing: bool) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let grouped = groups(&out.results);

    let mut poa = Vec::new();
    let mut frustration = Vec::new();
    let mut nash = Vec::new();
    let mut prices = Vec::new();
    let mut timings = Vec::new();
    for ((mechanism, setting, buyers, sellers), rs) in &grouped {
        let (mechanism, setting, buyers, sellers) = (*mechanism, setting.as_str(), *buyers, *sellers);
        let episodes = rs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
        for episode in 0..episodes {
            let v: Vec<f64> = rs.iter().map(|r| r.curve[episode].poa).collect();
            let (poa_mean, poa_se) = mean_se(&v);
            poa.push(PoaRow { mechanism, setting, buyers, sellers, episode, n: v.len(), poa_mean, poa_se });
        }
        for buyer in 0..buyers {
            let v: Vec<f64> = rs.iter().map(|r| r.frustration[buyer]).collect();
            let (frustration_mean, frustration_se) = mean_se(&v);
            frustration.push(FrustrationRow {
                mechanism,
                setting,
                buyers,
                sellers,
                buyer,
                n: v.len(),
                frustration_mean,
                frustration_se,
            });
        }
        for (profile, pick) in [
            ("initial", (|r: &CellResult| r.initial_nashconv) as fn(&CellResult) -> Option<f64>),
            ("trained", |r: &CellResult| r.nashconv),
        ] {
            let v: Vec<f64> = rs.iter().filter_map(|r| pick(r)).collect();
            if !v.is_empty() {
                let (nashconv_mean, nashconv_se) = mean_se(&v);
                nash.push(NashConvRow {
                    mechanism,
                    setting,
                    buyers,
                    sellers,
                    profile,
                    n: v.len(),
                    nashconv_mean,
                    nashconv_se,
                });
            }
        }
        let asks: Vec<f64> = rs.iter().map(|r| r.mean_ask).collect();
        let right_asks: Vec<f64> = rs.iter().filter_map(|r| r.mean_right_ask).collect();
        let volumes: Vec<f64> = rs.iter().map(|r| r.cleared_volume).collect();
        let (good_ask_mean, good_ask_se) = mean_se(&asks);
        let (right_ask_mean, right_ask_se) =
            if right_asks.is_empty() { (None, None) } else { let (m, s) = mean_se(&right_asks); (Some(m), s) };
        let (cleared_volume_mean, cleared_volume_se) = mean_se(&volumes);
        prices.push(PriceRow {
            mechanism,
            setting,
            buyers,
            sellers,
            n: rs.len(),
            good_ask_mean,
            good_ask_se,
            right_ask_mean,
            right_ask_se,
            cleared_volume_mean,
            cleared_volume_se,
        });
        let secs: Vec<f64> = rs.iter().map(|r| r.seconds).collect();
        let (seconds_mean, seconds_se) = mean_se(&secs);
        timings.push(TimingRow { mechanism, setting, buyers, sellers, n: rs.len(), seconds_mean, seconds_se });
    }

    let settings: Vec<String> = out.results.iter().map(|r| r.cell.setting.to_string()).collect();
    let runs = out.results.iter().zip(&settings).map(|(r, setting)| RunRow {
        mechanism: r.cell.mechanism.name(),
        setting,
        buyers: r.cell.buyers,
        sellers: r.cell.sellers,
        repetition: r.cell.repetition,
        episodes: r.curve.len(),
        poa: r.poa,
        good_ask: r.mean_ask,
        right_ask: r.mean_right_ask,
        cleared_volume: r.cleared_volume,
        nashconv: r.nashconv,
        initial_nashconv: r.initial_nashconv,
    });
    let keys: Vec<String> = out.failures.iter().map(|f| f.cell.key()).collect();
    let failures = out.failures.iter().zip(&keys).map(|(f, key)| FailureRow { key, error: &f.error });

    write_csv(&dir.join("poa.csv"), POA_HEADER, poa)?;
    write_csv(&dir.join("frustration.csv"), FRUSTRATION_HEADER, frustration)?;
    write_csv(&dir.join("nashconv.csv"), NASHCONV_HEADER, nash)?;
    write_csv(&dir.join("prices.csv"), PRICES_HEADER, prices)?;
    write_csv(&dir.join("runs.csv"), RUNS_HEADER, runs)?;
    write_csv(&dir.join("failures.csv"), FAILURES_HEADER, failures)?;
    if timing {
        write_csv(&dir.join("timing.csv"), TIMING_HEADER, timings)?;
    }
    Ok(())
}
