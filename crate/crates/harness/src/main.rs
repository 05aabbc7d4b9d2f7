use clap::{Args, Parser, Subcommand};
use critical_market::clearing::{build_average_lp, build_flow_network, max_flow, Mechanism};
use critical_market::crisis::{
    run_crisis, trace_csv_rows, CrisisConfig, CrisisTrace, FairnessMode, ScriptedStrategy, Strategy,
    TRACE_CSV_HEADER,
};
use critical_market::learning::{
    curve_csv, load_checkpoint, nashconv, save_checkpoint, train_policies, Acting, PolicySet, PolicyStrategy,
};
use critical_market_harness::config::{FileConfig, Setting};
use critical_market_harness::experiment::{plan_cells, run_sweep, write_outputs, CellOptions};
use critical_market_harness::instance::generate_instance;
use critical_market_harness::oracle::run_suite;
use critical_market_harness::seeds::cell_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Markets for a critical good under crisis: simulation, equilibrium
/// learning and experiment sweeps.
#[derive(Parser)]
#[command(name = "crisis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run crises under a scripted or checkpointed profile.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Play the mean actions of a saved profile instead of the script.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the flow network (DOT) and LP (CSV) of every buyers' stage.
        #[arg(long)]
        dump: bool,
    },
    /// Train one cell and save the learned profile.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also measure the exploitability of the final profile.
        #[arg(long)]
        nashconv: bool,
    },
    /// Run the experiment plan and write aggregated tables.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nashconv: bool,
        /// Also write wall-clock timings (not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Estimate NashConv of a saved profile.
    Nashconv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare max-flow clearing with brute force on tiny markets.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with instance, train, market and plan sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    mechanism: Option<Mechanism>,
    #[arg(long)]
    fairness: Option<FairnessMode>,
    /// Buyers' stages per market.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    buyers: Option<usize>,
    #[arg(long)]
    sellers: Option<usize>,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Failure { kind, message: message.to_string() }
    }
}

type Outcome = Result<(), Failure>;

/// Resolved settings: the file overridden by flags.
struct Setup {
    file: FileConfig,
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<Setup, Failure> {
        let mut file = match &self.config {
            Some(p) => FileConfig::load(p).map_err(|e| Failure::new("config", e))?,
            None => FileConfig::default(),
        };
        if let Some(e) = self.episodes {
            file.train.episodes = e;
            file.plan.episodes = Some(e);
        }
        if let Some(m) = self.mechanism {
            file.market.mechanism = m;
            file.plan.mechanisms = vec![m];
        }
        if let Some(f) = self.fairness {
            file.market.fairness = f;
        }
        if let Some(k) = self.k {
            file.market.repeats = k;
        }
        if self.fairness.is_some() || self.k.is_some() {
            let fairness = self.fairness.unwrap_or(FairnessMode::Rights);
            file.plan.settings = vec![Setting { fairness, repeats: self.k.unwrap_or(1) }];
        }
        if let Some(b) = self.buyers {
            file.instance.num_buyers = b;
        }
        if let Some(s) = self.sellers {
            file.instance.num_sellers = s;
        }
        if self.buyers.is_some() || self.sellers.is_some() {
            file.plan.traders = vec![(file.instance.num_buyers, file.instance.num_sellers)];
        }
        if file.market.repeats == 0 {
            return Err(Failure::new("config", "k must be at least 1"));
        }
        let seed = self.seed.or(file.seed).unwrap_or(0);
        let workers = self.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            return Err(Failure::new("config", "workers must be at least 1"));
        }
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Failure::new("io", format!("{}: {e}", self.out_dir.display())))?;
        Ok(Setup { file, seed, workers, out_dir: self.out_dir.clone() })
    }
}

impl Setup {
    /// The single crisis used by simulate, train and nashconv.
    fn crisis(&self) -> Result<CrisisConfig, Failure> {
        let m = &self.file.market;
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(self.seed, "instance"));
        generate_instance(&self.file.instance, m.mechanism, m.fairness, m.repeats, &mut rng)
            .map(|i| i.config)
            .map_err(|e| Failure::new("config", e))
    }

    fn write(&self, name: &str, text: &str) -> Outcome {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
    }
}

fn learning(e: impl ToString) -> Failure {
    Failure::new("learning", e)
}

fn trace_csv(traces: &[CrisisTrace]) -> String {
    let mut out = format!("{TRACE_CSV_HEADER}\n");
    for (e, t) in traces.iter().enumerate() {
        out.push_str(&trace_csv_rows(e, t));
    }
    out
}

fn dump_stages(setup: &Setup, crisis: &CrisisConfig, episode: usize, trace: &CrisisTrace) -> Outcome {
    let dir = setup.out_dir.join("dump");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::new("io", e))?;
    let rules = crisis.rules();
    for o in &trace.outcomes {
        for (r, round) in o.rounds.iter().enumerate() {
            let stem = format!("e{episode}_m{}_r{r}", o.frustrations.market_index);
            let net = build_flow_network(&round.state, &round.book, &rules);
            let flow = max_flow(&net.network);
            let lp = build_average_lp(&round.state, &round.book, &rules);
            for (name, text) in [
                (format!("{stem}_flow.dot"), net.network.to_dot(Some(&flow.arc_flow))),
                (format!("{stem}_lp.csv"), lp.lp.to_csv()),
            ] {
                std::fs::write(dir.join(&name), text).map_err(|e| Failure::new("io", format!("{name}: {e}")))?;
            }
        }
    }
    Ok(())
}

fn simulate(common: &Common, checkpoint: Option<&Path>, dump: bool) -> Outcome {
    let setup = common.resolve()?;
    let crisis = setup.crisis()?;
    let episodes = common.episodes.unwrap_or(1);
    let policies = match checkpoint {
        Some(p) => {
            let (policies, _) = load_checkpoint(p).map_err(learning)?;
            if !policies.matches(&crisis) {
                return Err(Failure::new("config", "checkpoint does not match the instance size"));
            }
            Some(policies)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(setup.seed, "simulate"));
    let mut traces = Vec::with_capacity(episodes);
    let mut summary = String::from("episode,poa,cleared_volume,mean_ask\n");
    for e in 0..episodes {
        let mut strategy: Box<dyn Strategy + '_> = match &policies {
            Some(p) => Box::new(PolicyStrategy::new(p, Acting::Mean, ChaCha8Rng::seed_from_u64(e as u64))),
            None => Box::new(ScriptedStrategy::default()),
        };
        let trace = run_crisis(&crisis, strategy.as_mut(), &mut rng).map_err(|e| Failure::new("crisis", e))?;
        let asks: Vec<f64> = trace.outcomes.iter().flat_map(|o| o.offers.iter().map(|x| x.price)).collect();
        let volume: f64 = trace.outcomes.iter().map(|o| o.cleared_good_volume).sum();
        let _ = writeln!(summary, "{e},{},{volume},{}", trace.poa, asks.iter().sum::<f64>() / asks.len() as f64);
        if dump {
            dump_stages(&setup, &crisis, e, &trace)?;
        }
        traces.push(trace);
    }
    setup.write("trace.csv", &trace_csv(&traces))?;
    setup.write("summary.csv", &summary)
}

#[derive(Serialize)]
struct GainRow {
    trader: String,
    incumbent: Option<f64>,
    best_response: Option<f64>,
    gain: f64,
}

fn write_nashconv(setup: &Setup, policies: &PolicySet, crisis: &CrisisConfig, train: &critical_market::learning::TrainConfig) -> Result<f64, Failure> {
    let report = nashconv(policies, crisis, train, cell_seed(setup.seed, "nashconv")).map_err(learning)?;
    let path = setup.out_dir.join("nashconv.csv");
    let io = |e: csv::Error| Failure::new("io", format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    for t in &report.traders {
        w.serialize(GainRow {
            trader: t.trader.to_string(),
            incumbent: Some(t.incumbent),
            best_response: Some(t.best_response),
            gain: t.gain,
        })
        .map_err(io)?;
    }
    w.serialize(GainRow { trader: "total".into(), incumbent: None, best_response: None, gain: report.total })
        .map_err(io)?;
    w.flush().map_err(|e| Failure::new("io", e))?;
    Ok(report.total)
}

fn train(common: &Common, with_nashconv: bool) -> Outcome {
    let setup = common.resolve()?;
    let crisis = setup.crisis()?;
    let config = &setup.file.train;
    config.validate().map_err(learning)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(setup.seed, "learner"));
    let mut policies = PolicySet::new(&crisis, config, &mut rng);
    let curve = train_policies(&mut policies, &crisis, config, &mut rng).map_err(learning)?;
    save_checkpoint(&setup.out_dir.join("checkpoint.json"), &policies, config).map_err(learning)?;

    let mut strategy = PolicyStrategy::new(&policies, Acting::Mean, ChaCha8Rng::seed_from_u64(0));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cell_seed(setup.seed, "simulate"));
    let trace = run_crisis(&crisis, &mut strategy, &mut eval_rng).map_err(|e| Failure::new("crisis", e))?;
    setup.write("trace.csv", &trace_csv(&[trace]))?;

    let mut marks = Vec::new();
    if with_nashconv {
        let total = write_nashconv(&setup, &policies, &crisis, config)?;
        marks.push((curve.len().saturating_sub(1), total));
    }
    setup.write("curve.csv", &curve_csv(&curve, &marks))
}

fn nashconv_cmd(common: &Common, checkpoint: &Path) -> Outcome {
    let setup = common.resolve()?;
    let crisis = setup.crisis()?;
    let (policies, mut config) = load_checkpoint(checkpoint).map_err(learning)?;
    if !policies.matches(&crisis) {
        return Err(Failure::new("config", "checkpoint does not match the instance size"));
    }
    if let Some(e) = common.episodes {
        config.nashconv_episodes = e;
    }
    write_nashconv(&setup, &policies, &crisis, &config).map(|_| ())
}

fn sweep(common: &Common, with_nashconv: bool, timing: bool) -> Outcome {
    let setup = common.resolve()?;
    let plan = &setup.file.plan;
    let mut train = setup.file.train.clone();
    if let Some(e) = plan.episodes {
        train.episodes = e;
    }
    let options = CellOptions { nashconv: with_nashconv || plan.nashconv, initial_nashconv: plan.initial_nashconv };
    let cells = plan_cells(plan);
    let out = run_sweep(&cells, &setup.file.instance, &train, setup.seed, options, setup.workers)
        .map_err(|e| Failure::new("sweep", e))?;
    write_outputs(&setup.out_dir, &out, timing).map_err(|e| Failure::new("io", e))?;
    for f in &out.failures {
        eprintln!("{}", serde_json::json!({ "warning": "cell failed", "cell": f.cell.key(), "error": f.error }));
    }
    Ok(())
}

fn oracle(common: &Common, cases: usize) -> Outcome {
    let setup = common.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(setup.seed, "oracle"));
    let results = run_suite(cases, &mut rng).map_err(|e| Failure::new("clearing", e))?;
    let path = setup.out_dir.join("oracle.csv");
    let io = |e: csv::Error| Failure::new("io", format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    for r in &results {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::new("io", e))?;
    let bad: Vec<usize> = results.iter().filter(|r| !r.ok).map(|r| r.case).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::new("oracle", format!("max-flow disagrees with brute force on cases {bad:?}")))
    }
}

fn report(f: &Failure, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": f.kind, "message": f.message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return report(&Failure::new("usage", first), 2);
        }
    };
    let result = match &cli.command {
        Command::Simulate { common, checkpoint, dump } => simulate(common, checkpoint.as_deref(), *dump),
        Command::Train { common, nashconv } => train(common, *nashconv),
        Command::Sweep { common, nashconv, timing } => sweep(common, *nashconv, *timing),
        Command::Nashconv { common, checkpoint } => nashconv_cmd(common, checkpoint),
        Command::Oracle { common, cases } => oracle(common, *cases),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f, 1),
    }
}
