use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use costtao::dataset::{self, Dataset, TiePolicy};
use costtao::export;
use costtao::metrics::{self, Constant, MeanStd, MetricsRow, HIGH_COST_THRESHOLD_BPS};
use costtao::simulator::{self, ScenarioConfig, Selector};
use costtao::stability;
use costtao::tao::{self, InitPolicy, TaoConfig};
use costtao::{sha256_hex, ObliqueTree};

#[derive(Parser)]
#[command(name = "costtao", version, about = "Cost-sensitive oblique trees for dual-radio selection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Standardize, split, sweep lambda, train and save a model.
    Train(TrainArgs),
    /// Score a model on a dataset, optionally with k-fold retraining.
    Eval(EvalArgs),
    /// Generate a trace from a scenario and replay the selectors on it.
    Simulate(SimulateArgs),
    /// Replay selectors at several packet generation intervals.
    Sweep(SweepArgs),
    /// Retrain on nested subsets and compare tree structures.
    Stability(StabilityArgs),
    /// Emit the IF/ELSE program and the node report of a model.
    Export(ExportArgs),
}

#[derive(Args, Clone, Serialize)]
struct DataArgs {
    /// Labeled dataset CSV (hn,rssi,prr,rnp,label,cost).
    #[arg(long, conflicts_with = "traces", required_unless_present = "traces")]
    data: Option<PathBuf>,
    /// Raw trace CSV; labeled by the faster radio, costed by the throughput gap.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Init {
    Random,
    Cart,
    BestOfBoth,
}

impl From<Init> for InitPolicy {
    fn from(i: Init) -> Self {
        match i {
            Init::Random => InitPolicy::Random,
            Init::Cart => InitPolicy::Cart,
            Init::BestOfBoth => InitPolicy::BestOfBoth,
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct TreeArgs {
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Fixed L1 strength; skips the lambda sweep.
    #[arg(long)]
    lambda: Option<f64>,
    /// Lambda grid for the validation sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "lambda")]
    sweep_lambdas: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "best-of-both")]
    init: Init,
    #[arg(long, default_value_t = 20)]
    max_passes: usize,
    /// Optimize nodes of a level one after another.
    #[arg(long)]
    sequential: bool,
}

impl TreeArgs {
    fn config(&self, seed: u64, lambda: f64) -> TaoConfig {
        TaoConfig {
            depth: self.depth,
            lambda,
            max_passes: self.max_passes,
            init_policy: self.init.into(),
            seed,
            parallel: !self.sequential,
            ..TaoConfig::default()
        }
    }

    fn grid(&self) -> Vec<f64> {
        match (&self.lambda, &self.sweep_lambdas) {
            (Some(l), _) => vec![*l],
            (None, Some(g)) => g.clone(),
            (None, None) => tao::default_lambda_grid(),
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    split: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also cross-validate: retrain a tree like the model on k stratified folds.
    #[arg(long)]
    kfold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Scenario JSON; the bundled default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Model to replay alongside the baselines.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Hop threshold of the distance baseline (Zigbee up to this many hops).
    #[arg(long, default_value_t = 3)]
    threshold_hops: u32,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Packet generation intervals, seconds.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 3.0, 2.0, 1.5, 1.4, 1.3])]
    intervals: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    threshold_hops: u32,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct StabilityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75, 1.0])]
    fractions: Vec<f64>,
    /// Share of the data held out for test error.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Records inputs and outputs of one invocation and writes them next to the outputs.
struct Run {
    subcommand: &'static str,
    out_dir: PathBuf,
    started: Instant,
    inputs: Vec<serde_json::Value>,
    outputs: Vec<serde_json::Value>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    fn new(subcommand: &'static str, out_dir: &Path) -> anyhow::Result<Run> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Run {
            subcommand,
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Default::default(),
        })
    }

    fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| costtao::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.inputs
            .push(json!({"path": path.display().to_string(), "sha256": sha256_hex(&bytes)}));
        Ok(bytes)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs
            .push(json!({"path": path.display().to_string(), "sha256": sha256_hex(bytes)}));
        Ok(path)
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    fn finish(self, config: impl Serialize, seed: Option<u64>) -> anyhow::Result<()> {
        let mut m = json!({
            "subcommand": self.subcommand,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seed": seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        if let serde_json::Value::Object(o) = &mut m {
            o.extend(self.extra);
        }
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        write_atomic(&self.out_dir.join(format!("manifest_{}.json", self.subcommand)), text.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_data(run: &mut Run, args: &DataArgs) -> anyhow::Result<Dataset> {
    match (&args.data, &args.traces) {
        (Some(p), _) => {
            let bytes = run.read_input(p)?;
            dataset::read_dataset(bytes.as_slice()).with_context(|| format!("reading {}", p.display()))
        }
        (None, Some(p)) => {
            let bytes = run.read_input(p)?;
            let t = dataset::read_traces(bytes.as_slice()).with_context(|| format!("reading {}", p.display()))?;
            Ok(dataset::label_traces(&t, TiePolicy::Drop)?)
        }
        (None, None) => bail!(costtao::Error::Config("either --data or --traces is required".into())),
    }
}

fn load_model(run: &mut Run, path: &Path) -> anyhow::Result<ObliqueTree> {
    let bytes = run.read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| costtao::Error::Format("model file is not UTF-8".into()))?;
    ObliqueTree::from_json(&text).with_context(|| format!("reading {}", path.display()))
}

fn load_scenario(run: &mut Run, path: &Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let cfg = match path {
        Some(p) => {
            let bytes = run.read_input(p)?;
            let text = String::from_utf8(bytes).map_err(|_| costtao::Error::Format("scenario is not UTF-8".into()))?;
            ScenarioConfig::from_json(&text).with_context(|| format!("reading {}", p.display()))?
        }
        None => ScenarioConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> costtao::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    f(&mut out)?;
    Ok(out)
}

fn metrics_row(model: &str, location: &str, split: &str, cwa: f64, tree: Option<&ObliqueTree>) -> MetricsRow {
    MetricsRow {
        model: model.into(),
        location: location.into(),
        split: split.into(),
        cwa: MeanStd { mean: cwa, std: 0.0 },
        depth_mean: tree.map(|t| t.depth() as f64),
        leaves_mean: tree.map(|t| t.num_leaves() as f64),
    }
}

fn location(args: &DataArgs) -> String {
    args.data
        .as_ref()
        .or(args.traces.as_ref())
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut run = Run::new("train", &a.out_dir)?;
    let ds = load_data(&mut run, &a.data)?;
    let [f0, f1, f2] =
        <[f64; 3]>::try_from(a.split.as_slice()).map_err(|_| costtao::Error::Config("--split takes three fractions".into()))?;
    let [train, val, test] = ds.split([f0, f1, f2], a.seed)?;
    let train = train.standardize()?;
    let scaler = train.scaler().expect("standardized").clone();
    let val = val.apply_scaler(scaler.clone())?;
    let test = test.apply_scaler(scaler)?;

    let grid = a.tree.grid();
    let cfg = a.tree.config(a.seed, grid[0]);
    let sweep = tao::sweep_lambda(&train, &val, &cfg, &grid)?;
    let out = &sweep.outcome;
    let lambda = sweep.table[sweep.best].lambda;
    println!("lambda {lambda} (init {:?})", out.init);
    for (p, h) in out.history.iter().enumerate() {
        println!("pass {p:2}  objective {h}");
    }
    let tree = &out.tree;
    let (c_train, c_val, c_test) = (metrics::cwa(tree, &train)?, metrics::cwa(tree, &val)?, metrics::cwa(tree, &test)?);
    let baseline = Constant::count_majority(&train);
    let c_base = metrics::cwa(&baseline, &test)?;
    println!("CWA train {c_train:.4}  val {c_val:.4}  test {c_test:.4}  (majority baseline test {c_base:.4})");
    println!("leaves {}  depth {}  converged {}", tree.num_leaves(), tree.depth(), out.converged);

    let loc = location(&a.data);
    let rows = vec![
        metrics_row("tao", &loc, "train", c_train, Some(tree)),
        metrics_row("tao", &loc, "val", c_val, Some(tree)),
        metrics_row("tao", &loc, "test", c_test, Some(tree)),
        metrics_row("majority", &loc, "test", c_base, None),
    ];
    run.write("model.json", tree.to_json().as_bytes())?;
    run.write("metrics.csv", &csv_bytes(|w| metrics::write_metrics_csv(&rows, w))?)?;
    let mut sweep_csv = String::from("lambda,train_cwa,val_cwa,leaves,nonzero_weights,init\n");
    for r in &sweep.table {
        sweep_csv.push_str(&format!(
            "{},{},{},{},{},{:?}\n",
            r.lambda, r.train_cwa, r.val_cwa, r.leaves, r.nonzero_weights, r.init
        ));
    }
    run.write("lambda_sweep.csv", sweep_csv.as_bytes())?;
    run.note("history", &out.history);
    run.note("converged", out.converged);
    run.note("init_choice", out.init);
    run.note("lambda", lambda);
    run.note("lambda_sweep", &sweep.table);
    run.note("tao_config", TaoConfig { lambda, ..cfg });
    run.note(
        "cwa",
        json!({"train": c_train, "val": c_val, "test": c_test, "majority_test": c_base}),
    );
    let seed = a.seed;
    run.finish(&a, Some(seed))
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut run = Run::new("eval", &a.out_dir)?;
    let tree = load_model(&mut run, &a.model)?;
    let ds = load_data(&mut run, &a.data)?;
    let loc = location(&a.data);
    let cwa = metrics::cwa(&tree, &ds)?;
    let b = metrics::error_breakdown(&tree, &ds, HIGH_COST_THRESHOLD_BPS)?;
    println!("CWA {cwa:.4}");
    println!(
        "errors: {} high-cost ({:.1}% of count, {:.1}% of loss), {} low-cost; total loss {}",
        b.n_high,
        100.0 * b.high_count_share(),
        100.0 * b.high_loss_share(),
        b.n_low,
        b.total_loss()
    );
    let rows = vec![metrics_row("tao", &loc, "eval", cwa, Some(&tree))];
    run.write("metrics.csv", &csv_bytes(|w| metrics::write_metrics_csv(&rows, w))?)?;
    let bd = format!(
        "threshold_bps,n_high,n_low,loss_high,loss_low,total_loss,high_count_share,high_loss_share\n{},{},{},{},{},{},{},{}\n",
        b.threshold,
        b.n_high,
        b.n_low,
        b.loss_high,
        b.loss_low,
        b.total_loss(),
        b.high_count_share(),
        b.high_loss_share()
    );
    run.write("breakdown.csv", bd.as_bytes())?;
    if let Some(k) = a.kfold {
        let cfg = TaoConfig {
            depth: tree.depth().max(1),
            lambda: tree.lambda(),
            seed: a.seed,
            ..TaoConfig::default()
        };
        let report = metrics::kfold_cwa(&ds, k, a.seed, true, |fold| {
            let fold = fold.standardize()?;
            Ok(tao::train(&fold, &cfg)?.tree)
        })?;
        for f in &report.folds {
            println!("fold {}: test CWA {:.4}", f.fold, f.test_cwa);
        }
        println!("{k}-fold test CWA {:.4} +- {:.4}", report.test.mean, report.test.std);
        let rows = report.to_rows("tao", &loc);
        run.write("kfold.csv", &csv_bytes(|w| metrics::write_metrics_csv(&rows, w))?)?;
        run.note("kfold", &report);
    }
    let seed = a.seed;
    run.finish(&a, Some(seed))
}

fn selectors(tree: Option<ObliqueTree>, threshold_hops: u32) -> Vec<Selector> {
    let mut s = vec![
        Selector::AlwaysZigbee,
        Selector::AlwaysLora,
        Selector::Oracle,
        Selector::Threshold(threshold_hops),
    ];
    if let Some(t) = tree {
        s.push(Selector::Tree(Box::new(t)));
    }
    s
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut run = Run::new("simulate", &a.out_dir)?;
    let cfg = load_scenario(&mut run, &a.scenario, a.seed)?;
    let tree = a.model.as_ref().map(|p| load_model(&mut run, p)).transpose()?;
    let traces = simulator::generate(&cfg)?;
    run.write("trace.csv", &csv_bytes(|w| dataset::write_traces(&traces, w))?)?;
    let ds = dataset::label_traces(&traces, TiePolicy::Drop)?;
    run.write("dataset.csv", &csv_bytes(|w| ds.write_csv(w))?)?;
    let results = selectors(tree, a.threshold_hops)
        .iter()
        .map(|s| simulator::replay(&traces, s))
        .collect::<costtao::Result<Vec<_>>>()?;
    let mut summary = String::from("selector,mean_bps,performance_ratio,oracle_gap_bps,gain_vs_best_single_pct,gain_vs_worst_single_pct\n");
    for r in &results {
        println!(
            "{:<16} mean {:8.1} bps  ratio {:.4}  gain vs best single {:+.2}%  vs worst single {:+.2}%",
            r.selector, r.mean_bps, r.performance_ratio, r.gain_vs_best_single_pct, r.gain_vs_worst_single_pct
        );
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.selector, r.mean_bps, r.performance_ratio, r.oracle_gap_bps, r.gain_vs_best_single_pct, r.gain_vs_worst_single_pct
        ));
    }
    run.write("replay.csv", summary.as_bytes())?;
    run.write("cdf.csv", &csv_bytes(|w| simulator::write_cdf_csv(&results, w))?)?;
    let seed = cfg.seed;
    run.note("scenario", &cfg);
    run.finish(&a, Some(seed))
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let mut run = Run::new("sweep", &a.out_dir)?;
    let cfg = load_scenario(&mut run, &a.scenario, a.seed)?;
    let tree = a.model.as_ref().map(|p| load_model(&mut run, p)).transpose()?;
    let rows = simulator::interval_sweep(&cfg, &a.intervals, &selectors(tree, a.threshold_hops), true)?;
    for r in &rows {
        println!(
            "{:>6} s  {:<16} ratio {:.4}  latency {:.1} ms",
            r.interval_s, r.selector, r.performance_ratio, r.mean_latency_ms
        );
    }
    run.write("sweep.csv", &csv_bytes(|w| simulator::write_sweep_csv(&rows, w))?)?;
    let seed = cfg.seed;
    run.note("scenario", &cfg);
    run.finish(&a, Some(seed))
}

fn cmd_stability(a: StabilityArgs) -> anyhow::Result<()> {
    let mut run = Run::new("stability", &a.out_dir)?;
    let ds = load_data(&mut run, &a.data)?;
    let [train, test] = ds.holdout(a.test_fraction, a.seed)?;
    let train = train.standardize()?;
    let test = test.apply_scaler(train.scaler().expect("standardized").clone())?;
    let lambda = a.tree.grid()[0];
    let cfg = a.tree.config(a.seed, lambda);
    let report = stability::stability_run(&train, &test, &a.fractions, &cfg, a.seed)?;
    for s in &report.stages {
        println!(
            "{:>5.0}%  n {:5}  test error {:.2}%  {}",
            s.fraction * 100.0,
            s.n_train,
            s.test_error_pct,
            s.signature
        );
    }
    println!("skeleton preserved: {}", report.signature_preserved());
    println!("test error nonincreasing: {}", report.error_nonincreasing());
    run.write("stability.csv", &csv_bytes(|w| stability::write_stability_csv(&report, w))?)?;
    run.write("similarity.csv", &csv_bytes(|w| stability::write_similarity_csv(&report, w))?)?;
    run.write("rules.txt", stability::rules_table(&report).as_bytes())?;
    run.note("signature_preserved", report.signature_preserved());
    run.note("error_nonincreasing", report.error_nonincreasing());
    let seed = a.seed;
    run.finish(&a, Some(seed))
}

fn cmd_export(a: ExportArgs) -> anyhow::Result<()> {
    let mut run = Run::new("export", &a.out_dir)?;
    let tree = load_model(&mut run, &a.model)?;
    let program = export::codegen(&tree);
    print!("{program}");
    run.write("program.txt", program.as_bytes())?;
    let rows = export::report(&tree);
    run.write("report.csv", &csv_bytes(|w| export::write_report_csv(&rows, w))?)?;
    run.finish(&a, None)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<costtao::Error>()) {
        Some(costtao::Error::Numeric(_)) => 4,
        Some(costtao::Error::Config(_)) => 2,
        Some(_) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Stability(a) => cmd_stability(a),
        Cmd::Export(a) => cmd_export(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
