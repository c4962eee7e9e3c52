//! `morphnet` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a check failed,
//! 3 runtime abort (I/O, divergence, malformed data).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use morphnet::checkpoint::Checkpoint;
use morphnet::config::{DataSource, Preset, RunConfig};
use morphnet::data::{gen_max_affine, write_features_csv, SplitName};
use morphnet::equivalence::{run_equivalence_suite, EquivDims};
use morphnet::gradcheck::{self, gradcheck};
use morphnet::heads::{build_head, HeadSpec, Variant};
use morphnet::optim::{evaluate, train_with};
use morphnet::pruning::{build_prune_plan, prune_and_eval};
use morphnet::report::{self, metric_map, RunReport, SweepRow};
use morphnet::Error;

#[derive(Parser)]
#[command(
    name = "morphnet",
    version,
    about = "Hybrid linear-morphological heads: training, pruning and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a head and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run's best checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// One-shot L1 pruning over an (r1, r2) grid.
    PruneSweep(SweepArgs),
    /// Randomized ReLU / maxout rewrite equivalence suite.
    EquivCheck(EquivArgs),
    /// Finite-difference gradient check of a small head.
    Gradcheck(GradArgs),
    /// Write a synthetic max-affine dataset as CSV.
    GenData(GenArgs),
    /// Aggregate run directories and sweep CSVs into tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    preset: Option<Preset>,
    /// JSON run config; applied before --head/--seed/--set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    head: Option<Variant>,
    /// One seed, or a comma-separated list for a multi-seed run.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Dotted-path override, e.g. `train.phases.0.lr=0.01`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Dataset location (CIFAR-10 directory or features CSV).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory written by `train`.
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Run directory written by `train`.
    run: PathBuf,
    #[arg(long, value_delimiter = ',')]
    r1: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    r2: Vec<f64>,
    /// Output CSV (default: <run>/sweep.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Maximum output width, input width and pooling factor.
    #[arg(long, num_args = 3, value_names = ["OUT", "IN", "POOL"])]
    dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the converter (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long)]
    head: Variant,
    #[arg(long, num_args = 3, value_names = ["IN", "HIDDEN", "OUT"], default_values_t = [8, 6, 4])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    k_pieces: usize,
    #[arg(long, default_value_t = 50)]
    tags: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories and/or sweep CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

/// A command failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn check_failed(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Config { .. } => 1,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::PruneSweep(a) => cmd_prune_sweep(a),
        Command::EquivCheck(a) => cmd_equiv_check(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure {
            code: 3,
            message: format!("thread pool: {e}"),
        })
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

/// Run directories are append-only unless `force` is given.
fn claim_dir(dir: &Path, force: bool) -> CmdResult {
    if dir.exists() && fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some() && !force {
        return Err(usage(format!(
            "{} already exists; pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn claim_file(path: &Path, force: bool) -> CmdResult {
    if path.exists() && !force {
        return Err(usage(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(())
}

fn point_data(cfg: &mut RunConfig, data: Option<&Path>) -> CmdResult {
    let Some(path) = data else { return Ok(()) };
    match &mut cfg.data {
        DataSource::Cifar10 { dir, .. } => *dir = path.to_path_buf(),
        DataSource::FeaturesCsv { path: p, .. } => *p = path.to_path_buf(),
        DataSource::Idx { .. } | DataSource::MaxAffine { .. } => {
            return Err(usage("--data applies to cifar10 and features-csv sources only"));
        }
    }
    Ok(())
}

const CHECKPOINT: &str = "checkpoint.json";
const CURVES: &str = "curves.csv";
const CONFIG: &str = "config.json";
const REPORT: &str = "report.json";

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::preset(p, a.head.unwrap_or(Variant::SparseMorph), 0),
        (None, None) => return Err(usage("train needs --preset or --config")),
    };
    if let Some(v) = a.head {
        cfg.head.variant = v;
        if cfg.preset.is_some_and(|p| p != Preset::Cifar10) {
            cfg.head.batchnorm = v != Variant::DenseMorph;
        }
    }
    for kv in &a.set {
        let (path, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects PATH=VALUE, got `{kv}`")))?;
        cfg.set(path, value)?;
    }
    point_data(&mut cfg, a.data.as_deref())?;
    cfg.validate()?;
    let seeds = if a.seed.is_empty() {
        vec![cfg.seed]
    } else {
        a.seed.clone()
    };

    claim_dir(&a.out, a.force)?;
    let ds = cfg.data.load()?;
    let runs: Vec<(u64, PathBuf)> = match seeds.as_slice() {
        [s] => vec![(*s, a.out.clone())],
        many => many.iter().map(|&s| (s, a.out.join(format!("seed-{s}")))).collect(),
    };
    for (_, dir) in &runs {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let results: Vec<CmdResult> = pool(a.jobs)?.install(|| {
        runs.par_iter()
            .map(|(seed, dir)| {
                let cfg = RunConfig {
                    seed: *seed,
                    ..cfg.clone()
                };
                train_one(&cfg, &ds, dir, a.quiet)
            })
            .collect()
    });
    results.into_iter().collect()
}

fn train_one(cfg: &RunConfig, ds: &morphnet::data::Dataset, dir: &Path, quiet: bool) -> CmdResult {
    let spec = cfg.head_spec(ds);
    let model = build_head(&spec)?;
    let label = format!("{} seed {}", spec.variant, cfg.seed);
    let outcome = train_with(model, ds, &cfg.train_config(), |r| {
        if !quiet {
            eprintln!(
                "[{label}] epoch {:>3} {} lr {:e} train {:.5} val {:.5} metric {:.4}",
                r.epoch,
                r.optimizer.as_str(),
                r.lr,
                r.train_loss,
                r.val_loss,
                r.val_roc_auc.or(r.val_accuracy).unwrap_or(f64::NAN)
            );
        }
    })?;
    let test = evaluate(&outcome.best, ds, SplitName::Test)?;
    let report = RunReport {
        variant: spec.variant,
        seed: cfg.seed,
        dataset: ds.name.clone(),
        params: outcome.best.census(),
        best_epoch: outcome.best_epoch,
        metrics: metric_map(&test),
        pruning: None,
        degenerate: false,
        diverged: outcome.diverged.clone(),
        curves: outcome.curves.clone(),
    };
    Checkpoint::new(outcome.best, outcome.best_epoch).save(&dir.join(CHECKPOINT))?;
    report::write_curves_csv(&dir.join(CURVES), &outcome.curves)?;
    let config_path = dir.join(CONFIG);
    fs::write(&config_path, cfg.to_json_pretty()?).map_err(|e| io_err(&config_path, e))?;
    report.save(&dir.join(REPORT))?;
    if !quiet {
        eprintln!("[{label}] best epoch {} test {:?}", outcome.best_epoch, report.metrics);
    }
    match outcome.diverged {
        Some(d) => Err(Failure {
            code: 3,
            message: format!(
                "{label} diverged ({d}); best-so-far checkpoint kept in {}",
                dir.display()
            ),
        }),
        None => Ok(()),
    }
}

fn load_run(run: &Path, data: Option<&Path>) -> Result<(RunConfig, Checkpoint), Failure> {
    let ck_path = run.join(CHECKPOINT);
    if !ck_path.exists() {
        return Err(Failure {
            code: 3,
            message: format!("missing checkpoint {}", ck_path.display()),
        });
    }
    let mut cfg = RunConfig::load(&run.join(CONFIG))?;
    point_data(&mut cfg, data)?;
    Ok((cfg, Checkpoint::load(&ck_path)?))
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let split = match a.split.as_str() {
        "train" => SplitName::Train,
        "val" => SplitName::Val,
        "test" => SplitName::Test,
        other => return Err(usage(format!("unknown split `{other}` (train, val, test)"))),
    };
    let (cfg, ck) = load_run(&a.run, a.data.as_deref())?;
    let ds = cfg.data.load()?;
    let eval = evaluate(&ck.model, &ds, split)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&metric_map(&eval)).map_err(Error::from)?
    );
    Ok(())
}

fn default_grid(preset: Option<Preset>) -> (Vec<f64>, Vec<f64>) {
    match preset {
        Some(Preset::Cifar10) => (vec![0.7, 0.8, 0.9], vec![0.7, 0.8, 0.9, 0.95]),
        _ => (vec![0.8, 0.9, 0.95, 0.98], vec![0.8, 0.9, 0.95, 0.98]),
    }
}

fn cmd_prune_sweep(a: SweepArgs) -> CmdResult {
    let (cfg, ck) = load_run(&a.run, a.data.as_deref())?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("sweep.csv"));
    claim_file(&out, a.force)?;
    let (d1, d2) = default_grid(cfg.preset);
    let r1s = if a.r1.is_empty() { d1 } else { a.r1 };
    let r2s = if a.r2.is_empty() { d2 } else { a.r2 };
    let ds = cfg.data.load()?;
    let pairs: Vec<(f64, f64)> = r2s.iter().flat_map(|&r2| r1s.iter().map(move |&r1| (r1, r2))).collect();
    let spec: &HeadSpec = &ck.model.spec;
    let rows: Vec<Result<SweepRow, Failure>> = pool(a.jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|&(r1, r2)| {
                let plan = build_prune_plan(spec.variant, r1, r2, spec)?;
                let report = prune_and_eval(&ck.model, &plan, &ds)?;
                Ok(SweepRow::from_report(&report)?)
            })
            .collect()
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_, _>>()?;
    report::write_sweep_csv(&out, &rows)?;
    for r in &rows {
        println!(
            "{} r1={} r2={} params={} metric={:.4}{}",
            r.variant,
            r.r1,
            r.r2,
            r.remaining_params,
            r.roc_auc.or(r.accuracy).unwrap_or(f64::NAN),
            if r.degenerate { " (degenerate)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_equiv_check(a: EquivArgs) -> CmdResult {
    let dims = match a.dims.as_deref() {
        None => EquivDims::default(),
        Some(&[max_out, max_in, max_pool]) => EquivDims {
            max_out,
            max_in,
            max_pool,
        },
        Some(_) => return Err(usage("--dims takes OUT IN POOL")),
    };
    let r = run_equivalence_suite(a.trials, dims, a.seed, a.inject_fault)?;
    println!(
        "equiv-check: {} trials, relu failures {} (max dev {:e}), maxout failures {} (max dev {:e})",
        r.trials, r.relu_failures, r.relu_max_dev, r.maxout_failures, r.maxout_max_dev
    );
    if r.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(check_failed("equivalence suite reported failures"))
    }
}

fn cmd_gradcheck(a: GradArgs) -> CmdResult {
    let [i, h, o] = a.dims[..] else {
        return Err(usage("--dims takes IN HIDDEN OUT"));
    };
    let r = gradcheck(&HeadSpec::new(a.head, i, h, o), a.seed)?;
    if r.resamples > 0 {
        println!("note: {} evaluation points resampled away from ties", r.resamples);
    }
    println!(
        "gradcheck {} {i}->{h}->{o}: {} entries, max relative error {:e}, max abs error {:e}",
        a.head, r.checked, r.max_rel_error, r.max_abs_error
    );
    if r.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(check_failed(format!(
            "relative error {:e} exceeds {:e} at {:?}",
            r.max_rel_error,
            gradcheck::TOLERANCE,
            r.worst
        )))
    }
}

fn cmd_gen_data(a: GenArgs) -> CmdResult {
    claim_file(&a.out, a.force)?;
    let ds = gen_max_affine(a.n, a.d, a.k_pieces, a.tags, a.seed)?;
    write_features_csv(&ds, &a.out)?;
    println!(
        "wrote {} samples × {} features, {} tags to {}",
        a.n,
        a.d,
        a.tags,
        a.out.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let mut groups: BTreeMap<String, Vec<RunReport>> = BTreeMap::new();
    // Canonical paths, so a sweep named explicitly and found in a run dir counts once.
    let mut sweep_files: BTreeSet<PathBuf> = BTreeSet::new();
    let canonical = |p: &Path| fs::canonicalize(p).map_err(|e| io_err(p, e));
    for input in &a.inputs {
        if input.is_dir() {
            let mut found = false;
            let mut dirs = vec![input.clone()];
            while let Some(dir) = dirs.pop() {
                let report_path = dir.join(REPORT);
                if report_path.exists() {
                    let r = RunReport::load(&report_path)?;
                    groups.entry(r.variant.to_string()).or_default().push(r);
                    found = true;
                }
                let sweep_path = dir.join("sweep.csv");
                if sweep_path.exists() {
                    sweep_files.insert(canonical(&sweep_path)?);
                    found = true;
                }
                let mut children: Vec<PathBuf> = fs::read_dir(&dir)
                    .map_err(|e| io_err(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                children.sort();
                dirs.extend(children.into_iter().rev());
            }
            if !found {
                return Err(usage(format!("{} holds no report.json or sweep.csv", input.display())));
            }
        } else if input.extension().is_some_and(|e| e == "csv") {
            sweep_files.insert(canonical(input)?);
        } else {
            return Err(usage(format!(
                "{}: expected a run directory or a sweep CSV",
                input.display()
            )));
        }
    }
    let mut sweeps: Vec<SweepRow> = Vec::new();
    for path in &sweep_files {
        sweeps.extend(report::read_sweep_csv(path)?);
    }
    for runs in groups.values_mut() {
        runs.sort_by_key(|r| r.seed);
    }
    claim_dir(&a.out, a.force)?;
    let write = |name: &str, text: &str| -> CmdResult {
        let p = a.out.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    };
    if !groups.is_empty() {
        let (md, csv) = report::method_table(&groups)?;
        write("summary.md", &md)?;
        write("summary.csv", &csv)?;
        write("convergence.csv", &report::convergence_csv(&groups))?;
        print!("{md}");
    }
    if !sweeps.is_empty() {
        let (md, csv) = report::pruning_table(&sweeps)?;
        write("pruning.md", &md)?;
        write("pruning.csv", &csv)?;
        print!("\n{md}");
    }
    Ok(())
}
