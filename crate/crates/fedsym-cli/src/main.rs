//! Command-line front end: reproducible partition / sweep / train / cka
//! experiment recipes over the fedsym library.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsym::cka::{cka_matrix, CkaMatrix};
use fedsym::dataset::{index_of, load_idx, synth_classification, SampleStore};
use fedsym::flsim::{
    load_model, run_federation, save_model, write_round_log_csv, Strategy, TrainConfig,
};
use fedsym::partition::{
    alpha_sweep, dirichlet_partition, fedsym_partition, heterogeneity_report,
    quantity_label_partition, HeterogeneityReport, PartitionPlan,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DOMAIN: u8 = 2;

#[derive(Parser)]
#[command(name = "fedsym", version, about = "Entropy-balanced federated data partitioning and desk-scale FL benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Partition a dataset and write the plan JSON plus a heterogeneity report CSV.
    Partition(PartitionArgs),
    /// Sweep a heterogeneity index range and write (index, mean_beta) CSV rows.
    Sweep(SweepArgs),
    /// Run a federated training routine over a saved plan.
    Train(TrainArgs),
    /// Cross-compare saved models via linear CKA on a shared test set.
    Cka(CkaArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Partition method: fedsym | dirichlet | quantity
    #[arg(long)]
    method: String,
    /// Target entropy balance (fedsym)
    #[arg(long)]
    beta: Option<f64>,
    /// Solver tolerance (fedsym)
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Dirichlet concentration (dirichlet)
    #[arg(long)]
    alpha: Option<f64>,
    /// Distinct labels per client (quantity)
    #[arg(long)]
    labels_per_client: Option<usize>,
    #[arg(long)]
    clients: usize,
    /// Dataset spec: synthetic:l=10,n=500,d=16,sep=4[,seed=0] or idx:IMAGES:LABELS
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plan JSON output path
    #[arg(long)]
    out: PathBuf,
    /// Report CSV path (default: <out>.report.csv)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep method: fedsym | dirichlet
    #[arg(long)]
    method: String,
    /// Index range as start:stop:step
    #[arg(long)]
    range: String,
    #[arg(long)]
    clients: usize,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Plan JSON produced by the partition command
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Held-out evaluation set (default: the dataset spec with seed+1)
    #[arg(long)]
    test_dataset: Option<String>,
    /// Strategy: fedavg | fedprox | scaffold
    #[arg(long)]
    strategy: String,
    #[arg(long, default_value_t = 0.016)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    local_epochs: usize,
    #[arg(long, default_value_t = 6)]
    rounds: usize,
    /// FedProx proximal coefficient
    #[arg(long, default_value_t = 0.01)]
    mu: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round log CSV output path
    #[arg(long)]
    out_log: PathBuf,
    /// Model binary output path
    #[arg(long)]
    out_model: PathBuf,
}

#[derive(Args)]
struct CkaArgs {
    /// Two or more model files
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Comma-separated heterogeneity labels, one per model (default 0,1,2,...)
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    out: PathBuf,
}

enum AppError {
    Usage(String),
    Domain(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Domain(_) => EXIT_DOMAIN,
        }
    }
    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Domain(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn domain(msg: impl ToString) -> AppError {
    AppError::Domain(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Partition(args) => cmd_partition(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Cka(args) => cmd_cka(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

// ── Dataset specs ────────────────────────────────────────────────────────────

#[derive(Clone)]
enum DatasetSpec {
    Synthetic {
        l: usize,
        n_per_class: usize,
        d: usize,
        sep: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

fn parse_dataset(spec: &str) -> Result<DatasetSpec, AppError> {
    if let Some(body) = spec.strip_prefix("synthetic:") {
        let (mut l, mut n, mut d, mut sep, mut seed) = (None, None, None, None, 0u64);
        for kv in body.split(',') {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("malformed dataset entry '{kv}'")))?;
            fn bad<T: std::str::FromStr>(value: &str, kv: &str) -> Result<T, AppError> {
                value
                    .parse()
                    .map_err(|_| usage(format!("bad value in dataset entry '{kv}'")))
            }
            match key {
                "l" => l = Some(bad(value, kv)?),
                "n" => n = Some(bad(value, kv)?),
                "d" => d = Some(bad(value, kv)?),
                "sep" => sep = Some(bad(value, kv)?),
                "seed" => seed = bad(value, kv)?,
                _ => return Err(usage(format!("unknown dataset key '{key}'"))),
            }
        }
        let missing = |field: &str| usage(format!("synthetic dataset spec needs '{field}='"));
        Ok(DatasetSpec::Synthetic {
            l: l.ok_or_else(|| missing("l"))?,
            n_per_class: n.ok_or_else(|| missing("n"))?,
            d: d.ok_or_else(|| missing("d"))?,
            sep: sep.ok_or_else(|| missing("sep"))?,
            seed,
        })
    } else if let Some(body) = spec.strip_prefix("idx:") {
        let (images, labels) = body
            .split_once(':')
            .ok_or_else(|| usage("idx dataset spec is idx:IMAGES:LABELS"))?;
        Ok(DatasetSpec::Idx {
            images: images.into(),
            labels: labels.into(),
        })
    } else {
        Err(usage(format!(
            "dataset spec '{spec}' must start with synthetic: or idx:"
        )))
    }
}

impl DatasetSpec {
    fn load(&self) -> Result<SampleStore, AppError> {
        match self {
            DatasetSpec::Synthetic {
                l,
                n_per_class,
                d,
                sep,
                seed,
            } => Ok(synth_classification(*l, *n_per_class, *d, *sep, *seed)),
            DatasetSpec::Idx { images, labels } => load_idx(images, labels).map_err(domain),
        }
    }

    /// The default held-out counterpart: same parameters, next seed.
    fn held_out(&self) -> DatasetSpec {
        match self {
            DatasetSpec::Synthetic {
                l,
                n_per_class,
                d,
                sep,
                seed,
            } => DatasetSpec::Synthetic {
                l: *l,
                n_per_class: *n_per_class,
                d: *d,
                sep: *sep,
                seed: seed + 1,
            },
            other => other.clone(),
        }
    }
}

// ── Shared output helpers ────────────────────────────────────────────────────

fn write_file(path: &Path, contents: &[u8]) -> Result<(), AppError> {
    std::fs::write(path, contents)
        .map_err(|e| domain(format!("cannot write {}: {e}", path.display())))
}

/// Every artifact gets a JSON sidecar with the full invocation config.
fn write_sidecar(path: &Path, config: &serde_json::Value) -> Result<(), AppError> {
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".config.json");
    write_file(
        Path::new(&sidecar),
        serde_json::to_string_pretty(config).unwrap().as_bytes(),
    )
}

fn report_csv(report: &HeterogeneityReport) -> String {
    let mut out = String::from("client,beta\n");
    for (i, beta) in report.per_client_beta.iter().enumerate() {
        let _ = writeln!(out, "{i},{beta:.6}");
    }
    let _ = writeln!(out, "min,{:.6}", report.min);
    let _ = writeln!(out, "max,{:.6}", report.max);
    let _ = writeln!(out, "mean,{:.6}", report.mean);
    let _ = writeln!(out, "std,{:.6}", report.std);
    out
}

fn parse_range(range: &str) -> Result<Vec<f64>, AppError> {
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(usage("range must be start:stop:step"));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| usage(format!("bad number '{s}' in range")))
    };
    let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || stop < start {
        return Err(usage("range requires stop >= start and step > 0"));
    }
    let mut values = Vec::new();
    let mut i = 0;
    loop {
        // Snap accumulated values so 0.1 + 3*0.3 prints as 1 rather than 0.9999….
        let v = ((start + step * i as f64) * 1e12).round() / 1e12;
        if v > stop + 1e-9 {
            break;
        }
        values.push(v);
        i += 1;
    }
    Ok(values)
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn cmd_partition(args: PartitionArgs) -> Result<(), AppError> {
    let spec = parse_dataset(&args.dataset)?;
    let store = spec.load()?;
    let index = index_of(&store);

    let plan: PartitionPlan = match args.method.as_str() {
        "fedsym" => {
            let beta = args.beta.ok_or_else(|| usage("fedsym requires --beta"))?;
            fedsym_partition(&index, args.clients, beta, args.eps, args.seed).map_err(domain)?
        }
        "dirichlet" => {
            let alpha = args.alpha.ok_or_else(|| usage("dirichlet requires --alpha"))?;
            dirichlet_partition(&index, args.clients, alpha, args.seed).map_err(domain)?
        }
        "quantity" => {
            let lpc = args
                .labels_per_client
                .ok_or_else(|| usage("quantity requires --labels-per-client"))?;
            quantity_label_partition(&index, args.clients, lpc, args.seed).map_err(domain)?
        }
        other => return Err(usage(format!("unknown method '{other}'"))),
    };

    write_file(&args.out, serde_json::to_string_pretty(&plan).unwrap().as_bytes())?;

    let report = heterogeneity_report(&plan);
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".report.csv");
        PathBuf::from(p)
    });
    write_file(&report_path, report_csv(&report).as_bytes())?;

    write_sidecar(
        &args.out,
        &serde_json::json!({
            "command": "partition",
            "method": args.method,
            "beta": args.beta,
            "eps": args.eps,
            "alpha": args.alpha,
            "labels_per_client": args.labels_per_client,
            "clients": args.clients,
            "dataset": args.dataset,
            "seed": args.seed,
            "out": args.out,
            "report": report_path,
        }),
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<(), AppError> {
    let spec = parse_dataset(&args.dataset)?;
    let store = spec.load()?;
    let index = index_of(&store);
    let values = parse_range(&args.range)?;

    let rows: Vec<(f64, f64)> = match args.method.as_str() {
        "dirichlet" => alpha_sweep(&index, args.clients, &values, args.seed).map_err(domain)?,
        "fedsym" => {
            let mut rows = Vec::with_capacity(values.len());
            for &beta in &values {
                let plan = fedsym_partition(&index, args.clients, beta, 1e-3, args.seed)
                    .map_err(domain)?;
                rows.push((beta, heterogeneity_report(&plan).mean));
            }
            rows
        }
        other => return Err(usage(format!("unknown sweep method '{other}'"))),
    };

    let mut csv = String::from("index,mean_beta\n");
    for (index_value, mean_beta) in &rows {
        let _ = writeln!(csv, "{index_value},{mean_beta}");
    }
    write_file(&args.out, csv.as_bytes())?;
    write_sidecar(
        &args.out,
        &serde_json::json!({
            "command": "sweep",
            "method": args.method,
            "range": args.range,
            "clients": args.clients,
            "dataset": args.dataset,
            "seed": args.seed,
            "out": args.out,
        }),
    )
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let strategy = match args.strategy.as_str() {
        "fedavg" => Strategy::FedAvg,
        "fedprox" => Strategy::FedProx,
        "scaffold" => Strategy::Scaffold,
        other => return Err(usage(format!("unknown strategy '{other}'"))),
    };
    let plan_text = std::fs::read_to_string(&args.plan)
        .map_err(|e| domain(format!("cannot read {}: {e}", args.plan.display())))?;
    let plan: PartitionPlan =
        serde_json::from_str(&plan_text).map_err(|e| domain(format!("bad plan file: {e}")))?;

    let train_spec = parse_dataset(&args.dataset)?;
    let test_spec = match &args.test_dataset {
        Some(s) => parse_dataset(s)?,
        None => train_spec.held_out(),
    };
    let store = train_spec.load()?;
    let testset = test_spec.load()?;

    let cfg = TrainConfig {
        lr: args.lr,
        lr_decay: args.lr_decay,
        momentum: args.momentum,
        batch_size: args.batch_size,
        local_epochs: args.local_epochs,
        rounds: args.rounds,
        prox_mu: args.mu,
        hidden: args.hidden,
        seed: args.seed,
    };
    let (model, log) = run_federation(&plan, &store, &testset, strategy, &cfg).map_err(domain)?;

    let mut csv = Vec::new();
    write_round_log_csv(&log, &mut csv).unwrap();
    write_file(&args.out_log, &csv)?;
    save_model(&model, &args.out_model).map_err(domain)?;

    write_sidecar(
        &args.out_log,
        &serde_json::json!({
            "command": "train",
            "plan": args.plan,
            "dataset": args.dataset,
            "test_dataset": args.test_dataset,
            "strategy": args.strategy,
            "train_config": cfg,
            "out_log": args.out_log,
            "out_model": args.out_model,
        }),
    )
}

fn cmd_cka(args: CkaArgs) -> Result<(), AppError> {
    if args.models.len() < 2 {
        return Err(usage("cka needs at least two --models files"));
    }
    let labels: Vec<f64> = match &args.labels {
        Some(s) => {
            let parsed: Result<Vec<f64>, _> = s.split(',').map(str::parse).collect();
            let parsed = parsed.map_err(|_| usage("bad --labels list"))?;
            if parsed.len() != args.models.len() {
                return Err(usage("--labels count must match --models count"));
            }
            parsed
        }
        None => (0..args.models.len()).map(|i| i as f64).collect(),
    };

    let mut models = Vec::with_capacity(args.models.len());
    let mut shape = None;
    for (path, label) in args.models.iter().zip(&labels) {
        let model = load_model(path).map_err(domain)?;
        if let Some(shape) = shape {
            if model.shape != shape {
                return Err(domain(format!(
                    "model {} shape differs from the first model",
                    path.display()
                )));
            }
        } else {
            shape = Some(model.shape);
        }
        models.push((*label, model));
    }

    let testset = parse_dataset(&args.dataset)?.load()?;
    if testset.dims != shape.unwrap().d {
        return Err(domain("test set dimensionality does not match the models"));
    }
    let matrix: CkaMatrix = cka_matrix(&models, &testset).map_err(domain)?;

    let mut csv = Vec::new();
    matrix.write_csv(&mut csv).unwrap();
    write_file(&args.out, &csv)?;
    write_sidecar(
        &args.out,
        &serde_json::json!({
            "command": "cka",
            "models": args.models,
            "labels": labels,
            "dataset": args.dataset,
            "out": args.out,
        }),
    )
}
