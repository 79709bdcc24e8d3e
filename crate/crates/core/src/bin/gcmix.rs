use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gcmix::data::VariableKind;
use gcmix::estimator::{fit, FitConfig, FitMethod};
use gcmix::imputer::{impute_dataset, CellImputation, FittedModel, ImputeRule};
use gcmix::io;
use gcmix::metrics;
use gcmix::mvn::RqmcConfig;
use gcmix::simulate::simulate;
use gcmix::Error;

#[derive(Parser)]
#[command(name = "gcmix", version, about = "Gaussian copula models for mixed data with missing entries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the copula model to a CSV dataset
    Fit(FitArgs),
    /// Fill missing cells using a fitted model
    Impute(ImputeArgs),
    /// Generate a synthetic dataset from a random model
    Simulate(SimArgs),
    /// Score imputations against ground truth
    Evaluate(EvalArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "svrg")]
    method: String,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    max_samples: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "argmax")]
    rule: String,
    /// Optional per-cell probability sidecar CSV
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_prefix: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    imputed: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// The masked dataset; its missing cells are the scored set
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    sigma_hat: Option<PathBuf>,
    #[arg(long)]
    sigma_true: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Impute(args) => run_impute(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Evaluate(args) => run_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::NotPositiveDefinite { .. } | Error::Diverged(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn set_threads(threads: Option<usize>) -> gcmix::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Schema(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run_fit(args: FitArgs) -> gcmix::Result<()> {
    set_threads(args.threads)?;
    let schema = io::load_schema(&args.schema)?;
    let data = io::load_csv(&args.data, &schema)?;
    data.check_against(&schema)?;

    let mut config = FitConfig::default_with_seed(args.seed);
    config.method = match args.method.as_str() {
        "svrg" => FitMethod::Svrg,
        "adam" => FitMethod::Adam,
        other => return Err(Error::Schema(format!("unknown method `{other}`"))),
    };
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(b) = args.batch {
        config.batch_size = b;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(t) = args.rel_tol {
        config.rqmc.rel_tol = t;
    }
    if let Some(s) = args.max_samples {
        config.rqmc.max_samples = s;
    }
    config.verbose = true;

    let (params, marginals, _, report) = fit(&data, &schema, &config)?;
    eprintln!(
        "done: {} epochs, {:.2}s, {}",
        report.nll_trace.len(),
        report.seconds,
        report.termination
    );
    let model = io::ModelFile {
        version: io::MODEL_FORMAT_VERSION,
        schema,
        marginals,
        theta: params.theta.iter().copied().collect(),
        seed: args.seed,
        fit_config: serde_json::to_value(&config).ok(),
    };
    io::save_model(&args.out, &model)
}

fn run_impute(args: ImputeArgs) -> gcmix::Result<()> {
    set_threads(args.threads)?;
    let rule: ImputeRule = args.rule.parse().map_err(Error::Schema)?;
    let model_file = io::load_model(&args.model)?;
    let (_, params) = model_file.params()?;
    let data = io::load_csv(&args.data, &model_file.schema)?;
    data.check_against(&model_file.schema)?;
    let model = FittedModel::new(model_file.schema, params, model_file.marginals);
    let config = RqmcConfig::imputation(args.seed);
    let (completed, results) = impute_dataset(&data, &model, &config, rule)?;
    io::save_csv(&args.out, &completed, &model.schema)?;

    if let Some(probs_path) = &args.probs {
        let mut wtr = csv::Writer::from_path(probs_path)?;
        wtr.write_record(["row", "column", "category", "probability"])?;
        for res in &results {
            for (col, cell) in &res.cells {
                if let CellImputation::Discrete { probabilities, .. } = cell {
                    for (cat, p) in probabilities.iter().enumerate() {
                        wtr.write_record([
                            res.row.to_string(),
                            model.schema.variables[*col].name.clone(),
                            cat.to_string(),
                            format!("{p}"),
                        ])?;
                    }
                }
            }
        }
        wtr.flush()?;
    }
    let flagged = results.iter().filter(|r| r.fully_missing).count();
    if flagged > 0 {
        eprintln!("note: {flagged} fully missing rows imputed from marginals");
    }
    let unconverged = results.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("warning: integration did not converge on {unconverged} rows");
    }
    Ok(())
}

fn run_simulate(args: SimArgs) -> gcmix::Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = io::parse_sim_config(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = simulate(&config)?;
    let prefix = &args.out_prefix;
    io::save_schema(&PathBuf::from(format!("{prefix}_schema.json")), &out.schema)?;
    io::save_csv(&PathBuf::from(format!("{prefix}_complete.csv")), &out.complete, &out.schema)?;
    io::save_csv(&PathBuf::from(format!("{prefix}_masked.csv")), &out.masked, &out.schema)?;
    io::save_matrix_csv(&PathBuf::from(format!("{prefix}_sigma.csv")), &out.sigma)?;
    Ok(())
}

fn run_evaluate(args: EvalArgs) -> gcmix::Result<()> {
    let schema = io::load_schema(&args.schema)?;
    let imputed = io::load_csv(&args.imputed, &schema)?;
    let truth = io::load_csv(&args.truth, &schema)?;
    let mask = io::load_csv(&args.mask, &schema)?;
    for t in [&imputed, &truth, &mask] {
        if t.n_rows != truth.n_rows || t.n_cols() != schema.len() {
            return Err(Error::Dimension("evaluate inputs differ in shape".into()));
        }
    }

    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(["metric", "variable", "value"])?;
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));

    // per-variable SMAE over the masked cells (multinomial excluded:
    // category codes have no meaningful distance)
    let masked_cells = |col: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut t = vec![];
        let mut x = vec![];
        let mut obs = vec![];
        for r in 0..truth.n_rows {
            match (mask.get(r, col), truth.get(r, col), imputed.get(r, col)) {
                (None, Some(tv), Some(xv)) => {
                    t.push(tv);
                    x.push(xv);
                }
                (Some(_), Some(tv), _) => obs.push(tv),
                _ => {}
            }
        }
        (t, x, obs)
    };
    for (c, var) in schema.variables.iter().enumerate() {
        if matches!(var.kind, VariableKind::Multinomial { .. }) {
            continue;
        }
        let (t, x, obs) = masked_cells(c);
        out.write_record([
            "smae".to_string(),
            var.name.clone(),
            fmt(metrics::smae(&t, &x, &obs)),
        ])?;
    }

    // per-type aggregates
    let mut cont_t = vec![];
    let mut cont_x = vec![];
    let mut disc: std::collections::HashMap<&str, (Vec<u32>, Vec<u32>)> = Default::default();
    for (c, var) in schema.variables.iter().enumerate() {
        let (t, x, _) = masked_cells(c);
        match var.kind {
            VariableKind::Continuous => {
                cont_t.extend(t);
                cont_x.extend(x);
            }
            _ => {
                let key = match var.kind {
                    VariableKind::Binary => "binary",
                    VariableKind::Ordinal { .. } => "ordinal",
                    _ => "multinomial",
                };
                let e = disc.entry(key).or_default();
                e.0.extend(t.iter().map(|&v| v as u32));
                e.1.extend(x.iter().map(|&v| v as u32));
            }
        }
    }
    out.write_record([
        "rmse".to_string(),
        "continuous".to_string(),
        fmt(metrics::rmse(&cont_t, &cont_x)),
    ])?;
    for key in ["binary", "ordinal", "multinomial"] {
        if let Some((t, x)) = disc.get(key) {
            out.write_record([
                "classification_error".to_string(),
                key.to_string(),
                fmt(metrics::classification_error(t, x)),
            ])?;
        }
    }

    if let (Some(hat), Some(tru)) = (&args.sigma_hat, &args.sigma_true) {
        let hat = io::load_matrix_csv(hat)?;
        let tru = io::load_matrix_csv(tru)?;
        out.write_record([
            "relative_sigma_error".to_string(),
            "sigma".to_string(),
            fmt(metrics::relative_sigma_error(&tru, &hat)),
        ])?;
    }
    out.flush()?;
    Ok(())
}
