use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ersaa::bench::{gen_demand_model, gen_instance, to_two_stage, CovariateSampler, DemandModel};
use ersaa::evalharness::{mrp_ucb, parse_results_csv, results_csv, run_replications, summarize, summary_csv, UcbOptions};
use ersaa::twostage::TwoStageLp;
use ersaa_cli::config::RunConfig;
use ersaa_cli::{parse_vector, CliError};

#[derive(Parser)]
#[command(name = "ersaa", version, about = "Residuals-based SAA experiments for two-stage stochastic LPs")]
struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the instance and demand-model files.
    Gen(GenArgs),
    /// Run the replication sweep and write results and summary CSVs.
    Run(RunArgs),
    /// Certify a decision with the multiple replication procedure.
    Certify(CertifyArgs),
    /// Percentile summary of an existing results CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed (seeds not set explicitly are re-derived).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Results CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV path (default: `<out stem>_summary.csv` next to `--out`).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Skip the projection of constructed scenarios onto the support.
    #[arg(long)]
    no_project: bool,
}

#[derive(Args)]
struct CertifyArgs {
    /// Two-stage instance written by `gen`.
    #[arg(long)]
    instance: PathBuf,
    /// Demand model written by `gen`.
    #[arg(long)]
    demand: PathBuf,
    /// File with the candidate first-stage decision.
    #[arg(long)]
    z: PathBuf,
    /// File with the raw covariate vector.
    #[arg(long)]
    x: PathBuf,
    /// Samples per evaluation batch.
    #[arg(long, default_value_t = UcbOptions::default().n_eval)]
    n_eval: usize,
    /// Number of independent batches.
    #[arg(long, default_value_t = UcbOptions::default().n_batches)]
    n_batches: usize,
    /// Quantile multiplier for the bound.
    #[arg(long, default_value_t = UcbOptions::default().t_multiplier)]
    t_multiplier: f64,
    /// Seed for the evaluation batches.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-batch CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Results CSV to summarize.
    #[arg(long)]
    input: PathBuf,
    /// Summary CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn gen(args: &GenArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let exp = cfg.experiment_config()?;
    let inst = gen_instance(exp.n_resources, exp.n_customers, exp.instance_seed, &exp.instance)?;
    let model = to_two_stage(&inst)?;
    let sampler = CovariateSampler::vine(exp.d_x, exp.covariate_seed)?;
    let demand = gen_demand_model(&sampler, exp.n_customers, exp.degree, exp.sigma, exp.omega, exp.demand_seed, exp.calibration_samples)?;
    write(&args.out.join("instance.txt"), &model.to_text())?;
    write(&args.out.join("demand.txt"), &demand.to_text())?;
    write(&args.out.join("config.toml"), &cfg.to_toml())?;
    write(&args.out.join("metadata.txt"), &exp.metadata())?;
    eprintln!(
        "wrote instance ({} resources, {} customers) and demand model (d_x = {}) to {}",
        exp.n_resources,
        exp.n_customers,
        exp.d_x,
        args.out.display()
    );
    Ok(())
}

fn default_summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let mut exp = cfg.experiment_config()?;
    if args.no_project {
        exp.project = false;
    }
    let rows = run_replications(&exp)?;
    write(&args.out, &results_csv(&rows))?;
    let summary = summary_csv(&summarize(&rows));
    let path = args.summary.clone().unwrap_or_else(|| default_summary_path(&args.out));
    write(&path, &summary)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    eprintln!("wrote {} rows ({failed} failed cells) to {}; summary in {}", rows.len(), args.out.display(), path.display());
    print!("{summary}");
    Ok(())
}

fn certify(args: &CertifyArgs) -> Result<(), CliError> {
    let model = TwoStageLp::from_text(&read(&args.instance)?)?;
    let demand = DemandModel::from_text(&read(&args.demand)?)?;
    let z = parse_vector(&read(&args.z)?)?;
    let x = parse_vector(&read(&args.x)?)?;
    if z.len() != model.d_z() {
        return Err(CliError::Input(format!("decision has {} entries, instance expects {}", z.len(), model.d_z())));
    }
    if x.len() != demand.d_x {
        return Err(CliError::Input(format!("covariate has {} entries, demand model expects {}", x.len(), demand.d_x)));
    }
    let opts = UcbOptions { n_eval: args.n_eval, n_batches: args.n_batches, t_multiplier: args.t_multiplier, ..UcbOptions::default() };
    let rep = mrp_ucb(&model, &demand, &x, &z, &opts, args.seed)?;
    let mut csv = String::from("batch,batch_cost,batch_optimum,gap\n");
    for k in 0..rep.gaps.len() {
        let _ = writeln!(csv, "{k},{},{},{}", rep.batch_costs[k], rep.batch_optima[k], rep.gaps[k]);
    }
    println!("n_eval {}", opts.n_eval);
    println!("n_batches {}", opts.n_batches);
    println!("t_multiplier {}", opts.t_multiplier);
    println!("v_bar {}", rep.v_bar);
    println!("gap_mean {}", rep.gap_mean());
    println!("gap_std {}", rep.gap_std());
    if rep.absolute {
        println!("b99_absolute {}", rep.b99);
    } else {
        println!("b99_percent {}", rep.b99);
    }
    print!("{csv}");
    if let Some(p) = &args.out {
        write(p, &csv)?;
    }
    Ok(())
}

fn summarize_cmd(args: &SummarizeArgs) -> Result<(), CliError> {
    let rows = parse_results_csv(&read(&args.input)?)?;
    let text = summary_csv(&summarize(&rows));
    match &args.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(ersaa_cli::EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Certify(a) => certify(a),
        Command::Summarize(a) => summarize_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
