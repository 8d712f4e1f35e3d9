use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diffnet::exec::with_threads;
use diffnet::pipeline::{check_inputs, fit_group, run_differential_with_model, Estimator};
use diffnet::selfcheck;
use diffnet::score::score_model_by_name;
use diffnet::simulation::{
    default_graph, figure2, generate_replicate, run_table1, write_figure2_tsv, EtaSetting, Method,
    SimScenario, Table1Config,
};
use diffnet::{load_dataset, BasisSpec, Dataset, EstimatorConfig, Execution, Group, Schema};

/// Covariate-adjusted differential network analysis.
#[derive(Parser, Debug)]
#[command(name = "diffnet", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test every edge for a difference between two groups.
    Test(TestArgs),
    /// Fit every node of both groups and write the fits as JSON.
    Fit(FitArgs),
    /// Write one simulated two-group replicate as CSV files.
    Simulate(SimulateArgs),
    /// Monte Carlo rejection-rate table.
    Table1(Table1Args),
    /// Monte Carlo estimation-error curves.
    Figure2(Figure2Args),
    /// Run the built-in invariant checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BasisArg {
    Linear,
    Cubic,
    /// No covariate adjustment: plain partial correlations.
    None,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EstimatorArg {
    Ols,
    Gl,
    SmLowdim,
    SmReg,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ols => Estimator::NeighborhoodOls,
            EstimatorArg::Gl => Estimator::NeighborhoodGl,
            EstimatorArg::SmLowdim => Estimator::SmLowDim,
            EstimatorArg::SmReg => Estimator::SmReg,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SettingArg {
    Linear,
    Cubic,
}

impl From<SettingArg> for EtaSetting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Linear => EtaSetting::LinearEta,
            SettingArg::Cubic => EtaSetting::CubicEta,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// key=value file supplying defaults for any long flag; flags given on
    /// the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = BasisArg::Linear)]
    basis: BasisArg,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Gl)]
    estimator: EstimatorArg,
    /// Score-matching model (gaussian or nonneg-gaussian).
    #[arg(long, default_value = "gaussian")]
    model: String,
    /// Explicit descending λ grid, comma-separated.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    n_lambda: usize,
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    /// Nodewise penalty; defaults to 0.5·sqrt(log(m)/n).
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long, default_value_t = 1e-7)]
    bcd_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    bcd_max_iter: usize,
}

#[derive(Args, Debug)]
struct GroupInputs {
    /// CSV for group I (or both groups with --group-column).
    #[arg(long)]
    group1: PathBuf,
    /// CSV for group II; omit when --group-column splits --group1.
    #[arg(long)]
    group2: Option<PathBuf>,
    /// Column holding group labels when both groups share one file.
    #[arg(long)]
    group_column: Option<String>,
    /// The two labels of --group-column, comma-separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    group_values: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    inputs: GroupInputs,
    #[arg(long, default_value_t = 0.05)]
    kappa: f64,
    /// Output directory for fits.json and edges.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    inputs: GroupInputs,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 240)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    p: usize,
    #[arg(long, value_enum, default_value_t = SettingArg::Linear)]
    setting: SettingArg,
    /// Output directory for group1.csv, group2.csv and graph.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Table1Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 400)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [80, 160, 240])]
    ns: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SettingArg::Linear, SettingArg::Cubic])]
    settings: Vec<SettingArg>,
    #[arg(long, default_value_t = 0.05)]
    kappa: f64,
    /// Output TSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Figure2Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [80, 160, 240])]
    ns: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SettingArg::Linear, SettingArg::Cubic])]
    settings: Vec<SettingArg>,
    /// Output TSV file.
    #[arg(long)]
    out: PathBuf,
}

/// Parse a key=value file into `--key=value` arguments. Blank lines and
/// lines starting with '#' are skipped; `key = true` becomes a bare flag.
fn config_args(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
        let k = k.trim().replace('_', "-");
        let v = v.trim().trim_matches('"');
        if k == "config" {
            bail!("{}:{}: nested config files are not supported", path.display(), i + 1);
        }
        out.push(format!("--{k}={v}"));
    }
    Ok(out)
}

/// Splice config-file arguments in front of the command-line flags so that
/// later (command-line) occurrences override them.
fn expand_args(raw: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    for (i, a) in raw.iter().enumerate() {
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if a == "--config" {
            config = raw.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = config else {
        return Ok(raw);
    };
    let Some(sub) = raw.iter().skip(1).position(|a| !a.starts_with('-')) else {
        return Ok(raw);
    };
    let at = sub + 2;
    let mut out = raw[..at].to_vec();
    out.extend(config_args(&path)?);
    out.extend_from_slice(&raw[at..]);
    Ok(out)
}

fn estimator_config(m: &ModelArgs, common: &Common) -> EstimatorConfig {
    EstimatorConfig {
        lambda_grid: m.lambda_grid.clone(),
        n_lambda: m.n_lambda,
        cv_folds: m.cv_folds,
        bcd_tol: m.bcd_tol,
        bcd_max_iter: m.bcd_max_iter,
        omega: m.omega,
        seed: common.seed,
        execution: execution(common.threads),
        ..Default::default()
    }
}

fn execution(threads: usize) -> Execution {
    if threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn basis_for(arg: BasisArg, q: usize) -> BasisSpec {
    match arg {
        BasisArg::Linear => BasisSpec::linear(q),
        BasisArg::Cubic => BasisSpec::cubic(q),
        BasisArg::None => BasisSpec::linear(0),
    }
}

fn schema_for(m: &ModelArgs) -> Schema {
    Schema::with_covariates(m.covariates.iter().cloned())
}

/// With `--basis none` the covariates are read (so they are excluded from
/// the nodes) and then dropped.
fn drop_covariates(data: Dataset, basis: BasisArg) -> Result<Dataset> {
    if !matches!(basis, BasisArg::None) || data.q() == 0 {
        return Ok(data);
    }
    let n = data.n();
    Ok(Dataset::new(
        data.group(),
        data.x().clone(),
        nalgebra::DMatrix::zeros(n, 0),
        data.node_names().to_vec(),
        vec![],
    )?)
}

fn load_groups(args: &GroupInputs, model: &ModelArgs) -> Result<(Dataset, Dataset)> {
    let schema = schema_for(model);
    let (a, b) = match (&args.group2, &args.group_column) {
        (Some(g2), None) => {
            let a = load_dataset(&args.group1, Group::I, &schema)
                .with_context(|| format!("loading {}", args.group1.display()))?;
            let b = load_dataset(g2, Group::II, &schema)
                .with_context(|| format!("loading {}", g2.display()))?;
            (a, b)
        }
        (None, Some(col)) => {
            let vals = args
                .group_values
                .as_ref()
                .filter(|v| v.len() == 2)
                .context("--group-column needs --group-values with exactly two labels")?;
            let load = |label: &String, group| {
                let s = Schema {
                    group_column: Some(col.clone()),
                    group_value: Some(label.clone()),
                    ..schema.clone()
                };
                load_dataset(&args.group1, group, &s)
                    .with_context(|| format!("loading group '{label}' from {}", args.group1.display()))
            };
            (load(&vals[0], Group::I)?, load(&vals[1], Group::II)?)
        }
        (Some(_), Some(_)) => bail!("give either --group2 or --group-column, not both"),
        (None, None) => bail!("missing --group2 (or --group-column with --group-values)"),
    };
    Ok((
        drop_covariates(a, model.basis)?,
        drop_covariates(b, model.basis)?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let (a, b) = load_groups(&args.inputs, &args.model)?;
    let basis = basis_for(args.model.basis, a.q());
    let cfg = estimator_config(&args.model, &args.common);
    let model = score_model_by_name(&args.model.model)
        .with_context(|| format!("unknown score model '{}'", args.model.model))?;
    log::info!(
        "testing {} nodes: n1 = {}, n2 = {}, d = {}",
        a.p(),
        a.n(),
        b.n(),
        basis.d()
    );
    let run = with_threads(args.common.threads, || {
        run_differential_with_model(
            &a,
            &b,
            &basis,
            args.model.estimator.into(),
            model,
            &cfg,
            args.kappa,
        )
    })?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut fits = create(&args.out.join("fits.json"))?;
    run.write_json(&mut fits)?;
    fits.flush()?;
    let mut edges = create(&args.out.join("edges.tsv"))?;
    run.network.write_tsv(&mut edges, Some(&run.node_names))?;
    edges.flush()?;
    println!(
        "{} edges tested, {} rejected at FDR {}",
        run.network.edges.len(),
        run.network.rejected.len(),
        args.kappa
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (a, b) = load_groups(&args.inputs, &args.model)?;
    let basis = basis_for(args.model.basis, a.q());
    check_inputs(&a, &b, &basis)?;
    let cfg = estimator_config(&args.model, &args.common);
    let model = score_model_by_name(&args.model.model)
        .with_context(|| format!("unknown score model '{}'", args.model.model))?;
    let estimator: Estimator = args.model.estimator.into();
    let (fa, fb) = with_threads(args.common.threads, || {
        Ok::<_, diffnet::DiffNetError>((
            fit_group(&a, &basis, estimator, &model, &cfg)?,
            fit_group(&b, &basis, estimator, &model, &cfg)?,
        ))
    })?;
    let mut out = create(&args.out)?;
    serde_json::to_writer_pretty(
        &mut out,
        &serde_json::json!({
            "estimator": estimator,
            "basis": basis.kind(),
            "d": basis.d(),
            "node_names": a.node_names(),
            "fits": [fa, fb],
        }),
    )?;
    out.flush()?;
    println!("fitted {} nodes in each group", a.p());
    Ok(())
}

fn cmd_selfcheck(args: SelfcheckArgs) -> Result<()> {
    let checks = selfcheck::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(path) = &args.out {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &checks)?;
        out.flush()?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    if args.p < 5 {
        bail!("--p must be at least 5");
    }
    let graph = default_graph(args.p, args.common.seed)?;
    let scen = SimScenario {
        n: args.n,
        p: args.p,
        setting: args.setting.into(),
        replicate_seed: diffnet::exec::mix_seed(args.common.seed, 0),
    };
    let (a, b) = generate_replicate(&scen, &graph)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    a.write_csv_path(args.out.join("group1.csv"))?;
    b.write_csv_path(args.out.join("group2.csv"))?;
    let mut g = create(&args.out.join("graph.json"))?;
    serde_json::to_writer_pretty(&mut g, &graph)?;
    g.flush()?;
    Ok(())
}

fn cmd_table1(args: Table1Args) -> Result<()> {
    let cfg = Table1Config {
        settings: args.settings.iter().map(|&s| s.into()).collect(),
        methods: Method::ALL.to_vec(),
        ns: args.ns,
        reps: args.reps,
        kappa: args.kappa,
        seed: args.common.seed,
        estimator: EstimatorConfig {
            execution: execution(args.common.threads),
            ..Default::default()
        },
        ..Default::default()
    };
    let table = with_threads(args.common.threads, || run_table1(&cfg))?;
    let mut out = create(&args.out)?;
    table.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_figure2(args: Figure2Args) -> Result<()> {
    let settings: Vec<EtaSetting> = args.settings.iter().map(|&s| s.into()).collect();
    let est = EstimatorConfig {
        execution: execution(args.common.threads),
        ..Default::default()
    };
    let pts = with_threads(args.common.threads, || {
        figure2(&settings, &args.ns, args.reps, 3, args.common.seed, &est)
    })?;
    let mut out = create(&args.out)?;
    write_figure2_tsv(&pts, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run() -> Result<()> {
    let args = expand_args(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Table1(a) => cmd_table1(a),
        Command::Figure2(a) => cmd_figure2(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
