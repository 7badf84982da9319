//! `mtlb`: generate cohorts, run regimes and grids, sweep hyperparameters
//! and render reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mtlb::data::calibration::calibrate;
use mtlb::data::io::{load_dataset, save_dataset};
use mtlb::data::{generate_cohort, GeneratorParams};
use mtlb::experiment::grid::default_checkpoint_dir;
use mtlb::experiment::{enumerate, report, run_grid, Cell, ExperimentConfig, GridContext, GridRequest, RegimeKind, ResultsStore};
use mtlb::model::EncoderKind;
use mtlb::search::space::parse_arch;
use mtlb::search::{run_sweep, MtRunner, SearchSpace, Strategy, Trial};
use mtlb::tasks::{tasks_for, Category};
use mtlb::train::Regime;
use mtlb::MtlbError;

#[derive(Parser)]
#[command(name = "mtlb", version, about = "Multi-task learning experiments on hourly ICU-style time series")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its calibration manifest.
    GenData(GenData),
    /// Run a single regime (and its pretraining dependency if needed).
    Run(RunArgs),
    /// Run a grid of regimes × categories × fractions × seeds, skipping finished cells.
    Grid(GridArgs),
    /// Render CSV/SVG views of a results store.
    Report(ReportArgs),
    /// Hyperparameter sweep of the multi-task objective.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long, env = "MTLB_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 21_876)]
    patients: usize,
    #[arg(long)]
    out: PathBuf,
    /// Calibration manifest path; defaults to `<out>.calibration.txt`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Overwrite existing files.
    #[arg(long)]
    force: bool,
    /// Drive length of stay by a latent that conflicts with the other tasks.
    #[arg(long)]
    adversarial: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Regime such as `ST(MOR)`, `MT`, `PRETRAIN-OMIT(LOS)` or `FTF(MOR)`.
    #[arg(long)]
    regime: String,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long)]
    female_removal: Option<f64>,
    /// Seed index; defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's master seed.
    #[arg(long, env = "MTLB_SEED")]
    master_seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated regime families; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    regimes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// A count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, env = "MTLB_SEED")]
    master_seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results store; defaults to `<output>/results.jsonl` of `--config`.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the emitted files; defaults to `reports/` beside the store.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    table2: bool,
    #[arg(long)]
    negative_transfer: bool,
    #[arg(long)]
    fewshot_curves: bool,
    #[arg(long)]
    discrepancy: bool,
    /// Training fraction shown in the few-shot columns of table2.
    #[arg(long, default_value_t = 0.01)]
    few_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    female_removal: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 20)]
    budget: usize,
    /// Comma-separated architectures: linear, gru, transformer.
    #[arg(long, value_delimiter = ',', default_value = "linear,gru,transformer")]
    arch: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    #[arg(long, default_value = "tpe")]
    strategy: String,
    #[arg(long, env = "MTLB_SEED", default_value_t = 0)]
    seed: u64,
    /// Trial log (JSON lines).
    #[arg(long, default_value = "trials.jsonl")]
    out: PathBuf,
}

fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(MtlbError::Usage(format!("{} exists; pass --force to overwrite", path.display())).into());
    }
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let manifest = a.calibration.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".calibration.txt");
        PathBuf::from(s)
    });
    guard_overwrite(&a.out, a.force)?;
    guard_overwrite(&manifest, a.force)?;
    let params = GeneratorParams {
        adversarial_los: a.adversarial,
        ..GeneratorParams::default()
    };
    let ds = generate_cohort(a.seed, a.patients, &params)?;
    save_dataset(&ds, &a.out)?;
    let cal = calibrate(&ds);
    std::fs::write(&manifest, cal.to_manifest()).with_context(|| format!("writing {}", manifest.display()))?;
    print!("{}", cal.to_table());
    let (tr, tu, te) = ds.split_sizes();
    println!(
        "wrote {} patients (train {tr}, tune {tu}, test {te}) to {}; manifest {}; {} statistics out of tolerance",
        ds.len(),
        a.out.display(),
        manifest.display(),
        cal.failures().len()
    );
    Ok(())
}

fn load_config(path: &Path, master_seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = master_seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig, cells: &[Cell], jobs: usize) -> Result<()> {
    let ds = load_dataset(&cfg.dataset)?;
    let (encoder, train) = cfg.resolved()?;
    let ctx = GridContext {
        dataset: &ds,
        suite: cfg.suite(),
        encoder,
        train,
        config_hash: cfg.hash()?,
        master_seed: cfg.master_seed,
        store: ResultsStore::new(cfg.output.join("results.jsonl")),
        checkpoint_dir: default_checkpoint_dir(&cfg.output),
    };
    std::fs::create_dir_all(&cfg.output)?;
    std::fs::write(cfg.output.join(format!("config-{}.toml", &ctx.config_hash[..16])), cfg.to_toml())?;
    let summary = run_grid(&ctx, cells, jobs)?;
    println!(
        "config {}: {} cells requested, {} already complete, {} executed, {} failed",
        ctx.config_hash,
        summary.requested,
        summary.skipped,
        summary.executed,
        summary.failed.len()
    );
    if let Some((label, err)) = summary.failed.into_iter().next() {
        return Err(anyhow::Error::new(err).context(format!("cell {label} failed")));
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.master_seed)?;
    let regime: Regime = a.regime.parse()?;
    let cell = Cell {
        regime,
        fraction: a.fraction,
        female_removal: a.female_removal,
        seed: a.seed.unwrap_or(cfg.seeds[0]),
    };
    let mut cells: Vec<Cell> = cell.dependency().into_iter().collect();
    cells.push(cell);
    execute(&cfg, &cells, 1)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if !s.contains(',') {
        if let Ok(n) = s.parse::<u64>() {
            return Ok((0..n).collect());
        }
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| MtlbError::Config(format!("bad seed {x:?}")).into()))
        .collect()
}

fn grid(a: GridArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, a.master_seed)?;
    if let Some(r) = &a.regimes {
        cfg.regimes = r.iter().map(|s| RegimeKind::parse(s)).collect::<mtlb::Result<_>>()?;
    }
    if let Some(f) = a.fractions {
        cfg.fractions = f;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    cfg.validate()?;
    let cells = enumerate(&GridRequest::from_config(&cfg));
    execute(&cfg, &cells, a.jobs)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let results = match (&a.results, &a.config) {
        (Some(r), _) => r.clone(),
        (None, Some(c)) => ExperimentConfig::load(c)?.output.join("results.jsonl"),
        (None, None) => return Err(MtlbError::Usage("pass --results or --config".into()).into()),
    };
    let records = ResultsStore::new(&results).load()?;
    if records.is_empty() {
        return Err(MtlbError::Data(format!("{} holds no results", results.display())).into());
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| results.parent().unwrap_or(Path::new(".")).join("reports"));
    std::fs::create_dir_all(&out)?;
    let all = !(a.table2 || a.negative_transfer || a.fewshot_curves || a.discrepancy);
    if a.table2 || all {
        write(&out.join("table2.csv"), &report::table2(&records, a.few_fraction))?;
    }
    if a.negative_transfer || all {
        write(&out.join("negative_transfer.csv"), &report::negative_transfer(&records))?;
    }
    if a.fewshot_curves || all {
        write(&out.join("fewshot_curves.csv"), &report::fewshot_csv(&records))?;
        for c in Category::REPORTED {
            if let Some(svg) = report::fewshot_svg(&records, c) {
                write(&out.join(format!("fewshot_{}.svg", c.abbr().to_ascii_lowercase())), &svg)?;
            }
        }
    }
    if a.discrepancy || all {
        write(&out.join("discrepancy.csv"), &report::discrepancy(&records, a.female_removal))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let archs: Vec<EncoderKind> = a.arch.iter().map(|s| parse_arch(s)).collect::<mtlb::Result<_>>()?;
    let strategy = match a.strategy.to_ascii_lowercase().as_str() {
        "tpe" => Strategy::Tpe,
        "random" => Strategy::Random,
        o => bail!(MtlbError::Config(format!("unknown strategy {o:?}"))),
    };
    let cats: Vec<Category> = match &a.categories {
        Some(v) => v.iter().map(|s| Category::parse(s)).collect::<mtlb::Result<_>>()?,
        None => Category::REPORTED.to_vec(),
    };
    let space = SearchSpace::standard(&archs)?;
    let ds = load_dataset(&a.dataset)?;
    let suite = tasks_for(&cats);
    let store = mtlb::experiment::JsonlStore::<Trial>::new(&a.out);
    let mut runner = MtRunner {
        dataset: &ds,
        suite: &suite,
    };
    let mut log_err = None;
    let outcome = run_sweep(&space, a.budget, strategy, a.seed, &mut runner, |t| {
        match (t.objective, &t.error) {
            (Some(y), _) => println!("trial {:>3}: objective {y:.4}", t.index),
            (None, e) => println!("trial {:>3}: failed ({})", t.index, e.as_deref().unwrap_or("?")),
        }
        if let Err(e) = store.append(std::slice::from_ref(t)) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    for (arch, &i) in &outcome.best {
        let t = &outcome.trials[i];
        println!(
            "best {arch}: trial {i} objective {:.4} {}",
            t.objective.unwrap_or(f64::NAN),
            serde_json::to_string(&t.point)?
        );
    }
    if outcome.best.is_empty() {
        bail!(MtlbError::Numeric("every trial failed".into()));
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<MtlbError>())
        .map_or(3, |m| m.exit_code() as u8)
}

fn main() -> ExitCode {
    mtlb::runtime::tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::GenData(a) => gen_data(a),
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report_cmd(a),
        Command::Sweep(a) => sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
