use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asym_ac::agent::checkpoint::load_checkpoint;
use asym_ac::envs::EnvId;
use asym_ac::harness::config::parse_data_source_flag;
use asym_ac::harness::report::write_report;
use asym_ac::harness::{
    execute_run, provision_validation_buffer, run_study, validation_path, ExperimentConfig, ProvisionOptions, RawConfig,
    SeedRegistry, StudyManifest,
};
use asym_ac::nn::DenseNetwork;
use asym_ac::storage::save_buffer;
use asym_ac::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "asym-ac", version, about = "Asymmetric actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an unmodified baseline and store its validation buffer.
    Provision(ProvisionArgs),
    /// Train one configuration and write its run directory.
    Run(RunArgs),
    /// Run every configuration and seed of a study manifest.
    Study(StudyArgs),
    /// Regenerate the tables and time series of a study directory.
    Report { study_dir: PathBuf },
    /// Describe a saved checkpoint.
    Inspect { checkpoint: PathBuf },
}

#[derive(Args)]
struct ProvisionArgs {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Number of transitions to keep.
    #[arg(long, default_value_t = asym_ac::diagnostics::VALIDATION_SIZE)]
    size: usize,
    /// Sample from the final replay buffer instead of the whole history.
    #[arg(long)]
    final_buffer: bool,
    /// Base configuration (TOML) for training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Actor size tag: r, m, s or xs.
    #[arg(long)]
    actor_size: Option<String>,
    /// Critic aggregation: min, mean or max.
    #[arg(long)]
    agg: Option<String>,
    /// Critic regularizer, repeatable: layernorm, spectral, wd, l2init, reset.
    #[arg(long = "reg")]
    regs: Vec<String>,
    #[arg(long)]
    bias_correction: bool,
    #[arg(long)]
    mask_actor_inputs: bool,
    /// `self`, `tandem:<provider.toml>` or `switch:<provider.toml>:<fraction>`.
    #[arg(long)]
    data_source: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Validation buffer file; defaults to `<out>/validation/<env>.buf`.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    no_diagnostics: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct StudyArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory holding `validation/<env>.buf`; defaults to the output root.
    #[arg(long)]
    validation_dir: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Provision(a) => provision(a),
        Command::Run(a) => run(a),
        Command::Study(a) => study(a),
        Command::Report { study_dir } => report(&study_dir),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<RawConfig> {
    path.map_or_else(|| Ok(RawConfig::default()), RawConfig::load)
}

fn provision(a: ProvisionArgs) -> Result<()> {
    let mut raw = base_config(a.config.as_deref())?;
    raw.env = a.env.or(raw.env);
    raw.seed = a.seed.or(raw.seed);
    raw.total_steps = a.steps.or(raw.total_steps);
    let config = raw.resolve()?;
    let path = validation_path(&a.out, config.env);
    if path.exists() && !a.force {
        return Err(Error::Refused(format!("{} already exists (use --force to overwrite)", path.display())));
    }
    let mut registry = SeedRegistry::load(&a.out)?;
    registry.register_validation(config.env, config.seed)?;
    let options = ProvisionOptions {
        size: a.size,
        final_buffer: a.final_buffer,
    };
    let buffer = provision_validation_buffer(&config, &options)?;
    std::fs::create_dir_all(path.parent().expect("validation path has a parent"))?;
    save_buffer(&path, &buffer, config.env.as_str())?;
    registry.save(&a.out)?;
    println!("wrote {} transitions to {}", buffer.len(), path.display());
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut raw = base_config(a.config.as_deref())?;
    let flags = RawConfig {
        env: a.env.clone(),
        actor_size: a.actor_size.clone(),
        mode: a.agg.clone(),
        regularizers: (!a.regs.is_empty()).then(|| a.regs.clone()),
        bias_correction: a.bias_correction.then_some(true),
        mask_actor_inputs: a.mask_actor_inputs.then_some(true),
        seed: a.seed,
        total_steps: a.steps,
        diagnostics: a.no_diagnostics.then_some(false),
        ..RawConfig::default()
    };
    raw.overlay(&flags);
    if let Some(flag) = &a.data_source {
        let (kind, provider, fraction) = parse_data_source_flag(flag)?;
        raw.data_source = Some(kind);
        raw.fraction = fraction;
        if let Some(p) = provider {
            raw.set_provider(&RawConfig::load(Path::new(&p))?)?;
        }
    }
    raw.resolve()
}

fn run(a: RunArgs) -> Result<()> {
    let config = run_config(&a)?;
    let mut registry = SeedRegistry::load(&a.out)?;
    registry.register_config(&config)?;
    let summary = execute_run(&config, &a.out, a.validation.as_deref(), a.force)?;
    registry.save(&a.out)?;
    let ret = summary.final_return.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
    println!("{} seed {}: {:?}, final return {ret}", config.label(), config.seed, summary.status);
    println!("{}", summary.dir.display());
    Ok(())
}

fn study(a: StudyArgs) -> Result<()> {
    let manifest = StudyManifest::load(&a.manifest)?;
    let records = run_study(&manifest, &a.out, a.jobs, a.validation_dir.as_deref())?;
    let failed = records.iter().filter(|r| r.status == "failed").count();
    println!("study '{}': {} runs, {failed} failed", manifest.name, records.len());
    for r in records.iter().filter(|r| r.error.is_some()) {
        eprintln!("  {} {} seed {}: {}", r.env, r.label, r.seed, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    for f in write_report(dir)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn describe(name: &str, net: &DenseNetwork) {
    let stats = net.parameter_stats();
    println!("{name:<16} hidden {:?}  params {}  l2 {}", net.hidden_widths(), stats.count, stats.l2_norm);
}

fn inspect(path: &Path) -> Result<()> {
    let (agent, meta) = load_checkpoint(path)?;
    let env: EnvId = meta.env_id.parse()?;
    println!("env              {env}");
    println!("actor size       {}", meta.size_tag);
    println!("aggregation      {}", agent.mode());
    let regs = agent.config.regularizers.tags();
    println!("regularizers     {}", if regs.is_empty() { "none".into() } else { regs.join(",") });
    println!("env steps        {}", meta.env_steps);
    println!("updates          {}", agent.updates);
    println!("alpha            {:.6}", agent.temperature.alpha());
    describe("actor", &agent.policy.net);
    describe("critic 1", &agent.critics.online[0]);
    describe("critic 2", &agent.critics.online[1]);
    Ok(())
}
