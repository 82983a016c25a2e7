use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lsda_core::estimators::{sda_estimate, single_message_rounds};
use lsda_core::ingest::{DEFAULT_MIN_SENDER_MESSAGES, DEFAULT_THRESHOLD};
use lsda_core::mixsim::DelayStats;
use lsda_core::theory::predict_for_population;
use lsda_core::{
    build_rounds, clsda, delay_stats, gen_population, load_events, lsda_with, mse_transition, rls,
    run_experiment, simulate_trace, uniformity_stats, zero_clip, ExperimentSpec, FreqDist, Init,
    Method, MixConfig, MixKind, MsePrediction, ProfileDist, ProfileEstimate, Regime, SolverOptions,
    Trace, UserPopulation,
};

#[derive(Parser)]
#[command(
    name = "lsda",
    version,
    about = "Disclosure attacks on threshold and pool mixes"
)]
struct Cli {
    /// Seed for randomized commands (gen, simulate, predict); overrides the
    /// spec's master seed for `experiment`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of reports and summaries.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic user population (JSON).
    Gen(PopArgs),
    /// Simulate a mix over a population and write the observed trace.
    Simulate(SimulateArgs),
    /// Estimate sender profiles from a trace.
    Attack(AttackArgs),
    /// Closed-form error prediction for a population and mix.
    Predict(PredictArgs),
    /// Batch a `timestamp,sender,receiver` log into threshold-mix rounds.
    Ingest(IngestArgs),
    /// Run a parameter sweep described by a TOML or JSON spec.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct PopArgs {
    #[arg(long, default_value_t = 100)]
    n_users: usize,
    #[arg(long, default_value_t = 25)]
    n_friends: usize,
    #[arg(long, default_value = "zipf")]
    profile_dist: ProfileDist,
    #[arg(long, default_value = "uniform")]
    freq_dist: FreqDist,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long, default_value = "threshold")]
    kind: MixKind,
    #[arg(long, default_value_t = 10)]
    t: u32,
    /// Departure probability for a pool mix.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Initial pool occupancy; its senders follow the population frequencies.
    #[arg(long, default_value_t = 0)]
    m: u32,
    #[arg(long, default_value_t = 10_000)]
    rho: usize,
}

impl MixArgs {
    fn config(&self, pop: &UserPopulation) -> MixConfig {
        match self.kind {
            MixKind::Threshold => MixConfig::threshold(self.t),
            MixKind::BinomialPool => MixConfig::pool(self.t, self.alpha)
                .with_initial_pool(self.m, pop.frequencies().iter().copied().collect()),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Population file written by `gen`.
    #[arg(long)]
    population: PathBuf,
    #[command(flatten)]
    mix: MixArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Uniform,
    UnconstrainedProjected,
}

#[derive(Args)]
struct AttackArgs {
    /// Trace file written by `simulate` or `ingest`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "lsda")]
    method: Method,
    /// Score the estimate against this population.
    #[arg(long)]
    population: Option<PathBuf>,
    /// Write the summary here (default stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// For `sda`: keep only rounds where user 0 sent exactly one message.
    #[arg(long)]
    single_rounds: bool,
    #[arg(long, default_value_t = 1.0)]
    step_scale: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
    init: InitArg,
    /// Regularize a rank-deficient system instead of failing.
    #[arg(long)]
    ridge: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Exact,
    Rough,
    Both,
}

#[derive(Args)]
struct PredictArgs {
    /// Population file; generated from the population flags when absent.
    #[arg(long)]
    population: Option<PathBuf>,
    #[command(flatten)]
    pop: PopArgs,
    #[command(flatten)]
    mix: MixArgs,
    #[arg(long, value_enum, default_value_t = RegimeArg::Both)]
    regime: RegimeArg,
}

#[derive(Args)]
struct IngestArgs {
    /// CSV log of `timestamp,sender,receiver` lines.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    t: u32,
    /// Drop senders with fewer events than this.
    #[arg(long, default_value_t = DEFAULT_MIN_SENDER_MESSAGES)]
    min_messages: usize,
    /// Also write the empirical population (JSON).
    #[arg(long)]
    population_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => io::stdout()
            .write_all(text.as_bytes())
            .context("writing to stdout"),
    }
}

/// Key/value summary as two-column CSV or a flat JSON object.
fn summary(format: Format, pairs: &[(&str, String)]) -> String {
    match format {
        Format::Csv => {
            let mut s = String::from("key,value\n");
            for (k, v) in pairs {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> = pairs
                .iter()
                .map(|(k, v)| {
                    let val = if let Ok(i) = v.parse::<i64>() {
                        i.into()
                    } else if let Ok(b) = v.parse::<bool>() {
                        b.into()
                    } else {
                        v.parse::<f64>()
                            .ok()
                            .and_then(serde_json::Number::from_f64)
                            .map_or_else(|| serde_json::Value::String(v.clone()), Into::into)
                    };
                    (k.to_string(), val)
                })
                .collect();
            serde_json::to_string_pretty(&map).expect("summary serializes") + "\n"
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_gen(cli: &Cli, args: &PopArgs) -> Result<()> {
    let pop = gen_population(
        args.n_users,
        args.n_friends,
        args.profile_dist,
        args.freq_dist,
        cli.seed.unwrap_or(0),
    )?;
    let stats = uniformity_stats(&pop);
    emit(cli.out.as_deref(), &pop.to_json()?)?;
    eprint!(
        "{}",
        summary(
            cli.format,
            &[
                ("n_users", args.n_users.to_string()),
                ("n_friends", args.n_friends.to_string()),
                ("u_bar", num(stats.u_bar)),
            ],
        )
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let pop = UserPopulation::load(&args.population)?;
    let config = args.mix.config(&pop);
    let trace = simulate_trace(&pop, &config, args.mix.rho, cli.seed.unwrap_or(0))?;
    emit(cli.out.as_deref(), &trace.to_text())?;
    let mut pairs = vec![
        ("rounds", trace.rounds().to_string()),
        ("messages_in", trace.u.total().to_string()),
        ("messages_out", trace.y.total().to_string()),
    ];
    if config.kind == MixKind::BinomialPool {
        let DelayStats {
            mean_delay_rounds,
            delivered,
            ..
        } = delay_stats(&trace)?;
        pairs.push(("delivered", delivered.to_string()));
        pairs.push(("mean_delay_rounds", num(mean_delay_rounds)));
        pairs.push((
            "final_pool_occupancy",
            trace.final_pool_occupancy().to_string(),
        ));
    }
    eprint!("{}", summary(cli.format, &pairs));
    Ok(())
}

fn run_sda(trace: &Trace, single_rounds: bool) -> Result<ProfileEstimate> {
    let restricted;
    let trace = if single_rounds {
        let keep = single_message_rounds(trace, 0);
        if keep.is_empty() {
            bail!("user 0 never sent exactly one message in a round");
        }
        restricted = trace.select_rounds(&keep);
        &restricted
    } else {
        trace
    };
    Ok(sda_estimate(trace, trace.config.t, trace.n_receivers())?)
}

fn cmd_attack(cli: &Cli, args: &AttackArgs) -> Result<()> {
    let trace = Trace::load(&args.trace)?;
    let opts = SolverOptions {
        step_scale: args.step_scale,
        max_iter: args.max_iter,
        tol: args.tol,
        init: match args.init {
            InitArg::Uniform => Init::Uniform,
            InitArg::UnconstrainedProjected => Init::UnconstrainedProjected,
        },
        ridge: args.ridge,
    };
    opts.validate()?;
    let est = match args.method {
        Method::Lsda => lsda_with(&trace, &opts)?,
        Method::Clsda => clsda(&trace, &opts)?,
        Method::Rls => rls(&trace)?,
        Method::Zclip => zero_clip(&lsda_with(&trace, &opts)?),
        Method::Sda => run_sda(&trace, args.single_rounds)?,
    };
    emit(cli.out.as_deref(), &est.to_text())?;

    let mut pairs = vec![
        ("method", est.method.to_string()),
        ("iterations", est.iterations.to_string()),
        ("residual", num(est.residual)),
        ("converged", est.converged.to_string()),
    ];
    if let Some(path) = &args.population {
        let pop = UserPopulation::load(path)?;
        if est.method == Method::Sda {
            let err: f64 = (pop.profiles().row(0) - est.p_hat.row(0)).norm_squared();
            pairs.push(("mse_profile_0", num(err)));
        } else {
            pairs.push(("mse_p", num(mse_transition(&pop, &est)?)));
        }
    }
    let text = summary(cli.format, &pairs);
    match &args.summary {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{text}"),
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let pop = match &args.population {
        Some(p) => UserPopulation::load(p)?,
        None => gen_population(
            args.pop.n_users,
            args.pop.n_friends,
            args.pop.profile_dist,
            args.pop.freq_dist,
            cli.seed.unwrap_or(0),
        )?,
    };
    let config = args.mix.config(&pop);
    let regimes: &[Regime] = match args.regime {
        RegimeArg::Exact => &[Regime::Exact],
        RegimeArg::Rough => &[Regime::RoughApprox],
        RegimeArg::Both => &[Regime::Exact, Regime::RoughApprox],
    };
    let preds: Vec<MsePrediction> = regimes
        .iter()
        .map(|&r| predict_for_population(&pop, &config, args.mix.rho, r))
        .collect::<lsda_core::Result<_>>()?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&preds)? + "\n",
        Format::Csv => {
            let mut s = String::from(
                "regime,mix_kind,t,alpha,rho,mse_p,alpha_q,alpha_r,round_penalty,mean_delay\n",
            );
            for p in &preds {
                let regime = serde_json::to_value(p.regime)?;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    regime.as_str().unwrap_or_default(),
                    p.mix_kind,
                    config.t,
                    num(config.effective_alpha()),
                    args.mix.rho,
                    p.mse_transition.map(num).unwrap_or_default(),
                    num(p.alpha_q),
                    num(p.alpha_r),
                    num(p.round_penalty),
                    num(p.mean_delay),
                ));
            }
            s
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let log = load_events(&args.log)?;
    let (trace, pop) = build_rounds(&log, args.t, args.min_messages)?;
    emit(cli.out.as_deref(), &trace.to_text())?;
    if let Some(p) = &args.population_out {
        pop.save(p)?;
    }
    eprint!(
        "{}",
        summary(
            cli.format,
            &[
                ("events", log.events.len().to_string()),
                ("rounds", trace.rounds().to_string()),
                ("senders", trace.n_senders().to_string()),
                ("receivers", trace.n_receivers().to_string()),
            ],
        )
    );
    Ok(())
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)
        .with_context(|| format!("loading {}", args.spec.display()))?;
    if let Some(seed) = cli.seed {
        spec.master_seed = seed;
    }
    let report = run_experiment(&spec)?;
    let text = match cli.format {
        Format::Csv => report.to_csv_string()?,
        Format::Json => report.to_json_string()? + "\n",
    };
    emit(cli.out.as_deref(), &text)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Attack(a) => cmd_attack(&cli, a),
        Command::Predict(a) => cmd_predict(&cli, a),
        Command::Ingest(a) => cmd_ingest(&cli, a),
        Command::Experiment(a) => cmd_experiment(&cli, a),
    }
}
