//! `collusion-lab`: train pricing agents, evaluate the price drop rule,
//! sweep cost estimates and run the equilibrium verifier.

mod config;
mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use collusion_core::error::Error as CoreError;
use collusion_core::harness::{self, RunRecord, Simulation};
use collusion_core::mechanism::Variant;
use collusion_core::verifier::{self, Certificate};
use collusion_core::{equilibrium, market};

use crate::config::LabConfig;
use crate::output::Session;

#[derive(Parser)]
#[command(
    name = "collusion-lab",
    version,
    about = "Algorithmic collusion and the two-stage price drop rule"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration; omitted tables and keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. COLLUSION_LAB_OUT takes precedence when set.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Number of simulations.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true)]
    base_seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Symmetric platform cost estimate for the simplified rule.
    #[arg(long, global = true)]
    cost_estimate: Option<f64>,
    /// Mechanism variant: simplified-ai or platform-full.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the static Nash equilibria of both markets.
    Nash,
    /// Train agents and save them under <out>/agents.
    Train {
        #[arg(long, value_enum, default_value_t = PhaseArg::All)]
        phase: PhaseArg,
    },
    /// Train, evaluate and summarize in one go.
    Simulate,
    /// Evaluate the simplified rule across cost estimates.
    Sweep,
    /// Brute-force the deviation-proofness claims.
    Verify {
        #[arg(long, value_enum, default_value_t = Setting::Both)]
        setting: Setting,
    },
    /// Average price series and summary from a finished run in <out>.
    Report,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Setting {
    Platform,
    Direct,
    Both,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
    NotConverged(usize),
    ResourceLimit(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Config(_) => 2,
            Failure::NotConverged(_) => 3,
            Failure::ResourceLimit(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Run(m) => f.write_str(m),
            Failure::NotConverged(k) => write!(
                f,
                "{k} simulation(s) hit the iteration cap without converging"
            ),
            Failure::ResourceLimit(m) => write!(f, "resource limit: {m}"),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ResourceLimit(m) => Failure::ResourceLimit(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            std::process::ExitCode::from(f.code())
        }
    }
}

fn effective_config(g: &Global) -> Result<LabConfig, Failure> {
    let mut config = LabConfig::load(g.config.as_deref()).map_err(Failure::Config)?;
    let exp = &mut config.experiment;
    if let Some(k) = g.seeds {
        exp.n_simulations = k;
    }
    if let Some(s) = g.base_seed {
        exp.base_seed = s;
    }
    if let Some(v) = g.variant {
        exp.mechanism.variant = v;
    }
    if let Some(c) = g.cost_estimate {
        exp.mechanism.cost_estimate = Some(vec![c; exp.market.n_sellers()]);
    }
    config.validate().map_err(Failure::Config)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(t) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(format!("--threads: {e}")))?;
    }
    let config = effective_config(g)?;
    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            return Ok(());
        }
        Command::Nash => return nash(&config),
        _ => {}
    }
    let out = std::env::var_os("COLLUSION_LAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| g.out.clone());
    let mut session = Session::new(out)?;
    let result = match cli.command {
        Command::Train { phase } => train(&mut session, &config, phase),
        Command::Simulate => simulate(&mut session, &config),
        Command::Sweep => sweep(&mut session, &config, g.cost_estimate),
        Command::Verify { setting } => verify(&mut session, &config, setting),
        Command::Report => report(&mut session, &config),
        Command::Nash | Command::Config => unreachable!(),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(f) => f.to_string(),
    };
    let command = std::env::args().collect::<Vec<_>>().join(" ");
    session.write_manifest(command, status, &config)?;
    result
}

fn nash(config: &LabConfig) -> Result<(), Failure> {
    let sol = equilibrium::nash_prices(&config.experiment.market)?;
    let grid = config.experiment.grid.build()?;
    println!("logit market");
    for (i, p) in sol.prices.iter().enumerate() {
        let k = grid.nearest_index(*p);
        let profit = market::profit(&sol.prices, &config.experiment.market, i)?;
        println!(
            "  seller {}: price {p:.6}  profit {profit:.6}  nearest grid point {:.4} (index {k})",
            i + 1,
            grid.price(k)
        );
    }
    println!("  residual {:.2e}", sol.max_residual());
    let q = equilibrium::cournot_nash_quantities(&config.cournot)?;
    println!("direct market");
    for (i, qi) in q.iter().enumerate() {
        println!(
            "  seller {}: quantity {qi:.6}  profit {:.6}",
            i + 1,
            market::cournot_profit(&q, &config.cournot, i)?
        );
    }
    println!("  price {:.6}", market::cournot_price(&q, &config.cournot));
    Ok(())
}

fn not_converged(records: &[RunRecord]) -> Result<(), Failure> {
    match records.iter().filter(|r| !r.converged).count() {
        0 => Ok(()),
        k => Err(Failure::NotConverged(k)),
    }
}

fn write_records(
    session: &mut Session,
    config: &LabConfig,
    records: &[RunRecord],
) -> Result<(), Failure> {
    let n = config.experiment.market.n_sellers();
    output::write_trajectories(&session.path(output::TRAJECTORIES), records, n)?;
    session.write_json(output::RUNS, records)?;
    let nash = harness::nash_reference(&config.experiment)?;
    let summary = harness::aggregate(records, &nash)?;
    session.write_json(output::SUMMARY, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &harness::Summary) {
    println!(
        "{} runs: {} converged, {} cycles, {} used",
        s.n_total, s.n_converged, s.n_cycles, s.n_used
    );
    if s.n_used > 0 {
        println!("  pre  {:?}  markup {:?}", s.avg_pre, s.markup_pre);
        println!("  post {:?}  markup {:?}", s.avg_post, s.markup_post);
        println!("  improvement {:?} %", s.improvement_pct);
    }
}

fn save_agents(session: &mut Session, dir: &str, sims: &[Simulation]) -> Result<(), Failure> {
    std::fs::create_dir_all(session.dir.join(dir))?;
    for s in sims {
        session.write_json(&format!("{dir}/{}", output::agent_file(s.sim_id)), s)?;
    }
    Ok(())
}

fn load_agents(session: &Session, n: usize) -> Result<Vec<Simulation>, Failure> {
    (0..n)
        .map(|k| {
            let path = session.dir.join(output::AGENTS).join(output::agent_file(k));
            let sim: Simulation = output::read_json(&path)
                .map_err(|e| Failure::Run(format!("loading agents: {e}")))?;
            if sim.sim_id != k {
                return Err(Failure::Run(format!(
                    "{} holds simulation {}",
                    path.display(),
                    sim.sim_id
                )));
            }
            Ok(sim)
        })
        .collect()
}

fn train(session: &mut Session, config: &LabConfig, phase: PhaseArg) -> Result<(), Failure> {
    let exp = &config.experiment;
    let mut sims = match phase {
        PhaseArg::Two => load_agents(session, exp.n_simulations)?,
        PhaseArg::One | PhaseArg::All => {
            let sims = session.timed("phase1", || harness::phase1_all(exp))?;
            save_agents(session, output::AGENTS, &sims)?;
            output::write_phase1(&session.path(output::PHASE1), &sims, exp.market.n_sellers())?;
            sims
        }
    };
    if let PhaseArg::One = phase {
        let k = sims.iter().filter(|s| !s.report.converged).count();
        println!(
            "{} simulations trained, {} converged",
            sims.len(),
            sims.len() - k
        );
        return if k == 0 {
            Ok(())
        } else {
            Err(Failure::NotConverged(k))
        };
    }
    let records = session.timed("phase2", || harness::finish_all(&mut sims, exp))?;
    save_agents(session, &format!("{}/phase2", output::AGENTS), &sims)?;
    write_records(session, config, &records)?;
    not_converged(&records)
}

fn simulate(session: &mut Session, config: &LabConfig) -> Result<(), Failure> {
    let records = session.timed("simulate", || harness::run_simulations(&config.experiment))?;
    write_records(session, config, &records)?;
    not_converged(&records)
}

fn sweep(session: &mut Session, config: &LabConfig, single: Option<f64>) -> Result<(), Failure> {
    let estimates = single.map_or_else(|| config.sweep.estimates.clone(), |c| vec![c]);
    let rows = session.timed("sweep", || {
        harness::cost_sweep(&config.experiment, &estimates)
    })?;
    output::write_sweep(&session.path(output::SWEEP_CSV), &rows)?;
    session.write_json(output::SWEEP_JSON, &rows)?;
    println!("cost  sims  no-cycle  markup   markup-2spdr  improvement %");
    for r in &rows {
        println!(
            "{:<5} {:<5} {:<9} {:<8.4} {:<13.4} {:.2}",
            r.cost, r.n_sims, r.n_no_cycle, r.markup, r.markup_2spdr, r.improvement_pct
        );
    }
    Ok(())
}

fn describe(name: &str, cert: &Certificate) {
    let verdict = if cert.is_certified() {
        "certified"
    } else {
        "NOT certified"
    };
    println!(
        "{name}: {verdict}; {} strategies, {} refuted, {} survivor prescription(s), max replay error {:.1e}",
        cert.family.strategies_visited,
        cert.strategies_refuted,
        cert.survivors.len(),
        cert.max_replay_error
    );
    for s in &cert.survivors {
        println!(
            "  survivor {:?}: {}/{} members",
            s.prescription, s.surviving_members, s.members
        );
    }
}

fn verify(session: &mut Session, config: &LabConfig, setting: Setting) -> Result<(), Failure> {
    let family = config.verify.family();
    if setting != Setting::Direct {
        let grid = config.price_grid().map_err(Failure::Config)?;
        let cert = session.timed("verify-platform", || {
            verifier::verify_platform_theorem(&grid, &config.experiment.market, &family)
        })?;
        session.write_json("certificate_platform.json", &cert)?;
        describe("platform", &cert);
    }
    if setting != Setting::Platform {
        let grid = config.quantity_grid().map_err(Failure::Config)?;
        let cert = session.timed("verify-direct", || {
            verifier::verify_direct_theorem(&grid, &config.cournot, &family)
        })?;
        session.write_json("certificate_direct.json", &cert)?;
        describe("direct", &cert);
    }
    Ok(())
}

fn report(session: &mut Session, config: &LabConfig) -> Result<(), Failure> {
    let records: Vec<RunRecord> =
        output::read_json(&session.dir.join(output::RUNS)).map_err(Failure::Run)?;
    let nash = harness::nash_reference(&config.experiment)?;
    let summary = harness::aggregate(&records, &nash)?;
    let n = nash.len();
    output::write_series(
        &session.path(output::SERIES),
        &harness::average_series(&records),
        n,
    )?;
    session.write_json(output::SUMMARY, &summary)?;
    print_summary(&summary);
    Ok(())
}
