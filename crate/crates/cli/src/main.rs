//! `bufrelay` command-line front end.
//!
//! Every command writes its artifacts into `--out` and finishes by writing
//! `manifest.json`, which lists every file the run produced. Exit codes:
//! 0 on success, 2 on bad input, 3 when a cross-check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bufrelay::bench::{bench_row, BenchRow};
use bufrelay::chain::{
    map_threshold_set, optimal_threshold_search, recurrent_class, OPTIMUM_TIE_TOL,
};
use bufrelay::csv::{fmt_float, CsvTable};
use bufrelay::mdp::{
    extract_threshold, policy_iteration_solve, rd_switch_state, rvia_solve, threshold_of_actions,
    SolverSettings,
};
use bufrelay::sim::{baseline_policy, compare, simulate, Baseline, SimSettings};
use bufrelay::symmetric::{
    symmetric_objective, symmetric_optimal_threshold, symmetric_throughput, SymmetricConfig,
};
use bufrelay::{Error, PolicySpec, RawConfig, SystemConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Default agreement tolerance between solvers.
const AGREEMENT_TOL: f64 = 1e-7;

const EXIT_INPUT: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "bufrelay",
    version,
    about = "Throughput-optimal link selection for a buffered two-hop relay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the optimal threshold with every solver and cross-check them.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate one policy.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// optimal, dopn, adop, top, csi:<sigma> or threshold:<q>.
        #[arg(long, default_value = "optimal")]
        policy: String,
    },
    /// Simulate the optimal threshold against the reference schemes.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Extra policy to include, in the same syntax as `simulate --policy`.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Throughput of every recurrent threshold.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Also tabulate the equal-rate closed form.
        #[arg(long)]
        symmetric: bool,
    },
    /// Time the four threshold solvers over a list of buffer sizes.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated buffer sizes; defaults to `--nr`.
        #[arg(long, value_delimiter = ',')]
        nrs: Vec<usize>,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long)]
    rs: Option<usize>,
    #[arg(long)]
    rr: Option<usize>,
    #[arg(long)]
    nr: Option<usize>,
    #[arg(long)]
    ps: Option<f64>,
    #[arg(long)]
    pr: Option<f64>,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Convergence tolerance of relative value iteration.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Copy)]
struct SimArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    #[arg(long, default_value_t = 5)]
    replications: usize,
}

impl SimArgs {
    fn settings(self) -> SimSettings {
        SimSettings::new(self.horizon, self.seed, self.replications)
    }
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CHECK,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BufferTooSmall { .. }
            | Error::ZeroRate { .. }
            | Error::ProbabilityOutOfRange { .. }
            | Error::DegenerateProbability { .. }
            | Error::QueueOutOfRange { .. }
            | Error::InvalidPolicy(_)
            | Error::InvalidSettings(_)
            | Error::ThresholdNotRecurrent { .. }
            | Error::DegenerateP(_)
            | Error::Parse(_) => EXIT_INPUT,
            _ => EXIT_CHECK,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

impl CommonArgs {
    fn config(&self) -> CmdResult<SystemConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
                RawConfig::parse_kv(&text)?
            }
            None => RawConfig::default(),
        };
        let flags = RawConfig {
            rs: self.rs,
            rr: self.rr,
            nr: self.nr,
            ps: self.ps,
            pr: self.pr,
        };
        Ok(file.overridden_by(flags).resolve()?)
    }

    fn solver_settings(&self, cfg: &SystemConfig) -> CmdResult<SolverSettings> {
        let mut s = SolverSettings::default();
        if let Some(tol) = self.tol {
            s.tol = tol;
        }
        s.validate(cfg)?;
        Ok(s)
    }
}

/// Collects output files and writes them, then the manifest, in one go.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: SystemConfig,
    settings: serde_json::Value,
    outputs: Vec<String>,
    tool_version: &'static str,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        self.add(name, text + "\n");
    }

    fn write(
        self,
        command: &str,
        config: SystemConfig,
        settings: serde_json::Value,
    ) -> CmdResult<()> {
        let io =
            |path: &Path, e: std::io::Error| Failure::input(format!("{}: {e}", path.display()));
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let mut listed = Vec::with_capacity(self.files.len() + 1);
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, contents).map_err(|e| io(&path, e))?;
            listed.push(path.display().to_string());
        }
        let manifest_path = self.dir.join("manifest.json");
        listed.push(manifest_path.display().to_string());
        let manifest = RunManifest {
            command,
            config,
            settings,
            outputs: listed,
            tool_version: env!("CARGO_PKG_VERSION"),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, text + "\n").map_err(|e| io(&manifest_path, e))
    }
}

#[derive(Debug, Serialize)]
struct Deltas {
    rvia_pia: f64,
    rvia_sweep: f64,
}

#[derive(Debug, Serialize)]
struct ClosedForm {
    /// Optimal queue thresholds from the closed form.
    set: Vec<usize>,
    throughput: f64,
    matches_sweep: bool,
}

#[derive(Debug, Serialize)]
struct SolveReport {
    config: SystemConfig,
    theta_rvia: f64,
    theta_pia: f64,
    rbar_sweep: f64,
    q_th_rvia: usize,
    q_th_pia: usize,
    q_th_sweep: usize,
    /// Every queue threshold equivalent to `q_th_sweep`.
    threshold_set: Vec<usize>,
    /// Union of threshold sets of every sweep entry tied with the optimum.
    optimal_set: Vec<usize>,
    /// First queue length where the relay hop is weakly preferred.
    rd_switch_state: Option<usize>,
    closed_form: Option<ClosedForm>,
    deltas: Deltas,
    agreement_tol: f64,
    refreshes: usize,
    agree: bool,
}

fn solve_report(
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> CmdResult<(SolveReport, String, String)> {
    let rvia = rvia_solve(cfg, settings)?;
    let pia = policy_iteration_solve(cfg)?;
    let search = optimal_threshold_search(cfg)?;
    let structure = recurrent_class(cfg)?;
    let q_th_rvia = extract_threshold(&rvia, cfg)?;
    let threshold_set = map_threshold_set(search.q_th, &structure)?;
    let mut optimal_set = Vec::new();
    for (q, v) in &search.trace {
        if *v >= search.rbar - OPTIMUM_TIE_TOL {
            optimal_set.extend(map_threshold_set(*q, &structure)?);
        }
    }
    optimal_set.sort_unstable();
    optimal_set.dedup();
    let closed_form = match SymmetricConfig::from_config(cfg) {
        Some(sc) => {
            let sc = sc?;
            let set = symmetric_optimal_threshold(&sc);
            let throughput = symmetric_throughput(&sc, set[0] / sc.r)?;
            Some(ClosedForm {
                matches_sweep: set == optimal_set,
                set,
                throughput,
            })
        }
        None => None,
    };
    let deltas = Deltas {
        rvia_pia: (rvia.theta - pia.theta).abs(),
        rvia_sweep: (rvia.theta - search.rbar).abs(),
    };
    let agree = deltas.rvia_pia <= AGREEMENT_TOL
        && deltas.rvia_sweep <= AGREEMENT_TOL
        && optimal_set.contains(&q_th_rvia)
        && closed_form.as_ref().is_none_or(|c| c.matches_sweep);
    let report = SolveReport {
        config: *cfg,
        theta_rvia: rvia.theta,
        theta_pia: pia.theta,
        rbar_sweep: search.rbar,
        q_th_rvia,
        q_th_pia: threshold_of_actions(&pia.actions)?,
        q_th_sweep: search.q_th,
        threshold_set,
        optimal_set,
        rd_switch_state: rd_switch_state(&rvia, cfg),
        closed_form,
        deltas,
        agreement_tol: AGREEMENT_TOL,
        refreshes: search.refreshes,
        agree,
    };
    Ok((report, rvia.to_csv(), search.trace_csv()))
}

fn parse_policy(
    text: &str,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> CmdResult<PolicySpec> {
    let policy = match text {
        "optimal" => {
            let (report, _, _) = solve_report(cfg, settings)?;
            if !report.agree {
                return Err(Failure::check("solvers disagree on the optimal threshold"));
            }
            PolicySpec::Threshold(report.q_th_sweep)
        }
        "dopn" => baseline_policy(Baseline::Dopn, cfg),
        "adop" => baseline_policy(Baseline::Adop, cfg),
        "top" => baseline_policy(Baseline::Top, cfg),
        other => {
            let bad = || Failure::input(format!("unknown policy {other:?}"));
            match other.split_once(':') {
                Some(("csi", s)) => PolicySpec::CsiOnly(s.parse().map_err(|_| bad())?),
                Some(("threshold", q)) => PolicySpec::Threshold(q.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
    };
    policy.validate(cfg)?;
    Ok(policy)
}

fn cmd_solve(common: &CommonArgs) -> CmdResult<()> {
    let cfg = common.config()?;
    let settings = common.solver_settings(&cfg)?;
    let (report, value_csv, trace_csv) = solve_report(&cfg, &settings)?;
    let agree = report.agree;
    let mut out = Outputs::new(&common.out);
    out.add_json("solve.json", &report);
    out.add("value.csv", value_csv);
    out.add("trace.csv", trace_csv);
    out.write(
        "solve",
        cfg,
        serde_json::json!({ "solver": settings, "agreement_tol": AGREEMENT_TOL }),
    )?;
    println!(
        "theta {} q_th {} threshold set {:?}",
        fmt_float(report.theta_rvia),
        report.q_th_sweep,
        report.threshold_set
    );
    if agree {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "solvers disagree: |rvia - pia| {:.3e}, |rvia - sweep| {:.3e}",
            report.deltas.rvia_pia, report.deltas.rvia_sweep
        )))
    }
}

fn cmd_simulate(common: &CommonArgs, sim: SimArgs, policy: &str) -> CmdResult<()> {
    let cfg = common.config()?;
    let solver = common.solver_settings(&cfg)?;
    let settings = sim.settings();
    settings.validate()?;
    let policy = parse_policy(policy, &cfg, &solver)?;
    let result = simulate(&cfg, &policy, &settings)?;
    let mut out = Outputs::new(&common.out);
    out.add("simulate.json", result.to_json() + "\n");
    out.add("replications.csv", result.to_csv());
    out.add("histogram.csv", result.histogram_csv());
    out.write(
        "simulate",
        cfg,
        serde_json::json!({ "sim": settings, "policy": policy.to_string() }),
    )?;
    println!(
        "{} throughput {} (se {})",
        result.policy,
        fmt_float(result.mean_throughput),
        fmt_float(result.std_error)
    );
    Ok(())
}

fn cmd_compare(common: &CommonArgs, sim: SimArgs, extra: Option<&str>) -> CmdResult<()> {
    let cfg = common.config()?;
    let solver = common.solver_settings(&cfg)?;
    let settings = sim.settings();
    settings.validate()?;
    let mut policies = vec![(
        "optimal".to_string(),
        parse_policy("optimal", &cfg, &solver)?,
    )];
    for name in ["dopn", "adop", "top"] {
        policies.push((name.to_string(), parse_policy(name, &cfg, &solver)?));
    }
    if let Some(text) = extra {
        policies.push((text.to_string(), parse_policy(text, &cfg, &solver)?));
    }
    let comparison = compare(&cfg, &policies, &settings)?;
    let mut out = Outputs::new(&common.out);
    out.add("compare.csv", comparison.to_csv());
    out.add_json("compare.json", &comparison);
    out.write("compare", cfg, serde_json::json!({ "sim": settings }))?;
    for row in &comparison.rows {
        println!("{} {}", row.name, fmt_float(row.mean_throughput));
    }
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, symmetric: bool) -> CmdResult<()> {
    let cfg = common.config()?;
    let search = optimal_threshold_search(&cfg)?;
    let mut out = Outputs::new(&common.out);
    out.add("trace.csv", search.trace_csv());
    if symmetric {
        let sc = SymmetricConfig::from_config(&cfg).ok_or_else(|| {
            Failure::input("--symmetric needs rs = rr, ps = pr and nr a multiple of rs")
        })??;
        let mut t = CsvTable::new(&["m", "q_th", "objective", "throughput"]);
        for m in 0..=sc.n {
            t.push([
                m.to_string(),
                (m * sc.r).to_string(),
                fmt_float(symmetric_objective(&sc, m)?),
                fmt_float(symmetric_throughput(&sc, m)?),
            ]);
        }
        out.add("symmetric.csv", t.finish());
    }
    out.write("sweep", cfg, serde_json::json!({ "symmetric": symmetric }))?;
    println!("q_th {} throughput {}", search.q_th, fmt_float(search.rbar));
    Ok(())
}

fn cmd_bench(common: &CommonArgs, nrs: &[usize]) -> CmdResult<()> {
    let base = CommonArgs {
        nr: common.nr.or(nrs.first().copied()),
        config: common.config.clone(),
        out: common.out.clone(),
        ..*common
    };
    let cfg = base.config()?;
    let settings = base.solver_settings(&cfg)?;
    let list = if nrs.is_empty() {
        vec![cfg.nr]
    } else {
        nrs.to_vec()
    };
    let mut rows = Vec::with_capacity(list.len());
    for nr in list {
        let c = SystemConfig { nr, ..cfg }.validate()?;
        rows.push(bench_row(&c, &settings)?);
    }
    let mut out = Outputs::new(&common.out);
    out.add("bench.csv", BenchRow::to_csv(&rows));
    out.write("bench", cfg, serde_json::json!({ "solver": settings }))?;
    for r in &rows {
        println!("nr {} states {} ordered {}", r.nr, r.states, r.ordered());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { common } => cmd_solve(common),
        Command::Simulate {
            common,
            sim,
            policy,
        } => cmd_simulate(common, *sim, policy),
        Command::Compare {
            common,
            sim,
            policy,
        } => cmd_compare(common, *sim, policy.as_deref()),
        Command::Sweep { common, symmetric } => cmd_sweep(common, *symmetric),
        Command::Bench { common, nrs } => cmd_bench(common, nrs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
