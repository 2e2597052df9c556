//! Command-line harness for the approximate counters.
//!
//! Exit codes: 0 on success, 1 on an experiment/assertion failure or any
//! runtime error, 2 on usage errors (from the argument parser).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use approxcount::nycount::CounterParams;
use approxcount::registry::{lookup, AlgoConfig};
use labcli::{
    appendix_check, figure1, figure1_to_csv, merge_test, morris_dp_csv, nycount_dp_csv, run_trials,
    schedule_csv, trials_to_csv, trials_to_state_lines, DpMode, NSpec,
};

#[derive(Parser)]
#[command(name = "labcli", about = "Approximate-counter experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Rational,
    Float,
}

impl From<ModeArg> for DpMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rational => DpMode::Rational,
            ModeArg::Float => DpMode::Float,
        }
    }
}

/// Counter configuration flags shared by several subcommands.
#[derive(Args, Clone, Debug)]
struct CounterArgs {
    /// Morris base offset a (direct).
    #[arg(long)]
    a: Option<f64>,
    /// Morris tolerance eps (use with --delta or --delta-exp).
    #[arg(long)]
    eps: Option<f64>,
    /// Morris failure probability delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Epoch counter: dyadic eps numerator m (eps = m / 2^s).
    #[arg(long)]
    eps_num: Option<u32>,
    /// Epoch counter: dyadic eps shift s.
    #[arg(long)]
    eps_shift: Option<u32>,
    /// Failure exponent (delta = 2^-delta_exp).
    #[arg(long)]
    delta_exp: Option<u32>,
    /// Epoch counter schedule constant C.
    #[arg(long)]
    c: Option<u32>,
}

impl CounterArgs {
    fn to_config(&self) -> AlgoConfig {
        AlgoConfig {
            a: self.a,
            eps: self.eps,
            delta: self.delta,
            eps_num: self.eps_num,
            eps_shift: self.eps_shift,
            delta_exp: self.delta_exp,
            c: self.c,
        }
    }

    fn nycount_params(&self) -> anyhow::Result<CounterParams> {
        Ok(self.to_config().nycount_params()?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run seeded trials of one algorithm and emit a per-trial CSV.
    Simulate {
        /// Algorithm name: morris, morris+ or nycount.
        #[arg(long)]
        algo: String,
        #[command(flatten)]
        counter: CounterArgs,
        /// Fixed count per trial.
        #[arg(long, conflicts_with_all = ["nmin", "nmax"])]
        n: Option<u64>,
        /// Uniform count range lower bound (with --nmax).
        #[arg(long, requires = "nmax")]
        nmin: Option<u64>,
        /// Uniform count range upper bound (with --nmin).
        #[arg(long, requires = "nmin")]
        nmax: Option<u64>,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit final state records (one JSON line per trial) instead of CSV.
        #[arg(long, default_value_t = false)]
        dump_state: bool,
    },
    /// Paired fixed-budget error-CDF comparison of morris and nycount.
    Figure1 {
        #[arg(long, default_value_t = 5000)]
        trials: u64,
        #[arg(long, default_value_t = 500_000)]
        nmin: u64,
        #[arg(long, default_value_t = 999_999)]
        nmax: u64,
        /// Bit budget both algorithms must fit.
        #[arg(long, default_value_t = 17)]
        bits: u32,
        #[arg(long, default_value_t = 10)]
        delta_exp: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the deterministic epoch schedule as CSV.
    Schedule {
        #[command(flatten)]
        counter: CounterArgs,
        /// Last epoch register value to include.
        #[arg(long)]
        max_x: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact state distributions from the dynamic-programming oracle.
    Dp {
        /// Algorithm name: morris or nycount.
        #[arg(long)]
        algo: String,
        #[command(flatten)]
        counter: CounterArgs,
        /// Number of increments.
        #[arg(long)]
        n: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Rational)]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo merge experiment: merged vs direct-run counters.
    MergeTest {
        #[command(flatten)]
        counter: CounterArgs,
        #[arg(long)]
        n1: u64,
        #[arg(long)]
        n2: u64,
        #[arg(long, default_value_t = 50_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact check that the plain Morris counter under-estimates too often
    /// below the deterministic-prefix threshold.
    AppendixCheck {
        #[arg(long)]
        eps: f64,
        /// Constant c as a power of two: c = 2^c_exp.
        #[arg(long, allow_hyphen_values = true)]
        c_exp: i32,
        #[arg(long)]
        delta: f64,
    },
    /// Derive algorithm parameters fitting a worst-case bit budget.
    FitBudget {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        nmax: u64,
        #[arg(long, default_value_t = 10)]
        delta_exp: u32,
    },
}

fn emit(text: &str, out: &Option<PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cmd: Cmd) -> anyhow::Result<bool> {
    match cmd {
        Cmd::Simulate {
            algo,
            counter,
            n,
            nmin,
            nmax,
            trials,
            seed,
            out,
            dump_state,
        } => {
            let n_spec = match (n, nmin, nmax) {
                (Some(n), _, _) => NSpec::Fixed(n),
                (None, Some(lo), Some(hi)) => NSpec::Uniform(lo, hi),
                _ => anyhow::bail!("specify --n or both --nmin and --nmax"),
            };
            let rows = run_trials(&algo, &counter.to_config(), n_spec, trials, seed)?;
            let text = if dump_state {
                trials_to_state_lines(&rows)
            } else {
                trials_to_csv(&rows)
            };
            emit(&text, &out)?;
            Ok(true)
        }
        Cmd::Figure1 {
            trials,
            nmin,
            nmax,
            bits,
            delta_exp,
            seed,
            out,
        } => {
            let fig = figure1(trials, nmin, nmax, bits, delta_exp, seed)?;
            eprintln!("morris: {}", fig.morris_cfg);
            eprintln!("nycount: {}", fig.nycount_cfg);
            eprintln!(
                "max relative error: morris {} nycount {}; max decile gap {}",
                fig.max_morris_err, fig.max_nycount_err, fig.max_decile_gap
            );
            emit(&figure1_to_csv(&fig), &out)?;
            Ok(true)
        }
        Cmd::Schedule {
            counter,
            max_x,
            out,
        } => {
            let params = counter.nycount_params()?;
            emit(&schedule_csv(params, max_x), &out)?;
            Ok(true)
        }
        Cmd::Dp {
            algo,
            counter,
            n,
            mode,
            out,
        } => {
            let text = match algo.as_str() {
                "morris" => {
                    let params = counter.to_config().morris_params()?;
                    morris_dp_csv(params.a(), n, mode.into())?
                }
                "nycount" => nycount_dp_csv(counter.nycount_params()?, n, mode.into())?,
                other => anyhow::bail!("dp supports morris and nycount, got {other:?}"),
            };
            emit(&text, &out)?;
            Ok(true)
        }
        Cmd::MergeTest {
            counter,
            n1,
            n2,
            trials,
            seed,
        } => {
            let params = counter.nycount_params()?;
            let rep = merge_test(params, n1, n2, trials, seed)?;
            println!(
                "merged X histogram: {:?}",
                rep.merged_hist.iter().collect::<Vec<_>>()
            );
            println!(
                "direct X histogram: {:?}",
                rep.direct_hist.iter().collect::<Vec<_>>()
            );
            println!(
                "chi-square statistic {} (dof {}), p-value {}",
                rep.chi.statistic, rep.chi.dof, rep.chi.p_value
            );
            println!("result: {}", if rep.chi.pass { "PASS" } else { "FAIL" });
            Ok(rep.chi.pass)
        }
        Cmd::AppendixCheck { eps, c_exp, delta } => {
            let rep = appendix_check(eps, c_exp, delta)?;
            println!("a = {:e}", rep.point.a);
            println!("N = {}", rep.point.n);
            println!(
                "constraint_ok = {} (delta bound {:e})",
                rep.point.constraint_ok, rep.point.delta_bound
            );
            println!(
                "underestimate probability = {:e} vs delta = {:e}",
                rep.probability, rep.delta
            );
            println!("result: {}", if rep.pass { "PASS" } else { "FAIL" });
            Ok(rep.pass)
        }
        Cmd::FitBudget {
            algo,
            bits,
            nmax,
            delta_exp,
        } => {
            let entry = lookup(&algo)?;
            println!("rule: {}", entry.fit_rule());
            let cfg = entry.fit_budget(bits, nmax, delta_exp)?;
            println!("algo = {algo}");
            println!("bits = {bits}");
            println!("nmax = {nmax}");
            println!("delta_exp = {delta_exp}");
            println!("params: {cfg}");
            if algo == "nycount" {
                let params = cfg.nycount_params()?;
                let bound = approxcount::nycount::schedule_bound(params, nmax);
                println!(
                    "schedule bound: x_hat={} x_bar={} max_y_end={} max_t={} bits={}",
                    bound.x_hat, bound.x_bar, bound.max_y_end, bound.max_t, bound.bits
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
