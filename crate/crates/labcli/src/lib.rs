//! Experiment harness: seeded trial batches, empirical error CDFs, the
//! fixed-bit-budget comparison, merge and memory experiments, CSV emission.
//!
//! Substream layout (fixed; part of the output format): the master stream is
//! `RandStream::new(seed)`; trial `i` owns `master.derive(i)`; within a
//! trial, child 0 draws the count N, child 1 drives the first algorithm and
//! child 2 the second in paired runs, child 3 the merge randomness and child
//! 4 the direct-run counter in merge experiments. Trials may execute in
//! parallel; rows are assembled in trial order, so output is byte-identical
//! regardless of scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use approxcount::nycount::{CounterParams, EpochSchedule, NyCount};
use approxcount::oracle;
use approxcount::registry::{lookup, AlgoConfig};
use approxcount::stats::{chi_square_two_sample, ChiSquareReport};
use approxcount::{Error, RandStream, Result};

pub const MERGE_TEST_SIGNIFICANCE: f64 = 1e-3;

/// How the true count is chosen per trial.
#[derive(Clone, Copy, Debug)]
pub enum NSpec {
    Fixed(u64),
    /// Uniform integer in [lo, hi], drawn from the trial's dedicated substream.
    Uniform(u64, u64),
}

impl NSpec {
    fn draw(&self, s: &mut RandStream) -> u64 {
        match *self {
            NSpec::Fixed(n) => n,
            NSpec::Uniform(lo, hi) => s.uniform_u64(lo, hi),
        }
    }
}

fn rel_error(estimate: f64, n: u64) -> f64 {
    if n == 0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (estimate - n as f64).abs() / n as f64
    }
}

/// One row of a trial batch. Every field is reproducible from
/// (master seed, trial index) alone.
#[derive(Clone, Debug)]
pub struct TrialReport {
    pub trial: u64,
    pub algo: &'static str,
    pub params: String,
    pub n: u64,
    pub estimate: f64,
    pub rel_error: f64,
    pub bits_used: u32,
    pub seed_path: String,
    /// Final state record (JSON line), not part of the CSV.
    pub state_json: String,
}

/// Run seeded trials of one algorithm. Trial `i` uses substream `i` of the
/// master stream; rows come back in trial order.
pub fn run_trials(
    algo: &str,
    cfg: &AlgoConfig,
    n_spec: NSpec,
    trials: u64,
    seed: u64,
) -> Result<Vec<TrialReport>> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let entry = lookup(algo)?;
    entry.build(cfg)?; // validate configuration before fanning out
    let master = RandStream::new(seed);
    let params_echo = cfg.to_string();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_stream = master.derive(i);
            let n = n_spec.draw(&mut trial_stream.derive(0));
            let mut algo_stream = trial_stream.derive(1);
            let mut counter = entry.build(cfg)?;
            counter.increment_many(n, &mut algo_stream);
            let estimate = counter.estimate();
            Ok(TrialReport {
                trial: i,
                algo: entry.name(),
                params: params_echo.clone(),
                n,
                estimate,
                rel_error: rel_error(estimate, n),
                bits_used: counter.bits_used(),
                seed_path: format!("{i}/1"),
                state_json: counter.state_json(),
            })
        })
        .collect()
}

/// Per-trial CSV (comma separated, header row, LF endings, plain decimals).
pub fn trials_to_csv(rows: &[TrialReport]) -> String {
    let mut out = String::from("trial,algo,params,n,estimate,rel_error,bits_used,seed_path\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial, r.algo, r.params, r.n, r.estimate, r.rel_error, r.bits_used, r.seed_path
        )
        .expect("string write");
    }
    out
}

/// One JSON state record per line, in trial order.
pub fn trials_to_state_lines(rows: &[TrialReport]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&r.state_json);
        out.push('\n');
    }
    out
}

/// Paired fixed-budget comparison of Morris and the epoch counter.
#[derive(Clone, Debug)]
pub struct Figure1 {
    pub morris_cfg: AlgoConfig,
    pub nycount_cfg: AlgoConfig,
    /// (percentile, morris error, nycount error), percentiles 1..=100.
    pub rows: Vec<(u32, f64, f64)>,
    pub max_morris_err: f64,
    pub max_nycount_err: f64,
    /// Largest CDF gap at the deciles 10, 20, ..., 90.
    pub max_decile_gap: f64,
}

/// Fit both algorithms to the bit budget, then run the paired comparison.
pub fn figure1(
    trials: u64,
    nmin: u64,
    nmax: u64,
    bits: u32,
    delta_exp: u32,
    seed: u64,
) -> Result<Figure1> {
    let morris_cfg = lookup("morris")?.fit_budget(bits, nmax, delta_exp)?;
    let nycount_cfg = lookup("nycount")?.fit_budget(bits, nmax, delta_exp)?;
    figure1_with(trials, nmin, nmax, &morris_cfg, &nycount_cfg, seed)
}

/// Paired comparison at explicit per-algorithm configurations. The two
/// algorithms share each trial's N (drawn once from the trial's substream 0)
/// and own independent substreams 1 and 2.
pub fn figure1_with(
    trials: u64,
    nmin: u64,
    nmax: u64,
    morris_cfg: &AlgoConfig,
    nycount_cfg: &AlgoConfig,
    seed: u64,
) -> Result<Figure1> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let morris = lookup("morris")?;
    let nycount = lookup("nycount")?;
    morris.build(morris_cfg)?;
    nycount.build(nycount_cfg)?;
    let master = RandStream::new(seed);
    let errors: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_stream = master.derive(i);
            let n = NSpec::Uniform(nmin, nmax).draw(&mut trial_stream.derive(0));
            let mut m = morris.build(morris_cfg)?;
            m.increment_many(n, &mut trial_stream.derive(1));
            let mut c = nycount.build(nycount_cfg)?;
            c.increment_many(n, &mut trial_stream.derive(2));
            Ok((rel_error(m.estimate(), n), rel_error(c.estimate(), n)))
        })
        .collect::<Result<_>>()?;

    let mut morris_errs: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let mut nycount_errs: Vec<f64> = errors.iter().map(|e| e.1).collect();
    morris_errs.sort_by(f64::total_cmp);
    nycount_errs.sort_by(f64::total_cmp);

    let percentile_index = |p: u64| -> usize {
        // smallest error e with at least p% of trials <= e
        let k = (p * trials).div_ceil(100);
        (k.max(1) - 1) as usize
    };
    let rows: Vec<(u32, f64, f64)> = (1..=100u64)
        .map(|p| {
            let idx = percentile_index(p);
            (p as u32, morris_errs[idx], nycount_errs[idx])
        })
        .collect();
    let max_decile_gap = (1..=9)
        .map(|d| {
            let idx = percentile_index(d * 10);
            (morris_errs[idx] - nycount_errs[idx]).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(Figure1 {
        morris_cfg: morris_cfg.clone(),
        nycount_cfg: nycount_cfg.clone(),
        max_morris_err: *morris_errs.last().unwrap(),
        max_nycount_err: *nycount_errs.last().unwrap(),
        max_decile_gap,
        rows,
    })
}

pub fn figure1_to_csv(fig: &Figure1) -> String {
    let mut out = String::from("percentile,morris_err,nycount_err\n");
    for (p, m, c) in &fig.rows {
        writeln!(out, "{p},{m},{c}").expect("string write");
    }
    out
}

/// Epoch schedule table as CSV.
pub fn schedule_csv(params: CounterParams, max_x: u32) -> String {
    let mut schedule = EpochSchedule::new(params);
    let mut out = String::from("x,threshold,t,y_start,y_end\n");
    let last = max_x.max(schedule.x0());
    for x in schedule.x0()..=last {
        let e = schedule.entry(x);
        writeln!(
            out,
            "{},{},{},{},{}",
            e.x, e.threshold, e.t, e.y_start, e.y_end
        )
        .expect("string write");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpMode {
    Rational,
    Float,
}

/// Morris register distribution after n increments, as CSV.
pub fn morris_dp_csv(a: f64, n: u64, mode: DpMode) -> Result<String> {
    match mode {
        DpMode::Rational => {
            let a = num_rational_from_f64(a)?;
            let d = oracle::morris_dp_rational(&a, n)?;
            let mut out = String::from("x,num,den\n");
            for (x, m) in &d.entries {
                writeln!(out, "{},{},{}", x, m.numer(), m.denom()).expect("string write");
            }
            Ok(out)
        }
        DpMode::Float => {
            let d = oracle::morris_dp_f64(a, n)?;
            let mut out = String::from("x,mass\n");
            for (x, m) in &d.entries {
                writeln!(out, "{x},{m}").expect("string write");
            }
            Ok(out)
        }
    }
}

fn num_rational_from_f64(a: f64) -> Result<num::BigRational> {
    num::BigRational::from_float(a).ok_or_else(|| Error::Domain(format!("not a finite value: {a}")))
}

/// Epoch-counter state distribution after n increments, as CSV.
pub fn nycount_dp_csv(params: CounterParams, n: u64, mode: DpMode) -> Result<String> {
    match mode {
        DpMode::Rational => {
            let d = oracle::approx_dp_rational(params, n)?;
            let mut out = String::from("x,y,num,den\n");
            for ((x, y), m) in &d.entries {
                writeln!(out, "{},{},{},{}", x, y, m.numer(), m.denom()).expect("string write");
            }
            Ok(out)
        }
        DpMode::Float => {
            let d = oracle::approx_dp_f64(params, n)?;
            let mut out = String::from("x,y,mass\n");
            for ((x, y), m) in &d.entries {
                writeln!(out, "{x},{y},{m}").expect("string write");
            }
            Ok(out)
        }
    }
}

/// Monte-Carlo merge experiment: per trial, run two counters for n1 and n2
/// increments, merge them, and in parallel run one counter for n1 + n2
/// increments; compare the two final epoch-register histograms.
#[derive(Clone, Debug)]
pub struct MergeTestReport {
    pub chi: ChiSquareReport,
    pub merged_hist: BTreeMap<u32, u64>,
    pub direct_hist: BTreeMap<u32, u64>,
    pub trials: u64,
}

pub fn merge_test(
    params: CounterParams,
    n1: u64,
    n2: u64,
    trials: u64,
    seed: u64,
) -> Result<MergeTestReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let master = RandStream::new(seed);
    let per_trial: Vec<(u32, u32)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let trial_stream = master.derive(i);
            let mut a = NyCount::new(params);
            a.increment_many(n1, &mut trial_stream.derive(1));
            let mut b = NyCount::new(params);
            b.increment_many(n2, &mut trial_stream.derive(2));
            let merged = NyCount::merge(a, b, &mut trial_stream.derive(3))?;
            let mut direct = NyCount::new(params);
            direct.increment_many(n1 + n2, &mut trial_stream.derive(4));
            Ok((merged.x(), direct.x()))
        })
        .collect::<Result<_>>()?;
    let mut merged_hist: BTreeMap<u32, u64> = BTreeMap::new();
    let mut direct_hist: BTreeMap<u32, u64> = BTreeMap::new();
    for (mx, dx) in per_trial {
        *merged_hist.entry(mx).or_insert(0) += 1;
        *direct_hist.entry(dx).or_insert(0) += 1;
    }
    let chi = chi_square_two_sample(&merged_hist, &direct_hist, MERGE_TEST_SIGNIFICANCE);
    Ok(MergeTestReport {
        chi,
        merged_hist,
        direct_hist,
        trials,
    })
}

/// Necessity check for the deterministic prefix counter: at the given
/// parameter point, the plain Morris counter's exact underestimation
/// probability must exceed delta.
#[derive(Clone, Debug)]
pub struct AppendixReport {
    pub point: oracle::AppendixPoint,
    pub probability: f64,
    pub delta: f64,
    pub pass: bool,
}

pub fn appendix_check(eps: f64, c_exp: i32, delta: f64) -> Result<AppendixReport> {
    let c = 2f64.powi(c_exp);
    let point = oracle::appendix_params(eps, c, delta)?;
    let probability = oracle::morris_underestimate_prob(point.a, eps, point.n)?;
    let probability = num::ToPrimitive::to_f64(&probability).unwrap_or(0.0);
    Ok(AppendixReport {
        point,
        probability,
        delta,
        pass: point.constraint_ok && probability > delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_n_in_exact_regime_has_zero_error() {
        let cfg = AlgoConfig {
            eps_num: Some(1),
            eps_shift: Some(1),
            delta_exp: Some(10),
            c: Some(4),
            ..AlgoConfig::default()
        };
        let rows = run_trials("nycount", &cfg, NSpec::Fixed(7), 1, 99).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 7);
        assert_eq!(rows[0].estimate, 7.0);
        assert_eq!(rows[0].rel_error, 0.0);
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = AlgoConfig {
            a: Some(0.5),
            ..AlgoConfig::default()
        };
        let a =
            trials_to_csv(&run_trials("morris", &cfg, NSpec::Uniform(10, 1000), 50, 7).unwrap());
        let b =
            trials_to_csv(&run_trials("morris", &cfg, NSpec::Uniform(10, 1000), 50, 7).unwrap());
        assert_eq!(a, b);
        let c =
            trials_to_csv(&run_trials("morris", &cfg, NSpec::Uniform(10, 1000), 50, 8).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn csv_shape() {
        let cfg = AlgoConfig {
            a: Some(0.5),
            ..AlgoConfig::default()
        };
        let csv = trials_to_csv(&run_trials("morris+", &cfg, NSpec::Fixed(5), 3, 1).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "trial,algo,params,n,estimate,rel_error,bits_used,seed_path"
        );
        assert!(lines[1].starts_with("0,morris+,a=0.5,5,5,0,"));
    }

    #[test]
    fn state_lines_are_json_records() {
        let cfg = AlgoConfig {
            eps_num: Some(1),
            eps_shift: Some(1),
            delta_exp: Some(10),
            c: Some(4),
            ..AlgoConfig::default()
        };
        let rows = run_trials("nycount", &cfg, NSpec::Fixed(5), 2, 1).unwrap();
        let lines = trials_to_state_lines(&rows);
        for line in lines.lines() {
            assert!(NyCount::from_json(line).is_ok());
        }
    }

    #[test]
    fn schedule_csv_contains_hand_checked_row() {
        let params = CounterParams::new(1, 1, 10, 4).unwrap();
        let csv = schedule_csv(params, 17);
        assert!(csv.lines().any(|l| l == "17,986,1,329,494"), "{csv}");
    }

    #[test]
    fn merge_test_small_instance_passes() {
        let params = CounterParams::new(1, 1, 6, 1).unwrap();
        let rep = merge_test(params, 50, 50, 4000, 11).unwrap();
        assert!(rep.chi.pass, "{:?}", rep.chi);
    }

    #[test]
    fn appendix_check_example() {
        let rep = appendix_check(0.1, -8, 1e-9).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.point.n, 3);
        assert!((rep.probability - 1.8e-4).abs() / 1.8e-4 < 2e-2);

        // infeasible regime: constraint fails
        let rep = appendix_check(0.1, -8, 1e-8).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn figure1_feasible_budget_shape() {
        let fig = figure1(200, 500_000, 999_999, 18, 10, 5).unwrap();
        assert_eq!(fig.rows.len(), 100);
        assert_eq!(fig.rows[0].0, 1);
        assert_eq!(fig.rows[99].0, 100);
        // percentiles are nondecreasing
        for w in fig.rows.windows(2) {
            assert!(w[1].1 >= w[0].1);
            assert!(w[1].2 >= w[0].2);
        }
        let csv = figure1_to_csv(&fig);
        assert_eq!(csv.lines().count(), 101);
    }

    #[test]
    fn figure1_infeasible_17_bit_budget_for_epoch_counter() {
        let err = figure1(10, 500_000, 999_999, 17, 10, 5).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget { budget: 17, .. }));
    }

    #[test]
    fn merge_is_commutative_in_distribution() {
        let params = CounterParams::new(1, 1, 6, 1).unwrap();
        let ab = merge_test(params, 150, 250, 20_000, 13).unwrap();
        let ba = merge_test(params, 250, 150, 20_000, 14).unwrap();
        let chi = chi_square_two_sample(&ab.merged_hist, &ba.merged_hist, 1e-3);
        assert!(chi.pass, "{chi:?}");
    }

    #[test]
    fn query_accuracy_at_delta_exp_7() {
        // eps ~ 0.1 (3277/2^15), delta_exp = 7, N = 1e5, 2000 trials:
        // empirical P(|est - N| > 0.2 N) <= K * 2^-7 + 3 standard errors.
        let cfg = AlgoConfig {
            eps_num: Some(3277),
            eps_shift: Some(15),
            delta_exp: Some(7),
            ..AlgoConfig::default()
        };
        let trials = 2000u64;
        let rows = run_trials("nycount", &cfg, NSpec::Fixed(100_000), trials, 21).unwrap();
        let eps = 3277.0 / 32768.0;
        let failures = rows.iter().filter(|r| r.rel_error > 2.0 * eps).count();
        let p0 = approxcount::nycount::ACCURACY_K as f64 * 0.5f64.powi(7);
        let bound = p0 + 3.0 * (p0 * (1.0 - p0) / trials as f64).sqrt();
        assert!(
            (failures as f64 / trials as f64) <= bound,
            "{failures} failures over {trials} trials, bound {bound}"
        );
    }
}
