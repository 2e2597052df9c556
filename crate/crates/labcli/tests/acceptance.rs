//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see the lines for passing
//! tests; failing tests always show their output).

use std::collections::BTreeMap;

use num::rational::BigRational;
use num::{FromPrimitive, One};
use rayon::prelude::*;

use approxcount::nycount::{schedule_bound, CounterParams, NyCount, DEFAULT_C};
use approxcount::oracle;
use approxcount::registry::{lookup, AlgoConfig};
use approxcount::stats::chi_square_fit;
use approxcount::RandStream;
use labcli::{figure1_with, merge_test, run_trials, NSpec};

const SEED: u64 = 42;

fn rat(x: f64) -> BigRational {
    BigRational::from_f64(x).unwrap()
}

/// Criterion 1: the Morris estimator is exactly unbiased with variance
/// a*N*(N-1)/2 under the exact-rational DP, for a in {1, 1/2, 1/4} and
/// N in 1..=30. Tolerance: exact.
#[test]
fn criterion_1_estimator_moments_exact() {
    for a_f in [1.0, 0.5, 0.25] {
        let a = rat(a_f);
        for n in 1..=30u64 {
            let dist = oracle::morris_dp_rational(&a, n).unwrap();
            assert!(dist.total_mass().is_one());
            let (mean, var) = oracle::estimator_moments(&a, &dist);
            let n_r = BigRational::from_integer(n.into());
            let want_var = &a * &n_r * (&n_r - BigRational::from_integer(1.into()))
                / BigRational::from_integer(2.into());
            assert_eq!(mean, n_r, "mean off at a={a_f}, n={n}");
            assert_eq!(var, want_var, "variance off at a={a_f}, n={n}");
        }
    }
    println!(
        "criterion 1 (exact estimator mean/variance, a in {{1,1/2,1/4}}, N<=30): PASS — exact"
    );
}

/// Criterion 2: Morris+ at eps=0.2, delta=0.1 (a ~ 2.171e-3), N=1e5, 4000
/// trials: empirical P(|est - N| > 0.4 N) <= 0.2 + 3 binomial SEs ~ 0.219.
#[test]
fn criterion_2_morris_plus_accuracy() {
    let cfg = AlgoConfig {
        eps: Some(0.2),
        delta: Some(0.1),
        ..AlgoConfig::default()
    };
    let trials = 4000u64;
    let rows = run_trials("morris+", &cfg, NSpec::Fixed(100_000), trials, SEED).unwrap();
    let failures = rows.iter().filter(|r| r.rel_error > 0.4).count();
    let rate = failures as f64 / trials as f64;
    let bound = 0.2 + 3.0 * (0.2f64 * 0.8 / trials as f64).sqrt();
    assert!(
        rate <= bound,
        "criterion 2: FAIL — failure rate {rate} > bound {bound}"
    );
    println!(
        "criterion 2 (Morris+ tail, eps=0.2 delta=0.1 N=1e5): PASS — \
         failure rate {rate} <= {bound:.4}"
    );
}

/// Criterion 3: epoch-counter accuracy over the grid
/// (eps, delta_exp, N) in {~0.1, 1/4} x {6, 10} x {1e4, 1e5}, 2000 trials:
/// empirical P(|est - N| > 2 eps N) <= K * 2^-delta_exp + 3 SEs, with K
/// fixed by the DP calibration (K = 1).
#[test]
fn criterion_3_epoch_counter_accuracy_grid() {
    let k = approxcount::nycount::ACCURACY_K as f64;
    let trials = 2000u64;
    let mut summary = Vec::new();
    for (eps_num, eps_shift) in [(3277u32, 15u32), (1, 2)] {
        for delta_exp in [6u32, 10] {
            for n in [10_000u64, 100_000] {
                let cfg = AlgoConfig {
                    eps_num: Some(eps_num),
                    eps_shift: Some(eps_shift),
                    delta_exp: Some(delta_exp),
                    c: Some(DEFAULT_C),
                    ..AlgoConfig::default()
                };
                let eps = eps_num as f64 / (1u64 << eps_shift) as f64;
                let rows = run_trials("nycount", &cfg, NSpec::Fixed(n), trials, SEED).unwrap();
                let failures = rows.iter().filter(|r| r.rel_error > 2.0 * eps).count();
                let rate = failures as f64 / trials as f64;
                let p0 = k * 0.5f64.powi(delta_exp as i32);
                let bound = p0 + 3.0 * (p0 * (1.0 - p0) / trials as f64).sqrt();
                assert!(
                    rate <= bound,
                    "criterion 3: FAIL — eps={eps}, delta_exp={delta_exp}, n={n}: \
                     rate {rate} > bound {bound}"
                );
                summary.push(format!("({eps:.2},{delta_exp},{n}):{failures}"));
            }
        }
    }
    println!(
        "criterion 3 (epoch-counter accuracy grid, K=1): PASS — failures {}",
        summary.join(" ")
    );
}

/// Criterion 4: skip-ahead batching is distributionally exact. Histograms
/// over 1e5 trials match the DP oracle by chi-square at significance 1e-3
/// for Morris (a=1/2, n=30) and the epoch counter (eps=1/2, delta_exp=6,
/// n=400).
#[test]
fn criterion_4_skip_ahead_exactness() {
    let trials = 100_000u64;
    let master = RandStream::new(SEED);

    // Morris(1/2), 30 increments
    let params = approxcount::morris::MorrisParams::new(0.5).unwrap();
    let hists: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = master.derive(i).derive(1);
            let mut m = approxcount::morris::Morris::new(params);
            m.increment_many(30, &mut s);
            m.x()
        })
        .collect();
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for x in hists {
        *hist.entry(x).or_insert(0) += 1;
    }
    let dist = oracle::morris_dp_rational(&rat(0.5), 30).unwrap();
    let morris_chi = chi_square_fit(&hist, &oracle::to_f64_entries(&dist), trials, 1e-3);
    assert!(
        morris_chi.pass,
        "criterion 4: FAIL — morris chi-square {morris_chi:?}"
    );

    // epoch counter (1/2, 6, default C), 400 increments, joint (X, Y) law
    let params = CounterParams::new(1, 1, 6, DEFAULT_C).unwrap();
    let states: Vec<(u32, u64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = master.derive(i).derive(2);
            let mut c = NyCount::new(params);
            c.increment_many(400, &mut s);
            (c.x(), c.y())
        })
        .collect();
    let mut hist: BTreeMap<(u32, u64), u64> = BTreeMap::new();
    for st in states {
        *hist.entry(st).or_insert(0) += 1;
    }
    let dist = oracle::approx_dp_f64(params, 400).unwrap();
    let expected: Vec<((u32, u64), f64)> = dist.entries.clone();
    let ny_chi = chi_square_fit(&hist, &expected, trials, 1e-3);
    assert!(
        ny_chi.pass,
        "criterion 4: FAIL — epoch-counter chi-square {ny_chi:?}"
    );

    println!(
        "criterion 4 (skip-ahead exactness): PASS — morris p={:.4}, epoch counter p={:.4}",
        morris_chi.p_value, ny_chi.p_value
    );
}

/// Criterion 5: merging is lossless. Exact: merge_dp(3,3) equals the direct
/// 6-increment DP in rational arithmetic. Monte-Carlo: merged (200, 200)
/// counters match a direct 400-increment counter on the final epoch register
/// by chi-square at 1e-3 over 5e4 trials.
#[test]
fn criterion_5_merge_exactness() {
    let params = CounterParams::new(1, 1, 6, DEFAULT_C).unwrap();

    let merged = oracle::merge_dp(params, 3, 3).unwrap();
    let direct = oracle::approx_dp_rational(params, 6).unwrap();
    assert_eq!(
        merged.entries, direct.entries,
        "criterion 5: FAIL — exact merge law differs from the direct DP"
    );

    let rep = merge_test(params, 200, 200, 50_000, SEED).unwrap();
    assert!(
        rep.chi.pass,
        "criterion 5: FAIL — Monte-Carlo merge chi-square {:?}",
        rep.chi
    );
    println!(
        "criterion 5 (lossless merge): PASS — exact law equal at (3,3); \
         MC (200,200) vs direct p={:.4}",
        rep.chi.p_value
    );
}

/// Criterion 6: without the deterministic prefix counter, plain Morris(a)
/// under-estimates far too often at the analyzed small count: at
/// eps=0.1, c=2^-8, delta=1e-9 the exact underestimation probability
/// (~1.8e-4) exceeds delta by orders of magnitude. Exact DP, no sampling.
#[test]
fn criterion_6_prefix_counter_necessity() {
    let rep = labcli::appendix_check(0.1, -8, 1e-9).unwrap();
    assert!(
        (rep.point.a - 6.0318e-5).abs() / 6.0318e-5 < 1e-3,
        "criterion 6: FAIL — a = {}",
        rep.point.a
    );
    assert_eq!(rep.point.n, 3, "criterion 6: FAIL — N = {}", rep.point.n);
    assert!(
        rep.point.constraint_ok,
        "criterion 6: FAIL — regime constraint does not hold"
    );
    assert!(
        (rep.probability - 1.8e-4).abs() / 1.8e-4 < 2e-2,
        "criterion 6: FAIL — probability {}",
        rep.probability
    );
    assert!(
        rep.pass && rep.probability > rep.delta,
        "criterion 6: FAIL — probability {} not above delta {}",
        rep.probability,
        rep.delta
    );
    println!(
        "criterion 6 (prefix-counter necessity): PASS — P(underestimate) = {:.4e} > delta = 1e-9",
        rep.probability
    );
}

/// Criterion 7: space stays on the schedule. At eps ~ 0.1, delta_exp = 10,
/// N = 1e6, over 1e4 trials: no trial ends beyond x_hat + 3 epochs, and the
/// final bit usage never exceeds the analytic schedule bound computed before
/// the run.
#[test]
fn criterion_7_space_tail() {
    let params = CounterParams::new(3277, 15, 10, DEFAULT_C).unwrap();
    let n = 1_000_000u64;
    let trials = 10_000u64;
    let bound = schedule_bound(params, n);

    let master = RandStream::new(SEED);
    let finals: Vec<(u32, u32)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = master.derive(i).derive(1);
            let mut c = NyCount::new(params);
            c.increment_many(n, &mut s);
            (c.x(), c.bits_used())
        })
        .collect();
    let max_x = finals.iter().map(|f| f.0).max().unwrap();
    let max_bits = finals.iter().map(|f| f.1).max().unwrap();
    assert!(
        max_x <= bound.x_bar,
        "criterion 7: FAIL — max final epoch {max_x} beyond x_hat+3 = {}",
        bound.x_bar
    );
    assert!(
        max_bits <= bound.bits,
        "criterion 7: FAIL — max bits {max_bits} beyond analytic bound {}",
        bound.bits
    );
    println!(
        "criterion 7 (space tail): PASS — max epoch {max_x} <= {} (x_hat {} + 3), \
         max bits {max_bits} <= B* = {}",
        bound.x_bar, bound.x_hat, bound.bits
    );
}

/// Criterion 8: the paired error-CDF comparison at a 17-bit budget with
/// N ~ U[500000, 999999]; both algorithms are required to fit 17 bits, keep
/// max relative error <= 5% over 5000 paired trials, and stay within 1.5
/// percentage points of each other at every decile.
///
/// This criterion FAILS by design of the epoch counter's schedule: its
/// sampled counter alone needs ~C*ln(X^2/delta)/eps^3 states, so no dyadic
/// eps <= 1/2 fits 17 bits for counts up to 999999 (the minimum analytic
/// bound is 18 bits, at eps = 1/2), and at eps = 1/2 the estimate lives on a
/// (1.5)^X grid whose relative error is typically tens of percent. The test
/// runs the required configuration, then a labeled diagnostic at the minimal
/// feasible epoch-counter budget, and reports both.
#[test]
fn criterion_8_figure1_17_bit_budget() {
    let trials = 5000u64;
    let (nmin, nmax) = (500_000u64, 999_999u64);
    let delta_exp = 10u32;
    let mut failures: Vec<String> = Vec::new();

    let morris_fit = lookup("morris").unwrap().fit_budget(17, nmax, delta_exp);
    let nycount_fit = lookup("nycount").unwrap().fit_budget(17, nmax, delta_exp);
    let describe = |r: &approxcount::Result<AlgoConfig>| match r {
        Ok(cfg) => cfg.to_string(),
        Err(e) => e.to_string(),
    };
    println!(
        "fit at 17 bits: morris [{}], nycount [{}]",
        describe(&morris_fit),
        describe(&nycount_fit)
    );

    let fig = match (&morris_fit, &nycount_fit) {
        (Ok(m), Ok(ny)) => Some(figure1_with(trials, nmin, nmax, m, ny, SEED).unwrap()),
        _ => {
            failures.push(format!(
                "cannot parameterize both algorithms within 17 bits (morris: {}, nycount: {})",
                describe(&morris_fit),
                describe(&nycount_fit)
            ));
            None
        }
    };

    // Diagnostic at the smallest budget the epoch counter can actually meet,
    // so the full pipeline runs end to end either way.
    let fig = fig.unwrap_or_else(|| {
        let morris_cfg = morris_fit.expect("morris fits 17 bits");
        let mut bits = 18;
        let nycount_cfg = loop {
            match lookup("nycount").unwrap().fit_budget(bits, nmax, delta_exp) {
                Ok(cfg) => break cfg,
                Err(_) => bits += 1,
            }
        };
        println!("diagnostic: running with nycount at its minimum feasible budget ({bits} bits)");
        figure1_with(trials, nmin, nmax, &morris_cfg, &nycount_cfg, SEED).unwrap()
    });

    println!(
        "paired run: morris {} / nycount {}; max rel error morris {:.4}, nycount {:.4}; \
         max decile gap {:.4}",
        fig.morris_cfg,
        fig.nycount_cfg,
        fig.max_morris_err,
        fig.max_nycount_err,
        fig.max_decile_gap
    );
    if fig.max_morris_err > 0.05 {
        failures.push(format!("morris max error {:.4} > 5%", fig.max_morris_err));
    }
    if fig.max_nycount_err > 0.05 {
        failures.push(format!("nycount max error {:.4} > 5%", fig.max_nycount_err));
    }
    if fig.max_decile_gap > 0.015 {
        failures.push(format!(
            "error CDFs {:.4} apart at a decile (> 1.5 percentage points)",
            fig.max_decile_gap
        ));
    }

    assert!(
        failures.is_empty(),
        "criterion 8 (figure-1 at a 17-bit budget): FAIL — {}",
        failures.join("; ")
    );
    println!("criterion 8 (figure-1 at a 17-bit budget): PASS");
}

/// Criterion 9: identical command + seed => byte-identical output, across
/// the whole subcommand surface. Tolerance: exact.
#[test]
fn criterion_9_byte_identical_reruns() {
    let bin = env!("CARGO_BIN_EXE_labcli");
    let run = |args: &[&str]| -> (Vec<u8>, Option<Vec<u8>>) {
        let mut tmp: Option<tempfile_path::TempPath> = None;
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        if args.contains(&"--out") {
            // replace the placeholder with a fresh temp file
            let path = tempfile_path::TempPath::new();
            let idx = full.iter().position(|a| a == "OUT").unwrap();
            full[idx] = path.path().to_string_lossy().into_owned();
            tmp = Some(path);
        }
        let output = std::process::Command::new(bin)
            .args(&full)
            .env("RUST_LOG", "error")
            .output()
            .expect("labcli runs");
        let file = tmp.map(|t| std::fs::read(t.path()).expect("output file"));
        (output.stdout, file)
    };

    let commands: Vec<Vec<&str>> = vec![
        vec![
            "simulate", "--algo", "morris", "--a", "0.001", "--nmin", "100", "--nmax", "5000",
            "--trials", "40", "--seed", "9", "--out", "OUT",
        ],
        vec![
            "simulate", "--algo", "morris+", "--eps", "0.2", "--delta", "0.1", "--n", "20000",
            "--trials", "40", "--seed", "9", "--out", "OUT",
        ],
        vec![
            "simulate",
            "--algo",
            "nycount",
            "--eps-num",
            "1",
            "--eps-shift",
            "1",
            "--delta-exp",
            "10",
            "--c",
            "4",
            "--n",
            "5000",
            "--trials",
            "40",
            "--seed",
            "9",
            "--dump-state",
            "--out",
            "OUT",
        ],
        vec![
            "schedule",
            "--eps-num",
            "1",
            "--eps-shift",
            "1",
            "--delta-exp",
            "10",
            "--c",
            "4",
            "--max-x",
            "40",
        ],
        vec![
            "dp", "--algo", "morris", "--a", "0.5", "--n", "25", "--mode", "rational",
        ],
        vec![
            "dp",
            "--algo",
            "nycount",
            "--eps-num",
            "1",
            "--eps-shift",
            "1",
            "--delta-exp",
            "6",
            "--c",
            "1",
            "--n",
            "60",
            "--mode",
            "rational",
        ],
        vec![
            "merge-test",
            "--eps-num",
            "1",
            "--eps-shift",
            "1",
            "--delta-exp",
            "6",
            "--c",
            "1",
            "--n1",
            "60",
            "--n2",
            "60",
            "--trials",
            "2000",
            "--seed",
            "9",
        ],
        vec![
            "appendix-check",
            "--eps",
            "0.1",
            "--c-exp",
            "-8",
            "--delta",
            "1e-9",
        ],
        vec![
            "fit-budget",
            "--algo",
            "morris",
            "--bits",
            "17",
            "--nmax",
            "999999",
        ],
        vec![
            "figure1",
            "--trials",
            "300",
            "--bits",
            "18",
            "--delta-exp",
            "10",
            "--seed",
            "9",
            "--out",
            "OUT",
        ],
    ];

    for cmd in &commands {
        let first = run(cmd);
        let second = run(cmd);
        assert_eq!(
            first, second,
            "criterion 9: FAIL — rerun differs for {cmd:?}"
        );
    }

    // different seed must change trial output (sanity that the comparison bites)
    let a = run(&[
        "simulate", "--algo", "morris", "--a", "0.001", "--n", "5000", "--trials", "10", "--seed",
        "1", "--out", "OUT",
    ]);
    let b = run(&[
        "simulate", "--algo", "morris", "--a", "0.001", "--n", "5000", "--trials", "10", "--seed",
        "2", "--out", "OUT",
    ]);
    assert_ne!(a.1, b.1, "criterion 9: FAIL — seed does not affect output");

    println!(
        "criterion 9 (byte-identical reruns): PASS — {} commands rerun identically",
        commands.len()
    );
}

/// Minimal unique temp-file helper (std-only).
mod tempfile_path {
    use std::path::{Path, PathBuf};
    use std::sync::atomic::{AtomicU64, Ordering};

    static COUNTER: AtomicU64 = AtomicU64::new(0);

    pub struct TempPath(PathBuf);

    impl TempPath {
        pub fn new() -> Self {
            let n = COUNTER.fetch_add(1, Ordering::Relaxed);
            let path = std::env::temp_dir()
                .join(format!("labcli-acceptance-{}-{n}.out", std::process::id()));
            TempPath(path)
        }
        pub fn path(&self) -> &Path {
            &self.0
        }
    }

    impl Drop for TempPath {
        fn drop(&mut self) {
            let _ = std::fs::remove_file(&self.0);
        }
    }
}
