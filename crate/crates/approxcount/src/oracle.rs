//! Exact, independent ground truth for the counters.
//!
//! These oracles evaluate the counters' Markov chains directly — forward
//! dynamic programming over the full state distribution — and never touch
//! the sampling paths of the counters themselves. Small instances run in
//! exact rational arithmetic; larger ones in double precision with a
//! renormalization check.

use std::collections::BTreeMap;

use num::bigint::BigUint;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::nycount::{CounterParams, EpochSchedule, NyCount};

/// Exact-rational dynamic programming is limited to this many increments.
pub const RATIONAL_LIMIT: u64 = 100;
/// Double-precision Morris DP limit.
pub const MORRIS_FLOAT_LIMIT: u64 = 10_000;
/// State-count guard for the epoch-counter DP.
pub const STATE_LIMIT: usize = 1_000_000;

/// Probability mass over counter states after a fixed number of increments.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<S, M> {
    /// (state, mass) pairs, sorted by state, zero-mass states omitted.
    pub entries: Vec<(S, M)>,
    /// Increments applied.
    pub increments: u64,
}

pub type RationalDist<S> = Distribution<S, BigRational>;
pub type FloatDist<S> = Distribution<S, f64>;

impl<S: Ord> RationalDist<S> {
    pub fn total_mass(&self) -> BigRational {
        self.entries
            .iter()
            .fold(BigRational::zero(), |acc, (_, m)| acc + m)
    }

    pub fn get(&self, state: &S) -> Option<&BigRational> {
        self.entries
            .binary_search_by(|(s, _)| s.cmp(state))
            .ok()
            .map(|i| &self.entries[i].1)
    }
}

impl<S: Ord> FloatDist<S> {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, m)| m).sum()
    }
}

/// Convert a rational distribution to f64 entries for chi-square feeding.
pub fn to_f64_entries<S: Copy>(dist: &RationalDist<S>) -> Vec<(S, f64)> {
    dist.entries
        .iter()
        .map(|(s, m)| (*s, m.to_f64().expect("mass fits f64")))
        .collect()
}

fn check_rational_a(a: &BigRational) -> Result<()> {
    if !a.is_positive() {
        return Err(Error::Domain(format!(
            "base offset must be positive, got {a}"
        )));
    }
    Ok(())
}

/// Exact distribution of the Morris(a) register after `n` increments,
/// in rational arithmetic: P_{k+1}(x) = P_k(x)(1-p_x) + P_k(x-1)p_{x-1},
/// with p_i = (1+a)^-i and P_0 a point mass at 0.
pub fn morris_dp_rational(a: &BigRational, n: u64) -> Result<RationalDist<u64>> {
    check_rational_a(a)?;
    if n > RATIONAL_LIMIT {
        return Err(Error::TooLarge(format!(
            "rational Morris DP supports n <= {RATIONAL_LIMIT}, got {n}"
        )));
    }
    let one = BigRational::one();
    let r = &one / (&one + a); // 1/(1+a); p_x = r^x
    let mut pows: Vec<BigRational> = vec![one.clone()];
    let mut masses: Vec<BigRational> = vec![one.clone()];
    for _ in 0..n {
        let width = masses.len();
        while pows.len() < width {
            pows.push(pows.last().unwrap() * &r);
        }
        let mut next = vec![BigRational::zero(); width + 1];
        for x in 0..width {
            if masses[x].is_zero() {
                continue;
            }
            let go = &masses[x] * &pows[x];
            let stay = &masses[x] - &go;
            next[x] += stay;
            next[x + 1] += go;
        }
        masses = next;
    }
    let entries = masses
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_zero())
        .map(|(x, m)| (x as u64, m))
        .collect();
    Ok(Distribution {
        entries,
        increments: n,
    })
}

/// Double-precision Morris DP for larger n.
pub fn morris_dp_f64(a: f64, n: u64) -> Result<FloatDist<u64>> {
    if !a.is_finite() || a <= 0.0 {
        return Err(Error::Domain(format!(
            "base offset must be positive, got {a}"
        )));
    }
    if n > MORRIS_FLOAT_LIMIT {
        return Err(Error::TooLarge(format!(
            "float Morris DP supports n <= {MORRIS_FLOAT_LIMIT}, got {n}"
        )));
    }
    let ln1pa = a.ln_1p();
    let p = |x: usize| (-(x as f64) * ln1pa).exp();
    let mut masses: Vec<f64> = vec![1.0];
    for _ in 0..n {
        let width = masses.len();
        let mut next = vec![0.0f64; width + 1];
        for x in 0..width {
            let m = masses[x];
            if m == 0.0 {
                continue;
            }
            let go = m * p(x);
            next[x] += m - go;
            next[x + 1] += go;
        }
        if next[width] == 0.0 {
            next.pop();
        }
        masses = next;
    }
    let total: f64 = masses.iter().sum();
    assert!((total - 1.0).abs() < 1e-9, "float DP mass drifted: {total}");
    let entries = masses
        .into_iter()
        .enumerate()
        .filter(|&(_, m)| m > 0.0)
        .map(|(x, m)| (x as u64, m))
        .collect();
    Ok(Distribution {
        entries,
        increments: n,
    })
}

/// Estimator value ((1+a)^x - 1)/a in exact rational arithmetic.
pub fn morris_estimator_rational(a: &BigRational, x: u64) -> BigRational {
    let one = BigRational::one();
    let base = &one + a;
    let mut pow = one.clone();
    for _ in 0..x {
        pow *= &base;
    }
    (pow - one) / a
}

/// Exact mean and variance of the Morris estimator under a DP distribution.
pub fn estimator_moments(a: &BigRational, dist: &RationalDist<u64>) -> (BigRational, BigRational) {
    let mut mean = BigRational::zero();
    let mut second = BigRational::zero();
    for (x, m) in &dist.entries {
        let est = morris_estimator_rational(a, *x);
        mean += m * &est;
        second += m * &est * &est;
    }
    let var = second - &mean * &mean;
    (mean, var)
}

/// Exact probability that the Morris estimate falls below (1-eps) * n after
/// n increments. `a` and `eps` are taken at their exact f64 values.
pub fn morris_underestimate_prob(a: f64, eps: f64, n: u64) -> Result<BigRational> {
    let a_r = BigRational::from_float(a)
        .ok_or_else(|| Error::Domain(format!("base offset must be finite, got {a}")))?;
    check_rational_a(&a_r)?;
    let eps_r = BigRational::from_float(eps)
        .ok_or_else(|| Error::Domain(format!("eps must be finite, got {eps}")))?;
    let dist = morris_dp_rational(&a_r, n)?;
    let bound = (BigRational::one() - eps_r) * BigRational::from_integer(n.into());
    let mut total = BigRational::zero();
    for (x, m) in &dist.entries {
        if morris_estimator_rational(&a_r, *x) < bound {
            total += m;
        }
    }
    Ok(total)
}

/// Parameter point for the necessity check of the deterministic prefix
/// counter: a = eps^2/(8 ln(1/delta)), N = round(c * eps^(4/3) / a), and the
/// regime constraint delta < eps^(8/3) c^2 / 16 with N >= 2.
#[derive(Clone, Copy, Debug)]
pub struct AppendixPoint {
    pub a: f64,
    pub n: u64,
    pub constraint_ok: bool,
    pub delta_bound: f64,
}

pub fn appendix_params(eps: f64, c: f64, delta: f64) -> Result<AppendixPoint> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::Domain(format!("eps must be in (0, 1/4), got {eps}")));
    }
    if !(c > 0.0 && c <= 2f64.powi(-8)) {
        return Err(Error::Domain(format!("c must be in (0, 2^-8], got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let a = eps * eps / (8.0 * (1.0 / delta).ln());
    let n = (c * eps.powf(4.0 / 3.0) / a).round() as u64;
    let delta_bound = eps.powf(8.0 / 3.0) * c * c / 16.0;
    Ok(AppendixPoint {
        a,
        n,
        constraint_ok: delta < delta_bound && n >= 2,
        delta_bound,
    })
}

// ---------------------------------------------------------------------------
// Epoch-counter DP
// ---------------------------------------------------------------------------

/// Survivor transition of the epoch counter: bump Y and advance the epoch if
/// the threshold is crossed. Shared by the DP oracles so they follow exactly
/// the same integer arithmetic as the counter.
fn survive(schedule: &mut EpochSchedule, x: u32, y: u64) -> (u32, u64) {
    let e = schedule.entry(x);
    let (t_old, y_end) = (e.t, e.y_end);
    let mut ny = y + 1;
    let mut nx = x;
    if ny == y_end {
        nx += 1;
        let e2 = schedule.entry(nx);
        ny >>= e2.t - t_old;
    }
    (nx, ny)
}

fn pow2_neg_rational(t: u32) -> BigRational {
    BigRational::new(BigUint::one().into(), (BigUint::one() << t).into())
}

/// Exact distribution over (X, Y) after n increments, rational masses.
pub fn approx_dp_rational(params: CounterParams, n: u64) -> Result<RationalDist<(u32, u64)>> {
    if n > RATIONAL_LIMIT {
        return Err(Error::TooLarge(format!(
            "rational epoch-counter DP supports n <= {RATIONAL_LIMIT}, got {n}"
        )));
    }
    let mut schedule = EpochSchedule::new(params);
    let x0 = schedule.x0();
    let one = BigRational::one();
    let mut cur: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();
    cur.insert((x0, 0), one.clone());
    for _ in 0..n {
        let mut next: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();
        for (&(x, y), m) in &cur {
            let t = schedule.entry(x).t;
            let target = survive(&mut schedule, x, y);
            if t == 0 {
                *next.entry(target).or_insert_with(BigRational::zero) += m;
            } else {
                let alpha = pow2_neg_rational(t);
                let go = m * &alpha;
                let stay = m - &go;
                *next.entry(target).or_insert_with(BigRational::zero) += go;
                *next.entry((x, y)).or_insert_with(BigRational::zero) += stay;
            }
        }
        if next.len() > STATE_LIMIT {
            return Err(Error::TooLarge(format!(
                "state count {} exceeds {STATE_LIMIT}",
                next.len()
            )));
        }
        cur = next;
    }
    let dist = Distribution {
        entries: cur.into_iter().collect(),
        increments: n,
    };
    debug_assert!(dist.total_mass() == BigRational::one());
    Ok(dist)
}

/// Double-precision epoch-counter DP for larger n, with a renormalization
/// check on the final mass.
pub fn approx_dp_f64(params: CounterParams, n: u64) -> Result<FloatDist<(u32, u64)>> {
    let mut schedule = EpochSchedule::new(params);
    let x0 = schedule.x0();
    let mut cur: BTreeMap<(u32, u64), f64> = BTreeMap::new();
    cur.insert((x0, 0), 1.0);
    for _ in 0..n {
        let mut next: BTreeMap<(u32, u64), f64> = BTreeMap::new();
        for (&(x, y), &m) in &cur {
            let t = schedule.entry(x).t;
            let target = survive(&mut schedule, x, y);
            if t == 0 {
                *next.entry(target).or_insert(0.0) += m;
            } else {
                let alpha = 0.5f64.powi(t as i32);
                let go = m * alpha;
                *next.entry(target).or_insert(0.0) += go;
                *next.entry((x, y)).or_insert(0.0) += m - go;
            }
        }
        if next.len() > STATE_LIMIT {
            return Err(Error::TooLarge(format!(
                "state count {} exceeds {STATE_LIMIT}",
                next.len()
            )));
        }
        cur = next;
    }
    let dist = Distribution {
        entries: cur.into_iter().collect(),
        increments: n,
    };
    let total = dist.total_mass();
    assert!((total - 1.0).abs() < 1e-9, "float DP mass drifted: {total}");
    Ok(dist)
}

/// Query estimate of an epoch-counter state, as f64.
pub fn state_estimate(schedule: &mut EpochSchedule, x: u32, y: u64) -> f64 {
    if x == schedule.x0() {
        y as f64
    } else {
        schedule
            .entry(x)
            .threshold
            .to_f64()
            .unwrap_or(f64::INFINITY)
    }
}

/// Exact distribution of merging two counters run for n1 and n2 increments.
///
/// Enumerates both input distributions and the merge randomness; the merge
/// transition logic mirrors [`NyCount::merge`] survivor by survivor.
pub fn merge_dp(params: CounterParams, n1: u64, n2: u64) -> Result<RationalDist<(u32, u64)>> {
    let d1 = approx_dp_rational(params, n1)?;
    let d2 = approx_dp_rational(params, n2)?;
    let mut schedule = EpochSchedule::new(params);
    let mut out: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();

    for (s1, m1) in &d1.entries {
        for (s2, m2) in &d2.entries {
            let w = m1 * m2;
            // ordering rule identical to the counter's merge
            let (lo, hi) = if s1.0 <= s2.0 { (*s1, *s2) } else { (*s2, *s1) };
            let lo_counter = NyCount::from_state(params, lo.0, lo.1, schedule.entry(lo.0).t)?;

            // per-survivor source exponents, oldest epoch first
            let mut sources: Vec<u32> = Vec::new();
            for (epoch_x, count) in lo_counter.survivors_per_epoch() {
                let t_src = schedule.entry(epoch_x).t;
                sources.extend(std::iter::repeat_n(t_src, count as usize));
            }

            let mut states: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();
            states.insert(hi, w);
            for t_src in sources {
                let mut stepped: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();
                for (&(x, y), m) in &states {
                    let t_cur = schedule.entry(x).t;
                    debug_assert!(t_cur >= t_src);
                    let dt = t_cur - t_src;
                    let target = survive(&mut schedule, x, y);
                    if dt == 0 {
                        *stepped.entry(target).or_insert_with(BigRational::zero) += m;
                    } else {
                        let alpha = pow2_neg_rational(dt);
                        let go = m * &alpha;
                        let stay = m - &go;
                        *stepped.entry(target).or_insert_with(BigRational::zero) += go;
                        *stepped.entry((x, y)).or_insert_with(BigRational::zero) += stay;
                    }
                }
                states = stepped;
                if states.len() > STATE_LIMIT {
                    return Err(Error::TooLarge(format!(
                        "state count {} exceeds {STATE_LIMIT}",
                        states.len()
                    )));
                }
            }
            for (state, m) in states {
                *out.entry(state).or_insert_with(BigRational::zero) += m;
            }
        }
    }

    let dist = Distribution {
        entries: out.into_iter().collect(),
        increments: n1 + n2,
    };
    debug_assert!(dist.total_mass() == BigRational::one());
    Ok(dist)
}

// ---------------------------------------------------------------------------
// Schedule-constant calibration
// ---------------------------------------------------------------------------

/// Exact failure probability P(|estimate - n| > 2 eps n) under the DP.
pub fn failure_probability(params: CounterParams, n: u64) -> Result<f64> {
    let dist = approx_dp_f64(params, n)?;
    let mut schedule = EpochSchedule::new(params);
    let band = 2.0 * params.eps_f64() * n as f64;
    let mut fail = 0.0;
    for (&(x, y), &m) in dist.entries.iter().map(|(s, m)| (s, m)) {
        let est = state_estimate(&mut schedule, x, y);
        if (est - n as f64).abs() > band {
            fail += m;
        }
    }
    Ok(fail)
}

#[derive(Clone, Debug)]
pub struct Calibration {
    /// Smallest schedule constant whose exact failure probability at the
    /// calibration point stays within delta.
    pub c: u32,
    /// Smallest power of two K with failure probability <= K * delta.
    pub k: u32,
    /// (candidate C, exact failure probability) table.
    pub table: Vec<(u32, f64)>,
}

/// One-time calibration of the schedule constant: exact DP at eps = 1/4,
/// delta = 2^-6, n = 500, over candidate constants {1, 2, 4, 8}.
pub fn calibrate_default_c() -> Calibration {
    let n = 500;
    let delta = 0.5f64.powi(6);
    let mut table = Vec::new();
    for c in [1u32, 2, 4, 8] {
        let params = CounterParams::new(1, 2, 6, c).expect("calibration params valid");
        let fail = failure_probability(params, n).expect("calibration DP fits limits");
        table.push((c, fail));
    }
    let chosen = table
        .iter()
        .find(|&&(_, fail)| fail <= delta)
        .map(|&(c, _)| c)
        .expect("some candidate constant meets delta");
    let fail = table.iter().find(|&&(c, _)| c == chosen).unwrap().1;
    let mut k = 1u32;
    while fail > k as f64 * delta {
        k *= 2;
    }
    Calibration {
        c: chosen,
        k,
        table,
    }
}
