//! Chi-square goodness-of-fit helpers for comparing simulated histograms
//! against exact oracle distributions (or against each other).
//!
//! Bins with expected count below 5 are pooled before computing the
//! statistic, the usual validity rule for the chi-square approximation.

use std::collections::BTreeMap;
use std::fmt::Debug;

use statrs::distribution::{ChiSquared, ContinuousCDF};

const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Copy, Debug)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub pass: bool,
}

fn finish(bins: Vec<(f64, f64)>, significance: f64) -> ChiSquareReport {
    let dof = bins.len().saturating_sub(1);
    if dof == 0 {
        let bad = bins.iter().any(|&(o, e)| (o - e).abs() > 1e-9);
        return ChiSquareReport {
            statistic: 0.0,
            dof: 0,
            p_value: if bad { 0.0 } else { 1.0 },
            pass: !bad,
        };
    }
    let mut stat = 0.0f64;
    for &(o, e) in &bins {
        if e <= 0.0 {
            if o > 0.0 {
                stat = f64::INFINITY;
            }
            continue;
        }
        let d = o - e;
        stat += d * d / e;
    }
    let p_value = if stat.is_finite() {
        let chi = ChiSquared::new(dof as f64).expect("dof > 0");
        1.0 - chi.cdf(stat)
    } else {
        0.0
    };
    ChiSquareReport {
        statistic: stat,
        dof,
        p_value,
        pass: p_value >= significance,
    }
}

/// Pool every (observed, expected) pair with expected < 5 into one bin.
fn pool(bins: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut kept = Vec::new();
    let mut pooled = (0.0f64, 0.0f64);
    let mut have_pooled = false;
    for (o, e) in bins {
        if e < MIN_EXPECTED {
            pooled.0 += o;
            pooled.1 += e;
            have_pooled = true;
        } else {
            kept.push((o, e));
        }
    }
    if have_pooled {
        kept.push(pooled);
    }
    kept
}

/// One-sample goodness-of-fit of a simulated histogram against expected
/// probabilities over the same state space. States observed but absent from
/// `expected` count against a zero-probability bin and fail the test.
pub fn chi_square_fit<K: Ord + Copy + Debug>(
    hist: &BTreeMap<K, u64>,
    expected: &[(K, f64)],
    trials: u64,
    significance: f64,
) -> ChiSquareReport {
    let mut keys: Vec<K> = expected.iter().map(|&(k, _)| k).collect();
    for k in hist.keys() {
        if !expected.iter().any(|&(ek, _)| ek == *k) {
            keys.push(*k);
        }
    }
    keys.sort();
    keys.dedup();

    let probs: BTreeMap<K, f64> = expected.iter().copied().collect();
    let mut bins: Vec<(f64, f64)> = Vec::with_capacity(keys.len() + 1);
    let mut obs_total = 0u64;
    let mut prob_total = 0.0f64;
    for k in keys {
        let o = hist.get(&k).copied().unwrap_or(0);
        let p = probs.get(&k).copied().unwrap_or(0.0);
        obs_total += o;
        prob_total += p;
        bins.push((o as f64, p * trials as f64));
    }
    // residual mass the expected list did not enumerate
    let resid_p = (1.0 - prob_total).max(0.0);
    let resid_o = trials - obs_total;
    if resid_p > 0.0 || resid_o > 0 {
        bins.push((resid_o as f64, resid_p * trials as f64));
    }
    finish(pool(bins), significance)
}

/// Two-sample chi-square test of homogeneity over two histograms.
pub fn chi_square_two_sample<K: Ord + Copy + Debug>(
    a: &BTreeMap<K, u64>,
    b: &BTreeMap<K, u64>,
    significance: f64,
) -> ChiSquareReport {
    let mut keys: Vec<K> = a.keys().chain(b.keys()).copied().collect();
    keys.sort();
    keys.dedup();

    let total_a: u64 = a.values().sum();
    let total_b: u64 = b.values().sum();
    let total = (total_a + total_b) as f64;
    if total == 0.0 {
        return finish(Vec::new(), significance);
    }

    // Pool columns whose smaller expected cell is under the threshold, then
    // compute the statistic over both rows of the table.
    let mut cols: Vec<(f64, f64)> = keys
        .iter()
        .map(|k| {
            (
                a.get(k).copied().unwrap_or(0) as f64,
                b.get(k).copied().unwrap_or(0) as f64,
            )
        })
        .collect();
    let frac_a = total_a as f64 / total;
    let frac_b = total_b as f64 / total;
    let mut kept: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0f64, 0.0f64);
    let mut have_pooled = false;
    for (oa, ob) in cols.drain(..) {
        let col = oa + ob;
        if (col * frac_a).min(col * frac_b) < MIN_EXPECTED {
            pooled.0 += oa;
            pooled.1 += ob;
            have_pooled = true;
        } else {
            kept.push((oa, ob));
        }
    }
    if have_pooled {
        kept.push(pooled);
    }

    let dof = kept.len().saturating_sub(1);
    if dof == 0 {
        return ChiSquareReport {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            pass: true,
        };
    }
    let mut stat = 0.0;
    for &(oa, ob) in &kept {
        let col = oa + ob;
        let ea = col * frac_a;
        let eb = col * frac_b;
        if ea > 0.0 {
            stat += (oa - ea) * (oa - ea) / ea;
        }
        if eb > 0.0 {
            stat += (ob - eb) * (ob - eb) / eb;
        }
    }
    let chi = ChiSquared::new(dof as f64).expect("dof > 0");
    let p_value = 1.0 - chi.cdf(stat);
    ChiSquareReport {
        statistic: stat,
        dof,
        p_value,
        pass: p_value >= significance,
    }
}
