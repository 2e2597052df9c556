//! Morris(a) counter and the Morris+ wrapper.
//!
//! Morris(a) stores a single register `X` and, on each increment, bumps it
//! with probability (1+a)^-X. The estimate is ((1+a)^X - 1)/a. Morris+ runs
//! an exact counter in parallel and answers with it while the count is still
//! small, switching to the Morris estimate once the exact counter saturates.
//!
//! Batches are simulated exactly by skip-ahead: while `X` is fixed, the
//! number of increments until the next bump is geometric, so a batch of `n`
//! increments costs time proportional to the number of bumps, not `n`.

use serde::{Deserialize, Serialize};

use crate::bits::{bits_for, ceil_log2};
use crate::error::{Error, Result};
use crate::randkit::RandStream;

pub const MORRIS_ALGO: &str = "morris";
pub const MORRIS_PLUS_ALGO: &str = "morris+";

/// Base offset `a` of a Morris(a) counter, with its derived quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MorrisParams {
    a: f64,
    ln1p_a: f64,
}

impl MorrisParams {
    /// Direct construction from the base offset. Any finite a > 0 is usable;
    /// the tolerance constructors below always produce a < 1.
    pub fn new(a: f64) -> Result<Self> {
        if !a.is_finite() || a <= 0.0 {
            return Err(Error::Domain(format!(
                "morris base offset must be finite and positive, got {a}"
            )));
        }
        Ok(Self {
            a,
            ln1p_a: a.ln_1p(),
        })
    }

    /// a = eps^2 / (8 * delta_exp * ln 2), i.e. failure probability 2^-delta_exp.
    pub fn from_tolerance(eps: f64, delta_exp: u32) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Domain(format!("eps must be in (0, 1/2), got {eps}")));
        }
        if delta_exp < 1 {
            return Err(Error::Domain("delta_exp must be >= 1".into()));
        }
        Self::new(eps * eps / (8.0 * delta_exp as f64 * std::f64::consts::LN_2))
    }

    /// a = eps^2 / (8 ln(1/delta)) for an arbitrary failure probability.
    pub fn from_eps_delta(eps: f64, delta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Domain(format!("eps must be in (0, 1/2), got {eps}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!(
                "delta must be in (0, 1), got {delta}"
            )));
        }
        Self::new(eps * eps / (8.0 * (1.0 / delta).ln()))
    }

    /// Chebyshev parameterization a = 2 * eps^2 * delta, kept for comparison
    /// experiments; the tolerance constructors are the default choice.
    pub fn chebyshev(eps: f64, delta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Domain(format!("eps must be in (0, 1/2), got {eps}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!(
                "delta must be in (0, 1), got {delta}"
            )));
        }
        Self::new(2.0 * eps * eps * delta)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// N_a = ceil(8/a): largest count that Morris+ answers exactly.
    pub fn deterministic_threshold(&self) -> u64 {
        (8.0 / self.a).ceil() as u64
    }

    /// Probability (1+a)^-x of bumping the register at X = x.
    pub fn increment_prob(&self, x: u64) -> f64 {
        (-(x as f64) * self.ln1p_a).exp()
    }

    /// Estimator value ((1+a)^x - 1)/a, evaluated at query time only.
    pub fn estimate_at(&self, x: u64) -> f64 {
        ((x as f64) * self.ln1p_a).exp_m1() / self.a
    }
}

/// Morris(a) counter: the register `X` plus harness-side bookkeeping of the
/// number of increments applied (not charged to the memory account).
#[derive(Clone, Debug)]
pub struct Morris {
    params: MorrisParams,
    x: u64,
    increments: u64,
}

impl Morris {
    pub fn new(params: MorrisParams) -> Self {
        Self {
            params,
            x: 0,
            increments: 0,
        }
    }

    pub fn params(&self) -> MorrisParams {
        self.params
    }

    pub fn x(&self) -> u64 {
        self.x
    }

    /// Increments applied so far (harness bookkeeping).
    pub fn increments(&self) -> u64 {
        self.increments
    }

    pub fn increment(&mut self, s: &mut RandStream) {
        let p = self.params.increment_prob(self.x);
        if s.unit_f64() < p {
            self.x += 1;
        }
        self.increments += 1;
    }

    /// Exactly the distribution of `n` successive increments, in expected
    /// time proportional to the number of register bumps.
    pub fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        let mut remaining = n;
        while remaining > 0 {
            let p = self.params.increment_prob(self.x);
            if p <= 0.0 {
                // bump probability underflowed; no further bump can land
                break;
            }
            let gap = s.geometric(p).expect("p in (0, 1]");
            if gap <= remaining {
                remaining -= gap;
                self.x += 1;
            } else {
                break;
            }
        }
        self.increments += n;
    }

    pub fn estimate(&self) -> f64 {
        self.params.estimate_at(self.x)
    }

    pub fn bits_used(&self) -> u32 {
        bits_for(self.x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MorrisRecord {
            v: 1,
            algo: MORRIS_ALGO.into(),
            a: self.params.a,
            x: self.x,
        })
        .expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: MorrisRecord =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if rec.v != 1 {
            return Err(Error::Version(rec.v));
        }
        if rec.algo != MORRIS_ALGO {
            return Err(Error::Parse(format!(
                "expected algo {MORRIS_ALGO:?}, got {:?}",
                rec.algo
            )));
        }
        Ok(Self {
            params: MorrisParams::new(rec.a)?,
            x: rec.x,
            increments: 0,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MorrisRecord {
    v: u64,
    algo: String,
    a: f64,
    x: u64,
}

/// Morris+ pairs a Morris(a) counter with an exact prefix counter that
/// saturates at N_a + 1. Queries answer exactly below the threshold.
#[derive(Clone, Debug)]
pub struct MorrisPlus {
    morris: Morris,
    exact: u64,
    threshold: u64,
}

impl MorrisPlus {
    pub fn new(params: MorrisParams) -> Self {
        Self {
            morris: Morris::new(params),
            exact: 0,
            threshold: params.deterministic_threshold(),
        }
    }

    pub fn params(&self) -> MorrisParams {
        self.morris.params
    }

    pub fn morris(&self) -> &Morris {
        &self.morris
    }

    /// Exact prefix counter value, min(N, N_a + 1).
    pub fn exact_counter(&self) -> u64 {
        self.exact
    }

    pub fn deterministic_threshold(&self) -> u64 {
        self.threshold
    }

    pub fn increment(&mut self, s: &mut RandStream) {
        if self.exact <= self.threshold {
            self.exact += 1;
        }
        self.morris.increment(s);
    }

    pub fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        self.exact = self.exact.saturating_add(n).min(self.threshold + 1);
        self.morris.increment_many(n, s);
    }

    /// Exact count while the prefix counter has not saturated, otherwise the
    /// Morris estimate.
    pub fn query(&self) -> f64 {
        if self.exact <= self.threshold {
            self.exact as f64
        } else {
            self.morris.estimate()
        }
    }

    /// Register bits plus the fixed width of the saturating prefix counter
    /// (which must be able to hold N_a + 1).
    pub fn bits_used(&self) -> u32 {
        self.morris.bits_used() + ceil_log2(self.threshold + 2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MorrisPlusRecord {
            v: 1,
            algo: MORRIS_PLUS_ALGO.into(),
            a: self.morris.params.a,
            x: self.morris.x,
            xprime: self.exact,
            na: self.threshold,
        })
        .expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: MorrisPlusRecord =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if rec.v != 1 {
            return Err(Error::Version(rec.v));
        }
        if rec.algo != MORRIS_PLUS_ALGO {
            return Err(Error::Parse(format!(
                "expected algo {MORRIS_PLUS_ALGO:?}, got {:?}",
                rec.algo
            )));
        }
        let params = MorrisParams::new(rec.a)?;
        if rec.na != params.deterministic_threshold() {
            return Err(Error::Parse(format!(
                "stored threshold {} disagrees with ceil(8/a) = {}",
                rec.na,
                params.deterministic_threshold()
            )));
        }
        if rec.xprime > rec.na + 1 {
            return Err(Error::Parse(format!(
                "prefix counter {} exceeds saturation {}",
                rec.xprime,
                rec.na + 1
            )));
        }
        Ok(Self {
            morris: Morris {
                params,
                x: rec.x,
                increments: 0,
            },
            exact: rec.xprime,
            threshold: rec.na,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MorrisPlusRecord {
    v: u64,
    algo: String,
    a: f64,
    x: u64,
    xprime: u64,
    na: u64,
}
