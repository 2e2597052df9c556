//! Epoch-scheduled sampled counter ("nycount").
//!
//! The counter keeps an epoch register `X`, a sampled counter `Y` and a
//! sampling exponent `t` (sampling rate 2^-t). Within an epoch, each raw
//! increment survives to bump `Y` with probability 2^-t. When `Y` exceeds
//! the epoch's sampled threshold, the counter advances to the next epoch:
//! `X` steps, the sampling exponent is recomputed, and `Y` is rescaled.
//! A query answers `Y` exactly while still in the start epoch, otherwise the
//! epoch threshold `T = ceil((1+eps)^X)`.
//!
//! Epsilon is a dyadic rational m/2^s so that every threshold is computed by
//! exact big-integer arithmetic and the whole epoch schedule is a
//! deterministic, bit-reproducible function of the parameters. The sampling
//! exponent is derived from a double-precision logarithm; a rounding flip at
//! an exact power-of-two boundary is a documented platform hazard (the rate
//! is only required to stay at or above the schedule formula).

use num::bigint::BigUint;
use num::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::bits::bits_for;
use crate::error::{Error, Result};
use crate::randkit::RandStream;

pub const NYCOUNT_ALGO: &str = "nycount";

/// Sampling-schedule constant, fixed once by the exact-DP calibration in
/// [`crate::oracle::calibrate_default_c`] (see that module's tests).
pub const DEFAULT_C: u32 = 1;

/// Empirical accuracy constant recorded by the same calibration: the exact
/// failure probability at the calibration point is at most `ACCURACY_K * delta`.
pub const ACCURACY_K: u32 = 1;

// Supported parameter ranges. They keep every sampled threshold comfortably
// inside u64 and every schedule quantity exactly representable in f64.
const MAX_EPS_SHIFT: u32 = 32;
const MIN_EPS_LOG2: u32 = 12; // eps >= 2^-12
const MAX_DELTA_EXP: u32 = 64;
const MAX_C: u32 = 1024;

/// Configuration (eps as a dyadic rational, failure exponent, schedule
/// constant) shared by counter instances that may merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterParams {
    eps_num: u32,
    eps_shift: u32,
    delta_exp: u32,
    c: u32,
}

impl CounterParams {
    /// eps = eps_num / 2^eps_shift in (0, 1/2]; delta = 2^-delta_exp.
    pub fn new(eps_num: u32, eps_shift: u32, delta_exp: u32, c: u32) -> Result<Self> {
        if eps_shift == 0 || eps_shift > MAX_EPS_SHIFT {
            return Err(Error::Domain(format!(
                "eps_shift must be in 1..={MAX_EPS_SHIFT}, got {eps_shift}"
            )));
        }
        if eps_num == 0 || (eps_num as u64) > (1u64 << (eps_shift - 1)) {
            return Err(Error::Domain(format!(
                "eps must be in (0, 1/2]: got {eps_num}/2^{eps_shift}"
            )));
        }
        if eps_shift > MIN_EPS_LOG2 && (eps_num as u64) < (1u64 << (eps_shift - MIN_EPS_LOG2)) {
            return Err(Error::Domain(format!(
                "eps below 2^-{MIN_EPS_LOG2} is not supported: got {eps_num}/2^{eps_shift}"
            )));
        }
        if delta_exp == 0 || delta_exp > MAX_DELTA_EXP {
            return Err(Error::Domain(format!(
                "delta_exp must be in 1..={MAX_DELTA_EXP}, got {delta_exp}"
            )));
        }
        if c == 0 || c > MAX_C {
            return Err(Error::Domain(format!("c must be in 1..={MAX_C}, got {c}")));
        }
        Ok(Self {
            eps_num,
            eps_shift,
            delta_exp,
            c,
        })
    }

    pub fn eps_num(&self) -> u32 {
        self.eps_num
    }

    pub fn eps_shift(&self) -> u32 {
        self.eps_shift
    }

    pub fn delta_exp(&self) -> u32 {
        self.delta_exp
    }

    pub fn c(&self) -> u32 {
        self.c
    }

    /// Exact f64 value of the dyadic eps.
    pub fn eps_f64(&self) -> f64 {
        self.eps_num as f64 / (1u64 << self.eps_shift) as f64
    }

    /// ln(1/eta) for epoch register x, with eta = delta / x^2.
    pub fn ln_inv_eta(&self, x: u32) -> f64 {
        self.delta_exp as f64 * std::f64::consts::LN_2 + 2.0 * (x as f64).ln()
    }

    /// Start epoch: ceil(log_{1+eps}(C * ln(1/delta) / eps^3)).
    pub fn x0(&self) -> u32 {
        let eps = self.eps_f64();
        let u = self.c as f64 * self.delta_exp as f64 * std::f64::consts::LN_2 / eps.powi(3);
        let x0 = (u.ln() / eps.ln_1p()).ceil();
        x0.max(1.0) as u32
    }

    /// T(x) = ceil((1+eps)^x), evaluated exactly: ceil((2^s + m)^x / 2^(s*x)).
    pub fn threshold(&self, x: u32) -> BigUint {
        let base = BigUint::from((1u64 << self.eps_shift) + self.eps_num as u64);
        let num = base.pow(x);
        let shift = self.eps_shift as u64 * x as u64;
        let one = BigUint::from(1u8);
        (num + (&one << shift) - &one) >> shift
    }
}

impl std::fmt::Display for CounterParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "eps={}/2^{};delta_exp={};c={}",
            self.eps_num, self.eps_shift, self.delta_exp, self.c
        )
    }
}

/// First Y value that triggers the epoch advance: floor(T / 2^t) + 1.
///
/// The advance condition is the exact integer comparison Y * 2^t > T, valid
/// whether or not 2^t divides T.
pub fn advance_point(threshold: &BigUint, t: u32) -> u64 {
    (threshold >> t)
        .to_u64()
        .expect("sampled threshold fits u64 for supported parameters")
        + 1
}

/// One row of the deterministic epoch schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochEntry {
    pub x: u32,
    /// T = ceil((1+eps)^x), exact.
    pub threshold: BigUint,
    /// Sampling exponent for this epoch (rate 2^-t).
    pub t: u32,
    /// Value of Y on entering the epoch.
    pub y_start: u64,
    /// First Y value that triggers the advance to the next epoch.
    pub y_end: u64,
}

/// Lazily materialized epoch schedule. Depends only on the parameters, so
/// any two processes compute identical tables.
#[derive(Clone, Debug)]
pub struct EpochSchedule {
    params: CounterParams,
    entries: Vec<EpochEntry>,
    clamp_noted: bool,
}

impl EpochSchedule {
    pub fn new(params: CounterParams) -> Self {
        let x0 = params.x0();
        let threshold = params.threshold(x0);
        let y_end = advance_point(&threshold, 0);
        let first = EpochEntry {
            x: x0,
            threshold,
            t: 0,
            y_start: 0,
            y_end,
        };
        Self {
            params,
            entries: vec![first],
            clamp_noted: false,
        }
    }

    pub fn params(&self) -> CounterParams {
        self.params
    }

    pub fn x0(&self) -> u32 {
        self.entries[0].x
    }

    /// Entry for epoch register `x`, materializing the schedule up to it.
    pub fn entry(&mut self, x: u32) -> &EpochEntry {
        assert!(x >= self.x0(), "epoch {x} precedes the start epoch");
        while self.entries.last().unwrap().x < x {
            self.build_next();
        }
        &self.entries[(x - self.x0()) as usize]
    }

    /// Entry for an epoch that has already been materialized.
    pub fn built(&self, x: u32) -> &EpochEntry {
        &self.entries[(x - self.x0()) as usize]
    }

    fn build_next(&mut self) {
        let prev = self.entries.last().unwrap();
        let x = prev.x + 1;
        let prev_t = prev.t;
        let prev_y_end = prev.y_end;

        let threshold = self.params.threshold(x);
        let eps = self.params.eps_f64();
        let t_f = threshold.to_f64().unwrap_or(f64::INFINITY);
        let alpha_raw = self.params.c as f64 * self.params.ln_inv_eta(x) / (eps.powi(3) * t_f);

        let mut t = prev_t;
        if alpha_raw < 1.0 {
            t = t.max((1.0 / alpha_raw).log2().floor() as u32);
        } else if x > self.x0() + 1 && !self.clamp_noted {
            log::warn!(
                "sampling rate clamped to its previous value at epoch {x} (start epoch {})",
                self.x0()
            );
            self.clamp_noted = true;
        }

        let y_end = advance_point(&threshold, t);
        let y_start = prev_y_end >> (t - prev_t);
        debug_assert!(
            y_end > y_start,
            "epoch {x} closes at {y_end} before its start {y_start}"
        );
        self.entries.push(EpochEntry {
            x,
            threshold,
            t,
            y_start,
            y_end,
        });
    }
}

/// Analytic worst-case register bound for runs of up to `n_max` increments,
/// computed from the schedule alone before any trial runs.
#[derive(Clone, Debug)]
pub struct ScheduleBound {
    /// First epoch whose threshold reaches n_max.
    pub x_hat: u32,
    /// x_hat plus 3 slack epochs: the largest epoch with non-negligible
    /// reach probability.
    pub x_bar: u32,
    /// Largest epoch-closing value of Y over epochs up to x_bar.
    pub max_y_end: u64,
    /// Largest sampling exponent over epochs up to x_bar.
    pub max_t: u32,
    /// bits(x_bar) + bits(max_y_end) + bits(max_t).
    pub bits: u32,
}

/// Compute the analytic schedule bound B* for counts up to `n_max`.
pub fn schedule_bound(params: CounterParams, n_max: u64) -> ScheduleBound {
    let mut schedule = EpochSchedule::new(params);
    let n_big = BigUint::from(n_max);
    let mut x_hat = schedule.x0();
    while schedule.entry(x_hat).threshold < n_big {
        x_hat += 1;
    }
    let x_bar = x_hat + 3;
    let mut max_y_end = 0u64;
    let mut max_t = 0u32;
    for x in schedule.x0()..=x_bar {
        let e = schedule.entry(x);
        max_y_end = max_y_end.max(e.y_end);
        max_t = max_t.max(e.t);
    }
    ScheduleBound {
        x_hat,
        x_bar,
        max_y_end,
        max_t,
        bits: bits_for(x_bar as u64) + bits_for(max_y_end) + bits_for(max_t as u64),
    }
}

/// Query answer: the epoch register is always reported alongside the count
/// estimate (the register alone pins the estimate to the epoch grid).
#[derive(Clone, Debug, PartialEq)]
pub struct CountEstimate {
    pub x: u32,
    pub estimate: BigUint,
}

/// The epoch-scheduled sampled counter.
///
/// Program state charged to the memory account is exactly (X, Y, t); the
/// cached schedule rows are derived data recomputable from the parameters.
#[derive(Clone, Debug)]
pub struct NyCount {
    schedule: EpochSchedule,
    x: u32,
    y: u64,
    t: u32,
}

impl PartialEq for NyCount {
    fn eq(&self, other: &Self) -> bool {
        self.params() == other.params()
            && self.x == other.x
            && self.y == other.y
            && self.t == other.t
    }
}

impl NyCount {
    pub fn new(params: CounterParams) -> Self {
        let schedule = EpochSchedule::new(params);
        let x = schedule.x0();
        Self {
            schedule,
            x,
            y: 0,
            t: 0,
        }
    }

    /// Rebuild a counter from raw registers, validating them against the
    /// deterministic schedule.
    pub fn from_state(params: CounterParams, x: u32, y: u64, t: u32) -> Result<Self> {
        let mut schedule = EpochSchedule::new(params);
        if x < schedule.x0() {
            return Err(Error::Parse(format!(
                "epoch register {x} precedes the start epoch {}",
                schedule.x0()
            )));
        }
        let entry = schedule.entry(x).clone();
        if t != entry.t {
            return Err(Error::Parse(format!(
                "sampling exponent {t} disagrees with the schedule value {} at epoch {x}",
                entry.t
            )));
        }
        if y < entry.y_start || y >= entry.y_end {
            return Err(Error::Parse(format!(
                "sampled counter {y} outside [{}, {}) at epoch {x}",
                entry.y_start, entry.y_end
            )));
        }
        Ok(Self { schedule, x, y, t })
    }

    pub fn params(&self) -> CounterParams {
        self.schedule.params()
    }

    pub fn x0(&self) -> u32 {
        self.schedule.x0()
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u64 {
        self.y
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    pub fn current_epoch(&self) -> &EpochEntry {
        self.schedule.built(self.x)
    }

    pub fn increment(&mut self, s: &mut RandStream) {
        if s.bernoulli_pow2(self.t) {
            self.y += 1;
            self.advance_if_due();
        }
    }

    fn advance_if_due(&mut self) {
        let end = self.schedule.built(self.x).y_end;
        if self.y < end {
            return;
        }
        debug_assert_eq!(self.y, end, "sampled counter overshot the epoch end");
        let old_t = self.t;
        self.x += 1;
        let entry = self.schedule.entry(self.x);
        let (new_t, y_start, new_end) = (entry.t, entry.y_start, entry.y_end);
        self.t = new_t;
        self.y >>= new_t - old_t;
        debug_assert_eq!(self.y, y_start);
        debug_assert!(self.y < new_end, "more than one advance per increment");
    }

    /// Exactly the distribution of `n` successive increments.
    ///
    /// While the sampling exponent is positive, gaps between survivors are
    /// geometric(2^-t); epoch advances happen exactly at the thresholds.
    pub fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        let mut remaining = n;
        while remaining > 0 {
            if self.t == 0 {
                let end = self.schedule.built(self.x).y_end;
                let step = (end - self.y).min(remaining);
                self.y += step;
                remaining -= step;
                self.advance_if_due();
            } else {
                let p = 0.5f64.powi(self.t as i32);
                let gap = s.geometric(p).expect("2^-t in (0, 1)");
                if gap <= remaining {
                    remaining -= gap;
                    self.y += 1;
                    self.advance_if_due();
                } else {
                    remaining = 0;
                }
            }
        }
    }

    /// Exact count while in the start epoch, else the epoch threshold,
    /// evaluated in exact big-integer arithmetic at query time.
    pub fn query(&self) -> CountEstimate {
        let estimate = if self.x == self.schedule.x0() {
            BigUint::from(self.y)
        } else {
            self.schedule.built(self.x).threshold.clone()
        };
        CountEstimate {
            x: self.x,
            estimate,
        }
    }

    pub fn estimate_f64(&self) -> f64 {
        self.query().estimate.to_f64().unwrap_or(f64::INFINITY)
    }

    /// bits(X) + bits(Y) + bits(t), bits(v) = ceil(log2(v+1)).
    pub fn bits_used(&self) -> u32 {
        bits_for(self.x as u64) + bits_for(self.y) + bits_for(self.t as u64)
    }

    /// Survivor count per epoch, oldest first: completed epochs contribute
    /// y_end - y_start, the current epoch contributes y - y_start. All values
    /// are deterministic functions of the parameters and (X, Y).
    pub fn survivors_per_epoch(&self) -> Vec<(u32, u64)> {
        let x0 = self.schedule.x0();
        let mut out = Vec::with_capacity((self.x - x0 + 1) as usize);
        for x in x0..self.x {
            let e = self.schedule.built(x);
            out.push((x, e.y_end - e.y_start));
        }
        let cur = self.schedule.built(self.x);
        out.push((self.x, self.y - cur.y_start));
        out
    }

    /// Lossless merge: the result is distributed identically to a counter
    /// incremented N_a + N_b times. Each survivor of the lower counter's
    /// epoch i is re-inserted into the higher counter with probability
    /// 2^(t_i - t_current), processing epoch advances after every accepted
    /// increment. Consumes both inputs.
    pub fn merge(a: Self, b: Self, s: &mut RandStream) -> Result<Self> {
        if a.params() != b.params() {
            return Err(Error::ParamMismatch(format!(
                "{} vs {}",
                a.params(),
                b.params()
            )));
        }
        let (lo, mut hi) = if a.x <= b.x { (a, b) } else { (b, a) };
        for (epoch_x, survivors) in lo.survivors_per_epoch() {
            let t_src = lo.schedule.built(epoch_x).t;
            for _ in 0..survivors {
                debug_assert!(hi.t >= t_src, "sampling exponent decreased across epochs");
                if s.bernoulli_pow2(hi.t - t_src) {
                    hi.y += 1;
                    hi.advance_if_due();
                }
            }
        }
        Ok(hi)
    }

    pub fn to_json(&self) -> String {
        let p = self.params();
        serde_json::to_string(&NyCountRecord {
            v: 1,
            algo: NYCOUNT_ALGO.into(),
            eps_num: p.eps_num,
            eps_shift: p.eps_shift,
            delta_exp: p.delta_exp,
            c: p.c,
            x: self.x,
            y: self.y,
            t: self.t,
        })
        .expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: NyCountRecord =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if rec.v != 1 {
            return Err(Error::Version(rec.v));
        }
        if rec.algo != NYCOUNT_ALGO {
            return Err(Error::Parse(format!(
                "expected algo {NYCOUNT_ALGO:?}, got {:?}",
                rec.algo
            )));
        }
        let params = CounterParams::new(rec.eps_num, rec.eps_shift, rec.delta_exp, rec.c)?;
        Self::from_state(params, rec.x, rec.y, rec.t)
    }
}

/// Wire format: one JSON object per line, integer fields only, field order
/// fixed as declared.
#[derive(Serialize, Deserialize)]
struct NyCountRecord {
    v: u64,
    algo: String,
    eps_num: u32,
    eps_shift: u32,
    delta_exp: u32,
    c: u32,
    x: u32,
    y: u64,
    t: u32,
}
