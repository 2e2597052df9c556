//! Runtime-selectable counter algorithms.
//!
//! Every counter variant sits behind the [`StreamCounter`] trait and is
//! registered under a stable name, so harness code selects algorithms from
//! configuration instead of hard-wiring types. Each registry entry also
//! carries the algorithm's bit-budget derivation rule.

use crate::bits::{bits_for, ceil_log2};
use crate::error::{Error, Result};
use crate::morris::{Morris, MorrisParams, MorrisPlus, MORRIS_ALGO, MORRIS_PLUS_ALGO};
use crate::nycount::{schedule_bound, CounterParams, NyCount, DEFAULT_C, NYCOUNT_ALGO};
use crate::randkit::RandStream;

/// Common surface of one counter instance during a trial.
pub trait StreamCounter {
    fn algo(&self) -> &'static str;
    fn increment(&mut self, s: &mut RandStream);
    fn increment_many(&mut self, n: u64, s: &mut RandStream);
    fn estimate(&self) -> f64;
    fn bits_used(&self) -> u32;
    fn state_json(&self) -> String;
}

impl StreamCounter for Morris {
    fn algo(&self) -> &'static str {
        MORRIS_ALGO
    }
    fn increment(&mut self, s: &mut RandStream) {
        Morris::increment(self, s);
    }
    fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        Morris::increment_many(self, n, s);
    }
    fn estimate(&self) -> f64 {
        Morris::estimate(self)
    }
    fn bits_used(&self) -> u32 {
        Morris::bits_used(self)
    }
    fn state_json(&self) -> String {
        self.to_json()
    }
}

impl StreamCounter for MorrisPlus {
    fn algo(&self) -> &'static str {
        MORRIS_PLUS_ALGO
    }
    fn increment(&mut self, s: &mut RandStream) {
        MorrisPlus::increment(self, s);
    }
    fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        MorrisPlus::increment_many(self, n, s);
    }
    fn estimate(&self) -> f64 {
        self.query()
    }
    fn bits_used(&self) -> u32 {
        MorrisPlus::bits_used(self)
    }
    fn state_json(&self) -> String {
        self.to_json()
    }
}

impl StreamCounter for NyCount {
    fn algo(&self) -> &'static str {
        NYCOUNT_ALGO
    }
    fn increment(&mut self, s: &mut RandStream) {
        NyCount::increment(self, s);
    }
    fn increment_many(&mut self, n: u64, s: &mut RandStream) {
        NyCount::increment_many(self, n, s);
    }
    fn estimate(&self) -> f64 {
        self.estimate_f64()
    }
    fn bits_used(&self) -> u32 {
        NyCount::bits_used(self)
    }
    fn state_json(&self) -> String {
        self.to_json()
    }
}

/// Flag-shaped configuration; each algorithm validates the fields it needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlgoConfig {
    /// Morris base offset, set directly.
    pub a: Option<f64>,
    /// Morris tolerance pair: eps with either delta or delta_exp.
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    /// Dyadic eps for the epoch counter.
    pub eps_num: Option<u32>,
    pub eps_shift: Option<u32>,
    /// Failure exponent, shared.
    pub delta_exp: Option<u32>,
    /// Epoch-counter schedule constant.
    pub c: Option<u32>,
}

impl AlgoConfig {
    pub fn morris_params(&self) -> Result<MorrisParams> {
        if let Some(a) = self.a {
            return MorrisParams::new(a);
        }
        if let Some(eps) = self.eps {
            if let Some(delta) = self.delta {
                return MorrisParams::from_eps_delta(eps, delta);
            }
            if let Some(delta_exp) = self.delta_exp {
                return MorrisParams::from_tolerance(eps, delta_exp);
            }
        }
        Err(Error::Config(
            "morris needs --a, or --eps with --delta or --delta-exp".into(),
        ))
    }

    pub fn nycount_params(&self) -> Result<CounterParams> {
        let (Some(num), Some(shift)) = (self.eps_num, self.eps_shift) else {
            return Err(Error::Config(
                "nycount needs --eps-num and --eps-shift".into(),
            ));
        };
        let Some(delta_exp) = self.delta_exp else {
            return Err(Error::Config("nycount needs --delta-exp".into()));
        };
        CounterParams::new(num, shift, delta_exp, self.c.unwrap_or(DEFAULT_C))
    }
}

impl std::fmt::Display for AlgoConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if let Some(a) = self.a {
            parts.push(format!("a={a}"));
        }
        if let Some(eps) = self.eps {
            parts.push(format!("eps={eps}"));
        }
        if let Some(delta) = self.delta {
            parts.push(format!("delta={delta}"));
        }
        if let (Some(n), Some(s)) = (self.eps_num, self.eps_shift) {
            parts.push(format!("eps={n}/2^{s}"));
        }
        if let Some(d) = self.delta_exp {
            parts.push(format!("delta_exp={d}"));
        }
        if let Some(c) = self.c {
            parts.push(format!("c={c}"));
        }
        write!(f, "{}", parts.join(";"))
    }
}

/// A named counter algorithm: how to build an instance and how to derive
/// parameters that respect a worst-case bit budget.
pub trait Algorithm: Sync {
    fn name(&self) -> &'static str;
    fn build(&self, cfg: &AlgoConfig) -> Result<Box<dyn StreamCounter>>;
    fn fit_budget(&self, budget: u32, n_max: u64, delta_exp: u32) -> Result<AlgoConfig>;
    /// Human-readable statement of the budget derivation rule; printed with
    /// any fitted parameters.
    fn fit_rule(&self) -> &'static str;
}

const MORRIS_GRID_MAX_J: u32 = 40;
const MORRIS_SLACK_LEVELS: u64 = 64;
const MIN_BUDGET: u32 = 8;

fn check_budget(budget: u32) -> Result<()> {
    if budget < MIN_BUDGET {
        return Err(Error::Domain(format!(
            "bit budget must be at least {MIN_BUDGET}, got {budget}"
        )));
    }
    Ok(())
}

/// Worst-case register level for Morris(a) at n_max, plus slack levels.
fn morris_level_bound(a: f64, n_max: u64) -> u64 {
    let levels = ((a * n_max as f64).ln_1p() / a.ln_1p()).ceil() as u64;
    levels + MORRIS_SLACK_LEVELS
}

fn morris_fit(budget: u32, n_max: u64, include_prefix_counter: bool) -> Result<AlgoConfig> {
    check_budget(budget)?;
    let mut chosen: Option<f64> = None;
    for j in 1..=MORRIS_GRID_MAX_J {
        let a = 0.5f64.powi(j as i32);
        let mut need = bits_for(morris_level_bound(a, n_max));
        if include_prefix_counter {
            let na = (8.0 / a).ceil() as u64;
            need += ceil_log2(na + 2);
        }
        if need <= budget {
            chosen = Some(a);
        } else {
            break; // smaller a only grows the bound
        }
    }
    match chosen {
        Some(a) => Ok(AlgoConfig {
            a: Some(a),
            ..AlgoConfig::default()
        }),
        None => Err(Error::InfeasibleBudget {
            budget,
            n_max,
            detail: format!(
                "coarsest grid offset a=1/2 already needs {} bits",
                bits_for(morris_level_bound(0.5, n_max))
            ),
        }),
    }
}

struct MorrisAlgo;

impl Algorithm for MorrisAlgo {
    fn name(&self) -> &'static str {
        MORRIS_ALGO
    }
    fn build(&self, cfg: &AlgoConfig) -> Result<Box<dyn StreamCounter>> {
        Ok(Box::new(Morris::new(cfg.morris_params()?)))
    }
    fn fit_budget(&self, budget: u32, n_max: u64, _delta_exp: u32) -> Result<AlgoConfig> {
        morris_fit(budget, n_max, false)
    }
    fn fit_rule(&self) -> &'static str {
        "smallest a in {2^-j, j=1..40} with bits(ceil(log_{1+a}(1+a*n_max)) + 64) <= budget"
    }
}

struct MorrisPlusAlgo;

impl Algorithm for MorrisPlusAlgo {
    fn name(&self) -> &'static str {
        MORRIS_PLUS_ALGO
    }
    fn build(&self, cfg: &AlgoConfig) -> Result<Box<dyn StreamCounter>> {
        Ok(Box::new(MorrisPlus::new(cfg.morris_params()?)))
    }
    fn fit_budget(&self, budget: u32, n_max: u64, _delta_exp: u32) -> Result<AlgoConfig> {
        morris_fit(budget, n_max, true)
    }
    fn fit_rule(&self) -> &'static str {
        "smallest a in {2^-j, j=1..40} with bits(ceil(log_{1+a}(1+a*n_max)) + 64) \
         + ceil(log2(ceil(8/a) + 2)) <= budget"
    }
}

struct NycountAlgo;

/// Fixed dyadic grid for the epoch counter, coarsest first.
fn nycount_eps_grid() -> Vec<(u32, u32)> {
    let mut grid = Vec::new();
    for shift in 1..=12u32 {
        grid.push((1, shift)); // 1/2, 1/4, ...
        if shift >= 3 {
            grid.push((3, shift)); // 3/8, 3/16, ...
        }
    }
    grid.sort_by(|a, b| {
        let va = a.0 as f64 / (1u64 << a.1) as f64;
        let vb = b.0 as f64 / (1u64 << b.1) as f64;
        vb.partial_cmp(&va).unwrap()
    });
    grid
}

impl Algorithm for NycountAlgo {
    fn name(&self) -> &'static str {
        NYCOUNT_ALGO
    }
    fn build(&self, cfg: &AlgoConfig) -> Result<Box<dyn StreamCounter>> {
        Ok(Box::new(NyCount::new(cfg.nycount_params()?)))
    }
    fn fit_budget(&self, budget: u32, n_max: u64, delta_exp: u32) -> Result<AlgoConfig> {
        check_budget(budget)?;
        let mut best: Option<(f64, AlgoConfig)> = None;
        let mut min_bound = u32::MAX;
        let mut min_at = String::new();
        for (num, shift) in nycount_eps_grid() {
            let Ok(params) = CounterParams::new(num, shift, delta_exp, DEFAULT_C) else {
                continue;
            };
            let bound = schedule_bound(params, n_max);
            if bound.bits < min_bound {
                min_bound = bound.bits;
                min_at = format!("{num}/2^{shift}");
            }
            if bound.bits <= budget {
                let eps = num as f64 / (1u64 << shift) as f64;
                let better = match &best {
                    Some((cur, _)) => eps < *cur,
                    None => true,
                };
                if better {
                    best = Some((
                        eps,
                        AlgoConfig {
                            eps_num: Some(num),
                            eps_shift: Some(shift),
                            delta_exp: Some(delta_exp),
                            c: Some(DEFAULT_C),
                            ..AlgoConfig::default()
                        },
                    ));
                }
            }
        }
        match best {
            Some((_, cfg)) => Ok(cfg),
            None => Err(Error::InfeasibleBudget {
                budget,
                n_max,
                detail: format!(
                    "minimum schedule bound over the eps grid is {min_bound} bits (at eps={min_at})"
                ),
            }),
        }
    }
    fn fit_rule(&self) -> &'static str {
        "smallest dyadic eps in the grid {1/2^s, 3/2^s} with bits(x_hat+3) + bits(max y_end) \
         + bits(max t) <= budget, over epochs up to x_hat+3, where x_hat is the first epoch \
         whose threshold reaches n_max"
    }
}

static MORRIS: MorrisAlgo = MorrisAlgo;
static MORRIS_PLUS: MorrisPlusAlgo = MorrisPlusAlgo;
static NYCOUNT: NycountAlgo = NycountAlgo;

/// All registered algorithms.
pub fn registry() -> &'static [&'static dyn Algorithm] {
    static REGISTRY: [&dyn Algorithm; 3] = [&MORRIS, &MORRIS_PLUS, &NYCOUNT];
    &REGISTRY
}

/// Look an algorithm up by its registered name.
pub fn lookup(name: &str) -> Result<&'static dyn Algorithm> {
    registry()
        .iter()
        .copied()
        .find(|a| a.name() == name)
        .ok_or_else(|| Error::UnknownAlgo(name.to_string()))
}
