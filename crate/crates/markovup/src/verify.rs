//! Empirical and exact verification of the certified bounds: Monte Carlo
//! estimators for the bounded quantities, an exact solver on the extended
//! chain of a ceiling-bounded law, and a dominance report that lines the
//! estimates up against the bounds.

use crate::audit::LawProfile;
use crate::bounds::{
    fall_duration_bound, recurrence_bound, rise_duration_bound, rise_height_bound,
};
use crate::process::{memory_update, MemoryState, State, TransitionLaw};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("a finite ceiling is required to build the extended chain")]
    CeilingRequired,
    #[error("extended state budget of {budget} exceeded")]
    StateBudgetExceeded { budget: usize },
    #[error("alpha = {alpha} is too large for the extended chain: {detail}")]
    AlphaTooLarge { alpha: f64, detail: String },
    #[error("start {x0} lies above the ceiling {ceiling}")]
    StartAboveCeiling { x0: State, ceiling: State },
}

/// Two-sided normal quantiles used for the reported intervals.
pub const Z95: f64 = 1.959963984540054;
pub const Z99: f64 = 2.5758293035489004;

// ── Estimates ──────────────────────────────────────────────────────────

/// A Monte Carlo estimate with its standard error and 95% interval. When
/// `censored_fraction > 0` some samples were cut off at the sampling cap
/// and the estimate is only a flagged stand-in, not an unbiased mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub ci95: (f64, f64),
    pub censored_fraction: f64,
}

impl Estimate {
    /// Order-fixed reduction: samples are reduced in index order so the
    /// result is independent of how the sampling was scheduled.
    pub fn from_samples(samples: &[f64], censored: usize) -> Estimate {
        let n = samples.len();
        assert!(n > 0, "estimate needs at least one sample");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        let std_error = (var / n as f64).sqrt();
        Estimate {
            mean,
            std_error,
            n_samples: n,
            ci95: (mean - Z95 * std_error, mean + Z95 * std_error),
            censored_fraction: censored as f64 / n as f64,
        }
    }

    /// Interval at an arbitrary normal quantile.
    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.std_error, self.mean + z * self.std_error)
    }

    pub fn upper95(&self) -> f64 {
        self.ci95.1
    }
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn collect_estimate(
    n_traj: usize,
    sample: impl Fn(u64) -> (f64, bool) + Sync,
) -> Estimate {
    let drawn: Vec<(f64, bool)> =
        (0..n_traj as u64).into_par_iter().map(&sample).collect();
    let values: Vec<f64> = drawn.iter().map(|&(v, _)| v).collect();
    let censored = drawn.iter().filter(|&&(_, c)| c).count();
    Estimate::from_samples(&values, censored)
}

// ── Monte Carlo estimators ─────────────────────────────────────────────

/// Estimates `E exp(alpha * hit_time)` from `x0` over `n_traj` independent
/// trajectories. Samples that fail to hit the floor within the horizon are
/// kept pessimistically at `exp(alpha * horizon)` and counted as censored,
/// so the estimate stays a conservative check against an upper bound.
pub fn mc_hitting_moment(
    law: &dyn TransitionLaw,
    x0: State,
    alpha: f64,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Estimate {
    collect_estimate(n_traj, |i| {
        let mut rng = stream_rng(seed, i);
        let traj = crate::process::simulate_with_rng(law, x0, horizon, &mut rng);
        match traj.hit_time {
            Some(t) => ((alpha * t as f64).exp(), false),
            None => ((alpha * horizon as f64).exp(), true),
        }
    })
}

struct RiseSample {
    steps: usize,
    height: State,
    censored: bool,
}

/// Runs a nondecreasing run from `x0` until the first strictly falling step,
/// or until `cap` steps have been taken.
fn sample_rise<R: Rng>(law: &dyn TransitionLaw, x0: State, cap: usize, rng: &mut R) -> RiseSample {
    let mut memory = MemoryState::new(x0);
    let mut x = x0;
    for steps in 0..cap {
        let y = law.distribution(&memory).sample(rng);
        if y < x {
            return RiseSample { steps, height: x - x0, censored: false };
        }
        x = y;
        memory.update(y);
    }
    RiseSample { steps: cap, height: x - x0, censored: true }
}

struct FallSample {
    steps: usize,
    hit_floor: bool,
}

/// Runs a strictly falling run from `x0 > floor` until it breaks or enters
/// the target set. Falls of nonnegative integers terminate within `x0`
/// steps, so no cap is needed.
fn sample_fall<R: Rng>(law: &dyn TransitionLaw, x0: State, rng: &mut R) -> FallSample {
    let floor = law.floor();
    let mut memory = MemoryState::new(x0);
    let mut x = x0;
    let mut steps = 0;
    loop {
        let y = law.distribution(&memory).sample(rng);
        if y >= x {
            return FallSample { steps, hit_floor: false };
        }
        steps += 1;
        x = y;
        memory.update(y);
        if y <= floor {
            return FallSample { steps, hit_floor: true };
        }
    }
}

/// Estimates the exponential moment of completed nonempty rise durations,
/// `E[exp(alpha * rise_end) ; rise_end >= 1]`: a path whose first step falls
/// contributes zero. This is the series the rise-duration constant bounds
/// (its sum starts at length one), and at `alpha = 0` the estimate collapses
/// to the probability mass of a nondecreasing first step. The rise is
/// followed beyond the hitting time and capped only by `cap`.
pub fn mc_rise_duration(
    law: &dyn TransitionLaw,
    x0: State,
    alpha: f64,
    n_traj: usize,
    cap: usize,
    seed: u64,
) -> Estimate {
    collect_estimate(n_traj, |i| {
        let mut rng = stream_rng(seed, i);
        let rise = sample_rise(law, x0, cap, &mut rng);
        if rise.censored {
            ((alpha * rise.steps as f64).exp(), true)
        } else if rise.steps >= 1 {
            ((alpha * rise.steps as f64).exp(), false)
        } else {
            (0.0, false)
        }
    })
}

/// Estimates `E[exp(alpha * fall_end) ; fall_end < hit_time]` from `x0`:
/// falls that run into the floor contribute zero, and a first step that
/// does not fall contributes one (the fall ends at time zero, strictly
/// before the hitting time).
pub fn mc_fall_duration(
    law: &dyn TransitionLaw,
    x0: State,
    alpha: f64,
    n_traj: usize,
    seed: u64,
) -> Estimate {
    assert!(x0 > law.floor(), "fall-duration estimation starts above the floor");
    collect_estimate(n_traj, |i| {
        let mut rng = stream_rng(seed, i);
        let fall = sample_fall(law, x0, &mut rng);
        if fall.hit_floor {
            (0.0, false)
        } else {
            ((alpha * fall.steps as f64).exp(), false)
        }
    })
}

/// Estimates `E exp(alpha * (X_{rise_end} - x0))`: the exponential moment of
/// the height gained by the initial rise. A first step that falls gains no
/// height and contributes one. Censored rises contribute the height gained
/// so far (a lower bound) and are flagged.
pub fn mc_rise_height(
    law: &dyn TransitionLaw,
    x0: State,
    alpha: f64,
    n_traj: usize,
    cap: usize,
    seed: u64,
) -> Estimate {
    collect_estimate(n_traj, |i| {
        let mut rng = stream_rng(seed, i);
        let rise = sample_rise(law, x0, cap, &mut rng);
        ((alpha * f64::from(rise.height)).exp(), rise.censored)
    })
}

// ── Exact oracle on the extended chain ─────────────────────────────────

const DENSE_SOLVE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    /// Full descent run (generic laws).
    Run(Vec<State>),
    /// Current state and descent length (run-length-dependent laws).
    Depth(State, u32),
}

/// The finite Markov chain over memory states of a ceiling-bounded law,
/// with absorption at the target set `[0, floor]`. States are discovered by
/// reachability from the singleton memories above the floor; run-length
/// dependent laws use the collapsed `(state, depth)` space.
pub struct ExtendedChain {
    rows: Vec<Vec<(usize, f64)>>,
    absorb: Vec<f64>,
    starts: BTreeMap<State, usize>,
    floor: State,
    ceiling: State,
    collapsed: bool,
}

impl ExtendedChain {
    pub fn build(law: &dyn TransitionLaw, max_states: usize) -> Result<ExtendedChain, OracleError> {
        let ceiling = law.ceiling().ok_or(OracleError::CeilingRequired)?;
        let floor = law.floor();
        let collapsed = law.run_length_dependent();

        let mut index: HashMap<NodeKey, usize> = HashMap::new();
        let mut keys: Vec<NodeKey> = Vec::new();
        let mut starts = BTreeMap::new();
        for x in floor + 1..=ceiling {
            let key = if collapsed { NodeKey::Depth(x, 0) } else { NodeKey::Run(vec![x]) };
            index.insert(key.clone(), keys.len());
            starts.insert(x, keys.len());
            keys.push(key);
        }

        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut absorb: Vec<f64> = Vec::new();
        let mut next = 0usize;
        while next < keys.len() {
            if keys.len() > max_states {
                return Err(OracleError::StateBudgetExceeded { budget: max_states });
            }
            let key = keys[next].clone();
            let memory = match &key {
                NodeKey::Run(run) => {
                    MemoryState::try_from_run(run.clone()).expect("keys hold valid runs")
                }
                // Any representative run with this state and depth gives the
                // same distribution for a run-length-dependent law.
                NodeKey::Depth(x, k) => {
                    let run: Vec<State> = (0..=*k).map(|i| x + (k - i)).collect();
                    MemoryState::try_from_run(run).expect("representative run is decreasing")
                }
            };
            let x = memory.current();
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut r = 0.0;
            for &(y, p) in law.distribution(&memory).outcomes() {
                if p == 0.0 {
                    continue;
                }
                if y <= floor {
                    r += p;
                    continue;
                }
                let child = match &key {
                    NodeKey::Run(_) => NodeKey::Run(memory_update(&memory, y).as_slice().to_vec()),
                    NodeKey::Depth(_, k) => {
                        if y < x {
                            NodeKey::Depth(y, k + 1)
                        } else {
                            NodeKey::Depth(y, 0)
                        }
                    }
                };
                let j = *index.entry(child.clone()).or_insert_with(|| {
                    keys.push(child);
                    keys.len() - 1
                });
                match row.iter_mut().find(|(c, _)| *c == j) {
                    Some((_, q)) => *q += p,
                    None => row.push((j, p)),
                }
            }
            rows.push(row);
            absorb.push(r);
            next += 1;
        }

        Ok(ExtendedChain { rows, absorb, starts, floor, ceiling, collapsed })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed
    }

    /// Solves `(I - e^alpha P) h = e^alpha r` over the transient states:
    /// `h[s]` is the exponential hitting moment started from memory `s`.
    /// Direct dense elimination is used up to 2000 states and a convergent
    /// fixed-point iteration above; a singular system or a negative or
    /// non-finite solution component means the spectral condition fails and
    /// is reported as [`OracleError::AlphaTooLarge`].
    pub fn hitting_moments(&self, alpha: f64) -> Result<Vec<f64>, OracleError> {
        let n = self.n_states();
        let scale = alpha.exp();
        let h = if n <= DENSE_SOLVE_LIMIT {
            self.solve_dense(scale)?
        } else {
            self.solve_iterative(scale, alpha)?
        };
        if h.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(OracleError::AlphaTooLarge {
                alpha,
                detail: "solution has negative or non-finite components".into(),
            });
        }
        Ok(h)
    }

    /// `E exp(alpha * hit_time)` from a fresh start at `x0`.
    pub fn hitting_moment(&self, alpha: f64, x0: State) -> Result<f64, OracleError> {
        if x0 <= self.floor {
            return Ok(1.0);
        }
        let &i = self
            .starts
            .get(&x0)
            .ok_or(OracleError::StartAboveCeiling { x0, ceiling: self.ceiling })?;
        Ok(self.hitting_moments(alpha)?[i])
    }

    fn solve_dense(&self, scale: f64) -> Result<Vec<f64>, OracleError> {
        let n = self.n_states();
        let mut a = vec![0.0f64; n * n];
        let mut b: Vec<f64> = self.absorb.iter().map(|&r| scale * r).collect();
        for i in 0..n {
            a[i * n + i] = 1.0;
            for &(j, p) in &self.rows[i] {
                a[i * n + j] -= scale * p;
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
                .expect("nonempty range");
            let pivot = a[pivot_row * n + col];
            if pivot.abs() < 1e-300 {
                return Err(OracleError::AlphaTooLarge {
                    alpha: scale.ln(),
                    detail: "singular system".into(),
                });
            }
            if pivot_row != col {
                for k in col..n {
                    a.swap(col * n + k, pivot_row * n + k);
                }
                b.swap(col, pivot_row);
            }
            for row in col + 1..n {
                let f = a[row * n + col] / pivot;
                if f == 0.0 {
                    continue;
                }
                a[row * n + col] = 0.0;
                for k in col + 1..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut h = vec![0.0f64; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row * n + k] * h[k];
            }
            h[row] = acc / a[row * n + row];
        }
        Ok(h)
    }

    fn solve_iterative(&self, scale: f64, alpha: f64) -> Result<Vec<f64>, OracleError> {
        let n = self.n_states();
        let mut h = vec![0.0f64; n];
        let mut next = vec![0.0f64; n];
        for _ in 0..2_000_000 {
            let mut delta: f64 = 0.0;
            let mut magnitude: f64 = 0.0;
            for i in 0..n {
                let mut acc = self.absorb[i];
                for &(j, p) in &self.rows[i] {
                    acc += p * h[j];
                }
                next[i] = scale * acc;
                delta = delta.max((next[i] - h[i]).abs());
                magnitude = magnitude.max(next[i].abs());
            }
            std::mem::swap(&mut h, &mut next);
            if !magnitude.is_finite() || magnitude > 1e180 {
                return Err(OracleError::AlphaTooLarge {
                    alpha,
                    detail: "fixed-point iteration diverges".into(),
                });
            }
            if delta <= 1e-13 * (1.0 + magnitude) {
                return Ok(h);
            }
        }
        Err(OracleError::AlphaTooLarge { alpha, detail: "fixed-point iteration stalled".into() })
    }
}

// ── Dominance report ───────────────────────────────────────────────────

/// The verified quantities, one per certified constant plus the headline
/// hitting moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    RiseDuration,
    FallDuration,
    RiseHeight,
    HittingMoment,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::RiseDuration,
        Quantity::FallDuration,
        Quantity::RiseHeight,
        Quantity::HittingMoment,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::RiseDuration => "rise_duration",
            Quantity::FallDuration => "fall_duration",
            Quantity::RiseHeight => "rise_height",
            Quantity::HittingMoment => "hitting_moment",
        }
    }
}

/// One verified quantity at one start: the Monte Carlo estimate, the exact
/// value where an extended chain is available, the certified bound, and
/// whether every available check passed (upper CI at or below the bound,
/// exact value at or below the bound).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub quantity: Quantity,
    pub x0: State,
    pub alpha: f64,
    pub mc: Option<Estimate>,
    pub exact: Option<f64>,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
    pub note: Option<String>,
}

/// Monte Carlo budgets of a dominance run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn derived_seed(master: u64, quantity: Quantity, x0: State) -> u64 {
    let tag = match quantity {
        Quantity::RiseDuration => 1u64,
        Quantity::FallDuration => 2,
        Quantity::RiseHeight => 3,
        Quantity::HittingMoment => 4,
    };
    splitmix64(master ^ (tag << 48) ^ (u64::from(x0) << 16))
}

/// Runs every verified quantity at every start against its certified bound.
/// Constituent failures annotate their row and never abort the report.
pub fn dominance_report(
    law: &dyn TransitionLaw,
    profile: &LawProfile,
    x0_list: &[State],
    alpha: f64,
    budget: &McBudget,
    chain: Option<&ExtendedChain>,
) -> Vec<DominanceRow> {
    let q = profile.rise_prob_bound;
    let recurrence = recurrence_bound(alpha, profile);
    let moments = chain.map(|c| (c, c.hitting_moments(alpha)));

    let mut rows = Vec::new();
    for &x0 in x0_list {
        for quantity in Quantity::ALL {
            let mut notes: Vec<String> = Vec::new();

            if x0 <= law.floor() && quantity != Quantity::HittingMoment {
                rows.push(DominanceRow {
                    quantity,
                    x0,
                    alpha,
                    mc: None,
                    exact: None,
                    bound: None,
                    pass: None,
                    note: Some("start inside the target set".into()),
                });
                continue;
            }

            let bound = match quantity {
                Quantity::RiseDuration => rise_duration_bound(alpha, q)
                    .map_err(|e| notes.push(e.to_string()))
                    .ok(),
                Quantity::FallDuration => fall_duration_bound(alpha, &profile.down_bounds)
                    .map_err(|e| notes.push(e.to_string()))
                    .ok(),
                Quantity::RiseHeight => profile
                    .up_moment
                    .at(2.0 * alpha)
                    .map_err(|e| e.to_string())
                    .and_then(|m| {
                        rise_height_bound(alpha, q, m).map(|(_, m3)| m3).map_err(|e| e.to_string())
                    })
                    .map_err(|e| notes.push(e))
                    .ok(),
                Quantity::HittingMoment => {
                    if !recurrence.feasible {
                        notes.push(format!(
                            "bound infeasible at alpha {alpha}: {:?}",
                            recurrence.violated
                        ));
                    }
                    recurrence.bound_at(x0)
                }
            };

            // Flag estimators whose second moment is not certified at twice
            // the exponent; the estimate is still produced.
            let second_moment_certified = match quantity {
                Quantity::RiseDuration => rise_duration_bound(2.0 * alpha, q).is_ok(),
                Quantity::FallDuration => {
                    fall_duration_bound(2.0 * alpha, &profile.down_bounds).is_ok()
                }
                Quantity::RiseHeight => profile
                    .up_moment
                    .at(4.0 * alpha)
                    .is_ok_and(|m| rise_height_bound(2.0 * alpha, q, m).is_ok()),
                Quantity::HittingMoment => recurrence_bound(2.0 * alpha, profile).feasible,
            };
            if !second_moment_certified {
                notes.push("variance warning: second moment not certified at 2 alpha".into());
            }

            let seed = derived_seed(budget.seed, quantity, x0);
            let mc = match quantity {
                Quantity::RiseDuration => {
                    Some(mc_rise_duration(law, x0, alpha, budget.n_traj, budget.horizon, seed))
                }
                Quantity::FallDuration => {
                    Some(mc_fall_duration(law, x0, alpha, budget.n_traj, seed))
                }
                Quantity::RiseHeight => {
                    Some(mc_rise_height(law, x0, alpha, budget.n_traj, budget.horizon, seed))
                }
                Quantity::HittingMoment => {
                    Some(mc_hitting_moment(law, x0, alpha, budget.n_traj, budget.horizon, seed))
                }
            };
            if let Some(e) = &mc {
                if e.censored_fraction > 0.0 {
                    notes.push(format!(
                        "censored fraction {}: estimate is a flagged stand-in",
                        e.censored_fraction
                    ));
                }
            }

            let exact = match (quantity, &moments) {
                (Quantity::HittingMoment, Some((c, solved))) => match solved {
                    Ok(h) => {
                        if x0 <= law.floor() {
                            Some(1.0)
                        } else {
                            match c.starts.get(&x0) {
                                Some(&i) => Some(h[i]),
                                None => {
                                    notes.push(format!("start {x0} above the chain ceiling"));
                                    None
                                }
                            }
                        }
                    }
                    Err(e) => {
                        notes.push(format!("exact solve failed: {e}"));
                        None
                    }
                },
                _ => None,
            };

            let pass = bound.map(|b| {
                let mc_ok = mc.as_ref().is_none_or(|e| e.upper95() <= b);
                let exact_ok = exact.is_none_or(|v| v <= b);
                mc_ok && exact_ok
            });

            let note = if notes.is_empty() { None } else { Some(notes.join("; ")) };
            rows.push(DominanceRow { quantity, x0, alpha, mc, exact, bound, pass, note });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditOptions, LawProfile};
    use crate::process::{Distribution, FadingWalk, StepDownLaw};

    fn truncated_walk() -> FadingWalk {
        FadingWalk::default_with_ceiling(6)
    }

    fn truncated_profile() -> LawProfile {
        let law = truncated_walk();
        LawProfile::audit(&law, &AuditOptions { prefer_closed_form: false, ..Default::default() })
            .unwrap()
    }

    /// Independent oracle: sums `sum_t e^{alpha t} P(hit at t)` by forward
    /// probability propagation over raw runs, with an observed-ratio
    /// geometric tail certificate. Shares nothing with the linear solve.
    fn power_series_moment(law: &dyn TransitionLaw, x0: State, alpha: f64) -> f64 {
        let floor = law.floor();
        if x0 <= floor {
            return 1.0;
        }
        let mut mass: HashMap<Vec<State>, f64> = HashMap::new();
        mass.insert(vec![x0], 1.0);
        let mut total = 0.0;
        let mut recent: Vec<f64> = Vec::new();
        for t in 1..10_000usize {
            let mut next: HashMap<Vec<State>, f64> = HashMap::new();
            let mut absorbed = 0.0;
            for (run, p) in &mass {
                let memory = MemoryState::try_from_run(run.clone()).unwrap();
                for &(y, py) in law.distribution(&memory).outcomes() {
                    let m = p * py;
                    if y <= floor {
                        absorbed += m;
                    } else {
                        let child = memory_update(&memory, y).as_slice().to_vec();
                        *next.entry(child).or_insert(0.0) += m;
                    }
                }
            }
            let term = (alpha * t as f64).exp() * absorbed;
            total += term;
            recent.push(term);
            if recent.len() > 30 {
                recent.remove(0);
                let ratios: Vec<f64> = recent
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| w[1] / w[0])
                    .collect();
                if let Some(rho) = ratios.iter().copied().reduce(f64::max) {
                    if rho < 1.0 {
                        let tail = term * rho / (1.0 - rho);
                        if tail < 1e-12 {
                            return total + tail;
                        }
                    }
                }
            }
            mass = next;
        }
        panic!("power series did not certify convergence within the step cap");
    }

    #[test]
    fn exact_deterministic_descent_is_a_pure_exponential() {
        let law = StepDownLaw { floor: 0, ceiling: Some(8) };
        let chain = ExtendedChain::build(&law, 10_000).unwrap();
        for &alpha in &[0.0, 0.1, 0.4] {
            let v = chain.hitting_moment(alpha, 3).unwrap();
            assert!((v - (3.0 * alpha).exp()).abs() < 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn exact_at_zero_alpha_is_the_hitting_probability() {
        let chain = ExtendedChain::build(&truncated_walk(), 10_000).unwrap();
        for x0 in 1..=6 {
            let v = chain.hitting_moment(0.0, x0).unwrap();
            assert!((v - 1.0).abs() < 1e-10, "x0 {x0}: {v}");
        }
    }

    #[test]
    fn exact_matches_power_series_on_the_truncated_walk() {
        let law = truncated_walk();
        let chain = ExtendedChain::build(&law, 10_000).unwrap();
        for &alpha in &[0.0, 0.02, 0.05] {
            let solve = chain.hitting_moment(alpha, 3).unwrap();
            let series = power_series_moment(&law, 3, alpha);
            assert!((solve - series).abs() < 1e-8, "alpha {alpha}: {solve} vs {series}");
        }
    }

    #[test]
    fn collapsed_and_generic_state_spaces_agree() {
        // The walk is run-length dependent, so it builds collapsed; wrap it
        // so it loses the declaration and builds over raw runs.
        struct Generic(FadingWalk);
        impl TransitionLaw for Generic {
            fn floor(&self) -> State {
                self.0.floor()
            }
            fn ceiling(&self) -> Option<State> {
                self.0.ceiling()
            }
            fn distribution(&self, memory: &MemoryState) -> Distribution {
                self.0.distribution(memory)
            }
        }
        let collapsed = ExtendedChain::build(&truncated_walk(), 10_000).unwrap();
        let generic = ExtendedChain::build(&Generic(truncated_walk()), 10_000).unwrap();
        assert!(collapsed.is_collapsed());
        assert!(!generic.is_collapsed());
        assert!(collapsed.n_states() <= generic.n_states());
        for &alpha in &[0.0, 0.05] {
            for x0 in 1..=6 {
                let a = collapsed.hitting_moment(alpha, x0).unwrap();
                let b = generic.hitting_moment(alpha, x0).unwrap();
                assert!((a - b).abs() < 1e-11, "alpha {alpha} x0 {x0}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_is_monotone_in_alpha_and_start() {
        let chain = ExtendedChain::build(&truncated_walk(), 10_000).unwrap();
        let mut prev_by_x0 = [0.0f64; 7];
        for i in 0..10 {
            let alpha = 0.01 * f64::from(i);
            let mut prev = 0.0;
            for x0 in 1..=6u32 {
                let v = chain.hitting_moment(alpha, x0).unwrap();
                assert!(v >= prev, "not monotone in x0 at alpha {alpha}");
                assert!(v >= prev_by_x0[x0 as usize], "not monotone in alpha at x0 {x0}");
                prev = v;
                prev_by_x0[x0 as usize] = v;
            }
        }
    }

    #[test]
    fn exact_rejects_alpha_past_the_spectral_radius() {
        let chain = ExtendedChain::build(&truncated_walk(), 10_000).unwrap();
        assert!(matches!(
            chain.hitting_moment(3.0, 3),
            Err(OracleError::AlphaTooLarge { .. })
        ));
    }

    #[test]
    fn chain_budget_is_enforced() {
        assert!(matches!(
            ExtendedChain::build(&truncated_walk(), 3),
            Err(OracleError::StateBudgetExceeded { .. })
        ));
    }

    #[test]
    fn chain_requires_a_ceiling() {
        let law = FadingWalk::default_unbounded();
        assert!(matches!(
            ExtendedChain::build(&law, 1000),
            Err(OracleError::CeilingRequired)
        ));
    }

    #[test]
    fn iterative_and_dense_solves_agree() {
        let law = truncated_walk();
        let chain = ExtendedChain::build(&law, 10_000).unwrap();
        let dense = chain.solve_dense(0.05f64.exp()).unwrap();
        let iterative = chain.solve_iterative(0.05f64.exp(), 0.05).unwrap();
        for (a, b) in dense.iter().zip(&iterative) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mc_hitting_moment_is_trivial_inside_the_target_set() {
        let law = FadingWalk::default_unbounded();
        let e = mc_hitting_moment(&law, 0, 0.3, 500, 100, 11);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn mc_hitting_moment_of_deterministic_descent_is_exact() {
        let law = StepDownLaw { floor: 0, ceiling: None };
        let e = mc_hitting_moment(&law, 3, 0.1, 1000, 100, 5);
        assert!((e.mean - 0.3f64.exp()).abs() < 1e-13);
        assert!(e.std_error < 1e-13);
        assert_eq!(e.censored_fraction, 0.0);
    }

    #[test]
    fn mc_estimators_are_deterministic_and_scheduling_independent() {
        let law = truncated_walk();
        let a = mc_hitting_moment(&law, 3, 0.05, 20_000, 1000, 42);
        let b = mc_hitting_moment(&law, 3, 0.05, 20_000, 1000, 42);
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| mc_hitting_moment(&law, 3, 0.05, 20_000, 1000, 42));
        assert_eq!(a, c);
    }

    #[test]
    fn mc_rise_duration_with_no_rise_mass_is_zero() {
        // Only completed nonempty rises count; a law that always falls never
        // completes one.
        let law = StepDownLaw { floor: 0, ceiling: None };
        let e = mc_rise_duration(&law, 5, 0.1, 200, 1000, 3);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn mc_rise_duration_at_zero_alpha_is_the_rise_mass() {
        // At alpha = 0 the estimate collapses to P(first step nondecreasing),
        // which is 0.4 for the default walk away from the floor.
        let law = FadingWalk::default_unbounded();
        let e = mc_rise_duration(&law, 5, 0.0, 200_000, 1000, 17);
        assert!((e.mean - 0.4).abs() < 4.0 * e.std_error.max(1e-4), "mean {}", e.mean);
    }

    #[test]
    fn mc_rise_duration_matches_enumeration_oracle() {
        // Exhaustive enumeration over rise lengths with exact probabilities:
        // P(length k then a fall) = 0.4^k * 0.6 away from the floor.
        let alpha = 0.1;
        let oracle: f64 =
            (1..60).map(|k| (alpha * k as f64).exp() * 0.4f64.powi(k) * 0.6).sum();
        let law = FadingWalk::default_unbounded();
        let e = mc_rise_duration(&law, 5, alpha, 200_000, 1000, 23);
        let (lo, hi) = e.ci(Z99);
        assert!(lo <= oracle && oracle <= hi, "oracle {oracle} outside [{lo}, {hi}]");
    }

    #[test]
    fn mc_fall_duration_one_step_above_the_floor() {
        // From x0 = floor + 1 any fall is absorbed immediately, so only the
        // nondecreasing first step contributes: the value is exactly
        // P(first step >= 0) = 0.4.
        let law = FadingWalk::default_unbounded();
        let e = mc_fall_duration(&law, 1, 0.3, 200_000, 29);
        assert!((e.mean - 0.4).abs() < 4.0 * e.std_error.max(1e-4), "mean {}", e.mean);
    }

    #[test]
    fn mc_fall_duration_of_deterministic_descent_is_zero() {
        let law = StepDownLaw { floor: 0, ceiling: None };
        let e = mc_fall_duration(&law, 7, 0.2, 200, 31);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn mc_fall_duration_at_zero_alpha_is_at_most_one() {
        let law = FadingWalk::default_unbounded();
        let e = mc_fall_duration(&law, 5, 0.0, 50_000, 37);
        assert!(e.mean <= 1.0);
    }

    #[test]
    fn mc_rise_height_trivial_cases() {
        let down = StepDownLaw { floor: 0, ceiling: None };
        let e = mc_rise_height(&down, 5, 0.2, 200, 1000, 41);
        assert_eq!(e.mean, 1.0);
        let walk = FadingWalk::default_unbounded();
        let e0 = mc_rise_height(&walk, 5, 0.0, 5_000, 1000, 43);
        assert_eq!(e0.mean, 1.0);
    }

    #[test]
    fn mc_rise_height_matches_recursion_oracle() {
        // Away from the floor the height moment g solves
        // g = down + stay * g + up * e^alpha * g.
        let alpha: f64 = 0.1;
        let oracle = 0.6 / (0.8 - 0.2 * alpha.exp());
        let law = FadingWalk::default_unbounded();
        let e = mc_rise_height(&law, 5, alpha, 200_000, 1000, 47);
        let (lo, hi) = e.ci(Z99);
        assert!(lo <= oracle && oracle <= hi, "oracle {oracle} outside [{lo}, {hi}]");
    }

    #[test]
    fn dominance_report_on_the_truncated_walk_all_pass() {
        let law = truncated_walk();
        let profile = truncated_profile();
        let chain = ExtendedChain::build(&law, 10_000).unwrap();
        let budget = McBudget { n_traj: 20_000, horizon: 10_000, seed: 7 };
        let rows = dominance_report(&law, &profile, &[1, 3, 5], 0.05, &budget, Some(&chain));
        assert_eq!(rows.len(), 12);
        for row in &rows {
            assert_eq!(row.pass, Some(true), "row failed: {row:?}");
        }
    }

    #[test]
    fn dominance_report_annotates_infeasible_alpha() {
        let law = truncated_walk();
        let profile = truncated_profile();
        let rows = dominance_report(
            &law,
            &profile,
            &[3],
            0.8,
            &McBudget { n_traj: 100, horizon: 1000, seed: 1 },
            None,
        );
        let hitting = rows.iter().find(|r| r.quantity == Quantity::HittingMoment).unwrap();
        assert_eq!(hitting.bound, None);
        assert_eq!(hitting.pass, None);
        assert!(hitting.note.as_deref().unwrap_or("").contains("infeasible"));
    }

    #[test]
    fn dominance_report_of_empty_start_list_is_empty() {
        let law = truncated_walk();
        let profile = truncated_profile();
        let rows = dominance_report(
            &law,
            &profile,
            &[],
            0.05,
            &McBudget { n_traj: 10, horizon: 100, seed: 1 },
            None,
        );
        assert!(rows.is_empty());
    }
}
