//! Memory states, transition laws, trajectory simulation and path statistics.
//!
//! The processes handled here live on the nonnegative integers (optionally
//! capped by a finite ceiling). A process is Markov while it rises or stays
//! flat; once it starts falling, the one-step distribution may depend on the
//! whole current descent run. The [`MemoryState`] type is exactly that run,
//! so any law expressed as a function of it has the one-sided Markov
//! structure by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// State values: nonnegative integers, `0..=ceiling` when a ceiling is set.
pub type State = u32;

/// Tolerance for "probabilities sum to one" checks.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("invalid law parameters: {0}")]
    InvalidParams(String),
    #[error("invalid distribution for memory state {memory:?}: {reason}")]
    InvalidDistribution { memory: Vec<State>, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatError {
    /// The monotone run defining the statistic reaches the last recorded
    /// state without breaking, so its end lies beyond the trajectory.
    #[error("monotone run starting at index {start} does not break within the recorded trajectory")]
    RunExceedsTrajectory { start: usize },
}

// ── Memory ─────────────────────────────────────────────────────────────

/// The current descent run `X_{start}, ..., X_n`: a nonempty, strictly
/// decreasing sequence whose last entry is the current state. A singleton
/// means the last step was nondecreasing (or the process just started), in
/// which case the next step depends on the current state alone.
///
/// Runs of nonnegative integers are strictly decreasing, so the length is
/// bounded by `peak + 1`; no artificial cap is needed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryState {
    run: Vec<State>,
}

impl MemoryState {
    /// Fresh memory holding only the current state.
    pub fn new(x: State) -> Self {
        MemoryState { run: vec![x] }
    }

    /// Builds a memory state from an explicit run, checking that it is
    /// nonempty and strictly decreasing.
    pub fn try_from_run(run: Vec<State>) -> Result<Self, LawError> {
        if run.is_empty() {
            return Err(LawError::InvalidParams("memory run must be nonempty".into()));
        }
        if !run.windows(2).all(|w| w[0] > w[1]) {
            return Err(LawError::InvalidParams(format!(
                "memory run {run:?} is not strictly decreasing"
            )));
        }
        Ok(MemoryState { run })
    }

    /// Advances the memory by one observed step: a strict down-move extends
    /// the run, any other move resets it to the new state alone. Flat moves
    /// count as nondecreasing, so they reset.
    pub fn update(&mut self, x_next: State) {
        if x_next < self.current() {
            self.run.push(x_next);
        } else {
            self.run.clear();
            self.run.push(x_next);
        }
    }

    /// Current state (last entry of the run).
    pub fn current(&self) -> State {
        *self.run.last().expect("memory run is nonempty")
    }

    /// First entry of the run: the pre-descent peak.
    pub fn peak(&self) -> State {
        self.run[0]
    }

    /// Number of completed down-steps in the run (0 for a singleton).
    pub fn descent_len(&self) -> usize {
        self.run.len() - 1
    }

    pub fn as_slice(&self) -> &[State] {
        &self.run
    }
}

impl fmt::Display for MemoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.run.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Pure function of a memory state: [`MemoryState::update`] applied to a copy.
pub fn memory_update(memory: &MemoryState, x_next: State) -> MemoryState {
    let mut next = memory.clone();
    next.update(x_next);
    next
}

// ── Distributions and laws ─────────────────────────────────────────────

/// A finite probability distribution over next states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    outcomes: Vec<(State, f64)>,
}

impl Distribution {
    /// Builds a distribution, dropping zero-mass outcomes and checking that
    /// masses are nonnegative and sum to one within [`MASS_TOLERANCE`].
    pub fn new(outcomes: Vec<(State, f64)>) -> Result<Self, String> {
        let mut kept: Vec<(State, f64)> = Vec::with_capacity(outcomes.len());
        let mut sum = 0.0;
        for (y, p) in outcomes {
            if !p.is_finite() || p < 0.0 {
                return Err(format!("probability {p} for state {y} is not a valid mass"));
            }
            sum += p;
            if p > 0.0 {
                match kept.iter_mut().find(|(k, _)| *k == y) {
                    Some((_, q)) => *q += p,
                    None => kept.push((y, p)),
                }
            }
        }
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(format!("masses sum to {sum}, expected 1"));
        }
        kept.sort_by_key(|&(y, _)| y);
        Ok(Distribution { outcomes: kept })
    }

    pub fn outcomes(&self) -> &[(State, f64)] {
        &self.outcomes
    }

    /// Total mass on states strictly below `x`.
    pub fn mass_below(&self, x: State) -> f64 {
        self.outcomes.iter().filter(|&&(y, _)| y < x).map(|&(_, p)| p).sum()
    }

    /// Mass on one target state.
    pub fn mass_at(&self, y: State) -> f64 {
        self.outcomes.iter().find(|&&(t, _)| t == y).map_or(0.0, |&(_, p)| p)
    }

    /// One-step moment `sum_y p(y) * exp(alpha * max(y - x, 0))` of the
    /// positive part of the jump from `x`.
    pub fn up_jump_moment(&self, x: State, alpha: f64) -> f64 {
        self.outcomes
            .iter()
            .map(|&(y, p)| p * (alpha * f64::from(y.saturating_sub(x))).exp())
            .sum()
    }

    /// Samples an outcome by inverse CDF; the last outcome absorbs any
    /// floating-point remainder.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> State {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(y, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return y;
            }
        }
        self.outcomes.last().expect("distribution is nonempty").0
    }
}

/// Declared geometric bound `1 - kappa_k <= coeff * ratio^k` on how fast the
/// per-depth down-probability bounds approach one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricTail {
    pub coeff: f64,
    pub ratio: f64,
}

/// A transition kernel expressed as a pure function of the memory state.
///
/// Because the output may depend on the past only through the descent run,
/// every implementation automatically has the one-sided Markov structure:
/// a singleton run means the next step depends on the current state alone.
pub trait TransitionLaw: Send + Sync {
    /// Floor of the target set `[0, floor]`.
    fn floor(&self) -> State;

    /// Ceiling of the state space, if finite.
    fn ceiling(&self) -> Option<State>;

    /// One-step distribution given the current memory.
    fn distribution(&self, memory: &MemoryState) -> Distribution;

    /// True if the distribution depends on the memory only through the
    /// current state and the descent length. Enables collapsed state spaces
    /// in exact computations.
    fn run_length_dependent(&self) -> bool {
        false
    }

    /// Declared tail model for the per-depth down-probability bounds.
    fn declared_tail(&self) -> Option<GeometricTail> {
        None
    }

    /// Closed-form per-depth down-probability bounds, when the law knows them.
    fn down_bounds_closed_form(&self, _m_max: usize) -> Option<crate::audit::DownProbBounds> {
        None
    }

    /// Closed-form uniform exponential moment of the positive jump part.
    fn up_moment_closed_form(&self) -> Option<crate::audit::UpJumpMoment> {
        None
    }

    /// Closed-form floor mixing level (minimum stay/step-up mass at states
    /// at or below the floor).
    fn floor_mixing_closed_form(&self) -> Option<f64> {
        None
    }
}

/// Parameters of the fading walk: a nearest-neighbour walk whose stay and
/// up masses halve with every completed step of the current descent, the
/// freed mass going to the down move. Defaults give the classic
/// `1/5, 1/5, 3/5` interior split with a `1/2, 1/2` reflection at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingWalkParams {
    pub up: f64,
    pub stay: f64,
    pub down: f64,
    pub floor_up: f64,
    pub floor_stay: f64,
}

impl Default for FadingWalkParams {
    fn default() -> Self {
        FadingWalkParams {
            up: 1.0 / 5.0,
            stay: 1.0 / 5.0,
            down: 3.0 / 5.0,
            floor_up: 1.0 / 2.0,
            floor_stay: 1.0 / 2.0,
        }
    }
}

impl FadingWalkParams {
    pub fn validate(&self) -> Result<(), LawError> {
        for (name, v) in [
            ("up", self.up),
            ("stay", self.stay),
            ("down", self.down),
            ("floor_up", self.floor_up),
            ("floor_stay", self.floor_stay),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(LawError::InvalidParams(format!("{name} = {v} is not a probability")));
            }
        }
        if (self.up + self.stay + self.down - 1.0).abs() > MASS_TOLERANCE {
            return Err(LawError::InvalidParams(format!(
                "up + stay + down = {} must equal 1",
                self.up + self.stay + self.down
            )));
        }
        if (self.floor_up + self.floor_stay - 1.0).abs() > MASS_TOLERANCE {
            return Err(LawError::InvalidParams(format!(
                "floor_up + floor_stay = {} must equal 1",
                self.floor_up + self.floor_stay
            )));
        }
        Ok(())
    }
}

/// The fading walk. At an interior state with `k` completed down-steps the
/// one-step distribution is
///
/// ```text
/// P(x-1) = down + (up + stay) * (1 - 2^-k)
/// P(x)   = stay * 2^-k
/// P(x+1) = up   * 2^-k
/// ```
///
/// and at zero it is `P(1) = floor_up`, `P(0) = floor_stay` regardless of
/// the memory. With a finite ceiling the up mass at the top state is
/// redirected to the stay move, which preserves total mass and keeps the
/// down mass unchanged.
#[derive(Debug, Clone)]
pub struct FadingWalk {
    params: FadingWalkParams,
    floor: State,
    ceiling: Option<State>,
}

impl FadingWalk {
    pub fn new(params: FadingWalkParams, floor: State, ceiling: Option<State>) -> Result<Self, LawError> {
        params.validate()?;
        if let Some(c) = ceiling {
            if c < 1 {
                return Err(LawError::InvalidParams("ceiling must be at least 1".into()));
            }
            if floor >= c {
                return Err(LawError::InvalidParams(format!(
                    "floor {floor} must be below ceiling {c}"
                )));
            }
        }
        Ok(FadingWalk { params, floor, ceiling })
    }

    /// Classic default parameters, floor 0, unbounded state space.
    pub fn default_unbounded() -> Self {
        FadingWalk::new(FadingWalkParams::default(), 0, None).expect("defaults are valid")
    }

    /// Classic default parameters with a finite ceiling.
    pub fn default_with_ceiling(ceiling: State) -> Self {
        FadingWalk::new(FadingWalkParams::default(), 0, Some(ceiling)).expect("defaults are valid")
    }

    pub fn params(&self) -> &FadingWalkParams {
        &self.params
    }

    fn fade(descent_len: usize) -> f64 {
        // 2^-k underflows to 0 beyond the f64 exponent range, which is the
        // correct limit for the distribution.
        if descent_len >= 1100 {
            0.0
        } else {
            0.5f64.powi(descent_len as i32)
        }
    }
}

impl TransitionLaw for FadingWalk {
    fn floor(&self) -> State {
        self.floor
    }

    fn ceiling(&self) -> Option<State> {
        self.ceiling
    }

    fn distribution(&self, memory: &MemoryState) -> Distribution {
        let x = memory.current();
        let p = &self.params;
        let outcomes = if x == 0 {
            vec![(0, p.floor_stay), (1, p.floor_up)]
        } else {
            let w = Self::fade(memory.descent_len());
            let down = p.down + (p.up + p.stay) * (1.0 - w);
            let stay = p.stay * w;
            let up = p.up * w;
            if self.ceiling == Some(x) {
                vec![(x - 1, down), (x, stay + up)]
            } else {
                vec![(x - 1, down), (x, stay), (x + 1, up)]
            }
        };
        Distribution::new(outcomes).expect("fading walk masses sum to one")
    }

    fn run_length_dependent(&self) -> bool {
        true
    }

    fn declared_tail(&self) -> Option<GeometricTail> {
        Some(GeometricTail { coeff: self.params.up + self.params.stay, ratio: 0.5 })
    }

    fn down_bounds_closed_form(&self, m_max: usize) -> Option<crate::audit::DownProbBounds> {
        let slack = self.params.up + self.params.stay;
        // With a finite ceiling, no descent above the floor can be deeper
        // than the band admits; those depths are vacuously bounded by one.
        let max_depth = self.ceiling.map(|c| (c - self.floor - 1) as usize);
        let mut head = Vec::with_capacity(m_max + 1);
        for k in 0..=m_max {
            if max_depth.is_some_and(|d| k > d) {
                head.push(1.0);
                continue;
            }
            let bound = 1.0 - slack * Self::fade(k);
            if slack > 0.0 && bound >= 1.0 {
                // Deeper bounds round to one in f64 without being one; stop
                // the head here and leave them to the tail model.
                break;
            }
            head.push(bound);
        }
        Some(crate::audit::DownProbBounds::new(head, self.declared_tail()))
    }

    fn up_moment_closed_form(&self) -> Option<crate::audit::UpJumpMoment> {
        // Unit up-jumps only; the worst state is whichever of the floor or a
        // fresh interior state carries more up mass.
        let mass = self.params.up.max(self.params.floor_up);
        Some(crate::audit::UpJumpMoment::single_jump(1, mass))
    }

    fn floor_mixing_closed_form(&self) -> Option<f64> {
        let p = &self.params;
        let at_zero = p.floor_up.min(p.floor_stay);
        if self.floor == 0 {
            return Some(at_zero);
        }
        match self.ceiling {
            None => Some(0.0), // descent length above an interior floor state is unbounded
            Some(c) => {
                let mut rho = at_zero;
                for x in 1..=self.floor {
                    let max_len = (c - x) as usize;
                    let w = Self::fade(max_len);
                    rho = rho.min((p.stay * w).min(p.up * w));
                }
                Some(rho)
            }
        }
    }
}

/// Degenerate kernel that steps down by one everywhere above zero and stays
/// at zero. Useful as a calibration law: hitting times are deterministic.
#[derive(Debug, Clone, Copy)]
pub struct StepDownLaw {
    pub floor: State,
    pub ceiling: Option<State>,
}

impl TransitionLaw for StepDownLaw {
    fn floor(&self) -> State {
        self.floor
    }

    fn ceiling(&self) -> Option<State> {
        self.ceiling
    }

    fn distribution(&self, memory: &MemoryState) -> Distribution {
        let x = memory.current();
        let next = x.saturating_sub(1);
        Distribution::new(vec![(next, 1.0)]).expect("unit mass")
    }

    fn run_length_dependent(&self) -> bool {
        true
    }
}

/// One table row: a memory run and the outcome masses of its next step.
pub type TableRow = (Vec<State>, Vec<(State, f64)>);

/// A law given by an explicit table of memory states with a fallback kernel
/// for everything not listed.
pub struct TabularLaw {
    table: BTreeMap<Vec<State>, Distribution>,
    fallback: Box<dyn TransitionLaw>,
    tail: Option<GeometricTail>,
}

impl TabularLaw {
    /// Validates every listed distribution (and the runs that key them);
    /// the fallback is assumed valid by construction.
    pub fn new(
        entries: Vec<TableRow>,
        fallback: Box<dyn TransitionLaw>,
        tail: Option<GeometricTail>,
    ) -> Result<Self, LawError> {
        let ceiling = fallback.ceiling();
        let mut table = BTreeMap::new();
        for (run, outcomes) in entries {
            MemoryState::try_from_run(run.clone())
                .map_err(|_| LawError::InvalidDistribution {
                    memory: run.clone(),
                    reason: "key is not a strictly decreasing run".into(),
                })?;
            let dist = Distribution::new(outcomes).map_err(|reason| {
                LawError::InvalidDistribution { memory: run.clone(), reason }
            })?;
            if let Some(c) = ceiling {
                if run.iter().any(|&v| v > c) || dist.outcomes().iter().any(|&(y, _)| y > c) {
                    return Err(LawError::InvalidDistribution {
                        memory: run,
                        reason: format!("state above ceiling {c}"),
                    });
                }
            }
            table.insert(run, dist);
        }
        Ok(TabularLaw { table, fallback, tail })
    }
}

impl fmt::Debug for TabularLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TabularLaw")
            .field("entries", &self.table.len())
            .field("tail", &self.tail)
            .finish_non_exhaustive()
    }
}

impl TransitionLaw for TabularLaw {
    fn floor(&self) -> State {
        self.fallback.floor()
    }

    fn ceiling(&self) -> Option<State> {
        self.fallback.ceiling()
    }

    fn distribution(&self, memory: &MemoryState) -> Distribution {
        match self.table.get(memory.as_slice()) {
            Some(dist) => dist.clone(),
            None => self.fallback.distribution(memory),
        }
    }

    fn declared_tail(&self) -> Option<GeometricTail> {
        self.tail.or_else(|| self.fallback.declared_tail())
    }
}

// ── Trajectories ───────────────────────────────────────────────────────

/// A realized path `X_0..X_T` together with the floor it was run against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub floor: State,
    /// Least `t` with `states[t] <= floor`, or `None` if the path never
    /// enters the target set within the horizon.
    pub hit_time: Option<usize>,
    pub horizon: usize,
}

impl Trajectory {
    /// Length of the descent run ending at index `t` (number of states).
    pub fn run_length_at(&self, t: usize) -> usize {
        t - descent_start(&self.states, t) + 1
    }
}

/// Samples a path from `x0`, advancing the memory one observed step at a
/// time and stopping at the first state at or below the law's floor, or
/// after `horizon` steps. Identical inputs produce identical paths.
pub fn simulate(law: &dyn TransitionLaw, x0: State, horizon: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(law, x0, horizon, &mut rng)
}

/// As [`simulate`], drawing from a caller-provided stream.
pub fn simulate_with_rng<R: Rng>(
    law: &dyn TransitionLaw,
    x0: State,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let floor = law.floor();
    let mut states = vec![x0];
    if x0 <= floor {
        return Trajectory { states, floor, hit_time: Some(0), horizon };
    }
    let mut memory = MemoryState::new(x0);
    let mut hit_time = None;
    for t in 0..horizon {
        let x = law.distribution(&memory).sample(rng);
        states.push(x);
        memory.update(x);
        if x <= floor {
            hit_time = Some(t + 1);
            break;
        }
    }
    Trajectory { states, floor, hit_time, horizon }
}

// ── Path statistics ────────────────────────────────────────────────────

/// Start index of the descent run ending at `n`: the smallest `k <= n` such
/// that every step from `k` to `n-1` is strictly down. Equals `n` when the
/// step into `n` was nondecreasing or `n` is 0.
pub fn descent_start(states: &[State], n: usize) -> usize {
    assert!(n < states.len(), "index {n} out of range");
    let mut k = n;
    while k > 0 && states[k - 1] > states[k] {
        k -= 1;
    }
    k
}

/// End index of the nondecreasing run starting at `n`: the largest `k >= n`
/// such that every step from `n` to `k-1` is nondecreasing. Equals `n` when
/// the first step falls. Errors if the run is still alive at the last
/// recorded state.
pub fn rise_end(states: &[State], n: usize) -> Result<usize, StatError> {
    monotone_run_end(states, n, |a, b| b >= a)
}

/// End index of the strictly decreasing run starting at `n`; `n` itself when
/// the first step does not fall. Errors if the run is still alive at the
/// last recorded state.
pub fn fall_end(states: &[State], n: usize) -> Result<usize, StatError> {
    monotone_run_end(states, n, |a, b| b < a)
}

fn monotone_run_end(
    states: &[State],
    n: usize,
    step_continues: impl Fn(State, State) -> bool,
) -> Result<usize, StatError> {
    assert!(n < states.len(), "index {n} out of range");
    let mut k = n;
    while k + 1 < states.len() && step_continues(states[k], states[k + 1]) {
        k += 1;
    }
    if k + 1 == states.len() {
        // Never saw the step that breaks the run.
        return Err(StatError::RunExceedsTrajectory { start: n });
    }
    Ok(k)
}

// ── Alternation epochs ─────────────────────────────────────────────────

/// Whether the path is falling or rising at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartPhase {
    /// The first step falls.
    Falling,
    /// The first step is nondecreasing.
    Rising,
}

/// Alternating fall-end epochs `T_i` and rise-end epochs `t_i` extracted
/// from a path. In the falling case both sequences start at 0; in the
/// rising case `T_0 = 0` and `t_0` is the end of the initial rise. The
/// decomposition is truncated at the hitting time or at the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochDecomposition {
    pub start: StartPhase,
    /// `T_0, T_1, ...`: times at which a fall ends (or the path is absorbed).
    pub fall_ends: Vec<usize>,
    /// `t_0, t_1, ...`: times at which a rise ends.
    pub rise_ends: Vec<usize>,
}

/// Extracts the alternation epochs of a trajectory with at least two states.
pub fn epochs(traj: &Trajectory) -> EpochDecomposition {
    let states = &traj.states;
    assert!(states.len() >= 2, "epoch decomposition needs at least two states");
    let last = states.len() - 1;
    let absorbed_at = traj.hit_time;

    let start = if states[1] < states[0] { StartPhase::Falling } else { StartPhase::Rising };
    let mut fall_ends = vec![0];
    let mut rise_ends = Vec::new();

    let mut cursor = match start {
        StartPhase::Falling => {
            rise_ends.push(0);
            0
        }
        StartPhase::Rising => match rise_end(states, 0) {
            Ok(t0) => {
                rise_ends.push(t0);
                t0
            }
            Err(_) => {
                // The initial rise is still alive at the end of the record.
                return EpochDecomposition { start, fall_ends, rise_ends };
            }
        },
    };

    loop {
        // Fall from the last rise end.
        match fall_end(states, cursor) {
            Ok(t_fall) => {
                fall_ends.push(t_fall);
                cursor = t_fall;
            }
            Err(_) => {
                if absorbed_at == Some(last) {
                    // The fall ran into the floor: the attempt succeeded and
                    // the hitting time is this fall's end.
                    fall_ends.push(last);
                }
                break;
            }
        }
        if absorbed_at == Some(cursor) {
            break;
        }
        // Rise from the fall end.
        match rise_end(states, cursor) {
            Ok(t_rise) => {
                rise_ends.push(t_rise);
                cursor = t_rise;
            }
            Err(_) => break,
        }
    }

    EpochDecomposition { start, fall_ends, rise_ends }
}
