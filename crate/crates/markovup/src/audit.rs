//! Quantitative audit of a transition law: per-depth down-probability
//! bounds, their infinite product, the uniform exponential moment of upward
//! jumps, and the mixing level at the floor.
//!
//! Everything here is one-sided. Products and series are reported as
//! certified bounds (value plus rigorous error), never as truncations
//! passed off as exact values; enumerated quantities record the bounds of
//! the enumeration so the audit is reproducible.

use crate::process::{Distribution, GeometricTail, MemoryState, State, TransitionLaw};
use itertools::Itertools;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("a finite ceiling is required to enumerate memory states")]
    CeilingRequired,
    #[error("no tail model declared and the head does not certify convergence")]
    TailUnknown,
    #[error("enumeration budget of {budget} states exceeded")]
    EnumerationBudgetExceeded { budget: usize },
    #[error("exponential moment requested at {alpha} outside its validity range (< {limit})")]
    MomentValidityExceeded { alpha: f64, limit: f64 },
}

/// Named assumption failures surfaced by the audit. Violations are
/// reported, never silently repaired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssumptionViolation {
    /// Some state at or below the floor lacks stay or step-up mass.
    FloorMixingAbsent,
    /// Some memory state above the floor has zero down mass.
    NoDownMass { depth: usize },
    /// The per-depth down bounds are not nondecreasing.
    DownBoundsNotMonotone { depth: usize },
    /// The infinite product of down bounds vanishes.
    DescentNeverCertain,
}

// ── Per-depth down-probability bounds ──────────────────────────────────

/// Lower bounds, indexed by the number of completed down-steps, on the
/// probability that a fall above the floor continues. `head[k]` covers
/// descents of depth `k`; a geometric tail model certifies every deeper
/// depth. The sequence is expected to be nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownProbBounds {
    pub head: Vec<f64>,
    pub tail: Option<GeometricTail>,
}

/// A certified value of a convergent infinite product: the true value lies
/// in `[value, value + error_bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductEstimate {
    pub value: f64,
    pub error_bound: f64,
}

impl DownProbBounds {
    pub fn new(head: Vec<f64>, tail: Option<GeometricTail>) -> Self {
        DownProbBounds { head, tail }
    }

    /// Bound at depth `k`, if covered by the head.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.head.get(k).copied()
    }

    /// True if the head ends exactly at one; by monotonicity every deeper
    /// bound is then also one and no tail model is needed.
    pub fn head_reaches_one(&self) -> bool {
        self.head.last() == Some(&1.0)
    }

    /// Depths at which the head fails to be nondecreasing.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.head
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0])
            .map(|(k, _)| k + 1)
            .collect()
    }

    /// The infinite product of the bounds, computed in log space with the
    /// tail certified analytically from `-ln(1 - x) <= x / (1 - x)`.
    pub fn infinite_product(&self) -> Result<ProductEstimate, AuditError> {
        if self.head.iter().any(|&k| k <= 0.0) {
            return Ok(ProductEstimate { value: 0.0, error_bound: 0.0 });
        }
        let log_head: f64 = self.head.iter().map(|&k| k.ln()).sum();
        let head_prod = log_head.exp();
        if self.head_reaches_one() {
            return Ok(ProductEstimate { value: head_prod, error_bound: 0.0 });
        }
        let tail = self.tail.ok_or(AuditError::TailUnknown)?;
        let depth = self.head.len();
        // For k >= depth: 1 - kappa_k <= coeff * ratio^k =: x_k, so
        //   0 <= -sum ln(kappa_k) <= sum x_k / (1 - x_max)
        let x_max = tail.coeff * tail.ratio.powi(depth as i32);
        let ratio_ok = tail.ratio.is_finite() && tail.ratio < 1.0;
        if !ratio_ok || x_max >= 1.0 {
            return Err(AuditError::TailUnknown);
        }
        let tail_sum = x_max / (1.0 - tail.ratio);
        let correction = tail_sum / (1.0 - x_max);
        let value = (log_head - correction).exp();
        Ok(ProductEstimate { value, error_bound: head_prod - value })
    }
}

// ── Uniform exponential moment of upward jumps ─────────────────────────

/// Positive-jump profile of one memory state: the mass placed on each
/// positive jump size. The moment of the state is
/// `1 - total_up_mass + sum_j mass_j * exp(alpha * j)`.
pub type JumpProfile = Vec<(u32, f64)>;

/// The uniform exponential moment `alpha -> sup_state E exp(alpha * (jump)+)`
/// as the pointwise maximum over the distinct positive-jump profiles seen
/// across memory states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpJumpMoment {
    pub profiles: Vec<JumpProfile>,
    /// Exclusive upper limit of validity, if the model is only certified on
    /// a bounded range.
    pub valid_up_to: Option<f64>,
}

impl UpJumpMoment {
    /// Model whose worst state puts `mass` on a single jump of size `jump`.
    pub fn single_jump(jump: u32, mass: f64) -> Self {
        UpJumpMoment { profiles: vec![vec![(jump, mass)]], valid_up_to: None }
    }

    /// Moment model of a law with no upward jumps.
    pub fn trivial() -> Self {
        UpJumpMoment { profiles: vec![vec![]], valid_up_to: None }
    }

    /// Evaluates the moment at `alpha >= 0`.
    pub fn at(&self, alpha: f64) -> Result<f64, AuditError> {
        assert!(alpha >= 0.0, "exponential moment needs alpha >= 0");
        if let Some(limit) = self.valid_up_to {
            if alpha >= limit {
                return Err(AuditError::MomentValidityExceeded { alpha, limit });
            }
        }
        let m = self
            .profiles
            .iter()
            .map(|profile| {
                let up_mass: f64 = profile.iter().map(|&(_, p)| p).sum();
                1.0 - up_mass
                    + profile
                        .iter()
                        .map(|&(j, p)| p * (alpha * f64::from(j)).exp())
                        .sum::<f64>()
            })
            .fold(1.0, f64::max);
        Ok(m)
    }
}

// ── Enumeration over memory states ─────────────────────────────────────

/// Budgets for enumerating memory states of a ceiling-bounded law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    /// Maximum number of memory states visited before giving up.
    pub max_states: usize,
    /// Maximum run length considered.
    pub max_run_len: usize,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration { max_states: 200_000, max_run_len: 64 }
    }
}

/// Enumerated per-depth down bounds: for each depth `m` up to `m_max`, the
/// minimum down mass over every strictly decreasing run of `m + 1` values
/// inside `(floor, ceiling]`. Depths that admit no such run are vacuously
/// bounded by one. The tail model is whatever the law declares.
pub fn down_bounds_enumerated(
    law: &dyn TransitionLaw,
    m_max: usize,
    exploration: Exploration,
) -> Result<DownProbBounds, AuditError> {
    let ceiling = law.ceiling().ok_or(AuditError::CeilingRequired)?;
    let floor = law.floor();
    let values: Vec<State> = (floor + 1..=ceiling).collect();
    let mut head = Vec::with_capacity(m_max + 1);
    let mut visited = 0usize;
    for m in 0..=m_max {
        let len = m + 1;
        if len > values.len() || len > exploration.max_run_len {
            head.push(1.0);
            continue;
        }
        let mut min_down = f64::INFINITY;
        for combo in values.iter().copied().combinations(len) {
            visited += 1;
            if visited > exploration.max_states {
                return Err(AuditError::EnumerationBudgetExceeded {
                    budget: exploration.max_states,
                });
            }
            let run: Vec<State> = combo.into_iter().rev().collect();
            let memory = MemoryState::try_from_run(run).expect("combination is decreasing");
            let x = memory.current();
            let down = law.distribution(&memory).mass_below(x);
            min_down = min_down.min(down);
        }
        head.push(min_down);
    }
    Ok(DownProbBounds::new(head, law.declared_tail()))
}

/// All memory states reachable through positive-probability down-steps from
/// the singleton states of a ceiling-bounded law (values in `[0, ceiling]`).
fn reachable_memories(
    law: &dyn TransitionLaw,
    exploration: Exploration,
) -> Result<Vec<MemoryState>, AuditError> {
    let ceiling = law.ceiling().ok_or(AuditError::CeilingRequired)?;
    let mut queue: Vec<MemoryState> = (0..=ceiling).map(MemoryState::new).collect();
    let mut seen: HashSet<Vec<State>> = queue.iter().map(|m| m.as_slice().to_vec()).collect();
    let mut out = Vec::new();
    while let Some(memory) = queue.pop() {
        if out.len() >= exploration.max_states {
            return Err(AuditError::EnumerationBudgetExceeded {
                budget: exploration.max_states,
            });
        }
        let dist = law.distribution(&memory);
        if memory.as_slice().len() < exploration.max_run_len {
            for &(y, p) in dist.outcomes() {
                if p > 0.0 && y < memory.current() {
                    let mut child = memory.clone();
                    child.update(y);
                    if seen.insert(child.as_slice().to_vec()) {
                        queue.push(child);
                    }
                }
            }
        }
        out.push(memory);
    }
    Ok(out)
}

fn jump_profile(dist: &Distribution, x: State) -> JumpProfile {
    dist.outcomes()
        .iter()
        .filter(|&&(y, _)| y > x)
        .map(|&(y, p)| (y - x, p))
        .collect()
}

/// Enumerated exponential-moment model: the distinct positive-jump profiles
/// over every reachable memory state of a ceiling-bounded law.
pub fn up_moment_enumerated(
    law: &dyn TransitionLaw,
    exploration: Exploration,
) -> Result<UpJumpMoment, AuditError> {
    let mut profiles: Vec<JumpProfile> = Vec::new();
    for memory in reachable_memories(law, exploration)? {
        let profile = jump_profile(&law.distribution(&memory), memory.current());
        if !profiles.contains(&profile) {
            profiles.push(profile);
        }
    }
    profiles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(UpJumpMoment { profiles, valid_up_to: None })
}

/// Minimum over states `x` at or below the floor, and over reachable
/// memories ending at `x`, of `min(P(next = x), P(next = x + 1))`.
pub fn floor_mixing_enumerated(
    law: &dyn TransitionLaw,
    exploration: Exploration,
) -> Result<f64, AuditError> {
    let floor = law.floor();
    let mut rho = f64::INFINITY;
    for memory in reachable_memories(law, exploration)? {
        let x = memory.current();
        if x > floor {
            continue;
        }
        let dist = law.distribution(&memory);
        rho = rho.min(dist.mass_at(x).min(dist.mass_at(x + 1)));
    }
    if rho.is_infinite() {
        rho = 0.0;
    }
    Ok(rho)
}

// ── The audited profile ────────────────────────────────────────────────

/// How each audited quantity was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AuditMode {
    ClosedForm,
    Enumerated { ceiling: State, max_states: usize, max_run_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Depths covered by the head of the down-bound sequence.
    pub m_max: usize,
    pub exploration: Exploration,
    /// Prefer closed forms when the law provides them.
    pub prefer_closed_form: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { m_max: 64, exploration: Exploration::default(), prefer_closed_form: true }
    }
}

/// Everything the recurrence bounds consume, audited from a law: the floor
/// mixing level, the per-depth down bounds with their infinite product, the
/// complementary step-up and failed-descent probabilities, and the uniform
/// exponential moment of upward jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawProfile {
    /// Minimum stay/step-up mass at states at or below the floor.
    pub floor_mixing: f64,
    pub down_bounds: DownProbBounds,
    /// Upper bound on the probability of a nondecreasing step above the
    /// floor (one minus the depth-zero down bound).
    pub rise_prob_bound: f64,
    /// Certified value of the infinite product of the down bounds: a lower
    /// bound on the probability that a started descent never breaks.
    pub unbroken_descent: ProductEstimate,
    /// One minus the product: upper bound on the probability that a single
    /// descent fails to reach the floor.
    pub descent_failure_prob: f64,
    pub up_moment: UpJumpMoment,
    pub violations: Vec<AssumptionViolation>,
    pub mode: AuditMode,
}

impl LawProfile {
    /// Audits a law, preferring closed forms where available and falling
    /// back to enumeration (which needs a finite ceiling).
    pub fn audit(law: &dyn TransitionLaw, options: &AuditOptions) -> Result<LawProfile, AuditError> {
        let closed = options.prefer_closed_form;

        let (down_bounds, bounds_closed) = match law
            .down_bounds_closed_form(options.m_max)
            .filter(|_| closed)
        {
            Some(b) => (b, true),
            None => (down_bounds_enumerated(law, options.m_max, options.exploration)?, false),
        };
        let (up_moment, moment_closed) = match law.up_moment_closed_form().filter(|_| closed) {
            Some(m) => (m, true),
            None => (up_moment_enumerated(law, options.exploration)?, false),
        };
        let (floor_mixing, mixing_closed) = match law.floor_mixing_closed_form().filter(|_| closed)
        {
            Some(r) => (r, true),
            None => (floor_mixing_enumerated(law, options.exploration)?, false),
        };

        let mode = if bounds_closed && moment_closed && mixing_closed {
            AuditMode::ClosedForm
        } else {
            AuditMode::Enumerated {
                ceiling: law.ceiling().unwrap_or(State::MAX),
                max_states: options.exploration.max_states,
                max_run_len: options.exploration.max_run_len,
            }
        };

        let mut violations = Vec::new();
        if floor_mixing <= 0.0 {
            violations.push(AssumptionViolation::FloorMixingAbsent);
        }
        for (k, &b) in down_bounds.head.iter().enumerate() {
            if b <= 0.0 {
                violations.push(AssumptionViolation::NoDownMass { depth: k });
            }
        }
        for k in down_bounds.monotonicity_violations() {
            violations.push(AssumptionViolation::DownBoundsNotMonotone { depth: k });
        }

        let unbroken_descent = match down_bounds.infinite_product() {
            Ok(p) => p,
            Err(AuditError::TailUnknown) => ProductEstimate { value: 0.0, error_bound: 1.0 },
            Err(e) => return Err(e),
        };
        if unbroken_descent.value <= 0.0 {
            violations.push(AssumptionViolation::DescentNeverCertain);
        }

        let rise_prob_bound = 1.0 - down_bounds.head.first().copied().unwrap_or(0.0);
        Ok(LawProfile {
            floor_mixing,
            rise_prob_bound,
            descent_failure_prob: 1.0 - unbroken_descent.value,
            unbroken_descent,
            down_bounds,
            up_moment,
            violations,
            mode,
        })
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{FadingWalk, FadingWalkParams, StepDownLaw};

    /// Frozen 300-factor product of `1 - 0.4 * 2^-k` computed in extended
    /// precision.
    const UNBROKEN_DESCENT_DEFAULTS: f64 = 0.390219565272591;

    #[test]
    fn closed_form_down_bounds_match_hand_values() {
        let law = FadingWalk::default_unbounded();
        let bounds = law.down_bounds_closed_form(8).unwrap();
        assert_eq!(bounds.at(0), Some(3.0 / 5.0));
        assert_eq!(bounds.at(2), Some(0.9));
        // The bounds approach one but never reach it: the head stops before
        // rounding would make them indistinguishable from one.
        let deep = law.down_bounds_closed_form(200).unwrap();
        assert!(deep.head.len() > 40);
        assert!(deep.head.iter().all(|&b| b < 1.0));
        assert!(1.0 - deep.head.last().unwrap() < 1e-15);
    }

    #[test]
    fn enumerated_bounds_match_closed_form_exactly() {
        let law = FadingWalk::default_with_ceiling(12);
        let closed = law.down_bounds_closed_form(8).unwrap();
        let enumerated = down_bounds_enumerated(&law, 8, Exploration::default()).unwrap();
        for k in 0..=8 {
            let d = (closed.at(k).unwrap() - enumerated.at(k).unwrap()).abs();
            assert!(d <= 1e-12, "depth {k}: {d}");
        }
        assert!(enumerated.monotonicity_violations().is_empty());
    }

    #[test]
    fn deterministic_descent_has_unit_bounds() {
        let law = StepDownLaw { floor: 0, ceiling: Some(10) };
        let bounds = down_bounds_enumerated(&law, 6, Exploration::default()).unwrap();
        assert!(bounds.head.iter().all(|&k| k == 1.0));
    }

    #[test]
    fn law_without_down_mass_is_flagged() {
        // Every state above the floor moves up with probability one.
        struct RiseLaw;
        impl TransitionLaw for RiseLaw {
            fn floor(&self) -> State {
                0
            }
            fn ceiling(&self) -> Option<State> {
                Some(5)
            }
            fn distribution(&self, memory: &MemoryState) -> Distribution {
                let x = memory.current();
                let y = if x >= 5 { 5 } else { x + 1 };
                Distribution::new(vec![(y, 1.0)]).unwrap()
            }
        }
        let profile = LawProfile::audit(&RiseLaw, &AuditOptions::default()).unwrap();
        assert_eq!(profile.down_bounds.at(0), Some(0.0));
        assert!(profile.violations.contains(&AssumptionViolation::NoDownMass { depth: 0 }));
    }

    #[test]
    fn infinite_product_of_unit_bounds_is_one() {
        let bounds = DownProbBounds::new(vec![1.0, 1.0, 1.0], None);
        let p = bounds.infinite_product().unwrap();
        assert_eq!(p.value, 1.0);
        assert_eq!(p.error_bound, 0.0);
    }

    #[test]
    fn infinite_product_of_complete_head_is_the_finite_product() {
        let bounds = DownProbBounds::new(vec![0.5, 1.0], None);
        let p = bounds.infinite_product().unwrap();
        assert!((p.value - 0.5).abs() < 1e-15);
        assert_eq!(p.error_bound, 0.0);
    }

    #[test]
    fn infinite_product_matches_extended_precision_oracle() {
        let law = FadingWalk::default_unbounded();
        let bounds = law.down_bounds_closed_form(60).unwrap();
        let p = bounds.infinite_product().unwrap();
        assert!(p.error_bound <= 1e-10);
        assert!((p.value - UNBROKEN_DESCENT_DEFAULTS).abs() <= 1e-12 + p.error_bound);
    }

    #[test]
    fn infinite_product_error_bound_covers_head_doubling() {
        let law = FadingWalk::default_unbounded();
        let short = law.down_bounds_closed_form(30).unwrap().infinite_product().unwrap();
        let long = law.down_bounds_closed_form(60).unwrap().infinite_product().unwrap();
        assert!((long.value - short.value).abs() < short.error_bound);
    }

    #[test]
    fn product_without_tail_model_is_rejected() {
        let bounds = DownProbBounds::new(vec![0.6, 0.8], None);
        assert_eq!(bounds.infinite_product(), Err(AuditError::TailUnknown));
    }

    #[test]
    fn up_moment_is_one_at_zero() {
        let law = FadingWalk::default_unbounded();
        let m = law.up_moment_closed_form().unwrap();
        assert_eq!(m.at(0.0).unwrap(), 1.0);
        let e = up_moment_enumerated(&FadingWalk::default_with_ceiling(8), Exploration::default())
            .unwrap();
        assert_eq!(e.at(0.0).unwrap(), 1.0);
    }

    #[test]
    fn up_moment_closed_form_matches_enumeration() {
        // Direct evaluation over every reachable memory state of the
        // truncated walk against the closed form (1 + e^alpha) / 2.
        let law = FadingWalk::default_with_ceiling(8);
        let closed = law.up_moment_closed_form().unwrap();
        let enumerated = up_moment_enumerated(&law, Exploration::default()).unwrap();
        for i in 0..30 {
            let alpha = 0.02 * f64::from(i);
            let c = closed.at(alpha).unwrap();
            let e = enumerated.at(alpha).unwrap();
            assert!((c - e).abs() < 1e-14, "alpha {alpha}: {c} vs {e}");
            assert!((c - (1.0 + alpha.exp()) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn up_moment_is_nondecreasing_in_alpha() {
        let law = FadingWalk::default_unbounded();
        let m = law.up_moment_closed_form().unwrap();
        let mut prev = 0.0;
        for i in 0..50 {
            let v = m.at(0.05 * f64::from(i)).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn up_moment_stays_below_three_before_ln_two() {
        let law = FadingWalk::default_unbounded();
        let m = law.up_moment_closed_form().unwrap();
        let v = m.at(0.6).unwrap();
        assert!(v < 3.0);
        assert!((v - (1.0 + 0.6f64.exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn floor_mixing_of_defaults_is_one_half() {
        let law = FadingWalk::default_unbounded();
        assert_eq!(law.floor_mixing_closed_form(), Some(0.5));
        let truncated = FadingWalk::default_with_ceiling(8);
        let e = floor_mixing_enumerated(&truncated, Exploration::default()).unwrap();
        assert_eq!(e, 0.5);
    }

    #[test]
    fn floor_mixing_with_asymmetric_reflection() {
        let params = FadingWalkParams { floor_up: 0.3, floor_stay: 0.7, ..Default::default() };
        let law = FadingWalk::new(params, 0, None).unwrap();
        assert_eq!(law.floor_mixing_closed_form(), Some(0.3));
    }

    #[test]
    fn absorbing_floor_state_is_flagged() {
        // P(0 -> 0) = 1: no step-up mass at the floor.
        let law = StepDownLaw { floor: 0, ceiling: Some(6) };
        let profile = LawProfile::audit(&law, &AuditOptions::default()).unwrap();
        assert_eq!(profile.floor_mixing, 0.0);
        assert!(profile.violations.contains(&AssumptionViolation::FloorMixingAbsent));
    }

    #[test]
    fn audit_of_defaults_is_clean_apart_from_nothing() {
        let law = FadingWalk::default_unbounded();
        let profile = LawProfile::audit(&law, &AuditOptions::default()).unwrap();
        assert!(profile.is_clean());
        assert_eq!(profile.rise_prob_bound, 0.4);
        assert_eq!(profile.floor_mixing, 0.5);
        assert!((profile.unbroken_descent.value - UNBROKEN_DESCENT_DEFAULTS).abs() < 1e-12);
        assert_eq!(profile.mode, AuditMode::ClosedForm);
    }
}
