//! Parameter update rule, measurement, and multi-user arbitration.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{solve, AllocError, SolveOutcome};
use crate::intent::{Direction, UpdateMarker};
use crate::model::{Allocation, Entity, Measurement, ParamMap, Placement, ServiceParams, Topology, User, UserId, Weights};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("degenerate-measurement: {0}")]
    DegenerateMeasurement(String),
    #[error("invalid update rates: alpha and beta must exceed 1")]
    InvalidRates,
    #[error("unknown {0}")]
    Unknown(Entity),
    #[error("no measurement for user {0}")]
    MissingMeasurement(UserId),
    #[error("standing configuration infeasible")]
    StandingInfeasible,
    #[error("too many prompts for exhaustive arbitration ({0} > 16)")]
    TooManyPrompts(usize),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// Multiplicative update rates for CPU (alpha) and latency bound (beta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRates {
    pub alpha: f64,
    pub beta: f64,
}

impl UpdateRates {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ControlError> {
        let r = UpdateRates { alpha, beta };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.alpha.is_finite() && self.beta.is_finite() && self.alpha > 1.0 && self.beta > 1.0 {
            Ok(())
        } else {
            Err(ControlError::InvalidRates)
        }
    }
}

impl Default for UpdateRates {
    fn default() -> Self {
        UpdateRates { alpha: 2.0, beta: 1.5 }
    }
}

/// Applies one marker to a user's parameters.
///
/// CPU is re-anchored to the measured value in every case:
/// `cpu' = alpha^d_c * actual_cpu`. The latency bound is scaled up from the
/// current bound on +1, kept as is on 0, and re-anchored to
/// `actual_latency / beta` on -1.
pub fn update_params(
    p: &ServiceParams,
    marker: UpdateMarker,
    actual_cpu: f64,
    actual_latency: f64,
    rates: &UpdateRates,
) -> Result<ServiceParams, ControlError> {
    rates.validate()?;
    let cpu_param = match marker.cpu {
        Direction::Increase => rates.alpha * actual_cpu,
        Direction::Keep => actual_cpu,
        Direction::Decrease => actual_cpu / rates.alpha,
    };
    if !(cpu_param.is_finite() && cpu_param > 0.0) {
        return Err(ControlError::DegenerateMeasurement(format!(
            "actual cpu {actual_cpu} yields cpu parameter {cpu_param}"
        )));
    }
    let latency_bound = match marker.latency_bound {
        Direction::Increase => rates.beta * p.latency_bound,
        Direction::Keep => p.latency_bound,
        Direction::Decrease => actual_latency / rates.beta,
    };
    if !(latency_bound.is_finite() && latency_bound > 0.0) {
        return Err(ControlError::DegenerateMeasurement(format!(
            "actual latency {actual_latency} yields latency bound {latency_bound}"
        )));
    }
    Ok(ServiceParams {
        cpu_param,
        latency_bound,
    })
}

/// Measures a simulated network: assigned CPU equals the requested CPU,
/// latency is the route's summed link latency.
pub fn measure(t: &Topology, users: &[User], params: &ParamMap, a: &Allocation) -> Measurement {
    let mut m = Measurement::default();
    for u in users {
        if !a.placement.contains_key(&u.id) {
            continue;
        }
        if let Some(p) = params.get(&u.id) {
            m.actual_cpu.insert(u.id, p.cpu_param);
        }
        let latency = a
            .routes
            .get(&u.id)
            .map(|r| r.iter().filter_map(|l| t.link(*l)).map(|l| l.latency).sum())
            .unwrap_or(0.0);
        m.actual_latency.insert(u.id, latency);
    }
    m
}

/// Folds `update_params` over the markers in arrival order. Every fold
/// reads the same measurement snapshot.
pub fn apply_prompt_batch(
    params: &ParamMap,
    markers: &[(UserId, UpdateMarker)],
    meas: &Measurement,
    rates: &UpdateRates,
) -> Result<ParamMap, ControlError> {
    let mut out = params.clone();
    for (user, marker) in markers {
        let p = out.get(user).ok_or(ControlError::Unknown(Entity::User(*user)))?;
        let cpu = *meas.actual_cpu.get(user).ok_or(ControlError::MissingMeasurement(*user))?;
        let lat = *meas.actual_latency.get(user).ok_or(ControlError::MissingMeasurement(*user))?;
        let next = update_params(p, *marker, cpu, lat, rates)?;
        out.insert(*user, next);
    }
    Ok(out)
}

/// Inputs of one allocation problem apart from the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub topology: &'a Topology,
    pub users: &'a [User],
    pub prev: &'a Placement,
    pub weights: &'a Weights,
}

impl Problem<'_> {
    pub fn solve(&self, params: &ParamMap) -> Result<SolveOutcome, AllocError> {
        solve(self.topology, self.users, params, self.prev, self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationResult {
    pub accept: Vec<bool>,
    pub params_after: ParamMap,
    pub outcome: SolveOutcome,
}

/// Applies the accepted subset; `None` when the update itself is degenerate
/// or the resulting problem is infeasible.
fn try_subset(
    problem: &Problem<'_>,
    params: &ParamMap,
    meas: &Measurement,
    rates: &UpdateRates,
    prompts: &[(UserId, UpdateMarker)],
    accept: &[bool],
) -> Result<Option<(ParamMap, SolveOutcome)>, ControlError> {
    let chosen: Vec<(UserId, UpdateMarker)> = prompts
        .iter()
        .zip(accept)
        .filter(|(_, a)| **a)
        .map(|(p, _)| *p)
        .collect();
    let next = match apply_prompt_batch(params, &chosen, meas, rates) {
        Ok(p) => p,
        Err(ControlError::DegenerateMeasurement(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let outcome = problem.solve(&next)?;
    Ok(outcome.is_optimal().then_some((next, outcome)))
}

fn check_prompts(users: &[User], prompts: &[(UserId, UpdateMarker)]) -> Result<(), ControlError> {
    for (u, _) in prompts {
        if !users.iter().any(|x| x.id == *u) {
            return Err(ControlError::Unknown(Entity::User(*u)));
        }
    }
    Ok(())
}

/// Accepts the largest set of prompts whose joint update keeps the
/// allocation problem feasible.
///
/// Subsets are tried by cardinality, largest first; within one cardinality
/// in lexicographic order of prompt indices, so earlier arrivals win ties.
pub fn arbitrate(
    problem: &Problem<'_>,
    params: &ParamMap,
    meas: &Measurement,
    rates: &UpdateRates,
    prompts: &[(UserId, UpdateMarker)],
) -> Result<ArbitrationResult, ControlError> {
    check_prompts(problem.users, prompts)?;
    let m = prompts.len();
    let standing = problem.solve(params)?;
    if !standing.is_optimal() {
        return Err(ControlError::StandingInfeasible);
    }
    for size in (1..=m).rev() {
        for combo in (0..m).combinations(size) {
            let mut accept = vec![false; m];
            combo.iter().for_each(|&i| accept[i] = true);
            if let Some((params_after, outcome)) = try_subset(problem, params, meas, rates, prompts, &accept)? {
                return Ok(ArbitrationResult {
                    accept,
                    params_after,
                    outcome,
                });
            }
        }
    }
    Ok(ArbitrationResult {
        accept: vec![false; m],
        params_after: params.clone(),
        outcome: standing,
    })
}

/// Reference arbitration over all `2^M` acceptance vectors (M <= 16).
pub fn brute_force_arbitrate(
    problem: &Problem<'_>,
    params: &ParamMap,
    meas: &Measurement,
    rates: &UpdateRates,
    prompts: &[(UserId, UpdateMarker)],
) -> Result<ArbitrationResult, ControlError> {
    check_prompts(problem.users, prompts)?;
    let m = prompts.len();
    if m > 16 {
        return Err(ControlError::TooManyPrompts(m));
    }
    if !problem.solve(params)?.is_optimal() {
        return Err(ControlError::StandingInfeasible);
    }
    let mut best: Option<(usize, Vec<bool>, ParamMap, SolveOutcome)> = None;
    for mask in 0u32..(1 << m) {
        let accept: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let Some((p, outcome)) = try_subset(problem, params, meas, rates, prompts, &accept)? else {
            continue;
        };
        let count = mask.count_ones() as usize;
        // Vec<bool> orders false < true, so the larger vector accepts earlier prompts.
        let better = best
            .as_ref()
            .is_none_or(|(c, a, _, _)| count > *c || (count == *c && accept > *a));
        if better {
            best = Some((count, accept, p, outcome));
        }
    }
    let (_, accept, params_after, outcome) = best.expect("empty subset is feasible");
    Ok(ArbitrationResult {
        accept,
        params_after,
        outcome,
    })
}
