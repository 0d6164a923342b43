//! Chat-step orchestration: pending prompts, interpret → arbitrate → solve →
//! measure, history, and persistence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{check_feasibility, solve, AllocError, ObjectiveTerms, SolveOutcome, SolveStatus};
use crate::control::{apply_prompt_batch, arbitrate, measure, ControlError, Problem, UpdateRates};
use crate::intent::{build_extractor, Diagnostics, Endpoints, ExtractorKind, IntentError, IntentExtractor, UpdateMarker};
use crate::model::{
    validate_topology, validate_users, Allocation, Entity, Measurement, ModelError, ParamMap, Topology, User, UserId,
    Violation, Weights,
};

pub const SNAPSHOT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("unknown {0}")]
    Unknown(Entity),
    #[error("service cannot be provisioned: initial allocation is infeasible")]
    InitialInfeasible,
    #[error("snapshot version mismatch: expected {SNAPSHOT_VERSION}, got {0}")]
    VersionMismatch(String),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("scenario error: {0}")]
    Scenario(String),
}

/// What happens when the requested update makes the problem infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibilityMode {
    /// Reject prompts until the remaining set is feasible.
    #[default]
    Arbitrated,
    /// Apply every update, report Infeasible, keep serving the last feasible
    /// allocation.
    PaperReplay,
}

impl std::str::FromStr for InfeasibilityMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arbitrated" => Ok(InfeasibilityMode::Arbitrated),
            "paper-replay" => Ok(InfeasibilityMode::PaperReplay),
            other => Err(format!("unknown mode '{other}' (expected arbitrated or paper-replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub rates: UpdateRates,
    #[serde(default = "default_extractor")]
    pub extractor: ExtractorKind,
    #[serde(default)]
    pub mode: InfeasibilityMode,
    /// Few-shot examples (llm) or training rows (svm) drawn from the bundled
    /// dataset; `None` uses all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
}

fn default_extractor() -> ExtractorKind {
    ExtractorKind::Keyword
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            weights: Weights::default(),
            rates: UpdateRates::default(),
            extractor: ExtractorKind::Keyword,
            mode: InfeasibilityMode::Arbitrated,
            shots: None,
        }
    }
}

impl SessionConfig {
    /// Builds the configured extractor against the bundled dataset.
    pub fn extractor(&self, endpoints: &Endpoints) -> Result<Arc<dyn IntentExtractor>, IntentError> {
        let mut training = crate::fixtures::appendix_a();
        if let Some(n) = self.shots {
            training.truncate(n);
        }
        build_extractor(self.extractor, &training, endpoints)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPrompt {
    pub user: UserId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub user: UserId,
    pub text: String,
    pub marker: UpdateMarker,
    pub accepted: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub prompts: Vec<PromptRecord>,
    pub params_before: ParamMap,
    pub params_after: ParamMap,
    pub status: SolveStatus,
    /// Allocation installed by this step; absent when Infeasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Allocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<ObjectiveTerms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<Measurement>,
}

impl StepResult {
    /// Copy with wall-clock fields zeroed, for equality checks.
    pub fn without_timing(&self) -> StepResult {
        let mut s = self.clone();
        for p in &mut s.prompts {
            p.diagnostics.elapsed_s = 0.0;
            p.diagnostics.topic_time_s = None;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub topology: Topology,
    pub users: Vec<User>,
    pub params: ParamMap,
    /// Standing allocation: the last one that was feasible.
    pub allocation: Allocation,
    pub measurement: Measurement,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub chat_step: usize,
    pub pending: Vec<PendingPrompt>,
    pub history: Vec<StepResult>,
    /// Result of the k=0 solve with no prompts.
    pub initial: StepResult,
    pub config: SessionConfig,
}

fn check_params(users: &[User], params: &ParamMap) -> Result<(), SessionError> {
    for u in users {
        params
            .get(&u.id)
            .ok_or(AllocError::MissingParams(u.id))?
            .validate()?;
    }
    if let Some(extra) = params.keys().find(|id| !users.iter().any(|u| u.id == **id)) {
        return Err(SessionError::Unknown(Entity::User(*extra)));
    }
    Ok(())
}

/// Creates a session and solves once with no prompts to establish the
/// standing allocation.
pub fn create_session(
    topology: Topology,
    users: Vec<User>,
    params: ParamMap,
    config: SessionConfig,
) -> Result<Session, SessionError> {
    let mut violations: Vec<Violation> = validate_topology(&topology);
    if violations.is_empty() {
        violations = validate_users(&topology, &users);
    }
    if !violations.is_empty() {
        return Err(ModelError::Validation(violations).into());
    }
    config.weights.validate()?;
    config.rates.validate()?;
    check_params(&users, &params)?;

    let outcome = solve(&topology, &users, &params, &Default::default(), &config.weights)?;
    let (Some(allocation), Some(objective), Some(terms)) = (outcome.allocation, outcome.objective, outcome.terms)
    else {
        return Err(SessionError::InitialInfeasible);
    };
    let measurement = measure(&topology, &users, &params, &allocation);
    let initial = StepResult {
        step: 0,
        prompts: Vec::new(),
        params_before: params.clone(),
        params_after: params.clone(),
        status: SolveStatus::Optimal,
        allocation: Some(allocation.clone()),
        objective: Some(objective),
        terms: Some(terms),
        measurement: Some(measurement.clone()),
    };
    Ok(Session {
        id: uuid::Uuid::new_v4().to_string(),
        topology,
        users,
        params,
        allocation,
        measurement,
        objective,
        terms,
        chat_step: 0,
        pending: Vec::new(),
        history: Vec::new(),
        initial,
        config,
    })
}

impl Session {
    /// Queues a prompt; returns its position in the pending list.
    pub fn submit_prompt(&mut self, user: UserId, text: &str) -> Result<usize, SessionError> {
        if !self.users.iter().any(|u| u.id == user) {
            return Err(SessionError::Unknown(Entity::User(user)));
        }
        if text.trim().is_empty() {
            return Err(IntentError::EmptyPrompt.into());
        }
        self.pending.push(PendingPrompt {
            user,
            text: text.to_string(),
        });
        Ok(self.pending.len() - 1)
    }

    /// Runs one chat step with the configured extractor.
    pub fn run_step(&mut self, endpoints: &Endpoints) -> Result<StepResult, SessionError> {
        let extractor = self.config.extractor(endpoints)?;
        self.run_step_with(extractor.as_ref())
    }

    pub fn run_step_with(&mut self, extractor: &dyn IntentExtractor) -> Result<StepResult, SessionError> {
        let mut records = Vec::with_capacity(self.pending.len());
        for p in &self.pending {
            let ex = extractor.extract(&p.text)?;
            records.push(PromptRecord {
                user: p.user,
                text: p.text.clone(),
                marker: ex.marker,
                accepted: false,
                diagnostics: ex.diagnostics,
            });
        }
        let markers: Vec<(UserId, UpdateMarker)> = records.iter().map(|r| (r.user, r.marker)).collect();
        let snapshot = self.measurement.clone();
        let prev = self.allocation.placement.clone();
        let problem = Problem {
            topology: &self.topology,
            users: &self.users,
            prev: &prev,
            weights: &self.config.weights,
        };
        let params_before = self.params.clone();

        let (params_after, outcome): (ParamMap, SolveOutcome) = match self.config.mode {
            InfeasibilityMode::Arbitrated => {
                let res = arbitrate(&problem, &self.params, &snapshot, &self.config.rates, &markers)?;
                for (r, a) in records.iter_mut().zip(&res.accept) {
                    r.accepted = *a;
                }
                (res.params_after, res.outcome)
            }
            InfeasibilityMode::PaperReplay => {
                let mut params = self.params.clone();
                for r in records.iter_mut() {
                    match apply_prompt_batch(&params, &[(r.user, r.marker)], &snapshot, &self.config.rates) {
                        Ok(next) => {
                            params = next;
                            r.accepted = true;
                        }
                        Err(ControlError::DegenerateMeasurement(_)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                let outcome = problem.solve(&params)?;
                (params, outcome)
            }
        };

        let mut result = StepResult {
            step: self.chat_step,
            prompts: records,
            params_before,
            params_after: params_after.clone(),
            status: outcome.status,
            allocation: None,
            objective: None,
            terms: None,
            measurement: None,
        };
        self.params = params_after;
        if let (Some(a), Some(obj), Some(terms)) = (outcome.allocation, outcome.objective, outcome.terms) {
            let m = measure(&self.topology, &self.users, &self.params, &a);
            self.allocation = a.clone();
            self.measurement = m.clone();
            self.objective = obj;
            self.terms = terms;
            result.allocation = Some(a);
            result.objective = Some(obj);
            result.terms = Some(terms);
            result.measurement = Some(m);
        }
        self.history.push(result.clone());
        self.chat_step += 1;
        self.pending.clear();
        Ok(result)
    }

    /// True when the standing allocation satisfies every constraint under
    /// the parameters it was computed for.
    pub fn standing_is_feasible(&self) -> bool {
        let params = self
            .history
            .iter()
            .rev()
            .find(|s| s.status == SolveStatus::Optimal)
            .map_or(&self.initial.params_after, |s| &s.params_after);
        check_feasibility(&self.topology, &self.users, params, &self.allocation).feasible
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let doc = SnapshotDoc {
            version: SNAPSHOT_VERSION.to_string(),
            session: Some(self.clone()),
        };
        serde_json::to_vec_pretty(&doc).expect("session serializes")
    }

    pub fn restore(bytes: &[u8]) -> Result<Session, SessionError> {
        #[derive(Deserialize)]
        struct Header {
            version: String,
        }
        let header: Header =
            serde_json::from_slice(bytes).map_err(|e| SessionError::CorruptPayload(e.to_string()))?;
        if header.version != SNAPSHOT_VERSION {
            return Err(SessionError::VersionMismatch(header.version));
        }
        let doc: SnapshotDoc = serde_json::from_slice(bytes).map_err(|e| SessionError::CorruptPayload(e.to_string()))?;
        let s = doc
            .session
            .ok_or_else(|| SessionError::CorruptPayload("missing session".into()))?;
        if s.chat_step != s.history.len() {
            return Err(SessionError::CorruptPayload(format!(
                "chat step {} does not match history length {}",
                s.chat_step,
                s.history.len()
            )));
        }
        Ok(s)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    version: String,
    session: Option<Session>,
}

/// One line of a replay script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub step: usize,
    pub user: UserId,
    pub text: String,
}

pub fn load_scenario(bytes: &[u8]) -> Result<Vec<ScenarioEntry>, SessionError> {
    let entries: Vec<ScenarioEntry> = serde_json::from_slice(bytes).map_err(|e| SessionError::Scenario(e.to_string()))?;
    if entries.windows(2).any(|w| w[1].step < w[0].step) {
        return Err(SessionError::Scenario("entries must be ordered by step".into()));
    }
    Ok(entries)
}

/// Submits each step's prompts in script order and runs one chat step per
/// distinct step value.
pub fn replay(
    session: &mut Session,
    scenario: &[ScenarioEntry],
    extractor: &dyn IntentExtractor,
) -> Result<Vec<StepResult>, SessionError> {
    let mut out = Vec::new();
    for group in scenario.chunk_by(|a, b| a.step == b.step) {
        for e in group {
            session.submit_prompt(e.user, &e.text)?;
        }
        out.push(session.run_step_with(extractor)?);
    }
    Ok(out)
}
