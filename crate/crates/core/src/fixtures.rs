//! Bundled data: the Internet2-like topology, user sets, prompt scenarios,
//! the labeled prompt dataset, and the LLM input template.

use crate::intent::{load_dataset, LabeledSample};
use crate::model::{load_topology, load_users, ParamMap, Topology, User};
use crate::session::{load_scenario, ScenarioEntry};

pub const INTERNET2_LIKE: &str = include_str!("../fixtures/topologies/internet2-like.json");
pub const SINGLE_USER: &str = include_str!("../fixtures/users/single_user.json");
pub const MULTI_USER: &str = include_str!("../fixtures/users/multi_user.json");
pub const SINGLE_USER_SCENARIO: &str = include_str!("../fixtures/scenarios/single_user.json");
pub const MULTI_USER_SCENARIO: &str = include_str!("../fixtures/scenarios/multi_user.json");
pub const APPENDIX_A: &str = include_str!("../fixtures/datasets/appendix_a.tsv");
pub const LLM_TEMPLATE: &str = include_str!("../fixtures/templates/llm_input.txt");

pub fn internet2_like() -> Topology {
    load_topology(INTERNET2_LIKE.as_bytes()).expect("bundled topology is valid")
}

pub fn single_user() -> (Vec<User>, ParamMap) {
    load_users(SINGLE_USER.as_bytes()).expect("bundled users are valid")
}

pub fn multi_user() -> (Vec<User>, ParamMap) {
    load_users(MULTI_USER.as_bytes()).expect("bundled users are valid")
}

pub fn appendix_a() -> Vec<LabeledSample> {
    load_dataset(APPENDIX_A.as_bytes()).expect("bundled dataset is valid")
}

pub fn single_user_scenario() -> Vec<ScenarioEntry> {
    load_scenario(SINGLE_USER_SCENARIO.as_bytes()).expect("bundled scenario is valid")
}

pub fn multi_user_scenario() -> Vec<ScenarioEntry> {
    load_scenario(MULTI_USER_SCENARIO.as_bytes()).expect("bundled scenario is valid")
}

/// Looks up a bundled document by short name, as accepted on the command
/// line and by the gateway.
pub fn by_name(name: &str) -> Option<&'static str> {
    Some(match name {
        "internet2-like" | "topologies/internet2-like.json" => INTERNET2_LIKE,
        "single-user" | "single_user" | "users/single_user.json" => SINGLE_USER,
        "multi-user" | "multi_user" | "users/multi_user.json" => MULTI_USER,
        "scenario-single-user" | "scenarios/single_user.json" => SINGLE_USER_SCENARIO,
        "scenario-multi-user" | "scenarios/multi_user.json" => MULTI_USER_SCENARIO,
        "appendix_a" | "appendix-a" | "datasets/appendix_a.tsv" => APPENDIX_A,
        "llm_input" | "templates/llm_input.txt" => LLM_TEMPLATE,
        _ => return None,
    })
}
