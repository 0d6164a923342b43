//! Network, user, parameter, and allocation data model.
//!
//! Links are directed. The topology document accepts a `bidirectional`
//! flag that expands one entry into two opposite links; the reverse link
//! receives a fresh id above every id declared in the document.
//! Units are fixed: bandwidth and traffic in Gbps, latency in ms, CPU in cores.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Router index.
    RouterId
);
id_type!(
    /// Directed link index.
    LinkId
);
id_type!(
    /// Datacenter index.
    DcId
);
id_type!(
    /// User index.
    UserId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Router {
    pub id: RouterId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub src: RouterId,
    pub dst: RouterId,
    /// Capacity in Gbps.
    pub bandwidth: f64,
    /// Propagation latency in ms.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datacenter {
    pub id: DcId,
    pub router: RouterId,
    pub cpu_capacity: f64,
}

/// Directed network with attached datacenters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Topology {
    pub routers: Vec<Router>,
    pub links: Vec<Link>,
    pub datacenters: Vec<Datacenter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    /// Attachment router.
    pub router: RouterId,
    /// Traffic volume in Gbps.
    pub traffic: f64,
}

/// The updatable per-user specification: required CPU and latency bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceParams {
    pub cpu_param: f64,
    pub latency_bound: f64,
}

impl ServiceParams {
    pub fn new(cpu_param: f64, latency_bound: f64) -> Result<Self, ModelError> {
        let p = ServiceParams {
            cpu_param,
            latency_bound,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.cpu_param.is_finite() && self.cpu_param > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "cpu_param must be positive and finite, got {}",
                self.cpu_param
            )));
        }
        if !(self.latency_bound.is_finite() && self.latency_bound > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "latency_bound must be positive and finite, got {}",
                self.latency_bound
            )));
        }
        Ok(())
    }
}

pub type ParamMap = BTreeMap<UserId, ServiceParams>;
pub type Placement = BTreeMap<UserId, DcId>;

/// VM placement plus per-user routes stored as ordered link lists.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub placement: Placement,
    pub routes: BTreeMap<UserId, Vec<LinkId>>,
}

impl Allocation {
    /// Indicator form of the routing variable for one user, aligned to `t.links`.
    pub fn route_indicator(&self, t: &Topology, user: UserId) -> Vec<u8> {
        let route = self.routes.get(&user);
        t.links
            .iter()
            .map(|l| route.is_some_and(|r| r.contains(&l.id)) as u8)
            .collect()
    }
}

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Weights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self, ModelError> {
        let w = Weights { w1, w2, w3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.w1, self.w2, self.w3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(ModelError::InvalidWeights("weights must not all be zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Weights {
        Weights {
            w1: self.w1 * factor,
            w2: self.w2 * factor,
            w3: self.w3 * factor,
        }
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w1: 1.0,
            w2: 0.01,
            w3: 0.05,
        }
    }
}

/// Measured CPU assignment and path latency per user.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub actual_cpu: BTreeMap<UserId, f64>,
    pub actual_latency: BTreeMap<UserId, f64>,
}

/// Entity a validation violation refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Entity {
    Topology,
    Router(RouterId),
    Link(LinkId),
    Datacenter(DcId),
    User(UserId),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Topology => write!(f, "topology"),
            Entity::Router(id) => write!(f, "router {id}"),
            Entity::Link(id) => write!(f, "link {id}"),
            Entity::Datacenter(id) => write!(f, "datacenter {id}"),
            Entity::User(id) => write!(f, "user {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: Entity,
    pub rule: String,
}

impl Violation {
    fn new(entity: Entity, rule: &str) -> Self {
        Violation {
            entity,
            rule: rule.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation failed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("unknown {0}")]
    Unknown(Entity),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

impl Topology {
    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.iter().find(|l| l.id == id)
    }

    pub fn datacenter(&self, id: DcId) -> Option<&Datacenter> {
        self.datacenters.iter().find(|d| d.id == id)
    }

    pub fn has_router(&self, id: RouterId) -> bool {
        self.routers.iter().any(|r| r.id == id)
    }

    pub fn router_ids(&self) -> impl Iterator<Item = RouterId> + '_ {
        self.routers.iter().map(|r| r.id)
    }
}

/// Checks every topology invariant and reports all violations found.
pub fn validate_topology(t: &Topology) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.routers.is_empty() {
        out.push(Violation::new(Entity::Topology, "no-routers"));
    }
    if t.datacenters.is_empty() {
        out.push(Violation::new(Entity::Topology, "no-datacenters"));
    }

    let mut seen = HashSet::new();
    for r in &t.routers {
        if !seen.insert(r.id) {
            out.push(Violation::new(Entity::Router(r.id), "duplicate-id"));
        }
    }
    let routers: HashSet<RouterId> = seen;

    let mut seen = HashSet::new();
    for l in &t.links {
        let e = Entity::Link(l.id);
        if !seen.insert(l.id) {
            out.push(Violation::new(e.clone(), "duplicate-id"));
        }
        if !routers.contains(&l.src) || !routers.contains(&l.dst) {
            out.push(Violation::new(e.clone(), "dangling-router"));
        }
        if l.src == l.dst {
            out.push(Violation::new(e.clone(), "self-loop"));
        }
        if !l.bandwidth.is_finite() {
            out.push(Violation::new(e.clone(), "nonfinite-bandwidth"));
        } else if l.bandwidth <= 0.0 {
            out.push(Violation::new(e.clone(), "nonpositive-bandwidth"));
        }
        if !l.latency.is_finite() {
            out.push(Violation::new(e.clone(), "nonfinite-latency"));
        } else if l.latency <= 0.0 {
            out.push(Violation::new(e, "nonpositive-latency"));
        }
    }

    let mut seen = HashSet::new();
    for d in &t.datacenters {
        let e = Entity::Datacenter(d.id);
        if !seen.insert(d.id) {
            out.push(Violation::new(e.clone(), "duplicate-id"));
        }
        if !routers.contains(&d.router) {
            out.push(Violation::new(e.clone(), "dangling-router"));
        }
        if !d.cpu_capacity.is_finite() {
            out.push(Violation::new(e, "nonfinite-capacity"));
        } else if d.cpu_capacity <= 0.0 {
            out.push(Violation::new(e, "nonpositive-capacity"));
        }
    }
    out
}

/// Checks users against a topology: attachment router present, traffic
/// finite and nonnegative, ids unique.
pub fn validate_users(t: &Topology, users: &[User]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for u in users {
        let e = Entity::User(u.id);
        if !seen.insert(u.id) {
            out.push(Violation::new(e.clone(), "duplicate-id"));
        }
        if !t.has_router(u.router) {
            out.push(Violation::new(e.clone(), "dangling-router"));
        }
        if !u.traffic.is_finite() || u.traffic < 0.0 {
            out.push(Violation::new(e, "invalid-traffic"));
        }
    }
    out
}

/// Node-link incidence: +1 at the link's source, -1 at its destination.
pub fn incidence_entry(t: &Topology, n: RouterId, l: LinkId) -> Result<i8, ModelError> {
    if !t.has_router(n) {
        return Err(ModelError::Unknown(Entity::Router(n)));
    }
    let link = t.link(l).ok_or(ModelError::Unknown(Entity::Link(l)))?;
    Ok(if link.src == n {
        1
    } else if link.dst == n {
        -1
    } else {
        0
    })
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    id: LinkId,
    src: RouterId,
    dst: RouterId,
    bandwidth_gbps: f64,
    latency_ms: f64,
    #[serde(default)]
    bidirectional: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatacenterDoc {
    id: DcId,
    router: RouterId,
    cpu_capacity_cores: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    routers: Vec<Router>,
    links: Vec<LinkDoc>,
    datacenters: Vec<DatacenterDoc>,
}

impl Serialize for Topology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        TopologyDoc::deserialize(d).map(Topology::from_doc)
    }
}

impl Topology {
    fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            routers: self.routers.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkDoc {
                    id: l.id,
                    src: l.src,
                    dst: l.dst,
                    bandwidth_gbps: l.bandwidth,
                    latency_ms: l.latency,
                    bidirectional: false,
                })
                .collect(),
            datacenters: self
                .datacenters
                .iter()
                .map(|d| DatacenterDoc {
                    id: d.id,
                    router: d.router,
                    cpu_capacity_cores: d.cpu_capacity,
                })
                .collect(),
        }
    }

    fn from_doc(doc: TopologyDoc) -> Topology {
        let mut next_id = doc.links.iter().map(|l| l.id.0).max().unwrap_or(0) + 1;
        let mut links = Vec::with_capacity(doc.links.len());
        let mut reverse = Vec::new();
        for l in &doc.links {
            links.push(Link {
                id: l.id,
                src: l.src,
                dst: l.dst,
                bandwidth: l.bandwidth_gbps,
                latency: l.latency_ms,
            });
            if l.bidirectional {
                reverse.push(Link {
                    id: LinkId(next_id),
                    src: l.dst,
                    dst: l.src,
                    bandwidth: l.bandwidth_gbps,
                    latency: l.latency_ms,
                });
                next_id += 1;
            }
        }
        links.extend(reverse);
        Topology {
            routers: doc.routers,
            links,
            datacenters: doc
                .datacenters
                .into_iter()
                .map(|d| Datacenter {
                    id: d.id,
                    router: d.router,
                    cpu_capacity: d.cpu_capacity_cores,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}

/// Parses and validates a topology document.
pub fn load_topology(bytes: &[u8]) -> Result<Topology, ModelError> {
    let t: Topology = serde_json::from_slice(bytes).map_err(|e| ModelError::Parse(e.to_string()))?;
    let violations = validate_topology(&t);
    if violations.is_empty() {
        Ok(t)
    } else {
        Err(ModelError::Validation(violations))
    }
}

/// One entry of the users file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: UserId,
    pub router: RouterId,
    pub traffic_gbps: f64,
    pub initial_cpu_cores: f64,
    pub initial_latency_bound_ms: f64,
}

impl UserSpec {
    pub fn user(&self) -> User {
        User {
            id: self.id,
            router: self.router,
            traffic: self.traffic_gbps,
        }
    }

    pub fn params(&self) -> ServiceParams {
        ServiceParams {
            cpu_param: self.initial_cpu_cores,
            latency_bound: self.initial_latency_bound_ms,
        }
    }
}

/// Parses a users file into users (sorted by id) and their initial parameters.
pub fn load_users(bytes: &[u8]) -> Result<(Vec<User>, ParamMap), ModelError> {
    let specs: Vec<UserSpec> =
        serde_json::from_slice(bytes).map_err(|e| ModelError::Parse(e.to_string()))?;
    users_from_specs(&specs)
}

pub fn users_from_specs(specs: &[UserSpec]) -> Result<(Vec<User>, ParamMap), ModelError> {
    let mut users: Vec<User> = specs.iter().map(UserSpec::user).collect();
    users.sort_by_key(|u| u.id);
    let mut params = ParamMap::new();
    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();
    for s in specs {
        if !ids.insert(s.id) {
            violations.push(Violation::new(Entity::User(s.id), "duplicate-id"));
        }
        if s.params().validate().is_err() {
            violations.push(Violation::new(Entity::User(s.id), "invalid-params"));
        }
        params.insert(s.id, s.params());
    }
    if !violations.is_empty() {
        return Err(ModelError::Validation(violations));
    }
    Ok((users, params))
}

pub fn users_to_specs(users: &[User], params: &ParamMap) -> Vec<UserSpec> {
    users
        .iter()
        .map(|u| {
            let p = params[&u.id];
            UserSpec {
                id: u.id,
                router: u.router,
                traffic_gbps: u.traffic,
                initial_cpu_cores: p.cpu_param,
                initial_latency_bound_ms: p.latency_bound,
            }
        })
        .collect()
}
