//! Exact solver for the VM placement and routing integer program.
//!
//! Minimizes `w1*J1 + w2*J2 + w3*J3` where J1 is the maximum link usage,
//! J2 the total route latency, and J3 the L1 distance between the new and
//! previous one-hot placement matrices, subject to link congestion, DC CPU
//! capacity, per-user latency bounds, single placement, and flow
//! conservation from the user's router to the router of its assigned DC.
//!
//! Routes are simple paths. Every candidate `(dc, path)` pair for a user is
//! enumerated under the user's latency bound, then a depth-first
//! branch-and-bound explores users in id order and candidates in
//! `(dc id, path rank)` order. An incumbent is only replaced by a strictly
//! better objective (by more than [`TIE_TOL`]), so the returned optimum is
//! the first one in that lexicographic order. [`brute_force_solve`] walks the
//! same order without pruning and is the reference oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Allocation, DcId, Entity, LinkId, ModelError, ParamMap, Placement, RouterId, Topology, User,
    UserId, Weights,
};

/// Absolute tolerance for capacity and latency comparisons.
pub const FEAS_TOL: f64 = 1e-9;
/// Objectives closer than this are ties; the earlier candidate wins.
pub const TIE_TOL: f64 = 1e-9;

const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no parameters for user {0}")]
    MissingParams(UserId),
    #[error("instance too large for exhaustive search ({0} combinations)")]
    InstanceTooLarge(u128),
}

/// A simple directed path with its total latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub links: Vec<LinkId>,
    pub total_latency: f64,
}

/// A routing option for one user: the path to one datacenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePath {
    pub user: UserId,
    pub dc: DcId,
    pub links: Vec<LinkId>,
    pub total_latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

impl ObjectiveTerms {
    pub fn weighted(&self, w: &Weights) -> f64 {
        w.w1 * self.j1 + w.w2 * self.j2 + w.w3 * self.j3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Allocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<ObjectiveTerms>,
}

impl SolveOutcome {
    pub fn infeasible() -> Self {
        SolveOutcome {
            status: SolveStatus::Infeasible,
            allocation: None,
            objective: None,
            terms: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub constraint: String,
    pub entity: Entity,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violated: Vec<ConstraintViolation>,
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Per-user contribution to J3: 0 when the VM stays, 2 when it moves, and 1
/// when there is no previous placement row for the user.
fn placement_change(prev: &Placement, user: UserId, dc: DcId) -> f64 {
    match prev.get(&user) {
        None => 1.0,
        Some(d) if *d == dc => 0.0,
        Some(_) => 2.0,
    }
}

/// Shared arithmetic for J1..J3. Users are visited in the given order and
/// routes are link indices into `t.links`.
fn terms_from_parts(t: &Topology, traffic: &[f64], routes: &[&[usize]], changes: &[f64]) -> ObjectiveTerms {
    let mut loads = vec![0.0; t.links.len()];
    let mut j2 = 0.0;
    for (route, tr) in routes.iter().zip(traffic) {
        let mut lat = 0.0;
        for &l in route.iter() {
            loads[l] += tr;
            lat += t.links[l].latency;
        }
        j2 += lat;
    }
    let j1 = loads
        .iter()
        .zip(&t.links)
        .map(|(load, link)| load / link.bandwidth)
        .fold(0.0, f64::max);
    let j3 = changes.iter().sum();
    ObjectiveTerms { j1, j2, j3 }
}

fn sorted_users(users: &[User]) -> Vec<&User> {
    let mut v: Vec<&User> = users.iter().collect();
    v.sort_by_key(|u| u.id);
    v
}

fn link_index(t: &Topology) -> BTreeMap<LinkId, usize> {
    t.links.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
}

/// Computes `(J1, J2, J3)` for an allocation. An empty `prev` is the
/// all-zeros previous placement.
pub fn objective_terms(
    t: &Topology,
    users: &[User],
    a: &Allocation,
    prev: &Placement,
) -> Result<ObjectiveTerms, AllocError> {
    let index = link_index(t);
    let users = sorted_users(users);
    let mut routes = Vec::with_capacity(users.len());
    let mut changes = Vec::with_capacity(users.len());
    for u in &users {
        let dc = *a
            .placement
            .get(&u.id)
            .ok_or(ModelError::Unknown(Entity::User(u.id)))?;
        if t.datacenter(dc).is_none() {
            return Err(ModelError::Unknown(Entity::Datacenter(dc)).into());
        }
        let route = a
            .routes
            .get(&u.id)
            .map(|r| {
                r.iter()
                    .map(|l| index.get(l).copied().ok_or(ModelError::Unknown(Entity::Link(*l))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?
            .unwrap_or_default();
        routes.push(route);
        changes.push(placement_change(prev, u.id, dc));
    }
    let traffic: Vec<f64> = users.iter().map(|u| u.traffic).collect();
    let route_refs: Vec<&[usize]> = routes.iter().map(Vec::as_slice).collect();
    Ok(terms_from_parts(t, &traffic, &route_refs, &changes))
}

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

/// Evaluates every constraint of the allocation problem against `a`.
///
/// Order: link congestion, DC CPU capacity, user latency bound, single
/// placement, flow conservation. Flow conservation is coupled to the
/// placement: net outflow at router `n` must equal `[n = user router] -
/// [n = assigned DC router]`.
pub fn check_feasibility(t: &Topology, users: &[User], params: &ParamMap, a: &Allocation) -> FeasibilityReport {
    let users = sorted_users(users);
    let index = link_index(t);
    let mut violated = Vec::new();
    let mut push = |constraint: &str, entity: Entity, lhs: f64, rhs: f64| {
        violated.push(ConstraintViolation {
            constraint: constraint.to_string(),
            entity,
            lhs,
            rhs,
        })
    };
    let empty = Vec::new();
    let route_of = |u: UserId| a.routes.get(&u).unwrap_or(&empty);

    for link in &t.links {
        let mut load = 0.0;
        for u in &users {
            if route_of(u.id).contains(&link.id) {
                load += u.traffic;
            }
        }
        if load > link.bandwidth + FEAS_TOL {
            push("congestion", Entity::Link(link.id), load, link.bandwidth);
        }
    }

    for dc in &t.datacenters {
        let mut used = 0.0;
        for u in &users {
            if a.placement.get(&u.id) == Some(&dc.id) {
                used += params.get(&u.id).map_or(0.0, |p| p.cpu_param);
            }
        }
        if used > dc.cpu_capacity + FEAS_TOL {
            push("cpu-capacity", Entity::Datacenter(dc.id), used, dc.cpu_capacity);
        }
    }

    for u in &users {
        let mut lat = 0.0;
        for l in route_of(u.id) {
            lat += t.link(*l).map_or(0.0, |l| l.latency);
        }
        let bound = params.get(&u.id).map_or(f64::NAN, |p| p.latency_bound);
        let within = lat <= bound + FEAS_TOL;
        if !within {
            push("latency-bound", Entity::User(u.id), lat, bound);
        }
    }

    for u in &users {
        let assigned = a
            .placement
            .get(&u.id)
            .filter(|d| t.datacenter(**d).is_some())
            .is_some();
        if !assigned {
            push("single-placement", Entity::User(u.id), 0.0, 1.0);
        }
    }

    for u in &users {
        let route = route_of(u.id);
        let dc_router = a
            .placement
            .get(&u.id)
            .and_then(|d| t.datacenter(*d))
            .map(|d| d.router);
        let mut seen = std::collections::BTreeSet::new();
        let mut malformed = false;
        for l in route {
            if !index.contains_key(l) || !seen.insert(*l) {
                malformed = true;
            }
        }
        if malformed {
            push("route-links", Entity::User(u.id), route.len() as f64, seen.len() as f64);
            continue;
        }
        let mut net: BTreeMap<RouterId, i64> = t.router_ids().map(|r| (r, 0)).collect();
        for l in route {
            let link = &t.links[index[l]];
            *net.entry(link.src).or_default() += 1;
            *net.entry(link.dst).or_default() -= 1;
        }
        for (r, got) in net {
            let want = (r == u.router) as i64 - (Some(r) == dc_router) as i64;
            if got != want {
                push("flow-conservation", Entity::User(u.id), got as f64, want as f64);
            }
        }
    }

    FeasibilityReport {
        feasible: violated.is_empty(),
        violated,
    }
}

// ---------------------------------------------------------------------------
// Path enumeration
// ---------------------------------------------------------------------------

/// All simple directed paths `from -> to` with latency at most `latency_cap`,
/// sorted by latency then by link ids. The empty path is included iff
/// `from == to`.
pub fn enumerate_paths(t: &Topology, from: RouterId, to: RouterId, latency_cap: f64) -> Vec<Path> {
    let mut out_links: BTreeMap<RouterId, Vec<usize>> = BTreeMap::new();
    for (i, l) in t.links.iter().enumerate() {
        out_links.entry(l.src).or_default().push(i);
    }
    for v in out_links.values_mut() {
        v.sort_by_key(|&i| t.links[i].id);
    }

    let mut found = Vec::new();
    if !t.has_router(from) || !t.has_router(to) {
        return found;
    }
    let mut visited = vec![from];
    let mut stack = Vec::new();
    dfs_paths(t, &out_links, to, latency_cap, 0.0, &mut visited, &mut stack, &mut found);
    found.sort_by(|a: &Path, b: &Path| {
        a.total_latency
            .total_cmp(&b.total_latency)
            .then_with(|| a.links.cmp(&b.links))
    });
    found
}

#[allow(clippy::too_many_arguments)]
fn dfs_paths(
    t: &Topology,
    out_links: &BTreeMap<RouterId, Vec<usize>>,
    to: RouterId,
    cap: f64,
    latency: f64,
    visited: &mut Vec<RouterId>,
    stack: &mut Vec<LinkId>,
    found: &mut Vec<Path>,
) {
    let here = *visited.last().expect("path has a start");
    if here == to {
        found.push(Path {
            links: stack.clone(),
            total_latency: latency,
        });
        return;
    }
    let Some(links) = out_links.get(&here) else {
        return;
    };
    for &i in links {
        let link = &t.links[i];
        if visited.contains(&link.dst) {
            continue;
        }
        let next = latency + link.latency;
        if next > cap + FEAS_TOL {
            continue;
        }
        visited.push(link.dst);
        stack.push(link.id);
        dfs_paths(t, out_links, to, cap, next, visited, stack, found);
        stack.pop();
        visited.pop();
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

struct Candidate {
    dc: DcId,
    dc_index: usize,
    links: Vec<LinkId>,
    link_indices: Vec<usize>,
    latency: f64,
    change: f64,
}

struct Instance<'a> {
    t: &'a Topology,
    users: Vec<&'a User>,
    cpu: Vec<f64>,
    traffic: Vec<f64>,
    candidates: Vec<Vec<Candidate>>,
    w: Weights,
}

impl<'a> Instance<'a> {
    fn build(
        t: &'a Topology,
        users: &'a [User],
        params: &ParamMap,
        prev: &Placement,
        w: &Weights,
    ) -> Result<Self, AllocError> {
        w.validate()?;
        let users = sorted_users(users);
        let index = link_index(t);
        let mut cpu = Vec::with_capacity(users.len());
        let mut candidates = Vec::with_capacity(users.len());
        let mut dcs: Vec<(usize, &crate::model::Datacenter)> = t.datacenters.iter().enumerate().collect();
        dcs.sort_by_key(|(_, d)| d.id);
        for u in &users {
            if !t.has_router(u.router) {
                return Err(ModelError::Unknown(Entity::Router(u.router)).into());
            }
            let p = params.get(&u.id).ok_or(AllocError::MissingParams(u.id))?;
            p.validate()?;
            cpu.push(p.cpu_param);
            let mut list = Vec::new();
            for (dc_index, dc) in &dcs {
                for path in enumerate_paths(t, u.router, dc.router, p.latency_bound) {
                    list.push(Candidate {
                        dc: dc.id,
                        dc_index: *dc_index,
                        link_indices: path.links.iter().map(|l| index[l]).collect(),
                        links: path.links,
                        latency: path.total_latency,
                        change: placement_change(prev, u.id, dc.id),
                    });
                }
            }
            candidates.push(list);
        }
        let traffic = users.iter().map(|u| u.traffic).collect();
        Ok(Instance {
            t,
            users,
            cpu,
            traffic,
            candidates,
            w: *w,
        })
    }

    fn evaluate(&self, choice: &[usize]) -> ObjectiveTerms {
        let routes: Vec<&[usize]> = choice
            .iter()
            .enumerate()
            .map(|(u, &c)| self.candidates[u][c].link_indices.as_slice())
            .collect();
        let changes: Vec<f64> = choice
            .iter()
            .enumerate()
            .map(|(u, &c)| self.candidates[u][c].change)
            .collect();
        terms_from_parts(self.t, &self.traffic, &routes, &changes)
    }

    fn allocation(&self, choice: &[usize]) -> Allocation {
        let mut a = Allocation::default();
        for (u, &c) in choice.iter().enumerate() {
            let cand = &self.candidates[u][c];
            a.placement.insert(self.users[u].id, cand.dc);
            a.routes.insert(self.users[u].id, cand.links.clone());
        }
        a
    }

    fn outcome(&self, best: Option<(Vec<usize>, ObjectiveTerms, f64)>) -> SolveOutcome {
        match best {
            None => SolveOutcome::infeasible(),
            Some((choice, terms, objective)) => SolveOutcome {
                status: SolveStatus::Optimal,
                allocation: Some(self.allocation(&choice)),
                objective: Some(objective),
                terms: Some(terms),
            },
        }
    }
}

struct Search<'i, 'a> {
    inst: &'i Instance<'a>,
    /// Lower bound on the w2/w3 cost of users `i..`.
    tail_bound: Vec<f64>,
    loads: Vec<f64>,
    cpu_used: Vec<f64>,
    choice: Vec<usize>,
    best: Option<(Vec<usize>, ObjectiveTerms, f64)>,
}

impl Search<'_, '_> {
    fn best_objective(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.2)
    }

    fn descend(&mut self, depth: usize, max_usage: f64, partial: f64) {
        let inst = self.inst;
        let w = &inst.w;
        if depth == inst.users.len() {
            let terms = inst.evaluate(&self.choice);
            let objective = terms.weighted(w);
            if objective < self.best_objective() - TIE_TOL {
                self.best = Some((self.choice.clone(), terms, objective));
            }
            return;
        }
        let traffic = inst.traffic[depth];
        let cpu = inst.cpu[depth];
        for (ci, cand) in inst.candidates[depth].iter().enumerate() {
            let used = self.cpu_used[cand.dc_index] + cpu;
            if used > inst.t.datacenters[cand.dc_index].cpu_capacity + FEAS_TOL {
                continue;
            }
            let mut usage = max_usage;
            let mut congested = false;
            for &l in &cand.link_indices {
                let load = self.loads[l] + traffic;
                let cap = inst.t.links[l].bandwidth;
                if load > cap + FEAS_TOL {
                    congested = true;
                    break;
                }
                usage = usage.max(load / cap);
            }
            if congested {
                continue;
            }
            let partial_next = partial + w.w2 * cand.latency + w.w3 * cand.change;
            let bound = w.w1 * usage + partial_next + self.tail_bound[depth + 1];
            // Safe prune: no leaf below can beat the incumbent by more than TIE_TOL.
            if bound >= self.best_objective() - TIE_TOL / 2.0 {
                continue;
            }

            let saved: Vec<f64> = cand.link_indices.iter().map(|&l| self.loads[l]).collect();
            let saved_cpu = self.cpu_used[cand.dc_index];
            for &l in &cand.link_indices {
                self.loads[l] += traffic;
            }
            self.cpu_used[cand.dc_index] = used;
            self.choice.push(ci);

            self.descend(depth + 1, usage, partial_next);

            self.choice.pop();
            self.cpu_used[cand.dc_index] = saved_cpu;
            for (&l, v) in cand.link_indices.iter().zip(saved) {
                self.loads[l] = v;
            }
        }
    }
}

/// Solves the allocation problem exactly by branch-and-bound.
///
/// `prev` is the placement of the previous chat step; pass an empty map
/// for the first step.
pub fn solve(
    t: &Topology,
    users: &[User],
    params: &ParamMap,
    prev: &Placement,
    w: &Weights,
) -> Result<SolveOutcome, AllocError> {
    let inst = Instance::build(t, users, params, prev, w)?;
    if inst.candidates.iter().any(Vec::is_empty) {
        return Ok(SolveOutcome::infeasible());
    }
    let n = inst.users.len();
    let mut tail_bound = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let cheapest = inst.candidates[i]
            .iter()
            .map(|c| w.w2 * c.latency + w.w3 * c.change)
            .fold(f64::INFINITY, f64::min);
        tail_bound[i] = tail_bound[i + 1] + cheapest;
    }
    let mut search = Search {
        inst: &inst,
        tail_bound,
        loads: vec![0.0; t.links.len()],
        cpu_used: vec![0.0; t.datacenters.len()],
        choice: Vec::with_capacity(n),
        best: None,
    };
    search.descend(0, 0.0, 0.0);
    let best = search.best.take();
    Ok(inst.outcome(best))
}

/// Exhaustive reference solver over the full cross product of per-user
/// candidates. Refuses instances with more than 10^7 combinations.
pub fn brute_force_solve(
    t: &Topology,
    users: &[User],
    params: &ParamMap,
    prev: &Placement,
    w: &Weights,
) -> Result<SolveOutcome, AllocError> {
    let inst = Instance::build(t, users, params, prev, w)?;
    let total: u128 = inst.candidates.iter().map(|c| c.len() as u128).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(AllocError::InstanceTooLarge(total));
    }
    if total == 0 {
        return Ok(SolveOutcome::infeasible());
    }
    let n = inst.users.len();
    let mut choice = vec![0usize; n];
    let mut best: Option<(Vec<usize>, ObjectiveTerms, f64)> = None;
    loop {
        let a = inst.allocation(&choice);
        if check_feasibility(t, users, params, &a).feasible {
            let terms = objective_terms(t, users, &a, prev)?;
            let objective = terms.weighted(w);
            if objective < best.as_ref().map_or(f64::INFINITY, |b| b.2) - TIE_TOL {
                best = Some((choice.clone(), terms, objective));
            }
        }
        // Odometer increment, last user fastest.
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(inst.outcome(best));
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < inst.candidates[i].len() {
                break;
            }
            choice[i] = 0;
        }
    }
}

/// Lists the candidate paths a user has under its current latency bound.
pub fn user_candidates(t: &Topology, user: &User, latency_bound: f64) -> Vec<CandidatePath> {
    let mut dcs: Vec<_> = t.datacenters.iter().collect();
    dcs.sort_by_key(|d| d.id);
    dcs.into_iter()
        .flat_map(|dc| {
            enumerate_paths(t, user.router, dc.router, latency_bound)
                .into_iter()
                .map(move |p| CandidatePath {
                    user: user.id,
                    dc: dc.id,
                    links: p.links,
                    total_latency: p.total_latency,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Datacenter, Link, Router, ServiceParams};

    fn topo(n: u32, edges: &[(u32, u32, u32)], dcs: &[(u32, u32, f64)]) -> Topology {
        Topology {
            routers: (1..=n).map(|i| Router { id: RouterId(i), name: None }).collect(),
            links: edges
                .iter()
                .map(|&(id, s, d)| Link {
                    id: LinkId(id),
                    src: RouterId(s),
                    dst: RouterId(d),
                    bandwidth: 1.0,
                    latency: 1.0,
                })
                .collect(),
            datacenters: dcs
                .iter()
                .map(|&(id, r, c)| Datacenter {
                    id: DcId(id),
                    router: RouterId(r),
                    cpu_capacity: c,
                })
                .collect(),
        }
    }

    fn user(id: u32, router: u32, traffic: f64) -> User {
        User {
            id: UserId(id),
            router: RouterId(router),
            traffic,
        }
    }

    fn params(entries: &[(u32, f64, f64)]) -> ParamMap {
        entries
            .iter()
            .map(|&(u, c, b)| (UserId(u), ServiceParams::new(c, b).unwrap()))
            .collect()
    }

    fn alloc(entries: &[(u32, u32, &[u32])]) -> Allocation {
        let mut a = Allocation::default();
        for (u, d, r) in entries {
            a.placement.insert(UserId(*u), DcId(*d));
            a.routes.insert(UserId(*u), r.iter().map(|l| LinkId(*l)).collect());
        }
        a
    }

    fn two_router() -> Topology {
        topo(2, &[(1, 1, 2)], &[(1, 2, 4.0)])
    }

    #[test]
    fn objective_single_user() {
        let t = two_router();
        let users = [user(1, 1, 0.5)];
        let a = alloc(&[(1, 1, &[1])]);
        let terms = objective_terms(&t, &users, &a, &a.placement).unwrap();
        assert_eq!(terms, ObjectiveTerms { j1: 0.5, j2: 1.0, j3: 0.0 });
        let terms = objective_terms(&t, &users, &a, &Placement::new()).unwrap();
        assert_eq!(terms.j3, 1.0);
    }

    #[test]
    fn objective_shared_link_sums_traffic() {
        let t = topo(3, &[(1, 1, 2), (2, 3, 1)], &[(1, 2, 4.0)]);
        let users = [user(1, 1, 0.5), user(2, 3, 0.5)];
        let a = alloc(&[(1, 1, &[1]), (2, 1, &[2, 1])]);
        let terms = objective_terms(&t, &users, &a, &Placement::new()).unwrap();
        assert_eq!(terms.j1, 1.0);
        assert_eq!(terms.j2, 3.0);
        assert_eq!(terms.j3, 2.0);
    }

    #[test]
    fn objective_moved_vm_counts_two() {
        let t = topo(2, &[(1, 1, 2)], &[(1, 2, 4.0), (2, 1, 4.0)]);
        let users = [user(1, 1, 0.5)];
        let a = alloc(&[(1, 2, &[])]);
        let prev: Placement = [(UserId(1), DcId(1))].into();
        assert_eq!(objective_terms(&t, &users, &a, &prev).unwrap().j3, 2.0);
    }

    #[test]
    fn objective_unknown_link_is_error() {
        let t = two_router();
        let users = [user(1, 1, 0.5)];
        let a = alloc(&[(1, 1, &[7])]);
        assert!(objective_terms(&t, &users, &a, &Placement::new()).is_err());
    }

    #[test]
    fn feasibility_latency_within_bound() {
        let t = topo(3, &[(1, 1, 2), (2, 2, 3)], &[(1, 3, 4.0)]);
        let users = [user(1, 1, 0.5)];
        let a = alloc(&[(1, 1, &[1, 2])]);
        let r = check_feasibility(&t, &users, &params(&[(1, 2.0, 3.0)]), &a);
        assert!(r.feasible, "{:?}", r.violated);
    }

    #[test]
    fn feasibility_cpu_overload() {
        let t = topo(2, &[(1, 1, 2)], &[(1, 2, 3.0)]);
        let users = [user(1, 2, 0.1), user(2, 2, 0.1)];
        let a = alloc(&[(1, 1, &[]), (2, 1, &[])]);
        let r = check_feasibility(&t, &users, &params(&[(1, 2.0, 3.0), (2, 2.0, 3.0)]), &a);
        assert_eq!(
            r.violated,
            vec![ConstraintViolation {
                constraint: "cpu-capacity".into(),
                entity: Entity::Datacenter(DcId(1)),
                lhs: 4.0,
                rhs: 3.0,
            }]
        );
    }

    #[test]
    fn feasibility_congestion() {
        let t = two_router();
        let users = [user(1, 1, 0.6), user(2, 1, 0.5)];
        let a = alloc(&[(1, 1, &[1]), (2, 1, &[1])]);
        let r = check_feasibility(&t, &users, &params(&[(1, 1.0, 3.0), (2, 1.0, 3.0)]), &a);
        assert_eq!(r.violated.len(), 1);
        let v = &r.violated[0];
        assert_eq!((v.constraint.as_str(), &v.entity), ("congestion", &Entity::Link(LinkId(1))));
        assert!((v.lhs - 1.1).abs() < 1e-12);
        assert_eq!(v.rhs, 1.0);
    }

    #[test]
    fn feasibility_disconnected_route() {
        let t = topo(3, &[(1, 1, 2), (2, 2, 3)], &[(1, 3, 4.0)]);
        let users = [user(1, 1, 0.5)];
        let a = alloc(&[(1, 1, &[1])]);
        let r = check_feasibility(&t, &users, &params(&[(1, 1.0, 3.0)]), &a);
        assert!(!r.feasible);
        assert!(r.violated.iter().all(|v| v.constraint == "flow-conservation"));
    }

    #[test]
    fn feasibility_missing_placement() {
        let t = two_router();
        let users = [user(1, 2, 0.5)];
        let r = check_feasibility(&t, &users, &params(&[(1, 1.0, 3.0)]), &Allocation::default());
        assert_eq!(r.violated[0].constraint, "single-placement");
    }

    #[test]
    fn paths_same_router_is_empty_path() {
        let t = two_router();
        let p = enumerate_paths(&t, RouterId(1), RouterId(1), 0.0);
        assert_eq!(p, vec![Path { links: vec![], total_latency: 0.0 }]);
    }

    #[test]
    fn paths_line_graph() {
        let t = topo(3, &[(1, 1, 2), (2, 2, 3)], &[(1, 3, 1.0)]);
        let p = enumerate_paths(&t, RouterId(1), RouterId(3), 2.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].total_latency, 2.0);
        assert!(enumerate_paths(&t, RouterId(3), RouterId(1), 10.0).is_empty());
    }

    #[test]
    fn paths_diamond_respects_cap() {
        let t = topo(4, &[(1, 1, 2), (2, 1, 3), (3, 2, 4), (4, 3, 4)], &[(1, 4, 1.0)]);
        assert!(enumerate_paths(&t, RouterId(1), RouterId(4), 1.5).is_empty());
        let p = enumerate_paths(&t, RouterId(1), RouterId(4), 2.0);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].links, vec![LinkId(1), LinkId(3)]);
    }

    #[test]
    fn solve_two_router() {
        let t = two_router();
        let users = [user(1, 1, 0.5)];
        let p = params(&[(1, 2.0, 3.0)]);
        let prev: Placement = [(UserId(1), DcId(1))].into();
        let out = solve(&t, &users, &p, &prev, &Weights::default()).unwrap();
        assert!(out.is_optimal());
        let a = out.allocation.as_ref().unwrap();
        assert_eq!(a.placement[&UserId(1)], DcId(1));
        assert_eq!(a.routes[&UserId(1)], vec![LinkId(1)]);
        assert!((out.objective.unwrap() - 0.51).abs() < 1e-12);
        assert_eq!(out, brute_force_solve(&t, &users, &p, &prev, &Weights::default()).unwrap());
    }

    #[test]
    fn solve_unreachable_bound() {
        let t = two_router();
        let users = [user(1, 1, 0.5)];
        let p = params(&[(1, 2.0, 0.5)]);
        let out = solve(&t, &users, &p, &Placement::new(), &Weights::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        let bf = brute_force_solve(&t, &users, &p, &Placement::new(), &Weights::default()).unwrap();
        assert_eq!(bf.status, SolveStatus::Infeasible);
    }

    #[test]
    fn solve_prefers_lower_latency_dc() {
        let t = topo(3, &[(1, 1, 2), (2, 2, 3)], &[(1, 3, 4.0), (2, 2, 4.0)]);
        let users = [user(1, 1, 0.5)];
        let out = solve(&t, &users, &params(&[(1, 1.0, 5.0)]), &Placement::new(), &Weights::default()).unwrap();
        assert_eq!(out.allocation.unwrap().placement[&UserId(1)], DcId(2));
    }

    #[test]
    fn solve_no_users_is_vacuously_optimal() {
        let t = two_router();
        let out = solve(&t, &[], &ParamMap::new(), &Placement::new(), &Weights::default()).unwrap();
        assert!(out.is_optimal());
        assert_eq!(out.objective, Some(0.0));
        assert_eq!(out.allocation, Some(Allocation::default()));
    }

    #[test]
    fn solve_missing_params_is_error() {
        let t = two_router();
        let users = [user(1, 1, 0.5)];
        assert!(matches!(
            solve(&t, &users, &ParamMap::new(), &Placement::new(), &Weights::default()),
            Err(AllocError::MissingParams(_))
        ));
    }

    #[test]
    fn brute_force_refuses_huge_instances() {
        // Complete digraph on 9 routers: far more than 10^7 path pairs for 3 users.
        let n = 9;
        let mut edges = Vec::new();
        let mut id = 1;
        for s in 1..=n {
            for d in 1..=n {
                if s != d {
                    edges.push((id, s, d));
                    id += 1;
                }
            }
        }
        let t = topo(n, &edges, &[(1, n, 100.0)]);
        let users = [user(1, 1, 0.0), user(2, 2, 0.0), user(3, 3, 0.0)];
        let p = params(&[(1, 1.0, 100.0), (2, 1.0, 100.0), (3, 1.0, 100.0)]);
        assert!(matches!(
            brute_force_solve(&t, &users, &p, &Placement::new(), &Weights::default()),
            Err(AllocError::InstanceTooLarge(_))
        ));
    }
}
