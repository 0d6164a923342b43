//! Seeded random instances shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnetchat_core::intent::UpdateMarker;
use vnetchat_core::model::{
    Datacenter, DcId, Link, LinkId, ParamMap, Placement, Router, RouterId, ServiceParams, Topology, User, UserId,
    Weights,
};

#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: Topology,
    pub users: Vec<User>,
    pub params: ParamMap,
    pub prev: Placement,
    pub weights: Weights,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

/// At most 6 routers, 10 directed links, 2 DCs and `max_users` users.
/// Latencies and capacities come from small grids so ties are common.
pub fn random_instance(seed: u64, max_users: u32) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6u32);
    let routers: Vec<Router> = (1..=n).map(|i| Router { id: RouterId(i), name: None }).collect();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let target = rng.random_range(1..=10usize);
    for _ in 0..50 {
        if pairs.len() == target {
            break;
        }
        let (a, b) = (rng.random_range(1..=n), rng.random_range(1..=n));
        if a != b && !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    let links: Vec<Link> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Link {
            id: LinkId(i as u32 + 1),
            src: RouterId(a),
            dst: RouterId(b),
            bandwidth: pick(&mut rng, &[0.5, 1.0, 2.0]),
            latency: pick(&mut rng, &[0.5, 1.0, 1.5, 2.0]),
        })
        .collect();
    let dcs = rng.random_range(1..=2u32);
    let datacenters: Vec<Datacenter> = (1..=dcs)
        .map(|i| Datacenter {
            id: DcId(i),
            router: RouterId(rng.random_range(1..=n)),
            cpu_capacity: pick(&mut rng, &[1.0, 2.0, 3.0, 4.0]),
        })
        .collect();
    let nu = rng.random_range(1..=max_users);
    let users: Vec<User> = (1..=nu)
        .map(|i| User {
            id: UserId(i),
            router: RouterId(rng.random_range(1..=n)),
            traffic: pick(&mut rng, &[0.1, 0.3, 0.5, 1.0]),
        })
        .collect();
    let params: ParamMap = users
        .iter()
        .map(|u| {
            let c = pick(&mut rng, &[0.5, 1.0, 1.5, 2.0]);
            let b = pick(&mut rng, &[0.5, 1.0, 2.0, 3.0, 5.0]);
            (u.id, ServiceParams::new(c, b).unwrap())
        })
        .collect();
    let mut prev = Placement::new();
    for u in &users {
        if rng.random_bool(0.5) {
            prev.insert(u.id, DcId(rng.random_range(1..=dcs)));
        }
    }
    let weights = if rng.random_bool(0.5) {
        Weights::default()
    } else {
        Weights::new(
            rng.random_range(0.1..2.0),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
        )
        .unwrap()
    };
    Instance {
        topology: Topology {
            routers,
            links,
            datacenters,
        },
        users,
        params,
        prev,
        weights,
    }
}

/// Up to `max` prompts from random users with random markers.
pub fn random_prompts(seed: u64, users: &[User], max: usize) -> Vec<(UserId, UpdateMarker)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let all: Vec<UpdateMarker> = UpdateMarker::all().collect();
    let ids: Vec<UserId> = users.iter().map(|u| u.id).collect();
    let m = rng.random_range(0..=max);
    (0..m)
        .map(|_| (pick(&mut rng, &ids), pick(&mut rng, &all)))
        .collect()
}

pub const PROMPT_POOL: &[&str] = &[
    "I want more CPU",
    "I no longer need much CPU",
    "Please reduce the latency",
    "It is ok to ease the latency bound",
    "Hello there",
    "Get more CPUs, please.",
    "I would like to have lower latency network",
];
