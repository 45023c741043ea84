//! Random backhaul graphs for experiments.

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackhaulGraph, Commodity, GraphLink, LinkKind, NodeKind, Radio};
use crate::error::{Error, Result};
use crate::net_model::pathloss_variance;
use crate::rng::{complex_gaussian, stream_rng, tag};

/// Desk-scale SDN-RAN: a router mesh feeding BSs, each user reachable over
/// the air from its nearest BSs, and one commodity per user from router 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskGraphConfig {
    pub routers: usize,
    pub bss: usize,
    pub users: usize,
    pub tones: usize,
    /// Side of the square area in meters.
    pub area: f64,
    /// Uniform range of wired capacities.
    pub capacity_min: f64,
    pub capacity_max: f64,
    /// Wireless links per user (to the nearest BSs).
    pub bss_per_user: usize,
    /// Wired links from routers into each BS.
    pub routers_per_bs: usize,
    pub bandwidth: f64,
    pub power: f64,
    pub noise: f64,
}

impl Default for DeskGraphConfig {
    fn default() -> Self {
        DeskGraphConfig {
            routers: 4,
            bss: 8,
            users: 10,
            tones: 3,
            area: 1000.0,
            capacity_min: 2.88,
            capacity_max: 28.8,
            bss_per_user: 3,
            routers_per_bs: 2,
            bandwidth: 1.0,
            power: 1.0,
            noise: 0.1,
        }
    }
}

/// Builds a desk graph. Node ids are `0..routers` (routers), then BSs, then
/// users.
pub fn desk_graph(config: &DeskGraphConfig, seed: u64) -> Result<BackhaulGraph> {
    let c = config;
    if c.routers == 0 || c.bss == 0 || c.users == 0 || c.tones == 0 {
        return Err(Error::Config("desk graph needs routers, BSs, users and tones".into()));
    }
    if !(c.capacity_min > 0.0 && c.capacity_max >= c.capacity_min) {
        return Err(Error::Config("wired capacity range must be positive".into()));
    }
    let mut rng = stream_rng(seed, tag::GRAPH);
    let cap = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(c.capacity_min..=c.capacity_max);
    let mut nodes = Vec::new();
    for k in 0..c.routers {
        nodes.push((k as i64, NodeKind::Router));
    }
    for k in 0..c.bss {
        nodes.push(((c.routers + k) as i64, NodeKind::Bs));
    }
    for k in 0..c.users {
        nodes.push(((c.routers + c.bss + k) as i64, NodeKind::User));
    }
    let bs = |k: usize| c.routers + k;
    let user = |k: usize| c.routers + c.bss + k;

    let mut links = Vec::new();
    // router ring in both directions, plus one chord per router
    let mut wired: HashSet<(usize, usize)> = HashSet::new();
    let mut add = |links: &mut Vec<GraphLink>, rng: &mut rand_chacha::ChaCha8Rng, a: usize, b: usize| {
        if a != b && wired.insert((a, b)) {
            links.push(GraphLink { src: a, dst: b, kind: LinkKind::Wired { capacity: cap(rng) } });
        }
    };
    if c.routers > 1 {
        for k in 0..c.routers {
            let next = (k + 1) % c.routers;
            add(&mut links, &mut rng, k, next);
            add(&mut links, &mut rng, next, k);
        }
        for k in 0..c.routers {
            let other = rng.random_range(0..c.routers);
            add(&mut links, &mut rng, k, other);
        }
    }
    let routers: Vec<usize> = (0..c.routers).collect();
    for k in 0..c.bss {
        let chosen: Vec<usize> = routers.choose_multiple(&mut rng, c.routers_per_bs.clamp(1, c.routers)).copied().collect();
        for r in chosen {
            add(&mut links, &mut rng, r, bs(k));
        }
    }

    let pos = |rng: &mut rand_chacha::ChaCha8Rng| [rng.random_range(0.0..c.area), rng.random_range(0.0..c.area)];
    let bs_pos: Vec<[f64; 2]> = (0..c.bss).map(|_| pos(&mut rng)).collect();
    let user_pos: Vec<[f64; 2]> = (0..c.users).map(|_| pos(&mut rng)).collect();
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt().max(35.0);

    let mut channels = HashMap::new();
    for k in 0..c.bss {
        for j in 0..c.users {
            let var = pathloss_variance(dist(bs_pos[k], user_pos[j]))?;
            for f in 0..c.tones {
                channels.insert((bs(k), user(j), f), complex_gaussian(&mut rng, var));
            }
        }
    }
    for j in 0..c.users {
        let mut order: Vec<usize> = (0..c.bss).collect();
        order.sort_by(|&a, &b| dist(bs_pos[a], user_pos[j]).total_cmp(&dist(bs_pos[b], user_pos[j])));
        for &k in order.iter().take(c.bss_per_user.clamp(1, c.bss)) {
            for f in 0..c.tones {
                links.push(GraphLink { src: bs(k), dst: user(j), kind: LinkKind::Wireless { tone: f } });
            }
        }
    }
    let commodities = (0..c.users).map(|j| Commodity { src: 0, dst: user(j) }).collect();
    let n = nodes.len();
    let graph = BackhaulGraph {
        nodes,
        links,
        commodities,
        radio: Radio {
            tones: c.tones,
            bandwidth: c.bandwidth,
            noise: vec![c.noise; n],
            power: vec![c.power; n],
            channels,
        },
    };
    graph.validate()?;
    Ok(graph)
}

/// Size of the max-min flow LP of a wired graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpSize {
    /// One rate per (commodity, link) plus the common rate.
    pub variables: usize,
    /// Conservation per (commodity, node) plus one capacity per link.
    pub constraints: usize,
}

pub fn flow_lp_size(graph: &BackhaulGraph) -> LpSize {
    let k = graph.commodities.len();
    let carried: usize = (0..k).map(|i| (0..graph.links.len()).filter(|&l| graph.carries(i, l)).count()).sum();
    LpSize { variables: carried + 1, constraints: k * graph.nodes.len() + graph.links.len() }
}

/// Wired-only graph in the style of the large LP timing experiment:
/// `nodes` routers on a random spanning arborescence from node 0 plus
/// random extra links up to `links`, and `commodities` flows from node 0 to
/// distinct random nodes.
pub fn table1_graph(commodities: usize, nodes: usize, links: usize, seed: u64) -> Result<BackhaulGraph> {
    if nodes < 2 || commodities == 0 || commodities >= nodes {
        return Err(Error::Config("need at least 2 nodes and fewer commodities than nodes".into()));
    }
    if links < nodes - 1 || links > nodes * (nodes - 1) {
        return Err(Error::Config(format!("link count must lie in [{}, {}]", nodes - 1, nodes * (nodes - 1))));
    }
    let mut rng = stream_rng(seed, tag::GRAPH);
    let mut order: Vec<usize> = (1..nodes).collect();
    order.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut placed = vec![0usize];
    for &x in &order {
        let parent = placed[rng.random_range(0..placed.len())];
        seen.insert((parent, x));
        out.push((parent, x));
        placed.push(x);
    }
    while out.len() < links {
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        if a != b && seen.insert((a, b)) {
            out.push((a, b));
        }
    }
    let graph_links = out
        .into_iter()
        .map(|(a, b)| GraphLink { src: a, dst: b, kind: LinkKind::Wired { capacity: rng.random_range(2.88..=28.8) } })
        .collect();
    let dests: Vec<usize> = order[..commodities].to_vec();
    let graph = BackhaulGraph {
        nodes: (0..nodes).map(|k| (k as i64, NodeKind::Router)).collect(),
        links: graph_links,
        commodities: dests.into_iter().map(|d| Commodity { src: 0, dst: d }).collect(),
        radio: Radio { tones: 0, bandwidth: 1.0, noise: vec![1.0; nodes], power: vec![1.0; nodes], channels: HashMap::new() },
    };
    graph.validate()?;
    Ok(graph)
}
