//! Joint routing and SISO beamforming over a wired/wireless backhaul.
//!
//! Nodes are routers, BSs and users. Wired links have fixed capacities;
//! a wireless link `(s, d, f)` carries BS `s`'s signal to user `d` on tone
//! `f` at rate `B log(1 + SINR)`, with every other link on the same tone
//! interfering. Each commodity is one flow from a source node to a user.
//! [`solve_nmaxmin`] maximizes the minimum commodity rate.

mod admm;
mod generate;
mod maxflow;
mod nmaxmin;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::write_records;

pub use admm::{AdmmOutcome, AdmmSettings, AdmmState, ConsensusProblem, Group, GroupSet};
pub use generate::{desk_graph, flow_lp_size, table1_graph, DeskGraphConfig, LpSize};
pub use maxflow::FlowNetwork;
pub use nmaxmin::{
    max_flow_value, repair_flows, solve_flow_lp, solve_nmaxmin, NMaxMinConfig, NMaxMinSolution, OuterRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Router,
    Bs,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkKind {
    Wired { capacity: f64 },
    Wireless { tone: usize },
}

/// Directed link between node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphLink {
    pub src: usize,
    pub dst: usize,
    pub kind: LinkKind,
}

impl GraphLink {
    pub fn is_wireless(&self) -> bool {
        matches!(self.kind, LinkKind::Wireless { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commodity {
    pub src: usize,
    pub dst: usize,
}

/// Radio parameters of the wireless part.
#[derive(Debug, Clone, PartialEq)]
pub struct Radio {
    pub tones: usize,
    /// Bandwidth per tone; wireless rates are `bandwidth * log(1 + SINR)`.
    pub bandwidth: f64,
    /// Noise power per node (used for users).
    pub noise: Vec<f64>,
    /// Power budget per node (used for BSs).
    pub power: Vec<f64>,
    /// Channel `h[(bs, user, tone)]`; missing entries are zero.
    pub channels: HashMap<(usize, usize, usize), Complex64>,
}

/// Backhaul network with commodities and radio data.
#[derive(Debug, Clone, PartialEq)]
pub struct BackhaulGraph {
    /// External id and kind of each node.
    pub nodes: Vec<(i64, NodeKind)>,
    pub links: Vec<GraphLink>,
    pub commodities: Vec<Commodity>,
    pub radio: Radio,
}

impl BackhaulGraph {
    /// Checks structural invariants: valid endpoints, positive capacities,
    /// wireless links from BSs to users, and a path for every commodity.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (k, l) in self.links.iter().enumerate() {
            if l.src >= n || l.dst >= n || l.src == l.dst {
                return Err(Error::Config(format!("link {k} has invalid endpoints")));
            }
            match l.kind {
                LinkKind::Wired { capacity } if !(capacity > 0.0) || !capacity.is_finite() => {
                    return Err(Error::Config(format!("wired link {k} needs a positive capacity")));
                }
                LinkKind::Wireless { tone } => {
                    if self.nodes[l.src].1 != NodeKind::Bs || self.nodes[l.dst].1 != NodeKind::User {
                        return Err(Error::Config(format!("wireless link {k} must go from a BS to a user")));
                    }
                    if tone >= self.radio.tones {
                        return Err(Error::Config(format!("wireless link {k} uses tone {tone} of {}", self.radio.tones)));
                    }
                }
                _ => {}
            }
        }
        if self.radio.noise.len() != n || self.radio.power.len() != n {
            return Err(Error::Config("radio data must cover every node".into()));
        }
        for (k, l) in self.links.iter().enumerate() {
            if l.is_wireless() && !(self.radio.noise[l.dst] > 0.0) {
                return Err(Error::Config(format!("user of wireless link {k} needs positive noise")));
            }
            if l.is_wireless() && !(self.radio.power[l.src] > 0.0) {
                return Err(Error::Config(format!("BS of wireless link {k} needs a positive power budget")));
            }
        }
        if !(self.radio.bandwidth > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        for (k, c) in self.commodities.iter().enumerate() {
            if c.src >= n || c.dst >= n || c.src == c.dst {
                return Err(Error::Config(format!("commodity {k} has invalid endpoints")));
            }
            if !self.reachable(c.src, c.dst) {
                return Err(Error::Config(format!("commodity {k} has no path from source to destination")));
            }
        }
        Ok(())
    }

    fn reachable(&self, s: usize, d: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(x) = stack.pop() {
            if x == d {
                return true;
            }
            for l in &self.links {
                if l.src == x && !seen[l.dst] {
                    seen[l.dst] = true;
                    stack.push(l.dst);
                }
            }
        }
        false
    }

    /// Whether commodity `i` may use link `l`. Wireless links only carry
    /// the commodity destined to their user.
    pub fn carries(&self, i: usize, l: usize) -> bool {
        let link = &self.links[l];
        !link.is_wireless() || self.commodities[i].dst == link.dst
    }

    pub fn wireless_links(&self) -> Vec<usize> {
        (0..self.links.len()).filter(|&l| self.links[l].is_wireless()).collect()
    }

    pub fn channel(&self, bs: usize, user: usize, tone: usize) -> Complex64 {
        self.radio.channels.get(&(bs, user, tone)).copied().unwrap_or_default()
    }

    /// Rate of every wireless link at real nonnegative precoders `v`
    /// (indexed by link; wired entries ignored).
    pub fn wireless_rates(&self, v: &[f64]) -> Vec<f64> {
        let mut rates = vec![0.0; self.links.len()];
        for (l, link) in self.links.iter().enumerate() {
            if let LinkKind::Wireless { tone } = link.kind {
                let (signal, interf) = self.received(v, l, link.dst, tone);
                rates[l] = self.radio.bandwidth * (1.0 + signal / (self.radio.noise[link.dst] + interf)).ln();
            }
        }
        rates
    }

    /// Signal power of link `l` and interference power at `user` on `tone`.
    fn received(&self, v: &[f64], l: usize, user: usize, tone: usize) -> (f64, f64) {
        let mut signal = 0.0;
        let mut interf = 0.0;
        for (n, other) in self.links.iter().enumerate() {
            if let LinkKind::Wireless { tone: g } = other.kind {
                if g == tone {
                    let p = self.channel(other.src, user, tone).norm_sqr() * v[n] * v[n];
                    if n == l {
                        signal = p;
                    } else {
                        interf += p;
                    }
                }
            }
        }
        (signal, interf)
    }

    /// Transmit power of every node on one tone.
    pub fn node_power_on_tone(&self, v: &[f64], tone: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.nodes.len()];
        for (l, link) in self.links.iter().enumerate() {
            if link.kind == (LinkKind::Wireless { tone }) {
                p[link.src] += v[l] * v[l];
            }
        }
        p
    }

    /// Transmit power of every node at precoders `v`.
    pub fn node_power(&self, v: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.nodes.len()];
        for (l, link) in self.links.iter().enumerate() {
            if link.is_wireless() {
                p[link.src] += v[l] * v[l];
            }
        }
        p
    }
}

/// Per-commodity per-link rates.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAllocation {
    /// `rates[i][l]`.
    pub rates: Vec<Vec<f64>>,
    /// End-to-end rate of each commodity.
    pub commodity_rates: Vec<f64>,
}

impl FlowAllocation {
    pub fn zeros(graph: &BackhaulGraph) -> Self {
        FlowAllocation {
            rates: vec![vec![0.0; graph.links.len()]; graph.commodities.len()],
            commodity_rates: vec![0.0; graph.commodities.len()],
        }
    }

    pub fn min_rate(&self) -> f64 {
        self.commodity_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Total rate on each link.
    pub fn link_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.rates.first().map_or(0, Vec::len)];
        for row in &self.rates {
            for (l, r) in row.iter().enumerate() {
                loads[l] += r;
            }
        }
        loads
    }
}

/// Conservation residual per `(commodity, node)`:
/// `in + [source] R_i - out - [destination] R_i`.
pub fn check_flow_conservation(graph: &BackhaulGraph, flows: &FlowAllocation) -> Vec<Vec<f64>> {
    let mut res = vec![vec![0.0; graph.nodes.len()]; graph.commodities.len()];
    for (i, c) in graph.commodities.iter().enumerate() {
        let r = &mut res[i];
        for (l, link) in graph.links.iter().enumerate() {
            let x = flows.rates[i][l];
            r[link.dst] += x;
            r[link.src] -= x;
        }
        r[c.src] += flows.commodity_rates[i];
        r[c.dst] -= flows.commodity_rates[i];
    }
    res
}

/// Largest relative capacity excess of `flows` given wireless precoders `v`.
pub fn max_capacity_violation(graph: &BackhaulGraph, flows: &FlowAllocation, v: &[f64]) -> f64 {
    let loads = flows.link_loads();
    let wl = graph.wireless_rates(v);
    let mut worst: f64 = 0.0;
    for (l, link) in graph.links.iter().enumerate() {
        let cap = match link.kind {
            LinkKind::Wired { capacity } => capacity,
            LinkKind::Wireless { .. } => wl[l],
        };
        let excess = loads[l] - cap;
        if excess > 0.0 {
            worst = worst.max(excess / cap.max(1e-12));
        }
    }
    worst
}

/// Coefficients of the concave lower bound
/// `c1 + c2 v_l - sum_n c3_ln v_n^2 <= log(1 + SINR_l)` at fixed `(u, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMseCoefficients {
    pub c1: f64,
    pub c2: f64,
    /// `w |u|^2`; multiply by `|h_n|^2` for `c3_ln`.
    pub c3_scale: f64,
}

/// `c1 = 1 + log w - w (1 + sigma^2 |u|^2)`, `c2 = 2 w Re(u* h)`,
/// `c3_ln = w |u|^2 |h_n|^2`.
pub fn rate_mse_coeffs(u: Complex64, w: f64, h: Complex64, noise: f64) -> Result<RateMseCoefficients> {
    if !(w > 0.0) {
        return Err(Error::Numeric(format!("rate-MSE weight must be positive, got {w}")));
    }
    Ok(RateMseCoefficients {
        c1: 1.0 + w.ln() - w * (1.0 + noise * u.norm_sqr()),
        c2: 2.0 * w * (u.conj() * h).re,
        c3_scale: w * u.norm_sqr(),
    })
}

/// MMSE receiver and `w = 1/e` of a scalar link with signal amplitude
/// `h v` and total received power `total` (signal + interference + noise).
pub fn mmse_scalar(h: Complex64, v: f64, total: f64) -> (Complex64, f64) {
    let u = h * v / total;
    let e = 1.0 - (u.conj() * h * v).re;
    (u, 1.0 / e)
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

/// Parses the edge-list text format:
///
/// ```text
/// [nodes]
/// <id> router|bs|user
/// [edges]
/// <src> <dst> wired <capacity>
/// <src> <dst> wireless auto        # one link per tone
/// [commodities]
/// <src> <dst>
/// [radio]
/// tones <F>
/// bandwidth <B>
/// noise <value> | noise <user> <value>
/// power <value> | power <bs> <value>
/// [channels]
/// <bs> <user> <tone> <re> <im>
/// ```
///
/// `#` starts a comment.
pub fn parse_graph(text: &str) -> Result<BackhaulGraph> {
    let mut section = String::new();
    let mut nodes: Vec<(i64, NodeKind)> = Vec::new();
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut edges: Vec<(usize, i64, i64, String, String)> = Vec::new();
    let mut commodities = Vec::new();
    let mut tones = 1usize;
    let mut bandwidth = 1.0;
    let mut noise_default = 1.0;
    let mut power_default = 1.0;
    let mut noise_by: Vec<(usize, i64, f64)> = Vec::new();
    let mut power_by: Vec<(usize, i64, f64)> = Vec::new();
    let mut chans: Vec<(usize, i64, i64, usize, Complex64)> = Vec::new();

    let num = |ln: usize, s: &str| s.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number {s:?}")));
    let int = |ln: usize, s: &str| s.parse::<i64>().map_err(|_| parse_err(ln, format!("bad integer {s:?}")));

    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_lowercase();
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        match section.as_str() {
            "nodes" => {
                if tok.len() != 2 {
                    return Err(parse_err(ln, "expected `<id> <kind>`"));
                }
                let id = int(ln, tok[0])?;
                let kind = match tok[1].to_lowercase().as_str() {
                    "router" => NodeKind::Router,
                    "bs" => NodeKind::Bs,
                    "user" => NodeKind::User,
                    other => return Err(parse_err(ln, format!("unknown node kind {other:?}"))),
                };
                if index.insert(id, nodes.len()).is_some() {
                    return Err(parse_err(ln, format!("duplicate node id {id}")));
                }
                nodes.push((id, kind));
            }
            "edges" => {
                if tok.len() != 4 {
                    return Err(parse_err(ln, "expected `<src> <dst> <kind> <capacity>`"));
                }
                edges.push((ln, int(ln, tok[0])?, int(ln, tok[1])?, tok[2].to_lowercase(), tok[3].to_lowercase()));
            }
            "commodities" => {
                if tok.len() != 2 {
                    return Err(parse_err(ln, "expected `<src> <dst>`"));
                }
                commodities.push((ln, int(ln, tok[0])?, int(ln, tok[1])?));
            }
            "radio" => match (tok[0], tok.len()) {
                ("tones", 2) => tones = int(ln, tok[1])?.max(0) as usize,
                ("bandwidth", 2) => bandwidth = num(ln, tok[1])?,
                ("noise", 2) => noise_default = num(ln, tok[1])?,
                ("noise", 3) => noise_by.push((ln, int(ln, tok[1])?, num(ln, tok[2])?)),
                ("power", 2) => power_default = num(ln, tok[1])?,
                ("power", 3) => power_by.push((ln, int(ln, tok[1])?, num(ln, tok[2])?)),
                _ => return Err(parse_err(ln, format!("unknown radio entry {line:?}"))),
            },
            "channels" => {
                if tok.len() != 5 {
                    return Err(parse_err(ln, "expected `<bs> <user> <tone> <re> <im>`"));
                }
                let tone = int(ln, tok[2])?;
                if tone < 0 {
                    return Err(parse_err(ln, "negative tone"));
                }
                chans.push((ln, int(ln, tok[0])?, int(ln, tok[1])?, tone as usize, Complex64::new(num(ln, tok[3])?, num(ln, tok[4])?)));
            }
            "" => return Err(parse_err(ln, "content before the first section")),
            other => return Err(parse_err(ln, format!("unknown section [{other}]"))),
        }
    }

    let node = |ln: usize, id: i64| index.get(&id).copied().ok_or_else(|| parse_err(ln, format!("unknown node {id}")));
    let mut links = Vec::new();
    for (ln, s, d, kind, cap) in edges {
        let (s, d) = (node(ln, s)?, node(ln, d)?);
        match kind.as_str() {
            "wired" => links.push(GraphLink { src: s, dst: d, kind: LinkKind::Wired { capacity: num(ln, &cap)? } }),
            "wireless" => {
                if cap != "auto" {
                    return Err(parse_err(ln, "wireless capacity must be `auto`"));
                }
                for f in 0..tones {
                    links.push(GraphLink { src: s, dst: d, kind: LinkKind::Wireless { tone: f } });
                }
            }
            other => return Err(parse_err(ln, format!("unknown edge kind {other:?}"))),
        }
    }
    let commodities = commodities
        .into_iter()
        .map(|(ln, s, d)| Ok(Commodity { src: node(ln, s)?, dst: node(ln, d)? }))
        .collect::<Result<Vec<_>>>()?;
    let mut noise = vec![noise_default; nodes.len()];
    for (ln, id, x) in noise_by {
        noise[node(ln, id)?] = x;
    }
    let mut power = vec![power_default; nodes.len()];
    for (ln, id, x) in power_by {
        power[node(ln, id)?] = x;
    }
    let mut channels = HashMap::new();
    for (ln, b, u, f, h) in chans {
        channels.insert((node(ln, b)?, node(ln, u)?, f), h);
    }
    let graph = BackhaulGraph {
        nodes,
        links,
        commodities,
        radio: Radio { tones, bandwidth, noise, power, channels },
    };
    graph.validate()?;
    Ok(graph)
}

/// Writes `graph` in the format read by [`parse_graph`]. Wireless links are
/// written once per `(bs, user)` pair, so the graph must contain all tones
/// of every wireless pair.
pub fn write_graph(graph: &BackhaulGraph) -> String {
    let mut s = String::from("[nodes]\n");
    for (id, kind) in &graph.nodes {
        let k = match kind {
            NodeKind::Router => "router",
            NodeKind::Bs => "bs",
            NodeKind::User => "user",
        };
        let _ = writeln!(s, "{id} {k}");
    }
    s.push_str("[edges]\n");
    for l in &graph.links {
        let (a, b) = (graph.nodes[l.src].0, graph.nodes[l.dst].0);
        match l.kind {
            LinkKind::Wired { capacity } => {
                let _ = writeln!(s, "{a} {b} wired {capacity:?}");
            }
            LinkKind::Wireless { tone: 0 } => {
                let _ = writeln!(s, "{a} {b} wireless auto");
            }
            LinkKind::Wireless { .. } => {}
        }
    }
    s.push_str("[commodities]\n");
    for c in &graph.commodities {
        let _ = writeln!(s, "{} {}", graph.nodes[c.src].0, graph.nodes[c.dst].0);
    }
    let r = &graph.radio;
    let _ = writeln!(s, "[radio]\ntones {}\nbandwidth {:?}", r.tones, r.bandwidth);
    for (n, (id, _)) in graph.nodes.iter().enumerate() {
        let _ = writeln!(s, "noise {id} {:?}\npower {id} {:?}", r.noise[n], r.power[n]);
    }
    s.push_str("[channels]\n");
    let mut keys: Vec<_> = r.channels.keys().copied().collect();
    keys.sort_unstable();
    for (b, u, f) in keys {
        let h = r.channels[&(b, u, f)];
        let _ = writeln!(s, "{} {} {f} {:?} {:?}", graph.nodes[b].0, graph.nodes[u].0, h.re, h.im);
    }
    s
}

/// One row of a flow dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub commodity: usize,
    pub link: usize,
    pub rate: f64,
}

/// Writes `(commodity, link, rate)` rows for every nonzero rate.
pub fn write_flows_csv<W: Write>(flows: &FlowAllocation, out: W) -> Result<()> {
    let mut rows = Vec::new();
    for (i, row) in flows.rates.iter().enumerate() {
        for (l, &r) in row.iter().enumerate() {
            if r != 0.0 {
                rows.push(FlowRecord { commodity: i, link: l, rate: r });
            }
        }
    }
    write_records(&rows, out)
}
