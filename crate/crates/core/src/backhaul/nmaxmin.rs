//! Outer Rate-MSE loop, inner ADMM, and the feasibility repair.
//!
//! Variables of the inner problem: `R_{i,l}` for every commodity and link it
//! may use, one precoder `v_l >= 0` per wireless link, a per-(BS, tone)
//! power `p_{s,f}` and the common commodity rate `t`. Constraint groups:
//!
//! ```text
//!   sum_in R_i - sum_out R_i + [src] t - [dst] t = 0     per (commodity, node)
//!   sum_i R_{i,l} <= C_l                                  per wired link
//!   sum_i R_{i,l} + B c3_l . p_f - B c2_l v_l <= B c1_l    per wireless link
//!   sum_{l on f} v_l^2 <= p_{s,f},  sum_f p_{s,f} <= P_s   per BS
//! ```
//!
//! Replacing `sum_n c3_ln v_n^2` by the powers keeps each group cheap to
//! project and is exact at the optimum, where `p_{s,f}` is tight.

use std::time::Instant;

use num_complex::Complex64;

use super::admm::{AdmmSettings, AdmmState, ConsensusProblem, Group, GroupSet};
use super::maxflow::FlowNetwork;
use super::{mmse_scalar, rate_mse_coeffs, BackhaulGraph, FlowAllocation, LinkKind, NodeKind};
use crate::error::{Error, Result};
use crate::report::{IterationRecord, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NMaxMinConfig {
    pub max_outer: usize,
    /// Stop once the accepted min-rate has improved by less than this
    /// (relative) for `patience` consecutive outer iterations after the
    /// warm-up.
    pub tolerance: f64,
    pub patience: usize,
    /// Outer iterations run with the reduced inner cap.
    pub warmup_outer: usize,
    pub warmup_inner: usize,
    pub inner: AdmmSettings,
}

impl Default for NMaxMinConfig {
    fn default() -> Self {
        NMaxMinConfig { max_outer: 25, tolerance: 1e-4, patience: 3, warmup_outer: 5, warmup_inner: 500, inner: AdmmSettings::default() }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OuterRecord {
    pub outer: usize,
    /// Best feasible min-rate so far.
    pub min_rate: f64,
    /// Min-rate of this iteration's repaired candidate.
    pub candidate_rate: f64,
    pub accepted: bool,
    pub inner_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub inner_converged: bool,
}

#[derive(Debug, Clone)]
pub struct NMaxMinSolution {
    pub flows: FlowAllocation,
    /// Precoder per link (zero on wired links).
    pub precoders: Vec<f64>,
    pub trace: Vec<OuterRecord>,
    pub report: SolveReport,
}

struct Layout {
    r: Vec<Vec<Option<usize>>>,
    v: Vec<Option<usize>>,
    p: Vec<Vec<Option<usize>>>,
    t: usize,
    n: usize,
}

impl Layout {
    fn new(graph: &BackhaulGraph, with_radio: bool) -> Self {
        let mut n = 0;
        let mut next = || {
            n += 1;
            n - 1
        };
        let r = (0..graph.commodities.len())
            .map(|i| (0..graph.links.len()).map(|l| graph.carries(i, l).then(&mut next)).collect())
            .collect();
        let mut v = vec![None; graph.links.len()];
        let mut p = vec![vec![None; graph.radio.tones]; graph.nodes.len()];
        if with_radio {
            for (l, link) in graph.links.iter().enumerate() {
                if let LinkKind::Wireless { tone } = link.kind {
                    v[l] = Some(next());
                    if p[link.src][tone].is_none() {
                        p[link.src][tone] = Some(next());
                    }
                }
            }
        }
        let t = next();
        Layout { r, v, p, t, n }
    }
}

/// Per-link right-hand side data of the wireless constraint.
#[derive(Debug, Clone)]
enum WirelessRow {
    /// Fixed capacity.
    Fixed(f64),
    /// `B c1`, `B c2` and `B c3_scale |h_{s',d,f}|^2` per interfering BS.
    Linearized { c1: f64, c2: f64, interference: Vec<(usize, f64)> },
}

fn build_problem(graph: &BackhaulGraph, lay: &Layout, wireless: &[Option<WirelessRow>]) -> ConsensusProblem {
    let mut groups = Vec::new();
    for (i, c) in graph.commodities.iter().enumerate() {
        for node in 0..graph.nodes.len() {
            let mut vars = Vec::new();
            let mut a = Vec::new();
            for (l, link) in graph.links.iter().enumerate() {
                if let Some(j) = lay.r[i][l] {
                    if link.dst == node {
                        vars.push(j);
                        a.push(1.0);
                    } else if link.src == node {
                        vars.push(j);
                        a.push(-1.0);
                    }
                }
            }
            if node == c.src {
                vars.push(lay.t);
                a.push(1.0);
            } else if node == c.dst {
                vars.push(lay.t);
                a.push(-1.0);
            }
            if !vars.is_empty() {
                groups.push(Group { vars, set: GroupSet::Hyperplane { a, b: 0.0 } });
            }
        }
    }
    for (l, link) in graph.links.iter().enumerate() {
        let mut vars: Vec<usize> = (0..graph.commodities.len()).filter_map(|i| lay.r[i][l]).collect();
        let mut a = vec![1.0; vars.len()];
        let b = match (&link.kind, &wireless[l]) {
            (LinkKind::Wired { capacity }, _) => *capacity,
            (LinkKind::Wireless { .. }, Some(WirelessRow::Fixed(cap))) => *cap,
            (LinkKind::Wireless { tone }, Some(WirelessRow::Linearized { c1, c2, interference })) => {
                for &(s, coef) in interference {
                    if let Some(j) = lay.p[s][*tone] {
                        if coef != 0.0 {
                            vars.push(j);
                            a.push(coef);
                        }
                    }
                }
                if let Some(j) = lay.v[l] {
                    vars.push(j);
                    a.push(-c2);
                }
                *c1
            }
            (LinkKind::Wireless { .. }, None) => unreachable!("wireless row missing"),
        };
        if !vars.is_empty() {
            groups.push(Group { vars, set: GroupSet::Halfspace { a, b } });
        }
    }
    for (s, tones) in lay.p.iter().enumerate() {
        if tones.iter().all(Option::is_none) {
            continue;
        }
        let mut vars = Vec::new();
        let mut cone = Vec::new();
        for (f, p) in tones.iter().enumerate() {
            let Some(pj) = p else { continue };
            let mut vs = Vec::new();
            for (l, link) in graph.links.iter().enumerate() {
                if link.src == s && link.kind == (LinkKind::Wireless { tone: f }) {
                    vs.push(vars.len());
                    vars.push(lay.v[l].expect("wireless precoder variable"));
                }
            }
            cone.push((vs, vars.len()));
            vars.push(*pj);
        }
        groups.push(Group { vars, set: GroupSet::PowerCone { tones: cone, budget: graph.radio.power[s] } });
    }
    let mut cost = vec![0.0; lay.n];
    cost[lay.t] = -1.0;
    ConsensusProblem { num_vars: lay.n, cost, lower: vec![0.0; lay.n], groups }
}

fn raw_rates(graph: &BackhaulGraph, lay: &Layout, z: &[f64]) -> Vec<Vec<f64>> {
    (0..graph.commodities.len())
        .map(|i| (0..graph.links.len()).map(|l| lay.r[i][l].map_or(0.0, |j| z[j].max(0.0))).collect())
        .collect()
}

fn link_capacities(graph: &BackhaulGraph, wireless_caps: &[f64]) -> Vec<f64> {
    graph
        .links
        .iter()
        .enumerate()
        .map(|(l, link)| match link.kind {
            LinkKind::Wired { capacity } => capacity,
            LinkKind::Wireless { .. } => wireless_caps[l],
        })
        .collect()
}

/// Turns approximate per-commodity rates into an exactly feasible flow:
/// a max-flow per commodity inside `min(raw, capacity)`, a common scaling
/// that restores the shared capacities, and equalization of all commodities
/// to the smallest rate.
pub fn repair_flows(graph: &BackhaulGraph, raw: &[Vec<f64>], capacity: &[f64]) -> FlowAllocation {
    let k = graph.commodities.len();
    let mut flows = FlowAllocation::zeros(graph);
    let mut values = vec![0.0; k];
    for (i, c) in graph.commodities.iter().enumerate() {
        let mut net = FlowNetwork::new(graph.nodes.len());
        let mut edges = Vec::new();
        for (l, link) in graph.links.iter().enumerate() {
            if graph.carries(i, l) {
                let cap = raw[i][l].min(capacity[l]).max(0.0);
                edges.push((l, net.add_edge(link.src, link.dst, cap)));
            }
        }
        let (value, per_edge) = net.max_flow(c.src, c.dst);
        values[i] = value;
        for (l, e) in edges {
            flows.rates[i][l] = per_edge[e];
        }
    }
    let loads = flows.link_loads();
    let mut gamma: f64 = 1.0;
    for (l, &load) in loads.iter().enumerate() {
        if load > capacity[l] {
            gamma = gamma.min(capacity[l].max(0.0) / load);
        }
    }
    let t = gamma * values.iter().copied().fold(f64::INFINITY, f64::min);
    let t = if t.is_finite() { t.max(0.0) } else { 0.0 };
    for i in 0..k {
        let factor = if values[i] > 0.0 { t / values[i] } else { 0.0 };
        for r in &mut flows.rates[i] {
            *r *= factor;
        }
        flows.commodity_rates[i] = if values[i] > 0.0 { t } else { 0.0 };
    }
    flows
}

/// Exact single-commodity max-flow with the given wireless capacities.
pub fn max_flow_value(graph: &BackhaulGraph, wireless_caps: &[f64], commodity: usize) -> Result<f64> {
    let c = graph
        .commodities
        .get(commodity)
        .ok_or_else(|| Error::Dimension(format!("commodity {commodity} out of range")))?;
    let caps = link_capacities(graph, &check_caps(graph, wireless_caps)?);
    let mut net = FlowNetwork::new(graph.nodes.len());
    for (l, link) in graph.links.iter().enumerate() {
        if graph.carries(commodity, l) {
            net.add_edge(link.src, link.dst, caps[l]);
        }
    }
    Ok(net.max_flow(c.src, c.dst).0)
}

fn check_caps(graph: &BackhaulGraph, wireless_caps: &[f64]) -> Result<Vec<f64>> {
    if wireless_caps.is_empty() && graph.wireless_links().is_empty() {
        return Ok(vec![0.0; graph.links.len()]);
    }
    if wireless_caps.len() != graph.links.len() {
        return Err(Error::Dimension(format!(
            "expected {} link capacities, got {}",
            graph.links.len(),
            wireless_caps.len()
        )));
    }
    for (l, &c) in wireless_caps.iter().enumerate() {
        if graph.links[l].is_wireless() && !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("wireless capacity of link {l} must be finite and nonnegative")));
        }
    }
    Ok(wireless_caps.to_vec())
}

/// Max-min multicommodity flow with every capacity fixed (`wireless_caps`
/// indexed by link; may be empty when there are no wireless links).
/// Solved by ADMM followed by the feasibility repair.
pub fn solve_flow_lp(graph: &BackhaulGraph, wireless_caps: &[f64], settings: &AdmmSettings) -> Result<FlowAllocation> {
    graph.validate()?;
    let caps = check_caps(graph, wireless_caps)?;
    let lay = Layout::new(graph, false);
    let rows: Vec<Option<WirelessRow>> = graph
        .links
        .iter()
        .enumerate()
        .map(|(l, link)| link.is_wireless().then(|| WirelessRow::Fixed(caps[l])))
        .collect();
    let problem = build_problem(graph, &lay, &rows);
    let mut state = problem.initial_state(vec![0.0; lay.n], settings.rho);
    problem.solve(&mut state, settings);
    Ok(repair_flows(graph, &raw_rates(graph, &lay, &state.z), &link_capacities(graph, &caps)))
}

fn initial_precoders(graph: &BackhaulGraph) -> Vec<f64> {
    let mut count = vec![0usize; graph.nodes.len()];
    for link in &graph.links {
        if link.is_wireless() {
            count[link.src] += 1;
        }
    }
    graph
        .links
        .iter()
        .map(|link| if link.is_wireless() { (graph.radio.power[link.src] / count[link.src] as f64).sqrt() } else { 0.0 })
        .collect()
}

fn linearize(graph: &BackhaulGraph, v: &[f64]) -> Result<Vec<Option<WirelessRow>>> {
    let bw = graph.radio.bandwidth;
    let bss: Vec<usize> = (0..graph.nodes.len()).filter(|&s| graph.nodes[s].1 == NodeKind::Bs).collect();
    let mut rows = Vec::with_capacity(graph.links.len());
    for (l, link) in graph.links.iter().enumerate() {
        let LinkKind::Wireless { tone } = link.kind else {
            rows.push(None);
            continue;
        };
        let noise = graph.radio.noise[link.dst];
        let power = graph.node_power_on_tone(v, tone);
        let total = noise
            + bss.iter().map(|&s| graph.channel(s, link.dst, tone).norm_sqr() * power[s]).sum::<f64>();
        let h = graph.channel(link.src, link.dst, tone);
        let (u, w) = if v[l] > 0.0 { mmse_scalar(h, v[l], total) } else { (Complex64::new(0.0, 0.0), 1.0) };
        let c = rate_mse_coeffs(u, w, h, noise)?;
        let interference = bss
            .iter()
            .map(|&s| (s, bw * c.c3_scale * graph.channel(s, link.dst, tone).norm_sqr()))
            .collect();
        rows.push(Some(WirelessRow::Linearized { c1: bw * c.c1, c2: bw * c.c2, interference }));
    }
    Ok(rows)
}

/// Clips precoders to be nonnegative and scales each BS into its budget.
fn feasible_precoders(graph: &BackhaulGraph, lay: &Layout, z: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..graph.links.len()).map(|l| lay.v[l].map_or(0.0, |j| z[j].max(0.0))).collect();
    let power = graph.node_power(&v);
    for (l, link) in graph.links.iter().enumerate() {
        if link.is_wireless() {
            let budget = graph.radio.power[link.src];
            if power[link.src] > budget {
                v[l] *= (budget / power[link.src]).sqrt();
            }
        }
    }
    v
}

fn initial_z(graph: &BackhaulGraph, lay: &Layout, v: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; lay.n];
    for (l, j) in lay.v.iter().enumerate() {
        if let Some(j) = j {
            z[*j] = v[l];
        }
    }
    for f in 0..graph.radio.tones {
        let power = graph.node_power_on_tone(v, f);
        for (s, p) in lay.p.iter().enumerate() {
            if let Some(j) = p[f] {
                z[j] = power[s];
            }
        }
    }
    z
}

/// N-MaxMin: alternates MMSE receivers and weights with an inner ADMM over
/// `{v, R}`. Each inner result is repaired to a feasible point and accepted
/// only if it does not lower the min-rate, so the trace is monotone.
pub fn solve_nmaxmin(graph: &BackhaulGraph, config: &NMaxMinConfig) -> Result<NMaxMinSolution> {
    graph.validate()?;
    let start = Instant::now();
    let lay = Layout::new(graph, true);
    let mut v = initial_precoders(graph);
    let caps = link_capacities(graph, &graph.wireless_rates(&v));
    let unclipped: Vec<Vec<f64>> = vec![caps.clone(); graph.commodities.len()];
    let mut flows = repair_flows(graph, &unclipped, &caps);
    let mut best = flows.min_rate();
    let mut trace = vec![OuterRecord {
        outer: 0,
        min_rate: best,
        candidate_rate: best,
        accepted: true,
        inner_iterations: 0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        inner_converged: true,
    }];
    let mut state: Option<AdmmState> = None;
    let mut converged = false;
    let mut stalled = 0;
    // a rejected candidate means the inner solve was too loose for the
    // repair; later inner solves run tighter
    let mut tolerance = config.inner.tolerance;
    for outer in 1..=config.max_outer {
        let rows = linearize(graph, &v)?;
        let problem = build_problem(graph, &lay, &rows);
        let st = state.get_or_insert_with(|| problem.initial_state(initial_z(graph, &lay, &v), config.inner.rho));
        let mut settings = config.inner;
        settings.tolerance = tolerance;
        if outer <= config.warmup_outer {
            settings.max_iters = config.warmup_inner.min(settings.max_iters);
        }
        let out = problem.solve(st, &settings);
        let cand_v = feasible_precoders(graph, &lay, &st.z);
        let cand_caps = link_capacities(graph, &graph.wireless_rates(&cand_v));
        let cand = repair_flows(graph, &raw_rates(graph, &lay, &st.z), &cand_caps);
        let rate = cand.min_rate();
        let previous = best;
        let accepted = rate >= best;
        if !accepted {
            tolerance = (tolerance * 0.1).max(config.inner.tolerance * 1e-3);
        }
        if accepted {
            best = rate;
            flows = cand;
            v = cand_v;
        }
        trace.push(OuterRecord {
            outer,
            min_rate: best,
            candidate_rate: rate,
            accepted,
            inner_iterations: out.iterations,
            primal_residual: out.primal_residual,
            dual_residual: out.dual_residual,
            inner_converged: out.converged,
        });
        if best - previous <= config.tolerance * best.abs().max(1e-12) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if outer > config.warmup_outer && stalled >= config.patience.max(1) {
            converged = true;
            break;
        }
    }
    let power = graph.node_power(&v);
    let max_violation = (0..graph.nodes.len())
        .filter(|&s| graph.nodes[s].1 == NodeKind::Bs)
        .map(|s| (power[s] - graph.radio.power[s]).max(0.0))
        .fold(0.0, f64::max);
    let report = SolveReport {
        iterations: trace
            .iter()
            .map(|r| IterationRecord {
                iteration: r.outer,
                objective: r.min_rate,
                sum_rate: r.min_rate * graph.commodities.len() as f64,
                min_rate: r.min_rate,
                max_power_violation: max_violation,
            })
            .collect(),
        user_rates: flows.commodity_rates.clone(),
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(NMaxMinSolution { flows, precoders: v, trace, report })
}

#[cfg(test)]
mod tests {
    use super::super::{check_flow_conservation, parse_graph};
    use super::*;

    const TWO_PATHS: &str = "
[nodes]
0 router
1 router
2 router
3 user
[edges]
0 1 wired 1
1 3 wired 5
0 2 wired 2
2 3 wired 5
[commodities]
0 3
";

    #[test]
    fn repair_is_feasible() {
        let g = parse_graph(TWO_PATHS).unwrap();
        let caps = link_capacities(&g, &[0.0; 4]);
        let f = repair_flows(&g, &[vec![3.0, 9.0, 0.5, 0.2]], &caps);
        assert!((f.min_rate() - 1.2).abs() < 1e-12);
        assert!(check_flow_conservation(&g, &f)[0].iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn flow_lp_two_paths() {
        let g = parse_graph(TWO_PATHS).unwrap();
        let tight = AdmmSettings { tolerance: 1e-8, max_iters: 50_000, ..Default::default() };
        let f = solve_flow_lp(&g, &[], &tight).unwrap();
        assert!((f.min_rate() - 3.0).abs() < 1e-3, "{}", f.min_rate());
        assert_eq!(max_flow_value(&g, &[], 0).unwrap(), 3.0);
    }

    #[test]
    fn point_to_point() {
        let text = "
[nodes]
0 router
1 bs
2 user
[edges]
0 1 wired 100
1 2 wireless auto
[commodities]
0 2
[radio]
tones 1
noise 0.5
power 2
[channels]
1 2 0 0.6 0.8
";
        let g = parse_graph(text).unwrap();
        let sol = solve_nmaxmin(&g, &NMaxMinConfig::default()).unwrap();
        let expected = (1.0f64 + 2.0 / 0.5).ln();
        let got = sol.flows.min_rate();
        assert!((got - expected).abs() < 1e-3 * expected, "{got} vs {expected}");
    }
}
