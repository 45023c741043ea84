//! Dinic max-flow on real capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    rev: usize,
    cap: f64,
    /// Index of the originating edge, `None` for reverse arcs.
    edge: Option<usize>,
}

/// Max-flow network.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<Arc>>,
    num_edges: usize,
    original: Vec<f64>,
}

const EPS: f64 = 1e-15;

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork { adj: vec![Vec::new(); nodes], num_edges: 0, original: Vec::new() }
    }

    /// Adds a directed edge and returns its index.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let e = self.num_edges;
        self.num_edges += 1;
        self.original.push(cap.max(0.0));
        let rf = self.adj[to].len() + usize::from(from == to);
        let rt = self.adj[from].len();
        self.adj[from].push(Arc { to, rev: rf, cap: cap.max(0.0), edge: Some(e) });
        self.adj[to].push(Arc { to: from, rev: rt, cap: 0.0, edge: None });
        e
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.adj.len()];
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            for a in &self.adj[x] {
                if a.cap > EPS && level[a.to] == usize::MAX {
                    level[a.to] = level[x] + 1;
                    q.push_back(a.to);
                }
            }
        }
        (level[t] != usize::MAX).then_some(level)
    }

    fn push(&mut self, x: usize, t: usize, f: f64, level: &[usize], it: &mut [usize]) -> f64 {
        if x == t {
            return f;
        }
        while it[x] < self.adj[x].len() {
            let (to, cap, rev) = {
                let a = &self.adj[x][it[x]];
                (a.to, a.cap, a.rev)
            };
            if cap > EPS && level[to] == level[x] + 1 {
                let d = self.push(to, t, f.min(cap), level, it);
                if d > 0.0 {
                    self.adj[x][it[x]].cap -= d;
                    self.adj[to][rev].cap += d;
                    return d;
                }
            }
            it[x] += 1;
        }
        0.0
    }

    /// Maximum flow from `s` to `t`; returns the value and per-edge flows.
    pub fn max_flow(&mut self, s: usize, t: usize) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        if s != t {
            while let Some(level) = self.levels(s, t) {
                let mut it = vec![0; self.adj.len()];
                loop {
                    let f = self.push(s, t, f64::INFINITY, &level, &mut it);
                    if f <= EPS {
                        break;
                    }
                    total += f;
                }
            }
        }
        let mut flows = vec![0.0; self.num_edges];
        for arcs in &self.adj {
            for a in arcs {
                if let Some(e) = a.edge {
                    flows[e] = (self.original[e] - a.cap).clamp(0.0, self.original[e]);
                }
            }
        }
        (total, flows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_paths() {
        let mut g = FlowNetwork::new(4);
        g.add_edge(0, 1, 1.0);
        g.add_edge(1, 3, 1.0);
        g.add_edge(0, 2, 2.0);
        g.add_edge(2, 3, 2.0);
        let (v, f) = g.max_flow(0, 3);
        assert!((v - 3.0).abs() < 1e-12);
        assert_eq!(f, vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn classic_network() {
        // CLRS example, max flow 23
        let edges = [(0, 1, 16.0), (0, 2, 13.0), (2, 1, 4.0), (1, 3, 12.0), (3, 2, 9.0), (2, 4, 14.0), (4, 3, 7.0), (3, 5, 20.0), (4, 5, 4.0)];
        let mut g = FlowNetwork::new(6);
        for (a, b, c) in edges {
            g.add_edge(a, b, c);
        }
        let (v, f) = g.max_flow(0, 5);
        assert!((v - 23.0).abs() < 1e-12);
        for (k, (_, _, c)) in edges.iter().enumerate() {
            assert!(f[k] <= *c + 1e-12);
        }
    }

    #[test]
    fn zero_cut() {
        let mut g = FlowNetwork::new(3);
        g.add_edge(0, 1, 5.0);
        g.add_edge(1, 2, 0.0);
        assert_eq!(g.max_flow(0, 2).0, 0.0);
    }
}
