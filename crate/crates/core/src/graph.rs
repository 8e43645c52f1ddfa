//! Directed communication graph of the UAV network.
//!
//! An edge `i -> j` means UAV `i` sends its generated samples to UAV `j`.
//! In-neighbours of `i` are the senders it receives from, out-neighbours the
//! receivers it sends to.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::airlink::LinkBudget;
use crate::error::{domain, parse, Result};

/// Shortest-path length in edges, or an explicit unreachable marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Hops {
    Reachable(usize),
    Unreachable,
}

impl Hops {
    pub fn count(self) -> Option<usize> {
        match self {
            Hops::Reachable(n) => Some(n),
            Hops::Unreachable => None,
        }
    }
}

/// Result of [`NetGraph::max_shortest_path`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaxPath {
    /// `overall` is `l^max`; `per_node[i]` is `l_i^max`.
    Finite { overall: usize, per_node: Vec<usize> },
    /// Some ordered pair has no path.
    Unreachable,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetGraph {
    nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    budgets: BTreeMap<(usize, usize), LinkBudget>,
}

impl NetGraph {
    /// Graph on nodes `0..nodes` with no edges.
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            ..Default::default()
        }
    }

    pub fn with_edges(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::new(nodes);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Directed ring `order[0] -> order[1] -> ... -> order[0]`.
    pub fn ring(order: &[usize]) -> Result<Self> {
        let n = order.len();
        Self::with_edges(n, (0..n).map(|k| (order[k], order[(k + 1) % n])))
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from >= self.nodes || to >= self.nodes {
            return Err(domain(format!("edge ({from}, {to}) references a node outside 0..{}", self.nodes)));
        }
        if from == to {
            return Err(domain(format!("self-loop on node {from}")));
        }
        if !self.edges.insert((from, to)) {
            return Err(domain(format!("duplicate edge ({from}, {to})")));
        }
        Ok(())
    }

    pub fn add_link(&mut self, budget: LinkBudget) -> Result<()> {
        self.add_edge(budget.from, budget.to)?;
        self.budgets.insert((budget.from, budget.to), budget);
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn budget(&self, from: usize, to: usize) -> Option<&LinkBudget> {
        self.budgets.get(&(from, to))
    }

    pub fn budget_mut(&mut self, from: usize, to: usize) -> Option<&mut LinkBudget> {
        self.budgets.get_mut(&(from, to))
    }

    /// Senders of node `i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    /// Receivers of node `i`, ascending.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.range((i, 0)..(i + 1, 0)).map(|e| e.1).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == i).count()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges.range((i, 0)..(i + 1, 0)).count()
    }

    /// Breadth-first hop counts from `source` to every node.
    pub fn shortest_path_lengths(&self, source: usize) -> Result<Vec<Hops>> {
        if source >= self.nodes {
            return Err(domain(format!("unknown source node {source}")));
        }
        let adjacency: Vec<Vec<usize>> = (0..self.nodes).map(|i| self.out_neighbors(i)).collect();
        let mut dist = vec![Hops::Unreachable; self.nodes];
        dist[source] = Hops::Reachable(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let Hops::Reachable(du) = dist[u] else { unreachable!() };
            for &v in &adjacency[u] {
                if dist[v] == Hops::Unreachable {
                    dist[v] = Hops::Reachable(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    pub fn max_shortest_path(&self) -> MaxPath {
        let mut per_node = Vec::with_capacity(self.nodes);
        for i in 0..self.nodes {
            let dist = self.shortest_path_lengths(i).expect("node in range");
            let mut worst = 0;
            for d in dist {
                match d {
                    Hops::Reachable(n) => worst = worst.max(n),
                    Hops::Unreachable => return MaxPath::Unreachable,
                }
            }
            per_node.push(worst);
        }
        MaxPath::Finite {
            overall: per_node.iter().copied().max().unwrap_or(0),
            per_node,
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        matches!(self.max_shortest_path(), MaxPath::Finite { .. })
    }

    /// A single directed cycle through every node.
    pub fn is_ring(&self) -> bool {
        self.nodes >= 2
            && (0..self.nodes).all(|i| self.in_degree(i) == 1 && self.out_degree(i) == 1)
            && self.is_strongly_connected()
    }

    /// `# nodes N` followed by one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.nodes);
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    /// Parses [`NetGraph::to_edge_list`] output. Without a `# nodes` line
    /// the node count is one past the largest id.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("nodes") {
                    declared = Some(n.trim().parse::<usize>().map_err(|_| parse("bad node count"))?);
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                it.next()
                    .ok_or_else(|| parse(format!("edge line `{line}` needs two ids")))?
                    .parse()
                    .map_err(|_| parse(format!("bad node id in `{line}`")))
            };
            pairs.push((next()?, next()?));
        }
        let nodes = declared.unwrap_or_else(|| pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0));
        Self::with_edges(nodes, pairs)
    }

    /// Adjacency matrix rows of space-separated `0`/`1`.
    pub fn adjacency_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nodes {
            let row: Vec<&str> = (0..self.nodes)
                .map(|j| if self.has_edge(i, j) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The four-UAV example: 1->2, 2->3, 2->4, 3->2, 4->1 (0-based here).
    fn figure_one() -> NetGraph {
        NetGraph::with_edges(4, [(0, 1), (1, 2), (1, 3), (2, 1), (3, 0)]).unwrap()
    }

    fn ring4() -> NetGraph {
        NetGraph::ring(&[0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn construction_errors() {
        assert!(NetGraph::with_edges(3, [(0, 0)]).is_err());
        assert!(NetGraph::with_edges(3, [(0, 1), (0, 1)]).is_err());
        assert!(NetGraph::with_edges(3, [(0, 3)]).is_err());
        assert!(ring4().shortest_path_lengths(7).is_err());
    }

    #[test]
    fn path_lengths() {
        let r = ring4();
        assert_eq!(r.shortest_path_lengths(0).unwrap()[0], Hops::Reachable(0));
        assert_eq!(r.shortest_path_lengths(0).unwrap()[3], Hops::Reachable(3));
        // 3 -> 2 -> 4 -> 1 in the example's labels
        assert_eq!(figure_one().shortest_path_lengths(2).unwrap()[0], Hops::Reachable(3));
        let line = NetGraph::with_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(line.shortest_path_lengths(2).unwrap()[0], Hops::Unreachable);
    }

    #[test]
    fn max_paths() {
        assert_eq!(
            ring4().max_shortest_path(),
            MaxPath::Finite {
                overall: 3,
                per_node: vec![3; 4]
            }
        );
        let complete = NetGraph::with_edges(4, (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))).unwrap();
        assert!(matches!(complete.max_shortest_path(), MaxPath::Finite { overall: 1, .. }));
        assert!(matches!(figure_one().max_shortest_path(), MaxPath::Finite { overall: 3, .. }));
        let broken = NetGraph::with_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(broken.max_shortest_path(), MaxPath::Unreachable);
    }

    #[test]
    fn connectivity_and_rings() {
        assert!(ring4().is_strongly_connected());
        assert!(ring4().is_ring());
        let broken = NetGraph::with_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert!(!broken.is_strongly_connected());
        assert!(figure_one().is_strongly_connected());
        assert!(!figure_one().is_ring());
        let two_cycles = NetGraph::with_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert!(!two_cycles.is_ring());
    }

    #[test]
    fn neighbour_views() {
        let g = figure_one();
        assert_eq!(g.out_neighbors(1), vec![2, 3]);
        assert_eq!(g.in_neighbors(1), vec![0, 2]);
        assert_eq!(g.out_degree(0), 1);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = figure_one();
        let text = g.to_edge_list();
        assert_eq!(NetGraph::parse_edge_list(&text).unwrap(), g);
        assert_eq!(NetGraph::parse_edge_list("0 1\n1 0\n").unwrap().nodes(), 2);
        assert!(NetGraph::parse_edge_list("0\n").is_err());
        assert_eq!(ring4().adjacency_text().lines().next(), Some("0 1 0 0"));
    }
}
