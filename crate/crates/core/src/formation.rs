//! Ring formation over the feasibility digraph.
//!
//! With at most `I` links and strong connectivity required, the only admissible
//! topology is a directed ring, and every ring has `l_i^max = I - 1`. Formation
//! therefore reduces to finding a directed Hamiltonian cycle inside
//! `{i -> j : j in J_i}`; among those, the one with the least total transmit
//! power is kept, ties going to the lexicographically smallest edge list.

use std::collections::BTreeSet;
use std::fmt;

use crate::airlink::{a2a_pathloss, feasible_set, link_satisfies, A2AConfig, LinkBudget};
use crate::graph::{MaxPath, NetGraph};
use crate::{watts_to_dbm, Point};

/// Relative tolerance for treating two ring powers as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Why the necessary condition fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// UAV `i` has no feasible receiver.
    EmptySet(usize),
    /// No UAV can reach UAV `k`.
    Uncovered(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySet(i) => write!(f, "empty feasible set for UAV {i}"),
            Violation::Uncovered(k) => write!(f, "UAV {k} is in no feasible set"),
        }
    }
}

/// Every `J_i` non-empty and their union covering all UAVs.
pub fn check_necessary(feasible: &[Vec<usize>]) -> Result<(), Violation> {
    if let Some(i) = feasible.iter().position(Vec::is_empty) {
        return Err(Violation::EmptySet(i));
    }
    let covered: BTreeSet<usize> = feasible.iter().flatten().copied().collect();
    match (0..feasible.len()).find(|k| !covered.contains(k)) {
        Some(k) => Err(Violation::Uncovered(k)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    TooFewUavs,
    Necessary(Violation),
    /// The necessary condition holds but the digraph has no Hamiltonian cycle.
    NoRing,
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasible::TooFewUavs => write!(f, "fewer than two UAVs"),
            Infeasible::Necessary(v) => write!(f, "{v}"),
            Infeasible::NoRing => write!(f, "no ring exists in the feasibility graph"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormationStatus {
    Formed,
    Infeasible(Infeasible),
}

/// Outcome of [`form_network`]. Per-edge powers live in the graph's link
/// budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationResult {
    pub graph: NetGraph,
    /// `l^max` of the formed ring (`I - 1`).
    pub objective: Option<usize>,
    pub status: FormationStatus,
}

impl FormationResult {
    pub fn is_formed(&self) -> bool {
        self.status == FormationStatus::Formed
    }

    pub fn total_power(&self) -> f64 {
        self.graph
            .edges()
            .filter_map(|(i, j)| self.graph.budget(i, j))
            .map(|b| b.tx_power_w)
            .sum()
    }

    fn infeasible(nodes: usize, why: Infeasible) -> Self {
        Self {
            graph: NetGraph::new(nodes),
            objective: None,
            status: FormationStatus::Infeasible(why),
        }
    }
}

/// Feasible receivers and their minimal powers, per UAV.
pub fn feasibility(positions: &[Point], cfg: &A2AConfig, dataset_sizes: &[usize]) -> Vec<Vec<(usize, f64)>> {
    (0..positions.len())
        .map(|i| feasible_set(i, positions, cfg, dataset_sizes[i]))
        .collect()
}

/// A Hamiltonian cycle as the visiting order starting at node 0, with its
/// total power.
#[derive(Debug, Clone, PartialEq)]
pub struct RingCandidate {
    pub order: Vec<usize>,
    pub power: f64,
}

impl RingCandidate {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.order.len();
        let mut e: Vec<_> = (0..n).map(|k| (self.order[k], self.order[(k + 1) % n])).collect();
        e.sort_unstable();
        e
    }

    /// Whether `self` beats `other` under (power, edge list) ordering.
    pub fn better_than(&self, other: &RingCandidate) -> bool {
        let tol = TIE_TOLERANCE * self.power.abs().max(other.power.abs());
        if self.power < other.power - tol {
            true
        } else if self.power > other.power + tol {
            false
        } else {
            self.edges() < other.edges()
        }
    }
}

struct Search<'a> {
    adj: &'a [Vec<(usize, f64)>],
    min_out: Vec<f64>,
    path: Vec<usize>,
    visited: Vec<bool>,
    best: Option<RingCandidate>,
}

impl Search<'_> {
    fn bound_exceeded(&self, lower_bound: f64) -> bool {
        match &self.best {
            Some(b) => lower_bound > b.power * (1.0 + TIE_TOLERANCE),
            None => false,
        }
    }

    fn extend(&mut self, cost: f64) {
        let n = self.adj.len();
        let u = *self.path.last().expect("path starts at node 0");
        let remaining: f64 = (0..n)
            .filter(|&v| !self.visited[v] || v == u)
            .map(|v| self.min_out[v])
            .sum();
        if self.bound_exceeded(cost + remaining) {
            return;
        }
        for &(v, p) in &self.adj[u] {
            if v == 0 && self.path.len() == n {
                let candidate = RingCandidate {
                    order: self.path.clone(),
                    power: cost + p,
                };
                if self.best.as_ref().is_none_or(|b| candidate.better_than(b)) {
                    self.best = Some(candidate);
                }
            } else if !self.visited[v] {
                self.visited[v] = true;
                self.path.push(v);
                self.extend(cost + p);
                self.path.pop();
                self.visited[v] = false;
            }
        }
    }
}

/// Branch-and-bound search for the minimum-power Hamiltonian cycle.
pub fn min_power_ring(adj: &[Vec<(usize, f64)>]) -> Option<RingCandidate> {
    let n = adj.len();
    if n < 2 {
        return None;
    }
    let min_out: Vec<f64> = adj
        .iter()
        .map(|out| out.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
        .collect();
    if min_out.iter().any(|m| m.is_infinite()) {
        return None;
    }
    let mut search = Search {
        adj,
        min_out,
        path: vec![0],
        visited: vec![false; n],
        best: None,
    };
    search.visited[0] = true;
    search.extend(0.0);
    search.best
}

/// Forms the minimum-power ring over the feasible A2A links.
pub fn form_network(positions: &[Point], cfg: &A2AConfig, dataset_sizes: &[usize]) -> FormationResult {
    let n = positions.len();
    if n < 2 {
        return FormationResult::infeasible(n, Infeasible::TooFewUavs);
    }
    let adj = feasibility(positions, cfg, dataset_sizes);
    let ids: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().map(|e| e.0).collect()).collect();
    if let Err(v) = check_necessary(&ids) {
        return FormationResult::infeasible(n, Infeasible::Necessary(v));
    }
    let Some(ring) = min_power_ring(&adj) else {
        return FormationResult::infeasible(n, Infeasible::NoRing);
    };
    let mut graph = NetGraph::new(n);
    for (from, to) in ring.edges() {
        let power = adj[from]
            .iter()
            .find(|e| e.0 == to)
            .map(|e| e.1)
            .expect("ring edge is feasible");
        let budget = LinkBudget::at_power(from, to, positions, power, cfg, dataset_sizes[from])
            .expect("feasible endpoints are distinct");
        graph.add_link(budget).expect("ring edges are unique");
    }
    FormationResult {
        graph,
        objective: Some(n - 1),
        status: FormationStatus::Formed,
    }
}

/// Checks a formed result against the optimality characterisation: a ring of
/// feasible edges with `l_i^max = I - 1`, at most `I` links, and every link's
/// assigned power meeting the power, SNR and deadline constraints.
pub fn verify_optimal(result: &FormationResult, positions: &[Point], cfg: &A2AConfig, dataset_sizes: &[usize]) -> bool {
    let g = &result.graph;
    let n = positions.len();
    if result.status != FormationStatus::Formed || g.nodes() != n || n < 2 {
        return false;
    }
    if g.edge_count() > n || !g.is_ring() {
        return false;
    }
    match g.max_shortest_path() {
        MaxPath::Finite { per_node, .. } if per_node.iter().all(|&l| l == n - 1) => {}
        _ => return false,
    }
    let mut spent = vec![0.0; n];
    for (i, j) in g.edges() {
        let Some(budget) = g.budget(i, j) else {
            return false;
        };
        let Ok(gain) = a2a_pathloss(positions[i], positions[j], cfg.wavelength_m) else {
            return false;
        };
        if !feasible_set(i, positions, cfg, dataset_sizes[i]).iter().any(|e| e.0 == j) {
            return false;
        }
        if !link_satisfies(budget.tx_power_w, gain, cfg, dataset_sizes[i]) {
            return false;
        }
        spent[i] += budget.tx_power_w;
    }
    spent.iter().all(|&p| p <= cfg.max_power_w * (1.0 + 1e-9))
}

/// `# status: ...` line followed by `from,to,power_dbm,rate_bps,tx_time_s`
/// rows for each ring edge.
pub fn formation_csv(result: &FormationResult) -> String {
    let status = match result.status {
        FormationStatus::Formed => "formed".to_string(),
        FormationStatus::Infeasible(why) => format!("infeasible ({why})"),
    };
    let mut out = format!("# status: {status}\nfrom,to,power_dbm,rate_bps,tx_time_s\n");
    for (i, j) in result.graph.edges() {
        if let Some(b) = result.graph.budget(i, j) {
            out.push_str(&format!(
                "{i},{j},{},{},{}\n",
                watts_to_dbm(b.tx_power_w),
                b.rate_bps,
                b.tx_time_s
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{db_to_linear, dbm_to_watts};

    pub(crate) fn default_cfg() -> A2AConfig {
        A2AConfig {
            bandwidth_hz: 2e6,
            noise_w: dbm_to_watts(-174.0) * 2e6,
            snr_threshold: db_to_linear(10.0),
            max_power_w: dbm_to_watts(40.0),
            deadline_s: 0.1,
            share_ratio: 1.4,
            sample_bits: 320.0,
            wavelength_m: crate::channel::SPEED_OF_LIGHT / 2.4e9,
        }
    }

    #[test]
    fn necessary_condition() {
        assert_eq!(check_necessary(&[vec![1], vec![2], vec![0]]), Ok(()));
        assert_eq!(check_necessary(&[vec![1], vec![], vec![0]]), Err(Violation::EmptySet(1)));
        assert_eq!(check_necessary(&[vec![1], vec![0], vec![0]]), Err(Violation::Uncovered(2)));
    }

    #[test]
    fn square_forms_four_ring() {
        let pos = vec![[0.0, 0.0, 50.0], [30.0, 0.0, 50.0], [30.0, 30.0, 50.0], [0.0, 30.0, 50.0]];
        let sizes = [1000; 4];
        let cfg = default_cfg();
        let r = form_network(&pos, &cfg, &sizes);
        assert!(r.is_formed());
        assert_eq!(r.graph.edge_count(), 4);
        assert_eq!(r.objective, Some(3));
        assert!(verify_optimal(&r, &pos, &cfg, &sizes));
        // Perimeter rings beat rings using the diagonals.
        assert!(r.graph.edges().all(|(i, j)| crate::distance(pos[i], pos[j]) < 31.0));
    }

    #[test]
    fn isolated_uav_is_infeasible() {
        let pos = vec![[0.0, 0.0, 50.0], [30.0, 0.0, 50.0], [30.0, 30.0, 50.0], [1e9, 0.0, 50.0]];
        let r = form_network(&pos, &default_cfg(), &[1000; 4]);
        assert!(matches!(
            r.status,
            FormationStatus::Infeasible(Infeasible::Necessary(Violation::EmptySet(3)))
        ));
        assert!(!verify_optimal(&r, &pos, &default_cfg(), &[1000; 4]));
        let single = form_network(&pos[..1], &default_cfg(), &[1000]);
        assert_eq!(single.status, FormationStatus::Infeasible(Infeasible::TooFewUavs));
    }

    #[test]
    fn unique_cycle_is_returned() {
        let adj = vec![vec![(2, 1.0)], vec![(0, 1.0)], vec![(3, 1.0)], vec![(1, 1.0)]];
        let ring = min_power_ring(&adj).unwrap();
        assert_eq!(ring.order, vec![0, 2, 3, 1]);
        assert_eq!(ring.power, 4.0);
    }

    #[test]
    fn necessary_without_ring() {
        // Every set non-empty and the union covers all nodes, yet no
        // Hamiltonian cycle: 0 and 1 both only reach each other's partner set.
        let adj = vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0)]];
        let ids: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().map(|e| e.0).collect()).collect();
        assert_eq!(check_necessary(&ids), Ok(()));
        assert_eq!(min_power_ring(&adj), None);
    }

    #[test]
    fn tampered_results_fail_verification() {
        let pos = vec![[0.0, 0.0, 50.0], [30.0, 0.0, 50.0], [30.0, 30.0, 50.0], [0.0, 30.0, 50.0]];
        let sizes = [1000; 4];
        let cfg = default_cfg();
        let r = form_network(&pos, &cfg, &sizes);

        let mut hot = r.clone();
        let (i, j) = hot.graph.edges().next().unwrap();
        hot.graph.budget_mut(i, j).unwrap().tx_power_w = cfg.max_power_w * 2.0;
        assert!(!verify_optimal(&hot, &pos, &cfg, &sizes));

        // Strongly connected, five edges on four nodes.
        let mut extra = NetGraph::new(4);
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)] {
            let gain = a2a_pathloss(pos[a], pos[b], cfg.wavelength_m).unwrap();
            let p = crate::airlink::min_power_for_link(gain, &cfg, 1000).unwrap();
            extra.add_link(LinkBudget::at_power(a, b, &pos, p, &cfg, 1000).unwrap()).unwrap();
        }
        assert!(extra.is_strongly_connected());
        let bad = FormationResult {
            graph: extra,
            objective: Some(3),
            status: FormationStatus::Formed,
        };
        assert!(!verify_optimal(&bad, &pos, &cfg, &sizes));
    }

    #[test]
    fn csv_export() {
        let pos = vec![[0.0, 0.0, 50.0], [30.0, 0.0, 50.0], [30.0, 30.0, 50.0]];
        let r = form_network(&pos, &default_cfg(), &[1000; 3]);
        let csv = formation_csv(&r);
        assert!(csv.starts_with("# status: formed\nfrom,to,power_dbm,rate_bps,tx_time_s\n"));
        assert_eq!(csv.lines().count(), 5);
        let bad = form_network(&pos[..1], &default_cfg(), &[1000]);
        assert!(formation_csv(&bad).starts_with("# status: infeasible"));
    }
}
