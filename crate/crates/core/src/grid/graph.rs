use serde::Serialize;

use super::{Bus, Connection, GridSpec, TopologyState};
use crate::error::GridError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ElectricalNode {
    pub sub: usize,
    pub bus: Bus,
}

/// Electrical node multigraph for one topology.
#[derive(Clone, Debug)]
pub struct NodeGraph {
    /// Nodes ordered by (substation, bus).
    pub nodes: Vec<ElectricalNode>,
    /// `(line, from node, to node)` for every connected line.
    pub edges: Vec<(usize, usize, usize)>,
    pub gen_node: Vec<usize>,
    pub load_node: Vec<usize>,
    pub storage_node: Vec<usize>,
    node_of: Vec<Option<usize>>,
}

impl NodeGraph {
    pub fn node_of(&self, sub: usize, bus: Bus) -> Option<usize> {
        self.node_of[2 * sub + bus.index()]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Build the electrical node graph: every substation yields one node per bus
/// carrying at least one active connection (one node when nothing is active).
/// Ends of disconnected lines do not keep a bus alive.
pub fn build_node_graph(spec: &GridSpec, topo: &TopologyState) -> Result<NodeGraph, GridError> {
    topo.check(spec)?;
    let n_sub = spec.n_substations();
    let mut used = vec![false; 2 * n_sub];
    for sub in 0..n_sub {
        let range = spec.connection_range(sub);
        for (conn, &bus) in spec.connections(sub).iter().zip(&topo.bus[range]) {
            let active = match conn.line() {
                Some(l) => topo.line_connected[l],
                None => true,
            };
            if active {
                used[2 * sub + bus.index()] = true;
            }
        }
        if !used[2 * sub] && !used[2 * sub + 1] {
            used[2 * sub] = true;
        }
    }
    let mut node_of = vec![None; 2 * n_sub];
    let mut nodes = Vec::with_capacity(n_sub + 4);
    for (slot, &u) in used.iter().enumerate() {
        if u {
            node_of[slot] = Some(nodes.len());
            nodes.push(ElectricalNode { sub: slot / 2, bus: if slot % 2 == 0 { Bus::One } else { Bus::Two } });
        }
    }
    let node_at = |conn: usize| -> Result<usize, GridError> {
        let sub = spec.connection_sub(conn);
        node_of[2 * sub + topo.bus[conn].index()].ok_or_else(|| GridError::InconsistentTopology(format!("connection {conn} sits on an unused bus")))
    };
    let mut edges = Vec::with_capacity(spec.lines.len());
    for line in &spec.lines {
        if topo.line_connected[line.id] {
            let f = node_at(spec.line_origin_conn(line.id))?;
            let t = node_at(spec.line_extremity_conn(line.id))?;
            edges.push((line.id, f, t));
        }
    }
    let gen_node = (0..spec.generators.len()).map(|g| node_at(spec.gen_conn(g))).collect::<Result<_, _>>()?;
    let load_node = (0..spec.loads.len()).map(|l| node_at(spec.load_conn(l))).collect::<Result<_, _>>()?;
    let storage_node = (0..spec.storages.len()).map(|s| node_at(spec.storage_conn(s))).collect::<Result<_, _>>()?;
    Ok(NodeGraph { nodes, edges, gen_node, load_node, storage_node, node_of })
}

/// Connected component of the node graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Island {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    pub generators: Vec<usize>,
    pub loads: Vec<usize>,
    pub storages: Vec<usize>,
}

impl Island {
    pub fn has_injection_elements(&self) -> bool {
        !self.generators.is_empty() || !self.loads.is_empty()
    }
}

/// Per-node component label, labels assigned in order of the smallest node.
pub(crate) fn component_labels(graph: &NodeGraph) -> (Vec<usize>, usize) {
    let n = graph.n_nodes();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(_, f, t) in &graph.edges {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = count;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Partition the electrical nodes into connected components, ordered by
/// smallest node index.
pub fn detect_islands(spec: &GridSpec, topo: &TopologyState) -> Result<Vec<Island>, GridError> {
    let graph = build_node_graph(spec, topo)?;
    let (label, count) = component_labels(&graph);
    let mut islands: Vec<Island> = (0..count).map(|_| Island { nodes: vec![], generators: vec![], loads: vec![], storages: vec![] }).collect();
    for (node, &c) in label.iter().enumerate() {
        islands[c].nodes.push(node);
    }
    for (g, &node) in graph.gen_node.iter().enumerate() {
        islands[label[node]].generators.push(g);
    }
    for (l, &node) in graph.load_node.iter().enumerate() {
        islands[label[node]].loads.push(l);
    }
    for (s, &node) in graph.storage_node.iter().enumerate() {
        islands[label[node]].storages.push(s);
    }
    Ok(islands)
}

/// Elements that sit alone on a bus reachable by no line: used to filter
/// configurations that always isolate something.
pub(crate) fn bus_without_line(conns: &[Connection], buses: &[Bus]) -> bool {
    let mut has_elem = [false; 2];
    let mut has_line = [false; 2];
    for (c, b) in conns.iter().zip(buses) {
        if c.line().is_some() {
            has_line[b.index()] = true;
        } else {
            has_elem[b.index()] = true;
        }
    }
    (has_elem[0] && !has_line[0]) || (has_elem[1] && !has_line[1])
}

#[cfg(test)]
mod tests {
    use super::super::testgrids::*;
    use super::super::{GridSpec, Load};
    use super::*;
    use crate::grid::{apply_topology_action, CooldownConfig, TopologyAction};

    #[test]
    fn default_topology_has_one_node_per_substation() {
        let g = ring5();
        let t = TopologyState::default_for(&g);
        let ng = build_node_graph(&g, &t).unwrap();
        assert_eq!(ng.n_nodes(), 5);
        assert_eq!(ng.edges.len(), 6);
    }

    #[test]
    fn split_adds_one_node() {
        let g = ring5();
        let t = TopologyState::default_for(&g);
        let a = TopologyAction::SetBus { substation: 1, buses: vec![Bus::One, Bus::One, Bus::Two, Bus::Two] };
        let t = apply_topology_action(&g, &t, &a, &CooldownConfig::default()).unwrap();
        let ng = build_node_graph(&g, &t).unwrap();
        assert_eq!(ng.n_nodes(), 6);
        assert_eq!(ng.node_of(1, Bus::Two), Some(2));
    }

    #[test]
    fn disconnected_line_end_does_not_create_node() {
        let g = ring5();
        let mut t = TopologyState::default_for(&g);
        t.bus[g.line_origin_conn(5)] = Bus::Two;
        t.line_connected[5] = false;
        let ng = build_node_graph(&g, &t).unwrap();
        assert_eq!(ng.n_nodes(), 5);
        assert!(ng.node_of(1, Bus::Two).is_none());
    }

    #[test]
    fn ring_stays_connected_without_one_line() {
        let g = ring5();
        let mut t = TopologyState::default_for(&g);
        t.line_connected[2] = false;
        assert_eq!(detect_islands(&g, &t).unwrap().len(), 1);
    }

    fn radial() -> GridSpec {
        // 0 - 1 - 2 - 3, generator at the root, loads at 2 and 3
        GridSpec::new(
            "radial".into(),
            subs(4),
            vec![line(0, 0, 1, 0.1, 100.0), line(1, 1, 2, 0.1, 100.0), line(2, 2, 3, 0.1, 100.0)],
            vec![thermal(0, 0, 100.0)],
            vec![Load { id: 0, sub: 2 }, Load { id: 1, sub: 3 }],
            vec![],
            0,
        )
        .unwrap()
    }

    /// Reachability from node 0 by repeated relaxation over edges.
    fn reachable_oracle(g: &GridSpec, t: &TopologyState) -> Vec<bool> {
        let mut seen = vec![false; g.n_substations()];
        seen[0] = true;
        loop {
            let mut changed = false;
            for l in &g.lines {
                if t.line_connected[l.id] && seen[l.from_sub] != seen[l.to_sub] {
                    seen[l.from_sub] = true;
                    seen[l.to_sub] = true;
                    changed = true;
                }
            }
            if !changed {
                return seen;
            }
        }
    }

    #[test]
    fn radial_root_removed_splits_in_two() {
        let g = radial();
        let mut t = TopologyState::default_for(&g);
        t.line_connected[0] = false;
        let islands = detect_islands(&g, &t).unwrap();
        assert_eq!(islands.len(), 2);
        let reach = reachable_oracle(&g, &t);
        assert_eq!(islands[0].nodes, vec![0]);
        assert_eq!(islands[1].loads, vec![0, 1]);
        for l in &islands[1].loads {
            assert!(!reach[g.loads[*l].sub]);
        }
    }

    #[test]
    fn bus_without_line_detects_isolated_element() {
        let g = ring5();
        let conns = g.connections(1);
        assert!(bus_without_line(conns, &[Bus::Two, Bus::One, Bus::One, Bus::One]));
        assert!(!bus_without_line(conns, &[Bus::One, Bus::One, Bus::Two, Bus::Two]));
    }
}
