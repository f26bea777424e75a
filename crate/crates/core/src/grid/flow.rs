use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::graph::{build_node_graph, component_labels};
use super::{GridSpec, TopologyState};
use crate::error::GridError;

/// Per-unit power base, MVA.
pub const BASE_MVA: f64 = 100.0;

/// Active power per element, MW. Storage is positive while charging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub gen_p: Vec<f64>,
    pub load_p: Vec<f64>,
    pub storage_p: Vec<f64>,
}

impl Injections {
    pub fn zeros(spec: &GridSpec) -> Self {
        Injections { gen_p: vec![0.0; spec.generators.len()], load_p: vec![0.0; spec.loads.len()], storage_p: vec![0.0; spec.storages.len()] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowFailure {
    /// A load or generator is not connected to the slack.
    Islanded,
    /// Reduced susceptance matrix singular or solution not finite.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// Voltage angle per electrical node, radians, slack node at 0.
    pub theta: Vec<f64>,
    /// Signed line flow, MW, positive from origin to extremity.
    pub flow: Vec<f64>,
    /// |flow| / thermal limit.
    pub rho: Vec<f64>,
    pub converged: bool,
    pub failure: Option<FlowFailure>,
    pub islanded_generators: Vec<usize>,
    pub islanded_loads: Vec<usize>,
    pub islanded_storages: Vec<usize>,
    /// Output of the slack generator after absorbing the balance, MW.
    pub slack_p: f64,
}

impl FlowSolution {
    pub fn rho_max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }
}

/// Solve the DC load flow on the component holding the slack generator.
///
/// Nodal balance is `B' θ = P` with line flow `(θ_from − θ_to) / x`; the
/// slack node absorbs the residual. Any load or generator outside the slack
/// component makes the solution non-converged.
pub fn solve_dc_flow(spec: &GridSpec, topo: &TopologyState, inj: &Injections) -> Result<FlowSolution, GridError> {
    if inj.gen_p.len() != spec.generators.len() || inj.load_p.len() != spec.loads.len() || inj.storage_p.len() != spec.storages.len() {
        return Err(GridError::InconsistentTopology("injection vector length mismatch".into()));
    }
    let graph = build_node_graph(spec, topo)?;
    let n = graph.n_nodes();
    let (label, _) = component_labels(&graph);
    let slack_node = graph.gen_node[spec.slack];
    let main = label[slack_node];

    let mut islanded_generators = Vec::new();
    let mut islanded_loads = Vec::new();
    let mut islanded_storages = Vec::new();
    let mut p_node = vec![0.0; n];
    for (g, &node) in graph.gen_node.iter().enumerate() {
        if label[node] != main {
            islanded_generators.push(g);
        } else if g != spec.slack {
            p_node[node] += inj.gen_p[g];
        }
    }
    for (l, &node) in graph.load_node.iter().enumerate() {
        if label[node] != main {
            islanded_loads.push(l);
        } else {
            p_node[node] -= inj.load_p[l];
        }
    }
    for (s, &node) in graph.storage_node.iter().enumerate() {
        if label[node] != main {
            islanded_storages.push(s);
        } else {
            p_node[node] -= inj.storage_p[s];
        }
    }

    // reduced system over the slack component without the slack node
    let mut index = vec![usize::MAX; n];
    let mut m = 0;
    for v in 0..n {
        if label[v] == main && v != slack_node {
            index[v] = m;
            m += 1;
        }
    }
    let mut b = DMatrix::<f64>::zeros(m, m);
    for &(line, f, t) in &graph.edges {
        if label[f] != main {
            continue;
        }
        let y = 1.0 / spec.lines[line].reactance;
        let (fi, ti) = (index[f], index[t]);
        if fi != usize::MAX {
            b[(fi, fi)] += y;
        }
        if ti != usize::MAX {
            b[(ti, ti)] += y;
        }
        if fi != usize::MAX && ti != usize::MAX {
            b[(fi, ti)] -= y;
            b[(ti, fi)] -= y;
        }
    }
    let rhs = DVector::from_iterator(m, (0..n).filter(|&v| index[v] != usize::MAX).map(|v| p_node[v] / BASE_MVA));

    let mut theta = vec![0.0; n];
    let mut diverged = false;
    if m > 0 {
        match b.cholesky() {
            Some(chol) => {
                let sol = chol.solve(&rhs);
                if sol.iter().all(|x| x.is_finite()) {
                    for v in 0..n {
                        if index[v] != usize::MAX {
                            theta[v] = sol[index[v]];
                        }
                    }
                } else {
                    diverged = true;
                }
            }
            None => diverged = true,
        }
    }

    let mut flow = vec![0.0; spec.lines.len()];
    let mut rho = vec![0.0; spec.lines.len()];
    if !diverged {
        for &(line, f, t) in &graph.edges {
            if label[f] == main {
                let fl = BASE_MVA * (theta[f] - theta[t]) / spec.lines[line].reactance;
                flow[line] = fl;
                rho[line] = fl.abs() / spec.lines[line].thermal_limit;
            }
        }
    }
    // slack output balances its component
    let others: f64 = (0..n).filter(|&v| label[v] == main).map(|v| p_node[v]).sum();
    let slack_p = -others;

    let failure = if diverged {
        Some(FlowFailure::Diverged)
    } else if !islanded_generators.is_empty() || !islanded_loads.is_empty() {
        Some(FlowFailure::Islanded)
    } else {
        None
    };
    if diverged {
        theta.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(FlowSolution { theta, flow, rho, converged: failure.is_none(), failure, islanded_generators, islanded_loads, islanded_storages, slack_p })
}

#[cfg(test)]
mod tests {
    use super::super::testgrids::*;
    use super::*;
    use crate::grid::{build_node_graph, Bus};

    #[test]
    fn triangle_splits_flow_two_to_one() {
        let g = triangle();
        let t = TopologyState::default_for(&g);
        let mut inj = Injections::zeros(&g);
        inj.gen_p[0] = 100.0;
        inj.load_p[0] = 100.0;
        let sol = solve_dc_flow(&g, &t, &inj).unwrap();
        assert!(sol.converged);
        // line 2 is A->C direct, lines 0 and 1 are A->B->C
        assert!((sol.flow[2] - 200.0 / 3.0).abs() < 1e-9);
        assert!((sol.flow[0] - 100.0 / 3.0).abs() < 1e-9);
        assert!((sol.flow[1] - 100.0 / 3.0).abs() < 1e-9);
        assert!((sol.slack_p - 100.0).abs() < 1e-12);
        assert!((sol.rho[2] - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_injection_gives_zero_flow() {
        let g = ring5();
        let t = TopologyState::default_for(&g);
        let sol = solve_dc_flow(&g, &t, &Injections::zeros(&g)).unwrap();
        assert!(sol.converged);
        assert!(sol.flow.iter().all(|&f| f == 0.0));
        assert!(sol.rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn isolating_a_load_fails_convergence() {
        let g = triangle();
        let mut t = TopologyState::default_for(&g);
        t.line_connected[1] = false;
        t.line_connected[2] = false;
        let mut inj = Injections::zeros(&g);
        inj.load_p[0] = 10.0;
        let sol = solve_dc_flow(&g, &t, &inj).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.failure, Some(FlowFailure::Islanded));
        assert_eq!(sol.islanded_loads, vec![0]);
    }

    #[test]
    fn split_substation_reroutes_flow() {
        let g = ring5();
        let mut t = TopologyState::default_for(&g);
        let mut inj = Injections::zeros(&g);
        inj.gen_p[1] = 80.0;
        inj.load_p = vec![60.0, 90.0, 40.0];
        let before = solve_dc_flow(&g, &t, &inj).unwrap();
        // substation 1: load 0, line 1 origin, line 5 origin, line 0 extremity
        let r = g.connection_range(1);
        t.bus[r.clone()].copy_from_slice(&[Bus::One, Bus::One, Bus::Two, Bus::Two]);
        let after = solve_dc_flow(&g, &t, &inj).unwrap();
        assert!(after.converged);
        assert_eq!(build_node_graph(&g, &t).unwrap().n_nodes(), 6);
        assert!((before.flow[5] - after.flow[5]).abs() > 1e-3);
    }
}
