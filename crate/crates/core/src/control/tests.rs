use std::sync::Arc;

use super::*;
use crate::actions::{enumerate_unitary_actions, CatalogOptions};
use crate::env::{Chronics, EnvConfig, OpponentConfig};
use crate::grid::testgrids::{ring5, triangle};
use crate::grid::{Bus, GridSpec, TopologyAction};
use crate::policy::FeatureSpec;
use crate::redispatch::{CEConfig, CombineConfig};

fn chronics(rows: usize, load: &[f64], gen: &[f64]) -> Chronics {
    Chronics {
        name: "c".into(),
        dt_minutes: 5.0,
        load_p: vec![load.to_vec(); rows],
        gen_p_max: vec![gen.to_vec(); rows],
        forecast_noise: 0.0,
        planned_outages: vec![],
    }
}

fn quiet() -> Arc<EnvConfig> {
    Arc::new(EnvConfig { opponent: OpponentConfig { enabled: false, ..Default::default() }, ..Default::default() })
}

fn reset(g: &GridSpec, ch: Chronics) -> Episode {
    Episode::reset(Arc::new(g.clone()), Arc::new(ch), quiet(), 0).unwrap()
}

fn agents(g: &GridSpec) -> Agents {
    let cat = enumerate_unitary_actions(g, CatalogOptions::default());
    let ids = (1..cat.len()).collect();
    Agents::new(Arc::new(cat), ids, None)
}

fn tight_ring() -> GridSpec {
    let mut g = ring5();
    g.lines[0].thermal_limit = 76.0;
    GridSpec::new(g.name, g.substations, g.lines, g.generators, g.loads, g.storages, g.slack).unwrap()
}

fn unbounded(mode: AgentMode) -> ControllerConfig {
    ControllerConfig { mode, deadline_ms: None, ..Default::default() }
}

#[test]
fn observer_threshold() {
    let g = triangle();
    // direct line carries two thirds of the load
    let safe = reset(&g, chronics(5, &[145.5], &[0.0]));
    assert!((safe.rho_max() - 0.97).abs() < 1e-9);
    assert!(observe(&safe, 0.98, &[]).safe);
    let unsafe_ = reset(&g, chronics(5, &[148.5], &[0.0]));
    assert!((unsafe_.rho_max() - 0.99).abs() < 1e-9);
    assert!(!observe(&unsafe_, 0.98, &[]).safe);
}

#[test]
fn observer_contingency_check() {
    let mut g = triangle();
    g.lines[0].thermal_limit = 77.0;
    g.lines[1].thermal_limit = 77.0;
    let g = GridSpec::new(g.name, g.substations, g.lines, g.generators, g.loads, g.storages, g.slack).unwrap();
    let ep = reset(&g, chronics(5, &[100.0], &[0.0]));
    assert!(observe(&ep, 0.98, &[]).safe);
    let v = observe(&ep, 0.98, &[2]);
    assert!(!v.safe);
    let (line, rho) = v.n1.unwrap();
    assert_eq!(line, 2);
    // the whole load over the 77 MW route
    assert!((rho - 100.0 / 77.0).abs() < 1e-9);
}

#[test]
fn safe_default_topology_is_idle() {
    let g = ring5();
    let ep = reset(&g, chronics(10, &[30.0, 40.0, 20.0], &[0.0, 30.0]));
    let d = decide(&ep, &unbounded(AgentMode::TopoMcts), &agents(&g), 0);
    assert_eq!(d.action, EnvAction::NoOp);
    assert_eq!(d.source, Source::Idle);
    assert!(d.search.is_none());
}

#[test]
fn safe_split_gets_recovered() {
    let g = ring5();
    let mut ep = reset(&g, chronics(10, &[30.0, 40.0, 20.0], &[0.0, 30.0]));
    let split = TopologyAction::SetBus { substation: 1, buses: vec![Bus::One, Bus::One, Bus::Two, Bus::Two] };
    ep.step(&EnvAction::topology(split)).unwrap();
    assert!(ep.topology().is_split(&g, 1));
    let a = agents(&g);
    // cooldown first
    for _ in 0..3 {
        ep.step(&EnvAction::NoOp).unwrap();
    }
    let d = decide(&ep, &unbounded(AgentMode::TopoMcts), &a, 0);
    assert_eq!(d.source, Source::Recovery);
    assert_eq!(d.action, EnvAction::topology(a.catalog.action(a.catalog.reset_action(1).unwrap()).clone()));
}

#[test]
fn unsafe_joint_mode_returns_combine_output() {
    let g = tight_ring();
    let ep = reset(&g, chronics(10, &[90.0, 60.0, 30.0], &[0.0, 30.0]));
    assert!(!observe(&ep, 0.98, &[]).safe);
    let a = agents(&g);
    let cfg = unbounded(AgentMode::Joint { n: 3 });
    let d = decide(&ep, &cfg, &a, 7);
    assert_eq!(d.source, Source::Agent);
    let ranked: Vec<_> = a.ranked_candidates(&ep).into_iter().take(3).map(|c| a.catalog.action(c.0).clone()).collect();
    let cc = CombineConfig { top_n: 3, ce: CEConfig { seed: 7, ..Default::default() }, ..Default::default() };
    assert_eq!(d.action, combine(&ep, &ranked, &cc).action);
}

#[test]
fn topk_matches_brute_force_with_full_k() {
    let g = tight_ring();
    let ep = reset(&g, chronics(10, &[90.0, 60.0, 30.0], &[0.0, 30.0]));
    let a = agents(&g);
    let bf = decide(&ep, &unbounded(AgentMode::BruteForce), &a, 0);
    let tk = decide(&ep, &unbounded(AgentMode::TopoTopK { k: a.reduced.len() }), &a, 0);
    assert_eq!(bf.action, tk.action);
    assert!(ep.simulate(&bf.action).unwrap().observation.rho_max() < ep.rho_max());
}

#[test]
fn panicking_agent_falls_back_to_noop() {
    let g = triangle();
    let ep = reset(&g, chronics(5, &[160.0], &[0.0]));
    let mut a = agents(&g);
    // features laid out for a larger grid: extraction indexes past the end
    let bogus = crate::policy::Policy::new(FeatureSpec::new(&ring5(), &[]), a.reduced.to_vec(), a.catalog.len(), &[4], 0);
    a.policy = Some(Arc::new(bogus));
    for deadline in [None, Some(1000)] {
        let cfg = ControllerConfig { mode: AgentMode::TopoArgmax, deadline_ms: deadline, ..Default::default() };
        let d = decide(&ep, &cfg, &a, 0);
        assert_eq!(d.action, EnvAction::NoOp);
        assert_eq!(d.source, Source::Fallback);
        assert!(d.incident.unwrap().contains("panicked"));
    }
}

#[test]
fn missed_deadline_falls_back_to_noop() {
    let g = tight_ring();
    let ep = reset(&g, chronics(10, &[90.0, 60.0, 30.0], &[0.0, 30.0]));
    let mut cfg = ControllerConfig { mode: AgentMode::RedispatchOnly, deadline_ms: Some(2), ..Default::default() };
    cfg.combine.ce = CEConfig { population: 200, iterations: 30, ..Default::default() };
    let d = decide(&ep, &cfg, &agents(&g), 0);
    assert_eq!(d.source, Source::Fallback);
    assert!(d.incident.unwrap().contains("deadline"));
}

#[test]
fn mode_labels_round_trip() {
    for m in [
        AgentMode::NoOp,
        AgentMode::RedispatchOnly,
        AgentMode::BruteForce,
        AgentMode::TopoArgmax,
        AgentMode::TopoTopK { k: 25 },
        AgentMode::TopoMcts,
        AgentMode::Joint { n: 5 },
    ] {
        assert_eq!(AgentMode::parse(&m.label()), Some(m));
    }
    assert_eq!(AgentMode::parse("topo_topx"), None);
    assert!(ControllerConfig { safe_threshold: 2.5, ..Default::default() }.validate().is_err());
}

#[test]
fn noop_mode_replays_the_environment() {
    let g = ring5();
    let ch = Arc::new(chronics(30, &[30.0, 40.0, 20.0], &[0.0, 30.0]));
    let spec = Arc::new(g.clone());
    let env = Arc::new(EnvConfig { opponent: OpponentConfig { attackable_lines: vec![0, 1], mean_attacks: 3.0, ..Default::default() }, ..Default::default() });
    let cfg = ControllerConfig { mode: AgentMode::NoOp, recovery: false, ..Default::default() };
    let rec = run_episode(&spec, &ch, &env, &cfg, &agents(&g), 5, None).unwrap();
    let mut ep = Episode::reset(spec, ch, env, 5).unwrap();
    let mut rewards = vec![];
    while !ep.is_done() {
        rewards.push(ep.step(&EnvAction::NoOp).unwrap().reward);
    }
    assert_eq!(rec.steps.iter().map(|s| s.reward).collect::<Vec<_>>(), rewards);
    assert_eq!(rec.steps_survived, rec.horizon);
    assert_eq!(rec.survived_ratio(), 1.0);
    assert_eq!((rec.redispatch_mw, rec.curtailment_mw, rec.agent_calls), (0.0, 0.0, 0));
}

#[test]
fn blackout_counts_steps_before_it() {
    let g = triangle();
    let mut ch = chronics(20, &[100.0], &[0.0]);
    // more than both routes can carry 2x over: the protection cascade islands the load
    for row in ch.load_p.iter_mut().skip(8) {
        row[0] = 450.0;
    }
    let rec = run_episode(&Arc::new(g.clone()), &Arc::new(ch), &quiet(), &unbounded(AgentMode::NoOp), &agents(&g), 0, None).unwrap();
    assert!(rec.done_reason.unwrap().is_blackout());
    assert_eq!(rec.steps_survived, 7);
    assert!((rec.survived_ratio() - 7.0 / 19.0).abs() < 1e-12);
    let back = EpisodeRecord::from_json_str(&rec.to_json_string()).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn agent_is_not_called_on_safe_grids() {
    let g = ring5();
    let ch = Arc::new(chronics(40, &[30.0, 40.0, 20.0], &[0.0, 30.0]));
    let rec = run_episode(&Arc::new(g.clone()), &ch, &quiet(), &unbounded(AgentMode::TopoMcts), &agents(&g), 1, None).unwrap();
    assert_eq!(rec.agent_calls, 0);
    assert!(rec.steps.iter().all(|s| s.source == Source::Idle));
}

#[test]
fn mcts_agent_keeps_congested_ring_alive() {
    let g = tight_ring();
    let ch = Arc::new(chronics(30, &[90.0, 60.0, 30.0], &[0.0, 30.0]));
    let spec = Arc::new(g.clone());
    let a = agents(&g);
    let noop = run_episode(&spec, &ch, &quiet(), &unbounded(AgentMode::NoOp), &a, 0, None).unwrap();
    let mut cfg = unbounded(AgentMode::TopoMcts);
    cfg.search.n_simulations_max = 60;
    let mcts = run_episode(&spec, &ch, &quiet(), &cfg, &a, 0, None).unwrap();
    assert!(mcts.agent_calls >= 1);
    assert!(mcts.steps_survived >= noop.steps_survived);
    assert!(mcts.steps.iter().skip(1).all(|s| s.rho_max_after < 1.0), "{:?}", mcts.steps);
}
