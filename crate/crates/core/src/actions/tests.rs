use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::*;
use crate::env::{Chronics, EnvAction, EnvConfig, OpponentConfig};
use crate::grid::testgrids::{line, ring5, subs, thermal};
use crate::grid::{apply_topology_action, build_node_graph, solve_dc_flow, Bus, Connection, CooldownConfig, GridSpec, Injections, Load, TopologyState};

fn constant(spec: &GridSpec, rows: usize, load: &[f64], gen: &[f64]) -> Chronics {
    let _ = spec;
    Chronics {
        name: "c".into(),
        dt_minutes: 5.0,
        load_p: vec![load.to_vec(); rows],
        gen_p_max: vec![gen.to_vec(); rows],
        forecast_noise: 0.0,
        planned_outages: vec![],
    }
}

fn quiet() -> EnvConfig {
    EnvConfig { opponent: OpponentConfig { enabled: false, ..Default::default() }, ..Default::default() }
}

fn ep(spec: &GridSpec, ch: Chronics, cfg: EnvConfig, seed: u64) -> Episode {
    Episode::reset(Arc::new(spec.clone()), Arc::new(ch), Arc::new(cfg), seed).unwrap()
}

fn safe_ring() -> (GridSpec, Chronics) {
    let g = ring5();
    let ch = constant(&g, 300, &[30.0, 40.0, 20.0], &[0.0, 30.0]);
    (g, ch)
}

fn sub_actions(cat: &ActionCatalog, sub: usize) -> usize {
    cat.actions().iter().filter(|a| a.substation() == Some(sub)).count()
}

#[test]
fn two_connections_give_two_configurations() {
    // substation 2 of the star holds a single line end plus a load
    let g =
        GridSpec::new("pair".into(), subs(2), vec![line(0, 0, 1, 0.1, 100.0)], vec![thermal(0, 0, 100.0)], vec![Load { id: 0, sub: 1 }], vec![], 0).unwrap();
    let cat = enumerate_unitary_actions(&g, CatalogOptions { fatal_filter: false });
    assert_eq!(g.connections(1).len(), 2);
    assert_eq!(sub_actions(&cat, 1), 2);
    // the split leaves the load on a line-less bus
    let filtered = enumerate_unitary_actions(&g, CatalogOptions::default());
    assert_eq!(sub_actions(&filtered, 1), 1);
}

#[test]
fn four_connections_give_eight_configurations() {
    let g = ring5();
    assert_eq!(g.connections(1).len(), 4);
    let cat = enumerate_unitary_actions(&g, CatalogOptions { fatal_filter: false });
    assert_eq!(sub_actions(&cat, 1), 8);
}

#[test]
fn unfiltered_size_matches_formula() {
    let g = ring5();
    let expected: u64 = (0..5).map(|s| 1u64 << (g.connections(s).len() - 1)).sum::<u64>() + 2 * g.lines.len() as u64 + 1;
    let cat = enumerate_unitary_actions(&g, CatalogOptions { fatal_filter: false });
    assert_eq!(cat.len() as u64, expected);
    assert_eq!(unfiltered_catalog_size(&g), expected);
}

#[test]
fn catalog_is_dense_unique_and_canonical() {
    let g = ring5();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    assert_eq!(cat.action(0), &TopologyAction::NoOp);
    let set: BTreeSet<String> = cat.actions().iter().map(|a| format!("{a:?}")).collect();
    assert_eq!(set.len(), cat.len());
    for (id, a) in cat.actions().iter().enumerate() {
        assert_eq!(cat.id_of(a), Some(id));
        if let TopologyAction::SetBus { buses, .. } = a {
            assert_eq!(buses[0], Bus::One);
        }
    }
    // relabeled twin maps to the same id
    let twin = TopologyAction::SetBus { substation: 1, buses: vec![Bus::Two, Bus::Two, Bus::One, Bus::One] };
    let canon = TopologyAction::SetBus { substation: 1, buses: vec![Bus::One, Bus::One, Bus::Two, Bus::Two] };
    assert_eq!(cat.id_of(&twin), cat.id_of(&canon));
}

#[test]
fn dropped_configurations_always_island_something() {
    let g = ring5();
    let all = enumerate_unitary_actions(&g, CatalogOptions { fatal_filter: false });
    let kept = enumerate_unitary_actions(&g, CatalogOptions::default());
    let topo = TopologyState::default_for(&g);
    let inj = Injections { gen_p: vec![60.0, 30.0], load_p: vec![30.0, 40.0, 20.0], storage_p: vec![] };
    let cd = CooldownConfig::default();
    let mut dropped = 0;
    for a in all.actions() {
        let after = apply_topology_action(&g, &topo, a, &cd).unwrap();
        let sol = solve_dc_flow(&g, &after, &inj).unwrap();
        if kept.id_of(a).is_none() {
            dropped += 1;
            assert!(sol.failure.is_some(), "{a:?} was dropped but keeps the grid whole");
        }
    }
    assert_eq!(all.len() - kept.len(), dropped);
    assert!(dropped > 0);
}

/// Which connections share an electrical node, as a set of sets.
fn node_partition(spec: &GridSpec, topo: &TopologyState) -> BTreeSet<BTreeSet<String>> {
    let graph = build_node_graph(spec, topo).unwrap();
    let mut groups: HashMap<usize, BTreeSet<String>> = HashMap::new();
    for sub in 0..spec.n_substations() {
        for (i, c) in spec.connections(sub).iter().enumerate() {
            let active = match c {
                Connection::LineOrigin(l) | Connection::LineExtremity(l) => topo.line_connected[*l],
                _ => true,
            };
            if !active {
                continue;
            }
            let bus = topo.bus[spec.connection_range(sub).start + i];
            let node = graph.node_of(sub, bus).unwrap();
            groups.entry(node).or_default().insert(format!("{c:?}"));
        }
    }
    groups.into_values().collect()
}

#[test]
fn relabeled_twins_are_electrically_identical() {
    let g = ring5();
    let cat = enumerate_unitary_actions(&g, CatalogOptions { fatal_filter: false });
    let topo = TopologyState::default_for(&g);
    let cd = CooldownConfig::default();
    let inj = Injections { gen_p: vec![60.0, 30.0], load_p: vec![30.0, 40.0, 20.0], storage_p: vec![] };
    for a in cat.actions() {
        let TopologyAction::SetBus { substation, buses } = a else { continue };
        let twin = TopologyAction::SetBus { substation: *substation, buses: buses.iter().map(|b| b.flipped()).collect() };
        let t1 = apply_topology_action(&g, &topo, a, &cd).unwrap();
        let t2 = apply_topology_action(&g, &topo, &twin, &cd).unwrap();
        assert_eq!(node_partition(&g, &t1), node_partition(&g, &t2));
        let (f1, f2) = (solve_dc_flow(&g, &t1, &inj).unwrap(), solve_dc_flow(&g, &t2, &inj).unwrap());
        assert_eq!(f1.failure, f2.failure);
        for (x, y) in f1.flow.iter().zip(&f2.flow) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn fresh_reset_masks_only_no_change_actions() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let e = ep(&g, ch, quiet(), 0);
    let mask = cat.legal_mask(&e.observation());
    for (id, a) in cat.actions().iter().enumerate() {
        let no_change = match a {
            TopologyAction::NoOp => false,
            TopologyAction::SetBus { buses, .. } => buses.iter().all(|&b| b == Bus::One),
            TopologyAction::SetLine { connected, .. } => *connected,
        };
        assert_eq!(mask[id], !no_change, "{a:?}");
    }
}

#[test]
fn switched_substation_masked_for_three_steps() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let mut e = ep(&g, ch, quiet(), 0);
    let split = TopologyAction::SetBus { substation: 1, buses: vec![Bus::One, Bus::One, Bus::Two, Bus::Two] };
    e.step(&EnvAction::topology(split)).unwrap();
    let sub1: Vec<usize> = (0..cat.len()).filter(|&i| cat.action(i).substation() == Some(1)).collect();
    for _ in 0..3 {
        let mask = cat.legal_mask(&e.observation());
        assert!(sub1.iter().all(|&i| !mask[i]));
        e.step(&EnvAction::NoOp).unwrap();
    }
    let mask = cat.legal_mask(&e.observation());
    // everything except the current configuration is open again
    assert_eq!(sub1.iter().filter(|&&i| mask[i]).count(), sub1.len() - 1);
}

#[test]
fn attacked_line_reconnect_masked_until_duration_ends() {
    let g = ring5();
    let ch = constant(&g, 300, &[30.0, 40.0, 20.0], &[0.0, 30.0]);
    let mut cfg = EnvConfig::default();
    cfg.opponent = OpponentConfig { enabled: true, attackable_lines: vec![3], mean_attacks: 1.0, duration: 48 };
    let seed = (0..200u64).find(|&s| ep(&g, ch.clone(), cfg.clone(), s).attack_schedule().first().is_some_and(|&t| t < 200)).unwrap();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let reconnect = cat.line_action(3, true).unwrap();
    let mut e = ep(&g, ch, cfg, seed);
    let t_attack = e.attack_schedule()[0];
    while e.t() < t_attack {
        e.step(&EnvAction::NoOp).unwrap();
    }
    assert!(!e.observation().line_connected(3));
    while e.t() + 1 < t_attack + 48 {
        assert!(!cat.is_legal(&e.observation(), reconnect), "t = {}", e.t());
        e.step(&EnvAction::NoOp).unwrap();
    }
    assert!(cat.is_legal(&e.observation(), reconnect));
    let r = e.step(&EnvAction::topology(cat.action(reconnect).clone())).unwrap();
    assert!(r.info.illegal.is_none());
}

#[test]
fn recovery_on_default_topology_is_empty() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    assert!(cat.recovery_actions(&ep(&g, ch, quiet(), 0).observation()).is_empty());
}

#[test]
fn recovery_resets_one_split_substation() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let mut e = ep(&g, ch, quiet(), 0);
    e.step(&EnvAction::topology(TopologyAction::SetBus { substation: 3, buses: vec![Bus::One, Bus::Two, Bus::One, Bus::Two] })).unwrap();
    for _ in 0..3 {
        e.step(&EnvAction::NoOp).unwrap();
    }
    let rec = cat.recovery_actions(&e.observation());
    assert_eq!(rec, vec![cat.reset_action(3).unwrap()]);
}

#[test]
fn recovery_defers_masked_actions() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let mut e = ep(&g, ch, quiet(), 0);
    let steps = [
        TopologyAction::SetBus { substation: 3, buses: vec![Bus::One, Bus::Two, Bus::One, Bus::Two] },
        TopologyAction::SetLine { line: 4, connected: false },
        TopologyAction::NoOp,
        TopologyAction::NoOp,
        TopologyAction::SetBus { substation: 0, buses: vec![Bus::One, Bus::One, Bus::Two] },
    ];
    for a in steps {
        let r = e.step(&EnvAction::topology(a)).unwrap();
        assert!(r.info.illegal.is_none());
        assert!(!r.done, "{:?} {:?}", r.done_reason, r.info);
    }
    // substation 0 just switched and is in cooldown; 3 and line 4 are free
    let obs = e.observation();
    let rec = cat.recovery_actions(&obs);
    assert_eq!(rec, vec![cat.reset_action(3).unwrap(), cat.line_action(4, true).unwrap()]);
    assert!(rec.iter().all(|&id| cat.is_legal(&obs, id)));
    for _ in 0..3 {
        e.step(&EnvAction::NoOp).unwrap();
    }
    assert_eq!(cat.recovery_actions(&e.observation()).len(), 3);
    assert_eq!(cat.recovery_actions(&e.observation())[0], cat.reset_action(3).unwrap());
}

#[test]
fn catalog_json_round_trip() {
    let g = ring5();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let back = ActionCatalog::from_json_str(&g, &cat.to_json_string(&g)).unwrap();
    assert_eq!(back.actions(), cat.actions());
    let other = GridSpec::from_json_str(&g.to_json_string().replace("ring5", "other")).unwrap();
    assert!(ActionCatalog::from_json_str(&other, &cat.to_json_string(&g)).is_err());
}

#[test]
fn descriptions_name_moved_elements() {
    let g = ring5();
    let a = TopologyAction::SetBus { substation: 1, buses: vec![Bus::One, Bus::One, Bus::Two, Bus::Two] };
    assert_eq!(describe_action(&g, &a), "split substation 1: line 5 (origin), line 0 (extremity) to bus 2");
    assert_eq!(describe_action(&g, &TopologyAction::SetLine { line: 2, connected: false }), "disconnect line 2");
}

#[test]
fn reduced_set_ranks_by_frequency_then_id() {
    let counts: HashMap<usize, u64> = [(7, 3), (2, 3), (9, 5), (4, 1)].into_iter().collect();
    let set = ReducedActionSet::from_counts(&counts, 3, 20);
    assert_eq!(set.entries, vec![(9, 5), (2, 3), (7, 3)]);
    let all = ReducedActionSet::from_counts(&counts, 10, 20);
    assert_eq!(all.len(), 4);
    let back = ReducedActionSet::from_text(&set.to_text()).unwrap();
    assert_eq!(back, set);
    assert!(ReducedActionSet::from_text("# catalog_size 5\n7 1\n").is_err());
}

/// Ring with line 0 overloaded under constant demand.
fn congested_ring() -> (GridSpec, Chronics) {
    let base = ring5();
    let mut lines = base.lines.clone();
    lines[0].thermal_limit = 70.0;
    let g = GridSpec::new("ring5-congested".into(), base.substations.clone(), lines, base.generators.clone(), base.loads.clone(), vec![], 0).unwrap();
    let ch = constant(&g, 60, &[90.0, 60.0, 30.0], &[0.0, 30.0]);
    (g, ch)
}

/// Cost of every catalog action from the reset state, solved directly.
fn oracle_best(g: &GridSpec, ch: &Chronics, cat: &ActionCatalog) -> (usize, f64, f64) {
    let topo = TopologyState::default_for(g);
    let inj = Injections { gen_p: ch.gen_p_max[1].clone(), load_p: ch.load_p[1].clone(), storage_p: vec![] };
    let cd = CooldownConfig::default();
    let cost = |t: &TopologyState| {
        let sol = solve_dc_flow(g, t, &inj).unwrap();
        if sol.failure.is_some() {
            return crate::env::BLACKOUT_COST;
        }
        crate::env::rho_cost(&sol.rho)
    };
    let noop = cost(&topo);
    let mut best = (usize::MAX, f64::INFINITY);
    for (id, a) in cat.actions().iter().enumerate().skip(1) {
        if matches!(a, TopologyAction::SetLine { connected: true, .. })
            || matches!(a, TopologyAction::SetBus { buses, .. } if buses.iter().all(|&b| b == Bus::One))
        {
            continue;
        }
        let c = cost(&apply_topology_action(g, &topo, a, &cd).unwrap());
        if c < best.1 {
            best = (id, c);
        }
    }
    (best.0, best.1, noop)
}

#[test]
fn budget_one_returns_the_dominant_action() {
    let (g, ch) = congested_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let (best, best_cost, noop_cost) = oracle_best(&g, &ch, &cat);
    assert!(noop_cost > 1.0 && best_cost < 1.0, "noop {noop_cost} best {best_cost}");
    let cfg = ReduceConfig { k: 1, seeds: vec![0, 1], max_steps: Some(40), ..Default::default() };
    let set = reduce_actions(&Arc::new(g), &[Arc::new(ch)], &Arc::new(quiet()), &cat, &cfg).unwrap();
    assert_eq!(set.ids(), vec![best]);
}

#[test]
fn reduction_is_deterministic_subset() {
    let (g, ch) = congested_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let mut ch2 = ch.clone();
    for (t, r) in ch2.load_p.iter_mut().enumerate() {
        r[1] += (t % 7) as f64 * 5.0;
    }
    let scen = [Arc::new(ch), Arc::new(ch2)];
    let cfg = ReduceConfig { k: 50, seeds: vec![3, 4], max_steps: Some(50), ..Default::default() };
    let (g, env) = (Arc::new(g), Arc::new(EnvConfig::default()));
    let a = reduce_actions(&g, &scen, &env, &cat, &cfg).unwrap();
    let b = reduce_actions(&g, &scen, &env, &cat, &cfg).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert!(!a.is_empty() && a.len() <= 50);
    assert!(a.ids().iter().all(|&id| id > 0 && id < cat.len()));
}

#[test]
fn reduction_on_safe_grid_is_empty() {
    let (g, ch) = safe_ring();
    let cat = enumerate_unitary_actions(&g, CatalogOptions::default());
    let cfg = ReduceConfig { k: 5, seeds: vec![0], max_steps: Some(30), ..Default::default() };
    let set = reduce_actions(&Arc::new(g), &[Arc::new(ch)], &Arc::new(quiet()), &cat, &cfg).unwrap();
    assert!(set.is_empty());
}
