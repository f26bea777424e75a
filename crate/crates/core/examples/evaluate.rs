//! Run an agent lineup over a seeded suite and print the summary table.

use std::sync::Arc;

use gridzero::actions::{enumerate_unitary_actions, reduce_actions, CatalogOptions, ReduceConfig};
use gridzero::bench::{evaluate, EvalConfig};
use gridzero::control::Agents;
use gridzero::scenario::{desk14, desk14_env_config, generate_suite, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = Arc::new(desk14());
    let cfg = ScenarioConfig::default();
    let train: Vec<_> = generate_suite(&spec, &cfg, 6, 1).into_iter().map(Arc::new).collect();
    let eval: Vec<_> = generate_suite(&spec, &cfg, 4, 0).into_iter().map(Arc::new).collect();
    let env = Arc::new(desk14_env_config());
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    let reduced = reduce_actions(&spec, &train, &env, &catalog, &ReduceConfig { k: 30, ..Default::default() })?;

    let agents = Agents::new(Arc::new(catalog), reduced.ids(), None);
    let lineup = ["noop", "redispatch", "brute_force", "topo_mcts"];
    let ecfg = EvalConfig { agents: lineup.iter().map(|s| s.to_string()).collect(), seeds: vec![0, 1], env: (*env).clone(), ..Default::default() };
    let (report, _) = evaluate(&spec, &eval, &agents, &ecfg)?;
    print!("{}", report.to_table());
    Ok(())
}
