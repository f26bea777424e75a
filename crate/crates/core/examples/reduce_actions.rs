//! Replay a suite with the greedy pilot and keep the most useful topology
//! changes as the reduced action set.

use std::sync::Arc;

use gridzero::actions::{enumerate_unitary_actions, reduce_actions, CatalogOptions, ReduceConfig};
use gridzero::scenario::{desk14, desk14_env_config, generate_suite, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = Arc::new(desk14());
    let suite: Vec<_> = generate_suite(&spec, &ScenarioConfig::default(), 6, 1).into_iter().map(Arc::new).collect();
    let env = Arc::new(desk14_env_config());
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    let set = reduce_actions(&spec, &suite, &env, &catalog, &ReduceConfig { k: 20, ..Default::default() })?;
    println!("kept {} of {} actions", set.len(), catalog.len());
    for id in set.ids().iter().take(10) {
        println!("  {id:4}  {}", catalog.describe(&spec, *id));
    }
    print!("{}", set.to_text());
    Ok(())
}
