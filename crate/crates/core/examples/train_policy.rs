//! Behavioural cloning of the tree search into a policy prior, with one
//! metrics row per epoch.

use std::sync::Arc;

use gridzero::actions::{enumerate_unitary_actions, reduce_actions, CatalogOptions, ReduceConfig};
use gridzero::policy::{run_training, TrainConfig, METRICS_HEADER};
use gridzero::scenario::{desk14, desk14_env_config, generate_suite, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(4), |s| s.parse())?;
    let spec = Arc::new(desk14());
    let suite: Vec<_> = generate_suite(&spec, &ScenarioConfig::default(), 8, 1).into_iter().map(Arc::new).collect();
    let env = Arc::new(desk14_env_config());
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    let reduced = reduce_actions(&spec, &suite, &env, &catalog, &ReduceConfig { k: 30, ..Default::default() })?;

    let cfg = TrainConfig { epochs, episodes_per_epoch: 8, hidden: vec![64, 64], ..Default::default() };
    let run = run_training(&spec, &suite, &env, &catalog, &reduced, &cfg, None)?;
    println!("{METRICS_HEADER}");
    for m in &run.metrics {
        println!("{}", m.csv_row());
    }
    let path = std::env::temp_dir().join("gridzero_policy.json");
    run.policy.save(&path)?;
    println!("policy saved to {}", path.display());
    Ok(())
}
