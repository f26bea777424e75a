//! Step the desk grid with no-ops until a line overloads, then try every
//! unitary topology change and apply the least congested one.

use std::sync::Arc;

use gridzero::actions::{enumerate_unitary_actions, greedy_best, CatalogOptions};
use gridzero::env::{EnvAction, Episode};
use gridzero::scenario::{desk14, desk14_env_config, generate_chronics, ScenarioConfig};
use gridzero::SAFE_THRESHOLD;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = Arc::new(desk14());
    let chronics = Arc::new(generate_chronics(&spec, &ScenarioConfig::default(), 3, "day3"));
    let mut ep = Episode::reset(spec.clone(), chronics, Arc::new(desk14_env_config()), 0)?;
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    println!("{} substations, {} lines, {} unitary actions", spec.n_substations(), spec.lines.len(), catalog.len());

    while !ep.is_done() && ep.rho_max() <= SAFE_THRESHOLD {
        ep.step(&EnvAction::NoOp)?;
    }
    if ep.is_done() {
        println!("no congestion before {:?}", ep.done_reason());
        return Ok(());
    }
    let obs = ep.observation();
    let worst = (0..spec.lines.len()).max_by(|&a, &b| obs.rho[a].total_cmp(&obs.rho[b])).unwrap_or(0);
    println!("t={} line {} at rho {:.3}", ep.t(), worst, obs.rho[worst]);

    let noop = ep.simulate(&EnvAction::NoOp)?;
    println!("no-op next step: rho_max {:.3}", noop.observation.rho_max());
    match greedy_best(&ep, &catalog, 1..catalog.len()) {
        Some((id, cost)) => {
            let r = ep.step(&EnvAction::topology(catalog.action(id).clone()))?;
            println!("applied {} (cost {cost:.3}): rho_max {:.3}, reward {:.3}", catalog.describe(&spec, id), r.observation.rho_max(), r.reward);
        }
        None => println!("no legal topology change"),
    }
    Ok(())
}
