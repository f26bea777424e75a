//! Cross-entropy redispatch on a congested state, alone and combined with
//! topology candidates.

use std::sync::Arc;

use gridzero::actions::{enumerate_unitary_actions, CatalogOptions};
use gridzero::env::{EnvAction, Episode};
use gridzero::redispatch::{ce_optimize, combine, CEConfig, CombineConfig};
use gridzero::scenario::{desk14, desk14_env_config, generate_chronics, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = Arc::new(desk14());
    let cfg = ScenarioConfig::default();
    let catalog = enumerate_unitary_actions(&spec, CatalogOptions::default());
    // first scenario with an overloaded line
    let mut ep = None;
    for seed in 0..20 {
        let chronics = Arc::new(generate_chronics(&spec, &cfg, seed, &format!("day{seed}")));
        let mut e = Episode::reset(spec.clone(), chronics, Arc::new(desk14_env_config()), 0)?;
        while !e.is_done() && e.rho_max() <= 1.0 {
            e.step(&EnvAction::NoOp)?;
        }
        if !e.is_done() {
            ep = Some(e);
            break;
        }
    }
    let Some(ep) = ep else {
        println!("no congested state found");
        return Ok(());
    };
    println!("t={} rho_max {:.3}", ep.t(), ep.rho_max());

    let ce = ce_optimize(&ep, None, &CEConfig::default());
    println!("dispatch only: cost {:.3}, {:.1} MW, {} simulations, failed {}", ce.cost, ce.dispatch.redispatch_mw(), ce.simulations, ce.failed);
    println!("best score per iteration: {:?}", ce.history.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());

    let topo: Vec<_> = (1..catalog.len()).take(5).map(|id| catalog.action(id).clone()).collect();
    let joint = combine(&ep, &topo, &CombineConfig::default());
    println!("cascade: {:?}, cost {:.3} against no-op {:.3}, {:.1} MW", joint.choice, joint.cost, joint.noop_cost, joint.redispatch_mw);
    Ok(())
}
