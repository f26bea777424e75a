//! An operator session on the scripted two-step congestion: ask for
//! recommendations, preview the top one, confirm it, and replay the log.

use gridzero::assist::{CreateSession, Session, NOOP_ID};
use gridzero::scenario::two_step_congestion;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = two_step_congestion();
    let manager = case.manager(case.assist_config());
    let scenario = manager.scenario_names()[0].clone();
    let handle = manager.create(&CreateSession { scenario, seed: 0, start_step: 0 }, None)?;
    let id = handle.lock().map_err(|_| "session lock")?.id().to_string();

    loop {
        let state = manager.with(&id, |s| Ok(s.state()))?;
        if state.done {
            println!("t={} done: {:?}", state.t, state.done_reason);
            break;
        }
        let list = manager.with(&id, |s| s.recommendations(Some(3)))?;
        let Some(top) = list.recommendations.first() else {
            manager.with(&id, |s| s.confirm(NOOP_ID))?;
            continue;
        };
        println!("t={} rho_max {:.3}:", list.t, state.verdict.rho_max);
        for r in &list.recommendations {
            println!("  #{} {} -> rho {:.3}, reaches {:?}, then {:?}", r.rank, r.description, r.outcome.rho_max_after, r.outcome.reached_step, r.outcome.plan);
        }
        let sim = manager.with(&id, |s| s.simulate(&top.id))?;
        println!("  preview of {}: rho_max {:.3}", top.id, sim.result.observation.rho_max());
        let done = manager.with(&id, |s| s.confirm(&top.id))?;
        println!("  confirmed, now t={}", done.t);
    }

    let events = manager.with(&id, |s| Ok(s.events().to_vec()))?;
    let replayed = Session::replay(case.spec.clone(), case.chronics.clone(), case.env.clone(), &events)?;
    println!("{} events, replay ends at t={}", events.len(), replayed.t());
    Ok(())
}
