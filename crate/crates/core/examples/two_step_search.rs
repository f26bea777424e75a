//! Tree search on a scripted congestion that only a sequence of two
//! topology changes resolves; greedy single-step choices fail.

use gridzero::actions::describe_action;
use gridzero::scenario::two_step_congestion;
use gridzero::search::{mcts_search, UniformPrior};
use gridzero::SAFE_THRESHOLD;

fn main() {
    let case = two_step_congestion();
    let oracle = case.oracle(SAFE_THRESHOLD);
    println!("exhaustive search: {} single actions survive, pairs {:?}", oracle.singles.len(), oracle.pairs);
    println!("greedy survives: {}, no-op survives: {}", case.greedy_survives(SAFE_THRESHOLD), case.noop_survives());

    let domain = case.domain(&UniformPrior, SAFE_THRESHOLD);
    let root = case.root(SAFE_THRESHOLD);
    let cfg = case.assist_config().search;
    let res = mcts_search(&domain, root, &cfg);
    println!("{} simulations, stop {:?}, reached step {} of {}", res.simulations, res.stop_reason, res.best_reached_step, case.chronics.horizon());
    if let Some(best) = res.children.iter().find(|c| Some(c.action) == res.action) {
        for (i, &a) in best.plan.iter().enumerate() {
            println!("  step {}: {}", i + 1, describe_action(&case.spec, case.catalog.action(case.reduced[a])));
        }
    }
    print!("{}", res.dump());
}
