use super::StepResult;

/// Shaped reward in (0, 1].
///
/// Without overflow `u = max(ρ_max − 0.5, 0)`; otherwise `u` sums `ρ_i − 0.5`
/// over the overflowing lines. The reward is `exp(−u − 0.5·n_offline)` where
/// `n_offline` counts lines switched off by protection or by the agent.
pub fn compute_reward(rho: &[f64], n_offline: usize) -> f64 {
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    let u = if rho_max <= 1.0 { (rho_max - 0.5).max(0.0) } else { rho.iter().filter(|&&r| r > 1.0).map(|r| r - 0.5).sum() };
    (-u - 0.5 * n_offline as f64).exp()
}

/// Score assigned to any simulated blackout; ranks it below every live grid.
pub const BLACKOUT_COST: f64 = 1e6;

/// Congestion left after a (simulated) step: the sum of overflowing line
/// loads, or the maximum line load when nothing overflows.
pub fn congestion_cost(result: &StepResult) -> f64 {
    if result.done_reason.is_some_and(|d| d.is_blackout()) {
        return BLACKOUT_COST;
    }
    rho_cost(&result.observation.rho)
}

pub fn rho_cost(rho: &[f64]) -> f64 {
    let over: f64 = rho.iter().filter(|&&r| r > 1.0).sum();
    if over > 0.0 {
        over
    } else {
        rho.iter().copied().fold(0.0, f64::max)
    }
}
