//! Desk-scale benchmark grid and a seeded chronics generator.
//!
//! The 14-substation grid follows the classic IEEE 14-bus layout
//! (reactances and load split), with a renewable fleet added and thermal
//! limits chosen so that evening peaks and line outages congest a handful
//! of corridors.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Chronics, EnvConfig, OpponentConfig, PlannedOutage};
use crate::error::EnvError;
mod two_step;
pub use two_step::{two_step_candidate, two_step_congestion, OracleReport, TwoStepCase, MAX_REDUCED, TWO_STEP_SEED};

use crate::grid::{GenKind, Generator, GridSpec, Line, Load, Storage, Substation};

/// Peak demand per load of the desk grid, MW.
pub const DESK14_PEAK_LOAD: [f64; 11] = [26.0, 113.0, 57.4, 9.1, 13.4, 35.4, 10.8, 4.2, 7.3, 16.2, 17.9];

// (from, to, reactance p.u., limit MW)
const DESK14_LINES: [(usize, usize, f64, f64); 20] = [
    (0, 1, 0.05917, 180.0),
    (0, 4, 0.22304, 95.0),
    (1, 2, 0.19797, 74.0),
    (1, 3, 0.17632, 75.0),
    (1, 4, 0.17388, 55.0),
    (2, 3, 0.17103, 65.0),
    (3, 4, 0.04211, 66.0),
    (3, 6, 0.20912, 90.0),
    (3, 8, 0.55618, 40.0),
    (4, 5, 0.25202, 55.0),
    (5, 10, 0.19890, 32.0),
    (5, 11, 0.25581, 36.0),
    (5, 12, 0.13027, 26.0),
    (6, 7, 0.17615, 110.0),
    (6, 8, 0.11001, 55.0),
    (8, 9, 0.08450, 28.0),
    (8, 13, 0.27038, 28.0),
    (9, 10, 0.19207, 26.0),
    (11, 12, 0.19988, 26.0),
    (12, 13, 0.34802, 22.0),
];

const DESK14_LOAD_SUBS: [usize; 11] = [1, 2, 3, 4, 5, 8, 9, 10, 11, 12, 13];

const DESK14_POSITIONS: [[f64; 2]; 14] = [
    [0.0, 2.0],
    [1.0, 0.0],
    [3.0, 0.0],
    [3.0, 2.0],
    [1.5, 2.5],
    [1.5, 4.0],
    [4.0, 3.0],
    [5.0, 3.0],
    [3.5, 4.0],
    [2.8, 4.6],
    [2.0, 4.8],
    [0.5, 5.5],
    [1.5, 6.0],
    [3.5, 6.0],
];

fn dispatchable(id: usize, sub: usize, kind: GenKind, p_max: f64, ramp: f64) -> Generator {
    Generator { id, sub, kind, p_min: 0.0, p_max, ramp_limit: ramp, redispatchable: true, curtailable: false }
}

fn renewable(id: usize, sub: usize, kind: GenKind, p_max: f64) -> Generator {
    Generator { id, sub, kind, p_min: 0.0, p_max, ramp_limit: p_max, redispatchable: false, curtailable: true }
}

/// The 14-substation benchmark grid. Generator 0 is the slack.
pub fn desk14() -> GridSpec {
    let substations = (0..14).map(|id| Substation { id, name: Some(format!("S{}", id + 1)), position: Some(DESK14_POSITIONS[id]) }).collect();
    let lines = DESK14_LINES
        .iter()
        .enumerate()
        .map(|(id, &(from_sub, to_sub, reactance, thermal_limit))| Line { id, from_sub, to_sub, reactance, thermal_limit })
        .collect();
    let generators = vec![
        dispatchable(0, 0, GenKind::Thermal, 330.0, 20.0),
        dispatchable(1, 1, GenKind::Thermal, 140.0, 10.0),
        renewable(2, 2, GenKind::Solar, 70.0),
        dispatchable(3, 5, GenKind::Thermal, 90.0, 8.0),
        renewable(4, 7, GenKind::Wind, 90.0),
    ];
    let loads = DESK14_LOAD_SUBS.iter().enumerate().map(|(id, &sub)| Load { id, sub }).collect();
    let storages = vec![Storage { id: 0, sub: 8, energy_capacity: 20.0, max_charge: 10.0, max_discharge: 10.0 }];
    GridSpec::new("desk14".into(), substations, lines, generators, loads, storages, 0).expect("desk14 is valid")
}

/// Environment defaults for the desk suite: the opponent may hit the
/// backbone lines.
pub fn desk14_env_config() -> EnvConfig {
    EnvConfig { opponent: OpponentConfig { attackable_lines: vec![3, 4, 7, 9, 14], ..Default::default() }, ..Default::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Steps per episode; the chronics carry one extra row.
    pub horizon: usize,
    pub dt_minutes: f64,
    /// Peak demand per load, MW.
    pub peak_load: Vec<f64>,
    /// Relative spread of the per-scenario demand level.
    pub level_spread: f64,
    /// Relative standard deviation of the per-load AR(1) noise.
    pub load_noise: f64,
    /// Probability that a scenario carries one planned line outage.
    pub maintenance_prob: f64,
    /// Lines eligible for maintenance.
    pub maintenance_lines: Vec<usize>,
    pub forecast_noise: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            horizon: 2016,
            dt_minutes: 5.0,
            peak_load: DESK14_PEAK_LOAD.to_vec(),
            level_spread: 0.08,
            load_noise: 0.02,
            maintenance_prob: 0.5,
            maintenance_lines: vec![3, 4, 9, 12, 14],
            forecast_noise: 0.01,
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Demand shape over the day in [0, 1]: night trough, morning shoulder and
/// an evening peak around 19h.
fn daily_shape(hour: f64) -> f64 {
    let base = 0.5 - 0.5 * (std::f64::consts::TAU * (hour - 4.0) / 24.0).cos();
    let evening = (-((hour - 19.0) / 2.0).powi(2)).exp();
    (0.75 * base + 0.35 * evening).min(1.0)
}

/// One seeded scenario for `spec`. Loads follow daily and weekly cycles with
/// AR(1) noise; solar follows the sun with daily cloudiness; wind is a
/// bounded AR(1) process. Dispatchable units other than the slack are
/// scheduled pro rata on the net demand, and the slack closes the balance.
pub fn generate_chronics(spec: &GridSpec, cfg: &ScenarioConfig, seed: u64, name: &str) -> Chronics {
    assert_eq!(cfg.peak_load.len(), spec.loads.len(), "one peak per load");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = cfg.horizon + 1;
    let steps_per_hour = 60.0 / cfg.dt_minutes;
    let level = 1.0 + cfg.level_spread * (2.0 * rng.random::<f64>() - 1.0);
    let start_hour = 24.0 * rng.random_range(0..7) as f64;
    let n_days = (rows as f64 / steps_per_hour / 24.0).ceil() as usize + 8;
    let cloud: Vec<f64> = (0..n_days).map(|_| rng.random_range(0.35..1.0)).collect();
    // per-scenario tilt of the non-slack schedules
    let tilt: Vec<f64> = spec.generators.iter().map(|_| rng.random_range(0.8..1.2)).collect();

    let mut noise = vec![0.0; spec.loads.len()];
    let rho = 0.95f64;
    let innov = cfg.load_noise * (1.0 - rho * rho).sqrt();
    let mut wind_state = rng.random_range(-1.0..1.0);

    let mut load_p = Vec::with_capacity(rows);
    let mut gen_p_max = Vec::with_capacity(rows);
    for t in 0..rows {
        let hour = start_hour + t as f64 / steps_per_hour;
        let hod = hour % 24.0;
        let day = (hour / 24.0) as usize;
        let weekend = matches!(day % 7, 5 | 6);
        let week_factor = if weekend { 0.9 } else { 1.0 };
        let shape = 0.62 + 0.38 * daily_shape(hod);
        let row: Vec<f64> = cfg
            .peak_load
            .iter()
            .zip(noise.iter_mut())
            .map(|(&peak, n)| {
                *n = rho * *n + innov * std.sample(&mut rng);
                round2((peak * level * week_factor * shape * (1.0 + *n)).max(0.0))
            })
            .collect();
        wind_state = 0.99 * wind_state + 0.14 * std.sample(&mut rng);
        let wind_cf = 1.0 / (1.0 + (-1.5 * wind_state).exp());
        let sun = (std::f64::consts::PI * (hod - 6.0) / 12.0).sin().max(0.0);
        let mut gen: Vec<f64> = spec
            .generators
            .iter()
            .map(|g| match g.kind {
                GenKind::Solar => round2(g.p_max * sun * cloud[day % n_days]),
                GenKind::Wind | GenKind::Hydro => round2(g.p_max * wind_cf),
                _ => 0.0,
            })
            .collect();
        let demand: f64 = row.iter().sum();
        let renew: f64 = spec.generators.iter().filter(|g| g.curtailable).map(|g| gen[g.id]).sum();
        let net = (demand - renew).max(0.0);
        let cap: f64 = spec.generators.iter().filter(|g| !g.curtailable).map(|g| g.p_max).sum();
        for g in spec.generators.iter().filter(|g| !g.curtailable && g.id != spec.slack) {
            let share = g.p_max / cap * tilt[g.id];
            gen[g.id] = round2((net * share).clamp(g.p_min, g.p_max));
        }
        load_p.push(row);
        gen_p_max.push(gen);
    }

    let mut planned_outages = Vec::new();
    if !cfg.maintenance_lines.is_empty() && rng.random::<f64>() < cfg.maintenance_prob {
        let line = cfg.maintenance_lines[rng.random_range(0..cfg.maintenance_lines.len())];
        let day = rng.random_range(0..(cfg.horizon as f64 / steps_per_hour / 24.0).max(1.0) as usize);
        let start = ((day as f64 * 24.0 + rng.random_range(8.0..14.0)) * steps_per_hour) as usize;
        let duration = rng.random_range(12..=48);
        if start + duration < cfg.horizon {
            planned_outages.push(PlannedOutage { line, start, duration });
        }
    }

    Chronics { name: name.to_string(), dt_minutes: cfg.dt_minutes, load_p, gen_p_max, forecast_noise: cfg.forecast_noise, planned_outages }
}

/// `n` scenarios named `scenario_000`, ... with seeds derived from `base_seed`.
pub fn generate_suite(spec: &GridSpec, cfg: &ScenarioConfig, n: usize, base_seed: u64) -> Vec<Chronics> {
    (0..n).map(|i| generate_chronics(spec, cfg, base_seed.wrapping_mul(1_000_003).wrapping_add(i as u64), &format!("scenario_{i:03}"))).collect()
}

/// Write `spec` to `dir/grid.json` and every scenario to
/// `dir/chronics/<name>.csv`; returns both paths.
pub fn write_suite(dir: &Path, spec: &GridSpec, suite: &[Chronics]) -> Result<(PathBuf, PathBuf), EnvError> {
    let io = |p: &Path, e: std::io::Error| EnvError::Chronics(format!("{}: {e}", p.display()));
    let chronics = dir.join("chronics");
    std::fs::create_dir_all(&chronics).map_err(|e| io(&chronics, e))?;
    let grid = dir.join("grid.json");
    std::fs::write(&grid, spec.to_json_string()).map_err(|e| io(&grid, e))?;
    for c in suite {
        c.write_csv(chronics.join(format!("{}.csv", c.name)))?;
    }
    Ok((grid, chronics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_grid_shape() {
        let g = desk14();
        assert_eq!(g.n_substations(), 14);
        assert_eq!(g.lines.len(), 20);
        assert_eq!(g.loads.len(), DESK14_PEAK_LOAD.len());
        assert_eq!(g.redispatchable(), vec![1, 3]);
        assert_eq!(g.curtailable(), vec![2, 4]);
        let back = GridSpec::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn chronics_are_seeded_and_valid() {
        let g = desk14();
        let cfg = ScenarioConfig { horizon: 300, ..Default::default() };
        let a = generate_chronics(&g, &cfg, 3, "a");
        let b = generate_chronics(&g, &cfg, 3, "a");
        assert_eq!(a, b);
        assert_ne!(a.load_p, generate_chronics(&g, &cfg, 4, "a").load_p);
        assert_eq!(a.horizon(), 300);
        a.validate(&g).unwrap();
        for row in &a.gen_p_max {
            for gen in &g.generators {
                assert!(row[gen.id] <= gen.p_max + 1e-9);
            }
        }
    }

    #[test]
    fn suite_round_trips_through_csv() {
        let g = desk14();
        let cfg = ScenarioConfig { horizon: 50, maintenance_prob: 1.0, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let suite = generate_suite(&g, &cfg, 3, 1);
        for ch in &suite {
            ch.write_csv(dir.path().join(format!("{}.csv", ch.name))).unwrap();
        }
        let back = crate::env::load_chronics_dir(&g, dir.path(), cfg.dt_minutes, cfg.forecast_noise).unwrap();
        assert_eq!(back, suite);
    }
}
