use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{Chronics, Observation};
use crate::grid::{Bus, GridSpec};

const FEATURE_VERSION: u32 = 1;

/// Layout and normalization of the feature vector for one grid.
///
/// Per line: ρ, in-service flag, cos and sin of the overflow age mapped onto
/// a quarter turn. Per connection: bus one-hot. Per generator: output over
/// `p_max`. Per load: demand over its peak. Per storage: charge over
/// capacity. Per substation: remaining cooldown fraction. Last: time of day
/// as cos and sin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub grid: String,
    pub n_lines: usize,
    pub n_connections: usize,
    pub n_generators: usize,
    pub n_loads: usize,
    pub n_storages: usize,
    pub n_substations: usize,
    pub gen_scale: Vec<f64>,
    pub load_scale: Vec<f64>,
    pub storage_scale: Vec<f64>,
    /// Overflow age that maps to a quarter turn.
    pub overflow_steps: u32,
    pub cooldown_steps: u32,
}

impl FeatureSpec {
    /// Load peaks from `chronics`; without chronics loads are scaled by the
    /// total generation capacity.
    pub fn new(spec: &GridSpec, chronics: &[&Chronics]) -> Self {
        let capacity: f64 = spec.generators.iter().map(|g| g.p_max).sum();
        let load_scale = (0..spec.loads.len())
            .map(|l| {
                let peak = chronics.iter().flat_map(|c| c.load_p.iter().map(move |r| r[l])).fold(0.0f64, f64::max);
                if peak > 0.0 {
                    peak
                } else {
                    capacity.max(1.0)
                }
            })
            .collect();
        FeatureSpec {
            grid: spec.name.clone(),
            n_lines: spec.lines.len(),
            n_connections: spec.n_connections(),
            n_generators: spec.generators.len(),
            n_loads: spec.loads.len(),
            n_storages: spec.storages.len(),
            n_substations: spec.n_substations(),
            gen_scale: spec.generators.iter().map(|g| g.p_max.max(1e-9)).collect(),
            load_scale,
            storage_scale: spec.storages.iter().map(|s| s.energy_capacity.max(1e-9)).collect(),
            overflow_steps: 3,
            cooldown_steps: 3,
        }
    }

    pub fn len(&self) -> usize {
        4 * self.n_lines + 2 * self.n_connections + self.n_generators + self.n_loads + self.n_storages + self.n_substations + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Digest of the layout; checkpoints carry it and refuse other layouts.
    pub fn hash(&self) -> String {
        let desc = format!(
            "v{FEATURE_VERSION};grid={};lines={};conns={};gens={};loads={};storages={};subs={}",
            self.grid, self.n_lines, self.n_connections, self.n_generators, self.n_loads, self.n_storages, self.n_substations
        );
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }

    pub fn matches(&self, spec: &GridSpec) -> bool {
        self.grid == spec.name
            && self.n_lines == spec.lines.len()
            && self.n_connections == spec.n_connections()
            && self.n_generators == spec.generators.len()
            && self.n_loads == spec.loads.len()
            && self.n_storages == spec.storages.len()
            && self.n_substations == spec.n_substations()
    }

    pub fn extract(&self, obs: &Observation) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        let quarter = std::f64::consts::FRAC_PI_2;
        for l in 0..self.n_lines {
            x.push(obs.rho[l]);
            x.push(if obs.topology.line_connected[l] { 1.0 } else { 0.0 });
            let age = (obs.overflow_age[l].min(self.overflow_steps) as f64) / self.overflow_steps.max(1) as f64;
            x.push((age * quarter).cos());
            x.push((age * quarter).sin());
        }
        for &b in &obs.topology.bus {
            x.push(if b == Bus::One { 1.0 } else { 0.0 });
            x.push(if b == Bus::Two { 1.0 } else { 0.0 });
        }
        for (p, s) in obs.gen_p.iter().zip(&self.gen_scale) {
            x.push(p / s);
        }
        for (p, s) in obs.load_p.iter().zip(&self.load_scale) {
            x.push(p / s);
        }
        for (e, s) in obs.storage_charge.iter().zip(&self.storage_scale) {
            x.push(e / s);
        }
        for &cd in &obs.topology.sub_cooldown {
            x.push(cd.min(self.cooldown_steps) as f64 / self.cooldown_steps.max(1) as f64);
        }
        let day = obs.minute_of_day / 1440.0 * std::f64::consts::TAU;
        x.push(day.cos());
        x.push(day.sin());
        for v in &mut x {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        x
    }
}
