use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpponentConfig {
    pub enabled: bool,
    pub attackable_lines: Vec<usize>,
    /// Expected number of attacks per episode.
    pub mean_attacks: f64,
    /// Steps an attacked line stays unavailable.
    pub duration: usize,
}

impl Default for OpponentConfig {
    fn default() -> Self {
        Self { enabled: true, attackable_lines: Vec::new(), mean_attacks: 2.0, duration: 48 }
    }
}

/// Attack schedule drawn at reset plus the stream used for line choice.
#[derive(Clone, Debug)]
pub struct Opponent {
    times: Vec<usize>,
    next: usize,
    rng: ChaCha8Rng,
}

impl Opponent {
    /// Attack times form a Poisson process over steps `1..=horizon`.
    pub fn new(cfg: &OpponentConfig, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut times = Vec::new();
        if cfg.enabled && !cfg.attackable_lines.is_empty() && cfg.mean_attacks > 0.0 && horizon > 0 {
            let gap = Exp::new(cfg.mean_attacks / horizon as f64).expect("positive rate");
            let mut t = 0.0;
            loop {
                t += gap.sample(&mut rng);
                let step = t.ceil() as usize;
                if step > horizon {
                    break;
                }
                if times.last() != Some(&step) {
                    times.push(step);
                }
            }
        }
        Opponent { times, next: 0, rng }
    }

    pub fn schedule(&self) -> &[usize] {
        &self.times
    }

    /// Line to attack at step `t`, if any. `available(line)` tells whether a
    /// line can be attacked (currently in service).
    pub fn attack_at(&mut self, t: usize, attackable: &[usize], available: impl Fn(usize) -> bool) -> Option<usize> {
        while self.next < self.times.len() && self.times[self.next] < t {
            self.next += 1;
        }
        if self.next >= self.times.len() || self.times[self.next] != t {
            return None;
        }
        self.next += 1;
        let candidates: Vec<usize> = attackable.iter().copied().filter(|&l| available(l)).collect();
        if candidates.is_empty() {
            return None;
        }
        Some(candidates[self.rng.random_range(0..candidates.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpponentConfig {
        OpponentConfig { enabled: true, attackable_lines: vec![1, 3, 5], mean_attacks: 2.0, duration: 48 }
    }

    #[test]
    fn empty_set_never_attacks() {
        let c = OpponentConfig { attackable_lines: vec![], ..cfg() };
        let mut o = Opponent::new(&c, 2016, 7);
        assert!(o.schedule().is_empty());
        assert!((0..=2016).all(|t| o.attack_at(t, &c.attackable_lines, |_| true).is_none()));
    }

    #[test]
    fn same_seed_same_schedule() {
        let a = Opponent::new(&cfg(), 2016, 11);
        let b = Opponent::new(&cfg(), 2016, 11);
        assert_eq!(a.schedule(), b.schedule());
        let c = Opponent::new(&cfg(), 2016, 12);
        assert_ne!(a.schedule(), c.schedule());
    }

    #[test]
    fn mean_attack_count_matches_config() {
        let total: usize = (0..2000).map(|s| Opponent::new(&cfg(), 2016, s).schedule().len()).sum();
        let mean = total as f64 / 2000.0;
        assert!((mean - 2.0).abs() < 0.15, "mean {mean}");
    }

    #[test]
    fn skips_when_all_lines_offline() {
        let c = cfg();
        let mut o = Opponent::new(&c, 2016, 3);
        let t = o.schedule()[0];
        assert_eq!(o.attack_at(t, &c.attackable_lines, |_| false), None);
    }

    #[test]
    fn only_available_lines_are_attacked() {
        let c = cfg();
        for seed in 0..50 {
            let mut o = Opponent::new(&c, 2016, seed);
            for t in o.schedule().to_vec() {
                let l = o.attack_at(t, &c.attackable_lines, |l| l != 3);
                assert!(matches!(l, Some(1) | Some(5)));
            }
        }
    }
}
