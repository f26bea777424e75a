use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Softmax restricted to `mask`. Masked entries get exactly 0. Returns `None`
/// when nothing is legal, which callers treat as "no-op only".
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    debug_assert_eq!(logits.len(), mask.len());
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&z, _)| z).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut p: Vec<f64> = logits.iter().zip(mask).map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 }).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Some(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let z: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[o];
            out.push(z);
        }
    }
}

/// Feed-forward map with ReLU hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                // Output layer starts small so the initial policy is close to uniform.
                let scale = if i + 2 == sizes.len() { 0.01 } else { (2.0 / n_in.max(1) as f64).sqrt() };
                let normal = Normal::new(0.0, scale).expect("positive scale");
                Layer { n_in, n_out, w: (0..n_in * n_out).map(|_| normal.sample(&mut rng)).collect(), b: vec![0.0; n_out] }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(n_in: usize, hidden: &[usize], n_out: usize) -> Self {
        let mut m = Self::new(n_in, hidden, n_out, 0);
        m.params_mut().for_each(|p| *p = 0.0);
        m
    }

    pub fn n_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap_or_default()
    }

    /// Per-layer outputs, post-ReLU for hidden layers. Entry 0 is the input.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.forward(acts.last().expect("input present"), &mut out);
            if i < last {
                // NaN passes through so a broken input shows up in the loss.
                out.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
        masked_softmax(&self.logits(x), mask)
    }

    /// Cross-entropy of the masked prediction against `target`, plus its
    /// gradient added into `grad` (flat, in `params()` order) scaled by
    /// `weight`. Returns `None` when nothing is legal.
    pub fn loss_and_grad(&self, x: &[f64], mask: &[bool], target: &[f64], weight: f64, grad: &mut [f64]) -> Option<f64> {
        let acts = self.activations(x);
        let logits = acts.last().expect("output present");
        if logits.iter().zip(mask).any(|(z, &m)| m && !z.is_finite()) {
            return Some(f64::NAN);
        }
        let p = masked_softmax(logits, mask)?;
        let loss = -target.iter().zip(&p).filter(|(&t, _)| t > 0.0).map(|(&t, &q)| t * q.max(f64::MIN_POSITIVE).ln()).sum::<f64>();
        // d loss / d logits, zero on masked outputs.
        let tsum: f64 = target.iter().sum();
        let mut delta: Vec<f64> = p.iter().zip(target).zip(mask).map(|((&q, &t), &m)| if m { q * tsum - t } else { 0.0 }).collect();

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |off, l| {
                let o = *off;
                *off += l.w.len() + l.b.len();
                Some(o)
            })
            .collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let off = offsets[li];
            for o in 0..layer.n_out {
                let d = delta[o] * weight;
                if d != 0.0 {
                    let g = &mut grad[off + o * layer.n_in..off + (o + 1) * layer.n_in];
                    g.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
                grad[off + layer.w.len() + o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    if delta[o] != 0.0 {
                        let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += delta[o] * w);
                    }
                }
                // ReLU derivative on the stored post-activation.
                prev.iter_mut().zip(input).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0
                    }
                });
                delta = prev;
            }
        }
        Some(loss * weight)
    }

    /// Mean loss and gradient over a weighted batch.
    pub fn batch_grad<'s, I>(&self, batch: I) -> (f64, Vec<f64>)
    where
        I: IntoIterator<Item = (&'s [f64], &'s [bool], &'s [f64], f64)>,
    {
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        let mut total_w = 0.0;
        for (x, mask, target, w) in batch {
            if let Some(l) = self.loss_and_grad(x, mask, target, w, &mut grad) {
                if !l.is_finite() {
                    return (f64::NAN, grad);
                }
                loss += l;
                total_w += w;
            }
        }
        if total_w > 0.0 {
            grad.iter_mut().for_each(|g| *g /= total_w);
            loss /= total_w;
        }
        (loss, grad)
    }

    pub fn perturb<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        self.params_mut().for_each(|p| *p += scale * (rng.random::<f64>() - 0.5));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g + c.weight_decay * *p;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        }
    }
}
