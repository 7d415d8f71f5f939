//! Dense ReLU network with a linear output layer and its gradients.

use rand::Rng;

/// `w` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Glorot-uniform weights and biases, bound `sqrt(6 / (in + out))`.
    pub fn glorot<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .map(|d| {
                let (n_in, n_out) = (d[0], d[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut layer = Layer::zeros(n_in, n_out);
                for w in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                    *w = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Parameter `i` in the order of `params()`.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.w.len() {
                return &mut l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    /// Fills `acts[l]` with the post-activation output of layer `l`.
    pub fn forward_into(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len(), Vec::new());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let out = &mut after[0];
            out.clear();
            for o in 0..layer.n_out {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                let mut z = layer.b[o];
                for (w, a) in row.iter().zip(input) {
                    z += w * a;
                }
                out.push(if l < last { z.max(0.0) } else { z });
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_into(x, &mut acts);
        acts.pop().unwrap_or_default()
    }

    pub fn loss(&self, xs: &[&[f64]], ys: &[&[f64]], alpha: f64) -> f64 {
        let n = xs.len() as f64;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let out = self.forward(x);
            loss += out.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
        loss /= 2.0 * n;
        if alpha > 0.0 {
            let sq: f64 = self.layers.iter().flat_map(|l| l.w.iter()).map(|w| w * w).sum();
            loss += alpha * sq / (2.0 * n);
        }
        loss
    }

    /// Loss `sum_rows ||f(x) - y||^2 / (2n) + alpha * ||W||^2 / (2n)` and its
    /// gradient with respect to every weight and bias.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[&[f64]], alpha: f64) -> (f64, Network) {
        let n = xs.len() as f64;
        let mut grad = self.zeros_like();
        let mut acts = Vec::new();
        let mut loss = 0.0;
        let n_layers = self.layers.len();
        for (x, y) in xs.iter().zip(ys) {
            self.forward_into(x, &mut acts);
            let out = &acts[n_layers - 1];
            let mut delta: Vec<f64> = out.iter().zip(y.iter()).map(|(p, t)| (p - t) / n).collect();
            loss += out.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
            for l in (0..n_layers).rev() {
                let layer = &self.layers[l];
                let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
                let g = &mut grad.layers[l];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.b[o] += d;
                    let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(&acts[l - 1]) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        loss /= 2.0 * n;
        if alpha > 0.0 {
            let mut sq = 0.0;
            for (layer, g) in self.layers.iter().zip(grad.layers.iter_mut()) {
                for (w, gw) in layer.w.iter().zip(g.w.iter_mut()) {
                    sq += w * w;
                    *gw += alpha * w / n;
                }
            }
            loss += alpha * sq / (2.0 * n);
        }
        (loss, grad)
    }
}

/// Adam with bias correction folded into the step size.
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, net: &mut Network, grad: &Network) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grad.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::glorot(&[4, 6, 2], &mut rng);
        assert_eq!(net.dims(), vec![4, 6, 2]);
        assert_eq!(net.n_params(), 4 * 6 + 6 + 6 * 2 + 2);
        assert_eq!(net.forward(&[0.0; 4]).len(), 2);
    }

    #[test]
    fn loss_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::glorot(&[3, 5, 2], &mut rng);
        let xs = [[0.1, -0.4, 2.0], [1.0, 0.5, -0.3]];
        let ys = [[0.2, 0.9], [0.0, 0.4]];
        let xr: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let yr: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
        let a = net.loss(&xr, &yr, 0.1);
        let (b, _) = net.loss_and_grad(&xr, &yr, 0.1);
        assert!((a - b).abs() < 1e-14);
    }
}
