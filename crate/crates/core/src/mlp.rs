//! Fully connected regression network trained by mini-batch SGD with
//! momentum on mean squared error.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FEATURE_COUNT;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(format!("unknown activation '{s}' (expected relu, tanh or sigmoid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub input_dim: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![32, 32],
            activation: Activation::Tanh,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            input_dim: FEATURE_COUNT,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.to_string()));
        if self.hidden_layers.is_empty() {
            return bad("at least one hidden layer is required");
        }
        if self.hidden_layers.contains(&0) || self.input_dim == 0 {
            return bad("layer widths must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("invalid MLP config: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
}

/// Dense layer with row-major weights `w[o * n_in + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut s = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                s += wi * xi;
            }
            out.push(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    /// Hidden layers followed by the single-output linear layer.
    pub layers: Vec<Layer>,
}

/// Pre- and post-activation values of every layer from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

pub fn init_mlp(cfg: &MlpConfig) -> Result<MlpModel, MlpError> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, 0x1A17);
    let mut dims = vec![cfg.input_dim];
    dims.extend(&cfg.hidden_layers);
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|d| {
            let (n_in, n_out) = (d[0], d[1]);
            let bound = 3f64.sqrt() / (n_in as f64).sqrt();
            Layer {
                n_in,
                n_out,
                w: (0..n_in * n_out).map(|_| r.random_range(-bound..=bound)).collect(),
                b: vec![0.0; n_out],
            }
        })
        .collect();
    Ok(MlpModel {
        config: cfg.clone(),
        layers,
    })
}

impl MlpModel {
    pub fn forward(&self, x: &[f64]) -> (f64, Cache) {
        let mut cache = Cache::default();
        let mut input = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.affine(&input, &mut z);
            let a: Vec<f64> = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.config.activation.apply(v)).collect()
            };
            cache.pre.push(z);
            cache.post.push(a.clone());
            input = a;
        }
        (input[0], cache)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if l != last {
                next.iter_mut().for_each(|v| *v = self.config.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn zeros_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer {
                n_in: l.n_in,
                n_out: l.n_out,
                w: vec![0.0; l.w.len()],
                b: vec![0.0; l.b.len()],
            })
            .collect()
    }

    /// Adds d(pred)/dθ · `scale` for input `x` into `grad`.
    fn backprop(&self, x: &[f64], cache: &Cache, scale: f64, grad: &mut [Layer]) {
        let mut delta = vec![scale];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &cache.post[l - 1] };
            let g = &mut grad[l];
            for o in 0..layer.n_out {
                g.b[o] += delta[o];
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gi, xi) in row.iter_mut().zip(input) {
                    *gi += delta[o] * xi;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += delta[o] * wi;
                }
            }
            let act = self.config.activation;
            for (i, p) in prev.iter_mut().enumerate() {
                *p *= act.derivative(cache.pre[l - 1][i], cache.post[l - 1][i]);
            }
            delta = prev;
        }
    }
}

/// Mean squared error over `(xs, ys)` and its gradient with respect to every
/// parameter, laid out like `model.layers`.
pub fn loss_and_gradient(model: &MlpModel, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<Layer>) {
    let mut grad = model.zeros_like();
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (pred, cache) = model.forward(x);
        let err = pred - y;
        loss += err * err;
        model.backprop(x, &cache, 2.0 * err / n, &mut grad);
    }
    (loss / n, grad)
}

pub fn mse(model: &MlpModel, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let s: f64 = xs.iter().zip(ys).map(|(x, y)| (model.predict(x) - y).powi(2)).sum();
    s / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
}

pub fn train_mlp(
    cfg: &MlpConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
    valid: Option<(&[Vec<f64>], &[f64])>,
) -> Result<(MlpModel, LossCurve), MlpError> {
    let mut model = init_mlp(cfg)?;
    if xs.len() != ys.len() {
        return Err(MlpError::Dimension(format!("{} rows but {} targets", xs.len(), ys.len())));
    }
    if xs.len() < cfg.batch_size {
        return Err(MlpError::Dimension(format!(
            "{} rows is fewer than batch_size {}",
            xs.len(),
            cfg.batch_size
        )));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != cfg.input_dim) {
        return Err(MlpError::Dimension(format!("row has {} inputs, expected {}", x.len(), cfg.input_dim)));
    }

    let mut velocity = model.zeros_like();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffler = rng::stream(cfg.seed, 0xBA7C);
    let mut curve = LossCurve::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let (_, grad) = loss_and_gradient(&model, &bx, &by);
            for ((layer, v), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grad) {
                for ((p, vi), gi) in layer.w.iter_mut().zip(&mut v.w).zip(&g.w) {
                    *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
                    *p += *vi;
                }
                for ((p, vi), gi) in layer.b.iter_mut().zip(&mut v.b).zip(&g.b) {
                    *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
                    *p += *vi;
                }
            }
        }
        let loss = mse(&model, xs, ys);
        if !loss.is_finite() {
            return Err(MlpError::Divergence { epoch });
        }
        curve.train.push(loss);
        if let Some((vx, vy)) = valid {
            curve.valid.push(mse(&model, vx, vy));
        }
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(hidden: Vec<usize>, act: Activation, input_dim: usize) -> MlpConfig {
        MlpConfig {
            hidden_layers: hidden,
            activation: act,
            input_dim,
            ..MlpConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = MlpConfig {
            seed: 7,
            ..cfg(vec![4], Activation::Relu, 11)
        };
        let a = init_mlp(&c).unwrap();
        assert_eq!(a, init_mlp(&c).unwrap());
        assert_eq!((a.layers[0].n_in, a.layers[0].n_out), (11, 4));
        assert_eq!((a.layers[1].n_in, a.layers[1].n_out), (4, 1));
        assert_eq!(a.layers[0].b, vec![0.0; 4]);
        assert_eq!(a.layers[1].b, vec![0.0; 1]);

        let wide = init_mlp(&cfg(vec![3], Activation::Relu, 100)).unwrap();
        assert!(wide.layers[0].w.iter().all(|w| w.abs() <= 0.1 * 3f64.sqrt()));
    }

    #[test]
    fn config_errors() {
        assert!(init_mlp(&cfg(vec![], Activation::Relu, 11)).is_err());
        assert!(init_mlp(&cfg(vec![0], Activation::Relu, 11)).is_err());
        let c = MlpConfig {
            learning_rate: 0.0,
            ..MlpConfig::default()
        };
        assert!(matches!(init_mlp(&c), Err(MlpError::Config(_))));
    }

    #[test]
    fn forward_examples() {
        let mut m = init_mlp(&cfg(vec![3], Activation::Relu, 2)).unwrap();
        m.layers.iter_mut().for_each(|l| l.w.iter_mut().for_each(|w| *w = 0.0));
        m.layers[1].b[0] = 5.0;
        assert_eq!(m.forward(&[1.0, 2.0]).0, 5.0);

        let mut m = init_mlp(&cfg(vec![1], Activation::Relu, 3)).unwrap();
        m.layers[0].w = vec![1.0; 3];
        m.layers[0].b = vec![-1000.0];
        m.layers[1].b = vec![0.25];
        let (p, cache) = m.forward(&[1.0, 2.0, 3.0]);
        assert_eq!(cache.post[0], vec![0.0]);
        assert_eq!(p, 0.25);

        // 2-2-1 tanh network evaluated by hand.
        let mut m = init_mlp(&cfg(vec![2], Activation::Tanh, 2)).unwrap();
        m.layers[0].w = vec![0.5, -1.0, 2.0, 0.25];
        m.layers[0].b = vec![0.1, -0.2];
        m.layers[1].w = vec![1.5, -0.5];
        m.layers[1].b = vec![0.3];
        let x = [1.0, 2.0];
        let h0 = (0.5 * 1.0 - 1.0 * 2.0 + 0.1f64).tanh();
        let h1 = (2.0 * 1.0 + 0.25 * 2.0 - 0.2f64).tanh();
        let expect = 1.5 * h0 - 0.5 * h1 + 0.3;
        assert!((m.forward(&x).0 - expect).abs() < 1e-12);
        assert_eq!(m.forward(&x).0.to_bits(), m.predict(&x).to_bits());
    }

    #[test]
    fn learns_linear_target() {
        let mut r = rng::seeded(3);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..11).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let c = MlpConfig {
            hidden_layers: vec![8],
            epochs: 500,
            learning_rate: 0.01,
            batch_size: 16,
            ..MlpConfig::default()
        };
        let (m, curve) = train_mlp(&c, &xs, &ys, None).unwrap();
        assert!(mse(&m, &xs, &ys) < 1e-3);
        assert_eq!(curve.train.len(), 500);
        let (_, again) = train_mlp(&c, &xs, &ys, None).unwrap();
        assert_eq!(curve, again);
    }

    #[test]
    fn small_lr_loss_decreases() {
        let mut r = rng::seeded(8);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| (0..11).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[1] - x[3] + 0.5).collect();
        let c = MlpConfig {
            hidden_layers: vec![8],
            epochs: 100,
            learning_rate: 1e-3,
            momentum: 0.0,
            batch_size: 10,
            ..MlpConfig::default()
        };
        let (_, curve) = train_mlp(&c, &xs, &ys, None).unwrap();
        assert!(curve.train.last() < curve.train.first());
        for w in curve.train.windows(2) {
            assert!(w[1] <= w[0] * 1.05);
        }
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64) / 8.0 - 4.0; 11]).collect();
        let ys: Vec<f64> = (0..64).map(|i| 10.0 * i as f64).collect();
        let c = MlpConfig {
            learning_rate: 1e3,
            ..MlpConfig::default()
        };
        assert!(matches!(train_mlp(&c, &xs, &ys, None), Err(MlpError::Divergence { .. })));
    }

    fn numeric_check(model: &MlpModel, xs: &[Vec<f64>], ys: &[f64]) -> Result<(), TestCaseError> {
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, grad) = loss_and_gradient(model, &refs, ys);
        let h = 1e-5;
        let loss_at = |m: &MlpModel| loss_and_gradient(m, &refs, ys).0;
        for l in 0..model.layers.len() {
            for k in 0..model.layers[l].w.len() + model.layers[l].b.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let nw = model.layers[l].w.len();
                let (p, m, a) = if k < nw {
                    (&mut plus.layers[l].w[k], &mut minus.layers[l].w[k], grad[l].w[k])
                } else {
                    (&mut plus.layers[l].b[k - nw], &mut minus.layers[l].b[k - nw], grad[l].b[k - nw])
                };
                *p += h;
                *m -= h;
                let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let scale = a.abs().max(num.abs()).max(1e-6);
                prop_assert!((a - num).abs() / scale < 1e-4, "layer {} param {}: analytic {} numeric {}", l, k, a, num);
            }
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_matches_finite_differences(
            seed in any::<u64>(),
            h1 in 1usize..5,
            h2 in 1usize..5,
            smooth in any::<bool>(),
            xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..4),
        ) {
            let act = if smooth { Activation::Tanh } else { Activation::Sigmoid };
            let m = init_mlp(&MlpConfig { seed, ..cfg(vec![h1, h2], act, 3) }).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[2]).collect();
            numeric_check(&m, &xs, &ys)?;
        }

        #[test]
        fn relu_gradient_away_from_kinks(
            seed in any::<u64>(),
            xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..4),
        ) {
            let m = init_mlp(&MlpConfig { seed, ..cfg(vec![4, 3], Activation::Relu, 3) }).unwrap();
            for x in &xs {
                let (_, cache) = m.forward(x);
                let near_kink = cache.pre[..2].iter().flatten().any(|z| z.abs() < 1e-3);
                prop_assume!(!near_kink);
            }
            let ys: Vec<f64> = xs.iter().map(|x| x[1]).collect();
            numeric_check(&m, &xs, &ys)?;
        }

        #[test]
        fn forward_is_pure(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 11)) {
            let m = init_mlp(&MlpConfig { seed, ..MlpConfig::default() }).unwrap();
            prop_assert_eq!(m.predict(&x).to_bits(), m.predict(&x).to_bits());
        }
    }
}
