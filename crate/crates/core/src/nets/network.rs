use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::Optimizer;
use super::spec::{Activation, LayerSpec, NetworkSpec};
use crate::autodiff::{BatchStats, Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};

/// Running-statistics momentum: `running ← m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running: BatchStats,
        activation: Activation,
    },
}

/// Handles produced by running a network on a graph.
#[derive(Debug)]
pub struct Trace {
    pub output: Var,
    /// One handle per trainable tensor, in [`Network::params`] order.
    pub params: Vec<Var>,
    /// Batch statistics for each batch-norm layer (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Allocates and initialises parameters: He-uniform dense weights with
    /// bound `sqrt(6 / fan_in)`, zero biases, batch-norm `gamma = 1`, `beta = 0`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = spec.widths();
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (fan_in, out) = (widths[i], widths[i + 1]);
                match *l {
                    LayerSpec::Dense { activation, .. } => {
                        dense_layer(&mut rng, fan_in, out, activation)
                    }
                    LayerSpec::SoftmaxHead { .. } => {
                        dense_layer(&mut rng, fan_in, out, Activation::None)
                    }
                    LayerSpec::BatchNorm { activation } => Layer::BatchNorm {
                        gamma: Tensor::full(&[out], 1.0),
                        beta: Tensor::zeros(&[out]),
                        running: BatchStats {
                            mean: vec![0.0; out],
                            var: vec![1.0; out],
                        },
                        activation,
                    },
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.spec.input
    }

    pub fn output_width(&self) -> usize {
        self.spec.output()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } => [weight, bias],
                Layer::BatchNorm { gamma, beta, .. } => [gamma, beta],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } => [weight, bias],
                Layer::BatchNorm { gamma, beta, .. } => [gamma, beta],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Records the forward pass of `x` on `g`.
    ///
    /// With `trainable` false the parameters enter the graph as constants, so
    /// no gradient flows into them (gradients still flow into `x`).
    pub fn forward_on(&self, g: &mut Graph, x: Var, mode: Mode, trainable: bool) -> Result<Trace> {
        let width = g.value(x).cols();
        if g.value(x).shape().len() != 2 || width != self.spec.input {
            return Err(Error::shape(
                "network input",
                g.value(x).shape(),
                &[g.value(x).rows(), self.spec.input],
            ));
        }
        let register = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.leaf(t.clone().with_requires_grad(true))
            } else {
                g.constant(t.clone())
            }
        };
        let mut h = x;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut batch_stats = Vec::new();
        for layer in &self.layers {
            let activation = match layer {
                Layer::Dense {
                    weight,
                    bias,
                    activation,
                } => {
                    let w = register(g, weight);
                    let b = register(g, bias);
                    params.extend([w, b]);
                    let wx = g.matmul(h, w)?;
                    h = g.add_bias(wx, b)?;
                    *activation
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running,
                    activation,
                } => {
                    let ga = register(g, gamma);
                    let be = register(g, beta);
                    params.extend([ga, be]);
                    let (y, stats) = g.batchnorm(h, ga, be, running, mode)?;
                    batch_stats.extend(stats);
                    h = y;
                    *activation
                }
            };
            if activation == Activation::Relu {
                h = g.relu(h);
            }
        }
        Ok(Trace {
            output: h,
            params,
            batch_stats,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    /// Variance uses the unbiased estimate over `batch` rows.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], batch: usize) {
        let correction = if batch > 1 {
            batch as f64 / (batch as f64 - 1.0)
        } else {
            1.0
        };
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let Layer::BatchNorm { running, .. } = layer {
                let Some(s) = it.next() else { return };
                for (r, b) in running.mean.iter_mut().zip(&s.mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
                for (r, b) in running.var.iter_mut().zip(&s.var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b * correction;
                }
            }
        }
    }

    /// Stand-alone forward pass. Train mode updates batch-norm running
    /// statistics; eval mode leaves the network untouched.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let trace = self.forward_on(&mut g, xv, mode, false)?;
        if mode == Mode::Train {
            self.update_running_stats(&trace.batch_stats, x.rows());
        }
        Ok(g.value(trace.output).clone())
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let trace = self.forward_on(&mut g, xv, Mode::Eval, false)?;
        Ok(g.value(trace.output).clone())
    }

    /// Applies one optimizer update from gradients in [`Network::params`] order.
    pub fn apply_gradients(&mut self, opt: &mut Optimizer, grads: &[Vec<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        opt.step(&mut params, grads)
    }

    /// Reads the gradients of a trace back out of a graph after `backward`.
    pub fn collect_gradients(&self, g: &Graph, trace: &Trace) -> Vec<Vec<f64>> {
        trace
            .params
            .iter()
            .zip(self.params())
            .map(|(&v, p)| {
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.numel()])
            })
            .collect()
    }
}

fn dense_layer(rng: &mut ChaCha8Rng, fan_in: usize, out: usize, activation: Activation) -> Layer {
    let bound = (6.0 / fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Layer::Dense {
        weight: Tensor::raw(vec![fan_in, out], w),
        bias: Tensor::zeros(&[out]),
        activation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::spec::{classifier, BundleSpec};

    #[test]
    fn build_is_deterministic_and_counts_match() {
        let spec = BundleSpec::stocks(100, 20, 50, 7);
        for (_, s) in spec.iter() {
            let a = Network::build(s, 3).unwrap();
            let b = Network::build(s, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.param_count(), s.param_count());
        }
        let a = Network::build(&spec.enc_z, 3).unwrap();
        let c = Network::build(&spec.enc_z, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_layer_spec_rejected() {
        assert!(Network::build(&NetworkSpec::new(3, vec![]), 0).is_err());
    }

    #[test]
    fn forward_shapes_and_modes() {
        let spec = BundleSpec::stocks(100, 20, 50, 7);
        let mut enc_z = Network::build(&spec.enc_z, 1).unwrap();
        let x = Tensor::full(&[32, 100], 0.01);
        let z = enc_z.forward(&x, Mode::Eval).unwrap();
        assert_eq!(z.shape(), &[32, 50]);

        let zero = Tensor::zeros(&[4, 100]);
        assert!(enc_z.predict(&zero).unwrap().is_finite());

        let bad = Tensor::zeros(&[4, 99]);
        assert!(enc_z.predict(&bad).is_err());
    }

    #[test]
    fn eval_does_not_mutate_train_updates_only_running_stats() {
        let spec = classifier(6, &[5, 5], 3);
        let mut net = Network::build(&spec, 11).unwrap();
        let x = Tensor::from_rows(&[
            vec![0.1, 0.2, -0.3, 1.0, 0.0, 2.0],
            vec![1.1, -0.2, 0.3, 0.0, 0.5, -2.0],
            vec![-0.4, 0.9, 0.3, 0.7, 0.2, 0.1],
        ])
        .unwrap();
        let before = net.clone();
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);

        net.forward(&x, Mode::Train).unwrap();
        assert_ne!(net, before);
        let unchanged = net
            .params()
            .iter()
            .zip(before.params())
            .all(|(p, q)| p.data() == q.data());
        assert!(unchanged);
    }
}
