//! Finite-difference checks of every differentiable op and of the full
//! stock-architecture loss.

use disentangle::autodiff::{
    grad_check, grad_check_coords_with_floor, BatchStats, Graph, Mode, Tensor, Var,
};
use disentangle::nets::{BundleSpec, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const POINTS: u64 = 10;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random tensor whose entries stay clear of the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= 10.0 * H {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check_points(bound: f64, mut make: impl FnMut(&mut ChaCha8Rng) -> f64) {
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = make(&mut rng);
        assert!(err <= bound, "seed {seed}: relative error {err:e} > {bound:e}");
    }
}

#[test]
fn matmul_gradients() {
    check_points(1e-5, |rng| {
        let params = [random(rng, &[3, 4]), random(rng, &[4, 2])];
        let target = random(rng, &[3, 2]);
        grad_check(&params, H, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let t = g.constant(target.clone());
            g.mse(y, t)
        })
        .unwrap()
    });
}

#[test]
fn bias_add_and_scale_gradients() {
    check_points(1e-5, |rng| {
        let params = [random(rng, &[4, 3]), random(rng, &[3]), random(rng, &[4, 3])];
        let target = random(rng, &[4, 3]);
        grad_check(&params, H, |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            let s = g.scale(v[2], -0.7)?;
            let y = g.add(y, s)?;
            let t = g.constant(target.clone());
            g.mse(y, t)
        })
        .unwrap()
    });
}

#[test]
fn relu_gradients() {
    check_points(1e-5, |rng| {
        let params = [away_from_zero(rng, &[5, 4])];
        let target = random(rng, &[5, 4]);
        grad_check(&params, H, |g, v| {
            let y = g.relu(v[0]);
            let t = g.constant(target.clone());
            g.mse(y, t)
        })
        .unwrap()
    });
    // upstream [1, 1] at x = [-1, 2]
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap().with_requires_grad(true));
    let y = g.relu(x);
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
}

fn bn_loss(g: &mut Graph, v: &[Var], target: &Tensor, mode: Mode) -> disentangle::Result<Var> {
    let running = BatchStats {
        mean: vec![0.1; 5],
        var: vec![0.8; 5],
    };
    let (y, _) = g.batchnorm(v[0], v[1], v[2], &running, mode)?;
    let t = g.constant(target.clone());
    g.mse(y, t)
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    for mode in [Mode::Train, Mode::Eval] {
        check_points(1e-4, |rng| {
            let params = [random(rng, &[8, 5]), random(rng, &[5]), random(rng, &[5])];
            let target = random(rng, &[8, 5]);
            grad_check(&params, H, |g, v| bn_loss(g, v, &target, mode)).unwrap()
        });
    }
}

#[test]
fn batchnorm_gradient_random_8x5_within_1e5() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = [random(&mut rng, &[8, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])];
    let target = random(&mut rng, &[8, 5]);
    let err = grad_check(&params, H, |g, v| bn_loss(g, v, &target, Mode::Train)).unwrap();
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn cross_entropy_gradients() {
    check_points(1e-5, |rng| {
        let params = [random(rng, &[4, 3])];
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        grad_check(&params, H, |g, v| g.softmax_cross_entropy(v[0], &labels)).unwrap()
    });
}

#[test]
fn mse_gradients() {
    check_points(1e-6, |rng| {
        let params = [random(rng, &[3, 3]), random(rng, &[3, 3])];
        grad_check(&params, H, |g, v| g.mse(v[0], v[1])).unwrap()
    });
}

#[test]
fn concat_gradients() {
    check_points(1e-5, |rng| {
        let params = [random(rng, &[2, 3]), random(rng, &[2, 4])];
        let target = random(rng, &[2, 7]);
        grad_check(&params, H, |g, v| {
            let c = g.concat(v[0], v[1])?;
            let t = g.constant(target.clone());
            g.mse(c, t)
        })
        .unwrap()
    });
    // backward of sum(concat(a, b)) is all ones
    let mut g = Graph::new();
    let a = g.leaf(Tensor::full(&[2, 3], 0.3).with_requires_grad(true));
    let b = g.leaf(Tensor::full(&[2, 4], -0.1).with_requires_grad(true));
    let c = g.concat(a, b).unwrap();
    let s = g.sum(c).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[1.0; 6]);
    assert_eq!(g.grad(b).unwrap(), &[1.0; 8]);
}

#[test]
fn linear_regression_loss_gradient() {
    check_points(1e-6, |rng| {
        let params = [random(rng, &[2, 2])];
        let x = random(rng, &[5, 2]);
        let y = random(rng, &[5, 2]);
        grad_check(&params, H, |g, v| {
            let xv = g.constant(x.clone());
            let p = g.matmul(xv, v[0])?;
            let t = g.constant(y.clone());
            g.mse(p, t)
        })
        .unwrap()
    });
}

#[test]
fn grad_check_trivial_functions() {
    let p = [Tensor::new(vec![3], vec![0.4, -1.3, 2.0]).unwrap()];
    let quad = grad_check(&p, H, |g, v| {
        let t = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap());
        g.mse(v[0], t)
    })
    .unwrap();
    assert!(quad <= 1e-7, "{quad:e}");

    let constant = grad_check(&p, H, |g, _| Ok(g.constant(Tensor::scalar(3.0)))).unwrap();
    assert_eq!(constant, 0.0);
}

/// Full stock architecture: S classifier loss plus L_rec − λ·L_adv.
#[test]
fn stock_architecture_composite_gradient() {
    let spec = BundleSpec::stocks(100, 20, 50, 6);
    let nets: Vec<Network> = spec
        .iter()
        .enumerate()
        .map(|(i, (_, s))| Network::build(s, 40 + i as u64).unwrap())
        .collect();
    let sizes: Vec<usize> = nets.iter().map(|n| n.params().len()).collect();
    let lambda = 0.5;

    let composite = |x: &Tensor, labels: &[usize], g: &mut Graph, v: &[Var]| {
        let mut chunks = Vec::new();
        let mut off = 0;
        for &n in &sizes {
            chunks.push(&v[off..off + n]);
            off += n;
        }
        let xv = g.constant(x.clone());
        let s = forward_with(g, &nets[0], xv, chunks[0])?;
        let s_logits = forward_with(g, &nets[1], s, chunks[1])?;
        let z = forward_with(g, &nets[2], xv, chunks[2])?;
        let sz = g.concat(s, z)?;
        let rec = forward_with(g, &nets[3], sz, chunks[3])?;
        let adv = forward_with(g, &nets[4], z, chunks[4])?;
        let l_cls = g.softmax_cross_entropy(s_logits, labels)?;
        let l_rec = g.mse(rec, xv)?;
        let l_adv = g.softmax_cross_entropy(adv, labels)?;
        let neg = g.scale(l_adv, -lambda)?;
        let enc_dec = g.add(l_rec, neg)?;
        g.add(enc_dec, l_cls)
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut draw = 1000u64;
    while checked < POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        draw += 1;
        let x = random(&mut rng, &[32, 100]);
        let labels: Vec<usize> = (0..32).map(|i| i % 6).collect();
        // perturb the init so every point differs
        let params: Vec<Tensor> = nets
            .iter()
            .flat_map(|n| n.params().into_iter().cloned())
            .map(|mut t| {
                for v in t.data_mut() {
                    *v += rng.random_range(-0.01..0.01);
                }
                t
            })
            .collect();
        // resample points that sit within 10·h of a ReLU kink
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
        let base = composite(&x, &labels, &mut g, &vars).unwrap();
        // rounding noise of a central difference on this loss
        let floor = 100.0 * f64::EPSILON * g.value(base).item().abs() / H;
        if g.relu_margin().unwrap() < 10.0 * H {
            continue;
        }
        let coords = sample_coords(&params, 12, &mut rng);
        let report = grad_check_coords_with_floor(&params, H, &coords, floor, |g, v| {
            composite(&x, &labels, g, v)
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
        checked += 1;
    }
    assert!(worst <= 1e-4, "composite relative error {worst:e}");
}

/// A few random coordinates from every parameter tensor.
fn sample_coords(params: &[Tensor], per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            let n = p.numel();
            (0..per_tensor.min(n))
                .map(|_| (i, rng.random_range(0..n)))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Forward pass through `net` using externally supplied parameter handles.
fn forward_with(
    g: &mut Graph,
    net: &Network,
    input: Var,
    handles: &[Var],
) -> disentangle::Result<Var> {
    use disentangle::nets::{Activation, Layer};
    let mut h = input;
    let mut it = handles.iter();
    for layer in net.layers() {
        let act = match layer {
            Layer::Dense { activation, .. } => {
                let (w, b) = (*it.next().unwrap(), *it.next().unwrap());
                let wx = g.matmul(h, w)?;
                h = g.add_bias(wx, b)?;
                *activation
            }
            Layer::BatchNorm {
                running, activation, ..
            } => {
                let (ga, be) = (*it.next().unwrap(), *it.next().unwrap());
                h = g.batchnorm(h, ga, be, running, Mode::Train)?.0;
                *activation
            }
        };
        if act == Activation::Relu {
            h = g.relu(h);
        }
    }
    Ok(h)
}

proptest! {
    #[test]
    fn op_output_shapes_follow_input_shapes(
        m in 1usize..6, k in 1usize..6, n in 1usize..6, q in 0usize..4
    ) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[m, k], 0.5));
        let b = g.constant(Tensor::full(&[k, n], -0.5));
        let c = g.matmul(a, b).unwrap();
        prop_assert_eq!(g.value(c).shape(), &[m, n][..]);
        let bias = g.constant(Tensor::zeros(&[n]));
        let c2 = g.add_bias(c, bias).unwrap();
        prop_assert_eq!(g.value(c2).shape(), &[m, n][..]);
        let r = g.relu(c2);
        prop_assert_eq!(g.value(r).shape(), &[m, n][..]);
        let e = g.constant(Tensor::full(&[m, q], 1.0));
        let cat = g.concat(r, e).unwrap();
        prop_assert_eq!(g.value(cat).shape(), &[m, n + q][..]);
        let labels = vec![0usize; m];
        let ce = g.softmax_cross_entropy(cat, &labels).unwrap();
        prop_assert_eq!(g.value(ce).shape(), &[1][..]);
        if m >= 2 {
            let ones = g.constant(Tensor::full(&[n], 1.0));
            let zeros = g.constant(Tensor::zeros(&[n]));
            let stats = BatchStats { mean: vec![0.0; n], var: vec![1.0; n] };
            let (bn, _) = g.batchnorm(r, ones, zeros, &stats, Mode::Train).unwrap();
            prop_assert_eq!(g.value(bn).shape(), &[m, n][..]);
        }
    }

    #[test]
    fn identical_inputs_give_bit_identical_gradients(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&mut rng, &[4, 3]);
        let x = random(&mut rng, &[6, 4]);
        let run = || {
            let mut g = Graph::new();
            let wv = g.leaf(w.clone().with_requires_grad(true));
            let xv = g.constant(x.clone());
            let y = g.matmul(xv, wv).unwrap();
            let l = g.softmax_cross_entropy(y, &[0, 1, 2, 0, 1, 2]).unwrap();
            g.backward(l).unwrap();
            (g.value(l).item().to_bits(), g.grad(wv).unwrap().to_vec())
        };
        prop_assert_eq!(run(), run());
    }
}
