//! Finite-difference audit of every differentiable op and of the full
//! stock-architecture objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, grad_check_coords_with_floor, BatchStats, Graph, Mode, Tensor, Var};
use crate::error::Result;
use crate::nets::{Activation, BundleSpec, Layer, Network};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpAudit {
    pub name: String,
    pub points: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub h: f64,
    pub points: u64,
    pub seed: u64,
    /// Bound for ops that involve batch-norm (and the composite).
    pub tol_batchnorm: f64,
    pub tol_other: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            points: 10,
            seed: 0,
            tol_batchnorm: 1e-4,
            tol_other: 1e-5,
        }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= margin {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn mse_to(g: &mut Graph, y: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone());
    g.mse(y, t)
}

type Check = fn(&mut ChaCha8Rng, f64) -> Result<f64>;

fn op_checks() -> Vec<(&'static str, bool, Check)> {
    vec![
        ("matmul", false, |rng, h| {
            let params = [random(rng, &[3, 4]), random(rng, &[4, 2])];
            let target = random(rng, &[3, 2]);
            grad_check(&params, h, |g, v| {
                let y = g.matmul(v[0], v[1])?;
                mse_to(g, y, &target)
            })
        }),
        ("add_bias+scale+add", false, |rng, h| {
            let params = [random(rng, &[4, 3]), random(rng, &[3]), random(rng, &[4, 3])];
            let target = random(rng, &[4, 3]);
            grad_check(&params, h, |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                let s = g.scale(v[2], -0.7)?;
                let y = g.add(y, s)?;
                mse_to(g, y, &target)
            })
        }),
        ("relu", false, |rng, h| {
            let params = [away_from_zero(rng, &[5, 4], 10.0 * h)];
            let target = random(rng, &[5, 4]);
            grad_check(&params, h, |g, v| {
                let y = g.relu(v[0]);
                mse_to(g, y, &target)
            })
        }),
        ("batchnorm/train", true, |rng, h| batchnorm_check(rng, h, Mode::Train)),
        ("batchnorm/eval", true, |rng, h| batchnorm_check(rng, h, Mode::Eval)),
        ("softmax_cross_entropy", false, |rng, h| {
            let params = [random(rng, &[4, 3])];
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            grad_check(&params, h, |g, v| g.softmax_cross_entropy(v[0], &labels))
        }),
        ("mse", false, |rng, h| {
            let params = [random(rng, &[3, 3]), random(rng, &[3, 3])];
            grad_check(&params, h, |g, v| g.mse(v[0], v[1]))
        }),
        ("concat", false, |rng, h| {
            let params = [random(rng, &[2, 3]), random(rng, &[2, 4])];
            let target = random(rng, &[2, 7]);
            grad_check(&params, h, |g, v| {
                let c = g.concat(v[0], v[1])?;
                mse_to(g, c, &target)
            })
        }),
        ("sum", false, |rng, h| {
            let params = [random(rng, &[3, 2]), random(rng, &[2, 4])];
            grad_check(&params, h, |g, v| {
                let y = g.matmul(v[0], v[1])?;
                g.sum(y)
            })
        }),
    ]
}

fn batchnorm_check(rng: &mut ChaCha8Rng, h: f64, mode: Mode) -> Result<f64> {
    let params = [random(rng, &[8, 5]), random(rng, &[5]), random(rng, &[5])];
    let target = random(rng, &[8, 5]);
    let running = BatchStats {
        mean: vec![0.1; 5],
        var: vec![0.8; 5],
    };
    grad_check(&params, h, |g, v| {
        let (y, _) = g.batchnorm(v[0], v[1], v[2], &running, mode)?;
        mse_to(g, y, &target)
    })
}

/// Forward pass through `net` with externally supplied parameter handles.
fn forward_with(g: &mut Graph, net: &Network, input: Var, handles: &[Var]) -> Result<Var> {
    let mut h = input;
    let mut it = handles.iter().copied();
    let mut next = || it.next().expect("one handle per parameter");
    for layer in net.layers() {
        let act = match layer {
            Layer::Dense { activation, .. } => {
                let (w, b) = (next(), next());
                let wx = g.matmul(h, w)?;
                h = g.add_bias(wx, b)?;
                *activation
            }
            Layer::BatchNorm {
                running, activation, ..
            } => {
                let (gamma, beta) = (next(), next());
                h = g.batchnorm(h, gamma, beta, running, Mode::Train)?.0;
                *activation
            }
        };
        if act == Activation::Relu {
            h = g.relu(h);
        }
    }
    Ok(h)
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

/// S-classifier loss plus `L_rec − λ·L_adv` through all five stock networks
/// (100 inputs, S 20, Z 50, 6 classes, batch 32). Points within `10·h` of a
/// ReLU kink are redrawn; coordinates whose disagreement is below the
/// central-difference rounding level `100·ε·|L|/h` count as exact.
fn composite_check(cfg: &AuditConfig) -> Result<f64> {
    let h = cfg.h;
    let spec = BundleSpec::stocks(100, 20, 50, 6);
    let nets: Vec<Network> = spec
        .iter()
        .enumerate()
        .map(|(i, (_, s))| Network::build(s, cfg.seed.wrapping_add(40 + i as u64)))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = nets.iter().map(|n| n.params().len()).collect();
    let lambda = 0.5;

    let composite = |x: &Tensor, labels: &[usize], g: &mut Graph, v: &[Var]| -> Result<Var> {
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
    let mut draw = cfg.seed.wrapping_mul(7919).wrapping_add(1000);
    while checked < cfg.points {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        draw = draw.wrapping_add(1);
        let x = random(&mut rng, &[32, 100]);
        let labels: Vec<usize> = (0..32).map(|i| i % 6).collect();
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
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
        let base = composite(&x, &labels, &mut g, &vars)?;
        let floor = 100.0 * f64::EPSILON * g.value(base).item().abs() / h;
        if g.relu_margin().unwrap_or(f64::INFINITY) < 10.0 * h {
            continue;
        }
        let coords = sample_coords(&params, 12, &mut rng);
        let report = grad_check_coords_with_floor(&params, h, &coords, floor, |g, v| {
            composite(&x, &labels, g, v)
        })?;
        worst = worst.max(report.max_rel_error);
        checked += 1;
    }
    Ok(worst)
}

/// Runs every op check at `points` random points and the composite check.
pub fn gradient_audit(cfg: &AuditConfig) -> Result<Vec<OpAudit>> {
    let mut out = Vec::new();
    for (name, uses_bn, check) in op_checks() {
        let mut worst: f64 = 0.0;
        for p in 0..cfg.points {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(p));
            worst = worst.max(check(&mut rng, cfg.h)?);
        }
        let tolerance = if uses_bn { cfg.tol_batchnorm } else { cfg.tol_other };
        out.push(OpAudit {
            name: name.into(),
            points: cfg.points,
            max_rel_error: worst,
            tolerance,
            passed: worst <= tolerance,
        });
    }
    let worst = composite_check(cfg)?;
    out.push(OpAudit {
        name: "stock-composite".into(),
        points: cfg.points,
        max_rel_error: worst,
        tolerance: cfg.tol_batchnorm,
        passed: worst <= cfg.tol_batchnorm,
    });
    Ok(out)
}
