//! Random gradient-check cases for every tape primitive and the full
//! test-vector loss. Shared with the acceptance suite.

use btv_core::btv::{loss_on, sample_on};
use btv_core::gradcheck::{gradcheck, project};
use btv_core::nn::{Architecture, Model};
use btv_core::rng::{rng_from, ChaCha8Rng};
use btv_core::{Tape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-4;

pub const CASES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "exp",
    "relu",
    "reshape",
    "sum",
    "mean",
    "population_std",
    "conv2d",
    "channel_bias",
    "avgpool2x2",
    "cross_entropy",
    "loss_mlp",
    "loss_cnn",
];

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Values at least 0.1 away from the relu kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        *v += 0.1f64.copysign(*v);
    }
    t
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn full_loss(model: &Model, rng: &mut ChaCha8Rng) -> f64 {
    let shape = model.input_shape().to_vec();
    let mu = randn(rng, &shape);
    let logvar = randn(rng, &shape);
    let eps = randn(rng, &shape);
    let alpha = rng.random_range(0.01..1.0);
    gradcheck(&[mu, logvar], STEP, |t, v| {
        let e = t.leaf(eps.clone(), false);
        let s = sample_on(t, v[0], v[1], e)?;
        let logits = model.forward_on(t, s, false)?.logits;
        loss_on(t, logits, v[0], v[1], alpha)
    })
    .unwrap()
    .max_rel_error
}

/// Maximum norm-wise relative gradient error of case `name` with seed `case`.
pub fn run_case(name: &str, case: u64) -> f64 {
    let mut rng = rng_from(0xC0FFEE ^ case.wrapping_mul(0x9E37_79B9));
    let (m, n) = (dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
    let proj = case + 17;
    let check = |inputs: &[Tensor], build: &dyn Fn(&mut Tape<'_>, &[btv_core::Var]) -> btv_core::Result<btv_core::Var>| {
        gradcheck(inputs, STEP, |t, v| {
            let y = build(t, v)?;
            project(t, y, proj)
        })
        .unwrap()
        .max_rel_error
    };
    match name {
        "matmul" => {
            let k = dims(&mut rng, 1, 5);
            let a = randn(&mut rng, &[m, k]);
            let b = randn(&mut rng, &[k, n]);
            check(&[a, b], &|t, v| t.matmul(v[0], v[1]))
        }
        "add" | "sub" | "mul" => {
            let a = randn(&mut rng, &[m, n]);
            let b = randn(&mut rng, &[m, n]);
            let op = name.to_string();
            check(&[a, b], &move |t, v| match op.as_str() {
                "add" => t.add(v[0], v[1]),
                "sub" => t.sub(v[0], v[1]),
                _ => t.mul(v[0], v[1]),
            })
        }
        "scale" => {
            let c: f64 = rng.sample(StandardNormal);
            check(&[randn(&mut rng, &[m, n])], &move |t, v| Ok(t.scale(v[0], c)))
        }
        "add_scalar" => {
            let c: f64 = rng.sample(StandardNormal);
            check(&[randn(&mut rng, &[m, n])], &move |t, v| Ok(t.add_scalar(v[0], c)))
        }
        "exp" => check(&[randn(&mut rng, &[m, n])], &|t, v| Ok(t.exp(v[0]))),
        "relu" => check(&[off_kink(&mut rng, &[m, n])], &|t, v| Ok(t.relu(v[0]))),
        "reshape" => check(&[randn(&mut rng, &[m, n])], &move |t, v| t.reshape(v[0], &[n, m])),
        "sum" => check(&[randn(&mut rng, &[m, n])], &|t, v| Ok(t.sum(v[0]))),
        "mean" => check(&[randn(&mut rng, &[m, n])], &|t, v| Ok(t.mean(v[0]))),
        "population_std" => {
            let x = randn(&mut rng, &[m + 1, n + 1]);
            check(&[x], &|t, v| t.population_std(v[0]))
        }
        "conv2d" => {
            let (c, o, k) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 1, 3));
            let (stride, pad) = (dims(&mut rng, 1, 2), dims(&mut rng, 0, 1));
            let (h, w) = (k + dims(&mut rng, 0, 4), k + dims(&mut rng, 0, 4));
            let x = randn(&mut rng, &[c, h, w]);
            let kern = randn(&mut rng, &[o, c, k, k]);
            check(&[x, kern], &move |t, v| t.conv2d(v[0], v[1], stride, pad))
        }
        "channel_bias" => {
            let x = randn(&mut rng, &[m, n, 3]);
            let b = randn(&mut rng, &[m]);
            check(&[x, b], &|t, v| t.channel_bias(v[0], v[1]))
        }
        "avgpool2x2" => {
            let x = randn(&mut rng, &[m, 2 * n, 2 * n + 1]);
            check(&[x], &|t, v| t.avgpool2x2(v[0]))
        }
        "cross_entropy" => {
            let logits = randn(&mut rng, &[m + 1]);
            let label = rng.random_range(0..=m);
            check(&[logits], &move |t, v| t.cross_entropy(v[0], label))
        }
        "loss_mlp" => {
            let model = Architecture::Mlp { hidden: vec![6] }
                .build("g", &[2, 3, 3], 5, case)
                .unwrap();
            full_loss(&model, &mut rng)
        }
        "loss_cnn" => {
            let model = Architecture::Cnn {
                channels: [2, 3],
                hidden: 5,
            }
            .build("g", &[2, 4, 4], 4, case)
            .unwrap();
            full_loss(&model, &mut rng)
        }
        other => panic!("unknown gradient case {other}"),
    }
}
