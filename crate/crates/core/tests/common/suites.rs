//! Named gradient checks shared by the per-module tests and the acceptance run.

use pwm_core::dataset::ActionVector;
use pwm_core::mdn::{mdn_nll_tape, LstmModel, LstmModelVars, MdnConfig};
use pwm_core::numerics::{lstm_cell, ConvSpec, ConvTransposeSpec, LstmVars, Tape, Tensor, Var};
use pwm_core::render::Frame;
use pwm_core::vae::{frames_to_batch, VaeConfig, VaeModel, VaeVars};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_directional, check_directional_step, check_elementwise, random_tensor};

pub type Checks = Vec<(String, f64)>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values bounded away from zero so kinks (relu, clamp) are never straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = random_tensor(shape, 0.1, 1.5, &mut rng(seed));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = -*v;
        }
    }
    t
}

fn push(out: &mut Checks, name: impl Into<String>, err: f64) {
    out.push((name.into(), err));
}

pub fn unary() -> Checks {
    let mut out = Checks::new();
    let x = away_from_zero(&[3, 4], 1);
    push(&mut out, "relu", check_elementwise(&[x.clone()], |t, v| t.relu(v[0]), 11));
    push(&mut out, "sigmoid", check_elementwise(&[x.clone()], |t, v| t.sigmoid(v[0]), 12));
    push(&mut out, "tanh", check_elementwise(&[x.clone()], |t, v| t.tanh(v[0]), 13));
    push(&mut out, "exp", check_elementwise(&[x.clone()], |t, v| t.exp(v[0]), 14));
    push(&mut out, "scale", check_elementwise(&[x.clone()], |t, v| t.scale(v[0], -1.7), 15));
    push(&mut out, "add_scalar", check_elementwise(&[x.clone()], |t, v| t.add_scalar(v[0], 0.4), 16));
    push(&mut out, "clamp", check_elementwise(&[x], |t, v| t.clamp(v[0], -1.0, 1.0), 17));
    let pos = random_tensor(&[3, 4], 0.5, 2.0, &mut rng(2));
    push(&mut out, "log", check_elementwise(&[pos], |t, v| t.log(v[0]), 18));
    out
}

pub fn binary() -> Checks {
    let mut out = Checks::new();
    let a = random_tensor(&[3, 5], -1.0, 1.0, &mut rng(3));
    let b = random_tensor(&[3, 5], -1.0, 1.0, &mut rng(4));
    let ab = [a.clone(), b];
    push(&mut out, "add", check_elementwise(&ab, |t, v| t.add(v[0], v[1]).unwrap(), 21));
    push(&mut out, "sub", check_elementwise(&ab, |t, v| t.sub(v[0], v[1]).unwrap(), 22));
    push(&mut out, "mul", check_elementwise(&ab, |t, v| t.mul(v[0], v[1]).unwrap(), 23));
    push(&mut out, "mul(x, x)", check_elementwise(&[a.clone()], |t, v| t.mul(v[0], v[0]).unwrap(), 24));
    let w = random_tensor(&[5, 4], -1.0, 1.0, &mut rng(5));
    let bias = random_tensor(&[4], -1.0, 1.0, &mut rng(6));
    push(&mut out, "matmul", check_elementwise(&[a.clone(), w.clone()], |t, v| t.matmul(v[0], v[1]).unwrap(), 25));
    push(&mut out, "add_bias", check_elementwise(&[a.clone(), random_tensor(&[5], -1.0, 1.0, &mut rng(7))], |t, v| t.add_bias(v[0], v[1]).unwrap(), 26));
    push(&mut out, "dense", check_elementwise(&[a, w, bias], |t, v| t.dense(v[0], v[1], v[2]).unwrap(), 27));
    out
}

pub fn reductions() -> Checks {
    let mut out = Checks::new();
    let x = random_tensor(&[2, 3, 4], -1.5, 1.5, &mut rng(8));
    for axis in 0..3 {
        let s = axis as u64;
        push(&mut out, format!("softmax axis {axis}"), check_elementwise(&[x.clone()], move |t, v| t.softmax(v[0], axis).unwrap(), 30 + s));
        push(&mut out, format!("log_softmax axis {axis}"), check_elementwise(&[x.clone()], move |t, v| t.log_softmax(v[0], axis).unwrap(), 33 + s));
        push(&mut out, format!("logsumexp axis {axis}"), check_elementwise(&[x.clone()], move |t, v| t.logsumexp(v[0], axis).unwrap(), 36 + s));
        push(&mut out, format!("sum_axis {axis}"), check_elementwise(&[x.clone()], move |t, v| t.sum_axis(v[0], axis).unwrap(), 39 + s));
    }
    push(&mut out, "reduce_sum", check_elementwise(&[x.clone()], |t, v| t.reduce_sum(v[0]), 42));
    push(&mut out, "reshape", check_elementwise(&[x.clone()], |t, v| t.reshape(v[0], &[6, 4]).unwrap(), 43));
    push(&mut out, "slice", check_elementwise(&[x], |t, v| t.slice(v[0], 2, 1, 2).unwrap(), 44));
    out
}

pub fn convolutions() -> Checks {
    let mut out = Checks::new();
    let x = random_tensor(&[2, 3, 5, 4], -1.0, 1.0, &mut rng(9));
    let w = random_tensor(&[4, 3, 3, 3], -0.5, 0.5, &mut rng(10));
    let b = random_tensor(&[4], -0.5, 0.5, &mut rng(11));
    for (stride, padding) in [(1, 0), (2, 1), (1, 1)] {
        let spec = ConvSpec { stride, padding };
        let err = check_elementwise(&[x.clone(), w.clone(), b.clone()], move |t, v| t.conv2d(v[0], v[1], v[2], spec).unwrap(), 50 + stride as u64);
        push(&mut out, format!("conv2d s{stride} p{padding}"), err);
    }
    let xt = random_tensor(&[2, 3, 3, 2], -1.0, 1.0, &mut rng(12));
    let wt = random_tensor(&[3, 2, 4, 4], -0.5, 0.5, &mut rng(13));
    let bt = random_tensor(&[2], -0.5, 0.5, &mut rng(14));
    for output_padding in [(0, 0), (1, 0), (1, 1)] {
        let spec = ConvTransposeSpec { stride: 2, padding: 1, output_padding };
        let err = check_elementwise(&[xt.clone(), wt.clone(), bt.clone()], move |t, v| t.conv2d_transpose(v[0], v[1], v[2], spec).unwrap(), 60);
        push(&mut out, format!("conv2d_transpose op{output_padding:?}"), err);
    }
    out
}

pub fn lstm() -> Checks {
    let (batch, input, hidden) = (2, 3, 4);
    let inputs = [
        random_tensor(&[batch, input], -1.0, 1.0, &mut rng(15)),
        random_tensor(&[batch, hidden], -0.8, 0.8, &mut rng(16)),
        random_tensor(&[batch, hidden], -1.0, 1.0, &mut rng(17)),
        random_tensor(&[input, 4 * hidden], -0.6, 0.6, &mut rng(18)),
        random_tensor(&[hidden, 4 * hidden], -0.6, 0.6, &mut rng(19)),
        random_tensor(&[4 * hidden], -0.3, 0.3, &mut rng(20)),
    ];
    let build = |select: usize| {
        move |t: &mut Tape, v: &[Var]| {
            let w = LstmVars { wx: v[3], wh: v[4], b: v[5] };
            let (h, c) = lstm_cell(t, v[0], v[1], v[2], w).unwrap();
            if select == 0 {
                h
            } else {
                c
            }
        }
    };
    vec![("lstm_cell h'".into(), check_elementwise(&inputs, build(0), 70)), ("lstm_cell c'".into(), check_elementwise(&inputs, build(1), 71))]
}

pub fn primitives() -> Checks {
    [unary(), binary(), reductions(), convolutions(), lstm()].concat()
}

/// Every parameter redrawn uniformly so biases are non-zero and no ReLU input
/// sits exactly on its kink.
fn jitter(params: &mut [Tensor], bound: f32, seed: u64) {
    let mut r = rng(seed);
    for t in params {
        for v in t.data_mut() {
            *v = r.gen_range(-bound..bound);
        }
    }
}

/// Directional checks of the full VAE loss on a toy model. The loss is an f32
/// sum, so a single 4x4 frame keeps round-off in the central difference below
/// tolerance; a 3e-3 step balances it against curvature.
pub fn vae_total_loss() -> Checks {
    let cfg = VaeConfig { height: 4, width: 4, channels: 3, latent: 2, conv_channels: vec![2, 3], kernel: 3, stride: 2, padding: 1 };
    let mut r = rng(2);
    let frame = Frame { height: 4, width: 4, labels: (0..16).map(|_| r.gen_range(0..3)).collect() };
    let x = frames_to_batch(&[&frame], 3).unwrap();
    let eps = random_tensor(&[1, 2], -1.0, 1.0, &mut rng(3));
    let mut out = Checks::new();
    for seed in 1..4 {
        let mut model = VaeModel::new(cfg.clone(), &mut rng(seed)).unwrap();
        jitter(model.params.tensors_mut(), 0.4, seed + 100);
        for dir in 0..2 {
            let err = check_directional_step(
                model.params.tensors(),
                |tape, vars| {
                    let v = VaeVars::from_vars(vars.to_vec());
                    let xv = tape.constant(x.clone());
                    model.forward_loss(tape, &v, xv, Some(&eps), 0.7).unwrap().loss
                },
                10 * seed + dir,
                3e-3,
            );
            push(&mut out, format!("vae_total_loss model {seed} direction {dir}"), err);
        }
    }
    out
}

/// Two recurrent steps with the NLL of both targets, so gradients flow through h and c.
pub fn mdn_nll() -> Checks {
    let cfg = MdnConfig { latent: 3, hidden: 4, components: 2 };
    let mut model = LstmModel::new(cfg.clone(), &mut rng(1)).unwrap();
    jitter(model.params.tensors_mut(), 0.5, 51);
    let (b, l) = (2, cfg.latent);
    let mut r = rng(2);
    let zs: Vec<Vec<f32>> = (0..3).map(|_| (0..b * l).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let x_of = |z: &[f32], t: usize| {
        let a = ActionVector { moved: (t % 2) as f32, body_yaw: 0.3 * (t as f32).sin(), head_yaw: -0.2 };
        let mut x = Vec::new();
        for row in z.chunks(l) {
            x.extend_from_slice(row);
            x.extend_from_slice(&a.to_array());
        }
        Tensor::new(&[b, l + 3], x).unwrap()
    };
    let err = check_directional(
        model.params.tensors(),
        |tape, vars| {
            let v = LstmModelVars::from_vars(vars.to_vec()).unwrap();
            let mut h = tape.constant(Tensor::zeros(&[b, cfg.hidden]));
            let mut c = tape.constant(Tensor::zeros(&[b, cfg.hidden]));
            let mut total = None;
            for t in 0..2 {
                let x = tape.constant(x_of(&zs[t], t));
                let s = model.step_tape(tape, &v, &zs[t], x, h, c).unwrap();
                let nll = mdn_nll_tape(tape, &s, &zs[t + 1], cfg.components).unwrap();
                total = Some(match total {
                    None => nll,
                    Some(acc) => tape.add(acc, nll).unwrap(),
                });
                (h, c) = (s.h, s.c);
            }
            total.unwrap()
        },
        3,
    );
    vec![("mdn_nll through two lstm steps".into(), err)]
}
