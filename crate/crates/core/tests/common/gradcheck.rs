//! Central finite-difference oracle for tape gradients.
//!
//! Kept in test code so it never shares a path with the backward pass it checks.

use pwm_core::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// Relative error with a unit floor on the denominator: a true relative error
/// for gradients of magnitude ≥ 1 and an absolute error below that.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub fn random_tensor(shape: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Worst element-wise error between the tape gradient and central differences
/// of `Σ r ⊙ f(inputs)` for a fixed random cotangent `r`. The weighted sum is
/// accumulated in f64 so outputs untouched by a perturbation cancel exactly.
pub fn check_elementwise(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let cot = random_tensor(&out_shape, -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let r = tape.constant(cot.clone());
    let weighted = tape.mul(out, r).unwrap();
    let loss = tape.reduce_sum(weighted);
    let grads = tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data().iter().zip(cot.data()).map(|(&o, &c)| f64::from(o) * f64::from(c)).sum()
    };

    let mut worst = 0.0f64;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let x = inputs[i].data()[j];
            plus[i].data_mut()[j] = x + STEP;
            minus[i].data_mut()[j] = x - STEP;
            let span = f64::from(x + STEP) - f64::from(x - STEP);
            let numeric = (eval(&plus) - eval(&minus)) / span;
            worst = worst.max(rel_err(f64::from(analytic.data()[j]), numeric));
        }
    }
    worst
}

/// Directional check of a scalar-valued function: compares `⟨∇f, d⟩` against
/// `(f(x + h·d) − f(x − h·d)) / 2h` for one random unit direction per input tensor.
/// Returns the worst error over inputs.
pub fn check_directional(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    seed: u64,
) -> f64 {
    check_directional_step(inputs, build, seed, STEP)
}

/// [`check_directional`] with an explicit step, for composite losses whose f32
/// value is large enough that round-off swamps a 1e-3 difference.
pub fn check_directional_step(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    seed: u64,
    step: f32,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        f64::from(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    for (i, &v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
        let dir: Vec<f64> = raw.iter().map(|d| d / norm).collect();
        let analytic: f64 = grads.get(v).data().iter().zip(&dir).map(|(&g, &d)| f64::from(g) * d).sum();
        let shifted = |sign: f64| {
            let mut moved = inputs.to_vec();
            for (x, d) in moved[i].data_mut().iter_mut().zip(&dir) {
                *x = (f64::from(*x) + sign * f64::from(step) * d) as f32;
            }
            moved
        };
        let numeric = (eval(&shifted(1.0)) - eval(&shifted(-1.0))) / (2.0 * f64::from(step));
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}
