//! Central finite-difference checks for every differentiable primitive.
//!
//! Each primitive `y = f(x, ...)` is reduced to a scalar with a fixed random
//! projection `s = <y, r>` accumulated in f64, so the analytic gradient is the
//! primitive's backward pass with `dy = r`. Agreement is measured norm-wise:
//! `|g - g_fd| / (|g| + |g_fd|)`.

use crayon_core::nn::{
    add_elementwise, concat_channels, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, maxpool2d,
    maxpool2d_backward, mse_loss, mse_loss_backward, relu, relu_backward, slice_channels, ConvSpec, Tape, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const CASES: usize = 5;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < TOLERANCE
    }
}

pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff += (a as f64 - n).powi(2);
        na += (a as f64).powi(2);
        nn += n * n;
    }
    let denom = na.sqrt() + nn.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, so `x +- EPS` never crosses a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.05f32..1.0);
            if rng.gen() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Distinct values spaced 0.05 apart, so pooling windows have no near-ties.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - n as f32 * 0.025).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).unwrap()
}

/// Mean squared error in f64, for scoring graphs that end in an MSE node.
fn mse64(y: &Tensor, t: &Tensor) -> f64 {
    let sum: f64 = y.data().iter().zip(t.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    sum / y.numel() as f64
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central differences of `f` with respect to every element of `x`.
fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - EPS;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * EPS as f64)
        })
        .collect()
}

fn record(out: &mut Vec<GradCheck>, name: String, analytic: &Tensor, numeric: &[f64]) {
    out.push(GradCheck {
        rel_err: rel_err(analytic.data(), numeric),
        name,
    });
}

pub fn check_conv2d(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let k = rng.gen_range(1..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k, rng.gen_range(0..k))
            .with_stride(rng.gen_range(1..=2))
            .with_dilation(rng.gen_range(1..=2));
        let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(5..=7), rng.gen_range(5..=7));
        let x = uniform(&mut rng, &[n, spec.in_channels, h, w]);
        let wt = uniform(&mut rng, &[spec.out_channels, spec.in_channels, k, k]);
        let b = uniform(&mut rng, &[spec.out_channels]);
        let y = conv2d(&x, &wt, &b, &spec).unwrap();
        let r = uniform(&mut rng, y.shape());
        let g = conv2d_backward(&x, &wt, &spec, &r).unwrap();
        let tag = format!("conv2d case {case} x{:?} {spec:?}", x.shape());
        record(&mut out, format!("{tag} input"), &g.input, &numeric_grad(&x, |p| project(&conv2d(p, &wt, &b, &spec).unwrap(), &r)));
        record(&mut out, format!("{tag} weight"), &g.weight, &numeric_grad(&wt, |p| project(&conv2d(&x, p, &b, &spec).unwrap(), &r)));
        record(&mut out, format!("{tag} bias"), &g.bias, &numeric_grad(&b, |p| project(&conv2d(&x, &wt, p, &spec).unwrap(), &r)));
    }
    out
}

pub fn check_conv_transpose2d(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let k = rng.gen_range(1..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k, 0).with_stride(rng.gen_range(1..=2));
        let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(2..=4), rng.gen_range(2..=4));
        let x = uniform(&mut rng, &[n, spec.in_channels, h, w]);
        let wt = uniform(&mut rng, &[spec.in_channels, spec.out_channels, k, k]);
        let b = uniform(&mut rng, &[spec.out_channels]);
        let y = conv_transpose2d(&x, &wt, &b, &spec).unwrap();
        let r = uniform(&mut rng, y.shape());
        let g = conv_transpose2d_backward(&x, &wt, &spec, &r).unwrap();
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| project(&conv_transpose2d(x, wt, b, &spec).unwrap(), &r);
        let tag = format!("conv_transpose2d case {case} x{:?} {spec:?}", x.shape());
        record(&mut out, format!("{tag} input"), &g.input, &numeric_grad(&x, |p| f(p, &wt, &b)));
        record(&mut out, format!("{tag} weight"), &g.weight, &numeric_grad(&wt, |p| f(&x, p, &b)));
        record(&mut out, format!("{tag} bias"), &g.bias, &numeric_grad(&b, |p| f(&x, &wt, p)));
    }
    out
}

fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5)]
}

pub fn check_relu(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let shape = random_shape(&mut rng);
        let x = away_from_zero(&mut rng, &shape);
        let r = uniform(&mut rng, x.shape());
        let g = relu_backward(&x, &r).unwrap();
        record(&mut out, format!("relu case {case} {:?}", x.shape()), &g, &numeric_grad(&x, |p| project(&relu(p), &r)));
    }
    out
}

pub fn check_maxpool2d(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), 2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3)];
        let x = distinct(&mut rng, &shape);
        let y = maxpool2d(&x, 2, 2).unwrap();
        let r = uniform(&mut rng, y.shape());
        let g = maxpool2d_backward(&x, 2, 2, &r).unwrap();
        record(&mut out, format!("maxpool2d case {case} {shape:?}"), &g, &numeric_grad(&x, |p| project(&maxpool2d(p, 2, 2).unwrap(), &r)));
    }
    out
}

pub fn check_add(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let shape = random_shape(&mut rng);
        let (a, b, r) = (uniform(&mut rng, &shape), uniform(&mut rng, &shape), uniform(&mut rng, &shape));
        // d<a+b, r>/da = r for both addends.
        record(&mut out, format!("add case {case} {shape:?} lhs"), &r, &numeric_grad(&a, |p| project(&add_elementwise(p, &b).unwrap(), &r)));
        record(&mut out, format!("add case {case} {shape:?} rhs"), &r, &numeric_grad(&b, |p| project(&add_elementwise(&a, p).unwrap(), &r)));
    }
    out
}

pub fn check_concat_and_slice(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let [n, _, h, w] = random_shape(&mut rng);
        let parts: Vec<Tensor> = (0..rng.gen_range(2..=3))
            .map(|_| {
                let c = rng.gen_range(1..=3);
                uniform(&mut rng, &[n, c, h, w])
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let y = concat_channels(&refs).unwrap();
        // Analytic gradients come from the tape, which splits dy by channel.
        let mut tape = Tape::new();
        let vars: Vec<_> = parts.iter().map(|p| tape.input_ref(p)).collect();
        let cat = tape.concat_channels(&vars).unwrap();
        let target = tape.input(Tensor::zeros(y.shape()));
        let loss = tape.mse(cat, target).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (j, part) in parts.iter().enumerate() {
            let numeric = numeric_grad(part, |p| {
                let mut refs = refs.clone();
                refs[j] = p;
                mse64(&concat_channels(&refs).unwrap(), &Tensor::zeros(y.shape()))
            });
            let analytic = grads.input(vars[j]).unwrap().unwrap();
            record(&mut out, format!("concat case {case} part {j} {:?}", part.shape()), analytic, &numeric);
        }

        let c = y.shape()[1];
        let start = rng.gen_range(0..c);
        let len = rng.gen_range(1..=c - start);
        let sliced = slice_channels(&y, start, len).unwrap();
        let rs = uniform(&mut rng, sliced.shape());
        let mut tape = Tape::new();
        let xv = tape.input_ref(&y);
        let sv = tape.slice_channels(xv, start, len).unwrap();
        let tv = tape.input(rs.clone());
        let loss = tape.mse(sv, tv).unwrap();
        let grads = tape.backward(loss).unwrap();
        let numeric = numeric_grad(&y, |p| mse64(&slice_channels(p, start, len).unwrap(), &rs));
        record(
            &mut out,
            format!("slice case {case} {:?} [{start}, +{len})", y.shape()),
            grads.input(xv).unwrap().unwrap(),
            &numeric,
        );
    }
    out
}

pub fn check_mse(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        // The loss comes back as f32, so shapes stay tiny to keep the
        // difference quotient well above its rounding floor.
        let shape = [1, rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(2..=3)];
        let pred = uniform(&mut rng, &shape).map(|v| 2.0 * v);
        let target = uniform(&mut rng, &shape).map(|v| 2.0 * v);
        let g = mse_loss_backward(&pred, &target, 1.0).unwrap();
        let numeric = numeric_grad(&pred, |p| mse_loss(p, &target).unwrap() as f64);
        record(&mut out, format!("mse case {case} {shape:?}"), &g, &numeric);
    }
    out
}

/// True when no pre-activation sits near the ReLU kink and no 2x2 pooling
/// window of the activations has a near-tie for its maximum.
fn clear_of_kinks(pre: &Tensor) -> bool {
    if pre.data().iter().any(|v| v.abs() < 0.02) {
        return false;
    }
    let [n, c, h, w] = pre.dims4().unwrap();
    let act = relu(pre);
    let d = act.data();
    for plane in 0..n * c {
        for r in (0..h).step_by(2) {
            for col in (0..w).step_by(2) {
                let mut win: Vec<f32> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dr, dc)| d[plane * h * w + (r + dr) * w + col + dc])
                    .collect();
                win.sort_by(|a, b| b.total_cmp(a));
                if win[0] > 0.0 && win[0] - win[1] < 0.02 {
                    return false;
                }
            }
        }
    }
    true
}

/// A small graph through the tape: conv -> relu -> pool -> transposed conv,
/// concatenated with a skip branch, added to itself, sliced, and scored.
pub fn check_tape_composite(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..CASES {
        let (ci, hid) = (rng.gen_range(1..=2), rng.gen_range(2..=3));
        let side = 2 * rng.gen_range(2..=3);
        let c1 = ConvSpec::new(ci, hid, 3, 1);
        let up = ConvSpec::new(hid, hid, 2, 0).with_stride(2);
        let (x, w1, b1) = loop {
            let x = uniform(&mut rng, &[1, ci, side, side]);
            let w1 = uniform(&mut rng, &[hid, ci, 3, 3]);
            let b1 = uniform(&mut rng, &[hid]).map(|v| v + 0.3);
            if clear_of_kinks(&conv2d(&x, &w1, &b1, &c1).unwrap()) {
                break (x, w1, b1);
            }
        };
        let w2 = uniform(&mut rng, &[hid, hid, 2, 2]);
        let b2 = uniform(&mut rng, &[hid]);
        let target = uniform(&mut rng, &[1, hid, side, side]).map(|v| 3.0 * v);

        let eval = |x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| -> f64 {
            let h = relu(&conv2d(x, w1, b1, &c1).unwrap());
            let p = maxpool2d(&h, 2, 2).unwrap();
            let u = conv_transpose2d(&p, w2, b2, &up).unwrap();
            let cat = concat_channels(&[&h, &u]).unwrap();
            let sum = add_elementwise(&cat, &cat).unwrap();
            let s = slice_channels(&sum, hid, hid).unwrap();
            mse64(&s, &target)
        };

        let mut tape = Tape::new();
        let xv = tape.input_ref(&x);
        let (w1v, b1v, w2v, b2v) = (tape.param(0, &w1), tape.param(1, &b1), tape.param(2, &w2), tape.param(3, &b2));
        let h = tape.conv2d(xv, w1v, b1v, c1).unwrap();
        let h = tape.relu(h).unwrap();
        let p = tape.maxpool2d(h, 2, 2).unwrap();
        let u = tape.conv_transpose2d(p, w2v, b2v, up).unwrap();
        let cat = tape.concat_channels(&[h, u]).unwrap();
        let sum = tape.add(cat, cat).unwrap();
        let s = tape.slice_channels(sum, hid, hid).unwrap();
        let t = tape.input_ref(&target);
        let loss = tape.mse(s, t).unwrap();
        let grads = tape.backward(loss).unwrap();

        let tag = format!("tape composite case {case}");
        record(&mut out, format!("{tag} input"), grads.input(xv).unwrap().unwrap(), &numeric_grad(&x, |v| eval(v, &w1, &b1, &w2, &b2)));
        record(&mut out, format!("{tag} w1"), grads.param(0).unwrap(), &numeric_grad(&w1, |v| eval(&x, v, &b1, &w2, &b2)));
        record(&mut out, format!("{tag} b1"), grads.param(1).unwrap(), &numeric_grad(&b1, |v| eval(&x, &w1, v, &w2, &b2)));
        record(&mut out, format!("{tag} w2"), grads.param(2).unwrap(), &numeric_grad(&w2, |v| eval(&x, &w1, &b1, v, &b2)));
        record(&mut out, format!("{tag} b2"), grads.param(3).unwrap(), &numeric_grad(&b2, |v| eval(&x, &w1, &b1, &w2, v)));
    }
    out
}

pub fn all_checks(seed: u64) -> Vec<GradCheck> {
    [
        check_conv2d(seed),
        check_conv_transpose2d(seed + 1),
        check_relu(seed + 2),
        check_maxpool2d(seed + 3),
        check_add(seed + 4),
        check_concat_and_slice(seed + 5),
        check_mse(seed + 6),
        check_tape_composite(seed + 7),
    ]
    .concat()
}
