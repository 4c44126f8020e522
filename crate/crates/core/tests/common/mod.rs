#![allow(dead_code)]

use attnracer::tensor::gradcheck::{check_gradients, GradCheck};
use attnracer::tensor::{Tensor, Var};
use attnracer::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// Entries with magnitude in [0.1, 1] and random sign, away from the relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any output into a scalar.
fn project<'t>(out: Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    let c = out.tape().constant(r.clone().reshape(&out.shape())?);
    out.mul(c).map(|v| v.sum())
}

fn projector(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    uniform(rng, &[n], -1.0, 1.0)
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// One randomized check of op family `family`.
fn case(family: usize, rng: &mut ChaCha8Rng) -> Result<(&'static str, GradCheck)> {
    let rows = dims(rng, 1, 3);
    let cols = dims(rng, 2, 5);
    let n = rows * cols;
    let r = projector(rng, 4096);
    let rp = |len: usize| Tensor::vector(&r.data()[..len]);
    Ok(match family {
        0 => {
            let batch = rng.random_bool(0.5);
            let (ci, co) = (dims(rng, 1, 3), dims(rng, 1, 3));
            let (k, stride, pad) = (dims(rng, 1, 3), dims(rng, 1, 2), dims(rng, 0, 2));
            let (h, w) = (dims(rng, k.max(3), 6), dims(rng, k.max(3), 6));
            let x = if batch {
                uniform(rng, &[2, ci, h, w], -1.0, 1.0)
            } else {
                uniform(rng, &[ci, h, w], -1.0, 1.0)
            };
            let kern = uniform(rng, &[co, ci, k, k], -1.0, 1.0);
            let b = uniform(rng, &[co], -1.0, 1.0);
            let g = check_gradients(&[x, kern, b], FD_STEP, |_, v| {
                let y = v[0].conv2d(v[1], stride, pad)?.add_channel_bias(v[2])?;
                let len = y.shape().iter().product();
                project(y, &rp(len))
            })?;
            ("conv2d+bias", g)
        }
        1 => {
            let (i, o) = (dims(rng, 1, 6), dims(rng, 1, 5));
            let x = uniform(rng, &[rows, i], -1.0, 1.0);
            let w = uniform(rng, &[o, i], -1.0, 1.0);
            let b = uniform(rng, &[o], -1.0, 1.0);
            let g = check_gradients(&[x, w, b], FD_STEP, |_, v| project(v[0].dense(v[1], v[2])?, &rp(rows * o)))?;
            ("dense", g)
        }
        2 => {
            let x = away_from_zero(rng, &[rows, cols]);
            ("relu", check_gradients(&[x], FD_STEP, |_, v| project(v[0].relu(), &rp(n)))?)
        }
        3 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            ("tanh", check_gradients(&[x], FD_STEP, |_, v| project(v[0].tanh(), &rp(n)))?)
        }
        4 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            ("exp", check_gradients(&[x], FD_STEP, |_, v| project(v[0].exp(), &rp(n)))?)
        }
        5 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            let c = rng.random_range(-3.0..3.0);
            ("square+scale", check_gradients(&[x], FD_STEP, |_, v| project(v[0].square().scale(c), &rp(n)))?)
        }
        6 => {
            // both sides of the clamp, never within 0.05 of a bound
            let x = away_from_zero(rng, &[rows, cols]);
            let mut x = x;
            x.data_mut().iter_mut().for_each(|v| {
                if (v.abs() - 0.5).abs() < 0.05 {
                    *v *= 1.3;
                }
            });
            ("clamp", check_gradients(&[x], FD_STEP, |_, v| project(v[0].clamp(-0.5, 0.5), &rp(n)))?)
        }
        7 => {
            let a = uniform(rng, &[rows, cols], -1.0, 1.0);
            let b = uniform(rng, &[rows, cols], -1.0, 1.0);
            let c = uniform(rng, &[rows, cols], -1.0, 1.0);
            let g = check_gradients(&[a, b, c], FD_STEP, |_, v| project(v[0].add(v[1])?.mul(v[2])?.sub(v[1])?, &rp(n)))?;
            ("add/sub/mul", g)
        }
        8 => {
            let a = uniform(rng, &[rows, cols], -1.0, 1.0);
            let mut b = uniform(rng, &[rows, cols], -1.0, 1.0);
            for (bv, av) in b.data_mut().iter_mut().zip(a.data()) {
                if (*bv - av).abs() < 0.1 {
                    *bv = av + 0.3;
                }
            }
            ("minimum", check_gradients(&[a, b], FD_STEP, |_, v| project(v[0].minimum(v[1])?, &rp(n)))?)
        }
        9 => {
            let x = uniform(rng, &[2, rows, cols], -1.0, 1.0);
            let g = check_gradients(&[x], FD_STEP, |t, v| {
                let y = v[0].transpose_last2()?.reshape(&[2 * n])?;
                let m = project(y, &rp(2 * n))?;
                let c = t.constant(Tensor::vector(&[0.7]));
                m.add(v[0].mean().reshape(&[1])?.mul(c)?)
            })?;
            ("transpose/reshape/mean", g)
        }
        10 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            ("softmax", check_gradients(&[x], FD_STEP, |_, v| project(v[0].softmax()?, &rp(n)))?)
        }
        11 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            let picks: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
            let g = check_gradients(&[x], FD_STEP, |_, v| {
                let a = project(v[0].log_softmax()?, &rp(n))?;
                a.add(v[0].categorical_log_prob(&picks)?.sum())
            })?;
            ("log_softmax/pick", g)
        }
        12 => {
            let x = uniform(rng, &[rows, cols], -2.0, 2.0);
            ("entropy", check_gradients(&[x], FD_STEP, |_, v| project(v[0].entropy()?, &rp(rows)))?)
        }
        13 => {
            let (l, d) = (dims(rng, 2, 6), dims(rng, 1, 4));
            let w = uniform(rng, &[rows, l], -1.0, 1.0);
            let a = uniform(rng, &[rows, l, d], -1.0, 1.0);
            let g = check_gradients(&[w, a], FD_STEP, |_, v| project(v[0].softmax()?.weighted_sum(v[1])?, &rp(rows * d)))?;
            ("softmax weighted_sum", g)
        }
        14 => {
            let (l, d) = (dims(rng, 2, 6), dims(rng, 1, 4));
            let w = uniform(rng, &[rows, l], -1.0, 1.0);
            let a = uniform(rng, &[rows, l, d], -1.0, 1.0);
            let f = rng.random_range(0.5..3.0);
            let g = check_gradients(&[w, a], FD_STEP, |_, v| project(v[0].scale_rows(v[1], f)?, &rp(rows * l * d)))?;
            ("scale_rows", g)
        }
        _ => unreachable!(),
    })
}

pub const FAMILIES: usize = 15;

/// A small two-conv network with attention-style pooling and a loss over
/// its logits, checked end to end.
pub fn network_check(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 2, 7, 7], 0.0, 1.0);
    let k1 = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b1 = uniform(&mut rng, &[3], -0.1, 0.1);
    let k2 = uniform(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b2 = uniform(&mut rng, &[4], -0.1, 0.1);
    let ws = uniform(&mut rng, &[1, 4], -0.5, 0.5);
    let bs = uniform(&mut rng, &[1], -0.1, 0.1);
    let wp = uniform(&mut rng, &[3, 4], -0.5, 0.5);
    let bp = uniform(&mut rng, &[3], -0.1, 0.1);
    let inputs = [x, k1, b1, k2, b2, ws, bs, wp, bp];
    check_gradients(&inputs, FD_STEP, |_, v| {
        // tanh instead of relu keeps the whole network smooth
        let h = v[0].conv2d(v[1], 2, 1)?.add_channel_bias(v[2])?.tanh();
        let h = h.conv2d(v[3], 1, 0)?.add_channel_bias(v[4])?.tanh();
        let [b, c, hh, ww] = h.shape()[..] else { unreachable!() };
        let ann = h.reshape(&[b, c, hh * ww])?.transpose_last2()?;
        let scores = ann.reshape(&[b * hh * ww, c])?.dense(v[5], v[6])?.reshape(&[b, hh * ww])?;
        let z = scores.softmax()?.weighted_sum(ann)?;
        let logits = z.dense(v[7], v[8])?;
        let lp = logits.categorical_log_prob(&[0, 2])?.mean();
        lp.sub(logits.entropy()?.mean().scale(0.1))
    })
}

pub struct SuiteResult {
    pub checks: Vec<(&'static str, GradCheck)>,
}

impl SuiteResult {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.1.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst_family(&self) -> &'static str {
        self.checks
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .map(|c| c.0)
            .unwrap_or("")
    }
}

/// `rounds` randomized checks of every op family plus one network check.
pub fn gradient_suite(seed: u64, rounds: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for _ in 0..rounds {
        for f in 0..FAMILIES {
            checks.push(case(f, &mut rng)?);
        }
    }
    checks.push(("two-conv network", network_check(seed)?));
    Ok(SuiteResult { checks })
}
