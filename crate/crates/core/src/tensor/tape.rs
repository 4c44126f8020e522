use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom, DenseGeom};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ChannelBias {
        input: usize,
        bias: usize,
        channels: usize,
        spatial: usize,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: usize,
        geom: DenseGeom,
    },
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    Scale(usize, f64),
    Clamp(usize, f64, f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    TransposeLast2 {
        input: usize,
        rows: usize,
        cols: usize,
    },
    Softmax {
        input: usize,
        cols: usize,
    },
    LogSoftmax {
        input: usize,
        cols: usize,
    },
    Pick {
        input: usize,
        cols: usize,
        indices: Vec<usize>,
    },
    Entropy {
        input: usize,
        cols: usize,
    },
    WeightedSum {
        weights: usize,
        ann: usize,
        locs: usize,
        dim: usize,
    },
    ScaleRows {
        weights: usize,
        ann: usize,
        dim: usize,
        factor: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations on [`Var`]s so that [`Tape::backward`] can replay them in
/// reverse. Node ids are assigned in creation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, zero-filled when unreachable.
    pub fn wrt(&self, var: Var<'_>) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.lens[var.id]])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn node(&self, id: usize) -> Ref<'_, Node> {
        Ref::map(self.nodes.borrow(), |n| &n[id])
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let lens: Vec<usize> = nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }
}

/// Adds `delta(slot)` into the gradient slot of `id` when that node wants one.
fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernel,
            geom,
            cols,
        } => {
            let kdata = nodes[*kernel].value.data();
            let mut dk = nodes[*kernel]
                .requires_grad
                .then(|| vec![0.0; kdata.len()]);
            let mut dx = nodes[*input]
                .requires_grad
                .then(|| vec![0.0; nodes[*input].value.len()]);
            kernels::conv2d_backward(geom, g, kdata, cols, dk.as_deref_mut(), dx.as_deref_mut());
            if let Some(dk) = dk {
                acc(nodes, grads, *kernel, |s| add_into(s, &dk));
            }
            if let Some(dx) = dx {
                acc(nodes, grads, *input, |s| add_into(s, &dx));
            }
        }
        Op::ChannelBias {
            input,
            bias,
            channels,
            spatial,
        } => {
            acc(nodes, grads, *input, |s| add_into(s, g));
            acc(nodes, grads, *bias, |s| {
                for (i, chunk) in g.chunks_exact(*spatial).enumerate() {
                    s[i % channels] += chunk.iter().sum::<f64>();
                }
            });
        }
        Op::Dense {
            input,
            weight,
            bias,
            geom,
        } => {
            let x = nodes[*input].value.data();
            let w = nodes[*weight].value.data();
            let mut dx = nodes[*input].requires_grad.then(|| vec![0.0; x.len()]);
            let mut dw = nodes[*weight].requires_grad.then(|| vec![0.0; w.len()]);
            let mut db = nodes[*bias].requires_grad.then(|| vec![0.0; geom.outputs]);
            kernels::dense_backward(
                geom,
                g,
                x,
                w,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (id, d) in [(*input, dx), (*weight, dw), (*bias, db)] {
                if let Some(d) = d {
                    acc(nodes, grads, id, |s| add_into(s, &d));
                }
            }
        }
        Op::Relu(a) => acc(nodes, grads, *a, |s| {
            for ((si, &gi), &o) in s.iter_mut().zip(g).zip(out) {
                if o > 0.0 {
                    *si += gi;
                }
            }
        }),
        Op::Tanh(a) => acc(nodes, grads, *a, |s| {
            for ((si, &gi), &o) in s.iter_mut().zip(g).zip(out) {
                *si += gi * (1.0 - o * o);
            }
        }),
        Op::Exp(a) => acc(nodes, grads, *a, |s| {
            for ((si, &gi), &o) in s.iter_mut().zip(g).zip(out) {
                *si += gi * o;
            }
        }),
        Op::Square(a) => {
            let x = nodes[*a].value.data();
            acc(nodes, grads, *a, |s| {
                for ((si, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    *si += 2.0 * xi * gi;
                }
            })
        }
        Op::Scale(a, c) => acc(nodes, grads, *a, |s| {
            for (si, &gi) in s.iter_mut().zip(g) {
                *si += c * gi;
            }
        }),
        Op::Clamp(a, lo, hi) => {
            let x = nodes[*a].value.data();
            acc(nodes, grads, *a, |s| {
                for ((si, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    if xi >= *lo && xi <= *hi {
                        *si += gi;
                    }
                }
            })
        }
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |s| add_into(s, g));
            acc(nodes, grads, *b, |s| add_into(s, g));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |s| add_into(s, g));
            acc(nodes, grads, *b, |s| {
                for (si, &gi) in s.iter_mut().zip(g) {
                    *si -= gi;
                }
            });
        }
        Op::Mul(a, b) => {
            let (xa, xb) = (nodes[*a].value.data(), nodes[*b].value.data());
            acc(nodes, grads, *a, |s| {
                for ((si, &gi), &v) in s.iter_mut().zip(g).zip(xb) {
                    *si += gi * v;
                }
            });
            acc(nodes, grads, *b, |s| {
                for ((si, &gi), &v) in s.iter_mut().zip(g).zip(xa) {
                    *si += gi * v;
                }
            });
        }
        Op::Minimum(a, b) => {
            let (xa, xb) = (nodes[*a].value.data(), nodes[*b].value.data());
            acc(nodes, grads, *a, |s| {
                for (i, si) in s.iter_mut().enumerate() {
                    if xa[i] <= xb[i] {
                        *si += g[i];
                    }
                }
            });
            acc(nodes, grads, *b, |s| {
                for (i, si) in s.iter_mut().enumerate() {
                    if xa[i] > xb[i] {
                        *si += g[i];
                    }
                }
            });
        }
        Op::Sum(a) => acc(nodes, grads, *a, |s| s.iter_mut().for_each(|v| *v += g[0])),
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            acc(nodes, grads, *a, |s| s.iter_mut().for_each(|v| *v += g[0] / n))
        }
        Op::Reshape(a) => acc(nodes, grads, *a, |s| add_into(s, g)),
        Op::TransposeLast2 { input, rows, cols } => acc(nodes, grads, *input, |s| {
            let block = rows * cols;
            for (sb, gb) in s.chunks_exact_mut(block).zip(g.chunks_exact(block)) {
                for r in 0..*rows {
                    for c in 0..*cols {
                        sb[r * cols + c] += gb[c * rows + r];
                    }
                }
            }
        }),
        Op::Softmax { input, cols } => acc(nodes, grads, *input, |s| {
            for ((sr, gr), pr) in s
                .chunks_exact_mut(*cols)
                .zip(g.chunks_exact(*cols))
                .zip(out.chunks_exact(*cols))
            {
                let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for ((si, &gi), &pi) in sr.iter_mut().zip(gr).zip(pr) {
                    *si += pi * (gi - dot);
                }
            }
        }),
        Op::LogSoftmax { input, cols } => acc(nodes, grads, *input, |s| {
            for ((sr, gr), lr) in s
                .chunks_exact_mut(*cols)
                .zip(g.chunks_exact(*cols))
                .zip(out.chunks_exact(*cols))
            {
                let gsum: f64 = gr.iter().sum();
                for ((si, &gi), &li) in sr.iter_mut().zip(gr).zip(lr) {
                    *si += gi - li.exp() * gsum;
                }
            }
        }),
        Op::Pick {
            input,
            cols,
            indices,
        } => acc(nodes, grads, *input, |s| {
            for (r, &k) in indices.iter().enumerate() {
                s[r * cols + k] += g[r];
            }
        }),
        Op::Entropy { input, cols } => {
            let x = nodes[*input].value.data();
            let logp = kernels::log_softmax_rows(x, *cols);
            acc(nodes, grads, *input, |s| {
                for (r, (sr, lr)) in s
                    .chunks_exact_mut(*cols)
                    .zip(logp.chunks_exact(*cols))
                    .enumerate()
                {
                    let h = out[r];
                    for (si, &li) in sr.iter_mut().zip(lr) {
                        *si -= g[r] * li.exp() * (li + h);
                    }
                }
            })
        }
        Op::WeightedSum {
            weights,
            ann,
            locs,
            dim,
        } => {
            let w = nodes[*weights].value.data();
            let a = nodes[*ann].value.data();
            acc(nodes, grads, *weights, |s| {
                for (i, si) in s.iter_mut().enumerate() {
                    let b = i / locs;
                    let row = &a[i * dim..(i + 1) * dim];
                    let gb = &g[b * dim..(b + 1) * dim];
                    *si += row.iter().zip(gb).map(|(x, y)| x * y).sum::<f64>();
                }
            });
            acc(nodes, grads, *ann, |s| {
                for (i, &wi) in w.iter().enumerate() {
                    let b = i / locs;
                    let gb = &g[b * dim..(b + 1) * dim];
                    for (si, &gi) in s[i * dim..(i + 1) * dim].iter_mut().zip(gb) {
                        *si += wi * gi;
                    }
                }
            });
        }
        Op::ScaleRows {
            weights,
            ann,
            dim,
            factor,
        } => {
            let w = nodes[*weights].value.data();
            let a = nodes[*ann].value.data();
            acc(nodes, grads, *weights, |s| {
                for (i, si) in s.iter_mut().enumerate() {
                    let row = &a[i * dim..(i + 1) * dim];
                    let gr = &g[i * dim..(i + 1) * dim];
                    *si += factor * row.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                }
            });
            acc(nodes, grads, *ann, |s| {
                for (i, &wi) in w.iter().enumerate() {
                    let gr = &g[i * dim..(i + 1) * dim];
                    for (si, &gi) in s[i * dim..(i + 1) * dim].iter_mut().zip(gr) {
                        *si += factor * wi * gi;
                    }
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Splits a shape into (rows, last-axis length).
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap();
    (shape.iter().product::<usize>() / cols, cols)
}

/// `[B,L]` weights against `[B,L,D]` annotations (or unbatched `[L]`, `[L,D]`).
fn attention_dims(op: &'static str, w: &[usize], a: &[usize]) -> Result<(usize, usize)> {
    match (w, a) {
        ([l], [la, d]) if l == la => Ok((*l, *d)),
        ([b, l], [ba, la, d]) if b == ba && l == la => Ok((*l, *d)),
        _ => Err(Error::dim(
            op,
            format!("weights {w:?} do not match annotations {a:?}"),
        )),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node(self.id).value.shape().to_vec()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.node(self.id).value.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.node(self.id).value.data().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.node(self.id).value.data()[0]
    }

    fn check_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let n = self.tape.node(self.id);
            let t = &n.value;
            Tensor {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&x| f(x)).collect(),
                grad: None,
            }
        };
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.check_tape(&other)?;
        let value = {
            let a = self.tape.node(self.id);
            let b = self.tape.node(other.id);
            same_shape(name, &a.value, &b.value)?;
            Tensor {
                shape: a.value.shape().to_vec(),
                data: a
                    .value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
                grad: None,
            }
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn conv2d(&self, kernel: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        self.check_tape(&kernel)?;
        let (value, geom, cols) = {
            let x = self.tape.node(self.id);
            let k = self.tape.node(kernel.id);
            let geom = ConvGeom::new(x.value.shape(), k.value.shape(), stride, padding)?;
            let (out, cols) = kernels::conv2d_forward(&geom, x.value.data(), k.value.data(), true);
            let shape = geom.output_shape(x.value.rank() == 4);
            (Tensor::new(shape, out)?, geom, cols)
        };
        let rg = self.tape.requires(&[self.id, kernel.id]);
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Adds a per-channel bias to a `[C,H,W]` or `[N,C,H,W]` map.
    pub fn add_channel_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&bias)?;
        let (value, channels, spatial) = {
            let x = self.tape.node(self.id);
            let b = self.tape.node(bias.id);
            let shape = x.value.shape();
            let (c, spatial) = match *shape {
                [c, h, w] | [_, c, h, w] => (c, h * w),
                _ => return Err(Error::dim("channel_bias", format!("bad input {shape:?}"))),
            };
            if b.value.shape() != [c] {
                return Err(Error::dim(
                    "channel_bias",
                    format!("bias {:?} vs {c} channels", b.value.shape()),
                ));
            }
            let mut data = x.value.data().to_vec();
            for (i, chunk) in data.chunks_exact_mut(spatial).enumerate() {
                let bv = b.value.data()[i % c];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
            (Tensor::new(shape.to_vec(), data)?, c, spatial)
        };
        let rg = self.tape.requires(&[self.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::ChannelBias {
                input: self.id,
                bias: bias.id,
                channels,
                spatial,
            },
            rg,
        ))
    }

    pub fn dense(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&weight)?;
        self.check_tape(&bias)?;
        let (value, geom) = {
            let x = self.tape.node(self.id);
            let w = self.tape.node(weight.id);
            let b = self.tape.node(bias.id);
            let geom = DenseGeom::new(x.value.shape(), w.value.shape(), b.value.shape())?;
            let out = kernels::dense_forward(&geom, x.value.data(), w.value.data(), b.value.data());
            let mut shape = x.value.shape().to_vec();
            *shape.last_mut().unwrap() = geom.outputs;
            (Tensor::new(shape, out)?, geom)
        };
        let rg = self.tape.requires(&[self.id, weight.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::Dense {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
                geom,
            },
            rg,
        ))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    /// Clamp to `[lo, hi]`; the gradient passes where the input lies inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "minimum", Op::Minimum(self.id, other.id), f64::min)
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.tape.node(self.id).value.data().iter().sum();
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t> {
        let m = {
            let n = self.tape.node(self.id);
            n.value.data().iter().sum::<f64>() / n.value.len() as f64
        };
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), rg)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.node(self.id).value.reshape(shape)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last2(&self) -> Result<Var<'t>> {
        let (value, rows, cols) = {
            let n = self.tape.node(self.id);
            let shape = n.value.shape();
            let (lead, rows, cols) = match *shape {
                [r, c] => (vec![], r, c),
                [b, r, c] => (vec![b], r, c),
                _ => return Err(Error::dim("transpose", format!("rank-2/3 only, got {shape:?}"))),
            };
            let mut data = vec![0.0; n.value.len()];
            for (db, sb) in data
                .chunks_exact_mut(rows * cols)
                .zip(n.value.data().chunks_exact(rows * cols))
            {
                for r in 0..rows {
                    for c in 0..cols {
                        db[c * rows + r] = sb[r * cols + c];
                    }
                }
            }
            let mut out_shape = lead;
            out_shape.extend([cols, rows]);
            (Tensor::new(out_shape, data)?, rows, cols)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::TransposeLast2 {
                input: self.id,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let (value, cols) = {
            let n = self.tape.node(self.id);
            kernels::check_finite("softmax", n.value.data())?;
            let (_, cols) = rows_cols(n.value.shape());
            let out = kernels::softmax_rows(n.value.data(), cols);
            (Tensor::new(n.value.shape().to_vec(), out)?, cols)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Softmax { input: self.id, cols }, rg))
    }

    pub fn log_softmax(&self) -> Result<Var<'t>> {
        let (value, cols) = {
            let n = self.tape.node(self.id);
            kernels::check_finite("log_softmax", n.value.data())?;
            let (_, cols) = rows_cols(n.value.shape());
            let out = kernels::log_softmax_rows(n.value.data(), cols);
            (Tensor::new(n.value.shape().to_vec(), out)?, cols)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::LogSoftmax { input: self.id, cols }, rg))
    }

    /// `out[r] = self[r, indices[r]]` over the rows of the last axis.
    pub fn pick(&self, indices: &[usize]) -> Result<Var<'t>> {
        let (value, cols) = {
            let n = self.tape.node(self.id);
            let (rows, cols) = rows_cols(n.value.shape());
            if indices.len() != rows {
                return Err(Error::dim(
                    "pick",
                    format!("{} indices for {rows} rows", indices.len()),
                ));
            }
            let mut out = Vec::with_capacity(rows);
            for (r, &k) in indices.iter().enumerate() {
                if k >= cols {
                    return Err(Error::Index {
                        op: "pick",
                        index: k,
                        len: cols,
                    });
                }
                out.push(n.value.data()[r * cols + k]);
            }
            (Tensor::new(vec![rows], out)?, cols)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::Pick {
                input: self.id,
                cols,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise categorical log-probability of `actions` under logits `self`.
    pub fn categorical_log_prob(&self, actions: &[usize]) -> Result<Var<'t>> {
        self.log_softmax()?.pick(actions)
    }

    /// Row-wise entropy of the categorical distribution with logits `self`.
    pub fn entropy(&self) -> Result<Var<'t>> {
        let (value, cols) = {
            let n = self.tape.node(self.id);
            kernels::check_finite("entropy", n.value.data())?;
            let (rows, cols) = rows_cols(n.value.shape());
            let logp = kernels::log_softmax_rows(n.value.data(), cols);
            let h = logp
                .chunks_exact(cols)
                .map(|r| -r.iter().map(|&l| l.exp() * l).sum::<f64>())
                .collect();
            (Tensor::new(vec![rows], h)?, cols)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Entropy { input: self.id, cols }, rg))
    }

    /// `Σᵢ self[i]·ann[i,:]` per batch row: `[B,L]`×`[B,L,D]` → `[B,D]`.
    pub fn weighted_sum(&self, ann: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&ann)?;
        let (value, locs, dim) = {
            let w = self.tape.node(self.id);
            let a = self.tape.node(ann.id);
            let (locs, dim) = attention_dims("weighted_sum", w.value.shape(), a.value.shape())?;
            let batch = w.value.len() / locs;
            let mut out = vec![0.0; batch * dim];
            for (i, &wi) in w.value.data().iter().enumerate() {
                let b = i / locs;
                let row = &a.value.data()[i * dim..(i + 1) * dim];
                for (o, &x) in out[b * dim..(b + 1) * dim].iter_mut().zip(row) {
                    *o += wi * x;
                }
            }
            let mut shape = w.value.shape().to_vec();
            *shape.last_mut().unwrap() = dim;
            (Tensor::new(shape, out)?, locs, dim)
        };
        let rg = self.tape.requires(&[self.id, ann.id]);
        Ok(self.tape.push(
            value,
            Op::WeightedSum {
                weights: self.id,
                ann: ann.id,
                locs,
                dim,
            },
            rg,
        ))
    }

    /// `factor·self[i]·ann[i,:]` per location, keeping the annotation shape.
    pub fn scale_rows(&self, ann: Var<'t>, factor: f64) -> Result<Var<'t>> {
        self.check_tape(&ann)?;
        let (value, dim) = {
            let w = self.tape.node(self.id);
            let a = self.tape.node(ann.id);
            let (_, dim) = attention_dims("scale_rows", w.value.shape(), a.value.shape())?;
            let mut out = a.value.data().to_vec();
            for (i, &wi) in w.value.data().iter().enumerate() {
                out[i * dim..(i + 1) * dim]
                    .iter_mut()
                    .for_each(|v| *v *= factor * wi);
            }
            (Tensor::new(a.value.shape().to_vec(), out)?, dim)
        };
        let rg = self.tape.requires(&[self.id, ann.id]);
        Ok(self.tape.push(
            value,
            Op::ScaleRows {
                weights: self.id,
                ann: ann.id,
                dim,
                factor,
            },
            rg,
        ))
    }
}
