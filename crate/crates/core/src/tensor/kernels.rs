//! Raw forward/backward kernels shared by the eager functions and the tape.

use crate::error::{Error, Result};

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    /// Row-major `rows × cols`.
    pub fn row_major(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self { rs: 1, cs: cols }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `c = a·b + beta·c` for an `m×k` by `k×n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    assert!(a.len() >= la.span(m, k), "gemm: lhs too short");
    assert!(b.len() >= lb.span(k, n), "gemm: rhs too short");
    assert!(c.len() >= lc.span(m, n), "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

pub(crate) fn check_finite(op: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric {
            op,
            detail: format!("non-finite input {} at index {i}", xs[i]),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, c_in, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("input must be [C_in,H,W] or [N,C_in,H,W], got {input:?}"),
                ))
            }
        };
        let [c_out, kc, kh, kw] = *kernel else {
            return Err(Error::dim(
                "conv2d",
                format!("kernel must be [C_out,C_in,kH,kW], got {kernel:?}"),
            ));
        };
        if kc != c_in {
            return Err(Error::dim(
                "conv2d",
                format!("axis C_in: input has {c_in}, kernel has {kc}"),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be >= 1"));
        }
        if kh > h + 2 * pad {
            return Err(Error::dim(
                "conv2d",
                format!("axis H: kernel {kh} exceeds padded height {}", h + 2 * pad),
            ));
        }
        if kw > w + 2 * pad {
            return Err(Error::dim(
                "conv2d",
                format!("axis W: kernel {kw} exceeds padded width {}", w + 2 * pad),
            ));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    pub fn output_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.c_out, self.oh, self.ow]
        } else {
            vec![self.c_out, self.oh, self.ow]
        }
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and, when `keep_cols`, the per-sample im2col buffers.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    x: &[f64],
    kernel: &[f64],
    keep_cols: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (k, p) = (g.patch(), g.positions());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![0.0; g.batch * out_len];
    let mut cols = vec![0.0; if keep_cols { g.batch * k * p } else { k * p }];
    for s in 0..g.batch {
        let col = if keep_cols {
            &mut cols[s * k * p..(s + 1) * k * p]
        } else {
            &mut cols[..]
        };
        g.im2col(&x[s * in_len..(s + 1) * in_len], col);
        gemm(
            g.c_out,
            k,
            p,
            kernel,
            Layout::row_major(k),
            col,
            Layout::row_major(p),
            0.0,
            &mut out[s * out_len..(s + 1) * out_len],
            Layout::row_major(p),
        );
    }
    if !keep_cols {
        cols = Vec::new();
    }
    (out, cols)
}

/// Accumulates kernel gradient into `dkernel` and, if given, input gradient into `dx`.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    dout: &[f64],
    kernel: &[f64],
    cols: &[f64],
    dkernel: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let (k, p) = (g.patch(), g.positions());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    if let Some(dk) = dkernel {
        for s in 0..g.batch {
            gemm(
                g.c_out,
                p,
                k,
                &dout[s * out_len..(s + 1) * out_len],
                Layout::row_major(p),
                &cols[s * k * p..(s + 1) * k * p],
                Layout::transposed(p),
                1.0,
                dk,
                Layout::row_major(k),
            );
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; k * p];
        for s in 0..g.batch {
            gemm(
                k,
                g.c_out,
                p,
                kernel,
                Layout::transposed(k),
                &dout[s * out_len..(s + 1) * out_len],
                Layout::row_major(p),
                0.0,
                &mut dcol,
                Layout::row_major(p),
            );
            g.col2im(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseGeom {
    pub rows: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<Self> {
        let (rows, n) = match *input {
            [n] => (1, n),
            [r, n] => (r, n),
            _ => {
                return Err(Error::dim(
                    "dense",
                    format!("input must be [N] or [rows,N], got {input:?}"),
                ))
            }
        };
        let [m, wn] = *weight else {
            return Err(Error::dim("dense", format!("weight must be [M,N], got {weight:?}")));
        };
        if wn != n {
            return Err(Error::dim(
                "dense",
                format!("axis N: input has {n}, weight has {wn}"),
            ));
        }
        if bias != [m] {
            return Err(Error::dim(
                "dense",
                format!("bias must be [{m}], got {bias:?}"),
            ));
        }
        Ok(Self {
            rows,
            inputs: n,
            outputs: m,
        })
    }
}

pub(crate) fn dense_forward(g: &DenseGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.rows * g.outputs);
    for _ in 0..g.rows {
        out.extend_from_slice(b);
    }
    gemm(
        g.rows,
        g.inputs,
        g.outputs,
        x,
        Layout::row_major(g.inputs),
        w,
        Layout::transposed(g.inputs),
        1.0,
        &mut out,
        Layout::row_major(g.outputs),
    );
    out
}

pub(crate) fn dense_backward(
    g: &DenseGeom,
    dout: &[f64],
    x: &[f64],
    w: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        gemm(
            g.rows,
            g.outputs,
            g.inputs,
            dout,
            Layout::row_major(g.outputs),
            w,
            Layout::row_major(g.inputs),
            1.0,
            dx,
            Layout::row_major(g.inputs),
        );
    }
    if let Some(dw) = dw {
        gemm(
            g.outputs,
            g.rows,
            g.inputs,
            dout,
            Layout::transposed(g.outputs),
            x,
            Layout::row_major(g.inputs),
            1.0,
            dw,
            Layout::row_major(g.inputs),
        );
    }
    if let Some(db) = db {
        for row in dout.chunks_exact(g.outputs) {
            for (d, r) in db.iter_mut().zip(row) {
                *d += r;
            }
        }
    }
}

pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= sum;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = xi - lse;
        }
    }
    out
}
