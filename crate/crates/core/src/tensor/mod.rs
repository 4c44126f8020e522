//! Dense f64 tensors with a reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain row-major array. Differentiable computation happens on a
//! [`Tape`]. Operations on [`Var`] handles are recorded there, and
//! [`Tape::backward`] replays the record in reverse.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod init;
pub(crate) mod kernels;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::{orthogonal, orthogonal_conv};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("zero-sized axis in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Rank-1 tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim(
                "set_grad",
                format!("grad len {} vs data len {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// 2-D cross-correlation of `input` `[C_in,H,W]` (or batched `[N,C_in,H,W]`) with
/// `kernel` `[C_out,C_in,kH,kW]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let geom = kernels::ConvGeom::new(input.shape(), kernel.shape(), stride, padding)?;
    let (out, _) = kernels::conv2d_forward(&geom, input.data(), kernel.data(), false);
    Tensor::new(geom.output_shape(input.rank() == 4), out)
}

/// `out[m] = Σₙ weight[m,n]·input[n] + bias[m]`; a rank-2 input is treated as rows.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = kernels::DenseGeom::new(input.shape(), weight.shape(), bias.shape())?;
    let out = kernels::dense_forward(&g, input.data(), weight.data(), bias.data());
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = g.outputs;
    Tensor::new(shape, out)
}

/// Softmax over the last axis.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    kernels::check_finite("softmax", input.data())?;
    let cols = *input.shape().last().unwrap();
    Tensor::new(input.shape().to_vec(), kernels::softmax_rows(input.data(), cols))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&x| x.max(0.0)).collect(),
        grad: None,
    }
}

pub fn tanh(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|x| x.tanh()).collect(),
        grad: None,
    }
}

/// `log p[k]` under `softmax(logits)`.
pub fn categorical_log_prob(logits: &[f64], k: usize) -> Result<f64> {
    if k >= logits.len() {
        return Err(Error::Index {
            op: "categorical_log_prob",
            index: k,
            len: logits.len(),
        });
    }
    kernels::check_finite("categorical_log_prob", logits)?;
    Ok(kernels::log_softmax_rows(logits, logits.len())[k])
}

/// `−Σ p log p` of `softmax(logits)`.
pub fn entropy(logits: &[f64]) -> Result<f64> {
    kernels::check_finite("entropy", logits)?;
    let logp = kernels::log_softmax_rows(logits, logits.len());
    Ok(-logp.iter().map(|&lp| lp.exp() * lp).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn conv_scalar_and_ones() {
        let x = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap().data(), &[10.0]);

        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_reports_offending_axes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, 1, 0).unwrap_err().to_string();
        assert!(err.contains("C_in"), "{err}");
        let k = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(conv2d(&x, &k, 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), 0, 0).is_err());
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::vector(&[1.0, 2.0, 3.0]);
        let y = dense(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let b = Tensor::vector(&[0.5, -1.0]);
        let y = dense(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(y.data(), b.data());
        assert!(dense(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&Tensor::vector(&[0.0; 4])).unwrap();
        assert!(y.data().iter().all(|&p| p == 0.25));

        let logits: Vec<f64> = (1..=4).map(|k| (k as f64).ln()).collect();
        let y = softmax(&Tensor::vector(&logits)).unwrap();
        for (p, want) in y.data().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((p - want).abs() < 1e-15);
        }

        let y = softmax(&Tensor::vector(&[1000.0, 0.0])).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-300_f64.max(f64::EPSILON));
        assert!(y.data()[1] < 1e-300);

        let err = softmax(&Tensor::vector(&[0.0, f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn elementwise_and_categorical() {
        assert_eq!(relu(&Tensor::vector(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!((entropy(&[0.0; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((categorical_log_prob(&[0.0, 0.0], 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            categorical_log_prob(&[0.0, 0.0], 2),
            Err(Error::Index { index: 2, .. })
        ));
        assert!((tanh(&Tensor::scalar(0.5)).data()[0] - 0.5f64.tanh()).abs() < 1e-16);
    }
}
