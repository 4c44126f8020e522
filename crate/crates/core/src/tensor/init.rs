use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;

/// Scaled orthogonal matrix `[rows, cols]`: Gram–Schmidt on a Gaussian draw,
/// orthonormal along the shorter side, multiplied by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` orthonormal vectors of length `long`.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
    Tensor::new(vec![rows, cols], data).expect("orthogonal init shape")
}

/// Orthogonal init of a `[C_out,C_in,kH,kW]` kernel, flattened to `[C_out, C_in·kH·kW]`.
pub fn orthogonal_conv<R: Rng + ?Sized>(
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor {
    orthogonal(c_out, c_in * kh * kw, gain, rng)
        .reshape(&[c_out, c_in, kh, kw])
        .expect("conv init shape")
}
