//! Eager (tape-free) attention math on a single frame. Scores come from a
//! per-location MLP; the weighted image error lives here too.
//!
//! Reductions over locations sum their terms in sorted order, so permuting
//! the locations permutes the weights bit-for-bit and leaves the context
//! unchanged bit-for-bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `L` annotation vectors of dimension `D`, row-major over the `(H', W')`
/// grid of the final feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    /// `[L, D]`.
    pub vectors: Tensor,
    /// `(D, H', W')` of the feature map the vectors came from.
    pub source_shape: (usize, usize, usize),
}

impl AnnotationSet {
    /// Reshapes a `[D, H', W']` feature map into `L = H'·W'` vectors.
    pub fn from_feature_map(map: &Tensor) -> Result<Self> {
        let (d, h, w) = match *map.shape() {
            [d, h, w] => (d, h, w),
            ref s => return Err(Error::dim("annotations", format!("expected [D,H',W'], got {s:?}"))),
        };
        let l = h * w;
        let src = map.data();
        let mut data = vec![0.0; l * d];
        for c in 0..d {
            for i in 0..l {
                data[i * d + c] = src[c * l + i];
            }
        }
        Ok(Self {
            vectors: Tensor::new(vec![l, d], data)?,
            source_shape: (d, h, w),
        })
    }

    /// Builds a set directly from `L` rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("annotations", "rows differ in length".to_string()));
        }
        let data: Vec<f64> = rows.concat();
        Ok(Self {
            vectors: Tensor::new(vec![rows.len(), d], data)?,
            source_shape: (d, 1, rows.len()),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.data()[i * d..(i + 1) * d]
    }

    /// The same set with locations reordered so that new row `k` is old
    /// row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| self.row(i).to_vec()).collect();
        let mut out = Self::from_rows(&rows)?;
        out.source_shape = self.source_shape;
        Ok(out)
    }
}

/// Scoring MLP `e = w2·tanh(W1·a + b1) + b2`, applied to each location alone.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMlp {
    /// `[hidden, D]`.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `[1, hidden]`.
    pub w2: Tensor,
    pub b2: Tensor,
}

impl AttentionMlp {
    pub fn hidden(&self) -> usize {
        self.w1.shape()[0]
    }

    fn check(&self, dim: usize) -> Result<()> {
        let h = self.hidden();
        if self.w1.shape() != [h, dim]
            || self.b1.shape() != [h]
            || self.w2.shape() != [1, h]
            || self.b2.shape() != [1]
        {
            return Err(Error::dim(
                "attention mlp",
                format!(
                    "w1 {:?} b1 {:?} w2 {:?} b2 {:?} for D = {dim}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Score of one annotation vector.
    pub fn score(&self, a: &[f64]) -> f64 {
        let d = a.len();
        let (w1, b1, w2) = (self.w1.data(), self.b1.data(), self.w2.data());
        let mut e = self.b2.data()[0];
        for j in 0..self.hidden() {
            let pre: f64 = w1[j * d..(j + 1) * d].iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b1[j];
            e += w2[j] * pre.tanh();
        }
        e
    }

    pub fn scores(&self, ann: &AnnotationSet) -> Result<Vec<f64>> {
        self.check(ann.dim())?;
        Ok((0..ann.len()).map(|i| self.score(ann.row(i))).collect())
    }
}

/// Result of one attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// α, `[L]`.
    pub weights: Tensor,
    /// ẑ, `[D]`.
    pub context: Tensor,
    /// e, `[L]`.
    pub scores: Tensor,
}

fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Softmax whose normalizer does not depend on the order of `scores`.
pub fn softmax_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::dim("softmax", "no scores".to_string()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            op: "softmax",
            detail: "non-finite attention score".into(),
        });
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z = sorted_sum(ex.clone());
    Ok(ex.iter().map(|e| e / z).collect())
}

/// `Σᵢ αᵢ aᵢ`, kept inside the per-coordinate range of the `aᵢ`.
pub fn context_with_weights(ann: &AnnotationSet, alpha: &[f64]) -> Result<Tensor> {
    if alpha.len() != ann.len() {
        return Err(Error::dim(
            "context",
            format!("{} weights for {} annotations", alpha.len(), ann.len()),
        ));
    }
    let d = ann.dim();
    let mut z = Vec::with_capacity(d);
    for c in 0..d {
        let col: Vec<f64> = (0..ann.len()).map(|i| ann.row(i)[c]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // offsets from the minimum are non-negative, so rounding cannot push
        // the result below it; the upper clamp absorbs Σα rounding above 1
        let s = sorted_sum(col.iter().zip(alpha).map(|(x, a)| a * (x - lo)).collect());
        z.push((lo + s).min(hi));
    }
    Tensor::new(vec![d], z)
}

/// Attention from precomputed scores.
pub fn attend_scores(ann: &AnnotationSet, scores: &[f64]) -> Result<AttentionOutput> {
    if scores.len() != ann.len() {
        return Err(Error::dim(
            "attend",
            format!("{} scores for {} annotations", scores.len(), ann.len()),
        ));
    }
    let alpha = softmax_weights(scores)?;
    let context = context_with_weights(ann, &alpha)?;
    Ok(AttentionOutput {
        weights: Tensor::new(vec![alpha.len()], alpha)?,
        context,
        scores: Tensor::new(vec![scores.len()], scores.to_vec())?,
    })
}

/// Scores every location with `mlp`, then normalizes and forms the
/// context vector.
pub fn attend(ann: &AnnotationSet, mlp: &AttentionMlp) -> Result<AttentionOutput> {
    let scores = mlp.scores(ann)?;
    attend_scores(ann, &scores)
}

/// Weighted image error `Σᵢ αᵢ (aᵢ − aᵢ*)`.
pub fn full_image_error(ann: &AnnotationSet, target: &AnnotationSet, alpha: &[f64]) -> Result<Tensor> {
    if ann.vectors.shape() != target.vectors.shape() {
        return Err(Error::dim(
            "full_image_error",
            format!("{:?} vs target {:?}", ann.vectors.shape(), target.vectors.shape()),
        ));
    }
    if alpha.len() != ann.len() {
        return Err(Error::dim(
            "full_image_error",
            format!("{} weights for {} annotations", alpha.len(), ann.len()),
        ));
    }
    let d = ann.dim();
    let err = (0..d)
        .map(|c| sorted_sum((0..ann.len()).map(|i| alpha[i] * (ann.row(i)[c] - target.row(i)[c])).collect()))
        .collect();
    Tensor::new(vec![d], err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_two_location_case() {
        let ann = AnnotationSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let out = attend_scores(&ann, &[0.0, 3f64.ln()]).unwrap();
        let a = out.weights.data();
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
        let z = out.context.data();
        assert!((z[0] - 0.25).abs() < 1e-15 && (z[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn identical_annotations_give_uniform_weights() {
        let v = vec![0.3, -1.2, 4.0];
        let ann = AnnotationSet::from_rows(&vec![v.clone(); 35]).unwrap();
        let mlp = AttentionMlp {
            w1: Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap(),
            b1: Tensor::vector(&[0.1, -0.1]),
            w2: Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap(),
            b2: Tensor::vector(&[0.5]),
        };
        let out = attend(&ann, &mlp).unwrap();
        for &a in out.weights.data() {
            assert_eq!(a, out.weights.data()[0]);
            assert!((a - 1.0 / 35.0).abs() < 1e-15);
        }
        assert_eq!(out.context.data(), &v[..]);
    }

    #[test]
    fn image_error_cases() {
        let ann = AnnotationSet::from_rows(&[vec![3.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let zero = AnnotationSet::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let d = full_image_error(&ann, &zero, &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        assert!((d.data()[0] - 1.0).abs() < 1e-15 && (d.data()[1] - 2.0).abs() < 1e-15);
        let same = full_image_error(&ann, &ann, &[0.5, 0.5]).unwrap();
        assert_eq!(same.data(), &[0.0, 0.0]);
        let short = AnnotationSet::from_rows(&[vec![3.0, 0.0]]).unwrap();
        assert!(full_image_error(&ann, &short, &[1.0]).is_err());
    }

    #[test]
    fn feature_map_rows_follow_grid_order() {
        // D = 2, H' = 2, W' = 3
        let map = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let ann = AnnotationSet::from_feature_map(&map).unwrap();
        assert_eq!(ann.len(), 6);
        assert_eq!(ann.row(4), &[4.0, 10.0]);
        assert_eq!(ann.source_shape, (2, 2, 3));
    }
}
