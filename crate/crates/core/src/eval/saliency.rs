use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencySource {
    GradCam,
    Attention,
}

/// Scalar whose gradient drives Grad-CAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyTarget {
    /// Logit of the greedy action.
    #[default]
    ChosenAction,
    Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub source: SaliencySource,
    /// Map before normalization, `[H', W']`.
    pub raw: Tensor,
    /// Min-max normalized map, `[H', W']`.
    pub heatmap: Tensor,
    /// `heatmap` resized to the observation, `[H, W]`.
    pub overlay: Tensor,
    /// Set when the raw map was identically zero.
    pub all_zero: bool,
}

/// Min-max normalization into `[0, 1]`. An all-zero map stays zero and
/// raises the flag; any other constant map becomes all ones.
pub fn normalize_map(values: &[f64]) -> (Vec<f64>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.iter().all(|&v| v == 0.0) {
        return (vec![0.0; values.len()], true);
    }
    if hi == lo {
        return (vec![1.0; values.len()], false);
    }
    (values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect(), false)
}

/// Bilinear resize of an `h × w` map to `out_h × out_w`, sampling at pixel
/// centres so that the two grids share their outer edges.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(map.len(), h * w, "map size");
    let coord = |i: usize, n_in: usize, n_out: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = coord(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = coord(c, w, out_w);
            let top = map[r0 * w + c0] * (1.0 - fc) + map[r0 * w + c1] * fc;
            let bottom = map[r1 * w + c0] * (1.0 - fc) + map[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// `ReLU(Σ_k w_k A^k)` with `w_k` the spatial mean of `∂y/∂A^k`.
/// `activations` and `gradients` are `[K, H', W']`.
pub fn grad_cam_from(activations: &Tensor, gradients: &Tensor) -> Result<Tensor> {
    let (k, h, w) = match *activations.shape() {
        [k, h, w] => (k, h, w),
        ref s => return Err(Error::dim("grad_cam", format!("expected [K,H',W'], got {s:?}"))),
    };
    if gradients.shape() != activations.shape() {
        return Err(Error::dim(
            "grad_cam",
            format!("gradients {:?} vs activations {:?}", gradients.shape(), activations.shape()),
        ));
    }
    let plane = h * w;
    let (a, g) = (activations.data(), gradients.data());
    let mut map = vec![0.0; plane];
    for ch in 0..k {
        let weight = g[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (m, x) in map.iter_mut().zip(&a[ch * plane..(ch + 1) * plane]) {
            *m += weight * x;
        }
    }
    map.iter_mut().for_each(|m| *m = m.max(0.0));
    Tensor::new(vec![h, w], map)
}

fn finish(source: SaliencySource, raw: Tensor, out_h: usize, out_w: usize) -> Result<SaliencyMap> {
    let (h, w) = (raw.shape()[0], raw.shape()[1]);
    let (norm, all_zero) = normalize_map(raw.data());
    let overlay = upsample_bilinear(&norm, h, w, out_h, out_w);
    Ok(SaliencyMap {
        source,
        heatmap: Tensor::new(vec![h, w], norm)?,
        overlay: Tensor::new(vec![out_h, out_w], overlay)?,
        raw,
        all_zero,
    })
}

/// Grad-CAM on the last conv layer of any network, with or without attention.
pub fn grad_cam(policy: &Policy, obs: &Tensor, target: SaliencyTarget) -> Result<SaliencyMap> {
    let tape = Tape::new();
    let vars = policy.params().bind(&tape);
    let x = tape.constant(policy.stack(&[obs])?);
    let out = policy.forward_tape(&vars, x)?;
    let y = match target {
        SaliencyTarget::ChosenAction => {
            let logits = out.logits.data();
            let best = crate::policy::PolicyOutput { logits, value: 0.0 }.greedy();
            out.logits.pick(&[best])?.sum()
        }
        SaliencyTarget::Value => out.value.sum(),
    };
    let grads = tape.backward(y)?;
    let shape = out.features.shape();
    let acts = Tensor::new(shape[1..].to_vec(), out.features.data())?;
    let g = Tensor::new(shape[1..].to_vec(), grads.wrt(out.features))?;
    let raw = grad_cam_from(&acts, &g)?;
    let (_, h, w) = policy.spec().input;
    finish(SaliencySource::GradCam, raw, h, w)
}

/// Attention weights laid out on the feature grid.
pub fn attention_heatmap(policy: &Policy, obs: &Tensor) -> Result<SaliencyMap> {
    if !policy.spec().has_attention() {
        return Err(Error::Unsupported(format!(
            "network {:?} has no attention layer; use grad-cam instead",
            policy.spec().name
        )));
    }
    let (_, att) = policy.forward(obs)?;
    let att = att.expect("attention network reports weights");
    let (_, fh, fw) = policy.spec().feature_shape()?;
    let raw = att.weights.reshape(&[fh, fw])?;
    let (_, h, w) = policy.spec().input;
    finish(SaliencySource::Attention, raw, h, w)
}

/// Observation tinted red where `heat` is high.
pub fn overlay(obs: &Tensor, heat: &Tensor) -> Result<Tensor> {
    let (h, w) = match (obs.shape(), heat.shape()) {
        ([3, h, w], [hh, hw]) if (h, w) == (hh, hw) => (*h, *w),
        (a, b) => return Err(Error::dim("overlay", format!("image {a:?} vs heat {b:?}"))),
    };
    let plane = h * w;
    let mut out = obs.data().to_vec();
    for (p, &t) in heat.data().iter().enumerate() {
        let t = 0.6 * t;
        for (c, tint) in [1.0, 0.1, 0.0].iter().enumerate() {
            let v = &mut out[c * plane + p];
            *v = (1.0 - t) * *v + t * tint;
        }
    }
    Tensor::new(vec![3, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NetworkSpec;
    use proptest::prelude::*;

    #[test]
    fn single_channel_unit_gradient_is_relu_of_activation() {
        let a = Tensor::new(vec![1, 2, 2], vec![2.0, -1.0, 0.5, 4.0]).unwrap();
        let g = Tensor::filled(&[1, 2, 2], 1.0);
        let raw = grad_cam_from(&a, &g).unwrap();
        assert_eq!(raw.data(), &[2.0, 0.0, 0.5, 4.0]);
        let (n, flag) = normalize_map(raw.data());
        assert!(!flag);
        assert_eq!(n, vec![0.5, 0.0, 0.125, 1.0]);
    }

    #[test]
    fn negative_gradient_kills_positive_activations() {
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::filled(&[1, 2, 2], -1.0);
        let raw = grad_cam_from(&a, &g).unwrap();
        let (n, flag) = normalize_map(raw.data());
        assert!(flag);
        assert!(n.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_channel_hand_case() {
        // channel weights: mean(1, 3, 0, 0) = 1 and mean(-2, 0, 0, -2) = -1
        let a = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 4.0, 1.0]).unwrap();
        let g = Tensor::new(vec![2, 2, 2], vec![1.0, 3.0, 0.0, 0.0, -2.0, 0.0, 0.0, -2.0]).unwrap();
        let raw = grad_cam_from(&a, &g).unwrap();
        let want = [0.5, 1.5, 0.0, 3.0];
        for (x, y) in raw.data().iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_maps() {
        assert_eq!(normalize_map(&[0.2; 4]), (vec![1.0; 4], false));
        assert_eq!(normalize_map(&[0.0; 3]), (vec![0.0; 3], true));
    }

    #[test]
    fn upsample_aligns_and_preserves_constants() {
        let up = upsample_bilinear(&[0.3; 6], 2, 3, 48, 64);
        assert!(up.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let m = [0.0, 1.0, 2.0, 3.0];
        let up = upsample_bilinear(&m, 2, 2, 4, 4);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[15], 3.0);
        // one source cell covers W/W' = 2 output columns
        assert_eq!(up[1], 0.25);
    }

    #[test]
    fn maps_for_both_networks() {
        let obs = Tensor::new(
            vec![3, 48, 64],
            (0..3 * 48 * 64).map(|k| ((k * 7919) % 1000) as f64 / 1000.0).collect(),
        )
        .unwrap();
        for preset in ["dacnn-shallow", "baseline"] {
            let spec = NetworkSpec::preset(preset, (3, 48, 64), 5, 3).unwrap();
            let p = Policy::init(spec, 1, false).unwrap();
            for target in [SaliencyTarget::ChosenAction, SaliencyTarget::Value] {
                let m = grad_cam(&p, &obs, target).unwrap();
                assert_eq!(m.heatmap.shape(), &[5, 7]);
                assert_eq!(m.overlay.shape(), &[48, 64]);
                assert!(m.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
                if !m.all_zero {
                    assert_eq!(m.heatmap.data().iter().copied().fold(0.0, f64::max), 1.0);
                }
            }
            let att = attention_heatmap(&p, &obs);
            if preset == "baseline" {
                assert!(matches!(att, Err(Error::Unsupported(_))));
            } else {
                let att = att.unwrap();
                assert!((att.raw.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_attention_is_flat() {
        // zero images give zero annotations, hence equal scores everywhere
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let p = Policy::new(spec, 2).unwrap();
        let m = attention_heatmap(&p, &Tensor::zeros(&[3, 48, 64])).unwrap();
        assert!(m.heatmap.data().iter().all(|&v| v == 1.0));
        assert!(m.overlay.data().iter().all(|&v| v == 1.0));
    }

    proptest! {
        #[test]
        fn normalized_range(v in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
            let (n, _) = normalize_map(&v);
            prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
