//! Policy networks: a conv annotation extractor followed either by soft
//! attention over locations (DACNN) or by a flatten (plain CNN baseline),
//! then a shared dense trunk with categorical policy and value heads.

mod attention;

pub use attention::{
    attend, attend_scores, context_with_weights, full_image_error, softmax_weights, AnnotationSet, AttentionMlp,
    AttentionOutput,
};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, orthogonal, orthogonal_conv, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

impl ConvLayer {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn output_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (self.kernel <= padded && self.stride >= 1).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AttentionSpec {
    None,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// `(C, H, W)` of the observation.
    pub input: (usize, usize, usize),
    pub conv: Vec<ConvLayer>,
    pub attention: AttentionSpec,
    #[serde(default = "one")]
    pub attention_depth: usize,
    pub head_hidden: usize,
    pub steering_bins: usize,
    pub throttle_bins: usize,
}

fn one() -> usize {
    1
}

const DEFAULT_CONV: [ConvLayer; 3] = [
    ConvLayer::new(16, 5, 2, 2),
    ConvLayer::new(32, 3, 2, 0),
    ConvLayer::new(64, 3, 2, 0),
];

pub fn preset_names() -> &'static [&'static str] {
    &[
        "dacnn-shallow",
        "dacnn-deep",
        "dacnn-granular",
        "baseline",
        "baseline-matched",
        "deep-cnn",
    ]
}

impl NetworkSpec {
    /// Named architecture for a `(C, H, W)` input and an action grid.
    pub fn preset(name: &str, input: (usize, usize, usize), steering_bins: usize, throttle_bins: usize) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            input,
            conv: DEFAULT_CONV.to_vec(),
            attention: AttentionSpec::Mlp { hidden: 64 },
            attention_depth: 1,
            head_hidden: 64,
            steering_bins,
            throttle_bins,
        };
        let spec = match name {
            "dacnn-shallow" => base,
            "dacnn-deep" => Self {
                attention_depth: 2,
                ..base
            },
            "dacnn-granular" => Self {
                attention: AttentionSpec::Mlp { hidden: 256 },
                ..base
            },
            "baseline" => Self {
                attention: AttentionSpec::None,
                ..base
            },
            "baseline-matched" => {
                let target = base.param_count()?;
                let mut b = Self {
                    attention: AttentionSpec::None,
                    head_hidden: 1,
                    ..base
                };
                // smallest trunk width whose count comes closest to the attention model
                let mut best = (usize::MAX, 1);
                for h in 1..=256 {
                    b.head_hidden = h;
                    let diff = b.param_count()?.abs_diff(target);
                    if diff < best.0 {
                        best = (diff, h);
                    }
                }
                b.head_hidden = best.1;
                b
            }
            "deep-cnn" => {
                let mut conv = DEFAULT_CONV.to_vec();
                conv.push(ConvLayer::new(64, 3, 1, 1));
                conv.push(ConvLayer::new(64, 3, 1, 1));
                Self {
                    conv,
                    attention: AttentionSpec::None,
                    ..base
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown network preset {other:?} (known: {})",
                    preset_names().join(", ")
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_actions(&self) -> usize {
        self.steering_bins * self.throttle_bins
    }

    pub fn has_attention(&self) -> bool {
        matches!(self.attention, AttentionSpec::Mlp { .. })
    }

    /// `(D, H', W')` of the final conv map.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = self.input;
        for (i, layer) in self.conv.iter().enumerate() {
            match (layer.output_size(h), layer.output_size(w)) {
                (Some(nh), Some(nw)) => {
                    h = nh;
                    w = nw;
                    c = layer.out_channels;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "conv layer {i} ({layer:?}) does not fit a {h}x{w} input"
                    )))
                }
            }
        }
        Ok((c, h, w))
    }

    /// Number of annotation vectors `L = H'·W'`.
    pub fn annotation_count(&self) -> Result<usize> {
        let (_, h, w) = self.feature_shape()?;
        Ok(h * w)
    }

    /// Width of the vector entering the dense trunk.
    pub fn trunk_input(&self) -> Result<usize> {
        let (d, h, w) = self.feature_shape()?;
        Ok(if self.has_attention() { d } else { d * h * w })
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("network needs at least one conv layer".into()));
        }
        if self.conv.iter().any(|l| l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
            return Err(Error::Config("conv layers need positive channels, kernel and stride".into()));
        }
        if !(1..=2).contains(&self.attention_depth) {
            return Err(Error::Config(format!(
                "attention_depth must be 1 or 2, got {}",
                self.attention_depth
            )));
        }
        if let AttentionSpec::Mlp { hidden: 0 } = self.attention {
            return Err(Error::Config("attention hidden units must be positive".into()));
        }
        if self.head_hidden == 0 || self.num_actions() == 0 {
            return Err(Error::Config("head_hidden and action bins must be positive".into()));
        }
        if self.input.0 == 0 {
            return Err(Error::Config("input needs at least one channel".into()));
        }
        self.feature_shape()?;
        Ok(())
    }

    /// Scalar parameter count without building the network.
    pub fn param_count(&self) -> Result<usize> {
        let mut n = 0;
        let mut c = self.input.0;
        for l in &self.conv {
            n += l.out_channels * c * l.kernel * l.kernel + l.out_channels;
            c = l.out_channels;
        }
        if let AttentionSpec::Mlp { hidden } = self.attention {
            n += self.attention_depth * (hidden * c + hidden + hidden + 1);
        }
        let t = self.trunk_input()?;
        let h = self.head_hidden;
        n += t * h + h + self.num_actions() * h + self.num_actions() + h + 1;
        Ok(n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Parameter indices in [`ParamStore`] insertion order.
#[derive(Debug, Clone)]
struct Layout {
    conv: Vec<(usize, usize)>,
    attention: Vec<[usize; 4]>,
    trunk: (usize, usize),
    policy: (usize, usize),
    value: (usize, usize),
}

fn build_params(spec: &NetworkSpec, seed: u64, zero_heads: bool) -> Result<(ParamStore, Layout)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let relu_gain = std::f64::consts::SQRT_2;
    let mut conv = Vec::new();
    let mut c = spec.input.0;
    for (i, l) in spec.conv.iter().enumerate() {
        let w = ps.insert(
            format!("conv{i}.weight"),
            orthogonal_conv(l.out_channels, c, l.kernel, l.kernel, relu_gain, &mut rng),
        );
        let b = ps.insert(format!("conv{i}.bias"), Tensor::zeros(&[l.out_channels]));
        conv.push((w.index(), b.index()));
        c = l.out_channels;
    }
    let mut attention = Vec::new();
    if let AttentionSpec::Mlp { hidden } = spec.attention {
        for k in 0..spec.attention_depth {
            let w1 = ps.insert(format!("att{k}.w1"), orthogonal(hidden, c, 1.0, &mut rng));
            let b1 = ps.insert(format!("att{k}.b1"), Tensor::zeros(&[hidden]));
            let w2 = ps.insert(format!("att{k}.w2"), orthogonal(1, hidden, 1.0, &mut rng));
            let b2 = ps.insert(format!("att{k}.b2"), Tensor::zeros(&[1]));
            attention.push([w1.index(), b1.index(), w2.index(), b2.index()]);
        }
    }
    let t = spec.trunk_input()?;
    let h = spec.head_hidden;
    let tw = ps.insert("trunk.weight", orthogonal(h, t, relu_gain, &mut rng));
    let tb = ps.insert("trunk.bias", Tensor::zeros(&[h]));
    let a = spec.num_actions();
    let (pw, vw) = if zero_heads {
        (Tensor::zeros(&[a, h]), Tensor::zeros(&[1, h]))
    } else {
        (orthogonal(a, h, 0.5, &mut rng), orthogonal(1, h, 1.0, &mut rng))
    };
    let pw = ps.insert("policy.weight", pw);
    let pb = ps.insert("policy.bias", Tensor::zeros(&[a]));
    let vw = ps.insert("value.weight", vw);
    let vb = ps.insert("value.bias", Tensor::zeros(&[1]));
    let layout = Layout {
        conv,
        attention,
        trunk: (tw.index(), tb.index()),
        policy: (pw.index(), pb.index()),
        value: (vw.index(), vb.index()),
    };
    Ok((ps, layout))
}

/// Output of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

impl PolicyOutput {
    /// Highest-logit action; ties go to the lowest index.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (k, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = k;
            }
        }
        best
    }
}

/// Tape handles produced by [`Policy::forward_tape`] for a batch `B`.
pub struct NetVars<'t> {
    /// `[B, A]`.
    pub logits: Var<'t>,
    /// `[B]`.
    pub value: Var<'t>,
    /// Final conv activations `[B, D, H', W']`.
    pub features: Var<'t>,
    /// `[B, L, D]` when the network attends.
    pub annotations: Option<Var<'t>>,
    /// Final-stage attention weights `[B, L]`.
    pub alpha: Option<Var<'t>>,
    /// Context vector `[B, D]` (or the flattened features for baselines).
    pub context: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    spec: NetworkSpec,
    params: ParamStore,
    layout: Layout,
}

impl Policy {
    /// Fresh network with zero-initialized policy and value heads.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::init(spec, seed, true)
    }

    /// `zero_heads = false` draws the final heads randomly as well.
    pub fn init(spec: NetworkSpec, seed: u64, zero_heads: bool) -> Result<Self> {
        let (params, layout) = build_params(&spec, seed, zero_heads)?;
        Ok(Self { spec, params, layout })
    }

    /// Network with the given parameters; names and shapes must match `spec`.
    pub fn with_params(spec: NetworkSpec, params: ParamStore) -> Result<Self> {
        let (fresh, layout) = build_params(&spec, 0, true)?;
        fresh.check_layout(&params)?;
        Ok(Self { spec, params, layout })
    }

    /// Loads a checkpoint; the spec comes from `network.json` next to it.
    pub fn load(checkpoint: impl AsRef<Path>) -> Result<Self> {
        let checkpoint = checkpoint.as_ref();
        if !checkpoint.is_file() {
            return Err(Error::Checkpoint(format!("checkpoint {} not found", checkpoint.display())));
        }
        let spec_path = checkpoint.with_file_name("network.json");
        if !spec_path.is_file() {
            return Err(Error::Checkpoint(format!(
                "network spec {} not found next to the checkpoint",
                spec_path.display()
            )));
        }
        let spec = NetworkSpec::load(&spec_path)?;
        Self::load_with_spec(checkpoint, spec)
    }

    pub fn load_with_spec(checkpoint: impl AsRef<Path>, spec: NetworkSpec) -> Result<Self> {
        let params = tensor::load_checkpoint(checkpoint)?;
        Self::with_params(spec, params)
    }

    /// Writes the checkpoint and `network.json` beside it.
    pub fn save(&self, checkpoint: impl AsRef<Path>) -> Result<()> {
        let checkpoint = checkpoint.as_ref();
        tensor::save_checkpoint(&self.params, checkpoint)?;
        self.spec.save(checkpoint.with_file_name("network.json"))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Attention MLP of stage `k` as an eager scorer.
    pub fn attention_mlp(&self, k: usize) -> Option<AttentionMlp> {
        let [w1, b1, w2, b2] = *self.layout.attention.get(k)?;
        let t = self.params.tensors();
        Some(AttentionMlp {
            w1: t[w1].clone(),
            b1: t[b1].clone(),
            w2: t[w2].clone(),
            b2: t[b2].clone(),
        })
    }

    /// Names of the parameter groups, aligned with [`ParamStore`] order.
    pub fn param_group(&self, index: usize) -> &'static str {
        let name = self.params.tensors().get(index).map(|_| self.params.iter().nth(index).unwrap().1);
        match name {
            Some(n) if n.starts_with("conv") => "conv",
            Some(n) if n.starts_with("att") => "attention",
            Some(n) if n.starts_with("trunk") => "trunk",
            Some(_) => "heads",
            None => "unknown",
        }
    }

    /// Records the network on `tape`. `vars` are this policy's parameters
    /// bound to the same tape; `obs` is `[B, C, H, W]`.
    pub fn forward_tape<'t>(&self, vars: &[Var<'t>], obs: Var<'t>) -> Result<NetVars<'t>> {
        let shape = obs.shape();
        let (c, h, w) = self.spec.input;
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::dim(
                "policy forward",
                format!("expected [B,{c},{h},{w}], got {shape:?}"),
            ));
        }
        let b = shape[0];
        let mut x = obs;
        for (layer, &(wi, bi)) in self.spec.conv.iter().zip(&self.layout.conv) {
            x = x.conv2d(vars[wi], layer.stride, layer.padding)?.add_channel_bias(vars[bi])?.relu();
        }
        let features = x;
        let (d, fh, fw) = self.spec.feature_shape()?;
        let l = fh * fw;
        let (context, annotations, alpha) = if self.spec.has_attention() {
            let ann = features.reshape(&[b, d, l])?.transpose_last2()?;
            let mut cur = ann;
            let mut alpha = None;
            for (k, &[w1, b1, w2, b2]) in self.layout.attention.iter().enumerate() {
                if k > 0 {
                    let prev: Var<'t> = alpha.expect("earlier stage set alpha");
                    cur = prev.scale_rows(cur, l as f64)?;
                }
                let e = cur
                    .reshape(&[b * l, d])?
                    .dense(vars[w1], vars[b1])?
                    .tanh()
                    .dense(vars[w2], vars[b2])?
                    .reshape(&[b, l])?;
                alpha = Some(e.softmax()?);
            }
            let a = alpha.expect("at least one attention stage");
            (a.weighted_sum(cur)?, Some(ann), Some(a))
        } else {
            (features.reshape(&[b, d * l])?, None, None)
        };
        let (tw, tb) = self.layout.trunk;
        let hidden = context.dense(vars[tw], vars[tb])?.relu();
        let (pw, pb) = self.layout.policy;
        let (vw, vb) = self.layout.value;
        let logits = hidden.dense(vars[pw], vars[pb])?;
        let value = hidden.dense(vars[vw], vars[vb])?.reshape(&[b])?;
        Ok(NetVars {
            logits,
            value,
            features,
            annotations,
            alpha,
            context,
        })
    }

    /// Stacks `[C,H,W]` observations into one `[B,C,H,W]` tensor.
    pub fn stack(&self, obs: &[&Tensor]) -> Result<Tensor> {
        let (c, h, w) = self.spec.input;
        let mut data = Vec::with_capacity(obs.len() * c * h * w);
        for o in obs {
            if o.shape() != [c, h, w] {
                return Err(Error::dim(
                    "policy input",
                    format!("expected [{c},{h},{w}], got {:?}", o.shape()),
                ));
            }
            data.extend_from_slice(o.data());
        }
        Tensor::new(vec![obs.len(), c, h, w], data)
    }

    /// Forward pass over a batch without recording gradients.
    pub fn infer(&self, obs: &[&Tensor]) -> Result<Vec<PolicyOutput>> {
        let tape = Tape::new();
        let vars = self.params.bind_frozen(&tape);
        let x = tape.constant(self.stack(obs)?);
        let out = self.forward_tape(&vars, x)?;
        let logits = out.logits.data();
        let values = out.value.data();
        let a = self.spec.num_actions();
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &value)| PolicyOutput {
                logits: logits[i * a..(i + 1) * a].to_vec(),
                value,
            })
            .collect())
    }

    /// Single-observation forward with attention details when available.
    pub fn forward(&self, obs: &Tensor) -> Result<(PolicyOutput, Option<AttentionOutput>)> {
        let tape = Tape::new();
        let vars = self.params.bind_frozen(&tape);
        let x = tape.constant(self.stack(&[obs])?);
        let out = self.forward_tape(&vars, x)?;
        let po = PolicyOutput {
            logits: out.logits.data(),
            value: out.value.item(),
        };
        let att = match out.alpha {
            Some(alpha) => {
                let l = alpha.shape()[1];
                let d = out.context.shape()[1];
                Some(AttentionOutput {
                    weights: Tensor::new(vec![l], alpha.data())?,
                    context: Tensor::new(vec![d], out.context.data())?,
                    scores: Tensor::new(vec![l], alpha.data().iter().map(|a| a.ln()).collect())?,
                })
            }
            None => None,
        };
        Ok((po, att))
    }

    /// Annotation vectors of one `[C,H,W]` observation.
    pub fn extract_annotations(&self, obs: &Tensor) -> Result<AnnotationSet> {
        let tape = Tape::new();
        let vars = self.params.bind_frozen(&tape);
        let x = tape.constant(self.stack(&[obs])?);
        let mut f = x;
        for (layer, &(wi, bi)) in self.spec.conv.iter().zip(&self.layout.conv) {
            f = f.conv2d(vars[wi], layer.stride, layer.padding)?.add_channel_bias(vars[bi])?.relu();
        }
        let shape = f.shape();
        AnnotationSet::from_feature_map(&Tensor::new(shape[1..].to_vec(), f.data())?)
    }
}

/// Streams per-step attention weights as CSV rows `step,a0,…,a{L−1}`.
pub struct AttentionLog<W: Write> {
    out: W,
    locations: usize,
}

impl<W: Write> AttentionLog<W> {
    pub fn new(mut out: W, locations: usize) -> Result<Self> {
        let mut header = String::from("step");
        for i in 0..locations {
            header.push_str(&format!(",a{i}"));
        }
        writeln!(out, "{header}").map_err(|e| Error::io("<attention log>", e))?;
        Ok(Self { out, locations })
    }

    pub fn record(&mut self, step: usize, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.locations {
            return Err(Error::dim(
                "attention log",
                format!("{} weights for {} columns", alpha.len(), self.locations),
            ));
        }
        let row: Vec<String> = alpha.iter().map(|a| format!("{a:?}")).collect();
        writeln!(self.out, "{step},{}", row.join(",")).map_err(|e| Error::io("<attention log>", e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_obs(seed: u64, shape: (usize, usize, usize)) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2;
        Tensor::new(vec![shape.0, shape.1, shape.2], (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn default_geometry() {
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        assert_eq!(spec.feature_shape().unwrap(), (64, 5, 7));
        assert_eq!(spec.annotation_count().unwrap(), 35);
        let base = NetworkSpec::preset("baseline", (3, 48, 64), 5, 3).unwrap();
        assert_eq!(base.trunk_input().unwrap(), 2240);
        let p = Policy::new(spec.clone(), 1).unwrap();
        assert_eq!(p.param_count(), spec.param_count().unwrap());
        let b = Policy::new(base.clone(), 1).unwrap();
        assert_eq!(b.param_count(), base.param_count().unwrap());
    }

    #[test]
    fn matched_baseline_is_close_in_size() {
        let d = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let m = NetworkSpec::preset("baseline-matched", (3, 48, 64), 5, 3).unwrap();
        let (a, b) = (d.param_count().unwrap() as f64, m.param_count().unwrap() as f64);
        assert!((a - b).abs() / a < 0.05, "{a} vs {b}");
        assert!(!m.has_attention());
    }

    #[test]
    fn zero_heads_give_uniform_policy() {
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let p = Policy::new(spec, 3).unwrap();
        let (out, att) = p.forward(&random_obs(1, (3, 48, 64))).unwrap();
        assert!(out.logits.iter().all(|&l| l == 0.0));
        assert_eq!(out.value, 0.0);
        let h = tensor::entropy(&out.logits).unwrap();
        assert!((h - 15f64.ln()).abs() < 1e-12);
        let a = att.unwrap();
        assert!((a.weights.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_baseline_outputs_head_bias() {
        let spec = NetworkSpec::preset("baseline", (3, 48, 64), 5, 3).unwrap();
        let mut p = Policy::init(spec, 4, false).unwrap();
        let pb = p.params().find("policy.bias").unwrap();
        let bias: Vec<f64> = (0..15).map(|k| k as f64 * 0.1 - 0.7).collect();
        p.params_mut().get_mut(pb).data_mut().copy_from_slice(&bias);
        let (out, att) = p.forward(&Tensor::zeros(&[3, 48, 64])).unwrap();
        assert!(att.is_none());
        assert_eq!(out.logits, bias);
    }

    #[test]
    fn zero_image_gives_zero_annotations() {
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let p = Policy::new(spec, 5).unwrap();
        let ann = p.extract_annotations(&Tensor::zeros(&[3, 48, 64])).unwrap();
        assert_eq!((ann.len(), ann.dim()), (35, 64));
        assert!(ann.vectors.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_attention_matches_eager() {
        for preset in ["dacnn-shallow", "dacnn-granular"] {
            let spec = NetworkSpec::preset(preset, (3, 48, 64), 5, 3).unwrap();
            let p = Policy::init(spec, 6, false).unwrap();
            let obs = random_obs(2, (3, 48, 64));
            let ann = p.extract_annotations(&obs).unwrap();
            let eager = attend(&ann, &p.attention_mlp(0).unwrap()).unwrap();
            let (_, att) = p.forward(&obs).unwrap();
            let att = att.unwrap();
            for (a, b) in eager.weights.data().iter().zip(att.weights.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in eager.context.data().iter().zip(att.context.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_match_single_forward() {
        for preset in ["dacnn-deep", "deep-cnn"] {
            let spec = NetworkSpec::preset(preset, (3, 48, 64), 5, 3).unwrap();
            let p = Policy::init(spec, 7, false).unwrap();
            let obs: Vec<Tensor> = (0..3).map(|s| random_obs(10 + s, (3, 48, 64))).collect();
            let refs: Vec<&Tensor> = obs.iter().collect();
            let batch = p.infer(&refs).unwrap();
            for (o, b) in obs.iter().zip(&batch) {
                let (single, _) = p.forward(o).unwrap();
                for (x, y) in single.logits.iter().zip(&b.logits) {
                    assert!((x - y).abs() < 1e-12);
                }
                assert_eq!(single, p.forward(o).unwrap().0);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        let p = Policy::init(spec, 8, false).unwrap();
        let path = dir.path().join("ckpt_0.dacn");
        p.save(&path).unwrap();
        let q = Policy::load(&path).unwrap();
        let obs = random_obs(3, (3, 48, 64));
        assert_eq!(p.forward(&obs).unwrap().0, q.forward(&obs).unwrap().0);

        let other = NetworkSpec::preset("baseline", (3, 48, 64), 5, 3).unwrap();
        assert!(matches!(Policy::load_with_spec(&path, other), Err(Error::Checkpoint(_))));
        assert!(Policy::load(dir.path().join("missing.dacn")).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = NetworkSpec::preset("dacnn-shallow", (3, 48, 64), 5, 3).unwrap();
        s.attention_depth = 3;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::preset("dacnn-shallow", (3, 8, 8), 5, 3);
        assert!(s.is_err());
        s = NetworkSpec::preset("nope", (3, 48, 64), 5, 3);
        assert!(s.is_err());
    }

    #[test]
    fn attention_log_rows() {
        let mut log = AttentionLog::new(Vec::new(), 2).unwrap();
        log.record(0, &[0.25, 0.75]).unwrap();
        assert!(log.record(1, &[1.0]).is_err());
        let s = String::from_utf8(log.into_inner()).unwrap();
        assert_eq!(s, "step,a0,a1\n0,0.25,0.75\n");
    }
}
