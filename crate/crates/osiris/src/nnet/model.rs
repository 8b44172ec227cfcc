//! Model configuration, parameter storage, initialization, and the fused /
//! auxiliary forward and backward passes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv_backward, conv_forward, cross_entropy_logit_grad, dense_backward, dense_forward,
    depthwise_backward, depthwise_forward, dropout_mask, global_avg_pool,
    global_avg_pool_backward, pointwise_backward, pointwise_forward, relu, relu_backward,
    softmax, ConvShape,
};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 7;

/// One convolutional stage: kernel width, stride, output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

/// Per-domain feature extractor: a kernel-15 stride-4 filterbank followed by
/// exactly four depthwise separable stages, then global average pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub filterbank: ConvSpec,
    pub ds_layers: Vec<ConvSpec>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filterbank.kernel != 15 || self.filterbank.stride != 4 {
            return Err(Error::Config(format!(
                "filterbank must be kernel 15 / stride 4, got kernel {} / stride {}",
                self.filterbank.kernel, self.filterbank.stride
            )));
        }
        if self.ds_layers.len() != 4 {
            return Err(Error::Config(format!(
                "backbone needs exactly 4 depthwise separable layers, got {}",
                self.ds_layers.len()
            )));
        }
        if self.filterbank.out_channels == 0
            || self.ds_layers.iter().any(|l| l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
        {
            return Err(Error::Config("zero-sized layer in backbone".into()));
        }
        Ok(())
    }

    /// Feature width after global average pooling.
    pub fn feature_len(&self) -> usize {
        self.ds_layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    /// Sequence lengths along the stage chain, starting at `input_len`.
    pub fn length_chain(&self, input_len: usize) -> Vec<usize> {
        let mut lens = vec![input_len];
        let mut l = input_len.div_ceil(self.filterbank.stride);
        lens.push(l);
        for ds in &self.ds_layers {
            l = l.div_ceil(ds.stride);
            lens.push(l);
        }
        lens
    }
}

/// The full three-domain fused classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub time: BackboneConfig,
    pub freq: BackboneConfig,
    pub csi: BackboneConfig,
    /// Input sequence lengths for (time, freq, csi).
    pub input_lens: [usize; 3],
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub classes: usize,
    pub aux_hidden: usize,
}

fn default_backbone() -> BackboneConfig {
    BackboneConfig {
        filterbank: ConvSpec { kernel: 15, stride: 4, out_channels: 16 },
        ds_layers: vec![
            ConvSpec { kernel: 7, stride: 2, out_channels: 32 },
            ConvSpec { kernel: 7, stride: 2, out_channels: 48 },
            ConvSpec { kernel: 5, stride: 2, out_channels: 64 },
            ConvSpec { kernel: 5, stride: 2, out_channels: 96 },
        ],
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            time: default_backbone(),
            freq: default_backbone(),
            csi: default_backbone(),
            input_lens: [4096, 4096, 1638],
            head_hidden: 48,
            head_dropout: 0.3,
            classes: NUM_CLASSES,
            aux_hidden: 16,
        }
    }
}

impl ModelConfig {
    /// A scaled-down configuration for fast gradient probes.
    pub fn tiny() -> Self {
        let bb = BackboneConfig {
            filterbank: ConvSpec { kernel: 15, stride: 4, out_channels: 3 },
            ds_layers: vec![
                ConvSpec { kernel: 3, stride: 2, out_channels: 4 },
                ConvSpec { kernel: 3, stride: 2, out_channels: 4 },
                ConvSpec { kernel: 3, stride: 1, out_channels: 4 },
                ConvSpec { kernel: 3, stride: 1, out_channels: 4 },
            ],
        };
        Self {
            time: bb.clone(),
            freq: bb.clone(),
            csi: bb,
            input_lens: [32, 32, 16],
            head_hidden: 8,
            head_dropout: 0.3,
            classes: NUM_CLASSES,
            aux_hidden: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.time.validate()?;
        self.freq.validate()?;
        self.csi.validate()?;
        if self.classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "classifier is fixed at {NUM_CLASSES} classes, got {}",
                self.classes
            )));
        }
        if self.head_hidden == 0 || self.aux_hidden == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0,1), got {}",
                self.head_dropout
            )));
        }
        if self.input_lens.iter().any(|&l| l == 0) {
            return Err(Error::Config("input lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn backbone(&self, domain: Domain) -> &BackboneConfig {
        match domain {
            Domain::Time => &self.time,
            Domain::Freq => &self.freq,
            Domain::Csi => &self.csi,
        }
    }

    pub fn input_len(&self, domain: Domain) -> usize {
        self.input_lens[domain as usize]
    }

    /// Width of the concatenated fusion-head input.
    pub fn fused_feature_len(&self) -> usize {
        self.time.feature_len() + self.freq.feature_len() + self.csi.feature_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Time = 0,
    Freq = 1,
    Csi = 2,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Time, Domain::Freq, Domain::Csi];

    pub fn key(self) -> &'static str {
        match self {
            Domain::Time => "time",
            Domain::Freq => "freq",
            Domain::Csi => "csi",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Named weight tensors, ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self { map: BTreeMap::new() }
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter tensor {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter tensor {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> u64 {
        self.map.values().map(|t| t.len() as u64).sum()
    }

    /// Element-wise `self += rhs` over identically-shaped sets.
    pub fn add_assign(&mut self, rhs: &ParameterSet<T>) {
        debug_assert_eq!(self.map.len(), rhs.map.len());
        for ((_, a), (_, b)) in self.map.iter_mut().zip(rhs.map.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data().iter()) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.map.values_mut() {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn zeros_like(&self) -> ParameterSet<T> {
        let map = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
            .collect();
        ParameterSet { map }
    }

    pub fn l2_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

impl ParameterSet<f32> {
    pub fn to_f64(&self) -> ParameterSet<f64> {
        ParameterSet {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.to_f64())).collect(),
        }
    }
}

/// Which parameter tensors a model variant carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Three backbones plus the fusion head.
    Fused,
    /// One backbone plus the auxiliary head, for staged pre-training.
    SingleDomain(Domain),
}

fn backbone_shapes(cfg: &BackboneConfig, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
    let fb = &cfg.filterbank;
    out.push((format!("{prefix}.fb.w"), vec![fb.out_channels, 2, fb.kernel]));
    out.push((format!("{prefix}.fb.b"), vec![fb.out_channels]));
    let mut ci = fb.out_channels;
    for (idx, ds) in cfg.ds_layers.iter().enumerate() {
        let n = idx + 1;
        out.push((format!("{prefix}.ds{n}.dw.w"), vec![ci, ds.kernel]));
        out.push((format!("{prefix}.ds{n}.dw.b"), vec![ci]));
        out.push((format!("{prefix}.ds{n}.pw.w"), vec![ds.out_channels, ci]));
        out.push((format!("{prefix}.ds{n}.pw.b"), vec![ds.out_channels]));
        ci = ds.out_channels;
    }
}

/// Expected `(name, dims)` pairs for a scope under a config.
pub fn expected_shapes(cfg: &ModelConfig, scope: Scope) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    match scope {
        Scope::Fused => {
            for d in Domain::ALL {
                backbone_shapes(cfg.backbone(d), d.key(), &mut shapes);
            }
            let fin = cfg.fused_feature_len();
            shapes.push(("head.fc1.w".into(), vec![cfg.head_hidden, fin]));
            shapes.push(("head.fc1.b".into(), vec![cfg.head_hidden]));
            shapes.push(("head.fc2.w".into(), vec![cfg.classes, cfg.head_hidden]));
            shapes.push(("head.fc2.b".into(), vec![cfg.classes]));
        }
        Scope::SingleDomain(d) => {
            backbone_shapes(cfg.backbone(d), d.key(), &mut shapes);
            let fin = cfg.backbone(d).feature_len();
            shapes.push(("aux.fc1.w".into(), vec![cfg.aux_hidden, fin]));
            shapes.push(("aux.fc1.b".into(), vec![cfg.aux_hidden]));
            shapes.push(("aux.fc2.w".into(), vec![cfg.classes, cfg.aux_hidden]));
            shapes.push(("aux.fc2.b".into(), vec![cfg.classes]));
        }
    }
    shapes
}

/// Fan-in-scaled uniform weights, zero biases, drawn in name order from a
/// ChaCha stream so initialization is reproducible from the seed alone.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, scope: Scope, seed: u64) -> ParameterSet<T> {
    let mut shapes = expected_shapes(cfg, scope);
    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = ParameterSet::default();
    for (name, dims) in shapes {
        let n: usize = dims.iter().product();
        let tensor = if name.ends_with(".b") {
            Tensor::zeros(&dims)
        } else {
            let fan_in: usize = dims[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let data: Vec<T> = (0..n)
                .map(|_| T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * limit))
                .collect();
            Tensor::from_vec(&dims, data).expect("consistent init dims")
        };
        params.insert(name, tensor);
    }
    params
}

/// Inference / training mode for the fused forward pass.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    Eval,
    /// Dropout active, mask drawn from the given seed.
    Train { dropout_seed: u64 },
}

struct DsStage<T: Scalar> {
    dw_out: Vec<T>,
    pw_pre: Vec<T>,
    act: Vec<T>,
    dw_shape: ConvShape,
}

/// Forward activations retained for one backbone's backward pass.
pub struct BackboneCache<T: Scalar> {
    input: Vec<T>,
    fb_shape: ConvShape,
    fb_pre: Vec<T>,
    fb_act: Vec<T>,
    ds: Vec<DsStage<T>>,
    feature: Vec<T>,
}

impl<T: Scalar> BackboneCache<T> {
    pub fn feature(&self) -> &[T] {
        &self.feature
    }
}

pub struct HeadCache<T: Scalar> {
    features: Vec<T>,
    fc1_pre: Vec<T>,
    mask: Option<Vec<T>>,
    dropped: Vec<T>,
    probs: Vec<T>,
}

pub struct FusedCache<T: Scalar> {
    pub backbones: [BackboneCache<T>; 3],
    head: HeadCache<T>,
}

impl<T: Scalar> FusedCache<T> {
    pub fn probs(&self) -> &[T] {
        &self.head.probs
    }
}

pub struct AuxCache<T: Scalar> {
    backbone: BackboneCache<T>,
    fc1_pre: Vec<T>,
    act1: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> AuxCache<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Raw per-sample inputs for the three domains, as `[2, L]` I/Q tensors.
pub struct DomainTensors<T: Scalar> {
    pub time: Tensor<T>,
    pub freq: Tensor<T>,
    pub csi: Tensor<T>,
}

impl<T: Scalar> DomainTensors<T> {
    fn get(&self, d: Domain) -> &Tensor<T> {
        match d {
            Domain::Time => &self.time,
            Domain::Freq => &self.freq,
            Domain::Csi => &self.csi,
        }
    }
}

/// A configured network bound to one parameter set.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    scope: Scope,
    params: ParameterSet<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new_random(cfg: ModelConfig, scope: Scope, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg, scope, seed);
        Ok(Self { cfg, scope, params })
    }

    /// Bind existing parameters, verifying every expected tensor and shape.
    pub fn from_params(cfg: ModelConfig, scope: Scope, params: ParameterSet<T>) -> Result<Self> {
        cfg.validate()?;
        let expected = expected_shapes(&cfg, scope);
        if expected.len() != params.len() {
            return Err(Error::Shape(format!(
                "parameter set has {} tensors, config expects {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, dims) in &expected {
            let t = params.get(name)?;
            if t.dims() != dims.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {name:?} has dims {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
        }
        Ok(Self { cfg, scope, params })
    }

    /// A fused model whose backbones are copied from three single-domain
    /// parameter sets; the fusion head is freshly initialized from `seed`.
    pub fn fused_from_pretrained(
        cfg: ModelConfig,
        seed: u64,
        domain_params: [&ParameterSet<T>; 3],
    ) -> Result<Self> {
        let mut model = Self::new_random(cfg, Scope::Fused, seed)?;
        for (d, source) in Domain::ALL.into_iter().zip(domain_params) {
            let prefix = format!("{}.", d.key());
            for (name, tensor) in source.iter() {
                if name.starts_with(&prefix) {
                    let dst = model.params.get_mut(name)?;
                    if dst.dims() != tensor.dims() {
                        return Err(Error::Shape(format!(
                            "pretrained tensor {name:?} dims {:?} do not match config {:?}",
                            tensor.dims(),
                            dst.dims()
                        )));
                    }
                    *dst = tensor.clone();
                }
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet<T> {
        self.params
    }

    fn tensor(&self, name: &str) -> &Tensor<T> {
        self.params.get(name).expect("validated at construction")
    }

    /// Standardize the input and run one backbone to its pooled feature.
    pub fn backbone_forward(&self, domain: Domain, x: &Tensor<T>) -> Result<BackboneCache<T>> {
        let bb = self.cfg.backbone(domain);
        let li = self.cfg.input_len(domain);
        if x.dims() != [2, li] {
            return Err(Error::Shape(format!(
                "{domain} input dims {:?}, expected [2, {li}]",
                x.dims()
            )));
        }
        let mut xin = x.clone();
        xin.standardize_iq();
        let input = xin.data().to_vec();
        let p = domain.key();

        let fb = &bb.filterbank;
        let fb_shape = ConvShape::same(2, li, fb.out_channels, fb.kernel, fb.stride);
        let fb_pre = conv_forward(
            &input,
            self.tensor(&format!("{p}.fb.w")).data(),
            self.tensor(&format!("{p}.fb.b")).data(),
            &fb_shape,
        );
        let fb_act = relu(&fb_pre);

        let mut stages: Vec<DsStage<T>> = Vec::with_capacity(bb.ds_layers.len());
        let mut ci = fb.out_channels;
        let mut l = fb_shape.lo;
        for (idx, ds) in bb.ds_layers.iter().enumerate() {
            let n = idx + 1;
            let dw_shape = ConvShape::same(ci, l, ci, ds.kernel, ds.stride);
            let prev: &[T] = if idx == 0 { &fb_act } else { &stages[idx - 1].act };
            let dw_out = depthwise_forward(
                prev,
                self.tensor(&format!("{p}.ds{n}.dw.w")).data(),
                self.tensor(&format!("{p}.ds{n}.dw.b")).data(),
                &dw_shape,
            );
            let pw_pre = pointwise_forward(
                &dw_out,
                self.tensor(&format!("{p}.ds{n}.pw.w")).data(),
                self.tensor(&format!("{p}.ds{n}.pw.b")).data(),
                ci,
                ds.out_channels,
                dw_shape.lo,
            );
            let act = relu(&pw_pre);
            stages.push(DsStage { dw_out, pw_pre, act, dw_shape });
            ci = ds.out_channels;
            l = dw_shape.lo;
        }

        let feature = global_avg_pool(&stages.last().unwrap().act, ci, l);
        Ok(BackboneCache { input, fb_shape, fb_pre, fb_act, ds: stages, feature })
    }

    /// Gradient of the loss w.r.t. this backbone's parameters, given the
    /// gradient at its pooled feature vector.
    fn backbone_backward(
        &self,
        domain: Domain,
        cache: &BackboneCache<T>,
        dfeature: &[T],
        grads: &mut ParameterSet<T>,
    ) {
        let bb = self.cfg.backbone(domain);
        let p = domain.key();
        let last = cache.ds.last().unwrap();
        let c_last = bb.ds_layers.last().unwrap().out_channels;
        let l_last = last.dw_shape.lo;
        let mut dact = global_avg_pool_backward(dfeature, c_last, l_last);

        for idx in (0..bb.ds_layers.len()).rev() {
            let n = idx + 1;
            let ds = &bb.ds_layers[idx];
            let stage = &cache.ds[idx];
            let ci = stage.dw_shape.ci;
            let lo = stage.dw_shape.lo;
            let dz = relu_backward(&stage.pw_pre, &dact);
            let (d_dw_out, dpw_w, dpw_b) = pointwise_backward(
                &stage.dw_out,
                self.tensor(&format!("{p}.ds{n}.pw.w")).data(),
                &dz,
                ci,
                ds.out_channels,
                lo,
            );
            accumulate(grads, &format!("{p}.ds{n}.pw.w"), &dpw_w);
            accumulate(grads, &format!("{p}.ds{n}.pw.b"), &dpw_b);
            let prev: &[T] = if idx == 0 { &cache.fb_act } else { &cache.ds[idx - 1].act };
            let (dprev, ddw_w, ddw_b) = depthwise_backward(
                prev,
                self.tensor(&format!("{p}.ds{n}.dw.w")).data(),
                &d_dw_out,
                &stage.dw_shape,
            );
            accumulate(grads, &format!("{p}.ds{n}.dw.w"), &ddw_w);
            accumulate(grads, &format!("{p}.ds{n}.dw.b"), &ddw_b);
            dact = dprev;
        }

        let dz = relu_backward(&cache.fb_pre, &dact);
        let (_, dfb_w, dfb_b) = conv_backward(
            &cache.input,
            self.tensor(&format!("{p}.fb.w")).data(),
            &dz,
            &cache.fb_shape,
            false, // input gradient is never needed
        );
        accumulate(grads, &format!("{p}.fb.w"), &dfb_w);
        accumulate(grads, &format!("{p}.fb.b"), &dfb_b);
    }

    /// Full three-domain forward to class posteriors.
    pub fn forward_fused(
        &self,
        x: &DomainTensors<T>,
        mode: ForwardMode,
    ) -> Result<FusedCache<T>> {
        if !matches!(self.scope, Scope::Fused) {
            return Err(Error::Config("model does not carry fused parameters".into()));
        }
        let backbones = [
            self.backbone_forward(Domain::Time, x.get(Domain::Time))?,
            self.backbone_forward(Domain::Freq, x.get(Domain::Freq))?,
            self.backbone_forward(Domain::Csi, x.get(Domain::Csi))?,
        ];
        let features: Vec<T> = backbones.iter().flat_map(|b| b.feature.iter().cloned()).collect();
        let head = self.head_forward(&features, mode);
        Ok(FusedCache { backbones, head })
    }

    /// Fusion head on already-pooled features (the split RU/DU path computes
    /// backbones on separate hosts and joins here).
    pub fn head_forward(&self, features: &[T], mode: ForwardMode) -> HeadCache<T> {
        let fin = self.cfg.fused_feature_len();
        debug_assert_eq!(features.len(), fin);
        let fc1_pre = dense_forward(
            features,
            self.tensor("head.fc1.w").data(),
            self.tensor("head.fc1.b").data(),
            fin,
            self.cfg.head_hidden,
        );
        let act1 = relu(&fc1_pre);
        let (mask, dropped) = match mode {
            ForwardMode::Eval => (None, act1),
            ForwardMode::Train { dropout_seed } => {
                let mask: Vec<T> =
                    dropout_mask(self.cfg.head_hidden, self.cfg.head_dropout, dropout_seed);
                let dropped = act1.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                (Some(mask), dropped)
            }
        };
        let logits = dense_forward(
            &dropped,
            self.tensor("head.fc2.w").data(),
            self.tensor("head.fc2.b").data(),
            self.cfg.head_hidden,
            self.cfg.classes,
        );
        let probs = softmax(&logits);
        HeadCache { features: features.to_vec(), fc1_pre, mask, dropped, probs }
    }

    /// Per-sample parameter gradients of the cross-entropy loss.
    pub fn backward_fused(&self, cache: &FusedCache<T>, label: usize) -> ParameterSet<T> {
        let mut grads = self.params.zeros_like();
        let fin = self.cfg.fused_feature_len();
        let dlogits = cross_entropy_logit_grad(&cache.head.probs, label);
        let (ddropped, dfc2_w, dfc2_b) = dense_backward(
            &cache.head.dropped,
            self.tensor("head.fc2.w").data(),
            &dlogits,
            self.cfg.head_hidden,
            self.cfg.classes,
        );
        accumulate(&mut grads, "head.fc2.w", &dfc2_w);
        accumulate(&mut grads, "head.fc2.b", &dfc2_b);
        let dact1: Vec<T> = match &cache.head.mask {
            Some(mask) => ddropped.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
            None => ddropped,
        };
        let dfc1 = relu_backward(&cache.head.fc1_pre, &dact1);
        let (dfeatures, dfc1_w, dfc1_b) = dense_backward(
            &cache.head.features,
            self.tensor("head.fc1.w").data(),
            &dfc1,
            fin,
            self.cfg.head_hidden,
        );
        accumulate(&mut grads, "head.fc1.w", &dfc1_w);
        accumulate(&mut grads, "head.fc1.b", &dfc1_b);

        let mut offset = 0;
        for (d, cacheb) in Domain::ALL.into_iter().zip(cache.backbones.iter()) {
            let width = self.cfg.backbone(d).feature_len();
            self.backbone_backward(d, cacheb, &dfeatures[offset..offset + width], &mut grads);
            offset += width;
        }
        grads
    }

    /// Single-domain forward through the auxiliary head.
    pub fn forward_aux(&self, x: &Tensor<T>) -> Result<AuxCache<T>> {
        let domain = match self.scope {
            Scope::SingleDomain(d) => d,
            Scope::Fused => {
                return Err(Error::Config("model does not carry auxiliary parameters".into()))
            }
        };
        let backbone = self.backbone_forward(domain, x)?;
        let fin = self.cfg.backbone(domain).feature_len();
        let fc1_pre = dense_forward(
            &backbone.feature,
            self.tensor("aux.fc1.w").data(),
            self.tensor("aux.fc1.b").data(),
            fin,
            self.cfg.aux_hidden,
        );
        let act1 = relu(&fc1_pre);
        let logits = dense_forward(
            &act1,
            self.tensor("aux.fc2.w").data(),
            self.tensor("aux.fc2.b").data(),
            self.cfg.aux_hidden,
            self.cfg.classes,
        );
        let probs = softmax(&logits);
        Ok(AuxCache { backbone, fc1_pre, act1, probs })
    }

    pub fn backward_aux(&self, cache: &AuxCache<T>, label: usize) -> ParameterSet<T> {
        let domain = match self.scope {
            Scope::SingleDomain(d) => d,
            Scope::Fused => unreachable!("forward_aux rejects fused scope"),
        };
        let mut grads = self.params.zeros_like();
        let fin = self.cfg.backbone(domain).feature_len();
        let dlogits = cross_entropy_logit_grad(&cache.probs, label);
        let (dact1, dfc2_w, dfc2_b) = dense_backward(
            &cache.act1,
            self.tensor("aux.fc2.w").data(),
            &dlogits,
            self.cfg.aux_hidden,
            self.cfg.classes,
        );
        accumulate(&mut grads, "aux.fc2.w", &dfc2_w);
        accumulate(&mut grads, "aux.fc2.b", &dfc2_b);
        let dfc1 = relu_backward(&cache.fc1_pre, &dact1);
        let (dfeature, dfc1_w, dfc1_b) = dense_backward(
            &cache.backbone.feature,
            self.tensor("aux.fc1.w").data(),
            &dfc1,
            fin,
            self.cfg.aux_hidden,
        );
        accumulate(&mut grads, "aux.fc1.w", &dfc1_w);
        accumulate(&mut grads, "aux.fc1.b", &dfc1_b);
        self.backbone_backward(domain, &cache.backbone, &dfeature, &mut grads);
        grads
    }

    /// Evaluation-mode posterior and argmax class.
    pub fn predict(&self, x: &DomainTensors<T>) -> Result<(usize, Vec<T>)> {
        let cache = self.forward_fused(x, ForwardMode::Eval)?;
        let probs = cache.head.probs;
        Ok((argmax(&probs), probs))
    }
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn accumulate<T: Scalar>(grads: &mut ParameterSet<T>, name: &str, values: &[T]) {
    let t = grads.get_mut(name).expect("gradient tensor exists");
    debug_assert_eq!(t.len(), values.len());
    for (g, v) in t.data_mut().iter_mut().zip(values) {
        *g = *g + *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_domains(cfg: &ModelConfig) -> DomainTensors<f32> {
        DomainTensors {
            time: Tensor::zeros(&[2, cfg.input_lens[0]]),
            freq: Tensor::zeros(&[2, cfg.input_lens[1]]),
            csi: Tensor::zeros(&[2, cfg.input_lens[2]]),
        }
    }

    fn random_domains(cfg: &ModelConfig, seed: u64) -> DomainTensors<f32> {
        let mut s = seed;
        let mut lcg = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) as f32
        };
        let mk = |l: usize, f: &mut dyn FnMut() -> f32| {
            Tensor::from_vec(&[2, l], (0..2 * l).map(|_| f()).collect()).unwrap()
        };
        DomainTensors {
            time: mk(cfg.input_lens[0], &mut lcg),
            freq: mk(cfg.input_lens[1], &mut lcg),
            csi: mk(cfg.input_lens[2], &mut lcg),
        }
    }

    #[test]
    fn default_length_chains_match_closed_form() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.time.length_chain(4096), vec![4096, 1024, 512, 256, 128, 64]);
        assert_eq!(cfg.csi.length_chain(1638), vec![1638, 410, 205, 103, 52, 26]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_feature_and_uniform_probs() {
        let cfg = ModelConfig::tiny();
        // Random weights but zero biases (init_params already zeroes biases).
        let model = Model::<f32>::new_random(cfg.clone(), Scope::Fused, 1).unwrap();
        let x = zero_domains(&cfg);
        let cache = model.forward_fused(&x, ForwardMode::Eval).unwrap();
        for b in &cache.backbones {
            assert!(b.feature().iter().all(|&v| v == 0.0));
        }
        // Zero features + zero head biases -> uniform posterior.
        let p = cache.probs();
        for &v in p {
            assert!((v - 1.0 / 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = ModelConfig::tiny();
        let model = Model::<f32>::new_random(cfg.clone(), Scope::Fused, 7).unwrap();
        let x = random_domains(&cfg, 3);
        let cache = model.forward_fused(&x, ForwardMode::Eval).unwrap();
        let total: f32 = cache.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(cache.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let model = Model::<f32>::new_random(cfg.clone(), Scope::Fused, 11).unwrap();
        let x = random_domains(&cfg, 5);
        let a = model.forward_fused(&x, ForwardMode::Eval).unwrap();
        let b = model.forward_fused(&x, ForwardMode::Eval).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn aux_head_matches_composed_dense_oracle() {
        let cfg = ModelConfig::tiny();
        let model =
            Model::<f64>::new_random(cfg.clone(), Scope::SingleDomain(Domain::Csi), 13).unwrap();
        let mut s = 17u64;
        let mut lcg = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x = Tensor::from_vec(
            &[2, cfg.input_lens[2]],
            (0..2 * cfg.input_lens[2]).map(|_| lcg()).collect(),
        )
        .unwrap();
        let cache = model.forward_aux(&x).unwrap();

        // Oracle: dense -> relu -> dense -> softmax on the pooled feature.
        let f = cache.backbone.feature();
        let w1 = model.params().get("aux.fc1.w").unwrap();
        let b1 = model.params().get("aux.fc1.b").unwrap();
        let w2 = model.params().get("aux.fc2.w").unwrap();
        let b2 = model.params().get("aux.fc2.b").unwrap();
        let nin = f.len();
        let nh = cfg.aux_hidden;
        let mut hidden = vec![0f64; nh];
        for o in 0..nh {
            let mut acc = b1.data()[o];
            for i in 0..nin {
                acc += w1.data()[o * nin + i] * f[i];
            }
            hidden[o] = acc.max(0.0);
        }
        let mut logits = vec![0f64; 7];
        for o in 0..7 {
            let mut acc = b2.data()[o];
            for i in 0..nh {
                acc += w2.data()[o * nh + i] * hidden[i];
            }
            logits[o] = acc;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (got, want) in cache.probs().iter().zip(exps.iter().map(|e| e / total)) {
            assert!((got - want).abs() < 1e-5);
        }
        let sum: f64 = cache.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pretrained_transfer_copies_backbones() {
        let cfg = ModelConfig::tiny();
        let dm: Vec<ParameterSet<f32>> = Domain::ALL
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                Model::<f32>::new_random(cfg.clone(), Scope::SingleDomain(d), 100 + i as u64)
                    .unwrap()
                    .into_params()
            })
            .collect();
        let fused =
            Model::<f32>::fused_from_pretrained(cfg.clone(), 999, [&dm[0], &dm[1], &dm[2]])
                .unwrap();
        assert_eq!(
            fused.params().get("time.fb.w").unwrap(),
            dm[0].get("time.fb.w").unwrap()
        );
        assert_eq!(
            fused.params().get("csi.ds4.pw.w").unwrap(),
            dm[2].get("csi.ds4.pw.w").unwrap()
        );
        // Head is fresh, not copied from anywhere.
        assert!(fused.params().get("head.fc1.w").is_ok());
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let cfg = ModelConfig::tiny();
        let model = Model::<f64>::new_random(cfg.clone(), Scope::Fused, 23).unwrap();
        let xa = {
            let d = random_domains(&cfg, 31);
            DomainTensors { time: d.time.to_f64(), freq: d.freq.to_f64(), csi: d.csi.to_f64() }
        };
        let xb = {
            let d = random_domains(&cfg, 37);
            DomainTensors { time: d.time.to_f64(), freq: d.freq.to_f64(), csi: d.csi.to_f64() }
        };
        let ga = model
            .backward_fused(&model.forward_fused(&xa, ForwardMode::Eval).unwrap(), 2);
        let gb = model
            .backward_fused(&model.forward_fused(&xb, ForwardMode::Eval).unwrap(), 5);
        let mut mean = ga.zeros_like();
        mean.add_assign(&ga);
        mean.add_assign(&gb);
        mean.scale(0.5);
        for ((_, m), ((_, a), (_, b))) in mean.iter().zip(ga.iter().zip(gb.iter())) {
            for ((mv, av), bv) in m.data().iter().zip(a.data()).zip(b.data()) {
                assert!((mv - 0.5 * (av + bv)).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences over every parameter of every layer type,
    /// run in double precision on the tiny config.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = ModelConfig::tiny();
        let model = Model::<f64>::new_random(cfg.clone(), Scope::Fused, 4242).unwrap();
        let batch: Vec<(DomainTensors<f64>, usize, u64)> = vec![
            (
                {
                    let d = random_domains(&cfg, 101);
                    DomainTensors {
                        time: d.time.to_f64(),
                        freq: d.freq.to_f64(),
                        csi: d.csi.to_f64(),
                    }
                },
                2,
                7001,
            ),
            (
                {
                    let d = random_domains(&cfg, 103);
                    DomainTensors {
                        time: d.time.to_f64(),
                        freq: d.freq.to_f64(),
                        csi: d.csi.to_f64(),
                    }
                },
                5,
                7002,
            ),
        ];

        let loss_of = |m: &Model<f64>| -> f64 {
            batch
                .iter()
                .map(|(x, label, seed)| {
                    let cache =
                        m.forward_fused(x, ForwardMode::Train { dropout_seed: *seed }).unwrap();
                    crate::nnet::layers::cross_entropy(cache.probs(), *label)
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let mut analytic = model.params().zeros_like();
        for (x, label, seed) in &batch {
            let cache =
                model.forward_fused(x, ForwardMode::Train { dropout_seed: *seed }).unwrap();
            analytic.add_assign(&model.backward_fused(&cache, *label));
        }
        analytic.scale(1.0 / batch.len() as f64);

        let names: Vec<String> = model.params().names().cloned().collect();
        let eps = 1e-3;
        let mut rel_errors = Vec::new();
        let mut tagged: Vec<(f64, String, usize, f64, f64)> = Vec::new();
        for name in &names {
            let n = model.params().get(name).unwrap().len();
            for i in 0..n {
                let mut probe = model.clone();
                let orig = probe.params().get(name).unwrap().data()[i];
                probe.params_mut().get_mut(name).unwrap().data_mut()[i] = orig + eps;
                let up = loss_of(&probe);
                probe.params_mut().get_mut(name).unwrap().data_mut()[i] = orig - eps;
                let down = loss_of(&probe);
                let numeric = (up - down) / (2.0 * eps);
                let exact = analytic.get(name).unwrap().data()[i];
                let scale = numeric.abs().max(exact.abs());
                let rel = if scale < 1e-8 { 0.0 } else { (numeric - exact).abs() / scale };
                rel_errors.push(rel);
                tagged.push((rel, name.clone(), i, numeric, exact));
            }
        }
        tagged.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (rel, name, i, numeric, exact) in tagged.iter().take(5) {
            if *rel > 1e-3 {
                eprintln!("grad mismatch {name}[{i}]: numeric {numeric:.6e} analytic {exact:.6e} rel {rel:.3e}");
            }
        }
        rel_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max = *rel_errors.last().unwrap();
        let median = rel_errors[rel_errors.len() / 2];
        assert!(max < 1e-2, "max relative gradient error {max}");
        assert!(median < 1e-3, "median relative gradient error {median}");
    }

    #[test]
    #[ignore = "manual throughput probe"]
    fn forward_backward_throughput() {
        let cfg = ModelConfig::default();
        let model = Model::<f32>::new_random(cfg.clone(), Scope::Fused, 1).unwrap();
        let x = random_domains(&cfg, 9);
        let macs = crate::nnet::count::count_macs(&cfg).total();
        let start = std::time::Instant::now();
        let iters = 50;
        for _ in 0..iters {
            let cache = model.forward_fused(&x, ForwardMode::Eval).unwrap();
            std::hint::black_box(cache.probs());
        }
        let fwd = start.elapsed().as_secs_f64() / iters as f64;
        let start = std::time::Instant::now();
        for _ in 0..iters {
            let cache = model
                .forward_fused(&x, ForwardMode::Train { dropout_seed: 3 })
                .unwrap();
            std::hint::black_box(model.backward_fused(&cache, 2));
        }
        let both = start.elapsed().as_secs_f64() / iters as f64;
        println!(
            "forward {:.3} ms ({:.2} GMAC/s), forward+backward {:.3} ms ({:.2} GMAC/s eq)",
            fwd * 1e3,
            macs as f64 / fwd / 1e9,
            both * 1e3,
            3.0 * macs as f64 / both / 1e9,
        );
    }

    #[test]
    fn saturated_correct_prediction_has_vanishing_gradient() {
        let cfg = ModelConfig::tiny();
        let mut model = Model::<f64>::new_random(cfg.clone(), Scope::Fused, 29).unwrap();
        // Saturate class 3 via its output bias.
        model.params_mut().get_mut("head.fc2.b").unwrap().data_mut()[3] = 60.0;
        let d = random_domains(&cfg, 41);
        let x = DomainTensors { time: d.time.to_f64(), freq: d.freq.to_f64(), csi: d.csi.to_f64() };
        let cache = model.forward_fused(&x, ForwardMode::Eval).unwrap();
        assert!(cache.probs()[3] > 1.0 - 1e-12);
        let grads = model.backward_fused(&cache, 3);
        assert!(grads.l2_norm() < 1e-6, "gradient norm {}", grads.l2_norm());
    }
}
