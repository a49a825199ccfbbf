//! Clip-level outcome classifiers over RGB, optical flow, F-T and gripper
//! streams with late and intermediate fusion (variants A to D).
//!
//! The video streams use the frozen backbone followed by a trainable adapter
//! layer; signal streams use a small temporal convolution encoder with
//! global average pooling. Every branch emits outcome logits and the model
//! output is their mean.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{NormalizationStats, Wrench};
use crate::error::{Error, Result};
use crate::features::{uniform_indices, wrench_matrix, Backbone, ClipInput, FeatureSequence, CLIP_LEN, STREAM_WIDTH};
use crate::labels::{OutcomeLabel, Task};
use crate::metrics::{outcome_accuracy, MetricsReport};
use crate::nn::{
    argmax, concat_cols, log_softmax_backward, log_softmax_rows, relu, relu_backward, seeded_rng, Conv1d, Param,
    Parameterized, Rng64, Sgd,
};

/// Subset of the four classifier input streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamSet {
    pub rgb: bool,
    pub flow: bool,
    pub ft: bool,
    pub gripper: bool,
}

impl StreamSet {
    pub const ALL: StreamSet = StreamSet { rgb: true, flow: true, ft: true, gripper: true };
    pub const VIDEO: StreamSet = StreamSet { rgb: true, flow: true, ft: false, gripper: false };

    pub fn count(&self) -> usize {
        [self.rgb, self.flow, self.ft, self.gripper].iter().filter(|&&b| b).count()
    }

    pub fn has_signals(&self) -> bool {
        self.ft || self.gripper
    }

    /// `V` expands to both video streams.
    pub fn from_modalities(m: crate::modality::Modalities) -> Self {
        StreamSet { rgb: m.video, flow: m.video, ft: m.ft, gripper: m.gripper }
    }
}

impl fmt::Display for StreamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.rgb, "rgb"), (self.flow, "flow"), (self.ft, "ft"), (self.gripper, "gripper")]
            .iter()
            .filter_map(|&(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for StreamSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut out = StreamSet::default();
        for part in s.split([',', '+']).map(|p| p.trim().to_ascii_lowercase()).filter(|p| !p.is_empty()) {
            match part.as_str() {
                "rgb" => out.rgb = true,
                "flow" => out.flow = true,
                "v" | "video" => {
                    out.rgb = true;
                    out.flow = true
                }
                "ft" | "f-t" | "force" => out.ft = true,
                "g" | "gripper" => out.gripper = true,
                other => return Err(format!("unknown stream `{other}`")),
            }
        }
        if out.count() == 0 {
            return Err("stream set is empty".into());
        }
        Ok(out)
    }
}

impl Serialize for StreamSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StreamSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionVariant {
    A,
    B,
    C,
    D,
}

impl FromStr for FusionVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().trim_start_matches("i3d-") {
            "a" => Ok(FusionVariant::A),
            "b" => Ok(FusionVariant::B),
            "c" => Ok(FusionVariant::C),
            "d" => Ok(FusionVariant::D),
            other => Err(format!("unknown fusion variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VideoStream {
    Rgb,
    Flow,
}

/// One logit-emitting branch: an optional video stream, optionally fused
/// with the signal streams through a single FC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchSpec {
    pub video: Option<VideoStream>,
    pub ft: bool,
    pub gripper: bool,
}

impl BranchSpec {
    fn video(v: VideoStream) -> Self {
        BranchSpec { video: Some(v), ft: false, gripper: false }
    }

    fn signal_channels(&self) -> usize {
        6 * self.ft as usize + self.gripper as usize
    }
}

/// Branch layout for `variant` over `streams`, and the variant it reduces
/// to. A single stream, or no signal stream, always reduces to A.
pub fn topology(variant: FusionVariant, streams: StreamSet) -> Result<(FusionVariant, Vec<BranchSpec>)> {
    use FusionVariant::*;
    use VideoStream::*;
    if streams.count() == 0 {
        return Err(Error::TopologyError("no input streams".into()));
    }
    let effective = if streams.count() == 1 || !streams.has_signals() { A } else { variant };
    let fused = |v| BranchSpec { video: Some(v), ft: streams.ft, gripper: streams.gripper };
    let branches = match effective {
        A => {
            let mut b = Vec::new();
            if streams.rgb {
                b.push(BranchSpec::video(Rgb));
            }
            if streams.flow {
                b.push(BranchSpec::video(Flow));
            }
            if streams.ft {
                b.push(BranchSpec { video: None, ft: true, gripper: false });
            }
            if streams.gripper {
                b.push(BranchSpec { video: None, ft: false, gripper: true });
            }
            b
        }
        B => {
            if !streams.rgb {
                return Err(Error::TopologyError(format!("variant B fuses signals into RGB; got {streams}")));
            }
            let mut b = vec![fused(Rgb)];
            if streams.flow {
                b.push(BranchSpec::video(Flow));
            }
            b
        }
        C => {
            if !streams.flow {
                return Err(Error::TopologyError(format!("variant C fuses signals into flow; got {streams}")));
            }
            let mut b = vec![fused(Flow)];
            if streams.rgb {
                b.push(BranchSpec::video(Rgb));
            }
            b
        }
        D => {
            if !(streams.rgb && streams.flow) {
                return Err(Error::TopologyError(format!("variant D needs both RGB and flow; got {streams}")));
            }
            vec![fused(Rgb), fused(Flow)]
        }
    };
    Ok((effective, branches))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub variant: FusionVariant,
    pub streams: StreamSet,
    /// Adapter output width on the video streams.
    pub hidden: usize,
    pub signal_channels: usize,
    pub signal_kernel: usize,
    pub clip_len: usize,
    /// Restrict the softmax to the outcomes valid for the trial's task.
    pub task_mask: bool,
}

impl ClassifierConfig {
    pub fn new(variant: FusionVariant, streams: StreamSet) -> Self {
        ClassifierConfig {
            variant,
            streams,
            hidden: 256,
            signal_channels: 64,
            signal_kernel: 5,
            clip_len: CLIP_LEN,
            task_mask: false,
        }
    }
}

/// Frozen-backbone features of one clip plus its raw signal streams.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub trial_id: String,
    pub task: Task,
    pub rgb: Array1<f64>,
    pub flow: Array1<f64>,
    /// `clip_len × 7`: normalized F-T then gripper.
    pub signals: Array2<f64>,
    pub label: Option<OutcomeLabel>,
}

fn signal_matrix(ft: &[Wrench], gripper: &[f64], stats: Option<&NormalizationStats>) -> Array2<f64> {
    let mut m = Array2::zeros((ft.len(), 7));
    m.slice_mut(s![.., ..6]).assign(&wrench_matrix(ft));
    if let Some(st) = stats {
        for mut row in m.rows_mut() {
            for c in 0..6 {
                row[c] = (row[c] - st.mean[c]) / st.std[c];
            }
        }
    }
    m.column_mut(6).iter_mut().zip(gripper).for_each(|(d, g)| *d = *g);
    m
}

impl ClipFeatures {
    /// Run the frozen backbone on a uniformly sampled clip.
    pub fn from_clip(
        clip: &ClipInput,
        backbone: &Backbone,
        trial_id: &str,
        task: Task,
        stats: Option<&NormalizationStats>,
    ) -> Result<Self> {
        let (rgb, flow) = backbone.encode_clip(&clip.rgb)?;
        Ok(ClipFeatures {
            trial_id: trial_id.to_string(),
            task,
            rgb: Array1::from(rgb),
            flow: Array1::from(flow),
            signals: signal_matrix(&clip.ft, &clip.gripper, stats),
            label: clip.label,
        })
    }

    /// Clip features from cached per-frame backbone rows: each stream is the
    /// mean of its rows at the `clip_len` uniformly spaced frames. Expects
    /// `seq.ft` already normalized.
    pub fn from_sequence(seq: &FeatureSequence, clip_len: usize) -> Result<Self> {
        if seq.backbone.ncols() != 2 * STREAM_WIDTH {
            return Err(Error::ShapeError(format!("backbone width {} != {}", seq.backbone.ncols(), 2 * STREAM_WIDTH)));
        }
        let idx = uniform_indices(seq.len(), clip_len)?;
        let rows = seq.backbone.select(Axis(0), &idx);
        let mean = rows.mean_axis(Axis(0)).expect("non-empty clip");
        let ft = seq.ft.select(Axis(0), &idx);
        let g = seq.gripper.select(Axis(0), &idx);
        Ok(ClipFeatures {
            trial_id: seq.trial_id().to_string(),
            task: seq.meta.task,
            rgb: mean.slice(s![..STREAM_WIDTH]).to_owned(),
            flow: mean.slice(s![STREAM_WIDTH..]).to_owned(),
            signals: concat_cols(&[ft.view(), g.view()]),
            label: seq.labels.as_ref().map(|l| l.outcome),
        })
    }

    fn video(&self, v: VideoStream) -> &Array1<f64> {
        match v {
            VideoStream::Rgb => &self.rgb,
            VideoStream::Flow => &self.flow,
        }
    }

    fn signals_for(&self, spec: &BranchSpec) -> Array2<f64> {
        let mut parts: Vec<ArrayView2<f64>> = Vec::new();
        if spec.ft {
            parts.push(self.signals.slice(s![.., ..6]));
        }
        if spec.gripper {
            parts.push(self.signals.slice(s![.., 6..7]));
        }
        concat_cols(&parts)
    }
}

/// Three temporal convolutions with ReLU, then a mean over time.
#[derive(Debug, Clone, PartialEq)]
struct SignalEncoder {
    convs: Vec<Conv1d>,
}

struct SignalTrace {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl SignalEncoder {
    fn new(c_in: usize, channels: usize, kernel: usize, rng: &mut Rng64) -> Self {
        SignalEncoder {
            convs: vec![
                Conv1d::new(c_in, channels, kernel, 1, rng),
                Conv1d::new(channels, channels, kernel, 1, rng),
                Conv1d::new(channels, channels, kernel, 1, rng),
            ],
        }
    }

    fn forward(&self, x: Array2<f64>) -> Result<(Array1<f64>, SignalTrace)> {
        let mut tr = SignalTrace { inputs: Vec::new(), outputs: Vec::new() };
        let mut h = x;
        for c in &self.convs {
            let y = relu(&c.forward(h.view())?);
            tr.inputs.push(h);
            tr.outputs.push(y.clone());
            h = y;
        }
        let pooled = h.mean_axis(Axis(0)).ok_or(Error::EmptyTrial)?;
        Ok((pooled, tr))
    }

    fn backward(&mut self, tr: &SignalTrace, dpooled: ndarray::ArrayView1<f64>) {
        let t = tr.outputs[0].nrows();
        let mut d = Array2::from_shape_fn((t, dpooled.len()), |(_, c)| dpooled[c] / t as f64);
        for (k, conv) in self.convs.iter_mut().enumerate().rev() {
            let dpre = relu_backward(&tr.outputs[k], &d);
            d = conv.backward(tr.inputs[k].view(), dpre.view());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    spec: BranchSpec,
    adapter: Option<Conv1d>,
    encoder: Option<SignalEncoder>,
    head: Conv1d,
}

struct BranchTrace {
    video_in: Option<Array2<f64>>,
    video_out: Option<Array2<f64>>,
    signals: Vec<SignalTrace>,
    head_in: Array2<f64>,
}

/// Learning-rate multiplier of the adapter relative to the heads.
pub const ADAPTER_LR_SCALE: f64 = 0.1;

impl Branch {
    fn new(spec: BranchSpec, cfg: &ClassifierConfig, rng: &mut Rng64) -> Self {
        let adapter = spec.video.map(|_| {
            let mut c = Conv1d::linear(STREAM_WIDTH, cfg.hidden, rng);
            c.weight.lr_scale = ADAPTER_LR_SCALE;
            c.bias.lr_scale = ADAPTER_LR_SCALE;
            c
        });
        let encoder = (spec.signal_channels() > 0)
            .then(|| SignalEncoder::new(spec.signal_channels(), cfg.signal_channels, cfg.signal_kernel, rng));
        let width = adapter.as_ref().map_or(0, |_| cfg.hidden) + encoder.as_ref().map_or(0, |_| cfg.signal_channels);
        Branch { spec, adapter, encoder, head: Conv1d::linear(width, OutcomeLabel::COUNT, rng) }
    }

    fn forward(&self, batch: &[&ClipFeatures]) -> Result<(Array2<f64>, BranchTrace)> {
        let mut parts: Vec<Array2<f64>> = Vec::new();
        let mut tr =
            BranchTrace { video_in: None, video_out: None, signals: Vec::new(), head_in: Array2::zeros((0, 0)) };
        if let (Some(v), Some(adapter)) = (self.spec.video, &self.adapter) {
            let mut x = Array2::zeros((batch.len(), STREAM_WIDTH));
            for (mut row, clip) in x.rows_mut().into_iter().zip(batch) {
                let src = clip.video(v);
                if src.len() != STREAM_WIDTH {
                    return Err(Error::ShapeError(format!("video stream has {} features", src.len())));
                }
                row.assign(src);
            }
            let y = relu(&adapter.forward(x.view())?);
            parts.push(y.clone());
            tr.video_in = Some(x);
            tr.video_out = Some(y);
        }
        if let Some(enc) = &self.encoder {
            let mut pooled = Array2::zeros((batch.len(), enc.convs[2].c_out));
            for (mut row, clip) in pooled.rows_mut().into_iter().zip(batch) {
                let (p, t) = enc.forward(clip.signals_for(&self.spec))?;
                row.assign(&p);
                tr.signals.push(t);
            }
            parts.push(pooled);
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
        tr.head_in = concat_cols(&views);
        let logits = self.head.forward(tr.head_in.view())?;
        Ok((logits, tr))
    }

    fn backward(&mut self, tr: &BranchTrace, dlogits: &Array2<f64>) {
        let dhead = self.head.backward(tr.head_in.view(), dlogits.view());
        let mut col = 0;
        if let (Some(adapter), Some(x), Some(y)) = (self.adapter.as_mut(), &tr.video_in, &tr.video_out) {
            let w = y.ncols();
            let dy = dhead.slice(s![.., col..col + w]).to_owned();
            adapter.backward(x.view(), relu_backward(y, &dy).view());
            col += w;
        }
        if let Some(enc) = self.encoder.as_mut() {
            for (i, t) in tr.signals.iter().enumerate() {
                enc.backward(t, dhead.slice(s![i, col..]));
            }
        }
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(a) = &self.adapter {
            v.extend(a.params());
        }
        if let Some(e) = &self.encoder {
            e.convs.iter().for_each(|c| v.extend(c.params()));
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(a) = &mut self.adapter {
            v.extend(a.params_mut());
        }
        if let Some(e) = &mut self.encoder {
            e.convs.iter_mut().for_each(|c| v.extend(c.params_mut()));
        }
        v.extend(self.head.params_mut());
        v
    }
}

pub struct ClassifierTrace {
    branches: Vec<BranchTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionClassifier {
    pub config: ClassifierConfig,
    pub effective_variant: FusionVariant,
    branches: Vec<Branch>,
}

impl FusionClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let (effective_variant, specs) = topology(config.variant, config.streams)?;
        let mut rng = seeded_rng(seed);
        let branches = specs.into_iter().map(|s| Branch::new(s, &config, &mut rng)).collect();
        Ok(FusionClassifier { config, effective_variant, branches })
    }

    pub fn branch_specs(&self) -> Vec<BranchSpec> {
        self.branches.iter().map(|b| b.spec).collect()
    }

    /// Mean of the branch logits, `B × 5`.
    pub fn forward(&self, batch: &[&ClipFeatures]) -> Result<Array2<f64>> {
        self.forward_traced(batch).map(|(l, _)| l)
    }

    pub fn forward_traced(&self, batch: &[&ClipFeatures]) -> Result<(Array2<f64>, ClassifierTrace)> {
        for clip in batch {
            if clip.signals.dim() != (self.config.clip_len, 7) {
                return Err(Error::ShapeError(format!(
                    "clip signals {:?}, expected ({}, 7)",
                    clip.signals.dim(),
                    self.config.clip_len
                )));
            }
        }
        let mut sum = Array2::zeros((batch.len(), OutcomeLabel::COUNT));
        let mut traces = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (l, t) = b.forward(batch)?;
            sum += &l;
            traces.push(t);
        }
        sum /= self.branches.len() as f64;
        Ok((sum, ClassifierTrace { branches: traces }))
    }

    pub fn backward(&mut self, trace: &ClassifierTrace, dlogits: &Array2<f64>) {
        let d = dlogits / self.branches.len() as f64;
        for (b, t) in self.branches.iter_mut().zip(&trace.branches) {
            b.backward(t, &d);
        }
    }

    /// Logits with task-invalid outcomes set to `-inf` when masking is on.
    pub fn masked(&self, logits: &Array2<f64>, batch: &[&ClipFeatures]) -> Array2<f64> {
        let mut out = logits.clone();
        if self.config.task_mask {
            for (mut row, clip) in out.rows_mut().into_iter().zip(batch) {
                for o in OutcomeLabel::ALL {
                    if !o.valid_for(clip.task) {
                        row[o.index()] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        out
    }

    pub fn predict(&self, batch: &[&ClipFeatures]) -> Result<Vec<OutcomeLabel>> {
        let logits = self.masked(&self.forward(batch)?, batch);
        Ok(logits.rows().into_iter().map(|r| OutcomeLabel::ALL[argmax(r.iter().copied())]).collect())
    }
}

impl Parameterized for FusionClassifier {
    fn params(&self) -> Vec<&Param> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(
    model: &FusionClassifier,
    logits: &Array2<f64>,
    batch: &[&ClipFeatures],
) -> Result<(f64, Array2<f64>)> {
    let logp = log_softmax_rows(&model.masked(logits, batch));
    let n = batch.len() as f64;
    let mut dlogp = Array2::zeros(logp.raw_dim());
    let mut loss = 0.0;
    for (i, clip) in batch.iter().enumerate() {
        let y = clip.label.ok_or(Error::MissingTarget("outcome"))?.index();
        loss -= logp[[i, y]] / n;
        dlogp[[i, y]] = -1.0 / n;
    }
    Ok((loss, log_softmax_backward(&logp, &dlogp)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Epochs without improvement before halving the learning rate.
    pub plateau: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            plateau: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    pub epochs: Vec<ClassifierEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Minibatch SGD with momentum; early stopping and learning-rate halving
/// on validation accuracy when a validation set is given.
pub fn train_classifier(
    model: &mut FusionClassifier,
    train: &[ClipFeatures],
    val: &[ClipFeatures],
    config: &ClassifierTrainConfig,
) -> Result<ClassifierHistory> {
    if train.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut rng = seeded_rng(config.seed);
    let mut opt = Sgd::new(config.lr, config.momentum);
    let mut history = ClassifierHistory::default();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let (mut since_best, mut since_lr) = (0, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&ClipFeatures> = chunk.iter().map(|&i| &train[i]).collect();
            let (logits, trace) = model.forward_traced(&batch)?;
            let (loss, dlogits) = cross_entropy(model, &logits, &batch)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceError { epoch, loss });
            }
            model.zero_grad();
            model.backward(&trace, &dlogits);
            opt.step(model.params_mut());
            total += loss * batch.len() as f64;
        }
        let val_acc = if val.is_empty() { None } else { Some(evaluate_classifier(model, val)?.0) };
        history.epochs.push(ClassifierEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            lr: opt.lr,
            val_accuracy: val_acc,
        });

        match val_acc {
            Some(acc) if best.as_ref().is_none_or(|(b, _)| acc > *b) => {
                best = Some((acc, model.export_weights()));
                history.best_epoch = epoch;
                since_best = 0;
                since_lr = 0;
            }
            Some(_) => {
                since_best += 1;
                since_lr += 1;
                if since_lr >= config.plateau {
                    opt.lr *= 0.5;
                    since_lr = 0;
                }
                if since_best >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
            None => history.best_epoch = epoch,
        }
    }
    if let Some((_, w)) = best {
        model.import_weights(&w)?;
    }
    Ok(history)
}

/// Outcome accuracy (percent) over labelled clips, and all predictions.
pub fn evaluate_classifier(model: &FusionClassifier, clips: &[ClipFeatures]) -> Result<(f64, Vec<OutcomeLabel>)> {
    let mut preds = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(32) {
        let batch: Vec<&ClipFeatures> = chunk.iter().collect();
        preds.extend(model.predict(&batch)?);
    }
    let (p, g): (Vec<OutcomeLabel>, Vec<OutcomeLabel>) =
        preds.iter().zip(clips).filter_map(|(p, c)| c.label.map(|l| (*p, l))).unzip();
    if g.is_empty() {
        return Err(Error::NoLabels("no labelled clips".into()));
    }
    Ok((outcome_accuracy(&p, &g)?, preds))
}

pub fn classifier_report(model: &FusionClassifier, clips: &[ClipFeatures]) -> Result<MetricsReport> {
    Ok(MetricsReport::single(Some(evaluate_classifier(model, clips)?.0), None))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub config: ClassifierConfig,
    pub seed: u64,
    pub outcome_vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ft_stats: Option<NormalizationStats>,
    pub weights: Vec<Vec<f64>>,
}

impl ClassifierCheckpoint {
    pub fn from_model(model: &FusionClassifier, seed: u64, ft_stats: Option<NormalizationStats>) -> Self {
        ClassifierCheckpoint {
            config: model.config.clone(),
            seed,
            outcome_vocabulary: OutcomeLabel::vocabulary().into_iter().map(str::to_string).collect(),
            ft_stats,
            weights: model.export_weights(),
        }
    }

    pub fn to_model(&self) -> Result<FusionClassifier> {
        if self.outcome_vocabulary != OutcomeLabel::vocabulary() {
            return Err(Error::Config("checkpoint outcome vocabulary differs from this build".into()));
        }
        let mut m = FusionClassifier::new(self.config.clone(), self.seed)?;
        m.import_weights(&self.weights)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))
    }
}
