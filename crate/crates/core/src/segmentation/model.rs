use ndarray::{Array2, ArrayView2};

use super::loss::HeadGrads;
use super::MstcnConfig;
use crate::error::{Error, Result};
use crate::features::{EncoderTrace, FeatureSequence, FtGripperEncoder};
use crate::labels::{HumanAction, OutcomeLabel, RobotActionModel};
use crate::nn::{
    argmax, concat_cols, dropout_mask, log_softmax_backward, log_softmax_rows, relu, relu_backward, seeded_rng, Conv1d,
    Param, Parameterized, Rng64,
};

#[derive(Debug, Clone, PartialEq)]
struct DilatedResidual {
    dilated: Conv1d,
    pointwise: Conv1d,
}

struct ResidualTrace {
    x: Array2<f64>,
    h: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl DilatedResidual {
    fn forward(&self, x: Array2<f64>, p: f64, rng: Option<&mut Rng64>) -> Result<(Array2<f64>, ResidualTrace)> {
        let h = relu(&self.dilated.forward(x.view())?);
        let mut o = self.pointwise.forward(h.view())?;
        let mask = dropout_mask(o.dim(), p, rng);
        if let Some(m) = &mask {
            o *= m;
        }
        let out = &x + &o;
        Ok((out, ResidualTrace { x, h, mask }))
    }

    fn backward(&mut self, tr: &ResidualTrace, dout: &Array2<f64>) -> Array2<f64> {
        let mut d_o = dout.clone();
        if let Some(m) = &tr.mask {
            d_o *= m;
        }
        let dh = self.pointwise.backward(tr.h.view(), d_o.view());
        let dpre = relu_backward(&tr.h, &dh);
        let mut dx = self.dilated.backward(tr.x.view(), dpre.view());
        dx += dout;
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    input: Conv1d,
    layers: Vec<DilatedResidual>,
    human: Conv1d,
    outcome: Conv1d,
    robot: Option<Conv1d>,
}

struct StageTrace {
    x: Array2<f64>,
    layers: Vec<ResidualTrace>,
    trunk: Array2<f64>,
}

/// Per-frame log-probabilities of one stage, `T × classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub human: Array2<f64>,
    pub outcome: Array2<f64>,
    pub robot: Option<Array2<f64>>,
}

impl Stage {
    fn new(c_in: usize, cfg: &MstcnConfig, rng: &mut Rng64) -> Self {
        let ch = cfg.channels;
        Stage {
            input: Conv1d::linear(c_in, ch, rng),
            layers: (0..cfg.layers_per_stage)
                .map(|l| DilatedResidual {
                    dilated: Conv1d::new(ch, ch, 3, 1 << l, rng),
                    pointwise: Conv1d::linear(ch, ch, rng),
                })
                .collect(),
            human: Conv1d::linear(ch, HumanAction::COUNT, rng),
            outcome: Conv1d::linear(ch, OutcomeLabel::COUNT, rng),
            robot: cfg.has_robot_head().then(|| Conv1d::linear(ch, RobotActionModel::COUNT, rng)),
        }
    }

    fn forward(&self, x: Array2<f64>, dropout: f64, mut rng: Option<&mut Rng64>) -> Result<(StageOutput, StageTrace)> {
        let mut z = self.input.forward(x.view())?;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, tr) = layer.forward(z, dropout, rng.as_deref_mut())?;
            traces.push(tr);
            z = next;
        }
        let out = StageOutput {
            human: log_softmax_rows(&self.human.forward(z.view())?),
            outcome: log_softmax_rows(&self.outcome.forward(z.view())?),
            robot: match &self.robot {
                Some(r) => Some(log_softmax_rows(&r.forward(z.view())?)),
                None => None,
            },
        };
        Ok((out, StageTrace { x, layers: traces, trunk: z }))
    }

    /// `dlogits` are gradients w.r.t. head logits; returns gradient w.r.t. the stage input.
    fn backward(&mut self, tr: &StageTrace, dlogits: &HeadGrads) -> Array2<f64> {
        let mut dz = self.human.backward(tr.trunk.view(), dlogits.human.view());
        dz += &self.outcome.backward(tr.trunk.view(), dlogits.outcome.view());
        if let (Some(head), Some(g)) = (self.robot.as_mut(), dlogits.robot.as_ref()) {
            dz += &head.backward(tr.trunk.view(), g.view());
        }
        for (layer, ltr) in self.layers.iter_mut().zip(&tr.layers).rev() {
            dz = layer.backward(ltr, &dz);
        }
        self.input.backward(tr.x.view(), dz.view())
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.input.params();
        for l in &self.layers {
            v.extend(l.dilated.params());
            v.extend(l.pointwise.params());
        }
        v.extend(self.human.params());
        v.extend(self.outcome.params());
        if let Some(r) = &self.robot {
            v.extend(r.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.input.params_mut();
        for l in &mut self.layers {
            v.extend(l.dilated.params_mut());
            v.extend(l.pointwise.params_mut());
        }
        v.extend(self.human.params_mut());
        v.extend(self.outcome.params_mut());
        if let Some(r) = &mut self.robot {
            v.extend(r.params_mut());
        }
        v
    }
}

/// All stages' outputs; predictions read the last stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutput {
    pub stages: Vec<StageOutput>,
}

impl SegmentationOutput {
    pub fn last(&self) -> &StageOutput {
        self.stages.last().expect("at least one stage")
    }

    pub fn len(&self) -> usize {
        self.last().human.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn human_track(&self) -> Vec<HumanAction> {
        argmax_rows(&self.last().human).into_iter().map(|i| HumanAction::ALL[i]).collect()
    }

    pub fn robot_track(&self) -> Option<Vec<RobotActionModel>> {
        self.last().robot.as_ref().map(|r| argmax_rows(r).into_iter().map(|i| RobotActionModel::ALL[i]).collect())
    }

    /// Outcome from the final frame of the last stage.
    pub fn outcome(&self) -> OutcomeLabel {
        let o = &self.last().outcome;
        let last = o.row(o.nrows() - 1);
        OutcomeLabel::ALL[argmax(last.iter().copied())]
    }
}

fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}

pub struct MstcnTrace {
    encoder: Option<EncoderTrace>,
    video_width: usize,
    stages: Vec<StageTrace>,
    /// Softmax of the human head feeding each later stage.
    refine_inputs: Vec<Array2<f64>>,
}

/// Two-stage (by default) temporal convolutional network with human, outcome
/// and optional robot heads, plus the F-T/gripper encoder feeding stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mstcn {
    pub config: MstcnConfig,
    encoder: Option<FtGripperEncoder>,
    stages: Vec<Stage>,
}

impl Mstcn {
    pub fn new(config: MstcnConfig, seed: u64) -> Result<Self> {
        if config.modalities.is_empty() {
            return Err(Error::Config("modality set is empty".into()));
        }
        if config.stages == 0 {
            return Err(Error::Config("at least one stage required".into()));
        }
        if config.heads.robot && config.variant != super::MstcnVariant::B {
            return Err(Error::Config("robot segmentation head requires variant B".into()));
        }
        let mut rng = seeded_rng(seed);
        let encoder = config
            .modalities
            .has_signals()
            .then(|| FtGripperEncoder::new(config.modalities.signal_channels(), config.encoder_channels, &mut rng));
        let mut stages = vec![Stage::new(config.input_width(), &config, &mut rng)];
        for _ in 1..config.stages {
            stages.push(Stage::new(HumanAction::COUNT, &config, &mut rng));
        }
        Ok(Mstcn { config, encoder, stages })
    }

    fn signals(&self, seq: &FeatureSequence) -> Array2<f64> {
        let m = self.config.modalities;
        let mut parts: Vec<ArrayView2<f64>> = Vec::new();
        if m.ft {
            parts.push(seq.ft.view());
        }
        if m.gripper {
            parts.push(seq.gripper.view());
        }
        concat_cols(&parts)
    }

    pub fn forward(&self, seq: &FeatureSequence) -> Result<SegmentationOutput> {
        self.forward_traced(seq, None).map(|(o, _)| o)
    }

    /// Forward pass keeping activations; `rng` enables dropout.
    pub fn forward_traced(
        &self,
        seq: &FeatureSequence,
        mut rng: Option<&mut Rng64>,
    ) -> Result<(SegmentationOutput, MstcnTrace)> {
        let t = seq.len();
        if t == 0 {
            return Err(Error::EmptyTrial);
        }
        if seq.ft.nrows() != t || seq.gripper.nrows() != t {
            return Err(Error::ShapeError("feature rows are not aligned".into()));
        }
        let mut parts: Vec<Array2<f64>> = Vec::new();
        let mut video_width = 0;
        if self.config.modalities.video {
            if seq.backbone.ncols() != self.config.backbone_width {
                return Err(Error::ShapeError(format!(
                    "backbone width {} != configured {}",
                    seq.backbone.ncols(),
                    self.config.backbone_width
                )));
            }
            video_width = seq.backbone.ncols();
            parts.push(seq.backbone.clone());
        }
        let mut enc_trace = None;
        if let Some(enc) = &self.encoder {
            let (e, tr) = enc.forward(self.signals(seq).view())?;
            parts.push(e);
            enc_trace = Some(tr);
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
        let mut x = concat_cols(&views);

        let p = self.config.dropout;
        let mut outputs = Vec::with_capacity(self.stages.len());
        let mut traces = Vec::with_capacity(self.stages.len());
        let mut refine_inputs = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                let probs = outputs.last().map(|o: &StageOutput| o.human.mapv(f64::exp)).expect("previous stage");
                refine_inputs.push(probs.clone());
                x = probs;
            }
            let (out, tr) = stage.forward(x.clone(), p, rng.as_deref_mut())?;
            outputs.push(out);
            traces.push(tr);
        }
        Ok((
            SegmentationOutput { stages: outputs },
            MstcnTrace { encoder: enc_trace, video_width, stages: traces, refine_inputs },
        ))
    }

    /// Backpropagate gradients w.r.t. every stage's log-probabilities.
    pub fn backward(&mut self, out: &SegmentationOutput, trace: &MstcnTrace, dlogp: &[HeadGrads]) {
        let mut carry: Option<Array2<f64>> = None;
        for s in (0..self.stages.len()).rev() {
            let so = &out.stages[s];
            let g = &dlogp[s];
            let mut dhuman = g.human.clone();
            if let Some(dp) = carry.take() {
                // stage s+1 consumed softmax(human logits of stage s); convert dL/dp to dL/dlogp
                dhuman += &(&dp * &trace.refine_inputs[s]);
            }
            let dlogits = HeadGrads {
                human: log_softmax_backward(&so.human, &dhuman),
                outcome: log_softmax_backward(&so.outcome, &g.outcome),
                robot: match (&so.robot, &g.robot) {
                    (Some(lp), Some(gr)) => Some(log_softmax_backward(lp, gr)),
                    _ => None,
                },
            };
            let dx = self.stages[s].backward(&trace.stages[s], &dlogits);
            if s > 0 {
                carry = Some(dx);
            } else if let (Some(enc), Some(etr)) = (self.encoder.as_mut(), trace.encoder.as_ref()) {
                let w = trace.video_width;
                let de = dx.slice(ndarray::s![.., w..]).to_owned();
                enc.backward(etr, &de);
            }
        }
    }
}

impl Parameterized for Mstcn {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(e) = &self.encoder {
            v.extend(e.params());
        }
        for s in &self.stages {
            v.extend(s.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(e) = &mut self.encoder {
            v.extend(e.params_mut());
        }
        for s in &mut self.stages {
            v.extend(s.params_mut());
        }
        v
    }
}
