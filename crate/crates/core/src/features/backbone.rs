//! Per-frame spatiotemporal features from a frozen two-stream encoder.

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flow::{compute_optical_flow, FlowField, Tvl1Params};
use super::FeatureSequence;
use crate::dataset::AlignedTrial;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

/// Pooled feature width of each stream.
pub const STREAM_WIDTH: usize = 1024;
/// Concatenated RGB + flow width.
pub const BACKBONE_WIDTH: usize = 2 * STREAM_WIDTH;
/// Frames in the causal window behind each feature.
pub const WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGeometry {
    /// Shorter image side after resizing.
    pub resize_short: u32,
    /// Side of the square center crop.
    pub crop: u32,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        FrameGeometry { resize_short: 256, crop: 224 }
    }
}

/// Resize the shorter side to `resize_short`, then center-crop.
pub fn preprocess_frame(img: &RgbImage, geom: FrameGeometry) -> RgbImage {
    let (w, h) = img.dimensions();
    let scale = geom.resize_short as f64 / w.min(h) as f64;
    let (nw, nh) = (((w as f64 * scale).round() as u32).max(1), ((h as f64 * scale).round() as u32).max(1));
    let resized = if (nw, nh) == (w, h) { img.clone() } else { imageops::resize(img, nw, nh, FilterType::Triangle) };
    let crop = geom.crop.min(nw).min(nh);
    let x = (nw - crop) / 2;
    let y = (nh - crop) / 2;
    imageops::crop_imm(&resized, x, y, crop, crop).to_image()
}

/// `H × W × C` frame with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FrameTensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        FrameTensor {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data: img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect(),
        }
    }

    pub fn from_flow(flow: &FlowField) -> Self {
        let data = flow.u.iter().zip(&flow.v).flat_map(|(&u, &v)| [u, v]).collect();
        FrameTensor { height: flow.height, width: flow.width, channels: 2, data }
    }
}

/// A pretrained clip encoder, split into a per-frame stem and a temporal head
/// so that overlapping windows can reuse per-frame work.
pub trait SpatiotemporalEncoder: Send + Sync {
    /// Identifies the weights; part of the feature cache key.
    fn version(&self) -> String;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    fn frame_descriptor(&self, frame: &FrameTensor) -> Result<Vec<f64>>;
    fn encode_descriptors(&self, window: &[&[f64]]) -> Result<Vec<f64>>;

    fn encode(&self, clip: &[FrameTensor]) -> Result<Vec<f64>> {
        let desc = clip.iter().map(|f| self.frame_descriptor(f)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = desc.iter().map(Vec::as_slice).collect();
        self.encode_descriptors(&refs)
    }
}

/// Frozen random encoder: spatial grid pooling per frame, temporal bin
/// pooling over the window, then a fixed Gaussian projection and `tanh`.
#[derive(Debug, Clone)]
pub struct RandomProjectionEncoder {
    seed: u64,
    channels: usize,
    grid: usize,
    bins: usize,
    width: usize,
    projection: Array2<f64>,
}

impl RandomProjectionEncoder {
    pub fn new(channels: usize, width: usize, seed: u64) -> Self {
        let (grid, bins) = (4, 8);
        let dim = grid * grid * channels * bins;
        let mut rng = seeded_rng(seed ^ (channels as u64) << 32);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let projection = Array2::from_shape_simple_fn((dim, width), || normal.sample(&mut rng));
        RandomProjectionEncoder { seed, channels, grid, bins, width, projection }
    }

    pub fn rgb(seed: u64) -> Self {
        Self::new(3, STREAM_WIDTH, seed)
    }

    pub fn flow(seed: u64) -> Self {
        Self::new(2, STREAM_WIDTH, seed)
    }
}

impl SpatiotemporalEncoder for RandomProjectionEncoder {
    fn version(&self) -> String {
        format!("rp{}x{}-c{}-s{}", self.grid, self.bins, self.channels, self.seed)
    }

    fn width(&self) -> usize {
        self.width
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn frame_descriptor(&self, f: &FrameTensor) -> Result<Vec<f64>> {
        if f.channels != self.channels {
            return Err(Error::ShapeError(format!("encoder expects {} channels, got {}", self.channels, f.channels)));
        }
        let g = self.grid;
        let mut sums = vec![0.0f64; g * g * self.channels];
        let mut counts = vec![0usize; g * g];
        for y in 0..f.height {
            let gy = y * g / f.height;
            for x in 0..f.width {
                let cell = gy * g + x * g / f.width;
                counts[cell] += 1;
                let base = (y * f.width + x) * f.channels;
                for c in 0..f.channels {
                    sums[cell * self.channels + c] += f.data[base + c] as f64;
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            for c in 0..self.channels {
                sums[cell * self.channels + c] /= n.max(1) as f64;
            }
        }
        Ok(sums)
    }

    fn encode_descriptors(&self, window: &[&[f64]]) -> Result<Vec<f64>> {
        if window.is_empty() {
            return Err(Error::EmptyTrial);
        }
        let d = self.grid * self.grid * self.channels;
        let mut pooled = vec![0.0f64; d * self.bins];
        let mut counts = vec![0usize; self.bins];
        for (k, desc) in window.iter().enumerate() {
            let b = k * self.bins / window.len();
            counts[b] += 1;
            for (dst, &v) in pooled[b * d..(b + 1) * d].iter_mut().zip(desc.iter()) {
                *dst += v;
            }
        }
        for b in 0..self.bins {
            let n = counts[b];
            // windows shorter than the bin count reuse the previous bin
            if n == 0 {
                let prev = if b == 0 { 0 } else { b - 1 };
                let copy: Vec<f64> = pooled[prev * d..(prev + 1) * d].to_vec();
                pooled[b * d..(b + 1) * d].copy_from_slice(&copy);
                counts[b] = 1;
            } else {
                pooled[b * d..(b + 1) * d].iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        let z = ndarray::ArrayView1::from(&pooled).dot(&self.projection);
        Ok(z.iter().map(|v| (2.0 * v).tanh()).collect())
    }
}

/// The two video streams plus the settings used to feed them.
pub struct Backbone {
    pub rgb: Box<dyn SpatiotemporalEncoder>,
    pub flow: Box<dyn SpatiotemporalEncoder>,
    pub geometry: FrameGeometry,
    pub flow_params: Tvl1Params,
}

impl Backbone {
    pub fn random(seed: u64, geometry: FrameGeometry) -> Self {
        Backbone {
            rgb: Box::new(RandomProjectionEncoder::rgb(seed)),
            flow: Box::new(RandomProjectionEncoder::flow(seed)),
            geometry,
            flow_params: Tvl1Params::default(),
        }
    }

    pub fn version(&self) -> String {
        format!("{}+{}@{}-{}", self.rgb.version(), self.flow.version(), self.geometry.resize_short, self.geometry.crop)
    }

    fn check_contract(&self) -> Result<()> {
        for (name, enc) in [("rgb", &self.rgb), ("flow", &self.flow)] {
            if enc.width() != STREAM_WIDTH {
                return Err(Error::BackboneContractError(format!(
                    "{name} stream emits {} features, expected {STREAM_WIDTH}",
                    enc.width()
                )));
            }
        }
        Ok(())
    }

    /// Preprocessed RGB frames and their flow tensors.
    pub fn prepare(&self, frames: &[RgbImage]) -> (Vec<FrameTensor>, Vec<FrameTensor>) {
        let cropped: Vec<RgbImage> = frames.iter().map(|f| preprocess_frame(f, self.geometry)).collect();
        let flow = compute_optical_flow(&cropped, &self.flow_params);
        (cropped.iter().map(FrameTensor::from_rgb).collect(), flow.iter().map(FrameTensor::from_flow).collect())
    }

    /// Pooled (rgb, flow) features of one clip.
    pub fn encode_clip(&self, frames: &[RgbImage]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_contract()?;
        let (rgb, flow) = self.prepare(frames);
        let a = self.rgb.encode(&rgb)?;
        let b = self.flow.encode(&flow)?;
        check_width(&a, "rgb")?;
        check_width(&b, "flow")?;
        Ok((a, b))
    }
}

fn check_width(v: &[f64], name: &str) -> Result<()> {
    if v.len() != STREAM_WIDTH {
        return Err(Error::BackboneContractError(format!("{name} output has {} features", v.len())));
    }
    Ok(())
}

/// Indices of the causal window ending at `t`, left-padded with frame 0.
pub fn causal_window(t: usize, window: usize) -> Vec<usize> {
    (0..window).map(|k| (t + k + 1).saturating_sub(window)).collect()
}

/// Per-frame `[rgb ‖ flow]` features; frame `t` sees frames `t−63..=t`.
pub fn extract_frame_features(trial: &AlignedTrial, backbone: &Backbone) -> Result<FeatureSequence> {
    backbone.check_contract()?;
    if trial.is_empty() {
        return Err(Error::EmptyTrial);
    }
    let frames = trial.frames.frames()?;
    let (rgb, flow) = backbone.prepare(&frames);
    let rgb_desc = rgb.iter().map(|f| backbone.rgb.frame_descriptor(f)).collect::<Result<Vec<_>>>()?;
    let flow_desc = flow.iter().map(|f| backbone.flow.frame_descriptor(f)).collect::<Result<Vec<_>>>()?;

    let t_len = trial.len();
    let mut features = Array2::zeros((t_len, BACKBONE_WIDTH));
    for t in 0..t_len {
        let idx = causal_window(t, WINDOW);
        let a = backbone.rgb.encode_descriptors(&idx.iter().map(|&i| rgb_desc[i].as_slice()).collect::<Vec<_>>())?;
        let b = backbone.flow.encode_descriptors(&idx.iter().map(|&i| flow_desc[i].as_slice()).collect::<Vec<_>>())?;
        check_width(&a, "rgb")?;
        check_width(&b, "flow")?;
        let mut row = features.row_mut(t);
        row.iter_mut().zip(a.iter().chain(&b)).for_each(|(d, s)| *d = *s);
    }
    Ok(FeatureSequence::from_aligned(trial, features, backbone.version()))
}
