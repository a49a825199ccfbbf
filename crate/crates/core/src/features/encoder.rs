use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Conv1d, Param, Parameterized, Rng64};

pub const ENCODER_CHANNELS: usize = 64;
pub const ENCODER_KERNEL: usize = 5;

/// Two length-preserving temporal convolutions with ReLU that lift the raw
/// F-T and gripper channels to a per-frame embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FtGripperEncoder {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Array2<f64>,
    h1: Array2<f64>,
    out: Array2<f64>,
}

impl FtGripperEncoder {
    pub fn new(c_in: usize, channels: usize, rng: &mut Rng64) -> Self {
        FtGripperEncoder {
            conv1: Conv1d::new(c_in, channels, ENCODER_KERNEL, 1, rng),
            conv2: Conv1d::new(channels, channels, ENCODER_KERNEL, 1, rng),
        }
    }

    pub fn c_in(&self) -> usize {
        self.conv1.c_in
    }

    pub fn c_out(&self) -> usize {
        self.conv2.c_out
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, EncoderTrace)> {
        if x.ncols() != self.c_in() {
            return Err(Error::ShapeError(format!(
                "encoder expects {} input channels, got {}",
                self.c_in(),
                x.ncols()
            )));
        }
        let h1 = relu(&self.conv1.forward(x)?);
        let out = relu(&self.conv2.forward(h1.view())?);
        Ok((out.clone(), EncoderTrace { input: x.to_owned(), h1, out }))
    }

    pub fn backward(&mut self, trace: &EncoderTrace, dout: &Array2<f64>) -> Array2<f64> {
        let d2 = relu_backward(&trace.out, dout);
        let dh1 = self.conv2.backward(trace.h1.view(), d2.view());
        let d1 = relu_backward(&trace.h1, &dh1);
        self.conv1.backward(trace.input.view(), d1.view())
    }
}

impl Parameterized for FtGripperEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v
    }
}
