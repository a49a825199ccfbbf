//! Dense TV-L1 optical flow (primal-dual, coarse-to-fine with warping).

use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Flow magnitudes are clipped to this many pixels before rescaling to [-1, 1].
pub const FLOW_CLIP_PX: f32 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tvl1Params {
    /// Time step of the dual update.
    pub tau: f64,
    /// Weight of the data term.
    pub lambda: f64,
    /// Coupling between the two auxiliary flows.
    pub theta: f64,
    pub scales: usize,
    pub warps: usize,
    pub iterations: usize,
    pub epsilon: f64,
}

impl Default for Tvl1Params {
    fn default() -> Self {
        Tvl1Params { tau: 0.25, lambda: 0.15, theta: 0.3, scales: 4, warps: 5, iterations: 60, epsilon: 0.01 }
    }
}

/// Grayscale image in [0, 255], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn zeros(width: usize, height: usize) -> Self {
        Gray { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect();
        Gray { width: w as usize, height: h as usize, data }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with clamped borders.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Central-difference gradients (one-sided at the border).
    fn gradient(&self) -> (Gray, Gray) {
        let (w, h) = (self.width, self.height);
        let mut gx = Gray::zeros(w, h);
        let mut gy = Gray::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                if xr > xl {
                    gx.data[y * w + x] = (self.at(xr, y) - self.at(xl, y)) / (xr - xl) as f64;
                }
                if yd > yu {
                    gy.data[y * w + x] = (self.at(x, yd) - self.at(x, yu)) / (yd - yu) as f64;
                }
            }
        }
        (gx, gy)
    }

    fn blur(&self) -> Gray {
        // separable [1 4 6 4 1]/16
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = Gray::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                tmp.data[y * w + x] = K
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * self.at((x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize, y))
                    .sum();
            }
        }
        let mut out = Gray::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = K
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * tmp.at(x, (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize))
                    .sum();
            }
        }
        out
    }

    fn resize(&self, width: usize, height: usize) -> Gray {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Gray::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                out.data[y * width + x] = self.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
            }
        }
        out
    }
}

/// Horizontal and vertical displacement in pixels, frame 0 → frame 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }

    /// Clip to ±[`FLOW_CLIP_PX`] and divide by it.
    pub fn rescaled(&self) -> FlowField {
        let f = |x: &f32| x.clamp(-FLOW_CLIP_PX, FLOW_CLIP_PX) / FLOW_CLIP_PX;
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(f).collect(),
            v: self.v.iter().map(f).collect(),
        }
    }
}

fn divergence(p1: &[f64], p2: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d1 = if x == 0 {
                p1[i]
            } else if x == w - 1 {
                -p1[i - 1]
            } else {
                p1[i] - p1[i - 1]
            };
            let d2 = if y == 0 {
                p2[i]
            } else if y == h - 1 {
                -p2[i - w]
            } else {
                p2[i] - p2[i - w]
            };
            out[i] = d1 + d2;
        }
    }
}

fn forward_gradient(u: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// Solve one pyramid level starting from `(u1, u2)`.
fn tvl1_level(i0: &Gray, i1: &Gray, u1: &mut [f64], u2: &mut [f64], params: &Tvl1Params) {
    let (w, h) = (i0.width, i0.height);
    let n = w * h;
    let (i1x, i1y) = i1.gradient();
    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];
    let mut div1 = vec![0.0; n];
    let mut div2 = vec![0.0; n];
    let (mut g1x, mut g1y, mut g2x, mut g2y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];
    let lt = params.lambda * params.theta;
    let taut = params.tau / params.theta;

    for _ in 0..params.warps {
        let mut i1w = vec![0.0; n];
        let mut i1wx = vec![0.0; n];
        let mut i1wy = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut rho_c = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f64 + u1[i], y as f64 + u2[i]);
                i1w[i] = i1.sample(sx, sy);
                i1wx[i] = i1x.sample(sx, sy);
                i1wy[i] = i1y.sample(sx, sy);
                grad[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u1[i] - i1wy[i] * u2[i] - i0.data[i];
            }
        }

        for _ in 0..params.iterations {
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u1[i] + i1wy[i] * u2[i];
                let (d1, d2) = if rho < -lt * grad[i] {
                    (lt * i1wx[i], lt * i1wy[i])
                } else if rho > lt * grad[i] {
                    (-lt * i1wx[i], -lt * i1wy[i])
                } else if grad[i] > 1e-10 {
                    let f = -rho / grad[i];
                    (f * i1wx[i], f * i1wy[i])
                } else {
                    (0.0, 0.0)
                };
                v1[i] = u1[i] + d1;
                v2[i] = u2[i] + d2;
            }
            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            let mut change = 0.0;
            for i in 0..n {
                let nu1 = v1[i] + params.theta * div1[i];
                let nu2 = v2[i] + params.theta * div2[i];
                change += (nu1 - u1[i]).powi(2) + (nu2 - u2[i]).powi(2);
                u1[i] = nu1;
                u2[i] = nu2;
            }
            forward_gradient(u1, w, h, &mut g1x, &mut g1y);
            forward_gradient(u2, w, h, &mut g2x, &mut g2y);
            for i in 0..n {
                let ng1 = 1.0 + taut * (g1x[i] * g1x[i] + g1y[i] * g1y[i]).sqrt();
                let ng2 = 1.0 + taut * (g2x[i] * g2x[i] + g2y[i] * g2y[i]).sqrt();
                p11[i] = (p11[i] + taut * g1x[i]) / ng1;
                p12[i] = (p12[i] + taut * g1y[i]) / ng1;
                p21[i] = (p21[i] + taut * g2x[i]) / ng2;
                p22[i] = (p22[i] + taut * g2y[i]) / ng2;
            }
            if change / (n as f64) < params.epsilon * params.epsilon {
                break;
            }
        }
    }
}

/// Flow in pixels between two equally sized grayscale images.
pub fn tvl1_flow(i0: &Gray, i1: &Gray, params: &Tvl1Params) -> FlowField {
    assert_eq!((i0.width, i0.height), (i1.width, i1.height), "frame sizes differ");
    let mut pyr0 = vec![i0.clone()];
    let mut pyr1 = vec![i1.clone()];
    for _ in 1..params.scales.max(1) {
        let last = pyr0.last().unwrap();
        let (w, h) = (last.width / 2, last.height / 2);
        if w < 8 || h < 8 {
            break;
        }
        let next0 = last.blur().resize(w, h);
        let next1 = pyr1.last().unwrap().blur().resize(w, h);
        pyr0.push(next0);
        pyr1.push(next1);
    }

    let coarse = pyr0.last().unwrap();
    let mut u1 = vec![0.0; coarse.width * coarse.height];
    let mut u2 = u1.clone();
    for level in (0..pyr0.len()).rev() {
        let (a, b) = (&pyr0[level], &pyr1[level]);
        tvl1_level(a, b, &mut u1, &mut u2, params);
        if level > 0 {
            let finer = &pyr0[level - 1];
            let sx = finer.width as f64 / a.width as f64;
            let sy = finer.height as f64 / a.height as f64;
            let up1 = Gray { width: a.width, height: a.height, data: u1 }.resize(finer.width, finer.height);
            let up2 = Gray { width: a.width, height: a.height, data: u2 }.resize(finer.width, finer.height);
            u1 = up1.data.into_iter().map(|v| v * sx).collect();
            u2 = up2.data.into_iter().map(|v| v * sy).collect();
        }
    }
    FlowField {
        width: i0.width,
        height: i0.height,
        u: u1.into_iter().map(|v| v as f32).collect(),
        v: u2.into_iter().map(|v| v as f32).collect(),
    }
}

/// Rescaled flow for each frame; entry `i` is the flow from frame `i−1` to
/// frame `i`, and entry 0 is all zeros.
pub fn compute_optical_flow(frames: &[RgbImage], params: &Tvl1Params) -> Vec<FlowField> {
    let Some(first) = frames.first() else { return Vec::new() };
    let (w, h) = first.dimensions();
    let grays: Vec<Gray> = frames.iter().map(Gray::from_rgb).collect();
    let mut out = vec![FlowField::zeros(w as usize, h as usize)];
    out.extend(grays.windows(2).map(|p| tvl1_flow(&p[0], &p[1], params).rescaled()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, shift: f64) -> Gray {
        let data = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| {
                    let xf = x as f64 - shift;
                    let yf = y as f64;
                    128.0 + 50.0 * (xf * 0.35).sin() * (yf * 0.27).cos() + 40.0 * ((xf + 2.0 * yf) * 0.13).sin()
                })
            })
            .collect();
        Gray { width: w, height: h, data }
    }

    fn median(v: &[f32]) -> f32 {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[s.len() / 2]
    }

    #[test]
    fn static_scene_has_no_flow() {
        let img = texture(48, 40, 0.0);
        let f = tvl1_flow(&img, &img, &Tvl1Params::default());
        assert!(f.u.iter().chain(&f.v).all(|x| x.abs() < 0.5));
    }

    #[test]
    fn recovers_horizontal_shift() {
        let a = texture(64, 48, 0.0);
        let b = texture(64, 48, 3.0);
        let f = tvl1_flow(&a, &b, &Tvl1Params::default());
        let mu = median(&f.u);
        let mv = median(&f.v);
        assert!((mu - 3.0).abs() < 1.0, "median u = {mu}");
        assert!(mv.abs() < 1.0, "median v = {mv}");
    }

    #[test]
    fn single_frame_gives_zero_field() {
        let img = RgbImage::from_pixel(8, 6, image::Rgb([10, 20, 30]));
        let flows = compute_optical_flow(&[img], &Tvl1Params::default());
        assert_eq!(flows.len(), 1);
        assert!(flows[0].u.iter().chain(&flows[0].v).all(|&x| x == 0.0));
    }

    #[test]
    fn rescale_clips() {
        let f = FlowField { width: 2, height: 1, u: vec![40.0, -10.0], v: vec![0.0, -25.0] };
        let r = f.rescaled();
        assert_eq!(r.u, vec![1.0, -0.5]);
        assert_eq!(r.v, vec![0.0, -1.0]);
    }
}
