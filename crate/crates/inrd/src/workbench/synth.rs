//! Deterministic synthetic test images.
//!
//! Three kinds: band-limited sinusoid mixtures (smooth, easily fit by a
//! coordinate network), Gaussian blobs, and a linear ramp. Pixel math runs
//! in f64 and is rounded into the requested dtype at the end, so the same
//! seed draws the same image at either precision.

use crate::error::Result;
use crate::inr::ImageTensor;
use crate::tensor::{Matrix, Scalar, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Sum of at most 16 sinusoids with at most 3 cycles across the image.
    Bandlimited,
    /// A handful of Gaussian bumps.
    Blobs,
    /// Linear left-to-right ramp from 0 to 1; ignores the seed.
    Gradient,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Bandlimited => "bandlimited",
            SynthKind::Blobs => "blobs",
            SynthKind::Gradient => "gradient",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bandlimited" => Some(SynthKind::Bandlimited),
            "blobs" => Some(SynthKind::Blobs),
            "gradient" => Some(SynthKind::Gradient),
            _ => None,
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            SynthKind::Bandlimited => 1,
            SynthKind::Blobs => 2,
            SynthKind::Gradient => 3,
        }
    }
}

/// Grid coordinate of index `i` on an axis with `n` samples; the [-1, 1]
/// convention shared with `make_grid`.
fn axis(i: usize, n: usize) -> f64 {
    if n == 1 {
        -1.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Affinely rescales `plane` to [0, 1]; a constant plane becomes 0.5.
fn rescale_unit(plane: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in plane.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        plane.fill(0.5);
    } else {
        let inv = 1.0 / (hi - lo);
        for v in plane.iter_mut() {
            *v = (*v - lo) * inv;
        }
    }
}

fn bandlimited_plane(height: usize, width: usize, rng: &mut StreamRng) -> Vec<f64> {
    let components = 8 + rng.uniform_index(9); // 8..=16
    let mut waves = Vec::with_capacity(components);
    for _ in 0..components {
        let fy = rng.uniform(-3.0, 3.0);
        let fx = rng.uniform(-3.0, 3.0);
        let amp = rng.uniform(0.2, 1.0);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        waves.push((fy, fx, amp, phase));
    }
    let mut plane = vec![0.0; height * width];
    for y in 0..height {
        let yv = axis(y, height);
        for x in 0..width {
            let xv = axis(x, width);
            let mut v = 0.0;
            for &(fy, fx, amp, phase) in &waves {
                v += amp * (std::f64::consts::PI * (fy * yv + fx * xv) + phase).sin();
            }
            plane[y * width + x] = v;
        }
    }
    rescale_unit(&mut plane);
    plane
}

fn blobs_plane(height: usize, width: usize, rng: &mut StreamRng) -> Vec<f64> {
    let count = 3 + rng.uniform_index(6); // 3..=8
    let mut bumps = Vec::with_capacity(count);
    for _ in 0..count {
        let cy = rng.uniform(-0.8, 0.8);
        let cx = rng.uniform(-0.8, 0.8);
        let sigma = rng.uniform(0.15, 0.5);
        let amp = rng.uniform(0.4, 1.0);
        bumps.push((cy, cx, sigma, amp));
    }
    let mut plane = vec![0.0; height * width];
    for y in 0..height {
        let yv = axis(y, height);
        for x in 0..width {
            let xv = axis(x, width);
            let mut v = 0.0;
            for &(cy, cx, sigma, amp) in &bumps {
                let d2 = (yv - cy) * (yv - cy) + (xv - cx) * (xv - cx);
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            plane[y * width + x] = v;
        }
    }
    rescale_unit(&mut plane);
    plane
}

fn gradient_plane(height: usize, width: usize) -> Vec<f64> {
    let mut plane = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            plane[y * width + x] = if width == 1 {
                0.0
            } else {
                x as f64 / (width - 1) as f64
            };
        }
    }
    plane
}

/// Deterministic synthetic image; channels draw independent planes from the
/// same seed.
pub fn synth_image<T: Scalar>(
    kind: SynthKind,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<ImageTensor<T>> {
    let mut pixels = Matrix::zeros(height * width, channels);
    for ch in 0..channels {
        let mut rng = StreamRng::stream(seed, &[kind.stream_tag(), ch as u64]);
        let plane = match kind {
            SynthKind::Bandlimited => bandlimited_plane(height, width, &mut rng),
            SynthKind::Blobs => blobs_plane(height, width, &mut rng),
            SynthKind::Gradient => gradient_plane(height, width),
        };
        for (r, &v) in plane.iter().enumerate() {
            pixels.set(r, ch, T::real(v));
        }
    }
    ImageTensor::new(height, width, channels, pixels)
}
