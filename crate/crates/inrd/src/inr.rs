//! Coordinate networks: configuration, seeded initialization, coordinate
//! grids, the fixed Fourier input encoding, and the plain forward pass.
//!
//! A model maps 2-D coordinates in [-1, 1] to pixel values. Two families are
//! supported: sine-activated layers with a frequency scale omega0, and a
//! fixed random Fourier feature encoding followed by ReLU layers. The plain
//! forward pass here is the reference the recorded (differentiable) forward
//! in `fit` must match bitwise; both are built from the same matrix helpers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar, StreamRng};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Sine activations, first-layer frequency scale omega0.
    Siren,
    /// Fixed Gaussian Fourier encoding of the input, then ReLU layers.
    Ffmlp,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Siren => "siren",
            Backbone::Ffmlp => "ffmlp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "siren" => Some(Backbone::Siren),
            "ffmlp" => Some(Backbone::Ffmlp),
            _ => None,
        }
    }
}

/// Architecture hyperparameters for one coordinate network.
#[derive(Debug, Clone, PartialEq)]
pub struct InrConfig {
    pub backbone: Backbone,
    /// Hidden layer count L; layers are indexed 0..L-1.
    pub hidden_layers: usize,
    /// Hidden width d.
    pub width: usize,
    /// Coordinate dimension m (2 for images).
    pub input_dim: usize,
    /// Signal channels c (3 RGB, 1 gray).
    pub output_dim: usize,
    /// Sine frequency scale; meaningful for the siren backbone only.
    pub siren_omega0: f64,
    /// When set, every sine layer scales its pre-activation by omega0;
    /// otherwise only layer 0 does. Hidden layers are initialized with the
    /// bound sqrt(6/fan_in)/omega0 in both cases.
    pub omega_all_layers: bool,
    /// Fourier feature count F; the encoding has 2F output dims.
    pub fourier_features: usize,
    /// Std of the fixed Gaussian projection entries.
    pub fourier_sigma: f64,
    /// Multiplies the Fourier projection by 2*pi before sin/cos.
    pub fourier_two_pi: bool,
}

impl InrConfig {
    /// Sine backbone with the stock architecture (5 hidden layers, width
    /// 256, RGB output) at the given frequency scale.
    pub fn siren(omega0: f64) -> Self {
        InrConfig {
            backbone: Backbone::Siren,
            hidden_layers: 5,
            width: 256,
            input_dim: 2,
            output_dim: 3,
            siren_omega0: omega0,
            omega_all_layers: true,
            fourier_features: 256,
            fourier_sigma: 10.0,
            fourier_two_pi: true,
        }
    }

    /// Fourier-feature backbone with the stock architecture at the given
    /// projection std.
    pub fn ffmlp(sigma: f64) -> Self {
        InrConfig {
            backbone: Backbone::Ffmlp,
            fourier_sigma: sigma,
            ..InrConfig::siren(30.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::contract("InrConfig::validate", detail));
        if self.hidden_layers == 0 {
            return fail("hidden_layers must be >= 1".into());
        }
        if self.width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return fail(format!(
                "width {} / input_dim {} / output_dim {} must all be >= 1",
                self.width, self.input_dim, self.output_dim
            ));
        }
        match self.backbone {
            Backbone::Siren => {
                if !(self.siren_omega0 > 0.0 && self.siren_omega0.is_finite()) {
                    return fail(format!("siren_omega0 = {} must be positive", self.siren_omega0));
                }
            }
            Backbone::Ffmlp => {
                if !(self.fourier_sigma > 0.0 && self.fourier_sigma.is_finite()) {
                    return fail(format!("fourier_sigma = {} must be positive", self.fourier_sigma));
                }
                if self.fourier_features == 0 {
                    return fail("fourier_features must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Input width of the first hidden layer: the coordinate dimension for
    /// siren, 2F for the Fourier encoding.
    pub fn encoder_in_dim(&self) -> usize {
        match self.backbone {
            Backbone::Siren => self.input_dim,
            Backbone::Ffmlp => 2 * self.fourier_features,
        }
    }

    /// Input width of hidden layer `layer`.
    pub fn layer_in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.encoder_in_dim()
        } else {
            self.width
        }
    }

    /// Pre-activation scale applied at hidden layer `layer`; 1.0 means the
    /// scale op is skipped entirely.
    pub(crate) fn omega_for_layer(&self, layer: usize) -> f64 {
        match self.backbone {
            Backbone::Ffmlp => 1.0,
            Backbone::Siren => {
                if layer == 0 || self.omega_all_layers {
                    self.siren_omega0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Row-major coordinate grid over [-1, 1]^2; row r = (y, x) of pixel
/// (r / width, r % width).
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid<T: Scalar> {
    pub height: usize,
    pub width: usize,
    /// (height * width) x 2, columns (y, x).
    pub coords: Matrix<T>,
}

/// Evenly spaced inclusive grid. Axes with >= 2 samples span exactly
/// [-1, 1]; a single-sample axis is pinned to -1.
pub fn make_grid<T: Scalar>(height: usize, width: usize) -> Result<CoordGrid<T>> {
    if height == 0 || width == 0 {
        return Err(Error::contract(
            "make_grid",
            format!("grid dims {height}x{width} must both be >= 1"),
        ));
    }
    // 2i/(n-1) - 1: the endpoints and the center of an odd axis are exact.
    let axis = |i: usize, n: usize| -> T {
        if n == 1 {
            T::real(-1.0)
        } else {
            T::real(2.0 * i as f64 / (n - 1) as f64 - 1.0)
        }
    };
    let mut coords = Matrix::zeros(height * width, 2);
    for y in 0..height {
        let yv = axis(y, height);
        for x in 0..width {
            let r = y * width + x;
            coords.set(r, 0, yv);
            coords.set(r, 1, axis(x, width));
        }
    }
    Ok(CoordGrid {
        height,
        width,
        coords,
    })
}

/// An image as a training target: row-major pixels, one row per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T: Scalar> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// (height * width) x channels, values in [0, 1].
    pub pixels: Matrix<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Matrix<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract(
                "ImageTensor::new",
                format!("dims {height}x{width}x{channels} must all be >= 1"),
            ));
        }
        if pixels.shape() != (height * width, channels) {
            return Err(Error::shape(
                "ImageTensor::new",
                format!(
                    "pixels {:?} does not match {}x{} ({} rows) x {} channels",
                    pixels.shape(),
                    height,
                    width,
                    height * width,
                    channels
                ),
            ));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn grid(&self) -> CoordGrid<T> {
        make_grid(self.height, self.width).expect("dims checked at construction")
    }

    /// True when every pixel lies in [0, 1].
    pub fn in_unit_range(&self) -> bool {
        self.pixels
            .data()
            .iter()
            .all(|&p| p >= T::zero() && p <= T::one())
    }
}

// Stream tags: every parameter group draws from its own derived stream, so
// adding layers or heads never shifts the draws of another group.
const TAG_LAYER: u64 = 1;
const TAG_HEAD: u64 = 2;
const TAG_FOURIER: u64 = 3;

/// A coordinate network: L hidden layers plus one linear head. Weights are
/// stored input x output so a batch of rows multiplies from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct InrModel<T: Scalar> {
    pub config: InrConfig,
    /// Fixed F x m Fourier projection; present iff the backbone is ffmlp,
    /// sampled once at init and never trained.
    pub fourier_b: Option<Matrix<T>>,
    /// Hidden weights; entry l is layer_in_dim(l) x width.
    pub enc_w: Vec<Matrix<T>>,
    /// Hidden biases, each 1 x width.
    pub enc_b: Vec<Matrix<T>>,
    /// Head weight, width x output_dim.
    pub head_w: Matrix<T>,
    /// Head bias, 1 x output_dim.
    pub head_b: Matrix<T>,
}

/// Head parameters for slot `head_index` (cohorts hold one per signal).
/// Sine heads use the hidden-layer rule sqrt(6/d)/omega0; ReLU heads use the
/// plain Kaiming bound sqrt(6/d). Biases start at zero.
pub fn init_head<T: Scalar>(
    config: &InrConfig,
    seed: u64,
    head_index: u64,
) -> (Matrix<T>, Matrix<T>) {
    let mut rng = StreamRng::stream(seed, &[TAG_HEAD, head_index]);
    let bound = match config.backbone {
        Backbone::Siren => (6.0 / config.width as f64).sqrt() / config.siren_omega0,
        Backbone::Ffmlp => (6.0 / config.width as f64).sqrt(),
    };
    let w = Matrix::from_fn(config.width, config.output_dim, |_, _| {
        T::real(rng.uniform(-bound, bound))
    });
    (w, Matrix::zeros(1, config.output_dim))
}

/// Seeded initialization.
///
/// Siren: layer 0 ~ U(-1/m, 1/m), hidden layers ~ U(+-sqrt(6/fan_in)/omega0).
/// Ffmlp: the projection B ~ N(0, sigma^2) is sampled once and fixed;
/// trainable layers use the Kaiming bound U(+-sqrt(6/fan_in)).
/// All biases start at zero. Layer l draws from stream (seed, [1, l]), the
/// head from (seed, [2, 0]), B from (seed, [3]).
pub fn init<T: Scalar>(config: &InrConfig, seed: u64) -> Result<InrModel<T>> {
    config.validate()?;
    let fourier_b = match config.backbone {
        Backbone::Siren => None,
        Backbone::Ffmlp => {
            let mut rng = StreamRng::stream(seed, &[TAG_FOURIER]);
            Some(Matrix::from_fn(
                config.fourier_features,
                config.input_dim,
                |_, _| T::real(rng.normal() * config.fourier_sigma),
            ))
        }
    };
    let mut enc_w = Vec::with_capacity(config.hidden_layers);
    let mut enc_b = Vec::with_capacity(config.hidden_layers);
    for l in 0..config.hidden_layers {
        let mut rng = StreamRng::stream(seed, &[TAG_LAYER, l as u64]);
        let fan_in = config.layer_in_dim(l);
        let bound = match config.backbone {
            Backbone::Siren => {
                if l == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / config.siren_omega0
                }
            }
            Backbone::Ffmlp => (6.0 / fan_in as f64).sqrt(),
        };
        enc_w.push(Matrix::from_fn(fan_in, config.width, |_, _| {
            T::real(rng.uniform(-bound, bound))
        }));
        enc_b.push(Matrix::zeros(1, config.width));
    }
    let (head_w, head_b) = init_head(config, seed, 0);
    Ok(InrModel {
        config: config.clone(),
        fourier_b,
        enc_w,
        enc_b,
        head_w,
        head_b,
    })
}

/// [sin(2*pi*B*x) || cos(2*pi*B*x)] per coordinate row, N x 2F. The 2*pi
/// factor follows `fourier_two_pi`.
pub fn fourier_encode<T: Scalar>(model: &InrModel<T>, coords: &Matrix<T>) -> Result<Matrix<T>> {
    if model.config.backbone != Backbone::Ffmlp {
        return Err(Error::contract(
            "fourier_encode",
            "defined for the ffmlp backbone only",
        ));
    }
    encode_core(&model.config, model.fourier_b.as_ref(), coords)
}

/// The model's input representation: raw coordinates for siren, the Fourier
/// encoding for ffmlp.
pub fn encode_input<T: Scalar>(model: &InrModel<T>, coords: &Matrix<T>) -> Result<Matrix<T>> {
    encode_core(&model.config, model.fourier_b.as_ref(), coords)
}

/// Backbone-dispatched input encoding over bare parts; the trainer calls
/// this without assembling a model.
pub(crate) fn encode_core<T: Scalar>(
    config: &InrConfig,
    fourier_b: Option<&Matrix<T>>,
    coords: &Matrix<T>,
) -> Result<Matrix<T>> {
    if coords.cols() != config.input_dim {
        return Err(Error::shape(
            "encode_input",
            format!("coords {:?} against input_dim {}", coords.shape(), config.input_dim),
        ));
    }
    match config.backbone {
        Backbone::Siren => Ok(coords.clone()),
        Backbone::Ffmlp => {
            let b = fourier_b.ok_or_else(|| {
                Error::contract("fourier_encode", "ffmlp model is missing its projection")
            })?;
            let mut proj = coords.matmul(&b.transpose())?;
            if config.fourier_two_pi {
                let tau = T::real(std::f64::consts::TAU);
                proj = proj.map(|x| x * tau);
            }
            let (sin, cos) = proj.sin_cos_all();
            let f = b.rows();
            let mut out = Matrix::zeros(coords.rows(), 2 * f);
            for r in 0..coords.rows() {
                let row = out.row_mut(r);
                row[..f].copy_from_slice(sin.row(r));
                row[f..].copy_from_slice(cos.row(r));
            }
            Ok(out)
        }
    }
}

impl<T: Scalar> InrModel<T> {
    /// Post-activation of hidden layer `layer` given the previous layer's
    /// post-activation (or the encoded input for layer 0).
    /// The value fed to the nonlinearity: W h + b, times omega for sine
    /// layers that carry a frequency scale.
    pub(crate) fn layer_preactivation(
        &self,
        layer: usize,
        h_prev: &Matrix<T>,
    ) -> Result<Matrix<T>> {
        let pre = h_prev
            .matmul(&self.enc_w[layer])?
            .add_row_broadcast(&self.enc_b[layer])?;
        Ok(match self.config.backbone {
            Backbone::Siren => {
                let omega = self.config.omega_for_layer(layer);
                if omega != 1.0 {
                    let factor = T::real(omega);
                    pre.map(|x| x * factor)
                } else {
                    pre
                }
            }
            Backbone::Ffmlp => pre,
        })
    }

    pub(crate) fn layer_activation(&self, pre: &Matrix<T>) -> Matrix<T> {
        match self.config.backbone {
            Backbone::Siren => pre.sin_cos_all().0,
            Backbone::Ffmlp => pre.relu(),
        }
    }

    fn layer_forward(&self, layer: usize, h_prev: &Matrix<T>) -> Result<Matrix<T>> {
        let pre = self.layer_preactivation(layer, h_prev)?;
        Ok(self.layer_activation(&pre))
    }

    fn head_forward(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        h.matmul(&self.head_w)?.add_row_broadcast(&self.head_b)
    }

    /// Full forward pass over a coordinate grid. `capture` names hidden
    /// layers whose post-activations are returned alongside the output.
    pub fn forward(
        &self,
        grid: &CoordGrid<T>,
        capture: &[usize],
    ) -> Result<(Matrix<T>, BTreeMap<usize, Matrix<T>>)> {
        self.forward_coords(&grid.coords, capture)
    }

    /// Forward pass over raw coordinate rows (one (y, x) pair per row);
    /// grids are a convenience on top of this.
    pub fn forward_coords(
        &self,
        coords: &Matrix<T>,
        capture: &[usize],
    ) -> Result<(Matrix<T>, BTreeMap<usize, Matrix<T>>)> {
        let l_total = self.config.hidden_layers;
        if let Some(&bad) = capture.iter().find(|&&l| l >= l_total) {
            return Err(Error::contract(
                "forward",
                format!("capture layer {bad} out of range 0..{l_total}"),
            ));
        }
        let mut h = encode_input(self, coords)?;
        let mut captured = BTreeMap::new();
        for l in 0..l_total {
            h = self.layer_forward(l, &h)?;
            if !h.is_finite() {
                return Err(Error::numeric(
                    "forward",
                    format!("non-finite activation at layer {l}"),
                ));
            }
            if capture.contains(&l) {
                captured.insert(l, h.clone());
            }
        }
        let out = self.head_forward(&h)?;
        if !out.is_finite() {
            return Err(Error::numeric("forward", "non-finite output at head"));
        }
        Ok((out, captured))
    }

    /// Resumes the forward pass from a supplied post-activation of hidden
    /// layer `layer`, running the remaining layers and the head. Feeding the
    /// captured activation back in reproduces `forward` bitwise.
    pub fn forward_from(&self, h_layer: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
        let l_total = self.config.hidden_layers;
        if layer >= l_total {
            return Err(Error::contract(
                "forward_from",
                format!("layer {layer} out of range 0..{l_total}"),
            ));
        }
        if h_layer.cols() != self.config.width {
            return Err(Error::shape(
                "forward_from",
                format!("activations {:?} against width {}", h_layer.shape(), self.config.width),
            ));
        }
        let mut h = h_layer.clone();
        for l in layer + 1..l_total {
            h = self.layer_forward(l, &h)?;
            if !h.is_finite() {
                return Err(Error::numeric(
                    "forward_from",
                    format!("non-finite activation at layer {l}"),
                ));
            }
        }
        let out = self.head_forward(&h)?;
        if !out.is_finite() {
            return Err(Error::numeric("forward_from", "non-finite output at head"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_siren(l: usize, d: usize, seed: u64) -> InrModel<f64> {
        let mut cfg = InrConfig::siren(30.0);
        cfg.hidden_layers = l;
        cfg.width = d;
        cfg.output_dim = 1;
        init(&cfg, seed).unwrap()
    }

    #[test]
    fn grid_2x2_hits_the_corners() {
        let g = make_grid::<f64>(2, 2).unwrap();
        assert_eq!(
            g.coords.data(),
            &[-1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn grid_single_row_pins_y() {
        let g = make_grid::<f64>(1, 3).unwrap();
        assert_eq!(g.coords.data(), &[-1.0, -1.0, -1.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn grid_3x3_center_is_origin() {
        let g = make_grid::<f64>(3, 3).unwrap();
        assert_eq!(g.coords.row(4), &[0.0, 0.0]);
    }

    #[test]
    fn grid_endpoints_are_exact() {
        for (h, w) in [(2usize, 5usize), (7, 2), (64, 64), (5, 1)] {
            let g = make_grid::<f32>(h, w).unwrap();
            for axis in 0..2 {
                let n = if axis == 0 { h } else { w };
                let mut min = f32::INFINITY;
                let mut max = f32::NEG_INFINITY;
                for r in 0..h * w {
                    min = min.min(g.coords.get(r, axis));
                    max = max.max(g.coords.get(r, axis));
                }
                assert_eq!(min, -1.0);
                assert_eq!(max, if n == 1 { -1.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn grid_rejects_zero_dims() {
        assert!(matches!(make_grid::<f64>(0, 3), Err(Error::Contract { .. })));
        assert!(matches!(make_grid::<f64>(3, 0), Err(Error::Contract { .. })));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = InrConfig::ffmlp(10.0);
        let a = init::<f32>(&cfg, 99).unwrap();
        let b = init::<f32>(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = init::<f32>(&cfg, 100).unwrap();
        assert_ne!(a.enc_w[0], c.enc_w[0]);
        assert_ne!(a.fourier_b, c.fourier_b);
    }

    #[test]
    fn siren_init_respects_bounds_and_zero_biases() {
        let cfg = InrConfig::siren(30.0);
        let m = init::<f64>(&cfg, 7).unwrap();
        let first_bound = 1.0 / cfg.input_dim as f64;
        assert!(m.enc_w[0].data().iter().all(|w| w.abs() <= first_bound));
        let hidden_bound = (6.0 / cfg.width as f64).sqrt() / cfg.siren_omega0;
        for l in 1..cfg.hidden_layers {
            assert!(m.enc_w[l].data().iter().all(|w| w.abs() <= hidden_bound));
        }
        assert!(m.head_w.data().iter().all(|w| w.abs() <= hidden_bound));
        for b in m.enc_b.iter().chain(std::iter::once(&m.head_b)) {
            assert!(b.data().iter().all(|&x| x == 0.0));
        }
        assert!(m.fourier_b.is_none());
    }

    #[test]
    fn ffmlp_init_uses_kaiming_bound() {
        let cfg = InrConfig::ffmlp(10.0);
        let m = init::<f64>(&cfg, 7).unwrap();
        let first = (6.0 / (2.0 * cfg.fourier_features as f64)).sqrt();
        assert!(m.enc_w[0].data().iter().all(|w| w.abs() <= first));
        assert_eq!(m.enc_w[0].shape(), (2 * cfg.fourier_features, cfg.width));
        let hidden = (6.0 / cfg.width as f64).sqrt();
        assert!(m.enc_w[1].data().iter().all(|w| w.abs() <= hidden));
        assert_eq!(
            m.fourier_b.as_ref().unwrap().shape(),
            (cfg.fourier_features, cfg.input_dim)
        );
    }

    #[test]
    fn fourier_projection_std_matches_sigma() {
        // 1e5 draws: F * m = 50_000 * 2
        let mut cfg = InrConfig::ffmlp(10.0);
        cfg.fourier_features = 50_000;
        cfg.hidden_layers = 1;
        cfg.width = 1;
        let m = init::<f64>(&cfg, 11).unwrap();
        let b = m.fourier_b.unwrap();
        let n = b.data().len() as f64;
        let mean = b.data().iter().sum::<f64>() / n;
        let var = b.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std / cfg.fourier_sigma - 1.0).abs() < 0.02,
            "sample std {std} vs sigma {}",
            cfg.fourier_sigma
        );
    }

    #[test]
    fn fourier_encode_of_origin_is_zeros_then_ones() {
        let mut cfg = InrConfig::ffmlp(10.0);
        cfg.fourier_features = 5;
        let m = init::<f64>(&cfg, 3).unwrap();
        let coords = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let enc = fourier_encode(&m, &coords).unwrap();
        assert_eq!(enc.row(0)[..5], [0.0; 5]);
        assert_eq!(enc.row(0)[5..], [1.0; 5]);
    }

    #[test]
    fn fourier_encode_half_cycle_example() {
        // B row (0.5, 0) and x = (1, 0): the argument is 2*pi*0.5 = pi
        let mut cfg = InrConfig::ffmlp(10.0);
        cfg.fourier_features = 1;
        let mut m = init::<f64>(&cfg, 3).unwrap();
        m.fourier_b = Some(Matrix::from_vec(1, 2, vec![0.5, 0.0]).unwrap());
        let coords = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let enc = fourier_encode(&m, &coords).unwrap();
        assert!(enc.get(0, 0).abs() < 1e-12, "sin(pi) = {}", enc.get(0, 0));
        assert!((enc.get(0, 1) + 1.0).abs() < 1e-12, "cos(pi) = {}", enc.get(0, 1));
    }

    #[test]
    fn fourier_encode_matches_scalar_oracle() {
        let mut cfg = InrConfig::ffmlp(4.0);
        cfg.fourier_features = 7;
        let m = init::<f64>(&cfg, 21).unwrap();
        let grid = make_grid::<f64>(3, 4).unwrap();
        let enc = fourier_encode(&m, &grid.coords).unwrap();
        let b = m.fourier_b.as_ref().unwrap();
        for r in 0..grid.coords.rows() {
            for f in 0..7 {
                // independent scalar path: plain products, library sin/cos
                let mut arg = 0.0;
                for i in 0..2 {
                    arg += b.get(f, i) * grid.coords.get(r, i);
                }
                arg *= std::f64::consts::TAU;
                assert!((enc.get(r, f) - arg.sin()).abs() < 1e-12);
                assert!((enc.get(r, 7 + f) - arg.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fourier_encode_rejects_siren() {
        let m = tiny_siren(2, 8, 5);
        let coords = Matrix::zeros(1, 2);
        assert!(matches!(
            fourier_encode(&m, &coords),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn forward_single_sine_layer_hand_value() {
        // one hidden unit: sin(pi/2 * y + 0) at (1, 0) through a unit head
        let mut cfg = InrConfig::siren(1.0);
        cfg.hidden_layers = 1;
        cfg.width = 1;
        cfg.output_dim = 1;
        let mut m = init::<f64>(&cfg, 0).unwrap();
        m.enc_w[0] = Matrix::from_vec(2, 1, vec![std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        m.enc_b[0] = Matrix::zeros(1, 1);
        m.head_w = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        m.head_b = Matrix::zeros(1, 1);
        let grid = CoordGrid {
            height: 1,
            width: 1,
            coords: Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
        };
        let (out, _) = m.forward(&grid, &[]).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_ffmlp_dead_first_layer_yields_head_bias() {
        let mut cfg = InrConfig::ffmlp(10.0);
        cfg.hidden_layers = 1;
        cfg.width = 4;
        cfg.fourier_features = 3;
        cfg.output_dim = 1;
        let mut m = init::<f64>(&cfg, 2).unwrap();
        m.enc_w[0] = Matrix::zeros(6, 4);
        m.head_b = Matrix::from_vec(1, 1, vec![0.75]).unwrap();
        let grid = make_grid::<f64>(2, 2).unwrap();
        let (out, captured) = m.forward(&grid, &[0]).unwrap();
        assert!(captured[&0].data().iter().all(|&h| h == 0.0));
        assert!(out.data().iter().all(|&o| o == 0.75));
    }

    #[test]
    fn forward_two_layer_matches_unrolled_oracle() {
        let mut cfg = InrConfig::siren(30.0);
        cfg.hidden_layers = 2;
        cfg.width = 8;
        cfg.output_dim = 2;
        let m = init::<f64>(&cfg, 17).unwrap();
        let coords =
            Matrix::from_vec(3, 2, vec![-1.0, 0.25, 0.0, 0.0, 0.63, -0.9]).unwrap();
        let grid = CoordGrid {
            height: 1,
            width: 3,
            coords: coords.clone(),
        };
        let (out, _) = m.forward(&grid, &[]).unwrap();

        // scalar unroll of sin(omega*(W1 sin(omega*(W0 x + b0)) + b1)) W_out
        for r in 0..3 {
            let mut h0 = [0.0f64; 8];
            for j in 0..8 {
                let mut pre = m.enc_b[0].get(0, j);
                for i in 0..2 {
                    pre += coords.get(r, i) * m.enc_w[0].get(i, j);
                }
                h0[j] = (30.0 * pre).sin();
            }
            let mut h1 = [0.0f64; 8];
            for j in 0..8 {
                let mut pre = m.enc_b[1].get(0, j);
                for i in 0..8 {
                    pre += h0[i] * m.enc_w[1].get(i, j);
                }
                h1[j] = (30.0 * pre).sin();
            }
            for c in 0..2 {
                let mut o = m.head_b.get(0, c);
                for i in 0..8 {
                    o += h1[i] * m.head_w.get(i, c);
                }
                assert!(
                    (out.get(r, c) - o).abs() < 1e-10,
                    "row {r} ch {c}: {} vs {o}",
                    out.get(r, c)
                );
            }
        }
    }

    #[test]
    fn forward_without_omega_on_hidden_layers() {
        // flag off: layer 0 keeps the omega scale, layer 1 drops it
        let mut cfg = InrConfig::siren(30.0);
        cfg.hidden_layers = 2;
        cfg.width = 4;
        cfg.output_dim = 1;
        cfg.omega_all_layers = false;
        let m = init::<f64>(&cfg, 23).unwrap();
        let grid = CoordGrid {
            height: 1,
            width: 1,
            coords: Matrix::from_vec(1, 2, vec![0.4, -0.2]).unwrap(),
        };
        let (out, captured) = m.forward(&grid, &[0, 1]).unwrap();
        let h0 = captured[&0].clone();
        for j in 0..4 {
            let mut pre = 0.0;
            for i in 0..2 {
                pre += grid.coords.get(0, i) * m.enc_w[0].get(i, j);
            }
            assert!((h0.get(0, j) - (30.0 * pre).sin()).abs() < 1e-12);
        }
        let h1 = captured[&1].clone();
        for j in 0..4 {
            let mut pre = 0.0;
            for i in 0..4 {
                pre += h0.get(0, i) * m.enc_w[1].get(i, j);
            }
            // no omega factor on the second layer
            assert!((h1.get(0, j) - pre.sin()).abs() < 1e-12);
        }
        let mut o = 0.0;
        for i in 0..4 {
            o += h1.get(0, i) * m.head_w.get(i, 0);
        }
        assert!((out.get(0, 0) - o).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_capture_out_of_range() {
        let m = tiny_siren(2, 4, 1);
        let grid = make_grid::<f64>(2, 2).unwrap();
        assert!(matches!(
            m.forward(&grid, &[2]),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn forward_reports_nonfinite_layer() {
        let mut m = tiny_siren(3, 4, 1);
        m.enc_w[1].set(0, 0, f64::INFINITY);
        let grid = make_grid::<f64>(2, 2).unwrap();
        let err = m.forward(&grid, &[]).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let m = tiny_siren(3, 16, 41);
        let grid = make_grid::<f64>(5, 7).unwrap();
        let (a, _) = m.forward(&grid, &[]).unwrap();
        let (b, _) = m.forward(&grid, &[]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn captured_activations_satisfy_layer_recurrence() {
        for cfg in [
            {
                let mut c = InrConfig::siren(30.0);
                c.hidden_layers = 3;
                c.width = 16;
                c.output_dim = 1;
                c
            },
            {
                let mut c = InrConfig::ffmlp(10.0);
                c.hidden_layers = 3;
                c.width = 16;
                c.fourier_features = 8;
                c.output_dim = 1;
                c
            },
        ] {
            let m = init::<f64>(&cfg, 31).unwrap();
            let grid = make_grid::<f64>(4, 4).unwrap();
            let (_, captured) = m.forward(&grid, &[0, 1, 2]).unwrap();
            let mut h = encode_input(&m, &grid.coords).unwrap();
            for l in 0..3 {
                h = m.layer_forward(l, &h).unwrap();
                let cap = &captured[&l];
                for (a, b) in h.data().iter().zip(cap.data()) {
                    assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn forward_from_matches_full_pass() {
        let m = tiny_siren(4, 8, 13);
        let grid = make_grid::<f64>(3, 3).unwrap();
        let (out, captured) = m.forward(&grid, &[1]).unwrap();
        let resumed = m.forward_from(&captured[&1], 1).unwrap();
        assert_eq!(out.data(), resumed.data());
    }

    #[test]
    fn forward_from_rejects_bad_layer() {
        let m = tiny_siren(2, 4, 1);
        let h = Matrix::zeros(4, 4);
        assert!(matches!(m.forward_from(&h, 2), Err(Error::Contract { .. })));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = InrConfig::siren(30.0);
        cfg.hidden_layers = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = InrConfig::siren(0.0);
        cfg.hidden_layers = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = InrConfig::ffmlp(-1.0);
        cfg.hidden_layers = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = InrConfig::ffmlp(10.0);
        cfg.fourier_features = 0;
        assert!(cfg.validate().is_err());
        assert!(InrConfig::siren(30.0).validate().is_ok());
    }

    #[test]
    fn image_tensor_validates_shape() {
        assert!(ImageTensor::new(2, 2, 1, Matrix::<f64>::zeros(4, 1)).is_ok());
        assert!(ImageTensor::new(2, 2, 1, Matrix::<f64>::zeros(3, 1)).is_err());
        assert!(ImageTensor::new(0, 2, 1, Matrix::<f64>::zeros(0, 1)).is_err());
    }
}
