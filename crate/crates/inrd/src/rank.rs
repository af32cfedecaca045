//! Stable-rank profiles of a trained encoder.
//!
//! The stable rank ||A||_F^2 / ||A||_2^2 is a continuous effective-rank
//! measure: it counts how many directions carry the matrix's mass without
//! needing a full spectrum. Profiling a cohort encoder computes it for every
//! trainable layer weight (sr_w) and for the layer activations over sampled
//! training coordinates (sr_h); the layer with the largest sr_w is the
//! predicted freeze boundary, to be compared against the measured sweep.

use crate::cohort::CohortCheckpoint;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar, StreamRng};

/// Spectral norm (largest singular value) by power iteration on the Gram
/// operator v -> A^T A v, starting from the all-ones vector.
///
/// The estimate at each step is the Rayleigh ratio ||A v||^2 / ||v||^2,
/// which converges monotonically to sigma_max^2; iteration stops when its
/// relative change drops to `tol`. If the all-ones start happens to lie in
/// the null space, the iteration restarts from the first basis vector with a
/// nonzero column.
pub fn spectral_norm_with<T: Scalar>(a: &Matrix<T>, tol: f64, max_iters: usize) -> Result<f64> {
    Ok(gram_ratio(a, tol, max_iters)?.sqrt())
}

/// `spectral_norm_with` at the default tolerance 1e-10 and 1000 iterations.
pub fn spectral_norm<T: Scalar>(a: &Matrix<T>) -> Result<f64> {
    spectral_norm_with(a, 1e-10, 1000)
}

/// ||A||_F^2 / ||A||_2^2. Uses the squared Gram ratio directly, so exact
/// cases (identity, equal-entry rank-1) come out exact instead of through a
/// sqrt round-trip.
pub fn stable_rank<T: Scalar>(a: &Matrix<T>) -> Result<f64> {
    Ok(a.frobenius_sq() / gram_ratio(a, 1e-10, 1000)?)
}

fn gram_ratio<T: Scalar>(a: &Matrix<T>, tol: f64, max_iters: usize) -> Result<f64> {
    if a.frobenius_sq() == 0.0 {
        return Err(Error::contract("spectral_norm", "zero matrix"));
    }
    let a64: Matrix<f64> = a.cast();
    let at = a64.transpose();
    let (_, cols) = a64.shape();

    let mut v = Matrix::<f64>::from_fn(cols, 1, |_, _| 1.0);
    if norm_sq(&a64.matmul(&v).expect("shape")) == 0.0 {
        // all-ones lies in the null space; any column with mass escapes it
        let j = (0..cols)
            .find(|&j| (0..a64.rows()).any(|i| a64.get(i, j) != 0.0))
            .expect("nonzero matrix has a nonzero column");
        v = Matrix::from_fn(cols, 1, |r, _| if r == j { 1.0 } else { 0.0 });
    }

    let mut last = 0.0f64;
    for it in 0..max_iters {
        let av = a64.matmul(&v).expect("shape");
        let ratio = norm_sq(&av) / norm_sq(&v);
        if it > 0 {
            let change = (ratio - last).abs();
            if change <= tol * ratio.max(f64::MIN_POSITIVE) {
                // the two converged iterates differ by at most tol; the
                // earlier one comes from a start vector one normalization
                // short of rounding noise, which keeps exact spectra
                // (identity, equal-entry rank-1) bit-exact
                return Ok(last);
            }
        }
        last = ratio;
        let mut next = at.matmul(&av).expect("shape");
        let scale = norm_sq(&next).sqrt();
        if scale == 0.0 {
            // v was entirely in the null space yet Av != 0 is impossible;
            // ratio has already converged to 0-adjacent mass, bail out
            return Ok(ratio);
        }
        next = next.map(|x| x / scale);
        v = next;
    }
    Err(Error::NoConvergence {
        op: "spectral_norm".into(),
        iters: max_iters,
        last,
    })
}

fn norm_sq(v: &Matrix<f64>) -> f64 {
    v.frobenius_sq()
}

/// Per-layer stable ranks of a trained encoder and the predicted freeze
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RankProfile {
    /// Stable rank of each trainable layer weight, layer-ascending. The
    /// fixed Fourier projection and the heads are not profiled.
    pub sr_w: Vec<f64>,
    /// Stable rank of each layer's activation matrix over the sampled
    /// coordinates.
    pub sr_h: Vec<f64>,
    /// argmax of `sr_w`; ties go to the smallest layer.
    pub tau_star: usize,
    /// Number of coordinate rows the activation ranks were measured on.
    pub sampled_coords: usize,
}

#[derive(Debug, Clone)]
pub struct RankOptions {
    /// Coordinate sample size for activation ranks; the full pooled grid is
    /// used when it is smaller than this.
    pub sample_coords: usize,
    pub seed: u64,
    /// Measure sr_h on the nonlinearity input instead of its output.
    pub pre_activation: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            sample_coords: 8192,
            seed: 0,
            pre_activation: false,
        }
    }
}

// Coordinate sampling draws from stream (seed, [4]).
const TAG_RANK_SAMPLE: u64 = 4;

/// Profiles every encoder layer of a checkpoint: sr_w from the stored
/// weights, sr_h from activations at coordinates sampled uniformly (with
/// replacement) from the pooled grids of the cohort's training images.
pub fn rank_profile<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    opts: &RankOptions,
) -> Result<RankProfile> {
    let l_total = ckpt.config.hidden_layers;
    if ckpt.encoder.layer_w.len() != l_total {
        return Err(Error::contract(
            "rank_profile",
            format!(
                "checkpoint encoder has {} layers, config says {}",
                ckpt.encoder.layer_w.len(),
                l_total
            ),
        ));
    }
    let mut sr_w = Vec::with_capacity(l_total);
    for w in &ckpt.encoder.layer_w {
        sr_w.push(stable_rank(w)?);
    }
    let tau_star = argmax_smallest_tie(&sr_w);

    let coords = sample_cohort_coords::<T>(ckpt, opts)?;
    let sampled_coords = coords.rows();
    let model = ckpt.model_for(0)?;
    let capture: Vec<usize> = (0..l_total).collect();
    let sr_h = if opts.pre_activation {
        let mut pres = Vec::with_capacity(l_total);
        let mut h = crate::inr::encode_input(&model, &coords)?;
        for l in 0..l_total {
            let pre = model.layer_preactivation(l, &h)?;
            h = model.layer_activation(&pre);
            pres.push(stable_rank(&pre)?);
        }
        pres
    } else {
        let (_, captured) = model.forward_coords(&coords, &capture)?;
        let mut posts = Vec::with_capacity(l_total);
        for l in 0..l_total {
            posts.push(stable_rank(&captured[&l])?);
        }
        posts
    };

    Ok(RankProfile {
        sr_w,
        sr_h,
        tau_star,
        sampled_coords,
    })
}

fn argmax_smallest_tie(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Pools the coordinate grids of all training images recorded in the
/// checkpoint and samples `opts.sample_coords` rows uniformly with
/// replacement (or returns the whole pool when it is smaller).
fn sample_cohort_coords<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    opts: &RankOptions,
) -> Result<Matrix<T>> {
    if ckpt.meta.image_dims.is_empty() {
        return Err(Error::contract("rank_profile", "checkpoint lists no image dims"));
    }
    let mut pool: Vec<[T; 2]> = Vec::new();
    for &(h, w) in &ckpt.meta.image_dims {
        let grid = crate::inr::make_grid::<T>(h, w)?;
        for r in 0..grid.coords.rows() {
            pool.push([grid.coords.get(r, 0), grid.coords.get(r, 1)]);
        }
    }
    if pool.len() <= opts.sample_coords {
        return Matrix::from_vec(
            pool.len(),
            2,
            pool.into_iter().flatten().collect(),
        );
    }
    let mut rng = StreamRng::stream(opts.seed, &[TAG_RANK_SAMPLE]);
    let mut data = Vec::with_capacity(opts.sample_coords * 2);
    for _ in 0..opts.sample_coords {
        let row = pool[rng.uniform_index(pool.len())];
        data.extend_from_slice(&row);
    }
    Matrix::from_vec(opts.sample_coords, 2, data)
}
