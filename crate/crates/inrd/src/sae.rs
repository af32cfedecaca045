//! TopK sparse autoencoders over hidden-layer activations.
//!
//! An SAE re-expresses a layer's post-activation vectors as sparse
//! nonnegative combinations of dictionary atoms: z = TopK(ReLU(W_enc (h -
//! b_pre) + b_enc), k) and h_hat = W_dec^T z + b_pre, with every dictionary
//! row held at unit norm throughout training. The code z is what the atom
//! maps and ablations downstream read; this module owns the architecture,
//! its training loop, and the reconstruction-quality measurements (R^2 and
//! activation substitution).

use crate::cohort::CohortCheckpoint;
use crate::error::{Error, Result};
use crate::inr::{make_grid, InrModel};
use crate::metrics::psnr;
use crate::tensor::{
    select_topk_indices, AdamConfig, AdamState, Matrix, Scalar, StreamRng, Tape,
};

// Dictionary init draws from stream (seed, [5, 0]); batch sampling from
// (seed, [5, 1]).
const TAG_SAE: u64 = 5;
const SUB_INIT: u64 = 0;
const SUB_BATCH: u64 = 1;

/// Architecture and training knobs for one sparse autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    /// Activation dimension d (the hidden width of the source network).
    pub input_dim: usize,
    /// Atom count n; overcomplete (n > d) is the normal regime.
    pub dictionary_size: usize,
    /// Nonzeros kept per code, 1 <= k <= n.
    pub k: usize,
    pub train_steps: usize,
    pub lr: f64,
    /// Activation rows per optimizer step; datasets at or below this size
    /// train full-batch in dataset order.
    pub batch_size: usize,
    pub seed: u64,
}

impl SaeConfig {
    /// Stock settings: 4096 atoms, k = 32, 10k Adam steps at 1e-4 on
    /// 4096-row batches.
    pub fn new(input_dim: usize) -> Self {
        SaeConfig {
            input_dim,
            dictionary_size: 4096,
            k: 32,
            train_steps: 10_000,
            lr: 1e-4,
            batch_size: 4096,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::contract("SaeConfig::validate", detail));
        if self.input_dim == 0 {
            return fail("input_dim must be >= 1".into());
        }
        if self.k == 0 || self.k > self.dictionary_size {
            return fail(format!(
                "k = {} outside 1..={}",
                self.k, self.dictionary_size
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr = {} must be finite and >= 0", self.lr));
        }
        Ok(())
    }
}

/// A trained (or hand-built) sparse autoencoder. Every `w_dec` row is an
/// atom and training keeps each at unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<T: Scalar> {
    pub config: SaeConfig,
    /// Encoder matrix, n x d; row a scores atom a.
    pub w_enc: Matrix<T>,
    /// Encoder bias, 1 x n.
    pub b_enc: Matrix<T>,
    /// Dictionary, n x d; row a is atom w_a.
    pub w_dec: Matrix<T>,
    /// Centering bias, 1 x d; subtracted before encoding, added back after
    /// decoding.
    pub b_pre: Matrix<T>,
}

/// A bundle of per-coordinate activation vectors captured from one layer of
/// a trained network, with the grids they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset<T: Scalar> {
    /// Free-form label of the checkpoint the rows came from.
    pub source: String,
    /// Hidden layer the rows were captured at.
    pub layer: usize,
    /// Cohort indices of the contributing images, aligned with `grid_dims`.
    pub image_ids: Vec<usize>,
    /// (height, width) of each contributing coordinate grid.
    pub grid_dims: Vec<(usize, usize)>,
    /// One post-activation vector per coordinate, N x d, grids concatenated
    /// in `image_ids` order.
    pub rows: Matrix<T>,
}

impl<T: Scalar> ActivationDataset<T> {
    /// Row count must equal the total pixel count of the recorded grids.
    pub fn new(
        source: String,
        layer: usize,
        image_ids: Vec<usize>,
        grid_dims: Vec<(usize, usize)>,
        rows: Matrix<T>,
    ) -> Result<Self> {
        if image_ids.len() != grid_dims.len() {
            return Err(Error::contract(
                "ActivationDataset::new",
                format!(
                    "{} image ids against {} grids",
                    image_ids.len(),
                    grid_dims.len()
                ),
            ));
        }
        let expected: usize = grid_dims.iter().map(|&(h, w)| h * w).sum();
        if expected == 0 || rows.rows() != expected {
            return Err(Error::contract(
                "ActivationDataset::new",
                format!("{} rows against {} grid pixels", rows.rows(), expected),
            ));
        }
        Ok(ActivationDataset {
            source,
            layer,
            image_ids,
            grid_dims,
            rows,
        })
    }
}

impl<T: Scalar> SaeModel<T> {
    /// Validates shapes, finiteness, and the unit-norm dictionary invariant
    /// (rows within 1e-6 of norm 1).
    pub fn new(
        config: SaeConfig,
        w_enc: Matrix<T>,
        b_enc: Matrix<T>,
        w_dec: Matrix<T>,
        b_pre: Matrix<T>,
    ) -> Result<Self> {
        config.validate()?;
        let (n, d) = (config.dictionary_size, config.input_dim);
        for (name, m, shape) in [
            ("w_enc", &w_enc, (n, d)),
            ("b_enc", &b_enc, (1, n)),
            ("w_dec", &w_dec, (n, d)),
            ("b_pre", &b_pre, (1, d)),
        ] {
            if m.shape() != shape {
                return Err(Error::shape(
                    "SaeModel::new",
                    format!("{name} is {:?}, expected {:?}", m.shape(), shape),
                ));
            }
            if !m.is_finite() {
                return Err(Error::numeric("SaeModel::new", format!("{name} is not finite")));
            }
        }
        for a in 0..n {
            let norm = row_norm(&w_dec, a);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::contract(
                    "SaeModel::new",
                    format!("dictionary row {a} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(SaeModel {
            config,
            w_enc,
            b_enc,
            w_dec,
            b_pre,
        })
    }

    /// Sparse codes for a batch of activation vectors (one per row):
    /// z = TopK(ReLU(W_enc (h - b_pre) + b_enc), k). Kept entries pass
    /// through unmodified; ties at the selection boundary keep the lower
    /// atom index.
    pub fn encode(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        if h.cols() != self.config.input_dim {
            return Err(Error::shape(
                "SaeModel::encode",
                format!(
                    "rows of width {} against input_dim {}",
                    h.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let centered = sub_row_broadcast(h, &self.b_pre);
        let scores = centered
            .matmul(&self.w_enc.transpose())?
            .add_row_broadcast(&self.b_enc)?;
        if !scores.is_finite() {
            return Err(Error::numeric("SaeModel::encode", "non-finite code scores"));
        }
        Ok(topk_rows(&scores.relu(), self.config.k))
    }

    /// Reconstruction from codes: h_hat = W_dec^T z + b_pre, one row per
    /// code.
    pub fn decode(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        if z.cols() != self.config.dictionary_size {
            return Err(Error::shape(
                "SaeModel::decode",
                format!(
                    "codes of width {} against dictionary_size {}",
                    z.cols(),
                    self.config.dictionary_size
                ),
            ));
        }
        z.matmul(&self.w_dec)?.add_row_broadcast(&self.b_pre)
    }
}

/// Parameter gradients of the reconstruction objective, shaped like the
/// matrices they correspond to.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients<T: Scalar> {
    pub w_enc: Matrix<T>,
    pub b_enc: Matrix<T>,
    pub w_dec: Matrix<T>,
    pub b_pre: Matrix<T>,
}

/// Mean squared reconstruction error of `model` on `batch` and its
/// gradients; the training loop takes Adam steps along these. The TopK mask
/// is treated as constant for the backward pass, so gradients flow only
/// through the kept entries.
pub fn sae_loss_and_grads<T: Scalar>(
    model: &SaeModel<T>,
    batch: &Matrix<T>,
) -> Result<(f64, SaeGradients<T>)> {
    let params = [
        model.w_enc.clone(),
        model.b_enc.clone(),
        model.w_dec.clone(),
        model.b_pre.clone(),
    ];
    let (loss, grads) = objective_tape(&model.config, &params, batch)?;
    let mut it = grads.into_iter();
    Ok((
        loss,
        SaeGradients {
            w_enc: it.next().expect("four gradients"),
            b_enc: it.next().expect("four gradients"),
            w_dec: it.next().expect("four gradients"),
            b_pre: it.next().expect("four gradients"),
        },
    ))
}

// Canonical parameter order everywhere in the trainer: w_enc, b_enc, w_dec,
// b_pre.
const P_WDEC: usize = 2;

/// Builds the reconstruction tape for one batch and runs backward. Returns
/// the scalar loss and gradients in canonical parameter order.
fn objective_tape<T: Scalar>(
    cfg: &SaeConfig,
    params: &[Matrix<T>],
    batch: &Matrix<T>,
) -> Result<(f64, Vec<Matrix<T>>)> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let ids: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let (w_enc, b_enc, w_dec, b_pre) = (ids[0], ids[1], ids[2], ids[3]);

    let neg_b_pre = tape.scale(b_pre, T::real(-1.0));
    let centered = tape.add_bias(x, neg_b_pre)?;
    let scores = tape.matmul_tb(centered, w_enc)?;
    let scores = tape.add_bias(scores, b_enc)?;
    let active = tape.relu(scores);
    let z = tape.topk_mask(active, cfg.k)?;
    let recon = tape.matmul(z, w_dec)?;
    let recon = tape.add_bias(recon, b_pre)?;
    let diff = tape.sub(recon, x)?;
    let sq = tape.square(diff);
    let loss_node = tape.mean(sq);

    let loss = tape.value(loss_node).get(0, 0).as_f64();
    let mut grads = tape.backward(loss_node)?;
    let out = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.take_or_zeros(id, p.rows(), p.cols()))
        .collect();
    Ok((loss, out))
}

/// One SAE mid-training: parameters in canonical order plus the optimizer
/// and batch-sampling state. Exists so tests can drive and inspect single
/// steps; [`train_sae`] is the public entry.
pub(crate) struct SaeTrainer<T: Scalar> {
    cfg: SaeConfig,
    pub(crate) params: Vec<Matrix<T>>,
    data: Matrix<T>,
    rng: StreamRng,
    adam: AdamState<T>,
}

impl<T: Scalar> SaeTrainer<T> {
    pub(crate) fn new(rows: &Matrix<T>, cfg: &SaeConfig) -> Result<Self> {
        cfg.validate()?;
        if rows.rows() == 0 {
            return Err(Error::contract("train_sae", "empty activation dataset"));
        }
        if rows.cols() != cfg.input_dim {
            return Err(Error::shape(
                "train_sae",
                format!(
                    "activation rows of width {} against input_dim {}",
                    rows.cols(),
                    cfg.input_dim
                ),
            ));
        }
        if !rows.is_finite() {
            return Err(Error::numeric(
                "train_sae",
                "activation dataset contains non-finite values",
            ));
        }
        let (n, d) = (cfg.dictionary_size, cfg.input_dim);
        let mut rng_init = StreamRng::stream(cfg.seed, &[TAG_SAE, SUB_INIT]);
        let mut w_dec = Matrix::from_fn(n, d, |_, _| T::real(rng_init.normal()));
        normalize_rows(&mut w_dec);
        // encoder starts as the dictionary so each atom initially scores its
        // own direction highest
        let w_enc = w_dec.clone();
        let params = vec![
            w_enc,
            Matrix::zeros(1, n),
            w_dec,
            column_means(rows),
        ];
        let adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &params);
        Ok(SaeTrainer {
            cfg: cfg.clone(),
            params,
            data: rows.clone(),
            rng: StreamRng::stream(cfg.seed, &[TAG_SAE, SUB_BATCH]),
            adam,
        })
    }

    /// The next training batch: the whole dataset when it fits, otherwise
    /// `batch_size` rows sampled uniformly with replacement.
    fn next_batch(&mut self) -> Matrix<T> {
        let n_rows = self.data.rows();
        if n_rows <= self.cfg.batch_size {
            return self.data.clone();
        }
        let cols = self.data.cols();
        let mut data = Vec::with_capacity(self.cfg.batch_size * cols);
        for _ in 0..self.cfg.batch_size {
            data.extend_from_slice(self.data.row(self.rng.uniform_index(n_rows)));
        }
        Matrix::from_vec(self.cfg.batch_size, cols, data).expect("sampled batch shape")
    }

    /// One batch, one Adam step, one dictionary renormalization. Returns the
    /// pre-step batch loss.
    pub(crate) fn step_once(&mut self, step: usize) -> Result<f64> {
        let batch = self.next_batch();
        let (loss, grads) = objective_tape(&self.cfg, &self.params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::numeric(
                "train_sae",
                format!("non-finite loss at step {step}"),
            ));
        }
        self.adam.step(&mut self.params, &grads)?;
        normalize_rows(&mut self.params[P_WDEC]);
        Ok(loss)
    }

    pub(crate) fn into_model(self) -> SaeModel<T> {
        let mut it = self.params.into_iter();
        SaeModel {
            config: self.cfg,
            w_enc: it.next().expect("four parameters"),
            b_enc: it.next().expect("four parameters"),
            w_dec: it.next().expect("four parameters"),
            b_pre: it.next().expect("four parameters"),
        }
    }
}

/// Trains a TopK SAE on the dataset's activation rows: b_pre starts at the
/// dataset mean, the dictionary at random unit-norm rows (encoder a copy of
/// it), and every Adam step is followed by renormalizing the dictionary
/// rows, so the unit-norm invariant holds at every step, not just at the
/// end. There is no dead-atom resampling.
pub fn train_sae<T: Scalar>(
    data: &ActivationDataset<T>,
    cfg: &SaeConfig,
) -> Result<SaeModel<T>> {
    let mut trainer = SaeTrainer::new(&data.rows, cfg)?;
    for step in 0..cfg.train_steps {
        trainer.step_once(step)?;
    }
    Ok(trainer.into_model())
}

/// Fraction of activation variance the SAE reconstructs: 1 - MSE / Var,
/// aggregated over every entry, with deviations measured against the
/// per-dimension dataset means. A dataset with no variance in any dimension
/// is rejected.
pub fn r2<T: Scalar>(model: &SaeModel<T>, data: &ActivationDataset<T>) -> Result<f64> {
    let h = &data.rows;
    if h.cols() != model.config.input_dim {
        return Err(Error::shape(
            "r2",
            format!(
                "activation rows of width {} against input_dim {}",
                h.cols(),
                model.config.input_dim
            ),
        ));
    }
    let constant = (0..h.cols()).all(|c| {
        let first = h.get(0, c);
        (1..h.rows()).all(|r| h.get(r, c) == first)
    });
    if constant {
        return Err(Error::contract("r2", "zero-variance dataset"));
    }
    let recon = model.decode(&model.encode(h)?)?;
    let means = column_means(h);
    let mut ss_res = 0.0f64;
    let mut ss_tot = 0.0f64;
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            let e = recon.get(r, c).as_f64() - h.get(r, c).as_f64();
            ss_res += e * e;
            let d = h.get(r, c).as_f64() - means.get(0, c).as_f64();
            ss_tot += d * d;
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::contract("r2", "zero-variance dataset"));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Reconstruction fidelity of the SAE in network terms: runs image
/// `image_index`'s model forward, swaps the layer's activations for their
/// SAE reconstruction, finishes the pass, and returns the PSNR of the
/// substituted output against the unmodified model's own output (not the
/// training image).
pub fn substitute_reconstruction<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    sae: &SaeModel<T>,
    layer: usize,
    image_index: usize,
) -> Result<f64> {
    let model = ckpt.model_for(image_index)?;
    let &(height, width) = ckpt.meta.image_dims.get(image_index).ok_or_else(|| {
        Error::contract(
            "substitute_reconstruction",
            format!("checkpoint metadata lists no dims for image {image_index}"),
        )
    })?;
    let grid = make_grid::<T>(height, width)?;
    let (baseline, captured) = model.forward_coords(&grid.coords, &[layer])?;
    let replaced = sae.decode(&sae.encode(&captured[&layer])?)?;
    let substituted = model.forward_from(&replaced, layer)?;
    psnr(&substituted, &baseline)
}

/// Captures layer `layer`'s post-activations over the full training grids
/// of every cohort image, concatenated in cohort order. Activations depend
/// only on the shared encoder, so images with equal dims contribute
/// identical blocks; keeping the duplicates weights coordinates the way
/// training saw them.
pub fn collect_activations<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    layer: usize,
) -> Result<ActivationDataset<T>> {
    if ckpt.meta.image_dims.is_empty() {
        return Err(Error::contract(
            "collect_activations",
            "checkpoint lists no image dims",
        ));
    }
    let model = ckpt.model_for(0)?;
    let width = ckpt.config.width;
    let mut data = Vec::new();
    let mut image_ids = Vec::new();
    let mut grid_dims = Vec::new();
    for (j, &(h, w)) in ckpt.meta.image_dims.iter().enumerate() {
        let rows = captured_rows(&model, h, w, layer)?;
        data.extend_from_slice(rows.data());
        image_ids.push(j);
        grid_dims.push((h, w));
    }
    let total: usize = grid_dims.iter().map(|&(h, w)| h * w).sum();
    ActivationDataset::new(
        ckpt.meta.dataset.clone(),
        layer,
        image_ids,
        grid_dims,
        Matrix::from_vec(total, width, data)?,
    )
}

/// Single-model variant of [`collect_activations`]: one grid, one image id
/// (0), activations from `model` at `layer`.
pub fn collect_activations_from_model<T: Scalar>(
    model: &InrModel<T>,
    height: usize,
    width: usize,
    layer: usize,
    source: &str,
) -> Result<ActivationDataset<T>> {
    let rows = captured_rows(model, height, width, layer)?;
    ActivationDataset::new(
        source.to_string(),
        layer,
        vec![0],
        vec![(height, width)],
        rows,
    )
}

fn captured_rows<T: Scalar>(
    model: &InrModel<T>,
    height: usize,
    width: usize,
    layer: usize,
) -> Result<Matrix<T>> {
    let grid = make_grid::<T>(height, width)?;
    let (_, mut captured) = model.forward_coords(&grid.coords, &[layer])?;
    Ok(captured.remove(&layer).expect("requested capture layer"))
}

/// Row-wise TopK mask over nonnegative scores: the k largest entries of
/// each row pass through unmodified, everything else becomes zero, ties
/// keep the lower index. Mirrors the mask the training tape applies.
fn topk_rows<T: Scalar>(scores: &Matrix<T>, k: usize) -> Matrix<T> {
    let (rows, cols) = scores.shape();
    let mut z = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = scores.row(r);
        for &i in &select_topk_indices(row, k) {
            z.set(r, i as usize, row[i as usize]);
        }
    }
    z
}

fn sub_row_broadcast<T: Scalar>(m: &Matrix<T>, row: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(row.shape(), (1, m.cols()));
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) - row.get(0, c))
}

fn row_norm<T: Scalar>(m: &Matrix<T>, r: usize) -> f64 {
    m.row(r)
        .iter()
        .map(|x| {
            let v = x.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales every row to unit L2 norm; all-zero rows are left alone (an
/// atom the optimizer has zeroed exactly has no direction to keep).
fn normalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    for r in 0..m.rows() {
        let norm = row_norm(m, r);
        if norm > 0.0 {
            for x in m.row_mut(r) {
                *x = T::real(x.as_f64() / norm);
            }
        }
    }
}

/// Per-dimension means as a 1 x d row, accumulated in f64.
fn column_means<T: Scalar>(rows: &Matrix<T>) -> Matrix<T> {
    let (n, d) = rows.shape();
    let mut sums = vec![0.0f64; d];
    for r in 0..n {
        for (c, s) in sums.iter_mut().enumerate() {
            *s += rows.get(r, c).as_f64();
        }
    }
    Matrix::from_fn(1, d, |_, c| T::real(sums[c] / n as f64))
}
