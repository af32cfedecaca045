//! Full-batch Adam training shared by every fitting mode.
//!
//! One engine drives single-image fits, joint cohort training, and the
//! frozen-prefix refits: the caller chooses how many signals share the
//! encoder, which encoder layers are trainable, and one linear head per
//! signal. Each iteration records one tape over all signals, sums the
//! per-signal mean-squared losses, and applies a single Adam step to every
//! trainable parameter. Frozen layers enter the tape as constants, so no
//! gradient work is spent on them and their bytes never change.

use crate::error::{Error, Result};
use crate::inr::{encode_core, Backbone, ImageTensor, InrConfig, InrModel};
use crate::metrics::psnr_from_mse;
use crate::tensor::{AdamConfig, AdamState, Matrix, NodeId, Scalar, Tape};

/// Knobs for one training run.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub iters: usize,
    pub lr: f64,
    /// Early stop: finish after the first checked iteration whose mean
    /// reconstruction PSNR (measured by that iteration's forward pass,
    /// before its update) reaches this many dB.
    pub psnr_stop: Option<f64>,
    /// Stop-rule schedule: the first iteration is always checked, then every
    /// `check_every`-th iteration after it (1 = every iteration; the loss is
    /// already computed, so checking is free).
    pub check_every: usize,
}

impl FitOptions {
    pub fn new(iters: usize, lr: f64) -> Self {
        FitOptions {
            iters,
            lr,
            psnr_stop: None,
            check_every: 1,
        }
    }

    pub fn with_stop(mut self, psnr_stop: f64) -> Self {
        self.psnr_stop = Some(psnr_stop);
        self
    }
}

/// What a training run measured.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Mean PSNR per executed iteration, from each iteration's forward pass
    /// before its parameter update.
    pub psnr_curve: Vec<f64>,
    /// Iterations actually executed (shorter than requested when the stop
    /// rule fired).
    pub iterations_run: usize,
}

/// Everything the engine needs to start: parameters and the freeze mask.
/// `heads` holds one (weight, bias) pair per signal, trained alongside the
/// unfrozen encoder layers.
pub(crate) struct TrainerSetup<T: Scalar> {
    pub config: InrConfig,
    pub fourier_b: Option<Matrix<T>>,
    pub enc_w: Vec<Matrix<T>>,
    pub enc_b: Vec<Matrix<T>>,
    pub frozen: Vec<bool>,
    pub heads: Vec<(Matrix<T>, Matrix<T>)>,
}

impl<T: Scalar> TrainerSetup<T> {
    /// Single-signal setup over a whole model, nothing frozen.
    pub fn from_model(model: &InrModel<T>) -> Self {
        TrainerSetup {
            config: model.config.clone(),
            fourier_b: model.fourier_b.clone(),
            enc_w: model.enc_w.clone(),
            enc_b: model.enc_b.clone(),
            frozen: vec![false; model.config.hidden_layers],
            heads: vec![(model.head_w.clone(), model.head_b.clone())],
        }
    }
}

pub(crate) struct Trainer<T: Scalar> {
    config: InrConfig,
    fourier_b: Option<Matrix<T>>,
    /// Frozen (weight, bias) per layer; None where the layer is trainable.
    frozen_layers: Vec<Option<(Matrix<T>, Matrix<T>)>>,
    /// Trainable parameters in canonical order: (w, b) per unfrozen layer
    /// ascending, then (w, b) per head ascending.
    params: Vec<Matrix<T>>,
    /// Layer index -> position of its weight in `params` (bias follows).
    enc_slot: Vec<Option<usize>>,
    /// Head index -> position of its weight in `params` (bias follows).
    head_slot: Vec<usize>,
    /// Encoded input per signal (coordinates or Fourier features).
    inputs: Vec<Matrix<T>>,
    targets: Vec<Matrix<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub(crate) fn new(setup: TrainerSetup<T>, images: &[ImageTensor<T>]) -> Result<Self> {
        let TrainerSetup {
            config,
            fourier_b,
            enc_w,
            enc_b,
            frozen,
            heads,
        } = setup;
        config.validate()?;
        let l_total = config.hidden_layers;
        if enc_w.len() != l_total || enc_b.len() != l_total || frozen.len() != l_total {
            return Err(Error::contract(
                "Trainer::new",
                format!(
                    "encoder arrays ({}, {}, {}) must all have {} layers",
                    enc_w.len(),
                    enc_b.len(),
                    frozen.len(),
                    l_total
                ),
            ));
        }
        if images.is_empty() {
            return Err(Error::contract("Trainer::new", "no signals to fit"));
        }
        if heads.len() != images.len() {
            return Err(Error::contract(
                "Trainer::new",
                format!("{} heads for {} signals", heads.len(), images.len()),
            ));
        }
        if config.input_dim != 2 {
            return Err(Error::contract(
                "Trainer::new",
                format!("image grids are 2-D, config.input_dim = {}", config.input_dim),
            ));
        }
        for (l, w) in enc_w.iter().enumerate() {
            let expect = (config.layer_in_dim(l), config.width);
            if w.shape() != expect || enc_b[l].shape() != (1, config.width) {
                return Err(Error::shape(
                    "Trainer::new",
                    format!("layer {l}: weight {:?}, bias {:?}", w.shape(), enc_b[l].shape()),
                ));
            }
        }
        for (j, (hw, hb)) in heads.iter().enumerate() {
            if hw.shape() != (config.width, config.output_dim)
                || hb.shape() != (1, config.output_dim)
            {
                return Err(Error::shape(
                    "Trainer::new",
                    format!("head {j}: weight {:?}, bias {:?}", hw.shape(), hb.shape()),
                ));
            }
        }
        match (config.backbone, &fourier_b) {
            (Backbone::Ffmlp, Some(b)) => {
                if b.shape() != (config.fourier_features, config.input_dim) {
                    return Err(Error::shape(
                        "Trainer::new",
                        format!("fourier projection {:?}", b.shape()),
                    ));
                }
            }
            (Backbone::Ffmlp, None) => {
                return Err(Error::contract("Trainer::new", "ffmlp setup without a projection"));
            }
            (Backbone::Siren, Some(_)) => {
                return Err(Error::contract("Trainer::new", "siren setup with a projection"));
            }
            (Backbone::Siren, None) => {}
        }

        let mut inputs = Vec::with_capacity(images.len());
        let mut targets = Vec::with_capacity(images.len());
        for (j, img) in images.iter().enumerate() {
            if img.channels != config.output_dim {
                return Err(Error::contract(
                    "Trainer::new",
                    format!(
                        "signal {j} has {} channels, model outputs {}",
                        img.channels, config.output_dim
                    ),
                ));
            }
            if !img.in_unit_range() {
                return Err(Error::contract(
                    "Trainer::new",
                    format!("signal {j} has pixels outside [0, 1]"),
                ));
            }
            inputs.push(encode_core(&config, fourier_b.as_ref(), &img.grid().coords)?);
            targets.push(img.pixels.clone());
        }

        let mut params = Vec::new();
        let mut frozen_layers = Vec::with_capacity(l_total);
        let mut enc_slot = Vec::with_capacity(l_total);
        for (l, (w, b)) in enc_w.into_iter().zip(enc_b).enumerate() {
            if frozen[l] {
                frozen_layers.push(Some((w, b)));
                enc_slot.push(None);
            } else {
                enc_slot.push(Some(params.len()));
                params.push(w);
                params.push(b);
                frozen_layers.push(None);
            }
        }
        let mut head_slot = Vec::with_capacity(heads.len());
        for (hw, hb) in heads {
            head_slot.push(params.len());
            params.push(hw);
            params.push(hb);
        }

        Ok(Trainer {
            config,
            fourier_b,
            frozen_layers,
            params,
            enc_slot,
            head_slot,
            inputs,
            targets,
        })
    }

    /// Records one forward/backward pass over all signals and returns the
    /// per-signal MSEs plus gradients in canonical parameter order.
    pub(crate) fn step_once(&self, it: usize) -> Result<(Vec<f64>, Vec<Matrix<T>>)> {
        let mut tape = Tape::new();
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let frozen_ids: Vec<Option<(NodeId, NodeId)>> = self
            .frozen_layers
            .iter()
            .map(|fl| {
                fl.as_ref()
                    .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            })
            .collect();

        let mut mses = Vec::with_capacity(self.inputs.len());
        let mut total: Option<NodeId> = None;
        for j in 0..self.inputs.len() {
            let x = tape.constant(self.inputs[j].clone());
            let y = tape.constant(self.targets[j].clone());
            let mut h = x;
            for l in 0..self.config.hidden_layers {
                let (w_id, b_id) = match self.enc_slot[l] {
                    Some(i) => (param_ids[i], param_ids[i + 1]),
                    None => frozen_ids[l].expect("frozen layer recorded"),
                };
                let mm = tape.matmul(h, w_id)?;
                let pre = tape.add_bias(mm, b_id)?;
                h = match self.config.backbone {
                    Backbone::Siren => {
                        let omega = self.config.omega_for_layer(l);
                        let scaled = if omega != 1.0 {
                            tape.scale(pre, T::real(omega))
                        } else {
                            pre
                        };
                        tape.sin(scaled)
                    }
                    Backbone::Ffmlp => tape.relu(pre),
                };
            }
            let hs = self.head_slot[j];
            let mm = tape.matmul(h, param_ids[hs])?;
            let out = tape.add_bias(mm, param_ids[hs + 1])?;
            let diff = tape.sub(out, y)?;
            let sq = tape.square(diff);
            let mse_node = tape.mean(sq);
            let mse = tape.value(mse_node).get(0, 0).as_f64();
            if !mse.is_finite() {
                return Err(Error::numeric(
                    "fit",
                    format!("non-finite loss for signal {j} at iteration {it}"),
                ));
            }
            mses.push(mse);
            // scalar accumulation stays inside the recorded op set: adding a
            // 1x1 "bias" to a 1x1 value is plain addition with the right VJP
            total = Some(match total {
                None => mse_node,
                Some(acc) => tape.add_bias(acc, mse_node)?,
            });
        }

        let total = total.expect("at least one signal");
        let mut grads = tape.backward(total)?;
        let ordered = param_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let (r, c) = self.params[i].shape();
                grads.take_or_zeros(id, r, c)
            })
            .collect();
        Ok((mses, ordered))
    }

    /// Runs the loop: forward all signals, sum losses, one Adam step, then
    /// the stop check against the PSNR measured by this iteration's forward
    /// pass.
    pub(crate) fn train(&mut self, opts: &FitOptions) -> Result<FitReport> {
        if opts.check_every == 0 {
            return Err(Error::contract("fit", "check_every must be >= 1"));
        }
        if !(opts.lr.is_finite() && opts.lr >= 0.0) {
            return Err(Error::contract("fit", format!("lr = {} must be >= 0", opts.lr)));
        }
        let mut adam = AdamState::new(AdamConfig::with_lr(opts.lr), &self.params);
        let mut curve = Vec::with_capacity(opts.iters);
        for it in 0..opts.iters {
            let (mses, grads) = self.step_once(it)?;
            adam.step(&mut self.params, &grads)?;
            let mean_psnr =
                mses.iter().map(|&m| psnr_from_mse(m)).sum::<f64>() / mses.len() as f64;
            curve.push(mean_psnr);
            if let Some(stop) = opts.psnr_stop {
                let checked = it == 0 || (it + 1) % opts.check_every == 0;
                if checked && mean_psnr >= stop {
                    break;
                }
            }
        }
        Ok(FitReport {
            iterations_run: curve.len(),
            psnr_curve: curve,
        })
    }

    /// Hands the (possibly trained) parameters back in model layout:
    /// (fourier_b, enc_w, enc_b, heads).
    #[allow(clippy::type_complexity)]
    pub(crate) fn into_parts(
        self,
    ) -> (
        Option<Matrix<T>>,
        Vec<Matrix<T>>,
        Vec<Matrix<T>>,
        Vec<(Matrix<T>, Matrix<T>)>,
    ) {
        let Trainer {
            frozen_layers,
            mut params,
            enc_slot,
            head_slot,
            fourier_b,
            ..
        } = self;
        // drain from the back so indices stay valid
        let mut heads: Vec<(Matrix<T>, Matrix<T>)> = Vec::with_capacity(head_slot.len());
        for &hs in head_slot.iter().rev() {
            let hb = params.remove(hs + 1);
            let hw = params.remove(hs);
            heads.push((hw, hb));
        }
        heads.reverse();
        let mut enc_w = Vec::with_capacity(enc_slot.len());
        let mut enc_b = Vec::with_capacity(enc_slot.len());
        for (slot, frozen) in enc_slot.iter().zip(frozen_layers).rev() {
            match (slot, frozen) {
                (Some(i), _) => {
                    enc_b.push(params.remove(i + 1));
                    enc_w.push(params.remove(*i));
                }
                (None, Some((w, b))) => {
                    enc_w.push(w);
                    enc_b.push(b);
                }
                (None, None) => unreachable!("layer is either trainable or frozen"),
            }
        }
        enc_w.reverse();
        enc_b.reverse();
        (fourier_b, enc_w, enc_b, heads)
    }
}

/// Fits `model` to one image with full-batch Adam, mutating it in place.
/// Returns the per-iteration PSNR curve; with `iters = 0` the model passes
/// through bitwise unchanged and the curve is empty.
pub fn fit_single<T: Scalar>(
    model: &mut InrModel<T>,
    image: &ImageTensor<T>,
    opts: &FitOptions,
) -> Result<FitReport> {
    let setup = TrainerSetup::from_model(model);
    let mut trainer = Trainer::new(setup, std::slice::from_ref(image))?;
    let report = trainer.train(opts)?;
    let (fourier_b, enc_w, enc_b, mut heads) = trainer.into_parts();
    let (head_w, head_b) = heads.pop().expect("single head");
    model.fourier_b = fourier_b;
    model.enc_w = enc_w;
    model.enc_b = enc_b;
    model.head_w = head_w;
    model.head_b = head_b;
    Ok(report)
}
