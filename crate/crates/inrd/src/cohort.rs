//! Joint training of one shared encoder against per-signal linear heads.
//!
//! A cohort of M images is fit by a single set of hidden layers (the
//! encoder, plus the fixed Fourier projection for the ReLU backbone) while
//! every image keeps its own output head. Each iteration sums the per-image
//! mean-squared losses and applies one Adam step to the encoder and all
//! heads together. Only the heads see image-specific gradients; the encoder
//! receives the sum of every image's gradient, which is what makes its
//! layers a shared representation worth transferring.

use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitReport, Trainer, TrainerSetup};
use crate::inr::{init, init_head, ImageTensor, InrConfig, InrModel};
use crate::metrics::psnr;
use crate::tensor::{Matrix, Scalar};

/// The shared parameters: every hidden layer, and the fixed Fourier
/// projection when the backbone uses one.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T: Scalar> {
    pub fourier_b: Option<Matrix<T>>,
    pub layer_w: Vec<Matrix<T>>,
    pub layer_b: Vec<Matrix<T>>,
}

impl<T: Scalar> Encoder<T> {
    /// Extracts the shared part of a full model.
    pub fn of_model(model: &InrModel<T>) -> Self {
        Encoder {
            fourier_b: model.fourier_b.clone(),
            layer_w: model.enc_w.clone(),
            layer_b: model.enc_b.clone(),
        }
    }

    /// Assembles a full model from this encoder and one head.
    pub fn with_head(
        &self,
        config: &InrConfig,
        head_w: Matrix<T>,
        head_b: Matrix<T>,
    ) -> Result<InrModel<T>> {
        if head_w.shape() != (config.width, config.output_dim)
            || head_b.shape() != (1, config.output_dim)
        {
            return Err(Error::shape(
                "Encoder::with_head",
                format!("head {:?} / {:?}", head_w.shape(), head_b.shape()),
            ));
        }
        Ok(InrModel {
            config: config.clone(),
            fourier_b: self.fourier_b.clone(),
            enc_w: self.layer_w.clone(),
            enc_b: self.layer_b.clone(),
            head_w,
            head_b,
        })
    }
}

/// How a cohort checkpoint came to be.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMeta {
    pub iterations_run: usize,
    /// Cohort-mean PSNR of the final parameters on the training images.
    pub final_psnr: f64,
    pub seed: u64,
    /// Free-form tag naming the source dataset.
    pub dataset: String,
    /// (height, width) per image, in cohort order.
    pub image_dims: Vec<(usize, usize)>,
}

/// A trained shared encoder with its per-image heads.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortCheckpoint<T: Scalar> {
    pub config: InrConfig,
    pub encoder: Encoder<T>,
    pub heads: Vec<(Matrix<T>, Matrix<T>)>,
    pub meta: CohortMeta,
}

impl<T: Scalar> CohortCheckpoint<T> {
    pub fn cohort_size(&self) -> usize {
        self.heads.len()
    }

    /// Full model for image `j`: the shared encoder plus head `j`.
    pub fn model_for(&self, j: usize) -> Result<InrModel<T>> {
        let (hw, hb) = self.heads.get(j).ok_or_else(|| {
            Error::contract(
                "CohortCheckpoint::model_for",
                format!("head {j} of {}", self.heads.len()),
            )
        })?;
        self.encoder.with_head(&self.config, hw.clone(), hb.clone())
    }
}

/// Training knobs for a cohort run. `psnr_stop` is always active; set it
/// absurdly high to disable early stopping in practice.
#[derive(Debug, Clone)]
pub struct CohortOptions {
    pub iters: usize,
    pub lr: f64,
    pub psnr_stop: f64,
    /// Stop-rule schedule as in `FitOptions`: the first iteration is always
    /// checked, then every `check_every`-th iteration.
    pub check_every: usize,
    /// Recorded in the checkpoint metadata.
    pub dataset: String,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            iters: 5000,
            lr: 1e-4,
            psnr_stop: 30.0,
            check_every: 50,
            dataset: String::new(),
        }
    }
}

/// Jointly fits the shared encoder and M per-image heads from a seeded
/// random init. Returns the checkpoint and the iteration-by-iteration
/// training report.
pub fn cohort_train<T: Scalar>(
    images: &[ImageTensor<T>],
    config: &InrConfig,
    opts: &CohortOptions,
    seed: u64,
) -> Result<(CohortCheckpoint<T>, FitReport)> {
    let base: InrModel<T> = init(config, seed)?;
    let mut heads = Vec::with_capacity(images.len());
    for j in 0..images.len() {
        heads.push(init_head(config, seed, j as u64));
    }
    let setup = TrainerSetup {
        config: config.clone(),
        fourier_b: base.fourier_b.clone(),
        enc_w: base.enc_w.clone(),
        enc_b: base.enc_b.clone(),
        frozen: vec![false; config.hidden_layers],
        heads,
    };
    let mut trainer = Trainer::new(setup, images)?;
    let fit_opts = FitOptions {
        iters: opts.iters,
        lr: opts.lr,
        psnr_stop: Some(opts.psnr_stop),
        check_every: opts.check_every,
    };
    let report = trainer.train(&fit_opts)?;
    let (fourier_b, layer_w, layer_b, heads) = trainer.into_parts();

    let mut ckpt = CohortCheckpoint {
        config: config.clone(),
        encoder: Encoder {
            fourier_b,
            layer_w,
            layer_b,
        },
        heads,
        meta: CohortMeta {
            iterations_run: report.iterations_run,
            final_psnr: 0.0,
            seed,
            dataset: opts.dataset.clone(),
            image_dims: images.iter().map(|im| (im.height, im.width)).collect(),
        },
    };
    // metadata records the PSNR of the parameters actually stored, measured
    // the same way cohort_psnr measures it
    let (_, mean) = cohort_psnr(&ckpt, images)?;
    ckpt.meta.final_psnr = mean;
    Ok((ckpt, report))
}

/// Reconstruction PSNR of each training image under its own head, plus the
/// arithmetic mean.
pub fn cohort_psnr<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    images: &[ImageTensor<T>],
) -> Result<(Vec<f64>, f64)> {
    if images.len() != ckpt.heads.len() {
        return Err(Error::contract(
            "cohort_psnr",
            format!("{} images for {} heads", images.len(), ckpt.heads.len()),
        ));
    }
    if images.is_empty() {
        return Err(Error::contract("cohort_psnr", "empty cohort"));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for (j, img) in images.iter().enumerate() {
        let expect = ckpt.meta.image_dims.get(j).copied();
        if expect != Some((img.height, img.width)) {
            return Err(Error::contract(
                "cohort_psnr",
                format!(
                    "image {j} is {}x{}, checkpoint recorded {:?}",
                    img.height, img.width, expect
                ),
            ));
        }
        let model = ckpt.model_for(j)?;
        let (out, _) = model.forward(&img.grid(), &[])?;
        per_image.push(psnr(&out, &img.pixels)?);
    }
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok((per_image, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_single;
    use crate::metrics::PSNR_CAP_DB;
    use crate::workbench::{synth_image, SynthKind};

    fn desk_config() -> InrConfig {
        let mut cfg = InrConfig::siren(30.0);
        cfg.hidden_layers = 2;
        cfg.width = 32;
        cfg.output_dim = 1;
        cfg
    }

    fn desk_cohort(m: usize, side: usize, seed0: u64) -> Vec<ImageTensor<f32>> {
        (0..m)
            .map(|j| {
                synth_image(SynthKind::Bandlimited, side, side, 1, seed0 + j as u64).unwrap()
            })
            .collect()
    }

    /// Encoder with all-zero layers: every activation is sin(0) or relu(0),
    /// so the model output is exactly the head bias everywhere.
    fn bias_only_checkpoint(values: &[f64]) -> (CohortCheckpoint<f64>, Vec<ImageTensor<f64>>) {
        let cfg = desk_config();
        let encoder = Encoder {
            fourier_b: None,
            layer_w: vec![
                Matrix::zeros(2, cfg.width),
                Matrix::zeros(cfg.width, cfg.width),
            ],
            layer_b: vec![Matrix::zeros(1, cfg.width), Matrix::zeros(1, cfg.width)],
        };
        let heads = values
            .iter()
            .map(|_| (Matrix::zeros(cfg.width, 1), Matrix::from_vec(1, 1, vec![0.5]).unwrap()))
            .collect();
        let images = values
            .iter()
            .map(|&v| {
                ImageTensor::new(8, 8, 1, Matrix::from_fn(64, 1, |_, _| v)).unwrap()
            })
            .collect::<Vec<_>>();
        let ckpt = CohortCheckpoint {
            config: cfg,
            encoder,
            heads,
            meta: CohortMeta {
                iterations_run: 0,
                final_psnr: 0.0,
                seed: 0,
                dataset: "handmade".into(),
                image_dims: images.iter().map(|im| (im.height, im.width)).collect(),
            },
        };
        (ckpt, images)
    }

    #[test]
    fn single_image_cohort_matches_fit_single_exactly() {
        let cfg = desk_config();
        let image = synth_image::<f32>(SynthKind::Bandlimited, 16, 16, 1, 40).unwrap();
        let opts = CohortOptions {
            iters: 30,
            lr: 1e-3,
            psnr_stop: f64::INFINITY,
            check_every: 1,
            dataset: String::new(),
        };
        let (ckpt, report) =
            cohort_train(std::slice::from_ref(&image), &cfg, &opts, 7).unwrap();

        let mut single = init::<f32>(&cfg, 7).unwrap();
        let single_report =
            fit_single(&mut single, &image, &FitOptions::new(30, 1e-3)).unwrap();

        assert_eq!(report.psnr_curve, single_report.psnr_curve);
        assert_eq!(ckpt.encoder.layer_w, single.enc_w);
        assert_eq!(ckpt.encoder.layer_b, single.enc_b);
        assert_eq!(ckpt.heads[0].0, single.head_w);
        assert_eq!(ckpt.heads[0].1, single.head_b);
    }

    #[test]
    fn psnr_stop_zero_returns_after_one_iteration() {
        let cfg = desk_config();
        let images = desk_cohort(2, 8, 60);
        let opts = CohortOptions {
            iters: 100,
            lr: 1e-4,
            psnr_stop: 0.0,
            ..CohortOptions::default()
        };
        let (ckpt, report) = cohort_train(&images, &cfg, &opts, 3).unwrap();
        assert_eq!(report.iterations_run, 1);
        assert_eq!(ckpt.meta.iterations_run, 1);
    }

    #[test]
    fn desk_cohort_reaches_28_db_on_three_seeds() {
        for seed in [0u64, 1, 2] {
            let cfg = desk_config();
            let images = desk_cohort(4, 64, 200 + 10 * seed);
            let opts = CohortOptions {
                iters: 5000,
                lr: 1e-3,
                psnr_stop: 28.0,
                check_every: 50,
                dataset: "synthetic-bandlimited".into(),
            };
            let (ckpt, report) = cohort_train(&images, &cfg, &opts, seed).unwrap();
            assert!(
                report.iterations_run <= 5000,
                "seed {seed} did not stop within budget"
            );
            let last = *report.psnr_curve.last().unwrap();
            assert!(
                last >= 28.0,
                "seed {seed} stopped at {last:.2} dB after {} iters",
                report.iterations_run
            );
            assert_eq!(ckpt.meta.image_dims, vec![(64, 64); 4]);
        }
    }

    #[test]
    fn head_gradients_are_isolated_per_image() {
        // changing image 1's pixels must not move head 0's gradient at all,
        // while head 1's gradient must move
        let cfg = desk_config();
        let l = cfg.hidden_layers;
        let images_a = desk_cohort(2, 8, 80);
        let mut images_b = images_a.clone();
        images_b[1] = synth_image::<f32>(SynthKind::Blobs, 8, 8, 1, 99).unwrap();

        let grads = |imgs: &[ImageTensor<f32>]| {
            let base = init::<f32>(&cfg, 5).unwrap();
            let setup = TrainerSetup {
                config: cfg.clone(),
                fourier_b: None,
                enc_w: base.enc_w.clone(),
                enc_b: base.enc_b.clone(),
                frozen: vec![false; l],
                heads: vec![init_head(&cfg, 5, 0), init_head(&cfg, 5, 1)],
            };
            let trainer = Trainer::new(setup, imgs).unwrap();
            let (_, g) = trainer.step_once(0).unwrap();
            g
        };
        let ga = grads(&images_a);
        let gb = grads(&images_b);
        // canonical order: (w, b) per encoder layer, then (w, b) per head
        let head0_w = 2 * l;
        let head1_w = 2 * l + 2;
        assert_eq!(ga[head0_w], gb[head0_w]);
        assert_eq!(ga[head0_w + 1], gb[head0_w + 1]);
        assert_ne!(ga[head1_w], gb[head1_w]);
        // the shared encoder sees image 1, so its gradient moves too
        assert_ne!(ga[0], gb[0]);
    }

    #[test]
    fn encoder_gradient_is_the_sum_of_per_image_gradients() {
        let cfg = desk_config();
        let l = cfg.hidden_layers;
        // mixed dims on purpose: the sum is unweighted regardless of pixel count
        let img0 = synth_image::<f64>(SynthKind::Bandlimited, 8, 8, 1, 81).unwrap();
        let img1 = synth_image::<f64>(SynthKind::Blobs, 12, 12, 1, 82).unwrap();
        let base = init::<f64>(&cfg, 9).unwrap();

        let setup_for = |heads: Vec<(Matrix<f64>, Matrix<f64>)>| TrainerSetup {
            config: cfg.clone(),
            fourier_b: None,
            enc_w: base.enc_w.clone(),
            enc_b: base.enc_b.clone(),
            frozen: vec![false; l],
            heads,
        };
        let head0 = init_head::<f64>(&cfg, 9, 0);
        let head1 = init_head::<f64>(&cfg, 9, 1);

        let joint = Trainer::new(
            setup_for(vec![head0.clone(), head1.clone()]),
            &[img0.clone(), img1.clone()],
        )
        .unwrap();
        let (_, gj) = joint.step_once(0).unwrap();

        let alone0 = Trainer::new(setup_for(vec![head0]), std::slice::from_ref(&img0)).unwrap();
        let (_, g0) = alone0.step_once(0).unwrap();
        let alone1 = Trainer::new(setup_for(vec![head1]), std::slice::from_ref(&img1)).unwrap();
        let (_, g1) = alone1.step_once(0).unwrap();

        for slot in 0..2 * l {
            let summed = g0[slot].add(&g1[slot]).unwrap();
            let (rows, cols) = summed.shape();
            for r in 0..rows {
                for c in 0..cols {
                    let a = gj[slot].get(r, c);
                    let b = summed.get(r, c);
                    assert!(
                        (a - b).abs() <= 1e-10 * b.abs().max(1.0),
                        "slot {slot} ({r},{c}): joint {a}, summed {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let cfg = desk_config();
        let images = desk_cohort(3, 8, 300);
        let opts = CohortOptions {
            iters: 20,
            lr: 1e-3,
            psnr_stop: f64::INFINITY,
            ..CohortOptions::default()
        };
        let (a, ra) = cohort_train(&images, &cfg, &opts, 12).unwrap();
        let (b, rb) = cohort_train(&images, &cfg, &opts, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.psnr_curve, rb.psnr_curve);
    }

    #[test]
    fn metadata_psnr_matches_recomputation() {
        let cfg = desk_config();
        let images = desk_cohort(2, 12, 400);
        let opts = CohortOptions {
            iters: 40,
            lr: 1e-3,
            psnr_stop: f64::INFINITY,
            ..CohortOptions::default()
        };
        let (ckpt, _) = cohort_train(&images, &cfg, &opts, 4).unwrap();
        let (_, mean) = cohort_psnr(&ckpt, &images).unwrap();
        assert!((mean - ckpt.meta.final_psnr).abs() < 0.01);
    }

    #[test]
    fn exact_reconstruction_hits_the_psnr_cap() {
        let (ckpt, images) = bias_only_checkpoint(&[0.5]);
        let (per_image, mean) = cohort_psnr(&ckpt, &images).unwrap();
        assert_eq!(per_image, vec![PSNR_CAP_DB]);
        assert_eq!(mean, PSNR_CAP_DB);
    }

    #[test]
    fn cohort_mean_is_arithmetic() {
        // outputs are exactly 0.5; targets 0.6 and 0.51 give 20 and 40 dB
        let (ckpt, images) = bias_only_checkpoint(&[0.6, 0.51]);
        let (per_image, mean) = cohort_psnr(&ckpt, &images).unwrap();
        assert!((per_image[0] - 20.0).abs() < 1e-9, "{}", per_image[0]);
        assert!((per_image[1] - 40.0).abs() < 1e-9, "{}", per_image[1]);
        assert!((mean - 30.0).abs() < 1e-9);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let (ckpt, mut images) = bias_only_checkpoint(&[0.6, 0.51]);
        images[1] =
            ImageTensor::new(4, 16, 1, Matrix::from_fn(64, 1, |_, _| 0.5f64)).unwrap();
        let err = cohort_psnr(&ckpt, &images).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn empty_cohort_is_rejected() {
        let cfg = desk_config();
        let images: Vec<ImageTensor<f32>> = Vec::new();
        let err = cohort_train(&images, &cfg, &CohortOptions::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn mixed_channel_counts_are_rejected() {
        let cfg = desk_config();
        let images = vec![
            synth_image::<f32>(SynthKind::Gradient, 8, 8, 1, 0).unwrap(),
            synth_image::<f32>(SynthKind::Gradient, 8, 8, 3, 0).unwrap(),
        ];
        assert!(cohort_train(&images, &cfg, &CohortOptions::default(), 0).is_err());
    }

    #[test]
    fn ffmlp_cohort_trains_and_keeps_projection_fixed() {
        let mut cfg = InrConfig::ffmlp(5.0);
        cfg.hidden_layers = 2;
        cfg.width = 32;
        cfg.fourier_features = 16;
        cfg.output_dim = 1;
        let images = desk_cohort(2, 8, 500);
        let opts = CohortOptions {
            iters: 15,
            lr: 1e-3,
            psnr_stop: f64::INFINITY,
            ..CohortOptions::default()
        };
        let (ckpt, _) = cohort_train(&images, &cfg, &opts, 6).unwrap();
        let base = init::<f32>(&cfg, 6).unwrap();
        assert_eq!(ckpt.encoder.fourier_b, base.fourier_b);
        assert_eq!(ckpt.cohort_size(), 2);
    }
}
