//! Test-time freeze protocol over a cohort encoder.
//!
//! A trained encoder is transplanted into a fresh model: layers up to the
//! freeze boundary tau keep their cohort weights and are excluded from the
//! optimizer; everything deeper, plus a fresh head, is reinitialized and
//! refit to a target image under a fixed iteration budget. Sweeping tau over
//! every depth (with an optional no-freeze baseline that retrains all copied
//! layers) measures where the encoder stops being transferable. Coordinates
//! are resolution-free, so the target image may differ in size from the
//! cohort images.

use crate::cohort::CohortCheckpoint;
use crate::error::{Error, Result};
use crate::fit::{FitOptions, Trainer, TrainerSetup};
use crate::inr::{init, ImageTensor, InrModel};
pub use crate::metrics::{psnr, ssim, PSNR_CAP_DB};
use crate::tensor::Scalar;
use rayon::prelude::*;

/// One freeze configuration. `tau = None` is the no-freeze baseline: every
/// layer starts from the cohort weights but all of them train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreezeSpec {
    pub tau: Option<usize>,
    pub reinit_seed: u64,
    pub iters: usize,
    pub lr: f64,
}

impl FreezeSpec {
    pub fn new(tau: Option<usize>, reinit_seed: u64) -> Self {
        FreezeSpec {
            tau,
            reinit_seed,
            iters: 500,
            lr: 1e-4,
        }
    }
}

/// Builds the test-time model for `spec`: layers 0..=tau copied from the
/// checkpoint, deeper layers and the head drawn fresh from `reinit_seed`.
/// Returns the model and a per-layer trainable mask (`true` = trains; the
/// head always trains and is not in the mask). The Fourier projection is
/// part of the encoder and is copied in every configuration.
pub fn apply_freeze<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    spec: &FreezeSpec,
) -> Result<(InrModel<T>, Vec<bool>)> {
    let l_total = ckpt.config.hidden_layers;
    if let Some(tau) = spec.tau {
        if tau >= l_total {
            return Err(Error::contract(
                "apply_freeze",
                format!("tau = {tau} with {l_total} hidden layers"),
            ));
        }
    }
    if ckpt.encoder.layer_w.len() != l_total || ckpt.encoder.layer_b.len() != l_total {
        return Err(Error::contract(
            "apply_freeze",
            format!(
                "checkpoint encoder has {} layers, config says {}",
                ckpt.encoder.layer_w.len(),
                l_total
            ),
        ));
    }
    let mut fresh: InrModel<T> = init(&ckpt.config, spec.reinit_seed)?;
    fresh.fourier_b = ckpt.encoder.fourier_b.clone();
    let copied = match spec.tau {
        Some(tau) => tau + 1,
        None => l_total,
    };
    for l in 0..copied {
        fresh.enc_w[l] = ckpt.encoder.layer_w[l].clone();
        fresh.enc_b[l] = ckpt.encoder.layer_b[l].clone();
    }
    let mask: Vec<bool> = match spec.tau {
        Some(tau) => (0..l_total).map(|l| l > tau).collect(),
        None => vec![true; l_total],
    };
    Ok((fresh, mask))
}

/// What one test-time fit measured. `final_psnr` and `ssim` are computed on
/// the parameters the fit actually delivers; `best_psnr` is the highest PSNR
/// seen at any measured point of the run, the curve included.
#[derive(Debug, Clone)]
pub struct TestFitOutcome<T: Scalar> {
    pub final_psnr: f64,
    pub best_psnr: f64,
    pub ssim: f64,
    pub psnr_curve: Vec<f64>,
    pub model: InrModel<T>,
}

/// Runs the freeze protocol against one image: apply `spec`, fit the
/// trainable parameters with full-batch Adam, and measure the result.
pub fn test_time_fit<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    spec: &FreezeSpec,
    image: &ImageTensor<T>,
) -> Result<TestFitOutcome<T>> {
    let (model, mask) = apply_freeze(ckpt, spec)?;
    let setup = TrainerSetup {
        config: model.config.clone(),
        fourier_b: model.fourier_b.clone(),
        enc_w: model.enc_w.clone(),
        enc_b: model.enc_b.clone(),
        frozen: mask.iter().map(|&trainable| !trainable).collect(),
        heads: vec![(model.head_w.clone(), model.head_b.clone())],
    };
    let mut trainer = Trainer::new(setup, std::slice::from_ref(image))?;
    let report = trainer.train(&FitOptions::new(spec.iters, spec.lr))?;
    let (fourier_b, enc_w, enc_b, mut heads) = trainer.into_parts();
    let (head_w, head_b) = heads.pop().expect("single head");
    let model = InrModel {
        config: model.config,
        fourier_b,
        enc_w,
        enc_b,
        head_w,
        head_b,
    };

    let (out, _) = model.forward(&image.grid(), &[])?;
    let final_psnr = psnr(&out, &image.pixels)?;
    let recon = ImageTensor::new(image.height, image.width, image.channels, out)?;
    let ssim = ssim(&recon, image)?;
    let best_psnr = report
        .psnr_curve
        .iter()
        .copied()
        .fold(final_psnr, f64::max);
    Ok(TestFitOutcome {
        final_psnr,
        best_psnr,
        ssim,
        psnr_curve: report.psnr_curve,
        model,
    })
}

/// One sweep cell: a (tau, image, reinit seed) triple and its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub tau: Option<usize>,
    pub image: usize,
    pub seed: u64,
    pub final_psnr: f64,
    pub best_psnr: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation over all cells of one tau.
#[derive(Debug, Clone, PartialEq)]
pub struct TauAggregate {
    pub tau: Option<usize>,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub aggregates: Vec<TauAggregate>,
    /// argmax of mean final PSNR over real boundaries (the no-freeze
    /// baseline never wins the argmax); ties go to the smallest tau.
    pub tau_star: usize,
}

impl SweepResult {
    /// Recomputes the per-tau aggregates from raw entries; construction uses
    /// this same routine, so stored aggregates always match it.
    pub fn aggregate(entries: &[SweepEntry], taus: &[Option<usize>]) -> Vec<TauAggregate> {
        taus.iter()
            .map(|&tau| {
                let cells: Vec<&SweepEntry> =
                    entries.iter().filter(|e| e.tau == tau).collect();
                let n = cells.len() as f64;
                let mean_psnr = cells.iter().map(|e| e.final_psnr).sum::<f64>() / n;
                let var = cells
                    .iter()
                    .map(|e| (e.final_psnr - mean_psnr).powi(2))
                    .sum::<f64>()
                    / n;
                let mean_ssim = cells.iter().map(|e| e.ssim).sum::<f64>() / n;
                TauAggregate {
                    tau,
                    mean_psnr,
                    std_psnr: var.sqrt(),
                    mean_ssim,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Number of reinitialization seeds per (tau, image) cell; seed values
    /// run 0..seeds.
    pub seeds: u64,
    pub iters: usize,
    pub lr: f64,
    /// Also run the no-freeze baseline cells (never eligible for tau*).
    pub include_baseline: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            seeds: 3,
            iters: 500,
            lr: 1e-4,
            include_baseline: true,
        }
    }
}

/// Full freeze-boundary sweep: every tau in 0..L (plus the optional
/// baseline) crossed with every image and reinit seed. Cells are
/// independent, so they run in parallel; results are gathered in a fixed
/// order and aggregated deterministically.
pub fn freeze_sweep<T: Scalar>(
    ckpt: &CohortCheckpoint<T>,
    images: &[ImageTensor<T>],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if images.is_empty() {
        return Err(Error::contract("freeze_sweep", "no test images"));
    }
    if opts.seeds == 0 {
        return Err(Error::contract("freeze_sweep", "seeds must be >= 1"));
    }
    let mut taus: Vec<Option<usize>> =
        (0..ckpt.config.hidden_layers).map(Some).collect();
    if opts.include_baseline {
        taus.push(None);
    }
    let mut cells = Vec::new();
    for &tau in &taus {
        for image in 0..images.len() {
            for seed in 0..opts.seeds {
                cells.push((tau, image, seed));
            }
        }
    }
    let entries: Vec<SweepEntry> = cells
        .par_iter()
        .map(|&(tau, image, seed)| {
            let spec = FreezeSpec {
                tau,
                reinit_seed: seed,
                iters: opts.iters,
                lr: opts.lr,
            };
            let outcome = test_time_fit(ckpt, &spec, &images[image])?;
            Ok(SweepEntry {
                tau,
                image,
                seed,
                final_psnr: outcome.final_psnr,
                best_psnr: outcome.best_psnr,
                ssim: outcome.ssim,
            })
        })
        .collect::<Result<_>>()?;

    let aggregates = SweepResult::aggregate(&entries, &taus);
    let tau_star = aggregates
        .iter()
        .filter_map(|a| a.tau.map(|t| (t, a.mean_psnr)))
        .fold(None::<(usize, f64)>, |best, (t, m)| match best {
            Some((_, bm)) if m > bm => Some((t, m)),
            Some(best) => Some(best),
            None => Some((t, m)),
        })
        .map(|(t, _)| t)
        .expect("at least one real tau");
    Ok(SweepResult {
        entries,
        aggregates,
        tau_star,
    })
}
