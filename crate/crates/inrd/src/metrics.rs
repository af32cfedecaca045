//! Reconstruction quality metrics: PSNR against a unit peak and SSIM with
//! the standard 11x11 Gaussian window.

use crate::error::{Error, Result};
use crate::inr::ImageTensor;
use crate::tensor::{Matrix, Scalar};

/// PSNR ceiling reported for vanishing MSE; keeps emitted tables finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// -10 log10(mse) against peak 1, capped at [`PSNR_CAP_DB`]. The cap is
/// applied uniformly, so ordering by MSE is preserved below it.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

/// Mean squared difference, accumulated in f64.
pub fn mse<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "mse",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.data().len();
    if n == 0 {
        return Err(Error::contract("mse", "empty operands"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio in dB for signals on a [0, 1] scale.
pub fn psnr<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *w = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *w;
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Channel-mean grayscale plane in f64, H x W row-major.
fn gray_plane<T: Scalar>(img: &ImageTensor<T>) -> Vec<f64> {
    let c = img.channels;
    (0..img.height * img.width)
        .map(|r| {
            let row = img.pixels.row(r);
            row.iter().map(|x| x.as_f64()).sum::<f64>() / c as f64
        })
        .collect()
}

/// Valid-mode separable filter: rows then columns with the same 1-D kernel.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * wo];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                acc += kt * row[x + t];
            }
            horiz[y * wo + x] = acc;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                acc += kt * horiz[(y + t) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over all full 11x11 windows, dynamic range 1.
/// RGB inputs are converted to grayscale by channel mean first.
pub fn ssim<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::shape(
            "ssim",
            format!(
                "{}x{}x{} vs {}x{}x{}",
                a.height, a.width, a.channels, b.height, b.width, b.channels
            ),
        ));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::contract(
            "ssim",
            format!(
                "image {}x{} is smaller than the {}x{} window",
                a.height, a.width, SSIM_WINDOW, SSIM_WINDOW
            ),
        ));
    }
    let (h, w) = (a.height, a.width);
    let pa = gray_plane(a);
    let pb = gray_plane(b);
    let paa: Vec<f64> = pa.iter().map(|x| x * x).collect();
    let pbb: Vec<f64> = pb.iter().map(|x| x * x).collect();
    let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

    let k = gaussian_kernel();
    let mu_a = filter_valid(&pa, h, w, &k);
    let mu_b = filter_valid(&pb, h, w, &k);
    let e_aa = filter_valid(&paa, h, w, &k);
    let e_bb = filter_valid(&pbb, h, w, &k);
    let e_ab = filter_valid(&pab, h, w, &k);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}
