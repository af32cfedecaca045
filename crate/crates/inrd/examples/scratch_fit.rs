use inrd::fit::{fit_single, FitOptions};
use inrd::inr::{init, Backbone, ImageTensor, InrConfig};
use inrd::tensor::Matrix;

fn main() {
    for width in [8usize, 16, 32] {
        for lr in [1e-3f64, 5e-3, 1e-2, 5e-2] {
            let mut worst = f64::INFINITY;
            for seed in [0u64, 1, 2, 5, 9] {
                let mut cfg = InrConfig::siren(30.0);
                cfg.hidden_layers = 2;
                cfg.width = width;
                cfg.output_dim = 1;
                let mut model = init::<f32>(&cfg, seed).unwrap();
                let pixels = Matrix::from_fn(32 * 32, 1, |_, _| 0.5f32);
                let image = ImageTensor::new(32, 32, 1, pixels).unwrap();
                let report = fit_single(&mut model, &image, &FitOptions::new(200, lr)).unwrap();
                worst = worst.min(report.psnr_curve[199]);
            }
            println!("siren d={width:3} lr {lr:5} -> worst over 5 seeds {worst:.2} dB");
        }
    }
    let _ = Backbone::Ffmlp;
}
