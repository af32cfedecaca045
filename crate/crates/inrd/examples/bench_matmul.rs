use inrd::tensor::{Matrix, StreamRng};
use std::time::Instant;

fn bench<T: inrd::tensor::Scalar>(m: usize, k: usize, n: usize, reps: usize) -> f64 {
    let mut rng = StreamRng::new(1);
    let a: Matrix<T> = Matrix::from_fn(m, k, |_, _| T::real(rng.uniform(-1.0, 1.0)));
    let b: Matrix<T> = Matrix::from_fn(k, n, |_, _| T::real(rng.uniform(-1.0, 1.0)));
    let start = Instant::now();
    let mut sink = T::zero();
    for _ in 0..reps {
        let c = a.matmul(&b).unwrap();
        sink = sink + c.get(0, 0);
    }
    let secs = start.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n) as f64 * reps as f64;
    assert!(sink.as_f64().is_finite());
    flops / secs / 1e9
}

fn main() {
    println!("f32 4096x64 * 64x64   : {:.1} GFLOPS", bench::<f32>(4096, 64, 64, 200));
    println!("f32 4096x128 * 128x64 : {:.1} GFLOPS", bench::<f32>(4096, 128, 64, 150));
    println!("f32 1024x64 * 64x1024 : {:.1} GFLOPS", bench::<f32>(1024, 64, 1024, 40));
    println!("f32 64x4096 * 4096x64 : {:.1} GFLOPS", bench::<f32>(64, 4096, 64, 150));
    println!("f32 4096x64 * 64x1    : {:.1} GFLOPS", bench::<f32>(4096, 64, 1, 400));
    println!("f64 64x64 * 64x64     : {:.1} GFLOPS", bench::<f64>(64, 64, 64, 2000));
}
