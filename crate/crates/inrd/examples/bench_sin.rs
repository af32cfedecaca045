use inrd::tensor::{Matrix, Scalar, StreamRng};
use std::time::Instant;

fn main() {
    let mut rng = StreamRng::new(1);
    let m: Matrix<f32> = Matrix::from_fn(4096, 64, |_, _| rng.uniform(-60.0, 60.0) as f32);
    let reps = 400;
    let start = Instant::now();
    let mut sink = 0.0f32;
    for _ in 0..reps {
        let (s, c) = m.sin_cos_all();
        sink += s.get(0, 0) + c.get(1, 1);
    }
    let secs = start.elapsed().as_secs_f64();
    let per = secs / (reps as f64 * 4096.0 * 64.0) * 1e9;
    assert!(sink.is_finite());
    println!("fast sin_cos pair: {per:.2} ns/element");

    let start = Instant::now();
    let mut sink2 = 0.0f32;
    for _ in 0..40 {
        let s = m.map(|x| x.sin());
        sink2 += s.get(0, 0);
    }
    let secs2 = start.elapsed().as_secs_f64();
    let per2 = secs2 / (40.0 * 4096.0 * 64.0) * 1e9;
    assert!(sink2.is_finite());
    println!("libm sin alone   : {per2:.2} ns/element");
}
