use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use std::time::Instant;

#[test]
#[ignore]
fn gemm_throughput() {
    let a = Array2::<f32>::from_elem((512, 2880), 0.5f32);
    let b = Array2::<f32>::from_elem((2880, 1024), 0.25f32);
    let mut c = Array2::<f32>::zeros((512, 1024));
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    let t0 = Instant::now();
    let iters = 10;
    for _ in 0..iters {
        general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    let flops = 2.0 * 512.0 * 2880.0 * 1024.0;
    println!("sgemm 512x2880x1024: {:.1} ms, {:.1} GFLOP/s", dt * 1e3, flops / dt / 1e9);
}
