use std::time::Instant;
fn main() {
    // streaming read bandwidth
    let n = 64 * 1024 * 1024 / 8; // 64 MB
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..10 {
        for &x in &xs { acc += x; }
    }
    std::hint::black_box(acc);
    let gbs = (64.0 * 10.0) / t0.elapsed().as_secs_f64() / 1024.0;
    eprintln!("read bandwidth: {:.2} GB/s", gbs * 1024.0 / 1000.0);
    // copy bandwidth
    let mut dst = vec![0.0f64; n];
    let t0 = Instant::now();
    for _ in 0..10 { dst.copy_from_slice(&xs); std::hint::black_box(dst[5]); }
    let gbs = (64.0 * 2.0 * 10.0) / t0.elapsed().as_secs_f64() / 1000.0;
    eprintln!("copy bandwidth (r+w): {:.2} GB/s", gbs);
}
