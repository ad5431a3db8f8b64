use std::time::Instant;
fn main() {
    let n = 524_288usize;
    // fresh alloc each iteration
    let t0 = Instant::now();
    for i in 0..100 {
        let v = vec![0.0f64; n];
        std::hint::black_box(v[i]);
    }
    eprintln!("fresh vec![0.0; 524k]: {:.2} ms/alloc", t0.elapsed().as_secs_f64() * 10.0);
    // collect from iterator (no explicit zeroing)
    let t0 = Instant::now();
    for i in 0..100 {
        let v: Vec<f64> = (0..n).map(|j| j as f64).collect();
        std::hint::black_box(v[i]);
    }
    eprintln!("collect 524k: {:.2} ms/alloc", t0.elapsed().as_secs_f64() * 10.0);
    // reused buffer
    let mut v = vec![0.0f64; n];
    let t0 = Instant::now();
    for i in 0..100 {
        v.iter_mut().for_each(|x| *x = 0.0);
        std::hint::black_box(v[i]);
    }
    eprintln!("reuse + memset 524k: {:.2} ms/iter", t0.elapsed().as_secs_f64() * 10.0);
    // exp pass on reused
    let xs: Vec<f64> = (0..n).map(|j| (j as f64 * 0.001).sin()).collect();
    let t0 = Instant::now();
    for i in 0..100 {
        let mut s = 0.0;
        for &x in &xs { s += (x - 0.5).exp(); }
        std::hint::black_box(s + i as f64);
    }
    eprintln!("exp pass 524k: {:.2} ms", t0.elapsed().as_secs_f64() * 10.0);
}
