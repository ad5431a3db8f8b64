//! Raw f64 kernels shared by forward and backward passes.
//!
//! Everything here is scalar code over slices with a fixed iteration order,
//! which keeps results bitwise reproducible run to run.

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Broadcast two shapes numpy-style (align trailing, size-1 stretches).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Strides of `shape` when broadcast to `out_shape`: stretched axes get 0.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out_shape.len() - shape.len();
    let mut s = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        s[pad + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

/// Apply `f(a_i, b_i)` elementwise with broadcasting; returns the output buffer.
pub fn map2(
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let n = numel(out_shape);
    if ashape == out_shape && bshape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    // Fast path: b is a suffix of the (contiguous) output, e.g. bias adds.
    if ashape == out_shape && suffix_of(bshape, out_shape) {
        let m = b.len();
        if m > 0 {
            let mut out = Vec::with_capacity(n);
            for chunk in a.chunks_exact(m) {
                out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
            return out;
        }
        return vec![0.0; n];
    }
    let mut out = vec![0.0; n];
    let sa = broadcast_strides(ashape, out_shape);
    let sb = broadcast_strides(bshape, out_shape);
    let mut walk = Odometer::new(out_shape, &[&sa, &sb]);
    for slot in out.iter_mut() {
        let [ia, ib] = walk.offsets[..] else { unreachable!() };
        *slot = f(a[ia], b[ib]);
        walk.advance();
    }
    out
}

/// Incremental multi-index walker: tracks element offsets into several
/// strided views of one iteration shape without per-element division.
pub struct Odometer {
    shape: Vec<usize>,
    coords: Vec<usize>,
    strides: Vec<Vec<usize>>,
    pub offsets: Vec<usize>,
}

impl Odometer {
    pub fn new(shape: &[usize], strides: &[&[usize]]) -> Odometer {
        Odometer {
            shape: shape.to_vec(),
            coords: vec![0; shape.len()],
            strides: strides.iter().map(|s| s.to_vec()).collect(),
            offsets: vec![0; strides.len()],
        }
    }

    #[inline]
    pub fn advance(&mut self) {
        for d in (0..self.shape.len()).rev() {
            self.coords[d] += 1;
            for (o, s) in self.offsets.iter_mut().zip(&self.strides) {
                *o += s[d];
            }
            if self.coords[d] < self.shape[d] {
                return;
            }
            // carry: rewind this axis
            for (o, s) in self.offsets.iter_mut().zip(&self.strides) {
                *o -= s[d] * self.shape[d];
            }
            self.coords[d] = 0;
        }
    }
}

fn suffix_of(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Sum `grad` (shaped `out_shape`) down to `shape` by collapsing broadcast axes.
pub fn reduce_to_shape(grad: &[f64], out_shape: &[usize], shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return grad.to_vec();
    }
    let mut out = vec![0.0; numel(shape)];
    // Fast path: target is a suffix of the output (bias adds).
    if out_shape.len() >= shape.len() && out_shape[out_shape.len() - shape.len()..] == *shape {
        let m = out.len();
        if m > 0 {
            for chunk in grad.chunks_exact(m) {
                for (o, g) in out.iter_mut().zip(chunk) {
                    *o += g;
                }
            }
        }
        return out;
    }
    let st = broadcast_strides(shape, out_shape);
    let mut walk = Odometer::new(out_shape, &[&st]);
    for &g in grad.iter() {
        out[walk.offsets[0]] += g;
        walk.advance();
    }
    out
}

/// Dense matrix multiply with optional logical transposes.
///
/// Shapes after transposition: a is m x k, b is k x n, out is m x n
/// (accumulated into, caller zeroes). Transposed operands are packed into
/// row-major scratch first so the single ikj kernel does all the work.
pub fn mm(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    let a_packed;
    let a = if ta {
        // stored [k, m] -> [m, k]
        let mut packed = vec![0.0; m * k];
        for l in 0..k {
            let row = &a[l * m..(l + 1) * m];
            for i in 0..m {
                packed[i * k + l] = row[i];
            }
        }
        a_packed = packed;
        &a_packed[..]
    } else {
        a
    };
    let b_packed;
    let b = if tb {
        // stored [n, k] -> [k, n]
        let mut packed = vec![0.0; k * n];
        for j in 0..n {
            let row = &b[j * k..(j + 1) * k];
            for l in 0..k {
                packed[l * n + j] = row[l];
            }
        }
        b_packed = packed;
        &b_packed[..]
    } else {
        b
    };

    if n < 16 && k >= 16 {
        // Narrow outputs: long vectorized dot products beat the row kernel.
        // Pack b columns into rows once.
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &bt[j * k..(j + 1) * k];
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                let mut l = 0;
                while l + 4 <= k {
                    s0 += arow[l] * brow[l];
                    s1 += arow[l + 1] * brow[l + 1];
                    s2 += arow[l + 2] * brow[l + 2];
                    s3 += arow[l + 3] * brow[l + 3];
                    l += 4;
                }
                let mut acc = (s0 + s1) + (s2 + s3);
                while l < k {
                    acc += arow[l] * brow[l];
                    l += 1;
                }
                orow[j] += acc;
            }
        }
        return;
    }

    // a[m,k] * b[k,n]: ikj with 4-way register blocking over k
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut l = 0;
        while l + 4 <= k {
            let (a0, a1, a2, a3) = (arow[l], arow[l + 1], arow[l + 2], arow[l + 3]);
            let b0 = &b[l * n..(l + 1) * n];
            let b1 = &b[(l + 1) * n..(l + 2) * n];
            let b2 = &b[(l + 2) * n..(l + 3) * n];
            let b3 = &b[(l + 3) * n..(l + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            l += 4;
        }
        while l < k {
            let av = arow[l];
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
            l += 1;
        }
    }
}

/// Stable softmax over the last axis of a [rows, cols] view, in place.
/// `mask` (same layout, 1 = keep) zeroes excluded entries exactly.
/// Returns Err(row) if a row has no unmasked entry.
pub fn softmax_rows(
    x: &mut [f64],
    rows: usize,
    cols: usize,
    mask: Option<&dyn Fn(usize, usize) -> f64>,
) -> Result<(), usize> {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        match mask {
            None => {
                for &v in row.iter() {
                    if v > max {
                        max = v;
                    }
                }
            }
            Some(m) => {
                for (c, &v) in row.iter().enumerate() {
                    if m(r, c) != 0.0 && v > max {
                        max = v;
                    }
                }
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(r);
        }
        let mut sum = 0.0;
        match mask {
            None => {
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
            }
            Some(m) => {
                for (c, v) in row.iter_mut().enumerate() {
                    if m(r, c) != 0.0 {
                        *v = (*v - max).exp();
                        sum += *v;
                    } else {
                        *v = 0.0;
                    }
                }
            }
        }
        if sum == 0.0 {
            return Err(r);
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(())
}

pub const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh через exp_m1; noticeably faster than libm tanh at f64 accuracy.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    if x < -20.0 {
        return -1.0;
    }
    let e = (2.0 * x).exp_m1();
    e / (e + 2.0)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = fast_tanh(u);
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
