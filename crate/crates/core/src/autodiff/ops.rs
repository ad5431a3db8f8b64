//! Differentiable tensor operations.
//!
//! Shape misuse (mismatched operands, bad axes) panics with a message naming
//! the offending shapes: those are programming errors. Data-dependent
//! failures (a query row with no unmasked key, a masked reduction over an
//! empty set) return [`Error`] values so callers can surface them.

use std::rc::Rc;

use crate::autodiff::kernels::{self, broadcast_shape, numel, strides};
use crate::autodiff::tape::{Node, Sink, Tape, Tensor};
use crate::error::{Error, Result};

/// Locate the common tape of `inputs`, if any input is attached to one.
fn common_tape(inputs: &[&Tensor]) -> Option<Tape> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some(tape) = t.tape_handle() {
            match &found {
                None => found = Some(tape.clone()),
                Some(existing) => {
                    assert!(existing.same_as(tape), "operands belong to different tapes");
                }
            }
        }
    }
    found
}

/// Record an op producing (`shape`, `data`) from `inputs`.
fn record(
    name: &'static str,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
    back: impl Fn(&[f64], &mut Sink) + 'static,
) -> Tensor {
    record_shared(name, inputs, shape, Rc::new(data), back)
}

fn record_shared(
    name: &'static str,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    back: impl Fn(&[f64], &mut Sink) + 'static,
) -> Tensor {
    debug_assert_eq!(data.len(), numel(&shape));
    let tape = common_tape(inputs);
    let any_grad = inputs.iter().any(|t| t.requires_grad());
    if !any_grad {
        return Tensor {
            shape,
            data,
            node: None,
            tape: None,
        };
    }
    let tape = tape.expect("differentiable input without tape");
    let node = tape.push(Node {
        name,
        inputs: inputs.iter().map(|t| t.node).collect(),
        back: Some(Box::new(back)),
    });
    Tensor {
        shape,
        data,
        node: Some(node),
        tape: Some(tape),
    }
}

fn binary_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Vec<usize> {
    broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "{op}: shape mismatch between {:?} and {:?}",
            a.shape(),
            b.shape()
        )
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let out_shape = binary_broadcast("add", self, other);
        let data = kernels::map2(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x + y,
        );
        let (ash, bsh, osh) = (self.shape.clone(), other.shape.clone(), out_shape.clone());
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        record("add", &[self, other], out_shape, data, move |up, sink| {
            if na {
                sink(0, kernels::reduce_to_shape(up, &osh, &ash));
            }
            if nb {
                sink(1, kernels::reduce_to_shape(up, &osh, &bsh));
            }
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let out_shape = binary_broadcast("sub", self, other);
        let data = kernels::map2(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x - y,
        );
        let (ash, bsh, osh) = (self.shape.clone(), other.shape.clone(), out_shape.clone());
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        record("sub", &[self, other], out_shape, data, move |up, sink| {
            if na {
                sink(0, kernels::reduce_to_shape(up, &osh, &ash));
            }
            if nb {
                let mut gb = kernels::reduce_to_shape(up, &osh, &bsh);
                gb.iter_mut().for_each(|v| *v = -*v);
                sink(1, gb);
            }
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let out_shape = binary_broadcast("mul", self, other);
        let data = kernels::map2(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &out_shape,
            |x, y| x * y,
        );
        let (ad, bd) = (Rc::clone(&self.data), Rc::clone(&other.data));
        let (ash, bsh, osh) = (self.shape.clone(), other.shape.clone(), out_shape.clone());
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        record("mul", &[self, other], out_shape, data, move |up, sink| {
            if na {
                let ga = kernels::map2(up, &osh, &bd, &bsh, &osh, |u, y| u * y);
                sink(0, kernels::reduce_to_shape(&ga, &osh, &ash));
            }
            if nb {
                let gb = kernels::map2(up, &osh, &ad, &ash, &osh, |u, x| u * x);
                sink(1, kernels::reduce_to_shape(&gb, &osh, &bsh));
            }
        })
    }

    /// `self * mul + add`, elementwise with scalars.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x * mul + add).collect();
        record(
            "affine",
            &[self],
            self.shape.clone(),
            data,
            move |up, sink| {
                sink(0, up.iter().map(|&u| u * mul).collect());
            },
        )
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.max(0.0)).collect();
        let saved = Rc::clone(&self.data);
        record("relu", &[self], self.shape.clone(), data, move |up, sink| {
            sink(
                0,
                up.iter()
                    .zip(saved.iter())
                    .map(|(&u, &x)| if x > 0.0 { u } else { 0.0 })
                    .collect(),
            );
        })
    }

    /// Elementwise exponential.
    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.exp()).collect();
        let out = Rc::new(data);
        let saved = Rc::clone(&out);
        record_shared("exp", &[self], self.shape.clone(), out, move |up, sink| {
            sink(
                0,
                up.iter().zip(saved.iter()).map(|(&u, &y)| u * y).collect(),
            );
        })
    }

    /// GELU, tanh approximation. The forward tanh values are saved so the
    /// backward pass is polynomial only.
    pub fn gelu(&self) -> Tensor {
        let mut tanhs = Vec::with_capacity(self.numel());
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| {
                let t = kernels::fast_tanh(kernels::GELU_C * (x + 0.044715 * x * x * x));
                tanhs.push(t);
                0.5 * x * (1.0 + t)
            })
            .collect();
        let saved = Rc::clone(&self.data);
        let tanhs = Rc::new(tanhs);
        record("gelu", &[self], self.shape.clone(), data, move |up, sink| {
            sink(
                0,
                up.iter()
                    .zip(saved.iter())
                    .zip(tanhs.iter())
                    .map(|((&u, &x), &t)| {
                        let du = kernels::GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        u * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect(),
            );
        })
    }

    /// Matrix product over the last two axes, leading axes broadcast.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        matmul_general(self, other, false, false)
    }

    /// `self @ other^T` (other's last two axes swapped logically).
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        matmul_general(self, other, false, true)
    }

    /// `self^T @ other`.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        matmul_general(self, other, true, false)
    }

    /// Softmax along `axis`; total on finite inputs.
    pub fn softmax(&self, axis: usize) -> Tensor {
        softmax_impl(self, axis, None).expect("unmasked softmax cannot fail")
    }

    /// Softmax along `axis` where `mask` (0/1, broadcastable to self) marks
    /// admissible entries; excluded entries get exactly zero weight.
    pub fn masked_softmax(&self, axis: usize, mask: &Tensor) -> Result<Tensor> {
        softmax_impl(self, axis, Some(mask))
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor {
        reduce_impl(self, axis, false, None).expect("unmasked sum cannot fail")
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor {
        reduce_impl(self, axis, true, None).expect("unmasked mean cannot fail")
    }

    /// Mean along `axis` over entries where `mask` (broadcastable) is 1.
    pub fn masked_mean_axis(&self, axis: usize, mask: &Tensor) -> Result<Tensor> {
        reduce_impl(self, axis, true, Some(mask))
    }

    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        record("sum_all", &[self], vec![], vec![total], move |up, sink| {
            sink(0, vec![up[0]; n]);
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over all entries admitted by `mask` (broadcastable to self).
    pub fn masked_mean_all(&self, mask: &Tensor) -> Result<Tensor> {
        let out_shape = binary_broadcast("masked_mean_all", self, mask);
        assert_eq!(
            out_shape,
            self.shape,
            "masked_mean_all: mask {:?} must broadcast to {:?}",
            mask.shape(),
            self.shape
        );
        let m = kernels::map2(
            mask.data(),
            mask.shape(),
            mask.data(),
            mask.shape(),
            &out_shape,
            |x, _| x,
        );
        let count: f64 = m.iter().sum();
        if count == 0.0 {
            return Err(Error::EmptySetReduction);
        }
        let total: f64 = self.data().iter().zip(&m).map(|(&x, &w)| x * w).sum();
        let inv = 1.0 / count;
        Ok(record(
            "masked_mean_all",
            &[self],
            vec![],
            vec![total * inv],
            move |up, sink| {
                sink(0, m.iter().map(|&w| up[0] * w * inv).collect());
            },
        ))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
        let cols = *self.shape.last().expect("layer_norm on scalar");
        assert_eq!(gain.shape(), [cols], "layer_norm: gain shape {:?}", gain.shape());
        assert_eq!(bias.shape(), [cols], "layer_norm: bias shape {:?}", bias.shape());
        let rows = self.numel() / cols;
        let mut data = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let (g, b) = (gain.data(), bias.data());
        for r in 0..rows {
            let x = &self.data()[r * cols..(r + 1) * cols];
            let mean = x.iter().sum::<f64>() / cols as f64;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (x[c] - mean) * inv;
                xhat[r * cols + c] = h;
                data[r * cols + c] = h * g[c] + b[c];
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let gd = Rc::clone(&gain.data);
        let (xh, istd) = (Rc::clone(&xhat), Rc::clone(&inv_std));
        record(
            "layer_norm",
            &[self, gain, bias],
            self.shape.clone(),
            data,
            move |up, sink| {
                let mut dx = vec![0.0; up.len()];
                let mut dg = vec![0.0; cols];
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    let u = &up[r * cols..(r + 1) * cols];
                    let h = &xh[r * cols..(r + 1) * cols];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..cols {
                        dg[c] += u[c] * h[c];
                        db[c] += u[c];
                        let dh = u[c] * gd[c];
                        sum_dh += dh;
                        sum_dh_h += dh * h[c];
                    }
                    let k = cols as f64;
                    for c in 0..cols {
                        let dh = u[c] * gd[c];
                        dx[r * cols + c] = istd[r] * (dh - sum_dh / k - h[c] * sum_dh_h / k);
                    }
                }
                sink(0, dx);
                sink(1, dg);
                sink(2, db);
            },
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(
            axis < self.shape.len(),
            "narrow: axis {axis} out of range for {:?}",
            self.shape
        );
        assert!(
            start + len <= self.shape[axis],
            "narrow: [{start}, {}) exceeds axis of extent {}",
            start + len,
            self.shape[axis]
        );
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut data = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            let src = o * extent * inner + start * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data()[src..src + len * inner]);
        }
        let total = self.numel();
        record("narrow", &[self], out_shape, data, move |up, sink| {
            let mut g = vec![0.0; total];
            for o in 0..outer {
                let dst = o * extent * inner + start * inner;
                let src = o * len * inner;
                g[dst..dst + len * inner].copy_from_slice(&up[src..src + len * inner]);
            }
            sink(0, g);
        })
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(new_shape),
            self.numel(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape,
            new_shape
        );
        let data = self.to_vec();
        record(
            "reshape",
            &[self],
            new_shape.to_vec(),
            data,
            move |up, sink| {
                sink(0, up.to_vec());
            },
        )
    }

    /// Select rows (axis 0) by index, duplicates allowed.
    pub fn index_select(&self, indices: &[usize]) -> Tensor {
        let rows = self.shape[0];
        let cols = self.numel() / rows.max(1);
        for &i in indices {
            assert!(i < rows, "index_select: row {i} out of {rows}");
        }
        let mut out_shape = self.shape.clone();
        out_shape[0] = indices.len();
        let mut data = vec![0.0; indices.len() * cols];
        for (r, &i) in indices.iter().enumerate() {
            data[r * cols..(r + 1) * cols].copy_from_slice(&self.data()[i * cols..(i + 1) * cols]);
        }
        let idx: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        record("index_select", &[self], out_shape, data, move |up, sink| {
            let mut g = vec![0.0; rows * cols];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..cols {
                    g[i * cols + c] += up[r * cols + c];
                }
            }
            sink(0, g);
        })
    }

    /// Mean of rows sharing a segment id; empty segments yield zero rows.
    /// `self` must be 2-D `[M, C]`.
    pub fn segment_mean(&self, segments: &[usize], n_segments: usize) -> Tensor {
        assert_eq!(self.shape.len(), 2, "segment_mean expects [M, C]");
        let (m, c) = (self.shape[0], self.shape[1]);
        assert_eq!(segments.len(), m, "segment ids must cover every row");
        let mut counts = vec![0usize; n_segments];
        for &s in segments {
            assert!(s < n_segments, "segment id {s} out of {n_segments}");
            counts[s] += 1;
        }
        let mut data = vec![0.0; n_segments * c];
        for (r, &s) in segments.iter().enumerate() {
            for j in 0..c {
                data[s * c + j] += self.data()[r * c + j];
            }
        }
        for (s, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                let inv = 1.0 / cnt as f64;
                for j in 0..c {
                    data[s * c + j] *= inv;
                }
            }
        }
        let seg: Rc<Vec<usize>> = Rc::new(segments.to_vec());
        let counts = Rc::new(counts);
        record(
            "segment_mean",
            &[self],
            vec![n_segments, c],
            data,
            move |up, sink| {
                let mut g = vec![0.0; m * c];
                for (r, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for j in 0..c {
                        g[r * c + j] = up[s * c + j] * inv;
                    }
                }
                sink(0, g);
            },
        )
    }

    /// Pairwise distances between the point rows of `self` `[.., M, X]` and
    /// `other` `[N, X]` (or batched alike): output `[.., M, N]`. Euclidean
    /// norm, or its square when `squared`.
    pub fn pairwise_dist(&self, other: &Tensor, squared: bool) -> Tensor {
        let ar = self.shape.len();
        let br = other.shape.len();
        assert!(ar >= 2 && br >= 2, "pairwise_dist expects point matrices");
        let x = self.shape[ar - 1];
        assert_eq!(
            other.shape[br - 1],
            x,
            "pairwise_dist: coordinate dims differ, {:?} vs {:?}",
            self.shape,
            other.shape
        );
        let m = self.shape[ar - 2];
        let n = other.shape[br - 2];
        let a_batch: usize = self.shape[..ar - 2].iter().product();
        let b_batch: usize = other.shape[..br - 2].iter().product();
        assert!(
            b_batch == 1 || b_batch == a_batch,
            "pairwise_dist: incompatible batch dims {:?} vs {:?}",
            self.shape,
            other.shape
        );
        let mut out_shape = self.shape[..ar - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut data = vec![0.0; a_batch * m * n];
        let (ad, bd) = (self.data(), other.data());
        for bi in 0..a_batch {
            let aoff = bi * m * x;
            let boff = if b_batch == 1 { 0 } else { bi * n * x };
            for i in 0..m {
                for j in 0..n {
                    let mut d2 = 0.0;
                    for d in 0..x {
                        let diff = ad[aoff + i * x + d] - bd[boff + j * x + d];
                        d2 += diff * diff;
                    }
                    data[bi * m * n + i * n + j] = if squared { d2 } else { d2.sqrt() };
                }
            }
        }
        let (asave, bsave) = (Rc::clone(&self.data), Rc::clone(&other.data));
        let dsave = Rc::new(data.clone());
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        record(
            "pairwise_dist",
            &[self, other],
            out_shape,
            data,
            move |up, sink| {
                if !na && !nb {
                    return;
                }
                let mut ga = vec![0.0; asave.len()];
                let mut gb = vec![0.0; bsave.len()];
                for bi in 0..a_batch {
                    let aoff = bi * m * x;
                    let boff = if b_batch == 1 { 0 } else { bi * n * x };
                    for i in 0..m {
                        for j in 0..n {
                            let u = up[bi * m * n + i * n + j];
                            if u == 0.0 {
                                continue;
                            }
                            let factor = if squared {
                                2.0 * u
                            } else {
                                // d'(a) = (a-b)/d, guarded at coincident points
                                u / dsave[bi * m * n + i * n + j].max(1e-12)
                            };
                            for d in 0..x {
                                let diff = asave[aoff + i * x + d] - bsave[boff + j * x + d];
                                ga[aoff + i * x + d] += factor * diff;
                                gb[boff + j * x + d] -= factor * diff;
                            }
                        }
                    }
                }
                if na {
                    sink(0, ga);
                }
                if nb {
                    sink(1, gb);
                }
            },
        )
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    assert!(!parts.is_empty(), "concat of nothing");
    let first = parts[0].shape();
    for p in parts {
        assert_eq!(
            p.shape().len(),
            first.len(),
            "concat: rank mismatch {:?} vs {:?}",
            p.shape(),
            first
        );
        for (d, (&a, &b)) in p.shape().iter().zip(first.iter()).enumerate() {
            assert!(
                d == axis || a == b,
                "concat: shape mismatch between {:?} and {:?} on axis {d}",
                p.shape(),
                first
            );
        }
    }
    let mut out_shape = first.to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total_extent = out_shape[axis];
    let mut data = vec![0.0; numel(&out_shape)];
    let mut offset = 0usize;
    let mut spans = Vec::with_capacity(parts.len());
    for p in parts {
        let ext = p.shape()[axis];
        for o in 0..outer {
            let src = o * ext * inner;
            let dst = o * total_extent * inner + offset * inner;
            data[dst..dst + ext * inner].copy_from_slice(&p.data()[src..src + ext * inner]);
        }
        spans.push((offset, ext));
        offset += ext;
    }
    record("concat", parts, out_shape, data, move |up, sink| {
        for (slot, &(off, ext)) in spans.iter().enumerate() {
            let mut g = vec![0.0; outer * ext * inner];
            for o in 0..outer {
                let src = o * total_extent * inner + off * inner;
                let dst = o * ext * inner;
                g[dst..dst + ext * inner].copy_from_slice(&up[src..src + ext * inner]);
            }
            sink(slot, g);
        }
    })
}

fn matmul_general(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let ar = a.shape.len();
    let br = b.shape.len();
    assert!(ar >= 2 && br >= 2, "matmul expects matrices");
    let (s0, s1) = (a.shape[ar - 2], a.shape[ar - 1]);
    let (t0, t1) = (b.shape[br - 2], b.shape[br - 1]);
    let (m, ka) = if ta { (s1, s0) } else { (s0, s1) };
    let (kb, n) = if tb { (t1, t0) } else { (t0, t1) };
    if ka != kb {
        panic!(
            "matmul: inner dimensions disagree, {:?}{} vs {:?}{}",
            a.shape,
            if ta { " (transposed)" } else { "" },
            b.shape,
            if tb { " (transposed)" } else { "" }
        );
    }
    let k = ka;
    let a_batch_shape = &a.shape[..ar - 2];
    let b_batch_shape = &b.shape[..br - 2];
    let batch_shape = broadcast_shape(a_batch_shape, b_batch_shape).unwrap_or_else(|| {
        panic!(
            "matmul: batch dims do not broadcast, {:?} vs {:?}",
            a.shape, b.shape
        )
    });
    let mut out_shape = batch_shape.clone();
    out_shape.push(m);
    out_shape.push(n);

    // A stack of matrices against one shared right operand collapses into a
    // single multiply over the stacked rows.
    let (batch, m) = if b_batch_shape.is_empty() && !ta {
        (1, numel(&batch_shape) * m)
    } else {
        (numel(&batch_shape), m)
    };
    let collapsed = batch == 1 && b_batch_shape.is_empty() && !ta;
    let a_offsets = if collapsed {
        vec![0usize]
    } else {
        batch_offsets(&batch_shape, a_batch_shape, s0 * s1)
    };
    let b_offsets = if collapsed {
        vec![0usize]
    } else {
        batch_offsets(&batch_shape, b_batch_shape, t0 * t1)
    };
    let (s0, s1) = if collapsed { (m, s1) } else { (s0, s1) };
    let mut data = vec![0.0; batch * m * n];
    for bi in 0..batch {
        kernels::mm(
            &a.data()[a_offsets[bi]..a_offsets[bi] + s0 * s1],
            &b.data()[b_offsets[bi]..b_offsets[bi] + t0 * t1],
            &mut data[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
            ta,
            tb,
        );
    }

    let (asave, bsave) = (Rc::clone(&a.data), Rc::clone(&b.data));
    let (a_off, b_off) = (a_offsets, b_offsets);
    let (alen, blen) = (a.numel(), b.numel());
    let (na, nb) = (a.requires_grad(), b.requires_grad());
    record("matmul", &[a, b], out_shape, data, move |up, sink| {
        if na {
            let mut ga = vec![0.0; alen];
            for bi in 0..batch {
                let u = &up[bi * m * n..(bi + 1) * m * n];
                let bs = &bsave[b_off[bi]..b_off[bi] + t0 * t1];
                let del_a = &mut ga[a_off[bi]..a_off[bi] + s0 * s1];
                match (ta, tb) {
                    (false, false) => kernels::mm(u, bs, del_a, m, n, k, false, true),
                    (false, true) => kernels::mm(u, bs, del_a, m, n, k, false, false),
                    (true, false) => kernels::mm(bs, u, del_a, k, n, m, false, true),
                    (true, true) => kernels::mm(bs, u, del_a, k, n, m, true, true),
                }
            }
            sink(0, ga);
        }
        if nb {
            let mut gb = vec![0.0; blen];
            for bi in 0..batch {
                let u = &up[bi * m * n..(bi + 1) * m * n];
                let asl = &asave[a_off[bi]..a_off[bi] + s0 * s1];
                let del_b = &mut gb[b_off[bi]..b_off[bi] + t0 * t1];
                match (ta, tb) {
                    (false, false) => kernels::mm(asl, u, del_b, k, m, n, true, false),
                    (true, false) => kernels::mm(asl, u, del_b, k, m, n, false, false),
                    (false, true) => kernels::mm(u, asl, del_b, n, m, k, true, false),
                    (true, true) => kernels::mm(u, asl, del_b, n, m, k, true, true),
                }
            }
            sink(1, gb);
        }
    })
}

/// Element offset of each broadcast batch index into a tensor whose own
/// batch shape is `own` and whose per-batch block holds `block` elements.
fn batch_offsets(batch_shape: &[usize], own: &[usize], block: usize) -> Vec<usize> {
    let batch = numel(batch_shape);
    let own_strides = kernels::broadcast_strides(own, batch_shape);
    let so = strides(batch_shape);
    let mut out = Vec::with_capacity(batch);
    for flat in 0..batch {
        let mut rem = flat;
        let mut off = 0usize;
        for d in 0..batch_shape.len() {
            let c = rem / so[d];
            rem %= so[d];
            off += c * own_strides[d];
        }
        out.push(off * block);
    }
    out
}

fn softmax_impl(x: &Tensor, axis: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let rank = x.shape.len();
    assert!(
        axis < rank,
        "softmax: axis {axis} out of range for {:?}",
        x.shape
    );
    let len = x.shape[axis];
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    // Evaluate the mask through broadcast strides: per lane, one base offset
    // plus a fixed step along the softmax axis.
    let mask_view: Option<(Rc<Vec<f64>>, Vec<usize>)> = mask.map(|m| {
        let bs = broadcast_shape(m.shape(), x.shape()).unwrap_or_else(|| {
            panic!(
                "softmax: mask {:?} does not broadcast to {:?}",
                m.shape(),
                x.shape()
            )
        });
        assert_eq!(bs, x.shape, "softmax: mask must broadcast to input shape");
        (Rc::clone(&m.data), kernels::broadcast_strides(m.shape(), &x.shape))
    });
    let lane_base = |o: usize, i: usize, strides: &[usize]| -> usize {
        let mut base = 0usize;
        let mut rem = o;
        for d in (0..axis).rev() {
            base += (rem % x.shape[d]) * strides[d];
            rem /= x.shape[d];
        }
        let mut rem = i;
        for d in (axis + 1..rank).rev() {
            base += (rem % x.shape[d]) * strides[d];
            rem /= x.shape[d];
        }
        base
    };
    let mut data = x.to_vec();
    if inner == 1 {
        // Contiguous lanes: slice arithmetic throughout.
        for o in 0..outer {
            let row = &mut data[o * len..(o + 1) * len];
            let lane_mask: Option<(&[f64], usize, usize)> = mask_view
                .as_ref()
                .map(|(m, strides)| (m.as_slice(), lane_base(o, 0, strides), strides[axis]));
            let mut max = f64::NEG_INFINITY;
            match lane_mask {
                None => {
                    for &v in row.iter() {
                        if v > max {
                            max = v;
                        }
                    }
                }
                Some((m, base, 1)) => {
                    for (v, &keep) in row.iter().zip(&m[base..base + len]) {
                        if keep != 0.0 && *v > max {
                            max = *v;
                        }
                    }
                }
                Some((m, base, step)) => {
                    for (l, v) in row.iter().enumerate() {
                        if m[base + l * step] != 0.0 && *v > max {
                            max = *v;
                        }
                    }
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyKeySet);
            }
            let mut sum = 0.0;
            match lane_mask {
                None => {
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                }
                Some((m, base, 1)) => {
                    for (v, &keep) in row.iter_mut().zip(&m[base..base + len]) {
                        if keep != 0.0 {
                            *v = (*v - max).exp();
                            sum += *v;
                        } else {
                            *v = 0.0;
                        }
                    }
                }
                Some((m, base, step)) => {
                    for (l, v) in row.iter_mut().enumerate() {
                        if m[base + l * step] != 0.0 {
                            *v = (*v - max).exp();
                            sum += *v;
                        } else {
                            *v = 0.0;
                        }
                    }
                }
            }
            if sum == 0.0 {
                return Err(Error::EmptyKeySet);
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let lane_mask: Option<(&[f64], usize, usize)> = mask_view
                    .as_ref()
                    .map(|(m, strides)| (m.as_slice(), lane_base(o, i, strides), strides[axis]));
                let keep = |l: usize| match lane_mask {
                    None => true,
                    Some((m, base, step)) => m[base + l * step] != 0.0,
                };
                let mut max = f64::NEG_INFINITY;
                for l in 0..len {
                    if keep(l) && data[at(l)] > max {
                        max = data[at(l)];
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(Error::EmptyKeySet);
                }
                let mut sum = 0.0;
                for l in 0..len {
                    let idx = at(l);
                    if keep(l) {
                        data[idx] = (data[idx] - max).exp();
                        sum += data[idx];
                    } else {
                        data[idx] = 0.0;
                    }
                }
                if sum == 0.0 {
                    return Err(Error::EmptyKeySet);
                }
                let inv = 1.0 / sum;
                for l in 0..len {
                    data[at(l)] *= inv;
                }
            }
        }
    }
    let probs = Rc::new(data);
    let inputs: Vec<&Tensor> = vec![x];
    Ok(record_shared(
        "softmax",
        &inputs,
        x.shape.clone(),
        Rc::clone(&probs),
        move |up, sink| {
            let mut g = vec![0.0; up.len()];
            if inner == 1 {
                for o in 0..outer {
                    let u = &up[o * len..(o + 1) * len];
                    let p = &probs[o * len..(o + 1) * len];
                    let out = &mut g[o * len..(o + 1) * len];
                    let mut dot = 0.0;
                    for l in 0..len {
                        dot += u[l] * p[l];
                    }
                    for l in 0..len {
                        out[l] = p[l] * (u[l] - dot);
                    }
                }
            } else {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += up[at(l)] * probs[at(l)];
                        }
                        for l in 0..len {
                            let idx = at(l);
                            g[idx] = probs[idx] * (up[idx] - dot);
                        }
                    }
                }
            }
            sink(0, g);
        },
    ))
}

fn reduce_impl(x: &Tensor, axis: usize, mean: bool, mask: Option<&Tensor>) -> Result<Tensor> {
    let rank = x.shape.len();
    assert!(
        axis < rank,
        "reduce: axis {axis} out of range for {:?}",
        x.shape
    );
    let len = x.shape[axis];
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    let mask_full: Option<Vec<f64>> = mask.map(|m| {
        let bs = broadcast_shape(m.shape(), x.shape()).unwrap_or_else(|| {
            panic!(
                "reduce: mask {:?} does not broadcast to {:?}",
                m.shape(),
                x.shape()
            )
        });
        assert_eq!(bs, x.shape, "reduce: mask must broadcast to input shape");
        kernels::map2(m.data(), m.shape(), m.data(), m.shape(), &x.shape, |v, _| v)
    });
    let mut out_shape = x.shape.clone();
    out_shape.remove(axis);
    let mut data = vec![0.0; outer * inner];
    let mut denom = vec![len as f64; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let slot = o * inner + i;
            let mut acc = 0.0;
            match &mask_full {
                None => {
                    for l in 0..len {
                        acc += x.data()[at(l)];
                    }
                }
                Some(m) => {
                    let mut cnt = 0.0;
                    for l in 0..len {
                        acc += x.data()[at(l)] * m[at(l)];
                        cnt += m[at(l)];
                    }
                    if mean && cnt == 0.0 {
                        return Err(Error::EmptySetReduction);
                    }
                    denom[slot] = cnt;
                }
            }
            data[slot] = if mean { acc / denom[slot] } else { acc };
        }
    }
    let denom = Rc::new(denom);
    let mask_rc = Rc::new(mask_full);
    Ok(record(
        if mean { "mean" } else { "sum" },
        &[x],
        out_shape,
        data,
        move |up, sink| {
            let mut g = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    let w = if mean { up[slot] / denom[slot] } else { up[slot] };
                    for l in 0..len {
                        let idx = (o * len + l) * inner + i;
                        let keep = mask_rc.as_ref().as_ref().map_or(1.0, |m| m[idx]);
                        g[idx] = w * keep;
                    }
                }
            }
            sink(0, g);
        },
    ))
}

impl Tensor {
    /// Fused affine map over the last axis: `self @ w + b` in one node.
    /// `self`: `[.., R, K]` (leading axes collapse into rows), `w`: `[K, N]`,
    /// `b`: `[N]`.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Tensor {
        let rank = self.shape.len();
        assert!(rank >= 1, "linear on a scalar");
        let kk = self.shape[rank - 1];
        assert_eq!(w.shape.len(), 2, "linear: weight must be [K, N]");
        assert_eq!(
            w.shape[0], kk,
            "linear: inner dimensions disagree, {:?} vs {:?}",
            self.shape, w.shape
        );
        let nn = w.shape[1];
        assert_eq!(b.shape(), [nn], "linear: bias shape {:?}", b.shape());
        let rows = self.numel() / kk;
        let mut data = vec![0.0; rows * nn];
        kernels::mm(self.data(), w.data(), &mut data, rows, kk, nn, false, false);
        let bias = b.data();
        for row in data.chunks_exact_mut(nn) {
            for (v, &bj) in row.iter_mut().zip(bias) {
                *v += bj;
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape[rank - 1] = nn;
        let (xs, ws) = (Rc::clone(&self.data), Rc::clone(&w.data));
        let (nx, nw, nb) = (self.requires_grad(), w.requires_grad(), b.requires_grad());
        record("linear", &[self, w, b], out_shape, data, move |up, sink| {
            if nx {
                let mut dx = vec![0.0; rows * kk];
                kernels::mm(up, &ws, &mut dx, rows, nn, kk, false, true);
                sink(0, dx);
            }
            if nw {
                let mut dw = vec![0.0; kk * nn];
                kernels::mm(&xs, up, &mut dw, kk, rows, nn, true, false);
                sink(1, dw);
            }
            if nb {
                let mut db = vec![0.0; nn];
                for row in up.chunks_exact(nn) {
                    for (d, &u) in db.iter_mut().zip(row) {
                        *d += u;
                    }
                }
                sink(2, db);
            }
        })
    }

    /// Fused multi-head scaled dot-product attention.
    ///
    /// `self`/`k`/`v`: projected queries/keys/values `[B, T, E]` with heads
    /// as contiguous feature slices; `key_mask`: optional `[B, Tk]` validity
    /// (excluded keys get exactly zero weight). One tape node computes every
    /// head; only the attention weights are saved for the backward pass.
    pub fn multi_head_attention(
        &self,
        k: &Tensor,
        v: &Tensor,
        num_heads: usize,
        key_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let q = self;
        assert_eq!(q.shape.len(), 3, "attention expects [B, Tq, E] queries");
        assert_eq!(k.shape.len(), 3, "attention expects [B, Tk, E] keys");
        assert_eq!(k.shape(), v.shape(), "key/value shapes differ");
        let (bsz, tq, e) = (q.shape[0], q.shape[1], q.shape[2]);
        let tk = k.shape[1];
        assert_eq!(k.shape[0], bsz, "query/key batch mismatch");
        assert_eq!(k.shape[2], e, "query/key feature mismatch");
        assert_eq!(e % num_heads, 0, "heads must divide the feature dim");
        let d = e / num_heads;
        let scale = 1.0 / (d as f64).sqrt();
        if let Some(m) = key_mask {
            assert_eq!(m.shape(), [bsz, tk], "key mask shape");
        }
        let mask = key_mask.map(|m| Rc::clone(&m.data));

        // Pack per-head slices once: [B, H, T, D] layout for q, k, v.
        let pack = |x: &[f64], t: usize| -> Vec<f64> {
            let mut out = vec![0.0; bsz * num_heads * t * d];
            for b in 0..bsz {
                for h in 0..num_heads {
                    for r in 0..t {
                        let src = (b * t + r) * e + h * d;
                        let dst = ((b * num_heads + h) * t + r) * d;
                        out[dst..dst + d].copy_from_slice(&x[src..src + d]);
                    }
                }
            }
            out
        };
        let qh = pack(q.data(), tq);
        let kh = pack(k.data(), tk);
        let vh = pack(v.data(), tk);

        let mut probs = vec![0.0; bsz * num_heads * tq * tk];
        let mut out_packed = vec![0.0; bsz * num_heads * tq * d];
        for b in 0..bsz {
            let mrow = mask.as_ref().map(|m| &m[b * tk..(b + 1) * tk]);
            for h in 0..num_heads {
                let base = (b * num_heads + h) * tq;
                let qs = &qh[base * d..(base + tq) * d];
                let ks = &kh[((b * num_heads + h) * tk) * d..((b * num_heads + h) * tk + tk) * d];
                let vs = &vh[((b * num_heads + h) * tk) * d..((b * num_heads + h) * tk + tk) * d];
                let ps = &mut probs[base * tk..(base + tq) * tk];
                kernels::mm(qs, ks, ps, tq, d, tk, false, true);
                for row in ps.chunks_exact_mut(tk) {
                    let mut max = f64::NEG_INFINITY;
                    match mrow {
                        None => {
                            for v in row.iter_mut() {
                                *v *= scale;
                                if *v > max {
                                    max = *v;
                                }
                            }
                        }
                        Some(m) => {
                            for (v, &keep) in row.iter_mut().zip(m) {
                                *v *= scale;
                                if keep != 0.0 && *v > max {
                                    max = *v;
                                }
                            }
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        return Err(Error::EmptyKeySet);
                    }
                    let mut sum = 0.0;
                    match mrow {
                        None => {
                            for v in row.iter_mut() {
                                *v = (*v - max).exp();
                                sum += *v;
                            }
                        }
                        Some(m) => {
                            for (v, &keep) in row.iter_mut().zip(m) {
                                if keep != 0.0 {
                                    *v = (*v - max).exp();
                                    sum += *v;
                                } else {
                                    *v = 0.0;
                                }
                            }
                        }
                    }
                    if sum == 0.0 {
                        return Err(Error::EmptyKeySet);
                    }
                    let inv = 1.0 / sum;
                    for v in row.iter_mut() {
                        *v *= inv;
                    }
                }
                let os = &mut out_packed[base * d..(base + tq) * d];
                kernels::mm(ps, vs, os, tq, tk, d, false, false);
            }
        }

        // Unpack [B, H, Tq, D] -> [B, Tq, E].
        let mut data = vec![0.0; bsz * tq * e];
        for b in 0..bsz {
            for h in 0..num_heads {
                for r in 0..tq {
                    let src = ((b * num_heads + h) * tq + r) * d;
                    let dst = (b * tq + r) * e + h * d;
                    data[dst..dst + d].copy_from_slice(&out_packed[src..src + d]);
                }
            }
        }

        let probs = Rc::new(probs);
        let (qh, kh, vh) = (Rc::new(qh), Rc::new(kh), Rc::new(vh));
        let needs = [q.requires_grad(), k.requires_grad(), v.requires_grad()];
        let out_shape = vec![bsz, tq, e];
        Ok(record(
            "multi_head_attention",
            &[q, k, v],
            out_shape,
            data,
            move |up, sink| {
                let mut dq = vec![0.0; bsz * tq * e];
                let mut dk = vec![0.0; bsz * tk * e];
                let mut dv = vec![0.0; bsz * tk * e];
                let mut do_h = vec![0.0; tq * d];
                let mut dp = vec![0.0; tq * tk];
                let mut dqh = vec![0.0; tq * d];
                let mut dkh = vec![0.0; tk * d];
                let mut dvh = vec![0.0; tk * d];
                for b in 0..bsz {
                    for h in 0..num_heads {
                        let base = (b * num_heads + h) * tq;
                        let ps = &probs[base * tk..(base + tq) * tk];
                        let qs = &qh[base * d..(base + tq) * d];
                        let kbase = (b * num_heads + h) * tk;
                        let ks = &kh[kbase * d..(kbase + tk) * d];
                        let vs = &vh[kbase * d..(kbase + tk) * d];
                        // gather upstream head slice
                        for r in 0..tq {
                            let src = (b * tq + r) * e + h * d;
                            do_h[r * d..(r + 1) * d].copy_from_slice(&up[src..src + d]);
                        }
                        // dV_h = P^T dO
                        if needs[2] {
                            dvh.iter_mut().for_each(|x| *x = 0.0);
                            kernels::mm(ps, &do_h, &mut dvh, tk, tq, d, true, false);
                            for r in 0..tk {
                                let dst = (b * tk + r) * e + h * d;
                                dv[dst..dst + d].copy_from_slice(&dvh[r * d..(r + 1) * d]);
                            }
                        }
                        if needs[0] || needs[1] {
                            // dP = dO V^T, then dS = P o (dP - rowdot(dP, P))
                            dp.iter_mut().for_each(|x| *x = 0.0);
                            kernels::mm(&do_h, vs, &mut dp, tq, d, tk, false, true);
                            for r in 0..tq {
                                let prow = &ps[r * tk..(r + 1) * tk];
                                let dprow = &mut dp[r * tk..(r + 1) * tk];
                                let mut dot = 0.0;
                                for l in 0..tk {
                                    dot += dprow[l] * prow[l];
                                }
                                for l in 0..tk {
                                    dprow[l] = prow[l] * (dprow[l] - dot) * scale;
                                }
                            }
                            // dq_h = dS K, dk_h = dS^T Q
                            if needs[0] {
                                dqh.iter_mut().for_each(|x| *x = 0.0);
                                kernels::mm(&dp, ks, &mut dqh, tq, tk, d, false, false);
                                for r in 0..tq {
                                    let dst = (b * tq + r) * e + h * d;
                                    dq[dst..dst + d].copy_from_slice(&dqh[r * d..(r + 1) * d]);
                                }
                            }
                            if needs[1] {
                                dkh.iter_mut().for_each(|x| *x = 0.0);
                                kernels::mm(&dp, qs, &mut dkh, tk, tq, d, true, false);
                                for r in 0..tk {
                                    let dst = (b * tk + r) * e + h * d;
                                    dk[dst..dst + d].copy_from_slice(&dkh[r * d..(r + 1) * d]);
                                }
                            }
                        }
                    }
                }
                if needs[0] {
                    sink(0, dq);
                }
                if needs[1] {
                    sink(1, dk);
                }
                if needs[2] {
                    sink(2, dv);
                }
            },
        ))
    }
}
