//! Wengert tape: reverse-mode differentiation by operation recording.
//!
//! A [`Tape`] owns an append-only sequence of operation records. Recording
//! order is a topological order by construction: an op's inputs always exist
//! before the op itself. [`Tape::backward`] walks the records once in
//! reverse, so each node's backward runs exactly once per call, and repeated
//! calls accumulate into the stored gradients until [`Tape::reset_grads`].
//!
//! Tensors are immutable value + shape pairs; a tensor participates in
//! differentiation iff it carries a node handle into some tape. Everything
//! is `Rc`-based and single-threaded by design: one tape and its tensors
//! belong to one thread, distinct model instances may live on distinct
//! threads.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

thread_local! {
    static PROFILER: RefCell<Option<Profiler>> = const { RefCell::new(None) };
}

struct Profiler {
    last: Instant,
    fwd: std::collections::BTreeMap<&'static str, (f64, usize)>,
    bwd: std::collections::BTreeMap<&'static str, (f64, usize)>,
}

/// Start attributing wall time to op names (thread-local; costs a clock
/// read per op, for ad-hoc performance work only).
pub fn profile_start() {
    PROFILER.with(|p| {
        *p.borrow_mut() = Some(Profiler {
            last: Instant::now(),
            fwd: Default::default(),
            bwd: Default::default(),
        })
    });
}

pub fn profile_report() -> String {
    PROFILER.with(|p| {
        let mut out = String::new();
        if let Some(prof) = p.borrow_mut().take() {
            let mut rows: Vec<(String, f64, usize)> = prof
                .fwd
                .iter()
                .map(|(k, (t, c))| (format!("fwd {k}"), *t, *c))
                .chain(prof.bwd.iter().map(|(k, (t, c))| (format!("bwd {k}"), *t, *c)))
                .collect();
            rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            for (name, t, c) in rows {
                out.push_str(&format!("{:>10.1} ms  {:>7}x  {}
", t * 1e3, c, name));
            }
        }
        out
    })
}

use crate::error::{Error, Result};
use crate::autodiff::kernels;

/// Gradient sink passed to backward closures: (input slot, contribution).
pub(crate) type Sink<'a> = dyn FnMut(usize, Vec<f64>) + 'a;
pub(crate) type BackFn = Box<dyn Fn(&[f64], &mut Sink)>;

pub(crate) struct Node {
    #[allow(dead_code)]
    pub name: &'static str,
    /// Node ids of differentiable inputs; `None` marks a constant input slot.
    pub inputs: Vec<Option<usize>>,
    /// `None` for leaves.
    pub back: Option<BackFn>,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    /// Accumulated gradients per node, filled by `backward`.
    pub grads: Vec<Option<Vec<f64>>>,
}

/// Handle to a differentiation graph. Cheap to clone.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a differentiable leaf holding `data`.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            kernels::numel(shape),
            "leaf: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let id = self.push(Node {
            name: "leaf",
            inputs: vec![],
            back: None,
        });
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: Some(id),
            tape: Some(self.clone()),
        }
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        PROFILER.with(|p| {
            if let Some(prof) = p.borrow_mut().as_mut() {
                let now = Instant::now();
                let slot = prof.fwd.entry(node.name).or_insert((0.0, 0));
                slot.0 += now.duration_since(prof.last).as_secs_f64();
                slot.1 += 1;
                prof.last = now;
            }
        });
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.grads.push(None);
        inner.nodes.len() - 1
    }

    /// Backpropagate from a scalar root, accumulating into stored gradients.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root.shape.clone(),
            });
        }
        let root_id = match root.node {
            Some(id) => id,
            // Constant root: nothing depends on tape values.
            None => return Ok(()),
        };
        debug_assert!(root.tape.as_ref().is_some_and(|t| t.same_as(self)));
        let mut inner = self.inner.borrow_mut();
        let TapeInner { nodes, grads } = &mut *inner;
        let n = nodes.len();
        let mut working: Vec<Option<Vec<f64>>> = vec![None; n];
        working[root_id] = Some(vec![1.0]);
        for id in (0..=root_id).rev() {
            let Some(up) = working[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(back) = &node.back {
                let inputs = &node.inputs;
                let mut sink = |slot: usize, contrib: Vec<f64>| {
                    if let Some(target) = inputs[slot] {
                        match &mut working[target] {
                            Some(g) => {
                                for (gi, ci) in g.iter_mut().zip(&contrib) {
                                    *gi += ci;
                                }
                            }
                            None => working[target] = Some(contrib),
                        }
                    }
                };
                let t0 = Instant::now();
                back(&up, &mut sink);
                PROFILER.with(|p| {
                    if let Some(prof) = p.borrow_mut().as_mut() {
                        let slot = prof.bwd.entry(node.name).or_insert((0.0, 0));
                        slot.0 += t0.elapsed().as_secs_f64();
                        slot.1 += 1;
                        prof.last = Instant::now();
                    }
                });
            }
            // Accumulate into the persistent buffer, moving when fresh.
            match &mut grads[id] {
                Some(g) => {
                    for (gi, ui) in g.iter_mut().zip(&up) {
                        *gi += ui;
                    }
                }
                slot @ None => *slot = Some(up),
            }
        }
        Ok(())
    }

    /// Clear accumulated gradients, keeping the graph.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
    }

    pub(crate) fn grad_of(&self, node: usize) -> Option<Vec<f64>> {
        self.inner.borrow().grads[node].clone()
    }
}

/// Dense row-major f64 tensor, optionally attached to a tape.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<usize>,
    pub(crate) tape: Option<Tape>,
}

impl Tensor {
    /// Constant tensor (never differentiated).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            kernels::numel(shape),
            "tensor: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
            tape: None,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; kernels::numel(shape)], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
            tape: None,
        }
    }

    /// Accumulated gradient after backward, if this tensor has a node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let tape = self.tape.as_ref()?;
        tape.grad_of(self.node?)
    }

    pub(crate) fn tape_handle(&self) -> Option<&Tape> {
        self.tape.as_ref()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}
