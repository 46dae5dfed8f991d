//! Reverse-mode automatic differentiation over dense f32 tensors.
//!
//! A [`Tensor`] is a shared handle to an immutable value plus an optional
//! record of the op that produced it. Ops build the graph eagerly; calling
//! [`backward`] walks it in reverse topological order and accumulates
//! gradients into every reachable leaf that was created with
//! [`Tensor::var`] (parameters). Gradients of interior nodes live in
//! transient buffers, so running `backward` twice without zeroing doubles
//! leaf gradients exactly.
//!
//! Shape rules are strict: elementwise ops require identical shapes, and
//! there is no broadcasting beyond the few patterns the layers need
//! (`add_bias`, `scale_rows`). Mismatches panic with the offending op name;
//! fallible entry points at the library surface validate first and return
//! [`ShapeError`].

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use thiserror::Error;

use super::kernels;
pub use super::kernels::ConvGeom;

#[derive(Debug, Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` without recording any backward graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &TensorInner) -> Vec<Option<Vec<f32>>>>;

struct OpRecord {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

pub struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    op: Option<OpRecord>,
}

/// Shared handle to a tensor value; cloning is cheap.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Option<OpRecord>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(TensorInner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Constant leaf: no gradient is ever accumulated into it.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf: `backward` accumulates into its `grad` buffer.
    pub fn var(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(&[1], vec![v])
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.tracks_grad());
        let op = track.then_some(OpRecord { parents, backward });
        Tensor::new(shape, data, false, op)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Part of a live backward graph or a trainable leaf.
    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f32 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Gradient buffer contents, if any backward pass has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Replace the gradient buffer wholesale (gradient clipping).
    pub fn set_grad(&self, g: Vec<f32>) {
        assert_eq!(g.len(), self.len(), "set_grad length mismatch");
        *self.inner.grad.borrow_mut() = Some(g);
    }

    /// Overwrite the value in place (optimizer steps, parameter loading).
    pub fn set_data(&self, new: &[f32]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    /// Copy of the value with the graph cut; never tracks gradients.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(&self.inner.shape, self.to_vec())
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn assert_same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.inner.shape, other.inner.shape,
            "{op}: shape mismatch {:?} vs {:?}",
            self.inner.shape, other.inner.shape
        );
    }

    fn rows_cols(&self, op: &str) -> (usize, usize) {
        assert_eq!(self.inner.shape.len(), 2, "{op}: expected rank-2 tensor, got {:?}", self.inner.shape);
        (self.inner.shape[0], self.inner.shape[1])
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "add");
        let data: Vec<f32> = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "sub");
        let data: Vec<f32> = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "mul");
        let data: Vec<f32> = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a * b).collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let da: Vec<f32> = g.iter().zip(b.data().iter()).map(|(&gv, &bv)| gv * bv).collect();
                let db: Vec<f32> = g.iter().zip(a.data().iter()).map(|(&gv, &av)| gv * av).collect();
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn scale(&self, c: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f32) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| a + c).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| a.max(0.0)).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|g, out| {
                let o = out.data.borrow();
                vec![Some(g.iter().zip(o.iter()).map(|(&gv, &ov)| if ov > 0.0 { gv } else { 0.0 }).collect())]
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| a.exp()).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|g, out| {
                let o = out.data.borrow();
                vec![Some(g.iter().zip(o.iter()).map(|(&gv, &ov)| gv * ov).collect())]
            }),
        )
    }

    pub fn log(&self) -> Tensor {
        let a = self.clone();
        let data: Vec<f32> = self.data().iter().map(|&v| v.ln()).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let x = a.data();
                vec![Some(g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect())]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|g, out| {
                let o = out.data.borrow();
                vec![Some(g.iter().zip(o.iter()).map(|(&gv, &ov)| gv * ov * (1.0 - ov)).collect())]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f32> = self.data().iter().map(|&a| a.tanh()).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|g, out| {
                let o = out.data.borrow();
                vec![Some(g.iter().zip(o.iter()).map(|(&gv, &ov)| gv * (1.0 - ov * ov)).collect())]
            }),
        )
    }

    /// Elementwise min; gradient follows the smaller input (ties go left).
    pub fn minimum(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "minimum");
        let a = self.clone();
        let b = other.clone();
        let data: Vec<f32> = self.data().iter().zip(other.data().iter()).map(|(&x, &y)| x.min(y)).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let av = a.data();
                let bv = b.data();
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for i in 0..g.len() {
                    if av[i] <= bv[i] {
                        da[i] = g[i];
                    } else {
                        db[i] = g[i];
                    }
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Clamp to [lo, hi]; gradient is zero where the input was clipped.
    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        let a = self.clone();
        let data: Vec<f32> = self.data().iter().map(|&v| v.clamp(lo, hi)).collect();
        Tensor::from_op(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let x = a.data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv >= lo && xv <= hi { gv } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self) -> Tensor {
        let s: f32 = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.len();
        self.sum_all().scale(1.0 / n as f32)
    }

    // ---- rank-2 linear algebra ----

    /// [m x k] @ [k x n]
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.rows_cols("matmul");
        let (k2, n) = other.rows_cols("matmul");
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        kernels::sgemm(m, k, n, &self.data(), &other.data(), &mut out);
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                // dA = G @ B^T ; dB = A^T @ G
                let mut da = vec![0.0; m * k];
                kernels::sgemm_nt(m, n, k, g, &b.data(), &mut da);
                let mut db = vec![0.0; k * n];
                kernels::sgemm_tn(m, k, n, &a.data(), g, &mut db);
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// [m x k] @ [n x k]^T — the common "rows against rows" product.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.rows_cols("matmul_nt");
        let (n, k2) = other.rows_cols("matmul_nt");
        assert_eq!(k, k2, "matmul_nt: inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        kernels::sgemm_nt(m, k, n, &self.data(), &other.data(), &mut out);
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                // dA = G @ B ; dB = G^T @ A
                let mut da = vec![0.0; m * k];
                kernels::sgemm(m, n, k, g, &b.data(), &mut da);
                let mut db = vec![0.0; n * k];
                kernels::sgemm_tn(m, n, k, g, &a.data(), &mut db);
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Add a bias row vector to every row of a [n x d] tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Tensor {
        let (n, d) = self.rows_cols("add_bias");
        assert_eq!(bias.shape(), [d], "add_bias: bias shape {:?} vs row width {d}", bias.shape());
        let bv = bias.to_vec();
        let mut data = self.to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += bv[c];
            }
        }
        Tensor::from_op(
            vec![n, d],
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                let mut db = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        db[c] += g[r * d + c];
                    }
                }
                vec![Some(g.to_vec()), Some(db)]
            }),
        )
    }

    /// Multiply row i of a [n x d] tensor by scalar s[i].
    pub fn scale_rows(&self, scales: &Tensor) -> Tensor {
        let (n, d) = self.rows_cols("scale_rows");
        assert_eq!(scales.shape(), [n], "scale_rows: scales shape {:?} vs rows {n}", scales.shape());
        let sv = scales.to_vec();
        let x = self.clone();
        let mut data = self.to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] *= sv[r];
            }
        }
        Tensor::from_op(
            vec![n, d],
            data,
            vec![self.clone(), scales.clone()],
            Box::new(move |g, _| {
                let xv = x.data();
                let mut dx = vec![0.0; n * d];
                let mut ds = vec![0.0; n];
                for r in 0..n {
                    for c in 0..d {
                        dx[r * d + c] = g[r * d + c] * sv[r];
                        ds[r] += g[r * d + c] * xv[r * d + c];
                    }
                }
                vec![Some(dx), Some(ds)]
            }),
        )
    }

    // ---- row-wise nonlinearities ----

    pub fn softmax_rows(&self) -> Tensor {
        let (n, d) = self.rows_cols("softmax_rows");
        let x = self.data();
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0;
            for c in 0..d {
                let e = (row[c] - m).exp();
                data[r * d + c] = e;
                s += e;
            }
            for c in 0..d {
                data[r * d + c] /= s;
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, d],
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let p = out.data.borrow();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let mut dotv = 0.0;
                    for c in 0..d {
                        dotv += g[r * d + c] * p[r * d + c];
                    }
                    for c in 0..d {
                        dx[r * d + c] = p[r * d + c] * (g[r * d + c] - dotv);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn log_softmax_rows(&self) -> Tensor {
        let (n, d) = self.rows_cols("log_softmax_rows");
        let x = self.data();
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
            for c in 0..d {
                data[r * d + c] = row[c] - lse;
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, d],
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let l = out.data.borrow();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let gsum: f32 = g[r * d..(r + 1) * d].iter().sum();
                    for c in 0..d {
                        dx[r * d + c] = g[r * d + c] - l[r * d + c].exp() * gsum;
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Normalize every row of a [n x d] tensor to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Tensor {
        let (n, d) = self.rows_cols("l2_normalize_rows");
        let x = self.data();
        let mut data = vec![0.0; n * d];
        let mut norms = vec![0.0f32; n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let norm = kernels::dot(row, row).sqrt().max(1e-12);
            norms[r] = norm;
            for c in 0..d {
                data[r * d + c] = row[c] / norm;
            }
        }
        drop(x);
        Tensor::from_op(
            vec![n, d],
            data,
            vec![self.clone()],
            Box::new(move |g, out| {
                let z = out.data.borrow();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let zr = &z[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let zg = kernels::dot(zr, gr);
                    for c in 0..d {
                        dx[r * d + c] = (gr[c] - zr[c] * zg) / norms[r];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // ---- structural ops ----

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "reshape: cannot view {:?} as {:?}",
            self.inner.shape,
            shape
        );
        Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Concatenate two [n x *] tensors along columns.
    pub fn concat_cols(&self, other: &Tensor) -> Tensor {
        let (n, d1) = self.rows_cols("concat_cols");
        let (n2, d2) = other.rows_cols("concat_cols");
        assert_eq!(n, n2, "concat_cols: row counts {n} vs {n2}");
        let a = self.data();
        let b = other.data();
        let mut data = vec![0.0; n * (d1 + d2)];
        for r in 0..n {
            data[r * (d1 + d2)..r * (d1 + d2) + d1].copy_from_slice(&a[r * d1..(r + 1) * d1]);
            data[r * (d1 + d2) + d1..(r + 1) * (d1 + d2)].copy_from_slice(&b[r * d2..(r + 1) * d2]);
        }
        drop(a);
        drop(b);
        Tensor::from_op(
            vec![n, d1 + d2],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let mut da = vec![0.0; n * d1];
                let mut db = vec![0.0; n * d2];
                for r in 0..n {
                    da[r * d1..(r + 1) * d1].copy_from_slice(&g[r * (d1 + d2)..r * (d1 + d2) + d1]);
                    db[r * d2..(r + 1) * d2].copy_from_slice(&g[r * (d1 + d2) + d1..(r + 1) * (d1 + d2)]);
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Columns [a, b) of a [n x d] tensor.
    pub fn slice_cols(&self, a: usize, b: usize) -> Tensor {
        let (n, d) = self.rows_cols("slice_cols");
        assert!(a < b && b <= d, "slice_cols: [{a}, {b}) out of width {d}");
        let w = b - a;
        let x = self.data();
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            data[r * w..(r + 1) * w].copy_from_slice(&x[r * d + a..r * d + b]);
        }
        drop(x);
        Tensor::from_op(
            vec![n, w],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    dx[r * d + a..r * d + b].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// out[i] = t[i, idx[i]] for a [n x d] tensor; shape [n].
    pub fn gather_cols(&self, idx: &[usize]) -> Tensor {
        let (n, d) = self.rows_cols("gather_cols");
        assert_eq!(idx.len(), n, "gather_cols: {} indices for {n} rows", idx.len());
        let x = self.data();
        let data: Vec<f32> = idx.iter().enumerate().map(|(r, &c)| x[r * d + c]).collect();
        drop(x);
        let idx = idx.to_vec();
        Tensor::from_op(
            vec![n],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * d];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * d + c] = g[r];
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Main diagonal of a square [n x n] tensor; shape [n].
    pub fn diag(&self) -> Tensor {
        let (n, d) = self.rows_cols("diag");
        assert_eq!(n, d, "diag: tensor is {n} x {d}, not square");
        let x = self.data();
        let data: Vec<f32> = (0..n).map(|i| x[i * n + i]).collect();
        drop(x);
        Tensor::from_op(
            vec![n],
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; n * n];
                for i in 0..n {
                    dx[i * n + i] = g[i];
                }
                vec![Some(dx)]
            }),
        )
    }
}

/// Backpropagate from a scalar loss, accumulating into every reachable
/// trainable leaf. Interior gradients are transient, so repeated calls
/// add the same leaf gradients again.
pub fn backward(loss: &Tensor) -> Result<(), GraphError> {
    if loss.len() != 1 {
        return Err(GraphError::NonScalarLoss(loss.shape().to_vec()));
    }
    let order = topo_order(loss);
    let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);
    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else { continue };
        if node.inner.requires_grad {
            node.accumulate_grad(&g);
        }
        if let Some(op) = &node.inner.op {
            let contribs = (op.backward)(&g, &node.inner);
            debug_assert_eq!(contribs.len(), op.parents.len());
            for (parent, contrib) in op.parents.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if !parent.tracks_grad() {
                    continue;
                }
                match grads.get_mut(&parent.id()) {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(c) {
                            *b += v;
                        }
                    }
                    None => {
                        grads.insert(parent.id(), c);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Iterative post-order over the op graph (children before parents-of).
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // stack entries: (node, next parent index to expand)
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, pi)) = stack.pop() {
        let parents: &[Tensor] = node.inner.op.as_ref().map(|o| o.parents.as_slice()).unwrap_or(&[]);
        if pi < parents.len() {
            let child = parents[pi].clone();
            stack.push((node, pi + 1));
            if child.tracks_grad() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}
