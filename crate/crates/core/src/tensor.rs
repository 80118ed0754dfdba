//! Dense float-64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a backpointer to their inputs, so the
//! result of a computation doubles as the root of its differentiation graph.
//! [`backward`] walks that graph in reverse topological order and accumulates
//! `d loss / d leaf` into every leaf created with [`Tensor::param`].
//!
//! Only the operations needed by the blind-spot network and its loss are
//! provided: dilated 2-D convolution with an optional structurally masked
//! center tap, pixel shuffle, ReLU, elementwise add/mul, scaling, summation
//! and the mean absolute error.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {len} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        len: usize,
    },
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

type Result<T> = std::result::Result<T, TensorError>;

/// Reference-counted tensor handle. Cloning is cheap and shares the buffer.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<Op>,
}

enum Op {
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        bias: Tensor,
        geom: ConvGeom,
        /// im2col matrix of the input; `None` for 1x1 convolutions, whose
        /// column matrix is the input itself.
        cols: Option<Vec<f64>>,
    },
    PixelShuffle {
        input: Tensor,
        factor: usize,
    },
    Relu {
        input: Tensor,
    },
    Add {
        a: Tensor,
        b: Tensor,
    },
    Mul {
        a: Tensor,
        b: Tensor,
    },
    Scale {
        input: Tensor,
        factor: f64,
    },
    Sum {
        input: Tensor,
    },
    L1 {
        pred: Tensor,
        target: Tensor,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![input, kernel, bias],
            Op::PixelShuffle { input, .. }
            | Op::Relu { input }
            | Op::Scale { input, .. }
            | Op::Sum { input } => vec![input],
            Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::L1 { pred, target } => vec![pred, target],
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, data, false)
    }

    /// Trainable leaf; accumulates gradients across backward passes.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::from_parts(vec![1], vec![value], false, None)
    }

    fn leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                len: data.len(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data, requires_grad, None))
    }

    fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    /// Result of an operation: records `op` only when a parent needs gradients.
    fn derived(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { Some(op) } else { None };
        Self::from_parts(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Copy of the data with no graph attached.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Mutable view of the data. If other handles (clones, or graph nodes
    /// built from this tensor) exist, this handle first detaches onto a
    /// private copy, so they keep seeing the old values. The copy starts
    /// without an accumulated gradient.
    pub fn data_mut(&mut self) -> &mut [f64] {
        if Arc::get_mut(&mut self.0).is_none() {
            let node = &self.0;
            *self = Self::from_parts(node.shape.clone(), node.data.clone(), node.requires_grad, None);
        }
        Arc::get_mut(&mut self.0).expect("unique after copy").data.as_mut_slice()
    }

    fn id(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

// ---------------------------------------------------------------------------
// Dense matrix products
// ---------------------------------------------------------------------------

/// `c = a · b + beta · c` for row-major `a` (m×k) and `b` (k×n); either
/// operand may be read transposed from its row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths asserted above; strides describe in-bounds row-major
    // (or transposed row-major) layouts of exactly those lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ConvGeom {
    c_in: usize,
    c_out: usize,
    height: usize,
    width: usize,
    k: usize,
    /// Active taps as (dy, dx, flat kernel offset ky*k+kx).
    taps: Vec<(isize, isize, usize)>,
}

impl ConvGeom {
    fn new(c_in: usize, c_out: usize, height: usize, width: usize, k: usize, dilation: usize, center_mask: bool) -> Self {
        let r = (k / 2) as isize;
        let center = (k / 2) * k + k / 2;
        let mut taps = Vec::with_capacity(k * k);
        for ky in 0..k {
            for kx in 0..k {
                let flat = ky * k + kx;
                if center_mask && flat == center {
                    continue;
                }
                let dy = (ky as isize - r) * dilation as isize;
                let dx = (kx as isize - r) * dilation as isize;
                taps.push((dy, dx, flat));
            }
        }
        ConvGeom {
            c_in,
            c_out,
            height,
            width,
            k,
            taps,
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.taps.len()
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// True when the column matrix is the input buffer itself.
    fn is_pointwise(&self) -> bool {
        self.taps.len() == 1 && self.taps[0].0 == 0 && self.taps[0].1 == 0
    }

    /// Range of output columns `x` whose source `x + dx` lies inside the row.
    fn valid_span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        (lo.min(hi), hi)
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let hw = h * w;
        let ntaps = self.taps.len();
        let mut cols = vec![0.0; self.rows() * hw];
        for ci in 0..self.c_in {
            let plane = &input[ci * hw..(ci + 1) * hw];
            for (ti, &(dy, dx, _)) in self.taps.iter().enumerate() {
                let row = &mut cols[(ci * ntaps + ti) * hw..(ci * ntaps + ti + 1) * hw];
                let (y0, y1) = Self::valid_span(h, dy);
                let (x0, x1) = Self::valid_span(w, dx);
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let hw = h * w;
        let ntaps = self.taps.len();
        let mut out = vec![0.0; self.c_in * hw];
        for ci in 0..self.c_in {
            let plane = &mut out[ci * hw..(ci + 1) * hw];
            for (ti, &(dy, dx, _)) in self.taps.iter().enumerate() {
                let row = &cols[(ci * ntaps + ti) * hw..(ci * ntaps + ti + 1) * hw];
                let (y0, y1) = Self::valid_span(h, dy);
                let (x0, x1) = Self::valid_span(w, dx);
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
        out
    }

    /// Active taps of the kernel gathered into a `c_out × rows` matrix.
    fn pack_kernel(&self, kernel: &[f64]) -> Vec<f64> {
        let kk = self.k * self.k;
        let mut packed = Vec::with_capacity(self.c_out * self.rows());
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                let base = (co * self.c_in + ci) * kk;
                packed.extend(self.taps.iter().map(|&(_, _, flat)| kernel[base + flat]));
            }
        }
        packed
    }

    fn unpack_kernel(&self, packed: &[f64]) -> Vec<f64> {
        let kk = self.k * self.k;
        let ntaps = self.taps.len();
        let mut kernel = vec![0.0; self.c_out * self.c_in * kk];
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                let base = (co * self.c_in + ci) * kk;
                let src = (co * self.c_in + ci) * ntaps;
                for (ti, &(_, _, flat)) in self.taps.iter().enumerate() {
                    kernel[base + flat] = packed[src + ti];
                }
            }
        }
        kernel
    }
}

/// Same-size dilated cross-correlation with zero padding.
///
/// With `center_mask` the kernel's center tap is skipped entirely: the output
/// never reads the stored center weight and its gradient is always exactly 0.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize, center_mask: bool) -> Result<Tensor> {
    let (ishape, kshape) = (input.shape(), kernel.shape());
    if ishape.len() != 3 || kshape.len() != 4 {
        return Err(TensorError::Invalid {
            op: "conv2d",
            msg: format!("expected input [C,H,W] and kernel [O,C,k,k], got {ishape:?} and {kshape:?}"),
        });
    }
    let (c_in, height, width) = (ishape[0], ishape[1], ishape[2]);
    let (c_out, k) = (kshape[0], kshape[2]);
    if kshape[1] != c_in {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: ishape.to_vec(),
            right: kshape.to_vec(),
        });
    }
    if k % 2 == 0 || kshape[3] != k || dilation == 0 {
        return Err(TensorError::Invalid {
            op: "conv2d",
            msg: format!("kernel must be square with odd size and dilation >= 1, got {kshape:?} dilation {dilation}"),
        });
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: vec![c_out],
            right: bias.shape().to_vec(),
        });
    }

    let geom = ConvGeom::new(c_in, c_out, height, width, k, dilation, center_mask);
    let hw = geom.pixels();
    let mut out = vec![0.0; c_out * hw];
    for (co, &b) in bias.data().iter().enumerate() {
        out[co * hw..(co + 1) * hw].fill(b);
    }
    let cols = if geom.is_pointwise() {
        None
    } else {
        Some(geom.im2col(input.data()))
    };
    if !geom.taps.is_empty() {
        let packed = geom.pack_kernel(kernel.data());
        let rhs = cols.as_deref().unwrap_or(input.data());
        gemm(c_out, geom.rows(), hw, &packed, false, rhs, false, 1.0, &mut out);
    }

    let shape = vec![c_out, height, width];
    Ok(Tensor::derived(
        shape,
        out,
        Op::Conv2d {
            input: input.clone(),
            kernel: kernel.clone(),
            bias: bias.clone(),
            geom,
            cols,
        },
    ))
}

// ---------------------------------------------------------------------------
// Rearrangement and pointwise operations
// ---------------------------------------------------------------------------

/// `[C·t², h, w] -> [C, t·h, t·w]` with
/// `out(c, i·t+a, j·t+b) = in(c·t² + a·t + b, i, j)`.
pub fn pixel_shuffle(input: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 || factor == 0 || shape[0] % (factor * factor) != 0 {
        return Err(TensorError::Invalid {
            op: "pixel_shuffle",
            msg: format!("channel count of {shape:?} not divisible by {factor}^2"),
        });
    }
    let (c, h, w) = (shape[0] / (factor * factor), shape[1], shape[2]);
    let out = shuffle_data(input.data(), c, h, w, factor);
    Ok(Tensor::derived(
        vec![c, h * factor, w * factor],
        out,
        Op::PixelShuffle {
            input: input.clone(),
            factor,
        },
    ))
}

fn shuffle_data(src: &[f64], c: usize, h: usize, w: usize, t: usize) -> Vec<f64> {
    let (oh, ow) = (h * t, w * t);
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for a in 0..t {
            for b in 0..t {
                let plane = &src[((ch * t + a) * t + b) * h * w..][..h * w];
                for i in 0..h {
                    let row = &mut out[ch * oh * ow + (i * t + a) * ow..][..ow];
                    for j in 0..w {
                        row[j * t + b] = plane[i * w + j];
                    }
                }
            }
        }
    }
    out
}

fn unshuffle_data(src: &[f64], c: usize, h: usize, w: usize, t: usize) -> Vec<f64> {
    let (oh, ow) = (h * t, w * t);
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for a in 0..t {
            for b in 0..t {
                let plane = &mut out[((ch * t + a) * t + b) * h * w..][..h * w];
                for i in 0..h {
                    let row = &src[ch * oh * ow + (i * t + a) * ow..][..ow];
                    for j in 0..w {
                        plane[i * w + j] = row[j * t + b];
                    }
                }
            }
        }
    }
    out
}

pub fn relu(input: &Tensor) -> Tensor {
    let out = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::derived(input.shape().to_vec(), out, Op::Relu { input: input.clone() })
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("add", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::derived(
        a.shape().to_vec(),
        out,
        Op::Add {
            a: a.clone(),
            b: b.clone(),
        },
    ))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same("mul", a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::derived(
        a.shape().to_vec(),
        out,
        Op::Mul {
            a: a.clone(),
            b: b.clone(),
        },
    ))
}

pub fn scale(input: &Tensor, factor: f64) -> Tensor {
    let out = input.data().iter().map(|x| x * factor).collect();
    Tensor::derived(
        input.shape().to_vec(),
        out,
        Op::Scale {
            input: input.clone(),
            factor,
        },
    )
}

/// Sum of all elements as a `[1]` tensor.
pub fn sum(input: &Tensor) -> Tensor {
    let total = input.data().iter().sum();
    Tensor::derived(vec![1], vec![total], Op::Sum { input: input.clone() })
}

/// Mean absolute difference.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same("l1_loss", pred, target)?;
    let n = pred.numel().max(1) as f64;
    let total: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum();
    Ok(Tensor::derived(
        vec![1],
        vec![total / n],
        Op::L1 {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Post-order of the graph rooted at `root`, restricted to nodes that need
/// gradients.
fn topological_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const Node> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = &node.0.op {
            for parent in op.parents() {
                if parent.requires_grad() && !visited.contains(&parent.id()) {
                    stack.push((parent.clone(), false));
                }
            }
        }
    }
    order
}

struct GradMap(HashMap<*const Node, Vec<f64>>);

impl GradMap {
    fn push(&mut self, target: &Tensor, contribution: Vec<f64>) {
        if !target.requires_grad() {
            return;
        }
        match self.0.get_mut(&target.id()) {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
            None => {
                self.0.insert(target.id(), contribution);
            }
        }
    }
}

/// Accumulates `d loss / d leaf` into every trainable leaf reachable from
/// `loss`. Repeated calls add to the existing gradients.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalar(loss.shape().to_vec()));
    }
    if !loss.requires_grad() {
        return Ok(());
    }
    let order = topological_order(loss);
    let mut grads = GradMap(HashMap::new());
    grads.0.insert(loss.id(), vec![1.0]);

    for node in order.iter().rev() {
        let Some(g) = grads.0.remove(&node.id()) else {
            continue;
        };
        let Some(op) = &node.0.op else {
            node.accumulate_grad(&g);
            continue;
        };
        match op {
            Op::Add { a, b } => {
                grads.push(a, g.clone());
                grads.push(b, g);
            }
            Op::Mul { a, b } => {
                if a.requires_grad() {
                    grads.push(a, g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
                }
                if b.requires_grad() {
                    grads.push(b, g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale { input, factor } => {
                grads.push(input, g.iter().map(|g| g * factor).collect());
            }
            Op::Sum { input } => {
                grads.push(input, vec![g[0]; input.numel()]);
            }
            Op::Relu { input } => {
                let gi = g
                    .iter()
                    .zip(input.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                grads.push(input, gi);
            }
            Op::L1 { pred, target } => {
                let scale = g[0] / pred.numel().max(1) as f64;
                let gp: Vec<f64> = pred
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| {
                        let d = p - t;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if target.requires_grad() {
                    grads.push(target, gp.iter().map(|x| -x).collect());
                }
                grads.push(pred, gp);
            }
            Op::PixelShuffle { input, factor } => {
                let s = input.shape();
                let c = s[0] / (factor * factor);
                grads.push(input, unshuffle_data(&g, c, s[1], s[2], *factor));
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let hw = geom.pixels();
                if bias.requires_grad() {
                    let gb = g.chunks_exact(hw).map(|plane| plane.iter().sum()).collect();
                    grads.push(bias, gb);
                }
                if geom.taps.is_empty() {
                    continue;
                }
                let rhs = cols.as_deref().unwrap_or(input.data());
                if kernel.requires_grad() {
                    let mut packed_grad = vec![0.0; geom.c_out * geom.rows()];
                    gemm(geom.c_out, hw, geom.rows(), &g, false, rhs, true, 0.0, &mut packed_grad);
                    grads.push(kernel, geom.unpack_kernel(&packed_grad));
                }
                if input.requires_grad() {
                    let packed = geom.pack_kernel(kernel.data());
                    let mut gcols = vec![0.0; geom.rows() * hw];
                    gemm(geom.rows(), geom.c_out, hw, &packed, true, &g, false, 0.0, &mut gcols);
                    let gi = if geom.is_pointwise() { gcols } else { geom.col2im(&gcols) };
                    grads.push(input, gi);
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Conventional defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(param_sizes: &[usize], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[Tensor], lr: f64) -> Self {
        let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
        Self::new(&sizes, lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter buffer from its gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!(
                    "state tracks {} parameters, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: vec![self.m[i].len()],
                    right: vec![p.len(), g.len()],
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Updates trainable leaves in place from their accumulated gradients
    /// (missing gradients count as zero), then clears the gradients.
    pub fn step_tensors(&mut self, params: &mut [Tensor]) -> Result<()> {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        params.iter().for_each(Tensor::zero_grad);
        let mut slices: Vec<&mut [f64]> = params.iter_mut().map(Tensor::data_mut).collect();
        self.step(&mut slices, &grad_refs)?;
        Ok(())
    }
}
