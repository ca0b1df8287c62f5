//! Dense rank-4 tensors with an eagerly recorded operation graph.
//!
//! A [`Tensor`] is an immutable `(N, C, H, W)` buffer of `f64`. Tensors that
//! were registered with a [`Graph`] (directly via [`Graph::leaf`], or as the
//! output of an op with a tracked input) carry a variable id; calling
//! [`Graph::backward`] on a scalar output walks the recorded ops in reverse and
//! returns the gradient of every leaf.

mod conv;
mod elementwise;
mod graph;
mod linalg;
mod resample;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use conv::Conv2dOptions;
pub use graph::{Gradients, Graph, VarId};

const AXIS_NAMES: [&str; 4] = ["batch", "channel", "height", "width"];

/// Shape of a rank-4 tensor, `(batch, channel, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Number of elements in one `(H, W)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    /// Errors with the first mismatching axis if `self != other`.
    pub fn expect_eq(&self, other: &Shape) -> Result<()> {
        for axis in 0..4 {
            if self.0[axis] != other.0[axis] {
                return Err(Error::dim(
                    AXIS_NAMES[axis],
                    format!("expected shape {self}, got {other}"),
                ));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for axis in 0..4 {
            if self.0[axis] == 0 {
                return Err(Error::dim(AXIS_NAMES[axis], format!("zero-sized axis in {self}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Immutable rank-4 tensor of 64-bit floats.
///
/// Cloning is cheap: the buffer is shared. A tensor without a variable id is
/// a constant and may be shared across threads.
#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    var: Option<VarId>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::dim(
                "data",
                format!("buffer of length {} does not fit shape {shape}", data.len()),
            ));
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
            var: None,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self::from_parts(shape, vec![value; shape.numel()])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Shape::SCALAR, vec![value])
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` in row-major order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape.0;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn var(&self) -> Option<VarId> {
        self.var
    }

    pub fn requires_grad(&self) -> bool {
        self.var.is_some()
    }

    /// The same values without any graph attachment.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            data: Arc::clone(&self.data),
            var: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn with_var(mut self, var: VarId) -> Tensor {
        self.var = Some(var);
        self
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("var", &self.var)
            .finish_non_exhaustive()
    }
}
