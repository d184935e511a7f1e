//! Dense tensors, eager shape/elementwise operations, and the reverse-mode
//! differentiation graph built on top of them.

mod autograd;
mod gradcheck;
pub mod io;
mod ops;

use std::fmt::{Debug, Display};
use std::sync::Arc;

use num_traits::Float;
use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::rng;

pub use autograd::{BackwardCtx, Function, Graph, Var};
pub use gradcheck::{gradcheck, gradcheck_vars};

/// Element type tag, matching the on-disk dtype byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element types a [`Tensor`] can hold.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    const DTYPE: DType;

    /// Converts an `f64` literal or accumulator into this type.
    fn of(v: f64) -> Self;
    fn widen(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
    /// Largest representable value strictly below `self`.
    fn prev(self) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn prev(self) -> Self {
        self.next_down()
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn prev(self) -> Self {
        self.next_down()
    }
}

/// Immutable dense row-major tensor. Cloning shares the buffer.
///
/// Gradients are not stored on the tensor itself; they live in the
/// [`Graph`] that recorded the computation.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor<{:?}>{:?}", T::DTYPE, self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("extents must be positive, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let t = Tensor {
            shape,
            data: Arc::new(data),
        };
        debug_assert!(t.all_finite(), "non-finite value produced: {t:?}");
        t
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    /// Samples i.i.d. values in `[lo, hi)` from the ChaCha8 stream keyed by `seed`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(lo < hi) {
            return arg_err(format!("uniform bounds need lo < hi, got [{lo}, {hi})"));
        }
        if shape.contains(&0) {
            return shape_err(format!("extents must be positive, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        let mut r = rng::stream(seed);
        let lo_t = T::of(lo);
        let hi_t = T::of(hi);
        let data = (0..n)
            .map(|_| {
                let u: f64 = r.gen();
                let v = T::of(lo + (hi - lo) * u);
                // rounding to T can land on hi itself
                if v >= hi_t {
                    hi_t.prev()
                } else if v < lo_t {
                    lo_t
                } else {
                    v
                }
            })
            .collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return arg_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => shape_err(format!("expected NCHW tensor, got {:?}", self.shape)),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::of(v.widen())).collect()),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub(crate) fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    /// Sum accumulated in `f64` in index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.widen()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.widen() - b.widen()).abs())
            .fold(0.0, f64::max))
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.widen() * b.widen())
            .sum())
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return shape_err(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        Ok(())
    }

    /// Cyclic shift: output index `i` along `axis` takes input index `(i - shift) mod extent`.
    pub fn roll(&self, shift: i64, axis: usize) -> Result<Self> {
        self.check_axis(axis)?;
        let (outer, extent, inner) = axis_split(&self.shape, axis);
        let s = shift.rem_euclid(extent as i64) as usize;
        if s == 0 {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(self.numel());
        for o in 0..outer {
            let base = o * extent * inner;
            let block = &self.data[base..base + extent * inner];
            // output rows [0, s) come from input rows [extent - s, extent)
            out.extend_from_slice(&block[(extent - s) * inner..]);
            out.extend_from_slice(&block[..(extent - s) * inner]);
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(out),
        })
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = match parts.first() {
            Some(p) => *p,
            None => return arg_err("concat of an empty list"),
        };
        first.check_axis(axis)?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(first.shape.iter())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return shape_err(format!(
                    "concat along axis {axis}: {:?} incompatible with {:?}",
                    p.shape, first.shape
                ));
            }
        }
        let (outer, _, inner) = axis_split(&first.shape, axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let run = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * run..(o + 1) * run]);
            }
        }
        Ok(Tensor {
            shape,
            data: Arc::new(out),
        })
    }

    /// Indices `[lo, hi)` along `axis`.
    pub fn narrow(&self, axis: usize, lo: usize, hi: usize) -> Result<Self> {
        self.check_axis(axis)?;
        let (outer, extent, inner) = axis_split(&self.shape, axis);
        if !(lo < hi && hi <= extent) {
            return shape_err(format!(
                "range [{lo}, {hi}) invalid for extent {extent} on axis {axis}"
            ));
        }
        let mut shape = self.shape.clone();
        shape[axis] = hi - lo;
        let mut out = Vec::with_capacity(outer * (hi - lo) * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            out.extend_from_slice(&self.data[base + lo * inner..base + hi * inner]);
        }
        Ok(Tensor {
            shape,
            data: Arc::new(out),
        })
    }

    /// Copy of `self` with indices `[lo, lo + extent(v))` along `axis` replaced by `v`.
    pub fn assign(&self, axis: usize, lo: usize, v: &Self) -> Result<Self> {
        self.check_axis(axis)?;
        let (outer, extent, inner) = axis_split(&self.shape, axis);
        let width = v.shape.get(axis).copied().unwrap_or(0);
        let ok = v.rank() == self.rank()
            && v.shape
                .iter()
                .zip(self.shape.iter())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b)
            && lo + width <= extent;
        if !ok {
            return shape_err(format!(
                "cannot assign {:?} at {lo} along axis {axis} of {:?}",
                v.shape, self.shape
            ));
        }
        let mut out = self.to_vec();
        for o in 0..outer {
            let dst = o * extent * inner + lo * inner;
            let src = o * width * inner;
            out[dst..dst + width * inner].copy_from_slice(&v.data[src..src + width * inner]);
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(out),
        })
    }

    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Self> {
        if self.rank() < 2 {
            return shape_err("slice_channels needs rank >= 2");
        }
        self.narrow(1, lo, hi)
    }

    pub fn assign_channels(&self, lo: usize, hi: usize, v: &Self) -> Result<Self> {
        if self.rank() < 2 || v.rank() < 2 || v.shape[1] != hi.saturating_sub(lo) || lo >= hi {
            return shape_err(format!(
                "assign_channels [{lo}, {hi}) with value {:?}",
                v.shape
            ));
        }
        self.assign(1, lo, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn roll_1d_by_one() {
        let x = t(&[4], &[1., 2., 3., 4.]);
        assert_eq!(x.roll(1, 0).unwrap().data(), &[4., 1., 2., 3.]);
        assert_eq!(x.roll(-1, 0).unwrap().data(), &[2., 3., 4., 1.]);
        assert_eq!(x.roll(0, 0).unwrap(), x);
        assert!(x.roll(1, 1).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3, 8, 8]);
        let b = Tensor::<f32>::zeros(&[2, 5, 8, 8]);
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap().shape(), &[2, 8, 8, 8]);
        assert_eq!(Tensor::concat(&[&a], 1).unwrap(), a);
        let c = Tensor::<f32>::zeros(&[2, 5, 8, 7]);
        assert!(matches!(
            Tensor::concat(&[&a, &c], 1),
            Err(crate::Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::<f32>::concat(&[], 1),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn slice_and_assign() {
        let x = Tensor::<f64>::uniform(&[1, 6, 4, 4], -1.0, 1.0, 3).unwrap();
        let s = x.slice_channels(0, 3).unwrap();
        assert_eq!(s.shape(), &[1, 3, 4, 4]);
        let v = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, 4).unwrap();
        let y = x.assign_channels(0, 3, &v).unwrap();
        assert_eq!(y.slice_channels(0, 3).unwrap(), v);
        assert_eq!(y.slice_channels(3, 6).unwrap(), x.slice_channels(3, 6).unwrap());
        assert!(x.slice_channels(2, 2).is_err());
        assert!(x.slice_channels(0, 7).is_err());
        assert!(x.assign_channels(1, 4, &Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }

    #[test]
    fn uniform_contract() {
        assert!(Tensor::<f32>::uniform(&[3], 1.0, 1.0, 0).is_err());
        let a = Tensor::<f32>::uniform(&[100_000], -1.0, 1.0, 42).unwrap();
        let b = Tensor::<f32>::uniform(&[100_000], -1.0, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let lo = a.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = a.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(lo >= -1.0 && hi < 1.0);
        assert!(a.mean().abs() < 0.02);
        assert!(Tensor::<f64>::zeros(&[2, 3]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_never_returns_upper_bound_in_f32() {
        // A range whose width is tiny relative to its magnitude forces rounding onto hi.
        let a = Tensor::<f32>::uniform(&[10_000], 1.0, 1.0 + 1e-7, 5).unwrap();
        let hi = 1.0f32 + 1e-7;
        assert!(a.data().iter().all(|&v| v < hi && v >= 1.0));
    }
}
