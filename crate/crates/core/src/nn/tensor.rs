use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point scalar the network can run in (`f32` for training, `f64`
/// for gradient checks).
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    /// Width in bytes on disk.
    const BYTES: u8;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Raw `C = alpha·A·B + beta·C` with element strides.
    ///
    /// # Safety
    /// Every strided index of `a` (m×k), `b` (k×n) and `c` (m×n) must be in
    /// bounds of its allocation.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_strides: (isize, isize),
    );
}

impl Real for f32 {
    const BYTES: u8 = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_strides: (isize, isize),
    ) {
        // SAFETY: forwarded from the caller's contract.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a,
                a_strides.0,
                a_strides.1,
                b,
                b_strides.0,
                b_strides.1,
                beta,
                c,
                c_strides.0,
                c_strides.1,
            )
        }
    }
}

impl Real for f64 {
    const BYTES: u8 = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        beta: Self,
        c: *mut Self,
        c_strides: (isize, isize),
    ) {
        // SAFETY: forwarded from the caller's contract.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a,
                a_strides.0,
                a_strides.1,
                b,
                b_strides.0,
                b_strides.1,
                beta,
                c,
                c_strides.0,
                c_strides.1,
            )
        }
    }
}

/// Dense `(batch, channels, height, width)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape {
                layer: "tensor".into(),
                detail: format!("{} values for shape {shape:?} ({expected})", data.len()),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn reshaped(self, shape: [usize; 4]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor4 {
            shape,
            data: self.data,
        }
    }
}

/// Read-only strided matrix: element `(r, c)` lives at `r * rs + c * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    /// Row-major matrix with `cols` columns.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        View {
            data,
            rs: 1,
            cs: cols,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `c = a·b + beta·c` with `c` row-major `m×n`. For a fixed `k` every output
/// element is accumulated the same way whatever `m` and `n` are, so
/// computing a subset of columns gives bit-identical values.
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: View<T>,
    b: View<T>,
    beta: T,
    c: &mut [T],
) {
    assert!(
        a.fits(m, k) && b.fits(k, n) && c.len() >= m * n,
        "gemm operand out of bounds"
    );
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    // SAFETY: the bounds of all three operands were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            (a.rs as isize, a.cs as isize),
            b.data.as_ptr(),
            (b.rs as isize, b.cs as isize),
            beta,
            c.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}

/// `dst += alpha * src`.
#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * *s;
    }
}
