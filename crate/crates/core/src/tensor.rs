//! Dense row-major `f64` tensors and the convolution geometry they obey.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense n-dimensional array stored row-major in double precision.
///
/// `product(shape) == data.len()` and every extent is at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let volume = check_shape(&shape)?;
        if volume != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {volume} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let volume = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; volume],
        })
    }

    /// Build a tensor whose element at each flat index is `f(index)`.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Result<Self> {
        let volume = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..volume).map(f).collect(),
        })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element count, i.e. width × height × depth for an image volume.
    pub fn volume(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let volume = check_shape(&shape)?;
        if volume != self.data.len() {
            return Err(Error::DimensionMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Row-major flat offset of a multi-index.
    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::DimensionMismatch {
                op: "index",
                left: self.shape.clone(),
                right: index.to_vec(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let at = self.flat_index(index)?;
        self.data[at] = value;
        Ok(())
    }

    pub fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) -> Result<()> {
        self.same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, n, k, &self.data, &rhs.data, &mut out);
        Tensor::new(vec![m, n], out)
    }

    /// Plain-text dump: a `shape: d0 d1 ...` header line, then the values
    /// whitespace-separated in row-major order.
    pub fn to_dump(&self) -> String {
        let mut out = String::from("shape:");
        for d in &self.shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        let mut first = true;
        for v in &self.data {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
        out
    }

    pub fn from_dump(text: &str) -> Result<Tensor> {
        let mut lines = text.splitn(2, '\n');
        let header = lines.next().unwrap_or_default().trim();
        let dims = header
            .strip_prefix("shape:")
            .ok_or_else(|| Error::Parse("missing `shape:` header".into()))?;
        let shape = dims
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|e| Error::Parse(format!("extent `{d}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let data = lines
            .next()
            .unwrap_or_default()
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("value `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
}

/// Spatial extent of a single-channel plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape2D {
    pub height: usize,
    pub width: usize,
}

impl Shape2D {
    pub const fn new(height: usize, width: usize) -> Self {
        Shape2D { height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

fn output_extent(dim: usize, extent: usize, padding: usize, stride: usize) -> Option<usize> {
    let padded = dim + 2 * padding;
    if extent == 0 || stride == 0 || extent > padded {
        return None;
    }
    // Remainder rows/columns that a stride cannot reach are dropped.
    Some((padded - extent) / stride + 1)
}

/// Output plane of a sliding window of side `extent` moving by `stride` over
/// `input` zero-padded by `padding` on every side: `floor((d - f + 2p) / s) + 1`.
pub fn conv_output_shape(input: Shape2D, extent: usize, padding: usize, stride: usize) -> Result<Shape2D> {
    if input.height == 0 || input.width == 0 {
        return Err(Error::Geometry(format!("empty input plane {input}")));
    }
    if extent == 0 || stride == 0 {
        return Err(Error::Geometry(format!(
            "kernel extent {extent} and stride {stride} must be at least 1"
        )));
    }
    match (
        output_extent(input.height, extent, padding, stride),
        output_extent(input.width, extent, padding, stride),
    ) {
        (Some(height), Some(width)) => Ok(Shape2D { height, width }),
        _ => Err(Error::Geometry(format!(
            "kernel {extent}x{extent} does not fit input {input} with padding {padding}"
        ))),
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (a[..n].chunks_exact(8), b[..n].chunks_exact(8));
    let mut tail = 0.0;
    for (x, y) in a.remainder().iter().zip(b.remainder()) {
        tail += x * y;
    }
    let mut acc = [0.0; 8];
    for (x, y) in a.zip(b) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]).unwrap() * b.get(&[p, j]).unwrap();
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::zeros(&[2, 0]).is_err());
        assert!(Tensor::zeros(&[]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64).unwrap();
        assert_eq!(t.flat_index(&[1, 2, 3]).unwrap(), 23);
        assert_eq!(t.get(&[0, 1, 0]).unwrap(), 4.0);
        assert!(t.get(&[2, 0, 0]).is_err());
        assert_eq!(t.volume(), 24);
    }

    #[test]
    fn conv_output_shape_examples() {
        let s = |h, w| Shape2D::new(h, w);
        assert_eq!(conv_output_shape(s(50, 50), 3, 0, 1).unwrap(), s(48, 48));
        assert_eq!(conv_output_shape(s(5, 5), 5, 0, 1).unwrap(), s(1, 1));
        assert_eq!(conv_output_shape(s(50, 50), 5, 0, 2).unwrap(), s(23, 23));
        assert_eq!(conv_output_shape(s(23, 23), 5, 0, 2).unwrap(), s(10, 10));
        assert!(conv_output_shape(s(4, 4), 5, 0, 1).is_err());
        assert_eq!(conv_output_shape(s(4, 4), 5, 1, 1).unwrap(), s(2, 2));
        assert!(conv_output_shape(s(4, 4), 3, 0, 0).is_err());
    }

    #[test]
    fn matmul_examples() {
        let m = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.5 - 1.0).unwrap();
        assert_eq!(Tensor::identity(3).unwrap().matmul(&m).unwrap(), m);

        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);

        let err = a.matmul(&m).unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[3, 4]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::from_fn(&[4, 5], |_| rng.random_range(-1.0..1.0)).unwrap();
        let b = Tensor::from_fn(&[5, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        let got = a.matmul(&b).unwrap();
        for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn transposed_kernels_agree_with_nn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n, k) = (3, 7, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut reference = vec![0.0; m * n];
        gemm_nn(m, n, k, &a, &b, &mut reference);

        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut via_nt = vec![0.0; m * n];
        gemm_nt(m, n, k, &a, &bt, &mut via_nt);

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut via_tn = vec![0.0; m * n];
        gemm_tn(m, n, k, &at, &b, &mut via_tn);

        for ((r, x), y) in reference.iter().zip(&via_nt).zip(&via_tn) {
            assert!((r - x).abs() < 1e-12 && (r - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_round_trip() {
        let t = Tensor::new(vec![2, 2], vec![0.1, -2.5, 1e-300, 3.0]).unwrap();
        let text = t.to_dump();
        assert!(text.starts_with("shape: 2 2\n"));
        assert_eq!(Tensor::from_dump(&text).unwrap(), t);
        assert!(Tensor::from_dump("dims: 2\n1 2").is_err());
        assert!(Tensor::from_dump("shape: 3\n1 2").is_err());
    }

    proptest! {
        #[test]
        fn reshape_preserves_data(dims in proptest::collection::vec(1usize..5, 1..4)) {
            let t = Tensor::from_fn(&dims, |i| i as f64).unwrap();
            let flat = t.clone().reshape(vec![t.len()]).unwrap();
            prop_assert_eq!(flat.data(), t.data());
            prop_assert_eq!(flat.volume(), t.volume());
        }

        #[test]
        fn conv_shape_monotone(dim in 1usize..40, f in 1usize..8, p in 0usize..4, s in 1usize..4) {
            let input = Shape2D::new(dim, dim);
            if let Ok(out) = conv_output_shape(input, f, p, s) {
                if let Ok(bigger_f) = conv_output_shape(input, f + 1, p, s) {
                    prop_assert!(bigger_f.height <= out.height);
                }
                let bigger_s = conv_output_shape(input, f, p, s + 1).unwrap();
                prop_assert!(bigger_s.height <= out.height);
                let bigger_p = conv_output_shape(input, f, p + 1, s).unwrap();
                prop_assert!(bigger_p.height >= out.height);
                if s == 1 && p == 0 {
                    prop_assert_eq!(out.height, dim - f + 1);
                }
            }
        }
    }
}
