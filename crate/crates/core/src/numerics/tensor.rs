use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

/// Dense row-major tensor of `f64` values.
///
/// Only rank-1 and rank-2 shapes are used by this crate; the shape is kept as
/// a vector so loss scalars (`[1]`) and matrices (`[n, m]`) share one type.
/// Tensors are value types: operations return fresh tensors and never alias.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("zero dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut RngStream) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.normal() * std).collect();
        Tensor { shape, data }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as a matrix; rank-1 tensors count as one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }
}

/// Standard matrix product; errors when inner dimensions disagree.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if k != kb {
        return Err(Error::dim(
            "matmul",
            format!("{:?} x {:?}: inner dimensions {k} and {kb} differ", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![0.0; m * n];
    // ikj order: stream over contiguous rows of b.
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Numerically stable softmax over a flat slice (max subtraction).
pub fn softmax_slice(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::dim("softmax", "empty input".to_string()));
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Softmax over the last axis of a rank-1 tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let out = softmax_slice(x.data())?;
    Tensor::new(x.shape().to_vec(), out)
}

/// Zero-mean unit-variance normalization over the last axis, then `gain * x̂ + bias`.
pub fn layernorm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::dim("layernorm", "zero-width input".to_string()));
    }
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::dim(
            "layernorm",
            format!("gain/bias width {}/{} != {}", gain.numel(), bias.numel(), d),
        ));
    }
    let mut out = Tensor::zeros(x.shape().to_vec());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for c in 0..d {
            let xhat = (row[c] - mean) * inv;
            out.data_mut()[r * d + c] = gain.data()[c] * xhat + bias.data()[c];
        }
    }
    Ok(out)
}

/// Σ(aᵢ−bᵢ)² — a summed (not averaged) squared L2 norm of the difference.
pub fn squared_l2(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "squared_l2",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn matmul_orthogonal_rows() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 5.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_hand_oracle() {
        // hand arithmetic: [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let s = softmax(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = softmax(&Tensor::new(vec![2], vec![2.0f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_equal_logits() {
        let s = softmax(&Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(softmax_slice(&[]).is_err());
    }

    #[test]
    fn layernorm_constant_input() {
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
        let b0 = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        let y = layernorm(&x, &g, &b0, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let b2 = Tensor::new(vec![1, 3], vec![2.0; 3]).unwrap();
        let y = layernorm(&x, &g, &b2, 1e-5).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn layernorm_unit_variance_input() {
        // mean 0, variance 1 exactly: output approaches input as eps -> 0
        let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![1.0; 2]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.0; 2]).unwrap();
        let y = layernorm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert!((y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn squared_l2_cases() {
        let a = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        assert_eq!(squared_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(squared_l2(&a, &b).unwrap(), 2.0);
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let z = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(squared_l2(&x, &z).unwrap(), 9.0);
    }
}
