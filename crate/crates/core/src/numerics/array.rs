use crate::error::{Error, Result};

/// Dense row-major `f64` array with a shape of strictly positive dimensions.
///
/// Scalars are represented with shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Dimension("shape must have at least one axis".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} has a zero-sized axis"
        )));
    }
    Ok(shape.iter().product())
}

impl Array {
    /// Builds an array, rejecting shape/length disagreement and non-finite data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "entry {i} is {} in array of shape {shape:?}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for hot paths whose shape is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = validate_shape(shape).expect("full: invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Size of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per leading-axis entry.
    pub fn row_width(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on array of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = validate_shape(&shape)?;
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Array) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Plain (off-tape) matrix product.
pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; m * n];
    matmul_kernel(a.data(), b.data(), &mut out, m, k, n);
    Ok(Array::from_parts(vec![m, n], out))
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::Dimension(format!(
            "matmul of {a:?} and {b:?}: inner dimensions disagree"
        )));
    }
    Ok((a[0], a[1], b[1]))
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu2 = u.iter().map(|x| x * x).sum::<f64>();
    let nv2 = v.iter().map(|x| x * x).sum::<f64>();
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity with a zero-norm vector".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // sqrt of the product keeps cos(u, u) exactly 1
    Ok((dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(matches!(
            Array::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Array::new(vec![0, 2], vec![]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Array::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn matmul_examples() {
        let m = Array::matrix(2, 2, vec![1.5, -2.0, 0.25, 4.0]).unwrap();
        assert_eq!(matmul(&Array::identity(2), &m).unwrap(), m);

        let a = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Array::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);

        let z = Array::zeros(&[3, 4]);
        let any = Array::matrix(4, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(matmul(&z, &any).unwrap(), Array::zeros(&[3, 2]));

        let err = matmul(&a, &z).unwrap_err();
        assert!(err.to_string().contains("[2, 2]") && err.to_string().contains("[3, 4]"));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.70710678).abs() < 1e-8);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }
}
