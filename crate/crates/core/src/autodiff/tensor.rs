use crate::error::{shape_err, Error, Result};

/// Dense row-major array of `f64` values.
///
/// Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix. Construction
/// rejects mismatched lengths and non-finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {}",
                data[pos], pos
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    /// One-hot rows for `labels` over `classes` columns.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (row, &c) in labels.iter().enumerate() {
            if c >= classes {
                return shape_err(format!("label {c} out of range for {classes} classes"));
            }
            data[row * classes + c] = 1.0;
        }
        Ok(Self::from_parts(vec![labels.len(), classes], data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => shape_err(format!("expected a matrix, got shape {s:?}")),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Copies the listed rows of a matrix into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let (n, d) = self.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return shape_err(format!("row {r} out of range for {n} rows"));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self::from_parts(vec![rows.len(), d], data))
    }

    /// Row-wise argmax; ties go to the lowest column index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (n, c) = self.dims2()?;
        Ok((0..n)
            .map(|i| {
                let row = &self.data[i * c..(i + 1) * c];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Tensor::vector(vec![f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::matrix(2, 3, vec![0.2, 0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(t.argmax_rows().unwrap(), vec![1, 0]);
    }

    #[test]
    fn one_hot_rows() {
        let t = Tensor::one_hot(&[2, 0], 3).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(Tensor::one_hot(&[3], 3).is_err());
    }
}
