use std::fmt;

/// Dense row-major `n × d` matrix of finite reals with optional column names.
#[derive(Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("matrix has no rows")]
    Empty,
    #[error("matrix has no columns")]
    NoColumns,
    #[error("expected {expected} values for a {n}x{d} matrix, got {got}")]
    Shape {
        n: usize,
        d: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{got} column names given for {d} columns")]
    ColumnNames { d: usize, got: usize },
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data. Columns are named `x0`, `x1`, ...
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        let columns = (0..d).map(|j| format!("x{j}")).collect();
        Self::with_columns(n, d, data, columns)
    }

    pub fn with_columns(
        n: usize,
        d: usize,
        data: Vec<f64>,
        columns: Vec<String>,
    ) -> Result<Self, MatrixError> {
        if n == 0 {
            return Err(MatrixError::Empty);
        }
        if d == 0 {
            return Err(MatrixError::NoColumns);
        }
        if data.len() != n * d {
            return Err(MatrixError::Shape {
                n,
                d,
                expected: n * d,
                got: data.len(),
            });
        }
        if columns.len() != d {
            return Err(MatrixError::ColumnNames {
                d,
                got: columns.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self {
            n,
            d,
            data,
            columns,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MatrixError> {
        let n = rows.len();
        if n == 0 {
            return Err(MatrixError::Empty);
        }
        let d = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(MatrixError::Shape {
                    n,
                    d,
                    expected: n * d,
                    got: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, d, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.d).copied()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, MatrixError> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::with_columns(indices.len(), self.d, data, self.columns.clone())
    }
}

impl fmt::Debug for FeatureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMatrix")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("columns", &self.columns)
            .finish_non_exhaustive()
    }
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}
