use nalgebra::DMatrix;

/// Symmetric sparse matrix in CSR form, both triangles stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymMatrix {
    /// Sums duplicate entries. The caller supplies both `(i, j)` and `(j, i)`.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymMatrix { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `self + alpha * other`; both must share the dimension.
    pub fn add_scaled(&self, alpha: f64, other: &SparseSymMatrix) -> SparseSymMatrix {
        assert_eq!(self.n, other.n);
        let trip = self
            .triplets()
            .chain(other.triplets().map(|(i, j, v)| (i, j, alpha * v)))
            .collect();
        SparseSymMatrix::from_triplets(self.n, trip)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn max_asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// Column indices per row, used for bandwidth reduction.
    pub fn pattern(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|i| self.row(i).map(|(j, _)| j).collect()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }
}
