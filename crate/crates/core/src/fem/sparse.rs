/// Compressed sparse row matrix with a fixed sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Matrix, right-hand side and, for pure Neumann problems, the weights of the
/// mean-value constraint row.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub mean_weights: Option<Vec<f64>>,
}

impl CsrMatrix {
    /// Pattern from node adjacency, with `block` dofs per node (interleaved).
    pub fn from_node_pattern(neighbors: &[Vec<usize>], block: usize) -> Self {
        let n_nodes = neighbors.len();
        let n = n_nodes * block;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (node, nb) in neighbors.iter().enumerate() {
            let mut cols_nodes: Vec<usize> = nb.iter().copied().chain(std::iter::once(node)).collect();
            cols_nodes.sort_unstable();
            for _ in 0..block {
                for &c in &cols_nodes {
                    for b in 0..block {
                        col_idx.push(c * block + b);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            assert_eq!(row.len(), n);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Adds `v` at `(i, j)`; the entry must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Principal submatrix on the (sorted) index set `keep`.
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            local[i] = k;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &i in keep {
            for (j, v) in self.row(i) {
                if local[j] != usize::MAX {
                    col_idx.push(local[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Symmetric elimination of prescribed dofs: known values move to the
    /// right-hand side, rows and columns are zeroed, and the diagonal set to 1.
    pub fn apply_dirichlet(&mut self, rhs: &mut [f64], prescribed: &[(usize, f64)]) {
        let mut value = vec![None; self.n];
        for &(d, g) in prescribed {
            value[d] = Some(g);
        }
        for i in 0..self.n {
            let fixed_row = value[i].is_some();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if fixed_row {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                } else if let Some(g) = value[j] {
                    rhs[i] -= self.values[k] * g;
                    self.values[k] = 0.0;
                }
            }
            if let Some(g) = value[i] {
                rhs[i] = g;
            }
        }
    }
}
