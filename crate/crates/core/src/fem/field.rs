/// Piecewise-linear finite-element function stored by nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField<T> {
    values: Vec<T>,
}

pub type ScalarField = NodalField<f64>;
pub type VectorField = NodalField<[f64; 2]>;

impl<T> NodalField<T> {
    pub fn new(values: Vec<T>) -> Self {
        NodalField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

impl NodalField<f64> {
    pub fn zeros(n: usize) -> Self {
        NodalField::new(vec![0.0; n])
    }
}

impl NodalField<[f64; 2]> {
    pub fn zeros(n: usize) -> Self {
        NodalField::new(vec![[0.0, 0.0]; n])
    }

    /// Build from dof vector ordered `[x0, y0, x1, y1, ...]`.
    pub fn from_interleaved(dofs: &[f64]) -> Self {
        NodalField::new(dofs.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v[0], v[1]]).collect()
    }

    /// Euclidean inner product of the nodal coefficient vectors.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        NodalField::new(self.values.iter().map(|v| [c * v[0], c * v[1]]).collect())
    }
}
