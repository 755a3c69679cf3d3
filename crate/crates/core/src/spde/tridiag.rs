/// LU factors of a tridiagonal matrix (Thomas algorithm, no pivoting).
///
/// Intended for diagonally dominant systems such as `I - dt * L` with `L` a
/// discrete diffusion operator.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[0]` and `upper[n - 1]` are ignored.
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag[i] - if i > 0 { lower[i] * prev } else { 0.0 };
            inv_pivot[i] = 1.0 / pivot;
            prev = if i + 1 < n { upper[i] * inv_pivot[i] } else { 0.0 };
            upper_scaled[i] = prev;
        }
        Self { lower: lower.to_vec(), inv_pivot, upper_scaled }
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        for i in 0..n {
            let carry = if i > 0 { self.lower[i] * rhs[i - 1] } else { 0.0 };
            rhs[i] = (rhs[i] - carry) * self.inv_pivot[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}
