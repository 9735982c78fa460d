use super::{NumoptError, Result};

/// Symmetric banded system `A·x = rhs`.
///
/// `diagonals[k][i]` holds `A[i][i + k]` for `k = 0..=bandwidth`, so the
/// main diagonal has `n` entries and the k-th super-diagonal `n - k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSystem {
    pub bandwidth: usize,
    pub diagonals: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl BandedSystem {
    pub fn new(bandwidth: usize, n: usize) -> Self {
        let diagonals = (0..=bandwidth).map(|k| vec![0.0; n.saturating_sub(k)]).collect();
        Self {
            bandwidth,
            diagonals,
            rhs: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Entry `A[i][j]`, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth {
            0.0
        } else {
            self.diagonals[k][lo]
        }
    }

    /// Adds `value` to `A[i][j]` (and its mirror).
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.diagonals[hi - lo][lo] += value;
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.diagonals.len() != self.bandwidth + 1 {
            return Err(NumoptError::DimensionMismatch(format!(
                "expected {} diagonals, got {}",
                self.bandwidth + 1,
                self.diagonals.len()
            )));
        }
        for (k, d) in self.diagonals.iter().enumerate() {
            if d.len() != n.saturating_sub(k) {
                return Err(NumoptError::DimensionMismatch(format!(
                    "diagonal {k} has {} entries, expected {}",
                    d.len(),
                    n.saturating_sub(k)
                )));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(NumoptError::NonFinite("band matrix"));
            }
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(NumoptError::NonFinite("right-hand side"));
        }
        Ok(())
    }
}

/// Cholesky factor `L` stored by sub-diagonal: `low[k][i] = L[i + k][i]`.
struct BandCholesky {
    bandwidth: usize,
    low: Vec<Vec<f64>>,
}

impl BandCholesky {
    fn factor(sys: &BandedSystem) -> Result<Self> {
        let n = sys.dim();
        let m = sys.bandwidth;
        let mut low: Vec<Vec<f64>> = (0..=m).map(|k| vec![0.0; n.saturating_sub(k)]).collect();
        let scale = sys.diagonals[0].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let floor = scale * f64::EPSILON * n as f64;
        for j in 0..n {
            let mut d = sys.diagonals[0][j];
            for k in 1..=m.min(j) {
                let l = low[k][j - k];
                d -= l * l;
            }
            if !(d > floor) {
                return Err(NumoptError::NotPositiveDefinite { row: j, pivot: d });
            }
            let djj = d.sqrt();
            low[0][j] = djj;
            for i in (j + 1)..n.min(j + m + 1) {
                let mut s = sys.diagonals[i - j][j];
                // L[i][k]·L[j][k] for k within both bands
                let kmin = i.saturating_sub(m);
                for k in kmin..j {
                    s -= low[i - k][k] * low[j - k][k];
                }
                low[i - j][j] = s / djj;
            }
        }
        Ok(Self { bandwidth: m, low })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let m = self.bandwidth;
        let mut z = rhs.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in i.saturating_sub(m)..i {
                s -= self.low[i - k][k] * z[k];
            }
            z[i] = s / self.low[0][i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n.min(i + m + 1) {
                s -= self.low[k - i][i] * z[k];
            }
            z[i] = s / self.low[0][i];
        }
        z
    }
}

/// Solves a symmetric positive-definite banded system by band Cholesky.
pub fn solve_banded(sys: &BandedSystem) -> Result<Vec<f64>> {
    sys.validate()?;
    if sys.dim() == 0 {
        return Ok(Vec::new());
    }
    let chol = BandCholesky::factor(sys)?;
    Ok(chol.solve(&sys.rhs))
}

/// Factors once and solves for several right-hand sides.
pub(crate) fn solve_banded_many(sys: &BandedSystem, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    sys.validate()?;
    let chol = BandCholesky::factor(sys)?;
    Ok(rhs.iter().map(|r| chol.solve(r)).collect())
}
