use nalgebra::{DMatrix, SymmetricEigen};

use super::HarnessError;

/// Principal-component projection of row-major `(n, d)` data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedding {
    pub dims: usize,
    /// `(n, dims)` projections of the centered rows.
    pub coords: Vec<f64>,
    /// `(dims, d)` unit principal axes.
    pub components: Vec<f64>,
    pub mean: Vec<f64>,
    /// Share of the total variance captured by each axis.
    pub explained_ratio: Vec<f64>,
}

/// Projects mean-centered rows onto the top `dims` right singular vectors.
///
/// The eigenproblem is solved on whichever of the `n x n` Gram matrix and
/// the `d x d` scatter matrix is smaller. Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca_embed(data: &[f64], n: usize, d: usize, dims: usize) -> Result<PcaEmbedding, HarnessError> {
    if n < 3 {
        return Err(HarnessError::DegenerateInput(format!("need at least 3 rows, got {n}")));
    }
    if data.len() != n * d || dims == 0 || dims > d.min(n) {
        return Err(HarnessError::DegenerateInput(format!(
            "{} values for {n} x {d} data with {dims} dims",
            data.len()
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| data[i * d + j] - mean[j]);
    let total = x.norm_squared();
    if total == 0.0 || !total.is_finite() {
        return Err(HarnessError::DegenerateInput("all rows identical".into()));
    }

    // eigenpairs of X^T X, as (eigenvalue, unit axis in R^d)
    let mut pairs: Vec<(f64, Vec<f64>)> = if n < d {
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|k| {
                let axis = x.transpose() * eig.eigenvectors.column(k);
                let norm = axis.norm();
                let axis = if norm > 0.0 { axis / norm } else { axis };
                (eig.eigenvalues[k], axis.iter().copied().collect())
            })
            .collect()
    } else {
        let scatter = x.transpose() * &x;
        let eig = SymmetricEigen::new(scatter);
        (0..d)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect()))
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    if pairs[0].0 <= total * 1e-15 {
        return Err(HarnessError::DegenerateInput("rank 0 after centering".into()));
    }

    let mut components = Vec::with_capacity(dims * d);
    let mut explained_ratio = Vec::with_capacity(dims);
    for (value, mut axis) in pairs.into_iter().take(dims) {
        let lead = (0..d).fold(0, |b, j| if axis[j].abs() > axis[b].abs() { j } else { b });
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        explained_ratio.push(value.max(0.0) / total);
        components.extend(axis);
    }
    let comp = DMatrix::from_row_slice(dims, d, &components);
    let proj = &x * comp.transpose();
    let coords = (0..n)
        .flat_map(|i| (0..dims).map(move |k| (i, k)))
        .map(|(i, k)| proj[(i, k)])
        .collect();
    Ok(PcaEmbedding {
        dims,
        coords,
        components,
        mean,
        explained_ratio,
    })
}

impl PcaEmbedding {
    /// Maps projections back to the input space.
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.mean.len();
        let n = self.coords.len() / self.dims;
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                let v: f64 = (0..self.dims)
                    .map(|k| self.coords[i * self.dims + k] * self.components[k * d + j])
                    .sum();
                out.push(self.mean[j] + v);
            }
        }
        out
    }
}
