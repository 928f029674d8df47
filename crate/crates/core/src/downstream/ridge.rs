//! Closed-form ridge regression with an unpenalized intercept, and the
//! gene-expression evaluation built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{make_patient_folds, to_matrix, DownstreamError};

/// Pivot floor relative to the largest diagonal of the normal matrix; below
/// it a `lambda = 0` system counts as singular.
const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// `[d][G]` coefficients.
    pub coef: Vec<Vec<f64>>,
    /// Per-target intercept.
    pub intercept: Vec<f64>,
    pub lambda: f64,
}

fn dmatrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, DownstreamError> {
    let t = to_matrix(rows)?;
    let (n, d) = t.dims2();
    Ok(DMatrix::from_row_slice(n, d, t.data()))
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

fn centered(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, mu) in out.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-mu);
    }
    out
}

/// Solves `(Xc^T Xc + lambda I) B = Xc^T Yc` on column-centred data; the
/// intercept is `mean(Y) - mean(X) B`.
pub fn ridge_fit(features: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<RidgeModel, DownstreamError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DownstreamError::BadLambda(lambda));
    }
    if features.len() != targets.len() {
        return Err(DownstreamError::RowLabelMismatch { rows: features.len(), labels: targets.len() });
    }
    let x = dmatrix(features)?;
    let y = dmatrix(targets)?;
    let (mx, my) = (column_means(&x), column_means(&y));
    let (xc, yc) = (centered(&x, &mx), centered(&y, &my));
    let d = x.ncols();
    let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * lambda;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = gram.cholesky().ok_or(DownstreamError::Singular)?;
    let l = chol.l_dirty();
    if lambda == 0.0 && (0..d).any(|i| l[(i, i)] * l[(i, i)] <= PIVOT_RTOL * scale) {
        return Err(DownstreamError::Singular);
    }
    let beta = chol.solve(&(xc.transpose() * &yc));
    let intercept = &my - beta.transpose() * &mx;
    Ok(RidgeModel {
        coef: beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
        intercept: intercept.iter().copied().collect(),
        lambda,
    })
}

impl RidgeModel {
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DownstreamError> {
        let d = self.coef.len();
        features
            .iter()
            .map(|x| {
                if x.len() != d {
                    return Err(DownstreamError::DimensionMismatch { expected: d, got: x.len() });
                }
                Ok(self
                    .intercept
                    .iter()
                    .enumerate()
                    .map(|(g, b)| b + x.iter().zip(&self.coef).map(|(xi, row)| xi * row[g]).sum::<f64>())
                    .collect())
            })
            .collect()
    }
}

/// Indices of the `top` genes with the largest population variance of
/// `ln(1 + x)`; ties go to the lower index. Result is ascending.
pub fn select_top_variance_genes(expression: &[Vec<f64>], top: usize) -> Result<Vec<usize>, DownstreamError> {
    let m = dmatrix(expression)?.map(f64::ln_1p);
    let var: Vec<f64> = m.column_iter().map(|c| c.variance()).collect();
    let mut idx: Vec<usize> = (0..var.len()).collect();
    idx.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    idx.truncate(top);
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneEval {
    pub genes: Vec<usize>,
    /// Out-of-fold predictions of `ln(1 + x)` for the selected genes.
    pub predictions: Vec<Vec<f64>>,
    /// Observed `ln(1 + x)` for the selected genes.
    pub targets: Vec<Vec<f64>>,
}

/// Leave-one-patient-out ridge on the `top` highest-variance genes.
pub fn gene_pipeline(
    features: &[Vec<f64>],
    expression: &[Vec<f64>],
    patients: &[String],
    top: usize,
    lambda: f64,
) -> Result<GeneEval, DownstreamError> {
    if patients.len() != features.len() {
        return Err(DownstreamError::RowLabelMismatch { rows: features.len(), labels: patients.len() });
    }
    let genes = select_top_variance_genes(expression, top)?;
    let targets: Vec<Vec<f64>> = expression.iter().map(|r| genes.iter().map(|&g| r[g].ln_1p()).collect()).collect();
    let plan = make_patient_folds(patients)?;
    let mut predictions = vec![Vec::new(); features.len()];
    for k in 0..plan.folds.len() {
        let (train, test) = plan.split(k, patients);
        let pick = |rows: &[Vec<f64>], idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
        let model = ridge_fit(&pick(features, &train), &pick(&targets, &train), lambda)?;
        for (&i, p) in test.iter().zip(model.predict(&pick(features, &test))?) {
            predictions[i] = p;
        }
    }
    Ok(GeneEval { genes, predictions, targets })
}
