use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::objectives::KernelSpec;
use crate::rng::Rng;

/// Relative eigenvalue floor below which a fitted covariance counts as
/// singular.
const SINGULAR_RTOL: f64 = 1e-10;
/// Tolerance for negative eigenvalues of PSD intermediates.
const PSD_TOL: f64 = 1e-8;

/// Sample mean and unbiased (`1/(n−1)`) covariance of the rows.
pub fn moments(sample: &Tensor) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if sample.rank() != 2 || sample.rows() < 2 {
        return Err(Error::usage(format!("moments need a matrix with ≥ 2 rows, got {:?}", sample.shape())));
    }
    let (n, d) = (sample.rows(), sample.cols());
    let x = DMatrix::from_row_slice(n, d, sample.data());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn to_dmatrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("covariance", "matrix must be square"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// `KL(fit ‖ target)` between a Gaussian moment fit of `sample` and
/// `N(target_mean, target_cov)`.
pub fn gaussian_kl(sample: &Tensor, target_mean: &[f64], target_cov: &[Vec<f64>]) -> Result<f64> {
    if sample.rank() != 2 || sample.rows() <= sample.cols() {
        return Err(Error::usage(format!("gaussian_kl needs more rows than dims, got {:?}", sample.shape())));
    }
    let (mu_f, cov_f) = moments(sample)?;
    gaussian_kl_moments(&mu_f, &cov_f, &to_dvector(target_mean), &to_dmatrix(target_cov)?)
}

/// Closed-form `KL(N(μf, Σf) ‖ N(μt, Σt))`.
pub fn gaussian_kl_moments(
    mu_f: &DVector<f64>,
    cov_f: &DMatrix<f64>,
    mu_t: &DVector<f64>,
    cov_t: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_f.len();
    if mu_t.len() != d || cov_f.shape() != (d, d) || cov_t.shape() != (d, d) {
        return Err(Error::shape("gaussian_kl", format!("fit in {d} dims vs target in {} dims", mu_t.len())));
    }
    let chol_t = cov_t
        .clone()
        .cholesky()
        .ok_or_else(|| Error::usage("target covariance must be symmetric positive definite"))?;
    let eig_f = SymmetricEigen::new(cov_f.clone()).eigenvalues;
    let max_eig = eig_f.max();
    let min_eig = eig_f.min();
    if !(min_eig > SINGULAR_RTOL * max_eig.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!(
            "fitted covariance is singular (eigenvalues in [{min_eig:.3e}, {max_eig:.3e}])"
        )));
    }
    let trace = chol_t.solve(cov_f).trace();
    let diff = mu_t - mu_f;
    let maha = diff.dot(&chol_t.solve(&diff));
    let logdet_t = 2.0 * chol_t.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let logdet_f: f64 = eig_f.iter().map(|v| v.ln()).sum();
    Ok((0.5 * (trace + maha - d as f64 + logdet_t - logdet_f)).max(0.0))
}

fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(Error::Degenerate(format!("{what} is not positive semidefinite (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// Fréchet distance between Gaussian moment fits of two samples.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape("frechet_distance", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (mu_a, cov_a) = moments(a)?;
    let (mu_b, cov_b) = moments(b)?;
    frechet_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}

/// `‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^{1/2})`, with the trace of the root
/// taken from the eigenvalues of `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    if mu_a.len() != mu_b.len() || cov_a.shape() != cov_b.shape() {
        return Err(Error::shape("frechet_distance", "moment dimensions differ"));
    }
    let eig_a = psd_eigen(cov_a, "first covariance")?;
    let root_vals = eig_a.eigenvalues.map(f64::sqrt);
    let root_a = &eig_a.eigenvectors * DMatrix::from_diagonal(&root_vals) * eig_a.eigenvectors.transpose();
    let inner = &root_a * cov_b * &root_a;
    let cross: f64 = psd_eigen(&inner, "covariance product")?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let mean_term = (mu_a - mu_b).norm_squared();
    Ok((mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

/// Mean over `n_dirs` random unit directions of the squared 2-Wasserstein
/// distance between the projected samples.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_dirs: usize, rng: &mut Rng) -> Result<f64> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape("sliced_wasserstein", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() != b.rows() {
        return Err(Error::usage(format!("sliced_wasserstein needs equal counts, got {} and {}", a.rows(), b.rows())));
    }
    if n_dirs == 0 || a.rows() == 0 {
        return Err(Error::usage("sliced_wasserstein needs at least one direction and one row"));
    }
    let (n, d) = (a.rows(), a.cols());
    let mut total = 0.0;
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    for _ in 0..n_dirs {
        let dir = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len > 0.0 {
                break v.into_iter().map(|x| x / len).collect::<Vec<_>>();
            }
        };
        for i in 0..n {
            pa[i] = a.row(i).iter().zip(&dir).map(|(x, e)| x * e).sum();
            pb[i] = b.row(i).iter().zip(&dir).map(|(x, e)| x * e).sum();
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    Ok(total / n_dirs as f64)
}

/// Unbiased MMD² by direct summation, for evaluation and as an oracle for
/// the tape implementation.
pub fn mmd2_numeric(x: &Tensor, y: &Tensor, kernel: &KernelSpec) -> Result<f64> {
    if x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols() {
        return Err(Error::shape("mmd2", format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    let (m, n) = (x.rows(), y.rows());
    if m < 2 || n < 2 {
        return Err(Error::usage("unbiased MMD² needs at least 2 rows per side"));
    }
    let k = |a: &[f64], b: &[f64]| kernel.eval_sq(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum());
    let within = |t: &Tensor| {
        let r = t.rows();
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    s += k(t.row(i), t.row(j));
                }
            }
        }
        s / (r * (r - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += k(x.row(i), y.row(j));
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (m * n) as f64)
}
