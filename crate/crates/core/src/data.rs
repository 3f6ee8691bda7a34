//! Synthetic target distributions, CSV ingestion/export and mini-batching.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Zero-mean, unit-variance isotropic Gaussian.
    Gaussian,
    /// `n_modes` Gaussian modes equally spaced on a circle in the first two
    /// coordinates.
    GaussianRing { n_modes: usize, radius: f64, mode_std: f64 },
    /// Headerless (unless `header`) comma-separated rows of `dim` floats.
    Csv {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub dim: usize,
    /// Row count; for CSV, `0` reads every row.
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn gaussian(dim: usize, n: usize, seed: u64) -> Self {
        DatasetSpec { kind: DatasetKind::Gaussian, dim, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dataset dim must be positive".into()));
        }
        match &self.kind {
            DatasetKind::Gaussian if self.n == 0 => Err(Error::Config("dataset n must be positive".into())),
            DatasetKind::GaussianRing { n_modes, radius, mode_std } => {
                if self.n == 0 || *n_modes == 0 || self.dim < 2 || !(*mode_std >= 0.0) || !radius.is_finite() {
                    Err(Error::Config(format!("invalid ring dataset: {self:?}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Mean and covariance of the generating law, when known in closed form.
    pub fn target_moments(&self) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = self.dim;
        match &self.kind {
            DatasetKind::Gaussian => Some((vec![0.0; d], identity(d, 1.0))),
            DatasetKind::GaussianRing { n_modes, radius, mode_std } => {
                let centers = ring_centers(*n_modes, *radius);
                let k = centers.len() as f64;
                let mx = centers.iter().map(|c| c.0).sum::<f64>() / k;
                let my = centers.iter().map(|c| c.1).sum::<f64>() / k;
                let mut cov = identity(d, mode_std * mode_std);
                for (cx, cy) in &centers {
                    let (dx, dy) = (cx - mx, cy - my);
                    cov[0][0] += dx * dx / k;
                    cov[0][1] += dx * dy / k;
                    cov[1][0] += dx * dy / k;
                    cov[1][1] += dy * dy / k;
                }
                let mut mean = vec![0.0; d];
                mean[0] = mx;
                mean[1] = my;
                Some((mean, cov))
            }
            DatasetKind::Csv { .. } => None,
        }
    }
}

fn identity(d: usize, diag: f64) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { diag } else { 0.0 }).collect()).collect()
}

fn ring_centers(n_modes: usize, radius: f64) -> Vec<(f64, f64)> {
    (0..n_modes)
        .map(|k| {
            let a = TAU * k as f64 / n_modes as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Materializes a dataset. Synthetic kinds are deterministic per seed.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Tensor> {
    spec.validate()?;
    let d = spec.dim;
    match &spec.kind {
        DatasetKind::Gaussian => {
            let mut rng = seeded(spec.seed);
            let data = (0..spec.n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(spec.n, d, data)
        }
        DatasetKind::GaussianRing { n_modes, radius, mode_std } => {
            let mut rng = seeded(spec.seed);
            let centers = ring_centers(*n_modes, *radius);
            let mut data = Vec::with_capacity(spec.n * d);
            for _ in 0..spec.n {
                let (cx, cy) = centers[rng.random_range(0..centers.len())];
                for j in 0..d {
                    let base = match j {
                        0 => cx,
                        1 => cy,
                        _ => 0.0,
                    };
                    data.push(base + mode_std * rng.sample::<f64, _>(StandardNormal));
                }
            }
            Tensor::matrix(spec.n, d, data)
        }
        DatasetKind::Csv { path, header } => {
            let t = read_csv(path, d, *header)?;
            if spec.n == 0 {
                return Ok(t);
            }
            if t.rows() < spec.n {
                return Err(Error::Ingest {
                    path: path.clone(),
                    row: t.rows(),
                    detail: format!("file has {} rows, dataset asks for {}", t.rows(), spec.n),
                });
            }
            Ok(t.select_rows(&(0..spec.n).collect::<Vec<_>>()))
        }
    }
}

/// Reads `dim`-column float rows. Row numbers in errors are 1-based file lines.
pub fn read_csv(path: &Path, dim: usize, header: bool) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new().has_headers(header).flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + usize::from(header);
        let record = record?;
        if record.len() != dim {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                row: line,
                detail: format!("expected {dim} columns, found {}", record.len()),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Ingest {
                path: path.to_path_buf(),
                row: line,
                detail: format!("not a number: {field:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::matrix(rows, dim, data)
}

/// Writes rows in the ingestion format (no header). Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(data: &Tensor, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..data.rows() {
        w.write_record(data.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffled-epoch mini-batches with the last partial batch dropped.
#[derive(Clone, Copy, Debug)]
pub struct BatchSampler<'a> {
    data: &'a Tensor,
    batch_size: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a Tensor, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > data.rows() {
            return Err(Error::Config(format!(
                "batch size {batch_size} must lie in 1..={} (dataset rows)",
                data.rows()
            )));
        }
        Ok(BatchSampler { data, batch_size })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.rows() / self.batch_size
    }

    /// Row indices of one epoch's batches; draws the permutation immediately.
    pub fn epoch_indices(&self, rng: &mut Rng) -> Vec<Vec<usize>> {
        let mut perm: Vec<usize> = (0..self.data.rows()).collect();
        perm.shuffle(rng);
        perm.chunks_exact(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn epoch(&self, rng: &mut Rng) -> impl Iterator<Item = Tensor> + 'a {
        let data = self.data;
        self.epoch_indices(rng).into_iter().map(move |idx| data.select_rows(&idx))
    }
}

pub fn batch_sampler(data: &Tensor, batch_size: usize) -> Result<BatchSampler<'_>> {
    BatchSampler::new(data, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn gaussian_mean_is_near_zero() {
        let x = make_dataset(&DatasetSpec::gaussian(2, 2000, 7)).unwrap();
        for j in 0..2 {
            let m: f64 = (0..2000).map(|i| x.at(i, j)).sum::<f64>() / 2000.0;
            assert!(m.abs() < 3.0 / 2000f64.sqrt(), "coordinate {j} mean {m}");
        }
    }

    #[test]
    fn ring_with_zero_std_sits_on_centers() {
        let spec = DatasetSpec {
            kind: DatasetKind::GaussianRing { n_modes: 8, radius: 2.0, mode_std: 0.0 },
            dim: 2,
            n: 500,
            seed: 1,
        };
        let x = make_dataset(&spec).unwrap();
        let centers = ring_centers(8, 2.0);
        for i in 0..x.rows() {
            let r = x.row(i);
            assert!(centers.iter().any(|c| (c.0 - r[0]).hypot(c.1 - r[1]) < 1e-12));
        }
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let x = make_dataset(&DatasetSpec::gaussian(1, 10, 0)).unwrap();
        let s = BatchSampler::new(&x, 10).unwrap();
        let idx = s.epoch_indices(&mut seeded(3));
        assert_eq!(idx.len(), 1);
        let mut sorted = idx[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn drop_last_arithmetic() {
        let x = make_dataset(&DatasetSpec::gaussian(1, 10, 0)).unwrap();
        let s = BatchSampler::new(&x, 3).unwrap();
        let idx = s.epoch_indices(&mut seeded(3));
        assert_eq!(idx.len(), 3);
        let distinct: HashSet<usize> = idx.iter().flatten().copied().collect();
        assert_eq!(distinct.len(), 9);
        assert!(BatchSampler::new(&x, 11).is_err());
    }

    #[test]
    fn csv_dimension_mismatch_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1.0,2.0\n3.0,4.0\n5.0\n").unwrap();
        match read_csv(&p, 2, false) {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p2 = dir.path().join("hdr.csv");
        std::fs::write(&p2, "x,y\n1.0,2.0\n").unwrap();
        assert_eq!(read_csv(&p2, 2, true).unwrap().rows(), 1);
    }

    #[test]
    fn ring_moments_are_isotropic_for_many_modes() {
        let spec = DatasetSpec {
            kind: DatasetKind::GaussianRing { n_modes: 8, radius: 2.0, mode_std: 0.1 },
            dim: 2,
            n: 10,
            seed: 0,
        };
        let (m, c) = spec.target_moments().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        assert!((c[0][0] - (2.0 + 0.01)).abs() < 1e-12);
        assert!(c[0][1].abs() < 1e-12);
    }
}
