//! Sample-based metrics, the parameter-perturbation flatness probe and int8
//! post-training quantization.

mod metrics;
mod probe;
mod quant;

pub use metrics::{
    frechet_distance, frechet_moments, gaussian_kl, gaussian_kl_moments, mmd2_numeric, moments, sliced_wasserstein,
};
pub use probe::{
    flatness_probe, median, probe_model, ProbeConfig, ProbeModel, ProbeQuantity, ProbeReport, DEFAULT_ALPHAS,
};
pub use quant::{quantize_int8, quantize_tensor, QuantReport, TensorQuant, TensorScale};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{generate, sample_latent, LatentPrior, NetworkSpec, ParamVector};
use crate::objectives::KernelSpec;
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Generated rows per repetition.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Random directions for sliced Wasserstein.
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
    /// Rows per side used by the quadratic-cost MMD².
    #[serde(default = "default_mmd_rows")]
    pub mmd_rows: usize,
}

fn default_n_samples() -> usize {
    10_000
}
fn default_repeats() -> usize {
    3
}
fn default_n_dirs() -> usize {
    128
}
fn default_mmd_rows() -> usize {
    1000
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: default_n_samples(),
            repeats: default_repeats(),
            n_dirs: default_n_dirs(),
            mmd_rows: default_mmd_rows(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.repeats == 0 || self.n_dirs == 0 || self.mmd_rows < 2 {
            return Err(Error::Config(format!("invalid eval options {self:?}")));
        }
        Ok(())
    }
}

/// Metrics of one batch of noise-free generated samples against the data.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Absent when the fitted covariance is singular.
    pub gaussian_kl: Option<f64>,
    pub frechet: f64,
    pub mmd2: f64,
    pub sliced_w2: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 6] = ["seed", "n_samples", "gaussian_kl", "frechet", "mmd2", "sliced_w2"];
    pub const METRICS: [&'static str; 4] = ["gaussian_kl", "frechet", "mmd2", "sliced_w2"];

    pub fn metrics(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("gaussian_kl", self.gaussian_kl),
            ("frechet", Some(self.frechet)),
            ("mmd2", Some(self.mmd2)),
            ("sliced_w2", Some(self.sliced_w2)),
        ]
    }

    /// Fields in [`Self::CSV_HEADER`] order; an absent KL is an empty field.
    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.seed.to_string(), self.n_samples.to_string()];
        out.extend(self.metrics().iter().map(|(_, v)| fmt_opt(*v)));
        out
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Target of an evaluation: the data, and the Gaussian the KL is measured
/// against (the data's own moments when `None`).
#[derive(Clone, Copy, Debug)]
pub struct EvalTarget<'a> {
    pub data: &'a Tensor,
    pub moments: Option<(&'a [f64], &'a [Vec<f64>])>,
}

/// One repetition: draws `n_samples` latents from `seed`, generates without
/// noise and scores against the target.
pub fn evaluate(
    gen_spec: &NetworkSpec,
    params: &ParamVector,
    target: EvalTarget<'_>,
    options: &EvalOptions,
    seed: u64,
) -> Result<MetricReport> {
    options.validate()?;
    let data = target.data;
    let z = sample_latent(LatentPrior { dim: gen_spec.input_dim }, options.n_samples, &mut stream(seed, 0));
    let fake = generate(gen_spec, params, &z)?;

    let gaussian_kl = {
        let owned;
        let (mean, cov) = match target.moments {
            Some(m) => m,
            None => {
                let (m, c) = moments(data)?;
                let cov: Vec<Vec<f64>> = c.row_iter().map(|r| r.iter().copied().collect()).collect();
                owned = (m.iter().copied().collect::<Vec<_>>(), cov);
                (&owned.0[..], &owned.1[..])
            }
        };
        match gaussian_kl(&fake, mean, cov) {
            Ok(v) => Some(v),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let frechet = frechet_distance(&fake, data)?;

    let head = |t: &Tensor, n: usize| t.select_rows(&(0..n.min(t.rows())).collect::<Vec<_>>());
    let m = options.mmd_rows.min(data.rows()).min(fake.rows());
    let (real_m, fake_m) = (head(data, m), head(&fake, m));
    let kernel = KernelSpec::median_scaled(&real_m, &[0.5, 1.0, 2.0, 4.0])?;
    let mmd2 = mmd2_numeric(&real_m, &fake_m, &kernel)?;

    let s = data.rows().min(fake.rows());
    let sliced_w2 = sliced_wasserstein(&head(data, s), &head(&fake, s), options.n_dirs, &mut stream(seed, 1))?;
    Ok(MetricReport { gaussian_kl, frechet, mmd2, sliced_w2, n_samples: options.n_samples, seed })
}

/// `options.repeats` evaluations with seeds `seed, seed + 1, …`.
pub fn evaluate_repeats(
    gen_spec: &NetworkSpec,
    params: &ParamVector,
    target: EvalTarget<'_>,
    options: &EvalOptions,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    (0..options.repeats as u64).map(|r| evaluate(gen_spec, params, target, options, seed.wrapping_add(r))).collect()
}

/// Mean and sample standard deviation (`1/(n−1)`) of each metric over the
/// reports where it is present.
pub fn summarize(reports: &[MetricReport]) -> Vec<(&'static str, Option<f64>, Option<f64>)> {
    MetricReport::METRICS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.metrics()[k].1).collect();
            let (mean, std) = mean_std(&vals);
            (*name, mean, std)
        })
        .collect()
}

pub fn mean_std(vals: &[f64]) -> (Option<f64>, Option<f64>) {
    if vals.is_empty() {
        return (None, None);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.len() > 1).then(|| (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}
