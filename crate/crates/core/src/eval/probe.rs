use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use super::sliced_wasserstein;
use crate::models::{generate, sample_latent, LatentPrior, NetworkSpec, ParamVector, TapeNetwork};
use crate::objectives::{no_critic, Critic, Objective, ObjectiveSpec};
use crate::rng::stream;

/// Stream of the probe seed that fixes the sliced-W2 directions.
const DIRECTION_STREAM: u64 = u64::MAX - 1;

pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.001, 0.003, 0.01, 0.03, 0.1];

/// Which scalar the probe evaluates at each perturbed point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeQuantity {
    /// The critic's penalty-free divergence estimate (MMD² without a critic).
    MatchingEstimate,
    /// The generator's training loss.
    GeneratorLoss,
    /// Critic-free sliced 2-Wasserstein distance between the generated and
    /// real batches, with directions fixed across evaluations.
    SlicedW2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "default_quantity")]
    pub quantity: ProbeQuantity,
    /// Also perturb the critic's parameters.
    #[serde(default)]
    pub perturb_critic: bool,
    /// Projection directions for [`ProbeQuantity::SlicedW2`].
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_repeats() -> usize {
    50
}
fn default_eval_batch() -> usize {
    2048
}
fn default_quantity() -> ProbeQuantity {
    ProbeQuantity::GeneratorLoss
}
fn default_n_dirs() -> usize {
    64
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            alphas: default_alphas(),
            repeats: default_repeats(),
            eval_batch: default_eval_batch(),
            quantity: default_quantity(),
            perturb_critic: false,
            n_dirs: default_n_dirs(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.eval_batch < 2 || self.n_dirs == 0 {
            return Err(Error::Config("probe.repeats and probe.n_dirs must be ≥ 1, probe.eval_batch ≥ 2".into()));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config(format!("probe.alphas must be finite and ≥ 0, got {:?}", self.alphas)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub alphas: Vec<f64>,
    /// `values[a][m]`: objective after the `m`-th perturbation at `alphas[a]`.
    pub values: Vec<Vec<f64>>,
    pub baseline: f64,
}

impl ProbeReport {
    /// `value − baseline` for every repeat at `alphas[a]`.
    pub fn degradations(&self, a: usize) -> Vec<f64> {
        self.values[a].iter().map(|v| v - self.baseline).collect()
    }

    /// Median degradation at the first alpha equal to `alpha`.
    pub fn median_degradation(&self, alpha: f64) -> Option<f64> {
        let a = self.alphas.iter().position(|x| *x == alpha)?;
        median(&self.degradations(a))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Evaluates `objective` at `params + δ`, `δ ~ N(0, α²I)`, `repeats` times per
/// alpha. Each (alpha, repeat) cell draws from its own stream of `seed`, so
/// the result does not depend on scheduling. At α = 0 the parameters are
/// passed through untouched.
pub fn flatness_probe<F>(objective: F, params: &[f64], alphas: &[f64], repeats: usize, seed: u64) -> Result<ProbeReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if repeats == 0 {
        return Err(Error::usage("flatness probe needs at least one repeat"));
    }
    let baseline = objective(params)?;
    let cells: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..repeats).map(move |m| (a, m))).collect();
    let flat: Vec<f64> = cells
        .par_iter()
        .map(|&(a, m)| {
            let alpha = alphas[a];
            if alpha == 0.0 {
                return Ok(baseline);
            }
            let mut rng = stream(seed, (a * repeats + m) as u64);
            let perturbed: Vec<f64> = params
                .iter()
                .map(|p| p + alpha * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            objective(&perturbed)
        })
        .collect::<Result<_>>()?;
    let values = flat.chunks(repeats).map(<[f64]>::to_vec).collect();
    Ok(ProbeReport { alphas: alphas.to_vec(), values, baseline })
}

/// A trained generator with its (optional) critic, as seen by the probe.
#[derive(Clone, Copy, Debug)]
pub struct ProbeModel<'a> {
    pub gen_spec: &'a NetworkSpec,
    pub generator: &'a ParamVector,
    pub critic: Option<(&'a NetworkSpec, &'a ParamVector)>,
    pub objective: &'a ObjectiveSpec,
}

/// Flatness probe of a trained model on a fixed real batch and a fixed
/// latent batch of the same size. Generated samples are noise-free.
pub fn probe_model(model: ProbeModel<'_>, real_eval: &Tensor, config: &ProbeConfig, seed: u64) -> Result<ProbeReport> {
    config.validate()?;
    let mut objective = Objective::new(model.objective.clone())?;
    objective.refresh_kernel(real_eval)?;
    let z = sample_latent(LatentPrior { dim: model.gen_spec.input_dim }, real_eval.rows(), &mut stream(seed, u64::MAX));
    let n_gen = model.generator.len();
    let perturb_critic = config.perturb_critic && model.critic.is_some();
    let mut params = model.generator.values().to_vec();
    if perturb_critic {
        params.extend_from_slice(model.critic.expect("checked").1.values());
    }
    let eval = |p: &[f64]| -> Result<f64> {
        let gen = model.generator.with_values(p[..n_gen].to_vec())?;
        if config.quantity == ProbeQuantity::SlicedW2 {
            let fake = generate(model.gen_spec, &gen, &z)?;
            return sliced_wasserstein(&fake, real_eval, config.n_dirs, &mut stream(seed, DIRECTION_STREAM));
        }
        let critic = match model.critic {
            Some((spec, c)) if perturb_critic => Some((spec, c.with_values(p[n_gen..].to_vec())?)),
            Some((spec, c)) => Some((spec, c.clone())),
            None => None,
        };
        let mut tape = Tape::new();
        let g = TapeNetwork::register(&mut tape, model.gen_spec, &gen, false)?;
        let zn = tape.constant(z.clone());
        let fake = g.apply(&mut tape, zn)?;
        let real = tape.constant(real_eval.clone());
        let out = match critic {
            Some((spec, c)) => {
                let net = TapeNetwork::register(&mut tape, spec, &c, false)?;
                critic_quantity(&objective, config.quantity, &mut tape, &net, real, fake)?
            }
            None => critic_quantity(&objective, config.quantity, &mut tape, &no_critic, real, fake)?,
        };
        Ok(tape.scalar(out))
    };
    flatness_probe(eval, &params, &config.alphas, config.repeats, seed)
}

fn critic_quantity(
    objective: &Objective,
    quantity: ProbeQuantity,
    tape: &mut Tape,
    critic: &impl Critic,
    real: NodeId,
    fake: NodeId,
) -> Result<NodeId> {
    match quantity {
        ProbeQuantity::MatchingEstimate => objective.matching_estimate(tape, critic, real, fake),
        ProbeQuantity::GeneratorLoss | ProbeQuantity::SlicedW2 => objective.generator_loss(tape, critic, real, fake),
    }
}
