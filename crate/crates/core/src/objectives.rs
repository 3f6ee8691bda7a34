//! Matching objectives for generator training and the two generator
//! regularizers (likelihood relaxation and gradient regularization).
//!
//! Every objective produces a critic loss and a generator loss as scalar
//! tape nodes. Both are minimized by their respective players.

use std::f64::consts::LN_2;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp_findiff, hvp_step, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{standard_normal, TapeNetwork};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    JsGan,
    FGan,
    WganDiv,
    Rgan,
    Mmd,
}

impl ObjectiveKind {
    pub fn has_critic(self) -> bool {
        self != ObjectiveKind::Mmd
    }
}

/// f-divergence used by the f-GAN bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    Kl,
    ReverseKl,
    Js,
    Pearson,
}

impl FDivergence {
    /// Output activation `g_f` mapping a raw critic value into the domain of
    /// the conjugate.
    pub fn activation(self, v: f64) -> f64 {
        match self {
            FDivergence::Kl | FDivergence::Pearson => v,
            FDivergence::ReverseKl => -(-v).exp(),
            FDivergence::Js => LN_2 - crate::autodiff::softplus(-v),
        }
    }

    /// Fenchel conjugate `f*`. Returns NaN outside its domain.
    pub fn conjugate(self, t: f64) -> f64 {
        match self {
            FDivergence::Kl => (t - 1.0).exp(),
            FDivergence::ReverseKl => -1.0 - (-t).ln(),
            FDivergence::Js => -(2.0 - t.exp()).ln(),
            FDivergence::Pearson => t * t / 4.0 + t,
        }
    }
}

/// Equal-weight mixture of RBF kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("kernel bandwidths must be positive, got {bandwidths:?}")));
        }
        Ok(KernelSpec { bandwidths })
    }

    /// Bandwidths `multipliers × median pairwise distance of sample`.
    pub fn median_scaled(sample: &Tensor, multipliers: &[f64]) -> Result<Self> {
        let med = median_pairwise_distance(sample);
        let med = if med > 0.0 { med } else { 1.0 };
        KernelSpec::new(multipliers.iter().map(|m| m * med).collect())
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn eval_sq(&self, sq_dist: f64) -> f64 {
        let s: f64 = self.bandwidths.iter().map(|b| (-sq_dist / (2.0 * b * b)).exp()).sum();
        s / self.bandwidths.len() as f64
    }
}

/// Median Euclidean distance over distinct row pairs.
pub fn median_pairwise_distance(sample: &Tensor) -> f64 {
    let n = sample.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = sample.row(i).iter().zip(sample.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// MMD kernel configuration. With `relative_to_median`, `bandwidths` are
/// multipliers of the real batch's median pairwise distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdKernelConfig {
    pub bandwidths: Vec<f64>,
    pub relative_to_median: bool,
}

impl Default for MmdKernelConfig {
    fn default() -> Self {
        MmdKernelConfig { bandwidths: vec![0.5, 1.0, 2.0, 4.0], relative_to_median: true }
    }
}

impl MmdKernelConfig {
    pub fn resolve(&self, real: &Tensor) -> Result<KernelSpec> {
        if self.relative_to_median {
            KernelSpec::median_scaled(real, &self.bandwidths)
        } else {
            KernelSpec::new(self.bandwidths.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default = "default_f_choice")]
    pub f_choice: FDivergence,
    #[serde(default)]
    pub kernel: MmdKernelConfig,
    #[serde(default = "default_wgan_k")]
    pub wgan_k: f64,
    #[serde(default = "default_wgan_p")]
    pub wgan_p: f64,
    #[serde(default)]
    pub sigma2_lik: f64,
    #[serde(default)]
    pub lambda_grad: f64,
}

fn default_f_choice() -> FDivergence {
    FDivergence::Kl
}
fn default_wgan_k() -> f64 {
    2.0
}
fn default_wgan_p() -> f64 {
    6.0
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveSpec {
            kind,
            f_choice: default_f_choice(),
            kernel: MmdKernelConfig::default(),
            wgan_k: default_wgan_k(),
            wgan_p: default_wgan_p(),
            sigma2_lik: 0.0,
            lambda_grad: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_lik >= 0.0) {
            return Err(Error::Config(format!("sigma2_lik must be ≥ 0, got {}", self.sigma2_lik)));
        }
        if !(self.lambda_grad >= 0.0) {
            return Err(Error::Config(format!("lambda_grad must be ≥ 0, got {}", self.lambda_grad)));
        }
        if self.kind == ObjectiveKind::WganDiv && !(self.wgan_k > 0.0 && self.wgan_p > 0.0) {
            return Err(Error::Config(format!(
                "wgan_k and wgan_p must be positive, got k={} p={}",
                self.wgan_k, self.wgan_p
            )));
        }
        if self.kind == ObjectiveKind::Mmd {
            KernelSpec::new(self.kernel.bandwidths.clone())?;
        }
        Ok(())
    }
}

/// Anything that maps a batch node `[n×D]` to one raw score per row `[n×1]`.
pub trait Critic {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId>;
}

impl Critic for TapeNetwork {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        TapeNetwork::apply(self, tape, x)
    }
}

impl<F> Critic for F
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self(tape, x)
    }
}

/// Stand-in critic for objectives that have none.
pub(crate) fn no_critic(_: &mut Tape, _: NodeId) -> Result<NodeId> {
    Err(Error::usage("objective evaluated without a critic"))
}

/// Critic and generator losses. `critic_loss` is absent for objectives
/// without a critic.
#[derive(Clone, Copy, Debug)]
pub struct LossPair {
    pub critic_loss: Option<NodeId>,
    pub generator_loss: NodeId,
}

/// Adds `N(0, sigma2_lik·I)` noise to generated samples. Training only.
pub fn relax_likelihood(fake: &Tensor, sigma2_lik: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma2_lik >= 0.0) {
        return Err(Error::usage(format!("likelihood variance must be ≥ 0, got {sigma2_lik}")));
    }
    if sigma2_lik == 0.0 {
        return Ok(fake.clone());
    }
    let noise = standard_normal(fake.rows(), fake.cols(), rng);
    let sd = sigma2_lik.sqrt();
    let data = fake.data().iter().zip(noise.data()).map(|(x, e)| x + sd * e).collect();
    Tensor::new(fake.shape().to_vec(), data)
}

fn critic_scores(tape: &mut Tape, critic: &impl Critic, x: NodeId) -> Result<NodeId> {
    let out = critic.apply(tape, x)?;
    let rows = tape.shape(x)[0];
    if tape.shape(out) != [rows, 1] {
        return Err(Error::shape("critic", format!("expected [{rows}×1] scores, got {:?}", tape.shape(out))));
    }
    Ok(out)
}

fn check_batches(tape: &Tape, real: NodeId, fake: NodeId) -> Result<()> {
    let (r, f) = (tape.shape(real), tape.shape(fake));
    if r.len() != 2 || f.len() != 2 || r[1] != f[1] {
        return Err(Error::shape("objective", format!("real {r:?} vs fake {f:?}")));
    }
    Ok(())
}

/// Standard GAN: `−E log σ(f(real)) − E log(1 − σ(f(fake)))` for the critic and
/// the non-saturating `−E log σ(f(fake))` for the generator.
pub fn js_gan_losses(tape: &mut Tape, critic: &impl Critic, real: NodeId, fake: NodeId) -> Result<LossPair> {
    check_batches(tape, real, fake)?;
    let fr = critic_scores(tape, critic, real)?;
    let ff = critic_scores(tape, critic, fake)?;
    let critic_loss = js_critic_loss(tape, fr, ff)?;
    let generator_loss = js_generator_loss(tape, ff)?;
    Ok(LossPair { critic_loss: Some(critic_loss), generator_loss })
}

fn js_critic_loss(tape: &mut Tape, fr: NodeId, ff: NodeId) -> Result<NodeId> {
    // −log σ(v) = softplus(−v), −log(1 − σ(v)) = softplus(v)
    let nr = tape.neg(fr)?;
    let sr = tape.softplus(nr)?;
    let a = tape.mean(sr)?;
    let sf = tape.softplus(ff)?;
    let b = tape.mean(sf)?;
    tape.add(a, b)
}

fn js_generator_loss(tape: &mut Tape, ff: NodeId) -> Result<NodeId> {
    let nf = tape.neg(ff)?;
    let s = tape.softplus(nf)?;
    tape.mean(s)
}

/// Variational f-divergence bound `F = E_real g(V) − E_fake f*(g(V))`.
/// The critic minimizes `−F`, the generator minimizes `F`.
pub fn f_gan_losses(
    tape: &mut Tape,
    critic: &impl Critic,
    real: NodeId,
    fake: NodeId,
    f: FDivergence,
) -> Result<LossPair> {
    check_batches(tape, real, fake)?;
    let bound = f_gan_bound(tape, critic, real, fake, f)?;
    let critic_loss = tape.neg(bound)?;
    Ok(LossPair { critic_loss: Some(critic_loss), generator_loss: bound })
}

fn f_gan_bound(tape: &mut Tape, critic: &impl Critic, real: NodeId, fake: NodeId, f: FDivergence) -> Result<NodeId> {
    let vr = critic_scores(tape, critic, real)?;
    let vf = critic_scores(tape, critic, fake)?;
    let gr = activation_node(tape, vr, f)?;
    let real_term = tape.mean(gr)?;
    let conj = conjugate_of_activation(tape, vf, f)?;
    let fake_term = tape.mean(conj)?;
    tape.sub(real_term, fake_term)
}

fn activation_node(tape: &mut Tape, v: NodeId, f: FDivergence) -> Result<NodeId> {
    match f {
        FDivergence::Kl | FDivergence::Pearson => Ok(v),
        FDivergence::ReverseKl => {
            let nv = tape.neg(v)?;
            let e = tape.exp(nv)?;
            tape.neg(e)
        }
        FDivergence::Js => {
            let nv = tape.neg(v)?;
            let sp = tape.softplus(nv)?;
            let neg = tape.neg(sp)?;
            tape.offset(neg, LN_2)
        }
    }
}

/// `f*(g_f(v))`, written in a form that stays finite for every `v`.
fn conjugate_of_activation(tape: &mut Tape, v: NodeId, f: FDivergence) -> Result<NodeId> {
    match f {
        FDivergence::Kl => {
            let t = tape.offset(v, -1.0)?;
            tape.exp(t)
        }
        // −1 − log(exp(−v)) = v − 1
        FDivergence::ReverseKl => tape.offset(v, -1.0),
        FDivergence::Js => {
            // The conjugate is only defined for t < log 2; g_f maps into that
            // range, so anything else is a bug upstream.
            let t = activation_node(tape, v, f)?;
            if let Some(bad) = tape.value(t).data().iter().find(|&&t| !(t < LN_2)) {
                return Err(Error::usage(format!(
                    "JS conjugate evaluated at t = {bad} ≥ log 2; activation range violated"
                )));
            }
            // −log(2 − eᵗ) with t = log 2 − softplus(−v) equals softplus(v) − log 2
            let sp = tape.softplus(v)?;
            tape.offset(sp, -LN_2)
        }
        FDivergence::Pearson => {
            let sq = tape.mul(v, v)?;
            let q = tape.scale(sq, 0.25)?;
            tape.add(q, v)
        }
    }
}

/// Wasserstein dual difference with the interpolated-sample gradient
/// penalty `k·E‖∇f(x̂)‖ᵖ`; the generator minimizes `−E f(fake)`.
pub fn wgan_div_losses(
    tape: &mut Tape,
    critic: &impl Critic,
    real: NodeId,
    fake: NodeId,
    k: f64,
    p: f64,
    rng: &mut Rng,
) -> Result<LossPair> {
    check_batches(tape, real, fake)?;
    let critic_loss = wgan_div_critic_loss(tape, critic, real, fake, k, p, rng)?;
    let ff = critic_scores(tape, critic, fake)?;
    let generator_loss = wgan_generator_loss(tape, ff)?;
    Ok(LossPair { critic_loss: Some(critic_loss), generator_loss })
}

fn wgan_generator_loss(tape: &mut Tape, ff: NodeId) -> Result<NodeId> {
    let m = tape.mean(ff)?;
    tape.neg(m)
}

fn wgan_div_critic_loss(
    tape: &mut Tape,
    critic: &impl Critic,
    real: NodeId,
    fake: NodeId,
    k: f64,
    p: f64,
    rng: &mut Rng,
) -> Result<NodeId> {
    if tape.shape(real) != tape.shape(fake) {
        return Err(Error::shape(
            "wgan_div",
            format!("real {:?} and fake {:?} batches must match", tape.shape(real), tape.shape(fake)),
        ));
    }
    let fr = critic_scores(tape, critic, real)?;
    let ff = critic_scores(tape, critic, fake)?;
    let mr = tape.mean(fr)?;
    let mf = tape.mean(ff)?;
    let dual = tape.sub(mf, mr)?;

    // x̂ = u·real + (1 − u)·fake, one u per row
    let (xr, xf) = (tape.value(real), tape.value(fake));
    let (n, d) = (xr.rows(), xr.cols());
    let mut mix = Vec::with_capacity(n * d);
    for i in 0..n {
        let u: f64 = rng.random();
        mix.extend(xr.row(i).iter().zip(xf.row(i)).map(|(a, b)| u * a + (1.0 - u) * b));
    }
    let x_hat = tape.input(Tensor::matrix(n, d, mix)?, true);
    let penalty = gradient_penalty(tape, critic, x_hat, p)?;
    let weighted = tape.scale(penalty, k)?;
    tape.add(dual, weighted)
}

/// `E ‖∇ₓ f(x)‖ᵖ` over the rows of a differentiable input leaf.
pub fn gradient_penalty(tape: &mut Tape, critic: &impl Critic, x: NodeId, p: f64) -> Result<NodeId> {
    let fx = critic_scores(tape, critic, x)?;
    let g = tape.input_grad(fx, x)?;
    let g2 = tape.mul(g, g)?;
    let sq_norm = tape.sum_cols(g2)?;
    let norm_p = tape.pow(sq_norm, p / 2.0)?;
    tape.mean(norm_p)
}

/// Relativistic standard GAN with rows paired by index.
pub fn rgan_losses(tape: &mut Tape, critic: &impl Critic, real: NodeId, fake: NodeId) -> Result<LossPair> {
    check_batches(tape, real, fake)?;
    if tape.shape(real)[0] != tape.shape(fake)[0] {
        return Err(Error::usage(format!(
            "relativistic losses pair rows; got {} real and {} fake",
            tape.shape(real)[0],
            tape.shape(fake)[0]
        )));
    }
    let fr = critic_scores(tape, critic, real)?;
    let ff = critic_scores(tape, critic, fake)?;
    let critic_loss = rgan_loss(tape, fr, ff)?;
    let generator_loss = rgan_loss(tape, ff, fr)?;
    Ok(LossPair { critic_loss: Some(critic_loss), generator_loss })
}

/// `−E log σ(a − b) = E softplus(b − a)`
fn rgan_loss(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = tape.sub(b, a)?;
    let s = tape.softplus(d)?;
    tape.mean(s)
}

/// Unbiased MMD² between the rows of `x` and `y`.
pub fn mmd2_unbiased(tape: &mut Tape, x: NodeId, y: NodeId, kernel: &KernelSpec) -> Result<NodeId> {
    let (m, n) = (tape.shape(x)[0], tape.shape(y)[0]);
    if m < 2 || n < 2 {
        return Err(Error::usage(format!("unbiased MMD² needs at least 2 rows per side, got {m} and {n}")));
    }
    let kxx = kernel_matrix(tape, x, x, kernel)?;
    let kyy = kernel_matrix(tape, y, y, kernel)?;
    let kxy = kernel_matrix(tape, x, y, kernel)?;
    let sxx = off_diagonal_sum(tape, kxx, m)?;
    let syy = off_diagonal_sum(tape, kyy, n)?;
    let sxy = tape.sum(kxy)?;
    let a = tape.scale(sxx, 1.0 / (m * (m - 1)) as f64)?;
    let b = tape.scale(syy, 1.0 / (n * (n - 1)) as f64)?;
    let c = tape.scale(sxy, -2.0 / (m * n) as f64)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

fn kernel_matrix(tape: &mut Tape, x: NodeId, y: NodeId, kernel: &KernelSpec) -> Result<NodeId> {
    let d2 = tape.pairwise_sq_dist(x, y)?;
    let mut acc: Option<NodeId> = None;
    for &s in kernel.bandwidths() {
        let scaled = tape.scale(d2, -1.0 / (2.0 * s * s))?;
        let k = tape.exp(scaled)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, k)?,
            None => k,
        });
    }
    let sum = acc.expect("kernel has at least one bandwidth");
    tape.scale(sum, 1.0 / kernel.bandwidths().len() as f64)
}

fn off_diagonal_sum(tape: &mut Tape, k: NodeId, n: usize) -> Result<NodeId> {
    let mut mask = vec![1.0; n * n];
    for i in 0..n {
        mask[i * n + i] = 0.0;
    }
    let mask = tape.constant(Tensor::matrix(n, n, mask)?);
    let masked = tape.mul(k, mask)?;
    tape.sum(masked)
}

/// Adds `lambda·‖∇ψ L‖²` to a generator loss given as a value-and-gradient
/// closure. The regularized gradient is `g + 2·lambda·H g`, with `H g`
/// from central differences of the gradient.
pub fn add_grad_regularizer<F>(mut loss: F, params: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(lambda >= 0.0) {
        return Err(Error::usage(format!("lambda_grad must be ≥ 0, got {lambda}")));
    }
    let (value, grad) = loss(params)?;
    if lambda == 0.0 {
        return Ok((value, grad));
    }
    let sq_norm: f64 = grad.iter().map(|g| g * g).sum();
    if sq_norm == 0.0 {
        return Ok((value, grad));
    }
    let hg = hvp_findiff(|p| loss(p).map(|(_, g)| g), params, &grad, hvp_step(params))?;
    let reg_grad = grad.iter().zip(&hg).map(|(g, h)| g + 2.0 * lambda * h).collect();
    Ok((value + lambda * sq_norm, reg_grad))
}

/// An [`ObjectiveSpec`] with its kernel resolved, ready to build losses.
#[derive(Clone, Debug)]
pub struct Objective {
    spec: ObjectiveSpec,
    kernel: Option<KernelSpec>,
}

impl Objective {
    pub fn new(spec: ObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Objective { spec, kernel: None })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.spec.kind
    }

    /// Sets the MMD kernel from a real batch (median heuristic when
    /// configured). No-op for other kinds.
    pub fn refresh_kernel(&mut self, real: &Tensor) -> Result<()> {
        if self.spec.kind == ObjectiveKind::Mmd {
            self.kernel = Some(self.spec.kernel.resolve(real)?);
        }
        Ok(())
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    fn kernel_or_err(&self) -> Result<&KernelSpec> {
        self.kernel.as_ref().ok_or_else(|| Error::usage("MMD kernel not resolved; call refresh_kernel"))
    }

    /// Full loss pair for this objective.
    pub fn losses(
        &self,
        tape: &mut Tape,
        critic: &impl Critic,
        real: NodeId,
        fake: NodeId,
        rng: &mut Rng,
    ) -> Result<LossPair> {
        match self.spec.kind {
            ObjectiveKind::JsGan => js_gan_losses(tape, critic, real, fake),
            ObjectiveKind::FGan => f_gan_losses(tape, critic, real, fake, self.spec.f_choice),
            ObjectiveKind::WganDiv => wgan_div_losses(tape, critic, real, fake, self.spec.wgan_k, self.spec.wgan_p, rng),
            ObjectiveKind::Rgan => rgan_losses(tape, critic, real, fake),
            ObjectiveKind::Mmd => {
                let generator_loss = mmd2_unbiased(tape, real, fake, self.kernel_or_err()?)?;
                Ok(LossPair { critic_loss: None, generator_loss })
            }
        }
    }

    /// Critic loss only (skips generator-side work). `None` for MMD.
    pub fn critic_loss(
        &self,
        tape: &mut Tape,
        critic: &impl Critic,
        real: NodeId,
        fake: NodeId,
        rng: &mut Rng,
    ) -> Result<Option<NodeId>> {
        check_batches(tape, real, fake)?;
        let loss = match self.spec.kind {
            ObjectiveKind::JsGan => {
                let fr = critic_scores(tape, critic, real)?;
                let ff = critic_scores(tape, critic, fake)?;
                js_critic_loss(tape, fr, ff)?
            }
            ObjectiveKind::FGan => {
                let bound = f_gan_bound(tape, critic, real, fake, self.spec.f_choice)?;
                tape.neg(bound)?
            }
            ObjectiveKind::WganDiv => {
                wgan_div_critic_loss(tape, critic, real, fake, self.spec.wgan_k, self.spec.wgan_p, rng)?
            }
            ObjectiveKind::Rgan => rgan_losses(tape, critic, real, fake)?.critic_loss.expect("rgan has a critic"),
            ObjectiveKind::Mmd => return Ok(None),
        };
        Ok(Some(loss))
    }

    /// Generator loss only.
    pub fn generator_loss(&self, tape: &mut Tape, critic: &impl Critic, real: NodeId, fake: NodeId) -> Result<NodeId> {
        check_batches(tape, real, fake)?;
        match self.spec.kind {
            ObjectiveKind::JsGan => {
                let ff = critic_scores(tape, critic, fake)?;
                js_generator_loss(tape, ff)
            }
            ObjectiveKind::FGan => f_gan_bound(tape, critic, real, fake, self.spec.f_choice),
            ObjectiveKind::WganDiv => {
                let ff = critic_scores(tape, critic, fake)?;
                wgan_generator_loss(tape, ff)
            }
            ObjectiveKind::Rgan => {
                let fr = critic_scores(tape, critic, real)?;
                let ff = critic_scores(tape, critic, fake)?;
                rgan_loss(tape, ff, fr)
            }
            ObjectiveKind::Mmd => mmd2_unbiased(tape, real, fake, self.kernel_or_err()?),
        }
    }

    /// The critic's penalty-free estimate of the matching objective: the
    /// negated critic loss (dual difference for WGAN, the bound for f-GAN),
    /// or MMD² itself. Generators minimize it; it grows with mismatch.
    pub fn matching_estimate(&self, tape: &mut Tape, critic: &impl Critic, real: NodeId, fake: NodeId) -> Result<NodeId> {
        check_batches(tape, real, fake)?;
        match self.spec.kind {
            ObjectiveKind::JsGan => {
                let fr = critic_scores(tape, critic, real)?;
                let ff = critic_scores(tape, critic, fake)?;
                let l = js_critic_loss(tape, fr, ff)?;
                tape.neg(l)
            }
            ObjectiveKind::FGan => f_gan_bound(tape, critic, real, fake, self.spec.f_choice),
            ObjectiveKind::WganDiv => {
                let fr = critic_scores(tape, critic, real)?;
                let ff = critic_scores(tape, critic, fake)?;
                let mr = tape.mean(fr)?;
                let mf = tape.mean(ff)?;
                tape.sub(mr, mf)
            }
            ObjectiveKind::Rgan => {
                let fr = critic_scores(tape, critic, real)?;
                let ff = critic_scores(tape, critic, fake)?;
                let l = rgan_loss(tape, fr, ff)?;
                tape.neg(l)
            }
            ObjectiveKind::Mmd => mmd2_unbiased(tape, real, fake, self.kernel_or_err()?),
        }
    }
}
