//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ganselect::eval::{frechet_distance, gaussian_kl, quantize_tensor};
use ganselect::models::{sample_latent, TapeNetwork};
use ganselect::objectives::{add_grad_regularizer, f_gan_losses, mmd2_unbiased, Objective};
use ganselect::optim::{sam_step, sgd_step, SamTargets};
use ganselect::rng::seeded;
use ganselect::{
    FDivergence, KernelSpec, LatentPrior, NetworkSpec, NodeId, ObjectiveKind, ObjectiveSpec, ParamVector, Tape,
    Tensor, TrainConfig,
};
use ganselect_cli::run::{self, figure1_base, Figure1Cell, Target};
use ganselect_cli::ExperimentConfig;
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `max |a − b| / max(|a|, |b|, floor)` over entries.
fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    const H: f64 = 1e-6;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

// 1: latent-dim × depth grid

fn kl_or_inf(c: &Figure1Cell) -> f64 {
    c.kl_ema.unwrap_or(f64::INFINITY)
}

fn cell(cells: &[Figure1Cell], p: usize, l: usize) -> &Figure1Cell {
    cells.iter().find(|c| c.latent_dim == p && c.hidden_layers == l).expect("grid cell")
}

fn figure1() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..3u64 {
        let out = root.path().join(format!("seed{seed}"));
        let base = figure1_base(seed);
        let cells = run::run_figure1(&base, &out, parallelism()).map_err(err)?;
        let rows = csv::Reader::from_path(out.join(run::FIGURE1_FILE)).map_err(err)?.records().count();
        let expected_rows = 9 * base.probe.alphas.len() * base.probe.repeats + 9;
        let svgs = (0..3)
            .flat_map(|p| (0..3).map(move |l| (p, l)))
            .filter(|&(p, l)| {
                run::figure1_svg_path(&out, run::FIGURE1_LATENT_DIMS[p], run::FIGURE1_HIDDEN_LAYERS[l]).exists()
            })
            .count();
        let shape_ok = cells.len() == 9 && rows == expected_rows && svgs == 9;

        let worst_p1 = cells.iter().filter(|c| c.latent_dim == 1).map(kl_or_inf).fold(f64::INFINITY, f64::min);
        let best_rest = cells.iter().filter(|c| c.latent_dim >= 2).map(kl_or_inf).fold(0.0, f64::max);
        let ratio_a = worst_p1 / best_rest;
        let deg = |c: &Figure1Cell, alpha: f64| c.probe.median_degradation(alpha).unwrap_or(f64::NAN);
        let (small, big) = (cell(&cells, 2, 0), cell(&cells, 10, 2));
        let ratio_b = deg(big, 0.03) / deg(small, 0.03);
        let frac_c = deg(small, 0.01).abs() / small.probe.baseline.abs();
        let seed_ok = shape_ok && ratio_a >= 5.0 && ratio_b >= 3.0 && frac_c <= 0.1;
        ok &= seed_ok;
        notes.push(format!(
            "seed {seed}: rows {rows}/{expected_rows}, (a) KL ratio {ratio_a:.2} >= 5, (b) degradation ratio {ratio_b:.2} >= 3, (c) {:.1}% <= 10%",
            100.0 * frac_c
        ));
    }
    Ok((ok, notes.join("; ")))
}

// 2: gradients against central differences

struct GradCase {
    gen: NetworkSpec,
    critic: NetworkSpec,
    gen_params: ParamVector,
    critic_params: ParamVector,
    z: Tensor,
    real: Tensor,
}

impl GradCase {
    fn new(seed: u64) -> Self {
        let gen = NetworkSpec::generator(2, 2, 1, 5);
        let critic = NetworkSpec::critic(2, 2, 5);
        let mut rng = seeded(1000 + seed);
        // random biases too: zero biases put whole rows on the ReLU kinks
        let mut random = |spec: &NetworkSpec| {
            let v = sample_latent(LatentPrior { dim: spec.param_count() }, 1, &mut rng);
            ParamVector::from_values(spec, v.data().iter().map(|x| 0.5 * x).collect()).unwrap()
        };
        GradCase {
            gen_params: random(&gen),
            critic_params: random(&critic),
            z: sample_latent(LatentPrior { dim: 2 }, 6, &mut rng),
            real: sample_latent(LatentPrior { dim: 2 }, 6, &mut rng).map(|v| 0.5 * v + 0.3),
            gen,
            critic,
        }
    }

    fn fake(&self) -> Tensor {
        ganselect::models::generate(&self.gen, &self.gen_params, &self.z).unwrap()
    }

    fn generator_loss(&self, obj: &Objective, gp: &[f64]) -> ganselect::Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let gen = TapeNetwork::register(&mut tape, &self.gen, &ParamVector::from_values(&self.gen, gp.to_vec())?, true)?;
        let critic = TapeNetwork::register(&mut tape, &self.critic, &self.critic_params, false)?;
        let z = tape.constant(self.z.clone());
        let fake = gen.apply(&mut tape, z)?;
        let real = tape.constant(self.real.clone());
        let loss = obj.generator_loss(&mut tape, &critic, real, fake)?;
        let grads = tape.grad(loss)?;
        Ok((tape.scalar(loss), gen.flat_grad(&grads)?))
    }

    fn critic_loss(&self, obj: &Objective, cp: &[f64], seed: u64) -> ganselect::Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let params = ParamVector::from_values(&self.critic, cp.to_vec())?;
        let critic = TapeNetwork::register(&mut tape, &self.critic, &params, true)?;
        let real = tape.constant(self.real.clone());
        let fake = tape.constant(self.fake());
        let loss = obj.critic_loss(&mut tape, &critic, real, fake, &mut seeded(seed))?.expect("critic objective");
        let grads = tape.grad(loss)?;
        Ok((tape.scalar(loss), critic.flat_grad(&grads)?))
    }
}

fn gradients() -> Outcome {
    const INSTANCES: u64 = 50;
    const TOL: f64 = 1e-4;
    let mut specs: Vec<(String, ObjectiveSpec)> = Vec::new();
    for kind in [ObjectiveKind::JsGan, ObjectiveKind::WganDiv, ObjectiveKind::Rgan, ObjectiveKind::Mmd] {
        specs.push((format!("{kind:?}"), ObjectiveSpec::new(kind)));
    }
    for f in [FDivergence::Kl, FDivergence::ReverseKl, FDivergence::Js, FDivergence::Pearson] {
        let mut s = ObjectiveSpec::new(ObjectiveKind::FGan);
        s.f_choice = f;
        specs.push((format!("FGan/{f:?}"), s));
    }
    let mut worst = Vec::new();
    let mut ok = true;
    for (name, spec) in &specs {
        let mut obj = Objective::new(spec.clone()).map_err(err)?;
        let (mut gen_err, mut critic_err) = (0.0f64, 0.0f64);
        for s in 0..INSTANCES {
            let case = GradCase::new(s);
            obj.refresh_kernel(&case.real).map_err(err)?;
            let gp = case.gen_params.values();
            let (_, g) = case.generator_loss(&obj, gp).map_err(err)?;
            let fd = central_differences(|p| case.generator_loss(&obj, p).unwrap().0, gp);
            gen_err = gen_err.max(rel_err(&g, &fd, 1e-3));
            if spec.kind.has_critic() {
                let cp = case.critic_params.values();
                let (_, g) = case.critic_loss(&obj, cp, s).map_err(err)?;
                let fd = central_differences(|p| case.critic_loss(&obj, p, s).unwrap().0, cp);
                critic_err = critic_err.max(rel_err(&g, &fd, 1e-3));
            }
        }
        ok &= gen_err <= TOL && critic_err <= TOL;
        worst.push(format!("{name} {gen_err:.1e}/{critic_err:.1e}"));
    }

    // generator loss plus lambda·‖∇L‖², whose gradient goes through the HVP
    let obj = Objective::new(ObjectiveSpec::new(ObjectiveKind::WganDiv)).map_err(err)?;
    let mut reg_err = 0.0f64;
    for s in 0..INSTANCES {
        let case = GradCase::new(s);
        let regularized = |p: &[f64]| add_grad_regularizer(|q| case.generator_loss(&obj, q), p, 0.1);
        let gp = case.gen_params.values();
        let (_, g) = regularized(gp).map_err(err)?;
        let fd = central_differences(|p| regularized(p).unwrap().0, gp);
        reg_err = reg_err.max(rel_err(&g, &fd, 1e-3));
    }
    ok &= reg_err <= TOL;
    worst.push(format!("lambda_grad {reg_err:.1e}"));
    Ok((ok, format!("max rel err generator/critic over {INSTANCES} instances, tol {TOL:.0e}: {}", worst.join(", "))))
}

// 3: estimator oracles

fn brute_mmd(x: &Tensor, y: &Tensor, bandwidths: &[f64]) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum::<f64>() / bandwidths.len() as f64
    };
    let within = |t: &Tensor| {
        let n = t.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += k(t.row(i), t.row(j));
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    let mut xy = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            xy += k(x.row(i), y.row(j));
        }
    }
    within(x) + within(y) - 2.0 * xy / (x.rows() * y.rows()) as f64
}

/// Two-point 1D sample with fitted mean `mu` and unbiased variance `var`.
fn two_point(mu: f64, var: f64) -> Tensor {
    let h = (var / 2.0).sqrt();
    Tensor::matrix(2, 1, vec![mu - h, mu + h]).unwrap()
}

fn kl_by_simpson(mu_p: f64, var_p: f64, mu_q: f64, var_q: f64) -> f64 {
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let sd = var_p.sqrt();
    let (a, n) = (mu_p - 15.0 * sd, 20_000);
    let h = 30.0 * sd / n as f64;
    let f = |x: f64| {
        let p = pdf(x, mu_p, var_p);
        if p == 0.0 {
            0.0
        } else {
            p * (p / pdf(x, mu_q, var_q)).ln()
        }
    };
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(a + n as f64 * h) + inner) * h / 3.0
}

fn estimators() -> Outcome {
    let bandwidths = [0.5, 1.0, 2.0];
    let kernel = KernelSpec::new(bandwidths.to_vec()).map_err(err)?;
    let mut mmd_err = 0.0f64;
    for (k, (m, n)) in [(2, 2), (3, 9), (16, 16), (40, 25), (64, 64), (64, 2)].into_iter().enumerate() {
        let x = sample_latent(LatentPrior { dim: 3 }, m, &mut seeded(70 + k as u64));
        let y = sample_latent(LatentPrior { dim: 3 }, n, &mut seeded(90 + k as u64)).map(|v| 0.7 * v + 0.2);
        let mut tape = Tape::new();
        let (xn, yn) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let node = mmd2_unbiased(&mut tape, xn, yn, &kernel).map_err(err)?;
        mmd_err = mmd_err.max((tape.scalar(node) - brute_mmd(&x, &y, &bandwidths)).abs());
    }

    let kl_cases = [(1.0, 1.0, 0.0, 1.0), (0.0, 4.0, 0.0, 1.0), (-0.5, 0.3, 0.2, 2.0), (2.0, 1.5, -1.0, 0.7), (0.1, 0.01, 0.0, 1.0)];
    let mut kl_err = 0.0f64;
    for (mp, vp, mq, vq) in kl_cases {
        let kl = gaussian_kl(&two_point(mp, vp), &[mq], &[vec![vq]]).map_err(err)?;
        kl_err = kl_err.max((kl - kl_by_simpson(mp, vp, mq, vq)).abs());
    }

    let fd_cases = [(0.0, 1.0, 0.0, 4.0), (0.0, 1.0, 0.0, 2.0), (1.0, 2.0, 0.5, 3.0), (-3.0, 0.5, 2.0, 0.1), (5.0, 1.0, 0.0, 1.0)];
    let mut fd_err = 0.0f64;
    for (ma, va, mb, vb) in fd_cases {
        let fd = frechet_distance(&two_point(ma, va), &two_point(mb, vb)).map_err(err)?;
        let oracle: f64 = (ma - mb) * (ma - mb) + va + vb - 2.0 * (va * vb).sqrt();
        fd_err = fd_err.max((fd - oracle).abs());
    }
    let ok = mmd_err <= 1e-12 && kl_err <= 1e-6 && fd_err <= 1e-10;
    Ok((ok, format!("mmd2 {mmd_err:.1e} <= 1e-12, gaussian_kl {kl_err:.1e} <= 1e-6, frechet {fd_err:.1e} <= 1e-10")))
}

// 4: variational f-divergence bound on two-atom distributions

/// `n` one-hot rows over two atoms with `round(p·n)` on the first.
fn atoms(p: f64, n: usize) -> Tensor {
    let k = (p * n as f64).round() as usize;
    Tensor::matrix(n, 2, (0..n).flat_map(|i| if i < k { [1.0, 0.0] } else { [0.0, 1.0] }).collect()).unwrap()
}

fn maximized_bound(real: &Tensor, fake: &Tensor, f: FDivergence) -> ganselect::Result<f64> {
    let bound = |theta: &[f64]| -> ganselect::Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let w = t.param(Tensor::matrix(2, 1, theta.to_vec())?);
        let critic = |t: &mut Tape, x: NodeId| t.matmul(x, w);
        let (r, q) = (t.constant(real.clone()), t.constant(fake.clone()));
        let l = f_gan_losses(&mut t, &critic, r, q, f)?;
        let g = t.grad(l.generator_loss)?;
        Ok((t.scalar(l.generator_loss), g.wrt(w).data().to_vec()))
    };
    let mut theta = vec![0.0, 0.0];
    let mut state = ganselect::OptState::adam(2);
    for _ in 0..20_000 {
        let (_, g) = bound(&theta)?;
        if g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        let ascent: Vec<f64> = g.iter().map(|v| -v).collect();
        state.step(&mut theta, &ascent, 0.01)?;
    }
    Ok(bound(&theta)?.0)
}

fn f_bound() -> Outcome {
    let kl = |p: &[f64; 2], q: &[f64; 2]| p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    let mut ok = true;
    let mut notes = Vec::new();
    for (p, q) in [(0.3, 0.6), (0.9, 0.2), (0.5, 0.25), (0.05, 0.5)] {
        let (pp, qq) = ([p, 1.0 - p], [q, 1.0 - q]);
        let m = [(p + q) / 2.0, 1.0 - (p + q) / 2.0];
        let js = 0.5 * kl(&pp, &m) + 0.5 * kl(&qq, &m);
        let (real, fake) = (atoms(p, 20), atoms(q, 20));
        // the JS generator function of the bound measures 2·JS
        for (f, truth) in [(FDivergence::Kl, kl(&pp, &qq)), (FDivergence::Js, 2.0 * js)] {
            let b = maximized_bound(&real, &fake, f).map_err(err)?;
            ok &= b <= truth + 1e-9 && b >= 0.9 * truth;
            notes.push(format!("{f:?}({p},{q}) {b:.6}/{truth:.6}"));
        }
    }
    Ok((ok, format!("bound/true: {}", notes.join(", "))))
}

// 5: SAM on the two-minima toy

fn two_minima_grad(x: f64) -> f64 {
    if 50.0 * x * x <= 0.5 * (x - 3.0) * (x - 3.0) {
        100.0 * x
    } else {
        x - 3.0
    }
}

fn flat_basin_count(rho: Option<f64>) -> ganselect::Result<usize> {
    let mut rng = seeded(2024);
    let mut count = 0;
    for _ in 0..100 {
        let mut p = [rng.random_range(-0.5..0.6)];
        let mut state = ganselect::OptState::sgd(1);
        for _ in 0..2000 {
            match rho {
                Some(rho) => sam_step(|q: &[f64]| Ok(vec![two_minima_grad(q[0])]), &mut p, &mut state, 0.01, rho)?,
                None => {
                    let g = [two_minima_grad(p[0])];
                    sgd_step(&mut p, &g, 0.01)?
                }
            }
        }
        if p[0] > 3.0 / 11.0 {
            count += 1;
        }
    }
    Ok(count)
}

fn sam_toy() -> Outcome {
    let sgd = flat_basin_count(None).map_err(err)?;
    let sam = flat_basin_count(Some(0.5)).map_err(err)?;
    Ok((sam > sgd, format!("flat-basin endings over 100 trials: SAM {sam} > SGD {sgd}")))
}

// 6: SAM radius zero

fn sha256(path: &Path) -> Result<String, String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path).map_err(err)?)))
}

fn sam_zero() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let mut configs = Vec::new();
    for kind in [ObjectiveKind::JsGan, ObjectiveKind::FGan, ObjectiveKind::WganDiv, ObjectiveKind::Rgan, ObjectiveKind::Mmd] {
        let mut cfg = ExperimentConfig::gaussian_2d(3, 1);
        cfg.objective = ObjectiveSpec::new(kind);
        cfg.train = TrainConfig { epochs: 4, seed: 5, ..TrainConfig::for_objective(kind) };
        configs.push((format!("{kind:?}"), cfg));
    }
    let mut cfg = ExperimentConfig::gaussian_2d(10, 2);
    cfg.objective.sigma2_lik = 0.01;
    cfg.objective.lambda_grad = 0.001;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 64;
    configs.push(("WganDiv+noise+lambda_grad".into(), cfg));

    let mut ok = true;
    for (k, (_, cfg)) in configs.iter_mut().enumerate() {
        cfg.dataset.n = 512;
        cfg.eval.n_samples = 500;
        cfg.eval.repeats = 1;
        let mut hashes = Vec::new();
        for targets in [SamTargets::None, SamTargets::Both] {
            let mut c = cfg.clone();
            c.train.rho_sam = 0.0;
            c.train.sam_targets = targets;
            let out = root.path().join(format!("{k}_{targets:?}"));
            run::run_train(&c, &out).map_err(err)?;
            hashes.push(sha256(&out.join(run::CHECKPOINT_FILE))?);
        }
        ok &= hashes[0] == hashes[1];
    }
    let names: Vec<&str> = configs.iter().map(|(n, _)| n.as_str()).collect();
    Ok((ok, format!("checkpoint sha256 equal with and without the SAM path for {}", names.join(", "))))
}

// 7: regularized vs plain overparameterized cell

fn regularizer_degradation(cfg: &ExperimentConfig) -> Result<f64, String> {
    let target = Target::new(&cfg.dataset).map_err(err)?;
    let model = ganselect::train(&cfg.generator, &cfg.critic, &cfg.objective, &cfg.train, &target.data).map_err(err)?;
    let report = run::probe_generator(cfg, &model.ema, model.critic.as_ref(), &target.data).map_err(err)?;
    report.median_degradation(0.03).ok_or_else(|| "no alpha 0.03".to_string())
}

fn regularizers() -> Outcome {
    let mut diffs = Vec::new();
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let mut plain = figure1_base(seed);
        plain.generator.input_dim = 10;
        plain.generator.hidden_layers = 2;
        let mut reg = plain.clone();
        reg.objective.sigma2_lik = 0.01;
        reg.train.rho_sam = 0.01;
        reg.train.sam_targets = SamTargets::Both;
        let (d_plain, d_reg) = (regularizer_degradation(&plain)?, regularizer_degradation(&reg)?);
        diffs.push(d_reg - d_plain);
        notes.push(format!("{d_reg:.5}/{d_plain:.5}"));
    }
    let med = ganselect::eval::median(&diffs).unwrap_or(f64::NAN);
    Ok((med <= 0.0, format!("median paired (regularized - plain) degradation at alpha 0.03 = {med:.2e} <= 0; per seed {}", notes.join(", "))))
}

// 8: int8 round trip

fn quantization() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let cfg = figure1_base(0);
    let trained = run::run_train(&cfg, root.path()).map_err(err)?;

    let mut tensors: Vec<Vec<f64>> = Vec::new();
    for params in [&trained.model.generator, &trained.model.ema] {
        tensors.extend(params.blocks().into_iter().map(|r| params.values()[r].to_vec()));
    }
    let mut rng = seeded(88);
    for k in 0..200 {
        let n = 1 + k % 37;
        let scale = 10f64.powi(k % 7 - 3);
        tensors.push((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect());
    }
    let mut worst = 0.0f64;
    for t in &tensors {
        let q = quantize_tensor(t);
        for (x, y) in t.iter().zip(q.dequantize()) {
            worst = worst.max((x - y).abs() / (q.scale / 2.0));
        }
    }

    let reports = run::run_quantize(&cfg, &root.path().join(run::CHECKPOINT_FILE), root.path()).map_err(err)?;
    let mut kl_delta = 0.0f64;
    for (_, r) in &reports {
        let d = r.deltas().into_iter().find(|(m, _)| *m == "gaussian_kl").and_then(|(_, d)| d);
        kl_delta = kl_delta.max(d.map_or(f64::INFINITY, f64::abs));
    }
    let ok = worst <= 1.0 + 1e-9 && kl_delta <= 0.05;
    Ok((
        ok,
        format!(
            "max error/(scale/2) over {} tensors {worst:.6} <= 1; MLP0/P=2 |gaussian_kl delta| {kl_delta:.2e} <= 0.05",
            tensors.len()
        ),
    ))
}

// 9: reruns

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        if entry.extension().is_some_and(|e| e == "csv") {
            out.push(entry.strip_prefix(dir).unwrap().to_path_buf());
        }
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn ganselect(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ganselect")).args(args).env("GANSELECT_LOG", "off").output().map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}", out.status.code()))
    }
}

fn reproducibility() -> Outcome {
    let root = tempfile::tempdir().map_err(err)?;
    let mut cfg = ExperimentConfig::gaussian_2d(2, 1);
    cfg.dataset.n = 512;
    cfg.train.epochs = 5;
    cfg.eval.n_samples = 1000;
    cfg.eval.repeats = 2;
    cfg.probe.repeats = 4;
    cfg.probe.eval_batch = 256;
    let cfg_path = root.path().join("exp.toml");
    std::fs::write(&cfg_path, cfg.to_toml().map_err(err)?).map_err(err)?;
    let sweep = format!(
        "repeats = 2\n[axes]\n\"train.rho_sam\" = [0.0, 0.01]\n\n{}",
        cfg.to_toml().map_err(err)?.lines().map(|l| match l.strip_prefix('[') { Some(rest) => format!("[base.{rest}"), None => l.to_string() }).collect::<Vec<_>>().join("\n")
    );
    let sweep_text = sweep.replacen("output_dir", "[base]\noutput_dir", 1);
    let sweep_path = root.path().join("sweep.toml");
    std::fs::write(&sweep_path, sweep_text).map_err(err)?;
    let mut fig = cfg.clone();
    fig.train.epochs = 2;
    fig.probe.repeats = 2;
    let fig_path = root.path().join("figure1.toml");
    std::fs::write(&fig_path, fig.to_toml().map_err(err)?).map_err(err)?;

    let (c, s, f) = (cfg_path.to_str().unwrap(), sweep_path.to_str().unwrap(), fig_path.to_str().unwrap());
    let mut compared = 0;
    let mut ok = true;
    for run_k in ["a", "b"] {
        let out = root.path().join(run_k);
        let o = out.to_str().unwrap();
        for sub in ["train", "eval", "probe", "quantize"] {
            ganselect(&[sub, "--config", c, "--seed", "11", "--out", o])?;
        }
        let sweep_out = out.join("sweep");
        ganselect(&["sweep", "--config", s, "--seed", "11", "--out", sweep_out.to_str().unwrap()])?;
        let fig_out = out.join("figure1");
        ganselect(&["figure1", "--config", f, "--seed", "11", "--out", fig_out.to_str().unwrap()])?;
    }
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let files = csv_files(&a);
    ok &= files == csv_files(&b) && !files.is_empty();
    for rel in &files {
        ok &= std::fs::read(a.join(rel)).map_err(err)? == std::fs::read(b.join(rel)).map_err(err)?;
        compared += 1;
    }
    Ok((ok, format!("{compared} CSVs from train, eval, probe, quantize, sweep and figure1 byte-identical across reruns")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("figure-1 grid ordering", figure1),
        ("gradient correctness", gradients),
        ("estimator oracles", estimators),
        ("f-divergence bound", f_bound),
        ("SAM flat-minimum toy", sam_toy),
        ("SAM radius zero", sam_zero),
        ("regularizer smoke", regularizers),
        ("quantization", quantization),
        ("reproducibility", reproducibility),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {n} {name}: {} ({detail}) [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
