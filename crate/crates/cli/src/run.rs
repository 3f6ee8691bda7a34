//! Subcommand implementations. Every runner writes its artifacts under an
//! output directory and returns the in-memory results.

use std::fs;
use std::path::{Path, PathBuf};

use ganselect::data::DatasetKind;
use ganselect::eval::{
    evaluate, evaluate_repeats, fmt_opt, mean_std, median, probe_model, quantize_int8, ProbeModel, ProbeQuantity,
    TensorScale,
};
use ganselect::{
    make_dataset, train, Checkpoint, DatasetSpec, EvalTarget, MetricReport, NetworkRole, ParamVector, ProbeReport,
    QuantReport, Tensor, TrainedModel,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepCell, SweepSpec};
use crate::error::{CliError, Result};
use crate::svg;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const QUANT_FILE: &str = "quantize.csv";
pub const QUANT_SCALES_FILE: &str = "quant_scales.csv";
pub const SWEEP_RESULTS_FILE: &str = "results.csv";
pub const SWEEP_SUMMARY_FILE: &str = "summary.csv";
pub const FIGURE1_FILE: &str = "figure1.csv";
pub const FIGURE1_CELLS_FILE: &str = "figure1_cells.csv";

/// Latent dimensions and hidden-layer counts of the figure-1 grid.
pub const FIGURE1_LATENT_DIMS: [usize; 3] = [1, 2, 10];
pub const FIGURE1_HIDDEN_LAYERS: [usize; 3] = [0, 1, 2];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn role_name(role: NetworkRole) -> &'static str {
    match role {
        NetworkRole::Generator => "raw",
        NetworkRole::GeneratorEma => "ema",
        NetworkRole::Critic => "critic",
    }
}

/// Training data plus the Gaussian the KL is measured against.
pub struct Target {
    pub data: Tensor,
    pub moments: Option<(Vec<f64>, Vec<Vec<f64>>)>,
}

impl Target {
    pub fn new(dataset: &DatasetSpec) -> Result<Self> {
        Ok(Target { data: make_dataset(dataset)?, moments: dataset.target_moments() })
    }

    pub fn eval_target(&self) -> EvalTarget<'_> {
        EvalTarget { data: &self.data, moments: self.moments.as_ref().map(|(m, c)| (&m[..], &c[..])) }
    }
}

/// `eval.repeats` metric reports for one generator, seeded from the
/// training seed.
pub fn evaluate_generator(cfg: &ExperimentConfig, params: &ParamVector, target: &Target) -> Result<Vec<MetricReport>> {
    Ok(evaluate_repeats(&cfg.generator, params, target.eval_target(), &cfg.eval, cfg.train.seed)?)
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub raw: Vec<MetricReport>,
    pub ema: Vec<MetricReport>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.push(NetworkRole::Generator, &cfg.generator, &self.model.generator);
        ckpt.push(NetworkRole::GeneratorEma, &cfg.generator, &self.model.ema);
        if let Some(c) = &self.model.critic {
            ckpt.push(NetworkRole::Critic, &cfg.critic, c);
        }
        ckpt
    }
}

/// Trains and evaluates without writing anything.
pub fn train_and_evaluate(cfg: &ExperimentConfig, target: &Target) -> Result<TrainOutcome> {
    log::info!(
        "training {} latent {} with {:?} for {} epochs (seed {})",
        cfg.generator.arch_name(),
        cfg.generator.input_dim,
        cfg.objective.kind,
        cfg.train.epochs,
        cfg.train.seed
    );
    let model = train(&cfg.generator, &cfg.critic, &cfg.objective, &cfg.train, &target.data)?;
    let raw = evaluate_generator(cfg, &model.generator, target)?;
    let ema = evaluate_generator(cfg, &model.ema, target)?;
    Ok(TrainOutcome { model, raw, ema })
}

/// Writes `checkpoint.bin`, `history.csv` and `metrics.csv` under `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let target = Target::new(&cfg.dataset)?;
    let outcome = train_and_evaluate(cfg, &target)?;
    create_dir(out)?;
    outcome.checkpoint(cfg).save(&out.join(CHECKPOINT_FILE))?;

    let history: Vec<Vec<String>> = outcome
        .model
        .history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                h.lr.to_string(),
                fmt_opt(h.critic_loss),
                fmt_opt(h.generator_loss),
                fmt_opt(h.frechet),
            ]
        })
        .collect();
    write_csv(
        &out.join(HISTORY_FILE),
        &strings(&["epoch", "lr", "critic_loss", "generator_loss", "frechet"]),
        &history,
    )?;
    write_metrics(&out.join(METRICS_FILE), &[("raw", &outcome.raw), ("ema", &outcome.ema)])?;
    Ok(outcome)
}

fn write_metrics(path: &Path, groups: &[(&str, &[MetricReport])]) -> Result<()> {
    let mut header = strings(&["params"]);
    header.extend(strings(&MetricReport::CSV_HEADER));
    let mut rows = Vec::new();
    for (name, reports) in groups {
        for r in *reports {
            let mut row = vec![name.to_string()];
            row.extend(r.csv_fields());
            rows.push(row);
        }
    }
    write_csv(path, &header, &rows)
}

fn generator_sections(ckpt: &Checkpoint) -> Vec<(NetworkRole, &ParamVector)> {
    ckpt.sections
        .iter()
        .filter(|s| s.role != NetworkRole::Critic)
        .map(|s| (s.role, &s.params))
        .collect()
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    for s in &ckpt.sections {
        let expected = if s.role == NetworkRole::Critic { &cfg.critic } else { &cfg.generator };
        if &s.spec != expected {
            return Err(CliError::config(
                if s.role == NetworkRole::Critic { "critic" } else { "generator" },
                format!("checkpoint holds {:?}, config describes {:?}", s.spec, expected),
            ));
        }
    }
    if ckpt.get(NetworkRole::Generator).is_none() {
        return Err(ganselect::Error::Checkpoint("no generator section".into()).into());
    }
    Ok(ckpt)
}

/// Metrics of every generator section of a checkpoint; writes `eval.csv`.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<(NetworkRole, Vec<MetricReport>)>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let target = Target::new(&cfg.dataset)?;
    let results = generator_sections(&ckpt)
        .into_iter()
        .map(|(role, params)| Ok((role, evaluate_generator(cfg, params, &target)?)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let groups: Vec<(&str, &[MetricReport])> = results.iter().map(|(r, m)| (role_name(*r), &m[..])).collect();
    write_metrics(&out.join(EVAL_FILE), &groups)?;
    Ok(results)
}

/// Real rows the probe compares against: a fresh draw of `probe.eval_batch`
/// rows for synthetic targets, the first rows of the data (cycled) for CSV.
pub fn probe_real_batch(cfg: &ExperimentConfig, data: &Tensor) -> Result<Tensor> {
    let n = cfg.probe.eval_batch;
    match cfg.dataset.kind {
        DatasetKind::Csv { .. } => Ok(data.select_rows(&(0..n).map(|i| i % data.rows()).collect::<Vec<_>>())),
        _ => Ok(make_dataset(&DatasetSpec { n, seed: cfg.dataset.seed.wrapping_add(1), ..cfg.dataset.clone() })?),
    }
}

/// Flatness probe of `generator` with the trained critic frozen.
pub fn probe_generator(
    cfg: &ExperimentConfig,
    generator: &ParamVector,
    critic: Option<&ParamVector>,
    data: &Tensor,
) -> Result<ProbeReport> {
    let real = probe_real_batch(cfg, data)?;
    let needs_critic = cfg.objective.kind.has_critic() && cfg.probe.quantity != ProbeQuantity::SlicedW2;
    let critic = match critic {
        Some(c) => Some((&cfg.critic, c)),
        None if needs_critic => return Err(ganselect::Error::Checkpoint("probe needs a critic section".into()).into()),
        None => None,
    };
    let model = ProbeModel { gen_spec: &cfg.generator, generator, critic, objective: &cfg.objective };
    Ok(probe_model(model, &real, &cfg.probe, cfg.train.seed)?)
}

fn probe_rows(report: &ProbeReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["baseline".into(), String::new(), String::new(), report.baseline.to_string(), "0".into()]];
    for (a, alpha) in report.alphas.iter().enumerate() {
        for (m, v) in report.values[a].iter().enumerate() {
            rows.push(vec![
                "perturbed".into(),
                alpha.to_string(),
                m.to_string(),
                v.to_string(),
                (v - report.baseline).to_string(),
            ]);
        }
    }
    rows
}

const PROBE_HEADER: [&str; 5] = ["kind", "alpha", "repeat", "value", "degradation"];

/// Probes the checkpoint's EMA generator (the raw one when absent); writes
/// `probe.csv`.
pub fn run_probe(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<ProbeReport> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let target = Target::new(&cfg.dataset)?;
    let generator = ckpt
        .get(NetworkRole::GeneratorEma)
        .or_else(|| ckpt.get(NetworkRole::Generator))
        .map(|s| &s.params)
        .expect("checked on load");
    let critic = ckpt.get(NetworkRole::Critic).map(|s| &s.params);
    let report = probe_generator(cfg, generator, critic, &target.data)?;
    create_dir(out)?;
    write_csv(&out.join(PROBE_FILE), &strings(&PROBE_HEADER), &probe_rows(&report))?;
    Ok(report)
}

/// Int8 round trip of every generator section, evaluated with the same
/// latents before and after.
pub fn quantize_and_evaluate(
    cfg: &ExperimentConfig,
    params: &ParamVector,
    target: &Target,
) -> Result<QuantReport> {
    let (quantized, tensors) = quantize_int8(params);
    let before = evaluate(&cfg.generator, params, target.eval_target(), &cfg.eval, cfg.train.seed)?;
    let after = evaluate(&cfg.generator, &quantized, target.eval_target(), &cfg.eval, cfg.train.seed)?;
    Ok(QuantReport { tensors, before, after })
}

/// Writes `quantize.csv` (before, after and `after − before` per metric) and
/// `quant_scales.csv` (per-tensor parameters).
pub fn run_quantize(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<(NetworkRole, QuantReport)>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let target = Target::new(&cfg.dataset)?;
    let reports = generator_sections(&ckpt)
        .into_iter()
        .map(|(role, params)| Ok((role, quantize_and_evaluate(cfg, params, &target)?)))
        .collect::<Result<Vec<_>>>()?;

    create_dir(out)?;
    let mut rows = Vec::new();
    let mut scale_rows = Vec::new();
    for (role, r) in &reports {
        for (((name, before), (_, after)), (_, delta)) in
            r.before.metrics().into_iter().zip(r.after.metrics()).zip(r.deltas())
        {
            rows.push(vec![role_name(*role).into(), name.into(), fmt_opt(before), fmt_opt(after), fmt_opt(delta)]);
        }
        scale_rows.extend(r.tensors.iter().map(|t: &TensorScale| {
            vec![
                role_name(*role).into(),
                t.layer.to_string(),
                t.block.into(),
                t.scale.to_string(),
                t.zero_point.to_string(),
                t.min.to_string(),
                t.max.to_string(),
                t.max_abs_error.to_string(),
            ]
        }));
    }
    write_csv(&out.join(QUANT_FILE), &strings(&["params", "metric", "before", "after", "delta"]), &rows)?;
    write_csv(
        &out.join(QUANT_SCALES_FILE),
        &strings(&["params", "layer", "block", "scale", "zero_point", "min", "max", "max_abs_error"]),
        &scale_rows,
    )?;
    Ok(reports)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| CliError::config("parallelism", e.to_string()))
}

/// Outcome of one sweep run (cell × repeat).
pub struct SweepRun {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub result: std::result::Result<TrainOutcome, String>,
}

fn run_metrics(reports: &[MetricReport]) -> Vec<Option<f64>> {
    (0..MetricReport::METRICS.len())
        .map(|k| mean_std(&reports.iter().filter_map(|r| r.metrics()[k].1).collect::<Vec<_>>()).0)
        .collect()
}

/// Trains every cell × repeat on a pool of `parallelism` workers. Each run
/// writes its own artifacts under `out/cells/cell{i}_rep{r}`; the merged
/// `results.csv` holds one row per run (metrics averaged over the eval
/// repeats) and `summary.csv` mean and sample std per cell. A failing run
/// fills the `error` column and the sweep continues.
pub fn run_sweep(spec: &SweepSpec, out: &Path, parallelism: usize) -> Result<Vec<SweepRun>> {
    spec.validate()?;
    let cells = spec.cells()?;
    create_dir(out)?;
    let jobs: Vec<(&SweepCell, usize)> = cells.iter().flat_map(|c| (0..spec.repeats).map(move |r| (c, r))).collect();
    let runs: Vec<SweepRun> = pool(parallelism)?.install(|| {
        jobs.par_iter()
            .map(|&(cell, repeat)| {
                let mut cfg = cell.config.clone();
                cfg.train.seed = cfg.train.seed.wrapping_add(repeat as u64);
                let dir = out.join("cells").join(format!("cell{}_rep{}", cell.index, repeat));
                let result = run_train(&cfg, &dir).map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::warn!("sweep cell {} repeat {repeat} failed: {e}", cell.index);
                }
                SweepRun { cell: cell.index, repeat, seed: cfg.train.seed, result }
            })
            .collect()
    });

    let axis_names: Vec<String> = spec.axes.keys().cloned().collect();
    let metric_cols: Vec<String> = ["raw", "ema"]
        .iter()
        .flat_map(|p| MetricReport::METRICS.iter().map(move |m| format!("{p}_{m}")))
        .collect();
    let axis_values = |c: &SweepCell| c.assignment.iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>();

    let mut header = strings(&["cell", "repeat", "seed"]);
    header.extend(axis_names.iter().cloned());
    header.extend(metric_cols.iter().cloned());
    header.push("error".into());
    let mut rows = Vec::new();
    let mut per_cell: Vec<Vec<Vec<Option<f64>>>> = vec![Vec::new(); cells.len()];
    for run in &runs {
        let mut row = vec![run.cell.to_string(), run.repeat.to_string(), run.seed.to_string()];
        row.extend(axis_values(&cells[run.cell]));
        match &run.result {
            Ok(o) => {
                let values: Vec<Option<f64>> = run_metrics(&o.raw).into_iter().chain(run_metrics(&o.ema)).collect();
                row.extend(values.iter().map(|v| fmt_opt(*v)));
                row.push(String::new());
                per_cell[run.cell].push(values);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), metric_cols.len()));
                row.push(e.clone());
            }
        }
        rows.push(row);
    }
    write_csv(&out.join(SWEEP_RESULTS_FILE), &header, &rows)?;

    let mut header = strings(&["cell"]);
    header.extend(axis_names.iter().cloned());
    header.extend(strings(&["runs", "failed"]));
    for m in &metric_cols {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let summary: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let ok = &per_cell[c.index];
            let mut row = vec![c.index.to_string()];
            row.extend(axis_values(c));
            row.push(spec.repeats.to_string());
            row.push((spec.repeats - ok.len()).to_string());
            for k in 0..metric_cols.len() {
                let (mean, std) = mean_std(&ok.iter().filter_map(|v| v[k]).collect::<Vec<_>>());
                row.push(fmt_opt(mean));
                row.push(fmt_opt(std));
            }
            row
        })
        .collect();
    write_csv(&out.join(SWEEP_SUMMARY_FILE), &header, &summary)?;

    let failed = runs.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        return Err(CliError::PartialSweep { failed, total: runs.len() });
    }
    Ok(runs)
}

/// Base configuration of the figure-1 grid: the 2D Gaussian task trained
/// with WGAN for 400 epochs, EMA decay 0.99, evaluated and probed on the
/// EMA generator with the sliced-W2 probe quantity.
pub fn figure1_base(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::gaussian_2d(2, 0);
    cfg.dataset.seed = seed;
    cfg.train.seed = seed;
    cfg.train.epochs = 400;
    cfg.train.ema_decay = 0.99;
    cfg.probe.quantity = ProbeQuantity::SlicedW2;
    cfg
}

#[derive(Clone, Debug)]
pub struct Figure1Cell {
    pub latent_dim: usize,
    pub hidden_layers: usize,
    /// Mean over eval repeats; `None` when the fitted covariance is singular.
    pub kl_raw: Option<f64>,
    pub kl_ema: Option<f64>,
    pub probe: ProbeReport,
}

impl Figure1Cell {
    pub fn arch(&self) -> String {
        format!("MLP{}", self.hidden_layers)
    }
}

fn mean_kl(reports: &[MetricReport]) -> Option<f64> {
    let vals: Vec<f64> = reports.iter().filter_map(|r| r.gaussian_kl).collect();
    (vals.len() == reports.len()).then(|| mean_std(&vals).0).flatten()
}

/// Trains and probes the 3×3 grid of latent dims × generator depths.
/// Writes `figure1.csv` (one baseline row and `|α|·M` perturbed rows per
/// cell), `figure1_cells.csv` and one SVG boxplot per cell.
pub fn run_figure1(base: &ExperimentConfig, out: &Path, parallelism: usize) -> Result<Vec<Figure1Cell>> {
    base.validate()?;
    let grid: Vec<(usize, usize)> =
        FIGURE1_LATENT_DIMS.iter().flat_map(|&p| FIGURE1_HIDDEN_LAYERS.iter().map(move |&l| (p, l))).collect();
    let target = Target::new(&base.dataset)?;
    let cells: Vec<Figure1Cell> = pool(parallelism)?.install(|| {
        grid.par_iter()
            .map(|&(p, l)| {
                let mut cfg = base.clone();
                cfg.generator.input_dim = p;
                cfg.generator.hidden_layers = l;
                let o = train_and_evaluate(&cfg, &target)?;
                let probe = probe_generator(&cfg, &o.model.ema, o.model.critic.as_ref(), &target.data)?;
                Ok(Figure1Cell { latent_dim: p, hidden_layers: l, kl_raw: mean_kl(&o.raw), kl_ema: mean_kl(&o.ema), probe })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    create_dir(out)?;
    let mut header = strings(&["latent_dim", "arch"]);
    header.extend(strings(&PROBE_HEADER));
    let rows: Vec<Vec<String>> = cells
        .iter()
        .flat_map(|c| {
            probe_rows(&c.probe).into_iter().map(move |r| {
                let mut row = vec![c.latent_dim.to_string(), c.arch()];
                row.extend(r);
                row
            })
        })
        .collect();
    write_csv(&out.join(FIGURE1_FILE), &header, &rows)?;

    let mut header = strings(&["latent_dim", "arch", "gaussian_kl_raw", "gaussian_kl_ema", "baseline"]);
    header.extend(base.probe.alphas.iter().map(|a| format!("median_degradation_{a}")));
    let summary: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut row = vec![
                c.latent_dim.to_string(),
                c.arch(),
                fmt_opt(c.kl_raw),
                fmt_opt(c.kl_ema),
                c.probe.baseline.to_string(),
            ];
            row.extend((0..c.probe.alphas.len()).map(|a| fmt_opt(median(&c.probe.degradations(a)))));
            row
        })
        .collect();
    write_csv(&out.join(FIGURE1_CELLS_FILE), &header, &summary)?;

    let y_label = match base.probe.quantity {
        ProbeQuantity::SlicedW2 => "sliced W2",
        ProbeQuantity::GeneratorLoss => "generator loss",
        ProbeQuantity::MatchingEstimate => "matching estimate",
    };
    for c in &cells {
        let groups: Vec<(String, Vec<f64>)> =
            c.probe.alphas.iter().zip(&c.probe.values).map(|(a, v)| (a.to_string(), v.clone())).collect();
        let title = format!("P = {}, {}", c.latent_dim, c.arch());
        let path = figure1_svg_path(out, c.latent_dim, c.hidden_layers);
        fs::write(&path, svg::boxplot(&title, y_label, &groups, c.probe.baseline)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(cells)
}

pub fn figure1_svg_path(out: &Path, latent_dim: usize, hidden_layers: usize) -> PathBuf {
    out.join(format!("figure1_P{latent_dim}_MLP{hidden_layers}.svg"))
}
