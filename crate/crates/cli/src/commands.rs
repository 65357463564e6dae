use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use cmts_core::csvio::write_series;
use cmts_core::metrics::{evaluate, EvalOptions};
use cmts_core::plant::plant_ground_truth;
use cmts_core::{
    discover, instance_normalize, CausalGraph, GraphJson, MetricReport, NormalizationParams, PowerRoles, SampleMatrix,
    Scalar, Scope, TimeSeriesMatrix,
};
use cmts_model::{CmModel, ModelConfig, Tokenizer};
use cmts_train::{
    build_pooled, history_csv, predict_sample, reconstruct_raw, smoothed_final, train, EpochLoss, SftSample,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision};
use crate::data::{self, Dataset, Manifest, ManifestEntry};
use crate::error::CliError;

/// Offset of the mask streams used for evaluation and inference, so they
/// never coincide with the training masks.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9;

pub fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

pub fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(p, bytes).map_err(|e| CliError::io(p, e))
}

fn write_json<S: Serialize>(p: &Path, v: &S) -> Result<(), CliError> {
    write_file(p, serde_json::to_string_pretty(v).expect("serializable") + "\n")
}

fn write_csv_day(p: &Path, series: &TimeSeriesMatrix<f64>, start: chrono::NaiveDateTime) -> Result<(), CliError> {
    let f = File::create(p).map_err(|e| CliError::io(p, e))?;
    write_series(BufWriter::new(f), series, start)?;
    Ok(())
}

/// Writes one CSV per generated day, the prior and ground-truth graphs and a
/// manifest pairing every day with every configured task.
pub fn gen(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let mut gen_cfg = cfg.clone();
    gen_cfg.data.csv.clear();
    gen_cfg.data.prior = None;
    let ds = data::load(&gen_cfg)?;
    let dir = cfg.out.join("data");
    create_dir(&dir)?;
    ds.days.par_iter().try_for_each(|d| write_csv_day(&dir.join(format!("{}.csv", d.name)), &d.raw, d.start))?;
    write_json(&cfg.out.join("prior.json"), &ds.prior.to_json())?;
    write_json(&cfg.out.join("ground_truth.json"), &plant_ground_truth()?.to_json())?;
    let entries = ds
        .days
        .iter()
        .flat_map(|d| {
            cfg.tasks.iter().map(move |t| ManifestEntry {
                csv: PathBuf::from("data").join(format!("{}.csv", d.name)),
                task: t.kind(),
                params: t.clone(),
                template: t.kind().name().to_string(),
            })
        })
        .collect();
    let manifest = Manifest {
        variables: ds.variables().to_vec(),
        resolution_minutes: ds.days[0].raw.resolution_minutes(),
        prior: Some(PathBuf::from("prior.json")),
        ground_truth: Some(PathBuf::from("ground_truth.json")),
        entries,
    };
    let path = cfg.out.join("manifest.json");
    write_json(&path, &manifest)?;
    println!("wrote {} days to {}", ds.days.len(), dir.display());
    Ok(path)
}

pub fn edge_table(g: &CausalGraph) -> String {
    let mut s = format!("{:<16} {:<16} {:>8}  prior\n", "from", "to", "weight");
    for e in g.edges() {
        s.push_str(&format!(
            "{:<16} {:<16} {:>8.4}  {}\n",
            g.nodes()[e.from],
            g.nodes()[e.to],
            e.weight,
            if e.prior { "yes" } else { "" }
        ));
    }
    s
}

fn discover_on(ds: &Dataset, days: &[TimeSeriesMatrix<f64>], cfg: &ExperimentConfig) -> Result<CausalGraph, CliError> {
    Ok(discover(&SampleMatrix::pooled(days), &ds.prior, &cfg.causal)?)
}

pub fn cmd_discover(cfg: &ExperimentConfig) -> Result<CausalGraph, CliError> {
    let ds = data::load(cfg)?;
    let g = discover_on(&ds, &ds.raws(), cfg)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("graph.json"), g.to_json_string() + "\n")?;
    print!("{}", edge_table(&g));
    Ok(g)
}

/// Model configuration with the variable count taken from the data.
pub fn model_config(cfg: &ExperimentConfig, n_vars: usize) -> ModelConfig {
    ModelConfig {
        n_vars,
        ..cfg.model.clone()
    }
}

/// The freshly initialized model `train` starts from.
pub fn init_model<T: Scalar>(cfg: &ExperimentConfig, n_vars: usize) -> Result<CmModel<T>, CliError> {
    Ok(CmModel::new(&model_config(cfg, n_vars), &mut ChaCha8Rng::seed_from_u64(cfg.seed()))?)
}

/// Metrics of one task, averaged over days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub days: usize,
    pub all: MetricReport,
    pub masked: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub loss_history: PathBuf,
    pub metrics: BTreeMap<String, TaskMetrics>,
    pub graph: PathBuf,
    pub checkpoint: PathBuf,
    pub wall_clock_seconds: f64,
    pub train_days: usize,
    pub eval_days: usize,
    pub first_epoch_loss: Option<f64>,
    pub smoothed_final_loss: Option<f64>,
}

/// Checkpoint metadata needed to use a model on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variables: Vec<String>,
    pub graph: GraphJson,
    pub l_fix: usize,
    pub precision: Precision,
    pub config_hash: String,
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Element-wise mean of reports sharing scope and variables.
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let per_var = |f: &dyn Fn(&MetricReport) -> &Vec<Option<f64>>| -> Vec<Option<f64>> {
        (0..reports[0].variables.len())
            .map(|v| mean_opt(reports.iter().map(|r| f(r)[v])))
            .collect()
    };
    MetricReport {
        scope: reports[0].scope,
        variables: reports[0].variables.clone(),
        mae: per_var(&|r| &r.mae),
        rmse: per_var(&|r| &r.rmse),
        fid: per_var(&|r| &r.fid),
        dtw: per_var(&|r| &r.dtw),
        mae_mean: reports.iter().map(|r| r.mae_mean).sum::<f64>() / n,
        rmse_mean: reports.iter().map(|r| r.rmse_mean).sum::<f64>() / n,
        fid_mean: mean_opt(reports.iter().map(|r| r.fid_mean)),
        dtw_mean: mean_opt(reports.iter().map(|r| r.dtw_mean)),
        corr_discrepancy: reports.iter().map(|r| r.corr_discrepancy).sum::<f64>() / n,
        corr_skipped_pairs: reports.iter().map(|r| r.corr_skipped_pairs).sum(),
        power_balance_mae: mean_opt(reports.iter().map(|r| r.power_balance_mae)),
    }
}

/// Normalized days with their scaling, for model input and for mapping
/// predictions back to native units.
type Prepared<T> = Vec<(TimeSeriesMatrix<T>, NormalizationParams<f64>)>;

fn prepare<T: Scalar>(days: &[TimeSeriesMatrix<f64>]) -> Result<Prepared<T>, CliError> {
    days.iter()
        .map(|d| {
            let (n, p) = instance_normalize(d)?;
            Ok((n.cast::<T>(), p))
        })
        .collect()
}

/// Raw-unit reconstruction of every sample: observed cells are the input
/// verbatim, masked cells come from the model.
fn reconstruct<T: Scalar + Send + Sync>(
    model: &CmModel<T>,
    samples: &[SftSample<T>],
    raw: &[&TimeSeriesMatrix<f64>],
    params: &[&NormalizationParams<f64>],
) -> Result<Vec<TimeSeriesMatrix<f64>>, CliError> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let pred = predict_sample(model, s)?.cast::<f64>();
            let truth = raw[i].truncated(s.valid_len);
            Ok(reconstruct_raw(&truth, params[i], &s.mask, &pred)?)
        })
        .collect()
}

struct TaskRun<T> {
    samples: Vec<SftSample<T>>,
    /// Index into the day list for each sample.
    day_of: Vec<usize>,
}

fn build_task_samples<T: Scalar>(
    prepared: &Prepared<T>,
    cfg: &ExperimentConfig,
    graph: Arc<CausalGraph>,
    seed: u64,
) -> Result<BTreeMap<String, TaskRun<T>>, CliError> {
    let tok = Tokenizer::default();
    let days: Vec<TimeSeriesMatrix<T>> = prepared.iter().map(|(d, _)| d.clone()).collect();
    let mut out = BTreeMap::new();
    for (k, task) in cfg.tasks.iter().enumerate() {
        let samples = build_pooled(&days, std::slice::from_ref(task), graph.clone(), &tok, &cfg.sample, seed + k as u64)?;
        out.insert(
            task.kind().name().to_string(),
            TaskRun {
                day_of: (0..samples.len()).collect(),
                samples,
            },
        );
    }
    Ok(out)
}

fn evaluate_tasks<T: Scalar + Send + Sync>(
    model: &CmModel<T>,
    raw: &[TimeSeriesMatrix<f64>],
    prepared: &Prepared<T>,
    graph: Arc<CausalGraph>,
    cfg: &ExperimentConfig,
) -> Result<BTreeMap<String, TaskMetrics>, CliError> {
    let roles = PowerRoles::by_name(raw[0].variable_names());
    let runs = build_task_samples(prepared, cfg, graph, cfg.seed().wrapping_add(EVAL_SEED_OFFSET))?;
    let mut out = BTreeMap::new();
    for (name, run) in runs {
        let raws: Vec<&TimeSeriesMatrix<f64>> = run.day_of.iter().map(|&i| &raw[i]).collect();
        let params: Vec<&NormalizationParams<f64>> = run.day_of.iter().map(|&i| &prepared[i].1).collect();
        let recon = reconstruct(model, &run.samples, &raws, &params)?;
        let mut all = Vec::new();
        let mut masked = Vec::new();
        for ((s, r), truth) in run.samples.iter().zip(&recon).zip(&raws) {
            let truth = truth.truncated(s.valid_len);
            let opts = EvalOptions {
                scope: Scope::All,
                roles,
                ..Default::default()
            };
            all.push(evaluate(r, &truth, Some(&s.mask), &opts)?);
            if let Ok(m) = evaluate(
                r,
                &truth,
                Some(&s.mask),
                &EvalOptions {
                    scope: Scope::Masked,
                    ..opts
                },
            ) {
                masked.push(m);
            }
        }
        out.insert(
            name,
            TaskMetrics {
                days: all.len(),
                all: mean_report(&all),
                masked: (!masked.is_empty()).then(|| mean_report(&masked)),
            },
        );
    }
    Ok(out)
}

pub fn cmd_train(cfg: &ExperimentConfig, config_hash: &str) -> Result<RunReport, CliError> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, config_hash),
        Precision::F64 => train_as::<f64>(cfg, config_hash),
    }
}

fn train_as<T: Scalar + Send + Sync>(cfg: &ExperimentConfig, config_hash: &str) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let ds = data::load(cfg)?;
    let raw = ds.raws();
    let n = raw.len();
    let n_eval = if n >= 2 {
        ((n as f64 * cfg.data.holdout_fraction).round() as usize).min(n - 1)
    } else {
        0
    };
    let (train_raw, eval_raw) = raw.split_at(n - n_eval);
    // with no held-out days the report falls back to the training days
    let eval_raw = if eval_raw.is_empty() { train_raw } else { eval_raw };

    let graph = Arc::new(discover_on(&ds, train_raw, cfg)?);
    let train_days = prepare::<T>(train_raw)?;
    let norm: Vec<TimeSeriesMatrix<T>> = train_days.iter().map(|(d, _)| d.clone()).collect();
    let samples = build_pooled(&norm, &cfg.tasks, graph.clone(), &Tokenizer::default(), &cfg.sample, cfg.seed())?;
    let mut model = init_model::<T>(cfg, ds.variables().len())?;
    let history: Vec<EpochLoss> = train(&mut model, &samples, &cfg.train, |e| {
        eprintln!("epoch {:>4}  l_acc {:.6}  l_mask {:.6}  total {:.6}", e.epoch, e.acc, e.mask, e.total);
    })?;

    create_dir(&cfg.out)?;
    let loss_path = cfg.out.join("loss.csv");
    write_file(&loss_path, history_csv(&history))?;
    let graph_path = cfg.out.join("graph.json");
    write_file(&graph_path, graph.to_json_string() + "\n")?;
    let ckpt_path = cfg.out.join("checkpoint.ckpt");
    let meta = CheckpointMeta {
        variables: ds.variables().to_vec(),
        graph: graph.to_json(),
        l_fix: cfg.sample.l_fix,
        precision: cfg.precision,
        config_hash: config_hash.to_string(),
    };
    {
        let f = File::create(&ckpt_path).map_err(|e| CliError::io(&ckpt_path, e))?;
        let mut w = BufWriter::new(f);
        model.save(&mut w, serde_json::to_value(&meta).expect("meta serializes"))?;
        w.flush().map_err(|e| CliError::io(&ckpt_path, e))?;
    }

    let eval_days = prepare::<T>(eval_raw)?;
    let metrics = evaluate_tasks(&model, eval_raw, &eval_days, graph, cfg)?;
    let report = RunReport {
        config_hash: config_hash.to_string(),
        loss_history: loss_path,
        metrics,
        graph: graph_path,
        checkpoint: ckpt_path,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        train_days: train_raw.len(),
        eval_days: eval_raw.len(),
        first_epoch_loss: history.first().map(|e| e.total),
        smoothed_final_loss: (!history.is_empty()).then(|| smoothed_final(&history, 5)),
    };
    write_json(&cfg.out.join("report.json"), &report)?;
    println!("{}", cfg.out.join("report.json").display());
    Ok(report)
}

/// Loads a checkpoint and checks it against the data it will be applied to.
pub fn load_checkpoint<T: Scalar>(path: &Path, ds: &Dataset) -> Result<(CmModel<T>, CheckpointMeta), CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (model, meta) = CmModel::<T>::load(std::io::BufReader::new(f))?;
    let meta: CheckpointMeta = serde_json::from_value(meta)
        .map_err(|e| CliError::Compatibility(format!("{}: checkpoint metadata: {e}", path.display())))?;
    if meta.variables != ds.variables() {
        return Err(CliError::Compatibility(format!(
            "checkpoint variables {:?} do not match data variables {:?}",
            meta.variables,
            ds.variables()
        )));
    }
    if model.cfg.n_vars != meta.variables.len() {
        return Err(CliError::Compatibility("checkpoint model and metadata disagree".into()));
    }
    Ok((model, meta))
}

fn checkpoint_precision(path: &Path) -> Result<Precision, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let ck = cmts_nn::read_checkpoint::<f64, _>(std::io::BufReader::new(f))
        .map_err(|e| CliError::Compatibility(format!("{}: {e}", path.display())))?;
    Ok(ck
        .config
        .get("meta")
        .and_then(|m| m.get("precision"))
        .and_then(|p| serde_json::from_value(p.clone()).ok())
        .unwrap_or_default())
}

/// Applies the checkpoint's sequence length to `cfg`.
fn with_checkpoint_len(cfg: &ExperimentConfig, meta: &CheckpointMeta) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.sample.l_fix = meta.l_fix;
    c
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<BTreeMap<String, TaskMetrics>, CliError> {
    match checkpoint_precision(checkpoint)? {
        Precision::F32 => eval_as::<f32>(cfg, checkpoint),
        Precision::F64 => eval_as::<f64>(cfg, checkpoint),
    }
}

fn eval_as<T: Scalar + Send + Sync>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<BTreeMap<String, TaskMetrics>, CliError> {
    let ds = data::load(cfg)?;
    let (model, meta) = load_checkpoint::<T>(checkpoint, &ds)?;
    let cfg = with_checkpoint_len(cfg, &meta);
    let graph = Arc::new(CausalGraph::from_json(&meta.graph).map_err(|e| CliError::Compatibility(e.to_string()))?);
    let raw = ds.raws();
    let prepared = prepare::<T>(&raw)?;
    let metrics = evaluate_tasks(&model, &raw, &prepared, graph, &cfg)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    for (task, m) in &metrics {
        println!(
            "{task:<12} days {:>4}  mae(all) {:.6}  mae(masked) {}",
            m.days,
            m.all.mae_mean,
            m.masked.as_ref().map_or("-".to_string(), |r| format!("{:.6}", r.mae_mean))
        );
    }
    Ok(metrics)
}

/// Writes the reconstruction and its mask for every day and task; returns
/// the reconstructed CSV paths.
pub fn cmd_infer(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<PathBuf>, CliError> {
    match checkpoint_precision(checkpoint)? {
        Precision::F32 => infer_as::<f32>(cfg, checkpoint),
        Precision::F64 => infer_as::<f64>(cfg, checkpoint),
    }
}

fn infer_as<T: Scalar + Send + Sync>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ds = data::load(cfg)?;
    let (model, meta) = load_checkpoint::<T>(checkpoint, &ds)?;
    let cfg = with_checkpoint_len(cfg, &meta);
    let graph = Arc::new(CausalGraph::from_json(&meta.graph).map_err(|e| CliError::Compatibility(e.to_string()))?);
    let raw = ds.raws();
    let prepared = prepare::<T>(&raw)?;
    let runs = build_task_samples(&prepared, &cfg, graph, cfg.seed().wrapping_add(EVAL_SEED_OFFSET))?;
    let mut written = Vec::new();
    for (task, run) in runs {
        let dir = cfg.out.join("infer").join(&task);
        create_dir(&dir)?;
        let raws: Vec<&TimeSeriesMatrix<f64>> = run.day_of.iter().map(|&i| &raw[i]).collect();
        let params: Vec<&NormalizationParams<f64>> = run.day_of.iter().map(|&i| &prepared[i].1).collect();
        let recon = reconstruct(&model, &run.samples, &raws, &params)?;
        for ((s, r), &i) in run.samples.iter().zip(&recon).zip(&run.day_of) {
            let day = &ds.days[i];
            let path = dir.join(format!("{}.csv", day.name));
            write_csv_day(&path, r, day.start)?;
            write_file(&dir.join(format!("{}.mask.csv", day.name)), s.mask.to_csv())?;
            written.push(path);
        }
    }
    println!("wrote {} reconstructions under {}", written.len(), cfg.out.join("infer").display());
    Ok(written)
}
