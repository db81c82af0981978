//! The work behind each subcommand. Everything here takes a validated config
//! and writes only below its output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ewcgan_core::adapt::{mean_paired_distance, paired_generate, weight_change_rate, DRIFT_EPS};
use ewcgan_core::datasets::{apply_transform, draw_few_shot};
use ewcgan_core::fisher::{estimate_fisher, per_layer_mean, LayerFisher};
use ewcgan_core::gan::{initial_checkpoint, TrainConfig};
use ewcgan_core::metrics::{evaluate, MetricsReport};
use ewcgan_core::models::ParamKind;
use ewcgan_core::{latent_batch, stream_rng, streams, Checkpoint, FisherDiagonal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RunLayout};
use crate::error::{CliError, Result};
use crate::jobs::{absolute, require, run_id, CellJob, FisherJob, PretrainJob, PretrainSummary, SweepRow};
use crate::manifest::{Manifest, Status};

const PRETRAIN_HINT: &str = "run `ewcgan pretrain` first";
const FISHER_HINT: &str = "run `ewcgan fisher` first";
const SWEEP_HINT: &str = "run `ewcgan sweep` with this config first";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Failed(format!("worker pool: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub seed: u64,
    pub fd: f64,
    pub coverage: f64,
    pub hq_fraction: f64,
    pub diversity: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub seed: u64,
    pub digest: String,
}

/// Highest mode coverage, then lowest Fréchet distance, then lowest seed.
pub fn select_source(summaries: &[PretrainSummary]) -> Option<&PretrainSummary> {
    summaries.iter().min_by(|a, b| {
        b.coverage
            .total_cmp(&a.coverage)
            .then(a.fd.total_cmp(&b.fd))
            .then(a.seed.cmp(&b.seed))
    })
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub summaries: Vec<PretrainSummary>,
    pub selected: u64,
    pub source: PathBuf,
}

pub fn pretrain(cfg: &ExperimentConfig, resume: bool) -> Result<PretrainOutcome> {
    let layout = cfg.layout();
    let source = cfg.source.spec()?;
    let jobs: Vec<PretrainJob> = cfg
        .pretrain_seeds
        .iter()
        .map(|&seed| PretrainJob {
            source: source.clone(),
            train: TrainConfig {
                seed,
                ..cfg.pretrain.clone()
            },
            eval: cfg.eval.clone(),
        })
        .collect();
    let summaries = pool(cfg.workers())?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let dir = layout.pretrain_seed_dir(job.train.seed);
                if resume && Manifest::completed(&dir).is_some() {
                    if let Some(s) = read_pretrain_summary(&dir, job.train.seed) {
                        return Ok(s);
                    }
                }
                job.execute(&dir)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = select_source(&summaries).expect("at least one seed").seed;
    let rows: Vec<SelectionRow> = summaries
        .iter()
        .map(|s| SelectionRow {
            seed: s.seed,
            fd: s.fd,
            coverage: s.coverage,
            hq_fraction: s.hq_fraction,
            diversity: s.diversity,
            selected: s.seed == best,
        })
        .collect();
    write_rows(&layout.selection_csv(), &rows)?;
    let src = layout.pretrain_seed_dir(best).join("checkpoint.bin");
    let dst = layout.source_checkpoint();
    std::fs::copy(&src, &dst).map_err(|e| CliError::io(&dst, e))?;
    let record = SourceRecord {
        seed: best,
        digest: Checkpoint::load(&dst)?.digest(),
    };
    let path = layout.pretrain_dir().join("source.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record).expect("record") + "\n")
        .map_err(|e| CliError::io(path, e))?;
    Ok(PretrainOutcome {
        summaries,
        selected: best,
        source: dst,
    })
}

fn read_pretrain_summary(dir: &Path, seed: u64) -> Option<PretrainSummary> {
    let text = std::fs::read_to_string(dir.join("final_metrics.json")).ok()?;
    let m: MetricsReport = serde_json::from_str(&text).ok()?;
    Some(PretrainSummary {
        seed,
        fd: m.frechet_distance,
        coverage: m.mode_coverage,
        hq_fraction: m.high_quality_fraction,
        diversity: m.diversity,
    })
}

pub fn fisher(cfg: &ExperimentConfig, resume: bool) -> Result<FisherDiagonal> {
    let layout = cfg.layout();
    require(&layout.source_checkpoint(), PRETRAIN_HINT)?;
    let job = FisherJob {
        source_checkpoint: absolute(&layout.source_checkpoint())?,
        fisher: cfg.fisher.clone(),
    };
    let dir = layout.fisher_dir();
    if resume {
        if let Some(m) = Manifest::completed(&dir) {
            if m.config_digest == ewcgan_core::digest::json_digest(&job) {
                return Ok(FisherDiagonal::load(&layout.fisher_file())?);
            }
        }
    }
    job.execute(&dir)
}

fn cell(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    target_index: usize,
    transform: &ewcgan_core::TargetTransform,
    shots: usize,
    lambda: f64,
    seed: u64,
) -> Result<CellJob> {
    Ok(CellJob {
        run_id: run_id(target_index, shots, lambda, seed),
        lambda,
        shots,
        seed,
        target_index,
        transform: transform.clone(),
        source: cfg.source.spec()?,
        adapt: cfg.adapt.clone(),
        eval: cfg.eval.clone(),
        correspondence_samples: cfg.correspondence_samples,
        source_checkpoint: absolute(&layout.source_checkpoint())?,
        fisher: absolute(&layout.fisher_file())?,
    })
}

fn require_inputs(layout: &RunLayout) -> Result<()> {
    require(&layout.source_checkpoint(), PRETRAIN_HINT)?;
    require(&layout.fisher_file(), FISHER_HINT)
}

/// A single adaptation run at the base λ, shots and seed of the config.
pub fn adapt(cfg: &ExperimentConfig, resume: bool) -> Result<SweepRow> {
    let layout = cfg.layout();
    require_inputs(&layout)?;
    let job = cell(cfg, &layout, 0, &cfg.target, cfg.shots, cfg.adapt.lambda, cfg.adapt.seed)?;
    let dir = layout.adapt_dir().join(&job.run_id);
    if resume {
        if let Some(row) = CellJob::completed_row(&dir) {
            return Ok(row);
        }
    }
    job.execute(&dir)
}

/// Scores a checkpoint against the config's target (or its source). With a
/// few-shot seed, memorization is measured against that seed's few-shot draw.
pub fn eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    fewshot_seed: Option<u64>,
    against_source: bool,
) -> Result<MetricsReport> {
    require(checkpoint, "no such checkpoint")?;
    let ck = Checkpoint::load(checkpoint)?;
    let source = cfg.source.spec()?;
    let target = if against_source {
        source
    } else {
        apply_transform(&source, &cfg.target)?
    };
    let shots = fewshot_seed
        .map(|s| draw_few_shot(&target, cfg.shots, s))
        .transpose()?;
    Ok(evaluate(
        &ck.generator,
        &ck.g,
        &target,
        shots.as_ref().map(|f| &f.samples),
        &cfg.eval,
    )?)
}

/// Mean and standard error of the ok cells sharing (target, shots, λ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: usize,
    pub shots: usize,
    pub lambda: f64,
    pub n: usize,
    pub fd_mean: f64,
    pub fd_se: f64,
    pub diversity_mean: f64,
    pub diversity_se: f64,
    pub coverage_mean: f64,
    pub coverage_se: f64,
    pub hq_fraction_mean: f64,
    pub hq_fraction_se: f64,
    pub memorization_mean: f64,
    pub memorization_se: f64,
    pub delta_mean: f64,
    pub delta_se: f64,
    pub paired_distance_mean: f64,
    pub paired_distance_se: f64,
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize, f64)> = Vec::new();
    for r in rows {
        let k = (r.target, r.shots, r.lambda);
        if !keys.iter().any(|q| q.0 == k.0 && q.1 == k.1 && q.2.to_bits() == k.2.to_bits()) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(target, shots, lambda)| {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| {
                    r.status == Status::Ok
                        && r.target == target
                        && r.shots == shots
                        && r.lambda.to_bits() == lambda.to_bits()
                })
                .collect();
            let stat = |f: fn(&SweepRow) -> f64| mean_se(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (fd_mean, fd_se) = stat(|r| r.fd);
            let (diversity_mean, diversity_se) = stat(|r| r.diversity);
            let (coverage_mean, coverage_se) = stat(|r| r.coverage);
            let (hq_fraction_mean, hq_fraction_se) = stat(|r| r.hq_fraction);
            let (memorization_mean, memorization_se) = stat(|r| r.memorization);
            let (delta_mean, delta_se) = stat(|r| r.delta);
            let (paired_distance_mean, paired_distance_se) = stat(|r| r.paired_distance);
            SummaryRow {
                target,
                shots,
                lambda,
                n: cell.len(),
                fd_mean,
                fd_se,
                diversity_mean,
                diversity_se,
                coverage_mean,
                coverage_se,
                hq_fraction_mean,
                hq_fraction_se,
                memorization_mean,
                memorization_se,
                delta_mean,
                delta_se,
                paired_distance_mean,
                paired_distance_se,
            }
        })
        .collect()
}

/// λ with the lowest mean Fréchet distance in a finished sweep; ties go to
/// the smaller λ.
pub fn lambda_star(sweep_dir: &Path) -> Result<f64> {
    let path = sweep_dir.join("summary.csv");
    require(&path, SWEEP_HINT)?;
    let rows: Vec<SummaryRow> = read_rows(&path)?;
    rows.iter()
        .filter(|r| r.fd_mean.is_finite())
        .min_by(|a, b| a.fd_mean.total_cmp(&b.fd_mean).then(a.lambda.total_cmp(&b.lambda)))
        .map(|r| r.lambda)
        .ok_or_else(|| CliError::Failed(format!("{} has no finished cells", path.display())))
}

pub fn sweep_lambdas(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let mut lambdas = cfg.sweep.lambdas.clone().unwrap_or_else(|| {
        if cfg.sweep.lambda_star_from.is_some() {
            Vec::new()
        } else {
            vec![cfg.adapt.lambda]
        }
    });
    if let Some(from) = &cfg.sweep.lambda_star_from {
        lambdas.push(lambda_star(&cfg.layout().sweep_dir(from))?);
    }
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup_by(|a, b| a.to_bits() == b.to_bits());
    Ok(lambdas)
}

/// Cells in grid order: target, then shots, then λ, then seed.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<CellJob>> {
    let layout = cfg.layout();
    let lambdas = sweep_lambdas(cfg)?;
    let shots = cfg.sweep.shots.clone().unwrap_or_else(|| vec![cfg.shots]);
    let ladder = cfg
        .sweep
        .ladder
        .clone()
        .unwrap_or_else(|| vec![cfg.target.clone()]);
    let mut cells = Vec::new();
    for (ti, t) in ladder.iter().enumerate() {
        for &k in &shots {
            for &l in &lambdas {
                for &s in &cfg.sweep.seeds {
                    cells.push(cell(cfg, &layout, ti, t, k, l, s)?);
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepOutcome {
    pub fn worst_status(&self) -> Status {
        if self.rows.iter().any(|r| r.status == Status::Failed) {
            Status::Failed
        } else if self.rows.iter().any(|r| r.status == Status::Diverged) {
            Status::Diverged
        } else {
            Status::Ok
        }
    }
}

pub fn sweep(cfg: &ExperimentConfig, resume: bool) -> Result<SweepOutcome> {
    let layout = cfg.layout();
    require_inputs(&layout)?;
    let cells = plan(cfg)?;
    let dir = layout.sweep_dir(&cfg.name);
    let cells_dir = dir.join("cells");
    let rows: Vec<SweepRow> = pool(cfg.workers())?.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let d = cells_dir.join(&c.run_id);
                if resume {
                    if let Some(row) = CellJob::completed_row(&d) {
                        return Ok(row);
                    }
                }
                match c.execute(&d) {
                    Ok(row) => Ok(row),
                    Err(CliError::Core(ewcgan_core::Error::Divergence { .. })) => {
                        Ok(c.failed_row(Status::Diverged))
                    }
                    Err(e @ (CliError::Dependency { .. } | CliError::Io { .. })) => Err(e),
                    Err(_) => Ok(c.failed_row(Status::Failed)),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(&rows);
    write_rows(&dir.join("sweep.csv"), &rows)?;
    write_rows(&dir.join("summary.csv"), &summary)?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, toml::to_string(cfg).expect("config serializes"))
        .map_err(|e| CliError::io(config_path, e))?;
    Ok(SweepOutcome { dir, rows, summary })
}

fn finished_rows(dir: &Path) -> Result<Vec<SweepRow>> {
    let path = dir.join("sweep.csv");
    require(&path, SWEEP_HINT)?;
    Ok(read_rows::<SweepRow>(&path)?
        .into_iter()
        .filter(|r| r.status == Status::Ok)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub run_id: String,
    pub lambda: f64,
    pub shots: usize,
    pub target: usize,
    pub seed: u64,
    pub mean_paired_distance: f64,
}

#[derive(Serialize)]
struct PairedSample {
    source_x: f64,
    source_y: f64,
    adapted_x: f64,
    adapted_y: f64,
}

/// Paired source/adapted outputs for every finished cell of the config's sweep.
pub fn correspondence(cfg: &ExperimentConfig) -> Result<Vec<PairedRow>> {
    let layout = cfg.layout();
    require(&layout.source_checkpoint(), PRETRAIN_HINT)?;
    let dir = layout.sweep_dir(&cfg.name);
    let rows = finished_rows(&dir)?;
    let source = Checkpoint::load(&layout.source_checkpoint())?;
    let out_dir = dir.join("correspondence");
    let mut summary = Vec::new();
    for r in rows {
        let adapted = Checkpoint::load(&dir.join("cells").join(&r.run_id).join("checkpoint.bin"))?;
        let z = latent_batch(
            &mut stream_rng(r.seed, streams::EVAL_LATENT),
            cfg.correspondence_samples,
            source.latent_dim(),
        );
        let (a, b) = paired_generate(&source, &adapted, &z)?;
        let samples: Vec<PairedSample> = (0..a.rows())
            .map(|i| PairedSample {
                source_x: a.row(i)[0],
                source_y: a.row(i)[1],
                adapted_x: b.row(i)[0],
                adapted_y: b.row(i)[1],
            })
            .collect();
        write_rows(&out_dir.join(format!("{}.csv", r.run_id)), &samples)?;
        summary.push(PairedRow {
            run_id: r.run_id.clone(),
            lambda: r.lambda,
            shots: r.shots,
            target: r.target,
            seed: r.seed,
            mean_paired_distance: mean_paired_distance(&a, &b)?,
        });
    }
    write_rows(&out_dir.join("summary.csv"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDeltaRow {
    pub model: String,
    pub layer: String,
    pub kind: ParamKind,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFisherRow {
    pub model: String,
    pub layer: String,
    pub kind: ParamKind,
    pub mean: f64,
    pub max: f64,
    pub fraction_of_total: f64,
}

fn fisher_rows(model: &str, layers: Vec<LayerFisher>) -> impl Iterator<Item = LayerFisherRow> + '_ {
    layers.into_iter().map(move |l| LayerFisherRow {
        model: model.to_string(),
        layer: l.layer,
        kind: l.kind,
        mean: l.mean,
        max: l.max,
        fraction_of_total: l.fraction_of_total,
    })
}

fn delta_rows(model: &str, before: &Checkpoint, after: &Checkpoint) -> Result<Vec<LayerDeltaRow>> {
    let change = weight_change_rate(&before.g, &after.g, DRIFT_EPS)?;
    let names: Vec<String> = after.g.layout().weights().map(|e| e.layer.clone()).collect();
    let weights = names.iter().zip(&change.per_layer).map(|(n, d)| (n, ParamKind::Weight, *d));
    let biases = names.iter().zip(&change.per_layer_bias).map(|(n, d)| (n, ParamKind::Bias, *d));
    Ok(weights
        .chain(biases)
        .map(|(layer, kind, delta)| LayerDeltaRow {
            model: model.to_string(),
            layer: layer.clone(),
            kind,
            delta,
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct WeightAnalysis {
    pub delta: Vec<LayerDeltaRow>,
    pub fisher: Vec<LayerFisherRow>,
}

/// Per-layer weight change and Fisher profiles of the pretrained source
/// (change measured from initialization) and of one adapted model per λ
/// (change measured from the source).
pub fn analyze_weights(cfg: &ExperimentConfig) -> Result<WeightAnalysis> {
    let layout = cfg.layout();
    require_inputs(&layout)?;
    let record_path = layout.pretrain_dir().join("source.json");
    require(&record_path, PRETRAIN_HINT)?;
    let record: SourceRecord = serde_json::from_str(
        &std::fs::read_to_string(&record_path).map_err(|e| CliError::io(&record_path, e))?,
    )
    .map_err(|e| CliError::Failed(format!("{}: {e}", record_path.display())))?;
    let dir = layout.sweep_dir(&cfg.name);
    let rows = finished_rows(&dir)?;

    let source = Checkpoint::load(&layout.source_checkpoint())?;
    let init = initial_checkpoint(&TrainConfig {
        seed: record.seed,
        ..cfg.pretrain.clone()
    })?;
    let source_fisher = FisherDiagonal::load(&layout.fisher_file())?;

    let mut delta = delta_rows("pretrained", &init, &source)?;
    let mut fisher: Vec<LayerFisherRow> =
        fisher_rows("pretrained", per_layer_mean(&source_fisher, source.g.layout())?).collect();

    // one representative cell per λ: first target, shots and seed in the sweep
    let mut seen: BTreeMap<u64, ()> = BTreeMap::new();
    let first = rows.first().map(|r| (r.target, r.shots, r.seed));
    for r in &rows {
        if Some((r.target, r.shots, r.seed)) != first || seen.insert(r.lambda.to_bits(), ()).is_some() {
            continue;
        }
        let model = format!("adapted_l{}", r.lambda);
        let adapted = Checkpoint::load(&dir.join("cells").join(&r.run_id).join("checkpoint.bin"))?;
        delta.extend(delta_rows(&model, &source, &adapted)?);
        let f = estimate_fisher(&adapted, &cfg.fisher)?;
        fisher.extend(fisher_rows(&model, per_layer_mean(&f, adapted.g.layout())?));
    }
    let out = dir.join("weights");
    write_rows(&out.join("layer_delta.csv"), &delta)?;
    write_rows(&out.join("layer_fisher.csv"), &fisher)?;
    Ok(WeightAnalysis { delta, fisher })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(seed: u64, coverage: f64, fd: f64) -> PretrainSummary {
        PretrainSummary {
            seed,
            fd,
            coverage,
            hq_fraction: 0.5,
            diversity: 2.0,
        }
    }

    #[test]
    fn selection_prefers_coverage_then_distance() {
        let s = [summary(0, 0.75, 0.1), summary(1, 0.875, 0.4), summary(2, 0.875, 0.2)];
        assert_eq!(select_source(&s).unwrap().seed, 2);
        let tie = [summary(4, 1.0, 0.2), summary(3, 1.0, 0.2)];
        assert_eq!(select_source(&tie).unwrap().seed, 3);
    }

    #[test]
    fn mean_and_standard_error() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_se(&[]).0.is_nan());
    }

    fn row(lambda: f64, seed: u64, fd: f64, status: Status) -> SweepRow {
        SweepRow {
            run_id: run_id(0, 10, lambda, seed),
            lambda,
            shots: 10,
            seed,
            fd,
            diversity: 1.0,
            coverage: 1.0,
            hq_fraction: 1.0,
            memorization: 0.0,
            target: 0,
            delta: 0.0,
            paired_distance: 0.0,
            ewc_penalty: 0.0,
            status,
        }
    }

    #[test]
    fn summaries_group_cells_and_skip_failures() {
        let rows = [
            row(0.0, 0, 1.0, Status::Ok),
            row(0.0, 1, 3.0, Status::Ok),
            row(10.0, 0, 0.5, Status::Ok),
            row(10.0, 1, f64::NAN, Status::Diverged),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].n, s[0].fd_mean), (2, 2.0));
        assert_eq!((s[1].n, s[1].fd_mean), (1, 0.5));

        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join("summary.csv"), &s).unwrap();
        assert_eq!(lambda_star(dir.path()).unwrap(), 10.0);
        let back: Vec<SummaryRow> = read_rows(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sweep_axes_expand_in_grid_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::parse("[sweep]\nlambdas = [10.0, 0.0]\nseeds = [1, 2]\nshots = [1, 5]").unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        let cells = plan(&cfg).unwrap();
        let ids: Vec<&str> = cells.iter().map(|c| c.run_id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "t0_k1_l0_s1", "t0_k1_l0_s2", "t0_k1_l10_s1", "t0_k1_l10_s2",
                "t0_k5_l0_s1", "t0_k5_l0_s2", "t0_k5_l10_s1", "t0_k5_l10_s2"
            ]
        );
    }

    #[test]
    fn missing_inputs_name_the_prerequisite() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.output_dir = dir.path().to_path_buf();
        for err in [sweep(&cfg, false).unwrap_err(), fisher(&cfg, false).unwrap_err()] {
            assert_eq!(err.exit_code(), crate::error::exit::DEPENDENCY);
            assert!(err.to_string().contains("pretrain"), "{err}");
        }
        cfg.sweep.lambda_star_from = Some("elsewhere".into());
        assert_eq!(plan(&cfg).unwrap_err().exit_code(), crate::error::exit::DEPENDENCY);
    }
}
