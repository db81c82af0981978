//! Figures and a markdown summary built from whatever a run directory holds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ewcgan_core::models::ParamKind;
use serde::Deserialize;

use crate::commands::{read_rows, LayerDeltaRow, LayerFisherRow, PairedRow, SelectionRow, SourceRecord, SummaryRow};
use crate::config::RunLayout;
use crate::error::{CliError, Result};
use crate::jobs::SweepRow;
use crate::manifest::Status;
use crate::svg::{bar_chart, line_chart, pair_scatter, Axes, Series};

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub subject: String,
    pub statement: String,
    pub holds: bool,
}

impl Observation {
    fn line(&self) -> String {
        let verdict = if self.holds { "holds" } else { "does not hold" };
        format!("- {}: {} ({verdict})", self.subject, self.statement)
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub figures: Vec<PathBuf>,
    pub observations: Vec<Observation>,
}

#[derive(Deserialize)]
struct TrainLogRow {
    iteration: u64,
    fd: f64,
    coverage: f64,
}

#[derive(Deserialize)]
struct FisherLayer {
    layer: String,
    kind: ParamKind,
    mean: f64,
    max: f64,
    fraction_of_total: f64,
}

fn read_if<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<Vec<T>>> {
    if path.exists() {
        read_rows(path).map(Some)
    } else {
        Ok(None)
    }
}

/// (iteration, delta_overall) pairs of one drift log.
fn read_drift(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Failed(format!("{}: no {name} column", path.display())))
    };
    let (it, delta) = (col("iteration")?, col("delta_overall")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
        out.push((num(it), num(delta)));
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        crate::svg::tick(v)
    }
}

fn pm(mean: f64, se: f64) -> String {
    format!("{} ± {}", fmt(mean), fmt(se))
}

fn lambda_label(l: f64) -> String {
    format!("λ={l}")
}

struct Writer {
    dir: PathBuf,
    figures: Vec<PathBuf>,
}

impl Writer {
    fn figure(&mut self, name: &str, svg: String) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        self.figures.push(path);
        Ok(())
    }
}

fn weight_layers<'a, T>(rows: &'a [T], kind: impl Fn(&T) -> ParamKind) -> Vec<&'a T> {
    rows.iter().filter(|r| kind(r) == ParamKind::Weight).collect()
}

fn argmax(values: &[(String, f64)]) -> Option<&str> {
    values
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|v| v.0.as_str())
}

fn argmin(values: &[(String, f64)]) -> Option<&str> {
    values
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|v| v.0.as_str())
}

fn last_layer(values: &[(String, f64)]) -> Option<&str> {
    values.last().map(|v| v.0.as_str())
}

pub fn report(run_dir: &Path) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(CliError::Dependency {
            path: run_dir.to_path_buf(),
            hint: "nothing to report; run `ewcgan pretrain` first".into(),
        });
    }
    let layout = RunLayout::new(run_dir);
    let dir = layout.report_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut w = Writer {
        dir: dir.clone(),
        figures: Vec::new(),
    };
    let mut md = String::from("# Run report\n\n");
    let mut observations = Vec::new();
    let mut found = false;

    // source model
    if let Some(selection) = read_if::<SelectionRow>(&layout.selection_csv())? {
        found = true;
        md.push_str("## Source model\n\n| seed | FD | coverage | HQ fraction | diversity | selected |\n|---|---|---|---|---|---|\n");
        let mut curves = Vec::new();
        for s in &selection {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                s.seed,
                fmt(s.fd),
                fmt(s.coverage),
                fmt(s.hq_fraction),
                fmt(s.diversity),
                if s.selected { "yes" } else { "" }
            );
            if let Some(log) = read_if::<TrainLogRow>(&layout.pretrain_seed_dir(s.seed).join("train_log.csv"))? {
                curves.push((s.seed, log));
            }
        }
        md.push('\n');
        if !curves.is_empty() {
            for (metric, name, pick) in [
                ("Fréchet distance", "pretrain_fd.svg", (|r: &TrainLogRow| r.fd) as fn(&TrainLogRow) -> f64),
                ("mode coverage", "pretrain_coverage.svg", |r: &TrainLogRow| r.coverage),
            ] {
                let series: Vec<Series> = curves
                    .iter()
                    .map(|(seed, log)| Series {
                        label: format!("seed {seed}"),
                        points: log.iter().map(|r| (r.iteration as f64, pick(r))).collect(),
                    })
                    .collect();
                let axes = Axes {
                    title: format!("Pretraining: {metric}"),
                    x_label: "iteration".into(),
                    y_label: metric.into(),
                    x_ticks: None,
                };
                w.figure(name, line_chart(&axes, &series))?;
            }
        }
    }
    let source_seed = std::fs::read_to_string(layout.pretrain_dir().join("source.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<SourceRecord>(&t).ok())
        .map(|r| r.seed);
    if let Some(seed) = source_seed {
        let _ = writeln!(md, "Selected source seed: {seed}\n");
    }

    // source Fisher
    if let Some(layers) = read_if::<FisherLayer>(&layout.fisher_dir().join("fisher_layers.csv"))? {
        found = true;
        md.push_str("## Fisher information of the source generator\n\n| layer | kind | mean | max | share of total |\n|---|---|---|---|---|\n");
        for l in &layers {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                l.layer,
                l.kind.as_str(),
                fmt(l.mean),
                fmt(l.max),
                fmt(l.fraction_of_total)
            );
        }
        md.push('\n');
        let weights = weight_layers(&layers, |l| l.kind);
        let cats: Vec<String> = weights.iter().map(|l| l.layer.clone()).collect();
        let axes = Axes {
            title: "Mean Fisher information per layer (weights)".into(),
            x_label: "layer".into(),
            y_label: "mean F".into(),
            x_ticks: None,
        };
        w.figure(
            "fisher_layers.svg",
            bar_chart(&axes, &cats, &[("source".into(), weights.iter().map(|l| l.mean).collect())]),
        )?;
    }

    // sweeps
    let mut names: Vec<String> = std::fs::read_dir(layout.sweeps_dir())
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().join("summary.csv").exists())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    for name in &names {
        found = true;
        let sdir = layout.sweep_dir(name);
        sweep_section(&mut w, &mut md, &mut observations, name, &sdir)?;
    }

    if !found {
        return Err(CliError::Dependency {
            path: run_dir.to_path_buf(),
            hint: "no pretraining, Fisher or sweep outputs found".into(),
        });
    }

    if !observations.is_empty() {
        md.push_str("## Observations\n\n");
        for o in &observations {
            md.push_str(&o.line());
            md.push('\n');
        }
        md.push('\n');
    }
    md.push_str("## Figures\n\n");
    for f in &w.figures {
        let file = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let _ = writeln!(md, "- [{file}]({file})");
    }
    let path = dir.join("report.md");
    std::fs::write(&path, md).map_err(|e| CliError::io(&path, e))?;
    Ok(Report {
        dir,
        figures: w.figures,
        observations,
    })
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a.to_bits() == b.to_bits());
    v
}

fn sweep_section(
    w: &mut Writer,
    md: &mut String,
    observations: &mut Vec<Observation>,
    name: &str,
    sdir: &Path,
) -> Result<()> {
    let summary: Vec<SummaryRow> = read_rows(&sdir.join("summary.csv"))?;
    let rows: Vec<SweepRow> = read_if(&sdir.join("sweep.csv"))?.unwrap_or_default();
    let _ = writeln!(md, "## Sweep `{name}`\n");
    let bad = rows.iter().filter(|r| r.status != Status::Ok).count();
    if bad > 0 {
        let _ = writeln!(md, "{bad} of {} cells did not finish.\n", rows.len());
    }
    md.push_str("| target | shots | λ | n | FD | diversity | coverage | HQ fraction | memorization | weight change | paired distance |\n|---|---|---|---|---|---|---|---|---|---|---|\n");
    for s in &summary {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            s.target,
            s.shots,
            s.lambda,
            s.n,
            pm(s.fd_mean, s.fd_se),
            pm(s.diversity_mean, s.diversity_se),
            pm(s.coverage_mean, s.coverage_se),
            pm(s.hq_fraction_mean, s.hq_fraction_se),
            pm(s.memorization_mean, s.memorization_se),
            pm(s.delta_mean, s.delta_se),
            pm(s.paired_distance_mean, s.paired_distance_se),
        );
    }
    md.push('\n');

    trend_figures(w, name, &summary)?;
    drift_figure(w, name, sdir, &rows)?;
    weights_section(w, md, observations, name, sdir)?;
    correspondence_section(w, md, name, sdir)?;
    Ok(())
}

/// One chart per metric along whichever axis varies first (target, shots, λ);
/// the other axes become separate series.
fn trend_figures(w: &mut Writer, name: &str, summary: &[SummaryRow]) -> Result<()> {
    let targets = distinct(summary.iter().map(|s| s.target as f64));
    let shots = distinct(summary.iter().map(|s| s.shots as f64));
    let lambdas = distinct(summary.iter().map(|s| s.lambda));
    type Key = fn(&SummaryRow) -> f64;
    let axes: [(&str, &Vec<f64>, Key); 3] = [
        ("target", &targets, |s| s.target as f64),
        ("shots", &shots, |s| s.shots as f64),
        ("λ", &lambdas, |s| s.lambda),
    ];
    let Some(primary) = axes.iter().position(|a| a.1.len() > 1) else {
        return Ok(());
    };
    let (x_name, xs, x_of) = axes[primary];
    let ticks: Vec<(f64, String)> = xs
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64, if primary == 0 { format!("t{v}") } else { v.to_string() }))
        .collect();
    let index = |v: f64| xs.iter().position(|x| x.to_bits() == v.to_bits()).unwrap_or(0) as f64;
    let mut groups: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for s in summary {
        let label = axes
            .iter()
            .enumerate()
            .filter(|(i, a)| *i != primary && a.1.len() > 1)
            .map(|(_, a)| format!("{}={}", a.0, (a.2)(s)))
            .collect::<Vec<_>>()
            .join(" ");
        groups.entry(label).or_default().push(s);
    }
    type Metric = fn(&SummaryRow) -> f64;
    let metrics: [(&str, &str, Metric); 4] = [
        ("fd", "Fréchet distance", |s| s.fd_mean),
        ("diversity", "diversity", |s| s.diversity_mean),
        ("memorization", "memorization fraction", |s| s.memorization_mean),
        ("paired", "mean paired distance", |s| s.paired_distance_mean),
    ];
    for (file, label, metric) in metrics {
        let series: Vec<Series> = groups
            .iter()
            .map(|(g, rows)| Series {
                label: if g.is_empty() { "mean over seeds".into() } else { g.clone() },
                points: rows.iter().map(|s| (index(x_of(s)), metric(s))).collect(),
            })
            .collect();
        let axes = Axes {
            title: format!("{name}: {label}"),
            x_label: x_name.into(),
            y_label: label.into(),
            x_ticks: Some(ticks.clone()),
        };
        w.figure(&format!("{name}_{file}.svg"), line_chart(&axes, &series))?;
    }
    Ok(())
}

/// Overall weight change against iteration, averaged over seeds, one series
/// per λ, for the first target and shot count of the sweep.
fn drift_figure(w: &mut Writer, name: &str, sdir: &Path, rows: &[SweepRow]) -> Result<()> {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == Status::Ok).collect();
    let Some(first) = ok.first() else {
        return Ok(());
    };
    let mut series = Vec::new();
    for l in distinct(ok.iter().map(|r| r.lambda)) {
        let mut logs = Vec::new();
        for r in ok
            .iter()
            .filter(|r| r.target == first.target && r.shots == first.shots && r.lambda.to_bits() == l.to_bits())
        {
            let path = sdir.join("cells").join(&r.run_id).join("drift.csv");
            if path.exists() {
                logs.push(read_drift(&path)?);
            }
        }
        let Some(n) = logs.iter().map(Vec::len).min() else {
            continue;
        };
        let points = (0..n)
            .map(|i| {
                let mean = logs.iter().map(|log| log[i].1).sum::<f64>() / logs.len() as f64;
                (logs[0][i].0, mean)
            })
            .collect();
        series.push(Series {
            label: lambda_label(l),
            points,
        });
    }
    if series.is_empty() {
        return Ok(());
    }
    let axes = Axes {
        title: format!("{name}: weight change during adaptation"),
        x_label: "iteration".into(),
        y_label: "mean relative weight change".into(),
        x_ticks: None,
    };
    w.figure(&format!("{name}_drift.svg"), line_chart(&axes, &series))
}

fn weights_section(
    w: &mut Writer,
    md: &mut String,
    observations: &mut Vec<Observation>,
    name: &str,
    sdir: &Path,
) -> Result<()> {
    let wdir = sdir.join("weights");
    let (Some(delta), Some(fisher)) = (
        read_if::<LayerDeltaRow>(&wdir.join("layer_delta.csv"))?,
        read_if::<LayerFisherRow>(&wdir.join("layer_fisher.csv"))?,
    ) else {
        return Ok(());
    };
    let mut models: Vec<String> = Vec::new();
    for r in &delta {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    let per_model_delta = |m: &str| -> Vec<(String, f64)> {
        delta
            .iter()
            .filter(|r| r.model == m && r.kind == ParamKind::Weight)
            .map(|r| (r.layer.clone(), r.delta))
            .collect()
    };
    let per_model_fisher = |m: &str| -> Vec<(String, f64)> {
        fisher
            .iter()
            .filter(|r| r.model == m && r.kind == ParamKind::Weight)
            .map(|r| (r.layer.clone(), r.mean))
            .collect()
    };
    let layers: Vec<String> = per_model_delta(&models[0]).into_iter().map(|v| v.0).collect();

    let _ = writeln!(md, "### Per-layer weight change and Fisher information\n");
    md.push_str("| model | layer | weight change | mean F |\n|---|---|---|---|\n");
    for m in &models {
        let f = per_model_fisher(m);
        for (layer, d) in per_model_delta(m) {
            let mean_f = f.iter().find(|x| x.0 == layer).map_or(f64::NAN, |x| x.1);
            let _ = writeln!(md, "| {m} | {layer} | {} | {} |", fmt(d), fmt(mean_f));
        }
    }
    md.push('\n');

    let source_f = per_model_fisher("pretrained");
    for m in &models {
        let d = per_model_delta(m);
        let f = per_model_fisher(m);
        let last = last_layer(&d).unwrap_or_default().to_string();
        if let Some(top) = argmax(&f) {
            observations.push(Observation {
                subject: format!("{name}/{m}"),
                statement: format!("highest mean Fisher in the last layer ({last}); observed in {top}"),
                holds: top == last,
            });
        }
        if m == "pretrained" {
            if let Some(most) = argmax(&d) {
                observations.push(Observation {
                    subject: format!("{name}/{m}"),
                    statement: format!("largest change from initialization in the last layer ({last}); observed in {most}"),
                    holds: most == last,
                });
            }
        } else if let (Some(least), Some(top)) = (argmin(&d), argmax(&source_f)) {
            observations.push(Observation {
                subject: format!("{name}/{m}"),
                statement: format!(
                    "the layer with the highest source Fisher ({top}) changes least during adaptation; observed least change in {least}"
                ),
                holds: least == top,
            });
        }
    }

    let bars = |pick: &dyn Fn(&str) -> Vec<(String, f64)>| -> Vec<(String, Vec<f64>)> {
        models
            .iter()
            .map(|m| (m.clone(), pick(m).into_iter().map(|v| v.1).collect()))
            .collect()
    };
    let axes = Axes {
        title: format!("{name}: relative weight change per layer"),
        x_label: "layer".into(),
        y_label: "relative change".into(),
        x_ticks: None,
    };
    w.figure(&format!("{name}_layer_delta.svg"), bar_chart(&axes, &layers, &bars(&per_model_delta)))?;
    let axes = Axes {
        title: format!("{name}: mean Fisher information per layer"),
        y_label: "mean F".into(),
        ..axes
    };
    w.figure(&format!("{name}_layer_fisher.svg"), bar_chart(&axes, &layers, &bars(&per_model_fisher)))
}

#[derive(Deserialize)]
struct PairedSampleRow {
    source_x: f64,
    source_y: f64,
    adapted_x: f64,
    adapted_y: f64,
}

const SCATTER_POINTS: usize = 300;

fn correspondence_section(w: &mut Writer, md: &mut String, name: &str, sdir: &Path) -> Result<()> {
    let cdir = sdir.join("correspondence");
    let Some(rows) = read_if::<PairedRow>(&cdir.join("summary.csv"))? else {
        return Ok(());
    };
    let lambdas = distinct(rows.iter().map(|r| r.lambda));
    md.push_str("### Source/adapted correspondence\n\n| λ | mean paired distance | cells |\n|---|---|---|\n");
    for &l in &lambdas {
        let d: Vec<f64> = rows
            .iter()
            .filter(|r| r.lambda.to_bits() == l.to_bits())
            .map(|r| r.mean_paired_distance)
            .collect();
        let _ = writeln!(md, "| {l} | {} | {} |", fmt(d.iter().sum::<f64>() / d.len() as f64), d.len());
    }
    md.push('\n');
    let ends = match (lambdas.first(), lambdas.last()) {
        (Some(a), Some(b)) if a != b => vec![*a, *b],
        (Some(a), _) => vec![*a],
        _ => vec![],
    };
    for l in ends {
        let Some(r) = rows.iter().find(|r| r.lambda.to_bits() == l.to_bits()) else {
            continue;
        };
        let samples: Vec<PairedSampleRow> = read_rows(&cdir.join(format!("{}.csv", r.run_id)))?;
        let pairs: Vec<_> = samples
            .iter()
            .take(SCATTER_POINTS)
            .map(|s| ((s.source_x, s.source_y), (s.adapted_x, s.adapted_y)))
            .collect();
        w.figure(
            &format!("{name}_pairs_l{l}.svg"),
            pair_scatter(&format!("{name}: paired outputs at {}", lambda_label(l)), &pairs),
        )?;
    }
    Ok(())
}
