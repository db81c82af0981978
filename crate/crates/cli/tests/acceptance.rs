//! End-to-end acceptance run: every criterion is checked at its stated
//! tolerance and reported as one PASS/FAIL line. Set `ACCEPTANCE_OUT` to
//! keep the run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ewcgan_cli::commands::{self, SummaryRow};
use ewcgan_cli::config::ExperimentConfig;
use ewcgan_cli::jobs::{replay, SweepRow};
use ewcgan_cli::manifest::{Manifest, Status, MANIFEST_FILE};
use ewcgan_cli::report::report;
use ewcgan_core::datasets::{ring_spec, sample};
use ewcgan_core::ewc::penalty_on_tape;
use ewcgan_core::fisher::{estimate_fisher, fisher_from_proxy, proxy_loss, FisherConfig};
use ewcgan_core::gan::{d_loss_on_tape, g_loss_on_tape, LossVariant};
use ewcgan_core::metrics::{diversity, frechet_distance, GaussianFit};
use ewcgan_core::models::{init_params, MlpSpec, ParamVector};
use ewcgan_core::{grad_check, latent_batch, stream_rng, Array, Checkpoint, Result as CoreResult, Tape, Var};

const POINTS: usize = 100;
const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    latent_batch(&mut stream_rng(seed, stream), 1, n).into_data()
}

fn matrix(seed: u64, stream: u64, rows: usize, cols: usize) -> Array {
    latent_batch(&mut stream_rng(seed, stream), rows, cols)
}

/// Reduces any node to a scalar through a fixed random weighting so every
/// output entry carries a distinct gradient.
fn weigh(t: &mut Tape, y: Var, seed: u64) -> CoreResult<Var> {
    let shape = t.value(y).shape().to_vec();
    let n = t.value(y).len();
    let w = t.constant(Array::new(shape, normals(seed, 99, n))?)?;
    let p = t.mul(y, w)?;
    t.sum(p)
}

type Check = Box<dyn Fn(u64) -> CoreResult<f64>>;

fn op_checks() -> Vec<(&'static str, Check)> {
    fn unary(f: fn(&mut Tape, Var) -> CoreResult<Var>) -> Check {
        Box::new(move |seed| {
            grad_check(
                |t, th| {
                    let x = t.slice(th, 0, vec![2, 3])?;
                    let y = f(t, x)?;
                    weigh(t, y, seed)
                },
                &normals(seed, 1, 6),
                STEP,
            )
        })
    }
    fn binary(f: fn(&mut Tape, Var, Var) -> CoreResult<Var>) -> Check {
        Box::new(move |seed| {
            grad_check(
                |t, th| {
                    let a = t.slice(th, 0, vec![2, 3])?;
                    let b = t.slice(th, 6, vec![2, 3])?;
                    let y = f(t, a, b)?;
                    weigh(t, y, seed)
                },
                &normals(seed, 1, 12),
                STEP,
            )
        })
    }
    vec![
        (
            "matmul",
            Box::new(|seed| {
                grad_check(
                    |t, th| {
                        let a = t.slice(th, 0, vec![2, 3])?;
                        let b = t.slice(th, 6, vec![3, 4])?;
                        let y = t.matmul(a, b)?;
                        weigh(t, y, seed)
                    },
                    &normals(seed, 1, 18),
                    STEP,
                )
            }),
        ),
        ("add", binary(|t, a, b| t.add(a, b))),
        ("sub", binary(|t, a, b| t.sub(a, b))),
        ("mul", binary(|t, a, b| t.mul(a, b))),
        (
            "add_bias",
            Box::new(|seed| {
                grad_check(
                    |t, th| {
                        let x = t.slice(th, 0, vec![3, 2])?;
                        let b = t.slice(th, 6, vec![2])?;
                        let y = t.add_bias(x, b)?;
                        weigh(t, y, seed)
                    },
                    &normals(seed, 1, 8),
                    STEP,
                )
            }),
        ),
        ("leaky_relu", unary(|t, x| t.leaky_relu(x, 0.2))),
        ("tanh", unary(|t, x| t.tanh(x))),
        ("sigmoid", unary(|t, x| t.sigmoid(x))),
        ("square", unary(|t, x| t.square(x))),
        ("scale", unary(|t, x| t.scale(x, -1.7))),
        ("slice", unary(|t, x| t.slice(x, 1, vec![4]))),
        ("sum", unary(|t, x| t.sum(x))),
        ("mean", unary(|t, x| t.mean(x))),
        (
            "bce_with_logits",
            Box::new(|seed| {
                let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
                let logits: Vec<f64> = normals(seed, 1, 6).iter().map(|v| 3.0 * v).collect();
                grad_check(|t, th| t.bce_with_logits(th, &labels), &logits, STEP)
            }),
        ),
    ]
}

fn jitter(spec: &MlpSpec, seed: u64) -> ParamVector {
    let base = init_params(spec, seed).expect("init");
    let noise = normals(seed, 7, base.len());
    let v = base.values().iter().zip(noise).map(|(p, n)| p + 0.1 * n).collect();
    ParamVector::from_values(spec, v).expect("same layout")
}

fn loss_checks() -> Vec<(&'static str, Check)> {
    let g_spec = MlpSpec::generator(3, &[8, 8]);
    let d_spec = MlpSpec::discriminator(&[8, 8]);
    let d_check: Check = {
        let d_spec = d_spec.clone();
        Box::new(move |seed| {
            let d = jitter(&d_spec, seed);
            let real = matrix(seed, 2, 6, 2);
            let fake = matrix(seed, 3, 5, 2);
            grad_check(
                |t, th| {
                    let r = t.constant(real.clone())?;
                    let f = t.constant(fake.clone())?;
                    d_loss_on_tape(t, &d_spec, th, r, f)
                },
                d.values(),
                STEP,
            )
        })
    };
    let g_check = |variant: LossVariant| -> Check {
        let (g_spec, d_spec) = (g_spec.clone(), d_spec.clone());
        Box::new(move |seed| {
            let g = jitter(&g_spec, seed);
            let d = jitter(&d_spec, seed + 1_000);
            let z = matrix(seed, 4, 6, 3);
            grad_check(
                |t, th| {
                    let dp = t.constant(Array::vector(d.values().to_vec()))?;
                    let zv = t.constant(z.clone())?;
                    g_loss_on_tape(t, &g_spec, th, &d_spec, dp, zv, variant)
                },
                g.values(),
                STEP,
            )
        })
    };
    let ewc: Check = Box::new(|seed| {
        let n = 20;
        let anchor = normals(seed, 5, n);
        let fisher: Vec<f64> = normals(seed, 6, n).iter().map(|v| v * v).collect();
        grad_check(
            |t, th| penalty_on_tape(t, th, &anchor, &fisher),
            &normals(seed, 1, n),
            STEP,
        )
    });
    let proxy: Check = {
        let (g_spec, d_spec) = (g_spec.clone(), d_spec.clone());
        Box::new(move |seed| {
            let ck = Checkpoint {
                g: jitter(&g_spec, seed),
                d: jitter(&d_spec, seed + 1_000),
                generator: g_spec.clone(),
                discriminator: d_spec.clone(),
                config_digest: String::new(),
                seed,
                iteration: 0,
            };
            let z = normals(seed, 4, 3);
            grad_check(
                |t, th| {
                    let dp = t.constant(Array::vector(ck.d.values().to_vec()))?;
                    proxy_loss(t, &ck, th, dp, &z, 1.0)
                },
                ck.g.values(),
                STEP,
            )
        })
    };
    vec![
        ("d_loss", d_check),
        ("g_loss (non-saturating)", g_check(LossVariant::NonSaturating)),
        ("g_loss (minimax)", g_check(LossVariant::Minimax)),
        ("ewc_penalty", ewc),
        ("fisher proxy", proxy),
    ]
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    let mut failures = Vec::new();
    for (name, check) in op_checks().into_iter().chain(loss_checks()) {
        for p in 0..POINTS as u64 {
            match check(p) {
                Ok(e) if e < GRAD_TOL => {
                    if e > worst.0 {
                        worst = (e, name);
                    }
                }
                Ok(e) => failures.push(format!("{name}@{p}: {e:.2e}")),
                Err(e) => failures.push(format!("{name}@{p}: {e}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let n = op_checks().len() + loss_checks().len();
    verdict(
        failures.is_empty() && secs < 60.0,
        format!(
            "{n} functions x {POINTS} points; worst error {:.2e} ({}); {secs:.1}s{}",
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let iso = |mean: [f64; 2], var: f64| GaussianFit::from_moments(mean, [[var, 0.0], [0.0, var]], 1000);
    let fd = |a: &GaussianFit, b: &GaussianFit| frechet_distance(a, b).expect("fd");
    let mut notes = Vec::new();
    let mut ok = true;
    let mut expect = |label: &str, got: f64, want: f64, tol: f64| {
        let pass = (got - want).abs() <= tol;
        ok &= pass;
        if !pass {
            notes.push(format!("{label}: {got} vs {want}"));
        }
    };

    let a = GaussianFit::from_moments([0.3, -1.0], [[2.0, 0.4], [0.4, 0.5]], 1000);
    let b = GaussianFit::from_moments([-0.7, 0.2], [[0.6, -0.1], [-0.1, 1.5]], 1000);
    expect("identity", fd(&a, &a), 0.0, 1e-9);
    expect("symmetry", fd(&a, &b), fd(&b, &a), 1e-9);
    expect("unit shift", fd(&iso([0.0, 0.0], 1.0), &iso([1.0, 0.0], 1.0)), 1.0, 1e-9);
    expect("variance 1 vs 4", fd(&iso([0.0, 0.0], 1.0), &iso([0.0, 0.0], 4.0)), 2f64.sqrt(), 1e-9);

    let x = sample(&ring_spec(1, 0.0, 1.0).expect("spec"), 20_000, 11).expect("samples");
    let div = diversity(&x, 20_000, 5).expect("diversity");
    let root_pi = std::f64::consts::PI.sqrt();
    let rel = (div - root_pi).abs() / root_pi;
    ok &= rel < 0.02;
    notes.push(format!("diversity of N(0,I) {div:.4} ({:.2}% from sqrt(pi))", 100.0 * rel));

    // One logit parameter θ scored against label 1: F = (1 − σ(θ))².
    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut worst = 0.0f64;
    for theta in [-2.0, -0.4, 0.0, 0.9, 3.0] {
        let want = (1.0 - sigma(theta)).powi(2);
        let direct = fisher_from_proxy(&[theta], 9, |t, th, _| {
            let b = t.bce_with_logits(th, &[1.0])?;
            t.scale(b, -1.0)
        })
        .expect("fisher")[0];
        // the same quantity through a generator whose output bias is θ
        let generator = MlpSpec::new(vec![3, 2], 0.2).expect("spec");
        let discriminator = MlpSpec::new(vec![2, 1], 0.2).expect("spec");
        let mut g = ParamVector::zeros(&generator);
        g.values_mut()[6] = theta;
        let ck = Checkpoint {
            generator,
            discriminator: discriminator.clone(),
            g,
            d: ParamVector::from_values(&discriminator, vec![1.0, 0.0, 0.0]).expect("d"),
            config_digest: String::new(),
            seed: 0,
            iteration: 0,
        };
        let est = estimate_fisher(&ck, &FisherConfig { samples: 25, ..Default::default() }).expect("fisher");
        worst = worst.max((direct - want).abs()).max((est.values[6] - want).abs());
    }
    ok &= worst < 1e-9;
    notes.push(format!("Fisher closed form worst error {worst:.1e}"));
    let secs = start.elapsed().as_secs_f64();
    verdict(ok && secs < 60.0, format!("{}; {secs:.1}s", notes.join("; ")))
}

struct Study {
    root: PathBuf,
    configs: PathBuf,
}

impl Study {
    fn config(&self, name: &str) -> ExperimentConfig {
        let mut cfg = if name == "base" {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::load(&self.configs.join(format!("{name}.toml"))).expect("study config")
        };
        cfg.output_dir = self.root.clone();
        cfg
    }

    fn sweep(&self, name: &str) -> Result<(Vec<SweepRow>, Vec<SummaryRow>, f64), String> {
        let cfg = self.config(name);
        let start = Instant::now();
        let out = commands::sweep(&cfg, true).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        eprintln!("  sweep {name}: {} cells in {secs:.1}s", out.rows.len());
        Ok((out.rows, out.summary, secs))
    }
}

fn by_seed<'a>(rows: &'a [SweepRow], lambda: f64) -> impl Iterator<Item = &'a SweepRow> {
    rows.iter()
        .filter(move |r| r.status == Status::Ok && r.lambda.to_bits() == lambda.to_bits())
}

fn fmt_list(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_3(study: &Study) -> Verdict {
    let cfg = study.config("base");
    let out = match commands::pretrain(&cfg, true) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("pretrain failed: {e}")),
    };
    let times: Vec<f64> = cfg
        .pretrain_seeds
        .iter()
        .map(|s| {
            Manifest::load(&cfg.layout().pretrain_seed_dir(*s).join(MANIFEST_FILE))
                .map_or(f64::INFINITY, |m| m.wall_clock_seconds)
        })
        .collect();
    let good = out
        .summaries
        .iter()
        .filter(|s| s.coverage >= 7.0 / 8.0 && s.hq_fraction >= 0.5)
        .count();
    let slowest = times.iter().copied().fold(0.0, f64::max);
    let rows: Vec<String> = out
        .summaries
        .iter()
        .zip(&times)
        .map(|(s, t)| format!("seed {} coverage {:.3} hq {:.3} fd {:.3} {t:.0}s", s.seed, s.coverage, s.hq_fraction, s.fd))
        .collect();
    verdict(
        good >= 1 && slowest < 300.0,
        format!("{}; selected seed {}", rows.join("; "), out.selected),
    )
}

fn criterion_4(study: &Study) -> Verdict {
    let (rows, _, secs) = match study.sweep("fig3_drift") {
        Ok(v) => v,
        Err(e) => return verdict(false, e),
    };
    let lambdas = commands::sweep_lambdas(&study.config("fig3_drift")).expect("lambdas");
    let star = *lambdas.last().expect("λ*");
    let mut wins = 0;
    let mut notes = Vec::new();
    for s in [0u64, 1, 2] {
        let pick = |l: f64| by_seed(&rows, l).find(|r| r.seed == s);
        let (Some(a), Some(b)) = (pick(0.0), pick(star)) else {
            notes.push(format!("seed {s}: missing cell"));
            continue;
        };
        let checks = [b.delta < a.delta, b.memorization < a.memorization, b.diversity > a.diversity];
        if checks.iter().all(|c| *c) {
            wins += 1;
        }
        notes.push(format!(
            "seed {s}: delta {:.4}->{:.4} mem {:.3}->{:.3} div {:.4}->{:.4}",
            a.delta, b.delta, a.memorization, b.memorization, a.diversity, b.diversity
        ));
    }
    verdict(
        wins >= 2 && secs < 600.0,
        format!("λ*={star}; {wins}/3 seeds; {}; {secs:.0}s", notes.join("; ")),
    )
}

fn criterion_5(summary: &[SummaryRow]) -> Verdict {
    let mut s: Vec<&SummaryRow> = summary.iter().collect();
    s.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let div_ok = s.windows(2).all(|w| w[1].diversity_mean >= w[0].diversity_mean);
    let arg = s
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.fd_mean.total_cmp(&b.1.fd_mean))
        .map_or(0, |(i, _)| i);
    let interior = arg > 0 && arg + 1 < s.len();
    verdict(
        div_ok && interior && s.len() >= 3,
        format!(
            "λ [{}]; diversity [{}] non-decreasing={div_ok}; fd [{}] min at λ={}",
            fmt_list(s.iter().map(|r| r.lambda)),
            fmt_list(s.iter().map(|r| r.diversity_mean)),
            fmt_list(s.iter().map(|r| r.fd_mean)),
            s.get(arg).map_or(f64::NAN, |r| r.lambda)
        ),
    )
}

fn criterion_6(study: &Study) -> Verdict {
    let (_, mut summary, _) = match study.sweep("table3_shots") {
        Ok(v) => v,
        Err(e) => return verdict(false, e),
    };
    summary.sort_by_key(|r| r.shots);
    let ok = summary.len() == 4 && summary.windows(2).all(|w| w[1].fd_mean < w[0].fd_mean);
    verdict(
        ok,
        format!(
            "shots [{}] at λ={}; fd [{}] (± [{}])",
            summary.iter().map(|r| r.shots.to_string()).collect::<Vec<_>>().join(", "),
            summary.first().map_or(f64::NAN, |r| r.lambda),
            fmt_list(summary.iter().map(|r| r.fd_mean)),
            fmt_list(summary.iter().map(|r| r.fd_se)),
        ),
    )
}

fn criterion_7(study: &Study) -> Verdict {
    let (_, mut summary, _) = match study.sweep("table5_dissimilarity") {
        Ok(v) => v,
        Err(e) => return verdict(false, e),
    };
    summary.sort_by_key(|r| r.target);
    let ok = summary.len() == 4 && summary.windows(2).all(|w| w[1].fd_mean >= w[0].fd_mean);
    verdict(ok, format!("ladder fd [{}]", fmt_list(summary.iter().map(|r| r.fd_mean))))
}

fn criterion_8(study: &Study) -> Verdict {
    if let Err(e) = study.sweep("fig8_correspondence") {
        return verdict(false, e);
    }
    let rows = match commands::correspondence(&study.config("fig8_correspondence")) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let lmax = rows.iter().map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max);
    let mut wins = 0;
    let mut notes = Vec::new();
    for s in [0u64, 1, 2] {
        let pick = |l: f64| {
            rows.iter()
                .find(|r| r.seed == s && r.lambda.to_bits() == l.to_bits())
                .map(|r| r.mean_paired_distance)
        };
        if let (Some(a), Some(b)) = (pick(0.0), pick(lmax)) {
            wins += usize::from(b < a);
            notes.push(format!("seed {s}: {a:.4} -> {b:.4}"));
        }
    }
    verdict(wins >= 2, format!("paired distance λ=0 -> λ={lmax}: {}", notes.join("; ")))
}

fn criterion_9(study: &Study) -> Verdict {
    let cells = study.root.join("sweeps/fig8_correspondence/cells");
    let Some(cell) = std::fs::read_dir(&cells)
        .ok()
        .and_then(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).min())
    else {
        return verdict(false, "no finished cell to replay");
    };
    let out = study.root.join("replay");
    match replay(&cell.join(MANIFEST_FILE), &out) {
        Ok(r) => verdict(
            r.identical(),
            format!(
                "{}: {}",
                cell.file_name().and_then(|n| n.to_str()).unwrap_or_default(),
                r.files
                    .iter()
                    .map(|(p, a, b)| format!("{} {}", p.display(), if a == b { "identical" } else { "DIFFERENT" }))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn criterion_10(study: &Study) -> Verdict {
    let cfg = study.config("table4_lambda");
    if let Err(e) = commands::analyze_weights(&cfg) {
        return verdict(false, format!("analyze-weights: {e}"));
    }
    let r = match report(&study.root) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("report: {e}")),
    };
    let weights = study.root.join("sweeps/table4_lambda/weights");
    let needed = [
        weights.join("layer_delta.csv"),
        weights.join("layer_fisher.csv"),
        r.dir.join("table4_lambda_layer_delta.svg"),
        r.dir.join("table4_lambda_layer_fisher.svg"),
        r.dir.join("fig3_drift_drift.svg"),
        r.dir.join("report.md"),
    ];
    let missing: Vec<String> = needed.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    let md = std::fs::read_to_string(r.dir.join("report.md")).unwrap_or_default();
    let documented = md.contains("## Observations") && r.observations.iter().any(|o| o.subject.ends_with("/pretrained"));
    let obs: Vec<String> = r
        .observations
        .iter()
        .filter(|o| o.subject.starts_with("table4_lambda/"))
        .map(|o| format!("{} {}", o.subject, if o.holds { "holds" } else { "does not hold" }))
        .collect();
    verdict(
        missing.is_empty() && documented,
        format!(
            "{} figures; {}{}",
            r.figures.len(),
            obs.join(", "),
            if missing.is_empty() { String::new() } else { format!("; missing {}", missing.join(", ")) }
        ),
    )
}

fn main() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let temp = tempfile::tempdir().expect("tempdir");
    let root = std::env::var_os("ACCEPTANCE_OUT").map_or_else(|| temp.path().to_path_buf(), PathBuf::from);
    let study = Study { root, configs };

    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id: u32, name: &'static str, v: Verdict| {
        eprintln!("  criterion {id} done");
        results.push((id, name, v));
    };
    record(1, "gradient suite", criterion_1());
    record(2, "analytic metrics", criterion_2());
    record(3, "pretraining sanity", criterion_3(&study));
    let fisher_ok = commands::fisher(&study.config("base"), true);
    if let Err(e) = &fisher_ok {
        eprintln!("  fisher failed: {e}");
    }
    let lambda_sweep = study.sweep("table4_lambda");
    record(4, "anchor effect", criterion_4(&study));
    record(
        5,
        "λ trend",
        match &lambda_sweep {
            Ok((_, summary, _)) => criterion_5(summary),
            Err(e) => verdict(false, e.clone()),
        },
    );
    record(6, "shots trend", criterion_6(&study));
    record(7, "dissimilarity trend", criterion_7(&study));
    record(8, "correspondence", criterion_8(&study));
    record(9, "reproducibility", criterion_9(&study));
    record(10, "diagnostics", criterion_10(&study));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("[{tag}] {id:>2} {name}: {}", v.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
