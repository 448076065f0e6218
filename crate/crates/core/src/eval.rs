//! Accuracy metrics, method comparison and report rendering.
//!
//! Reports are plain text (`key = value` lines grouped in `[sections]`) or
//! CSV. Measured values use six significant digits; configuration values are
//! echoed at full precision so a run can be reproduced from its report.
//! Wall-clock time is only included on request, which keeps reports
//! byte-identical across repeated runs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fusion::{run, run_no_joint, ColMarginal, FusionConfig, FusionResult};
use crate::gmm::{concat_features, PiMode};
use crate::io::{write_atomic, Dataset};
use crate::matrix::Matrix;
use crate::prob::{argmax_rows, row_normalize, FeatureMatrix, ProbMatrix};
use crate::rng::SplitMix64;

pub const BASELINE: &str = "y-argmax";

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::invalid("accuracy of an empty label set"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Accuracy restricted to each true class; `None` for classes without samples.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Option<f64>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= k {
            return Err(Error::invalid(format!("label {t} out of range for {k} classes")));
        }
        totals[t] += 1;
        hits[t] += usize::from(p == t);
    }
    Ok(hits.iter().zip(&totals).map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64)).collect())
}

/// `printf("%g")` with six significant digits.
pub fn format_g(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".into(), format_g)
}

fn col_marginal_name(c: ColMarginal) -> &'static str {
    match c {
        ColMarginal::Uniform => "uniform",
        ColMarginal::FromSemantic => "from-y",
    }
}

fn pi_mode_name(p: PiMode) -> &'static str {
    match p {
        PiMode::Uniform => "uniform",
        PiMode::Estimate => "estimate",
    }
}

fn join_f64(v: &[f64]) -> String {
    if v.is_empty() {
        "default".into()
    } else {
        v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    }
}

/// Every field of the configuration at full precision.
pub fn config_echo(config: &FusionConfig<f64>) -> Vec<(String, String)> {
    [
        ("epsilon", format!("{:?}", config.epsilon)),
        ("lambda", join_f64(&config.lambdas)),
        ("eta", join_f64(&config.etas)),
        ("iters", config.outer_iters.to_string()),
        ("sinkhorn_iters", config.sinkhorn_iters.to_string()),
        ("sinkhorn_tol", format!("{:?}", config.sinkhorn_tol)),
        ("outer_tol", format!("{:?}", config.outer_tol)),
        ("col_marginal", col_marginal_name(config.col_marginal).to_string()),
        ("normalize_features", config.normalize_features.to_string()),
        ("pi_mode", pi_mode_name(config.pi_mode).to_string()),
        ("seed", config.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub name: String,
    /// Mean over seeds.
    pub accuracy: f64,
    /// `accuracy` minus the baseline's.
    pub delta: f64,
    pub per_class: Vec<Option<f64>>,
    /// Diagnostics of the first seed's run; `None` for the baseline.
    pub outer_iterations: Option<usize>,
    pub objective: Option<f64>,
    pub violation: Option<f64>,
    /// Mean wall-clock milliseconds per seed, when timing was requested.
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dataset: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub seeds: usize,
    pub baseline: String,
    pub class_names: Option<Vec<String>>,
    pub config: Vec<(String, String)>,
    pub methods: Vec<MethodReport>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

fn class_label(names: &Option<Vec<String>>, c: usize) -> String {
    names.as_ref().map_or_else(|| c.to_string(), |n| n[c].clone())
}

pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dataset = {}", report.dataset);
    let _ = writeln!(out, "samples = {}", report.n_samples);
    let _ = writeln!(out, "classes = {}", report.n_classes);
    let _ = writeln!(out, "seeds = {}", report.seeds);
    let _ = writeln!(out, "baseline = {}", report.baseline);
    out.push_str("\n[config]\n");
    for (k, v) in &report.config {
        let _ = writeln!(out, "{k} = {v}");
    }
    for m in &report.methods {
        let _ = writeln!(out, "\n[method {}]", m.name);
        let _ = writeln!(out, "accuracy = {}", format_g(m.accuracy));
        let _ = writeln!(out, "delta = {}", format_g(m.delta));
        if let Some(it) = m.outer_iterations {
            let _ = writeln!(out, "outer_iterations = {it}");
        }
        if let Some(v) = m.objective {
            let _ = writeln!(out, "objective = {}", format_g(v));
        }
        if let Some(v) = m.violation {
            let _ = writeln!(out, "violation = {}", format_g(v));
        }
        if let Some(v) = m.elapsed_ms {
            let _ = writeln!(out, "time_ms = {}", format_g(v));
        }
        for (c, acc) in m.per_class.iter().enumerate() {
            let _ = writeln!(out, "class {} = {}", class_label(&report.class_names, c), format_opt(*acc));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(report: &Report) -> String {
    let timing = report.methods.iter().any(|m| m.elapsed_ms.is_some());
    let per_class = report.methods.iter().map(|m| m.per_class.len()).max().unwrap_or(0);
    let mut header = vec!["method".to_string(), "accuracy".into(), "delta".into(), "outer_iterations".into(), "objective".into(), "violation".into()];
    if timing {
        header.push("time_ms".into());
    }
    for c in 0..per_class {
        header.push(csv_field(&format!("class:{}", class_label(&report.class_names, c))));
    }
    let mut out = header.join(",");
    out.push('\n');
    for m in &report.methods {
        let mut row = vec![
            csv_field(&m.name),
            format_g(m.accuracy),
            format_g(m.delta),
            m.outer_iterations.map_or_else(String::new, |v| v.to_string()),
            m.objective.map_or_else(String::new, format_g),
            m.violation.map_or_else(String::new, format_g),
        ];
        if timing {
            row.push(m.elapsed_ms.map_or_else(String::new, format_g));
        }
        for c in 0..per_class {
            row.push(m.per_class.get(c).copied().flatten().map_or_else(String::new, format_g));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    write_atomic(path, render_report(report, format).as_bytes())
}

/// Row-normalized λ-weighted sum of the semantic sources.
pub fn semantic_prior(ys: &[ProbMatrix<f64>], config: &FusionConfig<f64>) -> Result<ProbMatrix<f64>> {
    let first = ys.first().ok_or_else(|| Error::invalid("at least one semantic source is required"))?;
    let lambdas = config.resolved_lambdas(ys.len())?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for (y, &l) in ys.iter().zip(&lambdas) {
        acc.add_scaled(l, y)?;
    }
    row_normalize(&acc)
}

struct Sample {
    xs: Vec<FeatureMatrix<f64>>,
    ys: Vec<ProbMatrix<f64>>,
    labels: Vec<usize>,
}

fn permuted(dataset: &Dataset, labels: &[usize], seed_index: usize, base_seed: u64) -> Result<Sample> {
    let n = dataset.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    if seed_index > 0 {
        let mut rng = SplitMix64::new(base_seed.wrapping_add(seed_index as u64));
        for i in (1..n).rev() {
            order.swap(i, rng.next_below(i as u64 + 1) as usize);
        }
    }
    let xs = dataset
        .features
        .iter()
        .map(|(_, x)| FeatureMatrix::new(x.select_rows(&order)))
        .collect::<Result<Vec<_>>>()?;
    let ys = dataset
        .semantics
        .iter()
        .map(|(_, y)| ProbMatrix::ingest(y.select_rows(&order)))
        .collect::<Result<Vec<_>>>()?;
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok(Sample { xs, ys, labels })
}

enum Method {
    Baseline,
    SemanticOnly,
    Single(usize),
    Concat,
    Full,
    NoJoint,
}

#[derive(Default)]
struct Tally {
    accuracy: f64,
    per_class: Vec<Option<f64>>,
    elapsed_ms: f64,
    first: Option<(usize, f64, f64)>,
}

fn add_per_class(acc: &mut Vec<Option<f64>>, new: Vec<Option<f64>>) {
    if acc.is_empty() {
        *acc = new;
        return;
    }
    for (a, b) in acc.iter_mut().zip(new) {
        *a = match (*a, b) {
            (Some(x), Some(y)) => Some(x + y),
            (x, y) => x.or(y),
        };
    }
}

fn run_method(method: &Method, sample: &Sample, config: &FusionConfig<f64>) -> Result<(Vec<usize>, Option<FusionResult<f64>>)> {
    let single_cfg = FusionConfig { etas: Vec::new(), ..config.clone() };
    let result = match method {
        Method::Baseline => return Ok((argmax_rows(semantic_prior(&sample.ys, config)?.as_matrix()), None)),
        Method::SemanticOnly => run(&[], &sample.ys, &single_cfg)?,
        Method::Single(i) => run(std::slice::from_ref(&sample.xs[*i]), &sample.ys, &single_cfg)?,
        Method::Concat => run(&[concat_features(&sample.xs)?], &sample.ys, &single_cfg)?,
        Method::Full => run(&sample.xs, &sample.ys, config)?,
        Method::NoJoint => run_no_joint(&sample.xs, &sample.ys, config)?,
    };
    Ok((result.predictions(), Some(result)))
}

/// Runs every method on `seeds` sample orders and reports accuracies relative
/// to the semantic argmax baseline.
///
/// Seed index 0 is the file order; index `s > 0` is a shuffle drawn from
/// `config.seed + s`. Methods, in report order: `y-argmax`, `y-only`, then
/// with two or more feature sources `single:<id>` per source and `concat`,
/// then `fusion` and `no-joint` whenever any feature source exists.
pub fn compare(dataset: &Dataset, config: &FusionConfig<f64>, seeds: usize, timing: bool) -> Result<Report> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("dataset `{}` has no labels to compare against", dataset.name)))?;
    if seeds == 0 {
        return Err(Error::invalid("at least one seed is required"));
    }
    config.validate()?;
    let k = dataset.n_classes();

    let mut methods: Vec<(String, Method)> = vec![(BASELINE.into(), Method::Baseline), ("y-only".into(), Method::SemanticOnly)];
    if dataset.features.len() > 1 {
        for (i, (id, _)) in dataset.features.iter().enumerate() {
            methods.push((format!("single:{id}"), Method::Single(i)));
        }
        methods.push(("concat".into(), Method::Concat));
    }
    if !dataset.features.is_empty() {
        methods.push(("fusion".into(), Method::Full));
        methods.push(("no-joint".into(), Method::NoJoint));
    }

    let mut tallies: Vec<Tally> = methods.iter().map(|_| Tally::default()).collect();
    for s in 0..seeds {
        let sample = permuted(dataset, labels, s, config.seed)?;
        for ((name, method), tally) in methods.iter().zip(tallies.iter_mut()) {
            let start = Instant::now();
            let (pred, result) = run_method(method, &sample, config)?;
            tally.elapsed_ms += start.elapsed().as_secs_f64() * 1e3;
            tally.accuracy += accuracy(&pred, &sample.labels)?;
            add_per_class(&mut tally.per_class, per_class_accuracy(&pred, &sample.labels, k)?);
            if s == 0 {
                if let Some(r) = result {
                    let last = r.trace.last().expect("non-empty trace");
                    tally.first = Some((r.trace.len(), last.objective, last.violation));
                }
            }
            log::info!("seed {s} {name}: done");
        }
    }

    let scale = 1.0 / seeds as f64;
    let baseline_acc = tallies[0].accuracy * scale;
    let reports = methods
        .iter()
        .zip(tallies)
        .map(|((name, _), t)| MethodReport {
            name: name.clone(),
            accuracy: t.accuracy * scale,
            delta: t.accuracy * scale - baseline_acc,
            per_class: t.per_class.into_iter().map(|v| v.map(|x| x * scale)).collect(),
            outer_iterations: t.first.map(|f| f.0),
            objective: t.first.map(|f| f.1),
            violation: t.first.map(|f| f.2),
            elapsed_ms: timing.then_some(t.elapsed_ms * scale),
        })
        .collect();

    Ok(Report {
        dataset: dataset.name.clone(),
        n_samples: dataset.n_samples(),
        n_classes: k,
        seeds,
        baseline: BASELINE.into(),
        class_names: dataset.class_names.clone(),
        config: config_echo(config),
        methods: reports,
    })
}

/// Summary of a single fusion run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dataset: String,
    pub n_samples: usize,
    pub n_classes: usize,
    pub feature_sources: Vec<String>,
    pub semantic_sources: Vec<String>,
    pub class_names: Option<Vec<String>>,
    pub config: Vec<(String, String)>,
    pub result: FusionResult<f64>,
    /// Present when the dataset has labels.
    pub accuracy: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub elapsed_ms: Option<f64>,
}

impl RunSummary {
    pub fn new(dataset: &Dataset, config: &FusionConfig<f64>, result: FusionResult<f64>, elapsed_ms: Option<f64>) -> Result<Self> {
        let (accuracy, per_class) = match &dataset.labels {
            Some(labels) => {
                let pred = result.predictions();
                (Some(self::accuracy(&pred, labels)?), per_class_accuracy(&pred, labels, dataset.n_classes())?)
            }
            None => (None, Vec::new()),
        };
        Ok(Self {
            dataset: dataset.name.clone(),
            n_samples: dataset.n_samples(),
            n_classes: dataset.n_classes(),
            feature_sources: dataset.features.iter().map(|(id, _)| id.clone()).collect(),
            semantic_sources: dataset.semantics.iter().map(|(id, _)| id.clone()).collect(),
            class_names: dataset.class_names.clone(),
            config: config_echo(config),
            result,
            accuracy,
            per_class,
            elapsed_ms,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset = {}", self.dataset);
        let _ = writeln!(out, "samples = {}", self.n_samples);
        let _ = writeln!(out, "classes = {}", self.n_classes);
        let _ = writeln!(out, "feature_sources = {}", self.feature_sources.join(","));
        let _ = writeln!(out, "semantic_sources = {}", self.semantic_sources.join(","));
        out.push_str("\n[config]\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[result]\n");
        let conv = self.result.converged_at.map_or_else(|| "no".into(), |t| t.to_string());
        let _ = writeln!(out, "converged_at = {conv}");
        let _ = writeln!(out, "outer_iterations = {}", self.result.trace.len());
        if let Some(acc) = self.accuracy {
            let _ = writeln!(out, "accuracy = {}", format_g(acc));
        }
        if let Some(ms) = self.elapsed_ms {
            let _ = writeln!(out, "time_ms = {}", format_g(ms));
        }
        for (c, acc) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "class {} = {}", class_label(&self.class_names, c), format_opt(*acc));
        }
        out.push_str("\n[trace]\n");
        out.push_str("iteration objective q_change violation sinkhorn_sweeps\n");
        for r in &self.result.trace {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                r.iteration,
                format_g(r.objective),
                format_g(r.q_change),
                format_g(r.violation),
                r.sinkhorn_sweeps
            );
        }
        out
    }
}
