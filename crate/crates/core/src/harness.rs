//! Experiment suites, configuration and result files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffeo::pullback;
use crate::error::{Error, Result};
use crate::flow::{run_nrf, FlowParams};
use crate::gauge::{admissible_diffeo, gauge_iteration, GaugeRunReport, GaugeVector, B_TOL, DEFAULT_C1};
use crate::isometry::{build_isometry, continuity_modulus};
use crate::metric::{curvature, neighborhood_certificate, pinching_up_to_scale, volume, ReducedMetric};
use crate::sample::{perturbed_round, sample_coefficients, sample_pinched, MAX_AMPLITUDE};
use crate::spectral::spectrum;
use crate::sphere::Quadrature;

/// Curvature deviation that admits a metric to the gauge stage.
pub const ENTRY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Spectrum,
    Flow,
    Gauge,
    #[default]
    Pipeline,
    Isometry,
    Family,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Spectrum => "spectrum",
            Suite::Flow => "flow",
            Suite::Gauge => "gauge",
            Suite::Pipeline => "pipeline",
            Suite::Isometry => "isometry",
            Suite::Family => "family",
        }
    }
}

/// Continuous rules x ∈ [0, 1] ↦ coefficient vector of the seeded samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyRule {
    Constant { seed: u64 },
    /// (1 − x)·c(from) + x·c(to)
    Linear { from: u64, to: u64 },
    /// (1 − 2x)·c(seed), round at x = 1/2
    ThroughRound { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub samples: usize,
    pub rule: FamilyRule,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self { samples: 9, rule: FamilyRule::Linear { from: 1, to: 2 } }
    }
}

impl FamilySpec {
    pub fn params(&self) -> Vec<f64> {
        let m = self.samples - 1;
        (0..=m).map(|i| i as f64 / m as f64).collect()
    }

    /// Same rule with the sample spacing halved.
    pub fn refined(&self) -> Self {
        Self { samples: 2 * self.samples - 1, rule: self.rule.clone() }
    }

    pub fn metric(&self, grid: &Arc<Quadrature>, amplitude: f64, x: f64) -> Result<ReducedMetric> {
        let c = |s: u64| sample_coefficients(grid, s, amplitude);
        let mix = |a: [f64; 3], b: [f64; 3], w: f64| [0, 1, 2].map(|k| (1.0 - w) * a[k] + w * b[k]);
        let coeffs = match self.rule {
            FamilyRule::Constant { seed } => c(seed)?,
            FamilyRule::Linear { from, to } => mix(c(from)?, c(to)?, x),
            FamilyRule::ThroughRound { seed } => c(seed)?.map(|v| (1.0 - 2.0 * x) * v),
        };
        let g = perturbed_round(grid, &coeffs)?;
        if !pinching_up_to_scale(&g)?.pinched {
            return Err(Error::Precondition(format!("family member at x = {x} is not pinched")));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub n: usize,
    pub resolution: usize,
    pub seeds: Vec<u64>,
    pub amplitude: f64,
    pub flow: FlowParams,
    /// horizon of the plain flow runs
    pub t_max: f64,
    /// length of the flow before the gauge stage
    pub entry_time: f64,
    pub schedule: Vec<f64>,
    pub c1: f64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub family: FamilySpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: Suite::default(),
            n: 3,
            resolution: 32,
            seeds: vec![7],
            amplitude: 0.05,
            flow: FlowParams { resolution: 32, adapt_tol: 1e-8, sample_every: 0.25, ..Default::default() },
            t_max: 20.0,
            entry_time: 1.0,
            schedule: (0..=8).map(f64::from).collect(),
            c1: DEFAULT_C1,
            out: PathBuf::from("out"),
            workers: None,
            family: FamilySpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 3 {
            return bad(format!("n = {} must be at least 3", self.n));
        }
        if self.resolution < 8 {
            return bad(format!("resolution {} is below 8", self.resolution));
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if !(0.0..=MAX_AMPLITUDE).contains(&self.amplitude) {
            return bad(format!("amplitude {} outside [0, {MAX_AMPLITUDE}]", self.amplitude));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) || !(self.entry_time >= 0.0 && self.entry_time.is_finite()) {
            return bad("t_max must be positive and entry_time nonnegative".into());
        }
        if self.schedule.first() != Some(&0.0) || self.schedule.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("schedule must start at 0 and increase".into());
        }
        if !(self.c1 > 0.0) {
            return bad(format!("c1 = {} must be positive", self.c1));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if self.family.samples < 2 {
            return bad("a family needs at least two samples".into());
        }
        self.flow_params().validate()
    }

    /// Flow parameters with the grid size taken from the config.
    pub fn flow_params(&self) -> FlowParams {
        FlowParams { resolution: self.resolution, ..self.flow.clone() }
    }

    pub fn grid(&self) -> Result<Arc<Quadrature>> {
        Quadrature::new(self.n, self.resolution)
    }

    /// SHA-256 of the canonical JSON form, without the keys that cannot
    /// change results (worker count and output directory).
    pub fn hash(&self) -> String {
        let key = Self { workers: None, out: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&key).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// One fiber of the pipeline: flow to the entry time, gauge iteration,
/// isometry of the limit.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub entry_defect: f64,
    pub entry_certified: bool,
    pub gauge: GaugeRunReport,
    /// the gauged limit pulled back by φ(ε_∞)⁻¹: the round limit in the frame of the input
    #[serde(skip)]
    pub round_limit: Option<ReducedMetric>,
    pub round_limit_defect: Option<f64>,
    pub isometry_residual: Option<f64>,
    pub failure: Option<String>,
}

impl PipelineReport {
    pub fn limit(&self) -> Option<&ReducedMetric> {
        self.round_limit.as_ref()
    }
}

pub fn pipeline(g0: &ReducedMetric, cfg: &ExperimentConfig) -> Result<PipelineReport> {
    let q = g0.grid();
    let bg = ReducedMetric::round(q);
    let params = cfg.flow_params();
    let g1 = if cfg.entry_time > 0.0 {
        run_nrf(g0, &params.with_t_end(cfg.entry_time))?.final_metric().clone()
    } else {
        g0.clone()
    };
    let entry_defect = curvature(&g1)?.round_defect();
    let entry_certified = neighborhood_certificate(&g1, &bg, &[ENTRY_THRESHOLD], f64::INFINITY, None)?;
    let gauge = gauge_iteration(&g1, &bg, &cfg.schedule, &params, cfg.c1)?;
    let mut report = PipelineReport {
        entry_defect,
        entry_certified,
        failure: gauge.failure.clone(),
        round_limit: None,
        round_limit_defect: None,
        isometry_residual: None,
        gauge,
    };
    let Some(limit) = report.gauge.limit_metric.as_ref() else {
        return Ok(report);
    };
    let undo = admissible_diffeo(&report.gauge.limit_eps, &bg)?.inverse()?;
    let round = pullback(limit, &undo)?;
    report.round_limit_defect = Some(curvature(&round)?.round_defect());
    match build_isometry(&round) {
        Ok(r) => report.isometry_residual = Some(r.residual),
        Err(e) => report.failure = Some(e.to_string()),
    }
    report.round_limit = Some(round);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRow {
    pub x: f64,
    pub limit_defect: Option<f64>,
    pub isometry_residual: Option<f64>,
    /// ‖ĝ(x_i) − ĝ(x_{i+1})‖_∞
    pub gap_to_next: Option<f64>,
    pub flagged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyTable {
    pub rows: Vec<FamilyRow>,
    /// max_i gap_i / |x_i − x_{i+1}| over unflagged neighbours
    pub modulus: f64,
}

impl FamilyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,limit_defect,isometry_residual,gap_to_next,flagged\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6e}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{},{},{},{}\n",
                r.x,
                f(r.limit_defect),
                f(r.isometry_residual),
                f(r.gap_to_next),
                r.flagged
            ));
        }
        out
    }
}

/// Runs the pipeline on every family member; failed fibers are flagged.
pub fn family_continuity(spec: &FamilySpec, cfg: &ExperimentConfig) -> Result<FamilyTable> {
    let q = cfg.grid()?;
    let xs = spec.params();
    let fibers: Vec<Result<PipelineReport>> = xs
        .par_iter()
        .map(|x| spec.metric(&q, cfg.amplitude, *x).and_then(|g| pipeline(&g, cfg)))
        .collect();
    let mut rows: Vec<FamilyRow> = xs
        .iter()
        .zip(&fibers)
        .map(|(x, f)| match f {
            Ok(r) => FamilyRow {
                x: *x,
                limit_defect: r.round_limit_defect,
                isometry_residual: r.isometry_residual,
                gap_to_next: None,
                flagged: r.failure.is_some() || r.limit().is_none() || !r.entry_certified,
                failure: r.failure.clone(),
            },
            Err(e) => FamilyRow {
                x: *x,
                limit_defect: None,
                isometry_residual: None,
                gap_to_next: None,
                flagged: true,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let mut modulus: f64 = 0.0;
    for i in 0..xs.len() - 1 {
        let limits = (fibers[i].as_ref().ok().and_then(|r| r.limit()), fibers[i + 1].as_ref().ok().and_then(|r| r.limit()));
        if let (Some(a), Some(b)) = limits {
            let gap = a.sup_distance(b);
            rows[i].gap_to_next = Some(gap);
            modulus = modulus.max(gap / (xs[i + 1] - xs[i]));
        }
    }
    Ok(FamilyTable { rows, modulus })
}

/// A measured value against its threshold.
#[derive(Debug, Clone, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Gate {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value >= threshold }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(ok)), threshold: 1.0, pass: ok }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub suite: Suite,
    pub config_hash: String,
    pub gates: Vec<Gate>,
    /// per-case numerical failures
    pub failures: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

struct Sink {
    dir: PathBuf,
    hash: String,
    files: Vec<PathBuf>,
}

impl Sink {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.out.join(cfg.suite.name());
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Io { path: dir.display().to_string(), message: e.to_string() })?;
        Ok(Self { dir, hash: cfg.hash(), files: vec![] })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, units: &str, body: &str) -> Result<()> {
        self.write(name, &format!("# config_hash={}\n# units: {units}\n{body}", self.hash))
    }
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Runs the configured suite and writes its files under `out/<suite>/`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteSummary> {
    cfg.validate()?;
    let mut sink = Sink::new(cfg)?;
    let mut gates = Vec::new();
    let mut failures = Vec::new();
    pool(cfg)?.install(|| match cfg.suite {
        Suite::Spectrum => spectrum_suite(cfg, &mut sink, &mut gates),
        Suite::Flow => flow_suite(cfg, &mut sink, &mut gates, &mut failures),
        Suite::Gauge | Suite::Pipeline => pipeline_suite(cfg, &mut sink, &mut gates, &mut failures),
        Suite::Isometry => isometry_suite(cfg, &mut sink, &mut gates),
        Suite::Family => family_suite(cfg, &mut sink, &mut gates),
    })?;
    let mut summary = SuiteSummary { suite: cfg.suite, config_hash: sink.hash.clone(), gates, failures, files: vec![] };
    sink.write("summary.json", &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    summary.files = sink.files;
    Ok(summary)
}

fn spectrum_suite(cfg: &ExperimentConfig, sink: &mut Sink, gates: &mut Vec<Gate>) -> Result<()> {
    let q = cfg.grid()?;
    let s = spectrum(&ReducedMetric::round(&q), 8)?;
    sink.csv("spectrum.csv", "eigenvalues in units of the round curvature", &s.to_csv())?;
    let nf = cfg.n as f64;
    gates.push(Gate::at_most("leading eigenvalue - (n-2)", (s.eigenvalues[0] - (nf - 2.0)).abs(), 1e-6));
    gates.push(Gate::at_most("second eigenvalue", s.eigenvalues[1].abs(), 1e-6));
    gates.push(Gate::at_most("third eigenvalue", s.eigenvalues[2], -4.0 + 1e-4));
    Ok(())
}

fn seeded<T: Send>(cfg: &ExperimentConfig, f: impl Fn(&ReducedMetric) -> Result<T> + Sync) -> Result<Vec<(u64, Result<T>)>> {
    let q = cfg.grid()?;
    Ok(cfg
        .seeds
        .par_iter()
        .map(|s| (*s, sample_pinched(&q, *s, cfg.amplitude).and_then(|g| f(&g))))
        .collect())
}

fn flow_suite(cfg: &ExperimentConfig, sink: &mut Sink, gates: &mut Vec<Gate>, failures: &mut Vec<String>) -> Result<()> {
    let params = cfg.flow_params().with_t_end(cfg.t_max);
    for (seed, res) in seeded(cfg, |g| run_nrf(g, &params))? {
        match res {
            Ok(tr) => {
                let g = tr.final_metric();
                let omega = g.grid().omega_n();
                sink.csv(&format!("seed_{seed}.csv"), "t in flow time, other columns dimensionless", &tr.to_csv())?;
                gates.push(Gate::at_most(format!("seed {seed}: final roundness defect"), curvature(g)?.round_defect(), 1e-6));
                gates.push(Gate::at_most(format!("seed {seed}: volume drift / omega"), (volume(g) - omega).abs() / omega, 1e-6));
            }
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                gates.push(Gate::flag(format!("seed {seed}: run completed"), false));
            }
        }
    }
    Ok(())
}

fn pipeline_suite(cfg: &ExperimentConfig, sink: &mut Sink, gates: &mut Vec<Gate>, failures: &mut Vec<String>) -> Result<()> {
    let full = cfg.suite == Suite::Pipeline;
    let run = |g: &ReducedMetric| {
        if full {
            pipeline(g, cfg)
        } else {
            gauge_iteration(g, &ReducedMetric::round(g.grid()), &cfg.schedule, &cfg.flow_params(), cfg.c1).map(
                |gauge| PipelineReport {
                    entry_defect: f64::NAN,
                    entry_certified: true,
                    failure: gauge.failure.clone(),
                    gauge,
                    round_limit: None,
                    round_limit_defect: None,
                    isometry_residual: None,
                },
            )
        }
    };
    for (seed, res) in seeded(cfg, run)? {
        let r = match res {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                gates.push(Gate::flag(format!("seed {seed}: run completed"), false));
                continue;
            }
        };
        if let Some(f) = &r.failure {
            failures.push(format!("seed {seed}: {f}"));
        }
        let g = &r.gauge;
        sink.write(&format!("seed_{seed}.json"), &serde_json::to_string_pretty(&r).expect("report serializes"))?;
        sink.csv(&format!("seed_{seed}_series.csv"), "t in flow time, other columns dimensionless", &g.to_csv())?;
        let worst_b = g.terminal_b.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        gates.push(Gate::at_most(format!("seed {seed}: max |b(T,T)|"), worst_b, B_TOL));
        gates.push(Gate::flag(format!("seed {seed}: cauchy"), g.cauchy_ok));
        if !full {
            continue;
        }
        gates.push(Gate::flag(format!("seed {seed}: entry certificate"), r.entry_certified));
        match &g.decay {
            Some(d) => {
                gates.push(Gate::at_most(format!("seed {seed}: measured c1"), d.c1_measured, cfg.c1));
                gates.push(Gate::at_least(format!("seed {seed}: check decay rate"), d.rate_check.unwrap_or(f64::INFINITY), 1.0));
            }
            None => gates.push(Gate::flag(format!("seed {seed}: decay report"), false)),
        }
        gates.push(Gate::flag(format!("seed {seed}: limit certified"), g.limit_certified));
        gates.push(Gate::at_least(format!("seed {seed}: limit rate"), g.limit_rate.unwrap_or(f64::INFINITY), 1.3));
        let iso = r.isometry_residual.unwrap_or(f64::INFINITY);
        let defect = r.round_limit_defect.unwrap_or(f64::INFINITY);
        gates.push(Gate::at_most(format!("seed {seed}: isometry residual"), iso, 10.0 * defect.max(1e-12)));
    }
    Ok(())
}

fn isometry_suite(cfg: &ExperimentConfig, sink: &mut Sink, gates: &mut Vec<Gate>) -> Result<()> {
    let residual = |res: usize| -> Result<f64> {
        let q = Quadrature::new(cfg.n, res)?;
        let bg = ReducedMetric::round(&q);
        let g = pullback(&bg, &admissible_diffeo(&GaugeVector::axis(cfg.n, 0.05), &bg)?)?;
        Ok(build_isometry(&g)?.residual)
    };
    let (coarse, fine) = (residual(cfg.resolution)?, residual(2 * cfg.resolution)?);
    let q = cfg.grid()?;
    let bg = ReducedMetric::round(&q);
    let modulus = |k: usize| -> Result<f64> {
        let path = (0..=k)
            .map(|i| pullback(&bg, &admissible_diffeo(&GaugeVector::axis(cfg.n, 0.1 * i as f64 / k as f64), &bg)?))
            .collect::<Result<Vec<_>>>()?;
        continuity_modulus(&path)
    };
    let (m4, m8) = (modulus(4)?, modulus(8)?);
    let report = serde_json::json!({
        "config_hash": sink.hash,
        "residual": { "resolution": cfg.resolution, "coarse": coarse, "fine": fine },
        "modulus": { "samples_5": m4, "samples_9": m8 },
    });
    sink.write("isometry.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    gates.push(Gate::at_most("residual at N", coarse, 1e-6));
    gates.push(Gate::at_most("residual at 2N", fine, (0.5 * coarse).max(1e-10)));
    gates.push(Gate::at_most("modulus refinement change", (m8 / m4 - 1.0).abs(), 0.2));
    Ok(())
}

fn family_suite(cfg: &ExperimentConfig, sink: &mut Sink, gates: &mut Vec<Gate>) -> Result<()> {
    let coarse = family_continuity(&cfg.family, cfg)?;
    let fine = family_continuity(&cfg.family.refined(), cfg)?;
    let units = "x in [0, 1], other columns dimensionless";
    sink.csv("table.csv", units, &coarse.to_csv())?;
    sink.csv("table_refined.csv", units, &fine.to_csv())?;
    let flagged = coarse.rows.iter().chain(&fine.rows).filter(|r| r.flagged).count();
    gates.push(Gate::at_most("flagged fibers", flagged as f64, 0.0));
    gates.push(Gate::at_most("modulus", coarse.modulus, f64::MAX));
    let change = if coarse.modulus == fine.modulus { 0.0 } else { (fine.modulus / coarse.modulus - 1.0).abs() };
    gates.push(Gate::at_most("modulus refinement change", change, 0.3));
    Ok(())
}

/// Writes a seeded sample metric as `out/gen/metric_n{n}_seed{seed}.json`.
pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let q = cfg.grid()?;
    let dir = cfg.out.join("gen");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.display().to_string(), message: e.to_string() })?;
    cfg.seeds
        .iter()
        .map(|s| {
            let path = dir.join(format!("metric_n{}_seed{s}.json", cfg.n));
            sample_pinched(&q, *s, cfg.amplitude)?.save(&path)?;
            Ok(path)
        })
        .collect()
}
