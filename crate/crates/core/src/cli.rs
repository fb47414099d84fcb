//! Command-line front end: run configuration, subcommands and reports.
//!
//! Every subcommand returns an [`Outcome`]; `main` maps its verdict to the exit code.

use crate::dirac::assemble;
use crate::endsim::{
    assemble_end, commutator_grid, numerical_index, supertrace_flow, CapSpec, IndexReport, TAU_SCHEDULE,
};
use crate::eta::{eta_contour, eta_product_oracle, eta_tilde, is_product_family, vn_trace_identity, TScheme, CONVENTION};
use crate::flt::{parseval, random_sequence, weighted_parseval};
use crate::fourier::FourierField;
use crate::geom::{df_homotopy, gauge_shift, geometric_terms, homotopy_drift, index_form, rhs_index, transgress};
use crate::geom::{EtaSettings, RhsMode};
use crate::model::{build_torus_model, df_deform, CircleModel, ClosedModel, HarmonicSpec};
use crate::spectral::{fredholm_check, h_count, pencil_spectrum, residue_identity};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "endperiodic", about = "Index computations for end-periodic Dirac operators")]
pub struct Args {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 lets rayon decide).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Spectral points of the family and Fredholm checks.
    SpectralSet,
    /// η of the closed family, with ε and cutoff series.
    Eta,
    /// Right-hand side of the index formula against the numerical index.
    Index,
    /// End simulation: numerical index and the supertrace flow.
    Simulate,
    /// Identity checks on the configured model.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SpectralSet => "spectral-set",
            Command::Eta => "eta",
            Command::Index => "index",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }
}

/// One Fourier mode amplitude·cos(2π(pθ/Lθ + qy/Ly) + phase) of the curvature potential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialMode {
    pub p: i64,
    #[serde(default)]
    pub q: i64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

fn two_pi() -> f64 {
    2.0 * PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "two_pi")]
    pub length_theta: f64,
    #[serde(default = "two_pi")]
    pub length_y: f64,
    pub twist: f64,
    pub cutoff: usize,
    /// y-modes kept; defaults to `cutoff`.
    #[serde(default)]
    pub cutoff_y: Option<usize>,
    #[serde(default)]
    pub potential: Vec<PotentialMode>,
    /// Harmonics added to the lift of df = dθ/Lθ.
    #[serde(default)]
    pub df: Vec<HarmonicSpec>,
    #[serde(default = "one")]
    pub df_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    /// ln|z| values checked for spectral points.
    pub deltas: Vec<f64>,
    pub samples: usize,
    /// Half-width of the band around |z| = 1 counted into h.
    pub h_band: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { deltas: vec![0.0], samples: 256, h_band: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaConfig {
    pub eps: f64,
    pub z_samples: usize,
    pub scheme: TScheme,
    pub tilde_schedule: Vec<f64>,
    /// ε values of the (ε, η_ε) series.
    pub eps_grid: Vec<f64>,
    /// Cutoffs of the (Λ, η) series.
    pub cutoff_sweep: Vec<usize>,
    /// Largest accepted distance from the circle oracle on product models.
    pub oracle_tolerance: f64,
}

impl Default for EtaConfig {
    fn default() -> Self {
        Self {
            eps: 0.0,
            z_samples: 128,
            scheme: TScheme::default(),
            tilde_schedule: vec![0.2, 0.1],
            eps_grid: Vec::new(),
            cutoff_sweep: Vec::new(),
            oracle_tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndsimConfig {
    /// Last period of Z_N.
    pub n: usize,
    pub cap: CapSpec,
    /// Weight used when the unit circle meets the spectral set.
    pub eps: f64,
    pub taus: Vec<f64>,
    /// Times of the supertrace flow; the first and last are the endpoints checked.
    pub t_grid: Vec<f64>,
    /// s and t values of the commutator grid.
    pub commutator_times: Vec<f64>,
    pub commutator_z: usize,
}

impl Default for EndsimConfig {
    fn default() -> Self {
        Self {
            n: 8,
            cap: CapSpec::default(),
            eps: 0.1,
            taus: TAU_SCHEDULE.to_vec(),
            t_grid: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
            commutator_times: vec![0.5, 1.0, 2.0],
            commutator_z: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub flt: bool,
    pub commutator: bool,
    pub residue: bool,
    pub flow: bool,
    pub homotopy: bool,
    pub von_neumann: bool,
    pub flt_periods: Vec<usize>,
    pub homotopy_steps: usize,
    pub harmonic: HarmonicSpec,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            flt: true,
            commutator: true,
            residue: true,
            flow: true,
            homotopy: true,
            von_neumann: true,
            flt_periods: vec![2, 4, 8, 16],
            homotopy_steps: 5,
            harmonic: HarmonicSpec::first(0.6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub eta: EtaConfig,
    #[serde(default)]
    pub endsim: EndsimConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.eta.z_samples < 4 || self.spectral.samples < 4 || self.endsim.commutator_z < 2 {
            return bad("sample counts are too small");
        }
        if self.endsim.t_grid.iter().any(|&t| !(t > 0.0)) || self.endsim.commutator_times.iter().any(|&t| !(t > 0.0)) {
            return bad("times must be positive");
        }
        if self.endsim.taus.iter().any(|&t| !(t > 0.0)) {
            return bad("τ values must be positive");
        }
        if self.verify.flt_periods.iter().any(|&m| m < 2) {
            return bad("FLT checks need at least two periods");
        }
        if self.eta.tilde_schedule.iter().any(|&e| !(e > 0.0)) {
            return bad("the η̃ schedule needs positive ε");
        }
        self.build_model()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn build_model(&self) -> Result<ClosedModel> {
        self.build_model_with_cutoff(self.model.cutoff)
    }

    fn build_model_with_cutoff(&self, cutoff: usize) -> Result<ClosedModel> {
        let m = &self.model;
        let potential = if m.potential.is_empty() {
            None
        } else {
            let px = m.potential.iter().map(|h| h.p.unsigned_abs() as usize).max().unwrap_or(0);
            let py = m.potential.iter().map(|h| h.q.unsigned_abs() as usize).max().unwrap_or(0);
            let modes = m.potential.clone();
            let (lx, ly) = (m.length_theta, m.length_y);
            Some(FourierField::sample(lx, ly, 4 * px + 4, if py == 0 { 1 } else { 4 * py + 4 }, move |x, y| {
                modes
                    .iter()
                    .map(|h| h.amplitude * (2.0 * PI * (h.p as f64 * x / lx + h.q as f64 * y / ly) + h.phase).cos())
                    .sum()
            }))
        };
        let mut model = build_torus_model(m.length_theta, m.length_y, cutoff, m.twist, potential, None)?;
        model = model.with_cutoffs(cutoff, m.cutoff_y.unwrap_or(cutoff))?;
        for h in &m.df {
            model = df_deform(&model, m.df_scale, h)?;
        }
        Ok(model)
    }

    fn truncation(&self) -> Value {
        json!({
            "lambda": self.model.cutoff,
            "lambda_y": self.model.cutoff_y.unwrap_or(self.model.cutoff),
            "z_samples": self.eta.z_samples,
            "t_scheme": self.eta.scheme,
            "end_periods": self.endsim.n,
            "taus": self.endsim.taus,
        })
    }
}

/// Result of a subcommand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

impl Verdict {
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
            Verdict::Indeterminate => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub verdict: Verdict,
    pub reason: Option<String>,
    pub body: Value,
    /// (file name, header, rows) of CSV series.
    pub series: Vec<(String, [&'static str; 2], Vec<(f64, f64)>)>,
}

impl Outcome {
    fn new(verdict: Verdict, reason: Option<String>, body: Value) -> Self {
        Self { verdict, reason, body, series: Vec::new() }
    }
}

/// Exit code of a library error: 4 for configuration, 3 for indeterminate, 2 otherwise.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 4,
        Error::Indeterminate(_) => 3,
        Error::Domain(_) | Error::Io(_) => 2,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Indeterminate(_) => "indeterminate",
        Error::Domain(_) => "domain",
        Error::Io(_) => "io",
    }
}

/// Machine-readable form of an error.
pub fn error_json(command: Option<Command>, e: &Error) -> Value {
    json!({
        "command": command.map(|c| c.name()),
        "verdict": if error_code(e) == 3 { "indeterminate" } else { "error" },
        "error": { "kind": error_kind(e), "message": e.to_string() },
    })
}

pub fn run_command(cmd: Command, cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    match cmd {
        Command::SpectralSet => cmd_spectral_set(cfg),
        Command::Eta => cmd_eta(cfg),
        Command::Index => cmd_index(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Verify => cmd_verify(cfg, seed),
    }
}

/// Full report: the outcome body wrapped with the provenance of the run.
pub fn report(cmd: Command, cfg: &RunConfig, seed: u64, out: &Outcome) -> Value {
    json!({
        "command": cmd.name(),
        "verdict": out.verdict,
        "reason": out.reason,
        "config_hash": cfg.hash(),
        "seed": seed,
        "convention": CONVENTION,
        "truncation": cfg.truncation(),
        "result": out.body,
    })
}

/// Writes `<cmd>.json` and the CSV series into `dir`.
pub fn write_outputs(dir: &Path, cmd: Command, report: &Value, out: &Outcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join(format!("{}.json", cmd.name())), text + "\n")?;
    for (name, header, rows) in &out.series {
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for (a, b) in rows {
            w.write_record([a.to_string(), b.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_spectral_set(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.build_model()?;
    let fam = assemble(&model);
    let pts = pencil_spectrum(&fam)?;
    let h = h_count(&pts, cfg.spectral.h_band)?;
    let checks = cfg
        .spectral
        .deltas
        .iter()
        .map(|&d| fredholm_check(&fam, d, cfg.spectral.samples))
        .collect::<Result<Vec<_>>>()?;
    let on_circle: Vec<_> = pts.iter().filter(|p| p.ln_abs_z().abs() <= cfg.spectral.h_band).cloned().collect();
    let body = json!({
        "points": pts,
        "unit_circle": { "h": h, "points": on_circle, "fredholm": h == 0 },
        "fredholm_checks": checks,
    });
    Ok(Outcome::new(Verdict::Pass, None, body))
}

pub fn cmd_eta(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.build_model()?;
    let fam = assemble(&model);
    let e = &cfg.eta;
    let pts = pencil_spectrum(&fam)?;
    let h = h_count(&pts, cfg.spectral.h_band)?;
    let mut out = if e.eps == 0.0 && h > 0 {
        // the unit circle is not admissible: report h and η̃ instead
        let t = eta_tilde(&fam, &e.tilde_schedule, e.z_samples, &e.scheme)?;
        Outcome::new(
            Verdict::Pass,
            Some(format!("unit circle carries {h} spectral points; η̃ reported")),
            json!({ "h": h, "eta_tilde": t }),
        )
    } else {
        let r = eta_contour(&fam, e.eps, e.z_samples, &e.scheme)?;
        let mut body = json!({ "eta": r });
        let mut verdict = Verdict::Pass;
        let mut reason = None;
        if e.eps == 0.0 && is_product_family(&fam) {
            let y = CircleModel::new(model.ly, model.twist, model.lambda_y)?;
            let o = eta_product_oracle(&y);
            let gap = (r.value - o.eta).abs();
            body["oracle"] = json!({ "eta": o.eta, "h": o.h, "gap": gap, "tolerance": e.oracle_tolerance });
            if gap > e.oracle_tolerance {
                verdict = Verdict::Fail;
                reason = Some(format!("η differs from the circle oracle by {gap:.3e}"));
            }
        }
        Outcome::new(verdict, reason, body)
    };
    if !e.eps_grid.is_empty() {
        let rows = e
            .eps_grid
            .iter()
            .map(|&x| Ok((x, eta_contour(&fam, x, e.z_samples, &e.scheme)?.value)))
            .collect::<Result<Vec<_>>>()?;
        out.series.push(("eta_eps.csv".into(), ["eps", "eta"], rows));
    }
    if !e.cutoff_sweep.is_empty() {
        let rows = e
            .cutoff_sweep
            .iter()
            .map(|&l| {
                let f = assemble(&cfg.build_model_with_cutoff(l)?);
                Ok((l as f64, eta_contour(&f, e.eps, e.z_samples, &e.scheme)?.value))
            })
            .collect::<Result<Vec<_>>>()?;
        out.series.push(("eta_cutoff.csv".into(), ["lambda", "eta"], rows));
    }
    Ok(out)
}

/// Fredholm on the unit circle, else the configured small weight.
fn rhs_mode(cfg: &RunConfig, model: &ClosedModel) -> Result<(RhsMode, f64)> {
    let pts = pencil_spectrum(&assemble(model))?;
    if h_count(&pts, cfg.spectral.h_band)? == 0 {
        return Ok((RhsMode::Fredholm, 0.0));
    }
    if !(cfg.endsim.eps > 0.0) {
        return Err(Error::Config("the unit circle meets the spectral set; endsim.eps must be positive".into()));
    }
    Ok((RhsMode::Weighted { eps: cfg.endsim.eps }, cfg.endsim.eps))
}

fn eta_settings(cfg: &RunConfig) -> EtaSettings {
    EtaSettings { z_samples: cfg.eta.z_samples, scheme: cfg.eta.scheme.clone(), tilde_schedule: cfg.eta.tilde_schedule.clone() }
}

fn index_verdict(ind: &IndexReport) -> Option<String> {
    if ind.index.is_none() {
        Some(format!("numerical index not stable: {}", ind.note))
    } else {
        None
    }
}

pub fn cmd_index(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.build_model()?;
    let (mode, eps) = rhs_mode(cfg, &model)?;
    let rhs = rhs_index(&model, &cfg.endsim.cap, mode, &eta_settings(cfg))?;
    let em = assemble_end(&model, &cfg.endsim.cap, cfg.endsim.n, eps)?;
    let ind = numerical_index(&em, &cfg.endsim.taus)?;
    let body = json!({ "rhs": rhs, "numerical_index": ind, "gap_tolerance": 0.05 });
    if let Some(r) = index_verdict(&ind) {
        return Ok(Outcome::new(Verdict::Indeterminate, Some(r), body));
    }
    let (verdict, reason) = if rhs.gap > 0.05 {
        (Verdict::Fail, Some(format!("rhs total {} is {:.3e} from an integer", rhs.total, rhs.gap)))
    } else if Some(rhs.nearest_integer) != ind.index {
        (Verdict::Fail, Some(format!("rhs gives {} but the end simulation gives {:?}", rhs.nearest_integer, ind.index)))
    } else {
        (Verdict::Pass, None)
    };
    Ok(Outcome::new(verdict, reason, body))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.build_model()?;
    let (_, eps) = rhs_mode(cfg, &model)?;
    let em = assemble_end(&model, &cfg.endsim.cap, cfg.endsim.n, eps)?;
    let ind = numerical_index(&em, &cfg.endsim.taus)?;
    let flow = supertrace_flow(&em, &cfg.endsim.t_grid)?;
    let body = json!({
        "eps": eps,
        "cap_integral": em.cap_integral(),
        "numerical_index": ind,
        "flow": flow,
    });
    let mut out = match index_verdict(&ind) {
        Some(r) => Outcome::new(Verdict::Indeterminate, Some(r), body),
        None => Outcome::new(Verdict::Pass, None, body),
    };
    out.series.push(("flow.csv".into(), ["t", "str_flat"], flow.iter().map(|r| (r.t, r.supertrace)).collect()));
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct Check {
    name: String,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn check(name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), value, tolerance, pass: value <= tolerance }
}

pub fn cmd_verify(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let v = &cfg.verify;
    let model = cfg.build_model()?;
    let fam = assemble(&model);
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let mut indeterminate = None;

    if v.flt {
        let mut rng = StdRng::seed_from_u64(seed);
        for &m in &v.flt_periods {
            let lift: Vec<f64> = (0..5).map(|i| (i as f64 + rng.random::<f64>()) / 5.0).collect();
            let u = random_sequence(&mut rng, m, &lift);
            let w = random_sequence(&mut rng, m, &lift);
            for eps in [0.0, 0.3, -0.3] {
                let p = parseval(&u, &w, eps).iter().map(|d| d.relative()).fold(0.0, f64::max);
                let q = weighted_parseval(&u, &w, eps).iter().map(|d| d.relative()).fold(0.0, f64::max);
                checks.push(check(format!("flt parseval M={m} eps={eps}"), p, 1e-12));
                checks.push(check(format!("flt weighted parseval M={m} eps={eps}"), q, 1e-12));
            }
        }
    }
    let (mode, eps) = rhs_mode(cfg, &model)?;
    if v.residue {
        if mode == RhsMode::Fredholm {
            let r = residue_identity(&fam, 1e-11)?;
            checks.push(check("residue identity", r.discrepancy(), 1e-8));
        } else {
            skipped.push("residue identity: spectral points on the unit circle");
        }
    }
    if v.von_neumann {
        for &t in &cfg.endsim.commutator_times {
            let r = vn_trace_identity(&model, t, 8)?;
            checks.push(check(format!("von Neumann trace t={t}"), r.discrepancy(), 1e-10));
        }
    }
    if v.commutator || v.flow {
        let em = assemble_end(&model, &cfg.endsim.cap, cfg.endsim.n, eps)?;
        if v.commutator {
            let times = &cfg.endsim.commutator_times;
            let pairs: Vec<(f64, f64)> = times.iter().flat_map(|&s| times.iter().map(move |&t| (s, t))).collect();
            for r in commutator_grid(&em, &pairs, cfg.endsim.commutator_z)? {
                checks.push(check(format!("commutator s={} t={}", r.s, r.t), r.discrepancy(), 1e-6));
            }
        }
        if v.flow {
            let ind = numerical_index(&em, &cfg.endsim.taus)?;
            match ind.index {
                Some(i) => {
                    let flow = supertrace_flow(&em, &cfg.endsim.t_grid)?;
                    let (first, last) = (flow[0], flow[flow.len() - 1]);
                    checks.push(check(format!("flow start t={}", first.t), (first.supertrace - em.cap_integral()).abs(), 0.05));
                    checks.push(check(format!("flow end t={}", last.t), (last.supertrace - i as f64).abs(), 0.02));
                }
                None => indeterminate = Some(format!("numerical index not stable: {}", ind.note)),
            }
        }
    }
    if v.homotopy {
        let rows = df_homotopy(&model, &v.harmonic, v.homotopy_steps, &cfg.endsim.cap, mode, &eta_settings(cfg))?;
        checks.push(check("df homotopy drift", homotopy_drift(&rows), 2e-2));
        let ii = index_form(&model);
        let w = transgress(&ii)?;
        let gauge = FourierField::sample(model.lx, model.ly, 8, 8, |x, y| {
            (2.0 * PI * x / model.lx).sin() * (2.0 * PI * y / model.ly).cos() + 0.3 * (4.0 * PI * x / model.lx).cos()
        });
        let (a, b) = geometric_terms(&w, &model);
        let (c, d) = geometric_terms(&gauge_shift(&w, &gauge), &model);
        checks.push(check("omega gauge shift", ((b - a) - (d - c)).abs(), 1e-10));
    }

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let reason = if !failed.is_empty() {
        Some(format!("failed: {}", failed.join(", ")))
    } else {
        indeterminate.clone()
    };
    let verdict = if !failed.is_empty() {
        Verdict::Fail
    } else if indeterminate.is_some() {
        Verdict::Indeterminate
    } else {
        Verdict::Pass
    };
    Ok(Outcome::new(verdict, reason, json!({ "checks": checks, "skipped": skipped })))
}

/// Parses, runs and writes outputs; returns the process exit code.
pub fn run(args: Args) -> i32 {
    if args.threads > 0 {
        // a second initialization only happens in tests; the first pool stays in effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global();
    }
    let fail = |e: Error| {
        println!("{}", serde_json::to_string_pretty(&error_json(Some(args.command), &e)).expect("json"));
        error_code(&e)
    };
    let Some(path) = args.config.as_deref() else {
        return fail(Error::Config("--config <path> is required".into()));
    };
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let out = match run_command(args.command, &cfg, args.seed) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    let rep = report(args.command, &cfg, args.seed, &out);
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    if let Err(e) = write_outputs(&dir, args.command, &rep, &out) {
        return fail(e);
    }
    println!("{}", serde_json::to_string_pretty(&rep).expect("json"));
    out.verdict.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRODUCT: &str = "[model]\ntwist = 0.25\ncutoff = 4\n";

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::parse("[model]\ntwist = 0.25\ncutoff = 4\ncolour = 1\n").unwrap_err();
        assert_eq!(error_code(&e), 4);
        assert!(e.to_string().contains("colour"), "{e}");
        assert!(RunConfig::parse("[model]\ntwist = 0.25\ncutoff = 4\n[etaa]\n").is_err());
    }

    #[test]
    fn model_domain_errors_are_config_errors() {
        assert_eq!(error_code(&RunConfig::parse("[model]\ntwist = 1.5\ncutoff = 4\n").unwrap_err()), 4);
        assert_eq!(error_code(&RunConfig::parse("[model]\ntwist = 0.2\ncutoff = 1\n").unwrap_err()), 4);
    }

    #[test]
    fn hash_tracks_content_not_layout() {
        let a = RunConfig::parse(PRODUCT).unwrap();
        let b = RunConfig::parse("[model]\ncutoff = 4\ntwist = 0.25\n\n[eta]\nz_samples = 128\n").unwrap();
        let c = RunConfig::parse("[model]\ntwist = 0.3\ncutoff = 4\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn scheme_is_read_from_a_tagged_table() {
        let c = RunConfig::parse(
            "[model]\ntwist = 0.25\ncutoff = 4\n[eta]\nscheme = { kind = \"quadrature\", c = 20.0, t_break = 1.0, tol = 1e-10 }\n",
        )
        .unwrap();
        assert_eq!(c.eta.scheme, TScheme::Quadrature { c: 20.0, t_break: 1.0, tol: 1e-10 });
    }

    #[test]
    fn potential_modes_build_the_field() {
        let c = RunConfig::parse(
            "[model]\ntwist = 0.25\ncutoff = 4\npotential = [{ p = 1, amplitude = 0.3, phase = -1.5707963267948966 }]\n",
        )
        .unwrap();
        let m = c.build_model().unwrap();
        // 0.3 cos(θ − π/2) = 0.3 sin θ
        for x in [0.3, 1.1, 4.0] {
            assert!((m.potential.eval(x, 0.7) - 0.3 * x.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_set_of_the_product() {
        let out = cmd_spectral_set(&RunConfig::parse(PRODUCT).unwrap()).unwrap();
        assert_eq!(out.verdict, Verdict::Pass);
        let pts = out.body["points"].as_array().unwrap();
        assert!(!pts.is_empty());
        assert_eq!(out.body["unit_circle"]["h"], 0);
    }

    #[test]
    fn untwisted_product_flags_the_unit_circle() {
        let out = cmd_spectral_set(&RunConfig::parse("[model]\ntwist = 0.0\ncutoff = 4\n").unwrap()).unwrap();
        assert_eq!(out.body["unit_circle"]["h"], 1);
        assert_eq!(out.body["unit_circle"]["fredholm"], false);
    }

    #[test]
    fn eta_vanishes_at_half_twist() {
        let out = cmd_eta(&RunConfig::parse("[model]\ntwist = 0.5\ncutoff = 8\n").unwrap()).unwrap();
        assert_eq!(out.verdict, Verdict::Pass);
        assert!(out.body["eta"]["value"].as_f64().unwrap().abs() < 1e-6);
    }

    #[test]
    fn index_of_the_product_cap() {
        let out = cmd_index(&RunConfig::parse("[model]\ntwist = 0.25\ncutoff = 4\ncutoff_y = 3\n").unwrap()).unwrap();
        assert_eq!(out.verdict, Verdict::Pass, "{:?}", out.reason);
        assert!(out.body["rhs"]["gap"].as_f64().unwrap() <= 0.05);
        assert_eq!(out.body["rhs"]["nearest_integer"], out.body["numerical_index"]["index"]);
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = RunConfig::parse("[model]\ntwist = 0.25\ncutoff = 4\n[eta]\neps_grid = [0.1, 0.2]\n").unwrap();
        let a = report(Command::Eta, &cfg, 0, &cmd_eta(&cfg).unwrap());
        let b = report(Command::Eta, &cfg, 0, &cmd_eta(&cfg).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a["config_hash"], cfg.hash());
    }
}
