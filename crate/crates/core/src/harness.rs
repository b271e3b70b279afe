//! Seeded verification suites and the data behind the `mpjl` command line.
//!
//! Every trial is a pure function of `(config, trial index)`: trial `t`
//! draws from the ChaCha stream `4t + attempt` of the configured seed, where
//! `attempt` counts re-draws after a numerical degeneracy (at most
//! [`RETRY_BUDGET`]). Trials run in parallel and are collected in index order,
//! so reports are byte-identical across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{assemble, chart_dimension, decompose, pinv_from_blocks, tangent_perturbation};
use crate::differential::{
    fd_pinv_differential, jacobian_det_full_rank, jacobian_det_operator, jacobian_operator,
    pinv_differential, FdConfig,
};
use crate::error::{Error, Result};
use crate::matcore::{
    check_spectrum, penrose_residuals, pinv, random_orthogonal, random_rank_q, random_spectrum,
    rel_err, rel_err_scalar, svd_thin, vec, Matrix, MatrixJson, RankInfo, Rng, Spectrum,
    SvdFactors, MIN_REQUESTED_GAP,
};
use crate::measures::{
    exterior_chain_check, fd_symmetric_inverse_jacobian, hausdorff_ratio_check,
    orthogonal_invariance_check, symmetric_inverse_jacobian_formula, SymmetricMatrix,
};
use crate::report::VerificationReport;

/// Re-draws allowed per trial after a degenerate random instance.
pub const RETRY_BUDGET: u64 = 3;

pub const PENROSE_TOL: f64 = 1e-10;
pub const BLOCK_PINV_TOL: f64 = 1e-8;
pub const BLOCK_ROUNDTRIP_TOL: f64 = 1e-10;
pub const DIFFERENTIAL_TOL: f64 = 1e-6;
pub const FULL_RANK_DET_TOL: f64 = 1e-8;
pub const ANNIHILATION_TOL: f64 = 1e-12;
pub const HAUSDORFF_TOL: f64 = 1e-10;
pub const SYMMETRIC_INVERSE_TOL: f64 = 1e-4;
/// Smallest deviation that counts as a non-invariance witness.
pub const WITNESS_DEVIATION: f64 = 0.05;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Penrose,
    Blocks,
    Differential,
    JacobianFull,
    OperatorRank,
    Hausdorff,
    Invariance,
    SymmetricInverse,
    ExteriorChain,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Penrose => "penrose",
            Suite::Blocks => "blocks",
            Suite::Differential => "differential",
            Suite::JacobianFull => "jacobian-full",
            Suite::OperatorRank => "operator-rank",
            Suite::Hausdorff => "hausdorff",
            Suite::Invariance => "invariance",
            Suite::SymmetricInverse => "symmetric-inverse",
            Suite::ExteriorChain => "exterior-chain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub trials: usize,
    pub seed: u64,
    /// Overrides the suite's comparison tolerance.
    pub tol: Option<f64>,
    pub fd_step: f64,
    pub spectrum: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 4,
            m: 3,
            q: 3,
            trials: 10,
            seed: 0,
            tol: None,
            fd_step: FdConfig::default().step,
            spectrum: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("n and m must be positive".into()));
        }
        if self.q == 0 || self.q > self.n.min(self.m) {
            return Err(Error::InvalidConfig(format!(
                "q = {} outside 1..={} for a {}x{} matrix",
                self.q,
                self.n.min(self.m),
                self.n,
                self.m
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "tol must be positive, got {tol}"
                )));
            }
        }
        self.fd_config().validate()?;
        if let Some(d) = &self.spectrum {
            if d.len() != self.q {
                return Err(Error::InvalidConfig(format!(
                    "spectrum has {} values, q = {}",
                    d.len(),
                    self.q
                )));
            }
            check_spectrum(d, MIN_REQUESTED_GAP)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn fd_config(&self) -> FdConfig {
        FdConfig {
            step: self.fd_step,
            ..Default::default()
        }
    }

    fn spectrum_spec(&self) -> Spectrum {
        match &self.spectrum {
            Some(d) => Spectrum::Explicit(d.clone()),
            None => Spectrum::default(),
        }
    }

    fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

impl Summary {
    fn of(reports: &[VerificationReport]) -> Self {
        let passed = reports.iter().filter(|r| r.pass).count();
        Summary {
            total: reports.len(),
            passed,
            failed: reports.len() - passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub reports: Vec<VerificationReport>,
    pub summary: Summary,
    /// Keys `check/seed/trial` occurring more than once after a merge.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicates: Vec<String>,
    /// Kept out of the JSON so that reports stay byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SuiteResult {
    fn new(
        suite: impl Into<String>,
        reports: Vec<VerificationReport>,
        wall_time: Duration,
    ) -> Self {
        SuiteResult {
            suite: suite.into(),
            summary: Summary::of(&reports),
            reports,
            duplicates: Vec::new(),
            wall_time,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report encoding is infallible");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let _ = write!(
                out,
                "[{}] {}",
                if r.pass { "PASS" } else { "FAIL" },
                r.check_name
            );
            for (k, v) in &r.inputs {
                let _ = write!(out, " {k}={v}");
            }
            for (k, v) in &r.residuals {
                let tol = r.tolerances.get(k).copied().unwrap_or(f64::NAN);
                let _ = write!(out, " {k}={v:.3e}(<={tol:.0e})");
            }
            for (k, v) in &r.values {
                match r.tolerances.get(&format!("{k}_min")) {
                    Some(bound) => {
                        let _ = write!(out, " {k}={v:.4}(>{bound})");
                    }
                    None => {
                        let _ = write!(out, " {k}={v:.6e}");
                    }
                }
            }
            out.push('\n');
        }
        for d in &self.duplicates {
            let _ = writeln!(out, "duplicate: {d}");
        }
        let _ = writeln!(
            out,
            "{}: total {} passed {} failed {}",
            self.suite, self.summary.total, self.summary.passed, self.summary.failed
        );
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Text => self.to_text(),
        }
    }
}

/// Context handed to a single trial.
struct Trial<'a> {
    cfg: &'a RunConfig,
    index: usize,
    attempt: u64,
    rng: Rng,
}

impl Trial<'_> {
    fn report(&self, suite: Suite) -> VerificationReport {
        VerificationReport::new(suite.name())
            .input("n", self.cfg.n as u64)
            .input("m", self.cfg.m as u64)
            .input("q", self.cfg.q as u64)
            .input("seed", self.cfg.seed)
            .input("trial", self.index as u64)
            .input("attempt", self.attempt)
    }

    fn matrix(&mut self, n: usize, m: usize, q: usize) -> Result<Matrix> {
        match random_rank_q(n, m, q, &self.cfg.spectrum_spec(), &mut self.rng) {
            // random draws that collide are a degeneracy, explicit ones are not
            Err(Error::BadSpectrum(_)) if self.cfg.spectrum.is_none() => {
                Err(Error::DegenerateSpectrum(f64::NAN, f64::NAN))
            }
            other => other,
        }
    }
}

fn trial_penrose(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.q)?;
    let r = penrose_residuals(&x, &pinv(&x, None))?;
    let tol = c.tol_or(PENROSE_TOL);
    Ok(t.report(Suite::Penrose)
        .at_most("xyx", r[0], tol)
        .at_most("yxy", r[1], tol)
        .at_most("xy_symmetric", r[2], tol)
        .at_most("yx_symmetric", r[3], tol))
}

fn trial_blocks(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.q)?;
    let b = decompose(&x, c.q)?;
    let from_blocks = pinv_from_blocks(&b)?;
    Ok(t.report(Suite::Blocks)
        .value("x11_condition", b.x11_condition())
        .at_most(
            "block_pinv",
            rel_err(&from_blocks, &pinv(&x, None)),
            c.tol_or(BLOCK_PINV_TOL),
        )
        .at_most(
            "assemble_roundtrip",
            rel_err(&assemble(&b)?, &x),
            BLOCK_ROUNDTRIP_TOL,
        ))
}

fn trial_differential(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.q)?;
    let full = c.q == c.n.min(c.m);
    let dx = if full {
        t.rng.normal_matrix(c.n, c.m)
    } else {
        let b = decompose(&x, c.q)?;
        let dx11 = t.rng.normal_matrix(c.q, c.q);
        let dx12 = t.rng.normal_matrix(c.q, c.m - c.q);
        let dx21 = t.rng.normal_matrix(c.n - c.q, c.q);
        tangent_perturbation(&b, &dx11, &dx12, &dx21)?
    };
    let analytic = pinv_differential(&x, &dx, None)?;
    let fd = fd_pinv_differential(&x, &dx, &c.fd_config(), None)?;
    Ok(t.report(Suite::Differential)
        .input("direction", if full { "arbitrary" } else { "tangent" })
        .at_most(
            "fd_vs_analytic",
            rel_err(&fd, &analytic),
            c.tol_or(DIFFERENTIAL_TOL),
        ))
}

fn trial_jacobian_full(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let k = c.n.min(c.m);
    let x = t.matrix(c.n, c.m, k)?;
    let op_det = jacobian_det_operator(&x, None)?;
    let formula = jacobian_det_full_rank(&x)?;
    Ok(t.report(Suite::JacobianFull)
        .input("rank", k as u64)
        .value("operator_det", op_det)
        .value("gram_power", formula)
        .at_most(
            "operator_vs_formula",
            rel_err_scalar(op_det, formula),
            c.tol_or(FULL_RANK_DET_TOL),
        ))
}

fn trial_operator_rank(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.q)?;
    let op = jacobian_operator(&x, None)?;
    let y = pinv(&x, None);
    let left = Matrix::identity(c.n, c.n) - &x * &y;
    let right = Matrix::identity(c.m, c.m) - &y * &x;
    let v = t.rng.normal_matrix(c.n, c.m);
    let normal = left * v * right;
    let image = (&op.matrix * vec(&normal)).norm();
    let scale = op.matrix.norm() * normal.norm().max(1.0);
    let expected = chart_dimension(c.n, c.m, c.q);
    Ok(t.report(Suite::OperatorRank)
        .value("operator_rank", op.rank() as f64)
        .value("expected_rank", expected as f64)
        .at_most("rank_gap", (op.rank() as f64 - expected as f64).abs(), 0.0)
        .at_most("annihilation", image / scale, c.tol_or(ANNIHILATION_TOL)))
}

fn trial_hausdorff(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let d = match &c.spectrum {
        Some(d) => d.clone(),
        None => random_spectrum(c.q, 0.5, 3.0, &mut t.rng)?,
    };
    let r = hausdorff_ratio_check(c.n, c.m, &d)
        .map_err(|_| Error::DegenerateSpectrum(f64::NAN, f64::NAN))?;
    Ok(t.report(Suite::Hausdorff)
        .input("D", d.clone())
        .value("density_x", r.density_x)
        .value("density_y", r.density_y)
        .value("jacobian_factor", r.jacobian_factor)
        .at_most("identity", r.identity_residual, c.tol_or(HAUSDORFF_TOL)))
}

fn trial_invariance(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.q)?;
    let h = random_orthogonal(c.n, &mut t.rng)?;
    let qm = random_orthogonal(c.m, &mut t.rng)?;
    let check = orthogonal_invariance_check(&x, c.q, &h, &qm, &c.fd_config())?;
    let mut report = t.report(Suite::Invariance);
    report.inputs.extend(check.inputs.clone());
    report.values.extend(check.values.clone());
    report.residuals.extend(check.residuals.clone());
    report.tolerances.extend(check.tolerances.clone());
    report.pass = check.pass;
    if c.q < c.n.min(c.m) {
        let witness = check.values["deviation"] > WITNESS_DEVIATION;
        report = report.input("witness", witness);
    }
    Ok(report)
}

fn trial_symmetric_inverse(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let k = c.m;
    let g = t.rng.normal_matrix(k, k);
    let spd = &g * g.transpose() + Matrix::identity(k, k) * k as f64;
    let s = SymmetricMatrix::from_matrix_upper(&spd)?;
    let formula = symmetric_inverse_jacobian_formula(&s)?;
    let fd = fd_symmetric_inverse_jacobian(&s, &c.fd_config())?
        .determinant()
        .abs();
    Ok(t.report(Suite::SymmetricInverse)
        .input("order", k as u64)
        .value("formula", formula)
        .value("fd_det", fd)
        .at_most(
            "fd_vs_formula",
            rel_err_scalar(fd, formula),
            c.tol_or(SYMMETRIC_INVERSE_TOL),
        ))
}

fn trial_exterior_chain(t: &mut Trial) -> Result<VerificationReport> {
    let c = t.cfg;
    let x = t.matrix(c.n, c.m, c.m)?;
    let check = exterior_chain_check(&x, None)?;
    let mut report = t.report(Suite::ExteriorChain);
    report.values = check.values;
    report.residuals = check.residuals;
    report.tolerances = check.tolerances;
    report.pass = check.pass;
    Ok(report)
}

fn run_trial(suite: Suite, cfg: &RunConfig, index: usize) -> Result<VerificationReport> {
    let mut last_err = None;
    for attempt in 0..=RETRY_BUDGET {
        let mut trial = Trial {
            cfg,
            index,
            attempt,
            rng: Rng::with_stream(cfg.seed, 4 * index as u64 + attempt),
        };
        let outcome = match suite {
            Suite::Penrose => trial_penrose(&mut trial),
            Suite::Blocks => trial_blocks(&mut trial),
            Suite::Differential => trial_differential(&mut trial),
            Suite::JacobianFull => trial_jacobian_full(&mut trial),
            Suite::OperatorRank => trial_operator_rank(&mut trial),
            Suite::Hausdorff => trial_hausdorff(&mut trial),
            Suite::Invariance => trial_invariance(&mut trial),
            Suite::SymmetricInverse => trial_symmetric_inverse(&mut trial),
            Suite::ExteriorChain => trial_exterior_chain(&mut trial),
        };
        match outcome {
            Ok(report) => return Ok(report),
            Err(e) if e.is_numerical_degeneracy() => last_err = Some(e),
            Err(e) => return Ok(trial.report(suite).input("error", e.to_string()).fail()),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

fn check_suite_config(suite: Suite, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if suite == Suite::ExteriorChain && cfg.m > cfg.n {
        return Err(Error::InvalidConfig(format!(
            "exterior-chain needs m <= n, got {}x{}",
            cfg.n, cfg.m
        )));
    }
    Ok(())
}

/// Run `cfg.trials` seeded trials of `suite`.
pub fn cmd_verify(suite: Suite, cfg: &RunConfig) -> Result<SuiteResult> {
    check_suite_config(suite, cfg)?;
    let start = Instant::now();
    let reports = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(suite, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = reports;
    if suite == Suite::Invariance && cfg.q < cfg.n.min(cfg.m) {
        reports.push(witness_summary(cfg, &reports));
    }
    Ok(SuiteResult::new(suite.name(), reports, start.elapsed()))
}

/// On deficient charts single trials are evidence, not checks: the suite
/// passes when some trial shows a deviation above [`WITNESS_DEVIATION`].
fn witness_summary(cfg: &RunConfig, trials: &[VerificationReport]) -> VerificationReport {
    let deviations: Vec<f64> = trials
        .iter()
        .filter_map(|r| r.values.get("deviation").copied())
        .collect();
    let max = deviations.iter().copied().fold(f64::NAN, f64::max);
    let witnesses = deviations
        .iter()
        .filter(|d| **d > WITNESS_DEVIATION)
        .count();
    VerificationReport::new("invariance-witness")
        .input("n", cfg.n as u64)
        .input("m", cfg.m as u64)
        .input("q", cfg.q as u64)
        .input("seed", cfg.seed)
        .input("trials", cfg.trials as u64)
        .value("witnesses", witnesses as f64)
        .greater_than("max_deviation", max, WITNESS_DEVIATION)
}

/// A generated instance with its factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub seed: u64,
    pub matrix: MatrixJson,
    pub svd: SvdFactors,
    pub rank_info: RankInfo,
}

impl GeneratedInstance {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instance encoding is infallible");
        s.push('\n');
        s
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<GeneratedInstance> {
    cfg.validate()?;
    let mut last_err = None;
    for attempt in 0..=RETRY_BUDGET {
        let mut trial = Trial {
            cfg,
            index: 0,
            attempt,
            rng: Rng::with_stream(cfg.seed, attempt),
        };
        let drawn = trial
            .matrix(cfg.n, cfg.m, cfg.q)
            .and_then(|x| svd_thin(&x, None).map(|(f, info)| (x, f, info)));
        match drawn {
            Ok((x, svd, rank_info)) => {
                return Ok(GeneratedInstance {
                    n: cfg.n,
                    m: cfg.m,
                    q: cfg.q,
                    seed: cfg.seed,
                    matrix: MatrixJson::from(&x),
                    svd,
                    rank_info,
                })
            }
            Err(e) if e.is_numerical_degeneracy() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

type ReportKey = (String, Option<u64>, Option<u64>);

/// Merge saved suite results, ordered by `(check, seed, trial)`.
pub fn cmd_report<P: AsRef<Path>>(paths: &[P]) -> Result<SuiteResult> {
    let mut reports = Vec::new();
    let mut suites = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let parsed: SuiteResult = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        suites.push(parsed.suite);
        reports.extend(parsed.reports);
    }
    let key = |r: &VerificationReport| -> ReportKey { (r.check_name.clone(), r.seed(), r.trial()) };
    reports.sort_by_key(key);

    let mut counts: BTreeMap<ReportKey, usize> = BTreeMap::new();
    for r in &reports {
        *counts.entry(key(r)).or_default() += 1;
    }
    let duplicates = counts
        .into_iter()
        .filter(|(_, c)| *c > 1)
        .map(|((name, seed, trial), c)| {
            let show = |v: Option<u64>| v.map_or_else(|| "-".to_owned(), |v| v.to_string());
            format!("{name}/{}/{} x{c}", show(seed), show(trial))
        })
        .collect();

    suites.sort();
    suites.dedup();
    let mut merged = SuiteResult::new(
        if suites.is_empty() {
            "merged".to_owned()
        } else {
            format!("merged({})", suites.join(","))
        },
        reports,
        Duration::ZERO,
    );
    merged.duplicates = duplicates;
    Ok(merged)
}
