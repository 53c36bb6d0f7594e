//! Subcommand implementations: each one is a pure function of the campaign
//! config, writing its artifacts atomically (temp file, then rename) with
//! the config hash and toolkit version stamped into every file.

use crate::audit::{AuditOptions, LawProfile};
use crate::bounds::{max_feasible_alpha, recurrence_bound, BoundReport};
use crate::config::{CampaignConfig, ConfigError};
use crate::process::{simulate, Trajectory};
use crate::verify::{dominance_report, DominanceRow, ExtendedChain, McBudget, OracleError};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default cap on the number of extended states the exact oracle explores.
pub const DEFAULT_CHAIN_BUDGET: usize = 50_000;

/// Tolerance of the feasibility search run by `bounds` and `report`.
pub const ALPHA_SEARCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Problems with the configuration: exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Everything else: exit code 1.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<crate::audit::AuditError> for PipelineError {
    fn from(e: crate::audit::AuditError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

/// Writes via a temp file in the same directory and renames into place, so
/// partially written artifacts are never observed.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn provenance_line(config: &CampaignConfig) -> String {
    format!("# markovup {} config_hash={}\n", TOOLKIT_VERSION, config.hash())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// JSON envelope stamped with provenance.
#[derive(Serialize)]
struct Document<T: Serialize> {
    toolkit_version: &'static str,
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

fn to_json<T: Serialize>(config: &CampaignConfig, body: T) -> String {
    let doc = Document { toolkit_version: TOOLKIT_VERSION, config_hash: config.hash(), body };
    let mut text = serde_json::to_string_pretty(&doc).expect("document serializes");
    text.push('\n');
    text
}

fn trajectory_csv(config: &CampaignConfig, traj: &Trajectory) -> String {
    let mut out = provenance_line(config);
    out.push_str("step,state,run_length\n");
    for (t, &x) in traj.states.iter().enumerate() {
        let _ = writeln!(out, "{t},{x},{}", traj.run_length_at(t));
    }
    out
}

/// `simulate`: one sample path per start, exported as CSV.
pub fn run_simulate(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let law = config.build_law()?;
    let mut written = Vec::new();
    for (i, &x0) in config.x0_list.iter().enumerate() {
        let seed = config.seed.wrapping_add(i as u64);
        let traj = simulate(law.as_ref(), x0, config.horizon, seed);
        let path = out_dir.join(format!("trajectory_x{x0}.csv"));
        write_atomic(&path, &trajectory_csv(config, &traj))?;
        written.push(path);
    }
    Ok(written)
}

fn audit_profile(config: &CampaignConfig) -> Result<LawProfile, PipelineError> {
    let law = config.build_law()?;
    Ok(LawProfile::audit(law.as_ref(), &AuditOptions::default())?)
}

#[derive(Serialize)]
struct AuditDocument {
    profile: LawProfile,
}

/// `audit`: the assumption profile of the law as a JSON document. Violated
/// assumptions are reported in the document, not treated as failures.
pub fn run_audit(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let profile = audit_profile(config)?;
    let path = out_dir.join("assumption_profile.json");
    write_atomic(&path, &to_json(config, AuditDocument { profile }))?;
    Ok(vec![path])
}

fn bounds_sweep_csv(config: &CampaignConfig, reports: &[BoundReport]) -> String {
    let mut out = provenance_line(config);
    out.push_str("alpha,m1,m2,m3,mu,c1,feasible\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.alpha,
            fmt_opt(r.m1),
            fmt_opt(r.m2),
            fmt_opt(r.m3),
            fmt_opt(r.mu),
            fmt_opt(r.c1),
            r.feasible
        );
    }
    out
}

fn sweep_reports(config: &CampaignConfig, profile: &LawProfile) -> Vec<BoundReport> {
    config.alphas.iter().map(|&a| recurrence_bound(a, profile)).collect()
}

/// `bounds`: the certified constants swept over the configured alphas.
pub fn run_bounds(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let profile = audit_profile(config)?;
    let reports = sweep_reports(config, &profile);
    let path = out_dir.join("bounds_sweep.csv");
    write_atomic(&path, &bounds_sweep_csv(config, &reports))?;
    Ok(vec![path])
}

fn build_chain(config: &CampaignConfig) -> Result<Option<ExtendedChain>, OracleError> {
    let law = config.build_law().expect("config was validated");
    if law.ceiling().is_none() {
        return Ok(None);
    }
    ExtendedChain::build(law.as_ref(), DEFAULT_CHAIN_BUDGET).map(Some)
}

/// `exact`: hitting moments from the extended-chain solver, one row per
/// `(x0, alpha)`. Requires a law with a finite ceiling.
pub fn run_exact(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let chain = build_chain(config)
        .map_err(|e| PipelineError::Runtime(e.to_string()))?
        .ok_or_else(|| {
            PipelineError::Config("the exact oracle needs a law with a finite ceiling".into())
        })?;
    let mut out = provenance_line(config);
    out.push_str("x0,alpha,value\n");
    for &x0 in &config.x0_list {
        for &alpha in &config.alphas {
            let cell = match chain.hitting_moment(alpha, x0) {
                Ok(v) => v.to_string(),
                Err(e) => format!("error: {e}"),
            };
            let _ = writeln!(out, "{x0},{alpha},{cell}");
        }
    }
    let path = out_dir.join("exact_values.csv");
    write_atomic(&path, &out)?;
    Ok(vec![path])
}

fn dominance_csv(config: &CampaignConfig, rows: &[DominanceRow]) -> String {
    let mut out = provenance_line(config);
    out.push_str("quantity,x0,alpha,mc_mean,mc_ci_lo,mc_ci_hi,exact,bound,pass\n");
    for r in rows {
        let (mean, lo, hi) = r
            .mc
            .as_ref()
            .map_or((String::new(), String::new(), String::new()), |e| {
                (e.mean.to_string(), e.ci95.0.to_string(), e.ci95.1.to_string())
            });
        let _ = writeln!(
            out,
            "{},{},{},{mean},{lo},{hi},{},{},{}",
            r.quantity.label(),
            r.x0,
            r.alpha,
            fmt_opt(r.exact),
            fmt_opt(r.bound),
            r.pass.map_or_else(String::new, |p| p.to_string())
        );
    }
    out
}

#[derive(Serialize)]
struct VerifyDocument {
    profile: LawProfile,
    bounds: Vec<BoundReport>,
    chain_note: Option<String>,
    rows: Vec<DominanceRow>,
}

fn verify_rows(
    config: &CampaignConfig,
    profile: &LawProfile,
) -> (Vec<DominanceRow>, Option<String>) {
    let law = config.build_law().expect("config was validated");
    let (chain, chain_note) = match build_chain(config) {
        Ok(c) => (c, None),
        Err(e) => (None, Some(format!("exact oracle unavailable: {e}"))),
    };
    let budget = McBudget { n_traj: config.n_traj, horizon: config.horizon, seed: config.seed };
    let mut rows = Vec::new();
    for &alpha in &config.alphas {
        rows.extend(dominance_report(
            law.as_ref(),
            profile,
            &config.x0_list,
            alpha,
            &budget,
            chain.as_ref(),
        ));
    }
    (rows, chain_note)
}

fn write_verify_artifacts(
    config: &CampaignConfig,
    profile: &LawProfile,
    out_dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<DominanceRow>), PipelineError> {
    let (rows, chain_note) = verify_rows(config, profile);
    let csv_path = out_dir.join("dominance_report.csv");
    write_atomic(&csv_path, &dominance_csv(config, &rows))?;
    let json_path = out_dir.join("dominance_report.json");
    let doc = VerifyDocument {
        profile: profile.clone(),
        bounds: sweep_reports(config, profile),
        chain_note,
        rows: rows.clone(),
    };
    write_atomic(&json_path, &to_json(config, doc))?;
    Ok((vec![csv_path, json_path], rows))
}

/// `verify`: the dominance report over every configured alpha, as CSV plus
/// a JSON document embedding the audited profile and bound reports used.
pub fn run_verify(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let profile = audit_profile(config)?;
    let (paths, _) = write_verify_artifacts(config, &profile, out_dir)?;
    Ok(paths)
}

/// `report`: the full pipeline end to end, plus a human-readable summary.
pub fn run_report(config: &CampaignConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    written.extend(run_simulate(config, out_dir)?);
    written.extend(run_audit(config, out_dir)?);
    written.extend(run_bounds(config, out_dir)?);
    if config.law.ceiling().is_some() {
        written.extend(run_exact(config, out_dir)?);
    }
    let profile = audit_profile(config)?;
    let (verify_paths, rows) = write_verify_artifacts(config, &profile, out_dir)?;
    written.extend(verify_paths);

    let mut text = String::new();
    let _ = writeln!(text, "markovup {} summary (config {})", TOOLKIT_VERSION, config.hash());
    let _ = writeln!(text, "\nlaw audit");
    let _ = writeln!(text, "  floor mixing level        {}", profile.floor_mixing);
    let _ = writeln!(text, "  rise probability bound    {}", profile.rise_prob_bound);
    let _ = writeln!(
        text,
        "  unbroken descent product  {} (error bound {})",
        profile.unbroken_descent.value, profile.unbroken_descent.error_bound
    );
    let _ = writeln!(text, "  descent failure bound     {}", profile.descent_failure_prob);
    if profile.violations.is_empty() {
        let _ = writeln!(text, "  assumption violations     none");
    } else {
        let _ = writeln!(text, "  assumption violations     {:?}", profile.violations);
    }
    match max_feasible_alpha(&profile, ALPHA_SEARCH_TOLERANCE) {
        Ok(a) => {
            let _ = writeln!(text, "\nlargest feasible alpha      {a}");
            let report = recurrence_bound(a, &profile);
            if let Some(c1) = report.c1 {
                let _ = writeln!(text, "multiplicative constant c1  {c1}");
            }
        }
        Err(e) => {
            let _ = writeln!(text, "\nfeasibility search          {e}");
        }
    }
    let passed = rows.iter().filter(|r| r.pass == Some(true)).count();
    let failed = rows.iter().filter(|r| r.pass == Some(false)).count();
    let skipped = rows.iter().filter(|r| r.pass.is_none()).count();
    let _ = writeln!(
        text,
        "\ndominance rows              {passed} passed, {failed} failed, {skipped} without a verdict"
    );
    for row in rows.iter().filter(|r| r.pass == Some(false)) {
        let _ = writeln!(text, "  FAILED {} x0={} alpha={}", row.quantity.label(), row.x0, row.alpha);
    }

    let path = out_dir.join("summary.txt");
    write_atomic(&path, &text)?;
    written.push(path);
    Ok(written)
}
