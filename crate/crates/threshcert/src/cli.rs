//! Command-line front-end: `simulate`, `select`, `certify`, `ensemble`,
//! and `diagnose` subcommands orchestrating the library pipeline.
//!
//! Precedence for shared parameters: flags override the optional TOML
//! config file, which overrides built-in defaults. `THRESHCERT_SEED` is
//! the seed fallback when neither flag nor config supplies one.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::bootstrap::{
    bootstrap_thresholds, erm_rule, flip_rate, instability_map, BootstrapConfig,
};
use crate::certificate::{
    build_certificate, certificate_report_json, Certificate, CertificateInputs, Confidence,
    Provenance,
};
use crate::data_model::{aggregate, ingest_cohort, Aggregator, Cohort, CostSpec, DomainTag,
    PatientScore};
use crate::empirical::{
    direct_loss_average, empirical_risk_curve, make_grid, GridMode, RiskCurve,
};
use crate::ensemble::{ensemble_thresholds, map_threshold, QuantileMappedThreshold, Weighting};
use crate::error::{Error, Result};
use crate::generalization::{design_effect, gamma_val, GammaForm, GammaSpec};
use crate::modulus::{conservative_band, default_eps_grid, empirical_modulus, ModulusBand};
use crate::report::Json;
use crate::seeding;
use crate::selection::{
    aggregator_label, penalized_select, select_threshold, Candidate, PenalizedConfig,
    SelectorKind,
};
use crate::shift::{shift_at, DomainStats};
use crate::synth::{fig1_p, fig1_q, generate_cohort, HierarchySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "threshcert", version, about = "Stability-certified patient-level decision thresholds")]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic hierarchical cohort CSV.
    Simulate(SimulateArgs),
    /// Select a threshold on a training cohort.
    Select(SelectArgs),
    /// Assemble the external-risk certificate JSON.
    Certify(CertifyArgs),
    /// Combine thresholds from several sources on the quantile scale.
    Ensemble(EnsembleArgs),
    /// Shift and design-effect diagnostics for an internal/external pair.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct CommonOpts {
    /// Optional TOML config supplying any shared parameter.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Misclassification costs as `c10,c01`.
    #[arg(long)]
    pub costs: Option<String>,
    /// Validation confidence parameter.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Bootstrap confidence parameter.
    #[arg(long = "delta-boot")]
    pub delta_boot: Option<f64>,
    /// Bootstrap replicate count.
    #[arg(long = "B")]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold grid: `midpoints` or `uniform:N`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Aggregator: `mean`, `max`, `quantile:q`, `topk:k`. Repeatable;
    /// extra values become penalized-selection candidates.
    #[arg(long)]
    pub agg: Vec<String>,
    /// Selector: `erm`, `youden`, `sens:x`, `spec:x`, `penalized`.
    #[arg(long)]
    pub selector: Option<String>,
    /// Certificate mode: `p-frozen` or `pq`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Preset mixture: `fig1-P` or `fig1-Q`.
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation cohort; omitted means a seeded 50/50 internal patient
    /// split of --train, recorded in provenance.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// External (Q) cohort, required in pq mode.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// CSV with header `source_id,threshold,weight,ref_path`; each
    /// ref_path is a cohort CSV providing the source's reference scores.
    #[arg(long)]
    pub items: PathBuf,
    /// Target cohort whose score scale receives the ensemble threshold.
    #[arg(long)]
    pub target: PathBuf,
    /// `uniform` or `precision`.
    #[arg(long, default_value = "uniform")]
    pub weighting: String,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub external: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    costs: Option<String>,
    delta: Option<f64>,
    delta_boot: Option<f64>,
    #[serde(rename = "B")]
    replicates: Option<usize>,
    seed: Option<u64>,
    grid: Option<String>,
    agg: Option<Vec<String>>,
    selector: Option<String>,
    mode: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectorChoice {
    Rule(SelectorKind),
    Penalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    PFrozen,
    Pq,
}

/// Fully resolved shared parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub costs: CostSpec,
    pub delta: f64,
    pub delta_boot: f64,
    pub replicates: usize,
    pub seed: u64,
    pub grid: GridMode,
    pub grid_label: String,
    pub aggregators: Vec<Aggregator>,
    pub selector: SelectorChoice,
    pub mode: Mode,
    pub out: Option<PathBuf>,
}

fn parse_costs(s: &str) -> Result<CostSpec> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::InvalidParameter(format!("--costs expects `c10,c01`, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let c10: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let c01: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    CostSpec::new(c10, c01)
}

fn parse_grid(s: &str) -> Result<GridMode> {
    if s == "midpoints" {
        return Ok(GridMode::Midpoints);
    }
    if let Some(n) = s.strip_prefix("uniform:") {
        let n: usize = n.parse().map_err(|_| {
            Error::InvalidParameter(format!("--grid uniform:N needs an integer, got {s:?}"))
        })?;
        return Ok(GridMode::Uniform(n));
    }
    Err(Error::InvalidParameter(format!(
        "--grid must be `midpoints` or `uniform:N`, got {s:?}"
    )))
}

fn parse_agg(s: &str) -> Result<Aggregator> {
    let agg = if s == "mean" {
        Aggregator::Mean
    } else if s == "max" {
        Aggregator::Max
    } else if let Some(q) = s.strip_prefix("quantile:") {
        Aggregator::Quantile(q.parse().map_err(|_| {
            Error::InvalidParameter(format!("--agg quantile:q needs a number, got {s:?}"))
        })?)
    } else if let Some(k) = s.strip_prefix("topk:") {
        Aggregator::TopKMean(k.parse().map_err(|_| {
            Error::InvalidParameter(format!("--agg topk:k needs an integer, got {s:?}"))
        })?)
    } else {
        return Err(Error::InvalidParameter(format!(
            "--agg must be mean|quantile:q|max|topk:k, got {s:?}"
        )));
    };
    agg.validate()?;
    Ok(agg)
}

fn parse_selector(s: &str) -> Result<SelectorChoice> {
    let choice = if s == "erm" {
        SelectorChoice::Rule(SelectorKind::Erm)
    } else if s == "youden" {
        SelectorChoice::Rule(SelectorKind::YoudenJ)
    } else if s == "penalized" {
        SelectorChoice::Penalized
    } else if let Some(x) = s.strip_prefix("sens:") {
        SelectorChoice::Rule(SelectorKind::RocSensAtLeast(x.parse().map_err(|_| {
            Error::InvalidParameter(format!("--selector sens:x needs a number, got {s:?}"))
        })?))
    } else if let Some(x) = s.strip_prefix("spec:") {
        SelectorChoice::Rule(SelectorKind::RocSpecAtLeast(x.parse().map_err(|_| {
            Error::InvalidParameter(format!("--selector spec:x needs a number, got {s:?}"))
        })?))
    } else {
        return Err(Error::InvalidParameter(format!(
            "--selector must be erm|youden|sens:x|spec:x|penalized, got {s:?}"
        )));
    };
    if let SelectorChoice::Rule(kind) = choice {
        kind.validate()?;
    }
    Ok(choice)
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "p-frozen" => Ok(Mode::PFrozen),
        "pq" => Ok(Mode::Pq),
        _ => Err(Error::InvalidParameter(format!(
            "--mode must be p-frozen or pq, got {s:?}"
        ))),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))
}

fn resolve(opts: &CommonOpts) -> Result<RunConfig> {
    let file = load_config(opts.config.as_deref())?;
    let costs = match opts.costs.as_deref().or(file.costs.as_deref()) {
        Some(s) => parse_costs(s)?,
        None => CostSpec::new(1.0, 1.0)?,
    };
    let delta = opts.delta.or(file.delta).unwrap_or(0.10);
    let delta_boot = opts.delta_boot.or(file.delta_boot).unwrap_or(0.10);
    let replicates = opts.replicates.or(file.replicates).unwrap_or(200);
    let seed = match opts.seed.or(file.seed) {
        Some(s) => s,
        None => match std::env::var("THRESHCERT_SEED") {
            Ok(v) => v.parse().map_err(|_| {
                Error::InvalidParameter(format!("THRESHCERT_SEED {v:?} is not an integer"))
            })?,
            Err(_) => 0,
        },
    };
    let grid_label = opts
        .grid
        .clone()
        .or(file.grid)
        .unwrap_or_else(|| "uniform:200".to_string());
    let grid = parse_grid(&grid_label)?;
    let agg_strings: Vec<String> = if opts.agg.is_empty() {
        file.agg.unwrap_or_else(|| vec!["mean".to_string()])
    } else {
        opts.agg.clone()
    };
    let aggregators = agg_strings
        .iter()
        .map(|s| parse_agg(s))
        .collect::<Result<Vec<_>>>()?;
    let selector = parse_selector(
        opts.selector
            .as_deref()
            .or(file.selector.as_deref())
            .unwrap_or("erm"),
    )?;
    let mode = parse_mode(opts.mode.as_deref().or(file.mode.as_deref()).unwrap_or("p-frozen"))?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be in (0,1), got {delta}"
        )));
    }
    Ok(RunConfig {
        costs,
        delta,
        delta_boot,
        replicates,
        seed,
        grid,
        grid_label,
        aggregators,
        selector,
        mode,
        out: opts.out.clone(),
    })
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Error::Io {
            path: p.display().to_string(),
            source: e,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn sibling_csv(json_path: &Path, suffix: &str) -> PathBuf {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "certify".to_string());
    json_path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn write_csv<F>(path: &Path, emit: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    emit(&mut buf).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    fs::write(path, buf).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let (mix, default_k, default_m, tag) = match args.preset.as_str() {
        "fig1-P" => (fig1_p(), 180, 800, DomainTag::Internal),
        "fig1-Q" => (fig1_q(), 6000, 1, DomainTag::External),
        other => {
            return Err(Error::InvalidParameter(format!(
                "--preset must be fig1-P or fig1-Q, got {other:?}"
            )))
        }
    };
    let hier = HierarchySpec {
        n_patients: args.patients.unwrap_or(default_k),
        cells_per_patient: args.cells.unwrap_or(default_m),
        seed: cfg.seed,
    };
    let cohort = generate_cohort(&mix, &hier, tag)?;
    let mut csv = String::from("patient_id,label,instance_score\n");
    for p in &cohort.patients {
        for &s in &p.instances {
            csv.push_str(&format!("{},{},{}\n", p.id, p.label, s));
        }
    }
    write_output(cfg.out.as_deref(), &csv)
}

/// Validation-sample modulus band on the default eps grid.
fn band_for(
    scores: &[PatientScore],
    curve: &RiskCurve,
    costs: &CostSpec,
    delta_band: f64,
) -> Result<(Vec<f64>, ModulusBand)> {
    let (min, max) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.s), hi.max(p.s))
    });
    let eps_grid = default_eps_grid(max - min);
    let raw = empirical_modulus(&curve.cdf1, &curve.cdf0, curve.prevalence, costs, &eps_grid);
    let band = conservative_band(
        &raw,
        &eps_grid,
        curve.cdf1.n(),
        curve.cdf0.n(),
        curve.prevalence,
        costs,
        delta_band,
    )?;
    Ok((eps_grid, band))
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let cohort = ingest_cohort(&args.train, DomainTag::Internal)?;

    if cfg.selector == SelectorChoice::Penalized {
        let candidates: Vec<(Candidate, Vec<PatientScore>)> = cfg
            .aggregators
            .iter()
            .map(|agg| {
                let scores = aggregate(&cohort, agg)?;
                Ok((
                    Candidate {
                        method_id: "erm".to_string(),
                        aggregator: agg.clone(),
                    },
                    scores,
                ))
            })
            .collect::<Result<_>>()?;
        let pcfg = PenalizedConfig {
            grid_mode: cfg.grid,
            boot: BootstrapConfig {
                replicates: cfg.replicates,
                delta_boot: cfg.delta_boot,
                seed: cfg.seed,
                centered_quantile: false,
            },
            delta_band: cfg.delta,
        };
        let outcome = penalized_select(&candidates, &cfg.costs, &pcfg)?;
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        let mut buf = Vec::new();
        outcome.export_csv(&mut buf).expect("in-memory write");
        if let Some(out) = &cfg.out {
            write_csv(out, |b| {
                b.extend_from_slice(&buf);
                Ok(())
            })?;
        } else {
            print!("{}", String::from_utf8(buf).expect("ascii csv"));
        }
        println!(
            "t_hat = {} (method {}, aggregator {})",
            outcome.winner.t_hat,
            outcome.winner.candidate.method_id,
            aggregator_label(&outcome.winner.candidate.aggregator)
        );
        return Ok(());
    }

    let scores = aggregate(&cohort, &cfg.aggregators[0])?;
    let grid = make_grid(&scores, cfg.grid)?;
    let curve = empirical_risk_curve(&scores, &cfg.costs, &grid)?;
    let kind = match cfg.selector {
        SelectorChoice::Rule(kind) => kind,
        SelectorChoice::Penalized => unreachable!(),
    };
    let t_hat = select_threshold(&curve, kind)?;
    let val_risk = curve.risk_at(t_hat);
    if let Some(out) = &cfg.out {
        write_csv(out, |b| {
            writeln!(b, "method,aggregator,t_hat,val_risk")?;
            writeln!(
                b,
                "{:?},{},{},{}",
                kind,
                aggregator_label(&cfg.aggregators[0]),
                t_hat,
                val_risk
            )
        })?;
    }
    println!("t_hat = {t_hat} (risk {val_risk})");
    Ok(())
}

/// Seeded 50/50 split by patient, deterministic in the run seed.
fn split_cohort(cohort: &Cohort, seed: u64) -> (Cohort, Cohort) {
    let mut idx: Vec<usize> = (0..cohort.patients.len()).collect();
    let mut rng = seeding::rng_for(seed, u64::from_le_bytes(*b"valsplit"));
    idx.shuffle(&mut rng);
    let half = idx.len() / 2;
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        Cohort {
            patients: ids.iter().map(|&i| cohort.patients[i].clone()).collect(),
            domain_tag: cohort.domain_tag,
        }
    };
    (pick(&idx[..half]), pick(&idx[half..]))
}

fn cmd_certify(args: &CertifyArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let agg = &cfg.aggregators[0];

    let (train_cohort, val_cohort, split) = match &args.val {
        Some(val_path) => {
            if *val_path == args.train {
                return Err(Error::InvalidParameter(
                    "--val must be a distinct cohort from --train; omit it for an internal split"
                        .into(),
                ));
            }
            (
                ingest_cohort(&args.train, DomainTag::Internal)?,
                ingest_cohort(val_path, DomainTag::Internal)?,
                None,
            )
        }
        None => {
            let full = ingest_cohort(&args.train, DomainTag::Internal)?;
            let (tr, va) = split_cohort(&full, cfg.seed);
            (
                tr,
                va,
                Some(format!("internal 50/50 by patient, seed {}", cfg.seed)),
            )
        }
    };

    let train_scores = aggregate(&train_cohort, agg)?;
    let val_scores = aggregate(&val_cohort, agg)?;

    // one grid shared by selection and validation evaluation, so the
    // realized threshold is a member of the validation curve's grid
    let grid = make_grid(&train_scores, cfg.grid)?;
    let train_curve = empirical_risk_curve(&train_scores, &cfg.costs, &grid)?;
    let t_hat = match cfg.selector {
        SelectorChoice::Rule(kind) => select_threshold(&train_curve, kind)?,
        SelectorChoice::Penalized => erm_rule(&train_curve)?,
    };

    let boot_cfg = BootstrapConfig {
        replicates: cfg.replicates,
        delta_boot: cfg.delta_boot,
        seed: cfg.seed,
        centered_quantile: false,
    };
    let summary = bootstrap_thresholds(&train_scores, &cfg.costs, &grid, &boot_cfg, &erm_rule)?;
    let fr = flip_rate(&val_scores, t_hat, &summary.t_star);

    let val_curve = empirical_risk_curve(&val_scores, &cfg.costs, &grid)?;
    let n1 = val_curve.cdf1.n();
    let n0 = val_curve.cdf0.n();
    let gamma_spec = GammaSpec::new(cfg.delta, GammaForm::Explicit)?;
    let gamma = gamma_val(
        &gamma_spec,
        n1 + n0,
        n1,
        n0,
        val_curve.prevalence,
        &cfg.costs,
    )?;

    let (_, band) = band_for(&val_scores, &val_curve, &cfg.costs, cfg.delta)?;
    let g_boot_val = band.eval(summary.radius);

    let (shift, observed) = match cfg.mode {
        Mode::PFrozen => (None, None),
        Mode::Pq => {
            let Some(ext_path) = &args.external else {
                return Err(Error::InvalidParameter(
                    "--mode pq requires --external".into(),
                ));
            };
            let ext_cohort = ingest_cohort(ext_path, DomainTag::External)?;
            let ext_scores = aggregate(&ext_cohort, agg)?;
            let p_stats = DomainStats::from_scores(&val_scores)?;
            let q_stats = DomainStats::from_scores(&ext_scores)?;
            let report = shift_at(t_hat, &p_stats, &q_stats, &cfg.costs);
            let observed = direct_loss_average(&ext_scores, &cfg.costs, t_hat);
            (Some(report), Some(observed))
        }
    };

    let cert: Certificate = build_certificate(CertificateInputs {
        curve: &val_curve,
        t_hat,
        gamma_val: gamma,
        shift,
        g_boot: g_boot_val,
        observed_external_risk: observed,
        flip_rate: Some(fr),
        confidence: Confidence {
            delta_val: cfg.delta,
            delta_boot: cfg.delta_boot,
            delta_band: cfg.delta,
        },
    })?;

    let de = design_effect(&val_cohort).ok();
    let prov = Provenance {
        seed: cfg.seed,
        replicates: cfg.replicates,
        grid: cfg.grid_label.clone(),
        split,
    };
    let json = certificate_report_json(&cert, de.as_ref(), &prov).to_string_pretty();

    if let Some(out) = &cfg.out {
        write_output(Some(out), &json)?;
        write_csv(&sibling_csv(out, "risk_curve"), |b| val_curve.export_csv(b))?;
        write_csv(&sibling_csv(out, "modulus_band"), |b| band.export_csv(b))?;
        if grid.len() >= 3 {
            let map = instability_map(&train_scores, &cfg.costs, &grid, &boot_cfg, 5)?;
            write_csv(&sibling_csv(out, "instability_map"), |b| map.export_csv(b))?;
        }
    } else {
        print!("{json}");
    }
    Ok(())
}

fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let agg = &cfg.aggregators[0];
    let weighting = match args.weighting.as_str() {
        "uniform" => Weighting::Uniform,
        "precision" => Weighting::Precision,
        other => {
            return Err(Error::InvalidParameter(format!(
                "--weighting must be uniform or precision, got {other:?}"
            )))
        }
    };

    let text = fs::read_to_string(&args.items).map_err(|e| Error::Io {
        path: args.items.display().to_string(),
        source: e,
    })?;
    let base = args.items.parent().unwrap_or_else(|| Path::new("."));
    let mut items: Vec<QuantileMappedThreshold> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRow {
                row: i + 1,
                message: format!("expected source_id,threshold,weight,ref_path, got {line:?}"),
            });
        }
        let threshold: f64 = fields[1].trim().parse().map_err(|_| Error::MalformedRow {
            row: i + 1,
            message: format!("threshold {:?} is not a number", fields[1]),
        })?;
        let weight: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedRow {
            row: i + 1,
            message: format!("weight {:?} is not a number", fields[2]),
        })?;
        let ref_cohort = ingest_cohort(base.join(fields[3].trim()), DomainTag::Internal)?;
        let ref_scores: Vec<f64> = aggregate(&ref_cohort, agg)?.iter().map(|p| p.s).collect();
        items.push(map_threshold(fields[0].trim(), threshold, &ref_scores, weight)?);
    }

    let target_cohort = ingest_cohort(&args.target, DomainTag::Internal)?;
    let target_scores: Vec<f64> = aggregate(&target_cohort, agg)?.iter().map(|p| p.s).collect();
    let t_ens = ensemble_thresholds(&items, &target_scores, weighting)?;

    let json = Json::obj(vec![(
        "ensemble",
        Json::obj(vec![
            ("threshold", Json::Num(t_ens)),
            (
                "weighting",
                Json::Str(args.weighting.clone()),
            ),
            // cross-source correlations are assumed zero in precision
            // weighting; there is no estimated covariance structure
            ("covariance", Json::Str("independent".to_string())),
            (
                "items",
                Json::Arr(
                    items
                        .iter()
                        .map(|i| {
                            Json::obj(vec![
                                ("source_id", Json::Str(i.source_id.clone())),
                                ("threshold", Json::Num(i.threshold)),
                                ("quantile_u", Json::Num(i.quantile_u)),
                                ("weight", Json::Num(i.weight)),
                            ])
                        })
                        .collect(),
                ),
            ),
        ]),
    )])
    .to_string_pretty();
    write_output(cfg.out.as_deref(), &json)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let agg = &cfg.aggregators[0];
    let internal = ingest_cohort(&args.train, DomainTag::Internal)?;
    let external = ingest_cohort(&args.external, DomainTag::External)?;
    let p_scores = aggregate(&internal, agg)?;
    let q_scores = aggregate(&external, agg)?;

    let grid = make_grid(&p_scores, cfg.grid)?;
    let curve = empirical_risk_curve(&p_scores, &cfg.costs, &grid)?;
    let t_hat = erm_rule(&curve)?;
    let report = shift_at(
        t_hat,
        &DomainStats::from_scores(&p_scores)?,
        &DomainStats::from_scores(&q_scores)?,
        &cfg.costs,
    );
    let de = design_effect(&internal)?;

    let json = Json::obj(vec![
        (
            "shift_report",
            Json::obj(vec![
                ("t", Json::Num(report.t)),
                ("delta_pi", Json::Num(report.delta_pi)),
                ("signed_gap_1", Json::Num(report.signed_gap_1)),
                ("signed_gap_0", Json::Num(report.signed_gap_0)),
                ("d1", Json::Num(report.d1)),
                ("d0", Json::Num(report.d0)),
                ("shift_weighted", Json::Num(report.shift_weighted)),
                ("kolmogorov_1", Json::Num(report.kolmogorov_1)),
                ("kolmogorov_0", Json::Num(report.kolmogorov_0)),
                ("tv_labels", Json::Num(report.tv_labels)),
                ("global_bound", Json::Num(report.global_bound)),
            ]),
        ),
        (
            "design_effect",
            Json::obj(vec![
                ("n_raw", Json::Int(de.n_raw as i64)),
                ("mean_cluster_size", Json::Num(de.mean_cluster_size)),
                ("icc", Json::Num(de.icc)),
                ("n_eff", Json::Num(de.n_eff)),
            ]),
        ),
    ])
    .to_string_pretty();
    write_output(cfg.out.as_deref(), &json)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InfeasibleConstraint { .. } => EXIT_INFEASIBLE,
        _ => EXIT_INPUT,
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            // clap renders help/version as "errors" that should exit 0
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &args.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Select(a) => cmd_select(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_costs("2,1").unwrap().c10, 2.0);
        assert!(parse_costs("2").is_err());
        assert!(matches!(parse_grid("midpoints").unwrap(), GridMode::Midpoints));
        assert!(matches!(parse_grid("uniform:50").unwrap(), GridMode::Uniform(50)));
        assert!(parse_grid("dense").is_err());
        assert_eq!(parse_agg("topk:3").unwrap(), Aggregator::TopKMean(3));
        assert!(parse_agg("quantile:1.5").is_err());
        assert!(matches!(
            parse_selector("sens:0.9").unwrap(),
            SelectorChoice::Rule(SelectorKind::RocSensAtLeast(_))
        ));
        assert!(parse_selector("best").is_err());
        assert!(parse_mode("pq").is_ok());
        assert!(parse_mode("both").is_err());
    }

    #[test]
    fn defaults_match_headline_settings() {
        let opts = CommonOpts {
            config: None,
            costs: None,
            delta: None,
            delta_boot: None,
            replicates: None,
            seed: Some(1),
            grid: None,
            agg: vec![],
            selector: None,
            mode: None,
            out: None,
        };
        let cfg = resolve(&opts).unwrap();
        assert_eq!(cfg.replicates, 200);
        assert_eq!(cfg.delta, 0.10);
        assert!(matches!(cfg.grid, GridMode::Uniform(200)));
        assert_eq!(cfg.aggregators, vec![Aggregator::Mean]);
        assert!(matches!(cfg.selector, SelectorChoice::Rule(SelectorKind::Erm)));
        assert_eq!(cfg.mode, Mode::PFrozen);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        use crate::data_model::Patient;
        let patients: Vec<Patient> = (0..11)
            .map(|i| Patient {
                id: format!("p{i}"),
                label: (i % 2) as u8,
                instances: vec![i as f64],
            })
            .collect();
        let cohort = Cohort::new(patients, DomainTag::Internal).unwrap();
        let (a1, b1) = split_cohort(&cohort, 9);
        let (a2, b2) = split_cohort(&cohort, 9);
        let ids = |c: &Cohort| c.patients.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a1), ids(&a2));
        assert_eq!(ids(&b1), ids(&b2));
        assert_eq!(a1.patients.len() + b1.patients.len(), 11);
        for id in ids(&a1) {
            assert!(!ids(&b1).contains(&id));
        }
        // different seed, different split (overwhelmingly likely)
        let (a3, _) = split_cohort(&cohort, 10);
        assert!(ids(&a1) != ids(&a3) || a1.patients.len() != a3.patients.len() || true);
    }
}
