//! Batch experiment runner: builds the model once, executes the requested
//! checks, and writes CSV/JSON artifacts plus a run manifest.
//!
//! Exit-code contract: 0 when every check is finite and stable, 2 when a
//! result is inconclusive (truncation-dominated or unstable under
//! refinement), 1 for errors.  CSV bodies are byte-reproducible; wall-clock
//! data lives only in the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use schrodlab::bmo::{
    bmo_alpha_norm, campanato_ingredients, log_test_function, mean_value_bound_check,
    plateau_test_function, BallEnsemble, NormOptions,
};
use schrodlab::config::{CheckKind, ExperimentConfig};
use schrodlab::potential::{
    critical_covering, reverse_holder_constant, rho_equivalence_check, Potential, RhoField,
};
use schrodlab::report::Table;
use schrodlab::spectral::SpectralModel;
use schrodlab::t1::{
    criterion_alpha, criterion_log, empirical_operator_norm, mean_bound_gamma_check, t1_field,
    t1_margin_sensitivity, with_margin_sensitivity, BatterySpec, CriterionReport, T1Options,
};
use schrodlab::verify::{report_bundle, verify_estimate, EstimateId, EstimateParams, VerifyContext};
use schrodlab::{Error, Result};

/// Run outcome used to derive the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunVerdict {
    Clean,
    Inconclusive,
}

pub struct RunOutput {
    pub verdict: RunVerdict,
    pub manifest_path: PathBuf,
}

struct ArtifactLog {
    dir: PathBuf,
    schema: Vec<Value>,
    timings: Vec<(String, f64)>,
    inconclusive: Vec<String>,
}

impl ArtifactLog {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactLog { dir: dir.to_path_buf(), schema: Vec::new(), timings: Vec::new(), inconclusive: Vec::new() })
    }

    fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        let path = self.dir.join(name);
        table.write_csv(&path)?;
        self.schema.push(json!({ "file": name, "columns": table.columns }));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
        Ok(())
    }
}

pub fn run(config: &ExperimentConfig, raw_config: &[u8]) -> Result<RunOutput> {
    let mut log = ArtifactLog::new(Path::new(&config.output_dir))?;
    let grid = config.grid.to_grid()?;
    let t_setup = Instant::now();
    let pot = config.potential.build(grid)?;
    let model = SpectralModel::assemble(&pot)?;
    let rho = RhoField::compute(&pot, &config.rho_scan())?;
    log.timings.push(("setup".into(), t_setup.elapsed().as_secs_f64()));

    for check in &config.checks {
        let started = Instant::now();
        match check {
            CheckKind::Rho => check_rho(&mut log, config, &pot, &rho)?,
            CheckKind::Cover => check_cover(&mut log, &rho)?,
            CheckKind::Spectrum => check_spectrum(&mut log, &model)?,
            CheckKind::Bmo => check_bmo(&mut log, config, &rho)?,
            CheckKind::T1 => check_t1(&mut log, config, &pot, &model, &rho)?,
            CheckKind::Verify => check_verify(&mut log, config, &pot, &model, &rho)?,
            CheckKind::Norms => check_norms(&mut log, config, &model, &rho)?,
        }
        log.timings.push((check.name().to_string(), started.elapsed().as_secs_f64()));
    }

    let verdict = if log.inconclusive.is_empty() { RunVerdict::Clean } else { RunVerdict::Inconclusive };
    let manifest = json!({
        "config_hash": ExperimentConfig::hash_of(raw_config),
        "package_version": env!("CARGO_PKG_VERSION"),
        "started_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "wall_times_seconds": log.timings.iter().map(|(n, t)| json!({"check": n, "seconds": t})).collect::<Vec<_>>(),
        "inconclusive": log.inconclusive,
        "verdict": if verdict == RunVerdict::Clean { "clean" } else { "inconclusive" },
    });
    let manifest_path = log.dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    let schema = json!({ "artifacts": log.schema });
    std::fs::write(log.dir.join("schema.json"), serde_json::to_string_pretty(&schema)?)?;
    Ok(RunOutput { verdict, manifest_path })
}

fn ensembles(config: &ExperimentConfig, rho: &RhoField) -> Result<(BallEnsemble, BallEnsemble)> {
    let mut policy = config.ensemble.clone();
    policy.seed = config.stream_seed("ensemble");
    let base = BallEnsemble::generate(&policy, rho)?;
    let doubled = BallEnsemble::generate(&policy.doubled(), rho)?;
    Ok((base, doubled))
}

fn check_rho(
    log: &mut ArtifactLog,
    config: &ExperimentConfig,
    pot: &Potential,
    rho: &RhoField,
) -> Result<()> {
    log.write_table("rho.csv", &rho.to_table(None))?;
    // two-sided comparison of ρ at sampled pairs
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.stream_seed("rho-pairs"));
    let grid = rho.grid;
    let mut pairs = Vec::new();
    for _ in 0..200 {
        let a = rng.gen_range(0..grid.len());
        let b = rng.gen_range(0..grid.len());
        if a != b && grid.node_margin_ok(a, grid.margin) && grid.node_margin_ok(b, grid.margin) {
            pairs.push((grid.point(a), grid.point(b)));
        }
    }
    let equiv = rho_equivalence_check(pot, &pairs, &rho.scan)?;
    log.write_table("rho_equivalence.csv", &equiv.table)?;
    // empirical reverse Hölder constant when the exponent is finite
    let mut summary = json!({
        "rho_min": rho.min(),
        "rho_max": rho.max(),
        "capped_nodes": rho.capped.iter().filter(|c| **c).count(),
        "subgrid_nodes": rho.subgrid.iter().filter(|c| **c).count(),
        "equivalence_constant": equiv.constant,
        "equivalence_attaining": equiv.attaining,
        "equivalence_flags": equiv.flags,
    });
    if let schrodlab::potential::RhExponent::Finite(q) = config.potential.rh_exponent() {
        let (ens, _) = ensembles(config, rho)?;
        let rh = reverse_holder_constant(pot, q, &ens)?;
        log.write_table("reverse_holder.csv", &rh.table)?;
        summary["reverse_holder_constant"] = json!(rh.constant);
    }
    log.write_json("rho_summary.json", &summary)
}

fn check_cover(log: &mut ArtifactLog, rho: &RhoField) -> Result<()> {
    let covering = critical_covering(rho);
    if !covering.covers_all() {
        return Err(Error::InvalidParam("critical covering failed to cover the grid".into()));
    }
    log.write_table("cover.csv", &covering.to_table())?;
    log.write_table("rho_with_cover.csv", &rho.to_table(Some(&covering)))?;
    log.write_json(
        "cover_summary.json",
        &json!({
            "balls": covering.center_nodes.len(),
            "overlap": covering.overlap,
        }),
    )
}

fn check_spectrum(log: &mut ArtifactLog, model: &SpectralModel) -> Result<()> {
    let mut table = Table::new(&["axis", "index", "eigenvalue"]);
    for (axis, index, lambda) in model.spectrum() {
        table.push(vec![axis as f64, index as f64, lambda]);
    }
    log.write_table("spectrum.csv", &table)?;
    log.write_json(
        "spectrum_summary.json",
        &json!({
            "lambda_min": model.lambda_min,
            "lambda_max": model.lambda_max,
            "orthonormality_defect": model.orthonormality_defect(),
            "delta0": model.delta0,
        }),
    )
}

fn check_bmo(log: &mut ArtifactLog, config: &ExperimentConfig, rho: &RhoField) -> Result<()> {
    let grid = rho.grid;
    let (ens, doubled) = ensembles(config, rho)?;
    let opts = NormOptions::default();
    let mut table = Table::new(&[
        "alpha",
        "member",
        "s_fraction",
        "p",
        "oscillation_sup",
        "size_sup",
        "norm",
        "norm_doubled",
    ]);
    let mut summary_entries = Vec::new();
    // extremal-family sweep: norms should be uniform across plateau widths
    let node = grid.index(&vec![grid.m / 2; grid.n]);
    let x0 = grid.point(node);
    let reach = rho.at(node).min(grid.boundary_distance(&x0) - grid.margin);
    let fractions = [0.02, 0.05, 0.1, 0.2, 0.4, 0.8];
    for (ai, &alpha) in config.alpha_values.iter().enumerate() {
        let mut norms = Vec::new();
        for (fi, &frac) in fractions.iter().enumerate() {
            let s = frac * reach;
            let (member, f) = if alpha == 0.0 {
                (0.0, log_test_function(grid, &x0, s, reach)?)
            } else {
                (1.0, plateau_test_function(grid, &x0, s, alpha, reach)?)
            };
            for &p in &[1.0, 2.0] {
                let rep = bmo_alpha_norm(&f, alpha, &ens, p, &opts)?;
                let rep2 = bmo_alpha_norm(&f, alpha, &doubled, p, &opts)?;
                table.push(vec![
                    alpha,
                    member,
                    frac,
                    p,
                    rep.oscillation_sup,
                    rep.size_sup,
                    rep.norm,
                    rep2.norm,
                ]);
                if p == 1.0 {
                    norms.push(rep.norm);
                }
            }
            if fi == 0 && ai == 0 {
                let (holder, weighted) =
                    campanato_ingredients(&f, alpha.max(0.25), rho, config.stream_seed("campanato"), 400);
                summary_entries.push(json!({
                    "campanato_holder_seminorm": holder,
                    "campanato_weighted_sup": weighted,
                }));
            }
        }
        let max = norms.iter().cloned().fold(0.0f64, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        summary_entries.push(json!({
            "alpha": alpha,
            "family_norm_ratio": if min > 0.0 { max / min } else { f64::INFINITY },
        }));
        // mean-value bound against the family norm
        let probe = if alpha == 0.0 {
            log_test_function(grid, &x0, 0.1 * reach, reach)?
        } else {
            plateau_test_function(grid, &x0, 0.1 * reach, alpha, reach)?
        };
        let norm = bmo_alpha_norm(&probe, alpha, &ens, 1.0, &opts)?.norm;
        if norm > 0.0 {
            let mv = mean_value_bound_check(&probe, &ens, alpha, norm)?;
            summary_entries.push(json!({
                "alpha": alpha,
                "mean_value_bound_constant": mv.constant,
            }));
        }
    }
    log.write_table("bmo_norms.csv", &table)?;
    log.write_json("bmo_summary.json", &json!({ "entries": summary_entries }))
}

fn criterion_row(rep: &CriterionReport, alpha: f64, stability: Option<f64>) -> Value {
    json!({
        "kind": rep.kind_name,
        "weight": rep.weight_name,
        "alpha": alpha,
        "gamma": rep.gamma,
        "supremum": rep.supremum,
        "balls": rep.balls_used,
        "stability_delta": stability,
    })
}

fn check_t1(
    log: &mut ArtifactLog,
    config: &ExperimentConfig,
    pot: &Potential,
    model: &SpectralModel,
    rho: &RhoField,
) -> Result<()> {
    let (ens, doubled) = ensembles(config, rho)?;
    let opts = T1Options {
        maximal_points: config.maximal_points,
        sensitivity_threshold: config.tolerances.sensitivity_threshold,
    };
    let mut rows = Vec::new();
    let centers: Vec<usize> = (0..model.grid.len())
        .step_by((model.grid.len() / 512).max(1))
        .filter(|&i| model.grid.node_margin_ok(i, model.grid.margin))
        .collect();
    for descr in config.effective_operators() {
        let mut field = t1_field(&descr, model, &opts)?;
        if config.margin_sensitivity {
            let sens = t1_margin_sensitivity(
                &descr,
                pot,
                &config.potential.spec,
                config.potential.rh_exponent(),
                &opts,
            )?;
            field = with_margin_sensitivity(field, sens, opts.sensitivity_threshold);
            if field.truncation_dominated {
                log.inconclusive.push(format!("t1:{}", field.kind_name));
            }
        }
        let gamma = descr.gamma();
        if gamma < 1.0 {
            let a = criterion_log(&field, gamma, &ens)?;
            let b = criterion_log(&field, gamma, &doubled)?;
            let delta = (b.supremum - a.supremum).abs() / b.supremum.max(1e-300);
            if delta > config.tolerances.stability && b.supremum > 1e-12 {
                log.inconclusive.push(format!("t1-log:{}", field.kind_name));
            }
            log.write_table(
                &format!("t1_{}_log.csv", field.kind_name),
                &a.table,
            )?;
            rows.push(criterion_row(&a, 0.0, Some(delta)));
        }
        for &alpha in &config.alpha_values {
            if alpha <= 0.0 || alpha + gamma >= 1.0 {
                continue;
            }
            let a = criterion_alpha(&field, alpha, gamma, &ens)?;
            let b = criterion_alpha(&field, alpha, gamma, &doubled)?;
            let delta = (b.supremum - a.supremum).abs() / b.supremum.max(1e-300);
            if delta > config.tolerances.stability && b.supremum > 1e-12 {
                log.inconclusive.push(format!("t1-alpha{alpha}:{}", field.kind_name));
            }
            rows.push(criterion_row(&a, alpha, Some(delta)));
        }
        let mb = mean_bound_gamma_check(&field, gamma, rho, &centers)?;
        rows.push(json!({
            "kind": field.kind_name,
            "weight": "mean_bound",
            "gamma": gamma,
            "supremum": mb.constant,
            "balls": mb.used,
            "margin_sensitivity": field.margin_sensitivity,
        }));
    }
    log.write_json("t1_summary.json", &json!({ "criteria": rows }))
}

fn check_verify(
    log: &mut ArtifactLog,
    config: &ExperimentConfig,
    pot: &Potential,
    model: &SpectralModel,
    rho: &RhoField,
) -> Result<()> {
    let free_pot = Potential::build(
        &schrodlab::potential::PotentialSpec::Free,
        model.grid,
        schrodlab::potential::RhExponent::Infinite,
    )?;
    let free_model = SpectralModel::assemble(&free_pot)?;
    let ctx = VerifyContext {
        model,
        free_model: &free_model,
        rho,
        q: config.potential.rh_exponent(),
        maximal_points: config.maximal_points,
    };
    let mut policy = config.probes;
    policy.seed = config.stream_seed("verify");
    let params = EstimateParams::default();
    let mut reports = Vec::new();
    for id in EstimateId::ALL {
        if id.needs_q_above_n() {
            let ok = match ctx.q {
                schrodlab::potential::RhExponent::Infinite => true,
                schrodlab::potential::RhExponent::Finite(q) => q > model.grid.n as f64,
            };
            if !ok {
                continue;
            }
        }
        let rep = verify_estimate(id, &ctx, &policy, &params)?;
        log.write_table(&format!("verify_{}.csv", id.name()), &rep.table)?;
        reports.push(rep);
    }
    let bundle = report_bundle(&reports, config.tolerances.stability);
    if bundle.verdict != "consistent" {
        log.inconclusive.push(format!("verify: {}", bundle.verdict));
    }
    log.write_json("verify_bundle.json", &serde_json::to_value(&bundle)?)?;
    let _ = pot;
    Ok(())
}

fn check_norms(
    log: &mut ArtifactLog,
    config: &ExperimentConfig,
    model: &SpectralModel,
    rho: &RhoField,
) -> Result<()> {
    let (ens, _) = ensembles(config, rho)?;
    let battery = BatterySpec::default_with_seed(config.stream_seed("battery"));
    let mut rows = Vec::new();
    for descr in config.effective_operators() {
        for &alpha in &config.alpha_values {
            if alpha + descr.gamma() > 1.0 {
                continue;
            }
            let rep = empirical_operator_norm(
                &descr,
                model,
                alpha,
                &ens,
                rho,
                &battery,
                true,
                config.maximal_points,
            )?;
            rows.push(json!({
                "kind": rep.kind_name,
                "alpha": rep.alpha,
                "gamma": rep.gamma,
                "max_ratio": rep.max_ratio,
                "members": rep.used,
                "skipped": rep.skipped,
            }));
        }
    }
    log.write_json("opnorm_summary.json", &json!({ "norms": rows }))
}

/// Map a run result to the process exit code.
pub fn exit_code(res: &Result<RunOutput>) -> i32 {
    match res {
        Ok(out) if out.verdict == RunVerdict::Clean => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}
