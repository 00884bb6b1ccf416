//! Experiment orchestration: dispatches sweep cells, evaluates acceptance
//! thresholds, and persists CSV/JSON/SVG artifacts plus the run manifest.
//!
//! Determinism: cells are keyed jobs with seeds derived from the master
//! seed; path-level parallelism reduces in fixed chunk order, so output
//! bytes do not depend on `--jobs`.

use crate::config::{AcceptanceConfig, ExperimentConfig, ExperimentKind};
use crate::error::{LabError, Result};
use crate::plot::emit_plot;
use crate::report::{
    out_path, write_batch_dump, write_batch_summary, write_parametrix_csv, write_rate_fit_json,
    write_scan_csv, write_sweep_csv, JobRecord, ParametrixRow, RunManifest, SweepRow,
};
use ewel_core::coefficients::{validate_assumptions, CoefficientField, Regime, SampleGrid};
use ewel_core::euler::{simulate_batch, GridSchedule};
use ewel_core::mollifier::{
    derivative_blowup_scan, lq_deviation, mollify_holder, mollify_piecewise, sup_deviation,
    MollifiedField,
};
use ewel_core::parametrix::{ConvQuad, SeriesEngine, SeriesMode};
use ewel_core::weak_error::{
    cell_seed, decomposition_components, density_error_scheme_vs_fine, epsilon_balance,
    estimate_weak_error, fit_rate, RateFit,
};
use serde::Serialize;
use std::path::Path;

/// Everything a run produced, for both the CLI and the test suites.
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub acceptance: Vec<AcceptanceCheck>,
    pub failed_jobs: usize,
    pub sweep_rows: Vec<SweepRow>,
    pub fit: Option<RateFit>,
    pub scan_rows: Vec<(f64, String, f64)>,
    pub parametrix_rows: Vec<ParametrixRow>,
}

#[derive(Clone, Debug)]
pub struct AcceptanceCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl RunOutcome {
    pub fn acceptance_ok(&self) -> bool {
        self.acceptance.iter().all(|c| c.pass)
    }

    /// Scan value lookup by quantity name and epsilon.
    pub fn scan_value(&self, quantity: &str, eps: f64) -> Option<f64> {
        self.scan_rows
            .iter()
            .find(|(e, q, _)| q == quantity && (e - eps).abs() < 1e-12)
            .map(|(_, _, v)| *v)
    }
}

#[derive(Serialize)]
struct ValidationJson {
    pass: bool,
    k1_measured: f64,
    k2_measured: f64,
    ellipticity_min: f64,
    ellipticity_max: f64,
    holder_max_quotient: Option<f64>,
    holder_exponent_estimate: Option<f64>,
    violations: Vec<String>,
}

/// Runs one experiment config; all artifacts go to `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    jobs: usize,
    out_dir: &Path,
    timestamps: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("worker pool: {e}")))?;

    let mut manifest = RunManifest::new(config.hash());
    if timestamps {
        manifest.started_unix_ms = Some(now_ms());
    }

    let field = config.model.build()?;

    // Model validation report is part of every run.
    let report = validate_assumptions(&field, &SampleGrid::default_for_dim(field.dim));
    let vj = ValidationJson {
        pass: report.pass(),
        k1_measured: report.k1_measured,
        k2_measured: report.k2_measured,
        ellipticity_min: report.ellipticity_min,
        ellipticity_max: report.ellipticity_max,
        holder_max_quotient: report.holder_max_quotient,
        holder_exponent_estimate: report.holder_exponent_estimate,
        violations: report.violations.iter().map(|v| format!("{v:?}")).collect(),
    };
    let vpath = out_path(out_dir, "validation.json");
    std::fs::write(
        &vpath,
        serde_json::to_string_pretty(&vj).expect("validation serializes") + "\n",
    )?;
    manifest.record_output(&vpath);

    let mut outcome = RunOutcome {
        manifest,
        acceptance: Vec::new(),
        failed_jobs: 0,
        sweep_rows: Vec::new(),
        fit: None,
        scan_rows: Vec::new(),
        parametrix_rows: Vec::new(),
    };

    pool.install(|| match config.experiment.kind {
        ExperimentKind::WeakErrorSweep => run_weak_error_sweep(config, &field, out_dir, &mut outcome),
        ExperimentKind::DensityErrorSweep => run_density_sweep(config, &field, out_dir, &mut outcome),
        ExperimentKind::MollifierScan => run_mollifier_scan(config, &field, out_dir, &mut outcome),
        ExperimentKind::ParametrixEval => run_parametrix(config, &field, out_dir, &mut outcome),
        ExperimentKind::Decomposition => run_decomposition(config, &field, out_dir, &mut outcome),
        ExperimentKind::Simulate => run_simulate(config, &field, out_dir, &mut outcome),
    })?;

    if timestamps {
        outcome.manifest.finished_unix_ms = Some(now_ms());
    }
    let mpath = out_path(out_dir, "manifest.json");
    outcome.manifest.record_output(&mpath);
    outcome.manifest.write(&mpath)?;
    Ok(outcome)
}

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn gamma_of(field: &CoefficientField) -> f64 {
    field.regime.gamma()
}

// ---------------------------------------------------------------------------
// Weak-error sweep
// ---------------------------------------------------------------------------

fn run_weak_error_sweep(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let grid_cfg = config.grid.as_ref().unwrap();
    let paths = config.paths.as_ref().unwrap();
    let tf_cfg = config.test_function.as_ref().unwrap();
    let tf = tf_cfg.build();
    let x0 = config.x0(field.dim);
    let master = config.experiment.seed;

    for (i, &n) in grid_cfg.n_list.iter().enumerate() {
        let seed = cell_seed(master, i);
        let job_id = format!("weak_error[n={n}]");
        let grid = GridSchedule::new(grid_cfg.t_horizon, n)?;
        match estimate_weak_error(field, &tf, &x0, grid, grid_cfg.ref_factor, paths.m, seed) {
            Ok(est) => {
                let mut flags = Vec::new();
                if est.stderr > est.error.abs() {
                    flags.push("noise".to_string());
                }
                outcome.sweep_rows.push(SweepRow {
                    model: config.model.label().to_string(),
                    h: grid.h(),
                    epsilon: None,
                    test_function: tf_cfg.label(),
                    error: est.error,
                    stderr: est.stderr,
                    bias_bound: None,
                    flags,
                });
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                outcome.failed_jobs += 1;
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    // Sweep-level noise flag.
    let all_noise = !outcome.sweep_rows.is_empty()
        && outcome
            .sweep_rows
            .iter()
            .all(|r| r.stderr > r.error.abs());
    if all_noise {
        for r in outcome.sweep_rows.iter_mut() {
            r.flags.push("noise-dominated".to_string());
        }
    }

    let fit_points: Vec<(f64, f64, f64)> = outcome
        .sweep_rows
        .iter()
        .map(|r| (r.h, r.error.abs(), r.stderr))
        .collect();
    let note = all_noise.then(|| "noise-dominated".to_string());
    let fit = fit_rate(&fit_points).ok();

    write_outputs(config, field, out_dir, outcome, &fit_points, &fit, &note)?;
    evaluate_sweep_acceptance(config.acceptance.as_ref(), outcome, &fit);
    outcome.fit = fit;
    Ok(())
}

/// Shared CSV/JSON/SVG emission for sweep-type experiments.
fn write_outputs(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
    fit_points: &[(f64, f64, f64)],
    fit: &Option<RateFit>,
    note: &Option<String>,
) -> Result<()> {
    let sweep_path = out_path(out_dir, "sweep.csv");
    write_sweep_csv(&sweep_path, &outcome.sweep_rows)?;
    outcome.manifest.record_output(&sweep_path);

    if let Some(f) = fit {
        let fit_path = out_path(out_dir, "rate_fit.json");
        write_rate_fit_json(&fit_path, f, note)?;
        outcome.manifest.record_output(&fit_path);
    }
    if config.output.plot && fit_points.len() >= 2 {
        let plot_path = out_path(out_dir, "plot.svg");
        emit_plot(
            &plot_path,
            &config.experiment.name,
            fit_points,
            fit.as_ref(),
            &[gamma_of(field) / 2.0, 1.0],
        )?;
        outcome.manifest.record_output(&plot_path);
    }
    Ok(())
}

fn evaluate_sweep_acceptance(
    acc: Option<&AcceptanceConfig>,
    outcome: &mut RunOutcome,
    fit: &Option<RateFit>,
) {
    let Some(acc) = acc else { return };
    if let Some(k) = acc.zero_within_stderr {
        // Exact coupling (constant coefficients) leaves only floating-point
        // residue in both the error and its stderr; treat anything at the
        // rounding floor as zero rather than dividing residue by residue.
        const ZERO_FLOOR: f64 = 1e-12;
        let worst = outcome
            .sweep_rows
            .iter()
            .map(|r| {
                if r.error.abs() <= ZERO_FLOOR {
                    0.0
                } else {
                    r.error.abs() / r.stderr.max(1e-300)
                }
            })
            .fold(0.0f64, f64::max);
        outcome.acceptance.push(AcceptanceCheck {
            name: "zero_within_stderr".into(),
            pass: worst <= k,
            detail: format!("max |error|/stderr = {worst:.2} (limit {k})"),
        });
    }
    if let Some(min_slope) = acc.min_slope {
        match fit {
            Some(f) => outcome.acceptance.push(AcceptanceCheck {
                name: "min_slope".into(),
                pass: f.slope >= min_slope,
                detail: format!("fitted slope {:.4} (need >= {min_slope})", f.slope),
            }),
            None => outcome.acceptance.push(AcceptanceCheck {
                name: "min_slope".into(),
                pass: false,
                detail: "no rate fit available".into(),
            }),
        }
    }
    if acc.monotone_beyond_noise {
        // Rows are pushed in n_list order; sort by h descending.
        let mut rows: Vec<(f64, f64, f64)> = outcome
            .sweep_rows
            .iter()
            .map(|r| (r.h, r.error.abs(), r.stderr))
            .collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut pass = true;
        let mut detail = String::new();
        for w in rows.windows(2) {
            let tol = 3.0 * (w[0].2 * w[0].2 + w[1].2 * w[1].2).sqrt();
            if w[1].1 > w[0].1 + tol {
                pass = false;
                detail = format!(
                    "error rose from {:.3e} (h={}) to {:.3e} (h={}) beyond noise {tol:.1e}",
                    w[0].1, w[0].0, w[1].1, w[1].0
                );
                break;
            }
        }
        if pass {
            detail = "errors decrease beyond noise along the sweep".into();
        }
        outcome.acceptance.push(AcceptanceCheck {
            name: "monotone_beyond_noise".into(),
            pass,
            detail,
        });
    }
    if acc.bias_below_half_error {
        let min_err = outcome
            .sweep_rows
            .iter()
            .map(|r| r.error.abs())
            .fold(f64::INFINITY, f64::min);
        let max_bias = outcome
            .sweep_rows
            .iter()
            .filter_map(|r| r.bias_bound)
            .fold(0.0f64, f64::max);
        let pass = max_bias <= 0.5 * min_err;
        for r in outcome.sweep_rows.iter_mut() {
            if let Some(b) = r.bias_bound {
                if b > 0.5 * r.error.abs() {
                    r.flags.push("bias-limited".to_string());
                }
            }
        }
        outcome.acceptance.push(AcceptanceCheck {
            name: "bias_below_half_error".into(),
            pass,
            detail: format!("max bias bound {max_bias:.3e} vs half min error {:.3e}", 0.5 * min_err),
        });
    }
    for rc in &acc.ratio_checks {
        let a = outcome.scan_value(&rc.quantity, rc.eps_a);
        let b = outcome.scan_value(&rc.quantity, rc.eps_b);
        let (pass, detail) = match (a, b) {
            (Some(va), Some(vb)) if vb != 0.0 => {
                let ratio = va / vb;
                (
                    ratio >= rc.min && ratio <= rc.max,
                    format!(
                        "{}({})/{}({}) = {ratio:.3} (need [{}, {}])",
                        rc.quantity, rc.eps_a, rc.quantity, rc.eps_b, rc.min, rc.max
                    ),
                )
            }
            _ => (false, format!("quantity {} not measured", rc.quantity)),
        };
        outcome.acceptance.push(AcceptanceCheck {
            name: format!("ratio_{}", rc.quantity),
            pass,
            detail,
        });
    }
}

// ---------------------------------------------------------------------------
// Density error sweep
// ---------------------------------------------------------------------------

fn run_density_sweep(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let grid_cfg = config.grid.as_ref().unwrap();
    let paths = config.paths.as_ref().unwrap();
    let density = config.density.as_ref().unwrap();
    let x0 = config.x0(field.dim)[0];
    let master = config.experiment.seed;

    for (i, &n) in grid_cfg.n_list.iter().enumerate() {
        let seed = cell_seed(master, i);
        let job_id = format!("density_error[n={n}]");
        let grid = GridSchedule::new(grid_cfg.t_horizon, n)?;
        match density_error_scheme_vs_fine(
            field,
            x0,
            grid,
            grid_cfg.ref_factor,
            paths.m,
            seed,
            &density.y_points,
            density.bandwidth,
        ) {
            Ok(cells) => {
                for c in cells {
                    let mut flags = Vec::new();
                    if c.bias_bound > 0.5 * c.error {
                        flags.push("bias-limited".to_string());
                    }
                    outcome.sweep_rows.push(SweepRow {
                        model: config.model.label().to_string(),
                        h: c.h,
                        epsilon: None,
                        test_function: format!("kde_density[y={}]", c.y),
                        error: c.error,
                        stderr: c.stderr,
                        bias_bound: Some(c.bias_bound),
                        flags,
                    });
                }
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                outcome.failed_jobs += 1;
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    // Fit over h for the first y point (the sweep's primary target).
    let y0 = density.y_points.first().copied().unwrap_or(0.0);
    let tag = format!("kde_density[y={y0}]");
    let fit_points: Vec<(f64, f64, f64)> = outcome
        .sweep_rows
        .iter()
        .filter(|r| r.test_function == tag)
        .map(|r| (r.h, r.error, r.stderr))
        .collect();
    let fit = fit_rate(&fit_points).ok();
    write_outputs(config, field, out_dir, outcome, &fit_points, &fit, &None)?;
    evaluate_sweep_acceptance(config.acceptance.as_ref(), outcome, &fit);
    outcome.fit = fit;
    Ok(())
}

// ---------------------------------------------------------------------------
// Mollifier scan
// ---------------------------------------------------------------------------

fn build_mollified(
    field: &CoefficientField,
    eps: f64,
    quad_nodes: usize,
) -> Result<MollifiedField> {
    let m = match field.regime {
        Regime::Holder { .. } => mollify_holder(field, eps, quad_nodes, 1.0)?,
        Regime::PiecewiseSmooth => mollify_piecewise(field, eps)?,
    };
    Ok(m)
}

fn run_mollifier_scan(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let mc = config.mollifier.as_ref().unwrap();
    let grid = SampleGrid {
        t_max: 1.0,
        box_halfwidth: mc.scan_box,
        time_samples: 3,
        space_samples_per_axis: mc.scan_samples,
        pair_samples: 4000,
        seed: config.experiment.seed,
    };

    for (i, &eps) in mc.epsilons.iter().enumerate() {
        let seed = cell_seed(config.experiment.seed, i);
        let job_id = format!("mollifier_scan[eps={eps}]");
        let run_cell = || -> Result<Vec<(f64, String, f64)>> {
            let mut rows = Vec::new();
            let m = build_mollified(field, eps, mc.quad_nodes)?;
            let dev = sup_deviation(field, &m, &grid, mc.eta);
            rows.push((eps, "delta_b".to_string(), dev.delta_b));
            rows.push((eps, "delta_sigma".to_string(), dev.delta_sigma));
            rows.push((
                eps,
                format!("delta_sigma_eta[eta={}]", mc.eta),
                dev.delta_sigma_eta,
            ));
            for alpha in &mc.derivative_orders {
                let scan = derivative_blowup_scan(&m, alpha, &grid, eps / 32.0)?;
                let tag: Vec<String> = alpha.iter().map(|k| k.to_string()).collect();
                rows.push((
                    eps,
                    format!("deriv[{}]_drift", tag.join(",")),
                    scan.max_drift,
                ));
                rows.push((
                    eps,
                    format!("deriv[{}]_sigma", tag.join(",")),
                    scan.max_sigma,
                ));
            }
            if let Some(q) = mc.q {
                let explicit = match field.regime {
                    Regime::Holder { .. } => {
                        Some(vec![(-mc.scan_box, mc.scan_box); field.dim])
                    }
                    Regime::PiecewiseSmooth => None,
                };
                let v = lq_deviation(field, &m, q, 1.0, mc.lq_resolution, explicit)?;
                rows.push((eps, format!("lq_deviation[q={q}]"), v));
            }
            Ok(rows)
        };
        match run_cell() {
            Ok(rows) => {
                outcome.scan_rows.extend(rows);
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                outcome.failed_jobs += 1;
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let scan_path = out_path(out_dir, "scan.csv");
    write_scan_csv(&scan_path, &outcome.scan_rows)?;
    outcome.manifest.record_output(&scan_path);
    evaluate_sweep_acceptance(config.acceptance.as_ref(), outcome, &None);
    Ok(())
}

// ---------------------------------------------------------------------------
// Parametrix evaluation
// ---------------------------------------------------------------------------

fn run_parametrix(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let pc = config.parametrix.as_ref().unwrap();
    let mut quad = if field.dim == 2 {
        ConvQuad::light_2d()
    } else {
        ConvQuad::default()
    };
    if let Some(v) = pc.time_nodes {
        quad.time_nodes = v;
    }
    if let Some(v) = pc.space_nodes {
        quad.space_nodes = v;
    }
    if let Some(v) = pc.grid_time {
        quad.grid_time = v;
    }
    if let Some(v) = pc.grid_space {
        quad.grid_space = v;
    }
    if let Some(v) = pc.trunc_stds {
        quad.trunc_stds = v;
    }
    let gamma = gamma_of(field);

    for (i, y) in pc.y_points.iter().enumerate() {
        let job_id = format!("parametrix[y={y:?}]");
        let seed = cell_seed(config.experiment.seed, i);
        let run_cell = || -> Result<Vec<ParametrixRow>> {
            let mut rows = Vec::new();
            let mut engine = SeriesEngine::new(field, pc.s, pc.t, y, gamma, quad)?;
            let acc = engine.evaluate(&pc.x, pc.r_max, SeriesMode::Continuous)?;
            rows.push(ParametrixRow {
                s: pc.s,
                t: pc.t,
                x: pc.x.clone(),
                y: y.clone(),
                r_max: pc.r_max,
                value: acc.value,
                tail_estimate: acc.tail_estimate,
                method: "series".into(),
            });
            for &n in &pc.discrete_n {
                let acc = engine.evaluate(&pc.x, pc.r_max, SeriesMode::Discrete { n_steps: n })?;
                rows.push(ParametrixRow {
                    s: pc.s,
                    t: pc.t,
                    x: pc.x.clone(),
                    y: y.clone(),
                    r_max: pc.r_max,
                    value: acc.value,
                    tail_estimate: acc.tail_estimate,
                    method: format!("discrete_series[n={n}]"),
                });
            }
            Ok(rows)
        };
        match run_cell() {
            Ok(rows) => {
                outcome.parametrix_rows.extend(rows);
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                outcome.failed_jobs += 1;
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let path = out_path(out_dir, "density.csv");
    write_parametrix_csv(&path, &outcome.parametrix_rows)?;
    outcome.manifest.record_output(&path);
    Ok(())
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

fn run_decomposition(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let grid_cfg = config.grid.as_ref().unwrap();
    let paths = config.paths.as_ref().unwrap();
    let density = config.density.as_ref().unwrap();
    let dc = config.decomposition.as_ref().unwrap();
    let x0 = config.x0(field.dim)[0];
    let mollified = build_mollified(field, dc.epsilon, dc.quad_nodes)?;
    let master = config.experiment.seed;
    let gamma = gamma_of(field);
    let component_names = ["p_minus_p_eps", "p_eps_minus_p_eps_h", "p_eps_h_minus_p_h"];
    let mut balance_rows: Vec<(f64, String, f64)> = Vec::new();

    for (i, &n) in grid_cfg.n_list.iter().enumerate() {
        let seed = cell_seed(master, i);
        let job_id = format!("decomposition[n={n}]");
        let h = grid_cfg.t_horizon / n as f64;
        match decomposition_components(
            field,
            &mollified,
            x0,
            n,
            dc.n_ref,
            grid_cfg.t_horizon,
            paths.m,
            seed,
            &density.y_points,
            density.bandwidth,
        ) {
            Ok(cells) => {
                for c in cells {
                    for (k, name) in component_names.iter().enumerate() {
                        outcome.sweep_rows.push(SweepRow {
                            model: config.model.label().to_string(),
                            h: c.h,
                            epsilon: Some(dc.epsilon),
                            test_function: format!("{name}[y={}]", c.y),
                            error: c.components[k].0,
                            stderr: c.components[k].1,
                            bias_bound: Some(c.bias_bound),
                            flags: Vec::new(),
                        });
                    }
                }
                // Report the paper-tuned epsilon schedule next to the data.
                if let Ok((eta, eps)) = epsilon_balance(h, grid_cfg.t_horizon, gamma) {
                    balance_rows.push((h, "eta_schedule".into(), eta));
                    balance_rows.push((h, "epsilon_balance".into(), eps));
                }
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "ok".into(),
                    error: None,
                });
            }
            Err(e) => {
                outcome.failed_jobs += 1;
                outcome.manifest.jobs.push(JobRecord {
                    id: job_id,
                    seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let sweep_path = out_path(out_dir, "sweep.csv");
    write_sweep_csv(&sweep_path, &outcome.sweep_rows)?;
    outcome.manifest.record_output(&sweep_path);
    let bpath = out_path(out_dir, "epsilon_schedule.csv");
    write_scan_csv(
        &bpath,
        &balance_rows
            .iter()
            .map(|(h, q, v)| (*h, q.clone(), *v))
            .collect::<Vec<_>>(),
    )?;
    outcome.manifest.record_output(&bpath);
    evaluate_sweep_acceptance(config.acceptance.as_ref(), outcome, &None);
    Ok(())
}

// ---------------------------------------------------------------------------
// Plain simulate + dump
// ---------------------------------------------------------------------------

fn run_simulate(
    config: &ExperimentConfig,
    field: &CoefficientField,
    out_dir: &Path,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let grid_cfg = config.grid.as_ref().unwrap();
    let paths = config.paths.as_ref().unwrap();
    let n = grid_cfg.n_list[0];
    let grid = GridSchedule::new(grid_cfg.t_horizon, n)?;
    let x0 = config.x0(field.dim);
    let seed = config.experiment.seed;
    match simulate_batch(field, &x0, grid, paths.m, seed) {
        Ok(batch) => {
            let dump = out_path(out_dir, "batch.bin");
            write_batch_dump(&dump, &batch)?;
            outcome.manifest.record_output(&dump);
            let summary = out_path(out_dir, "batch_summary.csv");
            write_batch_summary(&summary, &batch)?;
            outcome.manifest.record_output(&summary);
            outcome.manifest.jobs.push(JobRecord {
                id: format!("simulate[n={n}]"),
                seed,
                status: "ok".into(),
                error: None,
            });
        }
        Err(e) => {
            outcome.failed_jobs += 1;
            outcome.manifest.jobs.push(JobRecord {
                id: format!("simulate[n={n}]"),
                seed,
                status: "failed".into(),
                error: Some(e.to_string()),
            });
        }
    }
    Ok(())
}
