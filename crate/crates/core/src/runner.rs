//! Command orchestration: builds the problem a configuration describes,
//! drives one pipeline per command, and writes that run's artifacts into a
//! fresh output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytic::{
    apply_manufactured_problem, mms_pressure, mms_scalar_gradients, mms_scalars, mms_velocity,
    mms_velocity_gradient, named_pair_field, sample_control,
};
use crate::assemble::{assemble_tracking_load, cell_average_velocity};
use crate::config::{DesiredSpec, RunConfig};
use crate::error::Error;
use crate::io::{
    export_control, import_control, render_convergence_csv, render_newton_history,
    render_optimization_history, render_probe_csv, render_vtk, ConvergenceRow,
};
use crate::mesh::build_unit_square_mesh;
use crate::model::{
    check_smallness, default_boussinesq_model, DiagnosticsConfig, GivenField, PhysicalModel,
    StateNorms,
};
use crate::optimizer::{
    control_inner, control_l2_norm, optimize, project, reduced_cost, reduced_gradient,
    ControlField, OptimizeOptions,
};
use crate::sensitivity::{check_transpose_consistency, solve_adjoint, solve_linearized};
use crate::space::{
    gradient_jump_seminorm, h1_error_seminorm_sq, h1_norm, l2_error_sq, Discretization,
};
use crate::ssc::{
    default_active_epsilon, lambda_threshold, norm_bound_surrogates, quadratic_growth_check,
    ssc_curvature_probe,
};
use crate::state::{solve_state, StateFields};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveState,
    Optimize,
    CheckGradient,
    CheckAdjoint,
    CheckSsc,
    MmsConvergence,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveState => "solve-state",
            Command::Optimize => "optimize",
            Command::CheckGradient => "check-gradient",
            Command::CheckAdjoint => "check-adjoint",
            Command::CheckSsc => "check-ssc",
            Command::MmsConvergence => "mms-convergence",
        }
    }
}

/// Everything a command needs: the discretization, the model with desired
/// states installed, the initial (zero, projected) control carrying the
/// configured bounds, and — for synthetic targets — the generating control.
pub struct Problem {
    pub d: Discretization,
    pub model: PhysicalModel,
    pub u0: ControlField,
    pub truth: Option<ControlField>,
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    let d = Discretization::new(build_unit_square_mesh(cfg.n)?);
    let mut model = default_boussinesq_model(cfg.params)?;
    model.ydata = named_pair_field(&cfg.ydata)?;

    let nd = d.control.dof_count;
    let mut lower = vec![0.0; nd];
    let mut upper = vec![0.0; nd];
    for e in 0..d.mesh.n_triangles() {
        for c in 0..2 {
            lower[d.control.dof(e, c)] = cfg.lower[c];
            upper[d.control.dof(e, c)] = cfg.upper[c];
        }
    }

    let install_synthetic_targets =
        |model: &mut PhysicalModel, vals: &[f64]| -> Result<()> {
            let (state, _) = solve_state(&d, model, vals, &cfg.newton)?;
            model.u_d = GivenField::Discrete(state.velocity(&d).to_vec());
            model.y_d = GivenField::Discrete(state.scalars(&d).to_vec());
            Ok(())
        };

    let truth = match &cfg.desired {
        DesiredSpec::Analytic { u_d, y_d } => {
            model.u_d = GivenField::Analytic(named_pair_field(u_d)?);
            model.y_d = GivenField::Analytic(named_pair_field(y_d)?);
            None
        }
        DesiredSpec::InverseCrime { ustar } => {
            let pattern = named_pair_field(ustar)?;
            let vals = sample_control(&d, pattern.as_ref());
            install_synthetic_targets(&mut model, &vals)?;
            Some(ControlField::new(vals, lower.clone(), upper.clone())?)
        }
        DesiredSpec::FromFile { path } => {
            let imported = import_control(Path::new(path))?;
            if imported.values.len() != nd {
                return Err(Error::DimensionMismatch(format!(
                    "control file {path} has {} dofs, mesh wants {nd}",
                    imported.values.len()
                )));
            }
            install_synthetic_targets(&mut model, &imported.values)?;
            Some(ControlField::new(imported.values, lower.clone(), upper.clone())?)
        }
    };

    let u0 = ControlField::new(vec![0.0; nd], lower, upper)?;
    Ok(Problem {
        d,
        model,
        u0: project(&u0),
        truth,
    })
}

/// Runs one command, writes its artifacts under `out_dir`, and returns the
/// report text (also stored as `report.txt`).
pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let report = match cmd {
        Command::SolveState => run_solve_state(cfg, out_dir)?,
        Command::Optimize => run_optimize(cfg, out_dir)?,
        Command::CheckGradient => run_check_gradient(cfg, out_dir)?,
        Command::CheckAdjoint => run_check_adjoint(cfg, out_dir)?,
        Command::CheckSsc => run_check_ssc(cfg, out_dir)?,
        Command::MmsConvergence => run_mms_convergence(cfg, out_dir)?,
    };
    fs::write(out_dir.join("report.txt"), &report)?;
    Ok(report)
}

fn write_artifact(out_dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = out_dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

fn state_norms(d: &Discretization, state: &StateFields) -> StateNorms {
    let m_u = h1_norm(&d.mesh, &d.velocity, &d.quad, state.velocity(d));
    let m_y = h1_norm(&d.mesh, &d.scalars, &d.quad, state.scalars(d));
    let jumps = gradient_jump_seminorm(&d.mesh, &d.edges, &d.velocity, state.velocity(d))
        + gradient_jump_seminorm(&d.mesh, &d.edges, &d.scalars, state.scalars(d));
    StateNorms {
        m_u,
        m_y,
        m: m_u + m_y + jumps,
    }
}

fn run_solve_state(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let p = build_problem(cfg)?;
    let (state, newton) = solve_state(&p.d, &p.model, &p.u0.values, &cfg.newton)?;
    write_artifact(out_dir, "fields_state.vtk", &render_vtk(&p.d, &state, None))?;
    write_artifact(out_dir, "history.csv", &render_newton_history(&newton))?;

    let smallness = check_smallness(&p.model, state_norms(&p.d, &state), &DiagnosticsConfig::default());
    let mut report = String::new();
    let _ = writeln!(
        report,
        "solve-state: n = {}, converged = {} in {} iterations, final residual {:.3e}",
        cfg.n,
        newton.converged,
        newton.iterations,
        newton
            .steps
            .last()
            .map_or(newton.initial_residual.total(), |s| s.residual.total())
    );
    let _ = writeln!(report, "{smallness}");
    Ok(report)
}

fn optimize_options(cfg: &RunConfig) -> OptimizeOptions {
    OptimizeOptions {
        kkt_tol: cfg.kkt_tol,
        max_iterations: cfg.max_iterations,
        newton: cfg.newton,
        ..OptimizeOptions::default()
    }
}

fn run_optimize(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let p = build_problem(cfg)?;
    let (u, state, _, report) = optimize(&p.d, &p.model, &p.u0, &optimize_options(cfg))?;

    write_artifact(
        out_dir,
        "fields_optimized.vtk",
        &render_vtk(&p.d, &state, Some(&u.values)),
    )?;
    write_artifact(out_dir, "history.csv", &render_optimization_history(&report))?;
    export_control(&out_dir.join("control.csv"), &u)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "optimize: n = {}, lambda = {:e}, {} iterates, termination {:?}",
        cfg.n,
        cfg.params.lambda,
        report.records.len(),
        report.termination
    );
    let _ = writeln!(
        text,
        "final cost {:.6e}, vi residual {:.3e}",
        report.final_cost, report.final_vi_residual
    );
    if let Some(truth) = &p.truth {
        let diff: Vec<f64> = u
            .values
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| a - b)
            .collect();
        let _ = writeln!(
            text,
            "distance to generating control: {:.6e} (its norm: {:.6e})",
            control_l2_norm(&p.d, &diff),
            control_l2_norm(&p.d, &truth.values)
        );
    }
    Ok(text)
}

fn fixture_control(p: &Problem) -> Result<ControlField> {
    let pattern = named_pair_field("bump:0.4,-0.3")?;
    let vals = sample_control(&p.d, pattern.as_ref());
    let mut u = p.u0.clone();
    u.values = vals;
    Ok(project(&u))
}

fn run_check_gradient(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let p = build_problem(cfg)?;
    let u = fixture_control(&p)?;
    let eval = reduced_cost(&p.d, &p.model, &u, &cfg.newton)?;
    let adjoint = solve_adjoint(&p.d, &p.model, &eval.state)?;
    let grad = reduced_gradient(&p.d, &p.model, &u, &adjoint);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = 1e-4;
    let mut csv = String::from("direction,analytic,central_difference,rel_error\n");
    let mut max_rel: f64 = 0.0;
    for k in 0..5 {
        let h: Vec<f64> = (0..u.values.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut plus = u.clone();
        let mut minus = u.clone();
        for i in 0..h.len() {
            plus.values[i] += t * h[i];
            minus.values[i] -= t * h[i];
        }
        let jp = reduced_cost(&p.d, &p.model, &plus, &cfg.newton)?.cost;
        let jm = reduced_cost(&p.d, &p.model, &minus, &cfg.newton)?.cost;
        let fd = (jp - jm) / (2.0 * t);
        let an = control_inner(&p.d, &grad, &h);
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-14);
        max_rel = max_rel.max(rel);
        let _ = writeln!(csv, "{k},{an:.16e},{fd:.16e},{rel:.16e}");
    }
    write_artifact(out_dir, "gradient_check.csv", &csv)?;

    let report = format!(
        "check-gradient: n = {}, 5 directions at step {t:e}\nmax relative FD error {max_rel:.3e} (threshold 1e-5)\n",
        cfg.n
    );
    if max_rel > 1e-5 {
        fs::write(out_dir.join("report.txt"), &report)?;
        return Err(Error::CheckFailed(format!(
            "gradient mismatch: max relative FD error {max_rel:.3e} > 1e-5"
        )));
    }
    Ok(report)
}

fn run_check_adjoint(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let p = build_problem(cfg)?;
    let u = fixture_control(&p)?;
    let (state, _) = solve_state(&p.d, &p.model, &u.values, &cfg.newton)?;

    let transpose = check_transpose_consistency(&p.d, &p.model, &state)?;

    let adjoint = solve_adjoint(&p.d, &p.model, &state)?;
    let load_u = assemble_tracking_load(&p.d, &p.d.velocity, state.velocity(&p.d), &p.model.u_d);
    let load_y = assemble_tracking_load(&p.d, &p.d.scalars, state.scalars(&p.d), &p.model.y_d);
    let avg_phi = cell_average_velocity(&p.d, adjoint.phi(&p.d));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("direction,tracking_pairing,control_pairing,rel_error\n");
    let mut max_rel: f64 = 0.0;
    for k in 0..10 {
        let h: Vec<f64> = (0..u.values.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lin = solve_linearized(&p.d, &p.model, &state, &h)?;
        let lhs: f64 = lin
            .zeta(&p.d)
            .iter()
            .zip(&load_u)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + lin.mu(&p.d).iter().zip(&load_y).map(|(a, b)| a * b).sum::<f64>();
        let rhs = control_inner(&p.d, &h, &avg_phi);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-14);
        max_rel = max_rel.max(rel);
        let _ = writeln!(csv, "{k},{lhs:.16e},{rhs:.16e},{rel:.16e}");
    }
    write_artifact(out_dir, "adjoint_check.csv", &csv)?;

    let report = format!(
        "check-adjoint: n = {}\n{transpose}\nduality pairing over 10 directions: max relative error {max_rel:.3e} (threshold 1e-8)\n",
        cfg.n
    );
    if !transpose.pass || max_rel > 1e-8 {
        fs::write(out_dir.join("report.txt"), &report)?;
        return Err(Error::CheckFailed(format!(
            "adjoint inconsistency: transpose pass = {}, max duality error {max_rel:.3e}",
            transpose.pass
        )));
    }
    Ok(report)
}

fn run_check_ssc(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let p = build_problem(cfg)?;
    let (u, state, adjoint, opt_report) = optimize(&p.d, &p.model, &p.u0, &optimize_options(cfg))?;

    let epsilon = cfg.ssc.epsilon.unwrap_or_else(|| {
        default_active_epsilon(&p.d, &u.values, &adjoint, p.model.lambda).max(1e-12)
    });
    let probe = ssc_curvature_probe(
        &p.d,
        &p.model,
        &u,
        &state,
        &adjoint,
        epsilon,
        cfg.ssc.directions,
        cfg.seed,
    )?;
    let threshold = lambda_threshold(
        &p.model,
        &norm_bound_surrogates(&p.d, &state, &adjoint),
        &DiagnosticsConfig::default(),
    );
    let growth = quadratic_growth_check(
        &p.d,
        &p.model,
        &u,
        cfg.ssc.growth_radius,
        cfg.ssc.growth_samples,
        cfg.seed,
        &cfg.newton,
    )?;

    write_artifact(out_dir, "probes.csv", &render_probe_csv(&probe))?;
    write_artifact(out_dir, "history.csv", &render_optimization_history(&opt_report))?;
    export_control(&out_dir.join("control.csv"), &u)?;

    let mut report = String::new();
    let _ = writeln!(
        report,
        "check-ssc: n = {}, lambda = {:e}, optimizer termination {:?} (vi {:.3e})",
        cfg.n, cfg.params.lambda, opt_report.termination, opt_report.final_vi_residual
    );
    let _ = writeln!(report, "{probe}");
    let _ = writeln!(report, "{threshold}");
    let _ = writeln!(report, "{growth}");
    Ok(report)
}

fn run_mms_convergence(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    mms_study(cfg, out_dir, &[8, 16, 32])
}

/// Solves the manufactured problem on each mesh level and returns errors
/// plus observed orders (log₂ ratios between consecutive levels).
pub fn manufactured_convergence_rows(
    cfg: &RunConfig,
    levels: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in levels {
        let d = Discretization::new(build_unit_square_mesh(n)?);
        let mut model = default_boussinesq_model(cfg.params)?;
        apply_manufactured_problem(&mut model);
        let ctrl = vec![0.0; d.control.dof_count];
        let (state, newton) = solve_state(&d, &model, &ctrl, &cfg.newton)?;
        if !newton.converged {
            return Err(Error::CheckFailed(format!(
                "manufactured-solution solve did not converge on n = {n}"
            )));
        }

        let u_l2 = l2_error_sq(&d.mesh, &d.velocity, &d.quad, state.velocity(&d), &|x, c| {
            mms_velocity(x)[c]
        });
        let u_h1s = h1_error_seminorm_sq(&d.mesh, &d.velocity, &d.quad, state.velocity(&d), &|x, c| {
            mms_velocity_gradient(x)[c]
        });
        let p_l2 = l2_error_sq(&d.mesh, &d.pressure, &d.quad, state.pressure(&d), &|x, _| {
            mms_pressure(x)
        });
        let y_l2 = l2_error_sq(&d.mesh, &d.scalars, &d.quad, state.scalars(&d), &|x, c| {
            mms_scalars(x)[c]
        });
        let y_h1s = h1_error_seminorm_sq(&d.mesh, &d.scalars, &d.quad, state.scalars(&d), &|x, c| {
            mms_scalar_gradients(x)[c]
        });

        let errs = [
            u_l2.sqrt(),
            (u_l2 + u_h1s).sqrt(),
            p_l2.sqrt(),
            (y_l2 + y_h1s).sqrt(),
        ];
        let orders = rows.last().map(|prev| {
            let prev_errs = [prev.u_l2, prev.u_h1, prev.p_l2, prev.y_h1];
            let mut o = [0.0; 4];
            for i in 0..4 {
                o[i] = (prev_errs[i] / errs[i]).log2();
            }
            o
        });
        rows.push(ConvergenceRow {
            n,
            u_l2: errs[0],
            u_h1: errs[1],
            p_l2: errs[2],
            y_h1: errs[3],
            orders,
        });
    }
    Ok(rows)
}

fn mms_study(cfg: &RunConfig, out_dir: &Path, levels: &[usize]) -> Result<String> {
    let rows = manufactured_convergence_rows(cfg, levels)?;
    write_artifact(out_dir, "convergence.csv", &render_convergence_csv(&rows))?;

    let mut report = format!("mms-convergence over n = {levels:?}:\n");
    let _ = writeln!(report, "{:>4} {:>12} {:>12} {:>12} {:>12}", "n", "u_l2", "u_h1", "p_l2", "y_h1");
    for r in &rows {
        let _ = writeln!(
            report,
            "{:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.n, r.u_l2, r.u_h1, r.p_l2, r.y_h1
        );
        if let Some(o) = r.orders {
            let _ = writeln!(
                report,
                "     orders: u_l2 {:.2}, u_h1 {:.2}, p_l2 {:.2}, y_h1 {:.2}",
                o[0], o[1], o[2], o[3]
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("ddflow_runner_{tag}_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn solve_state_on_zero_data_returns_zero_fields() {
        let cfg = parse_config_str("[mesh]\nn = 2\n").unwrap();
        let out = tmp_dir("zero");
        let report = run(Command::SolveState, &cfg, &out).unwrap();
        assert!(report.contains("converged = true"));
        assert!(out.join("fields_state.vtk").exists());
        assert!(out.join("history.csv").exists());
        assert!(out.join("report.txt").exists());

        let p = build_problem(&cfg).unwrap();
        let (state, _) = solve_state(&p.d, &p.model, &p.u0.values, &cfg.newton).unwrap();
        assert!(state.packed.iter().all(|&v| v.abs() <= 1e-12));
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn repeated_runs_write_identical_artifacts() {
        let text = "[mesh]\nn = 2\n[model]\nlambda = 0.5\n[desired]\nkind = inverse-crime\nustar = \"bump:0.3,0.1\"\n[run]\nseed = 11\n";
        let cfg = parse_config_str(text).unwrap();
        let out1 = tmp_dir("det1");
        let out2 = tmp_dir("det2");
        run(Command::Optimize, &cfg, &out1).unwrap();
        run(Command::Optimize, &cfg, &out2).unwrap();
        for name in ["history.csv", "control.csv", "fields_optimized.vtk", "report.txt"] {
            let a = fs::read(out1.join(name)).unwrap();
            let b = fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between identical runs");
        }
        fs::remove_dir_all(&out1).ok();
        fs::remove_dir_all(&out2).ok();
    }

    #[test]
    fn gradient_check_passes_on_the_default_fixture() {
        let cfg = parse_config_str("[mesh]\nn = 2\n").unwrap();
        let out = tmp_dir("grad");
        let report = run(Command::CheckGradient, &cfg, &out).unwrap();
        assert!(report.contains("max relative FD error"));
        let csv = fs::read_to_string(out.join("gradient_check.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn adjoint_check_passes_and_reports_both_identities() {
        let cfg = parse_config_str("[mesh]\nn = 2\n[boundary]\nyD = \"linear-x\"\n").unwrap();
        let out = tmp_dir("adj");
        let report = run(Command::CheckAdjoint, &cfg, &out).unwrap();
        assert!(report.contains("transpose consistency"));
        assert!(report.contains("duality pairing"));
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn ssc_check_reports_are_labeled_advisory() {
        let text = "[mesh]\nn = 2\n[model]\nlambda = 10\n[desired]\nkind = inverse-crime\nustar = \"constant:0.2,-0.1\"\n[ssc]\ndirections = 5\ngrowth_samples = 5\n";
        let cfg = parse_config_str(text).unwrap();
        let out = tmp_dir("ssc");
        let report = run(Command::CheckSsc, &cfg, &out).unwrap();
        assert!(report.contains("ADVISORY"));
        assert!(report.contains("not a certificate"));
        assert!(out.join("probes.csv").exists());
        fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn from_file_targets_round_trip_through_the_exporter() {
        let cfg0 = parse_config_str("[mesh]\nn = 2\n").unwrap();
        let p0 = build_problem(&cfg0).unwrap();
        let pattern = named_pair_field("vortex").unwrap();
        let vals = sample_control(&p0.d, pattern.as_ref());
        let truth = ControlField::new(vals, p0.u0.lower.clone(), p0.u0.upper.clone()).unwrap();
        let path = std::env::temp_dir().join(format!("ddflow_ustar_{}.csv", std::process::id()));
        export_control(&path, &truth).unwrap();

        let text = format!("[mesh]\nn = 2\n[desired]\nkind = from-file\npath = {}\n", path.display());
        let cfg = parse_config_str(&text).unwrap();
        let p = build_problem(&cfg).unwrap();
        let same = p
            .truth
            .as_ref()
            .unwrap()
            .values
            .iter()
            .zip(&truth.values)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
        match &p.model.u_d {
            GivenField::Discrete(v) => assert_eq!(v.len(), p.d.n_u()),
            GivenField::Analytic(_) => panic!("targets should be discrete"),
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn mismatched_control_file_is_rejected_with_both_sizes() {
        let cfg0 = parse_config_str("[mesh]\nn = 2\n").unwrap();
        let p0 = build_problem(&cfg0).unwrap();
        let truth = p0.u0.clone();
        let path = std::env::temp_dir().join(format!("ddflow_wrong_{}.csv", std::process::id()));
        export_control(&path, &truth).unwrap();

        let text = format!("[mesh]\nn = 3\n[desired]\nkind = from-file\npath = {}\n", path.display());
        let cfg = parse_config_str(&text).unwrap();
        let msg = match build_problem(&cfg) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("size mismatch accepted"),
        };
        assert!(msg.contains("16") && msg.contains("36"), "{msg}");
        fs::remove_file(&path).ok();
    }

    #[test]
    fn mms_convergence_writes_orders_near_the_theoretical_rates() {
        let cfg = parse_config_str("").unwrap();
        let out = tmp_dir("mms");
        // Two coarse levels keep this test fast; the full three-level study
        // runs in the acceptance suite.
        let report = mms_study(&cfg, &out, &[4, 8]).unwrap();
        assert!(report.contains("orders"));
        let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
        let last = csv.lines().last().unwrap();
        let cols: Vec<&str> = last.split(',').collect();
        let order_u: f64 = cols[5].parse().unwrap();
        let order_y: f64 = cols[8].parse().unwrap();
        assert!(order_u >= 2.5, "velocity order {order_u}");
        assert!(order_y >= 1.7, "scalar order {order_y}");
        fs::remove_dir_all(&out).ok();
    }
}
