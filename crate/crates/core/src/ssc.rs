//! Second-order diagnostics around a computed stationary point: strongly
//! active sets, the Lagrangian second-derivative quadratic form, seeded
//! curvature probes over inactive directions, the λ-threshold arithmetic,
//! and an empirical quadratic-growth check of the cost.
//!
//! Every verdict here is sampled or built from surrogate constants; reports
//! say so. A positive outcome witnesses the condition on the probed
//! subspace — it is never a certificate.

use crate::assemble::{
    cell_average_velocity, elem_quad, field2_gradient, field2_value, form_c_skew, tracking_misfit,
};
use crate::error::Error;
use crate::model::{DiagnosticsConfig, PhysicalModel};
use crate::optimizer::{
    control_inner, control_l2_norm, control_lr_norm, project, reduced_cost, ControlField,
};
use crate::sensitivity::{solve_linearized_batch, AdjointFields, LinearizedFields};
use crate::space::{h1_norm, h1_seminorm_sq, l2_norm_sq, Discretization};
use crate::state::{assemble_residual, NewtonOptions, StateFields};
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cells-and-components where the stationarity defect |λŪᵢ + φ̄ᵢ| clears a
/// threshold ε, in the per-cell control dof layout.
#[derive(Debug, Clone)]
pub struct ActiveSetMask {
    pub epsilon: f64,
    pub mask: Vec<bool>,
}

impl ActiveSetMask {
    pub fn n_active(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_active(&self, d: &Discretization, cell: usize, comp: usize) -> bool {
        self.mask[d.control.dof(cell, comp)]
    }
}

fn stationarity_defect(
    d: &Discretization,
    u: &[f64],
    adjoint: &AdjointFields,
    lambda: f64,
) -> Vec<f64> {
    let avg = cell_average_velocity(d, adjoint.phi(d));
    u.iter()
        .zip(avg)
        .map(|(ui, ai)| lambda * ui + ai)
        .collect()
}

/// Marks the components where |λUᵢ + φ̄ᵢ| > ε, with φ̄ replaced by its cell
/// average (the same reduction the gradient uses).
pub fn strongly_active_set(
    d: &Discretization,
    u: &[f64],
    adjoint: &AdjointFields,
    lambda: f64,
    epsilon: f64,
) -> Result<ActiveSetMask> {
    if !(epsilon > 0.0) {
        return Err(Error::RejectedInput(format!(
            "active-set threshold epsilon must be positive, got {epsilon}"
        )));
    }
    let mask = stationarity_defect(d, u, adjoint, lambda)
        .iter()
        .map(|g| g.abs() > epsilon)
        .collect();
    Ok(ActiveSetMask { epsilon, mask })
}

/// Default threshold: 1e-3 of the largest stationarity defect.
pub fn default_active_epsilon(
    d: &Discretization,
    u: &[f64],
    adjoint: &AdjointFields,
    lambda: f64,
) -> f64 {
    1e-3 * stationarity_defect(d, u, adjoint, lambda)
        .iter()
        .fold(0.0_f64, |m, g| m.max(g.abs()))
}

/// Both sides of the strongly-active lower bound
/// Σᵢ ∫_{Ωεᵢ} (λŪᵢ+φ̄ᵢ)(Uᵢ−Ūᵢ) ≥ ε‖U−Ū‖_{L¹(Ωε)}.
#[derive(Debug, Clone, Copy)]
pub struct ActiveEstimateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Evaluates the strongly-active estimate for an admissible comparison
/// control `u` against the stationary control `ubar`. Meaningful only when
/// `ubar` is (numerically) stationary.
pub fn verify_active_estimate(
    d: &Discretization,
    u: &[f64],
    ubar: &[f64],
    adjoint: &AdjointFields,
    lambda: f64,
    mask: &ActiveSetMask,
) -> ActiveEstimateReport {
    let defect = stationarity_defect(d, ubar, adjoint, lambda);
    let mut lhs = 0.0;
    let mut l1 = 0.0;
    for e in 0..d.mesh.n_triangles() {
        let area = d.mesh.signed_area(e);
        for comp in 0..2 {
            let i = d.control.dof(e, comp);
            if mask.mask[i] {
                let diff = u[i] - ubar[i];
                lhs += area * defect[i] * diff;
                l1 += area * diff.abs();
            }
        }
    }
    let rhs = mask.epsilon * l1;
    ActiveEstimateReport {
        lhs,
        rhs,
        pass: lhs + 1e-12 * (1.0 + rhs.abs()) >= rhs,
    }
}

/// Value of the Lagrangian j(w) − ⟨Λ, R(w)⟩ at an arbitrary point of the
/// packed variable space, with the multiplier held fixed. The second
/// difference of this scalar along a direction is the oracle for
/// [`lagrangian_second_form`].
pub fn lagrangian_value(
    d: &Discretization,
    model: &PhysicalModel,
    x: &[f64],
    ctrl: &[f64],
    multiplier: &AdjointFields,
) -> Result<f64> {
    let ju = tracking_misfit(
        d,
        &d.velocity,
        &x[d.off_u()..d.off_u() + d.n_u()],
        &model.u_d,
    );
    let jy = tracking_misfit(
        d,
        &d.scalars,
        &x[d.off_y()..d.off_y() + d.n_y()],
        &model.y_d,
    );
    let reg = 0.5 * model.lambda * control_inner(d, ctrl, ctrl);
    let residual = assemble_residual(d, model, ctrl, x)?;
    let pairing: f64 = multiplier
        .packed
        .iter()
        .zip(&residual)
        .map(|(m, r)| m * r)
        .sum();
    Ok(ju + jy + reg - pairing)
}

/// Second derivative of the Lagrangian along the direction (ζ, μ, h), with
/// the multiplier (φ̄, η̄) fixed:
///
/// ‖ζ‖₀² + ‖μ‖₀² + λ‖h‖₀²
///   − 2c̃(ζ,ζ,φ̄) − 2c̃(ζ,μ,η̄)
///   − ∫ ν_TT(T̄)(μ_T)² ∇ū:∇φ̄ − 2∫ ν_T(T̄) μ_T ∇ζ:∇φ̄
///   + (F_yy(ȳ)[μ,μ], φ̄).
pub fn lagrangian_second_form(
    d: &Discretization,
    model: &PhysicalModel,
    state: &StateFields,
    adjoint: &AdjointFields,
    lin: &LinearizedFields,
    h: &[f64],
) -> f64 {
    let zeta = lin.zeta(d);
    let mu = lin.mu(d);
    let phi = adjoint.phi(d);
    let eta = adjoint.eta(d);
    let u = state.velocity(d);
    let y = state.scalars(d);

    let mut value = l2_norm_sq(&d.mesh, &d.velocity, &d.quad, zeta)
        + l2_norm_sq(&d.mesh, &d.scalars, &d.quad, mu)
        + model.lambda * control_inner(d, h, h)
        - 2.0 * form_c_skew(d, zeta, zeta, phi)
        - 2.0 * form_c_skew(d, zeta, mu, eta);

    let nu_t = &model.viscosity.nu_t;
    let nu_tt = &model.viscosity.nu_tt;
    let hess = &model.buoyancy.hessian;
    for e in 0..d.mesh.n_triangles() {
        let eq = elem_quad(d, e);
        for q in 0..eq.weights.len() {
            let w = eq.weights[q];
            let sv = &d.p2_table.vals[q];
            let g = &eq.grads[q];
            let yv = field2_value(&d.scalars, y, eq.nodes, sv);
            let muv = field2_value(&d.scalars, mu, eq.nodes, sv);
            let phv = field2_value(&d.velocity, phi, eq.nodes, sv);
            let gu = field2_gradient(&d.velocity, u, eq.nodes, g);
            let gz = field2_gradient(&d.velocity, zeta, eq.nodes, g);
            let gp = field2_gradient(&d.velocity, phi, eq.nodes, g);

            let mut gu_gp = 0.0;
            let mut gz_gp = 0.0;
            for i in 0..2 {
                gu_gp += gu[i][0] * gp[i][0] + gu[i][1] * gp[i][1];
                gz_gp += gz[i][0] * gp[i][0] + gz[i][1] * gp[i][1];
            }
            let t = yv[0];
            value -= w * (nu_tt(t) * muv[0] * muv[0] * gu_gp + 2.0 * nu_t(t) * muv[0] * gz_gp);

            let hs = hess(yv);
            for i in 0..2 {
                let mut quad = 0.0;
                for (k, mk) in muv.iter().enumerate() {
                    for (l, ml) in muv.iter().enumerate() {
                        quad += hs[i][k][l] * mk * ml;
                    }
                }
                value += w * quad * phv[i];
            }
        }
    }
    value
}

/// One sampled curvature ratio.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureProbeResult {
    pub direction: usize,
    pub l_ww: f64,
    /// ‖h‖²_{L^{4/3}}; positive for every recorded probe.
    pub h_l43_sq: f64,
    pub sigma_est: f64,
}

/// Outcome of a batch of curvature probes.
#[derive(Debug, Clone)]
pub struct CurvatureProbeReport {
    pub epsilon: f64,
    pub seed: u64,
    pub n_directions: usize,
    pub probes: Vec<CurvatureProbeResult>,
    /// Draws that vanished entirely (fully active or pinned control).
    pub skipped_zero_directions: usize,
    /// min σ_est over the recorded probes; `None` when every draw vanished.
    pub verdict: Option<f64>,
}

impl CurvatureProbeReport {
    pub fn witnessed(&self) -> bool {
        self.verdict.map_or(false, |v| v > 0.0)
    }
}

impl std::fmt::Display for CurvatureProbeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "curvature probes: {} recorded, {} skipped (zero direction), epsilon = {:.6e}, seed = {}",
            self.probes.len(),
            self.skipped_zero_directions,
            self.epsilon,
            self.seed
        )?;
        match self.verdict {
            Some(v) if v > 0.0 => writeln!(
                f,
                "  min sigma_est = {v:.6e} > 0: coercivity witnessed on the sampled subspace"
            )?,
            Some(v) => writeln!(f, "  min sigma_est = {v:.6e} <= 0: coercivity falsified")?,
            None => writeln!(
                f,
                "  degenerate probe: every sampled direction vanishes on the active set; no verdict"
            )?,
        }
        write!(
            f,
            "  (sampled witness over random inactive directions; not a certificate)"
        )
    }
}

/// Samples seeded admissible-difference directions vanishing on the strongly
/// active set, solves the linearized system for each, and reports the
/// curvature ratio σ_est = L_ww/‖h‖²_{4/3}.
pub fn ssc_curvature_probe(
    d: &Discretization,
    model: &PhysicalModel,
    u: &ControlField,
    state: &StateFields,
    adjoint: &AdjointFields,
    epsilon: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<CurvatureProbeReport> {
    let mask = strongly_active_set(d, &u.values, adjoint, model.lambda, epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut skipped = 0;
    for id in 0..n_dirs {
        let h: Vec<f64> = (0..d.control.dof_count)
            .map(|i| {
                let raw: f64 = rng.random_range(-1.0..1.0);
                if mask.mask[i] {
                    0.0
                } else {
                    raw.clamp(u.lower[i] - u.values[i], u.upper[i] - u.values[i])
                }
            })
            .collect();
        if h.iter().any(|&v| v != 0.0) {
            directions.push((id, h));
        } else {
            skipped += 1;
        }
    }

    let dirs: Vec<Vec<f64>> = directions.iter().map(|(_, h)| h.clone()).collect();
    let solutions = solve_linearized_batch(d, model, state, &dirs)?;
    let probes: Vec<CurvatureProbeResult> = directions
        .iter()
        .zip(&solutions)
        .map(|((id, h), lin)| {
            let l_ww = lagrangian_second_form(d, model, state, adjoint, lin, h);
            let l43 = control_lr_norm(d, h, 4.0 / 3.0);
            CurvatureProbeResult {
                direction: *id,
                l_ww,
                h_l43_sq: l43 * l43,
                sigma_est: l_ww / (l43 * l43),
            }
        })
        .collect();
    let verdict = probes
        .iter()
        .map(|p| p.sigma_est)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |v| v.min(s))));
    Ok(CurvatureProbeReport {
        epsilon,
        seed,
        n_directions: n_dirs,
        probes,
        skipped_zero_directions: skipped,
        verdict,
    })
}

/// Norm surrogates feeding the λ-threshold: solved-field stand-ins for the
/// a-priori bounds on the linearized state (M_ψ), the adjoint (M_φ), and the
/// gradient magnitudes of the adjoint and state velocities (M̂, M̄).
#[derive(Debug, Clone, Copy)]
pub struct NormBounds {
    pub m_psi: f64,
    pub m_phi: f64,
    pub m_hat: f64,
    pub m_bar: f64,
}

/// Computes the surrogates from a solved state/adjoint pair: H¹ norms for
/// M_ψ and M_φ, H¹ seminorms of the two velocities for M̂ and M̄.
pub fn norm_bound_surrogates(
    d: &Discretization,
    state: &StateFields,
    adjoint: &AdjointFields,
) -> NormBounds {
    let m_psi = h1_norm(&d.mesh, &d.velocity, &d.quad, state.velocity(d))
        + h1_norm(&d.mesh, &d.scalars, &d.quad, state.scalars(d));
    let m_phi = h1_norm(&d.mesh, &d.velocity, &d.quad, adjoint.phi(d))
        + h1_norm(&d.mesh, &d.scalars, &d.quad, adjoint.eta(d));
    let m_hat = h1_seminorm_sq(&d.mesh, &d.velocity, &d.quad, adjoint.phi(d)).sqrt();
    let m_bar = h1_seminorm_sq(&d.mesh, &d.velocity, &d.quad, state.velocity(d)).sqrt();
    NormBounds {
        m_psi,
        m_phi,
        m_hat,
        m_bar,
    }
}

/// λ versus the sufficient threshold
/// (1/C_{2,r})·(M_ψ M_φ (C6·C3 + C_Fyy·C4²) + C_νTT·M̂·M̄·M_ψ).
#[derive(Debug, Clone, Copy)]
pub struct LambdaThresholdReport {
    pub lambda: f64,
    pub threshold: f64,
    pub satisfied: bool,
    pub bounds: NormBounds,
    pub config: DiagnosticsConfig,
    pub c_fyy: f64,
    pub c_nutt: f64,
}

impl std::fmt::Display for LambdaThresholdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{}lambda threshold: lambda = {:.6e} {} threshold {:.6e}",
            if self.config.advisory { "ADVISORY " } else { "" },
            self.lambda,
            if self.satisfied { ">" } else { "<=" },
            self.threshold
        )?;
        writeln!(
            f,
            "  inputs: M_psi = {:.6e}, M_phi = {:.6e}, M_hat = {:.6e}, M_bar = {:.6e}, C_Fyy = {:.6e}, C_nuTT = {:.6e}",
            self.bounds.m_psi,
            self.bounds.m_phi,
            self.bounds.m_hat,
            self.bounds.m_bar,
            self.c_fyy,
            self.c_nutt
        )?;
        write!(
            f,
            "  verdict: {} (surrogate embedding constants; not a certificate)",
            if self.satisfied {
                "satisfied"
            } else {
                "NOT satisfied"
            }
        )
    }
}

/// Checks whether the regularization weight clears the coercivity threshold
/// built from the norm surrogates and embedding constants.
pub fn lambda_threshold(
    model: &PhysicalModel,
    bounds: &NormBounds,
    config: &DiagnosticsConfig,
) -> LambdaThresholdReport {
    let c_fyy = model.buoyancy.second_derivative_bound;
    let c_nutt = model.viscosity.second_derivative_bound;
    let threshold = (bounds.m_psi * bounds.m_phi * (config.c6 * config.c3 + c_fyy * config.c4 * config.c4)
        + c_nutt * bounds.m_hat * bounds.m_bar * bounds.m_psi)
        / config.c2r;
    LambdaThresholdReport {
        lambda: model.lambda,
        threshold,
        satisfied: model.lambda > threshold,
        bounds: *bounds,
        config: *config,
        c_fyy,
        c_nutt,
    }
}

/// Result of sampling the cost around a stationary control.
#[derive(Debug, Clone)]
pub struct GrowthCheckReport {
    pub radius: f64,
    pub seed: u64,
    pub n_samples: usize,
    /// Samples discarded because they coincided with the base control.
    pub n_excluded: usize,
    pub base_cost: f64,
    /// min (j(U) − j(Ū))/‖U−Ū‖²_{4/3} over the kept samples.
    pub theta_est: Option<f64>,
    pub pass: bool,
}

impl std::fmt::Display for GrowthCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "quadratic growth: {} samples in L2 radius {:.3e}, {} excluded, seed = {}, j(base) = {:.12e}",
            self.n_samples, self.radius, self.n_excluded, self.seed, self.base_cost
        )?;
        match self.theta_est {
            Some(t) => writeln!(
                f,
                "  theta_est = {t:.6e}: growth {}",
                if self.pass { "witnessed" } else { "FALSIFIED" }
            )?,
            None => writeln!(f, "  no usable samples; no verdict")?,
        }
        write!(
            f,
            "  (sampled growth constant over random admissible perturbations; not a certificate)"
        )
    }
}

/// Samples admissible controls in an L² ball around `ubar`, re-solves the
/// state at each, and estimates the quadratic growth constant of the cost.
pub fn quadratic_growth_check(
    d: &Discretization,
    model: &PhysicalModel,
    ubar: &ControlField,
    radius: f64,
    n_samples: usize,
    seed: u64,
    newton: &NewtonOptions,
) -> Result<GrowthCheckReport> {
    if !(radius > 0.0) {
        return Err(Error::RejectedInput(format!(
            "growth-check radius must be positive, got {radius}"
        )));
    }
    let base = reduced_cost(d, model, ubar, newton)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Option<f64> = None;
    let mut excluded = 0;
    for _ in 0..n_samples {
        let raw = ControlField {
            values: ubar
                .values
                .iter()
                .map(|v| v + rng.random_range(-1.0..1.0))
                .collect(),
            lower: ubar.lower.clone(),
            upper: ubar.upper.clone(),
        };
        let shrink: f64 = rng.random_range(0.0..1.0);
        let projected = project(&raw);
        let mut diff: Vec<f64> = projected
            .values
            .iter()
            .zip(&ubar.values)
            .map(|(a, b)| a - b)
            .collect();
        let norm = control_l2_norm(d, &diff);
        if norm == 0.0 {
            excluded += 1;
            continue;
        }
        let scale = shrink * (radius / norm).min(1.0);
        for v in &mut diff {
            *v *= scale;
        }
        let sample = ControlField {
            values: ubar.values.iter().zip(&diff).map(|(b, d)| b + d).collect(),
            lower: ubar.lower.clone(),
            upper: ubar.upper.clone(),
        };
        let l43 = control_lr_norm(d, &diff, 4.0 / 3.0);
        if l43 == 0.0 {
            excluded += 1;
            continue;
        }
        let eval = reduced_cost(d, model, &sample, newton)?;
        let ratio = (eval.cost - base.cost) / (l43 * l43);
        theta = Some(theta.map_or(ratio, |t: f64| t.min(ratio)));
    }
    Ok(GrowthCheckReport {
        radius,
        seed,
        n_samples,
        n_excluded: excluded,
        base_cost: base.cost,
        theta_est: theta,
        pass: theta.map_or(false, |t| t > 0.0),
    })
}
