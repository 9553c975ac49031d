//! Physical coefficients and problem data: viscosity and buoyancy laws with
//! their derivative ladders and declared bounds, permeability and diffusion
//! tensors, regularization weight, desired states, boundary data, optional
//! manufactured sources, and the advisory smallness diagnostics.

use std::fmt;
use std::sync::Arc;

use crate::error::Error;
use crate::Result;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
pub type PairJacFn = Arc<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>;
pub type PairHessFn = Arc<dyn Fn([f64; 2]) -> [[[f64; 2]; 2]; 2] + Send + Sync>;

/// Temperature-dependent kinematic viscosity ν(T) with derivatives up to
/// third order and the declared assumption constants.
#[derive(Clone)]
pub struct ViscosityModel {
    pub nu: ScalarFn,
    pub nu_t: ScalarFn,
    pub nu_tt: ScalarFn,
    pub nu_ttt: ScalarFn,
    /// Lower bound ν₁ > 0.
    pub nu_lower: f64,
    /// Upper bound ν₂.
    pub nu_upper: f64,
    /// Lipschitz constant γ_ν = sup|ν_T|.
    pub lipschitz: f64,
    /// Bound sup|ν_TT| (second-derivative constant in the λ-threshold).
    pub second_derivative_bound: f64,
}

impl ViscosityModel {
    pub fn constant(nu0: f64) -> ViscosityModel {
        ViscosityModel {
            nu: Arc::new(move |_| nu0),
            nu_t: Arc::new(|_| 0.0),
            nu_tt: Arc::new(|_| 0.0),
            nu_ttt: Arc::new(|_| 0.0),
            nu_lower: nu0,
            nu_upper: nu0,
            lipschitz: 0.0,
            second_derivative_bound: 0.0,
        }
    }
}

impl fmt::Debug for ViscosityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ViscosityModel")
            .field("nu_lower", &self.nu_lower)
            .field("nu_upper", &self.nu_upper)
            .field("lipschitz", &self.lipschitz)
            .field("second_derivative_bound", &self.second_derivative_bound)
            .finish_non_exhaustive()
    }
}

/// Buoyancy force F(y) acting on the momentum equation, with derivative
/// tensors. `jacobian(y)[i][k] = ∂F_i/∂y_k`, `hessian(y)[i][k][l] = ∂²F_i/∂y_k∂y_l`.
#[derive(Clone)]
pub struct BuoyancyModel {
    pub value: PairFn,
    pub jacobian: PairJacFn,
    pub hessian: PairHessFn,
    /// Growth constant C_F with |F(y)| ≤ C_F|y|.
    pub growth: f64,
    /// Lipschitz constant γ_F.
    pub lipschitz: f64,
    /// Bound sup|F_yy| (second-derivative constant in the λ-threshold).
    pub second_derivative_bound: f64,
}

impl BuoyancyModel {
    /// Linear Boussinesq force F(y) = (0, g_T·T + g_S·S).
    pub fn linear(g_t: f64, g_s: f64) -> BuoyancyModel {
        let c = (g_t * g_t + g_s * g_s).sqrt();
        BuoyancyModel {
            value: Arc::new(move |y| [0.0, g_t * y[0] + g_s * y[1]]),
            jacobian: Arc::new(move |_| [[0.0, 0.0], [g_t, g_s]]),
            hessian: Arc::new(|_| [[[0.0; 2]; 2]; 2]),
            growth: c,
            lipschitz: c,
            second_derivative_bound: 0.0,
        }
    }
}

impl fmt::Debug for BuoyancyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BuoyancyModel")
            .field("growth", &self.growth)
            .field("lipschitz", &self.lipschitz)
            .field("second_derivative_bound", &self.second_derivative_bound)
            .finish_non_exhaustive()
    }
}

/// Desired-state or source data: either a closed-form function of position or
/// a coefficient vector on the matching 2-component P2 layout (the latter is
/// what inverse-crime fixtures use, making "state equals target" exact).
#[derive(Clone)]
pub enum GivenField {
    Analytic(PairFn),
    Discrete(Vec<f64>),
}

impl GivenField {
    pub fn zero() -> GivenField {
        GivenField::Analytic(Arc::new(|_| [0.0, 0.0]))
    }

    pub fn analytic(f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> GivenField {
        GivenField::Analytic(Arc::new(f))
    }
}

impl fmt::Debug for GivenField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GivenField::Analytic(_) => f.write_str("GivenField::Analytic(..)"),
            GivenField::Discrete(v) => write!(f, "GivenField::Discrete(len {})", v.len()),
        }
    }
}

/// Everything the equations need to know about the physics and the data.
#[derive(Clone)]
pub struct PhysicalModel {
    /// Inverse permeability K⁻¹ (constant 2×2, positive definite).
    pub kinv: [[f64; 2]; 2],
    /// Diffusion tensor D (constant 2×2, positive-definite symmetric part).
    pub diffusion: [[f64; 2]; 2],
    pub viscosity: ViscosityModel,
    pub buoyancy: BuoyancyModel,
    /// Regularization weight λ > 0 of the control term.
    pub lambda: f64,
    /// Desired velocity u_d.
    pub u_d: GivenField,
    /// Desired scalar pair y_d.
    pub y_d: GivenField,
    /// Dirichlet data for the scalar pair on Γ.
    pub ydata: PairFn,
    /// Volumetric momentum source (verification only).
    pub f_u: Option<PairFn>,
    /// Volumetric scalar source (verification only).
    pub f_y: Option<PairFn>,
}

impl fmt::Debug for PhysicalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhysicalModel")
            .field("kinv", &self.kinv)
            .field("diffusion", &self.diffusion)
            .field("viscosity", &self.viscosity)
            .field("buoyancy", &self.buoyancy)
            .field("lambda", &self.lambda)
            .field("u_d", &self.u_d)
            .field("y_d", &self.y_d)
            .finish_non_exhaustive()
    }
}

fn sym_eig_bounds(m: [[f64; 2]; 2]) -> (f64, f64) {
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mid - rad, mid + rad)
}

impl PhysicalModel {
    /// Smallest eigenvalue of sym(K⁻¹): the L² coercivity constant α₁.
    pub fn alpha1(&self) -> f64 {
        sym_eig_bounds(self.kinv).0
    }

    /// Smallest eigenvalue of sym(D): the scalar coercivity constant α₂.
    pub fn alpha2(&self) -> f64 {
        sym_eig_bounds(self.diffusion).0
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::ModelViolation(format!(
                "regularization weight lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.viscosity.nu_lower <= 0.0 {
            return Err(Error::ModelViolation(format!(
                "viscosity lower bound must be positive, got {}",
                self.viscosity.nu_lower
            )));
        }
        if self.alpha1() <= 0.0 {
            return Err(Error::ModelViolation(format!(
                "inverse permeability must be positive definite; sym part min eigenvalue {}",
                self.alpha1()
            )));
        }
        if self.alpha2() <= 0.0 {
            return Err(Error::ModelViolation(format!(
                "diffusion tensor must be positive definite; sym part min eigenvalue {}",
                self.alpha2()
            )));
        }
        Ok(())
    }
}

/// Parameters of the built-in model: tanh-regularized viscosity
/// ν(T) = ν₀(1 + γ·tanh T) and linear buoyancy F(y) = (0, g_T·T + g_S·S).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoussinesqParams {
    pub nu0: f64,
    pub gamma: f64,
    pub g_t: f64,
    pub g_s: f64,
    pub kinv: [[f64; 2]; 2],
    pub diffusion: [[f64; 2]; 2],
    pub lambda: f64,
}

impl Default for BoussinesqParams {
    fn default() -> Self {
        BoussinesqParams {
            nu0: 1.0,
            gamma: 0.5,
            g_t: 1.0,
            g_s: 0.5,
            kinv: [[1.0, 0.0], [0.0, 1.0]],
            diffusion: [[1.0, 0.1], [0.2, 1.0]],
            lambda: 1.0,
        }
    }
}

/// Builds the default model. Requires ν₀ > 0 and 0 ≤ γ < 1 so that
/// ν₁ = ν₀(1−γ) stays positive; desired states and boundary data start at
/// zero and are filled in by the caller.
pub fn default_boussinesq_model(params: BoussinesqParams) -> Result<PhysicalModel> {
    let BoussinesqParams {
        nu0,
        gamma,
        g_t,
        g_s,
        kinv,
        diffusion,
        lambda,
    } = params;
    if nu0 <= 0.0 {
        return Err(Error::ModelViolation(format!(
            "viscosity scale nu0 must be positive, got {nu0}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::ModelViolation(format!(
            "viscosity modulation gamma must lie in [0,1) to keep nu positive, got {gamma}"
        )));
    }
    let sech2 = |t: f64| {
        let c = t.cosh();
        1.0 / (c * c)
    };
    let viscosity = ViscosityModel {
        nu: Arc::new(move |t| nu0 * (1.0 + gamma * t.tanh())),
        nu_t: Arc::new(move |t| nu0 * gamma * sech2(t)),
        nu_tt: Arc::new(move |t| -2.0 * nu0 * gamma * sech2(t) * t.tanh()),
        nu_ttt: Arc::new(move |t| {
            let s = sech2(t);
            let th = t.tanh();
            nu0 * gamma * (4.0 * s * th * th - 2.0 * s * s)
        }),
        nu_lower: nu0 * (1.0 - gamma),
        nu_upper: nu0 * (1.0 + gamma),
        lipschitz: nu0 * gamma,
        // |ν_TT| = 2ν₀γ·sech²|tanh| peaks where tanh² = 1/3
        second_derivative_bound: nu0 * gamma * 4.0 * 3.0_f64.sqrt() / 9.0,
    };
    let model = PhysicalModel {
        kinv,
        diffusion,
        viscosity,
        buoyancy: BuoyancyModel::linear(g_t, g_s),
        lambda,
        u_d: GivenField::zero(),
        y_d: GivenField::zero(),
        ydata: Arc::new(|_| [0.0, 0.0]),
        f_u: None,
        f_y: None,
    };
    model.validate()?;
    Ok(model)
}

/// Surrogate embedding/Poincaré constants used by the advisory diagnostics.
/// All default to 1; override from the run configuration when better values
/// are known for the domain.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsConfig {
    pub c6: f64,
    pub c3: f64,
    pub cgn: f64,
    pub cp2: f64,
    pub c4: f64,
    pub c2r: f64,
    /// Reports carry the ADVISORY label when set (always set by default).
    pub advisory: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            c6: 1.0,
            c3: 1.0,
            cgn: 1.0,
            cp2: 1.0,
            c4: 1.0,
            c2r: 1.0,
            advisory: true,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c6", self.c6),
            ("c3", self.c3),
            ("cgn", self.cgn),
            ("cp2", self.cp2),
            ("c4", self.c4),
            ("c2r", self.c2r),
        ] {
            if v <= 0.0 {
                return Err(Error::RejectedInput(format!(
                    "diagnostic constant {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Norms of a solved state that feed the smallness check.
#[derive(Debug, Clone, Copy)]
pub struct StateNorms {
    /// ‖u‖₁.
    pub m_u: f64,
    /// ‖y‖₁.
    pub m_y: f64,
    /// Extra-regularity surrogate: ‖u‖₁+‖y‖₁ plus gradient-jump seminorms.
    pub m: f64,
}

#[derive(Debug, Clone)]
pub struct SmallnessReport {
    pub alpha_a: f64,
    pub alpha_hat: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub norms: StateNorms,
    pub config: DiagnosticsConfig,
}

impl fmt::Display for SmallnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}smallness condition: alpha_a = {:.6e} {} required margin {:.6e}",
            if self.config.advisory { "ADVISORY " } else { "" },
            self.lhs,
            if self.satisfied { ">" } else { "<=" },
            self.rhs
        )?;
        writeln!(
            f,
            "  inputs: Mu = {:.6e}, My = {:.6e}, M = {:.6e}, alpha_hat = {:.6e}",
            self.norms.m_u, self.norms.m_y, self.norms.m, self.alpha_hat
        )?;
        write!(
            f,
            "  verdict: {} (surrogate embedding constants; not a certificate)",
            if self.satisfied { "satisfied" } else { "NOT satisfied" }
        )
    }
}

/// Evaluates the advisory smallness condition
/// α_a > C6·C3·(γ_ν·Cp2·Cgn·M·M_y/α̂ + M_u + γ_F·M_y/α̂)
/// with α̂ = α₂ and α_a the better of the two coercivity routes
/// (Darcy term, or viscosity through the Poincaré surrogate).
pub fn check_smallness(
    model: &PhysicalModel,
    norms: StateNorms,
    config: &DiagnosticsConfig,
) -> SmallnessReport {
    let nu1 = model.viscosity.nu_lower;
    let alpha_a = f64::max(
        f64::min(model.alpha1(), nu1),
        nu1 / (1.0 + config.cp2 * config.cp2),
    );
    let alpha_hat = model.alpha2();
    let gamma_nu = model.viscosity.lipschitz;
    let gamma_f = model.buoyancy.lipschitz;
    let rhs = config.c6
        * config.c3
        * (gamma_nu * config.cp2 * config.cgn * norms.m * norms.m_y / alpha_hat
            + norms.m_u
            + gamma_f * norms.m_y / alpha_hat);
    SmallnessReport {
        alpha_a,
        alpha_hat,
        lhs: alpha_a,
        rhs,
        satisfied: alpha_a > rhs,
        norms,
        config: *config,
    }
}
