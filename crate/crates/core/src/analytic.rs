//! Closed-form fields: a small named registry for configuration files, and a
//! smooth manufactured solution with the source terms that make it an exact
//! solution of the coupled system (used by the convergence study).

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::Error;
use crate::model::{PairFn, PhysicalModel};
use crate::space::Discretization;
use crate::Result;

/// Names accepted by [`named_pair_field`], shown in rejection messages.
pub const FIELD_NAMES: [&str; 7] = [
    "zero",
    "constant:a,b",
    "linear-x",
    "vortex",
    "bump:a,b",
    "mms-velocity",
    "mms-scalars",
];

/// Looks up a 2-component analytic field by name. Parametrized names carry
/// their constants after a colon, e.g. `constant:0.5,-1`.
pub fn named_pair_field(spec: &str) -> Result<PairFn> {
    let spec = spec.trim();
    let (name, params) = match spec.split_once(':') {
        Some((n, p)) => (n.trim(), Some(p.trim())),
        None => (spec, None),
    };
    let two_params = |p: Option<&str>| -> Result<[f64; 2]> {
        let raw = p.ok_or_else(|| {
            Error::RejectedInput(format!("field \"{name}\" needs two parameters, e.g. {name}:1,2"))
        })?;
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::RejectedInput(format!(
                "field \"{name}\" needs exactly two comma-separated parameters, got \"{raw}\""
            )));
        }
        let a = parts[0].parse::<f64>();
        let b = parts[1].parse::<f64>();
        match (a, b) {
            (Ok(a), Ok(b)) => Ok([a, b]),
            _ => Err(Error::RejectedInput(format!(
                "field \"{name}\": parameters must be numbers, got \"{raw}\""
            ))),
        }
    };
    match name {
        "zero" => Ok(Arc::new(|_| [0.0, 0.0])),
        "constant" => {
            let c = two_params(params)?;
            Ok(Arc::new(move |_| c))
        }
        "linear-x" => Ok(Arc::new(|x| [x[0], -x[0]])),
        "vortex" => Ok(Arc::new(|x| [x[1] - 0.5, 0.5 - x[0]])),
        "bump" => {
            let c = two_params(params)?;
            Ok(Arc::new(move |x| {
                let s = 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
                [c[0] * s, c[1] * s]
            }))
        }
        "mms-velocity" => Ok(Arc::new(mms_velocity)),
        "mms-scalars" => Ok(Arc::new(mms_scalars)),
        _ => Err(Error::RejectedInput(format!(
            "unknown analytic field \"{spec}\"; available: {}",
            FIELD_NAMES.join(", ")
        ))),
    }
}

/// Samples a vector field at cell centroids into the per-cell control layout.
pub fn sample_control(d: &Discretization, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut vals = vec![0.0; d.control.dof_count];
    for e in 0..d.mesh.n_triangles() {
        let v = f(d.mesh.centroid(e));
        vals[d.control.dof(e, 0)] = v[0];
        vals[d.control.dof(e, 1)] = v[1];
    }
    vals
}

/// Divergence-free velocity, zero on the boundary of the unit square.
pub fn mms_velocity(x: [f64; 2]) -> [f64; 2] {
    let sx = (PI * x[0]).sin();
    let sy = (PI * x[1]).sin();
    [
        sx * sx * (2.0 * PI * x[1]).sin(),
        -(2.0 * PI * x[0]).sin() * sy * sy,
    ]
}

/// Row i is ∇uᵢ = [∂ₓuᵢ, ∂ᵧuᵢ].
pub fn mms_velocity_gradient(x: [f64; 2]) -> [[f64; 2]; 2] {
    let sx = (PI * x[0]).sin();
    let sy = (PI * x[1]).sin();
    let s2x = (2.0 * PI * x[0]).sin();
    let s2y = (2.0 * PI * x[1]).sin();
    let c2x = (2.0 * PI * x[0]).cos();
    let c2y = (2.0 * PI * x[1]).cos();
    [
        [PI * s2x * s2y, 2.0 * PI * sx * sx * c2y],
        [-2.0 * PI * c2x * sy * sy, -PI * s2x * s2y],
    ]
}

pub fn mms_velocity_laplacian(x: [f64; 2]) -> [f64; 2] {
    let sx = (PI * x[0]).sin();
    let sy = (PI * x[1]).sin();
    let s2x = (2.0 * PI * x[0]).sin();
    let s2y = (2.0 * PI * x[1]).sin();
    let c2x = (2.0 * PI * x[0]).cos();
    let c2y = (2.0 * PI * x[1]).cos();
    let pi2 = PI * PI;
    [
        2.0 * pi2 * c2x * s2y - 4.0 * pi2 * sx * sx * s2y,
        4.0 * pi2 * s2x * sy * sy - 2.0 * pi2 * s2x * c2y,
    ]
}

/// Zero-mean pressure.
pub fn mms_pressure(x: [f64; 2]) -> f64 {
    (PI * x[0]).cos() * (PI * x[1]).sin()
}

pub fn mms_pressure_gradient(x: [f64; 2]) -> [f64; 2] {
    [
        -PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
        PI * (PI * x[0]).cos() * (PI * x[1]).cos(),
    ]
}

/// Scalar pair (temperature, concentration).
pub fn mms_scalars(x: [f64; 2]) -> [f64; 2] {
    [
        (PI * x[0]).cos() * (PI * x[1]).cos(),
        (PI * x[0]).sin() * (PI * x[1]).sin(),
    ]
}

/// Row k is ∇yₖ.
pub fn mms_scalar_gradients(x: [f64; 2]) -> [[f64; 2]; 2] {
    let sx = (PI * x[0]).sin();
    let cx = (PI * x[0]).cos();
    let sy = (PI * x[1]).sin();
    let cy = (PI * x[1]).cos();
    [[-PI * sx * cy, -PI * cx * sy], [PI * cx * sy, PI * sx * cy]]
}

pub fn mms_scalar_laplacians(x: [f64; 2]) -> [f64; 2] {
    let y = mms_scalars(x);
    [-2.0 * PI * PI * y[0], -2.0 * PI * PI * y[1]]
}

/// Builds the momentum and scalar sources that make the manufactured fields
/// an exact solution of the model's equations.
pub fn mms_sources(model: &PhysicalModel) -> (PairFn, PairFn) {
    let kinv = model.kinv;
    let diffusion = model.diffusion;
    let nu = model.viscosity.nu.clone();
    let nu_t = model.viscosity.nu_t.clone();
    let buoyancy = model.buoyancy.value.clone();

    let f_u: PairFn = Arc::new(move |x| {
        let u = mms_velocity(x);
        let gu = mms_velocity_gradient(x);
        let lap = mms_velocity_laplacian(x);
        let y = mms_scalars(x);
        let gt = mms_scalar_gradients(x)[0];
        let gp = mms_pressure_gradient(x);
        let f = buoyancy(y);
        let t = y[0];
        let mut out = [0.0; 2];
        for i in 0..2 {
            let darcy = kinv[i][0] * u[0] + kinv[i][1] * u[1];
            let convection = u[0] * gu[i][0] + u[1] * gu[i][1];
            let viscous = nu_t(t) * (gt[0] * gu[i][0] + gt[1] * gu[i][1]) + nu(t) * lap[i];
            out[i] = darcy + convection - viscous + gp[i] - f[i];
        }
        out
    });

    let f_y: PairFn = Arc::new(move |x| {
        let u = mms_velocity(x);
        let gy = mms_scalar_gradients(x);
        let lap = mms_scalar_laplacians(x);
        let mut out = [0.0; 2];
        for k in 0..2 {
            let diffusive = diffusion[k][0] * lap[0] + diffusion[k][1] * lap[1];
            let convective = u[0] * gy[k][0] + u[1] * gy[k][1];
            out[k] = -diffusive + convective;
        }
        out
    });

    (f_u, f_y)
}

/// Installs the manufactured boundary data and sources on a model, leaving
/// its physical parameters untouched.
pub fn apply_manufactured_problem(model: &mut PhysicalModel) {
    let (f_u, f_y) = mms_sources(model);
    model.ydata = Arc::new(mms_scalars);
    model.f_u = Some(f_u);
    model.f_y = Some(f_y);
}
