//! Inter-element species movement: upwinded advection, saturation-scaled
//! diffusion, and chemotactic drift, explicit with CFL sub-stepping.

use crate::core::GridSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport needed more than {0} sub-steps; velocities are pathological")]
    CflUnderflow(usize),
}

const MAX_SUBSTEPS: usize = 1_000_000;

/// Shared kinematics for one transported species over one step.
pub struct TransportCtx<'a> {
    pub grid: &'a GridSpec,
    pub porosity: &'a [f64],
    pub s_l: &'a [f64],
    /// Interface Darcy velocity, m/s, positive from element i to i+1 (len n-1).
    pub v: &'a [f64],
    /// Volumetric water outflow from the last element, m^3/s (free drainage).
    pub bottom_out: f64,
    /// Courant cap per sub-step.
    pub cfl: f64,
}

/// Advect/diffuse one species' mass field (kg per element).
///
/// `eps` scales the advective velocity (detachment efficiency for BIO, 1 for
/// solutes); `drift` is an optional extra interface velocity (chemotaxis);
/// `diffusivity` is the molecular value, scaled by phi*S_L at interfaces.
/// Returns the mass leaving through the bottom (free drainage), kg.
pub fn advect_diffuse(
    ctx: &TransportCtx,
    mass: &mut [f64],
    diffusivity: f64,
    eps: f64,
    drift: Option<&[f64]>,
    dt: f64,
) -> Result<f64, TransportError> {
    let n = ctx.grid.n();
    if n == 0 {
        return Ok(0.0);
    }
    let start = ctx.grid.soil_start();
    let mut remaining = dt;
    let mut outflux = 0.0;
    let mut steps = 0usize;

    // water volume per element, m^3 (liquid carrier)
    let wvol: Vec<f64> = (0..n)
        .map(|i| ctx.porosity[i] * ctx.s_l[i] * ctx.grid.volume[i])
        .collect();

    // interface velocity and diffusive conductance, both in m^3/s terms
    let mut q = vec![0.0; n.saturating_sub(1)]; // advective volumetric rate
    let mut g = vec![0.0; n.saturating_sub(1)]; // diffusive conductance
    for i in start..n.saturating_sub(1) {
        let a = ctx.grid.area[i];
        let mut vel = eps * ctx.v[i];
        if let Some(d) = drift {
            vel += d[i];
        }
        q[i] = vel * a;
        let dz = ctx.grid.dz(i);
        // effective diffusivity phi S_L D, averaged across the interface
        let de = 0.5
            * (ctx.porosity[i] * ctx.s_l[i] + ctx.porosity[i + 1] * ctx.s_l[i + 1])
            * diffusivity;
        g[i] = de * a / dz;
    }
    let q_bot = if ctx.bottom_out > 0.0 { ctx.bottom_out } else { 0.0 };

    while remaining > 0.0 {
        // stable sub-step: each element may not export more than cfl of its water
        let mut dt_sub = remaining;
        for i in start..n {
            let mut out = 0.0;
            if i > start {
                out += (-q[i - 1]).max(0.0) + g[i - 1];
            }
            if i + 1 < n {
                out += q[i].max(0.0) + g[i];
            }
            if i == n - 1 {
                out += q_bot;
            }
            if out > 0.0 && wvol[i] > 0.0 {
                dt_sub = dt_sub.min(ctx.cfl * wvol[i] / out);
            }
        }
        if dt_sub <= 0.0 || !dt_sub.is_finite() {
            return Err(TransportError::CflUnderflow(MAX_SUBSTEPS));
        }
        steps += 1;
        if steps > MAX_SUBSTEPS {
            return Err(TransportError::CflUnderflow(MAX_SUBSTEPS));
        }

        // concentrations in kg per m^3 of liquid
        let conc: Vec<f64> = (0..n)
            .map(|i| if wvol[i] > 0.0 { mass[i] / wvol[i] } else { 0.0 })
            .collect();
        for i in start..n.saturating_sub(1) {
            let c_up = if q[i] >= 0.0 { conc[i] } else { conc[i + 1] };
            let flux = (q[i] * c_up + g[i] * (conc[i] - conc[i + 1])) * dt_sub;
            mass[i] -= flux;
            mass[i + 1] += flux;
        }
        if q_bot > 0.0 {
            let flux = q_bot * conc[n - 1] * dt_sub;
            mass[n - 1] -= flux;
            outflux += flux;
        }
        for m in mass.iter_mut() {
            if *m < 0.0 && *m > -1e-300 {
                *m = 0.0;
            }
        }
        remaining -= dt_sub;
        if remaining < dt * 1e-15 {
            break;
        }
    }
    Ok(outflux)
}

/// Chemotactic interface drift velocities for one BIO species:
/// v_i = sum_c D_c (X_c[i+1] - X_c[i])/dz - sum_r D_r (X_r[i+1] - X_r[i])/dz,
/// with X the dimensionless liquid mass fraction of the cue species.
pub fn chemotaxis_drift(
    grid: &GridSpec,
    porosity: &[f64],
    s_l: &[f64],
    rho_l: f64,
    cues: &[(Vec<f64>, f64, bool)], // (cue species mass kg, coefficient, attract?)
) -> Vec<f64> {
    let n = grid.n();
    let mut drift = vec![0.0; n.saturating_sub(1)];
    for (mass, coeff, attract) in cues {
        if *coeff == 0.0 {
            continue;
        }
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let wv = porosity[i] * s_l[i] * grid.volume[i];
                if wv > 0.0 {
                    mass[i] / (wv * rho_l)
                } else {
                    0.0
                }
            })
            .collect();
        let sign = if *attract { 1.0 } else { -1.0 };
        for i in grid.soil_start()..n - 1 {
            drift[i] += sign * coeff * (x[i + 1] - x[i]) / grid.dz(i);
        }
    }
    drift
}
