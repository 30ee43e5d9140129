//! Transient variably-saturated liquid flow on the 1-D chain: backward-Euler
//! in time with modified-Picard iteration on the mixed saturation-pressure
//! form, mass-conservative storage update, harmonic interface permeability,
//! fully upwinded relative permeability, and bioclogging scaling.

use crate::core::{GridSpec, GRAVITY};
use crate::hydraulics::{clogged_permeability, MaterialRecord, RetentionModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow solver failed to converge at dt = {dt:.3e} s")]
    ConvergenceFailure { dt: f64 },
}

/// Specific storage of saturated cells, 1/Pa; converted to head units below.
pub const SPECIFIC_STORAGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSettings {
    pub picard_max: usize,
    /// Convergence on head change, m.
    pub picard_tol: f64,
    /// Unit-gradient free drainage at the bottom element.
    pub free_drainage: bool,
}

/// Per-element water sources for one step, m^3/s (positive in).
pub type Sources = Vec<f64>;

#[derive(Debug, Clone)]
pub struct FlowResult {
    /// Interface Darcy velocities, m/s, positive from i to i+1 (len n-1).
    pub v: Vec<f64>,
    /// Volumetric free-drainage rate out of the bottom, m^3/s.
    pub bottom_out: f64,
    /// Net source volume actually applied this step, m^3 (positive in).
    pub source_volume: f64,
}

/// Head-based flow state kept across steps (pressure persists for saturated
/// cells where S_L alone cannot represent it).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// Pressure head, m.
    pub h: Vec<f64>,
}

impl FlowField {
    /// Initialize heads from saturations (unsaturated retention inverse).
    pub fn from_saturation(
        s_l: &[f64],
        grid: &GridSpec,
        mats: &[MaterialRecord],
        models: &[&dyn RetentionModel],
    ) -> Self {
        let h = (0..grid.n())
            .map(|i| {
                let mat = &mats[grid.material[i]];
                let model = models[grid.material[i]];
                let se = mat.effective_saturation(s_l[i]);
                model.suction(se.max(1e-9), mat)
            })
            .collect();
        FlowField { h }
    }
}

struct CellCtx<'a> {
    mat: &'a MaterialRecord,
    model: &'a dyn RetentionModel,
    /// Max liquid saturation available given residual gas and biomass.
    cap: f64,
    /// Head at which the cell saturates to `cap`.
    h_cap: f64,
}

fn cell_contexts<'a>(
    grid: &GridSpec,
    mats: &'a [MaterialRecord],
    models: &'a [&'a dyn RetentionModel],
    s_b: &[f64],
) -> Vec<CellCtx<'a>> {
    (0..grid.n())
        .map(|i| {
            let mat = &mats[grid.material[i]];
            let model = models[grid.material[i]];
            let cap = (1.0 - mat.s_gr - s_b[i]).clamp(1e-6, 1.0);
            let se_cap = mat.effective_saturation(cap);
            let h_cap = model.suction(se_cap.max(1e-9), mat);
            CellCtx { mat, model, cap, h_cap }
        })
        .collect()
}

/// theta(h) under the saturation cap, with specific storage beyond it.
fn theta_of_h(h: f64, cell: &CellCtx, ss_h: f64) -> f64 {
    if h >= cell.h_cap {
        cell.mat.porosity * cell.cap + ss_h * (h - cell.h_cap)
    } else {
        let se = cell.model.saturation(h, cell.mat).min(cell.mat.effective_saturation(cell.cap));
        cell.mat.porosity * (cell.mat.s_lr + se * (1.0 - cell.mat.s_lr))
    }
}

fn capacity_of_h(h: f64, cell: &CellCtx, ss_h: f64) -> f64 {
    if h >= cell.h_cap {
        ss_h
    } else {
        cell.mat.porosity * (1.0 - cell.mat.s_lr) * cell.model.moisture_capacity(h, cell.mat)
    }
}

/// Signed Darcy velocity across the interface between adjacent elements,
/// positive from `i` to `i+1`. Harmonic-mean clogged permeability, relative
/// permeability upwinded from the higher-total-head side.
pub fn darcy_flux(
    i: usize,
    grid: &GridSpec,
    h: &[f64],
    s_l: &[f64],
    s_b: &[f64],
    mats: &[MaterialRecord],
    models: &[&dyn RetentionModel],
    mu_l: f64,
    rho_l: f64,
) -> f64 {
    let j = i + 1;
    let ki = clogged_permeability(mats[grid.material[i]].k, s_b[i]);
    let kj = clogged_permeability(mats[grid.material[j]].k, s_b[j]);
    if ki + kj == 0.0 {
        return 0.0;
    }
    let kh = 2.0 * ki * kj / (ki + kj);
    let hi = h[i] + grid.z[i];
    let hj = h[j] + grid.z[j];
    let up = if hi >= hj { i } else { j };
    let mat_up = &mats[grid.material[up]];
    let kr = models[grid.material[up]].rel_perm(mat_up.effective_saturation(s_l[up]), mat_up);
    kh * kr * rho_l * GRAVITY / mu_l * (hi - hj) / grid.dz(i)
}

/// Advance liquid flow by `dt`. Updates `s_l` and `field.h`, returns interface
/// velocities and boundary volumes. Fails (caller halves dt) on divergence.
#[allow(clippy::too_many_arguments)]
pub fn step_liquid(
    s_l: &mut [f64],
    s_b: &[f64],
    field: &mut FlowField,
    grid: &GridSpec,
    mats: &[MaterialRecord],
    models: &[&dyn RetentionModel],
    sources: &Sources,
    settings: &FlowSettings,
    mu_l: f64,
    rho_l: f64,
    dt: f64,
) -> Result<FlowResult, FlowError> {
    let n = grid.n();
    let start = grid.soil_start();
    let ss_h = SPECIFIC_STORAGE * rho_l * GRAVITY; // 1/m
    let cells = cell_contexts(grid, mats, models, s_b);

    let theta_n: Vec<f64> = (start..n)
        .map(|i| {
            // current storage from S_L, plus pressure storage when saturated
            let extra = if field.h[i] > cells[i].h_cap && s_l[i] >= cells[i].cap - 1e-12 {
                ss_h * (field.h[i] - cells[i].h_cap)
            } else {
                0.0
            };
            cells[i].mat.porosity * s_l[i] + extra
        })
        .collect();

    let m = n - start;
    if m == 0 {
        return Ok(FlowResult { v: Vec::new(), bottom_out: 0.0, source_volume: 0.0 });
    }
    let mut hm: Vec<f64> = field.h[start..].to_vec();
    let mut converged = false;

    let mut a = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut c = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut w = vec![0.0; m.saturating_sub(1)];

    for _iter in 0..settings.picard_max {
        // interface conductances W = K A / dz with upwinded k_r at iterate hm
        for ii in 0..m - 1 {
            let i = start + ii;
            let j = i + 1;
            let ki = clogged_permeability(cells[i].mat.k, s_b[i]);
            let kj = clogged_permeability(cells[j].mat.k, s_b[j]);
            let kh = if ki + kj > 0.0 { 2.0 * ki * kj / (ki + kj) } else { 0.0 };
            let hi = hm[ii] + grid.z[i];
            let hj = hm[ii + 1] + grid.z[j];
            let (up, up_ii) = if hi >= hj { (i, ii) } else { (j, ii + 1) };
            let se_up = saturation_at(hm[up_ii], &cells[up]);
            let kr = cells[up].model.rel_perm(se_up, cells[up].mat);
            w[ii] = kh * kr * rho_l * GRAVITY / mu_l * grid.area[i] / grid.dz(i);
        }

        for ii in 0..m {
            let i = start + ii;
            let cap_i = capacity_of_h(hm[ii], &cells[i], ss_h).max(ss_h);
            let theta_m = theta_of_h(hm[ii], &cells[i], ss_h);
            let vol = grid.volume[i];
            d[ii] = cap_i * vol / dt;
            a[ii] = 0.0;
            c[ii] = 0.0;
            rhs[ii] = cap_i * vol / dt * hm[ii] - vol * (theta_m - theta_n[ii]) / dt
                + sources[i];
            if ii > 0 {
                d[ii] += w[ii - 1];
                a[ii] = -w[ii - 1];
                rhs[ii] += w[ii - 1] * (grid.z[i - 1] - grid.z[i]);
            }
            if ii + 1 < m {
                d[ii] += w[ii];
                c[ii] = -w[ii];
                rhs[ii] += w[ii] * (grid.z[i + 1] - grid.z[i]);
            }
        }
        if settings.free_drainage {
            let i = n - 1;
            let ii = m - 1;
            let k = clogged_permeability(cells[i].mat.k, s_b[i]);
            let se = saturation_at(hm[ii], &cells[i]);
            let kr = cells[i].model.rel_perm(se, cells[i].mat);
            let q = k * kr * rho_l * GRAVITY / mu_l * grid.area.last().copied().unwrap_or(1.0);
            rhs[ii] -= q;
        }

        // Thomas solve
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        cp[0] = c[0] / d[0];
        dp[0] = rhs[0] / d[0];
        for ii in 1..m {
            let denom = d[ii] - a[ii] * cp[ii - 1];
            cp[ii] = c[ii] / denom;
            dp[ii] = (rhs[ii] - a[ii] * dp[ii - 1]) / denom;
        }
        let mut hn = vec![0.0; m];
        hn[m - 1] = dp[m - 1];
        for ii in (0..m - 1).rev() {
            hn[ii] = dp[ii] - cp[ii] * hn[ii + 1];
        }

        let mut dh_max = 0.0f64;
        for ii in 0..m {
            let mut dh = hn[ii] - hm[ii];
            // damp very large pressure excursions to keep Picard stable
            if dh.abs() > 10.0 {
                dh = 10.0 * dh.signum() + 0.5 * (dh - 10.0 * dh.signum());
            }
            hm[ii] += dh;
            dh_max = dh_max.max(dh.abs());
        }
        if !dh_max.is_finite() {
            return Err(FlowError::ConvergenceFailure { dt });
        }
        if dh_max < settings.picard_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FlowError::ConvergenceFailure { dt });
    }

    // conservative storage update from converged fluxes
    let mut v = vec![0.0; n.saturating_sub(1)];
    for ii in 0..m - 1 {
        let i = start + ii;
        let j = i + 1;
        let ki = clogged_permeability(cells[i].mat.k, s_b[i]);
        let kj = clogged_permeability(cells[j].mat.k, s_b[j]);
        let kh = if ki + kj > 0.0 { 2.0 * ki * kj / (ki + kj) } else { 0.0 };
        let hi = hm[ii] + grid.z[i];
        let hj = hm[ii + 1] + grid.z[j];
        let (up, up_ii) = if hi >= hj { (i, ii) } else { (j, ii + 1) };
        let se_up = saturation_at(hm[up_ii], &cells[up]);
        let kr = cells[up].model.rel_perm(se_up, cells[up].mat);
        v[i] = kh * kr * rho_l * GRAVITY / mu_l * (hi - hj) / grid.dz(i);
    }
    let bottom_out = if settings.free_drainage {
        let i = n - 1;
        let k = clogged_permeability(cells[i].mat.k, s_b[i]);
        let se = saturation_at(hm[m - 1], &cells[i]);
        let kr = cells[i].model.rel_perm(se, cells[i].mat);
        k * kr * rho_l * GRAVITY / mu_l * grid.area.last().copied().unwrap_or(1.0)
    } else {
        0.0
    };

    let mut source_volume = 0.0;
    for ii in 0..m {
        let i = start + ii;
        let vol = grid.volume[i];
        let mut dtheta = 0.0;
        if ii > 0 {
            dtheta += v[i - 1] * grid.area[i - 1] * dt / vol;
        }
        if ii + 1 < m {
            dtheta -= v[i] * grid.area[i] * dt / vol;
        }
        if ii == m - 1 {
            dtheta -= bottom_out * dt / vol;
        }
        dtheta += sources[i] * dt / vol;
        source_volume += sources[i] * dt;

        let theta_new = theta_n[ii] + dtheta;
        let theta_cap = cells[i].mat.porosity * cells[i].cap;
        if theta_new > theta_cap {
            s_l[i] = cells[i].cap;
            field.h[i] = cells[i].h_cap + (theta_new - theta_cap) / ss_h;
        } else {
            let s = (theta_new / cells[i].mat.porosity).max(cells[i].mat.s_lr + 1e-9);
            s_l[i] = s;
            let se = cells[i].mat.effective_saturation(s);
            field.h[i] = cells[i].model.suction(se.max(1e-9), cells[i].mat);
        }
    }

    Ok(FlowResult { v, bottom_out, source_volume })
}

fn saturation_at(h: f64, cell: &CellCtx) -> f64 {
    if h >= cell.h_cap {
        cell.mat.effective_saturation(cell.cap)
    } else {
        cell.model
            .saturation(h, cell.mat)
            .min(cell.mat.effective_saturation(cell.cap))
    }
}

/// Move pore volume between liquid, biomass, and gas after a kinetics step:
/// growth takes water at fraction f_L of new biomass volume (the rest from
/// gas); lysis reverses it. Returns the number of clipped exchanges.
pub fn apply_bio_exchange(
    s_l: &mut [f64],
    s_g: &mut [f64],
    s_b: &mut [f64],
    d_s_b: &[f64],
    d_s_l: &[f64],
) -> usize {
    let mut clipped = 0;
    for i in 0..s_l.len() {
        let mut db = d_s_b[i];
        let mut dl = d_s_l[i];
        if db == 0.0 && dl == 0.0 {
            continue;
        }
        // liquid cannot go negative: scale the exchange down if needed
        if s_l[i] + dl < 0.0 {
            let scale = if dl < 0.0 { (-s_l[i] / dl).clamp(0.0, 1.0) } else { 1.0 };
            db *= scale;
            dl *= scale;
            clipped += 1;
        }
        // gas absorbs the remainder
        let dg = -(db + dl);
        if s_g[i] + dg < 0.0 {
            let scale = if dg < 0.0 { (-s_g[i] / dg).clamp(0.0, 1.0) } else { 1.0 };
            db *= scale;
            dl *= scale;
            clipped += 1;
        }
        s_b[i] += db;
        s_l[i] += dl;
        s_g[i] = 1.0 - s_l[i] - s_b[i];
    }
    clipped
}
