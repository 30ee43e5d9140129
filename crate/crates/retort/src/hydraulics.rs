//! Constitutive soil relations: retention curves, relative permeability,
//! pedotransfer regressions, and bioclogging permeability scaling.

use crate::core::GRAVITY;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HydraulicsError {
    #[error("liquid saturation {s_l} at or below residual {s_lr}")]
    BelowResidual { s_l: f64, s_lr: f64 },
    #[error("texture fractions sum to {sum}, outside [99, 101]")]
    BadTexture { sum: f64 },
    #[error("unknown retention model `{0}`")]
    UnknownModel(String),
}

/// Per-layer hydraulic properties.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialRecord {
    pub name: String,
    /// Absolute permeability, m^2.
    pub k: f64,
    pub porosity: f64,
    /// Air-entry suction, m (negative).
    pub psi_s: f64,
    /// Pore-size distribution index.
    pub b: f64,
    pub s_lr: f64,
    pub s_gr: f64,
    /// Mineral density, kg/m^3.
    pub rho_m: f64,
    pub retention: String,
    /// van Genuchten parameters, deck-supplied when `retention = van_genuchten`.
    pub vg_alpha: f64,
    pub vg_n: f64,
}

impl Default for MaterialRecord {
    fn default() -> Self {
        MaterialRecord {
            name: String::new(),
            k: 1e-12,
            porosity: 0.4,
            psi_s: -0.1,
            b: 4.0,
            s_lr: 0.0,
            s_gr: 0.0,
            rho_m: 2650.0,
            retention: "brooks_corey".into(),
            vg_alpha: 0.0,
            vg_n: 0.0,
        }
    }
}

impl MaterialRecord {
    pub fn effective_saturation(&self, s_l: f64) -> f64 {
        ((s_l - self.s_lr) / (1.0 - self.s_lr)).clamp(0.0, 1.0)
    }
}

/// One retention/relative-permeability parameterization. Implementations are
/// registered by name and selected per material at run time.
pub trait RetentionModel: Send + Sync {
    fn name(&self) -> &'static str;
    /// Suction head psi(S_e), m (non-positive).
    fn suction(&self, se: f64, mat: &MaterialRecord) -> f64;
    /// Effective saturation from suction head (inverse of `suction`).
    fn saturation(&self, psi: f64, mat: &MaterialRecord) -> f64;
    /// Liquid relative permeability k_rL(S_e) in [0, 1].
    fn rel_perm(&self, se: f64, mat: &MaterialRecord) -> f64;
    /// d(theta)/d(psi) per unit porosity*(1-S_Lr), used by the Picard iteration.
    fn moisture_capacity(&self, psi: f64, mat: &MaterialRecord) -> f64;
}

/// Brooks-Corey retention with the Burdine relative permeability.
pub struct BrooksCorey;

impl RetentionModel for BrooksCorey {
    fn name(&self) -> &'static str {
        "brooks_corey"
    }

    fn suction(&self, se: f64, mat: &MaterialRecord) -> f64 {
        let se = se.clamp(1e-12, 1.0);
        mat.psi_s * se.powf(-mat.b)
    }

    fn saturation(&self, psi: f64, mat: &MaterialRecord) -> f64 {
        if psi >= mat.psi_s {
            1.0
        } else {
            (psi / mat.psi_s).powf(-1.0 / mat.b)
        }
    }

    fn rel_perm(&self, se: f64, mat: &MaterialRecord) -> f64 {
        se.clamp(0.0, 1.0).powf(2.0 * mat.b + 3.0)
    }

    fn moisture_capacity(&self, psi: f64, mat: &MaterialRecord) -> f64 {
        if psi >= mat.psi_s {
            0.0
        } else {
            // dSe/dpsi = -1/(b psi_s) (psi/psi_s)^(-1/b - 1)
            -1.0 / (mat.b * mat.psi_s) * (psi / mat.psi_s).powf(-1.0 / mat.b - 1.0)
        }
    }
}

/// van Genuchten retention with the Mualem relative permeability
/// (m = 1 - 1/n). Parameters alpha, n come from the deck, not from (psi_s, b).
pub struct VanGenuchten;

impl VanGenuchten {
    fn m(mat: &MaterialRecord) -> f64 {
        1.0 - 1.0 / mat.vg_n
    }
}

impl RetentionModel for VanGenuchten {
    fn name(&self) -> &'static str {
        "van_genuchten"
    }

    fn suction(&self, se: f64, mat: &MaterialRecord) -> f64 {
        let se = se.clamp(1e-12, 1.0);
        if se >= 1.0 {
            return 0.0;
        }
        let m = Self::m(mat);
        -(se.powf(-1.0 / m) - 1.0).powf(1.0 / mat.vg_n) / mat.vg_alpha
    }

    fn saturation(&self, psi: f64, mat: &MaterialRecord) -> f64 {
        if psi >= 0.0 {
            return 1.0;
        }
        let m = Self::m(mat);
        (1.0 + (mat.vg_alpha * psi.abs()).powf(mat.vg_n)).powf(-m)
    }

    fn rel_perm(&self, se: f64, mat: &MaterialRecord) -> f64 {
        let se = se.clamp(0.0, 1.0);
        if se >= 1.0 {
            return 1.0;
        }
        let m = Self::m(mat);
        let inner = 1.0 - (1.0 - se.powf(1.0 / m)).powf(m);
        se.sqrt() * inner * inner
    }

    fn moisture_capacity(&self, psi: f64, mat: &MaterialRecord) -> f64 {
        if psi >= 0.0 {
            return 0.0;
        }
        let m = Self::m(mat);
        let n = mat.vg_n;
        let a = mat.vg_alpha;
        let ap = (a * psi.abs()).powf(n);
        m * n * a * ap / (a * psi.abs()) * (1.0 + ap).powf(-m - 1.0)
    }
}

/// Name-keyed registry of retention models.
pub struct RetentionRegistry {
    models: Vec<Box<dyn RetentionModel>>,
}

impl Default for RetentionRegistry {
    fn default() -> Self {
        RetentionRegistry {
            models: vec![Box::new(BrooksCorey), Box::new(VanGenuchten)],
        }
    }
}

impl RetentionRegistry {
    pub fn get(&self, name: &str) -> Result<&dyn RetentionModel, HydraulicsError> {
        self.models
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| HydraulicsError::UnknownModel(name.to_string()))
    }
}

/// Suction head psi(S_L), m. Errors below residual saturation.
pub fn retention_suction(
    s_l: f64,
    mat: &MaterialRecord,
    model: &dyn RetentionModel,
) -> Result<f64, HydraulicsError> {
    if s_l <= mat.s_lr {
        return Err(HydraulicsError::BelowResidual { s_l, s_lr: mat.s_lr });
    }
    Ok(model.suction(mat.effective_saturation(s_l), mat))
}

/// Liquid relative permeability; biomass affects the absolute permeability
/// (see `clogged_permeability`), not k_rL, so only S_L enters here.
pub fn relative_permeability(s_l: f64, _s_b: f64, mat: &MaterialRecord, model: &dyn RetentionModel) -> f64 {
    model.rel_perm(mat.effective_saturation(s_l), mat)
}

/// Bioclogging: k' = k (1 - S_B)^2.
pub fn clogged_permeability(k: f64, s_b: f64) -> f64 {
    let open = (1.0 - s_b).max(0.0);
    k * open * open
}

/// Cosby et al. (1984) univariate regressions on sand/clay percentages.
/// Returns (porosity, b, psi_s in m, intrinsic permeability in m^2).
pub fn cosby_pedotransfer(sand: f64, silt: f64, clay: f64) -> Result<(f64, f64, f64, f64), HydraulicsError> {
    let sum = sand + silt + clay;
    if !(99.0..=101.0).contains(&sum) || sand < 0.0 || silt < 0.0 || clay < 0.0 {
        return Err(HydraulicsError::BadTexture { sum });
    }
    let porosity = (48.9 - 0.126 * sand) / 100.0;
    let b = 2.91 + 0.159 * clay;
    // log10(|psi_s| in cm) and log10(K_s in inches/hour)
    let psi_s = -10f64.powf(1.88 - 0.0131 * sand) * 0.01;
    let ks_m_per_s = 10f64.powf(-0.884 + 0.0153 * sand) * 0.0254 / 3600.0;
    // K_s -> intrinsic permeability via k = K_s mu / (rho g) at 20 C water
    let k = ks_m_per_s * 1e-3 / (1000.0 * GRAVITY);
    Ok((porosity, b, psi_s, k))
}
