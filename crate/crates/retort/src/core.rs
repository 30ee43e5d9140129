//! Discretized domain, evolving state, and conserved-quantity accounting.

use std::collections::BTreeMap;
use thiserror::Error;

pub const GRAVITY: f64 = 9.81; // m/s^2

/// Phases a species (or bulk mass) can live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Liquid,
    Gas,
    Bio,
    Mineral,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Liquid => "L",
            Phase::Gas => "G",
            Phase::Bio => "B",
            Phase::Mineral => "M",
        }
    }
}

/// 1-D vertical chain (or a single node for 0-D). Element 0 is the top.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Element volumes, m^3.
    pub volume: Vec<f64>,
    /// Interface area between adjacent elements, m^2 (len = n-1; empty for 0-D).
    pub area: Vec<f64>,
    /// Element center elevation, m (monotone decreasing down the chain).
    pub z: Vec<f64>,
    /// Material index per element.
    pub material: Vec<usize>,
    /// Element 0 acts as a fixed gas reservoir, excluded from soil audits.
    pub atmosphere: bool,
}

impl GridSpec {
    pub fn n(&self) -> usize {
        self.volume.len()
    }

    /// Uniform vertical column: `n` elements of height `dz`, cross-section `area`.
    pub fn column(n: usize, dz: f64, area: f64, material: usize) -> Self {
        let z = (0..n).map(|i| -((i as f64) + 0.5) * dz).collect();
        GridSpec {
            volume: vec![area * dz; n],
            area: vec![area; n.saturating_sub(1)],
            z,
            material: vec![material; n],
            atmosphere: false,
        }
    }

    /// Center-to-center distance between adjacent elements i and i+1, m.
    pub fn dz(&self, i: usize) -> f64 {
        (self.z[i] - self.z[i + 1]).abs()
    }

    /// First element index that belongs to the soil domain (skips atmosphere).
    pub fn soil_start(&self) -> usize {
        usize::from(self.atmosphere)
    }
}

/// Evolving per-element state plus per-(species, element) mass.
///
/// Species masses are stored in kg; concentration views are derived from the
/// liquid volume. Phase densities and viscosity are constant per run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub s_l: Vec<f64>,
    pub s_g: Vec<f64>,
    pub s_b: Vec<f64>,
    /// Liquid pressure, Pa (relative to atmospheric).
    pub p_l: Vec<f64>,
    /// Temperature, K.
    pub temp: Vec<f64>,
    /// mass[species][element], kg.
    pub mass: Vec<Vec<f64>>,
    pub rho_l: f64,
    pub rho_g: f64,
    pub mu_l: f64,
}

impl GridState {
    pub fn new(n: usize, n_species: usize) -> Self {
        GridState {
            s_l: vec![0.0; n],
            s_g: vec![1.0; n],
            s_b: vec![0.0; n],
            p_l: vec![0.0; n],
            temp: vec![293.15; n],
            mass: vec![vec![0.0; n]; n_species],
            rho_l: 1000.0,
            rho_g: 1.2,
            mu_l: 1e-3,
        }
    }

    /// Liquid volume of element `i` in liters.
    pub fn liquid_liters(&self, grid: &GridSpec, porosity: &[f64], i: usize) -> f64 {
        porosity[i] * self.s_l[i] * grid.volume[i] * 1000.0
    }

    /// Check the pore-space partition in every element.
    pub fn assert_partition(&self) {
        for i in 0..self.s_l.len() {
            let sum = self.s_l[i] + self.s_g[i] + self.s_b[i];
            debug_assert!(
                (sum - 1.0).abs() < 1e-9,
                "saturation partition violated at element {i}: {sum}"
            );
        }
    }
}

/// Mass in kg for one species given its concentration unit.
/// mol/L species carry a molar mass in kg/mol; mg/L species convert directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcUnit {
    MolPerL,
    MgPerL,
}

impl ConcUnit {
    /// kg of species per (concentration unit × liter).
    pub fn kg_per_conc_liter(self, molar_mass: f64) -> f64 {
        match self {
            ConcUnit::MolPerL => molar_mass,
            ConcUnit::MgPerL => 1e-6,
        }
    }
}

pub fn conc_to_mass(conc: f64, unit: ConcUnit, molar_mass: f64, liters: f64) -> f64 {
    conc * unit.kg_per_conc_liter(molar_mass) * liters
}

pub fn mass_to_conc(mass: f64, unit: ConcUnit, molar_mass: f64, liters: f64) -> f64 {
    let f = unit.kg_per_conc_liter(molar_mass);
    if f <= 0.0 || liters <= 0.0 {
        0.0
    } else {
        mass / (f * liters)
    }
}

/// Running account per species: stored(t) - stored(0) must equal
/// influx - outflux + production - destruction within tolerance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesAccount {
    pub stored0: f64,
    pub influx: f64,
    pub outflux: f64,
    pub production: f64,
    pub destruction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MassLedger {
    /// Keyed by species name; "water" tracks the bulk liquid phase.
    pub accounts: BTreeMap<String, SpeciesAccount>,
    /// Exchange requests clipped for lack of available phase volume.
    pub clip_events: usize,
}

#[derive(Debug, Error)]
#[error("mass audit failed: species `{species}` closure error {error:.3e} exceeds {tol:.1e}")]
pub struct AuditFailure {
    pub species: String,
    pub error: f64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    /// (species, relative closure error), worst first.
    pub entries: Vec<(String, f64)>,
    pub tol: f64,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|(_, e)| *e <= self.tol)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries.first()
    }
}

impl MassLedger {
    pub fn account(&mut self, species: &str) -> &mut SpeciesAccount {
        self.accounts.entry(species.to_string()).or_default()
    }

    pub fn open(&mut self, species: &str, stored: f64) {
        self.account(species).stored0 = stored;
    }

    /// Relative closure error per species against current stored masses.
    pub fn audit(&self, stored_now: &BTreeMap<String, f64>, tol_rel: f64) -> AuditReport {
        let mut entries: Vec<(String, f64)> = Vec::new();
        for (name, acc) in &self.accounts {
            let stored = stored_now.get(name).copied().unwrap_or(0.0);
            let expected =
                acc.stored0 + acc.influx - acc.outflux + acc.production - acc.destruction;
            let scale = acc
                .stored0
                .abs()
                .max(stored.abs())
                .max(acc.influx + acc.production)
                .max(1e-30);
            entries.push((name.clone(), (stored - expected).abs() / scale));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        AuditReport { entries, tol: tol_rel }
    }
}

/// Sum of phase mass over soil elements: phi*S*rho*V (L, G, B) or (1-phi)*rho_m*V.
pub fn total_phase_mass(
    state: &GridState,
    grid: &GridSpec,
    porosity: &[f64],
    rho_m: &[f64],
    rho_b: f64,
    phase: Phase,
) -> f64 {
    let mut total = 0.0;
    for i in grid.soil_start()..grid.n() {
        let v = grid.volume[i];
        total += match phase {
            Phase::Liquid => porosity[i] * state.s_l[i] * state.rho_l * v,
            Phase::Gas => porosity[i] * state.s_g[i] * state.rho_g * v,
            Phase::Bio => porosity[i] * state.s_b[i] * rho_b * v,
            Phase::Mineral => (1.0 - porosity[i]) * rho_m[i] * v,
        };
    }
    total
}
