//! Drive one simulation: solver sequencing (flow -> transport -> chemotaxis ->
//! kinetics -> equilibrium per master step), adaptive time stepping, mass
//! auditing, and the CSV output quartet.

use crate::core::{
    conc_to_mass, mass_to_conc, AuditReport, GridSpec, GridState, MassLedger,
};
use crate::deck::{
    parse_series, sample_series, BoundarySchedule, BoundaryTarget, BoundaryTiming, Diagnostic,
    SimulationDeck, SpeciesKind,
};
use crate::equilibrium::{compile_equilibrium, solve_equilibria, CompiledEquilibrium};
use crate::flow::{apply_bio_exchange, step_liquid, FlowField, FlowSettings, FlowResult};
use crate::hydraulics::{MaterialRecord, RetentionRegistry};
use crate::kinetics::{
    compile_reaction, species_phys, step_kinetics_element, CompiledReaction, ElementEnv,
    ResponseParams, SpeciesPhys,
};
use crate::transport::{advect_diffuse, chemotaxis_drift, TransportCtx};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("deck error")]
    Deck(Vec<Diagnostic>),
    #[error("solver failure at step {step}, t = {time_days:.4} d: {message}")]
    Solver {
        step: usize,
        time_days: f64,
        message: String,
    },
    #[error("mass audit failure at step {step}, t = {time_days:.4} d: species `{species}` closure {error:.3e} > {tol:.1e}")]
    Audit {
        step: usize,
        time_days: f64,
        species: String,
        error: f64,
        tol: f64,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One recorded state snapshot at a report time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// days
    pub time: f64,
    pub s_l: Vec<f64>,
    pub s_g: Vec<f64>,
    pub s_b: Vec<f64>,
    /// pressure head, m
    pub head: Vec<f64>,
    /// conc[species][element] in each species' own unit
    pub conc: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct FluxRow {
    pub time: f64,
    pub water_in: f64,
    pub water_out: f64,
    /// per species: cumulative (influx kg, outflux kg)
    pub species: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub species_names: Vec<String>,
    pub species_units: Vec<&'static str>,
    pub grid: GridSpec,
    pub materials: Vec<MaterialRecord>,
    pub snapshots: Vec<Snapshot>,
    pub flux: Vec<FluxRow>,
    /// (species, element, series aligned with snapshot times)
    pub probes: Vec<(String, usize, Vec<f64>)>,
    pub steps: usize,
    pub audit: AuditReport,
}

impl RunOutputs {
    /// Probe series as (time days, value) pairs for ensemble summaries.
    pub fn probe_series(&self, species: &str, element: usize) -> Option<Vec<(f64, f64)>> {
        let idx = self.species_names.iter().position(|n| n == species)?;
        Some(
            self.snapshots
                .iter()
                .map(|s| (s.time, s.conc[idx][element]))
                .collect(),
        )
    }

    /// State series for non-species quantities: "s_l", "s_b", "head".
    pub fn state_series(&self, field: &str, element: usize) -> Option<Vec<(f64, f64)>> {
        let pick = |s: &Snapshot| match field {
            "s_l" => Some(s.s_l[element]),
            "s_g" => Some(s.s_g[element]),
            "s_b" => Some(s.s_b[element]),
            "head" => Some(s.head[element]),
            _ => None,
        };
        self.snapshots.iter().map(|s| pick(s).map(|v| (s.time, v))).collect()
    }
}

struct RuntimeBoundary {
    element: usize,
    target: BoundaryTarget,
    constant: Option<(f64, f64, f64)>, // rate, from_s, until_s
    series: Option<Vec<(f64, f64)>>,   // time days -> rate
}

impl RuntimeBoundary {
    fn rate(&self, t_s: f64) -> f64 {
        if let Some((rate, from, until)) = self.constant {
            if t_s >= from && t_s < until {
                rate
            } else {
                0.0
            }
        } else if let Some(series) = &self.series {
            sample_series(series, t_s / 86400.0)
        } else {
            0.0
        }
    }
}

/// Everything needed to run one deck.
pub struct Model {
    pub deck: SimulationDeck,
    pub grid: GridSpec,
    pub state: GridState,
    pub field: FlowField,
    reactions: Vec<CompiledReaction>,
    /// Per reaction: gate params from the BIO actor (material residuals are
    /// filled per element during stepping).
    responses: Vec<Option<ResponseParams>>,
    equilibria: Vec<CompiledEquilibrium>,
    phys: Vec<SpeciesPhys>,
    boundaries: Vec<RuntimeBoundary>,
    registry: RetentionRegistry,
}

fn build_grid(deck: &SimulationDeck) -> GridSpec {
    let n = deck.grid.elements;
    let dz = deck.grid.height / n as f64;
    let mut grid = GridSpec::column(n, dz, deck.grid.area, 0);
    grid.atmosphere = deck.grid.atmosphere;
    let mat_index = |name: &str| {
        deck.materials
            .iter()
            .position(|m| m.name == name)
            .unwrap_or(0)
    };
    if deck.grid.layers.is_empty() {
        // first declared material covers the column
    } else {
        for (name, range) in &deck.grid.layers {
            let idx = mat_index(name);
            let (a, b) = range.unwrap_or((0, n - 1));
            for el in grid.material.iter_mut().take(b.min(n - 1) + 1).skip(a) {
                *el = idx;
            }
        }
    }
    grid
}

impl Model {
    pub fn build(deck: SimulationDeck, base_dir: &Path) -> Result<Self, RunError> {
        let grid = build_grid(&deck);
        let n = grid.n();
        let n_species = deck.species.entries.len();
        let mut state = GridState::new(n, n_species);
        state.temp = vec![deck.solver.temperature; n];

        // initial saturations
        let mut s_l = vec![0.5; n];
        for rv in &deck.initial.s_l {
            let (a, b) = rv.range.unwrap_or((0, n - 1));
            for v in s_l.iter_mut().take(b.min(n - 1) + 1).skip(a) {
                *v = rv.value;
            }
        }
        state.s_l = s_l;

        let porosity: Vec<f64> = (0..n)
            .map(|i| deck.materials[grid.material[i]].porosity)
            .collect();
        let phys = species_phys(&deck);

        // initial species masses from concentrations
        for (name, rv) in &deck.initial.conc {
            let sp = deck.species.index_of(name).expect("validated");
            let (a, b) = rv.range.unwrap_or((0, n - 1));
            for i in a..=b.min(n - 1) {
                let liters = porosity[i] * state.s_l[i] * grid.volume[i] * 1000.0;
                state.mass[sp][i] =
                    conc_to_mass(rv.value, phys[sp].unit, phys[sp].molar_mass, liters);
            }
        }

        // biomass saturation implied by BIO masses
        for i in 0..n {
            let mut s_b = 0.0;
            for (sp, p) in phys.iter().enumerate() {
                if let Some((rho_b, _)) = p.bio {
                    s_b += state.mass[sp][i] / (rho_b * porosity[i] * grid.volume[i]);
                }
            }
            state.s_b[i] = s_b;
            state.s_g[i] = 1.0 - state.s_l[i] - s_b;
        }
        if grid.atmosphere {
            state.s_l[0] = 0.0;
            state.s_b[0] = 0.0;
            state.s_g[0] = 1.0;
        }

        let registry = RetentionRegistry::default();
        let models: Vec<&dyn crate::hydraulics::RetentionModel> = deck
            .materials
            .iter()
            .map(|m| registry.get(&m.retention).expect("validated retention tag"))
            .collect();
        let field = FlowField::from_saturation(&state.s_l, &grid, &deck.materials, &models);
        drop(models);

        let reactions: Vec<CompiledReaction> =
            deck.reactions.iter().map(|r| compile_reaction(r, &deck)).collect();
        let responses: Vec<Option<ResponseParams>> = deck
            .reactions
            .iter()
            .map(|r| {
                r.bio_actor.as_ref().map(|actor| {
                    let sp = deck.species.get(actor).expect("validated");
                    let bio = sp.bio.as_ref().expect("validated BIO actor");
                    ResponseParams {
                        t_lb: bio.t_lb,
                        t_ub: bio.t_ub,
                        s_l_lb: bio.s_l_lb,
                        s_l_ub: bio.s_l_ub,
                        s_lr: 0.0, // per-element fill
                        s_gr: 0.0,
                        f_l: bio.f_l,
                    }
                })
            })
            .collect();
        let equilibria: Vec<CompiledEquilibrium> = deck
            .equilibria
            .iter()
            .map(|e| compile_equilibrium(e, &deck))
            .collect();

        let mut boundaries = Vec::new();
        for bc in &deck.boundaries {
            boundaries.push(build_boundary(bc, base_dir)?);
        }

        Ok(Model {
            deck,
            grid,
            state,
            field,
            reactions,
            responses,
            equilibria,
            phys,
            boundaries,
            registry,
        })
    }

    fn porosity(&self) -> Vec<f64> {
        (0..self.grid.n())
            .map(|i| self.deck.materials[self.grid.material[i]].porosity)
            .collect()
    }
}

fn build_boundary(bc: &BoundarySchedule, base_dir: &Path) -> Result<RuntimeBoundary, RunError> {
    let (constant, series) = match &bc.timing {
        BoundaryTiming::Constant { rate, from, until } => {
            (Some((*rate, from * 86400.0, until * 86400.0)), None)
        }
        BoundaryTiming::Series { path } => {
            let full = base_dir.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| RunError::Io {
                path: full.display().to_string(),
                source: e,
            })?;
            let data = parse_series(&text).map_err(|e| {
                RunError::Deck(vec![Diagnostic {
                    line: 0,
                    col: 0,
                    severity: crate::deck::Severity::Error,
                    message: format!("series file {path}: {e}"),
                }])
            })?;
            (None, Some(data))
        }
    };
    Ok(RuntimeBoundary {
        element: bc.element,
        target: bc.target.clone(),
        constant,
        series,
    })
}

fn report_times(deck: &SimulationDeck) -> Vec<f64> {
    let t_end = deck.solver.t_end;
    let mut times = vec![0.0];
    if !deck.outputs.times.is_empty() {
        times.extend(deck.outputs.times.iter().copied().filter(|t| *t > 0.0 && *t < t_end));
    } else if deck.outputs.cadence > 0.0 {
        let mut t = deck.outputs.cadence;
        while t < t_end - 1e-12 {
            times.push(t);
            t += deck.outputs.cadence;
        }
    }
    times.push(t_end);
    times
}

/// Water held as pressure (specific storage) in cells saturated to capacity,
/// kg. Must mirror the flow solver's storage accounting or audits drift.
fn pressure_storage_water(
    grid: &GridSpec,
    mats: &[MaterialRecord],
    models: &[&dyn crate::hydraulics::RetentionModel],
    state: &GridState,
    h: &[f64],
) -> f64 {
    let ss_h = crate::flow::SPECIFIC_STORAGE * state.rho_l * crate::core::GRAVITY;
    let mut water = 0.0;
    for i in grid.soil_start()..grid.n() {
        let mat = &mats[grid.material[i]];
        let mdl = models[grid.material[i]];
        let cap = (1.0 - mat.s_gr - state.s_b[i]).clamp(1e-6, 1.0);
        let h_cap = mdl.suction(mat.effective_saturation(cap).max(1e-9), mat);
        if h[i] > h_cap && state.s_l[i] >= cap - 1e-12 {
            water += ss_h * (h[i] - h_cap) * grid.volume[i] * state.rho_l;
        }
    }
    water
}

/// Stored mass (kg) of every audited species plus bulk water.
fn stored_masses(model: &Model, porosity: &[f64], pressure_water: f64) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let start = model.grid.soil_start();
    for (sp, entry) in model.deck.species.entries.iter().enumerate() {
        if !matches!(entry.kind, SpeciesKind::Pri | SpeciesKind::Bio) {
            continue;
        }
        let m: f64 = (start..model.grid.n()).map(|i| model.state.mass[sp][i]).sum();
        out.insert(entry.name.clone(), m);
    }
    // water: free liquid plus the f_L share inside biomass
    let mut water = 0.0;
    for i in start..model.grid.n() {
        water += porosity[i] * model.state.s_l[i] * model.grid.volume[i] * model.state.rho_l;
        for (sp, p) in model.phys.iter().enumerate() {
            if let Some((rho_b, f_l)) = p.bio {
                water += f_l * model.state.mass[sp][i] / rho_b * model.state.rho_l;
            }
        }
    }
    out.insert("water".into(), water + pressure_water);
    out
}

/// R_S = 15[15N]/(14[14N]) and delta15N = (R_S/R_std - 1) * 1000.
pub const R_STD_15N: f64 = 0.0229;

pub fn compute_delta15n(n14: &[f64], n15: &[f64]) -> Result<Vec<(f64, f64)>, String> {
    n14.iter()
        .zip(n15)
        .map(|(&a, &b)| {
            if a <= 0.0 {
                return Err("zero or negative 14N concentration".to_string());
            }
            let r_s = 15.0 * b / (14.0 * a);
            Ok((r_s, (r_s / R_STD_15N - 1.0) * 1000.0))
        })
        .collect()
}

pub fn run_simulation(deck: SimulationDeck, base_dir: &Path) -> Result<RunOutputs, RunError> {
    let mut model = Model::build(deck, base_dir)?;
    let porosity = model.porosity();
    let n = model.grid.n();
    let start = model.grid.soil_start();
    let solver = model.deck.solver.clone();
    let t_end = solver.t_end * 86400.0;

    let models: Vec<&dyn crate::hydraulics::RetentionModel> = model
        .deck
        .materials
        .iter()
        .map(|m| model.registry.get(&m.retention).expect("validated"))
        .collect();
    let flow_settings = FlowSettings {
        picard_max: solver.picard_max,
        picard_tol: solver.picard_tol,
        free_drainage: true,
    };

    let pressure_water = |model: &Model| -> f64 {
        if solver.flow {
            pressure_storage_water(
                &model.grid,
                &model.deck.materials,
                &models,
                &model.state,
                &model.field.h,
            )
        } else {
            0.0
        }
    };

    let mut ledger = MassLedger::default();
    for (name, stored) in stored_masses(&model, &porosity, pressure_water(&model)) {
        ledger.open(&name, stored);
    }

    let reports = report_times(&model.deck);
    let mut next_report = 1usize; // index into reports; 0 recorded immediately
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut flux_rows: Vec<FluxRow> = Vec::new();

    let snapshot = |model: &Model, t: f64| -> Snapshot {
        let liters: Vec<f64> = (0..n)
            .map(|i| porosity[i] * model.state.s_l[i] * model.grid.volume[i] * 1000.0)
            .collect();
        let conc = model
            .phys
            .iter()
            .enumerate()
            .map(|(sp, p)| {
                (0..n)
                    .map(|i| mass_to_conc(model.state.mass[sp][i], p.unit, p.molar_mass, liters[i]))
                    .collect()
            })
            .collect();
        Snapshot {
            time: t / 86400.0,
            s_l: model.state.s_l.clone(),
            s_g: model.state.s_g.clone(),
            s_b: model.state.s_b.clone(),
            head: model.field.h.clone(),
            conc,
        }
    };
    let flux_snapshot = |ledger: &MassLedger, model: &Model, t: f64| -> FluxRow {
        let w = ledger.accounts.get("water").cloned().unwrap_or_default();
        FluxRow {
            time: t / 86400.0,
            water_in: w.influx / model.state.rho_l,
            water_out: w.outflux / model.state.rho_l,
            species: model
                .deck
                .species
                .entries
                .iter()
                .map(|e| {
                    let acc = ledger.accounts.get(&e.name).cloned().unwrap_or_default();
                    (acc.influx, acc.outflux)
                })
                .collect(),
        }
    };

    // initial equilibrium pass so secondaries are consistent from t = 0
    if solver.equilibrium {
        equilibrate(&model.grid, &model.phys, &model.equilibria, &mut model.state, &porosity);
    }
    snapshots.push(snapshot(&model, 0.0));
    flux_rows.push(flux_snapshot(&ledger, &model, 0.0));

    let mut t = 0.0_f64;
    let mut dt = solver.dt_init;
    let mut clean_steps = 0usize;
    let mut step = 0usize;

    while t < t_end - 1e-9 {
        step += 1;
        if step > 50_000_000 {
            return Err(RunError::Solver {
                step,
                time_days: t / 86400.0,
                message: "step budget exhausted".into(),
            });
        }
        let mut dt_try = dt.min(t_end - t);
        if next_report < reports.len() {
            let t_next = reports[next_report] * 86400.0;
            if t_next > t {
                dt_try = dt_try.min(t_next - t);
            }
        }

        // boundary water sources for this step
        let mut sources = vec![0.0; n];
        for bc in &model.boundaries {
            let rate = bc.rate(t);
            match &bc.target {
                BoundaryTarget::Liquid => sources[bc.element] += rate,
                BoundaryTarget::Uptake { fractions } => {
                    for (el, f) in fractions {
                        sources[*el] -= rate * f;
                    }
                }
                BoundaryTarget::Species(_) => {}
            }
        }

        // flow (master step; halve dt on failure)
        let flow_res: FlowResult = if solver.flow {
            match step_liquid(
                &mut model.state.s_l,
                &model.state.s_b,
                &mut model.field,
                &model.grid,
                &model.deck.materials,
                &models,
                &sources,
                &flow_settings,
                model.state.mu_l,
                model.state.rho_l,
                dt_try,
            ) {
                Ok(r) => r,
                Err(_) => {
                    dt = dt_try * 0.5;
                    clean_steps = 0;
                    if dt < solver.dt_min {
                        return Err(RunError::Solver {
                            step,
                            time_days: t / 86400.0,
                            message: format!("flow dt underflow below {} s", solver.dt_min),
                        });
                    }
                    continue;
                }
            }
        } else {
            FlowResult {
                v: vec![0.0; n.saturating_sub(1)],
                bottom_out: 0.0,
                source_volume: 0.0,
            }
        };
        // keep the gas complement consistent after flow
        for i in start..n {
            model.state.s_g[i] = (1.0 - model.state.s_l[i] - model.state.s_b[i]).max(0.0);
        }
        {
            let w = ledger.account("water");
            let vol = flow_res.source_volume;
            if vol >= 0.0 {
                w.influx += vol * model.state.rho_l;
            } else {
                w.outflux += -vol * model.state.rho_l;
            }
            w.outflux += flow_res.bottom_out * dt_try * model.state.rho_l;
        }

        // species boundary sources
        for bc in &model.boundaries {
            if let BoundaryTarget::Species(name) = &bc.target {
                let rate = bc.rate(t); // kg/s
                if rate != 0.0 {
                    let sp = model.deck.species.index_of(name).expect("validated");
                    model.state.mass[sp][bc.element] += rate * dt_try;
                    let acc = ledger.account(name);
                    if rate > 0.0 {
                        acc.influx += rate * dt_try;
                    } else {
                        acc.outflux += -rate * dt_try;
                    }
                }
            }
        }

        // transport: dissolved species then BIO advection/diffusion
        if solver.transport {
            let ctx = TransportCtx {
                grid: &model.grid,
                porosity: &porosity,
                s_l: &model.state.s_l,
                v: &flow_res.v,
                bottom_out: flow_res.bottom_out,
                cfl: solver.cfl,
            };
            for (sp, entry) in model.deck.species.entries.iter().enumerate() {
                let (eps, diff) = match entry.kind {
                    SpeciesKind::Pri => (1.0, entry.diffusivity),
                    SpeciesKind::Bio => {
                        let b = entry.bio.as_ref().expect("bio");
                        (b.detachment, entry.diffusivity)
                    }
                    _ => continue, // secondaries are slaved, not transported
                };
                if eps == 0.0 && diff == 0.0 {
                    continue;
                }
                let out = advect_diffuse(&ctx, &mut model.state.mass[sp], diff, eps, None, dt_try)
                    .map_err(|e| RunError::Solver {
                        step,
                        time_days: t / 86400.0,
                        message: e.to_string(),
                    })?;
                if out != 0.0 {
                    ledger.account(&entry.name).outflux += out;
                }
            }
        }

        // chemotaxis drift for BIO species with cues
        if solver.chemotaxis {
            for (sp, entry) in model.deck.species.entries.iter().enumerate() {
                let Some(bio) = &entry.bio else { continue };
                if bio.attractants.is_empty() && bio.repellents.is_empty() {
                    continue;
                }
                let cues: Vec<(Vec<f64>, f64, bool)> = bio
                    .attractants
                    .iter()
                    .map(|(name, d)| (name, *d, true))
                    .chain(bio.repellents.iter().map(|(name, d)| (name, *d, false)))
                    .map(|(name, d, attract)| {
                        let idx = model.deck.species.index_of(name).expect("validated");
                        (model.state.mass[idx].clone(), d, attract)
                    })
                    .collect();
                let drift = chemotaxis_drift(
                    &model.grid,
                    &porosity,
                    &model.state.s_l,
                    model.state.rho_l,
                    &cues,
                );
                let ctx = TransportCtx {
                    grid: &model.grid,
                    porosity: &porosity,
                    s_l: &model.state.s_l,
                    v: &vec![0.0; n.saturating_sub(1)],
                    bottom_out: 0.0,
                    cfl: solver.cfl,
                };
                advect_diffuse(&ctx, &mut model.state.mass[sp], 0.0, 0.0, Some(&drift), dt_try)
                    .map_err(|e| RunError::Solver {
                        step,
                        time_days: t / 86400.0,
                        message: e.to_string(),
                    })?;
            }
            resync_biomass(&model.grid, &model.phys, &mut model.state, &porosity);
        } else if solver.transport {
            resync_biomass(&model.grid, &model.phys, &mut model.state, &porosity);
        }

        // kinetics per element, then the liquid<->biomass volume exchange
        if solver.kinetics && !model.reactions.is_empty() {
            let n_species = model.phys.len();
            let mut d_s_b = vec![0.0; n];
            let mut d_s_l = vec![0.0; n];
            for i in start..n {
                let mat = &model.deck.materials[model.grid.material[i]];
                let responses: Vec<Option<ResponseParams>> = model
                    .responses
                    .iter()
                    .map(|r| {
                        r.map(|mut p| {
                            p.s_lr = mat.s_lr;
                            p.s_gr = mat.s_gr;
                            p
                        })
                    })
                    .collect();
                let mut env = ElementEnv {
                    phys: &model.phys,
                    reactions: &model.reactions,
                    responses: &responses,
                    porosity: porosity[i],
                    volume: model.grid.volume[i],
                    s_l0: model.state.s_l[i],
                    s_b0: model.state.s_b[i],
                    temp: model.state.temp[i],
                    rel_tol: solver.kin_rel_tol,
                    s_b_fl0_cache: 0.0,
                };
                let mut masses: Vec<f64> =
                    (0..n_species).map(|sp| model.state.mass[sp][i]).collect();
                let outcome =
                    step_kinetics_element(&mut env, &mut masses, dt_try).map_err(|e| {
                        RunError::Solver {
                            step,
                            time_days: t / 86400.0,
                            message: e.to_string(),
                        }
                    })?;
                for sp in 0..n_species {
                    let delta = masses[sp] - model.state.mass[sp][i];
                    if delta != 0.0 {
                        let acc = ledger.account(&model.deck.species.entries[sp].name);
                        if delta > 0.0 {
                            acc.production += delta;
                        } else {
                            acc.destruction += -delta;
                        }
                    }
                    model.state.mass[sp][i] = masses[sp];
                }
                d_s_b[i] = outcome.d_s_b;
                d_s_l[i] = outcome.d_s_l;
            }
            let s_b_old = model.state.s_b.clone();
            let clipped = apply_bio_exchange(
                &mut model.state.s_l,
                &mut model.state.s_g,
                &mut model.state.s_b,
                &d_s_b,
                &d_s_l,
            );
            ledger.clip_events += clipped;
            // heads follow the new liquid saturation in unsaturated cells;
            // pressure-stored water in cells leaving saturation folds back
            // into S_L so no water disappears from the accounting
            if solver.flow {
                let ss_h =
                    crate::flow::SPECIFIC_STORAGE * model.state.rho_l * crate::core::GRAVITY;
                for i in start..n {
                    if d_s_l[i] == 0.0 && d_s_b[i] == 0.0 {
                        continue;
                    }
                    let mat = &model.deck.materials[model.grid.material[i]];
                    let mdl = models[model.grid.material[i]];
                    let cap = (1.0 - mat.s_gr - model.state.s_b[i]).clamp(1e-6, 1.0);
                    let h_cap = mdl.suction(mat.effective_saturation(cap).max(1e-9), mat);
                    // biofilm growth moved the capacity head; ride any existing
                    // overpressure on the new one so its water content is unchanged
                    let cap_old = (1.0 - mat.s_gr - s_b_old[i]).clamp(1e-6, 1.0);
                    if cap_old != cap {
                        let h_cap_old =
                            mdl.suction(mat.effective_saturation(cap_old).max(1e-9), mat);
                        if model.field.h[i] > h_cap_old {
                            model.field.h[i] = h_cap + (model.field.h[i] - h_cap_old);
                        }
                    }
                    if model.state.s_l[i] >= cap - 1e-12 {
                        continue; // still at capacity: pressure storage stands
                    }
                    if model.field.h[i] > h_cap {
                        let extra = ss_h * (model.field.h[i] - h_cap) / mat.porosity;
                        let s_new = model.state.s_l[i] + extra;
                        if s_new >= cap {
                            model.state.s_g[i] += model.state.s_l[i] - cap;
                            model.state.s_l[i] = cap;
                            model.field.h[i] =
                                h_cap + (s_new - cap) * mat.porosity / ss_h;
                            continue;
                        }
                        model.state.s_g[i] -= extra;
                        model.state.s_l[i] = s_new;
                    }
                    let se = mat.effective_saturation(model.state.s_l[i]);
                    model.field.h[i] = mdl.suction(se.max(1e-9), mat);
                }
            }
        }

        // equilibrium speciation
        if solver.equilibrium && !model.equilibria.is_empty() {
            equilibrate(&model.grid, &model.phys, &model.equilibria, &mut model.state, &porosity);
        }

        // audit
        let stored = stored_masses(&model, &porosity, pressure_water(&model));
        let report = ledger.audit(&stored, solver.audit_tol);
        if !report.pass() {
            let worst = report.worst().cloned().unwrap_or_default();
            return Err(RunError::Audit {
                step,
                time_days: (t + dt_try) / 86400.0,
                species: worst.0,
                error: worst.1,
                tol: solver.audit_tol,
            });
        }

        t += dt_try;
        clean_steps += 1;
        if clean_steps >= 3 {
            dt = (dt * 1.2).min(solver.dt_max);
        }

        if next_report < reports.len() && t >= reports[next_report] * 86400.0 - 1e-9 {
            snapshots.push(snapshot(&model, t));
            flux_rows.push(flux_snapshot(&ledger, &model, t));
            next_report += 1;
        }
    }

    let stored = stored_masses(&model, &porosity, pressure_water(&model));
    let audit = ledger.audit(&stored, solver.audit_tol);

    let probes = model
        .deck
        .outputs
        .probes
        .iter()
        .map(|(name, el)| {
            let idx = model.deck.species.index_of(name).expect("validated");
            let series = snapshots.iter().map(|s| s.conc[idx][*el]).collect();
            (name.clone(), *el, series)
        })
        .collect();

    Ok(RunOutputs {
        species_names: model
            .deck
            .species
            .entries
            .iter()
            .map(|e| e.name.clone())
            .collect(),
        species_units: model
            .phys
            .iter()
            .map(|p| match p.unit {
                crate::core::ConcUnit::MolPerL => "mol_per_L",
                crate::core::ConcUnit::MgPerL => "mg_per_L",
            })
            .collect(),
        grid: model.grid.clone(),
        materials: model.deck.materials.clone(),
        snapshots,
        flux: flux_rows,
        probes,
        steps: step,
        audit,
    })
}

fn resync_biomass(grid: &GridSpec, phys: &[SpeciesPhys], state: &mut GridState, porosity: &[f64]) {
    let n = grid.n();
    for i in grid.soil_start()..n {
        let mut s_b = 0.0;
        for (sp, p) in phys.iter().enumerate() {
            if let Some((rho_b, _)) = p.bio {
                s_b += state.mass[sp][i] / (rho_b * porosity[i] * grid.volume[i]);
            }
        }
        state.s_b[i] = s_b;
        state.s_g[i] = (1.0 - state.s_l[i] - s_b).max(0.0);
    }
}

fn equilibrate(
    grid: &GridSpec,
    phys: &[SpeciesPhys],
    equilibria: &[CompiledEquilibrium],
    state: &mut GridState,
    porosity: &[f64],
) {
    let n = grid.n();
    let n_species = phys.len();
    for i in grid.soil_start()..n {
        let liters = porosity[i] * state.s_l[i] * grid.volume[i] * 1000.0;
        let mut conc: Vec<f64> = (0..n_species)
            .map(|sp| mass_to_conc(state.mass[sp][i], phys[sp].unit, phys[sp].molar_mass, liters))
            .collect();
        solve_equilibria(&mut conc, equilibria);
        for eq in equilibria {
            let sp = eq.solved.0;
            state.mass[sp][i] =
                conc_to_mass(conc[sp], phys[sp].unit, phys[sp].molar_mass, liters);
        }
    }
}

// ---------------------------------------------------------------------------
// CSV output quartet
// ---------------------------------------------------------------------------

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, RunError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| RunError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn finish(mut w: std::io::BufWriter<std::fs::File>, path: &Path) -> Result<(), RunError> {
    w.flush().map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

macro_rules! wln {
    ($w:expr, $path:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(|e| RunError::Io {
            path: $path.display().to_string(),
            source: e,
        })?
    };
}

pub fn write_outputs(outputs: &RunOutputs, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;

    // grid.csv: static per-element properties
    let path = dir.join("grid.csv");
    let mut w = create(&path)?;
    wln!(w, path, "element,z_m,volume_m3,material,k_m2,phi,psi_s_m,b");
    for i in 0..outputs.grid.n() {
        let m = &outputs.materials[outputs.grid.material[i]];
        wln!(
            w,
            path,
            "{i},{},{},{},{},{},{},{}",
            outputs.grid.z[i],
            outputs.grid.volume[i],
            m.name,
            m.k,
            m.porosity,
            m.psi_s,
            m.b
        );
    }
    finish(w, &path)?;

    // timeseries.csv: long format, one row per (time, element)
    let path = dir.join("timeseries.csv");
    let mut w = create(&path)?;
    let mut header = String::from("time_days,element,s_l,s_g,s_b,head_m");
    for (name, unit) in outputs.species_names.iter().zip(&outputs.species_units) {
        header.push_str(&format!(",{name}_{unit}"));
    }
    wln!(w, path, "{header}");
    for snap in &outputs.snapshots {
        for i in 0..outputs.grid.n() {
            let mut row = format!(
                "{},{i},{},{},{},{}",
                snap.time, snap.s_l[i], snap.s_g[i], snap.s_b[i], snap.head[i]
            );
            for conc in &snap.conc {
                row.push_str(&format!(",{}", conc[i]));
            }
            wln!(w, path, "{row}");
        }
    }
    finish(w, &path)?;

    // flux.csv: cumulative boundary exchanges
    let path = dir.join("flux.csv");
    let mut w = create(&path)?;
    let mut header = String::from("time_days,water_in_m3,water_out_m3");
    for name in &outputs.species_names {
        header.push_str(&format!(",{name}_in_kg,{name}_out_kg"));
    }
    wln!(w, path, "{header}");
    for row in &outputs.flux {
        let mut line = format!("{},{},{}", row.time, row.water_in, row.water_out);
        for (inflow, outflow) in &row.species {
            line.push_str(&format!(",{inflow},{outflow}"));
        }
        wln!(w, path, "{line}");
    }
    finish(w, &path)?;

    // probes.csv: one column per requested (species, element)
    let path = dir.join("probes.csv");
    let mut w = create(&path)?;
    let mut header = String::from("time_days");
    for (name, el, _) in &outputs.probes {
        header.push_str(&format!(",{name}@{el}"));
    }
    wln!(w, path, "{header}");
    for (k, snap) in outputs.snapshots.iter().enumerate() {
        let mut line = format!("{}", snap.time);
        for (_, _, series) in &outputs.probes {
            line.push_str(&format!(",{}", series[k]));
        }
        wln!(w, path, "{line}");
    }
    finish(w, &path)?;

    Ok(())
}
