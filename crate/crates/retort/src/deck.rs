//! Block-structured text input deck: parser, validator, serializer.
//!
//! The deck is the sole source of model configuration. Grammar: line-oriented
//! blocks opened by `[BLOCKNAME]` (optionally followed by an identifier),
//! `key = value` lines with whitespace-separated fields, `#` comments.
//! Parsing is total: every failure produces a line-numbered diagnostic.

use crate::core::{ConcUnit, Phase};
use crate::hydraulics::MaterialRecord;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn render(&self, file: &str) -> String {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        format!("{file}:{}:{}: {sev}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeciesKind {
    Pri,
    Bio,
    Sec,
    Min,
    Gas,
}

impl SpeciesKind {
    pub fn tag(self) -> &'static str {
        match self {
            SpeciesKind::Pri => "PRI",
            SpeciesKind::Bio => "BIO",
            SpeciesKind::Sec => "SEC",
            SpeciesKind::Min => "MIN",
            SpeciesKind::Gas => "GAS",
        }
    }
}

/// BIO-only parameters: transport behavior and microbial response bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BioParams {
    /// Detachment efficiency scaling advective BIO transport, in [0, 1].
    pub detachment: f64,
    /// Fraction of biomass volume drawn from the liquid phase, in [0, 1).
    pub f_l: f64,
    /// Biomass bulk density, kg/m^3.
    pub rho_b: f64,
    pub t_lb: f64,
    pub t_ub: f64,
    pub s_l_lb: f64,
    pub s_l_ub: f64,
    /// (attractant species, drift coefficient m^2/s)
    pub attractants: Vec<(String, f64)>,
    pub repellents: Vec<(String, f64)>,
}

impl Default for BioParams {
    fn default() -> Self {
        BioParams {
            detachment: 0.0,
            f_l: 0.8,
            rho_b: 1000.0,
            t_lb: 273.15,
            t_ub: 313.15,
            s_l_lb: 0.3,
            s_l_ub: 0.8,
            attractants: Vec::new(),
            repellents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesEntry {
    pub name: String,
    pub kind: SpeciesKind,
    pub phase: Phase,
    pub unit: ConcUnit,
    /// Molecular diffusivity in the carrier phase, m^2/s.
    pub diffusivity: f64,
    /// kg/mol; zero marks a virtual (massless) bookkeeping species.
    pub molar_mass: f64,
    pub bio: Option<BioParams>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeciesRegistry {
    pub entries: Vec<SpeciesEntry>,
}

impl SpeciesRegistry {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&SpeciesEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InhibitionForm {
    /// K/(X+K): decreasing in X.
    Standard,
    /// X/(X+K): the saturating form.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    pub name: String,
    /// Rate constant, 1/s against the term structure below.
    pub rate: f64,
    /// BIO species activating the microbial response gate f_B.
    pub bio_actor: Option<String>,
    /// (species, signed stoichiometric number); reactants negative.
    pub stoich: Vec<(String, f64)>,
    /// Power-law terms X^e.
    pub norder: Vec<(String, f64)>,
    /// Michaelis-Menten-Monod terms (species, half-saturation K).
    pub mmm: Vec<(String, f64)>,
    /// Competitive species inflating every MMM half-saturation.
    pub competition: Vec<(String, f64)>,
    /// Inhibition terms (species, K).
    pub inhibition: Vec<(String, f64)>,
    pub inhibition_form: InhibitionForm,
}

impl Default for ReactionSpec {
    fn default() -> Self {
        ReactionSpec {
            name: String::new(),
            rate: 0.0,
            bio_actor: None,
            stoich: Vec::new(),
            norder: Vec::new(),
            mmm: Vec::new(),
            competition: Vec::new(),
            inhibition: Vec::new(),
            inhibition_form: InhibitionForm::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSpec {
    pub name: String,
    /// (SEC/MIN/GAS species, exponent x_k != 0), the solved unknown.
    pub solved: (String, f64),
    /// (PRI species, exponent x_j); reactants negative.
    pub primaries: Vec<(String, f64)>,
    pub log10_keq: f64,
}

/// A value over an element range; `range = None` means all elements.
#[derive(Debug, Clone, PartialEq)]
pub struct RangedValue {
    pub value: f64,
    pub range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialState {
    pub s_l: Vec<RangedValue>,
    /// (species, concentration in the species' unit, element range)
    pub conc: Vec<(String, RangedValue)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryTarget {
    /// Water source/sink, rate in m^3/s (positive in).
    Liquid,
    /// Species source/sink, rate in kg/s (positive in).
    Species(String),
    /// Water sink distributed over elements with the listed fractions.
    Uptake { fractions: Vec<(usize, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryTiming {
    /// Constant rate between `from` and `until` (days); until=inf for open.
    Constant { rate: f64, from: f64, until: f64 },
    /// Column-text file: time (days), rate; linear interpolation, constant
    /// extrapolation past the ends.
    Series { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySchedule {
    pub name: String,
    pub element: usize,
    pub target: BoundaryTarget,
    pub timing: BoundaryTiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub elements: usize,
    /// Total column height, m.
    pub height: f64,
    /// Cross-section area, m^2.
    pub area: f64,
    /// (material name, element range); empty range covers all elements.
    pub layers: Vec<(String, Option<(usize, usize)>)>,
    pub atmosphere: bool,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            elements: 1,
            height: 1.0,
            area: 1.0,
            layers: Vec::new(),
            atmosphere: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Simulation horizon, days.
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub picard_max: usize,
    /// Picard convergence on head change, m.
    pub picard_tol: f64,
    /// Uniform run temperature, K.
    pub temperature: f64,
    pub audit_tol: f64,
    pub kin_rel_tol: f64,
    pub cfl: f64,
    pub flow: bool,
    pub transport: bool,
    pub chemotaxis: bool,
    pub kinetics: bool,
    pub equilibrium: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            t_end: 1.0,
            dt_init: 10.0,
            dt_min: 1e-3,
            dt_max: 600.0,
            picard_max: 40,
            picard_tol: 1e-6,
            temperature: 293.15,
            audit_tol: 1e-6,
            kin_rel_tol: 1e-8,
            cfl: 0.9,
            flow: true,
            transport: true,
            chemotaxis: true,
            kinetics: true,
            equilibrium: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    /// Report cadence in days; ignored when explicit times are listed.
    pub cadence: f64,
    pub times: Vec<f64>,
    /// (species, element)
    pub probes: Vec<(String, usize)>,
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            cadence: 0.0,
            times: Vec::new(),
            probes: Vec::new(),
            dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Gaussian,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub mode: SweepMode,
    /// Deck parameter paths, e.g. `material.sand.k`, `reaction.growth.rate`,
    /// `solver.temperature`.
    pub targets: Vec<String>,
    pub replicas: usize,
    pub rel_std: f64,
    pub seed: u64,
    /// Grid mode: explicit values applied to the (single) target.
    pub values: Vec<f64>,
    /// Probe summarized into ensemble.csv: (species, element).
    pub summary: Option<(String, usize)>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            mode: SweepMode::Gaussian,
            targets: Vec::new(),
            replicas: 1,
            rel_std: 0.0,
            seed: 0,
            values: Vec::new(),
            summary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDeck {
    pub grid: GridBlock,
    pub materials: Vec<MaterialRecord>,
    pub species: SpeciesRegistry,
    pub reactions: Vec<ReactionSpec>,
    pub equilibria: Vec<EquilibriumSpec>,
    pub initial: InitialState,
    pub boundaries: Vec<BoundarySchedule>,
    pub solver: SolverSettings,
    pub outputs: OutputSpec,
    pub sweep: Option<SweepSpec>,
}

impl Default for SimulationDeck {
    fn default() -> Self {
        SimulationDeck {
            grid: GridBlock::default(),
            materials: Vec::new(),
            species: SpeciesRegistry::default(),
            reactions: Vec::new(),
            equilibria: Vec::new(),
            initial: InitialState::default(),
            boundaries: Vec::new(),
            solver: SolverSettings::default(),
            outputs: OutputSpec::default(),
            sweep: None,
        }
    }
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

struct Ctx {
    diags: Vec<Diagnostic>,
}

impl Ctx {
    fn err(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic {
            line,
            col,
            severity: Severity::Error,
            message: msg.into(),
        });
    }

    fn warn(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic {
            line,
            col,
            severity: Severity::Warning,
            message: msg.into(),
        });
    }
}

/// One `key = value...` line split into fields with source coordinates.
struct KvLine<'a> {
    line: usize,
    key: &'a str,
    key_col: usize,
    fields: Vec<(&'a str, usize)>,
}

impl<'a> KvLine<'a> {
    fn f64(&self, idx: usize, ctx: &mut Ctx) -> Option<f64> {
        match self.fields.get(idx) {
            Some((s, col)) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    ctx.err(self.line, *col, format!("expected a number, got `{s}`"));
                    None
                }
            },
            None => {
                ctx.err(self.line, self.key_col, format!("`{}` is missing a value", self.key));
                None
            }
        }
    }

    fn usize(&self, idx: usize, ctx: &mut Ctx) -> Option<usize> {
        match self.fields.get(idx) {
            Some((s, col)) => match s.parse::<usize>() {
                Ok(v) => Some(v),
                _ => {
                    ctx.err(self.line, *col, format!("expected a nonnegative integer, got `{s}`"));
                    None
                }
            },
            None => {
                ctx.err(self.line, self.key_col, format!("`{}` is missing a value", self.key));
                None
            }
        }
    }

    fn word(&self, idx: usize, ctx: &mut Ctx) -> Option<&'a str> {
        match self.fields.get(idx) {
            Some((s, _)) => Some(s),
            None => {
                ctx.err(self.line, self.key_col, format!("`{}` is missing a value", self.key));
                None
            }
        }
    }

    fn on_off(&self, ctx: &mut Ctx) -> Option<bool> {
        match self.word(0, ctx)? {
            "on" | "true" | "yes" => Some(true),
            "off" | "false" | "no" => Some(false),
            other => {
                ctx.err(self.line, self.fields[0].1, format!("expected on/off, got `{other}`"));
                None
            }
        }
    }

    /// Flattened (name, number) pair list: `a 1 b -2 ...`
    fn pairs(&self, ctx: &mut Ctx) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.fields.len() {
            let (name, ncol) = self.fields[i];
            match self.fields.get(i + 1) {
                Some((v, vcol)) => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => out.push((name.to_string(), x)),
                    _ => ctx.err(self.line, *vcol, format!("expected a number after `{name}`, got `{v}`")),
                },
                None => ctx.err(self.line, ncol, format!("`{name}` is missing its paired value")),
            }
            i += 2;
        }
        out
    }

    /// Value with optional element range: `v` or `v i0 i1`.
    fn ranged(&self, ctx: &mut Ctx) -> Option<RangedValue> {
        let value = self.f64(0, ctx)?;
        let range = if self.fields.len() >= 3 {
            let a = self.usize(1, ctx)?;
            let b = self.usize(2, ctx)?;
            Some((a, b))
        } else {
            None
        };
        Some(RangedValue { value, range })
    }
}

fn split_fields(s: &str, base_col: usize) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push((&s[st..i], base_col + st + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push((&s[st..], base_col + st + 1));
    }
    out
}

enum Block {
    Grid,
    Material,
    Species,
    Bio,
    Reaction,
    Equilibrium,
    Initial,
    Boundary,
    Solver,
    Output,
    Sweep,
    Unknown,
}

pub fn parse_deck(text: &str) -> Result<SimulationDeck, Vec<Diagnostic>> {
    let mut ctx = Ctx { diags: Vec::new() };
    let mut deck = SimulationDeck::default();
    let mut block: Option<Block> = None;
    let mut seen_grid = false;
    let mut seen_solver = false;

    for (lineno0, raw) in text.lines().enumerate() {
        let line = lineno0 + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let col0 = content.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;

        if trimmed.starts_with('[') {
            block = Some(open_block(trimmed, line, col0, &mut deck, &mut ctx, &mut seen_grid, &mut seen_solver));
            continue;
        }

        let Some(eq) = trimmed.find('=') else {
            ctx.err(line, col0, format!("expected `key = value` or `[BLOCK]`, got `{trimmed}`"));
            continue;
        };
        let key = trimmed[..eq].trim();
        if key.is_empty() {
            ctx.err(line, col0, "missing key before `=`");
            continue;
        }
        let val_str = &trimmed[eq + 1..];
        let val_base = col0 - 1 + eq + 1;
        let kv = KvLine {
            line,
            key,
            key_col: col0,
            fields: split_fields(val_str, val_base),
        };
        if kv.fields.is_empty() {
            ctx.err(line, col0, format!("`{key}` has no value"));
            continue;
        }

        match &block {
            None => ctx.err(line, col0, format!("`{key}` appears outside any block")),
            Some(Block::Unknown) => {}
            Some(Block::Grid) => grid_key(&kv, &mut deck.grid, &mut ctx),
            Some(Block::Material) => {
                let mat = deck.materials.last_mut().expect("open material");
                material_key(&kv, mat, &mut ctx);
            }
            Some(Block::Species) => {
                let sp = deck.species.entries.last_mut().expect("open species");
                species_key(&kv, sp, &mut ctx);
            }
            Some(Block::Bio) => {
                let sp = deck.species.entries.last_mut().expect("open bio");
                bio_key(&kv, sp, &mut ctx);
            }
            Some(Block::Reaction) => {
                let rx = deck.reactions.last_mut().expect("open reaction");
                reaction_key(&kv, rx, &mut ctx);
            }
            Some(Block::Equilibrium) => {
                let eqs = deck.equilibria.last_mut().expect("open equilibrium");
                equilibrium_key(&kv, eqs, &mut ctx);
            }
            Some(Block::Initial) => initial_key(&kv, &mut deck.initial, &mut ctx),
            Some(Block::Boundary) => {
                let bc = deck.boundaries.last_mut().expect("open boundary");
                boundary_key(&kv, bc, &mut ctx);
            }
            Some(Block::Solver) => solver_key(&kv, &mut deck.solver, &mut ctx),
            Some(Block::Output) => output_key(&kv, &mut deck.outputs, &mut ctx),
            Some(Block::Sweep) => {
                let sw = deck.sweep.as_mut().expect("open sweep");
                sweep_key(&kv, sw, &mut ctx);
            }
        }
    }

    validate(&deck, &mut ctx, seen_grid, seen_solver);

    if ctx.diags.iter().any(|d| d.severity == Severity::Error) {
        Err(ctx.diags)
    } else {
        Ok(deck)
    }
}

/// Validation warnings for a parse that succeeded.
pub fn parse_deck_with_warnings(text: &str) -> (Result<SimulationDeck, Vec<Diagnostic>>, Vec<Diagnostic>) {
    match parse_deck(text) {
        Ok(d) => {
            let mut ctx = Ctx { diags: Vec::new() };
            for rx in &d.reactions {
                for w in validate_reaction_balance(rx, &d.species) {
                    ctx.warn(0, 0, w);
                }
            }
            (Ok(d), ctx.diags)
        }
        Err(e) => (Err(e), Vec::new()),
    }
}

#[allow(clippy::too_many_arguments)]
fn open_block(
    trimmed: &str,
    line: usize,
    col: usize,
    deck: &mut SimulationDeck,
    ctx: &mut Ctx,
    seen_grid: &mut bool,
    seen_solver: &mut bool,
) -> Block {
    let Some(close) = trimmed.find(']') else {
        ctx.err(line, col, "unterminated block header (missing `]`)");
        return Block::Unknown;
    };
    let name = &trimmed[1..close];
    let rest = trimmed[close + 1..].trim();
    let ident = || -> Option<String> {
        if rest.is_empty() {
            None
        } else if rest.split_whitespace().count() == 1
            && rest.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-')
        {
            Some(rest.to_string())
        } else {
            None
        }
    };
    let need_ident = |ctx: &mut Ctx, kind: &str| -> String {
        match ident() {
            Some(s) => s,
            None => {
                ctx.err(line, col, format!("[{kind}] needs a single identifier, got `{rest}`"));
                format!("__anon_{line}")
            }
        }
    };
    match name {
        "GRID" => {
            if *seen_grid {
                ctx.err(line, col, "duplicate [GRID] block");
            }
            *seen_grid = true;
            Block::Grid
        }
        "MATERIAL" => {
            let id = need_ident(ctx, "MATERIAL");
            if deck.materials.iter().any(|m| m.name == id) {
                ctx.err(line, col, format!("duplicate material `{id}`"));
            }
            deck.materials.push(MaterialRecord {
                name: id.clone(),
                ..Default::default()
            });
            Block::Material
        }
        "SPECIES" => {
            let id = need_ident(ctx, "SPECIES");
            if deck.species.get(&id).is_some() {
                ctx.err(line, col, format!("duplicate species `{id}`"));
            }
            deck.species.entries.push(SpeciesEntry {
                name: id.clone(),
                kind: SpeciesKind::Pri,
                phase: Phase::Liquid,
                unit: ConcUnit::MolPerL,
                diffusivity: 0.0,
                molar_mass: 0.0,
                bio: None,
            });
            Block::Species
        }
        "BIO" => {
            let id = need_ident(ctx, "BIO");
            if deck.species.get(&id).is_some() {
                ctx.err(line, col, format!("duplicate species `{id}`"));
            }
            deck.species.entries.push(SpeciesEntry {
                name: id.clone(),
                kind: SpeciesKind::Bio,
                phase: Phase::Bio,
                unit: ConcUnit::MgPerL,
                diffusivity: 0.0,
                molar_mass: 0.0,
                bio: Some(BioParams::default()),
            });
            Block::Bio
        }
        "REACTION" => {
            let id = need_ident(ctx, "REACTION");
            if deck.reactions.iter().any(|r| r.name == id) {
                ctx.err(line, col, format!("duplicate reaction `{id}`"));
            }
            deck.reactions.push(ReactionSpec {
                name: id.clone(),
                ..Default::default()
            });
            Block::Reaction
        }
        "EQUILIBRIUM" => {
            let id = need_ident(ctx, "EQUILIBRIUM");
            if deck.equilibria.iter().any(|e| e.name == id) {
                ctx.err(line, col, format!("duplicate equilibrium `{id}`"));
            }
            deck.equilibria.push(EquilibriumSpec {
                name: id.clone(),
                solved: (String::new(), 1.0),
                primaries: Vec::new(),
                log10_keq: 0.0,
            });
            Block::Equilibrium
        }
        "INITIAL" => Block::Initial,
        "BOUNDARY" => {
            let id = need_ident(ctx, "BOUNDARY");
            if deck.boundaries.iter().any(|b| b.name == id) {
                ctx.err(line, col, format!("duplicate boundary `{id}`"));
            }
            deck.boundaries.push(BoundarySchedule {
                name: id.clone(),
                element: 0,
                target: BoundaryTarget::Liquid,
                timing: BoundaryTiming::Constant {
                    rate: 0.0,
                    from: 0.0,
                    until: f64::INFINITY,
                },
            });
            Block::Boundary
        }
        "SOLVER" => {
            if *seen_solver {
                ctx.err(line, col, "duplicate [SOLVER] block");
            }
            *seen_solver = true;
            Block::Solver
        }
        "OUTPUT" => Block::Output,
        "SWEEP" => {
            if deck.sweep.is_some() {
                ctx.err(line, col, "duplicate [SWEEP] block");
            } else {
                deck.sweep = Some(SweepSpec::default());
            }
            Block::Sweep
        }
        other => {
            ctx.err(line, col, format!("unknown block `[{other}]`"));
            Block::Unknown
        }
    }
}

fn grid_key(kv: &KvLine, grid: &mut GridBlock, ctx: &mut Ctx) {
    match kv.key {
        "elements" => {
            if let Some(v) = kv.usize(0, ctx) {
                if v == 0 {
                    ctx.err(kv.line, kv.key_col, "grid needs at least one element");
                } else {
                    grid.elements = v;
                }
            }
        }
        "height" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v <= 0.0 {
                    ctx.err(kv.line, kv.key_col, "height must be positive");
                } else {
                    grid.height = v;
                }
            }
        }
        "area" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v <= 0.0 {
                    ctx.err(kv.line, kv.key_col, "area must be positive");
                } else {
                    grid.area = v;
                }
            }
        }
        "material" => {
            if let Some(name) = kv.word(0, ctx) {
                let range = if kv.fields.len() >= 3 {
                    match (kv.usize(1, ctx), kv.usize(2, ctx)) {
                        (Some(a), Some(b)) => Some((a, b)),
                        _ => None,
                    }
                } else {
                    None
                };
                grid.layers.push((name.to_string(), range));
            }
        }
        "atmosphere" => {
            if let Some(v) = kv.on_off(ctx) {
                grid.atmosphere = v;
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [GRID] key `{other}`")),
    }
}

fn material_key(kv: &KvLine, mat: &mut MaterialRecord, ctx: &mut Ctx) {
    let num = |ctx: &mut Ctx| kv.f64(0, ctx);
    match kv.key {
        "k" => {
            if let Some(v) = num(ctx) {
                if v > 0.0 {
                    mat.k = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "permeability must be positive");
                }
            }
        }
        "phi" => {
            if let Some(v) = num(ctx) {
                if v > 0.0 && v < 1.0 {
                    mat.porosity = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "porosity must lie in (0, 1)");
                }
            }
        }
        "psi_s" => {
            if let Some(v) = num(ctx) {
                if v < 0.0 {
                    mat.psi_s = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "air-entry suction must be negative");
                }
            }
        }
        "b" => {
            if let Some(v) = num(ctx) {
                if v > 0.0 {
                    mat.b = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "pore-size index b must be positive");
                }
            }
        }
        "s_lr" => {
            if let Some(v) = num(ctx) {
                mat.s_lr = v;
            }
        }
        "s_gr" => {
            if let Some(v) = num(ctx) {
                mat.s_gr = v;
            }
        }
        "rho_m" => {
            if let Some(v) = num(ctx) {
                mat.rho_m = v;
            }
        }
        "retention" => {
            if let Some(v) = kv.word(0, ctx) {
                match v {
                    "brooks_corey" | "van_genuchten" => mat.retention = v.to_string(),
                    other => ctx.err(
                        kv.line,
                        kv.fields[0].1,
                        format!("unknown retention model `{other}` (brooks_corey | van_genuchten)"),
                    ),
                }
            }
        }
        "vg_alpha" => {
            if let Some(v) = num(ctx) {
                mat.vg_alpha = v;
            }
        }
        "vg_n" => {
            if let Some(v) = num(ctx) {
                mat.vg_n = v;
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [MATERIAL] key `{other}`")),
    }
}

fn species_key(kv: &KvLine, sp: &mut SpeciesEntry, ctx: &mut Ctx) {
    match kv.key {
        "kind" => {
            if let Some(v) = kv.word(0, ctx) {
                sp.kind = match v {
                    "PRI" => SpeciesKind::Pri,
                    "SEC" => SpeciesKind::Sec,
                    "MIN" => SpeciesKind::Min,
                    "GAS" => SpeciesKind::Gas,
                    "BIO" => {
                        ctx.err(kv.line, kv.fields[0].1, "declare BIO species with a [BIO] block");
                        return;
                    }
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown species kind `{other}`"));
                        return;
                    }
                };
            }
        }
        "phase" => {
            if let Some(v) = kv.word(0, ctx) {
                sp.phase = match v {
                    "L" => Phase::Liquid,
                    "G" => Phase::Gas,
                    "M" => Phase::Mineral,
                    "B" => Phase::Bio,
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown phase `{other}` (L|G|B|M)"));
                        return;
                    }
                };
            }
        }
        "unit" => {
            if let Some(v) = kv.word(0, ctx) {
                sp.unit = match v {
                    "mol/L" => ConcUnit::MolPerL,
                    "mg/L" => ConcUnit::MgPerL,
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown unit `{other}` (mol/L | mg/L)"));
                        return;
                    }
                };
            }
        }
        "diffusivity" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v >= 0.0 {
                    sp.diffusivity = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "diffusivity must be nonnegative");
                }
            }
        }
        "molar_mass" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v >= 0.0 {
                    sp.molar_mass = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "molar mass must be nonnegative");
                }
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [SPECIES] key `{other}`")),
    }
}

fn bio_key(kv: &KvLine, sp: &mut SpeciesEntry, ctx: &mut Ctx) {
    match kv.key {
        "unit" | "diffusivity" | "molar_mass" => {
            species_key(kv, sp, ctx);
            return;
        }
        _ => {}
    }
    let bio = sp.bio.as_mut().expect("bio params present");
    match kv.key {
        "detachment" => {
            if let Some(v) = kv.f64(0, ctx) {
                if (0.0..=1.0).contains(&v) {
                    bio.detachment = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "detachment efficiency must lie in [0, 1]");
                }
            }
        }
        "f_l" => {
            if let Some(v) = kv.f64(0, ctx) {
                if (0.0..1.0).contains(&v) {
                    bio.f_l = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "f_l must lie in [0, 1)");
                }
            }
        }
        "rho_b" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v > 0.0 {
                    bio.rho_b = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "rho_b must be positive");
                }
            }
        }
        "t_lb" => {
            if let Some(v) = kv.f64(0, ctx) {
                bio.t_lb = v;
            }
        }
        "t_ub" => {
            if let Some(v) = kv.f64(0, ctx) {
                bio.t_ub = v;
            }
        }
        "s_l_lb" => {
            if let Some(v) = kv.f64(0, ctx) {
                bio.s_l_lb = v;
            }
        }
        "s_l_ub" => {
            if let Some(v) = kv.f64(0, ctx) {
                bio.s_l_ub = v;
            }
        }
        "attract" => {
            if let (Some(name), Some(d)) = (kv.word(0, ctx), kv.f64(1, ctx)) {
                if d >= 0.0 {
                    bio.attractants.push((name.to_string(), d));
                } else {
                    ctx.err(kv.line, kv.key_col, "chemotaxis coefficient must be nonnegative");
                }
            }
        }
        "repel" => {
            if let (Some(name), Some(d)) = (kv.word(0, ctx), kv.f64(1, ctx)) {
                if d >= 0.0 {
                    bio.repellents.push((name.to_string(), d));
                } else {
                    ctx.err(kv.line, kv.key_col, "chemotaxis coefficient must be nonnegative");
                }
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [BIO] key `{other}`")),
    }
}

fn reaction_key(kv: &KvLine, rx: &mut ReactionSpec, ctx: &mut Ctx) {
    match kv.key {
        "rate" => {
            if let Some(v) = kv.f64(0, ctx) {
                rx.rate = v;
            }
        }
        "bio" => {
            if let Some(v) = kv.word(0, ctx) {
                rx.bio_actor = Some(v.to_string());
            }
        }
        "stoich" => rx.stoich.extend(kv.pairs(ctx)),
        "norder" => rx.norder.extend(kv.pairs(ctx)),
        "mmm" => {
            for (name, k) in kv.pairs(ctx) {
                if k > 0.0 {
                    rx.mmm.push((name, k));
                } else {
                    ctx.err(kv.line, kv.key_col, format!("half-saturation for `{name}` must be positive"));
                }
            }
        }
        "competition" => {
            for (name, k) in kv.pairs(ctx) {
                if k > 0.0 {
                    rx.competition.push((name, k));
                } else {
                    ctx.err(kv.line, kv.key_col, format!("competition constant for `{name}` must be positive"));
                }
            }
        }
        "inhibition" => {
            for (name, k) in kv.pairs(ctx) {
                if k > 0.0 {
                    rx.inhibition.push((name, k));
                } else {
                    ctx.err(kv.line, kv.key_col, format!("inhibition constant for `{name}` must be positive"));
                }
            }
        }
        "inhibition_form" => {
            if let Some(v) = kv.word(0, ctx) {
                rx.inhibition_form = match v {
                    "standard" => InhibitionForm::Standard,
                    "literal" => InhibitionForm::Literal,
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown inhibition form `{other}` (standard | literal)"));
                        return;
                    }
                };
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [REACTION] key `{other}`")),
    }
}

fn equilibrium_key(kv: &KvLine, eq: &mut EquilibriumSpec, ctx: &mut Ctx) {
    match kv.key {
        "solved" => {
            if let (Some(name), Some(x)) = (kv.word(0, ctx), kv.f64(1, ctx)) {
                if x == 0.0 {
                    ctx.err(kv.line, kv.key_col, "solved exponent must be nonzero");
                } else {
                    eq.solved = (name.to_string(), x);
                }
            }
        }
        "primary" => {
            if let (Some(name), Some(x)) = (kv.word(0, ctx), kv.f64(1, ctx)) {
                eq.primaries.push((name.to_string(), x));
            }
        }
        "log10_keq" => {
            if let Some(v) = kv.f64(0, ctx) {
                eq.log10_keq = v;
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [EQUILIBRIUM] key `{other}`")),
    }
}

fn initial_key(kv: &KvLine, init: &mut InitialState, ctx: &mut Ctx) {
    match kv.key {
        "s_l" => {
            if let Some(rv) = kv.ranged(ctx) {
                if (0.0..=1.0).contains(&rv.value) {
                    init.s_l.push(rv);
                } else {
                    ctx.err(kv.line, kv.key_col, "initial saturation must lie in [0, 1]");
                }
            }
        }
        "conc" => {
            if let Some(name) = kv.word(0, ctx) {
                let sub = KvLine {
                    line: kv.line,
                    key: kv.key,
                    key_col: kv.key_col,
                    fields: kv.fields[1..].to_vec(),
                };
                if let Some(rv) = sub.ranged(ctx) {
                    if rv.value >= 0.0 {
                        init.conc.push((name.to_string(), rv));
                    } else {
                        ctx.err(kv.line, kv.key_col, "initial concentration must be nonnegative");
                    }
                }
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [INITIAL] key `{other}`")),
    }
}

fn boundary_key(kv: &KvLine, bc: &mut BoundarySchedule, ctx: &mut Ctx) {
    match kv.key {
        "element" => {
            if let Some(v) = kv.usize(0, ctx) {
                bc.element = v;
            }
        }
        "target" => {
            if let Some(v) = kv.word(0, ctx) {
                bc.target = match v {
                    "liquid" => BoundaryTarget::Liquid,
                    "uptake" => BoundaryTarget::Uptake { fractions: Vec::new() },
                    "species" => match kv.word(1, ctx) {
                        Some(name) => BoundaryTarget::Species(name.to_string()),
                        None => return,
                    },
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown boundary target `{other}` (liquid | species NAME | uptake)"));
                        return;
                    }
                };
            }
        }
        "rate" => {
            if let Some(v) = kv.f64(0, ctx) {
                match &mut bc.timing {
                    BoundaryTiming::Constant { rate, .. } => *rate = v,
                    BoundaryTiming::Series { .. } => {
                        bc.timing = BoundaryTiming::Constant { rate: v, from: 0.0, until: f64::INFINITY }
                    }
                }
            }
        }
        "from" => {
            if let Some(v) = kv.f64(0, ctx) {
                if let BoundaryTiming::Constant { from, .. } = &mut bc.timing {
                    *from = v;
                }
            }
        }
        "until" => {
            if let Some(v) = kv.f64(0, ctx) {
                if let BoundaryTiming::Constant { until, .. } = &mut bc.timing {
                    *until = v;
                }
            }
        }
        "series" => {
            if let Some(path) = kv.word(0, ctx) {
                bc.timing = BoundaryTiming::Series { path: path.to_string() };
            }
        }
        "fraction" => {
            if let (Some(el), Some(f)) = (kv.usize(0, ctx), kv.f64(1, ctx)) {
                match &mut bc.target {
                    BoundaryTarget::Uptake { fractions } => fractions.push((el, f)),
                    _ => ctx.err(kv.line, kv.key_col, "`fraction` only applies to uptake boundaries (set `target = uptake` first)"),
                }
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [BOUNDARY] key `{other}`")),
    }
}

fn solver_key(kv: &KvLine, s: &mut SolverSettings, ctx: &mut Ctx) {
    let pos = |ctx: &mut Ctx, what: &str| -> Option<f64> {
        let v = kv.f64(0, ctx)?;
        if v > 0.0 {
            Some(v)
        } else {
            ctx.err(kv.line, kv.key_col, format!("{what} must be positive"));
            None
        }
    };
    match kv.key {
        "t_end" => {
            if let Some(v) = pos(ctx, "t_end") {
                s.t_end = v;
            }
        }
        "dt_init" => {
            if let Some(v) = pos(ctx, "dt_init") {
                s.dt_init = v;
            }
        }
        "dt_min" => {
            if let Some(v) = pos(ctx, "dt_min") {
                s.dt_min = v;
            }
        }
        "dt_max" => {
            if let Some(v) = pos(ctx, "dt_max") {
                s.dt_max = v;
            }
        }
        "picard_max" => {
            if let Some(v) = kv.usize(0, ctx) {
                s.picard_max = v.max(1);
            }
        }
        "picard_tol" => {
            if let Some(v) = pos(ctx, "picard_tol") {
                s.picard_tol = v;
            }
        }
        "temperature" => {
            if let Some(v) = pos(ctx, "temperature") {
                s.temperature = v;
            }
        }
        "audit_tol" => {
            if let Some(v) = pos(ctx, "audit_tol") {
                s.audit_tol = v;
            }
        }
        "kin_rel_tol" => {
            if let Some(v) = pos(ctx, "kin_rel_tol") {
                s.kin_rel_tol = v;
            }
        }
        "cfl" => {
            if let Some(v) = pos(ctx, "cfl") {
                if v <= 1.0 {
                    s.cfl = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "cfl must lie in (0, 1]");
                }
            }
        }
        "flow" => {
            if let Some(v) = kv.on_off(ctx) {
                s.flow = v;
            }
        }
        "transport" => {
            if let Some(v) = kv.on_off(ctx) {
                s.transport = v;
            }
        }
        "chemotaxis" => {
            if let Some(v) = kv.on_off(ctx) {
                s.chemotaxis = v;
            }
        }
        "kinetics" => {
            if let Some(v) = kv.on_off(ctx) {
                s.kinetics = v;
            }
        }
        "equilibrium" => {
            if let Some(v) = kv.on_off(ctx) {
                s.equilibrium = v;
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [SOLVER] key `{other}`")),
    }
}

fn output_key(kv: &KvLine, o: &mut OutputSpec, ctx: &mut Ctx) {
    match kv.key {
        "cadence" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v > 0.0 {
                    o.cadence = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "cadence must be positive");
                }
            }
        }
        "times" => {
            for i in 0..kv.fields.len() {
                if let Some(v) = kv.f64(i, ctx) {
                    o.times.push(v);
                }
            }
        }
        "probe" => {
            if let (Some(name), Some(el)) = (kv.word(0, ctx), kv.usize(1, ctx)) {
                o.probes.push((name.to_string(), el));
            }
        }
        "dir" => {
            if let Some(v) = kv.word(0, ctx) {
                o.dir = v.to_string();
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [OUTPUT] key `{other}`")),
    }
}

fn sweep_key(kv: &KvLine, sw: &mut SweepSpec, ctx: &mut Ctx) {
    match kv.key {
        "mode" => {
            if let Some(v) = kv.word(0, ctx) {
                sw.mode = match v {
                    "gaussian" => SweepMode::Gaussian,
                    "grid" => SweepMode::Grid,
                    other => {
                        ctx.err(kv.line, kv.fields[0].1, format!("unknown sweep mode `{other}` (gaussian | grid)"));
                        return;
                    }
                };
            }
        }
        "target" => {
            if let Some(v) = kv.word(0, ctx) {
                sw.targets.push(v.to_string());
            }
        }
        "replicas" => {
            if let Some(v) = kv.usize(0, ctx) {
                if v >= 1 {
                    sw.replicas = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "replicas must be at least 1");
                }
            }
        }
        "rel_std" => {
            if let Some(v) = kv.f64(0, ctx) {
                if v >= 0.0 {
                    sw.rel_std = v;
                } else {
                    ctx.err(kv.line, kv.key_col, "rel_std must be nonnegative");
                }
            }
        }
        "seed" => {
            if let Some((s, col)) = kv.fields.first() {
                match s.parse::<u64>() {
                    Ok(v) => sw.seed = v,
                    Err(_) => ctx.err(kv.line, *col, format!("expected an unsigned integer seed, got `{s}`")),
                }
            }
        }
        "values" => {
            for i in 0..kv.fields.len() {
                if let Some(v) = kv.f64(i, ctx) {
                    sw.values.push(v);
                }
            }
        }
        "summary" => {
            if let (Some(name), Some(el)) = (kv.word(0, ctx), kv.usize(1, ctx)) {
                sw.summary = Some((name.to_string(), el));
            }
        }
        other => ctx.err(kv.line, kv.key_col, format!("unknown [SWEEP] key `{other}`")),
    }
}

// ---------------------------------------------------------------------------
// semantic validation
// ---------------------------------------------------------------------------

fn validate(deck: &SimulationDeck, ctx: &mut Ctx, seen_grid: bool, seen_solver: bool) {
    if !seen_grid {
        ctx.err(0, 0, "deck is missing a [GRID] block");
    }
    if !seen_solver {
        ctx.err(0, 0, "deck is missing a [SOLVER] block");
    }
    if deck.materials.is_empty() {
        ctx.err(0, 0, "deck declares no [MATERIAL]");
    }
    let n = deck.grid.elements;

    let check_range = |ctx: &mut Ctx, what: &str, range: Option<(usize, usize)>| {
        if let Some((a, b)) = range {
            if a > b || b >= n {
                ctx.err(0, 0, format!("{what}: element range {a}..{b} invalid for {n} elements"));
            }
        }
    };

    // grid layers
    if deck.grid.layers.is_empty() && !deck.materials.is_empty() {
        // implicit: first material covers the column
    }
    for (name, range) in &deck.grid.layers {
        if !deck.materials.iter().any(|m| m.name == *name) {
            ctx.err(0, 0, format!("[GRID] references undeclared material `{name}`"));
        }
        check_range(ctx, "[GRID] material", *range);
    }

    for mat in &deck.materials {
        if !(mat.s_lr >= 0.0 && mat.s_gr >= 0.0 && mat.s_lr + mat.s_gr < 1.0) {
            ctx.err(0, 0, format!("material `{}`: residual saturations must satisfy 0 <= S_Lr + S_Gr < 1", mat.name));
        }
        if mat.retention == "van_genuchten" && (mat.vg_alpha <= 0.0 || mat.vg_n <= 1.0) {
            ctx.err(0, 0, format!("material `{}`: van_genuchten needs vg_alpha > 0 and vg_n > 1", mat.name));
        }
    }

    for sp in &deck.species.entries {
        if let Some(bio) = &sp.bio {
            if bio.t_lb >= bio.t_ub {
                ctx.err(0, 0, format!("bio species `{}`: t_lb must be below t_ub", sp.name));
            }
            if !(bio.s_l_lb > 0.0 && bio.s_l_lb < bio.s_l_ub && bio.s_l_ub <= 1.0) {
                ctx.err(0, 0, format!("bio species `{}`: need 0 < s_l_lb < s_l_ub <= 1", sp.name));
            }
            for (target, _) in bio.attractants.iter().chain(bio.repellents.iter()) {
                if deck.species.get(target).is_none() {
                    ctx.err(0, 0, format!("bio species `{}`: chemotaxis target `{target}` is not declared", sp.name));
                }
            }
        }
    }

    for rx in &deck.reactions {
        let resolve = |ctx: &mut Ctx, list: &[(String, f64)], what: &str| {
            for (name, _) in list {
                if deck.species.get(name).is_none() {
                    ctx.err(0, 0, format!("reaction `{}`: {what} references undeclared species `{name}`", rx.name));
                }
            }
        };
        resolve(ctx, &rx.stoich, "stoichiometry");
        resolve(ctx, &rx.norder, "norder term");
        resolve(ctx, &rx.mmm, "mmm term");
        resolve(ctx, &rx.competition, "competition term");
        resolve(ctx, &rx.inhibition, "inhibition term");
        for (name, _) in &rx.stoich {
            if let Some(sp) = deck.species.get(name) {
                if !matches!(sp.kind, SpeciesKind::Pri | SpeciesKind::Bio) {
                    ctx.err(0, 0, format!("reaction `{}`: stoichiometry species `{name}` must be PRI or BIO, not {}", rx.name, sp.kind.tag()));
                }
            }
        }
        if let Some(actor) = &rx.bio_actor {
            match deck.species.get(actor) {
                None => ctx.err(0, 0, format!("reaction `{}`: bio actor `{actor}` is not declared", rx.name)),
                Some(sp) if sp.kind != SpeciesKind::Bio => {
                    ctx.err(0, 0, format!("reaction `{}`: bio actor `{actor}` is not a BIO species", rx.name))
                }
                _ => {}
            }
        }
    }

    for eq in &deck.equilibria {
        let (solved, _) = &eq.solved;
        if solved.is_empty() {
            ctx.err(0, 0, format!("equilibrium `{}` has no `solved` species", eq.name));
        } else {
            match deck.species.get(solved) {
                None => ctx.err(0, 0, format!("equilibrium `{}`: solved species `{solved}` is not declared", eq.name)),
                Some(sp) if !matches!(sp.kind, SpeciesKind::Sec | SpeciesKind::Min | SpeciesKind::Gas) => {
                    ctx.err(0, 0, format!("equilibrium `{}`: solved species `{solved}` must be SEC, MIN, or GAS", eq.name))
                }
                _ => {}
            }
        }
        if eq.primaries.is_empty() {
            ctx.err(0, 0, format!("equilibrium `{}` needs at least one primary term", eq.name));
        }
        for (name, _) in &eq.primaries {
            match deck.species.get(name) {
                None => ctx.err(0, 0, format!("equilibrium `{}`: primary `{name}` is not declared", eq.name)),
                Some(sp) if sp.kind != SpeciesKind::Pri => {
                    ctx.err(0, 0, format!("equilibrium `{}`: `{name}` must be a PRI species (chained secondaries are rejected)", eq.name))
                }
                _ => {}
            }
        }
    }

    for rv in &deck.initial.s_l {
        check_range(ctx, "[INITIAL] s_l", rv.range);
    }
    for (name, rv) in &deck.initial.conc {
        if deck.species.get(name).is_none() {
            ctx.err(0, 0, format!("[INITIAL] references undeclared species `{name}`"));
        }
        check_range(ctx, "[INITIAL] conc", rv.range);
    }

    for bc in &deck.boundaries {
        if bc.element >= n {
            ctx.err(0, 0, format!("boundary `{}`: element {} out of range (grid has {n})", bc.name, bc.element));
        }
        match &bc.target {
            BoundaryTarget::Species(name) => {
                if deck.species.get(name).is_none() {
                    ctx.err(0, 0, format!("boundary `{}`: species `{name}` is not declared", bc.name));
                }
            }
            BoundaryTarget::Uptake { fractions } => {
                let sum: f64 = fractions.iter().map(|(_, f)| f).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    ctx.err(0, 0, format!("boundary `{}`: uptake fractions sum to {sum}, not 1", bc.name));
                }
                for (el, _) in fractions {
                    if *el >= n {
                        ctx.err(0, 0, format!("boundary `{}`: uptake element {el} out of range", bc.name));
                    }
                }
            }
            BoundaryTarget::Liquid => {}
        }
    }

    if !(deck.solver.dt_min <= deck.solver.dt_init && deck.solver.dt_init <= deck.solver.dt_max) {
        ctx.err(0, 0, "[SOLVER]: need dt_min <= dt_init <= dt_max");
    }

    if !deck.outputs.times.is_empty() {
        if !deck.outputs.times.windows(2).all(|w| w[0] < w[1]) {
            ctx.err(0, 0, "[OUTPUT] times must be strictly increasing");
        }
    }
    for (name, el) in &deck.outputs.probes {
        if deck.species.get(name).is_none() {
            ctx.err(0, 0, format!("[OUTPUT] probe references undeclared species `{name}`"));
        }
        if *el >= n {
            ctx.err(0, 0, format!("[OUTPUT] probe element {el} out of range"));
        }
    }

    if let Some(sw) = &deck.sweep {
        if sw.targets.is_empty() {
            ctx.err(0, 0, "[SWEEP] declares no target");
        }
        for t in &sw.targets {
            if resolve_target(deck, t).is_none() {
                ctx.err(0, 0, format!("[SWEEP] target `{t}` does not resolve in this deck"));
            }
        }
        if sw.mode == SweepMode::Grid && sw.values.is_empty() {
            ctx.err(0, 0, "[SWEEP] grid mode needs a `values` list");
        }
        if let Some((name, el)) = &sw.summary {
            if deck.species.get(name).is_none() {
                ctx.err(0, 0, format!("[SWEEP] summary species `{name}` is not declared"));
            }
            if *el >= n {
                ctx.err(0, 0, format!("[SWEEP] summary element {el} out of range"));
            }
        }
    }
}

/// Read a sweep-target value: `material.NAME.FIELD`, `reaction.NAME.rate`,
/// `solver.temperature`.
pub fn resolve_target(deck: &SimulationDeck, path: &str) -> Option<f64> {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["material", name, field] => {
            let m = deck.materials.iter().find(|m| m.name == *name)?;
            match *field {
                "k" => Some(m.k),
                "phi" => Some(m.porosity),
                "psi_s" => Some(m.psi_s),
                "b" => Some(m.b),
                "s_lr" => Some(m.s_lr),
                "s_gr" => Some(m.s_gr),
                _ => None,
            }
        }
        ["reaction", name, "rate"] => deck.reactions.iter().find(|r| r.name == *name).map(|r| r.rate),
        ["solver", "temperature"] => Some(deck.solver.temperature),
        _ => None,
    }
}

/// Write a sweep-target value; returns false if the path does not resolve.
pub fn assign_target(deck: &mut SimulationDeck, path: &str, value: f64) -> bool {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["material", name, field] => {
            let Some(m) = deck.materials.iter_mut().find(|m| m.name == *name) else {
                return false;
            };
            let slot = match *field {
                "k" => &mut m.k,
                "phi" => &mut m.porosity,
                "psi_s" => &mut m.psi_s,
                "b" => &mut m.b,
                "s_lr" => &mut m.s_lr,
                "s_gr" => &mut m.s_gr,
                _ => return false,
            };
            *slot = value;
            true
        }
        ["reaction", name, "rate"] => {
            if let Some(r) = deck.reactions.iter_mut().find(|r| r.name == *name) {
                r.rate = value;
                true
            } else {
                false
            }
        }
        ["solver", "temperature"] => {
            deck.solver.temperature = value;
            true
        }
        _ => false,
    }
}

/// Physical lower/upper bounds for a sweep target (redraw outside them).
pub fn target_bounds(path: &str) -> (f64, f64) {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["material", _, "k"] => (0.0, f64::INFINITY),
        ["material", _, "phi"] => (0.0, 1.0),
        ["material", _, "psi_s"] => (f64::NEG_INFINITY, 0.0),
        ["material", _, "b"] => (0.0, f64::INFINITY),
        ["material", _, "s_lr" | "s_gr"] => (0.0, 1.0),
        ["reaction", _, "rate"] => (f64::NEG_INFINITY, f64::INFINITY),
        ["solver", "temperature"] => (0.0, f64::INFINITY),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Warn when molar-mass-weighted stoichiometry does not balance.
/// Virtual species (zero molar mass) are excluded; mg/L species already are
/// mass-based so their stoichiometric numbers count as written.
pub fn validate_reaction_balance(spec: &ReactionSpec, registry: &SpeciesRegistry) -> Vec<String> {
    let mut net = 0.0;
    let mut scale = 0.0;
    let mut any = false;
    for (name, x) in &spec.stoich {
        let Some(sp) = registry.get(name) else { continue };
        let w = match sp.unit {
            ConcUnit::MolPerL => {
                if sp.molar_mass == 0.0 {
                    continue; // virtual tracer
                }
                sp.molar_mass
            }
            ConcUnit::MgPerL => {
                if sp.molar_mass == 0.0 {
                    continue;
                }
                1e-6
            }
        };
        any = true;
        net += x * w;
        scale += (x * w).abs();
    }
    if any && scale > 0.0 && net.abs() / scale > 1e-6 {
        vec![format!(
            "reaction `{}`: mass-weighted stoichiometry imbalance {:.3e} relative",
            spec.name,
            net.abs() / scale
        )]
    } else {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// serialization (canonical form; floats round-trip exactly via Display)
// ---------------------------------------------------------------------------

fn push_pairs(out: &mut String, key: &str, pairs: &[(String, f64)]) {
    if pairs.is_empty() {
        return;
    }
    let _ = write!(out, "{key} =");
    for (name, v) in pairs {
        let _ = write!(out, " {name} {v}");
    }
    out.push('\n');
}

pub fn serialize_deck(deck: &SimulationDeck) -> String {
    let mut s = String::new();
    let g = &deck.grid;
    let _ = writeln!(s, "[GRID]");
    let _ = writeln!(s, "elements = {}", g.elements);
    let _ = writeln!(s, "height = {}", g.height);
    let _ = writeln!(s, "area = {}", g.area);
    for (name, range) in &g.layers {
        match range {
            Some((a, b)) => {
                let _ = writeln!(s, "material = {name} {a} {b}");
            }
            None => {
                let _ = writeln!(s, "material = {name}");
            }
        }
    }
    let _ = writeln!(s, "atmosphere = {}", if g.atmosphere { "on" } else { "off" });

    for m in &deck.materials {
        let _ = writeln!(s, "\n[MATERIAL] {}", m.name);
        let _ = writeln!(s, "k = {}", m.k);
        let _ = writeln!(s, "phi = {}", m.porosity);
        let _ = writeln!(s, "psi_s = {}", m.psi_s);
        let _ = writeln!(s, "b = {}", m.b);
        let _ = writeln!(s, "s_lr = {}", m.s_lr);
        let _ = writeln!(s, "s_gr = {}", m.s_gr);
        let _ = writeln!(s, "rho_m = {}", m.rho_m);
        let _ = writeln!(s, "retention = {}", m.retention);
        if m.retention == "van_genuchten" {
            let _ = writeln!(s, "vg_alpha = {}", m.vg_alpha);
            let _ = writeln!(s, "vg_n = {}", m.vg_n);
        }
    }

    for sp in &deck.species.entries {
        match &sp.bio {
            None => {
                let _ = writeln!(s, "\n[SPECIES] {}", sp.name);
                let _ = writeln!(s, "kind = {}", sp.kind.tag());
                let _ = writeln!(s, "phase = {}", sp.phase.tag());
            }
            Some(bio) => {
                let _ = writeln!(s, "\n[BIO] {}", sp.name);
                let _ = writeln!(s, "detachment = {}", bio.detachment);
                let _ = writeln!(s, "f_l = {}", bio.f_l);
                let _ = writeln!(s, "rho_b = {}", bio.rho_b);
                let _ = writeln!(s, "t_lb = {}", bio.t_lb);
                let _ = writeln!(s, "t_ub = {}", bio.t_ub);
                let _ = writeln!(s, "s_l_lb = {}", bio.s_l_lb);
                let _ = writeln!(s, "s_l_ub = {}", bio.s_l_ub);
                for (name, d) in &bio.attractants {
                    let _ = writeln!(s, "attract = {name} {d}");
                }
                for (name, d) in &bio.repellents {
                    let _ = writeln!(s, "repel = {name} {d}");
                }
            }
        }
        let unit = match sp.unit {
            ConcUnit::MolPerL => "mol/L",
            ConcUnit::MgPerL => "mg/L",
        };
        let _ = writeln!(s, "unit = {unit}");
        let _ = writeln!(s, "diffusivity = {}", sp.diffusivity);
        let _ = writeln!(s, "molar_mass = {}", sp.molar_mass);
    }

    for rx in &deck.reactions {
        let _ = writeln!(s, "\n[REACTION] {}", rx.name);
        let _ = writeln!(s, "rate = {}", rx.rate);
        if let Some(actor) = &rx.bio_actor {
            let _ = writeln!(s, "bio = {actor}");
        }
        push_pairs(&mut s, "stoich", &rx.stoich);
        push_pairs(&mut s, "norder", &rx.norder);
        push_pairs(&mut s, "mmm", &rx.mmm);
        push_pairs(&mut s, "competition", &rx.competition);
        push_pairs(&mut s, "inhibition", &rx.inhibition);
        let form = match rx.inhibition_form {
            InhibitionForm::Standard => "standard",
            InhibitionForm::Literal => "literal",
        };
        let _ = writeln!(s, "inhibition_form = {form}");
    }

    for eq in &deck.equilibria {
        let _ = writeln!(s, "\n[EQUILIBRIUM] {}", eq.name);
        let _ = writeln!(s, "solved = {} {}", eq.solved.0, eq.solved.1);
        for (name, x) in &eq.primaries {
            let _ = writeln!(s, "primary = {name} {x}");
        }
        let _ = writeln!(s, "log10_keq = {}", eq.log10_keq);
    }

    if !deck.initial.s_l.is_empty() || !deck.initial.conc.is_empty() {
        let _ = writeln!(s, "\n[INITIAL]");
        for rv in &deck.initial.s_l {
            match rv.range {
                Some((a, b)) => {
                    let _ = writeln!(s, "s_l = {} {a} {b}", rv.value);
                }
                None => {
                    let _ = writeln!(s, "s_l = {}", rv.value);
                }
            }
        }
        for (name, rv) in &deck.initial.conc {
            match rv.range {
                Some((a, b)) => {
                    let _ = writeln!(s, "conc = {name} {} {a} {b}", rv.value);
                }
                None => {
                    let _ = writeln!(s, "conc = {name} {}", rv.value);
                }
            }
        }
    }

    for bc in &deck.boundaries {
        let _ = writeln!(s, "\n[BOUNDARY] {}", bc.name);
        let _ = writeln!(s, "element = {}", bc.element);
        match &bc.target {
            BoundaryTarget::Liquid => {
                let _ = writeln!(s, "target = liquid");
            }
            BoundaryTarget::Species(name) => {
                let _ = writeln!(s, "target = species {name}");
            }
            BoundaryTarget::Uptake { fractions } => {
                let _ = writeln!(s, "target = uptake");
                for (el, f) in fractions {
                    let _ = writeln!(s, "fraction = {el} {f}");
                }
            }
        }
        match &bc.timing {
            BoundaryTiming::Constant { rate, from, until } => {
                let _ = writeln!(s, "rate = {rate}");
                let _ = writeln!(s, "from = {from}");
                if until.is_finite() {
                    let _ = writeln!(s, "until = {until}");
                }
            }
            BoundaryTiming::Series { path } => {
                let _ = writeln!(s, "series = {path}");
            }
        }
    }

    let so = &deck.solver;
    let _ = writeln!(s, "\n[SOLVER]");
    let _ = writeln!(s, "t_end = {}", so.t_end);
    let _ = writeln!(s, "dt_init = {}", so.dt_init);
    let _ = writeln!(s, "dt_min = {}", so.dt_min);
    let _ = writeln!(s, "dt_max = {}", so.dt_max);
    let _ = writeln!(s, "picard_max = {}", so.picard_max);
    let _ = writeln!(s, "picard_tol = {}", so.picard_tol);
    let _ = writeln!(s, "temperature = {}", so.temperature);
    let _ = writeln!(s, "audit_tol = {}", so.audit_tol);
    let _ = writeln!(s, "kin_rel_tol = {}", so.kin_rel_tol);
    let _ = writeln!(s, "cfl = {}", so.cfl);
    for (key, v) in [
        ("flow", so.flow),
        ("transport", so.transport),
        ("chemotaxis", so.chemotaxis),
        ("kinetics", so.kinetics),
        ("equilibrium", so.equilibrium),
    ] {
        let _ = writeln!(s, "{key} = {}", if v { "on" } else { "off" });
    }

    let o = &deck.outputs;
    let _ = writeln!(s, "\n[OUTPUT]");
    if o.cadence > 0.0 {
        let _ = writeln!(s, "cadence = {}", o.cadence);
    }
    if !o.times.is_empty() {
        let _ = write!(s, "times =");
        for t in &o.times {
            let _ = write!(s, " {t}");
        }
        s.push('\n');
    }
    for (name, el) in &o.probes {
        let _ = writeln!(s, "probe = {name} {el}");
    }
    let _ = writeln!(s, "dir = {}", o.dir);

    if let Some(sw) = &deck.sweep {
        let _ = writeln!(s, "\n[SWEEP]");
        let mode = match sw.mode {
            SweepMode::Gaussian => "gaussian",
            SweepMode::Grid => "grid",
        };
        let _ = writeln!(s, "mode = {mode}");
        for t in &sw.targets {
            let _ = writeln!(s, "target = {t}");
        }
        let _ = writeln!(s, "replicas = {}", sw.replicas);
        let _ = writeln!(s, "rel_std = {}", sw.rel_std);
        let _ = writeln!(s, "seed = {}", sw.seed);
        if !sw.values.is_empty() {
            let _ = write!(s, "values =");
            for v in &sw.values {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        if let Some((name, el)) = &sw.summary {
            let _ = writeln!(s, "summary = {name} {el}");
        }
    }

    s
}

/// Load an auxiliary time-series file: first column time in days, second the
/// value; `#` comments allowed. Times must be strictly increasing.
pub fn parse_series(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for (lineno0, raw) in text.lines().enumerate() {
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 2 {
            return Err(format!("line {}: need time and value columns", lineno0 + 1));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|_| format!("line {}: bad time `{}`", lineno0 + 1, fields[0]))?;
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| format!("line {}: bad value `{}`", lineno0 + 1, fields[1]))?;
        if let Some((prev, _)) = out.last() {
            if t <= *prev {
                return Err(format!("line {}: times must be strictly increasing", lineno0 + 1));
            }
        }
        out.push((t, v));
    }
    if out.is_empty() {
        return Err("series file has no samples".to_string());
    }
    Ok(out)
}

/// Linear interpolation with constant extrapolation beyond the ends.
pub fn sample_series(series: &[(f64, f64)], t: f64) -> f64 {
    match series {
        [] => 0.0,
        [(t0, v0), ..] if t <= *t0 => {
            let _ = v0;
            series[0].1
        }
        _ => {
            let (tn, vn) = series[series.len() - 1];
            if t >= tn {
                return vn;
            }
            let idx = series.partition_point(|(ti, _)| *ti <= t);
            let (t0, v0) = series[idx - 1];
            let (t1, v1) = series[idx];
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}
