//! Kinetic reaction networks per element: Michaelis-Menten-Monod rate laws
//! with competition and inhibition, microbial response gating, and an
//! adaptive embedded Runge-Kutta integrator (Cash-Karp 4/5).

use crate::core::{conc_to_mass, mass_to_conc, ConcUnit};
use crate::deck::{InhibitionForm, ReactionSpec, SimulationDeck, SpeciesKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KineticsError {
    #[error("kinetics step failed to meet tolerance at minimum internal step (t={t:.3e} s of {dt:.3e} s)")]
    StiffnessFailure { t: f64, dt: f64 },
}

/// Temperature and saturation bounds gating one BIO actor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseParams {
    pub t_lb: f64,
    pub t_ub: f64,
    pub s_l_lb: f64,
    pub s_l_ub: f64,
    pub s_lr: f64,
    pub s_gr: f64,
    pub f_l: f64,
}

/// Saturation response before normalization.
fn f_sl_raw(s_l: f64, p: &ResponseParams) -> f64 {
    s_l / (p.s_l_lb + s_l) * p.s_l_ub / (p.s_l_ub + s_l)
}

/// Microbial response f_B = min{f(S_B), f(T), f(S_L)/max f(S_L)} in [0, 1].
/// The f(S_L) normalization uses its analytic maximum at sqrt(LB*UB).
pub fn microbial_gate(s_l: f64, s_b: f64, temp: f64, p: &ResponseParams) -> f64 {
    // temperature window: logistic shoulders at both bounds
    let f_t = 1.0 / (1.0 + (p.t_lb - temp).exp()) / (1.0 + (temp - p.t_ub).exp());

    let f_sl_max = f_sl_raw((p.s_l_lb * p.s_l_ub).sqrt(), p);
    let f_sl = f_sl_raw(s_l.max(0.0), p) / f_sl_max;

    // space & water availability for further growth
    let s_g = (1.0 - s_l - s_b).max(0.0);
    let pore = 1.0 - p.s_lr - p.s_gr;
    let a = if pore > 0.0 { 1.0 - (s_b - p.s_lr) / pore } else { 0.0 };
    let b = if s_l > 0.0 { 1.0 - p.f_l * s_b / s_l } else { if s_b > 0.0 { 0.0 } else { 1.0 } };
    let c = if s_g > 0.0 {
        1.0 - (1.0 - p.f_l) * s_b / s_g
    } else if (1.0 - p.f_l) * s_b > 0.0 {
        0.0
    } else {
        1.0
    };
    let f_sb = a.min(b).min(c);

    f_sb.min(f_t).min(f_sl).clamp(0.0, 1.0)
}

/// Reaction with all species references resolved to registry indices.
#[derive(Debug, Clone)]
pub struct CompiledReaction {
    pub rate: f64,
    pub stoich: Vec<(usize, f64)>,
    pub norder: Vec<(usize, f64)>,
    pub mmm: Vec<(usize, f64)>,
    pub competition: Vec<(usize, f64)>,
    pub inhibition: Vec<(usize, f64)>,
    pub inhibition_form: InhibitionForm,
    pub bio_actor: Option<usize>,
}

pub fn compile_reaction(spec: &ReactionSpec, deck: &SimulationDeck) -> CompiledReaction {
    let idx = |name: &str| deck.species.index_of(name).expect("validated species reference");
    CompiledReaction {
        rate: spec.rate,
        stoich: spec.stoich.iter().map(|(n, x)| (idx(n), *x)).collect(),
        norder: spec.norder.iter().map(|(n, x)| (idx(n), *x)).collect(),
        mmm: spec.mmm.iter().map(|(n, x)| (idx(n), *x)).collect(),
        competition: spec.competition.iter().map(|(n, x)| (idx(n), *x)).collect(),
        inhibition: spec.inhibition.iter().map(|(n, x)| (idx(n), *x)).collect(),
        inhibition_form: spec.inhibition_form,
        bio_actor: spec.bio_actor.as_ref().map(|n| idx(n)),
    }
}

/// Reaction velocity R = r f_B prod(X^n) prod(X/(X+K(1+sum X_c/K_c))) prod(inhib).
/// Concentrations indexed like the compiled reaction; f_B = 1 without a BIO actor.
pub fn reaction_velocity(rx: &CompiledReaction, conc: &[f64], f_b: f64) -> f64 {
    let mut r = rx.rate * f_b;
    if r == 0.0 {
        return 0.0;
    }
    for &(i, e) in &rx.norder {
        let x = conc[i].max(0.0);
        if x == 0.0 && e > 0.0 {
            return 0.0;
        }
        r *= x.powf(e);
    }
    // competitive species inflate every half-saturation constant
    let mut comp = 1.0;
    for &(i, k) in &rx.competition {
        comp += conc[i].max(0.0) / k;
    }
    for &(i, k) in &rx.mmm {
        let x = conc[i].max(0.0);
        r *= x / (x + k * comp);
    }
    for &(i, k) in &rx.inhibition {
        let x = conc[i].max(0.0);
        r *= match rx.inhibition_form {
            InhibitionForm::Standard => k / (x + k),
            InhibitionForm::Literal => x / (x + k),
        };
    }
    r
}

/// Static per-species data the integrator needs.
#[derive(Debug, Clone)]
pub struct SpeciesPhys {
    pub unit: ConcUnit,
    pub molar_mass: f64,
    /// BIO species: (rho_b, f_l); None otherwise.
    pub bio: Option<(f64, f64)>,
    pub kinetic: bool,
}

pub fn species_phys(deck: &SimulationDeck) -> Vec<SpeciesPhys> {
    deck.species
        .entries
        .iter()
        .map(|sp| SpeciesPhys {
            unit: sp.unit,
            molar_mass: sp.molar_mass,
            bio: sp.bio.as_ref().map(|b| (b.rho_b, b.f_l)),
            kinetic: matches!(sp.kind, SpeciesKind::Pri | SpeciesKind::Bio),
        })
        .collect()
}

/// One element's kinetic context for a step.
pub struct ElementEnv<'a> {
    pub phys: &'a [SpeciesPhys],
    pub reactions: &'a [CompiledReaction],
    /// Per-reaction response params for the BIO actor (None when ungated).
    pub responses: &'a [Option<ResponseParams>],
    pub porosity: f64,
    pub volume: f64,
    /// Saturations entering the step; S_L and S_B move with biomass in-ODE.
    pub s_l0: f64,
    pub s_b0: f64,
    pub temp: f64,
    pub rel_tol: f64,
    /// f_L-weighted biomass saturation at step start; set by the integrator.
    pub s_b_fl0_cache: f64,
}

pub struct ElementOutcome {
    /// Net biomass saturation change over the step.
    pub d_s_b: f64,
    /// Liquid saturation change from biomass water uptake/release.
    pub d_s_l: f64,
    /// Net mass change per species, kg (ledger: + production, - destruction).
    pub d_mass: Vec<f64>,
}

const ABS_FLOOR: f64 = 1e-30;

/// Biomass saturation implied by the current masses.
fn bio_saturations(env: &ElementEnv, masses: &[f64]) -> (f64, f64) {
    // returns (s_b, f_l-weighted s_b) summed over BIO species
    let pv = env.porosity * env.volume;
    let mut s_b = 0.0;
    let mut s_b_fl = 0.0;
    for (i, p) in env.phys.iter().enumerate() {
        if let Some((rho_b, f_l)) = p.bio {
            let s = masses[i].max(0.0) / (rho_b * pv);
            s_b += s;
            s_b_fl += f_l * s;
        }
    }
    (s_b, s_b_fl)
}

fn rhs(env: &ElementEnv, masses: &[f64], dm: &mut [f64]) {
    let (s_b, s_b_fl) = bio_saturations(env, masses);
    // liquid shrinks by the f_L-weighted biomass growth since step start
    let s_l = (env.s_l0 - (s_b_fl - env.s_b_fl0_cache)).max(1e-9);
    let liters = env.porosity * s_l * env.volume * 1000.0;

    let conc: Vec<f64> = masses
        .iter()
        .zip(env.phys)
        .map(|(m, p)| mass_to_conc(m.max(0.0), p.unit, p.molar_mass, liters))
        .collect();

    dm.iter_mut().for_each(|v| *v = 0.0);
    for (rx, resp) in env.reactions.iter().zip(env.responses) {
        let f_b = match resp {
            Some(p) => microbial_gate(s_l, s_b, env.temp, p),
            None => 1.0,
        };
        let r = reaction_velocity(rx, &conc, f_b);
        if r == 0.0 {
            continue;
        }
        for &(i, x) in &rx.stoich {
            // dX/dt = x_k R in the species' own unit, converted to mass flow
            dm[i] += conc_to_mass(x * r, env.phys[i].unit, env.phys[i].molar_mass, liters);
        }
    }
}

// Cash-Karp tableau
const CK_A: [[f64; 5]; 5] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0, 0.0, 0.0],
    [-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0, 0.0],
    [
        1631.0 / 55296.0,
        175.0 / 512.0,
        575.0 / 13824.0,
        44275.0 / 110592.0,
        253.0 / 4096.0,
    ],
];
const CK_B5: [f64; 6] = [
    37.0 / 378.0,
    0.0,
    250.0 / 621.0,
    125.0 / 594.0,
    0.0,
    512.0 / 1771.0,
];
const CK_B4: [f64; 6] = [
    2825.0 / 27648.0,
    0.0,
    18575.0 / 48384.0,
    13525.0 / 55296.0,
    277.0 / 14336.0,
    1.0 / 4.0,
];

/// Integrate one element's kinetic masses over `dt` seconds.
pub fn step_kinetics_element(
    env: &mut ElementEnv,
    masses: &mut [f64],
    dt: f64,
) -> Result<ElementOutcome, KineticsError> {
    let n = masses.len();
    let m0 = masses.to_vec();
    let (s_b_start, s_b_fl_start) = bio_saturations(env, masses);
    debug_assert!((s_b_start - env.s_b0).abs() < 1e-9 || env.s_b0 == 0.0);
    env.s_b_fl0_cache = s_b_fl_start;

    let mut t = 0.0;
    let mut h = dt;
    let mut k = vec![vec![0.0; n]; 6];
    let mut ytmp = vec![0.0; n];
    let min_h = (dt * 1e-12).max(1e-12);

    while t < dt {
        h = h.min(dt - t);
        rhs(env, masses, &mut k[0]);
        let mut stage_ok = true;
        for s in 0..5 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    acc += CK_A[s][j] * kj[i];
                }
                ytmp[i] = masses[i] + h * acc;
            }
            let (ks, rest) = k.split_at_mut(s + 1);
            let _ = ks;
            rhs(env, &ytmp, &mut rest[0]);
        }

        // 5th and embedded 4th order solutions
        let mut err = 0.0f64;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut a5 = 0.0;
            let mut a4 = 0.0;
            for j in 0..6 {
                a5 += CK_B5[j] * k[j][i];
                a4 += CK_B4[j] * k[j][i];
            }
            y5[i] = masses[i] + h * a5;
            let y4 = masses[i] + h * a4;
            let scale = ABS_FLOOR + env.rel_tol * masses[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4) / scale).abs());
        }

        // reject steps that drive any mass significantly negative
        let neg_tol = ABS_FLOOR + 1e-12 * m0.iter().cloned().fold(0.0, f64::max);
        if y5.iter().any(|&v| v < -neg_tol) {
            stage_ok = false;
        }

        if err <= 1.0 && stage_ok {
            for i in 0..n {
                masses[i] = y5[i].max(0.0);
            }
            t += h;
            let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
            h *= grow.clamp(0.2, 5.0);
        } else {
            let shrink = if !stage_ok {
                0.5
            } else {
                (0.9 * err.powf(-0.25)).clamp(0.1, 0.5)
            };
            h *= shrink;
            if h < min_h {
                return Err(KineticsError::StiffnessFailure { t, dt });
            }
        }
    }

    let (s_b_end, s_b_fl_end) = bio_saturations(env, masses);
    let d_mass = masses.iter().zip(&m0).map(|(a, b)| a - b).collect();
    Ok(ElementOutcome {
        d_s_b: s_b_end - s_b_start,
        d_s_l: -(s_b_fl_end - s_b_fl_start),
        d_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_env<'a>(
        phys: &'a [SpeciesPhys],
        reactions: &'a [CompiledReaction],
        responses: &'a [Option<ResponseParams>],
    ) -> ElementEnv<'a> {
        ElementEnv {
            phys,
            reactions,
            responses,
            porosity: 0.5,
            volume: 1.0,
            s_l0: 1.0,
            s_b0: 0.0,
            temp: 293.15,
            rel_tol: 1e-8,
            s_b_fl0_cache: 0.0,
        }
    }

    fn mol_species() -> SpeciesPhys {
        SpeciesPhys {
            unit: ConcUnit::MolPerL,
            molar_mass: 0.1,
            bio: None,
            kinetic: true,
        }
    }

    #[test]
    fn velocity_half_saturation() {
        let rx = CompiledReaction {
            rate: 2.0,
            stoich: vec![(0, -1.0)],
            norder: vec![],
            mmm: vec![(0, 0.5)],
            competition: vec![],
            inhibition: vec![],
            inhibition_form: InhibitionForm::Standard,
            bio_actor: None,
        };
        // X = K -> factor 1/2
        assert!((reaction_velocity(&rx, &[0.5], 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn velocity_inhibition_limits() {
        let mut rx = CompiledReaction {
            rate: 1.0,
            stoich: vec![],
            norder: vec![],
            mmm: vec![],
            competition: vec![],
            inhibition: vec![(0, 2.0)],
            inhibition_form: InhibitionForm::Standard,
            bio_actor: None,
        };
        assert_eq!(reaction_velocity(&rx, &[0.0], 1.0), 1.0);
        assert!((reaction_velocity(&rx, &[2.0], 1.0) - 0.5).abs() < 1e-15);
        rx.inhibition_form = InhibitionForm::Literal;
        assert_eq!(reaction_velocity(&rx, &[0.0], 1.0), 0.0);
    }

    #[test]
    fn velocity_competition_inflates_k() {
        let rx = CompiledReaction {
            rate: 1.0,
            stoich: vec![],
            norder: vec![],
            mmm: vec![(0, 1.0)],
            competition: vec![(1, 2.0)],
            inhibition: vec![],
            inhibition_form: InhibitionForm::Standard,
            bio_actor: None,
        };
        // X=1, K=1, competitor 2 with K_c=2 -> X/(X + 1*(1+1)) = 1/3
        assert!((reaction_velocity(&rx, &[1.0, 2.0], 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gate_temperature_shoulder() {
        let p = ResponseParams {
            t_lb: 288.15,
            t_ub: 313.15,
            s_l_lb: 0.3,
            s_l_ub: 0.8,
            s_lr: 0.0,
            s_gr: 0.0,
            f_l: 0.5,
        };
        // at T = T_LB the first logistic factor is exactly 1/2
        let s_star = (0.3f64 * 0.8).sqrt();
        let f = microbial_gate(s_star, 0.0, 288.15, &p);
        assert!((f - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gate_sl_raw_value() {
        let p = ResponseParams {
            t_lb: 0.0,
            t_ub: 1000.0,
            s_l_lb: 0.3,
            s_l_ub: 0.8,
            s_lr: 0.0,
            s_gr: 0.0,
            f_l: 0.5,
        };
        // f(S_L = LB) = 0.5 * 0.8/1.1 before normalization
        let raw = f_sl_raw(0.3, &p);
        assert!((raw - 0.5 * 0.8 / 1.1).abs() < 1e-12);
        // gate is bounded by 1 and no biomass constraint applies at S_B = 0
        let f = microbial_gate(0.3, 0.0, 500.0, &p);
        assert!(f <= 1.0 && f > 0.0);
    }

    #[test]
    fn first_order_decay_matches_analytic() {
        let phys = vec![mol_species(), mol_species()];
        let rx = vec![CompiledReaction {
            rate: 1e-3,
            stoich: vec![(0, -1.0), (1, 1.0)],
            norder: vec![(0, 1.0)],
            mmm: vec![],
            competition: vec![],
            inhibition: vec![],
            inhibition_form: InhibitionForm::Standard,
            bio_actor: None,
        }];
        let resp = vec![None];
        let mut env = bare_env(&phys, &rx, &resp);
        let liters = 0.5 * 1.0 * 1000.0;
        let mut masses = vec![conc_to_mass(1.0, ConcUnit::MolPerL, 0.1, liters), 0.0];
        let total0: f64 = masses.iter().sum();
        let dt = 2000.0;
        step_kinetics_element(&mut env, &mut masses, dt).unwrap();
        let c = mass_to_conc(masses[0], ConcUnit::MolPerL, 0.1, liters);
        let expect = (-1e-3 * dt as f64).exp();
        assert!((c - expect).abs() / expect < 1e-6, "c={c} expect={expect}");
        let total: f64 = masses.iter().sum();
        assert!((total - total0).abs() / total0 < 1e-12);
    }

    #[test]
    fn eps_equilibrium_concentration() {
        // production f_B r B balanced by first-order loss: EPS_eq = f_B r B / delta
        let phys = vec![
            SpeciesPhys {
                unit: ConcUnit::MgPerL,
                molar_mass: 0.0,
                bio: None,
                kinetic: true,
            },
            SpeciesPhys {
                unit: ConcUnit::MgPerL,
                molar_mass: 0.0,
                bio: None,
                kinetic: true,
            },
        ];
        let rx = vec![
            CompiledReaction {
                rate: 1e-8,
                stoich: vec![(1, 1.0)],
                norder: vec![(0, 1.0)],
                mmm: vec![],
                competition: vec![],
                inhibition: vec![],
                inhibition_form: InhibitionForm::Standard,
                bio_actor: None,
            },
            CompiledReaction {
                rate: 1e-6,
                stoich: vec![(1, -1.0)],
                norder: vec![(1, 1.0)],
                mmm: vec![],
                competition: vec![],
                inhibition: vec![],
                inhibition_form: InhibitionForm::Standard,
                bio_actor: None,
            },
        ];
        let resp = vec![None, None];
        let mut env = bare_env(&phys, &rx, &resp);
        let liters = 0.5 * 1000.0;
        let mut masses = vec![conc_to_mass(100.0, ConcUnit::MgPerL, 0.0, liters), 0.0];
        // integrate well past the loss timescale 1/delta
        for _ in 0..20 {
            step_kinetics_element(&mut env, &mut masses, 2e6).unwrap();
        }
        let eps = mass_to_conc(masses[1], ConcUnit::MgPerL, 0.0, liters);
        assert!((eps - 1.0).abs() < 1e-3, "EPS_eq = {eps}");
    }
}
