//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line for
//! its criterion; a FAIL also fails the test with the offending numbers.

use retort::core::GridSpec;
use retort::deck::{assign_target, parse_deck, serialize_deck, SimulationDeck, SpeciesKind};
use retort::equilibrium::{equilibrium_residual, solve_equilibria, CompiledEquilibrium};
use retort::flow::{step_liquid, FlowField, FlowSettings, SPECIFIC_STORAGE};
use retort::hydraulics::{cosby_pedotransfer, BrooksCorey, MaterialRecord, RetentionModel};
use retort::kinetics::{step_kinetics_element, CompiledReaction, ElementEnv, SpeciesPhys};
use retort::orchestrator::{compute_delta15n, run_simulation, RunOutputs};
use retort::sweep::{generate_replicas, SplitMix64};
use retort::transport::{advect_diffuse, TransportCtx};
use std::fs;
use std::path::PathBuf;

fn decks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("decks")
}

fn load_deck(name: &str) -> SimulationDeck {
    let text = fs::read_to_string(decks_dir().join(name)).unwrap();
    parse_deck(&text).unwrap_or_else(|d| panic!("{name} does not parse: {d:?}"))
}

fn run_deck(deck: SimulationDeck) -> RunOutputs {
    run_simulation(deck, &decks_dir()).unwrap_or_else(|e| panic!("run failed: {e}"))
}

fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("[PRIMARY {criterion}] {verdict} — {detail}");
    assert!(pass, "[PRIMARY {criterion}] FAIL — {detail}");
}

// ---------------------------------------------------------------------------
// 1. Pedotransfer fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_pedotransfer_fidelity() {
    // four silt-loam profile rows: texture -> (phi, b, psi_s m, k m^2)
    let rows = [
        (16.0, 60.0, 24.0, 0.469, 6.73, -0.47, 1.66e-13),
        (9.0, 66.0, 25.0, 0.478, 6.88, -0.58, 1.29e-13),
        (12.0, 73.0, 15.0, 0.474, 5.29, -0.53, 1.44e-13),
        (12.0, 68.0, 20.0, 0.474, 6.09, -0.53, 1.44e-13),
        // sand column from the clogging study; its published phi = 0.46 is not
        // producible by the Cosby regressions for any texture (phi(90% sand)
        // = 0.3756), so this row is expected to fail on phi alone.
        (90.0, 5.0, 5.0, 0.46, 3.705, -5.02e-2, 2.24e-12),
    ];
    let mut fails = Vec::new();
    for (sa, si, cl, phi_e, b_e, psi_e, k_e) in rows {
        let (phi, b, psi, k) = cosby_pedotransfer(sa, si, cl).unwrap();
        if (phi - phi_e).abs() / phi_e >= 0.05 {
            fails.push(format!("sand={sa}: phi {phi:.4} vs {phi_e}"));
        }
        if (b - b_e).abs() / b_e >= 0.05 {
            fails.push(format!("sand={sa}: b {b:.4} vs {b_e}"));
        }
        if (psi - psi_e).abs() / psi_e.abs() >= 0.05 {
            fails.push(format!("sand={sa}: psi_s {psi:.4} vs {psi_e}"));
        }
        if (k - k_e).abs() / k_e >= 0.10 {
            fails.push(format!("sand={sa}: k {k:.3e} vs {k_e:.3e}"));
        }
    }
    report(
        "1",
        fails.is_empty(),
        &if fails.is_empty() {
            "all pedotransfer rows within 5% (phi, b, psi_s) / 10% (k)".to_string()
        } else {
            format!("pedotransfer mismatches: {}", fails.join("; "))
        },
    );
}

// ---------------------------------------------------------------------------
// 2. Hydrostatic no-flow
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_hydrostatic_no_flow() {
    let n = 20;
    let grid = GridSpec::column(n, 0.1, 1.0, 0);
    let mat = MaterialRecord {
        name: "sand".into(),
        k: 1e-12,
        porosity: 0.4,
        psi_s: -0.1,
        b: 4.0,
        s_lr: 0.05,
        ..Default::default()
    };
    let mats = vec![mat];
    let bc = BrooksCorey;
    let models: Vec<&dyn RetentionModel> = vec![&bc];
    let mut s_l = vec![1.0; n];
    let s_b = vec![0.0; n];
    // hydrostatic pressure: total head h + z constant, water table at the top
    let h0: Vec<f64> = (0..n).map(|i| 0.05 + (grid.z[0] - grid.z[i])).collect();
    let mut field = FlowField { h: h0.clone() };
    let settings = FlowSettings {
        picard_max: 40,
        picard_tol: 1e-9,
        free_drainage: false, // closed column
    };
    let sources = vec![0.0; n];
    let ss_h = SPECIFIC_STORAGE * 1000.0 * 9.81;
    let stored = |s_l: &[f64], h: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let extra = if h[i] > mats[0].psi_s { ss_h * (h[i] - mats[0].psi_s) } else { 0.0 };
                (mats[0].porosity * s_l[i] + extra) * grid.volume[i] * 1000.0
            })
            .sum()
    };
    let m0 = stored(&s_l, &field.h);
    let mut vmax = 0.0f64;
    for _ in 0..240 {
        // 10 days in hourly steps
        let res = step_liquid(
            &mut s_l, &s_b, &mut field, &grid, &mats, &models, &sources, &settings, 1e-3,
            1000.0, 3600.0,
        )
        .expect("hydrostatic step must converge");
        for &v in &res.v {
            vmax = vmax.max(v.abs());
        }
        assert_eq!(res.bottom_out, 0.0);
    }
    let drift = (stored(&s_l, &field.h) - m0).abs() / m0;
    report(
        "2",
        vmax < 1e-12 && drift < 1e-10,
        &format!("max interface flux {vmax:.2e} m/s, water drift {drift:.2e} relative over 10 d"),
    );
}

// ---------------------------------------------------------------------------
// 3. Conservation under transport + fine-step reference
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_transport_conservation() {
    let n = 10;
    let grid = GridSpec::column(n, 0.1, 1.0, 0);
    let phi = vec![0.4; n];
    let sl = vec![0.5; n];
    // nonzero circulation: alternating up/down interior velocities
    let v: Vec<f64> = (0..n - 1)
        .map(|i| if i % 2 == 0 { 8e-7 } else { -5e-7 })
        .collect();
    let coarse_ctx = TransportCtx {
        grid: &grid,
        porosity: &phi,
        s_l: &sl,
        v: &v,
        bottom_out: 0.0, // closed
        cfl: 0.9,
    };
    let mut pulse = vec![0.0; n];
    pulse[2] = 1.0;
    pulse[3] = 0.6;
    let total0: f64 = pulse.iter().sum();

    let dt = 40.0;
    let steps = 1000;
    let mut coarse = pulse.clone();
    for _ in 0..steps {
        let out = advect_diffuse(&coarse_ctx, &mut coarse, 1e-9, 1.0, None, dt).unwrap();
        assert_eq!(out, 0.0, "closed column leaked through the bottom");
    }
    let drift = (coarse.iter().sum::<f64>() - total0).abs() / total0;

    // fine-step explicit reference: same semi-discrete system, tiny Courant
    let fine_ctx = TransportCtx { cfl: 0.002, ..coarse_ctx };
    let mut fine = pulse.clone();
    for _ in 0..steps {
        advect_diffuse(&fine_ctx, &mut fine, 1e-9, 1.0, None, dt).unwrap();
    }
    let peak = fine.iter().cloned().fold(0.0f64, f64::max);
    let linf = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / peak;
    report(
        "3",
        drift < 1e-8 && linf < 1e-4,
        &format!("mass drift {drift:.2e} over {steps} steps, L-inf vs fine-step reference {linf:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Kinetics oracle equivalence
// ---------------------------------------------------------------------------

/// Independent right-hand side in mass space, written from the documented
/// term forms (not calling the library's velocity code).
struct RefNet {
    phys: Vec<SpeciesPhys>,
    reactions: Vec<CompiledReaction>,
    liters: f64,
}

impl RefNet {
    fn kg_per_unit(&self, sp: usize) -> f64 {
        match self.phys[sp].unit {
            retort::core::ConcUnit::MolPerL => self.phys[sp].molar_mass,
            retort::core::ConcUnit::MgPerL => 1e-6,
        }
    }

    fn rhs(&self, m: &[f64], dm: &mut [f64]) {
        let conc: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(i, &mm)| mm.max(0.0) / (self.kg_per_unit(i) * self.liters))
            .collect();
        dm.iter_mut().for_each(|d| *d = 0.0);
        for rx in &self.reactions {
            let mut r = rx.rate;
            for &(i, e) in &rx.norder {
                r *= conc[i].powf(e);
            }
            let mut infl = 1.0;
            for &(i, k) in &rx.competition {
                infl += conc[i] / k;
            }
            for &(i, k) in &rx.mmm {
                r *= conc[i] / (conc[i] + k * infl);
            }
            for &(i, k) in &rx.inhibition {
                r *= match rx.inhibition_form {
                    retort::deck::InhibitionForm::Standard => k / (conc[i] + k),
                    retort::deck::InhibitionForm::Literal => conc[i] / (conc[i] + k),
                };
            }
            if !r.is_finite() || r == 0.0 {
                continue;
            }
            for &(i, x) in &rx.stoich {
                dm[i] += x * r * self.kg_per_unit(i) * self.liters;
            }
        }
    }

    fn rk4(&self, m: &mut [f64], dt_total: f64, steps: usize) {
        let n = m.len();
        let h = dt_total / steps as f64;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        for _ in 0..steps {
            self.rhs(m, &mut k1);
            for i in 0..n {
                tmp[i] = m[i] + 0.5 * h * k1[i];
            }
            self.rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = m[i] + 0.5 * h * k2[i];
            }
            self.rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = m[i] + h * k3[i];
            }
            self.rhs(&tmp, &mut k4);
            for i in 0..n {
                m[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

#[test]
fn criterion_4_kinetics_oracle() {
    let mut rng = SplitMix64::new(0x6b1e);
    run_kinetics_oracle(&mut rng);
}

fn run_kinetics_oracle(rng: &mut SplitMix64) {
    let liters = 0.4 * 0.5 * 0.1 * 1000.0; // phi s_l V
    let mut worst = 0.0f64;
    for net_id in 0..100 {
        let n_species = 2 + (rng.next_u64() % 4) as usize; // 2..=5
        let n_rx = 1 + (rng.next_u64() % 3) as usize; // 1..=3
        let phys: Vec<SpeciesPhys> = (0..n_species)
            .map(|_| SpeciesPhys {
                unit: if rng.next_u64() % 2 == 0 {
                    retort::core::ConcUnit::MolPerL
                } else {
                    retort::core::ConcUnit::MgPerL
                },
                molar_mass: 0.02 + 0.2 * rng.next_f64(),
                bio: None,
                kinetic: true,
            })
            .collect();
        let conc0: Vec<f64> = (0..n_species).map(|_| 1e-4 + 1e-3 * rng.next_f64()).collect();
        let kg_per = |sp: usize| match phys[sp].unit {
            retort::core::ConcUnit::MolPerL => phys[sp].molar_mass,
            retort::core::ConcUnit::MgPerL => 1e-6,
        };
        let mut reactions = Vec::new();
        for _ in 0..n_rx {
            let reactant = (rng.next_u64() as usize) % n_species;
            let product = (rng.next_u64() as usize) % n_species;
            let mut rx = CompiledReaction {
                rate: 1e-5 * (1.0 + 4.0 * rng.next_f64()),
                stoich: vec![(reactant, -1.0)],
                norder: vec![],
                // every consumed species is MMM-limited so nothing crosses zero
                mmm: vec![(reactant, conc0[reactant] * (0.2 + rng.next_f64()))],
                competition: vec![],
                inhibition: vec![],
                inhibition_form: retort::deck::InhibitionForm::Standard,
                bio_actor: None,
            };
            if product != reactant {
                rx.stoich.push((product, 0.5 + rng.next_f64()));
            }
            if rng.next_u64() % 2 == 0 {
                let other = (rng.next_u64() as usize) % n_species;
                if other != reactant {
                    rx.competition.push((other, conc0[other] * (0.5 + rng.next_f64())));
                }
            }
            if rng.next_u64() % 2 == 0 {
                let other = (rng.next_u64() as usize) % n_species;
                rx.inhibition.push((other, conc0[other] * (0.5 + rng.next_f64())));
                if rng.next_u64() % 2 == 0 {
                    rx.inhibition_form = retort::deck::InhibitionForm::Literal;
                }
            }
            if rng.next_u64() % 2 == 0 {
                rx.norder.push((reactant, 1.0));
            }
            reactions.push(rx);
        }
        let masses0: Vec<f64> = (0..n_species).map(|i| conc0[i] * kg_per(i) * liters).collect();

        let reference = RefNet { phys: phys.clone(), reactions: reactions.clone(), liters };
        let responses: Vec<Option<retort::kinetics::ResponseParams>> = vec![None; reactions.len()];

        let mut m_engine = masses0.clone();
        let mut m_ref = masses0.clone();
        let horizon = 2.0e4;
        let n_checkpoints = 10;
        for _ in 0..n_checkpoints {
            let dt = horizon / n_checkpoints as f64;
            let mut env = ElementEnv {
                phys: &phys,
                reactions: &reactions,
                responses: &responses,
                porosity: 0.4,
                volume: 0.1,
                s_l0: 0.5,
                s_b0: 0.0,
                temp: 293.15,
                rel_tol: 1e-9,
                s_b_fl0_cache: 0.0,
            };
            step_kinetics_element(&mut env, &mut m_engine, dt)
                .unwrap_or_else(|e| panic!("network {net_id}: engine failed: {e}"));
            reference.rk4(&mut m_ref, dt, 4000);
            let floor = 1e-9 * masses0.iter().sum::<f64>();
            for i in 0..n_species {
                let rel = (m_engine[i] - m_ref[i]).abs() / m_ref[i].abs().max(floor);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-6,
                    "[PRIMARY 4] FAIL — network {net_id} species {i}: engine {} vs reference {} (rel {rel:.2e})",
                    m_engine[i],
                    m_ref[i]
                );
            }
        }
    }
    report("4", true, &format!("100 random networks, worst checkpoint deviation {worst:.2e} (tol 1e-6)"));
}

// ---------------------------------------------------------------------------
// 5. Equilibrium residuals
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_equilibrium_residuals() {
    let mut rng = SplitMix64::new(0xe9_1b);
    let mut worst_res = 0.0f64;
    let mut worst_idem = 0.0f64;
    for spec_id in 0..1000 {
        let n = 2 + (rng.next_u64() % 4) as usize;
        let mut conc: Vec<f64> = (0..n).map(|_| 10f64.powf(-8.0 * rng.next_f64())).collect();
        let sign = |r: &mut SplitMix64| if r.next_u64() % 2 == 0 { 1.0 } else { -1.0 };
        let eq = CompiledEquilibrium {
            name: format!("random_{spec_id}"),
            solved: (0, sign(&mut rng) * (0.5 + 1.5 * rng.next_f64())),
            primaries: (1..n)
                .map(|j| (j, sign(&mut rng) * (0.25 + 1.75 * rng.next_f64())))
                .collect(),
            log10_keq: 16.0 * rng.next_f64() - 8.0,
        };
        let errs = solve_equilibria(&mut conc, std::slice::from_ref(&eq));
        assert!(errs.is_empty(), "spec {spec_id}: unexpected singularity");
        let res = equilibrium_residual(&conc, &eq).abs();
        worst_res = worst_res.max(res);
        assert!(res < 1e-10, "[PRIMARY 5] FAIL — spec {spec_id}: residual {res:.2e}");
        let solved_before = conc[0];
        solve_equilibria(&mut conc, std::slice::from_ref(&eq));
        let idem = (conc[0] - solved_before).abs() / solved_before.abs().max(1e-300);
        worst_idem = worst_idem.max(idem);
        assert!(idem < 1e-14, "[PRIMARY 5] FAIL — spec {spec_id}: idempotence drift {idem:.2e}");
    }
    report(
        "5",
        true,
        &format!("1000 specs: worst residual {worst_res:.2e} (tol 1e-10), worst idempotence drift {worst_idem:.2e} (tol 1e-14)"),
    );
}

// ---------------------------------------------------------------------------
// 6. Case 2 desk-scale reproduction
// ---------------------------------------------------------------------------

fn eps_total_series(out: &RunOutputs) -> Vec<(f64, f64)> {
    let sp = out.species_names.iter().position(|n| n == "eps").unwrap();
    out.snapshots
        .iter()
        .map(|s| {
            let total: f64 = (0..out.grid.n())
                .map(|i| {
                    let phi = out.materials[out.grid.material[i]].porosity;
                    // mg/L -> kg: conc * 1e-6 kg/mg * (phi s_l V * 1000) L
                    s.conc[sp][i] * 1e-3 * phi * s.s_l[i] * out.grid.volume[i]
                })
                .sum();
            (s.time, total)
        })
        .collect()
}

#[test]
fn criterion_6_case2_clogging() {
    let deck = load_deck("case2_clogging.deck");
    let mut control = deck.clone();
    assert!(assign_target(&mut control, "reaction.production.rate", 0.0));
    let clog = run_deck(deck);
    let ctrl = run_deck(control);

    // the seeded biozone: elements whose eps producer starts nonzero
    let bsp = clog.species_names.iter().position(|n| n == "b_eps").unwrap();
    let first_seeded = (0..clog.grid.n())
        .find(|&i| clog.snapshots[0].conc[bsp][i] > 0.0)
        .expect("no seeded biozone");
    let above = first_seeded - 1;

    let max_sl = |out: &RunOutputs| -> (f64, f64) {
        out.snapshots
            .iter()
            .map(|s| (s.s_l[above], s.time))
            .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc })
    };
    let (sl_clog, t_clog) = max_sl(&clog);
    let (sl_ctrl, t_ctrl) = max_sl(&ctrl);
    let a_pass = sl_clog > 0.95 && sl_ctrl < sl_clog - 0.1;

    // cumulative outflow at the horizon and the time of the peak outflow rate
    let out_curve = |out: &RunOutputs| -> (f64, f64) {
        let rows = &out.flux;
        let cum = rows.last().unwrap().water_out;
        let mut peak = (0.0, 0.0);
        for w in rows.windows(2) {
            let rate = (w[1].water_out - w[0].water_out) / (w[1].time - w[0].time);
            if rate > peak.0 {
                peak = (rate, 0.5 * (w[0].time + w[1].time));
            }
        }
        (cum, peak.1)
    };
    let (cum_clog, t_peak_clog) = out_curve(&clog);
    let (cum_ctrl, t_peak_ctrl) = out_curve(&ctrl);
    let b_pass = cum_clog < cum_ctrl && t_peak_clog > t_peak_ctrl;

    // EPS mass rises to a local max then declines within the first 12 days
    let eps = eps_total_series(&clog);
    let eps12: Vec<&(f64, f64)> = eps.iter().filter(|(t, _)| *t <= 12.0).collect();
    let (t_max, m_max) = eps12
        .iter()
        .fold((0.0, 0.0), |acc, (t, m)| if *m > acc.1 { (*t, *m) } else { acc });
    let m_end12 = eps12.last().unwrap().1;
    let c_pass = m_max > 0.0 && t_max < 12.0 && m_end12 < m_max * 0.99;

    report(
        "6",
        a_pass && b_pass && c_pass,
        &format!(
            "(a) S_L above clog {sl_clog:.3} @ {t_clog:.1} d vs control {sl_ctrl:.3} @ {t_ctrl:.1} d [{}]; \
             (b) outflow {cum_clog:.4} vs {cum_ctrl:.4} m3, peak rate @ {t_peak_clog:.2} vs {t_peak_ctrl:.2} d [{}]; \
             (c) EPS peaks {m_max:.2} kg @ {t_max:.2} d then {m_end12:.2} kg @ 12 d [{}]",
            if a_pass { "ok" } else { "fail" },
            if b_pass { "ok" } else { "fail" },
            if c_pass { "ok" } else { "fail" },
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Case 3 isotopologue kinetics
// ---------------------------------------------------------------------------

/// Independent integration of the two-pathway competitive batch system:
/// dn14/dt = -2 Ra - Rb, dn15/dt = -Rb, db/dt = Y (Ra + Rb) - delta b,
/// with Ra, Rb Michaelis-Menten in their isotopologue and competitively
/// inflated by the other, gated by the temperature window.
fn case3_reference(temp: f64, t_end_s: f64, n_out: usize) -> Vec<[f64; 3]> {
    let (r1, r2) = (1.355e-8, 2.28e-8);
    let (k14, k15) = (2.723, 2.309);
    let yield_b = 591.4;
    let delta = 1e-6;
    let (t_lb, t_ub) = (288.15, 313.15);
    let f_t = 1.0 / (1.0 + (t_lb - temp).exp()) / (1.0 + (temp - t_ub).exp());
    let rhs = |y: &[f64; 3]| -> [f64; 3] {
        let (n14, n15, b) = (y[0].max(0.0), y[1].max(0.0), y[2].max(0.0));
        let ra = r1 * f_t * b * n14 / (n14 + k14 * (1.0 + n15 / k15));
        let rb = r2 * f_t * b * n15 / (n15 + k15 * (1.0 + n14 / k14));
        [-2.0 * ra - rb, -rb, yield_b * (ra + rb) - delta * b]
    };
    let mut y = [2.0, 0.04274666666666667, 1.073];
    let mut out = vec![y];
    let steps_per_out = 4000;
    let h = t_end_s / (n_out as f64 * steps_per_out as f64);
    for _ in 0..n_out {
        for _ in 0..steps_per_out {
            let k1 = rhs(&y);
            let y2 = [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1], y[2] + 0.5 * h * k1[2]];
            let k2 = rhs(&y2);
            let y3 = [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1], y[2] + 0.5 * h * k2[2]];
            let k3 = rhs(&y3);
            let y4 = [y[0] + h * k3[0], y[1] + h * k3[1], y[2] + h * k3[2]];
            let k4 = rhs(&y4);
            for i in 0..3 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(y);
    }
    out
}

fn delta15n_at_end(out: &RunOutputs) -> f64 {
    let n14 = out.probe_series("n14", 0).unwrap();
    let n15 = out.probe_series("n15", 0).unwrap();
    let d = compute_delta15n(&[n14.last().unwrap().1], &[n15.last().unwrap().1]).unwrap();
    d[0].1
}

#[test]
fn criterion_7_case3_isotopes() {
    let deck = load_deck("case3_denit.deck");
    let sweep = deck.sweep.clone().expect("case 3 carries a temperature sweep");
    let out = run_deck(deck.clone());

    // (a) trajectory match against the independent reference
    let n14 = out.probe_series("n14", 0).unwrap();
    let n15 = out.probe_series("n15", 0).unwrap();
    let t_end_s = deck.solver.t_end * 86400.0;
    let refr = case3_reference(deck.solver.temperature, t_end_s, n14.len() - 1);
    let mut worst = 0.0f64;
    for (k, r) in refr.iter().enumerate() {
        let rel14 = (n14[k].1 - r[0]).abs() / r[0];
        let rel15 = (n15[k].1 - r[1]).abs() / r[1];
        worst = worst.max(rel14).max(rel15);
    }
    let a_pass = worst < 1e-4;

    // (b) delta15N strictly increases while substrate is consumed
    let deltas = compute_delta15n(
        &n14.iter().map(|p| p.1).collect::<Vec<_>>(),
        &n15.iter().map(|p| p.1).collect::<Vec<_>>(),
    )
    .unwrap();
    let b_pass = deltas.windows(2).all(|w| w[1].1 > w[0].1)
        && n14.windows(2).all(|w| w[1].1 < w[0].1);

    // (c) temperature plateau: 26/28/30 C pairwise < 2%, edges < 50% of plateau
    let mut by_temp = Vec::new();
    for &temp in &sweep.values {
        let mut d = deck.clone();
        assert!(assign_target(&mut d, "solver.temperature", temp));
        d.sweep = None;
        by_temp.push((temp, delta15n_at_end(&run_deck(d))));
    }
    let val = |t: f64| by_temp.iter().find(|(tt, _)| (tt - t).abs() < 1e-9).unwrap().1;
    let plateau = [val(299.15), val(301.15), val(303.15)];
    let mut pairwise = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            pairwise = pairwise.max((plateau[i] - plateau[j]).abs() / plateau[j].abs());
        }
    }
    let plat_mean = plateau.iter().sum::<f64>() / 3.0;
    let edges_ok = val(278.15) < 0.5 * plat_mean && val(323.15) < 0.5 * plat_mean;
    let c_pass = pairwise < 0.02 && edges_ok;

    report(
        "7",
        a_pass && b_pass && c_pass,
        &format!(
            "(a) worst trajectory deviation {worst:.2e} (tol 1e-4) [{}]; \
             (b) delta15N strictly increasing [{}]; \
             (c) plateau pairwise {pairwise:.2e}, edges {:.2}/{:.2} vs plateau {plat_mean:.2} permil [{}]",
            if a_pass { "ok" } else { "fail" },
            if b_pass { "ok" } else { "fail" },
            val(278.15),
            val(323.15),
            if c_pass { "ok" } else { "fail" },
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Sweep harness
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_sweep_harness() {
    let mut deck = load_deck("case1_synthetic.deck");
    deck.solver.t_end = 1.25; // reduced horizon
    let spec = deck.sweep.clone().unwrap();
    assert_eq!(spec.replicas, 50);
    assert_eq!(spec.rel_std, 0.5);

    // determinism + order/count independence of the draws
    let reps_a = generate_replicas(&deck, &spec).unwrap();
    let reps_b = generate_replicas(&deck, &spec).unwrap();
    let draws = |reps: &[SimulationDeck]| -> Vec<f64> {
        reps.iter().map(|d| d.materials[0].k).collect()
    };
    assert_eq!(draws(&reps_a), draws(&reps_b), "same seed must give same draws");
    let mut small_spec = spec.clone();
    small_spec.replicas = 10;
    let reps_small = generate_replicas(&deck, &small_spec).unwrap();
    assert_eq!(
        draws(&reps_small),
        draws(&reps_a)[..10],
        "replica draws must not depend on how many siblings exist"
    );

    // run the ensemble (in reverse order, which must not matter), summarize
    let (species, element) = spec.summary.clone().unwrap();
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); reps_a.len()];
    for (i, rep) in reps_a.iter().enumerate().rev() {
        let out = run_deck(rep.clone());
        series[i] = out.probe_series(&species, element).unwrap();
    }
    let summary = retort::sweep::summarize_ensemble(&series).unwrap();

    // independent recomputation of mean and population std
    let mut worst = 0.0f64;
    for (k, &(_, mean, std)) in summary.iter().enumerate() {
        let vals: Vec<f64> = series.iter().map(|s| s[k].1).collect();
        let m: f64 = vals.iter().rev().sum::<f64>() / vals.len() as f64;
        let v: f64 = vals.iter().rev().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let scale = m.abs().max(1e-300);
        worst = worst.max((mean - m).abs() / scale).max((std - v.sqrt()).abs() / scale);
    }
    // rerun one replica: the full pipeline must be bitwise deterministic
    let again = run_deck(reps_a[7].clone());
    let same = again.probe_series(&species, element).unwrap() == series[7];

    report(
        "8",
        worst < 1e-12 && same,
        &format!("50-replica Gaussian ensemble deterministic and order-independent; mean/std recomputation deviation {worst:.2e} (tol 1e-12)"),
    );
}

// ---------------------------------------------------------------------------
// 9. Parser robustness
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_parser_robustness() {
    let mut corpus = Vec::new();
    for entry in fs::read_dir(decks_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) == Some("deck") {
            corpus.push(fs::read_to_string(&path).unwrap());
        }
    }
    assert!(corpus.len() >= 13, "expected >= 13 golden decks, found {}", corpus.len());
    for text in &corpus {
        let deck = parse_deck(text).expect("golden deck must parse");
        let canon = serialize_deck(&deck);
        let deck2 = parse_deck(&canon).expect("canonical form must parse");
        assert_eq!(canon, serialize_deck(&deck2), "round-trip fixed point");
    }
    let mut rng = SplitMix64::new(0x9a7e);
    for _ in 0..10_000 {
        let base = &corpus[(rng.next_u64() as usize) % corpus.len()];
        let mut bytes = base.clone().into_bytes();
        for _ in 0..1 + rng.next_u64() % 3 {
            if bytes.is_empty() {
                break;
            }
            let pos = (rng.next_u64() as usize) % bytes.len();
            match rng.next_u64() % 3 {
                0 => bytes[pos] = b"[]=# \n.eE-+09axz"[(rng.next_u64() as usize) % 16],
                1 => {
                    bytes.remove(pos);
                }
                _ => bytes.insert(pos, b"[]=# \n.eE-+09axz"[(rng.next_u64() as usize) % 16]),
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        match parse_deck(&text) {
            Ok(d) => {
                let _ = serialize_deck(&d);
            }
            Err(diags) => assert!(!diags.is_empty()),
        }
    }
    report("9", true, "13 golden decks round-trip; 10,000 mutations produced diagnostics, no crashes");
}

// ---------------------------------------------------------------------------
// 10. Ledger soundness over every shipped deck
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_ledger_soundness() {
    let mut lines = Vec::new();
    let mut all_pass = true;
    for entry in fs::read_dir(decks_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("deck") {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let deck = load_deck(&name);
        // tracer species: transported but untouched by any reaction
        let tracers: Vec<String> = deck
            .species
            .entries
            .iter()
            .filter(|sp| {
                matches!(sp.kind, SpeciesKind::Pri)
                    && !deck.reactions.iter().any(|r| {
                        r.stoich.iter().any(|(n, _)| n == &sp.name)
                    })
            })
            .map(|sp| sp.name.clone())
            .collect();
        let out = run_deck(deck);
        for (species, err) in &out.audit.entries {
            let tol = if tracers.iter().any(|t| t == species) { 1e-8 } else { 1e-6 };
            if *err > tol {
                all_pass = false;
                lines.push(format!("{name}: {species} closure {err:.2e} > {tol:.0e}"));
            }
        }
    }
    report(
        "10",
        all_pass,
        &if all_pass {
            "every shipped deck closes its audit within 1e-6 (tracers within 1e-8)".to_string()
        } else {
            lines.join("; ")
        },
    );
}
