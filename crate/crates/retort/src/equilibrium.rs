//! Mass-action speciation: each secondary species is solved explicitly from
//! primaries in log10 space, K_eq = X_k^x_k * prod X_j^x_j.

use crate::deck::{EquilibriumSpec, SimulationDeck};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("equilibrium `{name}`: primary `{primary}` is zero with a negative exponent; solved species set to zero")]
    SingularEquilibrium { name: String, primary: String },
}

/// Equilibrium with species resolved to registry indices.
#[derive(Debug, Clone)]
pub struct CompiledEquilibrium {
    pub name: String,
    pub solved: (usize, f64),
    pub primaries: Vec<(usize, f64)>,
    pub log10_keq: f64,
}

pub fn compile_equilibrium(spec: &EquilibriumSpec, deck: &SimulationDeck) -> CompiledEquilibrium {
    let idx = |name: &str| deck.species.index_of(name).expect("validated species reference");
    CompiledEquilibrium {
        name: spec.name.clone(),
        solved: (idx(&spec.solved.0), spec.solved.1),
        primaries: spec.primaries.iter().map(|(n, x)| (idx(n), *x)).collect(),
        log10_keq: spec.log10_keq,
    }
}

/// Solve X_k = (K_eq / prod X_j^x_j)^(1/x_k) for each spec in deck order,
/// writing into `conc` (concentrations in each species' own unit).
pub fn solve_equilibria(
    conc: &mut [f64],
    equilibria: &[CompiledEquilibrium],
) -> Vec<EquilibriumError> {
    let mut errors = Vec::new();
    for eq in equilibria {
        let (k_idx, x_k) = eq.solved;
        let mut log_prod = 0.0;
        let mut singular = None;
        for &(j, x_j) in &eq.primaries {
            let x = conc[j];
            if x <= 0.0 {
                if x_j < 0.0 {
                    singular = Some(j);
                    break;
                }
                // zero with positive exponent: product is zero, solved species
                // is zero (for x_k > 0) -- handle via log limit below
                log_prod = f64::NEG_INFINITY;
                break;
            }
            log_prod += x_j * x.log10();
        }
        if let Some(j) = singular {
            conc[k_idx] = 0.0;
            errors.push(EquilibriumError::SingularEquilibrium {
                name: eq.name.clone(),
                primary: format!("species #{j}"),
            });
            continue;
        }
        let log_xk = (eq.log10_keq - log_prod) / x_k;
        conc[k_idx] = if log_xk.is_finite() { 10f64.powf(log_xk) } else { 0.0 };
    }
    errors
}

/// Diagnostic log10(Q / K_eq) for a (typically just solved) spec.
pub fn equilibrium_residual(conc: &[f64], eq: &CompiledEquilibrium) -> f64 {
    let (k_idx, x_k) = eq.solved;
    let mut log_q = if conc[k_idx] > 0.0 {
        x_k * conc[k_idx].log10()
    } else {
        return f64::NEG_INFINITY;
    };
    for &(j, x_j) in &eq.primaries {
        if conc[j] > 0.0 {
            log_q += x_j * conc[j].log10();
        } else {
            return f64::NEG_INFINITY;
        }
    }
    log_q - eq.log10_keq
}
