//! Greedy AP mode selection under equal power.

use super::{equal_power, OptimizeError};
use crate::metrics::evaluate;
use crate::model::NetworkRealization;
use crate::precoding::Grouping;

/// One committed switch of an AP from sensing to communication.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub ap: usize,
    /// Minimum SINR after the switch.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    /// `true` for communication APs.
    pub modes: Vec<bool>,
    pub steps: Vec<GreedyStep>,
}

/// Value of a mode vector under equal power: the minimum SINR when every
/// MASR constraint holds, zero otherwise.
pub fn equal_power_value(
    real: &NetworkRealization,
    grouping: &Grouping,
    modes: &[bool],
    kappa: f64,
) -> Result<f64, OptimizeError> {
    let alloc = equal_power(real, modes);
    let rep = evaluate(real, grouping, &alloc, kappa)?;
    Ok(if rep.sensing_ok() { rep.sinr.min() } else { 0.0 })
}

/// Starts with every AP sensing and repeatedly moves the AP with the largest
/// value to communication while that value is positive and exceeds the
/// current one by the relative margin `e_min`. Ties go to the lowest AP
/// index.
pub fn greedy_ap_selection(
    real: &NetworkRealization,
    grouping: &Grouping,
    kappa: f64,
    e_min: f64,
) -> Result<GreedyOutcome, OptimizeError> {
    let m_aps = real.num_aps();
    let mut modes = vec![false; m_aps];
    let mut current = equal_power_value(real, grouping, &modes, kappa)?;
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for m in 0..m_aps {
            if modes[m] {
                continue;
            }
            modes[m] = true;
            let v = equal_power_value(real, grouping, &modes, kappa)?;
            modes[m] = false;
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((m, v));
            }
        }
        match best {
            Some((m, v)) if v > 0.0 && v - current >= e_min * current => {
                modes[m] = true;
                current = v;
                steps.push(GreedyStep { ap: m, value: v });
            }
            _ => break,
        }
    }
    Ok(GreedyOutcome { modes, steps })
}
