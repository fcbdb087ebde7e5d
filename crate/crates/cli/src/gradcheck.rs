use ers_core::gradcheck::{check_all, TermCheck};

use crate::CliError;

pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: u64 = 100;

/// Worst finite-difference error of every loss term over 100 seeds.
pub fn cmd_grad_check(seed: u64) -> Result<Vec<TermCheck>, CliError> {
    check_all(seed..seed + SEEDS).map_err(|e| CliError::Runtime(e.into()))
}
