//! Stationary Stackelberg equilibria and Stackelberg mean-field equilibria
//! for finite Markov games, with the supporting dynamic-programming,
//! smoothing and linear-programming pieces plus a small power-grid tariff
//! environment.

pub mod energy;
pub mod error;
pub mod game;
pub mod lp;
pub mod mdp;
pub mod meanfield;
pub mod policy_ops;
pub mod sse;

pub use error::{Error, Result};
pub use game::{Agent, Dims, GameSpec, JointState, Policy, Tables};
pub use lp::{LinearProgram, LpSolution, LpStatus, Sense};
pub use mdp::{BRConfig, QTable, Regularizer};
pub use meanfield::{MFEResult, MeanField};
pub use policy_ops::{EpsilonNet, GapProfile};
pub use sse::{SSEResult, Variant};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Float formatting used by every CSV artifact: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-9, 12345.678, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }
}
