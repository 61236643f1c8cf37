//! Open-loop Nash equilibria of liquidation games with self-exciting order flow.
//!
//! Modules, bottom up: dense linear algebra and quadrature ([`matops`]),
//! game parameters and condition checks ([`model`]), order-flow simulation
//! ([`hawkes`]), equilibrium solvers ([`equilibria`]), cost evaluation and
//! deviation tests ([`verify`]) and the many-player limit ([`convergence`]).

pub mod convergence;
pub mod equilibria;
pub mod hawkes;
pub mod matops;
pub mod model;
pub mod verify;

pub use equilibria::{EquilibriumError, EquilibriumSolution};
pub use matops::{Matrix, TimeGrid};
pub use model::{MarketSetup, Penalty, PlayerParams};
