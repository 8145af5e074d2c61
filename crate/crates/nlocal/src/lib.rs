//! Decide whether an n-spin Hamiltonian carries a genuine n-local coupling.
//!
//! A device that claims an n-body interaction M Z^⊗n has to defend that claim
//! against two cheaper explanations: spurious shifts of its lower-order
//! parameters, and higher-order effects of couplings it already had. This
//! crate implements both sides of that argument:
//!
//! * **Static detection.** Sweep a longitudinal field over every subset of
//!   spins, record how the ground-state gap moves when the coupler turns on,
//!   and fit the shifts with models truncated at locality k. Only the k = n
//!   model can absorb the data; the gap between k = n - 1 and k = n is the
//!   signature ([`fit`], [`threshold`]).
//! * **Dynamic detection.** Drive the system at the transition connecting the
//!   extremal eigenstates. A first-order matrix element exists only for the
//!   full n-spin string, so lower-order terms cannot produce the resonance at
//!   leading order ([`dynamics`]).
//!
//! All frequencies are angular, in rad/ns; see [`units`] for conversions.
//!
//! ```
//! use nlocal::hamiltonian::{default_spec, realize_hamiltonian, FieldConfiguration};
//! use nlocal::pauli::Subset;
//!
//! let spec = default_spec(3, 7).unwrap();
//! let config = FieldConfiguration::new(Subset::full(3));
//! let h = realize_hamiltonian(&spec, &config, 0.0).unwrap();
//! assert_eq!(h.nrows(), 8);
//! ```

/// Crate version, recorded in output manifests for reproduction.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hamiltonian;
pub mod pauli;
pub mod seed;
pub mod spectroscopy;
pub mod threshold;
pub mod units;

pub use error::{Error, Result};
