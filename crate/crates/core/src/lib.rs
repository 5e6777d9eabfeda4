//! ClawCoin: an index-referenced settlement asset for agent economies.
//!
//! The crate is layered bottom up: [`fixed`] and [`crypto`] primitives, the
//! [`index`] calculator, the [`oracle`] publication path, the [`ledger`]
//! and its event log, the NAV [`vault`], atomic [`settlement`], and the
//! seeded [`sim`] that exercises all of them.

pub mod crypto;
pub mod events;
pub mod fixed;
pub mod index;
pub mod ledger;
pub mod oracle;
pub mod settlement;
pub mod sim;
pub mod vault;
pub mod validate;

pub use fixed::{fx, Fixed};
