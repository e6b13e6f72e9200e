//! Three-party quantum e-commerce signing.
//!
//! Key generation over two channels, Cascade reconciliation, finite-key
//! budgeting, one-time universal hashing over GF(2), and a simulated
//! merchant/client/TP signing protocol with escrowed payment.

pub mod bits;
pub mod cascade;
pub mod charize;
pub mod error;
pub mod gf2;
pub mod kgp;
pub mod otuh;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod security;

pub use bits::BitString;
pub use error::{Error, Result};
pub use gf2::Gf2Poly;
pub use otuh::{sign, verify, SignatureKeys, SignatureTag};
pub use protocol::{Adversary, Contract, Outcome, Scenario, Transcript};
pub use security::{PhaseErrorSource, SecurityBudget, SourceFlaws};
