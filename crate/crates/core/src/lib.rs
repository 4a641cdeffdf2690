//! Computation of p-adic higher Green's function values attached to
//! real-multiplication divisors, via rigid log-meromorphic modular symbols.

pub mod affinoid;
pub mod padic;
pub mod poly;
pub mod quadforms;
pub mod symbol;
