//! Compiler, simulator, and verifier for modular quantum-signal-processing (QSP)
//! gadgets.
//!
//! A *gadget* is an (a, b) superoperator: it consumes `a` single-qubit oracle
//! unitaries of the form e^{i arccos(x_j) σx} and produces `b` unitaries that are
//! σz-conjugated σx rotations whose rotation angles encode multivariable
//! polynomials of the inputs. This crate provides:
//!
//! - exact 2×2 complex matrix algebra and a small-register state-vector
//!   simulator with postselection ([`su2`]),
//! - multi-oracle QSP protocol evaluation and symmetry diagnostics
//!   ([`protocols`]),
//! - the explicit approximating polynomials used by the correction pipelines
//!   ([`poly`]),
//! - complementary-polynomial completion and phase-factor synthesis
//!   ([`phases`]),
//! - the three correction pipelines that strip unknown σz twists from gadget
//!   outputs ([`correction`]),
//! - the gadget algebra: atomic gadgets, interlink composition, unary
//!   operators, and compilation to a flat circuit IR ([`gadget`]),
//! - query-cost matrices with block-composition algebra and error propagation
//!   ([`cost`]),
//! - a library of ready-made gadgets ([`stdlib`]),
//! - a grid-based certification harness ([`verify`]), and
//! - a textual assemblage DSL with an arity-typed validator ([`dsl`]).

pub mod correction;
pub mod cost;
pub mod dsl;
pub mod gadget;
pub mod phases;
pub mod poly;
pub mod protocols;
pub mod stdlib;
pub mod su2;
pub mod verify;

pub use num_complex::Complex64 as C64;
