//! Reactive power dispatch toolkit for DER fleets on unbalanced radial
//! distribution feeders.
//!
//! The crate is organized as a pipeline:
//!
//! * [`feeder`]: data model for buses, lines, loads and inverters, plus
//!   validation and a JSON file format.
//! * [`lindist`]: assembly of the linearized three-phase power-flow model
//!   (squared voltage magnitudes as an affine map of injections), the
//!   substation reactive-flow map, and sensitivity weights.
//! * [`lp`]: an embedded dense simplex solver for bounded-variable linear
//!   programs.
//! * [`dispatch`]: builds the dispatch LP from the linear model, solves it,
//!   and extracts per-DER commands.
//! * [`oracle`]: a nonlinear backward/forward-sweep power flow used to
//!   validate dispatch results.
//! * [`bench`]: scenario runner and error metrics comparing the linear and
//!   nonlinear solutions.
//! * [`fixtures`]: programmatically built feeder models used for tests and
//!   shipped fixture files.

pub mod bench;
pub mod dispatch;
pub mod feeder;
pub mod fixtures;
pub mod lindist;
pub mod lp;
pub mod oracle;
