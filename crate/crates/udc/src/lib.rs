//! Unified divide-and-conquer solver for large-scale combinatorial optimization.
//!
//! The solver works in two stages. A graph-network dividing policy scores the
//! edges of a sparse instance graph and decodes a feasible initial solution.
//! A conquering stage then cuts that solution into fixed-length sub-problems,
//! re-solves each one under constraints that guarantee the merged result stays
//! feasible, and keeps every strict improvement. Repeating the conquering
//! stage with rolling offsets polishes the solution further.
//!
//! The crate covers six problem families (TSP, CVRP, orienteering,
//! prize-collecting TSP, 0-1 knapsack, and maximum independent set), the
//! REINFORCE-based joint training loop for both policies, and exact
//! dynamic-programming conquerors used as oracles and as an optional backend.

pub mod conquer;
pub mod divide;
pub mod error;
pub mod graph;
pub mod nnet;
pub mod problems;
pub mod rng;
pub mod solve;
pub mod train;

pub use error::{Result, UdcError};
pub use problems::{Instance, Kind, Sense, Solution};
