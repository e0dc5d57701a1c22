//! Open-set node classification with generated proxy unknown nodes.
//!
//! A GNN encoder is run up to an intermediate layer, where two kinds of proxy
//! "unknown" nodes are synthesized by mixing hidden representations: points
//! between connected nodes of different classes, and points pushed away from
//! class centers at the periphery. Proxies are wired into the graph, passed
//! through the remaining layers, and a `C+1`-way classifier learns to route
//! them to the extra unknown class.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod openset;
pub mod proxy;
pub mod trainer;

pub use error::{Error, Result};
