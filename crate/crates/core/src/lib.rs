//! Credit exposure profiles, exposure Greeks and CVA for European, Bermudan
//! and down-and-out barrier options under Heston, Black-Scholes Hull-White
//! and Heston Hull-White dynamics, computed with the stochastic grid
//! bundling method.

pub mod bundling;
pub mod chf;
pub mod engine;
pub mod error;
pub mod jet;
pub mod model;
pub mod monomial;
pub mod paths;
pub mod regression;
pub mod report;
pub mod risk;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
