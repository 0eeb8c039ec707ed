pub mod checker;
pub mod cli;
pub mod config;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fuzz;
pub mod machine;
pub mod rng;
pub mod rwloc;
pub mod state;
pub mod syntax;
pub mod trace;
pub mod txctl;
pub mod value;
pub mod wrapper;
