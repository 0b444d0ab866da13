//! Oracles and checks shared by the module tests and the acceptance harness.
//! Checks panic on failure.
#![allow(dead_code)]

pub mod backbone;
pub mod fusion;
pub mod gsf;
pub mod mcd;
