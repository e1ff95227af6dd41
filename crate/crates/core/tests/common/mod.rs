//! Test-only oracles shared by the integration tests.
#![allow(dead_code)]

pub mod quadrature;
pub mod oracles;
pub mod mallard;
