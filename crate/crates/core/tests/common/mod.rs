//! Helpers shared by the integration tests and the acceptance run. Not every
//! test binary uses every helper.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
