#![allow(dead_code)]

pub mod consensus_oracle;
pub mod gradcheck;
