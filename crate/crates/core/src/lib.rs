pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod exploration;
pub mod numerics;
pub mod oracles;
pub mod run;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/running.md")]
    pub struct Running;
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub struct Configuration;
    #[doc = include_str!("../../../book/src/representation.md")]
    pub struct Representation;
    #[doc = include_str!("../../../book/src/agent.md")]
    pub struct Agent;
    #[doc = include_str!("../../../book/src/checks.md")]
    pub struct Checks;
    #[doc = include_str!("../../../book/src/runs.md")]
    pub struct Runs;
}
