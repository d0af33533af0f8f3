pub mod adapter;
pub mod evaluate;
pub mod infer;
pub mod synth;
pub mod train;

use crate::config::Config;
use crate::data::Provenance;
use crate::error::CliResult;

/// Resolved settings for one command invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub strict_cv: bool,
    /// Explicit segment keys for `infer`; empty means the whole archive.
    pub segments: Vec<String>,
}

impl Context {
    pub fn provenance(&self, command: &'static str) -> CliResult<Provenance> {
        Ok(Provenance {
            command,
            config_digest: self.config.digest(),
            seed: self.config.seed()?,
        })
    }
}
