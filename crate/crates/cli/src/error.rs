use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gametune::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use gametune::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Divergence { .. }) => 3,
            CliError::Core(E::NoStableRegion) => 4,
            CliError::Core(
                E::InvalidParameter(_)
                | E::InvalidBounds { .. }
                | E::Scenario(_)
                | E::Toml(_)
                | E::MapTable(_),
            ) => 2,
            CliError::Core(_) | CliError::Output { .. } => 1,
        }
    }
}
