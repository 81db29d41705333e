use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a CLI run; each maps to one category and exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ncsim::Error),

    #[error("{0}")]
    Usage(String),

    #[error("output directory {0} already exists; pass --force to replace it")]
    Exists(PathBuf),

    #[error("replay mismatch: {0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::Exists(_) => "exists",
            CliError::Mismatch(_) => "mismatch",
            CliError::Io { .. } => "io",
        }
    }

    /// Distinct nonzero code per category; 1 is left to panics.
    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "dataset" => 5,
            "model-file" => 6,
            "exists" => 7,
            "mismatch" => 8,
            "numeric" => 9,
            "overflow" => 10,
            "format" => 11,
            "shape" => 12,
            "training" => 13,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_category_has_its_own_code() {
        let errors = [
            CliError::Usage(String::new()),
            CliError::Exists(PathBuf::new()),
            CliError::Mismatch(String::new()),
            CliError::io(Path::new("x"), std::io::Error::other("x")),
            ncsim::Error::Config(String::new()).into(),
            ncsim::Error::Dataset(String::new()).into(),
            ncsim::Error::ModelFile(String::new()).into(),
            ncsim::Error::Numeric(String::new()).into(),
            ncsim::Error::Overflow(String::new()).into(),
            ncsim::Error::Format(String::new()).into(),
            ncsim::Error::Shape { expected: 1, actual: 2 }.into(),
            ncsim::Error::Training(String::new()).into(),
        ];
        let mut codes: Vec<u8> = errors.iter().map(CliError::exit_code).collect();
        assert!(codes.iter().all(|&c| c >= 2));
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), errors.len());
    }
}
