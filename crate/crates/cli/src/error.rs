use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] camtraj::Error),
}

impl CliError {
    /// 1 usage, 2 invalid input, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(camtraj::Error::EmptyChannel(0)).exit_code(), 2);
        assert_eq!(CliError::from(camtraj::Error::CameraAtObject).exit_code(), 3);
        let nf = camtraj::Error::NonFinite { what: "gradient", iteration: 4 };
        assert_eq!(CliError::from(nf).exit_code(), 3);
    }
}
