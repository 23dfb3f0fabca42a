use std::fmt::Display;

/// Exit-code class of a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Bad input, config or artifact: exit 2.
    User,
    /// Network or environment: exit 3.
    Env,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn user(msg: impl Display) -> Failure {
        Failure {
            kind: Kind::User,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn env(msg: impl Display) -> Failure {
        Failure {
            kind: Kind::Env,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::User => 2,
            Kind::Env => 3,
        }
    }
}

/// Tags an error with its exit-code class and a context line.
pub trait Classify<T> {
    fn user(self, context: impl Display) -> Result<T, Failure>;
    fn env(self, context: impl Display) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn user(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind: Kind::User,
            error: e.into().context(context.to_string()),
        })
    }

    fn env(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            kind: Kind::Env,
            error: e.into().context(context.to_string()),
        })
    }
}
