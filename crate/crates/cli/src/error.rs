use std::fmt;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Bad flags, paths or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    if let Some(core) = e.downcast_ref::<hetgplvm::Error>() {
        return match core {
            hetgplvm::Error::Numerical(_) => EXIT_NUMERICAL,
            hetgplvm::Error::Config(_) | hetgplvm::Error::Io(_) => EXIT_USAGE,
            _ => EXIT_INPUT,
        };
    }
    EXIT_USAGE
}
