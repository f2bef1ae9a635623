//! Minimal stderr logger gated by the `ACMR_LOG` environment variable
//! (`off`, `error`, `info`, `debug`; default `info`).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Off,
    Error,
    Info,
    Debug,
}

static LEVEL: OnceLock<Level> = OnceLock::new();

pub fn level() -> Level {
    *LEVEL.get_or_init(|| match std::env::var("ACMR_LOG").as_deref() {
        Ok("off") => Level::Off,
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    })
}

pub fn info(msg: impl AsRef<str>) {
    if level() >= Level::Info {
        eprintln!("[acmr] {}", msg.as_ref());
    }
}

pub fn error(msg: impl AsRef<str>) {
    if level() >= Level::Error {
        eprintln!("[acmr] error: {}", msg.as_ref());
    }
}

pub fn debug(msg: impl AsRef<str>) {
    if level() >= Level::Debug {
        eprintln!("[acmr] debug: {}", msg.as_ref());
    }
}
