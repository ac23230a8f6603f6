//! Minimal leveled stderr logging controlled by `VRB_LOG_LEVEL`
//! (`error`, `warn`, `info`, `debug`; default `warn`).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Error = 0,
    Warn = 1,
    Info = 2,
    Debug = 3,
}

static LEVEL: OnceLock<LogLevel> = OnceLock::new();

pub fn level() -> LogLevel {
    *LEVEL.get_or_init(|| match std::env::var("VRB_LOG_LEVEL").as_deref() {
        Ok("error") => LogLevel::Error,
        Ok("info") => LogLevel::Info,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Warn,
    })
}

pub fn log(at: LogLevel, msg: std::fmt::Arguments<'_>) {
    if at <= level() {
        let tag = match at {
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
        };
        eprintln!("[vrb {tag}] {msg}");
    }
}

macro_rules! log_warn {
    ($($arg:tt)*) => { $crate::logging::log($crate::logging::LogLevel::Warn, format_args!($($arg)*)) };
}

macro_rules! log_info {
    ($($arg:tt)*) => { $crate::logging::log($crate::logging::LogLevel::Info, format_args!($($arg)*)) };
}

pub(crate) use {log_info, log_warn};
