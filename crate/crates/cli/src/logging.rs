//! Logger that forwards to `env_logger` (level from `BHC_LOG`) and keeps a
//! copy of every warning for the run manifest.

use std::sync::{Mutex, OnceLock};

use log::{Level, LevelFilter, Log, Metadata, Record};

pub const LOG_ENV: &str = "BHC_LOG";

struct Capture {
    inner: env_logger::Logger,
    warnings: Mutex<Vec<String>>,
}

impl Log for Capture {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Warn || self.inner.enabled(metadata)
    }

    fn log(&self, record: &Record) {
        if record.level() <= Level::Warn {
            if let Ok(mut w) = self.warnings.lock() {
                w.push(record.args().to_string());
            }
        }
        if self.inner.matches(record) {
            self.inner.log(record);
        }
    }

    fn flush(&self) {
        self.inner.flush();
    }
}

static CAPTURE: OnceLock<&'static Capture> = OnceLock::new();

/// Install the logger. Later calls are no-ops.
pub fn init() {
    CAPTURE.get_or_init(|| {
        let inner = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
            .format_timestamp(None)
            .build();
        let max = inner.filter().max(LevelFilter::Warn);
        let capture: &'static Capture = Box::leak(Box::new(Capture {
            inner,
            warnings: Mutex::new(Vec::new()),
        }));
        if log::set_logger(capture).is_ok() {
            log::set_max_level(max);
        }
        capture
    });
}

/// Warnings logged since the last call, sorted and deduplicated so that
/// thread scheduling does not change the result.
pub fn take_warnings() -> Vec<String> {
    let Some(c) = CAPTURE.get() else {
        return Vec::new();
    };
    let mut w = c.warnings.lock().map(|mut w| std::mem::take(&mut *w)).unwrap_or_default();
    w.sort();
    w.dedup();
    w
}
