//! Human-readable log of machine-to-machine traffic and FSM progress.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::clock::{Clock, WallClock};

#[derive(Clone)]
pub struct M2mLog {
    lines: Arc<Mutex<Vec<String>>>,
    clock: Arc<dyn Clock>,
    echo: bool,
}

impl M2mLog {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        M2mLog {
            lines: Arc::default(),
            clock,
            echo: false,
        }
    }

    /// Also print every line to stdout as it is recorded.
    pub fn echoing(mut self) -> Self {
        self.echo = true;
        self
    }

    /// Append `"<ts> <text>"`.
    pub fn record(&self, text: impl AsRef<str>) {
        let line = format!("{} {}", self.clock.now_ms(), text.as_ref());
        if self.echo {
            println!("{line}");
        }
        self.lines.lock().push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.lines.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        let mut text = self.lines().join("\n");
        text.push('\n');
        fs::write(path, text)
    }
}

impl Default for M2mLog {
    fn default() -> Self {
        M2mLog::new(Arc::new(WallClock::new()))
    }
}

impl std::fmt::Debug for M2mLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("M2mLog").field("lines", &self.len()).finish()
    }
}
