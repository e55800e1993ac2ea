use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use ceest::Error;
use serde::Serialize;

#[derive(Serialize)]
pub struct Report<'a, A: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub args: &'a A,
    pub result: &'a R,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl<'a, A: Serialize, R: Serialize> Report<'a, A, R> {
    pub fn new(command: &'a str, args: &'a A, result: &'a R) -> Self {
        Report {
            tool: "ceest",
            version: env!("CARGO_PKG_VERSION"),
            command,
            args,
            result,
            wall_time_s: None,
        }
    }

    pub fn with_time(mut self, elapsed: Option<Duration>) -> Self {
        self.wall_time_s = elapsed.map(|d| d.as_secs_f64());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Two-column CSV with a header row.
pub fn write_csv<X: std::fmt::Display>(
    path: &Path,
    header: (&str, &str),
    rows: impl IntoIterator<Item = (X, f64)>,
) -> Result<(), Error> {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (x, y) in rows {
        writeln!(out, "{x},{y:e}").expect("writing to a string");
    }
    fs::write(path, out)?;
    Ok(())
}
