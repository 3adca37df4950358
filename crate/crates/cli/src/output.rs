use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const CSV_HEADER: &str = "# boltzfact-csv v1";

/// One threshold check of a validation suite.
pub struct Check {
    pub name: String,
    pub value: String,
    pub target: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: impl Into<String>, target: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), value: value.into(), target: target.into(), pass }
    }
}

pub fn print_checks(suite: &str, checks: &[Check]) {
    let w = checks.iter().map(|c| c.name.len()).max().unwrap_or(0).max(5);
    let wv = checks.iter().map(|c| c.value.len()).max().unwrap_or(0).max(5);
    println!("{suite}:");
    println!("  {:<6} {:<w$}  {:<wv$}  target", "result", "check", "value");
    for c in checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        println!("  {:<6} {:<w$}  {:<wv$}  {}", tag, c.name, c.value, c.target);
    }
}

/// Versioned CSV table: the schema line, `# key=value` metadata, column names, rows.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(meta: &[(&str, String)], columns: &[&str]) -> Self {
        let mut text = String::new();
        text.push_str(CSV_HEADER);
        text.push('\n');
        for (k, v) in meta {
            let _ = writeln!(text, "# {k}={v}");
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let cells: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, &self.text)
    }
}

pub fn gib(bytes: f64) -> f64 {
    bytes / (1u64 << 30) as f64
}
