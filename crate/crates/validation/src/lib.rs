//! Shared helpers for the acceptance suite.

use std::time::{Duration, Instant};

/// One criterion's outcome: a list of named sub-checks plus informational lines.
#[derive(Debug, Default)]
pub struct Criterion {
    pub id: usize,
    pub title: String,
    checks: Vec<(String, bool, String)>,
    notes: Vec<String>,
    started: Option<Instant>,
    elapsed: Duration,
}

impl Criterion {
    pub fn start(id: usize, title: &str) -> Self {
        Self {
            id,
            title: title.into(),
            started: Some(Instant::now()),
            ..Default::default()
        }
    }

    pub fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.checks.push((name.into(), ok, detail));
    }

    /// `value <= tol`, with the numbers in the detail string.
    pub fn below(&mut self, name: &str, value: f64, tol: f64) {
        self.check(name, value <= tol, format!("{value:.3e} <= {tol:.1e}"));
    }

    /// `lo <= value <= hi`.
    pub fn within(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.check(name, (lo..=hi).contains(&value), format!("{value:.4} in [{lo}, {hi}]"));
    }

    pub fn info(&mut self, line: String) {
        self.notes.push(line);
    }

    /// Record an error as a failed sub-check.
    pub fn error(&mut self, what: &str, e: impl std::fmt::Display) {
        self.check(what, false, format!("error: {e}"));
    }

    /// Close the timer and add the runtime budget as a check.
    pub fn finish(mut self, budget_seconds: f64) -> Self {
        self.elapsed = self.started.take().map(|s| s.elapsed()).unwrap_or_default();
        let s = self.elapsed.as_secs_f64();
        self.check("runtime", s < budget_seconds, format!("{s:.2}s < {budget_seconds}s"));
        self
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.1)
    }

    pub fn print(&self) {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {:>2}: {} ({:.1}s)",
            self.id,
            self.title,
            self.elapsed.as_secs_f64()
        );
        for (name, ok, detail) in &self.checks {
            println!("     {} {name}: {detail}", if *ok { "ok  " } else { "FAIL" });
        }
        for n in &self.notes {
            println!("     info {n}");
        }
    }
}

/// Ratios `e[i] / e[i + 1]` of successive errors (or drifts) under refinement.
pub fn ratios(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| w[0] / w[1]).collect()
}

pub fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}
