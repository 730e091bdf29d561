//! Reporting harness for the acceptance suite: each criterion runs in
//! isolation, panics count as failures, and one line is printed per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub verdict: Verdict,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {} ({:.1} s): {}",
            self.id,
            if self.verdict.pass { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.verdict.detail
        )
    }
}

/// Criterion ids selected on the command line; all when none are given.
pub fn selected(args: &[String]) -> Option<Vec<u32>> {
    let ids: Vec<u32> = args
        .iter()
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.trim_start_matches(['c', 'C']).parse().ok())
        .collect();
    (!ids.is_empty()).then_some(ids)
}

pub fn run(id: u32, name: &'static str, body: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(v) => v,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Verdict::new(false, format!("panicked: {msg}"))
        }
    };
    let outcome = Outcome {
        id,
        name,
        verdict,
        elapsed: start.elapsed(),
    };
    println!("{}", outcome.line());
    outcome
}
