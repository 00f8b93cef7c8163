//! `key=value` run report.

use std::fmt::Write as _;
use std::time::Duration;

use edgeneck_core::{Element, PipelineOutput, TensorStats};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub tensors: Vec<(String, [usize; 4], TensorStats)>,
    pub timings: Vec<(String, Duration)>,
}

impl RunReport {
    pub fn new<T: Element>(config: &RunConfig, out: &PipelineOutput<T>) -> Self {
        RunReport {
            config: config.clone(),
            tensors: out.tensors.iter().map(|(n, t)| (n.clone(), t.dims(), t.stats())).collect(),
            timings: out.timings.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
        }
    }

    /// Statistics print in shortest round-trip form, so equal reports are
    /// byte-identical. Timings are the only run-dependent lines.
    pub fn render(&self, timing: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.config.seed);
        for line in self.config.render().lines() {
            let _ = writeln!(s, "config.{line}");
        }
        for (name, d, st) in &self.tensors {
            let _ = writeln!(s, "{name}.dims={}x{}x{}x{}", d[0], d[1], d[2], d[3]);
            let _ = writeln!(s, "{name}.min={}", st.min);
            let _ = writeln!(s, "{name}.max={}", st.max);
            let _ = writeln!(s, "{name}.mean={}", st.mean);
            let _ = writeln!(s, "{name}.l2={}", st.l2);
        }
        if timing {
            for (name, d) in &self.timings {
                let _ = writeln!(s, "time.{name}_ms={:.3}", d.as_secs_f64() * 1e3);
            }
        }
        s
    }
}

/// Splits report text into `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Vec<(&str, &str)> {
    text.lines().filter_map(|l| l.split_once('=')).collect()
}
