use std::fmt::Write as _;
use std::path::Path;

use eqop::util::{fmt_f64, KeyValues};

/// What a command did: inputs, parameters, named scalar metrics and files written.
#[derive(Debug, Default)]
pub struct RunReport {
    pub command: String,
    pub inputs: Vec<String>,
    pub parameters: Vec<(String, String)>,
    pub metrics: Vec<(String, f64)>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport { command: command.to_string(), ..Default::default() }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().display().to_string());
    }

    pub fn param(&mut self, k: &str, v: impl ToString) {
        self.parameters.push((k.to_string(), v.to_string()));
    }

    pub fn metric(&mut self, k: &str, v: f64) {
        self.metrics.push((k.to_string(), v));
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().display().to_string());
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn human(&self) -> String {
        let mut s = format!("eqop {}\n", self.command);
        for i in &self.inputs {
            let _ = writeln!(s, "  input   {i}");
        }
        for (k, v) in &self.parameters {
            let _ = writeln!(s, "  param   {k} = {v}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "  metric  {k} = {}", fmt_f64(*v));
        }
        for o in &self.outputs {
            let _ = writeln!(s, "  output  {o}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "  {n}");
        }
        s
    }

    pub fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("command", self.command.clone());
        for i in &self.inputs {
            kv.push("input", i.clone());
        }
        for (k, v) in &self.parameters {
            kv.push(&format!("param.{k}"), v.clone());
        }
        for (k, v) in &self.metrics {
            kv.push(&format!("metric.{k}"), fmt_f64(*v));
        }
        for o in &self.outputs {
            kv.push("output", o.clone());
        }
        kv
    }

    pub fn print(&self) {
        print!("{}", self.human());
        println!("--- report ---");
        print!("{}", self.key_values().render());
    }
}
