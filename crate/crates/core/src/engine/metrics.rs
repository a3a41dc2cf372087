//! Per-run measurements and their CSV form.

use std::fmt::Write as _;

use super::config::Algorithm;
use crate::fedproto::Transcript;
use crate::models::ModelState;

pub const CSV_HEADER: &str = "t,vtime,wtime,loss,acc,bytes_up,bytes_down,staleness,gnorm2";

/// `%g`-style formatting with `digits` significant digits.
pub fn fmt_g(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub vtime: f64,
    pub wtime: f64,
    pub loss: f64,
    pub acc: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub staleness: u64,
    pub gnorm2: f64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_state: ModelState,
    pub final_loss: f64,
    pub final_acc: f64,
    /// Events (or rounds, for the synchronous driver) executed.
    pub events: u64,
    pub vtime: f64,
    pub transcript: Option<Transcript>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub frames: u64,
    pub warmup_bytes: u64,
    pub warmup_frames: u64,
    /// Parameter snapshots `(event, state)`.
    pub trace: Vec<(u64, ModelState)>,
    /// Steps taken per party.
    pub activations: Vec<u64>,
    pub max_staleness: u64,
    pub stopped_early: bool,
}

impl RunMetrics {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                fmt_g(r.vtime, 12),
                fmt_g(r.wtime, 12),
                fmt_g(r.loss, 12),
                fmt_g(r.acc, 12),
                r.bytes_up,
                r.bytes_down,
                r.staleness,
                fmt_g(r.gnorm2, 12)
            );
        }
        out
    }

    /// `algorithm,seed,final_loss,final_acc,total_bytes,vtime`.
    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.algorithm.name(),
            self.seed,
            fmt_g(self.final_loss, 12),
            fmt_g(self.final_acc, 12),
            self.total_bytes(),
            fmt_g(self.vtime, 12)
        )
    }

    /// Virtual time of the first evaluation at or below `target`.
    pub fn time_to_loss(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.loss <= target).map(|r| r.vtime)
    }

    pub fn initial_loss(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.loss)
    }

    /// Training loss at each evaluation.
    pub fn loss_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format() {
        assert_eq!(fmt_g(0.0, 12), "0");
        assert_eq!(fmt_g(1.0, 12), "1");
        assert_eq!(fmt_g(0.5, 12), "0.5");
        assert_eq!(fmt_g(std::f64::consts::LN_2, 12), "0.69314718056");
        assert_eq!(fmt_g(123456.0, 12), "123456");
        assert_eq!(fmt_g(1e-5, 12), "1e-5");
        assert_eq!(fmt_g(-2.5e13, 12), "-2.5e13");
        assert_eq!(fmt_g(1.0 / 3.0, 12), "0.333333333333");
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn g_format_parses_back_closely() {
        for x in [3.14159265358979, -0.000123456789012345, 6.02214076e23, 1e-300, 42.0] {
            let y: f64 = fmt_g(x, 12).parse().unwrap();
            assert!(((x - y) / x).abs() < 1e-11, "{x} -> {y}");
        }
    }
}
