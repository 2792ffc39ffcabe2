//! Text and file reports shared by `analyze` and `net`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use skylink_core::analysis::{bell_report, histogram, key_report, AnalysisConfig, SyncedPairs};
use skylink_core::sync::analyze_peak_comb;
use skylink_core::timetag::TimeTag;

use crate::error::CliError;
use crate::Mode;

/// Everything a report is built from.
pub struct Run<'a> {
    pub alice: &'a [TimeTag],
    pub bob: &'a [TimeTag],
    pub synced: &'a SyncedPairs,
    pub cfg: &'a AnalysisConfig,
}

impl Run<'_> {
    fn duration_s(&self) -> f64 {
        let span = |t: &[TimeTag]| match (t.first(), t.last()) {
            (Some(a), Some(b)) => b.time_s() - a.time_s(),
            _ => 0.0,
        };
        span(self.alice).max(span(self.bob))
    }

    fn sync_summary(&self) -> String {
        let s = self.synced;
        let mut out = String::new();
        writeln!(out, "offset           {:.6} µs (confidence {:.1})", s.offset.offset_s * 1e6, s.offset.confidence).unwrap();
        writeln!(out, "drift            {:+.3e}", s.clock.drift()).unwrap();
        writeln!(out, "matched pairs    {}", s.matched.len()).unwrap();
        let gated = match s.phase {
            Some(p) => format!("{} (pulse phase {:.3} ns)", s.pairs.len(), p.phase_s * 1e9),
            None => format!("{} (gating off)", s.pairs.len()),
        };
        writeln!(out, "after gating     {gated}").unwrap();
        writeln!(out, "duration         {:.1} s", self.duration_s()).unwrap();
        writeln!(out, "coincidence rate {:.2} cps", self.synced.rate_cps(self.duration_s())).unwrap();
        out
    }

    fn sync_toml(&self) -> String {
        let s = self.synced;
        format!(
            "offset_s = {:e}\nconfidence = {}\ndrift = {:e}\nmatched = {}\ngated = {}\nduration_s = {}\nrate_cps = {}\n",
            s.offset.offset_s,
            s.offset.confidence,
            s.clock.drift(),
            s.matched.len(),
            s.pairs.len(),
            self.duration_s(),
            s.rate_cps(self.duration_s())
        )
    }

    /// Renders the report for `mode`, writing files into `out` when given.
    /// A key that cannot be distilled still prints its statistics before
    /// the error is returned.
    pub fn render(&self, mode: Mode, out: Option<&Path>) -> Result<String, CliError> {
        let write = |name: &str, text: &str| -> Result<(), CliError> {
            if let Some(dir) = out {
                fs::create_dir_all(dir).map_err(CliError::io(dir))?;
                let p = dir.join(name);
                fs::write(&p, text).map_err(CliError::io(&p))?;
            }
            Ok(())
        };
        let mut text = self.sync_summary();
        write("sync.toml", &self.sync_toml())?;
        match mode {
            Mode::Bell => {
                let r = bell_report(&self.synced.pairs, self.cfg)?;
                text.push('\n');
                text.push_str(&r.to_string());
                write("bell.csv", &r.to_csv())?;
                write("bell.toml", &r.to_toml())?;
            }
            Mode::Qkd => {
                let (raw, report) = key_report(&self.synced.pairs, self.cfg);
                let fraction = if self.synced.pairs.is_empty() { 0.0 } else { raw.len() as f64 / self.synced.pairs.len() as f64 };
                writeln!(text, "\nsifted           {} of {} pairs ({:.3})", raw.len(), self.synced.pairs.len(), fraction).unwrap();
                match report {
                    Ok(r) => {
                        text.push_str(&r.to_string());
                        writeln!(text, "keys identical   {}", r.keys_identical()).unwrap();
                        write("key.toml", &r.to_toml())?;
                    }
                    Err(e) => {
                        writeln!(text, "raw key          {} bits ({} errors)", raw.len(), raw.errors()).unwrap();
                        print!("{text}");
                        return Err(e.into());
                    }
                }
            }
            Mode::Histogram => {
                let h = histogram(self.alice, self.bob, &self.synced.clock, self.cfg)?;
                write("histogram.csv", &h.to_csv())?;
                writeln!(text, "\nhistogram        {} bins of {:.0} ps, {} pairs", h.bins.len(), h.bin_width_s * 1e12, h.total()).unwrap();
                match analyze_peak_comb(&h, self.cfg.pulse_period_s, self.cfg.pulse_period_s / 4.0) {
                    Some(c) => {
                        writeln!(text, "peak spacing     {:.3} ns over {} peaks", c.spacing_s * 1e9, c.positions_s.len()).unwrap();
                        writeln!(text, "side/central     {:.3}", c.side_to_central).unwrap();
                    }
                    None => writeln!(text, "peak spacing     n/a (span too short)").unwrap(),
                }
                if out.is_none() {
                    text.push('\n');
                    text.push_str(&h.to_csv());
                }
            }
        }
        Ok(text)
    }
}
