//! `skylink`: simulate the link, analyze recorded tag streams, replay the
//! reference correlations and run the two stations over TCP.

mod error;
mod report;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skylink_core::analysis::{synchronize, SyncedPairs};
use skylink_core::bell::{chsh_s, Correlation, SignPattern};
use skylink_core::scenario::Scenario;
use skylink_core::sim::simulate_run;
use skylink_core::timetag::{Party, TagStream};
use skylink_net::{run_receiver, send_tags, FaultPlan, ReceiverConfig, SenderConfig};

use error::{CliError, EXIT_OK};
use report::Run;

/// Correlations measured over the 144 km link at
/// (0°, 22.5°), (0°, 67.5°), (45°, 22.5°), (45°, 67.5°).
const REFERENCE_CORRELATIONS: [(f64, f64); 4] = [(-0.775, 0.015), (0.486, 0.020), (-0.435, 0.023), (-0.812, 0.014)];

#[derive(Parser)]
#[command(name = "skylink", version, about = "Entangled-photon link simulator and analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a run and write both parties' tag streams.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for alice.etag, bob.etag and truth.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synchronize two recorded streams and report.
    Analyze {
        #[arg(long)]
        alice: PathBuf,
        #[arg(long)]
        bob: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Bell)]
        mode: Mode,
        #[command(flatten)]
        run: RunArgs,
        /// Directory for CSV and TOML reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one station of a live session.
    Net {
        #[arg(long, value_enum)]
        role: Role,
        /// Address Alice listens on and Bob connects to.
        #[arg(long)]
        endpoint: String,
        /// Recorded stream of this station; simulated from the scenario if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Bell)]
        mode: Mode,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seconds to wait for the peer.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        #[arg(long, default_value_t = 4096)]
        batch_size: u32,
        /// Bob only: fraction of tag batches to lose on the way out.
        #[arg(long, default_value_t = 0.0)]
        drop_prob: f64,
    },
    /// Recompute S from the reference correlations, or from a bell.csv.
    Replay {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List the bundled scenarios, or print one.
    Scenarios {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Bundled scenario name or path to a scenario file.
    #[arg(long, default_value = "paper-144km")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Coincidence window in nanoseconds.
    #[arg(long)]
    window: Option<f64>,
    /// Keep clicks between pump pulses.
    #[arg(long)]
    no_gating: bool,
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, CliError> {
        let mut s = Scenario::resolve(&self.scenario)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(d) = self.duration {
            s.duration_s = d;
        }
        if let Some(w) = self.window {
            s.analysis.window_s = w * 1e-9;
        }
        if self.no_gating {
            s.analysis.gating = false;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Bell,
    Qkd,
    Histogram,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Alice,
    Bob,
}

fn read_stream(path: &Path) -> Result<TagStream, CliError> {
    let f = File::open(path).map_err(CliError::io(path))?;
    TagStream::read_from(&mut BufReader::new(f)).map_err(|source| CliError::Tags { path: path.to_path_buf(), source })
}

fn write_stream(path: &Path, s: &TagStream) -> Result<(), CliError> {
    let f = File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(f);
    s.write_to(&mut w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

fn simulate(run: &RunArgs, out: &Path) -> Result<String, CliError> {
    let s = run.scenario()?;
    let sim = simulate_run(&s.link, s.duration_s, s.seed)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_stream(&out.join("alice.etag"), &sim.alice)?;
    write_stream(&out.join("bob.etag"), &sim.bob)?;
    let truth = out.join("truth.toml");
    fs::write(&truth, sim.truth.summary()).map_err(CliError::io(&truth))?;
    let rate = |n: usize| if s.duration_s > 0.0 { n as f64 / s.duration_s } else { 0.0 };
    Ok(format!(
        "scenario {} seed {} duration {} s\nalice            {} tags ({:.0} cps)\nbob              {} tags ({:.0} cps)\ndetected pairs   {}\n",
        s.name,
        s.seed,
        s.duration_s,
        sim.alice.len(),
        rate(sim.alice.len()),
        sim.bob.len(),
        rate(sim.bob.len()),
        sim.truth.detected_pairs
    ))
}

fn analyze(alice: &Path, bob: &Path, mode: Mode, run: &RunArgs, out: Option<&Path>) -> Result<String, CliError> {
    let s = run.scenario()?;
    let (a, b) = (read_stream(alice)?, read_stream(bob)?);
    let synced = synchronize(a.tags(), b.tags(), &s.analysis)?;
    Run { alice: a.tags(), bob: b.tags(), synced: &synced, cfg: &s.analysis }.render(mode, out)
}

fn own_stream(run: &RunArgs, input: Option<&Path>, party: Party) -> Result<(Scenario, TagStream), CliError> {
    let s = run.scenario()?;
    let stream = match input {
        Some(p) => read_stream(p)?,
        None => {
            let sim = simulate_run(&s.link, s.duration_s, s.seed)?;
            if party == Party::Alice {
                sim.alice
            } else {
                sim.bob
            }
        }
    };
    Ok((s, stream))
}

#[allow(clippy::too_many_arguments)]
fn net(
    role: Role,
    endpoint: &str,
    input: Option<&Path>,
    mode: Mode,
    run: &RunArgs,
    out: Option<&Path>,
    timeout: f64,
    batch_size: u32,
    drop_prob: f64,
) -> Result<String, CliError> {
    if !(timeout > 0.0 && timeout.is_finite()) || !(0.0..1.0).contains(&drop_prob) {
        return Err(CliError::Usage("timeout must be positive and drop-prob in [0, 1)".into()));
    }
    let wait = Duration::from_secs_f64(timeout);
    match role {
        Role::Alice => {
            let (s, stream) = own_stream(run, input, Party::Alice)?;
            let listener = TcpListener::bind(endpoint).map_err(|e| CliError::Net(e.into()))?;
            let cfg = ReceiverConfig { batch_size, idle_timeout: wait, ..ReceiverConfig::default() };
            let outcome = run_receiver(&listener, stream.tags(), s.analysis, &cfg, stream.epoch() * 1000)?;
            let mut text = format!(
                "session epoch    {}\nreceived         {} tags in {} batches ({} duplicate, {} out of order, {} connections)\n",
                outcome.report.epoch_s,
                outcome.report.tags_received,
                outcome.report.batches,
                outcome.report.duplicates,
                outcome.report.out_of_order,
                outcome.report.connections
            );
            let phases: Vec<String> = outcome.history.iter().map(|h| h.phase.to_string()).collect();
            text.push_str(&format!("session phases   {}\n", phases.join(" -> ")));
            for h in outcome.history.iter().filter(|h| h.cause.is_some()) {
                text.push_str(&format!("degraded at tag {}: {}\n", h.at_tag, h.cause.as_ref().expect("cause")));
            }
            let online = outcome.result?;
            let epoch = &online.epochs[0];
            if online.epochs.len() > 1 {
                text.push_str(&format!("lock epochs      {} ({} tags suspended)\n", online.epochs.len(), online.suspended_tags));
            }
            text.push('\n');
            let synced = SyncedPairs {
                offset: epoch.offset,
                clock: online.epochs.last().expect("epoch").clock.clone(),
                matched: online.matched.clone(),
                pairs: online.pairs.clone(),
                phase: online.phase,
            };
            let report = Run { alice: stream.tags(), bob: &online.bob, synced: &synced, cfg: &s.analysis }.render(mode, out);
            match report {
                Ok(r) => Ok(text + &r),
                Err(e) => {
                    print!("{text}");
                    Err(e)
                }
            }
        }
        Role::Bob => {
            let (_, stream) = own_stream(run, input, Party::Bob)?;
            let cfg = SenderConfig { batch_size, idle_timeout: wait, connect_timeout: wait, ..SenderConfig::default() };
            let faults = FaultPlan { drop_prob, seed: run.seed.unwrap_or(0), ..FaultPlan::default() };
            let r = send_tags(endpoint, stream.tags(), stream.epoch() * 1000, &cfg, faults)?;
            let mut text = format!(
                "session epoch    {}\nsent             {} tags in {} batches\nretransmissions  {}\ndropped batches  {}\nreconnects       {}\n",
                r.epoch_s, r.tags_sent, r.batches, r.retransmissions, r.drops, r.reconnects
            );
            if let Some(st) = r.remote {
                text.push_str(&format!(
                    "alice received   {} tags, coincidence rate {:.2} cps\n",
                    st.tags_sent,
                    st.rate_millicps as f64 / 1000.0
                ));
            }
            Ok(text)
        }
    }
}

fn replay(csv: Option<&Path>) -> Result<String, CliError> {
    let rows: Vec<(f64, f64, f64, f64)> = match csv {
        None => {
            let angles = [(0.0, 22.5), (0.0, 67.5), (45.0, 22.5), (45.0, 67.5)];
            angles.iter().zip(REFERENCE_CORRELATIONS).map(|(&(a, b), (e, s))| (a, b, e, s)).collect()
        }
        Some(p) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            let mut rows = Vec::new();
            for (i, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
                let f: Vec<f64> = line.split(',').take(4).map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| {
                    CliError::Usage(format!("{}: line {}: {e}", p.display(), i + 2))
                })?;
                if f.len() < 4 {
                    return Err(CliError::Usage(format!("{}: line {}: expected phi_a,phi_b,e,sigma", p.display(), i + 2)));
                }
                rows.push((f[0], f[1], f[2], f[3]));
            }
            if rows.len() != 4 {
                return Err(CliError::Usage(format!("{}: expected four settings, found {}", p.display(), rows.len())));
            }
            rows
        }
    };
    let e: [Correlation; 4] = std::array::from_fn(|i| Correlation::new(rows[i].2, rows[i].3));
    let r = chsh_s(e, SignPattern::STANDARD);
    let mut text = String::new();
    for (a, b, e, s) in &rows {
        text.push_str(&format!("E({a}°, {b}°)   {e:+.3} ± {s:.3}\n"));
    }
    text.push_str(&format!(
        "S = {:+.3} ± {:.3}   |S| = {:.3}   violation = {:.1} σ\n",
        r.s_value,
        r.sigma_s,
        r.abs_s(),
        r.violation_sigmas
    ));
    Ok(text)
}

fn scenarios(show: Option<&str>) -> Result<String, CliError> {
    match show {
        Some(name) => Ok(Scenario::resolve(name)?.to_toml()),
        None => Ok(Scenario::bundled_names().map(|n| format!("{n}\n")).collect()),
    }
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate { run, out } => simulate(&run, &out),
        Command::Analyze { alice, bob, mode, run, out } => analyze(&alice, &bob, mode, &run, out.as_deref()),
        Command::Net { role, endpoint, input, mode, run, out, timeout, batch_size, drop_prob } => {
            net(role, &endpoint, input.as_deref(), mode, &run, out.as_deref(), timeout, batch_size, drop_prob)
        }
        Command::Replay { csv } => replay(csv.as_deref()),
        Command::Scenarios { show } => scenarios(show.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_replay() {
        let text = replay(None).unwrap();
        assert!(text.contains("|S| = 2.508"), "{text}");
        assert!(text.contains("± 0.037"), "{text}");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
