//! Command-line front end. Exit codes: 0 ok, 1 device or input error,
//! 2 transport error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use openpneu_core::config::ConfigFile;
use openpneu_core::controller::TICK_SECONDS;
use openpneu_core::protocol::ChannelSel;
use openpneu_core::scenario::{load_scenario, ScenarioEvent};
use openpneu_core::Device;
use tokio::net::TcpListener;

use crate::analysis::TrajectoryReport;
use crate::client::{Client, ClientError, LocalLink};
use crate::drive::{run_local, run_remote, DriveError, DEFAULT_ENVELOPE};
use crate::recording::{Clock, Recorder};
use crate::server::{serve_stdio, serve_tcp, spawn_device_loop, LoopConfig, ServerError};
use crate::trajectory::Trajectory;
use crate::ui::{self, UiError, UiOutgoing};

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Parser)]
#[command(name = "openpneu", version, about = "OpenPneu software twin: simulated device, client and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Conn {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Channel count (overrides the config file).
    #[arg(long)]
    pub channels: Option<usize>,
    /// TOML device configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disturbance and leak events, JSON.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulated device on TCP or stdio.
    ServeSim {
        #[command(flatten)]
        conn: Conn,
        #[command(flatten)]
        sim: SimArgs,
        /// Speak the protocol on stdin/stdout instead of TCP.
        #[arg(long)]
        stdio: bool,
        /// Tick as fast as possible instead of every 20 ms.
        #[arg(long)]
        accelerated: bool,
        /// Stop after this many simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Publish telemetry every N ticks.
        #[arg(long)]
        decimation: Option<u32>,
        /// Also serve the console bridge on this port.
        #[arg(long)]
        ui_port: Option<u16>,
        /// Console static assets directory.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Set one channel's target pressure in kPa.
    Set {
        #[command(flatten)]
        conn: Conn,
        channel: u8,
        kpa: f64,
    },
    /// Set every channel's target at once.
    SetAll {
        #[command(flatten)]
        conn: Conn,
        #[arg(required = true, allow_negative_numbers = true)]
        kpa: Vec<f64>,
    },
    /// Read pressures (or flows) of one channel or all.
    Get {
        #[command(flatten)]
        conn: Conn,
        #[arg(default_value = "all", value_parser = parse_sel)]
        channel: ChannelSel,
        #[arg(long)]
        flow: bool,
    },
    /// Enable closed-loop control.
    Enable {
        #[command(flatten)]
        conn: Conn,
        #[arg(default_value = "all", value_parser = parse_sel)]
        channel: ChannelSel,
    },
    /// Disable control and close the valves.
    Disable {
        #[command(flatten)]
        conn: Conn,
        #[arg(default_value = "all", value_parser = parse_sel)]
        channel: ChannelSel,
    },
    /// Print telemetry snapshots as JSON lines.
    Stream {
        #[command(flatten)]
        conn: Conn,
        /// Stop after this many snapshots.
        #[arg(long)]
        count: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Record telemetry to CSV.
    Record {
        #[command(flatten)]
        conn: Conn,
        #[arg(long, short)]
        out: PathBuf,
        /// Simulated seconds to record.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Fill wall_time from the tick counter, for reproducible files.
        #[arg(long)]
        sim_clock: bool,
    },
    /// Run a JSON trajectory and print the step report.
    RunTraj {
        trajectory: PathBuf,
        #[command(flatten)]
        conn: Conn,
        /// Simulate in-process instead of connecting.
        #[arg(long)]
        local: bool,
        #[command(flatten)]
        sim: SimArgs,
        /// Record telemetry to this CSV file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Inject a disturbance or change a leak on a simulated device.
    Inject {
        #[command(flatten)]
        conn: Conn,
        #[command(subcommand)]
        what: Injection,
    },
    /// Measure simulation throughput.
    Bench {
        #[command(flatten)]
        sim: SimArgs,
        /// Simulated seconds per run.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Serve the console bridge for a device reached over TCP.
    Ui {
        #[command(flatten)]
        conn: Conn,
        #[arg(long, default_value_t = 8080)]
        ui_port: u16,
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Injection {
    /// Extra flow in L/min for a number of seconds.
    Disturbance {
        channel: u8,
        #[arg(allow_negative_numbers = true)]
        flow: f64,
        duration: f64,
    },
    /// Leak coefficient in (L/min)/kPa.
    Leak { channel: u8, coefficient: f64 },
}

fn parse_sel(s: &str) -> Result<ChannelSel, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ChannelSel::All);
    }
    s.parse::<u8>().map(ChannelSel::One).map_err(|_| format!("expected a channel number or \"all\", got {s:?}"))
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return if e.is_transport() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<DriveError>() {
            if let DriveError::Client(c) = e {
                return if c.is_transport() { 2 } else { 1 };
            }
            return 1;
        }
        if cause.is::<UiError>() || cause.is::<ServerError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn sim_device(sim: &SimArgs) -> anyhow::Result<(Device, ConfigFile, Vec<ScenarioEvent>)> {
    let mut cfg = match &sim.config {
        Some(path) => ConfigFile::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ConfigFile::default(),
    };
    if let Some(n) = sim.channels {
        cfg.channels = n;
    }
    if let Some(seed) = sim.seed {
        cfg.seed = seed;
    }
    let device = Device::new(&cfg.device_config())?;
    let scenario = match &sim.scenario {
        Some(path) => load_scenario(path)?,
        None => Vec::new(),
    };
    Ok((device, cfg, scenario))
}

async fn connect(conn: &Conn) -> Result<Client, ClientError> {
    Client::connect((conn.host.as_str(), conn.port)).await
}

fn seconds_to_ticks(s: f64) -> u64 {
    (s / TICK_SECONDS).round().max(0.0) as u64
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ServeSim { conn, sim, stdio, accelerated, duration, decimation, ui_port, assets } => {
            let (device, cfg, scenario) = sim_device(&sim)?;
            let channels = device.channel_count();
            let loop_cfg = LoopConfig {
                decimation: decimation.unwrap_or(cfg.telemetry_decimation).max(1),
                accelerated,
                max_ticks: duration.map(seconds_to_ticks),
                scenario,
                ..LoopConfig::default()
            };
            let (handle, mut join) = spawn_device_loop(device, loop_cfg);
            if let Some(port) = ui_port {
                let listener = ui::bind(SocketAddr::new(conn.host.parse()?, port)).await?;
                let link = LocalLink::new(handle.clone());
                tokio::spawn(async move {
                    if let Err(e) = ui::serve_ui(link, channels, listener, assets).await {
                        log::error!("console bridge stopped: {e}");
                    }
                });
            }
            let transport = async {
                if stdio {
                    serve_stdio(handle.clone()).await
                } else {
                    let listener = TcpListener::bind((conn.host.as_str(), conn.port)).await?;
                    log::info!("simulated device with {channels} channels on {}", listener.local_addr()?);
                    serve_tcp(listener, handle.clone()).await
                }
            };
            tokio::select! {
                r = transport => r?,
                r = &mut join => {
                    let device = r.context("device loop panicked")??;
                    log::info!("device stopped after {} ticks", device.tick_count());
                }
            }
            Ok(())
        }
        Command::Set { conn, channel, kpa } => Ok(connect(&conn).await?.set_pressure(channel, kpa).await?),
        Command::SetAll { conn, kpa } => Ok(connect(&conn).await?.set_all(&kpa).await?),
        Command::Get { conn, channel, flow } => {
            let client = connect(&conn).await?;
            let values = if flow { client.read_flow(channel).await? } else { client.read_pressure(channel).await? };
            let first = match channel {
                ChannelSel::One(c) => usize::from(c),
                ChannelSel::All => 0,
            };
            for (i, v) in values.iter().enumerate() {
                println!("{}\t{v:.3}", first + i);
            }
            Ok(())
        }
        Command::Enable { conn, channel } => Ok(connect(&conn).await?.enable(channel).await?),
        Command::Disable { conn, channel } => Ok(connect(&conn).await?.disable(channel).await?),
        Command::Stream { conn, count, duration } => {
            let client = connect(&conn).await?;
            let mut sub = client.subscribe().await?;
            let limit = duration.map(seconds_to_ticks);
            let mut first = None;
            let mut seen = 0u64;
            while count.is_none_or(|n| seen < n) {
                let snap = sub.next().await?;
                let start = *first.get_or_insert(snap.tick);
                if limit.is_some_and(|l| snap.tick - start >= l) {
                    break;
                }
                println!("{}", serde_json::to_string(&UiOutgoing::telemetry(&snap))?);
                seen += 1;
            }
            if sub.dropped() > 0 {
                eprintln!("{} snapshots dropped", sub.dropped());
            }
            Ok(())
        }
        Command::Record { conn, out, duration, sim_clock } => {
            let client = connect(&conn).await?;
            let clock = if sim_clock { Clock::Sim } else { Clock::wall() };
            let mut rec = Recorder::create(&out, clock)?;
            let mut sub = client.subscribe().await?;
            let ticks = seconds_to_ticks(duration);
            let first = sub.next().await?;
            rec.record(&first)?;
            loop {
                let snap = sub.next().await?;
                if snap.tick - first.tick > ticks {
                    break;
                }
                rec.record(&snap)?;
            }
            eprintln!("{} rows written to {}", rec.rows(), out.display());
            rec.finish()?;
            Ok(())
        }
        Command::RunTraj { trajectory, conn, local, sim, record, report } => {
            let traj = Trajectory::load(&trajectory)?;
            let result = if local {
                let (mut device, _, scenario) = sim_device(&sim)?;
                let mut rec = record.as_ref().map(|p| Recorder::create(p, Clock::Sim)).transpose()?;
                let r = run_local(&mut device, &traj, &scenario, rec.as_mut())?;
                if let Some(rec) = rec {
                    rec.finish()?;
                }
                r
            } else {
                if sim.scenario.is_some() {
                    bail!("--scenario needs --local; use `inject` against a running device");
                }
                let client = connect(&conn).await?;
                let mut rec = record.as_ref().map(|p| Recorder::create(p, Clock::wall())).transpose()?;
                let r = run_remote(&client, &traj, DEFAULT_ENVELOPE, rec.as_mut()).await?;
                if let Some(rec) = rec {
                    rec.finish()?;
                }
                r
            };
            print_report(&result);
            if let Some(path) = report {
                write_report(&path, &result)?;
            }
            Ok(())
        }
        Command::Inject { conn, what } => {
            let client = connect(&conn).await?;
            match what {
                Injection::Disturbance { channel, flow, duration } => client.inject(channel, flow, duration).await?,
                Injection::Leak { channel, coefficient } => client.set_leak(channel, coefficient).await?,
            }
            Ok(())
        }
        Command::Bench { sim, duration } => {
            let (mut device, _, _) = sim_device(&sim)?;
            let ticks = seconds_to_ticks(duration);
            let targets = vec![30.0; device.channel_count()];
            device.set_all_targets(&targets)?;
            let start = Instant::now();
            device.run(ticks)?;
            let elapsed = start.elapsed();
            let rate = ticks as f64 / elapsed.as_secs_f64();
            println!(
                "{ticks} ticks x {} channels in {:.3} s: {rate:.0} ticks/s ({:.0}x real time)",
                device.channel_count(),
                elapsed.as_secs_f64(),
                rate * TICK_SECONDS
            );
            Ok(())
        }
        Command::Ui { conn, ui_port, assets } => {
            let client = connect(&conn).await?;
            let channels = client.channel_count();
            let listener = ui::bind(SocketAddr::new(conn.host.parse()?, ui_port)).await?;
            ui::serve_ui(client, channels, listener, assets).await?;
            Ok(())
        }
    }
}

fn print_report(report: &TrajectoryReport) {
    println!("channel\tstart_s\tfrom\ttarget\tsettle_s\tovershoot_%\tsteady_err");
    for s in &report.steps {
        println!(
            "{}\t{:.2}\t{:.2}\t{:.2}\t{}\t{}\t{:.3}",
            s.channel,
            s.start_tick as f64 * TICK_SECONDS,
            s.from_kpa,
            s.target_kpa,
            s.settle_s.map_or("-".to_string(), |t| format!("{t:.2}")),
            s.overshoot_pct.map_or("-".to_string(), |o| format!("{o:.1}")),
            s.steady_state_error
        );
    }
    match report.max_settle_s {
        Some(t) => println!("max settle {t:.2} s"),
        None => println!("max settle: some steps never settled"),
    }
    if let Some(o) = report.max_overshoot_pct {
        println!("max overshoot {o:.1} %");
    }
}

fn write_report(path: &Path, report: &TrajectoryReport) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
