use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use affect_cli::serve::Server;
use affect_core::config::{load_config, parse_overrides, resolve_config_path, EngineConfig};
use affect_core::cosmos::decode_payload;
use affect_core::harness::eval::{run_eval, EvalOptions, Suite};
use affect_core::harness::replay::{default_script, read_script, replay, Pacing};
use affect_core::harness::synth::{synth, GestureArchetype};
use affect_core::model::{load_recording, write_recording, EmotionLabel, FrameSource, PoseFrame};
use affect_core::output::{send_packets, OscPacket};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affect", version, about = "Movement-driven emotion engine")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Verb,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file (defaults to $AFFECT_CONFIG when set)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set feature_ranges.speed=[0,5]
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// UDP destination for OSC output
    #[arg(long, global = true)]
    osc_dest: Option<String>,
    /// Base URL of the cosmos viewer
    #[arg(long, global = true)]
    cosmos_base_url: Option<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a live session behind a WebSocket server
    Serve {
        #[arg(long)]
        ws_port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Feed frames from a recording in addition to client input
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Deliver recording frames as fast as possible
        #[arg(long)]
        fast: bool,
        /// Disable OSC output
        #[arg(long)]
        no_osc: bool,
    },
    /// Replay a recording through the engine and write the session report
    Replay {
        recording: PathBuf,
        /// Timed command script (JSON lines); defaults to a single start
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, conflicts_with = "realtime")]
        fast: bool,
        #[arg(long)]
        realtime: bool,
        /// Also send OSC packets
        #[arg(long)]
        osc: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic recording
    Synth {
        #[arg(long, default_value = "happiness")]
        archetype: EmotionLabel,
        #[arg(long, default_value_t = 1)]
        persons: usize,
        /// Seconds
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scripted teach-then-recognize evaluation
    Eval {
        #[arg(long, default_value = "basic")]
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the metrics report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cosmos payload tools
    Cosmos {
        #[command(subcommand)]
        action: CosmosAction,
    },
}

#[derive(Subcommand)]
enum CosmosAction {
    /// Decode a payload or cosmos URL and print the summary
    Decode { payload: String },
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Bind(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Bind(_) => 3,
        }
    }
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Data(e) | Failure::Bind(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn config_from(global: &GlobalArgs, ws_port: Option<u16>) -> Result<EngineConfig, Failure> {
    let mut overrides = parse_overrides(&global.overrides).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(dest) = &global.osc_dest {
        overrides.insert("osc_dest".into(), dest.clone().into());
    }
    if let Some(url) = &global.cosmos_base_url {
        overrides.insert("cosmos_base_url".into(), url.clone().into());
    }
    if let Some(port) = ws_port {
        overrides.insert("ws_port".into(), port.into());
    }
    let path = resolve_config_path(global.config.as_deref());
    load_config(path.as_deref(), &overrides).map_err(data)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .map_err(data)?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_frames(path: &Path) -> Result<Vec<PoseFrame>, Failure> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(data)?;
    load_recording(BufReader::new(file), FrameSource::Recording)
        .with_context(|| format!("invalid recording {}", path.display()))
        .map_err(data)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Verb::Serve {
            ws_port,
            host,
            recording,
            fast,
            no_osc,
        } => {
            let config = config_from(&cli.global, ws_port)?;
            let frames = recording.as_deref().map(read_frames).transpose()?;
            let addr: SocketAddr = format!("{host}:{}", config.ws_port)
                .parse()
                .with_context(|| format!("bad listen address {host}"))
                .map_err(Failure::Usage)?;
            let runtime = tokio::runtime::Runtime::new().map_err(data)?;
            runtime.block_on(async {
                let server = Server::bind(addr, config, !no_osc)
                    .await
                    .with_context(|| format!("cannot listen on {addr}"))
                    .map_err(Failure::Bind)?;
                let local = server.local_addr().map_err(|e| Failure::Bind(e.into()))?;
                println!("listening on ws://{local}");
                tokio::select! {
                    r = server.run(frames, !fast) => r.map_err(data),
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })
        }
        Verb::Replay {
            recording,
            script,
            fast: _,
            realtime,
            osc,
            out,
        } => {
            let config = config_from(&cli.global, None)?;
            let frames = read_frames(&recording)?;
            let script = match script {
                Some(p) => {
                    let file = File::open(&p)
                        .with_context(|| format!("cannot open {}", p.display()))
                        .map_err(data)?;
                    read_script(BufReader::new(file)).map_err(data)?
                }
                None => default_script(&frames),
            };
            let socket = if osc {
                let dest: SocketAddr = config
                    .osc_dest
                    .parse()
                    .with_context(|| format!("bad OSC destination {}", config.osc_dest))
                    .map_err(Failure::Usage)?;
                let s =
                    std::net::UdpSocket::bind("0.0.0.0:0").map_err(|e| Failure::Bind(e.into()))?;
                Some((s, dest))
            } else {
                None
            };
            let pacing = if realtime {
                Pacing::Realtime
            } else {
                Pacing::Fast
            };
            let outcome = replay(&frames, &script, &config, pacing, |hop| {
                if let Some((s, dest)) = &socket {
                    let packets: &[OscPacket] = &hop.packets;
                    send_packets(s, *dest, packets);
                }
            })
            .map_err(data)?;
            for r in &outcome.rejected {
                eprintln!(
                    "warning: t={} {} rejected: {}",
                    r.t,
                    r.command.name(),
                    r.error
                );
            }
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", outcome.report.to_json()).map_err(data)?;
            w.flush().map_err(data)?;
            eprintln!(
                "{} frames, {} hops, final phase {}",
                frames.len(),
                outcome.hops,
                outcome.report.phase
            );
            if let Some(c) = &outcome.report.cosmos {
                eprintln!("cosmos: {}", c.url);
            }
            Ok(())
        }
        Verb::Synth {
            archetype,
            persons,
            duration,
            seed,
            out,
        } => {
            let a =
                GestureArchetype::default_for(&archetype).map_err(|e| Failure::Usage(e.into()))?;
            let frames =
                synth(&a, persons, duration, seed).map_err(|e| Failure::Usage(e.into()))?;
            let w = output(out.as_deref())?;
            write_recording(w, &frames).map_err(data)?;
            Ok(())
        }
        Verb::Eval { suite, seed, out } => {
            let config = config_from(&cli.global, None)?;
            let options = EvalOptions {
                suite,
                seed,
                ..EvalOptions::default()
            };
            let started = Instant::now();
            let report = run_eval(&config, &options).map_err(data)?;
            let elapsed = started.elapsed().as_secs_f64();
            emit(&format_eval(&report, elapsed))?;
            if let Some(p) = out {
                let mut w = output(Some(&p))?;
                serde_json::to_writer_pretty(&mut w, &report).map_err(data)?;
                writeln!(w).map_err(data)?;
            }
            Ok(())
        }
        Verb::Cosmos {
            action: CosmosAction::Decode { payload },
        } => {
            let summary = decode_payload(&payload).map_err(data)?;
            emit(&serde_json::to_string_pretty(&summary).map_err(data)?)
        }
    }
}

/// Writes to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(data(e)),
        _ => Ok(()),
    }
}

fn format_eval(report: &affect_core::harness::eval::EvalReport, elapsed: f64) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "suite {:?}, seed {}, {} windows",
        report.suite, report.seed, report.windows
    );
    let _ = write!(s, "{:>12}", "truth\\pred");
    for l in &report.labels {
        let _ = write!(s, "{:>12}", l.as_str());
    }
    let _ = writeln!(s, "{:>10}", "accuracy");
    for (k, row) in report.confusion.iter().enumerate() {
        let _ = write!(s, "{:>12}", report.labels[k].as_str());
        for n in row {
            let _ = write!(s, "{n:>12}");
        }
        let _ = writeln!(s, "{:>10.3}", report.per_label_accuracy[k]);
    }
    let _ = write!(
        s,
        "overall accuracy {:.3}, mean confidence {:.3}, runtime {:.1} s",
        report.accuracy, report.mean_confidence, elapsed
    );
    s
}
