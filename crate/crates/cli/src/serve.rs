//! WebSocket front end for a live session.
//!
//! One task owns the [`SessionEngine`]; client connections and an optional
//! recording feed it through a bounded queue. Outbound messages are
//! broadcast; a slow client loses its oldest messages instead of stalling
//! the engine.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use affect_core::config::EngineConfig;
use affect_core::model::{FrameSource, PoseFrame, RawFrame};
use affect_core::output::OscSender;
use affect_core::session::{Command, HopOutput, SessionEngine};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio_tungstenite::tungstenite::Message;

use crate::wire;

const INPUT_QUEUE: usize = 1024;
const BROADCAST_QUEUE: usize = 256;
const OSC_QUEUE: usize = 4096;

/// Messages accepted from clients.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ClientMessage {
    Frames { frames: Vec<RawFrame> },
    Command(Command),
}

#[derive(Debug)]
enum Input {
    Raw { client: u64, frames: Vec<RawFrame> },
    Frame(PoseFrame),
    Command { client: u64, command: Command },
}

#[derive(Debug, Clone)]
struct Outbound {
    /// `None` for broadcasts.
    target: Option<u64>,
    text: Arc<str>,
}

pub struct Server {
    listener: TcpListener,
    config: EngineConfig,
    osc: bool,
}

impl Server {
    pub async fn bind(addr: SocketAddr, config: EngineConfig, osc: bool) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr).await?,
            config,
            osc,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Runs until the process is stopped. `source` frames, if given, are fed
    /// into the engine alongside client input, paced by `pace`.
    pub async fn run(self, source: Option<Vec<PoseFrame>>, pace: bool) -> anyhow::Result<()> {
        let (input_tx, input_rx) = mpsc::channel(INPUT_QUEUE);
        let (out_tx, _) = broadcast::channel(BROADCAST_QUEUE);
        let osc = if self.osc {
            Some(OscSender::new(&self.config.osc_dest, OSC_QUEUE)?)
        } else {
            None
        };
        let engine = SessionEngine::new(self.config)?;
        tokio::spawn(engine_task(engine, input_rx, out_tx.clone(), osc));

        if let Some(frames) = source {
            tokio::spawn(feed_recording(frames, pace, input_tx.clone()));
        }

        let mut next_client = 0u64;
        loop {
            let (stream, peer) = self.listener.accept().await?;
            next_client += 1;
            let client = next_client;
            tracing::info!(%peer, client, "client connected");
            tokio::spawn(client_task(
                stream,
                client,
                input_tx.clone(),
                out_tx.subscribe(),
            ));
        }
    }
}

async fn feed_recording(frames: Vec<PoseFrame>, pace: bool, tx: mpsc::Sender<Input>) {
    let origin = frames.first().map_or(0.0, |f| f.timestamp);
    let start = tokio::time::Instant::now();
    for frame in frames {
        if pace {
            let due = Duration::from_secs_f64((frame.timestamp - origin).max(0.0));
            tokio::time::sleep_until(start + due).await;
        }
        if tx.send(Input::Frame(frame)).await.is_err() {
            return;
        }
    }
}

fn error_text(message: impl std::fmt::Display) -> Arc<str> {
    json!({"type": "error", "message": message.to_string()})
        .to_string()
        .into()
}

async fn engine_task(
    mut engine: SessionEngine,
    mut rx: mpsc::Receiver<Input>,
    tx: broadcast::Sender<Outbound>,
    osc: Option<OscSender>,
) {
    let mut last_state: Value = wire::idle_state(&engine);
    let mut cosmos_sent: Option<String> = None;
    let send = |target: Option<u64>, text: Arc<str>| {
        // no subscribers is not an error
        let _ = tx.send(Outbound { target, text });
    };

    while let Some(input) = rx.recv().await {
        let mut hops: Vec<HopOutput> = Vec::new();
        match input {
            Input::Raw { client, frames } => {
                for raw in &frames {
                    match engine.push_raw(raw, FrameSource::Live) {
                        Ok((_, out)) => hops.extend(out),
                        Err(e) => send(Some(client), error_text(e)),
                    }
                }
            }
            Input::Frame(frame) => match engine.push_frame(&frame) {
                Ok(out) => hops.extend(out),
                Err(e) => tracing::warn!(%e, "recording frame rejected"),
            },
            Input::Command { client, command } => {
                let t = engine.now().unwrap_or(0.0);
                match engine.command(command, t) {
                    Ok(_) => {
                        wire::refresh_state(&mut last_state, &engine);
                        send(None, last_state.to_string().into());
                    }
                    Err(e) => send(Some(client), error_text(e)),
                }
            }
        }
        for hop in &hops {
            if let Some(osc) = &osc {
                osc.enqueue(hop.packets.iter().cloned());
            }
            last_state = wire::state_message(hop, &engine);
            send(None, last_state.to_string().into());
        }
        if let Some(artifact) = engine.cosmos() {
            if cosmos_sent.as_deref() != Some(artifact.payload.as_str()) {
                cosmos_sent = Some(artifact.payload.clone());
                let msg =
                    json!({"type": "cosmos", "url": artifact.url, "summary": artifact.summary});
                send(None, msg.to_string().into());
            }
        }
    }
}

async fn client_task(
    stream: TcpStream,
    client: u64,
    input: mpsc::Sender<Input>,
    mut out: broadcast::Receiver<Outbound>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::warn!(client, %e, "handshake failed");
            return;
        }
    };
    let (mut sink, mut incoming) = ws.split();
    loop {
        tokio::select! {
            msg = incoming.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Binary(bytes))) => match String::from_utf8(bytes) {
                        Ok(text) => text,
                        Err(_) => {
                            reject(&mut sink, "binary message is not UTF-8").await;
                            return;
                        }
                    },
                    Some(Ok(Message::Close(_))) | None => return,
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => {
                        tracing::debug!(client, %e, "connection error");
                        return;
                    }
                };
                let item = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Frames { frames }) => Input::Raw { client, frames },
                    Ok(ClientMessage::Command(command)) => Input::Command { client, command },
                    Err(e) => {
                        reject(&mut sink, &format!("malformed message: {e}")).await;
                        return;
                    }
                };
                if input.send(item).await.is_err() {
                    return;
                }
            }
            msg = out.recv() => match msg {
                Ok(m) if m.target.is_none() || m.target == Some(client) => {
                    if sink.send(Message::Text(m.text.to_string())).await.is_err() {
                        return;
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::debug!(client, skipped = n, "client lagging");
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
        }
    }
}

async fn reject<S>(sink: &mut S, message: &str)
where
    S: SinkExt<Message> + Unpin,
{
    let _ = sink
        .send(Message::Text(error_text(message).to_string()))
        .await;
    let _ = sink.send(Message::Close(None)).await;
}
