//! One WebSocket client. Text frames carry JSON envelopes, binary frames
//! carry length-prefixed MSH1 chunks.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use vrgcs_core::protocol::{decode_message, encode_message, Envelope, LatencyProbe, PROTOCOL_VERSION};
use vrgcs_core::telemetry::LatencyLog;

use crate::clock::Clock;
use crate::sim_loop::{Outbound, SessionId, SimInput};
use crate::stats::ServerStats;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
/// Unanswered pings older than this are forgotten.
const PROBE_EXPIRY_NS: u64 = 10_000_000_000;

#[derive(Clone)]
pub(crate) struct SessionContext {
    pub sim_tx: Sender<SimInput>,
    pub clock: Clock,
    pub stats: Arc<ServerStats>,
    pub log: Arc<Mutex<LatencyLog>>,
    pub probe_interval: Duration,
    pub next_session: Arc<AtomicU64>,
    pub next_probe: Arc<AtomicU64>,
}

type Ws = tokio_tungstenite::WebSocketStream<TcpStream>;

async fn reject(ws: &mut Ws, reason: String) {
    let frame = CloseFrame {
        code: CloseCode::Policy,
        reason: reason.into(),
    };
    let _ = ws.send(Message::Close(Some(frame))).await;
    let _ = ws.close(None).await;
}

/// Waits for the client's `hello`. Returns an error message for the close
/// frame when the handshake fails.
async fn handshake(ws: &mut Ws) -> Result<(), String> {
    let first = tokio::time::timeout(HANDSHAKE_TIMEOUT, ws.next())
        .await
        .map_err(|_| "no hello received".to_owned())?;
    let text = match first {
        Some(Ok(Message::Text(t))) => t,
        Some(Ok(other)) => return Err(format!("expected hello, got {other:?}")),
        Some(Err(e)) => return Err(e.to_string()),
        None => return Err("connection closed before hello".into()),
    };
    match decode_message(&text) {
        Ok(Envelope::Hello { protocol_version, .. }) if protocol_version == PROTOCOL_VERSION => Ok(()),
        Ok(Envelope::Hello { protocol_version, .. }) => Err(format!(
            "protocol version mismatch: server speaks {PROTOCOL_VERSION}, client sent {protocol_version}"
        )),
        Ok(other) => Err(format!("expected hello, got {}", other.type_name())),
        Err(e) => Err(format!("bad hello: {e}")),
    }
}

pub(crate) async fn run_session(stream: TcpStream, ctx: SessionContext) {
    let peer = stream.peer_addr().ok();
    let mut ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(?peer, "websocket upgrade failed: {e}");
            return;
        }
    };
    if let Err(reason) = handshake(&mut ws).await {
        info!(?peer, "session rejected: {reason}");
        ServerStats::bump(&ctx.stats.sessions_rejected);
        reject(&mut ws, reason).await;
        return;
    }

    let session: SessionId = ctx.next_session.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel();
    let (reply_tx, reply_rx) = oneshot::channel();
    if ctx
        .sim_tx
        .send(SimInput::Join {
            session,
            tx,
            reply: reply_tx,
        })
        .is_err()
    {
        reject(&mut ws, "server shutting down".into()).await;
        return;
    }
    let Ok(info) = reply_rx.await else {
        reject(&mut ws, "server shutting down".into()).await;
        return;
    };
    ServerStats::bump(&ctx.stats.sessions_accepted);
    info!(?peer, session, authority = info.authority, "session joined");

    let (mut sink, mut incoming) = ws.split();
    // The hello and the chunk replay were queued before the join reply, so
    // they go out ahead of any probe.
    for _ in 0..rx.len() {
        let Ok(out) = rx.try_recv() else { break };
        if let Err(e) = send_outbound(&mut sink, out, None).await {
            warn!(session, "send failed, dropping session: {e}");
            let _ = ctx.sim_tx.send(SimInput::Leave { session });
            return;
        }
    }
    let start = tokio::time::Instant::now() + ctx.probe_interval;
    let mut probe = tokio::time::interval_at(start, ctx.probe_interval);
    probe.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut pending: HashMap<u64, u64> = HashMap::new();
    let mut latest_latency_ms: Option<f64> = None;

    loop {
        let result = tokio::select! {
            out = rx.recv() => {
                let Some(out) = out else { break };
                send_outbound(&mut sink, out, latest_latency_ms).await
            }
            msg = incoming.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    match decode_message(&text) {
                        Ok(Envelope::Pong { id, t_tx_ns }) => {
                            let t_rx_ns = ctx.clock.now_ns();
                            // Only echoes of our own pings, carried back verbatim, count.
                            if pending.get(&id) == Some(&t_tx_ns) {
                                pending.remove(&id);
                                if let Ok(p) = LatencyProbe::new(id, t_tx_ns, t_rx_ns) {
                                    latest_latency_ms = Some(p.one_way_ms());
                                    let mut log = ctx.log.lock().expect("latency log poisoned");
                                    if log.record(p).is_ok() {
                                        ServerStats::bump(&ctx.stats.probes_resolved);
                                    }
                                }
                            }
                            Ok(())
                        }
                        Ok(Envelope::Ping { id, t_tx_ns }) => {
                            let pong = encode_message(&Envelope::Pong { id, t_tx_ns });
                            sink.send(Message::text(pong)).await
                        }
                        Ok(env @ (Envelope::CmdVel(_) | Envelope::Takeoff | Envelope::Land)) => {
                            if ctx.sim_tx.send(SimInput::Command { session, env }).is_err() {
                                break;
                            }
                            Ok(())
                        }
                        Ok(other) => {
                            debug!(session, "ignoring {} from client", other.type_name());
                            Ok(())
                        }
                        Err(e) => {
                            debug!(session, "undecodable message: {e}");
                            Ok(())
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => Ok(()),
                Some(Err(e)) => {
                    debug!(session, "receive failed: {e}");
                    break;
                }
            },
            _ = probe.tick() => {
                let id = ctx.next_probe.fetch_add(1, Ordering::Relaxed);
                let t_tx_ns = ctx.clock.now_ns();
                pending.retain(|_, t| t_tx_ns.saturating_sub(*t) < PROBE_EXPIRY_NS);
                pending.insert(id, t_tx_ns);
                sink.send(Message::text(encode_message(&Envelope::Ping { id, t_tx_ns }))).await
            }
        };
        if let Err(e) = result {
            warn!(session, "send failed, dropping session: {e}");
            break;
        }
    }

    let _ = ctx.sim_tx.send(SimInput::Leave { session });
    let _ = sink.close().await;
    info!(session, "session closed");
}

async fn send_outbound<S>(sink: &mut S, out: Outbound, latency_ms: Option<f64>) -> Result<(), S::Error>
where
    S: SinkExt<Message> + Unpin,
{
    match out {
        Outbound::Text(t) => sink.send(Message::text(t)).await,
        Outbound::Pose { t_ns, p, q } => {
            let env = Envelope::Pose {
                t_ns,
                p,
                q,
                latency_ms,
            };
            sink.send(Message::text(encode_message(&env))).await
        }
        Outbound::Chunk {
            coords,
            revision,
            frame,
        } => {
            let notice = encode_message(&Envelope::ChunkNotice { coords, revision });
            sink.send(Message::text(notice)).await?;
            sink.send(Message::binary(frame.as_ref().clone())).await
        }
    }
}
