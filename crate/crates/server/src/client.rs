//! Headless client used by tests and tooling. It speaks the full protocol,
//! echoes pings with an injectable delay and records everything it sees.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use vrgcs_core::protocol::{
    decode_frame, decode_mesh_chunk, decode_message, encode_message, ChunkRef, Envelope, PROTOCOL_VERSION,
};
use vrgcs_core::MeshChunk;

/// Delay applied to each direction of a ping/pong exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DelayProfile {
    #[default]
    None,
    Fixed(Duration),
    /// `base` normally. While the vehicle is airborne (and therefore
    /// mapping), every `spike_every`-th ping is delayed by `spike` instead.
    Bursty {
        base: Duration,
        spike: Duration,
        spike_every: u32,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct EchoConfig {
    pub protocol_version: u32,
    pub delay: DelayProfile,
}

impl Default for EchoConfig {
    fn default() -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            delay: DelayProfile::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Hello {
        world_name: String,
        chunk_list: Vec<ChunkRef>,
        viewer_offset_m: [f64; 3],
    },
    Pose {
        t_ns: u64,
        p: [f64; 3],
        q: [f64; 4],
        latency_ms: Option<f64>,
    },
    ChunkNotice {
        coords: [i32; 3],
        revision: u32,
    },
    Chunk(MeshChunk),
    Ping {
        id: u64,
    },
    /// Reply to a ping this client sent.
    Pong {
        id: u64,
        t_tx_ns: u64,
    },
    /// A frame that failed to decode. The session carries on.
    BadFrame(String),
    Closed(Option<String>),
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connect: {0}")]
    Connect(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("rejected by server: {0}")]
    Rejected(String),
    #[error("unexpected first message: {0}")]
    Unexpected(String),
}

pub struct EchoClient {
    out: mpsc::UnboundedSender<Message>,
    events: Arc<Mutex<Vec<ClientEvent>>>,
    reader: JoinHandle<()>,
    writer: JoinHandle<()>,
}

impl EchoClient {
    pub async fn connect(addr: SocketAddr, config: EchoConfig) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/")).await?;
        let (mut sink, mut stream) = ws.split();
        let hello = encode_message(&Envelope::client_hello(config.protocol_version));
        sink.send(Message::text(hello)).await?;

        let first = loop {
            match stream.next().await {
                Some(Ok(Message::Text(t))) => break t,
                Some(Ok(Message::Close(frame))) => {
                    let reason = frame.map(|f| f.reason.to_string()).unwrap_or_default();
                    return Err(ClientError::Rejected(reason));
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
                None => return Err(ClientError::Rejected("connection closed".into())),
            }
        };
        let events = Arc::new(Mutex::new(Vec::new()));
        match decode_message(&first) {
            Ok(Envelope::Hello {
                world_name,
                chunk_list,
                viewer_offset_m,
                ..
            }) => events.lock().unwrap().push(ClientEvent::Hello {
                world_name,
                chunk_list,
                viewer_offset_m,
            }),
            other => return Err(ClientError::Unexpected(format!("{other:?}"))),
        }

        let (out, mut out_rx) = mpsc::unbounded_channel::<Message>();
        let writer = tokio::spawn(async move {
            while let Some(m) = out_rx.recv().await {
                if sink.send(m).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let reader = {
            let events = events.clone();
            let out = out.clone();
            tokio::spawn(async move {
                let mut pings: u32 = 0;
                let mut airborne = false;
                while let Some(msg) = stream.next().await {
                    let event = match msg {
                        Ok(Message::Text(t)) => match decode_message(&t) {
                            Ok(Envelope::Ping { id, t_tx_ns }) => {
                                pings += 1;
                                let one_way = one_way_delay(config.delay, pings, airborne);
                                let pong = Message::text(encode_message(&Envelope::Pong { id, t_tx_ns }));
                                if one_way.is_zero() {
                                    let _ = out.send(pong);
                                } else {
                                    let out = out.clone();
                                    let due = Instant::now() + 2 * one_way;
                                    tokio::spawn(async move {
                                        tokio::time::sleep_until(due.into()).await;
                                        let _ = out.send(pong);
                                    });
                                }
                                ClientEvent::Ping { id }
                            }
                            Ok(Envelope::Pose {
                                t_ns,
                                p,
                                q,
                                latency_ms,
                            }) => {
                                airborne = p[2] > 0.01;
                                ClientEvent::Pose {
                                    t_ns,
                                    p,
                                    q,
                                    latency_ms,
                                }
                            }
                            Ok(Envelope::ChunkNotice { coords, revision }) => {
                                ClientEvent::ChunkNotice { coords, revision }
                            }
                            Ok(Envelope::Pong { id, t_tx_ns }) => ClientEvent::Pong { id, t_tx_ns },
                            Ok(other) => ClientEvent::BadFrame(format!("unexpected {}", other.type_name())),
                            Err(e) => ClientEvent::BadFrame(e.to_string()),
                        },
                        Ok(Message::Binary(b)) => match decode_frame(&b) {
                            Ok(payload) => match decode_mesh_chunk(payload) {
                                Ok(chunk) => ClientEvent::Chunk(chunk),
                                Err(e) => ClientEvent::BadFrame(e.to_string()),
                            },
                            Err(e) => ClientEvent::BadFrame(e.to_string()),
                        },
                        Ok(Message::Close(frame)) => ClientEvent::Closed(frame.map(|f| f.reason.to_string())),
                        Ok(_) => continue,
                        Err(e) => ClientEvent::Closed(Some(e.to_string())),
                    };
                    let closed = matches!(event, ClientEvent::Closed(_));
                    events.lock().unwrap().push(event);
                    if closed {
                        break;
                    }
                }
            })
        };

        Ok(Self {
            out,
            events,
            reader,
            writer,
        })
    }

    pub fn send(&self, env: &Envelope) {
        let _ = self.out.send(Message::text(encode_message(env)));
    }

    /// Snapshot of everything received so far, in arrival order.
    pub fn events(&self) -> Vec<ClientEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn pose_times(&self) -> Vec<u64> {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter_map(|e| match e {
                ClientEvent::Pose { t_ns, .. } => Some(*t_ns),
                _ => None,
            })
            .collect()
    }

    /// Polls until `pred` holds for the event list or `timeout` elapses.
    pub async fn wait_until(&self, timeout: Duration, pred: impl Fn(&[ClientEvent]) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if pred(&self.events.lock().unwrap()) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    pub async fn close(self) {
        let _ = self.out.send(Message::Close(None));
        let _ = tokio::time::timeout(Duration::from_secs(1), self.writer).await;
        self.reader.abort();
    }
}

fn one_way_delay(profile: DelayProfile, ping_count: u32, airborne: bool) -> Duration {
    match profile {
        DelayProfile::None => Duration::ZERO,
        DelayProfile::Fixed(d) => d,
        DelayProfile::Bursty {
            base,
            spike,
            spike_every,
        } => {
            if airborne && spike_every > 0 && ping_count.is_multiple_of(spike_every) {
                spike
            } else {
                base
            }
        }
    }
}
