//! Minimal direct-exchange message broker.
//!
//! Two exchanges exist: `to-clients` and `to-server`. Publishers tag
//! messages with a routing key; a message is copied into every queue bound
//! to that exact key on the destination exchange (fan-out across queues,
//! exact-match routing). Queues deliver FIFO to at most one subscriber at a
//! time with at-least-once semantics: deliveries stay "unacked" until the
//! consumer acks, and go back to the front of the queue if the consumer
//! drops. Messages published to a key with no bindings are dropped and
//! counted.
//!
//! Connections authenticate with username/password before anything else.

use std::collections::{BTreeMap, VecDeque};
use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::codec::{read_frame, write_frame, WeightMessage};
use crate::error::{NetError, Result};

pub const EXCHANGE_TO_CLIENTS: &str = "to-clients";
pub const EXCHANGE_TO_SERVER: &str = "to-server";

/// Commands a peer sends to the broker.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientFrame {
    Auth {
        username: String,
        password: String,
    },
    DeclareQueue {
        queue: String,
    },
    Bind {
        exchange: String,
        queue: String,
        routing_key: String,
    },
    Publish {
        exchange: String,
        routing_key: String,
        message: Box<WeightMessage>,
    },
    Subscribe {
        queue: String,
    },
    Ack {
        delivery_id: u64,
    },
    Stats,
}

/// Frames the broker sends back (responses and asynchronous deliveries).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BrokerFrame {
    Ok,
    Error { reason: String },
    Deliver {
        queue: String,
        delivery_id: u64,
        message: Box<WeightMessage>,
    },
    Stats(BrokerStats),
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct BrokerStats {
    pub delivered: u64,
    pub acked: u64,
    pub unroutable: u64,
    pub queues: u64,
}

/// Username -> password map, loadable from a `user:password` lines file.
#[derive(Debug, Clone, Default)]
pub struct CredentialStore {
    users: BTreeMap<String, String>,
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_user(mut self, user: &str, password: &str) -> Self {
        self.users.insert(user.to_string(), password.to_string());
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut users = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (user, pass) = line.split_once(':').ok_or_else(|| {
                NetError::Broker(format!("credentials line {} lacks user:password", i + 1))
            })?;
            if user.is_empty() || pass.is_empty() {
                return Err(NetError::Broker(format!(
                    "credentials line {} has an empty field",
                    i + 1
                )));
            }
            users.insert(user.to_string(), pass.to_string());
        }
        Ok(Self { users })
    }

    fn check(&self, user: &str, password: &str) -> bool {
        !user.is_empty()
            && !password.is_empty()
            && self.users.get(user).map(String::as_str) == Some(password)
    }
}

struct SubscriberHandle {
    conn_id: u64,
    tx: Sender<BrokerFrame>,
}

#[derive(Default)]
struct Queue {
    pending: VecDeque<WeightMessage>,
    unacked: BTreeMap<u64, WeightMessage>,
    subscriber: Option<SubscriberHandle>,
    next_delivery_id: u64,
}

#[derive(Default)]
struct BrokerState {
    /// exchange -> routing key -> bound queue names.
    bindings: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    queues: BTreeMap<String, Queue>,
    stats: BrokerStats,
}

impl BrokerState {
    fn flush_queue(&mut self, name: &str) {
        let queue = match self.queues.get_mut(name) {
            Some(q) => q,
            None => return,
        };
        while let Some(sub) = queue.subscriber.as_ref() {
            let msg = match queue.pending.pop_front() {
                Some(m) => m,
                None => break,
            };
            let id = queue.next_delivery_id;
            queue.next_delivery_id += 1;
            let frame = BrokerFrame::Deliver {
                queue: name.to_string(),
                delivery_id: id,
                message: Box::new(msg.clone()),
            };
            if sub.tx.send(frame).is_ok() {
                queue.unacked.insert(id, msg);
                self.stats.delivered += 1;
            } else {
                // Writer gone; put the message back and drop the subscriber.
                queue.pending.push_front(msg);
                queue.subscriber = None;
            }
        }
    }

    fn drop_connection(&mut self, conn_id: u64) {
        let names: Vec<String> = self.queues.keys().cloned().collect();
        for name in names {
            let queue = self.queues.get_mut(&name).expect("queue exists");
            if queue
                .subscriber
                .as_ref()
                .map(|s| s.conn_id == conn_id)
                .unwrap_or(false)
            {
                queue.subscriber = None;
                // Redeliver unacked messages in their original order.
                let mut ids: Vec<u64> = queue.unacked.keys().copied().collect();
                ids.sort_unstable();
                for id in ids.into_iter().rev() {
                    if let Some(msg) = queue.unacked.remove(&id) {
                        queue.pending.push_front(msg);
                    }
                }
            }
        }
    }
}

pub struct BrokerHandle {
    addr: std::net::SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<thread::JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Bind and serve in background threads; returns once the listener is
/// accepting. `listen_addr` may use port 0 for an ephemeral port.
pub fn broker_serve(listen_addr: &str, creds: CredentialStore) -> Result<BrokerHandle> {
    let listener = TcpListener::bind(listen_addr)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let state = Arc::new(Mutex::new(BrokerState::default()));
    let creds = Arc::new(creds);

    let accept_shutdown = shutdown.clone();
    let accept_thread = thread::spawn(move || {
        let mut next_conn_id: u64 = 1;
        loop {
            if accept_shutdown.load(Ordering::SeqCst) {
                break;
            }
            match listener.accept() {
                Ok((stream, _)) => {
                    let conn_id = next_conn_id;
                    next_conn_id += 1;
                    let state = state.clone();
                    let creds = creds.clone();
                    thread::spawn(move || {
                        let _ = handle_connection(stream, conn_id, state, creds);
                    });
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
        }
    });

    Ok(BrokerHandle {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}

fn handle_connection(
    stream: TcpStream,
    conn_id: u64,
    state: Arc<Mutex<BrokerState>>,
    creds: Arc<CredentialStore>,
) -> Result<()> {
    stream.set_nodelay(true).ok();
    let write_stream = stream.try_clone()?;
    let (tx, rx) = channel::<BrokerFrame>();

    // All frames to this peer (responses and deliveries) funnel through one
    // writer thread, so a slow consumer never blocks the broker state lock.
    let writer = thread::spawn(move || {
        let mut w = write_stream;
        for frame in rx {
            if write_frame(&mut w, &frame).is_err() {
                break;
            }
        }
        let _ = w.shutdown(std::net::Shutdown::Both);
    });

    let mut reader = BufReader::new(stream);

    // First frame must authenticate.
    let authed = match read_frame::<_, ClientFrame>(&mut reader) {
        Ok(ClientFrame::Auth { username, password }) => creds.check(&username, &password),
        _ => false,
    };
    if !authed {
        let _ = tx.send(BrokerFrame::Error {
            reason: "authentication failed".into(),
        });
        drop(tx);
        let _ = writer.join();
        return Err(NetError::AuthFailed);
    }
    let _ = tx.send(BrokerFrame::Ok);

    loop {
        let frame = match read_frame::<_, ClientFrame>(&mut reader) {
            Ok(f) => f,
            Err(_) => break,
        };
        let response = {
            let mut st = state.lock().expect("broker state");
            match frame {
                ClientFrame::Auth { .. } => Some(BrokerFrame::Error {
                    reason: "already authenticated".into(),
                }),
                ClientFrame::DeclareQueue { queue } => {
                    st.queues.entry(queue).or_default();
                    st.stats.queues = st.queues.len() as u64;
                    Some(BrokerFrame::Ok)
                }
                ClientFrame::Bind {
                    exchange,
                    queue,
                    routing_key,
                } => {
                    if exchange != EXCHANGE_TO_CLIENTS && exchange != EXCHANGE_TO_SERVER {
                        Some(BrokerFrame::Error {
                            reason: format!("unknown exchange {exchange:?}"),
                        })
                    } else if !st.queues.contains_key(&queue) {
                        Some(BrokerFrame::Error {
                            reason: format!("queue {queue:?} not declared"),
                        })
                    } else {
                        let bound = st
                            .bindings
                            .entry(exchange)
                            .or_default()
                            .entry(routing_key)
                            .or_default();
                        if !bound.contains(&queue) {
                            bound.push(queue);
                        }
                        Some(BrokerFrame::Ok)
                    }
                }
                ClientFrame::Publish {
                    exchange,
                    routing_key,
                    message,
                } => {
                    if exchange != EXCHANGE_TO_CLIENTS && exchange != EXCHANGE_TO_SERVER {
                        Some(BrokerFrame::Error {
                            reason: format!("unknown exchange {exchange:?}"),
                        })
                    } else {
                        let targets: Vec<String> = st
                            .bindings
                            .get(&exchange)
                            .and_then(|keys| keys.get(&routing_key))
                            .cloned()
                            .unwrap_or_default();
                        if targets.is_empty() {
                            st.stats.unroutable += 1;
                        } else {
                            for name in targets {
                                if let Some(q) = st.queues.get_mut(&name) {
                                    q.pending.push_back((*message).clone());
                                }
                                st.flush_queue(&name);
                            }
                        }
                        Some(BrokerFrame::Ok)
                    }
                }
                ClientFrame::Subscribe { queue } => {
                    match st.queues.get_mut(&queue) {
                        None => Some(BrokerFrame::Error {
                            reason: format!("queue {queue:?} not declared"),
                        }),
                        Some(q) => {
                            if q.subscriber.is_some() {
                                Some(BrokerFrame::Error {
                                    reason: format!("queue {queue:?} already has a subscriber"),
                                })
                            } else {
                                q.subscriber = Some(SubscriberHandle {
                                    conn_id,
                                    tx: tx.clone(),
                                });
                                st.flush_queue(&queue);
                                Some(BrokerFrame::Ok)
                            }
                        }
                    }
                }
                ClientFrame::Ack { delivery_id } => {
                    // Acks are fire-and-forget; find the queue holding this
                    // delivery for this connection.
                    for q in st.queues.values_mut() {
                        let owned = q
                            .subscriber
                            .as_ref()
                            .map(|s| s.conn_id == conn_id)
                            .unwrap_or(false);
                        if owned && q.unacked.remove(&delivery_id).is_some() {
                            st.stats.acked += 1;
                            break;
                        }
                    }
                    None
                }
                ClientFrame::Stats => Some(BrokerFrame::Stats(st.stats)),
            }
        };
        if let Some(resp) = response {
            if tx.send(resp).is_err() {
                break;
            }
        }
    }

    state.lock().expect("broker state").drop_connection(conn_id);
    drop(tx);
    let _ = writer.join();
    Ok(())
}
