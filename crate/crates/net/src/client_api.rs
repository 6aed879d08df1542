//! Connection handle used by server nodes, client daemons and tests to
//! talk to the broker.

use std::io::BufReader;
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::broker::{BrokerFrame, BrokerStats, ClientFrame};
use crate::codec::{read_frame, write_frame, WeightMessage};
use crate::error::{NetError, Result};

#[derive(Debug)]
pub struct Delivery {
    pub queue: String,
    pub delivery_id: u64,
    pub message: WeightMessage,
}

/// One authenticated broker connection. Deliveries arrive asynchronously
/// and are buffered separately from command responses.
pub struct BrokerClient {
    writer: TcpStream,
    responses: Receiver<BrokerFrame>,
    deliveries: Receiver<Delivery>,
}

impl Drop for BrokerClient {
    fn drop(&mut self) {
        // The reader thread holds a clone of the socket; shut the whole
        // socket down so both sides (and the broker) see the disconnect.
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
    }
}

impl BrokerClient {
    pub fn connect(addr: &str, username: &str, password: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true).ok();
        let writer = stream.try_clone()?;
        let (resp_tx, responses) = channel();
        let (del_tx, deliveries) = channel();
        let read_stream = stream;
        thread::spawn(move || {
            let mut reader = BufReader::new(read_stream);
            loop {
                match read_frame::<_, BrokerFrame>(&mut reader) {
                    Ok(BrokerFrame::Deliver {
                        queue,
                        delivery_id,
                        message,
                    }) => {
                        if del_tx
                            .send(Delivery {
                                queue,
                                delivery_id,
                                message: *message,
                            })
                            .is_err()
                        {
                            break;
                        }
                    }
                    Ok(frame) => {
                        if resp_tx.send(frame).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let mut client = Self {
            writer,
            responses,
            deliveries,
        };
        client.send(&ClientFrame::Auth {
            username: username.to_string(),
            password: password.to_string(),
        })?;
        match client.wait_response(Duration::from_secs(10))? {
            BrokerFrame::Ok => Ok(client),
            BrokerFrame::Error { .. } => Err(NetError::AuthFailed),
            other => Err(NetError::Broker(format!("unexpected reply {other:?}"))),
        }
    }

    fn send(&mut self, frame: &ClientFrame) -> Result<()> {
        write_frame(&mut self.writer, frame)
    }

    fn wait_response(&self, timeout: Duration) -> Result<BrokerFrame> {
        self.responses
            .recv_timeout(timeout)
            .map_err(|_| NetError::Timeout("broker response".into()))
    }

    fn command(&mut self, frame: &ClientFrame) -> Result<()> {
        self.send(frame)?;
        match self.wait_response(Duration::from_secs(10))? {
            BrokerFrame::Ok => Ok(()),
            BrokerFrame::Error { reason } => Err(NetError::Broker(reason)),
            other => Err(NetError::Broker(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn declare_queue(&mut self, queue: &str) -> Result<()> {
        self.command(&ClientFrame::DeclareQueue {
            queue: queue.to_string(),
        })
    }

    pub fn bind(&mut self, exchange: &str, queue: &str, routing_key: &str) -> Result<()> {
        self.command(&ClientFrame::Bind {
            exchange: exchange.to_string(),
            queue: queue.to_string(),
            routing_key: routing_key.to_string(),
        })
    }

    pub fn publish(
        &mut self,
        exchange: &str,
        routing_key: &str,
        message: WeightMessage,
    ) -> Result<()> {
        self.command(&ClientFrame::Publish {
            exchange: exchange.to_string(),
            routing_key: routing_key.to_string(),
            message: Box::new(message),
        })
    }

    pub fn subscribe(&mut self, queue: &str) -> Result<()> {
        self.command(&ClientFrame::Subscribe {
            queue: queue.to_string(),
        })
    }

    pub fn ack(&mut self, delivery_id: u64) -> Result<()> {
        self.send(&ClientFrame::Ack { delivery_id })
    }

    pub fn next_delivery(&self, timeout: Duration) -> Result<Delivery> {
        self.deliveries.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => NetError::Timeout("delivery".into()),
            RecvTimeoutError::Disconnected => NetError::Broker("connection closed".into()),
        })
    }

    pub fn try_next_delivery(&self) -> Option<Delivery> {
        self.deliveries.try_recv().ok()
    }

    pub fn stats(&mut self) -> Result<BrokerStats> {
        self.send(&ClientFrame::Stats)?;
        match self.wait_response(Duration::from_secs(10))? {
            BrokerFrame::Stats(s) => Ok(s),
            BrokerFrame::Error { reason } => Err(NetError::Broker(reason)),
            other => Err(NetError::Broker(format!("unexpected reply {other:?}"))),
        }
    }
}
