use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_queue::ArrayQueue;
use serde::Serialize;
use thiserror::Error;

use super::osc::{encode_osc, OscPacket};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[error("socket error sending {address}: {message}")]
pub struct SocketError {
    pub address: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SendReport {
    /// Addresses of the packets handed to the socket.
    pub sent: Vec<String>,
    pub errors: Vec<SocketError>,
}

/// Sends packets synchronously, fire-and-forget. Failures are collected,
/// never raised.
pub fn send_packets(socket: &UdpSocket, dest: SocketAddr, packets: &[OscPacket]) -> SendReport {
    let mut report = SendReport::default();
    for p in packets {
        let result = encode_osc(p)
            .map_err(|e| e.to_string())
            .and_then(|bytes| socket.send_to(&bytes, dest).map_err(|e| e.to_string()));
        match result {
            Ok(_) => report.sent.push(p.address.clone()),
            Err(message) => {
                tracing::warn!(address = %p.address, %message, "osc send failed");
                report.errors.push(SocketError {
                    address: p.address.clone(),
                    message,
                });
            }
        }
    }
    report
}

/// Background UDP sender fed by a bounded queue. When the queue is full the
/// oldest pending packet is discarded.
pub struct OscSender {
    queue: Arc<ArrayQueue<OscPacket>>,
    stop: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
    errors: Arc<Mutex<Vec<SocketError>>>,
    worker: Option<JoinHandle<()>>,
}

impl OscSender {
    pub fn new(dest: &str, capacity: usize) -> std::io::Result<Self> {
        let dest = dest
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
        let bind = if dest.is_ipv4() {
            "0.0.0.0:0"
        } else {
            "[::]:0"
        };
        let socket = UdpSocket::bind(bind)?;
        let queue = Arc::new(ArrayQueue::new(capacity.max(1)));
        let stop = Arc::new(AtomicBool::new(false));
        let errors = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let (queue, stop, errors) = (queue.clone(), stop.clone(), errors.clone());
            thread::Builder::new()
                .name("osc-sender".into())
                .spawn(move || loop {
                    match queue.pop() {
                        Some(packet) => {
                            let report = send_packets(&socket, dest, std::slice::from_ref(&packet));
                            if !report.errors.is_empty() {
                                errors
                                    .lock()
                                    .expect("error log poisoned")
                                    .extend(report.errors);
                            }
                        }
                        None if stop.load(Ordering::Acquire) => break,
                        None => thread::park_timeout(Duration::from_millis(5)),
                    }
                })?
        };
        Ok(Self {
            queue,
            stop,
            dropped: Arc::new(AtomicU64::new(0)),
            errors,
            worker: Some(worker),
        })
    }

    pub fn enqueue(&self, packets: impl IntoIterator<Item = OscPacket>) {
        for p in packets {
            if self.queue.force_push(p).is_some() {
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        if let Some(w) = &self.worker {
            w.thread().unpark();
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn take_errors(&self) -> Vec<SocketError> {
        std::mem::take(&mut *self.errors.lock().expect("error log poisoned"))
    }
}

impl Drop for OscSender {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(w) = self.worker.take() {
            w.thread().unpark();
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::osc::{decode_osc, OscArg};

    #[test]
    fn delivers_packets_over_udp() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        rx.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let sender = OscSender::new(&rx.local_addr().unwrap().to_string(), 64).unwrap();
        let p = OscPacket::new("/cv/audio/tempo", vec![OscArg::Float(100.0)]);
        sender.enqueue([p.clone()]);
        let mut buf = [0u8; 256];
        let n = rx.recv(&mut buf).unwrap();
        assert_eq!(decode_osc(&buf[..n]).unwrap(), p);
    }

    #[test]
    fn unreachable_destination_is_reported_not_fatal() {
        let socket = UdpSocket::bind("0.0.0.0:0").unwrap();
        // broadcast without SO_BROADCAST is refused by the kernel
        let dest: SocketAddr = "255.255.255.255:9000".parse().unwrap();
        let packets = vec![OscPacket::new("/a", vec![]), OscPacket::new("/b", vec![])];
        let report = send_packets(&socket, dest, &packets);
        assert_eq!(report.errors.len(), 2);
        assert!(report.sent.is_empty());
    }
}
