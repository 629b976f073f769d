use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::{encode, respond, CoordinatorLink, LineDecoder, TransportError, WireMessage};
use crate::agent::Agent;

pub const DEFAULT_PORT: u16 = 7707;
pub const BIND_ENV: &str = "LLMIND_BIND";

/// `LLMIND_BIND` if set, else `requested`, else all interfaces on the default port.
pub fn bind_address(requested: Option<&str>) -> String {
    std::env::var(BIND_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .or_else(|| requested.map(str::to_string))
        .unwrap_or_else(|| format!("0.0.0.0:{DEFAULT_PORT}"))
}

type Writers = Arc<Mutex<BTreeMap<String, TcpStream>>>;

/// Coordinator side of the TCP JSON-lines transport. An agent registers by
/// sending a report (round 0) as its first message.
pub struct TcpCoordinatorLink {
    local: SocketAddr,
    writers: Writers,
    inbox_rx: Receiver<(String, WireMessage)>,
}

impl TcpCoordinatorLink {
    pub fn bind(addr: &str) -> io::Result<Arc<Self>> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let writers: Writers = Arc::default();
        let (inbox_tx, inbox_rx) = unbounded();
        let w = writers.clone();
        thread::Builder::new().name("tcp-accept".into()).spawn(move || {
            for stream in listener.incoming().flatten() {
                let (w, tx) = (w.clone(), inbox_tx.clone());
                thread::spawn(move || read_agent(stream, w, tx));
            }
        })?;
        Ok(Arc::new(TcpCoordinatorLink { local, writers, inbox_rx }))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }
}

fn read_agent(mut stream: TcpStream, writers: Writers, inbox: Sender<(String, WireMessage)>) {
    let mut decoder = LineDecoder::new();
    let mut device_id: Option<String> = None;
    let mut buf = [0u8; 8192];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        for msg in decoder.push(&buf[..n]) {
            // Bad lines are dropped; the connection carries on.
            let Ok(msg) = msg else { continue };
            if device_id.is_none() {
                let WireMessage::Report { payload, .. } = &msg else { continue };
                let Ok(writer) = stream.try_clone() else { return };
                device_id = Some(payload.device_id.clone());
                writers.lock().insert(payload.device_id.clone(), writer);
            }
            let id = device_id.clone().expect("registered above");
            if inbox.send((id, msg)).is_err() {
                return;
            }
        }
    }
    if let Some(id) = device_id {
        writers.lock().remove(&id);
    }
}

impl CoordinatorLink for TcpCoordinatorLink {
    fn endpoints(&self) -> Vec<String> {
        self.writers.lock().keys().cloned().collect()
    }

    fn send(&self, device_id: &str, message: &WireMessage) -> Result<(), TransportError> {
        let mut writers = self.writers.lock();
        let stream = writers
            .get_mut(device_id)
            .ok_or_else(|| TransportError::Unreachable(device_id.to_string()))?;
        if let Err(e) = stream.write_all(&encode(message)) {
            writers.remove(device_id);
            return Err(e.into());
        }
        Ok(())
    }

    fn inbox(&self) -> &Receiver<(String, WireMessage)> {
        &self.inbox_rx
    }
}

/// Connect to a coordinator, register, and answer until the connection closes.
pub fn serve_agent_tcp(agent: &Agent, coordinator: &str) -> io::Result<()> {
    let mut stream = TcpStream::connect(coordinator)?;
    stream.set_nodelay(true)?;
    let hello = WireMessage::Report {
        round: 0,
        correlation_id: 0,
        payload: agent.handle_poll(0),
    };
    stream.write_all(&encode(&hello))?;
    let mut reader = stream.try_clone()?;
    let mut decoder = LineDecoder::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            return match decoder.finish() {
                Some(e) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, e.to_string())),
                None => Ok(()),
            };
        }
        for msg in decoder.push(&buf[..n]).into_iter().flatten() {
            if let Some(reply) = respond(agent, msg) {
                stream.write_all(&encode(&reply))?;
            }
        }
    }
}
