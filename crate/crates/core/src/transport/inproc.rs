use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::{decode, encode, respond, CoordinatorLink, TransportError, WireMessage};
use crate::agent::Agent;

enum Endpoint {
    Live(Sender<Vec<u8>>),
    /// Accepts messages and never answers.
    Silent,
    /// Every send fails.
    Dead,
}

/// Channel-backed link. Each attached agent gets a responder thread; messages
/// cross the hub as encoded lines so the wire contract is exercised.
pub struct InProcessHub {
    endpoints: Mutex<BTreeMap<String, Endpoint>>,
    inbox_tx: Sender<(String, WireMessage)>,
    inbox_rx: Receiver<(String, WireMessage)>,
}

impl InProcessHub {
    pub fn new() -> Arc<Self> {
        let (inbox_tx, inbox_rx) = unbounded();
        Arc::new(InProcessHub {
            endpoints: Mutex::new(BTreeMap::new()),
            inbox_tx,
            inbox_rx,
        })
    }

    pub fn attach(&self, agent: Agent) -> JoinHandle<()> {
        self.attach_with_delay(agent, Duration::ZERO)
    }

    /// Responses are held back by `delay`, to model slow agents.
    pub fn attach_with_delay(&self, agent: Agent, delay: Duration) -> JoinHandle<()> {
        let (tx, rx) = unbounded::<Vec<u8>>();
        let device_id = agent.device_id().to_string();
        self.endpoints.lock().insert(device_id.clone(), Endpoint::Live(tx));
        let inbox = self.inbox_tx.clone();
        thread::Builder::new()
            .name(format!("poll-{device_id}"))
            .spawn(move || {
                for line in rx {
                    let Ok(msg) = decode(&line) else { continue };
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    if let Some(reply) = respond(&agent, msg) {
                        let reply = decode(&encode(&reply)).expect("own encoding decodes");
                        if inbox.send((device_id.clone(), reply)).is_err() {
                            break;
                        }
                    }
                }
            })
            .expect("spawn responder")
    }

    pub fn attach_silent(&self, device_id: &str) {
        self.endpoints.lock().insert(device_id.to_string(), Endpoint::Silent);
    }

    /// Keep the endpoint listed but make sends to it fail.
    pub fn kill(&self, device_id: &str) {
        self.endpoints.lock().insert(device_id.to_string(), Endpoint::Dead);
    }
}

impl CoordinatorLink for InProcessHub {
    fn endpoints(&self) -> Vec<String> {
        self.endpoints.lock().keys().cloned().collect()
    }

    fn send(&self, device_id: &str, message: &WireMessage) -> Result<(), TransportError> {
        match self.endpoints.lock().get(device_id) {
            Some(Endpoint::Live(tx)) => tx
                .send(encode(message))
                .map_err(|_| TransportError::Unreachable(device_id.to_string())),
            Some(Endpoint::Silent) => Ok(()),
            Some(Endpoint::Dead) | None => Err(TransportError::Unreachable(device_id.to_string())),
        }
    }

    fn inbox(&self) -> &Receiver<(String, WireMessage)> {
        &self.inbox_rx
    }
}

/// Synchronous link: replies are produced inside `send`. Delivery order is
/// fully deterministic, which simulated-time scenarios rely on.
pub struct DirectLink {
    agents: BTreeMap<String, Option<Agent>>,
    inbox_tx: Sender<(String, WireMessage)>,
    inbox_rx: Receiver<(String, WireMessage)>,
}

impl DirectLink {
    pub fn new(agents: impl IntoIterator<Item = Agent>) -> Self {
        let (inbox_tx, inbox_rx) = unbounded();
        DirectLink {
            agents: agents.into_iter().map(|a| (a.device_id().to_string(), Some(a))).collect(),
            inbox_tx,
            inbox_rx,
        }
    }

    pub fn with_silent(mut self, device_id: &str) -> Self {
        self.agents.insert(device_id.to_string(), None);
        self
    }
}

impl CoordinatorLink for DirectLink {
    fn endpoints(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }

    fn send(&self, device_id: &str, message: &WireMessage) -> Result<(), TransportError> {
        match self.agents.get(device_id) {
            Some(Some(agent)) => {
                if let Some(reply) = respond(agent, message.clone()) {
                    let _ = self.inbox_tx.send((device_id.to_string(), reply));
                }
                Ok(())
            }
            Some(None) => Ok(()),
            None => Err(TransportError::Unreachable(device_id.to_string())),
        }
    }

    fn inbox(&self) -> &Receiver<(String, WireMessage)> {
        &self.inbox_rx
    }
}
