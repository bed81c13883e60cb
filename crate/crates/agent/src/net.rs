//! The agent's datagram socket, optionally routed through a shared link
//! emulator so several in-process agents see configured per-pair delays
//! and losses on real loopback sockets.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, UdpSocket as StdUdpSocket};
use std::sync::Arc;
use std::time::{Duration, Instant};

use meshmeter_core::linklab::{DelayLine, Delivery, GroundTruthLog, LinkSpec, NetworkEmulator};
use parking_lot::Mutex;
use tokio::net::UdpSocket;

struct NetState {
    emulator: NetworkEmulator<String>,
    nodes: HashMap<SocketAddr, String>,
}

/// Links between agents, keyed by client id.
pub struct SharedNetwork {
    state: Mutex<NetState>,
    epoch: Instant,
}

impl SharedNetwork {
    pub fn new(default: LinkSpec) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(NetState {
                emulator: NetworkEmulator::new(default),
                nodes: HashMap::new(),
            }),
            epoch: Instant::now(),
        })
    }

    /// Traffic from `a` to `b` takes the spec's forward parameters.
    pub fn set_link(&self, a: &str, b: &str, spec: LinkSpec) {
        self.state
            .lock()
            .emulator
            .set_link(a.to_string(), b.to_string(), spec);
    }

    pub fn register(&self, addr: SocketAddr, node: &str) {
        self.state.lock().nodes.insert(addr, node.to_string());
    }

    fn node(state: &NetState, addr: SocketAddr) -> String {
        state
            .nodes
            .get(&addr)
            .cloned()
            .unwrap_or_else(|| addr.to_string())
    }

    /// Decides when a datagram from `src` to `dst` sent now is delivered.
    fn route(&self, src: SocketAddr, dst: SocketAddr, bytes: &[u8]) -> Option<Instant> {
        let now_us = self.epoch.elapsed().as_micros() as u64;
        let mut st = self.state.lock();
        let (a, b) = (Self::node(&st, src), Self::node(&st, dst));
        match st.emulator.send(&a, &b, now_us, bytes) {
            Delivery::At(at) => Some(self.epoch + Duration::from_micros(at)),
            Delivery::Dropped => None,
        }
    }

    /// Ground truth per registered link, in link order.
    pub fn ground_truth(&self) -> Vec<((String, String), GroundTruthLog)> {
        self.state
            .lock()
            .emulator
            .links()
            .map(|(k, l)| (k.clone(), l.log().clone()))
            .collect()
    }
}

pub struct AgentSocket {
    socket: UdpSocket,
    local: SocketAddr,
    emulation: Option<(Arc<SharedNetwork>, DelayLine)>,
}

impl AgentSocket {
    pub fn bind(
        addr: SocketAddr,
        network: Option<Arc<SharedNetwork>>,
        node_id: &str,
    ) -> io::Result<Self> {
        let std_socket = StdUdpSocket::bind(addr)?;
        let local = std_socket.local_addr()?;
        let emulation = match network {
            Some(net) => {
                net.register(local, node_id);
                Some((net, DelayLine::new(std_socket.try_clone()?)))
            }
            None => None,
        };
        std_socket.set_nonblocking(true)?;
        Ok(Self {
            socket: UdpSocket::from_std(std_socket)?,
            local,
            emulation,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub async fn send_to(&mut self, bytes: Vec<u8>, to: SocketAddr) -> io::Result<()> {
        match &mut self.emulation {
            None => self.socket.send_to(&bytes, to).await.map(|_| ()),
            Some((net, line)) => {
                if let Some(at) = net.route(self.local, to, &bytes) {
                    line.send_at(at, to, bytes);
                }
                Ok(())
            }
        }
    }

    pub async fn recv_from(&self, buf: &mut [u8]) -> io::Result<(usize, SocketAddr)> {
        self.socket.recv_from(buf).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn emulated_delay_and_loss() {
        let net = SharedNetwork::new(LinkSpec::default());
        net.set_link("a", "b", LinkSpec::constant(30.0));
        net.set_link("a", "c", LinkSpec::blackhole());
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let mut a = AgentSocket::bind(any, Some(net.clone()), "a").unwrap();
        let b = AgentSocket::bind(any, Some(net.clone()), "b").unwrap();
        let c = AgentSocket::bind(any, Some(net.clone()), "c").unwrap();

        let t = Instant::now();
        a.send_to(b"to-b".to_vec(), b.local_addr()).await.unwrap();
        a.send_to(b"to-c".to_vec(), c.local_addr()).await.unwrap();
        let mut buf = [0u8; 16];
        let (n, from) = b.recv_from(&mut buf).await.unwrap();
        assert_eq!((&buf[..n], from), (&b"to-b"[..], a.local_addr()));
        assert!(t.elapsed() >= Duration::from_millis(30));
        let lost = tokio::time::timeout(Duration::from_millis(100), c.recv_from(&mut buf)).await;
        assert!(lost.is_err());

        let truth = net.ground_truth();
        let ab = truth
            .iter()
            .find(|(k, _)| k == &("a".to_string(), "b".to_string()))
            .unwrap();
        assert_eq!(ab.1.entries[0].injected_delay_ms, 30.0);
    }
}
