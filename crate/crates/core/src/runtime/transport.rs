use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::net::{fragmented_link_pair, memory_link_pair, tcp_link, Link};

/// Source of incoming connections for one server.
pub trait Listener: Send {
    /// Next connection; `Ok(None)` once no further connection can arrive.
    fn accept(&mut self, timeout: Option<Duration>) -> Result<Option<Box<dyn Link>>>;
}

/// Opens connections to servers by index.
pub trait Connector: Send + Sync {
    fn connect(&self, server: usize) -> Result<Box<dyn Link>>;
}

impl<C: Connector + ?Sized> Connector for &C {
    fn connect(&self, server: usize) -> Result<Box<dyn Link>> {
        (**self).connect(server)
    }
}

/// In-process network: connecting hands one end of a fresh link pair to the
/// target server's accept queue.
#[derive(Clone)]
pub struct LoopbackNet {
    queues: Vec<Sender<Box<dyn Link>>>,
    fragmented: Option<Arc<AtomicU64>>,
}

pub struct LoopbackListener {
    queue: Receiver<Box<dyn Link>>,
}

impl LoopbackNet {
    pub fn new(servers: usize) -> (LoopbackNet, Vec<LoopbackListener>) {
        Self::build(servers, None)
    }

    /// Like [`LoopbackNet::new`], but every link is a byte pipe that fragments
    /// reads; link seeds are derived from `seed` in connection order.
    pub fn fragmented(servers: usize, seed: u64) -> (LoopbackNet, Vec<LoopbackListener>) {
        Self::build(servers, Some(Arc::new(AtomicU64::new(seed))))
    }

    fn build(servers: usize, fragmented: Option<Arc<AtomicU64>>) -> (LoopbackNet, Vec<LoopbackListener>) {
        let (queues, listeners) = (0..servers)
            .map(|_| {
                let (tx, rx) = mpsc::channel();
                (tx, LoopbackListener { queue: rx })
            })
            .unzip();
        (LoopbackNet { queues, fragmented }, listeners)
    }
}

impl Connector for LoopbackNet {
    fn connect(&self, server: usize) -> Result<Box<dyn Link>> {
        let queue = self
            .queues
            .get(server)
            .ok_or_else(|| Error::Config(format!("no server {server}")))?;
        let (mine, theirs): (Box<dyn Link>, Box<dyn Link>) = match &self.fragmented {
            Some(seed) => {
                let (a, b) = fragmented_link_pair(seed.fetch_add(1, Ordering::Relaxed));
                (Box::new(a), Box::new(b))
            }
            None => {
                let (a, b) = memory_link_pair();
                (Box::new(a), Box::new(b))
            }
        };
        queue
            .send(theirs)
            .map_err(|_| Error::Disconnected(format!("server {server} is not listening")))?;
        Ok(mine)
    }
}

impl Listener for LoopbackListener {
    fn accept(&mut self, timeout: Option<Duration>) -> Result<Option<Box<dyn Link>>> {
        match timeout {
            None => Ok(self.queue.recv().ok()),
            Some(t) => match self.queue.recv_timeout(t) {
                Ok(link) => Ok(Some(link)),
                Err(RecvTimeoutError::Timeout) => Err(Error::Timeout("no incoming connection".into())),
                Err(RecvTimeoutError::Disconnected) => Ok(None),
            },
        }
    }
}

pub struct TcpServerListener {
    listener: TcpListener,
}

impl TcpServerListener {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(TcpServerListener {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }
}

impl Listener for TcpServerListener {
    fn accept(&mut self, timeout: Option<Duration>) -> Result<Option<Box<dyn Link>>> {
        let stream = match timeout {
            None => {
                self.listener.set_nonblocking(false)?;
                self.listener.accept()?.0
            }
            Some(t) => {
                self.listener.set_nonblocking(true)?;
                let deadline = Instant::now() + t;
                loop {
                    match self.listener.accept() {
                        Ok((s, _)) => break s,
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            if Instant::now() >= deadline {
                                return Err(Error::Timeout("no incoming connection".into()));
                            }
                            std::thread::sleep(Duration::from_millis(5));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        };
        stream.set_nonblocking(false)?;
        Ok(Some(Box::new(tcp_link(stream)?)))
    }
}

/// Connects to servers over TCP, retrying refused connections until `timeout`
/// so that processes may start in any order.
#[derive(Clone, Debug)]
pub struct TcpConnector {
    servers: Vec<String>,
    timeout: Duration,
}

impl TcpConnector {
    pub fn new(servers: Vec<String>, timeout: Duration) -> Self {
        TcpConnector { servers, timeout }
    }
}

impl Connector for TcpConnector {
    fn connect(&self, server: usize) -> Result<Box<dyn Link>> {
        let addr = self
            .servers
            .get(server)
            .ok_or_else(|| Error::Config(format!("no endpoint for server {server}")))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let attempt = addr
                .to_socket_addrs()
                .map_err(Error::from)
                .and_then(|mut addrs| {
                    addrs
                        .next()
                        .ok_or_else(|| Error::Config(format!("{addr} does not resolve")))
                })
                .and_then(|sa| Ok(TcpStream::connect_timeout(&sa, self.timeout)?));
            match attempt {
                Ok(stream) => return Ok(Box::new(tcp_link(stream)?)),
                Err(Error::Io(e)) if Instant::now() < deadline => {
                    log::debug!("connecting to server {server} at {addr}: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(Error::Io(e)) => {
                    return Err(Error::Disconnected(format!("cannot reach server {server} at {addr}: {e}")))
                }
                Err(e) => return Err(e),
            }
        }
    }
}
