//! Point-to-point message links.
//!
//! Every link delivers [`WireMessage`]s in order. Stream links run a writer and
//! a reader thread per connection, so a send never blocks on the peer reading
//! and two parties can push large openings at each other simultaneously.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

use super::wire::WireMessage;

pub trait Link: Send {
    fn send(&mut self, msg: WireMessage) -> Result<()>;

    /// Blocks for the next message; `None` waits indefinitely.
    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage>;
}

impl<L: Link + ?Sized> Link for Box<L> {
    fn send(&mut self, msg: WireMessage) -> Result<()> {
        (**self).send(msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage> {
        (**self).recv(timeout)
    }
}

type Item = Result<WireMessage>;

/// A link backed by queues, either directly connected to a peer queue or
/// feeding a stream through background threads.
pub struct ChannelLink {
    tx: Option<Sender<Item>>,
    rx: Receiver<Item>,
    writer: Option<JoinHandle<()>>,
    on_drop: Option<Box<dyn FnOnce() + Send>>,
}

impl Link for ChannelLink {
    fn send(&mut self, msg: WireMessage) -> Result<()> {
        self.tx
            .as_ref()
            .expect("sender present until drop")
            .send(Ok(msg))
            .map_err(|_| Error::Disconnected("peer link closed".into()))
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage> {
        let item = match timeout {
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => Error::Timeout(format!("no message within {t:?}")),
                RecvTimeoutError::Disconnected => Error::Disconnected("peer link closed".into()),
            })?,
            None => self
                .rx
                .recv()
                .map_err(|_| Error::Disconnected("peer link closed".into()))?,
        };
        item
    }
}

impl Drop for ChannelLink {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        if let Some(f) = self.on_drop.take() {
            f();
        }
    }
}

/// Two directly connected in-process links.
pub fn memory_link_pair() -> (ChannelLink, ChannelLink) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    let a = ChannelLink {
        tx: Some(tx_a),
        rx: rx_a,
        writer: None,
        on_drop: None,
    };
    let b = ChannelLink {
        tx: Some(tx_b),
        rx: rx_b,
        writer: None,
        on_drop: None,
    };
    (a, b)
}

/// Frames messages over a byte stream split into a read half and a write half.
pub fn stream_link<R, W>(reader: R, writer: W, on_drop: Option<Box<dyn FnOnce() + Send>>) -> ChannelLink
where
    R: Read + Send + 'static,
    W: Write + Send + 'static,
{
    let (out_tx, out_rx) = mpsc::channel::<Item>();
    let (in_tx, in_rx) = mpsc::channel::<Item>();
    let writer = std::thread::spawn(move || {
        let mut w = writer;
        for item in out_rx {
            let Ok(msg) = item else { continue };
            if msg.write_to(&mut w).is_err() {
                break;
            }
        }
    });
    std::thread::spawn(move || {
        let mut r = reader;
        loop {
            let item = match WireMessage::read_from(&mut r) {
                Ok(Some(msg)) => Ok(msg),
                Ok(None) => Err(Error::Disconnected("peer closed the connection".into())),
                Err(e) => Err(e),
            };
            let last = item.is_err();
            if in_tx.send(item).is_err() || last {
                break;
            }
        }
    });
    ChannelLink {
        tx: Some(out_tx),
        rx: in_rx,
        writer: Some(writer),
        on_drop,
    }
}

struct TcpWriteHalf(TcpStream);

impl Write for TcpWriteHalf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

impl Drop for TcpWriteHalf {
    fn drop(&mut self) {
        let _ = self.0.shutdown(Shutdown::Write);
    }
}

pub fn tcp_link(stream: TcpStream) -> Result<ChannelLink> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let closer = stream.try_clone()?;
    Ok(stream_link(
        reader,
        TcpWriteHalf(stream),
        Some(Box::new(move || {
            let _ = closer.shutdown(Shutdown::Both);
        })),
    ))
}

#[derive(Default)]
struct PipeState {
    buf: VecDeque<u8>,
    writer_closed: bool,
    reader_closed: bool,
}

type Shared = Arc<(Mutex<PipeState>, Condvar)>;

/// Write end of an in-memory byte pipe.
pub struct PipeWriter(Shared);

/// Read end of an in-memory byte pipe; each read returns a random-length
/// fragment of what is buffered.
pub struct PipeReader {
    shared: Shared,
    rng: ChaCha20Rng,
    max_fragment: usize,
}

pub fn pipe(seed: u64, max_fragment: usize) -> (PipeWriter, PipeReader) {
    let shared: Shared = Arc::default();
    (
        PipeWriter(shared.clone()),
        PipeReader {
            shared,
            rng: ChaCha20Rng::seed_from_u64(seed),
            max_fragment: max_fragment.max(1),
        },
    )
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let (lock, cv) = &*self.0;
        let mut st = lock.lock().expect("pipe lock");
        if st.reader_closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "pipe reader closed"));
        }
        st.buf.extend(buf);
        cv.notify_all();
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for PipeWriter {
    fn drop(&mut self) {
        let (lock, cv) = &*self.0;
        lock.lock().expect("pipe lock").writer_closed = true;
        cv.notify_all();
    }
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        let want = self.rng.random_range(1..=self.max_fragment).min(out.len());
        let (lock, cv) = &*self.shared;
        let mut st = lock.lock().expect("pipe lock");
        while st.buf.is_empty() {
            if st.writer_closed {
                return Ok(0);
            }
            st = cv.wait(st).expect("pipe lock");
        }
        let n = want.min(st.buf.len());
        for (slot, byte) in out.iter_mut().zip(st.buf.drain(..n)) {
            *slot = byte;
        }
        Ok(n)
    }
}

impl Drop for PipeReader {
    fn drop(&mut self) {
        let (lock, cv) = &*self.shared;
        lock.lock().expect("pipe lock").reader_closed = true;
        cv.notify_all();
    }
}

/// Two links joined by in-memory byte pipes that fragment every read, exercising
/// the framing code the same way a socket would.
pub fn fragmented_link_pair(seed: u64) -> (ChannelLink, ChannelLink) {
    let (w_ab, r_ab) = pipe(seed, 97);
    let (w_ba, r_ba) = pipe(seed ^ 0x9e37_79b9_7f4a_7c15, 97);
    (stream_link(r_ba, w_ab, None), stream_link(r_ab, w_ba, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::wire::MessageKind;
    use crate::sharing::SessionId;
    use std::net::TcpListener;

    fn msg(round: u32, len: usize) -> WireMessage {
        WireMessage::new(
            MessageKind::Opening,
            0,
            SessionId(5),
            round,
            (0..len).map(|i| (i * 31 + round as usize) as u8).collect(),
        )
    }

    fn exercise(mut a: impl Link, mut b: impl Link) {
        // Both sides send large frames before either reads.
        let big: Vec<_> = (0..4).map(|r| msg(r, 300_000)).collect();
        for m in &big {
            a.send(m.clone()).unwrap();
            b.send(m.clone()).unwrap();
        }
        for m in &big {
            assert_eq!(&b.recv(Some(Duration::from_secs(10))).unwrap(), m);
            assert_eq!(&a.recv(Some(Duration::from_secs(10))).unwrap(), m);
        }
    }

    #[test]
    fn memory_links_deliver_in_order() {
        let (a, b) = memory_link_pair();
        exercise(a, b);
    }

    #[test]
    fn fragmented_pipes_preserve_frames() {
        let (a, b) = fragmented_link_pair(11);
        exercise(a, b);
    }

    #[test]
    fn tcp_links_preserve_frames() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let t = std::thread::spawn(move || tcp_link(listener.accept().unwrap().0).unwrap());
        let a = tcp_link(TcpStream::connect(addr).unwrap()).unwrap();
        let b = t.join().unwrap();
        exercise(a, b);
    }

    #[test]
    fn timeouts_and_disconnects_are_reported() {
        let (mut a, b) = memory_link_pair();
        assert!(matches!(a.recv(Some(Duration::from_millis(20))), Err(Error::Timeout(_))));
        drop(b);
        assert!(matches!(a.recv(None), Err(Error::Disconnected(_))));
        assert!(a.send(msg(0, 1)).is_err());

        let (mut c, d) = fragmented_link_pair(3);
        drop(d);
        assert!(matches!(c.recv(Some(Duration::from_secs(5))), Err(Error::Disconnected(_))));
    }
}
