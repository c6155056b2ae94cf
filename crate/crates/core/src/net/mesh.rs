//! Fully connected links between the `n` computing parties.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocols::PeerChannel;
use crate::sharing::{PartyId, SessionId};

use super::link::{fragmented_link_pair, memory_link_pair, Link};
use super::transcript::TranscriptRecorder;
use super::wire::{MessageKind, WireMessage};

pub struct PeerMesh {
    party: PartyId,
    links: Vec<Option<Box<dyn Link>>>,
    timeout: Option<Duration>,
}

impl PeerMesh {
    /// `links[j]` connects to party `j`; the own slot must be `None`.
    pub fn new(party: PartyId, links: Vec<Option<Box<dyn Link>>>, timeout: Option<Duration>) -> Result<Self> {
        if links.len() != party.count() {
            return Err(Error::Config(format!("{} links for {} parties", links.len(), party.count())));
        }
        for (j, l) in links.iter().enumerate() {
            if l.is_some() == (j == party.index()) {
                return Err(Error::Config(format!("party {} has a bad link slot {j}", party.index())));
            }
        }
        Ok(PeerMesh { party, links, timeout })
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn timeout(&self) -> Option<Duration> {
        self.timeout
    }

    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    fn link(&mut self, peer: usize) -> Result<&mut Box<dyn Link>> {
        self.links
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::Config(format!("no link to party {peer}")))
    }

    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.party.count()).filter(move |&j| j != self.party.index())
    }

    pub fn send_to(&mut self, peer: usize, msg: WireMessage) -> Result<()> {
        self.link(peer)?.send(msg)
    }

    pub fn recv_from(&mut self, peer: usize) -> Result<WireMessage> {
        let timeout = self.timeout;
        self.link(peer)?.recv(timeout)
    }

    /// Best-effort `ERROR` to every peer.
    pub fn abort(&mut self, session: SessionId, reason: &str) {
        let me = self.party.index() as u8;
        let peers: Vec<usize> = self.peers().collect();
        for j in peers {
            let _ = self.send_to(j, WireMessage::error(me, session, reason));
        }
    }

    /// Logs all traffic of this party into `recorder`.
    pub fn record(&mut self, recorder: &TranscriptRecorder) {
        for (j, slot) in self.links.iter_mut().enumerate() {
            if let Some(link) = slot.take() {
                *slot = Some(Box::new(recorder.wrap(j as u8, link)));
            }
        }
    }
}

impl PeerChannel for PeerMesh {
    fn party(&self) -> PartyId {
        self.party
    }

    fn exchange(&mut self, kind: MessageKind, session: SessionId, round: u32, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let me = self.party.index();
        let peers: Vec<usize> = self.peers().collect();
        for &j in &peers {
            self.send_to(j, WireMessage::new(kind, me as u8, session, round, payload.clone()))?;
        }
        let mut out = vec![Vec::new(); self.party.count()];
        for &j in &peers {
            let msg = self.recv_from(j)?.into_result()?;
            if msg.session != session {
                return Err(Error::SessionMismatch {
                    expected: session.0,
                    found: msg.session.0,
                });
            }
            if msg.kind != kind || msg.round != round || msg.sender as usize != j {
                return Err(Error::Desync(format!(
                    "expected {kind} round {round} from party {j}, got {} round {} from party {}",
                    msg.kind, msg.round, msg.sender
                )));
            }
            out[j] = msg.payload;
        }
        out[me] = payload;
        Ok(out)
    }
}

/// Builds `n` meshes from a pairwise link factory.
pub fn mesh_from_pairs(
    n: usize,
    timeout: Option<Duration>,
    mut make_pair: impl FnMut(usize, usize) -> (Box<dyn Link>, Box<dyn Link>),
) -> Result<Vec<PeerMesh>> {
    let mut slots: Vec<Vec<Option<Box<dyn Link>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = make_pair(i, j);
            slots[i][j] = Some(a);
            slots[j][i] = Some(b);
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, links)| PeerMesh::new(PartyId::new(i, n)?, links, timeout))
        .collect()
}

pub fn memory_mesh(n: usize, timeout: Option<Duration>) -> Result<Vec<PeerMesh>> {
    mesh_from_pairs(n, timeout, |_, _| {
        let (a, b) = memory_link_pair();
        (Box::new(a), Box::new(b))
    })
}

/// Meshes over fragmenting byte pipes, so every message passes through the
/// wire encoder and a reassembling reader.
pub fn fragmented_mesh(n: usize, seed: u64, timeout: Option<Duration>) -> Result<Vec<PeerMesh>> {
    mesh_from_pairs(n, timeout, |i, j| {
        let (a, b) = fragmented_link_pair(seed.wrapping_add((i * 257 + j) as u64));
        (Box::new(a), Box::new(b))
    })
}
