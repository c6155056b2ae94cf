//! Per-party message logs for accounting and privacy smoke tests.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::Result;

use super::link::Link;
use super::wire::{MessageKind, WireMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub peer: u8,
    pub kind: MessageKind,
    pub round: u32,
    /// Bytes on the wire, header included.
    pub bytes: usize,
    pub payload: Option<Vec<u8>>,
}

/// Append-only log of the messages one party exchanged.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn bytes(&self, direction: Direction) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.direction == direction)
            .map(|e| e.bytes as u64)
            .sum()
    }

    /// Distinct protocol rounds in which this party sent an opening.
    pub fn opening_rounds(&self) -> usize {
        let mut rounds: Vec<u32> = self
            .entries
            .iter()
            .filter(|e| e.direction == Direction::Sent && matches!(e.kind, MessageKind::Opening | MessageKind::BitOpening))
            .map(|e| e.round)
            .collect();
        rounds.sort_unstable();
        rounds.dedup();
        rounds.len()
    }

    pub fn count(&self, direction: Direction, kind: MessageKind) -> usize {
        self.entries
            .iter()
            .filter(|e| e.direction == direction && e.kind == kind)
            .count()
    }

    /// Histogram of received opening payload bytes, for uniformity tests.
    pub fn received_byte_histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for e in &self.entries {
            if e.direction == Direction::Received && matches!(e.kind, MessageKind::Opening | MessageKind::BitOpening) {
                for &b in e.payload.as_deref().unwrap_or_default() {
                    hist[b as usize] += 1;
                }
            }
        }
        hist
    }
}

/// Shared handle to a transcript being recorded.
#[derive(Clone, Debug, Default)]
pub struct TranscriptRecorder {
    inner: Arc<Mutex<Transcript>>,
    keep_payloads: bool,
}

impl TranscriptRecorder {
    pub fn new(keep_payloads: bool) -> Self {
        TranscriptRecorder {
            inner: Arc::default(),
            keep_payloads,
        }
    }

    fn record(&self, direction: Direction, peer: u8, msg: &WireMessage) {
        let entry = TranscriptEntry {
            direction,
            peer,
            kind: msg.kind,
            round: msg.round,
            bytes: msg.wire_len(),
            payload: self.keep_payloads.then(|| msg.payload.clone()),
        };
        self.inner.lock().expect("transcript lock").entries.push(entry);
    }

    pub fn snapshot(&self) -> Transcript {
        self.inner.lock().expect("transcript lock").clone()
    }

    /// Wraps `link` so that its traffic with `peer` is logged here.
    pub fn wrap<L: Link>(&self, peer: u8, link: L) -> RecordingLink<L> {
        RecordingLink {
            inner: link,
            peer,
            recorder: self.clone(),
        }
    }
}

pub struct RecordingLink<L> {
    inner: L,
    peer: u8,
    recorder: TranscriptRecorder,
}

impl<L: Link> Link for RecordingLink<L> {
    fn send(&mut self, msg: WireMessage) -> Result<()> {
        self.recorder.record(Direction::Sent, self.peer, &msg);
        self.inner.send(msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<WireMessage> {
        let msg = self.inner.recv(timeout)?;
        self.recorder.record(Direction::Received, self.peer, &msg);
        Ok(msg)
    }
}
