//! Length-prefixed binary messages exchanged by all roles. See `docs/wire.md`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::sharing::SessionId;

pub const WIRE_MAGIC: &[u8; 4] = b"OBNW";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
/// Upper bound on a single payload; larger frames are rejected before allocation.
pub const MAX_PAYLOAD: usize = 1 << 30;

/// Sender value used by roles that are not servers.
pub const SENDER_CLIENT: u8 = 0xf0;
pub const SENDER_TRAINER: u8 = 0xf1;
pub const SENDER_DEALER: u8 = 0xf2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    ModelShare = 2,
    QueryShare = 3,
    TripleBatch = 4,
    Opening = 5,
    BitOpening = 6,
    OutputShare = 7,
    Error = 8,
    Ack = 9,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::Hello,
        MessageKind::ModelShare,
        MessageKind::QueryShare,
        MessageKind::TripleBatch,
        MessageKind::Opening,
        MessageKind::BitOpening,
        MessageKind::OutputShare,
        MessageKind::Error,
        MessageKind::Ack,
    ];

    pub fn from_u8(v: u8) -> Result<Self> {
        MessageKind::ALL
            .iter()
            .copied()
            .find(|k| *k as u8 == v)
            .ok_or_else(|| Error::Format(format!("unknown message kind {v}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::ModelShare => "MODEL_SHARE",
            MessageKind::QueryShare => "QUERY_SHARE",
            MessageKind::TripleBatch => "TRIPLE_BATCH",
            MessageKind::Opening => "OPENING",
            MessageKind::BitOpening => "BIT_OPENING",
            MessageKind::OutputShare => "OUTPUT_SHARE",
            MessageKind::Error => "ERROR",
            MessageKind::Ack => "ACK",
        }
    }
}

impl std::fmt::Display for MessageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub sender: u8,
    pub session: SessionId,
    pub round: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(kind: MessageKind, sender: u8, session: SessionId, round: u32, payload: Vec<u8>) -> Self {
        WireMessage {
            kind,
            sender,
            session,
            round,
            payload,
        }
    }

    pub fn error(sender: u8, session: SessionId, reason: &str) -> Self {
        WireMessage::new(MessageKind::Error, sender, session, 0, reason.as_bytes().to_vec())
    }

    /// Size on the wire, header included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(WIRE_MAGIC);
        h[4..6].copy_from_slice(&WIRE_VERSION.to_le_bytes());
        h[6] = self.kind as u8;
        h[7] = self.sender;
        h[8..16].copy_from_slice(&self.session.0.to_le_bytes());
        h[16..20].copy_from_slice(&self.round.to_le_bytes());
        h[20..24].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a header and returns the message shell plus the payload length.
    pub fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(WireMessage, usize)> {
        if &h[0..4] != WIRE_MAGIC {
            return Err(Error::Format("bad wire magic".into()));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != WIRE_VERSION {
            return Err(Error::Format(format!("unsupported wire version {version}")));
        }
        let kind = MessageKind::from_u8(h[6])?;
        let session = SessionId(u64::from_le_bytes(h[8..16].try_into().expect("8 bytes")));
        let round = u32::from_le_bytes(h[16..20].try_into().expect("4 bytes"));
        let len = u32::from_le_bytes(h[20..24].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::Format(format!("payload of {len} bytes exceeds the limit")));
        }
        Ok((WireMessage::new(kind, h[7], session, round, Vec::new()), len))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated wire header".into()));
        }
        let (mut msg, len) = WireMessage::parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
        if bytes.len() - HEADER_LEN != len {
            return Err(Error::Format(format!(
                "payload length {len} does not match {} bytes",
                bytes.len() - HEADER_LEN
            )));
        }
        msg.payload = bytes[HEADER_LEN..].to_vec();
        Ok(msg)
    }

    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.header_bytes())?;
        w.write_all(&self.payload)?;
        w.flush()
    }

    /// Reads one frame. A clean end of stream before the first header byte
    /// yields `Ok(None)`.
    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Option<Self>> {
        let mut h = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut h[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(Error::Disconnected("stream closed inside a frame header".into())),
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (mut msg, len) = WireMessage::parse_header(&h)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Disconnected("stream closed inside a frame".into()),
            _ => e.into(),
        })?;
        msg.payload = payload;
        Ok(Some(msg))
    }

    /// Converts an `ERROR` message into the corresponding error; other kinds pass through.
    pub fn into_result(self) -> Result<Self> {
        if self.kind == MessageKind::Error {
            return Err(Error::PeerAborted(String::from_utf8_lossy(&self.payload).into_owned()));
        }
        Ok(self)
    }

    pub fn expect_kind(self, kind: MessageKind) -> Result<Self> {
        let msg = self.into_result()?;
        if msg.kind != kind {
            return Err(Error::UnexpectedMessage(format!("expected {kind}, got {}", msg.kind)));
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let msg = WireMessage::new(MessageKind::Opening, 1, SessionId(0x0102030405060708), 7, vec![9, 9, 9]);
        let bytes = msg.to_bytes();
        assert_eq!(&bytes[..4], b"OBNW");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 5);
        assert_eq!(bytes[7], 1);
        assert_eq!(&bytes[8..16], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[16..20], &[7, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        assert_eq!(WireMessage::from_bytes(&bytes).unwrap(), msg);
    }

    #[test]
    fn stream_round_trip_and_eof() {
        let mut buf = Vec::new();
        let a = WireMessage::new(MessageKind::Hello, 0, SessionId(1), 0, b"hi".to_vec());
        let b = WireMessage::new(MessageKind::Ack, 1, SessionId(1), 3, vec![]);
        a.write_to(&mut buf).unwrap();
        b.write_to(&mut buf).unwrap();
        let mut r = &buf[..];
        assert_eq!(WireMessage::read_from(&mut r).unwrap(), Some(a));
        assert_eq!(WireMessage::read_from(&mut r).unwrap(), Some(b));
        assert_eq!(WireMessage::read_from(&mut r).unwrap(), None);
        let mut cut = &buf[..10];
        assert!(matches!(WireMessage::read_from(&mut cut), Err(Error::Disconnected(_))));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let good = WireMessage::new(MessageKind::Hello, 0, SessionId(1), 0, vec![]).to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(WireMessage::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(WireMessage::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[6] = 0;
        assert!(WireMessage::from_bytes(&bad).is_err());
        let mut bad = good;
        bad[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(WireMessage::from_bytes(&bad).is_err());
    }

    #[test]
    fn error_messages_become_errors() {
        let e = WireMessage::error(0, SessionId(4), "round mismatch");
        assert!(matches!(e.clone().into_result(), Err(Error::PeerAborted(m)) if m == "round mismatch"));
        let ok = WireMessage::new(MessageKind::Ack, 0, SessionId(4), 0, vec![]);
        assert!(ok.clone().expect_kind(MessageKind::Ack).is_ok());
        assert!(matches!(ok.expect_kind(MessageKind::Hello), Err(Error::UnexpectedMessage(_))));
    }
}
