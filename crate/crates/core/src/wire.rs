//! Bit-exact frame codec.
//!
//! Every frame starts with an 8-bit header: `mtype(4) payloadBit senderBit
//! pathBit reserved`. Fields are written MSB-first and the frame is padded
//! with zero bits to a whole byte; [`frame_size_bits`] reports the unpadded
//! length.
//!
//! With `mbd5` (compact layout) the header bits select what follows:
//!
//! ```text
//! payloadBit=1: [s:32 unless SEND] bid:32 [localId:w if mbd1] size:32 data:8*size
//! payloadBit=0: localId:w
//! senderBit=1:  erId1:32
//! merged type:  erId2:32
//! pathBit=1:    pathLen:16 path:32*pathLen
//! ```
//!
//! Without `mbd5` (full layout) every field is always present and the header
//! flags other than `payloadBit` are fixed to 1:
//!
//! ```text
//! s:32 bid:32 [localId:w if mbd1] size:32 [data if payloadBit] erId1:32 erId2:32 pathLen:16 path
//! ```
//!
//! A creator omitted from the compact layout is inferred: it is the first
//! path entry when a non-empty path is present, and the link sender when no
//! path is present. A SEND never carries `s` in the compact layout because
//! its source is its creator.

use serde::{Deserialize, Serialize};

use crate::config::ModificationConfig;
use crate::error::WireError;
use crate::types::{MessageType, PayloadId, ProcessId};

pub const HEADER_BITS: usize = 8;
pub const ID_BITS: usize = 32;
pub const BID_BITS: usize = 32;
pub const SIZE_BITS: usize = 32;
pub const PATH_LEN_BITS: usize = 16;

/// A protocol message as it appears on one link.
///
/// Optional fields mirror the wire: `None` means "not transmitted".
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub mtype: MessageType,
    pub payload_id: Option<PayloadId>,
    pub local_id: Option<u32>,
    pub payload: Option<Vec<u8>>,
    /// Creator of the SEND/ECHO/READY (erId1). For merged types, the creator
    /// of the READY (or of the newly created ECHO).
    pub creator: Option<ProcessId>,
    /// Creator of the embedded ECHO (erId2), merged types only.
    pub embedded_creator: Option<ProcessId>,
    pub path: Option<Vec<ProcessId>>,
}

impl Message {
    /// The creator this message designates when received from `link_sender`.
    pub fn inferred_creator(&self, link_sender: ProcessId) -> Option<ProcessId> {
        if let Some(c) = self.creator {
            return Some(c);
        }
        match &self.path {
            None => Some(link_sender),
            Some(p) => p.first().copied(),
        }
    }

    /// What a receiver reconstructs from the frame: elided creators restored
    /// and a SEND's payload source set to its creator.
    pub fn resolved(mut self, link_sender: ProcessId) -> Self {
        self.creator = self.inferred_creator(link_sender);
        if self.mtype == MessageType::Send {
            if let (Some(pid), Some(c)) = (self.payload_id.as_mut(), self.creator) {
                pid.source = c;
            }
        }
        self
    }

    fn check(&self, cfg: &ModificationConfig) -> Result<(), WireError> {
        use WireError::Invalid;
        let merged = self.mtype.is_merged();
        if merged != self.embedded_creator.is_some() {
            return Err(Invalid("embedded creator present iff merged type"));
        }
        if self.mtype == MessageType::EchoEcho && !cfg.mbd3 {
            return Err(Invalid("ECHO_ECHO requires mbd3"));
        }
        if self.mtype == MessageType::ReadyEcho && !cfg.mbd4 {
            return Err(Invalid("READY_ECHO requires mbd4"));
        }
        if cfg.mbd1 != self.local_id.is_some() {
            return Err(Invalid("local ID present iff mbd1"));
        }
        if let Some(id) = self.local_id {
            if cfg.local_id_bits < 32 && id >> cfg.local_id_bits != 0 {
                return Err(WireError::LocalIdTooWide {
                    id,
                    bits: cfg.local_id_bits,
                });
            }
        }
        if self.payload.is_none() && !cfg.mbd1 {
            return Err(Invalid("payload may only be omitted with mbd1"));
        }
        if let Some(p) = &self.payload {
            if p.len() > u32::MAX as usize {
                return Err(WireError::PayloadTooLarge(p.len()));
            }
        }
        if let Some(p) = &self.path {
            if p.len() > u16::MAX as usize {
                return Err(WireError::PathTooLong(p.len()));
            }
        }
        if cfg.mbd5 {
            if self.payload.is_some() != self.payload_id.is_some() {
                return Err(Invalid("compact layout sends payload ID with the payload"));
            }
            if self.creator.is_none() && matches!(&self.path, Some(p) if p.is_empty()) {
                return Err(Invalid("creator cannot be inferred from an empty path"));
            }
            if self.mtype == MessageType::Send {
                if let (Some(pid), Some(c)) = (self.payload_id, self.creator) {
                    if pid.source != c {
                        return Err(Invalid("SEND source must be its creator"));
                    }
                }
            }
        } else if self.payload_id.is_none() || self.creator.is_none() || self.path.is_none() {
            return Err(Invalid("full layout carries payload ID, creator and path"));
        }
        Ok(())
    }
}

/// An encoded frame: zero-padded bytes plus the meaningful bit count.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    pub bytes: Vec<u8>,
    pub bits: usize,
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    fn with_capacity_bits(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            bits: 0,
        }
    }

    fn put(&mut self, value: u64, width: usize) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            if self.bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    fn put_bytes(&mut self, data: &[u8]) {
        if self.bits.is_multiple_of(8) {
            self.bytes.extend_from_slice(data);
            self.bits += data.len() * 8;
        } else {
            for &b in data {
                self.put(b as u64, 8);
            }
        }
    }

    fn finish(self) -> Frame {
        Frame {
            bytes: self.bytes,
            bits: self.bits,
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    fn get(&mut self, width: usize) -> Result<u64, WireError> {
        if width > self.remaining() {
            return Err(WireError::MalformedFrame("truncated"));
        }
        let mut v = 0u64;
        for _ in 0..width {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    fn get_bytes(&mut self, len: usize) -> Result<Vec<u8>, WireError> {
        if len.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(WireError::MalformedFrame("truncated"));
        }
        if self.pos.is_multiple_of(8) {
            let start = self.pos / 8;
            self.pos += len * 8;
            Ok(self.bytes[start..start + len].to_vec())
        } else {
            (0..len).map(|_| self.get(8).map(|b| b as u8)).collect()
        }
    }
}

struct Header {
    mtype: MessageType,
    payload_bit: bool,
    sender_bit: bool,
    path_bit: bool,
}

fn header_of(m: &Message, cfg: &ModificationConfig) -> Header {
    Header {
        mtype: m.mtype,
        payload_bit: m.payload.is_some(),
        sender_bit: !cfg.mbd5 || m.creator.is_some(),
        path_bit: !cfg.mbd5 || m.path.is_some(),
    }
}

/// Encodes `m` under `cfg`.
pub fn encode_frame(m: &Message, cfg: &ModificationConfig) -> Result<Frame, WireError> {
    m.check(cfg)?;
    let h = header_of(m, cfg);
    let mut w = BitWriter::with_capacity_bits(size_unchecked(m, cfg));
    w.put(h.mtype.code() as u64, 4);
    w.put(h.payload_bit as u64, 1);
    w.put(h.sender_bit as u64, 1);
    w.put(h.path_bit as u64, 1);
    w.put(0, 1);
    let lid_bits = cfg.local_id_bits as usize;
    let empty = Vec::new();
    if cfg.mbd5 {
        if let (Some(pid), Some(data)) = (m.payload_id, &m.payload) {
            if m.mtype != MessageType::Send {
                w.put(pid.source as u64, ID_BITS);
            }
            w.put(pid.bid as u64, BID_BITS);
            if let Some(lid) = m.local_id {
                w.put(lid as u64, lid_bits);
            }
            w.put(data.len() as u64, SIZE_BITS);
            w.put_bytes(data);
        } else {
            w.put(m.local_id.unwrap_or_default() as u64, lid_bits);
        }
        if let Some(c) = m.creator {
            w.put(c as u64, ID_BITS);
        }
        if let Some(e) = m.embedded_creator {
            w.put(e as u64, ID_BITS);
        }
        if let Some(path) = &m.path {
            w.put(path.len() as u64, PATH_LEN_BITS);
            for &p in path {
                w.put(p as u64, ID_BITS);
            }
        }
    } else {
        let pid = m.payload_id.expect("checked");
        w.put(pid.source as u64, ID_BITS);
        w.put(pid.bid as u64, BID_BITS);
        if let Some(lid) = m.local_id {
            w.put(lid as u64, lid_bits);
        }
        let data = m.payload.as_ref().unwrap_or(&empty);
        w.put(data.len() as u64, SIZE_BITS);
        w.put_bytes(data);
        w.put(m.creator.expect("checked") as u64, ID_BITS);
        w.put(m.embedded_creator.unwrap_or(0) as u64, ID_BITS);
        let path = m.path.as_ref().expect("checked");
        w.put(path.len() as u64, PATH_LEN_BITS);
        for &p in path {
            w.put(p as u64, ID_BITS);
        }
    }
    let frame = w.finish();
    debug_assert_eq!(frame.bits, size_unchecked(m, cfg));
    Ok(frame)
}

/// Bit length of `encode_frame(m, cfg)`, without padding.
pub fn frame_size_bits(m: &Message, cfg: &ModificationConfig) -> Result<usize, WireError> {
    m.check(cfg)?;
    Ok(size_unchecked(m, cfg))
}

fn size_unchecked(m: &Message, cfg: &ModificationConfig) -> usize {
    let lid = if m.local_id.is_some() { cfg.local_id_bits as usize } else { 0 };
    let data = m.payload.as_ref().map_or(0, |d| d.len() * 8);
    let path = m.path.as_ref().map_or(0, |p| PATH_LEN_BITS + p.len() * ID_BITS);
    if cfg.mbd5 {
        let mut bits = HEADER_BITS;
        if m.payload.is_some() {
            if m.mtype != MessageType::Send {
                bits += ID_BITS;
            }
            bits += BID_BITS + lid + SIZE_BITS + data;
        } else {
            bits += cfg.local_id_bits as usize;
        }
        if m.creator.is_some() {
            bits += ID_BITS;
        }
        if m.embedded_creator.is_some() {
            bits += ID_BITS;
        }
        bits + path
    } else {
        HEADER_BITS + ID_BITS + BID_BITS + lid + SIZE_BITS + data + 2 * ID_BITS + path
    }
}

/// Decodes a frame received from `link_sender`. Elided creators are restored
/// (see [`Message::resolved`]). Anything that a conformant encoder could not
/// have produced is rejected.
pub fn decode_frame(
    bytes: &[u8],
    link_sender: ProcessId,
    cfg: &ModificationConfig,
) -> Result<Message, WireError> {
    use WireError::MalformedFrame as Bad;
    let mut r = BitReader { bytes, pos: 0 };
    let code = r.get(4)? as u8;
    let mtype = MessageType::from_code(code).ok_or(Bad("unknown message type"))?;
    let payload_bit = r.get(1)? == 1;
    let sender_bit = r.get(1)? == 1;
    let path_bit = r.get(1)? == 1;
    if r.get(1)? != 0 {
        return Err(Bad("reserved header bit set"));
    }
    if mtype == MessageType::EchoEcho && !cfg.mbd3 || mtype == MessageType::ReadyEcho && !cfg.mbd4 {
        return Err(Bad("merged type not enabled"));
    }
    if !payload_bit && !cfg.mbd1 {
        return Err(Bad("payload missing without local IDs"));
    }
    let lid_bits = cfg.local_id_bits as usize;
    let read_path = |r: &mut BitReader| -> Result<Vec<ProcessId>, WireError> {
        let len = r.get(PATH_LEN_BITS)? as usize;
        if len * ID_BITS > r.remaining() {
            return Err(Bad("truncated"));
        }
        (0..len).map(|_| r.get(ID_BITS).map(|v| v as ProcessId)).collect()
    };
    let mut m = Message {
        mtype,
        payload_id: None,
        local_id: None,
        payload: None,
        creator: None,
        embedded_creator: None,
        path: None,
    };
    if cfg.mbd5 {
        if payload_bit {
            let source = if mtype != MessageType::Send {
                r.get(ID_BITS)? as ProcessId
            } else {
                0
            };
            let bid = r.get(BID_BITS)? as u32;
            m.payload_id = Some(PayloadId { source, bid });
            if cfg.mbd1 {
                m.local_id = Some(r.get(lid_bits)? as u32);
            }
            let size = r.get(SIZE_BITS)? as usize;
            m.payload = Some(r.get_bytes(size)?);
        } else {
            m.local_id = Some(r.get(lid_bits)? as u32);
        }
        if sender_bit {
            m.creator = Some(r.get(ID_BITS)? as ProcessId);
        }
        if mtype.is_merged() {
            m.embedded_creator = Some(r.get(ID_BITS)? as ProcessId);
        }
        if path_bit {
            m.path = Some(read_path(&mut r)?);
        }
        if !sender_bit && matches!(&m.path, Some(p) if p.is_empty()) {
            return Err(Bad("creator elided with an empty path"));
        }
    } else {
        if !sender_bit || !path_bit {
            return Err(Bad("full layout flags must be set"));
        }
        let source = r.get(ID_BITS)? as ProcessId;
        let bid = r.get(BID_BITS)? as u32;
        m.payload_id = Some(PayloadId { source, bid });
        if cfg.mbd1 {
            m.local_id = Some(r.get(lid_bits)? as u32);
        }
        let size = r.get(SIZE_BITS)? as usize;
        if payload_bit {
            m.payload = Some(r.get_bytes(size)?);
        } else if size != 0 {
            return Err(Bad("size set without payload"));
        }
        m.creator = Some(r.get(ID_BITS)? as ProcessId);
        let embedded = r.get(ID_BITS)? as ProcessId;
        if mtype.is_merged() {
            m.embedded_creator = Some(embedded);
        } else if embedded != 0 {
            return Err(Bad("embedded creator on a plain message"));
        }
        m.path = Some(read_path(&mut r)?);
        if mtype == MessageType::Send && m.creator != Some(source) {
            return Err(Bad("SEND creator differs from source"));
        }
    }
    if r.remaining() >= 8 || r.get(r.remaining())? != 0 {
        return Err(Bad("trailing data"));
    }
    if let Some(path) = &m.path {
        if path.contains(&link_sender) {
            return Err(Bad("path contains the link sender"));
        }
        let mut sorted = path.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Bad("duplicate process in path"));
        }
    }
    Ok(m.resolved(link_sender))
}
