use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 7;
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    LevelOtCorr = 1,
    LevelOtCt = 2,
    Psi = 3,
    Control = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => MsgType::LevelOtCorr,
            2 => MsgType::LevelOtCt,
            3 => MsgType::Psi,
            4 => MsgType::Control,
            other => return Err(Error::UnknownMsgType(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session_id: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, session_id: u16, payload: Vec<u8>) -> Self {
        Frame {
            msg_type,
            session_id,
            payload,
        }
    }

    /// Bytes on the wire, header included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode_header(msg_type: MsgType, session_id: u16, len: usize) -> Result<[u8; HEADER_LEN]> {
    if len > MAX_PAYLOAD {
        return Err(Error::FrameTooLarge(len));
    }
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&(len as u32).to_le_bytes());
    h[4] = msg_type as u8;
    h[5..].copy_from_slice(&session_id.to_le_bytes());
    Ok(h)
}

/// Writes one frame. Does not flush.
pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let h = encode_header(frame.msg_type, frame.session_id, frame.payload.len())?;
    w.write_all(&h)?;
    w.write_all(&frame.payload)?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the header maps to
/// `PeerClosed`.
pub fn read_frame(r: &mut impl Read) -> Result<Frame> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Err(Error::PeerClosed),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes([h[0], h[1], h[2], h[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::FrameTooLarge(len));
    }
    let msg_type = MsgType::from_u8(h[4])?;
    let session_id = u16::from_le_bytes([h[5], h[6]]);
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::PeerClosed
        } else {
            e.into()
        }
    })?;
    Ok(Frame {
        msg_type,
        session_id,
        payload,
    })
}
