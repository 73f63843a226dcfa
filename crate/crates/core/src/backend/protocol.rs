//! Length-prefixed binary framing for out-of-process denoisers.
//!
//! Every message is little-endian:
//!
//! ```text
//! magic[8] = "Z4DPROTO" | version u32 | payload_len u32 | payload
//! payload  = kind u32 | clip_len u32 | H u32 | W u32 | C u32 | sigma f64 | slot u32 | body
//! ```
//!
//! A request body is `x_t (L·H·W·C f32)`, the condition frame `(H·W·C)`,
//! the warped frames `(L·H·W·C)` and the masks `(L·H·W, 1.0 = missing)`.
//! A reply body holds the conditional estimate and optionally the
//! unconditional one; the count follows from the payload length. An error
//! body is UTF-8 text. In a hello message `clip_len` is the maximum clip
//! length, `H/W/C` the required frame size (zero when flexible) and the slot
//! field carries capability bits.

use std::io::{self, Read, Write};

use super::{
    validate_request, BackendDescriptor, CallContext, ClipAddress, Condition, DenoiseOutput, DenoiseRequest, Denoiser,
    GridCoord,
};
use crate::frame::{Dims, Frame, OcclusionMask, WarpedView};

pub const MAGIC: [u8; 8] = *b"Z4DPROTO";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
/// Hello capability bit: the backend returns an unconditional estimate.
pub const CAP_UNCONDITIONAL: u32 = 1;

const MAX_PAYLOAD: usize = u32::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    Hello = 1,
    Request = 2,
    Reply = 3,
    Error = 4,
    Shutdown = 5,
}

impl Kind {
    fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => Kind::Hello,
            2 => Kind::Request,
            3 => Kind::Reply,
            4 => Kind::Error,
            5 => Kind::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: Kind,
    pub clip_len: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub sigma: f64,
    pub slot: u32,
}

impl Header {
    pub fn bare(kind: Kind) -> Self {
        Self {
            kind,
            clip_len: 0,
            height: 0,
            width: 0,
            channels: 0,
            sigma: 0.0,
            slot: 0,
        }
    }

    fn dims(&self) -> Dims {
        Dims::new(self.height as usize, self.width as usize, self.channels as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub version: u32,
    pub header: Header,
    pub body: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("stream closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 8]),
    #[error("unknown message kind {0}")]
    UnknownKind(u32),
    #[error("malformed message: {0}")]
    Malformed(String),
}

fn read_exact_or_closed<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ProtocolError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(ProtocolError::Closed),
        Err(e) => Err(e.into()),
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn write_message<W: Write>(w: &mut W, version: u32, header: &Header, body: &[u8]) -> Result<(), ProtocolError> {
    let payload_len = HEADER_LEN + body.len();
    if payload_len > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!(
            "payload of {payload_len} bytes is too large"
        )));
    }
    let mut buf = Vec::with_capacity(16 + payload_len);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(payload_len as u32).to_le_bytes());
    buf.extend_from_slice(&(header.kind as u32).to_le_bytes());
    for v in [header.clip_len, header.height, header.width, header.channels] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&header.sigma.to_le_bytes());
    buf.extend_from_slice(&header.slot.to_le_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message, ProtocolError> {
    let mut prefix = [0u8; 16];
    read_exact_or_closed(r, &mut prefix)?;
    let magic: [u8; 8] = prefix[..8].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let version = u32_at(&prefix, 8);
    let len = u32_at(&prefix, 12) as usize;
    if len < HEADER_LEN {
        return Err(ProtocolError::Malformed(format!(
            "payload of {len} bytes is shorter than the header"
        )));
    }
    let mut payload = vec![0u8; len];
    read_exact_or_closed(r, &mut payload)?;
    let kind_raw = u32_at(&payload, 0);
    let kind = Kind::from_u32(kind_raw).ok_or(ProtocolError::UnknownKind(kind_raw))?;
    let header = Header {
        kind,
        clip_len: u32_at(&payload, 4),
        height: u32_at(&payload, 8),
        width: u32_at(&payload, 12),
        channels: u32_at(&payload, 16),
        sigma: f64::from_le_bytes(payload[20..28].try_into().unwrap()),
        slot: u32_at(&payload, 28),
    };
    payload.drain(..HEADER_LEN);
    Ok(Message {
        version,
        header,
        body: payload,
    })
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f32s(body: &[u8], at: &mut usize, n: usize) -> Result<Vec<f32>, ProtocolError> {
    let end = *at + 4 * n;
    if end > body.len() {
        return Err(ProtocolError::Malformed(format!(
            "body holds {} bytes, need {end}",
            body.len()
        )));
    }
    let out = body[*at..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at = end;
    Ok(out)
}

fn to_u32(v: usize, what: &str) -> Result<u32, ProtocolError> {
    u32::try_from(v).map_err(|_| ProtocolError::Malformed(format!("{what} {v} does not fit in u32")))
}

/// Hello message describing a backend.
pub fn hello_header(desc: &BackendDescriptor) -> Header {
    let (h, w, c) = desc.frame_dims.unwrap_or((0, 0, 0));
    Header {
        kind: Kind::Hello,
        clip_len: desc.max_clip_len.min(u32::MAX as usize) as u32,
        height: h as u32,
        width: w as u32,
        channels: c as u32,
        sigma: 0.0,
        slot: if desc.has_unconditional { CAP_UNCONDITIONAL } else { 0 },
    }
}

pub fn encode_request(req: &DenoiseRequest<'_>) -> Result<(Header, Vec<u8>), ProtocolError> {
    let first = req
        .x_t
        .first()
        .ok_or_else(|| ProtocolError::Malformed("empty clip".into()))?;
    let dims = first.dims();
    let len = req.x_t.len();
    let header = Header {
        kind: Kind::Request,
        clip_len: to_u32(len, "clip length")?,
        height: to_u32(dims.height, "height")?,
        width: to_u32(dims.width, "width")?,
        channels: to_u32(dims.channels, "channels")?,
        sigma: req.sigma,
        slot: to_u32(req.condition_slot, "condition slot")?,
    };
    let mut body = Vec::with_capacity(4 * (len * (2 * dims.len() + dims.pixels()) + dims.len()));
    for f in req.x_t {
        push_f32s(&mut body, f.data());
    }
    push_f32s(&mut body, req.condition.frame.data());
    for w in req.warped {
        push_f32s(&mut body, w.frame.data());
    }
    for w in req.warped {
        for &m in w.mask.as_slice() {
            body.extend_from_slice(&(if m { 1.0f32 } else { 0.0 }).to_le_bytes());
        }
    }
    Ok((header, body))
}

/// A request decoded on the child side.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedRequest {
    pub x_t: Vec<Frame>,
    pub sigma: f64,
    pub condition: Condition,
    pub condition_slot: usize,
    pub warped: Vec<WarpedView>,
}

fn frames_from(body: &[u8], at: &mut usize, count: usize, dims: Dims) -> Result<Vec<Frame>, ProtocolError> {
    (0..count)
        .map(|_| {
            let data = take_f32s(body, at, dims.len())?;
            Frame::from_vec(dims, data).map_err(|e| ProtocolError::Malformed(e.to_string()))
        })
        .collect()
}

pub fn decode_request(msg: &Message) -> Result<OwnedRequest, ProtocolError> {
    let h = &msg.header;
    if h.kind != Kind::Request {
        return Err(ProtocolError::Malformed(format!("expected request, got {:?}", h.kind)));
    }
    let dims = h.dims();
    let len = h.clip_len as usize;
    let expected = 4 * (2 * len * dims.len() + dims.len() + len * dims.pixels());
    if msg.body.len() != expected {
        return Err(ProtocolError::Malformed(format!(
            "request body is {} bytes, expected {expected} for {len} frames of {dims}",
            msg.body.len()
        )));
    }
    let mut at = 0;
    let x_t = frames_from(&msg.body, &mut at, len, dims)?;
    let cond = frames_from(&msg.body, &mut at, 1, dims)?.pop().unwrap();
    let warped_frames = frames_from(&msg.body, &mut at, len, dims)?;
    let mut warped = Vec::with_capacity(len);
    for frame in warped_frames {
        let m = take_f32s(&msg.body, &mut at, dims.pixels())?;
        let mask = OcclusionMask::from_vec(dims.height, dims.width, m.iter().map(|&v| v >= 0.5).collect())
            .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        warped.push(WarpedView::new(frame, mask).map_err(|e| ProtocolError::Malformed(e.to_string()))?);
    }
    Ok(OwnedRequest {
        x_t,
        sigma: h.sigma,
        // The wire carries no grid coordinates; the anchor is nominal.
        condition: Condition::new(GridCoord::new(0, 0), cond),
        condition_slot: h.slot as usize,
        warped,
    })
}

pub fn encode_reply(out: &DenoiseOutput) -> Result<(Header, Vec<u8>), ProtocolError> {
    let first = out
        .conditional
        .first()
        .ok_or_else(|| ProtocolError::Malformed("empty reply".into()))?;
    let dims = first.dims();
    let header = Header {
        kind: Kind::Reply,
        clip_len: to_u32(out.conditional.len(), "clip length")?,
        height: to_u32(dims.height, "height")?,
        width: to_u32(dims.width, "width")?,
        channels: to_u32(dims.channels, "channels")?,
        sigma: 0.0,
        slot: 0,
    };
    let mut body = Vec::new();
    for f in out.conditional.iter().chain(out.unconditional.iter().flatten()) {
        push_f32s(&mut body, f.data());
    }
    Ok((header, body))
}

/// Decodes a reply, checking it matches the clip that was sent.
pub fn decode_reply(msg: &Message, len: usize, dims: Dims) -> Result<DenoiseOutput, ProtocolError> {
    let h = &msg.header;
    if h.kind != Kind::Reply {
        return Err(ProtocolError::Malformed(format!("expected reply, got {:?}", h.kind)));
    }
    if h.clip_len as usize != len || h.dims() != dims {
        return Err(ProtocolError::Malformed(format!(
            "reply shape {}x{} does not match request {len}x{dims}",
            h.clip_len,
            h.dims()
        )));
    }
    let one = 4 * len * dims.len();
    let tensors = match msg.body.len() {
        n if n == one => 1,
        n if n == 2 * one => 2,
        n => {
            return Err(ProtocolError::Malformed(format!(
                "reply body is {n} bytes; expected {one} or {}",
                2 * one
            )))
        }
    };
    let mut at = 0;
    let conditional = frames_from(&msg.body, &mut at, len, dims)?;
    let unconditional = if tensors == 2 {
        Some(frames_from(&msg.body, &mut at, len, dims)?)
    } else {
        None
    };
    Ok(DenoiseOutput {
        conditional,
        unconditional,
    })
}

/// Summary of a finished [`serve`] session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeStats {
    pub requests: usize,
    pub errors: usize,
}

/// Child-side loop: answers the parent's hello with `advertised_version`,
/// then handles requests until shutdown or end of stream. Requests the
/// backend rejects are answered with an error message rather than ending
/// the session. `exit_after` stops (without replying) once that many
/// requests have arrived, which simulates a crash.
pub fn serve<R: Read, W: Write>(
    denoiser: &dyn Denoiser,
    reader: &mut R,
    writer: &mut W,
    advertised_version: u32,
    exit_after: Option<usize>,
) -> Result<ServeStats, ProtocolError> {
    let mut stats = ServeStats::default();
    let hello = read_message(reader)?;
    if hello.header.kind != Kind::Hello {
        return Err(ProtocolError::Malformed(format!(
            "expected hello, got {:?}",
            hello.header.kind
        )));
    }
    write_message(writer, advertised_version, &hello_header(denoiser.descriptor()), &[])?;
    loop {
        let msg = match read_message(reader) {
            Ok(m) => m,
            Err(ProtocolError::Closed) => return Ok(stats),
            Err(e) => return Err(e),
        };
        match msg.header.kind {
            Kind::Shutdown => return Ok(stats),
            Kind::Request => {
                if exit_after.is_some_and(|n| stats.requests >= n) {
                    return Ok(stats);
                }
                stats.requests += 1;
                let result = decode_request(&msg).map_err(|e| e.to_string()).and_then(|req| {
                    let request = DenoiseRequest {
                        x_t: &req.x_t,
                        sigma: req.sigma,
                        condition: &req.condition,
                        condition_slot: req.condition_slot,
                        warped: &req.warped,
                        context: CallContext::new(ClipAddress::row(0), 0),
                    };
                    validate_request(denoiser.descriptor(), &request)
                        .and_then(|_| denoiser.denoise(&request))
                        .map_err(|e| e.to_string())
                });
                match result {
                    Ok(out) => {
                        let (h, body) = encode_reply(&out)?;
                        write_message(writer, advertised_version, &h, &body)?;
                    }
                    Err(text) => {
                        stats.errors += 1;
                        write_message(writer, advertised_version, &Header::bare(Kind::Error), text.as_bytes())?;
                    }
                }
            }
            other => {
                return Err(ProtocolError::Malformed(format!("unexpected {other:?} message")));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::IdentityDenoiser;
    use std::io::Cursor;

    #[test]
    fn header_layout_is_fixed() {
        let mut buf = Vec::new();
        let h = Header {
            kind: Kind::Request,
            clip_len: 3,
            height: 4,
            width: 5,
            channels: 1,
            sigma: 2.5,
            slot: 2,
        };
        write_message(&mut buf, VERSION, &h, &[9, 9, 9, 9]).unwrap();
        assert_eq!(&buf[..8], b"Z4DPROTO");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &36u32.to_le_bytes());
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[36..44], &2.5f64.to_le_bytes());
        assert_eq!(&buf[44..48], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 36);
        let back = read_message(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.header, h);
        assert_eq!(back.body, vec![9, 9, 9, 9]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        write_message(&mut buf, VERSION, &Header::bare(Kind::Hello), &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_message(&mut Cursor::new(bad)),
            Err(ProtocolError::BadMagic(_))
        ));
        buf.truncate(20);
        assert!(matches!(
            read_message(&mut Cursor::new(buf)),
            Err(ProtocolError::Closed)
        ));
    }

    #[test]
    fn request_round_trip() {
        let dims = Dims::new(2, 3, 3);
        let x: Vec<Frame> = (0..2)
            .map(|i| Frame::from_fn(dims, |r, c, ch| (i * 100 + r * 10 + c) as f32 + ch as f32 * 0.25))
            .collect();
        let mask = OcclusionMask::from_vec(2, 3, vec![true, false, false, true, false, true]).unwrap();
        let warped = vec![
            WarpedView::new(Frame::filled(dims, 0.5), mask).unwrap(),
            WarpedView::visible(Frame::filled(dims, -0.5)),
        ];
        let cond = Condition::new(GridCoord::new(0, 0), Frame::filled(dims, 0.125));
        let req = DenoiseRequest {
            x_t: &x,
            sigma: 0.75,
            condition: &cond,
            condition_slot: 1,
            warped: &warped,
            context: CallContext::new(ClipAddress::row(0), 0),
        };
        let (h, body) = encode_request(&req).unwrap();
        let mut buf = Vec::new();
        write_message(&mut buf, VERSION, &h, &body).unwrap();
        let msg = read_message(&mut Cursor::new(buf)).unwrap();
        let back = decode_request(&msg).unwrap();
        assert_eq!(back.x_t, x);
        assert_eq!(back.sigma, 0.75);
        assert_eq!(back.condition_slot, 1);
        assert_eq!(back.condition.frame, cond.frame);
        assert_eq!(back.warped, warped);
    }

    #[test]
    fn reply_tensor_count_from_length() {
        let dims = Dims::new(1, 2, 1);
        let a = vec![Frame::filled(dims, 1.0); 3];
        let b = vec![Frame::filled(dims, 2.0); 3];
        for out in [
            DenoiseOutput::conditional(a.clone()),
            DenoiseOutput {
                conditional: a.clone(),
                unconditional: Some(b.clone()),
            },
        ] {
            let (h, body) = encode_reply(&out).unwrap();
            let msg = Message {
                version: VERSION,
                header: h,
                body,
            };
            assert_eq!(decode_reply(&msg, 3, dims).unwrap(), out);
            assert!(decode_reply(&msg, 2, dims).is_err());
        }
    }

    #[test]
    fn serve_answers_hello_and_requests() {
        let dims = Dims::new(1, 1, 1);
        let x = vec![Frame::filled(dims, 0.3); 2];
        let w = vec![WarpedView::holes(dims); 2];
        let c = Condition::new(GridCoord::new(0, 0), Frame::zeros(dims));
        let req = DenoiseRequest {
            x_t: &x,
            sigma: 1.0,
            condition: &c,
            condition_slot: 0,
            warped: &w,
            context: CallContext::new(ClipAddress::row(0), 0),
        };
        let mut input = Vec::new();
        write_message(&mut input, VERSION, &Header::bare(Kind::Hello), &[]).unwrap();
        let (h, body) = encode_request(&req).unwrap();
        write_message(&mut input, VERSION, &h, &body).unwrap();
        write_message(&mut input, VERSION, &Header::bare(Kind::Shutdown), &[]).unwrap();

        let mut output = Vec::new();
        let stats = serve(
            &IdentityDenoiser::new(),
            &mut Cursor::new(input),
            &mut output,
            VERSION,
            None,
        )
        .unwrap();
        assert_eq!(stats.requests, 1);
        let mut rd = Cursor::new(output);
        let hello = read_message(&mut rd).unwrap();
        assert_eq!(hello.header.kind, Kind::Hello);
        assert_eq!(hello.version, VERSION);
        let reply = decode_reply(&read_message(&mut rd).unwrap(), 2, dims).unwrap();
        assert_eq!(reply.conditional, x);
    }
}
