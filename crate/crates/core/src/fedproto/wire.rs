//! Binary framing.
//!
//! Every frame is a 4-byte little-endian length (counting the bytes after
//! it), then a 15-byte header `tag:u8 party:u32 sample:u32 seq:u32 width:u16`
//! and finally little-endian `f64` values. `width` is the length of each
//! vector in the payload; how many floats follow is fixed by the tag.

use crate::error::{Error, Result};

/// Length prefix plus header.
pub const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 4 + 2;

pub const TAG_UPLOAD: u8 = 0;
pub const TAG_REPLY: u8 = 1;
pub const TAG_QUERY: u8 = 2;
pub const TAG_REFRESH: u8 = 3;
pub const TAG_TIG_UPLOAD: u8 = 4;
pub const TAG_TIG_REPLY: u8 = 5;

/// Decoded frame before interpretation of the tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: u8,
    pub party: u32,
    pub sample: u32,
    pub seq: u32,
    pub width: u16,
    pub payload: Vec<f64>,
}

/// Number of payload floats a frame with `tag` and `width` carries.
fn payload_floats(tag: u8, width: usize) -> Option<usize> {
    match tag {
        TAG_UPLOAD => Some(2 * width),
        TAG_REPLY => (width == 1).then_some(2),
        TAG_QUERY => (width == 0).then_some(0),
        TAG_REFRESH | TAG_TIG_UPLOAD => Some(width),
        TAG_TIG_REPLY => Some(width + 1),
        _ => None,
    }
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        match payload_floats(self.tag, self.width as usize) {
            Some(k) if k == self.payload.len() => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "tag {} with width {} cannot carry {} values",
                    self.tag,
                    self.width,
                    self.payload.len()
                )))
            }
        }
        if let Some(bad) = self.payload.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite payload value {bad}")));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&((self.encoded_len() - 4) as u32).to_le_bytes());
        out.push(self.tag);
        out.extend_from_slice(&self.party.to_le_bytes());
        out.extend_from_slice(&self.sample.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, reason: &str| Error::Decode { offset, reason: reason.to_string() };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), "truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let declared = u32_at(0) as usize;
        if declared + 4 != bytes.len() {
            let reason = if declared + 4 > bytes.len() { "truncated frame" } else { "length mismatch" };
            return Err(fail(0, reason));
        }
        let tag = bytes[4];
        let width = u16::from_le_bytes([bytes[17], bytes[18]]);
        let Some(floats) = payload_floats(tag, width as usize) else {
            if tag > TAG_TIG_REPLY {
                return Err(fail(4, "unknown tag"));
            }
            return Err(fail(17, "length mismatch"));
        };
        if bytes.len() != HEADER_LEN + 8 * floats {
            return Err(fail(17, "length mismatch"));
        }
        let payload = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Frame { tag, party: u32_at(5), sample: u32_at(9), seq: u32_at(13), width, payload })
    }
}

fn width_of(len: usize) -> Result<u16> {
    u16::try_from(len).map_err(|_| Error::Protocol(format!("vector of length {len} does not fit a frame")))
}

/// Messages of the function-value protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    /// Party output `c` and perturbed output `c_hat` for one sample.
    Upload { party: u32, sample: u32, c: Vec<f64>, c_hat: Vec<f64>, seq: u32 },
    /// Head values at the unperturbed and perturbed party output.
    Reply { party: u32, sample: u32, h: f64, h_bar: f64, seq: u32 },
    /// Server request for a fresh output of `party` on `sample`.
    Query { party: u32, sample: u32, seq: u32 },
    /// Answer to a query.
    Refresh { party: u32, sample: u32, c: Vec<f64>, seq: u32 },
}

impl WireMessage {
    pub fn party(&self) -> u32 {
        match self {
            WireMessage::Upload { party, .. }
            | WireMessage::Reply { party, .. }
            | WireMessage::Query { party, .. }
            | WireMessage::Refresh { party, .. } => *party,
        }
    }

    pub fn sample(&self) -> u32 {
        match self {
            WireMessage::Upload { sample, .. }
            | WireMessage::Reply { sample, .. }
            | WireMessage::Query { sample, .. }
            | WireMessage::Refresh { sample, .. } => *sample,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Upload { .. } => "upload",
            WireMessage::Reply { .. } => "reply",
            WireMessage::Query { .. } => "query",
            WireMessage::Refresh { .. } => "refresh",
        }
    }

    pub fn to_frame(&self) -> Result<Frame> {
        Ok(match self {
            WireMessage::Upload { party, sample, c, c_hat, seq } => {
                if c.len() != c_hat.len() {
                    return Err(Error::Protocol(format!("upload with |c| = {} but |c_hat| = {}", c.len(), c_hat.len())));
                }
                let mut payload = c.clone();
                payload.extend_from_slice(c_hat);
                Frame { tag: TAG_UPLOAD, party: *party, sample: *sample, seq: *seq, width: width_of(c.len())?, payload }
            }
            WireMessage::Reply { party, sample, h, h_bar, seq } => {
                Frame { tag: TAG_REPLY, party: *party, sample: *sample, seq: *seq, width: 1, payload: vec![*h, *h_bar] }
            }
            WireMessage::Query { party, sample, seq } => {
                Frame { tag: TAG_QUERY, party: *party, sample: *sample, seq: *seq, width: 0, payload: Vec::new() }
            }
            WireMessage::Refresh { party, sample, c, seq } => Frame {
                tag: TAG_REFRESH,
                party: *party,
                sample: *sample,
                seq: *seq,
                width: width_of(c.len())?,
                payload: c.clone(),
            },
        })
    }

    pub fn from_frame(f: Frame) -> Result<Self> {
        let Frame { tag, party, sample, seq, width, mut payload } = f;
        Ok(match tag {
            TAG_UPLOAD => {
                let c_hat = payload.split_off(width as usize);
                WireMessage::Upload { party, sample, c: payload, c_hat, seq }
            }
            TAG_REPLY => WireMessage::Reply { party, sample, h: payload[0], h_bar: payload[1], seq },
            TAG_QUERY => WireMessage::Query { party, sample, seq },
            TAG_REFRESH => WireMessage::Refresh { party, sample, c: payload, seq },
            _ => return Err(Error::Decode { offset: 4, reason: "unknown tag".into() }),
        })
    }

    /// Frame size in bytes, length prefix included.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + 8 * match self {
                WireMessage::Upload { c, .. } => 2 * c.len(),
                WireMessage::Reply { .. } => 2,
                WireMessage::Query { .. } => 0,
                WireMessage::Refresh { c, .. } => c.len(),
            }
    }
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>> {
    msg.to_frame()?.encode()
}

pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    WireMessage::from_frame(Frame::decode(bytes)?)
}

/// Messages of the intermediate-gradient baseline. Kept apart from
/// [`WireMessage`] because its download is gradient-bearing.
#[derive(Debug, Clone, PartialEq)]
pub enum TigMessage {
    /// Activations at the cut layer.
    Upload { party: u32, sample: u32, act: Vec<f64>, seq: u32 },
    /// Loss value and the loss gradient with respect to the activations.
    Reply { party: u32, sample: u32, h: f64, grad: Vec<f64>, seq: u32 },
}

impl TigMessage {
    pub fn name(&self) -> &'static str {
        match self {
            TigMessage::Upload { .. } => "tig_upload",
            TigMessage::Reply { .. } => "tig_reply",
        }
    }

    pub fn to_frame(&self) -> Result<Frame> {
        Ok(match self {
            TigMessage::Upload { party, sample, act, seq } => Frame {
                tag: TAG_TIG_UPLOAD,
                party: *party,
                sample: *sample,
                seq: *seq,
                width: width_of(act.len())?,
                payload: act.clone(),
            },
            TigMessage::Reply { party, sample, h, grad, seq } => {
                let mut payload = vec![*h];
                payload.extend_from_slice(grad);
                Frame { tag: TAG_TIG_REPLY, party: *party, sample: *sample, seq: *seq, width: width_of(grad.len())?, payload }
            }
        })
    }

    pub fn from_frame(f: Frame) -> Result<Self> {
        let Frame { tag, party, sample, seq, mut payload, .. } = f;
        Ok(match tag {
            TAG_TIG_UPLOAD => TigMessage::Upload { party, sample, act: payload, seq },
            TAG_TIG_REPLY => {
                let grad = payload.split_off(1);
                TigMessage::Reply { party, sample, h: payload[0], grad, seq }
            }
            _ => return Err(Error::Decode { offset: 4, reason: "unknown tag".into() }),
        })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + 8 * match self {
                TigMessage::Upload { act, .. } => act.len(),
                TigMessage::Reply { grad, .. } => grad.len() + 1,
            }
    }
}
