//! Middlebury `.flo`: little-endian `f32` tag 202021.25, `i32` width, `i32`
//! height, then `width*height` interleaved `(u, v)` `f32` pairs row-major.

use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

const FLO_TAG: f32 = 202021.25;
const HEADER_LEN: usize = 12;

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

pub fn write_flo(flow: &FlowField<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

fn word(bytes: &[u8], at: usize) -> [u8; 4] {
    [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(bytes.len(), "truncated .flo header"));
    }
    if f32::from_le_bytes(word(bytes, 0)) != FLO_TAG {
        return Err(Error::parse(0, "bad .flo magic (expected 202021.25)"));
    }
    let width = i32::from_le_bytes(word(bytes, 4));
    let height = i32::from_le_bytes(word(bytes, 8));
    if width <= 0 || height <= 0 {
        return Err(Error::parse(4, format!("invalid flow size {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height * 8;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::parse(
            HEADER_LEN + payload.len().min(expected),
            format!(
                "payload size mismatch: header says {width}x{height} ({expected} bytes), found {}",
                payload.len()
            ),
        ));
    }
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for pair in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes(word(pair, 0)));
        v.push(f32::from_le_bytes(word(pair, 4)));
    }
    FlowField::new(height, width, u, v)
}

pub fn encode_flo(flow: &FlowField<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + flow.u().len() * 8);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_spells_pieh() {
        assert_eq!(&FLO_TAG.to_le_bytes(), b"PIEH");
    }

    #[test]
    fn single_pixel_layout() {
        let flow = FlowField::new(1, 1, vec![1.5f32], vec![-0.25]).unwrap();
        let bytes = encode_flo(&flow);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[12..16], &1.5f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-0.25f32).to_le_bytes());
        let back = decode_flo(&bytes).unwrap();
        assert_eq!(back.u()[0].to_bits(), 1.5f32.to_bits());
        assert_eq!(back.v()[0].to_bits(), (-0.25f32).to_bits());
    }

    #[test]
    fn zero_flow_payload_is_zero_words() {
        let flow = FlowField::<f32>::zeros(2, 2).unwrap();
        let bytes = encode_flo(&flow);
        assert_eq!(bytes.len(), 12 + 32);
        assert!(bytes[12..].iter().all(|&b| b == 0));
        assert_eq!(i32::from_le_bytes(word(&bytes, 4)), 2);
    }

    #[test]
    fn bad_magic_and_sizes() {
        let flow = FlowField::<f32>::zeros(2, 3).unwrap();
        let mut bytes = encode_flo(&flow);
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(decode_flo(&bad), Err(Error::Parse { offset: 0, .. })));
        bytes.pop();
        assert!(decode_flo(&bytes).is_err());
        bytes.extend_from_slice(&[0, 0]);
        assert!(decode_flo(&bytes).is_err());
        assert!(decode_flo(b"PIEH").is_err());
    }

    #[test]
    fn non_finite_components_are_rejected() {
        let mut bytes = encode_flo(&FlowField::<f32>::zeros(1, 1).unwrap());
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_flo(&bytes), Err(Error::NonFinite(_))));
    }
}
