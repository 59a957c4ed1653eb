//! 16-bit binary PGM export for disparity and error-map visualization.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encode a `[H,W]` map as binary `P5` with maxval 65535. Samples are
/// `round(clamp(v * scale, 0, 65535))`, stored big-endian per the PGM
/// convention.
pub fn write_pgm16<E: Elem>(map: &Tensor<E>, scale: f64) -> Result<Vec<u8>> {
    if map.shape().len() != 2 {
        return Err(Error::Format { what: "pgm", detail: format!("expected [H,W], got {:?}", map.shape()) });
    }
    if !(scale > 0.0) {
        return Err(Error::arg("write_pgm16", format!("scale must be positive, got {scale}")));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in map.values() {
        let q = (v.to_f64().unwrap() * scale).clamp(0.0, 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent minimal P5/16-bit reader used only as a test oracle.
    fn read_pgm16_oracle(bytes: &[u8]) -> (usize, usize, Vec<u16>) {
        let mut pos = 0usize;
        let mut token = || {
            while bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            std::str::from_utf8(&bytes[start..pos]).unwrap().to_string()
        };
        assert_eq!(token(), "P5");
        let w: usize = token().parse().unwrap();
        let h: usize = token().parse().unwrap();
        assert_eq!(token(), "65535");
        pos += 1;
        let mut vals = Vec::with_capacity(w * h);
        for i in 0..w * h {
            vals.push(u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]));
        }
        (w, h, vals)
    }

    #[test]
    fn zero_map_gives_zero_payload() {
        let m = Tensor::<f64>::zeros(vec![3, 4]);
        let bytes = write_pgm16(&m, 256.0).unwrap();
        let (w, h, vals) = read_pgm16_oracle(&bytes);
        assert_eq!((w, h), (4, 3));
        assert!(vals.iter().all(|&v| v == 0));
    }

    #[test]
    fn unit_value_scales_to_256() {
        let m = Tensor::from_vec(vec![1, 1], vec![1.0f64]).unwrap();
        let bytes = write_pgm16(&m, 256.0).unwrap();
        let (_, _, vals) = read_pgm16_oracle(&bytes);
        assert_eq!(vals, vec![256]);
    }

    #[test]
    fn quantized_roundtrip_through_independent_reader() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.731).collect();
        let m = Tensor::from_vec(vec![3, 4], data.clone()).unwrap();
        let scale = 100.0;
        let bytes = write_pgm16(&m, scale).unwrap();
        let (_, _, vals) = read_pgm16_oracle(&bytes);
        for (v, orig) in vals.iter().zip(&data) {
            assert_eq!(*v, (orig * scale).clamp(0.0, 65535.0).round() as u16);
        }
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let m = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(write_pgm16(&m, 0.0).is_err());
        assert!(write_pgm16(&m, -1.0).is_err());
    }
}
