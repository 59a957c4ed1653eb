//! PFM (portable float map) reading and writing.
//!
//! `Pf` is single-channel, `PF` three-channel. Rows are stored bottom to top;
//! the sign of the scale line encodes endianness (negative = little-endian).
//! Writing emits little-endian with scale -1.0 and round-trips 32-bit floats
//! bitwise.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded PFM payload, planar `[C,H,W]`, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn from_tensor<E: Elem>(t: &Tensor<E>) -> Result<PfmImage> {
        let (channels, height, width) = match t.shape() {
            [h, w] => (1usize, *h, *w),
            [c, h, w] if *c == 1 || *c == 3 => (*c, *h, *w),
            s => return Err(Error::Format { what: "pfm", detail: format!("unsupported tensor shape {:?}", s) }),
        };
        let data = t.values().iter().map(|v| v.to_f32().unwrap()).collect();
        Ok(PfmImage { width, height, channels, data })
    }

    pub fn to_tensor<E: Elem>(&self) -> Tensor<E> {
        let data: Vec<E> = self.data.iter().map(|&v| E::from_f32(v).unwrap()).collect();
        let shape = if self.channels == 1 {
            vec![self.height, self.width]
        } else {
            vec![self.channels, self.height, self.width]
        };
        Tensor::with_node(shape, data, None)
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "pfm", detail: detail.into() }
}

/// Parse PFM bytes.
pub fn read_pfm(bytes: &[u8]) -> Result<PfmImage> {
    // magic, width, height, scale are whitespace-separated ASCII tokens
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(format!("malformed header: missing {what}")));
        }
        String::from_utf8(bytes[start..pos].to_vec()).map_err(|_| bad(format!("malformed header: non-ascii {what}")))
    };
    let magic = token("magic")?;
    let channels = match magic.as_str() {
        "Pf" => 1usize,
        "PF" => 3usize,
        other => return Err(bad(format!("malformed header: bad magic {other:?}"))),
    };
    let width: usize = token("width")?.parse().map_err(|_| bad("malformed header: width"))?;
    let height: usize = token("height")?.parse().map_err(|_| bad("malformed header: height"))?;
    let scale: f64 = token("scale")?.parse().map_err(|_| bad("malformed header: scale"))?;
    if scale == 0.0 {
        return Err(bad("zero scale"));
    }
    if width == 0 || height == 0 {
        return Err(bad(format!("malformed header: degenerate size {width}x{height}")));
    }
    let little_endian = scale < 0.0;
    // exactly one whitespace byte separates header and payload
    let payload = &bytes[pos + 1..];
    let expected = width * height * channels * 4;
    if payload.len() < expected {
        return Err(bad(format!("truncated payload: {} of {} bytes", payload.len(), expected)));
    }
    let mut data = vec![0f32; width * height * channels];
    for row in 0..height {
        let y = height - 1 - row; // bottom-to-top storage
        for x in 0..width {
            for c in 0..channels {
                let off = ((row * width + x) * channels + c) * 4;
                let raw: [u8; 4] = payload[off..off + 4].try_into().unwrap();
                let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
                data[c * height * width + y * width + x] = v;
            }
        }
    }
    Ok(PfmImage { width, height, channels, data })
}

/// Encode as little-endian PFM with scale -1.0.
pub fn write_pfm(img: &PfmImage) -> Result<Vec<u8>> {
    if img.channels != 1 && img.channels != 3 {
        return Err(bad(format!("{} channels unsupported", img.channels)));
    }
    if img.data.len() != img.width * img.height * img.channels {
        return Err(bad(format!(
            "data length {} vs {}x{}x{}",
            img.data.len(),
            img.channels,
            img.height,
            img.width
        )));
    }
    let magic = if img.channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in 0..img.height {
        let y = img.height - 1 - row;
        for x in 0..img.width {
            for c in 0..img.channels {
                let v = img.data[c * img.height * img.width + y * img.width + x];
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> PfmImage {
        PfmImage {
            width: 5,
            height: 4,
            channels: 1,
            data: (0..20).map(|i| (i as f32) * 0.37 - 2.0).collect(),
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let img = sample_map();
        let bytes = write_pfm(&img).unwrap();
        let back = read_pfm(&bytes).unwrap();
        assert_eq!(back, img);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn written_header_matches_grammar() {
        let bytes = write_pfm(&sample_map()).unwrap();
        assert!(bytes.starts_with(b"Pf\n5 4\n-1.0\n"));
    }

    #[test]
    fn big_endian_payload_decodes_identically() {
        let img = sample_map();
        // hand-build a big-endian variant (positive scale)
        let mut be = b"Pf\n5 4\n1.0\n".to_vec();
        for row in 0..img.height {
            let y = img.height - 1 - row;
            for x in 0..img.width {
                be.extend_from_slice(&img.data[y * img.width + x].to_be_bytes());
            }
        }
        let back = read_pfm(&be).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn three_channel_roundtrip() {
        let img = PfmImage {
            width: 3,
            height: 2,
            channels: 3,
            data: (0..18).map(|i| i as f32 / 7.0).collect(),
        };
        let back = read_pfm(&write_pfm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn error_cases_are_distinct() {
        let img = sample_map();
        let good = write_pfm(&img).unwrap();

        let bad_magic = read_pfm(b"P6\n5 4\n-1.0\n....");
        assert!(format!("{}", bad_magic.unwrap_err()).contains("bad magic"));

        let mut truncated = good.clone();
        truncated.truncate(good.len() - 3);
        let t = read_pfm(&truncated);
        assert!(format!("{}", t.unwrap_err()).contains("truncated payload"));

        let zero_scale = read_pfm(b"Pf\n5 4\n0.0\n\0\0\0\0");
        assert!(format!("{}", zero_scale.unwrap_err()).contains("zero scale"));
    }

    #[test]
    fn tensor_conversion_shapes() {
        let img = sample_map();
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[4, 5]);
        let back = PfmImage::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }
}
