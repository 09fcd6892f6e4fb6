//! Binary netpbm: P6 colour and P5 grayscale, maxval 255 only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit interleaved samples, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::dim("c", format!("images have 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::dim("hw", format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::dim(
                "data",
                format!("{} samples for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(ImageBuffer { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels]).expect("valid extents")
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

struct Header {
    width: usize,
    height: usize,
    channels: usize,
    data_start: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    let channels = match buf.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::format(0, "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(Error::format(pos as u64, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "number too large"))?;
    }
    if fields[2] != 255 {
        return Err(Error::format(pos as u64, format!("maxval must be 255, got {}", fields[2])));
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos as u64, "expected whitespace after maxval"));
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err(Error::format(pos as u64, "zero image dimension"));
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        channels,
        data_start: pos + 1,
    })
}

pub fn decode_pnm(buf: &[u8]) -> Result<ImageBuffer> {
    let h = parse_header(buf)?;
    let need = h.width * h.height * h.channels;
    let have = buf.len() - h.data_start;
    if have < need {
        return Err(Error::format(
            buf.len() as u64,
            format!("truncated pixel data: {have} of {need} bytes"),
        ));
    }
    ImageBuffer::new(h.width, h.height, h.channels, buf[h.data_start..h.data_start + need].to_vec())
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&buf)
}

pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_known_p6_bytes() {
        let mut f = b"P6\n# made by hand\n2 2\n255\n".to_vec();
        let px: Vec<u8> = (1..=12).collect();
        f.extend(&px);
        let img = decode_pnm(&f).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
        assert_eq!(img.data, px);
        assert_eq!(img.get(1, 1, 2), 12);
    }

    #[test]
    fn p5_is_one_channel() {
        let img = decode_pnm(b"P5 3 1 255 \x00\x80\xff").unwrap();
        assert_eq!(img.channels, 1);
        assert_eq!(img.data, vec![0, 128, 255]);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0 0 0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Format { offset: 12, .. })));
        match decode_pnm(b"P5\n2 2\n255\n\x01\x02") {
            Err(Error::Format { offset, detail }) => {
                assert_eq!(offset, 13);
                assert!(detail.contains("2 of 4"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pnm(b"P5\nx"), Err(Error::Format { offset: 3, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            w in 1usize..9, h in 1usize..9, color in any::<bool>(), seed in any::<u64>()
        ) {
            let c = if color { 3 } else { 1 };
            let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let img = ImageBuffer::new(w, h, c, data).unwrap();
            prop_assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
        }
    }
}
