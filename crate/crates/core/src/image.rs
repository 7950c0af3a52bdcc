//! RGB raster with `f64` channels in `[0, 1]`, plus binary PPM I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{io_err, PfosError, Result};

/// Channels-last image: pixel `(x, y)` channel `c` lives at `(y·width + x)·3 + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Image { width, height, data: rgb.repeat(width * height) }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean over all pixels, per channel.
    pub fn mean_pixel(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        let n = (self.width * self.height) as f64;
        m.map(|v| v / n)
    }

    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        w.write_all(&bytes)
    }

    pub fn read_ppm(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| PfosError::Dataset(e.to_string()))?;
        let bad = |m: &str| PfosError::Dataset(format!("ppm: {m}"));
        // Header: magic, width, height, maxval separated by whitespace, then one byte.
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).to_string());
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("only 8-bit binary P6 is supported"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
        let n = width * height * 3;
        if buf.len() < pos + n {
            return Err(bad("truncated pixel data"));
        }
        let data = buf[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Image { width, height, data })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_ppm(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_ppm(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_byte_valued_pixels() {
        let mut img = Image::filled(3, 2, [128.0 / 255.0; 3]);
        img.set_pixel(2, 1, [1.0, 0.0, 51.0 / 255.0]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert_eq!(Image::read_ppm(buf.as_slice()).unwrap(), img);
        assert!(Image::read_ppm(&b"P5\n1 1\n255\n\0"[..]).is_err());
    }
}
