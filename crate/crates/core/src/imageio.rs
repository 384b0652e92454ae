//! Image loading, channel decomposition, and the two-level spatial pyramid.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::geom::PixelBox;

/// Single-channel 8-bit image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return arg_err(format!("raster dimensions must be positive, got {width}x{height}"));
        }
        if data.len() != width * height {
            return arg_err(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Raster::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// `255 - v` at every pixel.
    pub fn inverted(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 255 - v).collect(),
        }
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}

/// An 8-bit RGB image stored as three planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub red: Raster,
    pub green: Raster,
    pub blue: Raster,
}

impl RgbImage {
    /// Builds planes from interleaved `RGBRGB...` bytes.
    pub fn from_interleaved(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return arg_err(format!(
                "interleaved buffer length {} does not match {width}x{height}x3",
                rgb.len()
            ));
        }
        let plane = |c: usize| rgb.iter().skip(c).step_by(3).copied().collect::<Vec<_>>();
        Ok(RgbImage {
            red: Raster::new(width, height, plane(0))?,
            green: Raster::new(width, height, plane(1))?,
            blue: Raster::new(width, height, plane(2))?,
        })
    }

    pub fn width(&self) -> usize {
        self.red.width
    }

    pub fn height(&self) -> usize {
        self.red.height
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.red.data.len() * 3);
        for i in 0..self.red.data.len() {
            out.extend_from_slice(&[self.red.data[i], self.green.data[i], self.blue.data[i]]);
        }
        out
    }

    /// Rec.601 luma, rounded to nearest.
    pub fn gray(&self) -> Raster {
        let data = (0..self.red.data.len())
            .map(|i| {
                let v = 0.299 * self.red.data[i] as f64
                    + 0.587 * self.green.data[i] as f64
                    + 0.114 * self.blue.data[i] as f64;
                v.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Raster {
            width: self.width(),
            height: self.height(),
            data,
        }
    }

    pub fn channel(&self, id: ChannelId) -> Raster {
        match id {
            ChannelId::R => self.red.clone(),
            ChannelId::G => self.green.clone(),
            ChannelId::B => self.blue.clone(),
            ChannelId::I => self.gray(),
        }
    }
}

/// Reads a PNG, JPEG, or binary PPM into RGB planes.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_image(&bytes)
}

/// Decodes an in-memory PNG, JPEG, or PPM.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    RgbImage::from_interleaved(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

/// Writes the image as PNG. Used by the synthetic corpus writer.
pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let buf = image::RgbImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.to_interleaved(),
    )
    .ok_or_else(|| Error::Argument("image buffer size mismatch".into()))?;
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    R,
    G,
    B,
    I,
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [ChannelId::R, ChannelId::G, ChannelId::B, ChannelId::I];

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'R' => Some(ChannelId::R),
            'G' => Some(ChannelId::G),
            'B' => Some(ChannelId::B),
            'I' => Some(ChannelId::I),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            ChannelId::R => 'R',
            ChannelId::G => 'G',
            ChannelId::B => 'B',
            ChannelId::I => 'I',
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Spatial pyramid level; level 1 is full resolution, level 2 half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PyramidLevel {
    L1,
    L2,
}

impl PyramidLevel {
    pub fn from_number(n: u32) -> Option<Self> {
        match n {
            1 => Some(PyramidLevel::L1),
            2 => Some(PyramidLevel::L2),
            _ => None,
        }
    }

    pub fn number(self) -> u32 {
        match self {
            PyramidLevel::L1 => 1,
            PyramidLevel::L2 => 2,
        }
    }

    /// Level-1 pixels per pixel of this level.
    pub fn scale(self) -> Scale {
        Scale {
            num: self.number() as u32,
            den: 1,
        }
    }
}

/// Rational factor mapping level coordinates to level-1 coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub num: u32,
    pub den: u32,
}

impl Scale {
    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Maps an inclusive pixel box to level-1 coordinates, clipped to the
    /// level-1 image. Each source pixel covers a `num/den` block.
    pub fn box_to_base(self, b: PixelBox, base_width: usize, base_height: usize) -> PixelBox {
        let lo = |v: u32| v * self.num / self.den;
        let hi = |v: u32, limit: usize| ((v + 1) * self.num / self.den).saturating_sub(1).min(limit as u32 - 1);
        PixelBox {
            xmin: lo(b.xmin).min(base_width as u32 - 1),
            ymin: lo(b.ymin).min(base_height as u32 - 1),
            xmax: hi(b.xmax, base_width),
            ymax: hi(b.ymax, base_height),
        }
    }

    /// Maps a continuous pixel-centre coordinate to level-1 coordinates.
    pub fn point_to_base(self, v: f64) -> f64 {
        let s = self.as_f64();
        (v + 0.5) * s - 0.5
    }
}

#[derive(Clone, Debug)]
pub struct ChannelEntry {
    pub channel: ChannelId,
    pub level: PyramidLevel,
    pub raster: Raster,
    pub scale: Scale,
}

/// The per-(channel, level) rasters one image is decomposed into.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub base_width: usize,
    pub base_height: usize,
    pub entries: Vec<ChannelEntry>,
}

/// Splits an RGB image into the requested channels at the requested pyramid
/// levels. Entries are ordered by level, then channel (R, G, B, I).
pub fn decompose(rgb: &RgbImage, channels: &[ChannelId], levels: &[PyramidLevel]) -> Result<ChannelSet> {
    if channels.is_empty() {
        return arg_err("channel set is empty");
    }
    if levels.is_empty() {
        return arg_err("pyramid level set is empty");
    }
    let mut channels = channels.to_vec();
    channels.sort();
    channels.dedup();
    let mut levels = levels.to_vec();
    levels.sort();
    levels.dedup();

    let mut entries = Vec::with_capacity(channels.len() * levels.len());
    for &level in &levels {
        for &channel in &channels {
            let full = rgb.channel(channel);
            let raster = match level {
                PyramidLevel::L1 => full,
                PyramidLevel::L2 => downsample2(&full),
            };
            entries.push(ChannelEntry {
                channel,
                level,
                raster,
                scale: level.scale(),
            });
        }
    }
    Ok(ChannelSet {
        base_width: rgb.width(),
        base_height: rgb.height(),
        entries,
    })
}

/// Halves resolution with a 2x2 box filter, replicating the last row and
/// column when a dimension is odd. Means are rounded half up.
pub fn downsample2(src: &Raster) -> Raster {
    let w = src.width.div_ceil(2);
    let h = src.height.div_ceil(2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = 2 * y;
        let y1 = (2 * y + 1).min(src.height - 1);
        for x in 0..w {
            let x0 = 2 * x;
            let x1 = (2 * x + 1).min(src.width - 1);
            let sum = src.get(x0, y0) as u32 + src.get(x1, y0) as u32 + src.get(x0, y1) as u32 + src.get(x1, y1) as u32;
            data.push(((sum + 2) / 4) as u8);
        }
    }
    Raster {
        width: w,
        height: h,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb1(r: u8, g: u8, b: u8) -> RgbImage {
        RgbImage::from_interleaved(1, 1, &[r, g, b]).unwrap()
    }

    #[test]
    fn gray_identity() {
        let set = decompose(&rgb1(100, 100, 100), &[ChannelId::I], &[PyramidLevel::L1]).unwrap();
        assert_eq!(set.entries.len(), 1);
        assert_eq!(set.entries[0].raster.data(), &[100]);
    }

    #[test]
    fn pure_red_luma() {
        // round(0.299 * 255) = round(76.245)
        let set = decompose(&rgb1(255, 0, 0), &[ChannelId::I], &[PyramidLevel::L1]).unwrap();
        assert_eq!(set.entries[0].raster.data(), &[76]);
    }

    #[test]
    fn box_filter_on_odd_raster() {
        let src = Raster::new(3, 3, vec![10, 20, 30, 40, 50, 60, 70, 80, 90]).unwrap();
        let d = downsample2(&src);
        assert_eq!((d.width(), d.height()), (2, 2));
        // (10+20+40+50)/4 = 30
        assert_eq!(d.get(0, 0), 30);
        // right column replicates: (30+30+60+60)/4 = 45
        assert_eq!(d.get(1, 0), 45);
        // bottom row replicates: (70+80+70+80)/4 = 75
        assert_eq!(d.get(0, 1), 75);
        assert_eq!(d.get(1, 1), 90);
    }

    #[test]
    fn empty_channel_set_rejected() {
        let err = decompose(&rgb1(1, 2, 3), &[], &[PyramidLevel::L1]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn decoded_png_planes() {
        let img = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        let planes = decode_image(&bytes).unwrap();
        assert_eq!(planes.red.data(), &[255, 0]);
        assert_eq!(planes.green.data(), &[0, 0]);
        assert_eq!(planes.blue.data(), &[0, 255]);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let img = image::RgbImage::from_raw(4, 4, vec![7; 48]).unwrap();
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(matches!(decode_image(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_image("/nonexistent/definitely/missing.png"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn level_two_dimensions() {
        let rgb = RgbImage::from_interleaved(5, 3, &[9; 45]).unwrap();
        let set = decompose(&rgb, &[ChannelId::R, ChannelId::I], &[PyramidLevel::L1, PyramidLevel::L2]).unwrap();
        let l2: Vec<_> = set.entries.iter().filter(|e| e.level == PyramidLevel::L2).collect();
        assert_eq!(l2.len(), 2);
        for e in l2 {
            assert_eq!((e.raster.width(), e.raster.height()), (3, 2));
            assert_eq!(e.scale, Scale { num: 2, den: 1 });
        }
    }

    #[test]
    fn box_mapping_clips_to_base() {
        let s = PyramidLevel::L2.scale();
        let b = s.box_to_base(PixelBox { xmin: 1, ymin: 0, xmax: 2, ymax: 1 }, 5, 3);
        assert_eq!(b, PixelBox { xmin: 2, ymin: 0, xmax: 4, ymax: 2 });
    }
}
