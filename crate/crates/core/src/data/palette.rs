//! Class palettes and PNG reading/writing for images and label maps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};

/// Colour table indexed by class id (0 = no change).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn new(names: Vec<String>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if names.len() != colors.len() || colors.is_empty() || colors.len() > 256 {
            return Err(ScdError::Config(format!(
                "palette needs 1..=256 entries with one name each, got {} colours / {} names",
                colors.len(),
                names.len()
            )));
        }
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(ScdError::Config(format!("palette colour {c:?} used twice")));
            }
        }
        Ok(Self { names, colors })
    }

    fn named(entries: &[(&str, [u8; 3])]) -> Self {
        Self::new(
            entries.iter().map(|(n, _)| n.to_string()).collect(),
            entries.iter().map(|(_, c)| *c).collect(),
        )
        .expect("built-in palette")
    }

    pub fn second() -> Self {
        Self::named(&[
            ("unchanged", [255, 255, 255]),
            ("water", [0, 0, 255]),
            ("ground", [128, 128, 128]),
            ("low vegetation", [0, 128, 0]),
            ("tree", [0, 255, 0]),
            ("building", [128, 0, 0]),
            ("sports field", [255, 0, 0]),
        ])
    }

    pub fn landsat_scd() -> Self {
        Self::named(&[
            ("unchanged", [255, 255, 255]),
            ("farmland", [0, 155, 0]),
            ("desert", [255, 165, 0]),
            ("building", [230, 30, 100]),
            ("water", [0, 170, 240]),
        ])
    }

    /// Distinct colours for generated data with `n` ids.
    pub fn synthetic(n: usize) -> Self {
        let base: [[u8; 3]; 12] = [
            [255, 255, 255],
            [34, 139, 34],
            [160, 82, 45],
            [70, 130, 180],
            [220, 20, 60],
            [255, 215, 0],
            [128, 0, 128],
            [0, 206, 209],
            [255, 140, 0],
            [105, 105, 105],
            [173, 255, 47],
            [0, 0, 128],
        ];
        let colors: Vec<[u8; 3]> = (0..n)
            .map(|i| if i < base.len() { base[i] } else { [(i * 37 % 256) as u8, (i * 91 % 256) as u8, (i * 53 % 256) as u8] })
            .collect();
        let names = (0..n)
            .map(|i| if i == 0 { "unchanged".to_string() } else { format!("class{i}") })
            .collect();
        Self::new(names, colors).expect("distinct synthetic colours")
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn id_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|&c| c == rgb).map(|i| i as u8)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScdError::io(path, e))?;
        let p: Palette = serde_json::from_str(&text).map_err(|e| ScdError::data(path, e.to_string()))?;
        Self::new(p.names, p.colors).map_err(|e| ScdError::data(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("palette serialises");
        std::fs::write(path, text).map_err(|e| ScdError::io(path, e))
    }
}

/// Decoded 8-bit RGB raster.
struct Rgb {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

fn read_rgb(path: &Path) -> Result<Rgb> {
    let file = File::open(path).map_err(|e| ScdError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let derr = |e: png::DecodingError| ScdError::data(path, e.to_string());
    let mut reader = decoder.read_info().map_err(derr)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ScdError::data(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(derr)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(ScdError::data(path, "palette was not expanded")),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            if channels < 3 {
                data.extend_from_slice(&[px[0]; 3]);
            } else {
                data.extend_from_slice(&px[..3]);
            }
        }
    }
    Ok(Rgb {
        width: w,
        height: h,
        data,
    })
}

/// Reads an RGB image as planar `(3, H, W)` values in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let rgb = read_rgb(path)?;
    let n = rgb.width * rgb.height;
    let mut out = vec![0.0; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            out[c * n + p] = rgb.data[3 * p + c] as f64 / 255.0;
        }
    }
    Ok((rgb.height, rgb.width, out))
}

/// Writes planar `(3, H, W)` values in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_image(path: &Path, height: usize, width: usize, planar: &[f64]) -> Result<()> {
    let n = height * width;
    let mut bytes = vec![0u8; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            bytes[3 * p + c] = (planar[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    write_png(path, width, height, png::ColorType::Rgb, None, &bytes)
}

/// Reads a label map (indexed or RGB PNG), mapping colours to ids.
pub fn read_label(path: &Path, palette: &Palette) -> Result<(usize, usize, Vec<u8>)> {
    let rgb = read_rgb(path)?;
    let mut ids = Vec::with_capacity(rgb.width * rgb.height);
    for (p, px) in rgb.data.chunks_exact(3).enumerate() {
        let c = [px[0], px[1], px[2]];
        let id = palette.id_of(c).ok_or_else(|| {
            ScdError::data(
                path,
                format!("unknown colour {c:?} at pixel ({}, {})", p / rgb.width, p % rgb.width),
            )
        })?;
        ids.push(id);
    }
    Ok((rgb.height, rgb.width, ids))
}

/// Writes a label map as an 8-bit indexed PNG carrying `palette`.
pub fn write_label(path: &Path, height: usize, width: usize, ids: &[u8], palette: &Palette) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= palette.len()) {
        return Err(ScdError::data(path, format!("label {bad} has no palette colour")));
    }
    let table: Vec<u8> = palette.colors.iter().flatten().copied().collect();
    write_png(path, width, height, png::ColorType::Indexed, Some(table), ids)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| ScdError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let eerr = |e: png::EncodingError| ScdError::data(path, e.to_string());
    let mut writer = enc.write_header().map_err(eerr)?;
    writer.write_image_data(data).map_err(eerr)?;
    writer.finish().map_err(eerr)
}
