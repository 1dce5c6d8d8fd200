//! Map drawing.
//!
//! Segments are straight lines between country points, drawn over a copy of
//! the base map in ascending occurrence order so heavy links end on top.
//! Output is PNG (opaque, unantialiased strokes) or SVG (the base map
//! embedded as a data URI, one `<path>` per segment). Both are
//! deterministic for identical inputs.

mod names;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use base64::Engine as _;
use image::{ImageFormat, Rgba, RgbaImage};
use thiserror::Error;

use crate::pathmap::{MplsKind, Segment, SegmentSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    fn from_u32(v: u32) -> Self {
        Rgb((v >> 16) as u8, (v >> 8) as u8, v as u8)
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

impl FromStr for Rgb {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        resolve_color(s)
    }
}

/// HTML color name (case-insensitive) or `#RRGGBB`.
pub fn resolve_color(name: &str) -> Result<Rgb, RenderError> {
    let bad = || RenderError::BadColor(name.to_string());
    if let Some(hex) = name.strip_prefix('#') {
        if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad());
        }
        return u32::from_str_radix(hex, 16)
            .map(Rgb::from_u32)
            .map_err(|_| bad());
    }
    let lower = name.to_ascii_lowercase();
    names::NAMED
        .binary_search_by(|(n, _)| (*n).cmp(lower.as_str()))
        .map(|i| Rgb::from_u32(names::NAMED[i].1))
        .map_err(|_| bad())
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot read base map {path}: {source}")]
    MissingMap {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("base map is not a readable PNG: {0}")]
    BadMap(#[source] image::ImageError),
    #[error("segment {a}-{b} endpoint ({x}, {y}) lies outside the {width}x{height} map")]
    OutOfBounds {
        a: String,
        b: String,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("unknown color {0:?}")]
    BadColor(String),
    #[error("invalid thickness range {min}..{max}")]
    BadThickness { min: u32, max: u32 },
    #[error("writing map: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding map: {0}")]
    Encode(#[source] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Png,
    Svg,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Png => "png",
            OutputFormat::Svg => "svg",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(OutputFormat::Png),
            "svg" => Ok(OutputFormat::Svg),
            _ => Err(format!("unknown output format {s:?} (expected png or svg)")),
        }
    }
}

/// A decoded base map together with its original PNG bytes.
#[derive(Clone)]
pub struct BaseMap {
    png: Arc<[u8]>,
    image: Arc<RgbaImage>,
}

impl fmt::Debug for BaseMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BaseMap")
            .field("width", &self.width())
            .field("height", &self.height())
            .finish()
    }
}

impl BaseMap {
    pub fn from_png(bytes: Vec<u8>) -> Result<Self, RenderError> {
        let image = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
            .map_err(RenderError::BadMap)?
            .to_rgba8();
        Ok(BaseMap {
            png: bytes.into(),
            image: Arc::new(image),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RenderError> {
        let bytes = std::fs::read(path).map_err(|source| RenderError::MissingMap {
            path: path.to_path_buf(),
            source,
        })?;
        BaseMap::from_png(bytes)
    }

    /// Plain canvas of one color, for tests and fallbacks.
    pub fn blank(width: u32, height: u32, color: Rgb) -> Self {
        let image = RgbaImage::from_pixel(width, height, Rgba([color.0, color.1, color.2, 255]));
        let mut png = Vec::new();
        image
            .write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png)
            .expect("in-memory PNG encoding");
        BaseMap {
            png: png.into(),
            image: Arc::new(image),
        }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn image(&self) -> &RgbaImage {
        &self.image
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderConfig {
    pub line_color: Rgb,
    pub mpls_explicit_color: Rgb,
    pub mpls_invisible_color: Rgb,
    /// thickness proportional to occurrences
    pub proportional: bool,
    pub min_thickness: u32,
    pub max_thickness: u32,
    pub format: OutputFormat,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            line_color: Rgb(0, 0, 255),
            mpls_explicit_color: Rgb(255, 0, 0),
            mpls_invisible_color: Rgb(255, 165, 0),
            proportional: false,
            min_thickness: 2,
            max_thickness: 12,
            format: OutputFormat::Png,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.min_thickness == 0 || self.min_thickness > self.max_thickness {
            return Err(RenderError::BadThickness {
                min: self.min_thickness,
                max: self.max_thickness,
            });
        }
        Ok(())
    }

    pub fn color_of(&self, kind: MplsKind) -> Rgb {
        match kind {
            MplsKind::None => self.line_color,
            MplsKind::Explicit => self.mpls_explicit_color,
            MplsKind::InvisibleCandidate => self.mpls_invisible_color,
        }
    }

    /// `min + round(occ / max_occ * (max - min))` when proportional.
    pub fn thickness(&self, occurrences: u64, max_occurrences: u64) -> u32 {
        if !self.proportional || max_occurrences == 0 {
            return self.min_thickness;
        }
        let span = (self.max_thickness - self.min_thickness) as u128;
        let (occ, max) = (occurrences as u128, max_occurrences as u128);
        self.min_thickness + ((2 * occ * span + max) / (2 * max)) as u32
    }
}

/// Segments in drawing order with their resolved stroke.
fn strokes<'a>(
    set: &'a SegmentSet,
    map: &BaseMap,
    cfg: &RenderConfig,
) -> Result<Vec<(&'a Segment, u32, Rgb)>, RenderError> {
    cfg.validate()?;
    let (width, height) = (map.width(), map.height());
    for seg in set.iter() {
        for p in [seg.a, seg.b] {
            if p.x >= width || p.y >= height {
                return Err(RenderError::OutOfBounds {
                    a: seg.a.country.to_string(),
                    b: seg.b.country.to_string(),
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
        }
    }
    let max = set.iter().map(|s| s.occurrences).max().unwrap_or(0);
    let mut out: Vec<_> = set
        .iter()
        .map(|s| (s, cfg.thickness(s.occurrences, max), cfg.color_of(s.mpls)))
        .collect();
    // stable: equal occurrences keep country-pair order
    out.sort_by_key(|(s, _, _)| s.occurrences);
    Ok(out)
}

pub fn render_png(
    set: &SegmentSet,
    map: &BaseMap,
    cfg: &RenderConfig,
) -> Result<RgbaImage, RenderError> {
    let strokes = strokes(set, map, cfg)?;
    let mut img = (*map.image).clone();
    for (seg, thickness, color) in strokes {
        draw_line(
            &mut img,
            (seg.a.x, seg.a.y),
            (seg.b.x, seg.b.y),
            thickness,
            color,
        );
    }
    Ok(img)
}

pub fn render_svg(
    set: &SegmentSet,
    map: &BaseMap,
    cfg: &RenderConfig,
) -> Result<String, RenderError> {
    use std::fmt::Write as _;
    let strokes = strokes(set, map, cfg)?;
    let (w, h) = (map.width(), map.height());
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(
        out,
        "<image x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" href=\"data:image/png;base64,{}\"/>",
        base64::engine::general_purpose::STANDARD.encode(&map.png)
    )
    .unwrap();
    out.push_str("<g fill=\"none\" stroke-linecap=\"round\">\n");
    for (seg, thickness, color) in strokes {
        writeln!(
            out,
            "<path d=\"M{} {} L{} {}\" stroke=\"{color}\" stroke-width=\"{thickness}\" data-link=\"{}-{}\" data-occurrences=\"{}\"/>",
            seg.a.x, seg.a.y, seg.b.x, seg.b.y, seg.a.country, seg.b.country, seg.occurrences
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Renders `set` and writes it to `out` in `cfg.format`.
pub fn render_map(
    set: &SegmentSet,
    map: &BaseMap,
    cfg: &RenderConfig,
    out: &Path,
) -> Result<(), RenderError> {
    match cfg.format {
        OutputFormat::Png => render_png(set, map, cfg)?
            .save_with_format(out, ImageFormat::Png)
            .map_err(RenderError::Encode),
        OutputFormat::Svg => Ok(std::fs::write(out, render_svg(set, map, cfg)?)?),
    }
}

/// Capsule of diameter `thickness` around the segment, pixel centers on
/// integer coordinates.
fn draw_line(img: &mut RgbaImage, from: (u32, u32), to: (u32, u32), thickness: u32, color: Rgb) {
    let px = Rgba([color.0, color.1, color.2, 255]);
    let r = thickness as f64 / 2.0;
    let r2 = r * r;
    let (ax, ay) = (from.0 as f64, from.1 as f64);
    let (bx, by) = (to.0 as f64, to.1 as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let len = len2.sqrt();

    let (w, h) = (img.width() as i64, img.height() as i64);
    let x_lo = (ax.min(bx) - r).floor().max(0.0) as i64;
    let x_hi = ((ax.max(bx) + r).ceil() as i64).min(w - 1);
    let y_lo = (ay.min(by) - r).floor().max(0.0) as i64;
    let y_hi = ((ay.max(by) + r).ceil() as i64).min(h - 1);

    let inside = |x: f64, y: f64| {
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (ax + t * dx - x, ay + t * dy - y);
        cx * cx + cy * cy <= r2
    };

    for y in y_lo..=y_hi {
        let fy = y as f64;
        // columns where the infinite band |cross| <= r * len meets this row
        let (mut lo, mut hi) = (x_lo, x_hi);
        if dy != 0.0 {
            let c = dx * (fy - ay);
            let e1 = ax + (c - r * len) / dy;
            let e2 = ax + (c + r * len) / dy;
            lo = lo.max(e1.min(e2).floor() as i64 - 1);
            hi = hi.min(e1.max(e2).ceil() as i64 + 1);
        }
        for x in lo..=hi {
            if inside(x as f64, fy) {
                img.put_pixel(x as u32, y as u32, px);
            }
        }
    }
}
