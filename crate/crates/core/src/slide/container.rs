//! Tiled slide container.
//!
//! Layout, little-endian: `b"PTHS"`, `u32` version, `u32` width, `u32`
//! height, `u32` tile size, `u8` pixel format (0 = RGB8), then every tile in
//! row-major grid order, each `tile_size * tile_size * 3` bytes of row-major
//! RGB. Width and height are stored padded to tile multiples; padding is
//! white.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RgbImage, SlideError};

pub const MAGIC: &[u8; 4] = b"PTHS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;
pub const TILE_SIZES: [u32; 4] = [64, 128, 256, 512];
const PIXEL_FORMAT_RGB8: u8 = 0;
const PAD: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "20x")]
    X20,
    #[serde(rename = "10x")]
    X10,
}

impl std::fmt::Display for Magnification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::X20 => "20x",
            Self::X10 => "10x",
        })
    }
}

/// Tile grid of a slide. The magnification tag lives in memory and in patch
/// manifests; the file header does not carry it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlideContainer {
    width: u32,
    height: u32,
    tile_size: u32,
    magnification: Magnification,
    tiles: Vec<u8>,
}

impl SlideContainer {
    /// Tiles `image`, padding the right and bottom edges with white.
    pub fn from_image(image: &RgbImage, tile_size: u32, magnification: Magnification) -> Result<Self, SlideError> {
        check_tile_size(tile_size)?;
        let (cols, rows) = (image.width().div_ceil(tile_size), image.height().div_ceil(tile_size));
        let ts = tile_size as usize;
        let mut tiles = Vec::with_capacity(cols as usize * rows as usize * ts * ts * 3);
        for ty in 0..rows {
            for tx in 0..cols {
                for py in 0..tile_size {
                    let y = ty * tile_size + py;
                    let x0 = tx * tile_size;
                    if y >= image.height() || x0 >= image.width() {
                        tiles.resize(tiles.len() + ts * 3, PAD);
                        continue;
                    }
                    let inside = (image.width() - x0).min(tile_size) as usize;
                    let start = (y as usize * image.width() as usize + x0 as usize) * 3;
                    tiles.extend_from_slice(&image.data()[start..start + inside * 3]);
                    tiles.resize(tiles.len() + (ts - inside) * 3, PAD);
                }
            }
        }
        Ok(Self { width: cols * tile_size, height: rows * tile_size, tile_size, magnification, tiles })
    }

    /// Padded width.
    pub fn width(&self) -> u32 {
        self.width
    }

    /// Padded height.
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn tile_size(&self) -> u32 {
        self.tile_size
    }

    pub fn magnification(&self) -> Magnification {
        self.magnification
    }

    /// `(columns, rows)` of the tile grid.
    pub fn grid(&self) -> (u32, u32) {
        (self.width / self.tile_size, self.height / self.tile_size)
    }

    fn tile_bytes(&self) -> usize {
        let ts = self.tile_size as usize;
        ts * ts * 3
    }

    /// Raw bytes of tile `(tx, ty)`.
    pub fn tile(&self, tx: u32, ty: u32) -> Result<&[u8], SlideError> {
        let (cols, rows) = self.grid();
        if tx >= cols || ty >= rows {
            return Err(SlideError::TileOutOfRange { tx, ty, cols, rows });
        }
        let n = self.tile_bytes();
        let i = (ty as usize * cols as usize + tx as usize) * n;
        Ok(&self.tiles[i..i + n])
    }

    pub fn tile_image(&self, tx: u32, ty: u32) -> Result<RgbImage, SlideError> {
        RgbImage::new(self.tile_size, self.tile_size, self.tile(tx, ty)?.to_vec())
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let ts = self.tile_size;
        let (cols, _) = self.grid();
        let tile = (y / ts) as usize * cols as usize + (x / ts) as usize;
        let i = tile * self.tile_bytes() + (((y % ts) * ts + x % ts) * 3) as usize;
        [self.tiles[i], self.tiles[i + 1], self.tiles[i + 2]]
    }

    /// Pixel region `w x h` at `(x, y)` assembled across tiles.
    pub fn region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<RgbImage, SlideError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(SlideError::RegionOutOfBounds { x, y, w, h });
        }
        RgbImage::from_fn(w, h, |dx, dy| self.pixel(x + dx, y + dy))
    }

    /// Full padded raster.
    pub fn to_image(&self) -> RgbImage {
        self.region(0, 0, self.width, self.height).expect("whole slide is in bounds")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.tiles.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.width, self.height, self.tile_size] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(PIXEL_FORMAT_RGB8);
        out.extend_from_slice(&self.tiles);
        out
    }

    pub fn from_bytes(bytes: &[u8], magnification: Magnification) -> Result<Self, SlideError> {
        if bytes.len() < HEADER_LEN {
            return Err(SlideError::Truncated { want: HEADER_LEN, got: bytes.len() });
        }
        if &bytes[..4] != MAGIC {
            return Err(SlideError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(SlideError::UnsupportedVersion(version));
        }
        let (width, height, tile_size) = (u32_at(8), u32_at(12), u32_at(16));
        if bytes[20] != PIXEL_FORMAT_RGB8 {
            return Err(SlideError::UnsupportedPixelFormat(bytes[20]));
        }
        check_tile_size(tile_size)?;
        if width == 0 || height == 0 || width % tile_size != 0 || height % tile_size != 0 {
            return Err(SlideError::BadDimensions { width, height, tile_size });
        }
        let want = HEADER_LEN + width as usize * height as usize * 3;
        if bytes.len() != want {
            return Err(SlideError::Truncated { want, got: bytes.len() });
        }
        Ok(Self { width, height, tile_size, magnification, tiles: bytes[HEADER_LEN..].to_vec() })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SlideError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path, magnification: Magnification) -> Result<Self, SlideError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, magnification)
    }

    /// Halves both dimensions with a rounded 2x2 box mean and tags the result
    /// 10x. The tile size halves too while it stays at least 64, so the tile
    /// grid is preserved; at tile size 64 the grid is re-padded instead.
    pub fn downsample_2x(&self) -> Result<Self, SlideError> {
        let half = self.to_image().downsample_2x()?;
        let ts = if self.tile_size >= 128 { self.tile_size / 2 } else { self.tile_size };
        Self::from_image(&half, ts, Magnification::X10)
    }
}

fn check_tile_size(tile_size: u32) -> Result<(), SlideError> {
    if TILE_SIZES.contains(&tile_size) {
        Ok(())
    } else {
        Err(SlideError::BadTileSize(tile_size))
    }
}
