//! Slide storage: tiled containers, tissue masks, patch sampling, 2x
//! downsampling, multi-crop views and JSON-lines patch manifests.

mod container;
mod crops;
mod image;
mod tissue;

pub use container::{Magnification, SlideContainer, HEADER_LEN, MAGIC, TILE_SIZES, VERSION};
pub use crops::{make_crop_set, AugOp, CropConfig, CropSet, View, ViewConfig, MIN_SOURCE_SIDE};
pub use image::RgbImage;
pub use tissue::{sample_patches, tissue_mask, PatchRef, TissueMask, TissueParams};

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("pixel buffer holds {got} bytes, expected {want}")]
    PixelBufferLength { want: usize, got: usize },
    #[error("tile size {0} not in {TILE_SIZES:?}")]
    BadTileSize(u32),
    #[error("container dimensions {width}x{height} invalid for tile size {tile_size}")]
    BadDimensions { width: u32, height: u32, tile_size: u32 },
    #[error("bad container magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported pixel format {0}")]
    UnsupportedPixelFormat(u8),
    #[error("container has {got} bytes, expected {want}")]
    Truncated { want: usize, got: usize },
    #[error("tile ({tx}, {ty}) outside {cols}x{rows} grid")]
    TileOutOfRange { tx: u32, ty: u32, cols: u32, rows: u32 },
    #[error("region {w}x{h} at ({x}, {y}) out of bounds")]
    RegionOutOfBounds { x: u32, y: u32, w: u32, h: u32 },
    #[error("odd dimensions {width}x{height} cannot be halved")]
    OddDimensions { width: u32, height: u32 },
    #[error("patch side {side} and tile size {tile_size} must divide one another")]
    IncompatiblePatchSide { side: u32, tile_size: u32 },
    #[error("source {width}x{height} smaller than {min} pixels")]
    SourceTooSmall { width: u32, height: u32, min: u32 },
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes one JSON object per patch.
pub fn write_manifest(mut out: impl Write, patches: &[PatchRef]) -> Result<(), SlideError> {
    for p in patches {
        let line = serde_json::to_string(p).map_err(|e| SlideError::Manifest { line: 0, source: e })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a JSON-lines manifest, skipping blank lines.
pub fn read_manifest(input: impl BufRead) -> Result<Vec<PatchRef>, SlideError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SlideError::Manifest { line: i + 1, source: e })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_with_optional_label() {
        let patches = vec![
            PatchRef {
                id: "a_0_0_256".into(),
                slide: "a".into(),
                x: 0,
                y: 0,
                side: 256,
                mag: Magnification::X20,
                label: None,
            },
            PatchRef {
                id: "a_256_0_256".into(),
                slide: "a".into(),
                x: 256,
                y: 0,
                side: 256,
                mag: Magnification::X10,
                label: Some("tumor".into()),
            },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &patches).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains(r#""mag":"20x""#));
        assert!(!text.lines().next().unwrap().contains("label"));
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), patches);
    }

    #[test]
    fn malformed_manifest_line_reports_line_number() {
        let err = read_manifest("\n{\"id\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SlideError::Manifest { line: 2, .. }));
    }
}
