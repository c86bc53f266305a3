//! Any-resolution tiling: picks a patch grid for an arbitrary image, then
//! cuts the aspect-preserving resize of that image into base×base patches
//! plus an optional downsized global view.
//!
//! The grid rule is pinned exactly so plans are reproducible: among all
//! grids with `cols * rows <= max_patches`, minimize the padded (wasted)
//! area left after an aspect-preserving fit into the `cols*base x rows*base`
//! canvas; break ties by fewer patches, then by smaller |cols - rows|, then
//! by (rows, cols) ascending. Waste is compared in exact rational
//! arithmetic, never floats.

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Default patch edge, in pixels.
pub const BASE_RESOLUTION: u32 = 384;
/// Default cap on grid size (cols * rows).
pub const MAX_PATCHES: u32 = 9;
/// Default padding color for aspect mismatches.
pub const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];

/// Source image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ForgeError::InvalidDims(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }
}

/// Patch grid: `cols` across, `rows` down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: u32,
    pub rows: u32,
}

impl GridSpec {
    pub fn patch_count(&self) -> u32 {
        self.cols * self.rows
    }
}

/// Axis-aligned pixel rectangle, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

/// The tiling decision for one image. Boxes live in resized-canvas space
/// (`grid.cols * base` by `grid.rows * base`), row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub grid: GridSpec,
    pub patch_boxes: Vec<PixelBox>,
    pub include_global: bool,
    pub base_resolution: u32,
    pub source: ImageDims,
}

impl PatchPlan {
    /// Builds the row-major tiling plan for a given grid directly, without
    /// running grid selection. `include_global` follows the usual rule
    /// (true iff the grid has more than one patch).
    pub fn regular(grid: GridSpec, base: u32, source: ImageDims) -> Self {
        let mut patch_boxes = Vec::with_capacity(grid.patch_count() as usize);
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                patch_boxes.push(PixelBox {
                    x0: c * base,
                    y0: r * base,
                    x1: (c + 1) * base,
                    y1: (r + 1) * base,
                });
            }
        }
        Self {
            include_global: grid.patch_count() > 1,
            grid,
            patch_boxes,
            base_resolution: base,
            source,
        }
    }

    /// Canvas the source is resized into before cutting.
    pub fn canvas_dims(&self) -> ImageDims {
        ImageDims {
            width: self.grid.cols * self.base_resolution,
            height: self.grid.rows * self.base_resolution,
        }
    }

    /// Number of base×base buffers this plan encodes (patches + global).
    pub fn buffer_count(&self) -> usize {
        self.patch_boxes.len() + usize::from(self.include_global)
    }
}

/// Wasted canvas area for one candidate grid, as an exact fraction
/// `num / den` of square pixels. The aspect-preserving scale is
/// `s = min(W/w, H/h)` (upscaling allowed), so the fitted image covers
/// `s^2 * w * h` and the waste is `W*H - s^2*w*h`.
fn waste_fraction(cols: u32, rows: u32, dims: ImageDims, base: u32) -> (u128, u128) {
    let cw = cols as u128 * base as u128;
    let ch = rows as u128 * base as u128;
    let w = dims.width as u128;
    let h = dims.height as u128;
    if cw * h <= ch * w {
        // Width-limited: s = W/w, waste = W*(H*w - W*h)/w.
        (cw * (ch * w - cw * h), w)
    } else {
        // Height-limited: s = H/h, waste = H*(W*h - H*w)/h.
        (ch * (cw * h - ch * w), h)
    }
}

/// Chooses the patch grid for `dims` and lays out the tiling boxes.
pub fn plan_patches(dims: ImageDims, base: u32, max_patches: u32) -> Result<PatchPlan> {
    if dims.width == 0 || dims.height == 0 {
        return Err(ForgeError::InvalidDims(format!(
            "image dims must be positive, got {}x{}",
            dims.width, dims.height
        )));
    }
    if base < 16 {
        return Err(ForgeError::InvalidDims(format!(
            "base resolution must be at least 16, got {base}"
        )));
    }
    if max_patches < 1 {
        return Err(ForgeError::InvalidDims(
            "max_patches must be at least 1".into(),
        ));
    }

    let mut best: Option<(GridSpec, (u128, u128))> = None;
    for rows in 1..=max_patches {
        for cols in 1..=max_patches {
            if cols * rows > max_patches {
                continue;
            }
            let waste = waste_fraction(cols, rows, dims, base);
            let cand = GridSpec { cols, rows };
            let better = match &best {
                None => true,
                Some((g, w)) => {
                    // Exact cross-multiplied compare of waste fractions.
                    let lhs = waste.0 * w.1;
                    let rhs = w.0 * waste.1;
                    if lhs != rhs {
                        lhs < rhs
                    } else if cand.patch_count() != g.patch_count() {
                        cand.patch_count() < g.patch_count()
                    } else {
                        let da = cand.cols.abs_diff(cand.rows);
                        let db = g.cols.abs_diff(g.rows);
                        // Final (rows, cols) order: the scan already visits
                        // in that order, so strict inequality suffices.
                        da < db
                    }
                }
            };
            if better {
                best = Some((cand, waste));
            }
        }
    }
    let (grid, _) = best.expect("candidate set is never empty");
    Ok(PatchPlan::regular(grid, base, dims))
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expect = width as usize * height as usize * 3;
        if data.len() != expect {
            return Err(ForgeError::ShapeMismatch(format!(
                "RGB buffer for {width}x{height} needs {expect} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims {
            width: self.width,
            height: self.height,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Crops `bx` (must lie inside the image).
    pub fn crop(&self, bx: PixelBox) -> ImageBuffer {
        assert!(bx.x1 <= self.width && bx.y1 <= self.height, "crop bounds");
        let mut out = ImageBuffer::filled(bx.width(), bx.height(), [0, 0, 0]);
        for y in 0..bx.height() {
            for x in 0..bx.width() {
                out.set_pixel(x, y, self.pixel(bx.x0 + x, bx.y0 + y));
            }
        }
        out
    }
}

/// Bilinear resize with center-aligned sampling. Identity when dims match.
pub fn resize_bilinear(src: &ImageBuffer, dst_w: u32, dst_h: u32) -> ImageBuffer {
    if src.width == dst_w && src.height == dst_h {
        return src.clone();
    }
    let mut out = ImageBuffer::filled(dst_w, dst_h, [0, 0, 0]);
    let sx_ratio = src.width as f64 / dst_w as f64;
    let sy_ratio = src.height as f64 / dst_h as f64;
    for dy in 0..dst_h {
        let sy = ((dy as f64 + 0.5) * sy_ratio - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = sy.floor() as u32;
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dst_w {
            let sx = ((dx as f64 + 0.5) * sx_ratio - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = sx.floor() as u32;
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = sx - x0 as f64;
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let a = src.pixel(x0, y0)[ch] as f64;
                let b = src.pixel(x1, y0)[ch] as f64;
                let c = src.pixel(x0, y1)[ch] as f64;
                let d = src.pixel(x1, y1)[ch] as f64;
                let top = a + (b - a) * fx;
                let bot = c + (d - c) * fx;
                px[ch] = (top + (bot - top) * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(dx, dy, px);
        }
    }
    out
}

/// Aspect-preserving resize into `dst_w x dst_h`, centered, remainder filled
/// with `pad`. The scale is `min(dst_w/w, dst_h/h)`; upscaling is allowed.
pub fn resize_with_pad(src: &ImageBuffer, dst_w: u32, dst_h: u32, pad: [u8; 3]) -> ImageBuffer {
    let sx = dst_w as f64 / src.width as f64;
    let sy = dst_h as f64 / src.height as f64;
    let s = sx.min(sy);
    let fit_w = ((src.width as f64 * s).round() as u32).clamp(1, dst_w);
    let fit_h = ((src.height as f64 * s).round() as u32).clamp(1, dst_h);
    let fitted = resize_bilinear(src, fit_w, fit_h);
    let mut out = ImageBuffer::filled(dst_w, dst_h, pad);
    let off_x = (dst_w - fit_w) / 2;
    let off_y = (dst_h - fit_h) / 2;
    for y in 0..fit_h {
        for x in 0..fit_w {
            out.set_pixel(off_x + x, off_y + y, fitted.pixel(x, y));
        }
    }
    out
}

/// Cuts the planned patches out of `pixels`, appending the global view last
/// when the plan calls for one. Buffers come back grid-row-major, each
/// exactly base×base. Uses neutral-gray padding.
pub fn extract_patches(pixels: &ImageBuffer, plan: &PatchPlan) -> Result<Vec<ImageBuffer>> {
    extract_patches_with(pixels, plan, NEUTRAL_GRAY)
}

/// [`extract_patches`] with an explicit padding color.
pub fn extract_patches_with(
    pixels: &ImageBuffer,
    plan: &PatchPlan,
    pad: [u8; 3],
) -> Result<Vec<ImageBuffer>> {
    if pixels.dims() != plan.source {
        return Err(ForgeError::ShapeMismatch(format!(
            "buffer is {}x{} but plan was made for {}x{}",
            pixels.width, pixels.height, plan.source.width, plan.source.height
        )));
    }
    let canvas_dims = plan.canvas_dims();
    let canvas = resize_with_pad(pixels, canvas_dims.width, canvas_dims.height, pad);
    let mut out = Vec::with_capacity(plan.buffer_count());
    for bx in &plan.patch_boxes {
        out.push(canvas.crop(*bx));
    }
    if plan.include_global {
        out.push(resize_with_pad(
            pixels,
            plan.base_resolution,
            plan.base_resolution,
            pad,
        ));
    }
    Ok(out)
}
