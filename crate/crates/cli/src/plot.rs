//! Static PNG rendering for inspection panels and evaluation figures:
//! relation-matrix heatmaps, 2D skeleton overlays, orthographic 3D pose
//! views, and PCK curves. Everything is drawn onto a plain RGB canvas with
//! integer primitives — no plotting dependency, no text beyond a small
//! built-in digit font for axis ticks.

use anyhow::{Context, Result};
use handgcn::evalkit::PckCurve;
use handgcn::skeleton::{HandPose2D, HandPose3D, BONES, NUM_JOINTS};
use ndarray::{Array3, ArrayView2};
use std::path::Path;

pub type Color = [u8; 3];

const BACKGROUND: Color = [250, 250, 248];
const AXIS: Color = [60, 60, 60];
const GRID: Color = [215, 215, 215];
const GT_COLOR: Color = [120, 120, 120];
const CURVE_COLOR: Color = [200, 60, 40];

/// Per-finger colors: thumb, index, middle, ring, pinky.
const FINGER_COLORS: [Color; 5] = [
    [230, 60, 50],
    [60, 170, 60],
    [50, 100, 230],
    [235, 160, 40],
    [160, 70, 200],
];
const WRIST_COLOR: Color = [20, 20, 20];

fn joint_color(joint: usize) -> Color {
    if joint == 0 {
        WRIST_COLOR
    } else {
        FINGER_COLORS[(joint - 1) / 4]
    }
}

fn bone_color(parent: usize, child: usize) -> Color {
    // The wrist→mcp bone takes the finger's color.
    joint_color(child.max(parent))
}

// ---------------------------------------------------------------------------
// Canvas
// ---------------------------------------------------------------------------

pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Color) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&fill);
        }
        Canvas {
            width,
            height,
            pixels,
        }
    }

    /// Builds a canvas from a (3, H, W) float image in [0, 1].
    pub fn from_image(image: &Array3<f64>) -> Self {
        let (_, height, width) = image.dim();
        let mut canvas = Canvas::new(width, height, [0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                let pixel = [
                    (image[[0, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (image[[1, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (image[[2, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                canvas.set(x as i64, y as i64, pixel);
            }
        }
        canvas
    }

    pub fn set(&mut self, x: i64, y: i64, color: Color) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let base = (y as usize * self.width + x as usize) * 3;
        self.pixels[base..base + 3].copy_from_slice(&color);
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, color: Color) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, color);
            }
        }
    }

    /// Bresenham line.
    pub fn line(&mut self, mut x0: i64, mut y0: i64, x1: i64, y1: i64, color: Color) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, color);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let doubled = 2 * err;
            if doubled >= dy {
                err += dy;
                x0 += sx;
            }
            if doubled <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn disk(&mut self, cx: i64, cy: i64, radius: i64, color: Color) {
        for y in cy - radius..=cy + radius {
            for x in cx - radius..=cx + radius {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy <= radius * radius {
                    self.set(x, y, color);
                }
            }
        }
    }

    /// Draws digits/dot at 1 px per font cell times `scale`.
    pub fn text(&mut self, x: i64, y: i64, text: &str, scale: i64, color: Color) {
        let mut cursor = x;
        for ch in text.chars() {
            if let Some(glyph) = glyph(ch) {
                for (row, bits) in glyph.iter().enumerate() {
                    for col in 0..4 {
                        if bits & (0b1000 >> col) != 0 {
                            self.fill_rect(
                                cursor + col as i64 * scale,
                                y + row as i64 * scale,
                                scale,
                                scale,
                                color,
                            );
                        }
                    }
                }
            }
            cursor += 5 * scale;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let image = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .context("canvas buffer size mismatch")?;
        image
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// 4×6 bitmaps for '0'-'9' and '.', one nibble per row.
fn glyph(ch: char) -> Option<[u8; 6]> {
    let rows = match ch {
        '0' => [0b0110, 0b1001, 0b1001, 0b1001, 0b1001, 0b0110],
        '1' => [0b0010, 0b0110, 0b0010, 0b0010, 0b0010, 0b0111],
        '2' => [0b0110, 0b1001, 0b0001, 0b0010, 0b0100, 0b1111],
        '3' => [0b1110, 0b0001, 0b0110, 0b0001, 0b0001, 0b1110],
        '4' => [0b1001, 0b1001, 0b1111, 0b0001, 0b0001, 0b0001],
        '5' => [0b1111, 0b1000, 0b1110, 0b0001, 0b0001, 0b1110],
        '6' => [0b0110, 0b1000, 0b1110, 0b1001, 0b1001, 0b0110],
        '7' => [0b1111, 0b0001, 0b0010, 0b0010, 0b0100, 0b0100],
        '8' => [0b0110, 0b1001, 0b0110, 0b1001, 0b1001, 0b0110],
        '9' => [0b0110, 0b1001, 0b1001, 0b0111, 0b0001, 0b0110],
        '.' => [0b0000, 0b0000, 0b0000, 0b0000, 0b0000, 0b0100],
        _ => return None,
    };
    Some(rows)
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

const HEATMAP_CELL: usize = 14;

/// Renders a J×J matrix with one square per entry; values are clamped to
/// [0, 1] and darken toward 1.
pub fn save_heatmap(path: &Path, matrix: ArrayView2<f64>) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let width = cols * HEATMAP_CELL + 1;
    let height = rows * HEATMAP_CELL + 1;
    let mut canvas = Canvas::new(width, height, GRID);
    for i in 0..rows {
        for j in 0..cols {
            let v = matrix[[i, j]].clamp(0.0, 1.0);
            // 1 → saturated blue-black, 0 → near-white.
            let shade = |lo: f64, hi: f64| (hi + (lo - hi) * v).round() as u8;
            let color = [shade(25.0, 246.0), shade(60.0, 246.0), shade(120.0, 246.0)];
            canvas.fill_rect(
                (j * HEATMAP_CELL + 1) as i64,
                (i * HEATMAP_CELL + 1) as i64,
                HEATMAP_CELL as i64 - 1,
                HEATMAP_CELL as i64 - 1,
                color,
            );
        }
    }
    canvas.save(path)
}

fn draw_pose_2d(canvas: &mut Canvas, points: &[[f64; 2]; NUM_JOINTS], as_gt: bool) {
    for &(parent, child) in &BONES {
        let color = if as_gt {
            GT_COLOR
        } else {
            bone_color(parent, child)
        };
        let a = points[parent];
        let b = points[child];
        canvas.line(
            a[0].round() as i64,
            a[1].round() as i64,
            b[0].round() as i64,
            b[1].round() as i64,
            color,
        );
    }
    for (j, p) in points.iter().enumerate() {
        let color = if as_gt { GT_COLOR } else { joint_color(j) };
        let radius = if as_gt { 1 } else { 2 };
        canvas.disk(p[0].round() as i64, p[1].round() as i64, radius, color);
    }
}

/// Input crop with the predicted skeleton in finger colors and an optional
/// ground-truth skeleton in gray underneath.
pub fn save_skeleton_2d(
    path: &Path,
    image: &Array3<f64>,
    pred: &HandPose2D,
    gt: Option<&HandPose2D>,
) -> Result<()> {
    let mut canvas = Canvas::from_image(image);
    if let Some(gt) = gt {
        let points = std::array::from_fn(|j| gt.joint(j));
        draw_pose_2d(&mut canvas, &points, true);
    }
    let points = std::array::from_fn(|j| pred.joint(j));
    draw_pose_2d(&mut canvas, &points, false);
    canvas.save(path)
}

/// Saves the raw input crop.
pub fn save_image(path: &Path, image: &Array3<f64>) -> Result<()> {
    Canvas::from_image(image).save(path)
}

const POSE3D_SIZE: usize = 360;

/// Fixed orthographic view: rotate about the vertical axis, then tilt, then
/// drop depth. Poses are normalized units, so a fixed scale fits the frame.
fn project_ortho(p: [f64; 3]) -> [f64; 2] {
    let (azimuth, elevation) = (0.6f64, 0.35f64);
    let (ca, sa) = (azimuth.cos(), azimuth.sin());
    let (ce, se) = (elevation.cos(), elevation.sin());
    let x1 = ca * p[0] + sa * p[2];
    let z1 = -sa * p[0] + ca * p[2];
    let y1 = ce * p[1] - se * z1;
    let half = POSE3D_SIZE as f64 / 2.0;
    // ~±2.4 normalized units across the frame.
    let scale = POSE3D_SIZE as f64 / 4.8;
    [half + x1 * scale, half + y1 * scale]
}

/// Orthographic render of a normalized 3D pose (plus optional gray ground
/// truth) with the finger color scheme of the 2D overlay.
pub fn save_pose_3d(path: &Path, pred: &HandPose3D, gt: Option<&HandPose3D>) -> Result<()> {
    let mut canvas = Canvas::new(POSE3D_SIZE, POSE3D_SIZE, BACKGROUND);
    if let Some(gt) = gt {
        let points = std::array::from_fn(|j| project_ortho(gt.joint(j)));
        draw_pose_2d(&mut canvas, &points, true);
    }
    let points = std::array::from_fn(|j| project_ortho(pred.joint(j)));
    draw_pose_2d(&mut canvas, &points, false);
    canvas.save(path)
}

const PCK_WIDTH: usize = 480;
const PCK_HEIGHT: usize = 360;
const PCK_MARGIN: i64 = 36;

/// PCK-vs-threshold line chart with tick labels on both axes.
pub fn save_pck_curve(path: &Path, curve: &PckCurve) -> Result<()> {
    anyhow::ensure!(
        curve.thresholds.len() == curve.values.len() && curve.thresholds.len() >= 2,
        "curve needs matching thresholds and values"
    );
    let mut canvas = Canvas::new(PCK_WIDTH, PCK_HEIGHT, BACKGROUND);
    let x_min = curve.thresholds[0];
    let x_max = *curve.thresholds.last().expect("nonempty");
    let plot_w = PCK_WIDTH as i64 - 2 * PCK_MARGIN;
    let plot_h = PCK_HEIGHT as i64 - 2 * PCK_MARGIN;
    let to_px = |t: f64, v: f64| -> (i64, i64) {
        let x = PCK_MARGIN + ((t - x_min) / (x_max - x_min) * plot_w as f64).round() as i64;
        let y = PCK_HEIGHT as i64 - PCK_MARGIN - (v.clamp(0.0, 1.0) * plot_h as f64).round() as i64;
        (x, y)
    };

    // Horizontal grid + y tick labels at 0, 0.25, 0.5, 0.75, 1.
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let (_, y) = to_px(x_min, v);
        canvas.line(PCK_MARGIN, y, PCK_WIDTH as i64 - PCK_MARGIN, y, GRID);
        canvas.text(2, y - 3, &format!("{v:.2}"), 1, AXIS);
    }
    // Vertical grid + x tick labels every 5 units of threshold.
    let mut t = x_min;
    while t <= x_max + 1e-9 {
        let (x, _) = to_px(t, 0.0);
        canvas.line(x, PCK_MARGIN, x, PCK_HEIGHT as i64 - PCK_MARGIN, GRID);
        canvas.text(
            x - 5,
            PCK_HEIGHT as i64 - PCK_MARGIN + 6,
            &format!("{t:.0}"),
            1,
            AXIS,
        );
        t += 5.0;
    }
    // Axes.
    canvas.line(
        PCK_MARGIN,
        PCK_MARGIN,
        PCK_MARGIN,
        PCK_HEIGHT as i64 - PCK_MARGIN,
        AXIS,
    );
    canvas.line(
        PCK_MARGIN,
        PCK_HEIGHT as i64 - PCK_MARGIN,
        PCK_WIDTH as i64 - PCK_MARGIN,
        PCK_HEIGHT as i64 - PCK_MARGIN,
        AXIS,
    );
    // The curve itself, with point markers.
    for pair in curve.thresholds.iter().zip(&curve.values).collect::<Vec<_>>().windows(2) {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        let (x0, y0) = to_px(*t0, *v0);
        let (x1, y1) = to_px(*t1, *v1);
        canvas.line(x0, y0, x1, y1, CURVE_COLOR);
    }
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        let (x, y) = to_px(*t, *v);
        canvas.disk(x, y, 2, CURVE_COLOR);
    }
    canvas.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn heatmap_dimensions_follow_the_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut matrix = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        for j in 0..NUM_JOINTS {
            matrix[[j, j]] = 1.0;
        }
        save_heatmap(&path, matrix.view()).unwrap();
        let loaded = image::open(&path).unwrap().to_rgb8();
        assert_eq!(
            loaded.dimensions(),
            (
                (NUM_JOINTS * HEATMAP_CELL + 1) as u32,
                (NUM_JOINTS * HEATMAP_CELL + 1) as u32
            )
        );
        // Diagonal cells are dark, off-diagonal cells near white.
        let on = loaded.get_pixel(HEATMAP_CELL as u32 / 2, HEATMAP_CELL as u32 / 2);
        let off = loaded.get_pixel(HEATMAP_CELL as u32 + HEATMAP_CELL as u32 / 2, 2);
        assert!(on.0[0] < 100, "{on:?}");
        assert!(off.0[0] > 200, "{off:?}");
    }

    #[test]
    fn skeleton_overlay_marks_joint_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let image = Array3::zeros((3, 64, 64));
        let mut rows = [[0.0f64; 2]; NUM_JOINTS];
        for (j, row) in rows.iter_mut().enumerate() {
            *row = [8.0 + 2.0 * j as f64, 8.0 + 2.0 * j as f64];
        }
        let pose = HandPose2D::from_rows(rows).unwrap();
        save_skeleton_2d(&path, &image, &pose, None).unwrap();
        let loaded = image::open(&path).unwrap().to_rgb8();
        // The wrist disk covers its pixel; the background stays black.
        assert_ne!(loaded.get_pixel(8, 8).0, [0, 0, 0]);
        assert_eq!(loaded.get_pixel(60, 8).0, [0, 0, 0]);
    }

    #[test]
    fn pose_3d_and_pck_figures_save(){
        let dir = tempfile::tempdir().unwrap();
        let mut rows = [[0.0f64; 3]; NUM_JOINTS];
        for (j, row) in rows.iter_mut().enumerate() {
            *row = [
                0.1 * j as f64 - 1.0,
                0.07 * j as f64 - 0.7,
                0.05 * j as f64,
            ];
        }
        let pose = HandPose3D::from_rows(rows).unwrap();
        save_pose_3d(&dir.path().join("p.png"), &pose, Some(&pose)).unwrap();

        let curve = PckCurve {
            thresholds: (20..=50).map(f64::from).collect(),
            values: (0..31).map(|i| i as f64 / 30.0).collect(),
        };
        save_pck_curve(&dir.path().join("c.png"), &curve).unwrap();
        assert!(dir.path().join("p.png").exists());
        assert!(dir.path().join("c.png").exists());
    }

    #[test]
    fn degenerate_curve_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let curve = PckCurve {
            thresholds: vec![20.0],
            values: vec![1.0],
        };
        assert!(save_pck_curve(&dir.path().join("x.png"), &curve).is_err());
    }
}
