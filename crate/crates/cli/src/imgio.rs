//! Image loading and the shared crop/resample step the dataset loaders run
//! before handing pixels to the model: PNG → (3, H, W) float planes →
//! bilinear square crop at the network input size.

use anyhow::{Context, Result};
use handgcn::data::CropTransform;
use ndarray::Array3;
use std::path::Path;

/// Loads an RGB PNG as (3, H, W) with values in [0, 1].
pub fn load_png(path: &Path) -> Result<Array3<f64>> {
    let image = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_rgb8();
    let (width, height) = image.dimensions();
    let mut planes = Array3::zeros((3, height as usize, width as usize));
    for (x, y, pixel) in image.enumerate_pixels() {
        for c in 0..3 {
            planes[[c, y as usize, x as usize]] = f64::from(pixel.0[c]) / 255.0;
        }
    }
    Ok(planes)
}

/// Mirrors an image about its vertical axis, column x ↔ column W−1−x.
pub fn mirror_horizontal(image: &Array3<f64>) -> Array3<f64> {
    let (channels, height, width) = image.dim();
    let mut out = Array3::zeros((channels, height, width));
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                out[[c, y, x]] = image[[c, y, width - 1 - x]];
            }
        }
    }
    out
}

/// Resamples the square crop described by `ct` to `ct.out_size` pixels with
/// bilinear interpolation. Source reads outside the image clamp to the edge,
/// so crops that overhang the frame extend the border rather than going dark.
pub fn crop_resample(image: &Array3<f64>, ct: &CropTransform) -> Array3<f64> {
    let (channels, height, width) = image.dim();
    let size = ct.out_size;
    let mut out = Array3::zeros((channels, size, size));
    for oy in 0..size {
        for ox in 0..size {
            // Pixel centers: output (ox+0.5, oy+0.5) maps through the crop
            // transform into source coordinates, then into index space.
            let src = ct.invert_point([ox as f64 + 0.5, oy as f64 + 0.5]);
            let sx = src[0] - 0.5;
            let sy = src[1] - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let tx = sx - x0;
            let ty = sy - y0;
            let xi = |x: f64| (x.max(0.0) as usize).min(width - 1);
            let yi = |y: f64| (y.max(0.0) as usize).min(height - 1);
            let (xa, xb) = (xi(x0), xi(x0 + 1.0));
            let (ya, yb) = (yi(y0), yi(y0 + 1.0));
            for c in 0..channels {
                let top = image[[c, ya, xa]] * (1.0 - tx) + image[[c, ya, xb]] * tx;
                let bottom = image[[c, yb, xa]] * (1.0 - tx) + image[[c, yb, xb]] * tx;
                out[[c, oy, ox]] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(height: usize, width: usize) -> Array3<f64> {
        Array3::from_shape_fn((3, height, width), |(c, y, x)| {
            (x as f64 + y as f64 * 10.0 + c as f64 * 100.0) / 1000.0
        })
    }

    #[test]
    fn identity_crop_reproduces_the_image() {
        let image = gradient_image(8, 8);
        let ct = CropTransform { x0: 0.0, y0: 0.0, side: 8.0, out_size: 8 };
        let out = crop_resample(&image, &ct);
        for ((c, y, x), &v) in out.indexed_iter() {
            assert!((v - image[[c, y, x]]).abs() < 1e-12, "({c},{y},{x})");
        }
    }

    #[test]
    fn doubling_resolution_interpolates_between_pixels() {
        let image = gradient_image(4, 4);
        let ct = CropTransform { x0: 0.0, y0: 0.0, side: 4.0, out_size: 8 };
        let out = crop_resample(&image, &ct);
        // Output pixel (1,0) center maps to source x=0.25: a quarter of the
        // way from column 0 toward column 1 on row 0.
        let expected = image[[0, 0, 0]] * 0.75 + image[[0, 0, 1]] * 0.25;
        assert!((out[[0, 0, 1]] - expected).abs() < 1e-12);
    }

    #[test]
    fn overhanging_crop_clamps_to_the_border() {
        let image = gradient_image(4, 4);
        let ct = CropTransform { x0: -4.0, y0: 0.0, side: 4.0, out_size: 4 };
        let out = crop_resample(&image, &ct);
        // Everything left of the frame reads column 0.
        for y in 0..4 {
            for x in 0..4 {
                assert!((out[[0, y, x]] - image[[0, y, 0]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_swaps_columns() {
        let image = gradient_image(3, 5);
        let mirrored = mirror_horizontal(&image);
        for c in 0..3 {
            for y in 0..3 {
                for x in 0..5 {
                    assert_eq!(mirrored[[c, y, x]], image[[c, y, 4 - x]]);
                }
            }
        }
    }
}
