//! BT.709 full-range RGB <-> YUV with chroma offset by one half.

use ndarray::{Array2, Zip};

const KR: f64 = 0.2126;
const KG: f64 = 0.7152;
const KB: f64 = 0.0722;
const U_SCALE: f64 = 2.0 * (1.0 - KB); // 1.8556
const V_SCALE: f64 = 2.0 * (1.0 - KR); // 1.5748

#[inline]
pub(crate) fn rgb_to_yuv_px(r: f64, g: f64, b: f64) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let u = (b - y) / U_SCALE + 0.5;
    let v = (r - y) / V_SCALE + 0.5;
    [y, u, v]
}

#[inline]
pub(crate) fn yuv_to_rgb_px(y: f64, u: f64, v: f64) -> [f64; 3] {
    let r = y + V_SCALE * (v - 0.5);
    let b = y + U_SCALE * (u - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

fn convert(colors: &Array2<f64>, f: impl Fn(f64, f64, f64) -> [f64; 3]) -> Array2<f64> {
    assert_eq!(colors.ncols(), 3, "color matrices have 3 channels");
    let mut out = Array2::zeros(colors.raw_dim());
    Zip::from(out.rows_mut())
        .and(colors.rows())
        .for_each(|mut o, c| {
            let px = f(c[0], c[1], c[2]);
            for k in 0..3 {
                o[k] = px[k].clamp(0.0, 1.0);
            }
        });
    out
}

/// RGB in `[0, 1]` to YUV in `[0, 1]`, clipped.
pub fn rgb_to_yuv(colors: &Array2<f64>) -> Array2<f64> {
    convert(colors, rgb_to_yuv_px)
}

/// Inverse of [`rgb_to_yuv`], clipped to `[0, 1]`.
pub fn yuv_to_rgb(colors: &Array2<f64>) -> Array2<f64> {
    convert(colors, yuv_to_rgb_px)
}
