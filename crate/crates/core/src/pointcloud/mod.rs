//! Point cloud container, PLY I/O, color conversion and patching.

mod color;
mod patch;
mod ply;

pub use color::{rgb_to_yuv, yuv_to_rgb};
pub use patch::{make_patches, merge_patches, Patch, FILLER, PATCH_SIZE};
pub use ply::{read_ply, write_ply, PlyFormat};

use ndarray::Array2;

use crate::error::{precondition, Error, Result};

/// Channel semantics of a color matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Yuv,
}

const COLOR_TOLERANCE: f64 = 1e-6;

/// Positions plus one color triple per point, colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Array2<f64>,
    colors: Array2<f64>,
    space: ColorSpace,
}

impl PointCloud {
    pub fn new(positions: Array2<f64>, colors: Array2<f64>, space: ColorSpace) -> Result<Self> {
        if positions.nrows() == 0 {
            return Err(Error::EmptyCloud);
        }
        if positions.ncols() != 3 || colors.ncols() != 3 {
            return Err(precondition("positions and colors must have 3 columns"));
        }
        if positions.nrows() != colors.nrows() {
            return Err(precondition(format!(
                "{} positions but {} colors",
                positions.nrows(),
                colors.nrows()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(precondition("positions must be finite"));
        }
        if colors
            .iter()
            .any(|&v| !(-COLOR_TOLERANCE..=1.0 + COLOR_TOLERANCE).contains(&v))
        {
            return Err(precondition("colors must lie in [0, 1]"));
        }
        Ok(Self {
            positions,
            colors,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn colors(&self) -> &Array2<f64> {
        &self.colors
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    /// Colors converted to YUV (no-op when already YUV).
    pub fn yuv(&self) -> Array2<f64> {
        match self.space {
            ColorSpace::Yuv => self.colors.clone(),
            ColorSpace::Rgb => rgb_to_yuv(&self.colors),
        }
    }

    /// Colors converted to RGB (no-op when already RGB).
    pub fn rgb(&self) -> Array2<f64> {
        match self.space {
            ColorSpace::Rgb => self.colors.clone(),
            ColorSpace::Yuv => yuv_to_rgb(&self.colors),
        }
    }

    /// Same geometry with a different color matrix.
    pub fn with_colors(&self, colors: Array2<f64>, space: ColorSpace) -> Result<Self> {
        Self::new(self.positions.clone(), colors, space)
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, ColorSpace) {
        (self.positions, self.colors, self.space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_clouds() {
        let p = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            PointCloud::new(p.clone(), p, ColorSpace::Rgb),
            Err(Error::EmptyCloud)
        ));
        let p = Array2::<f64>::zeros((2, 3));
        let c = Array2::<f64>::zeros((3, 3));
        assert!(PointCloud::new(p.clone(), c, ColorSpace::Rgb).is_err());
        let c = Array2::from_elem((2, 3), 1.5);
        assert!(PointCloud::new(p.clone(), c, ColorSpace::Rgb).is_err());
        let mut bad = p.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(PointCloud::new(bad, Array2::zeros((2, 3)), ColorSpace::Rgb).is_err());
    }
}
