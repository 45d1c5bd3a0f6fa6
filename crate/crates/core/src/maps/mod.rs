//! Grid types shared by every stage of the pipeline and their file formats.
//!
//! A [`ScalarMap`] is a dense row-major grid of finite `f32` values. The role
//! wrappers ([`ProbabilityMap`], [`BinaryMap`], [`OrientationMap`]) add the
//! value-range invariant of the role they play and deref to the underlying
//! grid.

mod io;
mod manifest;

pub use io::{load_map, save_map, write_pgm, MAGIC, VERSION};
pub use manifest::{DatasetManifest, ManifestRecord};

use std::ops::Deref;

use crate::angle::{is_stored_angle, wrap_angle, PI_F32};
use crate::error::{Error, Result};

/// Row-major grid of finite values. Row 0 is the top row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "map dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::validation(format!(
                "map of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value {} at pixel {i}",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// A map of zeros.
    ///
    /// Panics if either dimension is zero.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Builds a map from `f(row, col)`; fails if any value is non-finite.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self::new(width, height, values)
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn same_dims(&self, other: &ScalarMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Mirror left to right.
    pub fn flip_horizontal(&self) -> ScalarMap {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks_exact(self.width) {
            values.extend(row.iter().rev());
        }
        Self::from_raw(self.width, self.height, values)
    }

    /// Copy of the `width`×`height` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<ScalarMap> {
        if width == 0 || height == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::param(format!(
                "crop {width}x{height} at ({row}, {col}) exceeds {}x{} map",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        for r in row..row + height {
            let start = r * self.width + col;
            values.extend_from_slice(&self.values[start..start + width]);
        }
        Ok(Self::from_raw(width, height, values))
    }
}

macro_rules! role_wrapper {
    ($name:ident) => {
        impl Deref for $name {
            type Target = ScalarMap;
            fn deref(&self) -> &ScalarMap {
                &self.0
            }
        }

        impl AsRef<ScalarMap> for $name {
            fn as_ref(&self) -> &ScalarMap {
                &self.0
            }
        }

        impl $name {
            pub fn into_inner(self) -> ScalarMap {
                self.0
            }

            pub fn as_map(&self) -> &ScalarMap {
                &self.0
            }
        }
    };
}

/// Values in `[0, 1]`: a predicted boundary probability per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(ScalarMap);
role_wrapper!(ProbabilityMap);

impl ProbabilityMap {
    pub fn new(map: ScalarMap) -> Result<Self> {
        if let Some(i) = map.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!(
                "probability map value {} at pixel {i} is outside [0, 1]",
                map.values[i]
            )));
        }
        Ok(Self(map))
    }

    pub(crate) fn from_raw(map: ScalarMap) -> Self {
        debug_assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self(map)
    }
}

/// Values in `{0, 1}`: boundary flags.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMap(ScalarMap);
role_wrapper!(BinaryMap);

impl BinaryMap {
    pub fn new(map: ScalarMap) -> Result<Self> {
        if let Some(i) = map.values.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation(format!(
                "binary map value {} at pixel {i} is not 0 or 1",
                map.values[i]
            )));
        }
        Ok(Self(map))
    }

    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Result<Self> {
        let values = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ScalarMap::new(width, height, values).map(Self)
    }

    pub(crate) fn from_raw(map: ScalarMap) -> Self {
        Self(map)
    }

    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.0.get(row, col) != 0.0
    }

    pub fn count(&self) -> usize {
        self.0.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// `(row, col)` of every set pixel in raster order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let w = self.0.width;
        self.0
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }

    pub fn as_probability(&self) -> ProbabilityMap {
        ProbabilityMap(self.0.clone())
    }
}

/// Angles in radians. Only meaningful where the paired boundary map is set;
/// elsewhere the stored value is a placeholder (0 for ground truth).
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap(ScalarMap);
role_wrapper!(OrientationMap);

impl OrientationMap {
    pub fn new(map: ScalarMap) -> Self {
        Self(map)
    }
}

/// Ground-truth label pair: boundary flags and left-rule orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub boundary: BinaryMap,
    pub orientation: OrientationMap,
}

impl GroundTruth {
    pub fn new(boundary: BinaryMap, orientation: OrientationMap) -> Result<Self> {
        if !boundary.same_dims(&orientation) {
            return Err(Error::validation(format!(
                "ground-truth boundary is {}x{} but orientation is {}x{}",
                boundary.width(),
                boundary.height(),
                orientation.width(),
                orientation.height()
            )));
        }
        check_orientation("ground-truth orientation", &orientation, &boundary)?;
        Ok(Self {
            boundary,
            orientation,
        })
    }

    pub fn width(&self) -> usize {
        self.boundary.width()
    }

    pub fn height(&self) -> usize {
        self.boundary.height()
    }

    /// Horizontal mirror. Orientations become `−θ` (folded), which keeps the
    /// occluding side on the left once the image is mirrored.
    pub fn flip_horizontal(&self) -> GroundTruth {
        let boundary = BinaryMap(self.boundary.flip_horizontal());
        let flipped = self.orientation.flip_horizontal();
        let values = flipped
            .values()
            .iter()
            .zip(boundary.values())
            .map(|(&t, &b)| match (b != 0.0, t == PI_F32) {
                (false, _) => 0.0,
                (true, true) => PI_F32,
                (true, false) => -t,
            })
            .collect();
        GroundTruth {
            boundary,
            orientation: OrientationMap(ScalarMap::from_raw(self.width(), self.height(), values)),
        }
    }

    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<GroundTruth> {
        Ok(GroundTruth {
            boundary: BinaryMap(self.boundary.crop(row, col, width, height)?),
            orientation: OrientationMap(self.orientation.crop(row, col, width, height)?),
        })
    }
}

/// Orientation of the same boundary after a horizontal mirror of the image.
pub fn flip_orientation(theta: f64) -> f64 {
    wrap_angle(-theta)
}

fn check_orientation(name: &str, orientation: &ScalarMap, boundary: &BinaryMap) -> Result<()> {
    for (i, (&t, &b)) in orientation.values().iter().zip(boundary.values()).enumerate() {
        if b != 0.0 && !is_stored_angle(t) {
            return Err(Error::validation(format!(
                "{name} value {t} at boundary pixel {i} is outside (-pi, pi]"
            )));
        }
        if b == 0.0 && t != 0.0 {
            return Err(Error::validation(format!(
                "{name} value {t} at non-boundary pixel {i} must be stored as 0"
            )));
        }
    }
    Ok(())
}

/// Binarizes `p` at `t`: 1 exactly where `p ≥ t`.
pub fn threshold_map(p: &ProbabilityMap, t: f64) -> Result<BinaryMap> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::param(format!("threshold {t} must lie in (0, 1)")));
    }
    Ok(threshold_unchecked(p, t))
}

pub(crate) fn threshold_unchecked(p: &ScalarMap, t: f64) -> BinaryMap {
    let values = p
        .values()
        .iter()
        .map(|&v| if v as f64 >= t { 1.0 } else { 0.0 })
        .collect();
    BinaryMap(ScalarMap::from_raw(p.width(), p.height(), values))
}

/// Checks that a prediction pair and its ground truth agree in shape and
/// satisfy their role invariants. Predicted orientations must be folded.
pub fn validate_pair(
    pred: (&ProbabilityMap, &OrientationMap),
    gt: &GroundTruth,
) -> Result<()> {
    let (prob, orient) = pred;
    let maps = [
        ("predicted boundary", prob.as_map()),
        ("predicted orientation", orient.as_map()),
        ("ground-truth boundary", gt.boundary.as_map()),
        ("ground-truth orientation", gt.orientation.as_map()),
    ];
    for (name, map) in &maps[1..] {
        if !map.same_dims(maps[0].1) {
            return Err(Error::validation(format!(
                "{name} is {}x{} but predicted boundary is {}x{}",
                map.width(),
                map.height(),
                prob.width(),
                prob.height()
            )));
        }
    }
    if let Some(i) = prob.values().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::validation(format!(
            "predicted boundary value {} at pixel {i} is outside [0, 1]",
            prob.values()[i]
        )));
    }
    if let Some(i) = orient.values().iter().position(|&t| !is_stored_angle(t) && t != 0.0) {
        return Err(Error::validation(format!(
            "predicted orientation value {} at pixel {i} is outside (-pi, pi]",
            orient.values()[i]
        )));
    }
    check_orientation("ground-truth orientation", &gt.orientation, &gt.boundary)
}
