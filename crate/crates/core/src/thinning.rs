//! Edge thinning and orientation adjustment for predicted boundary maps.
//!
//! [`nms_thin`] keeps a pixel only if it dominates its two neighbours
//! sampled one pixel away along the local edge normal. Normals come from the
//! gradient structure tensor of a triangle-filtered copy of the map, which
//! stays well defined at ridge centres where the plain gradient vanishes.

use crate::angle::{angular_distance, store_angle, wrap_angle, wrap_half_turn};
use crate::error::{Error, Result};
use crate::maps::{BinaryMap, OrientationMap, ProbabilityMap, ScalarMap};
use crate::parallel::Execution;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmsParams {
    pub smooth_radius: usize,
    pub tolerance: f64,
    pub border: usize,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            smooth_radius: 4,
            tolerance: 1.01,
            border: 1,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_radius < 1 {
            return Err(Error::param("nms smooth radius must be >= 1"));
        }
        if !(self.tolerance >= 1.0 && self.tolerance.is_finite()) {
            return Err(Error::param(format!(
                "nms tolerance must be >= 1, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Separable triangle filter `[1 … r+1 … 1] / (r+1)²` with replicated borders.
pub(crate) fn triangle_filter(values: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let r = radius as isize;
    let norm = ((radius + 1) * (radius + 1)) as f64;
    let kernel: Vec<f64> = (-r..=r).map(|k| (r + 1 - k.abs()) as f64 / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; values.len()];
    for row in 0..height {
        let src = &values[row * width..(row + 1) * width];
        for col in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * src[clamp(col as isize + k as isize - r, width)];
            }
            tmp[row * width + col] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for row in 0..height {
        for (k, w) in kernel.iter().enumerate() {
            let src_row = clamp(row as isize + k as isize - r, height);
            let src = &tmp[src_row * width..(src_row + 1) * width];
            let dst = &mut out[row * width..(row + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Central differences `(d/dx, d/dy_up)`; one-sided at the border.
fn gradients(values: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; values.len()];
    let mut gy = vec![0.0; values.len()];
    let at = |r: usize, c: usize| values[r * width + c];
    for row in 0..height {
        for col in 0..width {
            let (c0, c1) = (col.saturating_sub(1), (col + 1).min(width - 1));
            let (r0, r1) = (row.saturating_sub(1), (row + 1).min(height - 1));
            let i = row * width + col;
            if c1 > c0 {
                gx[i] = (at(row, c1) - at(row, c0)) / (c1 - c0) as f64;
            }
            if r1 > r0 {
                // rows grow downward, so flip the sign for a y-up derivative
                gy[i] = -(at(r1, col) - at(r0, col)) / (r1 - r0) as f64;
            }
        }
    }
    (gx, gy)
}

/// Edge-normal angle per pixel in `(−π/2, π/2]`; 0 where the map is flat.
pub fn estimate_normals(p: &ProbabilityMap, smooth_radius: usize) -> OrientationMap {
    let (w, h) = (p.width(), p.height());
    let src: Vec<f64> = p.values().iter().map(|&v| v as f64).collect();
    let smooth = triangle_filter(&src, w, h, smooth_radius);
    let (gx, gy) = gradients(&smooth, w, h);
    let jxx: Vec<f64> = gx.iter().map(|g| g * g).collect();
    let jxy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let jyy: Vec<f64> = gy.iter().map(|g| g * g).collect();
    let tr = smooth_radius.div_ceil(2);
    let jxx = triangle_filter(&jxx, w, h, tr);
    let jxy = triangle_filter(&jxy, w, h, tr);
    let jyy = triangle_filter(&jyy, w, h, tr);
    let values = (0..w * h)
        .map(|i| {
            let (a, b) = (2.0 * jxy[i], jxx[i] - jyy[i]);
            // flat or isotropic: tie-break to 0
            if a.abs() < 1e-18 && b.abs() < 1e-18 {
                0.0
            } else {
                wrap_half_turn(0.5 * a.atan2(b)) as f32
            }
        })
        .collect();
    OrientationMap::new(ScalarMap::from_raw(w, h, values))
}

/// Bilinear sample at continuous `(x, y_row)` clamped to the grid.
fn bilinear(map: &ScalarMap, x: f64, y: f64) -> f64 {
    let (w, h) = (map.width(), map.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v = |r: usize, c: usize| map.get(r, c) as f64;
    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
}

/// Non-maximum suppression along the estimated edge normal.
pub fn nms_thin(p: &ProbabilityMap, params: &NmsParams) -> Result<ProbabilityMap> {
    params.validate()?;
    let normals = estimate_normals(p, params.smooth_radius);
    let (w, h) = (p.width(), p.height());
    let b = params.border;
    let mut out = vec![0.0f32; w * h];
    for row in 0..h {
        if row < b || row + b >= h {
            continue;
        }
        for col in b..w.saturating_sub(b) {
            let v = p.get(row, col);
            if v == 0.0 {
                continue;
            }
            let theta = normals.get(row, col) as f64;
            let (dx, dy) = (theta.cos(), -theta.sin());
            let (x, y) = (col as f64, row as f64);
            let kept = v as f64 * params.tolerance;
            if kept >= bilinear(p, x + dx, y + dy) && kept >= bilinear(p, x - dx, y - dy) {
                out[row * w + col] = v;
            }
        }
    }
    Ok(ProbabilityMap::from_raw(ScalarMap::from_raw(w, h, out)))
}

/// [`nms_thin`] over a batch of maps.
pub fn nms_thin_batch(
    maps: &[ProbabilityMap],
    params: &NmsParams,
    exec: Execution,
) -> Result<Vec<ProbabilityMap>> {
    params.validate()?;
    exec.map(maps, |m| nms_thin(m, params)).into_iter().collect()
}

/// Principal direction of the boundary pixels around one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent {
    /// Undirected line angle in `(−π/2, π/2]`.
    pub angle: f64,
    /// False when the neighbourhood gives no preferred direction (isolated
    /// pixel or isotropic blob); `angle` is then 0.
    pub confident: bool,
}

/// Tangent line at `pixel` from the coordinate covariance of the set pixels in
/// the `(2·radius+1)²` window.
pub fn local_tangent(b: &BinaryMap, pixel: (usize, usize), radius: usize) -> Result<Tangent> {
    let (row, col) = pixel;
    if row >= b.height() || col >= b.width() {
        return Err(Error::param(format!("pixel {pixel:?} outside the map")));
    }
    if !b.is_set(row, col) {
        return Err(Error::param(format!("pixel {pixel:?} is not a boundary pixel")));
    }
    Ok(tangent_unchecked(b, row, col, radius))
}

fn tangent_unchecked(b: &BinaryMap, row: usize, col: usize, radius: usize) -> Tangent {
    let r0 = row.saturating_sub(radius);
    let r1 = (row + radius).min(b.height() - 1);
    let c0 = col.saturating_sub(radius);
    let c1 = (col + radius).min(b.width() - 1);
    let mut pts = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if b.is_set(r, c) {
                // y-up coordinates relative to the centre pixel
                pts.push(((c as f64) - col as f64, row as f64 - r as f64));
            }
        }
    }
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x / n, ay + y / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pts {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (a, d) = (2.0 * sxy, sxx - syy);
    let spread = (a * a + d * d).sqrt();
    if spread < 1e-9 {
        return Tangent {
            angle: 0.0,
            confident: false,
        };
    }
    Tangent {
        angle: wrap_half_turn(0.5 * a.atan2(d)),
        confident: true,
    }
}

/// Snaps each boundary pixel's predicted orientation to the local tangent,
/// picking whichever of the two tangent directions is closer to the
/// prediction. Non-boundary pixels become 0.
pub fn adjust_orientations(
    thinned: &BinaryMap,
    pred: &OrientationMap,
    radius: usize,
) -> Result<OrientationMap> {
    if !thinned.same_dims(pred) {
        return Err(Error::validation(format!(
            "boundary map is {}x{} but orientation map is {}x{}",
            thinned.width(),
            thinned.height(),
            pred.width(),
            pred.height()
        )));
    }
    let (w, h) = (thinned.width(), thinned.height());
    let mut out = vec![0.0f32; w * h];
    for (row, col) in thinned.pixels() {
        let t = tangent_unchecked(thinned, row, col, radius).angle;
        let flipped = wrap_angle(t + std::f64::consts::PI);
        let predicted = pred.get(row, col) as f64;
        let choice = if angular_distance(t, predicted) <= angular_distance(flipped, predicted) {
            t
        } else {
            flipped
        };
        out[row * w + col] = store_angle(choice);
    }
    Ok(OrientationMap::new(ScalarMap::from_raw(w, h, out)))
}

/// Pixels with non-zero value, the boundary set of a thinned map.
pub fn support(p: &ProbabilityMap) -> BinaryMap {
    let values = p
        .values()
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    BinaryMap::from_raw(ScalarMap::from_raw(p.width(), p.height(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn pmap(w: usize, h: usize, f: impl FnMut(usize, usize) -> f32) -> ProbabilityMap {
        ProbabilityMap::new(ScalarMap::from_fn(w, h, f).unwrap()).unwrap()
    }

    #[test]
    fn triangle_filter_preserves_constants_and_mass() {
        let v = vec![0.3; 7 * 5];
        let out = triangle_filter(&v, 7, 5, 3);
        assert!(out.iter().all(|x| (x - 0.3).abs() < 1e-12));
        let mut spike = vec![0.0; 21 * 21];
        spike[10 * 21 + 10] = 1.0;
        let out = triangle_filter(&spike, 21, 21, 4);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((out[10 * 21 + 10] - 1.0 / 625.0 * 25.0).abs() < 1e-12);
    }

    #[test]
    fn normals_of_step_edges() {
        let vertical = pmap(16, 16, |_, c| if c < 8 { 1.0 } else { 0.0 });
        let n = estimate_normals(&vertical, 4);
        for r in 4..12 {
            for c in 6..10 {
                assert!((n.get(r, c) as f64).abs() < 1e-9);
            }
        }
        let horizontal = pmap(16, 16, |r, _| if r < 8 { 1.0 } else { 0.0 });
        let n = estimate_normals(&horizontal, 4);
        for r in 6..10 {
            for c in 4..12 {
                assert!((n.get(r, c) as f64 - FRAC_PI_2).abs() < 1e-6);
            }
        }
        let flat = pmap(8, 8, |_, _| 0.4);
        assert!(estimate_normals(&flat, 4).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thin_lines_survive() {
        let params = NmsParams::default();
        let line = pmap(20, 20, |r, c| if r == 10 && (1..19).contains(&c) { 1.0 } else { 0.0 });
        let out = nms_thin(&line, &params).unwrap();
        assert_eq!(out, line);
        let vline = pmap(20, 20, |r, c| if c == 7 && (1..19).contains(&r) { 1.0 } else { 0.0 });
        assert_eq!(nms_thin(&vline, &params).unwrap(), vline);
    }

    #[test]
    fn ramp_band_keeps_centre_column() {
        let band = pmap(20, 20, |_, c| match c {
            9 | 11 => 0.5,
            10 => 1.0,
            _ => 0.0,
        });
        let out = nms_thin(&band, &NmsParams::default()).unwrap();
        for r in 1..19 {
            assert_eq!(out.get(r, 10), 1.0);
            assert_eq!(out.get(r, 9), 0.0);
            assert_eq!(out.get(r, 11), 0.0);
        }
        assert!(out.get(0, 10) == 0.0 && out.get(19, 10) == 0.0);
    }

    #[test]
    fn horizontal_band_keeps_centre_row() {
        let band = pmap(20, 20, |r, _| match r {
            9 | 11 => 0.5,
            10 => 1.0,
            _ => 0.0,
        });
        let out = nms_thin(&band, &NmsParams::default()).unwrap();
        for c in 1..19 {
            assert_eq!(out.get(10, c), 1.0);
            assert_eq!(out.get(9, c), 0.0);
        }
    }

    #[test]
    fn zero_map_stays_zero() {
        let z = pmap(9, 9, |_, _| 0.0);
        assert_eq!(nms_thin(&z, &NmsParams::default()).unwrap(), z);
        let bad = NmsParams {
            tolerance: 0.9,
            ..NmsParams::default()
        };
        assert!(nms_thin(&z, &bad).is_err());
    }

    fn bmap(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMap {
        let mask: Vec<bool> = (0..w * h).map(|i| f(i / w, i % w)).collect();
        BinaryMap::from_mask(w, h, &mask).unwrap()
    }

    #[test]
    fn tangent_examples() {
        let horiz = bmap(11, 11, |r, c| r == 5 && (1..10).contains(&c));
        let t = local_tangent(&horiz, (5, 5), 2).unwrap();
        assert!(t.confident && t.angle.abs() < 1e-12);

        let diag = bmap(11, 11, |r, c| r == c);
        let t = local_tangent(&diag, (5, 5), 2).unwrap();
        assert!((t.angle + FRAC_PI_4).abs() < 1e-12);

        let vert = bmap(11, 11, |_, c| c == 3);
        assert!((local_tangent(&vert, (5, 3), 2).unwrap().angle - FRAC_PI_2).abs() < 1e-12);

        let lone = bmap(11, 11, |r, c| (r, c) == (5, 5));
        let t = local_tangent(&lone, (5, 5), 2).unwrap();
        assert_eq!(t, Tangent { angle: 0.0, confident: false });

        assert!(local_tangent(&lone, (4, 4), 2).is_err());
    }

    fn ring(size: usize, cx: f64, cy: f64, radius: f64) -> BinaryMap {
        let mut mask = vec![false; size * size];
        for k in 0..20_000 {
            let a = std::f64::consts::TAU * k as f64 / 20_000.0;
            let (x, y) = (cx + radius * a.cos(), cy + radius * a.sin());
            mask[y.round() as usize * size + x.round() as usize] = true;
        }
        BinaryMap::from_mask(size, size, &mask).unwrap()
    }

    fn worst_circle_error(b: &BinaryMap, cx: f64, cy: f64, window: usize) -> f64 {
        b.pixels()
            .into_iter()
            .map(|(r, c)| {
                let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                let truth = dx.atan2(dy);
                let t = local_tangent(b, (r, c), window).unwrap().angle;
                angular_distance(t, truth).min(angular_distance(t + PI, truth))
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn circle_tangents() {
        for radius in 10..=30 {
            let b = ring(72, 36.0, 36.0, radius as f64);
            let e = worst_circle_error(&b, 36.0, 36.0, 2);
            assert!(e < 0.15, "radius {radius}: {e}");
        }
        // off-grid centres need the wider window
        for (radius, cx, cy) in [(10.0, 35.7, 36.2), (20.0, 36.3, 35.6), (27.5, 35.5, 36.5)] {
            let b = ring(72, cx, cy, radius);
            let e = worst_circle_error(&b, cx, cy, 3);
            assert!(e < 0.15, "radius {radius}: {e}");
        }
    }

    #[test]
    fn adjust_examples() {
        let horiz = bmap(11, 11, |r, c| r == 5 && (1..10).contains(&c));
        let pred = |v: f32| OrientationMap::new(ScalarMap::from_fn(11, 11, |_, _| v).unwrap());

        let out = adjust_orientations(&horiz, &pred(0.3), 2).unwrap();
        assert_eq!(out.get(5, 5), 0.0);
        assert_eq!(out.get(0, 0), 0.0);

        let out = adjust_orientations(&horiz, &pred(2.9), 2).unwrap();
        assert!((out.get(5, 5) as f64 - PI).abs() < 1e-6);

        let out = adjust_orientations(&horiz, &pred(0.0), 2).unwrap();
        assert_eq!(out.get(5, 4), 0.0);

        let small = OrientationMap::new(ScalarMap::zeros(3, 3));
        assert!(adjust_orientations(&horiz, &small, 2).is_err());
    }
}
