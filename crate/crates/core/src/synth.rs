//! Synthetic occlusion scenes: depth-ordered disks with exact boundary and
//! left-rule orientation labels.
//!
//! Disks are drawn in generation order, so later disks occlude earlier ones.
//! A pixel is a boundary pixel when its centre lies within half a pixel of a
//! visible stretch of some disk's circle; its orientation is the tangent of
//! the nearest such disk, directed so the disk interior lies on the left.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::angle::store_angle;
use crate::error::{Error, Result};
use crate::maps::{
    save_map, write_pgm, BinaryMap, DatasetManifest, GroundTruth, ManifestRecord, OrientationMap,
    ScalarMap,
};
use crate::parallel::Execution;

/// Gap kept between every disk and the image edge, in pixels.
pub const MARGIN: f64 = 2.0;
const MIN_CONTRAST: f64 = 0.12;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_shapes: usize,
    pub radius_range: (f64, f64),
    pub intensity_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_shapes: 3,
            radius_range: (4.0, 10.0),
            intensity_range: (0.1, 0.9),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// A single small disk, keeping boundary pixels under about 1% of the
    /// image.
    pub fn sparse(width: usize, height: usize, seed: u64) -> Self {
        let side = width.min(height) as f64;
        Self {
            width,
            height,
            n_shapes: 1,
            radius_range: (3.0, (0.08 * side).max(3.0)),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rmin, rmax) = self.radius_range;
        let (imin, imax) = self.intensity_range;
        if self.n_shapes == 0 {
            return Err(Error::param("scene needs at least one shape"));
        }
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(Error::param(format!("bad radius range ({rmin}, {rmax})")));
        }
        if !(0.0..=1.0).contains(&imin) || !(0.0..=1.0).contains(&imax) || imin > imax {
            return Err(Error::param(format!("bad intensity range ({imin}, {imax})")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param(format!("bad noise sigma {}", self.noise_sigma)));
        }
        let side = self.width.min(self.height) as f64 - 1.0;
        if 2.0 * (rmax + MARGIN) > side {
            return Err(Error::param(format!(
                "disks of radius {rmax} cannot fit in a {}x{} image",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A disk in continuous pixel coordinates (`x` = column, `y` = row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl Disk {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }

    fn strictly_contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy < self.radius * self.radius
    }

    /// Left-rule orientation at the circle point in direction `(nx, ny)`
    /// from the centre (row-down unit vector).
    pub fn orientation_at(nx: f64, ny: f64) -> f64 {
        // left of θ is (−sin θ, −cos θ); it must equal the inward normal
        nx.atan2(ny)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: ScalarMap,
    pub gt: GroundTruth,
    /// Back to front.
    pub disks: Vec<Disk>,
    pub background: f64,
}

impl Scene {
    /// Index of the front-most disk covering `(x, y)`, or `None` for
    /// background.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<usize> {
        self.disks.iter().rposition(|d| d.contains(x, y))
    }

    /// Intersection points of every pair of circles.
    pub fn junctions(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, a) in self.disks.iter().enumerate() {
            for b in &self.disks[i + 1..] {
                let (dx, dy) = (b.cx - a.cx, b.cy - a.cy);
                let d = (dx * dx + dy * dy).sqrt();
                if d == 0.0 || d > a.radius + b.radius || d < (a.radius - b.radius).abs() {
                    continue;
                }
                let along = (a.radius * a.radius - b.radius * b.radius + d * d) / (2.0 * d);
                let h = (a.radius * a.radius - along * along).max(0.0).sqrt();
                let (mx, my) = (a.cx + along * dx / d, a.cy + along * dy / d);
                out.push((mx + h * dy / d, my - h * dx / d));
                out.push((mx - h * dy / d, my + h * dx / d));
            }
        }
        out
    }
}

fn sample_intensity(rng: &mut ChaCha8Rng, range: (f64, f64), avoid: &[f64]) -> f64 {
    let draw = |rng: &mut ChaCha8Rng| {
        if range.1 > range.0 {
            rng.random_range(range.0..=range.1)
        } else {
            range.0
        }
    };
    let mut v = draw(rng);
    for _ in 0..64 {
        if avoid.iter().all(|a| (a - v).abs() >= MIN_CONTRAST) {
            break;
        }
        v = draw(rng);
    }
    v
}

/// Renders one scene. Deterministic in `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let background = sample_intensity(&mut rng, spec.intensity_range, &[]);
    let mut used = vec![background];
    let mut disks = Vec::with_capacity(spec.n_shapes);
    for _ in 0..spec.n_shapes {
        let (rmin, rmax) = spec.radius_range;
        let radius = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
        let lo = MARGIN + radius;
        let cx = rng.random_range(lo..=(w - 1) as f64 - lo);
        let cy = rng.random_range(lo..=(h - 1) as f64 - lo);
        let intensity = sample_intensity(&mut rng, spec.intensity_range, &used);
        used.push(intensity);
        disks.push(Disk {
            cx,
            cy,
            radius,
            intensity,
        });
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut image = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = (col as f64, row as f64);
            let base = disks
                .iter()
                .rev()
                .find(|d| d.contains(x, y))
                .map_or(background, |d| d.intensity);
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            image.push((base + n).clamp(0.0, 1.0) as f32);
        }
    }

    let (boundary, orientation) = label_boundaries(&disks, w, h);
    let gt = GroundTruth::new(
        BinaryMap::new(ScalarMap::from_raw(w, h, boundary))?,
        OrientationMap::new(ScalarMap::from_raw(w, h, orientation)),
    )?;
    Ok(Scene {
        image: ScalarMap::from_raw(w, h, image),
        gt,
        disks,
        background,
    })
}

fn label_boundaries(disks: &[Disk], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut boundary = vec![0.0f32; w * h];
    let mut orientation = vec![0.0f32; w * h];
    let mut residual = vec![f64::INFINITY; w * h];
    for row in 0..h {
        for col in 0..w {
            let (x, y) = (col as f64, row as f64);
            for (k, d) in disks.iter().enumerate().rev() {
                let (dx, dy) = (x - d.cx, y - d.cy);
                let dist = (dx * dx + dy * dy).sqrt();
                if dist == 0.0 || (dist - d.radius).abs() > 0.5 {
                    continue;
                }
                let (nx, ny) = (dx / dist, dy / dist);
                let (qx, qy) = (d.cx + d.radius * nx, d.cy + d.radius * ny);
                if disks[k + 1..].iter().any(|o| o.strictly_contains(qx, qy)) {
                    continue;
                }
                let i = row * w + col;
                boundary[i] = 1.0;
                orientation[i] = store_angle(Disk::orientation_at(nx, ny));
                residual[i] = (dist - d.radius).abs();
                break;
            }
        }
    }
    break_blocks(&mut boundary, &mut orientation, &residual, w, h);
    (boundary, orientation)
}

/// Removes pixels until no 2×2 block is fully set, dropping the pixel
/// farthest from its contour (later raster position on ties).
fn break_blocks(boundary: &mut [f32], orientation: &mut [f32], residual: &[f64], w: usize, h: usize) {
    loop {
        let mut changed = false;
        for row in 0..h.saturating_sub(1) {
            for col in 0..w.saturating_sub(1) {
                let block = [
                    row * w + col,
                    row * w + col + 1,
                    (row + 1) * w + col,
                    (row + 1) * w + col + 1,
                ];
                if block.iter().all(|&i| boundary[i] != 0.0) {
                    let &drop = block
                        .iter()
                        .max_by(|&&a, &&b| residual[a].total_cmp(&residual[b]).then(a.cmp(&b)))
                        .unwrap();
                    boundary[drop] = 0.0;
                    orientation[drop] = 0.0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// File stem of scene `index` inside a dataset directory.
pub fn scene_stem(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Writes `n` scenes (seeds `spec.seed + i`) plus `manifest.tsv` under
/// `out_dir`.
pub fn generate_dataset(n: usize, spec: &SceneSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    generate_dataset_with(n, spec, out_dir, Execution::default())
}

pub fn generate_dataset_with(
    n: usize,
    spec: &SceneSpec,
    out_dir: impl AsRef<Path>,
    exec: Execution,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::param("dataset needs at least one scene"));
    }
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = exec.try_map_range(n, |i| {
        let scene = generate_scene(&SceneSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        })?;
        let stem = scene_stem(i);
        let record = ManifestRecord {
            image: out_dir.join(format!("{stem}_image.occm")),
            boundary: out_dir.join(format!("{stem}_boundary.occm")),
            orientation: out_dir.join(format!("{stem}_orient.occm")),
        };
        save_map(&scene.image, &record.image)?;
        save_map(&scene.gt.boundary, &record.boundary)?;
        save_map(&scene.gt.orientation, &record.orientation)?;
        write_pgm(&scene.image, out_dir.join(format!("{stem}_image.pgm")))?;
        Ok::<_, Error>(record)
    })?;
    let manifest = DatasetManifest { records };
    manifest.save(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Images and labels for `n` scenes held in memory.
pub fn generate_scenes(n: usize, spec: &SceneSpec, exec: Execution) -> Result<Vec<Scene>> {
    spec.validate()?;
    exec.try_map_range(n, |i| {
        generate_scene(&SceneSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        })
    })
}
