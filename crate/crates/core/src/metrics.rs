//! Evaluation metrics: sampled chamfer distance, F1 at a distance
//! threshold, and volumetric IoU on a voxel grid.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{chamfer_distance, nearest_neighbors, sample_points, ChamferReduction};
use crate::mesh::{cross, dot, norm, sub, Point3, TriangleMesh};
use crate::tagcn::DeformationNetwork;
use crate::train::DatasetPair;

/// Environment variable capping the evaluation thread count.
pub const THREADS_ENV: &str = "STDNET_THREADS";

/// How F1 distances are measured; recorded verbatim in every report.
pub const F1_DISTANCE_CONVENTION: &str = "squared euclidean, target bounding box scaled to unit max extent";

/// Chamfer distance between `n` seeded samples of each mesh.
pub fn sampled_chamfer(
    pred: &TriangleMesh,
    target: &TriangleMesh,
    n: usize,
    seed: u64,
    reduction: ChamferReduction,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sample_points(pred, n, &mut rng)?;
    let b = sample_points(target, n, &mut rng)?;
    chamfer_distance(&a, &b, reduction)
}

/// Precision, recall and their harmonic mean, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// A predicted point is a hit when its squared distance to the nearest
/// ground-truth point is at most `threshold`; recall counts the other way.
pub fn f1_score(pred: &Array2<f64>, gt: &Array2<f64>, threshold: f64) -> Result<F1Score> {
    if pred.nrows() == 0 || gt.nrows() == 0 {
        return Err(Error::EmptyInput("f1 point sets"));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("f1 threshold must be positive, got {threshold}")));
    }
    let fraction = |from: &Array2<f64>, to: &Array2<f64>| {
        let (_, d) = nearest_neighbors(from.view(), to.view());
        100.0 * d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64
    };
    let precision = fraction(pred, gt);
    let recall = fraction(gt, pred);
    let f1 = if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Score { f1, precision, recall })
}

/// Result of [`voxel_iou`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelIou {
    /// Percentage in `[0, 100]`.
    pub iou: f64,
    pub resolution: usize,
    /// True when a mesh was not watertight and only its surface cells
    /// were counted as occupied.
    pub surface_only: bool,
}

/// Cells of a cubic grid of `resolution^3` voxels plus a one-cell border.
struct Grid {
    origin: Point3,
    cell: f64,
    resolution: usize,
}

impl Grid {
    fn side(&self) -> usize {
        self.resolution + 2
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.side() + j) * self.side() + k
    }

    /// Center of padded cell `(i, j, k)`; cell 1 starts at `origin`.
    fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        let c = [i, j, k];
        [0, 1, 2].map(|a| self.origin[a] + (c[a] as f64 - 0.5) * self.cell)
    }

    /// Padded cell range overlapping `[lo, hi]` along one axis, clamped to
    /// the interior.
    fn span(&self, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
        let to_cell = |x: f64| ((x - self.origin[axis]) / self.cell).floor() as i64 + 1;
        let clamp = |c: i64| c.clamp(1, self.resolution as i64) as usize;
        (clamp(to_cell(lo)), clamp(to_cell(hi)))
    }
}

/// Separating-axis test between a triangle and an axis-aligned box.
fn triangle_overlaps_box(tri: [Point3; 3], center: Point3, half: f64) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let separated = |axis: Point3| {
        let p = v.map(|x| dot(x, axis));
        let r = half * (axis[0].abs() + axis[1].abs() + axis[2].abs());
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo > r || hi < -r
    };
    let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for u in unit {
        for edge in e {
            if separated(cross(u, edge)) {
                return false;
            }
        }
    }
    if unit.into_iter().any(separated) {
        return false;
    }
    !separated(cross(e[0], e[1]))
}

/// Generalized winding number of a closed mesh around `p`.
fn winding_number(mesh: &TriangleMesh, p: Point3) -> f64 {
    let mut total = 0.0;
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| sub(mesh.vertices()[i], p));
        let (la, lb, lc) = (norm(a), norm(b), norm(c));
        let numerator = dot(a, cross(b, c));
        let denominator = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
        total += 2.0 * numerator.atan2(denominator);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Occupancy of `mesh` on `grid`: surface cells by conservative
/// rasterization, exterior cells by flood fill from the border, and each
/// surface cell decided by the winding number at its center. Returns the
/// occupancy and whether the surface-only fallback was used.
fn occupancy(mesh: &TriangleMesh, grid: &Grid) -> (Vec<bool>, bool) {
    let side = grid.side();
    let mut surface = vec![false; side * side * side];
    let half = 0.5 * grid.cell * (1.0 + 1e-9);
    for f in mesh.faces() {
        let tri = f.map(|i| mesh.vertices()[i]);
        let ranges: [(usize, usize); 3] = [0, 1, 2].map(|a| {
            let lo = tri.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let hi = tri.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            grid.span(a, lo - half, hi + half)
        });
        for i in ranges[0].0..=ranges[0].1 {
            for j in ranges[1].0..=ranges[1].1 {
                for k in ranges[2].0..=ranges[2].1 {
                    let idx = grid.index(i, j, k);
                    if !surface[idx] && triangle_overlaps_box(tri, grid.center(i, j, k), half) {
                        surface[idx] = true;
                    }
                }
            }
        }
    }

    if !mesh.is_watertight() {
        log::warn!("mesh is not watertight; using surface-only occupancy");
        return (surface, true);
    }

    let mut outside = vec![false; surface.len()];
    let mut queue = VecDeque::from([(0usize, 0usize, 0usize)]);
    outside[0] = true;
    while let Some((i, j, k)) = queue.pop_front() {
        let steps = [(1i64, 0i64, 0i64), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
        for (di, dj, dk) in steps {
            let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
            if [ni, nj, nk].iter().any(|&c| c < 0 || c >= side as i64) {
                continue;
            }
            let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
            let idx = grid.index(ni, nj, nk);
            if !outside[idx] && !surface[idx] {
                outside[idx] = true;
                queue.push_back((ni, nj, nk));
            }
        }
    }

    let mut occupied = vec![false; surface.len()];
    for i in 1..=grid.resolution {
        for j in 1..=grid.resolution {
            for k in 1..=grid.resolution {
                let idx = grid.index(i, j, k);
                occupied[idx] = if surface[idx] {
                    winding_number(mesh, grid.center(i, j, k)) > 0.5
                } else {
                    !outside[idx]
                };
            }
        }
    }
    (occupied, false)
}

/// Volumetric IoU of two meshes voxelized on a shared `resolution^3` grid
/// spanning the cube around their joint bounding box.
pub fn voxel_iou(a: &TriangleMesh, b: &TriangleMesh, resolution: usize) -> Result<VoxelIou> {
    if resolution < 8 {
        return Err(Error::Config(format!("voxel resolution must be at least 8, got {resolution}")));
    }
    let (Some((alo, ahi)), Some((blo, bhi))) = (a.bounds(), b.bounds()) else {
        return Err(Error::EmptyInput("voxel_iou of an empty mesh"));
    };
    if a.face_count() == 0 || b.face_count() == 0 {
        return Err(Error::EmptyInput("voxel_iou of a mesh without faces"));
    }
    let lo = [0, 1, 2].map(|k| alo[k].min(blo[k]));
    let hi = [0, 1, 2].map(|k| ahi[k].max(bhi[k]));
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::DegenerateMesh("joint bounding box has zero extent".into()));
    }
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let grid = Grid {
        origin: center.map(|c| c - 0.5 * extent),
        cell: extent / resolution as f64,
        resolution,
    };
    let (occ_a, fallback_a) = occupancy(a, &grid);
    let (occ_b, fallback_b) = occupancy(b, &grid);
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in occ_a.iter().zip(&occ_b) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    let iou = if union == 0 { 0.0 } else { 100.0 * inter as f64 / union as f64 };
    Ok(VoxelIou {
        iou,
        resolution,
        surface_only: fallback_a || fallback_b,
    })
}

/// Settings of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Points sampled per mesh for chamfer and F1.
    pub samples: usize,
    /// Squared-distance threshold for F1 on normalized meshes.
    pub threshold: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 2500,
            threshold: 1e-4,
            resolution: 32,
            seed: 0,
        }
    }
}

/// Metrics of one predicted mesh against its target (or their means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    /// Sum-reduced chamfer in the target's own units.
    pub chamfer: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub distance: String,
    pub iou: f64,
    pub resolution: usize,
    pub samples: usize,
    pub surface_only: bool,
}

/// Per-pair reports in dataset order plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pairs: Vec<MetricReport>,
    pub mean: MetricReport,
}

impl Evaluation {
    /// One JSON object per pair, then the aggregate.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.pairs.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Translation and uniform scale mapping the target's bounding box to a
/// box centered at the origin with unit max extent.
fn normalizer(target: &TriangleMesh) -> Result<impl Fn(Point3) -> Point3> {
    let (lo, hi) = target.bounds().ok_or(Error::EmptyInput("target mesh"))?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::DegenerateMesh("target has zero extent".into()));
    }
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    Ok(move |p: Point3| [0, 1, 2].map(|k| (p[k] - center[k]) / extent))
}

/// Metrics of `pred` against `target`.
pub fn compare_meshes(id: &str, pred: &TriangleMesh, target: &TriangleMesh, config: &EvalConfig) -> Result<MetricReport> {
    let chamfer = sampled_chamfer(pred, target, config.samples, config.seed, ChamferReduction::Sum)?;
    let normalize = normalizer(target)?;
    let (pn, tn) = (pred.map_vertices(&normalize), target.map_vertices(&normalize));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = sample_points(&pn, config.samples, &mut rng)?;
    let b = sample_points(&tn, config.samples, &mut rng)?;
    let f1 = f1_score(&a, &b, config.threshold)?;
    let iou = voxel_iou(pred, target, config.resolution)?;
    Ok(MetricReport {
        id: id.to_string(),
        chamfer,
        f1: f1.f1,
        precision: f1.precision,
        recall: f1.recall,
        threshold: config.threshold,
        distance: F1_DISTANCE_CONVENTION.to_string(),
        iou: iou.iou,
        resolution: config.resolution,
        samples: config.samples,
        surface_only: iou.surface_only,
    })
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Deforms every source with `net` and compares the last block's mesh
/// with the target. Pairs run in parallel; reports keep dataset order.
pub fn evaluate(net: &DeformationNetwork, dataset: &[DatasetPair], config: &EvalConfig) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let run = || -> Result<Vec<MetricReport>> {
        dataset
            .par_iter()
            .map(|pair| {
                let meshes = net.deform(&pair.source.mesh())?;
                let pred = meshes.last().expect("network has blocks");
                compare_meshes(&pair.id, pred, &pair.target, config)
            })
            .collect()
    };
    let pairs = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let n = pairs.len() as f64;
    let mean_of = |f: fn(&MetricReport) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    let mean = MetricReport {
        id: "mean".into(),
        chamfer: mean_of(|r| r.chamfer),
        f1: mean_of(|r| r.f1),
        precision: mean_of(|r| r.precision),
        recall: mean_of(|r| r.recall),
        threshold: config.threshold,
        distance: F1_DISTANCE_CONVENTION.to_string(),
        iou: mean_of(|r| r.iou),
        resolution: config.resolution,
        samples: config.samples,
        surface_only: pairs.iter().any(|r| r.surface_only),
    };
    Ok(Evaluation { pairs, mean })
}
