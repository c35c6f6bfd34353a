//! Area-weighted surface sampling and the hybrid deformation loss.
//!
//! Sample points are a fixed linear function of the mesh vertices once the
//! face index and the two uniforms `(u, w)` are drawn, so gradients reach the
//! vertices through the sampling operator while the random choices stay
//! constant.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::mesh::{Point3, TriangleMesh};
use crate::sparse::SparseMatrix;
use crate::tagcn::{ForwardPlan, NetworkOutput};

/// Barycentric weights `(1 - √u, √u (1 - w), √u w)` of the three face corners.
pub fn barycentric(u: f64, w: f64) -> [f64; 3] {
    let s = u.sqrt();
    [1.0 - s, s * (1.0 - w), s * w]
}

/// Where one sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleOrigin {
    pub face: usize,
    pub u: f64,
    pub w: f64,
}

/// Sample points recorded on a tape together with their provenance.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub points: Tensor,
    pub origins: Vec<SampleOrigin>,
}

/// Draws `n` (face, u, w) triples: faces with probability proportional to
/// area via binary search over the cumulative area array.
pub fn draw_samples(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<Vec<SampleOrigin>> {
    if n == 0 {
        return Err(Error::EmptyInput("sample count must be positive"));
    }
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("surface area {total}")));
    }
    if total <= 0.0 {
        return Err(Error::DegenerateMesh(format!(
            "total surface area {total} over {} faces",
            mesh.face_count()
        )));
    }
    let last = cumulative.len() - 1;
    Ok((0..n)
        .map(|_| {
            let target = rng.gen::<f64>() * total;
            let face = cumulative.partition_point(|&c| c <= target).min(last);
            SampleOrigin {
                face,
                u: rng.gen(),
                w: rng.gen(),
            }
        })
        .collect())
}

/// Sparse `n x V` operator mapping vertex positions to sample positions.
pub fn sampling_operator(mesh: &TriangleMesh, origins: &[SampleOrigin]) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(3 * origins.len());
    for (i, o) in origins.iter().enumerate() {
        let weights = barycentric(o.u, o.w);
        for (&v, wt) in mesh.faces()[o.face].iter().zip(weights) {
            triplets.push((i, v, wt));
        }
    }
    SparseMatrix::from_triplets(origins.len(), mesh.vertex_count(), &triplets)
}

/// Differentiable samples of a mesh whose positions are `vertices` (on the
/// tape) and whose connectivity is `mesh`.
pub fn sample_surface(
    tape: &Tape,
    mesh: &TriangleMesh,
    vertices: Tensor,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    if vertices.shape() != (mesh.vertex_count(), 3) {
        return Err(Error::Dimension {
            op: "sample_surface",
            left: vertices.shape(),
            right: (mesh.vertex_count(), 3),
        });
    }
    let current = mesh.with_vertex_matrix(&tape.value(vertices))?;
    let origins = draw_samples(&current, n, rng)?;
    let op = Arc::new(sampling_operator(&current, &origins));
    let points = tape.sparse_matmul(&op, vertices)?;
    Ok(SampleBatch { points, origins })
}

/// Plain (untracked) samples as an `n x 3` matrix.
pub fn sample_points(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let origins = draw_samples(mesh, n, rng)?;
    Ok(sampling_operator(mesh, &origins).mul_dense(mesh.vertex_matrix().view()))
}

/// Brute-force nearest neighbor of every row of `from` among the rows of
/// `to`, with squared distances. Ties go to the lowest index.
pub fn nearest_neighbors(from: ArrayView2<'_, f64>, to: ArrayView2<'_, f64>) -> (Vec<usize>, Vec<f64>) {
    let to_pts: Vec<Point3> = to.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    from.rows()
        .into_iter()
        .map(|r| {
            let p = [r[0], r[1], r[2]];
            let mut best = (0, f64::INFINITY);
            for (j, q) in to_pts.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// How the two directional chamfer sums are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferReduction {
    /// Plain sums over both point sets.
    #[default]
    Sum,
    /// Each directional sum divided by its point count.
    Mean,
}

/// `sum_x min_y |x - y|^2 + sum_y min_x |x - y|^2` between two `n x 3` point sets.
pub fn chamfer_loss(tape: &Tape, a: Tensor, b: Tensor, reduction: ChamferReduction) -> Result<Tensor> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput("chamfer between empty point sets"));
    }
    if a.cols() != 3 || b.cols() != 3 {
        return Err(Error::Dimension {
            op: "chamfer_loss",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (a_to_b, b_to_a) = {
        let (av, bv) = (tape.value(a), tape.value(b));
        (nearest_neighbors(av.view(), bv.view()).0, nearest_neighbors(bv.view(), av.view()).0)
    };
    let forward = tape.sub(a, tape.gather_rows(b, &a_to_b)?)?;
    let backward = tape.sub(b, tape.gather_rows(a, &b_to_a)?)?;
    let mut fwd = tape.sum(tape.square(forward));
    let mut bwd = tape.sum(tape.square(backward));
    if reduction == ChamferReduction::Mean {
        fwd = tape.scale(1.0 / a.rows() as f64, fwd);
        bwd = tape.scale(1.0 / b.rows() as f64, bwd);
    }
    tape.add(fwd, bwd)
}

/// Chamfer distance between plain point sets, through [`chamfer_loss`].
pub fn chamfer_distance(a: &Array2<f64>, b: &Array2<f64>, reduction: ChamferReduction) -> Result<f64> {
    let tape = Tape::new();
    let (ta, tb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    Ok(tape.scalar(chamfer_loss(&tape, ta, tb, reduction)?))
}

/// `sum_p |δ'_p - δ_p|^2` where `δ = laplacian · positions`.
///
/// `laplacian` comes from [`crate::mesh::laplacian_operator`]; isolated
/// vertices have empty rows and drop out of the sum.
pub fn laplacian_loss(tape: &Tape, laplacian: &Arc<SparseMatrix>, before: Tensor, after: Tensor) -> Result<Tensor> {
    let delta_before = tape.sparse_matmul(laplacian, before)?;
    let delta_after = tape.sparse_matmul(laplacian, after)?;
    let diff = tape.sub(delta_after, delta_before)?;
    Ok(tape.sum(tape.square(diff)))
}

/// `sum_p sum_{q in N(p)} |p - q|^2`; every undirected edge appears twice.
///
/// `edge_difference` comes from [`crate::mesh::edge_difference_operator`].
pub fn edge_loss(tape: &Tape, edge_difference: &Arc<SparseMatrix>, vertices: Tensor) -> Result<Tensor> {
    let diffs = tape.sparse_matmul(edge_difference, vertices)?;
    Ok(tape.scale(2.0, tape.sum(tape.square(diffs))))
}

/// Loss weights and sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOptions {
    pub lambda_lap: f64,
    pub lambda_edge: f64,
    pub samples: usize,
    pub reduction: ChamferReduction,
    /// When false only the last block is supervised.
    pub supervise_all_blocks: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            lambda_lap: 0.3,
            lambda_edge: 0.1,
            samples: 1000,
            reduction: ChamferReduction::Sum,
            supervise_all_blocks: true,
        }
    }
}

/// Individual loss terms and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_cd: f64,
    pub l_lap: f64,
    pub l_edge: f64,
    pub l_all: f64,
}

impl LossTerms {
    pub fn combine(l_cd: f64, l_lap: f64, l_edge: f64, lambda_lap: f64, lambda_edge: f64) -> Self {
        Self {
            l_cd,
            l_lap,
            l_edge,
            l_all: l_cd + lambda_lap * l_lap + lambda_edge * l_edge,
        }
    }
}

/// Loss values of one training step: totals over supervised blocks plus
/// the per-block breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cd: f64,
    pub l_lap: f64,
    pub l_edge: f64,
    pub l_all: f64,
    pub lambda_lap: f64,
    pub lambda_edge: f64,
    pub per_block: Vec<LossTerms>,
}

/// Sums `l_cd + λ1 l_lap + λ2 l_edge` over the supervised blocks of a
/// network output against a fixed set of target samples.
pub fn total_loss(
    tape: &Tape,
    output: &NetworkOutput,
    plan: &ForwardPlan,
    target: &Array2<f64>,
    options: &LossOptions,
    rng: &mut impl Rng,
) -> Result<(Tensor, LossReport)> {
    if target.nrows() == 0 {
        return Err(Error::EmptyInput("target samples"));
    }
    let target_t = tape.constant(target.clone());
    let count = output.blocks.len();
    let mut total: Option<Tensor> = None;
    let mut per_block = Vec::with_capacity(count);
    for (i, (block, stage)) in output.blocks.iter().zip(&plan.stages).enumerate() {
        if !options.supervise_all_blocks && i + 1 != count {
            continue;
        }
        let samples = sample_surface(tape, &stage.mesh, block.predicted, options.samples, rng)?;
        let l_cd = chamfer_loss(tape, samples.points, target_t, options.reduction)?;
        let l_lap = laplacian_loss(tape, &stage.laplacian, block.input, block.predicted)?;
        let l_edge = edge_loss(tape, &stage.edge_difference, block.predicted)?;
        let weighted = tape.add(
            l_cd,
            tape.add(
                tape.scale(options.lambda_lap, l_lap),
                tape.scale(options.lambda_edge, l_edge),
            )?,
        )?;
        per_block.push(LossTerms {
            l_cd: tape.scalar(l_cd),
            l_lap: tape.scalar(l_lap),
            l_edge: tape.scalar(l_edge),
            l_all: tape.scalar(weighted),
        });
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or(Error::EmptyInput("no supervised blocks"))?;
    let sum = |f: fn(&LossTerms) -> f64| per_block.iter().map(f).sum::<f64>();
    let report = LossReport {
        l_cd: sum(|t| t.l_cd),
        l_lap: sum(|t| t.l_lap),
        l_edge: sum(|t| t.l_edge),
        l_all: tape.scalar(total),
        lambda_lap: options.lambda_lap,
        lambda_edge: options.lambda_edge,
        per_block,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::mesh::{edge_difference_operator, laplacian_operator};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn barycentric_endpoints() {
        assert_eq!(barycentric(0.0, 0.37), [1.0, 0.0, 0.0]);
        assert_eq!(barycentric(1.0, 1.0), [0.0, 0.0, 1.0]);
        assert_eq!(barycentric(1.0, 0.0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn samples_satisfy_barycentric_identity() {
        let mesh = triangle().subdivide();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::new();
        let v = tape.constant(mesh.mesh.vertex_matrix());
        let batch = sample_surface(&tape, &mesh.mesh, v, 500, &mut rng).unwrap();
        let pts = tape.value(batch.points);
        for (i, o) in batch.origins.iter().enumerate() {
            assert!((0.0..1.0).contains(&o.u) && (0.0..1.0).contains(&o.w));
            let [a, b, c] = mesh.mesh.faces()[o.face].map(|k| mesh.mesh.vertices()[k]);
            let s = o.u.sqrt();
            for k in 0..3 {
                let r = (1.0 - s) * a[k] + s * (1.0 - o.w) * b[k] + s * o.w * c[k];
                assert!((pts[[i, k]] - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_area_mesh_is_degenerate() {
        let flat = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_points(&flat, 4, &mut rng), Err(Error::DegenerateMesh(_))));
    }

    #[test]
    fn chamfer_hand_example() {
        let m = array![[0.0, 0.0, 0.0]];
        let s = array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        assert_eq!(chamfer_distance(&m, &s, ChamferReduction::Sum).unwrap(), 6.0);
        assert_eq!(chamfer_distance(&s, &m, ChamferReduction::Sum).unwrap(), 6.0);
        assert_eq!(chamfer_distance(&m, &m, ChamferReduction::Sum).unwrap(), 0.0);
        // mean variant: 1/1 + (1 + 4)/2
        assert_eq!(chamfer_distance(&m, &s, ChamferReduction::Mean).unwrap(), 3.5);
    }

    #[test]
    fn chamfer_rejects_empty() {
        let empty = Array2::zeros((0, 3));
        assert!(chamfer_distance(&empty, &array![[0.0, 0.0, 0.0]], ChamferReduction::Sum).is_err());
    }

    #[test]
    fn laplacian_path_example() {
        // path (1,0,0) - p - (-1,0,0); move p up by one
        let lap = Arc::new(laplacian_operator(3, &[[0, 1], [0, 2]]));
        let tape = Tape::new();
        let before = tape.constant(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let after = tape.constant(array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(tape.scalar(laplacian_loss(&tape, &lap, before, after).unwrap()), 3.0);
        assert_eq!(tape.scalar(laplacian_loss(&tape, &lap, before, before).unwrap()), 0.0);
    }

    #[test]
    fn laplacian_ignores_translation() {
        let mesh = triangle().subdivide().mesh;
        let lap = Arc::new(mesh.laplacian_operator());
        let moved = mesh.map_vertices(|p| [p[0] + 0.5, p[1] - 2.0, p[2] + 3.0]);
        let tape = Tape::new();
        let a = tape.constant(mesh.vertex_matrix());
        let b = tape.constant(moved.vertex_matrix());
        assert!(tape.scalar(laplacian_loss(&tape, &lap, a, b).unwrap()) < 1e-24);
    }

    #[test]
    fn edge_loss_examples() {
        let ops = Arc::new(edge_difference_operator(2, &[[0, 1]]));
        let tape = Tape::new();
        let v = tape.constant(array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(tape.scalar(edge_loss(&tape, &ops, v).unwrap()), 2.0);
        let same = tape.constant(array![[3.0, 1.0, 1.0], [3.0, 1.0, 1.0]]);
        assert_eq!(tape.scalar(edge_loss(&tape, &ops, same).unwrap()), 0.0);

        let mesh = triangle();
        let ops = Arc::new(mesh.edge_difference_operator());
        let base = tape.scalar(edge_loss(&tape, &ops, tape.constant(mesh.vertex_matrix())).unwrap());
        let scaled = mesh.vertex_matrix() * 3.0;
        let s = tape.scalar(edge_loss(&tape, &ops, tape.constant(scaled)).unwrap());
        assert!((s - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn loss_terms_combine() {
        let t = LossTerms::combine(1.0, 2.0, 3.0, 0.3, 0.1);
        assert!((t.l_all - 1.9).abs() < 1e-15);
        assert_eq!(LossTerms::combine(1.0, 0.0, 0.0, 0.3, 0.1).l_all, 1.0);
        assert_eq!(LossTerms::combine(1.0, 2.0, 3.0, 0.0, 0.0).l_all, 1.0);
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let report = gradcheck(
            |tape, p| chamfer_loss(tape, p[0], p[1], ChamferReduction::Sum),
            &[a, b],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
