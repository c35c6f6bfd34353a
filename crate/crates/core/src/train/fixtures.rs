use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{DatasetPair, Source};
use super::derive_seed;
use crate::error::{Error, Result};
use crate::mesh::{icosphere, superquadric, ObbNode, Point3, TriangleMesh};

/// Subdivision level of every fixture target (642 vertices per part).
const TARGET_SUBDIVISIONS: usize = 3;

/// Procedural dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FixtureKind {
    /// Unit cube centered at the origin to the unit icosphere.
    CubeToSphere,
    /// Random oriented box to the ellipsoid inscribed in it.
    BoxToEllipsoid,
    /// Seat and back boxes to two rounded slabs.
    TwoBoxChair,
    /// Random oriented box to a random superquadric inscribed in it.
    RandomBoxSmooth,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 4] = [
        FixtureKind::CubeToSphere,
        FixtureKind::BoxToEllipsoid,
        FixtureKind::TwoBoxChair,
        FixtureKind::RandomBoxSmooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::CubeToSphere => "cube-to-sphere",
            FixtureKind::BoxToEllipsoid => "box-to-ellipsoid",
            FixtureKind::TwoBoxChair => "two-box-chair",
            FixtureKind::RandomBoxSmooth => "random-box-smooth",
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownFixture {
                kind: s.to_string(),
                valid: Self::ALL.map(FixtureKind::name).join(", "),
            })
    }
}

/// One pair of the named kind.
pub fn make_fixtures(kind: &str, seed: u64) -> Result<Vec<DatasetPair>> {
    make_fixture_set(kind.parse()?, seed, 1)
}

/// `count` pairs of one kind, deterministic in `seed`.
pub fn make_fixture_set(kind: FixtureKind, seed: u64, count: usize) -> Result<Vec<DatasetPair>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, kind as u64, i as u64));
            let (source, target) = match kind {
                FixtureKind::CubeToSphere => cube_to_sphere(),
                FixtureKind::BoxToEllipsoid => rounded_box(&mut rng, 2.0)?,
                FixtureKind::TwoBoxChair => chair(&mut rng)?,
                FixtureKind::RandomBoxSmooth => {
                    let exponent = rng.gen_range(2.5..6.0);
                    rounded_box(&mut rng, exponent)?
                }
            };
            DatasetPair::new(format!("{kind}-{seed}-{i}"), source, target)
        })
        .collect()
}

fn cube_to_sphere() -> (Source, TriangleMesh) {
    let cube = ObbNode::axis_aligned([0.0; 3], [0.5; 3]).expect("unit cube");
    (
        Source::Boxes {
            tree: cube,
            subdivisions: 0,
        },
        icosphere(TARGET_SUBDIVISIONS),
    )
}

/// Uniform random rotation (Shoemake); rows are the rotated axes.
fn random_axes(rng: &mut impl Rng) -> [Point3; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    ));
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    [0, 1, 2].map(|i| [m[(0, i)], m[(1, i)], m[(2, i)]])
}

/// Superquadric surface filling `node`, placed in world space.
fn smooth_part(node: &ObbNode, exponent: f64) -> TriangleMesh {
    superquadric(&icosphere(TARGET_SUBDIVISIONS), node.extents(), exponent).map_vertices(|p| {
        let local = [0, 1, 2].map(|k| p[k] / node.extents()[k]);
        node.to_world(local)
    })
}

fn rounded_box(rng: &mut impl Rng, exponent: f64) -> Result<(Source, TriangleMesh)> {
    let extents = [rng.gen_range(0.7..1.0), rng.gen_range(0.45..0.65), rng.gen_range(0.25..0.4)];
    let center = [0, 1, 2].map(|_| rng.gen_range(-0.2..0.2));
    let node = ObbNode::new(center, random_axes(rng), extents)?;
    let target = smooth_part(&node, exponent);
    Ok((
        Source::Boxes {
            tree: node,
            subdivisions: 0,
        },
        target,
    ))
}

fn chair(rng: &mut impl Rng) -> Result<(Source, TriangleMesh)> {
    let mut jitter = |x: f64| x * rng.gen_range(0.9..1.1);
    let (width, depth) = (jitter(0.5), jitter(0.5));
    let (seat_half, back_half, back_thickness) = (jitter(0.1), jitter(0.4), jitter(0.08));
    let seat = ObbNode::axis_aligned([0.0; 3], [width, seat_half, depth])?;
    let back = ObbNode::axis_aligned(
        [0.0, seat_half + back_half, -depth + back_thickness],
        [width, back_half, back_thickness],
    )?;
    let target = TriangleMesh::merge(&[smooth_part(&seat, 6.0), smooth_part(&back, 6.0)])?;
    let tree = ObbNode::group(vec![seat, back])?;
    Ok((
        Source::Boxes {
            tree,
            subdivisions: 0,
        },
        target,
    ))
}
