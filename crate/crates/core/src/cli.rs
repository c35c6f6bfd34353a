//! Command-line front end: `stdnet <subcommand> [flags]`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{gradcheck, Activation, GradcheckReport};
use crate::error::Result;
use crate::losses::{chamfer_loss, draw_samples, edge_loss, laplacian_loss, sampling_operator, ChamferReduction};
use crate::mesh::{icosphere, mesh_structure, obj, AdjacencyOperator, Normalization, ObbNode, TriangleMesh};
use crate::metrics::{evaluate, EvalConfig};
use crate::tagcn::{DeformationNetwork, TagcnLayer};
use crate::train::{load_dataset, make_fixtures, save_dataset, train, write_curve_csv, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "stdnet", version, about = "Deform meshed bounding boxes into target surfaces")]
struct Cli {
    /// Suppress progress output on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural dataset (OBJ meshes plus JSON manifests).
    Fixtures {
        /// cube-to-sphere, box-to-ellipsoid, two-box-chair or random-box-smooth.
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mesh an oriented box tree given as JSON.
    Meshbox {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        subdivisions: usize,
        /// Output OBJ file (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network and write `checkpoint.stdn` and `loss.csv`.
    Train {
        /// Dataset manifest (`dataset.json` or a single pair JSON).
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deform a box JSON or mesh OBJ and write one OBJ per block.
    Deform {
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        subdivisions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; prints JSON lines.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Output file (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients of every loss and layer with
    /// central differences; prints a JSON report.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// One round of midpoint subdivision of an OBJ mesh.
    Subdivide {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if !cli.quiet {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text)?;
        }
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_obj(path: &Path) -> Result<TriangleMesh> {
    obj::read(BufReader::new(fs::File::open(path)?))
}

fn load_checkpoint(path: &Path) -> Result<DeformationNetwork> {
    DeformationNetwork::load(BufReader::new(fs::File::open(path)?))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Fixtures { kind, seed, out } => {
            let pairs = make_fixtures(&kind, seed)?;
            let manifest = save_dataset(&out, &pairs)?;
            log::info!("wrote {} pair(s), manifest {}", pairs.len(), manifest.display());
            Ok(EXIT_OK)
        }
        Command::Meshbox {
            input,
            subdivisions,
            out,
        } => {
            let tree: ObbNode = serde_json::from_str(&fs::read_to_string(&input)?)?;
            write_output(out.as_deref(), &obj::to_string(&mesh_structure(&tree, subdivisions)))?;
            Ok(EXIT_OK)
        }
        Command::Train {
            dataset,
            config,
            seed,
            out,
        } => {
            let mut config = match config {
                Some(path) => TrainConfig::from_json(&fs::read_to_string(path)?)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let pairs = load_dataset(&dataset)?;
            let net = DeformationNetwork::new(config.network_config())?;
            log::info!(
                "training {} parameters on {} pair(s) for {} iterations",
                net.parameter_count(),
                pairs.len(),
                config.iterations
            );
            let outcome = train(net, &pairs, &config)?;
            fs::create_dir_all(&out)?;
            let mut csv = Vec::new();
            write_curve_csv(&outcome.curve, &mut csv)?;
            fs::write(out.join("loss.csv"), csv)?;
            let mut ckpt = Vec::new();
            outcome.best.save(&mut ckpt)?;
            fs::write(out.join("checkpoint.stdn"), ckpt)?;
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
            log::info!(
                "validation chamfer {:.6} -> {:.6}, best {:.6} at iteration {}",
                outcome.initial_val_cd(),
                outcome.final_val_cd(),
                outcome.best_val_cd,
                outcome.best_iteration
            );
            match outcome.failure {
                Some(e) => Err(e),
                None => Ok(EXIT_OK),
            }
        }
        Command::Deform {
            checkpoint,
            input,
            subdivisions,
            out,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let is_obj = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
            let initial = if is_obj {
                read_obj(&input)?
            } else {
                let tree: ObbNode = serde_json::from_str(&fs::read_to_string(&input)?)?;
                mesh_structure(&tree, subdivisions)
            };
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "mesh".into());
            fs::create_dir_all(&out)?;
            for (i, mesh) in net.deform(&initial)?.iter().enumerate() {
                fs::write(out.join(format!("{stem}.block{}.obj", i + 1)), obj::to_string(mesh))?;
            }
            Ok(EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            dataset,
            seed,
            resolution,
            threshold,
            out,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let pairs = load_dataset(&dataset)?;
            let config = EvalConfig {
                seed,
                resolution,
                threshold,
                ..EvalConfig::default()
            };
            let report = evaluate(&net, &pairs, &config)?;
            write_output(out.as_deref(), &report.to_json_lines()?)?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed, threshold } => {
            let suite = gradcheck_suite(seed, threshold)?;
            println!("{}", serde_json::to_string_pretty(&suite)?);
            if suite.passed {
                Ok(EXIT_OK)
            } else {
                eprintln!("gradient check failed: max relative error {:.3e}", suite.max_relative_error);
                Ok(EXIT_NUMERICAL)
            }
        }
        Command::Subdivide { input, out } => {
            let mesh = read_obj(&input)?;
            write_output(out.as_deref(), &obj::to_string(&mesh.subdivide().mesh))?;
            Ok(EXIT_OK)
        }
    }
}

/// Finite-difference step used by the gradient suite.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Outcome of [`gradcheck_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct GradcheckSuite {
    pub seed: u64,
    pub threshold: f64,
    pub max_relative_error: f64,
    pub passed: bool,
    pub checks: Vec<(String, GradcheckReport)>,
}

/// Random closed mesh with at most 12 vertices: a jittered octahedron.
fn jittered_octahedron(rng: &mut impl Rng) -> TriangleMesh {
    let base = [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let vertices = base
        .iter()
        .map(|p: &[f64; 3]| p.map(|c| c + rng.gen_range(-0.2..0.2)))
        .collect();
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriangleMesh::new(vertices, faces).expect("octahedron is valid")
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Gradient checks of a TAGCN layer (ReLU and identity), the chamfer,
/// Laplacian and edge losses, and the sampled chamfer through the
/// barycentric operator, all on seeded random meshes with at most 12
/// vertices.
pub fn gradcheck_suite(seed: u64, threshold: f64) -> Result<GradcheckSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = jittered_octahedron(&mut rng);
    let ico = icosphere(0);
    let jittered = ico.vertices().iter().map(|p| p.map(|c| 0.8 * c + rng.gen_range(-0.1..0.1))).collect();
    let target = ico.with_vertices(jittered)?;
    let n = mesh.vertex_count();
    let adj = AdjacencyOperator::build(&mesh, 2, Normalization::Symmetric)?;
    let lap = Arc::new(mesh.laplacian_operator());
    let edges = Arc::new(mesh.edge_difference_operator());
    let mut checks = Vec::new();

    for activation in [Activation::Relu, Activation::Identity] {
        let layer = TagcnLayer::new(4, 3, 2, true, activation, &mut rng);
        let mut params = vec![random_matrix(&mut rng, n, 4)];
        params.extend(layer.weights().iter().cloned());
        params.push(random_matrix(&mut rng, 1, 3));
        let report = gradcheck(
            |tape, p| {
                let out = layer.forward_bound(tape, &adj, p[0], &p[1..])?;
                let probe = tape.constant(Array2::from_shape_fn((n, 3), |(i, j)| ((i * 3 + j) as f64).sin()));
                let prod = tape.sub(out, probe)?;
                Ok(tape.sum(tape.square(prod)))
            },
            &params,
            GRADCHECK_STEP,
            threshold,
        )?;
        checks.push((format!("tagcn_layer_{activation:?}").to_lowercase(), report));
    }

    let a = random_matrix(&mut rng, n, 3);
    let b = target.vertex_matrix();
    checks.push((
        "chamfer".into(),
        gradcheck(
            |tape, p| chamfer_loss(tape, p[0], p[1], ChamferReduction::Sum),
            &[a.clone(), b.clone()],
            GRADCHECK_STEP,
            threshold,
        )?,
    ));
    let before = mesh.vertex_matrix();
    let after = &before + &random_matrix(&mut rng, n, 3).mapv(|x| 0.3 * x);
    checks.push((
        "laplacian".into(),
        gradcheck(
            |tape, p| laplacian_loss(tape, &lap, p[0], p[1]),
            &[before.clone(), after],
            GRADCHECK_STEP,
            threshold,
        )?,
    ));
    checks.push((
        "edge".into(),
        gradcheck(|tape, p| edge_loss(tape, &edges, p[0]), std::slice::from_ref(&before), GRADCHECK_STEP, threshold)?,
    ));
    let sample_seed: u64 = rng.gen();
    checks.push((
        "sampled_chamfer".into(),
        gradcheck(
            |tape, p| {
                // the sample draw depends on the face areas, so the draw is
                // fixed at the unperturbed geometry
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                let origins = draw_samples(&mesh, 64, &mut rng)?;
                let op = Arc::new(sampling_operator(&mesh, &origins));
                let pts = tape.sparse_matmul(&op, p[0])?;
                let target = tape.constant(b.clone());
                chamfer_loss(tape, pts, target, ChamferReduction::Sum)
            },
            &[before],
            GRADCHECK_STEP,
            threshold,
        )?,
    ));

    let max_relative_error = checks.iter().map(|(_, r)| r.max_relative_error).fold(0.0, f64::max);
    Ok(GradcheckSuite {
        seed,
        threshold,
        max_relative_error,
        passed: checks.iter().all(|(_, r)| r.passed),
        checks,
    })
}
