//! Adam training of a [`DeformationNetwork`] on box/target pairs.

mod dataset;
mod fixtures;

use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{sample_points, total_loss, ChamferReduction, LossOptions, LossReport};
use crate::mesh::Normalization;
use crate::metrics::sampled_chamfer;
use crate::tagcn::{DeformationNetwork, NetworkConfig};

pub use dataset::{load_dataset, save_dataset, DatasetPair, PairManifest, Source, SourceManifest};
pub use fixtures::{make_fixture_set, make_fixtures, FixtureKind};

/// Optimizer, loss and architecture settings of a training run.
///
/// The JSON form has exactly the serialized keys below; the two skipped
/// switches are programmatic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub iterations: usize,
    pub eval_every: usize,
    pub lambda_lap: f64,
    pub lambda_edge: f64,
    pub samples: usize,
    pub seed: u64,
    pub hops: usize,
    pub channels: usize,
    pub layers_per_block: usize,
    pub blocks: usize,
    pub normalization: Normalization,
    pub residual_every: usize,
    pub use_bias: bool,
    /// Supervise every block (true) or only the last one.
    #[serde(skip)]
    pub supervise_all_blocks: bool,
    #[serde(skip)]
    pub reduction: ChamferReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            iterations: 2000,
            eval_every: 10,
            lambda_lap: 0.3,
            lambda_edge: 0.1,
            samples: 1000,
            seed: 0,
            hops: net.hops,
            channels: net.channels,
            layers_per_block: net.layers_per_block,
            blocks: net.blocks,
            normalization: net.normalization,
            residual_every: net.residual_every,
            use_bias: net.use_bias,
            supervise_all_blocks: true,
            reduction: ChamferReduction::Sum,
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    /// Zero iterations is accepted and yields the untrained network.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)")?;
        check(self.eps > 0.0, "eps must be positive")?;
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative")?;
        check(self.eval_every >= 1, "eval_every must be at least 1")?;
        check(self.samples >= 1, "samples must be at least 1")?;
        check(
            self.lambda_lap >= 0.0 && self.lambda_edge >= 0.0,
            "loss weights must be non-negative",
        )?;
        self.network_config().validate()
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            hops: self.hops,
            channels: self.channels,
            layers_per_block: self.layers_per_block,
            blocks: self.blocks,
            normalization: self.normalization,
            residual_every: self.residual_every,
            use_bias: self.use_bias,
            seed: self.seed,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda_lap: self.lambda_lap,
            lambda_edge: self.lambda_edge,
            samples: self.samples,
            reduction: self.reduction,
            supervise_all_blocks: self.supervise_all_blocks,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let m: Vec<Array2<f64>> = params.into_iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
///
/// `names[i]` labels `params[i]` in the error raised for a non-finite
/// gradient; nothing is modified in that case.
pub fn adam_step(
    params: &mut [&mut Array2<f64>],
    grads: &[Array2<f64>],
    names: &[String],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::Config(format!(
            "adam_step: {} params, {} grads, {} moments, {} names",
            params.len(),
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.dim() != g.dim() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.dim(),
                right: g.dim(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, lr, eps, wd) = (config.beta1, config.beta2, config.lr, config.eps, config.weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        ndarray::Zip::from(&mut **p)
            .and(&grads[i])
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
    Ok(())
}

/// One line of the loss curve. `val_cd` is present on evaluation iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub l_cd: f64,
    pub l_lap: f64,
    pub l_edge: f64,
    #[serde(rename = "L_all")]
    pub l_all: f64,
    pub val_cd: Option<f64>,
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Parse(format!("loss curve: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    /// Network with the lowest validation chamfer (earliest on ties).
    pub best: DeformationNetwork,
    pub best_iteration: usize,
    pub best_val_cd: f64,
    /// Parameters after the last completed update.
    pub last: DeformationNetwork,
    pub curve: Vec<CurveRow>,
    /// Why the run stopped early, if it did. `best` and `last` then hold
    /// the last finite state.
    pub failure: Option<Error>,
}

impl TrainOutcome {
    /// Validation chamfer before any update.
    pub fn initial_val_cd(&self) -> f64 {
        self.curve[0].val_cd.expect("iteration 0 is always evaluated")
    }

    /// Validation chamfer of the last evaluated iteration.
    pub fn final_val_cd(&self) -> f64 {
        self.curve
            .iter()
            .rev()
            .find_map(|r| r.val_cd)
            .expect("iteration 0 is always evaluated")
    }
}

/// Deterministic per-(iteration, pair) seed.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const VALIDATION_STREAM: u64 = u64::MAX;

struct Prepared<'a> {
    pair: &'a DatasetPair,
    initial: crate::mesh::TriangleMesh,
    plan: crate::tagcn::ForwardPlan,
}

/// Loss and parameter gradients summed over all pairs, in pair order.
fn loss_and_gradients(
    net: &DeformationNetwork,
    prepared: &[Prepared<'_>],
    config: &TrainConfig,
    iteration: usize,
    with_grad: bool,
) -> Result<(LossReport, Option<Vec<Array2<f64>>>)> {
    let options = config.loss_options();
    let per_pair = |(i, p): (usize, &Prepared<'_>)| -> Result<(LossReport, Option<Vec<Array2<f64>>>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, iteration as u64, i as u64));
        let target = sample_points(&p.pair.target, config.samples, &mut rng)?;
        let tape = Tape::new();
        let params = if with_grad { net.bind(&tape) } else { net.bind_constant(&tape) };
        let out = net.forward(&tape, &params, &p.plan, &p.initial)?;
        let (loss, report) = total_loss(&tape, &out, &p.plan, &target, &options, &mut rng)?;
        if !report.l_all.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss of pair {} at iteration {iteration}",
                p.pair.id
            )));
        }
        let grads = if with_grad {
            let g = tape.backward(loss)?;
            Some(params.iter().map(|&t| g.wrt(t).clone()).collect())
        } else {
            None
        };
        Ok((report, grads))
    };
    let results: Vec<_> = if prepared.len() > 1 {
        prepared.par_iter().enumerate().map(per_pair).collect()
    } else {
        prepared.iter().enumerate().map(per_pair).collect()
    };

    let mut total: Option<(LossReport, Option<Vec<Array2<f64>>>)> = None;
    for r in results {
        let (report, grads) = r?;
        total = Some(match total {
            None => (report, grads),
            Some((mut acc, acc_grads)) => {
                acc.l_cd += report.l_cd;
                acc.l_lap += report.l_lap;
                acc.l_edge += report.l_edge;
                acc.l_all += report.l_all;
                for (a, b) in acc.per_block.iter_mut().zip(&report.per_block) {
                    a.l_cd += b.l_cd;
                    a.l_lap += b.l_lap;
                    a.l_edge += b.l_edge;
                    a.l_all += b.l_all;
                }
                let grads = match (acc_grads, grads) {
                    (Some(mut a), Some(b)) => {
                        for (x, y) in a.iter_mut().zip(&b) {
                            *x += y;
                        }
                        Some(a)
                    }
                    _ => None,
                };
                (acc, grads)
            }
        });
    }
    total.ok_or(Error::EmptyInput("training dataset"))
}

/// Mean over pairs of the sampled chamfer between the last block's
/// prediction and the target, with fixed sampling seeds.
fn validation_chamfer(net: &DeformationNetwork, prepared: &[Prepared<'_>], config: &TrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    for (i, p) in prepared.iter().enumerate() {
        let meshes = net.deform(&p.initial)?;
        let pred = meshes.last().expect("network has blocks");
        let seed = derive_seed(config.seed, VALIDATION_STREAM, i as u64);
        sum += sampled_chamfer(pred, &p.pair.target, config.samples, seed, config.reduction)?;
    }
    Ok(sum / prepared.len() as f64)
}

/// Trains `net` on `dataset` for `config.iterations` Adam steps.
///
/// Row `i` of the curve holds the loss of the parameters after `i` updates;
/// validation runs on iteration 0, every `eval_every` iterations and after
/// the last update. A non-finite loss or gradient stops the run and is
/// reported in [`TrainOutcome::failure`].
pub fn train(net: DeformationNetwork, dataset: &[DatasetPair], config: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    config.validate()?;
    let prepared: Vec<Prepared<'_>> = dataset
        .iter()
        .map(|pair| {
            let initial = pair.source.mesh();
            let plan = net.plan(&initial)?;
            Ok(Prepared { pair, initial, plan })
        })
        .collect::<Result<_>>()?;

    let names = net.parameter_names();
    let mut state = AdamState::new(net.parameters());
    let mut net = net;
    let mut curve = Vec::with_capacity(config.iterations + 1);
    let mut best = (net.clone(), 0, f64::INFINITY);
    let mut failure = None;

    for iteration in 0..=config.iterations {
        let is_last = iteration == config.iterations;
        let step = loss_and_gradients(&net, &prepared, config, iteration, !is_last);
        let (report, grads) = match step {
            Ok(r) => r,
            Err(e) if e.is_numerical() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let val_cd = if iteration % config.eval_every == 0 || is_last {
            let v = match validation_chamfer(&net, &prepared, config) {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    failure = Some(Error::NonFinite(format!("validation chamfer {v} at iteration {iteration}")));
                    break;
                }
                Err(e) if e.is_numerical() => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            };
            if v < best.2 {
                best = (net.clone(), iteration, v);
            }
            Some(v)
        } else {
            None
        };
        log::debug!(
            "iteration {iteration}: l_cd {:.6} l_lap {:.6} l_edge {:.6} L_all {:.6}",
            report.l_cd,
            report.l_lap,
            report.l_edge,
            report.l_all
        );
        curve.push(CurveRow {
            iteration,
            l_cd: report.l_cd,
            l_lap: report.l_lap,
            l_edge: report.l_edge,
            l_all: report.l_all,
            val_cd,
        });
        if let Some(grads) = grads {
            let mut params: Vec<&mut Array2<f64>> = net.parameters_mut().collect();
            if let Err(e) = adam_step(&mut params, &grads, &names, &mut state, config) {
                failure = Some(e);
                break;
            }
        }
    }
    let (best, best_iteration, best_val_cd) = best;
    Ok(TrainOutcome {
        best,
        best_iteration,
        best_val_cd,
        last: net,
        curve,
        failure,
    })
}
