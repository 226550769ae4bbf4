//! Supervised learning of the barrier-derivative mismatch.
//!
//! Rollout histories of `h` are numerically differentiated into labels, and
//! two small regressors are fitted jointly so that
//! `hdot_nominal(x, u) + act_net(x) * u + drift_net(x)` tracks the labels in
//! mean absolute error under minibatch SGD. The trained pair, together with
//! the frozen feature normalization, is the estimator the LCBF-QP consumes.

mod mlp;

pub use mlp::{DenseLayer, Mlp, MlpGrads};

use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{hdot_nominal_affine, BarrierFunction, HdotAffine};
use crate::controller::ResidualModel;
use crate::dynamics::{SegwayParams, State, Trajectory};
use crate::{Error, Result};

/// One supervision record: the sampled state/input pair and the numerically
/// differentiated barrier derivative observed there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    /// Episode the record came from (provenance).
    pub episode: u32,
    /// Time within its episode (s).
    pub t: f64,
    pub state: State,
    pub input: f64,
    pub hdot: f64,
}

/// Aggregated supervision data across episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append another dataset, stamping its records with an episode index.
    pub fn extend_tagged(&mut self, mut other: Dataset, episode: u32) {
        for r in &mut other.records {
            r.episode = episode;
        }
        self.records.append(&mut other.records);
    }

    /// Record count per episode index present in the data.
    pub fn count_for_episode(&self, episode: u32) -> usize {
        self.records.iter().filter(|r| r.episode == episode).count()
    }
}

/// Numerical differentiation of a sampled scalar history: second-order
/// central differences inside, second-order one-sided stencils at the ends.
/// Output length equals input length.
pub fn differentiate_history(h_vals: &[f64], dt: f64) -> Result<Vec<f64>> {
    if h_vals.len() < 3 {
        return Err(Error::InvalidParam {
            field: "h_vals",
            reason: format!("need at least 3 samples, got {}", h_vals.len()),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParam { field: "dt", reason: format!("must be positive, got {dt}") });
    }
    let n = h_vals.len();
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * h_vals[0] + 4.0 * h_vals[1] - h_vals[2]) / (2.0 * dt));
    for i in 1..n - 1 {
        d.push((h_vals[i + 1] - h_vals[i - 1]) / (2.0 * dt));
    }
    d.push((3.0 * h_vals[n - 1] - 4.0 * h_vals[n - 2] + h_vals[n - 3]) / (2.0 * dt));
    Ok(d)
}

/// Turn a rollout into supervision records: evaluate `h` along the sampled
/// states, differentiate, and pair label `i` with `(state_i, input_i)`. The
/// final state has no held input and is dropped, so `N` states give `N - 1`
/// records.
pub fn build_dataset(traj: &Trajectory, bf: &BarrierFunction) -> Result<Dataset> {
    let n = traj.states.len();
    if n < 2 {
        return Ok(Dataset::new());
    }
    let h: Vec<f64> = traj.states.iter().map(|s| bf.value(s)).collect();
    let labels = if n == 2 {
        // Too short for second-order stencils; a first-order difference is
        // all the information two samples carry.
        vec![(h[1] - h[0]) / traj.dt()]
    } else {
        differentiate_history(&h, traj.dt())?
    };
    let mut records = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        if !labels[i].is_finite() {
            return Err(Error::NonFinite { context: format!("hdot label at index {i}") });
        }
        records.push(Record {
            episode: 0,
            t: traj.times[i],
            state: traj.states[i],
            input: traj.inputs[i],
            hdot: labels[i],
        });
    }
    Ok(Dataset { records })
}

/// Per-feature affine normalization frozen at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 4],
    pub scale: [f64; 4],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { mean: [0.0; 4], scale: [1.0; 4] }
    }

    /// Mean/standard-deviation statistics of the given records. Features
    /// with vanishing spread keep unit scale.
    pub fn fit(records: &[Record]) -> Self {
        if records.is_empty() {
            return Self::identity();
        }
        let n = records.len() as f64;
        let mut mean = [0.0; 4];
        for r in records {
            let v = r.state.to_vector();
            for i in 0..4 {
                mean[i] += v[i];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0; 4];
        for r in records {
            let v = r.state.to_vector();
            for i in 0..4 {
                let d = v[i] - mean[i];
                var[i] += d * d;
            }
        }
        let mut scale = [1.0; 4];
        for i in 0..4 {
            let s = (var[i] / n).sqrt();
            scale[i] = if s > 1e-12 { s } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn normalize(&self, x: &State) -> [f64; 4] {
        let v = x.to_vector();
        std::array::from_fn(|i| (v[i] - self.mean[i]) / self.scale[i])
    }

    pub fn denormalize(&self, z: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| z[i] * self.scale[i] + self.mean[i])
    }
}

/// The learned correction pair plus its frozen input normalization.
///
/// Evaluation is deterministic, and the corrected derivative estimate stays
/// affine in `u` for fixed `x`, which is what keeps the filter a half-space
/// projection. Training scales the command channel by `input_scale` so both
/// networks see O(1) gradients; the scale is folded back out here, so
/// [`ResidualEstimator::eval_act`] returns the coefficient of the raw `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEstimator {
    pub act_net: Mlp,
    pub drift_net: Mlp,
    pub norm: Normalizer,
    pub input_scale: f64,
}

impl ResidualEstimator {
    /// Zero estimator: corrections vanish everywhere.
    pub fn zero(hidden: &[usize]) -> Self {
        let sizes = layer_sizes(hidden);
        Self {
            act_net: Mlp::zeros(&sizes),
            drift_net: Mlp::zeros(&sizes),
            norm: Normalizer::identity(),
            input_scale: 1.0,
        }
    }

    pub fn eval_act(&self, x: &State) -> f64 {
        self.act_net.forward(&self.norm.normalize(x))[0] / self.input_scale
    }

    pub fn eval_drift(&self, x: &State) -> f64 {
        self.drift_net.forward(&self.norm.normalize(x))[0]
    }
}

impl ResidualModel for ResidualEstimator {
    fn act_correction(&self, x: &State) -> f64 {
        self.eval_act(x)
    }

    fn drift_correction(&self, x: &State) -> f64 {
        self.eval_drift(x)
    }
}

/// Corrected barrier-derivative estimate at `(x, u)`.
pub fn estimator_eval(
    est: &ResidualEstimator,
    hdot_nom: &HdotAffine,
    x: &State,
    u: f64,
) -> f64 {
    hdot_nom.eval(u) + est.eval_act(x) * u + est.eval_drift(x)
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, epochs: 200, minibatch: 32, seed: 0, validation_fraction: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParam {
                field: "learning_rate",
                reason: format!("must be positive, got {}", self.learning_rate),
            });
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam { field: "epochs", reason: "must be at least 1".into() });
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidParam { field: "minibatch", reason: "must be at least 1".into() });
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParam {
                field: "validation_fraction",
                reason: format!("must lie in [0, 1), got {}", self.validation_fraction),
            });
        }
        Ok(())
    }
}

/// A trained estimator with its loss history.
#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub estimator: ResidualEstimator,
    /// Mean absolute error on the full training split after each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean absolute error on the held-out split, when one exists.
    pub validation_loss: Option<f64>,
}

fn layer_sizes(hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(4);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

/// Mean-absolute-error subgradient, zero at exactly zero residual.
fn mae_sign(residual: f64) -> f64 {
    if residual > 0.0 {
        1.0
    } else if residual < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct PreparedRecord {
    features: [f64; 4],
    /// Command scaled by the training-set spread.
    input_scaled: f64,
    /// `hdot_nominal(x, u) - label`; the part of the residual the networks
    /// cannot change.
    offset: f64,
}

fn mean_abs_error(
    act_net: &Mlp,
    drift_net: &Mlp,
    records: &[PreparedRecord],
    idx: &[usize],
) -> f64 {
    let mut total = 0.0;
    for &i in idx {
        let r = &records[i];
        let pred =
            act_net.forward(&r.features)[0] * r.input_scaled + drift_net.forward(&r.features)[0];
        total += (r.offset + pred).abs();
    }
    total / idx.len() as f64
}

/// Standard deviation of the held commands over the training split, guarded
/// so degenerate data keeps unit scale.
fn input_spread(records: &[Record]) -> f64 {
    if records.is_empty() {
        return 1.0;
    }
    let n = records.len() as f64;
    let mean: f64 = records.iter().map(|r| r.input).sum::<f64>() / n;
    let var: f64 = records.iter().map(|r| (r.input - mean) * (r.input - mean)).sum::<f64>() / n;
    let s = var.sqrt();
    if s > 1e-12 { s } else { 1.0 }
}

/// Fit the correction pair by empirical risk minimization: minibatch SGD on
/// the mean absolute error of the corrected derivative estimate against the
/// differentiated labels. The nominal term enters each record as a constant
/// offset, so gradients flow only through the two networks. Deterministic
/// for a fixed seed.
pub fn erm_train(
    data: &Dataset,
    bf: &BarrierFunction,
    nom_p: &SegwayParams,
    cfg: &TrainConfig,
    hidden: &[usize],
) -> Result<TrainedEstimator> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("erm_train needs at least one record"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Split off validation before fitting statistics, so normalization sees
    // training data only.
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (data.len() as f64 * cfg.validation_fraction).floor() as usize;
    let n_train = data.len() - n_val.min(data.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);

    let train_records: Vec<Record> = train_idx.iter().map(|&i| data.records[i]).collect();
    let norm = Normalizer::fit(&train_records);
    let input_scale = input_spread(&train_records);

    let prepare = |r: &Record| -> Result<PreparedRecord> {
        let hd = hdot_nominal_affine(bf, nom_p, &r.state)?;
        Ok(PreparedRecord {
            features: norm.normalize(&r.state),
            input_scaled: r.input / input_scale,
            offset: hd.eval(r.input) - r.hdot,
        })
    };
    let prepared: Vec<PreparedRecord> =
        data.records.iter().map(prepare).collect::<Result<_>>()?;

    let sizes = layer_sizes(hidden);
    let mut act_net = Mlp::new(&sizes, &mut rng);
    let mut drift_net = Mlp::new(&sizes, &mut rng);

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut shuffled: Vec<usize> = train_idx.to_vec();
    let mut act_acc = MlpGrads::zeros_like(&act_net);
    let mut drift_acc = MlpGrads::zeros_like(&drift_net);
    for epoch in 0..cfg.epochs {
        shuffled.shuffle(&mut rng);
        for batch in shuffled.chunks(cfg.minibatch) {
            act_acc.clear();
            drift_acc.clear();
            for &i in batch {
                let r = &prepared[i];
                let pred = act_net.forward(&r.features)[0] * r.input_scaled
                    + drift_net.forward(&r.features)[0];
                let sign = mae_sign(r.offset + pred);
                if sign == 0.0 {
                    continue;
                }
                act_net.gradient_into(&r.features, &[sign * r.input_scaled], &mut act_acc);
                drift_net.gradient_into(&r.features, &[sign], &mut drift_acc);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            act_net.apply_step(&act_acc, scale);
            drift_net.apply_step(&drift_acc, scale);
        }
        let loss = mean_abs_error(&act_net, &drift_net, &prepared, train_idx);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite loss at epoch {epoch}")));
        }
        epoch_loss.push(loss);
    }

    let validation_loss = if val_idx.is_empty() {
        None
    } else {
        Some(mean_abs_error(&act_net, &drift_net, &prepared, val_idx))
    };

    Ok(TrainedEstimator {
        estimator: ResidualEstimator { act_net, drift_net, norm, input_scale },
        epoch_loss,
        validation_loss,
    })
}

// ---------------------------------------------------------------------------
// Estimator snapshot format
//
// Plain text, one logical field per line. Floats are written with Rust's
// shortest round-trip formatting, so load(save(e)) == e bit for bit:
//
//   segway-estimator v1
//   norm_mean <4 floats>
//   norm_scale <4 floats>
//   input_scale <float>
//   net act <k> <size_0> ... <size_k-1>
//   layer <in> <out>
//   w <in*out floats, row-major>
//   b <out floats>
//   ...
//   net drift <k> <sizes...>
//   ...
// ---------------------------------------------------------------------------

const SNAPSHOT_HEADER: &str = "segway-estimator v1";

fn write_floats(out: &mut String, label: &str, vals: &[f64]) {
    out.push_str(label);
    for v in vals {
        out.push(' ');
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

fn net_to_text(out: &mut String, name: &str, net: &Mlp) {
    let sizes = net.layer_sizes();
    out.push_str(&format!("net {name} {}", sizes.len()));
    for s in &sizes {
        out.push_str(&format!(" {s}"));
    }
    out.push('\n');
    for layer in &net.layers {
        out.push_str(&format!("layer {} {}\n", layer.in_dim, layer.out_dim));
        write_floats(out, "w", &layer.w);
        write_floats(out, "b", &layer.b);
    }
}

impl ResidualEstimator {
    pub fn to_snapshot_string(&self) -> String {
        let mut out = String::new();
        out.push_str(SNAPSHOT_HEADER);
        out.push('\n');
        write_floats(&mut out, "norm_mean", &self.norm.mean);
        write_floats(&mut out, "norm_scale", &self.norm.scale);
        write_floats(&mut out, "input_scale", &[self.input_scale]);
        net_to_text(&mut out, "act", &self.act_net);
        net_to_text(&mut out, "drift", &self.drift_net);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_snapshot_string().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_snapshot_string(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Malformed { path: origin.to_path_buf(), reason: reason.into() };
        let mut lines = text.lines();
        if lines.next() != Some(SNAPSHOT_HEADER) {
            return Err(bad("missing or unsupported snapshot header"));
        }
        let parse_floats = |line: &str, label: &str| -> Result<Vec<f64>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(label) {
                return Err(bad(&format!("expected `{label}` line")));
            }
            parts
                .map(|p| p.parse::<f64>().map_err(|_| bad(&format!("bad float in `{label}`"))))
                .collect()
        };
        let mean_v = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, "norm_mean")?;
        let scale_v = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, "norm_scale")?;
        if mean_v.len() != 4 || scale_v.len() != 4 {
            return Err(bad("normalization must carry 4 entries per feature line"));
        }
        let norm = Normalizer {
            mean: std::array::from_fn(|i| mean_v[i]),
            scale: std::array::from_fn(|i| scale_v[i]),
        };
        let scale_line = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, "input_scale")?;
        let [input_scale] = scale_line[..] else {
            return Err(bad("input_scale must carry exactly one value"));
        };

        let mut read_net = |name: &str| -> Result<Mlp> {
            let header = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = header.split_whitespace();
            if parts.next() != Some("net") || parts.next() != Some(name) {
                return Err(bad(&format!("expected `net {name}` header")));
            }
            let k: usize = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad("bad layer count"))?;
            let sizes: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| bad("bad layer size")))
                .collect::<Result<_>>()?;
            if sizes.len() != k || k < 2 {
                return Err(bad("layer-size header inconsistent"));
            }
            let mut layers = Vec::with_capacity(k - 1);
            for pair in sizes.windows(2) {
                let header = lines.next().ok_or_else(|| bad("truncated"))?;
                if header != format!("layer {} {}", pair[0], pair[1]) {
                    return Err(bad("layer header does not match sizes"));
                }
                let w = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, "w")?;
                let b = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, "b")?;
                if w.len() != pair[0] * pair[1] || b.len() != pair[1] {
                    return Err(bad("layer parameter count mismatch"));
                }
                layers.push(DenseLayer { in_dim: pair[0], out_dim: pair[1], w, b });
            }
            Ok(Mlp { layers })
        };
        let act_net = read_net("act")?;
        let drift_net = read_net("drift")?;
        Ok(Self { act_net, drift_net, norm, input_scale })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        BufReader::new(f)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::from_snapshot_string(&text, path)
    }
}
