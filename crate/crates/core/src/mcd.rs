//! Monte Carlo dropout regression: training with Adam, stochastic forward
//! passes at prediction time, and combination of independently trained members.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mlp::{backward, forward, forward_cached, init_mlp, Activation, DropoutMasks, MlpParams};
use crate::optim::AdamState;
use crate::predictive::{PredictiveGrid, SampleMoments};
use crate::rng::RandomStream;

pub const METHOD_TAG: &str = "mcd";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    /// Drop probability on hidden units.
    pub rate: f64,
    pub apply_at_training: bool,
    pub apply_at_inference: bool,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            rate: 0.15,
            apply_at_training: true,
            apply_at_inference: true,
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    Full,
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch: BatchPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2: 1e-4,
            epochs: 5000,
            batch: BatchPolicy::Full,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2 coefficient {} must be non-negative", self.l2)));
        }
        if self.batch == BatchPolicy::MiniBatch(0) {
            return Err(Error::InvalidConfig("mini-batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Layer sizes `[input, hidden, hidden, 1]`.
pub fn architecture(input_dim: usize, hidden: usize) -> Vec<usize> {
    vec![input_dim, hidden, hidden, 1]
}

/// Mean squared error plus `l2·‖W‖²` (weights only) and its exact gradient.
pub fn loss_and_grad(
    params: &MlpParams,
    x: &DenseMatrix,
    y: &[f64],
    l2: f64,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, MlpParams)> {
    let n = y.len();
    if n == 0 || x.rows() != n {
        return Err(Error::DimensionMismatch(format!("batch of {} inputs and {n} targets", x.rows())));
    }
    let (out, cache) = forward_cached(params, Activation::Relu, x, masks)?;
    let residual: Vec<f64> = out.iter().zip(y).map(|(f, t)| f - t).collect();
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let loss = mse + l2 * params.weight_norm_sq();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { history: Vec::new() });
    }
    let d_out: Vec<f64> = residual.iter().map(|r| 2.0 * r / n as f64).collect();
    let mut grad = backward(params, Activation::Relu, &cache, &d_out, masks);
    if l2 > 0.0 {
        for l in 0..params.layer_count() {
            for i in params.weight_range(l) {
                grad[i] += 2.0 * l2 * params.values()[i];
            }
        }
    }
    Ok((loss, MlpParams::from_values(params.sizes(), grad)?))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Mean optimisation loss over the steps of each epoch.
    pub history: Vec<f64>,
}

/// Fits a dropout network on the dataset's standardized coordinates.
/// With train-time dropout every step draws fresh per-example masks.
pub fn train(
    dataset: &Dataset,
    sizes: &[usize],
    dropout: &DropoutConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    dropout.validate()?;
    cfg.validate()?;
    if sizes.first() != Some(&dataset.dim()) || sizes.last() != Some(&1) {
        return Err(Error::DimensionMismatch(format!(
            "architecture {sizes:?} does not map {}-d inputs to a scalar",
            dataset.dim()
        )));
    }
    let root = RandomStream::new(cfg.seed).fork_named("mcd");
    let mut params = init_mlp(sizes, &mut root.fork_named("init"))?;
    let mut mask_stream = root.fork_named("train-dropout");
    let mut shuffle_stream = root.fork_named("shuffle");

    let x = dataset.standardized_inputs();
    let y = dataset.standardized_targets();
    let n = y.len();
    let batch_size = match cfg.batch {
        BatchPolicy::Full => n,
        BatchPolicy::MiniBatch(b) => b.min(n),
    };
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..cfg.epochs {
        if batch_size < n {
            shuffle_stream.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch_size) {
            let (bx, by) = if batch_size == n {
                (None, None)
            } else {
                let mut xs = Vec::with_capacity(chunk.len() * x.cols());
                for &i in chunk {
                    xs.extend_from_slice(x.row(i));
                }
                (
                    Some(DenseMatrix::from_vec(chunk.len(), x.cols(), xs)?),
                    Some(chunk.iter().map(|&i| y[i]).collect::<Vec<_>>()),
                )
            };
            let bx = bx.as_ref().unwrap_or(&x);
            let by = by.as_deref().unwrap_or(&y);
            let masks = dropout
                .apply_at_training
                .then(|| DropoutMasks::sample(&params, dropout.rate, bx.rows(), &mut mask_stream));
            let (loss, grad) = match loss_and_grad(&params, bx, by, cfg.l2, masks.as_ref()) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::NonFiniteLoss { history }),
                Err(e) => return Err(e),
            };
            if let Err(Error::NonFiniteGradient(_)) = adam.step(params.values_mut(), grad.values()) {
                return Err(Error::NonFiniteLoss { history });
            }
            epoch_loss += loss;
            steps += 1;
        }
        history.push(epoch_loss / steps as f64);
    }
    Ok(TrainOutcome { params, history })
}

/// Mean and population standard deviation over `passes` masked forward
/// passes. Pass `t` draws one mask per hidden layer from `stream.fork(t)` and
/// shares it across the grid, so each pass evaluates one thinned network.
pub fn mc_predict(
    params: &MlpParams,
    grid: &DenseMatrix,
    standardizer: &Standardizer,
    dropout: &DropoutConfig,
    passes: usize,
    stream: &RandomStream,
) -> Result<PredictiveGrid> {
    if passes < 2 {
        return Err(Error::InvalidPassCount(passes));
    }
    dropout.validate()?;
    if !dropout.apply_at_inference {
        return Err(Error::InvalidConfig("Monte Carlo prediction needs dropout at inference".into()));
    }
    let x = standardizer.apply_inputs(grid);
    let mut moments = SampleMoments::new(grid.rows());
    for t in 0..passes {
        let masks = DropoutMasks::sample(params, dropout.rate, 1, &mut stream.fork(t as u64));
        let out = forward(params, Activation::Relu, &x, Some(&masks))?;
        moments.push(&out);
    }
    let (mean, var) = moments.finish();
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    PredictiveGrid::from_standardized(grid.clone(), &mean, &std, standardizer, METHOD_TAG)
}

/// Deterministic (dropout-free) network output in original units.
pub fn predict_deterministic(params: &MlpParams, grid: &DenseMatrix, standardizer: &Standardizer) -> Result<Vec<f64>> {
    let out = forward(params, Activation::Relu, &standardizer.apply_inputs(grid), None)?;
    Ok(standardizer.invert_targets(&out))
}

/// Equal-weight mixture of member predictions. The mixture variance is the
/// mean member variance plus the variance of the member means.
pub fn ensemble_combine(grids: &[PredictiveGrid]) -> Result<PredictiveGrid> {
    if grids.len() < 2 {
        return Err(Error::InsufficientMembers(grids.len()));
    }
    let first = &grids[0];
    if grids.iter().any(|g| !g.same_inputs(first)) {
        return Err(Error::GridMismatch);
    }
    let k = grids.len() as f64;
    let n = first.len();
    let mut mean = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    for i in 0..n {
        let m0 = first.mean[i];
        let v0 = first.std[i] * first.std[i];
        let m = m0 + grids.iter().map(|g| g.mean[i] - m0).sum::<f64>() / k;
        let within = v0 + grids.iter().map(|g| g.std[i] * g.std[i] - v0).sum::<f64>() / k;
        let between = grids.iter().map(|g| (g.mean[i] - m).powi(2)).sum::<f64>() / k;
        mean.push(m);
        std.push((within + between).max(0.0).sqrt());
    }
    PredictiveGrid::new(first.inputs.clone(), mean, std, format!("ensemble-{}", first.method))
}

const CHECKPOINT_HEADER: &str = "uqbench-mlp 1";

/// Text checkpoint: a header line, `sizes` and `dropout` lines, then for each
/// layer a `weights <rows> <cols>` line followed by one line per weight row and
/// a `bias <len>` line followed by the biases. Values use shortest
/// round-trip formatting, so reloading is exact.
pub fn write_checkpoint(params: &MlpParams, dropout_rate: f64, path: &Path) -> Result<()> {
    let mut s = String::new();
    let sizes = params.sizes();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(s, "{CHECKPOINT_HEADER}").ok();
    writeln!(s, "sizes {}", sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).ok();
    writeln!(s, "dropout {dropout_rate}").ok();
    for l in 0..params.layer_count() {
        writeln!(s, "weights {} {}", sizes[l], sizes[l + 1]).ok();
        for row in params.weights(l).chunks(sizes[l + 1]) {
            writeln!(s, "{}", join(row)).ok();
        }
        writeln!(s, "bias {}", sizes[l + 1]).ok();
        writeln!(s, "{}", join(params.bias(l))).ok();
    }
    fs::write(path, s)?;
    Ok(())
}

/// Returns the parameters and the stored dropout rate.
pub fn read_checkpoint(path: &Path) -> Result<(MlpParams, f64)> {
    let text = fs::read_to_string(path)?;
    let bad = |what: &str| Error::Parse(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(bad("missing checkpoint header"));
    }
    let parse_list = |line: Option<&str>, key: &str| -> Result<Vec<String>> {
        let line = line.ok_or_else(|| bad(&format!("missing {key} line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(&format!("expected {key} line")));
        }
        Ok(parts.map(String::from).collect())
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
    let sizes: Vec<usize> = parse_list(lines.next(), "sizes")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad("bad layer size")))
        .collect::<Result<_>>()?;
    let rate = num(parse_list(lines.next(), "dropout")?.first().ok_or_else(|| bad("empty dropout line"))?)?;
    let mut params = MlpParams::zeros(&sizes)?;
    for l in 0..params.layer_count() {
        let dims = parse_list(lines.next(), "weights")?;
        if dims != [sizes[l].to_string(), sizes[l + 1].to_string()] {
            return Err(bad(&format!("layer {l} weight shape does not match sizes")));
        }
        let mut w = Vec::with_capacity(sizes[l] * sizes[l + 1]);
        for _ in 0..sizes[l] {
            let line = lines.next().ok_or_else(|| bad("truncated weights"))?;
            for tok in line.split_whitespace() {
                w.push(num(tok)?);
            }
        }
        if w.len() != sizes[l] * sizes[l + 1] {
            return Err(bad(&format!("layer {l} has the wrong number of weights")));
        }
        params.weights_mut(l).copy_from_slice(&w);
        parse_list(lines.next(), "bias")?;
        let b: Vec<f64> = lines
            .next()
            .ok_or_else(|| bad("truncated bias"))?
            .split_whitespace()
            .map(num)
            .collect::<Result<_>>()?;
        if b.len() != sizes[l + 1] {
            return Err(bad(&format!("layer {l} has the wrong number of biases")));
        }
        params.bias_mut(l).copy_from_slice(&b);
    }
    Ok((params, rate))
}
