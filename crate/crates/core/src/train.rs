//! Adam training loop, evaluation metrics and the architecture comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use octforce_autodiff::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{stats, SampleSource};
use crate::error::{DatasetError, TrainError};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::{build, ArchId, LayerSpec, Model, ModelParams};
use crate::sim::derive_seed;
use crate::streams::Normalizer;

type Result<T> = std::result::Result<T, TrainError>;

const INIT_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;
const COMPARE_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Divide labels by the training maximum before fitting.
    pub scale_labels: bool,
    /// Samples per forward/backward pass; a batch is accumulated over chunks.
    pub chunk_size: usize,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Stop after this many epochs without a validation improvement (0 disables).
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            seed: 0,
            scale_labels: true,
            chunk_size: 25,
            lr_decay: 1.0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".to_string());
        }
        if self.chunk_size == 0 {
            p.push("chunk_size must be >= 1".to_string());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            p.push(format!("lr {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("{name} {b} must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            p.push(format!("eps {} must be positive", self.eps));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            p.push(format!("lr_decay {} must lie in (0, 1]", self.lr_decay));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(p.join("; ")))
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

/// One bias-corrected Adam update with learning rate `lr`.
///
/// Every gradient is checked before any parameter moves, so a non-finite
/// gradient leaves `params` and `state` untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| TrainError::InvalidConfig(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(TrainError::InvalidConfig(format!(
                "gradient shape {:?} for {name} does not match {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample MSE on normalized labels over the epoch's updates.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Longest gradient tape seen during the validation pass.
    pub val_tape_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// MSE of the untrained model on the training split.
    pub initial_train_loss: f64,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,best";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(w, "{},{:e},{:e},{}", r.epoch, r.train_loss, r.val_loss, u8::from(r.epoch == self.best_epoch))?;
        }
        Ok(())
    }
}

/// Copies the normalized windows and labels of `idx` into tensors.
fn gather(
    src: &dyn SampleSource,
    idx: &[usize],
    norm: &Normalizer,
    t_s: usize,
    d_c: usize,
) -> Result<(Tensor, Tensor)> {
    let mut x = Vec::with_capacity(idx.len() * t_s * d_c);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = src.sample(i);
        if s.window.len() != t_s * d_c {
            return Err(DatasetError::WindowSize { index: i, expected: t_s * d_c, found: s.window.len() }.into());
        }
        norm.normalize_window_into(&s.window, &mut x)?;
        y.push(norm.normalize_label(s.label));
    }
    let n = idx.len();
    Ok((Tensor::new(vec![n, t_s, d_c], x).expect("gathered"), Tensor::new(vec![n, 1], y).expect("gathered")))
}

/// Normalized-space predictions for every sample of `src`, on non-recording graphs.
/// Returns the predictions and the longest tape observed.
fn predict_normalized(model: &Model, norm: &Normalizer, src: &dyn SampleSource, chunk: usize) -> Result<(Vec<f64>, usize)> {
    let mut out = Vec::with_capacity(src.len());
    let mut tape = 0;
    let idx: Vec<usize> = (0..src.len()).collect();
    for c in idx.chunks(chunk.max(1)) {
        let (x, _) = gather(src, c, norm, model.t_s, model.d_c)?;
        let mut g = Graph::no_grad();
        let pv = model.bind(&mut g);
        let xv = g.constant(x);
        let y = model.forward(&mut g, &pv, xv)?;
        out.extend_from_slice(g.value(y).data());
        tape = tape.max(g.tape_len());
    }
    Ok((out, tape))
}

/// Predictions in label units (mN).
pub fn predict(ck: &Checkpoint, src: &dyn SampleSource, chunk: usize) -> Result<Vec<f64>> {
    check_shape(&ck.model, src)?;
    let (p, _) = predict_normalized(&ck.model, &ck.normalizer, src, chunk)?;
    Ok(p.into_iter().map(|v| ck.normalizer.denormalize_label(v)).collect())
}

fn mse_on(model: &Model, norm: &Normalizer, src: &dyn SampleSource, chunk: usize) -> Result<(f64, usize)> {
    let (p, tape) = predict_normalized(model, norm, src, chunk)?;
    let sum: f64 = p
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let e = v - norm.normalize_label(src.sample(i).label);
            e * e
        })
        .sum();
    Ok((sum / src.len() as f64, tape))
}

fn check_shape(model: &Model, src: &dyn SampleSource) -> Result<()> {
    let expected = model.t_s * model.d_c;
    match (0..src.len()).find(|&i| src.sample(i).window.len() != expected) {
        Some(index) => Err(DatasetError::WindowSize { index, expected, found: src.sample(index).window.len() }.into()),
        None => Ok(()),
    }
}

/// Trained checkpoint (best validation epoch) and its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: History,
}

/// Trains `arch` on `train`, selecting the parameters with the lowest validation loss.
///
/// Normalization statistics come from `train` alone. `on_epoch` sees every record
/// as it is produced.
pub fn train(
    arch: ArchId,
    spec: &LayerSpec,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    t_s: usize,
    d_c: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DatasetError::EmptySplit("train").into());
    }
    if val.is_empty() {
        return Err(DatasetError::EmptySplit("val").into());
    }
    let mut model = build(arch, spec, t_s, d_c, derive_seed(cfg.seed, INIT_STREAM, 0))?;
    check_shape(&model, train)?;
    check_shape(&model, val)?;
    let normalizer = Normalizer::from_stats(&stats(train, d_c)?, cfg.scale_labels);

    let mut history =
        History { initial_train_loss: mse_on(&model, &normalizer, train, cfg.chunk_size)?.0, ..History::default() };
    let mut best = (f64::INFINITY, model.params.clone());
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.lr;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM, epoch as u64)));
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: ModelParams =
                model.params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec()))).collect();
            let mut batch_loss = 0.0;
            for chunk in batch.chunks(cfg.chunk_size) {
                let (x, y) = gather(train, chunk, &normalizer, t_s, d_c)?;
                let mut g = Graph::new();
                let pv = model.bind(&mut g);
                let xv = g.constant(x);
                let yv = g.constant(y);
                let pred = model.forward(&mut g, &pv, xv)?;
                let mse = g.mse_loss(pred, yv).map_err(crate::NetError::from)?;
                let weight = chunk.len() as f64 / batch.len() as f64;
                let loss = g.scale(mse, weight);
                batch_loss += g.value(loss).data()[0];
                g.backward(loss).map_err(crate::NetError::from)?;
                for (name, var) in pv.iter() {
                    if let Some(gr) = g.grad(var) {
                        let acc = grads.get_mut(name).expect("same parameter set");
                        acc.data_mut().iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: bi });
            }
            loss_sum += batch_loss * batch.len() as f64;
            adam_step(&mut model.params, &grads, &mut adam, cfg, lr)?;
        }
        let (val_loss, val_tape_len) = mse_on(&model, &normalizer, val, cfg.chunk_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: usize::MAX });
        }
        let rec = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_tape_len };
        on_epoch(&rec);
        history.epochs.push(rec);
        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
        lr *= cfg.lr_decay;
    }
    if cfg.epochs > 0 {
        model.params = best.1;
    }
    Ok(TrainOutcome { checkpoint: Checkpoint { model, normalizer }, history })
}

/// Error statistics in label units. `cc` is NaN, with `note` set, when undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub mae_std: f64,
    pub rmae: f64,
    pub rmae_std: f64,
    pub cc: f64,
    pub note: Option<String>,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "n,mae_mn,mae_std_mn,rmae,rmae_std,cc";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{:.6},{:.6}", self.n, self.mae, self.mae_std, self.rmae, self.rmae_std, self.cc)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} MAE={:.3}±{:.3} mN rMAE={:.4}±{:.4} CC={:.5}",
            self.n, self.mae, self.mae_std, self.rmae, self.rmae_std, self.cc
        )?;
        if let Some(n) = &self.note {
            write!(f, " ({n})")?;
        }
        Ok(())
    }
}

fn mean_std(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// MAE, rMAE and Pearson CC of `preds` against `targets`.
///
/// `rmae_i = |e_i| / mean_j |y_j|`; standard deviations are population values.
pub fn metrics_from(preds: &[f64], targets: &[f64]) -> Result<Metrics> {
    if preds.len() != targets.len() {
        return Err(TrainError::InvalidConfig(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(DatasetError::EmptySplit("test").into());
    }
    let abs_err = preds.iter().zip(targets).map(|(p, y)| (p - y).abs());
    let (mae, mae_std) = mean_std(abs_err.clone());
    let mean_abs_y = targets.iter().map(|y| y.abs()).sum::<f64>() / targets.len() as f64;
    let mut notes = Vec::new();
    let (rmae, rmae_std) = if mean_abs_y > 0.0 {
        (mae / mean_abs_y, mae_std / mean_abs_y)
    } else {
        notes.push("rMAE undefined: all targets are zero".to_string());
        (f64::NAN, f64::NAN)
    };

    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let my = targets.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vy) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(targets) {
        let (dp, dy) = (p - mp, y - my);
        cov += dp * dy;
        vp += dp * dp;
        vy += dy * dy;
    }
    let cc = if vp > 0.0 && vy > 0.0 {
        (cov / (vp * vy).sqrt()).clamp(-1.0, 1.0)
    } else {
        notes.push(format!(
            "CC undefined: zero variance in {}",
            if vy > 0.0 { "predictions" } else { "targets" }
        ));
        f64::NAN
    };
    let note = (!notes.is_empty()).then(|| notes.join("; "));
    Ok(Metrics { n: preds.len(), mae, mae_std, rmae, rmae_std, cc, note })
}

pub fn evaluate(ck: &Checkpoint, test: &dyn SampleSource, chunk: usize) -> Result<Metrics> {
    if test.is_empty() {
        return Err(DatasetError::EmptySplit("test").into());
    }
    let preds = predict(ck, test, chunk)?;
    let targets: Vec<f64> = (0..test.len()).map(|i| test.sample(i).label).collect();
    metrics_from(&preds, &targets)
}

/// Per-architecture results of [`compare_models`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub arch: ArchId,
    pub runs: Vec<Metrics>,
}

impl ComparisonRow {
    /// Mean and population std across seeds of a metric.
    pub fn stat(&self, f: impl Fn(&Metrics) -> f64) -> (f64, f64) {
        mean_std(self.runs.iter().map(f))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str =
        "model,seeds,mae_mn,mae_std_mn,rmae,rmae_std,cc,mae_seed_std_mn";

    /// Rows sorted by mean MAE, best first.
    pub fn ranking(&self) -> Vec<(ArchId, f64)> {
        let mut r: Vec<(ArchId, f64)> = self.rows.iter().map(|row| (row.arch, row.stat(|m| m.mae).0)).collect();
        r.sort_by(|a, b| a.1.total_cmp(&b.1));
        r
    }

    pub fn mean_mae(&self, arch: ArchId) -> Option<f64> {
        self.rows.iter().find(|r| r.arch == arch).map(|r| r.stat(|m| m.mae).0)
    }

    /// Columns mirror the usual results table: seed-averaged MAE and rMAE with
    /// their within-test-set spreads, CC, and the spread of MAE across seeds.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            let (mae, mae_seed_std) = row.stat(|m| m.mae);
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                row.arch,
                row.runs.len(),
                mae,
                row.stat(|m| m.mae_std).0,
                row.stat(|m| m.rmae).0,
                row.stat(|m| m.rmae_std).0,
                row.stat(|m| m.cc).0,
                mae_seed_std
            )?;
        }
        Ok(())
    }
}

/// Trains every architecture `n_seeds` times and evaluates on `test`.
///
/// Run `s` of an architecture uses seed `derive_seed(cfg.seed, arch_index, s)`,
/// so adding or removing architectures does not change the others' results.
#[allow(clippy::too_many_arguments)]
pub fn compare_models(
    archs: &[ArchId],
    spec: &LayerSpec,
    train_set: &dyn SampleSource,
    val: &dyn SampleSource,
    test: &dyn SampleSource,
    t_s: usize,
    d_c: usize,
    cfg: &TrainConfig,
    n_seeds: usize,
    mut on_run: impl FnMut(ArchId, usize, &Metrics),
) -> Result<ComparisonReport> {
    if n_seeds == 0 {
        return Err(TrainError::InvalidConfig("n_seeds must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for &arch in archs {
        let arch_idx = ArchId::ALL.iter().position(|&a| a == arch).unwrap() as u64;
        let mut runs = Vec::new();
        for s in 0..n_seeds {
            let run_cfg =
                TrainConfig { seed: derive_seed(cfg.seed, COMPARE_STREAM ^ (arch_idx << 8), s as u64), ..cfg.clone() };
            let out = train(arch, spec, train_set, val, t_s, d_c, &run_cfg, |_| {})?;
            let m = evaluate(&out.checkpoint, test, cfg.chunk_size)?;
            on_run(arch, s, &m);
            runs.push(m);
        }
        rows.push(ComparisonRow { arch, runs });
    }
    Ok(ComparisonReport { rows })
}

/// Named gradients of `loss` built by `f` over `params`, for tests and diagnostics.
pub fn gradients_of(
    params: &ModelParams,
    f: impl FnOnce(&mut Graph, &BTreeMap<String, octforce_autodiff::Var>) -> octforce_autodiff::Result<octforce_autodiff::Var>,
) -> octforce_autodiff::Result<ModelParams> {
    let mut g = Graph::new();
    let vars: BTreeMap<String, _> = params.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone()))).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .map(|(k, &v)| (k.clone(), g.grad_tensor(v).unwrap_or_else(|| Tensor::zeros(params[k].shape().to_vec()))))
        .collect())
}
