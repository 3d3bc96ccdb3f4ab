use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use octforce::config::KeyValues;
use octforce::dataset::{self, split, Splits, SplitSpec};
use octforce::nets::checkpoint::Checkpoint;
use octforce::nets::{ArchId, LayerSpec};
use octforce::pipeline::{insertion_scans, labeled, write_windows, WindowSpec};
use octforce::sim::{simulate_calibration, InsertionProfile, NeedlePreset, OpticalParams, TissueSegment};
use octforce::streams::SequenceSample;
use octforce::train::{compare_models, evaluate, predict, train, ComparisonReport, History, Metrics, TrainConfig};
use octforce::TrainError;

use crate::resolve::{io_error, CliError, Resolver};

type Result<T> = std::result::Result<T, CliError>;

pub const TRUTH_HEADER: &str = "t,base_mn,tip_mn";
pub const PLOT_HEADER: &str = "t,predicted_mn,base_mn,tip_mn";

fn echo(resolved: &KeyValues) {
    println!("# resolved configuration");
    print!("{resolved}");
    println!("#");
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn preset(r: &mut Resolver) -> Result<NeedlePreset> {
    let name: String = r.get("preset", "needle1".to_string())?;
    let custom = r.prefixed("preset.");
    if custom.is_empty() {
        return NeedlePreset::builtin(&name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset {name:?} (built-in: {})", NeedlePreset::builtin_names().join(", ")))
        });
    }
    let mut kv = KeyValues::default();
    if NeedlePreset::builtin(&name).is_some() {
        kv.set("base", name.as_str());
    }
    kv.set("name", name.as_str());
    for (k, v) in custom.iter() {
        kv.set(k.trim_start_matches("preset."), v);
    }
    let p = NeedlePreset::from_key_values(&kv)?;
    for (k, v) in [("preset.k0", p.k0), ("preset.alpha", p.alpha), ("preset.c", p.c), ("preset.f_max", p.f_max)] {
        r.note(k, v);
    }
    r.note("preset.layer_thickness_um", p.layer_thickness_um);
    Ok(p)
}

fn optics(r: &mut Resolver) -> Result<OpticalParams> {
    let mut o = OpticalParams::default();
    o.apply_key_values(&r.prefixed("optics."))?;
    r.note("optics.depth_px", o.depth_px);
    r.note("optics.px_per_um", o.px_per_um);
    r.note("optics.tip_base_idx", o.tip_base_idx);
    r.note("optics.epoxy_top_idx", o.epoxy_top_idx);
    r.note("optics.peak_amp", o.peak_amp);
    r.note("optics.peak_width_px", o.peak_width_px);
    r.note("optics.speckle_sigma", o.speckle_sigma);
    r.note("optics.noise_floor", o.noise_floor);
    r.note("optics.epoxy_scatter", o.epoxy_scatter);
    Ok(o)
}

fn format_segments(segs: &[TissueSegment]) -> String {
    segs.iter()
        .map(|s| {
            let rupture = s.rupture_force_mn.map_or_else(|| "-".to_string(), |r| r.to_string());
            format!("{}:{}:{}", s.length_mm, s.stiffness_mn_per_mm, rupture)
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// `length_mm:stiffness:rupture` triples separated by commas; `-` means no rupture.
fn parse_segments(raw: &str) -> Result<Vec<TissueSegment>> {
    let bad = |m: String| CliError::Usage(format!("insertion.segments: {m}"));
    raw.split(',')
        .map(|seg| {
            let parts: Vec<&str> = seg.trim().split(':').collect();
            if parts.len() != 3 {
                return Err(bad(format!("{seg:?} is not length:stiffness:rupture")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
            let rupture = match parts[2].trim() {
                "-" | "none" => None,
                s => Some(num(s)?),
            };
            Ok(TissueSegment { length_mm: num(parts[0])?, stiffness_mn_per_mm: num(parts[1])?, rupture_force_mn: rupture })
        })
        .collect()
}

fn profile(r: &mut Resolver) -> Result<InsertionProfile> {
    let d = InsertionProfile::default();
    let segments = match r.optional::<String>("insertion.segments")? {
        Some(raw) => parse_segments(&raw)?,
        None => d.segments.clone(),
    };
    r.note("insertion.segments", format_segments(&segments));
    let p = InsertionProfile {
        segments,
        friction_per_mm: r.get("insertion.friction_per_mm", d.friction_per_mm)?,
        velocity_mm_s: r.get("insertion.velocity_mm_s", d.velocity_mm_s)?,
        residual_noise_mn: r.get("insertion.residual_noise_mn", d.residual_noise_mn)?,
    };
    p.validate()?;
    Ok(p)
}

fn window_spec(r: &mut Resolver, optics: &OpticalParams) -> Result<WindowSpec> {
    let ws = WindowSpec { t_s: r.get("t_s", 50)?, d_c: r.get("d_c", 70)?, stride: r.get("stride", 1)? };
    if ws.t_s == 0 || ws.stride == 0 {
        return Err(CliError::Usage("t_s and stride must be >= 1".into()));
    }
    if ws.d_c == 0 || ws.d_c > optics.depth_px {
        return Err(CliError::Usage(format!("d_c {} must lie in [1, {}] (optics.depth_px)", ws.d_c, optics.depth_px)));
    }
    Ok(ws)
}

pub fn simulate(mut r: Resolver) -> Result<()> {
    let mode: String = r.get("mode", "calibration".to_string())?;
    let preset = preset(&mut r)?;
    let optics = optics(&mut r)?;
    let ws = window_spec(&mut r, &optics)?;
    let seed: u64 = r.get("seed", 0)?;
    let out = r.path("out")?;
    match mode.as_str() {
        "calibration" => {
            let duration: f64 = r.get("duration", 60.0)?;
            echo(&r.finish()?);
            let (oct, force) = simulate_calibration(&preset, &optics, duration, seed)?;
            let scans = labeled(oct, &force, ws.d_c)?;
            let header = write_windows(&scans, ws, &preset.name, seed, &out)?;
            let labels = (0..header.n_samples as usize).map(|k| scans[k * ws.stride + ws.t_s - 1].f);
            summary(&out, header.n_samples, labels);
        }
        "insertion" => {
            let profile = profile(&mut r)?;
            let shielded: bool = r.get("shielded", false)?;
            let truth_path = r.path_or("truth_out", with_suffix(&out, ".truth.csv"));
            echo(&r.finish()?);
            let ins = insertion_scans(&preset, &optics, &profile, shielded, seed, ws.d_c)?;
            let header = write_windows(&ins.scans, ws, &preset.name, seed, &out)?;
            let truth = ins.window_truth(ws);
            let mut w = create(&truth_path)?;
            let mut write = || -> std::io::Result<()> {
                writeln!(w, "{TRUTH_HEADER}")?;
                for (t, base, tip) in &truth {
                    writeln!(w, "{t:.9},{base},{tip}")?;
                }
                w.flush()
            };
            write().map_err(|e| io_error(&truth_path, e))?;
            summary(&out, header.n_samples, truth.iter().map(|x| x.1));
            println!("tip-force truth: {}", truth_path.display());
        }
        other => return Err(CliError::Usage(format!("mode {other:?} must be calibration or insertion"))),
    }
    Ok(())
}

fn summary(out: &Path, n: u64, labels: impl Iterator<Item = f64>) {
    let (lo, hi) = labels.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| (a.min(f), b.max(f)));
    println!("wrote {} samples to {}", n, out.display());
    if n > 0 {
        println!("force range: {lo:.3} .. {hi:.3} mN");
    }
}

fn layer_spec(r: &mut Resolver) -> Result<LayerSpec> {
    let name: String = r.get("layer_spec", "default".to_string())?;
    match name.as_str() {
        "default" => Ok(LayerSpec::default()),
        "small" => Ok(LayerSpec::small()),
        "tiny" => Ok(LayerSpec::tiny()),
        other => Err(CliError::Usage(format!("layer_spec {other:?} must be default, small or tiny"))),
    }
}

fn train_config(r: &mut Resolver) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: r.get("batch_size", d.batch_size)?,
        lr: r.get("lr", d.lr)?,
        beta1: r.get("beta1", d.beta1)?,
        beta2: r.get("beta2", d.beta2)?,
        eps: r.get("eps", d.eps)?,
        epochs: r.get("epochs", d.epochs)?,
        seed: r.get("seed", d.seed)?,
        scale_labels: r.get("scale_labels", d.scale_labels)?,
        chunk_size: r.get("chunk_size", d.chunk_size)?,
        lr_decay: r.get("lr_decay", d.lr_decay)?,
        patience: r.get("patience", d.patience)?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn split_spec(r: &mut Resolver) -> Result<SplitSpec> {
    let d = SplitSpec::default();
    SplitSpec::new(r.get("train_frac", d.train_frac)?, r.get("val_frac", d.val_frac)?, r.get("test_frac", d.test_frac)?)
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn arch(r: &mut Resolver) -> Result<ArchId> {
    let name: String = r.get("arch", ArchId::ConvGruCnn.to_string())?;
    name.parse().map_err(|e: octforce::NetError| CliError::Usage(e.to_string()))
}

fn load_dataset(path: &Path) -> Result<(dataset::DatasetHeader, Vec<SequenceSample>)> {
    Ok(dataset::load(path)?)
}

fn load_splits(path: &Path, spec: &SplitSpec) -> Result<(dataset::DatasetHeader, Splits)> {
    let (header, samples) = load_dataset(path)?;
    let splits = split(samples, spec, header.t_s)?;
    Ok((header, splits))
}

fn check_window(header: &dataset::DatasetHeader, t_s: usize, d_c: usize) -> Result<()> {
    if header.t_s != t_s || header.d_c != d_c {
        return Err(TrainError::ShapeMismatch {
            found_t_s: header.t_s,
            found_d_c: header.d_c,
            model_t_s: t_s,
            model_d_c: d_c,
        }
        .into());
    }
    Ok(())
}

fn print_metrics(label: &str, m: &Metrics) {
    println!("{},{}", "split", Metrics::CSV_HEADER);
    println!("{label},{}", m.csv_row());
    if let Some(n) = &m.note {
        println!("# note: {n}");
    }
}

pub fn train_cmd(mut r: Resolver) -> Result<()> {
    let data = r.path("data")?;
    let arch = arch(&mut r)?;
    let spec = layer_spec(&mut r)?;
    let cfg = train_config(&mut r)?;
    let split_spec = split_spec(&mut r)?;
    let want_t_s: Option<usize> = r.optional("t_s")?;
    let want_d_c: Option<usize> = r.optional("d_c")?;
    let out = r.path_or("out", PathBuf::from("model.ckpt"));
    let history_path = r.path_or("history", with_suffix(&out, ".history.csv"));
    echo(&r.finish()?);

    let (header, sp) = load_splits(&data, &split_spec)?;
    check_window(&header, want_t_s.unwrap_or(header.t_s), want_d_c.unwrap_or(header.d_c))?;
    println!(
        "dataset {}: {} train / {} val / {} test windows ({} dropped at split borders)",
        data.display(),
        sp.train.len(),
        sp.val.len(),
        sp.test.len(),
        sp.dropped
    );
    let outcome = train(arch, &spec, &sp.train, &sp.val, header.t_s, header.d_c, &cfg, |rec| {
        eprintln!("epoch {:>4}  train {:.6e}  val {:.6e}", rec.epoch, rec.train_loss, rec.val_loss);
    })?;
    outcome.checkpoint.save(&out)?;
    write_history(&history_path, &outcome.history)?;
    println!("best epoch {} ; checkpoint {} ; history {}", outcome.history.best_epoch, out.display(), history_path.display());
    if !sp.test.is_empty() {
        print_metrics("test", &evaluate(&outcome.checkpoint, &sp.test, cfg.chunk_size)?);
    }
    Ok(())
}

fn write_history(path: &Path, h: &History) -> Result<()> {
    let mut w = create(path)?;
    h.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

pub fn eval(mut r: Resolver) -> Result<()> {
    let ck_path = r.path("checkpoint")?;
    let data = r.path("data")?;
    let which: String = r.get("split", "test".to_string())?;
    let split_spec = split_spec(&mut r)?;
    let chunk: usize = r.get("chunk_size", 25)?;
    let out: Option<String> = r.optional("out")?;
    echo(&r.finish()?);

    let ck = load_checkpoint(&ck_path)?;
    let (header, samples) = load_dataset(&data)?;
    check_window(&header, ck.model.t_s, ck.model.d_c)?;
    let part = match which.as_str() {
        "all" => samples,
        "train" | "val" | "test" => {
            let sp = split(samples, &split_spec, header.t_s)?;
            match which.as_str() {
                "train" => sp.train,
                "val" => sp.val,
                _ => sp.test,
            }
        }
        other => return Err(CliError::Usage(format!("split {other:?} must be train, val, test or all"))),
    };
    let m = evaluate(&ck, &part, chunk.max(1))?;
    print_metrics(&which, &m);
    if let Some(out) = out {
        let out = PathBuf::from(out);
        let mut w = create(&out)?;
        writeln!(w, "split,{}\n{which},{}", Metrics::CSV_HEADER, m.csv_row())
            .and_then(|_| w.flush())
            .map_err(|e| io_error(&out, e))?;
    }
    Ok(())
}

pub fn compare(mut r: Resolver) -> Result<()> {
    let data = r.path("data")?;
    let all = ArchId::ALL.iter().map(|a| a.name()).collect::<Vec<_>>().join(",");
    let names: String = r.get("archs", all)?;
    let archs: Vec<ArchId> = names
        .split(',')
        .map(|s| s.trim().parse().map_err(|e: octforce::NetError| CliError::Usage(e.to_string())))
        .collect::<Result<_>>()?;
    let seeds: usize = r.get("seeds", 3)?;
    if seeds == 0 {
        return Err(CliError::Usage("seeds must be >= 1".into()));
    }
    let spec = layer_spec(&mut r)?;
    let cfg = train_config(&mut r)?;
    let split_spec = split_spec(&mut r)?;
    let out = r.path_or("out", PathBuf::from("compare.csv"));
    echo(&r.finish()?);

    let (header, sp) = load_splits(&data, &split_spec)?;
    let report = compare_models(&archs, &spec, &sp.train, &sp.val, &sp.test, header.t_s, header.d_c, &cfg, seeds, |a, s, m| {
        eprintln!("{a} seed {s}: {m}");
    })?;
    write_report(&out, &report)?;
    report.write_csv(std::io::stdout()).map_err(|e| io_error(Path::new("<stdout>"), e))?;
    let ranking: Vec<String> = report.ranking().iter().map(|(a, mae)| format!("{a} ({mae:.3} mN)")).collect();
    println!("ranking by mean MAE: {}", ranking.join(" < "));
    Ok(())
}

fn write_report(path: &Path, report: &ComparisonReport) -> Result<()> {
    let mut w = create(path)?;
    report.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

pub fn plot(mut r: Resolver) -> Result<()> {
    let ck_path = r.path("checkpoint")?;
    let data = r.path("data")?;
    let truth_path = r.path_or("truth", with_suffix(&data, ".truth.csv"));
    let out = r.path("out")?;
    let chunk: usize = r.get("chunk_size", 25)?;
    echo(&r.finish()?);

    let ck = load_checkpoint(&ck_path)?;
    let (header, samples) = load_dataset(&data)?;
    check_window(&header, ck.model.t_s, ck.model.d_c)?;
    let truth = read_truth(&truth_path)?;
    if truth.len() != samples.len() {
        return Err(CliError::Data(format!(
            "{} has {} rows but the dataset has {} samples",
            truth_path.display(),
            truth.len(),
            samples.len()
        )));
    }
    if let Some(i) = truth.iter().zip(&samples).position(|(t, s)| t.1 != s.label) {
        return Err(CliError::Data(format!("truth row {i} does not match dataset label; wrong sidecar?")));
    }
    let preds = predict(&ck, &samples, chunk.max(1))?;
    let mut w = create(&out)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{PLOT_HEADER}")?;
        for ((t, base, tip), p) in truth.iter().zip(&preds) {
            writeln!(w, "{t:.9},{p},{base},{tip}")?;
        }
        w.flush()
    };
    write().map_err(|e| io_error(&out, e))?;
    let n = preds.len() as f64;
    let mean_abs = |f: &dyn Fn(usize) -> f64| (0..preds.len()).map(f).map(f64::abs).sum::<f64>() / n;
    println!("wrote {} rows to {}", preds.len(), out.display());
    println!("mean |predicted - tip| = {:.3} mN", mean_abs(&|i| preds[i] - truth[i].2));
    println!("mean |base - tip|      = {:.3} mN", mean_abs(&|i| truth[i].1 - truth[i].2));
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRUTH_HEADER) {
        return Err(CliError::Data(format!("{}: expected header {TRUTH_HEADER}", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| {
                CliError::Data(format!("{}: line {} is not numeric", path.display(), i + 2))
            })?;
            match v[..] {
                [t, b, f] => Ok((t, b, f)),
                _ => Err(CliError::Data(format!("{}: line {} needs 3 columns", path.display(), i + 2))),
            }
        })
        .collect()
}
