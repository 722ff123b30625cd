use std::fs;
use std::path::{Path, PathBuf};

use dtsst_core::augment::{augment_batch, AugmentSpec};
use dtsst_core::dataio::{
    preset, read_dataset, synth as synth_trials, write_dataset, write_tensor, SignalConfig, SplitTag, SynthClass,
    TrialSet,
};
use dtsst_core::gradcheck::{check_model, random_batch};
use dtsst_core::metrics::{export_report, wilcoxon_signed_rank, Chance, EvalReport};
use dtsst_core::model::{read_checkpoint, write_checkpoint};
use dtsst_core::rng::{stream, Stream};
use dtsst_core::signal::FreqGrid;
use dtsst_core::train::{predict_set, train_loop, EpochLog};
use dtsst_core::{ablation_flags, Ablation, DualTsst, Error, Result, RunConfig};
use serde::Serialize;

use crate::{AugmentArgs, EvalArgs, GradcheckArgs, StatsArgs, SynthArgs, TrainArgs, TransformArgs};

const EVAL_BATCH: usize = 64;

fn io_err(what: &str, path: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |source| Error::Io { context, source }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err("creating", dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err("writing", path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Dataset(format!("{}: {e}", path.display()))
}

fn split_tags(tags: &[Option<SplitTag>]) -> Vec<SplitTag> {
    tags.iter().copied().collect::<Option<Vec<_>>>().unwrap_or_default()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.classes.is_empty() {
        return Err(Error::InvalidArgument("at least one class frequency is required".into()));
    }
    let classes: Vec<SynthClass> = a.classes.iter().map(|&freq| SynthClass { freq, channels: Vec::new() }).collect();
    // one draw, so the held-out rounds never repeat a training trial
    let set = synth_trials(a.n + a.test_n, a.ch, a.t, a.fs, &classes, a.noise, a.seed)?;
    let cut = a.n * classes.len();
    let tags: Vec<SplitTag> = (0..set.len()).map(|i| if i < cut { SplitTag::Train } else { SplitTag::Test }).collect();
    let channels: Vec<String> = (0..a.ch).map(|c| format!("ch{c}")).collect();
    let names: Vec<String> = a.classes.iter().map(|f| format!("{f}Hz")).collect();
    create_dir(&a.out)?;
    write_dataset(&a.out, "synthetic", &channels, &names, &set, &tags)?;
    println!("wrote {} trials ({} train, {} test) to {}", set.len(), cut, set.len() - cut, a.out.display());
    Ok(())
}

pub fn transform(a: TransformArgs) -> Result<()> {
    let (manifest, set) = read_dataset(&a.data)?;
    let mut cfg = match &a.preset {
        Some(name) => preset(name)?.signal,
        None => SignalConfig {
            fs: manifest.fs,
            window: None,
            band: None,
            segment: None,
            freqs: FreqGrid { lo: 1.0, hi: (manifest.fs / 2.0 - 1.0).clamp(1.0, 40.0), step: 1.0 },
        },
    };
    cfg.freqs.lo = a.freq_lo.unwrap_or(cfg.freqs.lo);
    cfg.freqs.hi = a.freq_hi.unwrap_or(cfg.freqs.hi);
    cfg.freqs.step = a.freq_step.unwrap_or(cfg.freqs.step);
    cfg.window = a.window.or(cfg.window);
    cfg.band = a.band.or(cfg.band);
    cfg.segment = a.segment.or(cfg.segment);

    let mut out = TrialSet::default();
    let mut tags = Vec::new();
    for (i, trial) in set.eeg.into_iter().enumerate() {
        let windows = TrialSet { eeg: vec![trial], tfr: Vec::new() }.condition(&cfg)?;
        tags.extend(std::iter::repeat_n(manifest.trials[i].split, windows.len()));
        out.extend(windows);
    }
    create_dir(&a.out)?;
    write_dataset(&a.out, &manifest.name, &manifest.channels, &manifest.class_names, &out, &split_tags(&tags))?;
    let (ch, t, f) = out.geometry().unwrap_or_default();
    println!("wrote {} trials [ch={ch}, T={t}, F={f}] to {}", out.len(), a.out.display());
    Ok(())
}

pub fn augment(a: AugmentArgs) -> Result<()> {
    let (manifest, set) = read_dataset(&a.data)?;
    if !set.has_tfr() {
        return Err(Error::Dataset(format!(
            "{} has no wavelet sidecars; run `dtsst transform` first",
            a.data.display()
        )));
    }
    let spec = AugmentSpec { r: a.r, count: a.count };
    let out = augment_batch(&set, &set.labels(), spec, &mut stream(a.seed, Stream::Augment))?;
    create_dir(&a.out)?;
    write_dataset(
        &a.out,
        &format!("{}-augmented", manifest.name),
        &manifest.channels,
        &manifest.class_names,
        &out,
        &[],
    )?;
    println!("wrote {} augmented trials (R={}) to {}", out.len(), a.r, a.out.display());
    Ok(())
}

fn base_config(config: Option<&Path>, preset_name: Option<&str>) -> Result<RunConfig> {
    match (config, preset_name) {
        (Some(path), _) => RunConfig::load(path),
        (None, Some(name)) => RunConfig::from_preset(name),
        (None, None) => Ok(RunConfig::default()),
    }
}

fn load_conditioned(dir: &Path, cfg: &RunConfig) -> Result<(TrialSet, TrialSet, Vec<String>)> {
    let (manifest, set) = read_dataset(dir)?;
    let (train_idx, test_idx) = cfg.split.assign(&manifest)?;
    let prep = |idx: &[usize]| -> Result<TrialSet> {
        if idx.is_empty() {
            return Ok(TrialSet::default());
        }
        set.subset(idx).condition(&cfg.signal)?.normalized()
    };
    Ok((prep(&train_idx)?, prep(&test_idx)?, manifest.class_names))
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: usize,
    best_test_acc: Option<f64>,
    final_train_acc: f64,
    final_test_acc: Option<f64>,
    final_loss: f64,
    params: usize,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(a.base.config.as_deref(), a.base.preset.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = a.batch {
        cfg.train.batch = batch;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_max = lr;
    }
    let flags = Ablation {
        no_transformer: a.no_transformer,
        no_branch1: a.no_branch1,
        no_b2_input1: a.no_b2_input1,
        no_b2_input2: a.no_b2_input2,
        no_augment: a.no_augment,
    };
    let listed = a.ablation.as_deref().map(Ablation::parse).transpose()?.unwrap_or_default();
    cfg = ablation_flags(&cfg, flags.merge(listed))?;
    cfg.data = a.data.or(cfg.data);
    cfg.out = a.out.or(cfg.out);
    cfg.validate()?;
    cfg.train.validate()?;
    let data = cfg.data.clone().ok_or_else(|| Error::Config("no dataset given (--data or `data` key)".into()))?;
    let out = cfg.out.clone().ok_or_else(|| Error::Config("no output directory given (--out or `out` key)".into()))?;

    let (train_set, test_set, _) = load_conditioned(&data, &cfg)?;
    let mut model = DualTsst::new(cfg.model.clone(), &mut stream(cfg.train.seed, Stream::Init))?;
    dtsst_core::train::check_geometry(&model, &train_set)?;
    create_dir(&out)?;
    cfg.data = Some(fs::canonicalize(&data).map_err(io_err("resolving", &data))?);
    cfg.out = Some(fs::canonicalize(&out).map_err(io_err("resolving", &out))?);
    write_json(&out.join("resolved_config.json"), &cfg)?;

    let log_path = out.join("log.csv");
    let mut log = csv::Writer::from_path(&log_path).map_err(csv_err(&log_path))?;
    log.write_record(["epoch", "lr", "loss", "train_acc", "test_acc"]).map_err(csv_err(&log_path))?;
    let mut write_err = None;
    let every = a.log_every;
    let test = (!test_set.is_empty()).then_some(&test_set);
    let outcome = train_loop(&mut model, &train_set, test, &cfg.train, |e: &EpochLog| {
        let row = [
            e.epoch.to_string(),
            format!("{:e}", e.lr),
            format!("{:.9}", e.loss),
            format!("{:.6}", e.train_acc),
            e.test_acc.map_or(String::new(), |v| format!("{v:.6}")),
        ];
        if let Err(err) = log.write_record(&row).and_then(|_| log.flush().map_err(Into::into)) {
            write_err.get_or_insert(err);
        }
        if every > 0 && (e.epoch + 1).is_multiple_of(every) {
            let test = e.test_acc.map_or(String::new(), |v| format!(" test_acc={v:.4}"));
            println!("epoch {:>5} lr={:.3e} loss={:.5} train_acc={:.4}{test}", e.epoch + 1, e.lr, e.loss, e.train_acc);
        }
    })?;
    if let Some(err) = write_err {
        return Err(csv_err(&log_path)(err));
    }
    drop(log);
    write_checkpoint(&out.join("best.dtss"), &outcome.best)?;
    write_checkpoint(&out.join("final.dtss"), &model)?;
    let last = outcome.log.last();
    let summary = TrainSummary {
        epochs: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_test_acc: outcome.log.get(outcome.best_epoch).and_then(|e| e.test_acc),
        final_train_acc: last.map_or(0.0, |e| e.train_acc),
        final_test_acc: last.and_then(|e| e.test_acc),
        final_loss: last.map_or(f64::NAN, |e| e.loss),
        params: model.param_count(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "trained {} epochs; final train_acc={:.4}{}; outputs in {}",
        summary.epochs,
        summary.final_train_acc,
        summary
            .best_test_acc
            .map_or(String::new(), |v| format!(", best test_acc={v:.4} at epoch {}", summary.best_epoch + 1)),
        out.display()
    );
    Ok(())
}

fn parse_chance(s: &str) -> Result<Chance> {
    match s {
        "marginal" => Ok(Chance::Marginal),
        "uniform" => Ok(Chance::Uniform),
        _ => Err(Error::Config(format!("unknown chance model {s:?}; expected marginal or uniform"))),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = read_checkpoint(&a.model)?;
    let beside = a.model.parent().map(|d| d.join("resolved_config.json")).filter(|p| p.exists());
    let cfg_path: Option<PathBuf> = a.config.or(if a.preset.is_none() { beside } else { None });
    let mut cfg = base_config(cfg_path.as_deref(), a.preset.as_deref())?;
    if let Some(c) = &a.chance {
        cfg.chance = parse_chance(c)?;
    }
    let (train_set, test_set, class_names) = load_conditioned(&a.data, &cfg)?;
    let set = match a.split.as_str() {
        "test" => test_set,
        "train" => train_set,
        "all" => {
            let mut all = train_set;
            all.extend(test_set);
            all
        }
        other => return Err(Error::Config(format!("unknown split {other:?}; expected test, train, or all"))),
    };
    if set.is_empty() {
        return Err(Error::Dataset(format!("the {} split is empty", a.split)));
    }
    let preds = predict_set(&model, &set, EVAL_BATCH)?;
    let subjects: Vec<u32> = set.eeg.iter().map(|t| t.subject).collect();
    let mut report = EvalReport::build(&set.labels(), &preds.classes(), &subjects, &class_names, cfg.chance)?;
    report.config = Some(serde_json::to_value(&cfg)?);
    create_dir(&a.out)?;
    export_report(&report, &a.out)?;
    if a.features {
        write_tensor(&a.out.join("features.eegt"), &preds.features)?;
    }
    let kappa = report.kappa.map_or("undefined".to_string(), |k| format!("{k:.4}"));
    println!("n={} accuracy={:.4} kappa={kappa}", report.n, report.accuracy);
    Ok(())
}

#[derive(Serialize)]
struct StatsOutput {
    a: String,
    b: String,
    n: usize,
    mean_a: f64,
    mean_b: f64,
    #[serde(flatten)]
    result: Option<dtsst_core::metrics::Wilcoxon>,
    undefined: Option<String>,
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.input).map_err(csv_err(&a.input))?;
    let headers = reader.headers().map_err(csv_err(&a.input))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("{}: no column {name:?}", a.input.display())))
    };
    let (ia, ib) = (col(&a.a)?, col(&a.b)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(&a.input))?;
        let num = |i: usize| {
            let field = record.get(i).unwrap_or("").trim();
            field.parse::<f64>().map_err(|_| {
                Error::Dataset(format!("{} row {}: {field:?} is not a number", a.input.display(), line + 2))
            })
        };
        xs.push(num(ia)?);
        ys.push(num(ib)?);
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (result, undefined) = match wilcoxon_signed_rank(&xs, &ys) {
        Ok(w) => (Some(w), None),
        Err(Error::Undefined(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    match (&result, &undefined) {
        (Some(w), _) => println!(
            "W={} p={:.6} n={} ({})",
            w.w,
            w.p_value,
            w.n_effective,
            if w.exact { "exact" } else { "normal approximation" }
        ),
        (None, Some(msg)) => println!("undefined: {msg}"),
        _ => unreachable!(),
    }
    let output = StatsOutput { a: a.a, b: a.b, n: xs.len(), mean_a: mean(&xs), mean_b: mean(&ys), result, undefined };
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("stats.json"), &output)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let cfg = preset(&a.preset)?.model;
    let model = DualTsst::new(cfg.clone(), &mut stream(a.seed, Stream::Init))?;
    let (eeg, tfr, labels) = random_batch(&cfg, a.batch, a.seed)?;
    let report = check_model(&model, &eeg, &tfr, &labels)?;
    for p in &report.params {
        println!("{:<28} {:>7} {:.3e}", p.name, p.scalars, p.max_rel_err);
    }
    println!("max relative error {:.3e} ({})", report.max_rel_err, report.worst);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    report.ensure(a.tol)
}
