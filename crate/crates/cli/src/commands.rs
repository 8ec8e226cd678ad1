use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde_json::json;

use specbpp::data::synth::PROVENANCE;
use specbpp::data::{
    generate_synthetic, read_csv_dataset, read_dataset, split_dataset, write_dataset, Dataset,
    SynthConfig,
};
use specbpp::model::{Model, TargetScale};
use specbpp::permutation::BoltzmannSampler;
use specbpp::tensor::Array;
use specbpp::train::{
    evaluate_pretext, evaluate_regression, finetune, load_checkpoint, pretrain, save_checkpoint,
    threads_from_env, MetricsReport, PretextSet, PretrainEvent, Workers,
};
use specbpp::SeededRng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_NUMERIC};

const CHECKPOINT_DIR: &str = "checkpoint";

/// Run directory `<out>/<command>-<timestamp>`, with a numeric suffix when
/// that name is taken. Never reuses an existing directory.
fn create_run_dir(out: &Path, command: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for k in 1.. {
        let name = if k == 1 { format!("{command}-{stamp}") } else { format!("{command}-{stamp}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::data(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

struct JsonLines {
    path: PathBuf,
    file: fs::File,
}

impl JsonLines {
    fn create(path: PathBuf) -> CliResult<Self> {
        let file = fs::File::create(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(Self { path, file })
    }

    fn push(&mut self, value: &impl serde::Serialize) -> CliResult<()> {
        let line = serde_json::to_string(value).expect("log records serialize");
        writeln!(self.file, "{line}").map_err(|e| CliError::data(format!("{}: {e}", self.path.display())))
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::config("no dataset given (use --data)"))?;
    if !path.is_file() {
        return Err(CliError::data(format!("{}: dataset not found", path.display())));
    }
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let data = if is_csv { read_csv_dataset(path) } else { read_dataset(path) };
    let data = data.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if data.is_empty() {
        return Err(CliError::data(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn threads(cfg: &RunConfig) -> usize {
    if cfg.threads == 0 {
        threads_from_env()
    } else {
        cfg.threads
    }
}

/// The starting model: a checkpoint when given, else a fresh encoder.
fn initial_model(cfg: &RunConfig, data: &Dataset, rng: &mut SeededRng) -> CliResult<Model<f32>> {
    let (h, w, b) = data.dims();
    match &cfg.checkpoint {
        Some(dir) => {
            let (model, _) = load_checkpoint(dir).map_err(|e| CliError::data(e.to_string()))?;
            let c = &model.config;
            if (c.height, c.width, c.bands) != (h, w, b) {
                return Err(CliError::data(format!(
                    "checkpoint expects {}x{}x{} patches, dataset has {h}x{w}x{b}",
                    c.height, c.width, c.bands
                )));
            }
            Ok(model)
        }
        None => Ok(Model::new(cfg.model_config(h, w, b), rng)?),
    }
}

fn subset(data: &Dataset, idx: &[usize]) -> CliResult<Dataset> {
    Ok(data.subset(idx)?)
}

pub fn pretrain_cmd(cfg: RunConfig) -> CliResult<()> {
    let data = load_data(&cfg)?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let model = initial_model(&cfg, &data, &mut rng)?;
    let split = split_dataset(data.len(), None, (1.0 - cfg.val_fraction, cfg.val_fraction, 0.0), cfg.seed)?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(CliError::data(format!(
            "{} samples are too few for a training/validation split",
            data.len()
        )));
    }
    let (train, val) = (subset(&data, &split.train)?, subset(&data, &split.val)?);

    let run = create_run_dir(&cfg.out, "pretrain")?;
    eprintln!("run directory: {}", run.display());
    write_file(&run.join("config.resolved"), &cfg.render())?;
    let mut epochs = JsonLines::create(run.join("epochs.jsonl"))?;
    let mut phases = JsonLines::create(run.join("phases.jsonl"))?;
    let mut log_err = None;
    let pcfg = cfg.pretrain_config(threads(&cfg));
    let outcome = pretrain(model, &train, &val, &pcfg, &mut rng, &mut |ev| {
        let r = match ev {
            PretrainEvent::Epoch(l) => {
                println!(
                    "epoch {:>4}  n {}  loss {:.4}  exact {:.4}  segment {:.4}  lr {:.5}",
                    l.epoch, l.phase_n, l.train_loss, l.val_exact_acc, l.val_seg_acc, l.lr
                );
                epochs.push(l)
            }
            PretrainEvent::Transition(t) => {
                println!("phase {} -> {} at epoch {} (accuracy {:.4})", t.old_n, t.new_n, t.epoch, t.val_acc);
                phases.push(t)
            }
        };
        if let Err(e) = r {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let epoch = outcome.logs.last().map(|l| l.epoch).unwrap_or(0);
    save_checkpoint(&run.join(CHECKPOINT_DIR), &outcome.model, epoch, cfg.seed, Some(&rng))?;
    let summary = json!({
        "epochs_run": outcome.epochs_run(),
        "final_phase": outcome.final_phase(),
        "stopped_early": outcome.stopped_early,
        "diverged": outcome.diverged.as_ref().map(|e| e.to_string()),
        "final_val_exact_acc": outcome.logs.last().map(|l| l.val_exact_acc),
    });
    write_file(&run.join("summary.json"), &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    if let Some(e) = outcome.diverged {
        return Err(CliError {
            code: EXIT_NUMERIC,
            message: format!("{e}; last finite weights saved to {}", run.join(CHECKPOINT_DIR).display()),
        });
    }
    println!(
        "finished after {} epochs at {} segments",
        outcome.epochs_run(),
        outcome.final_phase()
    );
    Ok(())
}

fn require_targets(data: &Dataset, cfg: &RunConfig) -> CliResult<()> {
    if data.targets().is_none() {
        let path = cfg.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        return Err(CliError::data(format!("{path}: dataset has no target values")));
    }
    Ok(())
}

fn predictions_csv(indices: &[usize], data: &Dataset, preds: &[f64]) -> String {
    let targets = data.targets().expect("labeled");
    let mut s = String::from("index,target,prediction\n");
    for ((i, t), p) in indices.iter().zip(targets).zip(preds) {
        let _ = writeln!(s, "{i},{t},{p}");
    }
    s
}

fn print_report(label: &str, r: &MetricsReport) {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    println!(
        "{label}: n {}  R2 {}  RMSE {:.4}  MAE {:.4}  RPD {}",
        r.count,
        opt(r.r2),
        r.rmse,
        r.mae,
        if r.rpd_infinite { "inf".into() } else { opt(r.rpd) }
    );
}

pub fn finetune_cmd(cfg: RunConfig) -> CliResult<()> {
    let data = load_data(&cfg)?;
    require_targets(&data, &cfg)?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let model = initial_model(&cfg, &data, &mut rng)?;
    let split = split_dataset(data.len(), data.targets(), cfg.split, cfg.seed)?;
    let train = subset(&data, &split.train)?;
    let val = subset(&data, &split.val)?;
    let (test_idx, test_label) =
        if split.test.is_empty() { (&split.val, "validation") } else { (&split.test, "test") };
    let test = subset(&data, test_idx)?;

    let run = create_run_dir(&cfg.out, "finetune")?;
    eprintln!("run directory: {}", run.display());
    write_file(&run.join("config.resolved"), &cfg.render())?;
    let mut epochs = JsonLines::create(run.join("epochs.jsonl"))?;
    let mut log_err = None;
    let fcfg = cfg.finetune_config(threads(&cfg));
    let outcome = finetune(model, &train, &val, &fcfg, &mut rng, &mut |e| {
        println!(
            "epoch {:>4}  loss {:.4}  val R2 {:.4}  val RMSE {:.4}  lr {:.5}",
            e.epoch, e.train_loss, e.val_r2, e.val_rmse, e.lr
        );
        if let Err(err) = epochs.push(e) {
            log_err.get_or_insert(err);
        }
    })
    .map_err(|e| match e {
        specbpp::Error::InvalidArgument(m) => CliError::data(m),
        e => e.into(),
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let workers = Workers::new(fcfg.threads)?;
    let (_, mut val_report) = evaluate_regression(&outcome.model, &val, &workers)?;
    let (preds, mut test_report) = evaluate_regression(&outcome.model, &test, &workers)?;
    val_report.epoch = Some(outcome.best_epoch);
    test_report.epoch = Some(outcome.best_epoch);
    save_checkpoint(&run.join(CHECKPOINT_DIR), &outcome.model, outcome.best_epoch, cfg.seed, Some(&rng))?;
    let metrics = json!({
        "best_epoch": outcome.best_epoch,
        "stopped_early": outcome.stopped_early,
        "evaluated_on": test_label,
        "validation": val_report,
        "test": test_report,
    });
    write_file(&run.join("metrics.json"), &(serde_json::to_string_pretty(&metrics).expect("json") + "\n"))?;
    write_file(&run.join("predictions.csv"), &predictions_csv(test_idx, &test, &preds))?;
    println!("best epoch {}", outcome.best_epoch);
    print_report(test_label, &test_report);
    println!("{}", test_report.banner());
    Ok(())
}

pub fn eval_cmd(cfg: RunConfig) -> CliResult<()> {
    let data = load_data(&cfg)?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut model = initial_model(&cfg, &data, &mut rng)?;
    let workers = Workers::new(threads(&cfg))?;

    let mut report = MetricsReport::default();
    let mut preds = None;
    if data.targets().is_some() {
        if model.target_scale().is_none() {
            // No trained regression head: report the mean predictor, the
            // reference an uninformative model should match.
            let scale = TargetScale::fit(data.targets().expect("labeled"));
            model.init_regression_head(scale, &mut rng);
            let h = model.params.get("reg.w2")?.shape().to_vec();
            model.params.insert("reg.w2", Array::zeros(&h));
            println!("no trained regression head; reporting the mean predictor");
        }
        let (p, r) = evaluate_regression(&model, &data, &workers)?;
        report = r;
        preds = Some(p);
    } else if model.perm_segments().is_none() {
        return Err(require_targets(&data, &cfg).unwrap_err());
    }
    if let Some(n) = model.perm_segments() {
        let mut prng = SeededRng::seed_from_u64(cfg.seed.wrapping_add(1));
        let set = PretextSet::uniform(data.patches(), n, &mut prng)?;
        let (exact, seg) = evaluate_pretext(&model, &set, &workers)?;
        report.perm_exact_match_acc = Some(exact);
        report.perm_per_segment_acc = Some(seg);
        println!("pretext n {n}: exact {exact:.4}  segment {seg:.4}");
    }

    let run = create_run_dir(&cfg.out, "eval")?;
    eprintln!("run directory: {}", run.display());
    write_file(&run.join("config.resolved"), &cfg.render())?;
    write_file(&run.join("metrics.json"), &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    if let Some(p) = preds {
        let idx: Vec<usize> = (0..data.len()).collect();
        write_file(&run.join("predictions.csv"), &predictions_csv(&idx, &data, &p))?;
        print_report("dataset", &report);
        println!("{}", report.banner());
    }
    Ok(())
}

pub fn gen_data_cmd(output: &Path, cfg: SynthConfig, seed: u64) -> CliResult<()> {
    let sidecar = PathBuf::from(format!("{}.provenance.json", output.display()));
    for p in [output, sidecar.as_path()] {
        if p.exists() {
            return Err(CliError::config(format!("{}: already exists, refusing to overwrite", p.display())));
        }
    }
    if cfg.count == 0 {
        return Err(CliError::config("count must be positive"));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let data = generate_synthetic(cfg, &mut rng)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }
    write_dataset(output, &data)?;
    let note = json!({
        "generator": PROVENANCE,
        "count": cfg.count,
        "bands": cfg.bands,
        "height": cfg.height,
        "width": cfg.width,
        "seed": seed,
    });
    write_file(&sidecar, &(serde_json::to_string_pretty(&note).expect("json") + "\n"))?;
    println!("wrote {} spectra to {}", cfg.count, output.display());
    Ok(())
}

/// Draws, one per line as zero-based images, then a frequency table sorted
/// by count (ties by permutation).
pub fn sample_perm_cmd(n: usize, temperature: f64, count: usize, seed: u64) -> CliResult<String> {
    let sampler = BoltzmannSampler::new(n, temperature)?;
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut out = String::new();
    let mut freq: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..count {
        let p = sampler.sample(&mut rng);
        let line: Vec<String> = p.as_slice().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
        *freq.entry(p.as_slice().to_vec()).or_default() += 1;
    }
    let mut rows: Vec<(Vec<usize>, usize)> = freq.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let _ = writeln!(out, "\n# permutation  displacement  count  fraction");
    for (perm, c) in rows {
        let disp: usize = perm.iter().enumerate().map(|(i, &v)| i.abs_diff(v)).sum();
        let text: Vec<String> = perm.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "# {}  {disp}  {c}  {:.6}",
            text.join(" "),
            c as f64 / count.max(1) as f64
        );
    }
    Ok(out)
}
