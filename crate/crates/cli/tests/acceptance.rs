//! End-to-end acceptance checks. Everything runs inside one test so the
//! timed criteria are not competing with other tests for CPU.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use specbpp::curriculum::{CurriculumState, Schedule, PHASES};
use specbpp::data::{apply_permutation, generate_synthetic, split_dataset, Dataset, Patch, SynthConfig};
use specbpp::model::{pretext_loss, Bound, Model, ModelConfig};
use specbpp::permutation::{enumerate_sn, uniform_sample, BoltzmannSampler};
use specbpp::tensor::gradcheck::check_gradients;
use specbpp::tensor::{Array, ConvGeom, Tape, Var};
use specbpp::train::{
    compute_metrics, evaluate_regression, finetune, pretrain, FinetuneConfig, PretextMode,
    PretrainConfig, StopRule, Workers,
};
use specbpp::SeededRng;

const BIN: &str = env!("CARGO_BIN_EXE_specbpp");

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, o: &Outcome, took: Duration) {
    // written past the test harness capture so the summary always shows
    let mut out = std::io::stdout();
    let _ = writeln!(
        out,
        "acceptance {id} [{}] {name}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    let _ = out.flush();
}

fn note(line: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "    {line}");
    let _ = out.flush();
}

// 1 ------------------------------------------------------------------------

fn permutation_algebra() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(1);
    let mut failures = 0;
    for trial in 0..10_000 {
        let n = 3 + trial % 6;
        let bands = n + rng.random_range(0..80);
        let cube: Vec<f32> = (0..bands).map(|_| rng.random_range(-1e6f32..1e6)).collect();
        let s = Patch::new(1, 1, bands, cube).unwrap();
        let p = uniform_sample(n, &mut rng);
        let there = apply_permutation(&s, &p).unwrap();
        let back = apply_permutation(&there, &p.inverse()).unwrap();
        let same = back.cube.len() == s.cube.len()
            && back.cube.iter().zip(&s.cube).all(|(a, b)| a.to_bits() == b.to_bits());
        failures += usize::from(!same);
    }
    let sizes: Vec<usize> = (3..=8).map(|n| enumerate_sn(n).unwrap().len()).collect();
    let sizes_ok = sizes == [6, 24, 120, 720, 5040, 40320];
    Outcome {
        pass: failures == 0 && sizes_ok,
        detail: format!("10000 round trips, {failures} mismatches; |S_n| for n=3..8 = {sizes:?}"),
    }
}

// 2 ------------------------------------------------------------------------

/// All permutations of `0..n` by recursive insertion, independent of the
/// library enumeration.
fn all_perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_perms(n - 1) {
        for at in 0..n {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn sampler_exactness() -> Outcome {
    let perms = all_perms(4);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (k, t) in [0.5, 2.0, 100.0].into_iter().enumerate() {
        let weights: Vec<f64> = perms
            .iter()
            .map(|p| {
                let phi: usize = p.iter().enumerate().map(|(i, &v)| i.abs_diff(v)).sum();
                (-(phi as f64) / t).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        let sampler = BoltzmannSampler::new(4, t).unwrap();
        let mut rng = SeededRng::seed_from_u64(20 + k as u64);
        let draws = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(sampler.sample(&mut rng).as_slice().to_vec()).or_default() += 1;
        }
        let tv: f64 = 0.5
            * perms
                .iter()
                .zip(&weights)
                .map(|(p, w)| (counts.get(p).copied().unwrap_or(0) as f64 / draws as f64 - w / z).abs())
                .sum::<f64>();
        let outside = counts.keys().filter(|p| !perms.contains(p)).count();
        worst = worst.max(if outside > 0 { 1.0 } else { tv });
        parts.push(format!("T={t}: TV {tv:.4}"));
    }
    Outcome { pass: worst <= 0.01, detail: format!("{} (limit 0.01)", parts.join(", ")) }
}

// 3 ------------------------------------------------------------------------

fn rand_array(shape: &[usize], rng: &mut SeededRng) -> Array<f64> {
    Array::uniform(shape, 1.0, rng)
}

/// Random projection to a scalar so every output element gets a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> specbpp::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = SeededRng::seed_from_u64(seed);
    let r = tape.leaf(Array::uniform(&shape, 1.0, &mut rng));
    let m = tape.mul(y, r)?;
    tape.sum_all(m)
}

type OpCase = (Vec<Vec<usize>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> specbpp::Result<Var>>);

fn op_cases() -> Vec<(&'static str, OpCase)> {
    let g = ConvGeom { height: 3, width: 4, kernel: 3 };
    let case = |shapes: &[&[usize]], f: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> specbpp::Result<Var>>| {
        (shapes.iter().map(|s| s.to_vec()).collect::<Vec<_>>(), f)
    };
    vec![
        ("matmul", case(&[&[3, 4], &[4, 2]], Box::new(|t, v| t.matmul(v[0], v[1])))),
        ("add", case(&[&[3, 4], &[3, 4]], Box::new(|t, v| t.add(v[0], v[1])))),
        ("add row broadcast", case(&[&[3, 4], &[1, 4]], Box::new(|t, v| t.add(v[0], v[1])))),
        ("add column broadcast", case(&[&[3, 4], &[3, 1]], Box::new(|t, v| t.add(v[0], v[1])))),
        ("sub", case(&[&[3, 4], &[3, 4]], Box::new(|t, v| t.sub(v[0], v[1])))),
        ("mul", case(&[&[3, 4], &[3, 4]], Box::new(|t, v| t.mul(v[0], v[1])))),
        ("mul column broadcast", case(&[&[3, 4], &[3, 1]], Box::new(|t, v| t.mul(v[0], v[1])))),
        ("scale", case(&[&[2, 5]], Box::new(|t, v| t.scale(v[0], -1.7)))),
        ("relu", case(&[&[4, 5]], Box::new(|t, v| t.relu(v[0])))),
        ("sigmoid", case(&[&[4, 5]], Box::new(|t, v| t.sigmoid(v[0])))),
        ("concat_cols", case(&[&[3, 2], &[3, 4]], Box::new(|t, v| t.concat_cols(&[v[0], v[1]])))),
        ("mean_rows", case(&[&[5, 3]], Box::new(|t, v| t.mean_rows(v[0])))),
        ("max_cols", case(&[&[5, 3]], Box::new(|t, v| t.max_cols(v[0])))),
        ("mean_cols", case(&[&[5, 3]], Box::new(|t, v| t.mean_cols(v[0])))),
        ("dwconv", case(&[&[12, 2], &[2, 9]], Box::new(move |t, v| t.dwconv(v[0], v[1], g)))),
        ("conv2d", case(&[&[12, 2], &[3, 18]], Box::new(move |t, v| t.conv2d(v[0], v[1], g)))),
        ("pwconv", case(&[&[12, 3], &[3, 4], &[1, 4]], Box::new(|t, v| t.pwconv(v[0], v[1], v[2])))),
        ("reshape", case(&[&[2, 6]], Box::new(|t, v| {
            let r = t.reshape(v[0], &[3, 4])?;
            let k = t.leaf(Array::from_f64(&[4, 1], &[1.0, -2.0, 0.5, 3.0])?);
            t.matmul(r, k)
        }))),
        ("softmax_rows", case(&[&[3, 4]], Box::new(|t, v| t.softmax_rows(v[0])))),
        ("log_softmax_rows", case(&[&[3, 4]], Box::new(|t, v| t.log_softmax_rows(v[0])))),
        ("nll", case(&[&[3, 4]], Box::new(|t, v| {
            let l = t.log_softmax_rows(v[0])?;
            t.nll(l, &[2, 0, 3])
        }))),
        ("sum_all", case(&[&[3, 4]], Box::new(|t, v| {
            let s = t.sum_all(v[0])?;
            t.mul(s, s)
        }))),
        ("token_embed", case(&[&[2, 5], &[1, 3], &[5, 3]], Box::new(|t, v| t.token_embed(v[0], v[1], v[2])))),
        ("attention", case(&[&[6, 4], &[6, 4], &[6, 4]], Box::new(|t, v| t.attention(v[0], v[1], v[2], 3, 2)))),
    ]
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        bands: 12,
        height: 3,
        width: 3,
        attn_dim: 4,
        attn_heads: 2,
        ms_channels: 3,
        embed_dim: 4,
        ca_ratio: 2,
        sa_kernel: 3,
        ms_activation: true,
        input_norm: true,
    }
}

fn gradient_correctness() -> Outcome {
    const INSTANCES: usize = 20;
    let mut rng = SeededRng::seed_from_u64(3);
    let mut worst_op = ("", 0.0f64);
    let cases = op_cases();
    for (name, (shapes, f)) in &cases {
        for trial in 0..INSTANCES as u64 {
            let inputs: Vec<Array<f64>> = shapes.iter().map(|s| rand_array(s, &mut rng)).collect();
            let r = check_gradients(&inputs, 1e-5, |t, v| {
                let y = f(t, v)?;
                project(t, y, trial)
            })
            .unwrap();
            if r.max_rel_error() >= worst_op.1 {
                worst_op = (name, r.max_rel_error());
            }
        }
    }

    let cfg = tiny_config();
    let mut worst_e2e = 0.0f64;
    for trial in 0..INSTANCES {
        let mut m = Model::<f64>::new(cfg.clone(), &mut rng).unwrap();
        m.init_perm_head(3 + trial % 2, &mut rng);
        let n = m.perm_segments().unwrap();
        let cube: Vec<f32> = (0..cfg.height * cfg.width * cfg.bands).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Patch::new(cfg.height, cfg.width, cfg.bands, cube).unwrap();
        let p = uniform_sample(n, &mut rng);
        let shuffled = apply_permutation(&x, &p).unwrap();
        let inv = p.inverse();
        let (names, inputs): (Vec<String>, Vec<Array<f64>>) =
            m.params.iter().map(|(k, v)| (k.clone(), v.clone())).unzip();
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let b = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let xi = m.input(t, &shuffled)?;
            let z = m.encode(t, &b, xi)?;
            let logits = m.perm_logits(t, &b, z)?;
            specbpp::model::heads::perm_loss(t, logits, &inv)
        })
        .unwrap();
        worst_e2e = worst_e2e.max(r.max_rel_error());
    }
    Outcome {
        pass: worst_op.1 < 1e-4 && worst_e2e < 1e-3,
        detail: format!(
            "{} ops x {INSTANCES} instances, worst {:.2e} ({}), limit 1e-4; end-to-end x {INSTANCES}, worst {worst_e2e:.2e}, limit 1e-3",
            cases.len(),
            worst_op.1,
            worst_op.0
        ),
    }
}

// 4 ------------------------------------------------------------------------

fn loss_anchors() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(4);
    let (mut worst_uniform, mut worst_onehot) = (0.0f64, 0.0f64);
    for n in 3..=8 {
        for _ in 0..20 {
            let inv = uniform_sample(n, &mut rng);
            let uniform = Array::<f64>::from_f64(&[n, n], &vec![1.0 / n as f64; n * n]).unwrap();
            let l = pretext_loss(&uniform, &inv).unwrap();
            worst_uniform = worst_uniform.max((l - (n as f64).ln()).abs());
            let mut onehot = vec![0.0; n * n];
            for (i, &j) in inv.as_slice().iter().enumerate() {
                onehot[i * n + j] = 1.0;
            }
            let l = pretext_loss(&Array::<f64>::from_f64(&[n, n], &onehot).unwrap(), &inv).unwrap();
            worst_onehot = worst_onehot.max(l + 0.0);
        }
    }
    Outcome {
        pass: worst_uniform <= 1e-6 && worst_onehot < 1e-6,
        detail: format!(
            "uniform |L - ln N| max {worst_uniform:.1e} (limit 1e-6), one-hot L max {worst_onehot:.1e} (limit 1e-6)"
        ),
    }
}

// 5 ------------------------------------------------------------------------

fn curriculum_machine() -> Outcome {
    let schedule = Schedule::default();
    let mut c = CurriculumState::new([0.99; PHASES]).unwrap();
    let trace = [0.4, 0.7, 0.995, 0.3, 0.98, 0.99, 0.5, 1.0, 0.2, 0.6, 0.999, 0.1, 0.991, 0.97, 0.995, 0.2];
    let mut phases = vec![c.current_n()];
    let mut resets_ok = true;
    let mut latched = true;
    for acc in trace {
        let before = c.current_n();
        let t = c.update(acc, &schedule).unwrap();
        latched &= c.current_n() >= before;
        if let Some(t) = t {
            phases.push(t.new_n);
            resets_ok &= c.temperature(&schedule) == schedule.t_min;
        }
    }
    let pass = phases == [3, 4, 5, 6, 7, 8] && resets_ok && latched && c.current_n() == 8;
    Outcome {
        pass,
        detail: format!(
            "phases {phases:?}, temperature reset to {} at every transition: {resets_ok}, never decreased: {latched}",
            schedule.t_min
        ),
    }
}

// 6 and 7 --------------------------------------------------------------------

const DESK_SEED: u64 = 3;

fn desk_config() -> PretrainConfig {
    PretrainConfig {
        epochs: 50,
        threads: 1,
        val_seed: DESK_SEED + 1,
        stop: Some(StopRule { phase_n: 3, exact_acc: 0.95 }),
        ..PretrainConfig::default()
    }
}

fn split_pretext(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let s = split_dataset(data.len(), None, (0.85, 0.15, 0.0), seed).unwrap();
    (data.subset(&s.train).unwrap(), data.subset(&s.val).unwrap())
}

fn synth(count: usize, seed: u64) -> Dataset {
    generate_synthetic(SynthConfig::new(count, 64), &mut SeededRng::seed_from_u64(seed)).unwrap()
}

fn pretext_convergence() -> (Outcome, Option<Model<f32>>) {
    let data = synth(2000, 1);
    let (train, val) = split_pretext(&data, DESK_SEED);
    let mut rng = SeededRng::seed_from_u64(DESK_SEED);
    let model = Model::new(ModelConfig::default(), &mut rng).unwrap();
    let start = Instant::now();
    let out = pretrain(model, &train, &val, &desk_config(), &mut rng, &mut |_| {}).unwrap();
    let elapsed = start.elapsed();
    let best = out.logs.iter().filter(|l| l.phase_n == 3).map(|l| l.val_exact_acc).fold(0.0, f64::max);
    let pass = best >= 0.95 && out.epochs_run() <= 50 && elapsed < Duration::from_secs(600);
    let detail = format!(
        "N=3 validation exact-match {best:.4} after {} epochs in {:.0} s (need >= 0.95 within 50 epochs and 600 s)",
        out.epochs_run(),
        elapsed.as_secs_f64()
    );
    (Outcome { pass, detail }, Some(out.model))
}

/// Curriculum against direct training at N=6 under one epoch budget.
/// Reported only; there is no pass threshold.
fn curriculum_vs_direct() {
    const BUDGET: usize = 40;
    let data = synth(400, 1);
    let (train, val) = split_pretext(&data, DESK_SEED);
    let run = |mode: PretextMode| {
        let mut rng = SeededRng::seed_from_u64(DESK_SEED);
        let model = Model::new(ModelConfig::default(), &mut rng).unwrap();
        let cfg = PretrainConfig {
            epochs: BUDGET,
            batch_size: 16,
            threads: 1,
            val_seed: DESK_SEED + 1,
            mode,
            ..PretrainConfig::default()
        };
        pretrain(model, &train, &val, &cfg, &mut rng, &mut |_| {}).unwrap()
    };
    let cur = run(PretextMode::Curriculum { thresholds: CURRICULUM_GATES, schedule: Schedule::default() });
    let dir = run(PretextMode::Direct { n: 6 });
    let at6 = cur.logs.iter().rev().find(|l| l.phase_n == 6);
    let entered = cur.transitions.iter().find(|t| t.new_n == 6).map(|t| t.epoch + 1);
    let last = dir.logs.last().unwrap();
    note(&format!(
        "comparison at N=6, {BUDGET} epochs, {} training spectra, gates {CURRICULUM_GATES:?}:",
        train.len()
    ));
    match (at6, entered) {
        (Some(l), Some(e)) => note(&format!(
            "  curriculum: reached N=6 at epoch {e}, final exact-match {:.4}, per-segment {:.4}",
            l.val_exact_acc, l.val_seg_acc
        )),
        _ => note(&format!("  curriculum: did not reach N=6 (ended at N={})", cur.final_phase())),
    }
    note(&format!(
        "  direct N=6:  final exact-match {:.4}, per-segment {:.4}",
        last.val_exact_acc, last.val_seg_acc
    ));
    if let Some(l) = at6 {
        let verdict = if l.val_exact_acc > last.val_exact_acc { "ahead of" } else { "not ahead of" };
        note(&format!("  curriculum is {verdict} direct training on exact-match"));
    }
}

// loose gates so the curriculum reaches N=6 inside the budget; 1.0 holds it there
const CURRICULUM_GATES: [f64; PHASES] = [0.8, 0.5, 0.3, 1.0, 1.0];

fn finetune_benefit(pretrained: &Model<f32>) -> Outcome {
    let seeds = [11u64, 12, 13, 14, 15];
    let cfg = FinetuneConfig { epochs: 60, threads: 1, ..FinetuneConfig::default() };
    let workers = Workers::new(1).unwrap();
    let (mut pre, mut rand) = (Vec::new(), Vec::new());
    for seed in seeds {
        let data = synth(100, seed);
        let s = split_dataset(data.len(), data.targets(), (0.7, 0.15, 0.15), seed).unwrap();
        let (train, val, test) =
            (data.subset(&s.train).unwrap(), data.subset(&s.val).unwrap(), data.subset(&s.test).unwrap());
        let score = |model: Model<f32>, rng: &mut SeededRng| {
            let out = finetune(model, &train, &val, &cfg, rng, &mut |_| {}).unwrap();
            evaluate_regression(&out.model, &test, &workers).unwrap().1.r2_or_zero()
        };
        let mut rng = SeededRng::seed_from_u64(seed);
        pre.push(score(pretrained.clone(), &mut rng));
        let mut rng = SeededRng::seed_from_u64(seed);
        let fresh = Model::new(pretrained.config.clone(), &mut rng).unwrap();
        rand.push(score(fresh, &mut rng));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    note(&format!("pretrained test R2 per seed: {}", fmt(&pre)));
    note(&format!("random-init test R2 per seed: {}", fmt(&rand)));
    let (mp, mr) = (mean(&pre), mean(&rand));
    Outcome {
        pass: mp >= mr,
        detail: format!("100 labeled spectra x 5 seeds, mean test R2 pretrained {mp:.4} vs random init {mr:.4}"),
    }
}

// 8 ------------------------------------------------------------------------

/// Independent formulas: sample standard deviation with n-1.
fn oracle(pred: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (v - p).powi(2)).sum();
    let rmse = (ss_res / n).sqrt();
    let mae = pred.iter().zip(y).map(|(p, v)| (v - p).abs()).sum::<f64>() / n;
    (1.0 - ss_res / ss_tot, rmse, mae, (ss_tot / (n - 1.0)).sqrt() / rmse)
}

fn metrics_correctness() -> Outcome {
    // (predictions, targets, hand-worked R², RMSE, MAE, RPD)
    let cases: [(&[f64], &[f64], [f64; 4]); 3] = [
        (&[1.0, 2.0, 3.0, 5.0], &[1.0, 2.0, 3.0, 4.0], [0.8, 0.5, 0.25, (5.0f64 / 3.0).sqrt() / 0.5]),
        (&[3.0, 3.0, 7.0], &[2.0, 4.0, 6.0], [0.625, 1.0, 1.0, 2.0]),
        (
            &[1.0, 1.0, 3.0, 3.0, 9.0],
            &[0.5, 1.5, 2.5, 3.5, 10.0],
            [1.0 - 2.0 / 56.2, 0.4f64.sqrt(), 0.6, 14.05f64.sqrt() / 0.4f64.sqrt()],
        ),
    ];
    let mut worst = 0.0f64;
    let mut ordered = true;
    for (pred, y, hand) in cases {
        let r = compute_metrics(pred, y).unwrap();
        let got = [r.r2.unwrap(), r.rmse, r.mae, r.rpd.unwrap()];
        let (o1, o2, o3, o4) = oracle(pred, y);
        for ((g, h), o) in got.iter().zip(hand).zip([o1, o2, o3, o4]) {
            worst = worst.max((g - h).abs()).max((g - o).abs());
        }
        ordered &= r.rmse >= r.mae;
    }
    let flat = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
    let flagged = flat.r2.is_none() && flat.r2_undefined && flat.rpd.is_none() && flat.rpd_undefined;
    Outcome {
        pass: worst <= 1e-9 && ordered && flagged,
        detail: format!(
            "3 vectors, max deviation {worst:.1e} (limit 1e-9), RMSE >= MAE: {ordered}, zero-variance flagged: {flagged}"
        ),
    }
}

// 9 ------------------------------------------------------------------------

fn cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let o = Command::new(BIN)
        .current_dir(dir)
        .env("SPECBPP_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn run_dir(parent: &Path) -> PathBuf {
    fs::read_dir(parent).unwrap().next().unwrap().unwrap().path()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dest);
        } else {
            fs::copy(&p, &dest).unwrap();
        }
    }
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let tiny = ["--ms-channels", "4", "--embed-dim", "8", "--batch-size", "16", "--threads", "1", "--seed", "7"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        let mut record = Vec::new();
        record.push(("gen-data stdout", cli(d, &["gen-data", "-o", "data.sbpp", "--count", "40", "--seed", "5"])));
        record.push(("dataset", fs::read(d.join("data.sbpp")).unwrap()));
        record.push(("provenance", fs::read(d.join("data.sbpp.provenance.json")).unwrap()));
        record.push((
            "sample-perm stdout",
            cli(d, &["sample-perm", "--n", "5", "--temperature", "2", "--count", "300", "--seed", "9"]),
        ));
        let mut args = vec!["pretrain", "--data", "data.sbpp", "--epochs", "3", "--out", "pre", "--thresholds", "0.2"];
        args.extend_from_slice(&tiny);
        record.push(("pretrain stdout", cli(d, &args)));
        let pre = run_dir(&d.join("pre"));
        // a fixed path, so the echoed configs do not carry the run timestamp
        copy_dir(&pre.join("checkpoint"), &d.join("ck"));
        let ck = "ck".to_string();
        let mut args = vec!["finetune", "--data", "data.sbpp", "--epochs", "4", "--out", "fine", "--checkpoint", &ck];
        args.extend_from_slice(&tiny);
        record.push(("finetune stdout", cli(d, &args)));
        let fine = run_dir(&d.join("fine"));
        let mut args = vec!["eval", "--data", "data.sbpp", "--out", "ev", "--checkpoint", &ck];
        args.extend_from_slice(&tiny);
        record.push(("eval stdout", cli(d, &args)));
        let ev = run_dir(&d.join("ev"));
        let mut files = Vec::new();
        for (label, dir) in [("pretrain", pre), ("finetune", fine), ("eval", ev)] {
            for (rel, bytes) in snapshot(&dir) {
                files.push((format!("{label}/{}", rel.display()), bytes));
            }
        }
        runs.push((record, files));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let mut differing: Vec<String> =
        a.0.iter().zip(&b.0).filter(|(x, y)| x != y).map(|(x, _)| x.0.to_string()).collect();
    if a.1.iter().map(|f| &f.0).ne(b.1.iter().map(|f| &f.0)) {
        differing.push("file list".into());
    }
    differing.extend(a.1.iter().zip(&b.1).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.clone()));
    Outcome {
        pass: differing.is_empty(),
        detail: format!(
            "5 commands run twice, {} outputs and {} run files compared, differing: {differing:?}",
            a.0.len(),
            a.1.len()
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let timed = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        report(id, name, &o, took);
        (id, name, o.pass, took)
    };
    results.push(timed(1, "permutation algebra", &mut permutation_algebra));
    results.push(timed(2, "sampler exactness", &mut sampler_exactness));
    results.push(timed(3, "gradient correctness", &mut gradient_correctness));
    results.push(timed(4, "loss anchors", &mut loss_anchors));
    results.push(timed(5, "curriculum state machine", &mut curriculum_machine));
    let mut pretrained = None;
    results.push(timed(6, "desk-scale pretext convergence", &mut || {
        let (o, m) = pretext_convergence();
        pretrained = m;
        o
    }));
    curriculum_vs_direct();
    let model = pretrained.expect("criterion 6 returns a model");
    results.push(timed(7, "fine-tuning benefit", &mut || finetune_benefit(&model)));
    results.push(timed(8, "metrics correctness", &mut metrics_correctness));
    results.push(timed(9, "reproducibility", &mut reproducibility));

    let limits = [(1, 10), (2, 30), (3, 300), (6, 600)];
    for (id, secs) in limits {
        let took = results.iter().find(|r| r.0 == id).unwrap().3;
        assert!(took < Duration::from_secs(secs), "criterion {id} took {took:?}, limit {secs} s");
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.2).map(|r| (r.0, r.1)).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
