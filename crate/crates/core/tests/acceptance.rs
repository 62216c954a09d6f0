//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. The desk-scale training experiments make
//! this the slowest test in the workspace (roughly a quarter of an hour on
//! one core).

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use dasfft::degradation::{
    degrade, sample_params, DegradationParams, ATMOSPHERIC_RANGE, BETA_RANGE, BLUR_SIGMA_RANGE, DOWN_TARGET_RANGE, MOTION_ANGLES, MOTION_LENGTH,
    NOISE_MEAN_RANGE, NOISE_STD_RANGE,
};
use dasfft::facegen::{generate_face, FaceSample};
use dasfft::harness::training::generator_objective;
use dasfft::harness::*;
use dasfft::losses::{hinge_disc_loss, reconstruction_loss, style_loss, LossWeights};
use dasfft::metrics::{psnr, ssim, MetricReport};
use dasfft::networks::{Ablation, Graph, ModelConfig, ModelState};
use dasfft::rng::{derive_indexed, fnv1a, substream};
use dasfft::sfft::{sft_apply, Sff, SFT_EPS};
use dasfft::tensor::kernels::channel_stats;
use dasfft::tensor::Tensor;

const CHILD_ENV: &str = "DASFFT_ACCEPTANCE_CHILD";
const DIGEST_PREFIX: &str = "degradation-digest ";
const SEED: u64 = 1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

/// Writes straight to stdout; the test harness only captures `println!`, so
/// the criterion lines show up even when the suite passes.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let checks = run_gradsuite().expect("gradient suite");
    let elapsed = t.elapsed();
    for c in &checks {
        emit(&format!("    {}", c.line()));
    }
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!("{} checks, worst rel err {worst:.2e}, failed {failed:?}, {:.1}s (limit 60s)", checks.len(), secs(elapsed)),
    )
}

/// Output statistics equal `(y_b, |y_s|·σ/(σ+ε))`. The bound
/// `| std − |y_s| | < 1e-4` holds when `|y_s|·ε/(σ+ε) < 1e-4`, so scales are
/// drawn with `|y_s| ≤ 10σ` inside the `σ ≥ 1e-2` regime.
fn sft_statistics() -> Outcome {
    let mut rng = substream(SEED, "acceptance/sft");
    let (mut worst_mean, mut worst_exact, mut worst_target) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let c = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let target_sd: Vec<f64> = (0..c).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();
        let offsets: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut f = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0));
        let (mu0, sd0) = channel_stats(&f).unwrap();
        let plane = h * w;
        for (ch, chunk) in f.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v - mu0.data()[ch]) / sd0.data()[ch] * target_sd[ch] + offsets[ch];
            }
        }
        let (_, sd) = channel_stats(&f).unwrap();
        let ys: Vec<f64> = (0..c)
            .map(|ch| {
                let bound = (10.0 * sd.data()[ch]).min(4.0);
                rng.random_range(-bound..bound)
            })
            .collect();
        let yb: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let store = dasfft::networks::ParamStore::<f64>::new();
        let mut g = Graph::new(&store, &[]);
        let fv = g.constant(f.clone());
        let sff = Sff::constant(&mut g, Tensor::vector(ys.clone()), Tensor::vector(yb.clone()));
        let out = sft_apply(&mut g, fv, &sff).unwrap();
        let (mu_out, sd_out) = channel_stats(g.value(out)).unwrap();
        for ch in 0..c {
            let s = sd.data()[ch];
            worst_mean = worst_mean.max((mu_out.data()[ch] - yb[ch]).abs());
            worst_exact = worst_exact.max((sd_out.data()[ch] - ys[ch].abs() * s / (s + SFT_EPS)).abs());
            worst_target = worst_target.max((sd_out.data()[ch] - ys[ch].abs()).abs());
        }
    }
    outcome(
        worst_mean < 1e-10 && worst_target < 1e-4 && worst_exact < 1e-10,
        format!("1000 pairs: max |mean - y_b| {worst_mean:.1e}, max |std - |y_s|| {worst_target:.1e}, max |std - closed form| {worst_exact:.1e}"),
    )
}

/// Bit-level digest of a fixed set of degradations.
fn degradation_digest() -> u64 {
    let mut bytes = Vec::new();
    for i in 0..3u64 {
        let face: FaceSample<f64> = generate_face(derive_indexed(SEED, "acceptance/face", i), 64).unwrap();
        let params = sample_params(derive_indexed(SEED, "acceptance/degrade", i), (1, 3));
        bytes.extend(params.to_kv_text().bytes());
        for v in degrade(&face.image, &face.depth, &params).unwrap().data() {
            bytes.extend(v.to_bits().to_le_bytes());
        }
    }
    fnv1a(&bytes)
}

/// Child half of the restart check: prints the digest when spawned by the
/// acceptance run, does nothing otherwise.
#[test]
fn restart_digest_child() {
    if std::env::var_os(CHILD_ENV).is_some() {
        println!("{DIGEST_PREFIX}{:016x}", degradation_digest());
    }
}

fn digest_in_fresh_process() -> Option<u64> {
    let exe = std::env::current_exe().ok()?;
    let out = Command::new(exe)
        .args(["--exact", "restart_digest_child", "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, "1")
        .output()
        .ok()?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    stdout.lines().find_map(|l| l.find(DIGEST_PREFIX).map(|i| &l[i + DIGEST_PREFIX.len()..])).and_then(|h| u64::from_str_radix(h.trim(), 16).ok())
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

fn degradation_identities() -> Outcome {
    let face: FaceSample<f64> = generate_face(SEED, 64).unwrap();
    let id = degrade(&face.image, &face.depth, &DegradationParams::identity(64)).unwrap();
    let id_err = id.data().iter().zip(face.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let n = 10_000;
    let (mut out_of_range, mut sum_sigma, mut sum_beta) = (0usize, 0.0, 0.0);
    for i in 0..n {
        let p = sample_params(derive_indexed(SEED, "acceptance/draws", i), (0, 3));
        let rain_ok = p.rain_layers.len() <= 3
            && p.rain_layers.iter().all(|r| {
                in_range(r.noise_mean, NOISE_MEAN_RANGE)
                    && in_range(r.noise_std, NOISE_STD_RANGE)
                    && r.motion_length == MOTION_LENGTH
                    && MOTION_ANGLES.contains(&r.motion_angle)
            });
        let ok = in_range(p.blur_sigma, BLUR_SIGMA_RANGE)
            && (DOWN_TARGET_RANGE.0..=DOWN_TARGET_RANGE.1).contains(&p.down_target)
            && in_range(p.beta, BETA_RANGE)
            && p.atmospheric.iter().all(|&a| in_range(a, ATMOSPHERIC_RANGE))
            && rain_ok;
        out_of_range += usize::from(!ok);
        sum_sigma += p.blur_sigma;
        sum_beta += p.beta;
    }
    let mid = |(lo, hi): (f64, f64)| (lo + hi) / 2.0;
    let sigma_dev = (sum_sigma / n as f64 / mid(BLUR_SIGMA_RANGE) - 1.0).abs();
    let beta_dev = (sum_beta / n as f64 / mid(BETA_RANGE) - 1.0).abs();

    let here = degradation_digest();
    let there = digest_in_fresh_process();
    let restart_ok = there == Some(here);

    outcome(
        id_err < 1e-6 && out_of_range == 0 && sigma_dev < 0.02 && beta_dev < 0.02 && restart_ok,
        format!(
            "identity max err {id_err:.1e}; {out_of_range}/{n} draws out of range; blur-sigma mean off midpoint by {:.2}%, beta by {:.2}%; \
             digest {here:016x} vs fresh process {}",
            100.0 * sigma_dev,
            100.0 * beta_dev,
            there.map_or("unavailable".to_string(), |d| format!("{d:016x}"))
        ),
    )
}

fn loss_closed_forms(state: &ModelState, pair: &Pair) -> Outcome {
    let nets = &state.nets;
    let mut g = Graph::new(&state.store, &[]);
    let (h1, h2) = (g.constant(pair.hq().clone()), g.constant(pair.hq().clone()));
    let rec = reconstruction_loss(&mut g, h1, h2, &nets.discriminators).unwrap();
    let sty = style_loss(&mut g, h1, h2, &pair.face.parsing, &nets.hq_encoder).unwrap();
    let real = g.constant(Tensor::full(&[1, 4, 4], 1.0));
    let fake = g.constant(Tensor::full(&[1, 4, 4], -1.0));
    let hinge = hinge_disc_loss(&mut g, &[real], &[fake]).unwrap();
    let (rec, sty, hinge) = (g.value(rec).data()[0], g.value(sty).data()[0], g.value(hinge).data()[0]);

    let weights = LossWeights { lambda_s: 0.7, lambda_rec: 10.0, lambda_g: 0.1 };
    let mut g = Graph::new(&state.store, &[]);
    let (_, t) = generator_objective(&mut g, state, pair, weights).unwrap();
    let weighted = weights.lambda_s * t.style + weights.lambda_rec * t.reconstruction + weights.lambda_g * t.adversarial;
    let total_err = (t.total - weighted).abs();
    outcome(
        rec == 0.0 && sty == 0.0 && hinge == 0.0 && total_err < 1e-9,
        format!("L_rec(H,H)={rec:e}, L_s(H,H)={sty:e}, L_D(1,-1)={hinge:e}, |total - weighted sum|={total_err:.1e}"),
    )
}

struct Alignment {
    ratio: f64,
    win: f64,
    dafe_time: Duration,
    pretrain_time: Duration,
}

fn dafe_alignment(a: &Alignment) -> Outcome {
    outcome(
        a.ratio <= 0.1 && a.win >= 0.95 && a.dafe_time < Duration::from_secs(600),
        format!(
            "held-out embedding mse ratio {:.4} (limit 0.1); aligned closer on {:.1}% (limit 95%); align {:.0}s (limit 600s), pretrain {:.0}s",
            a.ratio,
            100.0 * a.win,
            secs(a.dafe_time),
            secs(a.pretrain_time)
        ),
    )
}

struct SmokeRun {
    lq_psnr: f64,
    restored_psnr: f64,
    rec_first: f64,
    rec_last: f64,
    time: Duration,
}

fn smoke_run(state: &mut ModelState, cfg: &RunConfig, faces: &[Pair]) -> SmokeRun {
    let t = Instant::now();
    let report = run_gan_training(cfg, state, faces, None).expect("gan training");
    let time = t.elapsed();
    let n = faces.len() as f64;
    let lq_psnr = faces.iter().map(|p| psnr(&p.lq, p.hq()).unwrap()).sum::<f64>() / n;
    let restored_psnr = faces.iter().map(|p| psnr(&restore(state, &p.lq, &p.face.parsing).unwrap().image, p.hq()).unwrap()).sum::<f64>() / n;
    SmokeRun {
        lq_psnr,
        restored_psnr,
        rec_first: report.rows.first().map_or(f64::NAN, |r| r.reconstruction),
        rec_last: report.rows.last().map_or(f64::NAN, |r| r.reconstruction),
        time,
    }
}

fn restoration_smoke(r: &SmokeRun) -> Outcome {
    let gain = r.restored_psnr - r.lq_psnr;
    outcome(
        gain >= 2.0 && r.time < Duration::from_secs(900),
        format!(
            "restored {:.2} dB vs LQ {:.2} dB (gain {gain:.2}, limit 2.0); batch L_rec {:.4} -> {:.4}; {:.0}s (limit 900s)",
            r.restored_psnr,
            r.lq_psnr,
            r.rec_first,
            r.rec_last,
            secs(r.time)
        ),
    )
}

fn ablation_ordering(dafe: f64, only: f64) -> Outcome {
    let ordered = dafe <= only;
    let flag = if ordered { "ordering holds" } else { "INVERSION FLAGGED: sfft_dafe ended above sfft_only" };
    // An inversion is a reportable empirical outcome, not a failure.
    outcome(true, format!("train-set L_rec sfft_dafe {dafe:.5} vs sfft_only {only:.5}: {flag}"))
}

fn metric_oracles(state: &ModelState, pairs: &[Pair]) -> Outcome {
    let mut r = substream(SEED, "acceptance/metrics");
    let a = Tensor::from_fn(&[3, 16, 16], |_| r.random_range(0.0..1.0));
    let b = Tensor::from_fn(&[3, 16, 16], |_| r.random_range(0.0..1.0));
    let zeros = Tensor::<f64>::zeros(&[3, 12, 12]);
    let ones = Tensor::<f64>::full(&[3, 12, 12], 1.0);
    let c1 = 0.01f64 * 0.01;
    let closed = psnr(&a, &a).unwrap() == 99.0
        && (psnr(&zeros, &Tensor::full(&[3, 12, 12], 0.1)).unwrap() - 20.0).abs() < 1e-9
        && psnr(&zeros, &ones).unwrap() == 0.0
        && ssim(&a, &a).unwrap() == 1.0
        && (ssim(&zeros, &ones).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12
        && ssim(&a, &b).unwrap() == ssim(&b, &a).unwrap();

    let items: Vec<EvalItem> = pairs.iter().enumerate().map(|(i, p)| EvalItem::from_pair(format!("sample_{i:03}"), p)).collect();
    let report = evaluate(state, &items).unwrap();
    let csv = report.restored.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    let row_ok = |l: &&str| {
        let cols: Vec<&str> = l.split(',').collect();
        let six = |s: &str| s.split_once('.').is_some_and(|(_, f)| f.len() == 6) && s.parse::<f64>().is_ok();
        cols.len() == 5 && cols[0].starts_with("sample_") && six(cols[1]) && six(cols[2]) && cols[3] == "n/a" && cols[4] == "n/a"
    };
    let schema = lines.first() == Some(&MetricReport::CSV_HEADER)
        && MetricReport::CSV_HEADER == "sample,psnr_db,ssim,lpips,fid"
        && lines.len() == items.len() + 1
        && lines[1..].iter().all(row_ok);
    outcome(closed && schema, format!("closed-form metric cases {}; eval CSV header and {} rows {}", ok_word(closed), items.len(), ok_word(schema)))
}

fn ok_word(b: bool) -> &'static str {
    if b {
        "match"
    } else {
        "MISMATCH"
    }
}

#[test]
fn acceptance() {
    if std::env::var_os(CHILD_ENV).is_some() {
        return;
    }
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        emit(&format!("{} [{n}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail));
        results.push((n, name, o));
    };

    record(1, "gradient suite", gradient_suite());
    record(2, "SFT statistic matching", sft_statistics());
    record(3, "degradation identities", degradation_identities());

    let cfg = RunConfig { seed: SEED, ..RunConfig::default() };
    let train: Vec<Pair> = synthesize_corpus(cfg.seed, Split::Train, cfg.train_size, cfg.resolution, cfg.m_range).unwrap();
    let test: Vec<Pair> = synthesize_corpus(cfg.seed, Split::Test, cfg.test_size, cfg.resolution, cfg.m_range).unwrap();
    let mut dafe = ModelState::new(ModelConfig::new(cfg.resolution, Ablation::SfftDafe, cfg.seed).unwrap()).unwrap();

    let t = Instant::now();
    pretrain_hq_encoder(&cfg, &mut dafe, &train).unwrap();
    let pretrain_time = t.elapsed();
    record(4, "loss closed forms", loss_closed_forms(&dafe, &train[0]));

    let t = Instant::now();
    let report = run_dafe_training(&cfg, &mut dafe, &train, &test).unwrap();
    let dafe_time = t.elapsed();
    let items: Vec<EvalItem> = test.iter().enumerate().map(|(i, p)| EvalItem::from_pair(format!("test_{i:03}"), p)).collect();
    let emb = embedding_report(&dafe, &items).unwrap();
    record(5, "DAFE alignment", dafe_alignment(&Alignment { ratio: report.ratio(), win: emb.win_fraction(), dafe_time, pretrain_time }));

    // 500 steps is a short run, so the smoke test uses larger desk-scale rates
    // than the full-training defaults.
    let smoke_cfg = RunConfig {
        gan_steps: 500,
        lr_generator: 1e-3,
        lr_discriminator: 1e-4,
        weights: LossWeights { lambda_s: 0.0, lambda_rec: 1.0, lambda_g: 0.0 },
        ..cfg.clone()
    };
    let faces = &train[..50];
    let run = smoke_run(&mut dafe, &smoke_cfg, faces);
    record(6, "restoration smoke test", restoration_smoke(&run));

    let mut only = ModelState::new(ModelConfig::new(cfg.resolution, Ablation::SfftOnly, cfg.seed).unwrap()).unwrap();
    run_gan_training(&smoke_cfg, &mut only, faces, None).unwrap();
    let rec_dafe = mean_generator_terms(&dafe, faces, smoke_cfg.weights).unwrap().reconstruction;
    let rec_only = mean_generator_terms(&only, faces, smoke_cfg.weights).unwrap().reconstruction;
    record(7, "ablation ordering", ablation_ordering(rec_dafe, rec_only));

    record(8, "metric oracles and eval schema", metric_oracles(&dafe, &test[..10]));

    let failed: Vec<String> = results.iter().filter(|(_, _, o)| !o.passed).map(|(n, name, _)| format!("[{n}] {name}")).collect();
    emit(&format!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
