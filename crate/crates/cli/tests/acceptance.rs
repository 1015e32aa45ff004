//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use advst_cli::{execute_job, validate_config, MANIFEST_FILE};
use advst_core::attack_perturb::{
    multi_language_loss, multi_language_loss_grad, run_perturbation_attack, run_perturbation_attack_with,
    AttackResult, PerturbAttackConfig,
};
use advst_core::audio::defense::{apply_defense, quantize, DefenseContext, DefenseSpec};
use advst_core::audio::spectral::{bin_frequency, rfft};
use advst_core::audio::wav::{write_wav, WavFormat};
use advst_core::audio::{PerturbationBudget, Waveform};
use advst_core::evaluation::{attack_success_rate, calibrate_thresholds, esim, judge_success, Scorers, SuccessRule};
use advst_core::music_attack::{
    latent_prior_kl, music_loss, run_music_attack, sharpness_loss, MusicAttackConfig, MusicGenerator,
    SurrogateGenerator, SurrogateGeneratorConfig, DEFAULT_KL_CAP,
};
use advst_core::ota_channel::{sample_realization, ChannelAssets, ChannelConfig, Realization};
use advst_core::stmodel::{encode, greedy_decode, LossConfig, PrefixMode, SpeechTranslator, TokenId};
use advst_core::tco::{cycle_optimize, TableProvider};
use advst_core::testbed::{toy_testbed, Testbed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn testbed() -> &'static Testbed {
    static TB: OnceLock<Testbed> = OnceLock::new();
    TB.get_or_init(|| toy_testbed(42).expect("toy testbed trains"))
}

struct PerturbRun {
    results: Vec<AttackResult>,
    elapsed: Duration,
}

fn perturb_run() -> &'static PerturbRun {
    static RUN: OnceLock<PerturbRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let tb = testbed();
        let start = Instant::now();
        let cfg = PerturbAttackConfig {
            budget: PerturbationBudget::with_epsilon(0.1),
            max_iteration: 500,
            languages: vec!["en".into()],
            seed: 42,
            ..Default::default()
        };
        let results = tb
            .cases
            .iter()
            .map(|c| run_perturbation_attack(&tb.model, &c.carrier, &c.targets, &cfg).expect("attack runs"))
            .collect();
        PerturbRun {
            results,
            elapsed: start.elapsed(),
        }
    })
}

fn langs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn c1_gradient() -> Outcome {
    let start = Instant::now();
    let tb = testbed();
    let case = &tb.cases[0];
    let samples: Vec<f64> = case.carrier.samples()[..1024].to_vec();
    let languages = langs(&["en", "de"]);
    let cfg = LossConfig::default();
    let (_, grad) = multi_language_loss_grad(&tb.model, &samples, &case.targets, &languages, &cfg).map_err(|e| e.to_string())?;
    let sr = tb.model.sample_rate_hz();
    let loss = |x: &[f64]| {
        multi_language_loss(&tb.model, &Waveform::new(x.to_vec(), sr).unwrap(), &case.targets, &languages, &cfg).unwrap()
    };
    let h = 1e-4;
    let mut fd = vec![0.0; samples.len()];
    for i in 0..samples.len() {
        let mut p = samples.clone();
        p[i] += h;
        let mut m = samples.clone();
        m[i] -= h;
        fd[i] = (loss(&p) - loss(&m)) / (2.0 * h);
    }
    let diff = fd.iter().zip(&grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm;
    let elapsed = start.elapsed();
    ensure(rel <= 1e-3, || format!("relative error {rel:.3e} over 1024 samples"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("relative error {rel:.2e} on 1024 samples, {:.2}s", elapsed.as_secs_f64()))
}

fn out_of_band_fraction(delta: &[f64], sr: u32, lo: f64, hi: f64) -> f64 {
    let spec = rfft(delta);
    let n = delta.len();
    let (mut out, mut total) = (0.0, 0.0);
    for (k, c) in spec.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        let f = bin_frequency(k, n, sr);
        if f < lo || f > hi {
            out += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        out / total
    }
}

fn c2_constraints() -> Outcome {
    let tb = testbed();
    let sr = tb.model.sample_rate_hz();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    let mut worst_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for trial in 0..4 {
        let case = &tb.cases[rng.random_range(0..tb.cases.len())];
        let eps = [0.5, 0.1, 0.01][rng.random_range(0..3)];
        let cfg = PerturbAttackConfig {
            budget: PerturbationBudget::with_epsilon(eps),
            max_iteration: 40,
            learning_rate: rng.random_range(0.01..1.0),
            seed: rng.random(),
            ..Default::default()
        };
        let carrier = case.carrier.samples();
        let mut observe = |it: &advst_core::attack_perturb::Iterate<'_>| {
            checked += 1;
            let max_dev = it
                .x_adv
                .iter()
                .zip(carrier)
                .map(|(a, c)| (a - c).abs())
                .fold(0.0, f64::max);
            if !(max_dev < eps) {
                violations.push(format!("trial {trial} iterate {}: max|x_adv - carrier| = {max_dev}", it.iteration));
            }
            let ratio = out_of_band_fraction(it.delta, sr, 1000.0, 4000.0);
            worst_ratio = worst_ratio.max(ratio);
            if ratio > 1e-6 {
                violations.push(format!("trial {trial} iterate {}: out-of-band fraction {ratio:e}", it.iteration));
            }
        };
        run_perturbation_attack_with(&tb.model, &case.carrier, &case.targets, &cfg, None, Some(&mut observe))
            .map_err(|e| e.to_string())?;
    }
    ensure(violations.is_empty(), || violations.join("; "))?;
    ensure(checked >= 100, || format!("only {checked} iterates observed"))?;
    Ok(format!("{checked} iterates, worst out-of-band fraction {worst_ratio:.1e}"))
}

fn c3_perturbation() -> Outcome {
    let run = perturb_run();
    let ok: Vec<bool> = run.results.iter().map(|r| r.exact_match && r.iterations_used <= 500).collect();
    let rate = attack_success_rate(&ok).map_err(|e| e.to_string())?;
    ensure(rate.successes >= 8, || format!("{rate} exact matches"))?;
    ensure(run.elapsed < Duration::from_secs(300), || format!("took {:?}", run.elapsed))?;
    Ok(format!("{rate} exact matches in {:.1}s", run.elapsed.as_secs_f64()))
}

fn c4_additivity() -> Outcome {
    let tb = testbed();
    let case = &tb.cases[1];
    let cfg = LossConfig::default();
    let l = |v: &[&str]| multi_language_loss(&tb.model, &case.carrier, &case.targets, &langs(v), &cfg).unwrap();
    let (both, en, zh) = (l(&["en", "zh"]), l(&["en"]), l(&["zh"]));
    let err = (both - (en + zh)).abs();
    ensure(err <= 1e-9, || format!("|L(en,zh) - L(en) - L(zh)| = {err:e}"))?;
    Ok(format!("difference {err:.1e}"))
}

fn c5_sharpness() -> Outcome {
    let logits: Vec<Vec<f64>> = vec![vec![0.3, -1.2, 2.5, 0.0], vec![1.0, 1.0, -0.5, 3.0]];
    let targets: [TokenId; 2] = [2, 0];
    let ce: f64 = logits
        .iter()
        .zip(targets)
        .map(|(row, t)| {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - row[t as usize]
        })
        .sum();
    let a0 = sharpness_loss(&logits, &targets, 0.0).map_err(|e| e.to_string())?;
    ensure((a0 - ce).abs() <= 1e-12, || format!("alpha=0 gives {a0}, CE is {ce}"))?;
    let hand = sharpness_loss(&[vec![2.0, 1.0]], &[0], 1.0).map_err(|e| e.to_string())?;
    ensure((hand - -1.6867383125).abs() <= 1e-9, || format!("hand case gives {hand}"))?;
    Ok(format!("alpha=0 diff {:.1e}; hand case {hand:.10}", (a0 - ce).abs()))
}

fn self_prefix_ce(model: &dyn SpeechTranslator, samples: &[f64], target: &[TokenId], language: &str) -> f64 {
    let vocab = model.vocabulary();
    let h = model.encode_samples(samples).unwrap();
    let mut prefix = vec![vocab.bos(), vocab.language_token(language).unwrap()];
    let body = &target[2..];
    let mut ce = 0.0;
    for &t in body {
        let logits = model.logits(&h, &prefix).unwrap();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        ce += lse - logits[t as usize];
        let next = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0 as TokenId;
        if next == vocab.eos() {
            break;
        }
        prefix.push(next);
    }
    ce
}

fn c6_music() -> Outcome {
    let tb = testbed();
    let gen = SurrogateGenerator::new(SurrogateGeneratorConfig::default()).map_err(|e| e.to_string())?;
    let mut ok = Vec::new();
    let mut iters = Vec::new();
    for (k, case) in tb.cases.iter().enumerate() {
        let cfg = MusicAttackConfig {
            max_iteration: 1000,
            languages: langs(&["en"]),
            seed: 42 + k as u64,
            ..Default::default()
        };
        let out = run_music_attack(&gen, &tb.model, &case.targets, &cfg).map_err(|e| e.to_string())?;
        ok.push(out.result.exact_match);
        iters.push(out.result.iterations_used);
    }
    let rate = attack_success_rate(&ok).map_err(|e| e.to_string())?;
    ensure(rate.successes >= 6, || format!("{rate} seeds succeeded"))?;

    let case = &tb.cases[3];
    let cfg = MusicAttackConfig {
        alpha: 0.0,
        kl_weight: 0.0,
        languages: langs(&["en", "fr"]),
        ..Default::default()
    };
    let state = gen
        .initial_state(gen.conditioning(&cfg.prompt).unwrap(), cfg.steps, 7)
        .map_err(|e| e.to_string())?;
    let loss = music_loss(&gen, &tb.model, &state, &case.targets, &cfg).map_err(|e| e.to_string())?;
    let audio = gen.generate(&state).map_err(|e| e.to_string())?;
    assert_eq!(cfg.prefix_mode, PrefixMode::SelfPrefix);
    let oracle: f64 = ["en", "fr"]
        .iter()
        .map(|l| self_prefix_ce(&tb.model, &audio, &case.targets.per_language[*l].tokens.ids, l))
        .sum();
    let err = (loss - oracle).abs();
    ensure(err <= 1e-9, || format!("music loss {loss} vs CE oracle {oracle}"))?;
    Ok(format!("{rate} seeds succeeded (iterations {iters:?}); CE oracle diff {err:.1e}"))
}

fn c7_kl() -> Outcome {
    let latent = |mu: f64, var: f64| {
        let s = var.sqrt();
        vec![mu - s, mu + s, mu + s, mu - s]
    };
    let cases = [((0.0, 1.0), 0.0), ((1.0, 1.0), 0.5), ((0.0, 4.0), 0.8068528194)];
    let mut got = Vec::new();
    for ((mu, var), want) in cases {
        let k = latent_prior_kl(&latent(mu, var), DEFAULT_KL_CAP).map_err(|e| e.to_string())?;
        ensure((k - want).abs() <= 1e-9, || format!("(mu, var) = ({mu}, {var}) gives {k}, want {want}"))?;
        got.push(format!("{k:.10}"));
    }
    Ok(format!("values {}", got.join(", ")))
}

fn c8_tco() -> Outcome {
    let mut p = TableProvider::new(["en", "de", "fr", "es", "zh"]);
    for (pivot, back) in [
        ("de", "Are you crazy?"),
        ("fr", "Are you crazy?"),
        ("es", "Are you crazy?"),
        ("zh", "Are you out of your mind?"),
    ] {
        p.insert("Are you insane?", "en", pivot, &format!("[{pivot}]"));
        p.insert(&format!("[{pivot}]"), pivot, "en", back);
    }
    let (chosen, trace) = cycle_optimize(&p, "Are you insane?", "en", &["de", "fr", "es", "zh"], 1).map_err(|e| e.to_string())?;
    ensure(chosen == "Are you crazy?", || format!("chose {chosen:?}"))?;
    ensure(trace.counts.values().sum::<usize>() == 4, || "counts do not sum to 4".into())?;

    let mut tie = TableProvider::new(["en", "de", "fr", "es", "zh"]);
    for (pivot, back) in [("de", "zeta"), ("fr", "beta"), ("es", "zeta."), ("zh", "beta!")] {
        tie.insert("alpha", "en", pivot, "x");
        tie.insert("x", pivot, "en", back);
    }
    let orders: [[&str; 4]; 3] = [["de", "fr", "es", "zh"], ["zh", "es", "fr", "de"], ["fr", "zh", "de", "es"]];
    let mut picks = Vec::new();
    for order in orders {
        for _ in 0..2 {
            picks.push(cycle_optimize(&tie, "alpha", "en", &order, 1).map_err(|e| e.to_string())?.1.chosen_normalized);
        }
    }
    ensure(picks.iter().all(|p| p == "beta"), || format!("tie picks {picks:?}"))?;
    Ok("3-of-4 pivots select \"Are you crazy?\"; tie resolves to \"beta\" across 6 runs".into())
}

fn c9_ota() -> Outcome {
    let x: Vec<f64> = (0..3000).map(|n| 0.4 * (n as f64 * 0.37).sin() + 0.1 * (n as f64 * 0.05).cos()).collect();

    let impulse = ChannelAssets::from_clips(Vec::new(), vec![("impulse".to_string(), vec![1.0])]).map_err(|e| e.to_string())?;
    let rir_only = ChannelConfig {
        rir_probability: 1.0,
        white_noise_snr_db: None,
        ..ChannelConfig::default()
    };
    let (y, real) = sample_realization(&x, &rir_only, &impulse, &mut ChaCha8Rng::seed_from_u64(1)).map_err(|e| e.to_string())?;
    ensure(real.rir.is_some(), || "impulse response stage did not run".into())?;
    let id_err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(id_err <= 1e-9, || format!("unit impulse changes the signal by {id_err:e}"))?;

    let speech: Vec<f64> = (0..5000).map(|n| ((n * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
    let room: Vec<f64> = vec![1.0, 0.0, 0.4, -0.2, 0.1, 0.05];
    let assets = ChannelAssets::from_clips(vec![("talker".to_string(), speech)], vec![("room".to_string(), room)])
        .map_err(|e| e.to_string())?;
    let overlay_only = ChannelConfig {
        rir_probability: 0.0,
        white_noise_snr_db: None,
        ..ChannelConfig::default()
    };
    let mut worst_snr: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (y, real) = sample_realization(&x, &overlay_only, &assets, &mut rng).map_err(|e| e.to_string())?;
        let want = real.speech.as_ref().expect("overlay enabled").snr_db;
        let noise: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let p = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>();
        let achieved = 10.0 * (p(&x) / p(&noise)).log10();
        worst_snr = worst_snr.max((achieved - want).abs());
    }
    ensure(worst_snr <= 0.1, || format!("overlay SNR off by {worst_snr} dB"))?;

    let full = ChannelConfig {
        rir_probability: 1.0,
        ..ChannelConfig::default()
    };
    let (y, real) = sample_realization(&x, &full, &assets, &mut ChaCha8Rng::seed_from_u64(9)).map_err(|e| e.to_string())?;
    let stored: Realization = serde_json::from_str(&serde_json::to_string(&real).unwrap()).unwrap();
    let replay = stored.apply(&x, &assets).map_err(|e| e.to_string())?;
    ensure(
        replay.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "replayed realization differs".into(),
    )?;

    let probe: Vec<f64> = (0..x.len()).map(|n| ((n * 31) % 17) as f64 / 17.0 - 0.5).collect();
    let g = real.vjp(&probe, &assets).map_err(|e| e.to_string())?;
    let f = |v: &[f64]| -> f64 { real.apply(v, &assets).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum() };
    let h = 1e-4;
    let mut worst_grad: f64 = 0.0;
    for i in (0..x.len()).step_by(97) {
        let mut p = x.clone();
        p[i] += h;
        let mut m = x.clone();
        m[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-12));
    }
    ensure(worst_grad <= 1e-3, || format!("transform gradient relative error {worst_grad:e}"))?;
    Ok(format!(
        "identity error {id_err:.1e}; SNR error {worst_snr:.1e} dB; replay bit-exact; gradient error {worst_grad:.1e}"
    ))
}

fn c10_defenses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.2..1.2)).collect();
    let q = quantize(&x, 8);
    let max_err = x.iter().zip(&q).map(|(a, b)| (a.clamp(-1.0, 1.0) - b).abs()).fold(0.0, f64::max);
    ensure(max_err <= 1.0 / 127.0 + 1e-9, || format!("quantization error {max_err}"))?;
    ensure(quantize(&q, 8) == q, || "quantization is not idempotent".into())?;

    let sr = 16_000;
    let tone: Vec<f64> = (0..sr as usize).map(|n| (2.0 * std::f64::consts::PI * 7000.0 * n as f64 / sr as f64).sin()).collect();
    let w = Waveform::new(tone, sr).unwrap();
    let ctx = DefenseContext::default();
    let lp = apply_defense(&w, &DefenseSpec::Lowpass { cutoff_hz: 6000.0 }, &ctx).map_err(|e| e.to_string())?;
    let atten = 10.0 * (w.power() / lp.waveform().power().max(1e-300)).log10();
    ensure(atten >= 40.0, || format!("7 kHz tone attenuated by {atten} dB"))?;

    let tb = testbed();
    let run = perturb_run();
    let mut pairs = 0;
    let mut broken = 0;
    let mut per_kind = BTreeMap::new();
    for (case, r) in tb.cases.iter().zip(&run.results) {
        if !r.exact_match {
            continue;
        }
        let want = &case.targets.per_language["en"].tokens.ids;
        for spec in [DefenseSpec::from_kind("quantize").unwrap(), DefenseSpec::from_kind("resample").unwrap()] {
            let d = apply_defense(r.waveform().expect("perturbation results carry audio"), &spec, &ctx)
                .map_err(|e| e.to_string())?;
            let h = encode(&tb.model, d.waveform()).map_err(|e| e.to_string())?;
            let s = greedy_decode(&tb.model, &h, "en", 64).map_err(|e| e.to_string())?;
            pairs += 1;
            if &s.ids != want {
                broken += 1;
                *per_kind.entry(spec.kind()).or_insert(0) += 1;
            }
        }
    }
    ensure(pairs > 0, || "no successful adversarial examples to defend".into())?;
    let frac = broken as f64 / pairs as f64;
    ensure(frac >= 0.5, || format!("defenses broke {broken}/{pairs} ({per_kind:?})"))?;
    Ok(format!(
        "quantization error {max_err:.5}; lowpass {atten:.0} dB; defenses broke {broken}/{pairs} ({per_kind:?})"
    ))
}

fn c11_evaluation() -> Outcome {
    let s = Scorers::fallback();
    let x = "The meeting is moved to Friday.";
    let self_sim = esim(x, x, s.embedding.as_ref()).map_err(|e| e.to_string())?;
    ensure((self_sim - 1.0).abs() <= 1e-9, || format!("esim(x, x) = {self_sim}"))?;
    let t = calibrate_thresholds(x, &[x], &s).map_err(|e| e.to_string())?;
    ensure(t.gamma_e == 1.0 && t.gamma_n == 1.0, || format!("gammas {} {}", t.gamma_e, t.gamma_n))?;
    ensure(
        judge_success(x, x, &t, SuccessRule::And, &s).map_err(|e| e.to_string())?.success,
        || "target judged unsuccessful against itself".into(),
    )?;
    let mut outcomes = vec![true; 52];
    outcomes.extend([false; 8]);
    let rate = attack_success_rate(&outcomes).map_err(|e| e.to_string())?;
    ensure(rate.to_string() == "52/60", || format!("rendered {rate}"))?;
    Ok(format!("esim(x, x) = {self_sim}; gammas = 1; ASR renders {rate}"))
}

fn run_twice(tmp: &Path, name: &str, cfg: serde_json::Value) -> Result<(), String> {
    let cfg = validate_config(&cfg.to_string()).map_err(|e| format!("{name}: {e}"))?;
    let (a, b) = (tmp.join(format!("{name}_a")), tmp.join(format!("{name}_b")));
    let m = execute_job(&cfg, &a).map_err(|e| format!("{name}: {e}"))?;
    execute_job(&cfg, &b).map_err(|e| format!("{name}: {e}"))?;
    let read = |p: &Path| std::fs::read(p).unwrap();
    ensure(read(&a.join(MANIFEST_FILE)) == read(&b.join(MANIFEST_FILE)), || format!("{name}: manifests differ"))?;
    for art in &m.artifacts {
        ensure(read(&a.join(&art.path)) == read(&b.join(&art.path)), || format!("{name}: {} differs", art.path))?;
    }
    Ok(())
}

fn c12_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = tmp.path();
    let wav = t.join("input.wav");
    let case = &testbed().cases[0];
    write_wav(&wav, &case.carrier, WavFormat::Float32).map_err(|e| e.to_string())?;

    run_twice(t, "train", json!({"seed": 42, "job": {"train-surrogate": {}}}))?;
    let ckpt = t.join("train_a/model.ckpt");
    run_twice(
        t,
        "perturb",
        json!({"seed": 42, "job": {"attack-perturb": {
            "model": {"checkpoint": ckpt}, "cases": {"testbed": {"count": 2}}, "workers": 2,
            "attack": {"ota_enabled": true, "unseen_languages": ["de"]}, "channel": {"seed": 0}
        }}}),
    )?;
    run_twice(
        t,
        "music",
        json!({"seed": 42, "job": {"attack-music": {"model": {"checkpoint": ckpt}, "cases": {"testbed": {"count": 2}}}}}),
    )?;
    run_twice(
        t,
        "tco",
        json!({"seed": 42, "job": {"tco": {
            "provider": {"surrogate": {"checkpoint": ckpt}}, "targets": ["man sees ball"],
            "source_language": "en", "pivots": ["de", "fr", "zh"]
        }}}),
    )?;
    run_twice(t, "ota", json!({"seed": 42, "job": {"simulate-ota": {"input": wav, "draws": 3}}}))?;
    run_twice(t, "defend", json!({"seed": 42, "job": {"defend": {"input": wav}}}))?;
    let results: Vec<_> = ["case00", "case01"]
        .iter()
        .map(|id| json!({"path": t.join(format!("perturb_a/cases/{id}/result.json")), "case_id": id}))
        .collect();
    run_twice(t, "evaluate", json!({"seed": 42, "job": {"evaluate": {"results": results}}}))?;
    run_twice(
        t,
        "report",
        json!({"seed": 42, "job": {"report": {"evaluations": [t.join("evaluate_a/evaluation.json")], "layout": "enhancement_matrix"}}}),
    )?;
    Ok("all eight job kinds reproduce bit-identical manifests and artifacts".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient correctness", c1_gradient),
        ("constraint invariants", c2_constraints),
        ("desk-scale perturbation attack", c3_perturbation),
        ("multi-language loss additivity", c4_additivity),
        ("sharpness loss", c5_sharpness),
        ("desk-scale music attack", c6_music),
        ("latent prior KL", c7_kl),
        ("target cycle optimization", c8_tco),
        ("over-the-air channel", c9_ota),
        ("defenses", c10_defenses),
        ("evaluation", c11_evaluation),
        ("reproducibility", c12_reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let line = match &outcome {
            Ok(detail) => format!("PASS criterion {:>2} ({name}): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                format!("FAIL criterion {:>2} ({name}): {reason}", i + 1)
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
