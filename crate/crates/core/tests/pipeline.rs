use std::collections::BTreeMap;

use advst_core::attack_perturb::{run_perturbation_attack, PerturbAttackConfig, TargetSpec};
use advst_core::audio::defense::{apply_defense, DefenseContext, DefenseSpec};
use advst_core::audio::Waveform;
use advst_core::evaluation::{self, Scorers, SuccessRule};
use advst_core::stmodel::corpus::CorpusConfig;
use advst_core::stmodel::surrogate::train_surrogate;
use advst_core::stmodel::{checkpoint, encode, greedy_decode, SpeechTranslator};
use advst_core::tco;
use advst_core::testbed;

fn decode(model: &impl SpeechTranslator, w: &Waveform, lang: &str) -> String {
    let h = encode(model, w).unwrap();
    model.vocabulary().decode_text(&greedy_decode(model, &h, lang, 64).unwrap())
}

#[test]
fn trained_model_survives_checkpoint_and_attack_hits_target() {
    let model = train_surrogate(&CorpusConfig::toy(), 7).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let reloaded = checkpoint::load(&path).unwrap();

    let case = testbed::cases(&model, 7, 1).unwrap().remove(0);
    assert_eq!(decode(&model, &case.carrier, "en"), decode(&reloaded, &case.carrier, "en"));

    let target = case.targets.per_language["en"].text.clone();
    let spec = TargetSpec::new(
        model.vocabulary(),
        target.clone(),
        BTreeMap::from([("en".to_string(), target.clone())]),
    )
    .unwrap();
    let cfg = PerturbAttackConfig::default();
    let res = run_perturbation_attack(&model, &case.carrier, &spec, &cfg).unwrap();
    let adv = res.waveform().unwrap();
    let worst = adv
        .samples()
        .iter()
        .zip(case.carrier.samples())
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max);
    assert!(worst < cfg.budget.epsilon, "{worst}");
    assert_eq!(res.exact_match, decode(&model, adv, "en") == target);

    let mut scored = res.clone();
    evaluation::score_result(&mut scored, &Default::default(), SuccessRule::And, &Scorers::fallback()).unwrap();
    let (_, rec) = scored.records().find(|(l, _)| l.as_str() == "en").unwrap();
    assert_eq!(rec.success, Some(res.exact_match));
}

#[test]
fn every_default_defense_keeps_length_and_rate() {
    let w = Waveform::new((0..4000).map(|n| (n as f64 * 0.37).sin() * 0.4).collect(), 16_000).unwrap();
    for kind in ["lowpass", "codec", "noise", "quantize", "resample"] {
        let spec = DefenseSpec::from_kind(kind).unwrap();
        let out = apply_defense(&w, &spec, &DefenseContext::default()).unwrap();
        assert_eq!(out.waveform().len(), w.len(), "{kind}");
        assert_eq!(out.waveform().sample_rate_hz(), 16_000, "{kind}");
    }
}

#[test]
fn surrogate_lexicon_round_trip_is_stable_under_cycle_optimization() {
    let model = train_surrogate(&CorpusConfig::toy(), 3).unwrap();
    let (chosen, trace) = tco::cycle_optimize(&model, "woman takes apple", "en", &["de", "fr", "zh"], 2).unwrap();
    assert_eq!(chosen, "woman takes apple");
    assert_eq!(trace.counts.values().sum::<usize>(), 6);
}
