//! Job executors.

use std::path::Path;

use advst_core::attack_perturb::{run_perturbation_attack_with, AttackResult, TargetSpec};
use advst_core::audio::defense::{apply_defense, DefenseContext, DefenseOutput, DefenseSpec};
use advst_core::audio::wav::read_wav;
use advst_core::audio::Waveform;
use advst_core::evaluation::{
    attack_success_rate, build_report, entries_from_result, load_paraphrases, score_result, Report, ReportEntry,
    Scorers, SuccessRate, SuccessRule, ThresholdBook,
};
use advst_core::hashing::json_sha256;
use advst_core::music_attack::{run_music_attack_with, SurrogateGenerator};
use advst_core::ota_channel::{make_eot_sampler, ChannelAssets, ChannelConfig, EotSampler, Realization};
use advst_core::stmodel::checkpoint;
use advst_core::stmodel::corpus::CorpusConfig;
use advst_core::stmodel::surrogate::{train_surrogate, SurrogateModel};
use advst_core::stmodel::SpeechTranslator;
use advst_core::tco::{cycle_optimize, CycleTrace, T2TTProvider};
use advst_core::testbed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::{CliError, Result};
use crate::manifest::{ErrorRecord, Manifest, OutputDir};

/// Hash of the configuration with the output directory removed, so the same
/// job written to two places hashes the same.
pub fn config_hash(cfg: &JobConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = None;
    Ok(json_sha256(&c)?)
}

/// Run `cfg`, writing artifacts and `manifest.json` under `out`.
///
/// On a module error the manifest is still written, with status `error`
/// and an error record, and the error is returned.
pub fn execute_job(cfg: &JobConfig, out: &Path) -> Result<Manifest> {
    let mut dir = OutputDir::create(out)?;
    let manifest = Manifest {
        job: cfg.job.kind().to_string(),
        config_version: cfg.version,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        status: "ok".into(),
        error: None,
        artifacts: Vec::new(),
    };
    match run(cfg, &mut dir) {
        Ok(()) => dir.finish(manifest),
        Err(e) => {
            let record = ErrorRecord {
                kind: e.kind().into(),
                message: e.to_string(),
            };
            dir.write_json("error.json", &record)?;
            dir.finish(Manifest {
                status: "error".into(),
                error: Some(record),
                ..manifest
            })?;
            Err(e)
        }
    }
}

fn run(cfg: &JobConfig, dir: &mut OutputDir) -> Result<()> {
    let seed = cfg.seed;
    match &cfg.job {
        Job::TrainSurrogate(j) => train(j, seed, dir),
        Job::AttackPerturb(j) => attack_perturb(j, seed, dir),
        Job::AttackMusic(j) => attack_music(j, seed, dir),
        Job::Tco(j) => tco(j, seed, dir),
        Job::SimulateOta(j) => simulate_ota(j, seed, dir),
        Job::Defend(j) => defend(j, dir),
        Job::Evaluate(j) => evaluate(j, dir),
        Job::Report(j) => report(j, dir),
    }
}

fn train(j: &TrainJob, seed: u64, dir: &mut OutputDir) -> Result<()> {
    let model = SurrogateModel::train(&j.corpus, &j.arch, &j.training, seed)?;
    dir.write_bytes("model.ckpt", &checkpoint::to_bytes(&model)?)?;
    dir.write_json("training.json", &model.training_summary())?;
    Ok(())
}

pub fn load_model(src: &ModelSource, seed: u64) -> Result<SurrogateModel> {
    Ok(match src {
        ModelSource::Toy => train_surrogate(&CorpusConfig::toy(), seed)?,
        ModelSource::Checkpoint(p) => checkpoint::load(p)?,
    })
}

struct Case {
    id: String,
    carrier: Option<Waveform>,
    targets: TargetSpec,
}

fn load_cases(src: &CaseSource, model: &SurrogateModel, seed: u64) -> Result<Vec<Case>> {
    match src {
        CaseSource::Testbed { count } => Ok(testbed::cases(model, seed, *count)?
            .into_iter()
            .map(|c| Case {
                id: c.id,
                carrier: Some(c.carrier),
                targets: c.targets,
            })
            .collect()),
        CaseSource::Files(files) => files
            .iter()
            .map(|f| {
                let carrier = match &f.carrier {
                    Some(p) => Some(read_wav(p, Some(model.sample_rate_hz()))?),
                    None => None,
                };
                let semantic = f
                    .semantic
                    .clone()
                    .or_else(|| f.targets.values().next().cloned())
                    .unwrap_or_default();
                let targets = TargetSpec::new(model.vocabulary(), semantic, f.targets.clone())?;
                Ok(Case {
                    id: f.id.clone(),
                    carrier,
                    targets,
                })
            })
            .collect(),
    }
}

fn sampler_for(channel: Option<&(ChannelConfig, ChannelAssets)>, seed: u64) -> Result<Option<EotSampler>> {
    channel
        .map(|(cfg, assets)| {
            let cfg = ChannelConfig { seed, ..cfg.clone() };
            make_eot_sampler(&cfg, assets.clone())
        })
        .transpose()
        .map_err(CliError::from)
}

fn load_channel(channel: &Option<ChannelConfig>, sample_rate_hz: u32) -> Result<Option<(ChannelConfig, ChannelAssets)>> {
    channel
        .as_ref()
        .map(|c| Ok((c.clone(), ChannelAssets::load(c, sample_rate_hz)?)))
        .transpose()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub seed: u64,
    pub exact_match: bool,
    pub iterations_used: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub exact_match: String,
    pub cases: Vec<CaseSummary>,
}

fn summarize(rows: Vec<CaseSummary>) -> Result<AttackSummary> {
    let outcomes: Vec<bool> = rows.iter().map(|r| r.exact_match).collect();
    Ok(AttackSummary {
        exact_match: attack_success_rate(&outcomes)?.to_string(),
        cases: rows,
    })
}

fn case_summary(id: &str, seed: u64, r: &AttackResult) -> CaseSummary {
    CaseSummary {
        id: id.to_string(),
        seed,
        exact_match: r.exact_match,
        iterations_used: r.iterations_used,
        final_loss: r.final_loss,
    }
}

fn attack_perturb(j: &AttackPerturbJob, seed: u64, dir: &mut OutputDir) -> Result<()> {
    let model = load_model(&j.model, seed)?;
    let cases = load_cases(&j.cases, &model, seed)?;
    let channel = load_channel(&j.channel, model.sample_rate_hz())?;
    let attack = advst_core::attack_perturb::PerturbAttackConfig {
        seed,
        ..j.attack.clone()
    };
    let results: Vec<AttackResult> = pool(j.workers)?.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let carrier = c.carrier.as_ref().expect("validated perturbation cases carry audio");
                let mut sampler = sampler_for(channel.as_ref(), seed.wrapping_add(i as u64))?;
                Ok(run_perturbation_attack_with(
                    &model,
                    carrier,
                    &c.targets,
                    &attack,
                    sampler.as_mut(),
                    None,
                )?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::with_capacity(cases.len());
    for (c, r) in cases.iter().zip(&results) {
        dir.write_json(&format!("cases/{}/result.json", c.id), r)?;
        if let Some(w) = r.waveform() {
            dir.write_wav(&format!("cases/{}/adversarial.wav", c.id), w)?;
        }
        rows.push(case_summary(&c.id, seed, r));
    }
    dir.write_json("summary.json", &summarize(rows)?)
}

fn attack_music(j: &AttackMusicJob, seed: u64, dir: &mut OutputDir) -> Result<()> {
    let model = load_model(&j.model, seed)?;
    let cases = load_cases(&j.cases, &model, seed)?;
    let generator = SurrogateGenerator::new(j.generator.clone())?;
    let channel = load_channel(&j.channel, model.sample_rate_hz())?;
    let outcomes = pool(j.workers)?.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let case_seed = seed.wrapping_add(i as u64);
                let cfg = advst_core::music_attack::MusicAttackConfig {
                    seed: case_seed,
                    ..j.attack.clone()
                };
                let mut sampler = sampler_for(channel.as_ref(), case_seed)?;
                Ok(run_music_attack_with(&generator, &model, &c.targets, &cfg, sampler.as_mut())?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::with_capacity(cases.len());
    for (i, (c, o)) in cases.iter().zip(&outcomes).enumerate() {
        dir.write_json(&format!("cases/{}/result.json", c.id), &o.result)?;
        dir.write_json(&format!("cases/{}/state.json", c.id), &o.state)?;
        if let Some(w) = o.result.waveform() {
            dir.write_wav(&format!("cases/{}/music.wav", c.id), w)?;
        }
        rows.push(case_summary(&c.id, seed.wrapping_add(i as u64), &o.result));
    }
    dir.write_json("summary.json", &summarize(rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcoOutput {
    pub source_language: String,
    pub pivots: Vec<String>,
    pub rounds: usize,
    pub traces: Vec<CycleTrace>,
}

fn tco(j: &TcoJob, seed: u64, dir: &mut OutputDir) -> Result<()> {
    let model;
    let provider: &dyn T2TTProvider = match &j.provider {
        ProviderSource::Surrogate(src) => {
            model = load_model(src, seed)?;
            &model
        }
        ProviderSource::Table(t) => t,
    };
    let traces = j
        .targets
        .iter()
        .map(|t| Ok(cycle_optimize(provider, t, &j.source_language, &j.pivots, j.rounds)?.1))
        .collect::<Result<Vec<_>>>()?;
    dir.write_json(
        "tco.json",
        &TcoOutput {
            source_language: j.source_language.clone(),
            pivots: j.pivots.clone(),
            rounds: j.rounds,
            traces,
        },
    )
}

fn simulate_ota(j: &SimulateOtaJob, seed: u64, dir: &mut OutputDir) -> Result<()> {
    let input = read_wav(&j.input, None)?;
    let assets = ChannelAssets::load(&j.channel, input.sample_rate_hz())?;
    let mut sampler = make_eot_sampler(&ChannelConfig { seed, ..j.channel.clone() }, assets)?;
    let mut realizations: Vec<Realization> = Vec::with_capacity(j.draws);
    for k in 0..j.draws {
        let (samples, real) = sampler.sample(input.samples())?;
        dir.write_wav(&format!("ota/draw_{k:03}.wav"), &Waveform::new(samples, input.sample_rate_hz())?)?;
        realizations.push(real);
    }
    dir.write_json("realizations.json", &realizations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRecord {
    pub spec: DefenseSpec,
    pub output: DefenseOutput,
    pub path: String,
}

fn defend(j: &DefendJob, dir: &mut OutputDir) -> Result<()> {
    let input = read_wav(&j.input, None)?;
    let ctx = DefenseContext::default();
    let mut records = Vec::with_capacity(j.defenses.len());
    for (i, spec) in j.defenses.iter().enumerate() {
        let out = apply_defense(&input, spec, &ctx)?;
        let path = format!("defended/{i:02}_{}.wav", spec.kind());
        dir.write_wav(&path, out.waveform())?;
        records.push(DefenseRecord {
            spec: spec.clone(),
            output: out,
            path,
        });
    }
    dir.write_json("defenses.json", &records)
}

/// Document written by the evaluate job and read by the report job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDoc {
    pub rule: SuccessRule,
    pub embedding_scorer: String,
    pub nli_scorer: String,
    /// Means in reports are taken over all cases.
    pub averaging: String,
    pub thresholds: ThresholdBook,
    pub success_rate: SuccessRate,
    pub entries: Vec<ReportEntry>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn evaluate(j: &EvaluateJob, dir: &mut OutputDir) -> Result<()> {
    let scorers = Scorers::by_name(&j.embedding_scorer, &j.nli_scorer)?;
    let sets = match &j.paraphrases {
        Some(p) => load_paraphrases(p)?,
        None => Vec::new(),
    };
    let mut book = ThresholdBook::calibrate(&sets, &scorers)?;
    let mut entries = Vec::new();
    for (i, input) in j.results.iter().enumerate() {
        let mut result: AttackResult = read_json(&input.path)?;
        score_result(&mut result, &book, j.rule, &scorers)?;
        for (_, rec) in result.records() {
            if !book.sets.contains_key(&rec.target_text) {
                let t = book.get_or_self(&rec.target_text, &scorers)?;
                book.sets.insert(rec.target_text.clone(), t);
            }
        }
        dir.write_json(&format!("scored/{i:03}.json"), &result)?;
        entries.extend(entries_from_result(&input.case_id, &input.setting, &result));
    }
    let outcomes: Vec<bool> = entries.iter().map(|e| e.success.unwrap_or(false)).collect();
    let doc = EvaluationDoc {
        rule: j.rule,
        embedding_scorer: j.embedding_scorer.clone(),
        nli_scorer: j.nli_scorer.clone(),
        averaging: "all_cases".into(),
        thresholds: book,
        success_rate: attack_success_rate(&outcomes)?,
        entries,
    };
    dir.write_json("evaluation.json", &doc)
}

fn report(j: &ReportJob, dir: &mut OutputDir) -> Result<()> {
    let mut entries = Vec::new();
    let mut rule = None;
    for (i, p) in j.evaluations.iter().enumerate() {
        let doc: EvaluationDoc = read_json(p)?;
        match rule {
            None => rule = Some(doc.rule),
            Some(r) if r != doc.rule => {
                return Err(CliError::Schema {
                    path: format!("job.report.evaluations[{i}]"),
                    message: "evaluations use different success rules".into(),
                })
            }
            Some(_) => {}
        }
        entries.extend(doc.entries);
    }
    let report: Report = build_report(&entries, j.layout, rule.unwrap_or_default())?;
    dir.write_json("report.json", &report)?;
    dir.write_bytes("report.csv", report.to_csv()?.as_bytes())
}
