//! Job configuration documents.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use advst_core::attack_perturb::PerturbAttackConfig;
use advst_core::audio::defense::DefenseSpec;
use advst_core::evaluation::{ReportLayout, SuccessRule, BOW_HASH, TOKEN_OVERLAP};
use advst_core::music_attack::{MusicAttackConfig, SurrogateGeneratorConfig};
use advst_core::ota_channel::ChannelConfig;
use advst_core::stmodel::corpus::CorpusConfig;
use advst_core::stmodel::surrogate::{SurrogateArch, TrainingConfig};
use advst_core::tco::{TableProvider, DEFAULT_ROUNDS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub job: Job,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    TrainSurrogate,
    AttackPerturb,
    AttackMusic,
    Tco,
    SimulateOta,
    Defend,
    Evaluate,
    Report,
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("job kinds serialize");
        f.write_str(s.as_str().expect("job kinds are strings"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Job {
    TrainSurrogate(TrainJob),
    AttackPerturb(AttackPerturbJob),
    AttackMusic(AttackMusicJob),
    Tco(TcoJob),
    SimulateOta(SimulateOtaJob),
    Defend(DefendJob),
    Evaluate(EvaluateJob),
    Report(ReportJob),
}

impl Job {
    pub fn kind(&self) -> JobKind {
        match self {
            Job::TrainSurrogate(_) => JobKind::TrainSurrogate,
            Job::AttackPerturb(_) => JobKind::AttackPerturb,
            Job::AttackMusic(_) => JobKind::AttackMusic,
            Job::Tco(_) => JobKind::Tco,
            Job::SimulateOta(_) => JobKind::SimulateOta,
            Job::Defend(_) => JobKind::Defend,
            Job::Evaluate(_) => JobKind::Evaluate,
            Job::Report(_) => JobKind::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    #[serde(default = "CorpusConfig::toy")]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub arch: SurrogateArch,
    #[serde(default)]
    pub training: TrainingConfig,
}

/// Where the surrogate comes from: trained on the toy corpus with the job
/// seed, or loaded from a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    #[default]
    Toy,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CaseSource {
    /// Cases drawn from the model's own corpus.
    Testbed {
        #[serde(default = "default_case_count")]
        count: usize,
    },
    Files(Vec<CaseFile>),
}

impl Default for CaseSource {
    fn default() -> Self {
        CaseSource::Testbed {
            count: default_case_count(),
        }
    }
}

fn default_case_count() -> usize {
    advst_core::testbed::DEFAULT_CASES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub id: String,
    /// Carrier audio; unused by music attacks.
    #[serde(default)]
    pub carrier: Option<PathBuf>,
    #[serde(default)]
    pub semantic: Option<String>,
    /// Language → target text.
    pub targets: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPerturbJob {
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub cases: CaseSource,
    #[serde(default)]
    pub attack: PerturbAttackConfig,
    #[serde(default)]
    pub channel: Option<ChannelConfig>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackMusicJob {
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub cases: CaseSource,
    #[serde(default)]
    pub generator: SurrogateGeneratorConfig,
    #[serde(default)]
    pub attack: MusicAttackConfig,
    #[serde(default)]
    pub channel: Option<ChannelConfig>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSource {
    /// Lexicon translation of the surrogate.
    Surrogate(ModelSource),
    Table(TableProvider),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcoJob {
    pub provider: ProviderSource,
    pub targets: Vec<String>,
    pub source_language: String,
    pub pivots: Vec<String>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

fn default_rounds() -> usize {
    DEFAULT_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOtaJob {
    pub input: PathBuf,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefendJob {
    pub input: PathBuf,
    #[serde(default = "DefenseSpec::reference_set")]
    pub defenses: Vec<DefenseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateInput {
    pub path: PathBuf,
    pub case_id: String,
    #[serde(default = "default_setting")]
    pub setting: String,
}

fn default_setting() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateJob {
    pub results: Vec<EvaluateInput>,
    #[serde(default)]
    pub paraphrases: Option<PathBuf>,
    #[serde(default = "default_embedding")]
    pub embedding_scorer: String,
    #[serde(default = "default_nli")]
    pub nli_scorer: String,
    #[serde(default)]
    pub rule: SuccessRule,
}

fn default_embedding() -> String {
    BOW_HASH.into()
}

fn default_nli() -> String {
    TOKEN_OVERLAP.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJob {
    /// `evaluation.json` files written by evaluate jobs.
    pub evaluations: Vec<PathBuf>,
    #[serde(default)]
    pub layout: ReportLayout,
}

/// Parse, default and check a configuration document.
pub fn validate_config(text: &str) -> Result<JobConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: JobConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<JobConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    validate_config(&text)
}

fn require(path: &Path, key: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Schema {
            path: key.into(),
            message: format!("`{}` does not exist", path.display()),
        })
    }
}

fn positive(value: usize, key: &str) -> Result<()> {
    if value == 0 {
        return Err(CliError::Schema {
            path: key.into(),
            message: "must be at least 1".into(),
        });
    }
    Ok(())
}

fn check_model(m: &ModelSource, key: &str) -> Result<()> {
    match m {
        ModelSource::Toy => Ok(()),
        ModelSource::Checkpoint(p) => require(p, &format!("{key}.checkpoint")),
    }
}

fn check_cases(c: &CaseSource, key: &str, need_carrier: bool) -> Result<()> {
    match c {
        CaseSource::Testbed { count } => positive(*count, &format!("{key}.testbed.count")),
        CaseSource::Files(files) => {
            if files.is_empty() {
                return Err(CliError::Schema {
                    path: format!("{key}.files"),
                    message: "needs at least one case".into(),
                });
            }
            for (i, f) in files.iter().enumerate() {
                match (&f.carrier, need_carrier) {
                    (Some(p), _) => require(p, &format!("{key}.files[{i}].carrier"))?,
                    (None, true) => {
                        return Err(CliError::Schema {
                            path: format!("{key}.files[{i}].carrier"),
                            message: "perturbation attacks need a carrier".into(),
                        })
                    }
                    (None, false) => {}
                }
            }
            Ok(())
        }
    }
}

fn check_channel(c: &ChannelConfig, key: &str) -> Result<()> {
    if let Some(d) = &c.speech_corpus_dir {
        require(d, &format!("{key}.speech_corpus_dir"))?;
    }
    if let Some(d) = &c.rir_dir {
        require(d, &format!("{key}.rir_dir"))?;
    }
    c.validate().map_err(CliError::from)
}

impl JobConfig {
    /// Semantic checks serde cannot express, including path existence.
    pub fn check(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Schema {
                path: "version".into(),
                message: format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            });
        }
        let key = format!("job.{}", self.job.kind());
        match &self.job {
            Job::TrainSurrogate(j) => j.corpus.validate().map_err(CliError::from),
            Job::AttackPerturb(j) => {
                check_model(&j.model, &format!("{key}.model"))?;
                check_cases(&j.cases, &format!("{key}.cases"), true)?;
                positive(j.workers, &format!("{key}.workers"))?;
                if let Some(c) = &j.channel {
                    check_channel(c, &format!("{key}.channel"))?;
                }
                if j.attack.ota_enabled && j.channel.is_none() {
                    return Err(CliError::Schema {
                        path: format!("{key}.channel"),
                        message: "ota_enabled needs a channel".into(),
                    });
                }
                Ok(())
            }
            Job::AttackMusic(j) => {
                check_model(&j.model, &format!("{key}.model"))?;
                check_cases(&j.cases, &format!("{key}.cases"), false)?;
                positive(j.workers, &format!("{key}.workers"))?;
                j.attack.validate()?;
                if let Some(c) = &j.channel {
                    check_channel(c, &format!("{key}.channel"))?;
                }
                if j.attack.ota_enabled && j.channel.is_none() {
                    return Err(CliError::Schema {
                        path: format!("{key}.channel"),
                        message: "ota_enabled needs a channel".into(),
                    });
                }
                Ok(())
            }
            Job::Tco(j) => {
                if let ProviderSource::Surrogate(m) = &j.provider {
                    check_model(m, &format!("{key}.provider.surrogate"))?;
                }
                if j.targets.is_empty() {
                    return Err(CliError::Schema {
                        path: format!("{key}.targets"),
                        message: "needs at least one target".into(),
                    });
                }
                positive(j.rounds, &format!("{key}.rounds"))
            }
            Job::SimulateOta(j) => {
                require(&j.input, &format!("{key}.input"))?;
                positive(j.draws, &format!("{key}.draws"))?;
                check_channel(&j.channel, &format!("{key}.channel"))
            }
            Job::Defend(j) => {
                require(&j.input, &format!("{key}.input"))?;
                for d in &j.defenses {
                    d.validate()?;
                }
                Ok(())
            }
            Job::Evaluate(j) => {
                if j.results.is_empty() {
                    return Err(CliError::Schema {
                        path: format!("{key}.results"),
                        message: "needs at least one result".into(),
                    });
                }
                for (i, r) in j.results.iter().enumerate() {
                    require(&r.path, &format!("{key}.results[{i}].path"))?;
                }
                if let Some(p) = &j.paraphrases {
                    require(p, &format!("{key}.paraphrases"))?;
                }
                advst_core::evaluation::Scorers::by_name(&j.embedding_scorer, &j.nli_scorer)?;
                Ok(())
            }
            Job::Report(j) => {
                if j.evaluations.is_empty() {
                    return Err(CliError::Schema {
                        path: format!("{key}.evaluations"),
                        message: "needs at least one evaluation".into(),
                    });
                }
                for (i, p) in j.evaluations.iter().enumerate() {
                    require(p, &format!("{key}.evaluations[{i}]"))?;
                }
                Ok(())
            }
        }
    }
}
