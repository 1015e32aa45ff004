//! Semantic success scoring, threshold calibration and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack_perturb::AttackResult;
use crate::error::{Error, Result};

/// Sparse embedding: `(index, value)` pairs sorted by index.
pub type Embedding = Vec<(u64, f64)>;

pub trait EmbeddingScorer: Send + Sync {
    fn id(&self) -> &str;

    /// Unit-norm embedding of a non-empty text.
    fn embed(&self, text: &str) -> Result<Embedding>;
}

pub trait NliScorer: Send + Sync {
    fn id(&self) -> &str;

    /// Probability in `[0, 1]` that `premise` entails `hypothesis`.
    fn entail_probability(&self, premise: &str, hypothesis: &str) -> Result<f64>;
}

pub const BOW_HASH: &str = "bow-hash";
pub const TOKEN_OVERLAP: &str = "token-overlap";

fn tokens(text: &str) -> Result<Vec<String>> {
    let t: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if t.is_empty() {
        return Err(Error::invalid(format!("text `{text}` has no tokens")));
    }
    Ok(t)
}

fn bucket(token: &str) -> u64 {
    let d = Sha256::digest(token.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Term-frequency vector over 64-bit token hashes, normalized to unit length.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedBagOfWords;

impl EmbeddingScorer for HashedBagOfWords {
    fn id(&self) -> &str {
        BOW_HASH
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut tf: BTreeMap<u64, f64> = BTreeMap::new();
        for t in tokens(text)? {
            *tf.entry(bucket(&t)).or_default() += 1.0;
        }
        let norm = tf.values().map(|v| v * v).sum::<f64>().sqrt();
        Ok(tf.into_iter().map(|(k, v)| (k, v / norm)).collect())
    }
}

/// Fraction of distinct hypothesis tokens that also occur in the premise.
/// A lexical stand-in for an entailment model.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapNli;

impl NliScorer for TokenOverlapNli {
    fn id(&self) -> &str {
        TOKEN_OVERLAP
    }

    fn entail_probability(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let p: BTreeSet<String> = tokens(premise)?.into_iter().collect();
        let h: BTreeSet<String> = tokens(hypothesis)?.into_iter().collect();
        Ok(h.intersection(&p).count() as f64 / h.len() as f64)
    }
}

pub fn embedding_scorer(name: &str) -> Result<Box<dyn EmbeddingScorer>> {
    match name {
        BOW_HASH => Ok(Box::new(HashedBagOfWords)),
        _ => Err(Error::config(format!("unknown embedding scorer `{name}` (available: {BOW_HASH})"))),
    }
}

pub fn nli_scorer(name: &str) -> Result<Box<dyn NliScorer>> {
    match name {
        TOKEN_OVERLAP => Ok(Box::new(TokenOverlapNli)),
        _ => Err(Error::config(format!("unknown NLI scorer `{name}` (available: {TOKEN_OVERLAP})"))),
    }
}

/// Cosine similarity of the two embeddings.
pub fn esim(a: &str, b: &str, scorer: &dyn EmbeddingScorer) -> Result<f64> {
    let (ea, eb) = (scorer.embed(a)?, scorer.embed(b)?);
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += ea[i].1 * eb[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let na = ea.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let nb = eb.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn nscore(premise: &str, hypothesis: &str, scorer: &dyn NliScorer) -> Result<f64> {
    let p = scorer.entail_probability(premise, hypothesis)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("NLI scorer `{}` returned {p}", scorer.id())));
    }
    Ok(p)
}

/// A matched pair of scorers.
pub struct Scorers {
    pub embedding: Box<dyn EmbeddingScorer>,
    pub nli: Box<dyn NliScorer>,
}

impl Scorers {
    pub fn by_name(embedding: &str, nli: &str) -> Result<Self> {
        Ok(Self {
            embedding: embedding_scorer(embedding)?,
            nli: nli_scorer(nli)?,
        })
    }

    pub fn fallback() -> Self {
        Self {
            embedding: Box::new(HashedBagOfWords),
            nli: Box::new(TokenOverlapNli),
        }
    }
}

impl fmt::Debug for Scorers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scorers")
            .field("embedding", &self.embedding.id())
            .field("nli", &self.nli.id())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub target: String,
    pub gamma_e: f64,
    pub gamma_n: f64,
    pub paraphrases: Vec<String>,
    pub embedding_scorer: String,
    pub nli_scorer: String,
}

/// Lowest ESIM and NSCORE between the target and any paraphrase.
pub fn calibrate_thresholds<S: AsRef<str>>(
    target: &str,
    paraphrases: &[S],
    scorers: &Scorers,
) -> Result<ThresholdSet> {
    if paraphrases.is_empty() {
        return Err(Error::config(format!("no paraphrases given for `{target}`")));
    }
    let mut gamma_e = f64::INFINITY;
    let mut gamma_n = f64::INFINITY;
    for p in paraphrases {
        gamma_e = gamma_e.min(esim(target, p.as_ref(), scorers.embedding.as_ref())?);
        gamma_n = gamma_n.min(nscore(target, p.as_ref(), scorers.nli.as_ref())?);
    }
    Ok(ThresholdSet {
        target: target.to_string(),
        gamma_e,
        gamma_n,
        paraphrases: paraphrases.iter().map(|p| p.as_ref().to_string()).collect(),
        embedding_scorer: scorers.embedding.id().to_string(),
        nli_scorer: scorers.nli.id().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SuccessRule {
    #[default]
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub esim: f64,
    pub nscore: f64,
    pub success: bool,
}

/// Compare an output with the target against calibrated thresholds.
/// Scores equal to a threshold count as passing.
pub fn judge_success(
    output: &str,
    target: &str,
    thresholds: &ThresholdSet,
    rule: SuccessRule,
    scorers: &Scorers,
) -> Result<Judgement> {
    if thresholds.embedding_scorer != scorers.embedding.id() || thresholds.nli_scorer != scorers.nli.id() {
        return Err(Error::config(format!(
            "thresholds were calibrated with ({}, {}) but scoring uses ({}, {})",
            thresholds.embedding_scorer,
            thresholds.nli_scorer,
            scorers.embedding.id(),
            scorers.nli.id()
        )));
    }
    let e = esim(target, output, scorers.embedding.as_ref())?;
    let n = nscore(target, output, scorers.nli.as_ref())?;
    let (pe, pn) = (e >= thresholds.gamma_e, n >= thresholds.gamma_n);
    let success = match rule {
        SuccessRule::And => pe && pn,
        SuccessRule::Or => pe || pn,
    };
    Ok(Judgement { esim: e, nscore: n, success })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub successes: usize,
    pub total: usize,
    pub fraction: f64,
}

impl fmt::Display for SuccessRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.total)
    }
}

pub fn attack_success_rate(outcomes: &[bool]) -> Result<SuccessRate> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no outcomes to count"));
    }
    let successes = outcomes.iter().filter(|s| **s).count();
    Ok(SuccessRate {
        successes,
        total: outcomes.len(),
        fraction: successes as f64 / outcomes.len() as f64,
    })
}

/// Paraphrase variants of one target semantic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphraseSet {
    #[serde(default)]
    pub semantic: Option<String>,
    pub target: String,
    pub paraphrases: Vec<String>,
}

pub fn load_paraphrases(path: impl AsRef<Path>) -> Result<Vec<ParaphraseSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Threshold sets keyed by target text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBook {
    pub sets: BTreeMap<String, ThresholdSet>,
}

impl ThresholdBook {
    pub fn calibrate(sets: &[ParaphraseSet], scorers: &Scorers) -> Result<Self> {
        let mut book = Self::default();
        for s in sets {
            book.sets.insert(s.target.clone(), calibrate_thresholds(&s.target, &s.paraphrases, scorers)?);
        }
        Ok(book)
    }

    /// The stored set for `target`, or one calibrated on `{target}` alone.
    pub fn get_or_self(&self, target: &str, scorers: &Scorers) -> Result<ThresholdSet> {
        match self.sets.get(target) {
            Some(t) => Ok(t.clone()),
            None => calibrate_thresholds(target, &[target], scorers),
        }
    }
}

/// Fill `esim`, `nscore` and `success` on every record of `result`.
pub fn score_result(
    result: &mut AttackResult,
    book: &ThresholdBook,
    rule: SuccessRule,
    scorers: &Scorers,
) -> Result<()> {
    for (_, rec) in result.records_mut() {
        let thresholds = book.get_or_self(&rec.target_text, scorers)?;
        let j = if rec.translation.trim().is_empty() {
            Judgement { esim: 0.0, nscore: 0.0, success: false }
        } else {
            judge_success(&rec.translation, &rec.target_text, &thresholds, rule, scorers)?
        };
        rec.esim = Some(j.esim);
        rec.nscore = Some(j.nscore);
        rec.success = Some(j.success);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportLayout {
    #[default]
    PerLanguageTable,
    EnhancementMatrix,
}

/// One (case, language) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub case_id: String,
    pub setting: String,
    pub language: String,
    pub seen: bool,
    pub exact_match: bool,
    pub esim: Option<f64>,
    pub nscore: Option<f64>,
    pub success: Option<bool>,
}

pub fn entries_from_result(case_id: &str, setting: &str, result: &AttackResult) -> Vec<ReportEntry> {
    result
        .records()
        .map(|(lang, rec)| ReportEntry {
            case_id: case_id.to_string(),
            setting: setting.to_string(),
            language: lang.clone(),
            seen: rec.seen,
            exact_match: rec.exact_match,
            esim: rec.esim,
            nscore: rec.nscore,
            success: rec.success,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    pub language: String,
    pub seen: bool,
    pub asr: SuccessRate,
    pub exact_matches: usize,
    pub mean_esim: Option<f64>,
    pub mean_nscore: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessBasis {
    Semantic,
    ExactMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub layout: ReportLayout,
    pub rule: SuccessRule,
    pub success_basis: SuccessBasis,
    /// Means are taken over every case, successful or not.
    pub averaging: String,
    pub rows: Vec<ReportRow>,
    pub header: Vec<String>,
    pub table: Vec<Vec<String>>,
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn build_report(entries: &[ReportEntry], layout: ReportLayout, rule: SuccessRule) -> Result<Report> {
    if entries.is_empty() {
        return Err(Error::invalid("report needs at least one entry"));
    }
    let scored = entries[0].success.is_some();
    for e in entries {
        if e.success.is_some() != scored || e.esim.is_some() != scored || e.nscore.is_some() != scored {
            return Err(Error::invalid(format!(
                "entry {}/{} is {} while others are not",
                e.case_id,
                e.language,
                if scored { "unscored" } else { "scored" }
            )));
        }
    }
    let mut groups: BTreeMap<(String, String), Vec<&ReportEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry((e.setting.clone(), e.language.clone())).or_default().push(e);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((setting, language), g) in &groups {
        let seen = g[0].seen;
        if g.iter().any(|e| e.seen != seen) {
            return Err(Error::invalid(format!(
                "language `{language}` is both seen and unseen in setting `{setting}`"
            )));
        }
        let outcomes: Vec<bool> = g.iter().map(|e| e.success.unwrap_or(e.exact_match)).collect();
        rows.push(ReportRow {
            setting: setting.clone(),
            language: language.clone(),
            seen,
            asr: attack_success_rate(&outcomes)?,
            exact_matches: g.iter().filter(|e| e.exact_match).count(),
            mean_esim: mean(&g.iter().map(|e| e.esim).collect::<Vec<_>>()),
            mean_nscore: mean(&g.iter().map(|e| e.nscore).collect::<Vec<_>>()),
        });
    }

    let (header, table) = match layout {
        ReportLayout::PerLanguageTable => {
            let header = ["setting", "language", "group", "asr", "exact", "esim", "nscore"]
                .map(String::from)
                .to_vec();
            let table = rows
                .iter()
                .map(|r| {
                    vec![
                        r.setting.clone(),
                        r.language.clone(),
                        if r.seen { "Seen" } else { "Unseen" }.to_string(),
                        r.asr.to_string(),
                        format!("{}/{}", r.exact_matches, r.asr.total),
                        fmt_opt(r.mean_esim),
                        fmt_opt(r.mean_nscore),
                    ]
                })
                .collect();
            (header, table)
        }
        ReportLayout::EnhancementMatrix => {
            let languages: BTreeSet<&str> = rows.iter().map(|r| r.language.as_str()).collect();
            let settings: BTreeSet<&str> = rows.iter().map(|r| r.setting.as_str()).collect();
            let mut header = vec!["setting".to_string()];
            header.extend(languages.iter().map(|l| l.to_string()));
            header.push("unseen".to_string());
            let table = settings
                .iter()
                .map(|s| {
                    let mut line = vec![s.to_string()];
                    let mut unseen = Vec::new();
                    for l in &languages {
                        match rows.iter().find(|r| r.setting == *s && r.language == *l) {
                            Some(r) => {
                                line.push(r.asr.to_string());
                                if !r.seen {
                                    unseen.push(*l);
                                }
                            }
                            None => line.push(String::new()),
                        }
                    }
                    line.push(unseen.join(" "));
                    line
                })
                .collect();
            (header, table)
        }
    };

    Ok(Report {
        layout,
        rule,
        success_basis: if scored { SuccessBasis::Semantic } else { SuccessBasis::ExactMatch },
        averaging: "all_cases".into(),
        rows,
        header,
        table,
    })
}

impl Report {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for line in &self.table {
            w.write_record(line)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
