//! Target cycle optimization: round-trip the target through pivot languages
//! and keep the most frequent retranslation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stmodel::surrogate::SurrogateModel;

pub const DEFAULT_ROUNDS: usize = 2;

/// Text-to-text translation backend.
pub trait T2TTProvider {
    fn supported_languages(&self) -> Vec<String>;

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String>;
}

impl T2TTProvider for SurrogateModel {
    fn supported_languages(&self) -> Vec<String> {
        self.corpus().language_ids()
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String> {
        self.translate_lexicon(text, source, target)
    }
}

/// Lookup-table provider. Unknown `(text, source, target)` triples either
/// echo the input or fail, depending on `passthrough`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableProvider {
    pub languages: Vec<String>,
    pub entries: Vec<TableEntry>,
    #[serde(default)]
    pub passthrough: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub text: String,
    pub source: String,
    pub target: String,
    pub output: String,
}

impl TableProvider {
    pub fn new<S: Into<String>>(languages: impl IntoIterator<Item = S>) -> Self {
        Self {
            languages: languages.into_iter().map(Into::into).collect(),
            entries: Vec::new(),
            passthrough: false,
        }
    }

    pub fn with_passthrough(mut self) -> Self {
        self.passthrough = true;
        self
    }

    pub fn insert(&mut self, text: &str, source: &str, target: &str, output: &str) -> &mut Self {
        self.entries.push(TableEntry {
            text: text.into(),
            source: source.into(),
            target: target.into(),
            output: output.into(),
        });
        self
    }
}

impl T2TTProvider for TableProvider {
    fn supported_languages(&self) -> Vec<String> {
        self.languages.clone()
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String> {
        let hit = self
            .entries
            .iter()
            .rev()
            .find(|e| e.text == text && e.source == source && e.target == target);
        match hit {
            Some(e) => Ok(e.output.clone()),
            None if self.passthrough => Ok(text.to_string()),
            None => Err(Error::invalid(format!("no table entry for `{text}` ({source} -> {target})"))),
        }
    }
}

/// One leg of a cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleStep {
    pub round: usize,
    pub pivot: String,
    pub input: String,
    pub forward: String,
    pub retranslated: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub original: String,
    pub source_language: String,
    pub rounds: Vec<CycleStep>,
    /// Retranslation counts keyed by normalized text.
    pub counts: BTreeMap<String, usize>,
    /// Normalized form of the original target, which gets one extra vote.
    pub original_vote: String,
    pub chosen: String,
    pub chosen_normalized: String,
}

impl CycleTrace {
    /// Count in the selection pool (retranslations plus the original vote).
    pub fn pool_count(&self, normalized: &str) -> usize {
        self.counts.get(normalized).copied().unwrap_or(0) + usize::from(normalized == self.original_vote)
    }
}

/// Trim, collapse whitespace runs and drop trailing `.`, `?` and `!`.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', '?', '!'])
        .trim_end()
        .to_string()
}

/// Round-trip `target_text` through every pivot for `rounds` rounds and
/// return the most frequent retranslation.
///
/// Round `r` of a pivot starts from that pivot's round `r − 1` output.
pub fn cycle_optimize<P: T2TTProvider + ?Sized, S: AsRef<str>>(
    provider: &P,
    target_text: &str,
    source_language: &str,
    pivots: &[S],
    rounds: usize,
) -> Result<(String, CycleTrace)> {
    if rounds == 0 {
        return Err(Error::config("tco rounds must be at least 1"));
    }
    if pivots.is_empty() {
        return Err(Error::config("tco needs at least one pivot language"));
    }
    let supported = provider.supported_languages();
    for lang in std::iter::once(source_language).chain(pivots.iter().map(AsRef::as_ref)) {
        if !supported.iter().any(|s| s == lang) {
            return Err(Error::config(format!("language `{lang}` is not supported by the provider")));
        }
    }

    let mut steps = Vec::with_capacity(rounds * pivots.len());
    for pivot in pivots {
        let pivot = pivot.as_ref();
        let mut text = target_text.to_string();
        for round in 0..rounds {
            let wrap = |e: Error| Error::Provider {
                pivot: pivot.to_string(),
                reason: e.to_string(),
            };
            let forward = provider.translate(&text, source_language, pivot).map_err(wrap)?;
            let back = provider.translate(&forward, pivot, source_language).map_err(wrap)?;
            steps.push(CycleStep {
                round,
                pivot: pivot.to_string(),
                input: text,
                forward,
                retranslated: back.clone(),
            });
            text = back;
        }
    }
    steps.sort_by_key(|s| s.round);

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut variants: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for s in &steps {
        let key = normalize(&s.retranslated);
        *counts.entry(key.clone()).or_default() += 1;
        *variants.entry(key).or_default().entry(s.retranslated.clone()).or_default() += 1;
    }
    let original_vote = normalize(target_text);
    *variants
        .entry(original_vote.clone())
        .or_default()
        .entry(target_text.to_string())
        .or_default() += 1;

    let pool = |k: &str| counts.get(k).copied().unwrap_or(0) + usize::from(k == original_vote);
    let chosen_normalized = variants
        .keys()
        .max_by(|a, b| pool(a).cmp(&pool(b)).then_with(|| b.cmp(a)))
        .cloned()
        .expect("pool holds at least the original");
    let chosen = variants[&chosen_normalized]
        .iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
        .map(|(raw, _)| raw.clone())
        .expect("every pool entry has a variant");

    let trace = CycleTrace {
        original: target_text.to_string(),
        source_language: source_language.to_string(),
        rounds: steps,
        counts,
        original_vote,
        chosen: chosen.clone(),
        chosen_normalized,
    };
    Ok((chosen, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Identity;

    impl T2TTProvider for Identity {
        fn supported_languages(&self) -> Vec<String> {
            vec!["en".into(), "de".into(), "fr".into()]
        }

        fn translate(&self, text: &str, _: &str, _: &str) -> Result<String> {
            Ok(text.to_string())
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Are   you\tcrazy?! "), "Are you crazy");
        assert_eq!(normalize("Hello."), "Hello");
        assert_eq!(normalize("hello"), "hello");
    }

    #[test]
    fn identity_keeps_original() {
        let (t, trace) = cycle_optimize(&Identity, "Are you insane?", "en", &["de", "fr"], 3).unwrap();
        assert_eq!(t, "Are you insane?");
        assert_eq!(trace.counts.values().sum::<usize>(), 6);
        assert_eq!(trace.pool_count("Are you insane"), 7);
    }

    #[test]
    fn rounds_are_chained() {
        let mut p = TableProvider::new(["en", "de"]);
        p.insert("a", "en", "de", "A").insert("A", "de", "en", "b");
        p.insert("b", "en", "de", "B").insert("B", "de", "en", "c");
        let (_, trace) = cycle_optimize(&p, "a", "en", &["de"], 2).unwrap();
        assert_eq!(trace.rounds[1].input, "b");
        assert_eq!(trace.rounds[1].retranslated, "c");
    }

    #[test]
    fn provider_errors_name_the_pivot() {
        let p = TableProvider::new(["en", "de"]);
        let err = cycle_optimize(&p, "x", "en", &["de"], 1).unwrap_err();
        assert!(matches!(&err, Error::Provider { pivot, .. } if pivot == "de"), "{err}");
    }

    #[test]
    fn preconditions() {
        assert_eq!(cycle_optimize(&Identity, "x", "en", &["de"], 0).unwrap_err().kind(), "config");
        assert_eq!(cycle_optimize::<_, &str>(&Identity, "x", "en", &[], 1).unwrap_err().kind(), "config");
        assert_eq!(cycle_optimize(&Identity, "x", "en", &["ja"], 1).unwrap_err().kind(), "config");
    }

    #[test]
    fn raw_variant_is_returned() {
        let mut p = TableProvider::new(["en", "de", "fr", "es"]);
        for (pivot, out) in [("de", "hi there"), ("fr", "hi  there."), ("es", "hi  there.")] {
            p.insert("x", "en", pivot, "y").insert("y", pivot, "en", out);
        }
        let (t, trace) = cycle_optimize(&p, "x", "en", &["de", "fr", "es"], 1).unwrap();
        assert_eq!(trace.chosen_normalized, "hi there");
        assert_eq!(t, "hi  there.");
    }

    #[test]
    fn surrogate_lexicon_round_trip_is_stable() {
        let model = crate::testbed::toy_testbed(42).unwrap().model;
        let (t, _) = cycle_optimize(&model, "man sees ball", "en", &["de", "fr", "zh"], 2).unwrap();
        assert_eq!(t, "man sees ball");
    }

    proptest! {
        #[test]
        fn chosen_is_a_pool_maximum(outputs in prop::collection::vec(0usize..4, 1..6), rounds in 1usize..3) {
            let words = ["alpha", "beta", "gamma", "delta"];
            let pivots: Vec<String> = (0..outputs.len()).map(|i| format!("p{i}")).collect();
            let mut langs = pivots.clone();
            langs.push("src".into());
            let mut p = TableProvider::new(langs);
            for (pivot, &o) in pivots.iter().zip(&outputs) {
                for text in ["orig"].iter().chain(words.iter()) {
                    p.insert(text, "src", pivot, "mid");
                }
                p.insert("mid", pivot, "src", words[o]);
            }
            let (t, trace) = cycle_optimize(&p, "orig", "src", &pivots, rounds).unwrap();
            prop_assert_eq!(trace.counts.values().sum::<usize>(), rounds * pivots.len());
            let best = trace.pool_count(&normalize(&t));
            prop_assert!(trace.counts.keys().all(|k| trace.pool_count(k) <= best));
            prop_assert!(trace.pool_count(&trace.original_vote) <= best);
            prop_assert!(t == "orig" || trace.counts.contains_key(&normalize(&t)));
        }
    }
}
