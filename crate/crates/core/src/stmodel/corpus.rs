//! Synthetic tone-word corpus for the surrogate model.
//!
//! Every concept is spoken as a fixed-frequency tone segment; a sentence is
//! one concept per slot, concatenated in slot order. Each language renders
//! the same concepts with its own words and word order.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSpec {
    pub id: String,
    /// Slot names in surface order.
    pub word_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSpec {
    pub tone_hz: f64,
    /// language id → surface word
    pub words: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub name: String,
    pub concepts: Vec<ConceptSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    #[serde(default = "default_word_samples")]
    pub word_samples: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_sentences")]
    pub sentences: usize,
    /// Relative amplitudes of the overtones at 2f, 3f, ...; overtones at or
    /// above Nyquist are dropped.
    #[serde(default)]
    pub harmonics: Vec<f64>,
    pub languages: Vec<LanguageSpec>,
    pub slots: Vec<SlotSpec>,
}

fn default_rate() -> u32 {
    16_000
}
fn default_word_samples() -> usize {
    512
}
fn default_amplitude() -> f64 {
    0.3
}
fn default_sentences() -> usize {
    20
}

/// A sentence: one concept index per slot.
pub type Meaning = Vec<usize>;

#[derive(Debug, Clone)]
pub struct CorpusSentence {
    pub meaning: Meaning,
    pub audio: Waveform,
    /// language id → reference translation
    pub translations: BTreeMap<String, String>,
}

impl CorpusConfig {
    /// Four languages (en, zh, de, fr), subject/verb/object slots with four
    /// concepts each, fundamentals on a 250 Hz grid between 1.25 and 4 kHz
    /// with two decaying overtones.
    pub fn toy() -> Self {
        let lang = |id: &str, order: [&str; 3]| LanguageSpec {
            id: id.into(),
            word_order: order.iter().map(|s| s.to_string()).collect(),
        };
        let table: [(&str, [[&str; 4]; 4]); 3] = [
            (
                "subject",
                [
                    ["man", "nanren", "Mann", "homme"],
                    ["woman", "nvren", "Frau", "femme"],
                    ["child", "haizi", "Kind", "enfant"],
                    ["dog", "gou", "Hund", "chien"],
                ],
            ),
            (
                "verb",
                [
                    ["sees", "kan", "sieht", "voit"],
                    ["eats", "chi", "isst", "mange"],
                    ["likes", "xihuan", "mag", "aime"],
                    ["takes", "na", "nimmt", "prend"],
                ],
            ),
            (
                "object",
                [
                    ["apple", "pingguo", "Apfel", "pomme"],
                    ["bread", "mianbao", "Brot", "pain"],
                    ["ball", "qiu", "Ball", "balle"],
                    ["book", "shu", "Buch", "livre"],
                ],
            ),
        ];
        let ids = ["en", "zh", "de", "fr"];
        let mut tone = 1250.0;
        let slots = table
            .iter()
            .map(|(name, rows)| SlotSpec {
                name: name.to_string(),
                concepts: rows
                    .iter()
                    .map(|row| {
                        let c = ConceptSpec {
                            tone_hz: tone,
                            words: ids
                                .iter()
                                .zip(row.iter())
                                .map(|(l, w)| (l.to_string(), w.to_string()))
                                .collect(),
                        };
                        tone += 250.0;
                        c
                    })
                    .collect(),
            })
            .collect();
        Self {
            sample_rate_hz: default_rate(),
            word_samples: default_word_samples(),
            amplitude: default_amplitude(),
            sentences: default_sentences(),
            harmonics: vec![0.5, 0.3],
            languages: vec![
                lang("en", ["subject", "verb", "object"]),
                lang("zh", ["subject", "verb", "object"]),
                lang("de", ["subject", "object", "verb"]),
                lang("fr", ["subject", "verb", "object"]),
            ],
            slots,
        }
    }

    pub fn language_ids(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.id.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::config("corpus lists no languages"));
        }
        if self.slots.is_empty() {
            return Err(Error::config("corpus lists no slots"));
        }
        if self.word_samples == 0 || self.sample_rate_hz == 0 {
            return Err(Error::config("word length and sample rate must be positive"));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::config("amplitude must be in (0, 1]"));
        }
        let slot_names: BTreeSet<&str> = self.slots.iter().map(|s| s.name.as_str()).collect();
        if slot_names.len() != self.slots.len() {
            return Err(Error::config("duplicate slot names"));
        }
        let mut lang_ids = BTreeSet::new();
        for l in &self.languages {
            if !lang_ids.insert(l.id.as_str()) {
                return Err(Error::config(format!("duplicate language `{}`", l.id)));
            }
            let order: BTreeSet<&str> = l.word_order.iter().map(String::as_str).collect();
            if order != slot_names || l.word_order.len() != self.slots.len() {
                return Err(Error::config(format!(
                    "word order of `{}` must be a permutation of the slots",
                    l.id
                )));
            }
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let mut tones = Vec::new();
        for slot in &self.slots {
            if slot.concepts.is_empty() {
                return Err(Error::config(format!("slot `{}` has an empty word list", slot.name)));
            }
            for l in &self.languages {
                let mut seen = BTreeSet::new();
                for c in &slot.concepts {
                    let w = c.words.get(&l.id).ok_or_else(|| {
                        Error::config(format!("slot `{}` lacks a `{}` word", slot.name, l.id))
                    })?;
                    if w.is_empty() || w.chars().any(char::is_whitespace) {
                        return Err(Error::config(format!("invalid word `{w}`")));
                    }
                    if !seen.insert(w) {
                        return Err(Error::config(format!("word `{w}` repeats in slot `{}`", slot.name)));
                    }
                }
            }
            for c in &slot.concepts {
                if !(c.tone_hz > 0.0 && c.tone_hz < nyquist) {
                    return Err(Error::config(format!("tone {} Hz outside (0, {nyquist})", c.tone_hz)));
                }
                tones.push(c.tone_hz);
            }
        }
        tones.sort_by(f64::total_cmp);
        if tones.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("concept tones must be distinct"));
        }
        let combos: usize = self.slots.iter().map(|s| s.concepts.len()).product();
        if self.sentences == 0 || self.sentences > combos {
            return Err(Error::config(format!(
                "sentence count {} must be in 1..={combos}",
                self.sentences
            )));
        }
        Ok(())
    }

    /// All words of all languages, in a stable order.
    pub fn all_words(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.languages {
            for s in &self.slots {
                for c in &s.concepts {
                    out.push(c.words[&l.id].clone());
                }
            }
        }
        out
    }

    fn slot_index(&self, name: &str) -> usize {
        self.slots.iter().position(|s| s.name == name).expect("validated")
    }

    fn language(&self, id: &str) -> Result<&LanguageSpec> {
        self.languages
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::config(format!("language `{id}` is not in the corpus")))
    }

    pub fn render_audio(&self, meaning: &[usize]) -> Result<Waveform> {
        self.check_meaning(meaning)?;
        let sr = self.sample_rate_hz as f64;
        let mut samples = Vec::with_capacity(meaning.len() * self.word_samples);
        for (slot, &c) in self.slots.iter().zip(meaning) {
            let f = slot.concepts[c].tone_hz;
            let partials: Vec<(f64, f64)> = std::iter::once((f, 1.0))
                .chain(self.harmonics.iter().enumerate().map(|(k, a)| ((k + 2) as f64 * f, *a)))
                .filter(|(fk, _)| *fk < sr / 2.0)
                .collect();
            samples.extend((0..self.word_samples).map(|i| {
                let t = i as f64 / sr;
                self.amplitude * partials.iter().map(|(fk, a)| a * (2.0 * PI * fk * t).sin()).sum::<f64>()
            }));
        }
        Waveform::new(samples, self.sample_rate_hz)
    }

    pub fn translate(&self, meaning: &[usize], language: &str) -> Result<String> {
        self.check_meaning(meaning)?;
        let lang = self.language(language)?;
        Ok(lang
            .word_order
            .iter()
            .map(|name| {
                let s = self.slot_index(name);
                self.slots[s].concepts[meaning[s]].words[language].as_str()
            })
            .collect::<Vec<_>>()
            .join(" "))
    }

    /// Inverse of [`translate`](Self::translate).
    pub fn parse(&self, text: &str, language: &str) -> Result<Meaning> {
        let lang = self.language(language)?;
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() != lang.word_order.len() {
            return Err(Error::invalid(format!(
                "`{text}` does not have {} words",
                lang.word_order.len()
            )));
        }
        let mut meaning = vec![0; self.slots.len()];
        for (name, w) in lang.word_order.iter().zip(words) {
            let s = self.slot_index(name);
            meaning[s] = self.slots[s]
                .concepts
                .iter()
                .position(|c| c.words[language] == w)
                .ok_or_else(|| Error::invalid(format!("`{w}` is not a {language} {name}")))?;
        }
        Ok(meaning)
    }

    fn check_meaning(&self, meaning: &[usize]) -> Result<()> {
        if meaning.len() != self.slots.len()
            || meaning.iter().zip(&self.slots).any(|(c, s)| *c >= s.concepts.len())
        {
            return Err(Error::invalid(format!("invalid meaning {meaning:?}")));
        }
        Ok(())
    }

    /// The corpus sentences: a seeded shuffle of all slot combinations,
    /// truncated to `sentences`.
    pub fn build(&self, seed: u64) -> Result<Vec<CorpusSentence>> {
        self.validate()?;
        let mut meanings: Vec<Meaning> = vec![vec![]];
        for slot in &self.slots {
            meanings = meanings
                .into_iter()
                .flat_map(|m| {
                    (0..slot.concepts.len()).map(move |c| {
                        let mut m2 = m.clone();
                        m2.push(c);
                        m2
                    })
                })
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        meanings.shuffle(&mut rng);
        meanings.truncate(self.sentences);
        meanings
            .into_iter()
            .map(|meaning| {
                let translations = self
                    .languages
                    .iter()
                    .map(|l| Ok((l.id.clone(), self.translate(&meaning, &l.id)?)))
                    .collect::<Result<_>>()?;
                Ok(CorpusSentence {
                    audio: self.render_audio(&meaning)?,
                    meaning,
                    translations,
                })
            })
            .collect()
    }
}
