//! Bundled desk-scale testbed: a surrogate trained on the toy corpus and a
//! fixed list of (carrier, target) attack cases drawn from that corpus.

use crate::attack_perturb::TargetSpec;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::stmodel::corpus::{CorpusConfig, Meaning};
use crate::stmodel::surrogate::{train_surrogate, SurrogateModel};
use crate::stmodel::SpeechTranslator;

pub const DEFAULT_CASES: usize = 10;

#[derive(Debug, Clone)]
pub struct TestbedCase {
    pub id: String,
    pub carrier_meaning: Meaning,
    pub carrier: Waveform,
    pub target_meaning: Meaning,
    /// Targets for every corpus language.
    pub targets: TargetSpec,
}

pub struct Testbed {
    pub model: SurrogateModel,
    pub cases: Vec<TestbedCase>,
}

/// Train the surrogate on the toy corpus and draw `DEFAULT_CASES` cases.
pub fn toy_testbed(seed: u64) -> Result<Testbed> {
    let model = train_surrogate(&CorpusConfig::toy(), seed)?;
    let cases = cases(&model, seed, DEFAULT_CASES)?;
    Ok(Testbed { model, cases })
}

/// Pair the first `count` corpus sentences (carriers) with the next `count`
/// (targets), skipping pairs with identical meaning.
pub fn cases(model: &SurrogateModel, seed: u64, count: usize) -> Result<Vec<TestbedCase>> {
    let corpus = model.corpus();
    let sentences = corpus.build(seed)?;
    if sentences.len() < 2 * count {
        return Err(Error::config(format!(
            "corpus has {} sentences, {} cases need {}",
            sentences.len(),
            count,
            2 * count
        )));
    }
    let (carriers, targets) = sentences.split_at(count);
    carriers
        .iter()
        .zip(targets)
        .filter(|(c, t)| c.meaning != t.meaning)
        .enumerate()
        .map(|(i, (c, t))| {
            let english = t.translations.get("en").cloned().unwrap_or_default();
            Ok(TestbedCase {
                id: format!("case{i:02}"),
                carrier_meaning: c.meaning.clone(),
                carrier: c.audio.clone(),
                target_meaning: t.meaning.clone(),
                targets: TargetSpec::new(model.vocabulary(), english, t.translations.clone())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_distinct_and_cover_all_languages() {
        let m = SurrogateModel::initialize(
            &CorpusConfig::toy(),
            &crate::stmodel::surrogate::SurrogateArch::default(),
            42,
        )
        .unwrap();
        let cs = cases(&m, 42, DEFAULT_CASES).unwrap();
        assert_eq!(cs.len(), DEFAULT_CASES);
        for c in &cs {
            assert_ne!(c.carrier_meaning, c.target_meaning);
            assert_eq!(c.targets.per_language.len(), 4);
        }
        assert!(cases(&m, 42, 11).is_err());
    }
}
