//! Python bindings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use advst_core::attack_perturb::{run_perturbation_attack, AttackResult, PerturbAttackConfig, TargetSpec};
use advst_core::audio::defense::{apply_defense, DefenseContext, DefenseSpec};
use advst_core::audio::Waveform;
use advst_core::evaluation::{self, Scorers, SuccessRule};
use advst_core::music_attack::{self, MusicAttackConfig, SurrogateGenerator, SurrogateGeneratorConfig};
use advst_core::stmodel::corpus::CorpusConfig;
use advst_core::stmodel::surrogate::{train_surrogate, SurrogateModel};
use advst_core::stmodel::{checkpoint, encode, greedy_decode, SpeechTranslator, TokenId};
use advst_core::tco::{self, T2TTProvider};
use advst_core::testbed;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(advst, AdvstError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    AdvstError::new_err(e.to_string())
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        Some(t) => serde_json::from_str(t).map_err(err),
        None => Ok(T::default()),
    }
}

/// Surrogate speech-translation model.
#[pyclass(name = "SurrogateModel", module = "advst", frozen)]
pub struct PyModel {
    inner: SurrogateModel,
}

#[pymethods]
impl PyModel {
    /// Train on the bundled toy corpus.
    #[staticmethod]
    fn train_toy(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: train_surrogate(&CorpusConfig::toy(), seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(err)
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.inner.sample_rate_hz()
    }

    fn languages(&self) -> Vec<String> {
        self.inner.corpus().language_ids()
    }

    /// Greedy translation of `samples` into `language`.
    #[pyo3(signature = (samples, language, max_len = 64))]
    fn translate(&self, samples: Vec<f64>, language: &str, max_len: usize) -> PyResult<String> {
        let w = Waveform::new(samples, self.inner.sample_rate_hz()).map_err(err)?;
        let h = encode(&self.inner, &w).map_err(err)?;
        let seq = greedy_decode(&self.inner, &h, language, max_len).map_err(err)?;
        Ok(self.inner.vocabulary().decode_text(&seq))
    }

    /// Text-to-text translation through the corpus lexicon.
    fn translate_text(&self, text: &str, source: &str, target: &str) -> PyResult<String> {
        self.inner.translate_lexicon(text, source, target).map_err(err)
    }

    /// Render a sentence of the corpus as audio.
    fn render(&self, text: &str, language: &str) -> PyResult<Vec<f64>> {
        let corpus = self.inner.corpus();
        let meaning = corpus.parse(text, language).map_err(err)?;
        Ok(corpus.render_audio(&meaning).map_err(err)?.into_samples())
    }
}

/// Outcome of an attack.
#[pyclass(name = "AttackResult", module = "advst", frozen)]
pub struct PyAttackResult {
    inner: AttackResult,
}

#[pymethods]
impl PyAttackResult {
    #[getter]
    fn exact_match(&self) -> bool {
        self.inner.exact_match
    }

    #[getter]
    fn iterations_used(&self) -> usize {
        self.inner.iterations_used
    }

    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.final_loss
    }

    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace.clone()
    }

    /// Language → decoded text, attack and reporting languages alike.
    #[getter]
    fn translations(&self) -> BTreeMap<String, String> {
        self.inner
            .records()
            .map(|(l, r)| (l.clone(), r.translation.clone()))
            .collect()
    }

    #[getter]
    fn adversarial(&self) -> Option<Vec<f64>> {
        self.inner.waveform().map(|w| w.samples().to_vec())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    /// Score every language record in place with the fallback scorers.
    #[pyo3(signature = (rule = "AND"))]
    fn scored(&self, rule: &str) -> PyResult<PyAttackResult> {
        let mut inner = self.inner.clone();
        let scorers = Scorers::fallback();
        evaluation::score_result(&mut inner, &Default::default(), parse_rule(rule)?, &scorers).map_err(err)?;
        Ok(PyAttackResult { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "AttackResult(exact_match={}, iterations_used={}, final_loss={:.4})",
            if self.inner.exact_match { "True" } else { "False" },
            self.inner.iterations_used, self.inner.final_loss
        )
    }
}

fn parse_rule(rule: &str) -> PyResult<SuccessRule> {
    match rule.to_ascii_uppercase().as_str() {
        "AND" => Ok(SuccessRule::And),
        "OR" => Ok(SuccessRule::Or),
        _ => Err(err(format!("unknown rule `{rule}` (AND or OR)"))),
    }
}

fn targets(model: &SurrogateModel, texts: BTreeMap<String, String>) -> PyResult<TargetSpec> {
    let semantic = texts.values().next().cloned().unwrap_or_default();
    TargetSpec::new(model.vocabulary(), semantic, texts).map_err(err)
}

/// The bundled (carrier, target) cases for a trained toy model.
#[pyfunction]
#[pyo3(signature = (model, seed, count = testbed::DEFAULT_CASES))]
fn testbed_cases<'py>(py: Python<'py>, model: &PyModel, seed: u64, count: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    testbed::cases(&model.inner, seed, count)
        .map_err(err)?
        .into_iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("id", c.id)?;
            d.set_item("carrier", c.carrier.samples().to_vec())?;
            let texts: BTreeMap<String, String> = c
                .targets
                .per_language
                .iter()
                .map(|(l, t)| (l.clone(), t.text.clone()))
                .collect();
            d.set_item("targets", texts)?;
            Ok(d)
        })
        .collect()
}

/// Perturbation attack; `config` is a JSON attack configuration.
#[pyfunction]
#[pyo3(signature = (model, carrier, targets_by_language, config = None))]
fn perturbation_attack(
    model: &PyModel,
    carrier: Vec<f64>,
    targets_by_language: BTreeMap<String, String>,
    config: Option<&str>,
) -> PyResult<PyAttackResult> {
    let cfg: PerturbAttackConfig = from_json(config)?;
    let spec = targets(&model.inner, targets_by_language)?;
    let w = Waveform::new(carrier, model.inner.sample_rate_hz()).map_err(err)?;
    Ok(PyAttackResult {
        inner: run_perturbation_attack(&model.inner, &w, &spec, &cfg).map_err(err)?,
    })
}

/// Music attack with the surrogate generator.
#[pyfunction]
#[pyo3(name = "music_attack", signature = (model, targets_by_language, config = None, generator = None))]
fn run_music_attack(
    model: &PyModel,
    targets_by_language: BTreeMap<String, String>,
    config: Option<&str>,
    generator: Option<&str>,
) -> PyResult<PyAttackResult> {
    let cfg: MusicAttackConfig = from_json(config)?;
    let gcfg: SurrogateGeneratorConfig = from_json(generator)?;
    let gen = SurrogateGenerator::new(gcfg).map_err(err)?;
    let spec = targets(&model.inner, targets_by_language)?;
    let out = music_attack::run_music_attack(&gen, &model.inner, &spec, &cfg).map_err(err)?;
    Ok(PyAttackResult { inner: out.result })
}

struct CallableProvider {
    languages: Vec<String>,
    translate: Py<PyAny>,
}

impl T2TTProvider for CallableProvider {
    fn supported_languages(&self) -> Vec<String> {
        self.languages.clone()
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> advst_core::Result<String> {
        Python::attach(|py| {
            self.translate
                .call1(py, (text, source, target))
                .and_then(|v| v.extract::<String>(py))
                .map_err(|e| advst_core::Error::InvalidInput(e.to_string()))
        })
    }
}

/// Target cycle optimization. `provider` is a `SurrogateModel` or a
/// callable `(text, source, target) -> text`; callables need `languages`.
/// Returns `(chosen, trace_json)`.
#[pyfunction]
#[pyo3(signature = (provider, target, source_language, pivots, rounds = tco::DEFAULT_ROUNDS, languages = None))]
fn cycle_optimize(
    provider: &Bound<'_, PyAny>,
    target: &str,
    source_language: &str,
    pivots: Vec<String>,
    rounds: usize,
    languages: Option<Vec<String>>,
) -> PyResult<(String, String)> {
    let (chosen, trace) = if let Ok(m) = provider.cast::<PyModel>() {
        tco::cycle_optimize(&m.get().inner, target, source_language, &pivots, rounds).map_err(err)?
    } else {
        let p = CallableProvider {
            languages: languages.ok_or_else(|| err("callable providers need `languages`"))?,
            translate: provider.clone().unbind(),
        };
        tco::cycle_optimize(&p, target, source_language, &pivots, rounds).map_err(err)?
    };
    Ok((chosen, serde_json::to_string(&trace).map_err(err)?))
}

/// Apply one defense (`lowpass`, `codec`, `noise`, `quantize`, `resample`)
/// with default parameters, or a JSON defense spec.
#[pyfunction]
fn defend(samples: Vec<f64>, sample_rate_hz: u32, defense: &str) -> PyResult<Vec<f64>> {
    let spec = if defense.trim_start().starts_with('{') {
        serde_json::from_str::<DefenseSpec>(defense).map_err(err)?
    } else {
        DefenseSpec::from_kind(defense).map_err(err)?
    };
    let w = Waveform::new(samples, sample_rate_hz).map_err(err)?;
    let out = apply_defense(&w, &spec, &DefenseContext::default()).map_err(err)?;
    Ok(out.waveform().samples().to_vec())
}

#[pyfunction]
#[pyo3(signature = (omega, cap = music_attack::DEFAULT_KL_CAP))]
fn latent_prior_kl(omega: Vec<f64>, cap: f64) -> PyResult<f64> {
    music_attack::latent_prior_kl(&omega, cap).map_err(err)
}

#[pyfunction]
fn sharpness_loss(logits: Vec<Vec<f64>>, targets: Vec<TokenId>, alpha: f64) -> PyResult<f64> {
    music_attack::sharpness_loss(&logits, &targets, alpha).map_err(err)
}

#[pyfunction]
fn esim(a: &str, b: &str) -> PyResult<f64> {
    evaluation::esim(a, b, &evaluation::HashedBagOfWords).map_err(err)
}

#[pyfunction]
fn nscore(premise: &str, hypothesis: &str) -> PyResult<f64> {
    evaluation::nscore(premise, hypothesis, &evaluation::TokenOverlapNli).map_err(err)
}

/// `(gamma_e, gamma_n)` from the fallback scorers.
#[pyfunction]
fn calibrate_thresholds(target: &str, paraphrases: Vec<String>) -> PyResult<(f64, f64)> {
    let t = evaluation::calibrate_thresholds(target, &paraphrases, &Scorers::fallback()).map_err(err)?;
    Ok((t.gamma_e, t.gamma_n))
}

#[pyfunction]
#[pyo3(signature = (output, target, paraphrases, rule = "AND"))]
fn judge_success(output: &str, target: &str, paraphrases: Vec<String>, rule: &str) -> PyResult<bool> {
    let s = Scorers::fallback();
    let t = evaluation::calibrate_thresholds(target, &paraphrases, &s).map_err(err)?;
    Ok(evaluation::judge_success(output, target, &t, parse_rule(rule)?, &s)
        .map_err(err)?
        .success)
}

/// `(successes, total, fraction, "k/n")`.
#[pyfunction]
fn attack_success_rate(outcomes: Vec<bool>) -> PyResult<(usize, usize, f64, String)> {
    let r = evaluation::attack_success_rate(&outcomes).map_err(err)?;
    Ok((r.successes, r.total, r.fraction, r.to_string()))
}

/// Run a CLI job document and return the manifest as JSON.
#[pyfunction]
fn run_job(config: &str, output_dir: PathBuf) -> PyResult<String> {
    let cfg = advst_cli::validate_config(config).map_err(err)?;
    let m = advst_cli::execute_job(&cfg, &output_dir).map_err(err)?;
    serde_json::to_string(&m).map_err(err)
}

#[pymodule]
fn advst(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AdvstError", m.py().get_type::<AdvstError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_function(wrap_pyfunction!(testbed_cases, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_attack, m)?)?;
    m.add_function(wrap_pyfunction!(run_music_attack, m)?)?;
    m.add_function(wrap_pyfunction!(cycle_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(defend, m)?)?;
    m.add_function(wrap_pyfunction!(latent_prior_kl, m)?)?;
    m.add_function(wrap_pyfunction!(sharpness_loss, m)?)?;
    m.add_function(wrap_pyfunction!(esim, m)?)?;
    m.add_function(wrap_pyfunction!(nscore, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(judge_success, m)?)?;
    m.add_function(wrap_pyfunction!(attack_success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run_job, m)?)?;
    Ok(())
}
