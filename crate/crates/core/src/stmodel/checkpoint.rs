//! Surrogate checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "ADVSTCKP"
//! version      u32       CHECKPOINT_VERSION
//! header_len   u64
//! header       JSON      { version, arch, corpus, vocabulary, training, parameter_count }
//! params       f64 × parameter_count
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::CorpusConfig;
use super::surrogate::{SurrogateArch, SurrogateModel, TrainingSummary};
use super::{SpeechTranslator, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVSTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: SurrogateArch,
    corpus: CorpusConfig,
    vocabulary: Vocabulary,
    training: Option<TrainingSummary>,
    parameter_count: u64,
}

pub fn to_bytes(model: &SurrogateModel) -> Result<Vec<u8>> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        arch: model.arch().clone(),
        corpus: model.corpus().clone(),
        vocabulary: model.vocabulary().clone(),
        training: model.training_summary().cloned(),
        parameter_count: model.parameters().len() as u64,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.parameters().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.parameters() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SurrogateModel> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::invalid("not a surrogate checkpoint (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut u64buf = [0u8; 8];
    read_exact(&mut r, &mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    if header_len > r.len() {
        return Err(Error::invalid("checkpoint header is truncated"));
    }
    let header: Header = serde_json::from_slice(&r[..header_len])?;
    r = &r[header_len..];
    let count = header.parameter_count as usize;
    if r.len() != count * 8 {
        return Err(Error::invalid(format!(
            "checkpoint has {} parameter bytes, header declares {}",
            r.len(),
            count * 8
        )));
    }
    let params: Vec<f64> = r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let model = SurrogateModel::from_parts(header.corpus, header.arch, params, header.training)?;
    if model.vocabulary() != &header.vocabulary {
        return Err(Error::invalid("checkpoint vocabulary does not match its corpus"));
    }
    Ok(model)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::invalid("checkpoint is truncated"))
}

pub fn save(model: &SurrogateModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_parameters() {
        let m = SurrogateModel::initialize(&CorpusConfig::toy(), &SurrogateArch::default(), 5).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.parameters(), m.parameters());
        assert_eq!(back.vocabulary(), m.vocabulary());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = SurrogateModel::initialize(&CorpusConfig::toy(), &SurrogateArch::default(), 5).unwrap();
        let bytes = to_bytes(&m).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(from_bytes(&bad).is_err());
    }
}
