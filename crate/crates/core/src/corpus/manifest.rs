//! JSON-lines manifest of utterances.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::mix::MixInfo;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    None,
    White,
    Ssn,
    Babble,
}

impl NoiseType {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseType::None => "none",
            NoiseType::White => "white",
            NoiseType::Ssn => "ssn",
            NoiseType::Babble => "babble",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(NoiseType::None),
            "white" => Some(NoiseType::White),
            "ssn" => Some(NoiseType::Ssn),
            "babble" => Some(NoiseType::Babble),
            _ => None,
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// SNR of a recording: a finite value in dB, or the unmixed clean signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Clean,
    Db(f64),
}

impl Snr {
    pub fn db(self) -> Option<f64> {
        match self {
            Snr::Clean => None,
            Snr::Db(v) => Some(v),
        }
    }

    /// Short filesystem-safe label, e.g. `m14`, `6`, `clean`.
    pub fn label(self) -> String {
        match self {
            Snr::Clean => "clean".to_string(),
            Snr::Db(v) if v < 0.0 => format!("m{}", fmt_num(-v)),
            Snr::Db(v) => fmt_num(v),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}").replace('.', "p")
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Clean => s.serialize_str("clean"),
            Snr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Snr;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or \"clean\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Snr, E> {
                if v.is_finite() {
                    Ok(Snr::Db(v))
                } else {
                    Err(E::custom("SNR must be finite"))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Snr, E> {
                Ok(Snr::Db(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Snr, E> {
                Ok(Snr::Db(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Snr, E> {
                if v == "clean" {
                    Ok(Snr::Clean)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: u32,
    pub words: Vec<String>,
    pub noise_type: NoiseType,
    pub snr_db: Snr,
    pub audio_path: String,
    pub num_samples: usize,
    pub alignment: Vec<AlignedWord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixInfo>,
}

impl UtteranceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.alignment.len() != self.words.len() {
            return Err(format!(
                "{} alignment segments for {} words",
                self.alignment.len(),
                self.words.len()
            ));
        }
        let mut prev_end = 0;
        for (seg, w) in self.alignment.iter().zip(&self.words) {
            if &seg.word != w {
                return Err(format!("alignment word `{}` does not match `{w}`", seg.word));
            }
            if seg.start >= seg.end {
                return Err(format!("empty segment for `{}`", seg.word));
            }
            if seg.start < prev_end {
                return Err(format!("segment for `{}` overlaps its predecessor", seg.word));
            }
            if seg.end > self.num_samples {
                return Err(format!("segment for `{}` exceeds signal length", seg.word));
            }
            prev_end = seg.end;
        }
        if let Snr::Db(v) = self.snr_db {
            if !v.is_finite() {
                return Err("non-finite SNR".into());
            }
        }
        Ok(())
    }

    /// Sample range from the first word's start to the last word's end.
    pub fn speech_extent(&self) -> std::ops::Range<usize> {
        match (self.alignment.first(), self.alignment.last()) {
            (Some(a), Some(b)) => a.start..b.end,
            _ => 0..self.num_samples,
        }
    }
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| Error::Manifest { line: i + 1, message })?;
        out.push(rec);
    }
    Ok(out)
}
