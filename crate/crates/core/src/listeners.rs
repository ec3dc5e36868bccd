//! Simulated listening-test responses.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{GrammarSpec, NoiseType, UtteranceRecord};
use crate::features::Audiogram;
use crate::io;
use crate::seed::{hash_str, mix, rng, unit};
use crate::{Error, Result};

/// SSN SRT of the normal-hearing reference cohort.
pub const NHL_SSN_SRT_DB: f64 = -10.31;
/// The same cohort's SRT as quoted elsewhere for the same data.
pub const NHL_SSN_SRT_ALT_DB: f64 = -10.1;
pub const NHL_WHITE_SRT_DB: f64 = -8.8;
pub const NHL_BABBLE_SRT_DB: f64 = -4.8;

/// Pure-tone thresholds (dB HL at 0.25–8 kHz) of the nine hearing-impaired listeners.
pub const HIL_AUDIOGRAMS: [[f64; 6]; 9] = [
    [15.0, 10.0, 15.0, 20.0, 50.0, 75.0],
    [35.0, 30.0, 40.0, 50.0, 65.0, 70.0],
    [20.0, 20.0, 35.0, 45.0, 35.0, 40.0],
    [0.0, 5.0, 15.0, 45.0, 65.0, 60.0],
    [10.0, 15.0, 20.0, 25.0, 50.0, 60.0],
    [65.0, 65.0, 65.0, 60.0, 60.0, 80.0],
    [15.0, 30.0, 40.0, 50.0, 60.0, 65.0],
    [20.0, 25.0, 35.0, 30.0, 60.0, 50.0],
    [15.0, 20.0, 25.0, 20.0, 15.0, 20.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ListenerType {
    Nhl,
    Hil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerProfile {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: ListenerType,
    /// SNR of 50% keyword-correct score per noise type, before any
    /// audiogram offset.
    pub srt_db: BTreeMap<String, f64>,
    /// Rate of the logistic (1/dB).
    pub slope: f64,
    pub lapse: f64,
    /// Chance level per slot (1/V).
    pub guess: Vec<f64>,
    /// Slots scored in the listening test.
    pub keywords: Vec<usize>,
    pub audiogram: Option<Audiogram>,
    /// dB of SRT shift per dB HL of mean 2–4 kHz threshold.
    pub hil_factor: f64,
    pub seed: u64,
}

impl ListenerProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::invalid(format!("listener {}: {m}", self.id));
        if !(self.slope > 0.0) {
            return Err(bad(format!("slope must be positive, got {}", self.slope)));
        }
        if !(0.0..=0.05).contains(&self.lapse) {
            return Err(bad(format!("lapse must lie in [0, 0.05], got {}", self.lapse)));
        }
        if self.guess.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(bad("guess floors must lie in (0, 1)".into()));
        }
        if self.keywords.is_empty() || self.keywords.iter().any(|&k| k >= self.guess.len()) {
            return Err(bad("keyword slots must index the guess floors".into()));
        }
        if self.kind == ListenerType::Hil && self.audiogram.is_none() {
            return Err(bad("hearing-impaired profile needs an audiogram".into()));
        }
        if let Some(a) = &self.audiogram {
            a.validate()?;
        }
        Ok(())
    }

    /// SRT including the audiogram offset.
    pub fn effective_srt(&self, noise: NoiseType) -> Result<f64> {
        let base = *self
            .srt_db
            .get(noise.as_str())
            .ok_or_else(|| Error::invalid(format!("listener {} has no SRT for {noise}", self.id)))?;
        let offset = match (&self.audiogram, self.kind) {
            (Some(a), ListenerType::Hil) => self.hil_factor * a.high_frequency_mean(),
            _ => 0.0,
        };
        Ok(base + offset)
    }

    /// Logistic midpoint that puts the keyword-averaged correct score at
    /// 50% exactly at the effective SRT.
    fn midpoint(&self, srt: f64) -> f64 {
        let g = self.keywords.iter().map(|&k| self.guess[k]).sum::<f64>() / self.keywords.len() as f64;
        let q = (0.5 - g) / (1.0 - g - self.lapse);
        srt - (q / (1.0 - q)).ln() / self.slope
    }

    pub fn p_correct(&self, noise: NoiseType, snr_db: f64, slot: usize) -> Result<f64> {
        let m = self.midpoint(self.effective_srt(noise)?);
        let g = *self
            .guess
            .get(slot)
            .ok_or_else(|| Error::invalid(format!("slot {slot} out of range")))?;
        let core = 1.0 / (1.0 + (-self.slope * (snr_db - m)).exp());
        Ok(g + (1.0 - g - self.lapse) * core)
    }
}

/// Guess floors from slot vocabulary sizes.
pub fn guess_floors(grammar: &GrammarSpec) -> Vec<f64> {
    (0..grammar.slots.len()).map(|s| 1.0 / grammar.vocab_size(s) as f64).collect()
}

/// Bernoulli outcome seeded by (profile, utterance, slot).
pub fn simulate_response(profile: &ListenerProfile, noise: NoiseType, snr_db: f64, slot: usize, utt_id: &str) -> Result<bool> {
    let p = profile.p_correct(noise, snr_db, slot)?;
    Ok(unit(&[profile.seed, hash_str(utt_id), slot as u64]) < p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub nhl_count: usize,
    pub hil_count: usize,
    /// Cohort SRT per noise type (dB).
    pub anchors: BTreeMap<String, f64>,
    /// Between-listener SD of individual SRTs; deviations are centred so
    /// the cohort mean equals the anchor.
    pub srt_sd_db: f64,
    pub slope: f64,
    pub lapse: f64,
    pub hil_factor: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let anchors = [
            (NoiseType::Ssn, NHL_SSN_SRT_DB),
            (NoiseType::White, NHL_WHITE_SRT_DB),
            (NoiseType::Babble, NHL_BABBLE_SRT_DB),
        ]
        .into_iter()
        .map(|(n, v)| (n.as_str().to_string(), v))
        .collect();
        Self {
            nhl_count: 20,
            hil_count: 9,
            anchors,
            srt_sd_db: 1.0,
            slope: 0.5,
            lapse: 0.01,
            hil_factor: 0.1,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: format!("cohort.{field}"),
            message,
        };
        if !(self.slope > 0.0) {
            return Err(bad("slope", "must be positive".into()));
        }
        if !(0.0..=0.05).contains(&self.lapse) {
            return Err(bad("lapse", "must lie in [0, 0.05]".into()));
        }
        if !(self.srt_sd_db >= 0.0) {
            return Err(bad("srt_sd_db", "must be non-negative".into()));
        }
        for k in self.anchors.keys() {
            if NoiseType::parse(k).is_none() {
                return Err(bad("anchors", format!("unknown noise type `{k}`")));
            }
        }
        Ok(())
    }
}

/// Builds `n` listener profiles. Hearing-impaired listeners take the
/// table audiograms cyclically, in order.
pub fn make_cohort(n: usize, kind: ListenerType, seed: u64, grammar: &GrammarSpec, config: &CohortConfig) -> Result<Vec<ListenerProfile>> {
    if n == 0 {
        return Err(Error::invalid("cohort needs at least one listener"));
    }
    config.validate()?;
    let tag = match kind {
        ListenerType::Nhl => "NHL",
        ListenerType::Hil => "HIL",
    };
    let mut r = rng(&[seed, hash_str(tag)]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut devs: Vec<f64> = (0..n).map(|_| normal.sample(&mut r) * config.srt_sd_db).collect();
    let mean = devs.iter().sum::<f64>() / n as f64;
    for d in &mut devs {
        *d -= mean;
    }
    let guess = guess_floors(grammar);
    let profiles = devs
        .iter()
        .enumerate()
        .map(|(i, dev)| {
            let (id, audiogram) = match kind {
                ListenerType::Nhl => (format!("N{}", i + 1), None),
                ListenerType::Hil => {
                    let a = HIL_AUDIOGRAMS[i % HIL_AUDIOGRAMS.len()];
                    (format!("L{}", i + 1), Some(Audiogram::new(a)?))
                }
            };
            Ok(ListenerProfile {
                srt_db: config.anchors.iter().map(|(k, v)| (k.clone(), v + dev)).collect(),
                slope: config.slope,
                lapse: config.lapse,
                guess: guess.clone(),
                keywords: grammar.keyword_slots(),
                audiogram,
                hil_factor: config.hil_factor,
                seed: mix(&[seed, hash_str(&id), r.random::<u64>()]),
                kind,
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(profiles)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub utt_id: String,
    pub slot: usize,
    pub listener_id: String,
    pub correct: bool,
}

/// Listener who hears `utt_id` when each token is presented once.
pub fn assign_listener<'a>(profiles: &'a [ListenerProfile], utt_id: &str, seed: u64) -> &'a ListenerProfile {
    let i = mix(&[seed, hash_str(utt_id)]) % profiles.len() as u64;
    &profiles[i as usize]
}

/// Keyword responses for noisy utterances. With `each_once`, every token
/// goes to one assigned listener; otherwise every listener hears every token.
pub fn simulate_responses(
    profiles: &[ListenerProfile],
    utterances: &[UtteranceRecord],
    grammar: &GrammarSpec,
    each_once: bool,
    seed: u64,
) -> Result<Vec<Response>> {
    let keywords = grammar.keyword_slots();
    let mut out = Vec::new();
    for u in utterances {
        let snr = u
            .snr_db
            .db()
            .ok_or_else(|| Error::invalid(format!("{}: responses need a finite SNR", u.id)))?;
        let listeners: Vec<&ListenerProfile> = if each_once {
            vec![assign_listener(profiles, &u.id, seed)]
        } else {
            profiles.iter().collect()
        };
        for p in listeners {
            for &slot in &keywords {
                out.push(Response {
                    utt_id: u.id.clone(),
                    slot,
                    listener_id: p.id.clone(),
                    correct: simulate_response(p, u.noise_type, snr, slot, &u.id)?,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_responses(path: impl AsRef<Path>, responses: &[Response]) -> Result<()> {
    io::write_csv(path.as_ref(), responses)
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<Vec<Response>> {
    io::read_csv(path.as_ref())
}

pub fn write_profiles(path: impl AsRef<Path>, profiles: &[ListenerProfile]) -> Result<()> {
    io::write_json(path.as_ref(), profiles)
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<ListenerProfile>> {
    let p: Vec<ListenerProfile> = io::read_json(path.as_ref())?;
    for x in &p {
        x.validate()?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar() -> GrammarSpec {
        GrammarSpec::grid()
    }

    fn nhl() -> Vec<ListenerProfile> {
        make_cohort(20, ListenerType::Nhl, 5, &grammar(), &CohortConfig::default()).unwrap()
    }

    #[test]
    fn logistic_midpoint_and_saturation() {
        let mut p = nhl()[0].clone();
        p.guess = vec![1e-12; 6];
        p.lapse = 0.0;
        let srt = p.effective_srt(NoiseType::Ssn).unwrap();
        assert!((p.p_correct(NoiseType::Ssn, srt, 1).unwrap() - 0.5).abs() < 1e-9);
        let mut q = nhl()[0].clone();
        q.lapse = 0.02;
        assert!((q.p_correct(NoiseType::Ssn, 40.0, 3).unwrap() - 0.98).abs() < 1e-6);
    }

    #[test]
    fn slot_average_is_half_at_srt() {
        let g = grammar();
        for p in nhl() {
            let srt = p.effective_srt(NoiseType::Ssn).unwrap();
            let kw = g.keyword_slots();
            let mean: f64 = kw.iter().map(|&s| p.p_correct(NoiseType::Ssn, srt, s).unwrap()).sum::<f64>() / kw.len() as f64;
            assert!((mean - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn cohort_is_deterministic_and_centred() {
        let a = nhl();
        assert_eq!(a, nhl());
        let mean = a.iter().map(|p| p.srt_db["ssn"]).sum::<f64>() / a.len() as f64;
        assert!((mean - NHL_SSN_SRT_DB).abs() < 1e-9);
        assert!(a.iter().all(|p| p.validate().is_ok()));
    }

    #[test]
    fn hil_profiles_take_table_audiograms() {
        let h = make_cohort(9, ListenerType::Hil, 1, &grammar(), &CohortConfig::default()).unwrap();
        for (i, p) in h.iter().enumerate() {
            assert_eq!(p.id, format!("L{}", i + 1));
            assert_eq!(p.audiogram.as_ref().unwrap().thresholds, HIL_AUDIOGRAMS[i]);
        }
        // L2 (57.5 dB HL at 2–4 kHz) is shifted more than L9 (17.5 dB HL)
        let off = |p: &ListenerProfile| p.effective_srt(NoiseType::Ssn).unwrap() - p.srt_db["ssn"];
        assert!((off(&h[1]) - 5.75).abs() < 1e-9);
        assert!((off(&h[8]) - 1.75).abs() < 1e-9);
    }

    #[test]
    fn responses_reproducible_and_monotone() {
        let p = &nhl()[3];
        let a = simulate_response(p, NoiseType::Ssn, -9.0, 3, "u1").unwrap();
        assert_eq!(a, simulate_response(p, NoiseType::Ssn, -9.0, 3, "u1").unwrap());
        let g = grammar();
        let mut prev = 0.0;
        for snr in (-40..=40).step_by(2) {
            let hits = (0..600)
                .filter(|i| simulate_response(p, NoiseType::Ssn, snr as f64, 3, &format!("t{i}")).unwrap())
                .count() as f64
                / 600.0;
            // allow sampling noise between neighbouring points
            assert!(hits >= prev - 0.07, "{snr}: {hits} < {prev}");
            prev = prev.max(hits);
        }
        let floor = (0..2000)
            .filter(|i| simulate_response(p, NoiseType::Ssn, -40.0, 3, &format!("f{i}")).unwrap())
            .count() as f64
            / 2000.0;
        let gfl = 1.0 / g.vocab_size(3) as f64;
        let ci = 1.96 * (gfl * (1.0 - gfl) / 2000.0).sqrt();
        assert!((floor - gfl).abs() <= ci + 1e-3, "{floor} vs {gfl}");
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = nhl()[0].clone();
        p.lapse = 0.2;
        assert!(p.validate().is_err());
        let mut p = nhl()[0].clone();
        p.slope = 0.0;
        assert!(p.validate().is_err());
        let mut p = nhl()[0].clone();
        p.kind = ListenerType::Hil;
        assert!(p.validate().is_err());
        assert!(make_cohort(0, ListenerType::Nhl, 1, &grammar(), &CohortConfig::default()).is_err());
    }
}
