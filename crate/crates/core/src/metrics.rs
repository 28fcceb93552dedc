//! Plug-in information measures over greedy dialog logs.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::arena::Transcript;
use crate::error::{Error, Result};
use crate::neural::Mode;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRecord {
    pub questions: Vec<u16>,
    pub answers: Vec<u16>,
    pub predictions: (u16, u16),
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalLog {
    pub mode: Mode,
    pub rounds: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalLog {
    pub fn new(mode: Mode, rounds: usize) -> Self {
        Self { mode, rounds, records: Vec::new() }
    }

    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        if record.questions.len() != self.rounds || record.answers.len() != self.rounds {
            return Err(Error::LengthMismatch(record.questions.len().max(record.answers.len()), self.rounds));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn from_transcripts(transcripts: &[Transcript], mode: Mode) -> Result<Self> {
        let rounds = transcripts.first().map_or(0, |t| t.tokens.len());
        let mut log = Self::new(mode, rounds);
        for t in transcripts {
            log.push(EvalRecord {
                questions: t.tokens.iter().map(|p| p.0).collect(),
                answers: t.tokens.iter().map(|p| p.1).collect(),
                predictions: t.predictions,
                correct: t.correct,
            })?;
        }
        Ok(log)
    }

    fn checked(&self) -> Result<&[EvalRecord]> {
        if self.mode != Mode::Greedy {
            return Err(Error::TrainingModeLog);
        }
        if self.records.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(&self.records)
    }

    pub fn accuracy(&self) -> Result<f64> {
        let r = self.checked()?;
        Ok(r.iter().filter(|e| e.correct).count() as f64 / r.len() as f64)
    }
}

/// Base of the logarithm results are reported in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    fn scale(self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

fn counts<T: Hash + Eq + Clone>(xs: &[T]) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x.clone()).or_insert(0) += 1;
    }
    m
}

/// Shannon entropy (nats) of the empirical distribution of `xs`.
pub fn empirical_entropy<T: Hash + Eq + Clone>(xs: &[T]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = xs.len() as f64;
    let h: f64 = counts(xs)
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// Plug-in mutual information (nats) between paired symbol sequences.
pub fn empirical_mi<X, Y>(xs: &[X], ys: &[Y]) -> Result<f64>
where
    X: Hash + Eq + Clone,
    Y: Hash + Eq + Clone,
{
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = xs.len() as f64;
    let px = counts(xs);
    let py = counts(ys);
    let mut joint: HashMap<(&X, &Y), usize> = HashMap::new();
    for (x, y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let c = c as f64;
            c / n * (c * n / (px[x] as f64 * py[y] as f64)).ln()
        })
        .sum();
    Ok(mi.max(0.0))
}

fn round_guess_average(log: &EvalLog, pick: impl Fn(&EvalRecord, usize) -> u16) -> Result<f64> {
    let records = log.checked()?;
    let guesses: [Vec<u16>; 2] =
        [records.iter().map(|r| r.predictions.0).collect(), records.iter().map(|r| r.predictions.1).collect()];
    let mut total = 0.0;
    for t in 0..log.rounds {
        let msg: Vec<u16> = records.iter().map(|r| pick(r, t)).collect();
        for g in &guesses {
            total += empirical_mi(&msg, g)?;
        }
    }
    Ok(total / (2 * log.rounds) as f64)
}

/// Mean over rounds `t` and guesses `i` of `MI(a_t, ŵ_i)`.
pub fn instantaneous_coordination(log: &EvalLog) -> Result<f64> {
    round_guess_average(log, |r, t| r.answers[t])
}

/// Mean over guesses of `MI((a_1..a_T), ŵ_i)`.
pub fn joint_instantaneous_coordination(log: &EvalLog) -> Result<f64> {
    let records = log.checked()?;
    let msg: Vec<&[u16]> = records.iter().map(|r| r.answers.as_slice()).collect();
    let g1: Vec<u16> = records.iter().map(|r| r.predictions.0).collect();
    let g2: Vec<u16> = records.iter().map(|r| r.predictions.1).collect();
    Ok((empirical_mi(&msg, &g1)? + empirical_mi(&msg, &g2)?) / 2.0)
}

/// Mean over rounds `t` and guesses `i` of `MI(q_t, ŵ_i)`.
pub fn speaker_consistency(log: &EvalLog) -> Result<f64> {
    round_guess_average(log, |r, t| r.questions[t])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Speaker {
    Q,
    A,
}

/// Entropy of the full outgoing token tuple of one agent.
pub fn message_entropy(log: &EvalLog, speaker: Speaker) -> Result<f64> {
    let records = log.checked()?;
    let tuples: Vec<&[u16]> = records
        .iter()
        .map(|r| match speaker {
            Speaker::Q => r.questions.as_slice(),
            Speaker::A => r.answers.as_slice(),
        })
        .collect();
    empirical_entropy(&tuples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub ic: f64,
    pub sc: f64,
    /// Entropy of the A-bot's answer tuples.
    pub h_a: f64,
    /// Entropy of the Q-bot's question tuples.
    pub h_q: f64,
    pub ic_joint: f64,
    pub base: LogBase,
}

pub fn metrics_report(log: &EvalLog, base: LogBase) -> Result<MetricsReport> {
    Ok(MetricsReport {
        accuracy: log.accuracy()?,
        ic: base.scale(instantaneous_coordination(log)?),
        sc: base.scale(speaker_consistency(log)?),
        h_a: base.scale(message_entropy(log, Speaker::A)?),
        h_q: base.scale(message_entropy(log, Speaker::Q)?),
        ic_joint: base.scale(joint_instantaneous_coordination(log)?),
        base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(q: [u16; 2], a: [u16; 2], p: (u16, u16)) -> EvalRecord {
        EvalRecord { questions: q.to_vec(), answers: a.to_vec(), predictions: p, correct: false }
    }

    #[test]
    fn mi_basics() {
        let x: Vec<u8> = (0..400).map(|i| (i % 4) as u8).collect();
        assert!((empirical_mi(&x, &x).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(empirical_mi(&[1, 1, 1], &[2, 2, 2]).unwrap(), 0.0);
        let a = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert!((empirical_mi(&a, &a).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(empirical_mi(&[1], &[1, 2]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(empirical_mi::<u8, u8>(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn mi_matches_table_oracle() {
        // Counts of a 3x3 table; oracle summed in closed form below.
        let table = [[5usize, 1, 0], [2, 7, 3], [0, 4, 9]];
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, row) in table.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                xs.extend(std::iter::repeat_n(i, c));
                ys.extend(std::iter::repeat_n(j, c));
            }
        }
        let n: f64 = 31.0;
        let rows = [6.0, 12.0, 13.0];
        let cols = [7.0, 12.0, 12.0];
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let c = table[i][j] as f64;
                if c > 0.0 {
                    oracle += c / n * (c * n / (rows[i] * cols[j])).ln();
                }
            }
        }
        assert!((empirical_mi(&xs, &ys).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn ic_on_constructed_log() {
        let mut log = EvalLog::new(Mode::Greedy, 2);
        for a1 in 0..4u16 {
            for a2 in 0..4u16 {
                log.push(rec([0, 0], [a1, a2], (a1, a2))).unwrap();
            }
        }
        let ic = instantaneous_coordination(&log).unwrap();
        assert!((ic - 4f64.ln() / 2.0).abs() < 1e-12);
        assert_eq!(speaker_consistency(&log).unwrap(), 0.0);
        assert!((message_entropy(&log, Speaker::A).unwrap() - 16f64.ln()).abs() < 1e-12);
        assert_eq!(message_entropy(&log, Speaker::Q).unwrap(), 0.0);
    }

    #[test]
    fn sc_on_constructed_log() {
        let mut log = EvalLog::new(Mode::Greedy, 2);
        for q1 in 0..3u16 {
            for q2 in 0..3u16 {
                for w2 in 0..4u16 {
                    log.push(rec([q1, q2], [1, 1], (q1, w2))).unwrap();
                }
            }
        }
        assert!((speaker_consistency(&log).unwrap() - 3f64.ln() / 4.0).abs() < 1e-12);
        assert_eq!(instantaneous_coordination(&log).unwrap(), 0.0);
    }

    #[test]
    fn training_logs_are_rejected() {
        let mut log = EvalLog::new(Mode::Train, 2);
        log.push(rec([0, 0], [0, 0], (0, 0))).unwrap();
        assert!(matches!(instantaneous_coordination(&log), Err(Error::TrainingModeLog)));
        assert!(matches!(EvalLog::new(Mode::Greedy, 2).accuracy(), Err(Error::EmptyInput)));
    }

    #[test]
    fn bits_rescale_nats() {
        let mut log = EvalLog::new(Mode::Greedy, 2);
        for a in 0..4u16 {
            log.push(rec([0, 0], [a, a], (a, a))).unwrap();
        }
        let nats = metrics_report(&log, LogBase::Nats).unwrap();
        let bits = metrics_report(&log, LogBase::Bits).unwrap();
        assert!((bits.ic - 2.0).abs() < 1e-12);
        assert!((nats.ic - 4f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mi_is_bounded_by_marginal_entropies(pairs in prop::collection::vec((0u8..5, 0u8..4), 1..200)) {
            let (xs, ys): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let mi = empirical_mi(&xs, &ys).unwrap();
            let hx = empirical_entropy(&xs).unwrap();
            let hy = empirical_entropy(&ys).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= hx.min(hy) + 1e-12);
            prop_assert!((empirical_mi(&xs, &xs).unwrap() - hx).abs() < 1e-12);
        }

        #[test]
        fn mi_is_invariant_to_relabeling_and_order(pairs in prop::collection::vec((0u8..5, 0u8..4), 1..200), shift in 1u8..5) {
            let (xs, ys): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let base = empirical_mi(&xs, &ys).unwrap();
            let relabeled: Vec<u8> = xs.iter().map(|x| (x + shift) % 5).collect();
            prop_assert!((empirical_mi(&relabeled, &ys).unwrap() - base).abs() < 1e-12);
            let (rx, ry): (Vec<u8>, Vec<u8>) = pairs.iter().rev().copied().unzip();
            prop_assert!((empirical_mi(&rx, &ry).unwrap() - base).abs() < 1e-12);
        }
    }
}
