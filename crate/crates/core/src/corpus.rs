//! Token corpora: one prompt per line, space-separated decimal token ids.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dist::TokenId;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("repetitiveness {0} outside [0, 1]")]
    Repetitiveness(f64),
    #[error("vocabulary must have at least 2 tokens")]
    Vocab,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
    pub source: Option<PathBuf>,
}

impl Corpus {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CorpusError> {
        let mut sequences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| tok.parse::<TokenId>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CorpusError::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            sequences.push(seq);
        }
        Ok(Self { sequences, source: None })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut corpus = Self::parse(&text, &path.display().to_string())?;
        corpus.source = Some(path.to_path_buf());
        Ok(corpus)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            let line = seq.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// First out-of-range token, as `(prompt index, token)`.
    pub fn first_out_of_range(&self, vocab_size: usize) -> Option<(usize, TokenId)> {
        self.sequences.iter().enumerate().find_map(|(i, seq)| {
            seq.iter().find(|&&t| t as usize >= vocab_size).map(|&t| (i, t))
        })
    }
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub vocab: usize,
    pub count: usize,
    pub length: usize,
    /// Probability that the next chunk of a prompt is a verbatim copy of the
    /// prompt's phrase rather than a single random token.
    pub repetitiveness: f64,
    /// Token never emitted (typically eos).
    pub avoid: Option<TokenId>,
}

pub const PHRASE_LEN: std::ops::RangeInclusive<usize> = 3..=6;

/// Deterministic synthetic prompts. Each prompt owns one random phrase; it is
/// built chunk by chunk, a chunk being the whole phrase with probability
/// `repetitiveness` and a single uniform token otherwise. At 0 prompts are iid
/// uniform tokens; at 1 each prompt is its phrase repeated.
pub fn generate(seed: u64, spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    if !(0.0..=1.0).contains(&spec.repetitiveness) {
        return Err(CorpusError::Repetitiveness(spec.repetitiveness));
    }
    let alphabet: Vec<TokenId> = (0..spec.vocab as TokenId)
        .filter(|&t| Some(t) != spec.avoid)
        .collect();
    if alphabet.len() < 2 {
        return Err(CorpusError::Vocab);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| alphabet[rng.gen_range(0..alphabet.len())];
    let mut sequences = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let phrase_len = rng.gen_range(PHRASE_LEN);
        let phrase: Vec<TokenId> = (0..phrase_len).map(|_| draw(&mut rng)).collect();
        let mut seq = Vec::with_capacity(spec.length + phrase_len);
        while seq.len() < spec.length {
            if rng.gen_bool(spec.repetitiveness) {
                seq.extend_from_slice(&phrase);
            } else {
                seq.push(draw(&mut rng));
            }
        }
        seq.truncate(spec.length);
        sequences.push(seq);
    }
    Ok(Corpus { sequences, source: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn spec(r: f64) -> CorpusSpec {
        CorpusSpec { vocab: 64, count: 40, length: 48, repetitiveness: r, avoid: None }
    }

    #[test]
    fn parse_round_trip() {
        let c = Corpus::parse("1 2 3\n\n# comment\n4  5\n", "t").unwrap();
        assert_eq!(c.sequences, vec![vec![1, 2, 3], vec![4, 5]]);
        assert_eq!(c.to_text(), "1 2 3\n4 5\n");
        assert!(matches!(Corpus::parse("1 x", "t"), Err(CorpusError::Parse { line: 1, .. })));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(11, &spec(0.5)).unwrap().to_text();
        let b = generate(11, &spec(0.5)).unwrap().to_text();
        assert_eq!(a, b);
        assert_ne!(a, generate(12, &spec(0.5)).unwrap().to_text());
    }

    #[test]
    fn full_repetitiveness_repeats_one_phrase() {
        for seq in generate(3, &spec(1.0)).unwrap().sequences {
            let period = (1..=*PHRASE_LEN.end())
                .find(|&p| seq.iter().enumerate().all(|(i, &t)| t == seq[i % p]));
            assert!(period.is_some(), "prompt is not a repeated phrase: {seq:?}");
        }
    }

    #[test]
    fn zero_repetitiveness_has_chance_level_bigram_repeats() {
        // expected colliding bigram pairs per prompt: C(n, 2) / V^2 with n = 47
        let s = CorpusSpec { count: 400, ..spec(0.0) };
        let corpus = generate(5, &s).unwrap();
        let n = (s.length - 1) as f64;
        let expected = n * (n - 1.0) / 2.0 / (s.vocab * s.vocab) as f64 * s.count as f64;
        let mut observed = 0usize;
        for seq in &corpus.sequences {
            let mut seen: HashMap<(TokenId, TokenId), usize> = HashMap::new();
            for w in seq.windows(2) {
                *seen.entry((w[0], w[1])).or_default() += 1;
            }
            observed += seen.values().map(|&c| c * (c - 1) / 2).sum::<usize>();
        }
        let sd = expected.sqrt();
        assert!(
            (observed as f64 - expected).abs() < 4.0 * sd + 1.0,
            "observed {observed}, expected {expected:.1}"
        );
        let repetitive = generate(5, &CorpusSpec { count: 400, ..spec(0.7) }).unwrap();
        let mut rep_observed = 0usize;
        for seq in &repetitive.sequences {
            let mut seen: HashMap<(TokenId, TokenId), usize> = HashMap::new();
            for w in seq.windows(2) {
                *seen.entry((w[0], w[1])).or_default() += 1;
            }
            rep_observed += seen.values().map(|&c| c * (c - 1) / 2).sum::<usize>();
        }
        assert!(rep_observed as f64 > 10.0 * expected);
    }

    #[test]
    fn avoided_token_never_appears() {
        let c = generate(1, &CorpusSpec { avoid: Some(0), ..spec(0.3) }).unwrap();
        assert!(c.sequences.iter().flatten().all(|&t| t != 0));
        assert!(matches!(
            generate(1, &CorpusSpec { repetitiveness: 1.5, ..spec(0.3) }),
            Err(CorpusError::Repetitiveness(_))
        ));
    }
}
