//! Token-budget reduction of dialogue input: seeded random token drop.
//! Stands in for importance-aware compressors behind the same interface;
//! the subject under test is the pipeline's robustness to missing input.

use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueSession, DialogueTurn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Keep probability per token, in (0, 1].
    pub ratio: f64,
    pub seed: u64,
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "compression ratio must be in (0, 1], got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

// Deterministic generator, stable across platforms and releases: the
// per-turn stream key is FNV-1a over (seed, session_id, turn_index) and
// the stream itself is SplitMix64.
struct TurnRng {
    state: u64,
}

impl TurnRng {
    fn new(seed: u64, session_id: &str, turn_index: usize) -> Self {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut mix = |bytes: &[u8]| {
            for b in bytes {
                hash ^= u64::from(*b);
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        mix(&seed.to_le_bytes());
        mix(session_id.as_bytes());
        mix(&(turn_index as u64).to_le_bytes());
        Self { state: hash }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Drop each token independently with probability `1 - ratio`, keeping at
/// least one token per turn. Kept tokens stay in order; turn structure,
/// speakers and timestamps are untouched. Deterministic in
/// (seed, session_id, turn_index).
pub fn compress_session(
    session: &DialogueSession,
    config: &CompressionConfig,
) -> Result<DialogueSession> {
    config.validate()?;
    if config.ratio == 1.0 {
        return Ok(session.clone());
    }
    let turns = session
        .turns
        .iter()
        .map(|turn| {
            let tokens: Vec<&str> = turn.text.split_whitespace().collect();
            let mut rng = TurnRng::new(config.seed, &session.session_id, turn.turn_index);
            let mut kept: Vec<&str> = tokens
                .iter()
                .filter(|_| rng.next_f64() < config.ratio)
                .copied()
                .collect();
            if kept.is_empty() && !tokens.is_empty() {
                kept.push(tokens[0]);
            }
            DialogueTurn {
                turn_index: turn.turn_index,
                speaker: turn.speaker,
                text: kept.join(" "),
                timestamp: turn.timestamp.clone(),
            }
        })
        .collect();
    Ok(DialogueSession {
        session_id: session.session_id.clone(),
        turns,
    })
}
