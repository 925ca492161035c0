//! Deterministic hash-based backend.
//!
//! Logits are a hash of the seed, every attended `(position, id)` pair, the
//! target position and the candidate id, mapped to `[0, 1)`. Masked
//! positions enter the hash as the mask id, so hiding one more token or
//! swapping two visible tokens changes the distribution. Padding
//! (attention mask 0) never enters the hash, which makes results
//! independent of how requests are packed.

use crate::backend::{log_softmax, Backend, BatchInput, Capabilities, Target};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub struct Fnv64 {
    state: u64,
}

impl Fnv64 {
    const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv64 {
            state: Self::OFFSET_BASIS,
        }
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(Self::PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps a hash to `[0, 1)` using its top 53 bits.
fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceBackendConfig {
    pub vocab_size: usize,
    pub seed: u64,
    pub max_sequence_length: usize,
    pub max_batch: usize,
    pub bos_id: Option<TokenId>,
}

impl ReferenceBackendConfig {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        ReferenceBackendConfig {
            vocab_size,
            seed,
            max_sequence_length: 512,
            max_batch: 4096,
            bos_id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    config: ReferenceBackendConfig,
}

impl ReferenceBackend {
    pub fn new(config: ReferenceBackendConfig) -> Result<Self> {
        if config.vocab_size < 2 {
            return Err(Error::Config("reference vocab_size must be at least 2".into()));
        }
        if config.max_batch == 0 || config.max_sequence_length == 0 {
            return Err(Error::Config("reference limits must be positive".into()));
        }
        if let Some(bos) = config.bos_id {
            if bos as usize >= config.vocab_size {
                return Err(Error::Config(format!("bos id {bos} outside vocabulary")));
            }
        }
        Ok(ReferenceBackend { config })
    }

    pub fn config(&self) -> &ReferenceBackendConfig {
        &self.config
    }

    fn context_hash(&self, ids: &[TokenId], mask: &[u8], visible_end: usize, target: usize) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.config.seed);
        for (p, (&id, &m)) in ids.iter().zip(mask).enumerate().take(visible_end) {
            if m != 0 {
                h.write_u64(p as u64);
                h.write(&id.to_le_bytes());
            }
        }
        h.write_u64(u64::MAX);
        h.write_u64(target as u64);
        h.finish()
    }

    fn distribution(&self, context: u64) -> Vec<f64> {
        let mut logits: Vec<f64> = (0..self.config.vocab_size as u64)
            .map(|v| unit_interval(splitmix64(context ^ splitmix64(v))))
            .collect();
        log_softmax(&mut logits);
        logits
    }

    fn check(&self, input: &BatchInput, targets: &[Target]) -> Result<()> {
        input.validate(targets, self.config.vocab_size)?;
        if input.width() > self.config.max_sequence_length {
            return Err(Error::SequenceTooLong {
                len: input.width(),
                max: self.config.max_sequence_length,
            });
        }
        Ok(())
    }
}

impl Backend for ReferenceBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            masked: true,
            causal: true,
        }
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_batch(&self) -> usize {
        self.config.max_batch
    }

    fn max_sequence_length(&self) -> usize {
        self.config.max_sequence_length
    }

    fn concurrent(&self) -> bool {
        true
    }

    fn bos_id(&self) -> Option<TokenId> {
        self.config.bos_id
    }

    fn mlm_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        self.check(input, targets)?;
        Ok(targets
            .iter()
            .map(|t| {
                let row = &input.ids[t.row];
                let h = self.context_hash(row, &input.attention_mask[t.row], row.len(), t.position);
                self.distribution(h)
            })
            .collect())
    }

    fn causal_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        self.check(input, targets)?;
        Ok(targets
            .iter()
            .map(|t| {
                let row = &input.ids[t.row];
                let h = self.context_hash(row, &input.attention_mask[t.row], t.position + 1, t.position);
                self.distribution(h)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::logsumexp;

    fn backend() -> ReferenceBackend {
        ReferenceBackend::new(ReferenceBackendConfig::new(64, 7)).unwrap()
    }

    fn single(ids: Vec<TokenId>) -> BatchInput {
        BatchInput::padded(vec![ids], 0)
    }

    fn at(position: usize) -> [Target; 1] {
        [Target { row: 0, position }]
    }

    #[test]
    fn fnv_known_vectors() {
        let mut h = Fnv64::new();
        assert_eq!(h.finish(), 0xcbf29ce484222325);
        h.write(b"a");
        assert_eq!(h.finish(), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn deterministic_and_normalized() {
        let b = backend();
        let input = single(vec![1, 10, 3, 12, 2]);
        let a = b.mlm_logprobs(&input, &at(2)).unwrap();
        let c = b.mlm_logprobs(&input, &at(2)).unwrap();
        assert_eq!(a, c);
        assert!(logsumexp(&a[0]).abs() < 1e-6);
        let causal = b.causal_logprobs(&input, &at(3)).unwrap();
        assert!(logsumexp(&causal[0]).abs() < 1e-6);
    }

    #[test]
    fn extra_mask_changes_output() {
        let b = backend();
        let one = b.mlm_logprobs(&single(vec![1, 10, 3, 12, 2]), &at(2)).unwrap();
        let two = b.mlm_logprobs(&single(vec![1, 10, 3, 3, 2]), &at(2)).unwrap();
        assert_ne!(one, two);
    }

    #[test]
    fn swapping_visible_tokens_changes_output() {
        let b = backend();
        let a = b.mlm_logprobs(&single(vec![1, 10, 3, 12, 2]), &at(2)).unwrap();
        let c = b.mlm_logprobs(&single(vec![1, 12, 3, 10, 2]), &at(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn seed_changes_output() {
        let a = backend().mlm_logprobs(&single(vec![1, 3, 2]), &at(1)).unwrap();
        let other = ReferenceBackend::new(ReferenceBackendConfig::new(64, 8)).unwrap();
        assert_ne!(a, other.mlm_logprobs(&single(vec![1, 3, 2]), &at(1)).unwrap());
    }

    #[test]
    fn padding_is_invisible() {
        let b = backend();
        let alone = b.mlm_logprobs(&single(vec![1, 10, 3]), &at(2)).unwrap();
        let padded = BatchInput::padded(vec![vec![1, 10, 3], vec![1, 5, 6, 7, 8, 2]], 0);
        let packed = b.mlm_logprobs(&padded, &at(2)).unwrap();
        assert_eq!(alone, packed);
    }

    #[test]
    fn causal_ignores_future() {
        let b = backend();
        let short = b.causal_logprobs(&single(vec![4, 10, 11]), &at(1)).unwrap();
        let long = b.causal_logprobs(&single(vec![4, 10, 20, 21]), &at(1)).unwrap();
        assert_eq!(short, long);
    }

    #[test]
    fn rejects_bad_input() {
        let b = backend();
        assert!(matches!(
            b.mlm_logprobs(&single(vec![1, 64]), &at(0)),
            Err(Error::VocabularyMismatch(_))
        ));
        assert!(ReferenceBackend::new(ReferenceBackendConfig::new(1, 0)).is_err());
        let mut cfg = ReferenceBackendConfig::new(64, 0);
        cfg.max_sequence_length = 2;
        let small = ReferenceBackend::new(cfg).unwrap();
        assert!(matches!(
            small.mlm_logprobs(&single(vec![1, 2, 3]), &at(0)),
            Err(Error::SequenceTooLong { .. })
        ));
    }
}
