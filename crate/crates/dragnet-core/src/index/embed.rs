//! Text to unit vector.
//!
//! The default embedder is a signed hashed bag of words: every token hashes
//! to a bucket and a sign, counts accumulate, the result is L2-normalized.
//! It has no semantics, but it is fast, dependency-free, and fully
//! deterministic, which is what the tests need. The external mode calls out
//! to a real embedding service for live deployments.

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::corpus::word_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderMode {
    #[default]
    HashedBow,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub mode: EmbedderMode,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { mode: EmbedderMode::HashedBow, dim: 256, endpoint: None }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.dim < 8 {
            return Err(IndexError::ConfigInvalid(format!(
                "embedder dim {} is below the minimum of 8",
                self.dim
            )));
        }
        match (self.mode, &self.endpoint) {
            (EmbedderMode::External, None) => Err(IndexError::ConfigInvalid(
                "external embedder requires an endpoint".into(),
            )),
            (EmbedderMode::HashedBow, Some(_)) => Err(IndexError::ConfigInvalid(
                "endpoint is only valid with the external embedder".into(),
            )),
            _ => Ok(()),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// The low bits of raw fnv evolve through an 8-bit affine chain over the
// input bytes, which correlates buckets across tokens that share suffixes
// once dim is a power of two. A finalizer pass restores avalanche before
// bucket and sign extraction.
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn token_hash(token: &str) -> u64 {
    finalize(fnv1a(token.as_bytes()))
}

/// Embeds one text into a unit vector. Token-free text (or total sign
/// cancellation, which needs an adversarial vocabulary) yields `EmptyText`.
pub fn embed(text: &str, cfg: &EmbedderConfig) -> Result<Vec<f64>, IndexError> {
    cfg.validate()?;
    match cfg.mode {
        EmbedderMode::HashedBow => hashed_bow(text, cfg.dim),
        EmbedderMode::External => {
            let mut batch = external_batch(&[text], cfg)?;
            Ok(batch.pop().expect("one vector per input"))
        }
    }
}

pub fn embed_batch(texts: &[&str], cfg: &EmbedderConfig) -> Result<Vec<Vec<f64>>, IndexError> {
    cfg.validate()?;
    match cfg.mode {
        EmbedderMode::HashedBow => texts.iter().map(|t| hashed_bow(t, cfg.dim)).collect(),
        EmbedderMode::External => {
            let mut out = Vec::with_capacity(texts.len());
            for group in texts.chunks(64) {
                out.extend(external_batch(group, cfg)?);
            }
            Ok(out)
        }
    }
}

fn hashed_bow(text: &str, dim: usize) -> Result<Vec<f64>, IndexError> {
    let tokens = word_tokens(text);
    if tokens.is_empty() {
        return Err(IndexError::EmptyText);
    }
    let mut v = vec![0f64; dim];
    for token in &tokens {
        let h = token_hash(token);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    normalize(&mut v)?;
    Ok(v)
}

fn normalize(v: &mut [f64]) -> Result<(), IndexError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(IndexError::EmptyText);
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

fn external_batch(texts: &[&str], cfg: &EmbedderConfig) -> Result<Vec<Vec<f64>>, IndexError> {
    let endpoint = cfg.endpoint.as_deref().expect("validated");
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(endpoint)
        .json(&EmbedRequest { input: texts })
        .send()
        .map_err(|e| IndexError::EmbedderUnavailable(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(IndexError::EmbedderUnavailable(format!(
            "endpoint returned status {}",
            resp.status()
        )));
    }
    let body: EmbedResponse = resp
        .json()
        .map_err(|e| IndexError::EmbedderUnavailable(e.to_string()))?;
    if body.embeddings.len() != texts.len() {
        return Err(IndexError::EmbedderUnavailable(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            body.embeddings.len()
        )));
    }
    let mut out = Vec::with_capacity(body.embeddings.len());
    for mut v in body.embeddings {
        if v.len() != cfg.dim {
            return Err(IndexError::EmbedderUnavailable(format!(
                "expected dim {}, got {}",
                cfg.dim,
                v.len()
            )));
        }
        normalize(&mut v)?;
        out.push(v);
    }
    Ok(out)
}

pub fn cosine(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cfg() -> EmbedderConfig {
        EmbedderConfig::default()
    }

    #[test]
    fn unit_norm_within_tolerance() {
        let v = embed("the kunming flower exhibition of 2023", &cfg()).unwrap();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
    }

    #[test]
    fn self_cosine_is_one() {
        let v = embed("tokens in a bag", &cfg()).unwrap();
        let dot: f64 = v.iter().map(|x| x * x).sum();
        assert!((dot - 1.0).abs() < 1e-9);
    }

    #[test]
    fn word_order_does_not_matter() {
        let a = embed("alpha beta gamma delta", &cfg()).unwrap();
        let b = embed("delta gamma beta alpha", &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn case_folds_before_hashing() {
        let a = embed("Alpha BETA", &cfg()).unwrap();
        let b = embed("alpha beta", &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn token_free_text_is_an_error() {
        assert!(matches!(embed("...", &cfg()), Err(IndexError::EmptyText)));
        assert!(matches!(embed("", &cfg()), Err(IndexError::EmptyText)));
    }

    #[test]
    fn dim_below_floor_rejected() {
        let bad = EmbedderConfig { dim: 4, ..EmbedderConfig::default() };
        assert!(matches!(embed("x", &bad), Err(IndexError::ConfigInvalid(_))));
    }

    #[test]
    fn disjoint_vocabularies_stay_near_orthogonal() {
        // 100 seeded pairs of texts with zero shared tokens; the observed
        // max |cosine| at dim 256 has headroom under the 0.25 ceiling
        let mut rng = StdRng::seed_from_u64(20_240_817);
        let mut max_abs: f64 = 0.0;
        for pair in 0..100 {
            let len_a: usize = rng.gen_range(30..=80);
            let len_b: usize = rng.gen_range(30..=80);
            let a_text: Vec<String> =
                (0..len_a).map(|i| format!("left{pair:02}v{i:03}")).collect();
            let b_text: Vec<String> =
                (0..len_b).map(|i| format!("right{pair:02}v{i:03}")).collect();
            let a = embed(&a_text.join(" "), &cfg()).unwrap();
            let b = embed(&b_text.join(" "), &cfg()).unwrap();
            let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            max_abs = max_abs.max(cos.abs());
        }
        assert!(max_abs < 0.25, "observed max |cosine| {max_abs}");
    }
}
