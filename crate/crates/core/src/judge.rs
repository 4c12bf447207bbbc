//! Retrieval-conditioned judging, prompt assembly and Best-of-N selection.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{cosine, EncoderBackend};
use crate::error::{Error, Result};
use crate::gallery::{Exemplar, Gallery};
use crate::raster::RgbImage;

/// Placeholder token standing for one attached image in the prompt text.
pub const IMAGE_TOKEN: &str = "<start_of_image>";

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

/// Text plus the images its placeholders refer to, in order. The last image is the query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JudgePrompt {
    pub text: String,
    pub images: Vec<RgbImage>,
}

impl JudgePrompt {
    /// SHA-256 over the text and every image's content, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.text.len() as u64).to_le_bytes());
        h.update(self.text.as_bytes());
        for img in &self.images {
            let bytes = img.content_bytes();
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        hex::encode(h.finalize())
    }
}

fn instruction(class: &str) -> String {
    format!(
        "You are an expert in recognizing objects from satellite images. \
         Your task is to score a query image patch from 1 to 5. \
         You need to specify if {class} appears in the image. \
         All images are satellite images. \
         Return only the numerical score (1, 2, 3, 4, or 5)."
    )
}

fn scoring_guide(class: &str) -> [String; 5] {
    [
        format!(
            "5: There is definitely a {class} in the last image. \
             The object's shape, shadow, and features are clearly visible from above."
        ),
        format!("4: Very likely that the image contains a {class}. Features are mostly clear."),
        format!(
            "3: Probably the image contains a {class}, but visibility or details are ambiguous."
        ),
        format!("2: Unlikely that a {class} appears in the image."),
        format!("1: Definitely does not contain a {class}."),
    ]
}

/// Builds the scoring prompt: instruction, scoring guide, scored examples, then the query.
///
/// Every context exemplar must carry an image.
pub fn assemble_prompt(
    class: &str,
    context: &[&Exemplar],
    query: &RgbImage,
) -> Result<JudgePrompt> {
    let mut text = instruction(class);
    text.push_str("\n\n");
    for line in scoring_guide(class) {
        text.push_str(&line);
        text.push('\n');
    }
    text.push('\n');
    let mut images = Vec::with_capacity(context.len() + 1);
    for (i, ex) in context.iter().enumerate() {
        let img = ex.image.as_ref().ok_or_else(|| {
            Error::Contract(format!("exemplar {} has no image for the prompt", ex.id))
        })?;
        images.push(img.clone());
        text.push_str(&format!(
            "Example ({}): {IMAGE_TOKEN} Score = {}\n",
            i + 1,
            ex.display_score()
        ));
    }
    text.push_str(&format!(
        "Example ({}): {IMAGE_TOKEN} Score = ?\n",
        context.len() + 1
    ));
    images.push(query.clone());
    Ok(JudgePrompt { text, images })
}

/// Scores a prompt on the 1..=5 scale.
pub trait JudgeBackend: Send + Sync {
    fn score(&self, prompt: &JudgePrompt) -> Result<u8>;
}

/// Extracts the first integer token of a reply and checks it against the scale.
pub fn parse_score_reply(reply: &str) -> Result<u8> {
    let token = reply
        .split(|c: char| !c.is_ascii_digit() && c != '-')
        .find(|t| !t.is_empty() && t.chars().any(|c| c.is_ascii_digit()))
        .ok_or_else(|| Error::Protocol(format!("no integer in judge reply {reply:?}")))?;
    let v: i64 = token
        .parse()
        .map_err(|_| Error::Protocol(format!("bad integer {token:?} in judge reply")))?;
    check_score(v)
}

fn check_score(v: i64) -> Result<u8> {
    if (MIN_SCORE as i64..=MAX_SCORE as i64).contains(&v) {
        Ok(v as u8)
    } else {
        Err(Error::Protocol(format!("judge score {v} outside 1..=5")))
    }
}

/// Deterministic stand-in judges.
#[derive(Clone)]
pub enum MockJudge {
    /// Always the same score.
    Pinned(u8),
    /// Looks the prompt hash up in a table, falling back to `default`.
    Fixtures {
        table: HashMap<String, u8>,
        default: u8,
    },
    /// Scores `accept` for a pseudo-random `accept_fraction` of prompts (by hash), else `reject`.
    HashFraction {
        accept_fraction: f64,
        accept: u8,
        reject: u8,
    },
    /// `round(1 + 4 * max(0, best cosine between query and any example image))`.
    CosineRule(Arc<dyn EncoderBackend>),
}

impl std::fmt::Debug for MockJudge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockJudge::Pinned(s) => write!(f, "Pinned({s})"),
            MockJudge::Fixtures { table, default } => {
                write!(f, "Fixtures({} entries, default {default})", table.len())
            }
            MockJudge::HashFraction {
                accept_fraction, ..
            } => write!(f, "HashFraction({accept_fraction})"),
            MockJudge::CosineRule(_) => write!(f, "CosineRule"),
        }
    }
}

#[derive(Deserialize)]
struct FixtureLine {
    query_hash: String,
    score: i64,
}

impl MockJudge {
    /// Reads a JSONL fixture table of `{"query_hash", "score"}` lines.
    pub fn load_fixtures(path: impl AsRef<Path>, default: u8) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: FixtureLine = serde_json::from_str(line).map_err(|e| {
                Error::Schema(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            table.insert(l.query_hash, check_score(l.score)?);
        }
        Ok(MockJudge::Fixtures {
            table,
            default: check_score(default as i64)?,
        })
    }
}

/// Uniform value in [0, 1) derived from a hex digest.
pub(crate) fn unit_from_hash(hex_digest: &str) -> f64 {
    let head = u64::from_str_radix(&hex_digest[..16], 16).unwrap_or(0);
    (head >> 11) as f64 / (1u64 << 53) as f64
}

impl JudgeBackend for MockJudge {
    fn score(&self, prompt: &JudgePrompt) -> Result<u8> {
        match self {
            MockJudge::Pinned(s) => check_score(*s as i64),
            MockJudge::Fixtures { table, default } => {
                Ok(table.get(&prompt.hash()).copied().unwrap_or(*default))
            }
            MockJudge::HashFraction {
                accept_fraction,
                accept,
                reject,
            } => Ok(if unit_from_hash(&prompt.hash()) < *accept_fraction {
                *accept
            } else {
                *reject
            }),
            MockJudge::CosineRule(enc) => {
                let (query, examples) = prompt
                    .images
                    .split_last()
                    .ok_or_else(|| Error::Contract("prompt without a query image".into()))?;
                let q = enc.embed_image(query)?;
                let mut best = 0.0f64;
                for ex in examples {
                    best = best.max(cosine(&q, &enc.embed_image(ex)?)?);
                }
                Ok((1.0 + 4.0 * best).round() as u8)
            }
        }
    }
}

#[derive(Serialize)]
struct JudgeHttpRequest<'a> {
    prompt_text: &'a str,
    images: Vec<String>,
}

/// Client for the `/judge` HTTP protocol.
pub struct RemoteJudge {
    endpoint: String,
    client: reqwest::blocking::Client,
    retries: u32,
    backoff: Duration,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            client,
            retries: 3,
            backoff: Duration::from_millis(250),
        })
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }
}

impl JudgeBackend for RemoteJudge {
    fn score(&self, prompt: &JudgePrompt) -> Result<u8> {
        let images = prompt
            .images
            .iter()
            .map(|i| {
                i.to_png_bytes()
                    .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
            })
            .collect::<Result<Vec<_>>>()?;
        let body = JudgeHttpRequest {
            prompt_text: &prompt.text,
            images,
        };
        let url = format!("{}/judge", self.endpoint);
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.client.post(&url).json(&body).send() {
                Ok(resp) if resp.status().is_success() => {
                    let v: serde_json::Value = resp
                        .json()
                        .map_err(|e| Error::Protocol(format!("bad /judge reply: {e}")))?;
                    return match v.get("score") {
                        Some(serde_json::Value::Number(n)) => n
                            .as_i64()
                            .ok_or_else(|| Error::Protocol(format!("non-integer score {n}")))
                            .and_then(check_score),
                        Some(serde_json::Value::String(s)) => parse_score_reply(s),
                        _ => Err(Error::Protocol(format!("/judge reply lacks a score: {v}"))),
                    };
                }
                Ok(resp) => last_err = format!("/judge returned {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Backend(last_err))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Single best hypothesis.
    Argmax,
    /// Every hypothesis whose score clears the threshold.
    #[default]
    Threshold,
}

/// Acceptance threshold on the 1..=5 scale. Scores strictly above `tau` pass;
/// with `inclusive`, a score equal to `tau` passes too.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub tau: f64,
    pub inclusive: bool,
}

impl Acceptance {
    pub fn accepts(&self, score: u8) -> bool {
        let s = score as f64;
        s > self.tau || (self.inclusive && s == self.tau)
    }
}

/// Scores of all hypotheses and the indices chosen by the selection rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub scores: Vec<u8>,
    pub selected: Vec<usize>,
}

/// Applies the Best-of-N rule to already computed scores.
///
/// Argmax picks the highest score (lowest index on ties) and always selects one
/// hypothesis. Threshold keeps every index whose score passes `acceptance`.
pub fn select(scores: &[u8], mode: SelectionMode, acceptance: Acceptance) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::Contract("Best-of-N needs at least one hypothesis".into()));
    }
    let selected = match mode {
        SelectionMode::Argmax => {
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            vec![best]
        }
        SelectionMode::Threshold => scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| acceptance.accepts(s))
            .map(|(i, _)| i)
            .collect(),
    };
    Ok(Selection {
        scores: scores.to_vec(),
        selected,
    })
}

/// Judge-stage parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub tau: f64,
    pub inclusive: bool,
    /// Retrieved exemplars per prompt (R).
    pub context_size: usize,
    /// Hypotheses per ambiguous region (N).
    pub hypotheses: usize,
    pub mode: SelectionMode,
    /// Zero-shot prompts carry no exemplars.
    pub few_shot: bool,
    /// Retrieve only from the hypothesised class's group.
    pub group_restricted: bool,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            tau: 4.0,
            inclusive: false,
            context_size: 4,
            hypotheses: 1,
            mode: SelectionMode::Threshold,
            few_shot: true,
            group_restricted: true,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses < 1 {
            return Err(Error::Config("judge.hypotheses must be >= 1".into()));
        }
        if !(MIN_SCORE as f64..=MAX_SCORE as f64).contains(&self.tau) {
            return Err(Error::Config("judge.tau must lie within the 1..=5 scale".into()));
        }
        Ok(())
    }

    pub fn acceptance(&self) -> Acceptance {
        Acceptance {
            tau: self.tau,
            inclusive: self.inclusive,
        }
    }
}

/// A before/after crop pair with the hypothesised class.
#[derive(Clone, Copy, Debug)]
pub struct JudgeQuery<'a> {
    pub before: &'a RgbImage,
    pub after: &'a RgbImage,
    pub class: usize,
}

/// Retrieval-conditioned judge over a gallery.
pub struct Judge<'a> {
    pub backend: &'a dyn JudgeBackend,
    pub encoder: &'a dyn EncoderBackend,
    pub gallery: &'a Gallery,
    pub class_names: &'a [String],
    pub config: &'a JudgeConfig,
}

/// Score of one judged image plus the exemplars used as context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub score: u8,
    pub context_ids: Vec<String>,
}

impl<'a> Judge<'a> {
    fn class_name(&self, class: usize) -> Result<&str> {
        self.class_names
            .get(class)
            .map(String::as_str)
            .ok_or_else(|| Error::Contract(format!("unknown class {class}")))
    }

    /// Retrieves context for `image` from `group`, then scores the presence of `class`.
    pub fn score_image(&self, image: &RgbImage, group: usize, class: usize) -> Result<JudgeOutcome> {
        let context: Vec<&Exemplar> = if self.config.few_shot && self.config.context_size > 0 {
            let q = self.encoder.embed_image(image)?;
            let restrict = self.config.group_restricted.then_some(group);
            self.gallery
                .retrieve_topk(&q, self.config.context_size, restrict)?
        } else {
            Vec::new()
        };
        let prompt = assemble_prompt(self.class_name(class)?, &context, image)?;
        let score = self.backend.score(&prompt)?;
        Ok(JudgeOutcome {
            score,
            context_ids: context.iter().map(|e| e.id.clone()).collect(),
        })
    }

    /// Score that the after crop shows the query's class.
    pub fn judge_query(&self, q: &JudgeQuery<'_>) -> Result<JudgeOutcome> {
        self.score_image(q.after, q.class, q.class)
    }

    /// Scores each hypothesis class against the after crop, using the context
    /// retrieved for the query's own class, then applies `mode`.
    pub fn best_of_n(
        &self,
        q: &JudgeQuery<'_>,
        hypotheses: &[usize],
        mode: SelectionMode,
    ) -> Result<Selection> {
        if hypotheses.is_empty() {
            return Err(Error::Contract("Best-of-N needs at least one hypothesis".into()));
        }
        let scores = hypotheses
            .par_iter()
            .map(|&h| self.score_image(q.after, q.class, h).map(|o| o.score))
            .collect::<Result<Vec<u8>>>()?;
        select(&scores, mode, self.config.acceptance())
    }
}

/// Reference distribution, per-candidate reward and regularisation strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub reference: Vec<f64>,
    pub reward: Vec<f64>,
    pub beta: f64,
}

/// `π*(y) ∝ π_ref(y) · exp(r(y) / β)`, normalised (computed in log space).
pub fn preference_distribution(pm: &PreferenceModel) -> Result<Vec<f64>> {
    if !pm.beta.is_finite() || pm.beta <= 0.0 {
        return Err(Error::Contract(format!("beta must be > 0, got {}", pm.beta)));
    }
    if pm.reference.is_empty() || pm.reference.len() != pm.reward.len() {
        return Err(Error::Contract(
            "reference and reward must be nonempty and of equal length".into(),
        ));
    }
    if pm.reference.iter().any(|&p| !p.is_finite() || p < 0.0)
        || (pm.reference.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Contract("reference must be a probability distribution".into()));
    }
    let logits: Vec<f64> = pm
        .reference
        .iter()
        .zip(&pm.reward)
        .map(|(&p, &r)| if p > 0.0 { p.ln() + r / pm.beta } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds `u ∈ [0, 1)`.
pub fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// Probability that at least one of `n` independent draws passes, `1 − (1 − p)^n`.
pub fn acceptance_probability(p: f64, n: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || n < 1 {
        return Err(Error::Contract(format!(
            "need p in [0, 1] and n >= 1, got p={p}, n={n}"
        )));
    }
    Ok(-(n as f64 * (-p).ln_1p()).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedding, MockEncoder};

    fn img(v: u8) -> RgbImage {
        RgbImage::filled(2, 2, [v, v, v])
    }

    fn ex(id: &str, score: u8, v: u8) -> Exemplar {
        Exemplar::new(id, 0, Embedding::basis(2, 0))
            .with_score(score)
            .with_image(img(v))
    }

    #[test]
    fn zero_shot_prompt_has_only_query() {
        let p = assemble_prompt("building", &[], &img(1)).unwrap();
        assert_eq!(p.images.len(), 1);
        assert!(p.text.contains("Example (1): <start_of_image> Score = ?"));
        assert!(!p.text.contains("Example (2)"));
        assert!(p.text.contains("1: Definitely does not contain a building."));
    }

    #[test]
    fn few_shot_prompt_lists_examples_in_order() {
        let a = ex("a", 5, 10);
        let b = ex("b", 3, 20);
        let p = assemble_prompt("tree", &[&a, &b], &img(1)).unwrap();
        let i1 = p.text.find("Example (1): <start_of_image> Score = 5").unwrap();
        let i2 = p.text.find("Example (2): <start_of_image> Score = 3").unwrap();
        let i3 = p.text.find("Example (3): <start_of_image> Score = ?").unwrap();
        assert!(i1 < i2 && i2 < i3);
        assert_eq!(p.images, vec![img(10), img(20), img(1)]);
        assert_eq!(p, assemble_prompt("tree", &[&a, &b], &img(1)).unwrap());
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_score_reply("4").unwrap(), 4);
        assert_eq!(parse_score_reply("Score: 5.").unwrap(), 5);
        assert!(matches!(parse_score_reply("7"), Err(Error::Protocol(_))));
        assert!(matches!(parse_score_reply("none"), Err(Error::Protocol(_))));
        assert!(matches!(parse_score_reply("0"), Err(Error::Protocol(_))));
    }

    #[test]
    fn selection_rules() {
        let acc = Acceptance {
            tau: 4.0,
            inclusive: false,
        };
        assert_eq!(select(&[3], SelectionMode::Argmax, acc).unwrap().selected, vec![0]);
        assert!(select(&[3], SelectionMode::Threshold, acc).unwrap().selected.is_empty());
        assert_eq!(select(&[5], SelectionMode::Threshold, acc).unwrap().selected, vec![0]);
        assert_eq!(
            select(&[2, 5, 3], SelectionMode::Argmax, acc).unwrap().selected,
            vec![1]
        );
        assert_eq!(
            select(&[2, 5, 5], SelectionMode::Argmax, acc).unwrap().selected,
            vec![1]
        );
        // brute-force filter oracle
        let scores = [2u8, 5, 5];
        let oracle: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 4).collect();
        assert_eq!(
            select(&scores, SelectionMode::Threshold, acc).unwrap().selected,
            oracle
        );
        assert!(select(&[], SelectionMode::Argmax, acc).is_err());
        let inclusive = Acceptance {
            tau: 4.0,
            inclusive: true,
        };
        assert_eq!(
            select(&[4, 3], SelectionMode::Threshold, inclusive).unwrap().selected,
            vec![0]
        );
    }

    #[test]
    fn preference_examples() {
        let pm = PreferenceModel {
            reference: vec![1.0 / 3.0; 3],
            reward: vec![0.0, 2f64.ln(), 4f64.ln()],
            beta: 1.0,
        };
        let pi = preference_distribution(&pm).unwrap();
        for (p, want) in pi.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((p - want).abs() < 1e-12);
        }
        let flat = PreferenceModel {
            reference: vec![0.2, 0.5, 0.3],
            reward: vec![1.7; 3],
            beta: 0.3,
        };
        let pi = preference_distribution(&flat).unwrap();
        for (p, r) in pi.iter().zip(&flat.reference) {
            assert!((p - r).abs() < 1e-12);
        }
        let bad = PreferenceModel { beta: 0.0, ..flat };
        assert!(matches!(preference_distribution(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(0.0, 7).unwrap(), 0.0);
        assert!((acceptance_probability(0.3, 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((acceptance_probability(0.5, 3).unwrap() - 0.875).abs() < 1e-15);
        assert_eq!(acceptance_probability(1.0, 2).unwrap(), 1.0);
        assert!(acceptance_probability(1.5, 2).is_err());
    }

    #[test]
    fn inverse_cdf_sampling() {
        let d = [0.25, 0.5, 0.25];
        assert_eq!(sample_index(&d, 0.0), 0);
        assert_eq!(sample_index(&d, 0.26), 1);
        assert_eq!(sample_index(&d, 0.999), 2);
    }

    #[test]
    fn pinned_and_cosine_mocks() {
        let p = assemble_prompt("building", &[], &img(1)).unwrap();
        assert_eq!(MockJudge::Pinned(5).score(&p).unwrap(), 5);

        // query embeds to (1, 0); example embeds to (0.6, 0.8): cosine 0.6 -> round(3.4) = 3
        let q = img(1);
        let e1 = img(2);
        let enc = MockEncoder::new(2)
            .override_image(&q, Embedding::new(vec![1.0, 0.0]).unwrap())
            .override_image(&e1, Embedding::new(vec![0.6, 0.8]).unwrap());
        let judge = MockJudge::CosineRule(Arc::new(enc));
        let ex1 = Exemplar::new("e1", 0, Embedding::basis(2, 0)).with_image(e1);
        let p = assemble_prompt("building", &[&ex1], &q).unwrap();
        assert_eq!(judge.score(&p).unwrap(), 3);
    }

    #[test]
    fn fixture_table_lookup() {
        let p = assemble_prompt("building", &[], &img(1)).unwrap();
        let mut table = HashMap::new();
        table.insert(p.hash(), 4u8);
        let j = MockJudge::Fixtures { table, default: 1 };
        assert_eq!(j.score(&p).unwrap(), 4);
        let other = assemble_prompt("tree", &[], &img(1)).unwrap();
        assert_eq!(j.score(&other).unwrap(), 1);
    }
}
