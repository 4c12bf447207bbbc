//! Embedding backends, similarity metrics and encoder-stage semantic screening.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// A finite, nonempty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Schema("embedding must have dim > 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("embedding entries must be finite".into()));
        }
        Ok(Self(values))
    }

    /// Unit vector along axis `axis` of a `dim`-dimensional space.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis out of range");
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * alpha).collect())
    }

    pub fn normalized(&self) -> Option<Embedding> {
        let n = self.norm();
        (n > 0.0).then(|| self.scaled(1.0 / n))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Vec<f64> {
        e.0
    }
}

fn same_dim(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    same_dim(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "cosine of a zero vector".into(),
        ));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Euclidean distance.
pub fn l2(a: &Embedding, b: &Embedding) -> Result<f64> {
    same_dim(a, b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CosineSim,
    L1,
    L2,
    /// 1-D optimal transport between the coordinate multisets of the two vectors.
    Wasserstein1d,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::CosineSim, Metric::L1, Metric::L2, Metric::Wasserstein1d];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::CosineSim => "cosine",
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Wasserstein1d => "wasserstein",
        }
    }

    /// True when larger values mean "closer".
    pub fn is_similarity(&self) -> bool {
        matches!(self, Metric::CosineSim)
    }
}

pub fn distance(a: &Embedding, b: &Embedding, metric: Metric) -> Result<f64> {
    same_dim(a, b)?;
    match metric {
        Metric::CosineSim => cosine(a, b),
        Metric::L1 => Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum()),
        Metric::L2 => l2(a, b),
        Metric::Wasserstein1d => {
            let mut sa = a.0.clone();
            let mut sb = b.0.clone();
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            let total: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
            Ok(total / sa.len() as f64)
        }
    }
}

/// Image and text embedding capability.
pub trait EncoderBackend: Send + Sync {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding>;
    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

/// Deterministic unit vector seeded from the SHA-256 of `bytes`.
pub fn hash_embedding(bytes: &[u8], dim: usize) -> Embedding {
    let digest = Sha256::digest(bytes);
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(u) = Embedding(v).normalized() {
            return u;
        }
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// How the mock encoder maps images to vectors.
#[derive(Clone, Debug)]
pub enum MockImageRule {
    /// Hash-seeded pseudorandom unit vector of the pixel content.
    Hash,
    /// Every pixel votes for the embedding of its nearest palette colour (within
    /// `tolerance` per channel); the image embedding is the vote-weighted mean.
    /// Pixels matching no colour vote for a fixed "unmatched" vector.
    Palette {
        colors: Vec<([u8; 3], Embedding)>,
        tolerance: u8,
    },
    /// Every image maps to the same vector.
    Pinned(Embedding),
}

/// Pure, weight-free encoder for tests and dry runs.
#[derive(Clone, Debug)]
pub struct MockEncoder {
    dim: usize,
    rule: MockImageRule,
    text_overrides: HashMap<String, Embedding>,
    image_overrides: HashMap<String, Embedding>,
}

impl MockEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "mock encoder needs dim > 0");
        Self {
            dim,
            rule: MockImageRule::Hash,
            text_overrides: HashMap::new(),
            image_overrides: HashMap::new(),
        }
    }

    pub fn with_rule(mut self, rule: MockImageRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn override_text(mut self, text: impl Into<String>, e: Embedding) -> Self {
        self.text_overrides.insert(text.into(), e);
        self
    }

    pub fn override_image(mut self, image: &RgbImage, e: Embedding) -> Self {
        self.image_overrides
            .insert(content_hash(&image.content_bytes()), e);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn palette_embedding(
        &self,
        image: &RgbImage,
        colors: &[([u8; 3], Embedding)],
        tolerance: u8,
    ) -> Embedding {
        let mut votes = vec![0usize; colors.len()];
        let mut unmatched = 0usize;
        for p in image.pixels() {
            let best = colors
                .iter()
                .enumerate()
                .map(|(i, (c, _))| {
                    let d = (0..3)
                        .map(|j| (p[j] as i16 - c[j] as i16).unsigned_abs())
                        .max()
                        .unwrap_or(0);
                    (d, i)
                })
                .min();
            match best {
                Some((d, i)) if d <= tolerance as u16 => votes[i] += 1,
                _ => unmatched += 1,
            }
        }
        let n = image.pixel_count().max(1) as f64;
        let mut acc = vec![0.0; self.dim];
        for (i, (_, e)) in colors.iter().enumerate() {
            let w = votes[i] as f64 / n;
            for (a, v) in acc.iter_mut().zip(e.values()) {
                *a += w * v;
            }
        }
        if unmatched > 0 {
            let other = hash_embedding(b"mock-encoder/unmatched", self.dim);
            let w = unmatched as f64 / n;
            for (a, v) in acc.iter_mut().zip(other.values()) {
                *a += w * v;
            }
        }
        Embedding(acc)
            .normalized()
            .unwrap_or_else(|| hash_embedding(&image.content_bytes(), self.dim))
    }
}

impl EncoderBackend for MockEncoder {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding> {
        if image.is_empty() {
            return Err(Error::EmptyRegion("cannot embed an empty image".into()));
        }
        let bytes = image.content_bytes();
        if let Some(e) = self.image_overrides.get(&content_hash(&bytes)) {
            return Ok(e.clone());
        }
        Ok(match &self.rule {
            MockImageRule::Hash => hash_embedding(&bytes, self.dim),
            MockImageRule::Pinned(e) => e.clone(),
            MockImageRule::Palette { colors, tolerance } => {
                self.palette_embedding(image, colors, *tolerance)
            }
        })
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        if let Some(e) = self.text_overrides.get(text) {
            return Ok(e.clone());
        }
        let mut bytes = b"text:".to_vec();
        bytes.extend_from_slice(text.as_bytes());
        Ok(hash_embedding(&bytes, self.dim))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: &'a str,
    data: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    values: Vec<f64>,
}

/// Client for the `/embed` HTTP protocol with an on-disk content-hash cache.
pub struct RemoteEncoder {
    endpoint: String,
    client: reqwest::blocking::Client,
    cache_dir: Option<PathBuf>,
    retries: u32,
    backoff: Duration,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, cache_dir: Option<PathBuf>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        if let Some(dir) = &cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            client,
            cache_dir,
            retries: 3,
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn request(&self, kind: &str, data: String, key_material: &[u8]) -> Result<Embedding> {
        let key = {
            let mut m = kind.as_bytes().to_vec();
            m.push(0);
            m.extend_from_slice(key_material);
            content_hash(&m)
        };
        if let Some(dir) = &self.cache_dir {
            if let Some(e) = read_cache_entry(&dir.join(&key))? {
                return Ok(e);
            }
        }
        let body = EmbedRequest { kind, data };
        let url = format!("{}/embed", self.endpoint);
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.client.post(&url).json(&body).send() {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: EmbedResponse = resp
                        .json()
                        .map_err(|e| Error::Protocol(format!("bad /embed reply: {e}")))?;
                    if parsed.dim != parsed.values.len() {
                        return Err(Error::Protocol(format!(
                            "/embed declared dim {} but sent {} values",
                            parsed.dim,
                            parsed.values.len()
                        )));
                    }
                    let e = Embedding::new(parsed.values)
                        .map_err(|e| Error::Protocol(e.to_string()))?;
                    if let Some(dir) = &self.cache_dir {
                        write_cache_entry(dir, &key, &e)?;
                    }
                    return Ok(e);
                }
                Ok(resp) => last_err = format!("/embed returned {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Backend(last_err))
    }
}

impl EncoderBackend for RemoteEncoder {
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding> {
        let png = image.to_png_bytes()?;
        let data = base64::engine::general_purpose::STANDARD.encode(&png);
        self.request("image", data, &image.content_bytes())
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.request("text", text.to_string(), text.as_bytes())
    }
}

/// Cache entry: `dim N` header line, then space-separated decimal values.
pub fn format_cache_entry(e: &Embedding) -> String {
    let values: Vec<String> = e.values().iter().map(|v| format!("{v:?}")).collect();
    format!("dim {}\n{}\n", e.dim(), values.join(" "))
}

pub fn parse_cache_entry(text: &str) -> Result<Embedding> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let dim: usize = header
        .strip_prefix("dim ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad cache header {header:?}")))?;
    let values: Vec<f64> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("bad cache value: {e}")))?;
    if values.len() != dim {
        return Err(Error::Format(format!(
            "cache entry declares dim {dim} but has {} values",
            values.len()
        )));
    }
    Embedding::new(values)
}

fn read_cache_entry(path: &Path) -> Result<Option<Embedding>> {
    match fs::read_to_string(path) {
        Ok(text) => parse_cache_entry(&text).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Writes to a temporary file in `dir` then renames it into place.
fn write_cache_entry(dir: &Path, key: &str, e: &Embedding) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|err| Error::io(dir, err))?;
    tmp.write_all(format_cache_entry(e).as_bytes())
        .map_err(|err| Error::io(tmp.path(), err))?;
    let target = dir.join(key);
    tmp.persist(&target)
        .map_err(|err| Error::io(&target, err.error))?;
    Ok(())
}

/// Encoder-stage parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub k: usize,
    pub tau_enc: f64,
    pub tau_sim: f64,
    pub class_prompts: Vec<String>,
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("screen.k must be >= 1".into()));
        }
        let in_range = |t: f64| (-1.0..=1.0).contains(&t);
        if !in_range(self.tau_enc) || !in_range(self.tau_sim) {
            return Err(Error::Config("screen thresholds must lie in [-1, 1]".into()));
        }
        if self.class_prompts.is_empty() {
            return Err(Error::Config("screen needs at least one class prompt".into()));
        }
        Ok(())
    }
}

/// Text embeddings of the class prompts, computed once per run.
#[derive(Clone, Debug)]
pub struct PromptBank {
    embeddings: Vec<Embedding>,
}

impl PromptBank {
    pub fn new(prompts: &[String], enc: &dyn EncoderBackend) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Contract("at least one class prompt is required".into()));
        }
        let embeddings = prompts
            .iter()
            .map(|p| enc.embed_text(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Classes by descending cosine similarity to `image`; ties go to the lower index.
    pub fn rank(&self, image: &Embedding) -> Result<Vec<(usize, f64)>> {
        let mut ranked = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(c, t)| cosine(image, t).map(|s| (c, s)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

/// Ranks every class prompt against `image`.
pub fn rank_classes(
    image: &RgbImage,
    cfg: &ScreenConfig,
    enc: &dyn EncoderBackend,
) -> Result<Vec<(usize, f64)>> {
    let bank = PromptBank::new(&cfg.class_prompts, enc)?;
    bank.rank(&enc.embed_image(image)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenVerdict {
    Discard,
    Accept,
    Ambiguous,
}

/// Encoder-stage outcome for one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenDecision {
    pub verdict: ScreenVerdict,
    /// Before and after crops look alike (cosine >= tau_sim); never set on discard.
    pub no_change_suspect: bool,
    pub after_similarity: f64,
    pub before_similarity: f64,
    pub crop_similarity: f64,
}

fn in_top_k(ranked: &[(usize, f64)], class: usize, k: usize, tau: f64) -> Option<f64> {
    ranked
        .iter()
        .take(k)
        .find(|(c, _)| *c == class)
        .filter(|(_, s)| *s >= tau)
        .map(|(_, s)| *s)
}

/// Screens precomputed crop embeddings against the prompt bank.
pub fn screen_embeddings(
    before: &Embedding,
    after: &Embedding,
    expected_class: usize,
    cfg: &ScreenConfig,
    bank: &PromptBank,
) -> Result<ScreenDecision> {
    if expected_class >= bank.len() {
        return Err(Error::Contract(format!(
            "expected class {expected_class} has no prompt"
        )));
    }
    let after_rank = bank.rank(after)?;
    let before_rank = bank.rank(before)?;
    let sim_of = |r: &[(usize, f64)]| {
        r.iter()
            .find(|(c, _)| *c == expected_class)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN)
    };
    let crop_similarity = cosine(before, after)?;
    let mut d = ScreenDecision {
        verdict: ScreenVerdict::Discard,
        no_change_suspect: false,
        after_similarity: sim_of(&after_rank),
        before_similarity: sim_of(&before_rank),
        crop_similarity,
    };
    if in_top_k(&after_rank, expected_class, cfg.k, cfg.tau_enc).is_none() {
        return Ok(d);
    }
    d.verdict = if in_top_k(&before_rank, expected_class, cfg.k, cfg.tau_enc).is_some() {
        ScreenVerdict::Ambiguous
    } else {
        ScreenVerdict::Accept
    };
    d.no_change_suspect = crop_similarity >= cfg.tau_sim;
    Ok(d)
}

/// Encoder screening of one before/after crop pair for `expected_class`.
pub fn screen(
    before: &RgbImage,
    after: &RgbImage,
    expected_class: usize,
    cfg: &ScreenConfig,
    enc: &dyn EncoderBackend,
) -> Result<ScreenDecision> {
    let bank = PromptBank::new(&cfg.class_prompts, enc)?;
    screen_embeddings(
        &enc.embed_image(before)?,
        &enc.embed_image(after)?,
        expected_class,
        cfg,
        &bank,
    )
}
