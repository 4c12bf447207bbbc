//! Exemplar gallery: exact top-R retrieval, group-restricted retrieval and
//! context-shift diagnostics in embedding space.
//!
//! Retrieval ranks by cosine similarity. Diagnostics use the Euclidean norm.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, l2, EncoderBackend, Embedding};
use crate::error::{Error, Result};
use crate::raster::{load_image_png, ClassMap, RgbImage};

/// Score shown for exemplars whose manifest line carries none.
pub const DEFAULT_EXEMPLAR_SCORE: u8 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar {
    pub id: String,
    pub group: usize,
    pub embedding: Embedding,
    pub caption: String,
    pub score: Option<u8>,
    /// Pixels shown to the judge; absent for embedding-only galleries.
    pub image: Option<RgbImage>,
}

impl Exemplar {
    pub fn new(id: impl Into<String>, group: usize, embedding: Embedding) -> Self {
        Self {
            id: id.into(),
            group,
            embedding,
            caption: String::new(),
            score: None,
            image: None,
        }
    }

    pub fn with_score(mut self, score: u8) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = caption.into();
        self
    }

    pub fn with_image(mut self, image: RgbImage) -> Self {
        self.image = Some(image);
        self
    }

    pub fn display_score(&self) -> u8 {
        self.score.unwrap_or(DEFAULT_EXEMPLAR_SCORE)
    }
}

/// One line of the gallery manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarManifestLine {
    pub id: String,
    pub class: String,
    pub image: PathBuf,
    #[serde(default)]
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
}

/// Within-group diameter, separation margin and the context shift of a retrieved set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub delta_in: f64,
    pub delta_out: f64,
    pub context_shift: f64,
}

/// Lower bound on the context shift of a size-`m` set holding one cross-group exemplar.
pub fn mixed_shift_lower_bound(delta_in: f64, delta_out: f64, m: usize) -> f64 {
    assert!(m >= 1, "set size must be positive");
    (delta_out - (m as f64 - 1.0) * delta_in) / m as f64
}

/// Immutable exemplar store.
#[derive(Clone, Debug, Default)]
pub struct Gallery {
    exemplars: Vec<Exemplar>,
}

impl Gallery {
    pub fn new(exemplars: Vec<Exemplar>) -> Result<Self> {
        if let Some(first) = exemplars.first() {
            let dim = first.embedding.dim();
            if let Some(bad) = exemplars.iter().find(|e| e.embedding.dim() != dim) {
                return Err(Error::Schema(format!(
                    "exemplar {} has dim {}, gallery dim is {dim}",
                    bad.id,
                    bad.embedding.dim()
                )));
            }
        }
        Ok(Self { exemplars })
    }

    /// Loads a JSONL manifest, embedding every exemplar image with `enc`.
    /// Relative image paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>, classes: &ClassMap, enc: &dyn EncoderBackend) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut exemplars = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let m: ExemplarManifestLine = serde_json::from_str(line).map_err(|e| {
                Error::Schema(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            let group = classes.index_of(&m.class).ok_or_else(|| {
                Error::Schema(format!(
                    "{}:{}: unknown class {:?}",
                    path.display(),
                    lineno + 1,
                    m.class
                ))
            })?;
            if let Some(s) = m.score {
                if !(1..=5).contains(&s) {
                    return Err(Error::Schema(format!(
                        "{}:{}: score {s} outside 1..=5",
                        path.display(),
                        lineno + 1
                    )));
                }
            }
            let image = load_image_png(base.join(&m.image))?;
            let embedding = enc.embed_image(&image)?;
            exemplars.push(Exemplar {
                id: m.id,
                group,
                embedding,
                caption: m.caption,
                score: m.score,
                image: Some(image),
            });
        }
        Self::new(exemplars)
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn dim(&self) -> Option<usize> {
        self.exemplars.first().map(|e| e.embedding.dim())
    }

    pub fn has_group(&self, group: usize) -> bool {
        self.exemplars.iter().any(|e| e.group == group)
    }

    /// Top-`r` exemplars by descending cosine similarity, ties broken by id.
    pub fn retrieve_topk(
        &self,
        query: &Embedding,
        r: usize,
        restrict_group: Option<usize>,
    ) -> Result<Vec<&Exemplar>> {
        let mut scored = self
            .exemplars
            .iter()
            .filter(|e| restrict_group.is_none_or(|g| e.group == g))
            .map(|e| cosine(query, &e.embedding).map(|s| (s, e)))
            .collect::<Result<Vec<_>>>()?;
        if scored.is_empty() {
            return Err(match restrict_group {
                Some(g) => Error::NoExemplars(g),
                None => Error::Contract("retrieval from an empty gallery".into()),
            });
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        Ok(scored.into_iter().take(r).map(|(_, e)| e).collect())
    }

    /// Largest in-group and smallest out-group Euclidean distance to `query`,
    /// plus the shift of `context`'s pooled embedding away from `query`.
    pub fn group_diagnostics(
        &self,
        query: &Embedding,
        group: usize,
        context: &[&Exemplar],
    ) -> Result<GroupDiagnostics> {
        let mut delta_in: Option<f64> = None;
        let mut delta_out: Option<f64> = None;
        for e in &self.exemplars {
            let d = l2(query, &e.embedding)?;
            if e.group == group {
                delta_in = Some(delta_in.map_or(d, |m| m.max(d)));
            } else {
                delta_out = Some(delta_out.map_or(d, |m| m.min(d)));
            }
        }
        match (delta_in, delta_out) {
            (Some(delta_in), Some(delta_out)) => Ok(GroupDiagnostics {
                delta_in,
                delta_out,
                context_shift: context_shift(context, query)?,
            }),
            (None, _) => Err(Error::DiagnosticsUnavailable(format!(
                "no in-group exemplars for group {group}"
            ))),
            (_, None) => Err(Error::DiagnosticsUnavailable(format!(
                "no out-group exemplars for group {group}"
            ))),
        }
    }
}

/// Coordinate-wise mean of the exemplars' embeddings.
pub fn pooled_context(set: &[&Exemplar]) -> Result<Embedding> {
    let first = set
        .first()
        .ok_or_else(|| Error::Contract("pooled context of an empty set".into()))?;
    let dim = first.embedding.dim();
    let mut acc = vec![0.0; dim];
    for e in set {
        if e.embedding.dim() != dim {
            return Err(Error::Shape("exemplar dims differ".into()));
        }
        for (a, v) in acc.iter_mut().zip(e.embedding.values()) {
            *a += v;
        }
    }
    let n = set.len() as f64;
    Embedding::new(acc.into_iter().map(|a| a / n).collect())
}

/// `‖pooled_context(set) − query‖₂`.
pub fn context_shift(set: &[&Exemplar], query: &Embedding) -> Result<f64> {
    l2(&pooled_context(set)?, query)
}
