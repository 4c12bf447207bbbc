//! Question-answer generation over vision-validated changes, and dataset statistics.
//!
//! The class label and change direction always come from the vision pipeline;
//! generation only phrases them.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::QuestionType;
use crate::error::{Error, Result};
use crate::raster::{ClassMap, PixelRect, RgbImage};

pub const NO_CHANGE_ANSWER: &str = "There was no change.";
const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

/// One dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub sample_id: String,
    pub pair_id: String,
    pub bbox: PixelRect,
    pub qtype: QuestionType,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    pub class: Option<String>,
    pub is_change: bool,
}

impl QARecord {
    /// Checks the per-type answer format.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.qtype {
            QuestionType::YesNo => self.options.is_none() && matches!(self.answer.as_str(), "Yes" | "No"),
            QuestionType::Mcq => {
                self.options.as_ref().is_some_and(|o| o.len() == 4) && LETTERS.contains(&self.answer.as_str())
            }
            QuestionType::Open => self.options.is_none() && !self.answer.is_empty(),
        };
        if !ok || self.is_change != self.class.is_some() {
            return Err(Error::Schema(format!("malformed {:?} record {}", self.qtype, self.sample_id)));
        }
        Ok(())
    }
}

/// What a record is about.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QaSubject<'a> {
    Change {
        class: &'a str,
        appeared: bool,
        bbox: PixelRect,
    },
    NoChange,
}

/// Identity and environment of one record.
#[derive(Clone, Copy, Debug)]
pub struct QaContext<'a> {
    pub pair_id: &'a str,
    pub sample_id: &'a str,
    pub width: u32,
    pub height: u32,
    pub classes: &'a ClassMap,
    pub distractor_exclude: &'a [String],
    pub seed: u64,
}

/// Per-sample RNG: the run seed mixed with a digest of the sample id.
pub fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let d = Sha256::digest(sample_id.as_bytes());
    let mix = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    ChaCha8Rng::seed_from_u64(seed ^ mix)
}

/// Quadrant of the image holding the box centre.
pub fn quadrant(bbox: PixelRect, width: u32, height: u32) -> &'static str {
    let (cx, cy) = bbox.center();
    let left = cx < width as f64 / 2.0;
    let top = cy < height as f64 / 2.0;
    match (top, left) {
        (true, true) => "top-left",
        (true, false) => "top-right",
        (false, true) => "bottom-left",
        (false, false) => "bottom-right",
    }
}

fn change_statement(class: &str, appeared: bool) -> String {
    if appeared {
        format!("New {class} appeared.")
    } else {
        format!("Existing {class} disappeared.")
    }
}

/// Up to three distractors from the other classes, rotating from a random start,
/// topped up from `fallback` when there are too few classes.
fn distractors(
    own: Option<&str>,
    ctx: &QaContext<'_>,
    rng: &mut ChaCha8Rng,
    statement: impl Fn(&str) -> String,
    fallback: &[String],
    correct: &str,
) -> Vec<String> {
    let pool: Vec<&str> = ctx
        .classes
        .names()
        .iter()
        .map(String::as_str)
        .filter(|c| Some(*c) != own && !ctx.distractor_exclude.iter().any(|x| x == c))
        .collect();
    let mut out: Vec<String> = Vec::with_capacity(3);
    if !pool.is_empty() {
        let start = rng.gen_range(0..pool.len());
        for i in 0..pool.len().min(3) {
            out.push(statement(pool[(start + i) % pool.len()]));
        }
    }
    for f in fallback {
        if out.len() == 3 {
            break;
        }
        if f != correct && !out.contains(f) {
            out.push(f.clone());
        }
    }
    out
}

fn shuffle_options(correct: String, others: Vec<String>, rng: &mut ChaCha8Rng) -> (Vec<String>, String) {
    let mut opts = Vec::with_capacity(4);
    opts.push(correct);
    opts.extend(others);
    let mut order: Vec<usize> = (0..opts.len()).collect();
    order.shuffle(rng);
    let pos = order.iter().position(|&i| i == 0).expect("correct option present");
    let shuffled = order.into_iter().map(|i| opts[i].clone()).collect();
    (shuffled, LETTERS[pos].to_string())
}

fn bbox_of(subject: &QaSubject<'_>, ctx: &QaContext<'_>) -> PixelRect {
    match subject {
        QaSubject::Change { bbox, .. } => *bbox,
        QaSubject::NoChange => PixelRect::full(ctx.width, ctx.height),
    }
}

fn record(
    subject: &QaSubject<'_>,
    qtype: QuestionType,
    ctx: &QaContext<'_>,
    question: String,
    options: Option<Vec<String>>,
    answer: String,
) -> QARecord {
    let class = match subject {
        QaSubject::Change { class, .. } => Some(class.to_string()),
        QaSubject::NoChange => None,
    };
    QARecord {
        sample_id: ctx.sample_id.to_string(),
        pair_id: ctx.pair_id.to_string(),
        bbox: bbox_of(subject, ctx),
        qtype,
        question,
        options,
        answer,
        is_change: class.is_some(),
        class,
    }
}

/// Deterministic template question for `subject`.
pub fn template_qa(subject: &QaSubject<'_>, qtype: QuestionType, ctx: &QaContext<'_>) -> QARecord {
    let mut rng = sample_rng(ctx.seed, ctx.sample_id);
    match (*subject, qtype) {
        (QaSubject::Change { class, appeared, bbox }, QuestionType::YesNo) => {
            let loc = quadrant(bbox, ctx.width, ctx.height);
            let q = if appeared {
                format!("Did new {class} appear in the {loc} part of the image between the two dates?")
            } else {
                format!("Did {class} disappear from the {loc} part of the image between the two dates?")
            };
            record(subject, qtype, ctx, q, None, "Yes".into())
        }
        (QaSubject::NoChange, QuestionType::YesNo) => record(
            subject,
            qtype,
            ctx,
            "Is there any semantic change between the two images?".into(),
            None,
            "No".into(),
        ),
        (QaSubject::Change { class, appeared, bbox }, QuestionType::Mcq) => {
            let loc = quadrant(bbox, ctx.width, ctx.height);
            let correct = change_statement(class, appeared);
            let fallback = [
                NO_CHANGE_ANSWER.to_string(),
                change_statement(class, !appeared),
                "The area was flooded.".to_string(),
            ];
            let others = distractors(
                Some(class),
                ctx,
                &mut rng,
                |c| change_statement(c, appeared),
                &fallback,
                &correct,
            );
            let (opts, ans) = shuffle_options(correct, others, &mut rng);
            let q = format!("What changed in the {loc} part of the image between the two dates?");
            record(subject, qtype, ctx, q, Some(opts), ans)
        }
        (QaSubject::NoChange, QuestionType::Mcq) => {
            let fallback = [
                "A new structure appeared.".to_string(),
                "An existing structure disappeared.".to_string(),
                "The land cover changed.".to_string(),
            ];
            let others = distractors(
                None,
                ctx,
                &mut rng,
                |c| change_statement(c, true),
                &fallback,
                NO_CHANGE_ANSWER,
            );
            let (opts, ans) = shuffle_options(NO_CHANGE_ANSWER.to_string(), others, &mut rng);
            let q = "What changed between the two images?".to_string();
            record(subject, qtype, ctx, q, Some(opts), ans)
        }
        (QaSubject::Change { class, appeared, bbox }, QuestionType::Open) => {
            let loc = quadrant(bbox, ctx.width, ctx.height);
            let verb = if appeared { "appeared" } else { "disappeared" };
            let lead = if appeared { "New" } else { "Existing" };
            record(
                subject,
                qtype,
                ctx,
                format!("Describe the change in the {loc} part of the image."),
                None,
                format!("{lead} {class} {verb} in the {loc} part of the image."),
            )
        }
        (QaSubject::NoChange, QuestionType::Open) => record(
            subject,
            qtype,
            ctx,
            "Describe the change between the two images.".into(),
            None,
            NO_CHANGE_ANSWER.into(),
        ),
    }
}

/// Generator instruction for the change-present and no-change MCQ variants.
pub fn mcq_instruction(class: Option<&str>) -> String {
    match class {
        Some(cls) => format!(
            "You are an expert in generating multiple-choice questions based on visual changes in satellite imagery.\n\
             The image pair below shows a change related to {cls} in the red bounding box.\n\
             Generate one multiple-choice question with 4 answer options (A, B, C, D) to describe this change.\n\
             One option must correctly describe the change, and the other 3 must be incorrect.\n\
             Ignore the red bounding box in your answers-it is only for you to understand the local change.\n\
             Focus strictly on the change inside the red bounding box; all other differences are not correct.\n\
             Format the output as:\n\
             Question:\\nA.\\nB.\\nC.\\nD.\\nThe correct answer is:"
        ),
        None => "You are an expert in generating multiple-choice questions about visual comparisons in satellite imagery.\n\
             The two images below show no visible change.\n\
             Generate one multiple-choice question where the correct answer states that there was no change,\n\
             and the other three options must be incorrect changes (e.g., suggesting false changes).\n\
             Format the output as:\n\
             Question:\\nA.\\nB.\\nC.\\nD.\\nThe correct answer is:"
            .to_string(),
    }
}

/// A generator reply in `Question:/A./B./C./D./The correct answer is:` form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedMcq {
    pub question: String,
    pub options: [String; 4],
    pub correct: usize,
}

/// Parses a generator reply; any deviation from the format is a generation error.
pub fn parse_mcq(text: &str) -> Result<ParsedMcq> {
    let bad = |why: &str| Error::Generation(format!("{why}: {text:?}"));
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let qpos = lines
        .iter()
        .position(|l| l.starts_with("Question:"))
        .ok_or_else(|| bad("no Question: line"))?;
    let mut i = qpos;
    let mut question = lines[i]["Question:".len()..].trim().to_string();
    if question.is_empty() {
        i += 1;
        question = lines.get(i).ok_or_else(|| bad("empty question"))?.to_string();
    }
    let mut options: Vec<String> = Vec::with_capacity(4);
    for letter in LETTERS {
        i += 1;
        let line = lines.get(i).ok_or_else(|| bad("missing option"))?;
        let body = line
            .strip_prefix(letter)
            .and_then(|r| r.strip_prefix('.').or_else(|| r.strip_prefix(')')))
            .ok_or_else(|| bad("option out of order"))?
            .trim();
        if body.is_empty() {
            return Err(bad("empty option"));
        }
        options.push(body.to_string());
    }
    i += 1;
    let tail = lines
        .get(i)
        .and_then(|l| l.strip_prefix("The correct answer is:"))
        .ok_or_else(|| bad("missing answer line"))?;
    let letter = tail
        .trim()
        .trim_start_matches('(')
        .chars()
        .next()
        .ok_or_else(|| bad("empty answer"))?;
    let correct = LETTERS
        .iter()
        .position(|l| l.starts_with(letter))
        .ok_or_else(|| bad("answer is not A-D"))?;
    if question.is_empty() {
        return Err(bad("empty question"));
    }
    Ok(ParsedMcq {
        question,
        options: options.try_into().expect("four options"),
        correct,
    })
}

/// Copies `img` with a 2-pixel red outline around `rect`.
pub fn draw_box(img: &RgbImage, rect: PixelRect) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = (img.width(), img.height());
    if rect.w == 0 || rect.h == 0 || w == 0 || h == 0 {
        return out;
    }
    let x1 = (rect.x0 + rect.w - 1).min(w - 1);
    let y1 = (rect.y0 + rect.h - 1).min(h - 1);
    for y in rect.y0.min(h - 1)..=y1 {
        for x in rect.x0.min(w - 1)..=x1 {
            let edge = x < rect.x0 + 2 || y < rect.y0 + 2 || x + 2 > x1 || y + 2 > y1;
            if edge {
                out.put_pixel(x, y, [255, 0, 0]);
            }
        }
    }
    out
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt_text: &'a str,
    images: Vec<String>,
    temperature: f64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Client for the `/generate` text-generation protocol (MCQ only).
pub struct RemoteQaGenerator {
    endpoint: String,
    client: reqwest::blocking::Client,
    pub temperature: f64,
    pub attempts: u32,
    backoff: Duration,
}

impl RemoteQaGenerator {
    pub fn new(endpoint: impl Into<String>, temperature: f64, attempts: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            client,
            temperature,
            attempts: attempts.max(1),
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Requests an MCQ up to `attempts` times; transport failures and
    /// malformed replies both consume an attempt.
    pub fn generate(&self, prompt_text: &str, images: &[RgbImage]) -> Result<ParsedMcq> {
        let images = images
            .iter()
            .map(|i| i.to_png_bytes().map(|b| base64::engine::general_purpose::STANDARD.encode(b)))
            .collect::<Result<Vec<_>>>()?;
        let body = GenerateRequest {
            prompt_text,
            images,
            temperature: self.temperature,
        };
        let url = format!("{}/generate", self.endpoint);
        let mut last_err = Error::Generation("no attempt made".into());
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let reply = self
                .client
                .post(&url)
                .json(&body)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<GenerateResponse>());
            match reply {
                Ok(r) => match parse_mcq(&r.text) {
                    Ok(p) => return Ok(p),
                    Err(e) => last_err = e,
                },
                Err(e) => last_err = Error::Backend(e.to_string()),
            }
        }
        Err(Error::Generation(format!(
            "/generate failed after {} attempts: {last_err}",
            self.attempts
        )))
    }
}

/// Images handed to a remote generator for one record.
pub struct QaImages<'a> {
    pub before: &'a RgbImage,
    pub after: &'a RgbImage,
}

/// Generates one record. MCQs go to `remote` when given; a generation failure
/// falls back to the template, reported through the returned flag.
pub fn generate_qa(
    subject: &QaSubject<'_>,
    qtype: QuestionType,
    ctx: &QaContext<'_>,
    remote: Option<(&RemoteQaGenerator, QaImages<'_>)>,
) -> (QARecord, bool) {
    let (gen, imgs) = match remote {
        Some(r) if qtype == QuestionType::Mcq => r,
        _ => return (template_qa(subject, qtype, ctx), false),
    };
    let (prompt, images) = match subject {
        QaSubject::Change { class, bbox, .. } => (
            mcq_instruction(Some(class)),
            vec![draw_box(imgs.before, *bbox), draw_box(imgs.after, *bbox)],
        ),
        QaSubject::NoChange => (mcq_instruction(None), vec![imgs.before.clone(), imgs.after.clone()]),
    };
    match gen.generate(&prompt, &images) {
        Ok(p) => {
            let mut rng = sample_rng(ctx.seed, ctx.sample_id);
            let [a, b, c, d] = p.options;
            let mut all = vec![a, b, c, d];
            let correct = all.remove(p.correct);
            let (opts, ans) = shuffle_options(correct, all, &mut rng);
            (record(subject, qtype, ctx, p.question, Some(opts), ans), false)
        }
        Err(e) => {
            log::warn!("{}: {e}; using the template", ctx.sample_id);
            (template_qa(subject, qtype, ctx), true)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub count: usize,
    /// Percent of change rows, rounded to two decimals.
    pub proportion: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub rows: usize,
    pub malformed: usize,
    pub malformed_lines: Vec<usize>,
    pub change_rows: usize,
    pub no_change_rows: usize,
    pub by_qtype: BTreeMap<String, usize>,
    pub classes: Vec<ClassRow>,
    /// Question length in words → number of questions.
    pub question_words: BTreeMap<usize, usize>,
    /// Question length in characters, in bins of ten (key = bin start).
    pub question_chars: BTreeMap<usize, usize>,
}

/// Summarises a JSONL dataset. Unparsable or malformed lines are counted and skipped.
pub fn dataset_stats(jsonl: &str) -> DatasetReport {
    let mut r = DatasetReport::default();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = match serde_json::from_str::<QARecord>(line) {
            Ok(rec) if rec.validate().is_ok() => rec,
            _ => {
                r.malformed += 1;
                r.malformed_lines.push(i + 1);
                continue;
            }
        };
        r.rows += 1;
        *r.by_qtype.entry(rec.qtype.as_str().to_string()).or_default() += 1;
        match &rec.class {
            Some(c) => {
                r.change_rows += 1;
                *counts.entry(c.clone()).or_default() += 1;
            }
            None => r.no_change_rows += 1,
        }
        *r.question_words.entry(rec.question.split_whitespace().count()).or_default() += 1;
        *r.question_chars.entry(rec.question.chars().count() / 10 * 10).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mut classes: Vec<ClassRow> = counts
        .into_iter()
        .map(|(class, count)| ClassRow {
            class,
            count,
            proportion: (10000.0 * count as f64 / total as f64).round() / 100.0,
        })
        .collect();
    classes.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.class.cmp(&b.class)));
    r.classes = classes;
    r
}
