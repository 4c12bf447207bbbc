//! End-to-end dataset construction: region extraction, appearance filtering,
//! encoder screening, judge validation and QA emission, with per-candidate
//! decision trails and stage counters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, GeneratorKind, QuestionType};
use crate::embedding::{screen_embeddings, EncoderBackend, PromptBank, ScreenConfig, ScreenDecision, ScreenVerdict};
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::judge::{Judge, JudgeBackend, JudgeConfig, JudgeQuery, SelectionMode};
use crate::patch::{keep_patch, PatchDecision};
use crate::qa::{generate_qa, QARecord, QaContext, QaImages, QaSubject, RemoteQaGenerator};
use crate::raster::{crop, diff_mask, load_image_png, load_mask_png, ClassMap, PixelRect, RgbImage, SemanticMask};
use crate::regions::{extract_candidates, ChangeRegion, RegionThresholds};

/// One line of the pairs manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub before_image: PathBuf,
    pub after_image: PathBuf,
    pub before_mask: PathBuf,
    pub after_mask: PathBuf,
}

/// Reads a JSONL pairs manifest; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PairEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut p: PairEntry = serde_json::from_str(line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
        for f in [&mut p.before_image, &mut p.after_image, &mut p.before_mask, &mut p.after_mask] {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// A pair with its images and masks decoded.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub pair_id: String,
    pub before_image: RgbImage,
    pub after_image: RgbImage,
    pub before_mask: SemanticMask,
    pub after_mask: SemanticMask,
}

impl LoadedPair {
    pub fn new(
        pair_id: impl Into<String>,
        before_image: RgbImage,
        after_image: RgbImage,
        before_mask: SemanticMask,
        after_mask: SemanticMask,
    ) -> Result<Self> {
        let dims = (before_image.width(), before_image.height());
        let all = [
            (after_image.width(), after_image.height()),
            (before_mask.width(), before_mask.height()),
            (after_mask.width(), after_mask.height()),
        ];
        if all.iter().any(|d| *d != dims) {
            return Err(Error::Shape("pair images and masks differ in size".into()));
        }
        Ok(Self {
            pair_id: pair_id.into(),
            before_image,
            after_image,
            before_mask,
            after_mask,
        })
    }

    pub fn load(entry: &PairEntry, num_classes: usize) -> Result<Self> {
        Self::new(
            entry.pair_id.clone(),
            load_image_png(&entry.before_image)?,
            load_image_png(&entry.after_image)?,
            load_mask_png(&entry.before_mask, num_classes)?,
            load_mask_png(&entry.after_mask, num_classes)?,
        )
    }

    pub fn width(&self) -> u32 {
        self.before_image.width()
    }

    pub fn height(&self) -> u32 {
        self.before_image.height()
    }
}

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RegionExtract,
    PatchFilter,
    Encoder,
    NoChangeCheck,
    Judge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecision {
    Pass,
    Kept,
    Discarded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrailStep {
    pub stage: Stage,
    pub decision: StepDecision,
    pub detail: String,
}

/// A surviving region together with the record of every decision taken on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateChange {
    pub pair_id: String,
    pub index: usize,
    pub region: ChangeRegion,
    /// Window both crops were cut from.
    pub crop: PixelRect,
    pub expected_class: usize,
    pub class_name: String,
    pub trail: Vec<TrailStep>,
}

impl CandidateChange {
    fn step(&mut self, stage: Stage, decision: StepDecision, detail: impl Into<String>) {
        self.trail.push(TrailStep {
            stage,
            decision,
            detail: detail.into(),
        });
    }

    pub fn kept(&self) -> bool {
        self.trail.last().is_some_and(|s| s.decision == StepDecision::Kept)
    }

    /// Stage at which the candidate was discarded, if it was.
    pub fn discarded_at(&self) -> Option<Stage> {
        self.trail
            .last()
            .filter(|s| s.decision == StepDecision::Discarded)
            .map(|s| s.stage)
    }

    /// Stages in order and exactly one terminal step, placed last.
    pub fn trail_is_well_formed(&self) -> bool {
        let terminal = self
            .trail
            .iter()
            .filter(|s| s.decision != StepDecision::Pass)
            .count();
        let ordered = self.trail.windows(2).all(|w| w[0].stage <= w[1].stage);
        terminal == 1 && ordered && self.trail.last().is_some_and(|s| s.decision != StepDecision::Pass)
    }
}

/// Stage counters. Merging is field-wise addition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub pairs_total: usize,
    pub pairs_failed: usize,
    pub total_candidates: usize,
    pub rejected_patch: usize,
    pub rejected_encoder: usize,
    /// Kept straight from the encoder without a judge call.
    pub directly_accepted: usize,
    pub forwarded_to_judge: usize,
    pub accepted_judge: usize,
    pub rejected_judge: usize,
    /// Subset of `rejected_judge`: judge confirmed the class in both dates.
    pub no_change_confirmed: usize,
    pub change_rows: usize,
    pub no_change_rows: usize,
    pub qa_fallbacks: usize,
}

impl StageStats {
    pub fn merge(&mut self, o: &StageStats) {
        self.pairs_total += o.pairs_total;
        self.pairs_failed += o.pairs_failed;
        self.total_candidates += o.total_candidates;
        self.rejected_patch += o.rejected_patch;
        self.rejected_encoder += o.rejected_encoder;
        self.directly_accepted += o.directly_accepted;
        self.forwarded_to_judge += o.forwarded_to_judge;
        self.accepted_judge += o.accepted_judge;
        self.rejected_judge += o.rejected_judge;
        self.no_change_confirmed += o.no_change_confirmed;
        self.change_rows += o.change_rows;
        self.no_change_rows += o.no_change_rows;
        self.qa_fallbacks += o.qa_fallbacks;
    }

    pub fn kept(&self) -> usize {
        self.directly_accepted + self.accepted_judge
    }

    /// Conservation identities that every run must satisfy.
    pub fn check_identities(&self) -> Result<()> {
        let forwarded = self
            .total_candidates
            .checked_sub(self.rejected_patch + self.rejected_encoder + self.directly_accepted);
        if forwarded != Some(self.forwarded_to_judge)
            || self.accepted_judge + self.rejected_judge != self.forwarded_to_judge
            || self.no_change_confirmed > self.rejected_judge
        {
            return Err(Error::Contract(format!("stage counters inconsistent: {self:?}")));
        }
        Ok(())
    }
}

/// Result of processing one pair.
#[derive(Clone, Debug, Default)]
pub struct PairOutput {
    pub candidates: Vec<CandidateChange>,
    pub records: Vec<QARecord>,
    pub stats: StageStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub candidates: Vec<CandidateChange>,
    pub records: Vec<QARecord>,
    pub stats: StageStats,
    pub failures: Vec<PairFailure>,
}

impl RunOutput {
    pub fn dataset_jsonl(&self) -> String {
        jsonl(&self.records)
    }

    pub fn candidates_jsonl(&self) -> String {
        jsonl(&self.candidates)
    }

    /// Writes `dataset.jsonl`, `candidates.jsonl` and `stats.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stats = serde_json::json!({
            "stats": self.stats,
            "failures": self.failures,
        });
        for (name, body) in [
            ("dataset.jsonl", self.dataset_jsonl()),
            ("candidates.jsonl", self.candidates_jsonl()),
            ("stats.json", serde_json::to_string_pretty(&stats)? + "\n"),
        ] {
            let p = dir.join(name);
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("rows serialize"));
        s.push('\n');
    }
    s
}

/// Everything a run needs, resolved once from the configuration.
pub struct Pipeline {
    pub config: Config,
    pub classes: ClassMap,
    pub thresholds: RegionThresholds,
    pub screen: ScreenConfig,
    pub judge_config: JudgeConfig,
    pub encoder: Arc<dyn EncoderBackend>,
    pub judge: Arc<dyn JudgeBackend>,
    pub gallery: Gallery,
    bank: PromptBank,
    generator: Option<RemoteQaGenerator>,
}

impl Pipeline {
    /// Builds backends, gallery and generator as the configuration describes.
    pub fn from_config(config: Config) -> Result<Self> {
        let classes = config.class_map()?;
        let encoder = config.build_encoder(&classes)?;
        let judge = config.build_judge(encoder.clone())?;
        Self::with_backends(config, classes, encoder, judge)
    }

    /// Uses the given backends instead of the configured ones.
    pub fn with_backends(
        config: Config,
        classes: ClassMap,
        encoder: Arc<dyn EncoderBackend>,
        judge: Arc<dyn JudgeBackend>,
    ) -> Result<Self> {
        config.validate(&classes)?;
        let thresholds = config.regions.thresholds(&classes)?;
        let screen = config.screen.screen_config(&classes)?;
        let bank = PromptBank::new(&screen.class_prompts, encoder.as_ref())?;
        let mut judge_config = config.judge.params.clone();
        let gallery = match &config.judge.gallery {
            Some(p) => Gallery::load(p, &classes, encoder.as_ref())?,
            None => {
                // nothing to retrieve from
                judge_config.few_shot = false;
                Gallery::default()
            }
        };
        let generator = match config.qa.generator {
            GeneratorKind::Template => None,
            GeneratorKind::Remote => {
                let endpoint = config
                    .qa
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("qa.endpoint required for the remote generator".into()))?;
                Some(RemoteQaGenerator::new(endpoint, config.qa.temperature, config.qa.attempts)?)
            }
        };
        Ok(Self {
            config,
            classes,
            thresholds,
            screen,
            judge_config,
            encoder,
            judge,
            gallery,
            bank,
            generator,
        })
    }

    fn judge_handle(&self) -> Judge<'_> {
        Judge {
            backend: self.judge.as_ref(),
            encoder: self.encoder.as_ref(),
            gallery: &self.gallery,
            class_names: self.classes.names(),
            config: &self.judge_config,
        }
    }

    /// Loads and processes every pair in manifest order. A pair that fails to
    /// load or process is reported and skipped.
    pub fn run(&self, pairs: &[PairEntry]) -> RunOutput {
        let results: Vec<(String, Result<PairOutput>)> = self.install(|| {
            pairs
                .par_iter()
                .map(|e| {
                    let r = LoadedPair::load(e, self.classes.len()).and_then(|p| self.process_pair(&p));
                    (e.pair_id.clone(), r)
                })
                .collect()
        });
        collect(results)
    }

    /// Processes already-loaded pairs in order.
    pub fn run_loaded(&self, pairs: &[LoadedPair]) -> RunOutput {
        let results: Vec<(String, Result<PairOutput>)> = self.install(|| {
            pairs
                .par_iter()
                .map(|p| (p.pair_id.clone(), self.process_pair(p)))
                .collect()
        });
        collect(results)
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        if self.config.jobs == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.config.jobs).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }

    /// Runs every stage on one pair.
    pub fn process_pair(&self, pair: &LoadedPair) -> Result<PairOutput> {
        let diff = diff_mask(&pair.before_mask, &pair.after_mask)?;
        let regions = extract_candidates(&pair.before_mask, &pair.after_mask, &diff, &self.thresholds)?;
        let mut out = PairOutput::default();
        out.stats.pairs_total = 1;
        for (index, region) in regions.into_iter().enumerate() {
            let cand = self.judge_candidate(pair, index, region, &mut out.stats)?;
            out.candidates.push(cand);
        }
        self.emit_rows(pair, &mut out);
        Ok(out)
    }

    fn judge_candidate(
        &self,
        pair: &LoadedPair,
        index: usize,
        region: ChangeRegion,
        stats: &mut StageStats,
    ) -> Result<CandidateChange> {
        let margin = self.config.screen.crop_margin;
        let window = region.bbox.expand_clamped(margin, pair.width(), pair.height());
        let before = crop(&pair.before_image, window, 0)?;
        let after = crop(&pair.after_image, window, 0)?;
        let class = region.class_id;
        let mut c = CandidateChange {
            pair_id: pair.pair_id.clone(),
            index,
            crop: window,
            expected_class: class,
            class_name: self.classes.name(class).unwrap_or("?").to_string(),
            trail: Vec::new(),
            region,
        };
        stats.total_candidates += 1;
        c.step(
            Stage::RegionExtract,
            StepDecision::Pass,
            format!(
                "size={} iou={:.4} changed={:.4}",
                c.region.size, c.region.iou, c.region.changed_ratio
            ),
        );

        if self.config.patch_filter.enabled {
            match keep_patch(&after, &self.config.patch_filter)? {
                PatchDecision::Keep => c.step(Stage::PatchFilter, StepDecision::Pass, "keep"),
                PatchDecision::Reject(why) => {
                    stats.rejected_patch += 1;
                    c.step(Stage::PatchFilter, StepDecision::Discarded, format!("{why:?}").to_lowercase());
                    return Ok(c);
                }
            }
        }

        let enc = self.encoder.as_ref();
        let d = screen_embeddings(
            &enc.embed_image(&before)?,
            &enc.embed_image(&after)?,
            class,
            &self.screen,
            &self.bank,
        )?;
        let detail = screen_detail(&d);
        let judge = self.judge_handle();

        if self.config.pipeline.keep_encoder_discards {
            // a class missing from top-k is added outright,
            // everything else goes to the judge
            if d.verdict == ScreenVerdict::Discard {
                stats.directly_accepted += 1;
                c.step(Stage::Encoder, StepDecision::Kept, detail);
                return Ok(c);
            }
            c.step(Stage::Encoder, StepDecision::Pass, detail);
            stats.forwarded_to_judge += 1;
            let o = judge.judge_query(&JudgeQuery {
                before: &before,
                after: &after,
                class,
            })?;
            return Ok(self.finish_judge(c, o.score, stats));
        }

        match d.verdict {
            ScreenVerdict::Discard => {
                stats.rejected_encoder += 1;
                c.step(Stage::Encoder, StepDecision::Discarded, detail);
                return Ok(c);
            }
            ScreenVerdict::Accept if !d.no_change_suspect => {
                stats.directly_accepted += 1;
                c.step(Stage::Encoder, StepDecision::Kept, detail);
                return Ok(c);
            }
            _ => c.step(Stage::Encoder, StepDecision::Pass, detail),
        }
        stats.forwarded_to_judge += 1;

        if d.no_change_suspect {
            let o = judge.score_image(&before, class, class)?;
            if self.judge_config.acceptance().accepts(o.score) {
                stats.rejected_judge += 1;
                stats.no_change_confirmed += 1;
                c.step(
                    Stage::NoChangeCheck,
                    StepDecision::Discarded,
                    format!("class present before, score={}", o.score),
                );
                return Ok(c);
            }
            c.step(
                Stage::NoChangeCheck,
                StepDecision::Pass,
                format!("class absent before, score={}", o.score),
            );
            if d.verdict == ScreenVerdict::Accept {
                stats.accepted_judge += 1;
                c.step(Stage::Judge, StepDecision::Kept, "screen accepted");
                return Ok(c);
            }
        }

        // ambiguous
        let q = JudgeQuery {
            before: &before,
            after: &after,
            class,
        };
        if self.judge_config.hypotheses <= 1 {
            let o = judge.judge_query(&q)?;
            return Ok(self.finish_judge(c, o.score, stats));
        }
        let hyps = self.hypotheses(&after, class)?;
        let sel = judge.best_of_n(&q, &hyps, self.judge_config.mode)?;
        let acc = self.judge_config.acceptance();
        let keep = sel.selected.contains(&0)
            && (self.judge_config.mode == SelectionMode::Threshold || acc.accepts(sel.scores[0]));
        let detail = format!("hypotheses={hyps:?} scores={:?} selected={:?}", sel.scores, sel.selected);
        if keep {
            stats.accepted_judge += 1;
            c.step(Stage::Judge, StepDecision::Kept, detail);
        } else {
            stats.rejected_judge += 1;
            c.step(Stage::Judge, StepDecision::Discarded, detail);
        }
        Ok(c)
    }

    fn finish_judge(&self, mut c: CandidateChange, score: u8, stats: &mut StageStats) -> CandidateChange {
        if self.judge_config.acceptance().accepts(score) {
            stats.accepted_judge += 1;
            c.step(Stage::Judge, StepDecision::Kept, format!("score={score}"));
        } else {
            stats.rejected_judge += 1;
            c.step(Stage::Judge, StepDecision::Discarded, format!("score={score}"));
        }
        c
    }

    /// The candidate's class followed by its strongest competitors on the after crop.
    fn hypotheses(&self, after: &RgbImage, class: usize) -> Result<Vec<usize>> {
        let ranked = self.bank.rank(&self.encoder.embed_image(after)?)?;
        let mut h = vec![class];
        h.extend(
            ranked
                .into_iter()
                .map(|(c, _)| c)
                .filter(|&c| c != class)
                .take(self.judge_config.hypotheses - 1),
        );
        Ok(h)
    }

    fn emit_rows(&self, pair: &LoadedPair, out: &mut PairOutput) {
        let qa = &self.config.qa;
        let kept: Vec<&CandidateChange> = out.candidates.iter().filter(|c| c.kept()).collect();
        let mut rows = Vec::new();
        let mut fallbacks = 0;
        let mut push = |subject: QaSubject<'_>, qtype: QuestionType, sample_id: String| {
            let ctx = QaContext {
                pair_id: &pair.pair_id,
                sample_id: &sample_id,
                width: pair.width(),
                height: pair.height(),
                classes: &self.classes,
                distractor_exclude: &qa.distractor_exclude,
                seed: self.config.seed,
            };
            let remote = self.generator.as_ref().map(|g| {
                (
                    g,
                    QaImages {
                        before: &pair.before_image,
                        after: &pair.after_image,
                    },
                )
            });
            let (rec, fell_back) = generate_qa(&subject, qtype, &ctx, remote);
            fallbacks += fell_back as usize;
            rows.push(rec);
        };
        for c in &kept {
            let subject = QaSubject::Change {
                class: &c.class_name,
                appeared: c.region.appeared(),
                bbox: c.region.bbox,
            };
            for &t in &qa.types {
                push(subject, t, format!("{}-c{}-{}", pair.pair_id, c.index, t.as_str()));
            }
        }
        let change_rows = kept.len() * qa.types.len();
        if kept.is_empty() {
            for j in 0..qa.no_change_rows_per_pair {
                let t = qa.types[j % qa.types.len()];
                push(QaSubject::NoChange, t, format!("{}-n{}-{}", pair.pair_id, j, t.as_str()));
            }
        }
        out.stats.change_rows += change_rows;
        out.stats.no_change_rows += rows.len() - change_rows;
        out.stats.qa_fallbacks += fallbacks;
        out.records = rows;
    }
}

fn screen_detail(d: &ScreenDecision) -> String {
    format!(
        "{:?} after_sim={:.4} before_sim={:.4} crop_sim={:.4}{}",
        d.verdict,
        d.after_similarity,
        d.before_similarity,
        d.crop_similarity,
        if d.no_change_suspect { " no_change_suspect" } else { "" }
    )
    .to_lowercase()
}

fn collect(results: Vec<(String, Result<PairOutput>)>) -> RunOutput {
    let mut out = RunOutput::default();
    for (pair_id, r) in results {
        out.stats.pairs_total += 1;
        match r {
            Ok(p) => {
                let mut s = p.stats;
                s.pairs_total = 0;
                out.stats.merge(&s);
                out.candidates.extend(p.candidates);
                out.records.extend(p.records);
            }
            Err(e) => {
                log::error!("pair {pair_id}: {e}");
                out.stats.pairs_failed += 1;
                out.failures.push(PairFailure {
                    pair_id,
                    error: e.to_string(),
                });
            }
        }
    }
    out
}

/// Outcome of pushing random crops through the screening and judging stages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_crops: usize,
    pub passed: usize,
    pub rejected_patch: usize,
    pub rejected_encoder: usize,
    pub rejected_judge: usize,
    pub pass_rate: f64,
    /// Binomial standard error of `pass_rate`.
    pub standard_error: f64,
}

impl Pipeline {
    /// Draws `n_crops` seeded uniform crops (masks ignored), each with a uniformly
    /// drawn class hypothesis. Crops not discarded by the encoder are judged on
    /// the after crop; a crop passes when the judge accepts.
    pub fn random_crop_audit(&self, pairs: &[LoadedPair], n_crops: usize, seed: u64) -> Result<AuditReport> {
        if n_crops < 1 {
            return Err(Error::Contract("random crop audit needs n_crops >= 1".into()));
        }
        if pairs.is_empty() {
            return Err(Error::Contract("random crop audit needs at least one pair".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = self.config.audit.crop_size.max(1);
        let draws: Vec<(usize, PixelRect, usize)> = (0..n_crops)
            .map(|_| {
                let p = rng.gen_range(0..pairs.len());
                let (w, h) = (pairs[p].width(), pairs[p].height());
                let (cw, ch) = (size.min(w), size.min(h));
                let x0 = rng.gen_range(0..=w - cw);
                let y0 = rng.gen_range(0..=h - ch);
                let class = rng.gen_range(0..self.classes.len());
                (p, PixelRect::new(x0, y0, cw, ch), class)
            })
            .collect();

        #[derive(Clone, Copy)]
        enum Fate {
            Patch,
            Encoder,
            Judge,
            Pass,
        }
        let fates = self.install(|| {
            draws
                .par_iter()
                .map(|&(p, rect, class)| -> Result<Fate> {
                    let before = crop(&pairs[p].before_image, rect, 0)?;
                    let after = crop(&pairs[p].after_image, rect, 0)?;
                    if self.config.patch_filter.enabled
                        && keep_patch(&after, &self.config.patch_filter)? != PatchDecision::Keep
                    {
                        return Ok(Fate::Patch);
                    }
                    let enc = self.encoder.as_ref();
                    let d = screen_embeddings(
                        &enc.embed_image(&before)?,
                        &enc.embed_image(&after)?,
                        class,
                        &self.screen,
                        &self.bank,
                    )?;
                    if d.verdict == ScreenVerdict::Discard {
                        return Ok(Fate::Encoder);
                    }
                    let o = self.judge_handle().score_image(&after, class, class)?;
                    Ok(if self.judge_config.acceptance().accepts(o.score) {
                        Fate::Pass
                    } else {
                        Fate::Judge
                    })
                })
                .collect::<Result<Vec<Fate>>>()
        })?;
        let mut r = AuditReport {
            n_crops,
            ..Default::default()
        };
        for f in fates {
            match f {
                Fate::Patch => r.rejected_patch += 1,
                Fate::Encoder => r.rejected_encoder += 1,
                Fate::Judge => r.rejected_judge += 1,
                Fate::Pass => r.passed += 1,
            }
        }
        let n = n_crops as f64;
        r.pass_rate = r.passed as f64 / n;
        r.standard_error = (r.pass_rate * (1.0 - r.pass_rate) / n).sqrt();
        Ok(r)
    }
}
