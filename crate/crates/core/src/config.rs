//! Run configuration, read from TOML.
//!
//! Relative paths inside the file resolve against the file's own directory.
//! Every section is optional; omitted keys take the defaults below.
//!
//! ```toml
//! seed = 42
//! class_map = "classes.tsv"
//!
//! [regions]
//! connectivity = 8
//! min_size = 50
//! changed_threshold = 0.3
//! iou_threshold = 0.18
//! iou_direction = "reject_below"   # or "reject_above"
//! [regions.per_class.building]
//! min_size = 30
//!
//! [patch_filter]
//! enabled = false
//!
//! [screen]
//! k = 5
//! tau_enc = 0.5
//! tau_sim = 0.9
//! crop_margin = 16
//! prompt_template = "a satellite image of a {class}"
//!
//! [judge]
//! tau = 4.0
//! context_size = 4
//! gallery = "gallery.jsonl"
//!
//! [qa]
//! types = ["yes_no", "mcq", "open"]
//! generator = "template"
//!
//! [encoder]
//! kind = "mock"          # or "remote" with `endpoint` and `cache_dir`
//! rule = "palette"
//! [[encoder.palette]]
//! color = [200, 40, 40]
//! class = "building"
//!
//! [judge_backend]
//! kind = "mock"
//! mock_rule = "pinned"
//! score = 5
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{EncoderBackend, Embedding, MockEncoder, MockImageRule, RemoteEncoder, ScreenConfig};
use crate::error::{Error, Result};
use crate::judge::{JudgeBackend, JudgeConfig, MockJudge, RemoteJudge};
use crate::patch::PatchFilterConfig;
use crate::raster::ClassMap;
use crate::regions::{Connectivity, IouDirection, RegionThresholds};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassOverride {
    pub min_size: Option<usize>,
    pub changed_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionsConfig {
    pub connectivity: Connectivity,
    pub min_size: usize,
    pub changed_threshold: f64,
    pub iou_threshold: f64,
    pub iou_direction: IouDirection,
    pub per_class: BTreeMap<String, ClassOverride>,
}

impl Default for RegionsConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eight,
            min_size: 50,
            changed_threshold: 0.3,
            iou_threshold: 0.18,
            iou_direction: IouDirection::RejectBelow,
            per_class: BTreeMap::new(),
        }
    }
}

impl RegionsConfig {
    pub fn thresholds(&self, classes: &ClassMap) -> Result<RegionThresholds> {
        let mut th = RegionThresholds::uniform(
            classes.len(),
            self.min_size,
            self.changed_threshold,
            self.iou_threshold,
            self.iou_direction,
        );
        th.connectivity = self.connectivity;
        for (name, ov) in &self.per_class {
            let k = classes
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("regions.per_class: unknown class {name:?}")))?;
            if let Some(s) = ov.min_size {
                th.min_size[k] = s;
            }
            if let Some(c) = ov.changed_threshold {
                th.changed_threshold[k] = c;
            }
        }
        th.validate(classes.len())?;
        Ok(th)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub k: usize,
    pub tau_enc: f64,
    pub tau_sim: f64,
    pub crop_margin: u32,
    /// `{class}` is replaced by the class name.
    pub prompt_template: String,
    /// Per-class prompt text, overriding the template.
    pub class_prompts: BTreeMap<String, String>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self {
            k: 5,
            tau_enc: 0.5,
            tau_sim: 0.9,
            crop_margin: 16,
            prompt_template: "a satellite image of a {class}".into(),
            class_prompts: BTreeMap::new(),
        }
    }
}

impl ScreenSection {
    pub fn prompts(&self, classes: &ClassMap) -> Result<Vec<String>> {
        for name in self.class_prompts.keys() {
            if classes.index_of(name).is_none() {
                return Err(Error::Config(format!("screen.class_prompts: unknown class {name:?}")));
            }
        }
        Ok(classes
            .names()
            .iter()
            .map(|n| {
                self.class_prompts
                    .get(n)
                    .cloned()
                    .unwrap_or_else(|| self.prompt_template.replace("{class}", n))
            })
            .collect())
    }

    pub fn screen_config(&self, classes: &ClassMap) -> Result<ScreenConfig> {
        let cfg = ScreenConfig {
            k: self.k,
            tau_enc: self.tau_enc,
            tau_sim: self.tau_sim,
            class_prompts: self.prompts(classes)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    #[serde(flatten)]
    pub params: JudgeConfig,
    /// Exemplar manifest (JSONL). Without one the judge runs zero-shot.
    pub gallery: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    YesNo,
    Mcq,
    Open,
}

impl QuestionType {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuestionType::YesNo => "yes_no",
            QuestionType::Mcq => "mcq",
            QuestionType::Open => "open",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Template,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub types: Vec<QuestionType>,
    pub generator: GeneratorKind,
    /// Rows emitted for every pair that ends up with no kept change.
    pub no_change_rows_per_pair: usize,
    pub temperature: f64,
    pub attempts: u32,
    /// `/generate` endpoint for the remote generator.
    pub endpoint: Option<String>,
    /// Classes never offered as MCQ distractors.
    pub distractor_exclude: Vec<String>,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            types: vec![QuestionType::YesNo, QuestionType::Mcq, QuestionType::Open],
            generator: GeneratorKind::Template,
            no_change_rows_per_pair: 1,
            temperature: 0.9,
            attempts: 3,
            endpoint: None,
            distractor_exclude: vec!["background".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineFlags {
    /// Candidates whose class is missing from the encoder's top-k are added to
    /// the dataset instead of being discarded; everything else goes to the judge.
    pub keep_encoder_discards: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEncoderRule {
    #[default]
    Hash,
    Palette,
    Pinned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteEntry {
    pub color: [u8; 3],
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub dim: usize,
    pub rule: MockEncoderRule,
    pub palette: Vec<PaletteEntry>,
    pub palette_tolerance: u8,
    /// For `rule = "pinned"`: the class every image looks like. Absent means
    /// a direction orthogonal to every class prompt.
    pub pinned_class: Option<String>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            cache_dir: None,
            dim: 64,
            rule: MockEncoderRule::Hash,
            palette: Vec::new(),
            palette_tolerance: 24,
            pinned_class: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockJudgeRule {
    #[default]
    Pinned,
    Fixtures,
    HashFraction,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeBackendSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub mock_rule: MockJudgeRule,
    pub score: u8,
    pub fixtures: Option<PathBuf>,
    pub default_score: u8,
    pub accept_fraction: f64,
}

impl Default for JudgeBackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            mock_rule: MockJudgeRule::Pinned,
            score: 5,
            fixtures: None,
            default_score: 1,
            accept_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub crop_size: u32,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { crop_size: 64 }
    }
}

#[derive(Default, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub class_map: Option<PathBuf>,
    /// Inline class names, used when `class_map` is absent.
    pub classes: Vec<String>,
    pub regions: RegionsConfig,
    pub patch_filter: PatchFilterConfig,
    pub screen: ScreenSection,
    pub judge: JudgeSection,
    pub qa: QaConfig,
    pub pipeline: PipelineFlags,
    pub encoder: EncoderSection,
    pub judge_backend: JudgeBackendSection,
    pub audit: AuditConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        resolve(base, &mut cfg.class_map);
        resolve(base, &mut cfg.judge.gallery);
        resolve(base, &mut cfg.encoder.cache_dir);
        resolve(base, &mut cfg.judge_backend.fixtures);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn class_map(&self) -> Result<ClassMap> {
        match &self.class_map {
            Some(p) => ClassMap::load(p),
            None if !self.classes.is_empty() => ClassMap::new(self.classes.clone()),
            None => Err(Error::Config("either class_map or classes must be set".into())),
        }
    }

    pub fn validate(&self, classes: &ClassMap) -> Result<()> {
        self.regions.thresholds(classes)?;
        self.patch_filter.validate()?;
        self.screen.screen_config(classes)?;
        self.judge.params.validate()?;
        if self.qa.types.is_empty() {
            return Err(Error::Config("qa.types must list at least one type".into()));
        }
        Ok(())
    }

    pub fn build_encoder(&self, classes: &ClassMap) -> Result<Arc<dyn EncoderBackend>> {
        let e = &self.encoder;
        match e.kind {
            BackendKind::Remote => {
                let endpoint = e
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("encoder.endpoint required for remote".into()))?;
                Ok(Arc::new(RemoteEncoder::new(endpoint, e.cache_dir.clone())?))
            }
            BackendKind::Mock => {
                let prompts = self.screen.prompts(classes)?;
                let structured = e.rule != MockEncoderRule::Hash;
                if structured && e.dim <= classes.len() {
                    return Err(Error::Config(format!(
                        "encoder.dim must exceed the class count ({}) for the {:?} rule",
                        classes.len(),
                        e.rule
                    )));
                }
                let mut enc = MockEncoder::new(e.dim);
                if structured {
                    // class prompt i embeds to axis i
                    for (i, p) in prompts.iter().enumerate() {
                        enc = enc.override_text(p.clone(), Embedding::basis(e.dim, i));
                    }
                }
                let class_axis = |name: &str| {
                    classes
                        .index_of(name)
                        .map(|i| Embedding::basis(e.dim, i))
                        .ok_or_else(|| Error::Config(format!("encoder: unknown class {name:?}")))
                };
                let rule = match e.rule {
                    MockEncoderRule::Hash => MockImageRule::Hash,
                    MockEncoderRule::Pinned => MockImageRule::Pinned(match &e.pinned_class {
                        Some(c) => class_axis(c)?,
                        None => Embedding::basis(e.dim, e.dim - 1),
                    }),
                    MockEncoderRule::Palette => MockImageRule::Palette {
                        colors: e
                            .palette
                            .iter()
                            .map(|p| class_axis(&p.class).map(|v| (p.color, v)))
                            .collect::<Result<_>>()?,
                        tolerance: e.palette_tolerance,
                    },
                };
                Ok(Arc::new(enc.with_rule(rule)))
            }
        }
    }

    pub fn build_judge(&self, encoder: Arc<dyn EncoderBackend>) -> Result<Arc<dyn JudgeBackend>> {
        let j = &self.judge_backend;
        match j.kind {
            BackendKind::Remote => {
                let endpoint = j
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("judge_backend.endpoint required for remote".into()))?;
                Ok(Arc::new(RemoteJudge::new(endpoint)?))
            }
            BackendKind::Mock => Ok(Arc::new(match j.mock_rule {
                MockJudgeRule::Pinned => MockJudge::Pinned(j.score),
                MockJudgeRule::Fixtures => {
                    let path = j.fixtures.as_ref().ok_or_else(|| {
                        Error::Config("judge_backend.fixtures required for the fixtures rule".into())
                    })?;
                    MockJudge::load_fixtures(path, j.default_score)?
                }
                MockJudgeRule::HashFraction => MockJudge::HashFraction {
                    accept_fraction: j.accept_fraction,
                    accept: 5,
                    reject: 1,
                },
                MockJudgeRule::Cosine => MockJudge::CosineRule(encoder),
            })),
        }
    }
}
