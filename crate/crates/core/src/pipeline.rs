//! Staged batch pipeline driven by one TOML file.
//!
//! Every stage reads only artifacts written by earlier stages under the
//! output directory and records what it wrote, with input digests, in
//! `manifest.json`. All randomness derives from the single master seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::{identifier_mia, k_extractability, loss_mia, AttackResult, Extractability, MembershipSplit};
use crate::corpus::{
    ingest_corpus, segment_corpus, write_file, Corpus, CorpusFormat, PatientId, Sequence,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{audit_causal, audit_masked, summary_csv, Audit, CausalAuditConfig, SummaryRow};
use crate::identify::{
    build_blacklist, identifier_stats, indirect_identifiers, pseudonymize, read_annotations,
    tag_direct, write_annotations, BipartiteGraph, Blacklist, DirectTag, RuleSet, RuleTagger,
};
use crate::maskplan::{apply_plan, plan_causal, plan_masked, MaskPlan, Objective, Protection, Scheme, TrainingExample};
use crate::seed;
use crate::synth::{generate, SynthSpec};
use crate::tinylm::{Attention, Checkpoint, DpConfig, Model, ModelConfig, Provenance, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Blacklist,
    Stats,
    Plan,
    Train,
    Audit,
    Attack,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Blacklist,
        Stage::Stats,
        Stage::Plan,
        Stage::Train,
        Stage::Audit,
        Stage::Attack,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Blacklist => "blacklist",
            Stage::Stats => "stats",
            Stage::Plan => "plan",
            Stage::Train => "train",
            Stage::Audit => "audit",
            Stage::Attack => "attack",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    #[default]
    Records,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: SourceFormat,
    /// Generate a synthetic corpus instead of reading one.
    pub synth: Option<SynthSpec>,
}

/// Direct identifiers come from rules, from external annotations, or, for
/// synthetic corpora, from the generator's own rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerSection {
    pub rules: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub k: usize,
    pub n_max: usize,
}

impl Default for IdentifySection {
    fn default() -> Self {
        IdentifySection { k: 2, n_max: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemesSection {
    pub names: Vec<String>,
    pub mask_rate: f64,
}

impl Default for SchemesSection {
    fn default() -> Self {
        SchemesSection {
            names: vec!["mlm".into(), "PPmlm".into()],
            mask_rate: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_length: usize,
    /// Window advance in words; defaults to `context_length - 1`.
    pub stride: Option<usize>,
    pub min_count: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 32,
            hidden_dim: 64,
            context_length: 64,
            stride: None,
            min_count: 1,
        }
    }
}

impl ModelSection {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.context_length.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub dp: Option<DpConfig>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::new(64, 0);
        TrainSection {
            epochs: base.epochs,
            milestones: vec![4, 8, 16, 32, 64],
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            max_grad_norm: None,
            dp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub top_k: usize,
    pub prefix_lengths: Vec<usize>,
    pub gen_length: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        let c = CausalAuditConfig::default();
        AuditSection {
            top_k: c.top_k,
            prefix_lengths: c.prefix_lengths,
            gen_length: c.gen_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Share of patients whose documents are used for training.
    pub member_fraction: f64,
    pub k_prefix: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            member_fraction: 0.5,
            k_prefix: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Not part of the recorded configuration, so identical runs into
    /// different directories produce identical manifests.
    #[serde(skip_serializing)]
    pub output: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub tagger: TaggerSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub schemes: SchemesSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub audit: AuditSection,
    /// Membership split and attacks; absent means every patient trains.
    pub attack: Option<AttackSection>,
}

fn default_seed() -> u64 {
    7
}

impl PipelineConfig {
    /// Parse a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        for p in [
            &mut self.corpus.path,
            &mut self.tagger.rules,
            &mut self.tagger.annotations,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        match (&self.corpus.path, &self.corpus.synth) {
            (Some(_), Some(_)) => v.push("corpus: give either `path` or `synth`, not both".into()),
            (None, None) => v.push("corpus: one of `path` or `synth` is required".into()),
            (Some(p), None) if !p.exists() => {
                v.push(format!("corpus.path {} does not exist", p.display()))
            }
            (None, Some(spec)) => {
                if let Err(Error::Config(problems)) = spec.validate() {
                    v.extend(problems.into_iter().map(|p| format!("corpus.synth: {p}")));
                }
            }
            _ => {}
        }
        if self.tagger.rules.is_some() && self.tagger.annotations.is_some() {
            v.push("tagger: give either `rules` or `annotations`, not both".into());
        }
        for (name, p) in [("rules", &self.tagger.rules), ("annotations", &self.tagger.annotations)] {
            if let Some(p) = p {
                if !p.exists() {
                    v.push(format!("tagger.{name} {} does not exist", p.display()));
                }
            }
        }
        if self.identify.k < 1 {
            v.push("identify.k must be at least 1".into());
        }
        if self.identify.n_max < 1 {
            v.push("identify.n_max must be at least 1".into());
        }
        if self.schemes.names.is_empty() {
            v.push("schemes.names must not be empty".into());
        }
        let mut seen = BTreeSet::new();
        for n in &self.schemes.names {
            if n.parse::<Scheme>().is_err() {
                v.push(format!("schemes.names: unknown scheme `{n}`"));
            }
            if !seen.insert(n) {
                v.push(format!("schemes.names: `{n}` listed twice"));
            }
        }
        if !(self.schemes.mask_rate > 0.0 && self.schemes.mask_rate <= 1.0) {
            v.push("schemes.mask_rate must be in (0, 1]".into());
        }
        let m = &self.model;
        if m.embed_dim < 1 || m.hidden_dim < 1 {
            v.push("model dimensions must be at least 1".into());
        }
        if m.context_length < 2 {
            v.push("model.context_length must be at least 2".into());
        } else if m.stride() < 1 || m.stride() > m.context_length - 1 {
            v.push("model.stride must be in 1..context_length".into());
        }
        if m.min_count < 1 {
            v.push("model.min_count must be at least 1".into());
        }
        let t = &self.train;
        if t.epochs < 1 {
            v.push("train.epochs must be at least 1".into());
        }
        if t.milestones.is_empty() {
            v.push("train.milestones must not be empty".into());
        }
        if t.milestones.windows(2).any(|w| w[0] >= w[1]) {
            v.push("train.milestones must be sorted ascending without repeats".into());
        }
        if t.milestones.iter().any(|&e| e < 1 || e > t.epochs) {
            v.push(format!("train.milestones must lie in 1..={}", t.epochs));
        }
        if t.batch_size < 1 {
            v.push("train.batch_size must be at least 1".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            v.push("train.learning_rate must be positive and finite".into());
        }
        if t.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            v.push("train.max_grad_norm must be positive".into());
        }
        if let Some(dp) = t.dp {
            if !(dp.clip_norm > 0.0) {
                v.push("train.dp.clip_norm must be positive".into());
            }
            if !(dp.noise_multiplier >= 0.0 && dp.noise_multiplier.is_finite()) {
                v.push("train.dp.noise_multiplier must be a finite value ≥ 0".into());
            }
        }
        let a = &self.audit;
        if a.top_k < 1 {
            v.push("audit.top_k must be at least 1".into());
        }
        if a.prefix_lengths.is_empty() || a.prefix_lengths.contains(&0) {
            v.push("audit.prefix_lengths must be non-empty and positive".into());
        }
        if a.gen_length < 1 {
            v.push("audit.gen_length must be at least 1".into());
        }
        if let Some(at) = &self.attack {
            if !(at.member_fraction > 0.0 && at.member_fraction < 1.0) {
                v.push("attack.member_fraction must be in (0, 1)".into());
            }
            if at.k_prefix < 1 {
                v.push("attack.k_prefix must be at least 1".into());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        self.schemes.names.iter().map(|n| n.parse()).collect()
    }

    fn stage_seed(&self, label: &str) -> u64 {
        seed::derive(self.seed, label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub stage: String,
    pub sha256: String,
    /// Digest of every file the producing stage read.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Split {
    members: Vec<String>,
    non_members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AttackRecord {
    scheme: String,
    epoch: usize,
    loss: AttackResult,
    identifier: AttackResult,
    extraction: Option<Extractability>,
}

const CORPUS: &str = "corpus.jsonl";
const TRAIN_CORPUS: &str = "train.jsonl";
const PSEUDO_CORPUS: &str = "train_pseudonymized.jsonl";
const SPLIT: &str = "split.json";
const TAGS: &str = "tags.csv";
const VOCAB: &str = "vocab.txt";
const BLACKLIST: &str = "blacklist.tsv";
const ADVERSARY_BLACKLIST: &str = "adversary_blacklist.tsv";
const MANIFEST: &str = "manifest.json";

pub const TRADEOFF_TABLE: &str = "report/tradeoff.csv";
pub const IDENTIFIER_CDF_HEADER: &str = "identifiers,cdf_direct,cdf_indirect";
pub const ROC_HEADER: &str = "scheme,epoch,attack,fpr,tpr";
pub const MIA_HEADER: &str = "scheme,epoch,attack,auc,tpr_at_1pct_fpr,precision,recall,f1";
pub const EXTRACTION_HEADER: &str = "scheme,epoch,attempted,extractable,skipped,fraction";

fn epoch_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}")
}

/// A configured pipeline over one output directory.
pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

/// Reads and writes of one stage, for the manifest.
struct StageIo {
    stage: Stage,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        let out = config.output.clone();
        Ok(Pipeline { config, out })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output(&self) -> &Path {
        &self.out
    }

    /// Run the given stages in pipeline order. The attack stage is skipped
    /// when no attack section is configured.
    pub fn run(&self, stages: &[Stage]) -> Result<()> {
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        for stage in Stage::ALL.into_iter().filter(|s| wanted.contains(s)) {
            if stage == Stage::Attack && self.config.attack.is_none() {
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(())
    }

    pub fn run_all(&self) -> Result<()> {
        self.run(&Stage::ALL)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        let mut io = StageIo {
            stage,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        };
        match stage {
            Stage::Ingest => self.ingest(&mut io)?,
            Stage::Blacklist => self.blacklist(&mut io)?,
            Stage::Stats => self.stats(&mut io)?,
            Stage::Plan => self.plan(&mut io)?,
            Stage::Train => self.train(&mut io)?,
            Stage::Audit => self.audit(&mut io)?,
            Stage::Attack => self.attack(&mut io)?,
            Stage::Report => {
                let written = report(&self.out)?;
                io.outputs = written;
            }
        }
        self.record(io)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Read an upstream artifact, noting its digest.
    fn read(&self, io: &mut StageIo, rel: &str, producer: Stage) -> Result<Vec<u8>> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                stage: producer.name(),
            });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        io.inputs.insert(rel.to_string(), seed::digest_hex(&bytes));
        Ok(bytes)
    }

    fn read_external(&self, io: &mut StageIo, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        io.inputs
            .insert(path.display().to_string(), seed::digest_hex(&bytes));
        Ok(())
    }

    fn write(&self, io: &mut StageIo, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.path(rel), bytes)?;
        io.outputs.push(rel.to_string());
        Ok(())
    }

    fn record(&self, io: StageIo) -> Result<()> {
        let path = self.path(MANIFEST);
        let mut manifest: Manifest = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        } else {
            Manifest::default()
        };
        manifest.config = serde_json::to_value(&self.config)?;
        manifest
            .artifacts
            .retain(|_, rec| rec.stage != io.stage.name());
        for rel in io.outputs {
            let bytes = fs::read(self.path(&rel)).map_err(|e| Error::io(self.path(&rel), e))?;
            manifest.artifacts.insert(
                rel,
                ArtifactRecord {
                    stage: io.stage.name().to_string(),
                    sha256: seed::digest_hex(&bytes),
                    inputs: io.inputs.clone(),
                },
            );
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_file(&path, text.as_bytes())
    }

    fn load_corpus(&self, io: &mut StageIo, rel: &str) -> Result<Corpus> {
        let bytes = self.read(io, rel, Stage::Ingest)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::InvalidArgument(format!("{rel}: {e}")))?;
        Corpus::parse_records(&self.path(rel), &text)
    }

    fn load_blacklist(&self, io: &mut StageIo, rel: &str) -> Result<Blacklist> {
        let bytes = self.read(io, rel, Stage::Blacklist)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::InvalidArgument(format!("{rel}: {e}")))?;
        Blacklist::parse(&self.path(rel), &text)
    }

    fn load_vocab(&self, io: &mut StageIo) -> Result<Vocabulary> {
        let bytes = self.read(io, VOCAB, Stage::Ingest)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::InvalidArgument(format!("{VOCAB}: {e}")))?;
        Vocabulary::parse(&self.path(VOCAB), &text)
    }

    fn load_tags(&self, io: &mut StageIo, corpus: &Corpus) -> Result<Vec<DirectTag>> {
        self.read(io, TAGS, Stage::Ingest)?;
        read_annotations(&self.path(TAGS), corpus)
    }

    fn load_split(&self, io: &mut StageIo, corpus: Corpus) -> Result<MembershipSplit> {
        let bytes = self.read(io, SPLIT, Stage::Ingest)?;
        let split: Split = serde_json::from_slice(&bytes)?;
        let ids = |v: Vec<String>| -> Result<BTreeSet<PatientId>> {
            v.into_iter().map(PatientId::new).collect()
        };
        MembershipSplit::new(ids(split.members)?, ids(split.non_members)?, corpus)
    }

    fn ingest(&self, io: &mut StageIo) -> Result<()> {
        let cfg = &self.config;
        let (corpus, synth_rules) = match (&cfg.corpus.path, &cfg.corpus.synth) {
            (Some(path), _) => {
                let format = match cfg.corpus.format {
                    SourceFormat::Records => {
                        self.read_external(io, path)?;
                        CorpusFormat::Records
                    }
                    SourceFormat::Directory => CorpusFormat::DirectoryTree,
                };
                (ingest_corpus(path, format)?, None)
            }
            (None, Some(spec)) => {
                let s = generate(spec)?;
                (s.corpus, Some(s.rules))
            }
            (None, None) => unreachable!("validated"),
        };
        let tags = match (&cfg.tagger.rules, &cfg.tagger.annotations) {
            (_, Some(path)) => {
                self.read_external(io, path)?;
                read_annotations(path, &corpus)?
            }
            (Some(path), None) => {
                self.read_external(io, path)?;
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let rules: RuleSet = if path.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).map_err(|e| {
                        Error::Config(vec![format!("{}: {e}", path.display())])
                    })?
                } else {
                    toml::from_str(&text).map_err(|e| {
                        Error::Config(vec![format!("{}: {}", path.display(), e.message())])
                    })?
                };
                tag_direct(&corpus, &RuleTagger::new(&rules)?)
            }
            (None, None) => {
                let rules = synth_rules.unwrap_or_default();
                tag_direct(&corpus, &RuleTagger::new(&rules)?)
            }
        };
        let train = match &cfg.attack {
            Some(at) => {
                let split = MembershipSplit::random(
                    &corpus,
                    at.member_fraction,
                    cfg.stage_seed("split"),
                )?;
                let names = |s: &BTreeSet<PatientId>| s.iter().map(|p| p.to_string()).collect();
                let record = Split {
                    members: names(&split.members),
                    non_members: names(&split.non_members),
                };
                let mut text = serde_json::to_string_pretty(&record)?;
                text.push('\n');
                self.write(io, SPLIT, text.as_bytes())?;
                split.training_corpus()
            }
            None => corpus.clone(),
        };
        self.write(io, CORPUS, corpus.to_records().as_bytes())?;
        self.write(io, TRAIN_CORPUS, train.to_records().as_bytes())?;
        write_annotations(&self.path(TAGS), &tags)?;
        io.outputs.push(TAGS.into());
        let vocab = Vocabulary::build(&train, cfg.model.min_count);
        self.write(io, VOCAB, vocab.to_file_string().as_bytes())?;
        if self.config.schemes()?.iter().any(|s| s.protection == Protection::Pseudo) {
            let train_tags: Vec<DirectTag> = tags
                .iter()
                .filter(|t| train.doc_index(&t.doc_id).is_some())
                .cloned()
                .collect();
            let pseudo = pseudonymize(&train, &train_tags);
            self.write(io, PSEUDO_CORPUS, pseudo.to_records().as_bytes())?;
        }
        Ok(())
    }

    fn tagger_name(&self) -> String {
        match (&self.config.tagger.rules, &self.config.tagger.annotations) {
            (_, Some(_)) => "external-annotations".into(),
            (Some(_), None) => "rule-tagger".into(),
            (None, None) if self.config.corpus.synth.is_some() => "synthetic-rules".into(),
            (None, None) => "none".into(),
        }
    }

    fn build(&self, corpus: &Corpus, tags: &[DirectTag]) -> Result<Blacklist> {
        let id = &self.config.identify;
        let graph = BipartiteGraph::build(corpus, id.n_max)?;
        let indirect = indirect_identifiers(&graph, id.k)?;
        let own: Vec<DirectTag> = tags
            .iter()
            .filter(|t| corpus.doc_index(&t.doc_id).is_some())
            .cloned()
            .collect();
        build_blacklist(&own, &indirect, corpus, id.k, id.n_max, &self.tagger_name())
    }

    fn blacklist(&self, io: &mut StageIo) -> Result<()> {
        let corpus = self.load_corpus(io, CORPUS)?;
        let train = self.load_corpus(io, TRAIN_CORPUS)?;
        let tags = self.load_tags(io, &corpus)?;
        let bl = self.build(&train, &tags)?;
        self.write(io, BLACKLIST, bl.to_file_string().as_bytes())?;
        if self.config.attack.is_some() {
            let adversary = self.build(&corpus, &tags)?;
            self.write(io, ADVERSARY_BLACKLIST, adversary.to_file_string().as_bytes())?;
        }
        Ok(())
    }

    fn stats(&self, io: &mut StageIo) -> Result<()> {
        let train = self.load_corpus(io, TRAIN_CORPUS)?;
        let bl = self.load_blacklist(io, BLACKLIST)?;
        let stats = identifier_stats(&train, &bl);
        self.write(io, "stats/patients.csv", stats.patients_csv().as_bytes())?;
        self.write(io, "stats/degree.csv", stats.degree_csv().as_bytes())?;
        self.write(io, "stats/ngrams.csv", stats.ngram_csv().as_bytes())?;
        Ok(())
    }

    /// Training sequences of a scheme: pseudonymized text for `Pseudo`.
    fn scheme_sequences(
        &self,
        io: &mut StageIo,
        scheme: Scheme,
        vocab: &Vocabulary,
    ) -> Result<(Corpus, Vec<Sequence>)> {
        let rel = if scheme.protection == Protection::Pseudo {
            PSEUDO_CORPUS
        } else {
            TRAIN_CORPUS
        };
        let corpus = self.load_corpus(io, rel)?;
        let m = &self.config.model;
        let seqs = segment_corpus(&corpus, vocab, m.context_length, m.stride())?;
        Ok((corpus, seqs))
    }

    fn plan_path(scheme: Scheme, epoch: usize) -> String {
        match scheme.objective {
            Objective::Masked => format!("plans/{scheme}/{}.plan", epoch_name(epoch)),
            Objective::Causal => format!("plans/{scheme}/causal.plan"),
        }
    }

    fn mask_seed(&self, epoch: usize) -> u64 {
        seed::derive_indexed(self.config.stage_seed("mask"), "epoch", epoch as u64)
    }

    fn plan(&self, io: &mut StageIo) -> Result<()> {
        let vocab = self.load_vocab(io)?;
        let bl = self.load_blacklist(io, BLACKLIST)?;
        let digest = bl.digest();
        for scheme in self.config.schemes()? {
            let (corpus, seqs) = self.scheme_sequences(io, scheme, &vocab)?;
            let flags = bl.word_flags(&corpus);
            match scheme.objective {
                Objective::Causal => {
                    let plan = plan_causal(&seqs, &flags, scheme.protection);
                    let rel = Self::plan_path(scheme, 1);
                    self.write(io, &rel, plan.to_file_string(&digest).as_bytes())?;
                }
                Objective::Masked => {
                    for epoch in 1..=self.config.train.epochs {
                        let plan = plan_masked(
                            &seqs,
                            &flags,
                            scheme.protection,
                            self.config.schemes.mask_rate,
                            self.mask_seed(epoch),
                        )?;
                        let rel = Self::plan_path(scheme, epoch);
                        self.write(io, &rel, plan.to_file_string(&digest).as_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn load_examples(
        &self,
        io: &mut StageIo,
        scheme: Scheme,
        epoch: usize,
        seqs: &[Sequence],
        digest: &str,
    ) -> Result<Vec<TrainingExample>> {
        let rel = Self::plan_path(scheme, epoch);
        let bytes = self.read(io, &rel, Stage::Plan)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::InvalidArgument(format!("{rel}: {e}")))?;
        let (plan, plan_digest): (MaskPlan, String) = MaskPlan::parse(&self.path(&rel), &text)?;
        if plan.scheme != scheme || plan_digest != digest || plan.sequences.len() != seqs.len() {
            return Err(Error::PlanMismatch(format!(
                "{rel} was planned for other inputs; re-run the `plan` stage"
            )));
        }
        seqs.iter()
            .zip(&plan.sequences)
            .map(|(s, p)| apply_plan(s, p, scheme.objective, self.config.model.context_length))
            .collect()
    }

    fn model_config(&self, vocab: &Vocabulary, scheme: Scheme) -> ModelConfig {
        let m = &self.config.model;
        ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: m.embed_dim,
            context_length: m.context_length,
            hidden_dim: m.hidden_dim,
            attention: Attention::for_objective(scheme.objective),
            seed: self.config.stage_seed("init"),
        }
    }

    fn checkpoint_path(scheme: Scheme, epoch: usize) -> String {
        format!("checkpoints/{scheme}/{}.ckpt", epoch_name(epoch))
    }

    fn train(&self, io: &mut StageIo) -> Result<()> {
        let vocab = self.load_vocab(io)?;
        let bl = self.load_blacklist(io, BLACKLIST)?;
        let digest = bl.digest();
        let t = &self.config.train;
        let milestones: BTreeSet<usize> = t.milestones.iter().copied().collect();
        for scheme in self.config.schemes()? {
            let (_, seqs) = self.scheme_sequences(io, scheme, &vocab)?;
            let mcfg = self.model_config(&vocab, scheme);
            let mut model = Model::init(mcfg)?;
            let tc = TrainConfig {
                epochs: t.epochs,
                batch_size: t.batch_size,
                learning_rate: t.learning_rate,
                seed: self.config.stage_seed("train"),
                dp: t.dp,
                max_grad_norm: t.max_grad_norm,
            };
            let mut trainer = Trainer::new(&model, tc.clone(), seqs.len())?;
            let mut causal_examples = None;
            for epoch in 1..=t.epochs {
                let examples = match scheme.objective {
                    Objective::Causal => causal_examples
                        .get_or_insert(self.load_examples(io, scheme, 1, &seqs, &digest)?)
                        .clone(),
                    Objective::Masked => self.load_examples(io, scheme, epoch, &seqs, &digest)?,
                };
                trainer.run_epoch(&mut model, &examples)?;
                if milestones.contains(&epoch) {
                    let ck = Checkpoint::new(
                        model.clone(),
                        Provenance {
                            scheme: scheme.name(),
                            epoch,
                            init_seed: mcfg.seed,
                            train_seed: tc.seed,
                            blacklist_digest: digest.clone(),
                        },
                    )?;
                    self.write(io, &Self::checkpoint_path(scheme, epoch), &ck.to_bytes())?;
                }
            }
        }
        Ok(())
    }

    fn load_checkpoint(&self, io: &mut StageIo, scheme: Scheme, epoch: usize) -> Result<Checkpoint> {
        let rel = Self::checkpoint_path(scheme, epoch);
        let bytes = self.read(io, &rel, Stage::Train)?;
        Checkpoint::from_bytes(&bytes)
    }

    fn run_audit(
        &self,
        ck: &Checkpoint,
        corpus: &Corpus,
        seqs: &[Sequence],
        vocab: &Vocabulary,
        bl: &Blacklist,
    ) -> Result<Audit> {
        let a = &self.config.audit;
        match ck.model.config().attention {
            Attention::Bidirectional => audit_masked(ck, corpus, seqs, vocab, bl, a.top_k),
            Attention::Causal => audit_causal(
                ck,
                corpus,
                seqs,
                vocab,
                bl,
                &CausalAuditConfig {
                    prefix_lengths: a.prefix_lengths.clone(),
                    gen_length: a.gen_length,
                    top_k: a.top_k,
                },
            ),
        }
    }

    fn audit(&self, io: &mut StageIo) -> Result<()> {
        let vocab = self.load_vocab(io)?;
        let bl = self.load_blacklist(io, BLACKLIST)?;
        let train = self.load_corpus(io, TRAIN_CORPUS)?;
        let m = &self.config.model;
        let seqs = segment_corpus(&train, &vocab, m.context_length, m.stride())?;
        for scheme in self.config.schemes()? {
            for &epoch in &self.config.train.milestones {
                let ck = self.load_checkpoint(io, scheme, epoch)?;
                let mut audit = self.run_audit(&ck, &train, &seqs, &vocab, &bl)?;
                audit.report.scheme = scheme.name();
                let base = format!("audits/{scheme}/{}", epoch_name(epoch));
                self.write(io, &format!("{base}.leaks.jsonl"), audit.report.to_jsonl().as_bytes())?;
                let row = SummaryRow::new(&scheme.name(), epoch, &audit);
                let mut text = serde_json::to_string_pretty(&row)?;
                text.push('\n');
                self.write(io, &format!("{base}.json"), text.as_bytes())?;
            }
        }
        Ok(())
    }

    fn attack(&self, io: &mut StageIo) -> Result<()> {
        let Some(at) = &self.config.attack else {
            return Err(Error::Config(vec![
                "the attack stage needs an [attack] section".into(),
            ]));
        };
        let vocab = self.load_vocab(io)?;
        let bl = self.load_blacklist(io, BLACKLIST)?;
        let adversary = self.load_blacklist(io, ADVERSARY_BLACKLIST)?;
        let corpus = self.load_corpus(io, CORPUS)?;
        let train = self.load_corpus(io, TRAIN_CORPUS)?;
        let split = self.load_split(io, corpus)?;
        let m = &self.config.model;
        let aux_seqs = segment_corpus(&split.auxiliary, &vocab, m.context_length, m.stride())?;
        let train_seqs = segment_corpus(&train, &vocab, m.context_length, m.stride())?;
        for scheme in self.config.schemes()? {
            for &epoch in &self.config.train.milestones {
                let ck = self.load_checkpoint(io, scheme, epoch)?;
                let loss = loss_mia(&ck, &split, &vocab, m.stride(), self.config.stage_seed("loss_mia"))?;
                let aux_audit =
                    self.run_audit(&ck, &split.auxiliary, &aux_seqs, &vocab, &adversary)?;
                let identifier = identifier_mia(&aux_audit.report, &adversary, &split);
                let extraction = match scheme.objective {
                    Objective::Causal => Some(k_extractability(&ck, &train, &train_seqs, &bl, at.k_prefix)?),
                    Objective::Masked => None,
                };
                let record = AttackRecord {
                    scheme: scheme.name(),
                    epoch,
                    loss,
                    identifier,
                    extraction,
                };
                let mut text = serde_json::to_string_pretty(&record)?;
                text.push('\n');
                let rel = format!("attacks/{scheme}/{}.json", epoch_name(epoch));
                self.write(io, &rel, text.as_bytes())?;
            }
        }
        Ok(())
    }
}

fn sorted_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut schemes: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    schemes.sort();
    for s in schemes {
        let mut files: Vec<PathBuf> = fs::read_dir(&s)
            .map_err(|e| Error::io(&s, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_str().is_some_and(|n| n.ends_with(suffix)))
            .collect();
        files.sort();
        out.extend(files);
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Fraction of patients with at most `c` identifiers, for every count `c`.
pub fn identifier_cdf(counts: &[(usize, usize)]) -> String {
    let mut out = format!("{IDENTIFIER_CDF_HEADER}\n");
    let n = counts.len();
    if n == 0 {
        return out;
    }
    let max = counts.iter().map(|c| c.0.max(c.1)).max().unwrap_or(0);
    for c in 0..=max {
        let d = counts.iter().filter(|x| x.0 <= c).count() as f64 / n as f64;
        let i = counts.iter().filter(|x| x.1 <= c).count() as f64 / n as f64;
        out.push_str(&format!("{c},{d:.6},{i:.6}\n"));
    }
    out
}

/// Summary tables from the artifacts under `dir`. Returns the written paths
/// relative to `dir`.
pub fn report(dir: &Path) -> Result<Vec<String>> {
    let rows = sorted_files(&dir.join("audits"), ".json")?;
    if rows.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.join("audits"),
            stage: Stage::Audit.name(),
        });
    }
    let mut rows: Vec<SummaryRow> = rows.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.epoch.cmp(&b.epoch)));
    let mut written = Vec::new();
    let mut put = |rel: &str, text: String| -> Result<()> {
        write_file(&dir.join(rel), text.as_bytes())?;
        written.push(rel.to_string());
        Ok(())
    };
    put(TRADEOFF_TABLE, summary_csv(&rows))?;

    let (train, bl) = (dir.join(TRAIN_CORPUS), dir.join(BLACKLIST));
    if train.exists() && bl.exists() {
        let corpus = ingest_corpus(&train, CorpusFormat::Records)?;
        let stats = identifier_stats(&corpus, &Blacklist::read(&bl)?);
        let counts: Vec<(usize, usize)> =
            stats.patients.iter().map(|p| (p.direct, p.indirect)).collect();
        put("report/identifier_cdf.csv", identifier_cdf(&counts))?;
    }

    let attacks = sorted_files(&dir.join("attacks"), ".json")?;
    if !attacks.is_empty() {
        let mut records: Vec<AttackRecord> =
            attacks.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
        records.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.epoch.cmp(&b.epoch)));
        let mut roc = format!("{ROC_HEADER}\n");
        let mut mia = format!("{MIA_HEADER}\n");
        let mut ext = format!("{EXTRACTION_HEADER}\n");
        for r in &records {
            for (name, res) in [("loss", &r.loss), ("identifier", &r.identifier)] {
                if let Some(curve) = &res.roc {
                    for (f, t) in &curve.points {
                        roc.push_str(&format!("{},{},{name},{f:.6},{t:.6}\n", r.scheme, r.epoch));
                    }
                }
                mia.push_str(&format!(
                    "{},{},{name},{},{},{},{},{}\n",
                    r.scheme,
                    r.epoch,
                    opt(res.roc.as_ref().map(|c| c.auc)),
                    opt(res.tpr_at_1pct_fpr),
                    opt(res.precision),
                    opt(res.recall),
                    opt(res.f1)
                ));
            }
            if let Some(e) = &r.extraction {
                ext.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.scheme,
                    r.epoch,
                    e.attempted,
                    e.extractable,
                    e.skipped,
                    opt(e.fraction)
                ));
            }
        }
        put("report/roc.csv", roc)?;
        put("report/mia.csv", mia)?;
        put("report/extraction.csv", ext)?;
    }
    Ok(written)
}
