//! End-to-end runs: configuration, data preparation, backbone training and
//! the staged simulation of either method.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{train_pass, Agent, AgentConfig, AgentError, PassSummary};
use crate::backbone::{self, BackboneConfig, BackboneError, EmbeddingTable, TrainLog};
use crate::corpus::{
    build_stage_plan, filter_users, load_interactions, synth_generate, ColumnSpec, Corpus, CorpusError, DatasetBundle,
    SplitParams, StagePlan, SynthSpec,
};
use crate::envsim::{
    advance_stage, enter_first_stage, histories_at, run_stage, train_positives, BackbonePolicy, EnvError,
    FeedbackEvent, GroundTruth, ListPolicy, SimConfig,
};
use crate::ids::UserId;
use crate::metrics::{HistoryView, MetricsReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: u32,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl ExperimentError {
    fn at(stage: u32, e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self::Stage { stage, source: e.into() }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Interaction file, required when `source = "file"`.
    pub path: Option<PathBuf>,
    pub columns: ColumnSpec,
    /// Users with fewer interactions are dropped before splitting.
    pub min_user_interactions: usize,
    pub synthetic: SynthSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            path: None,
            columns: ColumnSpec::default(),
            min_user_interactions: 1,
            synthetic: SynthSpec::default(),
        }
    }
}

/// Everything a run depends on. Parsed from TOML; every key is optional and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitParams,
    pub backbone: BackboneConfig,
    pub agent: AgentConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            split: SplitParams::default(),
            backbone: BackboneConfig::default(),
            agent: AgentConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |e: &dyn fmt::Display| ExperimentError::Config(e.to_string());
        if self.data.source == SourceKind::File && self.data.path.is_none() {
            return Err(ExperimentError::Config("data.path is required when data.source = \"file\"".into()));
        }
        if self.data.min_user_interactions == 0 {
            return Err(ExperimentError::Config("data.min_user_interactions must be at least 1".into()));
        }
        self.backbone.validate().map_err(|e| cfg(&e))?;
        self.agent.validate().map_err(|e| cfg(&e))?;
        self.sim.validate().map_err(|e| cfg(&e))?;
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Backbone,
    Fairagent,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Backbone => "backbone",
            Method::Fairagent => "fairagent",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backbone" => Ok(Method::Backbone),
            "fairagent" => Ok(Method::Fairagent),
            other => Err(format!("unknown method `{other}` (expected backbone or fairagent)")),
        }
    }
}

/// A corpus together with its split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub corpus: Corpus,
    pub plan: StagePlan,
    pub bundle: DatasetBundle,
}

/// Reads (or generates) the corpus named by `cfg.data` and applies user
/// filtering.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    let corpus = match cfg.data.source {
        SourceKind::Synthetic => synth_generate(&cfg.data.synthetic, cfg.seed)?.corpus,
        SourceKind::File => {
            let path = cfg.data.path.as_ref().ok_or_else(|| ExperimentError::Config("data.path missing".into()))?;
            load_interactions(path, &cfg.data.columns)?.0
        }
    };
    if cfg.data.min_user_interactions > 1 {
        Ok(filter_users(&corpus, cfg.data.min_user_interactions)?)
    } else {
        Ok(corpus)
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    split(load_corpus(cfg)?, cfg)
}

/// Splits an already loaded corpus.
pub fn split(corpus: Corpus, cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    let (plan, bundle) = build_stage_plan(&corpus, &cfg.split)?;
    Ok(Prepared { corpus, plan, bundle })
}

/// Fits the backbone on the training period over the initial items.
pub fn train_backbone(prep: &Prepared, cfg: &ExperimentConfig) -> Result<(EmbeddingTable, TrainLog), ExperimentError> {
    let positives = train_positives(&prep.bundle);
    let universe = prep.plan.available_items(0);
    Ok(backbone::train(
        &positives,
        prep.bundle.num_users(),
        prep.bundle.num_items(),
        &universe,
        &cfg.backbone,
        cfg.seed,
    )?)
}

/// Result of simulating one method over every test stage.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub feedback: Vec<FeedbackEvent>,
    /// Agent training passes as `(stage, summary)`; stage 0 is warm-up.
    pub training: Vec<(u32, PassSummary)>,
}

/// Runs `method` over all test stages starting from the trained `table`.
///
/// Every stage generates lists, simulates feedback, records metrics and then
/// updates the backbone on the training positives plus all clicks so far.
/// The agent first warms up on the tail of the training period and, within
/// each stage, trains on simulated feedback before its lists are evaluated.
pub fn run(method: Method, prep: &Prepared, table: &EmbeddingTable, cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let Prepared { plan, bundle, .. } = prep;
    let truth = GroundTruth::from_bundle(bundle);
    let mut agent = match method {
        Method::Backbone => None,
        Method::Fairagent => Some(Agent::initialize(table, cfg.agent.clone(), cfg.seed)?),
    };
    let mut training = Vec::new();

    if let Some(agent) = agent.as_mut() {
        let positives = truth.stage(0).map_err(|e| ExperimentError::at(0, e))?;
        let cutoff = bundle.pre_warmup_cutoff();
        let histories: BTreeMap<UserId, HistoryView> = positives
            .keys()
            .map(|&u| (u, HistoryView::before_time(u, bundle.history(u), cutoff, 0)))
            .collect();
        for epoch in 0..cfg.agent.warmup_epochs {
            let s = train_pass(agent, 0, epoch, plan, positives, &histories, table, &cfg.sim, cfg.seed)?;
            log::info!("warm-up epoch {epoch}: {s:?}");
            training.push((0, s));
        }
    }

    let mut table = enter_first_stage(table, plan, &cfg.backbone, cfg.seed).map_err(|e| ExperimentError::at(1, e))?;
    let mut positives = train_positives(bundle);
    let mut report = MetricsReport::new(method.to_string(), cfg.sim.k);
    let mut feedback = Vec::new();
    let mut backbone_policy = BackbonePolicy;

    for stage in 1..=plan.num_test_stages() {
        let policy: &mut dyn ListPolicy = match agent.as_mut() {
            None => &mut backbone_policy,
            Some(agent) => {
                agent.refresh_embeddings(&table)?;
                let stage_truth = truth.stage(stage).map_err(|e| ExperimentError::at(stage, e))?;
                let histories = histories_at(bundle, stage_truth.keys().copied(), stage);
                for epoch in 0..cfg.agent.stage_epochs {
                    let s = train_pass(agent, stage, epoch, plan, stage_truth, &histories, &table, &cfg.sim, cfg.seed)
                        .map_err(|e| ExperimentError::at(stage, e))?;
                    log::info!("stage {stage} epoch {epoch}: {s:?}");
                    training.push((stage, s));
                }
                agent
            }
        };
        let outcome = run_stage(policy, stage, bundle, plan, &truth, &table, &cfg.sim, cfg.seed)
            .map_err(|e| ExperimentError::at(stage, e))?;
        log::info!("{method} {:?}", outcome.metrics);
        positives.extend(outcome.clicks());
        feedback.extend_from_slice(&outcome.feedback);
        report.stages.push(outcome.metrics);
        if stage < plan.num_test_stages() {
            let (next, _) = advance_stage(stage, &positives, &table, plan, &cfg.backbone, cfg.seed)
                .map_err(|e: EnvError| ExperimentError::at(stage, e))?;
            table = next;
        }
    }
    Ok(RunOutput {
        report,
        feedback,
        training,
    })
}
