use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fairagent::backbone::EmbeddingTable;
use fairagent::corpus::{read_interactions, write_interactions, ColumnSpec, CorpusError, StagePlanFile};
use fairagent::envsim::write_feedback;
use fairagent::experiment::{self, ExperimentConfig, Method, Prepared};

use crate::error::{CliError, CliResult, Classify};
use crate::manifest::Manifest;
use crate::Common;

const INTERACTIONS: &str = "interactions.csv";
const PLAN: &str = "plan.json";
const EMBEDDINGS: &str = "embeddings.txt";
const CONFIG: &str = "config.toml";

/// Output locations under the configured output directory.
struct Layout {
    data: PathBuf,
    backbone: PathBuf,
    runs: PathBuf,
}

impl Layout {
    fn new(root: &Path) -> Self {
        Self {
            data: root.join("data"),
            backbone: root.join("backbone"),
            runs: root.join("runs"),
        }
    }
}

/// Reads the config file (if any), applies command-line overrides and
/// validates the result.
pub fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).config(|| format!("cannot read {}", path.display()))?;
            toml::from_str::<ExperimentConfig>(&text).config(|| format!("{} is not a valid config", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The resolved config as recorded next to outputs. The output location is
/// left out so that relocated reruns hash identically.
fn config_text(cfg: &ExperimentConfig) -> CliResult<String> {
    let mut cfg = cfg.clone();
    cfg.output_dir = PathBuf::from(".");
    toml::to_string(&cfg).config(|| "cannot serialize the resolved config".into())
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
fn claim_dir(dir: &Path, force: bool) -> CliResult {
    let occupied = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(CliError::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).runtime(|| format!("cannot clear {}", dir.display()))?;
    }
    fs::create_dir_all(dir).runtime(|| format!("cannot create {}", dir.display()))
}

pub fn prepare(c: &Common) -> CliResult {
    let cfg = load_config(c)?;
    let layout = Layout::new(&cfg.output_dir);
    claim_dir(&layout.data, c.force)?;
    let prep = experiment::prepare(&cfg)?;

    let text = config_text(&cfg)?;
    let mut manifest = Manifest::new("prepare", Some(cfg.seed), Some(&text));
    let mut csv = Vec::new();
    write_interactions(&prep.corpus, &mut csv, ',').runtime(|| "cannot encode interactions".into())?;
    let plan = serde_json::to_string_pretty(&prep.plan.to_file(&prep.bundle.items)).expect("plan serializes");
    let io = |e: std::io::Error| CliError::Runtime(e.into());
    manifest.write_file(&layout.data, INTERACTIONS, &csv).map_err(io)?;
    manifest.write_file(&layout.data, PLAN, plan.as_bytes()).map_err(io)?;
    manifest.write_file(&layout.data, CONFIG, text.as_bytes()).map_err(io)?;
    manifest.finish(&layout.data).map_err(io)?;

    let b = &prep.bundle;
    println!("users {}  items {}  interactions {}", b.num_users(), b.num_items(), prep.corpus.len());
    println!("stage  interactions  entering_items");
    println!("{:>5}  {:>12}  {:>14}", 0, b.train.len(), prep.plan.entering_items(0).len());
    for m in 1..=prep.plan.num_test_stages() {
        println!(
            "{:>5}  {:>12}  {:>14}",
            m,
            b.stage_interactions(m).len(),
            prep.plan.entering_items(m).len()
        );
    }
    println!("wrote {}", layout.data.display());
    Ok(())
}

/// Reloads the prepared corpus and checks that it still splits into the
/// recorded plan.
fn load_prepared(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Prepared> {
    let path = layout.data.join(INTERACTIONS);
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Data(anyhow!(e).context(format!(
            "no prepared data at {}; run `fairagent prepare` with the same --out first",
            path.display()
        )))
    })?;
    let header = text.lines().next().unwrap_or_default();
    let columns = ColumnSpec {
        release_column: header.split(',').any(|h| h == "release").then(|| "release".to_owned()),
        ..ColumnSpec::default()
    };
    let (corpus, _) = read_interactions(text.as_bytes(), &columns).data(|| format!("cannot parse {}", path.display()))?;
    let prep = experiment::split(corpus, cfg)?;

    let plan_path = layout.data.join(PLAN);
    let recorded: StagePlanFile = File::open(&plan_path)
        .map_err(anyhow::Error::from)
        .and_then(|f| Ok(serde_json::from_reader(BufReader::new(f))?))
        .data(|| format!("cannot read {}", plan_path.display()))?;
    if recorded != prep.plan.to_file(&prep.bundle.items) {
        return Err(CliError::Data(
            CorpusError::PlanMismatch(format!(
                "{} disagrees with the split of {} under the current config; rerun `prepare --force`",
                plan_path.display(),
                path.display()
            ))
            .into(),
        ));
    }
    Ok(prep)
}

pub fn train_backbone(c: &Common) -> CliResult {
    let cfg = load_config(c)?;
    let layout = Layout::new(&cfg.output_dir);
    let prep = load_prepared(&cfg, &layout)?;
    claim_dir(&layout.backbone, c.force)?;
    let (table, log) = experiment::train_backbone(&prep, &cfg)?;

    let text = config_text(&cfg)?;
    let mut manifest = Manifest::new("train-backbone", Some(cfg.seed), Some(&text));
    let mut emb = Vec::new();
    table
        .write_to(&mut emb, &prep.bundle.users, &prep.bundle.items)
        .runtime(|| "cannot encode embeddings".into())?;
    let mut losses = String::from("epoch,loss\n");
    for (e, l) in log.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", e + 1));
    }
    let io = |e: std::io::Error| CliError::Runtime(e.into());
    manifest.write_file(&layout.backbone, EMBEDDINGS, &emb).map_err(io)?;
    manifest.write_file(&layout.backbone, "train_log.csv", losses.as_bytes()).map_err(io)?;
    manifest.write_file(&layout.backbone, CONFIG, text.as_bytes()).map_err(io)?;
    manifest.finish(&layout.backbone).map_err(io)?;
    match log.final_loss() {
        Some(l) => println!("final epoch loss {l:.6}"),
        None => println!("no training epochs configured"),
    }
    if log.skipped_users > 0 {
        println!("{} users without positives were skipped", log.skipped_users);
    }
    println!("wrote {}", layout.backbone.display());
    Ok(())
}

pub fn run(c: &Common, method: Method, label: Option<&str>) -> CliResult {
    let cfg = load_config(c)?;
    let layout = Layout::new(&cfg.output_dir);
    let prep = load_prepared(&cfg, &layout)?;
    let emb_path = layout.backbone.join(EMBEDDINGS);
    let table = File::open(&emb_path)
        .map_err(|e| {
            CliError::Data(anyhow!(e).context(format!(
                "no backbone at {}; run `fairagent train-backbone` first",
                emb_path.display()
            )))
        })
        .and_then(|f| {
            EmbeddingTable::read_from(BufReader::new(f), &prep.bundle.users, &prep.bundle.items)
                .data(|| format!("cannot read {}", emb_path.display()))
        })?;
    let name = label.map_or_else(|| method.to_string(), str::to_owned);
    if name.is_empty() || name.contains(['/', '\\', ',']) || name.starts_with('.') {
        return Err(CliError::Config(anyhow!("label `{name}` cannot name a run directory")));
    }
    let dir = layout.runs.join(&name);
    claim_dir(&dir, c.force)?;

    let mut out = experiment::run(method, &prep, &table, &cfg)?;
    out.report.method = name;

    let text = config_text(&cfg)?;
    let mut manifest = Manifest::new("run", Some(cfg.seed), Some(&text));
    let mut feedback = Vec::new();
    write_feedback(&out.feedback, &prep.bundle.users, &prep.bundle.items, &mut feedback)
        .runtime(|| "cannot encode feedback".into())?;
    let io = |e: std::io::Error| CliError::Runtime(e.into());
    manifest.write_file(&dir, "metrics.csv", out.report.to_csv().as_bytes()).map_err(io)?;
    manifest.write_file(&dir, "summary.json", out.report.summary_json().as_bytes()).map_err(io)?;
    manifest.write_file(&dir, "feedback.csv", &feedback).map_err(io)?;
    if !out.training.is_empty() {
        let mut t = String::from("stage,episodes,clicks,mean_reward,new_share\n");
        for (stage, s) in &out.training {
            t.push_str(&format!("{stage},{},{},{},{}\n", s.episodes, s.clicks, s.mean_reward, s.new_share));
        }
        manifest.write_file(&dir, "training.csv", t.as_bytes()).map_err(io)?;
    }
    manifest.write_file(&dir, CONFIG, text.as_bytes()).map_err(io)?;
    manifest.finish(&dir).map_err(io)?;

    print!("{}", out.report.to_csv());
    println!("wrote {}", dir.display());
    Ok(())
}
