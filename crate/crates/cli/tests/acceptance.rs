//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion (straight to stdout so it shows up without `--nocapture`) and
//! then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fairagent::agent::{
    fair_reward_bound, fair_reward_from_gaps, reward_acc, reward_fair, reward_new, reward_total, ActionSpace, Agent,
    AgentConfig, AgentState, Experience, RewardParts,
};
use fairagent::backbone::{EmbeddingTable, NewItemInit};
use fairagent::envsim::observe;
use fairagent::experiment::{self, ExperimentConfig, Method, Prepared};
use fairagent::metrics::oracle::{oracle_hit_rate, oracle_ndcg, oracle_new_item_coverage, oracle_tgf, oracle_unf};
use fairagent::metrics::{
    hit_rate, ndcg, new_item_coverage, tgf, unf, HistoryEntry, HistoryView, MetricsReport, PositiveSets, RankedList,
};
use fairagent::qnet::{gradient_check, ValueNetwork};
use fairagent::seeding::{rng_from, Rng};
use fairagent::timeline::{Novelty, TimelineTable};
use fairagent::{ItemId, UserId};
use rand::seq::SliceRandom;
use rand::Rng as _;

fn verdict(n: u32, name: &str, pass: bool, detail: impl std::fmt::Display) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[criterion {n}] {mark} {name}: {detail}");
    drop(out);
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

/// Random metric instance: a timeline, per-user lists and histories.
struct Instance {
    timeline: TimelineTable,
    stage: u32,
    novelty: Novelty,
    lists: Vec<RankedList>,
    histories: BTreeMap<UserId, HistoryView>,
    truth: PositiveSets,
}

fn instance(rng: &mut Rng) -> Instance {
    let items = 80;
    let stage = rng.random_range(1..=5u32);
    let entry_stage = (0..items).map(|_| rng.random_range(0..=stage)).collect();
    let entry_time = (0..items).map(|_| rng.random_range(0..40i64)).collect();
    let timeline = TimelineTable::new(entry_stage, entry_time);
    let novelty = Novelty::new(rng.random_range(1..=2));
    let mut pool: Vec<u32> = (0..items as u32).collect();
    let users = rng.random_range(1..6u32);
    let mut lists = Vec::new();
    let mut histories = BTreeMap::new();
    let mut truth = PositiveSets::new();
    for u in 0..users {
        let user = UserId(u);
        pool.shuffle(rng);
        let len = rng.random_range(1..=20);
        lists.push(RankedList::new(user, stage, pool[..len].iter().map(|&i| ItemId(i)).collect()).unwrap());
        pool.shuffle(rng);
        let hlen = rng.random_range(0..=50);
        let entries = pool[..hlen]
            .iter()
            .map(|&i| HistoryEntry {
                item: ItemId(i),
                stage: rng.random_range(0..=stage),
            })
            .collect();
        histories.insert(
            user,
            HistoryView {
                user,
                as_of_stage: stage,
                entries,
            },
        );
        let npos = rng.random_range(0..10);
        truth.insert(user, (0..npos).map(|_| ItemId(rng.random_range(0..items as u32))).collect());
    }
    Instance {
        timeline,
        stage,
        novelty,
        lists,
        histories,
        truth,
    }
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut mismatched_errors = 0;
    for seed in 0..200u64 {
        let mut rng = rng_from(seed, &[1001]);
        let x = instance(&mut rng);
        for l in &x.lists {
            let a = tgf(l, &x.timeline, x.stage, x.novelty).unwrap();
            let b = oracle_tgf(l, &x.timeline, x.stage, x.novelty).unwrap();
            worst = worst.max((a - b).abs());
        }
        match (
            unf(&x.lists, &x.histories, &x.timeline, x.stage, x.novelty),
            oracle_unf(&x.lists, &x.histories, &x.timeline, x.stage, x.novelty),
        ) {
            (Ok(a), Ok(b)) => worst = worst.max((a.value - b).abs()),
            (Err(a), Err(b)) if a == b => {}
            _ => mismatched_errors += 1,
        }
        let pairs = [
            (hit_rate(&x.lists, &x.truth), oracle_hit_rate(&x.lists, &x.truth)),
            (ndcg(&x.lists, &x.truth), oracle_ndcg(&x.lists, &x.truth)),
        ];
        for (a, b) in pairs {
            match (a, b) {
                (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                (Err(a), Err(b)) if a == b => {}
                _ => mismatched_errors += 1,
            }
        }
        let a = new_item_coverage(&x.lists, &x.timeline, x.stage, x.novelty);
        let b = oracle_new_item_coverage(&x.lists, &x.timeline, x.stage, x.novelty);
        worst = worst.max((a - b).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "metric oracle equivalence",
        worst <= 1e-9 && mismatched_errors == 0 && elapsed < Duration::from_secs(10),
        format!("200 instances, max |diff| = {worst:.3e} (tol 1e-9), error mismatches {mismatched_errors}, {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let nets = 25;
    for seed in 0..nets {
        let mut rng = rng_from(seed, &[1002]);
        let state_len = rng.random_range(2..12);
        let action_len = rng.random_range(1..6);
        let depth = rng.random_range(0..3);
        let mut sizes = vec![state_len + action_len];
        sizes.extend((0..depth).map(|_| rng.random_range(2..10)));
        sizes.push(1);
        let mut net = ValueNetwork::new(&sizes, &mut rng).unwrap();
        // Fresh nets have zero biases, so a layer behind dead units sits
        // exactly on the rectifier's kink where no derivative exists.
        for layer in net.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let state: Vec<f64> = (0..state_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..action_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(-2.0..2.0);
        worst = worst.max(gradient_check(&net, &state, &action, target, 1e-5).unwrap());
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "gradient correctness",
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("{nets} random networks, worst relative error {worst:.3e} (tol 1e-4), {elapsed:.2?} (< 30 s)"),
    );
}

#[test]
fn criterion_3_exposure_model_fidelity() {
    let start = Instant::now();
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    for rank in 1..=20usize {
        let mut rng = rng_from(rank as u64, &[1003]);
        let seen = (0..draws).filter(|_| observe(rank, &mut rng)).count();
        let expected = 1.0 / ((rank + 1) as f64).log2();
        worst = worst.max((seen as f64 / draws as f64 - expected).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "exposure model fidelity",
        worst <= 0.01 && elapsed < Duration::from_secs(10),
        format!("ranks 1..20 x {draws} draws, max |freq - 1/log2(r+1)| = {worst:.4} (tol 0.01), {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn criterion_4_reward_unit_suite() {
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, name: &'static str| {
        if !ok {
            failures.push(name);
        }
    };
    check(reward_new(false, true, 0.1) == 0.0, "R_new old clicked");
    check(reward_new(false, false, 0.1) == 0.0, "R_new old unclicked");
    check(reward_new(true, false, 0.1) == 0.1, "R_new new unclicked");
    check(reward_new(true, true, 0.1) == 1.0, "R_new new clicked");
    check(reward_acc(true, 1) == 1.0, "R_acc rank 1");
    check((1..=20).all(|r| reward_acc(false, r) == 0.0), "R_acc unclicked");
    check((reward_acc(true, 3) - 0.5).abs() <= 1e-15, "R_acc rank 3");
    check(fair_reward_from_gaps(0.3, 0.3) == 0.0, "R_fair unchanged gap");
    check((fair_reward_from_gaps(0.4, 0.1) - 0.29664).abs() <= 1e-5, "R_fair tanh example (printed to 5 places)");
    check(
        (fair_reward_from_gaps(0.4, 0.1) - 2.0 * 0.3f64.tanh() / (1.0 + 2f64.tanh())).abs() <= 1e-9,
        "R_fair tanh example",
    );
    check(fair_reward_from_gaps(0.1, 0.4) < 0.0, "R_fair worse gap");
    check((fair_reward_bound() - 1.01832).abs() <= 1e-5, "R_fair bound");
    check(fair_reward_from_gaps(1e6, 0.0) <= fair_reward_bound(), "R_fair saturation");
    let timeline = TimelineTable::new(vec![0, 0, 1], vec![1, 2, 3]);
    let nov = Novelty::default();
    check(reward_fair(&[], &[ItemId(0)], 0.0, &timeline, 1, nov) < 0.0, "R_fair from empty list");
    check(
        reward_fair(&[ItemId(0)], &[ItemId(0), ItemId(2)], 0.0, &timeline, 1, nov) > 0.0,
        "R_fair rebalancing step",
    );
    let parts = RewardParts {
        acc: 1.0,
        fair: 0.29664,
        new: 1.0,
    };
    check(reward_total(&parts, 0.0, 0.0) == 1.0, "R_total alpha=beta=0");
    check((reward_total(&parts, 1.0, 0.5) - 1.79664).abs() <= 1e-12, "R_total weighted");
    check(reward_total(&RewardParts::default(), 2.5, 1.0) == 0.0, "R_total zero parts");
    verdict(
        4,
        "reward unit suite",
        failures.is_empty(),
        if failures.is_empty() {
            "19 examples exact (1e-9 on the tanh example)".to_owned()
        } else {
            format!("failed: {failures:?}")
        },
    );
}

/// One trial: two actions, action 0 always pays 1 and action 1 pays 0.
fn two_action_trial(seed: u64) -> bool {
    let mut rng = rng_from(seed, &[1005]);
    let dim = 4;
    let mut vec = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
    let table = EmbeddingTable::from_vectors(vec(1), vec(2)).unwrap();
    let mut cfg = AgentConfig {
        hidden: vec![16, 16],
        batch_size: 16,
        learning_rate: 1e-2,
        ..AgentConfig::default()
    };
    cfg.reward.history_len = 1;
    let mut agent = Agent::initialize(&table, cfg, seed).unwrap();
    let state = AgentState::new(table.user_vector(UserId(0)).unwrap(), &[], 1);
    let actions: Vec<Vec<f64>> = (0..2).map(|i| table.item_vector(ItemId(i)).unwrap().to_vec()).collect();
    let mut rng = rng_from(seed, &[1005, 1]);
    while agent.updates() < 1000 {
        let space = ActionSpace::build(0.0, vec![], vec![ItemId(0), ItemId(1)], 2, &mut rng).unwrap();
        let a = agent.choose_action(&state, &space, true, &mut rng).unwrap();
        agent.remember(Experience {
            state: state.as_slice().to_vec(),
            action: a,
            action_vector: actions[a.index()].clone(),
            reward: if a == ItemId(0) { 1.0 } else { 0.0 },
            next_state: state.as_slice().to_vec(),
            next_actions: Vec::new(),
            terminal: true,
        });
        if agent.buffer().len() >= agent.config().batch_size {
            agent.train_step().unwrap();
        }
    }
    let q = agent.q_values(state.as_slice(), &actions).unwrap();
    q[0] > q[1]
}

#[test]
fn criterion_5_q_learning_sanity() {
    let start = Instant::now();
    let wins = (0..100).filter(|&s| two_action_trial(s)).count();
    let elapsed = start.elapsed();
    verdict(
        5,
        "Q-learning sanity",
        wins >= 95 && elapsed < Duration::from_secs(60),
        format!("rewarding action ranked first in {wins}/100 trials after 1000 train steps (need >= 95), {elapsed:.2?} (< 60 s)"),
    );
}

/// The desk-scale setting shared by criteria 6 and 7: ~500 users and ~2,000
/// items over 5 + 5 cohorts with new-item affinity 0.5.
fn desk_config(seed: u64, alpha: f64, beta: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    assert_eq!(cfg.data.synthetic.users, 500);
    assert_eq!(cfg.data.synthetic.items_per_cohort * (cfg.data.synthetic.train_cohorts + cfg.data.synthetic.test_stages), 2000);
    assert_eq!(cfg.data.synthetic.new_item_affinity, 0.5);
    cfg.backbone.new_item_init = NewItemInit::Random;
    cfg.agent = AgentConfig {
        hidden: vec![32, 32],
        batch_size: 64,
        train_every: 20,
        learning_rate: 3e-3,
        preference_window: 5,
        stage_epochs: 3,
        ..AgentConfig::default()
    };
    cfg.agent.reward.alpha = alpha;
    cfg.agent.reward.beta = beta;
    cfg
}

const FULL: (f64, f64) = (2.5, 1.0);

struct Corpus {
    prep: Prepared,
    table: EmbeddingTable,
}

fn corpus(seed: u64) -> Corpus {
    let cfg = desk_config(seed, FULL.0, FULL.1);
    let prep = experiment::prepare(&cfg).unwrap();
    let (table, _) = experiment::train_backbone(&prep, &cfg).unwrap();
    Corpus { prep, table }
}

fn simulate(c: &Corpus, method: Method, seed: u64, alpha: f64, beta: f64) -> MetricsReport {
    let cfg = desk_config(seed, alpha, beta);
    experiment::run(method, &c.prep, &c.table, &cfg).unwrap().report
}

fn mean(r: &MetricsReport, f: impl Fn(&fairagent::metrics::StageMetrics) -> f64) -> f64 {
    r.stages.iter().map(f).sum::<f64>() / r.stages.len() as f64
}

#[test]
fn criterion_6_directional_reproduction() {
    let start = Instant::now();
    let seed = 11;
    let c = corpus(seed);
    assert!((1900..=2000).contains(&c.prep.bundle.num_items()));
    let base = simulate(&c, Method::Backbone, seed, FULL.0, FULL.1);
    let fair = simulate(&c, Method::Fairagent, seed, FULL.0, FULL.1);
    let elapsed = start.elapsed();

    let base_nc_max = base.stages.iter().map(|s| s.nc).fold(0.0, f64::max);
    let nc = mean(&fair, |s| s.nc);
    let tgf_ratio = mean(&fair, |s| s.tgf.abs()) / mean(&base, |s| s.tgf.abs());
    let unf_ratio = mean(&fair, |s| s.unf) / mean(&base, |s| s.unf);
    let hr_ratio = mean(&fair, |s| s.hr) / mean(&base, |s| s.hr);
    let checks = [
        base_nc_max <= 0.02,
        nc >= 0.15,
        tgf_ratio <= 0.5,
        unf_ratio <= 0.5,
        hr_ratio >= 0.9,
        elapsed <= Duration::from_secs(15 * 60),
    ];
    verdict(
        6,
        "directional reproduction",
        checks.iter().all(|&c| c),
        format!(
            "backbone NC max {base_nc_max:.4} (<= 0.02), agent NC {nc:.4} (>= 0.15), |TGF| ratio {tgf_ratio:.3} (<= 0.5), \
             UNF ratio {unf_ratio:.3} (<= 0.5), HR ratio {hr_ratio:.3} (>= 0.9), {elapsed:.1?} (<= 15 min)"
        ),
    );
}

#[test]
fn criterion_7_ablation_directions() {
    let mut beta_wins = 0;
    let mut alpha_wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let c = corpus(seed);
        let full = simulate(&c, Method::Fairagent, seed, FULL.0, FULL.1);
        let no_beta = simulate(&c, Method::Fairagent, seed, FULL.0, 0.0);
        let no_alpha = simulate(&c, Method::Fairagent, seed, 0.0, FULL.1);
        let (nc_full, nc_nb) = (mean(&full, |s| s.nc), mean(&no_beta, |s| s.nc));
        let (unf_full, unf_na) = (mean(&full, |s| s.unf), mean(&no_alpha, |s| s.unf));
        beta_wins += usize::from(nc_nb < nc_full);
        alpha_wins += usize::from(unf_na > unf_full);
        rows.push(format!("seed {seed}: NC {nc_full:.3} vs {nc_nb:.3}, UNF {unf_full:.2} vs {unf_na:.2}"));
    }
    verdict(
        7,
        "ablation directions",
        beta_wins >= 4 && alpha_wins >= 4,
        format!(
            "beta = 0 lowers NC in {beta_wins}/5, alpha = 0 raises UNF in {alpha_wins}/5 (need >= 4 each); {}",
            rows.join("; ")
        ),
    );
}

const E2E_CONFIG: &str = r#"
seed = 5

[data.synthetic]
users = 60
items_per_cohort = 40
train_interactions_per_user = 14
stage_interactions_per_user = 4

[backbone]
epochs = 10
finetune_epochs = 2

[sim]
k = 10
candidate_size = 100

[agent]
hidden = [16]
batch_size = 32
train_every = 5

[agent.reward]
action_space = 20
history_len = 4
"#;

fn pipeline(root: &Path, config: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_fairagent");
    let out = root.display().to_string();
    let cfg = config.display().to_string();
    let steps: [&[&str]; 5] = [
        &["prepare", "--config", &cfg, "--out", &out],
        &["train-backbone", "--config", &cfg, "--out", &out],
        &["run", "--config", &cfg, "--out", &out, "--method", "backbone"],
        &["run", "--config", &cfg, "--out", &out, "--method", "fairagent"],
        &[
            "report",
            &format!("{out}/runs/backbone"),
            &format!("{out}/runs/fairagent"),
            "--out",
            &format!("{out}/report"),
        ],
    ];
    for args in steps {
        let o = Command::new(bin).args(args).output().expect("binary runs");
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    [
        "runs/backbone/metrics.csv",
        "runs/fairagent/metrics.csv",
        "runs/fairagent/summary.json",
        "runs/fairagent/feedback.csv",
        "report/comparison.csv",
        "report/stages.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(root.join(f)).unwrap()))
    .collect()
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("e2e.toml");
    std::fs::write(&config, E2E_CONFIG).unwrap();
    let a = pipeline(&dir.path().join("first"), &config);
    let b = pipeline(&dir.path().join("second"), &config);
    let differing: BTreeSet<&str> = a
        .iter()
        .zip(&b)
        .filter(|((_, x), (_, y))| x != y)
        .map(|((name, _), _)| name.as_str())
        .collect();
    verdict(
        8,
        "determinism",
        differing.is_empty(),
        format!(
            "two end-to-end CLI runs, {} report files compared byte for byte, differing: {differing:?}",
            a.len()
        ),
    );
}
