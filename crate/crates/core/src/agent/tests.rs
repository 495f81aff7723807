use super::*;
use crate::corpus::{build_stage_plan, synth_generate, DatasetBundle, SplitParams, SynthSpec};
use crate::envsim::SimConfig;
use crate::metrics::HistoryEntry;
use crate::qnet::Dense;
use crate::timeline::Novelty;

fn random_table(users: usize, items: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = rng_from(seed, &[]);
    let mut vecs = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let u = vecs(users);
    let i = vecs(items);
    EmbeddingTable::from_vectors(u, i).unwrap()
}

fn small_config() -> AgentConfig {
    AgentConfig {
        hidden: vec![8],
        batch_size: 4,
        reward: RewardConfig {
            history_len: 3,
            action_space: 5,
            ..RewardConfig::default()
        },
        ..AgentConfig::default()
    }
}

fn zero_out(net: &mut ValueNetwork) {
    for l in net.layers_mut() {
        l.weights.fill(0.0);
        l.bias.fill(0.0);
    }
}

#[test]
fn initialize_copies_embeddings_and_twins_the_networks() {
    let table = random_table(3, 10, 4, 1);
    let a = Agent::initialize(&table, small_config(), 7).unwrap();
    assert_eq!(a.embeddings(), &table);
    assert_eq!(a.main_network(), a.target_network());
    let b = Agent::initialize(&table, small_config(), 7).unwrap();
    assert_eq!(a.main_network(), b.main_network());
    let mut rng = rng_from(2, &[]);
    for _ in 0..10 {
        let s: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(
            a.main_network().forward(&s, &act).unwrap(),
            a.target_network().forward(&s, &act).unwrap()
        );
    }
}

#[test]
fn empty_table_rejected() {
    let table = EmbeddingTable::from_vectors(vec![vec![1.0]], vec![]).unwrap();
    assert!(matches!(Agent::initialize(&table, small_config(), 1), Err(AgentError::EmptyTable)));
}

#[test]
fn state_queue_semantics() {
    let user = [9.0, 9.0];
    let s = AgentState::new(&user, &[&[1.0, 1.0], &[2.0, 2.0]], 3);
    // One missing slot at the front.
    assert_eq!(s.slot(0), &[0.0, 0.0]);
    assert_eq!(s.slot(2), &[2.0, 2.0]);
    assert_eq!(s.update(false, &[5.0, 5.0]), s);
    let next = s.update(true, &[5.0, 5.0]);
    assert_eq!(next.slot(0), &[1.0, 1.0]);
    assert_eq!(next.slot(2), &[5.0, 5.0]);
    assert_eq!(&next.as_slice()[..2], &user);
    let mut t = s.clone();
    for k in 0..3 {
        t = t.update(true, &[10.0 + k as f64, 0.0]);
    }
    assert_eq!(t.slot(0), &[10.0, 0.0]);
    assert_eq!(t.slot(2), &[12.0, 0.0]);
}

#[test]
fn zero_network_breaks_ties_by_id() {
    let table = random_table(1, 10, 4, 3);
    let mut cfg = small_config();
    cfg.reward.epsilon = 0.0;
    let mut agent = Agent::initialize(&table, cfg, 1).unwrap();
    zero_out(&mut agent.main);
    let state = AgentState::new(table.user_vector(UserId(0)).unwrap(), &[], 3);
    let mut rng = rng_from(1, &[]);
    let space = ActionSpace::build(0.5, vec![ItemId(7), ItemId(3)], vec![ItemId(5), ItemId(4)], 4, &mut rng).unwrap();
    assert_eq!(agent.choose_action(&state, &space, true, &mut rng).unwrap(), ItemId(3));
}

#[test]
fn greedy_choice_follows_the_network() {
    let table = EmbeddingTable::from_vectors(
        vec![vec![0.0, 0.0]],
        vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![2.0, 0.0]],
    )
    .unwrap();
    let mut cfg = small_config();
    cfg.hidden = vec![];
    cfg.reward.history_len = 1;
    cfg.reward.epsilon = 0.0;
    let mut agent = Agent::initialize(&table, cfg, 1).unwrap();
    // Linear net reading the first action coordinate.
    let mut w = vec![0.0; 6];
    w[4] = 1.0;
    agent.main = ValueNetwork::from_layers(vec![Dense {
        inputs: 6,
        outputs: 1,
        weights: w,
        bias: vec![0.0],
    }])
    .unwrap();
    let state = AgentState::new(&[0.0, 0.0], &[], 1);
    let mut rng = rng_from(1, &[]);
    let space = ActionSpace::build(0.0, vec![], vec![ItemId(0), ItemId(1), ItemId(2)], 3, &mut rng).unwrap();
    for _ in 0..20 {
        assert_eq!(agent.choose_action(&state, &space, true, &mut rng).unwrap(), ItemId(1));
    }
}

#[test]
fn full_exploration_is_uniform() {
    let table = random_table(1, 5, 4, 4);
    let mut cfg = small_config();
    cfg.reward.epsilon = 1.0;
    let agent = Agent::initialize(&table, cfg, 1).unwrap();
    let state = AgentState::new(table.user_vector(UserId(0)).unwrap(), &[], 3);
    let mut rng = rng_from(5, &[]);
    let items: Vec<ItemId> = (0..5).map(ItemId).collect();
    let space = ActionSpace::build(0.0, vec![], items, 5, &mut rng).unwrap();
    let mut counts = [0usize; 5];
    let n = 10_000;
    for _ in 0..n {
        counts[agent.choose_action(&state, &space, true, &mut rng).unwrap().index()] += 1;
    }
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 13.277, "chi2 = {chi2}, counts {counts:?}");
}

fn single_experience(reward: f64, terminal: bool) -> Experience {
    Experience {
        state: vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.1, 0.1, 0.1, 0.1],
        action: ItemId(0),
        action_vector: vec![0.3, 0.2, 0.1, 0.0],
        reward,
        next_state: vec![0.0; 16],
        next_actions: vec![1.0; 8],
        terminal,
    }
}

#[test]
fn train_step_needs_a_full_batch() {
    let table = random_table(1, 4, 4, 6);
    let mut agent = Agent::initialize(&table, small_config(), 1).unwrap();
    agent.remember(single_experience(1.0, true));
    assert!(matches!(
        agent.train_step(),
        Err(AgentError::BufferUnderfull { have: 1, need: 4 })
    ));
    assert_eq!(agent.updates(), 0);
}

#[test]
fn zero_discount_targets_the_reward() {
    let table = random_table(1, 4, 4, 7);
    let mut cfg = small_config();
    cfg.reward.lambda = 0.0;
    let mut agent = Agent::initialize(&table, cfg, 1).unwrap();
    let e = single_experience(0.7, false);
    for _ in 0..4 {
        agent.remember(e.clone());
    }
    let q = agent.main.forward(&e.state, &e.action_vector).unwrap();
    let loss = agent.train_step().unwrap();
    assert!((loss - (0.7 - q).powi(2)).abs() < 1e-12);
}

#[test]
fn repeated_experience_is_fitted() {
    let table = random_table(1, 4, 4, 8);
    let mut cfg = small_config();
    cfg.learning_rate = 1e-2;
    let mut agent = Agent::initialize(&table, cfg, 1).unwrap();
    for _ in 0..4 {
        agent.remember(single_experience(1.0, false));
    }
    let mut loss = f64::INFINITY;
    for _ in 0..5000 {
        loss = agent.train_step().unwrap();
    }
    assert!(loss < 1e-4, "{loss}");
}

#[test]
fn target_sync_schedule() {
    let table = random_table(1, 4, 4, 9);
    let mut cfg = small_config();
    cfg.reward.target_sync_every = 3;
    let mut agent = Agent::initialize(&table, cfg, 1).unwrap();
    for _ in 0..4 {
        agent.remember(single_experience(1.0, true));
    }
    let initial = agent.target.clone();
    agent.train_step().unwrap();
    agent.train_step().unwrap();
    assert_eq!(agent.target, initial);
    assert_ne!(agent.main, initial);
    agent.train_step().unwrap();
    assert_eq!(agent.target, agent.main);
    agent.sync_target();
    agent.sync_target();
    assert_eq!(agent.target, agent.main);
}

#[test]
fn two_action_toy_learns_the_rewarding_action() {
    let table = random_table(1, 2, 4, 10);
    let mut won = 0;
    for trial in 0..10 {
        let mut cfg = small_config();
        cfg.hidden = vec![16];
        cfg.learning_rate = 1e-2;
        cfg.batch_size = 16;
        cfg.reward.epsilon = 0.2;
        cfg.reward.history_len = 1;
        let mut agent = Agent::initialize(&table, cfg, trial).unwrap();
        let state = AgentState::new(table.user_vector(UserId(0)).unwrap(), &[], 1);
        let mut rng = rng_from(trial, &[99]);
        let vecs: Vec<Vec<f64>> = (0..2).map(|i| table.item_vector(ItemId(i)).unwrap().to_vec()).collect();
        while agent.updates() < 300 {
            let space = ActionSpace::build(0.0, vec![], vec![ItemId(0), ItemId(1)], 2, &mut rng).unwrap();
            let a = agent.choose_action(&state, &space, true, &mut rng).unwrap();
            agent.remember(Experience {
                state: state.as_slice().to_vec(),
                action: a,
                action_vector: vecs[a.index()].clone(),
                reward: if a == ItemId(0) { 1.0 } else { 0.0 },
                next_state: state.as_slice().to_vec(),
                next_actions: Vec::new(),
                terminal: true,
            });
            if agent.buffer().len() >= 16 {
                agent.train_step().unwrap();
            }
        }
        let q = agent.q_values(state.as_slice(), &vecs).unwrap();
        won += usize::from(q[0] > q[1]);
    }
    assert!(won >= 9, "{won}/10");
}

#[test]
fn checkpoint_round_trip() {
    let table = random_table(2, 6, 4, 11);
    let mut agent = Agent::initialize(&table, small_config(), 3).unwrap();
    for _ in 0..4 {
        agent.remember(single_experience(0.5, false));
    }
    agent.train_step().unwrap();
    let dir = tempfile::tempdir().unwrap();
    agent.save_checkpoint(dir.path()).unwrap();
    let back = Agent::load_checkpoint(dir.path(), &table, 3).unwrap();
    assert_eq!(back.main, agent.main);
    assert_eq!(back.target, agent.target);
    assert_eq!(back.updates(), 1);
    assert_eq!(back.config(), agent.config());
}

struct Scenario {
    plan: StagePlan,
    bundle: DatasetBundle,
    table: EmbeddingTable,
}

fn scenario() -> Scenario {
    let spec = SynthSpec {
        users: 30,
        items_per_cohort: 30,
        train_interactions_per_user: 15,
        stage_interactions_per_user: 3,
        ..SynthSpec::default()
    };
    let syn = synth_generate(&spec, 3).unwrap();
    let (plan, bundle) = build_stage_plan(&syn.corpus, &SplitParams::default()).unwrap();
    // Random vectors for every item: enough to exercise the episode logic.
    let table = random_table(bundle.num_users(), bundle.num_items(), 4, 12);
    Scenario { plan, bundle, table }
}

fn context<'a>(s: &'a Scenario, user: UserId, candidates: &'a [ItemId], history: &'a HistoryView, k: usize) -> UserContext<'a> {
    UserContext {
        user,
        stage: 2,
        k,
        candidates,
        history,
        table: &s.table,
        plan: &s.plan,
        novelty: Novelty::default(),
    }
}

#[test]
fn eval_lists_are_deterministic_and_valid() {
    let s = scenario();
    let mut cfg = small_config();
    cfg.reward.epsilon = 0.0;
    let candidates = s.plan.available_items(2)[..60].to_vec();
    let history = HistoryView::before_stage(UserId(4), s.bundle.history(UserId(4)), 2);
    let ctx = context(&s, UserId(4), &candidates, &history, 10);
    let run = || {
        let mut agent = Agent::initialize(&s.table, cfg.clone(), 5).unwrap();
        agent.generate_list(&ctx, Mode::Eval, &mut rng_from(8, &[])).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.items.len(), 10);
    assert_eq!(a.items.iter().collect::<BTreeSet<_>>().len(), 10);
    assert!(a.rewards.is_empty());

    let one = context(&s, UserId(4), &candidates, &history, 1);
    let mut agent = Agent::initialize(&s.table, cfg, 5).unwrap();
    let ep = agent.generate_list(&one, Mode::Eval, &mut rng_from(8, &[])).unwrap();
    assert_eq!(ep.items.len(), 1);
}

#[test]
fn untrained_zero_network_follows_tie_rule() {
    let s = scenario();
    let mut cfg = small_config();
    cfg.reward.epsilon = 0.0;
    cfg.reward.action_space = 6;
    let mut agent = Agent::initialize(&s.table, cfg, 5).unwrap();
    zero_out(&mut agent.main);
    let candidates = s.plan.available_items(2)[..40].to_vec();
    let history = HistoryView::before_stage(UserId(1), s.bundle.history(UserId(1)), 2);
    let ctx = context(&s, UserId(1), &candidates, &history, 5);
    let ep = agent.generate_list(&ctx, Mode::Eval, &mut rng_from(2, &[])).unwrap();
    // Replay the same coin flips to know which items were in the space.
    let mut rng = rng_from(2, &[]);
    let (new_pool, old_pool): (Vec<ItemId>, Vec<ItemId>) = s
        .table
        .ranked(UserId(1), &candidates)
        .unwrap()
        .into_iter()
        .map(|(i, _)| i)
        .partition(|&i| Novelty::default().is_new(s.plan.entry_stage(i), 2));
    let p = estimate_new_preference(&history, &s.plan, Novelty::default(), 10, 0.05);
    let mut space = ActionSpace::build(p, new_pool, old_pool, 6, &mut rng).unwrap();
    for &item in &ep.items {
        assert_eq!(item, *space.items().iter().min().unwrap());
        space.take(item);
        space.refill(&mut rng);
    }
}

#[test]
fn train_mode_learns_and_rewards_stay_bounded() {
    let s = scenario();
    let cfg = small_config();
    let (alpha, beta) = (cfg.reward.alpha, cfg.reward.beta);
    let mut agent = Agent::initialize(&s.table, cfg, 5).unwrap();
    let candidates = s.plan.available_items(2)[..60].to_vec();
    let positives: BTreeSet<ItemId> = candidates[..5].iter().copied().collect();
    for u in 0..5 {
        let user = UserId(u);
        let history = HistoryView::before_stage(user, s.bundle.history(user), 2);
        let ctx = context(&s, user, &candidates, &history, 8);
        let ep = agent
            .generate_list(&ctx, Mode::Train { positives: &positives }, &mut rng_from(u as u64, &[]))
            .unwrap();
        assert_eq!(ep.rewards.len(), 8);
        for p in &ep.rewards {
            assert!((0.0..=1.0).contains(&p.acc));
            assert!([0.0, 0.1, 1.0].iter().any(|v| (p.new - v).abs() < 1e-12));
            assert!(p.fair.abs() <= fair_reward_bound());
            let t = p.total(alpha, beta);
            assert!(t >= -alpha * fair_reward_bound() && t <= 1.0 + alpha * fair_reward_bound() + beta);
        }
    }
    assert_eq!(agent.buffer().len(), 40);
    assert!(agent.updates() > 0);
    let terminal = agent.buffer().iter().filter(|e| e.terminal).count();
    assert_eq!(terminal, 5);
}

#[test]
fn train_pass_covers_users_with_positives() {
    let s = scenario();
    let mut agent = Agent::initialize(&s.table, small_config(), 5).unwrap();
    let mut positives = PositiveSets::new();
    positives.insert(UserId(0), [ItemId(1)].into_iter().collect());
    positives.insert(UserId(2), BTreeSet::new());
    positives.insert(UserId(3), [ItemId(2), ItemId(5)].into_iter().collect());
    let histories: BTreeMap<UserId, HistoryView> = [UserId(0), UserId(3)]
        .into_iter()
        .map(|u| (u, HistoryView::before_stage(u, s.bundle.history(u), 1)))
        .collect();
    let sim = SimConfig {
        k: 5,
        candidate_size: 50,
        new_window: 1,
    };
    let summary = train_pass(&mut agent, 1, 0, &s.plan, &positives, &histories, &s.table, &sim, 4).unwrap();
    assert_eq!(summary.episodes, 2);
    assert_eq!(agent.buffer().len(), 10);
}

#[test]
fn history_entries_feed_the_state() {
    let table = random_table(1, 6, 2, 13);
    let mut cfg = small_config();
    cfg.reward.history_len = 2;
    let agent = Agent::initialize(&table, cfg, 1).unwrap();
    let history = HistoryView {
        user: UserId(0),
        as_of_stage: 1,
        entries: [4, 2, 1]
            .iter()
            .map(|&i| HistoryEntry {
                item: ItemId(i),
                stage: 0,
            })
            .collect(),
    };
    let s = agent.state_for(UserId(0), &history).unwrap();
    // Two most recent items, oldest first: 2 then 4.
    assert_eq!(s.slot(0), table.item_vector(ItemId(2)).unwrap());
    assert_eq!(s.slot(1), table.item_vector(ItemId(4)).unwrap());
}
