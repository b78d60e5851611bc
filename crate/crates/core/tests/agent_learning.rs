use antijam_core::agent::argmax;
use antijam_core::{AgentConfig, DdqnAgent, EpsilonSchedule, ObservationVector, ReplayBuffer, Transition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_hot(i: usize) -> ObservationVector {
    let mut v = vec![0.0; 2];
    v[i] = 1.0;
    ObservationVector::from_normalized(v)
}

#[test]
fn full_exploration_is_uniform() {
    let cfg = AgentConfig {
        hidden_layers: vec![4],
        epsilon: EpsilonSchedule::constant(1.0),
        ..AgentConfig::default()
    };
    let mut agent = DdqnAgent::new(10, cfg, 11).unwrap();
    let state = ObservationVector::from_normalized(vec![0.1; 10]);
    let draws = 100_000;
    let mut counts = [0u64; 10];
    for _ in 0..draws {
        counts[agent.act(&state, 0).unwrap()] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, p = 0.001
    assert!(chi2 < 27.88, "chi-square {chi2} for {counts:?}");
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(10);
    for i in 0..25 {
        buf.push(Transition {
            state: one_hot(0),
            action: i,
            reward: 0.0,
            next_state: one_hot(1),
            done: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0u64; 25];
    for _ in 0..100_000 / 10 {
        for t in buf.sample(10, &mut rng).unwrap() {
            counts[t.action] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    assert!(counts[..15].iter().all(|&c| c == 0), "evicted entries were sampled");
    for &c in &counts[15..] {
        let share = c as f64 / total as f64;
        assert!((share - 0.1).abs() <= 0.005, "share {share}");
    }
}

/// Two states, two actions, deterministic. In s0 action 0 pays 0.3 and
/// stays; action 1 pays nothing but leads to s1, where action 0 pays 1 and
/// returns to s0. Action 1 in s1 pays nothing and stays.
fn toy_step(s: usize, a: usize) -> (f64, usize) {
    match (s, a) {
        (0, 0) => (0.3, 0),
        (0, _) => (0.0, 1),
        (_, 0) => (1.0, 0),
        _ => (0.0, 1),
    }
}

fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        for (s, row) in q.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (r, next) = toy_step(s, a);
                *cell = r + gamma * v[next];
            }
        }
    }
    q
}

#[test]
fn ddqn_matches_value_iteration_on_toy_mdp() {
    let gamma = 0.9;
    let q_star = value_iteration(gamma);
    // the myopic choice in s0 is wrong
    assert_eq!(argmax(&q_star[0]), 1);
    assert_eq!(argmax(&q_star[1]), 0);

    let cfg = AgentConfig {
        gamma,
        batch_size: 16,
        replay_capacity: 400,
        learning_rate: 0.01,
        target_sync_interval: 50,
        hidden_layers: vec![16],
        ..AgentConfig::default()
    };
    let mut agent = DdqnAgent::new(2, cfg, 3).unwrap();
    for i in 0..400 {
        let (s, a) = (i % 2, (i / 2) % 2);
        let (r, next) = toy_step(s, a);
        agent.remember(Transition {
            state: one_hot(s),
            action: a,
            reward: r,
            next_state: one_hot(next),
            done: false,
        });
    }
    for _ in 0..5000 {
        agent.learn().unwrap();
    }
    for s in 0..2 {
        let q = agent.q_values(&one_hot(s)).unwrap();
        assert_eq!(argmax(&q), argmax(&q_star[s]), "state {s}: learned {q:?}, optimal {:?}", q_star[s]);
        for a in 0..2 {
            assert!((q[a] - q_star[s][a]).abs() < 0.25, "state {s}: learned {q:?}, optimal {:?}", q_star[s]);
        }
    }
}
