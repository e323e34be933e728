use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nanogrid::agents::{Agent, Hyperparams, QAgent, QArch, Transition, Variant};
use nanogrid::env::{Env, Scenario, ScenarioConfig};

fn scenario(days: usize) -> Arc<Scenario> {
    Arc::new(Scenario::generate(&ScenarioConfig::default(), 1, 0, days).unwrap())
}

fn simulated_day(c: &mut Criterion) {
    let sc = scenario(1);
    let mut env = Env::new(sc, 144).unwrap();
    c.bench_function("simulated_day_baseline_10_clusters", |b| {
        b.iter(|| {
            env.reset_day(0).unwrap();
            while !env.is_done() {
                let a = env.baseline_actions();
                env.step(&a).unwrap();
            }
            env.learner_costs()
        })
    });
    c.bench_function("scenario_day_generation", |b| {
        b.iter(|| Scenario::generate(&ScenarioConfig::default(), 2, 0, 1).unwrap())
    });
}

fn filled(arch: QArch) -> QAgent {
    let hp = Hyperparams::default();
    let mut a = QAgent::new(arch, false, &hp, 10, 5, 1).unwrap();
    for ep in 0..10u64 {
        for t in 0..144usize {
            let s: Vec<f64> = (0..22).map(|i| ((i * 7 + t * 13) % 17) as f64 / 17.0).collect();
            a.buffer.push(Transition {
                next_state: s.clone(),
                state: s,
                action: t % 5,
                reward: if t % 3 == 0 { 1.0 } else { -1.0 },
                done: t == 143,
                episode: ep,
            });
        }
    }
    a
}

fn updates(c: &mut Criterion) {
    for (name, arch) in [
        ("dqn_update", QArch::Feedforward),
        ("drqn_update", QArch::Recurrent),
        ("bi_drqn_update", QArch::Bidirectional),
    ] {
        let agent = filled(arch);
        c.bench_function(name, |b| {
            b.iter_batched_ref(|| agent.clone(), |a| a.train_step().unwrap(), BatchSize::LargeInput)
        });
    }
}

fn acting(c: &mut Criterion) {
    let state: Vec<f64> = (0..22).map(|i| i as f64 * 0.3).collect();
    for name in ["n_dqn", "n_drqn", "gcn_n_ppo"] {
        let v: Variant = name.parse().unwrap();
        let mut agent = Agent::new(v, &Hyperparams::default(), 10, 0).unwrap();
        c.bench_function(&format!("act_{name}"), |b| b.iter(|| agent.act(&state, false).unwrap()));
    }
}

criterion_group!(benches, simulated_day, updates, acting);
criterion_main!(benches);
