use criterion::{criterion_group, criterion_main, Criterion};

use forcecast_core::actionexpert::{corrupt_actions, target_field, NormStats};
use forcecast_core::config::{ModelConfig, Variant};
use forcecast_core::contactsim::render::render;
use forcecast_core::contactsim::{step, SimParams, Task, WorldState};
use forcecast_core::embedding::ModalityBundle;
use forcecast_core::numerics::param::GradAccum;
use forcecast_core::numerics::rng::RngStream;
use forcecast_core::numerics::tape::Tape;
use forcecast_core::numerics::tensor::Tensor;
use forcecast_core::policy::PolicyModel;

fn bench_forward_backward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let model = PolicyModel::init(&cfg, Variant::FdmLearnable, NormStats::identity(3), 1).unwrap();
    let mut rng = RngStream::new(2);
    let world = WorldState::init(Task::Wipe, &mut rng.clone());
    let bundle = ModalityBundle {
        language: Task::Wipe.instruction().to_string(),
        vision: render(&world),
        state: world.state_vector(),
        force: Some(vec![0.4, -1.2, 0.02]),
    };
    let chunk = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 1.0, &mut rng);
    let eps = Tensor::randn(vec![cfg.horizon, cfg.action_dim], 1.0, &mut rng);
    let a_tau = corrupt_actions(&chunk, &eps, 0.5).unwrap();
    let u = target_field(&chunk, &eps).unwrap();

    c.bench_function("train_step_single_sample", |b| {
        b.iter(|| {
            let mut tape = Tape::new(&model.store);
            let pass = model.forward_features(&mut tape, &bundle).unwrap();
            let v = model
                .head
                .predict_velocity(&mut tape, &a_tau, 0.5, pass.features)
                .unwrap();
            let flow = model.head.fm_loss(&mut tape, v, &u).unwrap();
            let actual = model
                .fdm
                .encode_actual(&mut tape, Some(&[0.4, -1.2, 0.02]))
                .unwrap();
            let distill = model
                .fdm
                .distill_loss(&mut tape, &pass.predicted.unwrap(), &actual)
                .unwrap();
            let total = tape.add(flow, distill).unwrap();
            let mut accum = GradAccum::new(&model.store);
            tape.backward(total, &mut accum, 1.0).unwrap();
            tape.scalar_value(total)
        })
    });

    c.bench_function("act_chunk_10_euler_steps", |b| {
        let mut rng = RngStream::new(5);
        b.iter(|| model.act(&bundle, 10, &mut rng).unwrap())
    });
}

fn bench_simulator(c: &mut Criterion) {
    let params = SimParams::default();
    c.bench_function("sim_step_plus_render", |b| {
        let mut rng = RngStream::new(3);
        let mut world = WorldState::init(Task::Insert, &mut rng);
        b.iter(|| {
            step(&mut world, [0.002, -0.004, 0.0], &params);
            render(&world)
        })
    });
}

criterion_group!(benches, bench_forward_backward, bench_simulator);
criterion_main!(benches);
