use fedfeed_core::federated::{self, aggregate, client_update, run_round, run_simulation, BatchSize};
use fedfeed_core::model::{featurize, loss_and_gradient, Example, ModelParams};
use fedfeed_core::synth::{self, SynthConfig};
use fedfeed_core::{ClientState, ClientUpdate, Partition, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(cfg: &SynthConfig) -> Vec<Example> {
    let c = synth::generate(cfg).unwrap();
    c.posts
        .iter()
        .map(|p| {
            let label = c.categories.index_of(p.label.as_deref().unwrap()).unwrap();
            Example::new(featurize(&p.text, 4096).unwrap(), label)
        })
        .collect()
}

fn random_params(rng: &mut ChaCha8Rng, k: usize, d: usize) -> ModelParams {
    ModelParams::from_weights(k, d, (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn single_client_round_is_a_centralized_gradient_step() {
    let data = corpus(&SynthConfig { users: 5, posts_per_user: 8, ..SynthConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let global = random_params(&mut rng, 4, 4096);
    let cfg = TrainConfig { num_clients: 1, learning_rate: 0.37, ..TrainConfig::default() };
    let mut clients = vec![ClientState::new("only", data.clone())];
    let (next, report) = run_round(&global, &mut clients, &cfg, 1, &data).unwrap();

    let (_, grad) = loss_and_gradient(&global, &data).unwrap();
    let worst = global
        .weights()
        .iter()
        .zip(grad.weights())
        .zip(next.weights())
        .map(|((w, g), n)| (w - 0.37 * g - n).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
    assert_eq!(report.client_losses.len(), 1);
}

#[test]
fn vanishing_learning_rate_returns_global() {
    let data = corpus(&SynthConfig { users: 3, posts_per_user: 4, ..SynthConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let global = random_params(&mut rng, 4, 4096);
    let cfg = TrainConfig { learning_rate: 1e-300, ..TrainConfig::default() };
    let u = client_update(&global, &ClientState::new("c", data), &cfg, 1).unwrap();
    let worst = global.weights().iter().zip(u.params.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-12);
}

#[test]
fn identical_clients_match_a_single_update() {
    let data = corpus(&SynthConfig { users: 4, posts_per_user: 5, ..SynthConfig::default() });
    let global = ModelParams::zeros(4, 4096).unwrap();
    let cfg = TrainConfig { batch_size: BatchSize::Fixed(3), local_epochs: 2, ..TrainConfig::default() };
    // The same client id gives the same shuffling seed.
    let mut clients: Vec<ClientState> = (0..4).map(|_| ClientState::new("same", data.clone())).collect();
    let (next, _) = run_round(&global, &mut clients, &cfg, 1, &data).unwrap();
    let single = client_update(&global, &ClientState::new("same", data), &cfg, 1).unwrap();
    assert_eq!(next, single.params);
}

#[test]
fn seeded_local_training_is_reproducible() {
    let data = corpus(&SynthConfig { users: 4, posts_per_user: 5, ..SynthConfig::default() });
    let global = ModelParams::zeros(4, 4096).unwrap();
    let cfg = TrainConfig { batch_size: BatchSize::Fixed(4), local_epochs: 3, ..TrainConfig::default() };
    let c = ClientState::new("c", data);
    assert_eq!(client_update(&global, &c, &cfg, 2).unwrap(), client_update(&global, &c, &cfg, 2).unwrap());
}

#[test]
fn accuracy_increases_over_first_three_rounds() {
    // Fewer core words per post than the default, so learning is gradual.
    let data = corpus(&SynthConfig { core_fraction: 0.3, ..SynthConfig::default() });
    let cfg = TrainConfig { rounds: 3, ..TrainConfig::default() };
    let out = run_simulation(&ModelParams::zeros(4, 4096).unwrap(), 1, &data, &Partition::Iid, &cfg).unwrap();
    let acc: Vec<f64> = out.reports.iter().map(|r| r.eval_acc).collect();
    assert!(acc[0] < acc[1] && acc[1] < acc[2], "{acc:?}");
}

#[test]
fn iid_and_label_skew_both_converge() {
    let data = corpus(&SynthConfig::default());
    let cfg = TrainConfig::default();
    for partition in [Partition::Iid, Partition::LabelSkew] {
        let out = run_simulation(&ModelParams::zeros(4, 4096).unwrap(), 1, &data, &partition, &cfg).unwrap();
        assert_eq!(out.reports.len(), 20);
        let acc = out.reports.last().unwrap().eval_acc;
        assert!(acc >= 0.9, "{partition:?}: {acc}");
    }
}

#[test]
fn simulation_is_deterministic() {
    let data = corpus(&SynthConfig { users: 10, posts_per_user: 6, ..SynthConfig::default() });
    let cfg = TrainConfig { rounds: 4, participation: 0.5, batch_size: BatchSize::Fixed(5), ..TrainConfig::default() };
    let init = ModelParams::zeros(4, 4096).unwrap();
    let a = run_simulation(&init, 1, &data, &Partition::LabelSkew, &cfg).unwrap();
    let b = run_simulation(&init, 1, &data, &Partition::LabelSkew, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    let strip = |r: &federated::RoundReport| (r.round, r.client_losses.clone(), r.eval_loss, r.eval_acc);
    assert_eq!(a.reports.iter().map(strip).collect::<Vec<_>>(), b.reports.iter().map(strip).collect::<Vec<_>>());
}

#[test]
fn empty_clients_are_reported_not_averaged_in() {
    let data = corpus(&SynthConfig { users: 2, posts_per_user: 3, ..SynthConfig::default() });
    let global = ModelParams::zeros(4, 4096).unwrap();
    let cfg = TrainConfig::default();
    let mut clients = vec![ClientState::new("a", data.clone()), ClientState::new("b", Vec::new())];
    let (next, report) = run_round(&global, &mut clients, &cfg, 1, &data).unwrap();
    assert_eq!(report.skipped_clients, vec!["b".to_string()]);
    assert_eq!(next, client_update(&global, &ClientState::new("a", data.clone()), &cfg, 1).unwrap().params);
    let mut none = vec![ClientState::new("b", Vec::new())];
    assert!(run_round(&global, &mut none, &cfg, 1, &data).is_err());
}

#[test]
fn rounds_zero_is_rejected() {
    assert!(TrainConfig { rounds: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn only_parameters_and_loss_cross_the_client_boundary() {
    // Exhaustive destructuring: adding a field to the update breaks this test.
    let data = corpus(&SynthConfig { users: 2, posts_per_user: 2, ..SynthConfig::default() });
    let u = client_update(&ModelParams::zeros(4, 4096).unwrap(), &ClientState::new("c", data), &TrainConfig::default(), 1)
        .unwrap();
    let ClientUpdate { client_id, params, train_loss, num_examples } = u;
    let _: (String, ModelParams, f64, usize) = (client_id, params, train_loss, num_examples);
}

fn update(id: String, w: Vec<f64>) -> ClientUpdate {
    let d = w.len() / 2;
    ClientUpdate { client_id: id, params: ModelParams::from_weights(2, d, w).unwrap(), train_loss: 0.0, num_examples: 1 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregate_stays_within_coordinate_bounds(
        ws in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 8), 1..7),
    ) {
        let updates: Vec<ClientUpdate> = ws.iter().enumerate().map(|(i, w)| update(format!("c{i}"), w.clone())).collect();
        let agg = aggregate(&updates, false).unwrap();
        for j in 0..8 {
            let lo = ws.iter().map(|w| w[j]).fold(f64::INFINITY, f64::min);
            let hi = ws.iter().map(|w| w[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.weights()[j] >= lo && agg.weights()[j] <= hi);
        }
    }

    #[test]
    fn aggregate_of_copies_is_identity(w in prop::collection::vec(-1e3f64..1e3, 8), n in 1usize..9) {
        let updates: Vec<ClientUpdate> = (0..n).map(|i| update(format!("c{i}"), w.clone())).collect();
        let agg = aggregate(&updates, false).unwrap();
        prop_assert_eq!(agg.weights(), w.as_slice());
    }

    #[test]
    fn aggregate_ignores_input_order(
        ws in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 8), 2..7),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let updates: Vec<ClientUpdate> = ws.iter().enumerate().map(|(i, w)| update(format!("c{i}"), w.clone())).collect();
        let mut shuffled = updates.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(aggregate(&updates, false).unwrap(), aggregate(&shuffled, false).unwrap());
    }
}
