use dprc::accountant::{self, AccountantConfig};
use dprc::envelope::{self, EnvelopeGrid};
use dprc::estimators::Estimator;
use dprc::numerics::SeededStream;
use dprc::trainer::{self, Routine, SyntheticTask, ToyModel, TrainConfig};

fn small(sigma: f64) -> AccountantConfig {
    AccountantConfig { h: 1e-3, ..AccountantConfig::new(sigma, 1000, 50, 2, 1e-5) }
}

#[test]
fn halving_the_mesh_barely_moves_eps() {
    let base = AccountantConfig::new(2.0, 2225, 64, 10, 1e-5);
    let coarse = accountant::account(&base).unwrap().eps;
    let fine = accountant::account(&AccountantConfig { h: base.h / 2.0, ..base }).unwrap().eps;
    assert!((coarse / fine - 1.0).abs() < 2e-3, "{coarse} {fine}");
}

#[test]
fn envelope_file_round_trip_preserves_eps() {
    let env = envelope::build_hutch_envelope(16, 4, 1e-4, 3.0, 512, 201).unwrap();
    let text = envelope::serialize_envelope(&env);
    let dir = std::env::temp_dir().join(format!("dprc-env-{}", std::process::id()));
    std::fs::write(&dir, &text).unwrap();
    let back = envelope::parse_envelope(&std::fs::read_to_string(&dir).unwrap()).unwrap();
    std::fs::remove_file(&dir).ok();
    assert_eq!(back, env);
    let a = accountant::account(&small(4.0).with_envelope(env)).unwrap();
    let b = accountant::account(&small(4.0).with_envelope(back)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pointwise_larger_envelope_gives_larger_eps() {
    let hutch = envelope::build_hutch_envelope(8, 2, 1e-4, 3.0, 512, 201).unwrap();
    let pp = envelope::build_hutchpp_envelope(8, 2, 1e-4, 3.0, 512).unwrap();
    // the pointwise max on the union of both grids dominates each
    let mut xs: Vec<f64> = hutch.points().iter().chain(pp.points()).map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let pts = xs.iter().map(|&x| (x, hutch.cdf(x).max(pp.cdf(x)))).collect();
    let upper = EnvelopeGrid::new(8, 2, Estimator::Hutch, hutch.x_plus, 201, pts).unwrap();
    let eps = |e: &EnvelopeGrid| accountant::account(&small(4.0).with_envelope(e.clone())).unwrap().eps;
    let (e_h, e_pp, e_up) = (eps(&hutch), eps(&pp), eps(&upper));
    assert!(e_up >= e_h - 1e-9 && e_up >= e_pp - 1e-9, "{e_h} {e_pp} {e_up}");
    let det = accountant::account(&small(4.0)).unwrap().eps;
    assert!(det < e_h.min(e_pp));
}

#[test]
fn delta_grows_with_epochs_and_eps_falls_with_sigma() {
    let cfg = small(1.2);
    let sd = accountant::scale_for(&cfg).unwrap();
    let mut prev = 0.0;
    for epochs in 1..=4 {
        let pld = accountant::composed_pld(&AccountantConfig { epochs, ..cfg.clone() }, &sd).unwrap();
        let d = accountant::delta_of_eps(&pld, 1.0);
        assert!(d >= prev);
        prev = d;
    }
    let eps: Vec<f64> = [0.9, 1.2, 1.8, 2.7].iter().map(|&s| accountant::account(&small(s)).unwrap().eps).collect();
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
}

#[test]
fn calibrated_sigma_trains_with_sketched_norms() {
    let env = envelope::build_hutchpp_envelope(16, 8, 1e-4, 3.0, 512).unwrap();
    let acc = AccountantConfig { h: 1e-3, ..AccountantConfig::new(1.0, 256, 32, 2, 1e-5) }.with_envelope(env);
    let sigma = accountant::solve_sigma(&acc, 4.0).unwrap().sigma;
    let task = SyntheticTask::new(8, 8, 0.1, 3).unwrap();
    let data = task.dataset(256, 3);
    let model = ToyModel::init(&[8, 4, 1], &mut SeededStream::new(4)).unwrap();
    let cfg = TrainConfig { clip: 1.0, sigma, lr: 0.01, batch: 32, steps: 16, routine: Routine::Hutchpp, k: 16, seed: 5 };
    let out = trainer::train(model, &data, &cfg).unwrap();
    assert_eq!(out.records.len(), 16);
    assert!(out.loss_trace.iter().all(|l| l.is_finite()));
    // every rescale obeys min(C/√n̂, 1)
    for r in &out.records {
        for (c, n) in r.rescale.iter().zip(&r.n_hat) {
            assert!((c - (cfg.clip / n.sqrt()).min(1.0)).abs() < 1e-15);
        }
    }
}
