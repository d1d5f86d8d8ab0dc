use fedaccess_core::data::{synth_blobs, synth_blobs_split, BlobSpec};
use fedaccess_core::fl::{fed_avg, local_train, priority, LocalUpdate, TrainSettings};
use fedaccess_core::nn::{init_model, Model};
use fedaccess_core::rng::SimRng;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn perturbed(base: &Model, scale: f64, seed: u64) -> Model {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut m = base.clone();
    m.params_mut().for_each(|p| *p += scale * (rng.random::<f64>() - 0.5));
    m
}

/// Weighted mean computed entry by entry from flat parameter vectors.
fn weighted_mean_oracle(updates: &[LocalUpdate]) -> Vec<f64> {
    let flat: Vec<Vec<f64>> = updates.iter().map(|u| u.model.params().copied().collect()).collect();
    let total: usize = updates.iter().map(|u| u.dataset_size).sum();
    (0..flat[0].len())
        .map(|i| {
            let mut acc = 0.0;
            for (u, params) in updates.iter().zip(&flat) {
                acc += params[i] * u.dataset_size as f64;
            }
            acc / total as f64
        })
        .collect()
}

#[test]
fn fed_avg_matches_oracle_with_unequal_sizes() {
    let base = init_model(&[7, 5, 3], 1).unwrap();
    let updates: Vec<LocalUpdate> = [100, 200, 300]
        .iter()
        .enumerate()
        .map(|(i, &n)| LocalUpdate { user_id: i, model: perturbed(&base, 1.0, i as u64), dataset_size: n })
        .collect();
    let got: Vec<f64> = fed_avg(&updates).unwrap().params().copied().collect();
    let want = weighted_mean_oracle(&updates);
    let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "max abs diff {worst}");
}

#[test]
fn local_train_is_reproducible_and_moves_the_model() {
    let data = synth_blobs(3, 40, 6, 5).unwrap();
    let global = init_model(&[6, 8, 3], 2).unwrap();
    let idx: Vec<usize> = (0..120).collect();
    let settings = TrainSettings::default();
    let a = local_train(&global, &idx, &data, &settings, &mut SimRng::seed_from_u64(9)).unwrap();
    let b = local_train(&global, &idx, &data, &settings, &mut SimRng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.model, global);
    assert_eq!(a.steps, 4);
    assert!(priority(&a.model, &global).unwrap().value() > 1.0);
}

/// Recomputes the priority from flattened parameters, layer by layer.
fn priority_oracle(local: &Model, global: &Model) -> f64 {
    local
        .layers()
        .iter()
        .zip(global.layers())
        .map(|(l, g)| {
            let lp: Vec<f64> = l.weights().iter().chain(l.bias()).copied().collect();
            let gp: Vec<f64> = g.weights().iter().chain(g.bias()).copied().collect();
            let mut d2 = 0.0;
            let mut g2 = 0.0;
            for i in 0..lp.len() {
                d2 += (lp[i] - gp[i]).powi(2);
                g2 += gp[i].powi(2);
            }
            1.0 + d2.sqrt() / g2.sqrt()
        })
        .product()
}

#[test]
fn trained_priorities_match_recomputation() {
    let spec = BlobSpec { classes: 4, train_per_class: 100, test_per_class: 0, dim: 12, spread: 0.15, seed: 3 };
    let (data, _) = synth_blobs_split(&spec).unwrap();
    let global = init_model(&[12, 16, 4], 4).unwrap();
    for user in 0..4 {
        let idx: Vec<usize> = (user * 100..(user + 1) * 100).collect();
        let local = local_train(&global, &idx, &data, &TrainSettings::default(), &mut SimRng::seed_from_u64(user as u64))
            .unwrap()
            .model;
        let p = priority(&local, &global).unwrap().value();
        assert!((p - priority_oracle(&local, &global)).abs() < 1e-12);
        assert!(p >= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fed_avg_oracle_on_random_cases(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SimRng::seed_from_u64(seed);
        let base = init_model(&[5, 4, 3], seed).unwrap();
        let updates: Vec<LocalUpdate> = (0..n)
            .map(|i| LocalUpdate {
                user_id: i,
                model: perturbed(&base, 2.0, seed.wrapping_add(i as u64)),
                dataset_size: rng.random_range(1..1000),
            })
            .collect();
        let got: Vec<f64> = fed_avg(&updates).unwrap().params().copied().collect();
        let want = weighted_mean_oracle(&updates);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fed_avg_stays_in_envelope_and_ignores_order(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SimRng::seed_from_u64(seed);
        let base = init_model(&[3, 3, 2], seed).unwrap();
        let mut updates: Vec<LocalUpdate> = (0..n)
            .map(|i| LocalUpdate {
                user_id: i * 3,
                model: perturbed(&base, 1.0, seed ^ i as u64),
                dataset_size: rng.random_range(1..50),
            })
            .collect();
        let avg = fed_avg(&updates).unwrap();
        let flat: Vec<Vec<f64>> = updates.iter().map(|u| u.model.params().copied().collect()).collect();
        for (i, v) in avg.params().enumerate() {
            let lo = flat.iter().map(|f| f[i]).fold(f64::INFINITY, f64::min);
            let hi = flat.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *v && *v <= hi);
        }
        updates.reverse();
        let reversed = fed_avg(&updates).unwrap();
        let bits = |m: &Model| m.params().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&avg), bits(&reversed));
    }

    #[test]
    fn priority_is_at_least_one(seed in any::<u64>(), scale in 0.0f64..10.0) {
        let g = init_model(&[4, 3, 2], seed).unwrap();
        let l = perturbed(&g, scale, seed.rotate_left(7));
        let p = priority(&l, &g).unwrap().value();
        prop_assert!(p >= 1.0);
        prop_assert_eq!(p == 1.0, l == g);
    }
}
