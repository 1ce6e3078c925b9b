mod common;

use common::*;
use pathdistill::embed::{backward, score_all, EmbedFeatures, ItemReprs};
use pathdistill::path_model;
use pathdistill::train::{total_loss, Objective, Routing, TrainData};
use pathdistill::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random_upstream(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn walk_model_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 40 {
        let inst = random_instance(&mut rng, TINY);
        let params = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let user = rng.gen_range(0..inst.graph.num_users());
        let result = match path_model::forward(&params, &inst.graph, user, &inst.paths) {
            Ok(r) => r,
            Err(Error::IsolatedUser(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        let upstream = random_upstream(&mut rng, inst.graph.num_items());
        let grads = path_model::backward(&params, &inst.graph, &inst.paths, &result, &upstream).unwrap();
        let objective = |p: &path_model::PathModelParams| -> f64 {
            let z = path_model::forward(p, &inst.graph, user, &inst.paths).unwrap().z_prime;
            z.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let num = numeric_gradient(&params.rho, FD_STEP, |x| {
            let mut p = params.clone();
            p.rho.copy_from_slice(x);
            objective(&p)
        });
        let err = max_relative_error(&grads.rho, &num);
        assert!(err <= TOL, "rho gradient error {err} on {:?}", inst.specs);
        let num = numeric_gradient(&params.path_logits, FD_STEP, |x| {
            let mut p = params.clone();
            p.path_logits.copy_from_slice(x);
            objective(&p)
        });
        let err = max_relative_error(&grads.path_logits, &num);
        assert!(err <= TOL, "logit gradient error {err} on {:?}", inst.specs);
        checked += 1;
    }
}

#[test]
fn edges_off_every_meta_path_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let inst = random_instance(&mut rng, TINY);
        let params = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let Ok(result) = path_model::forward(&params, &inst.graph, 0, &inst.paths) else {
            continue;
        };
        let upstream = random_upstream(&mut rng, inst.graph.num_items());
        let grads = path_model::backward(&params, &inst.graph, &inst.paths, &result, &upstream).unwrap();
        let used: Vec<usize> = inst.paths.iter().flat_map(|p| p.steps().iter().map(|s| s.relation)).collect();
        for r in 0..inst.graph.relations().len() {
            if used.contains(&r) {
                continue;
            }
            let lo = inst.graph.rho_offset(r);
            let hi = lo + inst.graph.relation(r).len();
            assert!(grads.rho[lo..hi].iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn embedding_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..40 {
        let inst = random_instance(&mut rng, TINY);
        let features = EmbedFeatures::new(&inst.graph, &inst.data);
        let dim = rng.gen_range(1..=4);
        let params = random_embed_params(&mut rng, &inst.graph, dim);
        let user = rng.gen_range(0..inst.graph.num_users());
        let upstream = random_upstream(&mut rng, inst.graph.num_items());
        let items = ItemReprs::compute(&params, &features);
        let scores = score_all(&params, &features, &items, user);
        let grads = backward(&params, &features, &items, &scores, &upstream);
        let objective = |p: &pathdistill::embed::EmbedModelParams| -> f64 {
            let z = reference_z(&inst.graph, &inst.data, p, user);
            z.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let num = numeric_gradient(&params.table, FD_STEP, |x| {
            let mut p = params.clone();
            p.table.copy_from_slice(x);
            objective(&p)
        });
        let err = max_relative_error(&grads.table, &num);
        assert!(err <= TOL, "table gradient error {err}");
        let num = numeric_gradient(&params.out_weight, FD_STEP, |x| {
            let mut p = params.clone();
            p.out_weight.copy_from_slice(x);
            objective(&p)
        });
        let err = max_relative_error(&grads.out_weight, &num);
        assert!(err <= TOL, "output weight gradient error {err}");
    }
}

#[test]
fn embedding_forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, SMALL);
        let features = EmbedFeatures::new(&inst.graph, &inst.data);
        let params = random_embed_params(&mut rng, &inst.graph, 3);
        let items = ItemReprs::compute(&params, &features);
        for u in 0..inst.graph.num_users() {
            let z = score_all(&params, &features, &items, u).z;
            let reference = reference_z(&inst.graph, &inst.data, &params, u);
            assert!(max_abs_diff(&z, &reference) < 1e-12);
        }
    }
}

#[test]
fn total_loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..30 {
        let err = total_loss_gradient_error(&mut rng);
        assert!(err <= TOL, "case {case}: relative error {err}");
    }
}

#[test]
fn routing_only_masks_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, TINY);
        let td = TrainData::new(&inst.graph, &inst.data, &inst.paths);
        let embed = random_embed_params(&mut rng, &inst.graph, 2);
        let path = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let users: Vec<usize> = (0..inst.graph.num_users()).collect();
        let objective = Objective {
            alpha: 0.7,
            beta: 0.3,
            kl: true,
        };
        let both = Routing { embed: true, path: true };
        let (full_loss, full) = total_loss(&td, &embed, Some(&path), &users, objective, both).unwrap();
        let (e_loss, e_only) = total_loss(&td, &embed, Some(&path), &users, objective, Routing { embed: true, path: false }).unwrap();
        let (p_loss, p_only) = total_loss(&td, &embed, Some(&path), &users, objective, Routing { embed: false, path: true }).unwrap();
        assert_eq!(full_loss, e_loss);
        assert_eq!(full_loss, p_loss);
        assert_eq!(full.embed, e_only.embed);
        assert_eq!(full.path, p_only.path);
        assert!(e_only.path.rho.iter().chain(&e_only.path.path_logits).all(|&g| g == 0.0));
        assert!(p_only.embed.table.iter().chain(&p_only.embed.out_weight).all(|&g| g == 0.0));
    }
}

#[test]
fn loss_is_additive_over_users() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, SMALL);
        let td = TrainData::new(&inst.graph, &inst.data, &inst.paths);
        let embed = random_embed_params(&mut rng, &inst.graph, 3);
        let path = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let objective = Objective {
            alpha: 1.0,
            beta: 0.5,
            kl: true,
        };
        let routing = Routing { embed: true, path: true };
        let users: Vec<usize> = (0..inst.graph.num_users()).collect();
        let (all, g_all) = total_loss(&td, &embed, Some(&path), &users, objective, routing).unwrap();
        let mut sum = 0.0;
        let mut rho = vec![0.0; path.rho.len()];
        for &u in &users {
            let (one, g) = total_loss(&td, &embed, Some(&path), &[u], objective, routing).unwrap();
            sum += one.total;
            for (a, b) in rho.iter_mut().zip(&g.path.rho) {
                *a += b;
            }
        }
        assert!((all.total - sum).abs() <= 1e-10 * sum.abs().max(1.0));
        assert!(max_abs_diff(&g_all.path.rho, &rho) < 1e-10);
    }
}
