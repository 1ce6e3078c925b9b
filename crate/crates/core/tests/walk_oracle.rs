mod common;

use common::*;
use pathdistill::path_model::{forward, path_distribution, PathSnapshot};
use pathdistill::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_pass_equals_walk_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cases = 0;
    let mut isolated = 0;
    for _ in 0..60 {
        let inst = random_instance(&mut rng, SMALL);
        let nodes: usize = inst.graph.node_types().iter().map(|t| t.len()).sum();
        assert!(nodes <= 30);
        let params = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        for u in 0..inst.graph.num_users() {
            match (forward(&params, &inst.graph, u, &inst.paths), reference_z_prime(&inst.graph, &inst.paths, &params, u)) {
                (Ok(r), Some(z)) => {
                    let err = max_abs_diff(&r.z_prime, &z);
                    assert!(err <= 1e-10, "{:?} user {u}: {err}", inst.specs);
                    for (k, p) in inst.paths.iter().enumerate() {
                        let mass = walk_mass(&inst.graph, p, &params.rho, u);
                        assert!(max_abs_diff(r.traces[k].row(), &mass) <= 1e-10);
                    }
                }
                (Err(Error::IsolatedUser(_)), None) => isolated += 1,
                (got, want) => panic!("forward {:?} vs reference {:?}", got.map(|r| r.z_prime), want),
            }
        }
        cases += 1;
    }
    assert!(cases >= 50);
    assert!(isolated > 0, "the sample should include unreachable users");
}

#[test]
fn distributions_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, SMALL);
        let params = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let p = path_distribution(&params);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let snap = PathSnapshot::new(&params, &inst.graph, &inst.paths);
        for u in 0..inst.graph.num_users() {
            let Ok(r) = snap.forward(u, false) else { continue };
            assert!((r.z_prime.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(r.z_prime.iter().all(|&x| x >= 0.0));
            assert!((r.mixture.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn dead_paths_drop_out_of_the_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut seen = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, SMALL);
        let params = random_path_params(&mut rng, &inst.graph, inst.paths.len());
        let q = path_distribution(&params);
        for u in 0..inst.graph.num_users() {
            let Ok(r) = forward(&params, &inst.graph, u, &inst.paths) else { continue };
            let alive: Vec<bool> = r.traces.iter().map(|t| t.reaches_items()).collect();
            if alive.iter().all(|&a| a) {
                assert!(max_abs_diff(&r.mixture, &q) < 1e-15);
                continue;
            }
            seen += 1;
            let mass: f64 = q.iter().zip(&alive).filter(|(_, a)| **a).map(|(q, _)| q).sum();
            for (k, &a) in alive.iter().enumerate() {
                let want = if a { q[k] / mass } else { 0.0 };
                assert!((r.mixture[k] - want).abs() < 1e-15);
            }
        }
    }
    assert!(seen > 0);
}
