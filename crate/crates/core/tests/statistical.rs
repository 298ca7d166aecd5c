use ifbounds::estimators::{gamma_ti, naive_exponential};
use ifbounds::model::{IsingBlockParams, ModelParams, State, SystemModel};
use ifbounds::oracle::{enumerate_densities, enumerate_oracle};
use ifbounds::sampler::{run_chain, run_chain_ladder, ChainConfig, StateBuffer};

fn ring(n: usize, off: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (off + i, off + (i + 1) % n)).collect()
}

fn two_rings(n: usize, j: f64, k: f64, cross: Vec<(usize, usize)>) -> SystemModel {
    let mut intra = ring(n, 0);
    intra.extend(ring(n, n));
    SystemModel::new(
        ModelParams::IsingBlock(IsingBlockParams { j, k, intra_edges: intra, cross_edges: cross }),
        vec![n, n],
        1.0,
    )
    .unwrap()
}

fn state_index(s: &[i8]) -> usize {
    s.iter().enumerate().map(|(k, &v)| usize::from(v == -1) << k).sum()
}

/// Total variation distance between the chain's visit frequencies and the
/// enumerated tempered density.
#[test]
fn spin_chain_is_stationary_at_every_alpha() {
    let m = two_rings(3, 0.6, 1.2, vec![(0, 3), (1, 5)]);
    let dens = enumerate_densities(&m).unwrap();
    for (i, alpha) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let batch = run_chain(&m, &ChainConfig::new(alpha, 1_000_000, 1.0, 40 + i as u64)).unwrap();
        let StateBuffer::Spins { dim, data } = &batch.states else { unreachable!() };
        let mut counts = vec![0.0; dens.pi.len()];
        for s in data.chunks_exact(*dim) {
            counts[state_index(s)] += 1.0;
        }
        let n = batch.len() as f64;
        let exact = dens.tempered(alpha);
        let tv: f64 = counts.iter().zip(&exact).map(|(c, p)| (c / n - p).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.02, "alpha {alpha}: total variation {tv}");
    }
}

#[test]
fn gaussian_chain_reproduces_covariance() {
    use ifbounds::linalg::{Cholesky, SquareMatrix};
    use ifbounds::model::GaussianPairParams;
    let mut c = SquareMatrix::zeros(3);
    for (i, j, v) in [(0, 2, 0.4), (1, 2, -0.3)] {
        c.set(i, j, v);
        c.set(j, i, v);
    }
    let mut d = SquareMatrix::identity(3);
    d.set(0, 1, 0.2);
    d.set(1, 0, 0.2);
    let h = d.add_scaled(&c, 1.0);
    let cov = Cholesky::factor(&h).unwrap().inverse();
    let m = SystemModel::new(ModelParams::GaussianPair(GaussianPairParams { d, c }), vec![2, 1], 1.0).unwrap();
    let batch = run_chain(&m, &ChainConfig::new(1.0, 600_000, 1.2, 8)).unwrap();
    let n = batch.len() as f64;
    let mut second = [[0.0; 3]; 3];
    for s in batch.states.iter() {
        let State::Continuous(x) = s else { unreachable!() };
        for a in 0..3 {
            for b in 0..3 {
                second[a][b] += x[a] * x[b] / n;
            }
        }
    }
    for a in 0..3 {
        for b in 0..3 {
            assert!((second[a][b] - cov.get(a, b)).abs() < 0.05, "({a},{b}): {} vs {}", second[a][b], cov.get(a, b));
        }
    }
}

#[test]
fn thermodynamic_integration_recovers_enumerated_free_energy() {
    let m = two_rings(6, 1.0, 1.0, vec![(0, 6), (3, 9)]);
    let alphas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let exact = enumerate_oracle(&m, &alphas, 1).unwrap();
    // discretization error of the trapezoid rule on the exact means
    let exact_means: Vec<_> = alphas
        .iter()
        .map(|&a| ifbounds::estimators::MeanU::exact(a, exact.e_u_at(a).unwrap()))
        .collect();
    let ti_exact = ifbounds::estimators::gamma_ti_from_means(&exact_means).unwrap();
    let disc = (ti_exact.last().unwrap().gamma - exact.delta_f).abs();
    let ladder = run_chain_ladder(&m, &alphas, &ChainConfig::new(0.0, 200_000, 1.0, 300), 4).unwrap();
    let g = gamma_ti(&ladder).unwrap();
    let last = g.last().unwrap();
    assert!(
        (last.gamma - exact.delta_f).abs() <= 4.0 * last.std_error + disc,
        "gamma(1) {} +- {} vs {}",
        last.gamma,
        last.std_error,
        exact.delta_f
    );
    for (p, &a) in g.iter().zip(&alphas) {
        let want = exact.gamma_at(a).unwrap();
        assert!((p.gamma - want).abs() <= 4.0 * p.std_error + disc, "alpha {a}");
    }
}

#[test]
fn naive_estimator_is_consistent_on_a_weak_coupling() {
    let m = two_rings(3, 0.5, 0.3, vec![(0, 3)]);
    let exact = enumerate_oracle(&m, &[], 1).unwrap();
    let batch = run_chain(&m, &ChainConfig::new(0.0, 400_000, 1.0, 12)).unwrap();
    let est = naive_exponential(&batch).unwrap();
    assert!((est.value - exact.delta_f).abs() <= 4.0 * est.std_error, "{} +- {} vs {}", est.value, est.std_error, exact.delta_f);
}

#[test]
fn exact_inputs_reproduce_direct_kl() {
    use ifbounds::estimators::{kl_pi_pi0_from, BoundEstimate, BoundKind, EstimateFlag, MeanU};
    use ifbounds::oracle::kl_divergence;
    for m in [two_rings(3, 0.0, 1.0, vec![(0, 3)]), two_rings(6, 1.0, 1.0, vec![(0, 6), (3, 9)])] {
        let o = enumerate_oracle(&m, &[], 1).unwrap();
        let d = enumerate_densities(&m).unwrap();
        let delta_f = BoundEstimate {
            value: o.delta_f,
            std_error: 0.0,
            n_effective: 1.0,
            kind: BoundKind::Gamma,
            alpha: Some(1.0),
            flags: vec![EstimateFlag::Exact],
        };
        let kl = kl_pi_pi0_from(&delta_f, &MeanU::exact(1.0, o.e_u_pi)).unwrap();
        assert!((kl.value - kl_divergence(&d.pi, &d.pi0)).abs() <= 1e-12);
        assert!(kl.has_flag(EstimateFlag::Exact));
    }
}
