//! Property suites over the public API. Each check returns `Err` describing
//! the first failure; `properties.rs` and the acceptance runner share them.

use std::collections::HashSet;
use std::path::Path;

use mixsaw::cli::{self, io, Engine, RunArgs};
use mixsaw::config::{ConfigFile, WaypointSpec};
use mixsaw::essm::{essm_situation_posterior, systematic_resample, EssmConfig, EssmFilter, InitSpec, ParticleSet};
use mixsaw::hmm::{hmm_predict, hmm_update, mc_log_likelihood, HmmFilter, TransitionMatrix};
use mixsaw::knowledge::{situation_given_state, GaussianComponent, GaussianMixture, KnowledgeModel, SituationDistribution, SituationSpace};
use mixsaw::rng::SeedTree;
use mixsaw::scenario::{build_knowledge, Area, MotionModel, Region, RegionSet, SafeGrid, SensorModel, TargetState};
use nalgebra::{DMatrix, Matrix2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::{mean_sd, pf_vs_kalman, Direct, RandomWalk, ORACLE_INSTANCE};

pub type Check = fn() -> Result<(), String>;

pub const SUITE: &[(&str, Check)] = &[
    ("mixture quadrature normalization (d <= 2)", mixture_normalization),
    ("mixture sampling vs density chi-square", sampling_chi_square),
    ("mixture weights sum to 1", mixture_weight_sum),
    ("situation_given_state normalization and rescaling", situation_rescaling),
    ("hmm_predict mass preservation", predict_mass),
    ("hmm_update likelihood-scaling invariance", update_scaling),
    ("MC likelihood spread shrinks with n", mc_variance_ratio),
    ("HMM posterior valid at every step", hmm_posterior_valid),
    ("ESS bounds", ess_bounds),
    ("systematic resampling multiset", resample_multiset),
    ("PF weights normalized after every step", pf_weights_normalized),
    ("ESSM posterior rescaling invariance", essm_rescaling),
    ("PF tracks Kalman mean and variance", pf_kalman_oracle),
    ("engine determinism", engine_determinism),
    ("noiseless motion is linear", motion_linearity),
    ("noiseless observation maximizes likelihood", likelihood_maximum),
    ("process covariance identity", process_covariance_identity),
    ("scenario knowledge invariants", knowledge_invariants),
    ("pipeline byte-identity and row sums", pipeline_determinism),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// (weight, mean, std per axis, correlation) with bounded conditioning.
fn component(d: usize) -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>, f64)> {
    (0.1..1.0f64, prop::collection::vec(-3.0..3.0f64, d), prop::collection::vec(0.5..2.0f64, d), -0.8..0.8f64)
}

fn build_mixture(parts: &[(f64, Vec<f64>, Vec<f64>, f64)]) -> GaussianMixture {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let comps = parts
        .iter()
        .map(|(w, m, s, rho)| {
            let d = m.len();
            let mut c = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, s.iter().map(|v| v * v)));
            if d == 2 {
                c[(0, 1)] = rho * s[0] * s[1];
                c[(1, 0)] = c[(0, 1)];
            }
            GaussianComponent::new(w / total, m.clone(), c).unwrap()
        })
        .collect();
    GaussianMixture::new(comps).unwrap()
}

fn mixture(d: usize) -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec(component(d), 1..4).prop_map(|p| build_mixture(&p))
}

/// Midpoint-rule integral of the density over `[lo, hi]^d` per axis.
fn integrate(mix: &GaussianMixture, lo: &[f64], hi: &[f64], n: usize) -> f64 {
    match mix.dim() {
        1 => {
            let h = (hi[0] - lo[0]) / n as f64;
            (0..n).map(|i| mix.density(&[lo[0] + (i as f64 + 0.5) * h]).unwrap()).sum::<f64>() * h
        }
        2 => {
            let hx = (hi[0] - lo[0]) / n as f64;
            let hy = (hi[1] - lo[1]) / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += mix.density(&[lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy]).unwrap();
                }
            }
            s * hx * hy
        }
        _ => unreachable!(),
    }
}

/// Box reaching six standard deviations past every component.
fn six_sigma_box(mix: &GaussianMixture) -> (Vec<f64>, Vec<f64>) {
    let d = mix.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in mix.components() {
        for a in 0..d {
            let s = c.covariance()[(a, a)].sqrt();
            lo[a] = lo[a].min(c.mean()[a] - 6.0 * s);
            hi[a] = hi[a].max(c.mean()[a] + 6.0 * s);
        }
    }
    (lo, hi)
}

pub fn mixture_normalization() -> Result<(), String> {
    check(48, mixture(1), |mix| {
        let (lo, hi) = six_sigma_box(&mix);
        let i = integrate(&mix, &lo, &hi, 4000);
        prop_assert!((i - 1.0).abs() < 1e-3, "1-D integral {i}");
        Ok(())
    })?;
    check(12, mixture(2), |mix| {
        let (lo, hi) = six_sigma_box(&mix);
        let i = integrate(&mix, &lo, &hi, 500);
        prop_assert!((i - 1.0).abs() < 1e-3, "2-D integral {i}");
        Ok(())
    })
}

/// Pearson statistic against expected cell probabilities; the last cell
/// collects everything outside the binned box.
fn chi_square(counts: &[usize], probs: &[f64], n: usize) -> f64 {
    counts.iter().zip(probs).map(|(c, p)| (*c as f64 - n as f64 * p).powi(2) / (n as f64 * p)).sum()
}

pub fn sampling_chi_square() -> Result<(), String> {
    const N: usize = 100_000;
    // chi-square 0.99 quantiles
    const CRIT_DF21: f64 = 38.932;
    const CRIT_DF25: f64 = 44.314;
    let mut rng = SeedTree::new(11).child("chi-square").stream();

    let m1 = build_mixture(&[(0.3, vec![-1.5], vec![0.6], 0.0), (0.7, vec![1.0], vec![1.2], 0.0)]);
    let (lo, hi, bins) = (-3.5, 4.0, 21usize);
    let w = (hi - lo) / bins as f64;
    let mut probs: Vec<f64> =
        (0..bins).map(|b| integrate(&m1, &[lo + b as f64 * w], &[lo + (b + 1) as f64 * w], 400)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let mut counts = vec![0usize; bins + 1];
    for x in m1.sample(N, &mut rng).map_err(|e| e.to_string())? {
        let b = ((x[0] - lo) / w).floor();
        counts[if b >= 0.0 && (b as usize) < bins { b as usize } else { bins }] += 1;
    }
    let stat = chi_square(&counts, &probs, N);
    ensure(stat < CRIT_DF21, || format!("1-D chi-square {stat:.2} >= {CRIT_DF21}"))?;

    let m2 = build_mixture(&[(0.5, vec![-1.0, 0.5], vec![0.8, 1.0], 0.5), (0.5, vec![1.0, -0.5], vec![1.0, 0.7], -0.3)]);
    let (lo, hi, cells) = ([-3.0, -2.5], [3.0, 2.5], 5usize);
    let (wx, wy) = ((hi[0] - lo[0]) / cells as f64, (hi[1] - lo[1]) / cells as f64);
    let mut probs = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            let a = [lo[0] + i as f64 * wx, lo[1] + j as f64 * wy];
            probs.push(integrate(&m2, &a, &[a[0] + wx, a[1] + wy], 80));
        }
    }
    probs.push(1.0 - probs.iter().sum::<f64>());
    let mut counts = vec![0usize; cells * cells + 1];
    for x in m2.sample(N, &mut rng).map_err(|e| e.to_string())? {
        let (bx, by) = (((x[0] - lo[0]) / wx).floor(), ((x[1] - lo[1]) / wy).floor());
        let inside = bx >= 0.0 && by >= 0.0 && (bx as usize) < cells && (by as usize) < cells;
        counts[if inside { bx as usize * cells + by as usize } else { cells * cells }] += 1;
    }
    let stat = chi_square(&counts, &probs, N);
    ensure(stat < CRIT_DF25, || format!("2-D chi-square {stat:.2} >= {CRIT_DF25}"))
}

pub fn mixture_weight_sum() -> Result<(), String> {
    let strat = (prop::collection::vec(component(2), 1..6), prop::collection::vec(-1e-9..1e-9f64, 6));
    check(64, strat, |(parts, jitter)| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let comps: Vec<GaussianComponent> = parts
            .iter()
            .zip(&jitter)
            .map(|((w, m, s, _), j)| {
                let w = (w / total + j / parts.len() as f64).max(1e-6);
                GaussianComponent::diagonal(w, m.clone(), &s.iter().map(|v| v * v).collect::<Vec<_>>()).unwrap()
            })
            .collect();
        let mix = GaussianMixture::new(comps).unwrap();
        let sum: f64 = mix.weights().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "weights sum to {sum}");
        prop_assert!(mix.components().iter().all(|c| c.dim() == mix.dim()));
        Ok(())
    })
}

fn three_label_space() -> SituationSpace {
    SituationSpace::new(["a", "b", "c"]).unwrap()
}

/// Every mean scaled by `a` and covariance by `a²`: all densities at the
/// correspondingly scaled point pick up the same factor `a^-d`.
fn scaled_mixture(mix: &GaussianMixture, a: f64) -> GaussianMixture {
    GaussianMixture::new(
        mix.components()
            .iter()
            .map(|c| {
                GaussianComponent::new(
                    c.weight(),
                    c.mean().iter().map(|m| m * a).collect(),
                    c.covariance() * (a * a),
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

fn scaled_km(km: &KnowledgeModel, a: f64) -> KnowledgeModel {
    KnowledgeModel::full_state(km.space().clone(), km.mixtures().iter().map(|m| scaled_mixture(m, a)).collect()).unwrap()
}

fn km3() -> impl Strategy<Value = KnowledgeModel> {
    prop::collection::vec(mixture(2), 3)
        .prop_map(|ms| KnowledgeModel::full_state(three_label_space(), ms).unwrap())
}

fn close_probs(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn clear_winner(p: &[f64]) -> bool {
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v[0] - v[1] > 1e-9
}

pub fn situation_rescaling() -> Result<(), String> {
    check(64, (km3(), prop::collection::vec(-4.0..4.0f64, 2), 0.05..20.0f64), |(km, x, a)| {
        let base = situation_given_state(&km, &x).unwrap();
        let sum: f64 = base.dist.probs().iter().sum();
        prop_assert!(base.degenerate || (sum - 1.0).abs() <= 1e-12, "sum {sum}");
        let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
        let scaled = situation_given_state(&scaled_km(&km, a), &xs).unwrap();
        prop_assert!(close_probs(base.dist.probs(), scaled.dist.probs(), 1e-10));
        if clear_winner(base.dist.probs()) {
            prop_assert_eq!(base.dist.argmax(), scaled.dist.argmax());
        }
        Ok(())
    })
}

fn distribution(m: usize) -> impl Strategy<Value = SituationDistribution> {
    prop::collection::vec(0.0..1.0f64, m)
        .prop_filter("mass", |v| v.iter().sum::<f64>() > 1e-3)
        .prop_map(|v| SituationDistribution::from_weights(&v).unwrap())
}

fn stochastic(m: usize) -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(prop::collection::vec(0.0..1.0f64, m), m)
        .prop_filter("rows", |rows| rows.iter().all(|r| r.iter().sum::<f64>() > 1e-3))
        .prop_map(|rows| {
            TransitionMatrix::new(
                rows.into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.into_iter().map(|v| v / s).collect()
                    })
                    .collect(),
            )
            .unwrap()
        })
}

pub fn predict_mass() -> Result<(), String> {
    let strat = (2usize..7).prop_flat_map(|m| (distribution(m), stochastic(m)));
    check(256, strat, |(prior, trans)| {
        let out = hmm_predict(&prior, &trans).unwrap();
        let sum: f64 = out.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        prop_assert!(out.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        Ok(())
    })
}

pub fn update_scaling() -> Result<(), String> {
    let strat = (2usize..7).prop_flat_map(|m| (distribution(m), prop::collection::vec(1e-3..10.0f64, m), -100.0..100.0f64));
    check(256, strat, |(pred, like, log10c)| {
        let c = 10f64.powf(log10c);
        let a = hmm_update(&pred, &like).unwrap();
        let scaled: Vec<f64> = like.iter().map(|l| l * c).collect();
        let b = hmm_update(&pred, &scaled).unwrap();
        prop_assert!(close_probs(a.dist.probs(), b.dist.probs(), 1e-12));
        if clear_winner(a.dist.probs()) {
            prop_assert_eq!(a.dist.argmax(), b.dist.argmax());
        }
        Ok(())
    })
}

fn unit_gaussian_km() -> KnowledgeModel {
    let g = |m: f64| GaussianMixture::equally_weighted(vec![(vec![m], DMatrix::from_element(1, 1, 1.0))]).unwrap();
    KnowledgeModel::full_state(SituationSpace::new(["centre", "offset"]).unwrap(), vec![g(0.0), g(3.0)]).unwrap()
}

pub fn mc_variance_ratio() -> Result<(), String> {
    let km = unit_gaussian_km();
    let sensor = Direct { r: 1.0 };
    let spread = |n: usize, tag: &str| {
        let seeds = SeedTree::new(5).child(tag);
        let v: Vec<f64> = (0..100)
            .map(|i| mc_log_likelihood(&km, 0, &0.0, &sensor, n, &mut seeds.index(i).stream()).unwrap().exp())
            .collect();
        mean_sd(&v).1
    };
    let (small, large) = (spread(10_000, "n4"), spread(100_000, "n5"));
    ensure(small >= 2.5 * large, || format!("sd {small:.3e} at 1e4 vs {large:.3e} at 1e5"))
}

pub fn hmm_posterior_valid() -> Result<(), String> {
    let strat = (prop::collection::vec(-8.0..8.0f64, 1..30), any::<u64>(), stochastic(2));
    check(24, strat, |(ys, seed, trans)| {
        let mut f = HmmFilter::new(unit_gaussian_km(), trans, 500, None, SeedTree::new(seed)).unwrap();
        for y in &ys {
            let s = f.process(y, &Direct { r: 1.0 }).unwrap();
            let sum: f64 = s.posterior.probs().iter().sum();
            prop_assert!(s.zero_evidence || (sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
        Ok(())
    })
}

fn weighted_set(max_n: usize) -> impl Strategy<Value = ParticleSet> {
    (1..max_n)
        .prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(0.0..1.0f64, n)))
        .prop_filter("mass", |(_, w)| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|(x, w)| {
            let s: f64 = w.iter().sum();
            let mut w: Vec<f64> = w.iter().map(|v| v / s).collect();
            // absorb rounding so the sum passes the 1e-9 check
            let r = 1.0 - w.iter().sum::<f64>();
            w[0] = (w[0] + r).max(0.0);
            ParticleSet::new(1, x, w).unwrap()
        })
}

pub fn ess_bounds() -> Result<(), String> {
    check(256, (weighted_set(400), any::<u64>()), |(p, seed)| {
        let ess = p.ess();
        prop_assert!(ess >= 1.0 && ess <= p.len() as f64, "ess {ess} for n={}", p.len());
        let r = systematic_resample(&p, &mut SeedTree::new(seed).stream());
        prop_assert_eq!(r.ess(), p.len() as f64);
        Ok(())
    })
}

pub fn resample_multiset() -> Result<(), String> {
    check(256, (weighted_set(400), any::<u64>()), |(p, seed)| {
        let r = systematic_resample(&p, &mut SeedTree::new(seed).stream());
        prop_assert_eq!(r.len(), p.len());
        let inputs: HashSet<u64> = p.states().map(|x| x[0].to_bits()).collect();
        prop_assert!(r.states().all(|x| inputs.contains(&x[0].to_bits())));
        // zero-weight particles never survive
        let dead: HashSet<u64> = p
            .states()
            .zip(p.weights())
            .filter(|(_, w)| **w == 0.0)
            .map(|(x, _)| x[0].to_bits())
            .filter(|b| !p.states().zip(p.weights()).any(|(y, w)| *w > 0.0 && y[0].to_bits() == *b))
            .collect();
        prop_assert!(r.states().all(|x| !dead.contains(&x[0].to_bits())));
        Ok(())
    })
}

fn small_pf(q: f64, r: f64, n: usize, seed: u64) -> EssmFilter<RandomWalk, Direct> {
    let mut f = EssmFilter::new(
        super::scalar_knowledge(),
        RandomWalk { q },
        Direct { r },
        EssmConfig { particles: n, ..EssmConfig::default() },
        SeedTree::new(seed),
    )
    .unwrap();
    f.initialize(&InitSpec::Gaussian { mean: vec![0.0], covariance: DMatrix::from_element(1, 1, 4.0) }).unwrap();
    f
}

pub fn pf_weights_normalized() -> Result<(), String> {
    let strat = (prop::collection::vec(-50.0..50.0f64, 1..25), 0.01..5.0f64, 0.01..5.0f64, any::<u64>());
    check(32, strat, |(ys, q, r, seed)| {
        let mut f = small_pf(q, r, 300, seed);
        for y in &ys {
            let s = f.step(y).unwrap();
            let p = f.particles().unwrap();
            let sum: f64 = p.weights().iter().sum();
            prop_assert!(p.weights().iter().all(|w| *w >= 0.0));
            prop_assert!(s.divergence || (sum - 1.0).abs() <= 1e-9, "sum {sum}");
            prop_assert!(s.ess >= 1.0 && s.ess <= 300.0);
            if s.resampled {
                prop_assert_eq!(p.ess(), 300.0);
            }
        }
        Ok(())
    })
}

pub fn essm_rescaling() -> Result<(), String> {
    let strat = (km3(), prop::collection::vec(-4.0..4.0f64, 2..80), 0.05..20.0f64);
    check(64, strat, |(km, xs, a)| {
        let n = xs.len() / 2;
        let p = ParticleSet::uniform(2, xs[..2 * n].to_vec()).unwrap();
        let ps = ParticleSet::uniform(2, xs[..2 * n].iter().map(|v| v * a).collect()).unwrap();
        let base = essm_situation_posterior(&p, &km).unwrap();
        let scaled = essm_situation_posterior(&ps, &scaled_km(&km, a)).unwrap();
        prop_assert!(close_probs(base.dist.probs(), scaled.dist.probs(), 1e-10));
        Ok(())
    })
}

pub fn pf_kalman_oracle() -> Result<(), String> {
    let o = pf_vs_kalman(&ORACLE_INSTANCE, 50, 5000, 100, 2024);
    ensure(o.mean_pass >= 95 && o.var_pass >= 95, || {
        format!("mean within 3 SE in {}/100, variance in {}/100", o.mean_pass, o.var_pass)
    })
}

pub fn engine_determinism() -> Result<(), String> {
    let ys: Vec<f64> = (0..30).map(|k| (k as f64 * 0.7).sin() * 4.0).collect();
    let hmm = |seed: u64| -> Vec<u64> {
        let mut f = HmmFilter::new(unit_gaussian_km(), TransitionMatrix::identity(2), 300, None, SeedTree::new(seed)).unwrap();
        ys.iter()
            .flat_map(|y| f.process(y, &Direct { r: 1.0 }).unwrap().posterior.probs().to_vec())
            .map(f64::to_bits)
            .collect()
    };
    let pf = |seed: u64| -> Vec<u64> {
        let mut f = small_pf(0.5, 1.0, 700, seed);
        let mut out = Vec::new();
        for y in &ys {
            let s = f.step(y).unwrap();
            out.extend(s.posterior.probs().iter().map(|v| v.to_bits()));
            out.extend(f.particles().unwrap().states().map(|x| x[0].to_bits()));
            out.extend(f.particles().unwrap().weights().iter().map(|w| w.to_bits()));
        }
        out
    };
    ensure(hmm(3) == hmm(3), || "HMM posteriors differ between identical runs".into())?;
    ensure(hmm(3) != hmm(4), || "HMM posteriors ignore the seed".into())?;
    ensure(pf(3) == pf(3), || "particle trajectories differ between identical runs".into())?;
    ensure(pf(3) != pf(4), || "particle trajectories ignore the seed".into())
}

fn state() -> impl Strategy<Value = TargetState> {
    (-1e4..1e4f64, -50.0..50.0f64, -1e4..1e4f64, -50.0..50.0f64).prop_map(|(a, b, c, d)| TargetState::new(a, b, c, d))
}

pub fn motion_linearity() -> Result<(), String> {
    check(256, (state(), state(), -5.0..5.0f64, -5.0..5.0f64, 0.1..5.0f64), |(s1, s2, a, b, t)| {
        let m = MotionModel::new(t, 10.0);
        let step = |s: &TargetState| m.motion_step::<rand_chacha::ChaCha8Rng>(s, None);
        let comb = TargetState(std::array::from_fn(|i| a * s1.0[i] + b * s2.0[i]));
        let lhs = step(&comb);
        let (r1, r2) = (step(&s1), step(&s2));
        for i in 0..4 {
            let rhs = a * r1.0[i] + b * r2.0[i];
            let scale = 1.0 + lhs.0[i].abs().max(rhs.abs());
            prop_assert!((lhs.0[i] - rhs).abs() <= 1e-12 * scale * 1e3, "component {i}: {} vs {rhs}", lhs.0[i]);
        }
        Ok(())
    })
}

pub fn likelihood_maximum() -> Result<(), String> {
    let sensor = SensorModel::from_degrees([0.0, 0.0], 0.1, 50.0).unwrap();
    check(64, state().prop_filter("away from sensor", |s| s.x().hypot(s.y()) > 100.0), |s| {
        let y = sensor.observe::<rand_chacha::ChaCha8Rng>(1, &s, None).unwrap();
        let (at_truth, _) = sensor.log_likelihood_checked(&y, s.x(), s.y());
        for i in -20..=20 {
            for j in -20..=20 {
                let (l, _) = sensor.log_likelihood_checked(&y, s.x() + 10.0 * i as f64, s.y() + 10.0 * j as f64);
                prop_assert!(l <= at_truth, "grid ({i},{j}) beats the generating state");
            }
        }
        Ok(())
    })
}

pub fn process_covariance_identity() -> Result<(), String> {
    check(64, (0.01..10.0f64, any::<bool>()), |(t, literal)| {
        let m = MotionModel::with_gain(t, 10.0, literal);
        let b = m.gain();
        let q = b * Matrix2::from_diagonal_element(10.0) * b.transpose();
        prop_assert_eq!(m.process_covariance(), q);
        prop_assert!(q.symmetric_eigenvalues().iter().all(|e| *e >= -1e-9 * q.norm()));
        Ok(())
    })
}

fn region_set() -> impl Strategy<Value = Vec<Region>> {
    prop::collection::vec(((-8000.0..8000.0f64), (-8000.0..8000.0f64), 200.0..1500.0f64), 1..5)
        .prop_map(|v| v.into_iter().map(|(x, y, r)| Region { center: [x, y], radius: r }).collect())
}

pub fn knowledge_invariants() -> Result<(), String> {
    let area = Area { x_min: -10000.0, x_max: 10000.0, y_min: -10000.0, y_max: 10000.0 };
    check(48, region_set(), |regions| {
        let n = regions.len();
        let set = RegionSet::new(regions, 10f64.sqrt()).unwrap();
        let km = build_knowledge(&set, &area, &SafeGrid::default()).unwrap();
        for mix in km.mixtures() {
            let sum: f64 = mix.weights().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "weights sum {sum}");
            for c in mix.components() {
                let ev = c.covariance().clone().symmetric_eigenvalues();
                prop_assert!(ev.min() > 1e-12 * ev.max());
            }
        }
        let (danger, potential) = (km.mixture(2), km.mixture(1));
        prop_assert!(danger.components().iter().all(|c| c.weight() == 1.0 / n as f64));
        for (d, p) in danger.components().iter().zip(potential.components()) {
            prop_assert_eq!(p.covariance(), &(d.covariance() * 10.0));
        }
        Ok(())
    })
}

/// Small scenario: two short legs and reduced sample counts.
pub fn small_config() -> ConfigFile {
    let mut cfg = ConfigFile::bundled();
    cfg.steps = 61;
    cfg.waypoints = vec![
        WaypointSpec { position: [-6500.0, 6500.0], steps: 0 },
        WaypointSpec { position: [-4000.0, 4000.0], steps: 30 },
        WaypointSpec { position: [-1500.0, 1500.0], steps: 30 },
    ];
    cfg.engine.mc_samples = 1000;
    cfg.engine.particles = 600;
    cfg
}

pub fn write_config(cfg: &ConfigFile, path: &Path) {
    std::fs::write(path, toml::to_string(cfg).unwrap()).unwrap();
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

fn pipeline_once(root: &Path, config: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let data = root.join("data");
    cli::cmd_simulate(config, &data, None, false).map_err(|e| e.to_string())?;
    let out = root.join("run");
    let args = RunArgs { config, data: &data, engine: Engine::Both, replicates: 2, out: Some(&out), seed: None };
    cli::cmd_run(&args).map_err(|e| e.to_string())?;
    for rep in ["rep_000", "rep_001"] {
        let dir = out.join(rep);
        cli::cmd_eval(&dir, &data.join(io::LABELS_FILE), None, 2).map_err(|e| e.to_string())?;
        for f in [io::HMM_POSTERIOR_FILE, io::ESSM_POSTERIOR_FILE] {
            let (_, rows) = io::read_posteriors(&dir.join(f)).map_err(|e| e.to_string())?;
            if let Some(r) = rows.iter().find(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
                return Err(format!("{rep}/{f}: row sums to {}", r.iter().sum::<f64>()));
            }
        }
    }
    let mut all = tree_bytes(&data);
    all.extend(tree_bytes(&out).into_iter().map(|(n, b)| (format!("run/{n}"), b)));
    Ok(all)
}

pub fn pipeline_determinism() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("small.toml");
    write_config(&small_config(), &config);
    let a = pipeline_once(&tmp.path().join("a"), &config)?;
    let b = pipeline_once(&tmp.path().join("b"), &config)?;
    ensure(a.len() >= 10, || format!("only {} files written", a.len()))?;
    ensure(a == b, || "output trees differ between identical runs".into())
}
