//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line with its runtime (visible under `--nocapture`, and in the
//! failure output otherwise). The criteria replay the certified envelopes,
//! deadlines and probability bounds against simulated data at desk scale.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use emergence::harness::{
    build_scenario, monte_carlo, preset, run_single, run_trial, Scenario, ScenarioConfig, Verdict,
};
use emergence::noise::{NoiseSpec, NormCdf, SeedStream};
use emergence::operators::{
    adjacency, coercivity, laplacian, operator_norm_on_quotient, s_operator, KernelSpec,
};
use emergence::quotient::{project_to_quotient, quotient_inner, AgentConfiguration, InnerProduct};
use emergence::systems::{detect_emergence, Block, RunOptions, SystemVariant};
use emergence::theory::{
    positive_root, root_upper_bound, verify_trajectory, EventKind, GrowthCase, TheoryConstants,
};

/// Runs one criterion body, prints its pass/fail line and enforces the
/// runtime budget.
fn criterion(number: u32, name: &str, budget_secs: f64, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    let status = if outcome.is_ok() && elapsed <= budget_secs {
        "PASS"
    } else {
        "FAIL"
    };
    println!("criterion {number} ({name}): {status} [{elapsed:.2} s, budget {budget_secs:.0} s]");
    if let Err(panic) = outcome {
        std::panic::resume_unwind(panic);
    }
    assert!(
        elapsed <= budget_secs,
        "criterion {number} exceeded its {budget_secs} s budget: {elapsed:.2} s"
    );
}

fn test_rng(stream: u64) -> rand_chacha::ChaCha12Rng {
    SeedStream::root(0xACCE97).substream(stream).rng_at(0)
}

#[test]
fn criterion_1_quotient_double_sum_identity() {
    criterion(1, "quotient double-sum identity", 1.0, || {
        let mut rng = test_rng(1);
        for _ in 0..1000 {
            let k = rng.gen_range(2..=8usize);
            let d = rng.gen_range(1..=3usize);
            let random = |rng: &mut rand_chacha::ChaCha12Rng| {
                DMatrix::from_fn(k, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
            };
            let u_cfg = AgentConfiguration::new(random(&mut rng)).unwrap();
            let v_cfg = AgentConfiguration::new(random(&mut rng)).unwrap();

            // Oracle: the raw double sum over ordered pairs, halved.
            let mut double_sum = 0.0;
            for i in 0..k {
                for j in 0..k {
                    for c in 0..d {
                        let du = u_cfg.values()[(i, c)] - u_cfg.values()[(j, c)];
                        let dv = v_cfg.values()[(i, c)] - v_cfg.values()[(j, c)];
                        double_sum += du * dv;
                    }
                }
            }
            double_sum *= 0.5;

            let u = project_to_quotient(&u_cfg);
            let v = project_to_quotient(&v_cfg);
            let fast = quotient_inner(&u, &v, InnerProduct::PairwiseDifference).unwrap();
            let scale = double_sum.abs().max(1.0);
            assert!(
                (fast - double_sum).abs() <= 1e-10 * scale,
                "k={k} d={d}: centered-sum {fast} vs double-sum {double_sum}"
            );
        }
    });
}

#[test]
fn criterion_2_spectral_contraction_against_dense_eigendecomposition() {
    criterion(
        2,
        "spectral contraction vs dense eigendecomposition",
        120.0,
        || {
            let mut rng = test_rng(2);
            for trial in 0..100 {
                let k = rng.gen_range(2..=8usize);
                let d = rng.gen_range(1..=3usize);
                let positions = AgentConfiguration::new(DMatrix::from_fn(k, d, |_, _| {
                    rng.gen::<f64>() * 2.0 - 1.0
                }))
                .unwrap();
                let kernel = KernelSpec::Rational {
                    scale: 0.5 + 1.5 * rng.gen::<f64>(),
                    exponent: 1.5 * rng.gen::<f64>(),
                };
                let h = rng.gen::<f64>() * 2.0 / (k as f64 * 2.0);
                let lap = laplacian(&adjacency(&positions, &kernel).unwrap()).unwrap();
                let s = s_operator(&lap, h).unwrap();

                // Oracle: eigenvalues of the full k x k Laplacian. The kernel is
                // strictly positive, so the graph is connected and exactly one
                // eigenvalue vanishes (the all-ones direction); the rest form
                // the quotient spectrum.
                let eig = SymmetricEigen::new(lap.matrix().clone());
                let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert!(
                    lambdas[0].abs() < 1e-9,
                    "trial {trial}: smallest eigenvalue {} is not the consensus zero",
                    lambdas[0]
                );
                let fiedler = lambdas[1];
                let norm_oracle = lambdas[1..]
                    .iter()
                    .fold(0.0f64, |m, &l| m.max((1.0 - h * l).abs()));

                let norm = operator_norm_on_quotient(&s).unwrap();
                let coer = coercivity(&lap).unwrap();
                assert!(
                    (norm - norm_oracle).abs() <= 1e-9 * norm_oracle.max(1.0),
                    "trial {trial}: operator norm {norm} vs oracle {norm_oracle}"
                );
                assert!(
                    (coer.value - fiedler).abs() <= 1e-9 * fiedler.max(1.0),
                    "trial {trial}: coercivity {} vs Fiedler value {fiedler}",
                    coer.value
                );
            }
        },
    );
}

#[test]
fn criterion_3_positive_root_against_bisection() {
    criterion(3, "scalar root vs bisection oracle", 5.0, || {
        let mut rng = test_rng(3);
        for trial in 0..1000 {
            let q = 0.1 + 2.9 * rng.gen::<f64>();
            let s = q + 0.05 + 2.95 * rng.gen::<f64>();
            let c1 = 1e-3 + 10.0 * rng.gen::<f64>();
            let c2 = 1e-3 + 10.0 * rng.gen::<f64>();
            let m = |z: f64| z.powf(s) - c1 * z.powf(q) - c2;

            let hi = root_upper_bound(s, q, c1, c2);
            assert!(m(hi) >= -1e-9 * c2.max(1.0), "upper bound below the root");
            let mut lo = 0.0;
            let mut up = hi;
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                if m(mid) < 0.0 {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            let oracle = 0.5 * (lo + up);

            let root = positive_root(s, q, c1, c2).unwrap();
            assert!(
                (root - oracle).abs() <= 1e-10 * oracle.max(1.0),
                "trial {trial}: root {root} vs bisection {oracle}"
            );
            assert!(
                root <= hi * (1.0 + 1e-12),
                "trial {trial}: root {root} above its bound {hi}"
            );
            let slack = 1e-9 * (root.powf(s) + c1 * root.powf(q) + c2);
            for i in 0..100 {
                let z = root * i as f64 / 99.0;
                assert!(
                    m(z) <= slack,
                    "trial {trial}: M({z}) = {} positive below the root",
                    m(z)
                );
            }
        }
    });
}

fn flocking_with_cauchy_target() -> Scenario {
    let mut config = preset("flocking").unwrap();
    config.targets.mu = Some(0.1);
    build_scenario(config).unwrap()
}

#[test]
fn criterion_4_deterministic_flocking_envelopes_and_deadlines() {
    criterion(4, "clipped flocking envelopes and deadlines", 30.0, || {
        let scenario = flocking_with_cauchy_target();
        assert!(scenario.certified());
        let bound = scenario.bound.as_ref().unwrap();
        assert_eq!(bound.kind, EventKind::YEmergenceAndXCauchy);
        let TheoryConstants::DiscreteI(c) = &scenario.constants else {
            panic!("flocking resolves first-kind discrete constants");
        };
        assert_eq!(c.case, GrowthCase::Subcritical);
        let u0 = c.u0.unwrap();
        let b0 = c.b0.unwrap();
        let (p_h, p_g, p_beta) = match &scenario.config.system {
            emergence::systems::SystemParams::DiscreteI(p) => (p.h, p.g, p.beta),
            _ => unreachable!(),
        };
        let rate = 1.0 - p_h * p_g / (2.0 * u0.powf(p_beta));
        let y_deadline = bound.y_deadline.unwrap();
        let tail_start = bound.deadline;
        let mu = bound.mu.unwrap();
        let nu = bound.nu.unwrap();

        let opts = RunOptions {
            record_states: true,
            ..RunOptions::default()
        };
        let slack = 1.0 + 1e-9;
        for trial in 0..100 {
            let trajectory = run_single(&scenario, trial, &opts).unwrap();
            let y0 = trajectory.points[0].y_norm;
            for point in &trajectory.points {
                assert!(
                    point.y_norm <= y0 * rate.powi(point.step as i32) * slack,
                    "trial {trial} step {}: decay envelope broken",
                    point.step
                );
                assert!(
                    point.x_norm <= b0 * slack,
                    "trial {trial} step {}: invariant radius broken",
                    point.step
                );
            }
            let emergence = detect_emergence(&trajectory, Block::Y, nu);
            let hit = emergence.hit_step.expect("emergence must occur");
            assert!(
                (hit as f64) <= y_deadline,
                "trial {trial}: emergence at step {hit} after the deadline {y_deadline}"
            );
            let states = trajectory.x_states.as_ref().unwrap();
            let tail: Vec<usize> = trajectory
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| (p.step as f64) >= tail_start)
                .map(|(i, _)| i)
                .collect();
            for (a, &i) in tail.iter().enumerate() {
                for &j in &tail[a + 1..] {
                    let moved = (&states[j] - &states[i]).norm();
                    assert!(
                        moved <= mu * slack,
                        "trial {trial}: tail movement {moved} beyond mu = {mu}"
                    );
                }
            }
            let report =
                verify_trajectory(&trajectory, &scenario.config.system, &scenario.constants)
                    .unwrap();
            assert!(!report.violated, "trial {trial}: {:?}", report.checks);
            assert!(
                report.skipped.is_empty(),
                "trial {trial}: {:?}",
                report.skipped
            );
            assert_eq!(report.checks.len(), 4);
        }
    });
}

#[test]
fn criterion_5_probabilistic_bound_never_violated() {
    criterion(
        5,
        "ball-noise probability bound vs Monte Carlo",
        120.0,
        || {
            let base = build_scenario(preset("flocking").unwrap()).unwrap();
            let TheoryConstants::DiscreteI(c) = &base.constants else {
                panic!("flocking resolves first-kind discrete constants");
            };
            let ceiling = c.ceiling.unwrap();
            let nu = base.config.targets.nu.unwrap();
            let m = 9 * 3; // quotient dimension of the secondary block
            let per_step_f = |scenario: &Scenario| {
                scenario
                    .bound
                    .as_ref()
                    .unwrap()
                    .terms
                    .iter()
                    .find(|t| t.label == "per_step_law_at_ceiling_nu")
                    .unwrap()
                    .value
            };

            // Support exactly at the ceiling: the per-draw law value is one, the
            // bound is sure, and every trial must satisfy the event.
            let mut sure = preset("flocking").unwrap();
            sure.noise.primary.spec = NoiseSpec::UniformBall {
                radius: ceiling * nu,
            };
            let sure = build_scenario(sure).unwrap();
            assert_eq!(per_step_f(&sure), 1.0);
            assert_eq!(sure.bound.as_ref().unwrap().probability, 1.0);
            let report = monte_carlo(&sure, 1000).unwrap();
            assert_eq!(report.event_rate, Some(1.0), "sure bound missed a trial");
            assert_eq!(report.verdict, Verdict::Consistent);

            // Support slightly beyond the ceiling, tuned so the per-draw law
            // value is 0.9; the bound drops to 0.9^deadline and the estimate
            // must stay above it.
            let mut tuned = preset("flocking").unwrap();
            tuned.noise.primary.spec = NoiseSpec::UniformBall {
                radius: ceiling * nu / 0.9f64.powf(1.0 / m as f64),
            };
            let tuned = build_scenario(tuned).unwrap();
            assert!((per_step_f(&tuned) - 0.9).abs() < 1e-12);
            let bound = tuned.bound.as_ref().unwrap();
            let deadline = bound.deadline;
            assert!(
                (bound.probability - 0.9f64.powf(deadline)).abs() <= 1e-12,
                "bound {} vs 0.9^{deadline}",
                bound.probability
            );
            let report = monte_carlo(&tuned, 1000).unwrap();
            assert_ne!(report.verdict, Verdict::Violated);
            assert!(
                report.wilson_high.unwrap() >= bound.probability,
                "Wilson upper limit {} below the bound {}",
                report.wilson_high.unwrap(),
                bound.probability
            );
        },
    );
}

fn convention_with_curvature() -> ScenarioConfig {
    serde_json::from_value(serde_json::json!({
        "name": "convention-curved",
        "seed": 13,
        "geometry": {"agents": 5, "dim": 2},
        "system": {
            "system": "discrete-ii",
            "g1": 4.0, "beta1": 0.5, "h1": 0.05,
            "g2": 4.0, "beta2": 0.25, "h2": 0.04
        },
        "kernel_x": {"kind": "rational", "scale": 1.0, "exponent": 0.25},
        "kernel_y": {"kind": "rational", "scale": 1.0, "exponent": 0.5},
        "initial": {"kind": "random-box", "x_scale": 0.3, "y_scale": 0.25},
        "noise": {
            "primary": {"spec": {"kind": "uniform-ball", "radius": 0.05}, "clip": "theorem"},
            "secondary": {"spec": {"kind": "uniform-ball", "radius": 0.05}, "clip": "theorem"}
        },
        "targets": {"mu": 0.05, "nu": 0.05}
    }))
    .unwrap()
}

#[test]
fn criterion_6_coupled_discrete_envelopes_and_bound() {
    criterion(6, "coupled discrete envelopes and bound", 120.0, || {
        for config in [preset("language").unwrap(), convention_with_curvature()] {
            let scenario = build_scenario(config).unwrap();
            let name = scenario.config.name.clone().unwrap_or_default();
            assert!(scenario.certified(), "{name}: hypotheses must hold");
            let bound = scenario.bound.as_ref().unwrap();
            assert_eq!(bound.kind, EventKind::BothEmerge);

            for trial in 0..50 {
                let result = run_trial(&scenario, trial);
                assert_eq!(result.error, None, "{name} trial {trial}");
                assert_eq!(
                    result.event_satisfied,
                    Some(true),
                    "{name} trial {trial}: a block missed its deadline {}",
                    bound.deadline
                );
                assert_eq!(result.within_ceiling, Some(true), "{name} trial {trial}");
                let trajectory = run_single(&scenario, trial, &RunOptions::default()).unwrap();
                let report =
                    verify_trajectory(&trajectory, &scenario.config.system, &scenario.constants)
                        .unwrap();
                assert!(
                    !report.violated,
                    "{name} trial {trial}: {:?}",
                    report.checks
                );
                assert!(report.skipped.is_empty(), "{name} trial {trial}");
            }

            let report = monte_carlo(&scenario, 1000).unwrap();
            assert_ne!(report.verdict, Verdict::Violated, "{name}");
            assert!(
                report.wilson_high.unwrap() >= bound.probability,
                "{name}: estimate contradicts the bound"
            );
        }
    });
}

#[test]
fn criterion_7_continuous_grids_envelopes_and_corollary() {
    criterion(7, "continuous grid stability and envelopes", 120.0, || {
        // Emergence times must be grid-stable: halving dt reuses the same
        // frozen noise cells, so the hit times may differ only through the
        // integration error.
        for name in ["flocking-continuous", "language-continuous"] {
            let coarse = build_scenario(preset(name).unwrap()).unwrap();
            let mut halved = preset(name).unwrap();
            halved.horizon = match halved.horizon {
                emergence::harness::HorizonConfig::Auto { factor, dt } => {
                    emergence::harness::HorizonConfig::Auto {
                        factor,
                        dt: Some(dt.unwrap() / 2.0),
                    }
                }
                _ => panic!("presets use the automatic horizon"),
            };
            let fine = build_scenario(halved).unwrap();
            let nu = coarse.config.targets.nu.unwrap();
            let opts = RunOptions::default();
            let t_coarse = run_single(&coarse, 0, &opts).unwrap();
            let t_fine = run_single(&fine, 0, &opts).unwrap();
            let hit_coarse = detect_emergence(&t_coarse, Block::Y, nu)
                .hit_time
                .expect("coarse grid emergence");
            let hit_fine = detect_emergence(&t_fine, Block::Y, nu)
                .hit_time
                .expect("fine grid emergence");
            assert!(
                (hit_coarse - hit_fine).abs() <= 0.05 * hit_coarse,
                "{name}: hit times {hit_coarse} vs {hit_fine} differ by more than 5%"
            );
        }

        // Running-minimum and constant-rate envelopes on a clipped run.
        let scenario = build_scenario(preset("flocking-continuous").unwrap()).unwrap();
        assert!(scenario.certified());
        let opts = RunOptions {
            record_operators: true,
            record_states: true,
            ..RunOptions::default()
        };
        let trajectory = run_single(&scenario, 0, &opts).unwrap();
        let report =
            verify_trajectory(&trajectory, &scenario.config.system, &scenario.constants).unwrap();
        assert!(!report.violated, "{:?}", report.checks);
        assert!(report.skipped.is_empty(), "{:?}", report.skipped);
        assert!(report.checks.len() >= 3);

        // A vanishing primary channel selects the single-factor bound with
        // per-block deadlines, and the estimate must respect it.
        let corollary = build_scenario(preset("language-continuous").unwrap()).unwrap();
        let bound = corollary.bound.as_ref().unwrap();
        assert_eq!(bound.kind, EventKind::BothEmergeOwnDeadlines);
        assert_eq!(corollary.dynamics.variant, SystemVariant::ContinuousII);
        let report = monte_carlo(&corollary, 300).unwrap();
        assert_ne!(report.verdict, Verdict::Violated);
        assert!(report.wilson_high.unwrap() >= bound.probability);
    });
}

#[test]
fn criterion_8_noise_norm_laws() {
    criterion(
        8,
        "noise norm laws vs samples and quadrature",
        120.0,
        || {
            let n = 100_000usize;
            let ks_distance = |spec: &NoiseSpec, dim: usize, stream: u64| {
                let cdf = NormCdf::new(spec, dim).unwrap();
                let mut rng = test_rng(stream);
                let mut norms: Vec<f64> =
                    (0..n).map(|_| spec.sample(&mut rng, dim).norm()).collect();
                norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut ks = 0.0f64;
                for (i, &x) in norms.iter().enumerate() {
                    let f = cdf.evaluate(x);
                    ks = ks.max((f - i as f64 / n as f64).abs());
                    ks = ks.max(((i + 1) as f64 / n as f64 - f).abs());
                }
                ks
            };
            let ks_ball = ks_distance(&NoiseSpec::UniformBall { radius: 1.3 }, 8, 81);
            assert!(ks_ball <= 0.01, "ball KS distance {ks_ball}");
            let ks_gauss = ks_distance(&NoiseSpec::Gaussian { sigma: 0.7 }, 5, 82);
            assert!(ks_gauss <= 0.01, "gaussian KS distance {ks_gauss}");

            // Median of the 3-dimensional unit-variance norm law, against a
            // Simpson quadrature of sqrt(2/pi) x^2 exp(-x^2/2).
            let cdf = NormCdf::new(&NoiseSpec::Gaussian { sigma: 1.0 }, 3).unwrap();
            let at_median = cdf.evaluate(1.5382);
            assert!(
                (at_median - 0.5).abs() <= 1e-3,
                "norm law at the tabulated median: {at_median}"
            );
            let density =
                |x: f64| (2.0 / std::f64::consts::PI).sqrt() * x * x * (-0.5 * x * x).exp();
            let steps = 4000usize;
            let h = 1.5382 / steps as f64;
            let mut quad = density(0.0) + density(1.5382);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                quad += w * density(i as f64 * h);
            }
            quad *= h / 3.0;
            assert!(
                (at_median - quad).abs() <= 1e-9,
                "norm law {at_median} vs quadrature {quad}"
            );
            assert!((quad - 0.5).abs() <= 1e-3);
        },
    );
}

#[test]
fn criterion_9_monte_carlo_determinism() {
    criterion(9, "byte-identical repeated estimation", 120.0, || {
        let scenario = build_scenario(preset("flocking").unwrap()).unwrap();
        let a = serde_json::to_string_pretty(&monte_carlo(&scenario, 32).unwrap()).unwrap();
        let b = serde_json::to_string_pretty(&monte_carlo(&scenario, 32).unwrap()).unwrap();
        assert_eq!(a, b, "library reports differ between reruns");

        let config_path = std::env::temp_dir().join("emergence-acceptance-config.json");
        let config = serde_json::to_string_pretty(&preset("language").unwrap()).unwrap();
        std::fs::write(&config_path, config).unwrap();
        let invoke = || {
            let output = std::process::Command::new(env!("CARGO_BIN_EXE_emergence"))
                .args(["montecarlo", "--config"])
                .arg(&config_path)
                .args(["--trials", "64"])
                .output()
                .expect("binary runs");
            assert!(
                output.status.success(),
                "stderr: {}",
                String::from_utf8_lossy(&output.stderr)
            );
            output.stdout
        };
        let first = invoke();
        let second = invoke();
        assert_eq!(first, second, "command output differs between reruns");
        assert!(!first.is_empty());
    });
}
