//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its runtime. Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use msplit::diagnostics::{
    fejer_monitor, gap_bound_report, max_step_ratio, perturbation_bound_check, quality, rate_estimate,
};
use msplit::linops::{lambda_min_estimate, operator_norm, random_vector, LinearMap, MismatchSchedule};
use msplit::proxlib::{
    anscombe_grad, anscombe_lipschitz, grad_g, haar_map, prox_box_ridge, prox_g,
    prox_huber_scalar, AnscombeFidelity, BoxRidge, HuberTransform,
};
use msplit::solvers::{run, Algorithm, SolverConfig};
use msplit::stepsize::{chi, epsilons_fdrf, gamma_fdrf, in_gamma_set, RhoPolicy};
use msplit::synthetic::{build_quadratic, QuadraticConfig, QuadraticInstance};
use msplit::tomo::{
    build_ct_problem, make_phantom, ray_driven_projector, synthesize_data, CtPenalties, Geometry,
    PhantomKind,
};

fn criterion(id: u32, name: &str, budget_s: f64, body: impl FnOnce() -> Result<(), String>) {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(()) => println!("[PASS] criterion {id}: {name} ({elapsed:.2}s)"),
        Err(msg) => println!("[FAIL] criterion {id}: {name} ({elapsed:.2}s): {msg}"),
    }
    if let Err(msg) = outcome {
        panic!("criterion {id} failed: {msg}");
    }
    assert!(
        elapsed < budget_s,
        "criterion {id} exceeded its {budget_s}s budget ({elapsed:.2}s)"
    );
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    0.5 * (a + b)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

#[test]
fn criterion_01_prox_oracle_equivalence() {
    criterion(1, "prox oracle equivalence", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);

        // Box + ridge against golden-section minimization, componentwise.
        let p = BoxRidge::new(9.0, 0.7).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let gamma = 0.1 + 2.0 * rng.random::<f64>();
            let xi: f64 = 12.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let got = prox_box_ridge(&p, gamma, &ndarray::array![xi])[0];
            let want = golden_min(
                |u| 0.5 * (u - xi) * (u - xi) + gamma * 0.5 * p.rho * u * u,
                0.0,
                p.x_max,
            );
            if (got - want).abs() > 1e-6 {
                return Err(format!("box ridge: {got} vs oracle {want}"));
            }
        }

        // Scalar Huber prox against golden-section minimization.
        for _ in 0..100 {
            let delta = 0.2 + rng.random::<f64>();
            let gamma = 0.05 + rng.random::<f64>();
            let eta: f64 = 6.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let got = prox_huber_scalar(delta, gamma, eta);
            let hub = |u: f64| {
                if u.abs() > delta {
                    u.abs() - delta / 2.0
                } else {
                    u * u / (2.0 * delta)
                }
            };
            let reach = eta.abs() + delta + gamma + 1.0;
            let want = golden_min(
                |u| 0.5 * (u - eta) * (u - eta) + gamma * hub(u),
                -reach,
                reach,
            );
            if (got - want).abs() > 1e-6 {
                return Err(format!("huber: {got} vs oracle {want}"));
            }
        }

        // Transform-domain prox against a dense gradient-descent oracle.
        let n = 16;
        let w = haar_map(n, 2).map_err(|e| e.to_string())?;
        let wd = w.to_dense().map_err(|e| e.to_string())?;
        let delta = 0.8;
        let weight = 1.7;
        let hp = HuberTransform::new(delta, weight, w).map_err(|e| e.to_string())?;
        for trial in 0..100u64 {
            let gamma = 0.1 + 0.5 * rng.random::<f64>();
            let x = random_vector(n, 9_000 + trial) * 3.0;
            let got = prox_g(&hp, gamma, &x).map_err(|e| e.to_string())?;
            let mut u = x.clone();
            let lip = 1.0 + gamma * weight / delta;
            for _ in 0..60_000 {
                let coeffs = wd.dot(&u);
                let slopes = coeffs.mapv(|e| {
                    if e.abs() > delta {
                        e.signum()
                    } else {
                        e / delta
                    }
                });
                let grad = (&u - &x) + wd.t().dot(&slopes) * (gamma * weight);
                let gn = norm(&grad);
                u = &u - &(grad / lip);
                if gn < 1e-10 {
                    break;
                }
            }
            let err = norm(&(&got - &u));
            if err > 1e-6 {
                return Err(format!("prox_g trial {trial}: ‖fast − oracle‖ = {err:.2e}"));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_02_gradient_checks() {
    criterion(2, "gradient finite-difference checks", 10.0, || {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(202);

        // Anscombe gradient vs central differences, vector-relative error.
        let m = 10;
        let data = random_vector(m, 77).mapv(|v| v.abs() * 4.0);
        let fid = AnscombeFidelity::new(data, 0.5).map_err(|e| e.to_string())?;
        let mut checked = 0;
        while checked < 100 {
            let y = random_vector(m, 50_000 + checked) * 2.5;
            if y.iter().any(|&v| v.abs() < 1e-4) {
                checked += 1; // counted, but the kink-adjacent sample is skipped
                continue;
            }
            let g = anscombe_grad(&fid, &y).map_err(|e| e.to_string())?;
            let mut fd = Array1::zeros(m);
            for i in 0..m {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                fd[i] = (fid.value(&yp).unwrap() - fid.value(&ym).unwrap()) / (2.0 * h);
            }
            let rel = norm(&(&fd - &g)) / norm(&g).max(1e-12);
            if rel > 1e-5 {
                return Err(format!("anscombe fd mismatch: rel {rel:.2e}"));
            }
            checked += 1;
        }

        // Huber-transform gradient vs central differences.
        let n = 16;
        let hp = HuberTransform::new(0.9, 2.0, haar_map(n, 2).unwrap()).map_err(|e| e.to_string())?;
        let mut checked_g = 0;
        let mut attempts = 0u64;
        while checked_g < 100 && attempts < 10_000 {
            attempts += 1;
            let x = random_vector(n, 80_000 + attempts) * 2.0;
            let coeffs = hp.transform().apply(&x).unwrap();
            if coeffs.iter().any(|&e| (e.abs() - hp.delta).abs() < 1e-4) {
                continue;
            }
            let g = grad_g(&hp, &x).map_err(|e| e.to_string())?;
            let mut fd = Array1::zeros(n);
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (hp.value(&xp).unwrap() - hp.value(&xm).unwrap()) / (2.0 * h);
            }
            let rel = norm(&(&fd - &g)) / norm(&g).max(1e-12);
            if rel > 1e-5 {
                return Err(format!("grad_g fd mismatch: rel {rel:.2e}"));
            }
            checked_g += 1;
        }
        if checked_g < 100 {
            return Err("could not collect 100 kink-free samples".into());
        }

        // Lipschitz constant dominates 10^4 sampled slopes.
        let zeta = anscombe_lipschitz(&fid);
        for t in 0..10_000u64 {
            let y1 = random_vector(m, 3 * t + 1) * (1.0 + rng.random::<f64>());
            let y2 = random_vector(m, 3 * t + 2) * (1.0 + rng.random::<f64>());
            let g1 = anscombe_grad(&fid, &y1).unwrap();
            let g2 = anscombe_grad(&fid, &y2).unwrap();
            let slope = norm(&(&g1 - &g2)) / norm(&(&y1 - &y2)).max(1e-300);
            if slope > zeta + 1e-8 {
                return Err(format!("slope {slope} exceeds zeta {zeta}"));
            }
        }
        Ok(())
    });
}

/// Cyclic Jacobi eigensolver; the independent oracle for symmetric spectra.
fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-302 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

#[test]
fn criterion_03_spectral_oracles() {
    criterion(3, "spectral estimators vs dense oracles", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);

        // operator_norm vs dense SVD on 10 random rectangular maps.
        for _ in 0..10 {
            let rows = 4 + (rng.random::<u32>() % 61) as usize;
            let cols = 4 + (rng.random::<u32>() % 61) as usize;
            let m = Array2::from_shape_fn((rows, cols), |_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let map = LinearMap::from_dense(&m);
            let est = operator_norm(&map, 1e-11, 500_000).map_err(|e| e.to_string())?;
            let svd = nalgebra::DMatrix::from_fn(rows, cols, |i, j| m[(i, j)])
                .svd(false, false)
                .singular_values
                .max();
            if (est.value - svd).abs() > 1e-6 {
                return Err(format!(
                    "norm {rows}x{cols}: power {} vs svd {}",
                    est.value, svd
                ));
            }
        }

        // lambda_min vs a hand-rolled Jacobi eigensolver on 10 compositions.
        for _ in 0..10 {
            let n = 4 + (rng.random::<u32>() % 37) as usize;
            let m = 4 + (rng.random::<u32>() % 37) as usize;
            let l = Array2::from_shape_fn((m, n), |_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
            let k = Array2::from_shape_fn((n, m), |_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
            let lm = LinearMap::from_dense(&l);
            let km = LinearMap::from_dense(&k);
            let got = lambda_min_estimate(&km, &lm, 1e-10).map_err(|e| e.to_string())?;
            let kl = k.dot(&l);
            let sym = (&kl + &kl.t().to_owned()) * 0.5;
            let want = jacobi_eigenvalues(sym)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            if (got - want).abs() > 1e-6 {
                return Err(format!("lambda_min dim {n}: {got} vs jacobi {want}"));
            }
        }
        Ok(())
    });
}

fn matched_instance(seed: u64, margin: f64) -> QuadraticInstance {
    build_quadratic(&QuadraticConfig {
        dim: 16,
        data_dim: 24,
        seed,
        alpha: 0.5,
        mismatch_strength: 0.0,
        b_scale: 0.3,
        c_scale: 1.0,
        x_max: 10.0,
        rho_policy: RhoPolicy::Recipe { margin },
        schedule: MismatchSchedule::Constant,
        safety_fbhf: 0.9975,
        safety_fdrf: 0.999,
    })
    .expect("instance builds")
}

#[test]
fn criterion_04_matched_consistency() {
    criterion(4, "matched solvers reach the dense oracle", 30.0, || {
        let inst = matched_instance(404, 0.3);
        let oracle = inst.reference_solution(true).map_err(|e| e.to_string())?;
        let z0 = Array1::from_elem(16, 5.0);
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            let config = SolverConfig::from_ledger(algorithm, &inst.ledger, 10_000, 1e-14, 100);
            let trace = run(&inst.spec, &config, &inst.ledger, &z0).map_err(|e| e.to_string())?;
            let rel = norm(&(&trace.final_x - &oracle)) / norm(&oracle);
            if rel > 1e-6 {
                return Err(format!(
                    "{algorithm}: relative error {rel:.2e} after {} iterations",
                    trace.iterations
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_05_cross_algorithm_agreement() {
    criterion(5, "mismatched solvers agree on the limit", 60.0, || {
        let inst = build_quadratic(&QuadraticConfig {
            dim: 16,
            data_dim: 24,
            seed: 505,
            alpha: 0.5,
            mismatch_strength: 0.1,
            b_scale: 0.3,
            rho_policy: RhoPolicy::Recipe { margin: 0.2 },
            ..QuadraticConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let z0 = Array1::from_elem(16, 5.0);
        let mut limits = Vec::new();
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            let config = SolverConfig::from_ledger(algorithm, &inst.ledger, 40_000, 1e-14, 500);
            let trace = run(&inst.spec, &config, &inst.ledger, &z0).map_err(|e| e.to_string())?;
            limits.push(trace.final_x);
        }
        let rel = norm(&(&limits[0] - &limits[1])) / norm(&limits[0]);
        if rel > 1e-5 {
            return Err(format!("limits differ by rel {rel:.2e}"));
        }
        // Both match the dense mismatched oracle as well.
        let oracle = inst.reference_solution(false).map_err(|e| e.to_string())?;
        let rel_oracle = norm(&(&limits[0] - &oracle)) / norm(&oracle);
        if rel_oracle > 1e-5 {
            return Err(format!("limit vs dense oracle differ by {rel_oracle:.2e}"));
        }
        Ok(())
    });
}

#[test]
fn criterion_06_solution_gap_bound() {
    criterion(6, "solution-gap bound dominates the measured gap", 60.0, || {
        for s in 0..5u64 {
            let inst = build_quadratic(&QuadraticConfig {
                dim: 12,
                data_dim: 18,
                seed: 600 + s,
                alpha: 0.4,
                mismatch_strength: 0.02 + 0.04 * s as f64,
                b_scale: 0.25,
                rho_policy: RhoPolicy::Recipe { margin: 0.25 },
                ..QuadraticConfig::default()
            })
            .map_err(|e| e.to_string())?;
            // The recipe keeps rho + alpha*lambda_min = zeta_tilde + margin > 0.
            let z_matched = inst.reference_solution(true).map_err(|e| e.to_string())?;
            let z_mismatched = inst.reference_solution(false).map_err(|e| e.to_string())?;
            let report = gap_bound_report(&z_mismatched, &z_matched, &inst.spec, &inst.estimates)
                .map_err(|e| e.to_string())?;
            if !report.holds {
                return Err(format!(
                    "seed {s}: bound {} < actual gap {}",
                    report.bound, report.actual_gap
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_07_per_step_contraction() {
    criterion(7, "per-step contraction under the theory factor", 30.0, || {
        let inst = matched_instance(707, 0.3);
        let (theta_fbhf, theta_fdrf) = inst
            .ledger
            .contraction_factors()
            .map_err(|e| e.to_string())?;
        let x_star = inst.reference_solution(true).map_err(|e| e.to_string())?;
        let z0 = &x_star + &(random_vector(16, 7070) / norm(&random_vector(16, 7070)) * 2.0);
        for (algorithm, theta) in [
            (Algorithm::Mmfbhf, theta_fbhf),
            (Algorithm::Mmfdrf, theta_fdrf),
        ] {
            let reference = match algorithm {
                Algorithm::Mmfbhf => x_star.clone(),
                Algorithm::Mmfdrf => inst.fdrf_fixed_point(inst.ledger.gamma_fdrf, &x_star),
            };
            let config = SolverConfig::from_ledger(algorithm, &inst.ledger, 2_000, 0.0, 2_000)
                .with_reference(reference);
            let trace = run(&inst.spec, &config, &inst.ledger, &z0).map_err(|e| e.to_string())?;
            let distances = trace.distances().ok_or("missing distance trace")?;
            let floor = 1e-10 * norm(&x_star).max(1.0);
            let worst = max_step_ratio(&distances, floor).ok_or("no usable ratios")?;
            if worst > theta + 1e-9 {
                return Err(format!(
                    "{algorithm}: worst ratio {worst:.12} exceeds theta {theta:.12}"
                ));
            }
        }
        Ok(())
    });
}

fn geometric_instance(seed: u64) -> QuadraticInstance {
    build_quadratic(&QuadraticConfig {
        dim: 8,
        data_dim: 12,
        seed,
        alpha: 0.5,
        mismatch_strength: 0.05,
        b_scale: 0.2,
        rho_policy: RhoPolicy::Recipe { margin: 0.3 },
        schedule: MismatchSchedule::Geometric {
            omega0: 0.1,
            eta_bar: 0.9,
        },
        ..QuadraticConfig::default()
    })
    .expect("instance builds")
}

fn constant_twin(seed: u64) -> QuadraticInstance {
    build_quadratic(&QuadraticConfig {
        dim: 8,
        data_dim: 12,
        seed,
        alpha: 0.5,
        mismatch_strength: 0.05,
        b_scale: 0.2,
        rho_policy: RhoPolicy::Recipe { margin: 0.3 },
        schedule: MismatchSchedule::Constant,
        ..QuadraticConfig::default()
    })
    .expect("instance builds")
}

#[test]
fn criterion_08_linear_rate_under_geometric_mismatch() {
    criterion(8, "linear rate under geometric mismatch", 60.0, || {
        let seed = 808;
        let constant = constant_twin(seed);
        let geometric = geometric_instance(seed);
        let z0 = Array1::from_elem(8, 4.0);
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            // Reference limit from a long constant-mismatch run.
            let long = SolverConfig::from_ledger(algorithm, &constant.ledger, 1_000_000, 0.0, 1_000_000);
            let reference = run(&constant.spec, &long, &constant.ledger, &z0)
                .map_err(|e| e.to_string())?
                .final_z;
            let theta = match algorithm {
                Algorithm::Mmfbhf => constant.ledger.theta_fbhf.unwrap(),
                Algorithm::Mmfdrf => constant.ledger.theta_fdrf.unwrap(),
            };
            let config = SolverConfig::from_ledger(algorithm, &geometric.ledger, 150, 0.0, 150)
                .with_reference(reference);
            let trace = run(&geometric.spec, &config, &geometric.ledger, &z0)
                .map_err(|e| e.to_string())?;
            let distances = trace.distances().ok_or("missing distances")?;
            let report = rate_estimate(&distances, theta, 0.9).map_err(|e| e.to_string())?;
            if !report.satisfied {
                return Err(format!(
                    "{algorithm}: fitted ratio {:.4} exceeds max(theta={:.4}, 0.9) + 0.02",
                    report.fitted_ratio, theta
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_09_quasi_fejer() {
    criterion(9, "quasi-Fejér monotonicity", 60.0, || {
        let z0 = Array1::from_elem(16, 5.0);
        // Matched strongly monotone runs: no distance increases at all.
        let matched = matched_instance(909, 0.3);
        let x_star = matched.reference_solution(true).map_err(|e| e.to_string())?;
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            let reference = match algorithm {
                Algorithm::Mmfbhf => x_star.clone(),
                Algorithm::Mmfdrf => matched.fdrf_fixed_point(matched.ledger.gamma_fdrf, &x_star),
            };
            let config = SolverConfig::from_ledger(algorithm, &matched.ledger, 1_500, 0.0, 1_500)
                .with_reference(reference);
            let trace = run(&matched.spec, &config, &matched.ledger, &z0)
                .map_err(|e| e.to_string())?;
            let distances = trace.distances().ok_or("missing distances")?;
            let omegas = vec![0.0; distances.len()];
            let report = fejer_monitor(&distances, &omegas).map_err(|e| e.to_string())?;
            if report.violation {
                return Err(format!(
                    "{algorithm}: matched run increased distances (max rel {:.2e})",
                    report.max_relative_increase
                ));
            }
        }

        // Geometric-mismatch runs: increases bounded by the omega budget.
        let geometric = geometric_instance(910);
        let constant = constant_twin(910);
        let z0g = Array1::from_elem(8, 4.0);
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            let long = SolverConfig::from_ledger(algorithm, &constant.ledger, 500_000, 0.0, 500_000);
            let reference = run(&constant.spec, &long, &constant.ledger, &z0g)
                .map_err(|e| e.to_string())?
                .final_z;
            let config = SolverConfig::from_ledger(algorithm, &geometric.ledger, 400, 0.0, 400)
                .with_reference(reference);
            let trace = run(&geometric.spec, &config, &geometric.ledger, &z0g)
                .map_err(|e| e.to_string())?;
            let distances = trace.distances().ok_or("missing distances")?;
            let omegas: Vec<f64> = (0..distances.len())
                .map(|n| geometric.spec.mismatch.omega(n))
                .collect();
            let report = fejer_monitor(&distances, &omegas).map_err(|e| e.to_string())?;
            let total_budget: f64 = omegas.iter().sum();
            let scale = distances[0].max(1e-12);
            let c_total = report.total_increase / total_budget;
            if !report.fitted_c.is_finite() {
                return Err(format!("{algorithm}: increase at a zero-budget step"));
            }
            if c_total > 1e3 * scale {
                return Err(format!(
                    "{algorithm}: total increase {} not dominated by budget (C = {c_total:.2e})",
                    report.total_increase
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_10_perturbation_bound_on_ct() {
    criterion(10, "perturbation bound on the desk CT instance", 30.0, || {
        let geometry = Geometry::desk_default();
        let phantom = make_phantom(&geometry, PhantomKind::Disks, 42);
        let l = ray_driven_projector(&geometry).map_err(|e| e.to_string())?;
        let data =
            synthesize_data(&l, &phantom, 200.0, 4242, &geometry).map_err(|e| e.to_string())?;
        let problem = build_ct_problem(
            &geometry,
            &CtPenalties::default(),
            &data,
            MismatchSchedule::Geometric {
                omega0: 0.1,
                eta_bar: 0.9,
            },
            10,
        )
        .map_err(|e| e.to_string())?;
        let report = perturbation_bound_check(
            &problem.spec,
            &problem.spec.mismatch,
            problem.ledger.theta1,
            10_000,
            1010,
        )
        .map_err(|e| e.to_string())?;
        if report.worst_slack < -1e-10 * report.scale {
            return Err(format!(
                "worst slack {:.3e} below tolerance for scale {:.3e}",
                report.worst_slack, report.scale
            ));
        }
        Ok(())
    });
}

#[test]
fn criterion_11_desk_ct_behavior() {
    criterion(11, "desk CT: both schemes converge and agree", 120.0, || {
        let geometry = Geometry::desk_default();
        let phantom = make_phantom(&geometry, PhantomKind::Disks, 42);
        let l = ray_driven_projector(&geometry).map_err(|e| e.to_string())?;
        let data =
            synthesize_data(&l, &phantom, 200.0, 4242, &geometry).map_err(|e| e.to_string())?;
        let problem = build_ct_problem(
            &geometry,
            &CtPenalties::default(),
            &data,
            MismatchSchedule::Constant,
            0,
        )
        .map_err(|e| e.to_string())?;
        if (problem.ledger.rho_hat - 1e-3).abs() > 1e-9 {
            return Err(format!("rho_hat = {} instead of 1e-3", problem.ledger.rho_hat));
        }
        let z0 = Array1::zeros(geometry.n_pixels());
        let mut final_snrs = Vec::new();
        for algorithm in [Algorithm::Mmfbhf, Algorithm::Mmfdrf] {
            let config = SolverConfig::from_ledger(algorithm, &problem.ledger, 5_000, 1e-6, 10);
            let trace = run(&problem.spec, &config, &problem.ledger, &z0)
                .map_err(|e| e.to_string())?;
            if !trace.converged {
                return Err(format!(
                    "{algorithm}: residual {:.3e} after {} iterations",
                    trace.steps.last().map(|s| s.residual).unwrap_or(f64::NAN),
                    trace.iterations
                ));
            }
            let snrs: Vec<f64> = trace
                .snapshots
                .iter()
                .map(|s| quality(&s.x, &phantom, None).map(|q| q.snr_db))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let burn_in = snrs.len() / 4;
            for w in snrs[burn_in..].windows(2) {
                if w[1] < w[0] - 1e-3 {
                    return Err(format!(
                        "{algorithm}: SNR not monotone after burn-in ({} -> {})",
                        w[0], w[1]
                    ));
                }
            }
            final_snrs.push(*snrs.last().unwrap());
        }
        if (final_snrs[0] - final_snrs[1]).abs() > 0.2 {
            return Err(format!(
                "final SNRs differ: {:.3} dB vs {:.3} dB",
                final_snrs[0], final_snrs[1]
            ));
        }
        Ok(())
    });
}

#[test]
fn criterion_12_stepsize_admissibility() {
    criterion(12, "step-size admissibility on random parameters", 5.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(1212);
        for t in 0..1_000 {
            let beta = 10f64.powf(rng.random::<f64>() * 4.0 - 2.0);
            let kappa = 10f64.powf(rng.random::<f64>() * 4.0 - 2.0);
            let rho = 6.0 * rng.random::<f64>() - 3.0;
            let chi_v = chi(beta, kappa, rho).map_err(|e| e.to_string())?;
            if chi_v >= 2.0 * beta || chi_v >= 1.0 / kappa {
                return Err(format!(
                    "trial {t}: chi {chi_v} not below min(2beta, 1/kappa)"
                ));
            }
            let safety = 0.999;
            let g = gamma_fdrf(beta, kappa, rho, safety).map_err(|e| e.to_string())?;
            if !in_gamma_set(g, beta, kappa, rho) {
                return Err(format!("trial {t}: gamma_fdrf output not admissible"));
            }
            if in_gamma_set(g * 1.01 / safety, beta, kappa, rho) {
                return Err(format!("trial {t}: inflated gamma still admissible"));
            }
            let (eps1, eps2) = epsilons_fdrf(g, beta, kappa).map_err(|e| e.to_string())?;
            if eps1 <= 0.0 || eps2 <= 0.0 {
                return Err(format!("trial {t}: nonpositive epsilons ({eps1}, {eps2})"));
            }
        }
        Ok(())
    });
}
