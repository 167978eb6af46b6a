//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use extcal::geom::{skew, Rotation, Transform, Vec3};
use extcal::handeye::{solve_rotation_handeye, solve_translation_handeye, RelativePosePair};
use extcal::imu_preint::{preintegrate, ImuSample};
use extcal::lsq::{solve_bvls, solve_weighted_lsq, Bounds, LinearSystem};
use extcal::observe::{align_angular_rates, fisher_information, gate_batch, psd_singular_values};
use extcal::pipeline::{
    associate_poses, build_rate_batch, gravity_align_init, metric_delta_r, metric_delta_t,
    optimal_rotation_noise, optimal_translation_noise, run_calibration, step_batch, BatchConfig,
    BatchOutcome, CalibrationState, PosePair,
};
use extcal::qmethod::{davenport_k, kabsch_align, solve_qmethod, solve_rotation, DavenportAccumulator};
use extcal::sim::{self, static_accels, NoiseModel, PoseModel, ScenarioSpec, Segment, SegmentKind};
use extcal::Error;
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type CriterionFn = fn(&mut Checks);

/// Collects failed checks for one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn run_criterion(id: usize, name: &str, body: CriterionFn) -> bool {
    let mut checks = Checks::default();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| body(&mut checks)));
    if let Err(p) = outcome {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        checks.failures.push(format!("panicked: {msg}"));
    }
    let pass = checks.failures.is_empty();
    let detail = if pass {
        checks.notes.join("; ")
    } else {
        checks.failures.join("; ")
    };
    println!(
        "criterion {id:>2} {}: {name}{}{detail}",
        if pass { "PASS" } else { "FAIL" },
        if detail.is_empty() { "" } else { " | " }
    );
    pass
}

// ---------------------------------------------------------------------------
// Shared fixtures

fn truth() -> Transform {
    Transform::new(
        Rotation::from_rpy(0.02, -0.03, 10f64.to_radians()),
        Vec3::new(0.2, -0.1, 0.05),
    )
}

fn segment(kind: SegmentKind, duration: f64, yaw_rate: f64, tilt: f64) -> Segment {
    Segment {
        kind,
        duration,
        speed: 5.0,
        yaw_rate,
        roll_pitch_excitation: tilt,
    }
}

/// Figure-eight then s-curve: 100 s, 1000 pose pairs, 20 batches of 50.
fn rich_spec() -> ScenarioSpec {
    ScenarioSpec::new(
        vec![
            segment(SegmentKind::FigureEight, 50.0, 0.3, 0.05),
            segment(SegmentKind::SCurve, 50.0, 0.3, 0.08),
        ],
        10.0,
        100.0,
    )
}

fn straight_spec() -> ScenarioSpec {
    ScenarioSpec::new(vec![segment(SegmentKind::Straight, 100.0, 0.0, 0.0)], 10.0, 100.0)
}

fn config() -> BatchConfig {
    let mut cfg = BatchConfig::new(50, 1e-6, 1e3, Vec3::new(0.1, 0.0, 0.0)).unwrap();
    cfg.gyro_covariance = Matrix3::identity() * 0.005f64.powi(2);
    cfg
}

fn random_rotation(rng: &mut impl Rng) -> Rotation {
    Rotation::exp(&Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
}

fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-scale..scale))
}

// ---------------------------------------------------------------------------
// 1, 2: simulated round trips

fn zero_noise_round_trip(c: &mut Checks) {
    let s = sim::generate(&rich_spec(), &truth(), PoseModel::CommonFrame).unwrap();
    let start = Instant::now();
    let report = run_calibration(&s.base_poses, &s.lidar_poses, &s.base_rates, &s.lidar_rates, &config()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let gt = s.ground_truth_extrinsic;
    let dr = metric_delta_r(&report.final_extrinsic.rotation, &gt.rotation);
    let dt = metric_delta_t(&report.final_extrinsic.translation, &gt.translation);
    c.check(report.associated_pairs / 50 == 20, format!("{} associated pairs", report.associated_pairs));
    c.check(dr < 0.05, format!("delta_r {dr} deg"));
    c.check(dt < 0.005, format!("delta_t {dt} m"));
    c.check(elapsed < 5.0, format!("runtime {elapsed:.2} s"));
    c.note(format!("dR={dr:.2e} deg dt={dt:.2e} m in {elapsed:.2} s"));
}

fn noisy_round_trip(c: &mut Checks) {
    let noise = NoiseModel {
        gyro_std: 0.005,
        pose_rot_std: 0.5f64.to_radians(),
        pose_trans_std: 0.02,
        seed: 5,
        ..NoiseModel::default()
    };
    let clean = sim::generate(&rich_spec(), &truth(), PoseModel::CommonFrame).unwrap();
    let s = sim::corrupt(&clean, &noise).unwrap();
    let report = run_calibration(&s.base_poses, &s.lidar_poses, &s.base_rates, &s.lidar_rates, &config()).unwrap();
    let gt = s.ground_truth_extrinsic;
    let dr = metric_delta_r(&report.final_extrinsic.rotation, &gt.rotation);
    let dt = metric_delta_t(&report.final_extrinsic.translation, &gt.translation);
    c.check(dr < 1.0, format!("delta_r {dr} deg"));
    c.check(dt < 0.05, format!("delta_t {dt} m"));
    c.check(!report.cost_history.is_empty(), "empty cost history");
    let monotone = report
        .cost_history
        .windows(2)
        .all(|w| w[1].total_error <= w[0].total_error);
    c.check(monotone, "cost history increases");
    c.note(format!(
        "dR={dr:.3} deg dt={dt:.4} m, {} cost entries non-increasing",
        report.cost_history.len()
    ));
}

// ---------------------------------------------------------------------------
// 3, 4: q-method

fn qmethod_vs_kabsch(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let n = rng.random_range(2..12);
        let mut acc = DavenportAccumulator::new();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let r_b = random_rotation(&mut rng);
            let r_l = r * r_b;
            acc.push(&r_b, &r_l);
            // Kabsch on the columns of each rotation pair.
            for k in 0..3 {
                src.push(r_b.matrix().column(k).into_owned());
                dst.push(r_l.matrix().column(k).into_owned());
            }
        }
        let q = solve_rotation(&acc).unwrap();
        let k = kabsch_align(&src, &dst).unwrap().rotation;
        worst = worst.max(q.angle_to(&k));
    }
    c.check(worst < 1e-9, format!("max geodesic distance {worst:e} rad"));
    c.note(format!("max geodesic distance {worst:.1e} rad"));
}

fn optimal_cost_identity(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let mut acc = DavenportAccumulator::new();
        for _ in 0..rng.random_range(3..20) {
            let r_b = random_rotation(&mut rng);
            let jitter = Rotation::exp(&Vec3::from_fn(|_, _| noise.sample(&mut rng)));
            acc.push(&r_b, &(jitter * r * r_b));
        }
        let k = davenport_k(&acc);
        let (q, lambda) = solve_qmethod(&k).unwrap();
        worst = worst.max((-k.quadratic_form(&q) - (-lambda)).abs());
    }
    c.check(worst < 1e-9, format!("max |q'Kq - lambda| {worst:e}"));
    c.note(format!("max |q'Kq - lambda_max| {worst:.1e}"));
}

// ---------------------------------------------------------------------------
// 5: information gate

fn batch_of(s: &sim::GeneratedScenario, cfg: &BatchConfig, index: usize) -> (Vec<PosePair>, extcal::observe::RateBatch) {
    let pairs = associate_poses(&s.base_poses, &s.lidar_poses, cfg.max_association_gap);
    let n = cfg.batch_size;
    let batch = pairs[index * n..(index + 1) * n].to_vec();
    let rates = build_rate_batch(
        &s.base_rates,
        &s.lidar_rates,
        batch[0].base.t,
        batch[n - 1].base.t,
        cfg.max_association_gap,
        &cfg.gyro_covariance,
    )
    .unwrap();
    (batch, rates)
}

fn gate_discrimination(c: &mut Checks) {
    let cfg = config();
    let straight = sim::generate(&straight_spec(), &truth(), PoseModel::CommonFrame).unwrap();
    let rich = sim::generate(&rich_spec(), &truth(), PoseModel::CommonFrame).unwrap();

    let start = CalibrationState::new(Transform::new(Rotation::from_rpy(0.01, 0.02, 0.1), Vec3::new(0.1, 0.0, 0.0)));
    let mut worst_straight: f64 = 0.0;
    for b in 0..20 {
        let (pairs, rates) = batch_of(&straight, &cfg, b);
        let decision = gate_batch(&rates, &Rotation::identity(), cfg.epsilon);
        worst_straight = worst_straight.max(decision.min_singular);
        c.check(decision.min_singular < 1e-9, format!("straight batch {b}: sigma_min {:e}", decision.min_singular));

        let after = step_batch(start.clone(), &pairs, &rates, &cfg).unwrap();
        let entry = after.gate_log.last().unwrap();
        c.check(!entry.accepted && entry.outcome == BatchOutcome::Rejected, format!("straight batch {b} not rejected"));
        let same_bits = start.extrinsic.to_matrix().iter().zip(after.extrinsic.to_matrix().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        c.check(same_bits, format!("straight batch {b}: extrinsic changed"));
        c.check(
            after.accepted_pairs == start.accepted_pairs
                && after.davenport == start.davenport
                && after.cost_history == start.cost_history
                && after.converged == start.converged,
            format!("straight batch {b}: state changed"),
        );
    }

    let mut smallest_rich = f64::INFINITY;
    for b in 0..20 {
        let (pairs, rates) = batch_of(&rich, &cfg, b);
        let r = align_angular_rates(&rates, &Rotation::identity(), cfg.max_align_iters).unwrap();
        let sigma = psd_singular_values(&fisher_information(&rates, &r))[2];
        smallest_rich = smallest_rich.min(sigma);
        let mut half = cfg.clone();
        half.epsilon = 0.5 * sigma;
        c.check(gate_batch(&rates, &r, half.epsilon).accepted, format!("excited batch {b} rejected"));
        let after = step_batch(CalibrationState::new(truth()), &pairs, &rates, &half).unwrap();
        c.check(after.gate_log[0].accepted, format!("excited batch {b}: pipeline gate rejected"));
    }
    c.note(format!(
        "straight sigma_min <= {worst_straight:.1e}, excited sigma_min >= {smallest_rich:.3e}"
    ));
}

// ---------------------------------------------------------------------------
// 6: preintegration against a dense RK4 oracle

/// RK4 on `R' = R [w]x, v' = R f, p' = v` with constant body inputs.
fn rk4_oracle(omega: &Vec3, f: &Vec3, duration: f64, steps: usize) -> (Matrix3<f64>, Vec3, Vec3) {
    let h = duration / steps as f64;
    let w = skew(omega);
    let deriv = |r: &Matrix3<f64>, v: &Vec3| (r * w, r * f, *v);
    let (mut r, mut v, mut p) = (Matrix3::identity(), Vec3::zeros(), Vec3::zeros());
    for _ in 0..steps {
        let (k1r, k1v, k1p) = deriv(&r, &v);
        let (k2r, k2v, k2p) = deriv(&(r + k1r * (h / 2.0)), &(v + k1v * (h / 2.0)));
        let (k3r, k3v, k3p) = deriv(&(r + k2r * (h / 2.0)), &(v + k2v * (h / 2.0)));
        let (k4r, k4v, k4p) = deriv(&(r + k3r * h), &(v + k3v * h));
        r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
    }
    (r, v, p)
}

fn preintegration_oracle(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rate = 100.0;
    let dt = 1.0 / rate;
    let mut windows = vec![
        (Vec3::new(0.0, 0.0, 0.5), Vec3::zeros()),
        (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)),
        (Vec3::new(0.3, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)),
        (Vec3::new(0.0, 0.0, 0.3), Vec3::new(0.0, 0.0, 9.81)),
        (Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 0.0, 0.0)),
    ];
    for _ in 0..30 {
        windows.push((random_vec(&mut rng, 1.0), random_vec(&mut rng, 10.0)));
    }

    let (mut worst_r, mut worst_p, mut worst_split_r, mut worst_split_p): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for (omega, f) in &windows {
        let samples: Vec<ImuSample> = (0..100).map(|k| ImuSample::new(k as f64 * dt, *omega, *f)).collect();
        let d = preintegrate(&samples, 0.0, 1.0).unwrap();
        let (r, _, p) = rk4_oracle(omega, f, 1.0, 1000);
        let r_err = d.d_rot.angle_to(&Rotation::project(&r));
        let p_err = (d.d_pos - p).norm();
        worst_r = worst_r.max(r_err);
        worst_p = worst_p.max(p_err);
        c.check(r_err < 1e-6, format!("w={omega:?} f={f:?}: rotation error {r_err:e}"));
        c.check(p_err < 1e-4, format!("w={omega:?} f={f:?}: position error {p_err:e}"));

        let split = rng.random_range(1..99) as f64 * dt;
        let joined = preintegrate(&samples, 0.0, split)
            .unwrap()
            .then(&preintegrate(&samples, split, 1.0).unwrap());
        let sr = joined.d_rot.angle_to(&d.d_rot);
        let sp = (joined.d_pos - d.d_pos).norm();
        worst_split_r = worst_split_r.max(sr);
        worst_split_p = worst_split_p.max(sp / (f.norm() * dt * dt).max(f64::MIN_POSITIVE));
        c.check(sr < 1e-9, format!("concatenation rotation {sr:e}"));
        c.check(sp <= f.norm() * dt * dt + 1e-12, format!("concatenation position {sp:e}"));
    }
    c.note(format!(
        "{} windows: rot err {worst_r:.1e} rad, pos err {worst_p:.1e} m; split rot {worst_split_r:.1e}, pos {worst_split_p:.1e} x |f|dt^2",
        windows.len()
    ));
}

// ---------------------------------------------------------------------------
// 7: bounded least squares

fn random_system(rng: &mut impl Rng, m: usize, n: usize) -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)),
        DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0)),
    )
}

/// Exhaustive oracle: every variable at its lower bound, upper bound or free.
fn enumerate_bvls(sys: &LinearSystem, bounds: &Bounds) -> DVector<f64> {
    let n = sys.unknowns();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        for i in 0..n {
            match state[i] {
                0 => x[i] = bounds.lower[i],
                1 => x[i] = bounds.upper[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let a_free = DMatrix::from_fn(sys.a.nrows(), free.len(), |r, k| sys.a[(r, free[k])]);
            let rhs = &sys.b - &sys.a * &x;
            let Ok(sol) = solve_weighted_lsq(&LinearSystem::new(a_free, rhs)) else {
                continue;
            };
            for (k, &i) in free.iter().enumerate() {
                x[i] = sol[k];
            }
        }
        if !bounds.contains(&x) {
            continue;
        }
        let obj = (&sys.a * &x - &sys.b).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.expect("the all-lower vertex is always feasible").1
}

fn bvls_correctness(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Interior: bounds loose around the unconstrained optimum.
    let mut worst_interior: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let sys = random_system(&mut rng, 10, n);
        let free = solve_weighted_lsq(&sys).unwrap();
        let bounds = Bounds::new(free.add_scalar(-1.0), free.add_scalar(1.0)).unwrap();
        let x = solve_bvls(&sys, &bounds).unwrap();
        worst_interior = worst_interior.max((x - free).amax());
    }
    c.check(worst_interior < 1e-9, format!("interior mismatch {worst_interior:e}"));

    let (mut worst_kkt, mut worst_oracle, mut worst_vertex, mut active): (f64, f64, f64, usize) = (0.0, 0.0, f64::INFINITY, 0);
    for _ in 0..50 {
        let n = rng.random_range(2..=4);
        let sys = random_system(&mut rng, 8, n);
        let bounds = Bounds::new(DVector::from_element(n, -0.3), DVector::from_element(n, 0.3)).unwrap();
        let x = solve_bvls(&sys, &bounds).unwrap();
        c.check(bounds.contains(&x), "solution outside bounds");

        // KKT: zero gradient on free variables, outward-pointing on active ones.
        let g = sys.a.transpose() * (&sys.a * &x - &sys.b);
        for i in 0..n {
            let at_lower = (x[i] - bounds.lower[i]).abs() < 1e-12;
            let at_upper = (x[i] - bounds.upper[i]).abs() < 1e-12;
            let violation = if at_lower {
                active += 1;
                (-g[i]).max(0.0)
            } else if at_upper {
                active += 1;
                g[i].max(0.0)
            } else {
                g[i].abs()
            };
            worst_kkt = worst_kkt.max(violation);
        }

        let oracle = enumerate_bvls(&sys, &bounds);
        worst_oracle = worst_oracle.max((&x - oracle).amax());

        let obj = (&sys.a * &x - &sys.b).norm_squared();
        for code in 0..(1usize << n) {
            let v = DVector::from_fn(n, |i, _| if code >> i & 1 == 1 { bounds.upper[i] } else { bounds.lower[i] });
            worst_vertex = worst_vertex.min((&sys.a * &v - &sys.b).norm_squared() - obj);
        }
    }
    c.check(active > 0, "no instance had an active bound");
    c.check(worst_kkt < 1e-9, format!("KKT violation {worst_kkt:e}"));
    c.check(worst_oracle < 1e-9, format!("enumeration oracle mismatch {worst_oracle:e}"));
    c.check(worst_vertex >= -1e-12, format!("a vertex beats the solution by {:e}", -worst_vertex));
    c.note(format!(
        "interior {worst_interior:.1e}, KKT {worst_kkt:.1e}, oracle {worst_oracle:.1e}, {active} active bounds, min vertex margin {worst_vertex:.2e}"
    ));
}

// ---------------------------------------------------------------------------
// 8: hand-eye

fn handeye_pairs(x: &Transform, motions: &[Transform]) -> Vec<RelativePosePair> {
    // motion_a X = X motion_b, so motion_b = X^-1 motion_a X.
    motions
        .iter()
        .map(|a| RelativePosePair::new(*a, x.inverse() * *a * *x))
        .collect()
}

fn handeye_recovery(c: &mut Checks) {
    let x = truth();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bounds = Bounds::around(&Vec3::new(0.1, 0.0, 0.0), 0.3).unwrap();

    // Two-axis motion: yaw and roll only.
    let two_axis: Vec<Transform> = (0..20)
        .map(|_| {
            let r = Rotation::about_z(rng.random_range(-0.8..0.8)) * Rotation::about_x(rng.random_range(-0.3..0.3));
            Transform::new(r, random_vec(&mut rng, 2.0))
        })
        .collect();
    let pairs = handeye_pairs(&x, &two_axis);
    let (q, _) = solve_rotation_handeye(&pairs).unwrap();
    let r = q.to_rotation();
    let rot_err = r.angle_to(&x.rotation);
    c.check(rot_err < 1e-9, format!("two-axis rotation error {rot_err:e}"));
    let (t, diag) = solve_translation_handeye(&pairs, &r, &bounds).unwrap();
    let t_err = (t - x.translation).amax();
    c.check(t_err < 1e-9, format!("yaw+roll translation error {t_err:e}"));
    c.check(diag.unobservable.is_empty(), "yaw+roll flagged unobservable");

    // Sensor-frame simulated data through the same solver.
    let s = sim::generate(&rich_spec(), &x, PoseModel::SensorFrame).unwrap();
    let sim_pairs: Vec<RelativePosePair> = (0..s.base_poses.len() - 10)
        .step_by(10)
        .map(|i| {
            RelativePosePair::from_absolute(
                &s.base_poses[i].pose,
                &s.base_poses[i + 10].pose,
                &s.lidar_poses[i].pose,
                &s.lidar_poses[i + 10].pose,
            )
        })
        .collect();
    let (q_sim, _) = solve_rotation_handeye(&sim_pairs).unwrap();
    let sim_err = q_sim.to_rotation().angle_to(&x.rotation);
    c.check(sim_err < 1e-9, format!("sensor-frame rotation error {sim_err:e}"));
    let (t_sim, _) = solve_translation_handeye(&sim_pairs, &q_sim.to_rotation(), &bounds).unwrap();
    let t_sim_err = (t_sim - x.translation).amax();
    c.check(t_sim_err < 1e-9, format!("sensor-frame translation error {t_sim_err:e}"));

    // Single-axis motion cannot fix the rotation.
    let yaw_only: Vec<Transform> = (0..20)
        .map(|_| Transform::new(Rotation::about_z(rng.random_range(-0.8..0.8)), random_vec(&mut rng, 2.0)))
        .collect();
    let yaw_pairs = handeye_pairs(&x, &yaw_only);
    let degenerate = matches!(solve_rotation_handeye(&yaw_pairs), Err(Error::DegenerateMotion { .. }));
    c.check(degenerate, "single-axis motion not reported as DegenerateMotion");

    // Yaw-only translation: height along the yaw axis is unobservable.
    let (t_yaw, diag) = solve_translation_handeye(&yaw_pairs, &x.rotation, &bounds).unwrap();
    let z_flagged = diag.unobservable.len() == 1 && diag.unobservable[0].z.abs() > 1.0 - 1e-9;
    c.check(z_flagged, format!("unobservable directions {:?}", diag.unobservable));
    let xy_err = (t_yaw.x - x.translation.x).abs().max((t_yaw.y - x.translation.y).abs());
    c.check(xy_err < 1e-9, format!("yaw-only x,y error {xy_err:e}"));
    c.check((t_yaw.z - 0.0).abs() < 1e-9, format!("yaw-only z not held at bound centre: {}", t_yaw.z));

    c.note(format!(
        "rot {rot_err:.1e}, trans {t_err:.1e}, sensor-frame rot {sim_err:.1e} trans {t_sim_err:.1e}, yaw-only xy {xy_err:.1e} with z unobservable"
    ));
}

// ---------------------------------------------------------------------------
// 9: sensitivity oracles

fn rotation_objective(r_bl: &Rotation, r_b: &Rotation, r_l: &Rotation, eta: &Matrix3<f64>) -> f64 {
    let eta_l = (r_bl.matrix() * r_b.matrix() - r_l.matrix()) + r_bl.matrix() * eta;
    eta.norm_squared() + eta_l.norm_squared()
}

fn translation_objective(r_bl: &Rotation, t_bl: &Vec3, r_rel: &Rotation, tau_b: &Vec3, tau_l: &Vec3, delta: &Vec3) -> f64 {
    let rt = r_bl.transpose();
    let delta_l = rt * ((r_rel.matrix() - Matrix3::identity()) * t_bl) + rt * (tau_b + delta) - tau_l;
    delta.norm_squared() + delta_l.norm_squared()
}

fn sensitivity_oracles(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Central differences are exact on quadratics up to rounding.
    let h = 1e-3;
    let (mut worst_rot, mut worst_trans): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (r_bl, r_b, r_l) = (random_rotation(&mut rng), random_rotation(&mut rng), random_rotation(&mut rng));
        let eta = optimal_rotation_noise(&r_bl, &r_b, &r_l);
        for i in 0..3 {
            for j in 0..3 {
                let mut e = Matrix3::zeros();
                e[(i, j)] = h;
                let g = (rotation_objective(&r_bl, &r_b, &r_l, &(eta + e))
                    - rotation_objective(&r_bl, &r_b, &r_l, &(eta - e)))
                    / (2.0 * h);
                worst_rot = worst_rot.max(g.abs());
            }
        }
    }
    for _ in 0..100 {
        let r_bl = random_rotation(&mut rng);
        let t = random_vec(&mut rng, 0.5);
        let r_rel = random_rotation(&mut rng);
        let tau_b = random_vec(&mut rng, 2.0);
        let tau_l = random_vec(&mut rng, 2.0);
        let d = optimal_translation_noise(&r_bl, &t, &r_rel, &tau_b, &tau_l);
        for k in 0..3 {
            let e = Vec3::ith(k, h);
            let g = (translation_objective(&r_bl, &t, &r_rel, &tau_b, &tau_l, &(d + e))
                - translation_objective(&r_bl, &t, &r_rel, &tau_b, &tau_l, &(d - e)))
                / (2.0 * h);
            worst_trans = worst_trans.max(g.abs());
        }
    }
    c.check(worst_rot < 1e-9, format!("rotation gradient {worst_rot:e}"));
    c.check(worst_trans < 1e-9, format!("translation gradient {worst_trans:e}"));
    c.note(format!("max |grad| rotation {worst_rot:.1e}, translation {worst_trans:.1e}"));
}

// ---------------------------------------------------------------------------
// 10: gravity alignment

fn gravity_alignment(c: &mut Checks) {
    let (roll, pitch) = (5f64.to_radians(), -3f64.to_radians());
    let g = Vec3::new(0.0, 0.0, -sim::STANDARD_GRAVITY);
    let clean = static_accels(roll, pitch, 200, &g);
    let (r, p) = gravity_align_init(&clean).unwrap();
    let err = (r - roll).abs().max((p - pitch).abs()).to_degrees();
    c.check(err < 0.01, format!("tilt error {err} deg"));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let jitter = Normal::new(0.0, 2.0).unwrap();
    let shaken: Vec<Vec3> = clean
        .iter()
        .map(|a| a + Vec3::from_fn(|_, _| jitter.sample(&mut rng)))
        .collect();
    let not_static = matches!(gravity_align_init(&shaken), Err(Error::NotStatic { .. }));
    c.check(not_static, "2 m/s^2 jitter accepted as static");
    c.note(format!("tilt error {err:.1e} deg, jitter rejected"));
}

// ---------------------------------------------------------------------------
// 11: command line

const CLI_SCENARIO: &str = r#"
pose_rate = 10.0
imu_rate = 100.0

[extrinsic]
translation = [0.2, -0.1, 0.05]
rpy_deg = [1.1459, -1.7189, 10.0]

[[segments]]
kind = "figure_eight"
duration = 50.0
speed = 5.0
yaw_rate = 0.3
roll_pitch_excitation = 0.05

[[segments]]
kind = "s_curve"
duration = 50.0
speed = 5.0
yaw_rate = 0.3
roll_pitch_excitation = 0.08
"#;

const CLI_STRAIGHT: &str = r#"
pose_rate = 10.0
imu_rate = 100.0

[extrinsic]
translation = [0.2, -0.1, 0.05]
rpy_deg = [1.1459, -1.7189, 10.0]

[[segments]]
kind = "straight"
duration = 100.0
speed = 5.0
"#;

const CLI_CONFIG: &str = "batch_size = 50\nbeta = 1e-6\nepsilon = 1000\nbound_radius_m = 0.3\n\
cad_prior_t = 0.1, 0, 0\nmax_association_gap_s = 0.005\ntranslation_backend = absolute\ngyro_std = 0.005\nseed = 11\n";

fn extcal(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_extcal"))
        .args(args)
        .output()
        .expect("spawn extcal");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_and_calibrate(c: &mut Checks, dir: &Path, scenario: &str, noise: &str, tag: &str) -> (i32, std::path::PathBuf) {
    std::fs::write(dir.join("scenario.toml"), scenario).unwrap();
    std::fs::write(dir.join("noise.toml"), noise).unwrap();
    std::fs::write(dir.join("calib.cfg"), CLI_CONFIG).unwrap();
    let data = dir.join(format!("data_{tag}"));
    let (code, _, err) = extcal(&[
        "simulate", "--scenario", p(&dir.join("scenario.toml")), "--noise", p(&dir.join("noise.toml")),
        "--out", p(&data), "--pose-model", "common-frame", "--seed", "11",
    ]);
    c.check(code == 0, format!("simulate {tag} exit {code}: {err}"));
    let report = dir.join(format!("report_{tag}.txt"));
    let (code, _, err) = extcal(&[
        "calibrate",
        "--base-poses", p(&data.join("base_poses.csv")),
        "--lidar-poses", p(&data.join("lidar_poses.csv")),
        "--base-imu", p(&data.join("base_imu.csv")),
        "--lidar-imu", p(&data.join("lidar_imu.csv")),
        "--config", p(&dir.join("calib.cfg")),
        "--report", p(&report),
    ]);
    if code == 1 {
        c.check(false, format!("calibrate {tag} failed: {err}"));
    }
    (code, report)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn cli_end_to_end(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Zero noise: converge, then evaluate.
    let (code, report) = simulate_and_calibrate(c, root, CLI_SCENARIO, "seed = 0\n", "clean");
    c.check(code == 0, format!("clean calibrate exit {code}"));
    let (code, out, err) = extcal(&[
        "evaluate", "--report", p(&report), "--ground-truth", p(&root.join("data_clean/ground_truth.csv")),
    ]);
    c.check(code == 0, format!("evaluate exit {code}: {err}"));
    let value = |key: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.trim_start_matches(" = ").parse().ok())
            .unwrap_or(f64::INFINITY)
    };
    let (dt, dr) = (value("delta_t_m"), value("delta_r_deg"));
    c.check(dt < 0.005 && dr < 0.05, format!("clean round trip dt {dt} m, dR {dr} deg"));

    // Same seed twice: identical data, reports and sidecars.
    let noise = "gyro_std = 0.005\npose_rot_std = 0.008726646259971648\npose_trans_std = 0.02\nseed = 3\n";
    let (code_a, report_a) = simulate_and_calibrate(c, root, CLI_SCENARIO, noise, "noisy_a");
    let (code_b, report_b) = simulate_and_calibrate(c, root, CLI_SCENARIO, noise, "noisy_b");
    c.check(code_a == code_b, "exit codes differ between identical runs");
    for f in ["base_poses.csv", "lidar_poses.csv", "base_imu.csv", "lidar_imu.csv", "ground_truth.csv"] {
        c.check(
            read(&root.join("data_noisy_a").join(f)) == read(&root.join("data_noisy_b").join(f)),
            format!("{f} differs between identical seeds"),
        );
    }
    let text_a = read(&report_a);
    c.check(!text_a.is_empty(), "noisy report missing");
    c.check(text_a == read(&report_b), "reports differ between identical runs");
    let sidecar = |r: &Path| read(Path::new(&format!("{}.cost.csv", r.display())));
    c.check(!sidecar(&report_a).is_empty() && sidecar(&report_a) == sidecar(&report_b), "cost sidecars differ");

    // Straight line: nothing passes the gate, exit 2, converged = false.
    let (code, report) = simulate_and_calibrate(c, root, CLI_STRAIGHT, "seed = 0\n", "straight");
    c.check(code == 2, format!("straight calibrate exit {code}"));
    let text = String::from_utf8_lossy(&read(&report)).into_owned();
    c.check(text.contains("converged = false\n"), "straight report does not say converged = false");

    // Missing input: exit 1 with a message.
    let (code, _, err) = extcal(&["evaluate", "--report", p(&root.join("nope.txt")), "--ground-truth", p(&report)]);
    c.check(code == 1 && err.contains("nope.txt"), format!("missing file exit {code}, stderr '{err}'"));

    c.note(format!("clean dt={dt:.1e} m dR={dr:.1e} deg; noisy reports identical; straight exit 2"));
}

fn main() {
    let criteria: [(&str, CriterionFn); 11] = [
        ("zero-noise round trip", zero_noise_round_trip),
        ("noisy round trip", noisy_round_trip),
        ("q-method vs Kabsch", qmethod_vs_kabsch),
        ("optimal cost identity", optimal_cost_identity),
        ("observability gate", gate_discrimination),
        ("preintegration vs RK4", preintegration_oracle),
        ("BVLS correctness", bvls_correctness),
        ("hand-eye recovery", handeye_recovery),
        ("sensitivity oracles", sensitivity_oracles),
        ("gravity alignment", gravity_alignment),
        ("end-to-end CLI", cli_end_to_end),
    ];
    // Panics are reported as FAIL lines; keep the default hook quiet.
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, body)) in criteria.iter().enumerate() {
        if !run_criterion(k + 1, name, *body) {
            failed += 1;
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
