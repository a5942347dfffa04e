mod common;

use common::*;
use drp_core::linops::{bicubic_downsample_operator, identity};
use drp_core::priors::protocol::{serve_peer, Fault, PeerBehavior};
use drp_core::priors::{
    Endpoint, ExternalRestorer, GaussianPriorModel, IdentityRestorer, PriorError, ProtocolError,
    DEFAULT_TIMEOUT,
};
use drp_core::solver::*;
use drp_core::sprox::CgConfig;
use drp_core::tensor::{psnr, standard_normal_vec, vecops, Image, RngSeed, Shape};
use drp_core::theory::quadratic_minimizer;
use nalgebra::DMatrix;
use std::io::BufReader;
use std::net::TcpListener;
use std::sync::Arc;

fn scalar_setup(y: f64) -> (Arc<GaussianPriorModel>, DataFidelity) {
    let s = Shape::vector(1);
    let model =
        GaussianPriorModel::new(vec![0.0], Arc::new(DMatrix::identity(1, 1)), identity(s), 1.0).unwrap();
    (Arc::new(model), DataFidelity::new(identity(s), vec![y]).unwrap())
}

fn exact(n: usize) -> CgConfig {
    CgConfig::converged(n)
}

#[test]
fn scalar_step_is_the_hand_derived_affine_map() {
    // R(x) = x/2, so z = x/2 and the prox gives x⁺ = (y + x/2)/2.
    let y = 1.2;
    let (model, data) = scalar_setup(y);
    let mut prior = Prior::gaussian(model.clone());
    for x in [-2.0, 0.0, 0.7, 3.0] {
        let next = drp_step(&[x], &mut prior, &data, 1.0, 1.0, &exact(1)).unwrap()[0];
        assert!((next - (y + x / 2.0) / 2.0).abs() < 1e-15);
    }
    // stationarity (x − y) + x/2 = 0
    let fixed = y / 1.5;
    let next = drp_step(&[fixed], &mut prior, &data, 1.0, 1.0, &exact(1)).unwrap()[0];
    assert!((next - fixed).abs() < 1e-15);
    let res = fixed_point_residual(&[fixed], &model, 1.0, |x| data.gradient(x)).unwrap();
    assert!(res <= 1e-10);
}

#[test]
fn scalar_pnp_matches_scalar_drp() {
    struct Half;
    impl drp_core::priors::Restorer for Half {
        fn input_shape(&self) -> Shape {
            Shape::vector(1)
        }
        fn output_shape(&self) -> Shape {
            Shape::vector(1)
        }
        fn restore(&mut self, s: &[f64]) -> Result<Vec<f64>, PriorError> {
            Ok(vec![s[0] / 2.0])
        }
    }
    let (_, data) = scalar_setup(0.9);
    let mut x = vec![5.0];
    for _ in 0..200 {
        x = pnp_pgm_step(&x, &mut Half, &data, 1.0, 1.0, &exact(1)).unwrap();
    }
    assert!((x[0] - 0.9 / 1.5).abs() < 1e-12);
}

#[test]
fn identity_restorer_reduces_to_data_consistency() {
    let shape = Shape::gray(4, 4);
    let a = blur(shape, 3, 1.0);
    let y = standard_normal_vec(16, RngSeed(3));
    let data = DataFidelity::new(a, y).unwrap();
    let mut prior = Prior::new(Box::new(IdentityRestorer::new(shape)), identity(shape)).unwrap();
    let x = standard_normal_vec(16, RngSeed(4));
    let step = drp_step(&x, &mut prior, &data, 0.7, 2.0, &exact(16)).unwrap();
    // G = 0, so x⁺ = argmin ½‖v − x‖² + γ g(v)
    let mut prox_only = x.clone();
    for _ in 0..1 {
        prox_only = pnp_pgm_step(&prox_only, &mut IdentityRestorer::new(shape), &data, 0.7, 2.0, &exact(16)).unwrap();
    }
    assert_eq!(step, prox_only);
    let optimality = {
        let mut r = data.gradient(&step);
        vecops::axpy(1.0 / 0.7, &vecops::sub(&step, &x), &mut r);
        vecops::norm(&r)
    };
    assert!(optimality < 1e-10, "{optimality}");
}

#[test]
fn converged_iterate_is_a_fixed_point() {
    let inst = gaussian_deblur_16(1);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let mut cfg = SolverConfig::new(0.25, inst.tau, 2000);
    cfg.cg = exact(16);
    cfg.stop_tol = 1e-15;
    let out = drp_solve(&inst.data, &mut priors, &cfg, None).unwrap();
    let next = drp_step(&out.x, &mut priors[0], &inst.data, 0.25, inst.tau, &cfg.cg).unwrap();
    assert!(vecops::dist_sq(&next, &out.x).sqrt() <= 1e-8);

    let (xs, _) = quadratic_minimizer(&inst.model, &inst.data, inst.tau).unwrap();
    let grad = |x: &[f64]| inst.data.gradient(x);
    assert!(fixed_point_residual(&xs, &inst.model, inst.tau, grad).unwrap() <= 1e-8);
    assert!(fixed_point_residual(&out.x, &inst.model, inst.tau, grad).unwrap() <= 1e-6);
    let far = vecops::scaled(10.0, &standard_normal_vec(16, RngSeed(9)));
    assert!(fixed_point_residual(&far, &inst.model, inst.tau, grad).unwrap() > 0.0);
}

#[test]
fn zero_iterations_returns_initial_point() {
    let inst = gaussian_deblur_16(2);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let cfg = SolverConfig::new(0.1, 1.0, 0);
    let out = drp_solve(&inst.data, &mut priors, &cfg, None).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.x, inst.data.observation());
}

#[test]
fn theory_step_gives_monotone_objective() {
    let inst = gaussian_deblur_16(3);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let mut cfg = SolverConfig::new(1.0, inst.tau, 100);
    cfg.alpha = Some(2.0);
    cfg.cg = exact(16);
    let out = drp_solve(&inst.data, &mut priors, &cfg, Some(&inst.truth)).unwrap();
    let st = out.stages[0];
    assert!((st.gamma - st.mu.unwrap() / (2.0 * st.lipschitz.unwrap())).abs() < 1e-15);
    let mut prev = out.trace.initial_objective.unwrap();
    for e in &out.trace.entries {
        let f = e.objective.unwrap();
        assert!(f <= prev + 1e-12 * (1.0 + prev.abs()), "iter {}", e.iter);
        prev = f;
        assert!(e.psnr.is_some() && e.subgrad_norm.is_some());
    }
}

#[test]
fn surrogate_is_the_true_gradient_under_exact_prox() {
    let inst = gaussian_deblur_16(4);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let mut cfg = SolverConfig::new(0.3, inst.tau, 1);
    cfg.cg = exact(16);
    let x0 = vecops::add(&inst.truth, &standard_normal_vec(16, RngSeed(5)));
    let out = drp_solve_from(x0, &inst.data, &mut priors, &cfg, None).unwrap();
    let mut grad = inst.data.gradient(&out.x);
    vecops::axpy(1.0, &inst.model.grad_implicit_regularizer(inst.tau, &out.x).unwrap(), &mut grad);
    let w = out.trace.entries[0].subgrad_norm.unwrap();
    assert!((w - vecops::norm(&grad)).abs() <= 1e-9 * (1.0 + w), "{w} vs {}", vecops::norm(&grad));
}

#[test]
fn identity_degradation_matches_pnp_bit_for_bit() {
    let shape = Shape::gray(8, 8);
    let a = blur(shape, 5, 1.2);
    let cov = squared_exponential(shape, 0.04, 2.0, 1e-3);
    let model = Arc::new(GaussianPriorModel::new(vec![0.4; 64], Arc::new(cov), identity(shape), 0.1).unwrap());
    let y = a.apply(&(0..64).map(|i| (i % 7) as f64 / 7.0).collect::<Vec<_>>());
    let data = DataFidelity::new(a, y).unwrap();
    let mut cfg = SolverConfig::new(0.4, 1.3, 100);
    let mut priors = vec![Prior::gaussian(model.clone())];
    let out = drp_solve(&data, &mut priors, &cfg, None).unwrap();

    let mut denoiser = drp_core::priors::GaussianRestorer::new(model);
    let mut x = data.initial_estimate();
    let mut traj = Vec::new();
    for _ in 0..100 {
        x = pnp_pgm_step(&x, &mut denoiser, &data, cfg.gamma, cfg.tau, &cfg.cg).unwrap();
        traj.push(x.clone());
    }
    assert_eq!(out.x, x);
    cfg.max_iters = 37;
    cfg.schedule = PriorSchedule::single(37);
    let partial = drp_solve(&data, &mut priors, &cfg, None).unwrap();
    assert_eq!(partial.x, traj[36]);
}

#[test]
fn coarse_to_fine_schedule_spikes_then_settles() {
    // q = 2 bicubic prior first, then the same prior observed through H = I.
    let shape = Shape::gray(32, 32);
    let a = blur(shape, 9, 1.6);
    let cov = Arc::new(squared_exponential(shape, 0.05, 3.0, 1e-3));
    let mean = vec![0.5; shape.len()];
    let coarse = GaussianPriorModel::new(mean, cov, bicubic_downsample_operator(2, shape).unwrap(), 0.02).unwrap();
    let fine = coarse.with_degradation(identity(shape), 0.02).unwrap();
    let truth = Image::from_fn(shape, |_, i, j| {
        0.5 + 0.25 * ((i as f64) / 5.0).sin() * ((j as f64) / 4.0).cos()
    });
    let mut y = a.apply(truth.as_slice());
    vecops::axpy(0.01, &standard_normal_vec(y.len(), RngSeed(11)), &mut y);
    let data = DataFidelity::new(a, y.clone()).unwrap();
    let mut priors = vec![Prior::gaussian(Arc::new(coarse)), Prior::gaussian(Arc::new(fine))];
    let mut cfg = SolverConfig::new(3.0, 1.0, 500);
    cfg.schedule = PriorSchedule::from_lengths(&[(0, 40), (1, 460)]);
    cfg.stop_tol = 1e-6;
    let out = drp_solve(&data, &mut priors, &cfg, Some(truth.as_slice())).unwrap();

    let entries = &out.trace.entries;
    let switch = entries.iter().position(|e| e.stage == 1).expect("second stage ran");
    assert_eq!(switch, 40);
    let before = entries[switch - 1].iterate_change;
    assert!(entries[switch].iterate_change > 10.0 * before, "no spike at the switch");
    let last = out.trace.last().unwrap();
    assert!(last.relative_change < 1e-6);
    assert!(last.iter < 500);
    let restored = Image::new(shape, out.x).unwrap();
    let observed = Image::new(shape, y).unwrap();
    assert!(psnr(&restored, &truth).unwrap() > psnr(&observed, &truth).unwrap());
}

#[test]
fn schedule_validation() {
    assert!(PriorSchedule::single(5).validate(5, 1).is_ok());
    assert!(PriorSchedule::single(5).validate(6, 1).is_err());
    assert!(PriorSchedule::from_lengths(&[(0, 2), (1, 3)]).validate(5, 1).is_err());
    let s = PriorSchedule::from_lengths(&[(0, 2), (0, 0), (1, 3)]);
    assert_eq!(s.stages().len(), 2);
    assert_eq!(s.stages()[1].first, 3);
    assert_eq!(s.total_iters(), 5);
    assert!(PriorSchedule::single(0).validate(0, 1).is_ok());
}

#[test]
fn config_and_shape_errors() {
    let inst = gaussian_deblur_16(6);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let mut cfg = SolverConfig::new(-1.0, 1.0, 3);
    assert!(matches!(
        drp_solve(&inst.data, &mut priors, &cfg, None).unwrap_err().error,
        SolverError::Config(_)
    ));
    cfg.gamma = 1.0;
    cfg.alpha = Some(0.5);
    assert!(drp_solve(&inst.data, &mut priors, &cfg, None).is_err());

    let other = Shape::gray(2, 8);
    let mut wrong = vec![Prior::new(Box::new(IdentityRestorer::new(other)), identity(other)).unwrap()];
    let err = drp_solve(&inst.data, &mut wrong, &SolverConfig::new(1.0, 1.0, 3), None).unwrap_err();
    assert!(matches!(err.error, SolverError::StageShape { .. }));

    let mismatched = Prior::new(Box::new(IdentityRestorer::new(other)), identity(Shape::gray(4, 4)));
    assert!(mismatched.is_err());
}

#[test]
fn initialization_for_rectangular_operators() {
    let shape = Shape::gray(4, 4);
    let s = drp_core::linops::decimation_operator(2, shape).unwrap();
    let y = vec![1.0, 2.0, 3.0, 4.0];
    let data = DataFidelity::new(s, y).unwrap();
    let x0 = data.initial_estimate();
    assert_eq!(x0[0], 1.0);
    assert_eq!(x0[2], 2.0);
    assert_eq!(x0[1], 0.0);
    assert_eq!(x0[10], 4.0);
}

fn tcp_peer(behavior: PeerBehavior) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let _ = serve_peer(&mut reader, &mut writer, behavior);
    });
    addr
}

#[test]
fn echo_peer_reproduces_identity_restorer() {
    let shape = Shape::gray(4, 4);
    let a = blur(shape, 3, 1.0);
    let data = DataFidelity::new(a, standard_normal_vec(16, RngSeed(8))).unwrap();
    let cfg = SolverConfig::new(0.5, 1.0, 5);
    let peer = ExternalRestorer::connect(&Endpoint::Socket(tcp_peer(PeerBehavior::Echo)), shape, shape, DEFAULT_TIMEOUT)
        .unwrap();
    let mut external = vec![Prior::new(Box::new(peer), identity(shape)).unwrap()];
    let out = drp_solve(&data, &mut external, &cfg, None).unwrap();
    assert!(out.trace.entries.iter().all(|e| e.objective.is_none() && e.subgrad_norm.is_none()));
    assert_eq!(out.trace.initial_objective, None);
}

#[test]
fn peer_failure_returns_partial_trace() {
    // The peer answers one request correctly, then crashes.
    let shape = Shape::gray(4, 4);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        use drp_core::priors::protocol::{read_request, write_response, STATUS_OK};
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        for _ in 0..2 {
            let (_, t) = read_request(&mut reader).unwrap().unwrap();
            write_response(&mut writer, STATUS_OK, &t).unwrap();
        }
    });
    let a = blur(shape, 3, 1.0);
    let data = DataFidelity::new(a, standard_normal_vec(16, RngSeed(8))).unwrap();
    let peer = ExternalRestorer::connect(&Endpoint::Socket(addr), shape, shape, DEFAULT_TIMEOUT).unwrap();
    let mut priors = vec![Prior::new(Box::new(peer), identity(shape)).unwrap()];
    let failure = drp_solve(&data, &mut priors, &SolverConfig::new(0.5, 1.0, 10), None).unwrap_err();
    assert_eq!(failure.trace.len(), 1);
    assert!(matches!(
        failure.error,
        SolverError::Prior(PriorError::Protocol(ProtocolError::PeerCrashed(_)))
    ));
    assert!(!failure.error.is_divergence());
    assert_eq!(failure.last_iterate.len(), 16);
}

#[test]
fn faulty_peer_surfaces_as_prior_error() {
    let shape = Shape::gray(4, 4);
    let a = blur(shape, 3, 1.0);
    let data = DataFidelity::new(a, standard_normal_vec(16, RngSeed(8))).unwrap();
    let addr = tcp_peer(PeerBehavior::Faulty(Fault::WrongShape));
    let peer = ExternalRestorer::connect(&Endpoint::Socket(addr), shape, shape, DEFAULT_TIMEOUT).unwrap();
    let mut priors = vec![Prior::new(Box::new(peer), identity(shape)).unwrap()];
    let failure = drp_solve(&data, &mut priors, &SolverConfig::new(0.5, 1.0, 10), None).unwrap_err();
    assert!(failure.trace.is_empty());
    assert!(matches!(failure.error, SolverError::Prior(PriorError::Protocol(_))));
}

#[test]
fn oversized_step_reports_divergence() {
    let inst = gaussian_deblur_16(7);
    let mut priors = vec![Prior::gaussian(inst.model.clone())];
    let mut cfg = SolverConfig::new(1e3, inst.tau, 2000);
    cfg.cg = exact(16);
    let failure = drp_solve(&inst.data, &mut priors, &cfg, None).unwrap_err();
    assert!(failure.error.is_divergence(), "{}", failure.error);
    assert!(!failure.trace.is_empty());
}
