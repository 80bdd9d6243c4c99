//! The generic core also runs in `f32`.

use clfkit::clf::{ClfForm, Lyapunov};
use clfkit::controllers::{ClfControllerParams, Controller};
use clfkit::dynamics::SystemSpec;
use clfkit::trainer::{initial_candidate, NetShape};
use clfkit::verify::{check_satisfiability, VerifyConfig};
use clfkit::ClfCandidate32;

#[test]
fn f32_candidate_tracks_f64() {
    let shape = NetShape { hidden: vec![8], output: 4, ..NetShape::default() };
    let c32: ClfCandidate32 = initial_candidate(vec![0.0f32, 0.0], &shape, 6.0, ClfForm::SumOfSquares, 3).unwrap();
    let c64 = initial_candidate(vec![0.0f64, 0.0], &shape, 6.0, ClfForm::SumOfSquares, 3).unwrap();
    for s in [[0.5, -1.0], [2.0, 1.5], [-3.0, 0.25]] {
        let v32 = c32.value(&[s[0] as f32, s[1] as f32]).unwrap() as f64;
        let v64 = c64.value(&s).unwrap();
        assert!((v32 - v64).abs() <= 1e-4 * v64.abs().max(1.0), "{v32} {v64}");
    }
}

#[test]
fn f32_verification_runs() {
    let sys = SystemSpec::<f32>::pendulum(1.0, 1.0).unwrap();
    let clf = initial_candidate(vec![0.0f32, 0.0], &NetShape::default(), 6.0, ClfForm::SumOfSquares, 1).unwrap();
    let ctrl = Controller::Clf(ClfControllerParams::uniform(2.0f32, 1e3, vec![-20.0], vec![20.0], vec![0.0]).unwrap());
    let rep = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &VerifyConfig::new(0.1f32)).unwrap();
    assert_eq!(rep.checked, 81 * 81 - 1);
}
