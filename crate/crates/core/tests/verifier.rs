use clfkit::clf::QuadraticClf;
use clfkit::controllers::{Controller, LqrControllerParams};
use clfkit::dynamics::{ControlAffine, Region};
use clfkit::linalg::Matrix;
use clfkit::verify::{check_satisfiability, VerifyConfig};
use proptest::prelude::*;

/// `ṡ = −s + 2 s·bump(‖s‖)`: contracting except on a ring around radius `centre`.
struct RingBump {
    centre: f64,
    width: f64,
}

impl ControlAffine<f64> for RingBump {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift_into(&self, s: &[f64], out: &mut [f64]) {
        let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
        let bump = (-((r - self.centre) / self.width).powi(2)).exp();
        for i in 0..2 {
            out[i] = -s[i] + 2.0 * s[i] * bump;
        }
    }
    fn input_matrix_into(&self, _s: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }
}

fn fixture() -> (QuadraticClf<f64>, Controller<f64>, Region<f64>) {
    let clf = QuadraticClf::new(Matrix::identity(2), Matrix::zeros(1, 2), vec![0.0, 0.0]).unwrap();
    let ctrl = Controller::Lqr(LqrControllerParams::new(Matrix::zeros(1, 2), vec![0.0, 0.0], vec![0.0]).unwrap());
    (clf, ctrl, Region::symmetric(2, 1.0).unwrap())
}

#[test]
fn overlooked_ball_hides_a_bump() {
    let (clf, ctrl, region) = fixture();
    let sys = RingBump { centre: 0.1, width: 0.03 };
    let audit = check_satisfiability(&clf, &ctrl, &sys, &region, &VerifyConfig::new(0.05)).unwrap();
    assert!(!audit.satisfiable);
    assert!(audit.violations.iter().all(|v| (v.state[0].hypot(v.state[1]) - 0.1).abs() < 0.05));
    let masked = check_satisfiability(&clf, &ctrl, &sys, &region, &VerifyConfig::new(0.05).with_r0(0.2)).unwrap();
    assert!(masked.satisfiable);
    assert_eq!(masked.r0, 0.2);
    assert!(masked.max_vdot < 0.0);
}

#[test]
fn equilibrium_point_itself_is_never_checked() {
    let (clf, ctrl, region) = fixture();
    let sys = RingBump { centre: 0.0, width: 1e-3 };
    let rep = check_satisfiability(&clf, &ctrl, &sys, &region, &VerifyConfig::new(0.1)).unwrap();
    // V̇ = 0 at s* would count as a violation if it were checked.
    assert!(rep.satisfiable);
    assert_eq!(rep.checked, 21 * 21 - 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn skipping_a_ball_only_removes_violations(centre in 0.0f64..0.9, width in 0.02f64..0.3, r0 in 0.0f64..0.8) {
        let (clf, ctrl, region) = fixture();
        let sys = RingBump { centre, width };
        let full = check_satisfiability(&clf, &ctrl, &sys, &region, &VerifyConfig::new(0.05)).unwrap();
        let part = check_satisfiability(&clf, &ctrl, &sys, &region, &VerifyConfig::new(0.05).with_r0(r0)).unwrap();
        prop_assert!(part.violation_count <= full.violation_count);
        for v in &part.violations {
            prop_assert!(full.violations.iter().any(|w| w.state == v.state));
        }
        prop_assert_eq!(full.satisfiable, full.violation_count == 0);
    }
}
