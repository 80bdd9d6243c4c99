//! Dense-grid check of the decrease condition `V̇(s) < 0` for `s ≠ s*`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::clf::{ClfWorkspace, Lyapunov};
use crate::controllers::{ControlBuffers, Controller};
use crate::dynamics::{ControlAffine, Region};
use crate::grid::Grid;
use crate::linalg::norm2;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Points closer than this multiple of the grid spacing count as `s*` itself.
pub const EQUILIBRIUM_EXCLUSION: f64 = 1e-6;

/// Default number of states evaluated per batched pass.
pub const DEFAULT_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig<T> {
    pub delta: T,
    /// Radius of the ball around `s*` that is skipped; 0 checks everything but `s*`.
    pub r0: T,
    /// Keep at most this many violating states (the worst ones).
    pub max_recorded: usize,
    pub chunk: usize,
}

impl<T: Scalar> VerifyConfig<T> {
    pub fn new(delta: T) -> Self {
        Self { delta, r0: T::zero(), max_recorded: usize::MAX, chunk: DEFAULT_CHUNK }
    }

    pub fn with_r0(mut self, r0: T) -> Self {
        self.r0 = r0;
        self
    }

    pub fn with_max_recorded(mut self, cap: usize) -> Self {
        self.max_recorded = cap;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation<T> {
    pub state: Vec<T>,
    pub vdot: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport<T> {
    pub satisfiable: bool,
    /// Worst violations first, at most `max_recorded` of them.
    pub violations: Vec<Violation<T>>,
    pub violation_count: usize,
    /// Largest `V̇` among violations.
    pub max_violation: Option<T>,
    /// Largest `V̇` over all checked points; negative means a strict margin.
    pub max_vdot: T,
    pub checked: usize,
    pub delta: T,
    pub r0: T,
}

/// Heap entry ordered by `V̇` so the smallest recorded violation is on top.
struct Ranked<T> {
    vdot: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Ranked<T> {}
impl<T: Scalar> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we evict the mildest violation.
        let a = self.vdot.to_f64_lossy();
        let b = other.vdot.to_f64_lossy();
        b.total_cmp(&a).then(other.index.cmp(&self.index))
    }
}

/// Walks every grid point in index order, handing `(index, s, V, V̇)` to `visit`.
pub fn scan_grid<T, L, S>(
    clf: &L,
    controller: &Controller<T>,
    system: &S,
    grid: &Grid<T>,
    chunk: usize,
    mut visit: impl FnMut(usize, &[T], T, T),
) -> Result<()>
where
    T: Scalar,
    L: Lyapunov<T> + ?Sized,
    S: ControlAffine<T> + ?Sized,
{
    let n = system.state_dim();
    let m = system.control_dim();
    if grid.dim() != n || clf.dim() != n {
        return Err(Error::Dimension { what: "verification grid", expected: n, actual: grid.dim() });
    }
    let chunk = chunk.max(1);
    let mut ws = ClfWorkspace::new();
    let mut buf = ControlBuffers::new(m);
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n * m];
    let total = grid.len();
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let states = grid.points_range(start, end);
        clf.evaluate_batch_into(&states, &mut ws)?;
        for b in 0..end - start {
            let s = &states[b * n..(b + 1) * n];
            let grad = &ws.grads[b * n..(b + 1) * n];
            system.drift_into(s, &mut f);
            system.input_matrix_into(s, &mut g);
            let eval = controller.evaluate(s, grad, &f, &g, &mut buf);
            visit(start + b, s, ws.values[b], eval.vdot);
        }
        start = end;
    }
    Ok(())
}

fn excluded<T: Scalar>(s: &[T], eq: &[T], radius: T) -> bool {
    let d: Vec<T> = s.iter().zip(eq).map(|(&a, &b)| a - b).collect();
    norm2(&d) < radius
}

fn exclusion_radius<T: Scalar>(delta: T, r0: T) -> T {
    r0.max(delta * T::lit(EQUILIBRIUM_EXCLUSION))
}

/// Checks `V̇ < 0` at every lattice point of `region` at spacing `delta`,
/// skipping the ball of radius `r0` around `s*` (and always `s*` itself).
pub fn check_satisfiability<T, L, S>(
    clf: &L,
    controller: &Controller<T>,
    system: &S,
    region: &Region<T>,
    config: &VerifyConfig<T>,
) -> Result<VerificationReport<T>>
where
    T: Scalar,
    L: Lyapunov<T> + ?Sized,
    S: ControlAffine<T> + ?Sized,
{
    if config.r0 < T::zero() {
        return Err(Error::InvalidInput(format!("overlooked radius must be non-negative, got {}", config.r0)));
    }
    let grid = Grid::new(region, config.delta)?;
    let radius = exclusion_radius(config.delta, config.r0);
    let eq = clf.equilibrium().to_vec();
    let mut heap: BinaryHeap<Ranked<T>> = BinaryHeap::new();
    let mut count = 0usize;
    let mut checked = 0usize;
    let mut max_vdot = T::neg_infinity();
    let mut max_violation: Option<T> = None;
    scan_grid(clf, controller, system, &grid, config.chunk, |index, s, _v, vdot| {
        if excluded(s, &eq, radius) {
            return;
        }
        checked += 1;
        if vdot > max_vdot || vdot.is_nan() {
            max_vdot = vdot;
        }
        // Ties at zero violate; NaN never certifies anything.
        if !(vdot < T::zero()) {
            count += 1;
            max_violation = Some(match max_violation {
                Some(m) if m >= vdot => m,
                _ => vdot,
            });
            if config.max_recorded > 0 {
                heap.push(Ranked { vdot, index });
                if heap.len() > config.max_recorded {
                    heap.pop();
                }
            }
        }
    })?;
    let mut ranked = heap.into_vec();
    ranked.sort_by(|a, b| b.vdot.to_f64_lossy().total_cmp(&a.vdot.to_f64_lossy()).then(a.index.cmp(&b.index)));
    let violations = ranked.into_iter().map(|r| Violation { state: grid.point(r.index), vdot: r.vdot }).collect();
    Ok(VerificationReport {
        satisfiable: count == 0,
        violations,
        violation_count: count,
        max_violation,
        max_vdot,
        checked,
        delta: config.delta,
        r0: config.r0,
    })
}

/// `V` and `V̇` sampled on a full lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField<T> {
    pub grid: Grid<T>,
    pub values: Vec<T>,
    pub vdot: Vec<T>,
}

impl<T: Scalar> GridField<T> {
    pub fn evaluate<L, S>(clf: &L, controller: &Controller<T>, system: &S, grid: Grid<T>) -> Result<Self>
    where
        L: Lyapunov<T> + ?Sized,
        S: ControlAffine<T> + ?Sized,
    {
        let len = grid.len();
        let mut values = Vec::with_capacity(len);
        let mut vdot = Vec::with_capacity(len);
        scan_grid(clf, controller, system, &grid, DEFAULT_CHUNK, |_, _, v, vd| {
            values.push(v);
            vdot.push(vd);
        })?;
        Ok(Self { grid, values, vdot })
    }

    /// Violating lattice points: `V̇ ≥ 0` outside the excluded ball of radius `r0`.
    pub fn violation_mask(&self, equilibrium: &[T], delta: T, r0: T) -> Vec<bool> {
        let radius = exclusion_radius(delta, r0);
        let mut s = vec![T::zero(); self.grid.dim()];
        (0..self.grid.len())
            .map(|i| {
                self.grid.point_into(i, &mut s);
                !excluded(&s, equilibrium, radius) && !(self.vdot[i] < T::zero())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clf::QuadraticClf;
    use crate::controllers::LqrControllerParams;
    use crate::dynamics::{SystemKind, SystemSpec};
    use crate::linalg::Matrix;

    /// `ṡ = λ s` with no actuation, paired with `V = ‖s‖²`.
    fn scaled_identity(lambda: f64) -> (SystemSpec<f64>, QuadraticClf<f64>, Controller<f64>) {
        let a = Matrix::identity(2).scale(lambda);
        let b = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let sys = SystemSpec::new(SystemKind::Linear { a, b }, Region::symmetric(2, 1.0).unwrap(), vec![-1.0], vec![1.0]).unwrap();
        let clf = QuadraticClf::new(Matrix::identity(2), Matrix::zeros(1, 2), vec![0.0, 0.0]).unwrap();
        let ctrl = Controller::Lqr(LqrControllerParams::new(Matrix::zeros(1, 2), vec![0.0, 0.0], vec![0.0]).unwrap());
        (sys, clf, ctrl)
    }

    #[test]
    fn contracting_flow_has_no_violations() {
        let (sys, clf, ctrl) = scaled_identity(-1.0);
        for delta in [0.5, 0.1, 0.013] {
            let rep = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &VerifyConfig::new(delta)).unwrap();
            assert!(rep.satisfiable);
            assert_eq!(rep.violation_count, 0);
            assert!(rep.max_vdot < 0.0);
        }
    }

    #[test]
    fn expanding_flow_violates_everywhere_but_equilibrium() {
        let (sys, clf, ctrl) = scaled_identity(1.0);
        let rep = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &VerifyConfig::new(0.25)).unwrap();
        assert!(!rep.satisfiable);
        assert_eq!(rep.violation_count, 9 * 9 - 1);
        assert_eq!(rep.checked, 80);
        // Worst first: the corners have the largest V̇ = 2‖s‖².
        assert_eq!(rep.violations[0].vdot, 4.0);
    }

    #[test]
    fn recording_cap_keeps_the_worst() {
        let (sys, clf, ctrl) = scaled_identity(1.0);
        let cfg = VerifyConfig::new(0.25).with_max_recorded(4);
        let rep = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &cfg).unwrap();
        assert_eq!(rep.violations.len(), 4);
        assert!(rep.violations.iter().all(|v| v.vdot == 4.0));
        assert_eq!(rep.violation_count, 80);
    }

    #[test]
    fn overlooked_radius_shrinks_the_checked_set() {
        let (sys, clf, ctrl) = scaled_identity(1.0);
        let full = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &VerifyConfig::new(0.1)).unwrap();
        let partial = check_satisfiability(&clf, &ctrl, &sys, sys.region(), &VerifyConfig::new(0.1).with_r0(0.35)).unwrap();
        assert!(partial.violation_count < full.violation_count);
        let full_set: Vec<&Vec<f64>> = full.violations.iter().map(|v| &v.state).collect();
        assert!(partial.violations.iter().all(|v| full_set.contains(&&v.state)));
    }

    #[test]
    fn field_mask_matches_report() {
        let (sys, clf, ctrl) = scaled_identity(1.0);
        let grid = Grid::new(sys.region(), 0.25).unwrap();
        let field = GridField::evaluate(&clf, &ctrl, &sys, grid).unwrap();
        let mask = field.violation_mask(&[0.0, 0.0], 0.25, 0.0);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 80);
        assert!(!mask[40]);
    }
}
