//! Largest verified sublevel set of a planar CLF, its marching-squares
//! boundary and the enclosed area.

use std::collections::HashMap;

use crate::grid::Grid;
use crate::scalar::Scalar;
use crate::verify::GridField;
use crate::{Error, Result};

/// Ordered vertices; closed polylines repeat the first vertex at the end.
pub type Polyline<T> = Vec<[T; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct RoaResult<T> {
    pub level: T,
    pub contour: Polyline<T>,
    pub area: T,
    /// True when the field had no violations anywhere on the grid.
    pub verified: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoaOptions {
    pub max_iterations: usize,
    /// Stop bisecting once `(hi − lo) ≤ rel_tol · hi`.
    pub rel_tol: f64,
}

impl Default for RoaOptions {
    fn default() -> Self {
        Self { max_iterations: 60, rel_tol: 1e-9 }
    }
}

/// Shoelace area of a closed polyline, orientation-free.
pub fn contour_area<T: Scalar>(poly: &[[T; 2]]) -> Result<T> {
    if poly.len() <= 3 {
        log::warn!("degenerate contour with {} vertices has zero area", poly.len());
        return Ok(T::zero());
    }
    if poly[0] != poly[poly.len() - 1] {
        return Err(Error::InvalidInput("contour area needs a closed polyline (first vertex = last)".into()));
    }
    let mut twice = T::zero();
    for w in poly.windows(2) {
        twice += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    Ok((twice * T::lit(0.5)).abs())
}

/// Even-odd ray casting; the polyline may be closed or implicitly closed.
pub fn point_in_polygon<T: Scalar>(poly: &[[T; 2]], p: [T; 2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn planar_shape<T: Scalar>(grid: &Grid<T>, values: &[T]) -> Result<(usize, usize)> {
    if grid.dim() != 2 {
        return Err(Error::Dimension { what: "contour grid", expected: 2, actual: grid.dim() });
    }
    let shape = grid.shape();
    if values.len() != grid.len() {
        return Err(Error::Dimension { what: "contour field", expected: grid.len(), actual: values.len() });
    }
    if shape[0] < 2 || shape[1] < 2 {
        return Err(Error::InvalidInput("contour grid needs at least 2 points per axis".into()));
    }
    Ok((shape[0], shape[1]))
}

/// All closed level curves `{field = level}`, each as a closed polyline.
/// Fails with `NoContour` if nothing crosses and `OpenContour` if a curve
/// runs into the grid boundary.
pub fn extract_contours<T: Scalar>(grid: &Grid<T>, values: &[T], level: T) -> Result<Vec<Polyline<T>>> {
    let (nx, ny) = planar_shape(grid, values)?;
    let xs = &grid.axes()[0];
    let ys = &grid.axes()[1];
    let at = |i: usize, j: usize| values[i * ny + j];
    let inside = |v: T| v <= level;
    let x_edges = (nx - 1) * ny;
    let x_edge = |i: usize, j: usize| i * ny + j;
    let y_edge = |i: usize, j: usize| x_edges + i * (ny - 1) + j;

    let crossing = |edge: usize| -> [T; 2] {
        let (p0, p1, v0, v1) = if edge < x_edges {
            let (i, j) = (edge / ny, edge % ny);
            ([xs[i], ys[j]], [xs[i + 1], ys[j]], at(i, j), at(i + 1, j))
        } else {
            let e = edge - x_edges;
            let (i, j) = (e / (ny - 1), e % (ny - 1));
            ([xs[i], ys[j]], [xs[i], ys[j + 1]], at(i, j), at(i, j + 1))
        };
        let t = if v1 == v0 { T::lit(0.5) } else { ((level - v0) / (v1 - v0)).max(T::zero()).min(T::one()) };
        let t = if t.is_finite() { t } else { T::zero() };
        [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
    };

    let mut links: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut connect = |a: usize, b: usize| {
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    };
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let ins = c.map(inside);
            let e = [x_edge(i, j), y_edge(i + 1, j), x_edge(i, j + 1), y_edge(i, j)];
            // Edge k joins corners k and k+1 (mod 4).
            let crossed: Vec<usize> = (0..4).filter(|&k| ins[k] != ins[(k + 1) % 4]).collect();
            match crossed.len() {
                0 => {}
                2 => connect(e[crossed[0]], e[crossed[1]]),
                4 => {
                    let centre = (c[0] + c[1] + c[2] + c[3]) * T::lit(0.25);
                    // Cut off the corners that are not joined through the centre.
                    let cut_even = ins[0] != inside(centre);
                    if cut_even {
                        connect(e[0], e[3]);
                        connect(e[1], e[2]);
                    } else {
                        connect(e[0], e[1]);
                        connect(e[2], e[3]);
                    }
                }
                _ => unreachable!("a square has an even number of sign changes"),
            }
        }
    }
    if links.is_empty() {
        return Err(Error::NoContour { level: level.to_f64_lossy() });
    }
    if links.values().any(|v| v.len() != 2) {
        return Err(Error::OpenContour { level: level.to_f64_lossy() });
    }

    let mut keys: Vec<usize> = links.keys().copied().collect();
    keys.sort_unstable();
    let mut seen: HashMap<usize, ()> = HashMap::with_capacity(keys.len());
    let mut loops = Vec::new();
    for &start in &keys {
        if seen.contains_key(&start) {
            continue;
        }
        let mut poly = vec![crossing(start)];
        seen.insert(start, ());
        let (mut prev, mut cur) = (start, links[&start][0]);
        while cur != start {
            seen.insert(cur, ());
            poly.push(crossing(cur));
            let next = links[&cur].iter().copied().find(|&n| n != prev).unwrap_or(links[&cur][0]);
            prev = cur;
            cur = next;
        }
        poly.push(poly[0]);
        loops.push(poly);
    }
    Ok(loops)
}

/// The enclosing level curve of largest area.
pub fn extract_contour<T: Scalar>(grid: &Grid<T>, values: &[T], level: T) -> Result<Polyline<T>> {
    let loops = extract_contours(grid, values, level)?;
    let mut best: Option<(T, Polyline<T>)> = None;
    for l in loops {
        let a = contour_area(&l)?;
        if best.as_ref().is_none_or(|(b, _)| a > *b) {
            best = Some((a, l));
        }
    }
    Ok(best.expect("at least one loop").1)
}

/// Sublevel-set bookkeeping for one planar field.
struct Sublevel<'a, T> {
    values: &'a [T],
    violations: &'a [bool],
    nx: usize,
    ny: usize,
    seed: usize,
    marks: Vec<bool>,
    stack: Vec<usize>,
}

impl<'a, T: Scalar> Sublevel<'a, T> {
    fn on_boundary(&self, idx: usize) -> bool {
        let (i, j) = (idx / self.ny, idx % self.ny);
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Flood-fills the component of `{V ≤ ρ}` holding the seed; `false` if it
    /// touches the boundary or a violation.
    fn fill(&mut self, rho: T) -> bool {
        self.marks.iter_mut().for_each(|m| *m = false);
        self.stack.clear();
        if !(self.values[self.seed] <= rho) {
            return false;
        }
        self.marks[self.seed] = true;
        self.stack.push(self.seed);
        while let Some(idx) = self.stack.pop() {
            if self.on_boundary(idx) || self.violations[idx] {
                return false;
            }
            // Interior nodes always have all four neighbours.
            for nb in [idx - self.ny, idx + self.ny, idx - 1, idx + 1] {
                if !self.marks[nb] && self.values[nb] <= rho {
                    self.marks[nb] = true;
                    self.stack.push(nb);
                }
            }
        }
        true
    }
}

fn nearest_node<T: Scalar>(grid: &Grid<T>, p: &[T]) -> Result<usize> {
    let mut idx = 0;
    for (axis, &x) in grid.axes().iter().zip(p) {
        if x < axis[0] || x > axis[axis.len() - 1] {
            return Err(Error::InvalidInput(format!("equilibrium coordinate {x} lies outside the grid")));
        }
        let k = axis
            .iter()
            .enumerate()
            .min_by(|a, b| (*a.1 - x).abs().partial_cmp(&(*b.1 - x).abs()).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(k, _)| k)
            .unwrap_or(0);
        idx = idx * axis.len() + k;
    }
    Ok(idx)
}

fn prepare<'a, T: Scalar>(field: &'a GridField<T>, violations: &'a [bool], equilibrium: &[T]) -> Result<Sublevel<'a, T>> {
    let (nx, ny) = planar_shape(&field.grid, &field.values)?;
    if violations.len() != field.values.len() {
        return Err(Error::Dimension { what: "violation mask", expected: field.values.len(), actual: violations.len() });
    }
    if equilibrium.len() != 2 {
        return Err(Error::Dimension { what: "equilibrium state", expected: 2, actual: equilibrium.len() });
    }
    let seed = nearest_node(&field.grid, equilibrium)?;
    Ok(Sublevel {
        values: &field.values,
        violations,
        nx,
        ny,
        seed,
        marks: vec![false; field.values.len()],
        stack: Vec::new(),
    })
}

fn result_at<T: Scalar>(field: &GridField<T>, sub: &mut Sublevel<'_, T>, equilibrium: &[T], rho: T) -> Result<RoaResult<T>> {
    if !sub.fill(rho) {
        return Err(Error::EmptyRoa(format!("level {rho} is not valid around the equilibrium")));
    }
    // Sublevel pockets outside the seeded component are pushed above ρ.
    let masked: Vec<T> =
        field.values.iter().zip(&sub.marks).map(|(&v, &m)| if m || !(v <= rho) { v } else { T::infinity() }).collect();
    let eq = [equilibrium[0], equilibrium[1]];
    let mut best: Option<(T, Polyline<T>)> = None;
    for l in extract_contours(&field.grid, &masked, rho)? {
        if !point_in_polygon(&l, eq) {
            continue;
        }
        let a = contour_area(&l)?;
        if best.as_ref().is_none_or(|(b, _)| a > *b) {
            best = Some((a, l));
        }
    }
    let (area, contour) = best.ok_or_else(|| Error::EmptyRoa("no level curve encloses the equilibrium".into()))?;
    Ok(RoaResult { level: rho, contour, area, verified: !sub.violations.iter().any(|&v| v) })
}

/// ROA at a fixed level; `EmptyRoa` if that level is not valid.
pub fn roa_at_level<T: Scalar>(field: &GridField<T>, violations: &[bool], equilibrium: &[T], rho: T) -> Result<RoaResult<T>> {
    let mut sub = prepare(field, violations, equilibrium)?;
    result_at(field, &mut sub, equilibrium, rho)
}

/// Largest ρ whose sublevel component around `s*` stays strictly inside the
/// grid and avoids every flagged violation, found by bisection.
pub fn find_roa<T: Scalar>(
    field: &GridField<T>,
    violations: &[bool],
    equilibrium: &[T],
    options: RoaOptions,
) -> Result<RoaResult<T>> {
    let mut sub = prepare(field, violations, equilibrium)?;
    let (seed, ny) = (sub.seed, sub.ny);
    if sub.on_boundary(seed) {
        return Err(Error::EmptyRoa("equilibrium sits on the grid boundary".into()));
    }
    // The smallest useful level reaches at least one neighbour of the seed.
    let lo0 = [seed - ny, seed + ny, seed - 1, seed + 1]
        .iter()
        .map(|&k| field.values[k])
        .fold(T::infinity(), |m, v| if v < m { v } else { m });
    if !lo0.is_finite() || !sub.fill(lo0) {
        return Err(Error::EmptyRoa("violations or the boundary are adjacent to the equilibrium".into()));
    }
    let hi0 = field.values.iter().copied().filter(|v| v.is_finite()).fold(lo0, |m, v| if v > m { v } else { m });
    let (mut lo, mut hi) = (lo0, hi0);
    if sub.fill(hi) {
        lo = hi;
    } else {
        let tol = T::lit(options.rel_tol);
        for _ in 0..options.max_iterations {
            if hi - lo <= tol * hi.abs() {
                break;
            }
            let mid = lo + (hi - lo) * T::lit(0.5);
            if sub.fill(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    result_at(field, &mut sub, equilibrium, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Region;
    use proptest::prelude::*;

    fn field(half: f64, delta: f64, f: impl Fn(f64, f64) -> f64) -> GridField<f64> {
        let grid = Grid::new(&Region::symmetric(2, half).unwrap(), delta).unwrap();
        let values: Vec<f64> = (0..grid.len()).map(|i| {
            let p = grid.point(i);
            f(p[0], p[1])
        }).collect();
        let vdot = vec![-1.0; values.len()];
        GridField { grid, values, vdot }
    }

    fn regular_polygon(n: usize, r: f64) -> Polyline<f64> {
        let mut p: Polyline<f64> = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        p.push(p[0]);
        p
    }

    #[test]
    fn unit_square_area() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        assert_eq!(contour_area(&sq).unwrap(), 1.0);
    }

    #[test]
    fn polygon_area_matches_closed_form() {
        let p = regular_polygon(360, 1.0);
        let exact = 0.5 * 360.0 * (2.0 * std::f64::consts::PI / 360.0).sin();
        let a = contour_area(&p).unwrap();
        assert!((a - exact).abs() < 1e-12);
        assert!((a - std::f64::consts::PI).abs() < 2e-4);
    }

    #[test]
    fn degenerate_and_open_polylines() {
        assert_eq!(contour_area(&[[0.0, 0.0], [1.0, 1.0]]).unwrap(), 0.0);
        let open = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(contour_area(&open).is_err());
    }

    #[test]
    fn circle_contour_stays_within_one_cell() {
        let delta = 0.01;
        let f = field(2.0, delta, |x, y| x * x + y * y);
        let c = extract_contour(&f.grid, &f.values, 1.0).unwrap();
        assert_eq!(c[0], c[c.len() - 1]);
        let dev = c.iter().map(|p| ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev <= delta, "{dev}");
    }

    #[test]
    fn pyramid_contour_is_a_square() {
        let f = field(2.0, 0.05, |x, y| x.abs().max(y.abs()));
        let c = extract_contour(&f.grid, &f.values, 1.0).unwrap();
        for p in &c {
            assert!((p[0].abs().max(p[1].abs()) - 1.0).abs() < 1e-9);
        }
        assert!((contour_area(&c).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn level_below_minimum_has_no_contour() {
        let f = field(1.0, 0.1, |x, y| x * x + y * y + 1.0);
        assert!(matches!(extract_contour(&f.grid, &f.values, 0.5), Err(Error::NoContour { .. })));
    }

    #[test]
    fn level_leaving_the_grid_is_open() {
        let f = field(1.0, 0.1, |x, y| x * x + y * y);
        assert!(matches!(extract_contour(&f.grid, &f.values, 1.5), Err(Error::OpenContour { .. })));
    }

    #[test]
    fn quadratic_roa_fills_the_inscribed_disc() {
        let f = field(4.0, 0.02, |x, y| x * x + y * y);
        let mask = vec![false; f.values.len()];
        let roa = find_roa(&f, &mask, &[0.0, 0.0], RoaOptions::default()).unwrap();
        assert!(roa.verified);
        assert!(roa.level < 16.0 && roa.level > 15.8, "{}", roa.level);
        assert!((roa.area - 16.0 * std::f64::consts::PI).abs() / (16.0 * std::f64::consts::PI) < 5e-3, "{}", roa.area);
        assert!(roa.contour.iter().all(|p| p[0].abs() <= 4.0 && p[1].abs() <= 4.0));
    }

    #[test]
    fn violations_everywhere_give_empty_roa() {
        let f = field(1.0, 0.1, |x, y| x * x + y * y);
        let mut mask = vec![true; f.values.len()];
        mask[f.values.len() / 2] = false;
        assert!(matches!(find_roa(&f, &mask, &[0.0, 0.0], RoaOptions::default()), Err(Error::EmptyRoa(_))));
    }

    #[test]
    fn violation_ring_caps_the_level() {
        let f = field(2.0, 0.02, |x, y| x * x + y * y);
        let mask: Vec<bool> = (0..f.values.len()).map(|i| {
            let p = f.grid.point(i);
            (p[0] - 1.0).abs() < 0.011 && p[1].abs() < 0.011
        }).collect();
        let roa = find_roa(&f, &mask, &[0.0, 0.0], RoaOptions::default()).unwrap();
        assert!(!roa.verified);
        assert!(roa.level < 1.0 && roa.level > 0.97, "{}", roa.level);
        for (i, &bad) in mask.iter().enumerate() {
            if bad {
                let p = f.grid.point(i);
                assert!(!point_in_polygon(&roa.contour, [p[0], p[1]]));
            }
        }
        assert!(point_in_polygon(&roa.contour, [0.0, 0.0]));
    }

    #[test]
    fn satellite_pockets_are_ignored() {
        // A second well at (1.5, 1.5) dips below the chosen level but is disconnected.
        let f = field(2.5, 0.02, |x, y| (x * x + y * y).min(0.05 + (x - 1.5).powi(2) + (y - 1.5).powi(2)));
        let mask = vec![false; f.values.len()];
        let roa = roa_at_level(&f, &mask, &[0.0, 0.0], 0.5).unwrap();
        assert!((roa.area - 0.5 * std::f64::consts::PI).abs() < 0.01, "{}", roa.area);
        assert!(!point_in_polygon(&roa.contour, [1.5, 1.5]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn area_ignores_rotation_and_orientation(n in 3usize..40, shift in 0usize..40, r in 0.1f64..5.0) {
            let p = regular_polygon(n, r);
            let a = contour_area(&p).unwrap();
            let ring = &p[..n];
            let k = shift % n;
            let mut rotated: Polyline<f64> = ring[k..].iter().chain(&ring[..k]).copied().collect();
            rotated.push(rotated[0]);
            let mut reversed = p.clone();
            reversed.reverse();
            prop_assert!((contour_area(&rotated).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
            prop_assert!((contour_area(&reversed).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn area_grows_with_level(a in 0.3f64..2.0, b in 0.3f64..2.0, r1 in 0.05f64..0.9, r2 in 0.05f64..0.9) {
            let f = field(1.5, 0.05, |x, y| a * x * x + b * y * y + 0.3 * x * y);
            let mask = vec![false; f.values.len()];
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            let small = roa_at_level(&f, &mask, &[0.0, 0.0], lo);
            let large = roa_at_level(&f, &mask, &[0.0, 0.0], hi);
            if let (Ok(s), Ok(l)) = (small, large) {
                prop_assert!(s.area <= l.area + 1e-12);
            }
        }
    }
}
