//! Sequential domain reduction: panning/zooming contraction of the region of
//! interest around the incumbent, with scheduled updates and trimming.
//!
//! Per coordinate, with scaled step `d = 2 (x_k - x_{k-1}) / r_{k-1}`:
//!
//! ```text
//! c     = d * d_prev
//! c_hat = sgn(c) sqrt(|c|)
//! gamma = 1/2 [gamma_p (1 + c_hat) + gamma_o (1 - c_hat)]
//! lambda = eta + |d| (gamma - eta)          (clamped to [0.3, 1.5])
//! r_new = lambda * r                         (floored at t)
//! ```
//!
//! then the box recenters at the incumbent and is trimmed back into the
//! initial region.

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;

/// Contraction parameters. Defaults follow the reference setting
/// `gamma_o = 0.7, gamma_p = 1.0, eta = 0.9, t = 0.5, xi = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrParams {
    /// Oscillation shrink factor, in (0, 1].
    pub gamma_o: f64,
    /// Pan factor, near 1.
    pub gamma_p: f64,
    /// Zoom parameter, in (0, 1).
    pub eta: f64,
    /// Minimum side length; shrinking freezes per coordinate at this width.
    pub t: f64,
    /// Update period: updates fire when the iteration counter is a multiple.
    pub xi: usize,
}

impl Default for SdrParams {
    fn default() -> Self {
        Self {
            gamma_o: 0.7,
            gamma_p: 1.0,
            eta: 0.9,
            t: 0.5,
            xi: 1,
        }
    }
}

impl SdrParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma_o > 0.0 && self.gamma_o <= 1.0) {
            return Err(format!("gamma_o must be in (0,1], got {}", self.gamma_o));
        }
        if self.gamma_p <= 0.0 {
            return Err(format!("gamma_p must be positive, got {}", self.gamma_p));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(format!("eta must be in (0,1), got {}", self.eta));
        }
        if self.t <= 0.0 {
            return Err(format!("t must be positive, got {}", self.t));
        }
        if self.xi == 0 {
            return Err("xi must be at least 1".into());
        }
        Ok(())
    }
}

/// `lambda` is clamped here to keep a runaway incumbent jump (`|d| > 1`) from
/// exploding or collapsing the region.
const LAMBDA_MIN: f64 = 0.3;
const LAMBDA_MAX: f64 = 1.5;

/// Region-of-interest state: current box, previous incumbent and scaled step,
/// the initial region, and the iteration counter driving the schedule.
#[derive(Debug, Clone)]
pub struct SdrState {
    boxd: BoxDomain,
    r: Vec<f64>,
    x_prev: Vec<f64>,
    d_prev: Vec<f64>,
    r0: BoxDomain,
    params: SdrParams,
    /// Iteration counter advanced by the owning optimization loop.
    pub k: usize,
}

impl SdrState {
    /// Centers the box at `x0` (clipped into `bounds`) with sides taken from
    /// `bounds`, then trims back into `bounds`.
    pub fn init(x0: &[f64], bounds: &BoxDomain, params: SdrParams) -> Self {
        params.validate().expect("invalid SDR parameters");
        let x0 = bounds.clip(x0);
        let sides = bounds.sides();
        let raw = centered_box(&x0, &sides);
        let boxd = trim(&raw, bounds, params.t);
        let r = boxd.sides();
        Self {
            boxd,
            r,
            x_prev: x0,
            d_prev: vec![0.0; bounds.dim()],
            r0: bounds.clone(),
            params,
            k: 0,
        }
    }

    pub fn region(&self) -> &BoxDomain {
        &self.boxd
    }

    pub fn initial_region(&self) -> &BoxDomain {
        &self.r0
    }

    pub fn params(&self) -> &SdrParams {
        &self.params
    }

    pub fn sides(&self) -> &[f64] {
        &self.r
    }

    /// True iff the counter is a multiple of `xi` and no side has fallen
    /// below the minimum size `t`.
    pub fn should_update(&self) -> bool {
        self.k % self.params.xi == 0 && self.r.iter().all(|&s| s >= self.params.t)
    }

    /// One pan/zoom update re-centered at the incumbent `x_k`.
    pub fn update(&mut self, x_k: &[f64]) {
        assert_eq!(x_k.len(), self.r0.dim());
        let p = &self.params;
        let dim = self.r0.dim();
        let mut d = vec![0.0; dim];
        let mut r_new = vec![0.0; dim];
        for i in 0..dim {
            d[i] = 2.0 * (x_k[i] - self.x_prev[i]) / self.r[i];
            let c = d[i] * self.d_prev[i];
            let c_hat = c.signum() * c.abs().sqrt();
            let gamma = 0.5 * (p.gamma_p * (1.0 + c_hat) + p.gamma_o * (1.0 - c_hat));
            let lambda = (p.eta + d[i].abs() * (gamma - p.eta)).clamp(LAMBDA_MIN, LAMBDA_MAX);
            r_new[i] = (lambda * self.r[i]).max(p.t);
        }
        let raw = centered_box(x_k, &r_new);
        self.boxd = trim(&raw, &self.r0, p.t);
        self.r = self.boxd.sides();
        self.x_prev = x_k.to_vec();
        self.d_prev = d;
    }
}

fn centered_box(center: &[f64], sides: &[f64]) -> Vec<(f64, f64)> {
    center
        .iter()
        .zip(sides)
        .map(|(&c, &s)| (c - 0.5 * s, c + 0.5 * s))
        .collect()
}

/// Intersects `boxd` with `r0`, keeping every side at least `t` wide (or the
/// full width of `r0` where `r0` itself is narrower). A coordinate with an
/// empty intersection snaps to the nearest `r0` face with width `t`.
pub fn trim(boxd: &[(f64, f64)], r0: &BoxDomain, t: f64) -> BoxDomain {
    let mut lo = Vec::with_capacity(boxd.len());
    let mut hi = Vec::with_capacity(boxd.len());
    for (i, &(a, b)) in boxd.iter().enumerate() {
        let (r0_lo, r0_hi) = (r0.lo()[i], r0.hi()[i]);
        let width_min = t.min(r0_hi - r0_lo);
        let (mut l, mut h) = (a.max(r0_lo), b.min(r0_hi));
        if l > h {
            // Empty intersection: snap to the nearest face.
            if a > r0_hi {
                l = r0_hi - width_min;
                h = r0_hi;
            } else {
                l = r0_lo;
                h = r0_lo + width_min;
            }
        } else if h - l < width_min {
            // Widen inward from whichever face was clipped.
            if b > r0_hi {
                l = r0_hi - width_min;
                h = r0_hi;
            } else if a < r0_lo {
                l = r0_lo;
                h = r0_lo + width_min;
            } else {
                // Proposed box itself is narrower than t; keep it centered.
                let c = 0.5 * (l + h);
                l = (c - 0.5 * width_min).max(r0_lo);
                h = l + width_min;
                if h > r0_hi {
                    h = r0_hi;
                    l = h - width_min;
                }
            }
        }
        lo.push(l);
        hi.push(h);
    }
    BoxDomain::new(lo, hi).expect("trimmed box is non-degenerate")
}

/// Convenience wrapper matching the per-coordinate trim of a full box pair.
pub fn sdr_trim(boxd: &BoxDomain, r0: &BoxDomain, t: f64) -> BoxDomain {
    let pairs: Vec<(f64, f64)> = boxd
        .lo()
        .iter()
        .zip(boxd.hi())
        .map(|(&a, &b)| (a, b))
        .collect();
    trim(&pairs, r0, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> SdrParams {
        SdrParams::default()
    }

    #[test]
    fn init_centered_inside_keeps_full_bounds() {
        let bounds = BoxDomain::symmetric(1, 5.0);
        let s = SdrState::init(&[0.0], &bounds, params());
        assert_eq!(s.region(), &bounds);
        assert_abs_diff_eq!(s.sides()[0], 10.0, epsilon = 1e-15);
    }

    #[test]
    fn init_off_center_is_trimmed() {
        let bounds = BoxDomain::symmetric(1, 5.0);
        let s = SdrState::init(&[2.5], &bounds, params());
        assert_abs_diff_eq!(s.region().lo()[0], -2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.region().hi()[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn init_clips_an_outside_start() {
        let bounds = BoxDomain::symmetric(2, 1.0);
        let s = SdrState::init(&[3.0, 0.0], &bounds, params());
        assert!(bounds.contains(&s.region().center()));
    }

    #[test]
    fn coordinates_update_independently() {
        let bounds = BoxDomain::new(vec![-5.0, 0.0], vec![5.0, 20.0]).unwrap();
        let mut s = SdrState::init(&[0.0, 10.0], &bounds, params());
        s.update(&[0.0, 10.0]);
        // Stationary incumbent: both sides shrink by eta.
        assert_abs_diff_eq!(s.sides()[0], 10.0 * 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sides()[1], 20.0 * 0.9, epsilon = 1e-12);
    }

    #[test]
    fn stationary_incumbent_shrinks_by_eta_exactly() {
        let bounds = BoxDomain::symmetric(1, 5.0);
        let mut s = SdrState::init(&[0.0], &bounds, params());
        s.update(&[0.0]);
        assert_abs_diff_eq!(s.sides()[0], 9.0, epsilon = 1e-15);
    }

    #[test]
    fn stationary_decay_is_geometric_until_the_floor() {
        let bounds = BoxDomain::symmetric(1, 5.0);
        let mut s = SdrState::init(&[0.0], &bounds, params());
        let r0 = 10.0;
        let eta: f64 = 0.9;
        for m in 1..=20 {
            s.update(&[0.0]);
            let expected = (eta.powi(m) * r0).max(0.5);
            assert!(
                (s.sides()[0] - expected).abs() < 1e-12,
                "after {m} updates: {} vs {expected}",
                s.sides()[0]
            );
        }
    }

    /// A state shrunk by `m` stationary updates so that subsequent moves stay
    /// clear of the trim against the initial region.
    fn shrunk_state(half: f64, m: usize) -> SdrState {
        let bounds = BoxDomain::new(vec![-half], vec![half]).unwrap();
        let mut s = SdrState::init(&[0.0], &bounds, params());
        for _ in 0..m {
            s.update(&[0.0]);
        }
        s
    }

    #[test]
    fn sustained_full_step_with_unit_pan_keeps_size() {
        // d = d_prev = 1 gives c_hat = 1, gamma = gamma_p = 1, lambda = 1.
        let mut s = shrunk_state(1000.0, 15);
        let r = s.sides()[0];
        // First step establishes d_prev = 1.
        s.update(&[r / 2.0]);
        let r1 = s.sides()[0];
        let c1 = s.region().center()[0];
        // Second step with d = 1 again: pure pan, no shrink.
        s.update(&[c1 + r1 / 2.0]);
        assert_abs_diff_eq!(s.sides()[0], r1, epsilon = 1e-9);
    }

    #[test]
    fn oscillation_gives_strongest_shrink() {
        // d = 1 then d = -1: c_hat = -1, gamma = gamma_o, lambda = gamma_o.
        let p = params();
        let mut s = shrunk_state(1000.0, 8);
        let r = s.sides()[0];
        s.update(&[r / 2.0]); // d = +1
        let r1 = s.sides()[0];
        let c1 = s.region().center()[0];
        s.update(&[c1 - r1 / 2.0]); // d = -1
        assert_abs_diff_eq!(s.sides()[0], p.gamma_o * r1, epsilon = 1e-9);
    }

    #[test]
    fn first_update_with_zero_history_uses_midpoint_gamma() {
        // d_prev = 0 means c_hat = 0, gamma = (gamma_p + gamma_o)/2.
        let p = params();
        let mut s = shrunk_state(1000.0, 5);
        let r = s.sides()[0];
        s.update(&[r / 4.0]); // d = 1/2
        let gamma = 0.5 * (p.gamma_p + p.gamma_o);
        let lambda = p.eta + 0.5 * (gamma - p.eta);
        assert_abs_diff_eq!(s.sides()[0], lambda * r, epsilon = 1e-9);
    }

    #[test]
    fn schedule_gates_on_xi_and_minimum_size() {
        let bounds = BoxDomain::symmetric(1, 5.0);
        let mut s = SdrState::init(&[0.0], &bounds, SdrParams { xi: 50, ..params() });
        s.k = 49;
        assert!(!s.should_update());
        s.k = 50;
        assert!(s.should_update());

        // xi = 1 fires on every counter value while sides exceed t.
        let mut every = SdrState::init(&[0.0], &bounds, params());
        for k in 0..5 {
            every.k = k;
            assert!(every.should_update());
        }

        // A region starting below t is frozen.
        let narrow = BoxDomain::new(vec![0.0], vec![0.3]).unwrap();
        let frozen = SdrState::init(&[0.1], &narrow, params());
        assert!(!frozen.should_update());
    }

    #[test]
    fn sides_never_drop_below_t_and_stay_inside_r0() {
        let bounds = BoxDomain::symmetric(2, 5.0);
        let mut s = SdrState::init(&[4.0, -4.0], &bounds, params());
        let mut flip = 1.0;
        for k in 0..200 {
            s.k = k;
            let c = s.region().center();
            let target = [
                (c[0] + flip * 0.45 * s.sides()[0]).clamp(-5.0, 5.0),
                (c[1] - flip * 0.45 * s.sides()[1]).clamp(-5.0, 5.0),
            ];
            if s.should_update() {
                s.update(&target);
            }
            flip = -flip;
            for i in 0..2 {
                assert!(s.sides()[i] >= 0.5 - 1e-12, "side {i} fell to {}", s.sides()[i]);
                assert!(s.region().lo()[i] >= -5.0 - 1e-12);
                assert!(s.region().hi()[i] <= 5.0 + 1e-12);
            }
        }
    }

    #[test]
    fn trim_cases_match_hand_computation() {
        let r0 = BoxDomain::new(vec![-5.0], vec![5.0]).unwrap();
        // Inside: unchanged.
        let t = sdr_trim(&BoxDomain::new(vec![-1.0], vec![1.0]).unwrap(), &r0, 0.5);
        assert_eq!(t.lo()[0], -1.0);
        assert_eq!(t.hi()[0], 1.0);
        // Partial overlap: plain intersection.
        let t = sdr_trim(&BoxDomain::new(vec![4.0], vec![8.0]).unwrap(), &r0, 0.5);
        assert_eq!(t.lo()[0], 4.0);
        assert_eq!(t.hi()[0], 5.0);
        // Empty intersection: snap to the nearest face with width t.
        let t = sdr_trim(&BoxDomain::new(vec![6.0], vec![8.0]).unwrap(), &r0, 0.5);
        assert_abs_diff_eq!(t.lo()[0], 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.hi()[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_stays_in_the_documented_range_for_unit_steps() {
        // With the defaults and |d| <= 1, lambda lies in [gamma_o, gamma_p].
        let p = params();
        for d in [-1.0, -0.5, 0.0, 0.5, 1.0_f64] {
            for d_prev in [-1.0, 0.0, 1.0_f64] {
                let c = d * d_prev;
                let c_hat = c.signum() * c.abs().sqrt();
                let gamma = 0.5 * (p.gamma_p * (1.0 + c_hat) + p.gamma_o * (1.0 - c_hat));
                let lambda = p.eta + d.abs() * (gamma - p.eta);
                assert!((0.7..=1.0).contains(&lambda), "lambda {lambda} out of range");
            }
        }
    }
}
