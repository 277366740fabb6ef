//! The renewal function `U`, the perturbed counting mean `V = U * G`, the
//! generation means `V_j`, and the second-order scalars and bounds that keep
//! the tables honest.
//!
//! The renewal equation `U = 1 + F * U` is solved by forward marching on the
//! grid rather than summing convolution powers of `F`: one `O(n^2)` pass
//! whose truncation behaviour is transparent, exact for lattice laws on
//! aligned grids.

use serde::Serialize;

use crate::dist::{JointStepModel, MomentReport};
use crate::error::{Error, Result};
use crate::gridfn::{convolution_powers, stieltjes_convolve, GridFunction};

/// Tail-mass level above which table construction logs a warning: the
/// convolutions integrate over `[0, t]` only, so dropped mass must be
/// visible.
pub const TAIL_MASS_WARN: f64 = 1e-12;

/// Plateau detector tolerance for the empirical `gamma_0` limit: relative
/// oscillation of `V(t) - t/m` over the last tenth of the grid.
pub const PLATEAU_TOL: f64 = 1e-3;

/// Bundled grids and derived scalars for one model on one grid.
#[derive(Clone, Debug)]
pub struct RenewalTables {
    pub model_id: String,
    pub h: f64,
    pub t_max: f64,
    pub u: GridFunction,
    pub v: GridFunction,
    /// `vj[j - 1]` is the generation mean `V_j`; `vj[0]` equals `v`.
    pub vj: Vec<GridFunction>,
    /// Analytic `E xi`.
    pub m: f64,
    /// First moment of the discretised step law; the grid-consistent drift.
    pub m_grid: f64,
    /// Analytic `E xi^2 / (2 m^2) - E eta / m` when both moments exist.
    pub gamma0: Option<f64>,
    /// Lorden constant `E xi^2 / m^2`.
    pub c0: Option<f64>,
    /// Two-sided bound `max(c0, E eta / m)`.
    pub c_l: Option<f64>,
    pub tail_mass_xi: f64,
    pub tail_mass_eta: f64,
    pub moments: MomentReport,
}

impl RenewalTables {
    /// The generation mean `V_j`, `1 <= j <= jmax`.
    pub fn v_j(&self, j: u32) -> Result<&GridFunction> {
        if j == 0 || j as usize > self.vj.len() {
            return Err(Error::MissingTable { j, jmax: self.vj.len() as u32 });
        }
        Ok(&self.vj[j as usize - 1])
    }

    pub fn jmax(&self) -> u32 {
        self.vj.len() as u32
    }
}

/// Solves `U = 1 + F * U` by forward marching.
///
/// `F` must be a discretised CDF with `F(0) = 0`; a positive mass at zero
/// would make the counting mean explode.
pub fn renewal_function(f: &GridFunction) -> Result<GridFunction> {
    if f.origin() != 0 {
        return Err(Error::invalid("F", "a step CDF starts at the origin"));
    }
    if !f.is_monotone() {
        return Err(Error::invalid("F", "a CDF grid must be nondecreasing"));
    }
    if f.values()[0] != 0.0 {
        return Err(Error::invalid("F", format!("F(0) must be 0, got {}", f.values()[0])));
    }
    if *f.values().last().expect("nonempty") > 1.0 + 1e-12 {
        return Err(Error::invalid("F", "a CDF grid cannot exceed 1"));
    }
    let df = f.increments();
    let nz: Vec<(usize, f64)> = df
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(i, &m)| (i, m))
        .collect();
    let n = df.len();
    let mut u = vec![0.0f64; n];
    u[0] = 1.0;
    if nz.len() <= n / 8 {
        // lattice-style measure: only a few atoms
        for k in 1..n {
            let mut acc = 1.0;
            for &(i, m) in &nz {
                if i > k {
                    break;
                }
                acc += u[k - i] * m;
            }
            u[k] = acc;
        }
    } else {
        // sum_{i=1..k} U[k-i] dF[i] = dot(U[0..k], rev(dF)[.. window])
        let df_rev: Vec<f64> = df.iter().rev().copied().collect();
        for k in 1..n {
            let acc = 1.0 + crate::gridfn::dot(&u[..k], &df_rev[n - 1 - k..n - 1]);
            u[k] = acc;
        }
    }
    GridFunction::new(f.h(), u)
}

/// `V = U * G`, the mean of the perturbed counting process.
pub fn perturbed_counting_mean(u: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    stieltjes_convolve(u, g)
}

/// `[V_1, ..., V_jmax]` with `V_j = V_{j-1} * V`.
pub fn iterate_generations(v: &GridFunction, jmax: u32) -> Result<Vec<GridFunction>> {
    convolution_powers(v, jmax)
}

/// Analytic `gamma_0 = E xi^2 / (2 m^2) - E eta / m`.
pub fn gamma0(report: &MomentReport) -> Result<f64> {
    let ex2 = report.ex2.ok_or(Error::MissingMoment("E xi^2"))?;
    let eeta = report.eeta.ok_or(Error::MissingMoment("E eta"))?;
    Ok(ex2 / (2.0 * report.m * report.m) - eeta / report.m)
}

/// Empirical limit of `V(t) - t/m` with its plateau diagnostic.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PlateauEstimate {
    /// `V(T) - T/m` at the final node.
    pub value: f64,
    /// Max minus min of the residual over the detector window.
    pub oscillation: f64,
    /// Start of the detector window (last tenth of the grid).
    pub window_start: f64,
}

/// `V(T) - T/m` at the final node, guarded by a plateau detector.
///
/// `m` must be the drift the grid actually realises (`RenewalTables::m_grid`
/// for tabulated models); against any other slope the residual drifts
/// linearly and the detector fires. Lattice laws oscillate forever and are
/// reported as not converged.
pub fn gamma0_empirical(v: &GridFunction, m: f64) -> Result<PlateauEstimate> {
    if !(m > 0.0) {
        return Err(Error::invalid("m", "mean must be positive"));
    }
    let n = v.len();
    let window = (n / 10).max(2).min(n);
    let start = n - window;
    let residual =
        |k: usize| v.values()[k] - (v.origin() + k as i64) as f64 * v.h() / m;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in start..n {
        let r = residual(k);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let value = residual(n - 1);
    let oscillation = hi - lo;
    let estimate = PlateauEstimate {
        value,
        oscillation,
        window_start: (v.origin() + start as i64) as f64 * v.h(),
    };
    if oscillation > PLATEAU_TOL * value.abs().max(1.0) {
        return Err(Error::NotConverged(format!(
            "V(t) - t/m oscillates by {oscillation:.3e} over the last window (value {value:.3e})"
        )));
    }
    Ok(estimate)
}

/// Node-by-node verification of the uniform bounds.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct BoundReport {
    /// Min over nodes of `c0 - (U(t) - t/m)`; negative means violated.
    pub lorden_min_slack: f64,
    pub lorden_violations: usize,
    /// Min over nodes of `cL - |V(t) - t/m|`.
    pub v_band_min_slack: f64,
    pub v_band_violations: usize,
    /// Min over a lattice of pairs of `U(y) - (V(x+y) - V(x))`.
    pub subadditivity_min_slack: f64,
    pub subadditivity_violations: usize,
}

const SLACK_EPS: f64 = 1e-9;

/// Checks Lorden's bound, the two-sided counting-mean band and the
/// subadditive increment bound on the tabulated grids.
///
/// Violations are data, not errors; callers decide what to do with them.
pub fn check_bounds(tables: &RenewalTables) -> Result<BoundReport> {
    let c0 = tables.c0.ok_or(Error::MissingMoment("E xi^2"))?;
    let c_l = tables.c_l.ok_or(Error::MissingMoment("E eta"))?;
    let m = tables.m;
    let h = tables.h;
    let u = tables.u.values();
    let v = tables.v.values();
    let n = u.len();

    let mut report = BoundReport {
        lorden_min_slack: f64::INFINITY,
        v_band_min_slack: f64::INFINITY,
        subadditivity_min_slack: f64::INFINITY,
        ..Default::default()
    };
    for k in 0..n {
        let t = k as f64 * h;
        let s_l = c0 - (u[k] - t / m);
        if s_l < report.lorden_min_slack {
            report.lorden_min_slack = s_l;
        }
        if s_l < -SLACK_EPS {
            report.lorden_violations += 1;
        }
        let s_v = c_l - (v[k] - t / m).abs();
        if s_v < report.v_band_min_slack {
            report.v_band_min_slack = s_v;
        }
        if s_v < -SLACK_EPS {
            report.v_band_violations += 1;
        }
    }
    // subadditivity V(x+y) - V(x) <= U(y) on a coarse lattice of pairs
    let step = (n / 64).max(1);
    for kx in (0..n).step_by(step) {
        for ky in (0..n).step_by(step) {
            if kx + ky >= n {
                break;
            }
            let s = u[ky] - (v[kx + ky] - v[kx]);
            if s < report.subadditivity_min_slack {
                report.subadditivity_min_slack = s;
            }
            if s < -SLACK_EPS {
                report.subadditivity_violations += 1;
            }
        }
    }
    Ok(report)
}

/// Builds the full table bundle for a model: grids `U`, `V`, `V_1..V_jmax`
/// plus analytic and grid-consistent scalars.
pub fn build_tables(
    model: &JointStepModel,
    h: f64,
    t_max: f64,
    jmax: u32,
) -> Result<RenewalTables> {
    let (f, g) = model.discretize_cdf(h, t_max)?;
    let tail_mass_xi = f.cdf_tail_mass();
    let tail_mass_eta = g.cdf_tail_mass();
    if tail_mass_xi > TAIL_MASS_WARN || tail_mass_eta > TAIL_MASS_WARN {
        log::warn!(
            "model {}: CDF tail mass beyond T={t_max} is {:.3e} (xi) / {:.3e} (eta); \
             convolutions truncate it",
            model.id_string(),
            tail_mass_xi,
            tail_mass_eta
        );
    }
    let m_grid: f64 = f
        .increments()
        .iter()
        .enumerate()
        .map(|(i, &dm)| i as f64 * h * dm)
        .sum();
    let u = renewal_function(&f)?;
    let v = perturbed_counting_mean(&u, &g)?;
    let vj = iterate_generations(&v, jmax)?;
    let moments = model.moments();
    let c0 = moments.ex2.map(|e| e / (moments.m * moments.m));
    let c_l = match (c0, moments.eeta) {
        (Some(c0), Some(eeta)) => Some(c0.max(eeta / moments.m)),
        _ => None,
    };
    let g0 = gamma0(&moments).ok();
    debug_assert_eq!(u.values()[0], 1.0);
    debug_assert_eq!(v.values()[0], 0.0);
    Ok(RenewalTables {
        model_id: model.id_string(),
        h,
        t_max,
        u,
        v,
        vj,
        m: moments.m,
        m_grid,
        gamma0: g0,
        c0,
        c_l,
        tail_mass_xi,
        tail_mass_eta,
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{Coupling, Family};
    use crate::gridfn::convolve_dri;
    use crate::rng::{StreamKey, StreamRole};
    use approx::assert_relative_eq;

    fn gem() -> JointStepModel {
        JointStepModel::with_default_coupling(Family::Gem).unwrap()
    }

    fn exp_exp() -> JointStepModel {
        JointStepModel::with_default_coupling(Family::ExpExp { rate_xi: 1.0, rate_eta: 1.0 })
            .unwrap()
    }

    fn det_det(c_xi: f64, c_eta: f64) -> JointStepModel {
        JointStepModel::with_default_coupling(Family::DetDet { c_xi, c_eta }).unwrap()
    }

    #[test]
    fn poisson_renewal_function_is_one_plus_t() {
        let (f, _) = exp_exp().discretize_cdf(1e-3, 2.2).unwrap();
        let u = renewal_function(&f).unwrap();
        assert_eq!(u.values()[0], 1.0);
        let got = u.value_at(2.0).unwrap();
        assert!((got - 3.0).abs() <= 5e-3, "U(2) = {got}");
    }

    #[test]
    fn lattice_renewal_function_counts_points() {
        let (f, _) = det_det(1.0, 1.0).discretize_cdf(0.25, 3.0).unwrap();
        let u = renewal_function(&f).unwrap();
        // S_i = i, so U(2.5) counts i = 0, 1, 2
        assert_eq!(u.value_at(2.5).unwrap(), 3.0);
        assert_eq!(u.value_at(0.75).unwrap(), 1.0);
    }

    #[test]
    fn renewal_function_rejects_mass_at_zero() {
        let f = GridFunction::new(0.1, vec![0.2, 0.4, 1.0]).unwrap();
        assert!(renewal_function(&f).is_err());
    }

    #[test]
    fn gem_counting_mean_is_nearly_linear() {
        let t = build_tables(&gem(), 1e-2, 3.5, 1).unwrap();
        let got = t.v.value_at(3.0).unwrap();
        assert_relative_eq!(got, 3.0, max_relative = 0.01);
    }

    #[test]
    fn shifted_lattice_counting_mean_is_exact() {
        // points T_i = (i - 1) + 0.5, so V(2.7) counts 0.5, 1.5, 2.5
        let t = build_tables(&det_det(1.0, 0.5), 0.1, 3.0, 1).unwrap();
        assert_eq!(t.v.value_at(2.7).unwrap(), 3.0);
    }

    #[test]
    fn counting_mean_never_exceeds_renewal_function() {
        for model in [gem(), exp_exp(), det_det(1.0, 0.5)] {
            let t = build_tables(&model, 0.05, 30.0, 1).unwrap();
            for (a, b) in t.v.values().iter().zip(t.u.values()) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn generation_iteration_boundary_cases() {
        let t = build_tables(&gem(), 2e-3, 4.2, 2).unwrap();
        // one generation reduces to V itself
        assert_eq!(t.vj[0], t.v);
        // V_j(0) = 0 for all j
        assert_eq!(t.vj[1].values()[0], 0.0);
        let got = t.vj[1].value_at(4.0).unwrap();
        assert_relative_eq!(got, 8.0, max_relative = 0.01);
    }

    #[test]
    fn gamma0_closed_forms() {
        assert_eq!(gamma0(&gem().moments()).unwrap(), 0.0);
        let exp_det = JointStepModel::with_default_coupling(Family::ExpDet {
            rate_xi: 1.0,
            c_eta: 0.5,
        })
        .unwrap();
        assert_relative_eq!(gamma0(&exp_det.moments()).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(gamma0(&det_det(1.0, 1.0).moments()).unwrap(), -0.5, max_relative = 1e-14);
        let pareto = JointStepModel::with_default_coupling(Family::ParetoDet {
            shape_r: 1.5,
            scale_b: 1.0,
            c_eta: 1.0,
        })
        .unwrap();
        assert!(matches!(gamma0(&pareto.moments()), Err(Error::MissingMoment(_))));
    }

    #[test]
    fn empirical_gamma0_vanishes_for_gem() {
        let t = build_tables(&gem(), 1e-3, 30.0, 1).unwrap();
        let est = gamma0_empirical(&t.v, t.m_grid).unwrap();
        assert!(est.value.abs() <= 1e-3, "value = {}", est.value);
    }

    #[test]
    fn empirical_gamma0_matches_analytic_for_exp_det() {
        let model = JointStepModel::with_default_coupling(Family::ExpDet {
            rate_xi: 1.0,
            c_eta: 0.5,
        })
        .unwrap();
        let t = build_tables(&model, 5e-3, 100.0, 1).unwrap();
        let est = gamma0_empirical(&t.v, t.m_grid).unwrap();
        assert!((est.value - 0.5).abs() <= 1e-2, "value = {}", est.value);
    }

    #[test]
    fn empirical_gamma0_rejects_lattice_sawtooth() {
        let t = build_tables(&det_det(1.0, 1.0), 0.25, 30.0, 1).unwrap();
        assert!(matches!(gamma0_empirical(&t.v, t.m_grid), Err(Error::NotConverged(_))));
    }

    #[test]
    fn bounds_hold_on_the_grid() {
        for model in [exp_exp(), gem()] {
            let t = build_tables(&model, 2e-2, 60.0, 1).unwrap();
            let report = check_bounds(&t).unwrap();
            assert_eq!(report.lorden_violations, 0, "{report:?}");
            assert_eq!(report.v_band_violations, 0, "{report:?}");
            assert_eq!(report.subadditivity_violations, 0, "{report:?}");
            assert!(report.lorden_min_slack >= 0.0);
        }
    }

    #[test]
    fn stationary_overshoot_identity() {
        // E U(t - S0*) = t/m with the closed-form renewal functions as
        // oracles: U(x) = 1 + x for the unit Poisson walk, 1 + floor(x) for
        // the unit lattice walk.
        let t = 50.0;
        let n = 100_000;
        let mut rng = StreamKey::root(21).role(StreamRole::Overshoot).rng();
        let model = exp_exp();
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let s = model.sample_stationary_overshoot(&mut rng).unwrap();
            let u = if t - s < 0.0 { 0.0 } else { 1.0 + (t - s) };
            sum += u;
            sum2 += u * u;
        }
        let mean = sum / n as f64;
        let sd = (sum2 / n as f64 - mean * mean).sqrt();
        let band = 3.0 * sd / (n as f64).sqrt();
        assert!((mean - t).abs() <= band, "mean = {mean}, band = {band}");

        let model = det_det(1.0, 0.5);
        for _ in 0..1000 {
            let s = model.sample_stationary_overshoot(&mut rng).unwrap();
            let u = 1.0 + (t - s).floor();
            assert_eq!(u, 50.0);
        }
    }

    #[test]
    fn key_renewal_limit_for_v() {
        // triangle on [0, 1] with unit peak: integral 1/2; the windowed sum
        // against dV approaches (1/m) * 1/2
        let t = build_tables(&exp_exp(), 1e-2, 60.0, 1).unwrap();
        let tri = GridFunction::from_fn(1e-2, 0, 101, |x| (1.0 - (x - 0.5).abs() * 2.0).max(0.0))
            .unwrap();
        let got = convolve_dri(&tri, &t.v, 50.0).unwrap();
        assert_relative_eq!(got, 0.5, max_relative = 0.01);
    }

    #[test]
    fn dri_sum_respects_uniform_bound() {
        // sup_x int f(x-y) dV(y) <= max(f) U(L) for f supported on [0, L]
        let t = build_tables(&exp_exp(), 1e-2, 40.0, 1).unwrap();
        let tri = GridFunction::from_fn(1e-2, 0, 101, |x| (1.0 - (x - 0.5).abs() * 2.0).max(0.0))
            .unwrap();
        let bound = t.u.value_at(1.0).unwrap();
        for k in (0..t.v.len()).step_by(37) {
            let x = k as f64 * 1e-2;
            let got = convolve_dri(&tri, &t.v, x).unwrap();
            assert!(got <= bound + 1e-9, "x = {x}: {got} > {bound}");
        }
    }
}
