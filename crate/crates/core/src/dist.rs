//! Joint step laws for the pair `(xi, eta)`: exact samplers, analytic
//! Laplace transforms and moments, grid discretisations of the marginal
//! CDFs, and the stationary-overshoot sampler.
//!
//! `xi` drives the nondecreasing walk `S_i = xi_1 + ... + xi_i`; `eta`
//! perturbs each index into the birth time `T_i = S_{i-1} + eta_i`. Both
//! components are strictly positive for every family. The family list covers
//! the hypotheses that appear downstream: a coupled exactly-solvable case
//! (GEM), smooth nonlattice laws, a pure lattice law, a heavy tail with
//! finite mean but infinite variance, and a bounded continuous law.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::GridFunction;
use crate::rng::uniform_open01;

/// Parametric family of the step pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// `(|log W|, |log(1 - W)|)` with `W` uniform on `[0, 1]`; both marginals
    /// are unit exponentials, fully dependent through `W`.
    Gem,
    /// Independent-parameter exponentials.
    ExpExp { rate_xi: f64, rate_eta: f64 },
    /// Two point masses; the only lattice family.
    DetDet { c_xi: f64, c_eta: f64 },
    /// Exponential walk step, deterministic perturbation.
    ExpDet { rate_xi: f64, c_eta: f64 },
    /// Pareto walk step with tail `P{xi > t} = b t^{-r}` for large `t`,
    /// deterministic perturbation. With `r` in `(1, 2)` the mean is finite
    /// but the second moment is not.
    ParetoDet { shape_r: f64, scale_b: f64, c_eta: f64 },
    /// Uniform walk step on `[lo, hi]`, deterministic perturbation.
    UniformDet { lo_xi: f64, hi_xi: f64, c_eta: f64 },
}

/// Dependence structure of one `(xi, eta)` draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    Independent,
    /// Both coordinates from one uniform via their quantile functions.
    Comonotone,
    /// The GEM transform of a single uniform; only valid for [`Family::Gem`].
    GemCoupled,
}

/// Analytic moment summary of a model; optional fields are absent when the
/// corresponding moment is infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `E xi`, finite for every supported family.
    pub m: f64,
    pub ex2: Option<f64>,
    pub ex3: Option<f64>,
    pub eeta: Option<f64>,
    pub eeta2: Option<f64>,
    /// `Var xi`, present exactly when `ex2` is.
    pub s2: Option<f64>,
    pub lattice: bool,
    pub lattice_span: Option<f64>,
}

/// An immutable joint law of `(xi, eta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointStepModel {
    family: Family,
    coupling: Coupling,
}

fn require_positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(name, format!("must be a positive real, got {x}")));
    }
    Ok(())
}

impl JointStepModel {
    pub fn new(family: Family, coupling: Coupling) -> Result<Self> {
        match family {
            Family::Gem => {
                if coupling != Coupling::GemCoupled {
                    return Err(Error::invalid(
                        "coupling",
                        "the GEM family fixes the gem-coupled dependence",
                    ));
                }
            }
            _ => {
                if coupling == Coupling::GemCoupled {
                    return Err(Error::invalid("coupling", "gem-coupled is only valid for GEM"));
                }
            }
        }
        match family {
            Family::Gem => {}
            Family::ExpExp { rate_xi, rate_eta } => {
                require_positive("rate_xi", rate_xi)?;
                require_positive("rate_eta", rate_eta)?;
            }
            Family::DetDet { c_xi, c_eta } => {
                require_positive("c_xi", c_xi)?;
                require_positive("c_eta", c_eta)?;
            }
            Family::ExpDet { rate_xi, c_eta } => {
                require_positive("rate_xi", rate_xi)?;
                require_positive("c_eta", c_eta)?;
            }
            Family::ParetoDet { shape_r, scale_b, c_eta } => {
                require_positive("shape_r", shape_r)?;
                require_positive("scale_b", scale_b)?;
                require_positive("c_eta", c_eta)?;
                if shape_r <= 1.0 {
                    return Err(Error::invalid("shape_r", "need r > 1 so that E xi is finite"));
                }
            }
            Family::UniformDet { lo_xi, hi_xi, c_eta } => {
                if !(lo_xi >= 0.0) || !lo_xi.is_finite() {
                    return Err(Error::invalid("lo_xi", "must be a nonnegative real"));
                }
                require_positive("hi_xi", hi_xi)?;
                require_positive("c_eta", c_eta)?;
                if hi_xi <= lo_xi {
                    return Err(Error::invalid("hi_xi", "need lo_xi < hi_xi"));
                }
            }
        }
        Ok(JointStepModel { family, coupling })
    }

    /// Convenience constructor with the family's natural coupling
    /// (gem-coupled for GEM, independent otherwise).
    pub fn with_default_coupling(family: Family) -> Result<Self> {
        let coupling = match family {
            Family::Gem => Coupling::GemCoupled,
            _ => Coupling::Independent,
        };
        Self::new(family, coupling)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    /// Short stable identifier used in table metadata and manifests.
    pub fn id_string(&self) -> String {
        let fam = match self.family {
            Family::Gem => "gem".to_string(),
            Family::ExpExp { rate_xi, rate_eta } => format!("exp_exp({rate_xi},{rate_eta})"),
            Family::DetDet { c_xi, c_eta } => format!("det_det({c_xi},{c_eta})"),
            Family::ExpDet { rate_xi, c_eta } => format!("exp_det({rate_xi},{c_eta})"),
            Family::ParetoDet { shape_r, scale_b, c_eta } => {
                format!("pareto_det({shape_r},{scale_b},{c_eta})")
            }
            Family::UniformDet { lo_xi, hi_xi, c_eta } => {
                format!("uniform_det({lo_xi},{hi_xi},{c_eta})")
            }
        };
        let cpl = match self.coupling {
            Coupling::Independent => "ind",
            Coupling::Comonotone => "com",
            Coupling::GemCoupled => "gem",
        };
        format!("{fam}/{cpl}")
    }

    fn xi_quantile(&self, w: f64) -> f64 {
        match self.family {
            Family::Gem => -(1.0 - w).ln(),
            Family::ExpExp { rate_xi, .. } | Family::ExpDet { rate_xi, .. } => {
                -(1.0 - w).ln() / rate_xi
            }
            Family::DetDet { c_xi, .. } => c_xi,
            Family::ParetoDet { shape_r, scale_b, .. } => {
                scale_b.powf(1.0 / shape_r) * (1.0 - w).powf(-1.0 / shape_r)
            }
            Family::UniformDet { lo_xi, hi_xi, .. } => lo_xi + (hi_xi - lo_xi) * w,
        }
    }

    fn eta_quantile(&self, w: f64) -> f64 {
        match self.family {
            Family::Gem => -(1.0 - w).ln(),
            Family::ExpExp { rate_eta, .. } => -(1.0 - w).ln() / rate_eta,
            Family::DetDet { c_eta, .. }
            | Family::ExpDet { c_eta, .. }
            | Family::ParetoDet { c_eta, .. }
            | Family::UniformDet { c_eta, .. } => c_eta,
        }
    }

    fn xi_is_random(&self) -> bool {
        !matches!(self.family, Family::DetDet { .. })
    }

    fn eta_is_random(&self) -> bool {
        matches!(self.family, Family::Gem | Family::ExpExp { .. })
    }

    /// One draw of the pair, respecting the declared coupling.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self.coupling {
            Coupling::GemCoupled => gem_pair_from_w(uniform_open01(rng)),
            Coupling::Comonotone => {
                let w = uniform_open01(rng);
                (self.xi_quantile(w), self.eta_quantile(w))
            }
            Coupling::Independent => {
                let xi = if self.xi_is_random() {
                    self.xi_quantile(uniform_open01(rng))
                } else {
                    self.xi_quantile(0.5)
                };
                let eta = if self.eta_is_random() {
                    self.eta_quantile(uniform_open01(rng))
                } else {
                    self.eta_quantile(0.5)
                };
                (xi, eta)
            }
        }
    }

    /// One draw of the walk-step marginal, for ladder-walk reuse.
    pub fn sample_xi(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.xi_is_random() {
            self.xi_quantile(uniform_open01(rng))
        } else {
            self.xi_quantile(0.5)
        }
    }

    /// Exact marginal CDF of `xi`.
    pub fn xi_cdf(&self, x: f64) -> f64 {
        match self.family {
            Family::Gem => exp_cdf(1.0, x),
            Family::ExpExp { rate_xi, .. } | Family::ExpDet { rate_xi, .. } => exp_cdf(rate_xi, x),
            Family::DetDet { c_xi, .. } => det_cdf(c_xi, x),
            Family::ParetoDet { shape_r, scale_b, .. } => {
                let xm = scale_b.powf(1.0 / shape_r);
                if x < xm {
                    0.0
                } else {
                    1.0 - scale_b * x.powf(-shape_r)
                }
            }
            Family::UniformDet { lo_xi, hi_xi, .. } => {
                ((x - lo_xi) / (hi_xi - lo_xi)).clamp(0.0, 1.0)
            }
        }
    }

    /// Exact marginal CDF of `eta`.
    pub fn eta_cdf(&self, x: f64) -> f64 {
        match self.family {
            Family::Gem => exp_cdf(1.0, x),
            Family::ExpExp { rate_eta, .. } => exp_cdf(rate_eta, x),
            Family::DetDet { c_eta, .. }
            | Family::ExpDet { c_eta, .. }
            | Family::ParetoDet { c_eta, .. }
            | Family::UniformDet { c_eta, .. } => det_cdf(c_eta, x),
        }
    }

    /// Analytic moments; optional entries are absent when infinite.
    pub fn moments(&self) -> MomentReport {
        let det_eta = |c: f64| (Some(c), Some(c * c));
        match self.family {
            Family::Gem => MomentReport {
                m: 1.0,
                ex2: Some(2.0),
                ex3: Some(6.0),
                eeta: Some(1.0),
                eeta2: Some(2.0),
                s2: Some(1.0),
                lattice: false,
                lattice_span: None,
            },
            Family::ExpExp { rate_xi, rate_eta } => MomentReport {
                m: 1.0 / rate_xi,
                ex2: Some(2.0 / (rate_xi * rate_xi)),
                ex3: Some(6.0 / (rate_xi * rate_xi * rate_xi)),
                eeta: Some(1.0 / rate_eta),
                eeta2: Some(2.0 / (rate_eta * rate_eta)),
                s2: Some(1.0 / (rate_xi * rate_xi)),
                lattice: false,
                lattice_span: None,
            },
            Family::DetDet { c_xi, c_eta } => {
                let (eeta, eeta2) = det_eta(c_eta);
                MomentReport {
                    m: c_xi,
                    ex2: Some(c_xi * c_xi),
                    ex3: Some(c_xi * c_xi * c_xi),
                    eeta,
                    eeta2,
                    s2: Some(0.0),
                    lattice: true,
                    lattice_span: Some(c_xi),
                }
            }
            Family::ExpDet { rate_xi, c_eta } => {
                let (eeta, eeta2) = det_eta(c_eta);
                MomentReport {
                    m: 1.0 / rate_xi,
                    ex2: Some(2.0 / (rate_xi * rate_xi)),
                    ex3: Some(6.0 / (rate_xi * rate_xi * rate_xi)),
                    eeta,
                    eeta2,
                    s2: Some(1.0 / (rate_xi * rate_xi)),
                    lattice: false,
                    lattice_span: None,
                }
            }
            Family::ParetoDet { shape_r, scale_b, c_eta } => {
                let xm = scale_b.powf(1.0 / shape_r);
                let (eeta, eeta2) = det_eta(c_eta);
                let m = shape_r * xm / (shape_r - 1.0);
                let ex2 = (shape_r > 2.0).then(|| shape_r * xm * xm / (shape_r - 2.0));
                let ex3 = (shape_r > 3.0).then(|| shape_r * xm * xm * xm / (shape_r - 3.0));
                MomentReport {
                    m,
                    ex2,
                    ex3,
                    eeta,
                    eeta2,
                    s2: ex2.map(|e| e - m * m),
                    lattice: false,
                    lattice_span: None,
                }
            }
            Family::UniformDet { lo_xi, hi_xi, c_eta } => {
                let (a, b) = (lo_xi, hi_xi);
                let (eeta, eeta2) = det_eta(c_eta);
                let m = 0.5 * (a + b);
                let ex2 = (a * a + a * b + b * b) / 3.0;
                MomentReport {
                    m,
                    ex2: Some(ex2),
                    ex3: Some((a * a + b * b) * (a + b) / 4.0),
                    eeta,
                    eeta2,
                    s2: Some(ex2 - m * m),
                    lattice: false,
                    lattice_span: None,
                }
            }
        }
    }

    /// Exact Laplace transforms `(E e^{-s xi}, E e^{-s eta})`.
    pub fn laplace(&self, s: f64) -> Result<(f64, f64)> {
        let (lx, le) = self.log_laplace(s)?;
        Ok((lx.exp(), le.exp()))
    }

    /// `(ln E e^{-s xi}, ln E e^{-s eta})`, stable for large `s` where the
    /// linear transforms underflow.
    pub fn log_laplace(&self, s: f64) -> Result<(f64, f64)> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid("s", format!("transform argument must be positive, got {s}")));
        }
        let exp_lt = |rate: f64| rate.ln() - (rate + s).ln();
        let det_lt = |c: f64| -s * c;
        let uni_lt = |a: f64, b: f64| {
            let d = s * (b - a);
            -s * a + (-(-d).exp_m1()).ln() - d.ln()
        };
        let pair = match self.family {
            Family::Gem => (exp_lt(1.0), exp_lt(1.0)),
            Family::ExpExp { rate_xi, rate_eta } => (exp_lt(rate_xi), exp_lt(rate_eta)),
            Family::DetDet { c_xi, c_eta } => (det_lt(c_xi), det_lt(c_eta)),
            Family::ExpDet { rate_xi, c_eta } => (exp_lt(rate_xi), det_lt(c_eta)),
            Family::ParetoDet { shape_r, scale_b, c_eta } => {
                (pareto_log_laplace(shape_r, scale_b, s), det_lt(c_eta))
            }
            Family::UniformDet { lo_xi, hi_xi, c_eta } => (uni_lt(lo_xi, hi_xi), det_lt(c_eta)),
        };
        Ok(pair)
    }

    /// Point masses that must sit on grid nodes.
    fn deterministic_atoms(&self) -> Vec<(&'static str, f64)> {
        match self.family {
            Family::Gem | Family::ExpExp { .. } => vec![],
            Family::DetDet { c_xi, c_eta } => vec![("c_xi", c_xi), ("c_eta", c_eta)],
            Family::ExpDet { c_eta, .. }
            | Family::ParetoDet { c_eta, .. }
            | Family::UniformDet { c_eta, .. } => vec![("c_eta", c_eta)],
        }
    }

    /// Rejects grids whose step does not divide every point mass location.
    ///
    /// Misaligned grids smear jumps to the next node up and silently bias
    /// hand-checkable lattice tables.
    pub fn validate_grid_alignment(&self, h: f64) -> Result<()> {
        require_positive("h", h)?;
        for (name, c) in self.deterministic_atoms() {
            let k = (c / h).round();
            if (c - k * h).abs() > 1e-9 * c.max(1.0) {
                return Err(Error::invalid(
                    name,
                    format!("point mass at {c} does not sit on the grid with step {h}"),
                ));
            }
        }
        Ok(())
    }

    /// Marginal CDFs sampled node-exactly on `[0, t_max]`.
    ///
    /// Values are the exact right-continuous CDFs at the nodes, never cell
    /// averages, so lattice jumps stay sharp. Mass beyond `t_max` stays
    /// visible via [`GridFunction::cdf_tail_mass`].
    pub fn discretize_cdf(&self, h: f64, t_max: f64) -> Result<(GridFunction, GridFunction)> {
        require_positive("h", h)?;
        if !(t_max >= h) || !t_max.is_finite() {
            return Err(Error::invalid("t_max", format!("need t_max >= h, got {t_max}")));
        }
        self.validate_grid_alignment(h)?;
        let n = (t_max / h).round() as usize + 1;
        let f = GridFunction::from_fn(h, 0, n, |t| self.xi_cdf(t))?;
        let g = GridFunction::from_fn(h, 0, n, |t| self.eta_cdf(t))?;
        Ok((f, g))
    }

    /// One draw of the stationary overshoot, density `m^{-1} P{xi > x}`.
    ///
    /// Supported wherever the integrated tail inverts in closed form:
    /// exponential walk steps (GEM, ExpExp, ExpDet), the lattice family and
    /// the uniform family. The Pareto family is rejected.
    pub fn sample_stationary_overshoot(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let w = uniform_open01(rng);
        match self.family {
            Family::Gem => Ok(-(1.0 - w).ln()),
            Family::ExpExp { rate_xi, .. } | Family::ExpDet { rate_xi, .. } => {
                // memorylessness: the integrated exponential tail is again
                // exponential with the same rate
                Ok(-(1.0 - w).ln() / rate_xi)
            }
            Family::DetDet { c_xi, .. } => Ok(w * c_xi),
            Family::UniformDet { lo_xi, hi_xi, .. } => {
                let (a, b) = (lo_xi, hi_xi);
                let m = 0.5 * (a + b);
                let target = w * m;
                if target <= a {
                    Ok(target)
                } else {
                    let d = b - a;
                    Ok(b - (d * d - 2.0 * d * (target - a)).max(0.0).sqrt())
                }
            }
            Family::ParetoDet { .. } => Err(Error::Unsupported(
                "stationary overshoot inverse is not implemented for the Pareto family".into(),
            )),
        }
    }
}

/// The GEM transform of one uniform `w`; exposed for exactness tests.
pub fn gem_pair_from_w(w: f64) -> (f64, f64) {
    (-(w.ln()), -((1.0 - w).ln()))
}

fn exp_cdf(rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-rate * x).exp_m1()
    }
}

fn det_cdf(c: f64, x: f64) -> f64 {
    if x - c >= -1e-9 * c.max(1.0) {
        1.0
    } else {
        0.0
    }
}

/// `ln E e^{-s xi}` for the Pareto step via `int_0^1 exp(-s xm u^{-1/r}) du`,
/// adaptive Simpson to near machine precision (deterministic, never sampled).
/// For `s xm` beyond the underflow range the Watson-lemma leading term
/// `e^{-s xm} r/(s xm)` takes over.
fn pareto_log_laplace(r: f64, b: f64, s: f64) -> f64 {
    let xm = b.powf(1.0 / r);
    if s * xm > 600.0 {
        return -s * xm + (r / (s * xm)).ln();
    }
    let g = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            (-s * xm * u.powf(-1.0 / r)).exp()
        }
    };
    adaptive_simpson(&g, 0.0, 1.0, 1e-13, 48).ln()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, depth)
}
