//! Scalar loss functions ρ, their derivatives ψ, IRLS weights ψ(x)/x and
//! curvatures ρ″ for the Welsch loss and the comparator families.
//!
//! Every family satisfies ρ(0) = 0. Where a derivative jumps (Huber and Hampel
//! corners, the pinball and absolute kinks at zero) the value returned at the
//! kink is the average of the two one-sided values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Loss family without its tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Welsch,
    Huber,
    Tukey,
    Hampel,
    Pinball,
    Absolute,
    Squared,
}

impl LossFamily {
    pub const ALL: [LossFamily; 7] = [
        LossFamily::Welsch,
        LossFamily::Huber,
        LossFamily::Tukey,
        LossFamily::Hampel,
        LossFamily::Pinball,
        LossFamily::Absolute,
        LossFamily::Squared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Welsch => "welsch",
            LossFamily::Huber => "huber",
            LossFamily::Tukey => "tukey",
            LossFamily::Hampel => "hampel",
            LossFamily::Pinball => "pinball",
            LossFamily::Absolute => "absolute",
            LossFamily::Squared => "squared",
        }
    }
}

impl std::fmt::Display for LossFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown loss family `{s}`")))
    }
}

/// A loss family together with its tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec<T> {
    /// ρ(x) = (1 − exp(−τx²/2))/τ
    Welsch {
        tau: T,
    },
    Huber {
        gamma: T,
    },
    /// Tukey biweight with cutoff `c`.
    Tukey {
        c: T,
    },
    /// Hampel three-part redescender with corners `a ≤ b ≤ r`.
    Hampel {
        a: T,
        b: T,
        r: T,
    },
    /// Check loss ρ_q(u) = u(q − 1{u<0}).
    Pinball {
        q: T,
    },
    Absolute,
    /// ρ(x) = x²/2
    Squared,
}

impl<T: Scalar> LossSpec<T> {
    pub const DEFAULT_HUBER_GAMMA: f64 = 1.0;
    pub const DEFAULT_TUKEY_C: f64 = 4.685;
    pub const DEFAULT_HAMPEL: (f64, f64, f64) = (2.0, 4.0, 8.0);

    pub fn welsch(tau: T) -> Result<Self> {
        Self::Welsch { tau }.validated()
    }

    pub fn huber(gamma: T) -> Result<Self> {
        Self::Huber { gamma }.validated()
    }

    pub fn tukey(c: T) -> Result<Self> {
        Self::Tukey { c }.validated()
    }

    pub fn hampel(a: T, b: T, r: T) -> Result<Self> {
        Self::Hampel { a, b, r }.validated()
    }

    pub fn pinball(q: T) -> Result<Self> {
        Self::Pinball { q }.validated()
    }

    /// Family with default constants (Welsch defaults to τ = 1).
    pub fn default_for(family: LossFamily) -> Self {
        let (ha, hb, hr) = Self::DEFAULT_HAMPEL;
        match family {
            LossFamily::Welsch => Self::Welsch { tau: T::one() },
            LossFamily::Huber => Self::Huber { gamma: T::lit(Self::DEFAULT_HUBER_GAMMA) },
            LossFamily::Tukey => Self::Tukey { c: T::lit(Self::DEFAULT_TUKEY_C) },
            LossFamily::Hampel => Self::Hampel { a: T::lit(ha), b: T::lit(hb), r: T::lit(hr) },
            LossFamily::Pinball => Self::Pinball { q: T::lit(0.5) },
            LossFamily::Absolute => Self::Absolute,
            LossFamily::Squared => Self::Squared,
        }
    }

    pub fn family(&self) -> LossFamily {
        match self {
            Self::Welsch { .. } => LossFamily::Welsch,
            Self::Huber { .. } => LossFamily::Huber,
            Self::Tukey { .. } => LossFamily::Tukey,
            Self::Hampel { .. } => LossFamily::Hampel,
            Self::Pinball { .. } => LossFamily::Pinball,
            Self::Absolute => LossFamily::Absolute,
            Self::Squared => LossFamily::Squared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be a positive finite number, got {v}")))
            }
        };
        match *self {
            Self::Welsch { tau } => positive("welsch.tau", tau),
            Self::Huber { gamma } => positive("huber.gamma", gamma),
            Self::Tukey { c } => positive("tukey.c", c),
            Self::Hampel { a, b, r } => {
                positive("hampel.a", a)?;
                positive("hampel.b", b)?;
                positive("hampel.r", r)?;
                if a <= b && b <= r {
                    Ok(())
                } else {
                    Err(Error::config(format!("hampel corners must satisfy a <= b <= r, got ({a}, {b}, {r})")))
                }
            }
            Self::Pinball { q } => {
                if q > T::zero() && q < T::one() {
                    Ok(())
                } else {
                    Err(Error::config(format!("pinball.q must lie in (0, 1), got {q}")))
                }
            }
            Self::Absolute | Self::Squared => Ok(()),
        }
    }

    fn validated(self) -> Result<Self> {
        self.validate().map(|_| self)
    }

    /// Losses with a continuous ψ, minimized with the quasi-Newton optimizer.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::Pinball { .. } | Self::Absolute)
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            Self::Pinball { q } => q == T::lit(0.5),
            _ => true,
        }
    }

    /// ψ → 0 as |x| → ∞.
    pub fn is_redescending(&self) -> bool {
        matches!(self, Self::Welsch { .. } | Self::Tukey { .. } | Self::Hampel { .. })
    }

    /// The single tuning constant the cross-validation grid varies.
    ///
    /// Hampel corners are scaled jointly, so its tuning value is the multiplier
    /// relative to the current `a`.
    pub fn tuning(&self) -> Option<T> {
        match *self {
            Self::Welsch { tau } => Some(tau),
            Self::Huber { gamma } => Some(gamma),
            Self::Tukey { c } => Some(c),
            Self::Hampel { a, .. } => Some(a),
            Self::Pinball { q } => Some(q),
            Self::Absolute | Self::Squared => None,
        }
    }

    /// Copy with the tuning constant replaced (Hampel: corners rescaled so `a = v`).
    pub fn with_tuning(&self, v: T) -> Result<Self> {
        let spec = match *self {
            Self::Welsch { .. } => Self::Welsch { tau: v },
            Self::Huber { .. } => Self::Huber { gamma: v },
            Self::Tukey { .. } => Self::Tukey { c: v },
            Self::Hampel { a, b, r } => {
                let k = v / a;
                Self::Hampel { a: v, b: b * k, r: r * k }
            }
            Self::Pinball { .. } => Self::Pinball { q: v },
            Self::Absolute | Self::Squared => {
                return Err(Error::config(format!("{} has no tuning constant", self.family())))
            }
        };
        spec.validated()
    }

    /// ρ(x)
    pub fn rho(&self, x: T) -> Result<T> {
        check_finite(x)?;
        Ok(self.rho_unchecked(x))
    }

    /// ψ(x) = ρ′(x)
    pub fn psi(&self, x: T) -> Result<T> {
        check_finite(x)?;
        Ok(self.psi_unchecked(x))
    }

    /// IRLS weight ψ(x)/x, continuously extended by 1 at x = 0.
    ///
    /// Bounded by 1 for the Welsch, Huber, Tukey, Hampel and squared losses.
    /// The absolute and pinball weights grow like 1/|x| near zero.
    pub fn weight(&self, x: T) -> Result<T> {
        check_finite(x)?;
        Ok(self.weight_unchecked(x))
    }

    /// ρ″(x)
    pub fn curvature(&self, x: T) -> Result<T> {
        check_finite(x)?;
        Ok(self.curvature_unchecked(x))
    }

    pub(crate) fn rho_unchecked(&self, x: T) -> T {
        let half = T::lit(0.5);
        let ax = x.abs();
        match *self {
            Self::Welsch { tau } => -(-tau * x * x * half).exp_m1() / tau,
            Self::Huber { gamma } => {
                if ax <= gamma {
                    half * x * x
                } else {
                    gamma * ax - half * gamma * gamma
                }
            }
            Self::Tukey { c } => {
                let plateau = c * c / T::lit(6.0);
                if ax <= c {
                    let u2 = (x / c) * (x / c);
                    let v = T::one() - u2;
                    plateau * (T::one() - v * v * v)
                } else {
                    plateau
                }
            }
            Self::Hampel { a, b, r } => {
                let at_b = a * b - half * a * a;
                if ax <= a {
                    half * x * x
                } else if ax <= b {
                    a * ax - half * a * a
                } else if ax <= r && r > b {
                    let v = (r - ax) / (r - b);
                    at_b + half * a * (r - b) * (T::one() - v * v)
                } else {
                    at_b + half * a * (r - b)
                }
            }
            Self::Pinball { q } => {
                if x < T::zero() {
                    x * (q - T::one())
                } else {
                    x * q
                }
            }
            Self::Absolute => ax,
            Self::Squared => half * x * x,
        }
    }

    pub(crate) fn psi_unchecked(&self, x: T) -> T {
        let ax = x.abs();
        let sign = if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        match *self {
            Self::Welsch { tau } => x * (-tau * x * x * T::lit(0.5)).exp(),
            Self::Huber { gamma } => x.max(-gamma).min(gamma),
            Self::Tukey { c } => {
                if ax <= c {
                    let v = T::one() - (x / c) * (x / c);
                    x * v * v
                } else {
                    T::zero()
                }
            }
            Self::Hampel { a, b, r } => {
                if ax <= a {
                    x
                } else if ax <= b {
                    a * sign
                } else if ax <= r && r > b {
                    a * sign * (r - ax) / (r - b)
                } else {
                    T::zero()
                }
            }
            Self::Pinball { q } => {
                if x > T::zero() {
                    q
                } else if x < T::zero() {
                    q - T::one()
                } else {
                    q - T::lit(0.5)
                }
            }
            Self::Absolute => sign,
            Self::Squared => x,
        }
    }

    pub(crate) fn weight_unchecked(&self, x: T) -> T {
        if x == T::zero() {
            return T::one();
        }
        match *self {
            Self::Welsch { tau } => (-tau * x * x * T::lit(0.5)).exp(),
            Self::Huber { gamma } => (gamma / x.abs()).min(T::one()),
            Self::Tukey { c } => {
                if x.abs() <= c {
                    let v = T::one() - (x / c) * (x / c);
                    v * v
                } else {
                    T::zero()
                }
            }
            Self::Squared => T::one(),
            _ => self.psi_unchecked(x) / x,
        }
    }

    pub(crate) fn curvature_unchecked(&self, x: T) -> T {
        let ax = x.abs();
        let half = T::lit(0.5);
        match *self {
            Self::Welsch { tau } => {
                let tx2 = tau * x * x;
                (-tx2 * half).exp() * (T::one() - tx2)
            }
            Self::Huber { gamma } => {
                if ax < gamma {
                    T::one()
                } else if ax == gamma {
                    half
                } else {
                    T::zero()
                }
            }
            Self::Tukey { c } => {
                if ax <= c {
                    let u2 = (x / c) * (x / c);
                    (T::one() - u2) * (T::one() - T::lit(5.0) * u2)
                } else {
                    T::zero()
                }
            }
            Self::Hampel { a, b, r } => {
                let slope = if r > b { -a / (r - b) } else { T::zero() };
                if ax < a {
                    T::one()
                } else if ax == a {
                    // a == b collapses the flat segment
                    if a == b {
                        (T::one() + slope) * half
                    } else {
                        half
                    }
                } else if ax < b {
                    T::zero()
                } else if ax == b {
                    slope * half
                } else if ax < r {
                    slope
                } else if ax == r {
                    slope * half
                } else {
                    T::zero()
                }
            }
            Self::Pinball { .. } | Self::Absolute => T::zero(),
            Self::Squared => T::one(),
        }
    }
}

#[inline]
fn check_finite<T: Scalar>(x: T) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("loss evaluated at non-finite argument {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn all_specs() -> Vec<LossSpec<f64>> {
        vec![
            LossSpec::welsch(1.0).unwrap(),
            LossSpec::welsch(0.05).unwrap(),
            LossSpec::huber(1.0).unwrap(),
            LossSpec::tukey(4.685).unwrap(),
            LossSpec::hampel(2.0, 4.0, 8.0).unwrap(),
            LossSpec::pinball(0.3).unwrap(),
            LossSpec::Absolute,
            LossSpec::Squared,
        ]
    }

    fn kinks(spec: &LossSpec<f64>) -> Vec<f64> {
        match *spec {
            LossSpec::Huber { gamma } => vec![gamma],
            LossSpec::Tukey { c } => vec![c],
            LossSpec::Hampel { a, b, r } => vec![a, b, r],
            LossSpec::Pinball { .. } | LossSpec::Absolute => vec![0.0],
            _ => vec![],
        }
    }

    #[test]
    fn welsch_values() {
        let w = LossSpec::welsch(1.0).unwrap();
        assert_eq!(w.rho(0.0).unwrap(), 0.0);
        assert!(close(w.rho(1.0).unwrap(), 0.393_469_340_287_366_6, 1e-15));
        assert!(close(w.psi(2.0).unwrap(), 0.270_670_566_473_225_4, 1e-15));
        assert_eq!(w.curvature(0.0).unwrap(), 1.0);
        assert_eq!(w.curvature(1.0).unwrap(), 0.0);
        let w2 = LossSpec::welsch(2.0).unwrap();
        // e^{-4}(1 - 8)
        assert!(close(w2.curvature(2.0).unwrap(), -0.128_209_472_221_139_26, 1e-14));
        let w05 = LossSpec::welsch(0.5).unwrap();
        assert!(close(w05.weight(2.0).unwrap(), 0.367_879_441_171_442_3, 1e-15));
        assert!(close(w05.rho(1e3).unwrap(), 2.0, 1e-15));
        assert!(w05.rho(6.0).unwrap() < 2.0);
    }

    #[test]
    fn huber_matches_figure_branch() {
        let h = LossSpec::huber(1.0).unwrap();
        assert_eq!(h.rho(2.0).unwrap(), 1.5);
        assert_eq!(h.rho(-2.0).unwrap(), 1.5);
        assert_eq!(h.rho(0.5).unwrap(), 0.125);
        assert_eq!(h.curvature(1.0).unwrap(), 0.5);
    }

    #[test]
    fn weight_at_zero_is_one() {
        for spec in all_specs() {
            assert_eq!(spec.weight(0.0).unwrap(), 1.0, "{spec:?}");
            assert_eq!(spec.rho(0.0).unwrap(), 0.0, "{spec:?}");
        }
    }

    #[test]
    fn kink_values_are_one_sided_averages() {
        let p = LossSpec::pinball(0.3).unwrap();
        assert!(close(p.psi(0.0).unwrap(), -0.2, 1e-15));
        assert_eq!(LossSpec::<f64>::Absolute.psi(0.0).unwrap(), 0.0);
        let h = LossSpec::hampel(2.0, 4.0, 8.0).unwrap();
        assert_eq!(h.curvature(2.0).unwrap(), 0.5);
        assert_eq!(h.curvature(4.0).unwrap(), -0.25);
        assert_eq!(h.curvature(8.0).unwrap(), -0.25);
        assert_eq!(h.psi(8.0).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_argument_is_domain_error() {
        let w = LossSpec::welsch(1.0).unwrap();
        assert!(matches!(w.rho(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(w.psi(f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(w.weight(f64::NEG_INFINITY), Err(Error::Domain(_))));
        assert!(matches!(w.curvature(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_constants_rejected() {
        assert!(LossSpec::welsch(0.0).is_err());
        assert!(LossSpec::huber(-1.0).is_err());
        assert!(LossSpec::hampel(3.0, 2.0, 8.0).is_err());
        assert!(LossSpec::pinball(1.0).is_err());
        assert!(LossSpec::pinball(0.0).is_err());
        assert!(LossSpec::tukey(f64::NAN).is_err());
    }

    #[test]
    fn welsch_psi_matches_finite_difference_at_twenty_points() {
        let mut x = -7.3_f64;
        for tau in [0.01, 0.3, 1.0, 4.0] {
            let w = LossSpec::welsch(tau).unwrap();
            for _ in 0..20 {
                x = (x * 1.618_033 + 2.71).rem_euclid(12.0) - 6.0;
                let h = 1e-5 * x.abs().max(1.0);
                let fd = (w.rho(x + h).unwrap() - w.rho(x - h).unwrap()) / (2.0 * h);
                let psi = w.psi(x).unwrap();
                assert!((psi - fd).abs() <= 1e-7 * psi.abs().max(1e-3), "tau={tau} x={x}");
            }
        }
    }

    #[test]
    fn redescending_limits() {
        for spec in all_specs() {
            let far = spec.psi(1e4).unwrap().abs();
            if spec.is_redescending() {
                assert!(far < 1e-12, "{spec:?}");
            } else if spec.family() != LossFamily::Squared {
                assert!(far > 0.1 && far <= 1.0 + 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn tuning_roundtrip() {
        let h = LossSpec::hampel(2.0, 4.0, 8.0).unwrap();
        assert_eq!(h.with_tuning(1.0).unwrap(), LossSpec::Hampel { a: 1.0, b: 2.0, r: 4.0 });
        assert!(LossSpec::<f64>::Squared.with_tuning(1.0).is_err());
        assert_eq!("Tukey".parse::<LossFamily>().unwrap(), LossFamily::Tukey);
    }

    #[test]
    fn generic_over_f32() {
        let w = LossSpec::<f32>::welsch(1.0).unwrap();
        assert!((w.rho(1.0).unwrap() - 0.393_469_34).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn symmetric_families_are_even_and_odd(x in -50.0_f64..50.0) {
            for spec in all_specs().into_iter().filter(|s| s.is_symmetric()) {
                prop_assert_eq!(spec.rho(x).unwrap(), spec.rho(-x).unwrap());
                prop_assert_eq!(spec.psi(x).unwrap(), -spec.psi(-x).unwrap());
            }
        }

        #[test]
        fn welsch_bounded_and_monotone(x in 0.0_f64..30.0, dx in 0.0_f64..5.0, tau in 0.01_f64..5.0) {
            let w = LossSpec::welsch(tau).unwrap();
            let r = w.rho(x).unwrap();
            prop_assert!(r >= 0.0 && r <= 1.0 / tau);
            if tau * x * x < 60.0 {
                prop_assert!(r < 1.0 / tau);
            }
            prop_assert!(w.rho(x + dx).unwrap() >= r);
            if dx > 1e-6 {
                prop_assert!(w.weight(x + dx).unwrap() < w.weight(x).unwrap() || w.weight(x).unwrap() == 0.0);
            }
        }

        #[test]
        fn weight_times_x_is_psi(x in -20.0_f64..20.0) {
            let w = LossSpec::welsch(1.0).unwrap();
            let lhs = w.weight(x).unwrap() * x;
            let rhs = w.psi(x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn welsch_curvature_sign(x in -10.0_f64..10.0, tau in 0.01_f64..5.0) {
            let w = LossSpec::welsch(tau).unwrap();
            let c = w.curvature(x).unwrap();
            if tau * x * x > 1.0 + 1e-9 { prop_assert!(c < 0.0 || c == 0.0 && tau * x * x > 700.0); }
            if tau * x * x < 1.0 - 1e-9 { prop_assert!(c > 0.0); }
        }

        #[test]
        fn derivatives_match_finite_differences(x in -12.0_f64..12.0) {
            for spec in all_specs() {
                let h = 1e-6 * x.abs().max(1.0);
                if kinks(&spec).iter().any(|k| (x.abs() - k).abs() < 1e-3) {
                    continue;
                }
                let fd_psi = (spec.rho(x + h).unwrap() - spec.rho(x - h).unwrap()) / (2.0 * h);
                let psi = spec.psi(x).unwrap();
                prop_assert!((psi - fd_psi).abs() <= 1e-6 * psi.abs().max(1.0), "{:?} psi at {}", spec, x);
                let fd_curv = (spec.psi(x + h).unwrap() - spec.psi(x - h).unwrap()) / (2.0 * h);
                let curv = spec.curvature(x).unwrap();
                prop_assert!((curv - fd_curv).abs() <= 1e-6 * curv.abs().max(1.0), "{:?} curvature at {}", spec, x);
            }
        }
    }
}
