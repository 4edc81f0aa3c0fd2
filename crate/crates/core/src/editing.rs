//! Pixel editing functions.
//!
//! The base functions are tone curves on `[0, 1]`: a log brightening curve,
//! a quadratic darkening curve and a logistic contrast curve, plus identity.
//! Non-negative combinations of them are the editing functions whose
//! descriptor kernels decompose into base kernels. The style filters at the
//! bottom are analytic stand-ins for photo-app effects, used only to build
//! style-mixed datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{Image, Plane};

/// Base of the logarithm in the brightening curve `g1`.
///
/// Natural log maps `[0,1]` onto roughly `[0, 0.913]`. Use
/// [`g1_log_with_base`] to evaluate the curve under another base.
pub const G1_LOG_BASE: f64 = std::f64::consts::E;

const SIGMOID_GAIN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFunction {
    Identity,
    G1Log,
    G2Square,
    G3Sigmoid,
}

/// Identity first, then the three tone curves. Index `i` of an
/// [`EditingCombo`] weights `DEFAULT_BASIS[i]`.
pub const DEFAULT_BASIS: [BaseFunction; 4] = [
    BaseFunction::Identity,
    BaseFunction::G1Log,
    BaseFunction::G2Square,
    BaseFunction::G3Sigmoid,
];

/// `0.3 * (log_b(2x + 0.1) + |log_b(0.1)|)`.
pub fn g1_log_with_base(x: f64, base: f64) -> f64 {
    0.3 * ((2.0 * x + 0.1).log(base) + 0.1f64.log(base).abs())
}

impl BaseFunction {
    pub fn name(self) -> &'static str {
        match self {
            BaseFunction::Identity => "identity",
            BaseFunction::G1Log => "g1_log",
            BaseFunction::G2Square => "g2_square",
            BaseFunction::G3Sigmoid => "g3_sigmoid",
        }
    }

    /// Evaluates the curve without a domain check.
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BaseFunction::Identity => x,
            BaseFunction::G1Log => 0.3 * ((2.0 * x + 0.1).ln() + 0.1f64.ln().abs()),
            BaseFunction::G2Square => 0.8 * x * x,
            BaseFunction::G3Sigmoid => 1.0 / (1.0 + (-SIGMOID_GAIN * (x - 0.5)).exp()),
        }
    }

    pub fn apply(self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("{} evaluated at {x}", self.name())));
        }
        Ok(self.eval(x))
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            BaseFunction::Identity => 1.0,
            BaseFunction::G1Log => 0.6 / (2.0 * x + 0.1),
            BaseFunction::G2Square => 1.6 * x,
            BaseFunction::G3Sigmoid => {
                let s = self.eval(x);
                SIGMOID_GAIN * s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for BaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DEFAULT_BASIS
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown base function {s:?}")))
    }
}

/// Applies a base function pixel-wise to a grayscale image.
pub fn apply_base_image(f: BaseFunction, img: &Image) -> Result<Image> {
    if !img.is_gray() {
        return Err(Error::Shape("base functions apply to grayscale images".into()));
    }
    let data = img.data().iter().map(|&v| f.apply(v)).collect::<Result<Vec<_>>>()?;
    Image::gray(img.width(), img.height(), data)
}

/// Non-negative weights over [`DEFAULT_BASIS`] (or any basis of equal length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditingCombo {
    weights: Vec<f64>,
}

impl EditingCombo {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("editing combo needs at least one weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Parameter(format!("combo weight {w} must be finite and >= 0")));
        }
        Ok(Self { weights })
    }

    /// Unit weight on basis element `i`.
    pub fn basis_vector(len: usize, i: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[i] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when at least one weight is positive.
    pub fn is_usable(&self) -> bool {
        self.weights.iter().any(|&w| w > 0.0)
    }

    pub fn eval(&self, basis: &[BaseFunction], x: f64) -> f64 {
        self.weights
            .iter()
            .zip(basis)
            .map(|(&a, f)| a * f.eval(x))
            .sum()
    }
}

/// `sum_i a_i g_i(u)` pixel-wise over [`DEFAULT_BASIS`]. Not clamped.
pub fn apply_combo(combo: &EditingCombo, img: &Image) -> Result<Plane> {
    if combo.len() != DEFAULT_BASIS.len() {
        return Err(Error::Shape(format!(
            "combo has {} weights, basis has {}",
            combo.len(),
            DEFAULT_BASIS.len()
        )));
    }
    let plane = img.to_plane()?;
    Ok(plane.map(|u| combo.eval(&DEFAULT_BASIS, u)))
}

// ---------------------------------------------------------------------------
// Style filters

/// Deterministic tone filters used to synthesize picture styles.
#[derive(Debug, Clone, PartialEq)]
pub enum StyleFilter {
    Identity,
    /// `u^gamma`.
    Gamma(f64),
    /// Logistic curve with gain `k` centred at `c`, rescaled so 0 -> 0 and 1 -> 1.
    SCurve { k: f64, c: f64 },
    /// S-curve followed by the radial vignette `1 - beta * r^2`.
    LomoLike { k: f64, c: f64, beta: f64 },
    /// Per-channel additive shift (R, G, B), clamped.
    ToneShift([f64; 3]),
    /// Linear gain `c * u`, clamped. Useful as a control in drift studies.
    Scale(f64),
}

impl StyleFilter {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite")))
            }
        };
        match *self {
            StyleFilter::Identity => Ok(()),
            StyleFilter::Gamma(g) => {
                finite(g, "gamma")?;
                if g <= 0.0 {
                    return Err(Error::Parameter(format!("gamma must be > 0, got {g}")));
                }
                Ok(())
            }
            StyleFilter::SCurve { k, c } => {
                finite(k, "k")?;
                finite(c, "c")?;
                if k <= 0.0 {
                    return Err(Error::Parameter(format!("s-curve gain must be > 0, got {k}")));
                }
                Ok(())
            }
            StyleFilter::LomoLike { k, c, beta } => {
                StyleFilter::SCurve { k, c }.validate()?;
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::Parameter(format!("vignette beta {beta} not in [0,1]")));
                }
                Ok(())
            }
            StyleFilter::ToneShift(s) => s.iter().try_for_each(|&v| finite(v, "shift")),
            StyleFilter::Scale(c) => {
                finite(c, "scale")?;
                if c <= 0.0 {
                    return Err(Error::Parameter(format!("scale must be > 0, got {c}")));
                }
                Ok(())
            }
        }
    }
}

fn rescaled_logistic(u: f64, k: f64, c: f64) -> f64 {
    let s = |x: f64| 1.0 / (1.0 + (-k * (x - c)).exp());
    let (lo, hi) = (s(0.0), s(1.0));
    (s(u) - lo) / (hi - lo)
}

/// Applies a style filter to a gray or RGB image. Output is clamped to `[0,1]`.
pub fn apply_style(style: &StyleFilter, img: &Image) -> Result<Image> {
    style.validate()?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let out = match *style {
        StyleFilter::Identity => img.clone(),
        StyleFilter::Gamma(g) => img.map_clamped(|u| u.powf(g)),
        StyleFilter::SCurve { k, c } => img.map_clamped(|u| rescaled_logistic(u, k, c)),
        StyleFilter::Scale(c) => img.map_clamped(|u| c * u),
        StyleFilter::LomoLike { k, c, beta } => {
            let cx = (w as f64 - 1.0) / 2.0;
            let cy = (h as f64 - 1.0) / 2.0;
            let r2_norm = cx * cx + cy * cy;
            let mut data = Vec::with_capacity(img.data().len());
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let vignette = 1.0 - beta * (dx * dx + dy * dy) / r2_norm;
                    for c_i in 0..ch {
                        let v = rescaled_logistic(img.get(x, y, c_i), k, c) * vignette;
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            Image::new(w, h, ch, data)?
        }
        StyleFilter::ToneShift(shift) => {
            if ch == 1 {
                // gray images receive the luma of the shift vector
                let s = 0.299 * shift[0] + 0.587 * shift[1] + 0.114 * shift[2];
                img.map_clamped(|u| u + s)
            } else {
                let data = img
                    .data()
                    .chunks_exact(3)
                    .flat_map(|p| (0..3).map(move |i| (p[i] + shift[i]).clamp(0.0, 1.0)))
                    .collect();
                Image::new(w, h, ch, data)?
            }
        }
    };
    Ok(out)
}

impl fmt::Display for StyleFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StyleFilter::Identity => write!(f, "identity"),
            StyleFilter::Gamma(g) => write!(f, "gamma:{g}"),
            StyleFilter::SCurve { k, c } => write!(f, "scurve:{k},{c}"),
            StyleFilter::LomoLike { k, c, beta } => write!(f, "lomo_like:{k},{c},{beta}"),
            StyleFilter::ToneShift([r, g, b]) => write!(f, "tone_shift:{r},{g},{b}"),
            StyleFilter::Scale(c) => write!(f, "scale:{c}"),
        }
    }
}

/// Parses `name[:p1,p2,...]`. Missing trailing parameters take defaults:
/// `scurve:8,0.5`, `lomo_like:8,0.5,0.35`, `tone_shift:0.06,0.02,-0.06`.
impl FromStr for StyleFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let params: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parameter(format!("bad filter parameter {p:?} in {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        let arg = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let max_params = |n: usize| {
            if params.len() > n {
                Err(Error::Parameter(format!("too many parameters in {s:?}")))
            } else {
                Ok(())
            }
        };
        let filter = match name {
            "identity" | "original" => {
                max_params(0)?;
                StyleFilter::Identity
            }
            "gamma" => {
                if params.len() != 1 {
                    return Err(Error::Parameter(format!("gamma takes one parameter: {s:?}")));
                }
                StyleFilter::Gamma(params[0])
            }
            "scurve" => {
                max_params(2)?;
                StyleFilter::SCurve {
                    k: arg(0, 8.0),
                    c: arg(1, 0.5),
                }
            }
            "lomo_like" => {
                max_params(3)?;
                StyleFilter::LomoLike {
                    k: arg(0, 8.0),
                    c: arg(1, 0.5),
                    beta: arg(2, 0.35),
                }
            }
            "tone_shift" => {
                max_params(3)?;
                StyleFilter::ToneShift([arg(0, 0.06), arg(1, 0.02), arg(2, -0.06)])
            }
            "scale" => {
                if params.len() != 1 {
                    return Err(Error::Parameter(format!("scale takes one parameter: {s:?}")));
                }
                StyleFilter::Scale(params[0])
            }
            other => return Err(Error::Parameter(format!("unknown style filter {other:?}"))),
        };
        filter.validate()?;
        Ok(filter)
    }
}

impl Serialize for StyleFilter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StyleFilter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn base_function_values() {
        assert_eq!(BaseFunction::G3Sigmoid.apply(0.5).unwrap(), 0.5);
        assert!((BaseFunction::G2Square.apply(1.0).unwrap() - 0.8).abs() < 1e-15);
        assert!(BaseFunction::G1Log.apply(0.0).unwrap().abs() < 1e-15);
        // 2x + 0.1 = 1 at x = 0.45, leaving 0.3 * ln 10
        let expected = 0.690_775_527_898_213_7;
        assert!((BaseFunction::G1Log.apply(0.45).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        for f in DEFAULT_BASIS {
            assert!(matches!(f.apply(-0.01), Err(Error::Domain(_))));
            assert!(matches!(f.apply(1.01), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn ranges_and_monotonicity() {
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        for f in DEFAULT_BASIS {
            let mut prev = f.eval(0.0);
            for &x in &grid {
                let v = f.eval(x);
                assert!(v >= prev, "{f} not monotone at {x}");
                assert!((0.0..=1.05).contains(&v), "{f}({x}) = {v}");
                assert!(f.derivative(x) >= 0.0);
                prev = v;
            }
        }
        assert!((BaseFunction::G1Log.eval(1.0) - 0.9134).abs() < 1e-3);
        // base 10 would squash the brightening curve
        assert!(g1_log_with_base(1.0, 10.0) < 0.41);
        assert!((g1_log_with_base(0.3, G1_LOG_BASE) - BaseFunction::G1Log.eval(0.3)).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for f in DEFAULT_BASIS {
            for i in 1..100 {
                let x = i as f64 / 100.0;
                let h = 1e-6;
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                assert!((fd - f.derivative(x)).abs() < 1e-6, "{f} at {x}");
            }
        }
    }

    fn ramp() -> Image {
        Image::from_fn(9, 3, |x, _| x as f64 / 8.0).unwrap()
    }

    #[test]
    fn base_image_application() {
        let img = ramp();
        assert_eq!(apply_base_image(BaseFunction::Identity, &img).unwrap(), img);
        let half = Image::gray(3, 3, vec![0.5; 9]).unwrap();
        let sq = apply_base_image(BaseFunction::G2Square, &half).unwrap();
        assert!(sq.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let sig = apply_base_image(BaseFunction::G3Sigmoid, &img).unwrap();
        for x in 1..9 {
            assert!(sig.get(x, 1, 0) > sig.get(x - 1, 1, 0));
        }
    }

    #[test]
    fn combo_application() {
        let img = ramp();
        let id = apply_combo(&EditingCombo::basis_vector(4, 0), &img).unwrap();
        assert_eq!(id.data, img.data());

        let half = Image::gray(3, 3, vec![0.5; 9]).unwrap();
        let all = apply_combo(&EditingCombo::new(vec![0.25; 4]).unwrap(), &half).unwrap();
        // g1(0.5) = 0.3 (ln 1.1 + ln 10), evaluated independently
        let g1_half = 0.3 * (1.1f64.ln() + 10f64.ln());
        let expected = 0.25 * (0.5 + g1_half + 0.2 + 0.5);
        assert!(all.data.iter().all(|&v| (v - expected).abs() < 1e-14));

        let sel = apply_combo(&EditingCombo::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap(), &img).unwrap();
        let g2 = apply_base_image(BaseFunction::G2Square, &img).unwrap();
        assert_eq!(sel.data, g2.data());
    }

    #[test]
    fn combo_validation() {
        assert!(EditingCombo::new(vec![1.0, -0.1]).is_err());
        assert!(EditingCombo::new(vec![]).is_err());
        assert!(!EditingCombo::new(vec![0.0; 4]).unwrap().is_usable());
        assert!(apply_combo(&EditingCombo::new(vec![1.0]).unwrap(), &ramp()).is_err());
    }

    #[test]
    fn style_examples() {
        let img = ramp();
        assert_eq!(apply_style(&StyleFilter::Gamma(1.0), &img).unwrap(), img);
        let half = Image::gray(3, 3, vec![0.5; 9]).unwrap();
        let g2 = apply_style(&StyleFilter::Gamma(2.0), &half).unwrap();
        assert!(g2.data().iter().all(|&v| v == 0.25));

        // odd size so a pixel sits exactly at the centre
        let img = Image::gray(5, 5, vec![0.7; 25]).unwrap();
        let lomo = StyleFilter::LomoLike { k: 8.0, c: 0.5, beta: 0.5 };
        let out = apply_style(&lomo, &img).unwrap();
        let curve_only = apply_style(&StyleFilter::SCurve { k: 8.0, c: 0.5 }, &img).unwrap();
        assert_eq!(out.get(2, 2, 0), curve_only.get(2, 2, 0));
        // corners take the full vignette
        assert!((out.get(0, 0, 0) - 0.5 * curve_only.get(0, 0, 0)).abs() < 1e-12);
    }

    #[test]
    fn scurve_endpoints() {
        let img = Image::gray(3, 3, vec![0.0, 1.0, 0.5, 0.0, 1.0, 0.5, 0.0, 1.0, 0.5]).unwrap();
        let out = apply_style(&StyleFilter::SCurve { k: 6.0, c: 0.4 }, &img).unwrap();
        assert!(out.get(0, 0, 0).abs() < 1e-12);
        assert!((out.get(1, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tone_shift_rgb_and_gray() {
        let img = Image::new(3, 3, 3, [0.5, 0.5, 0.98].repeat(9)).unwrap();
        let out = apply_style(&StyleFilter::ToneShift([0.1, 0.0, 0.1]), &img).unwrap();
        assert!((out.get(0, 0, 0) - 0.6).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 2), 1.0);
        let gray = Image::gray(3, 3, vec![0.5; 9]).unwrap();
        let out = apply_style(&StyleFilter::ToneShift([0.1, 0.1, 0.1]), &gray).unwrap();
        assert!((out.get(0, 0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn style_parameter_errors() {
        let img = ramp();
        assert!(apply_style(&StyleFilter::Gamma(0.0), &img).is_err());
        assert!(apply_style(&StyleFilter::Gamma(-1.0), &img).is_err());
        let bad = StyleFilter::LomoLike { k: 8.0, c: 0.5, beta: 1.5 };
        assert!(matches!(apply_style(&bad, &img), Err(Error::Parameter(_))));
    }

    #[test]
    fn style_parsing() {
        assert_eq!("gamma:0.5".parse::<StyleFilter>().unwrap(), StyleFilter::Gamma(0.5));
        assert_eq!(
            "lomo_like:8,0.5,0.35".parse::<StyleFilter>().unwrap(),
            StyleFilter::LomoLike { k: 8.0, c: 0.5, beta: 0.35 }
        );
        assert_eq!(
            "scurve".parse::<StyleFilter>().unwrap(),
            StyleFilter::SCurve { k: 8.0, c: 0.5 }
        );
        assert_eq!("identity".parse::<StyleFilter>().unwrap(), StyleFilter::Identity);
        for bad in ["gamma", "gamma:x", "blur:3", "gamma:-2", "lomo_like:8,0.5,2", "identity:1"] {
            assert!(bad.parse::<StyleFilter>().is_err(), "{bad}");
        }
        let f: StyleFilter = "tone_shift:0.1,0,-0.1".parse().unwrap();
        assert_eq!(f.to_string().parse::<StyleFilter>().unwrap(), f);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<StyleFilter>(&json).unwrap(), f);
    }

    proptest! {
        #[test]
        fn combo_linearity(
            a in proptest::collection::vec(0.0f64..3.0, 4),
            b in proptest::collection::vec(0.0f64..3.0, 4),
            px in proptest::collection::vec(0.0f64..=1.0, 16),
        ) {
            let img = Image::gray(4, 4, px).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let pa = apply_combo(&EditingCombo::new(a).unwrap(), &img).unwrap();
            let pb = apply_combo(&EditingCombo::new(b).unwrap(), &img).unwrap();
            let ps = apply_combo(&EditingCombo::new(sum).unwrap(), &img).unwrap();
            for i in 0..16 {
                prop_assert!((ps.data[i] - pa.data[i] - pb.data[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn style_determinism(px in proptest::collection::vec(0.0f64..=1.0, 25), beta in 0.0f64..=1.0) {
            let img = Image::gray(5, 5, px).unwrap();
            for s in [
                StyleFilter::Gamma(0.5),
                StyleFilter::LomoLike { k: 8.0, c: 0.5, beta },
                StyleFilter::ToneShift([0.1, -0.2, 0.0]),
            ] {
                let x = apply_style(&s, &img).unwrap();
                let y = apply_style(&s, &img).unwrap();
                prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }
}
