//! Laws for environment-dependent parameters.
//!
//! A parameter is either a bare number or a table tagged by `law`:
//!
//! ```toml
//! alpha = 0.3
//! gamma = { law = "uniform", lo = 0.2, hi = 0.6 }
//! p = { law = "two-point", lo = 0.2, hi = 0.7, p_hi = 0.5 }
//! r = { law = "markov", values = [0.3, 0.6] }
//! ```
//!
//! Draws consume the keyed uniform at a fixed slot of the environment point,
//! so every parameter value is a pure function of `(seed, index)`.

use serde::{Deserialize, Serialize};

use crate::environment::EnvPoint;
use crate::error::{Error, Result};
use crate::rng::sample_index;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamLaw {
    Constant(f64),
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `hi` with probability `p_hi`, otherwise `lo`.
    TwoPoint {
        lo: f64,
        hi: f64,
        p_hi: f64,
    },
    Categorical {
        values: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Value indexed by the hidden state of a finite Markov driver.
    Markov {
        values: Vec<f64>,
    },
}

/// Range of values a law can produce.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Interval(f64, f64),
    Atoms(Vec<f64>),
}

impl ParamLaw {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Hypothesis(m));
        match self {
            ParamLaw::Constant(v) if !v.is_finite() => bad(format!("constant {v} is not finite")),
            ParamLaw::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad(format!("uniform law needs lo ≤ hi, got [{lo}, {hi}]"))
            }
            ParamLaw::TwoPoint { lo, hi, p_hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    bad("two-point values must be finite".into())
                } else if !(0.0..=1.0).contains(p_hi) {
                    bad(format!("two-point p_hi = {p_hi} outside [0, 1]"))
                } else {
                    Ok(())
                }
            }
            ParamLaw::Categorical { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    bad("categorical law needs equally many values and weights".into())
                } else if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
                    bad("categorical weights must be nonnegative with positive total".into())
                } else if values.iter().any(|v| !v.is_finite()) {
                    bad("categorical values must be finite".into())
                } else {
                    Ok(())
                }
            }
            ParamLaw::Markov { values } if values.is_empty() || values.iter().any(|v| !v.is_finite()) => {
                bad("markov law needs finite values, one per hidden state".into())
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ParamLaw::Constant(_) => true,
            ParamLaw::Uniform { lo, hi } => lo == hi,
            _ => self.atoms().is_some_and(|a| a.len() == 1),
        }
    }

    pub fn needs_markov_state(&self) -> Option<usize> {
        match self {
            ParamLaw::Markov { values } => Some(values.len()),
            _ => None,
        }
    }

    /// Finite support, if any. Zero-weight categorical atoms are dropped.
    pub fn atoms(&self) -> Option<Vec<f64>> {
        match self {
            ParamLaw::Constant(v) => Some(vec![*v]),
            ParamLaw::Uniform { lo, hi } if lo == hi => Some(vec![*lo]),
            ParamLaw::Uniform { .. } => None,
            ParamLaw::TwoPoint { lo, hi, p_hi } => Some(match *p_hi {
                p if p <= 0.0 => vec![*lo],
                p if p >= 1.0 => vec![*hi],
                _ => vec![*lo, *hi],
            }),
            ParamLaw::Categorical { values, weights } => {
                Some(values.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(v, _)| *v).collect())
            }
            ParamLaw::Markov { values } => Some(values.clone()),
        }
    }

    pub fn support(&self) -> Support {
        match self.atoms() {
            Some(a) => Support::Atoms(a),
            None => match self {
                ParamLaw::Uniform { lo, hi } => Support::Interval(*lo, *hi),
                _ => unreachable!("only the uniform law has a continuum support"),
            },
        }
    }

    /// `(inf, sup)` of the support.
    pub fn bounds(&self) -> (f64, f64) {
        match self.support() {
            Support::Interval(lo, hi) => (lo, hi),
            Support::Atoms(a) => a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v))),
        }
    }

    /// Whether `x` is an atom of the law (a value taken with positive probability).
    pub fn has_atom(&self, x: f64) -> bool {
        self.atoms().is_some_and(|a| a.contains(&x))
    }

    /// Requires the support to lie in `[lo, hi]`; `what` names the parameter.
    pub fn require_within(&self, what: &str, lo: f64, hi: f64, open_lo: bool, open_hi: bool) -> Result<()> {
        self.check()?;
        let (a, b) = self.bounds();
        let lo_ok = if open_lo { a > lo } else { a >= lo };
        let hi_ok = if open_hi { b < hi } else { b <= hi };
        if lo_ok && hi_ok {
            Ok(())
        } else {
            let l = if open_lo { "(" } else { "[" };
            let r = if open_hi { ")" } else { "]" };
            Err(Error::Hypothesis(format!("{what} ∈ [{a}, {b}] violates {what} ∈ {l}{lo}, {hi}{r}")))
        }
    }

    pub fn sample(&self, point: &EnvPoint, slot: u32) -> f64 {
        match self {
            ParamLaw::Constant(v) => *v,
            ParamLaw::Uniform { lo, hi } => lo + (hi - lo) * point.uniform(slot),
            ParamLaw::TwoPoint { lo, hi, p_hi } => {
                if point.uniform(slot) < *p_hi {
                    *hi
                } else {
                    *lo
                }
            }
            ParamLaw::Categorical { values, weights } => {
                let k = sample_index(weights, point.uniform(slot)).expect("weights checked at construction");
                values[k]
            }
            ParamLaw::Markov { values } => {
                let s = point.state.expect("markov law requires a finite-Markov environment");
                values[s]
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParamRepr {
    Value(f64),
    Law(LawTable),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
enum LawTable {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
    Categorical { values: Vec<f64>, weights: Vec<f64> },
    Markov { values: Vec<f64> },
}

impl Serialize for ParamLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self.clone() {
            ParamLaw::Constant(v) => ParamRepr::Value(v),
            ParamLaw::Uniform { lo, hi } => ParamRepr::Law(LawTable::Uniform { lo, hi }),
            ParamLaw::TwoPoint { lo, hi, p_hi } => ParamRepr::Law(LawTable::TwoPoint { lo, hi, p_hi }),
            ParamLaw::Categorical { values, weights } => ParamRepr::Law(LawTable::Categorical { values, weights }),
            ParamLaw::Markov { values } => ParamRepr::Law(LawTable::Markov { values }),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let law = match ParamRepr::deserialize(d)? {
            ParamRepr::Value(v) | ParamRepr::Law(LawTable::Constant { value: v }) => ParamLaw::Constant(v),
            ParamRepr::Law(LawTable::Uniform { lo, hi }) => ParamLaw::Uniform { lo, hi },
            ParamRepr::Law(LawTable::TwoPoint { lo, hi, p_hi }) => ParamLaw::TwoPoint { lo, hi, p_hi },
            ParamRepr::Law(LawTable::Categorical { values, weights }) => ParamLaw::Categorical { values, weights },
            ParamRepr::Law(LawTable::Markov { values }) => ParamLaw::Markov { values },
        };
        law.check().map_err(serde::de::Error::custom)?;
        Ok(law)
    }
}

/// Rows of outcome weights, one row per input label, each summing to 1.
///
/// `Mixture` interpolates `(1 − t)·a + t·b` with `t` drawn from its own law,
/// so every entry is affine in `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightLaw {
    Fixed { rows: Vec<Vec<f64>> },
    Mixture { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, t: ParamLaw },
}

const ROW_SUM_TOL: f64 = 1e-12;

fn check_rows(rows: &[Vec<f64>], n_rows: usize, n_cols: usize, what: &str) -> Result<()> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::Hypothesis(format!("{what}: expected {n_rows} rows of {n_cols} weights")));
    }
    for (g, r) in rows.iter().enumerate() {
        if let Some(w) = r.iter().find(|w| !(**w >= 0.0 && **w <= 1.0)) {
            return Err(Error::Hypothesis(format!("{what}: weight {w} in row {g} violates 0 ≤ w ≤ 1")));
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Hypothesis(format!("{what}: row {g} sums to {s}, violating Σ_a w = 1")));
        }
    }
    Ok(())
}

impl WeightLaw {
    pub fn check(&self, n_rows: usize, n_cols: usize) -> Result<()> {
        match self {
            WeightLaw::Fixed { rows } => check_rows(rows, n_rows, n_cols, "weights"),
            WeightLaw::Mixture { a, b, t } => {
                check_rows(a, n_rows, n_cols, "weights.a")?;
                check_rows(b, n_rows, n_cols, "weights.b")?;
                t.require_within("t", 0.0, 1.0, false, false)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            WeightLaw::Fixed { .. } => true,
            WeightLaw::Mixture { a, b, t } => a == b || t.is_constant(),
        }
    }

    pub fn needs_markov_state(&self) -> Option<usize> {
        match self {
            WeightLaw::Fixed { .. } => None,
            WeightLaw::Mixture { t, .. } => t.needs_markov_state(),
        }
    }

    pub fn at(&self, t: f64) -> Vec<Vec<f64>> {
        match self {
            WeightLaw::Fixed { rows } => rows.clone(),
            WeightLaw::Mixture { a, b, .. } => {
                a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (1.0 - t) * x + t * y).collect()).collect()
            }
        }
    }

    pub fn sample(&self, point: &EnvPoint, slot: u32) -> Vec<Vec<f64>> {
        match self {
            WeightLaw::Fixed { rows } => rows.clone(),
            WeightLaw::Mixture { t, .. } => self.at(t.sample(point, slot)),
        }
    }

    /// Weight tables at the extreme points of the mixing parameter. Every
    /// quantity that is multilinear in the per-step tables attains its
    /// extrema on these.
    pub fn extremes(&self) -> Vec<Vec<Vec<f64>>> {
        match self {
            WeightLaw::Fixed { rows } => vec![rows.clone()],
            WeightLaw::Mixture { t, .. } => {
                let (lo, hi) = t.bounds();
                if lo == hi {
                    vec![self.at(lo)]
                } else {
                    vec![self.at(lo), self.at(hi)]
                }
            }
        }
    }

    /// Smallest weight over the support.
    pub fn min_weight(&self) -> f64 {
        self.extremes().iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sup_ω max_{g ≠ g'} Σ_a √(w_{a,g} w_{a,g'})`.
    ///
    /// Each summand is a geometric mean of two affine functions of `t`, hence
    /// concave, so the sup over an interval is found by golden-section search.
    pub fn max_overlap(&self) -> f64 {
        let pairwise = |rows: &[Vec<f64>]| -> f64 {
            let mut best = 0.0f64;
            for g in 0..rows.len() {
                for h in 0..rows.len() {
                    if g != h {
                        best = best.max(bhattacharyya(&rows[g], &rows[h]));
                    }
                }
            }
            best
        };
        match self {
            WeightLaw::Fixed { rows } => pairwise(rows),
            WeightLaw::Mixture { t, .. } => match t.support() {
                Support::Atoms(ts) => ts.iter().map(|&x| pairwise(&self.at(x))).fold(0.0, f64::max),
                Support::Interval(lo, hi) => {
                    let n = self.at(lo).len();
                    let mut best = 0.0f64;
                    for g in 0..n {
                        for h in 0..n {
                            if g != h {
                                let f = |x: f64| {
                                    let w = self.at(x);
                                    bhattacharyya(&w[g], &w[h])
                                };
                                best = best.max(golden_max(f, lo, hi));
                            }
                        }
                    }
                    best
                }
            },
        }
    }
}

pub fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

/// Maximum of a concave function on `[lo, hi]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    [f(lo), f(hi), fc, fd].into_iter().fold(f64::NEG_INFINITY, f64::max)
}
