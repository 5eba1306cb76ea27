//! Catalogue of example models.
//!
//! Each [`ModelSpec`] builds an environment-parameterized instrument together
//! with a [`ConstantSheet`]: the constants the model is claimed to satisfy
//! (stationary state, forgetting rate, block length and merge probability,
//! ESP index). The sheet is a claim, not a result; acceptance tests re-derive
//! every entry with the estimators of the other modules.
//!
//! Basis labels are 0-based in code. Pair alphabets print 1-based labels, so
//! outcome `(k, ℓ)` (move from label `ℓ` to label `k`) is shown as `"kℓ"`.

mod group;
mod laws;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use group::{FiniteGroup, GroupSpec};
pub use laws::{bhattacharyya, ParamLaw, Support, WeightLaw};

use crate::environment::{DisorderKind, DisorderProcess, EnvPoint, MarkovChain};
use crate::error::{Error, Result};
use crate::instrument::KrausInstrument;
use crate::linalg::{ComplexMatrix, C64};
use crate::rng::{derive_seed, domain};
use crate::stationary::{group_rate_bound, label_block_matrix, lambda_from_epsilon0};
use crate::trajectory::OutcomeClass;

fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn alpha_default() -> ParamLaw {
    ParamLaw::Constant(0.3)
}
fn half() -> ParamLaw {
    ParamLaw::Constant(0.5)
}
fn gamma_default() -> ParamLaw {
    ParamLaw::Uniform { lo: 0.3, hi: 0.7 }
}
fn gad_default() -> ParamLaw {
    ParamLaw::Uniform { lo: 0.2, hi: 0.8 }
}
fn keep_switch_default() -> ParamLaw {
    ParamLaw::Uniform { lo: 0.1, hi: 0.4 }
}
fn symbol_default() -> ParamLaw {
    ParamLaw::Categorical { values: vec![1.0, 2.0], weights: vec![0.5, 0.5] }
}
fn gks_alpha() -> f64 {
    0.2
}
fn gks_eta() -> f64 {
    0.1
}
fn unit_interval() -> ParamLaw {
    ParamLaw::Uniform { lo: 0.0, hi: 1.0 }
}
fn group_default() -> GroupSpec {
    GroupSpec::Cyclic { n: 3 }
}
fn cayley_group_default() -> GroupSpec {
    GroupSpec::Cyclic { n: 4 }
}
fn generators_default() -> Vec<usize> {
    vec![0, 1]
}

/// Model selection and parameters, as read from the `[model]` config table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ModelSpec {
    Toy {
        #[serde(default = "two")]
        d: usize,
    },
    NoisyLabel {
        #[serde(default = "two")]
        d: usize,
        #[serde(default = "alpha_default")]
        alpha: ParamLaw,
    },
    Absorbing {
        #[serde(default = "alpha_default")]
        alpha: ParamLaw,
    },
    AbsorbingGeneralD {
        #[serde(default = "three")]
        d: usize,
        #[serde(default = "alpha_default")]
        alpha: ParamLaw,
    },
    CyclicKeepSwitch {
        #[serde(default = "half")]
        a: ParamLaw,
    },
    AmplitudeDamping {
        #[serde(default = "gamma_default")]
        gamma: ParamLaw,
    },
    Gad {
        #[serde(default = "gad_default")]
        p: ParamLaw,
        #[serde(default = "gad_default")]
        gamma: ParamLaw,
    },
    KeepSwitch {
        #[serde(default = "keep_switch_default")]
        p: ParamLaw,
    },
    CompleteBasisTransition {
        #[serde(default = "two")]
        d: usize,
        /// `rows[i][k] = r_{k,i}`: weight of moving from label `i` to `k`.
        #[serde(default)]
        weights: Option<WeightLaw>,
    },
    Replacement {
        #[serde(default = "two")]
        d: usize,
        /// 1-based replacement label `r(ω)`.
        #[serde(default = "symbol_default")]
        symbol: ParamLaw,
    },
    GeneralizedKeepSwitch {
        #[serde(default = "three")]
        d: usize,
        #[serde(default = "gks_alpha")]
        alpha: f64,
        #[serde(default = "gks_eta")]
        eta: f64,
        /// `p_i = α + (1 − 2α)(i + u)/d` with `u` drawn from this law.
        #[serde(default = "unit_interval")]
        shift: ParamLaw,
    },
    LazyCyclic {
        #[serde(default = "three")]
        d: usize,
        /// Rows `[p⁻, p⁰, p⁺]` per label.
        #[serde(default)]
        weights: Option<WeightLaw>,
    },
    BiasedCyclic {
        #[serde(default = "three")]
        d: usize,
        /// Rows `[p⁻, p⁺]` per label.
        #[serde(default)]
        weights: Option<WeightLaw>,
    },
    FiniteGroupAction {
        #[serde(default = "group_default")]
        group: GroupSpec,
        /// `rows[g][a] = μ_g(a)`.
        #[serde(default)]
        weights: Option<WeightLaw>,
    },
    CayleyGraph {
        #[serde(default = "cayley_group_default")]
        group: GroupSpec,
        #[serde(default = "generators_default")]
        generators: Vec<usize>,
        /// `rows[g][s] = p_g^s`, one column per generator.
        #[serde(default)]
        weights: Option<WeightLaw>,
    },
}

pub const MODEL_NAMES: [&str; 15] = [
    "toy",
    "noisy-label",
    "absorbing",
    "absorbing-general-d",
    "cyclic-keep-switch",
    "amplitude-damping",
    "gad",
    "keep-switch",
    "complete-basis-transition",
    "replacement",
    "generalized-keep-switch",
    "lazy-cyclic",
    "biased-cyclic",
    "finite-group-action",
    "cayley-graph",
];

impl ModelSpec {
    /// Spec with default parameters, overridden by `params`.
    pub fn from_parts(name: &str, params: toml::Table) -> Result<Self> {
        let mut table = params;
        table.insert("name".into(), toml::Value::String(name.into()));
        toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("model '{name}': {e}")))
    }

    pub fn default_for(name: &str) -> Result<Self> {
        Self::from_parts(name, toml::Table::new())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Toy { .. } => "toy",
            ModelSpec::NoisyLabel { .. } => "noisy-label",
            ModelSpec::Absorbing { .. } => "absorbing",
            ModelSpec::AbsorbingGeneralD { .. } => "absorbing-general-d",
            ModelSpec::CyclicKeepSwitch { .. } => "cyclic-keep-switch",
            ModelSpec::AmplitudeDamping { .. } => "amplitude-damping",
            ModelSpec::Gad { .. } => "gad",
            ModelSpec::KeepSwitch { .. } => "keep-switch",
            ModelSpec::CompleteBasisTransition { .. } => "complete-basis-transition",
            ModelSpec::Replacement { .. } => "replacement",
            ModelSpec::GeneralizedKeepSwitch { .. } => "generalized-keep-switch",
            ModelSpec::LazyCyclic { .. } => "lazy-cyclic",
            ModelSpec::BiasedCyclic { .. } => "biased-cyclic",
            ModelSpec::FiniteGroupAction { .. } => "finite-group-action",
            ModelSpec::CayleyGraph { .. } => "cayley-graph",
        }
    }

    pub fn is_walk_type(&self) -> bool {
        matches!(
            self,
            ModelSpec::GeneralizedKeepSwitch { .. }
                | ModelSpec::LazyCyclic { .. }
                | ModelSpec::BiasedCyclic { .. }
                | ModelSpec::FiniteGroupAction { .. }
                | ModelSpec::CayleyGraph { .. }
        )
    }
}

/// Disorder driver, as read from the `[environment]` config table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Deterministic,
    #[default]
    Iid,
    Markov {
        transition: Vec<Vec<f64>>,
    },
}

/// Declared forgetting rate `r_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateDecl {
    Zero,
    /// `prefactor · base^(power · n)`.
    Geometric {
        prefactor: f64,
        base: f64,
        power: f64,
    },
    /// `2λ^⌊n/L⌋ + 2d qⁿ`.
    Group {
        lambda: f64,
        l: usize,
        d: usize,
        q: f64,
    },
    /// No closed form; estimated only.
    Empirical,
}

impl RateDecl {
    pub fn eval(&self, n: usize) -> Option<f64> {
        match *self {
            RateDecl::Zero => Some(0.0),
            RateDecl::Geometric { prefactor, base, power } => Some(prefactor * base.powf(power * n as f64)),
            RateDecl::Group { lambda, l, d, q } => group_rate_bound(lambda, l, d, q, n).ok(),
            RateDecl::Empirical => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StationaryDecl {
    MaximallyMixed,
    Basis {
        label: usize,
    },
    /// Exists and is unique but has no closed form, or varies with `ω`.
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EspDecl {
    Holds { n0: usize },
    Fails,
    Unknown,
}

/// Constants of the group-walk criterion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupConstants {
    pub l: usize,
    pub eps0: f64,
    pub lambda: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantSheet {
    pub model: String,
    pub dim: usize,
    pub alphabet: Vec<String>,
    pub stationary: StationaryDecl,
    pub rate: RateDecl,
    pub esp: EspDecl,
    /// Block length `L` of the merge criterion.
    pub l: usize,
    /// Merge probability `ε`.
    pub epsilon: f64,
    /// Dobrushin coefficient of the label chain, where it has a closed form.
    pub dobrushin: Option<f64>,
    pub group: Option<GroupConstants>,
    pub disordered: bool,
    /// Named outcome sets accepted as pattern letters.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<OutcomeClass>,
}

/// A built model: the disorder process plus its declared constants.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub sheet: ConstantSheet,
    pub process: DisorderProcess,
    walk: Option<Walk>,
}

type Field = Arc<dyn Fn(&EnvPoint) -> KrausInstrument + Send + Sync>;

#[derive(Clone, Debug)]
struct Walk {
    group: FiniteGroup,
    shifts: Vec<usize>,
}

fn pair_label(d: usize, k: usize, l: usize) -> String {
    if d < 10 {
        format!("{}{}", k + 1, l + 1)
    } else {
        format!("{}.{}", k + 1, l + 1)
    }
}

/// Alphabet of `(k, ℓ)` pairs, index `k·d + ℓ`.
pub fn pair_alphabet(d: usize) -> Vec<String> {
    (0..d).flat_map(|k| (0..d).map(move |l| pair_label(d, k, l))).collect()
}

/// Perfect instrument with `V_{(k,ℓ)} = √q(k, ℓ) |k⟩⟨ℓ|`.
pub fn pair_instrument(d: usize, q: impl Fn(usize, usize) -> f64) -> KrausInstrument {
    let mut ops = Vec::with_capacity(d * d);
    for k in 0..d {
        for l in 0..d {
            let mut v = ComplexMatrix::zeros(d);
            v[(k, l)] = C64::new(q(k, l).max(0.0).sqrt(), 0.0);
            ops.push(v);
        }
    }
    KrausInstrument::perfect(d, pair_alphabet(d), ops).expect("pair instrument is well formed")
}

/// `V_a = Σ_g √w[g][a] |target[a][g]⟩⟨g|`.
fn walk_instrument(alphabet: &[String], targets: &[Vec<usize>], rows: &[Vec<f64>]) -> KrausInstrument {
    let d = rows.len();
    let ops = targets
        .iter()
        .enumerate()
        .map(|(a, tgt)| {
            let mut v = ComplexMatrix::zeros(d);
            for g in 0..d {
                v[(tgt[g], g)] = C64::new(rows[g][a].max(0.0).sqrt(), 0.0);
            }
            v
        })
        .collect();
    KrausInstrument::perfect(d, alphabet.to_vec(), ops).expect("walk instrument is well formed")
}

fn real(rows: &[&[f64]]) -> ComplexMatrix {
    ComplexMatrix::from_real_rows(rows).expect("square literal")
}

fn hyp<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Hypothesis(msg.into()))
}

fn need_dim(d: usize, min: usize) -> Result<()> {
    if d < min {
        return hyp(format!("d = {d} violates d ≥ {min}"));
    }
    Ok(())
}

fn uniform_rows(n_rows: usize, n_cols: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n_cols as f64; n_cols]; n_rows]
}

/// Distinct rows pulled toward the uniform row by a random amount.
fn toward_uniform(a: Vec<Vec<f64>>) -> WeightLaw {
    let b = uniform_rows(a.len(), a[0].len());
    WeightLaw::Mixture { a, b, t: ParamLaw::Uniform { lo: 0.0, hi: 0.5 } }
}

fn spread(g: usize, d: usize, lo: f64, width: f64) -> f64 {
    lo + width * g as f64 / (d - 1).max(1) as f64
}

impl ModelSpec {
    fn laws(&self) -> Vec<&ParamLaw> {
        match self {
            ModelSpec::Toy { .. } => vec![],
            ModelSpec::NoisyLabel { alpha, .. } | ModelSpec::Absorbing { alpha } | ModelSpec::AbsorbingGeneralD { alpha, .. } => {
                vec![alpha]
            }
            ModelSpec::CyclicKeepSwitch { a } => vec![a],
            ModelSpec::AmplitudeDamping { gamma } => vec![gamma],
            ModelSpec::Gad { p, gamma } => vec![p, gamma],
            ModelSpec::KeepSwitch { p } => vec![p],
            ModelSpec::Replacement { symbol, .. } => vec![symbol],
            ModelSpec::GeneralizedKeepSwitch { shift, .. } => vec![shift],
            _ => vec![],
        }
    }

    fn weight_law(&self) -> Option<WeightLaw> {
        match self {
            ModelSpec::CompleteBasisTransition { d, weights } => Some(weights.clone().unwrap_or_else(|| {
                toward_uniform((0..*d).map(|i| (0..*d).map(|k| if k == i { 0.6 } else { 0.4 / (*d - 1) as f64 }).collect()).collect())
            })),
            ModelSpec::LazyCyclic { d, weights } => Some(weights.clone().unwrap_or_else(|| {
                toward_uniform(
                    (0..*d)
                        .map(|g| {
                            let s = spread(g, *d, 0.2, 0.4);
                            vec![0.2, 0.8 - s, s]
                        })
                        .collect(),
                )
            })),
            ModelSpec::BiasedCyclic { d, weights } => Some(weights.clone().unwrap_or_else(|| {
                toward_uniform(
                    (0..*d)
                        .map(|g| {
                            let s = spread(g, *d, 0.25, 0.5);
                            vec![s, 1.0 - s]
                        })
                        .collect(),
                )
            })),
            ModelSpec::FiniteGroupAction { group, weights } => weights.clone().or_else(|| {
                let n = group.build().ok()?.order();
                let total = (n * (n + 1) / 2) as f64;
                Some(toward_uniform((0..n).map(|g| (0..n).map(|a| (1 + (a + g) % n) as f64 / total).collect()).collect()))
            }),
            ModelSpec::CayleyGraph { group, generators, weights } => weights.clone().or_else(|| {
                let n = group.build().ok()?.order();
                let m = generators.len();
                Some(toward_uniform(
                    (0..n)
                        .map(|g| {
                            let s = spread(g, n, 0.25, 0.5);
                            let mut row = vec![(1.0 - s) / (m - 1).max(1) as f64; m];
                            row[0] = s;
                            if m == 1 {
                                row[0] = 1.0;
                            }
                            row
                        })
                        .collect(),
                ))
            }),
            _ => None,
        }
    }

    fn is_constant(&self) -> bool {
        self.laws().iter().all(|l| l.is_constant()) && self.weight_law().is_none_or(|w| w.is_constant())
    }

    fn markov_states(&self) -> Option<usize> {
        self.laws().iter().filter_map(|l| l.needs_markov_state()).chain(self.weight_law().and_then(|w| w.needs_markov_state())).max()
    }
}

fn environment_kind(spec: &ModelSpec, env: &EnvironmentSpec) -> Result<DisorderKind> {
    if spec.is_constant() {
        return Ok(DisorderKind::Deterministic);
    }
    let kind = match env {
        EnvironmentSpec::Deterministic => return hyp(format!("{}: a deterministic environment needs constant parameters", spec.name())),
        EnvironmentSpec::Iid => DisorderKind::Iid,
        EnvironmentSpec::Markov { transition } => DisorderKind::FiniteMarkov(MarkovChain::new(transition.clone())?),
    };
    if let Some(k) = spec.markov_states() {
        match &kind {
            DisorderKind::FiniteMarkov(chain) if chain.n_states() == k => {}
            DisorderKind::FiniteMarkov(chain) => {
                return Err(Error::Config(format!("markov law has {k} values but the driver has {} states", chain.n_states())))
            }
            _ => return Err(Error::Config("markov laws need a markov environment".into())),
        }
    }
    Ok(kind)
}

impl Model {
    /// Validates the parameter hypotheses and builds the disorder process.
    pub fn build(spec: &ModelSpec, env: &EnvironmentSpec, seed: u64) -> Result<Self> {
        let (dim, field, sheet, walk) = construct(spec)?;
        let kind = environment_kind(spec, env)?;
        let mut sheet = sheet;
        sheet.disordered = kind != DisorderKind::Deterministic;
        let f = field.clone();
        let process = DisorderProcess::from_fn(kind, seed, dim, move |p| f(p));
        Ok(Self { spec: spec.clone(), sheet, process, walk })
    }

    /// Builds with the default i.i.d. environment.
    pub fn iid(spec: &ModelSpec, seed: u64) -> Result<Self> {
        Self::build(spec, &EnvironmentSpec::Iid, seed)
    }

    pub fn named(name: &str, seed: u64) -> Result<Self> {
        Self::iid(&ModelSpec::default_for(name)?, seed)
    }
}

fn construct(spec: &ModelSpec) -> Result<(usize, Field, ConstantSheet, Option<Walk>)> {
    let sheet = |dim: usize, alphabet: Vec<String>, stationary, rate, esp, l, epsilon, dobrushin| ConstantSheet {
        model: spec.name().into(),
        dim,
        alphabet,
        stationary,
        rate,
        esp,
        l,
        epsilon,
        dobrushin,
        group: None,
        disordered: false,
        classes: Vec::new(),
    };
    let geometric = |base: f64, power: f64| RateDecl::Geometric { prefactor: 2.0, base, power };
    match spec {
        ModelSpec::Toy { d } => {
            let d = *d;
            need_dim(d, 2)?;
            let inst = pair_instrument(d, |_, _| 1.0 / d as f64);
            let s = sheet(d, pair_alphabet(d), StationaryDecl::MaximallyMixed, RateDecl::Zero, EspDecl::Holds { n0: 1 }, 1, 1.0, Some(0.0));
            Ok((d, Arc::new(move |_| inst.clone()), s, None))
        }
        ModelSpec::NoisyLabel { d, alpha } => {
            let d = *d;
            need_dim(d, 2)?;
            alpha.require_within("α", 0.0, 1.0, true, false)?;
            let a_star = alpha.bounds().0;
            let alpha = alpha.clone();
            let field: Field = Arc::new(move |p| {
                let a = alpha.sample(p, 0);
                pair_instrument(d, |k, l| if k == l { 1.0 - a + a / d as f64 } else { a / d as f64 })
            });
            let s = sheet(
                d,
                pair_alphabet(d),
                StationaryDecl::MaximallyMixed,
                geometric(1.0 - a_star, 1.0),
                EspDecl::Holds { n0: 1 },
                1,
                a_star,
                Some(1.0 - a_star),
            );
            Ok((d, field, s, None))
        }
        ModelSpec::Absorbing { alpha } | ModelSpec::AbsorbingGeneralD { alpha, .. } => {
            let d = match spec {
                ModelSpec::AbsorbingGeneralD { d, .. } => *d,
                _ => 3,
            };
            need_dim(d, 2)?;
            // Support bounded away from 0 and 1 covers α ∈ [α_*, 1 − α_*].
            alpha.require_within("α", 0.0, 1.0, true, true)?;
            let a_star = alpha.bounds().0;
            let alpha = alpha.clone();
            let field: Field = Arc::new(move |p| {
                let a = alpha.sample(p, 0);
                pair_instrument(d, |k, l| match (k, l) {
                    (0, 0) => 1.0,
                    (0, _) => a,
                    (k, l) if k == l => 1.0 - a,
                    _ => 0.0,
                })
            });
            let s = sheet(
                d,
                pair_alphabet(d),
                StationaryDecl::Basis { label: 0 },
                geometric(1.0 - a_star, 1.0),
                EspDecl::Fails,
                1,
                a_star,
                Some(1.0 - a_star),
            );
            Ok((d, field, s, None))
        }
        ModelSpec::CyclicKeepSwitch { a } => {
            a.require_within("a", 0.0, 1.0, true, true)?;
            let (lo, hi) = a.bounds();
            let eta = lo.min(1.0 - hi);
            // Every Q is circulant, so the products share the Fourier basis and
            // the nontrivial modes contract by |a + (1−a)e^{2πi/3}| per step.
            let base = 1.0 - 3.0 * eta * (1.0 - eta);
            let a = a.clone();
            let field: Field = Arc::new(move |p| {
                let x = a.sample(p, 0);
                pair_instrument(3, |k, l| {
                    if k == l {
                        x
                    } else if k == (l + 1) % 3 {
                        1.0 - x
                    } else {
                        0.0
                    }
                })
            });
            let mut s = sheet(
                3,
                pair_alphabet(3),
                StationaryDecl::MaximallyMixed,
                geometric(base, 0.5),
                EspDecl::Holds { n0: 2 },
                1,
                eta,
                Some(1.0 - eta),
            );
            // outcome (k, ℓ) has index 3k + ℓ
            s.classes = vec![
                OutcomeClass { label: "K".into(), outcomes: (0..3).map(|k| 4 * k).collect() },
                OutcomeClass { label: "S".into(), outcomes: (0..3).map(|l| 3 * ((l + 1) % 3) + l).collect() },
            ];
            Ok((3, field, s, None))
        }
        ModelSpec::AmplitudeDamping { gamma } => {
            gamma.require_within("γ", 0.0, 1.0, true, false)?;
            let g_star = gamma.bounds().0;
            let gamma = gamma.clone();
            let field: Field = Arc::new(move |p| {
                let g = gamma.sample(p, 0);
                let v0 = real(&[&[1.0, 0.0], &[0.0, (1.0 - g).sqrt()]]);
                let v1 = real(&[&[0.0, g.sqrt()], &[0.0, 0.0]]);
                KrausInstrument::perfect(2, vec!["0".into(), "1".into()], vec![v0, v1]).expect("2x2 literals")
            });
            let s = sheet(
                2,
                vec!["0".into(), "1".into()],
                StationaryDecl::Basis { label: 0 },
                geometric(1.0 - g_star, 0.5),
                EspDecl::Fails,
                1,
                g_star,
                None,
            );
            Ok((2, field, s, None))
        }
        ModelSpec::Gad { p, gamma } => {
            p.require_within("p", 0.0, 1.0, true, true)?;
            gamma.require_within("γ", 0.0, 1.0, true, true)?;
            let (pl, ph) = p.bounds();
            let (gl, gh) = gamma.bounds();
            let delta = pl.min(1.0 - ph).min(gl).min(1.0 - gh);
            if !(delta > 0.0 && delta < 0.5) {
                return hyp(format!("δ = {delta} violates δ ∈ (0, ½)"));
            }
            let (p, gamma) = (p.clone(), gamma.clone());
            let field: Field = Arc::new(move |pt| {
                let (x, g) = (p.sample(pt, 0), gamma.sample(pt, 1));
                let (sp, sq) = (x.sqrt(), (1.0 - x).sqrt());
                let ops = vec![
                    real(&[&[sp, 0.0], &[0.0, sp * (1.0 - g).sqrt()]]),
                    real(&[&[0.0, sp * g.sqrt()], &[0.0, 0.0]]),
                    real(&[&[sq * (1.0 - g).sqrt(), 0.0], &[0.0, sq]]),
                    real(&[&[0.0, 0.0], &[sq * g.sqrt(), 0.0]]),
                ];
                KrausInstrument::perfect(2, ["0", "1", "2", "3"].map(String::from).to_vec(), ops).expect("2x2 literals")
            });
            let s = sheet(
                2,
                ["0", "1", "2", "3"].map(String::from).to_vec(),
                StationaryDecl::Unknown,
                RateDecl::Empirical,
                EspDecl::Holds { n0: 1 },
                1,
                delta,
                None,
            );
            Ok((2, field, s, None))
        }
        ModelSpec::KeepSwitch { p } => {
            p.require_within("p", 0.0, 1.0, true, true)?;
            if p.has_atom(0.5) {
                return hyp("p(ω) = ½ with positive probability violates p(ω) ≠ ½ a.e.");
            }
            let p = p.clone();
            let field: Field = Arc::new(move |pt| {
                let x = p.sample(pt, 0);
                let (a, b) = (x.sqrt(), (1.0 - x).sqrt());
                let ops = vec![real(&[&[a, 0.0], &[0.0, b]]), real(&[&[0.0, a], &[b, 0.0]])];
                KrausInstrument::perfect(2, vec!["K".into(), "S".into()], ops).expect("2x2 literals")
            });
            let s = sheet(
                2,
                vec!["K".into(), "S".into()],
                StationaryDecl::Unknown,
                RateDecl::Empirical,
                EspDecl::Holds { n0: 2 },
                1,
                1.0,
                None,
            );
            Ok((2, field, s, None))
        }
        ModelSpec::CompleteBasisTransition { d, .. } => {
            let d = *d;
            need_dim(d, 2)?;
            let w = spec.weight_law().expect("weighted model");
            w.check(d, d)?;
            let delta = w.min_weight();
            if !(delta > 0.0) {
                return hyp(format!("min r_(k,i) = {delta} violates r_(k,i) ≥ δ > 0"));
            }
            // Coherences vanish after one step and the population map has
            // Dobrushin coefficient at most 1 − dδ.
            let eps = d as f64 * delta;
            let field: Field = Arc::new(move |p| {
                let rows = w.sample(p, 0);
                pair_instrument(d, |k, i| rows[i][k])
            });
            let rate = if eps < 1.0 { geometric(1.0 - eps, 1.0) } else { RateDecl::Zero };
            let s = sheet(d, pair_alphabet(d), StationaryDecl::Unknown, rate, EspDecl::Holds { n0: 1 }, 1, eps, None);
            Ok((d, field, s, None))
        }
        ModelSpec::Replacement { d, symbol } => {
            let d = *d;
            need_dim(d, 2)?;
            symbol.check()?;
            let atoms = match symbol.atoms() {
                Some(a) => a,
                None => return hyp("replacement symbol law must be discrete"),
            };
            if let Some(r) = atoms.iter().find(|&&r| !(r.fract() == 0.0 && r >= 1.0 && r <= d as f64)) {
                return hyp(format!("replacement symbol {r} violates r ∈ {{1, …, {d}}}"));
            }
            let symbol = symbol.clone();
            let field: Field = Arc::new(move |p| {
                let r = symbol.sample(p, 0) as usize - 1;
                pair_instrument(d, |k, _| if k == r { 1.0 } else { 0.0 })
            });
            let s = sheet(d, pair_alphabet(d), StationaryDecl::Unknown, RateDecl::Zero, EspDecl::Fails, 1, 1.0, Some(0.0));
            Ok((d, field, s, None))
        }
        ModelSpec::GeneralizedKeepSwitch { d, alpha, eta, shift } => {
            let (d, alpha, eta) = (*d, *alpha, *eta);
            need_dim(d, 2)?;
            if !(alpha > 0.0 && alpha < 0.5) {
                return hyp(format!("α = {alpha} violates α ∈ (0, ½)"));
            }
            if !(eta > 0.0) {
                return hyp(format!("η = {eta} violates η > 0"));
            }
            let spacing = (1.0 - 2.0 * alpha) / d as f64;
            if eta > spacing {
                return hyp(format!("η = {eta} violates η ≤ (1 − 2α)/d = {spacing} for evenly spaced p_i"));
            }
            shift.require_within("u", 0.0, 1.0, false, false)?;
            let l = d - 1;
            let eps0 = alpha.powi(l as i32);
            // sup of √(uv) + √((1−u)(1−v)) over |u − v| ≥ η, attained at the
            // symmetric pair u + v = 1, |u − v| = η.
            let q = (1.0 - eta * eta).sqrt();
            let group = FiniteGroup::cyclic(d);
            let shifts = vec![0, 1];
            let alphabet: Vec<String> = vec!["K".into(), "S".into()];
            let targets = walk_targets(&group, &shifts);
            let shift = shift.clone();
            let labels = alphabet.clone();
            let field: Field = Arc::new(move |p| {
                let u = shift.sample(p, 0);
                let rows: Vec<Vec<f64>> = (0..d)
                    .map(|i| {
                        let pi = alpha + (1.0 - 2.0 * alpha) * (i as f64 + u) / d as f64;
                        vec![pi, 1.0 - pi]
                    })
                    .collect();
                walk_instrument(&labels, &targets, &rows)
            });
            let s = walk_sheet(spec, d, alphabet, l, eps0, q)?;
            Ok((d, field, s, Some(Walk { group, shifts })))
        }
        ModelSpec::LazyCyclic { d, .. } | ModelSpec::BiasedCyclic { d, .. } => {
            let d = *d;
            let lazy = matches!(spec, ModelSpec::LazyCyclic { .. });
            need_dim(d, if lazy { 2 } else { 3 })?;
            if !lazy && d % 2 == 0 {
                return hyp(format!("d = {d} violates the requirement that d is odd"));
            }
            let (alphabet, shifts): (Vec<String>, Vec<usize>) = if lazy {
                (vec!["-1".into(), "0".into(), "+1".into()], vec![d - 1, 0, 1 % d])
            } else {
                (vec!["-1".into(), "+1".into()], vec![d - 1, 1])
            };
            let w = spec.weight_law().expect("weighted model");
            w.check(d, alphabet.len())?;
            let alpha = w.min_weight();
            if !(alpha > 0.0) {
                return hyp(format!("min weight {alpha} violates p_i^a ≥ α > 0"));
            }
            let l = if lazy { d - 1 } else { d };
            let eps0 = alpha.powi(l as i32);
            let q = w.max_overlap();
            weighted_walk(spec, FiniteGroup::cyclic(d), alphabet, shifts, w, l, eps0, q)
        }
        ModelSpec::FiniteGroupAction { group, .. } => {
            let g = group.build()?;
            let d = g.order();
            need_dim(d, 2)?;
            let w = spec.weight_law().expect("weighted model");
            w.check(d, d)?;
            let alpha = w.min_weight();
            if !(alpha > 0.0) {
                return hyp(format!("min weight {alpha} violates μ_g(a) ≥ α > 0"));
            }
            let q = w.max_overlap();
            let alphabet = (0..d).map(|a| format!("g{a}")).collect();
            weighted_walk(spec, g, alphabet, (0..d).collect(), w, 1, alpha, q)
        }
        ModelSpec::CayleyGraph { group, generators, .. } => {
            let g = group.build()?;
            let d = g.order();
            need_dim(d, 2)?;
            if let Some(&s) = generators.iter().find(|&&s| s >= d) {
                return Err(Error::Structure(format!("generator {s} is not a group element")));
            }
            let mut sorted = generators.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != generators.len() {
                return Err(Error::Structure("generators must be distinct".into()));
            }
            if !generators.contains(&g.identity()) {
                return hyp("S must contain the identity e");
            }
            let l0 = match g.word_radius(generators) {
                Some(r) => r.max(1),
                None => return hyp("S does not generate G"),
            };
            let w = spec.weight_law().expect("weighted model");
            w.check(d, generators.len())?;
            let alpha = w.min_weight();
            if !(alpha > 0.0) {
                return hyp(format!("min weight {alpha} violates p_g^s ≥ α > 0"));
            }
            let q = w.max_overlap();
            let alphabet = generators.iter().map(|s| format!("g{s}")).collect();
            weighted_walk(spec, g, alphabet, generators.clone(), w, l0, alpha.powi(l0 as i32), q)
        }
    }
}

fn walk_targets(group: &FiniteGroup, shifts: &[usize]) -> Vec<Vec<usize>> {
    shifts.iter().map(|&s| (0..group.order()).map(|g| group.mul(s, g)).collect()).collect()
}

fn walk_sheet(spec: &ModelSpec, d: usize, alphabet: Vec<String>, l: usize, eps0: f64, q: f64) -> Result<ConstantSheet> {
    if !(q < 1.0) {
        return hyp(format!("F.2 fails: q = {q} violates q < 1 (two labels share a weight row)"));
    }
    let lambda = lambda_from_epsilon0(d, eps0)
        .map_err(|_| Error::Hypothesis(format!("λ = 1 − dε₀ = {} violates λ ∈ (0, 1)", 1.0 - d as f64 * eps0)))?;
    Ok(ConstantSheet {
        model: spec.name().into(),
        dim: d,
        alphabet,
        stationary: StationaryDecl::Unknown,
        rate: RateDecl::Group { lambda, l, d, q },
        esp: EspDecl::Unknown,
        l,
        // Every entry of the L-block label matrix is ≥ ε₀, so any two
        // terminal laws overlap in at least dε₀.
        epsilon: d as f64 * eps0,
        dobrushin: None,
        group: Some(GroupConstants { l, eps0, lambda, q }),
        disordered: false,
        classes: Vec::new(),
    })
}

#[allow(clippy::too_many_arguments)]
fn weighted_walk(
    spec: &ModelSpec,
    group: FiniteGroup,
    alphabet: Vec<String>,
    shifts: Vec<usize>,
    w: WeightLaw,
    l: usize,
    eps0: f64,
    q: f64,
) -> Result<(usize, Field, ConstantSheet, Option<Walk>)> {
    let d = group.order();
    let sheet = walk_sheet(spec, d, alphabet.clone(), l, eps0, q)?;
    let targets = walk_targets(&group, &shifts);
    let field: Field = Arc::new(move |p| walk_instrument(&alphabet, &targets, &w.sample(p, 0)));
    Ok((d, field, sheet, Some(Walk { group, shifts })))
}

/// Instrument validation over sampled environments.
#[derive(Clone, Debug, Serialize)]
pub struct EnvValidation {
    pub n_envs: usize,
    pub max_deviation: f64,
    pub failures: usize,
    pub passed: bool,
}

/// Runs instrument validation on `n_envs` independent environment draws.
pub fn validate_environments(model: &Model, n_envs: usize, seed: u64) -> EnvValidation {
    let mut max_deviation = 0.0f64;
    let mut failures = 0;
    for k in 0..n_envs {
        let env = model.process.reseeded(derive_seed(seed, domain::ENV_DRAW, k as u64));
        let report = env.instrument_at(1).validate();
        max_deviation = max_deviation.max(report.max_deviation);
        failures += usize::from(!report.passed);
        if env.is_deterministic() {
            break;
        }
    }
    EnvValidation { n_envs, max_deviation, failures, passed: failures == 0 }
}

/// Outcome of [`validate_group_hypotheses`].
#[derive(Clone, Debug, Serialize)]
pub struct GroupCheck {
    pub l: usize,
    pub eps0: f64,
    /// Smallest `L`-block label-matrix entry seen.
    pub eps0_observed: f64,
    pub q: f64,
    /// Largest `Σ_a √(w_{a,g} w_{a,gh})` seen, over all `g` and `h ≠ e`.
    pub q_observed: f64,
    pub n_envs: usize,
}

/// Checks F.1 by explicit `L`-block products and F.2 by direct evaluation of
/// the weights, over `n_envs` sampled environments.
pub fn validate_group_hypotheses(model: &Model, n_envs: usize, seed: u64) -> Result<GroupCheck> {
    let (walk, consts) = match (&model.walk, &model.sheet.group) {
        (Some(w), Some(c)) => (w, c),
        _ => return Err(Error::Unsupported(format!("{} is not a group-walk model", model.sheet.model))),
    };
    let g = &walk.group;
    let d = g.order();
    let mut eps0_observed = f64::INFINITY;
    let mut q_observed = 0.0f64;
    for k in 0..n_envs {
        let env = model.process.reseeded(derive_seed(seed, domain::ENV_DRAW, k as u64));
        let window = env.window(1, consts.l);
        let block = label_block_matrix(&window)?;
        for (kk, row) in block.iter().enumerate() {
            for (gg, &x) in row.iter().enumerate() {
                if x < consts.eps0 - 1e-12 {
                    return hyp(format!("F.1 fails: (T_L⋯T_1)[{kk}][{gg}] = {x} < ε₀ = {}", consts.eps0));
                }
                eps0_observed = eps0_observed.min(x);
            }
        }
        let w = recover_weights(&window[0], walk)?;
        for x in 0..d {
            for h in (0..d).filter(|&h| h != g.identity()) {
                let y = g.mul(x, h);
                let s: f64 = (0..walk.shifts.len()).map(|a| (w[x][a] * w[y][a]).sqrt()).sum();
                if s > consts.q + 1e-12 {
                    return hyp(format!("F.2 fails at (g, h) = ({x}, {h}): Σ_a √(w_a,g w_a,gh) = {s} > q = {}", consts.q));
                }
                q_observed = q_observed.max(s);
            }
        }
        if env.is_deterministic() {
            break;
        }
    }
    Ok(GroupCheck { l: consts.l, eps0: consts.eps0, eps0_observed, q: consts.q, q_observed, n_envs })
}

/// Reads `w_{a,g}` back from the Kraus operators, checking that each outcome
/// acts as left multiplication by its group element.
fn recover_weights(inst: &KrausInstrument, walk: &Walk) -> Result<Vec<Vec<f64>>> {
    let d = walk.group.order();
    let mut w = vec![vec![0.0; walk.shifts.len()]; d];
    for (a, &s) in walk.shifts.iter().enumerate() {
        let v = &inst.kraus(a)[0];
        for g in 0..d {
            let target = walk.group.mul(s, g);
            for k in 0..d {
                let x = v[(k, g)].norm_sqr();
                if k == target {
                    w[g][a] = x;
                } else if x > 1e-12 {
                    return hyp(format!("outcome {a} moves label {g} to {k}, not s(a)·g = {target}"));
                }
            }
        }
    }
    for (g, row) in w.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return hyp(format!("weights of label {g} sum to {s}, violating Σ_a w = 1"));
        }
    }
    Ok(w)
}
