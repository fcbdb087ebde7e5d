//! Regularization coefficients and their dependence on class count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four entropy-regularization coefficients.
///
/// `lambda0` weights the pretext term; `lambda1..lambda3` weight the
/// mean-entropy, pointwise-cross and mean-cross clustering terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaVector {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LambdaVector {
    pub const fn new(lambda0: f64, lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda0,
            lambda1,
            lambda2,
            lambda3,
        }
    }

    /// Plain clustering objective: only the mean-entropy term, weight 5.
    pub const fn baseline() -> Self {
        Self::new(0.0, 5.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.lambda0, self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn with_lambda3(self, lambda3: f64) -> Self {
        Self { lambda3, ..self }
    }

    /// Same vector with the pointwise-cross coefficient negated, for probing
    /// the opposite sign convention of that term.
    pub fn with_flipped_lambda2(self) -> Self {
        Self {
            lambda2: -self.lambda2,
            ..self
        }
    }
}

impl fmt::Display for LambdaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.lambda0, self.lambda1, self.lambda2, self.lambda3
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LambdaError {
    #[error("cannot parse growth rule `{0}`")]
    BadRule(String),
    #[error("template needs four comma-separated rules, got {0}")]
    RuleCount(usize),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("bad series `{spec}`: {reason}")]
    BadSeries { spec: String, reason: String },
}

/// How one coefficient scales with the class count `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthRule {
    Zero,
    Constant(f64),
    SqrtN(f64),
    N(f64),
    NSqrtN(f64),
    InvN(f64),
    InvSqrtN(f64),
    InvNSquared(f64),
}

impl GrowthRule {
    pub fn eval(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            GrowthRule::Zero => 0.0,
            GrowthRule::Constant(c) => c,
            GrowthRule::SqrtN(c) => c * n.sqrt(),
            GrowthRule::N(c) => c * n,
            GrowthRule::NSqrtN(c) => c * n * n.sqrt(),
            GrowthRule::InvN(c) => c / n,
            GrowthRule::InvSqrtN(c) => c / n.sqrt(),
            GrowthRule::InvNSquared(c) => c / (n * n),
        }
    }
}

impl fmt::Display for GrowthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GrowthRule::Zero => write!(f, "0"),
            GrowthRule::Constant(c) => write!(f, "{c}"),
            GrowthRule::SqrtN(c) => write!(f, "{c}*sqrt(n)"),
            GrowthRule::N(c) => write!(f, "{c}*n"),
            GrowthRule::NSqrtN(c) => write!(f, "{c}*n*sqrt(n)"),
            GrowthRule::InvN(c) => write!(f, "{c}/n"),
            GrowthRule::InvSqrtN(c) => write!(f, "{c}/sqrt(n)"),
            GrowthRule::InvNSquared(c) => write!(f, "{c}/n^2"),
        }
    }
}

impl FromStr for GrowthRule {
    type Err = LambdaError;

    /// Accepts `0`, `c`, `c*sqrt(n)`, `c*n`, `c*n*sqrt(n)`, `c/n`,
    /// `c/sqrt(n)` and `c/n^2`, ignoring whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || LambdaError::BadRule(s.to_string());
        let coef = |text: &str| text.parse::<f64>().ok().filter(|c| c.is_finite());

        if let Some(c) = coef(&compact) {
            return Ok(if c == 0.0 {
                GrowthRule::Zero
            } else {
                GrowthRule::Constant(c)
            });
        }
        if let Some((c, rest)) = compact.split_once('/') {
            let c = coef(c).ok_or_else(bad)?;
            return match rest {
                "n" => Ok(GrowthRule::InvN(c)),
                "sqrt(n)" => Ok(GrowthRule::InvSqrtN(c)),
                "n^2" => Ok(GrowthRule::InvNSquared(c)),
                _ => Err(bad()),
            };
        }
        if let Some((c, rest)) = compact.split_once('*') {
            let c = coef(c).ok_or_else(bad)?;
            return match rest {
                "sqrt(n)" => Ok(GrowthRule::SqrtN(c)),
                "n" => Ok(GrowthRule::N(c)),
                "n*sqrt(n)" => Ok(GrowthRule::NSqrtN(c)),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

/// A named set of growth rules, one per coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTemplate {
    pub id: String,
    pub rules: [GrowthRule; 4],
}

impl LambdaTemplate {
    /// Built-in templates, addressable by id.
    pub fn builtins() -> Vec<LambdaTemplate> {
        use GrowthRule::*;
        let t = |id: &str, rules| LambdaTemplate {
            id: id.to_string(),
            rules,
        };
        vec![
            t("baseline", [Zero, Constant(5.0), Zero, Zero]),
            t("pointwise", [Zero, Constant(5.0), Constant(4.0), Zero]),
            t(
                "constant",
                [Constant(2.0), Constant(5.0), Constant(4.0), Constant(8.0)],
            ),
            t(
                "constant-low",
                [Constant(2.0), Constant(5.0), Constant(4.0), Constant(4.0)],
            ),
            t(
                "sqrt-spring",
                [Constant(2.0), Constant(5.0), SqrtN(4.0), InvN(-8.0)],
            ),
            t(
                "inverse-square",
                [Constant(2.0), Constant(5.0), InvNSquared(0.25), InvN(0.5)],
            ),
            t(
                "inverse-sqrt",
                [Constant(2.0), Constant(5.0), InvN(0.25), InvSqrtN(0.5)],
            ),
        ]
    }

    pub fn builtin(id: &str) -> Option<LambdaTemplate> {
        Self::builtins().into_iter().find(|t| t.id == id)
    }

    /// Resolves a built-in id, or parses four comma-separated rules such as
    /// `"2, 5, 4*sqrt(n), -8/n"`.
    pub fn resolve(spec: &str) -> Result<LambdaTemplate, LambdaError> {
        if let Some(t) = Self::builtin(spec.trim()) {
            return Ok(t);
        }
        if !spec.contains(',') {
            return Err(LambdaError::UnknownTemplate(spec.trim().to_string()));
        }
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 4 {
            return Err(LambdaError::RuleCount(parts.len()));
        }
        let mut rules = [GrowthRule::Zero; 4];
        for (slot, part) in rules.iter_mut().zip(&parts) {
            *slot = part.parse()?;
        }
        Ok(LambdaTemplate {
            id: spec.trim().to_string(),
            rules,
        })
    }
}

/// Coefficients of `template` at class count `n` (expected `n >= 2`).
pub fn eval_template(template: &LambdaTemplate, n: usize) -> LambdaVector {
    let [a, b, c, d] = template.rules;
    LambdaVector::new(a.eval(n), b.eval(n), c.eval(n), d.eval(n))
}

/// Copies of `base` whose `lambda3` runs through `start * ratio^i` for
/// `i` in `0..count`.
pub fn geometric_lambda3_series(
    base: LambdaVector,
    start: f64,
    ratio: f64,
    count: usize,
) -> Vec<LambdaVector> {
    let mut out = Vec::with_capacity(count);
    let mut value = start;
    for _ in 0..count {
        out.push(base.with_lambda3(value));
        value *= ratio;
    }
    out
}

/// Parsed form of a series string such as
/// `"geometric base=4 ratio=2 count=4"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSpec {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

impl SeriesSpec {
    pub fn expand(&self, base: LambdaVector) -> Vec<LambdaVector> {
        geometric_lambda3_series(base, self.start, self.ratio, self.count)
    }
}

impl FromStr for SeriesSpec {
    type Err = LambdaError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| LambdaError::BadSeries {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let mut words = spec.split_whitespace();
        if words.next() != Some("geometric") {
            return Err(fail("only `geometric` series are supported"));
        }
        let (mut start, mut ratio, mut count) = (None, None, None);
        for word in words {
            let (key, value) = word
                .split_once('=')
                .ok_or_else(|| fail("expected key=value pairs"))?;
            let bad_value = || fail(&format!("bad value for `{key}`"));
            match key {
                "base" => {
                    start = Some(
                        value
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(bad_value)?,
                    )
                }
                "ratio" => {
                    ratio = Some(
                        value
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(bad_value)?,
                    )
                }
                "count" => count = Some(value.parse::<usize>().map_err(|_| bad_value())?),
                _ => return Err(fail(&format!("unknown key `{key}`"))),
            }
        }
        let count = count.ok_or_else(|| fail("missing count"))?;
        if count == 0 {
            return Err(fail("count must be at least 1"));
        }
        Ok(SeriesSpec {
            start: start.ok_or_else(|| fail("missing base"))?,
            ratio: ratio.ok_or_else(|| fail("missing ratio"))?,
            count,
        })
    }
}

impl fmt::Display for SeriesSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "geometric base={} ratio={} count={}",
            self.start, self.ratio, self.count
        )
    }
}
