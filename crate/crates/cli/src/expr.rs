//! Expected values of the shape `c · log_L(Π ((√m + x)/(√m − x))^e)`,
//! optionally with `c` divided by a square root.

use std::collections::BTreeSet;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use greens_core::padic::{sqrt_hensel, Field, PadicScalar, QuadExtScalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sqrt({0}) does not embed into the working field")]
    NonEmbeddableRoot(i64),
    #[error("expression evaluates to a singular value")]
    Singular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExprFactor {
    pub m: i64,
    pub x: BigRational,
    pub exp: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraicExpr {
    pub prefactor: BigRational,
    /// The prefactor is divided by `√s` when set.
    pub prefactor_sqrt: Option<i64>,
    pub factors: Vec<ExprFactor>,
}

fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let d = BigInt::from_str(d.trim()).ok()?;
            let n = BigInt::from_str(n.trim()).ok()?;
            (!d.is_zero()).then(|| BigRational::new(n, d))
        }
        None => Some(BigRational::from_integer(BigInt::from_str(s).ok()?)),
    }
}

impl FromStr for AlgebraicExpr {
    type Err = ExprError;

    fn from_str(text: &str) -> Result<Self, ExprError> {
        let mut prefactor = None;
        let mut factors = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: &str| ExprError::Parse { line, message: message.to_string() };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, rest) = content.split_once(':').ok_or_else(|| err("expected `key: value`"))?;
            match key.trim() {
                "prefactor" => {
                    let rest = rest.trim();
                    let (rat, root) = match rest.split_once("/sqrt:") {
                        Some((r, s)) => (r, Some(s.trim().parse::<i64>().map_err(|_| err("bad square root"))?)),
                        None => (rest, None),
                    };
                    let value = parse_rational(rat).ok_or_else(|| err("bad rational prefactor"))?;
                    if matches!(root, Some(s) if s <= 0) {
                        return Err(err("prefactor root must be positive"));
                    }
                    prefactor = Some((value, root));
                }
                "factor" => {
                    let (mut m, mut x, mut exp) = (None, None, None);
                    for part in rest.split_whitespace() {
                        let (k, v) = part.split_once('=').ok_or_else(|| err("expected key=value"))?;
                        match k {
                            "m" => m = Some(v.parse::<i64>().map_err(|_| err("bad m"))?),
                            "x" => x = Some(parse_rational(v).ok_or_else(|| err("bad x"))?),
                            "exp" => exp = Some(v.parse::<i64>().map_err(|_| err("bad exp"))?),
                            _ => return Err(err("unknown factor field")),
                        }
                    }
                    let (Some(m), Some(x), Some(exp)) = (m, x, exp) else {
                        return Err(err("factor needs m, x and exp"));
                    };
                    factors.push(ExprFactor { m, x, exp });
                }
                _ => return Err(err("unknown key")),
            }
        }
        let (prefactor, prefactor_sqrt) =
            prefactor.ok_or(ExprError::Parse { line: 0, message: "missing prefactor".to_string() })?;
        Ok(AlgebraicExpr { prefactor, prefactor_sqrt, factors })
    }
}

fn root_of(field: &Field, m: i64) -> Result<QuadExtScalar, ExprError> {
    sqrt_hensel(field, &BigInt::from(m)).map_err(|_| ExprError::NonEmbeddableRoot(m))
}

impl AlgebraicExpr {
    fn roots(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self.factors.iter().map(|f| f.m).collect();
        set.into_iter().collect()
    }

    /// Checks that every square root embeds.
    pub fn validate(&self, field: &Field) -> Result<(), ExprError> {
        for m in self.roots() {
            root_of(field, m)?;
        }
        if let Some(s) = self.prefactor_sqrt {
            root_of(field, s)?;
        }
        Ok(())
    }

    /// The value for one choice of sign per square root, in the order of
    /// the sorted distinct radicands, then the prefactor root.
    pub fn evaluate(&self, field: &Field, branch: &PadicScalar, signs: &[bool]) -> Result<QuadExtScalar, ExprError> {
        let roots = self.roots();
        let mut prod = field.one();
        for f in &self.factors {
            let pos = roots.iter().position(|m| *m == f.m).expect("root listed");
            let mut r = root_of(field, f.m)?;
            if signs[pos] {
                r = r.neg();
            }
            let x = field.big_ratio(f.x.numer(), f.x.denom());
            let base = r.add(&x).div(&r.sub(&x)).map_err(|_| ExprError::Singular)?;
            prod = prod.mul(&base.powi(f.exp).map_err(|_| ExprError::Singular)?);
        }
        let log = if self.factors.is_empty() {
            field.zero()
        } else {
            prod.log_branch(branch).map_err(|_| ExprError::Singular)?
        };
        let mut value = log.mul(&field.big_ratio(self.prefactor.numer(), self.prefactor.denom()));
        if let Some(s) = self.prefactor_sqrt {
            let mut r = root_of(field, s)?;
            if signs[roots.len()] {
                r = r.neg();
            }
            value = value.div(&r).map_err(|_| ExprError::Singular)?;
        }
        Ok(value)
    }

    /// Values under every embedding of the square roots.
    pub fn embeddings(&self, field: &Field, branch: &PadicScalar) -> Result<Vec<QuadExtScalar>, ExprError> {
        let count = self.roots().len() + usize::from(self.prefactor_sqrt.is_some());
        let mut out = Vec::with_capacity(1 << count);
        for mask in 0..(1u32 << count) {
            let signs: Vec<bool> = (0..count).map(|i| mask & (1 << i) != 0).collect();
            out.push(self.evaluate(field, branch, &signs)?);
        }
        Ok(out)
    }
}

/// Largest `v_p(value - expected)` over the embeddings of the expression.
pub fn compare_expected(
    value: &QuadExtScalar,
    expr: &AlgebraicExpr,
    field: &Field,
    branch: &PadicScalar,
) -> Result<i64, ExprError> {
    Ok(expr.embeddings(field, branch)?.iter().map(|e| value.sub(e).valuation()).max().unwrap_or(i64::MIN))
}

impl Default for AlgebraicExpr {
    fn default() -> Self {
        AlgebraicExpr { prefactor: BigRational::one(), prefactor_sqrt: None, factors: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A1: &str = "prefactor: 1/40\nfactor: m=-1 x=2 exp=5\nfactor: m=-1 x=5 exp=-26\n";

    #[test]
    fn parses_lines() {
        let e: AlgebraicExpr = A1.parse().unwrap();
        assert_eq!(e.prefactor, BigRational::new(1.into(), 40.into()));
        assert_eq!(e.prefactor_sqrt, None);
        assert_eq!(e.factors.len(), 2);
        assert_eq!(e.factors[1], ExprFactor { m: -1, x: BigRational::from_integer(5.into()), exp: -26 });
        let r: AlgebraicExpr = "prefactor: 1/sqrt:160\nfactor: m=-10 x=4 exp=2".parse().unwrap();
        assert_eq!(r.prefactor_sqrt, Some(160));
        assert_eq!(r.prefactor, BigRational::one());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!("factor: m=-1 x=2 exp=5".parse::<AlgebraicExpr>().is_err());
        assert!("prefactor: 1/0".parse::<AlgebraicExpr>().is_err());
        assert!("prefactor: 1\nfactor: m=-1 x=2".parse::<AlgebraicExpr>().is_err());
        assert!("prefactor: 1\nbogus: 3".parse::<AlgebraicExpr>().is_err());
    }

    #[test]
    fn log_of_one_matches_zero() {
        let f = Field::new(3, 20);
        let e = AlgebraicExpr::default();
        assert!(compare_expected(&f.zero(), &e, &f, &PadicScalar::zero(3)).unwrap() > 1000);
    }

    #[test]
    fn embeddings_differ_by_sign() {
        let f = Field::new(3, 20);
        let e: AlgebraicExpr = A1.parse().unwrap();
        let vals = e.embeddings(&f, &PadicScalar::zero(3)).unwrap();
        assert_eq!(vals.len(), 2);
        assert!(vals[0].add(&vals[1]).valuation() >= 18);
        assert!(compare_expected(&vals[1], &e, &f, &PadicScalar::zero(3)).unwrap() >= 18);
    }

    #[test]
    fn radicand_divisible_by_p_is_rejected() {
        let f = Field::new(3, 20);
        let e: AlgebraicExpr = "prefactor: 1\nfactor: m=-3 x=1 exp=1".parse().unwrap();
        assert_eq!(e.validate(&f), Err(ExprError::NonEmbeddableRoot(-3)));
    }
}
