//! End-to-end evaluation: degree check, assembly of the total symbol,
//! relation solve, the cocycle at the automorph of the target, and the
//! pairing against the target point.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::binomial;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use greens_core::affinoid::{ActionMode, AffinoidError, LogLaurentFunction};
use greens_core::padic::{Field, PadicScalar, QuadExtScalar};
use greens_core::poly::factorial;
use greens_core::quadforms::{deg_check, unimodular_path, Cusp, FormError, Mat2, QuadForm, RMDivisor, RMPoint};
use greens_core::symbol::{assemble_total, describe_kernel, solve_relations, SymbolContext, SymbolError};

use crate::expr::{compare_expected, AlgebraicExpr, ExprError};

/// Digits below the working precision that the relation solve and the
/// pairing may consume.
pub const LOSS_BUDGET: i64 = 4;

/// Scale applied to the literal pairing sum, fixed once against the first
/// golden value.
pub fn pairing_constant() -> BigRational {
    BigRational::new(BigInt::from(-1), BigInt::from(2))
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("divisor: {0}")]
    Divisor(#[from] FormError),
    #[error("assembly: {0}")]
    Symbol(#[from] SymbolError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] AffinoidError),
    #[error("evaluation: every base cusp collides with an atom at the target")]
    PathThroughAtom,
    #[error("pairing: binomial sum and raising operator disagree (valuation {0})")]
    NormalizationMismatch(i64),
    #[error("expected value: {0}")]
    Expected(#[from] ExprError),
}

#[derive(Clone, Debug)]
pub struct Config {
    pub p: u32,
    pub k: u32,
    /// Target digits `N`.
    pub precision: u32,
    /// Series order `M`.
    pub series_order: usize,
    /// Highest level; `None` stops on the tail valuation.
    pub level_cutoff: Option<u32>,
    pub branch: BigRational,
    pub divisor: RMDivisor,
    pub target: QuadForm,
    pub expected: Option<AlgebraicExpr>,
    pub guard_digits: u32,
}

impl Config {
    pub fn new(p: u32, k: u32, precision: u32, divisor: RMDivisor, target: QuadForm) -> Self {
        Config {
            p,
            k,
            precision,
            series_order: precision as usize + 10,
            level_cutoff: None,
            branch: BigRational::zero(),
            divisor,
            target,
            expected: None,
            guard_digits: 4,
        }
    }

    pub fn n(&self) -> u32 {
        self.k - 2
    }

    pub fn working_field(&self) -> Field {
        Field::new(self.p, self.precision + self.guard_digits)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.p < 3 || !(2..self.p).take_while(|d| d * d <= self.p).all(|d| !self.p.is_multiple_of(d)) {
            return bad(format!("p = {} must be an odd prime", self.p));
        }
        if self.k < 4 || self.k % 2 == 1 {
            return bad(format!("k = {} must be even and at least 4", self.k));
        }
        if self.precision == 0 || self.series_order == 0 {
            return bad("precision and series order must be positive".to_string());
        }
        self.divisor.validate(self.p)?;
        RMDivisor::new(vec![greens_core::quadforms::DivisorComponent {
            multiplicity: 1,
            form: self.target,
            parity: 0,
        }])
        .validate(self.p)?;
        Ok(())
    }

    pub fn branch_scalar(&self, field: &Field) -> PadicScalar {
        field.scalar_big(self.branch.numer()).div(&field.scalar_big(self.branch.denom())).expect("non-zero denominator")
    }

    fn context(&self, branch: &BigRational) -> SymbolContext {
        let field = self.working_field();
        let cfg = Config { branch: branch.clone(), ..self.clone() };
        SymbolContext { field, branch: cfg.branch_scalar(&field), n: self.n(), order: self.series_order }
    }
}

/// The stabiliser of the target in `SL2(Z)` with the target attracting.
pub fn fundamental_gamma(target: &QuadForm) -> Result<Mat2, FormError> {
    target.automorph()
}

/// `J(γ) = Σ_i J{0, ∞} | γ_i^(-1)` over the unimodular path from `base`
/// to `γ base`.
pub fn evaluate_cocycle(
    j: &LogLaurentFunction,
    gamma: &Mat2,
    base: &Cusp,
) -> Result<LogLaurentFunction, AffinoidError> {
    let mut acc = LogLaurentFunction::zero(&j.field, &j.branch, j.n, j.weight, j.order);
    for g in unimodular_path(base, &gamma.act(base)) {
        acc.add_assign(&j.slash(&g.inverse_unimodular(), ActionMode::Exact)?);
    }
    acc.mod_poly = false;
    Ok(acc)
}

fn ratio(field: &Field, r: &BigRational) -> QuadExtScalar {
    field.big_ratio(r.numer(), r.denom())
}

/// Coefficients `b_j` of the literal pairing
/// `Σ_j b_j V^(j)(σ) / (σ - σ̄)^(n/2 - j)`.
pub fn binomial_weights(n: u32) -> Vec<BigRational> {
    let h = n / 2;
    let mid = binomial(BigInt::from(n), BigInt::from(h));
    (0..=h)
        .map(|j| {
            let sign = if j % 2 == 0 { BigInt::one() } else { -BigInt::one() };
            let num = sign * binomial(BigInt::from(n - j), BigInt::from(h - j));
            BigRational::new(num, factorial(j) * &mid)
        })
        .collect()
}

/// Coefficients of `R_(n/2)(σ)` for `R_0 = V`,
/// `R_(m+1) = R_m' + (2 - k + 2m) R_m / (z - σ̄)`, in the same basis as
/// `binomial_weights`.
pub fn raising_weights(n: u32) -> Vec<BigRational> {
    let h = n as usize / 2;
    let k = n as i64 + 2;
    // terms[(j, e)] is the coefficient of V^(j) y^e with y = 1/(z - σ̄).
    let mut terms: Vec<Vec<BigRational>> = vec![vec![BigRational::zero(); h + 2]; h + 2];
    terms[0][0] = BigRational::one();
    for m in 0..h {
        let mut next = vec![vec![BigRational::zero(); h + 2]; h + 2];
        let c = BigRational::from_integer(BigInt::from(2 - k + 2 * m as i64));
        for j in 0..=h {
            for e in 0..=h {
                let t = &terms[j][e];
                if t.is_zero() {
                    continue;
                }
                // d(V^(j) y^e) = V^(j+1) y^e - e V^(j) y^(e+1).
                next[j + 1][e] += t;
                next[j][e + 1] -= t * BigRational::from_integer(BigInt::from(e));
                next[j][e + 1] += t * &c;
            }
        }
        terms = next;
    }
    (0..=h).map(|j| terms[j][h - j].clone()).collect()
}

/// The exact ratio between the raising-operator value and the literal sum.
pub fn raising_ratio(n: u32) -> Option<BigRational> {
    let b = binomial_weights(n);
    let r = raising_weights(n);
    let q = &r[0] / &b[0];
    b.iter().zip(&r).all(|(x, y)| y == &(x * &q)).then_some(q)
}

#[derive(Clone, Debug)]
pub struct Pairing {
    pub binomial: QuadExtScalar,
    pub raising: QuadExtScalar,
    /// `pairing_constant() · binomial`.
    pub value: QuadExtScalar,
}

/// Pairs a weight `-n` function with the target point.
pub fn pair_value(v: &LogLaurentFunction, sigma: &RMPoint) -> Result<Pairing, PipelineError> {
    let field = v.field;
    let n = v.n;
    let h = n as usize / 2;
    let jet = v.eval_jet(&sigma.root, h)?;
    let diff = sigma.root.sub(&sigma.conj_root);
    let inv = diff.inv().map_err(AffinoidError::from)?;
    let combine = |weights: &[BigRational]| {
        let mut acc = field.zero();
        for (j, w) in weights.iter().enumerate() {
            acc = acc.add(&jet[j].mul(&ratio(&field, w)).mul(&inv.pow((h - j) as u64)));
        }
        acc
    };
    let binomial = combine(&binomial_weights(n));
    let raising = combine(&raising_weights(n));
    let q = raising_ratio(n).ok_or(PipelineError::NormalizationMismatch(i64::MIN))?;
    let mismatch = raising.sub(&binomial.mul(&ratio(&field, &q))).valuation();
    if mismatch < binomial.valuation().min(raising.valuation()) + field.precision as i64 - LOSS_BUDGET {
        return Err(PipelineError::NormalizationMismatch(mismatch));
    }
    let value = binomial.mul(&ratio(&field, &pairing_constant()));
    Ok(Pairing { binomial, raising, value })
}

#[derive(Clone, Debug)]
pub struct Report {
    pub deg_check: String,
    pub symmetrized: bool,
    pub increments: Vec<(u32, i64)>,
    pub defect_tail_valuation: i64,
    pub defects: (Vec<QuadExtScalar>, Vec<QuadExtScalar>),
    pub consistency_valuation: i64,
    pub residual_valuation: i64,
    pub kernel: String,
    pub gamma: Mat2,
    pub base_cusp: Cusp,
    pub value: QuadExtScalar,
    pub raising_value: QuadExtScalar,
    pub branch_values: Vec<(BigRational, QuadExtScalar)>,
    pub branch_affinity_valuation: Option<i64>,
    pub agreement: Option<i64>,
    pub tolerance: i64,
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "deg_check: {}", self.deg_check);
        let _ = writeln!(s, "symmetrized: {}", self.symmetrized);
        let levels: Vec<String> = self.increments.iter().map(|(l, v)| format!("{l}:{v}")).collect();
        let _ = writeln!(s, "level_tail_valuations: {}", levels.join(" "));
        let _ = writeln!(s, "defect_tolerance: {}", self.tolerance);
        let _ = writeln!(s, "defect_tail_valuation: {}", self.defect_tail_valuation);
        for (name, d) in [("two_term_defect", &self.defects.0), ("three_term_defect", &self.defects.1)] {
            let coeffs: Vec<String> = d.iter().map(QuadExtScalar::digit_string).collect();
            let _ = writeln!(s, "{name}: {}", coeffs.join(" ; "));
        }
        let _ = writeln!(s, "solve_consistency_valuation: {}", self.consistency_valuation);
        let _ = writeln!(s, "relation_residual_valuation: {}", self.residual_valuation);
        let _ = writeln!(s, "kernel: {}", self.kernel);
        let _ = writeln!(s, "gamma: {}", self.gamma);
        let _ = writeln!(s, "base_cusp: {}", self.base_cusp);
        let _ = writeln!(s, "value: {}", self.value.digit_string());
        let _ = writeln!(s, "raising_value: {}", self.raising_value.digit_string());
        for (l, v) in &self.branch_values {
            let _ = writeln!(s, "value_at_branch[{l}]: {}", v.digit_string());
        }
        if let Some(v) = self.branch_affinity_valuation {
            let _ = writeln!(s, "branch_affinity_valuation: {v}");
        }
        match self.agreement {
            Some(a) => {
                let _ = writeln!(s, "agreement: {a}");
            }
            None => {
                let _ = writeln!(s, "agreement: none");
            }
        }
        s
    }
}

/// The value `J[σ]` for one branch constant together with the
/// intermediate data.
struct Evaluation {
    assembly_increments: Vec<(u32, i64)>,
    symmetrized: bool,
    solve: greens_core::symbol::RelationSolve,
    base: Cusp,
    pairing: Pairing,
}

fn evaluate(cfg: &Config, branch: &BigRational, gamma: &Mat2) -> Result<Evaluation, PipelineError> {
    let ctx = cfg.context(branch);
    let working = ctx.field.precision as i64;
    let max_level = cfg.level_cutoff.unwrap_or(4 * working as u32);
    let assembly = assemble_total(&ctx, &cfg.divisor, cfg.k, max_level, working + 2)?;
    let tolerance = cfg.precision as i64 - LOSS_BUDGET;
    let solve = solve_relations(&assembly.total, tolerance)?;
    let sigma = RMPoint::new(&ctx.field, cfg.target)?;
    let bases = [Cusp::zero(), Cusp::integer(1), Cusp::integer(-1), Cusp::new(1, 2)];
    for base in bases {
        let v = evaluate_cocycle(&solve.corrected, gamma, &base)?;
        match pair_value(&v, &sigma) {
            Ok(pairing) => {
                return Ok(Evaluation {
                    assembly_increments: assembly.increments,
                    symmetrized: assembly.symmetrized,
                    solve,
                    base,
                    pairing,
                })
            }
            Err(PipelineError::Evaluation(AffinoidError::PointCollidesWithAtom)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(PipelineError::PathThroughAtom)
}

/// Runs every stage for `cfg`.
pub fn run_pipeline(cfg: &Config) -> Result<Report, PipelineError> {
    cfg.validate()?;
    let field = cfg.working_field();
    let deg = match deg_check(&cfg.divisor, cfg.k, cfg.p) {
        Ok(()) => "pass".to_string(),
        Err(w) => return Err(PipelineError::Symbol(SymbolError::DegreeObstruction(w))),
    };
    let gamma = fundamental_gamma(&cfg.target)?;
    let main = evaluate(cfg, &cfg.branch, &gamma)?;
    // Branch affinity: the value is affine in the branch constant.
    let mut branch_values = Vec::new();
    for l in [0i64, 1, cfg.p as i64] {
        let b = BigRational::from_integer(BigInt::from(l));
        let v = if b == cfg.branch { main.pairing.value.clone() } else { evaluate(cfg, &b, &gamma)?.pairing.value };
        branch_values.push((b, v));
    }
    let affinity = {
        let (v0, v1, vp) = (&branch_values[0].1, &branch_values[1].1, &branch_values[2].1);
        let slope = v1.sub(v0);
        Some(vp.sub(v0).sub(&slope.mul_int(cfg.p as i64)).valuation())
    };
    let agreement = match &cfg.expected {
        Some(expr) => {
            expr.validate(&field)?;
            Some(compare_expected(&main.pairing.value, expr, &field, &cfg.branch_scalar(&field))?)
        }
        None => None,
    };
    Ok(Report {
        deg_check: deg,
        symmetrized: main.symmetrized,
        increments: main.assembly_increments,
        defect_tail_valuation: main.solve.defect_tail_valuation,
        defects: (main.solve.defects.0.coeffs.clone(), main.solve.defects.1.coeffs.clone()),
        consistency_valuation: main.solve.consistency_valuation,
        residual_valuation: main.solve.residual_valuation,
        kernel: describe_kernel(&main.solve.kernel),
        gamma,
        base_cusp: main.base,
        value: main.pairing.value,
        raising_value: main.pairing.raising,
        branch_values,
        branch_affinity_valuation: affinity,
        agreement,
        tolerance: cfg.precision as i64 - LOSS_BUDGET,
    })
}

/// Level cutoff from the command line: a number or `auto`.
pub fn parse_level_cutoff(s: &str) -> Result<Option<u32>, String> {
    if s == "auto" {
        return Ok(None);
    }
    s.parse::<u32>().map(Some).map_err(|e| format!("level cutoff: {e}"))
}

/// A rational such as `0`, `3` or `-1/2`.
pub fn parse_rational(s: &str) -> Result<BigRational, String> {
    let parse = |t: &str| t.trim().parse::<BigInt>().map_err(|e| format!("rational {s}: {e}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let d = parse(d)?;
            if d.is_zero() {
                return Err(format!("rational {s}: zero denominator"));
            }
            Ok(BigRational::new(parse(n)?, d))
        }
        None => Ok(BigRational::from_integer(parse(s)?)),
    }
}

/// A form written `[a, b, c]`.
pub fn parse_form(s: &str) -> Result<QuadForm, String> {
    let value: serde_json::Value = serde_json::from_str(s).map_err(|e| format!("form {s}: {e}"))?;
    let t = value.as_array().filter(|t| t.len() == 3).ok_or_else(|| format!("form {s}: expected [a, b, c]"))?;
    let get = |v: &serde_json::Value| v.as_i64().ok_or_else(|| format!("form {s}: expected integers"));
    QuadForm::new(get(&t[0])?, get(&t[1])?, get(&t[2])?).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n2_pairing_weights() {
        assert_eq!(binomial_weights(2), vec![BigRational::one(), BigRational::new((-1).into(), 2.into())]);
        assert_eq!(raising_ratio(2), Some(BigRational::from_integer((-2).into())));
    }

    #[test]
    fn raising_ratio_exists_for_higher_weights() {
        for n in [4u32, 6, 8] {
            assert!(raising_ratio(n).is_some(), "n = {n}");
        }
    }

    #[test]
    fn automorph_of_four_phi() {
        let t = QuadForm::new(1, -4, -16).unwrap();
        let g = fundamental_gamma(&t).unwrap();
        assert_eq!(g.det(), 1);
        assert_eq!(t.compose(&g), t);
        let field = Field::new(3, 20);
        let sigma = RMPoint::new(&field, t).unwrap();
        let moved = field
            .int(g.a)
            .mul(&sigma.root)
            .add(&field.int(g.b))
            .div(&field.int(g.c).mul(&sigma.root).add(&field.int(g.d)))
            .unwrap();
        assert!(moved.sub(&sigma.root).valuation() >= 18);
    }

    #[test]
    fn identity_cocycle_is_zero() {
        let field = Field::new(3, 12);
        let mut j = LogLaurentFunction::zero(&field, &PadicScalar::zero(3), 2, -2, 8);
        j.entire[3] = field.int(5);
        let v = evaluate_cocycle(&j, &Mat2::IDENTITY, &Cusp::zero()).unwrap();
        assert!(v.entire.iter().all(QuadExtScalar::is_zero));
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_level_cutoff("auto"), Ok(None));
        assert_eq!(parse_level_cutoff("7"), Ok(Some(7)));
        assert_eq!(parse_rational("-1/2").unwrap(), BigRational::new((-1).into(), 2.into()));
        assert!(parse_rational("1/0").is_err());
        assert_eq!(parse_form("[1,-4,-16]").unwrap(), QuadForm::new(1, -4, -16).unwrap());
        assert!(parse_form("[1,2]").is_err());
    }

    #[test]
    fn config_validation() {
        let t = QuadForm::new(1, -4, -16).unwrap();
        let d = RMDivisor::default();
        assert!(Config::new(3, 4, 10, d.clone(), t).validate().is_ok());
        assert!(Config::new(4, 4, 10, d.clone(), t).validate().is_err());
        assert!(Config::new(3, 5, 10, d.clone(), t).validate().is_err());
        // 3 splits in Q(√13): not inert.
        assert!(Config::new(3, 4, 10, d, QuadForm::new(1, -3, -1).unwrap()).validate().is_err());
    }
}
