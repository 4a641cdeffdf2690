//! Modular symbols valued in functions on the affinoid: the level
//! recursion over residue classes, assembly of the total symbol, and the
//! two- and three-term relation solve.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::affinoid::{AffinoidError, IrrationalAtom, LogLaurentFunction};
use crate::padic::{Field, PadicScalar, QuadExtScalar};
use crate::poly::{payload_of_form, PolyError, PolyN};
use crate::quadforms::{
    combine_atoms, crossing_forms, deg_check, level0_atoms, level1_atoms, unimodular_path, Atom, Cusp, DegWitness,
    FormError, Mat2, RMDivisor, RMPoint, Residue,
};

type K = QuadExtScalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("divisor is not of strong degree zero: {0}")]
    DegreeObstruction(DegWitness),
    #[error("relation defects are not polynomials (non-polynomial valuation {valuation}, tolerance {tolerance})")]
    NotPrincipal { valuation: i64, tolerance: i64 },
    #[error(transparent)]
    Affinoid(#[from] AffinoidError),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Atoms on `{0, ∞}` at one level, split by residue class.
pub type AtomFamily = BTreeMap<Residue, Vec<Atom>>;

/// The residue classes `0, ..., p - 1, ∞` in a fixed order.
pub fn classes(p: u32) -> Vec<Residue> {
    (0..p).map(Residue::Finite).chain(std::iter::once(Residue::Infinity)).collect()
}

/// `g · c` on `P^1(F_p)`.
pub fn class_action(g: &Mat2, c: Residue, p: u32) -> Residue {
    let p = p as i64;
    let (num, den) = match c {
        Residue::Finite(a) => (g.a * a as i64 + g.b, g.c * a as i64 + g.d),
        Residue::Infinity => (g.a, g.c),
        Residue::Off => return Residue::Off,
    };
    let (num, den) = (num.rem_euclid(p), den.rem_euclid(p));
    if den == 0 {
        return Residue::Infinity;
    }
    let inv = (1..p).find(|x| (x * den) % p == 1).expect("p prime");
    Residue::Finite(((num * inv) % p) as u32)
}

/// Level `l + 1` atoms from level `l >= 1` atoms of the same stream.
///
/// Finite class `a`: the points `a + p x` for atoms `x` of `{-a/p, ∞}`
/// outside the disk at infinity. Class `∞`: `x / p` for atoms of
/// `{0, ∞}` outside the disk at zero.
pub fn next_level_atoms(prev: &AtomFamily, p: u32) -> AtomFamily {
    let pi = p as i64;
    let mut out = AtomFamily::new();
    for a in 0..pi {
        let mut moved = Vec::new();
        let shift = Mat2::new(pi, a, 0, 1);
        for g in unimodular_path(&Cusp::new(-a, pi), &Cusp::Infinity) {
            for (class, atoms) in prev {
                if class_action(&g, *class, p) == Residue::Infinity {
                    continue;
                }
                for x in atoms {
                    let form = x.form.transport(&g).transport(&shift);
                    moved.push(Atom { form, weight: x.weight });
                }
            }
        }
        out.insert(Residue::Finite(a as u32), combine_atoms(moved));
    }
    let shrink = Mat2::new(1, 0, 0, pi);
    let moved = prev
        .iter()
        .filter(|(class, _)| **class != Residue::Finite(0))
        .flat_map(|(_, atoms)| atoms.iter().map(|x| Atom { form: x.form.transport(&shrink), weight: x.weight }));
    out.insert(Residue::Infinity, combine_atoms(moved));
    out
}

fn negate_atoms(atoms: &[Atom]) -> Vec<Atom> {
    atoms.iter().map(|a| Atom { form: a.form, weight: -a.weight }).collect()
}

/// Level-0 atoms of the two streams: `D` feeds even levels and `-ϖD`
/// odd ones.
pub fn stream_seeds(divisor: &RMDivisor) -> (Vec<Atom>, Vec<Atom>) {
    (level0_atoms(divisor, 0), level0_atoms(divisor, 1))
}

/// True when the odd stream is the negative of the even one, so a single
/// recursion serves both.
pub fn is_symmetrized(divisor: &RMDivisor) -> bool {
    let (even, odd) = stream_seeds(divisor);
    negate_atoms(&even) == odd
}

/// Harmonic atom data at `level >= 1` by recursion.
pub fn harmonic_atoms(divisor: &RMDivisor, level: u32, p: u32) -> AtomFamily {
    assert!(level >= 1, "level 0 atoms are not split by class");
    let (even, odd) = stream_seeds(divisor);
    // Level l uses the stream whose seed has the parity of l; the seed
    // itself is the partner of level 1.
    let seed = if level % 2 == 1 { odd } else { even };
    let mut fam = level1_atoms(&seed, p);
    for _ in 1..level {
        fam = next_level_atoms(&fam, p);
    }
    fam
}

/// Direct enumeration: crossing forms of discriminant `D0 p^(2l)` whose
/// descent to level 0 lies in a component class of matching parity.
pub fn enumerate_harmonic_atoms(divisor: &RMDivisor, level: u32, p: u32) -> AtomFamily {
    let pi = p as i64;
    let mut out: AtomFamily = classes(p).into_iter().map(|c| (c, Vec::new())).collect();
    let parity = (level % 2) as u8;
    let mut discs: Vec<i64> = divisor.components.iter().filter(|c| c.parity == parity).map(|c| c.form.disc()).collect();
    discs.sort();
    discs.dedup();
    for d0 in discs {
        let disc = d0 * pi.pow(2 * level);
        for q in crossing_forms(disc) {
            let class = q.root_residue(p);
            let mut low = q;
            for _ in 0..level {
                let step = match low.root_residue(p) {
                    Residue::Finite(a) => Mat2::new(1, -(a as i64), 0, pi),
                    Residue::Infinity => Mat2::new(pi, 0, 0, 1),
                    Residue::Off => break,
                };
                low = low.transport(&step);
            }
            if low.disc() != d0 {
                continue;
            }
            let mut weight = 0;
            for comp in divisor.components.iter().filter(|c| c.parity == parity && c.form.disc() == d0) {
                if low.same_class(&comp.form).expect("equal discriminants") {
                    weight += comp.multiplicity * q.intersection_sign();
                }
            }
            if weight != 0 {
                out.get_mut(&class).expect("class present").push(Atom { form: q, weight });
            }
        }
    }
    for atoms in out.values_mut() {
        *atoms = combine_atoms(atoms.drain(..));
    }
    out
}

/// Parameters shared by every function in a computation.
#[derive(Clone, Debug)]
pub struct SymbolContext {
    pub field: Field,
    pub branch: PadicScalar,
    pub n: u32,
    pub order: usize,
}

impl SymbolContext {
    pub fn zero(&self) -> LogLaurentFunction {
        let mut f = LogLaurentFunction::zero(&self.field, &self.branch, self.n, -(self.n as i64), self.order);
        f.mod_poly = true;
        f
    }

    fn weighted_payload(&self, atom: &Atom) -> Result<PolyN, SymbolError> {
        Ok(payload_of_form(&self.field, &atom.form, self.n)?.scale_int(atom.weight))
    }

    /// Atoms of one class absorbed into their removed disk.
    pub fn absorbed(&self, atoms: &[Atom]) -> Result<LogLaurentFunction, SymbolError> {
        let mut f = self.zero();
        for atom in atoms {
            let pt = RMPoint::new(&self.field, atom.form)?;
            f.atom_absorb(&pt.root, &self.weighted_payload(atom)?)?;
        }
        Ok(f)
    }
}

/// The level-0 symbol: atoms at RM points of the affinoid interior.
#[derive(Clone, Debug)]
pub struct Level0Symbol {
    pub atoms: Vec<Atom>,
    pub function: LogLaurentFunction,
}

impl Level0Symbol {
    pub fn new(ctx: &SymbolContext, atoms: Vec<Atom>) -> Result<Self, SymbolError> {
        let mut irr = Vec::with_capacity(atoms.len());
        for atom in &atoms {
            let pt = RMPoint::new(&ctx.field, atom.form)?;
            irr.push(IrrationalAtom { root: pt.root, form: Some(atom.form), payload: ctx.weighted_payload(atom)? });
        }
        let function = LogLaurentFunction::from_atoms(&ctx.field, &ctx.branch, ctx.n, ctx.order, irr)?;
        Ok(Level0Symbol { atoms, function })
    }
}

/// `F^(a)_l{0, ∞}` for every class `a`, modulo polynomials.
#[derive(Clone, Debug)]
pub struct SymbolFamily {
    pub level: u32,
    pub components: BTreeMap<Residue, LogLaurentFunction>,
}

impl SymbolFamily {
    /// Level 1 from the level-0 atoms of the partner stream.
    pub fn level_one(ctx: &SymbolContext, partner: &[Atom]) -> Result<Self, SymbolError> {
        let mut components = BTreeMap::new();
        for (class, atoms) in level1_atoms(partner, ctx.field.p) {
            components.insert(class, ctx.absorbed(&atoms)?);
        }
        Ok(SymbolFamily { level: 1, components })
    }

    pub fn from_atoms(ctx: &SymbolContext, level: u32, fam: &AtomFamily) -> Result<Self, SymbolError> {
        let mut components = BTreeMap::new();
        for class in classes(ctx.field.p) {
            let atoms = fam.get(&class).cloned().unwrap_or_default();
            components.insert(class, ctx.absorbed(&atoms)?);
        }
        Ok(SymbolFamily { level, components })
    }

    pub fn total(&self) -> Option<LogLaurentFunction> {
        let mut it = self.components.values();
        let mut acc = it.next()?.clone();
        for f in it {
            acc.add_assign(f);
        }
        Some(acc)
    }

    pub fn negate(&self) -> Self {
        SymbolFamily { level: self.level, components: self.components.iter().map(|(k, v)| (*k, v.neg())).collect() }
    }

    /// Smallest surviving coefficient valuation over the components.
    pub fn valuation(&self) -> i64 {
        self.components.values().map(LogLaurentFunction::series_valuation).min().unwrap_or(i64::MAX)
    }

    /// Per-level checkpoint text: one block per class in the affinoid dump
    /// format.
    pub fn dump(&self) -> String {
        let mut s = format!("level: {}\n", self.level);
        for (class, f) in &self.components {
            let label = match class {
                Residue::Finite(a) => a.to_string(),
                _ => "inf".to_string(),
            };
            s.push_str(&format!("class: {label}\n"));
            s.push_str(&f.dump());
        }
        s
    }
}

/// `F{r, s}` per class: `Σ_i F^(c){0, ∞}` moved by each path matrix `γ_i`,
/// filed under the class `γ_i c`.
pub fn symbol_eval(
    ctx: &SymbolContext,
    family: &SymbolFamily,
    r: &Cusp,
    s: &Cusp,
) -> Result<BTreeMap<Residue, LogLaurentFunction>, SymbolError> {
    let p = ctx.field.p;
    let mut out: BTreeMap<Residue, LogLaurentFunction> = BTreeMap::new();
    for g in unimodular_path(r, s) {
        for (class, f) in &family.components {
            let moved = f.transport(&g)?;
            let target = class_action(&g, *class, p);
            match out.get_mut(&target) {
                Some(acc) => acc.add_assign(&moved),
                None => {
                    out.insert(target, moved);
                }
            }
        }
    }
    Ok(out)
}

/// The total of `symbol_eval` over all classes.
pub fn symbol_eval_total(
    ctx: &SymbolContext,
    family: &SymbolFamily,
    r: &Cusp,
    s: &Cusp,
) -> Result<LogLaurentFunction, SymbolError> {
    let mut acc = ctx.zero();
    for f in symbol_eval(ctx, family, r, s)?.values() {
        acc.add_assign(f);
    }
    Ok(acc)
}

/// Level `l + 1` of the partner stream from level `l >= 1`.
pub fn recursion_step(ctx: &SymbolContext, family: &SymbolFamily) -> Result<SymbolFamily, SymbolError> {
    let p = ctx.field.p;
    let pi = p as i64;
    let mut components = BTreeMap::new();
    for a in 0..pi {
        let mut gathered = ctx.zero();
        for (class, f) in symbol_eval(ctx, family, &Cusp::new(-a, pi), &Cusp::Infinity)? {
            if class != Residue::Infinity {
                gathered.add_assign(&f);
            }
        }
        components.insert(Residue::Finite(a as u32), gathered.transport(&Mat2::new(pi, a, 0, 1))?);
    }
    let mut gathered = ctx.zero();
    for (class, f) in &family.components {
        if *class != Residue::Finite(0) {
            gathered.add_assign(f);
        }
    }
    components.insert(Residue::Infinity, gathered.transport(&Mat2::new(1, 0, 0, pi))?);
    Ok(SymbolFamily { level: family.level + 1, components })
}

/// The assembled total symbol `T` modulo polynomials.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub total: LogLaurentFunction,
    /// `(level, valuation of that level's contribution)`.
    pub increments: Vec<(u32, i64)>,
    pub symmetrized: bool,
}

/// `T = F_0 + Σ_(l >= 1) Σ_a F^(a)_l`, stopping once a level contributes
/// nothing above `stop_valuation` or at `max_level`.
pub fn assemble_total(
    ctx: &SymbolContext,
    divisor: &RMDivisor,
    k: u32,
    max_level: u32,
    stop_valuation: i64,
) -> Result<Assembly, SymbolError> {
    let p = ctx.field.p;
    if divisor.is_empty() {
        return Ok(Assembly { total: ctx.zero(), increments: Vec::new(), symmetrized: true });
    }
    deg_check(divisor, k, p).map_err(SymbolError::DegreeObstruction)?;
    let (even, odd) = stream_seeds(divisor);
    let symmetrized = negate_atoms(&even) == odd;
    let mut total = Level0Symbol::new(ctx, even.clone())?.function;
    let mut increments = Vec::new();
    // Stream seeded by the even atoms: its level-l family serves level l
    // when l is even (or always, negated at odd l, when symmetrized).
    let mut from_even = if max_level >= 1 { Some(SymbolFamily::level_one(ctx, &even)?) } else { None };
    let mut from_odd = if max_level >= 1 && !symmetrized { Some(SymbolFamily::level_one(ctx, &odd)?) } else { None };
    for level in 1..=max_level {
        let contribution = if symmetrized {
            let fam = from_even.as_ref().expect("stream present");
            if level % 2 == 1 {
                fam.negate()
            } else {
                fam.clone()
            }
        } else if level % 2 == 1 {
            from_odd.clone().expect("stream present")
        } else {
            from_even.clone().expect("stream present")
        };
        let v = contribution.valuation();
        increments.push((level, v));
        if let Some(t) = contribution.total() {
            total.add_assign(&t);
        }
        if v >= stop_valuation || level == max_level {
            break;
        }
        from_even = Some(recursion_step(ctx, from_even.as_ref().expect("stream present"))?);
        if let Some(fam) = from_odd.as_ref() {
            from_odd = Some(recursion_step(ctx, fam)?);
        }
    }
    Ok(Assembly { total, increments, symmetrized })
}

/// `z^i | h` at weight `-n` for an integer matrix of determinant one, as
/// integer coefficients: `(az + b)^i (cz + d)^(n - i)`.
fn monomial_slash(n: u32, i: u32, h: &Mat2) -> Vec<BigInt> {
    let lin = |x: i64, y: i64, e: u32| -> Vec<BigInt> {
        // (x z + y)^e
        let mut out = vec![BigInt::one()];
        for _ in 0..e {
            let mut next = vec![BigInt::zero(); out.len() + 1];
            for (j, c) in out.iter().enumerate() {
                next[j] += c * y;
                next[j + 1] += c * x;
            }
            out = next;
        }
        out
    };
    let a = lin(h.a, h.b, i);
    let b = lin(h.c, h.d, n - i);
    let mut out = vec![BigInt::zero(); n as usize + 1];
    for (x, ca) in a.iter().enumerate() {
        for (y, cb) in b.iter().enumerate() {
            out[x + y] += ca * cb;
        }
    }
    out
}

const U2: Mat2 = Mat2 { a: -1, b: 1, c: -1, d: 0 };

/// The relation operators `P ↦ P + P|S` and `P ↦ P + P|U + P|U²` stacked
/// into a `2(n+1) × (n+1)` rational matrix.
pub fn relation_matrix(n: u32) -> Vec<Vec<BigRational>> {
    let size = n as usize + 1;
    let mut rows = vec![vec![BigRational::zero(); size]; 2 * size];
    for i in 0..=n {
        let col = i as usize;
        rows[col][col] += BigRational::one();
        rows[size + col][col] += BigRational::one();
        for (j, c) in monomial_slash(n, i, &Mat2::S).into_iter().enumerate() {
            rows[j][col] += BigRational::from_integer(c);
        }
        for h in [Mat2::U, U2] {
            for (j, c) in monomial_slash(n, i, &h).into_iter().enumerate() {
                rows[size + j][col] += BigRational::from_integer(c);
            }
        }
    }
    rows
}

/// Result of resolving the polynomial ambiguity.
#[derive(Clone, Debug)]
pub struct RelationSolve {
    pub corrected: LogLaurentFunction,
    pub correction: PolyN,
    /// Polynomial parts of `T + T|S` and `T + T|U + T|U²`.
    pub defects: (PolyN, PolyN),
    /// Smallest valuation among the non-polynomial parts of the defects.
    pub defect_tail_valuation: i64,
    /// Basis of the polynomials annihilated by both relations.
    pub kernel: Vec<Vec<BigRational>>,
    /// Valuation of the inconsistent part of the linear system.
    pub consistency_valuation: i64,
    /// Valuation of the relations applied to the corrected symbol.
    pub residual_valuation: i64,
    pub principal: bool,
}

fn defects(t: &LogLaurentFunction) -> Result<(LogLaurentFunction, LogLaurentFunction), SymbolError> {
    use crate::affinoid::ActionMode::Exact;
    let mut base = t.clone();
    base.mod_poly = false;
    let r1 = base.add(&base.slash(&Mat2::S, Exact)?);
    let r2 = base.add(&base.slash(&Mat2::U, Exact)?).add(&base.slash(&U2, Exact)?);
    Ok((r1, r2))
}

fn poly_part(f: &LogLaurentFunction) -> PolyN {
    PolyN::from_coeffs(&f.field, f.n, f.entire[..=f.n as usize].to_vec())
}

fn ratio_to_k(field: &Field, r: &BigRational) -> K {
    field.big_ratio(r.numer(), r.denom())
}

/// Solves `Q + Q|S = R1`, `Q + Q|U + Q|U² = R2` for `Q ∈ P_n` by exact
/// elimination on the rational matrix; free variables are set to zero.
pub fn solve_polynomial_relations(
    field: &Field,
    n: u32,
    r1: &PolyN,
    r2: &PolyN,
) -> (PolyN, Vec<Vec<BigRational>>, i64) {
    let size = n as usize + 1;
    let mut a = relation_matrix(n);
    let mut rhs: Vec<K> = r1.coeffs.iter().chain(r2.coeffs.iter()).cloned().collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..size {
        let Some(pr) = (row..a.len()).find(|&r| !a[r][col].is_zero()) else { continue };
        a.swap(row, pr);
        rhs.swap(row, pr);
        let pivot = a[row][col].clone();
        for x in a[row].iter_mut() {
            *x = &*x / &pivot;
        }
        rhs[row] = rhs[row].mul(&ratio_to_k(field, &(BigRational::one() / &pivot)));
        for r in 0..a.len() {
            if r == row || a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone();
            let pivot_row = a[row].clone();
            for (x, y) in a[r].iter_mut().zip(&pivot_row) {
                *x = &*x - &factor * y;
            }
            rhs[r] = rhs[r].sub(&rhs[row].mul(&ratio_to_k(field, &factor)));
        }
        pivots.push(col);
        row += 1;
    }
    let mut q = vec![field.zero(); size];
    for (r, col) in pivots.iter().enumerate() {
        q[*col] = rhs[r].clone();
    }
    let consistency = rhs[row..].iter().map(QuadExtScalar::valuation).min().unwrap_or(i64::MAX);
    let mut kernel = Vec::new();
    for free in (0..size).filter(|c| !pivots.contains(c)) {
        let mut v = vec![BigRational::zero(); size];
        v[free] = BigRational::one();
        for (r, col) in pivots.iter().enumerate() {
            v[*col] = -a[r][free].clone();
        }
        kernel.push(v);
    }
    (PolyN::from_coeffs(field, n, q), kernel, consistency)
}

/// Checks that both defects of `T` are polynomials to `tolerance` and
/// removes the polynomial ambiguity.
pub fn solve_relations(t: &LogLaurentFunction, tolerance: i64) -> Result<RelationSolve, SymbolError> {
    let (r1, r2) = defects(t)?;
    let tail = r1.series_valuation().min(r2.series_valuation());
    let principal = tail >= tolerance;
    if !principal {
        return Err(SymbolError::NotPrincipal { valuation: tail, tolerance });
    }
    let (p1, p2) = (poly_part(&r1), poly_part(&r2));
    let (correction, kernel, consistency) = solve_polynomial_relations(&t.field, t.n, &p1, &p2);
    let mut corrected = t.add_poly(&correction.neg());
    corrected.mod_poly = false;
    let (c1, c2) = defects(&corrected)?;
    let residual = c1
        .series_valuation()
        .min(c2.series_valuation())
        .min(poly_part(&c1).valuation())
        .min(poly_part(&c2).valuation());
    Ok(RelationSolve {
        corrected,
        correction,
        defects: (p1, p2),
        defect_tail_valuation: tail,
        kernel,
        consistency_valuation: consistency,
        residual_valuation: residual,
        principal,
    })
}

/// Rational kernel vector as a polynomial over `K`.
pub fn kernel_poly(field: &Field, n: u32, v: &[BigRational]) -> PolyN {
    PolyN::from_coeffs(field, n, v.iter().map(|c| ratio_to_k(field, c)).collect())
}

/// Human-readable kernel basis, e.g. `-1 + z^2`.
pub fn describe_kernel(kernel: &[Vec<BigRational>]) -> String {
    if kernel.is_empty() {
        return "0".to_string();
    }
    kernel
        .iter()
        .map(|v| {
            let terms: Vec<String> = v
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_zero())
                .map(|(i, c)| match i {
                    0 => format!("{c}"),
                    1 => format!("{c}*z"),
                    _ => format!("{c}*z^{i}"),
                })
                .collect();
            let s = terms.join(" + ");
            if v.iter().any(|c| c.is_negative()) {
                s.replace("+ -", "- ")
            } else {
                s
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadforms::{DivisorComponent, QuadForm};
    use proptest::prelude::*;

    fn comp(m: i64, f: (i64, i64, i64), parity: u8) -> DivisorComponent {
        DivisorComponent { multiplicity: m, form: QuadForm::new(f.0, f.1, f.2).unwrap(), parity }
    }

    fn ctx(precision: u32, order: usize) -> SymbolContext {
        SymbolContext { field: Field::new(3, precision), branch: PadicScalar::zero(3), n: 2, order }
    }

    fn oracle_divisors() -> Vec<RMDivisor> {
        vec![
            RMDivisor::new(vec![comp(1, (1, -1, -1), 0)]).symmetrize(),
            RMDivisor::new(vec![comp(1, (1, 0, -2), 0)]).symmetrize(),
            RMDivisor::new(vec![comp(2, (1, -1, -1), 1), comp(1, (1, 0, -2), 0)]),
        ]
    }

    #[test]
    fn class_action_matches_moebius() {
        assert_eq!(class_action(&Mat2::S, Residue::Finite(0), 3), Residue::Infinity);
        assert_eq!(class_action(&Mat2::S, Residue::Infinity, 3), Residue::Finite(0));
        assert_eq!(class_action(&Mat2::S, Residue::Finite(1), 3), Residue::Finite(2));
        assert_eq!(class_action(&Mat2::new(1, 1, 0, 1), Residue::Finite(2), 3), Residue::Finite(0));
        assert_eq!(class_action(&Mat2::new(2, 1, 1, 1), Residue::Finite(1), 5), Residue::Finite(4));
    }

    #[test]
    fn recursion_matches_enumeration() {
        for d in oracle_divisors() {
            for level in 1..=3 {
                let rec = harmonic_atoms(&d, level, 3);
                let direct = enumerate_harmonic_atoms(&d, level, 3);
                let total: usize = direct.values().map(Vec::len).sum();
                assert!(total > 0, "empty oracle at level {level}");
                assert_eq!(rec, direct, "level {level} for {d:?}");
            }
        }
    }

    #[test]
    fn symmetrized_streams_are_opposite() {
        let d = RMDivisor::new(vec![comp(9, (1, -1, -1), 0), comp(-2, (1, 0, -5), 0)]).symmetrize();
        assert!(is_symmetrized(&d));
        let (even, odd) = stream_seeds(&d);
        let from_even = level1_atoms(&even, 3);
        let from_odd = level1_atoms(&odd, 3);
        for (class, atoms) in from_even {
            assert_eq!(negate_atoms(&atoms), from_odd[&class]);
        }
    }

    fn same_mod_poly(a: &LogLaurentFunction, b: &LogLaurentFunction, digits: i64) -> bool {
        let diff = a.sub(b);
        diff.series_valuation() >= digits
    }

    #[test]
    fn function_recursion_matches_absorbed_atoms() {
        let c = ctx(16, 30);
        for d in oracle_divisors() {
            let (even, _) = stream_seeds(&d);
            let one = SymbolFamily::level_one(&c, &even).unwrap();
            let two = recursion_step(&c, &one).unwrap();
            let three = recursion_step(&c, &two).unwrap();
            // Even-seeded stream reaches level 2 through the partner seed
            // convention: compare with the recursion on atoms directly.
            let atoms_two = next_level_atoms(&level1_atoms(&even, 3), 3);
            let atoms_three = next_level_atoms(&atoms_two, 3);
            let want_two = SymbolFamily::from_atoms(&c, 2, &atoms_two).unwrap();
            let want_three = SymbolFamily::from_atoms(&c, 3, &atoms_three).unwrap();
            for class in classes(3) {
                assert!(same_mod_poly(&two.components[&class], &want_two.components[&class], 12), "level 2 {class:?}");
                assert!(
                    same_mod_poly(&three.components[&class], &want_three.components[&class], 12),
                    "level 3 {class:?}"
                );
            }
        }
    }

    #[test]
    fn relation_kernel_is_z2_minus_1() {
        let f = Field::new(3, 20);
        let zero = PolyN::zero(&f, 2);
        let (q, kernel, consistency) = solve_polynomial_relations(&f, 2, &zero, &zero);
        assert!(q.is_zero());
        assert!(consistency > 15);
        assert_eq!(kernel.len(), 1);
        let v = &kernel[0];
        assert_eq!(v[1], BigRational::zero());
        assert_eq!(v[0], -v[2].clone());
        assert_eq!(describe_kernel(&kernel), "-1 + 1*z^2");
    }

    #[test]
    fn relation_solve_recovers_coboundary_defects() {
        // Defects of a polynomial Q are solved back to Q modulo the kernel.
        let f = Field::new(3, 20);
        let q = PolyN::from_coeffs(&f, 2, vec![f.int(4), f.int(-7), f.int(2)]);
        let apply = |h: &Mat2| q.slash(h);
        let r1 = q.add(&apply(&Mat2::S));
        let r2 = q.add(&apply(&Mat2::U)).add(&apply(&U2));
        let (sol, kernel, consistency) = solve_polynomial_relations(&f, 2, &r1, &r2);
        assert!(consistency >= 15);
        let diff = q.sub(&sol);
        let k = kernel_poly(&f, 2, &kernel[0]);
        // diff = c (z^2 - 1) for c = diff's z^2 coefficient.
        let c = diff.coeffs[2].div(&k.coeffs[2]).unwrap();
        assert!(diff.sub(&k.scale(&c)).valuation() >= 15);
    }

    #[test]
    fn orientation_reversal_cancels() {
        let c = ctx(14, 24);
        let d = oracle_divisors().remove(0);
        let (even, _) = stream_seeds(&d);
        let one = SymbolFamily::level_one(&c, &even).unwrap();
        let fwd = symbol_eval_total(&c, &one, &Cusp::zero(), &Cusp::Infinity).unwrap();
        let back = symbol_eval_total(&c, &one, &Cusp::Infinity, &Cusp::zero()).unwrap();
        assert!(fwd.add(&back).series_valuation() >= 10);
    }

    #[test]
    fn assembling_the_empty_divisor_gives_zero() {
        let c = ctx(10, 10);
        let out = assemble_total(&c, &RMDivisor::default(), 4, 5, 10).unwrap();
        assert!(out.total.series_valuation() > 1000);
        assert!(out.increments.is_empty());
    }

    #[test]
    fn unbalanced_divisor_is_rejected() {
        let c = ctx(10, 10);
        let d = RMDivisor::new(vec![comp(1, (1, -1, -1), 0)]);
        assert!(matches!(assemble_total(&c, &d, 4, 3, 10), Err(SymbolError::DegreeObstruction(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        /// `F{r, t} = F{r, s} + F{s, t}` modulo polynomials.
        #[test]
        fn path_additivity(rn in -6i64..6, rd in 1i64..5, sn in -6i64..6, sd in 1i64..5) {
            let c = ctx(12, 20);
            let d = oracle_divisors().remove(0);
            let (even, _) = stream_seeds(&d);
            let one = SymbolFamily::level_one(&c, &even).unwrap();
            let (r, s) = (Cusp::new(rn, rd), Cusp::new(sn, sd));
            let whole = symbol_eval_total(&c, &one, &r, &Cusp::Infinity).unwrap();
            let split = symbol_eval_total(&c, &one, &r, &s)
                .unwrap()
                .add(&symbol_eval_total(&c, &one, &s, &Cusp::Infinity).unwrap());
            prop_assert!(whole.sub(&split).series_valuation() >= 8);
        }
    }
}
