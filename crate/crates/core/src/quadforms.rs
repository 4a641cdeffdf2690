//! Indefinite binary quadratic forms, their roots in `K`, and RM-divisors.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::{Integer, Roots};
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::padic::{legendre, sqrt_hensel, Field, PadicError, QuadExtScalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormError {
    #[error("form {0} is not indefinite")]
    NotIndefinite(QuadForm),
    #[error("form {0} has a square discriminant")]
    SquareDiscriminant(QuadForm),
    #[error("form {0} is not primitive")]
    NotPrimitive(QuadForm),
    #[error("discriminants {0} and {1} differ")]
    DiscMismatch(i64, i64),
    #[error("no Pell solution found for discriminant {0}")]
    PellFailure(i64),
    #[error("form {form} is not inert at p = {p}")]
    NotInert { form: QuadForm, p: u32 },
    #[error("form {form} does not have level 0 at p = {p}")]
    NotLevelZero { form: QuadForm, p: u32 },
    #[error("malformed divisor: {0}")]
    MalformedDivisor(String),
    #[error(transparent)]
    Padic(#[from] PadicError),
}

/// A 2x2 integer matrix `[[a, b], [c, d]]` acting by Möbius transformations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mat2 {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 { a: 1, b: 0, c: 0, d: 1 };
    /// `z -> -1/z`.
    pub const S: Mat2 = Mat2 { a: 0, b: -1, c: 1, d: 0 };
    /// `z -> 1/(1 - z)`, of order three in `PSL2(Z)`.
    pub const U: Mat2 = Mat2 { a: 0, b: 1, c: -1, d: 1 };

    pub const fn new(a: i64, b: i64, c: i64, d: i64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn det(&self) -> i64 {
        self.a * self.d - self.b * self.c
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    /// The adjugate `[[d, -b], [-c, a]]`, equal to `det * inverse`.
    pub fn adjugate(&self) -> Mat2 {
        Mat2 { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    /// Inverse of a determinant-one matrix.
    pub fn inverse_unimodular(&self) -> Mat2 {
        debug_assert_eq!(self.det(), 1);
        self.adjugate()
    }

    pub fn trace(&self) -> i64 {
        self.a + self.d
    }

    pub fn act(&self, x: &Cusp) -> Cusp {
        match x {
            Cusp::Infinity => Cusp::new(self.a, self.c),
            Cusp::Rational(n, m) => Cusp::new(self.a * n + self.b * m, self.c * n + self.d * m),
        }
    }

    /// The representative of `±self` with `c > 0`, or `c = 0` and `d > 0`.
    pub fn normalized_sign(&self) -> Mat2 {
        if self.c < 0 || (self.c == 0 && self.d < 0) {
            Mat2 { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
        } else {
            *self
        }
    }

    pub fn pow(&self, e: u32) -> Mat2 {
        (0..e).fold(Mat2::IDENTITY, |acc, _| acc.mul(self))
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// A point of `P^1(Q)`: `num/den` in lowest terms with `den > 0`, or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cusp {
    Rational(i64, i64),
    Infinity,
}

impl Cusp {
    pub fn new(num: i64, den: i64) -> Cusp {
        if den == 0 {
            assert!(num != 0, "0/0 is not a cusp");
            return Cusp::Infinity;
        }
        let g = num.gcd(&den);
        let s = den.signum();
        Cusp::Rational(s * num / g, s * den / g)
    }

    pub fn zero() -> Cusp {
        Cusp::Rational(0, 1)
    }

    pub fn integer(n: i64) -> Cusp {
        Cusp::Rational(n, 1)
    }
}

impl fmt::Display for Cusp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cusp::Infinity => write!(f, "oo"),
            Cusp::Rational(n, 1) => write!(f, "{n}"),
            Cusp::Rational(n, d) => write!(f, "{n}/{d}"),
        }
    }
}

/// `a x^2 + b x y + c y^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuadForm {
    pub a: i64,
    pub b: i64,
    pub c: i64,
}

impl fmt::Display for QuadForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.a, self.b, self.c)
    }
}

fn is_square(n: i64) -> bool {
    n >= 0 && {
        let r = n.sqrt();
        r * r == n
    }
}

impl QuadForm {
    /// A primitive form of positive non-square discriminant.
    pub fn new(a: i64, b: i64, c: i64) -> Result<Self, FormError> {
        let f = QuadForm { a, b, c };
        let d = f.disc();
        if d <= 0 {
            return Err(FormError::NotIndefinite(f));
        }
        if is_square(d) {
            return Err(FormError::SquareDiscriminant(f));
        }
        if a.gcd(&b).gcd(&c) != 1 {
            return Err(FormError::NotPrimitive(f));
        }
        Ok(f)
    }

    pub fn disc(&self) -> i64 {
        self.b * self.b - 4 * self.a * self.c
    }

    pub fn neg(&self) -> QuadForm {
        QuadForm { a: -self.a, b: -self.b, c: -self.c }
    }

    pub fn eval(&self, x: i64, y: i64) -> i64 {
        self.a * x * x + self.b * x * y + self.c * y * y
    }

    /// Coefficients of `Q(T, 1)`, lowest degree first.
    pub fn dehomogenized(&self) -> [i64; 3] {
        [self.c, self.b, self.a]
    }

    /// `Q(a x + b y, c x + d y)`.
    pub fn compose(&self, m: &Mat2) -> QuadForm {
        let (a, b, c) = (self.a as i128, self.b as i128, self.c as i128);
        let (p, q, r, s) = (m.a as i128, m.b as i128, m.c as i128, m.d as i128);
        let na = a * p * p + b * p * r + c * r * r;
        let nb = 2 * a * p * q + b * (p * s + q * r) + 2 * c * r * s;
        let nc = a * q * q + b * q * s + c * s * s;
        QuadForm { a: na as i64, b: nb as i64, c: nc as i64 }
    }

    /// Divides out the (positive) content.
    pub fn primitive_part(&self) -> QuadForm {
        let g = self.a.gcd(&self.b).gcd(&self.c);
        QuadForm { a: self.a / g, b: self.b / g, c: self.c / g }
    }

    /// The form whose positive root is `m` applied to the positive root of
    /// `self`, for `det m > 0`.
    pub fn transport(&self, m: &Mat2) -> QuadForm {
        debug_assert!(m.det() > 0);
        self.compose(&m.adjugate()).primitive_part()
    }

    pub fn is_reduced(&self) -> bool {
        let s = self.disc().sqrt();
        let two_a = 2 * self.a.abs();
        self.b > 0 && self.b <= s && s < two_a + self.b && two_a - self.b <= s
    }

    /// One reduction step `(a, b, c) -> (c, r, (r^2 - D)/(4c))`, the action
    /// of `[[0, -1], [1, t]]`.
    fn rho(&self) -> QuadForm {
        let d = self.disc();
        let s = d.sqrt();
        let c = self.c;
        let m = 2 * c.abs();
        let r = if c.abs() > s {
            // -|c| < r <= |c|
            let mut r = (-self.b).mod_floor(&m);
            if r > c.abs() {
                r -= m;
            }
            r
        } else {
            // sqrt(D) - 2|c| < r < sqrt(D)
            let lo = s + 1 - m;
            lo + (-self.b - lo).mod_floor(&m)
        };
        QuadForm { a: c, b: r, c: (r * r - d) / (4 * c) }
    }

    /// The cycle of reduced forms properly equivalent to `self`.
    pub fn reduce_cycle(&self) -> Vec<QuadForm> {
        let mut f = *self;
        let mut guard = 0;
        while !f.is_reduced() {
            f = f.rho();
            guard += 1;
            assert!(guard < 10_000, "reduction failed to terminate for {self}");
        }
        let start = f;
        let mut cycle = vec![start];
        loop {
            f = f.rho();
            if f == start {
                break;
            }
            cycle.push(f);
        }
        cycle
    }

    /// Proper (`SL2(Z)`) equivalence.
    pub fn same_class(&self, other: &QuadForm) -> Result<bool, FormError> {
        if self.disc() != other.disc() {
            return Err(FormError::DiscMismatch(self.disc(), other.disc()));
        }
        let target = other.reduce_cycle()[0];
        Ok(self.reduce_cycle().contains(&target))
    }

    /// `(w, w̄)·(0, ∞)`: `sign(a)` for crossing forms, else 0.
    pub fn intersection_sign(&self) -> i64 {
        if self.a.signum() * self.c.signum() < 0 {
            self.a.signum()
        } else {
            0
        }
    }

    /// The `SL2(Z)` stabilizer of the positive root with that root as its
    /// attracting fixed point.
    pub fn automorph(&self) -> Result<Mat2, FormError> {
        let d = self.disc();
        let (t, y) = pell_fundamental(d)?;
        let (t, y) = (t as i128, y as i128);
        let (a, b, c) = (self.a as i128, self.b as i128, self.c as i128);
        let fit = |x: i128| i64::try_from(x).map_err(|_| FormError::PellFailure(d));
        let g = Mat2 { a: fit((t - b * y) / 2)?, b: fit(-c * y)?, c: fit(a * y)?, d: fit((t + b * y) / 2)? };
        debug_assert_eq!(g.det(), 1);
        debug_assert_eq!(self.compose(&g), *self);
        // c·τ + d = (t + y√D)/2 > 1, so τ attracts.
        Ok(g)
    }

    /// `l` with `D = D0 p^(2l)`, `p ∤ D0`, or `None` when the p-part of the
    /// discriminant has odd exponent.
    pub fn level(&self, p: u32) -> Option<u32> {
        let mut d = self.disc();
        let p = p as i64;
        let mut v = 0;
        while d % p == 0 {
            d /= p;
            v += 1;
        }
        (v % 2 == 0).then_some(v / 2)
    }

    /// True when `p` is inert in the quadratic field of the discriminant.
    pub fn is_inert(&self, p: u32) -> bool {
        match self.level(p) {
            None => false,
            Some(l) => {
                let d0 = self.disc() / (p as i64).pow(2 * l);
                legendre(&BigInt::from(d0), p) == -1
            }
        }
    }

    /// The form has `w ≡ ∞ mod p`, i.e. `p | a`, in the reading of the root
    /// `(-b + √D)/(2a)`.
    pub fn root_residue(&self, p: u32) -> Residue {
        let p = p as i64;
        if self.a % p == 0 {
            return Residue::Infinity;
        }
        // w ≡ r iff Q(r, 1) ≡ 0 mod p for an inert-at-level->=1 point; at
        // level 0 no rational residue exists.
        for r in 0..p {
            if self.eval(r, 1).rem_euclid(p) == 0 {
                return Residue::Finite(r as u32);
            }
        }
        Residue::Off
    }
}

/// Reduction of a root modulo `p` in `P^1(F_p)`, or off every rational disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Residue {
    Finite(u32),
    Infinity,
    Off,
}

/// Fundamental solution `(t, y)`, `t, y > 0`, of `t^2 - D y^2 = 4`.
///
/// Expands the continued fraction of `ω = (b0 + √D)/2`, `b0 ≡ D mod 2`.
/// A convergent `h/k` gives `h - kω = (t - k√D)/2` with `t = 2h - b0 k`;
/// the first one of norm one is fundamental.
pub fn pell_fundamental(d: i64) -> Result<(i64, i64), FormError> {
    if d <= 0 || is_square(d) {
        return Err(FormError::PellFailure(d));
    }
    let dd = d as i128;
    let s = d.sqrt() as i128;
    let b0 = dd.rem_euclid(2);
    // ξ = (P + √D)/Q, reduced, so Q stays positive.
    let (mut pp, mut qq) = (b0, 2i128);
    let (mut h_prev, mut h) = (1i128, 0i128);
    let (mut k_prev, mut k) = (0i128, 1i128);
    for _ in 0..100_000 {
        let a = (pp + s).div_euclid(qq);
        let nh = a.checked_mul(h_prev).and_then(|x| x.checked_add(h));
        let nk = a.checked_mul(k_prev).and_then(|x| x.checked_add(k));
        let (Some(nh), Some(nk)) = (nh, nk) else {
            return Err(FormError::PellFailure(d));
        };
        h = h_prev;
        k = k_prev;
        h_prev = nh;
        k_prev = nk;
        pp = a * qq - pp;
        qq = (dd - pp * pp) / qq;
        let t = 2 * h_prev - b0 * k_prev;
        let y = k_prev;
        if t.checked_mul(t).zip(y.checked_mul(y).and_then(|v| v.checked_mul(dd))).is_some_and(|(t2, dy2)| t2 - dy2 == 4)
        {
            return i64::try_from(t).ok().zip(i64::try_from(y).ok()).ok_or(FormError::PellFailure(d));
        }
    }
    Err(FormError::PellFailure(d))
}

/// Squarefree part `d` and cofactor `f` with `D = f^2 d`.
pub fn squarefree_decomposition(disc: i64) -> (i64, i64) {
    let mut d = disc;
    let mut f = 1;
    let mut q = 2;
    while q * q <= d.abs() {
        while d % (q * q) == 0 {
            d /= q * q;
            f *= q;
        }
        q += 1;
    }
    (d, f)
}

/// All primitive forms of discriminant `disc` with `ac < 0`: those whose
/// geodesic crosses `(0, ∞)`.
pub fn crossing_forms(disc: i64) -> Vec<QuadForm> {
    let s = disc.sqrt();
    let mut out = Vec::new();
    for b in -s..=s {
        if (b - disc).rem_euclid(2) != 0 {
            continue;
        }
        let ac = (b * b - disc) / 4;
        debug_assert!(ac < 0);
        let m = -ac;
        for a in 1..=m {
            if m % a != 0 {
                continue;
            }
            let c = m / a;
            for (sa, sc) in [(a, -c), (-a, c)] {
                if sa.gcd(&b).gcd(&sc) == 1 {
                    out.push(QuadForm { a: sa, b, c: sc });
                }
            }
        }
    }
    out.sort();
    out
}

/// A form (the exact RM point) with an integer multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub form: QuadForm,
    pub weight: i64,
}

/// Adds up atoms at equal points and drops cancelled ones.
pub fn combine_atoms(atoms: impl IntoIterator<Item = Atom>) -> Vec<Atom> {
    let mut acc: BTreeMap<QuadForm, i64> = BTreeMap::new();
    for a in atoms {
        *acc.entry(a.form).or_insert(0) += a.weight;
    }
    acc.into_iter().filter(|(_, w)| *w != 0).map(|(form, weight)| Atom { form, weight }).collect()
}

/// An RM point embedded in `K`: the positive root `(-b + √D)/(2a)` and its
/// conjugate, where `√D = f √d` for the squarefree part `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RMPoint {
    pub form: QuadForm,
    pub root: QuadExtScalar,
    pub conj_root: QuadExtScalar,
}

/// `√D` under the pinned embedding, `f · sqrt_hensel(d)`.
pub fn sqrt_disc(field: &Field, disc: i64) -> Result<QuadExtScalar, FormError> {
    let (d, f) = squarefree_decomposition(disc);
    Ok(sqrt_hensel(field, &BigInt::from(d))?.mul_int(f))
}

impl RMPoint {
    pub fn new(field: &Field, form: QuadForm) -> Result<Self, FormError> {
        if !form.is_inert(field.p) {
            return Err(FormError::NotInert { form, p: field.p });
        }
        // Extra digits absorb the valuation of 2a.
        let wide = field.with_precision(
            field.precision + 2 * crate::padic::valuation_of_int(&BigInt::from(form.a), field.p).unwrap_or(0) + 2,
        );
        let sq = sqrt_disc(&wide, form.disc())?;
        let minus_b = wide.int(-form.b);
        let two_a = 2 * form.a;
        let root = minus_b.add(&sq).div_int(two_a);
        let conj_root = minus_b.sub(&sq).div_int(two_a);
        Ok(RMPoint { form, root, conj_root })
    }
}

/// One summand of an RM-divisor. Parity 1 marks `μ [p τ]`; in particular
/// `ϖ[τ] = -[pτ]` is stored as multiplicity `-1` with parity 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DivisorComponent {
    pub multiplicity: i64,
    pub form: QuadForm,
    pub parity: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RMDivisor {
    pub components: Vec<DivisorComponent>,
}

impl RMDivisor {
    pub fn new(components: Vec<DivisorComponent>) -> Self {
        RMDivisor { components }
    }

    /// `D + ϖD`, applied to the parity-0 part.
    pub fn symmetrize(&self) -> RMDivisor {
        let mut comps = self.components.clone();
        for c in &self.components {
            if c.parity == 0 {
                comps.push(DivisorComponent { multiplicity: -c.multiplicity, form: c.form, parity: 1 });
            }
        }
        RMDivisor { components: comps }
    }

    pub fn is_empty(&self) -> bool {
        self.components.iter().all(|c| c.multiplicity == 0)
    }

    /// Checks every class representative is primitive, inert and of level 0.
    pub fn validate(&self, p: u32) -> Result<(), FormError> {
        for c in &self.components {
            let f = QuadForm::new(c.form.a, c.form.b, c.form.c)?;
            if f.level(p) != Some(0) {
                return Err(FormError::NotLevelZero { form: f, p });
            }
            if !f.is_inert(p) {
                return Err(FormError::NotInert { form: f, p });
            }
            if c.parity > 1 {
                return Err(FormError::MalformedDivisor(format!("parity {} for {}", c.parity, f)));
            }
        }
        Ok(())
    }

    /// Parses `[[m, [a, b, c]], ...]`, where an entry may carry a trailing
    /// parity or be an object `{"multiplicity", "form", "parity"}`.
    pub fn parse_json(text: &str) -> Result<RMDivisor, FormError> {
        let bad = |m: &str| FormError::MalformedDivisor(m.to_string());
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let entries = value.as_array().ok_or_else(|| bad("expected a list"))?;
        let int = |v: &serde_json::Value| v.as_i64().ok_or_else(|| bad("expected an integer"));
        let form = |v: &serde_json::Value| -> Result<QuadForm, FormError> {
            let t = v.as_array().filter(|t| t.len() == 3).ok_or_else(|| bad("expected [a, b, c]"))?;
            QuadForm::new(int(&t[0])?, int(&t[1])?, int(&t[2])?)
        };
        let mut comps = Vec::new();
        for e in entries {
            let comp = if let Some(arr) = e.as_array() {
                if arr.len() < 2 || arr.len() > 3 {
                    return Err(bad("expected [m, [a, b, c]] or [m, [a, b, c], parity]"));
                }
                let parity = if arr.len() == 3 { int(&arr[2])? } else { 0 };
                DivisorComponent { multiplicity: int(&arr[0])?, form: form(&arr[1])?, parity: parity as u8 }
            } else if let Some(obj) = e.as_object() {
                let m = obj.get("multiplicity").ok_or_else(|| bad("missing multiplicity"))?;
                let f = obj.get("form").ok_or_else(|| bad("missing form"))?;
                let parity = obj.get("parity").map(int).transpose()?.unwrap_or(0);
                DivisorComponent { multiplicity: int(m)?, form: form(f)?, parity: parity as u8 }
            } else {
                return Err(bad("entries must be lists or objects"));
            };
            if comp.parity > 1 {
                return Err(bad("parity must be 0 or 1"));
            }
            comps.push(comp);
        }
        Ok(RMDivisor { components: comps })
    }
}

/// Level-0 atoms on `{0, ∞}` of the components with the given parity: every
/// crossing form in the class, weighted by multiplicity times intersection
/// sign. For parity 1 these are the atoms of the `[τ]` entering the partner
/// stream.
pub fn level0_atoms(divisor: &RMDivisor, parity: u8) -> Vec<Atom> {
    let mut atoms = Vec::new();
    let mut cache: BTreeMap<i64, Vec<QuadForm>> = BTreeMap::new();
    for comp in divisor.components.iter().filter(|c| c.parity == parity) {
        let disc = comp.form.disc();
        let forms = cache.entry(disc).or_insert_with(|| crossing_forms(disc));
        for g in forms.iter() {
            if g.same_class(&comp.form).expect("equal discriminants") {
                atoms.push(Atom { form: *g, weight: comp.multiplicity * g.intersection_sign() });
            }
        }
    }
    combine_atoms(atoms)
}

/// A vertex of the tree adjacent to or equal to the base vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Vertex {
    Base,
    Neighbor(Residue),
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Base => write!(f, "v0"),
            Vertex::Neighbor(Residue::Finite(a)) => write!(f, "v0->{a}"),
            Vertex::Neighbor(_) => write!(f, "v0->oo"),
        }
    }
}

/// A non-vanishing degree polynomial: `coeffs / √d` (or without the root
/// when `sqrt_part == 1`), coefficients lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct DegWitness {
    pub vertex: Vertex,
    pub sqrt_part: i64,
    pub coeffs: Vec<BigRational>,
}

impl fmt::Display for DegWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> =
            self.coeffs.iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(i, c)| format!("({c})*T^{i}")).collect();
        if self.sqrt_part == 1 {
            write!(f, "{}: {}", self.vertex, terms.join(" + "))
        } else {
            write!(f, "{}: ({}) / sqrt({})", self.vertex, terms.join(" + "), self.sqrt_part)
        }
    }
}

/// Exact payload sum `Σ weight · Q(T,1)^(n/2) / √D^(n/2)`, grouped by the
/// squarefree part that remains under the root.
pub fn payload_sum_exact(atoms: &[Atom], n: u32) -> BTreeMap<i64, Vec<BigRational>> {
    let half = n / 2;
    let mut groups: BTreeMap<i64, Vec<BigRational>> = BTreeMap::new();
    for atom in atoms {
        let (d, f) = squarefree_decomposition(atom.form.disc());
        // √D^(half) = f^half · d^(half/2) · (√d if half odd).
        let key = if half % 2 == 1 { d } else { 1 };
        let denom = BigInt::from(f).pow(half) * BigInt::from(d).pow(half / 2);
        let q = atom.form.dehomogenized();
        let mut poly = vec![BigInt::one()];
        for _ in 0..half {
            let mut next = vec![BigInt::zero(); poly.len() + 2];
            for (i, c) in poly.iter().enumerate() {
                for (j, qj) in q.iter().enumerate() {
                    next[i + j] += c * qj;
                }
            }
            poly = next;
        }
        let entry = groups.entry(key).or_insert_with(|| vec![BigRational::zero(); n as usize + 1]);
        for (i, c) in poly.into_iter().enumerate() {
            entry[i] += BigRational::new(c * atom.weight, denom.clone());
        }
    }
    groups
}

/// Level-1 atoms on `{0, ∞}` produced from level-0 atoms of the partner
/// stream, split by the residue class of the new points.
///
/// For a finite class `a` the points are `a + p x` for level-0 atoms `x` of
/// `{-a/p, ∞}`; for `∞` they are `x / p` for atoms `x` of `{0, ∞}`.
pub fn level1_atoms(partner_level0: &[Atom], p: u32) -> BTreeMap<Residue, Vec<Atom>> {
    let mut out = BTreeMap::new();
    let pi = p as i64;
    for a in 0..pi {
        let src = transport_atoms(partner_level0, &Cusp::new(-a, pi), &Cusp::Infinity);
        let shift = Mat2::new(pi, a, 0, 1);
        let moved: Vec<Atom> = src.iter().map(|x| Atom { form: x.form.transport(&shift), weight: x.weight }).collect();
        out.insert(Residue::Finite(a as u32), combine_atoms(moved));
    }
    let shrink = Mat2::new(1, 0, 0, pi);
    let moved: Vec<Atom> =
        partner_level0.iter().map(|x| Atom { form: x.form.transport(&shrink), weight: x.weight }).collect();
    out.insert(Residue::Infinity, combine_atoms(moved));
    out
}

/// Atoms on `{r, s}` from atoms on `{0, ∞}` by moving along a unimodular
/// path: each piece `γ{0, ∞}` contributes `γ` applied to every atom.
pub fn transport_atoms(atoms: &[Atom], r: &Cusp, s: &Cusp) -> Vec<Atom> {
    let mut out = Vec::new();
    for g in unimodular_path(r, s) {
        out.extend(atoms.iter().map(|x| Atom { form: x.form.transport(&g), weight: x.weight }));
    }
    combine_atoms(out)
}

/// Matrices `γ_i ∈ SL2(Z)` with `{r, s} = Σ_i γ_i {0, ∞}` as modular
/// symbols, built from continued-fraction convergents.
pub fn unimodular_path(r: &Cusp, s: &Cusp) -> Vec<Mat2> {
    if r == s {
        return Vec::new();
    }
    // {r, s} = {r, ∞} + {∞, s}; a reversed piece γ{∞, 0} is (γS){0, ∞}.
    let mut out: Vec<Mat2> = path_from_infinity(r).into_iter().rev().map(|g| g.mul(&Mat2::S)).collect();
    out.extend(path_from_infinity(s));
    out.iter().map(Mat2::normalized_sign).collect()
}

/// Pieces of `{∞, x}` in order, each `γ{0, ∞} = {p_(j-1)/q_(j-1), p_j/q_j}`.
fn path_from_infinity(x: &Cusp) -> Vec<Mat2> {
    let (mut num, mut den) = match x {
        Cusp::Infinity => return Vec::new(),
        Cusp::Rational(n, d) => (*n, *d),
    };
    let (mut p_prev, mut q_prev, mut p, mut q) = (1i64, 0i64, 0i64, 1i64);
    let mut first = true;
    let mut out = Vec::new();
    loop {
        let a = num.div_euclid(den);
        let (np, nq) = if first { (a, 1) } else { (a * p + p_prev, a * q + q_prev) };
        let (pp, qp) = if first { (1, 0) } else { (p, q) };
        first = false;
        p_prev = pp;
        q_prev = qp;
        p = np;
        q = nq;
        // γ ∞ = p/q, γ 0 = p_prev/q_prev, det fixed to +1 by the sign of
        // the second column.
        let mut g = Mat2::new(p, p_prev, q, q_prev);
        if g.det() < 0 {
            g.b = -g.b;
            g.d = -g.d;
        }
        out.push(g);
        let rem = num - a * den;
        if rem == 0 {
            break;
        }
        num = den;
        den = rem;
    }
    out
}

/// Degree symbols `Deg{0, ∞}(v)` at the base vertex and its `p + 1`
/// neighbours. Returns the first non-vanishing one, if any.
pub fn deg_check(divisor: &RMDivisor, k: u32, p: u32) -> Result<(), DegWitness> {
    let n = k - 2;
    let mut vertices = vec![(Vertex::Base, level0_atoms(divisor, 0))];
    let partner = level0_atoms(divisor, 1);
    for (res, atoms) in level1_atoms(&partner, p) {
        vertices.push((Vertex::Neighbor(res), atoms));
    }
    for (vertex, atoms) in vertices {
        for (key, coeffs) in payload_sum_exact(&atoms, n) {
            if coeffs.iter().any(|c| !c.is_zero()) {
                return Err(DegWitness { vertex, sqrt_part: key, coeffs });
            }
        }
    }
    Ok(())
}
