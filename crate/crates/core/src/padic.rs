//! Truncated arithmetic in `Q_p` and in its unramified quadratic extension
//! `K = Q_p(u)`, `u^2 = g`.
//!
//! Elements use a floating-slash representation: a unit known modulo `p^N`
//! together with a valuation. Addition keeps the smaller absolute precision,
//! multiplication keeps the smaller relative precision.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Stand-in for `+infinity` in valuations and absolute precisions.
pub const INFINITE_VALUATION: i64 = i64::MAX / 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PadicError {
    #[error("division by an element indistinguishable from zero")]
    DivisionByIndistinguishableZero,
    #[error("{0} has no square root in the unramified quadratic extension")]
    NoSquareRoot(String),
    #[error("element is not a unit")]
    NotAUnit,
    #[error("logarithm of an element indistinguishable from zero")]
    ZeroArgument,
    #[error("elements live over different primes or extensions")]
    Mismatch,
}

thread_local! {
    static POWERS: RefCell<Vec<(u32, Vec<BigUint>)>> = const { RefCell::new(Vec::new()) };
}

/// `p^k`, cached per thread.
pub fn pow_p(p: u32, k: u32) -> BigUint {
    POWERS.with(|cell| {
        let mut cache = cell.borrow_mut();
        let idx = match cache.iter().position(|(q, _)| *q == p) {
            Some(i) => i,
            None => {
                cache.push((p, vec![BigUint::one()]));
                cache.len() - 1
            }
        };
        let table = &mut cache[idx].1;
        while table.len() <= k as usize {
            let next = table.last().unwrap() * p;
            table.push(next);
        }
        table[k as usize].clone()
    })
}

/// Legendre symbol `(a / p)` for an odd prime `p`.
pub fn legendre(a: &BigInt, p: u32) -> i32 {
    let pb = BigInt::from(p);
    let r = a.mod_floor(&pb);
    if r.is_zero() {
        return 0;
    }
    let e = BigInt::from((p - 1) / 2);
    let t = r.modpow(&e, &pb);
    if t.is_one() {
        1
    } else {
        -1
    }
}

/// Largest `v` with `p^v | n`; `None` for zero.
pub fn valuation_of_int(n: &BigInt, p: u32) -> Option<u32> {
    if n.is_zero() {
        return None;
    }
    let mut m = n.abs();
    let mut v = 0;
    let pb = BigInt::from(p);
    loop {
        let (q, r) = m.div_rem(&pb);
        if !r.is_zero() {
            return Some(v);
        }
        m = q;
        v += 1;
    }
}

fn strip_p(mut r: BigUint, p: u32) -> (BigUint, u32) {
    let mut s = 0;
    while (&r % p).is_zero() {
        r /= p;
        s += 1;
    }
    (r, s)
}

/// An element of `Q_p` known to finitely many digits.
///
/// The value is `p^valuation * unit + O(p^(valuation + precision))`. When
/// `precision == 0` the element is indistinguishable from zero and
/// `valuation` records its absolute precision.
///
/// Equality means agreement on every digit known to both sides.
#[derive(Clone, Debug)]
pub struct PadicScalar {
    p: u32,
    unit: BigUint,
    valuation: i64,
    precision: u32,
}

impl PadicScalar {
    /// The exact zero.
    pub fn zero(p: u32) -> Self {
        PadicScalar { p, unit: BigUint::zero(), valuation: INFINITE_VALUATION, precision: 0 }
    }

    /// `O(p^abs)`: zero to absolute precision `abs`.
    pub fn big_oh(p: u32, abs: i64) -> Self {
        PadicScalar { p, unit: BigUint::zero(), valuation: abs.min(INFINITE_VALUATION), precision: 0 }
    }

    /// An integer, kept to `precision` relative digits.
    pub fn from_bigint(p: u32, n: &BigInt, precision: u32) -> Self {
        if n.is_zero() {
            return Self::zero(p);
        }
        let v = valuation_of_int(n, p).unwrap();
        let reduced = n / BigInt::from(pow_p(p, v));
        Self::from_raw(p, reduced, v as i64, v as i64 + precision as i64)
    }

    pub fn from_i64(p: u32, n: i64, precision: u32) -> Self {
        Self::from_bigint(p, &BigInt::from(n), precision)
    }

    /// `num / den` to `precision` relative digits.
    pub fn from_ratio(p: u32, num: &BigInt, den: &BigInt, precision: u32) -> Result<Self, PadicError> {
        let n = Self::from_bigint(p, num, precision);
        let d = Self::from_bigint(p, den, precision);
        n.div(&d)
    }

    /// Builds `raw * p^v` known modulo `p^abs`, normalising the unit.
    fn from_raw(p: u32, raw: BigInt, v: i64, abs: i64) -> Self {
        if abs >= INFINITE_VALUATION {
            debug_assert!(raw.is_zero(), "non-zero elements carry finite precision");
            return Self::zero(p);
        }
        let width = abs - v;
        if width <= 0 {
            return Self::big_oh(p, abs);
        }
        let m = BigInt::from(pow_p(p, width as u32));
        let r = raw.mod_floor(&m);
        let r = r.to_biguint().expect("mod_floor is non-negative");
        if r.is_zero() {
            return Self::big_oh(p, abs);
        }
        let (unit, s) = strip_p(r, p);
        PadicScalar { p, unit, valuation: v + s as i64, precision: (width - s as i64) as u32 }
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// True when no known digit is non-zero.
    pub fn is_zero(&self) -> bool {
        self.precision == 0
    }

    pub fn is_exact_zero(&self) -> bool {
        self.precision == 0 && self.valuation >= INFINITE_VALUATION
    }

    /// Valuation of a non-zero element; for an element indistinguishable
    /// from zero this is its absolute precision.
    pub fn valuation(&self) -> i64 {
        self.valuation
    }

    pub fn relative_precision(&self) -> u32 {
        self.precision
    }

    pub fn absolute_precision(&self) -> i64 {
        if self.is_exact_zero() {
            INFINITE_VALUATION
        } else {
            self.valuation + self.precision as i64
        }
    }

    pub fn unit_part(&self) -> &BigUint {
        &self.unit
    }

    /// Drops digits beyond absolute precision `abs`.
    pub fn with_absolute_cap(&self, abs: i64) -> Self {
        if abs >= self.absolute_precision() {
            return self.clone();
        }
        if self.is_zero() || abs <= self.valuation {
            return Self::big_oh(self.p, abs.min(self.absolute_precision()));
        }
        let keep = (abs - self.valuation) as u32;
        PadicScalar { p: self.p, unit: &self.unit % pow_p(self.p, keep), valuation: self.valuation, precision: keep }
    }

    /// Drops digits beyond relative precision `prec`.
    pub fn with_relative_cap(&self, prec: u32) -> Self {
        if self.precision <= prec {
            return self.clone();
        }
        PadicScalar { p: self.p, unit: &self.unit % pow_p(self.p, prec), valuation: self.valuation, precision: prec }
    }

    pub fn neg(&self) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        PadicScalar {
            p: self.p,
            unit: pow_p(self.p, self.precision) - &self.unit,
            valuation: self.valuation,
            precision: self.precision,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.p, other.p);
        if self.is_exact_zero() {
            return other.clone();
        }
        if other.is_exact_zero() {
            return self.clone();
        }
        let abs = self.absolute_precision().min(other.absolute_precision());
        let v = self.valuation.min(other.valuation);
        if v >= abs {
            return Self::big_oh(self.p, abs);
        }
        let width = abs - v;
        let mut raw = BigInt::zero();
        for x in [self, other] {
            if x.is_zero() {
                continue;
            }
            let shift = x.valuation - v;
            if shift < width {
                let scaled = &x.unit * pow_p(self.p, shift as u32);
                raw += BigInt::from_biguint(Sign::Plus, scaled);
            }
        }
        Self::from_raw(self.p, raw, v, abs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.p, other.p);
        if self.is_exact_zero() || other.is_exact_zero() {
            return Self::zero(self.p);
        }
        let v = self.valuation + other.valuation;
        if self.is_zero() || other.is_zero() {
            return Self::big_oh(self.p, v);
        }
        let prec = self.precision.min(other.precision);
        let unit = (&self.unit * &other.unit) % pow_p(self.p, prec);
        PadicScalar { p: self.p, unit, valuation: v, precision: prec }
    }

    pub fn inv(&self) -> Result<Self, PadicError> {
        if self.is_zero() {
            return Err(PadicError::DivisionByIndistinguishableZero);
        }
        let m = pow_p(self.p, self.precision);
        let unit =
            if self.precision == 0 { BigUint::zero() } else { self.unit.modinv(&m).expect("units are invertible") };
        Ok(PadicScalar { p: self.p, unit, valuation: -self.valuation, precision: self.precision })
    }

    pub fn div(&self, other: &Self) -> Result<Self, PadicError> {
        Ok(self.mul(&other.inv()?))
    }

    /// Multiplies by `p^k` without touching the unit.
    pub fn shift(&self, k: i64) -> Self {
        if self.is_exact_zero() {
            return self.clone();
        }
        let mut out = self.clone();
        out.valuation += k;
        out
    }

    pub fn pow(&self, e: u64) -> Self {
        let mut result = PadicScalar::from_i64(self.p, 1, self.precision.max(1));
        if self.is_zero() && e > 0 {
            return Self::big_oh(self.p, self.valuation.saturating_mul(e as i64));
        }
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// Signed integer representative of `unit * p^valuation` when the
    /// valuation is non-negative, using the symmetric residue range.
    pub fn to_symmetric_bigint(&self) -> Option<BigInt> {
        if self.is_zero() {
            return Some(BigInt::zero());
        }
        if self.valuation < 0 {
            return None;
        }
        let m = pow_p(self.p, self.precision);
        let half = &m >> 1;
        let u = if self.unit > half {
            BigInt::from(self.unit.clone()) - BigInt::from(m)
        } else {
            BigInt::from(self.unit.clone())
        };
        Some(u * BigInt::from(pow_p(self.p, self.valuation as u32)))
    }

    /// Base-`p` digits of the unit, least significant first.
    pub fn digits(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.precision as usize);
        let mut u = self.unit.clone();
        for _ in 0..self.precision {
            let d = (&u % self.p).to_u32().unwrap();
            out.push(d);
            u /= self.p;
        }
        out
    }

    /// Residue modulo `p` of an integral element.
    pub fn residue(&self) -> u32 {
        if self.is_zero() || self.valuation > 0 {
            0
        } else {
            debug_assert!(self.valuation == 0, "residue of a non-integral element");
            (&self.unit % self.p).to_u32().unwrap()
        }
    }

    /// Digit string `v=<valuation>:d0d1d2...` (little-endian base p).
    pub fn digit_string(&self) -> String {
        if self.is_zero() {
            if self.is_exact_zero() {
                return "0".to_string();
            }
            return format!("O({}^{})", self.p, self.valuation);
        }
        let ds: Vec<String> = self.digits().iter().map(|d| d.to_string()).collect();
        let sep = if self.p > 10 { "," } else { "" };
        format!("v={}:{}", self.valuation, ds.join(sep))
    }
}

impl fmt::Display for PadicScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            if self.is_exact_zero() {
                return write!(f, "0");
            }
            return write!(f, "O({}^{})", self.p, self.valuation);
        }
        let mut terms = Vec::new();
        for (i, d) in self.digits().iter().enumerate() {
            if *d != 0 {
                let e = self.valuation + i as i64;
                terms.push(match e {
                    0 => format!("{d}"),
                    1 => format!("{d}*{}", self.p),
                    _ => format!("{d}*{}^{e}", self.p),
                });
            }
        }
        write!(f, "{} + O({}^{})", terms.join(" + "), self.p, self.absolute_precision())
    }
}

/// Shared parameters of a computation: the prime, the non-residue `g` with
/// `u^2 = g`, and the working relative precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Field {
    pub p: u32,
    pub g: i64,
    pub precision: u32,
}

impl Field {
    /// Picks `g = -1` when `p = 3 mod 4`, otherwise the least positive
    /// quadratic non-residue.
    pub fn new(p: u32, precision: u32) -> Self {
        assert!(p > 2 && p % 2 == 1, "p must be an odd prime");
        let g = if p % 4 == 3 { -1 } else { (2..p as i64).find(|&c| legendre(&BigInt::from(c), p) == -1).unwrap() };
        Field { p, g, precision }
    }

    pub fn with_precision(&self, precision: u32) -> Self {
        Field { precision, ..*self }
    }

    pub fn scalar(&self, n: i64) -> PadicScalar {
        PadicScalar::from_i64(self.p, n, self.precision)
    }

    pub fn scalar_big(&self, n: &BigInt) -> PadicScalar {
        PadicScalar::from_bigint(self.p, n, self.precision)
    }

    pub fn int(&self, n: i64) -> QuadExtScalar {
        QuadExtScalar::from_padic(self.scalar(n), self.g)
    }

    pub fn big(&self, n: &BigInt) -> QuadExtScalar {
        QuadExtScalar::from_padic(self.scalar_big(n), self.g)
    }

    pub fn ratio(&self, num: i64, den: i64) -> QuadExtScalar {
        let x = PadicScalar::from_ratio(self.p, &BigInt::from(num), &BigInt::from(den), self.precision)
            .expect("non-zero denominator");
        QuadExtScalar::from_padic(x, self.g)
    }

    pub fn big_ratio(&self, num: &BigInt, den: &BigInt) -> QuadExtScalar {
        let x = PadicScalar::from_ratio(self.p, num, den, self.precision).expect("non-zero denominator");
        QuadExtScalar::from_padic(x, self.g)
    }

    pub fn zero(&self) -> QuadExtScalar {
        QuadExtScalar::zero(self.p, self.g)
    }

    pub fn one(&self) -> QuadExtScalar {
        self.int(1)
    }

    /// The generator `u` with `u^2 = g`.
    pub fn u(&self) -> QuadExtScalar {
        QuadExtScalar::new(PadicScalar::zero(self.p), self.scalar(1), self.g)
    }
}

/// An element `a + b u` of `K = Q_p(u)`, `u^2 = g`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadExtScalar {
    pub a: PadicScalar,
    pub b: PadicScalar,
    pub g: i64,
}

impl QuadExtScalar {
    pub fn new(a: PadicScalar, b: PadicScalar, g: i64) -> Self {
        QuadExtScalar { a, b, g }
    }

    pub fn zero(p: u32, g: i64) -> Self {
        QuadExtScalar { a: PadicScalar::zero(p), b: PadicScalar::zero(p), g }
    }

    pub fn from_padic(a: PadicScalar, g: i64) -> Self {
        let p = a.p();
        QuadExtScalar { a, b: PadicScalar::zero(p), g }
    }

    pub fn p(&self) -> u32 {
        self.a.p()
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    /// True when the element lies in `Q_p` to the known precision.
    pub fn is_padic(&self) -> bool {
        self.b.is_zero()
    }

    pub fn valuation(&self) -> i64 {
        self.a.valuation().min(self.b.valuation())
    }

    pub fn absolute_precision(&self) -> i64 {
        self.a.absolute_precision().min(self.b.absolute_precision())
    }

    pub fn relative_precision(&self) -> i64 {
        if self.is_zero() {
            0
        } else {
            self.absolute_precision() - self.valuation()
        }
    }

    pub fn with_absolute_cap(&self, abs: i64) -> Self {
        QuadExtScalar { a: self.a.with_absolute_cap(abs), b: self.b.with_absolute_cap(abs), g: self.g }
    }

    pub fn neg(&self) -> Self {
        QuadExtScalar { a: self.a.neg(), b: self.b.neg(), g: self.g }
    }

    pub fn conj(&self) -> Self {
        QuadExtScalar { a: self.a.clone(), b: self.b.neg(), g: self.g }
    }

    pub fn add(&self, o: &Self) -> Self {
        QuadExtScalar { a: self.a.add(&o.a), b: self.b.add(&o.b), g: self.g }
    }

    pub fn sub(&self, o: &Self) -> Self {
        QuadExtScalar { a: self.a.sub(&o.a), b: self.b.sub(&o.b), g: self.g }
    }

    /// Largest relative precision among the two coordinates.
    fn coord_precision(&self) -> u32 {
        self.a.relative_precision().max(self.b.relative_precision()).max(1)
    }

    /// An exact integer carried at enough digits not to limit `self`.
    fn exact(&self, n: &BigInt) -> PadicScalar {
        let extra = valuation_of_int(n, self.p()).unwrap_or(0);
        PadicScalar::from_bigint(self.p(), n, self.coord_precision() + extra + 1)
    }

    pub fn mul(&self, o: &Self) -> Self {
        let gs = PadicScalar::from_i64(self.p(), self.g, self.coord_precision().max(o.coord_precision()));
        let aa = self.a.mul(&o.a);
        let bb = self.b.mul(&o.b).mul(&gs);
        let ab = self.a.mul(&o.b);
        let ba = self.b.mul(&o.a);
        QuadExtScalar { a: aa.add(&bb), b: ab.add(&ba), g: self.g }
    }

    pub fn mul_padic(&self, s: &PadicScalar) -> Self {
        QuadExtScalar { a: self.a.mul(s), b: self.b.mul(s), g: self.g }
    }

    /// Multiplies by an exact integer.
    pub fn mul_int(&self, n: i64) -> Self {
        if n == 1 {
            return self.clone();
        }
        self.mul_padic(&self.exact(&BigInt::from(n)))
    }

    pub fn mul_big(&self, n: &BigInt) -> Self {
        self.mul_padic(&self.exact(n))
    }

    /// Multiplies by `p^k`.
    pub fn shift(&self, k: i64) -> Self {
        QuadExtScalar { a: self.a.shift(k), b: self.b.shift(k), g: self.g }
    }

    /// The norm `a^2 - g b^2` to `Q_p`.
    pub fn norm(&self) -> PadicScalar {
        let gs = PadicScalar::from_i64(self.p(), self.g, self.coord_precision());
        self.a.mul(&self.a).sub(&self.b.mul(&self.b).mul(&gs))
    }

    pub fn inv(&self) -> Result<Self, PadicError> {
        if self.is_zero() {
            return Err(PadicError::DivisionByIndistinguishableZero);
        }
        let n = self.norm().inv()?;
        Ok(self.conj().mul_padic(&n))
    }

    pub fn div(&self, o: &Self) -> Result<Self, PadicError> {
        if o.is_padic() {
            let d = o.a.inv()?;
            return Ok(self.mul_padic(&d));
        }
        Ok(self.mul(&o.inv()?))
    }

    /// Divides by an exact non-zero integer.
    pub fn div_int(&self, n: i64) -> Self {
        self.mul_padic(&self.exact(&BigInt::from(n)).inv().expect("non-zero integer"))
    }

    pub fn div_big(&self, n: &BigInt) -> Self {
        self.mul_padic(&self.exact(n).inv().expect("non-zero integer"))
    }

    pub fn pow(&self, e: u64) -> Self {
        let one = QuadExtScalar::from_padic(
            PadicScalar::from_i64(self.p(), 1, self.relative_precision().max(1) as u32),
            self.g,
        );
        let mut result = one;
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    pub fn powi(&self, e: i64) -> Result<Self, PadicError> {
        if e >= 0 {
            Ok(self.pow(e as u64))
        } else {
            Ok(self.inv()?.pow((-e) as u64))
        }
    }

    /// Valuation of `self - other` (the absolute precision when they agree
    /// on every known digit).
    pub fn agreement(&self, other: &Self) -> i64 {
        self.sub(other).valuation()
    }

    /// Residue pair `(a mod p, b mod p)` of an integral element.
    pub fn residue(&self) -> (u32, u32) {
        let r = |x: &PadicScalar| if x.is_zero() || x.valuation() > 0 { 0 } else { x.residue() };
        (r(&self.a), r(&self.b))
    }

    /// The Teichmüller representative congruent to a unit.
    pub fn teichmuller(&self) -> Result<Self, PadicError> {
        if self.is_zero() || self.valuation() != 0 {
            return Err(PadicError::NotAUnit);
        }
        let q = (self.p() as u64) * (self.p() as u64);
        let steps = self.relative_precision().max(1);
        let mut w = self.clone();
        for _ in 0..steps {
            let next = w.pow(q);
            if next == w {
                break;
            }
            w = next;
        }
        Ok(w)
    }

    /// The branch of the logarithm with `log_L(p) = L`.
    pub fn log_branch(&self, branch: &PadicScalar) -> Result<Self, PadicError> {
        if self.is_zero() {
            return Err(PadicError::ZeroArgument);
        }
        let v = self.valuation();
        let unit = self.shift(-v);
        let omega = unit.teichmuller()?;
        let y = unit.div(&omega)?;
        let one = QuadExtScalar::from_padic(PadicScalar::from_i64(self.p(), 1, y.coord_precision() + 1), self.g);
        let z = y.sub(&one);
        let log_y = log_one_plus(&z, unit.relative_precision());
        let shift = QuadExtScalar::from_padic(
            branch.mul(&PadicScalar::from_i64(self.p(), v, branch.relative_precision().max(1) + 64)),
            self.g,
        );
        Ok(log_y.add(&shift))
    }

    /// Little-endian digit strings of both coordinates.
    pub fn digit_string(&self) -> String {
        format!("[{}] + [{}]*u", self.a.digit_string(), self.b.digit_string())
    }
}

/// `log(1 + z)` for `v(z) >= 1`, summed to absolute precision `target`.
fn log_one_plus(z: &QuadExtScalar, target: i64) -> QuadExtScalar {
    let p = z.p();
    if z.is_zero() {
        let abs = z.absolute_precision().min(target);
        return QuadExtScalar::new(PadicScalar::big_oh(p, abs), PadicScalar::big_oh(p, abs), z.g);
    }
    let vz = z.valuation();
    debug_assert!(vz >= 1);
    let lnp = (p as f64).ln();
    let mut sum = QuadExtScalar::zero(p, z.g);
    let mut power = z.clone();
    let mut i: i64 = 1;
    loop {
        let term = power.div_int(if i % 2 == 1 { i } else { -i });
        sum = sum.add(&term);
        i += 1;
        let bound = (i * vz) as f64 - (i as f64).ln() / lnp;
        if bound >= target as f64 {
            break;
        }
        power = power.mul(z);
    }
    sum.with_absolute_cap(target)
}

/// Square root of a `Q_p` unit-times-even-power, pinned to the residue in
/// `1..=(p-1)/2`.
fn sqrt_padic(p: u32, d: &BigInt, precision: u32) -> Option<PadicScalar> {
    let v = valuation_of_int(d, p)?;
    if v % 2 == 1 {
        return None;
    }
    let unit = d / BigInt::from(pow_p(p, v));
    if legendre(&unit, p) != 1 {
        return None;
    }
    let pb = BigInt::from(p);
    let r = (1..=(p - 1) / 2).map(BigInt::from).find(|r| ((r * r) - &unit).mod_floor(&pb).is_zero()).unwrap();
    let target = PadicScalar::from_bigint(p, &unit, precision);
    let two = PadicScalar::from_i64(p, 2, precision);
    let mut x = PadicScalar::from_bigint(p, &r, precision);
    for _ in 0..(2 * (precision.max(2) as f64).log2().ceil() as usize + 4) {
        let next = x.add(&target.div(&x).unwrap()).div(&two).unwrap();
        if next == x {
            break;
        }
        x = next;
    }
    Some(x.shift(v as i64 / 2))
}

/// A square root of the integer `d` in `K`, with a pinned branch.
///
/// Perfect squares return their positive integer root.
/// A residue lands in `Q_p` with the root congruent to `1..=(p-1)/2` (after
/// removing the even power of `p`). A non-residue `d` is written as
/// `g * e^2` and the root is `e * u` with `e` pinned the same way.
pub fn sqrt_hensel(field: &Field, d: &BigInt) -> Result<QuadExtScalar, PadicError> {
    let p = field.p;
    if d.is_zero() {
        return Err(PadicError::NoSquareRoot("0".into()));
    }
    let v = valuation_of_int(d, p).unwrap();
    if v % 2 == 1 {
        return Err(PadicError::NoSquareRoot(d.to_string()));
    }
    let unit = d / BigInt::from(pow_p(p, v));
    if d.is_positive() {
        let r = d.sqrt();
        if &r * &r == *d {
            return Ok(field.big(&r));
        }
    }
    if legendre(&unit, p) == 1 {
        let s = sqrt_padic(p, d, field.precision).unwrap();
        return Ok(QuadExtScalar::from_padic(s, field.g));
    }
    // d = g * e^2 with e in Q_p.
    let g = PadicScalar::from_i64(p, field.g, field.precision);
    let ratio = PadicScalar::from_bigint(p, &unit, field.precision).div(&g)?;
    let ratio_int = ratio.to_symmetric_bigint().expect("integral");
    let e = sqrt_padic(p, &ratio_int, field.precision).ok_or_else(|| PadicError::NoSquareRoot(d.to_string()))?;
    Ok(QuadExtScalar::new(PadicScalar::zero(p), e.shift(v as i64 / 2), field.g))
}

impl PartialEq for PadicScalar {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.sub(other).is_zero()
    }
}

impl PartialOrd for PadicScalar {
    /// Orders by valuation only; used to pick pivots.
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.valuation.cmp(&other.valuation))
    }
}
