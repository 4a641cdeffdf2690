//! Polynomials of degree at most `n` over `K` with the weight action of
//! integer matrices and the perfect pairing on `P_n`.

use num_bigint::BigInt;
use num_integer::binomial;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::padic::{Field, QuadExtScalar};
use crate::quadforms::{sqrt_disc, FormError, Mat2, QuadForm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("w and its conjugate are indistinguishable to working precision")]
    ConjugateCollision,
    #[error(transparent)]
    Form(#[from] FormError),
}

/// Dense polynomial `Σ coeffs[i] T^i`, `coeffs.len() == n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyN {
    pub coeffs: Vec<QuadExtScalar>,
}

/// Integer coefficients of a product of linear powers `(aT+b)^i (cT+d)^j`.
fn linear_power_product(a: i64, b: i64, i: u32, c: i64, d: i64, j: u32) -> Vec<BigInt> {
    let mut out = vec![BigInt::one()];
    let mut mul = |lead: i64, cst: i64| {
        let mut next = vec![BigInt::zero(); out.len() + 1];
        for (k, x) in out.iter().enumerate() {
            next[k] += x * cst;
            next[k + 1] += x * lead;
        }
        out = next;
    };
    for _ in 0..i {
        mul(a, b);
    }
    for _ in 0..j {
        mul(c, d);
    }
    out
}

pub fn factorial(m: u32) -> BigInt {
    (1..=m).fold(BigInt::one(), |acc, x| acc * x)
}

impl PolyN {
    pub fn zero(field: &Field, n: u32) -> PolyN {
        PolyN { coeffs: vec![field.zero(); n as usize + 1] }
    }

    pub fn monomial(field: &Field, n: u32, i: u32) -> PolyN {
        let mut p = PolyN::zero(field, n);
        p.coeffs[i as usize] = field.one();
        p
    }

    /// Pads or checks a coefficient list to length `n + 1`.
    pub fn from_coeffs(field: &Field, n: u32, mut coeffs: Vec<QuadExtScalar>) -> PolyN {
        assert!(coeffs.len() <= n as usize + 1, "degree exceeds n");
        coeffs.resize(n as usize + 1, field.zero());
        PolyN { coeffs }
    }

    pub fn degree_bound(&self) -> u32 {
        self.coeffs.len() as u32 - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(QuadExtScalar::is_zero)
    }

    /// Smallest coefficient valuation.
    pub fn valuation(&self) -> i64 {
        self.coeffs.iter().map(QuadExtScalar::valuation).min().unwrap_or(i64::MAX)
    }

    pub fn add(&self, o: &PolyN) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(x, y)| x.add(y)).collect() }
    }

    pub fn sub(&self, o: &PolyN) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(x, y)| x.sub(y)).collect() }
    }

    pub fn neg(&self) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().map(QuadExtScalar::neg).collect() }
    }

    pub fn scale(&self, s: &QuadExtScalar) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().map(|x| x.mul(s)).collect() }
    }

    pub fn scale_int(&self, s: i64) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().map(|x| x.mul_int(s)).collect() }
    }

    pub fn conj(&self) -> PolyN {
        PolyN { coeffs: self.coeffs.iter().map(QuadExtScalar::conj).collect() }
    }

    pub fn eval(&self, z: &QuadExtScalar) -> QuadExtScalar {
        let mut acc = self.coeffs.last().unwrap().clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc = acc.mul(z).add(c);
        }
        acc
    }

    /// First derivative, kept at the same degree bound.
    pub fn derivative(&self) -> PolyN {
        let n = self.coeffs.len();
        let mut out: Vec<QuadExtScalar> = (1..n).map(|i| self.coeffs[i].mul_int(i as i64)).collect();
        out.push(self.coeffs[0].mul_int(0));
        PolyN { coeffs: out }
    }

    pub fn nth_derivative(&self, times: u32) -> PolyN {
        (0..times).fold(self.clone(), |p, _| p.derivative())
    }

    /// Coefficients in powers of `(T - a)`: `q_i = P^(i)(a) / i!`.
    pub fn taylor_at(&self, a: &QuadExtScalar) -> Vec<QuadExtScalar> {
        // Repeated synthetic division by (T - a).
        let mut work = self.coeffs.clone();
        let n = work.len();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            for j in (k + 1..n).rev() {
                let t = work[j].mul(a);
                work[j - 1] = work[j - 1].add(&t);
            }
            out.push(work[k].clone());
        }
        // Synthetic division leaves remainders at the low end, in order.
        out
    }

    /// `(P|γ)(T) = det^(-n/2) (cT + d)^n P((aT + b)/(cT + d))`.
    pub fn slash(&self, m: &Mat2) -> PolyN {
        let n = self.degree_bound();
        let mut out: Vec<QuadExtScalar> = self.coeffs.iter().map(|c| c.mul_int(0)).collect();
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let prod = linear_power_product(m.a, m.b, i as u32, m.c, m.d, n - i as u32);
            for (j, e) in prod.iter().enumerate() {
                if !e.is_zero() {
                    out[j] = out[j].add(&c.mul_big(e));
                }
            }
        }
        let det = m.det();
        assert!(det != 0, "singular matrix");
        let scale = BigInt::from(det).pow(n / 2);
        let poly = PolyN { coeffs: out };
        if scale.is_one() {
            poly
        } else {
            PolyN { coeffs: poly.coeffs.iter().map(|c| c.div_big(&scale)).collect() }
        }
    }

    /// The pairing `<T^i, T^j> = (-1)^i / binom(n, i)` when `i + j = n`.
    pub fn pair(&self, o: &PolyN) -> QuadExtScalar {
        let n = self.degree_bound() as usize;
        let mut acc = self.coeffs[0].mul_int(0);
        for i in 0..=n {
            let b = binomial(BigInt::from(n), BigInt::from(i));
            let term = self.coeffs[i].mul(&o.coeffs[n - i]).div_big(&b);
            acc = if i % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
        }
        acc
    }

    /// `d^(n+1)(P(z) log(z - τ)) = Σ_i (-1)^i (n-i)! P^(i)(τ) / (z-τ)^(n+1-i)`,
    /// as `(order, coefficient)` pairs.
    pub fn dlog_power(&self, tau: &QuadExtScalar) -> Vec<(u32, QuadExtScalar)> {
        let n = self.degree_bound();
        let mut out = Vec::with_capacity(n as usize + 1);
        let mut deriv = self.clone();
        for i in 0..=n {
            let v = deriv.eval(tau).mul_big(&factorial(n - i));
            let v = if i % 2 == 1 { v.neg() } else { v };
            out.push((n + 1 - i, v));
            deriv = deriv.derivative();
        }
        out
    }
}

/// `(T - w)^(n/2) (T - w̄)^(n/2) / (w - w̄)^(n/2)`.
pub fn payload(field: &Field, w: &QuadExtScalar, w_bar: &QuadExtScalar, n: u32) -> Result<PolyN, PolyError> {
    let diff = w.sub(w_bar);
    if diff.is_zero() {
        return Err(PolyError::ConjugateCollision);
    }
    let quad = [w.mul(w_bar), w.add(w_bar).neg(), field.one()];
    let mut coeffs = vec![field.one()];
    for _ in 0..n / 2 {
        let mut next = vec![field.zero(); coeffs.len() + 2];
        for (i, c) in coeffs.iter().enumerate() {
            for (j, q) in quad.iter().enumerate() {
                next[i + j] = next[i + j].add(&c.mul(q));
            }
        }
        coeffs = next;
    }
    let scale = diff.pow(n as u64 / 2).inv().map_err(|_| PolyError::ConjugateCollision)?;
    Ok(PolyN::from_coeffs(field, n, coeffs.iter().map(|c| c.mul(&scale)).collect()))
}

/// The payload of the positive root of `form`, computed from integer data
/// as `Q(T, 1)^(n/2) / √D^(n/2)`.
pub fn payload_of_form(field: &Field, form: &QuadForm, n: u32) -> Result<PolyN, PolyError> {
    let q = form.dehomogenized();
    let mut coeffs = vec![BigInt::one()];
    for _ in 0..n / 2 {
        let mut next = vec![BigInt::zero(); coeffs.len() + 2];
        for (i, c) in coeffs.iter().enumerate() {
            for (j, qj) in q.iter().enumerate() {
                next[i + j] += c * qj;
            }
        }
        coeffs = next;
    }
    let root = sqrt_disc(field, form.disc())?;
    let scale = root.pow(n as u64 / 2).inv().map_err(|_| PolyError::ConjugateCollision)?;
    Ok(PolyN::from_coeffs(field, n, coeffs.iter().map(|c| scale.mul_big(c)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadforms::RMPoint;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn field() -> Field {
        Field::new(3, 30)
    }

    fn poly_from_ints(f: &Field, n: u32, c: &[i64]) -> PolyN {
        PolyN::from_coeffs(f, n, c.iter().map(|x| f.int(*x)).collect())
    }

    /// Exact oracle for slash over Q.
    fn slash_rational(p: &[BigRational], m: &Mat2) -> Vec<BigRational> {
        let n = p.len() - 1;
        let mut out = vec![BigRational::zero(); n + 1];
        for (i, c) in p.iter().enumerate() {
            for (j, e) in linear_power_product(m.a, m.b, i as u32, m.c, m.d, (n - i) as u32).iter().enumerate() {
                out[j] += c * BigRational::from_integer(e.clone());
            }
        }
        let det = BigRational::from_integer(BigInt::from(m.det()).pow(n as u32 / 2));
        out.into_iter().map(|x| x / &det).collect()
    }

    #[test]
    fn slash_by_identity() {
        let f = field();
        let p = poly_from_ints(&f, 4, &[1, -2, 3, 5, 7]);
        assert_eq!(p.slash(&Mat2::IDENTITY), p);
    }

    #[test]
    fn middle_monomial_maps_to_signed_payload() {
        // T^(n/2) | [[1, -w̄], [1, -w]] = (-1)^(n/2) payload(w) up to the
        // determinant (w̄ - w)^(n/2), applied here with K-entries by hand.
        let f = field();
        let pt = RMPoint::new(&f, QuadForm::new(1, -1, -1).unwrap()).unwrap();
        let (w, wb) = (pt.root, pt.conj_root);
        for n in [2u32, 4, 6] {
            let half = n / 2;
            // (T - w̄)^half (T - w)^half / det^half, det = w̄ - w.
            let mut coeffs = vec![f.one()];
            for _ in 0..half {
                let mut next = vec![f.zero(); coeffs.len() + 2];
                let quad = [w.mul(&wb), w.add(&wb).neg(), f.one()];
                for (i, c) in coeffs.iter().enumerate() {
                    for (j, q) in quad.iter().enumerate() {
                        next[i + j] = next[i + j].add(&c.mul(q));
                    }
                }
                coeffs = next;
            }
            let det = wb.sub(&w).pow(half as u64).inv().unwrap();
            let lhs = PolyN::from_coeffs(&f, n, coeffs.iter().map(|c| c.mul(&det)).collect());
            let rhs = payload(&f, &w, &wb, n).unwrap();
            let rhs = if half % 2 == 1 { rhs.neg() } else { rhs };
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn pairing_on_monomials() {
        let f = field();
        let one = PolyN::monomial(&f, 2, 0);
        let t = PolyN::monomial(&f, 2, 1);
        let t2 = PolyN::monomial(&f, 2, 2);
        assert_eq!(one.pair(&t2), f.one());
        assert_eq!(t.pair(&t), f.ratio(-1, 2));
    }

    #[test]
    fn pairing_against_shifted_powers() {
        // <(t - a)^i, P> = (-1)^i i!/n! P^(n-i)(a).
        let f = field();
        let n = 4;
        let p = poly_from_ints(&f, n, &[2, -1, 7, 3, -5]);
        let a = f.int(4);
        for i in 0..=n {
            let mut coeffs = vec![f.zero(); n as usize + 1];
            for j in 0..=i {
                let b = binomial(BigInt::from(i), BigInt::from(j));
                let term = a.pow((i - j) as u64).mul_big(&b);
                let term = if (i - j) % 2 == 1 { term.neg() } else { term };
                coeffs[j as usize] = term;
            }
            let lhs = PolyN { coeffs }.pair(&p);
            let mut rhs = p.nth_derivative(n - i).eval(&a).mul_big(&factorial(i)).div_big(&factorial(n));
            if i % 2 == 1 {
                rhs = rhs.neg();
            }
            assert_eq!(lhs, rhs, "i = {i}");
        }
    }

    #[test]
    fn payload_for_disc_5() {
        let f = field();
        let pt = RMPoint::new(&f, QuadForm::new(1, -1, -1).unwrap()).unwrap();
        let p = payload(&f, &pt.root, &pt.conj_root, 2).unwrap();
        let d = pt.root.sub(&pt.conj_root).inv().unwrap();
        let expected = poly_from_ints(&f, 2, &[-1, -1, 1]).scale(&d);
        assert_eq!(p, expected);
        assert_eq!(payload_of_form(&f, &pt.form, 2).unwrap(), expected);
    }

    #[test]
    fn payload_symmetry_under_conjugation() {
        let f = field();
        let pt = RMPoint::new(&f, QuadForm::new(1, 0, -5).unwrap()).unwrap();
        for n in [2u32, 4, 6] {
            let p = payload(&f, &pt.root, &pt.conj_root, n).unwrap();
            let q = payload(&f, &pt.conj_root, &pt.root, n).unwrap();
            let sign = if (n / 2) % 2 == 1 { -1 } else { 1 };
            assert_eq!(q, p.scale_int(sign));
        }
    }

    #[test]
    fn payload_collision() {
        let f = field();
        assert_eq!(payload(&f, &f.u(), &f.u(), 2), Err(PolyError::ConjugateCollision));
    }

    #[test]
    fn dlog_power_examples() {
        let f = field();
        let tau = f.u().add(&f.int(1));
        let n = 4;
        let one = PolyN::monomial(&f, n, 0);
        let terms = one.dlog_power(&tau);
        assert_eq!(terms[0], (5, f.int(24)));
        assert!(terms[1..].iter().all(|(_, c)| c.is_zero()));
        // P = (z - τ)^n keeps only the i = n term, (-1)^n n! / (z - τ).
        let mut pc = vec![f.one()];
        for _ in 0..n {
            let mut next = vec![f.zero(); pc.len() + 1];
            for (i, c) in pc.iter().enumerate() {
                next[i] = next[i].sub(&c.mul(&tau));
                next[i + 1] = next[i + 1].add(c);
            }
            pc = next;
        }
        let terms = PolyN::from_coeffs(&f, n, pc).dlog_power(&tau);
        for (order, c) in terms {
            if order == 1 {
                assert_eq!(c, f.int(24));
            } else {
                assert!(c.is_zero());
            }
        }
    }

    /// Symbolic oracle: represent `P(z) log(z - τ)` after `j` derivatives as
    /// `A_j(z) log(z - τ) + Σ_m B_{j,m} (z - τ)^(-m)`-style data in the
    /// variable `x = z - τ`, differentiate term by term, and compare.
    fn dlog_oracle(p_in_x: &[BigRational], n: usize) -> Vec<BigRational> {
        // Laurent polynomial in x with exponents in [-(n+1), n]; log part A.
        let offset = n + 1;
        let mut log_part: Vec<BigRational> = p_in_x.to_vec();
        let mut laurent = vec![BigRational::zero(); 2 * n + 2];
        for _ in 0..=n {
            // d(A log x) = A' log x + A / x; d(x^e) = e x^(e-1).
            let mut new_laurent = vec![BigRational::zero(); 2 * n + 2];
            for (idx, c) in laurent.iter().enumerate() {
                let e = idx as i64 - offset as i64;
                if e != 0 && !c.is_zero() {
                    new_laurent[idx - 1] += c * BigRational::from_integer(e.into());
                }
            }
            for (i, a) in log_part.iter().enumerate() {
                new_laurent[offset + i - 1] += a;
            }
            let new_log: Vec<BigRational> = (0..log_part.len())
                .map(|i| {
                    if i + 1 < log_part.len() {
                        &log_part[i + 1] * BigRational::from_integer((i as i64 + 1).into())
                    } else {
                        BigRational::zero()
                    }
                })
                .collect();
            laurent = new_laurent;
            log_part = new_log;
        }
        // Coefficients of x^(-m) for m = n+1 down to 1.
        (1..=n + 1).rev().map(|m| laurent[offset - m].clone()).collect()
    }

    #[test]
    fn dlog_power_matches_symbolic_differentiation() {
        let f = field();
        let tau = f.int(0);
        for coeffs in [vec![3i64, -2, 5], vec![1, 1, 1, -4, 2], vec![0, 0, 0, 0, 0, 0, 7]] {
            let n = coeffs.len() - 1;
            let rat: Vec<BigRational> = coeffs.iter().map(|c| BigRational::from_integer((*c).into())).collect();
            let oracle = dlog_oracle(&rat, n);
            let got = poly_from_ints(&f, n as u32, &coeffs).dlog_power(&tau);
            for ((order, c), o) in got.iter().zip(&oracle) {
                let expected = f.big_ratio(o.numer(), o.denom());
                assert_eq!(*c, expected, "order {order}");
            }
        }
    }

    fn small_sl2() -> impl Strategy<Value = Mat2> {
        (-4i64..5, -4i64..5, -4i64..5).prop_filter_map("unimodular", |(a, b, c)| {
            // Solve a d - b c = 1 for d when a divides 1 + b c.
            if a != 0 && (1 + b * c) % a == 0 {
                Some(Mat2::new(a, b, c, (1 + b * c) / a))
            } else {
                None
            }
        })
    }

    proptest! {
        #[test]
        fn slash_composes(c in proptest::collection::vec(-20i64..20, 5), g1 in small_sl2(), g2 in small_sl2()) {
            let f = field();
            let p = poly_from_ints(&f, 4, &c);
            prop_assert_eq!(p.slash(&g1).slash(&g2), p.slash(&g1.mul(&g2)));
            let rat: Vec<BigRational> = c.iter().map(|x| BigRational::from_integer((*x).into())).collect();
            let oracle = slash_rational(&rat, &g1);
            let got = p.slash(&g1);
            for (x, o) in got.coeffs.iter().zip(&oracle) {
                prop_assert_eq!(x.clone(), f.big_ratio(o.numer(), o.denom()));
            }
        }

        #[test]
        fn slash_with_determinant_p(c in proptest::collection::vec(-20i64..20, 3), a in 0i64..3) {
            let f = field();
            let p = poly_from_ints(&f, 2, &c);
            let m = Mat2::new(3, a, 0, 1);
            let rat: Vec<BigRational> = c.iter().map(|x| BigRational::from_integer((*x).into())).collect();
            for (x, o) in p.slash(&m).coeffs.iter().zip(&slash_rational(&rat, &m)) {
                prop_assert_eq!(x.clone(), f.big_ratio(o.numer(), o.denom()));
            }
        }

        #[test]
        fn pairing_is_invariant(c1 in proptest::collection::vec(-20i64..20, 5), c2 in proptest::collection::vec(-20i64..20, 5), g in small_sl2()) {
            let f = field();
            let p = poly_from_ints(&f, 4, &c1);
            let q = poly_from_ints(&f, 4, &c2);
            prop_assert_eq!(p.slash(&g).pair(&q.slash(&g)), p.pair(&q));
        }

        #[test]
        fn payload_transforms_by_inverse(g in small_sl2()) {
            let f = field();
            let form = QuadForm::new(1, -1, -1).unwrap();
            let p = payload_of_form(&f, &form, 2).unwrap();
            // payload(w) | γ = payload(γ^{-1} w).
            let moved = form.transport(&g.inverse_unimodular());
            prop_assert_eq!(p.slash(&g), payload_of_form(&f, &moved, 2).unwrap());
        }

        #[test]
        fn taylor_expansion_reconstructs(c in proptest::collection::vec(-20i64..20, 5), a in -5i64..5) {
            let f = field();
            let p = poly_from_ints(&f, 4, &c);
            let q = p.taylor_at(&f.int(a));
            let z = f.u().add(&f.int(2));
            let shifted = z.sub(&f.int(a));
            let mut acc = f.zero();
            for (i, qi) in q.iter().enumerate() {
                acc = acc.add(&qi.mul(&shifted.pow(i as u64)));
            }
            prop_assert_eq!(acc, p.eval(&z));
        }
    }
}
