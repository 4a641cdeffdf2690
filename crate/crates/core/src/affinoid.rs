//! Functions on the standard affinoid: Mittag-Leffler series over the
//! `p + 1` residue disks, logarithmic atoms, and the weight actions of
//! integer matrices.
//!
//! Each finite disk `a` carries a principal part `Σ_j c_j (z - a)^(-j)`, the
//! disk at infinity an entire series `Σ_m e_m z^m`. Logarithmic atoms
//! `P(z) log(z - x)` sit either at the disk centres, at infinity (a marker
//! whose value on the affinoid is zero but which moves under transport), or
//! at RM points that avoid every removed disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::{binomial, Integer};
use num_rational::Ratio;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::padic::{Field, PadicError, PadicScalar, QuadExtScalar};
use crate::poly::{PolyError, PolyN};
use crate::quadforms::{Mat2, QuadForm, Residue};

type K = QuadExtScalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffinoidError {
    #[error("atom at {0} lies in a removed disk")]
    AtomInRemovedDisk(String),
    #[error("atom at {0} is not in a removed disk")]
    AtomNotInRemovedDisk(String),
    #[error("matrix {0} is not supported by this action")]
    UnsupportedMatrix(Mat2),
    #[error("point is not on the standard affinoid")]
    PointOffAffinoid,
    #[error("evaluation point collides with a logarithmic atom or pole")]
    PointCollidesWithAtom,
    #[error("function is only known modulo polynomials of degree <= n")]
    UnresolvedPolynomialAmbiguity,
    #[error(transparent)]
    Padic(#[from] PadicError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Residue disk of a rational number.
pub fn disk_of_rational(r: &Ratio<i64>, p: u32) -> Residue {
    let pi = p as i64;
    if r.denom() % pi == 0 {
        return Residue::Infinity;
    }
    let den_inv = mod_inverse(r.denom().rem_euclid(pi), pi);
    Residue::Finite(((r.numer().rem_euclid(pi) * den_inv) % pi) as u32)
}

fn mod_inverse(x: i64, m: i64) -> i64 {
    let e = x.extended_gcd(&m);
    e.x.rem_euclid(m)
}

/// Residue disk of a point of `K`: `Off` for points of the affinoid
/// interior (residue outside `F_p`).
pub fn disk_of_point(x: &K) -> Residue {
    if x.is_zero() {
        return Residue::Finite(0);
    }
    if x.valuation() < 0 {
        return Residue::Infinity;
    }
    let (a, b) = x.residue();
    if b != 0 {
        Residue::Off
    } else {
        Residue::Finite(a)
    }
}

fn cusp_of(m: &Mat2, x: &Residue) -> Option<Ratio<i64>> {
    // Image of a disk centre under m, `None` for infinity.
    let (num, den) = match x {
        Residue::Finite(a) => (m.a * *a as i64 + m.b, m.c * *a as i64 + m.d),
        Residue::Infinity => (m.a, m.c),
        Residue::Off => unreachable!("not a disk"),
    };
    if den == 0 {
        None
    } else {
        Some(Ratio::new(num, den))
    }
}

fn mobius_point(m: &Mat2, x: &K) -> Result<K, PadicError> {
    let num = x.mul_int(m.a).add(&int_like(x, m.b));
    let den = x.mul_int(m.c).add(&int_like(x, m.d));
    num.div(&den)
}

fn int_like(x: &K, n: i64) -> K {
    let prec = (x.relative_precision().max(1) + x.valuation().abs().min(1 << 20) + 4) as u32;
    QuadExtScalar::from_padic(PadicScalar::from_i64(x.p(), n, prec), x.g)
}

/// `x^e` with `x^0` the exact unit even when `x` is zero.
fn power(f: &Field, x: &K, e: i64) -> K {
    if e == 0 {
        f.one()
    } else {
        x.pow(e as u64)
    }
}

fn bin(n: i64, k: i64) -> BigInt {
    if k < 0 || k > n {
        BigInt::zero()
    } else {
        binomial(BigInt::from(n), BigInt::from(k))
    }
}

/// Where a logarithm is centred before it is sorted into the disks.
#[derive(Clone, Debug)]
enum LogCenter {
    Rational(Ratio<i64>),
    Infinity,
    Point(K, Option<QuadForm>),
}

/// A logarithmic atom at an RM point of the affinoid interior.
#[derive(Clone, Debug, PartialEq)]
pub struct IrrationalAtom {
    pub root: K,
    pub form: Option<QuadForm>,
    pub payload: PolyN,
}

/// A pole of finite order at a point of the affinoid interior.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPole {
    pub center: K,
    pub coeffs: Vec<K>,
}

/// Whether an action keeps polynomial parts and logarithm constants
/// (`Exact`) or works modulo polynomials of degree at most `n` and moves
/// logarithmic atoms as points (`Transport`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Exact,
    Transport,
}

#[derive(Clone, Debug)]
pub struct LogLaurentFunction {
    pub field: Field,
    pub branch: PadicScalar,
    pub n: u32,
    pub weight: i64,
    pub order: usize,
    /// Coefficients of `z^m`, `m = 0..=order`.
    pub entire: Vec<K>,
    /// `principal[a][j - 1]` is the coefficient of `(z - a)^(-j)`.
    pub principal: Vec<Vec<K>>,
    /// `P_a(z) log(z - a)`; the `Infinity` entry is the marker.
    pub rational_logs: BTreeMap<Residue, PolyN>,
    pub irrational_atoms: Vec<IrrationalAtom>,
    pub point_poles: Vec<PointPole>,
    pub mod_poly: bool,
}

impl LogLaurentFunction {
    pub fn zero(field: &Field, branch: &PadicScalar, n: u32, weight: i64, order: usize) -> Self {
        LogLaurentFunction {
            field: *field,
            branch: branch.clone(),
            n,
            weight,
            order,
            entire: vec![field.zero(); order + 1],
            principal: vec![vec![field.zero(); order]; field.p as usize],
            rational_logs: BTreeMap::new(),
            irrational_atoms: Vec::new(),
            point_poles: Vec::new(),
            mod_poly: false,
        }
    }

    fn empty_like(&self) -> Self {
        let mut out = Self::zero(&self.field, &self.branch, self.n, self.weight, self.order);
        out.mod_poly = self.mod_poly;
        out
    }

    pub fn p(&self) -> u32 {
        self.field.p
    }

    /// Sum of `P(z) log(z - w)` over atoms of the affinoid interior; the
    /// function is only meaningful modulo polynomials of degree `<= n`.
    pub fn from_atoms(
        field: &Field,
        branch: &PadicScalar,
        n: u32,
        order: usize,
        atoms: Vec<IrrationalAtom>,
    ) -> Result<Self, AffinoidError> {
        let mut f = Self::zero(field, branch, n, -(n as i64), order);
        for atom in atoms {
            if disk_of_point(&atom.root) != Residue::Off {
                return Err(AffinoidError::AtomInRemovedDisk(atom.root.digit_string()));
            }
            f.irrational_atoms.push(atom);
        }
        f.mod_poly = true;
        Ok(f)
    }

    /// Adds `P(z) log(z - w)` for a point `w` inside a removed disk, split
    /// into a logarithm at the disk centre and a series.
    pub fn atom_absorb(&mut self, w: &K, payload: &PolyN) -> Result<(), AffinoidError> {
        match disk_of_point(w) {
            Residue::Off => Err(AffinoidError::AtomNotInRemovedDisk(w.digit_string())),
            Residue::Finite(a) => {
                let delta = w.sub(&self.field.int(a as i64));
                self.absorb_finite(a, &delta, payload)?;
                Ok(())
            }
            Residue::Infinity => self.absorb_infinite(w, payload),
        }
    }

    fn add_log(&mut self, disk: Residue, payload: &PolyN) {
        let entry = self.rational_logs.entry(disk).or_insert_with(|| PolyN::zero(&self.field, self.n));
        *entry = entry.add(payload);
    }

    /// `P(z) log(z - a - δ) = P log(z - a) - P(z) Σ_j δ^j / (j (z - a)^j)`.
    fn absorb_finite(&mut self, a: u32, delta: &K, payload: &PolyN) -> Result<(), AffinoidError> {
        self.add_log(Residue::Finite(a), payload);
        if delta.is_zero() {
            return Ok(());
        }
        let n = self.n as usize;
        let q = payload.taylor_at(&self.field.int(a as i64));
        let top = self.order + n;
        let mut series = Vec::with_capacity(top + 1);
        series.push(self.field.zero());
        let mut power = delta.clone();
        for j in 1..=top {
            series.push(power.div_int(-(j as i64)));
            power = power.mul(delta);
        }
        // Coefficient of (z - a)^(-e) is Σ_i q_i series[e + i].
        for e in -(n as i64)..=(self.order as i64) {
            let mut acc = self.field.zero();
            for (i, qi) in q.iter().enumerate() {
                let idx = e + i as i64;
                if idx >= 1 && (idx as usize) <= top && !qi.is_zero() {
                    acc = acc.add(&qi.mul(&series[idx as usize]));
                }
            }
            if e >= 1 {
                let slot = &mut self.principal[a as usize][e as usize - 1];
                *slot = slot.add(&acc);
            } else {
                self.add_shifted_monomial(&self.field.int(a as i64), (-e) as u32, &acc);
            }
        }
        Ok(())
    }

    /// `P(z) log(z - x) = P log(-x) + P log(1 - z/x)` for `|x| > 1`; the
    /// payload is also recorded on the marker.
    fn absorb_infinite(&mut self, x: &K, payload: &PolyN) -> Result<(), AffinoidError> {
        self.add_log(Residue::Infinity, payload);
        let constant = x.neg().log_branch(&self.branch)?;
        for (i, c) in payload.coeffs.iter().enumerate() {
            self.entire[i] = self.entire[i].add(&c.mul(&constant));
        }
        let inv = x.inv()?;
        let mut powers = Vec::with_capacity(self.order + 1);
        powers.push(self.field.zero());
        let mut pw = inv.clone();
        for j in 1..=self.order {
            powers.push(pw.div_int(-(j as i64)));
            pw = pw.mul(&inv);
        }
        for m in 1..=self.order {
            let mut acc = self.field.zero();
            for (i, c) in payload.coeffs.iter().enumerate() {
                if m > i && !c.is_zero() {
                    acc = acc.add(&c.mul(&powers[m - i]));
                }
            }
            self.entire[m] = self.entire[m].add(&acc);
        }
        Ok(())
    }

    /// Adds `coef (z - b)^e` to the entire part.
    fn add_shifted_monomial(&mut self, b: &K, e: u32, coef: &K) {
        if coef.is_zero() {
            return;
        }
        let minus_b = b.neg();
        let mut power = self.field.one();
        for i in (0..=e).rev() {
            // Term C(e, i) (-b)^(e - i) z^i.
            let term = coef.mul(&power).mul_big(&bin(e as i64, i as i64));
            if (i as usize) < self.entire.len() {
                self.entire[i as usize] = self.entire[i as usize].add(&term);
            }
            power = power.mul(&minus_b);
        }
    }

    fn settle_log(&mut self, center: LogCenter, payload: PolyN) -> Result<(), AffinoidError> {
        match center {
            LogCenter::Infinity => {
                self.add_log(Residue::Infinity, &payload);
                Ok(())
            }
            LogCenter::Rational(r) => match disk_of_rational(&r, self.p()) {
                Residue::Finite(a) => {
                    let delta = self.field.ratio(*r.numer() - a as i64 * *r.denom(), *r.denom());
                    self.absorb_finite(a, &delta, &payload)
                }
                _ => {
                    let x = self.field.ratio(*r.numer(), *r.denom());
                    self.absorb_infinite(&x, &payload)
                }
            },
            LogCenter::Point(x, form) => match disk_of_point(&x) {
                Residue::Off => {
                    self.push_irrational(IrrationalAtom { root: x, form, payload });
                    Ok(())
                }
                _ => self.atom_absorb(&x, &payload),
            },
        }
    }

    fn push_irrational(&mut self, atom: IrrationalAtom) {
        if let Some(form) = atom.form {
            if let Some(existing) = self.irrational_atoms.iter_mut().find(|a| a.form == Some(form)) {
                existing.payload = existing.payload.add(&atom.payload);
                return;
            }
        }
        self.irrational_atoms.push(atom);
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(o);
        out
    }

    pub fn add_assign(&mut self, o: &Self) {
        assert_eq!(self.order, o.order, "series orders differ");
        for (x, y) in self.entire.iter_mut().zip(&o.entire) {
            *x = x.add(y);
        }
        for (xs, ys) in self.principal.iter_mut().zip(&o.principal) {
            for (x, y) in xs.iter_mut().zip(ys) {
                *x = x.add(y);
            }
        }
        for (k, v) in &o.rational_logs {
            self.add_log(*k, v);
        }
        for a in &o.irrational_atoms {
            self.push_irrational(a.clone());
        }
        self.point_poles.extend(o.point_poles.iter().cloned());
        self.mod_poly |= o.mod_poly;
    }

    pub fn scale(&self, s: &K) -> Self {
        let mut out = self.clone();
        out.entire = out.entire.iter().map(|x| x.mul(s)).collect();
        for xs in out.principal.iter_mut() {
            *xs = xs.iter().map(|x| x.mul(s)).collect();
        }
        for v in out.rational_logs.values_mut() {
            *v = v.scale(s);
        }
        for a in out.irrational_atoms.iter_mut() {
            a.payload = a.payload.scale(s);
        }
        for pp in out.point_poles.iter_mut() {
            pp.coeffs = pp.coeffs.iter().map(|x| x.mul(s)).collect();
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(&self.field.int(-1))
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    /// Adds a polynomial of degree `<= n` to the entire part.
    pub fn add_poly(&self, poly: &PolyN) -> Self {
        let mut out = self.clone();
        for (i, c) in poly.coeffs.iter().enumerate() {
            out.entire[i] = out.entire[i].add(c);
        }
        out
    }

    /// Forgets the coefficients of degree `<= n`.
    pub fn drop_polynomial(&mut self) {
        for c in self.entire.iter_mut().take(self.n as usize + 1) {
            *c = self.field.zero();
        }
        self.mod_poly = true;
    }

    /// Smallest valuation among the series coefficients that survive
    /// modulo polynomials, and the logarithm payloads.
    pub fn series_valuation(&self) -> i64 {
        let mut v = i64::MAX;
        for c in self.entire.iter().skip(self.n as usize + 1) {
            v = v.min(c.valuation());
        }
        for xs in &self.principal {
            for c in xs {
                v = v.min(c.valuation());
            }
        }
        for pol in self.rational_logs.values() {
            v = v.min(pol.valuation());
        }
        for a in &self.irrational_atoms {
            v = v.min(a.payload.valuation());
        }
        v
    }

    /// The weight-`w` slash `(f|h)(z) = det(h)^(w/2) (cz + d)^(-w) f(hz)`
    /// for non-positive weight. In `Transport` mode polynomial parts are
    /// dropped and logarithmic atoms move to `h^(-1) x` with payload
    /// `P|h`; in `Exact` mode (`det h = 1`) the constants and the
    /// `log(cz + d)` term are kept.
    pub fn slash(&self, h: &Mat2, mode: ActionMode) -> Result<Self, AffinoidError> {
        if self.weight > 0 {
            return self.slash_rational(h);
        }
        let det = h.det();
        if det <= 0 || (mode == ActionMode::Exact && det != 1) {
            return Err(AffinoidError::UnsupportedMatrix(*h));
        }
        let mut out = self.empty_like();
        out.mod_poly = self.mod_poly || mode == ActionMode::Transport;
        let p = self.p();
        for c in 0..=p {
            let src = if c == p { Residue::Infinity } else { Residue::Finite(c) };
            let (coeffs, first) = if c == p { (&self.entire, 0usize) } else { (&self.principal[c as usize], 1usize) };
            if coeffs.iter().all(QuadExtScalar::is_zero) {
                continue;
            }
            self.slash_component(&mut out, src, coeffs, first, h, mode)?;
        }
        self.slash_logs(&mut out, h, mode)?;
        if !self.point_poles.is_empty() {
            return Err(AffinoidError::UnsupportedMatrix(*h));
        }
        if mode == ActionMode::Transport {
            out.drop_polynomial();
        }
        Ok(out)
    }

    /// Moves the function along `γ`: `slash` by the adjugate in transport
    /// mode, so atoms at `x` land at `γ x`.
    pub fn transport(&self, gamma: &Mat2) -> Result<Self, AffinoidError> {
        self.slash(&gamma.adjugate(), ActionMode::Transport)
    }

    fn slash_component(
        &self,
        out: &mut Self,
        src: Residue,
        coeffs: &[K],
        first: usize,
        h: &Mat2,
        mode: ActionMode,
    ) -> Result<(), AffinoidError> {
        let p = self.p();
        let adj = h.adjugate();
        let target = match cusp_of(&adj, &src) {
            None => Residue::Infinity,
            Some(r) => disk_of_rational(&r, p),
        };
        let ell = match src {
            Residue::Finite(c) => Mat2::new(0, 1, 1, -(c as i64)),
            _ => Mat2::IDENTITY,
        };
        let chart = match target {
            Residue::Finite(b) => Mat2::new(b as i64, 1, 1, 0),
            _ => Mat2::IDENTITY,
        };
        let m = reduce_matrix(&ell.mul(h).mul(&chart), p);
        let e = (-self.weight) as usize;
        let shift = if h.c != 0 && matches!(target, Residue::Finite(_)) { e } else { 0 };
        let len = match target {
            Residue::Finite(_) => self.order + shift + 1,
            _ => self.order + 1,
        };
        let f = &self.field;
        let mob = [f.int(m.a), f.int(m.b), f.int(m.c), f.int(m.d)];
        let mut series = mobius_series(f, coeffs, first, &mob, len)?;
        // Weight factor det^(w/2) (cz + d)^(-w).
        if h.c == 0 {
            let scale = f.int(h.d).pow(e as u64);
            series = series.iter().map(|x| x.mul(&scale)).collect();
        } else {
            let (c0, c1) = match target {
                Residue::Finite(b) => (f.int(h.c), f.int(h.c * b as i64 + h.d)),
                _ => (f.int(h.d), f.int(h.c)),
            };
            for _ in 0..e {
                series = mul_linear(f, &series, &c0, &c1);
            }
        }
        if det_power_needed(h, e) {
            let d = BigInt::from(h.det()).pow(e as u32 / 2);
            series = series.iter().map(|x| x.div_big(&d)).collect();
        }
        match target {
            Residue::Finite(b) => {
                let bk = f.int(b as i64);
                for (j, s) in series.into_iter().enumerate() {
                    let q = j as i64 - shift as i64;
                    if q >= 1 {
                        let slot = &mut out.principal[b as usize][q as usize - 1];
                        *slot = slot.add(&s);
                    } else if mode == ActionMode::Exact {
                        out.add_shifted_monomial(&bk, (-q) as u32, &s);
                    }
                }
            }
            _ => {
                for (j, s) in series.into_iter().enumerate() {
                    out.entire[j] = out.entire[j].add(&s);
                }
            }
        }
        Ok(())
    }

    fn slash_logs(&self, out: &mut Self, h: &Mat2, mode: ActionMode) -> Result<(), AffinoidError> {
        let f = self.field;
        let adj = h.adjugate();
        let r_inf = if h.c == 0 { None } else { Some(Ratio::new(-h.d, h.c)) };
        let mut pending: Vec<(LogCenter, PolyN)> = Vec::new();
        let mut constants = PolyN::zero(&f, self.n);
        let log_ratio = |r: Ratio<i64>| f.ratio(*r.numer(), *r.denom()).log_branch(&self.branch);
        for (disk, payload) in &self.rational_logs {
            let moved = payload.slash(h);
            match disk {
                Residue::Infinity => {
                    if mode == ActionMode::Transport {
                        let center = match cusp_of(&adj, &Residue::Infinity) {
                            None => LogCenter::Infinity,
                            Some(r) => LogCenter::Rational(r),
                        };
                        pending.push((center, moved));
                    }
                }
                Residue::Finite(a) => {
                    let a = *a as i64;
                    let a1 = h.a - a * h.c;
                    if mode == ActionMode::Transport {
                        let center = match cusp_of(&adj, &Residue::Finite(a as u32)) {
                            None => LogCenter::Infinity,
                            Some(r) => LogCenter::Rational(r),
                        };
                        pending.push((center, moved));
                        continue;
                    }
                    if a1 == 0 {
                        let b1 = h.b - a * h.d;
                        constants = constants.add(&moved.scale(&log_ratio(Ratio::from_integer(b1))?));
                    } else {
                        constants = constants.add(&moved.scale(&log_ratio(Ratio::from_integer(a1))?));
                        pending.push((
                            LogCenter::Rational(cusp_of(&adj, &Residue::Finite(a as u32)).unwrap()),
                            moved.clone(),
                        ));
                    }
                    if let Some(r) = r_inf {
                        constants = constants.sub(&moved.scale(&log_ratio(Ratio::from_integer(h.c))?));
                        pending.push((LogCenter::Rational(r), moved.neg()));
                    }
                }
                Residue::Off => unreachable!(),
            }
        }
        for atom in &self.irrational_atoms {
            let moved = atom.payload.slash(h);
            let root = mobius_point(&adj, &atom.root)?;
            let form = atom.form.map(|q| q.transport(&adj));
            pending.push((LogCenter::Point(root, form), moved.clone()));
            if mode == ActionMode::Exact {
                let a1 = f.int(h.a).sub(&atom.root.mul_int(h.c));
                constants = constants.add(&moved.scale(&a1.log_branch(&self.branch)?));
                if let Some(r) = r_inf {
                    constants = constants.sub(&moved.scale(&log_ratio(Ratio::from_integer(h.c))?));
                    pending.push((LogCenter::Rational(r), moved.neg()));
                }
            }
        }
        for (center, payload) in pending {
            out.settle_log(center, payload)?;
        }
        if mode == ActionMode::Exact {
            for (i, c) in constants.coeffs.iter().enumerate() {
                out.entire[i] = out.entire[i].add(c);
            }
        }
        Ok(())
    }

    /// Exact slash by direct partial fractions over rational centres. Used
    /// for positive weight; for non-positive weight it agrees with `slash`
    /// in `Exact` mode on the series parts.
    pub fn slash_rational(&self, h: &Mat2) -> Result<Self, AffinoidError> {
        if h.det() != 1 {
            return Err(AffinoidError::UnsupportedMatrix(*h));
        }
        if (!self.rational_logs.is_empty() || !self.irrational_atoms.is_empty()) && self.weight > 0 {
            return Err(AffinoidError::UnsupportedMatrix(*h));
        }
        let f = self.field;
        let w = self.weight;
        let (al, be, ga, de) = (h.a, h.b, h.c, h.d);
        let mut acc = PoleAccumulator::new(&f, self.order);
        let s_inf = if ga == 0 { None } else { Some(Ratio::new(-de, ga)) };
        // Principal parts, including point poles.
        let mut sources: Vec<(PoleCenter, &Vec<K>)> = Vec::new();
        for (a, cs) in self.principal.iter().enumerate() {
            sources.push((PoleCenter::Rational(Ratio::from_integer(a as i64)), cs));
        }
        for pp in &self.point_poles {
            sources.push((PoleCenter::Point(pp.center.clone()), &pp.coeffs));
        }
        for (center, cs) in sources {
            for (idx, beta) in cs.iter().enumerate() {
                if beta.is_zero() {
                    continue;
                }
                let m = idx as i64 + 1;
                // A1 = α - x γ', B1 = β - x δ.
                let (a1, b1, r) = match &center {
                    PoleCenter::Rational(x) => {
                        let a1 = Ratio::from_integer(al) - x * ga;
                        let b1 = Ratio::from_integer(be) - x * de;
                        let r = if a1.is_zero() { None } else { Some(PoleCenter::Rational(-b1 / a1)) };
                        (f.ratio(*a1.numer(), *a1.denom()), f.ratio(*b1.numer(), *b1.denom()), r)
                    }
                    PoleCenter::Point(x) => {
                        let a1 = f.int(al).sub(&x.mul_int(ga));
                        let b1 = f.int(be).sub(&x.mul_int(de));
                        let r = b1.neg().div(&a1)?;
                        (a1, b1, Some(PoleCenter::Point(r)))
                    }
                };
                let ex = m - w;
                match r {
                    None => {
                        // g = β B1^(-m) (γ'z + δ)^(m - w).
                        let coef = beta.mul(&b1.powi(-m)?);
                        acc.add_linear_power(ga, de, ex, &coef)?;
                    }
                    Some(r) => {
                        let coef = beta.mul(&a1.powi(-m)?);
                        match s_inf {
                            None => {
                                let coef = coef.mul(&f.int(de).powi(ex)?);
                                acc.add_pole(&r, m as usize, &coef);
                            }
                            Some(s) => {
                                let coef = coef.mul(&f.int(ga).powi(ex)?);
                                acc.add_two_pole_product(&r, m, &s, ex, &coef)?;
                            }
                        }
                    }
                }
            }
        }
        // Entire part: e_m (αz + β)^m (γ'z + δ)^(-w - m).
        for (m, em) in self.entire.iter().enumerate() {
            if em.is_zero() {
                continue;
            }
            let m = m as i64;
            match s_inf {
                None => {
                    let scale = em.mul(&f.int(de).powi(-w - m)?);
                    acc.add_linear_power(al, be, m, &scale)?;
                }
                Some(_) => {
                    // αz + β = (α/γ')(γ'z + δ) - 1/γ'.
                    for j in 0..=m {
                        let coef = em
                            .mul(&power(&f, &f.ratio(al, ga), j))
                            .mul(&power(&f, &f.ratio(-1, ga), m - j))
                            .mul_big(&bin(m, j));
                        acc.add_linear_power(ga, de, j - w - m, &coef)?;
                    }
                }
            }
        }
        let mut out = acc.settle(self)?;
        out.weight = self.weight;
        out.mod_poly = self.mod_poly;
        // Logarithms follow the same rules as the fast path.
        self.slash_logs(&mut out, h, ActionMode::Exact)?;
        Ok(out)
    }

    /// Termwise derivative; after `n + 1` derivatives the result is a
    /// weight-`k` meromorphic function with no logarithms.
    pub fn deriv(&self, times: u32) -> Result<Self, AffinoidError> {
        let mut cur = self.clone();
        for _ in 0..times {
            cur = cur.deriv_once()?;
        }
        if times == self.n + 1 && self.weight == -(self.n as i64) {
            cur.weight = self.n as i64 + 2;
            cur.mod_poly = false;
            cur.rational_logs.remove(&Residue::Infinity);
        }
        Ok(cur)
    }

    fn deriv_once(&self) -> Result<Self, AffinoidError> {
        let f = self.field;
        let mut out = self.empty_like();
        out.mod_poly = false;
        for m in 1..self.entire.len() {
            out.entire[m - 1] = self.entire[m].mul_int(m as i64);
        }
        for (a, cs) in self.principal.iter().enumerate() {
            for (idx, c) in cs.iter().enumerate() {
                let j = idx + 1;
                if j < self.order {
                    out.principal[a][j] = out.principal[a][j].add(&c.mul_int(-(j as i64)));
                }
            }
        }
        for pp in &self.point_poles {
            let mut coeffs = vec![f.zero(); pp.coeffs.len() + 1];
            for (idx, c) in pp.coeffs.iter().enumerate() {
                coeffs[idx + 1] = c.mul_int(-(idx as i64 + 1));
            }
            out.point_poles.push(PointPole { center: pp.center.clone(), coeffs });
        }
        // d(P log(z - x)) = P' log(z - x) + P(z)/(z - x).
        for (disk, payload) in &self.rational_logs {
            match disk {
                Residue::Finite(a) => {
                    out.add_log(*disk, &payload.derivative());
                    let center = f.int(*a as i64);
                    let q = payload.taylor_at(&center);
                    let slot = &mut out.principal[*a as usize][0];
                    *slot = slot.add(&q[0]);
                    for (i, qi) in q.iter().enumerate().skip(1) {
                        out.add_shifted_monomial(&center, i as u32 - 1, qi);
                    }
                }
                _ => out.add_log(*disk, &payload.derivative()),
            }
        }
        for atom in &self.irrational_atoms {
            let q = atom.payload.taylor_at(&atom.root);
            out.irrational_atoms.push(IrrationalAtom {
                root: atom.root.clone(),
                form: atom.form,
                payload: atom.payload.derivative(),
            });
            out.point_poles.push(PointPole { center: atom.root.clone(), coeffs: vec![q[0].clone()] });
            for (i, qi) in q.iter().enumerate().skip(1) {
                out.add_shifted_monomial(&atom.root, i as u32 - 1, qi);
            }
        }
        out.irrational_atoms.retain(|a| !a.payload.coeffs.iter().all(|c| c.is_zero() && c.valuation() > i64::MAX / 8));
        out.rational_logs.retain(|_, v| !v.coeffs.iter().all(|c| c.is_zero() && c.valuation() > i64::MAX / 8));
        merge_point_poles(&mut out.point_poles);
        Ok(out)
    }

    /// Values `f(σ), f'(σ), ..., f^(order)(σ)`.
    pub fn eval_jet(&self, sigma: &K, order: usize) -> Result<Vec<K>, AffinoidError> {
        if disk_of_point(sigma) != Residue::Off {
            return Err(AffinoidError::PointOffAffinoid);
        }
        let f = self.field;
        let mut out = vec![f.zero(); order + 1];
        // Entire part by repeated Horner evaluation of derivatives.
        for (k, slot) in out.iter_mut().enumerate() {
            let mut acc = f.zero();
            for m in (k..self.entire.len()).rev() {
                let falling = falling_factorial(m as i64, k as i64);
                acc = acc.mul(sigma).add(&self.entire[m].mul_big(&falling));
            }
            *slot = slot.add(&acc);
        }
        for (a, cs) in self.principal.iter().enumerate() {
            let inv = sigma.sub(&f.int(a as i64)).inv()?;
            add_pole_jet(&mut out, cs, &inv);
        }
        for pp in &self.point_poles {
            let diff = sigma.sub(&pp.center);
            if diff.is_zero() {
                return Err(AffinoidError::PointCollidesWithAtom);
            }
            add_pole_jet(&mut out, &pp.coeffs, &diff.inv()?);
        }
        for (disk, payload) in &self.rational_logs {
            if let Residue::Finite(a) = disk {
                let diff = sigma.sub(&f.int(*a as i64));
                add_log_jet(&mut out, payload, sigma, &diff, &self.branch)?;
            }
        }
        for atom in &self.irrational_atoms {
            let diff = sigma.sub(&atom.root);
            if diff.is_zero() {
                return Err(AffinoidError::PointCollidesWithAtom);
            }
            add_log_jet(&mut out, &atom.payload, sigma, &diff, &self.branch)?;
        }
        Ok(out)
    }

    pub fn eval(&self, sigma: &K) -> Result<K, AffinoidError> {
        Ok(self.eval_jet(sigma, 0)?.remove(0))
    }

    /// One line per non-zero coefficient: `disk, power, valuation, digits`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (m, c) in self.entire.iter().enumerate() {
            if !c.is_zero() {
                let _ = writeln!(s, "inf, {m}, {}, {}", c.valuation(), c.digit_string());
            }
        }
        for (a, cs) in self.principal.iter().enumerate() {
            for (idx, c) in cs.iter().enumerate() {
                if !c.is_zero() {
                    let _ = writeln!(s, "{a}, -{}, {}, {}", idx + 1, c.valuation(), c.digit_string());
                }
            }
        }
        for (disk, pol) in &self.rational_logs {
            let label = match disk {
                Residue::Finite(a) => format!("log{a}"),
                _ => "loginf".to_string(),
            };
            for (i, c) in pol.coeffs.iter().enumerate() {
                if !c.is_zero() {
                    let _ = writeln!(s, "{label}, {i}, {}, {}", c.valuation(), c.digit_string());
                }
            }
        }
        s
    }
}

/// `a (b + c)` with truncation of a power series.
fn mul_linear(f: &Field, s: &[K], c0: &K, c1: &K) -> Vec<K> {
    let mut out = vec![f.zero(); s.len()];
    for j in 0..s.len() {
        let mut v = s[j].mul(c0);
        if j > 0 && !c1.is_zero() {
            v = v.add(&s[j - 1].mul(c1));
        }
        out[j] = v;
    }
    out
}

fn det_power_needed(h: &Mat2, e: usize) -> bool {
    h.det() != 1 && e > 0
}

/// Divides out the common factor of the entries.
fn reduce_matrix(m: &Mat2, _p: u32) -> Mat2 {
    let g = m.a.gcd(&m.b).gcd(&m.c).gcd(&m.d);
    if g > 1 {
        Mat2::new(m.a / g, m.b / g, m.c / g, m.d / g)
    } else {
        *m
    }
}

/// `Σ_i coeffs[i] u^(first + i)` as a power series in `t` with `len`
/// terms, where `u = (A t + B)/(C t + D)` and `D` is a unit.
fn mobius_series(f: &Field, coeffs: &[K], first: usize, mob: &[K; 4], len: usize) -> Result<Vec<K>, PadicError> {
    let [a, b, c, d] = mob;
    let d_inv = d.inv()?;
    let times_u = |s: &[K]| -> Vec<K> {
        let mut out: Vec<K> = Vec::with_capacity(len);
        for j in 0..len {
            let mut v = if b.is_zero() { f.zero() } else { s[j].mul(b) };
            if j > 0 && !a.is_zero() {
                v = v.add(&s[j - 1].mul(a));
            }
            if j > 0 && !c.is_zero() {
                v = v.sub(&out[j - 1].mul(c));
            }
            out.push(v.mul(&d_inv));
        }
        out
    };
    let mut acc = vec![f.zero(); len];
    let mut started = false;
    for cm in coeffs.iter().rev() {
        if started {
            acc = times_u(&acc);
        }
        if !cm.is_zero() || started {
            acc[0] = acc[0].add(cm);
            started = true;
        }
    }
    if !started {
        return Ok(acc);
    }
    for _ in 0..first {
        acc = times_u(&acc);
    }
    Ok(acc)
}

fn falling_factorial(m: i64, k: i64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * (m - i))
}

/// Adds the jet of `Σ_j c_j x^j` with `x = 1/(σ - center)`.
fn add_pole_jet(out: &mut [K], coeffs: &[K], inv: &K) {
    // d^k (σ - c)^(-j) = (-1)^k j (j+1) ... (j+k-1) (σ - c)^(-j-k).
    let order = out.len() - 1;
    let mut inv_powers = vec![inv.clone()];
    for _ in 0..coeffs.len() + order {
        let next = inv_powers.last().unwrap().mul(inv);
        inv_powers.push(next);
    }
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = slot.clone();
        for (idx, c) in coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let j = idx as i64 + 1;
            let rising = (0..k as i64).fold(BigInt::one(), |a, i| a * (j + i));
            let term = c.mul(&inv_powers[idx + k]).mul_big(&rising);
            acc = if k % 2 == 1 { acc.sub(&term) } else { acc.add(&term) };
        }
        *slot = acc;
    }
}

/// Adds the jet of `P(z) log(z - x)` at `σ`, given `diff = σ - x`.
fn add_log_jet(out: &mut [K], payload: &PolyN, sigma: &K, diff: &K, branch: &PadicScalar) -> Result<(), AffinoidError> {
    let order = out.len() - 1;
    // D_0 = log(σ - x), D_i = (-1)^(i-1) (i-1)! (σ - x)^(-i).
    let mut d = vec![diff.log_branch(branch)?];
    let inv = diff.inv()?;
    let mut pw = inv.clone();
    for i in 1..=order {
        let term = pw.mul_big(&crate::poly::factorial(i as u32 - 1));
        d.push(if i % 2 == 0 { term.neg() } else { term });
        pw = pw.mul(&inv);
    }
    let mut derivs = Vec::with_capacity(order + 1);
    let mut cur = payload.clone();
    for _ in 0..=order {
        derivs.push(cur.eval(sigma));
        cur = cur.derivative();
    }
    // Leibniz rule.
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = slot.clone();
        for i in 0..=k {
            let term = derivs[k - i].mul(&d[i]).mul_big(&bin(k as i64, i as i64));
            acc = acc.add(&term);
        }
        *slot = acc;
    }
    Ok(())
}

fn merge_point_poles(poles: &mut Vec<PointPole>) {
    let mut merged: Vec<PointPole> = Vec::new();
    for pp in poles.drain(..) {
        if let Some(existing) = merged.iter_mut().find(|e| e.center.sub(&pp.center).is_zero()) {
            if existing.coeffs.len() < pp.coeffs.len() {
                let z = QuadExtScalar::zero(pp.center.p(), pp.center.g);
                existing.coeffs.resize(pp.coeffs.len(), z);
            }
            for (i, c) in pp.coeffs.iter().enumerate() {
                existing.coeffs[i] = existing.coeffs[i].add(c);
            }
        } else {
            merged.push(pp);
        }
    }
    *poles = merged;
}

#[derive(Clone, Debug)]
enum PoleCenter {
    Rational(Ratio<i64>),
    Point(K),
}

/// Collects principal parts at arbitrary centres and polynomial terms
/// before sorting them into the disks.
struct PoleAccumulator {
    field: Field,
    order: usize,
    rational: BTreeMap<Ratio<i64>, Vec<K>>,
    points: Vec<(K, Vec<K>)>,
    poly: Vec<K>,
}

impl PoleAccumulator {
    fn new(field: &Field, order: usize) -> Self {
        PoleAccumulator { field: *field, order, rational: BTreeMap::new(), points: Vec::new(), poly: Vec::new() }
    }

    fn add_pole(&mut self, center: &PoleCenter, m: usize, coef: &K) {
        if m == 0 {
            self.add_monomial_at(center, 0, coef);
            return;
        }
        let z = self.field.zero();
        let slot = match center {
            PoleCenter::Rational(r) => self.rational.entry(*r).or_default(),
            PoleCenter::Point(x) => {
                let pos = self.points.iter().position(|(c, _)| c.sub(x).is_zero());
                let pos = pos.unwrap_or_else(|| {
                    self.points.push((x.clone(), Vec::new()));
                    self.points.len() - 1
                });
                &mut self.points[pos].1
            }
        };
        if slot.len() < m {
            slot.resize(m, z);
        }
        slot[m - 1] = slot[m - 1].add(coef);
    }

    /// Adds `coef (z - center)^e` for `e >= 0`.
    fn add_monomial_at(&mut self, center: &PoleCenter, e: u32, coef: &K) {
        let c = match center {
            PoleCenter::Rational(r) => self.field.ratio(*r.numer(), *r.denom()),
            PoleCenter::Point(x) => x.clone(),
        };
        let minus = c.neg();
        if self.poly.len() < e as usize + 1 {
            self.poly.resize(e as usize + 1, self.field.zero());
        }
        let mut pw = self.field.one();
        for i in (0..=e).rev() {
            let term = coef.mul(&pw).mul_big(&bin(e as i64, i as i64));
            self.poly[i as usize] = self.poly[i as usize].add(&term);
            pw = pw.mul(&minus);
        }
    }

    /// Adds `coef (c z + d)^e`: a polynomial for `e >= 0`, a pole at
    /// `-d/c` otherwise.
    fn add_linear_power(&mut self, c: i64, d: i64, e: i64, coef: &K) -> Result<(), PadicError> {
        if e >= 0 {
            // Σ_i C(e, i) c^i d^(e-i) z^i.
            if self.poly.len() < e as usize + 1 {
                self.poly.resize(e as usize + 1, self.field.zero());
            }
            for i in 0..=e {
                let k = BigInt::from(c).pow(i as u32) * BigInt::from(d).pow((e - i) as u32) * bin(e, i);
                self.poly[i as usize] = self.poly[i as usize].add(&coef.mul_big(&k));
            }
            return Ok(());
        }
        assert!(c != 0, "negative power of a constant");
        let center = PoleCenter::Rational(Ratio::new(-d, c));
        let scale = coef.mul(&self.field.int(c).powi(e)?);
        self.add_pole(&center, (-e) as usize, &scale);
        Ok(())
    }

    /// Adds `coef (z - r)^(-m) (z - s)^e`, splitting into partial fractions
    /// when `e < 0`.
    fn add_two_pole_product(
        &mut self,
        r: &PoleCenter,
        m: i64,
        s: &Ratio<i64>,
        e: i64,
        coef: &K,
    ) -> Result<(), PadicError> {
        let f = self.field;
        let rk = match r {
            PoleCenter::Rational(x) => f.ratio(*x.numer(), *x.denom()),
            PoleCenter::Point(x) => x.clone(),
        };
        let sk = f.ratio(*s.numer(), *s.denom());
        let diff = rk.sub(&sk); // r - s
        if e >= 0 {
            // (z - s)^e = Σ_i C(e, i) (r - s)^(e - i) (z - r)^i.
            for i in 0..=e {
                let term = coef.mul(&power(&f, &diff, e - i)).mul_big(&bin(e, i));
                let q = i - m;
                if q < 0 {
                    self.add_pole(r, (-q) as usize, &term);
                } else {
                    self.add_monomial_at(r, q as u32, &term);
                }
            }
            return Ok(());
        }
        let fo = -e;
        let sc = PoleCenter::Rational(*s);
        let inv = diff.inv()?;
        for j in 0..m {
            let term = coef.mul(&inv.pow((fo + j) as u64)).mul_big(&bin(fo + j - 1, j));
            let term = if j % 2 == 1 { term.neg() } else { term };
            self.add_pole(r, (m - j) as usize, &term);
        }
        let minus_inv = inv.neg();
        for j in 0..fo {
            let term = coef.mul(&minus_inv.pow((m + j) as u64)).mul_big(&bin(m + j - 1, j));
            let term = if j % 2 == 1 { term.neg() } else { term };
            self.add_pole(&sc, (fo - j) as usize, &term);
        }
        Ok(())
    }

    fn settle(self, like: &LogLaurentFunction) -> Result<LogLaurentFunction, PadicError> {
        let f = self.field;
        let p = f.p;
        let mut out = like.empty_like();
        for (i, c) in self.poly.iter().enumerate() {
            if i < out.entire.len() {
                out.entire[i] = out.entire[i].add(c);
            }
        }
        let recentre =
            |out: &mut LogLaurentFunction, center: K, disk: Residue, coeffs: &[K]| -> Result<(), PadicError> {
                match disk {
                    Residue::Finite(b) => {
                        let delta = center.sub(&f.int(b as i64));
                        let mob = [f.one(), f.zero(), delta.neg(), f.one()];
                        let series = mobius_series(&f, coeffs, 1, &mob, self.order + 1)?;
                        for (j, s) in series.into_iter().enumerate().skip(1) {
                            out.principal[b as usize][j - 1] = out.principal[b as usize][j - 1].add(&s);
                        }
                    }
                    Residue::Infinity => {
                        let mob = [f.zero(), f.one(), f.one(), center.neg()];
                        let series = mobius_series(&f, coeffs, 1, &mob, self.order + 1)?;
                        for (j, s) in series.into_iter().enumerate() {
                            out.entire[j] = out.entire[j].add(&s);
                        }
                    }
                    Residue::Off => {
                        out.point_poles.push(PointPole { center, coeffs: coeffs.to_vec() });
                    }
                }
                Ok(())
            };
        for (r, coeffs) in &self.rational {
            let disk = disk_of_rational(r, p);
            recentre(&mut out, f.ratio(*r.numer(), *r.denom()), disk, coeffs)?;
        }
        for (x, coeffs) in &self.points {
            recentre(&mut out, x.clone(), disk_of_point(x), coeffs)?;
        }
        merge_point_poles(&mut out.point_poles);
        Ok(out)
    }
}
