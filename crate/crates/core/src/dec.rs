//! Cubical box geometry and discrete exterior calculus.
//!
//! The box of side `N` in dimension `d` has vertex set `{0,…,N}^d`. A positively
//! oriented k-cell is an anchor vertex together with a sorted set of `k` axes; the
//! cell spans `[a_i, a_i + 1]` along each of its axes. Cells of each degree are
//! indexed densely, grouped by axis set (lexicographic) and then by anchor with
//! coordinate 0 varying fastest.
//!
//! Forms are `Z_q`-valued functions on positive cells, extended to negative cells by
//! `ω(−c) = −ω(c)`. Chains are integer-valued with the same convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An oriented cell: anchor vertex, sorted axis set, orientation sign.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub anchor: Vec<usize>,
    pub axes: Vec<usize>,
    pub sign: i8,
}

impl Cell {
    pub fn degree(&self) -> usize {
        self.axes.len()
    }

    /// Orientation reversal; anchor and axes are untouched.
    #[must_use]
    pub fn neg(&self) -> Cell {
        Cell { anchor: self.anchor.clone(), axes: self.axes.clone(), sign: -self.sign }
    }
}

#[derive(Clone, Debug)]
struct DegreeTable {
    subsets: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

/// The box `{0,…,N}^d` with precomputed incidence tables for every degree.
#[derive(Clone, Debug)]
pub struct BoxGeometry {
    d: usize,
    n: usize,
    tables: Vec<DegreeTable>,
    // bnd[k] holds the 2k signed faces of each k-cell, flattened.
    bnd: Vec<Vec<(u32, i8)>>,
    // cob[k] is a CSR list of signed (k+1)-cofaces of each k-cell.
    cob_start: Vec<Vec<u32>>,
    cob: Vec<Vec<(u32, i8)>>,
}

fn combinations(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, k, &mut Vec::new(), &mut out);
    out
}

/// `binom(n, k)` for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: usize = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

impl BoxGeometry {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Geometry(format!("dimension must be at least 2, got {d}")));
        }
        if n < 1 {
            return Err(Error::Geometry("side length must be at least 1".into()));
        }
        let cells_total: f64 = (0..=d)
            .map(|k| binomial(d, k) as f64 * (n as f64).powi(k as i32) * ((n + 1) as f64).powi((d - k) as i32))
            .sum();
        if cells_total > 5.0e7 {
            return Err(Error::Geometry(format!("box d={d}, N={n} is too large to tabulate")));
        }
        let mut tables = Vec::with_capacity(d + 1);
        for k in 0..=d {
            let subsets = combinations(d, k);
            let mut offsets = vec![0usize];
            for s in &subsets {
                let count: usize = (0..d).map(|i| if s.contains(&i) { n } else { n + 1 }).product();
                offsets.push(offsets.last().unwrap() + count);
            }
            tables.push(DegreeTable { subsets, offsets });
        }
        let mut geom = BoxGeometry { d, n, tables, bnd: Vec::new(), cob_start: Vec::new(), cob: Vec::new() };
        geom.build_incidence();
        Ok(geom)
    }

    fn build_incidence(&mut self) {
        let d = self.d;
        let mut bnd = vec![Vec::new()];
        for k in 1..=d {
            let count = self.num_cells(k);
            let mut flat = Vec::with_capacity(count * 2 * k);
            for idx in 0..count {
                let c = self.cell(k, idx);
                for j in 0..k {
                    let sign: i8 = if j % 2 == 0 { 1 } else { -1 };
                    let axis = c.axes[j];
                    let mut face_axes = c.axes.clone();
                    face_axes.remove(j);
                    let mut shifted = c.anchor.clone();
                    shifted[axis] += 1;
                    let hi = self.index_raw(&shifted, &face_axes).expect("face inside box");
                    let lo = self.index_raw(&c.anchor, &face_axes).expect("face inside box");
                    flat.push((hi as u32, sign));
                    flat.push((lo as u32, -sign));
                }
            }
            bnd.push(flat);
        }
        let mut cob_start = Vec::new();
        let mut cob = Vec::new();
        for k in 0..d {
            let lower = self.num_cells(k);
            let upper = self.num_cells(k + 1);
            let mut counts = vec![0u32; lower + 1];
            let stride = 2 * (k + 1);
            for entry in &bnd[k + 1] {
                counts[entry.0 as usize + 1] += 1;
            }
            for i in 0..lower {
                counts[i + 1] += counts[i];
            }
            let mut fill = counts.clone();
            let mut list = vec![(0u32, 0i8); bnd[k + 1].len()];
            for p in 0..upper {
                for &(f, s) in &bnd[k + 1][p * stride..(p + 1) * stride] {
                    let slot = &mut fill[f as usize];
                    list[*slot as usize] = (p as u32, s);
                    *slot += 1;
                }
            }
            cob_start.push(counts);
            cob.push(list);
        }
        self.bnd = bnd;
        self.cob_start = cob_start;
        self.cob = cob;
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of positively oriented k-cells, `binom(d,k) N^k (N+1)^(d−k)`.
    pub fn num_cells(&self, k: usize) -> usize {
        self.tables.get(k).map_or(0, |t| *t.offsets.last().unwrap())
    }

    fn check_degree(&self, k: usize) -> Result<()> {
        if k > self.d {
            Err(Error::DegreeOutOfRange { degree: k, dim: self.d })
        } else {
            Ok(())
        }
    }

    fn index_raw(&self, anchor: &[usize], axes: &[usize]) -> Option<usize> {
        let t = self.tables.get(axes.len())?;
        let pos = t.subsets.binary_search_by(|s| s.as_slice().cmp(axes)).ok()?;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for i in 0..self.d {
            let ext = if axes.contains(&i) { self.n } else { self.n + 1 };
            if anchor[i] >= ext {
                return None;
            }
            idx += anchor[i] * stride;
            stride *= ext;
        }
        Some(t.offsets[pos] + idx)
    }

    /// Index of the positive cell underlying `cell` (sign ignored), if it fits in the box.
    pub fn index_of(&self, cell: &Cell) -> Option<usize> {
        if cell.anchor.len() != self.d || cell.axes.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        if cell.axes.iter().any(|&a| a >= self.d) {
            return None;
        }
        self.index_raw(&cell.anchor, &cell.axes)
    }

    /// Index of the positive cell with the given anchor and (sorted) axes.
    pub fn index(&self, anchor: &[usize], axes: &[usize]) -> Option<usize> {
        if anchor.len() != self.d {
            return None;
        }
        self.index_raw(anchor, axes)
    }

    /// Positively oriented k-cell with dense index `idx`.
    pub fn cell(&self, k: usize, idx: usize) -> Cell {
        let t = &self.tables[k];
        let pos = match t.offsets.binary_search(&idx) {
            Ok(p) => p,
            Err(p) => p - 1,
        };
        let axes = t.subsets[pos].clone();
        let mut rem = idx - t.offsets[pos];
        let mut anchor = vec![0; self.d];
        for (i, a) in anchor.iter_mut().enumerate() {
            let ext = if axes.contains(&i) { self.n } else { self.n + 1 };
            *a = rem % ext;
            rem /= ext;
        }
        Cell { anchor, axes, sign: 1 }
    }

    pub fn cells(&self, k: usize) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells(k)).map(move |i| self.cell(k, i))
    }

    /// Signed faces of the positive k-cell `idx` (k ≥ 1); always 2k entries.
    pub fn faces(&self, k: usize, idx: usize) -> &[(u32, i8)] {
        &self.bnd[k][idx * 2 * k..(idx + 1) * 2 * k]
    }

    /// Signed (k+1)-cells whose boundary contains the positive k-cell `idx`.
    pub fn cofaces(&self, k: usize, idx: usize) -> &[(u32, i8)] {
        let s = &self.cob_start[k];
        &self.cob[k][s[idx] as usize..s[idx + 1] as usize]
    }

    /// Index of the edge from `anchor` along `axis`.
    pub fn edge(&self, anchor: &[usize], axis: usize) -> Option<usize> {
        self.index(anchor, &[axis])
    }

    pub fn vertex(&self, v: &[usize]) -> Option<usize> {
        self.index(v, &[])
    }
}

/// A `Z_q`-valued k-form, stored densely over positive cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Form {
    degree: usize,
    q: u32,
    values: Vec<u8>,
}

impl Form {
    pub fn zero(geom: &BoxGeometry, degree: usize, q: u32) -> Result<Form> {
        geom.check_degree(degree)?;
        check_modulus(q)?;
        Ok(Form { degree, q, values: vec![0; geom.num_cells(degree)] })
    }

    /// Builds a form from one value per positive cell, reducing mod `q`.
    pub fn from_values(geom: &BoxGeometry, degree: usize, q: u32, values: &[i64]) -> Result<Form> {
        geom.check_degree(degree)?;
        check_modulus(q)?;
        if values.len() != geom.num_cells(degree) {
            return Err(Error::Invalid(format!(
                "expected {} values for degree {degree}, got {}",
                geom.num_cells(degree),
                values.len()
            )));
        }
        let values = values.iter().map(|&v| v.rem_euclid(q as i64) as u8).collect();
        Ok(Form { degree, q, values })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn modulus(&self) -> u32 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, idx: usize) -> u32 {
        self.values[idx] as u32
    }

    pub fn set(&mut self, idx: usize, v: i64) {
        self.values[idx] = v.rem_euclid(self.q as i64) as u8;
    }

    /// Value on an oriented cell: `ω(−c) = −ω(c)`.
    pub fn oriented(&self, idx: usize, sign: i8) -> u32 {
        let v = self.values[idx] as u32;
        if sign >= 0 || v == 0 {
            v
        } else {
            self.q - v
        }
    }

    /// Positive cells where the form is nonzero.
    pub fn support(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect()
    }

    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    fn same_space(&self, other: &Form) -> Result<()> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch { expected: self.degree, got: other.degree });
        }
        if self.q != other.q {
            return Err(Error::ModulusMismatch { expected: self.q, got: other.q });
        }
        Ok(())
    }

    pub fn add(&self, other: &Form) -> Result<Form> {
        self.same_space(other)?;
        let q = self.q as u16;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| ((a as u16 + b as u16) % q) as u8).collect();
        Ok(Form { degree: self.degree, q: self.q, values })
    }

    #[must_use]
    pub fn neg(&self) -> Form {
        let q = self.q as u8;
        let values = self.values.iter().map(|&v| if v == 0 { 0 } else { q - v }).collect();
        Form { degree: self.degree, q: self.q, values }
    }

    pub fn sub(&self, other: &Form) -> Result<Form> {
        self.add(&other.neg())
    }

    /// Image under the ring surjection `Z_q → Z_r`; requires `r | q`.
    pub fn reduce(&self, r: u32) -> Result<Form> {
        check_modulus(r)?;
        if self.q % r != 0 {
            return Err(Error::ModulusMismatch { expected: self.q, got: r });
        }
        let values = self.values.iter().map(|&v| (v as u32 % r) as u8).collect();
        Ok(Form { degree: self.degree, q: r, values })
    }

    pub fn to_record(&self, geom: &BoxGeometry) -> CellRecord {
        let entries = self
            .support()
            .into_iter()
            .map(|i| {
                let c = geom.cell(self.degree, i);
                CellEntry { anchor: c.anchor, axes: c.axes, value: self.values[i] as i64 }
            })
            .collect();
        CellRecord { degree: self.degree, q: Some(self.q), entries }
    }

    pub fn from_record(geom: &BoxGeometry, rec: &CellRecord) -> Result<Form> {
        let q = rec.q.ok_or_else(|| Error::Invalid("form record without modulus".into()))?;
        let mut f = Form::zero(geom, rec.degree, q)?;
        for e in &rec.entries {
            if e.axes.len() != rec.degree {
                return Err(Error::DegreeMismatch { expected: rec.degree, got: e.axes.len() });
            }
            let idx = geom
                .index(&e.anchor, &e.axes)
                .ok_or_else(|| Error::Invalid(format!("cell {:?}/{:?} not in box", e.anchor, e.axes)))?;
            f.set(idx, e.value);
        }
        Ok(f)
    }
}

fn check_modulus(q: u32) -> Result<()> {
    if !(2..=255).contains(&q) {
        return Err(Error::Invalid(format!("modulus must lie in 2..=255, got {q}")));
    }
    Ok(())
}

/// An integer-valued k-chain over positive cells, `c(−e) = −c(e)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chain {
    degree: usize,
    coeffs: Vec<i64>,
}

impl Chain {
    pub fn zero(geom: &BoxGeometry, degree: usize) -> Result<Chain> {
        geom.check_degree(degree)?;
        Ok(Chain { degree, coeffs: vec![0; geom.num_cells(degree)] })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    pub fn coeff(&self, idx: usize) -> i64 {
        self.coeffs[idx]
    }

    /// Adds `k · cell` (the cell's sign is applied).
    pub fn add_cell(&mut self, geom: &BoxGeometry, cell: &Cell, k: i64) -> Result<()> {
        if cell.degree() != self.degree {
            return Err(Error::DegreeMismatch { expected: self.degree, got: cell.degree() });
        }
        let idx = geom.index_of(cell).ok_or_else(|| Error::Invalid(format!("cell {cell:?} not in box")))?;
        self.coeffs[idx] += k * cell.sign as i64;
        Ok(())
    }

    pub fn add_index(&mut self, idx: usize, k: i64) {
        self.coeffs[idx] += k;
    }

    pub fn support(&self) -> Vec<usize> {
        self.coeffs.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&v| v == 0)
    }

    /// Sum of absolute coefficients.
    pub fn mass(&self) -> i64 {
        self.coeffs.iter().map(|v| v.abs()).sum()
    }

    pub fn add(&self, other: &Chain) -> Result<Chain> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch { expected: self.degree, got: other.degree });
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Chain { degree: self.degree, coeffs })
    }

    #[must_use]
    pub fn neg(&self) -> Chain {
        Chain { degree: self.degree, coeffs: self.coeffs.iter().map(|v| -v).collect() }
    }

    pub fn to_record(&self, geom: &BoxGeometry) -> CellRecord {
        let entries = self
            .support()
            .into_iter()
            .map(|i| {
                let c = geom.cell(self.degree, i);
                CellEntry { anchor: c.anchor, axes: c.axes, value: self.coeffs[i] }
            })
            .collect();
        CellRecord { degree: self.degree, q: None, entries }
    }

    pub fn from_record(geom: &BoxGeometry, rec: &CellRecord) -> Result<Chain> {
        let mut c = Chain::zero(geom, rec.degree)?;
        for e in &rec.entries {
            if e.axes.len() != rec.degree {
                return Err(Error::DegreeMismatch { expected: rec.degree, got: e.axes.len() });
            }
            let idx = geom
                .index(&e.anchor, &e.axes)
                .ok_or_else(|| Error::Invalid(format!("cell {:?}/{:?} not in box", e.anchor, e.axes)))?;
            c.coeffs[idx] += e.value;
        }
        Ok(c)
    }
}

/// JSON shape shared by forms and chains; only positive cells with nonzero value appear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    pub entries: Vec<CellEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub anchor: Vec<usize>,
    pub axes: Vec<usize>,
    pub value: i64,
}

/// `(dω)(p) = ω(∂p)` in `Z_q`.
pub fn exterior_derivative(geom: &BoxGeometry, omega: &Form) -> Result<Form> {
    let k = omega.degree;
    if k >= geom.d {
        return Err(Error::DegreeOutOfRange { degree: k + 1, dim: geom.d });
    }
    let q = omega.q as i64;
    let count = geom.num_cells(k + 1);
    let mut values = vec![0u8; count];
    for (p, out) in values.iter_mut().enumerate() {
        let mut acc = 0i64;
        for &(f, s) in geom.faces(k + 1, p) {
            acc += s as i64 * omega.values[f as usize] as i64;
        }
        *out = acc.rem_euclid(q) as u8;
    }
    Ok(Form { degree: k + 1, q: omega.q, values })
}

/// `(δω)(e) = ω(∂̂e)` where `∂̂e` is the sum of cells having `e` in their boundary.
pub fn coderivative(geom: &BoxGeometry, omega: &Form) -> Result<Form> {
    let k = omega.degree;
    if k == 0 || k > geom.d {
        return Err(Error::DegreeOutOfRange { degree: k, dim: geom.d });
    }
    let q = omega.q as i64;
    let count = geom.num_cells(k - 1);
    let mut values = vec![0u8; count];
    for (e, out) in values.iter_mut().enumerate() {
        let mut acc = 0i64;
        for &(c, s) in geom.cofaces(k - 1, e) {
            acc += s as i64 * omega.values[c as usize] as i64;
        }
        *out = acc.rem_euclid(q) as u8;
    }
    Ok(Form { degree: k - 1, q: omega.q, values })
}

/// Oriented boundary, extended linearly.
pub fn boundary(geom: &BoxGeometry, c: &Chain) -> Result<Chain> {
    let k = c.degree;
    if k == 0 || k > geom.d {
        return Err(Error::DegreeOutOfRange { degree: k, dim: geom.d });
    }
    let mut out = vec![0i64; geom.num_cells(k - 1)];
    for (p, &v) in c.coeffs.iter().enumerate() {
        if v == 0 {
            continue;
        }
        for &(f, s) in geom.faces(k, p) {
            out[f as usize] += v * s as i64;
        }
    }
    Ok(Chain { degree: k - 1, coeffs: out })
}

/// `∂̂`: the chain of (k+1)-cells whose boundary contains each cell, extended linearly.
/// Note `|∂̂e|` counts plaquettes around an edge, which is what the bound `2(d−1)`
/// refers to; `∂` of an edge is its two endpoints.
pub fn coboundary_chain(geom: &BoxGeometry, c: &Chain) -> Result<Chain> {
    let k = c.degree;
    if k >= geom.d {
        return Err(Error::DegreeOutOfRange { degree: k + 1, dim: geom.d });
    }
    let mut out = vec![0i64; geom.num_cells(k + 1)];
    for (e, &v) in c.coeffs.iter().enumerate() {
        if v == 0 {
            continue;
        }
        for &(p, s) in geom.cofaces(k, e) {
            out[p as usize] += v * s as i64;
        }
    }
    Ok(Chain { degree: k + 1, coeffs: out })
}

/// `ω(c) = Σ_p c(p) ω(p)` in `Z_q`.
pub fn evaluate(omega: &Form, c: &Chain) -> Result<u32> {
    if omega.degree != c.degree {
        return Err(Error::DegreeMismatch { expected: omega.degree, got: c.degree });
    }
    let q = omega.q as i64;
    let mut acc = 0i64;
    for (v, k) in omega.values.iter().zip(&c.coeffs) {
        if *k != 0 {
            acc = (acc + k.rem_euclid(q) * *v as i64) % q;
        }
    }
    Ok(acc as u32)
}
