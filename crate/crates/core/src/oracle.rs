//! Ground-truth engines.
//!
//! * full enumeration of the coupled `(σ, φ)` model and of the unitary-gauge model;
//! * a column transfer matrix for straight Wilson lines in the d = 2, Z_2 model;
//! * numeric checks of monotonicity in (β, κ) and of Griffiths' second inequality.
//!
//! Enumeration is split into fixed-size index blocks. Blocks are summed in parallel with
//! compensated accumulation and then combined in block order, so results do not depend
//! on the number of worker threads.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dec::{boundary, BoxGeometry, Chain};
use crate::error::{Error, Result};
use crate::gaugemodel::{ModelParams, Path};

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_BUDGET: u64 = 1 << 28;

pub(crate) const BLOCK: u64 = 1 << 12;

/// Enumeration budget, overridable through `LATTHIGGS_BUDGET`.
pub fn enumeration_budget() -> u64 {
    std::env::var("LATTHIGGS_BUDGET")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .unwrap_or(DEFAULT_BUDGET)
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Compensated) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    /// `log Σ exp(H)` over all enumerated configurations.
    pub log_z: f64,
    /// `E[W]` for each requested chain, in request order.
    pub wilson_expectations: Vec<Complex64>,
    pub config_count: u64,
}

pub(crate) fn check_budget(count: f64, budget: u64) -> Result<()> {
    if count > budget as f64 {
        return Err(Error::Budget { needed: count, budget });
    }
    Ok(())
}

struct Insertion {
    edges: Vec<(usize, i64)>,
    verts: Vec<(usize, i64)>,
}

fn insertions(geom: &BoxGeometry, chains: &[Chain]) -> Result<Vec<Insertion>> {
    chains
        .iter()
        .map(|c| {
            if c.degree() != 1 {
                return Err(Error::DegreeMismatch { expected: 1, got: c.degree() });
            }
            let b = boundary(geom, c)?;
            Ok(Insertion {
                edges: c.support().into_iter().map(|e| (e, c.coeff(e))).collect(),
                verts: b.support().into_iter().map(|v| (v, b.coeff(v))).collect(),
            })
        })
        .collect()
}

pub(crate) fn block_reduce<F>(total: u64, n_obs: usize, f: F) -> (Compensated, Vec<(Compensated, Compensated)>)
where
    F: Fn(u64, u64, &mut Compensated, &mut [(Compensated, Compensated)]) + Sync,
{
    let blocks = total.div_ceil(BLOCK);
    let parts: Vec<(Compensated, Vec<(Compensated, Compensated)>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(total);
            let mut z = Compensated::default();
            let mut w = vec![(Compensated::default(), Compensated::default()); n_obs];
            f(start, end, &mut z, &mut w);
            (z, w)
        })
        .collect();
    let mut z = Compensated::default();
    let mut w = vec![(Compensated::default(), Compensated::default()); n_obs];
    for (pz, pw) in &parts {
        z.merge(pz);
        for (acc, p) in w.iter_mut().zip(pw) {
            acc.0.merge(&p.0);
            acc.1.merge(&p.1);
        }
    }
    (z, w)
}

pub(crate) fn decode(mut idx: u64, radices: &[u32], digits: &mut [u32]) {
    for (d, &r) in digits.iter_mut().zip(radices) {
        *d = (idx % r as u64) as u32;
        idx /= r as u64;
    }
}

pub(crate) fn increment(radices: &[u32], digits: &mut [u32]) {
    for (d, &r) in digits.iter_mut().zip(radices) {
        *d += 1;
        if *d < r {
            return;
        }
        *d = 0;
    }
}

/// Exact enumeration of the coupled model, with one `ρ_m(σ(c)) conj ρ_n(φ(∂c))` insertion per chain.
pub fn exact_coupled(geom: &BoxGeometry, p: &ModelParams, chains: &[Chain]) -> Result<ExactResult> {
    p.validate()?;
    let ne = geom.num_cells(1);
    let nv = geom.num_cells(0);
    let np = geom.num_cells(2);
    let count = (p.m as f64).powi(ne as i32) * (p.n as f64).powi(nv as i32);
    check_budget(count, enumeration_budget())?;
    let total = count as u64;
    let ins = insertions(geom, chains)?;
    let (m, n) = (p.m, p.n);
    let mut radices = vec![m; ne];
    radices.extend(std::iter::repeat_n(n, nv));
    let plaq_cos: Vec<f64> = (0..m).map(|j| 2.0 * (2.0 * PI * j as f64 / m as f64).cos()).collect();
    let edge_cos: Vec<f64> = (0..m * n)
        .map(|k| {
            let (s, t) = (k / n, k % n);
            2.0 * (2.0 * PI * (s as f64 / m as f64 - t as f64 / n as f64)).cos()
        })
        .collect();
    let char_table: Vec<Complex64> = (0..m * n)
        .map(|k| {
            let (s, t) = (k / n, k % n);
            Complex64::from_polar(1.0, 2.0 * PI * (s as f64 / m as f64 - t as f64 / n as f64))
        })
        .collect();
    let plaq_faces: Vec<[(usize, i64); 4]> = (0..np)
        .map(|q| {
            let f = geom.faces(2, q);
            [0, 1, 2, 3].map(|i| (f[i].0 as usize, f[i].1 as i64))
        })
        .collect();
    // edge faces are (head, +1), (tail, −1)
    let edge_ends: Vec<(usize, usize)> = (0..ne)
        .map(|e| {
            let f = geom.faces(1, e);
            (f[0].0 as usize, f[1].0 as usize)
        })
        .collect();
    let h_max = 2.0 * p.beta * np as f64 + 2.0 * p.kappa * ne as f64;
    let (beta, kappa) = (p.beta, p.kappa);
    let (mi, ni) = (m as i64, n as i64);
    let (z, w) = block_reduce(total, ins.len(), |start, end, z, w| {
        let mut digits = vec![0u32; ne + nv];
        decode(start, &radices, &mut digits);
        for _ in start..end {
            let (sigma, phi) = digits.split_at(ne);
            let mut plaq = 0.0;
            for f in &plaq_faces {
                let v: i64 = f.iter().map(|&(e, s)| s * sigma[e] as i64).sum();
                plaq += plaq_cos[v.rem_euclid(mi) as usize];
            }
            let mut edge = 0.0;
            for (e, &(h, t)) in edge_ends.iter().enumerate() {
                let dphi = (phi[h] as i64 - phi[t] as i64).rem_euclid(ni) as u32;
                edge += edge_cos[(sigma[e] * n + dphi) as usize];
            }
            let weight = (beta * plaq + kappa * edge - h_max).exp();
            z.add(weight);
            for (acc, g) in w.iter_mut().zip(&ins) {
                let s: i64 = g.edges.iter().map(|&(e, c)| c * sigma[e] as i64).sum();
                let f: i64 = g.verts.iter().map(|&(v, c)| c * phi[v] as i64).sum();
                let ch = char_table[(s.rem_euclid(mi) * ni + f.rem_euclid(ni)) as usize];
                acc.0.add(weight * ch.re);
                acc.1.add(weight * ch.im);
            }
            increment(&radices, &mut digits);
        }
    });
    let zv = z.value();
    Ok(ExactResult {
        log_z: zv.ln() + h_max,
        wilson_expectations: w.iter().map(|(re, im)| Complex64::new(re.value() / zv, im.value() / zv)).collect(),
        config_count: total,
    })
}

/// Exact enumeration of the unitary-gauge model, with one `ρ_m(σ(c))` insertion per chain.
pub fn exact_unitary(geom: &BoxGeometry, p: &ModelParams, chains: &[Chain]) -> Result<ExactResult> {
    p.validate()?;
    if p.m != p.n {
        return Err(Error::Unsupported(format!("unitary gauge needs m = n, got m={}, n={}", p.m, p.n)));
    }
    let ne = geom.num_cells(1);
    let np = geom.num_cells(2);
    let count = (p.m as f64).powi(ne as i32);
    check_budget(count, enumeration_budget())?;
    let total = count as u64;
    let ins = insertions(geom, chains)?;
    let m = p.m;
    let radices = vec![m; ne];
    let cos_m: Vec<f64> = (0..m).map(|j| 2.0 * (2.0 * PI * j as f64 / m as f64).cos()).collect();
    let chars: Vec<Complex64> = (0..m).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64)).collect();
    let plaq_faces: Vec<[(usize, i64); 4]> = (0..np)
        .map(|q| {
            let f = geom.faces(2, q);
            [0, 1, 2, 3].map(|i| (f[i].0 as usize, f[i].1 as i64))
        })
        .collect();
    let h_max = 2.0 * p.beta * np as f64 + 2.0 * p.kappa * ne as f64;
    let (beta, kappa) = (p.beta, p.kappa);
    let mi = m as i64;
    let (z, w) = block_reduce(total, ins.len(), |start, end, z, w| {
        let mut sigma = vec![0u32; ne];
        decode(start, &radices, &mut sigma);
        for _ in start..end {
            let mut plaq = 0.0;
            for f in &plaq_faces {
                let v: i64 = f.iter().map(|&(e, s)| s * sigma[e] as i64).sum();
                plaq += cos_m[v.rem_euclid(mi) as usize];
            }
            let edge: f64 = sigma.iter().map(|&s| cos_m[s as usize]).sum();
            let weight = (beta * plaq + kappa * edge - h_max).exp();
            z.add(weight);
            for (acc, g) in w.iter_mut().zip(&ins) {
                let s: i64 = g.edges.iter().map(|&(e, c)| c * sigma[e] as i64).sum();
                let ch = chars[s.rem_euclid(mi) as usize];
                acc.0.add(weight * ch.re);
                acc.1.add(weight * ch.im);
            }
            increment(&radices, &mut sigma);
        }
    });
    let zv = z.value();
    Ok(ExactResult {
        log_z: zv.ln() + h_max,
        wilson_expectations: w.iter().map(|(re, im)| Complex64::new(re.value() / zv, im.value() / zv)).collect(),
        config_count: total,
    })
}

/// `E[W_γ] = Z[γ]/Z[0]` in the coupled model.
pub fn exact_coupled_expectation(geom: &BoxGeometry, gamma: &Path, p: &ModelParams) -> Result<Complex64> {
    Ok(exact_coupled(geom, p, std::slice::from_ref(gamma.chain()))?.wilson_expectations[0])
}

/// `E^{(U)}[ρ(σ(γ))]`.
pub fn exact_unitary_expectation(geom: &BoxGeometry, gamma: &Path, p: &ModelParams) -> Result<Complex64> {
    Ok(exact_unitary(geom, p, std::slice::from_ref(gamma.chain()))?.wilson_expectations[0])
}

/// `log Σ_σ activity(σ)` for the Z_2 unitary model: the partition function normalized so
/// that the vacuum has weight one.
pub fn log_z_normalized(geom: &BoxGeometry, p: &ModelParams) -> Result<f64> {
    let r = exact_unitary(geom, p, &[])?;
    Ok(r.log_z - (2.0 * p.beta * geom.num_cells(2) as f64 + 2.0 * p.kappa * geom.num_cells(1) as f64))
}

/// Smallest distance from a vertex of `γ` to the box boundary.
pub fn path_margin(geom: &BoxGeometry, gamma: &Path) -> usize {
    let n = geom.side();
    let mut best = usize::MAX;
    for (e, _) in gamma.edges() {
        for &(v, _) in geom.faces(1, e) {
            let c = geom.cell(0, v as usize);
            for &a in &c.anchor {
                best = best.min(a.min(n - a));
            }
        }
    }
    if best == usize::MAX {
        n / 2
    } else {
        best
    }
}

/// A straight Wilson line in the d = 2 box: edges `(x, y0) → (x+1, y0)` for `x0 ≤ x < x0 + len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub x0: usize,
    pub y0: usize,
    pub len: usize,
}

impl Line {
    /// Centered placement in a box of side `side`.
    pub fn centered(side: usize, len: usize) -> Line {
        Line { x0: side.saturating_sub(len) / 2, y0: side / 2, len }
    }

    pub fn margin(&self, side: usize) -> usize {
        let right = side.saturating_sub(self.x0 + self.len);
        self.x0.min(right).min(self.y0).min(side - self.y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub expectation: f64,
    /// `−log E`, computed from the odd-sector probability to keep relative precision
    /// when `E` is close to one.
    pub neg_log: f64,
    pub margin: usize,
}

/// Largest side length accepted by the transfer matrix.
pub const TRANSFER_MAX_SIDE: usize = 12;

fn chain_kernels(side: usize, beta: f64, kappa: f64, row: Option<usize>) -> (Vec<f64>, Vec<f64>) {
    // For each vertical-difference pattern u, sum over the N+1 horizontal spins of one
    // column gap. With `row = Some(y0)` the sum is split by the sign of spin y0.
    let states = 1usize << side;
    let mut plus = vec![0.0; states];
    let mut minus = vec![0.0; states];
    let field = |h: usize| if h == 0 { 0.0 } else { -4.0 * kappa };
    for u in 0..states {
        for branch in 0..2usize {
            if row.is_none() && branch == 1 {
                continue;
            }
            // f[h] with h = 0 for spin +1, 1 for spin −1; weights shifted so the all-plus term is 1
            let mut f = [field(0).exp(), field(1).exp()];
            if row == Some(0) {
                f[1 - branch] = 0.0;
            }
            for y in 0..side {
                let j = if u >> y & 1 == 0 { 1.0 } else { -1.0 };
                let mut g = [0.0; 2];
                for (hn, gv) in g.iter_mut().enumerate() {
                    for (h, &fv) in f.iter().enumerate() {
                        let prod = if h == hn { 1.0 } else { -1.0 };
                        *gv += fv * (2.0 * beta * (j * prod - 1.0)).exp();
                    }
                    *gv *= field(hn).exp();
                }
                if row == Some(y + 1) {
                    g[1 - branch] = 0.0;
                }
                f = g;
            }
            let total = f[0] + f[1];
            if branch == 0 {
                plus[u] = total;
            } else {
                minus[u] = total;
            }
        }
    }
    (plus, minus)
}

fn xor_convolve(kernel: &[f64], v: &[f64]) -> Vec<f64> {
    let states = v.len();
    (0..states)
        .into_par_iter()
        .map(|t| {
            let mut acc = 0.0;
            for (s, &vs) in v.iter().enumerate() {
                acc += kernel[s ^ t] * vs;
            }
            acc
        })
        .collect()
}

/// `E^{(U)}[W_γ]` for a straight line along axis 0 in the d = 2, Z_2 unitary model.
///
/// The state is the vector of vertical-edge spins in one column; horizontal edges are
/// summed into the column-to-column kernel, which depends only on the XOR of adjacent
/// states. The Wilson line splits the kernel by the sign of the spin on the line row.
pub fn transfer_matrix_line(side: usize, beta: f64, kappa: f64, line: Line) -> Result<TransferResult> {
    if side == 0 || side > TRANSFER_MAX_SIDE {
        return Err(Error::Unsupported(format!("transfer matrix supports 1 <= N <= {TRANSFER_MAX_SIDE}, got {side}")));
    }
    if line.x0 + line.len > side || line.y0 > side {
        return Err(Error::NotAPath(format!("line {line:?} leaves the box of side {side}")));
    }
    if !(beta >= 0.0 && kappa >= 0.0 && beta.is_finite() && kappa.is_finite()) {
        return Err(Error::Invalid("beta, kappa must be finite and >= 0".into()));
    }
    let states = 1usize << side;
    // column field, shifted so the all-plus column has weight 1
    let column: Vec<f64> = (0..states).map(|v| (-4.0 * kappa * (v as u32).count_ones() as f64).exp()).collect();
    let (k_all, _) = chain_kernels(side, beta, kappa, None);
    let (k_plus, k_minus) = if line.len > 0 {
        chain_kernels(side, beta, kappa, Some(line.y0))
    } else {
        (Vec::new(), Vec::new())
    };
    let mut even = column.clone();
    let mut odd = vec![0.0; states];
    let mut odd_live = false;
    for x in 0..side {
        let on_line = x >= line.x0 && x < line.x0 + line.len;
        let (mut ne, mut no) = if on_line {
            let ep = xor_convolve(&k_plus, &even);
            let em = xor_convolve(&k_minus, &even);
            if odd_live {
                let op = xor_convolve(&k_plus, &odd);
                let om = xor_convolve(&k_minus, &odd);
                (ep.iter().zip(&om).map(|(a, b)| a + b).collect(), em.iter().zip(&op).map(|(a, b)| a + b).collect())
            } else {
                (ep, em)
            }
        } else {
            let e = xor_convolve(&k_all, &even);
            let o = if odd_live { xor_convolve(&k_all, &odd) } else { vec![0.0; states] };
            (e, o)
        };
        odd_live = odd_live || on_line;
        for ((a, b), c) in ne.iter_mut().zip(no.iter_mut()).zip(&column) {
            *a *= c;
            *b *= c;
        }
        let scale = ne.iter().chain(no.iter()).cloned().fold(0.0, f64::max);
        if scale > 0.0 {
            ne.iter_mut().for_each(|v| *v /= scale);
            no.iter_mut().for_each(|v| *v /= scale);
        }
        even = ne;
        odd = no;
    }
    let mut ze = Compensated::default();
    let mut zo = Compensated::default();
    even.iter().for_each(|&v| ze.add(v));
    odd.iter().for_each(|&v| zo.add(v));
    let p_odd = zo.value() / (ze.value() + zo.value());
    let expectation = 1.0 - 2.0 * p_odd;
    let neg_log = if p_odd < 0.5 { -(-2.0 * p_odd).ln_1p() } else { f64::INFINITY };
    Ok(TransferResult { expectation, neg_log, margin: line.margin(side) })
}

/// Transfer-matrix evaluation for a [`Path`]; the path must be a straight, positively
/// oriented run along axis 0 and the model must be d = 2, m = n = 2.
pub fn transfer_matrix_expectation(geom: &BoxGeometry, gamma: &Path, p: &ModelParams) -> Result<f64> {
    if p.d != 2 || geom.dim() != 2 {
        return Err(Error::Unsupported(format!("transfer matrix needs d = 2, got {}", p.d)));
    }
    if p.m != 2 || p.n != 2 {
        return Err(Error::Unsupported(format!("transfer matrix needs m = n = 2, got m={}, n={}", p.m, p.n)));
    }
    let line = straight_line_of(geom, gamma)?;
    Ok(transfer_matrix_line(geom.side(), p.beta, p.kappa, line)?.expectation)
}

/// Recovers the [`Line`] of a straight positive path along axis 0.
pub fn straight_line_of(geom: &BoxGeometry, gamma: &Path) -> Result<Line> {
    let edges = gamma.edges();
    if edges.is_empty() {
        return Ok(Line { x0: 0, y0: 0, len: 0 });
    }
    let mut cells: Vec<_> = edges
        .iter()
        .map(|&(e, c)| {
            let cell = geom.cell(1, e);
            (cell, c)
        })
        .collect();
    if cells.iter().any(|(c, k)| c.axes[0] != 0 || *k != 1) {
        return Err(Error::Unsupported("transfer matrix handles positive straight lines along axis 0".into()));
    }
    cells.sort_by_key(|(c, _)| c.anchor[0]);
    let y0 = cells[0].0.anchor[1];
    let x0 = cells[0].0.anchor[0];
    for (i, (c, _)) in cells.iter().enumerate() {
        if c.anchor[1] != y0 || c.anchor[0] != x0 + i {
            return Err(Error::Unsupported("path is not a straight line".into()));
        }
    }
    Ok(Line { x0, y0, len: cells.len() })
}

/// Result of a monotonicity scan over a (β, κ) grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub points: usize,
    pub comparisons: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub tolerance: f64,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn real_expectations(geom: &BoxGeometry, p: &ModelParams, chains: &[Chain]) -> Result<Vec<f64>> {
    let r = if p.m == p.n { exact_unitary(geom, p, chains)? } else { exact_coupled(geom, p, chains)? };
    Ok(r.wilson_expectations.iter().map(|c| c.re).collect())
}

/// Checks that `E[W_γ]` is nondecreasing along every row and column of the grid.
pub fn check_monotonicity(
    geom: &BoxGeometry,
    p: &ModelParams,
    gamma: &Path,
    betas: &[f64],
    kappas: &[f64],
) -> Result<MonotonicityReport> {
    let tolerance = 1e-12;
    let chains = [gamma.chain().clone()];
    let cells: Vec<(usize, usize)> = (0..betas.len()).flat_map(|i| (0..kappas.len()).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .iter()
        .map(|&(i, j)| real_expectations(geom, &p.with_couplings(betas[i], kappas[j]), &chains).map(|v| v[0]))
        .collect::<Result<_>>()?;
    let at = |i: usize, j: usize| values[i * kappas.len() + j];
    let mut comparisons = 0;
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut record = |lo: f64, hi: f64| {
        comparisons += 1;
        let v = lo - hi;
        max_violation = max_violation.max(v);
        if v > tolerance {
            violations += 1;
        }
    };
    for i in 0..betas.len() {
        for j in 0..kappas.len() {
            if i + 1 < betas.len() {
                record(at(i, j), at(i + 1, j));
            }
            if j + 1 < kappas.len() {
                record(at(i, j), at(i, j + 1));
            }
        }
    }
    Ok(MonotonicityReport { points: values.len(), comparisons, violations, max_violation, tolerance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriffithsReport {
    /// `E[W_{γ+γ'}]`
    pub joint: f64,
    /// `E[W_γ] · E[W_{γ'}]`
    pub product: f64,
    pub violation: f64,
    pub holds: bool,
}

/// Checks `E[W_{γ+γ'}] ≥ E[W_γ] E[W_{γ'}] − 1e-12`. The sum is taken as a 1-chain, so
/// repeated edges are allowed.
pub fn check_griffiths(geom: &BoxGeometry, p: &ModelParams, gamma: &Chain, other: &Chain) -> Result<GriffithsReport> {
    let joint_chain = gamma.add(other)?;
    let e = real_expectations(geom, p, &[gamma.clone(), other.clone(), joint_chain])?;
    let product = e[0] * e[1];
    let violation = (product - e[2]).max(0.0);
    Ok(GriffithsReport { joint: e[2], product, violation, holds: violation <= 1e-12 })
}

/// One row of oracle output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub beta: f64,
    pub kappa: f64,
    pub gamma_len: usize,
    pub expectation_re: f64,
    pub expectation_im: f64,
    pub method: String,
    #[serde(rename = "N")]
    pub side: usize,
    pub margin: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square_loop_by_hand(beta: f64, kappa: f64) -> f64 {
        // 16 configurations of the unit square in unitary gauge, spins s_i = ±1
        let mut num = 0.0;
        let mut den = 0.0;
        for mask in 0..16u32 {
            let s: Vec<f64> = (0..4).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let prod = s[0] * s[1] * s[2] * s[3];
            let w = (2.0 * beta * prod + 2.0 * kappa * s.iter().sum::<f64>()).exp();
            num += w * prod;
            den += w;
        }
        num / den
    }

    #[test]
    fn unit_square_loop_matches_hand_enumeration() {
        let p = ModelParams::z2(2, 1, 0.3, 0.2);
        let g = p.geometry().unwrap();
        let gamma = Path::plaquette_loop(&g, 0).unwrap();
        let hand = unit_square_loop_by_hand(0.3, 0.2);
        // frozen from the 16-term sum above
        assert_relative_eq!(hand, 0.551_714_824_997_477, epsilon = 1e-14);
        let coupled = exact_coupled_expectation(&g, &gamma, &p).unwrap();
        assert_relative_eq!(coupled.re, hand, epsilon = 1e-13);
        assert!(coupled.im.abs() < 1e-14);
    }

    #[test]
    fn single_edge_at_zero_beta() {
        let p = ModelParams::z2(2, 2, 0.0, 0.35);
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 1], 0, 1).unwrap();
        let e = exact_coupled_expectation(&g, &gamma, &p).unwrap();
        assert_relative_eq!(e.re, (0.7f64).tanh(), epsilon = 1e-13);
        let u = exact_unitary_expectation(&g, &gamma, &p).unwrap();
        assert_relative_eq!(u.re, (0.7f64).tanh(), epsilon = 1e-13);
    }

    #[test]
    fn large_kappa_concentrates() {
        let p = ModelParams::z2(2, 1, 0.5, 10.0);
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 0], 0, 1).unwrap();
        assert!((exact_coupled_expectation(&g, &gamma, &p).unwrap().re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_path_and_counts() {
        let p = ModelParams { d: 2, side: 1, m: 3, n: 3, beta: 0.2, kappa: 0.4 };
        let g = p.geometry().unwrap();
        let r = exact_coupled(&g, &p, &[Path::empty(&g).chain().clone()]).unwrap();
        assert_eq!(r.config_count, 3u64.pow(4) * 3u64.pow(4));
        assert_relative_eq!(r.wilson_expectations[0].re, 1.0, epsilon = 1e-14);
        let u = exact_unitary(&g, &p, &[]).unwrap();
        assert_eq!(u.config_count, 81);
    }

    #[test]
    fn unitary_straight_tanh_law() {
        let p = ModelParams::z2(2, 2, 0.0, 0.4);
        let g = p.geometry().unwrap();
        for len in 0..=2 {
            let gamma = Path::straight(&g, &[0, 1], 0, len).unwrap();
            let u = exact_unitary_expectation(&g, &gamma, &p).unwrap();
            assert_relative_eq!(u.re, (0.8f64).tanh().powi(len as i32), epsilon = 1e-13);
        }
    }

    #[test]
    fn unitary_equals_coupled_z3() {
        let p = ModelParams { d: 2, side: 1, m: 3, n: 3, beta: 0.4, kappa: 0.3 };
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 0], 0, 1).unwrap();
        let a = exact_coupled_expectation(&g, &gamma, &p).unwrap();
        let b = exact_unitary_expectation(&g, &gamma, &p).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn budget_refusal() {
        let p = ModelParams::z2(2, 4, 0.1, 0.1);
        let g = p.geometry().unwrap();
        assert!(matches!(exact_coupled(&g, &p, &[]), Err(Error::Budget { .. })));
    }

    #[test]
    fn transfer_agrees_with_enumeration() {
        for (beta, kappa) in [(0.3, 0.2), (0.7, 0.5), (0.0, 0.9), (1.2, 0.05)] {
            let p = ModelParams::z2(2, 2, beta, kappa);
            let g = p.geometry().unwrap();
            for (start, len) in [([0, 1], 1), ([0, 1], 2), ([1, 0], 1), ([0, 2], 2), ([0, 0], 2)] {
                let gamma = Path::straight(&g, &start, 0, len).unwrap();
                let tm = transfer_matrix_expectation(&g, &gamma, &p).unwrap();
                let ex = exact_unitary_expectation(&g, &gamma, &p).unwrap().re;
                assert_relative_eq!(tm, ex, epsilon = 1e-10);
            }
        }
        let p = ModelParams::z2(2, 3, 0.45, 0.3);
        let g = p.geometry().unwrap();
        for len in 1..=3 {
            let gamma = Path::straight(&g, &[0, 1], 0, len).unwrap();
            let tm = transfer_matrix_expectation(&g, &gamma, &p).unwrap();
            let ex = exact_unitary_expectation(&g, &gamma, &p).unwrap().re;
            assert_relative_eq!(tm, ex, epsilon = 1e-10);
        }
    }

    #[test]
    fn transfer_tanh_law_at_zero_beta() {
        for len in 1..=6 {
            let r = transfer_matrix_line(8, 0.0, 0.6, Line::centered(8, len)).unwrap();
            assert_relative_eq!(r.expectation, (1.2f64).tanh().powi(len as i32), epsilon = 1e-13);
            assert_relative_eq!(r.neg_log, -(len as f64) * (1.2f64).tanh().ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn transfer_decreasing_in_length() {
        let mut prev = 1.0;
        for len in 1..=6 {
            let e = transfer_matrix_line(8, 0.4, 0.5, Line { x0: 1, y0: 4, len }).unwrap().expectation;
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn transfer_refuses_unsupported() {
        assert!(transfer_matrix_line(13, 0.1, 0.1, Line::centered(13, 2)).is_err());
        let p = ModelParams::z2(3, 2, 0.1, 0.1);
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 0, 0], 0, 1).unwrap();
        assert!(transfer_matrix_expectation(&g, &gamma, &p).is_err());
    }

    #[test]
    fn monotone_small_grid() {
        let p = ModelParams::z2(2, 2, 0.0, 0.0);
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 1], 0, 2).unwrap();
        let grid: Vec<f64> = (0..=5).map(|i| i as f64 * 0.2).collect();
        let r = check_monotonicity(&g, &p, &gamma, &grid, &grid).unwrap();
        assert!(r.passed(), "{r:?}");
        let single = check_monotonicity(&g, &p, &gamma, &[0.3], &[0.3]).unwrap();
        assert_eq!(single.comparisons, 0);
        assert!(single.passed());
        let column = check_monotonicity(&g, &p, &gamma, &grid, &[0.0]).unwrap();
        assert!(column.passed());
    }

    #[test]
    fn griffiths_examples() {
        let p = ModelParams::z2(2, 2, 0.3, 0.3);
        let g = p.geometry().unwrap();
        let e = Path::straight(&g, &[0, 1], 0, 1).unwrap();
        let r = check_griffiths(&g, &p, e.chain(), e.chain()).unwrap();
        assert!(r.holds);
        let empty = Path::empty(&g);
        let r = check_griffiths(&g, &p, e.chain(), empty.chain()).unwrap();
        assert_relative_eq!(r.joint, r.product, epsilon = 1e-14);
        let zero = ModelParams::z2(2, 2, 0.0, 0.0);
        let r = check_griffiths(&g, &zero, e.chain(), e.chain()).unwrap();
        assert!(r.holds && r.product.abs() < 1e-15);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let p = ModelParams::z2(2, 2, 0.37, 0.21);
        let g = p.geometry().unwrap();
        let gamma = Path::straight(&g, &[0, 1], 0, 2).unwrap();
        let a = exact_coupled(&g, &p, &[gamma.chain().clone()]).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| exact_coupled(&g, &p, &[gamma.chain().clone()]).unwrap());
        assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
        assert_eq!(a.wilson_expectations[0].re.to_bits(), b.wilson_expectations[0].re.to_bits());
    }
}
