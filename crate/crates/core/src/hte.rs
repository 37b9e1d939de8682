//! High-temperature expansion.
//!
//! Each Boltzmann factor `e^{aρ(·)}` is expanded as a character sum with coefficients
//! `φ_{a,q}(i) = Σ_j a^{qj+i}/(qj+i)!`. Pairing a cell with its reverse produces the
//! convolution `barφ_{a,q}`, and summing out the spins leaves a constrained sum over
//! 2-forms `ω ∈ Ω²(Z_m)` and `ω′ ∈ Ω²(Z_{m∨n})`, where `m∨n = lcm(m, n)`.
//!
//! The mixed constraint `δ(ω′ + ω) = 0 (mod m)` is evaluated after reducing `ω′`
//! through the ring map `Z_{m∨n} → Z_m`.

use crate::dec::{coderivative, BoxGeometry, Chain, Form};
use crate::error::{Error, Result};
use crate::gaugemodel::{ModelParams, Path};
use crate::oracle::{block_reduce, check_budget, decode, enumeration_budget, increment};

/// `φ_{a,q}` and `barφ_{a,q}` tabulated on `Z_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiCoefficients {
    pub q: u32,
    pub a: f64,
    pub phi: Vec<f64>,
    pub bar: Vec<f64>,
}

impl PhiCoefficients {
    pub fn new(q: u32, a: f64) -> Result<Self> {
        if q < 2 {
            return Err(Error::Invalid(format!("modulus must be >= 2, got {q}")));
        }
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::Invalid(format!("coupling must be finite and >= 0, got {a}")));
        }
        let phi = phi_series(q, a);
        let qs = q as usize;
        let bar = (0..qs).map(|j| (0..qs).map(|i| phi[i] * phi[(i + qs - j) % qs]).sum()).collect();
        Ok(PhiCoefficients { q, a, phi, bar })
    }

    pub fn phi(&self, i: i64) -> f64 {
        self.phi[i.rem_euclid(self.q as i64) as usize]
    }

    pub fn barphi(&self, j: i64) -> f64 {
        self.bar[j.rem_euclid(self.q as i64) as usize]
    }

    /// `barφ(j)/barφ(0)`.
    pub fn hatphi(&self, j: i64) -> f64 {
        self.barphi(j) / self.bar[0]
    }

    /// `min_j barφ(j) / max_j barφ(j)`.
    pub fn min_max_ratio(&self) -> f64 {
        let min = self.bar.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.bar.iter().cloned().fold(0.0, f64::max);
        min / max
    }
}

fn phi_series(q: u32, a: f64) -> Vec<f64> {
    let qs = q as usize;
    let mut out = vec![0.0; qs];
    out[0] = 1.0;
    if a == 0.0 {
        return out;
    }
    let mut term = 1.0;
    let mut k = 0usize;
    loop {
        k += 1;
        term *= a / k as f64;
        out[k % qs] += term;
        // after the peak at k ≈ a the terms decay factorially, and every bucket is nonzero
        if k as f64 > a && k >= qs && out.iter().all(|&v| term < 1e-18 * v) {
            break;
        }
        if k > 100_000 || term == 0.0 {
            break;
        }
    }
    out
}

pub fn phi(q: u32, a: f64, i: u32) -> Result<f64> {
    Ok(PhiCoefficients::new(q, a)?.phi(i as i64))
}

pub fn barphi(q: u32, a: f64, j: u32) -> Result<f64> {
    Ok(PhiCoefficients::new(q, a)?.barphi(j as i64))
}

/// `hatφ_a(j)` for `Z_2`: 1 at `j = 0` and `tanh 2a` at `j = 1`.
pub fn hatphi(a: f64, j: u32) -> Result<f64> {
    Ok(PhiCoefficients::new(2, a)?.hatphi(j as i64))
}

pub fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `m∨n`, the least common multiple.
pub fn lcm(m: u32, n: u32) -> u32 {
    m / gcd(m, n) * n
}

/// Rate `b` in the lower bound `E[W_γ] ≥ e^{−b|γ|}`: `−log(min barφ_{κ,m∨n} / max barφ_{κ,m∨n})`.
pub fn perimeter_lower_rate(m: u32, n: u32, kappa: f64) -> Result<f64> {
    Ok(-PhiCoefficients::new(lcm(m, n), kappa)?.min_max_ratio().ln())
}

struct Coboundary {
    /// Signed plaquettes around each positive edge.
    around: Vec<Vec<(usize, i64)>>,
}

impl Coboundary {
    fn new(geom: &BoxGeometry) -> Self {
        let around = (0..geom.num_cells(1))
            .map(|e| geom.cofaces(1, e).iter().map(|&(p, s)| (p as usize, s as i64)).collect())
            .collect();
        Coboundary { around }
    }
}

fn gamma_coeffs(geom: &BoxGeometry, gamma: &Chain) -> Result<Vec<i64>> {
    if gamma.degree() != 1 {
        return Err(Error::DegreeMismatch { expected: 1, got: gamma.degree() });
    }
    if gamma.coeffs().len() != geom.num_cells(1) {
        return Err(Error::Geometry("chain does not belong to this box".into()));
    }
    Ok(gamma.coeffs().to_vec())
}

/// The double sum over `(ω′, ω)` for each chain, in one pass. Values are proportional
/// to `Z[γ]` with a γ-independent constant.
pub fn z_gamma_hte_many(geom: &BoxGeometry, p: &ModelParams, gammas: &[Chain]) -> Result<Vec<f64>> {
    p.validate()?;
    if geom.dim() < 2 {
        return Err(Error::Geometry("need at least one plaquette direction".into()));
    }
    let gs: Vec<Vec<i64>> = gammas.iter().map(|g| gamma_coeffs(geom, g)).collect::<Result<_>>()?;
    let np = geom.num_cells(2);
    let l = lcm(p.m, p.n);
    let count = (l as f64).powi(np as i32) * (p.m as f64).powi(np as i32);
    check_budget(count, enumeration_budget())?;
    let total = count as u64;
    let plaq = PhiCoefficients::new(p.m, p.beta)?;
    let link = PhiCoefficients::new(l, p.kappa)?;
    let cob = Coboundary::new(geom);
    let (m, li) = (p.m as i64, l as i64);
    let mut radices = vec![l; np];
    radices.extend(std::iter::repeat_n(p.m, np));

    let (_, sums) = block_reduce(total, gs.len(), |start, end, _z, w| {
        let mut digits = vec![0u32; 2 * np];
        decode(start, &radices, &mut digits);
        let mut dprime = vec![0i64; cob.around.len()];
        for _ in start..end {
            let (wp, wm) = digits.split_at(np);
            let mut ok = true;
            for (e, around) in cob.around.iter().enumerate() {
                let mut full = 0i64;
                let mut reduced = 0i64;
                for &(pl, s) in around {
                    let v = wp[pl] as i64;
                    full += s * v;
                    reduced += s * (v % m + wm[pl] as i64);
                }
                if reduced.rem_euclid(m) != 0 {
                    ok = false;
                    break;
                }
                dprime[e] = full.rem_euclid(li);
            }
            if ok {
                let base: f64 = wm.iter().map(|&v| plaq.barphi(v as i64)).product();
                for (g, acc) in gs.iter().zip(w.iter_mut()) {
                    let mut val = base;
                    for (e, &de) in dprime.iter().enumerate() {
                        val *= link.barphi(de - g[e]);
                    }
                    acc.0.add(val);
                }
            }
            increment(&radices, &mut digits);
        }
    });
    Ok(sums.iter().map(|s| s.0.value()).collect())
}

pub fn z_gamma_hte(geom: &BoxGeometry, gamma: &Chain, p: &ModelParams) -> Result<f64> {
    Ok(z_gamma_hte_many(geom, p, std::slice::from_ref(gamma))?[0])
}

/// `Z[γ]/Z[0]` from the expansion; equals `E[W_γ]`.
pub fn hte_expectation(geom: &BoxGeometry, gamma: &Path, p: &ModelParams) -> Result<f64> {
    let zero = Chain::zero(geom, 1)?;
    let z = z_gamma_hte_many(geom, p, &[zero, gamma.chain().clone()])?;
    Ok(z[1] / z[0])
}

/// Exponents `(|supp δω ∖ γ|, |supp δω ∩ γ|)` over positive edges, with γ read mod 2.
pub fn z2_boundary_split(geom: &BoxGeometry, omega: &Form, gamma: &Chain) -> Result<(usize, usize)> {
    if omega.degree() != 2 {
        return Err(Error::DegreeMismatch { expected: 2, got: omega.degree() });
    }
    if omega.modulus() != 2 {
        return Err(Error::ModulusMismatch { expected: 2, got: omega.modulus() });
    }
    let g = gamma_coeffs(geom, gamma)?;
    let dw = coderivative(geom, omega)?;
    let (mut off, mut on) = (0, 0);
    for e in dw.support() {
        if g[e].rem_euclid(2) == 1 {
            on += 1;
        } else {
            off += 1;
        }
    }
    Ok((off, on))
}

/// `φ^γ_{β,κ}(ω) = Π_p hatφ_β(ω(p)) Π_e hatφ_κ(δω(e) + γ[e]) / hatφ_κ(γ[e])`.
///
/// Every edge of `supp δω` off γ contributes `tanh 2κ`, every edge on γ contributes its
/// inverse, so the value is `tanh(2β)^{|ω|} tanh(2κ)^{off − on}`. At `κ = 0` with
/// `on > off` this is `+∞`.
pub fn z2_hte_weight(geom: &BoxGeometry, omega: &Form, gamma: &Chain, beta: f64, kappa: f64) -> Result<f64> {
    let (off, on) = z2_boundary_split(geom, omega, gamma)?;
    let tb = (2.0 * beta).tanh();
    let tk = (2.0 * kappa).tanh();
    Ok(tb.powi(omega.support_size() as i32) * tk.powi(off as i32 - on as i32))
}

/// `hatZ[γ] = tanh(2κ)^{|γ|} Σ_ω φ^γ(ω)` over all `ω ∈ Ω²(Z_2)`.
pub fn hat_z(geom: &BoxGeometry, gamma: &Path, beta: f64, kappa: f64) -> Result<f64> {
    let np = geom.num_cells(2);
    let count = 2f64.powi(np as i32);
    check_budget(count, enumeration_budget())?;
    let g = gamma_coeffs(geom, gamma.chain())?;
    let on_gamma: Vec<bool> = g.iter().map(|c| c.rem_euclid(2) == 1).collect();
    let cob = Coboundary::new(geom);
    let tb = (2.0 * beta).tanh();
    let tk = (2.0 * kappa).tanh();
    let (_, sums) = block_reduce(count as u64, 1, |start, end, _z, w| {
        for idx in start..end {
            let bit = |pl: usize| (idx >> pl) & 1;
            let size = idx.count_ones() as i32;
            let mut exp = 0i32;
            for (e, around) in cob.around.iter().enumerate() {
                let parity = around.iter().map(|&(pl, _)| bit(pl)).sum::<u64>() & 1;
                if parity == 1 {
                    exp += if on_gamma[e] { -1 } else { 1 };
                }
            }
            w[0].0.add(tb.powi(size) * tk.powi(exp));
        }
    });
    Ok(tk.powi(gamma.len() as i32) * sums[0].0.value())
}
