//! The lattice Higgs model with gauge group `Z_m` and Higgs group `Z_n`.
//!
//! Sums in the Hamiltonian run over all oriented cells, so a positive cell and its
//! reverse both contribute and every term appears as `2·Re ρ(·)`. Characters are
//! `ρ_q(j) = exp(2πij/q)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dec::{boundary, evaluate, exterior_derivative, BoxGeometry, Chain, Form};
use crate::error::{Error, Result};

/// Model parameters. The side length is read from the key `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    #[serde(rename = "N", alias = "side")]
    pub side: usize,
    pub m: u32,
    pub n: u32,
    pub beta: f64,
    pub kappa: f64,
}

impl ModelParams {
    pub fn z2(d: usize, side: usize, beta: f64, kappa: f64) -> Self {
        ModelParams { d, side, m: 2, n: 2, beta, kappa }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 || self.m > 255 || self.n > 255 {
            return Err(Error::Invalid(format!("group orders must lie in 2..=255, got m={}, n={}", self.m, self.n)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0 && self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Invalid(format!("beta, kappa must be finite and >= 0, got {}, {}", self.beta, self.kappa)));
        }
        if self.d < 2 || self.side < 1 {
            return Err(Error::Geometry(format!("need d >= 2 and N >= 1, got d={}, N={}", self.d, self.side)));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<BoxGeometry> {
        self.validate()?;
        BoxGeometry::new(self.d, self.side)
    }

    #[must_use]
    pub fn with_couplings(&self, beta: f64, kappa: f64) -> Self {
        ModelParams { beta, kappa, ..*self }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: ModelParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

pub fn rho(q: u32, j: u32) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * (j % q) as f64 / q as f64)
}

/// `2·Re ρ_q(j)`: the contribution of a positive cell and its reverse.
pub fn two_re_rho(q: u32, j: u32) -> f64 {
    2.0 * (2.0 * PI * (j % q) as f64 / q as f64).cos()
}

/// A gauge field `σ ∈ Ω¹(B_N, Z_m)` together with a Higgs field `φ ∈ Ω⁰(B_N, Z_n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaugeConfig {
    pub sigma: Form,
    pub phi: Form,
}

impl GaugeConfig {
    pub fn zero(geom: &BoxGeometry, p: &ModelParams) -> Result<Self> {
        Ok(GaugeConfig { sigma: Form::zero(geom, 1, p.m)?, phi: Form::zero(geom, 0, p.n)? })
    }

    pub fn new(sigma: Form, phi: Form) -> Result<Self> {
        if sigma.degree() != 1 {
            return Err(Error::DegreeMismatch { expected: 1, got: sigma.degree() });
        }
        if phi.degree() != 0 {
            return Err(Error::DegreeMismatch { expected: 0, got: phi.degree() });
        }
        Ok(GaugeConfig { sigma, phi })
    }

    fn check(&self, p: &ModelParams) -> Result<()> {
        if self.sigma.modulus() != p.m {
            return Err(Error::ModulusMismatch { expected: p.m, got: self.sigma.modulus() });
        }
        if self.phi.modulus() != p.n {
            return Err(Error::ModulusMismatch { expected: p.n, got: self.phi.modulus() });
        }
        Ok(())
    }
}

/// A path: a 1-chain with coefficients in {−1, 0, 1} whose edges chain head to tail.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    chain: Chain,
}

impl Path {
    pub fn new(geom: &BoxGeometry, chain: Chain) -> Result<Path> {
        if chain.degree() != 1 {
            return Err(Error::NotAPath(format!("degree {} chain", chain.degree())));
        }
        if chain.coeffs().iter().any(|c| c.abs() > 1) {
            return Err(Error::NotAPath("edge coefficients must be ±1".into()));
        }
        let b = boundary(geom, &chain)?;
        let ends = b.support();
        if ends.len() > 2 || ends.iter().any(|&v| b.coeff(v).abs() != 1) {
            return Err(Error::NotAPath("boundary has more than two endpoints".into()));
        }
        // every vertex except the endpoints must have in-degree equal to out-degree (checked by ∂),
        // and the edge set must be connected.
        let edges = chain.support();
        if !edges.is_empty() {
            let mut seen = vec![false; edges.len()];
            let endpoints: Vec<Vec<usize>> = edges
                .iter()
                .map(|&e| geom.faces(1, e).iter().map(|&(v, _)| v as usize).collect())
                .collect();
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..edges.len() {
                    if !seen[j] && endpoints[j].iter().any(|v| endpoints[i].contains(v)) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::NotAPath("edges are not connected".into()));
            }
        }
        Ok(Path { chain })
    }

    pub fn empty(geom: &BoxGeometry) -> Path {
        Path { chain: Chain::zero(geom, 1).expect("degree 1 exists") }
    }

    /// `len` unit steps from `start` in the positive direction of `axis`.
    pub fn straight(geom: &BoxGeometry, start: &[usize], axis: usize, len: usize) -> Result<Path> {
        let mut chain = Chain::zero(geom, 1)?;
        let mut v = start.to_vec();
        for _ in 0..len {
            let e = geom
                .edge(&v, axis)
                .ok_or_else(|| Error::NotAPath(format!("straight path leaves the box at {v:?}")))?;
            chain.add_index(e, 1);
            v[axis] += 1;
        }
        Ok(Path { chain })
    }

    /// Counter-clockwise boundary of a single plaquette.
    pub fn plaquette_loop(geom: &BoxGeometry, plaquette: usize) -> Result<Path> {
        let mut c = Chain::zero(geom, 2)?;
        c.add_index(plaquette, 1);
        Path::new(geom, boundary(geom, &c)?)
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    /// Number of edges `|γ|`.
    pub fn len(&self) -> usize {
        self.chain.mass() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.chain.is_zero()
    }

    pub fn is_closed(&self, geom: &BoxGeometry) -> bool {
        boundary(geom, &self.chain).map(|b| b.is_zero()).unwrap_or(false)
    }

    #[must_use]
    pub fn reversed(&self) -> Path {
        Path { chain: self.chain.neg() }
    }

    /// Signed positive edges of the path.
    pub fn edges(&self) -> Vec<(usize, i64)> {
        self.chain.support().into_iter().map(|e| (e, self.chain.coeff(e))).collect()
    }

    /// Concatenation as chains; the result must again be a path.
    pub fn concat(&self, geom: &BoxGeometry, other: &Path) -> Result<Path> {
        Path::new(geom, self.chain.add(&other.chain)?)
    }
}

/// `β Σ_p ρ(dσ(p)) + κ Σ_e ρ(σ(e)) ρ(dφ(e))^{-1}` over oriented cells; real by pairing.
pub fn hamiltonian(geom: &BoxGeometry, cfg: &GaugeConfig, p: &ModelParams) -> Result<f64> {
    cfg.check(p)?;
    let ds = exterior_derivative(geom, &cfg.sigma)?;
    let dphi = exterior_derivative(geom, &cfg.phi)?;
    let plaq: f64 = ds.values().iter().map(|&v| two_re_rho(p.m, v as u32)).sum();
    let mut edge = 0.0;
    for e in 0..geom.num_cells(1) {
        let s = cfg.sigma.get(e) as f64 / p.m as f64;
        let t = dphi.get(e) as f64 / p.n as f64;
        edge += 2.0 * (2.0 * PI * (s - t)).cos();
    }
    Ok(p.beta * plaq + p.kappa * edge)
}

/// Z_2 activity `e^{−2β|supp dσ| − 2κ|supp σ|}` with supports counted over oriented cells.
pub fn activity(geom: &BoxGeometry, sigma: &Form, beta: f64, kappa: f64) -> Result<f64> {
    if sigma.modulus() != 2 {
        return Err(Error::Unsupported(format!("activity is defined for Z_2 gauge fields, got Z_{}", sigma.modulus())));
    }
    let ds = exterior_derivative(geom, sigma)?;
    let plaq = 2 * ds.support_size();
    let edges = 2 * sigma.support_size();
    Ok((-2.0 * beta * plaq as f64 - 2.0 * kappa * edges as f64).exp())
}

/// Activity for any `Z_m`: `Π_p e^{β(Re ρ(dσ(p)) − 1)} Π_e e^{κ(Re ρ(σ(e)) − 1)}` over oriented cells.
pub fn general_activity(geom: &BoxGeometry, sigma: &Form, beta: f64, kappa: f64) -> Result<f64> {
    let m = sigma.modulus();
    let ds = exterior_derivative(geom, sigma)?;
    let plaq: f64 = ds.values().iter().map(|&v| two_re_rho(m, v as u32) - 2.0).sum();
    let edge: f64 = sigma.values().iter().map(|&v| two_re_rho(m, v as u32) - 2.0).sum();
    Ok((beta * plaq + kappa * edge).exp())
}

/// `ρ_m(σ(γ)) · conj ρ_n(φ(∂γ))`.
pub fn wilson(geom: &BoxGeometry, cfg: &GaugeConfig, gamma: &Path) -> Result<Complex64> {
    let s = evaluate(&cfg.sigma, gamma.chain())?;
    let b = boundary(geom, gamma.chain())?;
    let f = evaluate(&cfg.phi, &b)?;
    Ok(rho(cfg.sigma.modulus(), s) * rho(cfg.phi.modulus(), f).conj())
}

/// Gauge transformation `σ ↦ σ + dη`, `φ ↦ φ + η`; needs `m = n`.
///
/// The sign on `dη` is the one that leaves `σ − dφ`, and hence the Hamiltonian and the
/// insertion `ρ(σ(γ)) ρ(φ(∂γ))^{-1}`, unchanged. With `η = −φ` the Higgs field becomes
/// zero and `σ − dφ` becomes the new gauge field.
pub fn gauge_transform(geom: &BoxGeometry, cfg: &GaugeConfig, eta: &Form) -> Result<GaugeConfig> {
    let m = cfg.sigma.modulus();
    if cfg.phi.modulus() != m {
        return Err(Error::Unsupported(format!("gauge transforms need m = n, got m={m}, n={}", cfg.phi.modulus())));
    }
    if eta.modulus() != m {
        return Err(Error::ModulusMismatch { expected: m, got: eta.modulus() });
    }
    let deta = exterior_derivative(geom, eta)?;
    Ok(GaugeConfig { sigma: cfg.sigma.add(&deta)?, phi: cfg.phi.add(eta)? })
}

/// `log` of the unitary-gauge weight `exp(β Σ_p ρ(dσ(p)) + κ Σ_e ρ(σ(e)))`.
pub fn log_unitary_weight(geom: &BoxGeometry, sigma: &Form, p: &ModelParams) -> Result<f64> {
    if p.m != p.n {
        return Err(Error::Unsupported(format!("unitary gauge needs m = n, got m={}, n={}", p.m, p.n)));
    }
    if sigma.modulus() != p.m {
        return Err(Error::ModulusMismatch { expected: p.m, got: sigma.modulus() });
    }
    let ds = exterior_derivative(geom, sigma)?;
    let plaq: f64 = ds.values().iter().map(|&v| two_re_rho(p.m, v as u32)).sum();
    let edge: f64 = sigma.values().iter().map(|&v| two_re_rho(p.m, v as u32)).sum();
    Ok(p.beta * plaq + p.kappa * edge)
}

pub fn unitary_weight(geom: &BoxGeometry, sigma: &Form, p: &ModelParams) -> Result<f64> {
    log_unitary_weight(geom, sigma, p).map(f64::exp)
}
