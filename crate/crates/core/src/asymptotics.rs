//! Decay constants `a`, `C` of the pure perimeter law in both phases, their truncation
//! bounds and exponential error envelopes, and perimeter-law fits of oracle data.
//!
//! Straight lines run along axis 0 through the center of a box large enough that no
//! cluster within the size cutoff reaches the boundary. Infinite lines are therefore never
//! materialized: the bi-infinite line is the full axis-0 row of the box, and the half line
//! starting `j` edges before the anchor edge `e_0` is that row cut at `x = c − j`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::clusters::{
    build_graph, conf_tail, enumerate_clusters, higgs_norm2, higgs_tail, polymer_boundary, reduce_clusters, Cluster,
    ClusterQuery, ClusterRecord, Phase,
};
use crate::dec::BoxGeometry;
use crate::error::{Error, Result};
use crate::hte::perimeter_lower_rate;

/// Truncation of a cluster series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    /// `J`: largest cluster size `Σ n_S(η)|supp η|` kept.
    pub max_size: usize,
    pub kmax: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs { max_size: 6, kmax: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub max_size: usize,
    pub kmax: usize,
    pub eps: f64,
    pub d: usize,
    pub side: usize,
    pub clusters: u64,
}

/// Constants of the bound `|−log E[W_{γ_n}] − a n − C| ≤ envelope(n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub phase: Phase,
    pub d: usize,
    /// `C_ε` (Higgs) or `C^{(2)}` (confinement).
    pub scale: f64,
    /// `q = e^{−4(κ−κ_0−ε)}` (Higgs) or `R = tanh 2β / tanh 2(β+ε)` (confinement).
    pub ratio: f64,
    /// `D` with `envelope(n) ≤ D e^{−D′n}`.
    pub big_d: f64,
    /// `D′`; `None` when the envelope vanishes identically.
    pub rate: Option<f64>,
}

impl Envelope {
    fn higgs(d: usize, c_eps: f64, q: f64, r: f64) -> Self {
        // n q^n = n e^{−4rn} ≤ e^{−2rn}/(2re)
        let big_d = 3.0 * c_eps / (8.0 * r * std::f64::consts::E) + c_eps / (2.0 * (1.0 - q));
        Envelope { phase: Phase::Higgs, d, scale: c_eps, ratio: q, big_d, rate: Some(2.0 * r) }
    }

    fn conf(d: usize, c2: f64, ratio: f64) -> Self {
        let k = (d - 1) as f64;
        if ratio == 0.0 {
            return Envelope { phase: Phase::Confinement, d, scale: c2, ratio, big_d: 0.0, rate: None };
        }
        let rho = -ratio.ln();
        // n R^n ≤ 2 e^{−ρn/2}/(ρe)
        let big_d = 20.0 * k * c2 * 2.0 / (rho * std::f64::consts::E) + 16.0 * k * c2 / (1.0 - ratio);
        Envelope { phase: Phase::Confinement, d, scale: c2, ratio, big_d, rate: Some(rho / 2.0) }
    }

    /// The explicit bound at length `n`, before the `D e^{−D′n}` simplification.
    ///
    /// Higgs: `C_ε n q^n/4 + C_ε n q^n/2 + C_ε q^n/(2(1−q))`. Confinement:
    /// `4(d−1)C^{(2)} n R^n + 16(d−1)C^{(2)}(n R^n + R^n/(1−R))`.
    pub fn at(&self, n: usize) -> f64 {
        let nf = n as f64;
        let p = self.ratio.powi(n as i32);
        match self.phase {
            Phase::Higgs => self.scale * (0.75 * nf * p + p / (2.0 * (1.0 - self.ratio))),
            Phase::Confinement => {
                let k = (self.d - 1) as f64;
                4.0 * k * self.scale * nf * p + 16.0 * k * self.scale * (nf * p + p / (1.0 - self.ratio))
            }
        }
    }

    /// `D e^{−D′n}`.
    pub fn exponential(&self, n: usize) -> f64 {
        match self.rate {
            Some(r) => self.big_d * (-r * n as f64).exp(),
            None => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub phase: Phase,
    pub beta: f64,
    pub kappa: f64,
    pub a: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub a_tail: f64,
    #[serde(rename = "C_tail")]
    pub c_tail: f64,
    pub envelope: Envelope,
    pub provenance: Provenance,
}

impl DecaySummary {
    /// `n · a_tail + C_tail + envelope(n)`: what the residual against exact data may not exceed.
    pub fn residual_bound(&self, n: usize) -> f64 {
        n as f64 * self.a_tail + self.c_tail + self.envelope.at(n)
    }

    /// `a n + C`.
    pub fn predict(&self, n: usize) -> f64 {
        self.a * n as f64 + self.c
    }
}

/// Box, anchor edge and the axis-0 row through it.
struct LineSetup {
    geom: BoxGeometry,
    e0: u32,
    center: usize,
    /// Position along the row for edges on it, `None` otherwise.
    position: Vec<Option<usize>>,
}

impl LineSetup {
    fn new(d: usize, max_size: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Geometry(format!("need d >= 2, got {d}")));
        }
        let margin = max_size + 2;
        let side = 2 * margin + 2;
        let geom = BoxGeometry::new(d, side)?;
        let center = side / 2;
        let mut anchor = vec![center; d];
        let e0 = geom.edge(&anchor, 0).expect("center edge exists") as u32;
        let mut position = vec![None; geom.num_cells(1)];
        for x in 0..side {
            anchor[0] = x;
            position[geom.edge(&anchor, 0).expect("row edge exists")] = Some(x);
        }
        Ok(LineSetup { geom, e0, center, position })
    }

    /// Edge on the half line starting `j` edges before `e_0`.
    fn on_half(&self, e: u32, j: usize) -> bool {
        matches!(self.position[e as usize], Some(x) if x + j >= self.center)
    }

    fn on_full(&self, e: u32) -> bool {
        self.position[e as usize].is_some()
    }
}

/// `F(S, γ) = Ψ(S)(1 − (−1)^{S(γ)}) / |supp S ∩ supp γ|` for a Z_2 cluster with Higgs
/// activity `Ψ`. `on_gamma` selects the edges of γ.
pub fn f_weight(geom: &BoxGeometry, s: &Cluster, on_gamma: &dyn Fn(u32) -> bool, beta: f64, kappa: f64) -> Result<f64> {
    let shared = s.support.iter().filter(|&&e| on_gamma(e)).count();
    if shared == 0 {
        return Err(Error::Invalid("cluster support does not meet the path".into()));
    }
    let parity: u32 = s
        .iter()
        .map(|(p, n)| n * p.cells.iter().filter(|&&e| on_gamma(e)).count() as u32)
        .sum::<u32>()
        % 2;
    if parity == 0 {
        return Ok(0.0);
    }
    let psi = s.ursell * (-4.0 * beta * higgs_norm2(geom, s) as f64 - 4.0 * kappa * s.size() as f64).exp();
    Ok(2.0 * psi / shared as f64)
}

/// Per-cluster data needed to evaluate `G` against several paths.
struct ConfCluster {
    /// `Ψ^0(S)`.
    psi0: f64,
    /// `(supp δη, n_S(η))` for each distinct polymer.
    boundaries: Vec<(Vec<u32>, u32)>,
    /// `∪ supp δη`.
    union: Vec<u32>,
}

fn conf_cluster(geom: &BoxGeometry, s: &Cluster, beta: f64, kappa: f64) -> ConfCluster {
    let tb = (2.0 * beta).tanh();
    let tk = (2.0 * kappa).tanh();
    let mut psi0 = s.ursell;
    let mut boundaries = Vec::with_capacity(s.polymers.len());
    let mut union = HashSet::new();
    for (p, n) in s.iter() {
        let bd = polymer_boundary(geom, Phase::Confinement, p);
        psi0 *= (tb.powi(p.len() as i32) * tk.powi(bd.len() as i32)).powi(n as i32);
        union.extend(bd.iter().copied());
        boundaries.push((bd, n));
    }
    let mut union: Vec<u32> = union.into_iter().collect();
    union.sort_unstable();
    ConfCluster { psi0, boundaries, union }
}

fn g_from_parts(c: &ConfCluster, on_gamma: &dyn Fn(u32) -> bool, kappa: f64) -> Option<f64> {
    let shared = c.union.iter().filter(|&&e| on_gamma(e)).count();
    if shared == 0 {
        return None;
    }
    let k: u32 = c.boundaries.iter().map(|(bd, n)| n * bd.iter().filter(|&&e| on_gamma(e)).count() as u32).sum();
    let tk = (2.0 * kappa).tanh();
    Some(c.psi0 * (tk.powi(-2 * k as i32) - 1.0) / shared as f64)
}

/// `G(S, γ) = (Ψ^γ(S) − Ψ^0(S)) / |(∪ supp δη)^+ ∩ supp γ|`, using
/// `Ψ^γ(S) = tanh(2κ)^{−2 Σ n_S(η)|supp δη ∩ supp γ|} Ψ^0(S)`.
pub fn g_weight(geom: &BoxGeometry, s: &Cluster, on_gamma: &dyn Fn(u32) -> bool, beta: f64, kappa: f64) -> Result<f64> {
    g_from_parts(&conf_cluster(geom, s, beta, kappa), on_gamma, kappa)
        .ok_or_else(|| Error::Invalid("coboundary of the cluster does not meet the path".into()))
}

/// `a = Σ_{S ∋ e_0} F(S, γ_∞)` and `C = 2 Σ_{j ≥ 0} Σ_{S ∋ e_0} (F(S, γ_j^+) − F(S, γ_∞))`,
/// where `γ_j^+` is the half line whose first edge lies `j` steps before `e_0`. Clusters of
/// size at most `J` cannot reach further than `J` edges, so `j ≤ J`.
pub fn decay_constants_higgs(d: usize, beta: f64, kappa: f64, cut: Cutoffs, eps: Option<f64>) -> Result<DecaySummary> {
    let tail = higgs_tail(d, kappa, eps)?;
    let setup = LineSetup::new(d, cut.max_size)?;
    let graph = build_graph(Phase::Higgs, &setup.geom);
    let q = ClusterQuery { graph: &graph, anchors: vec![setup.e0], max_size: cut.max_size, kmax: cut.kmax };
    let jn = cut.max_size;
    let geom = &setup.geom;
    let (sums, clusters) = reduce_clusters(&q, jn + 2, |s, out| {
        let full = f_weight(geom, s, &|e| setup.on_full(e), beta, kappa).expect("anchor lies on the line");
        out[0] = full;
        for j in 0..=jn {
            let half = f_weight(geom, s, &|e| setup.on_half(e, j), beta, kappa).expect("anchor lies on the half line");
            out[1 + j] = half - full;
        }
    })?;
    let c = 2.0 * sums[1..].iter().sum::<f64>();
    let k = q.first_omitted_size() as i32;
    let qk = tail.q.powi(k);
    Ok(DecaySummary {
        phase: Phase::Higgs,
        beta,
        kappa,
        a: sums[0],
        c,
        a_tail: tail.c_eps / 2.0 * qk,
        c_tail: 2.0 * tail.c_eps * (k as f64 * qk + qk / (1.0 - tail.q)),
        envelope: Envelope::higgs(d, tail.c_eps, tail.q, tail.rate),
        provenance: Provenance {
            max_size: cut.max_size,
            kmax: cut.kmax,
            eps: tail.eps,
            d,
            side: geom.side(),
            clusters,
        },
    })
}

/// `a = −log tanh(2κ) − Σ_{S: e_0 ∈ ∪ supp δη} G(S, γ_∞)` and
/// `C = −2 Σ_{j ≥ 0} Σ_{S: e_0 ∈ ∪ supp δη} (G(S, γ_j^+) − G(S, γ_∞))`.
pub fn decay_constants_conf(d: usize, beta: f64, kappa: f64, cut: Cutoffs, eps: Option<f64>) -> Result<DecaySummary> {
    if !(kappa > 0.0) {
        return Err(Error::Invalid(format!("kappa must be positive, got {kappa}")));
    }
    let tail = conf_tail(d, beta, eps)?;
    let setup = LineSetup::new(d, cut.max_size)?;
    let geom = &setup.geom;
    let graph = build_graph(Phase::Confinement, geom);
    let anchors: Vec<u32> = geom.cofaces(1, setup.e0 as usize).iter().map(|&(p, _)| p).collect();
    let q = ClusterQuery { graph: &graph, anchors, max_size: cut.max_size, kmax: cut.kmax };
    let jn = cut.max_size;
    let (sums, clusters) = reduce_clusters(&q, jn + 2, |s, out| {
        let c = conf_cluster(geom, s, beta, kappa);
        if c.union.binary_search(&setup.e0).is_err() {
            return;
        }
        let full = g_from_parts(&c, &|e| setup.on_full(e), kappa).expect("e_0 lies on the line");
        out[0] = full;
        for j in 0..=jn {
            let half = g_from_parts(&c, &|e| setup.on_half(e, j), kappa).expect("e_0 lies on the half line");
            out[1 + j] = half - full;
        }
    })?;
    let k = q.first_omitted_size() as i32;
    let rk = tail.ratio.powi(k);
    let dm = (d - 1) as f64;
    Ok(DecaySummary {
        phase: Phase::Confinement,
        beta,
        kappa,
        a: -(2.0 * kappa).tanh().ln() - sums[0],
        c: -2.0 * sums[1..].iter().sum::<f64>(),
        a_tail: 4.0 * dm * tail.c2 * rk,
        c_tail: if rk == 0.0 { 0.0 } else { 16.0 * dm * tail.c2 * (k as f64 * rk + rk / (1.0 - tail.ratio)) },
        envelope: Envelope::conf(d, tail.c2, tail.ratio),
        provenance: Provenance {
            max_size: cut.max_size,
            kmax: cut.kmax,
            eps: tail.eps,
            d,
            side: geom.side(),
            clusters,
        },
    })
}

pub fn decay_constants(phase: Phase, d: usize, beta: f64, kappa: f64, cut: Cutoffs, eps: Option<f64>) -> Result<DecaySummary> {
    match phase {
        Phase::Higgs => decay_constants_higgs(d, beta, kappa, cut, eps),
        Phase::Confinement => decay_constants_conf(d, beta, kappa, cut, eps),
    }
}

/// Dump records for every cluster entering the series for `a`, with γ = γ_∞.
pub fn cluster_records(phase: Phase, d: usize, beta: f64, kappa: f64, cut: Cutoffs) -> Result<Vec<ClusterRecord>> {
    let setup = LineSetup::new(d, cut.max_size)?;
    let geom = &setup.geom;
    let graph = build_graph(phase, geom);
    let anchors = match phase {
        Phase::Higgs => vec![setup.e0],
        Phase::Confinement => geom.cofaces(1, setup.e0 as usize).iter().map(|&(p, _)| p).collect(),
    };
    let q = ClusterQuery { graph: &graph, anchors, max_size: cut.max_size, kmax: cut.kmax };
    let on = |e: u32| setup.on_full(e);
    Ok(enumerate_clusters(&q)?
        .iter()
        .filter_map(|s| match phase {
            Phase::Higgs => Some(ClusterRecord::higgs(geom, s, beta, kappa)),
            Phase::Confinement => {
                let c = conf_cluster(geom, s, beta, kappa);
                c.union.binary_search(&setup.e0).is_ok().then(|| ClusterRecord::conf(geom, s, &on, beta, kappa))
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------------------
// Perimeter-law fits

/// `−log E[W_{γ_n}]` for a straight line of length `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerimeterPoint {
    pub n: usize,
    pub neg_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperadditivityReport {
    pub comparisons: usize,
    pub violations: usize,
    /// Largest `−log E_{n+m} − (−log E_n − log E_m)`; nonpositive when the law holds.
    pub max_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// Lower-bound rate: `E ≥ e^{−b n}`.
    pub b: f64,
    /// Upper-bound rate `−log E[W_{γ_1}]`: `E ≤ e^{−b′ n}` is asked for.
    pub b_prime: f64,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Largest `b′n − (−log E_n)`; positive values break the upper half.
    pub max_upper_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerimeterFit {
    /// `inf_n −log E_n / n`, the Fekete limit for a subadditive sequence.
    pub a_hat: f64,
    pub per_length: Vec<(usize, f64)>,
    pub superadditivity: SuperadditivityReport,
    pub sandwich: SandwichReport,
    pub tolerance: f64,
}

/// Fits straight-line data from a `Z_m × Z_n` model at coupling κ. Comparisons use
/// `tolerance · max(1, |−log E|)`. Superadditivity here is by length, which presumes
/// translation-invariant data.
pub fn perimeter_fit(points: &[PerimeterPoint], m: u32, n: u32, kappa: f64, tolerance: f64) -> Result<PerimeterFit> {
    let data: BTreeMap<usize, f64> = points.iter().map(|p| (p.n, p.neg_log)).collect();
    if data.len() < 3 {
        return Err(Error::Invalid(format!("perimeter fit needs at least 3 lengths, got {}", data.len())));
    }
    if data.keys().any(|&k| k == 0) {
        return Err(Error::Invalid("lengths must be positive".into()));
    }
    let per_length: Vec<(usize, f64)> = data.iter().map(|(&k, &v)| (k, v / k as f64)).collect();
    let a_hat = per_length.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);

    let mut sup = SuperadditivityReport { comparisons: 0, violations: 0, max_excess: f64::NEG_INFINITY };
    for (&i, &vi) in &data {
        for (&j, &vj) in data.range(i..) {
            if let Some(&vij) = data.get(&(i + j)) {
                let excess = vij - (vi + vj);
                sup.comparisons += 1;
                sup.max_excess = sup.max_excess.max(excess);
                if excess > tolerance * vij.abs().max(1.0) {
                    sup.violations += 1;
                }
            }
        }
    }

    let b = perimeter_lower_rate(m, n, kappa)?;
    let b_prime = *data.get(&1).ok_or_else(|| Error::Invalid("the sandwich needs the length-1 value".into()))?;
    let mut sw = SandwichReport { b, b_prime, lower_violations: 0, upper_violations: 0, max_upper_excess: f64::NEG_INFINITY };
    for (&k, &v) in &data {
        let kf = k as f64;
        let tol = tolerance * v.abs().max(1.0);
        if v > b * kf + tol {
            sw.lower_violations += 1;
        }
        let excess = b_prime * kf - v;
        sw.max_upper_excess = sw.max_upper_excess.max(excess);
        if excess > tol {
            sw.upper_violations += 1;
        }
    }
    Ok(PerimeterFit { a_hat, per_length, superadditivity: sup, sandwich: sw, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::{cluster_on_chain, psi_higgs, Polymer};
    use crate::oracle::{transfer_matrix_line, Line};
    use approx::assert_relative_eq;

    fn higgs_cut(j: usize) -> Cutoffs {
        Cutoffs { max_size: j, kmax: 6 }
    }

    #[test]
    fn f_weight_parity_and_singleton() {
        let setup = LineSetup::new(2, 1).unwrap();
        let g = build_graph(Phase::Higgs, &setup.geom);
        let q = ClusterQuery { graph: &g, anchors: vec![setup.e0], max_size: 2, kmax: 2 };
        let (beta, kappa) = (0.5, 2.0);
        for s in enumerate_clusters(&q).unwrap() {
            let f = f_weight(&setup.geom, &s, &|e| setup.on_full(e), beta, kappa).unwrap();
            let odd = cluster_on_chain(&s, &setup.position.iter().map(|p| i64::from(p.is_some())).collect::<Vec<_>>()) % 2 == 1;
            if !odd {
                assert_eq!(f, 0.0);
            } else {
                let shared = s.support.iter().filter(|&&e| setup.on_full(e)).count() as f64;
                assert_relative_eq!(f, 2.0 * psi_higgs(&setup.geom, &s, beta, kappa) / shared, max_relative = 1e-14);
            }
            if s.polymers == vec![Polymer::new(vec![setup.e0])] && s.multiplicity == vec![1] {
                // a bulk edge in d = 2 borders two plaquettes
                assert_relative_eq!(f, 2.0 * (-4.0 * kappa - 8.0 * beta).exp(), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn f_weight_needs_intersection() {
        let setup = LineSetup::new(2, 1).unwrap();
        let g = build_graph(Phase::Higgs, &setup.geom);
        let q = ClusterQuery { graph: &g, anchors: vec![setup.e0], max_size: 1, kmax: 1 };
        let s = &enumerate_clusters(&q).unwrap()[0];
        assert!(f_weight(&setup.geom, s, &|_| false, 0.1, 2.0).is_err());
    }

    #[test]
    fn g_weight_single_plaquette_by_hand() {
        // a plaquette above e_0 meets the line in exactly one edge; Ψ^0 = t_β t_κ^4
        let setup = LineSetup::new(2, 1).unwrap();
        let geom = &setup.geom;
        let c = setup.center;
        let p = geom.index(&[c, c], &[0, 1]).unwrap() as u32;
        let s = Cluster { polymers: vec![Polymer::new(vec![p])], multiplicity: vec![1], support: vec![p], ursell: 1.0 };
        let (beta, kappa) = (3e-4, 0.5);
        let tb = (2.0f64 * beta).tanh();
        let tk = (2.0f64 * kappa).tanh();
        let g = g_weight(geom, &s, &|e| setup.on_full(e), beta, kappa).unwrap();
        // frozen: (tanh(1)^{-2} − 1)·tanh(6e-4)·tanh(1)^4
        assert_relative_eq!(g, (tk.powi(-2) - 1.0) * tb * tk.powi(4), max_relative = 1e-14);
        assert_relative_eq!(g, 1.461_575_188_610_33e-4, max_relative = 1e-12);
    }

    #[test]
    fn beta_zero_higgs_reproduces_tanh_law() {
        let kappa = 2.0;
        let s = decay_constants_higgs(2, 0.0, kappa, higgs_cut(5), None).unwrap();
        let exact = -(2.0f64 * kappa).tanh().ln();
        assert!((s.a - exact).abs() <= s.a_tail, "{} vs {exact}", s.a);
        assert!(s.c.abs() <= s.c_tail);
    }

    #[test]
    fn beta_zero_conf_is_exact() {
        let kappa = 0.5;
        let s = decay_constants_conf(2, 0.0, kappa, higgs_cut(4), None).unwrap();
        assert_eq!(s.a, -(2.0f64 * kappa).tanh().ln());
        assert_eq!(s.c, 0.0);
        assert_eq!(s.a_tail, 0.0);
    }

    #[test]
    fn zero_cutoff_gives_bare_terms() {
        let h = decay_constants_higgs(2, 0.5, 2.0, higgs_cut(0), None).unwrap();
        assert_eq!((h.a, h.c), (0.0, 0.0));
        let t = higgs_tail(2, 2.0, None).unwrap();
        assert_relative_eq!(h.a_tail, t.c_eps / 2.0 * t.q, max_relative = 1e-15);
        let beta = 1e-4;
        let c = decay_constants_conf(2, beta, 0.5, higgs_cut(0), None).unwrap();
        assert_eq!(c.a, -(1.0f64).tanh().ln());
    }

    #[test]
    fn tails_decrease_with_cutoff() {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for j in 1..=4 {
            let s = decay_constants_higgs(2, 0.5, 2.0, higgs_cut(j), None).unwrap();
            assert!(s.a_tail < last.0 && s.c_tail < last.1);
            assert!(s.a_tail >= 0.0 && s.c_tail >= 0.0);
            last = (s.a_tail, s.c_tail);
        }
        let mut last = f64::INFINITY;
        for j in 1..=4 {
            let s = decay_constants_conf(2, 2e-4, 0.5, higgs_cut(j), None).unwrap();
            assert!(s.a_tail < last);
            last = s.a_tail;
        }
    }

    #[test]
    fn higgs_constants_stable_under_truncation() {
        let lo = decay_constants_higgs(2, 0.5, 2.0, higgs_cut(3), None).unwrap();
        let hi = decay_constants_higgs(2, 0.5, 2.0, higgs_cut(5), None).unwrap();
        assert!((lo.a - hi.a).abs() <= lo.a_tail);
        assert!((lo.c - hi.c).abs() <= lo.c_tail);
        assert!(hi.a > 0.0);
    }

    #[test]
    fn higgs_residuals_within_envelope() {
        let (beta, kappa) = (0.5, 2.0);
        let s = decay_constants_higgs(2, beta, kappa, higgs_cut(5), None).unwrap();
        for n in 1..=8 {
            let tm = transfer_matrix_line(12, beta, kappa, Line::centered(12, n)).unwrap();
            let r = (tm.neg_log - s.predict(n)).abs();
            assert!(r <= s.residual_bound(n), "n={n}: residual {r:e} > {:e}", s.residual_bound(n));
        }
    }

    #[test]
    fn conf_residuals_within_envelope_in_regime() {
        let beta = 0.5 * crate::clusters::beta0(2).unwrap();
        let kappa = 0.5;
        let s = decay_constants_conf(2, beta, kappa, higgs_cut(4), None).unwrap();
        assert!(s.a > 0.0);
        for n in 1..=8 {
            let tm = transfer_matrix_line(12, beta, kappa, Line::centered(12, n)).unwrap();
            let r = (tm.neg_log - s.predict(n)).abs();
            assert!(r <= s.residual_bound(n), "n={n}: residual {r:e} > {:e}", s.residual_bound(n));
        }
    }

    #[test]
    fn conf_refuses_large_beta() {
        assert!(matches!(decay_constants_conf(2, 0.1, 0.5, higgs_cut(2), None), Err(Error::OutsideRegime(_))));
    }

    #[test]
    fn envelope_exponential_dominates_explicit_form() {
        let h = decay_constants_higgs(2, 0.5, 2.0, higgs_cut(1), None).unwrap();
        let c = decay_constants_conf(2, 2e-4, 0.5, higgs_cut(1), None).unwrap();
        for n in 1..=30 {
            assert!(h.envelope.at(n) <= h.envelope.exponential(n) * (1.0 + 1e-12));
            assert!(c.envelope.at(n) <= c.envelope.exponential(n) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fit_at_zero_beta_is_exact() {
        let kappa = 0.4;
        let pts: Vec<PerimeterPoint> = (1..=6)
            .map(|n| PerimeterPoint { n, neg_log: -(n as f64) * (2.0f64 * kappa).tanh().ln() })
            .collect();
        let fit = perimeter_fit(&pts, 2, 2, kappa, 1e-12).unwrap();
        for &(_, v) in &fit.per_length {
            assert_relative_eq!(v, -(0.8f64).tanh().ln(), max_relative = 1e-14);
        }
        assert_eq!(fit.superadditivity.violations, 0);
        assert_eq!(fit.sandwich.lower_violations + fit.sandwich.upper_violations, 0);
    }

    #[test]
    fn superadditivity_on_transfer_data() {
        let (beta, kappa) = (0.2, 0.5);
        let pts: Vec<PerimeterPoint> = (1..=8)
            .map(|n| PerimeterPoint { n, neg_log: transfer_matrix_line(12, beta, kappa, Line::centered(12, n)).unwrap().neg_log })
            .collect();
        let fit = perimeter_fit(&pts, 2, 2, kappa, 1e-12).unwrap();
        assert_eq!(fit.superadditivity.violations, 0);
        assert_eq!(fit.sandwich.lower_violations, 0);
        assert!(fit.a_hat <= fit.sandwich.b);
    }

    #[test]
    fn fit_needs_three_lengths() {
        let pts = [PerimeterPoint { n: 1, neg_log: 0.1 }, PerimeterPoint { n: 2, neg_log: 0.2 }];
        assert!(perimeter_fit(&pts, 2, 2, 0.5, 1e-12).is_err());
    }
}
