//! Single-edge Metropolis sampler for the unitary-gauge Z_2 model.
//!
//! Spins live on edges, `s_e = ±1`, with weight `exp(2β Σ_p Π_{e∈∂p} s_e + 2κ Σ_e s_e)`.
//! Random numbers come from ChaCha8 keyed by the seed, with the chain index as stream and
//! the sweep index fixing the word position, so every (seed, chain, sweep) triple maps to a
//! fixed block of the keystream regardless of thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dec::BoxGeometry;
use crate::error::{Error, Result};
use crate::gaugemodel::{ModelParams, Path};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    /// Sweeps per chain, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    /// Sweeps between measurements.
    pub stride: usize,
    /// Batches per chain for the error bar.
    pub batches: usize,
    pub chains: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { seed: 1, sweeps: 20_000, burn_in: 1_000, stride: 1, batches: 20, chains: 4 }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.batches < 2 || self.chains == 0 {
            return Err(Error::Invalid("stride and chains must be positive and batches at least 2".into()));
        }
        let samples = self.sweeps.saturating_sub(self.burn_in) / self.stride;
        if samples < self.batches {
            return Err(Error::Invalid(format!(
                "insufficient samples: {} sweeps after {} burn-in give {samples} measurements for {} batches",
                self.sweeps, self.burn_in, self.batches
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub mean: f64,
    pub stderr: f64,
    /// Integrated autocorrelation time in measurements.
    pub tau_int: f64,
    pub samples: usize,
    pub acceptance: f64,
}

/// Edge spins plus the incidence data the updates need.
#[derive(Clone, Debug)]
pub struct Lattice {
    spins: Vec<i8>,
    /// Edges of each plaquette.
    plaquette_edges: Vec<[u32; 4]>,
    /// Plaquettes containing each edge.
    edge_plaquettes: Vec<Vec<u32>>,
}

impl Lattice {
    pub fn cold(geom: &BoxGeometry) -> Self {
        let plaquette_edges = (0..geom.num_cells(2))
            .map(|p| {
                let f = geom.faces(2, p);
                [f[0].0, f[1].0, f[2].0, f[3].0]
            })
            .collect();
        let edge_plaquettes = (0..geom.num_cells(1)).map(|e| geom.cofaces(1, e).iter().map(|x| x.0).collect()).collect();
        Lattice { spins: vec![1; geom.num_cells(1)], plaquette_edges, edge_plaquettes }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn set_spins(&mut self, spins: &[i8]) {
        self.spins.copy_from_slice(spins);
    }

    fn plaquette(&self, p: u32) -> i32 {
        self.plaquette_edges[p as usize].iter().map(|&e| self.spins[e as usize] as i32).product()
    }

    /// `log W(flipped) − log W(current)` for flipping edge `e`.
    pub fn delta_log_weight(&self, e: usize, beta: f64, kappa: f64) -> f64 {
        let s = self.spins[e] as f64;
        let plaq: i32 = self.edge_plaquettes[e].iter().map(|&p| self.plaquette(p)).sum();
        -4.0 * kappa * s - 4.0 * beta * plaq as f64
    }

    /// `log W = 2β Σ_p Π s + 2κ Σ_e s`.
    pub fn log_weight(&self, beta: f64, kappa: f64) -> f64 {
        let plaq: i32 = (0..self.plaquette_edges.len() as u32).map(|p| self.plaquette(p)).sum();
        let edge: i32 = self.spins.iter().map(|&s| s as i32).sum();
        2.0 * beta * plaq as f64 + 2.0 * kappa * edge as f64
    }

    fn flip(&mut self, e: usize) {
        self.spins[e] = -self.spins[e];
    }
}

/// Metropolis acceptance probability `min(1, W(flipped)/W(current))`.
pub fn acceptance_probability(lattice: &Lattice, e: usize, beta: f64, kappa: f64) -> f64 {
    lattice.delta_log_weight(e, beta, kappa).exp().min(1.0)
}

fn chain_rng(seed: u64, chain: usize, sweep: usize, edges: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    // one f64 per edge, two 32-bit words each
    rng.set_word_pos((sweep as u128) * 2 * edges as u128);
    rng
}

fn run_chain(geom: &BoxGeometry, odd_edges: &[usize], p: &ModelParams, mc: &McConfig, chain: usize) -> (Vec<f64>, u64) {
    let mut lat = Lattice::cold(geom);
    let n_edges = geom.num_cells(1);
    let mut out = Vec::with_capacity((mc.sweeps - mc.burn_in) / mc.stride);
    let mut accepted = 0u64;
    for sweep in 0..mc.sweeps {
        let mut rng = chain_rng(mc.seed, chain, sweep, n_edges);
        for e in 0..n_edges {
            let u: f64 = rng.gen();
            let dl = lat.delta_log_weight(e, p.beta, p.kappa);
            if dl >= 0.0 || u < dl.exp() {
                lat.flip(e);
                accepted += 1;
            }
        }
        if sweep >= mc.burn_in && (sweep - mc.burn_in) % mc.stride == 0 {
            let w: i32 = odd_edges.iter().map(|&e| lat.spins[e] as i32).product();
            out.push(w as f64);
        }
    }
    (out, accepted)
}

/// Jackknife mean and standard error of a set of batch means.
pub fn jackknife(batch_means: &[f64]) -> (f64, f64) {
    let b = batch_means.len() as f64;
    let total: f64 = batch_means.iter().sum();
    let mean = total / b;
    let leave_one: Vec<f64> = batch_means.iter().map(|&x| (total - x) / (b - 1.0)).collect();
    let var = (b - 1.0) / b * leave_one.iter().map(|&x| (x - mean).powi(2)).sum::<f64>();
    (mean, var.sqrt())
}

/// Integrated autocorrelation time `1/2 + Σ_t ρ(t)` with a self-consistent window
/// `W ≥ 6 τ(W)`.
pub fn tau_int(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.5;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n {
        let ct = series[..n - t].iter().zip(&series[t..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64;
        tau += ct / c0;
        if t as f64 >= 6.0 * tau {
            break;
        }
    }
    tau
}

/// Estimates `E^{(U)}[W_γ]` for a Z_2 model.
pub fn sample_expectation(geom: &BoxGeometry, gamma: &Path, p: &ModelParams, mc: &McConfig) -> Result<McResult> {
    if p.m != 2 || p.n != 2 {
        return Err(Error::Unsupported(format!("the sampler needs m = n = 2, got m={}, n={}", p.m, p.n)));
    }
    mc.validate()?;
    let odd_edges: Vec<usize> = gamma.edges().into_iter().filter(|&(_, c)| c.rem_euclid(2) == 1).map(|(e, _)| e).collect();
    let runs: Vec<(Vec<f64>, u64)> = (0..mc.chains).into_par_iter().map(|c| run_chain(geom, &odd_edges, p, mc, c)).collect();
    let mut batch_means = Vec::new();
    let mut taus = Vec::new();
    let mut samples = 0;
    let mut accepted = 0;
    for (series, acc) in &runs {
        accepted += acc;
        samples += series.len();
        let size = series.len() / mc.batches;
        for b in 0..mc.batches {
            let chunk = &series[b * size..(b + 1) * size];
            batch_means.push(chunk.iter().sum::<f64>() / size as f64);
        }
        taus.push(tau_int(series));
    }
    let (mean, stderr) = jackknife(&batch_means);
    let updates = (mc.chains * mc.sweeps * geom.num_cells(1)) as f64;
    Ok(McResult {
        mean,
        stderr,
        tau_int: taus.iter().sum::<f64>() / taus.len() as f64,
        samples,
        acceptance: accepted as f64 / updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dec::Form;
    use crate::gaugemodel::log_unitary_weight;
    use crate::oracle::{transfer_matrix_line, Line};

    fn line_path(geom: &BoxGeometry, len: usize) -> Path {
        let l = Line::centered(geom.side(), len);
        Path::straight(geom, &[l.x0, l.y0], 0, len).unwrap()
    }

    #[test]
    fn detailed_balance() {
        let p = ModelParams::z2(2, 4, 0.37, 0.61);
        let geom = p.geometry().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let spins: Vec<i8> = (0..geom.num_cells(1)).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let e = rng.gen_range(0..spins.len());
            let mut x = Lattice::cold(&geom);
            x.set_spins(&spins);
            let mut y = x.clone();
            y.flip(e);
            let forward = acceptance_probability(&x, e, p.beta, p.kappa);
            let backward = acceptance_probability(&y, e, p.beta, p.kappa);
            // independent weights from the form-based model
            let to_form = |l: &Lattice| {
                let v: Vec<i64> = l.spins().iter().map(|&s| i64::from(s < 0)).collect();
                Form::from_values(&geom, 1, 2, &v).unwrap()
            };
            let wx = log_unitary_weight(&geom, &to_form(&x), &p).unwrap();
            let wy = log_unitary_weight(&geom, &to_form(&y), &p).unwrap();
            assert!(((forward / backward).ln() - (wy - wx)).abs() < 1e-12);
            assert!((x.log_weight(p.beta, p.kappa) - wx).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        let p = ModelParams::z2(2, 4, 0.3, 0.4);
        let geom = p.geometry().unwrap();
        let gamma = line_path(&geom, 2);
        let mc = McConfig { seed: 11, sweeps: 400, burn_in: 50, stride: 1, batches: 5, chains: 3 };
        let a = sample_expectation(&geom, &gamma, &p, &mc).unwrap();
        let b = sample_expectation(&geom, &gamma, &p, &mc).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let c = sample_expectation(&geom, &gamma, &p, &McConfig { seed: 12, ..mc }).unwrap();
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
    }

    #[test]
    fn zero_beta_law() {
        let p = ModelParams::z2(2, 4, 0.0, 0.5);
        let geom = p.geometry().unwrap();
        let gamma = line_path(&geom, 3);
        let mc = McConfig { seed: 3, sweeps: 20_000, burn_in: 200, stride: 1, batches: 20, chains: 4 };
        let r = sample_expectation(&geom, &gamma, &p, &mc).unwrap();
        let exact = 1f64.tanh().powi(3);
        assert!((r.mean - exact).abs() <= 3.0 * r.stderr, "{} ± {} vs {exact}", r.mean, r.stderr);
    }

    #[test]
    fn agrees_with_transfer_matrix() {
        let p = ModelParams::z2(2, 6, 0.3, 0.3);
        let geom = p.geometry().unwrap();
        let gamma = line_path(&geom, 2);
        let mc = McConfig { seed: 5, sweeps: 20_000, burn_in: 500, stride: 1, batches: 20, chains: 4 };
        let r = sample_expectation(&geom, &gamma, &p, &mc).unwrap();
        let exact = transfer_matrix_line(6, p.beta, p.kappa, Line::centered(6, 2)).unwrap().expectation;
        assert!((r.mean - exact).abs() <= 3.0 * r.stderr, "{} ± {} vs {exact}", r.mean, r.stderr);
        assert!(r.tau_int >= 0.5);
    }

    #[test]
    fn zero_sweeps_rejected() {
        let p = ModelParams::z2(2, 2, 0.1, 0.1);
        let geom = p.geometry().unwrap();
        let mc = McConfig { sweeps: 0, burn_in: 0, ..McConfig::default() };
        assert!(sample_expectation(&geom, &line_path(&geom, 1), &p, &mc).is_err());
    }

    #[test]
    fn needs_z2() {
        let mut p = ModelParams::z2(2, 2, 0.1, 0.1);
        p.m = 3;
        p.n = 3;
        let geom = p.geometry().unwrap();
        assert!(matches!(sample_expectation(&geom, &Path::empty(&geom), &p, &McConfig::default()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn jackknife_of_constant_batches() {
        assert_eq!(jackknife(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = jackknife(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // equals the ordinary standard error of the mean
        assert!((s - (1.25f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
