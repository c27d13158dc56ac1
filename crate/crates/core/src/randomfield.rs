//! Karhunen-Loeve random fields on the unit square.
//!
//! Eigenpairs `phi = 2 cos(j pi x2) cos(k pi x1)`,
//! `gamma = exp(-pi (j^2 + k^2) l^2) / 4` for `j, k >= 1`, ordered by
//! descending eigenvalue. Each subdomain carries its own mean, uniform
//! half-width and truncation; the field is defined on the whole square and
//! restricted by the subdomain label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlMode {
    pub j: u32,
    pub k: u32,
    pub gamma: f64,
}

impl KlMode {
    pub fn phi(&self, x: Point) -> f64 {
        let (j, k) = (self.j as f64, self.k as f64);
        2.0 * (j * std::f64::consts::PI * x[1]).cos() * (k * std::f64::consts::PI * x[0]).cos()
    }

    pub fn grad_phi(&self, x: Point) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        let (j, k) = (self.j as f64, self.k as f64);
        let (sk, ck) = (k * pi * x[0]).sin_cos();
        let (sj, cj) = (j * pi * x[1]).sin_cos();
        [-2.0 * k * pi * sk * cj, -2.0 * j * pi * ck * sj]
    }
}

/// The `m` largest eigenpairs for correlation length `l`. Equal eigenvalues
/// are ordered lexicographically by `(j, k)`.
pub fn kl_eigenpairs(l: f64, m: usize) -> Vec<KlMode> {
    assert!(l > 0.0 && m >= 1);
    // every pair with j^2 + k^2 <= n^2 where n = m + 1 covers the m largest
    let n = (m + 1) as u32;
    let mut modes: Vec<KlMode> = (1..=n)
        .flat_map(|j| (1..=n).map(move |k| (j, k)))
        .map(|(j, k)| KlMode {
            j,
            k,
            gamma: 0.25 * (-std::f64::consts::PI * ((j * j + k * k) as f64) * l * l).exp(),
        })
        .collect();
    modes.sort_by(|a, b| {
        (a.j * a.j + a.k * a.k)
            .cmp(&(b.j * b.j + b.k * b.k))
            .then(a.j.cmp(&b.j))
            .then(a.k.cmp(&b.k))
    });
    modes.truncate(m);
    modes
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainKl {
    pub mean: f64,
    /// `xi ~ U[-half_width, half_width]`.
    pub half_width: f64,
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlSpec {
    correlation_length: f64,
    subdomains: Vec<SubdomainKl>,
    modes: Vec<KlMode>,
}

impl KlSpec {
    /// Validates the parameters and the positivity budget
    /// `mean - w sum_k sqrt(gamma_k) max|phi_k| > 0` for every subdomain.
    pub fn new(correlation_length: f64, subdomains: Vec<SubdomainKl>) -> Result<Self> {
        if !(correlation_length > 0.0) {
            return Err(Error::InvalidKlSpec("correlation length must be positive".into()));
        }
        if subdomains.is_empty() {
            return Err(Error::InvalidKlSpec("no subdomains".into()));
        }
        for (i, s) in subdomains.iter().enumerate() {
            if s.terms == 0 {
                return Err(Error::InvalidKlSpec(format!("subdomain {i}: truncation must be at least 1")));
            }
            if !(s.half_width >= 0.0) {
                return Err(Error::InvalidKlSpec(format!("subdomain {i}: half-width must be nonnegative")));
            }
        }
        let m = subdomains.iter().map(|s| s.terms).max().unwrap_or(1);
        let spec = KlSpec {
            correlation_length,
            modes: kl_eigenpairs(correlation_length, m),
            subdomains,
        };
        for i in 0..spec.subdomains.len() {
            let margin = spec.positivity_margin(i);
            if !(margin > 0.0) {
                return Err(Error::InvalidKlSpec(format!(
                    "subdomain {i}: mean {} minus worst-case fluctuation leaves {margin}",
                    spec.subdomains[i].mean
                )));
            }
        }
        Ok(spec)
    }

    pub fn correlation_length(&self) -> f64 {
        self.correlation_length
    }

    pub fn subdomains(&self) -> &[SubdomainKl] {
        &self.subdomains
    }

    pub fn modes(&self, subdomain: usize) -> &[KlMode] {
        &self.modes[..self.subdomains[subdomain].terms]
    }

    /// Sum of `2 sqrt(gamma_k)` over the retained modes (`max |phi_k| = 2`).
    pub fn fluctuation_bound(&self, subdomain: usize) -> f64 {
        self.modes(subdomain).iter().map(|m| 2.0 * m.gamma.sqrt()).sum()
    }

    /// Smallest value the field can take in `subdomain`.
    pub fn positivity_margin(&self, subdomain: usize) -> f64 {
        let s = &self.subdomains[subdomain];
        s.mean - s.half_width * self.fluctuation_bound(subdomain)
    }

    /// Same expansion with every half-width set to zero.
    pub fn is_degenerate(&self) -> bool {
        self.subdomains.iter().all(|s| s.half_width == 0.0)
    }
}

/// One realization: `xi[i][k]` for subdomain `i`, mode `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub seed: u64,
    pub index: u64,
    pub xi: Vec<Vec<f64>>,
}

/// Independent stream per `(seed, index, subdomain)`; components are drawn
/// sequentially from that stream.
pub fn draw_sample(spec: &KlSpec, seed: u64, index: u64) -> SampleDraw {
    let xi = spec
        .subdomains
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut key = [0u8; 32];
            key[..8].copy_from_slice(&seed.to_le_bytes());
            key[8..16].copy_from_slice(&index.to_le_bytes());
            key[16..24].copy_from_slice(&(i as u64).to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(key);
            (0..s.terms)
                .map(|_| {
                    let u: f64 = rng.gen();
                    -s.half_width + 2.0 * s.half_width * u
                })
                .collect()
        })
        .collect();
    SampleDraw { seed, index, xi }
}

/// Field value and analytic gradient at `x` for the expansion of `subdomain`.
pub fn evaluate_kappa(spec: &KlSpec, draw: &SampleDraw, x: Point, subdomain: usize) -> Result<(f64, [f64; 2])> {
    let mean = spec.subdomains[subdomain].mean;
    let mut fluct = 0.0;
    let mut grad = [0.0, 0.0];
    for (mode, &xi) in spec.modes(subdomain).iter().zip(&draw.xi[subdomain]) {
        let w = mode.gamma.sqrt() * xi;
        fluct += w * mode.phi(x);
        let g = mode.grad_phi(x);
        grad[0] += w * g[0];
        grad[1] += w * g[1];
    }
    let value = mean + fluct;
    if !(value > 0.0) {
        return Err(Error::NonpositiveKappa { x: x[0], y: x[1], value });
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_spec() -> KlSpec {
        KlSpec::new(
            0.5,
            vec![
                SubdomainKl { mean: 1000.0, half_width: 50.0, terms: 20 },
                SubdomainKl { mean: 7.5, half_width: 2.5, terms: 20 },
                SubdomainKl { mean: 5.0, half_width: 1.0, terms: 20 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn first_eigenvalue() {
        let modes = kl_eigenpairs(0.5, 3);
        assert_eq!((modes[0].j, modes[0].k), (1, 1));
        let expected = 0.25 * (-std::f64::consts::PI / 2.0).exp();
        assert!((modes[0].gamma - expected).abs() < 1e-15);
        assert!((modes[0].gamma - 0.05197).abs() < 1e-5);
        assert_eq!(modes[0].phi([0.0, 0.0]), 2.0);
    }

    #[test]
    fn ties_are_lexicographic() {
        let modes = kl_eigenpairs(0.5, 3);
        assert_eq!((modes[1].j, modes[1].k), (1, 2));
        assert_eq!((modes[2].j, modes[2].k), (2, 1));
        assert_eq!(modes[1].gamma, modes[2].gamma);
    }

    #[test]
    fn eigenvalues_descend() {
        let modes = kl_eigenpairs(0.3, 50);
        assert_eq!(modes.len(), 50);
        assert!(modes.windows(2).all(|w| w[0].gamma >= w[1].gamma));
        // brute force: the 50 largest among a generous grid
        let mut all: Vec<f64> = (1..=60u32)
            .flat_map(|j| (1..=60u32).map(move |k| 0.25 * (-std::f64::consts::PI * ((j * j + k * k) as f64) * 0.3 * 0.3).exp()))
            .collect();
        all.sort_by(|a, b| b.total_cmp(a));
        for (m, g) in modes.iter().zip(&all) {
            assert_eq!(m.gamma, *g);
        }
    }

    #[test]
    fn zero_width_gives_zero_draw_and_mean_field() {
        let spec = KlSpec::new(0.5, vec![SubdomainKl { mean: 3.0, half_width: 0.0, terms: 5 }]).unwrap();
        let d = draw_sample(&spec, 11, 4);
        assert!(d.xi[0].iter().all(|&x| x == 0.0));
        let (v, g) = evaluate_kappa(&spec, &d, [0.3, 0.8], 0).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn draws_are_reproducible_and_distinct() {
        let spec = paper_spec();
        assert_eq!(draw_sample(&spec, 7, 3), draw_sample(&spec, 7, 3));
        assert_ne!(draw_sample(&spec, 7, 3).xi, draw_sample(&spec, 7, 4).xi);
        assert_ne!(draw_sample(&spec, 8, 3).xi, draw_sample(&spec, 7, 3).xi);
        let d = draw_sample(&spec, 1, 0);
        for (s, xi) in spec.subdomains().iter().zip(&d.xi) {
            assert!(xi.iter().all(|x| x.abs() <= s.half_width));
        }
    }

    #[test]
    fn positivity_budget() {
        let spec = paper_spec();
        assert!(spec.positivity_margin(0) > 900.0);
        let bad = KlSpec::new(0.5, vec![SubdomainKl { mean: 1.0, half_width: 10.0, terms: 20 }]);
        assert!(matches!(bad, Err(Error::InvalidKlSpec(_))));
        assert!(KlSpec::new(0.0, vec![SubdomainKl { mean: 1.0, half_width: 0.0, terms: 1 }]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = paper_spec();
        let d = draw_sample(&spec, 5, 0);
        let h = 1e-6;
        for (i, x) in [[0.13, 0.71], [0.5, 0.5], [0.91, 0.07]].iter().enumerate() {
            let (_, g) = evaluate_kappa(&spec, &d, *x, i).unwrap();
            for a in 0..2 {
                let mut xp = *x;
                let mut xm = *x;
                xp[a] += h;
                xm[a] -= h;
                let fd = (evaluate_kappa(&spec, &d, xp, i).unwrap().0 - evaluate_kappa(&spec, &d, xm, i).unwrap().0) / (2.0 * h);
                assert!((fd - g[a]).abs() <= 1e-6 * g[a].abs().max(1.0), "{fd} vs {}", g[a]);
            }
        }
    }
}
