//! Lennard-Jones energy of particle domains and the Metropolis test.
//!
//! Units are reduced (epsilon = sigma = 1, Boltzmann constant 1). There is
//! no cutoff and no periodic image: every pair is summed.

use rand::Rng;

use crate::rng::RngKey;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("coincident particles: domain {domain_a} #{particle_a} and domain {domain_b} #{particle_b}")]
    Coincident {
        domain_a: usize,
        particle_a: usize,
        domain_b: usize,
        particle_b: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDomain {
    pub id: usize,
    pub particles: Vec<Vec3>,
}

impl ParticleDomain {
    pub fn new(id: usize, particles: Vec<Vec3>) -> Self {
        ParticleDomain { id, particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn in_box(&self, box_len: f64) -> bool {
        self.particles.iter().flatten().all(|&c| (0.0..box_len).contains(&c))
    }
}

/// 4((1/r)^12 - (1/r)^6) from the squared distance.
#[inline]
pub fn lj_from_r2(r2: f64) -> f64 {
    let s6 = 1.0 / (r2 * r2 * r2);
    4.0 * (s6 * s6 - s6)
}

#[inline]
fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn intra_energy(d: &ParticleDomain) -> Result<f64, PhysicsError> {
    let mut e = 0.0;
    for (i, a) in d.particles.iter().enumerate() {
        for (j, b) in d.particles.iter().enumerate().skip(i + 1) {
            let r2 = dist2(a, b);
            if r2 == 0.0 {
                return Err(PhysicsError::Coincident {
                    domain_a: d.id,
                    particle_a: i,
                    domain_b: d.id,
                    particle_b: j,
                });
            }
            e += lj_from_r2(r2);
        }
    }
    Ok(e)
}

/// Energy between two domains. Pairs are visited with the lower domain id
/// outermost so the value does not depend on argument order.
pub fn inter_energy(a: &ParticleDomain, b: &ParticleDomain) -> Result<f64, PhysicsError> {
    let (a, b) = if a.id <= b.id { (a, b) } else { (b, a) };
    let mut e = 0.0;
    for (i, p) in a.particles.iter().enumerate() {
        for (j, q) in b.particles.iter().enumerate() {
            let r2 = dist2(p, q);
            if r2 == 0.0 {
                return Err(PhysicsError::Coincident {
                    domain_a: a.id,
                    particle_a: i,
                    domain_b: b.id,
                    particle_b: j,
                });
            }
            e += lj_from_r2(r2);
        }
    }
    Ok(e)
}

/// Symmetric domain-domain energies; the diagonal holds intra-domain terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMatrix {
    n: usize,
    m: Vec<f64>,
    pub total: f64,
}

/// Candidate row for one moved domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyUpdate {
    pub domain: usize,
    pub row: Vec<f64>,
    pub total: f64,
}

impl EnergyMatrix {
    pub fn zeros(n: usize) -> Self {
        EnergyMatrix {
            n,
            m: vec![0.0; n * n],
            total: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.m[i * self.n..(i + 1) * self.n]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i * self.n + j] = v;
        self.m[j * self.n + i] = v;
    }

    /// Sum over i <= j in row-major order, with row `d` optionally replaced.
    fn sum_with(&self, replaced: Option<(usize, &[f64])>) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let v = match replaced {
                    Some((d, row)) if i == d => row[j],
                    Some((d, row)) if j == d => row[i],
                    _ => self.get(i, j),
                };
                total += v;
            }
        }
        total
    }

    pub fn recompute_total(&self) -> f64 {
        self.sum_with(None)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn apply(&mut self, update: &EnergyUpdate) {
        for (j, &v) in update.row.iter().enumerate() {
            self.set(update.domain, j, v);
        }
        self.total = update.total;
    }
}

pub fn compute_energy(domains: &[ParticleDomain]) -> Result<EnergyMatrix, PhysicsError> {
    let n = domains.len();
    let mut em = EnergyMatrix::zeros(n);
    for i in 0..n {
        em.set(i, i, intra_energy(&domains[i])?);
        for j in i + 1..n {
            em.set(i, j, inter_energy(&domains[i], &domains[j])?);
        }
    }
    em.total = em.recompute_total();
    Ok(em)
}

/// Energy of the system with `candidate` in place of the domain sharing its
/// id. `domains` is indexed by id; the entry being replaced is not read.
pub fn update_energy(
    matrix: &EnergyMatrix,
    domains: &[&ParticleDomain],
    candidate: &ParticleDomain,
) -> Result<EnergyUpdate, PhysicsError> {
    let d = candidate.id;
    let mut row = Vec::with_capacity(matrix.n);
    for (j, other) in domains.iter().enumerate() {
        row.push(if j == d {
            intra_energy(candidate)?
        } else {
            inter_energy(candidate, other)?
        });
    }
    let total = matrix.sum_with(Some((d, &row)));
    Ok(EnergyUpdate { domain: d, row, total })
}

/// Redraws every particle uniformly in [0, box_len)^3.
pub fn move_domain(box_len: f64, domain: &ParticleDomain, key: RngKey) -> ParticleDomain {
    random_domain(domain.id, domain.len(), box_len, key)
}

pub fn random_domain(id: usize, particles: usize, box_len: f64, key: RngKey) -> ParticleDomain {
    let mut rng = key.rng();
    let mut draw = || {
        // Guard against rounding up to the box edge.
        let x = rng.random::<f64>() * box_len;
        if x < box_len {
            x
        } else {
            0.0
        }
    };
    let particles = (0..particles).map(|_| [draw(), draw(), draw()]).collect();
    ParticleDomain { id, particles }
}

/// min(1, exp(-(new - old) / temperature)).
pub fn metropolis_threshold(new_energy: f64, old_energy: f64, temperature: f64) -> f64 {
    assert!(temperature > 0.0, "temperature must be positive");
    let x = (-(new_energy - old_energy) / temperature).exp();
    if x.is_nan() {
        0.0
    } else {
        x.min(1.0)
    }
}

pub fn accept_with_draw(u: f64, new_energy: f64, old_energy: f64, temperature: f64) -> bool {
    u <= metropolis_threshold(new_energy, old_energy, temperature)
}

pub fn metropolis_accept(new_energy: f64, old_energy: f64, temperature: f64, key: RngKey) -> bool {
    accept_with_draw(key.uniform(), new_energy, old_energy, temperature)
}

/// Swap test between neighbouring temperatures: accept with
/// min(1, exp((1/t_a - 1/t_b)(e_a - e_b))).
pub fn exchange_threshold(e_a: f64, e_b: f64, t_a: f64, t_b: f64) -> f64 {
    ((1.0 / t_a - 1.0 / t_b) * (e_a - e_b)).exp().min(1.0)
}
