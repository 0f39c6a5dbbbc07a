use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Per-species gene-lineage counts of a nested coalescent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneticComposition {
    species: Vec<u64>,
}

impl GeneticComposition {
    pub fn new(species: Vec<u64>) -> Result<Self> {
        if species.is_empty() {
            return Err(domain("a composition needs at least one species"));
        }
        if species.contains(&0) {
            return Err(domain("every species carries at least one gene lineage"));
        }
        let comp = GeneticComposition { species };
        comp.total_genes_checked()?;
        Ok(comp)
    }

    /// `s0` species with `genes` lineages each.
    pub fn uniform(s0: u64, genes: u64) -> Result<Self> {
        if s0 == 0 {
            return Err(domain("s0 must be positive"));
        }
        Self::new(vec![genes; s0 as usize])
    }

    pub fn species(&self) -> &[u64] {
        &self.species
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn total_genes(&self) -> u64 {
        self.species.iter().sum()
    }

    fn total_genes_checked(&self) -> Result<u64> {
        self.species.iter().try_fold(0u64, |acc, &g| {
            acc.checked_add(g)
                .ok_or_else(|| Error::Overflow("total gene count exceeds u64".into()))
        })
    }

    /// Canonical form: counts sorted in decreasing order.
    pub fn canonical(&self) -> Self {
        let mut species = self.species.clone();
        species.sort_unstable_by(|a, b| b.cmp(a));
        GeneticComposition { species }
    }

    pub fn into_inner(self) -> Vec<u64> {
        self.species
    }
}

/// Weighted atoms on [0, inf).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<(f64, f64)>,
}

impl EmpiricalMeasure {
    /// Builds a measure from `(mass, weight)` pairs, merging equal masses and normalizing the
    /// total weight to one.
    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        if atoms.iter().any(|&(m, w)| !(m >= 0.0 && m.is_finite()) || !(w >= 0.0 && w.is_finite())) {
            return Err(domain("atoms need finite nonnegative masses and weights"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if total <= 0.0 {
            return Err(domain("a measure needs positive total weight"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (m, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == m => last.1 += w,
                _ => merged.push((m, w)),
            }
        }
        for a in &mut merged {
            a.1 /= total;
        }
        Ok(EmpiricalMeasure { atoms: merged })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.atoms.iter().map(|&(m, w)| w * m.powi(k)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn laplace(&self, lambda: f64) -> f64 {
        self.atoms.iter().map(|&(m, w)| w * (-lambda * m).exp()).sum()
    }

    /// Divides every atom mass by `n`.
    pub fn rescale(&self, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("rescaling factor must be positive"));
        }
        let n = n as f64;
        Ok(EmpiricalMeasure {
            atoms: self.atoms.iter().map(|&(m, w)| (m / n, w)).collect(),
        })
    }
}

/// Uniform weights `1/s` on the per-species gene counts.
pub fn empirical(comp: &GeneticComposition) -> EmpiricalMeasure {
    empirical_from_counts(comp.species())
}

pub(crate) fn empirical_from_counts(counts: &[u64]) -> EmpiricalMeasure {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let s = sorted.len() as f64;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for g in sorted {
        match atoms.last_mut() {
            Some(last) if last.0 == g as f64 => last.1 += 1.0,
            _ => atoms.push((g as f64, 1.0)),
        }
    }
    for a in &mut atoms {
        a.1 /= s;
    }
    EmpiricalMeasure { atoms }
}
