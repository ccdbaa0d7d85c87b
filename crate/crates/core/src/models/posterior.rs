//! Graph-level posteriors computed from per-node feature evidence.

use crate::error::{Error, Result};
use crate::propagation::{self, Normalization, PprConfig};
use crate::second_order::{argmax, Dirichlet, DirichletMixture, SecondOrder, UncertaintyReport};
use crate::sparse::{DenseMatrix, SparseMatrix};

/// Second-order (or, for the baseline, first-order) prediction for one node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodePosterior {
    Dirichlet(Dirichlet),
    Mixture(DirichletMixture),
    Categorical(Vec<f64>),
}

impl NodePosterior {
    pub fn mean(&self) -> Vec<f64> {
        match self {
            NodePosterior::Dirichlet(d) => d.mean(),
            NodePosterior::Mixture(m) => m.mean(),
            NodePosterior::Categorical(p) => p.clone(),
        }
    }

    /// Argmax of the mean; the lowest class index wins ties.
    pub fn predicted(&self) -> usize {
        argmax(&self.mean())
    }

    pub fn report(&self) -> UncertaintyReport {
        match self {
            NodePosterior::Dirichlet(d) => d.report(),
            NodePosterior::Mixture(m) => m.report(),
            NodePosterior::Categorical(p) => UncertaintyReport::first_order(p),
        }
    }
}

fn dirichlets(alphas: &DenseMatrix) -> Result<Vec<Dirichlet>> {
    alphas.rows().map(|r| Dirichlet::new(r.to_vec())).collect()
}

/// Pseudo-count propagation: `α^agg = Â_ε^L α^ft`.
pub fn forward_gpn(alphas_ft: &DenseMatrix, adjacency: &SparseMatrix, cfg: &PprConfig) -> Result<Vec<Dirichlet>> {
    let normalized = propagation::normalize(adjacency, cfg.normalization)?;
    dirichlets(&propagation::propagate_dense(&normalized, alphas_ft, cfg)?)
}

/// Opinion pooling: node `i` gets the mixture of every `Dir(α^ft_j)` weighted
/// by row `i` of the explicit propagation matrix. Zero weights are dropped.
pub fn forward_lop(alphas_ft: &DenseMatrix, adjacency: &SparseMatrix, cfg: &PprConfig) -> Result<Vec<DirichletMixture>> {
    if cfg.normalization != Normalization::RandomWalk {
        return Err(Error::invalid(
            "opinion pooling needs random-walk normalization so that every row is a valid mixture",
        ));
    }
    if alphas_ft.n_rows() != adjacency.n_rows() {
        return Err(Error::ShapeMismatch {
            op: "forward_lop",
            left: (adjacency.n_rows(), adjacency.n_cols()),
            right: alphas_ft.shape(),
        });
    }
    let normalized = propagation::normalize(adjacency, cfg.normalization)?;
    let pi = propagation::ppr_matrix(&normalized, cfg)?;
    let components = dirichlets(alphas_ft)?;
    mixtures_from_rows(&pi, &components)
}

/// One mixture per row of `pi`, drawing components from `components`.
pub fn mixtures_from_rows(pi: &SparseMatrix, components: &[Dirichlet]) -> Result<Vec<DirichletMixture>> {
    (0..pi.n_rows())
        .map(|i| {
            let (cols, vals) = pi.row(i);
            let mut w = Vec::with_capacity(cols.len());
            let mut c = Vec::with_capacity(cols.len());
            for (&j, &v) in cols.iter().zip(vals) {
                if v > 0.0 {
                    w.push(v);
                    c.push(components[j].clone());
                }
            }
            // rows sum to one up to rounding; renormalize so the mixture check is exact
            let s: f64 = w.iter().sum();
            for x in &mut w {
                *x /= s;
            }
            DirichletMixture::new(w, c)
        })
        .collect()
}

/// First-order propagation of class probabilities.
pub fn forward_appnp(probabilities: &DenseMatrix, adjacency: &SparseMatrix, cfg: &PprConfig) -> Result<DenseMatrix> {
    let normalized = propagation::normalize(adjacency, cfg.normalization)?;
    propagation::propagate_dense(&normalized, probabilities, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::dense_oracle as oracle;
    use std::f64::consts::LN_2;

    fn pair() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    fn conflict() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![100.0, 1.0], vec![1.0, 100.0]]).unwrap()
    }

    fn cfg(eps: f64, l: usize) -> PprConfig {
        PprConfig {
            teleport: eps,
            iterations: l,
            ..Default::default()
        }
    }

    #[test]
    fn gpn_without_network_effects() {
        let a = conflict();
        let out = forward_gpn(&a, &pair(), &cfg(1.0, 10)).unwrap();
        assert_eq!(out[0].alpha(), &[100.0, 1.0]);
        assert_eq!(out[1].alpha(), &[1.0, 100.0]);
    }

    #[test]
    fn gpn_pure_adjacency_swaps() {
        let out = forward_gpn(&conflict(), &pair(), &cfg(0.0, 1)).unwrap();
        assert_eq!(out[0].alpha(), &[1.0, 100.0]);
        assert_eq!(out[1].alpha(), &[100.0, 1.0]);
    }

    #[test]
    fn gpn_conflict_averages() {
        let out = forward_gpn(&conflict(), &pair(), &cfg(0.5, 1)).unwrap();
        for d in &out {
            assert_eq!(d.alpha(), &[50.5, 50.5]);
            assert!((d.eu_pc() + 101.0).abs() < 1e-12);
            // high AU, low EU
            assert!(d.au() > 0.68 && d.eu() < 0.01);
        }
    }

    #[test]
    fn lop_without_network_effects() {
        let out = forward_lop(&conflict(), &pair(), &cfg(1.0, 3)).unwrap();
        assert_eq!(out[0].weights(), &[1.0]);
        assert_eq!(out[0].components()[0].alpha(), &[100.0, 1.0]);
    }

    #[test]
    fn lop_conflict_keeps_low_au() {
        let out = forward_lop(&conflict(), &pair(), &cfg(0.5, 1)).unwrap();
        let comp = Dirichlet::new(vec![100.0, 1.0]).unwrap();
        for m in &out {
            assert_eq!(m.weights(), &[0.5, 0.5]);
            assert!((m.au() - comp.au()).abs() < 1e-12);
            assert!((m.au() - 0.0514).abs() < 1e-3);
            assert!((m.tu() - LN_2).abs() < 1e-12);
            assert!((m.eu() - 0.642).abs() < 1e-3);
        }
    }

    #[test]
    fn lop_rejects_symmetric() {
        let c = PprConfig {
            normalization: Normalization::Symmetric,
            ..cfg(0.5, 1)
        };
        assert!(forward_lop(&conflict(), &pair(), &c).is_err());
    }

    #[test]
    fn lop_drops_zero_weights() {
        let pi = SparseMatrix::from_triplets(1, 5, [(0, 0, 0.5), (0, 2, 0.3), (0, 4, 0.2)]).unwrap();
        let comps: Vec<Dirichlet> = (0..5).map(|j| Dirichlet::new(vec![1.0 + j as f64, 2.0]).unwrap()).collect();
        let m = &mixtures_from_rows(&pi, &comps).unwrap()[0];
        assert_eq!(m.components().len(), 3);
        assert_eq!(m.components()[1], comps[2]);
    }

    #[test]
    fn appnp_examples() {
        let path = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        let p = DenseMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        assert_eq!(forward_appnp(&p, &path, &cfg(1.0, 4)).unwrap(), p);

        let u = DenseMatrix::from_rows(&vec![vec![0.5, 0.5]; 3]).unwrap();
        let out = forward_appnp(&u, &path, &cfg(0.1, 10)).unwrap();
        assert!(out.max_abs_diff(&u) < 1e-15);

        let c = cfg(0.2, 6);
        let out = forward_appnp(&p, &path, &c).unwrap();
        let norm = oracle::normalize_rw(&path.to_dense().to_rows());
        let a_eps: Vec<Vec<f64>> = norm
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(j, v)| 0.8 * v + if i == j { 0.2 } else { 0.0 }).collect())
            .collect();
        let want = oracle::matmul(&oracle::power(&a_eps, 6), &p.to_rows());
        assert!(oracle::max_abs_diff(&out.to_rows(), &want) < 1e-12);
        for r in out.rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
