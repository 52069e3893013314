//! Low-rank (tensor-decomposition) PCFG and its exact rank-space rewrite as a
//! simple PCFG.
//!
//! Binary rules factor through a latent rank variable:
//! `p(A -> B C) = sum_r U[A, r] V[B, r] W[C, r]` with `U` rows and `V`, `W`
//! columns normalized, so each parent's rules sum to one.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_concentration, dirichlet_log_row, dirichlet_log_table, GrammarDims, SimpleGrammar};
use crate::logspace::{logsumexp, NEG_INF};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankGrammar {
    pub dims: GrammarDims,
    pub rank: usize,
    /// `n_nt x rank`, rows sum to one.
    pub u: Array2<f64>,
    /// `n_sym x rank`, columns sum to one.
    pub v: Array2<f64>,
    /// `n_sym x rank`, columns sum to one.
    pub w: Array2<f64>,
    pub log_root: Array1<f64>,
    pub log_emit: Array2<f64>,
}

impl LowRankGrammar {
    pub fn check_structure(&self) -> Result<()> {
        let d = &self.dims;
        if self.rank == 0 {
            return Err(Error::Structural("rank must be positive".into()));
        }
        let shapes = [
            ("U", self.u.dim(), (d.n_nt, self.rank)),
            ("V", self.v.dim(), (d.n_sym(), self.rank)),
            ("W", self.w.dim(), (d.n_sym(), self.rank)),
            ("emit", self.log_emit.dim(), (d.n_pt, d.vocab_size)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Structural(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.log_root.len() != d.n_nt {
            return Err(Error::Structural("root length must equal n_nt".into()));
        }
        Ok(())
    }

    /// Structural check plus normalization of every factor within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        self.check_structure()?;
        let bad = |what: String| Err(Error::InvalidArgument(format!("{what} is not normalized")));
        for (a, row) in self.u.axis_iter(Axis(0)).enumerate() {
            if (row.sum() - 1.0).abs() > tol {
                return bad(format!("U row {a}"));
            }
        }
        for (name, m) in [("V", &self.v), ("W", &self.w)] {
            for (r, col) in m.axis_iter(Axis(1)).enumerate() {
                if (col.sum() - 1.0).abs() > tol {
                    return bad(format!("{name} column {r}"));
                }
            }
        }
        if logsumexp(&self.log_root.to_vec()).abs() > tol {
            return bad("root".into());
        }
        for (t, row) in self.log_emit.axis_iter(Axis(0)).enumerate() {
            if logsumexp(&row.to_vec()).abs() > tol {
                return bad(format!("emit row {t}"));
            }
        }
        Ok(())
    }

    /// `p(A -> B C) = sum_r U[A,r] V[B,r] W[C,r]`.
    pub fn rule_prob(&self, parent: usize, left: usize, right: usize) -> Result<f64> {
        let d = &self.dims;
        if parent >= d.n_nt {
            return Err(Error::InvalidArgument(format!(
                "rule parent {parent} is not a nonterminal (n_nt = {})",
                d.n_nt
            )));
        }
        if left >= d.n_sym() || right >= d.n_sym() {
            return Err(Error::InvalidArgument(format!(
                "rule children ({left}, {right}) out of range for {} symbols",
                d.n_sym()
            )));
        }
        Ok((0..self.rank)
            .map(|r| self.u[[parent, r]] * self.v[[left, r]] * self.w[[right, r]])
            .sum())
    }
}

/// Random low-rank grammar: `U` rows and `V`, `W` columns are Dirichlet draws.
pub fn random_lowrank(
    dims: GrammarDims,
    rank: usize,
    seed: u64,
    concentration: f64,
) -> Result<LowRankGrammar> {
    let dims = GrammarDims::new(dims.n_nt, dims.n_pt, dims.vocab_size)?;
    check_concentration(concentration)?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_root = Array1::from(dirichlet_log_row(&mut rng, dims.n_nt, concentration));
    let u = dirichlet_log_table(&mut rng, dims.n_nt, rank, concentration).mapv(f64::exp);
    let v = dirichlet_log_table(&mut rng, rank, dims.n_sym(), concentration)
        .mapv(f64::exp)
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    let w = dirichlet_log_table(&mut rng, rank, dims.n_sym(), concentration)
        .mapv(f64::exp)
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    let log_emit = dirichlet_log_table(&mut rng, dims.n_pt, dims.vocab_size, concentration);
    Ok(LowRankGrammar {
        dims,
        rank,
        u,
        v,
        w,
        log_root,
        log_emit,
    })
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        NEG_INF
    }
}

/// Rewrites a low-rank grammar as a simple PCFG whose nonterminals are the
/// rank states.
///
/// A rank state `r` picks its left child `B ~ V[., r]`; a nonterminal child
/// immediately picks its own rank state `r' ~ U[B, .]`. Summing out `B` gives
/// the rank-to-rank table `sum_B V[B, r] U[B, r']`, while preterminal
/// children keep `V[T, r]`. The right table is the same construction with
/// `W`, the root becomes `sum_A root[A] U[A, r]`, and emissions carry over.
pub fn lowrank_to_simple(lr: &LowRankGrammar) -> Result<SimpleGrammar> {
    lr.check_structure()?;
    let d = lr.dims;
    let rank = lr.rank;
    let root_p = lr.log_root.mapv(f64::exp);
    let new_root = root_p.dot(&lr.u).mapv(ln_or_neg_inf);

    let side = |factor: &Array2<f64>| -> Array2<f64> {
        let mut table = Array2::from_elem((rank, rank + d.n_pt), NEG_INF);
        let nt_rows = factor.slice(ndarray::s![..d.n_nt, ..]);
        // (rank x n_nt) . (n_nt x rank) -> parent rank x child rank
        let to_rank = nt_rows.t().dot(&lr.u);
        for r in 0..rank {
            for r2 in 0..rank {
                table[[r, r2]] = ln_or_neg_inf(to_rank[[r, r2]]);
            }
            for t in 0..d.n_pt {
                table[[r, rank + t]] = ln_or_neg_inf(factor[[d.n_nt + t, r]]);
            }
        }
        table
    };

    SimpleGrammar::from_tables(
        new_root,
        side(&lr.v),
        side(&lr.w),
        lr.log_emit.clone(),
        false,
    )
}
