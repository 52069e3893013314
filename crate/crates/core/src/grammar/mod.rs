//! Grammar representations.
//!
//! Symbols are laid out as `0..n_nt` nonterminals followed by
//! `n_nt..n_sym` preterminals. Binary-rule parents are nonterminals, children
//! range over all symbols, and only preterminals emit words.

pub(crate) mod io;
mod lowrank;
mod sample;

pub use io::{
    load_grammar, load_lowrank, read_grammar, read_lowrank, save_grammar, save_lowrank,
    write_grammar, write_lowrank, GRAMMAR_MAGIC, GRAMMAR_VERSION, LOWRANK_MAGIC,
};
pub use lowrank::{lowrank_to_simple, random_lowrank, LowRankGrammar};
pub use sample::{sample_tree, TreeSampler, DEFAULT_MAX_NODES, DEFAULT_SAMPLE_RETRIES};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::logspace::{logsumexp, NEG_INF};
use crate::{Error, Result};

pub const DEFAULT_CONCENTRATION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrammarDims {
    pub n_nt: usize,
    pub n_pt: usize,
    pub vocab_size: usize,
}

impl GrammarDims {
    pub fn new(n_nt: usize, n_pt: usize, vocab_size: usize) -> Result<Self> {
        if n_nt == 0 || n_pt == 0 || vocab_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "grammar dimensions must be positive, got n_nt={n_nt} n_pt={n_pt} vocab_size={vocab_size}"
            )));
        }
        Ok(GrammarDims {
            n_nt,
            n_pt,
            vocab_size,
        })
    }

    #[inline]
    pub fn n_sym(&self) -> usize {
        self.n_nt + self.n_pt
    }

    #[inline]
    pub fn is_preterminal(&self, symbol: usize) -> bool {
        symbol >= self.n_nt && symbol < self.n_sym()
    }
}

/// A simple PCFG with all rule probabilities stored as natural logs.
///
/// `log_left[[a, b]]` is `log p(b <- a)`, `log_right[[a, c]]` is
/// `log p(a -> c)`. When `tied` is set the two tables hold identical values.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleGrammar {
    pub dims: GrammarDims,
    pub log_root: Array1<f64>,
    pub log_left: Array2<f64>,
    pub log_right: Array2<f64>,
    pub log_emit: Array2<f64>,
    pub tied: bool,
}

impl SimpleGrammar {
    /// Builds a grammar after checking table shapes. Normalization is not
    /// checked here; see [`validate_grammar`].
    pub fn from_tables(
        log_root: Array1<f64>,
        log_left: Array2<f64>,
        log_right: Array2<f64>,
        log_emit: Array2<f64>,
        tied: bool,
    ) -> Result<Self> {
        let dims = GrammarDims::new(log_root.len(), log_emit.nrows(), log_emit.ncols())?;
        let g = SimpleGrammar {
            dims,
            log_root,
            log_left,
            log_right,
            log_emit,
            tied,
        };
        g.check_structure()?;
        Ok(g)
    }

    /// Tied (left = right) copy of this grammar using the left table.
    pub fn into_tied(mut self) -> Self {
        self.log_right = self.log_left.clone();
        self.tied = true;
        self
    }

    pub fn check_structure(&self) -> Result<()> {
        let d = &self.dims;
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Structural(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )))
            }
        };
        if self.log_root.len() != d.n_nt {
            return Err(Error::Structural(format!(
                "root has length {}, expected {}",
                self.log_root.len(),
                d.n_nt
            )));
        }
        expect("left", self.log_left.dim(), (d.n_nt, d.n_sym()))?;
        expect("right", self.log_right.dim(), (d.n_nt, d.n_sym()))?;
        expect("emit", self.log_emit.dim(), (d.n_pt, d.vocab_size))?;
        if self.tied {
            let same = self
                .log_left
                .iter()
                .zip(self.log_right.iter())
                .all(|(l, r)| l.to_bits() == r.to_bits());
            if !same {
                return Err(Error::Structural(
                    "grammar is flagged tied but left and right tables differ".into(),
                ));
            }
        }
        Ok(())
    }

    /// Probability-space copy of a log table.
    pub fn probs(table: &Array2<f64>) -> Array2<f64> {
        table.mapv(f64::exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Table {
    Root,
    Left,
    Right,
    Emit,
}

impl std::fmt::Display for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Table::Root => "root",
            Table::Left => "left",
            Table::Right => "right",
            Table::Emit => "emit",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowDeviation {
    pub table: Table,
    pub row: usize,
    /// `logsumexp(row)`, i.e. signed distance from a normalized row.
    pub deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub deviations: Vec<RowDeviation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.deviations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            return f.write_str("OK");
        }
        for d in &self.deviations {
            writeln!(f, "{} row {}: logsumexp = {:e}", d.table, d.row, d.deviation)?;
        }
        Ok(())
    }
}

fn check_row(
    report: &mut ValidationReport,
    table: Table,
    row: usize,
    values: ArrayView1<'_, f64>,
    tol: f64,
) {
    let lse = match values.as_slice() {
        Some(s) => logsumexp(s),
        None => logsumexp(&values.to_vec()),
    };
    let within = lse.abs() <= tol;
    if !within {
        report.deviations.push(RowDeviation {
            table,
            row,
            deviation: lse,
        });
    }
}

/// Lists every row whose log-sum-exp deviates from zero by more than `tol`.
pub fn validate_grammar(g: &SimpleGrammar, tol: f64) -> Result<ValidationReport> {
    g.check_structure()?;
    let mut report = ValidationReport::default();
    check_row(&mut report, Table::Root, 0, g.log_root.view(), tol);
    for (table, m) in [
        (Table::Left, &g.log_left),
        (Table::Right, &g.log_right),
        (Table::Emit, &g.log_emit),
    ] {
        for (r, row) in m.axis_iter(Axis(0)).enumerate() {
            check_row(&mut report, table, r, row, tol);
        }
    }
    Ok(report)
}

/// Draws one point from a symmetric Dirichlet via normalized Gamma variates,
/// returned in log space.
pub(crate) fn dirichlet_log_row<R: Rng>(rng: &mut R, len: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration checked by caller");
    loop {
        let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            let log_total = total.ln();
            return draws
                .iter()
                .map(|&x| if x > 0.0 { x.ln() - log_total } else { NEG_INF })
                .collect();
        }
    }
}

pub(crate) fn dirichlet_log_table<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    concentration: f64,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let draw = dirichlet_log_row(rng, cols, concentration);
        row.iter_mut().zip(draw).for_each(|(dst, v)| *dst = v);
    }
    out
}

pub(crate) fn check_concentration(concentration: f64) -> Result<()> {
    if concentration > 0.0 && concentration.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {concentration}"
        )))
    }
}

/// Random grammar whose rows are independent symmetric Dirichlet draws.
pub fn random_grammar(dims: GrammarDims, seed: u64, concentration: f64) -> Result<SimpleGrammar> {
    let dims = GrammarDims::new(dims.n_nt, dims.n_pt, dims.vocab_size)?;
    check_concentration(concentration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_root = Array1::from(dirichlet_log_row(&mut rng, dims.n_nt, concentration));
    let log_left = dirichlet_log_table(&mut rng, dims.n_nt, dims.n_sym(), concentration);
    let log_right = dirichlet_log_table(&mut rng, dims.n_nt, dims.n_sym(), concentration);
    let log_emit = dirichlet_log_table(&mut rng, dims.n_pt, dims.vocab_size, concentration);
    Ok(SimpleGrammar {
        dims,
        log_root,
        log_left,
        log_right,
        log_emit,
        tied: false,
    })
}

/// Expected number of nonterminal children spawned by each nonterminal:
/// `M[a, b] = p(b <- a) + p(a -> b)` restricted to nonterminal children.
/// The grammar generates finite trees on average iff the spectral radius of
/// `M` is below one.
pub fn offspring_matrix(g: &SimpleGrammar) -> Array2<f64> {
    let n = g.dims.n_nt;
    Array2::from_shape_fn((n, n), |(a, b)| {
        g.log_left[[a, b]].exp() + g.log_right[[a, b]].exp()
    })
}

/// Spectral radius of the offspring matrix by power iteration (the matrix is
/// nonnegative, so the dominant eigenvalue is real).
pub fn branching_factor(g: &SimpleGrammar) -> f64 {
    let m = offspring_matrix(g);
    let n = m.nrows();
    let mut v = Array1::from_elem(n, 1.0 / n as f64);
    let mut lambda = 0.0;
    for _ in 0..2000 {
        // Shifted iteration (M + I) converges for periodic matrices too.
        let next = m.dot(&v) + &v;
        let norm: f64 = next.iter().sum();
        if norm == 0.0 {
            return 0.0;
        }
        let next = next / norm;
        let change: f64 = (&next - &v).iter().map(|x| x.abs()).sum();
        v = next;
        lambda = norm - 1.0;
        if change < 1e-14 {
            break;
        }
    }
    lambda
}

/// Gradient of a (sum of) sentence log-likelihood(s) with respect to every
/// log-probability entry, treating entries as free (unnormalized) variables.
/// Entries are expected rule counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarGrad {
    pub root: Array1<f64>,
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    pub emit: Array2<f64>,
}

impl GrammarGrad {
    pub fn zeros(dims: GrammarDims) -> Self {
        GrammarGrad {
            root: Array1::zeros(dims.n_nt),
            left: Array2::zeros((dims.n_nt, dims.n_sym())),
            right: Array2::zeros((dims.n_nt, dims.n_sym())),
            emit: Array2::zeros((dims.n_pt, dims.vocab_size)),
        }
    }

    pub fn dims(&self) -> GrammarDims {
        GrammarDims {
            n_nt: self.root.len(),
            n_pt: self.emit.nrows(),
            vocab_size: self.emit.ncols(),
        }
    }

    pub fn add_assign(&mut self, other: &GrammarGrad) {
        self.root += &other.root;
        self.left += &other.left;
        self.right += &other.right;
        self.emit += &other.emit;
    }

    pub fn scale(&mut self, factor: f64) {
        self.root *= factor;
        self.left *= factor;
        self.right *= factor;
        self.emit *= factor;
    }

    /// Gradient after composing with row renormalization
    /// (`g - p * sum(g)` per row): the derivative along directions that keep
    /// every row a distribution.
    pub fn projected(&self, g: &SimpleGrammar) -> GrammarGrad {
        fn project_row(grad: &mut [f64], log_p: &[f64]) {
            let total: f64 = grad.iter().sum();
            for (x, lp) in grad.iter_mut().zip(log_p) {
                *x -= lp.exp() * total;
            }
        }
        fn project_table(grad: &mut Array2<f64>, log_p: &Array2<f64>) {
            for (mut row, lp) in grad.axis_iter_mut(Axis(0)).zip(log_p.axis_iter(Axis(0))) {
                project_row(
                    row.as_slice_mut().expect("standard layout"),
                    lp.as_slice().expect("standard layout"),
                );
            }
        }
        let mut out = self.clone();
        project_row(
            out.root.as_slice_mut().expect("standard layout"),
            g.log_root.as_slice().expect("standard layout"),
        );
        project_table(&mut out.left, &g.log_left);
        project_table(&mut out.right, &g.log_right);
        project_table(&mut out.emit, &g.log_emit);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.root.iter().all(|x| x.is_finite())
            && self.left.iter().all(|x| x.is_finite())
            && self.right.iter().all(|x| x.is_finite())
            && self.emit.iter().all(|x| x.is_finite())
    }
}

/// The single-nonterminal, single-preterminal, single-word grammar where
/// every binary choice is a fair coin between `A` and `T`.
pub fn coin_grammar() -> SimpleGrammar {
    let half = 0.5f64.ln();
    SimpleGrammar::from_tables(
        Array1::from(vec![0.0]),
        Array2::from_elem((1, 2), half),
        Array2::from_elem((1, 2), half),
        Array2::from_elem((1, 1), 0.0),
        false,
    )
    .expect("static shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_reject_zero() {
        assert!(GrammarDims::new(0, 1, 1).is_err());
        assert!(GrammarDims::new(1, 0, 1).is_err());
        assert!(GrammarDims::new(1, 1, 0).is_err());
        assert_eq!(GrammarDims::new(3, 2, 5).unwrap().n_sym(), 5);
    }

    #[test]
    fn smallest_random_grammar_is_forced_and_valid() {
        let g = random_grammar(GrammarDims::new(1, 1, 1).unwrap(), 99, 1.0).unwrap();
        assert_eq!(g.log_root[0], 0.0);
        assert_eq!(g.log_emit[[0, 0]], 0.0);
        let l: f64 = g.log_left.iter().map(|x| x.exp()).sum();
        assert!((l - 1.0).abs() < 1e-12);
        assert!(validate_grammar(&g, 1e-9).unwrap().is_valid());
    }

    #[test]
    fn random_grammar_is_deterministic_and_normalized() {
        let dims = GrammarDims::new(3, 3, 4).unwrap();
        let a = random_grammar(dims, 7, 1.0).unwrap();
        let b = random_grammar(dims, 7, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(validate_grammar(&a, 1e-9).unwrap().is_valid());
        let c = random_grammar(dims, 8, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_grammar_rejects_bad_concentration() {
        let dims = GrammarDims::new(2, 2, 2).unwrap();
        assert!(random_grammar(dims, 0, 0.0).is_err());
        assert!(random_grammar(dims, 0, -1.0).is_err());
    }

    #[test]
    fn scaled_emission_row_is_reported_with_ln2() {
        let mut g = random_grammar(GrammarDims::new(2, 3, 4).unwrap(), 1, 1.0).unwrap();
        g.log_emit.row_mut(1).mapv_inplace(|x| x + 2f64.ln());
        let report = validate_grammar(&g, 1e-9).unwrap();
        assert_eq!(report.deviations.len(), 1);
        let d = &report.deviations[0];
        assert_eq!((d.table, d.row), (Table::Emit, 1));
        assert!((d.deviation - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tied_flag_with_distinct_tables_is_structural_error() {
        let mut g = random_grammar(GrammarDims::new(2, 2, 2).unwrap(), 3, 1.0).unwrap();
        g.tied = true;
        assert!(matches!(
            validate_grammar(&g, 1e-9),
            Err(Error::Structural(_))
        ));
        let tied = g.clone().into_tied();
        assert!(validate_grammar(&tied, 1e-9).unwrap().is_valid());
    }

    #[test]
    fn shape_mismatch_is_structural_error() {
        let mut g = random_grammar(GrammarDims::new(2, 2, 2).unwrap(), 3, 1.0).unwrap();
        g.log_left = Array2::zeros((2, 3));
        assert!(matches!(
            validate_grammar(&g, 1e-9),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn coin_grammar_is_critical() {
        let g = coin_grammar();
        assert!(validate_grammar(&g, 1e-12).unwrap().is_valid());
        assert!((branching_factor(&g) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projected_gradient_rows_sum_to_zero() {
        let g = random_grammar(GrammarDims::new(2, 2, 3).unwrap(), 5, 1.0).unwrap();
        let mut grad = GrammarGrad::zeros(g.dims);
        grad.left.fill(1.0);
        grad.root[0] = 2.0;
        let p = grad.projected(&g);
        for row in p.left.axis_iter(Axis(0)) {
            assert!(row.sum().abs() < 1e-12);
        }
        assert!(p.root.sum().abs() < 1e-12);
    }
}
