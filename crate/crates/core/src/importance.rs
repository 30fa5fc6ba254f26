//! Per-sample task weighting.
//!
//! Each task's buffered states pass through a shared transformer; a scoring
//! head turns every embedding into a scalar, and a softmax over the
//! (buffer row, task) score grid yields the weight matrix that balances the
//! tasks inside the joint losses.

use ndarray::Array2;
use rand::Rng;

use crate::config::ImportanceAxis;
use crate::error::{Error, Result};
use crate::nn::{
    Activation, DenseParams, DenseVars, GtrxlParams, GtrxlVars, Tape, Var,
};

/// Softmax-normalized importance weights, one row per buffer slot and one
/// column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Array2<f64>,
    axis: ImportanceAxis,
}

impl WeightMatrix {
    pub fn new(values: Array2<f64>, axis: ImportanceAxis) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Domain("weight matrix must be non-empty".into()));
        }
        if values.iter().any(|&w| !(w > 0.0 && w < 1.0 + 1e-12)) {
            return Err(Error::Numeric(format!(
                "weight matrix entries must lie in (0, 1]; got {:?}",
                values.iter().cloned().fold(f64::NAN, f64::min)
            )));
        }
        let sums: Vec<f64> = match axis {
            ImportanceAxis::Tasks => values.rows().into_iter().map(|r| r.sum()).collect(),
            ImportanceAxis::Rows => values.columns().into_iter().map(|c| c.sum()).collect(),
        };
        if sums.iter().any(|s| (s - 1.0).abs() > 1e-6) {
            return Err(Error::Numeric(format!(
                "weight matrix normalization off by more than 1e-6: sums {sums:?}"
            )));
        }
        Ok(Self { values, axis })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn axis(&self) -> ImportanceAxis {
        self.axis
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn tasks(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, task: usize) -> f64 {
        self.values[(row, task)]
    }
}

/// Transformer plus scoring head shared by every task.
#[derive(Debug, Clone)]
pub struct ImportanceParams {
    pub gtrxl: GtrxlParams,
    pub score: DenseParams,
}

pub struct ImportanceVars {
    pub gtrxl: GtrxlVars,
    pub score: DenseVars,
}

impl ImportanceVars {
    /// Transformer variables followed by scoring-head variables; matches the
    /// flat parameter layout.
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.gtrxl.all();
        out.extend(self.score.all());
        out
    }
}

impl ImportanceParams {
    pub fn new(
        state_dim: usize,
        embed_dim: usize,
        layers: usize,
        heads: usize,
        score_hidden: usize,
        max_rows: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            gtrxl: GtrxlParams::new(state_dim, embed_dim, layers, heads, max_rows, rng)?,
            score: DenseParams::new(
                &[embed_dim, score_hidden, 1],
                &[Activation::Sigmoid, Activation::Identity],
                rng,
            )?,
        })
    }

    pub fn build(&self, tape: &mut Tape) -> ImportanceVars {
        ImportanceVars { gtrxl: self.gtrxl.build(tape), score: self.score.build(tape) }
    }

    /// Embeddings for one task's buffered states (rows).
    pub fn embeddings_graph(&self, tape: &mut Tape, vars: &ImportanceVars, states: Var) -> Result<Var> {
        self.gtrxl.apply(tape, &vars.gtrxl, states)
    }

    /// Value-only embeddings.
    pub fn task_embeddings(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        self.gtrxl.forward(states)
    }

    /// Weight-matrix graph over one state batch per task. Every batch must
    /// have the same number of rows (the buffer size).
    pub fn weight_matrix_graph(
        &self,
        tape: &mut Tape,
        vars: &ImportanceVars,
        task_states: &[Var],
        axis: ImportanceAxis,
    ) -> Result<Var> {
        if task_states.is_empty() {
            return Err(Error::Domain("weight matrix needs at least one task".into()));
        }
        let rows = tape.value(task_states[0]).nrows();
        for &s in task_states {
            if tape.value(s).nrows() != rows {
                return Err(Error::Domain("task batches differ in row count".into()));
            }
        }
        let mut scores: Option<Var> = None;
        for &s in task_states {
            let y = self.embeddings_graph(tape, vars, s)?;
            let col = self.score.apply(tape, &vars.score, y)?;
            scores = Some(match scores {
                None => col,
                Some(prev) => tape.concat_cols(prev, col)?,
            });
        }
        let scores = scores.expect("at least one task");
        Ok(match axis {
            ImportanceAxis::Tasks => tape.softmax_rows(scores),
            ImportanceAxis::Rows => {
                let t = tape.transpose(scores);
                let sm = tape.softmax_rows(t);
                tape.transpose(sm)
            }
        })
    }

    /// Value-level weight matrix for one state batch per task.
    pub fn weight_matrix(
        &self,
        task_states: &[Array2<f64>],
        axis: ImportanceAxis,
    ) -> Result<WeightMatrix> {
        let mut tape = Tape::new();
        let vars = self.build(&mut tape);
        let leaves: Vec<Var> = task_states.iter().map(|s| tape.leaf(s.clone())).collect();
        let m = self.weight_matrix_graph(&mut tape, &vars, &leaves, axis)?;
        WeightMatrix::new(tape.value(m).clone(), axis)
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.gtrxl.flat();
        out.extend(self.score.flat());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let split = self.gtrxl.flat_len();
        if flat.len() != split + self.score.flat_len() {
            return Err(Error::Domain(format!(
                "flat parameter length {} does not match expected {}",
                flat.len(),
                split + self.score.flat_len()
            )));
        }
        self.gtrxl.set_flat(&flat[..split])?;
        self.score.set_flat(&flat[split..])
    }

    pub fn flat_len(&self) -> usize {
        self.gtrxl.flat_len() + self.score.flat_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ImportanceParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImportanceParams::new(5, 8, 1, 2, 4, 8, &mut rng).unwrap()
    }

    fn batch(seed: u64, rows: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        Array2::from_shape_fn((rows, 5), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identical_task_batches_give_uniform_rows() {
        let p = params(1);
        let s = batch(10, 4);
        let m = p.weight_matrix(&[s.clone(), s], ImportanceAxis::Tasks).unwrap();
        for i in 0..4 {
            assert_eq!(m.get(i, 0), 0.5);
            assert_eq!(m.get(i, 1), 0.5);
        }
    }

    #[test]
    fn rows_normalize_across_tasks_by_default() {
        let p = params(2);
        let m = p
            .weight_matrix(&[batch(11, 6), batch(12, 6)], ImportanceAxis::Tasks)
            .unwrap();
        assert_eq!(m.rows(), 6);
        assert_eq!(m.tasks(), 2);
        for i in 0..6 {
            let sum = m.get(i, 0) + m.get(i, 1);
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
            assert!(m.get(i, 0) > 0.0 && m.get(i, 0) < 1.0);
        }
    }

    #[test]
    fn rows_axis_normalizes_each_task_column() {
        let p = params(3);
        let m = p
            .weight_matrix(&[batch(13, 5), batch(14, 5)], ImportanceAxis::Rows)
            .unwrap();
        for t in 0..2 {
            let sum: f64 = (0..5).map(|i| m.get(i, t)).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_task_collapses_to_ones() {
        let p = params(4);
        let m = p.weight_matrix(&[batch(15, 3)], ImportanceAxis::Tasks).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, 0), 1.0);
        }
    }

    #[test]
    fn single_row_buffer_works() {
        let p = params(5);
        let m = p
            .weight_matrix(&[batch(16, 1), batch(17, 1)], ImportanceAxis::Tasks)
            .unwrap();
        assert_eq!(m.rows(), 1);
        assert_abs_diff_eq!(m.get(0, 0) + m.get(0, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn task_permutation_permutes_columns() {
        let p = params(6);
        let (a, b) = (batch(18, 4), batch(19, 4));
        let m_ab = p.weight_matrix(&[a.clone(), b.clone()], ImportanceAxis::Tasks).unwrap();
        let m_ba = p.weight_matrix(&[b, a], ImportanceAxis::Tasks).unwrap();
        for i in 0..4 {
            assert_eq!(m_ab.get(i, 0), m_ba.get(i, 1));
            assert_eq!(m_ab.get(i, 1), m_ba.get(i, 0));
        }
    }

    #[test]
    fn shared_parameters_give_identical_embeddings() {
        let p = params(7);
        let s = batch(20, 4);
        let y1 = p.task_embeddings(&s).unwrap();
        let y2 = p.task_embeddings(&s).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(y1.dim(), (4, 8));
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let bad = Array2::from_shape_vec((2, 2), vec![0.9, 0.2, 0.5, 0.5]).unwrap();
        assert!(WeightMatrix::new(bad, ImportanceAxis::Tasks).is_err());
        let zero = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
        assert!(WeightMatrix::new(zero, ImportanceAxis::Tasks).is_err());
        let ok = Array2::from_shape_vec((1, 2), vec![0.4, 0.6]).unwrap();
        assert!(WeightMatrix::new(ok, ImportanceAxis::Tasks).is_ok());
    }

    #[test]
    fn weight_matrix_gradients_match_central_differences() {
        let p = params(8);
        let (sa, sb) = (batch(21, 3), batch(22, 3));
        let x0 = p.flat();

        let eval = |flat: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let mut q = p.clone();
            q.set_flat(flat)?;
            let mut tape = Tape::new();
            let vars = q.build(&mut tape);
            let la = tape.leaf(sa.clone());
            let lb = tape.leaf(sb.clone());
            let m = q.weight_matrix_graph(&mut tape, &vars, &[la, lb], ImportanceAxis::Tasks)?;
            // squared weights give every entry a nonzero pull on the loss
            let m2 = tape.mul(m, m)?;
            let loss = tape.sum_all(m2);
            let grads = tape.backward(loss)?;
            Ok((tape.scalar(loss), grads.flat(&vars.all())))
        };

        let (_, analytic) = eval(&x0).unwrap();
        let mut f = |flat: &[f64]| eval(flat).map(|(l, _)| l);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let report = grad_check(&mut f, &x0, &analytic, 60, 1e-5, 1e-3, &mut rng).unwrap();
        assert!(
            report.pass,
            "max rel err {} at coordinate {}",
            report.max_rel_err, report.worst_coordinate
        );
    }
}
