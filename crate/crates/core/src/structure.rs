//! Structural sparsity of the state Jacobian.
//!
//! An interconnection mask `P` marks which entries `∂f_j/∂x_l` can be nonzero.
//! Masked evaluation computes only those `n_nz` entries and the adjoint
//! recursion multiplies through them in `O(n_nz)` per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{numeric_jacobian, DynamicalModel, Matrix, RowVector, Vector, DEFAULT_FD_STEP};

/// Magnitude above which a probed Jacobian entry counts as structurally nonzero.
pub const MASK_THRESHOLD: f64 = 1e-10;
/// Number of random probes used by [`infer_mask`].
pub const MASK_PROBES: usize = 20;

/// Binary interconnection matrices for state (`P`, `n_x × n_x`) and input
/// (`Q`, `n_x × n_u`) dependencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskJson", into = "MaskJson")]
pub struct SparsityMask {
    state: Vec<Vec<bool>>,
    input: Vec<Vec<bool>>,
    entries: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    #[serde(rename = "P")]
    p: Vec<Vec<u8>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<u8>>,
}

impl TryFrom<MaskJson> for SparsityMask {
    type Error = Error;

    fn try_from(raw: MaskJson) -> Result<Self> {
        let to_bool = |rows: Vec<Vec<u8>>| -> Result<Vec<Vec<bool>>> {
            rows.into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|v| match v {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(Error::Parse(format!("mask entry must be 0 or 1, got {other}"))),
                        })
                        .collect()
                })
                .collect()
        };
        SparsityMask::new(to_bool(raw.p)?, to_bool(raw.q)?)
    }
}

impl From<SparsityMask> for MaskJson {
    fn from(mask: SparsityMask) -> Self {
        let to_u8 = |rows: &[Vec<bool>]| rows.iter().map(|r| r.iter().map(|&b| b as u8).collect()).collect();
        MaskJson {
            p: to_u8(&mask.state),
            q: to_u8(&mask.input),
        }
    }
}

impl SparsityMask {
    pub fn new(state: Vec<Vec<bool>>, input: Vec<Vec<bool>>) -> Result<Self> {
        let n_x = state.len();
        if n_x == 0 {
            return Err(Error::InvalidArgument("empty state mask".into()));
        }
        for row in &state {
            check_len("state mask row", n_x, row.len())?;
        }
        check_len("input mask rows", n_x, input.len())?;
        if let Some(first) = input.first() {
            for row in &input {
                check_len("input mask row", first.len(), row.len())?;
            }
        }
        let entries = state
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, &b)| b).map(move |(j, _)| (i, j)))
            .collect();
        Ok(Self {
            state,
            input,
            entries,
        })
    }

    /// All-ones mask.
    pub fn dense(n_x: usize, n_u: usize) -> Self {
        Self::new(vec![vec![true; n_x]; n_x], vec![vec![true; n_u]; n_x]).expect("dense mask")
    }

    pub fn n_x(&self) -> usize {
        self.state.len()
    }

    pub fn n_u(&self) -> usize {
        self.input.first().map_or(0, |r| r.len())
    }

    /// Number of ones in `P`.
    pub fn n_nz(&self) -> usize {
        self.entries.len()
    }

    pub fn state_entry(&self, row: usize, col: usize) -> bool {
        self.state[row][col]
    }

    pub fn input_entry(&self, row: usize, col: usize) -> bool {
        self.input[row][col]
    }

    /// Coordinates of the ones in `P`, ordered by row.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }
}

/// Coordinate-list matrix ordered by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, _) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// Evaluates `∂f/∂x` only at the entries where the mask is set.
pub fn masked_jac_f_x<M: DynamicalModel + ?Sized>(
    model: &M,
    x: &Vector,
    u: &Vector,
    theta: &Vector,
    mask: &SparsityMask,
) -> Result<SparseMatrix> {
    let n_x = model.dims().n_x;
    check_len("mask", n_x, mask.n_x())?;
    let values = model.jac_f_x_entries(x, u, theta, mask.entries())?;
    check_len("masked Jacobian entries", mask.n_nz(), values.len())?;
    let entries = mask
        .entries()
        .iter()
        .zip(values)
        .map(|(&(i, j), v)| (i, j, v))
        .collect();
    Ok(SparseMatrix {
        rows: n_x,
        cols: n_x,
        entries,
    })
}

/// Checks that every entry the mask declares zero is below [`MASK_THRESHOLD`]
/// in the dense Jacobian at the given point.
pub fn validate_mask<M: DynamicalModel + ?Sized>(
    model: &M,
    x: &Vector,
    u: &Vector,
    theta: &Vector,
    mask: &SparsityMask,
) -> Result<()> {
    let dense = model.jac_f_x(x, u, theta)?;
    check_len("mask", dense.nrows(), mask.n_x())?;
    for i in 0..dense.nrows() {
        for j in 0..dense.ncols() {
            if !mask.state_entry(i, j) && dense[(i, j)].abs() > MASK_THRESHOLD {
                return Err(Error::MaskViolation {
                    row: i,
                    col: j,
                    value: dense[(i, j)],
                });
            }
        }
    }
    Ok(())
}

/// Row vector times sparse matrix, touching only stored entries.
pub fn sparse_chain_apply(adjoint: &RowVector, jac: &SparseMatrix) -> Result<RowVector> {
    check_len("adjoint row", jac.rows, adjoint.len())?;
    let mut out = RowVector::zeros(jac.cols);
    for &(i, j, v) in &jac.entries {
        out[j] += adjoint[i] * v;
    }
    Ok(out)
}

/// Infers a mask by probing the dense Jacobians at [`MASK_PROBES`] random
/// points around `(x, u, θ)`.
///
/// An entry is marked when its magnitude exceeds [`MASK_THRESHOLD`] at any
/// probe. A hand-written mask attached to a model takes precedence over
/// anything inferred here.
pub fn infer_mask<M: DynamicalModel + ?Sized>(
    model: &M,
    x: &Vector,
    u: &Vector,
    theta: &Vector,
    seed: u64,
) -> Result<SparsityMask> {
    let dims = model.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![vec![false; dims.n_x]; dims.n_x];
    let mut input = vec![vec![false; dims.n_u]; dims.n_x];
    let jitter = |v: &Vector, rng: &mut ChaCha8Rng| {
        v.map(|c| c + 0.5 * c.abs().max(1.0) * rng.random_range(-1.0..1.0))
    };
    for _ in 0..MASK_PROBES {
        let xp = jitter(x, &mut rng);
        let up = jitter(u, &mut rng);
        let jx = model.jac_f_x(&xp, &up, theta)?;
        let ju = numeric_jacobian(|p| model.step(&xp, p, theta), &up, DEFAULT_FD_STEP)?;
        for i in 0..dims.n_x {
            for j in 0..dims.n_x {
                state[i][j] |= jx[(i, j)].abs() > MASK_THRESHOLD;
            }
            for j in 0..dims.n_u {
                input[i][j] |= ju[(i, j)].abs() > MASK_THRESHOLD;
            }
        }
    }
    SparsityMask::new(state, input)
}
