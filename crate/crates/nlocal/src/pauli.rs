//! Pauli strings and product X-basis states on a register of n spins.
//!
//! Spin 0 is the leftmost tensor factor, i.e. the most significant bit of a
//! computational-basis index. Only X- and Z-type strings occur in the model
//! family, so every realized operator is a real matrix in the computational
//! basis; complex phases never enter.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Largest supported register; dense realizations stay at most 64 x 64.
pub const MAX_SPINS: usize = 6;

/// Which single-spin Pauli appears on every site of a string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Z,
}

/// A non-empty set of spin indices, kept sorted and duplicate-free.
///
/// Subsets order by size first and lexicographically within a size, which is
/// the canonical order used everywhere a parameter list must be traversed
/// deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn new<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        let len_before = v.len();
        v.dedup();
        if v.is_empty() {
            return Err(Error::InvalidSubset("subset must be non-empty".into()));
        }
        if v.len() != len_before {
            return Err(Error::InvalidSubset(format!(
                "duplicate spin indices in {v:?}"
            )));
        }
        Ok(Subset(v))
    }

    /// The full set {0, .., n-1}.
    pub fn full(n: usize) -> Self {
        Subset((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn contains(&self, spin: usize) -> bool {
        self.0.binary_search(&spin).is_ok()
    }

    pub fn max_index(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    /// Bitmask with bit i set when spin i belongs to the subset.
    pub fn bitmask(&self) -> u32 {
        self.0.iter().fold(0u32, |m, &i| m | (1 << i))
    }
}

impl PartialOrd for Subset {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Subset {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(de)?;
        Subset::new(v).map_err(D::Error::custom)
    }
}

/// Advance `comb` to the next lexicographic k-combination of {0, .., n-1};
/// returns false when `comb` was already the last one.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] != i + n - k {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All subsets of {0, .., n-1} with at least `min_size` elements, ordered by
/// size and then lexicographically.
pub fn enumerate_subsets(n: usize, min_size: usize) -> Vec<Subset> {
    assert!((1..=MAX_SPINS).contains(&n), "spin count {n} out of range");
    assert!(min_size >= 1, "subsets are non-empty; min_size must be >= 1");
    let mut out = Vec::new();
    for size in min_size..=n {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            out.push(Subset(comb.clone()));
            if !next_combination(&mut comb, n) {
                break;
            }
        }
    }
    out
}

/// A tensor product of one Pauli (X or Z) on every spin of a subset and the
/// identity elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    axis: Axis,
    subset: Subset,
    n: usize,
}

impl PauliString {
    pub fn new(axis: Axis, subset: Subset, n: usize) -> Result<Self> {
        if !(1..=MAX_SPINS).contains(&n) {
            return Err(Error::InvalidSubset(format!(
                "spin count {n} outside 1..={MAX_SPINS}"
            )));
        }
        if subset.max_index() >= n {
            return Err(Error::InvalidSubset(format!(
                "subset {subset} does not fit in {n} spins"
            )));
        }
        Ok(PauliString { axis, subset, n })
    }

    /// The n-local string Z on every spin.
    pub fn z_full(n: usize) -> Result<Self> {
        PauliString::new(Axis::Z, Subset::full(n), n)
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn subset(&self) -> &Subset {
        &self.subset
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> usize {
        self.subset.len()
    }

    /// Dense realization in the computational basis.
    ///
    /// The result is real symmetric with entries in {-1, 0, +1} and exactly
    /// one non-zero entry per row. A complex-typed view is never needed for
    /// X/Z strings; `dynamics` handles complex density matrices as real and
    /// imaginary parts instead.
    pub fn realize(&self) -> DMatrix<f64> {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let eye = DMatrix::<f64>::identity(2, 2);
        let mut acc = DMatrix::<f64>::identity(1, 1);
        for s in 0..self.n {
            let factor = if self.subset.contains(s) {
                match self.axis {
                    Axis::X => &x,
                    Axis::Z => &z,
                }
            } else {
                &eye
            };
            acc = acc.kronecker(factor);
        }
        acc
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let letter = match self.axis {
            Axis::X => "X",
            Axis::Z => "Z",
        };
        write!(f, "{letter}{}", self.subset)
    }
}

/// Sign of a single-spin X eigenstate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum XSign {
    Plus,
    Minus,
}

impl XSign {
    pub fn value(self) -> f64 {
        match self {
            XSign::Plus => 1.0,
            XSign::Minus => -1.0,
        }
    }
}

/// A product state |s_0> ⊗ ... ⊗ |s_{n-1}> of single-spin X eigenstates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProductXState {
    signs: Vec<XSign>,
}

impl ProductXState {
    pub fn new(signs: Vec<XSign>) -> Result<Self> {
        if signs.is_empty() || signs.len() > MAX_SPINS {
            return Err(Error::DimensionMismatch(format!(
                "product state needs 1..={MAX_SPINS} spins, got {}",
                signs.len()
            )));
        }
        Ok(ProductXState { signs })
    }

    /// |sign>^⊗n.
    pub fn uniform(sign: XSign, n: usize) -> Result<Self> {
        ProductXState::new(vec![sign; n])
    }

    pub fn n(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[XSign] {
        &self.signs
    }

    /// Bitmask with bit i set when spin i is |->.
    pub fn minus_bitmask(&self) -> u32 {
        self.signs
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, s)| match s {
                XSign::Minus => m | (1 << i),
                XSign::Plus => m,
            })
    }

    /// Dense unit vector in the computational basis; real by construction.
    pub fn realize(&self) -> DVector<f64> {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut acc = DVector::<f64>::from_element(1, 1.0);
        for s in &self.signs {
            let factor = DVector::from_column_slice(&[inv_sqrt2, s.value() * inv_sqrt2]);
            acc = acc.kronecker(&factor);
        }
        acc
    }
}

/// <bra| op |ket> between product X states.
///
/// The realization is real, so the imaginary part of the bracket is zero by
/// construction and the value is returned as a plain real scalar.
pub fn matrix_element(bra: &ProductXState, op: &PauliString, ket: &ProductXState) -> Result<f64> {
    if bra.n() != op.n() || ket.n() != op.n() {
        return Err(Error::DimensionMismatch(format!(
            "bra has {} spins, op has {}, ket has {}",
            bra.n(),
            op.n(),
            ket.n()
        )));
    }
    let b = bra.realize();
    let k = ket.realize();
    Ok((b.transpose() * op.realize() * k)[(0, 0)])
}
