use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest taxon count representable by a [`Clade`].
pub const MAX_TAXA: usize = 128;

/// A nonempty set of taxa, stored as a bitset (bit `i` is taxon `i`).
///
/// Clades are totally ordered lexicographically on their indicator vectors
/// read from taxon 0 upward: of two clades, the one holding the smallest
/// taxon not shared by both is the larger.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Clade(pub u128);

impl Clade {
    pub const EMPTY: Clade = Clade(0);

    pub fn singleton(taxon: usize) -> Clade {
        debug_assert!(taxon < MAX_TAXA);
        Clade(1u128 << taxon)
    }

    pub fn full(n_taxa: usize) -> Clade {
        if n_taxa >= MAX_TAXA {
            Clade(u128::MAX)
        } else {
            Clade((1u128 << n_taxa) - 1)
        }
    }

    pub fn bits(self) -> u128 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, taxon: usize) -> bool {
        taxon < MAX_TAXA && (self.0 >> taxon) & 1 == 1
    }

    pub fn union(self, other: Clade) -> Clade {
        Clade(self.0 | other.0)
    }

    pub fn intersection(self, other: Clade) -> Clade {
        Clade(self.0 & other.0)
    }

    pub fn is_disjoint(self, other: Clade) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset_of(self, other: Clade) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement within the first `n_taxa` taxa.
    pub fn complement(self, n_taxa: usize) -> Clade {
        Clade(!self.0 & Clade::full(n_taxa).0)
    }

    pub fn min_taxon(self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0.trailing_zeros() as usize)
        }
    }

    pub fn taxa(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let t = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(t)
            }
        })
    }

    pub fn to_hex(self) -> String {
        format!("{:x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Clade> {
        u128::from_str_radix(s, 16).ok().map(Clade)
    }
}

impl Ord for Clade {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversing bit order turns taxon 0 into the most significant bit.
        self.0.reverse_bits().cmp(&other.0.reverse_bits())
    }
}

impl PartialOrd for Clade {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Clade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, t) in self.taxa().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "}}")
    }
}

/// An ordered pair of disjoint clades `(big, small)` with `big ≻ small`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subsplit {
    pub big: Clade,
    pub small: Clade,
}

impl Subsplit {
    /// Builds the subsplit of two disjoint nonempty clades, ordering them.
    pub fn new(a: Clade, b: Clade) -> Subsplit {
        debug_assert!(a.is_disjoint(b) && !a.is_empty() && !b.is_empty());
        if a > b {
            Subsplit { big: a, small: b }
        } else {
            Subsplit { big: b, small: a }
        }
    }

    pub fn clade(self) -> Clade {
        self.big.union(self.small)
    }

    pub fn parts(self) -> [Clade; 2] {
        [self.big, self.small]
    }
}

impl fmt::Debug for Subsplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}|{:?}", self.big, self.small)
    }
}

/// Conditioning context of a non-root subsplit: the clade being split and
/// its sister under the parent subsplit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ParentContext {
    pub clade: Clade,
    pub sister: Clade,
}
