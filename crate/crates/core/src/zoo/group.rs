//! Finite groups given by multiplication tables.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group on `{0, …, n−1}` with `mul(a, b) = table[a][b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroup {
    table: Vec<Vec<usize>>,
    identity: usize,
    inverse: Vec<usize>,
}

impl FiniteGroup {
    /// Validates closure, associativity, identity and inverses.
    pub fn from_table(table: Vec<Vec<usize>>) -> Result<Self> {
        let n = table.len();
        let bad = |m: String| Err(Error::Structure(format!("group table: {m}")));
        if n == 0 {
            return bad("empty".into());
        }
        for (a, row) in table.iter().enumerate() {
            if row.len() != n {
                return bad(format!("row {a} has {} entries, expected {n}", row.len()));
            }
            if let Some(&x) = row.iter().find(|&&x| x >= n) {
                return bad(format!("closure fails: {a}·_ = {x} is not an element"));
            }
        }
        let identity = match (0..n).find(|&e| (0..n).all(|a| table[e][a] == a && table[a][e] == a)) {
            Some(e) => e,
            None => return bad("no identity element".into()),
        };
        let mut inverse = vec![0; n];
        for a in 0..n {
            match (0..n).find(|&b| table[a][b] == identity && table[b][a] == identity) {
                Some(b) => inverse[a] = b,
                None => return bad(format!("element {a} has no inverse")),
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table[table[a][b]][c] != table[a][table[b][c]] {
                        return bad(format!("associativity fails at ({a}, {b}, {c})"));
                    }
                }
            }
        }
        Ok(Self { table, identity, inverse })
    }

    /// `Z/n`, element `k` is the residue `k`.
    pub fn cyclic(n: usize) -> Self {
        let table = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        Self::from_table(table).expect("cyclic table is a group")
    }

    /// Dihedral group of order `2m`; element `i + m·j` is `r^i s^j`.
    pub fn dihedral(m: usize) -> Self {
        let n = 2 * m;
        let table = (0..n)
            .map(|x| {
                let (i, j) = (x % m, x / m);
                (0..n)
                    .map(|y| {
                        let (k, l) = (y % m, y / m);
                        let rot = if j == 0 { (i + k) % m } else { (i + m - k) % m };
                        rot + m * ((j + l) % 2)
                    })
                    .collect()
            })
            .collect();
        Self::from_table(table).expect("dihedral table is a group")
    }

    pub fn order(&self) -> usize {
        self.table.len()
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.table
    }

    /// Longest shortest word over `gens` needed to reach any element, or
    /// `None` if `gens` does not generate the group.
    pub fn word_radius(&self, gens: &[usize]) -> Option<usize> {
        let n = self.order();
        let mut dist = vec![usize::MAX; n];
        dist[self.identity] = 0;
        let mut queue = VecDeque::from([self.identity]);
        while let Some(g) = queue.pop_front() {
            for &s in gens {
                let h = self.mul(s, g);
                if dist[h] == usize::MAX {
                    dist[h] = dist[g] + 1;
                    queue.push_back(h);
                }
            }
        }
        dist.iter().all(|&x| x != usize::MAX).then(|| dist.into_iter().max().unwrap_or(0))
    }
}

/// Config form of a group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroupSpec {
    Cyclic { n: usize },
    Dihedral { m: usize },
    Table { table: Vec<Vec<usize>> },
}

impl GroupSpec {
    pub fn build(&self) -> Result<FiniteGroup> {
        match self {
            GroupSpec::Cyclic { n } if *n >= 1 => Ok(FiniteGroup::cyclic(*n)),
            GroupSpec::Dihedral { m } if *m >= 1 => Ok(FiniteGroup::dihedral(*m)),
            GroupSpec::Table { table } => FiniteGroup::from_table(table.clone()),
            _ => Err(Error::Structure("group order must be positive".into())),
        }
    }
}
