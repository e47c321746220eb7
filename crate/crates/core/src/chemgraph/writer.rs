//! Canonical SMILES writer.
//!
//! Atoms are ranked by iterative neighborhood refinement over
//! (element, charge, aromatic, degree, bond-order multiset, bracket H, map). Remaining
//! ties are broken by trying each tied atom and keeping the lexicographically smallest
//! string, with a bounded number of complete labelings explored per component.

use std::cell::Cell;

use super::molecule::{implicit_hydrogens, Atom, BondOrder, Molecule};

/// Complete labelings explored per component before tie-breaking commits to the
/// first candidate.
const LEAF_BUDGET: usize = 96;

/// Writes a canonical SMILES string. Components are written independently and joined
/// with `.` in lexicographic order.
pub fn write_canonical_smiles(mol: &Molecule, include_maps: bool) -> String {
    let mut parts: Vec<String> =
        mol.components().iter().map(|comp| Canonicalizer::new(&mol.subgraph(comp), include_maps).run()).collect();
    parts.sort();
    parts.join(".")
}

/// Text of a single atom in SMILES form.
pub fn atom_text(atom: &Atom, bond_order_sum: i32, include_maps: bool) -> String {
    let map = atom.map_number.filter(|_| include_maps);
    let lower_ok = matches!(atom.element.symbol(), "B" | "C" | "N" | "O" | "P" | "S");
    let organic = atom.element.is_organic()
        && atom.formal_charge == 0
        && atom.explicit_h.is_none()
        && map.is_none()
        && (!atom.aromatic || lower_ok);
    let symbol = if atom.aromatic && atom.element.can_be_aromatic() {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    if organic {
        return symbol;
    }
    let mut s = String::with_capacity(8);
    s.push('[');
    s.push_str(&symbol);
    let h = atom.explicit_h.unwrap_or_else(|| implicit_hydrogens(atom, bond_order_sum).unwrap_or(0));
    match h {
        0 => {}
        1 => s.push('H'),
        n => s.push_str(&format!("H{n}")),
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        q if q > 0 => s.push_str(&format!("+{q}")),
        q => s.push_str(&format!("-{}", -q)),
    }
    if let Some(m) = map {
        s.push_str(&format!(":{m}"));
    }
    s.push(']');
    s
}

fn bond_symbol(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

struct Canonicalizer<'a> {
    mol: &'a Molecule,
    adj: Vec<Vec<(usize, BondOrder)>>,
    texts: Vec<String>,
    leaves: Cell<usize>,
}

impl<'a> Canonicalizer<'a> {
    fn new(mol: &'a Molecule, include_maps: bool) -> Self {
        let adj = mol.adjacency();
        let texts =
            (0..mol.atoms.len()).map(|i| atom_text(&mol.atoms[i], mol.bond_order_sum(i), include_maps)).collect();
        Canonicalizer { mol, adj, texts, leaves: Cell::new(0) }
    }

    fn run(&self) -> String {
        if self.mol.atoms.is_empty() {
            return String::new();
        }
        let initial = self.initial_ranks();
        self.search(initial)
    }

    fn initial_ranks(&self) -> Vec<usize> {
        let keys: Vec<_> = (0..self.mol.atoms.len())
            .map(|i| {
                let a = &self.mol.atoms[i];
                let mut orders: Vec<u8> = self.adj[i].iter().map(|&(_, o)| o.class()).collect();
                orders.sort_unstable();
                (a.element.index(), a.formal_charge, a.aromatic, self.adj[i].len(), orders, self.texts[i].clone())
            })
            .collect();
        dense_ranks(&keys)
    }

    fn refine(&self, mut ranks: Vec<usize>) -> Vec<usize> {
        let mut classes = count_classes(&ranks);
        loop {
            let keys: Vec<_> = (0..ranks.len())
                .map(|i| {
                    let mut nb: Vec<(usize, u8)> = self.adj[i].iter().map(|&(j, o)| (ranks[j], o.class())).collect();
                    nb.sort_unstable();
                    (ranks[i], nb)
                })
                .collect();
            let next = dense_ranks(&keys);
            let n = count_classes(&next);
            ranks = next;
            if n == classes {
                return ranks;
            }
            classes = n;
        }
    }

    fn search(&self, ranks: Vec<usize>) -> String {
        let ranks = self.refine(ranks);
        let n = ranks.len();
        if count_classes(&ranks) == n {
            self.leaves.set(self.leaves.get() + 1);
            return self.emit(&ranks);
        }
        let mut counts = vec![0usize; n];
        for &r in &ranks {
            counts[r] += 1;
        }
        let tied = (0..n).find(|&r| counts[r] > 1).expect("a tied class exists");
        let candidates: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied).collect();
        let mut best: Option<String> = None;
        for (k, &c) in candidates.iter().enumerate() {
            if k > 0 && self.leaves.get() >= LEAF_BUDGET {
                break;
            }
            let split: Vec<usize> =
                ranks.iter().enumerate().map(|(i, &r)| if r == tied && i != c { 2 * r + 1 } else { 2 * r }).collect();
            let s = self.search(dense_ranks(&split));
            if best.as_ref().is_none_or(|b| s < *b) {
                best = Some(s);
            }
        }
        best.expect("at least one candidate explored")
    }

    /// Writes the component with all ranks distinct.
    fn emit(&self, ranks: &[usize]) -> String {
        let n = ranks.len();
        let mut nbrs: Vec<Vec<(usize, BondOrder)>> = self.adj.clone();
        for list in &mut nbrs {
            list.sort_by_key(|&(j, _)| ranks[j]);
        }
        let start = (0..n).min_by_key(|&i| ranks[i]).unwrap();

        // First pass: spanning tree and ring-closure bonds.
        let mut order = vec![usize::MAX; n];
        let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
        let mut ring_bonds: Vec<(usize, usize, BondOrder)> = Vec::new();
        let mut counter = 0;
        self.dfs(start, usize::MAX, &nbrs, &mut order, &mut counter, &mut children, &mut ring_bonds);

        // Ring closures attached to each atom, sorted by the partner's visit order.
        let mut rings_at: Vec<Vec<(usize, usize, BondOrder)>> = vec![Vec::new(); n];
        for (idx, &(a, b, o)) in ring_bonds.iter().enumerate() {
            rings_at[a].push((idx, b, o));
            rings_at[b].push((idx, a, o));
        }
        for list in &mut rings_at {
            list.sort_by_key(|&(_, p, _)| order[p]);
        }

        let mut out = String::new();
        let mut labels: Vec<Option<usize>> = vec![None; ring_bonds.len()];
        let mut in_use: Vec<bool> = Vec::new();
        self.write_atom(start, &children, &rings_at, &order, &mut labels, &mut in_use, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &self,
        u: usize,
        parent: usize,
        nbrs: &[Vec<(usize, BondOrder)>],
        order: &mut [usize],
        counter: &mut usize,
        children: &mut [Vec<(usize, BondOrder)>],
        ring_bonds: &mut Vec<(usize, usize, BondOrder)>,
    ) {
        order[u] = *counter;
        *counter += 1;
        for &(v, o) in &nbrs[u] {
            if v == parent {
                continue;
            }
            if order[v] == usize::MAX {
                children[u].push((v, o));
                self.dfs(v, u, nbrs, order, counter, children, ring_bonds);
            } else if order[v] < order[u] && !children[v].iter().any(|&(c, _)| c == u) {
                ring_bonds.push((v, u, o));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn write_atom(
        &self,
        u: usize,
        children: &[Vec<(usize, BondOrder)>],
        rings_at: &[Vec<(usize, usize, BondOrder)>],
        order: &[usize],
        labels: &mut [Option<usize>],
        in_use: &mut Vec<bool>,
        out: &mut String,
    ) {
        out.push_str(&self.texts[u]);
        // closings first so their labels can be reused by openings at this atom
        for &(idx, partner, _) in &rings_at[u] {
            if order[partner] < order[u] {
                let label = labels[idx].expect("ring opened before closing");
                push_label(out, label);
                in_use[label] = false;
            }
        }
        for &(idx, partner, o) in &rings_at[u] {
            if order[partner] > order[u] {
                let label = match in_use.iter().position(|&b| !b) {
                    Some(l) => l,
                    None => {
                        in_use.push(false);
                        in_use.len() - 1
                    }
                };
                in_use[label] = true;
                labels[idx] = Some(label);
                out.push_str(bond_symbol(o));
                push_label(out, label);
            }
        }
        let kids = &children[u];
        for (k, &(v, o)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push_str(bond_symbol(o));
            self.write_atom(v, children, rings_at, order, labels, in_use, out);
            if !last {
                out.push(')');
            }
        }
    }
}

fn push_label(out: &mut String, label: usize) {
    let n = label + 1;
    if n < 10 {
        out.push(char::from(b'0' + n as u8));
    } else {
        out.push_str(&format!("%{n:02}"));
    }
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut r = 0;
    for w in 0..idx.len() {
        if w > 0 && keys[idx[w]] != keys[idx[w - 1]] {
            r += 1;
        }
        ranks[idx[w]] = r;
    }
    ranks
}

fn count_classes(ranks: &[usize]) -> usize {
    ranks.iter().max().map_or(0, |m| m + 1)
}
