use super::element::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub fn from_class(class: u8) -> Option<BondOrder> {
        match class {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }

    pub fn class(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Hydrogen count written inside a bracket atom; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub map_number: Option<u32>,
}

impl Atom {
    pub fn new(element: Element) -> Atom {
        Atom { element, aromatic: false, formal_charge: 0, explicit_h: None, map_number: None }
    }
}

/// Bond between atoms `a < b`. Aromatic bonds are stored as single bonds between
/// aromatic-flagged atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl Molecule {
    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.atoms.len() - 1
    }

    /// Adds a bond, normalizing endpoint order. Returns false for self-bonds,
    /// out-of-range indices, or an already-present pair.
    pub fn add_bond(&mut self, i: usize, j: usize, order: BondOrder) -> bool {
        if i == j || i >= self.atoms.len() || j >= self.atoms.len() {
            return false;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if self.bonds.iter().any(|bd| bd.a == a && bd.b == b) {
            return false;
        }
        self.bonds.push(Bond { a, b, order });
        true
    }

    /// Neighbor lists as (neighbor, order).
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bd in &self.bonds {
            adj[bd.a].push((bd.b, bd.order));
            adj[bd.b].push((bd.a, bd.order));
        }
        adj
    }

    pub fn bond_order_sum(&self, atom: usize) -> i32 {
        self.bonds.iter().filter(|bd| bd.a == atom || bd.b == atom).map(|bd| bd.order as i32).sum()
    }

    /// Hydrogen count of an atom: the bracket value when present, otherwise the
    /// valence-table value.
    pub fn hydrogen_count(&self, atom: usize) -> u8 {
        match self.atoms[atom].explicit_h {
            Some(h) => h,
            None => implicit_hydrogens(&self.atoms[atom], self.bond_order_sum(atom)).unwrap_or(0),
        }
    }

    /// Connected components, each as ascending atom indices, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Sub-molecule induced by `indices`, preserving their relative order.
    pub fn subgraph(&self, indices: &[usize]) -> Molecule {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        let mut mol = Molecule::default();
        for &i in indices {
            remap[i] = mol.add_atom(self.atoms[i].clone());
        }
        for bd in &self.bonds {
            let (a, b) = (remap[bd.a], remap[bd.b]);
            if a != usize::MAX && b != usize::MAX {
                mol.add_bond(a, b, bd.order);
            }
        }
        mol
    }

    /// Sorted multiset of atom labels and bond labels (with labels of endpoints);
    /// equal for two molecules that are identical up to atom order.
    pub fn label_multiset(&self) -> (Vec<Atom>, Vec<(String, String, BondOrder)>) {
        let key = |a: &Atom| format!("{a:?}");
        let mut atoms = self.atoms.clone();
        atoms.sort_by_key(|a| key(a));
        let mut bonds: Vec<_> = self
            .bonds
            .iter()
            .map(|bd| {
                let (x, y) = (key(&self.atoms[bd.a]), key(&self.atoms[bd.b]));
                if x <= y {
                    (x, y, bd.order)
                } else {
                    (y, x, bd.order)
                }
            })
            .collect();
        bonds.sort();
        (atoms, bonds)
    }
}

/// Implicit hydrogen count from the valence table, or `None` when the element has
/// no table entry or the bond-order sum exceeds every allowed valence.
///
/// Aromatic atoms count one extra unit of valence for the delocalized bond when the
/// table allows it (pyridine-type); otherwise none (pyrrole- and furan-type).
pub fn implicit_hydrogens(atom: &Atom, bond_order_sum: i32) -> Option<u8> {
    let allowed = atom.element.charged_valences(atom.formal_charge as i32)?;
    let fit = |used: i32| allowed.iter().find(|&&v| v >= used).map(|&v| (v - used) as u8);
    if atom.aromatic {
        fit(bond_order_sum + 1).or_else(|| fit(bond_order_sum))
    } else {
        fit(bond_order_sum)
    }
}
