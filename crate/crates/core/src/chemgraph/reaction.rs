//! Atom-mapped reactions as paired graphs over a shared atom index set.

use std::collections::HashMap;

use thiserror::Error;

use super::element::{Element, ATOM_CLASSES, DUMMY_ATOM_TYPE};
use super::molecule::{implicit_hydrogens, Atom, BondOrder, Molecule};
use super::smiles::{parse_smiles, SmilesError};

/// Largest reaction (in mapped atoms) accepted at ingestion.
pub const MAX_REACTION_ATOMS: usize = 80;
pub const AROMATIC_CLASSES: usize = 2;
pub const CHARGE_CLASSES: usize = 13;
pub const BOND_CLASSES: usize = 4;
/// Charge value `v` is stored as class `v + CHARGE_OFFSET`.
pub const CHARGE_OFFSET: i32 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReactionError {
    #[error("malformed reaction: {0}")]
    Format(String),
    #[error("SMILES error: {0}")]
    Smiles(#[from] SmilesError),
    #[error("product atom map {0} has no reactant counterpart")]
    UnmatchedMap(u32),
    #[error("product atom without a map number")]
    UnmappedProductAtom,
    #[error("duplicate atom map {map} on the {side} side")]
    DuplicateMap { map: u32, side: &'static str },
    #[error("atom map {0} changes element between reactants and product")]
    ElementMismatch(u32),
    #[error("{0} atoms exceeds the limit of {MAX_REACTION_ATOMS}")]
    TooManyAtoms(usize),
}

impl ReactionError {
    /// Short machine-readable reason used by the ingestion rejection log.
    pub fn reason(&self) -> &'static str {
        match self {
            ReactionError::Format(_) => "format",
            ReactionError::Smiles(SmilesError::UnknownElement { .. }) => "element",
            ReactionError::Smiles(_) => "parse",
            ReactionError::UnmatchedMap(_) | ReactionError::UnmappedProductAtom => "unmatched-map",
            ReactionError::DuplicateMap { .. } => "duplicate-map",
            ReactionError::ElementMismatch(_) => "element-mismatch",
            ReactionError::TooManyAtoms(_) => "too-many-atoms",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("channel {channel} has length {got}, expected {expected}")]
    Shape { channel: &'static str, got: usize, expected: usize },
    #[error("channel {channel} value {value} outside its alphabet")]
    OutOfAlphabet { channel: &'static str, value: usize },
    #[error("bond matrix is not symmetric with zero diagonal")]
    Asymmetric,
    #[error("graph sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Reactant,
    Product,
    /// A graph sampled between the two endpoints.
    Intermediate,
}

/// The four categorical channels of one side of a reaction.
///
/// `atom_type` is 1-based (73 = dummy), `charge` holds `value + 6`, and `bond` is a
/// row-major N×N matrix of classes {0: none, 1: single, 2: double, 3: triple}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ReactionGraph {
    pub n_atoms: usize,
    pub atom_type: Vec<u8>,
    pub aromatic: Vec<u8>,
    pub charge: Vec<u8>,
    pub bond: Vec<u8>,
    pub side: Side,
}

impl ReactionGraph {
    /// All-dummy graph with no bonds.
    pub fn empty(n_atoms: usize, side: Side) -> ReactionGraph {
        ReactionGraph {
            n_atoms,
            atom_type: vec![DUMMY_ATOM_TYPE; n_atoms],
            aromatic: vec![0; n_atoms],
            charge: vec![CHARGE_OFFSET as u8; n_atoms],
            bond: vec![0; n_atoms * n_atoms],
            side,
        }
    }

    pub fn bond_at(&self, i: usize, j: usize) -> u8 {
        self.bond[i * self.n_atoms + j]
    }

    pub fn set_bond(&mut self, i: usize, j: usize, class: u8) {
        self.bond[i * self.n_atoms + j] = class;
        self.bond[j * self.n_atoms + i] = class;
    }

    pub fn is_dummy(&self, i: usize) -> bool {
        self.atom_type[i] == DUMMY_ATOM_TYPE
    }

    /// Checks channel lengths, alphabets, and bond symmetry.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.n_atoms;
        for (channel, len, expected) in [
            ("atom_type", self.atom_type.len(), n),
            ("aromatic", self.aromatic.len(), n),
            ("charge", self.charge.len(), n),
            ("bond", self.bond.len(), n * n),
        ] {
            if len != expected {
                return Err(GraphError::Shape { channel, got: len, expected });
            }
        }
        let check = |channel, values: &[u8], lo: u8, hi: u8| {
            values
                .iter()
                .find(|&&v| v < lo || v > hi)
                .map_or(Ok(()), |&v| Err(GraphError::OutOfAlphabet { channel, value: v as usize }))
        };
        check("atom_type", &self.atom_type, 1, ATOM_CLASSES as u8)?;
        check("aromatic", &self.aromatic, 0, 1)?;
        check("charge", &self.charge, 0, (CHARGE_CLASSES - 1) as u8)?;
        check("bond", &self.bond, 0, (BOND_CLASSES - 1) as u8)?;
        for i in 0..n {
            if self.bond_at(i, i) != 0 {
                return Err(GraphError::Asymmetric);
            }
            for j in 0..i {
                if self.bond_at(i, j) != self.bond_at(j, i) {
                    return Err(GraphError::Asymmetric);
                }
            }
        }
        Ok(())
    }

    /// Graph with atoms reordered so that new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> ReactionGraph {
        let n = self.n_atoms;
        let mut out = self.clone();
        for k in 0..n {
            out.atom_type[k] = self.atom_type[perm[k]];
            out.aromatic[k] = self.aromatic[perm[k]];
            out.charge[k] = self.charge[perm[k]];
            for l in 0..n {
                out.bond[k * n + l] = self.bond_at(perm[k], perm[l]);
            }
        }
        out
    }

    /// Number of non-dummy atoms whose bond-order sum exceeds the largest valence
    /// allowed for their element and charge.
    pub fn overvalent_atoms(&self) -> usize {
        let n = self.n_atoms;
        (0..n)
            .filter(|&i| !self.is_dummy(i))
            .filter(|&i| {
                let element = Element::from_index(self.atom_type[i] as usize - 1).unwrap();
                let charge = self.charge[i] as i32 - CHARGE_OFFSET;
                let sum: i32 = (0..n).filter(|&j| !self.is_dummy(j)).map(|j| self.bond_at(i, j) as i32).sum();
                match element.charged_valences(charge) {
                    Some(v) => v.iter().max().is_none_or(|&m| sum > m),
                    None => false,
                }
            })
            .count()
    }
}

/// Reactant graph (𝒢₋) and product graph (𝒢₊) over the same atom index set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReactionPair {
    pub reactants: ReactionGraph,
    pub product: ReactionGraph,
    /// Atom-map number of each shared index; `None` for unmapped reactant atoms.
    pub maps: Vec<Option<u32>>,
}

/// Zero-based class vectors for the four channels; the model's input and target
/// currency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphChannels {
    pub atom: Vec<usize>,
    pub aromatic: Vec<usize>,
    pub charge: Vec<usize>,
    pub bond: Vec<usize>,
}

impl GraphChannels {
    pub fn n_atoms(&self) -> usize {
        self.atom.len()
    }

    pub fn encode(g: &ReactionGraph) -> GraphChannels {
        GraphChannels {
            atom: g.atom_type.iter().map(|&a| a as usize - 1).collect(),
            aromatic: g.aromatic.iter().map(|&b| b as usize).collect(),
            charge: g.charge.iter().map(|&c| c as usize).collect(),
            bond: g.bond.iter().map(|&r| r as usize).collect(),
        }
    }

    pub fn decode(&self, side: Side) -> ReactionGraph {
        ReactionGraph {
            n_atoms: self.atom.len(),
            atom_type: self.atom.iter().map(|&a| (a + 1) as u8).collect(),
            aromatic: self.aromatic.iter().map(|&b| b as u8).collect(),
            charge: self.charge.iter().map(|&c| c as u8).collect(),
            bond: self.bond.iter().map(|&r| r as u8).collect(),
            side,
        }
    }
}

/// Channel encodings of (𝒢₋, 𝒢₊).
pub fn encode_pair(pair: &ReactionPair) -> (GraphChannels, GraphChannels) {
    (GraphChannels::encode(&pair.reactants), GraphChannels::encode(&pair.product))
}

fn fill_atom(g: &mut ReactionGraph, i: usize, atom: &Atom) {
    g.atom_type[i] = atom.element.atom_type();
    g.aromatic[i] = u8::from(atom.aromatic);
    g.charge[i] = (atom.formal_charge as i32 + CHARGE_OFFSET) as u8;
}

/// Splits a reaction line into (reactants, product), discarding any reagent field.
pub fn split_reaction(rxn: &str) -> Result<(&str, &str), ReactionError> {
    let parts: Vec<&str> = rxn.trim().split('>').collect();
    match parts.as_slice() {
        [r, _, p] => {
            let p = p.split_whitespace().next().unwrap_or("");
            if r.trim().is_empty() || p.is_empty() {
                return Err(ReactionError::Format("empty reactant or product field".into()));
            }
            Ok((r.trim(), p))
        }
        _ => Err(ReactionError::Format(format!("expected 'reactants>>product', got {rxn:?}"))),
    }
}

/// Aligns an atom-mapped reaction into paired graphs.
///
/// Shared indices follow ascending map number; unmapped reactant atoms follow in input
/// order. Reactant atoms absent from the product become dummies on the product side.
pub fn align_reaction(rxn: &str) -> Result<ReactionPair, ReactionError> {
    let (lhs, rhs) = split_reaction(rxn)?;
    let reactants = parse_smiles(lhs)?;
    let product = parse_smiles(rhs)?;

    let mut mapped: Vec<(u32, usize)> = Vec::new();
    let mut unmapped: Vec<usize> = Vec::new();
    let mut seen = HashMap::new();
    for (i, a) in reactants.atoms.iter().enumerate() {
        match a.map_number {
            Some(m) => {
                if seen.insert(m, i).is_some() {
                    return Err(ReactionError::DuplicateMap { map: m, side: "reactant" });
                }
                mapped.push((m, i));
            }
            None => unmapped.push(i),
        }
    }
    mapped.sort_unstable();
    let order: Vec<usize> = mapped.iter().map(|&(_, i)| i).chain(unmapped.iter().copied()).collect();
    let n = order.len();
    if n > MAX_REACTION_ATOMS {
        return Err(ReactionError::TooManyAtoms(n));
    }
    let mut position = vec![0usize; reactants.atoms.len()];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }

    let mut g_minus = ReactionGraph::empty(n, Side::Reactant);
    for (k, &i) in order.iter().enumerate() {
        fill_atom(&mut g_minus, k, &reactants.atoms[i]);
    }
    for bd in &reactants.bonds {
        g_minus.set_bond(position[bd.a], position[bd.b], bd.order.class());
    }

    let mut g_plus = ReactionGraph::empty(n, Side::Product);
    let mut product_pos = vec![0usize; product.atoms.len()];
    let mut seen_product = HashMap::new();
    for (pi, a) in product.atoms.iter().enumerate() {
        let m = a.map_number.ok_or(ReactionError::UnmappedProductAtom)?;
        if seen_product.insert(m, pi).is_some() {
            return Err(ReactionError::DuplicateMap { map: m, side: "product" });
        }
        let ri = *seen.get(&m).ok_or(ReactionError::UnmatchedMap(m))?;
        if reactants.atoms[ri].element != a.element {
            return Err(ReactionError::ElementMismatch(m));
        }
        let k = position[ri];
        product_pos[pi] = k;
        fill_atom(&mut g_plus, k, a);
    }
    for bd in &product.bonds {
        g_plus.set_bond(product_pos[bd.a], product_pos[bd.b], bd.order.class());
    }
    let maps = order.iter().map(|&i| reactants.atoms[i].map_number).collect();
    Ok(ReactionPair { reactants: g_minus, product: g_plus, maps })
}

/// Decodes a graph into molecules: dummies dropped, components split, hydrogens from
/// the valence table. Over-valent atoms become bracket atoms with no hydrogens.
pub fn graph_to_molecules(g: &ReactionGraph) -> Vec<Molecule> {
    let n = g.n_atoms;
    let keep: Vec<usize> = (0..n).filter(|&i| !g.is_dummy(i)).collect();
    if keep.is_empty() {
        return Vec::new();
    }
    let mut whole = Molecule::default();
    for &i in &keep {
        let element = Element::from_index(g.atom_type[i] as usize - 1).expect("valid atom type");
        let mut atom = Atom::new(element);
        atom.aromatic = g.aromatic[i] == 1 && element.can_be_aromatic();
        atom.formal_charge = (g.charge[i] as i32 - CHARGE_OFFSET) as i8;
        whole.add_atom(atom);
    }
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate().skip(a + 1) {
            if let Some(order) = BondOrder::from_class(g.bond_at(i, j)) {
                whole.add_bond(a, b, order);
            }
        }
    }
    for k in 0..whole.atoms.len() {
        let sum = whole.bond_order_sum(k);
        let atom = &whole.atoms[k];
        let lower_ok = !atom.aromatic || matches!(atom.element.symbol(), "B" | "C" | "N" | "O" | "P" | "S");
        let h = implicit_hydrogens(atom, sum);
        let bare = atom.element.is_organic() && atom.formal_charge == 0 && lower_ok && h.is_some();
        whole.atoms[k].explicit_h = if bare { None } else { Some(h.unwrap_or(0)) };
    }
    whole.components().iter().map(|c| whole.subgraph(c)).collect()
}
