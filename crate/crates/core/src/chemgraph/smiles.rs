//! SMILES reader.
//!
//! Supports the organic subset, bracket atoms (isotope and chirality are accepted and
//! dropped), bonds `- = # : / \`, ring closures including `%nn`, branches and the
//! `.` separator. Aromaticity comes only from lowercase symbols.

use std::collections::HashMap;

use thiserror::Error;

use super::element::Element;
use super::molecule::{Atom, BondOrder, Molecule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("unexpected character {ch:?} at byte {offset}")]
    Unexpected { offset: usize, ch: char },
    #[error("unexpected end of input at byte {offset}")]
    UnexpectedEnd { offset: usize },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unmatched ring closure {label} at byte {offset}")]
    UnmatchedRing { offset: usize, label: u32 },
    #[error("unknown element {symbol:?} at byte {offset}")]
    UnknownElement { offset: usize, symbol: String },
    #[error("formal charge {charge} outside [-6, 6] at byte {offset}")]
    ChargeOutOfRange { offset: usize, charge: i32 },
    #[error("invalid bond at byte {offset}")]
    InvalidBond { offset: usize },
}

impl SmilesError {
    pub fn offset(&self) -> usize {
        match *self {
            SmilesError::Empty => 0,
            SmilesError::Unexpected { offset, .. }
            | SmilesError::UnexpectedEnd { offset }
            | SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnmatchedRing { offset, .. }
            | SmilesError::UnknownElement { offset, .. }
            | SmilesError::ChargeOutOfRange { offset, .. }
            | SmilesError::InvalidBond { offset } => offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSymbol {
    fn order(self) -> BondOrder {
        match self {
            BondSymbol::Double => BondOrder::Double,
            BondSymbol::Triple => BondOrder::Triple,
            BondSymbol::Single | BondSymbol::Aromatic => BondOrder::Single,
        }
    }
}

pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.trim().is_empty() {
        return Err(SmilesError::Empty);
    }
    Parser::new(text).run()
}

struct RingOpen {
    atom: usize,
    bond: Option<BondSymbol>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    mol: Molecule,
    prev: Option<usize>,
    pending: Option<(BondSymbol, usize)>,
    branches: Vec<(Option<usize>, usize)>,
    rings: HashMap<u32, RingOpen>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.trim().as_bytes(),
            pos: 0,
            mol: Molecule::default(),
            prev: None,
            pending: None,
            branches: Vec::new(),
            rings: HashMap::new(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> SmilesError {
        match self.peek() {
            Some(c) => SmilesError::Unexpected { offset: self.pos, ch: c as char },
            None => SmilesError::UnexpectedEnd { offset: self.pos },
        }
    }

    fn run(mut self) -> Result<Molecule, SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    self.branches.push((self.prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(self.unexpected());
                    }
                    let (prev, _) =
                        self.branches.pop().ok_or(SmilesError::UnbalancedParenthesis { offset: self.pos })?;
                    self.prev = prev;
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() || !self.branches.is_empty() {
                        return Err(self.unexpected());
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(self.unexpected());
                    }
                    let sym = match c {
                        b'=' => BondSymbol::Double,
                        b'#' => BondSymbol::Triple,
                        b':' => BondSymbol::Aromatic,
                        _ => BondSymbol::Single,
                    };
                    self.pending = Some((sym, self.pos));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                _ => {
                    let atom = self.atom()?;
                    let idx = self.mol.add_atom(atom);
                    if let Some(p) = self.prev {
                        let order = self.pending.take().map_or(BondOrder::Single, |(s, _)| s.order());
                        self.mol.add_bond(p, idx, order);
                    } else if let Some((_, offset)) = self.pending {
                        return Err(SmilesError::InvalidBond { offset });
                    }
                    self.prev = Some(idx);
                }
            }
        }
        if let Some((_, offset)) = self.pending {
            return Err(SmilesError::UnexpectedEnd { offset: offset + 1 });
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if let Some((&label, open)) = self.rings.iter().min_by_key(|(_, r)| r.offset) {
            return Err(SmilesError::UnmatchedRing { offset: open.offset, label });
        }
        Ok(self.mol)
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let atom = self.prev.ok_or_else(|| self.unexpected())?;
        let label = if self.peek() == Some(b'%') {
            self.pos += 1;
            let digits = self.take_digits(2);
            if digits.len() != 2 {
                return Err(self.unexpected());
            }
            digits.parse::<u32>().unwrap()
        } else {
            self.pos += 1;
            (self.bytes[start] - b'0') as u32
        };
        let bond = self.pending.take().map(|(s, _)| s);
        match self.rings.remove(&label) {
            Some(open) => {
                let sym = match (open.bond, bond) {
                    (Some(a), Some(b)) if a.order() != b.order() => {
                        return Err(SmilesError::InvalidBond { offset: start })
                    }
                    (Some(a), _) => a,
                    (None, Some(b)) => b,
                    (None, None) => BondSymbol::Single,
                };
                if !self.mol.add_bond(open.atom, atom, sym.order()) {
                    return Err(SmilesError::InvalidBond { offset: start });
                }
            }
            None => {
                self.rings.insert(label, RingOpen { atom, bond, offset: start });
            }
        }
        Ok(())
    }

    fn take_digits(&mut self, max: usize) -> &'a str {
        let start = self.pos;
        while self.pos - start < max && matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).unwrap()
    }

    fn atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let c = self.peek().ok_or_else(|| self.unexpected())?;
        if c == b'[' {
            return self.bracket_atom();
        }
        let next = self.bytes.get(self.pos + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.bytes[start..start + 1]).unwrap(), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            (b'*', _) => return Err(SmilesError::UnknownElement { offset: start, symbol: "*".into() }),
            _ => return Err(self.unexpected()),
        };
        self.pos += len;
        let element = Element::from_symbol(symbol).expect("organic subset is in the vocabulary");
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        self.take_digits(usize::MAX); // isotope
        let sym_start = self.pos;
        let c = self.peek().ok_or(SmilesError::UnexpectedEnd { offset: self.pos })?;
        let (symbol, aromatic) = if c.is_ascii_uppercase() {
            self.pos += 1;
            if matches!(self.peek(), Some(l) if l.is_ascii_lowercase()) {
                self.pos += 1;
            }
            (std::str::from_utf8(&self.bytes[sym_start..self.pos]).unwrap().to_string(), false)
        } else if c.is_ascii_lowercase() {
            let two = self.bytes.get(self.pos..self.pos + 2);
            let sym = match two {
                Some(b"se") => "Se",
                Some(b"as") => "As",
                Some(b"te") => "Te",
                _ => match c {
                    b'b' => "B",
                    b'c' => "C",
                    b'n' => "N",
                    b'o' => "O",
                    b'p' => "P",
                    b's' => "S",
                    _ => return Err(self.unexpected()),
                },
            };
            self.pos += sym.len();
            (sym.to_string(), true)
        } else if c == b'*' {
            return Err(SmilesError::UnknownElement { offset: sym_start, symbol: "*".into() });
        } else {
            return Err(self.unexpected());
        };
        let element = Element::from_symbol(&symbol)
            .ok_or(SmilesError::UnknownElement { offset: sym_start, symbol: symbol.clone() })?;

        // chirality
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else {
                while matches!(self.peek(), Some(b'A'..=b'Z')) {
                    self.pos += 1;
                }
                self.take_digits(2);
            }
        }

        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let d = self.take_digits(2);
            h = if d.is_empty() { 1 } else { d.parse().unwrap() };
        }

        let charge_start = self.pos;
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            let d = self.take_digits(2);
            if !d.is_empty() {
                charge = unit * d.parse::<i32>().unwrap();
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if !(-6..=6).contains(&charge) {
            return Err(SmilesError::ChargeOutOfRange { offset: charge_start, charge });
        }

        let mut map_number = None;
        if self.peek() == Some(b':') {
            self.pos += 1;
            let d = self.take_digits(usize::MAX);
            if d.is_empty() {
                return Err(self.unexpected());
            }
            let m: u32 = d.parse().map_err(|_| SmilesError::Unexpected { offset: self.pos, ch: ':' })?;
            map_number = (m > 0).then_some(m);
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            None => return Err(SmilesError::UnexpectedEnd { offset: open }),
            _ => return Err(self.unexpected()),
        }
        Ok(Atom { element, aromatic, formal_charge: charge as i8, explicit_h: Some(h), map_number })
    }
}
