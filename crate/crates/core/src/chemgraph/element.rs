use std::fmt;

/// The 72 element symbols admitted into the atom vocabulary, in class order.
pub const ELEMENT_SYMBOLS: [&str; 72] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc",
    "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Rb", "Sr", "Y", "Zr", "Mo",
    "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Sm", "Eu",
    "Dy", "Yb", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi",
];

/// Number of atom-type classes, including the dummy.
pub const ATOM_CLASSES: usize = 73;
/// 1-based atom type reserved for atoms absent from the main product.
pub const DUMMY_ATOM_TYPE: u8 = 73;

/// An element from the fixed vocabulary. Stored as its 0-based vocabulary position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const B: Element = Element(4);
    pub const C: Element = Element(5);
    pub const N: Element = Element(6);
    pub const O: Element = Element(7);
    pub const F: Element = Element(8);
    pub const P: Element = Element(13);
    pub const S: Element = Element(14);
    pub const CL: Element = Element(15);
    pub const BR: Element = Element(33);
    pub const I: Element = Element(48);

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        ELEMENT_SYMBOLS.iter().position(|s| *s == symbol).map(|i| Element(i as u8))
    }

    pub fn from_index(index: usize) -> Option<Element> {
        (index < ELEMENT_SYMBOLS.len()).then_some(Element(index as u8))
    }

    /// 0-based position in the vocabulary.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// 1-based atom type as used in reaction graphs.
    pub fn atom_type(self) -> u8 {
        self.0 + 1
    }

    pub fn symbol(self) -> &'static str {
        ELEMENT_SYMBOLS[self.0 as usize]
    }

    /// Member of the SMILES organic subset (may be written without brackets).
    pub fn is_organic(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::F
                | Element::CL
                | Element::BR
                | Element::I
        )
    }

    /// Elements that may carry a lowercase aromatic symbol.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self.symbol(), "B" | "C" | "N" | "O" | "P" | "S" | "Se" | "As" | "Te")
    }

    /// Allowed total valences for implicit-hydrogen assignment, or `None` when the
    /// element is always written with explicit hydrogens.
    pub fn default_valences(self) -> Option<&'static [i32]> {
        match self.symbol() {
            "B" => Some(&[3]),
            "C" => Some(&[4]),
            "N" => Some(&[3]),
            "O" => Some(&[2]),
            "F" | "Cl" | "Br" | "I" => Some(&[1]),
            "S" => Some(&[2, 4, 6]),
            "P" => Some(&[3, 5]),
            _ => None,
        }
    }

    /// Valences after applying the formal-charge adjustment.
    pub fn charged_valences(self, charge: i32) -> Option<Vec<i32>> {
        let base = self.default_valences()?;
        let adjusted = base
            .iter()
            .map(|&v| match self.symbol() {
                "C" => v - charge.abs(),
                "B" => v - charge,
                _ => v + charge,
            })
            .filter(|&v| v >= 0)
            .collect();
        Some(adjusted)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_72_unique_symbols() {
        let mut seen = std::collections::HashSet::new();
        for s in ELEMENT_SYMBOLS {
            assert!(seen.insert(s), "duplicate {s}");
        }
        assert_eq!(seen.len(), 72);
        assert_eq!(Element::from_symbol("Bi").unwrap().atom_type(), 72);
        assert_eq!(Element::from_symbol("H").unwrap().atom_type(), 1);
    }

    #[test]
    fn named_constants_match_symbols() {
        for (e, s) in [
            (Element::B, "B"),
            (Element::C, "C"),
            (Element::N, "N"),
            (Element::O, "O"),
            (Element::F, "F"),
            (Element::P, "P"),
            (Element::S, "S"),
            (Element::CL, "Cl"),
            (Element::BR, "Br"),
            (Element::I, "I"),
        ] {
            assert_eq!(e.symbol(), s);
        }
    }

    #[test]
    fn elements_outside_vocabulary() {
        assert!(Element::from_symbol("Ne").is_none());
        assert!(Element::from_symbol("U").is_none());
        assert!(Element::from_symbol("c").is_none());
    }

    #[test]
    fn charge_adjusts_valence() {
        assert_eq!(Element::N.charged_valences(1).unwrap(), vec![4]);
        assert_eq!(Element::O.charged_valences(-1).unwrap(), vec![1]);
        assert_eq!(Element::C.charged_valences(1).unwrap(), vec![3]);
        assert_eq!(Element::C.charged_valences(-1).unwrap(), vec![3]);
        assert_eq!(Element::B.charged_valences(-1).unwrap(), vec![4]);
        assert!(Element::from_symbol("Fe").unwrap().charged_valences(2).is_none());
    }
}
