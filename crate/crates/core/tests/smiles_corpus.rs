use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synbridge::chemgraph::{parse_smiles, write_canonical_smiles, Molecule};

const MOLECULES: &str = include_str!("data/molecules500.smi");
const AROMATIC: &str = include_str!("data/aromatic100.tsv");

fn shuffled(mol: &Molecule, rng: &mut ChaCha8Rng) -> Molecule {
    let n = mol.atoms.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut inverse = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let mut out = Molecule::default();
    for &old in &perm {
        out.add_atom(mol.atoms[old].clone());
    }
    let mut bonds = mol.bonds.clone();
    bonds.shuffle(rng);
    for b in bonds {
        out.add_bond(inverse[b.a], inverse[b.b], b.order);
    }
    out
}

#[test]
fn corpus_has_500_molecules() {
    assert_eq!(MOLECULES.lines().count(), 500);
}

#[test]
fn parse_write_parse_is_identity() {
    for line in MOLECULES.lines() {
        let mol = parse_smiles(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        let written = write_canonical_smiles(&mol, true);
        let back = parse_smiles(&written).unwrap_or_else(|e| panic!("{written}: {e}"));
        assert_eq!(back.label_multiset(), mol.label_multiset(), "{line} -> {written}");
        assert_eq!(write_canonical_smiles(&back, true), written, "{line}");
    }
}

#[test]
fn canonical_form_ignores_atom_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for line in MOLECULES.lines() {
        let mol = parse_smiles(line).unwrap();
        let reference = write_canonical_smiles(&mol, true);
        for _ in 0..3 {
            let other = shuffled(&mol, &mut rng);
            assert_eq!(write_canonical_smiles(&other, true), reference, "{line}");
        }
    }
}

// Each row: SMILES, the same molecule written from a random atom order, and the
// toolkit's canonical form. Our canonical strings must induce the same partition.
#[test]
fn aromatic_set_matches_toolkit_partition() {
    let mut ours_to_theirs: HashMap<String, String> = HashMap::new();
    let mut theirs_to_ours: HashMap<String, String> = HashMap::new();
    let mut rows = 0;
    for line in AROMATIC.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        let a = write_canonical_smiles(&parse_smiles(cols[0]).unwrap(), false);
        let b = write_canonical_smiles(&parse_smiles(cols[1]).unwrap(), false);
        assert_eq!(a, b, "{} vs {}", cols[0], cols[1]);
        assert!(parse_smiles(cols[0]).unwrap().atoms.iter().any(|x| x.aromatic));
        let theirs = cols[2].to_string();
        assert_eq!(ours_to_theirs.entry(a.clone()).or_insert_with(|| theirs.clone()), &theirs);
        assert_eq!(theirs_to_ours.entry(theirs).or_insert_with(|| a.clone()), &a);
        rows += 1;
    }
    assert_eq!(rows, 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffles_are_invariant(idx in 0usize..500, seed in any::<u64>()) {
        let line = MOLECULES.lines().nth(idx).unwrap();
        let mol = parse_smiles(line).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = shuffled(&mol, &mut rng);
        prop_assert_eq!(write_canonical_smiles(&other, false), write_canonical_smiles(&mol, false));
    }
}
