#!/usr/bin/env python3
"""Regenerate the bundled test corpora (requires RDKit).

Outputs, relative to the repository root:
  crates/core/tests/data/overfit50.rxn        50 atom-mapped reactions
  crates/core/tests/data/molecules500.smi     500 molecules for SMILES round-trip tests
  crates/core/tests/data/aromatic100.tsv      aromatic SMILES, a shuffled-order variant,
                                              and the RDKit canonical form (oracle)
"""
import itertools
import os
import random

from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem

RDLogger.DisableLog("rdApp.*")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT = os.path.join(ROOT, "crates", "core", "tests", "data")
MAX_ATOMS = 24

ACIDS = ["CC(=O)O", "OC(=O)c1ccccc1", "OC(=O)c1ccc(Cl)cc1", "OC(=O)c1cccnc1",
         "OC(=O)C1CC1", "OC(=O)c1ccco1", "CCC(=O)O", "OC(=O)c1ccc(F)cc1"]
AMINES = ["NCc1ccccc1", "C1CCNCC1", "C1COCCN1", "CNC", "NC1CC1", "CCN", "C1CCNC1",
          "CN1CCNCC1", "NCCO"]
ARYL_BROMIDES = ["Brc1ccccc1", "Brc1ccncc1", "Brc1ccc(C)cc1", "Brc1cccs1", "COc1ccc(Br)cc1",
                 "N#Cc1ccc(Br)cc1"]
BORONIC = ["OB(O)c1ccccc1", "OB(O)c1ccoc1", "COc1ccc(B(O)O)cc1", "Cc1ccc(B(O)O)cc1"]
ALKYL_BROMIDES = ["BrCc1ccccc1", "BrCC", "BrCC(=O)OC", "BrCCC", "BrCc1ccncc1"]
ARYL_FLUORIDES = ["O=[N+]([O-])c1ccc(F)cc1", "Fc1ccc(C#N)cc1", "Fc1ncccc1", "O=[N+]([O-])c1ccccc1F"]
BOC = ["CC(C)(C)OC(=O)N1CCCC1", "CC(C)(C)OC(=O)NCc1ccccc1", "CC(C)(C)OC(=O)N1CCNCC1",
       "CC(C)(C)OC(=O)NC1CCCC1", "CC(C)(C)OC(=O)N1CCOCC1", "CC(C)(C)OC(=O)NCCO",
       "CC(C)(C)OC(=O)Nc1ccccc1"]
ESTERS = ["COC(=O)c1ccccc1", "COC(=O)c1ccc(Br)cc1", "COC(=O)Cc1ccccc1", "COC(=O)c1cccnc1",
          "COC(=O)C1CCCCC1", "COC(=O)c1ccc(O)cc1", "COC(=O)CCc1ccccc1"]
NITRO = ["O=[N+]([O-])c1ccccc1", "Cc1ccc([N+](=O)[O-])cc1", "O=[N+]([O-])c1cccnc1",
         "COc1ccc([N+](=O)[O-])cc1", "O=[N+]([O-])c1ccc(Cl)cc1", "O=C(O)c1ccc([N+](=O)[O-])cc1"]
ALDEHYDES = ["O=Cc1ccccc1", "O=Cc1ccncc1", "O=CC1CCCCC1", "O=Cc1ccco1", "CC(C)C=O"]
PHENOLS = ["Oc1ccccc1", "Cc1ccc(O)cc1", "Oc1ccc(Cl)cc1", "Oc1cccnc1"]
SULFONYL = ["CS(=O)(=O)Cl", "Cc1ccc(S(=O)(=O)Cl)cc1", "O=S(=O)(Cl)c1ccccc1"]
ALCOHOLS = ["OCc1ccccc1", "OCc1ccncc1", "OCC1CCCCC1", "OCc1ccc(Cl)cc1", "OCCc1ccccc1"]

TEMPLATES = [
    ("amide", "[C:1](=[O:2])[OX2H1].[N;H1,H2;!$(NC=O);!$(NS):3]>>[C:1](=[O:2])[N:3]", (ACIDS, AMINES)),
    ("suzuki", "[c:1]Br.[c:2]B(O)O>>[c:1][c:2]", (ARYL_BROMIDES, BORONIC)),
    ("n_alkylation", "[N;H1,H2;!$(NC=O);!$(N[a]):1].[CH2:2]Br>>[N:1][CH2:2]", (AMINES, ALKYL_BROMIDES)),
    ("snar", "[c:1]F.[N;H1,H2;!$(NC=O);!$(N[a]):2]>>[c:1][N:2]", (ARYL_FLUORIDES, AMINES)),
    ("boc_deprotection", "[N:1]C(=O)OC(C)(C)C>>[N:1]", (BOC,)),
    ("ester_hydrolysis", "[C:1](=[O:2])[O:3][CH3]>>[C:1](=[O:2])[O:3]", (ESTERS,)),
    ("nitro_reduction", "[c:1][N+:2](=O)[O-]>>[c:1][N+0:2]", (NITRO,)),
    ("reductive_amination", "[CX3H1:1](=O)[#6:3].[N;H1,H2;!$(NC=O);!$(N[a]):2]>>[CH2:1]([#6:3])[N:2]",
     (ALDEHYDES, AMINES)),
    ("o_alkylation", "[c:1][OH:2].[CH2:3]Br>>[c:1][O:2][CH2:3]", (PHENOLS, ALKYL_BROMIDES)),
    ("sulfonamide", "[S:1](=[O:2])(=[O:3])Cl.[N;H1,H2;!$(NC=O);!$(N[a]);!$(NS):4]>>[S:1](=[O:2])(=[O:3])[N:4]",
     (SULFONYL, AMINES)),
    ("oxidation", "[CH2:1][OH:2]>>[CH1:1]=[O:2]", (ALCOHOLS,)),
]


def mapped_reaction(template, reactant_smiles):
    rxn = AllChem.ReactionFromSmarts(template)
    mols = [Chem.MolFromSmiles(s) for s in reactant_smiles]
    outcomes = rxn.RunReactants(tuple(mols))
    if not outcomes:
        return None
    product = outcomes[0][0]
    try:
        Chem.SanitizeMol(product)
    except Exception:
        return None
    next_map = 1
    maps = []
    for mol in mols:
        table = {}
        for atom in mol.GetAtoms():
            atom.SetAtomMapNum(next_map)
            table[atom.GetIdx()] = next_map
            next_map += 1
        maps.append(table)
    if next_map - 1 > MAX_ATOMS:
        return None
    for atom in product.GetAtoms():
        props = atom.GetPropsAsDict()
        if "react_atom_idx" not in props:
            return None
        atom.SetAtomMapNum(maps[props["react_idx"]][props["react_atom_idx"]])
    lhs = ".".join(Chem.MolToSmiles(m) for m in mols)
    rhs = Chem.MolToSmiles(product)
    return lhs + ">>" + rhs, Chem.MolToSmiles(Chem.MolFromSmiles(Chem.MolToSmiles(product)))


def strip(smiles):
    mol = Chem.MolFromSmiles(smiles)
    for atom in mol.GetAtoms():
        atom.SetAtomMapNum(0)
    return Chem.MolToSmiles(mol)


def reactions():
    rng = random.Random(7)
    chosen = []
    seen_products, seen_reactants = set(), set()
    for name, template, pools in TEMPLATES:
        combos = list(itertools.product(*pools))
        rng.shuffle(combos)
        taken = 0
        for combo in combos:
            if taken == 5:
                break
            out = mapped_reaction(template, combo)
            if out is None:
                continue
            rxn, _ = out
            lhs, rhs = rxn.split(">>")
            prod_key, reac_key = strip(rhs), strip(lhs)
            if prod_key in seen_products or reac_key in seen_reactants:
                continue
            seen_products.add(prod_key)
            seen_reactants.add(reac_key)
            chosen.append((name, rxn))
            taken += 1
    return chosen[:50]


def molecules(rxns):
    pool = set()
    for lst in (ACIDS, AMINES, ARYL_BROMIDES, BORONIC, ALKYL_BROMIDES, ARYL_FLUORIDES, BOC, ESTERS,
                NITRO, ALDEHYDES, PHENOLS, SULFONYL, ALCOHOLS):
        pool.update(Chem.MolToSmiles(Chem.MolFromSmiles(s)) for s in lst)
    for _, template, pools in TEMPLATES:
        for combo in itertools.product(*pools):
            out = mapped_reaction(template, combo)
            if out is not None:
                pool.add(out[1])
    extra = ["c1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1", "c1ccc2ncccc2c1", "C[N+](C)(C)C", "[NH4+]",
             "CC(=O)[O-].[Na+]", "c1cc[n+](C)cc1", "O=S(=O)([O-])O", "C1CC2CCC1C2", "C#CC#N",
             "N#N", "O=C=O", "[Cl-].[K+]", "OCC(O)CO", "c1ccc(-c2ccccc2)cc1", "c1csc(N)n1",
             "Cn1cnc2c1c(=O)n(C)c(=O)n2C", "CC(C)Cc1ccc(C(C)C(=O)O)cc1", "CC(=O)Oc1ccccc1C(=O)O",
             "O=c1cc[nH]cc1", "c1ccc2c(c1)oc1ccccc12", "C1=CCC=C1", "[O-][n+]1ccccc1",
             "FC(F)(F)c1ccccc1", "ClC(Cl)Cl", "IC", "BrC(Br)Br", "P(=O)(O)(O)O", "CP(C)C",
             "B(O)O", "[Li]C", "C[Si](C)(C)Cl", "[Zn+2]", "[Fe+3]", "Cc1ccccc1[N+](=O)[O-]"]
    pool.update(Chem.MolToSmiles(Chem.MolFromSmiles(s)) for s in extra)
    pool = sorted(pool)
    rng = random.Random(11)
    while len(pool) < 500:
        a, b = rng.sample(pool, 2)
        ma, mb = Chem.MolFromSmiles(a), Chem.MolFromSmiles(b)
        if ma.GetNumAtoms() + mb.GetNumAtoms() > 40 or "." in a or "." in b:
            continue
        combo = Chem.CombineMols(ma, mb)
        rw = Chem.RWMol(combo)
        ia = [at.GetIdx() for at in ma.GetAtoms() if at.GetTotalNumHs() > 0 and at.GetFormalCharge() == 0]
        ib = [at.GetIdx() + ma.GetNumAtoms() for at in mb.GetAtoms()
              if at.GetTotalNumHs() > 0 and at.GetFormalCharge() == 0]
        if not ia or not ib:
            continue
        x, y = rng.choice(ia), rng.choice(ib)
        rw.AddBond(x, y, Chem.BondType.SINGLE)
        for idx in (x, y):
            atom = rw.GetAtomWithIdx(idx)
            if atom.GetNoImplicit():
                atom.SetNumExplicitHs(max(0, atom.GetNumExplicitHs() - 1))
        try:
            m = rw.GetMol()
            Chem.SanitizeMol(m)
            s = Chem.MolToSmiles(m)
        except Exception:
            continue
        if Chem.MolFromSmiles(s) is None or s in pool:
            continue
        pool.append(s)
    return pool[:500]


def main():
    os.makedirs(OUT, exist_ok=True)
    rxns = reactions()
    assert len(rxns) == 50, len(rxns)
    with open(os.path.join(OUT, "overfit50.rxn"), "w") as fh:
        fh.write("# 50 atom-mapped reactions across ten reaction classes (RDKit templates)\n")
        for name, rxn in rxns:
            fh.write(f"# {name}\n{rxn}\n")
    mols = molecules(rxns)
    with open(os.path.join(OUT, "molecules500.smi"), "w") as fh:
        fh.write("\n".join(mols) + "\n")
    aromatic = [s for s in mols if any(a.GetIsAromatic() for a in Chem.MolFromSmiles(s).GetAtoms())]
    aromatic = aromatic[:100]
    assert len(aromatic) == 100, len(aromatic)
    with open(os.path.join(OUT, "aromatic100.tsv"), "w") as fh:
        for i, s in enumerate(aromatic):
            m = Chem.MolFromSmiles(s)
            shuffled = Chem.MolToRandomSmilesVect(m, 1, randomSeed=1000 + i)[0]
            fh.write(f"{s}\t{shuffled}\t{Chem.MolToSmiles(Chem.MolFromSmiles(shuffled))}\n")


if __name__ == "__main__":
    main()
