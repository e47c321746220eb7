use rand::Rng;

use super::scheduler::SchedulerState;
use super::BridgeError;
use crate::chemgraph::{ReactionGraph, Side, AROMATIC_CLASSES, ATOM_CLASSES, BOND_CLASSES, CHARGE_CLASSES};

/// Draws from α δ_{a} + β δ_{b} + σ_t U_K as a three-way mixture.
fn draw<R: Rng + ?Sized>(a: usize, b: usize, st: &SchedulerState, k: usize, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if u < st.alpha {
        a
    } else if u < st.alpha + st.beta {
        b
    } else {
        rng.gen_range(0..k)
    }
}

/// Samples an intermediate graph G_t ~ p_t(· | g0, g1), independently per element
/// and channel; bonds are drawn for i < j and mirrored.
pub fn sample_graph_path<R: Rng + ?Sized>(
    g0: &ReactionGraph,
    g1: &ReactionGraph,
    st: &SchedulerState,
    rng: &mut R,
) -> Result<ReactionGraph, BridgeError> {
    if g0.n_atoms != g1.n_atoms {
        return Err(BridgeError::Shape(format!("{} vs {} atoms", g0.n_atoms, g1.n_atoms)));
    }
    g0.validate().map_err(|e| BridgeError::Shape(e.to_string()))?;
    g1.validate().map_err(|e| BridgeError::Shape(e.to_string()))?;
    let n = g0.n_atoms;
    let side = if st.alpha == 1.0 {
        g0.side
    } else if st.beta == 1.0 {
        g1.side
    } else {
        Side::Intermediate
    };
    let mut out = ReactionGraph::empty(n, side);
    for i in 0..n {
        let a = draw(g0.atom_type[i] as usize - 1, g1.atom_type[i] as usize - 1, st, ATOM_CLASSES, rng);
        out.atom_type[i] = (a + 1) as u8;
        out.aromatic[i] = draw(g0.aromatic[i] as usize, g1.aromatic[i] as usize, st, AROMATIC_CLASSES, rng) as u8;
        out.charge[i] = draw(g0.charge[i] as usize, g1.charge[i] as usize, st, CHARGE_CLASSES, rng) as u8;
    }
    for i in 0..n {
        for j in i + 1..n {
            let b = draw(g0.bond_at(i, j) as usize, g1.bond_at(i, j) as usize, st, BOND_CLASSES, rng);
            out.set_bond(i, j, b as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::Scheduler;
    use crate::chemgraph::align_reaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (ReactionGraph, ReactionGraph) {
        let p = align_reaction("[CH3:1][CH2:2][OH:3].[Br:4][Br:5]>>[CH3:1][CH2:2][O:3][Br:4]").unwrap();
        (p.reactants, p.product)
    }

    #[test]
    fn endpoints_return_inputs() {
        let (g0, g1) = pair();
        let s = Scheduler::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_graph_path(&g0, &g1, &s.state(0.0).unwrap(), &mut rng).unwrap(), g0);
        assert_eq!(sample_graph_path(&g0, &g1, &s.state(1.0).unwrap(), &mut rng).unwrap(), g1);
    }

    #[test]
    fn bonds_stay_symmetric() {
        let (g0, g1) = pair();
        let s = Scheduler::new(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..20 {
            let g = sample_graph_path(&g0, &g1, &s.state(k as f64 / 20.0).unwrap(), &mut rng).unwrap();
            g.validate().unwrap();
        }
    }

    #[test]
    fn charge_only_pair_splits_evenly() {
        let mut g0 = ReactionGraph::empty(1, Side::Reactant);
        g0.atom_type[0] = 7;
        let mut g1 = g0.clone();
        g1.side = Side::Product;
        g1.charge[0] = 7;
        let st = Scheduler::new(0.0).unwrap().state(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut from_g1 = 0;
        for _ in 0..draws {
            let g = sample_graph_path(&g0, &g1, &st, &mut rng).unwrap();
            assert_eq!(g.atom_type[0], 7);
            match g.charge[0] {
                6 => {}
                7 => from_g1 += 1,
                c => panic!("unexpected charge class {c}"),
            }
        }
        assert!((from_g1 as f64 / draws as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn rejects_size_mismatch() {
        let g0 = ReactionGraph::empty(2, Side::Reactant);
        let g1 = ReactionGraph::empty(3, Side::Product);
        let st = Scheduler::default().state(0.5).unwrap();
        assert!(sample_graph_path(&g0, &g1, &st, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
