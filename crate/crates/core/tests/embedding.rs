use dfalgebra::algebra::{enumerate_structures, hierarchy_dag, is_embedded, AlgebraStructure, Block};
use proptest::prelude::*;

/// Brute force over every matrix with entries `0..=min(n, n_k / ñ_ℓ)`.
fn exhaustive(sub: &AlgebraStructure, sup: &AlgebraStructure) -> bool {
    let (sb, pb) = (sub.blocks(), sup.blocks());
    let (kk, ll) = (pb.len(), sb.len());
    let n = sup.n();
    let bound: Vec<usize> = (0..kk * ll).map(|i| n.min(pb[i / ll].dim / sb[i % ll].dim)).collect();
    let mut a = vec![0usize; kk * ll];
    loop {
        let rows = (0..kk).all(|k| pb[k].dim == (0..ll).map(|l| a[k * ll + l] * sb[l].dim).sum::<usize>());
        let cols = (0..ll).all(|l| sb[l].mult == (0..kk).map(|k| a[k * ll + l] * pb[k].mult).sum::<usize>());
        if rows && cols {
            return true;
        }
        let mut i = 0;
        loop {
            if i == a.len() {
                return false;
            }
            if a[i] < bound[i] {
                a[i] += 1;
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn decision_matches_exhaustive_search() {
    for n in 1..=4 {
        let all = enumerate_structures(n, true, false).unwrap();
        for sub in &all {
            for sup in &all {
                let fast = is_embedded(sub, sup).unwrap();
                assert_eq!(fast.is_some(), exhaustive(sub, sup), "{sub} ⊆ {sup}");
                if let Some(w) = fast {
                    assert!(w.certifies(sub, sup));
                }
            }
        }
    }
}

#[test]
fn ordered_structures_agree_with_canonical() {
    for n in 1..=4 {
        let all = enumerate_structures(n, false, false).unwrap();
        for sub in &all {
            for sup in &all {
                let direct = is_embedded(sub, sup).unwrap().is_some();
                let canon = is_embedded(&sub.canonical(), &sup.canonical()).unwrap().is_some();
                assert_eq!(direct, canon, "{sub} ⊆ {sup}");
            }
        }
    }
}

#[test]
fn known_witness() {
    let sub: AlgebraStructure = "({2,2})".parse().unwrap();
    let sup: AlgebraStructure = "({2,1},{2,1})".parse().unwrap();
    let w = is_embedded(&sub, &sup).unwrap().unwrap();
    assert_eq!(w.a, vec![vec![1], vec![1]]);
    assert!(is_embedded(&sup, &sub).unwrap().is_none());
}

fn structure(max_n: usize) -> impl Strategy<Value = AlgebraStructure> {
    prop::collection::vec((1usize..=3, 1usize..=3), 1..=3)
        .prop_filter("dimension bound", move |bs| {
            bs.iter().map(|(d, m)| d * m).sum::<usize>() <= max_n
        })
        .prop_map(|bs| {
            AlgebraStructure::new(0, bs.into_iter().map(|(dim, mult)| Block { dim, mult }).collect()).unwrap()
        })
}

fn same_n_structures(n: usize) -> Vec<AlgebraStructure> {
    enumerate_structures(n, false, false).unwrap()
}

proptest! {
    #[test]
    fn reflexive(s in structure(8)) {
        prop_assert!(is_embedded(&s, &s).unwrap().is_some());
    }

    #[test]
    fn transitive_and_monotone(n in 1usize..=6, i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>(), k in any::<prop::sample::Index>()) {
        let all = same_n_structures(n);
        let (a, b, c) = (i.get(&all), j.get(&all), k.get(&all));
        let ab = is_embedded(a, b).unwrap().is_some();
        let bc = is_embedded(b, c).unwrap().is_some();
        if ab && bc {
            prop_assert!(is_embedded(a, c).unwrap().is_some());
        }
        if ab {
            prop_assert!(a.algebra_dimension() <= b.algebra_dimension());
            if is_embedded(b, a).unwrap().is_some() {
                prop_assert!(a.is_isomorphic(b));
            }
        }
    }

    #[test]
    fn everything_between_extremes(n in 1usize..=6, i in any::<prop::sample::Index>()) {
        let s = i.get(&same_n_structures(n)).clone();
        let general = AlgebraStructure::unital(&[(1, n)]).unwrap();
        let unitary = AlgebraStructure::unital(&[(n, 1)]).unwrap();
        prop_assert!(is_embedded(&general, &s).unwrap().is_some());
        prop_assert!(is_embedded(&s, &unitary).unwrap().is_some());
    }
}

#[test]
fn dag_reachability_equals_relation() {
    let all = enumerate_structures(4, true, false).unwrap();
    assert_eq!(all.len(), 11);
    assert_eq!(enumerate_structures(4, false, false).unwrap().len(), 18);
    let dag = hierarchy_dag(&all).unwrap();
    for (i, a) in dag.nodes().iter().enumerate() {
        for (j, b) in dag.nodes().iter().enumerate() {
            assert_eq!(
                dag.embeds(i, j),
                i != j && is_embedded(a, b).unwrap().is_some(),
                "{a} ⊊ {b}"
            );
        }
    }
    assert!(dag.has_edge(&"({2,2})".parse().unwrap(), &"({2,1},{2,1})".parse().unwrap()));
    // Reduction: no edge is implied by a two-step path.
    for &(a, b) in dag.edges() {
        for c in 0..dag.nodes().len() {
            assert!(!(c != a && c != b && dag.embeds(a, c) && dag.embeds(c, b)));
        }
    }
}
