mod common;

use common::{fusion_oracle, location, rng, softmax, uniform_vec};
use tcmn::autodiff::{Graph, ParameterStore};
use tcmn::matching::{
    combined_scores, init_fusion_block, localization_scores, relationship_scores, F_CONTEXT, F_LOC, F_MAIN, F_REL,
};
use tcmn::tensor::Tensor;
use tcmn::video::{Modality, Segment, SegmentFeatureTable, SegmentSet};

fn table(m: Modality, rows: &[Vec<f64>]) -> SegmentFeatureTable {
    SegmentFeatureTable {
        modality: m,
        features: Tensor::from_rows(rows).cast(),
    }
}

#[test]
fn localization_matches_straight_line_oracle_p3() {
    let mut r = rng(31);
    let dim = 4;
    let segments =
        SegmentSet::from_segments(2, vec![Segment::new(0, 0), Segment::new(1, 1), Segment::new(0, 1)]).unwrap();
    let p = segments.len();
    let mut store = ParameterStore::<f64>::new();
    init_fusion_block(&mut store, F_MAIN, dim, dim, dim, &mut r);
    init_fusion_block(&mut store, F_CONTEXT, dim, dim, dim, &mut r);
    init_fusion_block(&mut store, F_LOC, dim, 2 * dim + 4, dim, &mut r);

    // Feature values go through f32 tables; round them first so the oracle
    // sees the same numbers.
    let f32_round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
    let vm: Vec<Vec<f64>> = (0..p).map(|_| f32_round(uniform_vec(dim, &mut r))).collect();
    let vc: Vec<Vec<f64>> = (0..p).map(|_| f32_round(uniform_vec(dim, &mut r))).collect();
    let (dm, dc, root) = (
        uniform_vec(dim, &mut r),
        uniform_vec(dim, &mut r),
        uniform_vec(dim, &mut r),
    );

    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let tm = g.constant(Tensor::row_vector(dm.clone()));
    let tc = g.constant(Tensor::row_vector(dc.clone()));
    let tr = g.constant(Tensor::row_vector(root.clone()));
    let loc = localization_scores(
        &mut g,
        tm,
        tc,
        tr,
        &table(Modality::Rgb, &vm),
        &table(Modality::Flow, &vc),
        &segments,
        &b,
    )
    .unwrap();

    let am = softmax(
        &vm.iter()
            .map(|v| fusion_oracle(&store, F_MAIN, &dm, v))
            .collect::<Vec<_>>(),
    );
    let ac = softmax(
        &vc.iter()
            .map(|v| fusion_oracle(&store, F_CONTEXT, &dc, v))
            .collect::<Vec<_>>(),
    );
    for k in 0..p {
        assert!((g.value(loc.main_attention).get(k, 0) - am[k]).abs() < 1e-12);
        assert!((g.value(loc.context_attention).get(k, 0) - ac[k]).abs() < 1e-12);
    }
    let scores = g.value(loc.scores);
    assert_eq!(scores.shape(), (p, p));
    for i in 0..p {
        for j in 0..p {
            let mut input: Vec<f64> = vm[i].iter().map(|x| am[i] * x).collect();
            input.extend(location(segments.get(i), 2));
            input.extend(vc[j].iter().map(|x| ac[j] * x));
            input.extend(location(segments.get(j), 2));
            let want = fusion_oracle(&store, F_LOC, &root, &input);
            assert!(
                (scores.get(i, j) - want).abs() < 1e-12,
                "({i},{j}): {} vs {want}",
                scores.get(i, j)
            );
        }
    }
}

#[test]
fn relationship_matches_straight_line_oracle_p2() {
    let mut r = rng(32);
    let dim = 4;
    let segments = SegmentSet::from_segments(2, vec![Segment::new(0, 0), Segment::new(0, 1)]).unwrap();
    let mut store = ParameterStore::<f64>::new();
    init_fusion_block(&mut store, F_REL, dim, 4, dim, &mut r);
    let ds = uniform_vec(dim, &mut r);

    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let t = g.constant(Tensor::row_vector(ds.clone()));
    let rel = relationship_scores(&mut g, t, &segments, &b).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut input = location(segments.get(i), 2).to_vec();
            input.extend(location(segments.get(j), 2));
            let want = fusion_oracle(&store, F_REL, &ds, &input);
            assert!((g.value(rel).get(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn combined_is_elementwise_sum() {
    let mut r = rng(33);
    let a = uniform_vec(9, &mut r);
    let b = uniform_vec(9, &mut r);
    let mut g = Graph::<f64>::new();
    let va = g.constant(Tensor::from_vec(3, 3, a.clone()));
    let vb = g.constant(Tensor::from_vec(3, 3, b.clone()));
    let ab = combined_scores(&mut g, va, vb).unwrap();
    let ba = combined_scores(&mut g, vb, va).unwrap();
    for k in 0..9 {
        assert_eq!(g.value(ab).data()[k], a[k] + b[k]);
        assert_eq!(g.value(ab).data()[k], g.value(ba).data()[k]);
    }
    let v2 = g.constant(Tensor::zeros(2, 2));
    assert!(combined_scores(&mut g, va, v2).is_err());
}
