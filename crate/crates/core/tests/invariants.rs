use ndarray::Array2;
use proptest::prelude::*;

use geoact::eval::{confusion, log_loss, macro_f1};
use geoact::features::{FeaturePipeline, FeatureSpec};
use geoact::geodesy::{haversine_distance, EarthModel, GeoPoint};
use geoact::grid::{self, GridFamily, GridSystem};
use geoact::ingest::split_dataset;
use geoact::models::{fit, GbtParams, KnnParams, ModelParams, ModelSpec};
use geoact::synth::{default_cities, synth_datasets, SynthConfig};
use geoact::N_CLASSES;

fn small(checkins: usize) -> SynthConfig {
    SynthConfig {
        checkins,
        venues: checkins / 6,
        users: checkins / 20,
        ..SynthConfig::default()
    }
}

fn pt() -> impl Strategy<Value = GeoPoint> {
    (-90.0..=90.0f64, -180.0..180.0f64).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
}

proptest! {
    #[test]
    fn distance_is_bounded_by_half_circumference(a in pt(), b in pt()) {
        let e = EarthModel::default();
        let d = haversine_distance(a, b, e);
        prop_assert!(d >= 0.0);
        prop_assert!(d <= std::f64::consts::PI * e.radius_km() + 1e-9);
        prop_assert_eq!(haversine_distance(a, a, e), 0.0);
    }

    #[test]
    fn truncation_matches_coarser_encoding(p in pt(), fine in 2u8..=12, step in 1u8..=11) {
        let coarse = fine.saturating_sub(step).max(1);
        let cell = grid::encode(p, GridFamily::Geohash, fine).unwrap();
        prop_assert_eq!(cell.truncate(coarse).unwrap(), grid::encode(p, GridFamily::Geohash, coarse).unwrap());
    }

    #[test]
    fn offset_cells_contain_their_points(p in pt(), res in 1u8..=10) {
        let cell = grid::encode(p, GridFamily::OffsetGeohash, res).unwrap();
        prop_assert!(grid::decode(cell).unwrap().contains(p));
    }

    #[test]
    fn metrics_stay_in_range(labels in prop::collection::vec(0..N_CLASSES, 1..80), seed in any::<u64>()) {
        let n = labels.len();
        let preds: Vec<usize> = (0..n).map(|i| ((seed >> (i % 60)) as usize + i) % N_CLASSES).collect();
        let f1 = macro_f1(&preds, &labels).unwrap().macro_f1;
        prop_assert!((0.0..=1.0).contains(&f1));
        let perfect = macro_f1(&labels, &labels).unwrap().macro_f1;
        prop_assert!((perfect - 1.0).abs() < 1e-12);
        let cm = confusion(&preds, &labels).unwrap();
        prop_assert_eq!(cm.total(), n);
        let p = Array2::from_elem((n, N_CLASSES), 1.0 / N_CLASSES as f64);
        prop_assert!(log_loss(&p, &labels).unwrap() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn split_partitions_records(seed in any::<u64>(), frac in 0.1..0.5f64) {
        let mut d = synth_datasets(&default_cities()[..1], &small(400), seed, 0.2).unwrap().remove(0);
        split_dataset(&mut d, frac, seed).unwrap();
        let (train, test) = (d.train(), d.test());
        prop_assert_eq!(train.len() + test.len(), d.len());
        let ids: std::collections::HashSet<u64> = train.iter().map(|r| r.record_id).collect();
        prop_assert!(test.iter().all(|r| !ids.contains(&r.record_id)));
        let want = frac * d.len() as f64;
        prop_assert!((test.len() as f64 - want).abs() <= N_CLASSES as f64);
    }

    #[test]
    fn features_have_declared_width_and_models_emit_distributions(seed in any::<u64>()) {
        let d = synth_datasets(&default_cities()[3..4], &small(500), seed, 0.25).unwrap().remove(0);
        let spec = FeatureSpec::default();
        let grids = GridSystem::default();
        let pipe = FeaturePipeline::fit(&spec, &d.train(), d.city.center, EarthModel::default(), &grids).unwrap();
        let tr = pipe.transform(&d.train()).unwrap();
        let te = pipe.transform(&d.test()).unwrap();
        prop_assert_eq!(tr.dim(), spec.dimension());
        prop_assert_eq!(te.columns.len(), spec.dimension());
        prop_assert!(te.x.iter().all(|v| v.is_finite()));
        prop_assert_eq!(pipe.transform(&d.test()).unwrap(), te.clone());

        let gbt = ModelParams::Gbt(GbtParams { num_round: 3, max_depth: 3, ..GbtParams::default() });
        for params in [ModelParams::Knn(KnnParams::default()), gbt] {
            let m = fit(&ModelSpec::new(params, seed), &tr.x, &tr.y).unwrap();
            let p = m.predict_proba(&te.x).unwrap();
            prop_assert_eq!(p.dim(), (te.rows(), N_CLASSES));
            for row in p.rows() {
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
