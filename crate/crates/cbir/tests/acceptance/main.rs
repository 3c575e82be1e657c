//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use cbir::corpus::{build_from_dir, Labeling};
use cbir::manifest::default_queries;
use cbir::report::{run_evaluation, EvalMode, EvalSettings};
use cbir::service::{self, AppState, QueryResponse, ServiceConfig};
use cbir::{encode_png, load_index, save_index, write_index};
use cbir_core::evaluation::{evaluate_technique_set, EvaluationConfig};
use cbir_core::features::{glcm, glcm_features, Offset};
use cbir_core::index::IndexOptions;
use cbir_core::matching::retrieve_single;
use cbir_core::{
    accuracy, crop, euclidean, extract, mean_summary, optimize_per_class, redundancy_factor, retrieve_combined_vectors,
    ClassSpec, CostMode, CropRect, EvaluationRow, FeatureIndex, FeatureVector, GrayImage, NoClock, RasterImage, Rgb,
    Technique, TechniqueSet,
};
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tower::ServiceExt;

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// (table, class, retrieved, relevant, printed accuracy, printed rf)
type FixtureRow = (&'static str, u32, usize, usize, f64, f64);

#[rustfmt::skip]
const TABLE_ROWS: &[FixtureRow] = &[
    ("AverageRGB", 1, 151, 19, 38.0, 0.51),
    ("AverageRGB", 2, 6, 3, 50.0, -0.94),
    ("AverageRGB", 3, 136, 6, 12.0, 0.36),
    ("AverageRGB", 4, 213, 28, 56.0, 1.13),
    ("AverageRGB", 5, 170, 50, 100.0, 0.70),
    ("AverageRGB", 6, 53, 12, 24.0, -0.47),
    ("AverageRGB", 7, 20, 20, 100.0, -0.8),
    ("AverageRGB", 8, 85, 41, 82.0, -0.15),
    ("AverageRGB", 9, 22, 12, 54.54, -0.78),
    ("AverageRGB", 10, 39, 17, 43.58, -0.61),
    ("ColorMoments", 1, 633, 12, 24.0, 5.33),
    ("ColorMoments", 2, 209, 22, 44.0, 1.09),
    ("ColorMoments", 3, 757, 5, 10.0, 6.57),
    ("ColorMoments", 4, 777, 16, 32.0, 6.77),
    ("ColorMoments", 5, 226, 50, 100.0, 1.26),
    ("ColorMoments", 6, 300, 12, 24.0, 2.00),
    ("ColorMoments", 7, 256, 42, 84.0, 1.56),
    ("ColorMoments", 8, 688, 42, 84.0, 5.88),
    ("ColorMoments", 9, 202, 20, 40.0, 1.02),
    ("ColorMoments", 10, 403, 21, 42.0, 3.03),
    ("Cooccurrence", 1, 25, 11, 44.0, -0.75),
    ("Cooccurrence", 2, 51, 10, 20.0, -0.49),
    ("Cooccurrence", 3, 44, 3, 6.8, -0.56),
    ("Cooccurrence", 4, 16, 11, 68.75, -0.84),
    ("Cooccurrence", 5, 58, 50, 100.0, -0.42),
    ("Cooccurrence", 6, 78, 7, 14.0, -0.22),
    ("Cooccurrence", 7, 64, 45, 90.0, -0.36),
    ("Cooccurrence", 8, 87, 33, 66.0, -0.13),
    ("Cooccurrence", 9, 37, 9, 18.0, -0.63),
    ("Cooccurrence", 10, 20, 3, 15.0, -0.80),
    ("LocalColorHistogram", 1, 327, 9, 18.0, 2.27),
    ("LocalColorHistogram", 2, 50, 7, 14.0, -0.50),
    ("LocalColorHistogram", 3, 18, 2, 11.11, -0.82),
    ("LocalColorHistogram", 4, 766, 10, 20.0, 6.66),
    ("LocalColorHistogram", 5, 271, 48, 96.0, 1.71),
    ("LocalColorHistogram", 6, 723, 10, 20.0, 6.23),
    ("LocalColorHistogram", 7, 407, 45, 90.0, 3.07),
    ("LocalColorHistogram", 8, 418, 26, 52.0, 3.18),
    ("LocalColorHistogram", 9, 35, 16, 45.71, -0.65),
    ("LocalColorHistogram", 10, 666, 14, 28.0, 5.66),
    ("GlobalColorHistogram", 1, 908, 24, 48.0, 8.08),
    ("GlobalColorHistogram", 2, 59, 6, 12.0, -0.41),
    ("GlobalColorHistogram", 3, 595, 9, 18.0, 4.95),
    ("GlobalColorHistogram", 4, 836, 22, 44.0, 7.36),
    ("GlobalColorHistogram", 5, 210, 50, 100.0, 1.10),
    ("GlobalColorHistogram", 6, 260, 19, 38.0, 1.60),
    ("GlobalColorHistogram", 7, 185, 43, 86.0, 0.85),
    ("GlobalColorHistogram", 8, 686, 43, 86.0, 5.86),
    ("GlobalColorHistogram", 9, 114, 17, 34.0, 1.14),
    ("GlobalColorHistogram", 10, 782, 30, 60.0, 6.82),
    ("GeometricMoment", 1, 357, 5, 10.0, 2.57),
    ("GeometricMoment", 2, 1000, 2, 4.0, 9.00),
    ("GeometricMoment", 3, 98, 2, 4.0, -0.02),
    ("GeometricMoment", 4, 1000, 7, 14.0, 9.00),
    ("GeometricMoment", 5, 447, 7, 14.0, 3.47),
    ("GeometricMoment", 6, 1000, 5, 10.0, 9.00),
    ("GeometricMoment", 7, 1000, 8, 16.0, 9.00),
    ("GeometricMoment", 8, 884, 8, 16.0, 7.84),
    ("GeometricMoment", 9, 1000, 7, 14.0, 9.00),
    ("GeometricMoment", 10, 915, 7, 14.0, 8.15),
    ("Combined", 1, 2, 2, 100.0, -0.98),
    ("Combined", 2, 1, 1, 100.0, -0.99),
    ("Combined", 3, 1, 1, 100.0, -0.99),
    ("Combined", 4, 6, 6, 100.0, -0.94),
    ("Combined", 5, 10, 10, 100.0, -0.90),
    ("Combined", 6, 7, 5, 71.42, -0.93),
    ("Combined", 7, 9, 9, 100.0, -0.91),
    ("Combined", 8, 16, 15, 93.75, -0.84),
    ("Combined", 9, 2, 2, 100.0, -0.98),
    ("Combined", 10, 2, 1, 50.0, -0.98),
];

#[rustfmt::skip]
const OPTIMIZED_ROWS: &[FixtureRow] = &[
    ("Optimized", 1, 298, 32, 64.0, 1.8),
    ("Optimized", 2, 6, 6, 100.0, -0.94),
    ("Optimized", 3, 7, 4, 57.14, -0.93),
    ("Optimized", 4, 6, 6, 100.0, -0.94),
    ("Optimized", 5, 56, 50, 100.0, -0.44),
    ("Optimized", 6, 9, 7, 77.77, -0.91),
    ("Optimized", 7, 45, 45, 100.0, -0.55),
    ("Optimized", 8, 54, 48, 96.0, -0.16),
    ("Optimized", 9, 10, 6, 60.0, -0.90),
    ("Optimized", 10, 373, 31, 62.0, 2.73),
];

const ACC_TOL: f64 = 0.01;
const RF_TOL: f64 = 0.005;
const CLASS_SIZE: usize = 100;

fn metric_fixtures() -> Check {
    let mut failures = Vec::new();
    let mut check = |what: String, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            failures.push(format!("{what}: computed {got:.4}, printed {want}"));
        }
    };
    for &(table, class, retrieved, relevant, acc, rf) in TABLE_ROWS {
        let got = accuracy(relevant, retrieved, Some(50)).map_err(|e| e.to_string())?;
        check(format!("{table} class {class} accuracy"), got, acc, ACC_TOL);
        check(
            format!("{table} class {class} RF"),
            redundancy_factor(retrieved, CLASS_SIZE),
            rf,
            RF_TOL,
        );
    }
    let example = accuracy(75, 100, Some(50)).map_err(|e| e.to_string())?;
    check("75-of-100 example accuracy".into(), example, 75.0, ACC_TOL);
    check(
        "125 retrieved example RF".into(),
        redundancy_factor(125, CLASS_SIZE),
        0.25,
        RF_TOL,
    );
    if failures.is_empty() {
        Ok(format!("{} rows + 2 worked examples", TABLE_ROWS.len()))
    } else {
        Err(format!("{} mismatches: {}", failures.len(), failures.join("; ")))
    }
}

fn printed_rows(rows: &[FixtureRow]) -> Vec<EvaluationRow> {
    rows.iter()
        .map(|&(_, class, retrieved, relevant, accuracy, rf)| EvaluationRow {
            class_label: format!("class{class}"),
            images_retrieved: retrieved,
            time: 0.0,
            relevant,
            accuracy,
            rf,
        })
        .collect()
}

fn table(name: &str) -> Vec<FixtureRow> {
    TABLE_ROWS.iter().copied().filter(|r| r.0 == name).collect()
}

fn mean_fixtures() -> Check {
    let mut failures = Vec::new();
    let mut check = |what: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            failures.push(format!("{what}: computed {got:.4}, printed {want}"));
        }
    };
    let avg = mean_summary(&printed_rows(&table("AverageRGB"))).map_err(|e| e.to_string())?;
    check("average RGB mean accuracy", avg.accuracy, 56.01, ACC_TOL);
    let comb = mean_summary(&printed_rows(&table("Combined"))).map_err(|e| e.to_string())?;
    check("combined mean accuracy", comb.accuracy, 91.51, ACC_TOL);
    check("combined mean RF", comb.rf, -0.90, RF_TOL);
    let opt = mean_summary(&printed_rows(OPTIMIZED_ROWS)).map_err(|e| e.to_string())?;
    check("optimized mean accuracy", opt.accuracy, 81.69, ACC_TOL);
    check("optimized mean RF", opt.rf, -0.124, RF_TOL);
    if failures.is_empty() {
        Ok("5 mean values".into())
    } else {
        Err(failures.join("; "))
    }
}

// Brute force over every ordered pixel pair; no span arithmetic.
fn glcm_oracle(levels: usize, w: usize, h: usize, data: &[u8], dx: i32, dy: i32) -> Option<[f64; 4]> {
    let mut counts = vec![0u64; levels * levels];
    let mut pairs = 0u64;
    for a in 0..w * h {
        for b in 0..w * h {
            let (ax, ay) = ((a % w) as i32, (a / w) as i32);
            let (bx, by) = ((b % w) as i32, (b / w) as i32);
            if bx - ax == dx && by - ay == dy {
                let (i, j) = (data[a] as usize, data[b] as usize);
                counts[i * levels + j] += 1;
                counts[j * levels + i] += 1;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return None;
    }
    let (mut energy, mut entropy, mut contrast, mut homogeneity) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let p = counts[i * levels + j] as f64 / (2 * pairs) as f64;
            let d = (i as f64 - j as f64).abs();
            energy += p * p;
            if p > 0.0 {
                entropy -= p * p.log2();
            }
            contrast += d * d * p;
            homogeneity += p / (1.0 + d);
        }
    }
    Some([energy, entropy, contrast, homogeneity])
}

fn glcm_equivalence() -> Check {
    let mut rng = StdRng::seed_from_u64(0x61c3);
    let mut compared = 0;
    let mut empty = 0;
    for n in 0..200 {
        let levels = [2, 4, 16][n % 3];
        let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let data: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..levels) as u8).collect();
        let gray = GrayImage::new(w, h, levels, data.clone()).map_err(|e| e.to_string())?;
        for offset in Offset::DIRECTIONS {
            let want = glcm_oracle(levels, w, h, &data, offset.dx, offset.dy);
            match (glcm(&gray, offset), want) {
                (Ok(m), Some(want)) => {
                    let got = glcm_features(&m).to_array();
                    for (k, (g, e)) in got.iter().zip(want).enumerate() {
                        ensure((g - e).abs() <= 1e-9, || {
                            format!("image {n} ({w}x{h}, L={levels}) offset {offset:?} feature {k}: {g} vs {e}")
                        })?;
                    }
                    compared += 1;
                }
                (Err(_), None) => empty += 1,
                (got, want) => {
                    return Err(format!(
                        "image {n} ({w}x{h}) offset {offset:?}: implementation {}, oracle {}",
                        if got.is_ok() { "found pairs" } else { "found none" },
                        if want.is_some() { "found pairs" } else { "found none" },
                    ))
                }
            }
        }
    }
    Ok(format!("{compared} matrices matched, {empty} pairless cases agreed"))
}

fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

// Exact integer power sums; central moments follow from them without rounding.
fn moment_oracle(img: &RasterImage) -> ([f64; 3], [f64; 9]) {
    let n = img.pixels().len() as i128;
    let mut avg = [0.0; 3];
    let mut moments = [0.0; 9];
    for ch in 0..3 {
        let (mut s1, mut s2, mut s3) = (0i128, 0i128, 0i128);
        for p in img.pixels() {
            let v = p.channels()[ch] as i128;
            s1 += v;
            s2 += v * v;
            s3 += v * v * v;
        }
        let mean = s1 as f64 / n as f64;
        let var = (n * s2 - s1 * s1) as f64 / (n * n) as f64;
        let m3 = (n * n * s3 - 3 * n * s1 * s2 + 2 * s1 * s1 * s1) as f64 / (n * n * n) as f64;
        avg[ch] = mean;
        moments[3 * ch] = mean;
        moments[3 * ch + 1] = var;
        moments[3 * ch + 2] = m3.cbrt();
    }
    (avg, moments)
}

fn geometric_on_canvas(blob: &RasterImage, ox: usize, oy: usize, side: usize) -> Result<f64, String> {
    let canvas = RasterImage::from_fn(side, side, |x, y| {
        if x >= ox && y >= oy && x - ox < blob.width() && y - oy < blob.height() {
            blob.pixel(x - ox, y - oy)
        } else {
            Rgb::BLACK
        }
    })
    .map_err(|e| e.to_string())?;
    Ok(extract(&canvas, Technique::GeometricMoment)
        .map_err(|e| e.to_string())?
        .values()[0])
}

fn moment_oracles() -> Check {
    let mut rng = StdRng::seed_from_u64(0x3017);
    for n in 0..200 {
        let img = common::noise_image(&mut rng, 1, 8);
        let (avg, moments) = moment_oracle(&img);
        let got_avg = extract(&img, Technique::AverageRgb).map_err(|e| e.to_string())?;
        let got_mom = extract(&img, Technique::ColorMoments).map_err(|e| e.to_string())?;
        for (k, (g, e)) in got_avg.values().iter().zip(avg).enumerate() {
            ensure(close_rel(*g, e, 1e-9), || {
                format!("image {n} average component {k}: {g} vs {e}")
            })?;
        }
        for (k, (g, e)) in got_mom.values().iter().zip(moments).enumerate() {
            ensure(close_rel(*g, e, 1e-9), || {
                format!("image {n} moment component {k}: {g} vs {e}")
            })?;
        }
    }
    let mut worst: f64 = 0.0;
    for n in 0..200 {
        let blob = common::noise_image(&mut rng, 1, 8);
        let side = 32;
        let a = geometric_on_canvas(
            &blob,
            rng.gen_range(0..=side - blob.width()),
            rng.gen_range(0..=side - blob.height()),
            side,
        )?;
        let b = geometric_on_canvas(
            &blob,
            rng.gen_range(0..=side - blob.width()),
            rng.gen_range(0..=side - blob.height()),
            side,
        )?;
        let drift = if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        };
        worst = worst.max(drift);
        ensure(drift <= 1e-6, || {
            format!("blob {n}: moment {a} vs {b}, drift {drift:e}")
        })?;
    }
    Ok(format!("400 images, worst translation drift {worst:.1e}"))
}

fn distance_axioms() -> Check {
    let mut rng = StdRng::seed_from_u64(0xd157);
    for n in 0..1000 {
        let t = Technique::ALL[n % 6];
        let scale = [1.0, 255.0, 1e-3][n % 3];
        let mut draw = || {
            let values = (0..t.dim()).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            FeatureVector::new(t, values).expect("finite")
        };
        let (a, b, c) = (draw(), draw(), draw());
        let d = |x: &FeatureVector, y: &FeatureVector| euclidean(x, y).expect("same technique");
        ensure(d(&a, &a) == 0.0, || format!("triple {n}: d(a,a) != 0"))?;
        ensure(d(&a, &b) >= 0.0, || format!("triple {n}: negative distance"))?;
        ensure(d(&a, &b) == d(&b, &a), || format!("triple {n}: asymmetric"))?;
        ensure(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9, || {
            format!("triple {n}: triangle violated")
        })?;
    }
    Ok("1000 triples".into())
}

/// Distances recomputed from raw record vectors with the index's min-max bounds.
fn oracle_distances(ix: &FeatureIndex, query: usize, t: Technique) -> Vec<f64> {
    let (min, max) = ix.stats().bounds(t);
    let norm = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(k, &x)| {
                if max[k] > min[k] {
                    (x - min[k]) / (max[k] - min[k])
                } else {
                    0.0
                }
            })
            .collect()
    };
    let q = norm(ix.records()[query].vector(t).values());
    ix.records()
        .iter()
        .map(|r| {
            let v = norm(r.vector(t).values());
            let mut s = 0.0;
            for k in 0..v.len() {
                s += (q[k] - v[k]) * (q[k] - v[k]);
            }
            s.sqrt()
        })
        .collect()
}

fn oracle_hits(ix: &FeatureIndex, query: usize, ts: TechniqueSet) -> Vec<(String, f64)> {
    let per: Vec<(Technique, Vec<f64>)> = ts.iter().map(|t| (t, oracle_distances(ix, query, t))).collect();
    let mut hits: Vec<(String, f64)> = (0..ix.len())
        .filter(|&k| per.iter().all(|(t, d)| d[k] <= ix.thresholds().get(*t)))
        .map(|k| {
            let mean = per.iter().map(|(_, d)| d[k]).sum::<f64>() / per.len() as f64;
            (ix.records()[k].id.clone(), mean)
        })
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    hits
}

fn hit_ids(ix: &FeatureIndex, q: usize, ts: TechniqueSet) -> Result<BTreeSet<String>, String> {
    let r = retrieve_combined_vectors(ix.records()[q].vectors(), ix, ts, ix.thresholds(), &NoClock)
        .map_err(|e| e.to_string())?;
    Ok(r.hits.into_iter().map(|h| h.id).collect())
}

fn retrieval_properties() -> Check {
    let ix = common::synthetic_index(3, 10);
    ensure(ix.len() == 30, || "expected 30 records".into())?;
    let mut checks = 0;
    for q in 0..ix.len() {
        let rec = &ix.records()[q];
        for t in Technique::ALL {
            let tau = ix.thresholds().get(t);
            let mut prev: Option<BTreeSet<String>> = None;
            for factor in [0.0, 0.25, 0.5, 1.0, 1.5, 3.0, 10.0] {
                let r = retrieve_single(rec.vector(t), &ix, tau * factor, &NoClock).map_err(|e| e.to_string())?;
                let ids: BTreeSet<String> = r.hits.into_iter().map(|h| h.id).collect();
                if let Some(p) = &prev {
                    ensure(p.is_subset(&ids), || {
                        format!("{t}: hits at larger threshold lost ids for query {}", rec.id)
                    })?;
                }
                prev = Some(ids);
                checks += 1;
            }
        }
        let sets: Vec<(TechniqueSet, BTreeSet<String>)> = TechniqueSet::non_empty_subsets()
            .map(|ts| hit_ids(&ix, q, ts).map(|h| (ts, h)))
            .collect::<Result<_, _>>()?;
        for (small, small_hits) in &sets {
            for (big, big_hits) in &sets {
                if small.is_subset(*big) {
                    ensure(big_hits.is_subset(small_hits), || {
                        format!("query {}: {big} returned ids outside {small}", rec.id)
                    })?;
                    checks += 1;
                }
            }
        }
        let got = retrieve_combined_vectors(rec.vectors(), &ix, TechniqueSet::ALL, ix.thresholds(), &NoClock)
            .map_err(|e| e.to_string())?;
        let want = oracle_hits(&ix, q, TechniqueSet::ALL);
        ensure(got.hits.len() == want.len(), || {
            format!("query {}: {} hits vs oracle {}", rec.id, got.hits.len(), want.len())
        })?;
        for (h, (id, d)) in got.hits.iter().zip(&want) {
            ensure(&h.id == id && (h.distance - d).abs() <= 1e-12, || {
                format!("query {}: hit {} at {} vs oracle {id} at {d}", rec.id, h.id, h.distance)
            })?;
        }
        checks += 1;
    }
    Ok(format!("{checks} property checks on 30 records"))
}

fn optimizer_correctness() -> Check {
    let ix = common::confusable_index(3, 10);
    let classes = ClassSpec::from_index(&ix).map_err(|e| e.to_string())?;
    let queries = default_queries(&classes);
    let config = EvaluationConfig {
        cap: Some(50),
        cost: CostMode::ScanCount,
    };
    let outcomes =
        optimize_per_class(&ix, &classes, &queries, ix.thresholds(), &config, &NoClock).map_err(|e| e.to_string())?;
    ensure(outcomes.len() == 3, || format!("{} outcomes", outcomes.len()))?;
    for (class, out) in classes.iter().zip(&outcomes) {
        let q = queries.iter().find(|q| q.class_label == class.class_label).unwrap();
        let qk = ix.position(&q.query_id).unwrap();
        // (accuracy, cost, |rf|, member ordinals, retrieved, relevant)
        let mut best: Option<(f64, f64, f64, Vec<usize>, usize, usize)> = None;
        for mask in 1u8..64 {
            let ts = TechniqueSet::from_bits(mask).unwrap();
            let hits = oracle_hits(&ix, qk, ts);
            let retrieved = hits.len();
            let relevant = hits.iter().filter(|(id, _)| class.member_ids.contains(id)).count();
            let acc = 100.0 * relevant.min(50) as f64 / retrieved.min(50) as f64;
            let cost = (ix.len() * ts.len()) as f64;
            let rf = (retrieved as f64 - class.size() as f64) / class.size() as f64;
            let ords: Vec<usize> = (0..6).filter(|b| mask & (1 << b) != 0).collect();
            let cand = (acc, cost, rf.abs(), ords, retrieved, relevant);
            let better = match &best {
                None => true,
                Some(b) => {
                    cand.0 > b.0
                        || (cand.0 == b.0
                            && (cand.1 < b.1 || (cand.1 == b.1 && (cand.2 < b.2 || (cand.2 == b.2 && cand.3 < b.3)))))
                }
            };
            if better {
                best = Some(cand);
            }
        }
        let (acc, cost, _, ords, retrieved, relevant) = best.unwrap();
        let chosen: Vec<usize> = out.chosen_subset.iter().map(Technique::ordinal).collect();
        ensure(chosen == ords, || {
            format!(
                "{}: optimizer chose {chosen:?}, enumeration {ords:?}",
                class.class_label
            )
        })?;
        ensure(
            out.row.images_retrieved == retrieved
                && out.row.relevant == relevant
                && (out.row.accuracy - acc).abs() < 1e-9
                && out.row.time == cost,
            || format!("{}: row {:?} differs from enumeration", class.class_label, out.row),
        )?;
    }
    for t in Technique::ALL {
        let rows = evaluate_technique_set(
            &ix,
            &classes,
            &queries,
            TechniqueSet::single(t),
            ix.thresholds(),
            &config,
            &NoClock,
        )
        .map_err(|e| e.to_string())?;
        for (row, out) in rows.iter().zip(&outcomes) {
            ensure(out.row.accuracy >= row.accuracy, || {
                format!(
                    "{}: optimized {} below {t} {}",
                    row.class_label, out.row.accuracy, row.accuracy
                )
            })?;
        }
    }
    let picked: Vec<String> = outcomes
        .iter()
        .map(|o| format!("{} {:.1}%", o.chosen_subset, o.row.accuracy))
        .collect();
    Ok(format!("chosen subsets {}", picked.join(" | ")))
}

fn materialize(img: &RasterImage, r: CropRect) -> RasterImage {
    RasterImage::from_fn(r.w, r.h, |x, y| img.pixel(r.x + x, r.y + y)).unwrap()
}

fn random_rect(rng: &mut StdRng, w: usize, h: usize) -> CropRect {
    let cw = rng.gen_range(4..=w);
    let ch = rng.gen_range(4..=h);
    CropRect::new(rng.gen_range(0..=w - cw), rng.gen_range(0..=h - ch), cw, ch)
}

async fn post_query(state: &AppState, body: serde_json::Value) -> Result<QueryResponse, String> {
    let req = Request::post("/api/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = service::router(state.clone())
        .oneshot(req)
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    if status != StatusCode::OK {
        return Err(format!("status {status}: {}", String::from_utf8_lossy(&bytes)));
    }
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn crop_equivalence() -> Check {
    let mut rng = StdRng::seed_from_u64(0xc409);
    for n in 0..50 {
        let img = common::noise_image(&mut rng, 4, 40);
        let rect = random_rect(&mut rng, img.width(), img.height());
        let cropped = crop(&img, rect).map_err(|e| e.to_string())?;
        let sub = materialize(&img, rect);
        for t in Technique::ALL {
            let a = extract(&cropped, t).map_err(|e| e.to_string())?;
            let b = extract(&sub, t).map_err(|e| e.to_string())?;
            let same = a
                .values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("pair {n}: {t} differs for crop {rect}"))?;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = common::write_corpus(dir.path(), 3, 4, 40);
    let built = build_from_dir(dir.path(), Labeling::Dirname, &IndexOptions::default()).map_err(|e| e.to_string())?;
    let state = AppState::new(Some(built.index), ServiceConfig::default());
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let b64 = |bytes: &[u8]| base64::engine::general_purpose::STANDARD.encode(bytes);
    rt.block_on(async {
        for n in 0..50 {
            let path = &paths[rng.gen_range(0..paths.len())];
            let original = std::fs::read(path).map_err(|e| e.to_string())?;
            let img = cbir::decode_image(&original).map_err(|e| e.to_string())?;
            let rect = random_rect(&mut rng, img.width(), img.height());
            let with_rect = post_query(
                &state,
                serde_json::json!({
                    "image_base64": b64(&original),
                    "crop": rect,
                }),
            )
            .await?;
            let pre_cropped = post_query(
                &state,
                serde_json::json!({
                    "image_base64": b64(&encode_png(&materialize(&img, rect))),
                }),
            )
            .await?;
            let key = |r: &QueryResponse| -> Vec<(String, u64)> {
                r.hits.iter().map(|h| (h.id.clone(), h.distance.to_bits())).collect()
            };
            ensure(key(&with_rect) == key(&pre_cropped), || {
                format!("API pair {n}: hits differ for crop {rect}")
            })?;
        }
        Ok::<_, String>(())
    })?;
    Ok("50 extractor pairs bit-identical, 50 API pairs identical".into())
}

fn directional_reproduction() -> Check {
    let ix = common::synthetic_index(10, 20);
    let classes = ClassSpec::from_index(&ix).map_err(|e| e.to_string())?;
    let settings = EvalSettings {
        cost: CostMode::ScanCount,
        ..EvalSettings::default()
    };
    let report =
        run_evaluation(&ix, &default_queries(&classes), EvalMode::Optimize, &settings).map_err(|e| e.to_string())?;
    let c = report.comparison.ok_or("no comparison in report")?;
    let summary = format!(
        "accuracy {:.2} combined vs {:.2} individual; RF {:.3} vs {:.3}; cost {:.1} optimized vs {:.1} combined",
        c.combined.accuracy, c.individual.accuracy, c.combined.rf, c.individual.rf, c.optimized.time, c.combined.time
    );
    ensure(c.combined.accuracy > c.individual.accuracy, || {
        format!("(a) fails: {summary}")
    })?;
    ensure(c.combined.rf < c.individual.rf, || format!("(b) fails: {summary}"))?;
    ensure(c.optimized.time < c.combined.time, || format!("(c) fails: {summary}"))?;
    Ok(summary)
}

fn index_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    common::write_corpus(&corpus, 3, 5, 24);
    let build = || -> Result<(FeatureIndex, Vec<u8>), String> {
        let out = build_from_dir(&corpus, Labeling::Dirname, &IndexOptions::default()).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        write_index(&out.index, &mut bytes).map_err(|e| e.to_string())?;
        Ok((out.index, bytes))
    };
    let (ix, first) = build()?;
    let (_, second) = build()?;
    ensure(first == second, || "rebuilt index file differs".into())?;
    let path = dir.path().join("corpus.idx");
    save_index(&ix, &path).map_err(|e| e.to_string())?;
    let loaded = load_index(&path).map_err(|e| e.to_string())?;
    ensure(loaded.records() == ix.records(), || "records differ after load".into())?;
    ensure(loaded.stats() == ix.stats(), || "stats differ after load".into())?;
    ensure(loaded == ix, || "index differs after load".into())?;
    ensure(std::fs::read(&path).map_err(|e| e.to_string())? == first, || {
        "saved file differs from serialized bytes".into()
    })?;
    Ok(format!(
        "{} records, {} bytes, rebuild byte-identical",
        ix.len(),
        first.len()
    ))
}

fn wang_corpus() -> Option<Check> {
    let dir = std::env::var_os("CBIR_WANG_DIR")?;
    Some((|| {
        let dir = std::path::PathBuf::from(dir);
        let nested = std::fs::read_dir(&dir)
            .map_err(|e| e.to_string())?
            .any(|e| e.is_ok_and(|e| e.path().is_dir()));
        let labeling = if nested {
            Labeling::Dirname
        } else {
            Labeling::WangNumbering
        };
        let out = build_from_dir(&dir, labeling, &IndexOptions::default()).map_err(|e| e.to_string())?;
        ensure(out.failures.is_empty(), || {
            format!("{} files failed", out.failures.len())
        })?;
        ensure(out.index.len() == 1000, || {
            format!("{} records indexed", out.index.len())
        })?;
        let classes = ClassSpec::from_index(&out.index).map_err(|e| e.to_string())?;
        let class5 = classes.get(4).ok_or("fewer than 5 classes")?;
        let queries = default_queries(std::slice::from_ref(class5));
        let rows = evaluate_technique_set(
            &out.index,
            std::slice::from_ref(class5),
            &queries,
            TechniqueSet::ALL,
            out.index.thresholds(),
            &EvaluationConfig::default(),
            &NoClock,
        )
        .map_err(|e| e.to_string())?;
        let acc = rows[0].accuracy;
        ensure(acc >= 90.0, || {
            format!("{} combined accuracy {acc:.2}", class5.class_label)
        })?;
        Ok(format!(
            "1000 records, {} combined accuracy {acc:.2}",
            class5.class_label
        ))
    })())
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "metric formula fixtures",
            budget: Duration::from_secs(1),
            run: metric_fixtures,
        },
        Criterion {
            name: "mean summary fixtures",
            budget: Duration::from_secs(1),
            run: mean_fixtures,
        },
        Criterion {
            name: "co-occurrence oracle equivalence",
            budget: Duration::from_secs(5),
            run: glcm_equivalence,
        },
        Criterion {
            name: "moment oracles",
            budget: Duration::from_secs(5),
            run: moment_oracles,
        },
        Criterion {
            name: "distance axioms",
            budget: Duration::from_secs(1),
            run: distance_axioms,
        },
        Criterion {
            name: "retrieval properties",
            budget: Duration::from_secs(5),
            run: retrieval_properties,
        },
        Criterion {
            name: "optimizer correctness",
            budget: Duration::from_secs(30),
            run: optimizer_correctness,
        },
        Criterion {
            name: "crop equivalence end-to-end",
            budget: Duration::from_secs(10),
            run: crop_equivalence,
        },
        Criterion {
            name: "directional reproduction",
            budget: Duration::from_secs(120),
            run: directional_reproduction,
        },
        Criterion {
            name: "index round-trip",
            budget: Duration::from_secs(5),
            run: index_round_trip,
        },
    ];
    let mut failed = 0;
    let mut line = |name: &str, budget: Duration, start: Instant, result: Check| {
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed <= budget {
                Ok(msg)
            } else {
                Err(format!(
                    "took {:.2}s, budget {}s",
                    elapsed.as_secs_f64(),
                    budget.as_secs()
                ))
            }
        });
        match result {
            Ok(msg) => println!("PASS  {name} ({:.2}s): {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} ({:.2}s): {msg}", elapsed.as_secs_f64());
            }
        }
    };
    for c in criteria {
        let start = Instant::now();
        line(c.name, c.budget, start, (c.run)());
    }
    let start = Instant::now();
    match wang_corpus() {
        Some(result) => line("WANG corpus class 5", Duration::from_secs(600), start, result),
        None => println!("SKIP  WANG corpus class 5: set CBIR_WANG_DIR to run"),
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
