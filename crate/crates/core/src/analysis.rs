//! Post-hoc analytics over estimated interactions: cross-correlation
//! affinities between symmetrised ADI traces, the matching chordal distance
//! matrix, velocity-angle profiles, and directed label-pair averages.

use std::collections::{BTreeMap, HashMap};
use std::io;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::{Label, Point, SampledTrack};
use crate::par::Exec;
use crate::pipeline::{GatedPair, InteractionRecord};

/// A time-indexed scalar series.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub times: &'a [i64],
    pub values: &'a [f64],
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Maximum over lags `|l| <= max_lag` of the correlation between `s1(t)` and
/// `s2(t + l)`, each lag standardised on its own common support. Lags with
/// fewer than `min_overlap` common samples are skipped; `None` if all are.
pub fn xcorr_affinity(
    s1: Series<'_>,
    s2: Series<'_>,
    max_lag: usize,
    min_overlap: usize,
) -> Option<f64> {
    let lookup: HashMap<i64, f64> = s2
        .times
        .iter()
        .copied()
        .zip(s2.values.iter().copied())
        .collect();
    let lag = max_lag as i64;
    let mut best: Option<f64> = None;
    let mut pairs = Vec::with_capacity(s1.times.len());
    for l in -lag..=lag {
        pairs.clear();
        pairs.extend(
            s1.times
                .iter()
                .zip(s1.values)
                .filter_map(|(&t, &a)| lookup.get(&(t + l)).map(|&b| (a, b))),
        );
        if pairs.len() < min_overlap.max(2) {
            continue;
        }
        let r = pearson(&pairs);
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best
}

/// Symmetric affinity matrix with unit diagonal. `mask[k][l]` is false where
/// the pair had too little overlap and the entry was set to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub keys: Vec<String>,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

struct Trace {
    scene: String,
    times: Vec<i64>,
    values: Vec<f64>,
}

impl Trace {
    fn of(rec: &InteractionRecord) -> Self {
        let rows = rec.rows.iter().filter(|r| !r.burn_in);
        let (times, values) = rows.map(|r| (r.t, r.adi_sym())).unzip();
        Trace {
            scene: rec.scene.clone(),
            times,
            values,
        }
    }

    fn rebased(&self) -> Vec<i64> {
        let start = self.times.first().copied().unwrap_or(0);
        self.times.iter().map(|t| t - start).collect()
    }
}

/// Pairwise affinities between the records' symmetrised ADI (burn-in rows
/// dropped). Records from the same scene are aligned on absolute sample
/// time; across scenes both traces are shifted to start at 0.
pub fn affinity_matrix(
    records: &[InteractionRecord],
    max_lag: usize,
    min_overlap: usize,
    exec: Exec,
) -> AffinityMatrix {
    let m = records.len();
    let traces: Vec<Trace> = records.iter().map(Trace::of).collect();
    let index_pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|k| ((k + 1)..m).map(move |l| (k, l)))
        .collect();
    let entries = exec.map(&index_pairs, |&(k, l)| {
        let (a, b) = (&traces[k], &traces[l]);
        if a.scene == b.scene {
            xcorr_affinity(
                Series {
                    times: &a.times,
                    values: &a.values,
                },
                Series {
                    times: &b.times,
                    values: &b.values,
                },
                max_lag,
                min_overlap,
            )
        } else {
            let (ta, tb) = (a.rebased(), b.rebased());
            xcorr_affinity(
                Series {
                    times: &ta,
                    values: &a.values,
                },
                Series {
                    times: &tb,
                    values: &b.values,
                },
                max_lag,
                min_overlap,
            )
        }
    });
    let mut values = DMatrix::identity(m, m);
    let mut mask = DMatrix::from_element(m, m, false);
    for k in 0..m {
        mask[(k, k)] = true;
    }
    for (&(k, l), a) in index_pairs.iter().zip(entries) {
        if let Some(a) = a {
            values[(k, l)] = a;
            values[(l, k)] = a;
            mask[(k, l)] = true;
            mask[(l, k)] = true;
        }
    }
    AffinityMatrix {
        keys: records.iter().map(InteractionRecord::key).collect(),
        values,
        mask,
    }
}

/// Elementwise `sqrt(2 (1 - a))`.
pub fn to_distance(affinity: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(bad) = affinity.iter().find(|a| !(a.abs() <= 1.0 + 1e-9)) {
        return Err(Error::Domain(format!("affinity {bad} outside [-1, 1]")));
    }
    let mut d = affinity.map(|a| (2.0 * (1.0 - a)).max(0.0).sqrt());
    for k in 0..d.nrows().min(d.ncols()) {
        d[(k, k)] = 0.0;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityRow {
    pub t: i64,
    /// Pixels per sample.
    pub v: Point,
    pub speed: f64,
}

/// Central differences inside each run of consecutive samples, one-sided at
/// the run ends. Isolated samples get no row.
pub fn velocity(track: &SampledTrack) -> Vec<VelocityRow> {
    let mut out = Vec::with_capacity(track.len());
    for seg in track.segments() {
        if seg.len() < 2 {
            continue;
        }
        let p = &track.positions[seg.clone()];
        let times = &track.times[seg];
        let n = p.len();
        for k in 0..n {
            let (a, b, span) = match k {
                0 => (p[0], p[1], 1.0),
                _ if k == n - 1 => (p[n - 2], p[n - 1], 1.0),
                _ => (p[k - 1], p[k + 1], 2.0),
            };
            let v = [(b[0] - a[0]) / span, (b[1] - a[1]) / span];
            out.push(VelocityRow {
                t: times[k],
                v,
                speed: v[0].hypot(v[1]),
            });
        }
    }
    out
}

const MIN_SPEED: f64 = 1e-6;

/// Angle between two velocity vectors in `[0, π]`; `None` if either is
/// slower than 1e-6 px/sample.
pub fn velocity_angle(vi: Point, vj: Point) -> Option<f64> {
    let (ni, nj) = (vi[0].hypot(vi[1]), vj[0].hypot(vj[1]));
    if ni < MIN_SPEED || nj < MIN_SPEED {
        return None;
    }
    // atan2 keeps full precision near 0 and π, where acos of the clipped
    // cosine does not.
    let dot = vi[0] * vj[0] + vi[1] * vj[1];
    let cross = vi[0] * vj[1] - vi[1] * vj[0];
    Some(cross.abs().atan2(dot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairVelocityRow {
    pub actor_i: u64,
    pub actor_j: u64,
    pub t: i64,
    pub speed_i: f64,
    pub speed_j: f64,
    pub angle: Option<f64>,
}

impl PairVelocityRow {
    pub fn total_velocity(&self) -> f64 {
        self.speed_i + self.speed_j
    }
}

/// Velocity profile of a gated pair over its gated times.
pub fn pair_velocity(a: &SampledTrack, b: &SampledTrack, pair: &GatedPair) -> Vec<PairVelocityRow> {
    let va: HashMap<i64, VelocityRow> = velocity(a).into_iter().map(|r| (r.t, r)).collect();
    let vb: HashMap<i64, VelocityRow> = velocity(b).into_iter().map(|r| (r.t, r)).collect();
    pair.times
        .iter()
        .filter_map(|t| {
            let (ra, rb) = (va.get(t)?, vb.get(t)?);
            Some(PairVelocityRow {
                actor_i: a.actor_id,
                actor_j: b.actor_id,
                t: *t,
                speed_i: ra.speed,
                speed_j: rb.speed,
                angle: velocity_angle(ra.v, rb.v),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TypeCell {
    pub sum: f64,
    pub count: usize,
}

impl TypeCell {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Directed mean ADI per `(source label, target label)`. Absent keys are
/// missing cells, not zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypeMatrix {
    pub cells: BTreeMap<(Label, Label), TypeCell>,
}

impl TypeMatrix {
    pub fn get(&self, source: &Label, target: &Label) -> Option<f64> {
        self.cells
            .get(&(source.clone(), target.clone()))
            .map(TypeCell::mean)
    }
}

/// Averages `ADI^{a→b}` over all non-burn-in samples of every record, keyed
/// by the labels of `a` and `b`. Both directions of each record contribute.
pub fn type_average_matrix(records: &[InteractionRecord]) -> Result<TypeMatrix> {
    let mut m = TypeMatrix::default();
    for rec in records {
        let (Some(li), Some(lj)) = (&rec.label_i, &rec.label_j) else {
            return Err(Error::Domain(format!(
                "record {} has no actor labels",
                rec.key()
            )));
        };
        for r in rec.rows.iter().filter(|r| !r.burn_in) {
            for (src, dst, v) in [(li, lj, r.adi_ij), (lj, li, r.adi_ji)] {
                let cell = m.cells.entry((src.clone(), dst.clone())).or_default();
                cell.sum += v;
                cell.count += 1;
            }
        }
    }
    Ok(m)
}

/// Fills record labels from the scene's tracks.
pub fn attach_labels(records: &mut [InteractionRecord], tracks: &[SampledTrack]) {
    let by_id: HashMap<u64, &Label> = tracks.iter().map(|t| (t.actor_id, &t.label)).collect();
    for rec in records {
        rec.label_i = by_id.get(&rec.actor_i).map(|l| (*l).clone());
        rec.label_j = by_id.get(&rec.actor_j).map(|l| (*l).clone());
    }
}

/// Dense square matrix with the keys as header row and first column.
pub fn write_matrix_csv<W: io::Write>(keys: &[String], m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("key").chain(keys.iter().map(String::as_str)))?;
    for (k, key) in keys.iter().enumerate() {
        let row: Vec<String> = (0..m.ncols()).map(|l| m[(k, l)].to_string()).collect();
        w.write_record(std::iter::once(key.clone()).chain(row))?;
    }
    w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

pub fn write_type_matrix_csv<W: io::Write>(m: &TypeMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source_label", "target_label", "mean_adi", "count"])?;
    for ((src, dst), cell) in &m.cells {
        w.write_record([
            src.to_string(),
            dst.to_string(),
            cell.mean().to_string(),
            cell.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<type matrix csv>", e))?;
    Ok(())
}

pub fn write_velocity_csv<W: io::Write>(rows: &[PairVelocityRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair", "t", "v_i", "v_j", "total_velocity", "angle"])?;
    for r in rows {
        w.write_record([
            format!("{}:{}", r.actor_i, r.actor_j),
            r.t.to_string(),
            r.speed_i.to_string(),
            r.speed_j.to_string(),
            r.total_velocity().to_string(),
            r.angle.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<velocity csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::InteractionRow;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    fn series(values: &[f64]) -> (Vec<i64>, Vec<f64>) {
        ((0..values.len() as i64).collect(), values.to_vec())
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn record(
        scene: &str,
        i: u64,
        j: u64,
        labels: (&str, &str),
        adi: &[(f64, f64)],
    ) -> InteractionRecord {
        InteractionRecord {
            scene: scene.into(),
            actor_i: i,
            actor_j: j,
            label_i: Some(Label::new(labels.0)),
            label_j: Some(Label::new(labels.1)),
            rows: adi
                .iter()
                .enumerate()
                .map(|(t, &(ij, ji))| InteractionRow {
                    t: t as i64,
                    di_inst_ij: ij,
                    adi_ij: ij,
                    di_inst_ji: ji,
                    adi_ji: ji,
                    burn_in: false,
                })
                .collect(),
        }
    }

    #[test]
    fn xcorr_examples() {
        let s = noise(80, 1);
        let (t, v) = series(&s);
        let a = Series {
            times: &t,
            values: &v,
        };
        assert!((xcorr_affinity(a, a, 50, 20).unwrap() - 1.0).abs() < 1e-12);

        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let b = Series {
            times: &t,
            values: &neg,
        };
        assert!((xcorr_affinity(a, b, 0, 20).unwrap() + 1.0).abs() < 1e-12);
        assert!(xcorr_affinity(a, b, 10, 20).unwrap() < 1.0);

        let shifted: Vec<f64> = s[3..].to_vec();
        let (ts, _) = series(&shifted);
        let c = Series {
            times: &ts,
            values: &shifted,
        };
        assert!((xcorr_affinity(a, c, 3, 20).unwrap() - 1.0).abs() < 1e-9);
        assert!(xcorr_affinity(a, c, 2, 20).unwrap() < 0.9);

        let short = series(&s[..10]);
        let d = Series {
            times: &short.0,
            values: &short.1,
        };
        assert_eq!(xcorr_affinity(a, d, 5, 20), None);

        let flat = vec![2.0; 80];
        let f = Series {
            times: &t,
            values: &flat,
        };
        assert_eq!(xcorr_affinity(a, f, 5, 20), Some(0.0));
    }

    #[test]
    fn affinity_matrix_examples() {
        let adi: Vec<(f64, f64)> = noise(40, 3).iter().map(|&x| (x, 0.5 * x)).collect();
        let r1 = record("v0", 1, 2, ("Pedestrian", "Biker"), &adi);
        let r2 = record("v1", 5, 6, ("Pedestrian", "Biker"), &adi);
        let a = affinity_matrix(&[r1.clone(), r2.clone()], 50, 20, Exec::Sequential);
        assert_eq!(a.keys, vec!["v0:1:2", "v1:5:6"]);
        for x in a.values.iter() {
            assert!((x - 1.0).abs() < 1e-12);
        }
        let other = record(
            "v0",
            3,
            4,
            ("Biker", "Cart"),
            &noise(40, 4).iter().map(|&x| (x, x)).collect::<Vec<_>>(),
        );
        let tiny = record("v0", 7, 8, ("Biker", "Cart"), &[(1.0, 1.0); 5]);
        let recs = [r1, r2, other, tiny];
        let a = affinity_matrix(&recs, 10, 20, Exec::Parallel);
        assert_eq!(a.values, a.values.transpose());
        assert!((0..4).all(|k| a.values[(k, k)] == 1.0));
        assert!(!a.mask[(0, 3)] && a.values[(0, 3)] == 0.0);
        assert_eq!(a, affinity_matrix(&recs, 10, 20, Exec::Sequential));
    }

    #[test]
    fn distance_examples() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, -1.0]);
        let d = to_distance(&a).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(0, 1)], SQRT_2);
        assert_eq!(d[(0, 2)], 2.0);
        assert!(to_distance(&DMatrix::from_element(1, 1, 1.5)).is_err());
    }

    #[test]
    fn velocity_examples() {
        let mk = |xs: &[f64]| SampledTrack {
            actor_id: 1,
            label: Label::new("p"),
            times: (0..xs.len() as i64).collect(),
            positions: xs.iter().map(|&x| [x, 0.0]).collect(),
        };
        assert!(velocity(&mk(&[3.0; 5]))
            .iter()
            .all(|r| r.v == [0.0, 0.0] && r.speed == 0.0));
        let lin = velocity(&mk(&[0.0, 2.0, 4.0, 6.0, 8.0]));
        assert!(lin.iter().all(|r| r.v == [2.0, 0.0] && r.speed == 2.0));
        let v = velocity(&mk(&[0.0, 1.0, 4.0]));
        assert_eq!(v[1].v[0], 2.0);
        assert_eq!(v[0].v[0], 1.0);
        assert_eq!(v[2].v[0], 3.0);
        assert!(velocity(&mk(&[1.0])).is_empty());
    }

    #[test]
    fn angle_examples() {
        assert_eq!(velocity_angle([1.0, 1.0], [2.0, 2.0]), Some(0.0));
        assert!((velocity_angle([1.0, 0.0], [-3.0, 0.0]).unwrap() - PI).abs() < 1e-15);
        assert!((velocity_angle([1.0, 0.0], [0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(velocity_angle([0.0, 0.0], [1.0, 0.0]), None);
    }

    #[test]
    fn type_matrix_examples() {
        let rec = record("v", 1, 2, ("Pedestrian", "Biker"), &[(0.3, 0.1); 10]);
        let m = type_average_matrix(&[rec]).unwrap();
        let (ped, bike) = (Label::new("pedestrian"), Label::new("BIKER"));
        assert!((m.get(&ped, &bike).unwrap() - 0.3).abs() < 1e-15);
        assert!((m.get(&bike, &ped).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m.get(&Label::new("Skater"), &ped), None);

        let mut unlabeled = record("v", 1, 2, ("a", "b"), &[(0.0, 0.0)]);
        unlabeled.label_i = None;
        assert!(type_average_matrix(&[unlabeled]).is_err());
    }

    #[test]
    fn type_matrix_partitions_the_global_mean() {
        let recs: Vec<InteractionRecord> = (0..6)
            .map(|k| {
                let labels = [("Pedestrian", "Biker"), ("Biker", "Cart"), ("Cart", "Cart")][k % 3];
                let adi: Vec<(f64, f64)> = noise(15 + k, k as u64)
                    .iter()
                    .map(|&x| (x.abs(), 2.0 * x * x))
                    .collect();
                let mut r = record("v", k as u64, 10 + k as u64, labels, &adi);
                r.rows[0].burn_in = true;
                r
            })
            .collect();
        let m = type_average_matrix(&recs).unwrap();
        let (num, den) = m.cells.values().fold((0.0, 0usize), |(s, c), cell| {
            (s + cell.mean() * cell.count as f64, c + cell.count)
        });
        let all: Vec<f64> = recs
            .iter()
            .flat_map(|r| {
                r.rows
                    .iter()
                    .filter(|x| !x.burn_in)
                    .flat_map(|x| [x.adi_ij, x.adi_ji])
            })
            .collect();
        let global = all.iter().sum::<f64>() / all.len() as f64;
        assert_eq!(den, all.len());
        assert!((num / den as f64 - global).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn xcorr_is_affine_invariant(
            seed in 0u64..1000, scale in 0.01f64..100.0, shift in -50.0f64..50.0, lag in 0usize..8,
        ) {
            let s1 = noise(60, seed);
            let s2 = noise(60, seed + 1);
            let (t, _) = series(&s1);
            let s2t: Vec<f64> = s2.iter().map(|x| scale * x + shift).collect();
            let base = xcorr_affinity(Series { times: &t, values: &s1 }, Series { times: &t, values: &s2 }, lag, 20).unwrap();
            let moved = xcorr_affinity(Series { times: &t, values: &s1 }, Series { times: &t, values: &s2t }, lag, 20).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn angle_symmetric_and_zero_on_self(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0, d in -10.0f64..10.0) {
            prop_assert_eq!(velocity_angle([a, b], [c, d]), velocity_angle([c, d], [a, b]));
            if a.hypot(b) >= 1e-6 {
                prop_assert_eq!(velocity_angle([a, b], [a, b]), Some(0.0));
            }
        }

        #[test]
        fn distance_is_a_metric_on_correlation_matrices(
            vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3..8),
        ) {
            // Gram matrix of unit vectors is a valid correlation matrix.
            let units: Vec<Vec<f64>> = vecs
                .into_iter()
                .map(|v| {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
                    v.iter().map(|x| x / n).collect()
                })
                .filter(|v: &Vec<f64>| (v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9)
                .collect();
            let m = units.len();
            let a = DMatrix::from_fn(m, m, |i, j| {
                if i == j { 1.0 } else { units[i].iter().zip(&units[j]).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0) }
            });
            let d = to_distance(&a).unwrap();
            for i in 0..m {
                prop_assert_eq!(d[(i, i)], 0.0);
                for j in 0..m {
                    prop_assert_eq!(d[(i, j)], d[(j, i)]);
                    for k in 0..m {
                        prop_assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-9);
                    }
                }
            }
        }
    }
}
