//! Pairwise ADI estimation over a scene of sampled tracks.
//!
//! For an ordered pair `i → j` and sample time `t` the instantaneous term is
//!
//! ```text
//! I( X^i_{t-1..t-k} ; X^j_t | X^j_{t-1..t-k}, S_{t-1} )
//! ```
//!
//! where `S` holds up to `side_cond_max` third-party actors nearest to `j` at
//! `t-1` (within the gate radius). The joint vector is assembled for every
//! sample time in the kernel support around `t`, its kernel covariance is
//! fitted, and the log-det CMI is read off. Each direction's instantaneous
//! series then drives its own fixed-shares ensemble.

use std::collections::BTreeMap;
use std::io;

use nalgebra::DMatrix;

use crate::ensemble::{EnsembleHyper, EnsembleState};
use crate::error::{Error, Result};
use crate::gaussian_mi::{gaussian_cmi, GaussianWindow, IndexSet, KernelOptions, Ridge};
use crate::ingest::{Label, Point, SampledTrack};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub markov_order: usize,
    /// Proximity gate in pixels.
    pub gate_radius: f64,
    pub side_cond_max: usize,
    pub kernel: KernelOptions,
    pub ridge: Ridge,
    pub ensemble: EnsembleHyper,
    /// Pairs gated for fewer samples than this are skipped.
    pub min_overlap: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            markov_order: 1,
            gate_radius: 100.0,
            side_cond_max: 3,
            kernel: KernelOptions::default(),
            ridge: Ridge::default(),
            ensemble: EnsembleHyper::default(),
            min_overlap: 20,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.markov_order == 0 {
            return Err(Error::param("markov_order", "must be at least 1"));
        }
        if !(self.gate_radius > 0.0) {
            return Err(Error::param("gate_radius", "must be positive"));
        }
        self.kernel.validate()?;
        let (Ridge::Fixed(r) | Ridge::TraceScaled { scale: r, .. }) = self.ridge;
        if !(r >= 0.0) {
            return Err(Error::param("ridge", "must be non-negative"));
        }
        self.ensemble.validate()
    }

    /// Samples flagged as burn-in at the start of each gated run.
    pub fn burn_in(&self) -> usize {
        self.markov_order.max(self.kernel.bandwidth.ceil() as usize)
    }
}

/// Tracks of one scene, addressable by actor id.
#[derive(Debug, Clone)]
pub struct Scene {
    tracks: Vec<SampledTrack>,
    index: BTreeMap<u64, usize>,
}

impl Scene {
    pub fn new(tracks: Vec<SampledTrack>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (k, t) in tracks.iter().enumerate() {
            if index.insert(t.actor_id, k).is_some() {
                return Err(Error::Domain(format!("actor {} appears twice", t.actor_id)));
            }
            if t.times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Domain(format!(
                    "actor {} sample times are not strictly increasing",
                    t.actor_id
                )));
            }
        }
        Ok(Scene { tracks, index })
    }

    pub fn tracks(&self) -> &[SampledTrack] {
        &self.tracks
    }

    pub fn track(&self, actor: u64) -> Option<&SampledTrack> {
        self.index.get(&actor).map(|&k| &self.tracks[k])
    }

    fn pos(&self, actor: u64, t: i64) -> Option<Point> {
        self.track(actor)?.position_at(t)
    }
}

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// An unordered pair (`a < b`) and the sample times it passes the gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatedPair {
    pub a: u64,
    pub b: u64,
    pub times: Vec<i64>,
}

impl GatedPair {
    /// Runs of consecutive gated times as inclusive `(start, end)` pairs.
    pub fn intervals(&self) -> Vec<(i64, i64)> {
        let mut out: Vec<(i64, i64)> = Vec::new();
        for &t in &self.times {
            match out.last_mut() {
                Some(last) if last.1 + 1 == t => last.1 = t,
                _ => out.push((t, t)),
            }
        }
        out
    }
}

/// Times at which both actors are present and within `radius` of each other.
pub fn gate_pairs(tracks: &[SampledTrack], radius: f64) -> Result<Vec<GatedPair>> {
    if !(radius > 0.0) {
        return Err(Error::param("gate_radius", "must be positive"));
    }
    let mut sorted: Vec<&SampledTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.actor_id);
    let mut out = Vec::new();
    for (k, ta) in sorted.iter().enumerate() {
        for tb in &sorted[k + 1..] {
            let times: Vec<i64> = ta
                .times
                .iter()
                .zip(&ta.positions)
                .filter_map(|(&t, &pa)| {
                    let pb = tb.position_at(t)?;
                    (distance(pa, pb) <= radius).then_some(t)
                })
                .collect();
            if !times.is_empty() {
                out.push(GatedPair {
                    a: ta.actor_id,
                    b: tb.actor_id,
                    times,
                });
            }
        }
    }
    Ok(out)
}

/// A column block of the joint vector: an actor's position at `t - lag`.
#[derive(Debug, Clone, Copy)]
struct Slot {
    actor: u64,
    lag: i64,
}

/// Joint samples for every kernel-support time at which all slots resolve.
fn embed(
    scene: &Scene,
    slots: &[Slot],
    t: i64,
    cfg: &PairConfig,
) -> Option<(DMatrix<f64>, Vec<i64>)> {
    let reach = (cfg.kernel.support_cutoff * cfg.kernel.bandwidth).floor() as i64;
    let hi = match cfg.kernel.mode {
        crate::gaussian_mi::WindowMode::Causal => t,
        crate::gaussian_mi::WindowMode::Offline => t.saturating_add(reach),
    };
    let tracks: Vec<&SampledTrack> = slots
        .iter()
        .map(|s| scene.track(s.actor))
        .collect::<Option<_>>()?;
    let mut times = Vec::new();
    let mut flat = Vec::new();
    'rows: for tau in t.saturating_sub(reach)..=hi {
        let start = flat.len();
        for (slot, track) in slots.iter().zip(&tracks) {
            match track.position_at(tau - slot.lag) {
                Some(p) => flat.extend_from_slice(&p),
                None => {
                    flat.truncate(start);
                    if tau == t {
                        return None;
                    }
                    continue 'rows;
                }
            }
        }
        times.push(tau);
    }
    if times.len() < 2 {
        return None;
    }
    Some((
        DMatrix::from_row_slice(times.len(), 2 * slots.len(), &flat),
        times,
    ))
}

fn slot_range(first: usize, count: usize) -> IndexSet {
    IndexSet::range(2 * first..2 * (first + count))
}

/// Third-party actors nearest `target` at `t - 1`, inside the gate.
pub fn side_actors(scene: &Scene, source: u64, target: u64, t: i64, cfg: &PairConfig) -> Vec<u64> {
    if cfg.side_cond_max == 0 {
        return Vec::new();
    }
    let Some(anchor) = scene.pos(target, t - 1) else {
        return Vec::new();
    };
    let mut near: Vec<(f64, u64)> = scene
        .tracks()
        .iter()
        .filter(|tr| tr.actor_id != source && tr.actor_id != target)
        .filter_map(|tr| {
            let d = distance(tr.position_at(t - 1)?, anchor);
            (d <= cfg.gate_radius).then_some((d, tr.actor_id))
        })
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.into_iter()
        .take(cfg.side_cond_max)
        .map(|(_, id)| id)
        .collect()
}

fn cmi_at(
    scene: &Scene,
    slots: &[Slot],
    roles: (&IndexSet, &IndexSet, &IndexSet),
    t: i64,
    cfg: &PairConfig,
) -> Result<Option<f64>> {
    let Some((data, times)) = embed(scene, slots, t, cfg) else {
        return Ok(None);
    };
    let window =
        GaussianWindow::fit(&data, &times, t, &cfg.kernel, cfg.ridge).map_err(|e| e.at(t))?;
    let (x, y, z) = roles;
    gaussian_cmi(&window.cov, x, y, z)
        .map(Some)
        .map_err(|e| e.at(t))
}

/// Instantaneous directed term `source → target` at `t`; `Ok(None)` when the
/// history needed at `t` is missing.
pub fn instantaneous_di(
    scene: &Scene,
    source: u64,
    target: u64,
    t: i64,
    cfg: &PairConfig,
) -> Result<Option<f64>> {
    let k = cfg.markov_order;
    let side = side_actors(scene, source, target, t, cfg);
    let mut slots = vec![Slot {
        actor: target,
        lag: 0,
    }];
    slots.extend((1..=k as i64).map(|lag| Slot { actor: target, lag }));
    slots.extend(side.iter().map(|&actor| Slot { actor, lag: 1 }));
    slots.extend((1..=k as i64).map(|lag| Slot { actor: source, lag }));
    let y = slot_range(0, 1);
    let z = slot_range(1, k + side.len());
    let x = slot_range(1 + k + side.len(), k);
    cmi_at(scene, &slots, (&x, &y, &z), t, cfg)
}

/// Instantaneous mutual term `I(X^a_t ; X^b_t | both pasts)` at `t`.
/// The conditioning block is laid out by ascending actor id so the value is
/// symmetric in `(a, b)`.
pub fn instantaneous_mi(
    scene: &Scene,
    a: u64,
    b: u64,
    t: i64,
    cfg: &PairConfig,
) -> Result<Option<f64>> {
    let k = cfg.markov_order;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut slots = vec![Slot { actor: b, lag: 0 }, Slot { actor: a, lag: 0 }];
    slots.extend((1..=k as i64).map(|lag| Slot { actor: lo, lag }));
    slots.extend((1..=k as i64).map(|lag| Slot { actor: hi, lag }));
    let y = slot_range(0, 1);
    let x = slot_range(1, 1);
    let z = slot_range(2, 2 * k);
    cmi_at(scene, &slots, (&x, &y, &z), t, cfg)
}

/// One ordered direction of an interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdiSeries {
    pub source: u64,
    pub target: u64,
    pub times: Vec<i64>,
    /// Instantaneous CMI estimates, nats.
    pub instantaneous: Vec<f64>,
    /// Ensemble-smoothed values, nats.
    pub ensemble: Vec<f64>,
    pub burn_in: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRow {
    pub t: i64,
    pub di_inst_ij: f64,
    pub adi_ij: f64,
    pub di_inst_ji: f64,
    pub adi_ji: f64,
    pub burn_in: bool,
}

impl InteractionRow {
    pub fn adi_sym(&self) -> f64 {
        self.adi_ij + self.adi_ji
    }
}

/// Both directions of one pair, on the times where both are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub scene: String,
    pub actor_i: u64,
    pub actor_j: u64,
    pub label_i: Option<Label>,
    pub label_j: Option<Label>,
    pub rows: Vec<InteractionRow>,
}

impl InteractionRecord {
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.scene, self.actor_i, self.actor_j)
    }

    fn direction(&self, forward: bool) -> AdiSeries {
        let pick = |r: &InteractionRow| {
            if forward {
                (r.di_inst_ij, r.adi_ij)
            } else {
                (r.di_inst_ji, r.adi_ji)
            }
        };
        let (source, target) = if forward {
            (self.actor_i, self.actor_j)
        } else {
            (self.actor_j, self.actor_i)
        };
        AdiSeries {
            source,
            target,
            times: self.rows.iter().map(|r| r.t).collect(),
            instantaneous: self.rows.iter().map(|r| pick(r).0).collect(),
            ensemble: self.rows.iter().map(|r| pick(r).1).collect(),
            burn_in: self.rows.iter().map(|r| r.burn_in).collect(),
        }
    }

    /// `actor_i → actor_j`.
    pub fn forward(&self) -> AdiSeries {
        self.direction(true)
    }

    /// `actor_j → actor_i`.
    pub fn backward(&self) -> AdiSeries {
        self.direction(false)
    }

    pub fn symmetrized(&self) -> Vec<f64> {
        self.rows.iter().map(InteractionRow::adi_sym).collect()
    }
}

fn burn_in_mask(times: &[i64], burn: usize) -> Vec<bool> {
    let mut offset = 0usize;
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            offset = if k > 0 && times[k - 1] + 1 == t {
                offset + 1
            } else {
                0
            };
            offset < burn
        })
        .collect()
}

/// Runs both directions of a gated pair through their own ensembles.
/// `Ok(None)` when the pair is gated for fewer than `min_overlap` samples.
pub fn compute_adi_series(
    scene: &Scene,
    scene_id: &str,
    pair: &GatedPair,
    cfg: &PairConfig,
) -> Result<Option<InteractionRecord>> {
    if pair.times.len() < cfg.min_overlap {
        return Ok(None);
    }
    let mut fwd = EnsembleState::new(cfg.ensemble.clone(), 0)?;
    let mut bwd = EnsembleState::new(cfg.ensemble.clone(), 0)?;
    let mask = burn_in_mask(&pair.times, cfg.burn_in());
    let mut rows = Vec::new();
    for (&t, &burn_in) in pair.times.iter().zip(&mask) {
        let (Some(ij), Some(ji)) = (
            instantaneous_di(scene, pair.a, pair.b, t, cfg)?,
            instantaneous_di(scene, pair.b, pair.a, t, cfg)?,
        ) else {
            continue;
        };
        rows.push(InteractionRow {
            t,
            di_inst_ij: ij,
            adi_ij: fwd.step(ij)?.estimate,
            di_inst_ji: ji,
            adi_ji: bwd.step(ji)?.estimate,
            burn_in,
        });
    }
    Ok(Some(InteractionRecord {
        scene: scene_id.to_string(),
        actor_i: pair.a,
        actor_j: pair.b,
        label_i: scene.track(pair.a).map(|t| t.label.clone()),
        label_j: scene.track(pair.b).map(|t| t.label.clone()),
        rows,
    }))
}

/// Ensemble-smoothed instantaneous mutual information of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AmiSeries {
    pub a: u64,
    pub b: u64,
    pub times: Vec<i64>,
    pub instantaneous: Vec<f64>,
    pub ensemble: Vec<f64>,
}

pub fn compute_ami_series(
    scene: &Scene,
    pair: &GatedPair,
    cfg: &PairConfig,
) -> Result<Option<AmiSeries>> {
    if pair.times.len() < cfg.min_overlap {
        return Ok(None);
    }
    let mut ens = EnsembleState::new(cfg.ensemble.clone(), 0)?;
    let mut out = AmiSeries {
        a: pair.a,
        b: pair.b,
        times: Vec::new(),
        instantaneous: Vec::new(),
        ensemble: Vec::new(),
    };
    for &t in &pair.times {
        if let Some(v) = instantaneous_mi(scene, pair.a, pair.b, t, cfg)? {
            out.times.push(t);
            out.instantaneous.push(v);
            out.ensemble.push(ens.step(v)?.estimate);
        }
    }
    Ok(Some(out))
}

/// Gates every pair of the scene and estimates ADI for those that qualify,
/// ordered by `(actor_i, actor_j)`.
pub fn run_scene(
    scene: &Scene,
    scene_id: &str,
    cfg: &PairConfig,
    exec: Exec,
) -> Result<Vec<InteractionRecord>> {
    cfg.validate()?;
    let pairs = gate_pairs(scene.tracks(), cfg.gate_radius)?;
    let results = exec.map(&pairs, |p| compute_adi_series(scene, scene_id, p, cfg));
    let mut out = Vec::new();
    for r in results {
        if let Some(rec) = r? {
            out.push(rec);
        }
    }
    Ok(out)
}

pub const ADI_CSV_HEADER: [&str; 10] = [
    "scene",
    "actor_i",
    "actor_j",
    "t",
    "di_inst_ij",
    "adi_ij",
    "di_inst_ji",
    "adi_ji",
    "adi_sym",
    "burn_in",
];

pub fn write_adi_csv<W: io::Write>(records: &[InteractionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ADI_CSV_HEADER)?;
    for rec in records {
        for r in &rec.rows {
            w.write_record([
                rec.scene.clone(),
                rec.actor_i.to_string(),
                rec.actor_j.to_string(),
                r.t.to_string(),
                r.di_inst_ij.to_string(),
                r.adi_ij.to_string(),
                r.di_inst_ji.to_string(),
                r.adi_ji.to_string(),
                r.adi_sym().to_string(),
                r.burn_in.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<adi csv>", e))?;
    Ok(())
}

/// Reads `adi_series.csv` back into records (labels unset), grouped by
/// `(scene, actor_i, actor_j)` in first-seen order.
pub fn read_adi_csv<R: io::Read>(input: R) -> Result<Vec<InteractionRecord>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().map(str::trim).ne(ADI_CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", ADI_CSV_HEADER.join(",")),
        });
    }
    let mut order: Vec<(String, u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64, u64), Vec<InteractionRow>> = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec?;
        let err = |field: &str| Error::Parse {
            line,
            message: format!("bad `{field}` value"),
        };
        let num =
            |k: usize| -> Result<f64> { rec[k].trim().parse().map_err(|_| err(ADI_CSV_HEADER[k])) };
        let id =
            |k: usize| -> Result<u64> { rec[k].trim().parse().map_err(|_| err(ADI_CSV_HEADER[k])) };
        let key = (rec[0].to_string(), id(1)?, id(2)?);
        let row = InteractionRow {
            t: rec[3].trim().parse().map_err(|_| err("t"))?,
            di_inst_ij: num(4)?,
            adi_ij: num(5)?,
            di_inst_ji: num(6)?,
            adi_ji: num(7)?,
            burn_in: rec[9].trim().parse().map_err(|_| err("burn_in"))?,
        };
        let rows = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if rows.last().is_some_and(|last| last.t >= row.t) {
            return Err(Error::Parse {
                line,
                message: "times within a pair must be strictly increasing".into(),
            });
        }
        rows.push(row);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let rows = groups.remove(&key).expect("grouped above");
            InteractionRecord {
                scene: key.0,
                actor_i: key.1,
                actor_j: key.2,
                label_i: None,
                label_j: None,
                rows,
            }
        })
        .collect())
}

/// Seeded two-actor trajectory generators with known coupling.
pub mod synthetic {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use crate::ingest::{Label, Point, SampledTrack};

    fn track(id: u64, label: &str, positions: Vec<Point>) -> SampledTrack {
        SampledTrack {
            actor_id: id,
            label: Label::new(label),
            times: (0..positions.len() as i64).collect(),
            positions,
        }
    }

    /// Actor 1 wanders as a Gaussian random walk (step sd 2 px); actor 2
    /// occupies actor 1's previous position plus noise of sd `noise`.
    pub fn follower(seed: u64, len: usize, noise: f64) -> Vec<SampledTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = Normal::new(0.0, 2.0).expect("valid sd");
        let jitter = Normal::new(0.0, noise).expect("valid sd");
        let mut leader = Vec::with_capacity(len + 1);
        let mut p = [500.0, 400.0];
        leader.push(p);
        for _ in 0..len {
            p = [p[0] + step.sample(&mut rng), p[1] + step.sample(&mut rng)];
            leader.push(p);
        }
        let follower = leader[..len]
            .iter()
            .map(|q| {
                [
                    q[0] + jitter.sample(&mut rng),
                    q[1] + jitter.sample(&mut rng),
                ]
            })
            .collect();
        vec![
            track(1, "Pedestrian", leader[1..].to_vec()),
            track(2, "Biker", follower),
        ]
    }

    /// Two independent AR(1) wanderers (coefficient 0.9, innovation sd 3 px)
    /// around anchors 40 px apart.
    pub fn independent_ar1(seed: u64, len: usize) -> Vec<SampledTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let innov = Normal::new(0.0, 3.0).expect("valid sd");
        let mut walk = |anchor: Point| -> Vec<Point> {
            let mut dev = [0.0, 0.0];
            (0..len)
                .map(|_| {
                    dev = [
                        0.9 * dev[0] + innov.sample(&mut rng),
                        0.9 * dev[1] + innov.sample(&mut rng),
                    ];
                    [anchor[0] + dev[0], anchor[1] + dev[1]]
                })
                .collect()
        };
        let a = walk([500.0, 500.0]);
        let b = walk([540.0, 500.0]);
        vec![track(1, "Pedestrian", a), track(2, "Pedestrian", b)]
    }
}
