//! Drone-video annotation ingest.
//!
//! Input lines carry ten whitespace-separated fields:
//!
//! ```text
//! track_id xmin ymin xmax ymax frame lost occluded generated "label"
//! ```
//!
//! Each actor's position on a frame is the centre of its bounding box. Tracks
//! are smoothed with a centred moving mean (lost frames excluded), then
//! subsampled on a fixed frame stride into [`SampledTrack`]s, which is what
//! the rest of the pipeline consumes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io;
use std::ops::Range;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Actor category. Compared case-insensitively after trimming.
#[derive(Debug, Clone)]
pub struct Label(String);

impl Label {
    pub fn new(s: &str) -> Self {
        Label(s.trim().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn key(&self) -> String {
        self.0.to_lowercase()
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Label {}

impl Hash for Label {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoundingBox {
    pub fn center(&self) -> Point {
        [(self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame: i64,
    pub position: Point,
    /// Source box; `None` once the position has been smoothed.
    pub bbox: Option<BoundingBox>,
    pub lost: bool,
    pub occluded: bool,
    pub generated: bool,
}

/// One actor's frame-indexed positions, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub actor_id: u64,
    pub label: Label,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn frames(&self) -> impl Iterator<Item = i64> + '_ {
        self.points.iter().map(|p| p.frame)
    }
}

/// Positions on the sampling grid, `time = frame / stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrack {
    pub actor_id: u64,
    pub label: Label,
    pub times: Vec<i64>,
    pub positions: Vec<Point>,
}

impl SampledTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position_at(&self, t: i64) -> Option<Point> {
        self.times.binary_search(&t).ok().map(|k| self.positions[k])
    }

    /// Index ranges of runs of consecutive sample times.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.times.len() {
            if k == self.times.len() || self.times[k] != self.times[k - 1] + 1 {
                if k > start {
                    out.push(start..k);
                }
                start = k;
            }
        }
        out
    }

    /// Drops runs shorter than `min_len` samples.
    pub fn retain_segments(&mut self, min_len: usize) {
        let keep: Vec<Range<usize>> = self
            .segments()
            .into_iter()
            .filter(|r| r.len() >= min_len)
            .collect();
        let mut times = Vec::new();
        let mut positions = Vec::new();
        for r in keep {
            times.extend_from_slice(&self.times[r.clone()]);
            positions.extend_from_slice(&self.positions[r]);
        }
        self.times = times;
        self.positions = positions;
    }
}

fn split_fields(line: &str) -> std::result::Result<(Vec<&str>, Option<&str>), String> {
    let mut fields = Vec::with_capacity(9);
    let mut rest = line.trim_start();
    while fields.len() < 9 {
        if rest.is_empty() {
            return Err(format!("expected 10 fields, found {}", fields.len()));
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        fields.push(&rest[..end]);
        rest = rest[end..].trim_start();
    }
    let rest = rest.trim_end();
    if rest.is_empty() {
        return Ok((fields, None));
    }
    Ok((fields, Some(rest)))
}

fn parse_label(raw: &str) -> std::result::Result<&str, String> {
    let inner = raw
        .strip_prefix('"')
        .ok_or_else(|| format!("label must be double-quoted, found `{raw}`"))?;
    let inner = inner
        .strip_suffix('"')
        .ok_or_else(|| "unterminated quoted label".to_string())?;
    if inner.contains('"') {
        return Err(format!(
            "unexpected trailing content after label in `{raw}`"
        ));
    }
    Ok(inner)
}

fn parse_flag(s: &str, name: &str) -> std::result::Result<bool, String> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("{name} flag must be 0 or 1, found `{s}`")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
    s.parse()
        .map_err(|_| format!("non-numeric {name} field `{s}`"))
}

/// Parses annotation text into tracks ordered by actor id.
pub fn parse_annotations(text: &str) -> Result<Vec<Track>> {
    let mut tracks: BTreeMap<u64, (Track, usize)> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (f, label) = split_fields(line).map_err(err)?;
        let label = label.ok_or_else(|| err("expected 10 fields, found 9".into()))?;
        let label = parse_label(label).map_err(err)?;
        let id: u64 = parse_num(f[0], "track_id").map_err(err)?;
        let coords: Vec<f64> = ["xmin", "ymin", "xmax", "ymax"]
            .iter()
            .zip(&f[1..5])
            .map(|(name, s)| parse_num::<f64>(s, name))
            .collect::<std::result::Result<_, _>>()
            .map_err(err)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(err("non-finite box coordinate".into()));
        }
        let bbox = BoundingBox {
            xmin: coords[0],
            ymin: coords[1],
            xmax: coords[2],
            ymax: coords[3],
        };
        let frame: i64 = parse_num(f[5], "frame").map_err(err)?;
        let point = TrackPoint {
            frame,
            position: bbox.center(),
            bbox: Some(bbox),
            lost: parse_flag(f[6], "lost").map_err(err)?,
            occluded: parse_flag(f[7], "occluded").map_err(err)?,
            generated: parse_flag(f[8], "generated").map_err(err)?,
        };
        let label = Label::new(label);
        let (track, _) = tracks.entry(id).or_insert_with(|| {
            (
                Track {
                    actor_id: id,
                    label: label.clone(),
                    points: Vec::new(),
                },
                line_no,
            )
        });
        if track.label != label {
            return Err(err(format!(
                "track {id} relabelled from `{}` to `{label}`",
                track.label
            )));
        }
        track.points.push(point);
        // Remember the latest line so duplicate frames can be reported.
        tracks.get_mut(&id).expect("just inserted").1 = line_no;
    }
    tracks
        .into_values()
        .map(|(mut t, line)| {
            t.points.sort_by_key(|p| p.frame);
            if let Some(w) = t.points.windows(2).find(|w| w[0].frame == w[1].frame) {
                return Err(Error::Parse {
                    line,
                    message: format!("track {} repeats frame {}", t.actor_id, w[0].frame),
                });
            }
            Ok(t)
        })
        .collect()
}

/// Writes tracks back in the ten-field annotation format.
pub fn serialize_annotations(tracks: &[Track]) -> Result<String> {
    let mut out = String::new();
    for t in tracks {
        for p in &t.points {
            let b = p.bbox.ok_or_else(|| {
                Error::Domain(format!(
                    "track {} frame {} has no bounding box (smoothed tracks cannot be serialised)",
                    t.actor_id, p.frame
                ))
            })?;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} \"{}\"\n",
                t.actor_id,
                b.xmin,
                b.ymin,
                b.xmax,
                b.ymax,
                p.frame,
                u8::from(p.lost),
                u8::from(p.occluded),
                u8::from(p.generated),
                t.label
            ));
        }
    }
    Ok(out)
}

/// Centred moving mean over `window` raw frames. Lost frames are dropped and
/// split the track; the window is clipped at segment ends.
pub fn smooth_track(track: &Track, window: usize) -> Result<Track> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::param(
            "smooth_window",
            format!("must be a positive odd integer, got {window}"),
        ));
    }
    let half = (window / 2) as i64;
    let kept: Vec<&TrackPoint> = track.points.iter().filter(|p| !p.lost).collect();
    let mut points = Vec::with_capacity(kept.len());
    let mut start = 0;
    for k in 1..=kept.len() {
        if k < kept.len() && kept[k].frame == kept[k - 1].frame + 1 {
            continue;
        }
        let seg = &kept[start..k];
        for (i, p) in seg.iter().enumerate() {
            let lo = i.saturating_sub(half as usize);
            let hi = (i + half as usize + 1).min(seg.len());
            let n = (hi - lo) as f64;
            let mut acc = [0.0, 0.0];
            for q in &seg[lo..hi] {
                acc[0] += q.position[0];
                acc[1] += q.position[1];
            }
            points.push(TrackPoint {
                position: if hi - lo == 1 {
                    p.position
                } else {
                    [acc[0] / n, acc[1] / n]
                },
                bbox: None,
                ..(*p).clone()
            });
        }
        start = k;
    }
    Ok(Track {
        actor_id: track.actor_id,
        label: track.label.clone(),
        points,
    })
}

/// Keeps non-lost frames on the `stride` grid and re-indexes time as
/// `frame / stride`. Missing grid frames stay missing.
pub fn sample_track(track: &Track, stride: usize) -> Result<SampledTrack> {
    if stride == 0 {
        return Err(Error::param("stride", "must be at least 1"));
    }
    let stride = stride as i64;
    let (times, positions) = track
        .points
        .iter()
        .filter(|p| !p.lost && p.frame.rem_euclid(stride) == 0)
        .map(|p| (p.frame.div_euclid(stride), p.position))
        .unzip();
    Ok(SampledTrack {
        actor_id: track.actor_id,
        label: track.label.clone(),
        times,
        positions,
    })
}

/// Parse, smooth, sample and drop short segments in one go.
pub fn prepare_tracks(
    text: &str,
    smooth_window: usize,
    stride: usize,
    min_segment: usize,
) -> Result<Vec<SampledTrack>> {
    let mut out = Vec::new();
    for track in parse_annotations(text)? {
        let mut s = sample_track(&smooth_track(&track, smooth_window)?, stride)?;
        s.retain_segments(min_segment);
        if !s.is_empty() {
            out.push(s);
        }
    }
    Ok(out)
}

pub const TRACK_CSV_HEADER: [&str; 5] = ["actor_id", "label", "sample_t", "x", "y"];

/// Writes the canonical five-column track CSV.
pub fn write_tracks_csv<W: io::Write>(tracks: &[SampledTrack], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_CSV_HEADER)?;
    for t in tracks {
        for (time, p) in t.times.iter().zip(&t.positions) {
            w.write_record([
                t.actor_id.to_string(),
                t.label.to_string(),
                time.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<track csv>", e))?;
    Ok(())
}

/// Reads the canonical track CSV. Rows may arrive in any order.
pub fn read_tracks_csv<R: io::Read>(input: R) -> Result<Vec<SampledTrack>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().map(str::trim).ne(TRACK_CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", TRACK_CSV_HEADER.join(",")),
        });
    }
    let mut by_id: BTreeMap<u64, (Label, Vec<(i64, Point)>)> = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec?;
        let err = |message: String| Error::Parse { line, message };
        let id: u64 = parse_num(rec[0].trim(), "actor_id").map_err(err)?;
        let label = Label::new(&rec[1]);
        let t: i64 = parse_num(rec[2].trim(), "sample_t").map_err(err)?;
        let x: f64 = parse_num(rec[3].trim(), "x").map_err(err)?;
        let y: f64 = parse_num(rec[4].trim(), "y").map_err(err)?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(err("non-finite position".into()));
        }
        let entry = by_id
            .entry(id)
            .or_insert_with(|| (label.clone(), Vec::new()));
        if entry.0 != label {
            return Err(err(format!("actor {id} has conflicting labels")));
        }
        entry.1.push((t, [x, y]));
    }
    by_id
        .into_iter()
        .map(|(actor_id, (label, mut rows))| {
            rows.sort_by_key(|r| r.0);
            if rows.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Domain(format!(
                    "actor {actor_id} has a repeated sample time"
                )));
            }
            let (times, positions) = rows.into_iter().unzip();
            Ok(SampledTrack {
                actor_id,
                label,
                times,
                positions,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"0 1002 545 1046 616 0 1 0 0 "Biker""#;

    fn raw(xs: &[f64]) -> Track {
        Track {
            actor_id: 1,
            label: Label::new("Pedestrian"),
            points: xs
                .iter()
                .enumerate()
                .map(|(f, &x)| TrackPoint {
                    frame: f as i64,
                    position: [x, -x],
                    bbox: None,
                    lost: false,
                    occluded: false,
                    generated: false,
                })
                .collect(),
        }
    }

    #[test]
    fn parses_documented_line() {
        let tracks = parse_annotations(SAMPLE).unwrap();
        assert_eq!(tracks.len(), 1);
        let t = &tracks[0];
        assert_eq!(t.actor_id, 0);
        assert_eq!(t.label.as_str(), "Biker");
        let p = &t.points[0];
        assert_eq!(p.frame, 0);
        assert_eq!(p.position, [1024.0, 580.5]);
        assert!(p.lost && !p.occluded && !p.generated);
    }

    #[test]
    fn groups_by_track_id() {
        let text = "3 0 0 2 2 1 0 0 0 \"Pedestrian\"\n3 0 0 4 4 0 0 0 0 \"pedestrian \"\n\n1 0 0 2 2 0 0 1 1 \"Cart\"\n";
        let tracks = parse_annotations(text).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].actor_id, 1);
        assert_eq!(tracks[1].frames().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(tracks[1].points[0].position, [2.0, 2.0]);
    }

    #[test]
    fn reports_malformed_lines() {
        let nine = "0 1 2 3 4 0 0 0 0\n";
        match parse_annotations(&format!("{SAMPLE}\n{nine}")) {
            Err(Error::Parse { line: 2, message }) => {
                assert!(message.contains("10 fields"), "{message}")
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_annotations("0 1 2 3 x 0 0 0 0 \"Biker\""),
            Err(Error::Parse { line: 1, .. })
        ));
        match parse_annotations("0 1 2 3 4 0 0 0 0 \"Biker") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("unterminated")),
            other => panic!("{other:?}"),
        }
        assert!(parse_annotations("0 1 2 3 4 0 2 0 0 \"Biker\"").is_err());
        assert!(parse_annotations("0 1 2 3 4 0 0 0 0 \"A\"\n0 1 2 3 4 0 0 0 0 \"A\"").is_err());
        assert!(parse_annotations("0 1 2 3 4 0 0 0 0 \"A\"\n0 1 2 3 4 1 0 0 0 \"B\"").is_err());
        assert!(parse_annotations("").unwrap().is_empty());
    }

    #[test]
    fn round_trips_documented_line() {
        let tracks = parse_annotations(SAMPLE).unwrap();
        assert_eq!(
            serialize_annotations(&tracks).unwrap(),
            format!("{SAMPLE}\n")
        );
    }

    #[test]
    fn smoothing_examples() {
        let t = raw(&[0.0, 3.0, 6.0]);
        assert_eq!(smooth_track(&t, 1).unwrap().points, t.points);
        let s = smooth_track(&t, 3).unwrap();
        let xs: Vec<f64> = s.points.iter().map(|p| p.position[0]).collect();
        assert_eq!(xs, vec![1.5, 3.0, 4.5]);
        let c = raw(&[2.0; 9]);
        assert!(smooth_track(&c, 5)
            .unwrap()
            .points
            .iter()
            .all(|p| p.position == [2.0, -2.0]));
        assert!(smooth_track(&t, 4).is_err());
        assert!(smooth_track(&t, 0).is_err());
    }

    #[test]
    fn smoothing_skips_lost_frames() {
        let mut t = raw(&[0.0, 100.0, 2.0, 4.0]);
        t.points[1].lost = true;
        let s = smooth_track(&t, 3).unwrap();
        assert_eq!(s.frames().collect::<Vec<_>>(), vec![0, 2, 3]);
        // frame 0 is now an isolated segment
        assert_eq!(s.points[0].position[0], 0.0);
        assert_eq!(s.points[1].position[0], 3.0);
    }

    #[test]
    fn sampling_examples() {
        let t = raw(&(0..100).map(f64::from).collect::<Vec<_>>());
        let all = sample_track(&t, 1).unwrap();
        assert_eq!(all.len(), 100);
        assert_eq!(all.times, t.frames().collect::<Vec<_>>());
        let s = sample_track(&t, 10).unwrap();
        assert_eq!(s.times, (0..10).collect::<Vec<_>>());
        assert_eq!(s.positions[3], [30.0, -30.0]);

        let mut gappy = t.clone();
        gappy.points.retain(|p| p.frame != 40);
        let s = sample_track(&gappy, 10).unwrap();
        assert_eq!(s.times, vec![0, 1, 2, 3, 5, 6, 7, 8, 9]);
        assert_eq!(s.segments(), vec![0..4, 4..9]);
        assert!(sample_track(&t, 0).is_err());
    }

    #[test]
    fn retain_segments_drops_short_runs() {
        let mut s = SampledTrack {
            actor_id: 1,
            label: Label::new("x"),
            times: vec![0, 1, 2, 5, 8, 9, 10, 11],
            positions: vec![[0.0, 0.0]; 8],
        };
        s.retain_segments(3);
        assert_eq!(s.times, vec![0, 1, 2, 8, 9, 10, 11]);
        assert_eq!(s.position_at(9), Some([0.0, 0.0]));
        assert_eq!(s.position_at(5), None);
    }

    #[test]
    fn labels_compare_case_insensitively() {
        assert_eq!(Label::new(" Biker "), Label::new("biker"));
        assert_eq!(Label::new(" Biker ").as_str(), "Biker");
        assert!(Label::new("Cart") < Label::new("pedestrian"));
    }

    #[test]
    fn track_csv_round_trip() {
        let tracks = vec![
            SampledTrack {
                actor_id: 4,
                label: Label::new("Biker, fast"),
                times: vec![0, 1, 3],
                positions: vec![[0.1, 1.0 / 3.0], [2.0, 1e-17], [-5.5, 7.0]],
            },
            SampledTrack {
                actor_id: 9,
                label: Label::new("Pedestrian"),
                times: vec![2],
                positions: vec![[1024.0, 580.5]],
            },
        ];
        let mut buf = Vec::new();
        write_tracks_csv(&tracks, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("actor_id,label,sample_t,x,y\n"));
        assert_eq!(read_tracks_csv(buf.as_slice()).unwrap(), tracks);
        assert!(read_tracks_csv("a,b,c,d,e\n".as_bytes()).is_err());
    }

    fn arb_track() -> impl Strategy<Value = Track> {
        (
            0u64..1000,
            prop::sample::select(vec!["Pedestrian", "Biker", "Skater", "Cart", "Car", "Bus"]),
            prop::collection::btree_map(
                0i64..5000,
                (
                    0i32..2000,
                    0i32..2000,
                    1i32..200,
                    1i32..200,
                    any::<[bool; 3]>(),
                ),
                1..30,
            ),
        )
            .prop_map(|(id, label, frames)| Track {
                actor_id: id,
                label: Label::new(label),
                points: frames
                    .into_iter()
                    .map(|(frame, (x, y, w, h, flags))| {
                        let bbox = BoundingBox {
                            xmin: x as f64,
                            ymin: y as f64,
                            xmax: (x + w) as f64,
                            ymax: (y + h) as f64,
                        };
                        TrackPoint {
                            frame,
                            position: bbox.center(),
                            bbox: Some(bbox),
                            lost: flags[0],
                            occluded: flags[1],
                            generated: flags[2],
                        }
                    })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn annotation_round_trip(tracks in prop::collection::btree_map(0u64..1000, arb_track(), 1..5)) {
            let tracks: Vec<Track> = tracks
                .into_iter()
                .map(|(id, mut t)| { t.actor_id = id; t })
                .collect();
            let text = serialize_annotations(&tracks).unwrap();
            let back = parse_annotations(&text).unwrap();
            prop_assert_eq!(&back, &tracks);
            prop_assert_eq!(serialize_annotations(&back).unwrap(), text);
        }

        #[test]
        fn smoothing_stays_within_window_range(
            xs in prop::collection::vec(-1e4f64..1e4, 1..60),
            half in 0usize..6,
        ) {
            let window = 2 * half + 1;
            let t = raw(&xs);
            let s = smooth_track(&t, window).unwrap();
            for (i, p) in s.points.iter().enumerate() {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(xs.len());
                let min = xs[lo..hi].iter().cloned().fold(f64::INFINITY, f64::min);
                let max = xs[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p.position[0] >= min - 1e-9 && p.position[0] <= max + 1e-9);
            }
        }
    }
}
