//! A toy vortex tracker and the trajectory comparison metrics.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub intensity: f64,
}

impl TrackPoint {
    pub fn pos(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Time-ordered positions of one feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn from_positions(start: usize, pos: &[(f64, f64)]) -> Self {
        Self {
            points: pos
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrackPoint { t: start + i, x, y, intensity: 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_t(&self) -> Option<usize> {
        self.points.first().map(|p| p.t)
    }

    pub fn last_t(&self) -> Option<usize> {
        self.points.last().map(|p| p.t)
    }

    /// Steps from first to last point, inclusive.
    pub fn duration(&self) -> usize {
        match (self.first_t(), self.last_t()) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        }
    }

    /// Points whose time step satisfies `keep`.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Track {
        Track {
            points: self.points.iter().copied().filter(|p| keep(p.t)).collect(),
        }
    }

    pub fn at(&self, t: usize) -> Option<&TrackPoint> {
        self.points
            .binary_search_by_key(&t, |p| p.t)
            .ok()
            .map(|i| &self.points[i])
    }
}

/// Writes tracks as `track,t,x,y,intensity` lines.
pub fn write_tracks<W: Write>(mut w: W, tracks: &[Track]) -> Result<()> {
    writeln!(w, "track,t,x,y,intensity")?;
    for (k, tr) in tracks.iter().enumerate() {
        for p in &tr.points {
            writeln!(w, "{k},{},{},{},{}", p.t, p.x, p.y, p.intensity)?;
        }
    }
    Ok(())
}

pub fn read_tracks<R: BufRead>(r: R) -> Result<Vec<Track>> {
    let mut tracks: Vec<Track> = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 && line.starts_with("track") || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidInput(format!("track line {}: '{line}'", n + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let k: usize = cols[0].parse().map_err(|_| bad())?;
        let p = TrackPoint {
            t: cols[1].parse().map_err(|_| bad())?,
            x: cols[2].parse().map_err(|_| bad())?,
            y: cols[3].parse().map_err(|_| bad())?,
            intensity: cols[4].parse().map_err(|_| bad())?,
        };
        if k >= tracks.len() {
            tracks.resize_with(k + 1, Track::default);
        }
        tracks[k].points.push(p);
    }
    Ok(tracks)
}

/// Great-circle angle in radians between two `(lon, lat)` points in degrees.
pub fn gcd(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon1 - lon2).to_radians();
    (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos())
        .clamp(-1.0, 1.0)
        .acos()
}

/// Distance between track positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointMetric {
    /// Grid coordinates.
    #[default]
    Euclidean,
    /// `(lon, lat)` in degrees, distance in radians.
    GreatCircle,
}

impl PointMetric {
    pub fn distance(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            PointMetric::Euclidean => (a.0 - b.0).hypot(a.1 - b.1),
            PointMetric::GreatCircle => gcd(a.0, a.1, b.0, b.1),
        }
    }
}

fn require_points(a: &Track, b: &Track) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("empty track".into()));
    }
    Ok(())
}

/// Discrete Fréchet distance between the point sequences.
pub fn frechet(a: &Track, b: &Track, metric: PointMetric) -> Result<f64> {
    require_points(a, b)?;
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, pa) in a.points.iter().enumerate() {
        for (j, pb) in b.points.iter().enumerate() {
            let d = metric.distance(pa.pos(), pb.pos());
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Number of arc-length samples used by [`pcm`].
pub const PCM_SAMPLES: usize = 64;

/// Cumulative arc length at each vertex.
fn arc_lengths(pos: &[(f64, f64)], metric: PointMetric) -> Vec<f64> {
    let mut s = vec![0.0; pos.len()];
    for i in 1..pos.len() {
        s[i] = s[i - 1] + metric.distance(pos[i - 1], pos[i]);
    }
    s
}

/// Position at arc length `s` along the polyline (linear in coordinates).
fn point_at(pos: &[(f64, f64)], arc: &[f64], s: f64) -> (f64, f64) {
    let total = *arc.last().unwrap();
    if pos.len() == 1 || total <= 0.0 {
        return pos[0];
    }
    let s = s.clamp(0.0, total);
    let k = arc.partition_point(|&v| v <= s).clamp(1, pos.len() - 1);
    let seg = arc[k] - arc[k - 1];
    let w = if seg > 0.0 { (s - arc[k - 1]) / seg } else { 0.0 };
    let (a, b) = (pos[k - 1], pos[k]);
    (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1))
}

/// Partial curve mapping score: the shorter curve's 64 arc-length samples
/// are laid over a window of equal length on the longer curve; the result is
/// the smallest mean sample distance over window placements.
pub fn pcm(a: &Track, b: &Track, metric: PointMetric) -> Result<f64> {
    require_points(a, b)?;
    let pa: Vec<(f64, f64)> = a.points.iter().map(TrackPoint::pos).collect();
    let pb: Vec<(f64, f64)> = b.points.iter().map(TrackPoint::pos).collect();
    let (sa, sb) = (arc_lengths(&pa, metric), arc_lengths(&pb, metric));
    let (short, ss, long, sl) = if sa.last() <= sb.last() {
        (&pa, &sa, &pb, &sb)
    } else {
        (&pb, &sb, &pa, &sa)
    };
    let len_short = *ss.last().unwrap();
    let slack = sl.last().unwrap() - len_short;
    let samples: Vec<(f64, f64)> = (0..PCM_SAMPLES)
        .map(|i| point_at(short, ss, len_short * i as f64 / (PCM_SAMPLES - 1) as f64))
        .collect();
    let score = |offset: f64| -> f64 {
        samples
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let s = offset + len_short * i as f64 / (PCM_SAMPLES - 1) as f64;
                metric.distance(p, point_at(long, sl, s))
            })
            .sum::<f64>()
            / PCM_SAMPLES as f64
    };
    if slack <= 0.0 {
        return Ok(score(0.0));
    }
    // coarse scan, then golden-section refinement around the best offset
    const SCAN: usize = 128;
    let step = slack / SCAN as f64;
    let (mut best_o, mut best) = (0.0, score(0.0));
    for k in 1..=SCAN {
        let o = step * k as f64;
        let v = score(o);
        if v < best {
            best = v;
            best_o = o;
        }
    }
    let (mut lo, mut hi) = ((best_o - step).max(0.0), (best_o + step).min(slack));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if score(m1) <= score(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(best.min(score(0.5 * (lo + hi))))
}

/// Mean distance over the time steps both tracks share.
pub fn mean_aligned_distance(a: &Track, b: &Track, metric: PointMetric) -> Option<f64> {
    let pairs: Vec<f64> = a
        .points
        .iter()
        .filter_map(|p| b.at(p.t).map(|q| metric.distance(p.pos(), q.pos())))
        .collect();
    (!pairs.is_empty()).then(|| pairs.iter().sum::<f64>() / pairs.len() as f64)
}

/// A tracker detection in one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub x: f64,
    pub y: f64,
    /// Depth below the slice median.
    pub intensity: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Vertex offset of a parabola through `(−1, a)`, `(0, b)`, `(1, c)`.
fn parabola_offset(a: f64, b: f64, c: f64) -> f64 {
    let curv = a - 2.0 * b + c;
    if curv > 0.0 {
        (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Local minima of a 2D slice at least `depth_threshold` below its median.
pub fn detect_candidates(slice: &Field, depth_threshold: f64) -> Result<Vec<Candidate>> {
    if slice.ndim() != 2 {
        return Err(Error::InvalidInput(format!(
            "candidate detection needs a 2D slice, got {} axes",
            slice.ndim()
        )));
    }
    let (nx, ny) = (slice.dims()[0], slice.dims()[1]);
    let data = slice.data();
    let at = |i: usize, j: usize| data[i * ny + j];
    let level = median(data) - depth_threshold;
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let v = at(i, j);
            if v > level {
                continue;
            }
            let mut is_min = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                        continue;
                    }
                    let w = at(a as usize, b as usize);
                    // plateaus resolve to their first node in raster order
                    let earlier = (di, dj) < (0, 0);
                    if w < v || (earlier && w == v) {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if !is_min {
                continue;
            }
            let dx = if i > 0 && i + 1 < nx {
                parabola_offset(at(i - 1, j), v, at(i + 1, j))
            } else {
                0.0
            };
            let dy = if j > 0 && j + 1 < ny {
                parabola_offset(at(i, j - 1), v, at(i, j + 1))
            } else {
                0.0
            };
            out.push(Candidate {
                x: i as f64 + dx,
                y: j as f64 + dy,
                intensity: level + depth_threshold - v,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchParams {
    /// Largest move per time step.
    pub max_dist: f64,
    /// Largest step difference between consecutive points of a track.
    pub max_gap: usize,
    /// Shortest kept track, in steps from first to last point.
    pub min_duration: usize,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self { max_dist: 2.5, max_gap: 3, min_duration: 8 }
    }
}

/// Greedy chaining of per-slice candidates into tracks. `slices` holds
/// `(t, candidates)` in increasing `t`.
pub fn stitch_tracks(slices: &[(usize, Vec<Candidate>)], params: &StitchParams) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for (t, cands) in slices {
        let t = *t;
        open.retain(|&k| t - tracks[k].last_t().unwrap() <= params.max_gap);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (oi, &k) in open.iter().enumerate() {
            let last = tracks[k].points.last().unwrap();
            let budget = params.max_dist * (t - last.t) as f64;
            for (ci, c) in cands.iter().enumerate() {
                let d = (c.x - last.x).hypot(c.y - last.y);
                if d <= budget {
                    pairs.push((d, oi, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; open.len()];
        let mut cand_used = vec![false; cands.len()];
        for (_, oi, ci) in pairs {
            if track_used[oi] || cand_used[ci] {
                continue;
            }
            track_used[oi] = true;
            cand_used[ci] = true;
            let c = cands[ci];
            tracks[open[oi]].points.push(TrackPoint { t, x: c.x, y: c.y, intensity: c.intensity });
        }
        for (ci, c) in cands.iter().enumerate() {
            if !cand_used[ci] {
                open.push(tracks.len());
                tracks.push(Track {
                    points: vec![TrackPoint { t, x: c.x, y: c.y, intensity: c.intensity }],
                });
            }
        }
    }
    tracks.retain(|tr| tr.duration() >= params.min_duration);
    tracks
}

/// Detection and stitching over `(t, slice)` pairs.
pub fn track_slices<'a>(
    slices: impl IntoIterator<Item = (usize, &'a Field)>,
    depth_threshold: f64,
    params: &StitchParams,
) -> Result<Vec<Track>> {
    let cands = slices
        .into_iter()
        .map(|(t, s)| Ok((t, detect_candidates(s, depth_threshold)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(stitch_tracks(&cands, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackClass {
    Matched,
    Partial,
    Missed,
}

/// Bucket of a track's mean position error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorRange {
    Zero,
    WithinGrid,
    BeyondGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub matched_frechet: f64,
    pub matched_pcm: f64,
    pub partial_pcm: f64,
    /// Physical grid spacing for the error ranges.
    pub grid: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { matched_frechet: 2.0, matched_pcm: 1.0, partial_pcm: 2.0, grid: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackScore {
    /// Index of the closest reduced track by Fréchet distance.
    pub matched: Option<usize>,
    pub mean_gcd: Option<f64>,
    pub frechet: f64,
    pub pcm: f64,
    pub class: TrackClass,
    pub range: ErrorRange,
}

/// Scores every truth track against its Fréchet-closest reduced track.
pub fn classify(reduced: &[Track], truth: &[Track], th: &Thresholds, metric: PointMetric) -> Vec<TrackScore> {
    truth
        .iter()
        .map(|tt| {
            let best = reduced
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_empty() && !tt.is_empty())
                .map(|(i, r)| (i, frechet(tt, r, metric).expect("nonempty")))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((idx, fr)) = best else {
                return TrackScore {
                    matched: None,
                    mean_gcd: None,
                    frechet: f64::INFINITY,
                    pcm: f64::INFINITY,
                    class: TrackClass::Missed,
                    range: ErrorRange::BeyondGrid,
                };
            };
            let p = pcm(tt, &reduced[idx], metric).expect("nonempty");
            let class = if fr <= th.matched_frechet && p <= th.matched_pcm {
                TrackClass::Matched
            } else if p <= th.partial_pcm {
                TrackClass::Partial
            } else {
                TrackClass::Missed
            };
            let mean = mean_aligned_distance(tt, &reduced[idx], metric);
            let range = match mean {
                Some(m) if m == 0.0 => ErrorRange::Zero,
                Some(m) if m <= th.grid => ErrorRange::WithinGrid,
                _ => ErrorRange::BeyondGrid,
            };
            TrackScore { matched: Some(idx), mean_gcd: mean, frechet: fr, pcm: p, class, range }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(start: usize, n: usize, dx: f64) -> Track {
        Track::from_positions(start, &(0..n).map(|i| (i as f64 * dx, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn gcd_examples() {
        assert_eq!(gcd(10.0, 20.0, 10.0, 20.0), 0.0);
        assert!((gcd(0.0, 0.0, 90.0, 0.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((gcd(0.0, 90.0, 0.0, -90.0) - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn frechet_basics() {
        let a = line(0, 6, 1.0);
        assert_eq!(frechet(&a, &a, PointMetric::Euclidean).unwrap(), 0.0);
        let p = Track::from_positions(0, &[(0.0, 0.0)]);
        let q = Track::from_positions(0, &[(3.0, 4.0)]);
        assert_eq!(frechet(&p, &q, PointMetric::Euclidean).unwrap(), 5.0);
        assert!(frechet(&p, &Track::default(), PointMetric::Euclidean).is_err());
    }

    #[test]
    fn pcm_examples() {
        let a = Track::from_positions(0, &[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (9.0, 3.0)]);
        assert!(pcm(&a, &a, PointMetric::Euclidean).unwrap() < 1e-12);
        // exact sub-curve covering half the arc length
        let half = Track::from_positions(0, &[(0.0, 0.0), (4.0, 0.0), (4.0, 2.0)]);
        assert!(pcm(&a, &half, PointMetric::Euclidean).unwrap() < 1e-12);
        let shifted = Track {
            points: a.points.iter().map(|p| TrackPoint { x: p.x + 0.6, y: p.y - 0.8, ..*p }).collect(),
        };
        assert!((pcm(&a, &shifted, PointMetric::Euclidean).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcm_finds_interior_window() {
        let long = line(0, 21, 1.0);
        let mid = Track::from_positions(0, &[(7.3, 0.0), (12.3, 0.0)]);
        assert!(pcm(&long, &mid, PointMetric::Euclidean).unwrap() < 1e-9);
    }

    #[test]
    fn candidates_on_constant_slice() {
        let f = Field::from_fn(&[33, 33], |_| 1.0).unwrap();
        assert!(detect_candidates(&f, 0.5).unwrap().is_empty());
    }

    fn wells(centers: &[(f64, f64)], depth: f64, r: f64) -> Field {
        Field::from_fn(&[41, 41], |i| {
            centers
                .iter()
                .map(|c| -depth * (-((i[0] as f64 - c.0).powi(2) + (i[1] as f64 - c.1).powi(2)) / (2.0 * r * r)).exp())
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn single_well_found_near_center() {
        let c = (17.3, 22.6);
        let f = wells(&[c], 2.0, 3.0);
        let cands = detect_candidates(&f, 1.0).unwrap();
        assert_eq!(cands.len(), 1);
        assert!((cands[0].x - c.0).hypot(cands[0].y - c.1) <= 1.0);
        // the subpixel fit beats the node position
        assert!((cands[0].x - c.0).hypot(cands[0].y - c.1) < (17.0f64 - c.0).hypot(23.0 - c.1));
    }

    #[test]
    fn separated_wells_give_two_candidates() {
        let f = wells(&[(10.0, 10.0), (30.0, 28.0)], 2.0, 3.0);
        assert_eq!(detect_candidates(&f, 1.0).unwrap().len(), 2);
    }

    fn moving_candidates(n: usize, skip: &[usize]) -> Vec<(usize, Vec<Candidate>)> {
        (0..n)
            .map(|t| {
                let c = if skip.contains(&t) {
                    vec![]
                } else {
                    vec![Candidate { x: 5.0 + 0.7 * t as f64, y: 9.0, intensity: 1.0 }]
                };
                (t, c)
            })
            .collect()
    }

    #[test]
    fn one_moving_well_one_track() {
        let tracks = stitch_tracks(&moving_candidates(20, &[]), &StitchParams::default());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 20);
    }

    #[test]
    fn long_gap_splits_track() {
        let p = StitchParams { min_duration: 1, ..Default::default() };
        assert_eq!(stitch_tracks(&moving_candidates(20, &[9, 10]), &p).len(), 1);
        assert_eq!(stitch_tracks(&moving_candidates(20, &[8, 9, 10, 11]), &p).len(), 2);
        assert!(stitch_tracks(&[], &p).is_empty());
    }

    #[test]
    fn stitching_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slices: Vec<(usize, Vec<Candidate>)> = (0..15)
            .map(|t| {
                (t, (0..4).map(|_| Candidate { x: rng.gen_range(0.0..20.0), y: rng.gen_range(0.0..20.0), intensity: 1.0 }).collect())
            })
            .collect();
        let p = StitchParams { min_duration: 2, ..Default::default() };
        assert_eq!(stitch_tracks(&slices, &p), stitch_tracks(&slices, &p));
    }

    #[test]
    fn classify_identity_and_empty() {
        let truth = vec![line(0, 12, 0.8), Track::from_positions(0, &[(3.0, 9.0), (4.0, 9.5), (5.0, 9.0)])];
        let s = classify(&truth, &truth, &Thresholds::default(), PointMetric::Euclidean);
        assert!(s.iter().all(|x| x.class == TrackClass::Matched && x.mean_gcd == Some(0.0)));
        assert!(s.iter().all(|x| x.range == ErrorRange::Zero));
        let s = classify(&[], &truth, &Thresholds::default(), PointMetric::Euclidean);
        assert!(s.iter().all(|x| x.class == TrackClass::Missed));
    }

    #[test]
    fn truncated_track_is_partial() {
        let truth = line(0, 24, 0.8);
        let cut = Track { points: truth.points[..18].to_vec() };
        let s = classify(&[cut.clone()], &[truth.clone()], &Thresholds::default(), PointMetric::Euclidean);
        // direct scores: Fréchet is the dropped tail length, PCM is zero
        let tail = 0.8 * 6.0;
        assert!((s[0].frechet - tail).abs() < 1e-12);
        assert!(s[0].pcm < 1e-12);
        assert_eq!(s[0].class, TrackClass::Partial);
    }

    #[test]
    fn loosening_matched_threshold_never_loses_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth: Vec<Track> = (0..8).map(|k| line(0, 10, 0.5 + 0.1 * k as f64)).collect();
        let reduced: Vec<Track> = truth
            .iter()
            .map(|t| Track {
                points: t.points.iter().map(|p| TrackPoint { y: p.y + rng.gen_range(-2.0..2.0), ..*p }).collect(),
            })
            .collect();
        let mut prev = 0;
        for m in [0.2, 0.5, 1.0, 2.0, 4.0] {
            let th = Thresholds { matched_frechet: m, matched_pcm: 10.0, ..Default::default() };
            let n = classify(&reduced, &truth, &th, PointMetric::Euclidean)
                .iter()
                .filter(|s| s.class == TrackClass::Matched)
                .count();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn track_records_roundtrip() {
        let tracks = vec![line(3, 4, 1.5), line(0, 2, -0.25)];
        let mut buf = Vec::new();
        write_tracks(&mut buf, &tracks).unwrap();
        assert_eq!(read_tracks(&buf[..]).unwrap(), tracks);
    }

    /// Exhaustive minimum over monotone couplings of the max pair distance.
    pub(crate) fn brute_frechet(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        fn go(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, cur: f64, best: &mut f64) {
            let cur = cur.max((a[i].0 - b[j].0).hypot(a[i].1 - b[j].1));
            if cur >= *best {
                return;
            }
            if i + 1 == a.len() && j + 1 == b.len() {
                *best = cur;
                return;
            }
            if i + 1 < a.len() {
                go(a, b, i + 1, j, cur, best);
            }
            if j + 1 < b.len() {
                go(a, b, i, j + 1, cur, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                go(a, b, i + 1, j + 1, cur, best);
            }
        }
        let mut best = f64::INFINITY;
        go(a, b, 0, 0, 0.0, &mut best);
        best
    }

    proptest! {
        #[test]
        fn frechet_matches_couplings(
            a in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..=5),
            b in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..=5),
        ) {
            let (ta, tb) = (Track::from_positions(0, &a), Track::from_positions(0, &b));
            let d = frechet(&ta, &tb, PointMetric::Euclidean).unwrap();
            prop_assert!((d - brute_frechet(&a, &b)).abs() <= 1e-12);
            prop_assert_eq!(d, frechet(&tb, &ta, PointMetric::Euclidean).unwrap());
            let max_pair = a.iter().flat_map(|p| b.iter().map(move |q| (p.0 - q.0).hypot(p.1 - q.1))).fold(0.0, f64::max);
            prop_assert!(d <= max_pair + 1e-12);
        }

        #[test]
        fn gcd_is_symmetric_and_bounded(
            lon1 in -180.0f64..180.0, lat1 in -90.0f64..90.0,
            lon2 in -180.0f64..180.0, lat2 in -90.0f64..90.0,
        ) {
            let d = gcd(lon1, lat1, lon2, lat2);
            prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
            prop_assert_eq!(d, gcd(lon2, lat2, lon1, lat1));
        }
    }
}
