//! Experiment drivers comparing timestep decimation with uniform and
//! region-adaptive compression by their effect on vortex tracks.
//!
//! Every method is scored against the tracks found on the unreduced stack.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::codec::{decompress, CompressConfig, Compressed, PreparedStack, RegionSource, TemporalStack};
use crate::error::{Error, Result};
use crate::mask::RegionMask;
use crate::roi::{LayerSpec, RefinementConfig};
use crate::synth::{gen_synthetic, SynthConfig};
use crate::track::{
    classify, detect_candidates, stitch_tracks, ErrorRange, PointMetric, StitchParams, Thresholds, Track,
    TrackClass, TrackScore,
};

/// Column header of the CSV report.
pub const CSV_HEADER: &str = "method,target_cr,achieved_cr,n_matched,n_partial,n_missed,range0,range_mid,range_inf,detect_overhead_frac,wall_seconds";

/// Error budget used when a compression method asks for a fixed bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Smallest bound whose compression ratio reaches this value.
    Ratio(f64),
    /// A fixed bound (`tau` for uniform, `tau0` for adaptive).
    Tau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Keep every `k`-th slice.
    Decimate(usize),
    Uniform(Target),
    Adaptive(Target),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Decimate(_) => "decimate",
            Method::Uniform(_) => "uniform",
            Method::Adaptive(_) => "adaptive",
        }
    }

    fn target_ratio(&self) -> Option<f64> {
        match self {
            Method::Decimate(k) => Some(*k as f64),
            Method::Uniform(Target::Ratio(r)) | Method::Adaptive(Target::Ratio(r)) => Some(*r),
            _ => None,
        }
    }
}

/// Refinement tuned for compact vortex regions: coarse first bins so the
/// per-cell rescue stays sparse, and strict percentiles.
pub fn compact_refinement() -> RefinementConfig {
    RefinementConfig {
        layers: vec![
            LayerSpec::new(16, 95.0, 99.0),
            LayerSpec::new(8, 90.0, 99.0),
            LayerSpec::new(4, 90.0, 99.0),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// Candidate depth below the slice median.
    pub depth_threshold: f64,
    pub stitch: StitchParams,
    pub thresholds: Thresholds,
    pub refinement: RefinementConfig,
    pub r_bz: usize,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            depth_threshold: 0.8,
            stitch: StitchParams::default(),
            thresholds: Thresholds::default(),
            refinement: compact_refinement(),
            r_bz: 1,
            methods: Scenario::DecimVsComp.methods(),
        }
    }
}

/// Outcome of one reduction method on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub achieved_cr: f64,
    /// Bound the compressed methods ended up using.
    pub tau: Option<f64>,
    pub scores: Vec<TrackScore>,
    /// Reference tracks scored below MATCHED whose kept points leave a gap
    /// the stitcher cannot bridge.
    pub gap_split: usize,
    pub detect_overhead: f64,
    /// Whole method, including any bound search, decompression and tracking.
    pub wall_seconds: f64,
    pub tracks: Vec<Track>,
}

impl MethodResult {
    pub fn count(&self, class: TrackClass) -> usize {
        self.scores.iter().filter(|s| s.class == class).count()
    }

    pub fn range_count(&self, range: ErrorRange) -> usize {
        self.scores.iter().filter(|s| s.range == range).count()
    }

    /// MATCHED share of the reference tracks; 1 when there are none.
    pub fn matched_rate(&self) -> f64 {
        if self.scores.is_empty() {
            1.0
        } else {
            self.count(TrackClass::Matched) as f64 / self.scores.len() as f64
        }
    }

    /// One report line. Without `timing` the two wall-clock columns stay
    /// empty, so reruns produce identical files.
    pub fn csv_row(&self, timing: bool) -> String {
        let target = self.method.target_ratio().map_or(String::new(), |r| r.to_string());
        format!(
            "{},{},{:.4},{},{},{},{},{},{},{}",
            self.method.name(),
            target,
            self.achieved_cr,
            self.count(TrackClass::Matched),
            self.count(TrackClass::Partial),
            self.count(TrackClass::Missed),
            self.range_count(ErrorRange::Zero),
            self.range_count(ErrorRange::WithinGrid),
            self.range_count(ErrorRange::BeyondGrid),
            if timing {
                format!("{:.4},{:.4}", self.detect_overhead, self.wall_seconds)
            } else {
                ",".to_string()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    /// Tracks on the unreduced stack.
    pub reference: Vec<Track>,
    /// Well-centre paths of the generator.
    pub truth: Vec<Track>,
    pub results: Vec<MethodResult>,
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, mut w: W, timing: bool) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.results {
            writeln!(w, "{}", r.csv_row(timing))?;
        }
        Ok(())
    }
}

fn track_stack(stack: &TemporalStack, keep: impl Fn(usize) -> bool, cfg: &ExperimentConfig, stitch: &StitchParams) -> Result<Vec<Track>> {
    let cands = stack
        .slices()
        .iter()
        .enumerate()
        .filter(|(t, _)| keep(*t))
        .map(|(t, s)| Ok((t, detect_candidates(s, cfg.depth_threshold)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(stitch_tracks(&cands, stitch))
}

/// Scores the full reference tracks against the reduced ones. Also counts
/// non-MATCHED tracks whose best reduced track skips a kept time inside
/// the reference's kept span: a missing candidate split or cut the chain.
fn score(tracks: &[Track], reference: &[Track], keep: impl Fn(usize) -> bool + Copy, cfg: &ExperimentConfig) -> (Vec<TrackScore>, usize) {
    let scores = classify(tracks, reference, &cfg.thresholds, PointMetric::Euclidean);
    let mut gap_split = 0;
    for (r, s) in reference.iter().zip(&scores) {
        if s.class == TrackClass::Matched {
            continue;
        }
        let kept: Vec<usize> = r.points.iter().map(|p| p.t).filter(|&t| keep(t)).collect();
        let broken = match s.matched {
            None => !kept.is_empty(),
            Some(i) => kept.iter().any(|&t| !tracks[i].points.iter().any(|p| p.t == t)),
        };
        if broken {
            gap_split += 1;
        }
    }
    (scores, gap_split)
}

/// Smallest bound whose compression reaches `target`, found by
/// bracketing from `start` in factors of 4, then bisecting in log scale.
fn search_tau(mut run: impl FnMut(f64) -> Result<Compressed>, target: f64, start: f64) -> Result<(f64, Compressed)> {
    let mut hi = start;
    let mut best = run(hi)?;
    let mut lo: f64;
    if best.report.ratio() >= target {
        // walk down until the target is missed
        loop {
            lo = hi / 4.0;
            let c = run(lo)?;
            if c.report.ratio() < target {
                break;
            }
            hi = lo;
            best = c;
            if hi < start * 1e-12 {
                return Ok((hi, best));
            }
        }
    } else {
        loop {
            lo = hi;
            hi *= 4.0;
            best = run(hi)?;
            if best.report.ratio() >= target {
                break;
            }
            if hi > start * 1e12 {
                return Err(Error::Config(format!("compression ratio {target} not reachable")));
            }
        }
    }
    for _ in 0..10 {
        let mid = (lo * hi).sqrt();
        let c = run(mid)?;
        if c.report.ratio() >= target {
            hi = mid;
            best = c;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

/// Generates one scenario and evaluates every configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (stack, truth) = gen_synthetic(&cfg.synth)?;
    let reference = track_stack(&stack, |_| true, cfg, &cfg.stitch)?;
    let scale = stack.slices().iter().map(|s| s.max_abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let mut prepared: Option<PreparedStack> = None;
    let mut mask: Option<RegionMask> = None;
    let mut results = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let result = match method {
            Method::Decimate(k) => {
                if k == 0 {
                    return Err(Error::Config("decimation factor must be at least 1".into()));
                }
                let keep = move |t: usize| t % k == 0;
                let stitch = StitchParams { max_gap: cfg.stitch.max_gap.max(k), ..cfg.stitch };
                let tracks = track_stack(&stack, keep, cfg, &stitch)?;
                let (scores, gap_split) = score(&tracks, &reference, keep, cfg);
                MethodResult {
                    method,
                    achieved_cr: stack.len() as f64 / stack.len().div_ceil(k) as f64,
                    tau: None,
                    scores,
                    gap_split,
                    detect_overhead: 0.0,
                    wall_seconds: 0.0,
                    tracks,
                }
            }
            Method::Uniform(target) | Method::Adaptive(target) => {
                if prepared.is_none() {
                    prepared = Some(PreparedStack::new(&stack)?);
                }
                let p = prepared.as_ref().expect("just set");
                let adaptive = matches!(method, Method::Adaptive(_));
                if adaptive && mask.is_none() {
                    mask = Some(p.detect(&cfg.refinement)?);
                }
                let config = |tau: f64, regions: RegionSource| {
                    if adaptive {
                        CompressConfig::adaptive(tau, f64::INFINITY, cfg.r_bz).with_regions(regions)
                    } else {
                        CompressConfig::uniform(tau)
                    }
                };
                let fixed = || RegionSource::Mask(mask.clone().expect("detected above"));
                let tau = match target {
                    Target::Tau(t) => t,
                    Target::Ratio(r) => {
                        search_tau(|tau| p.compress(&config(tau, if adaptive { fixed() } else { RegionSource::Uniform })), r, 1e-3 * scale)?.0
                    }
                };
                // final run times detection too
                let regions = if adaptive {
                    RegionSource::Detect(cfg.refinement.clone())
                } else {
                    RegionSource::Uniform
                };
                let c = p.compress(&config(tau, regions))?;
                let restored = decompress(&c.blob)?;
                let tracks = track_stack(&restored, |_| true, cfg, &cfg.stitch)?;
                let (scores, gap_split) = score(&tracks, &reference, |_| true, cfg);
                MethodResult {
                    method,
                    achieved_cr: c.report.ratio(),
                    tau: Some(tau),
                    scores,
                    gap_split,
                    detect_overhead: if adaptive { c.report.timing.detection_fraction() } else { 0.0 },
                    wall_seconds: 0.0,
                    tracks,
                }
            }
        };
        results.push(MethodResult { wall_seconds: start.elapsed().as_secs_f64(), ..result });
    }
    Ok(ExperimentReport { seed: cfg.synth.seed, reference, truth, results })
}

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Decimation by 6 against compression at a ratio of 6.
    DecimVsComp,
    /// Uniform against adaptive compression at ratios 15 and 30.
    AdaptiveVsUniform,
    /// Near-lossless settings; every method should match every track.
    Lossless,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::DecimVsComp, Scenario::AdaptiveVsUniform, Scenario::Lossless];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::DecimVsComp => "decim-vs-comp",
            Scenario::AdaptiveVsUniform => "adaptive-vs-uniform",
            Scenario::Lossless => "lossless",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::DecimVsComp => "decimation k=6 vs uniform and adaptive compression at CR 6",
            Scenario::AdaptiveVsUniform => "uniform vs adaptive compression at CR 15 and 30",
            Scenario::Lossless => "k=1 decimation and compression with tau 1e-9",
        }
    }

    pub fn methods(self) -> Vec<Method> {
        match self {
            Scenario::DecimVsComp => vec![
                Method::Decimate(6),
                Method::Uniform(Target::Ratio(6.0)),
                Method::Adaptive(Target::Ratio(6.0)),
            ],
            Scenario::AdaptiveVsUniform => vec![
                Method::Uniform(Target::Ratio(15.0)),
                Method::Adaptive(Target::Ratio(15.0)),
                Method::Uniform(Target::Ratio(30.0)),
                Method::Adaptive(Target::Ratio(30.0)),
            ],
            Scenario::Lossless => vec![
                Method::Decimate(1),
                Method::Uniform(Target::Tau(1e-9)),
                Method::Adaptive(Target::Tau(1e-9)),
            ],
        }
    }

    pub fn config(self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig { seed, ..SynthConfig::default() },
            methods: self.methods(),
            ..ExperimentConfig::default()
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig { dims: [33, 33], steps: 16, n_vortices: 2, seed: 3, ..Default::default() },
            methods,
            ..Default::default()
        }
    }

    #[test]
    fn lossless_matches_everything() {
        let r = run_experiment(&small(Scenario::Lossless.methods())).unwrap();
        assert!(!r.reference.is_empty());
        for m in &r.results {
            assert_eq!(m.count(TrackClass::Matched), r.reference.len(), "{:?}", m.method);
            assert_eq!(m.range_count(ErrorRange::BeyondGrid), 0);
        }
    }

    #[test]
    fn ratio_search_reaches_target() {
        let r = run_experiment(&small(vec![Method::Uniform(Target::Ratio(8.0)), Method::Adaptive(Target::Ratio(8.0))])).unwrap();
        for m in &r.results {
            assert!(m.achieved_cr >= 8.0, "{:?} reached {}", m.method, m.achieved_cr);
            assert!(m.tau.unwrap() > 0.0);
        }
    }

    #[test]
    fn decimation_ratio() {
        let r = run_experiment(&small(vec![Method::Decimate(3)])).unwrap();
        assert!((r.results[0].achieved_cr - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_method() {
        let r = run_experiment(&small(vec![Method::Decimate(2), Method::Uniform(Target::Tau(1e-2))])).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out, true).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("decimate,2,"));
        assert!(lines[2].starts_with("uniform,,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn scenario_names_roundtrip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn deterministic_apart_from_timing() {
        let cfg = small(vec![Method::Decimate(4), Method::Uniform(Target::Ratio(5.0))]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        for (x, y) in a.results.iter().zip(&b.results) {
            assert_eq!(x.scores, y.scores);
            assert_eq!(x.achieved_cr, y.achieved_cr);
        }
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca, false).unwrap();
        b.write_csv(&mut cb, false).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().lines().skip(1).all(|l| l.ends_with(",,")));
    }
}
