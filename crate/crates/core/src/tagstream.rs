//! Time-tag files and coincidence histograms.
//!
//! Text format: header lines `# key=value`, then one record per line,
//! `pulse_index,channel_id,time_ps`, sorted by pulse and time. Channel ids
//! 0-2 are forward detectors and 3-5 backward detectors.
//!
//! Binary format (little endian): magic `WGQTAGS1`, `u32` header entry
//! count, each entry as `u32` key length, key bytes, `u32` value length,
//! value bytes; then `u64` record count and fixed 17-byte records
//! `u64 pulse_index, u8 channel_id, i64 time_ps`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::analysis::{
    connected_component, jacobi_project, normalize, normalize_delay, project_delay, DelayProfile, JacobiMap, Normalized,
    PipelineSettings,
};
use crate::correlate::{CorrelationGrid, Direction};
use crate::error::{Error, Result};
use crate::noise;
pub use crate::trajectories::{TagRecord, TagStream};

const MAGIC: &[u8; 8] = b"WGQTAGS1";
const MAX_CHANNEL: u8 = 5;

fn format_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

pub fn write_tags(stream: &TagStream, path: &Path) -> Result<()> {
    fs::write(path, tags_to_string(stream)).map_err(|e| Error::io(path, e))
}

pub fn tags_to_string(stream: &TagStream) -> String {
    let mut s = String::new();
    for (k, v) in &stream.header {
        s.push_str(&format!("# {k}={v}\n"));
    }
    for r in &stream.records {
        s.push_str(&format!("{},{},{}\n", r.pulse_index, r.channel, r.time_ps));
    }
    s
}

pub fn write_tags_binary(stream: &TagStream, path: &Path) -> Result<()> {
    let mut b = Vec::with_capacity(16 + 17 * stream.records.len());
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&(stream.header.len() as u32).to_le_bytes());
    for (k, v) in &stream.header {
        b.extend_from_slice(&(k.len() as u32).to_le_bytes());
        b.extend_from_slice(k.as_bytes());
        b.extend_from_slice(&(v.len() as u32).to_le_bytes());
        b.extend_from_slice(v.as_bytes());
    }
    b.extend_from_slice(&(stream.records.len() as u64).to_le_bytes());
    for r in &stream.records {
        b.extend_from_slice(&r.pulse_index.to_le_bytes());
        b.push(r.channel);
        b.extend_from_slice(&r.time_ps.to_le_bytes());
    }
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

/// Reads either format, detected from the leading magic bytes.
pub fn read_tags(path: &Path) -> Result<TagStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        parse_binary(&bytes, path)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| format_err(path, 0, "not UTF-8 text"))?;
        parse_text(&text, path)
    }
}

fn check_order(prev: Option<&TagRecord>, r: &TagRecord, path: &Path, line: usize) -> Result<()> {
    if r.channel > MAX_CHANNEL {
        return Err(format_err(path, line, format!("unknown channel id {}", r.channel)));
    }
    if let Some(p) = prev {
        if (p.pulse_index, p.time_ps, p.channel) > (r.pulse_index, r.time_ps, r.channel) {
            return Err(format_err(path, line, "records are not sorted by pulse and time"));
        }
    }
    Ok(())
}

pub fn parse_text(text: &str, path: &Path) -> Result<TagStream> {
    let mut stream = TagStream::default();
    let mut in_header = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(h) = l.strip_prefix('#') {
            if !in_header {
                return Err(format_err(path, line, "header line after records"));
            }
            let (k, v) = h
                .trim()
                .split_once('=')
                .ok_or_else(|| format_err(path, line, "header line is not key=value"))?;
            stream.header.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        in_header = false;
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format_err(path, line, "expected pulse_index,channel_id,time_ps"));
        }
        let bad = |what: &str| format_err(path, line, format!("invalid {what}"));
        let channel: u64 = f[1].parse().map_err(|_| bad("channel id"))?;
        let r = TagRecord {
            pulse_index: f[0].parse().map_err(|_| bad("pulse index"))?,
            channel: u8::try_from(channel).unwrap_or(u8::MAX),
            time_ps: f[2].parse().map_err(|_| bad("time"))?,
        };
        if channel > MAX_CHANNEL as u64 {
            return Err(format_err(path, line, format!("unknown channel id {channel}")));
        }
        check_order(stream.records.last(), &r, path, line)?;
        stream.records.push(r);
    }
    Ok(stream)
}

fn parse_binary(b: &[u8], path: &Path) -> Result<TagStream> {
    let mut pos = MAGIC.len();
    let short = || format_err(path, 0, "truncated binary tag file");
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = b.get(pos..pos + n).ok_or_else(short)?;
        pos += n;
        Ok(s)
    };
    let mut stream = TagStream::default();
    let n_header = u32::from_le_bytes(take(4)?.try_into().unwrap());
    for _ in 0..n_header {
        let kl = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let k = String::from_utf8(take(kl)?.to_vec()).map_err(|_| format_err(path, 0, "header key is not UTF-8"))?;
        let vl = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let v = String::from_utf8(take(vl)?.to_vec()).map_err(|_| format_err(path, 0, "header value is not UTF-8"))?;
        stream.header.insert(k, v);
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap());
    for i in 0..n as usize {
        let rec = take(17)?;
        let r = TagRecord {
            pulse_index: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            channel: rec[8],
            time_ps: i64::from_le_bytes(rec[9..17].try_into().unwrap()),
        };
        check_order(stream.records.last(), &r, path, i + 1)?;
        stream.records.push(r);
    }
    Ok(stream)
}

/// Coincidence counts between pulses at fixed offsets, keyed by time-bin
/// indices (bin `k` is centred on `k * bin_ps` from the pulse peak).
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramSet {
    pub order: usize,
    pub pulse_offsets: Vec<u64>,
    pub bin_ps: i64,
    pub direction: Direction,
    pub counts: BTreeMap<Vec<i64>, u64>,
    /// Pulses that can start a coincidence at these offsets.
    pub n_frames: u64,
    /// Detector-to-role assignments summed in every count.
    pub assignments: u64,
}

impl HistogramSet {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Counts per frame and per detector assignment.
    pub fn rate(&self, key: &[i64]) -> f64 {
        let c = self.counts.get(key).copied().unwrap_or(0) as f64;
        c / (self.n_frames.max(1) * self.assignments) as f64
    }

    /// Dense (banded) grid of rates over bins `k_min..=k_max`.
    pub fn to_grid(&self, k_min: i64, k_max: i64, band: Option<usize>) -> CorrelationGrid {
        let axis: Vec<f64> = (k_min..=k_max).map(|k| k as f64 * self.bin_ps as f64 * 1e-3).collect();
        let norm = (self.n_frames.max(1) * self.assignments) as f64;
        let mut g = CorrelationGrid::new(self.order, self.direction, axis, band);
        let mut idx = vec![0usize; self.order];
        for (key, c) in &self.counts {
            if key.iter().any(|k| *k < k_min || *k > k_max) {
                continue;
            }
            for (i, k) in idx.iter_mut().zip(key) {
                *i = (k - k_min) as usize;
            }
            g.set(&idx, *c as f64 / norm);
        }
        g
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let names = ["t1_ns", "t2_ns", "t3_ns"];
        let mut s = names[..self.order].join(",");
        s.push_str(",counts\n");
        for (k, c) in &self.counts {
            for v in k {
                s.push_str(&format!("{},", *v as f64 * self.bin_ps as f64 * 1e-3));
            }
            s.push_str(&format!("{c}\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn bin_of(t: i64, w: i64) -> i64 {
    (t as f64 / w as f64).round() as i64
}

/// Clicks of one direction grouped by pulse index.
fn frames(stream: &TagStream, dir: Direction) -> BTreeMap<u64, Vec<TagRecord>> {
    let mut f: BTreeMap<u64, Vec<TagRecord>> = BTreeMap::new();
    for r in stream.direction(dir) {
        f.entry(r.pulse_index).or_default().push(r);
    }
    f
}

fn frame_count(stream: &TagStream, span: u64) -> u64 {
    let n = stream
        .n_pulses()
        .unwrap_or_else(|| stream.records.last().map_or(0, |r| r.pulse_index + 1));
    n.saturating_sub(span)
}

const EMPTY: &[TagRecord] = &[];

/// Two-fold coincidences between distinct detectors, with the second click
/// `pulse_offset` pulses after the first, summed over the ordered detector
/// pairs.
pub fn hist_g2(stream: &TagStream, pulse_offset: u64, bin_ps: i64, direction: Direction) -> HistogramSet {
    let f = frames(stream, direction);
    let mut counts = BTreeMap::new();
    for (&p, a) in &f {
        let b = f.get(&(p + pulse_offset)).map_or(EMPTY, Vec::as_slice);
        for x in a {
            for y in b {
                if x.channel == y.channel {
                    continue;
                }
                *counts.entry(vec![bin_of(x.time_ps, bin_ps), bin_of(y.time_ps, bin_ps)]).or_insert(0) += 1;
            }
        }
    }
    HistogramSet {
        order: 2,
        pulse_offsets: vec![0, pulse_offset],
        bin_ps,
        direction,
        counts,
        n_frames: frame_count(stream, pulse_offset),
        assignments: 6,
    }
}

/// Three-fold coincidences on three distinct detectors with the clicks taken
/// from pulses `p + offsets[k]`. Every assignment of the detectors to the
/// three roles is counted, which averages over the six channel-delay
/// combinations.
pub fn hist_g3(stream: &TagStream, offsets: [u64; 3], bin_ps: i64, direction: Direction) -> Result<HistogramSet> {
    if ![[0, 0, 0], [0, 0, 1], [0, 1, 2]].contains(&offsets) {
        return Err(Error::invalid("pulse_offsets", "must be (0,0,0), (0,0,1) or (0,1,2)"));
    }
    let f = frames(stream, direction);
    let mut counts = BTreeMap::new();
    for &p in f.keys() {
        let get = |o: u64| f.get(&(p + o)).map_or(EMPTY, Vec::as_slice);
        let (a, b, c) = (get(offsets[0]), get(offsets[1]), get(offsets[2]));
        if a.is_empty() || b.is_empty() || c.is_empty() {
            continue;
        }
        for x in a {
            for y in b {
                if std::ptr::eq(x, y) || x.channel == y.channel {
                    continue;
                }
                for z in c {
                    if z.channel == x.channel || z.channel == y.channel {
                        continue;
                    }
                    let key = vec![bin_of(x.time_ps, bin_ps), bin_of(y.time_ps, bin_ps), bin_of(z.time_ps, bin_ps)];
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(HistogramSet {
        order: 3,
        pulse_offsets: offsets.to_vec(),
        bin_ps,
        direction,
        counts,
        n_frames: frame_count(stream, offsets[2]),
        assignments: 6,
    })
}

/// Normalized maps estimated from coincidence histograms.
#[derive(Clone, Debug)]
pub struct ThirdOrderEstimate {
    pub g3: Normalized<JacobiMap>,
    pub g3c: Normalized<JacobiMap>,
    /// Correlated coincidences inside the central window.
    pub window_counts: f64,
    /// Uncorrelated coincidences inside the central window.
    pub reference_counts: f64,
}

impl ThirdOrderEstimate {
    /// Poisson standard error of the zero-delay `g3`.
    pub fn g3_error(&self) -> f64 {
        let rel = (1.0 / self.window_counts.max(1.0) + 1.0 / self.reference_counts.max(1.0)).sqrt();
        self.g3.zero_delay.abs() * rel
    }
}

/// Bin range covering all keys of the histograms.
fn key_range(sets: &[&HistogramSet]) -> Option<(i64, i64)> {
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for s in sets {
        for k in s.counts.keys().flatten() {
            lo = lo.min(*k);
            hi = hi.max(*k);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Correlated, partially correlated and uncorrelated histograms to
/// normalized `g3` and connected `g3_c` Jacobi maps.
pub fn estimate_third_order(
    correlated: &HistogramSet,
    partial: &HistogramSet,
    uncorrelated: &HistogramSet,
    settings: &PipelineSettings,
) -> Result<ThirdOrderEstimate> {
    let bin = correlated.bin_ps;
    if partial.bin_ps != bin || uncorrelated.bin_ps != bin {
        return Err(Error::GridMismatch("histograms differ in bin width".into()));
    }
    let (mut lo, mut hi) = key_range(&[correlated, partial, uncorrelated]).ok_or(Error::ZeroDenominator)?;
    // Pad to whole rebinned groups.
    let f = settings.rebin.max(1) as i64;
    lo = lo.div_euclid(f) * f;
    hi = (hi.div_euclid(f) + 1) * f - 1;
    let band = ((settings.band_ns * 1e3) / bin as f64).round() as usize;
    let c = correlated.to_grid(lo, hi, Some(band));
    let p = partial.to_grid(lo, hi, Some(band));
    let u = uncorrelated.to_grid(lo, hi, Some(band));
    let pair = |perm: [usize; 3]| p.map_indexed(|i| p.get(&[i[perm[0]], i[perm[1]], i[perm[2]]]).unwrap_or(0.0));
    let pairs = [pair([0, 1, 2]), pair([0, 2, 1]), pair([1, 2, 0])];
    let cum = connected_component(&c, [&pairs[0], &pairs[1], &pairs[2]], &u)?;
    let prep = |g: &CorrelationGrid| -> Result<JacobiMap> { jacobi_project(&noise::rebin(g, settings.rebin)?) };
    let j_u = prep(&u)?;
    let j_c = prep(&c)?;
    let g3 = normalize(&j_c, &j_u, settings.window)?;
    let g3c = normalize(&prep(&cum.connected)?, &j_u, settings.window)?;
    let counts_of = |h: &HistogramSet, j: &JacobiMap| -> Result<f64> {
        let (mean, weight) = j.window_mean(settings.window)?;
        Ok(mean * weight * (h.n_frames.max(1) * h.assignments) as f64 / h.assignments as f64)
    };
    Ok(ThirdOrderEstimate {
        window_counts: counts_of(correlated, &j_c)?,
        reference_counts: counts_of(uncorrelated, &j_u)?,
        g3,
        g3c,
    })
}

/// Delay profile `g2(tau)` from same-pulse and next-pulse histograms.
pub fn estimate_second_order(
    correlated: &HistogramSet,
    uncorrelated: &HistogramSet,
    settings: &PipelineSettings,
) -> Result<Normalized<DelayProfile>> {
    let (lo, hi) = key_range(&[correlated, uncorrelated]).ok_or(Error::ZeroDenominator)?;
    let band = ((settings.g2_band_ns * 1e3) / correlated.bin_ps as f64).round() as usize;
    let c = project_delay(&correlated.to_grid(lo, hi, Some(band)))?;
    let u = project_delay(&uncorrelated.to_grid(lo, hi, Some(band)))?;
    normalize_delay(&c, &u, settings.g2_window)
}

/// Convenience wrapper building all histograms of a stream for one
/// direction.
pub fn estimate_correlations(
    stream: &TagStream,
    direction: Direction,
    settings: &PipelineSettings,
    bin3_ps: i64,
    bin2_ps: i64,
) -> Result<(ThirdOrderEstimate, Normalized<DelayProfile>)> {
    let h = |o| hist_g3(stream, o, bin3_ps, direction);
    let third = estimate_third_order(&h([0, 0, 0])?, &h([0, 0, 1])?, &h([0, 1, 2])?, settings)?;
    let second = estimate_second_order(
        &hist_g2(stream, 0, bin2_ps, direction),
        &hist_g2(stream, 1, bin2_ps, direction),
        settings,
    )?;
    Ok((third, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    fn rec(p: u64, ch: u8, t: i64) -> TagRecord {
        TagRecord {
            pulse_index: p,
            channel: ch,
            time_ps: t,
        }
    }

    fn stream(records: Vec<TagRecord>, n: u64) -> TagStream {
        let mut s = TagStream::new();
        s.header.insert("n_pulses".into(), n.to_string());
        s.records = records;
        s
    }

    #[test]
    fn text_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for s in [stream(vec![], 0), stream(vec![rec(0, 1, -5), rec(0, 0, 12), rec(3, 4, 7)], 4)] {
            let p = dir.path().join("t.txt");
            write_tags(&s, &p).unwrap();
            let back = read_tags(&p).unwrap();
            assert_eq!(back, s);
            let again = dir.path().join("u.txt");
            write_tags(&back, &again).unwrap();
            assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
            let b = dir.path().join("t.bin");
            write_tags_binary(&s, &b).unwrap();
            assert_eq!(read_tags(&b).unwrap(), s);
        }
    }

    #[test]
    fn malformed_files_name_the_line() {
        let p = Path::new("x");
        let e = parse_text("# a=1\n0,1,5\n1,9,3\n", p).unwrap_err();
        assert!(matches!(e, Error::Format { line: 3, .. }), "{e}");
        let e = parse_text("# a=1\n2,1,5\n1,0,3\n", p).unwrap_err();
        assert!(matches!(e, Error::Format { line: 3, .. }));
        let e = parse_text("# nonsense\n", p).unwrap_err();
        assert!(matches!(e, Error::Format { line: 1, .. }));
    }

    #[test]
    fn coincidence_examples() {
        let s = stream(vec![rec(0, 0, 0), rec(0, 1, 0)], 1);
        let h = hist_g2(&s, 0, 16, Direction::Forward);
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.counts[&vec![0, 0]], 2);
        let s = stream(vec![rec(0, 0, 0), rec(1, 1, 0)], 2);
        assert_eq!(hist_g2(&s, 0, 16, Direction::Forward).total(), 0);
        let s = stream(vec![rec(0, 0, 0), rec(0, 1, 0), rec(0, 2, 0)], 1);
        let h = hist_g3(&s, [0, 0, 0], 32, Direction::Forward).unwrap();
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.counts[&vec![0, 0, 0]], 6);
        let s = stream(vec![rec(0, 0, 0), rec(0, 1, 0), rec(1, 2, 0)], 2);
        assert_eq!(hist_g3(&s, [0, 0, 0], 32, Direction::Forward).unwrap().total(), 0);
        // Backward detectors are kept apart from forward ones.
        let s = stream(vec![rec(0, 0, 0), rec(0, 4, 0)], 1);
        assert_eq!(hist_g2(&s, 0, 16, Direction::Forward).total(), 0);
    }

    #[test]
    fn relabeling_detectors_leaves_histograms_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut recs = Vec::new();
        for p in 0..400u64 {
            for _ in 0..rng.gen_range(0..4) {
                recs.push(rec(p, rng.gen_range(0..3), rng.gen_range(-300..300)));
            }
        }
        let mut s = stream(recs, 400);
        s.canonicalize();
        let mut t = s.clone();
        t.records.iter_mut().for_each(|r| r.channel = [2, 0, 1][r.channel as usize]);
        t.canonicalize();
        for o in [[0, 0, 0], [0, 0, 1], [0, 1, 2]] {
            assert_eq!(
                hist_g3(&s, o, 32, Direction::Forward).unwrap().counts,
                hist_g3(&t, o, 32, Direction::Forward).unwrap().counts
            );
        }
        assert_eq!(hist_g2(&s, 0, 16, Direction::Forward).counts, hist_g2(&t, 0, 16, Direction::Forward).counts);
    }

    /// Independent Poisson clicks with a Gaussian time profile.
    fn coherent_stream(n: u64, mean: f64, seed: u64) -> TagStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pois = Poisson::new(mean).unwrap();
        let shape = Normal::<f64>::new(0.0, 300.0).unwrap();
        let mut recs = Vec::new();
        for p in 0..n {
            let k = pois.sample(&mut rng) as usize;
            for _ in 0..k {
                recs.push(rec(p, rng.gen_range(0..3), shape.sample(&mut rng).round() as i64));
            }
        }
        let mut s = stream(recs, n);
        s.canonicalize();
        s
    }

    #[test]
    fn coherent_stream_gives_unit_correlations() {
        let s = coherent_stream(400_000, 0.6, 1);
        let settings = PipelineSettings::default();
        let (third, second) = estimate_correlations(&s, Direction::Forward, &settings, 32, 16).unwrap();
        let e3 = third.g3_error();
        assert!((third.g3.zero_delay - 1.0).abs() < 3.0 * e3, "{} +- {e3}", third.g3.zero_delay);
        assert!(third.g3c.zero_delay.abs() < 3.0 * 2.0 * e3, "{}", third.g3c.zero_delay);
        assert!((second.zero_delay - 1.0).abs() < 0.05, "{}", second.zero_delay);
    }

    #[test]
    fn same_and_next_pulse_agree_for_coherent_light() {
        // Chi-square between offset-0 and offset-1 histograms on coarse bins.
        let s = coherent_stream(200_000, 0.5, 2);
        let a = hist_g2(&s, 0, 400, Direction::Forward);
        let b = hist_g2(&s, 1, 400, Direction::Forward);
        let keys: std::collections::BTreeSet<_> = a.counts.keys().chain(b.counts.keys()).cloned().collect();
        let (mut chi, mut dof) = (0.0, 0usize);
        for k in keys {
            let x = a.counts.get(&k).copied().unwrap_or(0) as f64;
            let y = b.counts.get(&k).copied().unwrap_or(0) as f64;
            if x + y < 40.0 {
                continue;
            }
            // Each unordered click pair is counted twice, so halve the counts.
            chi += (x - y).powi(2) / (x + y) / 2.0;
            dof += 1;
        }
        let bound = dof as f64 + 2.33 * (2.0 * dof as f64).sqrt();
        assert!(chi < bound, "chi2 {chi} with {dof} dof");
    }
}
