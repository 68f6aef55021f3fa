use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::catalog::*;
use super::map::FrameFeatureMap;
use super::spectral::spectral_shape_features;
use super::voice::{cepstral_peak_prominence, log_hnr, perturbation_features};
use crate::error::{invalid, CoreError, Result};
use crate::signal::{
    autocorrelation_pitch, frame_signal, rasta_filter, FrameSet, MelFilterbank, PitchEstimate, Spectrum,
    SpectrumAnalyzer, Waveform, LOG_FLOOR,
};

/// Per-recording intermediate results shared by all extractors.
#[derive(Debug, Clone)]
pub struct RecordingAnalysis {
    pub params: ExtractionParams,
    pub sample_rate: u32,
    pub frames: FrameSet,
    pub analyzer: SpectrumAnalyzer,
    pub spectra: Vec<Spectrum>,
    /// Linear mel band energies, `frames × 26`.
    pub mel_energies: Vec<Vec<f64>>,
    pub log_mel: Vec<Vec<f64>>,
    pub rasta: Vec<Vec<f64>>,
    pub pitch: Vec<PitchEstimate>,
}

impl RecordingAnalysis {
    pub fn new(w: &Waveform, params: &ExtractionParams) -> Result<Self> {
        if w.is_empty() {
            return invalid("empty waveform");
        }
        let frames = frame_signal(w, params.window_ms, params.step_ms)?;
        let sr = w.sample_rate();
        let analyzer = SpectrumAnalyzer::new(frames.frame_len(), sr)?;
        let fb = MelFilterbank::new(N_MEL, analyzer.n_fft(), sr as f64, params.mel_fmin_hz, sr as f64 / 2.0)?;
        let spectra = frames.iter().map(|f| analyzer.spectrum(f)).collect::<Result<Vec<_>>>()?;
        let mel_energies: Vec<Vec<f64>> = spectra.iter().map(|s| fb.energies(s)).collect();
        let log_mel: Vec<Vec<f64>> = mel_energies
            .iter()
            .map(|e| e.iter().map(|v| v.max(LOG_FLOOR).ln()).collect())
            .collect();
        let rasta = rasta_filter(&log_mel);
        let pcfg = params.pitch();
        let pitch = frames
            .iter()
            .map(|f| autocorrelation_pitch(f, sr, &pcfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: params.clone(),
            sample_rate: sr,
            frames,
            analyzer,
            spectra,
            mel_energies,
            log_mel,
            rasta,
            pitch,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.n_frames()
    }
}

/// A frame value that was undefined and emitted as 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegenerateFlag {
    pub frame: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractorOutput {
    /// One row per frame, one value per owned column.
    pub rows: Vec<Vec<f64>>,
    pub flags: Vec<DegenerateFlag>,
}

/// Computes a fixed subset of catalog columns from a recording analysis.
pub trait LldExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn columns(&self) -> Vec<usize>;
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput>;
}

impl fmt::Debug for dyn LldExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LldExtractor({})", self.name())
    }
}

fn rows_only(rows: Vec<Vec<f64>>) -> ExtractorOutput {
    ExtractorOutput { rows, flags: Vec::new() }
}

struct PitchExtractor;

impl LldExtractor for PitchExtractor {
    fn name(&self) -> &str {
        "pitch"
    }
    fn columns(&self) -> Vec<usize> {
        vec![F0, VOICING]
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        Ok(rows_only(a.pitch.iter().map(|p| vec![p.f0_hz, p.voicing]).collect()))
    }
}

/// Jitter, shimmer and logHNR. Periods come from the per-frame F0 estimate;
/// amplitudes are frame peak magnitudes. Local values use frames t−1 and t,
/// DDP uses t−1..t+1, all of which must be voiced.
struct PerturbationExtractor;

impl LldExtractor for PerturbationExtractor {
    fn name(&self) -> &str {
        "perturbation"
    }
    fn columns(&self) -> Vec<usize> {
        vec![JITTER_LOCAL, JITTER_DDP, SHIMMER_LOCAL, LOG_HNR]
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        let n = a.n_frames();
        let periods: Vec<Option<f64>> = a.pitch.iter().map(|p| p.period_s()).collect();
        let amps: Vec<f64> = a.frames.iter().map(|f| f.iter().fold(0.0, |m: f64, v| m.max(v.abs()))).collect();
        let mut out = ExtractorOutput::default();
        for t in 0..n {
            let voiced_run = |lo: usize, hi: usize| -> Option<(Vec<f64>, Vec<f64>)> {
                let ps = (lo..=hi).map(|k| periods[k]).collect::<Option<Vec<_>>>()?;
                Some((ps, amps[lo..=hi].to_vec()))
            };
            let pair = (t >= 1).then(|| voiced_run(t - 1, t)).flatten();
            let triple = (t >= 1 && t + 1 < n).then(|| voiced_run(t - 1, t + 1)).flatten();
            let (jl, sl) = match &pair {
                Some((p, amp)) => {
                    let r = perturbation_features(p, amp);
                    (Some(r.jitter_local), (!r.shimmer_local_undefined).then_some(r.shimmer_local))
                }
                None => (None, None),
            };
            let jd = triple.map(|(p, amp)| perturbation_features(&p, &amp).jitter_ddp);
            let p = &a.pitch[t];
            let hnr = log_hnr(p.voicing, p.is_voiced());
            for (col, v) in [(JITTER_LOCAL, jl), (JITTER_DDP, jd), (SHIMMER_LOCAL, sl)] {
                if v.is_none() {
                    out.flags.push(DegenerateFlag { frame: t, column: col });
                }
            }
            out.rows.push(vec![jl.unwrap_or(0.0), jd.unwrap_or(0.0), sl.unwrap_or(0.0), hnr]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhythmValues {
    pub rms: f64,
    pub zcr: f64,
    pub spl: f64,
    pub activity: f64,
    pub audspec_l1: f64,
    pub audspec_rasta_l1: f64,
}

/// Energy and zero-crossing descriptors of one frame. `activity_threshold`
/// is the recording-level RMS threshold.
pub fn rhythm_features(frame: &[f64], mel_energies: &[f64], rasta_bands: &[f64], activity_threshold: f64) -> RhythmValues {
    let rms = (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt();
    let zcr = if frame.len() > 1 {
        frame.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count() as f64 / (frame.len() - 1) as f64
    } else {
        0.0
    };
    RhythmValues {
        rms,
        zcr,
        spl: 20.0 * (rms.max(LOG_FLOOR) / LOG_FLOOR).log10(),
        activity: if rms > activity_threshold { 1.0 } else { 0.0 },
        audspec_l1: mel_energies.iter().sum(),
        audspec_rasta_l1: rasta_bands.iter().map(|v| v.abs()).sum(),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct RhythmExtractor;

impl LldExtractor for RhythmExtractor {
    fn name(&self) -> &str {
        "rhythm"
    }
    fn columns(&self) -> Vec<usize> {
        vec![AUDSPEC_L1, RMS, ZCR, ENERGY, ZCR_RATE, SPL, ACTIVITY]
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        let rms: Vec<f64> = a
            .frames
            .iter()
            .map(|f| (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt())
            .collect();
        let threshold = a.params.activity_ratio * median(&rms);
        let rows = a
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let r = rhythm_features(f, &a.mel_energies[t], &a.rasta[t], threshold);
                vec![
                    r.audspec_l1,
                    r.rms,
                    r.zcr,
                    r.rms * r.rms,
                    r.zcr * a.sample_rate as f64,
                    r.spl,
                    r.activity,
                ]
            })
            .collect();
        Ok(rows_only(rows))
    }
}

struct RastaExtractor;

impl LldExtractor for RastaExtractor {
    fn name(&self) -> &str {
        "rasta"
    }
    fn columns(&self) -> Vec<usize> {
        std::iter::once(AUDSPEC_RASTA_L1).chain(RASTA_FIRST..RASTA_FIRST + N_MEL).collect()
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        Ok(rows_only(
            a.rasta
                .iter()
                .map(|bands| {
                    let l1 = bands.iter().map(|v| v.abs()).sum();
                    std::iter::once(l1).chain(bands.iter().copied()).collect()
                })
                .collect(),
        ))
    }
}

struct SpectralExtractor;

impl LldExtractor for SpectralExtractor {
    fn name(&self) -> &str {
        "spectral"
    }
    fn columns(&self) -> Vec<usize> {
        (SPECTRAL_FIRST..SPECTRAL_FIRST + super::spectral::N_SPECTRAL).collect()
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        Ok(rows_only(
            a.spectra
                .iter()
                .enumerate()
                .map(|(t, s)| spectral_shape_features(s, t.checked_sub(1).map(|p| &a.spectra[p])).to_vec())
                .collect(),
        ))
    }
}

/// Orthonormal DCT-II of the log mel energies, coefficients 1–14.
pub fn mfcc_from_log_mel(log_mel: &[f64]) -> [f64; N_MFCC] {
    let b = log_mel.len() as f64;
    let scale = (2.0 / b).sqrt();
    let mut out = [0.0; N_MFCC];
    for (k, o) in out.iter_mut().enumerate() {
        let k = (k + 1) as f64;
        *o = scale
            * log_mel
                .iter()
                .enumerate()
                .map(|(n, v)| v * (std::f64::consts::PI * k * (n as f64 + 0.5) / b).cos())
                .sum::<f64>();
    }
    out
}

struct MfccExtractor;

impl LldExtractor for MfccExtractor {
    fn name(&self) -> &str {
        "mfcc"
    }
    fn columns(&self) -> Vec<usize> {
        (MFCC_FIRST..MFCC_FIRST + N_MFCC).collect()
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        Ok(rows_only(a.log_mel.iter().map(|l| mfcc_from_log_mel(l).to_vec()).collect()))
    }
}

struct CepstralExtractor;

impl LldExtractor for CepstralExtractor {
    fn name(&self) -> &str {
        "cepstral"
    }
    fn columns(&self) -> Vec<usize> {
        vec![CPP, CPP_BAND, CPP_HIGH]
    }
    fn extract(&self, a: &RecordingAnalysis) -> Result<ExtractorOutput> {
        let rows = a
            .frames
            .iter()
            .map(|f| cepstral_peak_prominence(f, &a.analyzer).map(|r| vec![r.cpp, r.cpp_band, r.cpp_high]))
            .collect::<Result<Vec<_>>>()?;
        Ok(rows_only(rows))
    }
}

/// Named set of extractors that together must cover every catalog column
/// exactly once.
#[derive(Clone, Default)]
pub struct ExtractorRegistry {
    extractors: BTreeMap<String, Arc<dyn LldExtractor>>,
}

impl fmt::Debug for ExtractorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.extractors.keys()).finish()
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(PitchExtractor));
        r.register(Arc::new(PerturbationExtractor));
        r.register(Arc::new(RhythmExtractor));
        r.register(Arc::new(RastaExtractor));
        r.register(Arc::new(SpectralExtractor));
        r.register(Arc::new(MfccExtractor));
        r.register(Arc::new(CepstralExtractor));
        r
    }

    /// Adds or replaces an extractor under its own name.
    pub fn register(&mut self, e: Arc<dyn LldExtractor>) -> Option<Arc<dyn LldExtractor>> {
        self.extractors.insert(e.name().to_string(), e)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn LldExtractor>> {
        self.extractors.get(name).cloned().ok_or_else(|| CoreError::UnknownStrategy {
            kind: "extractor",
            name: name.to_string(),
            available: self.names(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.extractors.keys().cloned().collect()
    }

    fn check_coverage(&self) -> Result<()> {
        let mut owner: Vec<Option<&str>> = vec![None; N_LLD];
        for (name, e) in &self.extractors {
            for c in e.columns() {
                if c >= N_LLD {
                    return invalid(format!("extractor {name} claims column {c}"));
                }
                if let Some(prev) = owner[c].replace(name) {
                    return invalid(format!("column {c} claimed by both {prev} and {name}"));
                }
            }
        }
        if let Some(c) = owner.iter().position(Option::is_none) {
            return invalid(format!("no extractor for column {c}"));
        }
        Ok(())
    }

    pub fn extract_with_flags(
        &self,
        w: &Waveform,
        catalog: &FeatureCatalog,
        source_id: &str,
    ) -> Result<(FrameFeatureMap, Vec<DegenerateFlag>)> {
        self.check_coverage()?;
        let a = RecordingAnalysis::new(w, catalog.params())?;
        let n = a.n_frames();
        let mut values = vec![0.0; n * N_LLD];
        let mut flags = Vec::new();
        for (name, e) in &self.extractors {
            let cols = e.columns();
            let out = e.extract(&a)?;
            if out.rows.len() != n || out.rows.iter().any(|r| r.len() != cols.len()) {
                return invalid(format!("extractor {name} returned a malformed block"));
            }
            for (t, row) in out.rows.iter().enumerate() {
                for (&c, &v) in cols.iter().zip(row) {
                    values[t * N_LLD + c] = v;
                }
            }
            flags.extend(out.flags);
        }
        flags.sort_by_key(|f| (f.frame, f.column));
        Ok((FrameFeatureMap::new(values, catalog.hash(), source_id)?, flags))
    }

    pub fn extract(&self, w: &Waveform, catalog: &FeatureCatalog, source_id: &str) -> Result<FrameFeatureMap> {
        self.extract_with_flags(w, catalog, source_id).map(|(m, _)| m)
    }
}

/// Frame-level descriptor map with the built-in extractors.
pub fn extract_lld_map(w: &Waveform, catalog: &FeatureCatalog, source_id: &str) -> Result<FrameFeatureMap> {
    ExtractorRegistry::with_defaults().extract(w, catalog, source_id)
}
