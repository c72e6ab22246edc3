//! Neural coding schemes.
//!
//! A [`CodingScheme`] either drives an input encoder (real, rate, phase) or
//! specializes the integrate-and-fire threshold of a hidden layer (rate,
//! phase, burst):
//!
//! * rate:  `V_th(t) = v_th`
//! * phase: `V_th(t) = Π(t) · v_th`, with `Π(t) = 2^-(1 + t mod k)`
//! * burst: `V_th(t) = g(t) · v_th`, where `g` grows by `β` after every
//!   spike and falls back to 1 after a silent step.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold carried by input-layer spikes (inputs live in `[0, 1]`).
pub const INPUT_THRESHOLD: f64 = 1.0;

/// Real-coded inputs are injected at the same unit as one rate-coded spike.
pub const REAL_INPUT_SCALE: f64 = 1.0;

pub const DEFAULT_BETA: f64 = 2.0;

/// Upper bound on the phase period so that quantized values fit in a `u64`
/// and period sums stay exact in `f64`.
pub const MAX_PHASE_PERIOD: u32 = 52;

#[derive(Debug, Error, PartialEq)]
pub enum CodingError {
    #[error("invalid coding scheme: {0}")]
    Invalid(String),
    #[error("real coding has no threshold schedule (input injection only)")]
    NoThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawCodingKind")]
pub enum CodingKind {
    Real,
    Rate,
    Phase { k: u32 },
    Burst { beta: f64, g_cap: Option<f64> },
}

/// Flat wire form of [`CodingKind`]; rejects keys that do not belong to the
/// named kind (e.g. `k` on a rate scheme).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCodingKind {
    kind: String,
    k: Option<u32>,
    beta: Option<f64>,
    g_cap: Option<f64>,
}

impl TryFrom<RawCodingKind> for CodingKind {
    type Error = String;

    fn try_from(raw: RawCodingKind) -> Result<Self, String> {
        let extra = |keys: &[(&str, bool)]| -> Result<(), String> {
            match keys.iter().find(|(_, present)| *present) {
                Some((key, _)) => Err(format!("key `{key}` is not valid for kind `{}`", raw.kind)),
                None => Ok(()),
            }
        };
        let (k, beta, cap) = (raw.k.is_some(), raw.beta.is_some(), raw.g_cap.is_some());
        match raw.kind.as_str() {
            "real" | "rate" => {
                extra(&[("k", k), ("beta", beta), ("g_cap", cap)])?;
                Ok(if raw.kind == "real" {
                    CodingKind::Real
                } else {
                    CodingKind::Rate
                })
            }
            "phase" => {
                extra(&[("beta", beta), ("g_cap", cap)])?;
                let k = raw.k.ok_or("phase coding requires `k`")?;
                Ok(CodingKind::Phase { k })
            }
            "burst" => {
                extra(&[("k", k)])?;
                Ok(CodingKind::Burst {
                    beta: raw.beta.unwrap_or(DEFAULT_BETA),
                    g_cap: raw.g_cap,
                })
            }
            other => Err(format!(
                "unknown coding kind `{other}` (expected real, rate, phase or burst)"
            )),
        }
    }
}

impl CodingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CodingKind::Real => "real",
            CodingKind::Rate => "rate",
            CodingKind::Phase { .. } => "phase",
            CodingKind::Burst { .. } => "burst",
        }
    }
}

impl fmt::Display for CodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodingKind::Phase { k } => write!(f, "phase({k})"),
            CodingKind::Burst { beta, g_cap: None } => write!(f, "burst({beta})"),
            CodingKind::Burst {
                beta,
                g_cap: Some(cap),
            } => write!(f, "burst({beta},cap={cap})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Input,
    Hidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodingScheme {
    pub kind: CodingKind,
    pub v_th: f64,
}

impl CodingScheme {
    pub fn real() -> Self {
        CodingScheme {
            kind: CodingKind::Real,
            v_th: INPUT_THRESHOLD,
        }
    }

    pub fn rate(v_th: f64) -> Self {
        CodingScheme {
            kind: CodingKind::Rate,
            v_th,
        }
    }

    pub fn phase(k: u32, v_th: f64) -> Self {
        CodingScheme {
            kind: CodingKind::Phase { k },
            v_th,
        }
    }

    pub fn burst(beta: f64, v_th: f64) -> Self {
        CodingScheme {
            kind: CodingKind::Burst { beta, g_cap: None },
            v_th,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        if let CodingKind::Burst { g_cap, .. } = &mut self.kind {
            *g_cap = Some(cap);
        }
        self
    }

    pub fn validate(&self, role: LayerRole) -> Result<(), CodingError> {
        let bad = |m: String| Err(CodingError::Invalid(m));
        if !(self.v_th.is_finite() && self.v_th > 0.0) {
            return bad(format!("v_th must be finite and > 0, got {}", self.v_th));
        }
        match self.kind {
            CodingKind::Real if role == LayerRole::Hidden => {
                bad("real coding is only valid for the input layer".into())
            }
            CodingKind::Burst { .. } if role == LayerRole::Input => {
                bad("burst coding is only valid for hidden layers".into())
            }
            CodingKind::Phase { k } if k == 0 || k > MAX_PHASE_PERIOD => bad(format!(
                "phase period k must be in 1..={MAX_PHASE_PERIOD}, got {k}"
            )),
            CodingKind::Burst { beta, g_cap } => {
                if !(beta.is_finite() && beta > 1.0) {
                    return bad(format!("burst constant beta must be > 1, got {beta}"));
                }
                match g_cap {
                    Some(cap) if !(cap.is_finite() && cap > 1.0) => {
                        bad(format!("g_cap must be > 1, got {cap}"))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// `V_th(t)` for every neuron of a layer, written into `out`.
    pub fn threshold_into(
        &self,
        t: u64,
        burst: Option<&BurstState>,
        out: &mut [f64],
    ) -> Result<(), CodingError> {
        match self.kind {
            CodingKind::Real => return Err(CodingError::NoThreshold),
            CodingKind::Rate => out.fill(self.v_th),
            CodingKind::Phase { k } => out.fill(phase_weight(t, k) * self.v_th),
            CodingKind::Burst { .. } => match burst {
                Some(state) => {
                    for (o, g) in out.iter_mut().zip(&state.g) {
                        *o = g * self.v_th;
                    }
                }
                None => out.fill(self.v_th),
            },
        }
        Ok(())
    }
}

impl fmt::Display for CodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

/// Phase oscillation `Π(t) = 2^-(1 + t mod k)`.
pub fn phase_weight(t: u64, k: u32) -> f64 {
    let exponent = 1 + (t % u64::from(k)) as i32;
    2f64.powi(-exponent)
}

/// Per-neuron burst function `g` and the spike flag it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct BurstState {
    pub g: Vec<f64>,
    pub last_spiked: Vec<bool>,
}

impl BurstState {
    pub fn new(n: usize) -> Self {
        BurstState {
            g: vec![1.0; n],
            last_spiked: vec![false; n],
        }
    }

    /// Advances `g` by one step given the spikes just emitted:
    /// `g ← min(β·g, cap)` where a neuron spiked, otherwise `g ← 1`.
    pub fn update(&mut self, spiked: &[bool], beta: f64, g_cap: Option<f64>) {
        debug_assert_eq!(spiked.len(), self.g.len());
        let cap = g_cap.unwrap_or(f64::INFINITY);
        for ((g, last), &s) in self.g.iter_mut().zip(&mut self.last_spiked).zip(spiked) {
            *g = if s { (beta * *g).min(cap) } else { 1.0 };
            *last = s;
        }
    }
}

pub fn burst_update(
    state: &BurstState,
    spiked: &[bool],
    beta: f64,
    g_cap: Option<f64>,
) -> BurstState {
    let mut next = state.clone();
    next.update(spiked, beta, g_cap);
    next
}

pub fn threshold_at(
    scheme: &CodingScheme,
    t: u64,
    state: &BurstState,
) -> Result<Vec<f64>, CodingError> {
    let mut out = vec![0.0; state.g.len()];
    scheme.threshold_into(t, Some(state), &mut out)?;
    Ok(out)
}

/// Real coding: the analog pixel values themselves, injected every step.
pub fn encode_input_real(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|p| p * REAL_INPUT_SCALE).collect()
}

/// Deterministic integrate-and-fire rate encoder for input pixels.
#[derive(Clone, Debug)]
pub struct RateInputEncoder {
    v_mem: Vec<f64>,
    threshold: f64,
}

impl RateInputEncoder {
    pub fn new(n: usize, threshold: f64) -> Self {
        RateInputEncoder {
            v_mem: vec![0.0; n],
            threshold,
        }
    }

    /// Integrates one step; writes the emitted spike weight (or 0) per pixel
    /// and returns the number of spikes.
    pub fn step(&mut self, pixels: &[f64], out: &mut [f64]) -> usize {
        let mut spikes = 0;
        for ((v, &p), o) in self.v_mem.iter_mut().zip(pixels).zip(out.iter_mut()) {
            *v += p;
            if *v >= self.threshold {
                *v -= self.threshold;
                *o = self.threshold;
                spikes += 1;
            } else {
                *o = 0.0;
            }
        }
        spikes
    }
}

/// Spike trains of the rate encoder for pixel values `pixels` over `steps`
/// steps, as `spikes[t][i]`.
pub fn encode_input_rate(pixels: &[f64], v_th: f64, steps: usize) -> Vec<Vec<bool>> {
    let mut enc = RateInputEncoder::new(pixels.len(), v_th);
    let mut buf = vec![0.0; pixels.len()];
    (0..steps)
        .map(|_| {
            enc.step(pixels, &mut buf);
            buf.iter().map(|&w| w > 0.0).collect()
        })
        .collect()
}

/// `floor(p · 2^k)` clamped to `2^k − 1`.
pub fn phase_quantize(p: f64, k: u32) -> u64 {
    let levels = 1u64 << k;
    let q = (p.clamp(0.0, 1.0) * levels as f64).floor() as u64;
    q.min(levels - 1)
}

/// Whether a phase-coded input holding `q` spikes at step `t`
/// (most significant bit at phase 0).
#[inline]
pub fn phase_input_spike(q: u64, k: u32, t: u64) -> bool {
    let phase = (t % u64::from(k)) as u32;
    (q >> (k - 1 - phase)) & 1 == 1
}

#[derive(Clone, Debug)]
pub struct PhaseInputEncoder {
    q: Vec<u64>,
    k: u32,
}

impl PhaseInputEncoder {
    pub fn new(pixels: &[f64], k: u32) -> Self {
        PhaseInputEncoder {
            q: pixels.iter().map(|&p| phase_quantize(p, k)).collect(),
            k,
        }
    }

    pub fn step(&self, t: u64, out: &mut [f64]) -> usize {
        let w = phase_weight(t, self.k);
        let mut spikes = 0;
        for (&q, o) in self.q.iter().zip(out.iter_mut()) {
            if phase_input_spike(q, self.k, t) {
                *o = w;
                spikes += 1;
            } else {
                *o = 0.0;
            }
        }
        spikes
    }
}

/// Per-step input spikes for a phase-coded image, as `(spiked, weight)` at step `t`.
pub fn encode_input_phase(pixels: &[f64], k: u32, t: u64) -> Vec<(bool, f64)> {
    let w = phase_weight(t, k);
    pixels
        .iter()
        .map(|&p| {
            let s = phase_input_spike(phase_quantize(p, k), k, t);
            (s, if s { w } else { 0.0 })
        })
        .collect()
}

/// Stateful input layer for one simulation.
#[derive(Clone, Debug)]
pub enum InputEncoder {
    Real(Vec<f64>),
    Rate {
        pixels: Vec<f64>,
        encoder: RateInputEncoder,
    },
    Phase(PhaseInputEncoder),
}

impl InputEncoder {
    pub fn new(scheme: &CodingScheme, pixels: &[f64]) -> Result<Self, CodingError> {
        scheme.validate(LayerRole::Input)?;
        Ok(match scheme.kind {
            CodingKind::Real => InputEncoder::Real(encode_input_real(pixels)),
            CodingKind::Rate => InputEncoder::Rate {
                pixels: pixels.to_vec(),
                encoder: RateInputEncoder::new(pixels.len(), INPUT_THRESHOLD),
            },
            CodingKind::Phase { k } => InputEncoder::Phase(PhaseInputEncoder::new(pixels, k)),
            CodingKind::Burst { .. } => unreachable!("rejected by validate"),
        })
    }

    /// Input values never change over time (real coding).
    pub fn is_constant(&self) -> bool {
        matches!(self, InputEncoder::Real(_))
    }

    /// Writes the weighted input vector for step `t`; returns the spike count.
    pub fn step(&mut self, t: u64, out: &mut [f64]) -> usize {
        match self {
            InputEncoder::Real(values) => {
                out.copy_from_slice(values);
                0
            }
            InputEncoder::Rate { pixels, encoder } => encoder.step(pixels, out),
            InputEncoder::Phase(enc) => enc.step(t, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn phase_weight_values() {
        assert_eq!(phase_weight(0, 8), 0.5);
        assert_eq!(phase_weight(7, 8), 0.00390625);
        assert_eq!(phase_weight(8, 8), 0.5);
    }

    #[test]
    fn burst_recurrence_follows_spike_history() {
        // Θ at steps 0..4; g at steps 1..5 is derived from the previous spike
        let history = [false, true, true, false, true];
        let mut state = BurstState::new(1);
        let g: Vec<f64> = history
            .iter()
            .map(|&s| {
                state.update(&[s], 2.0, None);
                state.g[0]
            })
            .collect();
        assert_eq!(g, vec![1.0, 2.0, 4.0, 1.0, 2.0]);
        assert!(state.last_spiked[0]);
    }

    #[test]
    fn silent_neuron_keeps_unit_gain() {
        let mut state = BurstState::new(3);
        for _ in 0..20 {
            state.update(&[false, false, false], 2.0, None);
        }
        assert_eq!(state.g, vec![1.0; 3]);
    }

    #[test]
    fn burst_gain_saturates_at_cap() {
        let mut state = BurstState::new(1);
        let mut seen = Vec::new();
        for _ in 0..10 {
            state.update(&[true], 2.0, Some(16.0));
            seen.push(state.g[0]);
        }
        assert_eq!(
            seen,
            vec![2.0, 4.0, 8.0, 16.0, 16.0, 16.0, 16.0, 16.0, 16.0, 16.0]
        );
        assert!(!burst_update(&state, &[false], 2.0, Some(16.0)).last_spiked[0]);
    }

    #[test]
    fn thresholds_per_scheme() {
        let mut st = BurstState::new(2);
        assert_eq!(
            threshold_at(&CodingScheme::rate(0.125), 17, &st).unwrap(),
            vec![0.125; 2]
        );
        assert_eq!(
            threshold_at(&CodingScheme::phase(8, 1.0), 2, &st).unwrap(),
            vec![0.125; 2]
        );
        st.g = vec![4.0, 1.0];
        assert_eq!(
            threshold_at(&CodingScheme::burst(2.0, 0.125), 3, &st).unwrap(),
            vec![0.5, 0.125]
        );
        assert_eq!(
            threshold_at(&CodingScheme::real(), 0, &st),
            Err(CodingError::NoThreshold)
        );
    }

    #[test]
    fn threshold_time_structure() {
        let st = BurstState::new(1);
        let rate = CodingScheme::rate(0.3);
        let phase = CodingScheme::phase(5, 0.7);
        let burst = CodingScheme::burst(2.0, 0.2);
        for t in 0..40 {
            assert_eq!(threshold_at(&rate, t, &st), threshold_at(&rate, 0, &st));
            assert_eq!(
                threshold_at(&phase, t, &st),
                threshold_at(&phase, t + 5, &st)
            );
            assert_eq!(threshold_at(&burst, t, &st), threshold_at(&burst, 0, &st));
        }
    }

    #[test]
    fn scheme_validation() {
        assert!(CodingScheme::real().validate(LayerRole::Hidden).is_err());
        assert!(CodingScheme::burst(2.0, 0.1)
            .validate(LayerRole::Input)
            .is_err());
        assert!(CodingScheme::burst(1.0, 0.1)
            .validate(LayerRole::Hidden)
            .is_err());
        assert!(CodingScheme::burst(2.0, 0.1)
            .with_cap(0.5)
            .validate(LayerRole::Hidden)
            .is_err());
        assert!(CodingScheme::phase(0, 1.0)
            .validate(LayerRole::Hidden)
            .is_err());
        assert!(CodingScheme::rate(0.0).validate(LayerRole::Hidden).is_err());
        assert!(CodingScheme::phase(8, 0.125)
            .validate(LayerRole::Hidden)
            .is_ok());
    }

    #[test]
    fn coding_kind_json() {
        let k: CodingKind = serde_json::from_str(r#"{"kind":"burst"}"#).unwrap();
        assert_eq!(
            k,
            CodingKind::Burst {
                beta: 2.0,
                g_cap: None
            }
        );
        let k: CodingKind = serde_json::from_str(r#"{"kind":"phase","k":8}"#).unwrap();
        assert_eq!(k, CodingKind::Phase { k: 8 });
        assert!(serde_json::from_str::<CodingKind>(r#"{"kind":"phase"}"#).is_err());
        assert!(serde_json::from_str::<CodingKind>(r#"{"kind":"rate","k":3}"#).is_err());
    }

    #[test]
    fn real_injection_is_constant() {
        assert_eq!(encode_input_real(&[0.0, 0.0]), vec![0.0, 0.0]);
        let mut enc = InputEncoder::new(&CodingScheme::real(), &[0.25, 0.5]).unwrap();
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        assert_eq!(enc.step(0, &mut a), 0);
        assert_eq!(enc.step(9, &mut b), 0);
        assert_eq!(a, b);
        assert!(enc.is_constant());
    }

    #[test]
    fn rate_encoder_examples() {
        let trains = encode_input_rate(&[0.5, 0.0, 1.0], 1.0, 10);
        let times =
            |i: usize| -> Vec<usize> { (0..10).filter(|&t| trains[t][i]).map(|t| t + 1).collect() };
        assert_eq!(times(0), vec![2, 4, 6, 8, 10]);
        assert_eq!(times(0).iter().filter(|&&t| t <= 8).count(), 4);
        assert!(times(1).is_empty());
        assert_eq!(times(2).len(), 10);
    }

    #[test]
    fn phase_encoder_examples() {
        assert_eq!(phase_quantize(0.5, 8), 128);
        assert_eq!(phase_quantize(1.0, 8), 255);
        let sum: f64 = (0..8).map(|t| encode_input_phase(&[0.5], 8, t)[0].1).sum();
        assert_eq!(sum, 0.5);
        let fired: Vec<u64> = (0..16)
            .filter(|&t| encode_input_phase(&[0.5], 8, t)[0].0)
            .collect();
        assert_eq!(fired, vec![0, 8]);
        assert!((0..8).all(|t| !encode_input_phase(&[0.0], 8, t)[0].0));
    }

    #[test]
    fn phase_period_sum_exhaustive_8bit() {
        for q in 0u64..256 {
            let p = q as f64 / 256.0;
            let enc = PhaseInputEncoder::new(&[p], 8);
            let mut out = [0.0];
            let sum: f64 = (0..8)
                .map(|t| {
                    enc.step(t, &mut out);
                    out[0]
                })
                .sum();
            assert_eq!(sum, q as f64 / 256.0, "q = {q}");
        }
    }

    proptest! {
        #[test]
        fn rate_count_bound(p in 0.0f64..=1.0, steps in 1usize..2000) {
            let mut enc = RateInputEncoder::new(1, 1.0);
            let mut out = [0.0];
            let count: usize = (0..steps).map(|_| enc.step(&[p], &mut out)).sum();
            prop_assert!((count as f64 - p * steps as f64).abs() <= 1.0);
        }

        #[test]
        fn phase_decode_on_grid(q in 0u64..(1 << 10), k in 1u32..=10) {
            let q = q % (1u64 << k);
            let p = q as f64 / (1u64 << k) as f64;
            let enc = PhaseInputEncoder::new(&[p], k);
            let mut out = [0.0];
            let sum: f64 = (0..u64::from(k)).map(|t| { enc.step(t, &mut out); out[0] }).sum();
            prop_assert_eq!(sum, (p * (1u64 << k) as f64).floor() / (1u64 << k) as f64);
        }

        #[test]
        fn burst_gain_is_power_of_beta_of_run_length(history in prop::collection::vec(any::<bool>(), 1..64)) {
            let mut state = BurstState::new(1);
            let mut run = 0i32;
            for &s in &history {
                state.update(&[s], 2.0, None);
                run = if s { run + 1 } else { 0 };
                prop_assert_eq!(state.g[0], 2f64.powi(run));
            }
        }
    }
}
