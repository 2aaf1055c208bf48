//! Algorithm configuration, read from and written to JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io;
use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::simgraph::{GraphParams, KnnMode};
use crate::stft::WindowKind;
use crate::transition::ObjectiveParams;

/// All tunables of the pipeline. JSON keys use the conventional symbol names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    /// Maximum analysis sampling rate in Hz.
    pub xi_max: f64,
    /// Hop size in decimated samples.
    pub a: usize,
    /// Number of frequency channels.
    #[serde(rename = "M")]
    pub m: usize,
    /// Analysis window length in decimated samples.
    #[serde(rename = "L_w")]
    pub l_w: usize,
    pub window: WindowKind,
    /// Dynamic range of the magnitude feature in dB.
    pub t_s: f64,
    /// Weight of the instantaneous frequency feature.
    pub lambda: f64,
    /// Nearest neighbors per frame.
    #[serde(rename = "K")]
    pub k: usize,
    /// Diagonal kernel length in frames.
    #[serde(rename = "L_K")]
    pub l_k: usize,
    /// Sparsification threshold.
    pub t_w: f64,
    pub gamma_len: f64,
    pub gamma_w: f64,
    /// Search range before and after the gap in seconds.
    pub epsilon_seconds: f64,
    /// Smoothing length for the frequency feature in frames.
    pub v_len: usize,
    pub knn_mode: KnnMode,
    /// Neighbors closer than this many frames are excluded; defaults to `L_K`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<usize>,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            xi_max: 12000.0,
            a: 128,
            m: 1024,
            l_w: 1024,
            window: WindowKind::Itersine,
            t_s: 50.0,
            lambda: 1.5,
            k: 40,
            l_k: 40,
            t_w: 2.0,
            gamma_len: 1.0,
            gamma_w: 100.0,
            epsilon_seconds: 5.0,
            v_len: 8,
            knn_mode: KnnMode::Exact,
            min_separation: None,
        }
    }
}

impl AlgoConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.xi_max > 0.0 && self.xi_max.is_finite()) {
            return bad("xi_max must be positive");
        }
        if self.a == 0 || self.l_w == 0 || !self.l_w.is_multiple_of(2) {
            return bad("a must be positive and L_w even and positive");
        }
        if self.m < self.l_w {
            return bad("M must be at least L_w");
        }
        if !self.l_w.is_multiple_of(self.a) {
            return bad("a must divide L_w");
        }
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return bad("t_s must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.v_len == 0 {
            return bad("v_len must be positive");
        }
        if !(self.epsilon_seconds >= 0.0 && self.epsilon_seconds.is_finite()) {
            return bad("epsilon_seconds must be non-negative");
        }
        self.graph_params(1.0).validate()?;
        self.objective_params().validate()
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            max_rate: self.xi_max,
            hop: self.a,
            channels: self.m,
            window_length: self.l_w,
            window: self.window,
            db_range: self.t_s,
            phase_weight: self.lambda,
            smoothing_length: self.v_len,
        }
    }

    /// Search range in frames for a given frame rate.
    pub fn epsilon_frames(&self, frame_rate: f64) -> usize {
        (self.epsilon_seconds * frame_rate).round() as usize
    }

    pub fn graph_params(&self, frame_rate: f64) -> GraphParams {
        let eps = self.epsilon_frames(frame_rate);
        GraphParams {
            neighbors: self.k,
            kernel_length: self.l_k,
            threshold: self.t_w,
            sigma: None,
            min_separation: self.min_separation.unwrap_or(self.l_k),
            eps_before: eps,
            eps_after: eps,
            knn_mode: self.knn_mode,
            seed: 0,
        }
    }

    pub fn objective_params(&self) -> ObjectiveParams {
        ObjectiveParams {
            gamma_len: self.gamma_len,
            gamma_w: self.gamma_w,
            min_length: self.l_k,
        }
    }

    /// Decimation factor `d` for a given input rate.
    pub fn decimation(&self, sample_rate: u32) -> Result<usize> {
        audio_io::decimation_factor(sample_rate, self.xi_max)
    }

    /// Effective hop `a d` in input samples.
    pub fn effective_hop(&self, sample_rate: u32) -> Result<usize> {
        Ok(self.a * self.decimation(sample_rate)?)
    }

    /// Half cross-fade length `ceil(L_w / 2) d` in input samples.
    pub fn half_window(&self, sample_rate: u32) -> Result<usize> {
        Ok(self.l_w.div_ceil(2) * self.decimation(sample_rate)?)
    }
}
