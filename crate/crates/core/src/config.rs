//! Scenario description: a loosely typed [`ScenarioSpec`] as read from a file
//! and the fully resolved [`ScenarioConfig`] a run consumes.
//!
//! Every spec field is optional. Resolution fills defaults (several depend on
//! the content resolution), normalises units and reports every violation with
//! the dotted path of the offending field.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::admission::{BetaCoefficients, BetaMode, EpsilonMode};
use crate::ratecontrol::ControllerParams;
use crate::traces::{ContentProfile, Resolution, QP_MAX, QP_MIN};
use crate::units::{BitRate, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    NonAdaptive,
    Adaptive,
    CrossLayer,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::NonAdaptive => "non_adaptive",
            Architecture::Adaptive => "adaptive",
            Architecture::CrossLayer => "cross_layer",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaModeName {
    Experimental,
    Modeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalPolicyName {
    UniformWindow,
    PerSecondRandom,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: Option<String>,
    pub architecture: Option<Architecture>,
    pub duration_s: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    /// Ladder manifest to replay instead of synthetic traces, relative to the
    /// config file.
    pub trace_manifest: Option<String>,
    pub content: Option<ContentSpec>,
    pub link: Option<LinkSpec>,
    pub sources: Option<SourcesSpec>,
    pub admission: Option<AdmissionSpec>,
    pub controller: Option<ControllerSpec>,
    pub arrivals: Option<ArrivalsSpec>,
    pub metrics: Option<MetricsSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentSpec {
    /// `mad-like` or `grandma-like`; supplies every field left unset.
    pub preset: Option<String>,
    pub name: Option<String>,
    pub resolution: Option<Resolution>,
    pub frame_rate: Option<u32>,
    pub gop_length: Option<u32>,
    pub frames: Option<u32>,
    pub base_rate_kbps: Option<f64>,
    pub rate_exponent: Option<f64>,
    pub burstiness: Option<f64>,
    pub i_to_p_ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub capacity_mbps: Option<f64>,
    pub delay_ms: Option<f64>,
    pub reverse_delay_ms: Option<f64>,
    pub queue_packets: Option<usize>,
    pub ecn_threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSpec {
    pub video: Option<u32>,
    pub ftp: Option<u32>,
    pub ftp_start_window_s: Option<[f64; 2]>,
    pub ftp_max_window: Option<u32>,
    pub ftp_ecn: Option<bool>,
    pub packet_bytes: Option<u32>,
    pub header_bytes: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissionSpec {
    pub beta_mode: Option<BetaModeName>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon_mode: Option<EpsilonMode>,
    pub measurement_window_s: Option<f64>,
    pub measurement_interval_s: Option<f64>,
    pub activity_probability: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub step: Option<u8>,
    pub quiet_intervals: Option<u32>,
    pub bucket_drain_factor: Option<f64>,
    pub bucket_depth_gops: Option<f64>,
    pub feedback_min_interval_ms: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsSpec {
    pub policy: Option<ArrivalPolicyName>,
    pub window_s: Option<[f64; 2]>,
    pub max_sessions: Option<u32>,
    pub start_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    pub decode_threshold: Option<f64>,
    /// Seconds excluded from the start of the run when computing the
    /// per-second sending-rate variation.
    pub rate_cv_warmup_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkConfig {
    pub capacity: BitRate,
    pub propagation_delay: SimTime,
    pub reverse_delay: SimTime,
    pub queue_packets: usize,
    pub ecn_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourcesConfig {
    pub video: u32,
    pub ftp: u32,
    pub ftp_start_window: (SimTime, SimTime),
    pub ftp_max_window: u32,
    /// Bulk senders halve their window on echoed congestion marks as well as
    /// on losses.
    pub ftp_ecn: bool,
    pub packet_bytes: u32,
    pub header_bytes: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissionConfig {
    pub beta_mode: BetaMode,
    pub epsilon_mode: EpsilonMode,
    pub measurement_window: SimTime,
    pub measurement_interval: SimTime,
    pub activity_probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub params: ControllerParams,
    pub bucket_drain_factor: f64,
    pub bucket_depth_gops: f64,
    pub feedback_min_interval: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArrivalPolicy {
    /// Every source starts at a uniform random time in `[start, end)`.
    UniformWindow { start: SimTime, end: SimTime },
    /// One request at a random instant of every second from `start` on,
    /// until `max_sessions` are running.
    PerSecondRandom { max_sessions: u32, start: SimTime },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub architecture: Architecture,
    pub duration: SimTime,
    pub seeds: Vec<u64>,
    pub trace_manifest: Option<String>,
    pub content: ContentProfile,
    pub link: LinkConfig,
    pub sources: SourcesConfig,
    pub admission: AdmissionConfig,
    pub controller: ControllerConfig,
    pub arrivals: ArrivalPolicy,
    pub decode_threshold: f64,
    pub rate_cv_warmup: SimTime,
}

struct Checker {
    errors: Vec<FieldError>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, v: f64) -> f64 {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(path, format!("must be a positive number, got {v}"));
        }
        v
    }

    fn non_negative(&mut self, path: &str, v: f64) -> f64 {
        if !(v >= 0.0 && v.is_finite()) {
            self.fail(path, format!("must be >= 0, got {v}"));
        }
        v
    }

    fn fraction(&mut self, path: &str, v: f64) -> f64 {
        if !(0.0..=1.0).contains(&v) {
            self.fail(path, format!("must lie in [0,1], got {v}"));
        }
        v
    }

    fn window(&mut self, path: &str, w: [f64; 2], duration: f64) -> (SimTime, SimTime) {
        let [a, b] = w;
        if !(a >= 0.0 && a.is_finite() && b.is_finite()) || a > b {
            self.fail(
                path,
                format!("must be an ordered pair of times >= 0, got [{a}, {b}]"),
            );
        } else if b > duration {
            self.fail(
                path,
                format!("ends at {b} s, after the run ends at {duration} s"),
            );
        }
        (SimTime::from_secs_f64(a), SimTime::from_secs_f64(b))
    }
}

fn secs(s: f64) -> SimTime {
    SimTime::from_secs_f64(s)
}

fn millis(ms: f64) -> SimTime {
    SimTime::from_secs_f64(ms / 1e3)
}

impl ScenarioSpec {
    /// Fills defaults and checks every constraint. Returns all violations at
    /// once.
    pub fn resolve(&self) -> Result<ScenarioConfig, Vec<FieldError>> {
        let mut c = Checker { errors: Vec::new() };

        let architecture = match self.architecture {
            Some(a) => a,
            None => {
                c.fail(
                    "architecture",
                    "missing; expected non_adaptive, adaptive or cross_layer",
                );
                Architecture::CrossLayer
            }
        };
        let duration_s = c.positive("duration_s", self.duration_s.unwrap_or(500.0));

        let seeds = self.seeds.clone().unwrap_or_else(|| vec![1]);
        if seeds.is_empty() {
            c.fail("seeds", "at least one seed is required");
        }
        let mut seen = BTreeSet::new();
        for s in &seeds {
            if !seen.insert(*s) {
                c.fail("seeds", format!("duplicate seed {s}"));
            }
        }

        let content = self.resolve_content(&mut c);
        let cif = content.resolution == Resolution::Cif;

        let link = self.link.clone().unwrap_or_default();
        let capacity_mbps = c.positive(
            "link.capacity_mbps",
            link.capacity_mbps.unwrap_or(if cif { 32.0 } else { 7.0 }),
        );
        let delay_ms = c.non_negative("link.delay_ms", link.delay_ms.unwrap_or(1.0));
        let reverse_ms = c.non_negative(
            "link.reverse_delay_ms",
            link.reverse_delay_ms.unwrap_or(delay_ms),
        );
        let queue_packets = link.queue_packets.unwrap_or(if cif { 300 } else { 100 });
        if queue_packets == 0 {
            c.fail("link.queue_packets", "must be at least 1");
        }
        let ecn_threshold = link.ecn_threshold.unwrap_or(0.8);
        if !(ecn_threshold > 0.0 && ecn_threshold <= 1.0) {
            c.fail(
                "link.ecn_threshold",
                format!("must lie in (0,1], got {ecn_threshold}"),
            );
        }

        let src = self.sources.clone().unwrap_or_default();
        let video = src.video.unwrap_or(24);
        let ftp = src.ftp.unwrap_or(48);
        let ftp_start_window = c.window(
            "sources.ftp_start_window_s",
            src.ftp_start_window_s
                .unwrap_or([0.0, 20.0f64.min(duration_s)]),
            duration_s,
        );
        let ftp_max_window = src.ftp_max_window.unwrap_or(20);
        if ftp_max_window == 0 {
            c.fail("sources.ftp_max_window", "must be at least 1");
        }
        let packet_bytes = src.packet_bytes.unwrap_or(1052);
        let header_bytes = src.header_bytes.unwrap_or(28);
        if packet_bytes <= header_bytes {
            c.fail(
                "sources.packet_bytes",
                format!("must exceed the {header_bytes} B of headers, got {packet_bytes}"),
            );
        }

        let adm = self.admission.clone().unwrap_or_default();
        let beta_mode = match adm.beta_mode.unwrap_or(BetaModeName::Experimental) {
            BetaModeName::Experimental => {
                let b = adm.beta.unwrap_or(if cif { 0.9 } else { 0.78 });
                if !(b > 0.0 && b <= 1.0) {
                    c.fail("admission.beta", "β must lie in (0,1]");
                }
                BetaMode::Experimental(b)
            }
            BetaModeName::Modeled => match (adm.alpha, adm.delta) {
                (Some(alpha), Some(delta)) => match BetaCoefficients::new(alpha, delta) {
                    Ok(k) => BetaMode::Modeled(k),
                    Err(_) => {
                        c.fail("admission.delta", "must be a non-zero number");
                        BetaMode::Experimental(1.0)
                    }
                },
                (a, d) => {
                    if a.is_none() {
                        c.fail("admission.alpha", "required when beta_mode = \"modeled\"");
                    }
                    if d.is_none() {
                        c.fail("admission.delta", "required when beta_mode = \"modeled\"");
                    }
                    BetaMode::Experimental(1.0)
                }
            },
        };
        let measurement_window = secs(c.positive(
            "admission.measurement_window_s",
            adm.measurement_window_s.unwrap_or(1.0),
        ));
        let measurement_interval = secs(c.positive(
            "admission.measurement_interval_s",
            adm.measurement_interval_s.unwrap_or(0.1),
        ));
        let activity_probability = c.fraction(
            "admission.activity_probability",
            adm.activity_probability.unwrap_or(1.0),
        );

        let ctl = self.controller.clone().unwrap_or_default();
        let step = ctl.step.unwrap_or(1);
        if !(1..=QP_MAX - QP_MIN).contains(&step) {
            c.fail("controller.step", format!("must lie in 1..=29, got {step}"));
        }
        let quiet_intervals = ctl.quiet_intervals.unwrap_or(3);
        if quiet_intervals == 0 {
            c.fail("controller.quiet_intervals", "must be at least 1");
        }
        let bucket_drain_factor = c.positive(
            "controller.bucket_drain_factor",
            ctl.bucket_drain_factor.unwrap_or(1.2),
        );
        let bucket_depth_gops = c.positive(
            "controller.bucket_depth_gops",
            ctl.bucket_depth_gops.unwrap_or(1.0),
        );
        let feedback_min_interval = millis(c.positive(
            "controller.feedback_min_interval_ms",
            ctl.feedback_min_interval_ms.unwrap_or(100.0),
        ));

        let arr = self.arrivals.clone().unwrap_or_default();
        let policy = arr.policy.unwrap_or(match architecture {
            Architecture::CrossLayer => ArrivalPolicyName::PerSecondRandom,
            _ => ArrivalPolicyName::UniformWindow,
        });
        let arrivals = match policy {
            ArrivalPolicyName::UniformWindow => {
                if architecture == Architecture::CrossLayer {
                    c.fail(
                        "arrivals.policy",
                        "cross_layer requires per_second_random arrivals",
                    );
                }
                let (start, end) = c.window(
                    "arrivals.window_s",
                    arr.window_s.unwrap_or([20.0, 50.0]),
                    duration_s,
                );
                ArrivalPolicy::UniformWindow { start, end }
            }
            ArrivalPolicyName::PerSecondRandom => {
                if architecture != Architecture::CrossLayer {
                    c.fail(
                        "arrivals.policy",
                        "per_second_random is only used with admission control (cross_layer)",
                    );
                }
                let max_sessions = arr.max_sessions.unwrap_or(video);
                if max_sessions > video {
                    c.fail(
                        "arrivals.max_sessions",
                        format!("exceeds the {video} configured video sources"),
                    );
                }
                let start = c.non_negative("arrivals.start_s", arr.start_s.unwrap_or(0.0));
                if start >= duration_s {
                    c.fail("arrivals.start_s", "must be before the end of the run");
                }
                ArrivalPolicy::PerSecondRandom {
                    max_sessions,
                    start: secs(start),
                }
            }
        };

        let decode_threshold = c.fraction(
            "metrics.decode_threshold",
            self.metrics
                .as_ref()
                .and_then(|m| m.decode_threshold)
                .unwrap_or(0.75),
        );

        let warmup_s = c.non_negative(
            "metrics.rate_cv_warmup_s",
            self.metrics
                .as_ref()
                .and_then(|m| m.rate_cv_warmup_s)
                .unwrap_or(0.0),
        );
        if warmup_s >= duration_s {
            c.fail("metrics.rate_cv_warmup_s", "must end before the run does");
        }

        if !c.errors.is_empty() {
            return Err(c.errors);
        }
        Ok(ScenarioConfig {
            name: self.name.clone().unwrap_or_else(|| content.name.clone()),
            architecture,
            duration: secs(duration_s),
            seeds,
            trace_manifest: self.trace_manifest.clone(),
            content,
            link: LinkConfig {
                capacity: BitRate::from_mbps_f64(capacity_mbps),
                propagation_delay: millis(delay_ms),
                reverse_delay: millis(reverse_ms),
                queue_packets,
                ecn_threshold,
            },
            sources: SourcesConfig {
                video,
                ftp,
                ftp_start_window,
                ftp_max_window,
                ftp_ecn: src.ftp_ecn.unwrap_or(false),
                packet_bytes,
                header_bytes,
            },
            admission: AdmissionConfig {
                beta_mode,
                epsilon_mode: adm.epsilon_mode.unwrap_or_default(),
                measurement_window,
                measurement_interval,
                activity_probability,
            },
            controller: ControllerConfig {
                params: ControllerParams {
                    step,
                    quiet_intervals,
                },
                bucket_drain_factor,
                bucket_depth_gops,
                feedback_min_interval,
            },
            arrivals,
            decode_threshold,
            rate_cv_warmup: secs(warmup_s),
        })
    }

    fn resolve_content(&self, c: &mut Checker) -> ContentProfile {
        let spec = self.content.clone().unwrap_or_default();
        let mut p = match spec.preset.as_deref() {
            None | Some("mad-like") => ContentProfile::mad_like(),
            Some("grandma-like") => ContentProfile::grandma_like(),
            Some(other) => {
                c.fail(
                    "content.preset",
                    format!("unknown preset {other:?}; expected mad-like or grandma-like"),
                );
                ContentProfile::mad_like()
            }
        };
        if let Some(v) = spec.name {
            p.name = v;
        }
        if let Some(v) = spec.resolution {
            p.resolution = v;
        }
        if let Some(v) = spec.frame_rate {
            p.frame_rate = v;
        }
        if let Some(v) = spec.gop_length {
            p.gop_length = v;
        }
        if let Some(v) = spec.frames {
            p.frames = v;
        }
        if let Some(v) = spec.base_rate_kbps {
            p.base_rate_qp2 = BitRate::from_bps_f64(c.positive("content.base_rate_kbps", v) * 1e3);
        }
        if let Some(v) = spec.rate_exponent {
            p.rate_exponent = v;
        }
        if let Some(v) = spec.burstiness {
            p.burstiness = v;
        }
        if let Some(v) = spec.i_to_p_ratio {
            p.i_to_p_ratio = v;
        }
        if let Err(e) = p.validate() {
            c.fail("content", e.to_string());
        }
        p
    }
}

impl ScenarioConfig {
    /// A spec with every field set, suitable for writing back out. Resolving
    /// it yields `self` again.
    pub fn to_spec(&self) -> ScenarioSpec {
        let (beta_mode, beta, alpha, delta) = match self.admission.beta_mode {
            BetaMode::Experimental(b) => (BetaModeName::Experimental, Some(b), None, None),
            BetaMode::Modeled(k) => (BetaModeName::Modeled, None, Some(k.alpha), Some(k.delta)),
        };
        let arrivals = match self.arrivals {
            ArrivalPolicy::UniformWindow { start, end } => ArrivalsSpec {
                policy: Some(ArrivalPolicyName::UniformWindow),
                window_s: Some([start.as_secs_f64(), end.as_secs_f64()]),
                max_sessions: None,
                start_s: None,
            },
            ArrivalPolicy::PerSecondRandom {
                max_sessions,
                start,
            } => ArrivalsSpec {
                policy: Some(ArrivalPolicyName::PerSecondRandom),
                window_s: None,
                max_sessions: Some(max_sessions),
                start_s: Some(start.as_secs_f64()),
            },
        };
        let p = &self.content;
        ScenarioSpec {
            name: Some(self.name.clone()),
            architecture: Some(self.architecture),
            duration_s: Some(self.duration.as_secs_f64()),
            seeds: Some(self.seeds.clone()),
            trace_manifest: self.trace_manifest.clone(),
            content: Some(ContentSpec {
                preset: None,
                name: Some(p.name.clone()),
                resolution: Some(p.resolution),
                frame_rate: Some(p.frame_rate),
                gop_length: Some(p.gop_length),
                frames: Some(p.frames),
                base_rate_kbps: Some(p.base_rate_qp2.as_f64() / 1e3),
                rate_exponent: Some(p.rate_exponent),
                burstiness: Some(p.burstiness),
                i_to_p_ratio: Some(p.i_to_p_ratio),
            }),
            link: Some(LinkSpec {
                capacity_mbps: Some(self.link.capacity.as_mbps()),
                delay_ms: Some(self.link.propagation_delay.as_millis_f64()),
                reverse_delay_ms: Some(self.link.reverse_delay.as_millis_f64()),
                queue_packets: Some(self.link.queue_packets),
                ecn_threshold: Some(self.link.ecn_threshold),
            }),
            sources: Some(SourcesSpec {
                video: Some(self.sources.video),
                ftp: Some(self.sources.ftp),
                ftp_start_window_s: Some([
                    self.sources.ftp_start_window.0.as_secs_f64(),
                    self.sources.ftp_start_window.1.as_secs_f64(),
                ]),
                ftp_max_window: Some(self.sources.ftp_max_window),
                ftp_ecn: Some(self.sources.ftp_ecn),
                packet_bytes: Some(self.sources.packet_bytes),
                header_bytes: Some(self.sources.header_bytes),
            }),
            admission: Some(AdmissionSpec {
                beta_mode: Some(beta_mode),
                beta,
                alpha,
                delta,
                epsilon_mode: Some(self.admission.epsilon_mode),
                measurement_window_s: Some(self.admission.measurement_window.as_secs_f64()),
                measurement_interval_s: Some(self.admission.measurement_interval.as_secs_f64()),
                activity_probability: Some(self.admission.activity_probability),
            }),
            controller: Some(ControllerSpec {
                step: Some(self.controller.params.step),
                quiet_intervals: Some(self.controller.params.quiet_intervals),
                bucket_drain_factor: Some(self.controller.bucket_drain_factor),
                bucket_depth_gops: Some(self.controller.bucket_depth_gops),
                feedback_min_interval_ms: Some(
                    self.controller.feedback_min_interval.as_millis_f64(),
                ),
            }),
            arrivals: Some(arrivals),
            metrics: Some(MetricsSpec {
                decode_threshold: Some(self.decode_threshold),
                rate_cv_warmup_s: Some(self.rate_cv_warmup.as_secs_f64()),
            }),
        }
    }

    /// Copy with a different architecture. Arrival policy follows the
    /// architecture; all other settings, including seeds, are kept.
    pub fn with_architecture(
        &self,
        architecture: Architecture,
        window: (SimTime, SimTime),
    ) -> Self {
        let mut out = self.clone();
        out.architecture = architecture;
        out.arrivals = match architecture {
            Architecture::CrossLayer => ArrivalPolicy::PerSecondRandom {
                max_sessions: self.sources.video,
                start: window.0,
            },
            _ => ArrivalPolicy::UniformWindow {
                start: window.0,
                end: window.1,
            },
        };
        out
    }

    /// Offered video load if every source streamed the QP=2 variant.
    pub fn offered_video_at_qp2(&self) -> BitRate {
        BitRate::from_bps(self.content.base_rate_qp2.bps() * self.sources.video as u64)
    }
}
