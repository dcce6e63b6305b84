use serde::{Deserialize, Serialize};

use super::BusError;

const NS_PER_S: f64 = 1e9;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Camera,
    Blip,
    Heatmap,
    Llm,
}

impl Stage {
    pub const ALL: [Self; 4] = [Self::Camera, Self::Blip, Self::Heatmap, Self::Llm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Camera => "camera",
            Self::Blip => "blip",
            Self::Heatmap => "heatmap",
            Self::Llm => "llm",
        }
    }
}

fn seconds_to_ns(what: &str, s: f64) -> Result<u64, BusError> {
    if !(s >= 0.0 && s.is_finite() && s < 1e6) {
        return Err(BusError::InvalidConfig(format!(
            "{what} must be a finite duration >= 0, got {s}"
        )));
    }
    Ok((s * NS_PER_S).round() as u64)
}

fn ns_to_seconds(ns: u64) -> f64 {
    ns as f64 / NS_PER_S
}

/// Per-frame stage durations injected in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawDelays", deny_unknown_fields)]
pub struct StageDelays {
    pub camera_s: f64,
    pub blip_s: f64,
    pub heatmap_s: f64,
    pub llm_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelays {
    camera_s: f64,
    blip_s: f64,
    heatmap_s: f64,
    llm_s: f64,
}

impl TryFrom<RawDelays> for StageDelays {
    type Error = BusError;

    fn try_from(r: RawDelays) -> Result<Self, Self::Error> {
        Self::new(r.camera_s, r.blip_s, r.heatmap_s, r.llm_s)
    }
}

impl StageDelays {
    pub fn new(camera_s: f64, blip_s: f64, heatmap_s: f64, llm_s: f64) -> Result<Self, BusError> {
        for (what, v) in [
            ("camera_s", camera_s),
            ("blip_s", blip_s),
            ("heatmap_s", heatmap_s),
            ("llm_s", llm_s),
        ] {
            seconds_to_ns(what, v)?;
        }
        Ok(Self {
            camera_s,
            blip_s,
            heatmap_s,
            llm_s,
        })
    }

    pub fn stage_s(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Camera => self.camera_s,
            Stage::Blip => self.blip_s,
            Stage::Heatmap => self.heatmap_s,
            Stage::Llm => self.llm_s,
        }
    }
}

/// Stage timings of one tick, held in integer nanoseconds so the total is
/// exactly the sum of the four stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "TraceRepr", try_from = "TraceRepr")]
pub struct StageLatencyTrace {
    camera_ns: u64,
    blip_ns: u64,
    heatmap_ns: u64,
    network_ns: u64,
    processing_ns: u64,
}

impl StageLatencyTrace {
    /// Trace with the classifier time split into network and processing.
    pub fn new(
        camera_s: f64,
        blip_s: f64,
        heatmap_s: f64,
        network_s: f64,
        processing_s: f64,
    ) -> Result<Self, BusError> {
        Ok(Self {
            camera_ns: seconds_to_ns("t_camera_s", camera_s)?,
            blip_ns: seconds_to_ns("t_blip_s", blip_s)?,
            heatmap_ns: seconds_to_ns("t_heatmap_s", heatmap_s)?,
            network_ns: seconds_to_ns("t_network_s", network_s)?,
            processing_ns: seconds_to_ns("t_processing_s", processing_s)?,
        })
    }

    /// Local classifier: the whole classifier time counts as processing.
    pub fn scripted(camera_s: f64, blip_s: f64, heatmap_s: f64, llm_s: f64) -> Self {
        Self::from_delays(&StageDelays {
            camera_s,
            blip_s,
            heatmap_s,
            llm_s,
        })
    }

    pub fn from_delays(d: &StageDelays) -> Self {
        let ns = |v: f64| {
            if v > 0.0 && v.is_finite() {
                (v * NS_PER_S).round() as u64
            } else {
                0
            }
        };
        Self {
            camera_ns: ns(d.camera_s),
            blip_ns: ns(d.blip_s),
            heatmap_ns: ns(d.heatmap_s),
            network_ns: 0,
            processing_ns: ns(d.llm_s),
        }
    }

    pub fn stage_ns(&self, stage: Stage) -> u64 {
        match stage {
            Stage::Camera => self.camera_ns,
            Stage::Blip => self.blip_ns,
            Stage::Heatmap => self.heatmap_ns,
            Stage::Llm => self.network_ns + self.processing_ns,
        }
    }

    pub fn stage_s(&self, stage: Stage) -> f64 {
        ns_to_seconds(self.stage_ns(stage))
    }

    pub fn total_ns(&self) -> u64 {
        Stage::ALL.iter().map(|&s| self.stage_ns(s)).sum()
    }

    pub fn t_camera_s(&self) -> f64 {
        self.stage_s(Stage::Camera)
    }

    pub fn t_blip_s(&self) -> f64 {
        self.stage_s(Stage::Blip)
    }

    pub fn t_heatmap_s(&self) -> f64 {
        self.stage_s(Stage::Heatmap)
    }

    pub fn t_llm_s(&self) -> f64 {
        self.stage_s(Stage::Llm)
    }

    pub fn t_network_s(&self) -> f64 {
        ns_to_seconds(self.network_ns)
    }

    pub fn t_processing_s(&self) -> f64 {
        ns_to_seconds(self.processing_ns)
    }

    pub fn t_total_s(&self) -> f64 {
        ns_to_seconds(self.total_ns())
    }

    /// Same trace with the classifier stage zeroed (detector inactive).
    pub fn without_llm(mut self) -> Self {
        self.network_ns = 0;
        self.processing_ns = 0;
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRepr {
    t_camera_s: f64,
    t_blip_s: f64,
    t_heatmap_s: f64,
    t_llm_s: f64,
    t_network_s: f64,
    t_processing_s: f64,
    t_total_s: f64,
}

impl From<StageLatencyTrace> for TraceRepr {
    fn from(t: StageLatencyTrace) -> Self {
        Self {
            t_camera_s: t.t_camera_s(),
            t_blip_s: t.t_blip_s(),
            t_heatmap_s: t.t_heatmap_s(),
            t_llm_s: t.t_llm_s(),
            t_network_s: t.t_network_s(),
            t_processing_s: t.t_processing_s(),
            t_total_s: t.t_total_s(),
        }
    }
}

impl TryFrom<TraceRepr> for StageLatencyTrace {
    type Error = BusError;

    fn try_from(r: TraceRepr) -> Result<Self, Self::Error> {
        let trace = Self::new(r.t_camera_s, r.t_blip_s, r.t_heatmap_s, r.t_network_s, r.t_processing_s)?;
        if trace.stage_ns(Stage::Llm) != seconds_to_ns("t_llm_s", r.t_llm_s)? {
            return Err(BusError::InvalidConfig(
                "t_llm_s must equal t_network_s + t_processing_s".into(),
            ));
        }
        if trace.total_ns() != seconds_to_ns("t_total_s", r.t_total_s)? {
            return Err(BusError::InvalidConfig(
                "t_total_s must equal the sum of the stage times".into(),
            ));
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_delays_sum() {
        let t = StageLatencyTrace::scripted(1.0, 2.0, 0.5, 2.517);
        assert_eq!(t.t_total_s(), 6.017);
        assert_eq!(t.t_processing_s(), 2.517);
        assert_eq!(t.t_network_s(), 0.0);
    }

    #[test]
    fn remote_split() {
        let t = StageLatencyTrace::new(0.1, 0.2, 0.3, 0.75, 0.25).unwrap();
        assert_eq!(t.t_llm_s(), 1.0);
        assert_eq!(t.total_ns(), 1_600_000_000);
    }

    #[test]
    fn serde_round_trip_checks_sums() {
        let t = StageLatencyTrace::new(0.123456789, 1.5, 0.25, 3.0, 0.01).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<StageLatencyTrace>(&text).unwrap(), t);
        let tampered = text.replace("\"t_total_s\":4.883456789", "\"t_total_s\":5.0");
        assert_ne!(tampered, text);
        assert!(serde_json::from_str::<StageLatencyTrace>(&tampered).is_err());
    }

    #[test]
    fn negative_delays_rejected() {
        assert!(StageDelays::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(StageLatencyTrace::new(0.0, f64::NAN, 0.0, 0.0, 0.0).is_err());
    }
}
