//! Result files: per-flow summaries, per-run rows, CDF tables and the
//! optional event, packet, admission and QP-timeline dumps.

use std::io::{self, Write};
use std::path::Path;

use qoesim_core::admission::{AdmissionAudit, Decision};
use qoesim_core::engine::EventKind;
use qoesim_core::metrics::{aggregate_cdf, FlowSummary, RunSummary};
use qoesim_core::netsim::FlowId;
use qoesim_core::observer::{Entity, Observer, PacketEvent};
use qoesim_core::ratecontrol::QpChange;
use qoesim_core::SimTime;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Observer that streams each enabled dump to its own writer. The first IO
/// error is kept and every later write is skipped.
pub struct Recorder<W: Write> {
    pub events: Option<W>,
    pub packets: Option<W>,
    pub admission: Option<W>,
    pub qp_timeline: Option<W>,
    error: Option<io::Error>,
}

impl<W: Write> Recorder<W> {
    pub fn new(events: Option<W>, packets: Option<W>, admission: Option<W>, qp: Option<W>) -> Self {
        let mut r = Recorder {
            events,
            packets,
            admission,
            qp_timeline: qp,
            error: None,
        };
        r.header();
        r
    }

    fn header(&mut self) {
        if let Some(w) = self.packets.as_mut() {
            let res = writeln!(w, "time,flow,seq,event,queue_occupancy");
            Self::keep(&mut self.error, res);
        }
        if let Some(w) = self.admission.as_mut() {
            let res = writeln!(
                w,
                "time,session_id,n_before,mu_s,beta,epsilon,pro_iaar,x_new_tried_list,decision,accepted_qp"
            );
            Self::keep(&mut self.error, res);
        }
        if let Some(w) = self.qp_timeline.as_mut() {
            let res = writeln!(w, "time,flow,old_qp,new_qp,trigger");
            Self::keep(&mut self.error, res);
        }
    }

    fn keep(slot: &mut Option<io::Error>, res: io::Result<()>) {
        if let Err(e) = res {
            slot.get_or_insert(e);
        }
    }

    /// Flushes every writer and hands them back, or the first error seen.
    pub fn finish(mut self) -> io::Result<[Option<W>; 4]> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let mut all = [self.events, self.packets, self.admission, self.qp_timeline];
        for w in all.iter_mut().flatten() {
            w.flush()?;
        }
        Ok(all)
    }
}

impl<W: Write> Observer for Recorder<W> {
    fn wants_events(&self) -> bool {
        self.events.is_some()
    }

    fn wants_packets(&self) -> bool {
        self.packets.is_some()
    }

    fn event(&mut self, time: SimTime, sequence: u64, kind: EventKind, entity: Entity) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.events.as_mut() {
            let res = writeln!(w, "{time},{sequence},{kind},{entity}");
            Self::keep(&mut self.error, res);
        }
    }

    fn packet(&mut self, time: SimTime, flow: FlowId, seq: u64, event: PacketEvent, occ: usize) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.packets.as_mut() {
            let res = writeln!(w, "{time},{flow},{seq},{},{occ}", event.as_str());
            Self::keep(&mut self.error, res);
        }
    }

    fn admission(&mut self, audit: &AdmissionAudit) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.admission.as_mut() {
            let res = writeln!(w, "{}", audit_row(audit));
            Self::keep(&mut self.error, res);
        }
    }

    fn qp_change(&mut self, time: SimTime, flow: FlowId, change: &QpChange) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.qp_timeline.as_mut() {
            let res = writeln!(
                w,
                "{time},{flow},{},{},{}",
                change.old_qp,
                change.new_qp,
                change.trigger.as_str()
            );
            Self::keep(&mut self.error, res);
        }
    }
}

/// One audit CSV row, without the line terminator. Tried rates are joined
/// with `;` in ladder order.
pub fn audit_row(a: &AdmissionAudit) -> String {
    let e = &a.estimate;
    let beta = e.beta.map(|b| b.to_string()).unwrap_or_default();
    let tried: Vec<String> = a.tried.iter().map(|r| r.bps().to_string()).collect();
    let (decision, qp) = match a.decision {
        Decision::Accepted { qp, .. } => ("accepted", qp.to_string()),
        Decision::Rejected => ("rejected", String::new()),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        a.time,
        a.session_id,
        e.n,
        e.mu_s,
        beta,
        e.epsilon,
        e.pro_iaar,
        tried.join(";"),
        decision,
        qp
    )
}

/// Run-level figures, one CSV row per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub architecture: String,
    pub duration_s: f64,
    pub sessions_requested: u32,
    pub sessions_admitted: u32,
    pub sessions_decoded: u32,
    pub utilization: f64,
    pub mean_mos: Option<f64>,
    pub mean_video_loss: Option<f64>,
    pub mean_video_delay_ms: Option<f64>,
    pub transmitted_video_packets: u64,
    pub median_video_rate_cv: Option<f64>,
    pub median_ftp_rate_cv: Option<f64>,
    pub events_processed: u64,
    pub conservation_samples: u64,
    pub flow_violations: u64,
    pub queue_violations: u64,
    pub peak_queue: usize,
}

impl From<&RunSummary> for RunRow {
    fn from(s: &RunSummary) -> Self {
        RunRow {
            seed: s.seed,
            architecture: s.architecture.clone(),
            duration_s: s.duration_s,
            sessions_requested: s.sessions_requested,
            sessions_admitted: s.sessions_admitted,
            sessions_decoded: s.sessions_decoded,
            utilization: s.utilization,
            mean_mos: s.mean_mos(),
            mean_video_loss: s.mean_video_loss(),
            mean_video_delay_ms: s.mean_video_delay_ms(),
            transmitted_video_packets: s.transmitted_video_packets(),
            median_video_rate_cv: s.median_video_rate_cv(),
            median_ftp_rate_cv: s.median_ftp_rate_cv(),
            events_processed: s.events_processed,
            conservation_samples: s.conservation.samples,
            flow_violations: s.conservation.flow_violations,
            queue_violations: s.conservation.queue_violations,
            peak_queue: s.conservation.peak_queue,
        }
    }
}

/// Metrics that get a CDF file in a batch, with their extractor.
pub type Metric = (&'static str, fn(&RunRow) -> Option<f64>);

pub const CDF_METRICS: &[Metric] = &[
    ("mos", |r| r.mean_mos),
    ("decoded_sessions", |r| Some(r.sessions_decoded as f64)),
    ("admitted_sessions", |r| Some(r.sessions_admitted as f64)),
    ("video_loss", |r| r.mean_video_loss),
    ("video_delay_ms", |r| r.mean_video_delay_ms),
    ("transmitted_video_packets", |r| {
        Some(r.transmitted_video_packets as f64)
    }),
    ("utilization", |r| Some(r.utilization)),
];

pub fn write_flow_summary<W: Write>(w: W, flows: &[FlowSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for f in flows {
        w.serialize(f)?;
    }
    w.flush().map_err(|e| Error::Other(e.to_string()))?;
    Ok(())
}

pub fn write_runs<W: Write>(w: W, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Other(e.to_string()))?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// `value,cum_fraction` table for one metric. Runs where the metric is
/// undefined are skipped; `None` if no run defines it.
pub fn cdf_csv(rows: &[RunRow], metric: fn(&RunRow) -> Option<f64>) -> Option<String> {
    let values: Vec<f64> = rows.iter().filter_map(metric).collect();
    let cdf = aggregate_cdf(&values).ok()?;
    let mut out = String::from("value,cum_fraction\n");
    for (v, p) in cdf {
        out.push_str(&format!("{v},{p}\n"));
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qoesim_core::admission::Estimate;
    use qoesim_core::BitRate;

    #[test]
    fn audit_rows() {
        let a = AdmissionAudit {
            time: SimTime::from_millis(1500),
            session_id: 3,
            estimate: Estimate {
                n: 2,
                mu_s: 1000.0,
                beta: Some(0.5),
                epsilon: 250.0,
                pro_iaar: 1500.0,
            },
            tried: vec![BitRate::from_bps(900), BitRate::from_bps(450)],
            decision: Decision::Accepted {
                qp: 3,
                rate: BitRate::from_bps(450),
            },
        };
        assert_eq!(
            audit_row(&a),
            "1.500000,3,2,1000,0.5,250,1500,900;450,accepted,3"
        );
    }

    #[test]
    fn recorder_writes_headers_and_rows() {
        let mut r: Recorder<Vec<u8>> = Recorder::new(None, Some(Vec::new()), None, None);
        assert!(r.wants_packets() && !r.wants_events());
        r.packet(
            SimTime::from_micros(7),
            FlowId::Ftp(1),
            4,
            PacketEvent::Drop,
            100,
        );
        let [_, p, _, _] = r.finish().unwrap();
        let text = String::from_utf8(p.unwrap()).unwrap();
        assert_eq!(
            text,
            "time,flow,seq,event,queue_occupancy\n0.000007,f1,4,drop,100\n"
        );
    }

    #[test]
    fn cdf_table() {
        let mk = |v: Option<f64>| RunRow {
            seed: 0,
            architecture: "adaptive".into(),
            duration_s: 1.0,
            sessions_requested: 0,
            sessions_admitted: 0,
            sessions_decoded: 0,
            utilization: 0.0,
            mean_mos: v,
            mean_video_loss: None,
            mean_video_delay_ms: None,
            transmitted_video_packets: 0,
            median_video_rate_cv: None,
            median_ftp_rate_cv: None,
            events_processed: 0,
            conservation_samples: 0,
            flow_violations: 0,
            queue_violations: 0,
            peak_queue: 0,
        };
        let rows = [mk(Some(4.0)), mk(Some(2.0)), mk(None), mk(Some(2.0))];
        let text = cdf_csv(&rows, |r| r.mean_mos).unwrap();
        assert_eq!(text, format!("value,cum_fraction\n2,{}\n4,1\n", 2.0 / 3.0));
        assert!(cdf_csv(&rows[2..3], |r| r.mean_mos).is_none());
    }
}
