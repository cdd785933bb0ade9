//! Simulation output: per-request records, executed batches, drops, and
//! their CSV encodings.

use std::io::Write;

use serde::Serialize;

use crate::ids::{GpuId, ModelId, RequestId};
use crate::time::{Dur, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Finished by its deadline.
    Completed,
    /// Finished after its deadline (only possible with network jitter).
    Late,
    Dropped,
    /// Still queued or running when the run was cut short.
    Unresolved,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Late => "late",
            Outcome::Dropped => "dropped",
            Outcome::Unresolved => "unresolved",
        }
    }

    pub fn is_good(self) -> bool {
        self == Outcome::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub model: ModelId,
    pub arrival: Time,
    pub deadline: Time,
    /// When the batch containing this request was dispatched, or when the
    /// request was dropped.
    pub dispatch: Option<Time>,
    pub start: Option<Time>,
    pub finish: Option<Time>,
    pub batch_size: u32,
    pub outcome: Outcome,
}

impl RequestRecord {
    /// Time from arrival to the start of its batch.
    pub fn queueing_delay(&self) -> Option<Dur> {
        self.start.map(|s| s - self.arrival)
    }

    /// End-to-end latency; `None` for drops.
    pub fn latency(&self) -> Option<Dur> {
        self.finish.map(|f| f - self.arrival)
    }
}

/// One batch as executed by an emulated GPU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrderRecord {
    pub seq: u64,
    pub model: ModelId,
    pub gpu: GpuId,
    pub dispatched_at: Time,
    /// The start the scheduler planned.
    pub planned_start: Time,
    pub start: Time,
    pub finish: Time,
    /// The batch was refit to the granted GPU.
    pub shrunk: bool,
    pub requests: Vec<RequestId>,
}

impl OrderRecord {
    pub fn size(&self) -> u32 {
        self.requests.len() as u32
    }
}

/// Requests of one model dropped at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DropEvent {
    pub seq: u64,
    pub model: ModelId,
    pub at: Time,
    pub forced: bool,
    pub requests: Vec<RequestId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EngineCounters {
    pub events: u64,
    pub arrivals: u64,
    pub timers_fired: u64,
    pub messages: u64,
    pub grants: u64,
    pub evictions: u64,
    pub rank_index_ops: u64,
    /// Largest number of rank-plane index operations caused by one event.
    pub max_index_ops_per_event: u64,
    pub invariant_checks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub slo: Dur,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub rate_rps: f64,
    pub gpus: usize,
    pub models: Vec<ModelInfo>,
    pub window: (Time, Time),
    pub end_time: Time,
    /// The run stopped early because a model exceeded its bad-request
    /// allowance.
    pub aborted: bool,
    pub requests: Vec<RequestRecord>,
    pub orders: Vec<OrderRecord>,
    pub drops: Vec<DropEvent>,
    pub counters: EngineCounters,
}

impl RunResult {
    pub fn in_window(&self, r: &RequestRecord) -> bool {
        r.arrival >= self.window.0 && r.arrival < self.window.1
    }

    pub fn record(&self, id: RequestId) -> Option<&RequestRecord> {
        self.requests.binary_search_by_key(&id, |r| r.id).ok().map(|i| &self.requests[i])
    }

    /// Orders executed on `gpu`, in start order.
    pub fn gpu_log(&self, gpu: GpuId) -> Vec<&OrderRecord> {
        let mut log: Vec<_> = self.orders.iter().filter(|o| o.gpu == gpu).collect();
        log.sort_by_key(|o| (o.start, o.seq));
        log
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run results serialize")
    }

    /// CSV `event_time_ns,event_kind,model,gpu,batch_size,start_ns,finish_ns,request_ids`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        enum Row<'a> {
            Order(&'a OrderRecord),
            Drop(&'a DropEvent),
        }
        let mut rows: Vec<(u64, Row)> = self
            .orders
            .iter()
            .map(|o| (o.seq, Row::Order(o)))
            .chain(self.drops.iter().map(|d| (d.seq, Row::Drop(d))))
            .collect();
        rows.sort_by_key(|r| r.0);
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "event_time_ns",
            "event_kind",
            "model",
            "gpu",
            "batch_size",
            "start_ns",
            "finish_ns",
            "request_ids",
        ])?;
        for (_, row) in rows {
            match row {
                Row::Order(o) => w.write_record([
                    o.dispatched_at.nanos().to_string(),
                    if o.shrunk { "dispatch_refit" } else { "dispatch" }.to_string(),
                    self.models[o.model.index()].name.clone(),
                    o.gpu.0.to_string(),
                    o.size().to_string(),
                    o.start.nanos().to_string(),
                    o.finish.nanos().to_string(),
                    join_ids(&o.requests),
                ])?,
                Row::Drop(d) => w.write_record([
                    d.at.nanos().to_string(),
                    if d.forced { "drop_refit" } else { "drop" }.to_string(),
                    self.models[d.model.index()].name.clone(),
                    String::new(),
                    d.requests.len().to_string(),
                    String::new(),
                    String::new(),
                    join_ids(&d.requests),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `request_id,model,arrival_ns,dispatch_ns,start_ns,finish_ns,batch_size,outcome`.
    pub fn write_requests_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "request_id",
            "model",
            "arrival_ns",
            "dispatch_ns",
            "start_ns",
            "finish_ns",
            "batch_size",
            "outcome",
        ])?;
        let opt = |t: Option<Time>| t.map(|t| t.nanos().to_string()).unwrap_or_default();
        for r in &self.requests {
            w.write_record([
                r.id.0.to_string(),
                self.models[r.model.index()].name.clone(),
                r.arrival.nanos().to_string(),
                opt(r.dispatch),
                opt(r.start),
                opt(r.finish),
                r.batch_size.to_string(),
                r.outcome.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn join_ids(ids: &[RequestId]) -> String {
    let mut s = String::with_capacity(ids.len() * 6);
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        s.push_str(&id.0.to_string());
    }
    s
}
