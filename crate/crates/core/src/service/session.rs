//! One live editing session: a worker thread that owns the scene and the
//! shared status the HTTP handlers read.

use std::collections::VecDeque;
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine;
use serde::Serialize;
use serde_json::json;

use crate::edit::{DropOldestQueue, EditConfig, EditRunner, StepRecord};
use crate::error::{Error, Result};
use crate::plot::image_png;
use crate::report::Inputs;

/// Capacity of the event queue; events are rarer than frames and are only
/// dropped when nobody streams.
const EVENT_QUEUE: usize = 1024;
const IDLE_POLL: Duration = Duration::from_millis(50);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Pause,
    Resume,
    Reset,
    RecomputeSelection,
}

impl Control {
    pub fn parse(cmd: &str) -> Option<Self> {
        match cmd {
            "pause" => Some(Self::Pause),
            "resume" => Some(Self::Resume),
            "reset" => Some(Self::Reset),
            "recompute_selection" => Some(Self::RecomputeSelection),
            _ => None,
        }
    }
}

enum Msg {
    Alpha(f64),
    Control(Control),
    Stop,
}

/// What `GET /state` returns.
#[derive(Clone, Debug, Serialize)]
pub struct SessionState {
    pub id: String,
    /// Last requested slider value; the worker applies it at the next step.
    pub alpha: f64,
    pub step: usize,
    pub running: bool,
    pub coord: Option<f64>,
    pub cbar: Option<f64>,
    pub selected: usize,
    pub primitives: usize,
    pub loss_sds: Option<f64>,
    pub frames_dropped: u64,
    pub error: Option<String>,
    pub trace: Vec<StepRecord>,
}

struct Status {
    alpha: f64,
    step: usize,
    running: bool,
    last: Option<StepRecord>,
    selected: usize,
    primitives: usize,
    error: Option<String>,
    trace: VecDeque<StepRecord>,
}

pub struct Session {
    id: String,
    max_alpha: f64,
    tx: Mutex<mpsc::Sender<Msg>>,
    status: Arc<Mutex<Status>>,
    frames: Arc<DropOldestQueue<String>>,
    events: Arc<DropOldestQueue<String>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    /// Builds the runner (initial selection included) and starts the worker.
    pub fn start(id: String, inputs: Arc<Inputs>, cfg: &EditConfig, max_alpha: f64, frame_queue: usize, trace_ring: usize) -> Result<Self> {
        let runner = EditRunner::new(inputs.scene.clone(), &inputs.model, inputs.adapter.as_ref(), cfg)?;
        let status = Arc::new(Mutex::new(Status {
            alpha: cfg.alpha,
            step: 0,
            running: true,
            last: None,
            selected: runner.scene().selected_count(),
            primitives: runner.scene().len(),
            error: None,
            trace: VecDeque::with_capacity(trace_ring),
        }));
        let frames = Arc::new(DropOldestQueue::new(frame_queue));
        let events = Arc::new(DropOldestQueue::new(EVENT_QUEUE));
        let (tx, rx) = mpsc::channel();
        let worker = Worker {
            runner,
            inputs,
            cfg: cfg.clone(),
            rx,
            status: status.clone(),
            frames: frames.clone(),
            events: events.clone(),
            trace_ring,
            seen_events: 0,
        };
        let handle = std::thread::Builder::new()
            .name(format!("acs-session-{id}"))
            .spawn(move || worker.run())
            .map_err(|e| Error::Server(format!("cannot start session worker: {e}")))?;
        Ok(Self {
            id,
            max_alpha,
            tx: Mutex::new(tx),
            status,
            frames,
            events,
            worker: Mutex::new(Some(handle)),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Validates and queues a slider change. Returns whether it differs from
    /// the last requested value; repeating a value is a no-op.
    pub fn set_alpha(&self, alpha: f64) -> Result<bool> {
        if !alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        if alpha.abs() > self.max_alpha {
            return Err(Error::Config(format!("|alpha| must be <= {}, got {alpha}", self.max_alpha)));
        }
        let mut st = self.status.lock().unwrap();
        if st.alpha == alpha {
            return Ok(false);
        }
        st.alpha = alpha;
        drop(st);
        self.send(Msg::Alpha(alpha))?;
        Ok(true)
    }

    pub fn control(&self, c: Control) -> Result<()> {
        self.send(Msg::Control(c))
    }

    fn send(&self, m: Msg) -> Result<()> {
        self.tx
            .lock()
            .unwrap()
            .send(m)
            .map_err(|_| Error::Server(format!("session {} has stopped", self.id)))
    }

    pub fn state(&self) -> SessionState {
        let st = self.status.lock().unwrap();
        SessionState {
            id: self.id.clone(),
            alpha: st.alpha,
            step: st.step,
            running: st.running,
            coord: st.last.as_ref().map(|r| r.coord),
            cbar: st.last.as_ref().map(|r| r.cbar),
            selected: st.selected,
            primitives: st.primitives,
            loss_sds: st.last.as_ref().map(|r| r.loss_sds),
            frames_dropped: self.frames.dropped(),
            error: st.error.clone(),
            trace: st.trace.iter().cloned().collect(),
        }
    }

    /// Pending stream messages: events first, then frames.
    pub fn drain_messages(&self) -> Vec<String> {
        let mut out = self.events.drain();
        out.extend(self.frames.drain());
        out
    }

    pub fn stop(&self) {
        let _ = self.send(Msg::Stop);
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
        self.frames.close();
        self.events.close();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Worker {
    runner: EditRunner,
    inputs: Arc<Inputs>,
    cfg: EditConfig,
    rx: mpsc::Receiver<Msg>,
    status: Arc<Mutex<Status>>,
    frames: Arc<DropOldestQueue<String>>,
    events: Arc<DropOldestQueue<String>>,
    trace_ring: usize,
    seen_events: usize,
}

impl Worker {
    fn run(mut self) {
        self.publish_events();
        loop {
            let running = self.status.lock().unwrap().running;
            let msg = if running {
                match self.rx.try_recv() {
                    Ok(m) => Some(m),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return,
                }
            } else {
                match self.rx.recv_timeout(IDLE_POLL) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            };
            let outcome = match msg {
                Some(Msg::Stop) => return,
                Some(m) => self.handle(m),
                None if running => self.step(),
                None => Ok(()),
            };
            if let Err(e) = outcome {
                log::warn!("session worker: {e}");
                let mut st = self.status.lock().unwrap();
                st.error = Some(e.to_string());
                st.running = false;
            }
            self.publish_events();
        }
    }

    fn handle(&mut self, m: Msg) -> Result<()> {
        match m {
            Msg::Alpha(a) => {
                self.runner.set_alpha(a)?;
            }
            Msg::Control(Control::Pause) => self.status.lock().unwrap().running = false,
            Msg::Control(Control::Resume) => {
                let mut st = self.status.lock().unwrap();
                st.running = true;
                st.error = None;
            }
            Msg::Control(Control::Reset) => {
                let cfg = EditConfig { alpha: self.runner.alpha(), ..self.cfg.clone() };
                let inputs = &self.inputs;
                self.runner = EditRunner::new(inputs.scene.clone(), &inputs.model, inputs.adapter.as_ref(), &cfg)?;
                self.seen_events = 0;
                let mut st = self.status.lock().unwrap();
                st.step = 0;
                st.last = None;
                st.trace.clear();
                st.selected = self.runner.scene().selected_count();
                st.primitives = self.runner.scene().len();
            }
            Msg::Control(Control::RecomputeSelection) => {
                let n = self.runner.recompute_selection()?;
                self.status.lock().unwrap().selected = n;
            }
            Msg::Stop => {}
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let rec = self.runner.step()?;
        let frame = self.runner.render_frame(self.cfg.frame_size)?;
        let png = base64::engine::general_purpose::STANDARD.encode(image_png(&frame)?);
        let msg = json!({
            "type": "frame",
            "step": rec.step,
            "png": png,
            "coord": rec.coord,
            "alpha": self.runner.alpha(),
            "selected": rec.selected,
            "losses": { "sds": rec.loss_sds },
        });
        {
            let mut st = self.status.lock().unwrap();
            st.step = rec.step;
            st.selected = rec.selected;
            st.primitives = self.runner.scene().len();
            if st.trace.len() == self.trace_ring {
                st.trace.pop_front();
            }
            st.trace.push_back(rec.clone());
            st.last = Some(rec);
        }
        self.frames.push(msg.to_string());
        Ok(())
    }

    fn publish_events(&mut self) {
        let all = self.runner.events();
        for e in &all[self.seen_events.min(all.len())..] {
            let mut v = serde_json::to_value(e).unwrap_or_default();
            v["type"] = json!("event");
            self.events.push(v.to_string());
        }
        self.seen_events = all.len();
    }
}
