//! Control-loop thread: owns the `ClosedLoop`, applies queued requests
//! between ticks and publishes state on a broadcast channel.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use fesloop::emg::SEGMENT_PERIOD_US;
use fesloop::plant::Intent;
use fesloop::session::{ClosedLoop, EventSink, IntentSource, SessionError, TickStats};
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::protocol::{IntentInput, Request, WireMessage};

/// Tick pacing relative to wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    /// One tick per 9 ms.
    RealTime,
    /// Ticks run `factor` times faster than real time.
    Accelerated(f64),
}

impl Pace {
    fn period(self) -> Duration {
        let us = SEGMENT_PERIOD_US as f64;
        match self {
            Pace::RealTime => Duration::from_micros(SEGMENT_PERIOD_US),
            Pace::Accelerated(f) => Duration::from_secs_f64(us / f.max(1e-3) * 1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunnerOptions {
    pub pace: Pace,
    /// A StateUpdate goes out every `decimation` ticks.
    pub decimation: u64,
    /// Broadcast queue depth; a client that falls this far behind is dropped.
    pub queue_depth: usize,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            pace: Pace::RealTime,
            decimation: 3,
            queue_depth: 64,
            max_ticks: None,
        }
    }
}

pub(crate) type Reply = oneshot::Sender<Result<u64, String>>;

pub(crate) enum Command {
    Request {
        seq: u64,
        request: Request,
        reply: Reply,
    },
    Stats(oneshot::Sender<TickStats>),
    Stop,
}

/// Cloneable handle to a running loop.
#[derive(Clone)]
pub struct LoopHandle {
    commands: mpsc::UnboundedSender<Command>,
    states: broadcast::Sender<Arc<str>>,
}

impl LoopHandle {
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.states.subscribe()
    }

    /// Queues a request; resolves to the loop time it was applied at.
    pub async fn submit(&self, seq: u64, request: Request) -> Result<u64, String> {
        let (reply, rx) = oneshot::channel();
        self.commands
            .send(Command::Request {
                seq,
                request,
                reply,
            })
            .map_err(|_| "control loop has stopped".to_string())?;
        rx.await
            .map_err(|_| "control loop has stopped".to_string())?
    }

    /// Answers a request into `reply` without awaiting it.
    pub(crate) fn send_request(&self, seq: u64, request: Request, reply: Reply) {
        if let Err(mpsc::error::SendError(Command::Request { reply, .. })) =
            self.commands.send(Command::Request {
                seq,
                request,
                reply,
            })
        {
            let _ = reply.send(Err("control loop has stopped".into()));
        }
    }

    /// Wall-clock cost of every tick so far.
    pub async fn stats(&self) -> Option<TickStats> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Stats(tx)).ok()?;
        rx.await.ok()
    }

    pub fn is_running(&self) -> bool {
        !self.commands.is_closed()
    }
}

/// Result of a finished loop thread.
pub struct LoopOutcome {
    pub sink: Box<dyn EventSink>,
    pub stats: TickStats,
    pub error: Option<SessionError>,
}

/// Running loop thread and its handle.
pub struct LoopRunner {
    handle: LoopHandle,
    thread: Option<JoinHandle<LoopOutcome>>,
}

impl LoopRunner {
    pub fn spawn(lp: ClosedLoop, options: RunnerOptions) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let (states, _) = broadcast::channel(options.queue_depth.max(1));
        let handle = LoopHandle {
            commands: tx,
            states: states.clone(),
        };
        let thread = std::thread::Builder::new()
            .name("fesloop-control".into())
            .spawn(move || run(lp, rx, states, options))
            .expect("spawn control thread");
        LoopRunner {
            handle,
            thread: Some(thread),
        }
    }

    pub fn handle(&self) -> LoopHandle {
        self.handle.clone()
    }

    /// Stops the loop, closes its sink and returns it.
    pub fn stop(mut self) -> LoopOutcome {
        let _ = self.handle.commands.send(Command::Stop);
        self.thread
            .take()
            .expect("joined once")
            .join()
            .expect("control thread panicked")
    }
}

impl Drop for LoopRunner {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.handle.commands.send(Command::Stop);
            let _ = t.join();
        }
    }
}

fn apply(lp: &mut ClosedLoop, seq: u64, request: Request) -> Result<u64, String> {
    match request {
        Request::Param(update) => lp
            .apply_param_update(&update, seq)
            .map_err(|e| e.to_string())?,
        Request::Intent(IntentInput::Scripted) => lp.set_intent_source(IntentSource::Scripted),
        Request::Intent(IntentInput::Manual { movement, level }) => {
            lp.set_intent_source(IntentSource::Manual(Intent::new(movement, level)))
        }
        Request::Reference(r) => lp
            .set_reference(r.spec, r.cycles)
            .map_err(|e| e.to_string())?,
    }
    Ok(lp.now_us())
}

fn run(
    mut lp: ClosedLoop,
    mut rx: mpsc::UnboundedReceiver<Command>,
    states: broadcast::Sender<Arc<str>>,
    options: RunnerOptions,
) -> LoopOutcome {
    let period = options.pace.period();
    let decimation = options.decimation.max(1);
    let start = Instant::now();
    let mut stats = TickStats::default();
    let mut error = None;
    let mut state_seq = 0u64;
    let mut tick = 0u64;

    'outer: loop {
        loop {
            match rx.try_recv() {
                Ok(Command::Request {
                    seq,
                    request,
                    reply,
                }) => {
                    let _ = reply.send(apply(&mut lp, seq, request));
                }
                Ok(Command::Stats(reply)) => {
                    let _ = reply.send(stats.clone());
                }
                Ok(Command::Stop) | Err(mpsc::error::TryRecvError::Disconnected) => break 'outer,
                Err(mpsc::error::TryRecvError::Empty) => break,
            }
        }
        if options.max_ticks.is_some_and(|m| tick >= m) {
            break;
        }

        let t0 = Instant::now();
        let snap = match lp.advance() {
            Ok(s) => s,
            Err(e) => {
                log::error!("control loop aborted: {e}");
                lp.abort(&e.to_string());
                error = Some(e);
                break;
            }
        };
        if tick % decimation == 0 {
            state_seq += 1;
            // no subscribers is not an error
            let _ = states.send(WireMessage::state(state_seq, &snap).to_json().into());
        }
        stats.ticks += 1;
        stats.durations_us.push(t0.elapsed().as_micros() as u64);
        tick += 1;

        // deadline-anchored so jitter does not accumulate
        let deadline = start + period.mul_f64(tick as f64);
        if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }

    if error.is_none() {
        if let Err(e) = lp.close() {
            error = Some(e);
        }
    }
    rx.close();
    LoopOutcome {
        sink: lp.into_sink(),
        stats,
        error,
    }
}
