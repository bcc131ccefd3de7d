//! Live session served over WebSocket.
//!
//! One thread owns the closed loop. Connections never touch it: requests go
//! through a single intake channel drained at tick boundaries, and each
//! connection has its own outbound queue. Telemetry in that queue is bounded
//! and the oldest sample is dropped on overflow; snapshots, acks and errors
//! are never dropped. Logs are produced exactly as in a scripted run, so
//! consumers only affect the session through the requests they send.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use crate::config::SessionConfig;
use crate::protocol::{decode_client, ActiveParams, ClientMessage, SensorSample, ServerMessage, StateSample};
use crate::session::{tick_count, ClosedLoop, SessionError, SessionOutput};

const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {cause}")]
    Bind { addr: String, cause: std::io::Error },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("speed must be >= 0, got {0}")]
    Speed(f64),
    #[error("control loop panicked")]
    Panicked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub speed: f64,
    /// Stop after this much simulated time; run until stopped otherwise.
    pub duration: Option<f64>,
    /// Publish telemetry every this many ticks (10 gives 25 Hz at 250 Hz).
    pub telemetry_every: u32,
    /// Telemetry messages buffered per connection.
    pub queue_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            duration: None,
            telemetry_every: 10,
            queue_capacity: 64,
        }
    }
}

/// Per-connection outbound queue.
#[derive(Debug)]
struct Outbound {
    queue: Mutex<VecDeque<ServerMessage>>,
    capacity: usize,
    closed: AtomicBool,
}

impl Outbound {
    fn new(capacity: usize) -> Self {
        Self {
            queue: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
            closed: AtomicBool::new(false),
        }
    }

    fn push(&self, msg: ServerMessage) {
        let mut q = self.queue.lock().expect("queue lock");
        if msg.is_telemetry() && q.iter().filter(|m| m.is_telemetry()).count() >= self.capacity {
            if let Some(i) = q.iter().position(ServerMessage::is_telemetry) {
                q.remove(i);
            }
        }
        q.push_back(msg);
    }

    fn drain(&self) -> Vec<ServerMessage> {
        self.queue.lock().expect("queue lock").drain(..).collect()
    }
}

enum Intake {
    Subscribe(Arc<Outbound>),
    Request(Arc<Outbound>, ClientMessage),
    Reject(Arc<Outbound>, Option<u64>, String),
}

/// Handle to a running server.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    control: JoinHandle<Result<SessionOutput, SessionError>>,
    acceptor: JoinHandle<()>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Asks the control loop to finish after the current tick.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.control.is_finished()
    }

    /// Waits for the control loop to end and returns the session artifacts.
    pub fn wait(self) -> Result<SessionOutput, ServerError> {
        let out = self.control.join().map_err(|_| ServerError::Panicked)?;
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        Ok(out?)
    }
}

/// Binds `addr` and starts serving.
pub fn serve(config: SessionConfig, addr: &str, options: ServeOptions) -> Result<Server, ServerError> {
    let listener = TcpListener::bind(addr).map_err(|cause| ServerError::Bind {
        addr: addr.to_string(),
        cause,
    })?;
    start(config, listener, options)
}

pub fn start(config: SessionConfig, listener: TcpListener, options: ServeOptions) -> Result<Server, ServerError> {
    if !(options.speed >= 0.0 && options.speed.is_finite()) {
        return Err(ServerError::Speed(options.speed));
    }
    let lp = ClosedLoop::new(&config)?;
    let ticks = options.duration.map(|d| tick_count(d, config.device.dt())).transpose()?;
    let bind_error = |cause| ServerError::Bind {
        addr: "listener".into(),
        cause,
    };
    let addr = listener.local_addr().map_err(bind_error)?;
    listener.set_nonblocking(true).map_err(bind_error)?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();

    let acceptor = {
        let stop = stop.clone();
        let capacity = options.queue_capacity;
        thread::spawn(move || accept_loop(listener, tx, stop, capacity))
    };
    let control = {
        let stop = stop.clone();
        thread::spawn(move || control_loop(lp, rx, stop, options, ticks))
    };
    Ok(Server {
        addr,
        stop,
        control,
        acceptor,
    })
}

fn accept_loop(listener: TcpListener, intake: Sender<Intake>, stop: Arc<AtomicBool>, capacity: usize) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let intake = intake.clone();
                let stop = stop.clone();
                thread::spawn(move || {
                    if let Err(err) = connection(stream, intake, stop, capacity) {
                        log::debug!("connection {peer} ended: {err}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn connection(stream: TcpStream, intake: Sender<Intake>, stop: Arc<AtomicBool>, capacity: usize) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let out = Arc::new(Outbound::new(capacity));
    let result = pump(&mut ws, &out, &intake, &stop);
    out.closed.store(true, Ordering::SeqCst);
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn pump(ws: &mut WebSocket<TcpStream>, out: &Arc<Outbound>, intake: &Sender<Intake>, stop: &AtomicBool) -> Result<(), tungstenite::Error> {
    if intake.send(Intake::Subscribe(out.clone())).is_err() {
        return Ok(());
    }
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let item = match decode_client(&text) {
                    Ok(msg) => Intake::Request(out.clone(), msg),
                    Err(bad) => Intake::Reject(out.clone(), bad.seq, bad.reason),
                };
                if intake.send(item).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Binary(_)) => {
                let reject = Intake::Reject(out.clone(), None, "binary frames are not supported".into());
                if intake.send(reject).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        for msg in out.drain() {
            ws.send(Message::text(msg.to_json()))?;
        }
        // Closing after the loop has ended lets clients see every final ack.
        if stop.load(Ordering::SeqCst) && out.queue.lock().expect("queue lock").is_empty() {
            return Ok(());
        }
    }
}

fn snapshot(lp: &ClosedLoop) -> ServerMessage {
    let mut config = lp.config().clone();
    config.impedance = lp.table().clone();
    ServerMessage::Snapshot {
        t: lp.time(),
        config: Box::new(config),
        state: StateSample::from(lp.state()),
        revision: lp.revision(),
    }
}

fn control_loop(
    mut lp: ClosedLoop,
    intake: Receiver<Intake>,
    stop: Arc<AtomicBool>,
    options: ServeOptions,
    ticks: Option<u64>,
) -> Result<SessionOutput, SessionError> {
    let dt = lp.config().device.dt();
    let every = u64::from(options.telemetry_every.max(1));
    let mut subscribers: Vec<Arc<Outbound>> = Vec::new();
    let started = Instant::now();
    let mut tick: u64 = 0;

    while !stop.load(Ordering::SeqCst) && ticks.is_none_or(|n| tick < n) {
        while let Ok(item) = intake.try_recv() {
            let t = lp.time();
            match item {
                Intake::Subscribe(out) => {
                    out.push(snapshot(&lp));
                    subscribers.push(out);
                }
                Intake::Request(out, msg) => {
                    let reply = match lp.apply(msg.command()) {
                        Ok(()) => ServerMessage::Ack {
                            seq: msg.seq(),
                            t,
                            revision: lp.revision(),
                        },
                        Err(err) => ServerMessage::Error {
                            seq: Some(msg.seq()),
                            t,
                            reason: err.to_string(),
                        },
                    };
                    out.push(reply);
                }
                Intake::Reject(out, seq, reason) => out.push(ServerMessage::Error { seq, t, reason }),
            }
        }
        subscribers.retain(|s| !s.closed.load(Ordering::SeqCst));

        let sample = lp.step()?;
        if tick.is_multiple_of(every) && !subscribers.is_empty() {
            let msg = ServerMessage::Telemetry {
                t: sample.frame.t,
                sample: SensorSample::from(&sample.frame),
                state: StateSample::from(&sample.state),
                active_params: ActiveParams::from(&sample.state),
                revision: lp.revision(),
            };
            for s in &subscribers {
                s.push(msg.clone());
            }
        }
        tick += 1;

        if options.speed > 0.0 {
            let due = started + Duration::from_secs_f64(tick as f64 * dt / options.speed);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    Ok(lp.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActivityMode;

    fn telemetry(t: f64) -> ServerMessage {
        let state = crate::fsm::ControllerState::new(ActivityMode::LevelWalk);
        ServerMessage::Telemetry {
            t,
            sample: SensorSample {
                theta_imu: 0.0,
                q: 0.0,
                q_dot: 0.0,
                f_vertical: 0.0,
                m_sagittal: 0.0,
                fresh_mask: 7,
            },
            state: StateSample::from(&state),
            active_params: ActiveParams::from(&state),
            revision: 0,
        }
    }

    #[test]
    fn outbound_drops_oldest_telemetry_only() {
        let out = Outbound::new(2);
        out.push(telemetry(0.0));
        out.push(ServerMessage::Ack {
            seq: 1,
            t: 0.0,
            revision: 1,
        });
        out.push(telemetry(1.0));
        out.push(telemetry(2.0));
        let drained = out.drain();
        assert_eq!(drained.len(), 3);
        assert!(matches!(drained[0], ServerMessage::Ack { seq: 1, .. }));
        assert!(matches!(drained[1], ServerMessage::Telemetry { t, .. } if t == 1.0));
        assert!(matches!(drained[2], ServerMessage::Telemetry { t, .. } if t == 2.0));
    }

    #[test]
    fn negative_speed_is_rejected() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let opts = ServeOptions {
            speed: -1.0,
            ..ServeOptions::default()
        };
        assert!(matches!(start(SessionConfig::default(), listener, opts), Err(ServerError::Speed(_))));
    }
}
