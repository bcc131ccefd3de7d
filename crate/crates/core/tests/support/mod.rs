//! Helpers shared by integration test targets.
#![allow(dead_code)]

use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use kneesim_core::model::Side;
use kneesim_core::plant::{Footfall, WalkwayRecord};
use kneesim_core::protocol::ServerMessage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tungstenite::{Message, WebSocket};

/// Brute-force recomputation of the walkway measures. Written without
/// reference to the library: quadratic scans, explicit loops, two-pass
/// statistics.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    pub struct Limb {
        pub step_time: (f64, f64),
        pub step_length: (f64, f64),
        pub swing_pct: (f64, f64),
        pub stance_pct: (f64, f64),
        pub step_width: (f64, f64),
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Metrics {
        pub speed: f64,
        pub cadence: f64,
        pub left: Limb,
        pub right: Limb,
        pub si: [f64; 5],
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let mut total = 0.0;
        for x in v {
            total += x;
        }
        let mean = total / v.len() as f64;
        let mut ss = 0.0;
        for x in v {
            ss += (x - mean) * (x - mean);
        }
        (mean, (ss / v.len() as f64).sqrt())
    }

    fn si(a: f64, b: f64) -> Option<f64> {
        if a < 0.0 || b < 0.0 || (a == 0.0 && b == 0.0) {
            return None;
        }
        Some(if a < b { a / b } else { b / a })
    }

    fn limb(ff: &[Footfall], side: Side) -> Option<Limb> {
        let (mut st, mut sl, mut sw) = (vec![], vec![], vec![]);
        for cur in ff.iter().filter(|f| f.side == side) {
            // Latest footfall strictly before this one.
            let mut prev: Option<&Footfall> = None;
            for f in ff {
                if f.t_contact < cur.t_contact && prev.is_none_or(|p| f.t_contact > p.t_contact) {
                    prev = Some(f);
                }
            }
            if let Some(p) = prev {
                if p.side != side {
                    st.push(cur.t_contact - p.t_contact);
                    sl.push(cur.x - p.x);
                    sw.push((cur.y - p.y).abs());
                }
            }
        }
        let mut stance = vec![];
        for cur in ff.iter().filter(|f| f.side == side) {
            let mut next: Option<&Footfall> = None;
            for f in ff.iter().filter(|f| f.side == side) {
                if f.t_contact > cur.t_contact && next.is_none_or(|n| f.t_contact < n.t_contact) {
                    next = Some(f);
                }
            }
            if let Some(n) = next {
                stance.push((cur.t_liftoff - cur.t_contact) / (n.t_contact - cur.t_contact) * 100.0);
            }
        }
        if st.is_empty() {
            return None;
        }
        let swing: Vec<f64> = stance.iter().map(|s| 100.0 - s).collect();
        Some(Limb {
            step_time: mean_sd(&st),
            step_length: mean_sd(&sl),
            swing_pct: mean_sd(&swing),
            stance_pct: mean_sd(&stance),
            step_width: mean_sd(&sw),
        })
    }

    pub fn spatiotemporal(rec: &WalkwayRecord) -> Option<Metrics> {
        let ff = &rec.footfalls;
        let lefts = ff.iter().filter(|f| f.side == Side::Left).count();
        if lefts < 3 || ff.len() - lefts < 3 {
            return None;
        }
        let left = limb(ff, Side::Left)?;
        let right = limb(ff, Side::Right)?;
        let mut first = &ff[0];
        let mut last = &ff[0];
        for f in ff {
            if f.t_contact < first.t_contact {
                first = f;
            }
            if f.t_contact > last.t_contact {
                last = f;
            }
        }
        let dt = last.t_contact - first.t_contact;
        let si = [
            si(left.step_time.0, right.step_time.0)?,
            si(left.step_length.0, right.step_length.0)?,
            si(left.swing_pct.0, right.swing_pct.0)?,
            si(left.stance_pct.0, right.stance_pct.0)?,
            si(left.step_width.0, right.step_width.0)?,
        ];
        Some(Metrics {
            speed: (last.x - first.x) / dt,
            cadence: (ff.len() - 1) as f64 * 60.0 / dt,
            left,
            right,
            si,
        })
    }
}

/// Random walkway record of 6 to 10 footfalls. Sides mostly alternate, with
/// an occasional repeat; contacts and positions increase.
pub fn random_record(rng: &mut ChaCha8Rng) -> WalkwayRecord {
    loop {
        let n = rng.random_range(6..=10);
        let mut side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
        let (mut t, mut x) = (rng.random_range(0.0..2.0), rng.random_range(0.0..1.0));
        let mut footfalls = Vec::new();
        for i in 0..n {
            if i > 0 {
                if rng.random_bool(0.85) {
                    side = side.opposite();
                }
                t += rng.random_range(0.3..0.9);
                x += rng.random_range(0.2..0.9);
            }
            let y = match side {
                Side::Left => -rng.random_range(0.02..0.12),
                Side::Right => rng.random_range(0.02..0.12),
            };
            footfalls.push(Footfall {
                t_contact: t,
                t_liftoff: t + rng.random_range(0.3..1.1),
                x,
                y,
                side,
            });
        }
        let lefts = footfalls.iter().filter(|f| f.side == Side::Left).count();
        if lefts >= 3 && n - lefts >= 3 {
            return WalkwayRecord { footfalls };
        }
    }
}

/// Equal to 1e-9 relative, with a 1e-12 absolute floor for values that are
/// zero in exact arithmetic (SDs of constant samples).
pub fn close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-9 * a.abs().max(b.abs()) || diff <= 1e-12
}

/// Minimal blocking WebSocket client for protocol tests.
pub struct Client {
    ws: WebSocket<TcpStream>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).expect("connect");
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).expect("handshake");
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        Self { ws }
    }

    pub fn send_text(&mut self, text: &str) {
        self.ws.send(Message::text(text)).expect("send");
    }

    pub fn send(&mut self, value: serde_json::Value) {
        self.send_text(&value.to_string());
    }

    /// Next server message, or None once `timeout` has elapsed.
    pub fn recv(&mut self, timeout: Duration) -> Option<ServerMessage> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            match self.ws.read() {
                Ok(Message::Text(text)) => {
                    return Some(serde_json::from_str(&text).unwrap_or_else(|e| panic!("bad server message {text}: {e}")))
                }
                Ok(Message::Close(_)) => return None,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(_) => return None,
            }
        }
        None
    }

    /// Reads until `pred` matches, returning every message seen.
    pub fn until(&mut self, timeout: Duration, mut pred: impl FnMut(&ServerMessage) -> bool) -> Vec<ServerMessage> {
        let deadline = Instant::now() + timeout;
        let mut seen = Vec::new();
        while Instant::now() < deadline {
            if let Some(m) = self.recv(deadline - Instant::now()) {
                let done = pred(&m);
                seen.push(m);
                if done {
                    return seen;
                }
            }
        }
        panic!("timed out; last messages: {:?}", seen.iter().rev().take(3).collect::<Vec<_>>());
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
