//! Network front end. One simulation thread owns the session; every
//! connection gets its own I/O thread and talks to the simulation only
//! through channels (lines in, serialized frames out).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;
use tungstenite::{Message, WebSocket};

use rock_core::config::ScenarioConfig;
use rock_core::log::JsonlAppender;
use rock_core::nn::Mlp;
use rock_core::{Error, Result};

use super::session::{ClientId, ServerMessage, StateFrame, TeleopSession};

/// Flight-log record; state frames share the broadcast layout.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FlightRecord<'a> {
    Session { id: &'a str, seed: u64, controller: &'a str },
    Input { t: f64, client: ClientId, message: &'a str },
    Reset { t: f64, seed: u64 },
    #[serde(untagged)]
    State(&'a ServerMessage),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub seed: u64,
    pub policy: Option<Mlp>,
    /// Overrides `teleop.flight_log` from the scenario.
    pub flight_log: Option<PathBuf>,
}

enum Inbound {
    Connect(ClientId, Sender<String>),
    Line(ClientId, String),
    Disconnect(ClientId),
}

/// Handle to a running server; dropping it shuts the server down.
pub struct TeleopServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl TeleopServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
    /// A busy port is a startup error.
    pub fn start(cfg: Arc<ScenarioConfig>, opts: ServeOptions) -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", opts.port))
            .map_err(|e| Error::Config(format!("cannot listen on port {}: {e}", opts.port)))?;
        Self::start_on(listener, cfg, opts)
    }

    pub fn start_on(listener: TcpListener, cfg: Arc<ScenarioConfig>, opts: ServeOptions) -> Result<Self> {
        if !(cfg.teleop.pacing > 0.0 && cfg.teleop.broadcast_hz > 0.0) {
            return Err(Error::Config("teleop pacing and broadcast_hz must be positive".into()));
        }
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let log_path = opts.flight_log.clone().or_else(|| cfg.teleop.flight_log.as_ref().map(PathBuf::from));
        let mut log = log_path.as_deref().map(JsonlAppender::open).transpose()?;
        let session = TeleopSession::new(format!("session-{}", opts.seed), cfg.clone(), opts.policy, opts.seed)?;
        if let Some(log) = log.as_mut() {
            log.append(&FlightRecord::Session {
                id: &session.id,
                seed: session.seed(),
                controller: session.controller().as_str(),
            })?;
        }

        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let sim = {
            let shutdown = shutdown.clone();
            thread::spawn(move || simulation_loop(session, rx, log, shutdown))
        };
        let accept = {
            let shutdown = shutdown.clone();
            thread::spawn(move || accept_loop(listener, tx, shutdown))
        };
        Ok(Self { addr, shutdown, threads: vec![sim, accept] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Blocks until the shutdown flag is raised and all threads exit.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.wait();
    }
}

impl Drop for TeleopServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    let next_id = AtomicU64::new(1);
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                let tx = tx.clone();
                let shutdown = shutdown.clone();
                thread::spawn(move || {
                    let _ = serve_client(stream, id, &tx, &shutdown);
                    let _ = tx.send(Inbound::Disconnect(id));
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

const POLL: Duration = Duration::from_millis(5);

/// Detects a WebSocket upgrade by its HTTP request line; anything else is
/// treated as newline-delimited JSON over raw TCP.
fn serve_client(stream: TcpStream, id: ClientId, tx: &Sender<Inbound>, shutdown: &AtomicBool) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut head = [0u8; 4];
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let n = match stream.peek(&mut head) {
        Ok(n) => n,
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => 0,
        Err(e) => return Err(e),
    };
    let (out_tx, out_rx) = mpsc::channel();
    if tx.send(Inbound::Connect(id, out_tx)).is_err() {
        return Ok(());
    }
    if n == 4 && &head == b"GET " {
        stream.set_read_timeout(None)?;
        let ws = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
        serve_websocket(ws, id, tx, out_rx, shutdown)
    } else {
        serve_lines(stream, id, tx, out_rx, shutdown)
    }
}

fn serve_lines(
    stream: TcpStream,
    id: ClientId,
    tx: &Sender<Inbound>,
    out: Receiver<String>,
    shutdown: &AtomicBool,
) -> std::io::Result<()> {
    let reader_stream = stream.try_clone()?;
    reader_stream.set_read_timeout(None)?;
    let tx_reader = tx.clone();
    let reader = thread::spawn(move || {
        for line in BufReader::new(reader_stream).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            if tx_reader.send(Inbound::Line(id, line)).is_err() {
                break;
            }
        }
    });
    let mut writer = stream;
    let result = loop {
        if shutdown.load(Ordering::SeqCst) || reader.is_finished() {
            break Ok(());
        }
        match out.recv_timeout(POLL) {
            Ok(mut frame) => {
                frame.push('\n');
                if let Err(e) = writer.write_all(frame.as_bytes()) {
                    break Err(e);
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break Ok(()),
        }
    };
    let _ = writer.shutdown(std::net::Shutdown::Both);
    let _ = reader.join();
    result
}

fn serve_websocket(
    mut ws: WebSocket<TcpStream>,
    id: ClientId,
    tx: &Sender<Inbound>,
    out: Receiver<String>,
    shutdown: &AtomicBool,
) -> std::io::Result<()> {
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let io = |e: tungstenite::Error| std::io::Error::other(e.to_string());
    loop {
        if shutdown.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        loop {
            match out.try_recv() {
                Ok(frame) => ws.write(Message::text(frame)).map_err(io)?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(io(e)),
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                // A text frame may carry several newline-separated messages.
                for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                    if tx.send(Inbound::Line(id, line.to_owned())).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io(e)),
        }
    }
}

/// Owns the session. Each pass drains client messages (in arrival order),
/// advances the simulation to the paced target time, and broadcasts a
/// frame when the broadcast period has elapsed and simulated time moved.
fn simulation_loop(
    mut session: TeleopSession,
    rx: Receiver<Inbound>,
    mut log: Option<JsonlAppender>,
    shutdown: Arc<AtomicBool>,
) {
    let cfg = session.config().clone();
    let period = cfg.env.control_period;
    let pacing = cfg.teleop.pacing;
    let broadcast_every = Duration::from_secs_f64(1.0 / cfg.teleop.broadcast_hz);
    // At most this many control steps per pass so a stalled host cannot
    // trigger an unbounded catch-up burst.
    let max_burst = ((0.1 * pacing / period).ceil() as usize).max(1);

    let mut clients: BTreeMap<ClientId, Sender<String>> = BTreeMap::new();
    let mut anchor = (Instant::now(), session.time());
    let mut last_broadcast = Instant::now() - broadcast_every;
    let mut last_frame_t = f64::NEG_INFINITY;
    let append = |log: &mut Option<JsonlAppender>, record: &FlightRecord| {
        if let Some(l) = log.as_mut() {
            if let Err(e) = l.append(record) {
                eprintln!("flight log disabled: {e}");
                *log = None;
            }
        }
    };

    while !shutdown.load(Ordering::SeqCst) {
        loop {
            match rx.try_recv() {
                Ok(Inbound::Connect(id, out)) => {
                    // Late joiners get the current snapshot even while paused.
                    // Later broadcasts must be strictly newer than this one.
                    let frame = session.state_frame();
                    last_frame_t = last_frame_t.max(frame.t);
                    let _ = out.send(ServerMessage::State(frame).to_json());
                    clients.insert(id, out);
                }
                Ok(Inbound::Disconnect(id)) => {
                    clients.remove(&id);
                    session.release(id);
                }
                Ok(Inbound::Line(id, text)) => {
                    let (was_paused, t_before) = (session.paused(), session.time());
                    append(&mut log, &FlightRecord::Input { t: t_before, client: id, message: &text });
                    let reply = session.handle_message(id, &text);
                    if matches!(&reply, ServerMessage::Ack { of } if of == "reset") {
                        append(&mut log, &FlightRecord::Reset { t: session.time(), seed: session.seed() });
                        anchor = (Instant::now(), session.time());
                    }
                    if was_paused && !session.paused() {
                        anchor = (Instant::now(), session.time());
                    }
                    if let Some(out) = clients.get(&id) {
                        let _ = out.send(reply.to_json());
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return,
            }
        }

        if session.paused() {
            anchor = (Instant::now(), session.time());
        } else {
            let target = anchor.1 + pacing * anchor.0.elapsed().as_secs_f64();
            let mut burst = 0;
            while session.time() + 0.5 * period <= target && burst < max_burst {
                if let Err(e) = session.control_step() {
                    eprintln!("simulation reset after error: {e}");
                    append(&mut log, &FlightRecord::Reset { t: session.time(), seed: session.seed() });
                    anchor = (Instant::now(), session.time());
                    break;
                }
                burst += 1;
            }
            if burst == max_burst {
                // Fell behind; re-anchor instead of racing to catch up.
                anchor = (Instant::now(), session.time());
            }
        }

        if last_broadcast.elapsed() >= broadcast_every && session.time() > last_frame_t {
            last_broadcast = Instant::now();
            let frame: StateFrame = session.state_frame();
            last_frame_t = frame.t;
            let msg = ServerMessage::State(frame);
            append(&mut log, &FlightRecord::State(&msg));
            let json = msg.to_json();
            clients.retain(|_, out| out.send(json.clone()).is_ok());
        }
        thread::sleep(Duration::from_millis(1));
    }
}
