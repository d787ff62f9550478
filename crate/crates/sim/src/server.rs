//! Live mode: a TCP server that feeds client messages into the tick loop and
//! streams decimated state frames back.
//!
//! Every frame is a 4-byte big-endian length followed by a UTF-8 JSON body.
//! Accepted inbound messages are logged with the time of the tick they were
//! applied at, so the log replays to the same trajectory through
//! [`run_script`](crate::run_script).

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::protocol::{decode_inbound, read_frame, Inbound, Outbound, ProtocolError, ScriptEntry};
use crate::scenario::Scenario;
use crate::sim::{SimError, Simulation, Summary};
use crate::telemetry::{Record, Schema};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("listener: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Ticks to run before shutting down.
    pub ticks: u64,
    /// Pace ticks to wall-clock time; otherwise run as fast as possible.
    pub realtime: bool,
    /// Hold tick 0 until a client connects.
    pub wait_for_client: bool,
    /// Raised by the caller to end the session early.
    pub stop: Arc<AtomicBool>,
}

pub struct ServeOutcome {
    pub summary: Summary,
    /// Accepted inbound messages, timestamped with their tick time.
    pub inbound: Vec<ScriptEntry>,
    pub clients: usize,
}

type ClientId = usize;

enum Event {
    Connected(ClientId, Sender<Arc<Vec<u8>>>, TcpStream),
    Message(ClientId, Inbound),
    Malformed(ClientId, ProtocolError),
    Disconnected(ClientId),
}

struct Client {
    id: ClientId,
    out: Sender<Arc<Vec<u8>>>,
    stream: TcpStream,
}

fn encode(msg: &Outbound) -> Arc<Vec<u8>> {
    let mut buf = Vec::new();
    crate::protocol::write_frame(&mut buf, msg).expect("in-memory frame");
    Arc::new(buf)
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut next_id = 0;
    while !stop.load(Ordering::Relaxed) {
        let stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
                continue;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let id = next_id;
        next_id += 1;

        let (tx, rx) = mpsc::channel::<Arc<Vec<u8>>>();
        let writer = stream.try_clone()?;
        thread::spawn(move || {
            let mut w = BufWriter::new(writer);
            for frame in rx {
                if w.write_all(&frame).and_then(|_| w.flush()).is_err() {
                    break;
                }
            }
        });

        let reader = stream.try_clone()?;
        let ev = events.clone();
        thread::spawn(move || {
            let mut r = BufReader::new(reader);
            loop {
                match read_frame(&mut r) {
                    Ok(Some(body)) => {
                        let e = match decode_inbound(&body) {
                            Ok(msg) => Event::Message(id, msg),
                            Err(err) => Event::Malformed(id, err),
                        };
                        if ev.send(e).is_err() {
                            return;
                        }
                    }
                    Ok(None) => break,
                    Err(err) => {
                        if err.kind() == io::ErrorKind::InvalidData {
                            let _ = ev.send(Event::Malformed(id, ProtocolError::Malformed(err.to_string())));
                        }
                        break;
                    }
                }
            }
            let _ = ev.send(Event::Disconnected(id));
        });

        if events.send(Event::Connected(id, tx, stream)).is_err() {
            break;
        }
    }
    Ok(())
}

struct Session {
    sim: Simulation,
    clients: Vec<Client>,
    inbound: Vec<ScriptEntry>,
    seen: usize,
}

impl Session {
    fn handle(&mut self, event: Event) {
        match event {
            Event::Connected(id, out, stream) => {
                self.seen += 1;
                self.clients.push(Client { id, out, stream });
            }
            Event::Message(id, msg) => match self.sim.apply(&msg) {
                Ok(()) => self.inbound.push(ScriptEntry { time: self.sim.time(), message: msg }),
                Err(err) => self.send_to(id, encode(&err.to_message())),
            },
            Event::Malformed(id, err) => self.send_to(id, encode(&err.to_message())),
            Event::Disconnected(id) => self.clients.retain(|c| c.id != id),
        }
    }

    fn send_to(&self, id: ClientId, frame: Arc<Vec<u8>>) {
        if let Some(c) = self.clients.iter().find(|c| c.id == id) {
            let _ = c.out.send(frame);
        }
    }

    fn broadcast(&self, frame: Arc<Vec<u8>>) {
        for c in &self.clients {
            let _ = c.out.send(frame.clone());
        }
    }
}

/// Run a live session on `listener` until `options.ticks` have elapsed or
/// `options.stop` is raised. Every record is also handed to `sink`.
pub fn serve<F>(
    scenario: &Scenario,
    listener: TcpListener,
    options: ServeOptions,
    mut sink: F,
) -> Result<ServeOutcome, ServeError>
where
    F: FnMut(&Schema, &Record) -> Result<(), String>,
{
    let sim = Simulation::new(scenario)?;
    let mut summary = Summary::new(sim.schema(), sim.row_specs());
    let ts = sim.sampling_time();
    let decimation = ((1.0 / (scenario.stream.frame_rate * ts)).round() as u64).max(1);

    let (tx, rx): (Sender<Event>, Receiver<Event>) = mpsc::channel();
    let stop = options.stop.clone();
    let accept: JoinHandle<io::Result<()>> = {
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, tx, stop))
    };

    let mut session = Session { sim, clients: Vec::new(), inbound: Vec::new(), seen: 0 };
    let result = (|| -> Result<(), ServeError> {
        if options.wait_for_client {
            while session.seen == 0 {
                if stop.load(Ordering::Relaxed) {
                    return Ok(());
                }
                match rx.recv_timeout(Duration::from_millis(20)) {
                    Ok(ev) => session.handle(ev),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return Ok(()),
                }
            }
        }
        let start = Instant::now();
        for k in 0..options.ticks {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            while let Ok(ev) = rx.try_recv() {
                session.handle(ev);
            }
            let rec = session.sim.step()?;
            summary.observe(&rec);
            sink(session.sim.schema(), &rec).map_err(SimError::Sink)?;
            if rec.tick % decimation == 0 {
                session.broadcast(encode(&Outbound::StateFrame(session.sim.state_frame(&rec))));
            }
            if options.realtime {
                let due = start + Duration::from_secs_f64((k + 1) as f64 * ts);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
            }
        }
        Ok(())
    })();

    stop.store(true, Ordering::Relaxed);
    let accept_result = accept.join().unwrap_or(Ok(()));
    while let Ok(ev) = rx.try_recv() {
        if let Event::Connected(id, out, stream) = ev {
            session.clients.push(Client { id, out, stream });
        }
    }
    for c in session.clients.drain(..) {
        drop(c.out);
        let _ = c.stream.shutdown(Shutdown::Read);
    }
    result?;
    accept_result?;
    Ok(ServeOutcome { summary, inbound: session.inbound, clients: session.seen })
}
