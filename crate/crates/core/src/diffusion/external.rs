//! Score model served by a subprocess over stdin/stdout.
//!
//! Request: `u32 magic, u32 S, u32 N, u32 t, S*N*N f32` (real part, row-major).
//! Response: `u32 magic, u32 status`, then `S*N*N f32` when status is 0.
//! All integers and floats little-endian.

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::ScoreModel;
use crate::volume::{ImageVolume, Shape};
use crate::{Error, Result};

/// "R3M1" read as a little-endian u32.
pub const MAGIC: u32 = 0x5233_4D31;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub slices: u32,
    pub n: u32,
    pub t: u32,
    pub values: Vec<f32>,
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, count: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub fn write_request(w: &mut impl Write, req: &Request) -> io::Result<()> {
    for v in [MAGIC, req.slices, req.n, req.t] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_f32s(w, &req.values)?;
    w.flush()
}

/// Reads one request; `Ok(None)` on a clean end of stream.
pub fn read_request(r: &mut impl Read) -> io::Result<Option<Request>> {
    let magic = match read_u32(r) {
        Ok(m) => m,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    if magic != MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad request magic {magic:#010x}"),
        ));
    }
    let slices = read_u32(r)?;
    let n = read_u32(r)?;
    let t = read_u32(r)?;
    let values = read_f32s(r, slices as usize * n as usize * n as usize)?;
    Ok(Some(Request { slices, n, t, values }))
}

pub fn write_response(w: &mut impl Write, status: u32, values: &[f32]) -> io::Result<()> {
    w.write_all(&MAGIC.to_le_bytes())?;
    w.write_all(&status.to_le_bytes())?;
    if status == 0 {
        write_f32s(w, values)?;
    }
    w.flush()
}

#[derive(Debug)]
enum Reply {
    Values(Vec<f32>),
    Status(u32),
    BadMagic(u32),
}

fn read_reply(r: &mut impl Read, count: usize) -> io::Result<Reply> {
    let magic = read_u32(r)?;
    if magic != MAGIC {
        return Ok(Reply::BadMagic(magic));
    }
    let status = read_u32(r)?;
    if status != 0 {
        return Ok(Reply::Status(status));
    }
    Ok(Reply::Values(read_f32s(r, count)?))
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    wanted: Sender<usize>,
    replies: Receiver<io::Result<Reply>>,
}

impl Worker {
    fn kill(mut self) {
        drop(self.stdin);
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Score model backed by a long-lived subprocess; one request in flight.
pub struct ExternalScoreModel {
    command: Vec<String>,
    timeout: Duration,
    worker: Option<Worker>,
}

impl ExternalScoreModel {
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.is_empty() || command[0].is_empty() {
            return Err(Error::Config("external model command is empty".into()));
        }
        Ok(ExternalScoreModel {
            command,
            timeout: DEFAULT_TIMEOUT,
            worker: None,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn spawn(&self) -> Result<Worker> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalModel(format!("cannot start {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (wanted, wanted_rx) = mpsc::channel::<usize>();
        let (reply_tx, replies) = mpsc::channel();
        thread::spawn(move || {
            while let Ok(count) = wanted_rx.recv() {
                let reply = read_reply(&mut stdout, count);
                let failed = reply.is_err();
                if reply_tx.send(reply).is_err() || failed {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            wanted,
            replies,
        })
    }

    fn fail(&mut self, msg: String) -> Error {
        if let Some(w) = self.worker.take() {
            w.kill();
        }
        Error::ExternalModel(msg)
    }

    fn query(&mut self, x_t: &ImageVolume, t: usize) -> Result<Vec<f32>> {
        if self.worker.is_none() {
            self.worker = Some(self.spawn()?);
        }
        let shape = x_t.shape();
        let count = shape.len();
        let req = Request {
            slices: shape.slices as u32,
            n: shape.n as u32,
            t: t as u32,
            values: x_t.as_slice().iter().map(|z| z.re as f32).collect(),
        };
        let worker = self.worker.as_mut().expect("worker started above");
        if worker.wanted.send(count).is_err() {
            return Err(self.fail(format!("{:?}: response reader exited", self.command)));
        }
        if let Err(e) = write_request(&mut worker.stdin, &req) {
            return Err(self.fail(format!("{:?}: writing request at t={t}: {e}", self.command)));
        }
        let reply = worker.replies.recv_timeout(self.timeout);
        match reply {
            Ok(Ok(Reply::Values(v))) => Ok(v),
            Ok(Ok(Reply::Status(s))) => Err(self.fail(format!(
                "{:?} returned status {s} at t={t}",
                self.command
            ))),
            Ok(Ok(Reply::BadMagic(m))) => Err(self.fail(format!(
                "{:?} sent malformed response (magic {m:#010x}) at t={t}",
                self.command
            ))),
            Ok(Err(e)) => Err(self.fail(format!(
                "{:?}: reading response at t={t}: {e}",
                self.command
            ))),
            Err(RecvTimeoutError::Timeout) => Err(self.fail(format!(
                "{:?} did not answer within {:?} at t={t}",
                self.command, self.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(self.fail(format!(
                "{:?}: response reader exited at t={t}",
                self.command
            ))),
        }
    }
}

impl Drop for ExternalScoreModel {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            w.kill();
        }
    }
}

impl ScoreModel for ExternalScoreModel {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        let values = self.query(x_t, t)?;
        let shape: Shape = x_t.shape();
        if values.len() != shape.len() {
            return Err(Error::ExternalModel(format!(
                "expected {} score values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.fail(format!("{:?} returned non-finite score at t={t}", self.command)));
        }
        let real: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        ImageVolume::from_real(shape.slices, shape.n, &real)
    }

    fn name(&self) -> String {
        format!("external({})", self.command.join(" "))
    }
}

/// Behaviours of the built-in test server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopbackMode {
    Zero,
    Negate,
    Garbage,
    Status,
    Hang,
}

/// Answers requests on `input`/`output` until end of stream.
pub fn serve_loopback(mode: LoopbackMode, input: &mut impl Read, output: &mut impl Write) -> io::Result<()> {
    while let Some(req) = read_request(input)? {
        match mode {
            LoopbackMode::Zero => write_response(output, 0, &vec![0.0; req.values.len()])?,
            LoopbackMode::Negate => {
                let neg: Vec<f32> = req.values.iter().map(|v| -v).collect();
                write_response(output, 0, &neg)?
            }
            LoopbackMode::Garbage => {
                output.write_all(b"not a tensor")?;
                output.flush()?;
            }
            LoopbackMode::Status => write_response(output, 7, &[])?,
            LoopbackMode::Hang => loop {
                thread::sleep(Duration::from_secs(3600));
            },
        }
    }
    Ok(())
}
