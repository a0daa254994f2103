use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use super::messages::{Direction, Envelope, Mode, Request, Response, WireFrame, WirePoint, WirePrompt};
use super::rle::{decode_mask_rle, CodecError, RleMask};
use crate::prompts::{Prompt, PromptSet};
use crate::volio::Frame;
use crate::BinaryMask;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("transport failure")]
    Io(#[from] std::io::Error),
    #[error("cannot start backend `{command}`")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("backend closed the connection")]
    Disconnected,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error [{code}]: {text}")]
    Backend { code: String, text: String },
    #[error("backend does not support {0} mode")]
    Unsupported(Mode),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("invalid mask encoding")]
    Codec(#[from] CodecError),
    #[error("propagation stopped after {} complete frame(s)", completed.len())]
    Partial {
        completed: Vec<FrameMasks>,
        #[source]
        source: Box<WireError>,
    },
}

impl WireError {
    /// Failures of the channel itself rather than of the request.
    pub fn is_transport(&self) -> bool {
        match self {
            WireError::Io(_) | WireError::Spawn { .. } | WireError::Timeout(_) | WireError::Disconnected => true,
            WireError::Partial { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

pub type Result<T, E = WireError> = std::result::Result<T, E>;

/// Masks for every session object on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    pub frame: usize,
    pub masks: BTreeMap<u8, BinaryMask>,
}

/// Where to reach a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// Command line of a child process speaking the protocol on stdio.
    Command(String),
    /// `host:port` of a listening backend.
    Tcp(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty backend spec".into());
        }
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(BackendSpec::Tcp(addr.into()));
        }
        let looks_like_addr = !s.contains(char::is_whitespace)
            && !s.contains('/')
            && s.rsplit_once(':').is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        Ok(if looks_like_addr {
            BackendSpec::Tcp(s.into())
        } else {
            BackendSpec::Command(s.into())
        })
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Command(c) => f.write_str(c),
            BackendSpec::Tcp(a) => write!(f, "tcp://{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub modes: Vec<Mode>,
    pub backend_id: String,
}

/// Client side of one backend connection.
///
/// Strictly request/response: at most one request is in flight. A reader
/// thread turns the incoming byte stream into lines so reads can time out.
pub struct BackendConnection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    capabilities: Capabilities,
    child: Option<Child>,
}

impl std::fmt::Debug for BackendConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendConnection")
            .field("backend_id", &self.capabilities.backend_id)
            .field("modes", &self.capabilities.modes)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl BackendConnection {
    pub fn connect(spec: &BackendSpec, timeout: Duration) -> Result<Self> {
        match spec {
            BackendSpec::Command(cmd) => Self::spawn(cmd, timeout),
            BackendSpec::Tcp(addr) => Self::connect_tcp(addr, timeout),
        }
    }

    /// Spawns `command` (shell-style quoting) and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| WireError::Precondition(format!("cannot parse backend command `{command}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| WireError::Spawn {
                command: command.into(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::from_streams(stdout, stdin, Some(child), timeout)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream, None, timeout)
    }

    /// Runs `backend` on a thread of this process, connected through a
    /// pair of pipes. The thread exits once the connection is dropped.
    pub fn in_process<B>(mut backend: B, timeout: Duration) -> Result<Self>
    where
        B: super::server::Backend + Send + 'static,
    {
        let (client_rx, server_tx) = std::io::pipe()?;
        let (server_rx, client_tx) = std::io::pipe()?;
        std::thread::spawn(move || {
            let _ = super::server::serve(&mut backend, BufReader::new(server_rx), server_tx);
        });
        Self::from_streams(client_rx, client_tx, None, timeout)
    }

    /// Wraps an arbitrary byte channel and performs the `hello` handshake.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        child: Option<Child>,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut conn = Self {
            writer: Box::new(std::io::BufWriter::new(writer)),
            lines: rx,
            next_id: 1,
            timeout,
            capabilities: Capabilities {
                modes: Vec::new(),
                backend_id: String::new(),
            },
            child,
        };
        match conn.request(Request::Hello)? {
            Response::Capabilities { modes, backend_id } => {
                conn.capabilities = Capabilities { modes, backend_id };
                Ok(conn)
            }
            other => Err(unexpected("hello", &other)),
        }
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    pub fn backend_id(&self) -> &str {
        &self.capabilities.backend_id
    }

    pub fn supports(&self, mode: Mode) -> bool {
        self.capabilities.modes.contains(&mode)
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Id the next request will carry.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn send(&mut self, body: Request) -> Result<u64> {
        let id = self.next_id;
        self.next_id += 1;
        self.writer.write_all(Envelope { id, body }.to_line().as_bytes())?;
        self.writer.flush()?;
        Ok(id)
    }

    fn receive(&mut self, id: u64) -> Result<Response> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(WireError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(WireError::Disconnected),
        };
        let msg: Envelope<Response> = serde_json::from_str(line.trim_end())
            .map_err(|e| WireError::Protocol(format!("unparseable message `{}`: {e}", line.trim_end())))?;
        if msg.id != id {
            return Err(WireError::Protocol(format!(
                "response id {} does not match request id {id}",
                msg.id
            )));
        }
        Ok(msg.body)
    }

    fn request(&mut self, body: Request) -> Result<Response> {
        let id = self.send(body)?;
        match self.receive(id)? {
            Response::Error { code, text } => Err(WireError::Backend { code, text }),
            Response::Mask { .. } => Err(WireError::Protocol("stream item outside propagate".into())),
            other => Ok(other),
        }
    }

    /// Sends one request and returns its terminal reply as-is, including
    /// `error` replies. Stream items are not expected here.
    pub fn exchange(&mut self, body: Request) -> Result<Response> {
        let id = self.send(body)?;
        self.receive(id)
    }

    fn expect_ok(&mut self, body: Request, what: &str) -> Result<()> {
        match self.request(body)? {
            Response::Ok => Ok(()),
            other => Err(unexpected(what, &other)),
        }
    }

    /// Segments one frame in image mode: one mask per object named in
    /// `prompts`.
    pub fn segment_image(&mut self, frame: &Frame, prompts: &[Prompt]) -> Result<BTreeMap<u8, BinaryMask>> {
        if !self.supports(Mode::Image) {
            return Err(WireError::Unsupported(Mode::Image));
        }
        if prompts.is_empty() {
            return Err(WireError::Precondition("segment_image needs at least one prompt".into()));
        }
        let objects: Vec<u8> = prompts
            .iter()
            .map(Prompt::object_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let body = Request::SegmentImage {
            frame: WireFrame::encode(frame),
            prompts: prompts.iter().map(WirePrompt::from_prompt).collect(),
            objects: objects.clone(),
        };
        let masks = match self.request(body)? {
            Response::Masks { masks } => masks,
            other => return Err(unexpected("segment_image", &other)),
        };
        let mut out = BTreeMap::new();
        for m in masks {
            if !objects.contains(&m.object_id) {
                return Err(WireError::Protocol(format!("mask for unrequested object {}", m.object_id)));
            }
            let mask = decode_frame_mask(&m.rle, frame)?;
            if out.insert(m.object_id, mask).is_some() {
                return Err(WireError::Protocol(format!("two masks for object {}", m.object_id)));
            }
        }
        if let Some(missing) = objects.iter().find(|o| !out.contains_key(o)) {
            return Err(WireError::Protocol(format!("no mask for object {missing}")));
        }
        Ok(out)
    }

    /// Runs one video session: uploads `frames`, adds the anchor points of
    /// `objects` (all prompted objects when `None`), propagates in
    /// `direction` and closes the session.
    ///
    /// Returns one entry per visited frame in propagation order, anchor
    /// first. `frames[i]` is session frame `i`.
    pub fn run_video_session(
        &mut self,
        frames: &[Frame],
        anchor_prompts: &PromptSet,
        direction: Direction,
        objects: Option<&[u8]>,
    ) -> Result<Vec<FrameMasks>> {
        if !self.supports(Mode::Video) {
            return Err(WireError::Unsupported(Mode::Video));
        }
        let anchor = match (anchor_prompts.scheme.is_video(), anchor_prompts.anchor_slice) {
            (true, Some(a)) => a,
            _ => {
                return Err(WireError::Precondition(format!(
                    "video sessions need a video scheme, got {}",
                    anchor_prompts.scheme
                )))
            }
        };
        if anchor >= frames.len() {
            return Err(WireError::Precondition(format!(
                "anchor {anchor} outside {} frames",
                frames.len()
            )));
        }
        let mut points: BTreeMap<u8, Vec<WirePoint>> = BTreeMap::new();
        for p in anchor_prompts.on_slice(anchor) {
            if let Prompt::Point(pt) = p {
                if objects.is_none_or(|o| o.contains(&pt.object_id)) {
                    points.entry(pt.object_id).or_default().push(WirePoint::from_prompt(pt));
                }
            }
        }
        if points.is_empty() {
            return Err(WireError::Precondition("no anchor points for the requested objects".into()));
        }

        self.expect_ok(Request::StartSession { n_frames: frames.len() }, "start_session")?;
        for (index, frame) in frames.iter().enumerate() {
            let mut wf = WireFrame::encode(frame);
            wf.index = Some(index);
            self.expect_ok(Request::AppendFrame { index, frame: wf }, "append_frame")?;
        }
        for (&object, pts) in &points {
            self.expect_ok(
                Request::AddPoints {
                    frame: anchor,
                    object,
                    points: pts.clone(),
                },
                "add_points",
            )?;
        }
        let result = self.collect_stream(frames, anchor, direction, &points);
        if let Err(e) = &result {
            if e.is_transport() {
                return result;
            }
        }
        let closed = self.expect_ok(Request::EndSession, "end_session");
        let masks = result?;
        closed?;
        Ok(masks)
    }

    fn collect_stream(
        &mut self,
        frames: &[Frame],
        anchor: usize,
        direction: Direction,
        points: &BTreeMap<u8, Vec<WirePoint>>,
    ) -> Result<Vec<FrameMasks>> {
        let expected = direction.sequence(anchor, frames.len());
        let objects: BTreeSet<u8> = points.keys().copied().collect();
        let mut done: Vec<FrameMasks> = Vec::with_capacity(expected.len());
        let mut current: Option<FrameMasks> = None;
        let partial = |done: Vec<FrameMasks>, e: WireError| WireError::Partial {
            completed: done,
            source: Box::new(e),
        };

        let id = self.send(Request::Propagate { direction })?;
        loop {
            let msg = match self.receive(id) {
                Ok(m) => m,
                Err(e) => return Err(partial(done, e)),
            };
            match msg {
                Response::Mask { frame, object, rle } => {
                    if current.as_ref().is_none_or(|c| c.frame != frame) {
                        if let Some(c) = current.take() {
                            if c.masks.len() != objects.len() {
                                let e = WireError::Protocol(format!("frame {} left incomplete", c.frame));
                                return Err(partial(done, e));
                            }
                            done.push(c);
                        }
                        let next_expected = expected.get(done.len()).copied();
                        if Some(frame) != next_expected {
                            let e = WireError::Protocol(format!(
                                "mask for frame {frame} out of propagation order (expected {next_expected:?})"
                            ));
                            return Err(partial(done, e));
                        }
                        current = Some(FrameMasks {
                            frame,
                            masks: BTreeMap::new(),
                        });
                    }
                    if !objects.contains(&object) {
                        let e = WireError::Protocol(format!("mask for object {object} outside the session"));
                        return Err(partial(done, e));
                    }
                    let mask = match decode_frame_mask(&rle, &frames[frame]) {
                        Ok(m) => m,
                        Err(e) => return Err(partial(done, e)),
                    };
                    let c = current.as_mut().expect("set above");
                    if c.masks.insert(object, mask).is_some() {
                        let e = WireError::Protocol(format!("two masks for object {object} on frame {frame}"));
                        return Err(partial(done, e));
                    }
                    if c.masks.len() == objects.len() {
                        done.push(current.take().expect("set above"));
                    }
                }
                Response::Done => {
                    if current.is_some() || done.len() != expected.len() {
                        let e = WireError::Protocol(format!(
                            "propagation ended after {} of {} frames",
                            done.len(),
                            expected.len()
                        ));
                        return Err(partial(done, e));
                    }
                    return Ok(done);
                }
                Response::Error { code, text } => return Err(partial(done, WireError::Backend { code, text })),
                other => return Err(partial(done, unexpected("propagate", &other))),
            }
        }
    }

    /// Fails if the backend sent anything that was not consumed.
    pub fn ensure_drained(&self) -> Result<()> {
        std::thread::sleep(Duration::from_millis(20));
        match self.lines.try_recv() {
            Ok(Ok(line)) => Err(WireError::Protocol(format!("unconsumed message `{}`", line.trim_end()))),
            _ => Ok(()),
        }
    }

    /// Closes the channel and reaps a child backend.
    pub fn shutdown(mut self) -> Result<()> {
        self.close()
    }

    fn close(&mut self) -> Result<()> {
        self.writer = Box::new(std::io::sink());
        if let Some(mut child) = self.child.take() {
            for _ in 0..100 {
                if child.try_wait()?.is_some() {
                    return Ok(());
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            child.kill()?;
            child.wait()?;
        }
        Ok(())
    }
}

impl Drop for BackendConnection {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn decode_frame_mask(rle: &RleMask, frame: &Frame) -> Result<BinaryMask> {
    if (rle.width, rle.height) != (frame.width, frame.height) {
        return Err(WireError::Protocol(format!(
            "mask is {}×{}, frame is {}×{}",
            rle.width, rle.height, frame.width, frame.height
        )));
    }
    Ok(decode_mask_rle(rle)?)
}

fn unexpected(what: &str, got: &Response) -> WireError {
    WireError::Protocol(format!("unexpected reply to {what}: {got:?}"))
}
