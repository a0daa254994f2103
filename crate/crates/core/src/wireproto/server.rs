//! Backend side of the protocol: a request loop that owns session state
//! and delegates segmentation to a [`Backend`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::messages::{Direction, Envelope, Mode, ObjectMask, Request, Response, WirePoint, WirePrompt};
use super::rle::encode_mask_rle;
use crate::volio::Frame;
use crate::BinaryMask;

/// A failure reported to the client as an `error` message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("[{code}] {text}")]
pub struct BackendFailure {
    pub code: String,
    pub text: String,
}

impl BackendFailure {
    pub fn new(code: &str, text: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PropagateError {
    #[error(transparent)]
    Backend(#[from] BackendFailure),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frames and anchor points of the active video session.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub frames: Vec<Option<Frame>>,
    /// object → frame → points
    pub points: BTreeMap<u8, BTreeMap<usize, Vec<WirePoint>>>,
}

impl Session {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, index: usize) -> &Frame {
        self.frames[index].as_ref().expect("all frames present before propagate")
    }

    pub fn objects(&self) -> impl Iterator<Item = u8> + '_ {
        self.points.keys().copied()
    }

    /// First frame visited: the earliest prompted frame going forward, the
    /// latest going backward.
    pub fn start_frame(&self, direction: Direction) -> Option<usize> {
        let frames = self.points.values().flat_map(|m| m.keys().copied());
        match direction {
            Direction::Forward => frames.min(),
            Direction::Backward => frames.max(),
        }
    }
}

/// Sink for propagated masks; writes one `mask` message per call.
pub type Emit<'a> = dyn FnMut(usize, u8, &BinaryMask) -> std::io::Result<()> + 'a;

pub trait Backend {
    fn backend_id(&self) -> String;

    fn modes(&self) -> Vec<Mode>;

    /// One mask per entry of `objects`, frame-sized.
    fn segment_image(
        &mut self,
        frame: &Frame,
        prompts: &[WirePrompt],
        objects: &[u8],
    ) -> Result<Vec<(u8, BinaryMask)>, BackendFailure>;

    /// Emits masks for every session object on every frame from
    /// `session.start_frame(direction)` to the end, frame by frame.
    fn propagate(&mut self, session: &Session, direction: Direction, emit: &mut Emit<'_>) -> Result<(), PropagateError>;
}

/// Serves requests until the client closes its end.
pub fn serve<B: Backend + ?Sized>(backend: &mut B, reader: impl BufRead, mut writer: impl Write) -> std::io::Result<()> {
    let mut session: Option<Session> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, request) = match serde_json::from_str::<Envelope<Request>>(&line) {
            Ok(env) => (env.id, env.body),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                reply(&mut writer, id, Response::error("bad_request", e.to_string()))?;
                continue;
            }
        };
        let response = match request {
            Request::Hello => Response::Capabilities {
                modes: backend.modes(),
                backend_id: backend.backend_id(),
            },
            Request::SegmentImage { frame, prompts, objects } => {
                segment(backend, &frame, &prompts, &objects)
            }
            Request::StartSession { n_frames } => {
                if !backend.modes().contains(&Mode::Video) {
                    Response::error("unsupported_mode", "backend has no video mode")
                } else if session.is_some() {
                    Response::error("session_active", "end the current session first")
                } else if n_frames == 0 {
                    Response::error("bad_request", "a session needs at least one frame")
                } else {
                    session = Some(Session {
                        frames: vec![None; n_frames],
                        points: BTreeMap::new(),
                    });
                    Response::Ok
                }
            }
            Request::AppendFrame { index, frame } => match session.as_mut() {
                None => Response::error("no_session", "append_frame outside a session"),
                Some(s) if index >= s.n_frames() => {
                    Response::error("bad_request", format!("frame {index} outside {} frames", s.n_frames()))
                }
                Some(s) => match frame.decode(Some(index)) {
                    Ok(f) => {
                        let mismatch = s
                            .frames
                            .iter()
                            .flatten()
                            .next()
                            .is_some_and(|g| (g.width, g.height) != (f.width, f.height));
                        if mismatch {
                            Response::error("bad_frame", "frame size differs from earlier frames")
                        } else {
                            s.frames[index] = Some(f);
                            Response::Ok
                        }
                    }
                    Err(e) => Response::error("bad_frame", e),
                },
            },
            Request::AddPoints { frame, object, points } => match session.as_mut() {
                None => Response::error("no_session", "add_points outside a session"),
                Some(s) if frame >= s.n_frames() => {
                    Response::error("bad_request", format!("frame {frame} outside {} frames", s.n_frames()))
                }
                Some(_) if points.is_empty() => Response::error("bad_request", "no points"),
                Some(_) if points.iter().any(|p| p.label > 1) => {
                    Response::error("bad_request", "point labels must be 0 or 1")
                }
                Some(s) => {
                    s.points.entry(object).or_default().entry(frame).or_default().extend(points);
                    Response::Ok
                }
            },
            Request::Propagate { direction } => match session.as_ref() {
                None => Response::error("no_session", "propagate outside a session"),
                Some(s) if s.points.is_empty() => Response::error("no_prompts", "propagate before add_points"),
                Some(s) if s.frames.iter().any(Option::is_none) => {
                    Response::error("missing_frames", "not every frame was appended")
                }
                Some(s) => {
                    let mut emit = |frame: usize, object: u8, mask: &BinaryMask| {
                        reply(
                            &mut writer,
                            id,
                            Response::Mask {
                                frame,
                                object,
                                rle: encode_mask_rle(mask),
                            },
                        )
                    };
                    match backend.propagate(s, direction, &mut emit) {
                        Ok(()) => Response::Done,
                        Err(PropagateError::Backend(f)) => Response::error(&f.code, f.text),
                        Err(PropagateError::Io(e)) => return Err(e),
                    }
                }
            },
            Request::EndSession => {
                session = None;
                Response::Ok
            }
        };
        reply(&mut writer, id, response)?;
    }
    Ok(())
}

fn segment<B: Backend + ?Sized>(
    backend: &mut B,
    frame: &super::messages::WireFrame,
    prompts: &[WirePrompt],
    objects: &[u8],
) -> Response {
    if !backend.modes().contains(&Mode::Image) {
        return Response::error("unsupported_mode", "backend has no image mode");
    }
    if prompts.is_empty() {
        return Response::error("no_prompts", "segment_image without prompts");
    }
    let frame = match frame.decode(None) {
        Ok(f) => f,
        Err(e) => return Response::error("bad_frame", e),
    };
    match backend.segment_image(&frame, prompts, objects) {
        Ok(masks) => Response::Masks {
            masks: masks
                .into_iter()
                .map(|(object_id, m)| ObjectMask {
                    object_id,
                    rle: encode_mask_rle(&m),
                })
                .collect(),
        },
        Err(f) => Response::error(&f.code, f.text),
    }
}

fn reply(writer: &mut impl Write, id: u64, body: Response) -> std::io::Result<()> {
    writer.write_all(Envelope { id, body }.to_line().as_bytes())?;
    writer.flush()
}

/// Serves a backend on this process's stdin/stdout.
pub fn serve_stdio<B: Backend + ?Sized>(backend: &mut B) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(backend, stdin.lock(), std::io::LineWriter::new(stdout.lock()))
}

/// Serves each connection from `listener` on its own thread with a fresh copy of `backend`.
pub fn serve_tcp<B: Backend + Clone + Send + 'static>(
    backend: &B,
    listener: std::net::TcpListener,
) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let mut backend = backend.clone();
        std::thread::spawn(move || -> std::io::Result<()> {
            let reader = std::io::BufReader::new(stream.try_clone()?);
            serve(&mut backend, reader, stream)
        });
    }
    Ok(())
}
