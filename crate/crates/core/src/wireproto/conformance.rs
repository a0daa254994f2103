//! Protocol conformance probe behind `slicecast backend-check`.
//!
//! Drives a connected backend with the two-bars synthetic case and checks
//! message shapes, mask sizes and RLE validity, propagation order and
//! coverage, and the error replies for out-of-order session requests.
//! Checks only the protocol; mask contents are not scored.

use std::collections::BTreeSet;

use super::client::{BackendConnection, WireError};
use super::messages::{Direction, Mode, Request, Response, WireFrame};
use crate::prompts::{build_prompts, BuildOptions, Scheme};
use crate::refbackends::{make_synthetic_case, Preset};
use crate::volio::{volume_to_frames, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ConformanceReport {
    pub backend_id: String,
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome != Outcome::Fail)
    }
}

impl std::fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "backend {}", self.backend_id)?;
        for c in &self.checks {
            let tag = match c.outcome {
                Outcome::Pass => "PASS",
                Outcome::Fail => "FAIL",
                Outcome::Skip => "SKIP",
            };
            writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn result(name: &'static str, r: Result<String, String>) -> Check {
    match r {
        Ok(detail) => Check { name, outcome: Outcome::Pass, detail },
        Err(detail) => Check { name, outcome: Outcome::Fail, detail },
    }
}

fn skip(name: &'static str, why: &str) -> Check {
    Check {
        name,
        outcome: Outcome::Skip,
        detail: why.into(),
    }
}

fn expect_error(conn: &mut BackendConnection, req: Request, what: &str) -> Result<String, String> {
    match conn.exchange(req) {
        Ok(Response::Error { code, .. }) => Ok(format!("{what} rejected with `{code}`")),
        Ok(other) => Err(format!("{what} answered {other:?}")),
        Err(e) => Err(format!("{what}: {}", describe(&e))),
    }
}

fn expect_ok(conn: &mut BackendConnection, req: Request) -> Result<(), String> {
    match conn.exchange(req) {
        Ok(Response::Ok) => Ok(()),
        Ok(other) => Err(format!("expected ok, got {other:?}")),
        Err(e) => Err(describe(&e)),
    }
}

/// Runs every check against `conn`. Transport failures end the probe
/// early and are reported as a failed check.
pub fn check_backend(conn: &mut BackendConnection) -> ConformanceReport {
    let case = make_synthetic_case(Preset::TwoBars, 0);
    let frames = volume_to_frames(&case.volume, Window::default()).expect("synthetic case windows");
    let n = frames.len();
    let mut checks = Vec::new();

    let caps = conn.capabilities().clone();
    checks.push(result(
        "handshake",
        if caps.modes.is_empty() || caps.backend_id.is_empty() {
            Err(format!("capabilities {caps:?} lack modes or an id"))
        } else {
            Ok(format!("modes {}", caps.modes.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")))
        },
    ));

    if conn.supports(Mode::Image) {
        for scheme in [Scheme::Point, Scheme::Box] {
            let ps = build_prompts(&case.labels, scheme, None, BuildOptions::default()).expect("synthetic prompts");
            let anchor = n / 2;
            let prompts: Vec<_> = ps.on_slice(anchor).copied().collect();
            let want: BTreeSet<u8> = prompts.iter().map(|p| p.object_id()).collect();
            let name = if scheme == Scheme::Point { "image.points" } else { "image.boxes" };
            let r = conn.segment_image(&frames[anchor], &prompts);
            let transport = r.as_ref().is_err_and(WireError::is_transport);
            let r = r.map_err(|e| describe(&e)).and_then(|masks| {
                let got: BTreeSet<u8> = masks.keys().copied().collect();
                if got == want {
                    Ok(format!("{} frame-sized masks", masks.len()))
                } else {
                    Err(format!("masks for objects {got:?}, expected {want:?}"))
                }
            });
            checks.push(result(name, r));
            if transport {
                return ConformanceReport { backend_id: caps.backend_id, checks };
            }
        }
    } else {
        checks.push(skip("image.points", "backend has no image mode"));
        checks.push(skip("image.boxes", "backend has no image mode"));
    }

    if !conn.supports(Mode::Video) {
        for name in ["video.no_session", "video.no_prompts", "video.forward", "video.backward"] {
            checks.push(skip(name, "backend has no video mode"));
        }
        return finish(conn, caps.backend_id, checks);
    }

    checks.push(result(
        "video.no_session",
        expect_error(conn, Request::Propagate { direction: Direction::Forward }, "propagate outside a session"),
    ));

    let no_prompts = (|| {
        expect_ok(conn, Request::StartSession { n_frames: n })?;
        for (index, frame) in frames.iter().enumerate() {
            let mut wf = WireFrame::encode(frame);
            wf.index = Some(index);
            expect_ok(conn, Request::AppendFrame { index, frame: wf })?;
        }
        let r = expect_error(conn, Request::Propagate { direction: Direction::Forward }, "propagate before add_points");
        expect_ok(conn, Request::EndSession)?;
        r
    })();
    checks.push(result("video.no_prompts", no_prompts));

    let ps = build_prompts(&case.labels, Scheme::ThreePointVideo, Some(&case.aux), BuildOptions::default())
        .expect("synthetic prompts");
    let anchor = ps.anchor_slice.expect("video anchor");
    for direction in [Direction::Forward, Direction::Backward] {
        let name = if direction == Direction::Forward { "video.forward" } else { "video.backward" };
        let expected = direction.sequence(anchor, n);
        let r = conn
            .run_video_session(&frames, &ps, direction, None)
            .map_err(|e| describe(&e))
            .and_then(|got| {
                let order: Vec<usize> = got.iter().map(|f| f.frame).collect();
                if order == expected {
                    Ok(format!("{} frames from anchor {anchor}", order.len()))
                } else {
                    Err(format!("visited {order:?}, expected {expected:?}"))
                }
            });
        checks.push(result(name, r));
    }
    finish(conn, caps.backend_id, checks)
}

/// The error and all of its sources, joined.
fn describe(e: &WireError) -> String {
    let mut out = e.to_string();
    let mut next = std::error::Error::source(e);
    while let Some(s) = next {
        out.push_str(": ");
        out.push_str(&s.to_string());
        next = s.source();
    }
    out
}

fn finish(conn: &mut BackendConnection, backend_id: String, mut checks: Vec<Check>) -> ConformanceReport {
    checks.push(result(
        "drained",
        conn.ensure_drained().map(|_| "no stray messages".to_string()).map_err(|e| describe(&e)),
    ));
    ConformanceReport { backend_id, checks }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::refbackends::{GtEcho, RegionGrow, RegionGrowConfig};

    #[test]
    fn reference_backends_conform() {
        let case = make_synthetic_case(Preset::TwoBars, 0);
        let t = Duration::from_secs(10);
        let conns = [
            BackendConnection::in_process(GtEcho::new(case.labels.clone()), t).unwrap(),
            BackendConnection::in_process(RegionGrow::new(RegionGrowConfig::default()), t).unwrap(),
        ];
        for mut conn in conns {
            let report = check_backend(&mut conn);
            assert!(report.passed(), "{report}");
            assert_eq!(report.checks.len(), 8, "{report}");
            assert!(report.checks.iter().all(|c| c.outcome == Outcome::Pass), "{report}");
        }
    }
}
