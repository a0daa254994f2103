//! Message shapes. Every message is one JSON object per line carrying
//! `type` and `id`; the remaining keys are the message body.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::rle::RleMask;
use crate::prompts::{BoxGeometry, BoxPrompt, PointPrompt, Prompt, Sign};
use crate::volio::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Image,
    Video,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Image => "image",
            Mode::Video => "video",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(Mode::Image),
            "video" => Ok(Mode::Video),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Frame indices visited from `start` to the end in this direction.
    pub fn sequence(self, start: usize, n_frames: usize) -> Vec<usize> {
        match self {
            Direction::Forward => (start..n_frames).collect(),
            Direction::Backward => (0..=start.min(n_frames.saturating_sub(1))).rev().collect(),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// Grayscale frame on the wire. Pixels are the only base64 payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    /// Slice index; lets stateless backends locate the frame in a volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub w: usize,
    pub h: usize,
    pub b64: String,
}

impl WireFrame {
    pub fn encode(frame: &Frame) -> Self {
        Self {
            index: Some(frame.slice_index),
            w: frame.width,
            h: frame.height,
            b64: B64.encode(&frame.pixels),
        }
    }

    /// Decodes pixels; `index` overrides the carried index when given.
    pub fn decode(&self, index: Option<usize>) -> Result<Frame, String> {
        let pixels = B64
            .decode(&self.b64)
            .map_err(|e| format!("frame pixels: {e}"))?;
        let slice = index.or(self.index).unwrap_or(0);
        Frame::new(slice, self.w, self.h, pixels)
            .ok_or_else(|| format!("frame payload does not match {}×{}", self.w, self.h))
    }
}

/// A point with the promptable-segmentation label convention: 1 positive,
/// 0 negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: f64,
    pub y: f64,
    pub label: u8,
}

impl WirePoint {
    pub fn from_prompt(p: &PointPrompt) -> Self {
        Self {
            x: p.x,
            y: p.y,
            label: u8::from(p.sign == Sign::Positive),
        }
    }

    pub fn sign(&self) -> Sign {
        if self.label == 0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn to_prompt(self, slice_index: usize, object_id: u8) -> PointPrompt {
        PointPrompt {
            x: self.x,
            y: self.y,
            sign: self.sign(),
            slice_index,
            object_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WirePrompt {
    Point {
        object: u8,
        x: f64,
        y: f64,
        label: u8,
    },
    Box {
        object: u8,
        #[serde(rename = "box")]
        bbox: [f64; 4],
    },
}

impl WirePrompt {
    pub fn from_prompt(p: &Prompt) -> Self {
        match p {
            Prompt::Point(pt) => {
                let w = WirePoint::from_prompt(pt);
                WirePrompt::Point {
                    object: pt.object_id,
                    x: w.x,
                    y: w.y,
                    label: w.label,
                }
            }
            Prompt::Box(b) => WirePrompt::Box {
                object: b.object_id,
                bbox: b.geometry.as_array(),
            },
        }
    }

    pub fn object(&self) -> u8 {
        match *self {
            WirePrompt::Point { object, .. } | WirePrompt::Box { object, .. } => object,
        }
    }

    pub fn to_prompt(self, slice_index: usize) -> Prompt {
        match self {
            WirePrompt::Point { object, x, y, label } => {
                Prompt::Point(WirePoint { x, y, label }.to_prompt(slice_index, object))
            }
            WirePrompt::Box { object, bbox } => Prompt::Box(BoxPrompt {
                geometry: BoxGeometry {
                    x_min: bbox[0],
                    y_min: bbox[1],
                    x_max: bbox[2],
                    y_max: bbox[3],
                },
                slice_index,
                object_id: object,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub object_id: u8,
    pub rle: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello,
    SegmentImage {
        frame: WireFrame,
        prompts: Vec<WirePrompt>,
        objects: Vec<u8>,
    },
    StartSession {
        n_frames: usize,
    },
    AppendFrame {
        index: usize,
        frame: WireFrame,
    },
    AddPoints {
        frame: usize,
        object: u8,
        points: Vec<WirePoint>,
    },
    Propagate {
        direction: Direction,
    },
    EndSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Capabilities {
        modes: Vec<Mode>,
        backend_id: String,
    },
    Masks {
        masks: Vec<ObjectMask>,
    },
    Ok,
    Mask {
        frame: usize,
        object: u8,
        rle: RleMask,
    },
    Done,
    Error {
        code: String,
        text: String,
    },
}

impl Response {
    pub fn error(code: &str, text: impl Into<String>) -> Self {
        Response::Error {
            code: code.into(),
            text: text.into(),
        }
    }

    /// Whether this message ends the exchange for its request id.
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Response::Mask { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub id: u64,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_shape() {
        let line = Envelope { id: 1, body: Request::Hello }.to_line();
        assert_eq!(line, "{\"id\":1,\"type\":\"hello\"}\n");
        let back: Envelope<Request> = serde_json::from_str(&line).unwrap();
        assert_eq!(back.body, Request::Hello);
    }

    #[test]
    fn add_points_shape() {
        let msg = Envelope {
            id: 7,
            body: Request::AddPoints {
                frame: 8,
                object: 1,
                points: vec![WirePoint { x: 7.5, y: 11.5, label: 1 }, WirePoint { x: 2.0, y: 3.0, label: 0 }],
            },
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_line()).unwrap();
        assert_eq!(v["type"], "add_points");
        assert_eq!(v["points"][1]["label"], 0);
        let back: Envelope<Request> = serde_json::from_value(v).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn box_prompt_is_an_array() {
        let p = WirePrompt::Box { object: 2, bbox: [1.0, 2.0, 3.0, 4.0] };
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "box", "object": 2, "box": [1.0, 2.0, 3.0, 4.0]}));
    }

    #[test]
    fn frame_base64_round_trip() {
        let f = Frame::new(3, 2, 2, vec![0, 1, 254, 255]).unwrap();
        let w = WireFrame::encode(&f);
        assert_eq!(w.b64, "AAH+/w==");
        assert_eq!(w.decode(None).unwrap(), f);
        assert!(WireFrame { w: 3, ..w.clone() }.decode(None).is_err());
    }

    #[test]
    fn error_response_shape() {
        let e = Envelope { id: 4, body: Response::error("no_prompts", "nothing to do") };
        assert_eq!(
            e.to_line(),
            "{\"id\":4,\"type\":\"error\",\"code\":\"no_prompts\",\"text\":\"nothing to do\"}\n"
        );
    }

    #[test]
    fn direction_sequences() {
        assert_eq!(Direction::Forward.sequence(8, 16), (8..16).collect::<Vec<_>>());
        assert_eq!(Direction::Backward.sequence(8, 16), (0..=8).rev().collect::<Vec<_>>());
        assert_eq!(Direction::Backward.sequence(0, 1), vec![0]);
        assert_eq!(Direction::Forward.sequence(0, 1), vec![0]);
    }
}
