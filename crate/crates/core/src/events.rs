//! Raw events, temporal splitting and voxel-grid encoding.

use std::fs;
use std::path::Path;

use egmr_autograd::Tensor;

use crate::error::{Error, Result};

/// Default number of temporal bins.
pub const DEFAULT_BINS: usize = 5;

/// A single brightness-change spike.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// −1 or +1.
    pub p: i8,
    /// Microseconds.
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, p: i8, t: u64) -> Self {
        Self { x, y, p, t }
    }
}

/// Events sorted by time inside a declared window `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    t_start: u64,
    t_end: u64,
    height: usize,
    width: usize,
}

impl EventStream {
    /// Validates polarity, bounds, ordering and the window.
    pub fn new(
        events: Vec<Event>,
        t_start: u64,
        t_end: u64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if t_end < t_start {
            return Err(Error::Parameter(format!(
                "window end {t_end} precedes start {t_start}"
            )));
        }
        let mut prev = t_start;
        for (i, e) in events.iter().enumerate() {
            if e.p != 1 && e.p != -1 {
                return Err(Error::Parameter(format!("event {i} has polarity {}", e.p)));
            }
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::CoordinateRange {
                    x: e.x as usize,
                    y: e.y as usize,
                    width,
                    height,
                });
            }
            if e.t < prev {
                return Err(Error::Parameter(format!(
                    "event {i} at t={} is out of order or before the window start",
                    e.t
                )));
            }
            if e.t > t_end {
                return Err(Error::Parameter(format!(
                    "event {i} at t={} is after the window end {t_end}",
                    e.t
                )));
            }
            prev = e.t;
        }
        Ok(Self {
            events,
            t_start,
            t_end,
            height,
            width,
        })
    }

    pub fn empty(t_start: u64, t_end: u64, height: usize, width: usize) -> Self {
        Self {
            events: Vec::new(),
            t_start,
            t_end,
            height,
            width,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_start(&self) -> u64 {
        self.t_start
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }

    /// Split time for a normalised `tau`, rounded down to whole microseconds.
    pub fn split_time(&self, tau: f64) -> u64 {
        let span = (self.t_end - self.t_start) as f64;
        self.t_start + (tau * span).floor() as u64
    }

    /// Splits at `tau` ∈ (0, 1). Events with `t <= t_split` go to the first
    /// segment, whose window is `[t_start, t_split]`; the rest go to the second
    /// with window `[t_split, t_end]`.
    pub fn split_at_tau(&self, tau: f64) -> Result<(EventStream, EventStream)> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Parameter(format!("tau {tau} outside (0, 1)")));
        }
        let t_split = self.split_time(tau);
        let cut = self.events.partition_point(|e| e.t <= t_split);
        let first = EventStream {
            events: self.events[..cut].to_vec(),
            t_start: self.t_start,
            t_end: t_split,
            height: self.height,
            width: self.width,
        };
        let second = EventStream {
            events: self.events[cut..].to_vec(),
            t_start: t_split,
            t_end: self.t_end,
            height: self.height,
            width: self.width,
        };
        Ok((first, second))
    }

    /// Applies a coordinate transform to every event, keeping timestamps.
    pub(crate) fn map_coords(
        &self,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> Option<(usize, usize)>,
    ) -> EventStream {
        let events = self
            .events
            .iter()
            .filter_map(|e| {
                f(e.x as usize, e.y as usize).map(|(x, y)| Event::new(x as u16, y as u16, e.p, e.t))
            })
            .collect();
        EventStream {
            events,
            t_start: self.t_start,
            t_end: self.t_end,
            height,
            width,
        }
    }
}

/// `B x H x W` signed event accumulation with a temporal hat kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    data: Vec<f32>,
    bins: usize,
    height: usize,
    width: usize,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self {
            data: vec![0.0; bins * height * width],
            bins,
            height,
            width,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, bin: usize, y: usize, x: usize) -> f32 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// `1 x B x H x W` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[1, self.bins, self.height, self.width], self.data.clone())
    }
}

/// Encodes `stream` into `bins` temporal bins.
///
/// Each event's polarity is split between its two nearest bins by
/// `max(0, 1 - |k - t_n|)` with `t_n = (t - t_start) / (t_end - t_start) * (B - 1)`.
/// A zero-length window puts every event in bin 0.
pub fn voxelize(stream: &EventStream, bins: usize, height: usize, width: usize) -> Result<VoxelGrid> {
    if bins < 2 {
        return Err(Error::Parameter(format!("voxel grid needs at least 2 bins, got {bins}")));
    }
    if stream.height != height || stream.width != width {
        return Err(Error::Shape(format!(
            "stream is {}x{}, grid requested {height}x{width}",
            stream.height, stream.width
        )));
    }
    let plane = height * width;
    let mut acc = vec![0.0f64; bins * plane];
    let span = (stream.t_end - stream.t_start) as f64;
    let last = (bins - 1) as f64;
    for e in &stream.events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::CoordinateRange { x, y, width, height });
        }
        let tn = if span > 0.0 {
            ((e.t - stream.t_start) as f64 / span * last).clamp(0.0, last)
        } else {
            0.0
        };
        let k0 = tn.floor() as usize;
        let frac = tn - k0 as f64;
        let p = e.p as f64;
        acc[k0 * plane + y * width + x] += p * (1.0 - frac);
        if frac > 0.0 && k0 + 1 < bins {
            acc[(k0 + 1) * plane + y * width + x] += p * frac;
        }
    }
    Ok(VoxelGrid {
        data: acc.into_iter().map(|v| v as f32).collect(),
        bins,
        height,
        width,
    })
}

const MAGIC: &[u8; 4] = b"EVT1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 13;

/// Serialises to the `EVT1` little-endian binary layout.
pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    let narrow = |v: u64, what: &str| {
        u32::try_from(v).map_err(|_| Error::Parameter(format!("{what} {v} does not fit in u32")))
    };
    let dim = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::Parameter(format!("{what} {v} does not fit in u16")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim(stream.width, "sensor width")?.to_le_bytes());
    out.extend_from_slice(&dim(stream.height, "sensor height")?.to_le_bytes());
    out.extend_from_slice(&narrow(stream.t_start, "t_start")?.to_le_bytes());
    out.extend_from_slice(&narrow(stream.t_end, "t_end")?.to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
        out.extend_from_slice(&e.t.to_le_bytes());
    }
    Ok(out)
}

/// Parses the `EVT1` layout, rejecting anything that violates stream invariants.
pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let fail = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("header needs {HEADER_LEN} bytes")));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected EVT1".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let width = u16_at(4) as usize;
    let height = u16_at(6) as usize;
    let t_start = u32_at(8) as u64;
    let t_end = u32_at(12) as u64;
    if t_end < t_start {
        return Err(fail(12, format!("t_end {t_end} before t_start {t_start}")));
    }
    let body = &bytes[HEADER_LEN..];
    let whole = body.len() / RECORD_LEN;
    if body.len() % RECORD_LEN != 0 {
        return Err(fail(
            HEADER_LEN + whole * RECORD_LEN,
            format!("truncated record ({} trailing bytes)", body.len() % RECORD_LEN),
        ));
    }
    let mut events = Vec::with_capacity(whole);
    let mut prev = t_start;
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let p = rec[4] as i8;
        let t = u64::from_le_bytes(rec[5..13].try_into().unwrap());
        if p != 1 && p != -1 {
            return Err(fail(offset + 4, format!("polarity {p} is not ±1")));
        }
        if x as usize >= width || y as usize >= height {
            return Err(fail(offset, format!("event ({x}, {y}) outside {width}x{height}")));
        }
        if t < prev {
            return Err(fail(offset + 5, format!("timestamp {t} breaks ordering (previous {prev})")));
        }
        if t > t_end {
            return Err(fail(offset + 5, format!("timestamp {t} after window end {t_end}")));
        }
        prev = t;
        events.push(Event { x, y, p, t });
    }
    Ok(EventStream {
        events,
        t_start,
        t_end,
        height,
        width,
    })
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_events(stream)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_events(&bytes)
}
