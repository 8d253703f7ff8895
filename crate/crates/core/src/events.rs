//! Event streams and the two dense representations derived from them:
//! mixed-density event stacks and motion confidence maps.

use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    /// +1 or -1.
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-ordered events of one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates geometry, polarity and time order.
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1 {
            return Err(Error::InvalidEvents(format!("unsupported sensor size {width}x{height}")));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x as usize >= width || e.y as usize >= height {
                return Err(Error::InvalidEvents(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::InvalidEvents(format!("event {i} has polarity {}", e.p)));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::InvalidEvents(format!(
                    "event {i} at t={} precedes t={}",
                    e.t,
                    events[i - 1].t
                )));
            }
        }
        Ok(Self { width, height, events })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    /// The most recent `n` events (all of them if fewer).
    pub fn tail(&self, n: usize) -> EventStream {
        let start = self.events.len().saturating_sub(n);
        Self {
            width: self.width,
            height: self.height,
            events: self.events[start..].to_vec(),
        }
    }

    pub fn t_range(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }
}

/// Polarity sums over nested windows of the most recent events, stored as
/// `[L, H, W]`.
#[derive(Debug, Clone)]
pub struct Mes {
    pub data: Tensor,
    pub n_e: usize,
    pub l_channels: usize,
}

/// Number of events feeding channel `l`.
pub fn mes_window(available: usize, n_e: usize, l: usize) -> usize {
    available.min(n_e) >> l
}

pub fn build_mes(stream: &EventStream, n_e: usize, l_channels: usize) -> Result<Mes> {
    if l_channels < 1 || n_e < 1 {
        return Err(arg_err("build_mes", format!("n_e = {n_e}, L = {l_channels}")));
    }
    if l_channels > 63 || n_e < 1usize << (l_channels - 1) {
        return Err(arg_err(
            "build_mes",
            format!("n_e = {n_e} cannot be halved {} times", l_channels - 1),
        ));
    }
    let (w, h) = (stream.width, stream.height);
    let ev = &stream.events;
    let mut data = vec![0.0; l_channels * h * w];
    // Windows are nested suffixes, so walking from the newest event backwards
    // adds each event to every channel whose window still covers it.
    let sizes: Vec<usize> = (0..l_channels).map(|l| mes_window(ev.len(), n_e, l)).collect();
    for (age, e) in ev.iter().rev().enumerate() {
        if age >= sizes[0] {
            break;
        }
        let px = e.y as usize * w + e.x as usize;
        for (l, &size) in sizes.iter().enumerate() {
            if age < size {
                data[l * h * w + px] += e.p as f64;
            }
        }
    }
    Ok(Mes {
        data: Tensor::new(data, &[l_channels, h, w])?,
        n_e,
        l_channels,
    })
}

/// Per-pixel exponential recency of the latest event, in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MotionConfidence {
    /// `[H, W]`.
    pub data: Tensor,
    pub tau: f64,
    pub t_max: u64,
}

/// A third of the time span of the most recent `n_e` events, or 1 µs for
/// degenerate spans.
pub fn default_tau(stream: &EventStream, n_e: usize) -> f64 {
    match stream.tail(n_e).t_range() {
        Some((a, b)) if b > a => (b - a) as f64 / 3.0,
        _ => 1.0,
    }
}

pub fn build_motion_confidence(stream: &EventStream, tau: f64) -> Result<MotionConfidence> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(arg_err("build_motion_confidence", format!("tau = {tau}")));
    }
    let (w, h) = (stream.width, stream.height);
    let mut latest: Vec<Option<u64>> = vec![None; h * w];
    for e in &stream.events {
        latest[e.y as usize * w + e.x as usize] = Some(e.t);
    }
    let t_max = stream.events.last().map_or(0, |e| e.t);
    let data = latest
        .iter()
        .map(|t| t.map_or(0.0, |t| (-((t_max - t) as f64) / tau).exp()))
        .collect();
    Ok(MotionConfidence {
        data: Tensor::new(data, &[h, w])?,
        tau,
        t_max,
    })
}
