//! Synthetic rectified stereo event scenes with dense ground truth.
//!
//! Each view renders a stack of textured layers in log intensity at a fixed
//! internal rate. A pixel emits one event per threshold crossing of its
//! log intensity relative to a reference level that moves by one threshold
//! per event. Event times are placed by linear interpolation inside the
//! rendering step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::events::{Event, EventStream};
use crate::io::DisparityImage;

/// A band-limited texture: a sum of oriented sinusoids.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    /// `(amplitude, fx, fy, phase)` with frequencies in cycles per pixel.
    pub waves: Vec<(f64, f64, f64, f64)>,
    pub offset: f64,
}

impl Texture {
    pub fn random(rng: &mut ChaCha8Rng, waves: usize) -> Self {
        let waves = (0..waves)
            .map(|_| {
                let f = rng.random_range(0.06..0.22);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                (
                    rng.random_range(0.2..0.5),
                    f * angle.cos(),
                    f * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self {
            waves,
            offset: rng.random_range(-0.5..0.5),
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.offset
            + self
                .waves
                .iter()
                .map(|&(a, fx, fy, ph)| a * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin())
                .sum::<f64>()
    }
}

/// A textured layer at constant disparity translating at constant velocity.
/// `rect` is `(x0, y0, w, h)` in left-view pixels at `t = 0`; `None`
/// covers the whole plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rect: Option<(f64, f64, f64, f64)>,
    pub disparity: f64,
    /// Pixels per second.
    pub velocity: (f64, f64),
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Back to front; the first layer should cover the plane.
    pub layers: Vec<Layer>,
    pub duration_us: u64,
    pub threshold: f64,
    pub d_max: f64,
    pub rate_hz: u64,
    /// Standard deviation of per-pixel threshold mismatch; 0 disables it.
    pub threshold_jitter: f64,
    pub seed: u64,
}

pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub d_max: f64,
    pub duration_us: u64,
    pub threshold: f64,
    pub foreground_layers: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            d_max: 24.0,
            duration_us: 50_000,
            threshold: 0.15,
            foreground_layers: 2,
        }
    }
}

fn random_velocity(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let speed = rng.random_range(30.0..80.0);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    (speed * angle.cos(), speed * angle.sin())
}

impl SceneSpec {
    /// A random scene: a full-frame background at disparity 2–6 and
    /// rectangular foreground layers at 10–20 (clamped to `d_max`), all
    /// moving at 30–80 px/s.
    pub fn random(cfg: &SceneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let mut layers = vec![Layer {
            rect: None,
            disparity: rng.random_range(2.0..6.0f64).min(cfg.d_max),
            velocity: random_velocity(&mut rng),
            texture: Texture::random(&mut rng, 4),
        }];
        for _ in 0..cfg.foreground_layers {
            let (lw, lh) = (rng.random_range(0.2..0.45) * w, rng.random_range(0.25..0.5) * h);
            layers.push(Layer {
                rect: Some((rng.random_range(0.1 * w..0.9 * w - lw), rng.random_range(0.0..h - lh), lw, lh)),
                disparity: rng.random_range(10.0..20.0f64).min(cfg.d_max),
                velocity: random_velocity(&mut rng),
                texture: Texture::random(&mut rng, 3),
            });
        }
        Self {
            width: cfg.width,
            height: cfg.height,
            layers,
            duration_us: cfg.duration_us,
            threshold: cfg.threshold,
            d_max: cfg.d_max,
            rate_hz: 1000,
            threshold_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 1 << 16 || self.height > 1 << 16 {
            return Err(arg_err("synth_scene", format!("unsupported size {}x{}", self.width, self.height)));
        }
        if self.layers.is_empty() {
            return Err(arg_err("synth_scene", "scene has no layers"));
        }
        if let Some(l) = self.layers.iter().find(|l| !(0.0..=self.d_max).contains(&l.disparity)) {
            return Err(arg_err("synth_scene", format!("layer disparity {} outside [0, {}]", l.disparity, self.d_max)));
        }
        if !(self.threshold > 0.0) {
            return Err(arg_err("synth_scene", "contrast threshold must be positive"));
        }
        if self.rate_hz == 0 || 1_000_000 % self.rate_hz != 0 {
            return Err(arg_err("synth_scene", "rendering rate must divide 1 MHz"));
        }
        Ok(())
    }

    /// Index of the front-most layer covering pixel `(x, y)` of a view
    /// at `t_s`, with its texture coordinates.
    fn layer_at(&self, x: f64, y: f64, t_s: f64, right: bool) -> Option<(usize, f64, f64)> {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let xl = if right { x + l.disparity } else { x };
            let (u, v) = (xl - l.velocity.0 * t_s, y - l.velocity.1 * t_s);
            let inside = match l.rect {
                None => true,
                Some((x0, y0, w, h)) => u >= x0 && u < x0 + w && v >= y0 && v < y0 + h,
            };
            if inside {
                return Some((i, u, v));
            }
        }
        None
    }

    /// Log intensity of a view at pixel centre `(x, y)` and time `t_s`.
    pub fn log_intensity(&self, x: usize, y: usize, t_s: f64, right: bool) -> f64 {
        match self.layer_at(x as f64, y as f64, t_s, right) {
            Some((i, u, v)) => self.layers[i].texture.eval(u, v),
            None => 0.0,
        }
    }

    /// Left-view disparity of the front-most layer at `t_s`; 0 and invalid
    /// where nothing is visible.
    pub fn ground_truth(&self, t_s: f64) -> DisparityImage {
        let (w, h) = (self.width, self.height);
        let mut values = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if let Some((i, _, _)) = self.layer_at(x as f64, y as f64, t_s, false) {
                    values[y * w + x] = self.layers[i].disparity;
                    valid[y * w + x] = true;
                }
            }
        }
        DisparityImage {
            width: w,
            height: h,
            values,
            valid,
        }
    }
}

/// Integrate-and-fire over a sampled log-intensity trace: one event per
/// crossing of `reference ± threshold`, with `reference` moving one
/// threshold per event. Returns `(t_µs, polarity)` pairs and the final
/// reference level.
pub fn integrate_pixel(levels: &[f64], times_us: &[u64], threshold: f64) -> (Vec<(u64, i8)>, f64) {
    let mut out = Vec::new();
    let Some(&first) = levels.first() else {
        return (out, 0.0);
    };
    let mut reference = first;
    for k in 1..levels.len() {
        let (a, b) = (levels[k - 1], levels[k]);
        let (t0, t1) = (times_us[k - 1], times_us[k]);
        let place = |level: f64| {
            let frac = if b != a { ((level - a) / (b - a)).clamp(0.0, 1.0) } else { 1.0 };
            t0 + (frac * (t1 - t0) as f64).round() as u64
        };
        while b - reference >= threshold {
            reference += threshold;
            out.push((place(reference), 1));
        }
        while reference - b >= threshold {
            reference -= threshold;
            out.push((place(reference), -1));
        }
    }
    (out, reference)
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub left: EventStream,
    pub right: EventStream,
    /// Left-view disparity at the end of the recording.
    pub gt: DisparityImage,
}

fn render_view(spec: &SceneSpec, right: bool, thresholds: &[f64]) -> Result<EventStream> {
    let (w, h) = (spec.width, spec.height);
    let step = 1_000_000 / spec.rate_hz;
    let steps = (spec.duration_us / step) as usize;
    let times: Vec<u64> = (0..=steps).map(|k| k as u64 * step).collect();
    let mut events = Vec::new();
    let mut trace = vec![0.0; steps + 1];
    for y in 0..h {
        for x in 0..w {
            for (k, &t) in times.iter().enumerate() {
                trace[k] = spec.log_intensity(x, y, t as f64 * 1e-6, right);
            }
            let (fired, _) = integrate_pixel(&trace, &times, thresholds[y * w + x]);
            events.extend(fired.into_iter().map(|(t, p)| Event::new(x as u16, y as u16, t, p)));
        }
    }
    // stable: events of one pixel keep their firing order
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventStream::new(w, h, events)
}

/// Renders both views. Identical specs give identical output.
pub fn synth_scene(spec: &SceneSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let n = spec.width * spec.height;
    let thresholds: Vec<f64> = if spec.threshold_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7468_7265_7368);
        let normal = Normal::new(spec.threshold, spec.threshold_jitter).map_err(|e| arg_err("synth_scene", e.to_string()))?;
        (0..n).map(|_| normal.sample(&mut rng).max(0.1 * spec.threshold)).collect()
    } else {
        vec![spec.threshold; n]
    };
    Ok(SyntheticPair {
        left: render_view(spec, false, &thresholds)?,
        right: render_view(spec, true, &thresholds)?,
        gt: spec.ground_truth(spec.duration_us as f64 * 1e-6),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::encode_events;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec::random(
            &SceneConfig {
                width: 48,
                height: 24,
                duration_us: 20_000,
                ..SceneConfig::default()
            },
            seed,
        )
    }

    #[test]
    fn trigger_model_cases() {
        let c = 0.15;
        let (ev, r) = integrate_pixel(&[0.0, c], &[0, 1000], c);
        assert_eq!(ev, vec![(1000, 1)]);
        assert_eq!(r, c);

        let (ev, r) = integrate_pixel(&[1.0, 1.0 + 2.5 * c], &[0, 1000], c);
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|&(_, p)| p == 1));
        assert!((r - (1.0 + 2.0 * c)).abs() < 1e-12);
        assert_eq!(ev[0].0, 400);
        assert_eq!(ev[1].0, 800);

        let (ev, _) = integrate_pixel(&[0.0, -0.31, -0.31], &[0, 1000, 2000], c);
        assert_eq!(ev.iter().map(|e| e.1).collect::<Vec<_>>(), vec![-1, -1]);

        let (ev, _) = integrate_pixel(&[0.0, 0.1, 0.0, 0.1], &[0, 1, 2, 3], c);
        assert!(ev.is_empty());
    }

    #[test]
    fn static_scene_is_silent() {
        let mut s = small(1);
        for l in &mut s.layers {
            l.velocity = (0.0, 0.0);
        }
        let pair = synth_scene(&s).unwrap();
        assert!(pair.left.is_empty() && pair.right.is_empty());
    }

    #[test]
    fn moving_scene_fires_and_is_deterministic() {
        let s = small(2);
        let a = synth_scene(&s).unwrap();
        let b = synth_scene(&s).unwrap();
        assert!(a.left.len() > 1000, "{}", a.left.len());
        assert_eq!(encode_events(&a.left), encode_events(&b.left));
        assert_eq!(encode_events(&a.right), encode_events(&b.right));
        assert_eq!(a.gt, b.gt);
        assert_ne!(encode_events(&synth_scene(&small(3)).unwrap().left), encode_events(&a.left));
    }

    #[test]
    fn single_layer_rows_match_and_gt_is_constant() {
        let mut s = small(4);
        s.layers.truncate(1);
        s.layers[0].disparity = 4.0;
        let pair = synth_scene(&s).unwrap();
        assert!(pair.gt.values.iter().all(|&d| d == 4.0));
        assert!(pair.gt.valid.iter().all(|&v| v));
        let (w, h, d) = (s.width, s.height, 4usize);
        for y in 0..h {
            let l = pair.left.events().iter().filter(|e| e.y as usize == y && e.x as usize >= d).count();
            let r = pair.right.events().iter().filter(|e| e.y as usize == y && (e.x as usize) < w - d).count();
            assert_eq!(l, r, "row {y}");
        }
    }

    #[test]
    fn ground_truth_follows_occlusion_order() {
        let s = small(5);
        let gt = s.ground_truth(s.duration_us as f64 * 1e-6);
        let front = s.layers.last().unwrap().disparity;
        assert!(gt.values.iter().any(|&d| d == front));
        assert!(gt.values.iter().any(|&d| d == s.layers[0].disparity));
        for v in &gt.values {
            assert!(s.layers.iter().any(|l| l.disparity == *v));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(6);
        s.layers[0].disparity = 99.0;
        assert!(synth_scene(&s).is_err());
        let mut s = small(6);
        s.threshold = 0.0;
        assert!(synth_scene(&s).is_err());
    }

    #[test]
    fn jitter_changes_events_deterministically() {
        let mut s = small(7);
        s.threshold_jitter = 0.03;
        let a = synth_scene(&s).unwrap();
        assert_eq!(encode_events(&a.left), encode_events(&synth_scene(&s).unwrap().left));
        assert_ne!(encode_events(&a.left), encode_events(&synth_scene(&small(7)).unwrap().left));
    }
}
