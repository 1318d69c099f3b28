//! Procedural tracking videos: one target and ten distractors that move,
//! change hue and evolve their shape, with start and goal markers.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::color;
use crate::error::{Error, Result};
use crate::math::{self, PI};
use crate::rng::{self, StreamRng};

pub const FRAMES: usize = 32;
pub const SIZE: usize = 32;
pub const DISTRACTORS: usize = 10;
pub const OBJECTS: usize = DISTRACTORS + 1;
/// Side of an object's shape grid and of a marker.
pub const GRID: usize = 5;
/// Object centres stay in `[MARGIN, SIZE − 1 − MARGIN]` so the stamp fits.
pub const MARGIN: f64 = 2.0;
pub const GREEN: f64 = 1.0 / 3.0;

pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_TARGET: u8 = 1;
pub const MASK_DISTRACTOR: u8 = 2;
pub const MASK_MARKER: u8 = 3;

pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

pub type ShapeGrid = [[bool; GRID]; GRID];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionTag {
    Train,
    OODColor,
    OODShape,
    OODBoth,
    FixedColor,
    FixedShape,
    FixedBoth,
    IrregularColor,
    IrregularPosition,
    IrregularBoth,
    Occlusion,
}

impl ConditionTag {
    pub const ALL: [ConditionTag; 11] = [
        ConditionTag::Train,
        ConditionTag::OODColor,
        ConditionTag::OODShape,
        ConditionTag::OODBoth,
        ConditionTag::FixedColor,
        ConditionTag::FixedShape,
        ConditionTag::FixedBoth,
        ConditionTag::IrregularColor,
        ConditionTag::IrregularPosition,
        ConditionTag::IrregularBoth,
        ConditionTag::Occlusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionTag::Train => "Train",
            ConditionTag::OODColor => "OODColor",
            ConditionTag::OODShape => "OODShape",
            ConditionTag::OODBoth => "OODBoth",
            ConditionTag::FixedColor => "FixedColor",
            ConditionTag::FixedShape => "FixedShape",
            ConditionTag::FixedBoth => "FixedBoth",
            ConditionTag::IrregularColor => "IrregularColor",
            ConditionTag::IrregularPosition => "IrregularPosition",
            ConditionTag::IrregularBoth => "IrregularBoth",
            ConditionTag::Occlusion => "Occlusion",
        }
    }

    /// Stable byte used in dataset files.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditionTag {
    type Err = Error;

    /// Case-insensitive; `-` and `_` are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| -> alloc::string::String {
            x.chars().filter(|c| *c != '-' && *c != '_').flat_map(char::to_lowercase).collect()
        };
        let key = norm(s);
        Self::ALL
            .iter()
            .copied()
            .find(|t| norm(t.name()) == key)
            .ok_or_else(|| Error::Config(alloc::format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HueRange {
    /// `[0, 0.5)`, seen in training.
    Lower,
    /// `[0.5, 1)`.
    Upper,
}

impl HueRange {
    pub fn start(self) -> f64 {
        match self {
            HueRange::Lower => 0.0,
            HueRange::Upper => 0.5,
        }
    }

    pub fn contains(self, h: f64) -> bool {
        h >= self.start() && h < self.start() + 0.5
    }

    /// Wraps `h` back into the half-spectrum.
    pub fn wrap(self, h: f64) -> f64 {
        let lo = self.start();
        let off = h - lo;
        let w = off - 0.5 * math::floor(off / 0.5);
        // guard against w == 0.5 from rounding
        if w >= 0.5 {
            lo
        } else {
            lo + w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeRule {
    Grow,
    Shrink,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorRule {
    Smooth,
    FrozenGreen,
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionRule {
    Smooth,
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcclusionPolicy {
    TargetOnTop,
    DistractorOnTop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub tag: ConditionTag,
    pub hue_range: HueRange,
    pub shape_rule: ShapeRule,
    pub color_rule: ColorRule,
    pub position_rule: PositionRule,
    pub occlusion: OcclusionPolicy,
}

impl Condition {
    pub fn new(tag: ConditionTag) -> Self {
        use ConditionTag as T;
        let mut c = Condition {
            tag,
            hue_range: HueRange::Lower,
            shape_rule: ShapeRule::Grow,
            color_rule: ColorRule::Smooth,
            position_rule: PositionRule::Smooth,
            occlusion: OcclusionPolicy::TargetOnTop,
        };
        match tag {
            T::Train => {}
            T::OODColor => c.hue_range = HueRange::Upper,
            T::OODShape => c.shape_rule = ShapeRule::Shrink,
            T::OODBoth => {
                c.hue_range = HueRange::Upper;
                c.shape_rule = ShapeRule::Shrink;
            }
            T::FixedColor => c.color_rule = ColorRule::FrozenGreen,
            T::FixedShape => c.shape_rule = ShapeRule::Frozen,
            T::FixedBoth => {
                c.color_rule = ColorRule::FrozenGreen;
                c.shape_rule = ShapeRule::Frozen;
            }
            T::IrregularColor => c.color_rule = ColorRule::Irregular,
            T::IrregularPosition => c.position_rule = PositionRule::Irregular,
            T::IrregularBoth => {
                c.color_rule = ColorRule::Irregular;
                c.position_rule = PositionRule::Irregular;
            }
            T::Occlusion => c.occlusion = OcclusionPolicy::DistractorOnTop,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_videos: usize,
    pub condition: Condition,
    /// Hue advance per frame for the smooth rule.
    pub hue_speed: f64,
    /// Bound of the per-frame hue step for the irregular rule.
    pub irregular_hue_step: f64,
    pub object_speed: f64,
    pub smooth_halfwidth: f64,
    pub irregular_halfwidth: f64,
    /// Probability that a cell of a fresh shape grid is active.
    pub shape_density: f64,
    pub min_marker_distance: f64,
    /// Minimum distance between the target's end point and the goal in
    /// negative videos.
    pub negative_goal_distance: f64,
    /// Minimum Chebyshev distance of distractor starts from the target start.
    pub distractor_clearance: f64,
    pub max_retries: usize,
}

impl GeneratorConfig {
    pub fn new(tag: ConditionTag, seed: u64, n_videos: usize) -> Self {
        Self {
            seed,
            n_videos,
            condition: Condition::new(tag),
            hue_speed: 0.01,
            irregular_hue_step: 0.05,
            object_speed: 1.0,
            smooth_halfwidth: PI / 8.0,
            irregular_halfwidth: PI / 2.0,
            shape_density: 0.4,
            min_marker_distance: 10.0,
            negative_goal_distance: 4.0,
            distractor_clearance: 6.0,
            max_retries: 1000,
        }
    }

    pub fn halfwidth(&self) -> f64 {
        match self.condition.position_rule {
            PositionRule::Smooth => self.smooth_halfwidth,
            PositionRule::Irregular => self.irregular_halfwidth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub hue: f64,
    pub shape: ShapeGrid,
    pub is_target: bool,
}

impl ObjectState {
    /// Integer pixel centre.
    pub fn center(&self) -> (i32, i32) {
        (math::round(self.x) as i32, math::round(self.y) as i32)
    }
}

/// Result of one motion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// The accepted turn, or `None` when the object stayed in place.
    pub turn: Option<f64>,
}

/// One motion step: a candidate turn is drawn from `U(−2w, 2w)`; when
/// `|turn| ≤ w` the object turns and advances `speed`, otherwise it stays.
/// Borders reflect position and heading.
pub fn step_position<R: Rng + ?Sized>(x: f64, y: f64, heading: f64, halfwidth: f64, speed: f64, rng: &mut R) -> Motion {
    let turn = if halfwidth > 0.0 { rng.random_range(-2.0 * halfwidth..2.0 * halfwidth) } else { 0.0 };
    if turn.abs() > halfwidth {
        return Motion { x, y, heading, turn: None };
    }
    let mut h = heading + turn;
    let mut nx = x + speed * math::cos(h);
    let mut ny = y + speed * math::sin(h);
    let hi = SIZE as f64 - 1.0 - MARGIN;
    if nx < MARGIN || nx > hi {
        nx = reflect(nx, MARGIN, hi);
        h = PI - h;
    }
    if ny < MARGIN || ny > hi {
        ny = reflect(ny, MARGIN, hi);
        h = -h;
    }
    Motion { x: nx, y: ny, heading: math::wrap_angle(h), turn: Some(turn) }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let r = if v < lo {
        2.0 * lo - v
    } else if v > hi {
        2.0 * hi - v
    } else {
        v
    };
    r.clamp(lo, hi)
}

/// Advances a hue under `rule`, keeping it inside `range`.
pub fn step_hue<R: Rng + ?Sized>(hue: f64, rule: ColorRule, range: HueRange, cfg: &GeneratorConfig, rng: &mut R) -> Result<f64> {
    if rule == ColorRule::FrozenGreen {
        return Ok(GREEN);
    }
    if !range.contains(hue) {
        return Err(Error::Generation(alloc::format!("hue {hue} outside {:?} half-spectrum", range)));
    }
    let delta = match rule {
        ColorRule::Smooth => cfg.hue_speed,
        ColorRule::Irregular => rng.random_range(-cfg.irregular_hue_step..=cfg.irregular_hue_step),
        ColorRule::FrozenGreen => unreachable!(),
    };
    Ok(range.wrap(hue + delta))
}

pub fn live_neighbors(g: &ShapeGrid, r: usize, c: usize) -> usize {
    let mut n = 0;
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (rr, cc) = (r as i32 + dr, c as i32 + dc);
            if (0..GRID as i32).contains(&rr) && (0..GRID as i32).contains(&cc) && g[rr as usize][cc as usize] {
                n += 1;
            }
        }
    }
    n
}

pub fn frozen_shape() -> ShapeGrid {
    let mut g = [[false; GRID]; GRID];
    for row in g.iter_mut().take(4).skip(1) {
        row[1..4].fill(true);
    }
    g
}

/// One shape update. Grow: dead cells with exactly three live neighbours
/// become alive. Shrink: live cells with fewer than two or more than three
/// live neighbours die. An empty result revives the centre cell.
pub fn step_shape(g: &ShapeGrid, rule: ShapeRule) -> ShapeGrid {
    let mut out = *g;
    match rule {
        ShapeRule::Frozen => return frozen_shape(),
        ShapeRule::Grow => {
            for r in 0..GRID {
                for c in 0..GRID {
                    if !g[r][c] && live_neighbors(g, r, c) == 3 {
                        out[r][c] = true;
                    }
                }
            }
        }
        ShapeRule::Shrink => {
            for r in 0..GRID {
                for c in 0..GRID {
                    let n = live_neighbors(g, r, c);
                    if g[r][c] && !(2..=3).contains(&n) {
                        out[r][c] = false;
                    }
                }
            }
        }
    }
    revive(out)
}

fn revive(mut g: ShapeGrid) -> ShapeGrid {
    if g.iter().all(|row| row.iter().all(|&c| !c)) {
        g[GRID / 2][GRID / 2] = true;
    }
    g
}

pub fn active_cells(g: &ShapeGrid) -> usize {
    g.iter().map(|r| r.iter().filter(|&&c| c).count()).sum()
}

fn random_shape<R: Rng + ?Sized>(rule: ShapeRule, density: f64, rng: &mut R) -> ShapeGrid {
    if rule == ShapeRule::Frozen {
        return frozen_shape();
    }
    let mut g = [[false; GRID]; GRID];
    for row in g.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.random_bool(density);
        }
    }
    revive(g)
}

/// Start (red) and goal (blue) marker centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Markers {
    pub start: (i32, i32),
    pub goal: (i32, i32),
}

/// Renders one frame; returns RGB bytes `[SIZE][SIZE][3]` and the group mask
/// `[SIZE][SIZE]`. `objects[0]` must be the target.
pub fn render_frame(objects: &[ObjectState], markers: &Markers, policy: OcclusionPolicy) -> (Vec<u8>, Vec<u8>) {
    let mut rgb = vec![0u8; SIZE * SIZE * 3];
    let mut mask = vec![MASK_BACKGROUND; SIZE * SIZE];
    let mut put = |x: i32, y: i32, col: [u8; 3], id: u8| {
        if (0..SIZE as i32).contains(&x) && (0..SIZE as i32).contains(&y) {
            let p = y as usize * SIZE + x as usize;
            rgb[p * 3..p * 3 + 3].copy_from_slice(&col);
            mask[p] = id;
        }
    };
    let half = (GRID / 2) as i32;
    for (centre, col) in [(markers.start, RED), (markers.goal, BLUE)] {
        for d in -half..=half {
            put(centre.0 + d, centre.1 - half, col, MASK_MARKER);
            put(centre.0 + d, centre.1 + half, col, MASK_MARKER);
            put(centre.0 - half, centre.1 + d, col, MASK_MARKER);
            put(centre.0 + half, centre.1 + d, col, MASK_MARKER);
        }
    }
    let order: Vec<usize> = match policy {
        OcclusionPolicy::TargetOnTop => (1..objects.len()).chain(core::iter::once(0)).collect(),
        OcclusionPolicy::DistractorOnTop => (0..objects.len()).collect(),
    };
    for i in order {
        let o = &objects[i];
        let col = color::hsv_to_rgb8(o.hue, 1.0, 1.0);
        let id = if o.is_target { MASK_TARGET } else { MASK_DISTRACTOR };
        let (cx, cy) = o.center();
        for (r, row) in o.shape.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if on {
                    put(cx + c as i32 - half, cy + r as i32 - half, col, id);
                }
            }
        }
    }
    (rgb, mask)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSample {
    /// `[FRAMES][SIZE][SIZE][3]` bytes.
    pub frames: Vec<u8>,
    pub label: u8,
    /// `[FRAMES][SIZE][SIZE]` group ids.
    pub masks: Vec<u8>,
}

impl VideoSample {
    pub const FRAME_BYTES: usize = FRAMES * SIZE * SIZE * 3;
    pub const MASK_BYTES: usize = FRAMES * SIZE * SIZE;

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.frames[t * SIZE * SIZE * 3..(t + 1) * SIZE * SIZE * 3]
    }

    pub fn mask(&self, t: usize) -> &[u8] {
        &self.masks[t * SIZE * SIZE..(t + 1) * SIZE * SIZE]
    }
}

/// Object states per frame (`states[t][0]` is the target) plus markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<Vec<ObjectState>>,
    pub markers: Markers,
}

/// Whether `p` lies inside the 5×5 square centred on `centre`.
pub fn in_square(p: (i32, i32), centre: (i32, i32)) -> bool {
    let half = (GRID / 2) as i32;
    (p.0 - centre.0).abs() <= half && (p.1 - centre.1).abs() <= half
}

fn dist(a: (i32, i32), b: (i32, i32)) -> f64 {
    math::hypot((a.0 - b.0) as f64, (a.1 - b.1) as f64)
}

fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

type Path = Vec<(f64, f64)>;

fn random_start<R: Rng + ?Sized>(rng: &mut R) -> (i32, i32) {
    let lo = MARGIN as i32;
    let hi = SIZE as i32 - 1 - MARGIN as i32;
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

fn walk<R: Rng + ?Sized>(start: (i32, i32), cfg: &GeneratorConfig, rng: &mut R) -> Path {
    let (mut x, mut y) = (start.0 as f64, start.1 as f64);
    let mut heading = rng.random_range(-PI..PI);
    let mut path = Vec::with_capacity(FRAMES);
    path.push((x, y));
    for _ in 1..FRAMES {
        let m = step_position(x, y, heading, cfg.halfwidth(), cfg.object_speed, rng);
        (x, y, heading) = (m.x, m.y, m.heading);
        path.push((x, y));
    }
    path
}

fn end_of(path: &Path) -> (i32, i32) {
    let (x, y) = path[FRAMES - 1];
    (math::round(x) as i32, math::round(y) as i32)
}

fn distractor_start<R: Rng + ?Sized>(target_start: (i32, i32), cfg: &GeneratorConfig, rng: &mut R) -> Result<(i32, i32)> {
    for _ in 0..cfg.max_retries {
        let s = random_start(rng);
        if chebyshev(s, target_start) as f64 >= cfg.distractor_clearance {
            return Ok(s);
        }
    }
    Err(Error::Generation("no distractor start clear of the target".into()))
}

/// Target path, distractor paths and markers for one video.
fn trajectories<R: Rng + ?Sized>(positive: bool, cfg: &GeneratorConfig, rng: &mut R) -> Result<(Path, Vec<Path>, Markers)> {
    for _ in 0..cfg.max_retries {
        let mut distractors = Vec::with_capacity(DISTRACTORS);
        let (target, markers) = if positive {
            let start = random_start(rng);
            let path = walk(start, cfg, rng);
            let goal = end_of(&path);
            if dist(start, goal) < cfg.min_marker_distance {
                continue;
            }
            (path, Markers { start, goal })
        } else {
            // a distractor reaches the goal; the target ends away from it
            let d_start = random_start(rng);
            let d_path = walk(d_start, cfg, rng);
            let goal = end_of(&d_path);
            let mut found = None;
            for _ in 0..cfg.max_retries {
                let start = random_start(rng);
                if dist(start, goal) < cfg.min_marker_distance
                    || (chebyshev(start, d_start) as f64) < cfg.distractor_clearance
                {
                    continue;
                }
                let path = walk(start, cfg, rng);
                if dist(end_of(&path), goal) >= cfg.negative_goal_distance {
                    found = Some((path, start));
                    break;
                }
            }
            let Some((path, start)) = found else { continue };
            distractors.push(d_path);
            (path, Markers { start, goal })
        };
        while distractors.len() < DISTRACTORS {
            let s = distractor_start(markers.start, cfg, rng)?;
            distractors.push(walk(s, cfg, rng));
        }
        return Ok((target, distractors, markers));
    }
    Err(Error::Generation(alloc::format!("no valid trajectory after {} attempts", cfg.max_retries)))
}

fn initial_hue<R: Rng + ?Sized>(cond: &Condition, rng: &mut R) -> f64 {
    match cond.color_rule {
        ColorRule::FrozenGreen => GREEN,
        _ => cond.hue_range.start() + rng.random_range(0.0..0.5),
    }
}

/// Generates video `index` of the stream defined by `cfg`. Even indices are
/// positives.
pub fn generate_video(cfg: &GeneratorConfig, index: u64) -> Result<(VideoSample, Trace)> {
    let mut rng: StreamRng = rng::stream(cfg.seed, index);
    let positive = index % 2 == 0;
    let cond = cfg.condition;
    let (target, distractors, markers) = trajectories(positive, cfg, &mut rng)?;
    // distractor order is shuffled so the goal-reaching one is not always first
    let mut paths: Vec<Path> = Vec::with_capacity(OBJECTS);
    paths.push(target);
    let mut ds = distractors;
    let pos = rng.random_range(0..ds.len());
    ds.swap(0, pos);
    paths.extend(ds);

    let mut objects: Vec<ObjectState> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| ObjectState {
            x: p[0].0,
            y: p[0].1,
            heading: 0.0,
            hue: initial_hue(&cond, &mut rng),
            shape: random_shape(cond.shape_rule, cfg.shape_density, &mut rng),
            is_target: i == 0,
        })
        .collect();

    let mut frames = Vec::with_capacity(VideoSample::FRAME_BYTES);
    let mut masks = Vec::with_capacity(VideoSample::MASK_BYTES);
    let mut states = Vec::with_capacity(FRAMES);
    for t in 0..FRAMES {
        if t > 0 {
            for (o, p) in objects.iter_mut().zip(&paths) {
                let (px, py) = p[t - 1];
                (o.x, o.y) = p[t];
                if (o.x, o.y) != (px, py) {
                    o.heading = math::atan2(o.y - py, o.x - px);
                }
                o.hue = step_hue(o.hue, cond.color_rule, cond.hue_range, cfg, &mut rng)?;
                o.shape = step_shape(&o.shape, cond.shape_rule);
            }
        }
        let (rgb, mask) = render_frame(&objects, &markers, cond.occlusion);
        frames.extend_from_slice(&rgb);
        masks.extend_from_slice(&mask);
        states.push(objects.clone());
    }
    let label = in_square(objects[0].center(), markers.goal) as u8;
    debug_assert_eq!(label == 1, positive);
    Ok((VideoSample { frames, label, masks }, Trace { states, markers }))
}

/// Videos `0..cfg.n_videos`.
pub fn generate_all(cfg: &GeneratorConfig) -> Result<Vec<VideoSample>> {
    (0..cfg.n_videos as u64).map(|i| generate_video(cfg, i).map(|(v, _)| v)).collect()
}
