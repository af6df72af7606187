//! Deterministic 2D contact-rich simulator: a disc end-effector in a unit
//! workspace, penalty-spring contacts against axis-aligned fixtures, three
//! task analogs (wipe / press / insert), scripted experts, a drift-plus-white
//! force-sensor noise model, and demonstration generation.

pub mod dataset;
pub mod expert;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

/// Physics and sensor constants. One instance is shared by data generation,
/// training-time replay and evaluation, and is persisted in dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Integration step, seconds.
    pub dt: f64,
    /// Contact spring stiffness, N/m.
    pub spring_k: f64,
    /// Contact damping on the approach rate, N·s/m.
    pub damping_c: f64,
    /// Viscous tangential friction, N·s/m.
    pub tangential_c: f64,
    /// Coulomb cap: |tangential| <= mu * normal.
    pub friction_mu: f64,
    /// Velocity-command tracking gain, 1/s. Also acts as free-space drag.
    pub drag: f64,
    /// Per-dimension position command bound, m per step.
    pub max_step: f64,
    /// End-effector disc radius, m.
    pub ee_radius: f64,
    /// Hard episode length cap.
    pub episode_cap: usize,
    /// White (high-frequency) sensor noise std, N.
    pub noise_hf: f64,
    /// Random-walk (low-frequency drift) increment std, N per step.
    pub noise_lf: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.05,
            spring_k: 100.0,
            damping_c: 5.0,
            tangential_c: 4.0,
            friction_mu: 0.8,
            drag: 10.0,
            max_step: 0.02,
            ee_radius: 0.03,
            episode_cap: 200,
            noise_hf: 0.2,
            noise_lf: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Wipe,
    Press,
    Insert,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Wipe, Task::Press, Task::Insert];

    pub fn instruction(self) -> &'static str {
        match self {
            Task::Wipe => "wipe the whiteboard",
            Task::Press => "press the emergency button",
            Task::Insert => "insert the plug",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Wipe => "wipe",
            Task::Press => "press",
            Task::Insert => "insert",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "wipe" => Ok(Task::Wipe),
            "press" => Ok(Task::Press),
            "insert" => Ok(Task::Insert),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Number of mark cells on the whiteboard band.
pub const WIPE_CELLS: usize = 24;
/// Mark band extent along x.
pub const WIPE_BAND: (f64, f64) = (0.25, 0.75);
/// Board extent along x.
pub const WIPE_BOARD_X: (f64, f64) = (0.10, 0.90);
/// Board thickness.
pub const WIPE_BOARD_T: f64 = 0.08;
/// Button half-width.
pub const PRESS_HALF_W: f64 = 0.08;
/// Button base height.
pub const PRESS_BASE_Y: f64 = 0.10;
/// Max button travel; depression saturates here.
pub const PRESS_MAX_DEP: f64 = 0.03;
/// Depression at which the button latches.
pub const PRESS_LATCH: f64 = 0.02;
/// Socket opening height.
pub const INSERT_OPEN_Y: f64 = 0.40;
/// Socket floor height.
pub const INSERT_BOTTOM_Y: f64 = 0.22;
/// Slot half-gap; clearance around the disc is HALF_GAP - ee_radius.
pub const INSERT_HALF_GAP: f64 = 0.045;
/// Wall thickness on each side of the slot.
pub const INSERT_WALL_W: f64 = 0.08;
/// Insertion tolerance: success needs depth >= full depth - this.
pub const INSERT_TOL: f64 = 0.01;
/// Wipe success threshold on the wiped fraction.
pub const WIPE_SUCCESS_FRACTION: f64 = 0.99;
/// Erasing needs pressure inside this normal-force window, N: too light
/// leaves marks, too hard skids over them.
pub const WIPE_FORCE_WINDOW: (f64, f64) = (0.6, 2.8);
/// Press latches only after this many consecutive steps at latch depth.
pub const PRESS_HOLD_STEPS: usize = 10;

/// Per-episode fixture placement, sampled once at reset. The whiteboard
/// hangs on a slightly wavy mount, so its contact surface is a sinusoid in x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Wipe {
        surface_y: f64,
        wave_amp: f64,
        wave_freq: f64,
        wave_phase: f64,
    },
    Press { center_x: f64, top_y: f64 },
    Insert { center_x: f64 },
}

impl Geometry {
    pub fn sample(task: Task, rng: &mut RngStream) -> Geometry {
        match task {
            Task::Wipe => Geometry::Wipe {
                surface_y: rng.uniform_in(0.64, 0.76),
                wave_amp: rng.uniform_in(0.005, 0.011),
                wave_freq: rng.uniform_in(2.0, 4.0),
                wave_phase: rng.uniform_in(0.0, std::f64::consts::TAU),
            },
            Task::Press => Geometry::Press {
                center_x: rng.uniform_in(0.35, 0.65),
                top_y: rng.uniform_in(0.26, 0.34),
            },
            Task::Insert => Geometry::Insert {
                center_x: rng.uniform_in(0.35, 0.65),
            },
        }
    }

    /// Local board-surface height for the wipe task.
    pub fn wipe_surface_at(&self, x: f64) -> f64 {
        match *self {
            Geometry::Wipe {
                surface_y,
                wave_amp,
                wave_freq,
                wave_phase,
            } => surface_y + wave_amp * (std::f64::consts::TAU * wave_freq * x + wave_phase).sin(),
            _ => f64::NAN,
        }
    }

    pub fn to_params(self) -> Vec<f64> {
        match self {
            Geometry::Wipe {
                surface_y,
                wave_amp,
                wave_freq,
                wave_phase,
            } => vec![surface_y, wave_amp, wave_freq, wave_phase],
            Geometry::Press { center_x, top_y } => vec![center_x, top_y],
            Geometry::Insert { center_x } => vec![center_x],
        }
    }

    pub fn from_params(task: Task, params: &[f64]) -> Result<Geometry> {
        match (task, params) {
            (Task::Wipe, [s, a, f, p]) => Ok(Geometry::Wipe {
                surface_y: *s,
                wave_amp: *a,
                wave_freq: *f,
                wave_phase: *p,
            }),
            (Task::Press, [cx, ty]) => Ok(Geometry::Press {
                center_x: *cx,
                top_y: *ty,
            }),
            (Task::Insert, [cx]) => Ok(Geometry::Insert { center_x: *cx }),
            _ => Err(Error::Format(format!(
                "geometry params {params:?} do not fit task {}",
                task.name()
            ))),
        }
    }
}

/// Visual-only decoy rectangle: rendered into the fixture channel, never
/// touched by the contact model. Stands in for scene clutter and stains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub value: f64,
}

fn sample_clutter(task: Task, geometry: &Geometry, rng: &mut RngStream) -> Vec<ClutterRect> {
    let count = 3 + rng.index(4);
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        // horizontal strips that mimic fixture edges
        let w = rng.uniform_in(0.08, 0.30);
        let h = rng.uniform_in(0.012, 0.035);
        let x0 = rng.uniform_in(0.02, 0.95 - w);
        let y_hi = match (task, geometry) {
            // decoys may reach right up under the true board surface
            (Task::Wipe, Geometry::Wipe { surface_y, .. }) => surface_y - 0.02,
            _ => 0.92,
        };
        let y0 = rng.uniform_in(0.05, (y_hi - h).max(0.06));
        let value = rng.uniform_in(0.55, 1.0);
        rects.push(ClutterRect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
            value,
        });
    }
    rects
}

/// Axis-aligned fixture box.
#[derive(Debug, Clone, Copy)]
pub struct FixtureBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub kind: FixtureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Board,
    Button,
    Wall,
    Floor,
}

/// Complete simulator state: everything the dynamics and renderer read.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub task: Task,
    pub geometry: Geometry,
    pub clutter: Vec<ClutterRect>,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub tool: f64,
    /// Wipe: per-cell erased flags.
    pub wiped: Vec<bool>,
    /// Press: maximum depression reached, m (non-decreasing).
    pub depression: f64,
    /// Press: consecutive steps at or beyond the latch depth.
    pub hold_steps: usize,
    pub latched: bool,
    /// Insert: current insertion depth, m.
    pub depth: f64,
    pub steps: usize,
}

/// Clean wrench (F_x, F_y, torque) plus the contacting fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForce {
    pub clean: [f64; 3],
    pub contacts: Vec<(FixtureKind, f64)>,
}

impl ContactForce {
    pub fn in_contact(&self) -> bool {
        !self.contacts.is_empty()
    }

    pub fn magnitude(&self) -> f64 {
        (self.clean[0] * self.clean[0] + self.clean[1] * self.clean[1]).sqrt()
    }
}

impl WorldState {
    /// Fresh episode: geometry and start pose drawn from the episode stream.
    pub fn init(task: Task, rng: &mut RngStream) -> WorldState {
        let geometry = Geometry::sample(task, rng);
        let clutter = sample_clutter(task, &geometry, rng);
        let pos = match task {
            Task::Wipe => [rng.uniform_in(0.15, 0.50), rng.uniform_in(0.25, 0.45)],
            Task::Press => [rng.uniform_in(0.25, 0.75), rng.uniform_in(0.62, 0.82)],
            Task::Insert => [rng.uniform_in(0.25, 0.75), rng.uniform_in(0.65, 0.85)],
        };
        WorldState {
            task,
            geometry,
            clutter,
            pos,
            vel: [0.0, 0.0],
            tool: 0.0,
            wiped: vec![false; if task == Task::Wipe { WIPE_CELLS } else { 0 }],
            depression: 0.0,
            hold_steps: 0,
            latched: false,
            depth: 0.0,
            steps: 0,
        }
    }

    /// The proprioceptive vector fed to the policy: position, velocity, tool.
    pub fn state_vector(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.tool]
    }

    pub fn fixtures(&self) -> Vec<FixtureBox> {
        match self.geometry {
            // the wipe board is a wavy surface, not a box; its contact is
            // handled directly in contact_wrench
            Geometry::Wipe { .. } => Vec::new(),
            Geometry::Press { center_x, top_y } => vec![FixtureBox {
                x0: center_x - PRESS_HALF_W,
                y0: PRESS_BASE_Y,
                x1: center_x + PRESS_HALF_W,
                y1: top_y,
                kind: FixtureKind::Button,
            }],
            Geometry::Insert { center_x } => {
                let hg = INSERT_HALF_GAP;
                let w = INSERT_WALL_W;
                vec![
                    FixtureBox {
                        x0: center_x - hg - w,
                        y0: PRESS_BASE_Y,
                        x1: center_x - hg,
                        y1: INSERT_OPEN_Y,
                        kind: FixtureKind::Wall,
                    },
                    FixtureBox {
                        x0: center_x + hg,
                        y0: PRESS_BASE_Y,
                        x1: center_x + hg + w,
                        y1: INSERT_OPEN_Y,
                        kind: FixtureKind::Wall,
                    },
                    FixtureBox {
                        x0: center_x - hg - w,
                        y0: PRESS_BASE_Y,
                        x1: center_x + hg + w,
                        y1: INSERT_BOTTOM_Y,
                        kind: FixtureKind::Floor,
                    },
                ]
            }
        }
    }

    pub fn wiped_fraction(&self) -> f64 {
        if self.wiped.is_empty() {
            return 0.0;
        }
        self.wiped.iter().filter(|&&w| w).count() as f64 / self.wiped.len() as f64
    }

    pub fn wipe_cell_center(i: usize) -> f64 {
        let (a, b) = WIPE_BAND;
        a + (i as f64 + 0.5) * (b - a) / WIPE_CELLS as f64
    }
}

fn circle_box_penetration(
    pos: [f64; 2],
    radius: f64,
    fixture: &FixtureBox,
) -> Option<([f64; 2], f64)> {
    let cx = pos[0].clamp(fixture.x0, fixture.x1);
    let cy = pos[1].clamp(fixture.y0, fixture.y1);
    let dx = pos[0] - cx;
    let dy = pos[1] - cy;
    let dist2 = dx * dx + dy * dy;
    if dist2 >= radius * radius {
        return None;
    }
    if dist2 > 1e-16 {
        let dist = dist2.sqrt();
        Some(([dx / dist, dy / dist], radius - dist))
    } else {
        // center inside the box: push out along the nearest face
        let faces = [
            (pos[0] - fixture.x0, [-1.0, 0.0]),
            (fixture.x1 - pos[0], [1.0, 0.0]),
            (pos[1] - fixture.y0, [0.0, -1.0]),
            (fixture.y1 - pos[1], [0.0, 1.0]),
        ];
        let (depth, normal) = faces
            .iter()
            .cloned()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .unwrap();
        Some((normal, radius + depth))
    }
}

/// Clean contact wrench at the given state: penalty-spring normal with
/// approach damping, capped viscous tangential friction, and the torque of
/// the tangential forces about the disc center. A pure function of state.
pub fn contact_wrench(world: &WorldState, params: &SimParams) -> ContactForce {
    let mut f = [0.0f64; 2];
    let mut torque = 0.0;
    let mut contacts = Vec::new();
    if let Geometry::Wipe { .. } = world.geometry {
        // wavy board overhead: vertical penetration against the local
        // surface height (wave slopes are gentle, the normal stays vertical)
        let x = world.pos[0];
        if (WIPE_BOARD_X.0..=WIPE_BOARD_X.1).contains(&x) {
            let surface = world.geometry.wipe_surface_at(x);
            let pen = world.pos[1] + params.ee_radius - surface;
            if pen > 0.0 {
                let normal = [0.0, -1.0];
                let rate = -(world.vel[0] * normal[0] + world.vel[1] * normal[1]);
                let fn_mag = params.spring_k * pen + params.damping_c * rate.max(0.0);
                let tangent = [-normal[1], normal[0]];
                let v_t = world.vel[0] * tangent[0] + world.vel[1] * tangent[1];
                let ft_mag = (params.tangential_c * v_t.abs()).min(params.friction_mu * fn_mag);
                let ft = [
                    -ft_mag * v_t.signum() * tangent[0],
                    -ft_mag * v_t.signum() * tangent[1],
                ];
                let total = [fn_mag * normal[0] + ft[0], fn_mag * normal[1] + ft[1]];
                f[0] += total[0];
                f[1] += total[1];
                let offset = [-params.ee_radius * normal[0], -params.ee_radius * normal[1]];
                torque += offset[0] * total[1] - offset[1] * total[0];
                contacts.push((FixtureKind::Board, pen));
            }
        }
    }
    for fixture in world.fixtures() {
        let Some((normal, pen)) = circle_box_penetration(world.pos, params.ee_radius, &fixture)
        else {
            continue;
        };
        // approach rate: positive while the disc sinks deeper
        let rate = -(world.vel[0] * normal[0] + world.vel[1] * normal[1]);
        let fn_mag = params.spring_k * pen + params.damping_c * rate.max(0.0);
        let tangent = [-normal[1], normal[0]];
        let v_t = world.vel[0] * tangent[0] + world.vel[1] * tangent[1];
        let ft_mag = (params.tangential_c * v_t.abs()).min(params.friction_mu * fn_mag);
        let ft = [-ft_mag * v_t.signum() * tangent[0], -ft_mag * v_t.signum() * tangent[1]];
        let total = [fn_mag * normal[0] + ft[0], fn_mag * normal[1] + ft[1]];
        f[0] += total[0];
        f[1] += total[1];
        // contact point sits at -r * normal from the center
        let offset = [-params.ee_radius * normal[0], -params.ee_radius * normal[1]];
        torque += offset[0] * total[1] - offset[1] * total[0];
        contacts.push((fixture.kind, pen));
    }
    ContactForce {
        clean: [f[0], f[1], torque],
        contacts,
    }
}

/// One control step: clip the action, track the commanded velocity under the
/// contact forces (semi-implicit Euler), update task scalars at the new pose.
/// Returns the wrench measured at the pre-step state.
pub fn step(world: &mut WorldState, action: [f64; 3], params: &SimParams) -> ContactForce {
    let dx = action[0].clamp(-params.max_step, params.max_step);
    let dy = action[1].clamp(-params.max_step, params.max_step);
    let engage = action[2].clamp(-1.0, 1.0);

    let force = contact_wrench(world, params);
    let v_cmd = [dx / params.dt, dy / params.dt];
    for i in 0..2 {
        let accel = params.drag * (v_cmd[i] - world.vel[i]) + force.clean[i];
        world.vel[i] += params.dt * accel;
        world.pos[i] += params.dt * world.vel[i];
    }
    // workspace walls
    for i in 0..2 {
        let lo = params.ee_radius;
        let hi = 1.0 - params.ee_radius;
        if world.pos[i] < lo {
            world.pos[i] = lo;
            world.vel[i] = 0.0;
        } else if world.pos[i] > hi {
            world.pos[i] = hi;
            world.vel[i] = 0.0;
        }
    }
    world.tool = engage;
    world.steps += 1;

    // task bookkeeping at the new pose
    let post = contact_wrench(world, params);
    match world.geometry {
        Geometry::Wipe { .. } => {
            let on_board = post
                .contacts
                .iter()
                .any(|(k, pen)| *k == FixtureKind::Board && *pen > 0.0);
            let pressure = post.magnitude();
            let in_window = pressure >= WIPE_FORCE_WINDOW.0 && pressure <= WIPE_FORCE_WINDOW.1;
            if on_board && in_window && world.tool > 0.5 {
                for i in 0..WIPE_CELLS {
                    if (world.pos[0] - WorldState::wipe_cell_center(i)).abs() <= params.ee_radius {
                        world.wiped[i] = true;
                    }
                }
            }
        }
        Geometry::Press { .. } => {
            let pen = post
                .contacts
                .iter()
                .filter(|(k, _)| *k == FixtureKind::Button)
                .map(|(_, p)| *p)
                .fold(0.0f64, f64::max);
            let dep = pen.min(PRESS_MAX_DEP);
            if dep > world.depression {
                world.depression = dep;
            }
            // engagement must be held without rebound to latch
            if pen >= PRESS_LATCH {
                world.hold_steps += 1;
            } else {
                world.hold_steps = 0;
            }
            if world.hold_steps >= PRESS_HOLD_STEPS {
                world.latched = true;
            }
        }
        Geometry::Insert { center_x } => {
            let inside = (world.pos[0] - center_x).abs() < INSERT_HALF_GAP;
            let raw = INSERT_OPEN_Y - (world.pos[1] - params.ee_radius);
            world.depth = if inside {
                raw.clamp(0.0, INSERT_OPEN_Y - INSERT_BOTTOM_Y)
            } else {
                0.0
            };
        }
    }
    force
}

/// Task-specific success criterion, checked on the terminal state.
pub fn evaluate_success(world: &WorldState) -> bool {
    match world.task {
        Task::Wipe => world.wiped_fraction() >= WIPE_SUCCESS_FRACTION,
        Task::Press => world.latched,
        Task::Insert => world.depth >= (INSERT_OPEN_Y - INSERT_BOTTOM_Y) - INSERT_TOL,
    }
}

/// Episodes end on success or at the step cap.
pub fn episode_done(world: &WorldState, params: &SimParams) -> bool {
    world.steps >= params.episode_cap || evaluate_success(world)
}

/// Sensor drift state: a per-axis random-walk bias.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseState {
    pub bias: [f64; 3],
}

impl NoiseState {
    /// sensed = clean + white + bias, with the bias advanced first.
    /// Draw order per step: three bias increments, then three white draws.
    pub fn sense(
        &mut self,
        clean: [f64; 3],
        params: &SimParams,
        rng: &mut RngStream,
    ) -> ([f64; 3], [f64; 3]) {
        for b in &mut self.bias {
            *b += params.noise_lf * rng.normal();
        }
        let mut sensed = [0.0; 3];
        for i in 0..3 {
            sensed[i] = clean[i] + params.noise_hf * rng.normal() + self.bias[i];
        }
        (sensed, self.bias)
    }
}
