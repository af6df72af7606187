//! Scripted waypoint controllers standing in for teleoperated demonstrations.
//! Each expert is a pure function of the world state, so episodes replay
//! exactly from (seed, action sequence).

use crate::contactsim::{
    contact_wrench, Geometry, SimParams, WorldState, INSERT_BOTTOM_Y, INSERT_OPEN_Y, PRESS_LATCH,
};

/// Wipe: target normal force while sweeping the mark band.
const WIPE_TARGET_PEN: f64 = 0.015;
/// Insert: stop pushing once the floor reacts harder than this, N.
const INSERT_FORCE_CAP: f64 = 3.0;

fn clamp_step(v: f64, limit: f64) -> f64 {
    v.clamp(-limit, limit)
}

pub fn expert_action(world: &WorldState, params: &SimParams) -> [f64; 3] {
    let speed = 0.012;
    let kp = 0.8;
    let r = params.ee_radius;
    match world.geometry {
        Geometry::Wipe { .. } => {
            let Some(target_cell) = (0..world.wiped.len()).find(|&i| !world.wiped[i]) else {
                return [0.0, 0.0, 0.0];
            };
            let target_x = WorldState::wipe_cell_center(target_cell);
            let near_band = (world.pos[0] - target_x).abs() <= 0.15;
            // track the local (wavy) surface height under the effector
            let surface_here = world.geometry.wipe_surface_at(world.pos[0]);
            let target_y = if near_band {
                surface_here - r + WIPE_TARGET_PEN
            } else {
                surface_here - r - 0.03
            };
            let dx = clamp_step(kp * (target_x - world.pos[0]), speed);
            let dy = clamp_step(kp * (target_y - world.pos[1]), speed);
            let engaged = world.pos[1] + r >= surface_here - 0.005;
            [dx, dy, if engaged { 1.0 } else { 0.0 }]
        }
        Geometry::Press { center_x, top_y } => {
            if world.latched {
                return [0.0, 0.0, 0.0];
            }
            // deliberate approach, then a firm press: the press command must
            // be fast enough that the tracking force exceeds the latch depth
            // (drag * v_cmd >= k * PRESS_LATCH)
            let transit = 0.007;
            let press = 0.014;
            let hover = top_y + r + 0.06;
            let aligned = (world.pos[0] - center_x).abs() <= 0.01;
            let dx = clamp_step(kp * (center_x - world.pos[0]), transit);
            if !aligned || world.pos[1] > hover + 0.02 {
                [dx, clamp_step(kp * (hover - world.pos[1]), transit), 0.0]
            } else {
                let _ = PRESS_LATCH;
                [dx, -press, 0.0]
            }
        }
        Geometry::Insert { center_x } => {
            // touch-and-slide insertion: coarse visual alignment, descend to
            // touch, slide along the wall ledge under light contact pressure
            // until the disc drops into the slot, then seat under a force cap.
            let full_depth = INSERT_OPEN_Y - INSERT_BOTTOM_Y;
            if world.depth >= full_depth - 0.005 {
                return [0.0, 0.0, 0.0];
            }
            let in_slot = world.pos[1] - r <= INSERT_OPEN_Y - 0.005
                && (world.pos[0] - center_x).abs() < crate::contactsim::INSERT_HALF_GAP;
            if in_slot {
                let dx = clamp_step(1.2 * (center_x - world.pos[0]), speed);
                let wrench = contact_wrench(world, params);
                let dy = if wrench.clean[1] > INSERT_FORCE_CAP {
                    0.0
                } else {
                    -speed
                };
                return [dx, dy, 0.0];
            }
            let wrench = contact_wrench(world, params);
            let on_ledge = wrench.clean[1] > 0.2;
            if on_ledge {
                // keep a light downward pressure while sliding toward the slot
                let dx = clamp_step(0.010 * (center_x - world.pos[0]).signum(), speed);
                [dx, -0.004, 0.0]
            } else {
                let coarse = (world.pos[0] - center_x).abs() <= 0.05;
                let dx = clamp_step(kp * (center_x - world.pos[0]), 0.0065);
                if coarse {
                    // descend until something happens: either the ledge or
                    // the slot catches the disc
                    [dx * 0.2, -0.009, 0.0]
                } else {
                    let hover = INSERT_OPEN_Y + r + 0.05;
                    [dx, clamp_step(kp * (hover - world.pos[1]), 0.0065), 0.0]
                }
            }
        }
    }
}
