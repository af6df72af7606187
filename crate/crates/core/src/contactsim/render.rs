//! Deterministic rasterization of the world into a small channel-first image.
//! Channel 0: fixtures. Channel 1: task markers (unwiped cells, button cap,
//! slot interior). Channel 2: the end-effector disc. Edges are anti-aliased
//! by pixel coverage so sub-pixel fixture positions survive quantization.

use crate::contactsim::{
    Geometry, WorldState, INSERT_BOTTOM_Y, INSERT_HALF_GAP, INSERT_OPEN_Y, WIPE_BOARD_T,
    WIPE_BOARD_X, WIPE_CELLS,
};
use crate::embedding::Image;

pub const RENDER_SIZE: usize = 32;
pub const RENDER_CHANNELS: usize = 3;
/// Drawn EE radius; slightly larger than the physical disc so it always
/// covers multiple pixels.
const EE_DRAW_RADIUS: f64 = 0.045;

fn overlap(lo0: f64, hi0: f64, lo1: f64, hi1: f64) -> f64 {
    (hi0.min(hi1) - lo0.max(lo1)).max(0.0)
}

/// Fraction of the pixel square covered by an axis-aligned rectangle.
fn rect_coverage(px0: f64, py0: f64, px1: f64, py1: f64, r: &[f64; 4]) -> f64 {
    let a = overlap(px0, px1, r[0], r[2]) * overlap(py0, py1, r[1], r[3]);
    a / ((px1 - px0) * (py1 - py0))
}

pub fn render(world: &WorldState) -> Image {
    let n = RENDER_SIZE;
    let px = 1.0 / n as f64;
    let mut img = Image::new(RENDER_CHANNELS, n, n);

    let fixture_rects: Vec<[f64; 4]> = world
        .fixtures()
        .iter()
        .map(|f| [f.x0, f.y0, f.x1, f.y1])
        .collect();

    let mut marker_rects: Vec<([f64; 4], f64)> = Vec::new();
    match world.geometry {
        Geometry::Wipe { .. } => {
            let cell_h = 0.03;
            let (a, b) = crate::contactsim::WIPE_BAND;
            let cell_w = (b - a) / WIPE_CELLS as f64;
            for i in 0..WIPE_CELLS {
                if !world.wiped[i] {
                    let cx = WorldState::wipe_cell_center(i);
                    let s = world.geometry.wipe_surface_at(cx);
                    marker_rects.push((
                        [cx - cell_w / 2.0, s - cell_h, cx + cell_w / 2.0, s],
                        1.0,
                    ));
                }
            }
        }
        Geometry::Press { center_x, top_y } => {
            let cap_y = top_y - world.depression;
            marker_rects.push((
                [center_x - 0.06, cap_y - 0.02, center_x + 0.06, cap_y],
                1.0,
            ));
        }
        Geometry::Insert { center_x } => {
            marker_rects.push((
                [
                    center_x - INSERT_HALF_GAP,
                    INSERT_BOTTOM_Y,
                    center_x + INSERT_HALF_GAP,
                    INSERT_OPEN_Y,
                ],
                1.0,
            ));
        }
    }

    for row in 0..n {
        for col in 0..n {
            let x0 = col as f64 * px;
            let x1 = x0 + px;
            let y1 = (n - row) as f64 * px;
            let y0 = y1 - px;

            let mut fixture = 0.0f64;
            for r in &fixture_rects {
                fixture = fixture.max(rect_coverage(x0, y0, x1, y1, r));
            }
            if let Geometry::Wipe { .. } = world.geometry {
                // wavy board: vertical coverage of the region above the local
                // surface height, sampled at the pixel-column center
                let xc = x0 + px / 2.0;
                if (WIPE_BOARD_X.0..=WIPE_BOARD_X.1).contains(&xc) {
                    let s = world.geometry.wipe_surface_at(xc);
                    if s < y1 + WIPE_BOARD_T {
                        let cov = ((y1 - s.max(y0)) / px).clamp(0.0, 1.0);
                        let capped = if y0 > s + WIPE_BOARD_T { 0.0 } else { cov };
                        fixture = fixture.max(capped);
                    }
                }
            }
            for c in &world.clutter {
                let r = [c.x0, c.y0, c.x1, c.y1];
                fixture = fixture.max(c.value * rect_coverage(x0, y0, x1, y1, &r));
            }
            img.set(0, row, col, fixture);

            let mut marker = 0.0f64;
            for (r, v) in &marker_rects {
                marker = marker.max(v * rect_coverage(x0, y0, x1, y1, r));
            }
            img.set(1, row, col, marker);

            let cx = x0 + px / 2.0;
            let cy = y0 + px / 2.0;
            let d = ((cx - world.pos[0]).powi(2) + (cy - world.pos[1]).powi(2)).sqrt();
            let cov = (0.5 + (EE_DRAW_RADIUS - d) / px).clamp(0.0, 1.0);
            img.set(2, row, col, cov);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contactsim::{SimParams, Task};
    use crate::numerics::rng::RngStream;

    #[test]
    fn render_is_deterministic() {
        let mut rng = RngStream::new(5);
        let w = WorldState::init(Task::Press, &mut rng);
        assert_eq!(render(&w), render(&w));
    }

    #[test]
    fn moving_the_effector_changes_pixels() {
        let mut rng = RngStream::new(6);
        let mut w = WorldState::init(Task::Wipe, &mut rng);
        w.pos = [0.5, 0.4];
        let a = render(&w);
        w.pos = [0.5 + 1.5 / 32.0, 0.4];
        let b = render(&w);
        assert_ne!(a, b);
    }

    #[test]
    fn wiped_cells_render_differently() {
        let mut rng = RngStream::new(7);
        let mut w = WorldState::init(Task::Wipe, &mut rng);
        let before = render(&w);
        for i in 0..8 {
            w.wiped[i] = true;
        }
        let after = render(&w);
        assert_ne!(before, after);
        // the difference is confined to the marker channel
        let diff: usize = (0..32 * 32)
            .filter(|&i| before.data[i] != after.data[i])
            .count();
        assert_eq!(diff, 0, "fixture channel must not change");
    }

    #[test]
    fn surface_height_is_visible_subpixel() {
        // two boards 4 mm apart must produce different images (anti-aliasing
        // encodes sub-pixel position)
        let mut rng = RngStream::new(8);
        let mut w = WorldState::init(Task::Wipe, &mut rng);
        w.geometry = Geometry::Wipe {
            surface_y: 0.700,
            wave_amp: 0.0,
            wave_freq: 3.0,
            wave_phase: 0.0,
        };
        let a = render(&w);
        w.geometry = Geometry::Wipe {
            surface_y: 0.704,
            wave_amp: 0.0,
            wave_freq: 3.0,
            wave_phase: 0.0,
        };
        let b = render(&w);
        assert_ne!(a, b);
    }

    #[test]
    fn effector_depth_is_visible_through_contact() {
        let params = SimParams::default();
        let mut rng = RngStream::new(9);
        let mut w = WorldState::init(Task::Press, &mut rng);
        let Geometry::Press { center_x, top_y } = w.geometry else {
            unreachable!()
        };
        w.pos = [center_x, top_y + params.ee_radius + 0.001];
        let shallow = render(&w);
        w.pos = [center_x, top_y + params.ee_radius - 0.015];
        let deep = render(&w);
        assert_ne!(shallow, deep);
    }
}
