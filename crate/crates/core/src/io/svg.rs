//! Trajectory plots with pinwheel colour coding: hue is the direction of
//! motion, brightness its speed.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::TrajectoryField;
use crate::error::Result;
use crate::scalar::Scalar;

const CELL_PX: f64 = 24.0;
const LEGEND_PX: f64 = 120.0;
const SATURATION: f64 = 0.9;
const MIN_VALUE: f64 = 0.35;
const WEDGES: usize = 36;

/// `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (q(r), q(g), q(b))
}

fn hue(dx: f64, dy: f64) -> f64 {
    dy.atan2(dx).to_degrees().rem_euclid(360.0)
}

fn colour(dx: f64, dy: f64, max_speed: f64) -> String {
    let speed = (dx * dx + dy * dy).sqrt();
    let v = MIN_VALUE + (1.0 - MIN_VALUE) * (speed / max_speed).min(1.0);
    let (r, g, b) = hsv_to_rgb(hue(dx, dy), SATURATION, v);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn legend(out: &mut String, cx: f64, cy: f64, radius: f64) {
    out.push_str("<g id=\"legend\">\n");
    for i in 0..WEDGES {
        let a0 = (i as f64 * 360.0 / WEDGES as f64).to_radians();
        let a1 = ((i + 1) as f64 * 360.0 / WEDGES as f64).to_radians();
        let mid = (i as f64 + 0.5) * 360.0 / WEDGES as f64;
        let (r, g, b) = hsv_to_rgb(mid, SATURATION, 1.0);
        let _ = writeln!(
            out,
            "<path d=\"M{cx:.2},{cy:.2} L{:.2},{:.2} A{radius:.2},{radius:.2} 0 0 1 {:.2},{:.2} Z\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
            cx + radius * a0.cos(),
            cy + radius * a0.sin(),
            cx + radius * a1.cos(),
            cy + radius * a1.sin(),
        );
    }
    out.push_str("</g>\n");
}

/// Renders every moving cell as polylines starting at its grid position.
/// A cell's track is split wherever its segment colour changes, so a cell
/// with constant velocity is a single polyline. Screen y grows downward,
/// matching row order; hue 0 is motion toward +x.
pub fn render_trajectory_svg<S: Scalar>(field: &TrajectoryField<S>) -> String {
    let (h, w, t_len) = (field.height(), field.width(), field.horizon());
    let max_speed = (0..field.cells())
        .flat_map(|c| (0..t_len).map(move |t| (c, t)))
        .map(|(c, t)| {
            let (dx, dy) = segment(field, c, t);
            (dx * dx + dy * dy).sqrt()
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let plot_w = w as f64 * CELL_PX;
    let plot_h = h as f64 * CELL_PX;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">",
        plot_w + LEGEND_PX,
        plot_h.max(LEGEND_PX),
        plot_w + LEGEND_PX,
        plot_h.max(LEGEND_PX)
    );
    let _ = writeln!(out, "<rect width=\"{plot_w:.0}\" height=\"{plot_h:.0}\" fill=\"#000000\"/>");
    out.push_str("<g id=\"tracks\" fill=\"none\" stroke-width=\"1.5\" stroke-linecap=\"round\">\n");
    for cell in 0..field.cells() {
        if field.cell_is_static(cell) {
            continue;
        }
        let origin = (
            ((cell % w) as f64 + 0.5) * CELL_PX,
            ((cell / w) as f64 + 0.5) * CELL_PX,
        );
        let point = |t: usize| {
            let (dx, dy) = field.offset(cell, t);
            (
                origin.0 + dx.to_f64_lossy() * CELL_PX,
                origin.1 + dy.to_f64_lossy() * CELL_PX,
            )
        };
        let mut run: Vec<(f64, f64)> = vec![origin];
        let mut run_colour: Option<String> = None;
        let flush = |out: &mut String, run: &[(f64, f64)], c: &Option<String>| {
            if let (Some(c), true) = (c, run.len() > 1) {
                let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(out, "<polyline points=\"{}\" stroke=\"{c}\"/>", pts.join(" "));
            }
        };
        for t in 0..t_len {
            let (dx, dy) = segment(field, cell, t);
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            let c = colour(dx, dy, max_speed);
            if run_colour.as_ref().is_some_and(|rc| *rc != c) {
                flush(&mut out, &run, &run_colour);
                run = vec![*run.last().expect("non-empty run")];
            }
            run_colour = Some(c);
            run.push(point(t));
        }
        flush(&mut out, &run, &run_colour);
    }
    out.push_str("</g>\n");
    let r = LEGEND_PX * 0.4;
    legend(&mut out, plot_w + LEGEND_PX / 2.0, LEGEND_PX / 2.0, r);
    out.push_str("</svg>\n");
    out
}

/// Displacement over frame `t` (from the previous offset, or the origin).
fn segment<S: Scalar>(field: &TrajectoryField<S>, cell: usize, t: usize) -> (f64, f64) {
    let (x1, y1) = field.offset(cell, t);
    let (x0, y0) = if t == 0 {
        (S::zero(), S::zero())
    } else {
        field.offset(cell, t - 1)
    };
    ((x1 - x0).to_f64_lossy(), (y1 - y0).to_f64_lossy())
}

pub fn write_trajectory_svg<S: Scalar>(field: &TrajectoryField<S>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_trajectory_svg(field))?;
    Ok(())
}
