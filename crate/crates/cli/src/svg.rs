//! Minimal SVG heatmaps.

use std::fmt::Write as _;

use scarkit_core::microlocal::MicrolocalField;
use scarkit_core::quasimode::{PatchGrid, PatchPoint};

const PIXELS: usize = 128;
const SCALE: usize = 4;
const MARGIN: usize = 40;

/// Log-scaled grey-blue ramp; `x` in `[0, 1]`.
fn color(x: f64) -> String {
    let x = x.clamp(0.0, 1.0);
    let r = (255.0 * x.powf(1.5)) as u8;
    let g = (255.0 * x) as u8;
    let b = (80.0 + 175.0 * x.sqrt()) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn log_normalize(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; values.len()];
    }
    let floor = max * 1e-6;
    values.iter().map(|v| (v.max(floor) / floor).ln() / (max / floor).ln()).collect()
}

fn raster(out: &mut String, pixels: &[f64], width: usize, height: usize) {
    let norm = log_normalize(pixels);
    for row in 0..height {
        for col in 0..width {
            let v = norm[row * width + col];
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{SCALE}" height="{SCALE}" fill="{}"/>"#,
                MARGIN + col * SCALE,
                MARGIN + row * SCALE,
                color(v)
            )
            .expect("string write");
        }
    }
}

fn header(out: &mut String, title: &str) {
    let side = 2 * MARGIN + PIXELS * SCALE;
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#
    )
    .expect("string write");
    writeln!(out, r#"<title>{title}</title>"#).expect("string write");
    writeln!(out, r#"<g shape-rendering="crispEdges">"#).expect("string write");
}

fn locate(edges: &[f64], x: f64) -> Option<usize> {
    if x < edges[0] || x > edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|e| *e <= x).saturating_sub(1).min(edges.len() - 2))
}

/// `|κ|²` over `(t, u ≥ 0)` with one horizontal overlay per tube radius.
pub fn localization(field: &MicrolocalField, cuts: &[(f64, f64)]) -> String {
    let nt = field.t_edges.len() - 1;
    let nu = field.u_edges.len() - 1;
    let mut grid = vec![0.0; nt * nu];
    for c in &field.cells {
        grid[c.i * nu + c.j] = c.value.kappa.norm_sqr();
    }
    let (t0, t1) = (field.t_edges[0], field.t_edges[nt]);
    let u1 = field.u_edges[nu];
    let mut pixels = vec![0.0; PIXELS * PIXELS];
    for row in 0..PIXELS {
        let u = u1 * (PIXELS - row) as f64 / PIXELS as f64 - 0.5 * u1 / PIXELS as f64;
        for col in 0..PIXELS {
            let t = t0 + (t1 - t0) * (col as f64 + 0.5) / PIXELS as f64;
            if let (Some(i), Some(j)) = (locate(&field.t_edges, t), locate(&field.u_edges, u)) {
                pixels[row * PIXELS + col] = grid[i * nu + j];
            }
        }
    }
    let mut out = String::new();
    header(&mut out, "|kappa|^2 over (t, u), tube boundaries");
    raster(&mut out, &pixels, PIXELS, PIXELS);
    out.push_str("</g>\n");
    let span = (PIXELS * SCALE) as f64;
    for &(n, u_cut) in cuts {
        let y = MARGIN as f64 + span * (1.0 - (u_cut / u1).min(1.0));
        writeln!(
            out,
            r#"<line class="overlay" data-n="{n}" x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="red" stroke-width="1"/>"#,
            MARGIN as f64 + span
        )
        .expect("string write");
    }
    writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-size="12">t from {t0} to {t1}; u from 0 to {u1:.4}</text>"#,
        MARGIN / 2
    )
    .expect("string write");
    out.push_str("</svg>\n");
    out
}

/// A patch quantity with an optional marker.
pub fn patch_heatmap(grid: &PatchGrid, values: &[f64], mark: Option<PatchPoint>) -> String {
    let mut pixels = vec![0.0; PIXELS * PIXELS];
    for row in 0..PIXELS {
        let j = ((PIXELS - 1 - row) * (grid.ny - 1)) / (PIXELS - 1);
        for col in 0..PIXELS {
            let i = (col * (grid.nx - 1)) / (PIXELS - 1);
            pixels[row * PIXELS + col] = values[grid.index(i, j)];
        }
    }
    let mut out = String::new();
    header(&mut out, "|psi|^2 on the patch");
    raster(&mut out, &pixels, PIXELS, PIXELS);
    out.push_str("</g>\n");
    if let Some(p) = mark {
        let span = (PIXELS * SCALE) as f64;
        let cx = MARGIN as f64 + span * p.i as f64 / (grid.nx - 1) as f64;
        let cy = MARGIN as f64 + span * (1.0 - p.j as f64 / (grid.ny - 1) as f64);
        writeln!(
            out,
            r#"<circle class="peak" cx="{cx:.2}" cy="{cy:.2}" r="6" fill="none" stroke="red" stroke-width="2"/>"#
        )
        .expect("string write");
        writeln!(
            out,
            r#"<text x="{MARGIN}" y="{}" font-size="12">p* = {:.4} + {:.4}i</text>"#,
            MARGIN / 2,
            p.x,
            p.y
        )
        .expect("string write");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_ramp_ends() {
        assert_eq!(color(0.0), "#000050");
        assert_eq!(color(1.0), "#ffffff");
        assert_eq!(color(2.0), color(1.0));
    }

    #[test]
    fn log_normalize_range() {
        let n = log_normalize(&[0.0, 1e-9, 1e-3, 1.0]);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 0.0);
        assert!((n[2] - 0.5).abs() < 1e-12);
        assert!((n[3] - 1.0).abs() < 1e-12);
        assert_eq!(log_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn locate_in_edges() {
        let e = [0.0, 1.0, 2.0, 4.0];
        assert_eq!(locate(&e, -0.1), None);
        assert_eq!(locate(&e, 0.0), Some(0));
        assert_eq!(locate(&e, 1.5), Some(1));
        assert_eq!(locate(&e, 4.0), Some(2));
        assert_eq!(locate(&e, 4.1), None);
    }

    #[test]
    fn patch_heatmap_marks_peak() {
        let grid = PatchGrid::centered(0.5, 16);
        let values: Vec<f64> = (0..grid.len()).map(|k| k as f64).collect();
        let mark = PatchPoint { index: grid.index(3, 4), i: 3, j: 4, x: 0.0, y: 1.0 };
        let svg = patch_heatmap(&grid, &values, Some(mark));
        assert_eq!(svg.matches("<rect").count(), PIXELS * PIXELS);
        assert_eq!(svg.matches(r#"class="peak""#).count(), 1);
        assert!(patch_heatmap(&grid, &values, None).matches("circle").count() == 0);
    }
}
