//! Static SVG of a solution: estimated path, optional ground truth, and
//! landmarks colored by their label hint's category. Top-down view (x right,
//! y up).

use std::fmt::Write as _;

use semslam::geometry::Se3Pose;
use semslam::io_eval::SolutionRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#999999",
];
const UNLABELED: &str = "#000000";

struct Frame {
    min: (f64, f64),
    scale: f64,
    offset: (f64, f64),
}

impl Frame {
    fn fit(points: &[(f64, f64)]) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(x, y) in points {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        if points.is_empty() {
            lo = (0.0, 0.0);
            hi = (0.0, 0.0);
        }
        let (dx, dy) = (hi.0 - lo.0, hi.1 - lo.1);
        let span = dx.max(dy);
        let scale = if span > 0.0 { (WIDTH - 2.0 * MARGIN) / span } else { 1.0 };
        // center the shorter extent
        let offset = (
            0.5 * (WIDTH - 2.0 * MARGIN - dx * scale),
            0.5 * (HEIGHT - 2.0 * MARGIN - dy * scale),
        );
        Self { min: lo, scale, offset }
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            MARGIN + self.offset.0 + (x - self.min.0) * self.scale,
            HEIGHT - MARGIN - self.offset.1 - (y - self.min.1) * self.scale,
        )
    }
}

fn xy(p: &Se3Pose) -> (f64, f64) {
    (p.translation().x, p.translation().y)
}

// adding 0.0 prints -0.0 as 0.00
fn num(v: f64) -> String {
    format!("{:.2}", v + 0.0)
}

fn polyline(out: &mut String, frame: &Frame, poses: &[Se3Pose], attrs: &str) {
    let pts: Vec<String> = poses
        .iter()
        .map(|p| {
            let (x, y) = frame.map(xy(p));
            format!("{},{}", num(x), num(y))
        })
        .collect();
    writeln!(out, "  <polyline points=\"{}\" {attrs}/>", pts.join(" ")).unwrap();
}

pub fn render(sol: &SolutionRecord, gt: Option<&[Se3Pose]>) -> String {
    let mut pts: Vec<(f64, f64)> = sol.trajectory.iter().map(xy).collect();
    pts.extend(sol.landmarks.iter().map(|l| xy(&l.pose)));
    if let Some(g) = gt {
        pts.extend(g.iter().map(xy));
    }
    let frame = Frame::fit(&pts);

    let mut out = String::new();
    writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>").unwrap();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>").unwrap();
    if let Some(g) = gt {
        writeln!(out, "  <g id=\"ground-truth\">").unwrap();
        polyline(&mut out, &frame, g, "fill=\"none\" stroke=\"#888888\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"");
        writeln!(out, "  </g>").unwrap();
    }
    writeln!(out, "  <g id=\"estimate\">").unwrap();
    polyline(&mut out, &frame, &sol.trajectory, "fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\"");
    writeln!(out, "  </g>").unwrap();
    writeln!(out, "  <g id=\"landmarks\">").unwrap();
    for l in &sol.landmarks {
        let (x, y) = frame.map(xy(&l.pose));
        let (color, label) = match l.label {
            Some(h) => (PALETTE[h.category_id as usize % PALETTE.len()], format!("category {} instance {}", h.category_id, h.instance_id)),
            None => (UNLABELED, "unlabeled".to_string()),
        };
        writeln!(
            out,
            "    <circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"{color}\"><title>landmark {}: {label}</title></circle>",
            num(x),
            num(y),
            l.id
        )
        .unwrap();
    }
    writeln!(out, "  </g>").unwrap();
    writeln!(out, "</svg>").unwrap();
    out
}
