//! CSV and SVG exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lauerl::env::EpisodeRecord;
use lauerl::geometry::{stereographic_project, TargetSet, Vec3};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::CliResult;

/// CSV file whose first line is `# config_sha256=<hash>`, then the header.
pub struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    pub fn create(path: &Path, config_hash: &str, header: &str) -> CliResult<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# config_sha256={config_hash}")?;
        writeln!(w, "{header}")?;
        Ok(Self { w })
    }

    pub fn row(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.w, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| crate::error::CliError::Other(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Upper-hemisphere stereographic coordinates of a line direction.
pub fn stereo_point(v: &Vec3) -> (f64, f64) {
    let u = v.normalize();
    let u = if u.z < 0.0 { -u } else { u };
    stereographic_project(&u).expect("upper hemisphere never hits the antipode")
}

/// Target poles on or above the equator, projected.
pub fn target_poles(targets: &TargetSet) -> Vec<(f64, f64)> {
    targets.axes.iter().filter(|v| v.z >= -1e-12).map(|v| stereo_point(v)).collect()
}

/// Beam direction in the crystal frame at each step of an episode.
pub fn trajectory(rec: &EpisodeRecord) -> Vec<(f64, f64)> {
    rec.steps.iter().map(|s| stereo_point(&Vec3::new(s.beam[0], s.beam[1], s.beam[2]))).collect()
}

const SVG_SIZE: f64 = 600.0;
const SVG_RADIUS: f64 = 270.0;

pub fn svg_xy(p: (f64, f64)) -> (f64, f64) {
    (SVG_SIZE / 2.0 + SVG_RADIUS * p.0, SVG_SIZE / 2.0 - SVG_RADIUS * p.1)
}

/// Projection disc with target poles (black) and trajectories (start marked).
pub fn stereo_svg(poles: &[(f64, f64)], paths: &[Vec<(f64, f64)>]) -> String {
    let c = SVG_SIZE / 2.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n\
         <circle cx=\"{c}\" cy=\"{c}\" r=\"{SVG_RADIUS}\" fill=\"none\" stroke=\"#888\"/>\n"
    );
    for path in paths {
        if path.is_empty() {
            continue;
        }
        let pts: Vec<String> = path.iter().map(|&p| svg_xy(p)).map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
        s += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"#c33\" stroke-opacity=\"0.4\"/>\n", pts.join(" "));
        let (x, y) = svg_xy(path[0]);
        s += &format!("<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"2\" fill=\"#36c\"/>\n");
    }
    for &p in poles {
        let (x, y) = svg_xy(p);
        s += &format!("<circle class=\"pole\" cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"4\" fill=\"black\"/>\n");
    }
    s += "</svg>\n";
    s
}

/// Mean and two-sided 95% Student-t interval half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}
