use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use orbitscan::capture::CaptureBundle;
use orbitscan::detector::{detect, DbscanParams, DetectorParams, FilterParams, Label};
use orbitscan::geometry::CameraIntrinsics;
use orbitscan::mission::{emit_report, run_with_output, MissionConfig};
use orbitscan::planner::{plan_orbit, waypoints_for_spacing, OrbitDirection};
use orbitscan::reconstructor::ply::read_ply;
use orbitscan::reconstructor::{
    export_ply, reconstruct, score, ReconstructParams, ReconstructionMode,
};
use orbitscan::simworld::SparseMapFrame;
use orbitscan::{Pose, Vec3};
use serde_json::json;
use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "orbitscan",
    version,
    about = "Simulated orbit-and-scan drone pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full mission and write its report and artifacts.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a PLY point cloud and pick the target nearest the drone.
    Detect {
        #[arg(long)]
        input: PathBuf,
        /// Drone pose as x,y,z,yaw
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_points: Option<usize>,
        #[arg(long)]
        keep_fraction: Option<f64>,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan orbit waypoints around a target.
    Plan {
        /// Target as x,y,z
        #[arg(long, allow_hyphen_values = true)]
        target: String,
        /// Drone pose as x,y,z,yaw
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long, default_value_t = 12)]
        n: usize,
        /// Arc length between waypoints; overrides --n.
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, value_enum, default_value_t = Direction::Ccw)]
        direction: Direction,
        #[arg(long, default_value_t = 0.5)]
        min_radius: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Triangulate a capture bundle into a PLY point cloud.
    Reconstruct {
        #[arg(long)]
        captures: PathBuf,
        /// Camera intrinsics JSON; defaults to the camera stored in the bundle.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Quality report JSON; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Dense)]
        mode: Mode,
        #[arg(long)]
        overlap_min: Option<usize>,
        /// Triangulate from ground-truth poses.
        #[arg(long)]
        oracle_poses: bool,
    },
    /// Print the default mission config as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Ccw,
    Cw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dense,
    Sparse,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Detect {
            input,
            pose,
            eps,
            min_points,
            keep_fraction,
            out,
        } => {
            let mut params = DetectorParams::default();
            let DbscanParams {
                eps: e0,
                min_points: m0,
            } = params.dbscan;
            params.dbscan = DbscanParams {
                eps: eps.unwrap_or(e0),
                min_points: min_points.unwrap_or(m0),
            };
            params.filter = FilterParams {
                keep_fraction: keep_fraction.unwrap_or(params.filter.keep_fraction),
                ..params.filter
            };
            run_detect(&input, parse_pose(&pose)?, &params, out.as_deref())
        }
        Command::Plan {
            target,
            pose,
            n,
            spacing,
            direction,
            min_radius,
            out,
        } => {
            let target = parse_vec3(&target)?;
            let pose = parse_pose(&pose)?;
            let n = match spacing {
                Some(s) => waypoints_for_spacing((pose.position.xy() - target.xy()).norm(), s),
                None => n,
            };
            let direction = match direction {
                Direction::Ccw => OrbitDirection::Counterclockwise,
                Direction::Cw => OrbitDirection::Clockwise,
            };
            let plan = plan_orbit(&target, &pose, n, direction, min_radius)?;
            write_json(&serde_json::to_value(&plan)?, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Reconstruct {
            captures,
            camera,
            out,
            report,
            mode,
            overlap_min,
            oracle_poses,
        } => run_reconstruct(
            &captures,
            camera.as_deref(),
            &out,
            report.as_deref(),
            mode,
            overlap_min,
            oracle_poses,
        ),
        Command::Config => {
            print!("{}", MissionConfig::default().to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn simulate(config: &Path, out: &Path) -> Result<ExitCode> {
    let config = MissionConfig::load(config)?;
    config.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run = run_with_output(&config, Some(out));
    emit_report(&run.report, out)?;
    println!("{}", run.report.final_state);
    if run.report.is_done() {
        Ok(ExitCode::SUCCESS)
    } else {
        let reason = run.report.abort_reason.as_deref().unwrap_or("unknown");
        eprintln!("mission aborted: {reason}");
        Ok(ExitCode::FAILURE)
    }
}

fn run_detect(
    input: &Path,
    pose: Pose,
    params: &DetectorParams,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let points = read_ply(BufReader::new(file))?;
    let frame = SparseMapFrame {
        points: points
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32, *p))
            .collect(),
        drone_pose: pose,
        frame_index: 0,
    };
    let detection = match detect(&frame, params) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("detection failed: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };

    // -2 filtered out, -1 noise, k cluster k
    let mut labels = vec![-2i64; points.len()];
    for ((id, _), label) in detection.filtered.iter().zip(&detection.clusters.labels) {
        labels[*id as usize] = match label {
            Label::Noise => -1,
            Label::Cluster(k) => *k as i64,
        };
    }
    let clusters: Vec<_> = detection
        .clusters
        .clusters
        .iter()
        .map(|c| json!({ "centroid": c.centroid, "size": c.members.len(), "core": c.core.len() }))
        .collect();
    let value = json!({
        "target": detection.target,
        "cluster": detection.cluster,
        "members": detection.members,
        "clusters": clusters,
        "labels": labels,
    });
    write_json(&value, out)?;
    Ok(ExitCode::SUCCESS)
}

fn run_reconstruct(
    captures: &Path,
    camera: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
    mode: Mode,
    overlap_min: Option<usize>,
    oracle_poses: bool,
) -> Result<ExitCode> {
    let bundle =
        CaptureBundle::load(captures).with_context(|| format!("loading {}", captures.display()))?;
    let cam: CameraIntrinsics = match camera {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing camera {}", path.display()))?,
        None => bundle.camera,
    };
    cam.validate()?;
    let mode = match mode {
        Mode::Dense => ReconstructionMode::Dense,
        Mode::Sparse => match &bundle.sparse_map_ids {
            Some(ids) => ReconstructionMode::Sparse(ids.iter().copied().collect::<BTreeSet<_>>()),
            None => bail!("bundle has no sparse map ids; sparse mode unavailable"),
        },
    };
    let mut params = ReconstructParams {
        oracle_poses,
        ..ReconstructParams::default()
    };
    if let Some(m) = overlap_min {
        params.overlap_min = m;
    }

    let cloud = match reconstruct(&bundle.capture_set(), &cam, &mode, &params) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("reconstruction failed: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    export_ply(&cloud, out)?;
    let value = json!({
        "ply_path": out,
        "stats": cloud.stats,
        "quality": bundle.ground_truth.as_ref().map(|scene| score(&cloud, scene)),
    });
    write_json(&value, report)?;
    Ok(ExitCode::SUCCESS)
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("'{s}' is not a comma-separated list of numbers"))?;
    if values.len() != n {
        bail!("expected {n} comma-separated values, got {}", values.len());
    }
    Ok(values)
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let v = parse_numbers(s, 3)?;
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_pose(s: &str) -> Result<Pose> {
    let v = parse_numbers(s, 4)?;
    Ok(Pose::new(Vec3::new(v[0], v[1], v[2]), v[3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pose_and_rejects_wrong_arity() {
        let p = parse_pose("1,-2, 3,0.5").unwrap();
        assert_eq!(p.position, Vec3::new(1.0, -2.0, 3.0));
        assert_eq!(p.yaw, 0.5);
        assert!(parse_pose("1,2,3").is_err());
        assert!(parse_vec3("a,b,c").is_err());
    }
}
