//! CSV formats and loaders.
//!
//! Three plain (unquoted) CSV files describe a dataset:
//!
//! - manifest: header `sample_id,subject,label,skeleton_csv,accel_csv`;
//!   paths are relative to the manifest's directory.
//! - skeleton: header `frame,joint,x,y,z`; frames are 0-indexed and
//!   contiguous, joints run `0..J-1` per frame, a missing joint is simply
//!   an absent row.
//! - acceleration: header `t,ax,ay,az` with `t` in seconds, strictly
//!   increasing; a blank numeric field is a missing value (recorded as a
//!   gap for the fill stage).

use crate::dataio::{AccelerationSequence, ActionSample, SkeletonSequence};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MANIFEST_HEADER: &str = "sample_id,subject,label,skeleton_csv,accel_csv";
pub const SKELETON_HEADER: &str = "frame,joint,x,y,z";
pub const ACCEL_HEADER: &str = "t,ax,ay,az";

/// Load every sample referenced by a manifest.
///
/// Structural violations are collected per file and reported together; the
/// joint count is inferred from the first skeleton file and must be
/// consistent across the dataset.
pub fn load_samples(manifest: &Path) -> Result<Vec<ActionSample>> {
    let text = read(manifest)?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for (lineno, line) in non_empty_lines(&text) {
        if lineno == 1 {
            expect_header(manifest, line, MANIFEST_HEADER)?;
            continue;
        }
        let fields = split(manifest, lineno, line, 5)?;
        let subject: u32 = parse_field(manifest, lineno, fields[1], "subject")?;
        let label: usize = parse_field(manifest, lineno, fields[2], "label")?;
        rows.push((
            fields[0].to_string(),
            subject,
            label,
            dir.join(fields[3]),
            dir.join(fields[4]),
        ));
    }

    let mut samples = Vec::new();
    let mut violations = Vec::new();
    let mut joints_expected: Option<usize> = None;
    for (id, subject, label, skel_path, accel_path) in rows {
        let skeleton = match load_skeleton(&skel_path) {
            Ok(s) => s,
            Err(e) => {
                violations.push(format!("{}: {e}", skel_path.display()));
                continue;
            }
        };
        match joints_expected {
            None => joints_expected = Some(skeleton.num_joints),
            Some(j) if j != skeleton.num_joints => {
                violations.push(format!(
                    "{}: joint count {} differs from dataset joint count {}",
                    skel_path.display(),
                    skeleton.num_joints,
                    j
                ));
                continue;
            }
            _ => {}
        }
        let acceleration = match load_acceleration(&accel_path) {
            Ok(a) => a,
            Err(e) => {
                violations.push(format!("{}: {e}", accel_path.display()));
                continue;
            }
        };
        samples.push(ActionSample {
            id,
            skeleton,
            acceleration,
            label,
            subject,
        });
    }
    if !violations.is_empty() {
        return Err(Error::Data(format!(
            "{} file(s) failed validation:\n  {}",
            violations.len(),
            violations.join("\n  ")
        )));
    }
    Ok(samples)
}

fn load_skeleton(path: &Path) -> Result<SkeletonSequence> {
    let text = read(path)?;
    let mut rows: Vec<(usize, usize, [f64; 3])> = Vec::new();
    for (lineno, line) in non_empty_lines(&text) {
        if lineno == 1 {
            expect_header(path, line, SKELETON_HEADER)?;
            continue;
        }
        let fields = split(path, lineno, line, 5)?;
        let frame: usize = parse_field(path, lineno, fields[0], "frame")?;
        let joint: usize = parse_field(path, lineno, fields[1], "joint")?;
        let x: f64 = parse_field(path, lineno, fields[2], "x")?;
        let y: f64 = parse_field(path, lineno, fields[3], "y")?;
        let z: f64 = parse_field(path, lineno, fields[4], "z")?;
        rows.push((frame, joint, [x, y, z]));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: skeleton file has no data rows",
            path.display()
        )));
    }
    let num_frames = rows.iter().map(|r| r.0 + 1).max().unwrap();
    let num_joints = rows.iter().map(|r| r.1 + 1).max().unwrap();
    let mut frames = vec![[0.0; 3]; num_frames * num_joints];
    let mut seen_frame = vec![false; num_frames];
    let mut seen = vec![false; num_frames * num_joints];
    let mut joint_present = vec![false; num_joints];
    for (frame, joint, pos) in rows {
        let idx = frame * num_joints + joint;
        if seen[idx] {
            return Err(Error::Data(format!(
                "{}: duplicate row for frame {frame} joint {joint}",
                path.display()
            )));
        }
        seen[idx] = true;
        seen_frame[frame] = true;
        joint_present[joint] = true;
        frames[idx] = pos;
    }
    if let Some(missing) = seen_frame.iter().position(|&s| !s) {
        return Err(Error::Data(format!(
            "{}: frames are not contiguous (frame {missing} absent)",
            path.display()
        )));
    }
    SkeletonSequence::new(frames, num_frames, num_joints, 100.0, joint_present)
}

fn load_acceleration(path: &Path) -> Result<AccelerationSequence> {
    let text = read(path)?;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in non_empty_lines(&text) {
        if lineno == 1 {
            expect_header(path, line, ACCEL_HEADER)?;
            continue;
        }
        let fields = split(path, lineno, line, 4)?;
        let t: f64 = parse_field(path, lineno, fields[0], "t")?;
        let mut row = [0.0; 3];
        for (axis, field) in fields[1..].iter().enumerate() {
            row[axis] = if field.is_empty() {
                f64::NAN // missing value; recorded as a gap
            } else {
                parse_field(path, lineno, field, "acceleration")?
            };
        }
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line: lineno,
                    msg: format!("timestamp {t} not greater than previous {prev}"),
                });
            }
        }
        timestamps.push(t);
        values.push(row);
    }
    let rate_hz = if timestamps.len() >= 2 {
        (timestamps.len() - 1) as f64 / (timestamps.last().unwrap() - timestamps[0])
    } else {
        0.0
    };
    AccelerationSequence::new(timestamps, values, rate_hz)
}

/// Write samples back out in the same formats; returns the manifest path.
///
/// Joints masked out of a sequence are omitted from the skeleton CSV, and
/// in-row gaps become blank fields, so a load/write/load round trip
/// reproduces the samples.
pub fn write_samples(dir: &Path, samples: &[ActionSample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in samples {
        let skel_name = format!("skeleton_{}.csv", s.id);
        let accel_name = format!("accel_{}.csv", s.id);
        writeln!(
            manifest,
            "{},{},{},{},{}",
            s.id, s.subject, s.label, skel_name, accel_name
        )
        .expect("string write");

        let mut skel = String::from(SKELETON_HEADER);
        skel.push('\n');
        for f in 0..s.skeleton.num_frames {
            for q in 0..s.skeleton.num_joints {
                if !s.skeleton.joint_mask[q] {
                    continue;
                }
                let p = s.skeleton.at(f, q);
                writeln!(skel, "{f},{q},{},{},{}", p[0], p[1], p[2]).expect("string write");
            }
        }
        write_atomic(&dir.join(skel_name), skel.as_bytes())?;

        let mut accel = String::from(ACCEL_HEADER);
        accel.push('\n');
        for (t, v) in s.acceleration.timestamps.iter().zip(&s.acceleration.values) {
            let field = |x: f64| {
                if x.is_finite() {
                    x.to_string()
                } else {
                    String::new()
                }
            };
            writeln!(accel, "{t},{},{},{}", field(v[0]), field(v[1]), field(v[2]))
                .expect("string write");
        }
        write_atomic(&dir.join(accel_name), accel.as_bytes())?;
    }
    let path = dir.join("manifest.csv");
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Write via a temp file in the same directory plus rename, so a partial
/// file is never observable at the destination path.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ----------------------------------------------------------------- util

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn expect_header(path: &Path, line: &str, expected: &str) -> Result<()> {
    if line.trim() != expected {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{expected}`, found `{line}`"),
        });
    }
    Ok(())
}

fn split<'a>(path: &Path, lineno: usize, line: &'a str, want: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
    if fields.len() != want {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: lineno,
            msg: format!("expected {want} fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    lineno: usize,
    field: &str,
    name: &str,
) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line: lineno,
        msg: format!("cannot parse {name} from `{field}`"),
    })
}
