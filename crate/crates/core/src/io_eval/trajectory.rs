use std::fmt::Write as _;
use std::path::Path;

use super::{io_error, IoError, Result};
use crate::geometry::Se3Pose;

/// Quaternions read from a file must have unit norm within this tolerance.
const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Se3Pose>,
}

/// `printf("%.9g")`: nine significant digits, trailing zeros removed,
/// exponent form outside `[1e-4, 1e9)`. Negative zero prints as `0`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{x:.*}", (8 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One line per pose, `timestamp tx ty tz qx qy qz qw`, with the frame index
/// as timestamp.
pub fn format_trajectory(poses: &[Se3Pose]) -> Result<String> {
    let mut out = String::new();
    for (k, p) in poses.iter().enumerate() {
        let t = p.translation();
        let q = p.quaternion_xyzw();
        let vals = [t.x, t.y, t.z, q[0], q[1], q[2], q[3]];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(IoError::InvalidInput(format!("pose {k} is not finite")));
        }
        write!(out, "{k}.000000").unwrap();
        for v in vals {
            write!(out, " {}", format_g9(v)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Blank lines and lines starting with `#` are skipped.
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut timestamps = Vec::new();
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoError::Parse {
                line: line_no,
                column: fields.len().min(8) + 1,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 8];
        for (i, f) in fields.iter().enumerate() {
            v[i] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| IoError::Parse {
                    line: line_no,
                    column: i + 1,
                    message: format!("field {} is not a finite number: {f:?}", i + 1),
                })?;
        }
        if let Some(&prev) = timestamps.last() {
            if !(v[0] > prev) {
                return Err(IoError::Parse {
                    line: line_no,
                    column: 1,
                    message: format!("timestamp {} does not increase past {prev}", v[0]),
                });
            }
        }
        let pose = Se3Pose::from_xyzw([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]], QUATERNION_TOLERANCE)
            .map_err(|e| IoError::Parse {
                line: line_no,
                column: 5,
                message: e.to_string(),
            })?;
        timestamps.push(v[0]);
        poses.push(pose);
    }
    Ok(Trajectory { timestamps, poses })
}

pub fn export_trajectory(poses: &[Se3Pose], path: &Path) -> Result<()> {
    let text = format_trajectory(poses)?;
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn import_trajectory(path: &Path) -> Result<Vec<Se3Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(parse_trajectory(&text)?.poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn g9_matches_printf() {
        // expected strings from C printf("%.9g")
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999999999, "10"),
            (999999999.7, "1e+09"),
            (-4.567891234567, "-4.56789123"),
            (1e-300, "1e-300"),
        ];
        for (x, s) in cases {
            assert_eq!(format_g9(x), s, "{x}");
        }
    }

    #[test]
    fn identity_line() {
        assert_eq!(
            format_trajectory(&[Se3Pose::identity()]).unwrap(),
            "0.000000 0 0 0 0 0 0 1\n"
        );
    }

    #[test]
    fn empty_round_trip() {
        assert_eq!(format_trajectory(&[]).unwrap(), "");
        assert!(parse_trajectory("").unwrap().poses.is_empty());
    }

    #[test]
    fn random_round_trip_within_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses: Vec<Se3Pose> = (0..100)
            .map(|_| {
                let w = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
                // nine significant digits keep 1e-9 only below unit magnitude
                let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                Se3Pose::from_quaternion(*se3_exp(&Twist::new(w, Vector3::zeros())).quaternion(), t)
            })
            .collect();
        let text = format_trajectory(&poses).unwrap();
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back.timestamps, (0..100).map(|k| k as f64).collect::<Vec<_>>());
        for (a, b) in poses.iter().zip(&back.poses) {
            assert!((a.translation() - b.translation()).amax() < 1e-9);
            let qa = a.quaternion_xyzw();
            let qb = b.quaternion_xyzw();
            assert!(qa.iter().zip(qb).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        assert_eq!(format_trajectory(&back.poses).unwrap(), text);
    }

    #[test]
    fn rejects_malformed_lines() {
        let bad = [
            ("0 0 0 0 0 0 0\n", 1),
            ("0 0 0 0 0 0 0 1\n1 0 0 x 0 0 0 1\n", 2),
            ("0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n", 2),
            ("0 0 0 0 0 0 0 1.001\n", 1),
            ("0 0 0 nan 0 0 0 1\n", 1),
        ];
        for (text, expected_line) in bad {
            match parse_trajectory(text) {
                Err(IoError::Parse { line, .. }) => assert_eq!(line, expected_line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn accepts_comments_and_negative_qw() {
        let t = parse_trajectory("# header\n\n0.5 1 2 3 0 0 0 -1\n").unwrap();
        assert_eq!(t.timestamps, vec![0.5]);
        assert_eq!(t.poses[0].translation(), &Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.poses[0].quaternion_xyzw(), [0.0, 0.0, 0.0, 1.0]);
    }
}
