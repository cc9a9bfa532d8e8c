//! Pose label files: one data line per frame, `frame_id X Y Z W P Q R`
//! (position then scalar-first quaternion). Lines that do not parse as 8
//! whitespace-separated fields are skipped and counted, so prose headers
//! pass through harmlessly.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{pose_to_fields, Pose, Quaternion};

pub const LABEL_HEADER: &str = "# posereg labels v1: frame_id X Y Z W P Q R";

pub fn write_label_file(path: &Path, samples: &[(String, Pose)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{LABEL_HEADER}")?;
    for (frame_id, pose) in samples {
        writeln!(f, "{frame_id} {}", pose_to_fields(pose))?;
    }
    Ok(())
}

/// Returns the parsed (frame_id, pose) list and the number of skipped
/// lines. Quaternions are canonicalized on read.
pub fn read_label_file(path: &Path) -> Result<(Vec<(String, Pose)>, usize)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            if !line.trim().is_empty() {
                skipped += 1;
            }
            continue;
        }
        let mut nums = [0.0f64; 7];
        let mut parse_ok = true;
        for (i, f) in fields[1..].iter().enumerate() {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => nums[i] = v,
                Ok(v) => {
                    return Err(Error::Format {
                        line: idx + 1,
                        msg: format!("non-finite value {v} in field {}", i + 2),
                    })
                }
                Err(_) => {
                    parse_ok = false;
                    break;
                }
            }
        }
        if !parse_ok {
            skipped += 1;
            continue;
        }
        let pose = Pose::new(
            [nums[0], nums[1], nums[2]],
            Quaternion::new(nums[3], nums[4], nums[5], nums[6]),
        )
        .map_err(|e| Error::Format { line: idx + 1, msg: e.to_string() })?;
        samples.push((fields[0].to_string(), pose));
    }
    if samples.is_empty() {
        return Err(Error::Format { line: 0, msg: format!("no parseable lines in {}", path.display()) });
    }
    Ok((samples, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_simple_line_and_skips_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(
            &path,
            "Some dataset header prose\nmore header\n\nseq1/frame001.ppm 1.0 2.0 3.0 1 0 0 0\n",
        )
        .unwrap();
        let (samples, skipped) = read_label_file(&path).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].0, "seq1/frame001.ppm");
        assert_eq!(samples[0].1.position, [1.0, 2.0, 3.0]);
        assert_eq!(samples[0].1.orientation, Quaternion::IDENTITY);
    }

    #[test]
    fn negated_quaternion_reads_back_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "f0 0 0 0 -1 0 0 0\n").unwrap();
        let (samples, _) = read_label_file(&path).unwrap();
        assert_eq!(samples[0].1.orientation, Quaternion::IDENTITY);
    }

    #[test]
    fn non_finite_is_a_format_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "f0 0 0 0 1 0 0 0\nf1 NaN 0 0 1 0 0 0\n").unwrap();
        match read_label_file(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn zero_parseable_lines_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "just a header\n").unwrap();
        assert!(matches!(read_label_file(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn roundtrip_of_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples: Vec<(String, Pose)> = (0..100)
            .map(|i| {
                let q = Quaternion::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let pose = Pose::new(
                    [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(0.0..5.0)],
                    if q.norm() > 1e-3 { q } else { Quaternion::IDENTITY },
                )
                .unwrap();
                (format!("seq0/frame{i:05}.ppm"), pose)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        write_label_file(&path, &samples).unwrap();
        let (back, skipped) = read_label_file(&path).unwrap();
        assert_eq!(skipped, 1); // the format header
        assert_eq!(back.len(), samples.len());
        for ((id_a, pose_a), (id_b, pose_b)) in samples.iter().zip(&back) {
            assert_eq!(id_a, id_b);
            for (u, v) in pose_a.to_vector().iter().zip(pose_b.to_vector()) {
                assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
            }
        }
    }
}
