//! WISDM v1.1 raw text (`user,activity,timestamp,x,y,z;`) and a generic
//! `label,subject,ch0..chN` CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::SensorStream;

/// Activity names in id order (sorted by name).
pub const WISDM_ACTIVITIES: [&str; 6] = [
    "Downstairs",
    "Jogging",
    "Sitting",
    "Standing",
    "Upstairs",
    "Walking",
];

/// Fraction of malformed records above which loading fails.
const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct WisdmRecord {
    pub subject: u32,
    pub activity: usize,
    pub timestamp: i64,
    pub xyz: [f32; 3],
}

/// Parses one record. The trailing `;` is optional.
pub fn parse_wisdm_record(record: &str) -> Option<WisdmRecord> {
    let record = record.trim().trim_end_matches(';').trim();
    let mut fields = record.split(',').map(str::trim);
    let subject = fields.next()?.parse().ok()?;
    let name = fields.next()?;
    let activity = WISDM_ACTIVITIES.iter().position(|&a| a == name)?;
    let timestamp = fields.next()?.parse().ok()?;
    let mut xyz = [0.0f32; 3];
    for v in &mut xyz {
        *v = fields.next()?.parse().ok()?;
        if !v.is_finite() {
            return None;
        }
    }
    if fields.next().is_some_and(|f| !f.is_empty()) {
        return None;
    }
    Some(WisdmRecord {
        subject,
        activity,
        timestamp,
        xyz,
    })
}

#[derive(Clone, Debug)]
pub struct LoadedStreams {
    pub streams: Vec<SensorStream>,
    pub class_names: Vec<String>,
    pub malformed: usize,
    pub total: usize,
}

fn read(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Empty(format!("file {}", path.display())));
    }
    Ok(text)
}

fn check_malformed(path: &Path, malformed: usize, total: usize) -> Result<()> {
    if total == 0 || malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            malformed,
            total,
        });
    }
    Ok(())
}

/// Loads a WISDM raw file into one stream per contiguous (subject, activity)
/// run. Records may be separated by newlines, semicolons, or both.
pub fn load_wisdm_csv(path: &Path) -> Result<LoadedStreams> {
    let text = read(path)?;
    let mut streams: Vec<SensorStream> = Vec::new();
    let mut current: Option<(u32, usize)> = None;
    let (mut total, mut malformed) = (0, 0);
    for record in text
        .split(['\n', ';'])
        .map(str::trim)
        .filter(|r| !r.is_empty())
    {
        total += 1;
        let Some(r) = parse_wisdm_record(record) else {
            malformed += 1;
            continue;
        };
        if current != Some((r.subject, r.activity)) {
            current = Some((r.subject, r.activity));
            streams.push(SensorStream {
                subject: r.subject,
                channels: 3,
                samples: Vec::new(),
                labels: Vec::new(),
            });
        }
        let s = streams.last_mut().expect("stream pushed above");
        s.samples.extend_from_slice(&r.xyz);
        s.labels.push(r.activity);
    }
    check_malformed(path, malformed, total)?;
    if malformed > 0 {
        log::warn!(
            "{}: skipped {malformed} of {total} malformed records",
            path.display()
        );
    }
    Ok(LoadedStreams {
        streams,
        class_names: WISDM_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
        malformed,
        total,
    })
}

/// Loads a CSV with header `label,subject,ch0,...`. Consecutive rows of the
/// same subject form one stream. Labels that all parse as integers are used
/// as ids directly; otherwise names are mapped to ids in sorted order.
pub fn load_generic_csv(path: &Path) -> Result<LoadedStreams> {
    let text = read(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < 3 || header[0] != "label" || header[1] != "subject" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: "header must be `label,subject,ch0[,ch1...]`".into(),
        });
    }
    let channels = header.len() - 2;
    let mut rows: Vec<(String, u32, Vec<f32>)> = Vec::new();
    let (mut total, mut malformed) = (0, 0);
    for line in lines {
        total += 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (f.len() == channels + 2)
            .then(|| {
                let subject = f[1].parse().ok()?;
                let vals: Option<Vec<f32>> = f[2..]
                    .iter()
                    .map(|v| v.parse().ok().filter(|x: &f32| x.is_finite()))
                    .collect();
                Some((f[0].to_string(), subject, vals?))
            })
            .flatten();
        match parsed {
            Some(r) => rows.push(r),
            None => malformed += 1,
        }
    }
    check_malformed(path, malformed, total)?;

    let numeric: Option<Vec<usize>> = rows.iter().map(|r| r.0.parse().ok()).collect();
    let (ids, class_names) = match numeric {
        Some(ids) => {
            let k = ids.iter().max().map_or(0, |m| m + 1);
            (ids, (0..k).map(|i| i.to_string()).collect())
        }
        None => {
            let names: BTreeMap<&str, usize> = rows.iter().map(|r| (r.0.as_str(), 0)).collect();
            let names: BTreeMap<&str, usize> =
                names.keys().enumerate().map(|(i, &n)| (n, i)).collect();
            let ids = rows.iter().map(|r| names[r.0.as_str()]).collect();
            (ids, names.keys().map(|s| s.to_string()).collect())
        }
    };

    let mut streams: Vec<SensorStream> = Vec::new();
    for ((_, subject, vals), id) in rows.into_iter().zip(ids) {
        if streams.last().is_none_or(|s| s.subject != subject) {
            streams.push(SensorStream {
                subject,
                channels,
                samples: Vec::new(),
                labels: Vec::new(),
            });
        }
        let s = streams.last_mut().expect("stream pushed above");
        s.samples.extend_from_slice(&vals);
        s.labels.push(id);
    }
    Ok(LoadedStreams {
        streams,
        class_names,
        malformed,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_documented_line() {
        let r = parse_wisdm_record("33,Jogging,49105962326000,-0.69,12.68,0.50;").unwrap();
        assert_eq!(r.subject, 33);
        assert_eq!(WISDM_ACTIVITIES[r.activity], "Jogging");
        assert_eq!(r.timestamp, 49105962326000);
        assert_eq!(r.xyz, [-0.69, 12.68, 0.50]);
    }

    #[test]
    fn trailing_semicolon_optional() {
        let a = parse_wisdm_record("33,Jogging,49105962326000,-0.69,12.68,0.50;");
        let b = parse_wisdm_record("33,Jogging,49105962326000,-0.69,12.68,0.50");
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_missing_axis_and_unknown_activity() {
        assert!(parse_wisdm_record("11,Walking,1867172313000,4.4,4.4,;").is_none());
        assert!(parse_wisdm_record("11,Swimming,1,0,0,0;").is_none());
    }

    #[test]
    fn activity_ids_are_sorted_names() {
        let mut sorted = WISDM_ACTIVITIES;
        sorted.sort();
        assert_eq!(sorted, WISDM_ACTIVITIES);
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn groups_runs_and_counts_malformed() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("1,Walking,{i},0.1,0.2,0.3;\n"));
        }
        text.push_str("1,Walking,11,bad,0.2,0.3;\n");
        for i in 0..5 {
            text.push_str(&format!("1,Sitting,{i},1,2,3\n"));
        }
        text.push_str("2,Sitting,0,1,2,3;2,Sitting,1,1,2,3;\n");
        let f = write(&text);
        let l = load_wisdm_csv(f.path()).unwrap();
        assert_eq!(l.total, 18);
        assert_eq!(l.malformed, 1);
        assert_eq!(l.streams.len(), 3);
        assert_eq!(l.streams[0].len(), 10);
        assert_eq!(l.streams[1].labels[0], 2);
        assert_eq!(l.streams[2].subject, 2);
    }

    #[test]
    fn empty_file_and_garbage_fail() {
        let f = write("");
        assert!(matches!(load_wisdm_csv(f.path()), Err(Error::Empty(_))));
        let f = write("x\ny\n1,Walking,0,1,2,3\n");
        assert!(matches!(
            load_wisdm_csv(f.path()),
            Err(Error::TooManyMalformed { malformed: 2, .. })
        ));
        assert!(load_wisdm_csv(Path::new("/nonexistent/file.txt")).is_err());
    }

    #[test]
    fn generic_csv_named_labels() {
        let f = write("label,subject,ch0,ch1\nrun,1,0.5,1\nwalk,1,0.1,2\nrun,2,3,4\n");
        let l = load_generic_csv(f.path()).unwrap();
        assert_eq!(l.class_names, vec!["run", "walk"]);
        assert_eq!(l.streams.len(), 2);
        assert_eq!(l.streams[0].labels, vec![0, 1]);
        assert_eq!(l.streams[0].samples, vec![0.5, 1.0, 0.1, 2.0]);
    }
}
