//! Tab-separated dataset and ad-task files.
//!
//! Dataset header: `sample_id ad_task_id target_action day f_<field>…
//! obs_1…obs_N [true_1…true_N]`. Target actions are 1-based with `0` meaning
//! a target outside the modeled set. Task header: `task_id target_action
//! prop_1…prop_N`.

use std::io::{Read, Write};

use super::{AdTaskProfile, Dataset, Sample, Target};
use crate::error::{Error, Result};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(w)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().delimiter(b'\t').from_reader(r)
}

fn parse<T: std::str::FromStr>(s: &str, line: u64, col: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {col} value `{s}`")))
}

/// Writes a dataset; hidden labels are written only with `include_truth`.
pub fn write_dataset<W: Write>(out: W, ds: &Dataset, include_truth: bool) -> Result<()> {
    let include_truth = include_truth && ds.has_truth();
    let mut w = writer(out);
    let mut header = vec![
        "sample_id".to_string(),
        "ad_task_id".into(),
        "target_action".into(),
        "day".into(),
    ];
    header.extend(ds.field_names.iter().map(|f| format!("f_{f}")));
    header.extend((1..=ds.n_actions).map(|j| format!("obs_{j}")));
    if include_truth {
        header.extend((1..=ds.n_actions).map(|j| format!("true_{j}")));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in &ds.samples {
        row.clear();
        row.push(s.id.to_string());
        row.push(s.ad_task.to_string());
        row.push(s.target.encode().to_string());
        row.push(s.day.to_string());
        row.extend(s.fields.iter().map(u32::to_string));
        row.extend(s.observed.iter().map(u8::to_string));
        if include_truth {
            let truth = s.truth.as_ref().ok_or_else(|| {
                Error::State(format!("sample {} has no true labels", s.id))
            })?;
            row.extend(truth.iter().map(u8::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = reader(input);
    let header = r.headers()?.clone();
    let fixed = ["sample_id", "ad_task_id", "target_action", "day"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Format(format!("dataset header must start with {fixed:?}")));
    }
    let field_names: Vec<String> = header
        .iter()
        .skip(4)
        .map_while(|h| h.strip_prefix("f_").map(str::to_string))
        .collect();
    let n_obs = header.iter().filter(|h| h.starts_with("obs_")).count();
    let n_true = header.iter().filter(|h| h.starts_with("true_")).count();
    if n_obs == 0 || (n_true != 0 && n_true != n_obs) {
        return Err(Error::Format("dataset needs obs_ columns and matching true_ columns".into()));
    }
    let width = 4 + field_names.len() + n_obs + n_true;
    if header.len() != width {
        return Err(Error::Format(format!("unexpected columns in dataset header ({} != {width})", header.len())));
    }
    let n_fields = field_names.len();

    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Format(format!("line {line}: expected {width} columns, found {}", rec.len())));
        }
        let labels = |range: std::ops::Range<usize>, col: &str| -> Result<Vec<u8>> {
            range.map(|c| parse::<u8>(&rec[c], line, col)).collect()
        };
        let obs_start = 4 + n_fields;
        samples.push(Sample {
            id: parse(&rec[0], line, "sample_id")?,
            ad_task: parse(&rec[1], line, "ad_task_id")?,
            target: Target::decode(parse(&rec[2], line, "target_action")?, n_obs)?,
            day: parse(&rec[3], line, "day")?,
            fields: (4..obs_start)
                .map(|c| parse(&rec[c], line, "field"))
                .collect::<Result<_>>()?,
            observed: labels(obs_start..obs_start + n_obs, "label")?,
            truth: if n_true > 0 {
                Some(labels(obs_start + n_obs..width, "true label")?)
            } else {
                None
            },
        });
    }
    Dataset::new(n_obs, field_names, samples)
}

pub fn write_tasks<W: Write>(out: W, tasks: &[AdTaskProfile], n_actions: usize) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["task_id".to_string(), "target_action".into()];
    header.extend((1..=n_actions).map(|j| format!("prop_{j}")));
    w.write_record(&header)?;
    for t in tasks {
        let mut row = vec![t.id.to_string(), t.target.encode().to_string()];
        row.extend(t.propensity.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads task profiles. Campaign ids are restored as `task_id + 1` and
/// traffic as 1.
pub fn read_tasks<R: Read>(input: R) -> Result<Vec<AdTaskProfile>> {
    let mut r = reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("task_id") || header.get(1) != Some("target_action") {
        return Err(Error::Format("task header must start with task_id, target_action".into()));
    }
    let n_actions = header.len() - 2;
    let mut tasks = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Format(format!("line {line}: wrong column count")));
        }
        let id: u32 = parse(&rec[0], line, "task_id")?;
        let task = AdTaskProfile {
            id,
            target: Target::decode(parse(&rec[1], line, "target_action")?, n_actions)?,
            propensity: (2..rec.len())
                .map(|c| parse(&rec[c], line, "propensity"))
                .collect::<Result<_>>()?,
            campaign: id + 1,
            traffic: 1.0,
        };
        task.validate().map_err(|e| Error::Format(e.to_string()))?;
        tasks.push(task);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig, MarketConfig};
    use proptest::prelude::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            n_users: 50,
            n_segments: 5,
            n_contexts: 3,
            n_train: 300,
            n_test: 50,
            market: MarketConfig {
                n_tasks: 12,
                ..GeneratorConfig::default().market
            },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn dataset_round_trip_with_and_without_truth() {
        let data = generate(&tiny(), 4).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data.train, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id\tad_task_id\ttarget_action\tday\tf_user\tf_segment\tf_campaign\tf_context\tobs_1"));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data.train);

        let mut buf = Vec::new();
        write_dataset(&mut buf, &data.train, false).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data.train.observed_only());
    }

    #[test]
    fn task_round_trip() {
        let data = generate(&tiny(), 4).unwrap();
        let mut buf = Vec::new();
        write_tasks(&mut buf, &data.tasks, 5).unwrap();
        let back = read_tasks(buf.as_slice()).unwrap();
        assert_eq!(back.len(), data.tasks.len());
        for (a, b) in back.iter().zip(&data.tasks) {
            assert_eq!((a.id, a.target, &a.propensity, a.campaign), (b.id, b.target, &b.propensity, b.campaign));
        }
    }

    #[test]
    fn malformed_rows_rejected() {
        let bad = "sample_id\tad_task_id\ttarget_action\tday\tf_u\tobs_1\n0\t0\t1\t0\tx\t1\n";
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Format(_))));
        let bad = "sample_id\tad_task_id\ttarget_action\tday\tf_u\tobs_1\n0\t0\t3\t0\t1\t1\n";
        assert!(read_dataset(bad.as_bytes()).is_err());
        let bad = "id\tad_task_id\n";
        assert!(read_dataset(bad.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_samples_round_trip(rows in prop::collection::vec(
            (0u32..4, 0u32..6, prop::collection::vec(1u32..1000, 2), prop::collection::vec(0u8..2, 3)),
            1..40,
        )) {
            let samples = rows.into_iter().enumerate().map(|(i, (task, target, fields, obs))| Sample {
                id: i as u64,
                ad_task: task,
                target: Target::decode(target % 4, 3).unwrap(),
                day: i as u32 / 3,
                fields,
                observed: obs,
                truth: None,
            }).collect();
            let ds = Dataset::new(3, vec!["a".into(), "b".into()], samples).unwrap();
            let mut buf = Vec::new();
            write_dataset(&mut buf, &ds, false).unwrap();
            prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
        }
    }
}
