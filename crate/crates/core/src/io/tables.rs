//! Small two-column CSV tables: class histograms and per-class thresholds.

use std::path::Path;

use super::read_text;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::threshold::ClassHistogram;

fn rows<'a>(text: &'a str, header: &str, context: &str) -> Result<Vec<(usize, &'a str, &'a str)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == header) {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(context, i + 1, format!("expected two fields, got {line:?}")))?;
        out.push((i + 1, a.trim(), b.trim()));
    }
    Ok(out)
}

fn dense_index(lineno: usize, id: &str, expected: usize, context: &str) -> Result<()> {
    match id.parse::<usize>() {
        Ok(v) if v == expected => Ok(()),
        _ => Err(Error::parse(context, lineno, format!("expected class id {expected}, got {id:?}"))),
    }
}

pub fn encode_histogram(h: &ClassHistogram) -> String {
    let mut s = String::from("class_id,count\n");
    for (i, c) in h.counts().iter().enumerate() {
        s.push_str(&format!("{i},{c}\n"));
    }
    s
}

pub fn decode_histogram(text: &str, context: &str) -> Result<ClassHistogram> {
    let mut counts = Vec::new();
    for (lineno, id, count) in rows(text, "class_id,count", context)? {
        dense_index(lineno, id, counts.len(), context)?;
        counts.push(
            count
                .parse::<u64>()
                .map_err(|_| Error::parse(context, lineno, format!("invalid count {count:?}")))?,
        );
    }
    Ok(ClassHistogram::from_counts(counts))
}

pub fn read_histogram(path: &Path) -> Result<ClassHistogram> {
    decode_histogram(&read_text(path)?, &path.display().to_string())
}

pub fn encode_thresholds<T: Scalar>(taus: &[T]) -> String {
    let mut s = String::from("class_id,tau\n");
    for (i, t) in taus.iter().enumerate() {
        s.push_str(&format!("{i},{t}\n"));
    }
    s
}

pub fn decode_thresholds<T: Scalar>(text: &str, context: &str) -> Result<Vec<T>> {
    let mut taus = Vec::new();
    for (lineno, id, tau) in rows(text, "class_id,tau", context)? {
        dense_index(lineno, id, taus.len(), context)?;
        let v: f64 = tau
            .parse()
            .map_err(|_| Error::parse(context, lineno, format!("invalid threshold {tau:?}")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::parse(context, lineno, format!("threshold {v} outside [0,1]")));
        }
        taus.push(T::lit(v));
    }
    Ok(taus)
}

pub fn read_thresholds<T: Scalar>(path: &Path) -> Result<Vec<T>> {
    decode_thresholds(&read_text(path)?, &path.display().to_string())
}
