//! Trial file format.
//!
//! One file per trial. The first line is
//! `fs=1000,channels=<comma list>,label=<0|1>,subject=<n>,trial=<n>`, followed by one
//! CSV row per sample with one column per channel. Values are written in shortest
//! round-trip decimal form, so reading a file back reproduces the samples exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::montage::Montage;
use crate::synth::EegTrial;
use crate::{Error, Hand, Result};

pub fn file_name(subject_id: u32, trial_id: u32) -> String {
    format!("trial_s{subject_id:03}_t{trial_id:03}.csv")
}

pub fn header_line(trial: &EegTrial, montage: &Montage) -> String {
    format!(
        "fs={},channels={},label={},subject={},trial={}",
        trial.fs,
        montage.names().join(","),
        trial.label.label(),
        trial.subject_id,
        trial.trial_id
    )
}

pub fn write_trial(w: &mut impl Write, trial: &EegTrial, montage: &Montage) -> Result<()> {
    trial.validate(montage.len())?;
    writeln!(w, "{}", header_line(trial, montage))?;
    let mut line = String::with_capacity(32 * 20);
    for i in 0..trial.n_samples() {
        line.clear();
        for (c, ch) in trial.channels.iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&ch[i].to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn save_trial(dir: &Path, trial: &EegTrial, montage: &Montage) -> Result<PathBuf> {
    let path = dir.join(file_name(trial.subject_id, trial.trial_id));
    let mut w = BufWriter::new(File::create(&path)?);
    write_trial(&mut w, trial, montage)?;
    w.flush()?;
    Ok(path)
}

struct Header {
    fs: u32,
    channels: Vec<String>,
    label: Hand,
    subject: u32,
    trial: u32,
}

fn parse_header(line: &str) -> Result<Header> {
    let mut fields: Vec<(String, Vec<String>)> = Vec::new();
    for token in line.trim_end().split(',') {
        match token.split_once('=') {
            Some((k, v)) => fields.push((k.to_string(), vec![v.to_string()])),
            None => match fields.last_mut() {
                Some((k, vals)) if k == "channels" => vals.push(token.to_string()),
                _ => return Err(Error::format(format!("stray header token `{token}`"))),
            },
        }
    }
    let keys: Vec<&str> = fields.iter().map(|(k, _)| k.as_str()).collect();
    if keys != ["fs", "channels", "label", "subject", "trial"] {
        return Err(Error::format(format!("unexpected header keys {keys:?}")));
    }
    let scalar = |i: usize| -> Result<u32> {
        let (k, v) = &fields[i];
        match v.as_slice() {
            [s] => s
                .parse()
                .map_err(|_| Error::format(format!("header field {k}=`{s}` is not an integer"))),
            _ => Err(Error::format(format!(
                "header field {k} has several values"
            ))),
        }
    };
    let label = Hand::from_label(scalar(2)? as u8)
        .map_err(|_| Error::format("header label must be 0 or 1"))?;
    Ok(Header {
        fs: scalar(0)?,
        channels: fields[1].1.clone(),
        label,
        subject: scalar(3)?,
        trial: scalar(4)?,
    })
}

pub fn read_trial(r: impl BufRead, montage: &Montage) -> Result<EegTrial> {
    let mut lines = r.lines();
    let header = parse_header(
        &lines
            .next()
            .ok_or_else(|| Error::format("empty trial file"))??,
    )?;
    if header.channels != montage.names() {
        return Err(Error::format(
            "trial channels do not match the montage order",
        ));
    }
    let n_ch = header.channels.len();
    let mut channels = vec![Vec::new(); n_ch];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (c, v) in line.split(',').enumerate() {
            if c >= n_ch {
                return Err(Error::format(format!("row {row} has too many columns")));
            }
            let x: f64 = v
                .parse()
                .map_err(|_| Error::format(format!("row {row}: `{v}` is not a number")))?;
            channels[c].push(x);
            count += 1;
        }
        if count != n_ch {
            return Err(Error::format(format!(
                "row {row} has {count} columns, expected {n_ch}"
            )));
        }
    }
    let trial = EegTrial {
        subject_id: header.subject,
        trial_id: header.trial,
        label: header.label,
        fs: header.fs,
        channels,
    };
    trial.validate(n_ch)?;
    Ok(trial)
}

pub fn load_trial(path: &Path, montage: &Montage) -> Result<EegTrial> {
    read_trial(BufReader::new(File::open(path)?), montage)
}

/// Trial files of a directory in name order.
pub fn list_trial_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_trial, SynthConfig};

    #[test]
    fn round_trip_is_exact() {
        let m = Montage::builtin32();
        let mut trial = generate_trial(&SynthConfig::default(), 4, 17, Hand::Left).unwrap();
        for ch in &mut trial.channels {
            ch.truncate(50);
        }
        let mut buf = Vec::new();
        write_trial(&mut buf, &trial, &m).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("fs=1000,channels=Fp1,Fp2,F7,"));
        assert!(text
            .lines()
            .next()
            .unwrap()
            .ends_with(",O2,label=1,subject=4,trial=17"));
        let back = read_trial(&buf[..], &m).unwrap();
        assert_eq!(back, trial);
    }

    #[test]
    fn rejects_bad_rows() {
        let m = Montage::builtin32();
        let header = format!(
            "fs=1000,channels={},label=0,subject=0,trial=0\n",
            m.names().join(",")
        );
        let short = format!("{header}1,2,3\n");
        assert!(matches!(
            read_trial(short.as_bytes(), &m),
            Err(Error::Format(_))
        ));
        let nan = format!("{header}{}\n", vec!["NaN"; 32].join(","));
        assert!(read_trial(nan.as_bytes(), &m).is_err());
        let bad_label = header.replace("label=0", "label=2");
        assert!(matches!(
            read_trial(bad_label.as_bytes(), &m),
            Err(Error::Format(_))
        ));
    }
}
