//! Sweep runner: frames are spread over a worker pool, outcomes are
//! journaled as they arrive and one CSV row is written per completed point.
//!
//! Files next to the output CSV:
//! * `<csv>.progress`: `point_index,frame_index` per finished frame;
//! * `<csv>.frames`: `point_index,frame_index,user_errors,trials_used,wall_seconds`.
//!
//! A frame counts as done on resume only when it appears in both.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{Context, Result};
use skp_ura::channel::simulate_frame;
use skp_ura::receiver::{decode_frame, user_errors, ReceiverOpts};
use skp_ura::seed::derive_seed;
use skp_ura::{Real, SkpConfig};

use crate::config::{ExperimentConfig, Precision};

pub const HEADER: [&str; 11] = [
    "scheme",
    "M",
    "Ka",
    "EbN0_dB",
    "frames",
    "user_errors",
    "pupe",
    "mean_trials_used",
    "wall_seconds",
    "master_seed",
    "git_describe",
];

pub const GIT_DESCRIBE: &str = env!("SKP_URA_GIT_DESCRIBE");

/// Seed of frame `frame` at sweep point `point`. Frozen: changing it
/// changes every published result.
pub fn frame_seed(master: u64, point: usize, frame: usize) -> u64 {
    derive_seed(master, &[point as u64, frame as u64])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub point: usize,
    pub frame: usize,
    pub user_errors: usize,
    pub trials_used: usize,
    pub wall_seconds: f64,
}

/// Simulates and decodes one frame. Returns `(user_errors, trials_used)`.
pub fn run_frame<T: Real>(cfg: &SkpConfig, opts: &ReceiverOpts<T>, seed: u64) -> Result<(usize, usize)> {
    let truth = simulate_frame::<T>(cfg, derive_seed(seed, &[0]))?;
    let res = decode_frame(&truth.y, cfg, opts, derive_seed(seed, &[1]))?;
    Ok((user_errors(&truth.packets, &res.packets), res.trials_used))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: String,
    pub m: usize,
    pub ka: usize,
    pub ebn0_db: f64,
    pub frames: usize,
    pub user_errors: usize,
    pub pupe: f64,
    pub mean_trials_used: f64,
    pub wall_seconds: f64,
    pub master_seed: u64,
    pub git_describe: String,
}

impl ResultRow {
    pub fn record(&self) -> [String; 11] {
        [
            self.scheme.clone(),
            self.m.to_string(),
            self.ka.to_string(),
            self.ebn0_db.to_string(),
            self.frames.to_string(),
            self.user_errors.to_string(),
            self.pupe.to_string(),
            self.mean_trials_used.to_string(),
            format!("{:.3}", self.wall_seconds),
            self.master_seed.to_string(),
            self.git_describe.clone(),
        ]
    }
}

fn sidecar(output: &Path, ext: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn progress_path(output: &Path) -> PathBuf {
    sidecar(output, ".progress")
}

pub fn frames_path(output: &Path) -> PathBuf {
    sidecar(output, ".frames")
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f).lines().collect::<std::io::Result<_>>()?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Frames recorded by an earlier run. Torn trailing lines are ignored.
pub fn load_journal(output: &Path) -> Result<BTreeMap<(usize, usize), FrameOutcome>> {
    let progress: HashSet<(usize, usize)> = read_lines(&progress_path(output))?
        .iter()
        .filter_map(|l| {
            let (p, f) = l.split_once(',')?;
            Some((p.trim().parse().ok()?, f.trim().parse().ok()?))
        })
        .collect();
    let mut out = BTreeMap::new();
    for line in read_lines(&frames_path(output))? {
        let parts: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            Some(FrameOutcome {
                point: parts.first()?.parse().ok()?,
                frame: parts.get(1)?.parse().ok()?,
                user_errors: parts.get(2)?.parse().ok()?,
                trials_used: parts.get(3)?.parse().ok()?,
                wall_seconds: parts.get(4)?.parse().ok()?,
            })
        })();
        if let Some(o) = parsed.filter(|_| parts.len() == 5) {
            if progress.contains(&(o.point, o.frame)) {
                out.insert((o.point, o.frame), o);
            }
        }
    }
    Ok(out)
}

fn row_for(exp: &ExperimentConfig, point: usize, outcomes: &[FrameOutcome]) -> ResultRow {
    let cfg = &exp.points[point].cfg;
    let frames = outcomes.len();
    let errors: usize = outcomes.iter().map(|o| o.user_errors).sum();
    let trials: usize = outcomes.iter().map(|o| o.trials_used).sum();
    ResultRow {
        scheme: exp.scheme_name.clone(),
        m: cfg.m,
        ka: cfg.k_active,
        ebn0_db: cfg.ebn0_db,
        frames,
        user_errors: errors,
        pupe: errors as f64 / (frames * cfg.k_active) as f64,
        mean_trials_used: trials as f64 / frames as f64,
        wall_seconds: outcomes.iter().map(|o| o.wall_seconds).sum(),
        master_seed: exp.master_seed,
        git_describe: GIT_DESCRIBE.to_string(),
    }
}

fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = sidecar(path, ".tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        w.write_record(HEADER)?;
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn append(file: &mut BufWriter<File>, line: &str) -> Result<()> {
    writeln!(file, "{line}")?;
    file.flush()?;
    Ok(())
}

/// Opens a line journal for appending, terminating a torn last line first.
fn open_append(path: &Path) -> Result<BufWriter<File>> {
    let torn = std::fs::read(path).map(|b| b.last().is_some_and(|&c| c != b'\n')).unwrap_or(false);
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = BufWriter::new(f);
    if torn {
        append(&mut w, "")?;
    }
    Ok(w)
}

fn worker<T: Real>(
    exp: &ExperimentConfig,
    jobs: &[(usize, usize)],
    next: &AtomicUsize,
    stop: &AtomicBool,
    tx: mpsc::Sender<Result<FrameOutcome>>,
) {
    let opts: ReceiverOpts<T> = exp.receiver.to_opts();
    while !stop.load(Ordering::Relaxed) {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(point, frame)) = jobs.get(i) else { break };
        let t0 = Instant::now();
        let res = run_frame(&exp.points[point].cfg, &opts, frame_seed(exp.master_seed, point, frame)).map(
            |(user_errors, trials_used)| FrameOutcome {
                point,
                frame,
                user_errors,
                trials_used,
                wall_seconds: t0.elapsed().as_secs_f64(),
            },
        );
        if tx.send(res).is_err() {
            break;
        }
    }
}

/// Runs (or resumes) the sweep and returns the rows in point order.
pub fn run_experiment(exp: &ExperimentConfig, resume: bool) -> Result<Vec<ResultRow>> {
    let output = &exp.output;
    let mut done = if resume { load_journal(output)? } else { BTreeMap::new() };
    if !resume {
        for p in [progress_path(output), frames_path(output)] {
            if p.exists() {
                std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    let completed = |done: &BTreeMap<(usize, usize), FrameOutcome>, point: usize| -> Vec<FrameOutcome> {
        done.range((point, 0)..(point, exp.frames)).map(|(_, o)| *o).collect()
    };
    let mut rows: Vec<ResultRow> = (0..exp.points.len())
        .filter_map(|p| {
            let o = completed(&done, p);
            (o.len() == exp.frames).then(|| row_for(exp, p, &o))
        })
        .collect();
    write_csv(output, &rows)?;

    let jobs: Vec<(usize, usize)> = (0..exp.points.len())
        .flat_map(|p| (0..exp.frames).map(move |f| (p, f)))
        .filter(|k| !done.contains_key(k))
        .collect();
    let mut progress = open_append(&progress_path(output))?;
    let mut journal = open_append(&frames_path(output))?;
    let mut csv_out = open_append(output)?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    let workers = exp.workers.max(1).min(jobs.len().max(1));

    let result = std::thread::scope(|s| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, stop) = (&jobs, &next, &stop);
            match exp.precision {
                Precision::F64 => s.spawn(move || worker::<f64>(exp, jobs, next, stop, tx)),
                Precision::F32 => s.spawn(move || worker::<f32>(exp, jobs, next, stop, tx)),
            };
        }
        drop(tx);
        let fail = |e: anyhow::Error| {
            stop.store(true, Ordering::Relaxed);
            Err(e)
        };
        for msg in rx {
            let o = match msg {
                Ok(o) => o,
                Err(e) => return fail(e),
            };
            let line = format!(
                "{},{},{},{},{}",
                o.point, o.frame, o.user_errors, o.trials_used, o.wall_seconds
            );
            if let Err(e) = append(&mut journal, &line)
                .and_then(|_| append(&mut progress, &format!("{},{}", o.point, o.frame)))
            {
                return fail(e);
            }
            done.insert((o.point, o.frame), o);
            let outcomes = completed(&done, o.point);
            if outcomes.len() == exp.frames {
                let row = row_for(exp, o.point, &outcomes);
                let mut line = Vec::new();
                {
                    let mut w = csv::Writer::from_writer(&mut line);
                    w.write_record(row.record())?;
                    w.flush()?;
                }
                if let Err(e) = csv_out
                    .write_all(&line)
                    .and_then(|_| csv_out.flush())
                    .with_context(|| format!("appending to {}", output.display()))
                {
                    return fail(e);
                }
                rows.push(row);
            }
        }
        Ok(())
    });
    result?;
    drop(csv_out);
    rows.sort_by(|a, b| {
        let key = |r: &ResultRow| (r.ka, r.ebn0_db);
        let pos = |r: &ResultRow| exp.points.iter().position(|p| (p.cfg.k_active, p.cfg.ebn0_db) == key(r));
        pos(a).cmp(&pos(b))
    });
    write_csv(output, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_seeds_are_frozen() {
        assert_eq!(frame_seed(1, 0, 0), derive_seed(1, &[0, 0]));
        assert_ne!(frame_seed(1, 0, 1), frame_seed(1, 1, 0));
    }

    #[test]
    fn torn_journal_lines_are_skipped() {
        let dir = std::env::temp_dir().join(format!("skp-journal-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("r.csv");
        std::fs::write(progress_path(&out), "0,0\n0,1\n0,2").unwrap();
        std::fs::write(frames_path(&out), "0,0,1,3,0.5\n0,1,0,4,0.25\n0,2,0").unwrap();
        let j = load_journal(&out).unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j[&(0, 1)].trials_used, 4);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
