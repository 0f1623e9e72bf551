use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const TRIALS_FILE: &str = "trials.csv";

const TIMESERIES_HEADER: &str = "iter,agent,msd,msd_se,disagreement,disagreement_se,m4,m4_se";
const TRIALS_HEADER: &str = "trial,seed,diverged,excluded,peak_msd";

/// A time series of Monte-Carlo means with their standard errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl Series {
    pub fn with_capacity(n: usize) -> Self {
        Series {
            mean: Vec::with_capacity(n),
            se: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, mean: f64, se: f64) {
        self.mean.push(mean);
        self.se.push(se);
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean over `start..`, with the mean per-point SE as a conservative
    /// SE (exact when the points are perfectly correlated, an upper bound
    /// otherwise).
    pub fn window_mean(&self, start: usize) -> Estimate {
        let n = (self.len() - start) as f64;
        Estimate {
            value: self.mean[start..].iter().sum::<f64>() / n,
            se: self.se[start..].iter().sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `value + z·se ≤ bound`.
    pub fn below(&self, bound: f64, z: f64) -> bool {
        self.value + z * self.se <= bound
    }
}

/// Aggregated output of a Monte-Carlo experiment. Every series has
/// `horizon + 1` points; index 0 is the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub seeds: Vec<u64>,
    pub diverged: Vec<bool>,
    pub excluded: Vec<bool>,
    pub peak_msd: Vec<f64>,
    pub all_trials_diverged: bool,
    /// `E‖w° − w_{k,i}‖²` per agent.
    pub msd: Vec<Series>,
    /// Mean over `ℓ ≠ k` of `E‖w_{k,i} − w_{ℓ,i}‖²`.
    pub disagreement: Vec<Series>,
    /// `E‖w° − w_{k,i}‖⁴` per agent.
    pub m4: Vec<Series>,
    /// `max_k` of `msd` (SE of the maximizing agent).
    pub msd_max: Series,
    pub m4_max: Series,
    /// Mean over unordered pairs of `E‖w_k − w_ℓ‖²`.
    pub network_disagreement: Series,
    /// Largest pair of `E‖w_k − w_ℓ‖²`.
    pub worst_pair: Series,
}

fn max_series(per_agent: &[Series]) -> Series {
    let len = per_agent[0].len();
    let mut out = Series::with_capacity(len);
    for i in 0..len {
        let best = per_agent
            .iter()
            .max_by(|a, b| a.mean[i].total_cmp(&b.mean[i]))
            .expect("at least one agent");
        out.push(best.mean[i], best.se[i]);
    }
    out
}

impl ExperimentRecord {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        base_seed: u64,
        seeds: Vec<u64>,
        diverged: Vec<bool>,
        peak_msd: Vec<f64>,
        n_excluded: usize,
        all_trials_diverged: bool,
        msd: Vec<Series>,
        disagreement: Vec<Series>,
        m4: Vec<Series>,
        network_disagreement: Series,
        worst_pair: Series,
    ) -> Self {
        debug_assert_eq!(seeds.first().copied(), Some(base_seed));
        let excluded = if n_excluded > 0 {
            diverged.clone()
        } else {
            vec![false; diverged.len()]
        };
        ExperimentRecord {
            msd_max: max_series(&msd),
            m4_max: max_series(&m4),
            seeds,
            diverged,
            excluded,
            peak_msd,
            all_trials_diverged,
            msd,
            disagreement,
            m4,
            network_disagreement,
            worst_pair,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.msd.len()
    }

    pub fn n_trials(&self) -> usize {
        self.seeds.len()
    }

    pub fn horizon(&self) -> usize {
        self.msd_max.len() - 1
    }

    pub fn base_seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn n_diverged(&self) -> usize {
        self.diverged.iter().filter(|&&d| d).count()
    }

    pub fn n_excluded(&self) -> usize {
        self.excluded.iter().filter(|&&d| d).count()
    }

    /// Trials contributing to the averages.
    pub fn n_used(&self) -> usize {
        self.n_trials() - self.n_excluded()
    }

    /// Per-agent rows, then a `network` row (`msd_max`, pair-mean
    /// disagreement, `m4_max`) and a `worst_pair` row (disagreement only).
    pub fn timeseries_csv(&self) -> String {
        let mut s = String::from(TIMESERIES_HEADER);
        s.push('\n');
        for i in 0..=self.horizon() {
            for k in 0..self.n_agents() {
                let _ = writeln!(
                    s,
                    "{i},{k},{},{},{},{},{},{}",
                    self.msd[k].mean[i],
                    self.msd[k].se[i],
                    self.disagreement[k].mean[i],
                    self.disagreement[k].se[i],
                    self.m4[k].mean[i],
                    self.m4[k].se[i],
                );
            }
            let _ = writeln!(
                s,
                "{i},network,{},{},{},{},{},{}",
                self.msd_max.mean[i],
                self.msd_max.se[i],
                self.network_disagreement.mean[i],
                self.network_disagreement.se[i],
                self.m4_max.mean[i],
                self.m4_max.se[i],
            );
            let _ = writeln!(
                s,
                "{i},worst_pair,,,{},{},,",
                self.worst_pair.mean[i], self.worst_pair.se[i],
            );
        }
        s
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from(TRIALS_HEADER);
        s.push('\n');
        for t in 0..self.n_trials() {
            let _ = writeln!(
                s,
                "{t},{},{},{},{}",
                self.seeds[t], self.diverged[t], self.excluded[t], self.peak_msd[t]
            );
        }
        s
    }

    /// Writes `timeseries.csv` and `trials.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(TIMESERIES_FILE), self.timeseries_csv())?;
        fs::write(dir.join(TRIALS_FILE), self.trials_csv())?;
        Ok(())
    }
}

struct CsvReader<'a> {
    file: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> CsvReader<'a> {
    fn new(file: &'a str, text: &'a str, header: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == header => Ok(CsvReader { file, lines }),
            _ => Err(Error::Csv {
                file: file.into(),
                line: 1,
                message: format!("expected header `{header}`"),
            }),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Csv {
            file: self.file.into(),
            line: line + 1,
            message: message.into(),
        }
    }

    fn next_row(&mut self, width: usize) -> Option<Result<(usize, Vec<&'a str>)>> {
        let (i, line) = self.lines.next()?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != width {
            return Some(Err(self.err(i, format!("expected {width} columns, found {}", cols.len()))));
        }
        Some(Ok((i, cols)))
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(line, format!("cannot parse `{s}`")))
    }
}

/// Reads back the files written by [`ExperimentRecord::write_csv`].
pub fn read_record(dir: &Path) -> Result<ExperimentRecord> {
    let ts_text = fs::read_to_string(dir.join(TIMESERIES_FILE))?;
    let tr_text = fs::read_to_string(dir.join(TRIALS_FILE))?;

    let mut tr = CsvReader::new(TRIALS_FILE, &tr_text, TRIALS_HEADER)?;
    let (mut seeds, mut diverged, mut excluded, mut peak) = (vec![], vec![], vec![], vec![]);
    while let Some(row) = tr.next_row(5) {
        let (line, c) = row?;
        let t: usize = tr.parse(line, c[0])?;
        if t != seeds.len() {
            return Err(tr.err(line, "trial indices must be consecutive from 0"));
        }
        seeds.push(tr.parse(line, c[1])?);
        diverged.push(tr.parse(line, c[2])?);
        excluded.push(tr.parse(line, c[3])?);
        peak.push(tr.parse(line, c[4])?);
    }
    if seeds.is_empty() {
        return Err(tr.err(1, "no trials"));
    }

    let mut ts = CsvReader::new(TIMESERIES_FILE, &ts_text, TIMESERIES_HEADER)?;
    let mut msd: Vec<Series> = Vec::new();
    let mut dis: Vec<Series> = Vec::new();
    let mut m4: Vec<Series> = Vec::new();
    let (mut msd_max, mut net_dis, mut m4_max, mut worst) =
        (Series::default(), Series::default(), Series::default(), Series::default());
    let mut iter = 0usize;
    let mut next_agent = 0usize;
    while let Some(row) = ts.next_row(8) {
        let (line, c) = row?;
        let i: usize = ts.parse(line, c[0])?;
        if i != iter {
            return Err(ts.err(line, format!("expected iteration {iter}, found {i}")));
        }
        let num = |j: usize| ts.parse::<f64>(line, c[j]);
        match c[1] {
            "network" => {
                if next_agent == 0 || (iter > 0 && next_agent != msd.len()) {
                    return Err(ts.err(line, "network row before agent rows"));
                }
                msd_max.push(num(2)?, num(3)?);
                net_dis.push(num(4)?, num(5)?);
                m4_max.push(num(6)?, num(7)?);
            }
            "worst_pair" => {
                if [2, 3, 6, 7].iter().any(|&j| !c[j].is_empty()) {
                    return Err(ts.err(line, "worst_pair rows carry disagreement only"));
                }
                if msd_max.len() != iter + 1 {
                    return Err(ts.err(line, "worst_pair row before network row"));
                }
                worst.push(num(4)?, num(5)?);
                iter += 1;
                next_agent = 0;
            }
            agent => {
                let k: usize = ts.parse(line, agent)?;
                if k != next_agent {
                    return Err(ts.err(line, format!("expected agent {next_agent}, found {k}")));
                }
                if iter == 0 {
                    msd.push(Series::default());
                    dis.push(Series::default());
                    m4.push(Series::default());
                } else if k >= msd.len() {
                    return Err(ts.err(line, "agent count changed between iterations"));
                }
                msd[k].push(num(2)?, num(3)?);
                dis[k].push(num(4)?, num(5)?);
                m4[k].push(num(6)?, num(7)?);
                next_agent += 1;
            }
        }
    }
    if iter == 0 || next_agent != 0 || msd.is_empty() {
        return Err(ts.err(0, "truncated time series"));
    }
    let all_trials_diverged = diverged.iter().all(|&d| d);
    Ok(ExperimentRecord {
        seeds,
        diverged,
        excluded,
        peak_msd: peak,
        all_trials_diverged,
        msd,
        disagreement: dis,
        m4,
        msd_max,
        m4_max,
        network_disagreement: net_dis,
        worst_pair: worst,
    })
}

/// Steady-state summary over the final fraction of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub window_start: usize,
    pub window_len: usize,
    pub msd_max: Estimate,
    pub m4_max: Estimate,
    pub disagreement: Estimate,
    pub worst_pair: Estimate,
    pub msd: Vec<Estimate>,
    /// Network disagreement over `msd_max`.
    pub ratio: Estimate,
}

/// Minimum number of points in a steady-state window.
pub const MIN_WINDOW: usize = 10;

pub fn steady_state(record: &ExperimentRecord, window_fraction: f64) -> Result<SteadyState> {
    if !(window_fraction > 0.0 && window_fraction <= 0.5) {
        return Err(Error::param(
            "window_fraction",
            format!("must lie in (0, 0.5], got {window_fraction}"),
        ));
    }
    let len = record.msd_max.len();
    let window_len = (window_fraction * len as f64).floor() as usize;
    if window_len < MIN_WINDOW {
        return Err(Error::param(
            "window_fraction",
            format!("window of {window_len} points is shorter than {MIN_WINDOW}"),
        ));
    }
    let start = len - window_len;
    let msd_max = record.msd_max.window_mean(start);
    let disagreement = record.network_disagreement.window_mean(start);
    let r = if msd_max.value > 0.0 {
        disagreement.value / msd_max.value
    } else {
        0.0
    };
    let rel = |e: &Estimate| if e.value > 0.0 { e.se / e.value } else { 0.0 };
    let ratio = Estimate {
        value: r,
        se: r * rel(&disagreement).hypot(rel(&msd_max)),
    };
    Ok(SteadyState {
        window_start: start,
        window_len,
        msd_max,
        m4_max: record.m4_max.window_mean(start),
        disagreement,
        worst_pair: record.worst_pair.window_mean(start),
        msd: record.msd.iter().map(|s| s.window_mean(start)).collect(),
        ratio,
    })
}
