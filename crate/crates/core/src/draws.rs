//! Long-format draw log: one `(chain, iteration, parameter_name, value)`
//! row per stored value. Values are written with the shortest decimal form
//! that parses back to the identical `f64`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sampler::{PosteriorSamples, SamplerConfig};

pub fn write_draws_csv<W: Write>(samples: &[PosteriorSamples], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["chain", "iteration", "parameter_name", "value"])?;
    for s in samples {
        let chain = s.chain.to_string();
        for (it, draw) in s.iterations.iter().zip(&s.draws) {
            let it = it.to_string();
            for (name, v) in s.names.iter().zip(draw) {
                w.write_record([chain.as_str(), it.as_str(), name.as_str(), v.to_string().as_str()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_draws(samples: &[PosteriorSamples], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_draws_csv(samples, std::io::BufWriter::new(file))
}

struct Building {
    names: Vec<String>,
    iterations: Vec<usize>,
    draws: Vec<Vec<f64>>,
}

/// Reads a draw log back into per-chain samples. Sampler settings are not
/// part of the log, so `config` holds defaults.
pub fn read_draws_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<PosteriorSamples>> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["chain", "iteration", "parameter_name", "value"] {
        return Err(parse_err(1, "expected header chain,iteration,parameter_name,value".into()));
    }
    let mut chains: BTreeMap<usize, Building> = BTreeMap::new();
    let mut last_line = 1;
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(last_line + 1, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(last_line + 1, |p| p.line());
        last_line = line;
        if row.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let chain: usize = row[0].parse().map_err(|_| parse_err(line, format!("bad chain `{}`", &row[0])))?;
        let iteration: usize = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad iteration `{}`", &row[1])))?;
        let value: f64 = row[3].parse().map_err(|_| parse_err(line, format!("bad value `{}`", &row[3])))?;
        let name = &row[2];
        let b = chains.entry(chain).or_insert_with(|| Building {
            names: Vec::new(),
            iterations: Vec::new(),
            draws: Vec::new(),
        });
        if b.iterations.last() != Some(&iteration) {
            if let (Some(prev), Some(draw)) = (b.iterations.last(), b.draws.last()) {
                if draw.len() != b.names.len() {
                    return Err(parse_err(
                        line,
                        format!("chain {chain} iteration {prev} has {} of {} parameters", draw.len(), b.names.len()),
                    ));
                }
                if iteration <= *prev {
                    return Err(parse_err(line, format!("iterations out of order in chain {chain}")));
                }
            }
            b.iterations.push(iteration);
            b.draws.push(Vec::new());
        }
        let first_iteration = b.iterations.len() == 1;
        let draw = b.draws.last_mut().expect("pushed above");
        if first_iteration {
            if b.names.iter().any(|n| n == name) {
                return Err(parse_err(line, format!("parameter `{name}` repeated")));
            }
            b.names.push(name.to_string());
        } else if b.names.get(draw.len()).map(String::as_str) != Some(name) {
            return Err(parse_err(line, format!("unexpected parameter `{name}` in chain {chain}")));
        }
        draw.push(value);
    }
    let mut out = Vec::with_capacity(chains.len());
    for (chain, b) in chains {
        if let Some(draw) = b.draws.last() {
            if draw.len() != b.names.len() {
                return Err(parse_err(
                    last_line,
                    format!(
                        "file ends inside chain {chain} iteration {}: {} of {} parameters",
                        b.iterations.last().expect("non-empty"),
                        draw.len(),
                        b.names.len()
                    ),
                ));
            }
        }
        out.push(PosteriorSamples {
            chain,
            seed: 0,
            config: SamplerConfig::default(),
            names: b.names,
            iterations: b.iterations,
            draws: b.draws,
            acceptance: Vec::new(),
        });
    }
    if out.is_empty() {
        return Err(parse_err(last_line, "draw file has no rows".into()));
    }
    if out.iter().any(|s| s.names != out[0].names) {
        return Err(parse_err(last_line, "chains disagree on parameter names".into()));
    }
    Ok(out)
}

pub fn load_draws(path: &Path) -> Result<Vec<PosteriorSamples>> {
    let file = std::fs::File::open(path)?;
    read_draws_csv(std::io::BufReader::new(file), path)
}
