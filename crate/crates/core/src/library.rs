//! Scenario library: verification samples grouped by policy generation,
//! persisted as an append-only JSON-lines file and replayed during
//! training with a bias toward recent generations.
//!
//! File layout, one JSON object per line:
//!
//! ```text
//! {"kind":"header","version":1,"bounds":{...}}
//! {"kind":"generation","gen":0,"policy_hash":"…","tau":2.0,"algo":"AMS","n":512}
//! {"algo":"AMS","gen":0,"i":0,"params":[…],"objective":…,"collided":false}
//! …
//! {"kind":"commit","gen":0,"count":512,"checksum":"<sha256 of the block>"}
//! ```
//!
//! A block only counts once its commit line is present and the checksum
//! matches. Anything after the last commit is an interrupted append and is
//! dropped on open.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::falsify::{Algorithm, VerifyRecord};
use crate::sim::{ScenarioBounds, ScenarioParams};
use crate::trainer::{sample_uniform, ScenarioSampler};
use crate::util::{self, Rng};

pub const FORMAT_VERSION: u32 = 1;

pub type LibraryEntry = VerifyRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationBlock {
    pub gen: usize,
    pub policy_hash: String,
    pub tau: f64,
    pub algo: Algorithm,
    pub entries: Vec<LibraryEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        version: u32,
        bounds: ScenarioBounds,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_hash: Option<String>,
    },
    Generation {
        gen: usize,
        policy_hash: String,
        tau: f64,
        algo: Algorithm,
        n: usize,
    },
    Commit {
        gen: usize,
        count: usize,
        checksum: String,
    },
}

/// Where a replayed scenario comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Uniform,
    Generation(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    bounds: ScenarioBounds,
    blocks: Vec<GenerationBlock>,
    /// When set, only entries with `objective <= tau_filter` are replayed.
    pub tau_filter: Option<f64>,
    /// Hash of the run configuration that produced the file, if any.
    pub config_hash: Option<String>,
}

/// Sampling weights `[P_U, P_0, …, P_G]` for `G + 1` stored generations:
/// `P_U = 1/2` and `P_k = (1/2)(k + 1) / T` with `T = (G+1)(G+2)/2`.
/// With no generations everything goes to the uniform source.
pub fn generation_weights(n_generations: usize) -> Vec<f64> {
    if n_generations == 0 {
        return vec![1.0];
    }
    let g1 = n_generations as f64;
    let total = g1 * (g1 + 1.0) / 2.0;
    let mut w = vec![0.5];
    w.extend((0..n_generations).map(|k| 0.5 * (k as f64 + 1.0) / total));
    w
}

impl Library {
    pub fn new(bounds: ScenarioBounds) -> Self {
        Self {
            bounds,
            blocks: Vec::new(),
            tau_filter: None,
            config_hash: None,
        }
    }

    pub fn bounds(&self) -> &ScenarioBounds {
        &self.bounds
    }

    pub fn generations(&self) -> &[GenerationBlock] {
        &self.blocks
    }

    pub fn num_generations(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> Vec<f64> {
        generation_weights(self.blocks.len())
    }

    /// Append the verification set of generation `gen`, which must be the
    /// next index in sequence.
    pub fn add_generation(
        &mut self,
        gen: usize,
        algo: Algorithm,
        policy_hash: &str,
        tau: f64,
        entries: Vec<LibraryEntry>,
    ) -> Result<()> {
        if gen != self.blocks.len() {
            return Err(Error::GenerationGap {
                expected: self.blocks.len(),
                got: gen,
            });
        }
        for e in &entries {
            if e.gen != gen {
                return Err(Error::GenerationGap { expected: gen, got: e.gen });
            }
            ScenarioParams::from_slice(&e.params)?.validate(&self.bounds)?;
        }
        self.blocks.push(GenerationBlock {
            gen,
            policy_hash: policy_hash.to_string(),
            tau,
            algo,
            entries,
        });
        Ok(())
    }

    pub fn pick_source(&self, rng: &mut Rng) -> Source {
        let w = self.weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            acc += wk;
            if u < acc {
                return if k == 0 { Source::Uniform } else { Source::Generation(k - 1) };
            }
        }
        // only reachable through rounding in the cumulative sum
        match w.len() {
            1 => Source::Uniform,
            n => Source::Generation(n - 2),
        }
    }

    fn eligible(&self, gen: usize) -> Vec<&LibraryEntry> {
        self.blocks[gen]
            .entries
            .iter()
            .filter(|e| self.tau_filter.is_none_or(|t| e.objective <= t))
            .collect()
    }

    /// Draw a source by the generation weights, then an entry uniformly
    /// from it. A generation with no eligible entries yields a uniform draw.
    pub fn sample_scenario(&self, rng: &mut Rng) -> ScenarioParams {
        match self.pick_source(rng) {
            Source::Uniform => sample_uniform(&self.bounds, rng),
            Source::Generation(g) => {
                let pool = self.eligible(g);
                if pool.is_empty() {
                    return sample_uniform(&self.bounds, rng);
                }
                let e = pool[rng.random_range(0..pool.len())];
                ScenarioParams::new(e.params[0], e.params[1], e.params[2], e.params[3])
            }
        }
    }

    fn block_bytes(block: &GenerationBlock) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        serde_json::to_writer(
            &mut out,
            &Line::Generation {
                gen: block.gen,
                policy_hash: block.policy_hash.clone(),
                tau: block.tau,
                algo: block.algo,
                n: block.entries.len(),
            },
        )?;
        out.push(b'\n');
        out.extend(util::to_jsonl(&block.entries)?);
        Ok(out)
    }

    fn commit_bytes(block: &GenerationBlock, body: &[u8]) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&Line::Commit {
            gen: block.gen,
            count: block.entries.len(),
            checksum: util::sha256_hex(body),
        })?;
        out.push(b'\n');
        Ok(out)
    }

    fn header_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&Line::Header {
            version: FORMAT_VERSION,
            bounds: self.bounds,
            config_hash: self.config_hash.clone(),
        })?;
        out.push(b'\n');
        Ok(out)
    }

    /// Serialize the whole library.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.header_bytes()?;
        for b in &self.blocks {
            let body = Self::block_bytes(b)?;
            let commit = Self::commit_bytes(b, &body)?;
            out.extend(body);
            out.extend(commit);
        }
        Ok(out)
    }

    /// Write the whole library atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &self.to_bytes()?)
    }

    /// Append the last generation to an existing file written by this
    /// library (or create the file). The block becomes visible only once
    /// its commit line has been flushed.
    pub fn append_last(&self, path: &Path) -> Result<()> {
        let Some(block) = self.blocks.last() else {
            return Err(Error::InvalidArgument("library has no generation to append".into()));
        };
        if !path.exists() {
            return self.save(path);
        }
        let on_disk = Self::open(path)?;
        if on_disk.blocks.len() + 1 != self.blocks.len() {
            return Err(Error::GenerationGap {
                expected: on_disk.blocks.len(),
                got: block.gen,
            });
        }
        let body = Self::block_bytes(block)?;
        let commit = Self::commit_bytes(block, &body)?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(&body).map_err(|e| Error::io(path, e))?;
        f.sync_data().map_err(|e| Error::io(path, e))?;
        f.write_all(&commit).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))
    }

    /// Read a library file, dropping an uncommitted trailing block and
    /// truncating the file to its last commit.
    pub fn open(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (lib, committed_len) = Self::parse(&text, path)?;
        if committed_len < text.len() {
            warn!(
                "{}: dropping {} bytes after the last commit",
                path.display(),
                text.len() - committed_len
            );
            let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
            f.set_len(committed_len as u64).map_err(|e| Error::io(path, e))?;
        }
        Ok(lib)
    }

    /// Parse file contents. Returns the library and the byte length of the
    /// committed prefix.
    pub fn parse(text: &str, path: &Path) -> Result<(Self, usize)> {
        let fail = |line: usize, reason: String| Error::LibraryFormat {
            path: PathBuf::from(path),
            line,
            reason,
        };
        // byte offsets of each line start, and the end of the last commit
        let mut lines = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            lines.push((offset, raw));
            offset += raw.len();
        }
        let last_commit = lines.iter().rposition(|(_, l)| {
            l.ends_with('\n')
                && matches!(serde_json::from_str::<Line>(l.trim_end()), Ok(Line::Commit { .. }))
        });

        let Some((_, first)) = lines.first() else {
            return Err(fail(1, "empty file".into()));
        };
        let (bounds, config_hash) = match serde_json::from_str::<Line>(first.trim_end()) {
            Ok(Line::Header { version, bounds, config_hash }) if version == FORMAT_VERSION => {
                (bounds, config_hash)
            }
            Ok(Line::Header { version, .. }) => {
                return Err(fail(1, format!("unsupported version {version}")))
            }
            _ => return Err(fail(1, "missing header".into())),
        };
        let mut lib = Library::new(bounds);
        lib.config_hash = config_hash;
        let Some(last_commit) = last_commit else {
            let committed = if first.ends_with('\n') { first.len() } else { 0 };
            return Ok((lib, committed));
        };

        let mut open: Option<(GenerationBlock, usize, usize)> = None; // block, declared n, body start
        for (idx, (start, raw)) in lines.iter().enumerate().take(last_commit + 1).skip(1) {
            let lineno = idx + 1;
            let s = raw.trim_end();
            let value: serde_json::Value =
                serde_json::from_str(s).map_err(|e| fail(lineno, e.to_string()))?;
            if value.get("kind").is_some() {
                match serde_json::from_value::<Line>(value).map_err(|e| fail(lineno, e.to_string()))? {
                    Line::Header { .. } => return Err(fail(lineno, "unexpected header".into())),
                    Line::Generation { gen, policy_hash, tau, algo, n } => {
                        if open.is_some() {
                            return Err(fail(lineno, "generation started before commit".into()));
                        }
                        open = Some((
                            GenerationBlock { gen, policy_hash, tau, algo, entries: Vec::new() },
                            n,
                            *start,
                        ));
                    }
                    Line::Commit { gen, count, checksum } => {
                        let Some((block, n, body_start)) = open.take() else {
                            return Err(fail(lineno, "commit without generation".into()));
                        };
                        if gen != block.gen || count != block.entries.len() || n != count {
                            return Err(fail(lineno, format!(
                                "commit for gen {gen} with {count} entries does not match block (gen {}, {} entries)",
                                block.gen,
                                block.entries.len()
                            )));
                        }
                        if util::sha256_hex(&text.as_bytes()[body_start..*start]) != checksum {
                            return Err(fail(lineno, "checksum mismatch".into()));
                        }
                        let GenerationBlock { gen, policy_hash, tau, algo, entries } = block;
                        lib.add_generation(gen, algo, &policy_hash, tau, entries)
                            .map_err(|e| fail(lineno, e.to_string()))?;
                    }
                }
            } else {
                let entry: LibraryEntry =
                    serde_json::from_value(value).map_err(|e| fail(lineno, e.to_string()))?;
                let Some((block, _, _)) = open.as_mut() else {
                    return Err(fail(lineno, "entry outside a generation block".into()));
                };
                block.entries.push(entry);
            }
        }
        let (end, raw) = lines[last_commit];
        Ok((lib, end + raw.len()))
    }
}

impl ScenarioSampler for Library {
    fn sample(&self, rng: &mut Rng) -> ScenarioParams {
        self.sample_scenario(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    fn entries(gen: usize, n: usize, base: f64) -> Vec<LibraryEntry> {
        (0..n)
            .map(|i| LibraryEntry {
                algo: Algorithm::Splitting,
                gen,
                i,
                params: [base + i as f64 * 0.01, 50.0, 20.0, 30.0],
                objective: i as f64,
                collided: i == 0,
            })
            .collect()
    }

    fn lib(gens: usize) -> Library {
        let mut l = Library::new(ScenarioBounds::default());
        for g in 0..gens {
            l.add_generation(g, Algorithm::Splitting, "h", 2.0, entries(g, 5, 10.0 + g as f64)).unwrap();
        }
        l
    }

    #[test]
    fn weights_match_integer_formula() {
        for n in 1..12usize {
            let w = generation_weights(n);
            assert_eq!(w.len(), n + 1);
            assert_eq!(w[0], 0.5);
            // P_k · 2 · (G+1)(G+2)/2 = k + 1 with G + 1 = n
            let denom = (n * (n + 1)) as f64;
            for k in 0..n {
                assert!((w[k + 1] * denom - (k + 1) as f64).abs() < 1e-12);
            }
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w[1..].windows(2).all(|p| p[0] < p[1]));
        }
        assert_eq!(generation_weights(0), vec![1.0]);
    }

    #[test]
    fn source_frequencies_follow_weights() {
        let l = lib(3);
        let mut rng = rng_for(0, 0);
        let n = 60_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            match l.pick_source(&mut rng) {
                Source::Uniform => counts[0] += 1,
                Source::Generation(g) => counts[g + 1] += 1,
            }
        }
        for (c, w) in counts.iter().zip(l.weights()) {
            let f = *c as f64 / n as f64;
            let sd = (w * (1.0 - w) / n as f64).sqrt();
            assert!((f - w).abs() < 4.0 * sd, "{f} vs {w}");
        }
    }

    #[test]
    fn gap_and_out_of_range_rejected() {
        let mut l = lib(1);
        assert!(matches!(
            l.add_generation(2, Algorithm::MonteCarlo, "h", 2.0, vec![]),
            Err(Error::GenerationGap { expected: 1, got: 2 })
        ));
        let mut bad = entries(1, 1, 10.0);
        bad[0].params[1] = 500.0;
        assert!(matches!(
            l.add_generation(1, Algorithm::MonteCarlo, "h", 2.0, bad),
            Err(Error::ScenarioOutOfRange { .. })
        ));
    }

    #[test]
    fn tau_filter_restricts_replay() {
        let mut l = lib(1);
        l.tau_filter = Some(0.5);
        let mut rng = rng_for(1, 0);
        let mut from_lib = 0;
        for _ in 0..2000 {
            let s = l.sample_scenario(&mut rng);
            if s.d_mio0 == 50.0 {
                from_lib += 1;
                assert_eq!(s.v_ego0, 10.0);
            }
        }
        assert!(from_lib > 800);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.jsonl");
        let l = lib(3);
        l.save(&path).unwrap();
        assert_eq!(Library::open(&path).unwrap(), l);
    }

    #[test]
    fn append_then_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.jsonl");
        let mut l = lib(1);
        l.save(&path).unwrap();
        l.add_generation(1, Algorithm::CrossEntropy, "h2", 2.0, entries(1, 3, 20.0)).unwrap();
        l.append_last(&path).unwrap();
        assert_eq!(Library::open(&path).unwrap(), l);
        assert_eq!(fs::read(&path).unwrap(), l.to_bytes().unwrap());
    }

    #[test]
    fn interrupted_append_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.jsonl");
        let l = lib(2);
        l.save(&path).unwrap();
        let committed = fs::read(&path).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"generation\",\"gen\":2,\"policy_hash\":\"x\",\"tau\":2.0,\"algo\":\"MC\",\"n\":9}\n{\"algo\":\"MC\",\"ge")
            .unwrap();
        drop(f);
        assert_eq!(Library::open(&path).unwrap(), l);
        assert_eq!(fs::read(&path).unwrap(), committed);
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let l = lib(2);
        let text = String::from_utf8(l.to_bytes().unwrap()).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "{not json".into();
        let broken = lines.join("\n") + "\n";
        match Library::parse(&broken, Path::new("x")) {
            Err(Error::LibraryFormat { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tampered_block_fails_checksum() {
        let l = lib(1);
        let text = String::from_utf8(l.to_bytes().unwrap()).unwrap();
        let tampered = text.replacen("\"objective\":3.0", "\"objective\":0.5", 1);
        assert_ne!(tampered, text);
        match Library::parse(&tampered, Path::new("x")) {
            Err(Error::LibraryFormat { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("{other:?}"),
        }
    }
}
