//! Corpus directories and JSONL files.
//!
//! Corpus layout: `<dir>/<family>/methods/NN_<name>.mj` plus
//! `<dir>/<family>/tests.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, Family};
use crate::extractor::UnitTest;
use crate::minilang::{parse_method_with, signature_of, Invocation, Signatures};

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Serialize, Deserialize)]
struct TestsFile {
    family: String,
    tests: Vec<TestEntry>,
}

#[derive(Serialize, Deserialize)]
struct TestEntry {
    id: String,
    calls: Vec<Invocation>,
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DatasetError> {
    for family in &corpus.families {
        let fdir = dir.join(&family.name);
        let mdir = fdir.join("methods");
        fs::create_dir_all(&mdir).map_err(|e| io_err(&mdir, e))?;
        for (i, m) in family.methods.iter().enumerate() {
            let path = mdir.join(format!("{:02}_{}.mj", i, m.name));
            let mut text = m.source.clone();
            if !text.ends_with('\n') {
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        }
        let tests = TestsFile {
            family: family.name.clone(),
            tests: family.tests.iter().map(|t| TestEntry { id: t.id.clone(), calls: t.calls.clone() }).collect(),
        };
        let path = fdir.join("tests.json");
        let json = serde_json::to_string_pretty(&tests).map_err(|e| io_err(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reads every family directory under `dir`, in name order.
pub fn read_corpus(dir: &Path) -> Result<Corpus, DatasetError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("tests.json").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(io_err(dir, "no family directories (expected <family>/tests.json)"));
    }
    let families = names.iter().map(|n| read_family(&dir.join(n))).collect::<Result<_, _>>()?;
    Ok(Corpus { families })
}

pub fn read_family(fdir: &Path) -> Result<Family, DatasetError> {
    let mdir = fdir.join("methods");
    let mut files: Vec<_> = fs::read_dir(&mdir)
        .map_err(|e| io_err(&mdir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "mj"))
        .collect();
    files.sort();
    let mut sources = Vec::with_capacity(files.len());
    for p in &files {
        sources.push((p.clone(), fs::read_to_string(p).map_err(|e| io_err(p, e))?));
    }
    // Signatures first, so methods may call each other in any order.
    let mut sigs = Signatures::new();
    for (p, src) in &sources {
        let (ast, _) = crate::minilang::parse_syntax(src).map_err(|e| io_err(p, e))?;
        sigs.insert(ast.name.clone(), signature_of(&ast));
    }
    let mut methods = Vec::with_capacity(sources.len());
    for (p, src) in &sources {
        methods.push(parse_method_with(src, &sigs).map_err(|e| io_err(p, e))?);
    }
    let tpath = fdir.join("tests.json");
    let text = fs::read_to_string(&tpath).map_err(|e| io_err(&tpath, e))?;
    let tf: TestsFile = serde_json::from_str(&text).map_err(|e| io_err(&tpath, e))?;
    let tests = tf.tests.into_iter().map(|t| UnitTest::new(t.id, tf.family.clone(), t.calls)).collect();
    Ok(Family { name: tf.family, methods, tests })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| DatasetError::Format {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let json = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}
