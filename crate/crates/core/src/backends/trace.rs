//! Line-delimited trace files recording one path's decode stream, and the
//! replay provider that serves them back through the provider contract.
//!
//! Layout: one `<query-id>/<path>.ultrace` file per path. The first line is
//! a header, each following line one step record. Values are binary64
//! serialized as shortest round-tripping decimals, so a write/read cycle is
//! bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{
    HiddenStateProvider, PathId, PathStream, ProviderCaps, StepEvent, SyntheticProvider,
};
use crate::error::{Result, UlxError};
use crate::logic_space::LanguageId;
use crate::numerics::Vector;

pub const TRACE_SCHEMA: &str = "ulx-trace/1";
pub const TRACE_EXT: &str = "ultrace";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema: String,
    dim: usize,
    layer_ids: Vec<usize>,
    /// Path id string ("en", or "en#2" for mono-mode replicas).
    language: String,
    tokenizer: String,
    /// Last-token query rendition states by layer, for selection.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    rendition: BTreeMap<String, Vec<f64>>,
    /// Full decoded text of the completed stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_text: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    step: usize,
    token: u32,
    states: BTreeMap<String, Vec<f64>>,
}

/// One recorded path stream.
#[derive(Debug, Clone)]
pub struct TraceFile {
    pub path_id: PathId,
    pub dim: usize,
    pub layer_ids: Vec<usize>,
    pub tokenizer: String,
    pub rendition: BTreeMap<usize, Vector>,
    pub final_text: Option<String>,
    pub tokens: Vec<u32>,
    /// states[t][layer]
    pub states: Vec<BTreeMap<usize, Vector>>,
}

impl TraceFile {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let header = HeaderLine {
            schema: TRACE_SCHEMA.to_string(),
            dim: self.dim,
            layer_ids: self.layer_ids.clone(),
            language: self.path_id.to_string(),
            tokenizer: self.tokenizer.clone(),
            rendition: self
                .rendition
                .iter()
                .map(|(l, v)| (l.to_string(), v.as_slice().to_vec()))
                .collect(),
            final_text: self.final_text.clone(),
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (t, token) in self.tokens.iter().enumerate() {
            let record = RecordLine {
                step: t,
                token: *token,
                states: self.states[t]
                    .iter()
                    .map(|(l, v)| (l.to_string(), v.as_slice().to_vec()))
                    .collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file_name = path.display().to_string();
        let parse_err = |record: usize, message: String| UlxError::Parse {
            file: file_name.clone(),
            record,
            message,
        };
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();

        let header_text = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing header line".into()))?
            .map_err(UlxError::Io)?;
        let header: HeaderLine = serde_json::from_str(&header_text)
            .map_err(|e| parse_err(0, format!("bad header: {e}")))?;
        if header.schema != TRACE_SCHEMA {
            return Err(parse_err(
                0,
                format!("schema {:?}, expected {TRACE_SCHEMA:?}", header.schema),
            ));
        }
        let path_id: PathId = header
            .language
            .parse()
            .map_err(|e| parse_err(0, format!("bad path id: {e}")))?;
        let expected_layers: BTreeSet<usize> = header.layer_ids.iter().copied().collect();

        let mut rendition = BTreeMap::new();
        for (key, values) in header.rendition {
            let layer: usize = key
                .parse()
                .map_err(|_| parse_err(0, format!("bad rendition layer key {key:?}")))?;
            if values.len() != header.dim {
                return Err(parse_err(
                    0,
                    format!("rendition at layer {layer} has {} values, dim is {}", values.len(), header.dim),
                ));
            }
            rendition.insert(layer, Vector::new(values)?);
        }

        let mut tokens = Vec::new();
        let mut states = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(UlxError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordLine = serde_json::from_str(&line)
                .map_err(|e| parse_err(idx, format!("bad record: {e}")))?;
            if record.step != idx {
                return Err(parse_err(
                    idx,
                    format!("non-contiguous step {}, expected {idx}", record.step),
                ));
            }
            let mut layer_states = BTreeMap::new();
            for (key, values) in record.states {
                let layer: usize = key
                    .parse()
                    .map_err(|_| parse_err(idx, format!("bad layer key {key:?}")))?;
                if !expected_layers.contains(&layer) {
                    return Err(parse_err(idx, format!("layer {layer} not in header layer_ids")));
                }
                if values.len() != header.dim {
                    return Err(parse_err(
                        idx,
                        format!("state at layer {layer} has {} values, dim is {}", values.len(), header.dim),
                    ));
                }
                layer_states.insert(layer, Vector::new(values)?);
            }
            if layer_states.len() != expected_layers.len() {
                return Err(parse_err(
                    idx,
                    format!(
                        "record covers {} layers, header declares {}",
                        layer_states.len(),
                        expected_layers.len()
                    ),
                ));
            }
            tokens.push(record.token);
            states.push(layer_states);
        }

        Ok(TraceFile {
            path_id,
            dim: header.dim,
            layer_ids: header.layer_ids,
            tokenizer: header.tokenizer,
            rendition,
            final_text: header.final_text,
            tokens,
            states,
        })
    }
}

/// Drain each path's stream from `provider` to its natural end and write one
/// trace per path under `<out_root>/<query_id>/`. Returns the query
/// directory. `rendition_layers` controls which layers get rendition states
/// recorded in the header.
pub fn record_traces(
    provider: &dyn HiddenStateProvider,
    query_id: &str,
    paths: &[PathId],
    layers: &[usize],
    rendition_layers: &[usize],
    out_root: &Path,
) -> Result<PathBuf> {
    let dir = out_root.join(query_id);
    std::fs::create_dir_all(&dir)?;
    for path_id in paths {
        let mut stream = provider.open_path(path_id, layers)?;
        let mut tokens = Vec::new();
        let mut states = Vec::new();
        loop {
            let ev = stream.step()?;
            tokens.push(ev.token);
            states.push(ev.states);
            if ev.finished {
                break;
            }
        }
        let mut rendition = BTreeMap::new();
        for &layer in rendition_layers {
            rendition.insert(layer, provider.rendition_state(path_id.language(), layer)?);
        }
        let trace = TraceFile {
            path_id: path_id.clone(),
            dim: provider.caps().dim,
            layer_ids: layers.to_vec(),
            tokenizer: "synthetic-v1".to_string(),
            rendition,
            final_text: Some(stream.decode_text()),
            tokens,
            states,
        };
        trace.write_to(&dir.join(format!("{path_id}.{TRACE_EXT}")))?;
    }
    Ok(dir)
}

/// Write a parallel validation corpus as one-record traces:
/// `<out_root>/<sample>/<language>.ultrace`, whose single record carries the
/// sample's states at `layers`. `ulx fit` consumes this layout.
pub fn write_validation_traces(
    provider: &SyntheticProvider,
    layers: &[usize],
    out_root: &Path,
) -> Result<usize> {
    let val = provider.validation_set(layers)?;
    // Regroup (sample, language) -> layer states.
    let mut grouped: BTreeMap<(String, LanguageId), BTreeMap<usize, Vector>> = BTreeMap::new();
    for item in val.items() {
        grouped
            .entry((item.sample.clone(), item.language.clone()))
            .or_default()
            .insert(item.layer, item.state.clone());
    }
    let mut written = 0;
    for ((sample, language), states) in grouped {
        let dir = out_root.join(&sample);
        std::fs::create_dir_all(&dir)?;
        let trace = TraceFile {
            path_id: PathId::for_language(language.clone()),
            dim: provider.caps().dim,
            layer_ids: states.keys().copied().collect(),
            tokenizer: "synthetic-v1".to_string(),
            rendition: BTreeMap::new(),
            final_text: None,
            tokens: vec![0],
            states: vec![states],
        };
        trace.write_to(&dir.join(format!("{language}.{TRACE_EXT}")))?;
        written += 1;
    }
    Ok(written)
}

/// Replay provider over one query's trace directory.
pub struct TraceProvider {
    query_id: String,
    caps: ProviderCaps,
    traces: Arc<BTreeMap<PathId, TraceFile>>,
}

impl TraceProvider {
    pub fn open(query_dir: &Path) -> Result<Self> {
        let query_id = query_dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "query".to_string());
        let mut traces = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(query_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == TRACE_EXT))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(UlxError::Config(format!(
                "no .{TRACE_EXT} files in {}",
                query_dir.display()
            )));
        }
        let mut dim = None;
        let mut max_layer = 0;
        for entry in entries {
            let trace = TraceFile::read_from(&entry)?;
            match dim {
                None => dim = Some(trace.dim),
                Some(d) if d != trace.dim => {
                    return Err(UlxError::Dimension(format!(
                        "trace {} has dim {}, others have {d}",
                        entry.display(),
                        trace.dim
                    )))
                }
                _ => {}
            }
            max_layer = max_layer.max(trace.layer_ids.iter().copied().max().unwrap_or(0));
            traces.insert(trace.path_id.clone(), trace);
        }
        let mut languages: Vec<LanguageId> = traces
            .keys()
            .map(|p| p.language().clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        languages.sort();
        let caps = ProviderCaps {
            dim: dim.expect("at least one trace"),
            layers: max_layer + 1,
            languages,
        };
        Ok(TraceProvider {
            query_id,
            caps,
            traces: Arc::new(traces),
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn paths(&self) -> Vec<PathId> {
        self.traces.keys().cloned().collect()
    }

    fn trace_for_language(&self, language: &LanguageId) -> Option<&TraceFile> {
        // Prefer the bare-language path, else the lowest replica.
        self.traces
            .get(&PathId::for_language(language.clone()))
            .or_else(|| {
                self.traces
                    .iter()
                    .find(|(p, _)| p.language() == language)
                    .map(|(_, t)| t)
            })
    }
}

impl HiddenStateProvider for TraceProvider {
    fn caps(&self) -> &ProviderCaps {
        &self.caps
    }

    fn rendition_state(&self, language: &LanguageId, layer: usize) -> Result<Vector> {
        let trace = self
            .trace_for_language(language)
            .ok_or_else(|| UlxError::Backend {
                path: language.to_string(),
                message: "no trace for language".into(),
            })?;
        trace
            .rendition
            .get(&layer)
            .cloned()
            .ok_or_else(|| UlxError::Backend {
                path: language.to_string(),
                message: format!("trace has no rendition state at layer {layer}"),
            })
    }

    fn open_path(&self, path: &PathId, monitored_layers: &[usize]) -> Result<Box<dyn PathStream>> {
        let trace = self.traces.get(path).ok_or_else(|| UlxError::Backend {
            path: path.to_string(),
            message: "no trace for path".into(),
        })?;
        let stored: BTreeSet<usize> = trace.layer_ids.iter().copied().collect();
        for m in monitored_layers {
            if !stored.contains(m) {
                return Err(UlxError::Backend {
                    path: path.to_string(),
                    message: format!("trace lacks layer {m}"),
                });
            }
        }
        Ok(Box::new(ReplayStream {
            traces: Arc::clone(&self.traces),
            path: path.clone(),
            monitored: monitored_layers.to_vec(),
            t: 0,
        }))
    }

    fn full_length(&self, path: &PathId) -> Result<usize> {
        self.traces
            .get(path)
            .map(TraceFile::len)
            .ok_or_else(|| UlxError::Backend {
                path: path.to_string(),
                message: "no trace for path".into(),
            })
    }
}

struct ReplayStream {
    traces: Arc<BTreeMap<PathId, TraceFile>>,
    path: PathId,
    monitored: Vec<usize>,
    t: usize,
}

impl ReplayStream {
    fn trace(&self) -> &TraceFile {
        &self.traces[&self.path]
    }
}

impl PathStream for ReplayStream {
    fn step(&mut self) -> Result<StepEvent> {
        let trace = &self.traces[&self.path];
        if self.t >= trace.len() {
            return Err(UlxError::State(format!(
                "path {} stepped past the end of its {}-step trace",
                self.path,
                trace.len()
            )));
        }
        let t = self.t;
        let mut states = BTreeMap::new();
        for &layer in &self.monitored {
            states.insert(layer, trace.states[t][&layer].clone());
        }
        self.t += 1;
        Ok(StepEvent {
            token: trace.tokens[t],
            states,
            finished: self.t == trace.len(),
        })
    }

    fn decode_text(&self) -> String {
        let trace = self.trace();
        if self.t >= trace.len() {
            trace.final_text.clone().unwrap_or_default()
        } else {
            format!("<replay of {} truncated at step {}>", self.path, self.t)
        }
    }
}
