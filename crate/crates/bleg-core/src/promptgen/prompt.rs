//! Three-part prompt assembly and the "Node[i]-x-Node[j]" graph serializer.

use regex::Regex;
use std::sync::OnceLock;

use crate::graphdata::BrainGraph;

use super::{PromptGenError, Result};

pub const SEP_GRAPH: &str = "\n\n### GRAPH DATA ###\n\n";
pub const SEP_QUERY: &str = "\n\n### QUERY ###\n\n";

/// Description, graph text, query, and their fixed-order concatenation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub description: String,
    pub graph_text: String,
    pub query: String,
    pub assembled: String,
}

fn format_weight(w: f64) -> String {
    let rounded = (w * 100.0).round() / 100.0;
    let canonical = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{canonical:.2}")
}

/// One "Node[i]-w-Node[j]" line per edge (i < j, (i, j) order), then a
/// final line of per-node mean features, 2 decimal places throughout.
pub fn serialize_graph(g: &BrainGraph, weights: &[f64]) -> Result<String> {
    if weights.len() != g.n * g.n {
        return Err(PromptGenError::Consistency(format!(
            "weight source has {} values for a {}-node graph",
            weights.len(),
            g.n
        )));
    }
    let mut out = String::new();
    for (i, j) in g.edges() {
        out.push_str(&format!("Node[{i}]-{}-Node[{j}]\n", format_weight(weights[i * g.n + j])));
    }
    let means: Vec<String> = (0..g.n).map(|v| format_weight(g.mean_feature(v))).collect();
    out.push_str(&format!("Features: {}\n", means.join(" ")));
    Ok(out)
}

fn edge_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Node\[(\d+)\]-(-?\d+(?:\.\d+)?)-Node\[(\d+)\]$").unwrap())
}

/// Parse a serialized graph section back into its (i, j, weight) edge list.
pub fn parse_graph_text(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let re = edge_line_re();
    let mut edges = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("Features:") {
            continue;
        }
        let caps = re
            .captures(line)
            .ok_or_else(|| PromptGenError::MalformedResponse(format!("unparseable edge line '{line}'")))?;
        let i: usize = caps[1].parse().unwrap();
        let w: f64 = caps[2].parse().unwrap();
        let j: usize = caps[3].parse().unwrap();
        edges.push((i, j, w));
    }
    Ok(edges)
}

/// Assemble the three-part prompt for one graph. The serialized weights come
/// from the node-feature matrix, which holds the correlation rows.
pub fn build_prompt(g: &BrainGraph) -> Result<PromptBundle> {
    if g.meta.task.is_empty() || g.meta.dataset.is_empty() {
        return Err(PromptGenError::Config("graph meta is missing dataset or task name".into()));
    }
    if g.meta.label_names.len() != 2 {
        return Err(PromptGenError::Config(format!(
            "need exactly 2 label names, got {:?}",
            g.meta.label_names
        )));
    }
    if g.feat_dim != g.n {
        return Err(PromptGenError::Consistency(format!(
            "prompt serialization expects correlation-row features (d = N), got d = {}",
            g.feat_dim
        )));
    }
    let description = format!(
        "You are an experienced neuroscience researcher. Please analyze a functional-connectivity \
brain network from the {dataset} dataset. The task is {task}. The result is '{l0}' or '{l1}'. \
Data is preprocessed through the AAL template with {n} brain regions.\n\
Names of the brain regions are: {regions}.",
        dataset = g.meta.dataset,
        task = g.meta.task,
        l0 = g.meta.label_names[0],
        l1 = g.meta.label_names[1],
        n = g.n,
        regions = g.regions.join(", "),
    );
    let graph_text = serialize_graph(g, &g.features)?;
    let query = format!(
        "Analyze the connectivity pattern above. Every conclusion must be supported by direct \
evidence from the input data. Your output must strictly obey a JSON object with this structure:\n\
{{\n  \"analysis\": \"analysis for result\",\n  \"key_features\": [\"feature 1\", \"feature 2\"],\n  \
\"prediction\": \"prediction of the data, must be '{l0}' or '{l1}'\",\n  \"certainty\": \
\"confidence of your prediction, an integer between 1 and 5\"\n}}\nRespond with only the JSON object.",
        l0 = g.meta.label_names[0],
        l1 = g.meta.label_names[1],
    );
    let assembled = format!("{description}{SEP_GRAPH}{graph_text}{SEP_QUERY}{query}");
    Ok(PromptBundle { description, graph_text, query, assembled })
}

/// Invert the assembly: recover (description, graph_text, query).
pub fn split_assembled(assembled: &str) -> Result<(String, String, String)> {
    let (description, rest) = assembled
        .split_once(SEP_GRAPH)
        .ok_or_else(|| PromptGenError::Consistency("missing graph separator".into()))?;
    let (graph_text, query) = rest
        .split_once(SEP_QUERY)
        .ok_or_else(|| PromptGenError::Consistency("missing query separator".into()))?;
    Ok((description.to_string(), graph_text.to_string(), query.to_string()))
}
