//! DOT export of the task graph and timeline export of an execution.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::graph::{GraphSnapshot, GroupId, TaskId, TaskKind};

/// One executed task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub task: TaskId,
    pub worker: usize,
    pub start_ns: u64,
    pub end_ns: u64,
    pub kind: TaskKind,
    pub group: Option<GroupId>,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct DotOptions {
    pub show_activation: bool,
    pub show_group: bool,
    /// Fill nodes by kind.
    pub color: bool,
}

impl Default for DotOptions {
    fn default() -> Self {
        DotOptions {
            show_activation: true,
            show_group: true,
            color: true,
        }
    }
}

fn kind_color(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Normal => "white",
        TaskKind::Uncertain => "lightyellow",
        TaskKind::Copy => "lightblue",
        TaskKind::Speculative => "orange",
        TaskKind::Select => "palegreen",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Nodes are sorted by task id and edges by (source, target), so identical
/// insertion sequences give identical text.
pub fn generate_dot(graph: &GraphSnapshot, options: &DotOptions) -> String {
    let mut out = String::from("digraph {\n");
    for t in &graph.tasks {
        let _ = write!(
            out,
            "  {} [label=\"{}\", kind=\"{}\"",
            t.id,
            escape(&t.label),
            t.kind.as_str()
        );
        if options.show_activation {
            let _ = write!(out, ", activation=\"{}\"", t.activation.as_str());
        }
        if options.show_group {
            if let Some(g) = t.group {
                let _ = write!(out, ", group=\"{g}\"");
            }
        }
        if options.color {
            let _ = write!(out, ", style=filled, fillcolor=\"{}\"", kind_color(t.kind));
            if t.activation == crate::graph::Activation::Disabled {
                out.push_str(", color=gray, fontcolor=gray");
            }
        }
        out.push_str("];\n");
    }
    for (from, to) in graph.edges() {
        let _ = writeln!(out, "  {from} -> {to};");
    }
    out.push_str("}\n");
    out
}

pub const TIMELINE_HEADER: &str = "task_id,worker,start_ns,end_ns,kind,group,label";

/// CSV timeline, one line per executed task.
pub fn timeline_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TIMELINE_HEADER);
    out.push('\n');
    for r in records {
        let group = r.group.map(|g| g.index().to_string()).unwrap_or_default();
        let label = if r.label.contains([',', '"', '\n']) {
            format!("\"{}\"", r.label.replace('"', "\"\""))
        } else {
            r.label.clone()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task.index(),
            r.worker,
            r.start_ns,
            r.end_ns,
            r.kind.as_str(),
            group,
            label
        );
    }
    out
}

/// Class of a bar in the Gantt chart.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BarClass {
    Init,
    Normal,
    Speculative,
    Runtime,
}

impl BarClass {
    pub fn color(self) -> &'static str {
        match self {
            BarClass::Init => "#7f7f7f",
            BarClass::Normal => "#1f77b4",
            BarClass::Speculative => "#ff7f0e",
            BarClass::Runtime => "#2ca02c",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BarClass::Init => "init",
            BarClass::Normal => "normal",
            BarClass::Speculative => "speculative",
            BarClass::Runtime => "runtime",
        }
    }
}

pub fn default_class(r: &TraceRecord) -> BarClass {
    match r.kind {
        TaskKind::Copy | TaskKind::Select => BarClass::Runtime,
        TaskKind::Speculative => BarClass::Speculative,
        TaskKind::Normal | TaskKind::Uncertain => BarClass::Normal,
    }
}

/// Self-contained SVG with one row per worker.
pub fn timeline_svg(records: &[TraceRecord], classify: impl Fn(&TraceRecord) -> BarClass) -> String {
    const WIDTH: f64 = 1000.0;
    const ROW: f64 = 24.0;
    const LEFT: f64 = 80.0;
    let workers = records.iter().map(|r| r.worker + 1).max().unwrap_or(0);
    let t0 = records.iter().map(|r| r.start_ns).min().unwrap_or(0);
    let t1 = records.iter().map(|r| r.end_ns).max().unwrap_or(0);
    let span = (t1 - t0).max(1) as f64;
    let height = ROW * (workers as f64 + 2.0);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">",
        WIDTH + LEFT + 10.0,
        height
    );
    for w in 0..workers {
        let y = ROW * w as f64;
        let _ = writeln!(out, "  <text x=\"4\" y=\"{:.1}\">worker {w}</text>", y + ROW * 0.7);
    }
    for r in records {
        let x = LEFT + WIDTH * (r.start_ns - t0) as f64 / span;
        let w = (WIDTH * (r.end_ns - r.start_ns) as f64 / span).max(0.5);
        let y = ROW * r.worker as f64 + 2.0;
        let class = classify(r);
        let _ = writeln!(
            out,
            "  <rect x=\"{x:.2}\" y=\"{y:.1}\" width=\"{w:.2}\" height=\"{:.1}\" fill=\"{}\"><title>{} {} [{}]</title></rect>",
            ROW - 4.0,
            class.color(),
            r.task,
            xml_escape(&r.label),
            class.name()
        );
    }
    let legend_y = ROW * workers as f64 + ROW * 0.8;
    for (i, class) in [BarClass::Init, BarClass::Normal, BarClass::Speculative, BarClass::Runtime]
        .into_iter()
        .enumerate()
    {
        let x = LEFT + 120.0 * i as f64;
        let _ = writeln!(
            out,
            "  <rect x=\"{x:.0}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.0}\" y=\"{:.1}\">{}</text>",
            legend_y - 10.0,
            class.color(),
            x + 16.0,
            legend_y,
            class.name()
        );
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<base>.trace.csv` and `<base>.svg`.
pub fn write_timeline(
    base: &Path,
    records: &[TraceRecord],
    classify: impl Fn(&TraceRecord) -> BarClass,
) -> io::Result<()> {
    let stem = base.to_string_lossy();
    let stem = stem.strip_suffix(".trace.csv").unwrap_or(&stem);
    fs::write(format!("{stem}.trace.csv"), timeline_csv(records))?;
    fs::write(format!("{stem}.svg"), timeline_svg(records, classify))
}
