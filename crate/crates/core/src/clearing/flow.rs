use std::collections::VecDeque;
use std::fmt::Write as _;

/// Augmentations smaller than this are treated as zero.
const FLOW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    pub labels: Vec<String>,
    pub arcs: Vec<FlowArc>,
    pub source: usize,
    pub sink: usize,
}

impl FlowNetwork {
    /// A network with only a source (vertex 0) and a sink (vertex 1).
    pub fn new() -> Self {
        FlowNetwork {
            labels: vec!["source".into(), "sink".into()],
            arcs: Vec::new(),
            source: 0,
            sink: 1,
        }
    }

    pub fn add_vertex(&mut self, label: impl Into<String>) -> usize {
        self.labels.push(label.into());
        self.labels.len() - 1
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) -> usize {
        debug_assert!(capacity >= 0.0, "negative capacity {capacity}");
        self.arcs.push(FlowArc { from, to, capacity: capacity.max(0.0) });
        self.arcs.len() - 1
    }

    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    /// Graphviz rendering, with flows when given.
    pub fn to_dot(&self, flow: Option<&[f64]>) -> String {
        let mut out = String::from("digraph clearing {\n  rankdir=LR;\n");
        for (v, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "  n{v} [label=\"{label}\"];");
        }
        for (i, a) in self.arcs.iter().enumerate() {
            let text = match flow {
                Some(f) => format!("{}/{}", f[i], a.capacity),
                None => format!("{}", a.capacity),
            };
            let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", a.from, a.to, text);
        }
        out.push_str("}\n");
        out
    }
}

impl Default for FlowNetwork {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlow {
    pub value: f64,
    /// Flow on each arc, indexed like [`FlowNetwork::arcs`].
    pub arc_flow: Vec<f64>,
}

struct Residual {
    to: usize,
    cap: f64,
    rev: usize,
}

/// Maximum s-t flow by shortest augmenting paths over BFS level graphs.
pub fn max_flow(network: &FlowNetwork) -> MaxFlow {
    let n = network.num_vertices();
    let mut graph: Vec<Vec<Residual>> = (0..n).map(|_| Vec::new()).collect();
    let mut handles = Vec::with_capacity(network.arcs.len());
    for a in &network.arcs {
        let fwd = graph[a.from].len();
        let bwd = graph[a.to].len() + usize::from(a.from == a.to);
        graph[a.from].push(Residual { to: a.to, cap: a.capacity, rev: bwd });
        graph[a.to].push(Residual { to: a.from, cap: 0.0, rev: fwd });
        handles.push((a.from, fwd));
    }

    let (s, t) = (network.source, network.sink);
    let mut value = 0.0;
    let mut level = vec![usize::MAX; n];
    let mut cursor = vec![0usize; n];
    loop {
        level.fill(usize::MAX);
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for e in &graph[v] {
                if e.cap > FLOW_EPS && level[e.to] == usize::MAX {
                    level[e.to] = level[v] + 1;
                    queue.push_back(e.to);
                }
            }
        }
        if level[t] == usize::MAX {
            break;
        }
        cursor.fill(0);
        loop {
            let pushed = augment(&mut graph, &level, &mut cursor, s, t, f64::INFINITY);
            if pushed <= FLOW_EPS {
                break;
            }
            value += pushed;
        }
    }

    let arc_flow = network
        .arcs
        .iter()
        .zip(&handles)
        .map(|(a, &(v, i))| (a.capacity - graph[v][i].cap).clamp(0.0, a.capacity))
        .collect();
    MaxFlow { value, arc_flow }
}

fn augment(
    graph: &mut [Vec<Residual>],
    level: &[usize],
    cursor: &mut [usize],
    v: usize,
    t: usize,
    limit: f64,
) -> f64 {
    if v == t {
        return limit;
    }
    while cursor[v] < graph[v].len() {
        let i = cursor[v];
        let (to, cap) = (graph[v][i].to, graph[v][i].cap);
        if cap > FLOW_EPS && level[to] == level[v] + 1 {
            let pushed = augment(graph, level, cursor, to, t, limit.min(cap));
            if pushed > FLOW_EPS {
                graph[v][i].cap -= pushed;
                let rev = graph[v][i].rev;
                graph[to][rev].cap += pushed;
                return pushed;
            }
        }
        cursor[v] += 1;
    }
    0.0
}
