//! Network coupling of compiled node and edge blocks.
//!
//! Each node block reads the complex current it injects into its lines
//! (`I_re`, `I_im`) and exposes its complex voltage (`V_re`, `V_im`), either
//! as states or as observed algebraic outputs. Each edge block reads the
//! voltages at both ends (`V_src_*`, `V_dst_*`) and observes the currents
//! leaving each endpoint into the line (`I_src_*`, `I_dst_*`).
//!
//! Node ids are 1-based. Flat state and parameter vectors are laid out node
//! by node in id order; edge parameters follow all node parameters in edge
//! order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::blocksys::{CompiledBlock, Scratch};
use crate::odesolve::{OdeSystem, Signal, Time};
use crate::scalar::Scalar;
use crate::symcore::{SymError, Symbol};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("interface mismatch in `{block}`: {detail}")]
    InterfaceMismatch { block: String, detail: String },
    #[error("node id {id} outside 1..={nodes}")]
    IndexOutOfRange { id: usize, nodes: usize },
    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),
    #[error("expected {expected} {what}, got {got}")]
    CountMismatch { what: &'static str, expected: usize, got: usize },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

fn mismatch(block: &CompiledBlock, detail: impl Into<String>) -> NetError {
    NetError::InterfaceMismatch { block: block.name().to_owned(), detail: detail.into() }
}

#[derive(Debug, Clone, Copy)]
enum Voltage {
    State(usize, usize),
    Observed(usize, usize),
}

/// A node block with its interface located.
#[derive(Debug, Clone)]
pub struct NodeModel {
    block: CompiledBlock,
    current: (usize, usize),
    voltage: Voltage,
    /// Remaining inputs, driven by signals.
    extra: Vec<(usize, Signal)>,
}

impl NodeModel {
    /// Locates the interface. Every input other than the current pair must
    /// be given a signal in `signals`, keyed by input path.
    pub fn new(block: CompiledBlock, signals: &[(&str, Signal)]) -> Result<Self, NetError> {
        let input = |name: &str| block.input_index(name).ok_or_else(|| mismatch(&block, format!("no input `{name}`")));
        let current = (input("I_re")?, input("I_im")?);
        let voltage = match (block.state_index("V_re"), block.state_index("V_im")) {
            (Some(r), Some(i)) => Voltage::State(r, i),
            _ => match (block.observed_index("V_re"), block.observed_index("V_im")) {
                (Some(r), Some(i)) => Voltage::Observed(r, i),
                _ => return Err(mismatch(&block, "no voltage pair `V_re`, `V_im`")),
            },
        };
        if matches!(voltage, Voltage::Observed(..)) && !block.observed_input_dependencies().is_empty() {
            return Err(mismatch(&block, "observed voltage depends on inputs"));
        }
        let mut extra = Vec::new();
        for (k, sym) in block.inputs().iter().enumerate() {
            if k == current.0 || k == current.1 {
                continue;
            }
            let path = sym.path();
            let sig = signals
                .iter()
                .find(|(n, _)| *n == path)
                .map(|(_, s)| s.clone())
                .ok_or_else(|| mismatch(&block, format!("input `{path}` has no signal")))?;
            extra.push((k, sig));
        }
        if let Some((n, _)) = signals.iter().find(|(n, _)| block.input_index(n).is_none()) {
            return Err(mismatch(&block, format!("signal for unknown input `{n}`")));
        }
        Ok(NodeModel { block, current, voltage, extra })
    }

    pub fn block(&self) -> &CompiledBlock {
        &self.block
    }

    /// Replaces the signal driving input `name`.
    pub fn set_signal(&mut self, name: &str, signal: Signal) -> Result<(), NetError> {
        let k = self.block.input_index(name).ok_or_else(|| mismatch(&self.block, format!("no input `{name}`")))?;
        let slot = self
            .extra
            .iter_mut()
            .find(|(i, _)| *i == k)
            .ok_or_else(|| mismatch(&self.block, format!("`{name}` is not a signal input")))?;
        slot.1 = signal;
        Ok(())
    }
}

/// A stateless edge block with its interface located.
#[derive(Debug, Clone)]
pub struct EdgeModel {
    block: CompiledBlock,
    /// Input slots for src re/im and dst re/im.
    v_in: [usize; 4],
    /// Observed slots for src re/im and dst re/im.
    i_out: [usize; 4],
}

impl EdgeModel {
    pub fn new(block: CompiledBlock) -> Result<Self, NetError> {
        if block.dim() != 0 {
            return Err(mismatch(&block, "edge blocks must be stateless"));
        }
        let mut v_in = [0; 4];
        for (slot, name) in v_in.iter_mut().zip(["V_src_re", "V_src_im", "V_dst_re", "V_dst_im"]) {
            *slot = block.input_index(name).ok_or_else(|| mismatch(&block, format!("no input `{name}`")))?;
        }
        let mut i_out = [0; 4];
        for (slot, name) in i_out.iter_mut().zip(["I_src_re", "I_src_im", "I_dst_re", "I_dst_im"]) {
            *slot = block.observed_index(name).ok_or_else(|| mismatch(&block, format!("no output `{name}`")))?;
        }
        if block.inputs().len() != 4 {
            return Err(mismatch(&block, "edge blocks take exactly the four voltage inputs"));
        }
        Ok(EdgeModel { block, v_in, i_out })
    }

    pub fn block(&self) -> &CompiledBlock {
        &self.block
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self, NetError> {
        for (k, &(a, b)) in edges.iter().enumerate() {
            for id in [a, b] {
                if id == 0 || id > nodes {
                    return Err(NetError::IndexOutOfRange { id, nodes });
                }
            }
            if a == b {
                return Err(NetError::SelfLoop(k + 1));
            }
        }
        Ok(Topology { nodes, edges })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Owner of a parameter block in the flat layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Element {
    Node(usize),
    Edge(usize),
}

#[derive(Debug, Clone, Copy)]
struct Incidence {
    edge: usize,
    at_src: bool,
}

/// Coupled network with flat state and parameter layouts.
#[derive(Debug, Clone)]
pub struct NetworkSystem {
    topology: Topology,
    nodes: Vec<NodeModel>,
    edges: Vec<EdgeModel>,
    state_offsets: Vec<usize>,
    param_offsets: Vec<usize>,
    mass: Vec<f64>,
    incidence: Vec<Vec<Incidence>>,
    dim: usize,
    n_params: usize,
    max_inputs: usize,
    max_observed: usize,
}

/// Builds the coupled system. `nodes[k]` sits at node id `k + 1`.
pub fn assemble(topology: Topology, nodes: Vec<NodeModel>, edges: Vec<EdgeModel>) -> Result<NetworkSystem, NetError> {
    if nodes.len() != topology.nodes {
        return Err(NetError::CountMismatch { what: "node models", expected: topology.nodes, got: nodes.len() });
    }
    if edges.len() != topology.edges.len() {
        return Err(NetError::CountMismatch { what: "edge models", expected: topology.edges.len(), got: edges.len() });
    }
    let mut state_offsets = Vec::with_capacity(nodes.len() + 1);
    let mut param_offsets = Vec::with_capacity(nodes.len() + edges.len() + 1);
    let (mut s, mut q) = (0, 0);
    let mut mass = Vec::new();
    for n in &nodes {
        state_offsets.push(s);
        param_offsets.push(q);
        s += n.block.dim();
        q += n.block.params().len();
        mass.extend_from_slice(n.block.mass());
    }
    state_offsets.push(s);
    for e in &edges {
        param_offsets.push(q);
        q += e.block.params().len();
    }
    param_offsets.push(q);

    // Each node adds its line currents in a fixed order: by the node at the
    // other end, then by orientation, then by edge position. Reordering the
    // edge list therefore leaves every sum unchanged unless two edges join
    // the same pair in the same orientation.
    let mut incidence: Vec<Vec<(usize, bool, usize)>> = vec![Vec::new(); topology.nodes];
    for (k, &(a, b)) in topology.edges.iter().enumerate() {
        incidence[a - 1].push((b, true, k));
        incidence[b - 1].push((a, false, k));
    }
    let incidence = incidence
        .into_iter()
        .map(|mut v| {
            v.sort_by_key(|&(other, at_src, k)| (other, !at_src, k));
            v.into_iter().map(|(_, at_src, edge)| Incidence { edge, at_src }).collect()
        })
        .collect();

    let max_inputs = nodes.iter().map(|n| n.block.inputs().len()).chain(edges.iter().map(|e| e.block.inputs().len())).max().unwrap_or(0);
    let max_observed = nodes
        .iter()
        .map(|n| n.block.observed().len())
        .chain(edges.iter().map(|e| e.block.observed().len()))
        .max()
        .unwrap_or(0);
    Ok(NetworkSystem {
        topology,
        nodes,
        edges,
        state_offsets,
        param_offsets,
        mass,
        incidence,
        dim: s,
        n_params: q,
        max_inputs,
        max_observed,
    })
}

impl NetworkSystem {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node(&self, id: usize) -> Result<&NodeModel, NetError> {
        self.check_node(id)?;
        Ok(&self.nodes[id - 1])
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn check_node(&self, id: usize) -> Result<(), NetError> {
        if id == 0 || id > self.nodes.len() {
            Err(NetError::IndexOutOfRange { id, nodes: self.nodes.len() })
        } else {
            Ok(())
        }
    }

    /// 1-based flat index of state `name` at node `id`.
    pub fn state_index(&self, id: usize, name: &str) -> Result<usize, NetError> {
        let unknown = || NetError::UnknownState(format!("{id}.{name}"));
        if id == 0 || id > self.nodes.len() {
            return Err(unknown());
        }
        let local = self.nodes[id - 1].block.state_index(name).ok_or_else(unknown)?;
        Ok(self.state_offsets[id - 1] + local + 1)
    }

    /// 0-based flat index of a state of node `id`, given either its full
    /// path or a last path segment that is unique within the node
    /// (`omega` finds `swing.omega`).
    pub fn find_state(&self, id: usize, name: &str) -> Result<usize, NetError> {
        if let Ok(k) = self.state_index(id, name) {
            return Ok(k - 1);
        }
        let unknown = || NetError::UnknownState(format!("{id}.{name}"));
        let range = self.state_range(id).map_err(|_| unknown())?;
        let hits: Vec<usize> = self.nodes[id - 1]
            .block
            .states()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.path().rsplit('.').next() == Some(name))
            .map(|(k, _)| range.start + k)
            .collect();
        match hits[..] {
            [k] => Ok(k),
            _ => Err(unknown()),
        }
    }

    /// Inverse of [`state_index`](Self::state_index).
    pub fn state_at(&self, index: usize) -> Result<(usize, Symbol), NetError> {
        if index == 0 || index > self.dim {
            return Err(NetError::UnknownState(format!("#{index}")));
        }
        let k = self.state_offsets.partition_point(|&o| o < index) - 1;
        Ok((k + 1, self.nodes[k].block.states()[index - 1 - self.state_offsets[k]].clone()))
    }

    /// 0-based range of node `id` in the flat state vector.
    pub fn state_range(&self, id: usize) -> Result<std::ops::Range<usize>, NetError> {
        self.check_node(id)?;
        Ok(self.state_offsets[id - 1]..self.state_offsets[id])
    }

    fn param_slot(&self, el: Element) -> Result<(usize, &CompiledBlock), NetError> {
        match el {
            Element::Node(id) => {
                self.check_node(id)?;
                Ok((id - 1, &self.nodes[id - 1].block))
            }
            Element::Edge(id) => {
                if id == 0 || id > self.edges.len() {
                    return Err(NetError::IndexOutOfRange { id, nodes: self.edges.len() });
                }
                Ok((self.nodes.len() + id - 1, &self.edges[id - 1].block))
            }
        }
    }

    /// 0-based index of parameter `name` of a node or edge.
    pub fn param_index(&self, el: Element, name: &str) -> Result<usize, NetError> {
        let (slot, block) = self.param_slot(el)?;
        let local = block.param_index(name).ok_or_else(|| NetError::UnknownParameter(format!("{el:?}.{name}")))?;
        Ok(self.param_offsets[slot] + local)
    }

    /// Flat parameter vector from block defaults.
    pub fn default_params(&self) -> Result<Vec<f64>, SymError> {
        let mut p = Vec::with_capacity(self.n_params);
        for b in self.nodes.iter().map(|n| &n.block).chain(self.edges.iter().map(|e| &e.block)) {
            p.extend(b.params_from_defaults()?);
        }
        Ok(p)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.n_params);
        for (k, n) in self.nodes.iter().enumerate() {
            v.extend(n.block.params().iter().map(|s| format!("node{}.{}", k + 1, s.path())));
        }
        for (k, e) in self.edges.iter().enumerate() {
            v.extend(e.block.params().iter().map(|s| format!("edge{}.{}", k + 1, s.path())));
        }
        v
    }

    /// Replaces the signal on input `name` at node `id`.
    pub fn set_signal(&mut self, id: usize, name: &str, signal: Signal) -> Result<(), NetError> {
        self.check_node(id)?;
        self.nodes[id - 1].set_signal(name, signal)
    }

    /// Evaluates the coupled right-hand side.
    pub fn network_rhs<S: Scalar>(
        &self,
        x: &[S],
        p: &[S],
        t: Time,
        out: &mut [S],
        ws: &mut Scratch<S>,
    ) -> Result<(), SymError> {
        let nn = self.nodes.len();
        let ne = self.edges.len();
        let mut aux = std::mem::take(&mut ws.aux);
        aux.clear();
        aux.resize(2 * nn + 4 * ne + self.max_inputs + self.max_observed, S::zero());
        let (volt, rest) = aux.split_at_mut(2 * nn);
        let (cur, rest) = rest.split_at_mut(4 * ne);
        let (u, obs) = rest.split_at_mut(self.max_inputs);
        let result = (|| {
            for (k, node) in self.nodes.iter().enumerate() {
                let xs = &x[self.state_offsets[k]..self.state_offsets[k + 1]];
                let ps = &p[self.param_offsets[k]..self.param_offsets[k + 1]];
                match node.voltage {
                    Voltage::State(r, i) => {
                        volt[2 * k] = xs[r];
                        volt[2 * k + 1] = xs[i];
                    }
                    Voltage::Observed(r, i) => {
                        let ni = node.block.inputs().len();
                        u[..ni].fill(S::zero());
                        for (slot, sig) in &node.extra {
                            u[*slot] = S::from_f64(sig.value(t.piece));
                        }
                        node.block.observe(xs, &u[..ni], ps, t.t, obs, ws)?;
                        volt[2 * k] = obs[r];
                        volt[2 * k + 1] = obs[i];
                    }
                }
            }
            for (k, (edge, &(a, b))) in self.edges.iter().zip(&self.topology.edges).enumerate() {
                let ps = &p[self.param_offsets[nn + k]..self.param_offsets[nn + k + 1]];
                let vals = [volt[2 * (a - 1)], volt[2 * (a - 1) + 1], volt[2 * (b - 1)], volt[2 * (b - 1) + 1]];
                for (slot, v) in edge.v_in.iter().zip(vals) {
                    u[*slot] = v;
                }
                edge.block.observe(&[], &u[..4], ps, t.t, obs, ws)?;
                for j in 0..4 {
                    cur[4 * k + j] = obs[edge.i_out[j]];
                }
            }
            for (k, node) in self.nodes.iter().enumerate() {
                let (mut ire, mut iim) = (S::zero(), S::zero());
                for inc in &self.incidence[k] {
                    let base = 4 * inc.edge + if inc.at_src { 0 } else { 2 };
                    ire += cur[base];
                    iim += cur[base + 1];
                }
                let ni = node.block.inputs().len();
                u[node.current.0] = ire;
                u[node.current.1] = iim;
                for (slot, sig) in &node.extra {
                    u[*slot] = S::from_f64(sig.value(t.piece));
                }
                let range = self.state_offsets[k]..self.state_offsets[k + 1];
                let ps = &p[self.param_offsets[k]..self.param_offsets[k + 1]];
                node.block.rhs(&x[range.clone()], &u[..ni], ps, t.t, &mut out[range], ws)?;
            }
            Ok(())
        })();
        ws.aux = aux;
        result
    }

    /// Voltages of all nodes as `(re, im)` pairs.
    pub fn voltages(&self, x: &[f64], p: &[f64], t: Time) -> Result<Vec<(f64, f64)>, SymError> {
        let mut ws = Scratch::new();
        let mut v = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            let xs = &x[self.state_offsets[k]..self.state_offsets[k + 1]];
            match node.voltage {
                Voltage::State(r, i) => v.push((xs[r], xs[i])),
                Voltage::Observed(r, i) => {
                    let ps = &p[self.param_offsets[k]..self.param_offsets[k + 1]];
                    let mut u = vec![0.0; node.block.inputs().len()];
                    for (slot, sig) in &node.extra {
                        u[*slot] = sig.value(t.piece);
                    }
                    let mut obs = vec![0.0; node.block.observed().len()];
                    node.block.observe(xs, &u, ps, t.t, &mut obs, &mut ws)?;
                    v.push((obs[r], obs[i]));
                }
            }
        }
        Ok(v)
    }

    /// Flat parameter range owned by each node and edge.
    pub fn parameter_layout(&self) -> BTreeMap<Element, std::ops::Range<usize>> {
        let mut m = BTreeMap::new();
        for k in 0..self.nodes.len() {
            m.insert(Element::Node(k + 1), self.param_offsets[k]..self.param_offsets[k + 1]);
        }
        for k in 0..self.edges.len() {
            let s = self.nodes.len() + k;
            m.insert(Element::Edge(k + 1), self.param_offsets[s]..self.param_offsets[s + 1]);
        }
        m
    }
}

impl OdeSystem for NetworkSystem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        self.n_params
    }
    fn mass(&self) -> &[f64] {
        &self.mass
    }
    fn state_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.dim);
        for (k, n) in self.nodes.iter().enumerate() {
            v.extend(n.block.states().iter().map(|s| format!("node{}.{}", k + 1, s.path())));
        }
        v
    }
    fn rhs<S: Scalar>(&self, x: &[S], p: &[S], t: Time, out: &mut [S], ws: &mut Scratch<S>) -> Result<(), SymError> {
        self.network_rhs(x, p, t, out, ws)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|n| n.extra.iter().flat_map(|(_, s)| s.breakpoints().collect::<Vec<_>>())).collect()
    }
}
