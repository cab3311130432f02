//! Netlist parsing and circuit-graph construction.
//!
//! The input format is line-oriented UTF-8 text; `#` starts a comment and
//! blank lines are skipped:
//!
//! ```text
//! DEVICE <name> <kind> <net>... PARAM <pname>=<init> BOUNDS <min> <max> STEP <dx> ...
//! SUPPLY VDD <net> <volts>
//! SUPPLY GND <net>
//! BIAS <name> <net> <volts>
//! ```
//!
//! Device kinds are NMOS, PMOS, RES, CAP, IND. Transistors carry exactly two
//! tunable parameters (width in um, finger count); passives exactly one
//! (value). A parameter named `fingers` is held to integer values. Passive
//! values are stored in log scale before min/max normalization so decade-wide
//! ranges normalize evenly.
//!
//! A circuit graph has one node per device plus one per declared supply and
//! bias. Two nodes are adjacent when they share at least one net; supply and
//! bias nodes own only their declared net. The adjacency matrix is symmetric
//! 0/1 with a zero diagonal.

use crate::mat::Mat;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no devices")]
    NoDevices,
    #[error("device `{device}` terminal references undeclared net `{net}`")]
    UndeclaredNet { device: String, net: String },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { got: usize, expected: usize },
}

fn syntax(line: usize, message: impl Into<String>) -> NetlistError {
    NetlistError::Syntax { line, message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceKind {
    Res,
    Cap,
    Nmos,
    Pmos,
    Ind,
}

impl DeviceKind {
    fn from_word(word: &str) -> Option<Self> {
        match word.to_ascii_uppercase().as_str() {
            "RES" => Some(DeviceKind::Res),
            "CAP" => Some(DeviceKind::Cap),
            "NMOS" => Some(DeviceKind::Nmos),
            "PMOS" => Some(DeviceKind::Pmos),
            "IND" => Some(DeviceKind::Ind),
            _ => None,
        }
    }

    pub fn is_transistor(self) -> bool {
        matches!(self, DeviceKind::Nmos | DeviceKind::Pmos)
    }
}

/// Node kinds in one-hot order. An NMOS node's one-hot therefore reads
/// `[0, 0, 1, 0, 0, 0, 0, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Res = 0,
    Cap = 1,
    Nmos = 2,
    Pmos = 3,
    Ind = 4,
    Supply = 5,
    Gnd = 6,
    Bias = 7,
}

pub const NODE_KIND_COUNT: usize = 8;
/// One-hot kinds plus two parameter slots.
pub const NODE_FEATURE_WIDTH: usize = NODE_KIND_COUNT + 2;

impl From<DeviceKind> for NodeKind {
    fn from(kind: DeviceKind) -> Self {
        match kind {
            DeviceKind::Res => NodeKind::Res,
            DeviceKind::Cap => NodeKind::Cap,
            DeviceKind::Nmos => NodeKind::Nmos,
            DeviceKind::Pmos => NodeKind::Pmos,
            DeviceKind::Ind => NodeKind::Ind,
        }
    }
}

/// One tunable parameter: bounds, step size, and storage conventions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub init: f64,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    /// Held to whole numbers through init, steps, and clamping.
    pub integer: bool,
    /// Normalized in log space (passive component values).
    pub log_scale: bool,
}

impl ParamSpec {
    /// Min/max-normalizes `value` into [0, 1] for in-bounds values.
    pub fn normalize(&self, value: f64) -> f64 {
        if self.log_scale {
            (value.ln() - self.min.ln()) / (self.max.ln() - self.min.ln())
        } else {
            (value - self.min) / (self.max - self.min)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Device {
    pub name: String,
    pub kind: DeviceKind,
    pub nets: Vec<String>,
    pub params: Vec<ParamSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Supply {
    /// "VDD" or "GND"; doubles as the node name.
    pub name: String,
    pub net: String,
    pub volts: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bias {
    pub name: String,
    pub net: String,
    pub volts: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Netlist {
    pub devices: Vec<Device>,
    pub supplies: Vec<Supply>,
    pub biases: Vec<Bias>,
    /// Every net named anywhere in the netlist.
    pub nets: BTreeSet<String>,
}

impl Netlist {
    /// Total number of tunable parameters (M).
    pub fn param_count(&self) -> usize {
        self.devices.iter().map(|d| d.params.len()).sum()
    }

    /// Node name -> voltage for supplies and biases.
    pub fn supply_voltage_map(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for s in &self.supplies {
            map.insert(s.name.clone(), s.volts);
        }
        for b in &self.biases {
            map.insert(b.name.clone(), b.volts);
        }
        map
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut nl = Netlist::default();
    let mut seen_names: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match tokens[0] {
            "DEVICE" => {
                let device = parse_device(&tokens, line_no)?;
                if !seen_names.insert(device.name.clone()) {
                    return Err(syntax(line_no, format!("duplicate device name `{}`", device.name)));
                }
                for net in &device.nets {
                    nl.nets.insert(net.clone());
                }
                nl.devices.push(device);
            }
            "SUPPLY" => {
                let supply = parse_supply(&tokens, line_no)?;
                if nl.supplies.iter().any(|s| s.name == supply.name) {
                    return Err(syntax(line_no, format!("duplicate supply `{}`", supply.name)));
                }
                nl.nets.insert(supply.net.clone());
                nl.supplies.push(supply);
            }
            "BIAS" => {
                if tokens.len() != 4 {
                    return Err(syntax(line_no, "expected `BIAS <name> <net> <volts>`"));
                }
                let name = tokens[1].to_string();
                if !seen_names.insert(name.clone()) {
                    return Err(syntax(line_no, format!("duplicate name `{name}`")));
                }
                let volts = parse_number(tokens[3], line_no, "bias voltage")?;
                nl.nets.insert(tokens[2].to_string());
                nl.biases.push(Bias { name, net: tokens[2].to_string(), volts });
            }
            other => {
                return Err(syntax(line_no, format!("unknown directive `{other}`")));
            }
        }
    }
    if nl.devices.is_empty() {
        return Err(NetlistError::NoDevices);
    }
    Ok(nl)
}

fn parse_device(tokens: &[&str], line: usize) -> Result<Device, NetlistError> {
    if tokens.len() < 3 {
        return Err(syntax(line, "expected `DEVICE <name> <kind> <net>... PARAM ...`"));
    }
    let name = tokens[1].to_string();
    let kind = DeviceKind::from_word(tokens[2])
        .ok_or_else(|| syntax(line, format!("unknown device kind `{}`", tokens[2])))?;
    let mut pos = 3;
    let mut nets = Vec::new();
    while pos < tokens.len() && tokens[pos] != "PARAM" {
        nets.push(tokens[pos].to_string());
        pos += 1;
    }
    if nets.is_empty() {
        return Err(syntax(line, format!("device `{name}` lists no nets")));
    }
    let mut params = Vec::new();
    while pos < tokens.len() {
        // PARAM <pname>=<init> BOUNDS <min> <max> STEP <dx>
        if tokens[pos] != "PARAM" {
            return Err(syntax(line, format!("expected `PARAM`, found `{}`", tokens[pos])));
        }
        if tokens.len() - pos < 7 {
            return Err(syntax(line, "truncated PARAM clause; expected `PARAM <name>=<init> BOUNDS <min> <max> STEP <dx>`"));
        }
        let (pname, init_text) = tokens[pos + 1]
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected `<name>=<init>`, found `{}`", tokens[pos + 1])))?;
        if tokens[pos + 2] != "BOUNDS" {
            return Err(syntax(line, format!("expected `BOUNDS`, found `{}`", tokens[pos + 2])));
        }
        if tokens[pos + 5] != "STEP" {
            return Err(syntax(line, format!("expected `STEP`, found `{}`", tokens[pos + 5])));
        }
        let init = parse_number(init_text, line, "parameter init")?;
        let min = parse_number(tokens[pos + 3], line, "bound min")?;
        let max = parse_number(tokens[pos + 4], line, "bound max")?;
        let step = parse_number(tokens[pos + 6], line, "step")?;
        if min >= max {
            return Err(syntax(line, format!("bound min {min} >= max {max} for `{pname}`")));
        }
        if step <= 0.0 {
            return Err(syntax(line, format!("step must be positive for `{pname}`")));
        }
        if init < min || init > max {
            return Err(syntax(line, format!("init {init} outside bounds [{min}, {max}] for `{pname}`")));
        }
        params.push(ParamSpec {
            name: pname.to_string(),
            init,
            min,
            max,
            step,
            integer: pname.eq_ignore_ascii_case("fingers"),
            log_scale: !kind.is_transistor(),
        });
        pos += 7;
    }
    let expected = if kind.is_transistor() { 2 } else { 1 };
    if params.len() != expected {
        return Err(syntax(
            line,
            format!(
                "device `{name}` declares {} tunable parameter(s), expected {expected}",
                params.len()
            ),
        ));
    }
    if min_positive_violated(&params) {
        return Err(syntax(line, format!("device `{name}` log-scaled parameter needs positive bounds")));
    }
    Ok(Device { name, kind, nets, params })
}

fn min_positive_violated(params: &[ParamSpec]) -> bool {
    params.iter().any(|p| p.log_scale && p.min <= 0.0)
}

fn parse_supply(tokens: &[&str], line: usize) -> Result<Supply, NetlistError> {
    match tokens.get(1) {
        Some(&"VDD") => {
            if tokens.len() != 4 {
                return Err(syntax(line, "expected `SUPPLY VDD <net> <volts>`"));
            }
            let volts = parse_number(tokens[3], line, "supply voltage")?;
            Ok(Supply { name: "VDD".to_string(), net: tokens[2].to_string(), volts })
        }
        Some(&"GND") => {
            if tokens.len() != 3 {
                return Err(syntax(line, "expected `SUPPLY GND <net>`"));
            }
            Ok(Supply { name: "GND".to_string(), net: tokens[2].to_string(), volts: 0.0 })
        }
        Some(other) => Err(syntax(line, format!("unknown supply `{other}`; expected VDD or GND"))),
        None => Err(syntax(line, "expected `SUPPLY VDD|GND ...`")),
    }
}

fn parse_number(text: &str, line: usize, what: &str) -> Result<f64, NetlistError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, format!("invalid {what} `{text}`")))
}

/// Flattened view of every tunable parameter, in device declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpace {
    specs: Vec<ParamSpec>,
    /// Parallel to `specs`: (device index, slot within device).
    owners: Vec<(usize, usize)>,
    names: BTreeMap<(String, String), usize>,
}

impl ParamSpace {
    pub fn from_netlist(nl: &Netlist) -> Self {
        let mut specs = Vec::new();
        let mut owners = Vec::new();
        let mut names = BTreeMap::new();
        for (di, device) in nl.devices.iter().enumerate() {
            for (slot, spec) in device.params.iter().enumerate() {
                names.insert((device.name.clone(), spec.name.clone()), specs.len());
                specs.push(spec.clone());
                owners.push((di, slot));
            }
        }
        ParamSpace { specs, owners, names }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, global: usize) -> &ParamSpec {
        &self.specs[global]
    }

    /// (device index, slot) owning flattened index `global`.
    pub fn owner(&self, global: usize) -> (usize, usize) {
        self.owners[global]
    }

    /// Flattened index of (device index, slot), if it exists.
    pub fn global_of(&self, device_idx: usize, slot: usize) -> Option<usize> {
        self.owners.iter().position(|&o| o == (device_idx, slot))
    }

    /// Flattened index by device and parameter name.
    pub fn index_of(&self, device: &str, param: &str) -> Option<usize> {
        self.names.get(&(device.to_string(), param.to_string())).copied()
    }

    /// "device.param" label for column headers and reports.
    pub fn label(&self, global: usize) -> String {
        self.names
            .iter()
            .find(|(_, &i)| i == global)
            .map(|((device, param), _)| format!("{device}.{param}"))
            .expect("global index in range")
    }

    /// Mid-bound starting point; integer parameters round down.
    pub fn mid_init(&self) -> Vec<f64> {
        self.specs
            .iter()
            .map(|s| {
                let mid = 0.5 * (s.min + s.max);
                if s.integer {
                    mid.floor()
                } else {
                    mid
                }
            })
            .collect()
    }

    /// Applies one discrete move per parameter: 0 = -step, 1 = keep, 2 = +step.
    /// Results clamp to bounds; integer parameters stay whole.
    pub fn apply(&self, values: &[f64], choices: &[usize]) -> Vec<f64> {
        assert_eq!(values.len(), self.specs.len(), "value vector length mismatch");
        assert_eq!(choices.len(), self.specs.len(), "choice vector length mismatch");
        values
            .iter()
            .zip(&self.specs)
            .zip(choices)
            .map(|((&v, spec), &choice)| {
                let moved = match choice {
                    0 => v - spec.step,
                    1 => v,
                    2 => v + spec.step,
                    other => panic!("action choice {other} out of range"),
                };
                let clamped = moved.clamp(spec.min, spec.max);
                if spec.integer {
                    clamped.round()
                } else {
                    clamped
                }
            })
            .collect()
    }

    /// Per-entry min/max normalization into [0, 1].
    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.specs.len(), "value vector length mismatch");
        values.iter().zip(&self.specs).map(|(&v, spec)| spec.normalize(v)).collect()
    }

    /// Uniform draw within bounds; integer parameters draw whole values.
    pub fn sample_uniform(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        self.specs
            .iter()
            .map(|s| {
                if s.integer {
                    let lo = s.min.ceil() as i64;
                    let hi = s.max.floor() as i64;
                    rng.random_range(lo..=hi) as f64
                } else {
                    rng.random_range(s.min..=s.max)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub name: String,
    pub kind: NodeKind,
    /// Device index for device nodes.
    pub device_idx: Option<usize>,
    /// Fixed voltage for supply/bias nodes.
    pub voltage: Option<f64>,
    nets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitGraph {
    pub nodes: Vec<GraphNode>,
    /// Symmetric 0/1 adjacency, zero diagonal.
    pub adjacency: Mat,
    space: ParamSpace,
}

impl CircuitGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn param_space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }
}

/// Builds the device/supply/bias graph. Nodes appear as devices in declaration
/// order, then supplies, then biases.
pub fn build_graph(nl: &Netlist) -> Result<CircuitGraph, NetlistError> {
    for device in &nl.devices {
        for net in &device.nets {
            if !nl.nets.contains(net) {
                return Err(NetlistError::UndeclaredNet {
                    device: device.name.clone(),
                    net: net.clone(),
                });
            }
        }
    }
    let mut nodes = Vec::new();
    for (di, device) in nl.devices.iter().enumerate() {
        nodes.push(GraphNode {
            name: device.name.clone(),
            kind: device.kind.into(),
            device_idx: Some(di),
            voltage: None,
            nets: device.nets.clone(),
        });
    }
    for supply in &nl.supplies {
        nodes.push(GraphNode {
            name: supply.name.clone(),
            kind: if supply.name == "GND" { NodeKind::Gnd } else { NodeKind::Supply },
            device_idx: None,
            voltage: Some(supply.volts),
            nets: vec![supply.net.clone()],
        });
    }
    for bias in &nl.biases {
        nodes.push(GraphNode {
            name: bias.name.clone(),
            kind: NodeKind::Bias,
            device_idx: None,
            voltage: Some(bias.volts),
            nets: vec![bias.net.clone()],
        });
    }
    let n = nodes.len();
    let mut adjacency = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let shared = nodes[i].nets.iter().any(|net| nodes[j].nets.contains(net));
            if shared {
                adjacency.set(i, j, 1.0);
                adjacency.set(j, i, 1.0);
            }
        }
    }
    Ok(CircuitGraph { nodes, adjacency, space: ParamSpace::from_netlist(nl) })
}

/// Node feature matrix: one row per node, `NODE_FEATURE_WIDTH` columns.
/// Device rows carry the kind one-hot plus their normalized parameters
/// (transistor: width then fingers; passive: value then 0). Supply and bias
/// rows carry their voltage (overridable through `supply_voltages`) and 0.
pub fn node_features(
    graph: &CircuitGraph,
    params: &[f64],
    supply_voltages: &BTreeMap<String, f64>,
) -> Result<Mat, NetlistError> {
    let space = &graph.space;
    if params.len() != space.len() {
        return Err(NetlistError::ParamLength { got: params.len(), expected: space.len() });
    }
    let mut features = Mat::zeros(graph.nodes.len(), NODE_FEATURE_WIDTH);
    for (ni, node) in graph.nodes.iter().enumerate() {
        features.set(ni, node.kind as usize, 1.0);
        match node.device_idx {
            Some(di) => {
                let mut slot = 0;
                for g in 0..space.len() {
                    if space.owner(g).0 == di {
                        let value = space.spec(g).normalize(params[g]);
                        features.set(ni, NODE_KIND_COUNT + slot, value);
                        slot += 1;
                    }
                }
            }
            None => {
                let volts = supply_voltages
                    .get(&node.name)
                    .copied()
                    .or(node.voltage)
                    .unwrap_or(0.0);
                features.set(ni, NODE_KIND_COUNT, volts);
            }
        }
    }
    Ok(features)
}

/// Degree-normalized adjacency with self-loops:
/// with `A^ = A + I` and `D^ = diag(rowsum(A^))`, returns `D^{-1/2} A^ D^{-1/2}`.
pub fn normalized_adjacency(graph: &CircuitGraph) -> Mat {
    let n = graph.nodes.len();
    let a = &graph.adjacency;
    let mut hat = a.clone();
    for i in 0..n {
        hat.set(i, i, hat.get(i, i) + 1.0);
    }
    let inv_sqrt_deg: Vec<f64> =
        (0..n).map(|i| 1.0 / hat.row(i).iter().sum::<f64>().sqrt()).collect();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt_deg[i] * hat.get(i, j) * inv_sqrt_deg[j]);
        }
    }
    out
}

/// Canonical netlists shipped with the crate.
pub mod builtin {
    /// Two-stage Miller op-amp: 7 transistors + 1 capacitor, 15 tunables.
    pub const OPAMP: &str = include_str!("../netlists/opamp.ckt");
    /// RF power amplifier: 6 driver transistors + 1 power transistor, 14 tunables.
    pub const RFPA: &str = include_str!("../netlists/rfpa.ckt");
}
