//! Network description files and the model registry.
//!
//! ```toml
//! [[node]]
//! model = "swing"
//! params = { inertia = 6.0, D = 0.5, P_set = 1.0, P_load = 0.9 }
//!
//! [[edge]]
//! src = 1
//! dst = 2
//! model = "admittance-line"
//! params = { B = -8.0 }
//! ```
//!
//! Node ids are positions in the `node` list, starting at 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{admittance_line, proportional_bus, swing_pid_bus, BusParams, PidParams, PowerError};
use crate::netdyn::{assemble, EdgeModel, NetworkSystem, NodeModel, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDesc {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDesc {
    pub src: usize,
    pub dst: usize,
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDescription {
    #[serde(default)]
    pub node: Vec<NodeDesc>,
    #[serde(default)]
    pub edge: Vec<EdgeDesc>,
}

struct Params<'a> {
    model: &'a str,
    map: &'a BTreeMap<String, f64>,
    allowed: &'static [&'static str],
}

impl Params<'_> {
    fn check(&self) -> Result<(), PowerError> {
        for k in self.map.keys() {
            if !self.allowed.contains(&k.as_str()) {
                return Err(PowerError::InvalidParameter(format!("`{}` has no parameter `{k}`", self.model)));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.map.get(key).copied().unwrap_or(default)
    }

    fn required(&self, key: &str) -> Result<f64, PowerError> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| PowerError::InvalidParameter(format!("`{}` needs parameter `{key}`", self.model)))
    }
}

const BUS_KEYS: &[&str] = &["inertia", "D", "P_set", "P_load", "V"];
const PID_BUS_KEYS: &[&str] = &["inertia", "D", "P_set", "P_load", "V", "kp", "ki", "kd"];

fn bus_params(p: &Params<'_>) -> Result<BusParams, PowerError> {
    Ok(BusParams {
        inertia: p.required("inertia")?,
        damping: p.get("D", 1.0),
        p_set: p.get("P_set", 0.0),
        p_load: p.get("P_load", 0.0),
        v_mag: p.get("V", 1.0),
    })
}

/// Node model by registry name: `swing` or `swing+pid`.
///
/// Parameters: `inertia` (required), `D` (1), `P_set` (0), `P_load` (0),
/// `V` (1); `swing+pid` adds `kp`, `ki`, `kd` (all 1).
pub fn node_model(model: &str, params: &BTreeMap<String, f64>) -> Result<NodeModel, PowerError> {
    match model {
        "swing" => {
            let p = Params { model, map: params, allowed: BUS_KEYS };
            p.check()?;
            proportional_bus(bus_params(&p)?)
        }
        "swing+pid" => {
            let p = Params { model, map: params, allowed: PID_BUS_KEYS };
            p.check()?;
            let gains = PidParams { kp: p.get("kp", 1.0), ki: p.get("ki", 1.0), kd: p.get("kd", 1.0), setpoint: 0.0 };
            swing_pid_bus(bus_params(&p)?, gains)
        }
        _ => Err(PowerError::UnknownModel(model.to_owned())),
    }
}

/// Edge model by registry name: `admittance-line` with `G` (0) and `B`
/// (required).
pub fn edge_model(model: &str, params: &BTreeMap<String, f64>) -> Result<EdgeModel, PowerError> {
    match model {
        "admittance-line" => {
            let p = Params { model, map: params, allowed: &["G", "B"] };
            p.check()?;
            admittance_line(p.get("G", 0.0), p.required("B")?)
        }
        _ => Err(PowerError::UnknownModel(model.to_owned())),
    }
}

impl NetworkDescription {
    pub fn from_toml(src: &str) -> Result<Self, PowerError> {
        toml::from_str(src).map_err(|e| PowerError::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network descriptions always serialize")
    }

    /// Builds the coupled system; every disturbance input starts at zero.
    pub fn build(&self) -> Result<NetworkSystem, PowerError> {
        let topo = Topology::new(self.node.len(), self.edge.iter().map(|e| (e.src, e.dst)).collect())?;
        let nodes = self.node.iter().map(|n| node_model(&n.model, &n.params)).collect::<Result<Vec<_>, _>>()?;
        let edges = self.edge.iter().map(|e| edge_model(&e.model, &e.params)).collect::<Result<Vec<_>, _>>()?;
        Ok(assemble(topo, nodes, edges)?)
    }
}

/// Edge list of the five-bus test network.
pub const FIVE_BUS_EDGES: [(usize, usize); 5] = [(1, 2), (1, 3), (2, 3), (3, 4), (3, 5)];

const FIVE_BUS_H: [f64; 5] = [3.0, 4.0, 2.5, 3.5, 5.0];
const FIVE_BUS_P_SET: [f64; 5] = [1.0, 0.8, 0.6, 0.9, 1.2];
const FIVE_BUS_P_LOAD: [f64; 5] = [0.9, 1.0, 0.7, 0.8, 1.1];
const FIVE_BUS_B: f64 = -8.0;

/// The five-bus test network with `model` at every bus and gains `d`.
/// Inertias are `2H`; `extra` parameters are added to every node.
pub fn five_bus(model: &str, d: &[f64; 5], extra: &[(&str, f64)]) -> NetworkDescription {
    let node = (0..5)
        .map(|i| {
            let mut params: BTreeMap<String, f64> = [
                ("inertia", 2.0 * FIVE_BUS_H[i]),
                ("D", d[i]),
                ("P_set", FIVE_BUS_P_SET[i]),
                ("P_load", FIVE_BUS_P_LOAD[i]),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
            params.extend(extra.iter().map(|(k, v)| (k.to_string(), *v)));
            NodeDesc { model: model.to_owned(), params }
        })
        .collect();
    let edge = FIVE_BUS_EDGES
        .iter()
        .map(|&(src, dst)| EdgeDesc {
            src,
            dst,
            model: "admittance-line".into(),
            params: [("B".to_owned(), FIVE_BUS_B)].into_iter().collect(),
        })
        .collect();
    NetworkDescription { node, edge }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesolve::OdeSystem;

    #[test]
    fn toml_round_trip_and_build() {
        let src = "[[node]]\nmodel = \"swing\"\nparams = { inertia = 2.0, D = 0.5 }\n\n\
                   [[node]]\nmodel = \"swing+pid\"\nparams = { inertia = 3.0, ki = 0.0 }\n\n\
                   [[edge]]\nsrc = 1\ndst = 2\nmodel = \"admittance-line\"\nparams = { B = -4.0 }\n";
        let d = NetworkDescription::from_toml(src).unwrap();
        assert_eq!(NetworkDescription::from_toml(&d.to_toml()).unwrap(), d);
        let net = d.build().unwrap();
        assert_eq!(net.dim(), 5);
        assert_eq!(net.state_index(2, "pid.int").unwrap(), 4);
    }

    #[test]
    fn registry_errors() {
        let m = BTreeMap::new();
        assert_eq!(node_model("kuramoto", &m).unwrap_err(), PowerError::UnknownModel("kuramoto".into()));
        assert!(matches!(node_model("swing", &m), Err(PowerError::InvalidParameter(_))));
        let bad: BTreeMap<String, f64> = [("inertia".to_owned(), 1.0), ("H".to_owned(), 1.0)].into_iter().collect();
        assert!(matches!(node_model("swing", &bad), Err(PowerError::InvalidParameter(_))));
        assert!(matches!(edge_model("admittance-line", &m), Err(PowerError::InvalidParameter(_))));
        assert!(matches!(NetworkDescription::from_toml("[[node]]\nmodle = 1"), Err(PowerError::Format(_))));
    }

    #[test]
    fn five_bus_layout() {
        let net = five_bus("swing", &[1.0; 5], &[]).build().unwrap();
        assert_eq!(net.dim(), 10);
        assert_eq!(net.edge_count(), 5);
    }
}
