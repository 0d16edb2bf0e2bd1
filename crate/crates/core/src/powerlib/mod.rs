//! Power-system blocks: swing dynamics, PID control, classical-machine
//! buses and static lines.
//!
//! Buses expose a voltage of fixed magnitude `V` at angle `theta`, with
//! `dtheta/dt = omega`. The electrical power drawn from a bus is the power
//! sent into its lines plus a constant load `P_load` and a disturbance
//! input `P_dist`:
//!
//! ```text
//! P_e = V_re I_re + V_im I_im + P_load + P_dist
//! ```

mod network;

use thiserror::Error;

use crate::blocksys::{
    compile, connect_system, make_block, AlgebraicOutputs, BlockError, CompileOptions, CompiledBlock, Equation,
    IOBlock, IOSystem,
};
use crate::netdyn::{EdgeModel, NetError, NodeModel};
use crate::odesolve::Signal;
use crate::symcore::{Expr, Symbol};

pub use network::{edge_model, five_bus, node_model, EdgeDesc, NetworkDescription, NodeDesc, FIVE_BUS_EDGES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("network description: {0}")]
    Format(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn var(name: &str) -> Expr {
    Expr::var(Symbol::state(name))
}
fn input(name: &str) -> Expr {
    Expr::var(Symbol::input(name))
}
fn param(name: &str) -> Expr {
    Expr::var(Symbol::param(name))
}

fn require(ok: bool, what: impl FnOnce() -> String) -> Result<(), PowerError> {
    if ok {
        Ok(())
    } else {
        Err(PowerError::InvalidParameter(what()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingParams {
    /// `M`, or `2H` in the per-unit inertia-constant form.
    pub inertia: f64,
    pub damping: f64,
}

impl SwingParams {
    fn validate(&self) -> Result<(), PowerError> {
        require(self.inertia > 0.0 && self.inertia.is_finite(), || format!("inertia must be positive, got {}", self.inertia))?;
        require(self.damping >= 0.0 && self.damping.is_finite(), || format!("damping must be non-negative, got {}", self.damping))
    }
}

/// `dω/dt = (P_m - D ω - P_e) / M`
pub fn swing_block(params: SwingParams) -> Result<IOBlock, PowerError> {
    params.validate()?;
    let rhs = (input("P_m") - param("D") * var("omega") - input("P_e")) / param("M");
    let b = make_block(
        "swing",
        vec![Equation::differential(Symbol::state("omega"), rhs)],
        vec![Symbol::input("P_m"), Symbol::input("P_e")],
        vec![Symbol::state("omega")],
    )?;
    Ok(b.with_defaults([("M", params.inertia), ("D", params.damping)])?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub setpoint: f64,
}

impl PidParams {
    /// Unit gains around a setpoint of 1.
    pub fn unit() -> Self {
        PidParams { kp: 1.0, ki: 1.0, kd: 1.0, setpoint: 1.0 }
    }
}

/// Controller subtracting `kp·u + ki·∫u + kd·du/dt` from a setpoint.
pub fn pid_block(params: PidParams) -> Result<IOBlock, PowerError> {
    let PidParams { kp, ki, kd, setpoint } = params;
    require([kp, ki, kd, setpoint].iter().all(|v| v.is_finite()), || "PID parameters must be finite".into())?;
    let u = input("input");
    let b = make_block(
        "pid",
        vec![
            Equation::differential(Symbol::state("int"), u.clone()),
            Equation::algebraic(
                Symbol::state("pid"),
                param("kp") * u.clone() + param("ki") * var("int") + param("kd") * u.dt(),
            ),
            Equation::algebraic(Symbol::state("out"), param("setpoint") - var("pid")),
        ],
        vec![Symbol::input("input")],
        vec![Symbol::state("out")],
    )?;
    Ok(b.with_defaults([("kp", kp), ("ki", ki), ("kd", kd), ("setpoint", setpoint)])?)
}

/// A step of `delta_p` in the demand at `bus` from `time` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadDisturbance {
    pub bus: usize,
    pub delta_p: f64,
    pub time: f64,
}

impl LoadDisturbance {
    pub fn signal(&self) -> Signal {
        Signal::step(0.0, self.time, self.delta_p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusParams {
    pub inertia: f64,
    /// Proportional frequency gain `D`.
    pub damping: f64,
    pub p_set: f64,
    pub p_load: f64,
    pub v_mag: f64,
}

impl BusParams {
    pub fn new(inertia: f64, damping: f64) -> Self {
        BusParams { inertia, damping, p_set: 0.0, p_load: 0.0, v_mag: 1.0 }
    }

    fn validate(&self) -> Result<(), PowerError> {
        SwingParams { inertia: self.inertia, damping: self.damping }.validate()?;
        require(self.v_mag > 0.0 && self.v_mag.is_finite(), || format!("voltage magnitude must be positive, got {}", self.v_mag))?;
        require(self.p_set.is_finite() && self.p_load.is_finite(), || "powers must be finite".into())
    }

    fn defaults(&self) -> [(&'static str, f64); 5] {
        [("M", self.inertia), ("D", self.damping), ("P_set", self.p_set), ("P_load", self.p_load), ("V", self.v_mag)]
    }
}

fn electrical_power() -> Expr {
    var("V_re") * input("I_re") + var("V_im") * input("I_im") + param("P_load") + input("P_dist")
}

fn bus_inputs() -> Vec<Symbol> {
    vec![Symbol::input("I_re"), Symbol::input("I_im"), Symbol::input("P_dist")]
}

fn voltage_equations() -> [Equation; 2] {
    [
        Equation::algebraic(Symbol::state("V_re"), param("V") * var("theta").cos()),
        Equation::algebraic(Symbol::state("V_im"), param("V") * var("theta").sin()),
    ]
}

fn observed() -> CompileOptions {
    CompileOptions { algebraic: AlgebraicOutputs::Observed, ..Default::default() }
}

fn node(block: &IOBlock) -> Result<NodeModel, PowerError> {
    let c = compile(block, &observed())?;
    Ok(NodeModel::new(c, &[("P_dist", Signal::constant(0.0))])?)
}

/// Swing bus written out by hand, with `D` acting as a proportional
/// frequency controller.
pub fn proportional_bus_block(params: BusParams) -> Result<IOBlock, PowerError> {
    params.validate()?;
    let [vre, vim] = voltage_equations();
    let b = make_block(
        "bus",
        vec![
            Equation::differential(
                Symbol::state("omega"),
                (param("P_set") - param("D") * var("omega") - electrical_power()) / param("M"),
            ),
            Equation::differential(Symbol::state("theta"), var("omega")),
            vre,
            vim,
        ],
        bus_inputs(),
        vec![Symbol::state("V_re"), Symbol::state("V_im")],
    )?;
    Ok(b.with_defaults(params.defaults())?)
}

pub fn proportional_bus(params: BusParams) -> Result<NodeModel, PowerError> {
    node(&proportional_bus_block(params)?)
}

/// Angle, voltage and electrical power of a classical machine.
fn terminal_block(params: &BusParams) -> Result<IOBlock, PowerError> {
    let [vre, vim] = voltage_equations();
    let b = make_block(
        "terminal",
        vec![
            Equation::differential(Symbol::state("theta"), input("omega")),
            vre,
            vim,
            Equation::algebraic(Symbol::state("P_e"), electrical_power()),
        ],
        vec![Symbol::input("omega"), Symbol::input("I_re"), Symbol::input("I_im"), Symbol::input("P_dist")],
        vec![Symbol::state("V_re"), Symbol::state("V_im"), Symbol::state("P_e")],
    )?;
    Ok(b.with_defaults([("P_load", params.p_load), ("V", params.v_mag)])?)
}

fn source_block(p_set: f64) -> Result<IOBlock, PowerError> {
    let b = make_block(
        "source",
        vec![Equation::algebraic(Symbol::state("P"), param("P_set"))],
        vec![],
        vec![Symbol::state("P")],
    )?;
    Ok(b.with_defaults([("P_set", p_set)])?)
}

fn promote_bus(sys: IOSystem, setpoint: &str) -> Result<IOSystem, BlockError> {
    sys.promote("swing.M", "M")?
        .promote("swing.D", "D")?
        .promote(setpoint, "P_set")?
        .promote("terminal.P_load", "P_load")?
        .promote("terminal.V", "V")?
        .promote("terminal.theta", "theta")
}

/// The proportional bus assembled from [`swing_block`], a constant power
/// source and the machine terminal.
pub fn composed_proportional_bus_block(params: BusParams) -> Result<IOBlock, PowerError> {
    params.validate()?;
    let swing = swing_block(SwingParams { inertia: params.inertia, damping: params.damping })?;
    let sys = IOSystem::connect(
        "bus",
        vec![swing, source_block(params.p_set)?, terminal_block(&params)?],
        &[("source.P", "swing.P_m"), ("swing.omega", "terminal.omega"), ("terminal.P_e", "swing.P_e")],
        &["swing.omega", "terminal.V_re", "terminal.V_im"],
    )?;
    Ok(connect_system(&promote_bus(sys, "source.P_set")?)?)
}

/// Swing bus with a PID loop on its mechanical power. The PID setpoint is
/// the bus setpoint `P_set`; `D` stays a separate proportional gain.
pub fn swing_pid_bus_block(params: BusParams, gains: PidParams) -> Result<IOBlock, PowerError> {
    params.validate()?;
    let swing = swing_block(SwingParams { inertia: params.inertia, damping: params.damping })?;
    let pid = pid_block(PidParams { setpoint: params.p_set, ..gains })?;
    let sys = IOSystem::connect(
        "bus",
        vec![swing, pid, terminal_block(&params)?],
        &[
            ("pid.out", "swing.P_m"),
            ("swing.omega", "pid.input"),
            ("swing.omega", "terminal.omega"),
            ("terminal.P_e", "swing.P_e"),
        ],
        &["swing.omega", "terminal.V_re", "terminal.V_im"],
    )?;
    let sys = promote_bus(sys, "pid.setpoint")?
        .promote("pid.kp", "kp")?
        .promote("pid.ki", "ki")?
        .promote("pid.kd", "kd")?;
    Ok(connect_system(&sys)?)
}

pub fn swing_pid_bus(params: BusParams, gains: PidParams) -> Result<NodeModel, PowerError> {
    node(&swing_pid_bus_block(params, gains)?)
}

/// Static line `I_src = (G + jB)(V_src - V_dst)`, `I_dst = -I_src`.
pub fn admittance_line_block(g: f64, b: f64) -> Result<IOBlock, PowerError> {
    require(g.is_finite() && b.is_finite(), || "admittance must be finite".into())?;
    let dre = input("V_src_re") - input("V_dst_re");
    let dim = input("V_src_im") - input("V_dst_im");
    let block = make_block(
        "line",
        vec![
            Equation::algebraic(Symbol::state("I_src_re"), param("G") * dre.clone() - param("B") * dim.clone()),
            Equation::algebraic(Symbol::state("I_src_im"), param("G") * dim + param("B") * dre),
            Equation::algebraic(Symbol::state("I_dst_re"), -var("I_src_re")),
            Equation::algebraic(Symbol::state("I_dst_im"), -var("I_src_im")),
        ],
        ["V_src_re", "V_src_im", "V_dst_re", "V_dst_im"].into_iter().map(Symbol::input).collect(),
        ["I_src_re", "I_src_im", "I_dst_re", "I_dst_im"].into_iter().map(Symbol::state).collect(),
    )?;
    Ok(block.with_defaults([("G", g), ("B", b)])?)
}

pub fn admittance_line(g: f64, b: f64) -> Result<EdgeModel, PowerError> {
    let c: CompiledBlock = compile(&admittance_line_block(g, b)?, &observed())?;
    Ok(EdgeModel::new(c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocksys::Scratch;
    use crate::netdyn::{assemble, Topology};
    use crate::odesolve::{integrate, IntegratorOptions, OdeSystem, Time};

    fn eval(block: &CompiledBlock, x: &[f64], u: &[f64]) -> Vec<f64> {
        let p = block.params_from_defaults().unwrap();
        let mut out = vec![0.0; block.dim()];
        block.rhs(x, u, &p, 0.0, &mut out, &mut Scratch::new()).unwrap();
        out
    }

    #[test]
    fn swing_balance_and_hand_arithmetic() {
        let c = compile(&swing_block(SwingParams { inertia: 1.0, damping: 1.0 }).unwrap(), &observed()).unwrap();
        assert_eq!(eval(&c, &[0.0], &[1.0, 1.0]), vec![0.0]);
        let c = compile(&swing_block(SwingParams { inertia: 6.0, damping: 0.5 }).unwrap(), &observed()).unwrap();
        // P_m - P_e = 0.2, omega = 0.1: (0.2 - 0.05) / 6
        let r = eval(&c, &[0.1], &[1.2, 1.0]);
        assert!((r[0] - 0.025).abs() < 1e-15);
        assert!(matches!(swing_block(SwingParams { inertia: 0.0, damping: 1.0 }), Err(PowerError::InvalidParameter(_))));
    }

    #[test]
    fn pid_without_gains_passes_setpoint() {
        use crate::symcore::{evaluate, substitute_symbols, Bindings};
        let pid = pid_block(PidParams { kp: 0.0, ki: 0.0, kd: 0.0, setpoint: 1.0 }).unwrap();
        let defs = [Symbol::state("pid")].into_iter().map(|s| (s.clone(), pid.definition(&s).unwrap().rhs.clone())).collect();
        let out = crate::blocksys::inline(&pid.definition(&Symbol::state("out")).unwrap().rhs, &defs).unwrap();
        let consts = pid.defaults().iter().map(|(s, v)| (s.clone(), Expr::constant(*v))).collect();
        let out = substitute_symbols(&out, &consts);
        assert!(!out.contains_dt());
        assert_eq!(evaluate(&out, &Bindings::<f64>::new()).unwrap(), 1.0);
    }

    #[test]
    fn line_currents_match_complex_arithmetic() {
        let e = admittance_line(0.0, -5.0).unwrap();
        let b = e.block();
        let (c, s) = (0.1f64.cos(), 0.1f64.sin());
        let p = b.params_from_defaults().unwrap();
        let mut u = [0.0; 4];
        for (name, v) in [("V_src_re", 1.0), ("V_src_im", 0.0), ("V_dst_re", c), ("V_dst_im", s)] {
            u[b.input_index(name).unwrap()] = v;
        }
        let mut o = vec![0.0; 4];
        b.observe(&[], &u, &p, 0.0, &mut o, &mut Scratch::new()).unwrap();
        let get = |n: &str| o[b.observed_index(n).unwrap()];
        // (0 - 5j)(1 - c - js) = -5s + j(-5)(1 - c)
        assert!((get("I_src_re") - (-5.0 * s)).abs() < 1e-15);
        assert!((get("I_src_im") - (-5.0 * (1.0 - c))).abs() < 1e-15);
        assert_eq!(get("I_dst_re"), -get("I_src_re"));
        // lossless: power sent from both ends cancels
        let p_src = 1.0 * get("I_src_re") + 0.0 * get("I_src_im");
        let p_dst = c * get("I_dst_re") + s * get("I_dst_im");
        assert!((p_src + p_dst).abs() < 1e-15);
    }

    #[test]
    fn composed_bus_matches_hand_written() {
        let params = BusParams { inertia: 6.0, damping: 0.7, p_set: 1.0, p_load: 0.9, v_mag: 1.05 };
        let hand = compile(&proportional_bus_block(params).unwrap(), &observed()).unwrap();
        let comp = compile(&composed_proportional_bus_block(params).unwrap(), &observed()).unwrap();
        assert_eq!(hand.states(), comp.states());
        assert_eq!(hand.inputs().len(), comp.inputs().len());
        let order: Vec<usize> = hand.inputs().iter().map(|s| comp.input_index(&s.path()).unwrap()).collect();
        let x = [0.13, -0.4];
        let u = [0.3, -0.2, 0.05];
        let mut uc = [0.0; 3];
        for (k, &j) in order.iter().enumerate() {
            uc[j] = u[k];
        }
        let a = eval(&hand, &x, &u);
        let b = eval(&comp, &x, &uc);
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_bus_settles_at_load_offset() {
        let params = BusParams { inertia: 2.0, damping: 0.5, p_set: 1.0, p_load: 1.0, v_mag: 1.0 };
        let mut node = proportional_bus(params).unwrap();
        node.set_signal("P_dist", Signal::step(0.0, 0.0, 0.1)).unwrap();
        let net = assemble(Topology::new(1, vec![]).unwrap(), vec![node], vec![]).unwrap();
        let p = net.default_params().unwrap();
        let tr = integrate(&net, &[0.0, 0.0], &p, (0.0, 60.0), &IntegratorOptions::default()).unwrap();
        assert!((tr.final_state()[0] - (-0.1 / 0.5)).abs() < 1e-5);
        let mut out = [0.0; 2];
        net.rhs(&[-0.2, 0.0], &p, Time::at(1.0), &mut out, &mut Scratch::new()).unwrap();
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn pid_bus_has_effective_inertia() {
        let params = BusParams { inertia: 6.0, damping: 0.4, p_set: 1.0, p_load: 0.0, v_mag: 1.0 };
        let gains = PidParams { kp: 1.0, ki: 0.5, kd: 1.0, setpoint: 0.0 };
        let c = compile(&swing_pid_bus_block(params, gains).unwrap(), &observed()).unwrap();
        let names: Vec<String> = c.states().iter().map(Symbol::path).collect();
        assert_eq!(names, vec!["omega", "pid.int", "theta"]);
        let (w, int, th) = (0.2, -0.3, 0.0);
        let r = eval(&c, &[w, int, th], &[0.0, 0.0, 0.1]);
        // (M + kd) w' = P_set - (kp + D) w - ki int - P_e
        let want = (1.0 - 1.4 * w - 0.5 * int - 0.1) / 7.0;
        assert!((r[0] - want).abs() < 1e-14);
    }
}
