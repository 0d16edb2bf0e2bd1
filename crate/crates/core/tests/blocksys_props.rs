use gridtune::blocksys::{
    compile, connect_system, AlgebraicOutputs, CompileOptions, CompiledBlock, IOBlock, IOSystem, Scratch,
};
use gridtune::odesolve::{integrate, BlockSystem, IntegratorOptions, Method, Signal};
use gridtune::powerlib::{admittance_line_block, pid_block, proportional_bus_block, swing_block, BusParams, PidParams, SwingParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn renamed(name: &str, block: IOBlock) -> IOBlock {
    let outs: Vec<String> = block.outputs().iter().map(|o| format!("{}.{}", block.name(), o.path())).collect();
    let outs: Vec<&str> = outs.iter().map(String::as_str).collect();
    connect_system(&IOSystem::connect(name, vec![block], &[], &outs).unwrap()).unwrap()
}

fn bus(name: &str, inertia: f64, damping: f64, p_set: f64) -> IOBlock {
    renamed(name, proportional_bus_block(BusParams { inertia, damping, p_set, p_load: 0.5, v_mag: 1.0 }).unwrap())
}

const TWO_BUS_WIRES: [(&str, &str); 8] = [
    ("a.V_re", "line.V_src_re"),
    ("a.V_im", "line.V_src_im"),
    ("b.V_re", "line.V_dst_re"),
    ("b.V_im", "line.V_dst_im"),
    ("line.I_src_re", "a.I_re"),
    ("line.I_src_im", "a.I_im"),
    ("line.I_dst_re", "b.I_re"),
    ("line.I_dst_im", "b.I_im"),
];

/// Two buses, a line, a swing and its PID; the swing frequency loads bus a.
fn blocks() -> Vec<IOBlock> {
    vec![
        bus("a", 2.0, 0.5, 1.0),
        bus("b", 1.5, 0.8, 0.4),
        admittance_line_block(0.05, -4.0).unwrap(),
        renamed("s", swing_block(SwingParams { inertia: 1.2, damping: 0.3 }).unwrap()),
        pid_block(PidParams::unit()).unwrap(),
    ]
}

fn wires() -> Vec<(&'static str, &'static str)> {
    let mut w = TWO_BUS_WIRES.to_vec();
    w.extend([("s.omega", "pid.input"), ("pid.out", "s.P_m"), ("s.omega", "a.P_dist"), ("b.V_re", "s.P_e")]);
    w
}

fn flat(order: &[usize], opts: &CompileOptions) -> CompiledBlock {
    let all = blocks();
    let shuffled: Vec<IOBlock> = order.iter().map(|&k| all[k].clone()).collect();
    let sys = IOSystem::connect("grid", shuffled, &wires(), &[]).unwrap();
    compile(&connect_system(&sys).unwrap(), opts).unwrap()
}

fn same_layout(c: &CompiledBlock, algebraic: AlgebraicOutputs) -> CompileOptions {
    CompileOptions {
        states: Some(c.states().to_vec()),
        inputs: Some(c.inputs().to_vec()),
        params: Some(c.params().to_vec()),
        algebraic,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn flattening_ignores_block_order(
        order in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
        observed in any::<bool>(),
    ) {
        let mode = if observed { AlgebraicOutputs::Observed } else { AlgebraicOutputs::Constraints };
        let reference = flat(&[0, 1, 2, 3, 4], &CompileOptions { algebraic: mode, ..Default::default() });
        let permuted = flat(&order, &same_layout(&reference, mode));
        prop_assert_eq!(reference.mass(), permuted.mass());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (mut w1, mut w2) = (Scratch::new(), Scratch::new());
        let (mut f1, mut f2) = (vec![0.0; reference.dim()], vec![0.0; reference.dim()]);
        for _ in 0..20 {
            let (x, u, p) = (draw(reference.dim()), draw(reference.inputs().len()), draw(reference.params().len()));
            reference.rhs(&x, &u, &p, 0.3, &mut f1, &mut w1).unwrap();
            permuted.rhs(&x, &u, &p, 0.3, &mut f2, &mut w2).unwrap();
            for (a, b) in f1.iter().zip(&f2) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn mass_diagonal_counts_differential_equations() {
    for mode in [AlgebraicOutputs::Constraints, AlgebraicOutputs::Observed] {
        let c = flat(&[0, 1, 2, 3, 4], &CompileOptions { algebraic: mode, ..Default::default() });
        assert!(c.mass().iter().all(|&m| m == 0.0 || m == 1.0));
        let ones = c.mass().iter().filter(|&&m| m == 1.0).count();
        // omega and theta per bus, omega of the swing, the PID integrator
        assert_eq!(ones, 6);
        let sys = IOSystem::connect("grid", blocks(), &wires(), &[]).unwrap();
        assert_eq!(connect_system(&sys).unwrap().differential_states().len(), ones);
        let before: usize = blocks().iter().map(|b| b.differential_states().len()).sum();
        assert_eq!(before, ones);
    }
}

/// Two buses and a line, each compiled on its own and coupled by
/// exchanging voltages and currents at every Runge-Kutta stage.
struct CoSimulation {
    a: CompiledBlock,
    b: CompiledBlock,
    line: CompiledBlock,
    pa: Vec<f64>,
    pb: Vec<f64>,
    pl: Vec<f64>,
    dist: f64,
}

impl CoSimulation {
    fn rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Scratch::new();
        let (na, _) = (self.a.dim(), self.b.dim());
        let (xa, xb) = x.split_at(na);
        let volt = |c: &CompiledBlock, xs: &[f64], p: &[f64], ws: &mut Scratch<f64>| {
            let mut obs = vec![0.0; c.observed().len()];
            c.observe(xs, &vec![0.0; c.inputs().len()], p, 0.0, &mut obs, ws).unwrap();
            let k = |n: &str| c.observed_index(n).unwrap();
            (obs[k("V_re")], obs[k("V_im")])
        };
        let va = volt(&self.a, xa, &self.pa, &mut ws);
        let vb = volt(&self.b, xb, &self.pb, &mut ws);
        let mut lu = vec![0.0; 4];
        for (name, v) in [("V_src_re", va.0), ("V_src_im", va.1), ("V_dst_re", vb.0), ("V_dst_im", vb.1)] {
            lu[self.line.input_index(name).unwrap()] = v;
        }
        let mut cur = vec![0.0; self.line.observed().len()];
        self.line.observe(&[], &lu, &self.pl, 0.0, &mut cur, &mut ws).unwrap();
        let ci = |n: &str| cur[self.line.observed_index(n).unwrap()];
        let bus_rhs = |c: &CompiledBlock, xs: &[f64], p: &[f64], i: (f64, f64), ws: &mut Scratch<f64>| {
            let mut u = vec![0.0; c.inputs().len()];
            u[c.input_index("I_re").unwrap()] = i.0;
            u[c.input_index("I_im").unwrap()] = i.1;
            u[c.input_index("P_dist").unwrap()] = self.dist;
            let mut f = vec![0.0; c.dim()];
            c.rhs(xs, &u, p, 0.0, &mut f, ws).unwrap();
            f
        };
        let mut f = bus_rhs(&self.a, xa, &self.pa, (ci("I_src_re"), ci("I_src_im")), &mut ws);
        f.extend(bus_rhs(&self.b, xb, &self.pb, (ci("I_dst_re"), ci("I_dst_im")), &mut ws));
        f
    }

    fn run(&self, x0: &[f64], h: f64, steps: usize) -> Vec<f64> {
        let mut x = x0.to_vec();
        let axpy = |x: &[f64], k: &[f64], s: f64| x.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
        for _ in 0..steps {
            let k1 = self.rhs(&x);
            let k2 = self.rhs(&axpy(&x, &k1, h / 2.0));
            let k3 = self.rhs(&axpy(&x, &k2, h / 2.0));
            let k4 = self.rhs(&axpy(&x, &k3, h));
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reduced_and_coupled_simulations_agree(
        ma in 1.0f64..4.0, mb in 1.0f64..4.0,
        da in 0.1f64..2.0, db in 0.1f64..2.0,
        pa in 0.0f64..1.0, pb in 0.0f64..1.0,
        susceptance in -8.0f64..-1.0,
        dist in -0.2f64..0.2,
        theta in -0.5f64..0.5,
    ) {
        let observed = CompileOptions { algebraic: AlgebraicOutputs::Observed, ..Default::default() };
        let bus_a = bus("a", ma, da, pa);
        let bus_b = bus("b", mb, db, pb);
        let line = admittance_line_block(0.02, susceptance).unwrap();
        let sys = IOSystem::connect("pair", vec![bus_a.clone(), line.clone(), bus_b.clone()], &TWO_BUS_WIRES, &[]).unwrap();
        let reduced = compile(&connect_system(&sys).unwrap(), &observed).unwrap();
        let co = CoSimulation {
            a: compile(&bus_a, &observed).unwrap(),
            b: compile(&bus_b, &observed).unwrap(),
            line: compile(&line, &observed).unwrap(),
            pa: compile(&bus_a, &observed).unwrap().params_from_defaults().unwrap(),
            pb: compile(&bus_b, &observed).unwrap().params_from_defaults().unwrap(),
            pl: compile(&line, &observed).unwrap().params_from_defaults().unwrap(),
            dist,
        };
        // co-simulation layout: [a states, b states]
        let co_names: Vec<String> = co.a.states().iter().map(|s| format!("a.{}", s.path()))
            .chain(co.b.states().iter().map(|s| format!("b.{}", s.path()))).collect();
        let x0: Vec<f64> = co_names.iter().map(|n| if n.ends_with("theta") && n.starts_with('a') { theta } else { 0.0 }).collect();
        let (h, steps) = (0.01, 500);
        let xc = co.run(&x0, h, steps);

        let names: Vec<String> = reduced.states().iter().map(|s| s.path()).collect();
        let index = |n: &str| names.iter().position(|m| m == n).unwrap_or_else(|| panic!("{n} not in {names:?}"));
        let map: Vec<usize> = co_names.iter().map(|n| index(n)).collect();
        let mut xr0 = vec![0.0; reduced.dim()];
        for (i, &k) in map.iter().enumerate() {
            xr0[k] = x0[i];
        }
        let p = reduced.params_from_defaults().unwrap();
        let inputs = vec![Signal::constant(dist); reduced.inputs().len()];
        let system = BlockSystem::new(reduced, inputs).unwrap();
        let opts = IntegratorOptions::with_method(Method::Rk4 { h });
        let xr = integrate(&system, &xr0, &p, (0.0, h * steps as f64), &opts).unwrap().final_state().to_vec();
        for (i, &k) in map.iter().enumerate() {
            prop_assert!((xc[i] - xr[k]).abs() < 1e-6, "{}: {} vs {}", co_names[i], xc[i], xr[k]);
        }
    }
}
