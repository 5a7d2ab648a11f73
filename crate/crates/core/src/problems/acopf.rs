use super::ParametricProblem;
use crate::autodiff::Scalar;

/// Complex arithmetic over any [`Scalar`] carrier, just enough for flows.
#[derive(Clone)]
struct Cx<S> {
    re: S,
    im: S,
}

impl<S: Scalar> Cx<S> {
    fn consts(re: f64, im: f64, like: &S) -> Self {
        Cx { re: like.promote(re), im: like.promote(im) }
    }

    fn conj(&self) -> Self {
        Cx { re: self.re.clone(), im: -self.im.clone() }
    }

    fn mul(&self, o: &Self) -> Self {
        Cx {
            re: self.re.clone() * o.re.clone() - self.im.clone() * o.im.clone(),
            im: self.re.clone() * o.im.clone() + self.im.clone() * o.re.clone(),
        }
    }

    fn scale(&self, s: &S) -> Self {
        Cx { re: self.re.clone() * s.clone(), im: self.im.clone() * s.clone() }
    }

    fn sub(&self, o: &Self) -> Self {
        Cx { re: self.re.clone() - o.re.clone(), im: self.im.clone() - o.im.clone() }
    }

    fn norm_sq(&self) -> S {
        self.re.sq() + self.im.sq()
    }
}

/// One transmission line with series admittance `y` and one shunt admittance
/// hanging off each end; `s_max` caps apparent power at both ends.
#[derive(Debug, Clone)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub y: (f64, f64),
    pub yc_from: (f64, f64),
    pub yc_to: (f64, f64),
    pub s_max: f64,
}

impl Branch {
    /// Series admittance from impedance r + jx.
    pub fn from_impedance(from: usize, to: usize, r: f64, x: f64, b_shunt: f64, s_max: f64) -> Self {
        let d = r * r + x * x;
        Branch {
            from,
            to,
            y: (r / d, -x / d),
            yc_from: (0.0, b_shunt / 2.0),
            yc_to: (0.0, b_shunt / 2.0),
            s_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub bus: usize,
    pub pg_bounds: (f64, f64),
    pub qg_bounds: (f64, f64),
    /// Dispatch cost c2 * pg^2 + c1 * pg.
    pub c2: f64,
    pub c1: f64,
}

#[derive(Debug, Clone)]
pub struct AcOpfData {
    pub n_bus: usize,
    /// Bus whose voltage angle is pinned to zero (removed from the decision
    /// vector).
    pub slack: usize,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub vm_bounds: (f64, f64),
    /// Demand the parameter box is centered on: `(pd_0..pd_nb, qd_0..qd_nb)`.
    pub ref_demand: Vec<f64>,
    pub demand_box: (Vec<f64>, Vec<f64>),
    pub scale_range: (f64, f64),
}

/// Alternating-current optimal power flow on a fixed small network.
///
/// Decision vector `x = (vm_0..vm_nb, va_i for i != slack, pg_g.., qg_g..)`;
/// parameter `p = (pd_0..pd_nb, qd_0..qd_nb)` is the per-bus demand.
/// Equalities are real and reactive power balance per bus; inequalities are
/// squared apparent-power limits at both branch ends; voltage magnitudes and
/// generator outputs carry box bounds. The power-flow equations make this
/// nonconvex.
#[derive(Debug, Clone)]
pub struct AcOpf3Bus {
    data: AcOpfData,
}

impl AcOpf3Bus {
    pub fn new(data: AcOpfData) -> Self {
        assert_eq!(data.ref_demand.len(), 2 * data.n_bus);
        assert!(data.slack < data.n_bus);
        AcOpf3Bus { data }
    }

    /// The fixed three-bus case: generators at buses 0 (slack) and 1, load
    /// concentrated at bus 2, three resistive-inductive branches with small
    /// line charging.
    pub fn case3() -> Self {
        let branches = vec![
            Branch::from_impedance(0, 1, 0.02, 0.12, 0.02, 1.5),
            Branch::from_impedance(0, 2, 0.04, 0.22, 0.02, 1.2),
            Branch::from_impedance(1, 2, 0.03, 0.15, 0.02, 1.0),
        ];
        let gens = vec![
            Generator { bus: 0, pg_bounds: (0.0, 1.5), qg_bounds: (-0.8, 0.8), c2: 0.08, c1: 4.0 },
            Generator { bus: 1, pg_bounds: (0.0, 1.0), qg_bounds: (-0.8, 0.8), c2: 0.06, c1: 2.5 },
        ];
        let ref_demand = vec![0.10, 0.30, 0.50, 0.03, 0.10, 0.15];
        let lo = ref_demand.iter().map(|v| 0.7 * v).collect();
        let hi = ref_demand.iter().map(|v| 1.3 * v).collect();
        AcOpf3Bus::new(AcOpfData {
            n_bus: 3,
            slack: 0,
            branches,
            gens,
            vm_bounds: (0.9, 1.1),
            ref_demand,
            demand_box: (lo, hi),
            scale_range: (0.8, 1.1),
        })
    }

    pub fn data(&self) -> &AcOpfData {
        &self.data
    }

    fn n_bus(&self) -> usize {
        self.data.n_bus
    }

    fn n_gen(&self) -> usize {
        self.data.gens.len()
    }

    /// Split the decision vector into (vm, va with slack pinned at 0, pg, qg).
    fn unpack<S: Scalar>(&self, x: &[S]) -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
        let nb = self.n_bus();
        let ng = self.n_gen();
        let vm = x[..nb].to_vec();
        let mut va = Vec::with_capacity(nb);
        let mut k = nb;
        for bus in 0..nb {
            if bus == self.data.slack {
                va.push(x[0].promote(0.0));
            } else {
                va.push(x[k].clone());
                k += 1;
            }
        }
        let pg = x[k..k + ng].to_vec();
        let qg = x[k + ng..k + 2 * ng].to_vec();
        (vm, va, pg, qg)
    }

    /// Complex power entering each branch at both ends,
    /// `S_f = (y + yc_f)* |V_f|^2 - y* V_f V_t*` and symmetrically for `S_t`.
    fn branch_flows<S: Scalar>(&self, vm: &[S], va: &[S]) -> Vec<(Cx<S>, Cx<S>)> {
        self.data
            .branches
            .iter()
            .map(|br| {
                let (f, t) = (br.from, br.to);
                let theta = va[f].clone() - va[t].clone();
                let cross = vm[f].clone() * vm[t].clone();
                // V_f V_t* in rectangular form.
                let w = Cx { re: cross.clone() * theta.cos(), im: cross * theta.sin() };
                let ys = Cx::consts(br.y.0, br.y.1, &vm[0]);
                let ycf = Cx::consts(br.yc_from.0, br.yc_from.1, &vm[0]);
                let yct = Cx::consts(br.yc_to.0, br.yc_to.1, &vm[0]);
                let yf = Cx { re: ys.re.clone() + ycf.re, im: ys.im.clone() + ycf.im };
                let yt = Cx { re: ys.re.clone() + yct.re, im: ys.im.clone() + yct.im };
                let s_f = yf.conj().scale(&vm[f].sq()).sub(&ys.conj().mul(&w));
                let s_t = yt.conj().scale(&vm[t].sq()).sub(&ys.conj().mul(&w.conj()));
                (s_f, s_t)
            })
            .collect()
    }

    /// Per-branch complex flows `((P_f, Q_f), (P_t, Q_t))` at a voltage
    /// profile, for reporting and hand checks.
    pub fn flows(&self, vm: &[f64], va: &[f64]) -> Vec<((f64, f64), (f64, f64))> {
        self.branch_flows(vm, va)
            .into_iter()
            .map(|(f, t)| ((f.re, f.im), (t.re, t.im)))
            .collect()
    }
}

impl ParametricProblem for AcOpf3Bus {
    fn name(&self) -> &str {
        "acopf3"
    }
    fn num_vars(&self) -> usize {
        self.n_bus() - 1 + self.n_bus() + 2 * self.n_gen()
    }
    fn num_params(&self) -> usize {
        2 * self.n_bus()
    }
    /// Real and reactive balance per bus.
    fn num_eq(&self) -> usize {
        2 * self.n_bus()
    }
    /// Squared apparent-power cap at each branch end.
    fn num_ineq(&self) -> usize {
        2 * self.data.branches.len()
    }

    fn objective<S: Scalar>(&self, x: &[S], _p: &[S]) -> S {
        let (_, _, pg, _) = self.unpack(x);
        let mut cost = x[0].promote(0.0);
        for (g, gen) in self.data.gens.iter().enumerate() {
            cost = cost + pg[g].sq() * gen.c2 + pg[g].clone() * gen.c1;
        }
        cost
    }

    fn eq_constraints<S: Scalar>(&self, x: &[S], p: &[S]) -> Vec<S> {
        let nb = self.n_bus();
        let (vm, va, pg, qg) = self.unpack(x);
        let flows = self.branch_flows(&vm, &va);
        let mut p_out: Vec<S> = (0..nb).map(|_| x[0].promote(0.0)).collect();
        let mut q_out: Vec<S> = (0..nb).map(|_| x[0].promote(0.0)).collect();
        for (br, (s_f, s_t)) in self.data.branches.iter().zip(&flows) {
            p_out[br.from] = p_out[br.from].clone() + s_f.re.clone();
            q_out[br.from] = q_out[br.from].clone() + s_f.im.clone();
            p_out[br.to] = p_out[br.to].clone() + s_t.re.clone();
            q_out[br.to] = q_out[br.to].clone() + s_t.im.clone();
        }
        let mut p_gen: Vec<S> = (0..nb).map(|_| x[0].promote(0.0)).collect();
        let mut q_gen: Vec<S> = (0..nb).map(|_| x[0].promote(0.0)).collect();
        for (g, gen) in self.data.gens.iter().enumerate() {
            p_gen[gen.bus] = p_gen[gen.bus].clone() + pg[g].clone();
            q_gen[gen.bus] = q_gen[gen.bus].clone() + qg[g].clone();
        }
        let mut out = Vec::with_capacity(2 * nb);
        for i in 0..nb {
            out.push(p_gen[i].clone() - p[i].clone() - p_out[i].clone());
        }
        for i in 0..nb {
            out.push(q_gen[i].clone() - p[nb + i].clone() - q_out[i].clone());
        }
        out
    }

    fn ineq_constraints<S: Scalar>(&self, x: &[S], _p: &[S]) -> Vec<S> {
        let (vm, va, _, _) = self.unpack(x);
        let flows = self.branch_flows(&vm, &va);
        let mut out = Vec::with_capacity(2 * flows.len());
        for (br, (s_f, s_t)) in self.data.branches.iter().zip(&flows) {
            let cap = br.s_max * br.s_max;
            out.push(s_f.norm_sq() - cap);
            out.push(s_t.norm_sq() - cap);
        }
        out
    }

    fn lower_bounds(&self) -> Vec<f64> {
        let mut lb = vec![self.data.vm_bounds.0; self.n_bus()];
        lb.extend(vec![f64::NEG_INFINITY; self.n_bus() - 1]);
        for gen in &self.data.gens {
            lb.push(gen.pg_bounds.0);
        }
        for gen in &self.data.gens {
            lb.push(gen.qg_bounds.0);
        }
        lb
    }

    fn upper_bounds(&self) -> Vec<f64> {
        let mut ub = vec![self.data.vm_bounds.1; self.n_bus()];
        ub.extend(vec![f64::INFINITY; self.n_bus() - 1]);
        for gen in &self.data.gens {
            ub.push(gen.pg_bounds.1);
        }
        for gen in &self.data.gens {
            ub.push(gen.qg_bounds.1);
        }
        ub
    }

    fn param_box(&self) -> (Vec<f64>, Vec<f64>) {
        self.data.demand_box.clone()
    }

    fn reference_param(&self) -> Vec<f64> {
        self.data.ref_demand.clone()
    }

    fn scale_range(&self) -> (f64, f64) {
        self.data.scale_range
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_line_case(r: f64, x: f64, b_shunt: f64) -> AcOpf3Bus {
        let branches = vec![Branch::from_impedance(0, 1, r, x, b_shunt, 2.0)];
        let gens = vec![Generator {
            bus: 0,
            pg_bounds: (0.0, 2.0),
            qg_bounds: (-1.0, 1.0),
            c2: 0.1,
            c1: 1.0,
        }];
        let ref_demand = vec![0.1, 0.4, 0.05, 0.1];
        let lo = ref_demand.iter().map(|v| 0.5 * v).collect();
        let hi = ref_demand.iter().map(|v| 1.5 * v).collect();
        AcOpf3Bus::new(AcOpfData {
            n_bus: 2,
            slack: 0,
            branches,
            gens,
            vm_bounds: (0.9, 1.1),
            ref_demand,
            demand_box: (lo, hi),
            scale_range: (0.8, 1.1),
        })
    }

    #[test]
    fn purely_reactive_line_flow_matches_hand_evaluation() {
        // y = 1/(j 0.1) = -10j, no shunt, vm = 1, angles (0.1, 0).
        let net = single_line_case(0.0, 0.1, 0.0);
        let flows = net.flows(&[1.0, 1.0], &[0.1, 0.0]);
        let (s_f, s_t) = flows[0];
        // S_f = conj(-10j)(1 - cos(0.1) - j sin(0.1)) = 10 sin(.1) + 10j(1 - cos(.1))
        assert!((s_f.0 - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((s_f.1 - 10.0 * (1.0 - 0.1f64.cos())).abs() < 1e-12);
        // Lossless: sending plus receiving real power is zero.
        assert!((s_f.0 + s_t.0).abs() < 1e-12);
    }

    #[test]
    fn shunt_only_flow_is_conjugate_admittance() {
        let mut net = single_line_case(0.0, 0.1, 0.0);
        net.data.branches[0].y = (0.0, 0.0);
        net.data.branches[0].yc_from = (0.0, 0.05);
        let flows = net.flows(&[1.0, 1.0], &[0.3, -0.2]);
        assert_eq!(flows[0].0, (0.0, -0.05));
    }

    #[test]
    fn resistive_line_losses_are_real_and_nonnegative() {
        let net = single_line_case(0.05, 0.0, 0.0);
        for (vmf, vmt, th) in [(1.0, 1.0, 0.2), (1.05, 0.95, -0.3), (0.9, 1.1, 0.0)] {
            let flows = net.flows(&[vmf, vmt], &[th, 0.0]);
            let (s_f, s_t) = flows[0];
            let p_loss = s_f.0 + s_t.0;
            let q_loss = s_f.1 + s_t.1;
            assert!(p_loss >= -1e-14, "loss {p_loss}");
            assert!(q_loss.abs() < 1e-14, "reactive loss {q_loss} on resistive line");
        }
    }

    #[test]
    fn flat_start_balance_residual_matches_hand_evaluation() {
        // Lossless line, flat voltage profile: every flow is zero, so the
        // balance residual is exactly generation minus demand per bus.
        let net = single_line_case(0.0, 0.1, 0.0);
        let p = [0.1, 0.4, 0.05, 0.1];
        // x = (vm0, vm1, va1, pg0, qg0); generator covers total demand.
        let x = [1.0, 1.0, 0.0, 0.5, 0.15];
        let eq = net.eq_constraints(&x, &p);
        assert_eq!(eq.len(), 4);
        assert!((eq[0] - (0.5 - 0.1)).abs() < 1e-15);
        assert!((eq[1] - (0.0 - 0.4)).abs() < 1e-15);
        assert!((eq[2] - (0.15 - 0.05)).abs() < 1e-15);
        assert!((eq[3] - (0.0 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn case3_dimensions_and_bounds() {
        let net = AcOpf3Bus::case3();
        assert_eq!(net.num_vars(), 9);
        assert_eq!(net.num_params(), 6);
        assert_eq!(net.num_eq(), 6);
        assert_eq!(net.num_ineq(), 6);
        let lb = net.lower_bounds();
        let ub = net.upper_bounds();
        assert_eq!(lb.len(), 9);
        assert_eq!(lb[0], 0.9);
        assert_eq!(ub[0], 1.1);
        assert!(lb[3].is_infinite() && lb[3] < 0.0);
        assert_eq!(lb[5], 0.0);
        assert_eq!(ub[5], 1.5);
        // 6 thermal + 7 finite lower (vm, pg, qg) + 7 finite upper.
        assert_eq!(super::super::folded_ineq_count(&net), 20);
    }

    #[test]
    fn slack_angle_is_pinned_to_zero() {
        let net = AcOpf3Bus::case3();
        let x: Vec<f64> = (0..9).map(|i| 1.0 + 0.01 * i as f64).collect();
        let (_, va, _, _) = net.unpack(&x);
        assert_eq!(va[0], 0.0);
        assert_eq!(va[1], x[3]);
        assert_eq!(va[2], x[4]);
    }
}
