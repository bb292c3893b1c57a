//! Machine checks of the mechanism's claims on small instances: the
//! fixed-point identity of the stopping recursion, the no-profitable-
//! deviation property (library deviations plus exhaustive best response at
//! the smallest size), detectability and collapse of off-path play, and the
//! regret-domination inequalities. All checks run on the exact evaluator.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;
use std::sync::Arc;

use crate::algos::{value_of_b, AlgorithmKind, AlgorithmSpec};
use crate::bandit::DiscretePrior;
use crate::caos::{analyze, CaosConfig, CaosStrategy};
use crate::deviation::{make_deviation, DeviationKind, DeviationSpec};
use crate::engine::{
    expand_step, expected_value, expected_value_with, uniform_profile, EvalResult, SimState,
};
use crate::error::CoreError;
use crate::memo::Caches;
use crate::oer::{oer_root, OerOutcome, OerVariant};
use crate::scalar::Scalar;
use crate::strategy::{Intent, StepCtx, Strategy};
use crate::view::MessageKind;

/// One verification check: margin and pass flag under the arithmetic mode.
#[derive(Debug, Clone)]
pub struct Report {
    pub claim: String,
    pub config_digest: String,
    pub margin_text: String,
    pub margin: f64,
    pub pass: bool,
    pub detail: Option<String>,
}

impl Report {
    fn new<N: Scalar>(claim: String, digest: &str, margin: &N, pass: bool) -> Self {
        Self {
            claim,
            config_digest: digest.to_string(),
            margin_text: format!("{margin}"),
            margin: margin.to_f64(),
            pass,
            detail: None,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

/// `margin >= 0` under the arithmetic mode (float allows the fixed margin
/// below zero).
fn nonnegative<N: Scalar>(margin: &N) -> bool {
    *margin >= N::zero() || margin.close_to(&N::zero())
}

/// A micro instance to verify against.
#[derive(Debug, Clone)]
pub struct MicroConfig<N: Scalar> {
    pub label: String,
    pub prior: Arc<DiscretePrior<N>>,
    pub m: usize,
    pub horizon: u64,
    pub algorithm: AlgorithmSpec,
    pub variant: OerVariant,
    pub budget: u64,
}

impl<N: Scalar> MicroConfig<N> {
    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn caos_config(&self) -> CaosConfig {
        CaosConfig::caos(self.m, self.k(), self.horizon, self.algorithm, self.variant)
    }

    pub fn sp_config(&self) -> CaosConfig {
        CaosConfig::sp_caos(self.m, self.k(), self.horizon, self.algorithm, self.variant)
    }

    fn caches(&self) -> Rc<Caches<N>> {
        Rc::new(Caches::with_property_checks(self.budget))
    }

    fn state(&self, cfg: &CaosConfig, caches: Rc<Caches<N>>) -> SimState<N> {
        let profile = uniform_profile(&CaosStrategy::new(cfg.clone()) as &dyn Strategy<N>, self.m);
        SimState::new(Arc::clone(&self.prior), profile, self.horizon, caches)
    }
}

/// Expected continuation values at a node, per the stopping recursion,
/// with entries of agents outside the group taken from their own views.
fn node_oer<N: Scalar>(
    state: &SimState<N>,
    cfg: &CaosConfig,
) -> Result<OerOutcome<N>, CoreError> {
    let m = state.m();
    let t = state.t;
    let caches = &state.caches;
    let mut analyses = Vec::with_capacity(m);
    for view in &state.views {
        analyses.push(analyze(view, t, cfg, caches)?);
    }
    let group: Vec<usize> = (0..m)
        .filter(|&i| {
            let a = &analyses[i];
            !a.frozen && !a.collapsed && a.active.contains(&i)
        })
        .collect();

    if let Some(&leader) = group.first() {
        for &i in &group {
            if analyses[i].active != analyses[leader].active {
                return Err(CoreError::Invariant(format!(
                    "group members disagree on the active set at t={t}"
                )));
            }
        }
        let lead = &analyses[leader];
        let mut inactive = BTreeMap::new();
        for j in 0..m {
            if !lead.active.contains(&j) {
                let own = state.views[j].own_posterior()?;
                inactive.insert(j, value_of_b(&own, t, state.horizon, caches)?);
            }
        }
        oer_root(
            t,
            state.horizon,
            m,
            &lead.active,
            &lead.algo,
            &lead.shared_post,
            cfg.variant,
            caches,
            &inactive,
        )
    } else {
        // Everyone plays the fallback; the prediction is each agent's
        // own-view fallback value.
        let mut rho = Vec::with_capacity(m);
        for j in 0..m {
            let own = state.views[j].own_posterior()?;
            rho.push(value_of_b(&own, t, state.horizon, caches)?);
        }
        let vb = rho.first().cloned().unwrap_or_else(N::zero);
        Ok(OerOutcome {
            rho,
            selected: BTreeSet::new(),
            vb,
        })
    }
}

/// Fixed-point check: the stopping recursion equals the exact game value of
/// the all-compliant profile at the root and every reachable node.
pub fn verify_oer_fixed_point<N: Scalar>(micro: &MicroConfig<N>) -> Result<Vec<Report>, CoreError> {
    let cfg = micro.caos_config();
    let caches = micro.caches();
    let state = micro.state(&cfg, Rc::clone(&caches));

    let mut nodes = 0u64;
    let mut worst: Option<N> = None;
    let mut all_equal = true;
    let mut first_error: Option<String> = None;

    expected_value_with(&state, &mut |node, result: &EvalResult<N>| {
        nodes += 1;
        match node_oer(node, &cfg) {
            Ok(out) => {
                for i in 0..node.m() {
                    let diff = out.rho[i].clone() - result.values[i].clone();
                    let abs = if diff < N::zero() {
                        N::zero() - diff
                    } else {
                        diff
                    };
                    if !abs.close_to(&N::zero()) {
                        all_equal = false;
                    }
                    if worst.as_ref().map_or(true, |w| abs > *w) {
                        worst = Some(abs);
                    }
                }
            }
            Err(err) => {
                all_equal = false;
                if first_error.is_none() {
                    first_error = Some(err.to_string());
                }
            }
        }
    })?;

    let worst = worst.unwrap_or_else(N::zero);
    let mut report = Report::new(
        "oer_fixed_point".into(),
        &micro.label,
        &worst,
        all_equal,
    )
    .with_detail(format!("nodes={nodes}"));
    if let Some(err) = first_error {
        report = report.with_detail(err);
    }

    let violations = caches.props.violation_count();
    let props = Report {
        claim: "oer_node_properties".into(),
        config_digest: micro.label.clone(),
        margin_text: violations.to_string(),
        margin: violations as f64,
        pass: violations == 0,
        detail: Some(format!("nodes_checked={}", caches.props.nodes())),
    };
    Ok(vec![report, props])
}

/// No-profitable-deviation margins for the deviation library, plus the
/// preamble deviations against the flag-extended profile, plus exhaustive
/// deterministic best response at the smallest size.
pub fn verify_nash<N: Scalar>(
    micro: &MicroConfig<N>,
    exhaustive: bool,
) -> Result<Vec<Report>, CoreError> {
    let mut reports = Vec::new();
    let caches = micro.caches();

    let cfg = micro.caos_config();
    let compliance = expected_value(&micro.state(&cfg, Rc::clone(&caches)))?;

    let mut kinds = vec![DeviationKind::NoOp];
    kinds.extend(DeviationKind::caos_library());
    for kind in kinds {
        for agent in 0..micro.m {
            let spec = DeviationSpec::new(cfg.clone(), agent, kind, 1);
            let mut profile =
                uniform_profile(&CaosStrategy::new(cfg.clone()) as &dyn Strategy<N>, micro.m);
            profile[agent] = make_deviation(spec);
            let state = SimState::new(
                Arc::clone(&micro.prior),
                profile,
                micro.horizon,
                Rc::clone(&caches),
            );
            let deviant = expected_value(&state)?;
            let margin = compliance.values[agent].clone() - deviant.values[agent].clone();
            let pass = if kind == DeviationKind::NoOp {
                margin.close_to(&N::zero())
            } else {
                nonnegative(&margin)
            };
            reports.push(Report::new(
                format!("nash_{}_agent{agent}", kind.name()),
                &micro.label,
                &margin,
                pass,
            ));
        }
    }

    // Flag-round deviations only exist in the extended profile.
    let sp = micro.sp_config();
    let sp_compliance = expected_value(&micro.state(&sp, Rc::clone(&caches)))?;
    for kind in DeviationKind::flag_library() {
        for agent in 0..micro.m {
            let spec = DeviationSpec::new(sp.clone(), agent, kind, 1);
            let mut profile =
                uniform_profile(&CaosStrategy::new(sp.clone()) as &dyn Strategy<N>, micro.m);
            profile[agent] = make_deviation(spec);
            let state = SimState::new(
                Arc::clone(&micro.prior),
                profile,
                micro.horizon,
                Rc::clone(&caches),
            );
            let deviant = expected_value(&state)?;
            let margin = sp_compliance.values[agent].clone() - deviant.values[agent].clone();
            reports.push(Report::new(
                format!("nash_{}_agent{agent}", kind.name()),
                &micro.label,
                &margin,
                nonnegative(&margin),
            ));
        }
    }

    if exhaustive && micro.m == 2 && micro.k() == 2 && micro.horizon == 2 {
        for agent in 0..micro.m {
            let br = best_response(micro, &cfg, agent, Rc::clone(&caches))?;
            let margin = compliance.values[agent].clone() - br;
            reports.push(
                Report::new(
                    format!("nash_exhaustive_agent{agent}"),
                    &micro.label,
                    &margin,
                    nonnegative(&margin),
                )
                .with_detail("all deterministic policies via best-response search".into()),
            );
        }
    }

    Ok(reports)
}

/// Scripted per-step choices for the best-response search.
#[derive(Clone)]
struct Scripted {
    arm: usize,
    announce: bool,
    share: bool,
    forward: bool,
}

impl<N: Scalar> Strategy<N> for Scripted {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn choose_arm(&self, _ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        Ok(self.arm)
    }

    fn announce(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if !self.announce {
            return Ok(Vec::new());
        }
        let own = ctx.view.own_at(ctx.t).expect("acted this step");
        Ok(vec![Intent {
            kind: MessageKind::Announce { arm: own.arm },
            recipients: others(ctx),
        }])
    }

    fn share(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if !self.share {
            return Ok(Vec::new());
        }
        let own = ctx.view.own_at(ctx.t).expect("acted this step");
        Ok(vec![Intent {
            kind: MessageKind::Share {
                arm: own.arm,
                reward: own.reward,
            },
            recipients: others(ctx),
        }])
    }

    fn forward(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if !self.forward {
            return Ok(Vec::new());
        }
        let mut intents = Vec::new();
        for (sender, (arm, reward)) in ctx.view.shares_at(ctx.t) {
            intents.push(Intent {
                kind: MessageKind::Forward {
                    origin: sender,
                    arm,
                    reward,
                },
                recipients: others(ctx),
            });
        }
        Ok(intents)
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>> {
        Box::new(self.clone())
    }
}

fn others<N: Scalar>(ctx: &StepCtx<N>) -> BTreeSet<usize> {
    (0..ctx.view.m).filter(|&i| i != ctx.view.agent).collect()
}

/// Exact value of the deviator's best deterministic policy against the
/// compliant rest, by backward induction over her information sets. Chance
/// nodes sharing an information set are grouped so the policy cannot
/// condition on what the deviator has not seen.
fn best_response<N: Scalar>(
    micro: &MicroConfig<N>,
    cfg: &CaosConfig,
    deviator: usize,
    caches: Rc<Caches<N>>,
) -> Result<N, CoreError> {
    let profile = uniform_profile(&CaosStrategy::new(cfg.clone()) as &dyn Strategy<N>, micro.m);
    let root = SimState::new(Arc::clone(&micro.prior), profile, micro.horizon, caches);
    br_value(&[(root, N::one())], deviator, micro.k())
}

fn br_value<N: Scalar>(
    nodes: &[(SimState<N>, N)],
    deviator: usize,
    k: usize,
) -> Result<N, CoreError> {
    let t = nodes[0].0.t;
    let horizon = nodes[0].0.horizon;
    if t > horizon {
        return Ok(N::zero());
    }
    let mut best: Option<N> = None;
    for arm in 0..k {
        for announce in [false, true] {
            for share in [false, true] {
                for forward in [false, true] {
                    let script = Scripted {
                        arm,
                        announce,
                        share,
                        forward,
                    };
                    let mut immediate = N::zero();
                    let mut groups: BTreeMap<String, Vec<(SimState<N>, N)>> = BTreeMap::new();
                    for (state, weight) in nodes {
                        let mut staged = state.clone();
                        staged.strategies[deviator] = Box::new(script.clone());
                        for branch in expand_step(&staged)? {
                            let p = weight.clone() * branch.weight.clone();
                            immediate = immediate
                                + p.clone() * N::from_int(u64::from(branch.rewards[deviator]));
                            let key = branch.state.views[deviator].fingerprint();
                            groups.entry(key).or_default().push((branch.state, p));
                        }
                    }
                    let mut total = immediate;
                    for group in groups.values() {
                        total = total + br_value(group, deviator, k)?;
                    }
                    if best.as_ref().map_or(true, |b| total > *b) {
                        best = Some(total);
                    }
                }
            }
        }
    }
    best.ok_or_else(|| CoreError::Invariant("empty option set".into()))
}

/// Off-path checks: detectability of scripted deviations, permanent collapse
/// afterwards, and no profitable continuation deviation (flag deviations
/// included) from the off-path states.
pub fn verify_subgame<N: Scalar>(micro: &MicroConfig<N>) -> Result<Vec<Report>, CoreError> {
    let mut reports = Vec::new();
    let sp = micro.sp_config();
    let caches = micro.caches();

    for script in DeviationKind::caos_library() {
        let spec = DeviationSpec::new(sp.clone(), 0, script, 1);
        let mut profile =
            uniform_profile(&CaosStrategy::new(sp.clone()) as &dyn Strategy<N>, micro.m);
        profile[0] = make_deviation(spec);
        let root = SimState::new(
            Arc::clone(&micro.prior),
            profile,
            micro.horizon,
            Rc::clone(&caches),
        );
        let branches = expand_step(&root)?;

        // Detectability: after the deviation step, at least two distinct
        // agents' awareness flags must be true in every branch.
        let mut min_fire = usize::MAX;
        for branch in &branches {
            let mut fired = 0;
            for view in &branch.state.views {
                if analyze(view, branch.state.t, &sp, &caches)?.psi {
                    fired += 1;
                }
            }
            min_fire = min_fire.min(fired);
        }
        let margin = N::from_int(min_fire as u64) - N::from_int(2);
        reports.push(Report::new(
            format!("psi_detect_{}", script.name()),
            &micro.label,
            &margin,
            min_fire >= 2,
        ));

        // Collapse is absorbing: after the detection step no agent emits
        // anything, and every compliant agent plays her own-view fallback arm.
        let mut violations = 0u64;
        for branch in &branches {
            violations += absorbing_violations(&branch.state, &sp, &caches)?;
        }
        let margin = N::from_int(violations);
        reports.push(Report::new(
            format!("absorbing_{}", script.name()),
            &micro.label,
            &margin,
            violations == 0,
        ));

        // Continuation margins: from every off-path state, no agent gains by
        // swapping her continuation for any library deviation.
        let mut continuation_kinds = vec![DeviationKind::NoOp];
        continuation_kinds.extend(DeviationKind::caos_library());
        continuation_kinds.extend(DeviationKind::flag_library());
        for kind in continuation_kinds {
            let mut worst: Option<N> = None;
            for branch in &branches {
                let honest = expected_value(&branch.state)?;
                for agent in 1..micro.m {
                    let mut deviant_state = branch.state.clone();
                    deviant_state.strategies[agent] = make_deviation(DeviationSpec::new(
                        sp.clone(),
                        agent,
                        kind,
                        branch.state.t,
                    ));
                    let deviant = expected_value(&deviant_state)?;
                    let margin = honest.values[agent].clone() - deviant.values[agent].clone();
                    if worst.as_ref().map_or(true, |w| margin < *w) {
                        worst = Some(margin);
                    }
                }
            }
            if let Some(worst) = worst {
                reports.push(Report::new(
                    format!("subgame_{}_{}", script.name(), kind.name()),
                    &micro.label,
                    &worst,
                    nonnegative(&worst),
                ));
            }
        }
    }

    Ok(reports)
}

/// Counts emissions after a collapse and fallback-arm mismatches in the
/// subtree of `state`. An agent is considered collapsed once her own view
/// says so; the deviator herself is exempt from the arm check (her scripted
/// behavior is whatever the deviation dictates).
fn absorbing_violations<N: Scalar>(
    state: &SimState<N>,
    cfg: &CaosConfig,
    caches: &Rc<Caches<N>>,
) -> Result<u64, CoreError> {
    if state.t > state.horizon {
        return Ok(0);
    }
    let mut violations = 0u64;

    // Which agents are in permanent fallback as of this step, per their own
    // views.
    let mut fallback: Vec<bool> = Vec::with_capacity(state.m());
    for view in &state.views {
        let a = analyze(view, state.t, cfg, caches)?;
        fallback.push(a.collapsed || a.frozen || (cfg.collapse_on_deviation && a.psi));
    }

    for branch in expand_step(state)? {
        for msg in &branch.messages {
            if fallback[msg.sender] {
                violations += 1;
            }
        }
        for agent in 1..state.m() {
            if fallback[agent] {
                let view = &state.views[agent];
                let own_post = view.own_posterior()?;
                let expected = crate::algos::recommend_b(
                    &own_post,
                    &view.own_stats(),
                    state.t,
                    state.horizon,
                    crate::algos::BMode::Exact,
                    caches,
                )?;
                if branch.actions[agent] != expected {
                    violations += 1;
                }
            }
        }
        violations += absorbing_violations(&branch.state, cfg, caches)?;
    }
    Ok(violations)
}

/// Regret-domination margins. The group profile's regret must not exceed the
/// fully-compliant profile's per-agent regret (symmetric algorithms) nor its
/// worst-treated-agent regret (always).
pub fn verify_regret_domination<N: Scalar>(
    micro: &MicroConfig<N>,
) -> Result<Vec<Report>, CoreError> {
    let mut reports = Vec::new();
    let caches = micro.caches();

    let caos_cfg = micro.caos_config();
    let caos_values = expected_value(&micro.state(&caos_cfg, Rc::clone(&caches)))?;

    let pia_cfg = CaosConfig::pi_a(micro.m, micro.k(), micro.horizon, micro.algorithm);
    let pia_values = expected_value(&micro.state(&pia_cfg, Rc::clone(&caches)))?;

    let horizon_best =
        N::from_int(micro.horizon) * micro.prior.expected_best_mean();
    let regret = |v: &N| horizon_best.clone() - v.clone();
    let regret_max_pia = regret(&pia_values.min_value);
    let symmetric = micro.algorithm.kind.symmetric();

    for agent in 0..micro.m {
        let regret_caos = regret(&caos_values.values[agent]);
        let regret_pia = regret(&pia_values.values[agent]);
        if symmetric {
            let margin = regret_pia.clone() - regret_caos.clone();
            reports.push(Report::new(
                format!("regret_dominates_pia_agent{agent}"),
                &micro.label,
                &margin,
                nonnegative(&margin),
            ));
            let eq = regret_max_pia.clone() - regret_pia.clone();
            reports.push(Report::new(
                format!("regret_max_equals_individual_agent{agent}"),
                &micro.label,
                &eq,
                eq.close_to(&N::zero()),
            ));
        }
        let margin = regret_max_pia.clone() - regret_caos;
        reports.push(Report::new(
            format!("regret_dominates_max_agent{agent}"),
            &micro.label,
            &margin,
            nonnegative(&margin),
        ));
    }

    Ok(reports)
}

/// The asymmetric victim-picking rule unravels: the subset scan ends empty at
/// t = 1 and every agent's value equals her fallback value.
pub fn victim_scenario<N: Scalar>(micro: &MicroConfig<N>) -> Result<Vec<Report>, CoreError> {
    let caches = micro.caches();
    let spec = AlgorithmSpec::new(AlgorithmKind::Victim);
    let cfg = CaosConfig::caos(micro.m, micro.k(), micro.horizon, spec, micro.variant);
    let micro_victim = MicroConfig {
        algorithm: spec,
        ..micro.clone()
    };

    let state = micro_victim.state(&cfg, Rc::clone(&caches));
    let out = node_oer(&state, &cfg)?;
    let unraveled = out.selected.is_empty();
    let mut worst = N::zero();
    let mut values_match = true;
    let values = expected_value(&state)?;
    for agent in 0..micro.m {
        let diff = values.values[agent].clone() - out.vb.clone();
        let abs = if diff < N::zero() { N::zero() - diff } else { diff };
        if !abs.close_to(&N::zero()) {
            values_match = false;
        }
        if abs > worst {
            worst = abs;
        }
    }
    let report = Report::new(
        "victim_unravels".into(),
        &micro.label,
        &worst,
        unraveled && values_match,
    )
    .with_detail(format!(
        "selected_size={} fallback={}",
        out.selected.len(),
        out.vb
    ));
    Ok(vec![report])
}
