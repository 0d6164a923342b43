//! One PASS/FAIL line per acceptance criterion, tolerances pinned below.

mod common;

use std::time::Instant;

use common::{random_instance, random_prompts, Instance, PROMPT_POOL};
use vnetchat_core::allocator::{brute_force_solve, check_feasibility, solve, SolveStatus};
use vnetchat_core::control::{
    apply_prompt_batch, arbitrate, brute_force_arbitrate, measure, update_params, ArbitrationResult, Problem,
    UpdateRates,
};
use vnetchat_core::eval::{compute_metrics, run_sweep, Prediction};
use vnetchat_core::fixtures;
use vnetchat_core::intent::llm::marker_block;
use vnetchat_core::intent::{parse_llm_response, Endpoints, ExtractorKind, KeywordExtractor, SyntaxError, UpdateMarker};
use vnetchat_core::model::{Measurement, ParamMap, ServiceParams, UserId};
use vnetchat_core::session::{create_session, replay, InfeasibilityMode, Session, SessionConfig, StepResult};

const RULE_TOL: f64 = 1e-12;
const OBJ_TOL: f64 = 1e-9;
const ORACLE_CASES: u64 = 200;
const ORACLE_BUDGET_S: f64 = 30.0;
const ARBITRATION_CASES: u64 = 100;
const ARBITRATION_BUDGET_S: f64 = 10.0;
const PROPERTY_CASES: u64 = 100;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mk(c: i8, b: i8) -> UpdateMarker {
    UpdateMarker::from_i8(c, b).unwrap()
}

fn update_rule() -> Outcome {
    let p = ServiceParams::new(1.0, 3.0).unwrap();
    let out = update_params(&p, mk(0, -1), 1.0, 2.0, &UpdateRates::new(2.0, 1.5).unwrap()).map_err(|e| e.to_string())?;
    let b = out.latency_bound;
    ensure((b - 4.0 / 3.0).abs() <= RULE_TOL, || format!("bound {b}"))?;
    ensure(format!("{b:.1}") == "1.3", || format!("displayed {b:.1}"))?;
    Ok(format!("bound {b:.16} (tol {RULE_TOL:e})"))
}

fn cpu_rule() -> Outcome {
    let p = ServiceParams::new(1.0, 1.0).unwrap();
    let out = update_params(&p, mk(1, 0), 1.0, 1.0, &UpdateRates::new(2.0, 1.5).unwrap()).map_err(|e| e.to_string())?;
    ensure(out.cpu_param == 2.0, || format!("cpu {}", out.cpu_param))?;
    Ok("cpu 1.0 -> 2.0 exact".into())
}

fn solver_oracle() -> Outcome {
    let start = Instant::now();
    let mut optimal = 0;
    for seed in 0..ORACLE_CASES {
        let i = random_instance(seed, 2);
        let a = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).map_err(|e| e.to_string())?;
        let b = brute_force_solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).map_err(|e| e.to_string())?;
        ensure(a.status == b.status, || format!("seed {seed}: status {:?} vs {:?}", a.status, b.status))?;
        if a.is_optimal() {
            optimal += 1;
            let (x, y) = (a.objective.unwrap(), b.objective.unwrap());
            ensure((x - y).abs() <= OBJ_TOL, || format!("seed {seed}: objective {x} vs {y}"))?;
            ensure(a.allocation == b.allocation, || format!("seed {seed}: allocations differ"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < ORACLE_BUDGET_S, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{ORACLE_CASES} instances ({optimal} optimal), objective tol {OBJ_TOL:e}, {secs:.2}s < {ORACLE_BUDGET_S}s"
    ))
}

fn single_user_session(mode: InfeasibilityMode) -> Session {
    let (users, params) = fixtures::single_user();
    let config = SessionConfig {
        mode,
        ..Default::default()
    };
    create_session(fixtures::internet2_like(), users, params, config).expect("fixture session")
}

fn multi_user_session() -> Session {
    let (users, params) = fixtures::multi_user();
    create_session(fixtures::internet2_like(), users, params, SessionConfig::default()).expect("fixture session")
}

fn single_user_replay() -> Outcome {
    let mut s = single_user_session(InfeasibilityMode::PaperReplay);
    let u = UserId(1);
    let k0_latency = s.measurement.actual_latency[&u];
    ensure(k0_latency == 2.0, || format!("k=0 path latency {k0_latency}"))?;
    let steps = replay(&mut s, &fixtures::single_user_scenario(), &KeywordExtractor).map_err(|e| e.to_string())?;
    let mut cpu = vec![s.initial.params_after[&u].cpu_param];
    let mut lb = vec![s.initial.params_after[&u].latency_bound];
    for r in &steps {
        cpu.push(r.params_after[&u].cpu_param);
        lb.push(r.params_after[&u].latency_bound);
    }
    ensure(cpu == [2.0, 1.0, 1.0, 2.0], || format!("cpu {cpu:?}"))?;
    ensure(lb[..3] == [3.0, 3.0, 2.0 / 1.5], || format!("bound {lb:?}"))?;
    let statuses: Vec<SolveStatus> = steps.iter().map(|r| r.status).collect();
    ensure(
        statuses == [SolveStatus::Optimal, SolveStatus::Optimal, SolveStatus::Infeasible],
        || format!("statuses {statuses:?}"),
    )?;
    let actual: Vec<f64> = steps
        .iter()
        .filter_map(|r| r.measurement.as_ref())
        .map(|m| m.actual_latency[&u])
        .collect();
    Ok(format!(
        "cpu {cpu:?}, bound {:?}, actual latency {:?}, final (Infeasible)",
        lb.iter().map(|b| format!("{b:.1}")).collect::<Vec<_>>(),
        [vec![k0_latency], actual].concat()
    ))
}

/// Adding any rejected prompt to the accepted set must break feasibility.
fn maximality_holds(
    problem: &Problem<'_>,
    params: &ParamMap,
    meas: &Measurement,
    rates: &UpdateRates,
    prompts: &[(UserId, UpdateMarker)],
    res: &ArbitrationResult,
) -> bool {
    if res.accept.iter().all(|a| *a) {
        return true;
    }
    (0..prompts.len()).filter(|&i| !res.accept[i]).all(|i| {
        let chosen: Vec<_> = prompts
            .iter()
            .enumerate()
            .filter(|(j, _)| res.accept[*j] || *j == i)
            .map(|(_, p)| *p)
            .collect();
        match apply_prompt_batch(params, &chosen, meas, rates) {
            Ok(p) => !problem.solve(&p).unwrap().is_optimal(),
            Err(_) => true,
        }
    })
}

struct ArbitrationCase {
    inst: Instance,
    meas: Measurement,
    prompts: Vec<(UserId, UpdateMarker)>,
}

/// Random instances whose standing configuration is feasible.
fn arbitration_cases(n: u64) -> Vec<ArbitrationCase> {
    let mut out = Vec::new();
    let mut seed = 10_000;
    while (out.len() as u64) < n {
        seed += 1;
        let inst = random_instance(seed, 3);
        let standing = solve(&inst.topology, &inst.users, &inst.params, &inst.prev, &inst.weights).unwrap();
        let Some(a) = standing.allocation else { continue };
        let meas = measure(&inst.topology, &inst.users, &inst.params, &a);
        let prompts = random_prompts(seed, &inst.users, 4);
        out.push(ArbitrationCase { inst, meas, prompts });
    }
    out
}

fn arbitration() -> Outcome {
    let start = Instant::now();
    let rates = UpdateRates::default();
    let mut partial = 0;
    for (n, c) in arbitration_cases(ARBITRATION_CASES).iter().enumerate() {
        let i = &c.inst;
        let problem = Problem {
            topology: &i.topology,
            users: &i.users,
            prev: &i.prev,
            weights: &i.weights,
        };
        let a = arbitrate(&problem, &i.params, &c.meas, &rates, &c.prompts).map_err(|e| e.to_string())?;
        let b = brute_force_arbitrate(&problem, &i.params, &c.meas, &rates, &c.prompts).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("case {n}: {:?} vs {:?}", a.accept, b.accept))?;
        ensure(a.outcome.is_optimal(), || format!("case {n}: outcome not optimal"))?;
        ensure(maximality_holds(&problem, &i.params, &c.meas, &rates, &c.prompts, &a), || {
            format!("case {n}: maximality certificate fails")
        })?;
        if a.accept.iter().any(|x| !x) {
            partial += 1;
        }
    }
    let mut s = multi_user_session();
    let steps = replay(&mut s, &fixtures::multi_user_scenario(), &KeywordExtractor).map_err(|e| e.to_string())?;
    let conflict: Vec<bool> = steps[2].prompts.iter().map(|p| p.accepted).collect();
    ensure(conflict == [true, true, false], || format!("conflict step accept {conflict:?}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < ARBITRATION_BUDGET_S, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{ARBITRATION_CASES} cases M<=4 ({partial} with rejections) match brute force, certificate holds, multi-user accept (1,1,0), {secs:.2}s"
    ))
}

fn installed_ok(s: &Session, r: &StepResult) -> Result<(), String> {
    if let Some(a) = &r.allocation {
        let rep = check_feasibility(&s.topology, &s.users, &r.params_after, a);
        ensure(rep.feasible, || format!("step {}: {:?}", r.step, rep.violated))?;
    }
    Ok(())
}

fn random_session_run(seed: u64, mode: InfeasibilityMode) -> Option<Vec<StepResult>> {
    let i = random_instance(seed, 3);
    let config = SessionConfig {
        weights: i.weights,
        mode,
        ..Default::default()
    };
    let mut s = create_session(i.topology, i.users.clone(), i.params, config).ok()?;
    let mut out = Vec::new();
    for step in 0..3u64 {
        for (n, (u, _)) in random_prompts(seed * 7 + step, &i.users, 3).iter().enumerate() {
            let text = PROMPT_POOL[(seed as usize + n + step as usize) % PROMPT_POOL.len()];
            s.submit_prompt(*u, text).unwrap();
        }
        out.push(s.run_step_with(&KeywordExtractor).unwrap());
    }
    Some(out)
}

fn feasibility_guarantee() -> Outcome {
    let mut checked = 0;
    let mut check_all = |s: &Session, steps: &[StepResult]| -> Result<(), String> {
        installed_ok(s, &s.initial)?;
        for r in steps {
            installed_ok(s, r)?;
            checked += r.allocation.is_some() as usize;
        }
        Ok(())
    };
    for mode in [InfeasibilityMode::Arbitrated, InfeasibilityMode::PaperReplay] {
        let mut s = single_user_session(mode);
        let steps = replay(&mut s, &fixtures::single_user_scenario(), &KeywordExtractor).map_err(|e| e.to_string())?;
        check_all(&s, &steps)?;
    }
    let mut s = multi_user_session();
    let steps = replay(&mut s, &fixtures::multi_user_scenario(), &KeywordExtractor).map_err(|e| e.to_string())?;
    check_all(&s, &steps)?;
    for seed in 0..PROPERTY_CASES {
        for mode in [InfeasibilityMode::Arbitrated, InfeasibilityMode::PaperReplay] {
            let i = random_instance(seed, 3);
            let Some(steps) = random_session_run(seed, mode) else { continue };
            let config = SessionConfig {
                weights: i.weights,
                mode,
                ..Default::default()
            };
            let s = create_session(i.topology, i.users, i.params, config).unwrap();
            check_all(&s, &steps)?;
        }
    }
    for c in arbitration_cases(ARBITRATION_CASES) {
        let i = &c.inst;
        let problem = Problem {
            topology: &i.topology,
            users: &i.users,
            prev: &i.prev,
            weights: &i.weights,
        };
        let r = arbitrate(&problem, &i.params, &c.meas, &UpdateRates::default(), &c.prompts).unwrap();
        let a = r.outcome.allocation.as_ref().unwrap();
        let rep = check_feasibility(&i.topology, &i.users, &r.params_after, a);
        ensure(rep.feasible, || format!("arbitrated allocation infeasible: {:?}", rep.violated))?;
        checked += 1;
    }
    Ok(format!("{checked} installed allocations, zero violations"))
}

fn metric_protocol() -> Outcome {
    let p = |t: UpdateMarker, q: UpdateMarker| Prediction {
        truth: t,
        predicted: Ok(q),
        elapsed_s: 0.0,
        topic_time_s: None,
    };
    let six = [
        p(mk(1, 0), mk(1, 0)),
        p(mk(-1, 0), mk(-1, 0)),
        p(mk(0, 0), mk(1, 0)),
        p(mk(1, 0), mk(0, 0)),
        p(mk(0, 0), mk(0, 0)),
        p(mk(0, 0), mk(0, 0)),
    ];
    let m = compute_metrics(&six).map_err(|e| e.to_string())?;
    let (pr, rc) = (m.precision.0.unwrap_or(-1.0), m.recall.0.unwrap_or(-1.0));
    ensure((pr - 2.0 / 3.0).abs() <= RULE_TOL && (rc - 2.0 / 3.0).abs() <= RULE_TOL, || {
        format!("precision {pr} recall {rc}")
    })?;

    let data = fixtures::appendix_a();
    let perfect: Vec<Prediction> = data.iter().map(|s| p(s.marker, s.marker)).collect();
    let m = compute_metrics(&perfect).map_err(|e| e.to_string())?;
    let all = [m.precision, m.recall, m.balanced_accuracy];
    ensure(all.iter().all(|(a, b)| *a == Some(1.0) && *b == Some(1.0)), || format!("perfect {all:?}"))?;
    ensure(m.syntax_error_pct == (0.0, 0.0), || "perfect syntax".into())?;

    let sizes = [30, 20, 10, 5, 3];
    for kind in [ExtractorKind::Keyword, ExtractorKind::Svm] {
        let rows = run_sweep(&data, kind, &sizes, 42, &Endpoints::default()).map_err(|e| e.to_string())?;
        let got: Vec<usize> = rows.iter().map(|r| r.train_size).collect();
        ensure(got == sizes, || format!("{kind} sizes {got:?}"))?;
        for r in &rows {
            let m = &r.metrics;
            let rates = [m.precision, m.recall, m.balanced_accuracy];
            let in_unit = rates
                .iter()
                .flat_map(|(a, b)| [a, b])
                .flatten()
                .all(|v| (0.0..=1.0).contains(v));
            ensure(in_unit, || format!("{kind} size {}: {rates:?}", r.train_size))?;
            let (s1, s2) = m.syntax_error_pct;
            ensure((0.0..=100.0).contains(&s1) && (0.0..=100.0).contains(&s2), || "syntax range".into())?;
        }
    }
    Ok("6-sample precision 2/3 recall 2/3, perfect = 1.0, sweeps 5 rows in [0,1]".into())
}

fn llm_parsing() -> Outcome {
    let correct = include_str!("../fixtures/responses/correct_extraction.txt");
    let incorrect = include_str!("../fixtures/responses/incorrect_extraction.txt");
    ensure(parse_llm_response(correct) == Ok(mk(1, 0)), || "correct example".into())?;
    ensure(parse_llm_response(incorrect) == Ok(mk(-1, 0)), || "incorrect example".into())?;
    ensure(
        parse_llm_response("I cannot tell what the user wants.") == Err(SyntaxError),
        || "json-free text".into(),
    )?;
    for m in UpdateMarker::all() {
        ensure(parse_llm_response(&marker_block(&m)) == Ok(m), || format!("round trip {m}"))?;
    }
    Ok("(+1,0), (-1,0), SyntaxError, 9/9 round trips".into())
}

fn property_suites() -> Outcome {
    let mut mono = 0;
    for seed in 0..PROPERTY_CASES {
        let i = random_instance(1_000 + seed, 2);
        let base = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).unwrap();
        let loose: ParamMap = i
            .params
            .iter()
            .map(|(u, p)| (*u, ServiceParams::new(p.cpu_param * 0.5, p.latency_bound * 2.0).unwrap()))
            .collect();
        let relaxed = solve(&i.topology, &i.users, &loose, &i.prev, &i.weights).unwrap();
        if base.is_optimal() {
            mono += 1;
            ensure(relaxed.is_optimal(), || format!("monotonicity seed {seed}: relaxed infeasible"))?;
            let (a, b) = (relaxed.objective.unwrap(), base.objective.unwrap());
            ensure(a <= b + OBJ_TOL, || format!("monotonicity seed {seed}: {a} > {b}"))?;
        }
    }
    for seed in 0..PROPERTY_CASES {
        let i = random_instance(2_000 + seed, 2);
        let base = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).unwrap();
        for k in [0.5, 3.0, 10.0] {
            let s = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights.scaled(k)).unwrap();
            ensure(s.allocation == base.allocation, || format!("scaling seed {seed} k {k}: argmin moved"))?;
            if let (Some(a), Some(b)) = (s.objective, base.objective) {
                ensure((a - k * b).abs() <= OBJ_TOL * (1.0 + a.abs()), || format!("scaling seed {seed}: {a} vs {k}*{b}"))?;
            }
        }
    }
    for seed in 0..PROPERTY_CASES {
        let i = random_instance(3_000 + seed, 2);
        let a = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).unwrap();
        let b = solve(&i.topology, &i.users, &i.params, &i.prev, &i.weights).unwrap();
        ensure(a == b, || format!("solve determinism seed {seed}"))?;
        let strip = |v: Option<Vec<StepResult>>| v.map(|v| v.iter().map(StepResult::without_timing).collect::<Vec<_>>());
        let r1 = strip(random_session_run(3_000 + seed, InfeasibilityMode::Arbitrated));
        let r2 = strip(random_session_run(3_000 + seed, InfeasibilityMode::Arbitrated));
        ensure(r1 == r2, || format!("replay determinism seed {seed}"))?;
    }
    Ok(format!(
        "monotonicity ({mono} feasible bases), weight scaling, determinism: {PROPERTY_CASES} cases each"
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("update-rule", update_rule),
        ("cpu-rule", cpu_rule),
        ("solver-oracle-equivalence", solver_oracle),
        ("single-user-replay", single_user_replay),
        ("arbitration-correctness", arbitration),
        ("feasibility-guarantee", feasibility_guarantee),
        ("metric-protocol", metric_protocol),
        ("llm-parsing-goldens", llm_parsing),
        ("property-suites", property_suites),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
