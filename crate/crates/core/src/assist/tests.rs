use std::sync::{Arc, Mutex};

use super::*;
use crate::scenario::{two_step_congestion, TwoStepCase};

fn case() -> TwoStepCase {
    two_step_congestion()
}

fn manager(c: &TwoStepCase) -> SessionManager {
    c.manager(c.assist_config())
}

fn create(m: &SessionManager, start_step: usize) -> String {
    let name = m.scenario_names()[0].clone();
    let s = m.create(&CreateSession { scenario: name, seed: 3, start_step }, None).unwrap();
    let id = s.lock().unwrap().id().to_string();
    id
}

/// First unsafe step of the scripted case.
fn unsafe_step(c: &TwoStepCase) -> usize {
    c.root(crate::SAFE_THRESHOLD).t()
}

#[test]
fn safe_state_gets_empty_list_with_note() {
    let c = case();
    let m = manager(&c);
    let id = create(&m, 0);
    let list = m.with(&id, |s| s.recommendations(None)).unwrap();
    assert!(list.safe);
    assert!(list.recommendations.is_empty());
    assert!(list.note.unwrap().contains("safe"));
    assert_eq!(list.version, PAYLOAD_VERSION);
}

#[test]
fn scripted_congestion_ranks_the_two_step_plan_first() {
    let c = case();
    let pair = c.oracle(crate::SAFE_THRESHOLD).pairs[0];
    let m = manager(&c);
    let id = create(&m, unsafe_step(&c));
    let list = m.with(&id, |s| s.recommendations(Some(5))).unwrap();
    assert!(!list.safe);
    let recs = &list.recommendations;
    assert!(!recs.is_empty() && recs.len() <= 5);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.rank, i + 1);
        assert_eq!(r.id, format!("t{}-r{}", list.t, i + 1));
        assert_eq!(r.step, list.t);
        assert!(!r.description.is_empty());
    }
    let top = &recs[0];
    assert_eq!(top.origin, Origin::Search);
    assert_eq!(top.topology_id, Some(c.reduced[pair.0]));
    let second = describe_action(&c.spec, c.catalog.action(c.reduced[pair.1]));
    assert_eq!(top.outcome.plan.first(), Some(&second));
    assert_eq!(top.outcome.reached_step, Some(c.chronics.horizon()));
}

#[test]
fn simulate_leaves_the_episode_untouched() {
    let c = case();
    let m = manager(&c);
    let id = create(&m, unsafe_step(&c));
    let list = m.with(&id, |s| s.recommendations(Some(3))).unwrap();
    let before = m.with(&id, |s| Ok(s.episode().observation())).unwrap();
    let rec = &list.recommendations[0];
    let sim = m.with(&id, |s| s.simulate(&rec.id)).unwrap();
    let after = m.with(&id, |s| Ok(s.episode().observation())).unwrap();
    assert_eq!(before, after);
    assert_eq!(sim.t, before.t);
    assert_eq!(sim.action, rec.action);
    assert!((sim.result.observation.rho_max() - rec.outcome.rho_max_after).abs() < 1e-12);
    // the same candidate can still be confirmed
    m.with(&id, |s| s.confirm(&rec.id)).unwrap();
}

#[test]
fn confirm_advances_and_invalidates_old_ids() {
    let c = case();
    let m = manager(&c);
    let id = create(&m, unsafe_step(&c));
    let list = m.with(&id, |s| s.recommendations(Some(2))).unwrap();
    let t = list.t;
    let done = m.with(&id, |s| s.confirm(&list.recommendations[0].id)).unwrap();
    assert_eq!(done.t, t + 1);
    let stale = m.with(&id, |s| s.confirm(&list.recommendations[1].id)).unwrap_err();
    assert_eq!(stale, AssistError::Stale { id: list.recommendations[1].id.clone(), issued: t, current: t + 1 });
    assert_eq!(stale.category(), "stale");
    let unknown = m.with(&id, |s| s.simulate("bogus")).unwrap_err();
    assert_eq!(unknown.category(), "unknown_recommendation");
    assert_eq!(m.with("s999", |s| s.simulate(NOOP_ID)).unwrap_err().category(), "unknown_session");
}

#[test]
fn following_the_top_recommendation_survives() {
    let c = case();
    let m = manager(&c);
    let id = create(&m, 0);
    let horizon = c.chronics.horizon();
    let mut confirmed = Vec::new();
    loop {
        let state = m.with(&id, |s| Ok(s.state())).unwrap();
        if state.done {
            assert_eq!(state.done_reason, Some(DoneReason::HorizonReached));
            assert_eq!(state.t, horizon);
            break;
        }
        let list = m.with(&id, |s| s.recommendations(None)).unwrap();
        let pick = list.recommendations.first().map_or(NOOP_ID.to_string(), |r| r.id.clone());
        if pick != NOOP_ID {
            confirmed.push(pick.clone());
        }
        m.with(&id, |s| s.confirm(&pick)).unwrap();
    }
    assert_eq!(confirmed.len(), 2, "{confirmed:?}");
    let err = m.with(&id, |s| s.confirm(NOOP_ID)).unwrap_err();
    assert_eq!(err.category(), "terminal");
    assert_eq!(m.with(&id, |s| s.recommendations(None)).unwrap_err().category(), "terminal");
}

#[test]
fn replay_rebuilds_the_episode_from_the_log() {
    let c = case();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = c.assist_config();
    cfg.log_dir = Some(dir.path().to_path_buf());
    let m = c.manager(cfg);
    let id = create(&m, unsafe_step(&c));
    for _ in 0..3 {
        let list = m.with(&id, |s| s.recommendations(None)).unwrap();
        let pick = list.recommendations.first().map_or(NOOP_ID.to_string(), |r| r.id.clone());
        m.with(&id, |s| s.confirm(&pick)).unwrap();
    }
    let (events, live) = m.with(&id, |s| Ok((s.events().to_vec(), s.episode().observation()))).unwrap();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64);
        assert_eq!(e.session, id);
    }
    let text = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let read = Session::read_log(&text).unwrap();
    assert_eq!(read, events);
    let ep = Session::replay(c.spec.clone(), c.chronics.clone(), c.env.clone(), &read).unwrap();
    assert_eq!(ep.observation(), live);

    let mut broken = read.clone();
    broken.remove(1);
    assert_eq!(Session::replay(c.spec.clone(), c.chronics.clone(), c.env.clone(), &broken).unwrap_err().category(), "event_log");
}

#[test]
fn listener_sees_every_event_in_order() {
    let c = case();
    let m = manager(&c);
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let name = m.scenario_names()[0].clone();
    let h = m.create(&CreateSession { scenario: name, seed: 0, start_step: 1 }, Some(Arc::new(move |e: &Event| sink.lock().unwrap().push(e.clone())))).unwrap();
    let id = h.lock().unwrap().id().to_string();
    m.with(&id, |s| s.confirm(NOOP_ID)).unwrap();
    let events = m.with(&id, |s| Ok(s.events().to_vec())).unwrap();
    assert_eq!(*seen.lock().unwrap(), events);
    assert!(matches!(events[0].kind, EventKind::Created { start_step: 1, .. }));
    assert!(matches!(events[1].kind, EventKind::Confirmed { .. }));
    assert!(matches!(events[2].kind, EventKind::Stepped { .. }));
}

#[test]
fn bad_requests_are_rejected() {
    let c = case();
    let m = manager(&c);
    let err = m.create(&CreateSession { scenario: "nope".into(), seed: 0, start_step: 0 }, None).err().unwrap();
    assert_eq!(err.category(), "bad_request");
    let name = m.scenario_names()[0].clone();
    let err = m.create(&CreateSession { scenario: name, seed: 0, start_step: 10_000 }, None).err().unwrap();
    assert_eq!(err.category(), "bad_request");
    let id = create(&m, 0);
    assert_eq!(m.with(&id, |s| s.recommendations(Some(0))).unwrap_err().category(), "bad_request");
}

#[test]
fn sessions_are_independent() {
    let c = case();
    let m = Arc::new(manager(&c));
    let ids: Vec<String> = (0..4).map(|_| create(&m, 0)).collect();
    std::thread::scope(|scope| {
        for (k, id) in ids.iter().enumerate() {
            let m = m.clone();
            scope.spawn(move || {
                for _ in 0..=k {
                    m.with(id, |s| s.confirm(NOOP_ID)).unwrap();
                }
            });
        }
    });
    for (k, id) in ids.iter().enumerate() {
        assert_eq!(m.with(id, |s| Ok(s.episode().t())).unwrap(), k + 1);
    }
}

#[test]
fn describes_dispatch_actions() {
    let c = case();
    let mut d = crate::env::DispatchVector::zeros(&c.spec);
    assert_eq!(describe_env_action(&c.spec, &EnvAction::dispatch(d.clone())), "keep dispatch");
    d.redispatch[0] = 5.0;
    assert_eq!(describe_env_action(&c.spec, &EnvAction::dispatch(d)), "redispatch gen 1 +5.0 MW");
    assert_eq!(describe_env_action(&c.spec, &EnvAction::NoOp), "do nothing");
}
