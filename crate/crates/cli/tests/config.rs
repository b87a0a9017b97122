use std::fs;

use kr1_cli::config::{known_keys, parse_assignment, parse_config};
use kr1_core::objective::ExplorationForm;
use kr1_core::trainer::{Mode, OptimizerKind};
use kr1_core::Error;
use toml::Value;

fn file(contents: &str) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    fs::write(f.path(), contents).unwrap();
    f
}

#[test]
fn empty_file_gives_defaults() {
    let f = file("");
    let cfg = parse_config(Some(f.path()), &[]).unwrap();
    assert_eq!(cfg.hp.temperature, 0.9);
    assert_eq!((cfg.hp.n1, cfg.hp.n2), (8, 8));
    assert_eq!(cfg.hp.clip_eps, 0.2);
    assert_eq!((cfg.hp.alpha, cfg.hp.beta_adv), (2.0, 0.05));
    assert_eq!(cfg.hp.exploration_form, ExplorationForm::RawProb);
    assert_eq!(cfg.run.mode, Mode::Kr1);
    assert_eq!(cfg.run.batch_size, 8);
    assert_eq!(cfg, parse_config(None, &[]).unwrap());
}

#[test]
fn unknown_key_suggests_the_closest() {
    let f = file("alpa = 2.5\n");
    match parse_config(Some(f.path()), &[]) {
        Err(Error::Config(msg)) => {
            assert!(msg.contains("`alpa`"), "{msg}");
            assert!(msg.contains("did you mean `alpha`"), "{msg}");
        }
        other => panic!("expected config error, got {other:?}"),
    }
    let err = parse_config(None, &[("zzzzzzzz".into(), Value::Integer(1))]).unwrap_err();
    assert!(!err.to_string().contains("did you mean"), "{err}");
}

#[test]
fn type_mismatch_names_the_key() {
    let f = file("n1 = \"eight\"\n");
    let err = parse_config(Some(f.path()), &[]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("`n1`"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = parse_config(Some("/nonexistent/kr1.toml".as_ref()), &[]).unwrap_err();
    assert_eq!(err.kind(), "io");
}

#[test]
fn flags_override_file_values() {
    let f = file("lr = 0.05\nmode = \"grpo_rag\"\n");
    let cfg = parse_config(Some(f.path()), &[("lr".into(), Value::Float(0.01))]).unwrap();
    assert_eq!(cfg.hp.lr, 0.01);
    assert_eq!(cfg.run.mode, Mode::GrpoRag);
}

#[test]
fn assignments_parse_literals_and_bare_words() {
    assert_eq!(parse_assignment("dim=32").unwrap(), ("dim".into(), Value::Integer(32)));
    assert_eq!(parse_assignment("lr = 1e-3").unwrap().1, Value::Float(1e-3));
    assert_eq!(parse_assignment("optimizer=adam").unwrap().1, Value::String("adam".into()));
    assert_eq!(parse_assignment("trace=true").unwrap().1, Value::Boolean(true));
    assert!(parse_assignment("no-equals-sign").is_err());
    let cfg = parse_config(None, &[parse_assignment("optimizer=adam").unwrap()]).unwrap();
    assert_eq!(cfg.run.optimizer, OptimizerKind::Adam);
}

#[test]
fn resolved_config_round_trips() {
    let f = file("dim = 24\nbeta_kl = 0.125\nsteps_max = 7\nstd_floor = 1e-9\n");
    let cfg = parse_config(Some(f.path()), &[]).unwrap();
    let echoed = file(&cfg.to_toml());
    assert_eq!(parse_config(Some(echoed.path()), &[]).unwrap(), cfg);
    let table: toml::Table = cfg.to_toml().parse().unwrap();
    let mut keys: Vec<String> = table.keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, known_keys());
}

#[test]
fn invalid_values_are_rejected() {
    let f = file("steps_max = 0\n");
    assert!(matches!(parse_config(Some(f.path()), &[]), Err(Error::Config(_))));
    let f = file("clip_eps = 1.5\n");
    assert!(matches!(parse_config(Some(f.path()), &[]), Err(Error::Config(_))));
}
