use bsac::training::StepOutcome;
use bsac::{parse_bsn, Activation, AgentConfig, Checkpoint, EnvConfig, EnvParams, Trainer};

fn env() -> EnvConfig {
    EnvConfig { name: "chain-reacher".into(), params: EnvParams::from([("k".into(), "3".into()), ("max_steps".into(), "40".into())]), seed: 0 }
}

fn config(auto_alpha: bool) -> AgentConfig {
    AgentConfig { hidden: vec![16, 16], batch_size: 16, warmup_steps: 50, auto_alpha, activation: Activation::Relu, ..AgentConfig::default() }
}

fn run(t: &mut Trainer, n: u64) -> Vec<StepOutcome> {
    (0..n).map(|_| t.step().unwrap()).collect()
}

fn check_resume(graph: Option<&str>, auto_alpha: bool) {
    let graph = graph.map(|g| parse_bsn(g).unwrap());
    let mut straight = Trainer::new(env(), graph.clone(), config(auto_alpha), 7).unwrap();
    let full = run(&mut straight, 200);

    let mut first = Trainer::new(env(), graph, config(auto_alpha), 7).unwrap();
    let mut pieces = run(&mut first, 120);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::resumable(&first).save(&path).unwrap();
    drop(first);
    let mut second = Checkpoint::load(&path).unwrap().into_trainer().unwrap();
    assert_eq!(second.steps(), 120);
    pieces.extend(run(&mut second, 80));

    assert_eq!(pieces, full);
    assert_eq!(second.learner, straight.learner);
    assert_eq!(second.session(), straight.session());
    assert_eq!(second.evaluate(3).unwrap(), straight.evaluate(3).unwrap());
}

#[test]
fn bsac_resume_is_bit_compatible() {
    check_resume(Some("node a dims 0\nnode b dims 1 parents a\nnode c dims 2 parents a"), false);
}

#[test]
fn flat_sac_resume_with_temperature_tuning_is_bit_compatible() {
    check_resume(None, true);
}

#[test]
fn learner_only_checkpoint_evaluates_identically() {
    let mut t = Trainer::new(env(), None, config(false), 3).unwrap();
    run(&mut t, 80);
    let ckpt = Checkpoint::of(&t);
    let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
    assert_eq!(back, ckpt);
    let mut again = Trainer::with_learner(back.env, back.learner, 3).unwrap();
    assert_eq!(again.evaluate(4).unwrap(), t.evaluate(4).unwrap());
}
