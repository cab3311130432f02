use circuit_sizer::env::{fom_value, rfpa_env, rfpa_fom_mode, Fidelity};
use circuit_sizer::netlist::NODE_FEATURE_WIDTH;
use circuit_sizer::policy::{
    greedy_action, PolicyNet, PolicySizes, SpecObservation, Variant,
};
use circuit_sizer::ppo::{greedy_rollout, train_fom, PpoConfig};
use circuit_sizer::rng::stream_rng;

#[test]
fn probe() {
    let env = rfpa_env(Fidelity::Fine, rfpa_fom_mode(), 30);
    let mut init_rng = stream_rng(0, "policy-init");
    let net = PolicyNet::new(
        Variant::GcnFc,
        SpecObservation::GoalAndIntermediate,
        false,
        PolicySizes::default(),
        NODE_FEATURE_WIDTH,
        env.param_count(),
        env.spec_count(),
        &mut init_rng,
    );
    let cfg = PpoConfig {
        learning_rate: 0.005,
        episodes_per_batch: 4,
        epochs: 16,
        minibatch: 32,
        entropy_coeff: 0.003,
        gamma: 0.01,
        lambda: 0.9,
        value_coeff: 4.0,
        ..PpoConfig::default()
    };
    let mut roll = stream_rng(0, "sampler");
    let mut shuf = stream_rng(0, "shuffle");
    let result = train_fom(&env, net, &cfg, 1000, &mut roll, &mut shuf).unwrap();
    println!("== episodes (total fom_reward per episode) ==");
    for e in &result.episodes {
        println!("ep {:2} batch {} reward {:.3}", e.episode, e.batch, e.reward);
    }
    println!("best seen {:.4} deployed {:.4}", result.best_fom, result.final_fom);

    let weights = [1.0, 3.0];
    let trace = greedy_rollout(&env, &result.net, vec![2.0, 0.5]).unwrap();
    println!("== greedy trajectory (P, E, fom) ==");
    println!(
        "init  P {:.3} E {:.3} fom {:.3}",
        trace.initial_achieved[0],
        trace.initial_achieved[1],
        fom_value(&trace.initial_achieved, &weights)
    );
    for (i, s) in trace.steps.iter().enumerate() {
        if i % 5 == 0 || i == trace.steps.len() - 1 {
            println!(
                "step {:2} P {:.3} E {:.3} fom {:.3}",
                i + 1,
                s.achieved[0],
                s.achieved[1],
                fom_value(&s.achieved, &weights)
            );
        }
    }
    println!("== init-state head argmax (0=down,1=keep,2=up) ==");
    let state = env.reset(vec![2.0, 0.5]).unwrap();
    let out = result.net.act(env.adjacency(), &env.features(&state), &env.spec_input(&state));
    let choices = greedy_action(&out);
    let space = env.param_space();
    for (i, c) in choices.iter().enumerate() {
        let p0 = out.action_probs.get(i, 0);
        let p1 = out.action_probs.get(i, 1);
        let p2 = out.action_probs.get(i, 2);
        println!("{:14} -> {} (p {:.2}/{:.2}/{:.2})", space.label(i), c, p0, p1, p2);
    }
    println!("== final params ==");
    for (i, v) in trace.final_params.iter().enumerate() {
        println!("{:14} = {}", space.label(i), v);
    }
}
