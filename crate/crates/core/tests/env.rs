use inferact::env::{scale_score, Environment, GroundTruthProfile, SyntheticEnv};
use inferact::model::Dims;
use inferact::policy::action_alphabet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> Dims {
    Dims {
        prompts: 5,
        searches: 3,
        info_levels: 3,
        quality_levels: 11,
    }
}

fn random_actions(n: usize, seed: u64, d: &Dims) -> Vec<Vec<usize>> {
    let alphabet = action_alphabet(d.prompts, d.searches);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())].clone())
        .collect()
}

#[test]
fn same_seed_same_observations() {
    let d = dims();
    let profile = GroundTruthProfile::synthetic(5, 3, 1, 0.1, 4);
    let actions = random_actions(500, 1, &d);
    let run = || {
        let mut env = SyntheticEnv::new(profile.clone(), d, 99).unwrap();
        let mut out = vec![env.reset().unwrap()];
        out.extend(actions.iter().map(|a| env.step(a).unwrap()));
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn fuzz_observations_in_range_and_info_monotone() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..5 {
        let mut profile = GroundTruthProfile::synthetic(5, 3, 2, rng.random_range(0.0..0.5), trial);
        for q in profile
            .prompt_quality
            .iter_mut()
            .chain(profile.search_quality.iter_mut())
        {
            *q = [0; 3].map(|_| rng.random_range(0.0..=1.0));
        }
        let mut env = SyntheticEnv::new(profile, d, trial).unwrap();
        env.reset().unwrap();
        let mut info = 0;
        for a in random_actions(10_000 / 5, trial, &d) {
            let o = env.step(&a).unwrap();
            for (m, &i) in o.indices.iter().enumerate() {
                let card = if m == 6 { d.info_levels } else { d.quality_levels };
                assert!(i < card);
            }
            assert!(o.indices[6] >= info);
            assert_eq!(o.indices[6], env.state().info_level);
            info = o.indices[6];
        }
    }
}

#[test]
fn noiseless_profile_is_deterministic_given_actions() {
    let d = dims();
    let mut profile = GroundTruthProfile::synthetic(5, 3, 1, 0.0, 0);
    for q in &mut profile.search_quality {
        q[1] = 1.0;
    }
    let actions = random_actions(200, 3, &d);
    let obs = |seed| {
        let mut env = SyntheticEnv::new(profile.clone(), d, seed).unwrap();
        env.reset().unwrap();
        actions.iter().map(|a| env.step(a).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(obs(1), obs(2));
    let mut env = SyntheticEnv::new(profile.clone(), d, 0).unwrap();
    env.reset().unwrap();
    let o = env.step(&[3, 0, 0]).unwrap();
    for m in 0..3 {
        assert_eq!(o.indices[m], scale_score(profile.prompt_quality[2][m], 11).unwrap());
    }
}

#[test]
fn rejects_illegal_actions() {
    let mut env = SyntheticEnv::new(GroundTruthProfile::default_for(&dims(), 0), dims(), 0).unwrap();
    env.reset().unwrap();
    assert!(env.step(&[1, 1, 0]).is_err());
    assert!(env.step(&[6, 0, 0]).is_err());
    assert!(env.step(&[0, 0, 1]).is_err());
    assert!(env.step(&[0, 0]).is_err());
}

#[test]
fn profile_json_roundtrip() {
    let p = GroundTruthProfile::default_for(&Dims::default(), 17);
    let s = serde_json::to_string(&p).unwrap();
    assert!(s.contains("inferact-profile/1"));
    let back: GroundTruthProfile = serde_json::from_str(&s).unwrap();
    assert_eq!(back, p);
    p.validate(&Dims::default()).unwrap();
    assert!(p.validate(&dims()).is_err());
}
