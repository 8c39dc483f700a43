use refuel_core::harness::{gen_random_mdp, random_tabular_policy, RandomMdpSpec};
use refuel_core::io::{read_json, write_json};
use refuel_core::optimizers::{refuel_iterate, Comparator, EtaSchedule, RunSpec, UpdateRule};
use refuel_core::policy::{Policy, PolicyFile};
use refuel_core::rollout::{collect_dataset, Dataset, OfflineBuffer, Scheme};
use refuel_core::theory::theorem1_gap;
use refuel_core::turn_mdp::{expected_return, validate, MdpFile};
use refuel_core::{MdpF32, MdpF64};

fn spec(seed: u64) -> RandomMdpSpec {
    RandomMdpSpec {
        horizon: 3,
        states_per_turn: 3,
        actions: 3,
        branching: 2,
        reward_range: [-1.0, 2.0],
        seed,
    }
}

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let file = gen_random_mdp(&spec(1)).unwrap();
    write_json(&dir.path().join("m.json"), &file).unwrap();
    let back: MdpFile = read_json(&dir.path().join("m.json")).unwrap();
    assert_eq!(back, file);
    let mdp: MdpF64 = validate(&back).unwrap();
    assert_eq!(mdp.to_file(), file);

    let pi = random_tabular_policy(mdp.num_states(), 3, 2.0, 1);
    write_json(&dir.path().join("p.json"), &pi.to_file()).unwrap();
    let pf: PolicyFile = read_json(&dir.path().join("p.json")).unwrap();
    assert_eq!(Policy::<f64>::from_file(&pf).unwrap().params(), pi.params());

    let ds = collect_dataset(&mdp, &pi, 100, Scheme::Refuel, None, 3).unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    let read = Dataset::<f64>::read_jsonl(&buf[..]).unwrap();
    assert_eq!(read.samples, ds.samples);
}

#[test]
fn single_precision_tracks_double() {
    let file = gen_random_mdp(&spec(2)).unwrap();
    let (m64, m32): (MdpF64, MdpF32) = (validate(&file).unwrap(), validate(&file).unwrap());
    let p64 = random_tabular_policy(m64.num_states(), 3, 1.0, 2);
    let p32 = Policy::<f32>::from_file(&p64.to_file()).unwrap();
    let (j64, j32) = (expected_return(&m64, &p64).unwrap(), expected_return(&m32, &p32).unwrap());
    assert!((j64 - f64::from(j32)).abs() < 1e-5);
}

#[test]
fn every_scheme_trains_and_reports() {
    let mdp: MdpF64 = validate(&gen_random_mdp(&spec(3)).unwrap()).unwrap();
    let initial = Policy::uniform_tabular(mdp.num_states(), 3);
    let buffer = OfflineBuffer::build(&mdp, &initial, 600, 4).unwrap();
    for scheme in Scheme::ALL {
        let run_spec = RunSpec {
            iterations: 10,
            eta: EtaSchedule::Constant(0.5),
            rule: UpdateRule::Regression { scheme, samples: 300 },
            offline: scheme.needs_buffer().then_some(&buffer),
            cutoff: 1e-10,
            gamma: 0.05,
            comparator: Comparator::GreedyBestIterate,
            seed: 8,
        };
        let run = refuel_iterate(&mdp, &initial, &run_spec).unwrap();
        assert_eq!(run.metrics.len(), 11);
        assert!(run.final_metrics().return_j > run.metrics[0].return_j, "{scheme}");
        let rep = theorem1_gap(&mdp, &run, &run.comparator).unwrap();
        assert!(rep.min_gap >= -1e-12 && rep.epsilon_hat.unwrap() > 0.0);
        assert!(rep.coverage.c_action.value().is_finite());
    }
}
