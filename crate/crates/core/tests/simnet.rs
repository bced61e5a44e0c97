use pole_core::simnet::{run_simulation, ClockMode, SimConfig, SimError};
use pole_core::tasks::TaskTemplate;

#[test]
fn wall_clock_mode_still_converges() {
    let cfg = SimConfig {
        blocks: 3,
        clock: ClockMode::WallClock,
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.chain.height(), 3);
    assert!(out.heads.iter().all(|h| *h == out.chain.head_hash()));
}

#[test]
fn config_file_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.toml");
    std::fs::write(
        &path,
        "seed = 3\nblocks = 2\nminers = 2\nclock = \"deterministic\"\n[[tasks]]\ndataset = \"iris\"\nhidden = [8]\n",
    )
    .unwrap();
    let cfg = SimConfig::load(&path).unwrap();
    assert_eq!(cfg.tasks[0].hidden, vec![8]);
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.stats.len(), 2);
    assert_eq!(out.node_names[cfg.data_nodes], "miner-0");

    for bad in [
        SimConfig {
            release_delay: 0.0,
            ..cfg.clone()
        },
        SimConfig {
            data_nodes: 1,
            ..cfg.clone()
        },
        SimConfig {
            cheaters: vec![5],
            ..cfg.clone()
        },
        SimConfig {
            lambda: 8,
            ..cfg.clone()
        },
    ] {
        assert!(matches!(run_simulation(&bad), Err(SimError::Config(_))));
    }
}

#[test]
fn unreachable_threshold_stalls_instead_of_hanging() {
    let mut t = TaskTemplate::iris();
    t.required_accuracy = 1.0;
    t.time_limit = 0.0;
    t.hidden = vec![1];
    let cfg = SimConfig {
        blocks: 2,
        tasks: vec![t],
        ..SimConfig::default()
    };
    // Untrained models miss the threshold, every node rejects every
    // candidate, and the height gives up after `max_attempts` reposts.
    assert!(matches!(
        run_simulation(&cfg),
        Err(SimError::HeightStalled { height: 1 })
    ));
}
