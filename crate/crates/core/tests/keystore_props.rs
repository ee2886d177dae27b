use std::collections::HashSet;
use std::fs;
use std::path::Path;

use agilecrypt::keystore::{CrashPoint, Keystore, KeystoreEntry, KeystoreError, KeystoreParameters, LeafState};
use agilecrypt::primitives::{random_bytes, uniform_below, DeterministicRandom};

fn params(dir: &Path, password: &str) -> KeystoreParameters {
    KeystoreParameters::new(dir.join("store.agks"), password)
        .unwrap()
        .with_iterations(8)
}

#[test]
fn feature_gate_is_active() {
    let dir = tempfile::tempdir().unwrap();
    let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
    ks.inject_crash(CrashPoint::BeforeRename);
    assert!(matches!(
        ks.put_entry(KeystoreEntry::new("a", "CME-TOY-3-1", vec![1], vec![2])),
        Err(KeystoreError::SimulatedCrash(CrashPoint::BeforeRename))
    ));
}

#[test]
fn three_entries_bit_identical_after_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
    let entries = vec![
        KeystoreEntry::new("sig", "SPX-TOY-16-16-4-S", vec![9; 32], vec![8; 16]),
        KeystoreEntry::new("enc", "CME-TOY-10-8", vec![7; 32], vec![6; 10130]),
        KeystoreEntry::new("other", "SPX-TOY-32-4-6-SL", vec![5; 32], vec![4; 32]),
    ];
    for e in &entries {
        ks.put_entry(e.clone()).unwrap();
    }
    drop(ks);
    let ks = Keystore::open(params(dir.path(), "pw")).unwrap();
    assert_eq!(ks.len(), 3);
    for e in &entries {
        assert_eq!(ks.get_entry(&e.alias).unwrap(), e);
    }
}

#[test]
fn hundred_random_entries_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = DeterministicRandom::from_u64(42);
    let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
    let mut expected = Vec::new();
    for i in 0..100 {
        let secret_len = uniform_below(&mut rng, 64).unwrap() as usize;
        let secret = random_bytes(&mut rng, secret_len).unwrap();
        let public_len = uniform_below(&mut rng, 3000).unwrap() as usize;
        let public = random_bytes(&mut rng, public_len).unwrap();
        let id = if i % 3 == 0 { "SPX-TOY-16-16-4-S" } else { "CME-TOY-10-8" };
        let mut e = KeystoreEntry::new(format!("alias-{i}"), id, secret, public);
        if let Some(s) = e.state.as_mut() {
            *s = LeafState {
                next_leaf: i % 5,
                reserved_until: i % 5 + 3,
            };
        }
        expected.push(e.clone());
        ks.put_entry(e).unwrap();
    }
    drop(ks);
    let ks = Keystore::open_read_only(params(dir.path(), "pw")).unwrap();
    assert_eq!(ks.len(), 100);
    for e in &expected {
        assert_eq!(ks.get_entry(&e.alias).unwrap(), e);
    }
}

#[test]
fn hundred_wrong_passwords_fail() {
    let dir = tempfile::tempdir().unwrap();
    let mut ks = Keystore::create(params(dir.path(), "correct horse")).unwrap();
    ks.put_entry(KeystoreEntry::new("k", "CME-TOY-10-8", vec![1; 32], vec![2; 64])).unwrap();
    drop(ks);
    let mut rng = DeterministicRandom::from_u64(7);
    for _ in 0..100 {
        let len = 1 + uniform_below(&mut rng, 24).unwrap() as usize;
        let pw: String = random_bytes(&mut rng, len)
            .unwrap()
            .iter()
            .map(|b| (b' ' + b % 95) as char)
            .collect();
        if pw == "correct horse" {
            continue;
        }
        assert_eq!(Keystore::open(params(dir.path(), &pw)).unwrap_err(), KeystoreError::BadPassword);
    }
    assert_eq!(Keystore::open(params(dir.path(), "correct horse")).unwrap().len(), 1);
}

#[test]
fn stored_body_bit_frequency_is_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
    ks.put_entry(KeystoreEntry::new("zeros", "CME-TOY-10-8", vec![0; 32], vec![0; 20000])).unwrap();
    drop(ks);
    let raw = fs::read(dir.path().join("store.agks")).unwrap();
    let body = &raw[26..];
    let ones: u64 = body.iter().map(|b| b.count_ones() as u64).sum();
    let bits = body.len() as u64 * 8;
    // Monobit test: |ones - bits/2| within 4 standard deviations (sigma = sqrt(bits)/2).
    let dev = (ones as f64 - bits as f64 / 2.0).abs();
    assert!(dev < 4.0 * (bits as f64).sqrt() / 2.0, "ones={ones} bits={bits}");
}

#[test]
fn corrupted_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    drop(Keystore::create(params(dir.path(), "pw")).unwrap());
    let path = dir.path().join("store.agks");
    let raw = fs::read(&path).unwrap();
    for (i, expect_malformed) in [(0usize, true), (5, true), (10, false)] {
        let mut bad = raw.clone();
        bad[i] ^= 0x01;
        fs::write(&path, &bad).unwrap();
        let err = Keystore::open(params(dir.path(), "pw")).unwrap_err();
        if expect_malformed {
            assert!(matches!(err, KeystoreError::MalformedStore(_)), "{err:?}");
        } else {
            assert_eq!(err, KeystoreError::BadPassword);
        }
    }
    fs::write(&path, &raw[..20]).unwrap();
    assert!(matches!(Keystore::open(params(dir.path(), "pw")), Err(KeystoreError::MalformedStore(_))));
}

/// Randomized crash/reopen schedules: every index handed out is unique per alias.
#[test]
fn no_leaf_released_twice_across_crash_schedules() {
    for schedule in 0..100u64 {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = DeterministicRandom::from_u64(1000 + schedule);
        let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
        ks.put_entry(KeystoreEntry::new("k", "SPX-TOY-16-16-6-S", vec![1; 32], vec![2; 16])).unwrap();
        let mut released = HashSet::new();
        for _ in 0..40 {
            let count = 1 + uniform_below(&mut rng, 6).unwrap() as u64;
            let crash = uniform_below(&mut rng, 5).unwrap();
            if let Some(&point) = CrashPoint::ALL.get(crash as usize) {
                ks.inject_crash(point);
            }
            match ks.reserve_leaves("k", count) {
                Ok(range) => {
                    for i in range {
                        assert!(released.insert(i), "schedule {schedule}: leaf {i} released twice");
                    }
                }
                Err(KeystoreError::SimulatedCrash(_)) => {
                    drop(ks);
                    ks = Keystore::open(params(dir.path(), "pw")).unwrap();
                }
                Err(KeystoreError::KeyExhausted { capacity, .. }) => {
                    assert_eq!(capacity, 64);
                    break;
                }
                Err(e) => panic!("{e}"),
            }
            if uniform_below(&mut rng, 4).unwrap() == 0 {
                drop(ks);
                ks = Keystore::open(params(dir.path(), "pw")).unwrap();
            }
        }
        assert!(released.iter().all(|&i| i < 64));
    }
}

#[test]
fn contents_survive_every_crash_point() {
    for point in CrashPoint::ALL {
        let dir = tempfile::tempdir().unwrap();
        let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
        let kept = KeystoreEntry::new("kept", "CME-TOY-10-8", vec![3; 32], vec![4; 100]);
        ks.put_entry(kept.clone()).unwrap();
        ks.inject_crash(point);
        let added = KeystoreEntry::new("added", "CME-TOY-10-8", vec![5; 32], vec![6; 100]);
        assert_eq!(ks.put_entry(added.clone()), Err(KeystoreError::SimulatedCrash(point)));
        drop(ks);
        let ks = Keystore::open(params(dir.path(), "pw")).unwrap();
        assert_eq!(ks.get_entry("kept").unwrap(), &kept);
        match point {
            CrashPoint::AfterRename => assert_eq!(ks.get_entry("added").unwrap(), &added),
            _ => assert!(matches!(ks.get_entry("added"), Err(KeystoreError::UnknownAlias(_)))),
        }
    }
}

#[test]
fn exhaustion_at_exactly_two_pow_h() {
    let dir = tempfile::tempdir().unwrap();
    let mut ks = Keystore::create(params(dir.path(), "pw")).unwrap();
    ks.put_entry(KeystoreEntry::new("k", "SPX-TOY-16-16-4-S", vec![1; 32], vec![2; 16])).unwrap();
    assert_eq!(ks.reserve_leaves("k", 16).unwrap(), 0..16);
    assert!(matches!(ks.reserve_leaves("k", 1), Err(KeystoreError::KeyExhausted { capacity: 16, .. })));
}
