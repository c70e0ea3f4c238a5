use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gloss::gen::{self, Shape};
use gloss::geo::{GeoPoint, RegionId};
use gloss::hearsay::{insert, HearsayRecord, ProfilePredicate};
use gloss::ids::{NodeId, UserId};
use gloss::oracle;
use gloss::overlay::{deliver, DeliveryStatus, MessageEnvelope, Network, DEFAULT_HOP_LIMIT};
use gloss::pipeline::nmea::format_gga;
use gloss::pipeline::{threshold_filter, EventBody, FilterDecision};
use gloss::profile_cache::{fetch, ttl_for, CachePolicy, Profile};
use gloss::sim::{self, ReportFormat, RunOptions, Scenario};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probe(start: &NodeId, target: &RegionId) -> MessageEnvelope {
    MessageEnvelope::new(
        0,
        start.clone(),
        target.clone(),
        EventBody::Generic {
            name: "probe".into(),
            attrs: Default::default(),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolve_agrees_with_scan(seed in any::<u64>()) {
        let mut r = rng(seed);
        let world = gen::world(&mut r, Shape::default());
        let regions: Vec<_> = world.regions().map(|x| x.bounds).collect();
        for _ in 0..50 {
            let b = regions.choose(&mut r).unwrap();
            let p = gen::point_in(&mut r, b);
            prop_assert_eq!(world.resolve_deepest(p).ok(), oracle::scan_deepest(&world, p));
        }
    }

    #[test]
    fn region_path_descends_from_root(seed in any::<u64>()) {
        let mut r = rng(seed);
        let world = gen::world(&mut r, Shape::default());
        for p in gen::trace(&mut r, &world, 40) {
            let path = world.region_path(p).unwrap();
            prop_assert_eq!(&path[0], world.root());
            prop_assert_eq!(path.last().unwrap(), &world.resolve_deepest(p).unwrap());
            for (d, id) in path.iter().enumerate() {
                let region = world.region(id).unwrap();
                prop_assert_eq!(region.depth, d);
                prop_assert!(region.bounds.contains_point(p));
                if d > 0 {
                    prop_assert_eq!(region.parent.as_ref(), Some(&path[d - 1]));
                }
            }
        }
    }

    #[test]
    fn transitions_never_rise_toward_root(seed in any::<u64>()) {
        let mut r = rng(seed);
        let world = gen::world(&mut r, Shape::default());
        let trace = gen::trace(&mut r, &world, 200);
        let row = world.transition_profile(&trace).unwrap();
        prop_assert_eq!(row[0], 0);
        for d in 0..row.len() - 1 {
            prop_assert!(row[d] <= row[d + 1]);
            prop_assert_eq!(row[d], world.transition_count(&trace, d).unwrap());
        }
    }

    #[test]
    fn routing_reaches_owner_of_any_region(seed in any::<u64>(), own in 0.2f64..1.0, known in 0usize..20) {
        let mut r = rng(seed);
        let world = gen::world(&mut r, Shape::default());
        let mut records = gen::topology(&mut r, &world, own);
        gen::add_known(&mut r, &mut records, known);
        let net = Network::new(world, records, DEFAULT_HOP_LIMIT).unwrap();
        let nodes: Vec<NodeId> = net.nodes().map(|n| n.id.clone()).collect();
        let regions: Vec<RegionId> = net.world().regions().map(|x| x.id.clone()).collect();
        for _ in 0..10 {
            let start = nodes.choose(&mut r).unwrap();
            let target = regions.choose(&mut r).unwrap();
            let trace = deliver(&net, start, &mut probe(start, target)).unwrap();
            let expect = oracle::owning_node(&net, target).unwrap();
            prop_assert_eq!(&trace.status, &DeliveryStatus::Delivered(expect));
            let seen: BTreeSet<&NodeId> = trace.steps.iter().map(|s| &s.node).collect();
            prop_assert_eq!(seen.len(), trace.steps.len());
            // every hop follows a real link
            let path = trace.path();
            for w in path.windows(2) {
                let a = net.node(&w[0]).unwrap();
                let linked = a.parent.as_ref() == Some(&w[1])
                    || a.children.values().any(|c| c == &w[1])
                    || a.known.values().any(|k| k == &w[1])
                    || a.peers.contains(&w[1]);
                prop_assert!(linked, "{} -> {} is not a link", w[0], w[1]);
            }
        }
    }

    #[test]
    fn placement_matches_scan(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = gen::network(&mut r, Shape::default(), 0.4);
        let regions: Vec<RegionId> = net.world().regions().map(|x| x.id.clone()).collect();
        let nodes: Vec<NodeId> = net.nodes().map(|n| n.id.clone()).collect();
        for i in 0..5 {
            let target = regions.choose(&mut r).unwrap().clone();
            let origin = nodes.choose(&mut r).unwrap().clone();
            let rec = HearsayRecord {
                id: format!("h{i}").as_str().into(),
                region: target.clone(),
                predicate: ProfilePredicate::default(),
                info: "x".into(),
                depositor: "d".into(),
                inserted_at: 0,
            };
            let placed = insert(&mut net, &origin, rec).unwrap();
            prop_assert_eq!(Some(placed), oracle::owning_node(&net, &target));
        }
    }

    #[test]
    fn filter_emits_exactly_the_far_points(
        steps in prop::collection::vec((-3e-4f64..3e-4, -3e-4f64..3e-4), 1..80),
        threshold in 1.0f64..40.0,
    ) {
        let mut p = GeoPoint::new(45.0, 7.0).unwrap();
        let mut state = None;
        let mut last_emitted: Option<GeoPoint> = None;
        for (dl, dn) in steps {
            p.lat += dl;
            p.lon += dn;
            let should = last_emitted.is_none_or(|q| oracle::distance_m(q, p) > threshold);
            let got = threshold_filter(&mut state, p, threshold);
            prop_assert_eq!(got == FilterDecision::Emit, should);
            if should {
                last_emitted = Some(p);
            }
        }
    }

    #[test]
    fn fetch_is_transparent(seed in any::<u64>(), times in prop::collection::vec(0u64..400, 1..30)) {
        let mut r = rng(seed);
        let mut net = gen::network(&mut r, Shape { max_depth: 4, max_fanout: 3 }, 0.8);
        let nodes: Vec<NodeId> = net.nodes().map(|n| n.id.clone()).collect();
        let home = nodes.choose(&mut r).unwrap().clone();
        let profile = Profile::new("bob", &["cafe"], &["sms"], home.as_str());
        net.register_profile(profile.clone()).unwrap();
        let policy = CachePolicy::default();
        let mut times = times;
        times.sort();
        for now in times {
            let from = nodes.choose(&mut r).unwrap();
            let out = fetch(&mut net, from, &UserId::new("bob"), now).unwrap();
            prop_assert_eq!(&out.profile, &profile);
            for n in &out.installed {
                let e = net.node(n).unwrap().cache.fresh(&"bob".into(), now).unwrap();
                prop_assert_eq!(e.ttl, ttl_for(&policy, net.node_depth(n)));
                prop_assert_eq!(e.fetched_at, now);
            }
            prop_assert_eq!(out.installed.len(), out.request.as_ref().map_or(0, |t| t.hops().unwrap() as usize));
        }
    }

    #[test]
    fn wire_format_round_trips(lat in -89.0f64..89.0, lon in -179.0f64..179.0, t in 0u64..1_000_000, user in "[a-z]{1,8}") {
        let bodies = [
            EventBody::Location { user: user.as_str().into(), point: GeoPoint::new(lat, lon).unwrap(), t },
            EventBody::EnterWhere { user: user.as_str().into(), region: "rue-x".into(), t },
            EventBody::ProfileRequest { user: user.as_str().into() },
            EventBody::RawDeviceString { line: format_gga(GeoPoint::new(lat, lon).unwrap(), "010203") },
        ];
        for b in bodies {
            let back = EventBody::from_xml(&b.to_xml()).unwrap();
            match (&b, &back) {
                (EventBody::Location { point: p, .. }, EventBody::Location { point: q, .. }) => {
                    prop_assert!((p.lat - q.lat).abs() <= 5e-7 && (p.lon - q.lon).abs() <= 5e-7);
                    prop_assert_eq!(back.to_xml(), b.to_xml());
                }
                _ => prop_assert_eq!(back, b),
            }
        }
    }
}

const ANNA_BOB: &str = include_str!("../scenarios/anna-bob.gloss");

/// The anna-bob world with a random schedule: several hearsays, users
/// wandering in and out of the street, channels failing and recovering.
fn random_scenario(seed: u64) -> String {
    let mut r = rng(seed);
    let head = ANNA_BOB.split("[schedule]").next().unwrap();
    let mut lines = vec!["[schedule]".to_string()];
    let spots = [(48.855, 2.345), (48.87, 2.30), (50.85, 4.35), (45.0, 3.0), (48.8555, 2.3402)];
    let tags = ["cafe", "jazz", "opera", "-", "cafe,jazz"];
    for t in 1..=40u64 {
        match r.random_range(0..10) {
            0 => lines.push(format!(
                "{t} hearsay h{t} anna@n-world {} {} note {t}",
                ["rue-x", "paris", "france", "world", "brussels"].choose(&mut r).unwrap(),
                tags.choose(&mut r).unwrap()
            )),
            1 => lines.push(format!(
                "{t} channel {} {} {}",
                ["bob", "carol"].choose(&mut r).unwrap(),
                ["sms", "gprs"].choose(&mut r).unwrap(),
                ["up", "down", "flaky 0.5"].choose(&mut r).unwrap()
            )),
            _ => {
                let (lat, lon) = *spots.choose(&mut r).unwrap();
                let p = GeoPoint::new(lat + r.random_range(-2e-3..2e-3), lon + r.random_range(-2e-3..2e-3)).unwrap();
                let user = ["bob", "carol"].choose(&mut r).unwrap();
                lines.push(format!("{t} gps {user} {}", format_gga(p, "120000")));
            }
        }
    }
    format!("{head}{}\n", lines.join("\n")).replace("horizon 8", "horizon 40")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scenario_runs_are_deterministic_once_only_and_conserving(seed in any::<u64>(), run_seed in any::<u64>()) {
        let s = Scenario::parse(&random_scenario(seed)).unwrap();
        let opts = RunOptions { seed: Some(run_seed), no_cache: false };
        let a = sim::run(&s, &opts).unwrap();
        let b = sim::run(&s, &opts).unwrap();
        prop_assert_eq!(a.report.emit(ReportFormat::Machine), b.report.emit(ReportFormat::Machine));
        prop_assert_eq!(&a.trace, &b.trace);

        let mut pairs = BTreeMap::new();
        for d in &a.report.deliveries {
            *pairs.entry((d.hearsay.clone(), d.user.clone())).or_insert(0) += 1;
        }
        prop_assert!(pairs.values().all(|&n| n == 1), "{:?}", pairs);

        let e = a.report.envelopes;
        prop_assert_eq!(e.created as usize, a.network.traffic.envelopes.len());
        prop_assert_eq!(e.delivered + e.undeliverable + e.in_flight, e.created);
        prop_assert_eq!(a.report.total_arrivals() as usize, a.network.traffic.hops.len());
        prop_assert_eq!(a.report.by_depth.iter().sum::<u64>(), a.report.total_arrivals());
        for row in a.report.transitions.values() {
            prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
