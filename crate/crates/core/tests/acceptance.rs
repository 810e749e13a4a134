//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ssla::agents::{run_scenario, RunOptions, ScenarioScript};
use ssla::audit::{audit_document, compare_evidence};
use ssla::decision::{decide_one, Satisfaction};
use ssla::expression::{Dimension, ExpressionRole, ExpressionSet, SecurityExpression};
use ssla::pow::{self, stamp_hash_count, PowPolicy, PowRejection, StampExtension, StampReplaySet};
use ssla::protocol::{Message, Phase};
use ssla::translation::Translator;
use ssla::wire::WireDocument;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn seed_translations() -> Outcome {
    let kb = kb();
    let cases = [
        ("Target.1.1.1", Dimension::Risk, &["Risk.2.3.4", "Risk.3.2.3"][..]),
        ("Risk.1.1.1", Dimension::Function, &["Function.12.1.3", "Function.17", "Function.23.3"][..]),
        ("Risk.1.1.2", Dimension::Function, &["Function.15", "Function.19.12.2"][..]),
    ];
    for (input, goal, expected) in cases {
        let expr: SecurityExpression = input.parse().unwrap();
        let got: Vec<String> = kb
            .translate(&expr, goal)
            .map_err(|e| format!("{input}: {e}"))?
            .output
            .iter()
            .map(ToString::to_string)
            .collect();
        let got_set: BTreeSet<&str> = got.iter().map(String::as_str).collect();
        let want: BTreeSet<&str> = expected.iter().copied().collect();
        ensure(got_set == want && got.len() == want.len(), || format!("{input} -> {got:?}, expected {expected:?}"))?;
    }
    Ok("3 of 3 translations exact".into())
}

fn decision_oracle() -> Outcome {
    let kb = kb();
    let raw = RawKb::load(&fixtures().join("kb"));
    let techniques = raw.dictionary["Technique"].clone();
    ensure(techniques.len() <= 6, || format!("{} techniques", techniques.len()))?;
    let mut requirements: Vec<String> = raw.dictionary.values().flatten().cloned().collect();
    requirements.extend(
        ["Risk.1.1.1:Function.17", "Target.1.1.2:Risk.2.3.2", "Function.17:Technique.7.2", "Function.12.1.3:Technique.9.1"]
            .map(String::from),
    );

    let (mut pairs, mut mismatches, mut inverted) = (0usize, Vec::new(), 0usize);
    for mask in 0u32..(1 << techniques.len()) {
        let chosen: BTreeSet<String> = techniques
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| t.clone())
            .collect();
        let caps = ExpressionSet::parse(ExpressionRole::Capability, &chosen.iter().collect::<Vec<_>>()).unwrap();
        for req in &requirements {
            pairs += 1;
            let expr: SecurityExpression = req.parse().unwrap();
            let got = decide_one(kb.as_ref(), &expr, &caps).map_err(|e| format!("{req}: {e}"))? == Satisfaction::Satisfied;
            let want = raw.oracle(req, &chosen);
            if got != want {
                mismatches.push(format!("{req} with {chosen:?}: got {got}, oracle {want}"));
            }
            if raw.pseudocode(req, &chosen) != want {
                inverted += 1;
            }
        }
    }
    ensure(mismatches.is_empty(), || format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))?;

    // All translated entries covered must be accepted; the inverted branch
    // would reject exactly this case.
    let full: BTreeSet<String> = ["Technique.3.1", "Technique.7.2"].map(String::from).into();
    let req: SecurityExpression = "Risk.1.1.1".parse().unwrap();
    let caps_of = |items: &BTreeSet<String>| {
        ExpressionSet::parse(ExpressionRole::Capability, &items.iter().collect::<Vec<_>>()).unwrap()
    };
    let decide = |items: &BTreeSet<String>| decide_one(kb.as_ref(), &req, &caps_of(items)).unwrap();
    ensure(decide(&full) == Satisfaction::Satisfied, || "full cover not satisfied".into())?;
    ensure(!raw.pseudocode("Risk.1.1.1", &full), || "pseudocode reading accepts the full cover".into())?;
    for dropped in &full {
        let mut less = full.clone();
        less.remove(dropped);
        ensure(decide(&less) == Satisfaction::Unsatisfied, || format!("still satisfied without {dropped}"))?;
    }
    ensure(inverted > 0, || "inverted reading never differs".into())?;
    Ok(format!(
        "{pairs} pairs ({} capability subsets x {} requirements), 0 mismatches; inverted branch disagrees on {inverted}",
        1 << techniques.len(),
        requirements.len()
    ))
}

fn hashcash() -> Outcome {
    let policy = PowPolicy::with_bits(12);
    let mut rng = rand::thread_rng();
    let mut times = Vec::with_capacity(100);
    let mut seen = StampReplaySet::new();
    let mut max_verify_hashes = 0;
    for trial in 0..100u8 {
        let ext = StampExtension {
            initiator: vec![trial],
            responder: vec![trial, 1],
            nonce: vec![trial; 16],
        };
        let resource = format!("{trial:064x}");
        let start = Instant::now();
        let minted = pow::mint(&resource, &ext, &policy, NOW, &mut rng);
        times.push(start.elapsed());
        let before = stamp_hash_count();
        pow::verify(&minted.stamp, &resource, &policy, NOW, &mut seen).map_err(|e| format!("trial {trial}: {e}"))?;
        max_verify_hashes = max_verify_hashes.max(stamp_hash_count() - before);
        match pow::verify(&minted.stamp, &resource, &policy, NOW, &mut seen) {
            Err(PowRejection::Replayed) => {}
            other => return Err(format!("replay of trial {trial} gave {other:?}")),
        }
    }
    times.sort();
    let median = (times[49] + times[50]) / 2;
    ensure(median < Duration::from_millis(100), || format!("median mint {median:?}"))?;
    ensure(max_verify_hashes <= 1, || format!("verification used {max_verify_hashes} hashes"))?;
    Ok(format!(
        "100/100 verify, median mint {:.2} ms, verify <= {max_verify_hashes} hash, replays rejected",
        median.as_secs_f64() * 1e3
    ))
}

fn end_to_end() -> Outcome {
    let script = ScenarioScript::read(&fixtures().join("scenario/hotspot.json")).map_err(|e| e.to_string())?;
    let options = RunOptions {
        deterministic_seed: Some(42),
    };
    let report = run_scenario(&script, options).map_err(|e| e.to_string())?;
    let failed: Vec<_> = report.steps.iter().filter(|s| !s.passed).map(|s| s.detail.clone()).collect();
    ensure(report.passed, || format!("scenario failed: {failed:?}"))?;
    let run = report.run.as_ref().unwrap();
    let shape: Vec<(String, Option<u32>)> = run
        .messages
        .iter()
        .map(|d| match ssla::protocol::parse_message(d).unwrap() {
            Message::Proposal(p) => (d.kind.clone(), Some(p.body.round)),
            _ => (d.kind.clone(), None),
        })
        .collect();
    ensure(
        shape
            == [
                ("ssla-proposal".into(), Some(1)),
                ("ssla-proposal".into(), Some(2)),
                ("ssla-confirmation".into(), None),
            ],
        || format!("message shape {shape:?}"),
    )?;
    ensure(run.phase == Phase::Agreed, || format!("{:?}", run.phase))?;
    for entry in ["Function.17:Technique.7.2", "Function.15"] {
        ensure(report.entries.iter().any(|e| e == entry), || format!("missing {entry}"))?;
    }
    let first = run.record.as_ref().unwrap().encode();
    let again = run_scenario(&script, options).map_err(|e| e.to_string())?;
    let second = again.run.as_ref().unwrap().record.as_ref().unwrap().encode();
    ensure(first == second, || "records differ between seeded runs".into())?;
    let transcript = |o: &ssla::agents::Outcome| o.messages.iter().map(WireDocument::encode).collect::<Vec<_>>();
    ensure(transcript(run) == transcript(again.run.as_ref().unwrap()), || "messages differ between seeded runs".into())?;
    Ok(format!("{} entries agreed, {}-byte record reproduced byte for byte", report.entries.len(), first.len()))
}

fn evidence() -> Outcome {
    let (user, sp, keys) = scenario_records();
    ensure(compare_evidence(&user, &sp), || "records differ".into())?;
    let (mut total, mut invalid, mut escaped) = (0usize, 0usize, Vec::new());
    for record in [&user, &sp] {
        let bytes = record.encode();
        ensure(audit_document(&bytes, &keys).is_valid(), || "untouched record invalid".into())?;
        let value = record.to_document().to_value();
        for (path, mutated) in field_mutations(&value) {
            total += 1;
            let Ok(text) = serde_json::to_vec(&mutated) else { continue };
            let reencoded = match WireDocument::decode(&text) {
                Ok(doc) => doc.encode(),
                Err(_) => text,
            };
            if audit_document(&reencoded, &keys).is_valid() {
                escaped.push(path);
            } else {
                invalid += 1;
            }
        }
    }
    ensure(escaped.is_empty(), || format!("{} mutations audited valid, e.g. {}", escaped.len(), escaped[0]))?;
    Ok(format!("records identical; {invalid}/{total} single-byte field mutations Invalid (100%); audit is offline"))
}

fn fuzzing() -> Outcome {
    let stats = fuzz(10_000, 0x5eed);
    ensure(stats.crashes == 0, || format!("{} crashes: {:?}", stats.crashes, stats.violations.first()))?;
    ensure(stats.illegal_transitions == 0, || format!("{} illegal transitions: {:?}", stats.illegal_transitions, stats.violations.first()))?;
    ensure(stats.agreed_without_dual_signatures == 0, || format!("{:?}", stats.violations.first()))?;
    ensure(stats.agreed > 0 && stats.rejected > 0, || format!("degenerate run: {stats:?}"))?;
    Ok(format!(
        "{} sequences, {} deliveries ({} accepted, {} rejected), {} agreements all dual-signed, 0 illegal transitions, 0 crashes",
        stats.sequences, stats.deliveries, stats.accepted, stats.rejected, stats.agreed
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("1 seed translation tables", Duration::from_secs(1), seed_translations),
        ("2 decision vs set-cover oracle", Duration::from_secs(10), decision_oracle),
        ("3 proof-of-work stamps", Duration::MAX, hashcash),
        ("4 end-to-end hotspot scenario", Duration::from_secs(5), end_to_end),
        ("5 evidence symmetry and tamper audit", Duration::from_secs(30), evidence),
        ("6 replay and state fuzzing", Duration::MAX, fuzzing),
    ];
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:?}, limit {limit:?}")),
            other => other,
        };
        let budget = if limit == Duration::MAX { String::new() } else { format!(", limit {limit:?}") };
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{elapsed:.2?}{budget}]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {name}: {detail} [{elapsed:.2?}{budget}]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
