//! One line per acceptance criterion; the process exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bubblescope_core::bubble::{
    detect_t_b, detect_t_b_decoup, naive_false_alarms, tb_scaling_experiment, BubbleDirection, ScalingConfig,
};
use bubblescope_core::decoupling::{brute_force_sign_determined, game_decoupling, strategy_decoupled};
use bubblescope_core::ensemble::run_ensemble;
use bubblescope_core::format::parse_stream;
use bubblescope_core::generators::{gen_iid_stream, gen_selfplay_stream};
use bubblescope_core::strategy::all_strategies;
use bubblescope_core::{
    Action, DecouplingCurves, Direction, EnsembleConfig, ExternalStream, Game, GameConfig, GameKind, History,
    IncrementSource, Strategy, StrategyChoice,
};
use bubblescope_lab::export::export;
use bubblescope_lab::session::FrameStatus;
use bubblescope_lab::{Session, SessionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn dollar(n: usize, m: u8, s: usize, seed: u64) -> GameConfig {
    GameConfig {
        kind: GameKind::Dollar,
        n_agents: n,
        m,
        s,
        seed,
        choice: StrategyChoice::Best,
    }
}

fn sample_table() -> Outcome {
    let s = Strategy::from_signs(2, &[1, -1, 1, 1]).unwrap();
    let expected = [("00", None), ("01", Some(Action::Buy)), ("10", None), ("11", Some(Action::Buy))];
    let mut wrong = Vec::new();
    for (h, want) in expected {
        let got = strategy_decoupled(&s, History::parse(h).unwrap(), 1).forced_action();
        if got != want {
            wrong.push(format!("{h}: {got:?}"));
        }
    }
    outcome(wrong.is_empty(), if wrong.is_empty() { "4/4 histories".into() } else { wrong.join(", ") })
}

fn soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50_0d);
    let (mut states, mut decided, mut disagree) = (0usize, 0usize, 0usize);
    for seed in 0..12_000u64 {
        let kind = if seed % 2 == 0 { GameKind::Dollar } else { GameKind::Minority };
        let n = rng.random_range(1..=7);
        let m = rng.random_range(1..=3u8);
        let s = rng.random_range(1..=3);
        let mut game = Game::new(GameConfig { kind, n_agents: n, m, s, seed, choice: StrategyChoice::Best }).unwrap();
        let mut h = game.random_history();
        for _ in 0..rng.random_range(0..12) {
            let (mv, _) = game.step_selfplay(h);
            h = h.successor(mv);
        }
        for i in 0..n {
            let scores: Vec<i64> = (0..s).map(|_| rng.random_range(-3..=3)).collect();
            game.agent_mut(i).set_scores(&scores).unwrap();
        }
        let att = game.decide(h);
        let source = if rng.random::<bool>() { IncrementSource::UnitMove } else { IncrementSource::Attendance(att.value()) };
        states += 1;
        let d = game_decoupling(&game, h, source).direction;
        if d != Direction::None {
            decided += 1;
            if brute_force_sign_determined(&game, h, source) != d {
                disagree += 1;
            }
        }
    }
    outcome(
        disagree == 0 && states >= 10_000,
        format!("{states} states, {decided} decoupled, {disagree} disagreements"),
    )
}

fn relative_payoff_form() -> Outcome {
    let (mut compared, mut mismatched) = (0usize, 0usize);
    for seed in 0..1000u64 {
        let kind = if seed % 2 == 0 { GameKind::Dollar } else { GameKind::Minority };
        let mut game = Game::new(GameConfig { kind, n_agents: 11, m: 3, s: 2, seed, choice: StrategyChoice::Best }).unwrap();
        let mut h = game.random_history();
        for _ in 0..200 {
            let tie = game.has_score_tie();
            let via_q = game.attendance_via_q(h).unwrap();
            let (mv, att) = game.step_selfplay(h);
            if !tie {
                compared += 1;
                mismatched += usize::from(via_q != att);
            }
            h = h.successor(mv);
        }
    }
    outcome(mismatched == 0 && compared > 0, format!("{compared} non-tie steps, {mismatched} mismatches"))
}

fn nash_absorption() -> Outcome {
    const M: u8 = 3;
    const HORIZON: usize = 3000;
    let run = 2 * usize::from(M);
    let (mut absorbed, mut never) = (0usize, 0usize);
    for seed in 0..200u64 {
        let mut game = Game::new(dollar(11, M, 20, seed)).unwrap();
        let moves = game.run_selfplay(usize::from(M) + HORIZON + 100);
        let generated = &moves[usize::from(M)..];
        let first = (run - 1..HORIZON).find(|&i| generated[i + 1 - run..=i].iter().all(|&x| x == generated[i]));
        match first {
            Some(i) => absorbed += usize::from(generated[i + 1..=i + 100].iter().all(|&x| x == generated[i])),
            None => never += 1,
        }
    }
    outcome(
        absorbed * 100 >= 95 * 200,
        format!("{absorbed}/200 stay constant for 100 steps ({never} without a run of {run})"),
    )
}

struct Bubble {
    seed: u64,
    stream: ExternalStream,
    t_b: usize,
    direction: BubbleDirection,
    curves: DecouplingCurves,
}

/// First 20 seeds whose 300-move self-play stream ends in a bubble of at least
/// `2m` moves that starts no earlier than `2m`, the first time an alarm can
/// fire. Analyzed by an ensemble seeded apart from the generators.
fn bubble_corpus() -> Vec<Bubble> {
    let m = 3u8;
    let mut corpus = Vec::new();
    let mut seed = 0u64;
    while corpus.len() < 20 {
        let stream = gen_selfplay_stream(dollar(11, m, 20, seed), 300).unwrap();
        seed += 1;
        let Some(onset) = detect_t_b(&stream.moves) else { continue };
        let run = 2 * usize::from(m);
        if onset.t < run || stream.len() - onset.t < run {
            continue;
        }
        let mut cfg = EnsembleConfig::new(11, m);
        cfg.base_seed = 1_000_000;
        let curves = run_ensemble(&stream, &cfg).unwrap();
        corpus.push(Bubble {
            seed: seed - 1,
            stream,
            t_b: onset.t,
            direction: onset.direction,
            curves,
        });
    }
    corpus
}

fn saturation(corpus: &[Bubble]) -> Outcome {
    let hits = corpus
        .iter()
        .filter(|b| {
            (b.t_b..=b.t_b + 10)
                .filter_map(|t| b.curves.point(t))
                .any(|p| p.pct_pos.max(p.pct_neg) > 0.80)
        })
        .count();
    outcome(hits * 10 >= 9 * corpus.len(), format!("{hits}/{} streams exceed 0.80 within 10 steps of t_b", corpus.len()))
}

fn proximity(corpus: &[Bubble]) -> Outcome {
    let mut offsets = Vec::new();
    let mut close = 0usize;
    for b in corpus {
        let d = detect_t_b_decoup(&b.curves, 3).map(|o| o.t as i64 - b.t_b as i64);
        close += usize::from(d.is_some_and(|d| d.abs() <= 3));
        offsets.push(d.map_or("none".to_string(), |d| format!("{d:+}")));
    }
    outcome(
        close * 10 >= 7 * corpus.len(),
        format!("{close}/{} within 3 (offsets {})", corpus.len(), offsets.join(" ")),
    )
}

/// A decoupling alarm at `t` speaks about the move at `t + 2`; it is false when
/// that move is not part of a bubble in the alarmed direction.
fn no_false_alarms(corpus: &[Bubble]) -> Outcome {
    let naive = corpus.iter().filter(|b| !naive_false_alarms(&b.stream.moves, 3).is_empty()).count();
    let false_decoup: Vec<u64> = corpus
        .iter()
        .filter(|b| detect_t_b_decoup(&b.curves, 3).is_some_and(|o| o.t + 2 < b.t_b || o.direction != b.direction))
        .map(|b| b.seed)
        .collect();
    outcome(
        naive >= 1 && false_decoup.is_empty(),
        format!("naive rule fires early on {naive}/{} streams; false decoupling alarms on seeds {false_decoup:?}", corpus.len()),
    )
}

fn scaling() -> Outcome {
    let rows = tb_scaling_experiment(&ScalingConfig::new(vec![2, 3, 4], 200)).unwrap();
    let means: Vec<f64> = rows.iter().filter_map(|r| r.mean_t_b).collect();
    if means.len() != 3 {
        return outcome(false, "undefined mean onset");
    }
    let ratios = [means[1] / means[0], means[2] / means[1]];
    outcome(
        ratios.iter().all(|r| (1.4..=3.0).contains(r)),
        format!(
            "means {:.2} {:.2} {:.2}; ratios {:.2} {:.2}",
            means[0], means[1], means[2], ratios[0], ratios[1]
        ),
    )
}

fn random_play_null() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let stream = gen_iid_stream(200, seed);
        let mut cfg = EnsembleConfig::new(11, 3);
        cfg.choice = StrategyChoice::UniformRandom;
        let curves = run_ensemble(&stream, &cfg).unwrap();
        worst = curves.points().map(|p| p.pct_pos.max(p.pct_neg)).fold(worst, f64::max);
    }
    outcome(worst < 0.05, format!("max fraction {worst:.4} over 20 i.i.d. streams"))
}

fn statistical_counts() -> Outcome {
    let tables: Vec<Strategy> = all_strategies(2).collect();
    let constant = tables.iter().filter(|s| s.is_constant().is_some()).count();
    let decoupled_ok = History::all(2).all(|h| tables.iter().filter(|s| strategy_decoupled(s, h, 1).is_decoupled()).count() == 8);

    const DRAWS: usize = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = History::parse("010").unwrap();
    let (mut all_buy, mut decoupled) = (0usize, 0usize);
    for _ in 0..DRAWS {
        let s = Strategy::random(3, &mut rng);
        all_buy += usize::from(s.is_constant() == Some(Action::Buy));
        decoupled += usize::from(strategy_decoupled(&s, h, 1).is_decoupled());
    }
    let z = |count: usize, p: f64| {
        let n = DRAWS as f64;
        (count as f64 - n * p) / (n * p * (1.0 - p)).sqrt()
    };
    let (z_const, z_dec) = (z(all_buy, 1.0 / 256.0), z(decoupled, 0.5));
    outcome(
        tables.len() == 16 && constant == 2 && decoupled_ok && z_const.abs() <= 3.0 && z_dec.abs() <= 3.0,
        format!(
            "m=2: {constant}/16 constant, 8/16 decoupled at every history: {decoupled_ok}; m=3: z(all-buy)={z_const:+.2}, z(decoupled)={z_dec:+.2}"
        ),
    )
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/golden").join(name)
}

fn cli(args: &[&str]) -> u8 {
    bubblescope_cli::run(std::iter::once("bubblescope").chain(args.iter().copied()))
}

fn cli_goldens(dir: &Path) -> Result<(), String> {
    let stream = dir.join("selfplay_seed7.txt");
    let code = cli(&[
        "simulate", "--generator", "selfplay", "--kind", "dollar", "--n", "11", "--m", "3", "--s", "20", "--steps",
        "300", "--seed", "7", "-o", stream.to_str().unwrap(),
    ]);
    if code != 0 {
        return Err(format!("simulate exited {code}"));
    }
    let same = |a: &Path, b: &Path| std::fs::read(a).ok().is_some_and(|x| std::fs::read(b).ok() == Some(x));
    if !same(&stream, &golden("selfplay_seed7.txt")) {
        return Err("simulated stream differs from golden".into());
    }
    for stem in ["selfplay_seed7", "constant_suffix"] {
        let out = dir.join("analysis");
        let code = cli(&[
            "analyze",
            golden(&format!("{stem}.txt")).to_str().unwrap(),
            "--n-mc",
            "50",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        if code != 0 {
            return Err(format!("analyze {stem} exited {code}"));
        }
        if !same(&out.join(format!("{stem}.curves.csv")), &golden(&format!("{stem}.n50.curves.csv"))) {
            return Err(format!("{stem} curves differ from golden"));
        }
    }
    Ok(())
}

fn live_session_matches_offline() -> Result<usize, String> {
    let n = 7;
    let mut cfg = SessionConfig::new(n, 3, 60);
    cfg.seed = Some(16);
    let mut analytics = EnsembleConfig::new(n, 3);
    analytics.n_mc = 200;
    cfg.analytics = Some(analytics);
    let mut s = Session::create("acceptance".into(), cfg, 0).map_err(|e| e.to_string())?;
    for i in 0..n {
        s.join(format!("p{i}"), format!("tok{i}"), 0).map_err(|e| e.to_string())?;
    }
    s.start(0).map_err(|e| e.to_string())?;
    for k in 0..60usize {
        let buys = if k < 25 { [2, 5, 4, 6, 1, 3, 5][k % 7] } else { n };
        let (round, _) = s.open_round().ok_or("no open round")?;
        for i in 0..n {
            s.submit(i, round, if i < buys { 1 } else { -1 }, k as u64).map_err(|e| e.to_string())?;
        }
        s.settle(round, k as u64, true).map_err(|e| e.to_string())?;
    }
    let bundle = export(&s);
    let stream = parse_stream(&bundle.true_stream).map_err(|e| e.to_string())?;
    let offline = run_ensemble(&stream, &s.config().analytics_config()).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for f in s.frames().iter().filter(|f| f.status == FrameStatus::Live) {
        if let Some(p) = offline.point(f.t) {
            if (f.pct_pos, f.pct_neg) != (Some(p.pct_pos), Some(p.pct_neg)) {
                return Err(format!("frame t={} differs", f.t));
            }
            compared += 1;
        }
    }
    if compared == 0 {
        return Err("no frames compared".into());
    }
    Ok(compared)
}

fn determinism_and_replay() -> Outcome {
    let result = (|| {
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            cli_goldens(dir.path())?;
        }
        live_session_matches_offline()
    })();
    match result {
        Ok(frames) => outcome(true, format!("goldens identical twice; {frames} live frames equal offline curves")),
        Err(e) => outcome(false, e),
    }
}

fn report(results: &mut Vec<bool>, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = o.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs_f64()));
    println!(
        "{} {name}: {} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    results.push(pass);
}

fn main() -> ExitCode {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let mut results = Vec::new();
    report(&mut results, "sample-table predicate", secs(1), sample_table);
    report(&mut results, "soundness oracle", secs(60), soundness);
    report(&mut results, "relative-payoff attendance", secs(60), relative_payoff_form);
    report(&mut results, "nash absorption", secs(120), nash_absorption);

    let start = Instant::now();
    let corpus = bubble_corpus();
    let corpus_time = start.elapsed();
    println!(
        "     bubble corpus: seeds {:?}, t_b {:?} [{:.1}s]",
        corpus.iter().map(|b| b.seed).collect::<Vec<_>>(),
        corpus.iter().map(|b| b.t_b).collect::<Vec<_>>(),
        corpus_time.as_secs_f64()
    );
    let budget = Duration::from_secs(600).saturating_sub(corpus_time);
    report(&mut results, "decoupling saturation", Some(budget), || saturation(&corpus));
    report(&mut results, "onset proximity", Some(budget), || proximity(&corpus));
    report(&mut results, "no-false-alarm contrast", None, || no_false_alarms(&corpus));

    report(&mut results, "onset scaling", secs(300), scaling);
    report(&mut results, "random-play null", secs(300), random_play_null);
    report(&mut results, "statistical counts", secs(60), statistical_counts);
    report(&mut results, "determinism and replay", None, determinism_and_replay);

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
