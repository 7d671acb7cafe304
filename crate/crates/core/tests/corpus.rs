use quartet_core::corpus::{generate_synthetic_corpus, split_stats, SynthConfig};
use quartet_core::eval::{align, position_histograms};
use quartet_core::explanation::{validate_explanation, Direction};

#[test]
fn noeffect_fraction_is_honored() {
    for frac in [0.0, 0.2, 0.418, 0.75] {
        let split = generate_synthetic_corpus(&SynthConfig {
            seed: 21,
            n_passages: 300,
            noeffect_frac: frac,
            ..SynthConfig::default()
        })
        .unwrap();
        let got = split_stats(&split).no_effect_fraction();
        assert!((got - frac).abs() <= 0.02, "asked {frac}, got {got}");
    }
}

#[test]
fn gold_positions_follow_the_generator() {
    let cfg = SynthConfig {
        seed: 22,
        n_passages: 3000,
        noeffect_frac: 0.3,
        ..SynthConfig::default()
    };
    let split = generate_synthetic_corpus(&cfg).unwrap();
    let golds: Vec<(String, _)> = split
        .examples
        .iter()
        .map(|ex| (ex.id().to_string(), ex.question.gold.unwrap()))
        .collect();
    let h = position_histograms(&align(&split, &golds).unwrap());
    let n = split.len() as f64;

    // K uniform on k_min..=k_max, i uniform on 1..=K, j uniform on i..=K.
    let ks: Vec<usize> = (cfg.k_min..=cfg.k_max).collect();
    let effect = 1.0 - cfg.noeffect_frac;
    for pos in 1..=cfg.k_max {
        let p_i: f64 = ks.iter().filter(|&&k| pos <= k).map(|&k| 1.0 / k as f64).sum::<f64>() / ks.len() as f64;
        let p_j: f64 = ks
            .iter()
            .map(|&k| (1..=pos.min(k)).filter(|_| pos <= k).map(|a| 1.0 / (k * (k - a + 1)) as f64).sum::<f64>())
            .sum::<f64>()
            / ks.len() as f64;
        let got_i = *h.i.gold.get(&(pos as i64)).unwrap_or(&0) as f64 / n;
        let got_j = *h.j.gold.get(&(pos as i64)).unwrap_or(&0) as f64 / n;
        assert!((got_i - effect * p_i).abs() < 0.015, "i={pos}: {got_i} vs {}", effect * p_i);
        assert!((got_j - effect * p_j).abs() < 0.015, "j={pos}: {got_j} vs {}", effect * p_j);
    }
    let absent = *h.i.gold.get(&-1).unwrap_or(&0) as f64 / n;
    assert!((absent - cfg.noeffect_frac).abs() < 1e-3);
}

fn perturbation_sign(q_p: &str) -> Direction {
    match q_p.split_whitespace().nth(1) {
        Some("more") => Direction::More,
        Some("less") => Direction::Less,
        other => panic!("unexpected perturbation wording {other:?} in {q_p:?}"),
    }
}

#[test]
fn inhibitors_flip_some_perturbed_steps() {
    let base = SynthConfig {
        seed: 23,
        n_passages: 200,
        noeffect_frac: 0.0,
        paraphrase_rate: 0.0,
        out_of_para_frac: 1.0,
        ..SynthConfig::default()
    };
    let flipped = |inhibitors: bool| {
        let split = generate_synthetic_corpus(&SynthConfig { inhibitors, ..base.clone() }).unwrap();
        for ex in &split.examples {
            assert!(validate_explanation(&ex.question.gold.unwrap(), ex.k()).is_valid());
        }
        split
            .examples
            .iter()
            .filter(|ex| ex.question.gold.unwrap().d_i != perturbation_sign(&ex.question.q_p))
            .count() as f64
            / split.len() as f64
    };
    assert_eq!(flipped(false), 0.0);
    let with = flipped(true);
    assert!(with > 0.2 && with < 0.8, "flipped share {with}");
}
