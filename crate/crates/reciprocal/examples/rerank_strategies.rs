//! How the vacant-slot reranker picks an exposure pattern for one pair:
//! show it to side A only, side B only, both, or neither, depending on the
//! pair's potential outcomes and on what each user's slot would otherwise
//! be worth.
//!
//! Run with: `cargo run --example rerank_strategies`

use reciprocal::backbone::init_model;
use reciprocal::crrs::{
    rerank_decision, vacant_slot_value, PotentialOutcomes, Strategy, VacantSlotConfig,
};
use reciprocal::Side;

fn name(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::ASideOnly => "a-side only",
        Strategy::BSideOnly => "b-side only",
        Strategy::BothSides => "both sides",
        Strategy::NeitherSide => "neither",
    }
}

fn main() -> reciprocal::Result<()> {
    // Both users' alternative slot value is fixed; sweep the pair outcomes.
    let (ybar_a, ybar_b) = (0.30, 0.20);
    println!("vacant-slot values: ybar_a {ybar_a:.2}, ybar_b {ybar_b:.2}\n");
    println!("  y10   y01   y11 | strategy      s_a   s_b");
    for (y10, y01, y11) in [
        (0.70, 0.10, 0.40), // strong a-side outcome: spend only a's slot
        (0.10, 0.70, 0.40), // mirrored: spend only b's slot
        (0.40, 0.35, 0.95), // mutual exposure beats any single side
        (0.05, 0.08, 0.10), // weak pair: keep both slots for others
    ] {
        let outcomes = PotentialOutcomes { y10, y11, y01 };
        let d = rerank_decision(&outcomes, ybar_a, ybar_b);
        println!(
            " {y10:.2}  {y01:.2}  {y11:.2} | {:12} {:.2}  {:.2}",
            name(d.strategy),
            d.s_a,
            d.s_b
        );
    }

    // The chosen pattern never mixes: a pair is credited on the sides that
    // expose it and nowhere else, and raising y11 can only move the
    // decision toward (and never away from) double exposure.
    let outcomes = PotentialOutcomes {
        y10: 0.40,
        y01: 0.35,
        y11: 0.50,
    };
    println!("\nraising y11 with y10/y01 fixed:");
    for y11 in [0.50, 0.60, 0.70, 0.80] {
        let d = rerank_decision(&PotentialOutcomes { y11, ..outcomes }, ybar_a, ybar_b);
        println!("  y11 {y11:.2} -> {}", name(d.strategy));
    }

    // In the evaluation harness the ybar values are not free parameters:
    // they are estimated per user by sampling counterparts and scoring them
    // with the pretrained backbone.
    let pretrained = init_model(40, 40, 4, 17)?;
    let config = VacantSlotConfig {
        sample_size: 25,
        top_q: 3,
    };
    let mut rng = rand::SeedableRng::seed_from_u64(99);
    let estimate = vacant_slot_value(&pretrained, Side::A, 7, None, &config, &mut rng)?;
    println!(
        "\nestimated ybar for side-A user 7: {:.3} (best {} of {} sampled counterparts)",
        estimate.ybar, config.top_q, estimate.sample_size
    );
    Ok(())
}
