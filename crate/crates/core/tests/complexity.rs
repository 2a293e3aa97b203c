mod common;

use rwe_nas::complexity::{count_flops, count_params};
use rwe_nas::nn::init_weights;
use rwe_nas::search_space::{decode, random_genome, CellKind};
use rwe_nas::{Genome, MacroConfig};

#[test]
fn counter_matches_oracle_default_macro() {
    let m = MacroConfig::default();
    for seed in 0..100 {
        let g = random_genome(seed);
        let r = count_flops(&decode(&g, &m).unwrap());
        assert_eq!((r.flops, r.params), common::oracle_cost(&g, &m), "seed {seed}");
    }
    let g = Genome::all_identity();
    let r = count_flops(&decode(&g, &m).unwrap());
    assert_eq!((r.flops, r.params), common::oracle_cost(&g, &m));
}

#[test]
fn counter_matches_oracle_other_macros() {
    let macros = [
        MacroConfig {
            num_layers: 8,
            init_channels: 16,
            reduction_positions: vec![3, 6],
            ..MacroConfig::default()
        },
        MacroConfig {
            num_layers: 3,
            init_channels: 6,
            reduction_positions: vec![1],
            ..MacroConfig::default()
        },
        MacroConfig {
            num_layers: 4,
            init_channels: 8,
            reduction_positions: vec![],
            input_shape: (3, 15, 15),
            ..MacroConfig::default()
        },
        MacroConfig {
            num_layers: 4,
            init_channels: 7,
            reduction_positions: vec![1, 2, 3],
            input_shape: (3, 9, 9),
            ..MacroConfig::default()
        },
    ];
    for m in &macros {
        for seed in 0..30 {
            let g = random_genome(1000 + seed);
            let r = count_flops(&decode(&g, m).unwrap());
            assert_eq!((r.flops, r.params), common::oracle_cost(&g, m), "{m:?} seed {seed}");
        }
    }
}

#[test]
fn identity_genome_costs_only_adapters_outside_reductions() {
    let m = MacroConfig::default();
    let plan = decode(&Genome::all_identity(), &m).unwrap();
    let r = count_flops(&plan);
    for l in r.per_layer.iter().filter(|l| l.flops > 0) {
        let reduction_node = plan
            .cells
            .iter()
            .enumerate()
            .any(|(i, c)| c.kind == CellKind::Reduction && l.layer.starts_with(&format!("cell{}.node", i + 1)));
        assert!(
            l.layer.starts_with("stem") || l.layer.contains(".pre") || l.layer == "head" || reduction_node,
            "{}",
            l.layer
        );
    }
}

#[test]
fn head_of_width_fifty() {
    let mut plan = decode(&Genome::all_identity(), &MacroConfig::default()).unwrap();
    plan.feature_dim = 50;
    let head = count_flops(&plan).per_layer.pop().unwrap();
    assert_eq!(head.params, 510);
}

#[test]
fn params_equal_initialized_weights_plus_head() {
    let m = MacroConfig::default();
    for seed in 0..20 {
        let plan = decode(&random_genome(seed), &m).unwrap();
        let bank = init_weights(&plan, seed ^ 0xabc);
        let head = (plan.feature_dim * plan.num_classes + plan.num_classes) as u64;
        assert_eq!(count_params(&plan), bank.num_weights() as u64 + head);
    }
}

#[test]
fn report_serializes_with_totals_and_layers() {
    let plan = decode(&random_genome(4), &MacroConfig::default()).unwrap();
    let r = count_flops(&plan);
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(v["flops"].as_u64(), Some(r.flops));
    assert_eq!(v["params"].as_u64(), Some(r.params));
    let layers = v["per_layer"].as_array().unwrap();
    assert_eq!(layers.len(), r.per_layer.len());
    for l in layers {
        assert!(l["layer"].is_string() && l["flops"].is_u64() && l["params"].is_u64());
        assert_eq!(l["output_shape"].as_array().unwrap().len(), 3);
    }
}
