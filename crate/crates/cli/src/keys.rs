//! Config keys owned by the command line, plus the combined help table.

use crowdcast::model::TRAIN_KEYS;
use crowdcast::sim::SCENARIO_KEYS;

pub const AUGMENT_KEYS: &[(&str, &str, &str)] = &[
    ("aug_stride", "8", "window stride, steps"),
    ("aug_l_max", "4", "longest reduced homotopy word kept by the planner"),
    ("detour_cap", "2.0", "max length ratio to the cheapest path"),
    ("crop_margin", "3.0", "m"),
    ("clearance", "0.1", "planning clearance beyond body radius, m"),
];

pub const PRETRAIN_KEYS: &[(&str, &str, &str)] = &[
    ("pretrain_steps", "500", "optimizer steps"),
    ("pretrain_batch", "16", "grids per step"),
    ("pretrain_lr", "0.06", "learning rate"),
    ("pretrain_stride", "4", "steps between sampled crops"),
];

pub const EVAL_KEYS: &[(&str, &str, &str)] = &[
    ("eval_stride", "8", "steps between evaluation windows"),
];

/// `(key, default, unit or meaning)` rows.
pub type KeyTable = &'static [(&'static str, &'static str, &'static str)];

pub const TABLES: &[(&str, KeyTable)] = &[
    ("scenario (simulate)", SCENARIO_KEYS),
    ("model and training (augment, pretrain-encoder, train, evaluate)", TRAIN_KEYS),
    ("augmentation (augment)", AUGMENT_KEYS),
    ("encoder pretraining (pretrain-encoder)", PRETRAIN_KEYS),
    ("evaluation (evaluate)", EVAL_KEYS),
];

pub fn all_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = TABLES.iter().flat_map(|(_, t)| t.iter().map(|k| k.0)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

pub fn help_text() -> String {
    let mut s = String::from(
        "Config files hold one `key = value` per line, `#` starts a comment.\n\
         `--set key=value` overrides the file, `--seed` overrides `seed`.\n\
         CROWDCAST_THREADS caps worker threads (0 = auto).\n\
         Exit codes: 0 ok, 1 usage, 2 data, 3 numerical failure.\n",
    );
    for (title, table) in TABLES {
        s.push_str(&format!("\nKeys, {title}:\n"));
        for (k, d, u) in *table {
            s.push_str(&format!("  {k:<18} default {d:<10} {u}\n"));
        }
    }
    s
}

/// Help for the tables at the given indices of [`TABLES`].
pub fn table_help(which: &[usize]) -> String {
    let mut s = String::new();
    for &i in which {
        let (title, table) = TABLES[i];
        s.push_str(&format!("Keys, {title}:\n"));
        for (k, d, u) in table {
            s.push_str(&format!("  {k:<18} default {d:<10} {u}\n"));
        }
    }
    s
}
