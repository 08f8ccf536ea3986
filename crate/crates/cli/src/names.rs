//! Name and place pools shipped with the crate.

use std::sync::OnceLock;

#[derive(Debug)]
pub struct Community {
    pub name: &'static str,
    pub weight: f64,
    pub family: Vec<&'static str>,
    pub male: Vec<&'static str>,
    pub female: Vec<&'static str>,
}

#[derive(Debug)]
pub struct Pools {
    pub communities: Vec<Community>,
    pub streets: Vec<&'static str>,
    pub towns: Vec<&'static str>,
}

fn rows(text: &'static str) -> impl Iterator<Item = (&'static str, &'static str)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_once('\t').unwrap_or_else(|| panic!("bad pool line {l:?}")))
}

fn community(name: &'static str, weight: f64, text: &'static str) -> Community {
    let mut c = Community {
        name,
        weight,
        family: Vec::new(),
        male: Vec::new(),
        female: Vec::new(),
    };
    for (kind, value) in rows(text) {
        match kind {
            "family" => c.family.push(value),
            "male" => c.male.push(value),
            "female" => c.female.push(value),
            other => panic!("unknown pool kind {other:?}"),
        }
    }
    c
}

/// Rough national proportions.
pub fn pools() -> &'static Pools {
    static POOLS: OnceLock<Pools> = OnceLock::new();
    POOLS.get_or_init(|| {
        let mut streets = Vec::new();
        let mut towns = Vec::new();
        for (kind, value) in rows(include_str!("../data/places.tsv")) {
            match kind {
                "street" => streets.push(value),
                "town" => towns.push(value),
                other => panic!("unknown place kind {other:?}"),
            }
        }
        Pools {
            communities: vec![
                community("sinhala", 0.75, include_str!("../data/sinhala.tsv")),
                community("tamil", 0.15, include_str!("../data/tamil.tsv")),
                community("moor", 0.10, include_str!("../data/moor.tsv")),
            ],
            streets,
            towns,
        }
    })
}
