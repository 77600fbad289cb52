#![allow(dead_code)]

use cagen_core::corpus::{Heading, Plan};
use cagen_core::Setting;
use cagen_pipeline::{RunConfig, TrainingTriplet};

const TOPICS: [(&str, &str, &str); 8] = [
    ("volcano", "erupts with lava", "Activity"),
    ("glacier", "moves very slowly", "Motion"),
    ("desert", "gets little rain", "Climate"),
    ("river", "flows to the sea", "Course"),
    ("forest", "shelters many birds", "Wildlife"),
    ("canyon", "was cut by water", "Formation"),
    ("island", "is ringed by reefs", "Geography"),
    ("meadow", "blooms in spring", "Seasons"),
];

/// Eight small structured triplets, each with a two-heading plan.
pub fn synthetic_triplets() -> Vec<TrainingTriplet> {
    TOPICS
        .iter()
        .enumerate()
        .map(|(i, (topic, fact, head))| {
            let lead = format!("The {topic} is a landform.");
            let body = format!("Every {topic} {fact}.");
            let plan = Plan::new(vec![Heading::new(1, "Overview").unwrap(), Heading::new(2, head).unwrap()]);
            TrainingTriplet {
                query_id: format!("q{i}"),
                query: format!("{topic} facts"),
                docs: vec![body.clone(), lead.clone()],
                plan,
                answer: format!("# Overview\n{lead}\n## {head}\n{body}"),
            }
        })
        .collect()
}

pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::tiny(Setting::Structured);
    c.model.max_source_len = 24;
    c.model.max_target_len = 24;
    c
}
