use ndarray::Array2;
use proptest::prelude::*;

use crossmax::formats::{
    parse_embeddings, parse_logits, parse_scores, parse_skeletons, parse_topology, with_echo, write_embeddings,
    write_logits, write_scores, write_skeletons, write_topology, LogitsFile, ScoreRow, SkeletonRecord,
};
use crossmax::report::MetricsDocument;
use crossmax::{
    BoneTopology, Checkpoint, EmbeddingBatch, LogitsRecord, Modality, PipelineConfig, SkeletonSequence, SplitSpec,
};

fn id() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_.]{1,12}"
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(1e-300)]
}

fn skeleton_records() -> impl Strategy<Value = Vec<SkeletonRecord>> {
    (1usize..4, 1usize..4).prop_flat_map(|(t, n)| {
        proptest::collection::vec(
            (
                id(),
                proptest::option::of(0usize..100),
                proptest::collection::vec(finite(), t * n * 3),
            ),
            0..5,
        )
        .prop_map(move |rows| {
            rows.into_iter()
                .map(|(id, label, v)| SkeletonRecord {
                    id,
                    sequence: SkeletonSequence::from_flat(t, n, v, label).unwrap(),
                })
                .collect()
        })
    })
}

fn logits_file() -> impl Strategy<Value = LogitsFile> {
    (2usize..5).prop_flat_map(|k| {
        (
            proptest::collection::btree_set(0usize..50, k),
            proptest::collection::vec(
                (
                    id(),
                    proptest::option::of(0usize..50),
                    proptest::collection::vec(finite(), 3 * k),
                    proptest::array::uniform3(0.0f64..2.0),
                ),
                1..4,
            ),
        )
            .prop_map(move |(classes, rows)| LogitsFile {
                classes: classes.into_iter().collect(),
                records: rows
                    .into_iter()
                    .map(|(id, label, l, distances)| LogitsRecord {
                        id,
                        label,
                        joints: l[..k].to_vec(),
                        bones: l[k..2 * k].to_vec(),
                        velocities: l[2 * k..].to_vec(),
                        distances,
                    })
                    .collect(),
            })
    })
}

fn score_rows() -> impl Strategy<Value = Vec<ScoreRow>> {
    proptest::collection::vec(
        (id(), 0usize..100, 0.0f64..=1.0, proptest::option::of(0usize..100)),
        0..6,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .map(|(id, class, p, label)| ScoreRow {
                id,
                class,
                p_prob: p,
                novelty: 1.0 - p,
                label,
            })
            .collect()
    })
}

const SKELETON: &str = "CROSSMAX-SKELETON v1\na 1 2 1 0 0 0 1 2 3\nb - 2 1 0 0 0 1 2 3\n";
const TOPOLOGY: &str = "CROSSMAX-TOPOLOGY v1\n1 0\n2 1\n";

proptest! {
    #[test]
    fn skeletons_roundtrip(records in skeleton_records()) {
        let text = write_skeletons(&records).unwrap();
        prop_assert_eq!(parse_skeletons(&text).unwrap(), records.clone());
        prop_assert_eq!(parse_skeletons(&with_echo(&text, "{\"a\":1}")).unwrap(), records);
    }

    #[test]
    fn embeddings_roundtrip(n in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_simple_fn((n, c), || r.random_range(-1e3..1e3));
        let b = EmbeddingBatch::new(data, Modality::Bones).unwrap();
        prop_assert_eq!(parse_embeddings(&write_embeddings(&b)).unwrap(), b);
    }

    #[test]
    fn logits_roundtrip(file in logits_file()) {
        let text = write_logits(&file).unwrap();
        prop_assert_eq!(parse_logits(&text).unwrap(), file);
    }

    #[test]
    fn scores_roundtrip(rows in score_rows()) {
        let text = write_scores(&rows).unwrap();
        prop_assert_eq!(parse_scores(&text).unwrap(), rows);
    }

    #[test]
    fn parsers_never_panic(text in "\\PC{0,200}") {
        let _ = parse_skeletons(&text);
        let _ = parse_topology(&text);
        let _ = parse_embeddings(&text);
        let _ = parse_logits(&text);
        let _ = parse_scores(&text);
        let _ = SplitSpec::from_json(&text);
        let _ = Checkpoint::from_json(&text);
        let _ = MetricsDocument::from_json(&text);
        let _ = PipelineConfig::from_toml(&text);
    }

    #[test]
    fn mutated_documents_never_panic(pos in 0usize..60, byte in any::<u8>(), cut in 0usize..60) {
        for doc in [SKELETON, TOPOLOGY] {
            let mut bytes = doc.as_bytes().to_vec();
            let p = pos % bytes.len();
            bytes[p] = byte;
            bytes.truncate(bytes.len() - cut % bytes.len());
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_skeletons(&text);
            let _ = parse_topology(&text);
        }
    }
}

#[test]
fn topology_roundtrip() {
    let t = parse_topology(TOPOLOGY).unwrap();
    assert_eq!(t, BoneTopology::new(vec![(1, 0), (2, 1)]).unwrap());
    assert_eq!(parse_topology(&write_topology(&t)).unwrap(), t);
}

#[test]
fn unknown_versions_rejected() {
    let bumped = SKELETON.replace("v1", "v2");
    assert!(parse_skeletons(&bumped).is_err());
    assert!(parse_topology(&TOPOLOGY.replace("v1", "v9")).is_err());
    let original = load_split_json();
    let split = original.replace("\"version\": 1", "\"version\": 2");
    assert_ne!(split, original);
    assert!(SplitSpec::from_json(&split).is_err());
    let scores = write_scores(&[]).unwrap().replace("v1", "v3");
    assert!(parse_scores(&scores).is_err());
}

fn load_split_json() -> String {
    crossmax::load_fixture_split("NTU60", 2).unwrap().to_json(None).unwrap()
}
