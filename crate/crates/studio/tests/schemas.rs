//! The shipped JSON schemas agree with the request types the service parses.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use styleweave_studio::pipeline::{
    BlendRequest, FinetuneRequest, InvertRequest, JobOutput, PanoramaRequest, RenderRequest,
    SampleRequest, TransferApiRequest,
};
use styleweave_studio::{Job, JobKind};

fn schema(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs/schemas")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

fn check<T: DeserializeOwned + Serialize>(name: &str) {
    let s = schema(&format!("{name}.request.json"));
    assert_eq!(s["additionalProperties"], false, "{name}");
    let props = keys(&s["properties"]);
    let required: BTreeSet<String> = s["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(required.is_subset(&props), "{name}");
    let examples = s["examples"].as_array().unwrap();
    let mut seen = BTreeSet::new();
    for ex in examples {
        seen.extend(keys(ex));
        let parsed: T =
            serde_json::from_value(ex.clone()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(
            keys(&serde_json::to_value(&parsed).unwrap()).is_subset(&props),
            "{name}"
        );
        for k in keys(ex) {
            let mut cut = ex.clone();
            cut.as_object_mut().unwrap().remove(&k);
            let ok = serde_json::from_value::<T>(cut).is_ok();
            assert_eq!(ok, !required.contains(&k), "{name}: dropping `{k}`");
        }
        let mut extra = ex.clone();
        extra["unexpected"] = json!(1);
        assert!(
            serde_json::from_value::<T>(extra).is_err(),
            "{name} accepts unknown fields"
        );
    }
    assert_eq!(seen, props, "{name}: examples should cover every property");
}

#[test]
fn request_schemas_match_request_types() {
    check::<SampleRequest>("sample");
    check::<RenderRequest>("render");
    check::<BlendRequest>("blend");
    check::<InvertRequest>("invert");
    check::<PanoramaRequest>("panorama");
    check::<TransferApiRequest>("transfer");
    check::<FinetuneRequest>("finetune");
}

#[test]
fn job_schema_covers_job_records() {
    let s = schema("job.json");
    let props = keys(&s["properties"]);
    let example: Job = serde_json::from_value(s["examples"][0].clone()).unwrap();
    assert_eq!(example.kind, JobKind::Panorama);

    let mut job = Job::new(JobKind::Invert, json!({}), "0".repeat(64));
    job.start(std::time::Duration::ZERO);
    job.finish(
        Ok(JobOutput {
            result_uri: "images/x.png".into(),
            artifacts: [("trace".to_string(), "traces/x.csv".to_string())].into(),
        }),
        std::time::Duration::ZERO,
    );
    let v = serde_json::to_value(&job).unwrap();
    assert!(keys(&v).is_subset(&props));
    for r in s["required"].as_array().unwrap() {
        assert!(v.get(r.as_str().unwrap()).is_some(), "{r}");
    }
}
