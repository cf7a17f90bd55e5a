use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use styleweave::blend::AlphaMask;
use styleweave::imageio::{decode_image_png, encode_image_png, encode_mask_png};
use styleweave_studio::assets::AssetKind;
use styleweave_studio::pipeline::{JobOutput, Task};
use styleweave_studio::{
    api, run_inline, Job, JobKind, JobQueue, JobRequest, JobState, Project, Studio,
};
use tower::ServiceExt;

struct Harness {
    _dir: tempfile::TempDir,
    studio: Arc<Studio>,
    app: Router,
}

fn harness(workers: usize) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let project = Project::open_or_init(dir.path().join("proj"), None).unwrap();
    let studio = Arc::new(Studio::new(project, workers));
    Harness {
        app: api::router(Arc::clone(&studio)),
        studio,
        _dir: dir,
    }
}

impl Harness {
    async fn call(&self, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Bytes) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        let (s, b) = self
            .call("POST", uri, Some(serde_json::to_vec(&body).unwrap()))
            .await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn asset(&self, uri: &str) -> Bytes {
        let (s, b) = self.call("GET", &format!("/v1/assets/{uri}"), None).await;
        assert_eq!(s, StatusCode::OK, "{uri}");
        b
    }

    async fn sample(&self, seed: u64, count: usize) -> (Vec<String>, Vec<String>) {
        let (s, v) = self
            .post("/v1/sample", json!({"seed": seed, "count": count}))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let list = |k: &str| {
            v[k].as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_str().unwrap().to_string())
                .collect()
        };
        (list("style_ids"), list("image_uris"))
    }

    /// Submits a job and polls it to completion.
    async fn run_job(&self, endpoint: &str, body: Value) -> Job {
        let (s, v) = self.post(endpoint, body).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let id = v["id"].as_str().unwrap().to_string();
        for _ in 0..2400 {
            let (s, b) = self.call("GET", &format!("/v1/jobs/{id}"), None).await;
            assert_eq!(s, StatusCode::OK);
            let job: Job = serde_json::from_slice(&b).unwrap();
            if job.state.is_terminal() {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("job {id} did not finish");
    }
}

#[tokio::test]
async fn constant_zero_blend_matches_the_render_of_style_a() {
    let h = harness(2);
    let (ids, images) = h.sample(3, 2).await;
    let (s, render) = h.post("/v1/render", json!({"style_id": ids[0]})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(render["image_uri"], images[0].as_str());

    let job = h
        .run_job(
            "/v1/blend",
            json!({"style_a": ids[0], "style_b": ids[1], "constant_alpha": 0.0}),
        )
        .await;
    assert_eq!(job.state, JobState::Done, "{:?}", job.error);
    let uri = job.result_uri.unwrap();
    assert_eq!(uri, images[0]);
    assert_eq!(
        h.asset(&uri).await,
        h.asset(render["image_uri"].as_str().unwrap()).await
    );

    let one = h
        .run_job("/v1/blend", json!({"style_a": ids[0], "style_b": ids[1], "constant_alpha": 1.0, "mode": "constant"}))
        .await;
    assert_eq!(one.result_uri.as_deref(), Some(images[1].as_str()));
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let h = harness(1);
    let (s, _) = h
        .call("GET", &format!("/v1/jobs/{}", uuid::Uuid::new_v4()), None)
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call("GET", "/v1/jobs/not-a-uuid", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h
        .call(
            "GET",
            &format!("/v1/assets/images/{}.png", "0".repeat(64)),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call("GET", "/v1/assets/../manifest.json", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h
        .post("/v1/render", json!({"style_id": "f".repeat(64)}))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_panorama_requests_are_byte_identical() {
    let h = harness(2);
    let a = h.run_job("/v1/panorama", json!({"n": 3, "seed": 7})).await;
    let b = h.run_job("/v1/panorama", json!({"n": 3, "seed": 7})).await;
    assert_eq!(a.state, JobState::Done, "{:?}", a.error);
    assert_ne!(a.id, b.id);
    assert_eq!(a.result_uri, b.result_uri);
    assert_eq!(a.artifacts, b.artifacts);
    let png = h.asset(a.result_uri.as_deref().unwrap()).await;
    let img = decode_image_png(&png).unwrap();
    assert_eq!((img.height(), img.width()), (32, 96));
    let plan: Value = serde_json::from_slice(&h.asset(&a.artifacts["plan"]).await).unwrap();
    assert_eq!(plan["latents"].as_array().unwrap().len(), 3);

    let c = h.run_job("/v1/panorama", json!({"n": 3, "seed": 8})).await;
    assert_ne!(c.result_uri, a.result_uri);
}

#[tokio::test]
async fn invalid_requests_are_400_and_stale_checkpoints_409() {
    let h = harness(1);
    let (ids, _) = h.sample(1, 2).await;
    let bad = [
        ("/v1/sample", json!({"seed": 1, "count": 0})),
        ("/v1/sample", json!({"seed": "x"})),
        ("/v1/sample", json!({"seed": 1, "colour": 3})),
        ("/v1/render", json!({})),
        ("/v1/render", json!({"style_id": "../x"})),
        ("/v1/blend", json!({"style_a": ids[0], "style_b": ids[1]})),
        (
            "/v1/blend",
            json!({"style_a": ids[0], "style_b": ids[1], "constant_alpha": 1.5}),
        ),
        (
            "/v1/blend",
            json!({"style_a": ids[0], "style_b": ids[1], "constant_alpha": 0.5, "layer_set": [9]}),
        ),
        (
            "/v1/blend",
            json!({"style_a": ids[0], "constant_alpha": 0.5}),
        ),
        (
            "/v1/blend",
            json!({"style_a": ids[0], "constant_alpha": 0.5, "mode": "cross_generator"}),
        ),
        ("/v1/panorama", json!({"n": 1})),
        ("/v1/panorama", json!({"n": 3, "style_ids": ids})),
        ("/v1/panorama", json!({"n": 3, "smoothing_sigma": -1.0})),
        (
            "/v1/transfer",
            json!({"src": ids[0], "ref": ids[1], "box": {"x0": 0, "y0": 0, "x1": 40, "y1": 8}}),
        ),
        (
            "/v1/transfer",
            json!({"src": ids[0], "ref": ids[1], "box": {"x0": 0, "y0": 0, "x1": 8, "y1": 8}, "layer_cut": 8}),
        ),
        ("/v1/invert", json!({"image_uri": "images/nope.png"})),
        ("/v1/finetune", json!({"dataset": []})),
    ];
    for (endpoint, body) in bad {
        let (s, v) = h.post(endpoint, body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{endpoint} {body} -> {v}");
        assert!(v["error"].is_string());
    }
    let (s, _) = h
        .call("POST", "/v1/sample", Some(b"{not json".to_vec()))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let stale = "0".repeat(64);
    for (endpoint, body) in [
        ("/v1/sample", json!({"seed": 1, "checkpoint_hash": stale})),
        ("/v1/panorama", json!({"n": 3, "checkpoint_hash": stale})),
    ] {
        let (s, _) = h.post(endpoint, body).await;
        assert_eq!(s, StatusCode::CONFLICT);
    }
    let current = h.studio.project().checkpoint_hash().to_string();
    let (s, _) = h
        .post("/v1/sample", json!({"seed": 1, "checkpoint_hash": current}))
        .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn inversion_job_exposes_a_csv_trace() {
    let h = harness(1);
    let (_, images) = h.sample(5, 1).await;
    let job = h
        .run_job(
            "/v1/invert",
            json!({"image_uri": images[0], "config": {"steps": 20, "step_size": 0.05}}),
        )
        .await;
    assert_eq!(job.state, JobState::Done, "{:?}", job.error);
    let (s, b) = h
        .call(
            "GET",
            &format!("/v1/assets/{}", job.artifacts["trace"]),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let csv = String::from_utf8(b.to_vec()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,total,mse,perceptual,prior");
    assert_eq!(lines.len(), 22);
    assert!(job.artifacts.contains_key("coeffs"));
    assert_eq!(job.request["config"]["steps"], 20);
    assert!(job.timings.contains_key("queued") && job.timings.contains_key("running"));
}

#[tokio::test]
async fn uploaded_masks_drive_masked_blends_and_transfer_runs() {
    let h = harness(2);
    let (ids, images) = h.sample(11, 2).await;
    let empty = AlphaMask::constant(32, 32, 0.0).unwrap();
    let (s, v) = h
        .call(
            "POST",
            "/v1/uploads/masks",
            Some(encode_mask_png(&empty).unwrap()),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let mask_uri = serde_json::from_slice::<Value>(&v).unwrap()["uri"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(mask_uri.starts_with("masks/"));
    let job = h
        .run_job("/v1/blend", json!({"style_a": ids[0], "style_b": ids[1], "mask_uri": mask_uri, "layer_set": [0, 1, 2]}))
        .await;
    assert_eq!(job.result_uri.as_deref(), Some(images[0].as_str()));

    let (s, _) = h
        .call("POST", "/v1/uploads/masks", Some(b"not a png".to_vec()))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .call("POST", "/v1/uploads/styles", Some(b"{}".to_vec()))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let t = h
        .run_job(
            "/v1/transfer",
            json!({"src": ids[0], "ref": ids[1], "box": {"x0": 0, "y0": 0, "x1": 0, "y1": 0}}),
        )
        .await;
    assert_eq!(t.result_uri.as_deref(), Some(images[0].as_str()));
}

#[tokio::test]
async fn finetuned_checkpoint_feeds_a_cross_generator_blend() {
    let h = harness(1);
    let (ids, images) = h.sample(21, 3).await;
    let job = h
        .run_job(
            "/v1/finetune",
            json!({"dataset": images, "freeze": {"trainable_layer_set": [7]}, "config": {"steps": 2, "batch_size": 2}}),
        )
        .await;
    assert_eq!(job.state, JobState::Done, "{:?}", job.error);
    let ckpt = job.result_uri.unwrap();
    assert!(ckpt.starts_with("checkpoints/"));
    assert_ne!(ckpt, h.studio.project().manifest().checkpoint);
    let trace = String::from_utf8(h.asset(&job.artifacts["trace"]).await.to_vec()).unwrap();
    assert_eq!(trace.lines().count(), 3);

    // The project's own generator is untouched by finetuning.
    let (_, again) = h.sample(21, 3).await;
    assert_eq!(again, images);

    let zero = h
        .run_job(
            "/v1/blend",
            json!({"style_a": ids[0], "constant_alpha": 0.0, "mode": "cross_generator", "generator_b": ckpt}),
        )
        .await;
    assert_eq!(zero.result_uri.as_deref(), Some(images[0].as_str()));
    let one = h
        .run_job(
            "/v1/blend",
            json!({"style_a": ids[0], "constant_alpha": 1.0, "mode": "cross_generator", "generator_b": ckpt}),
        )
        .await;
    assert_ne!(one.result_uri.as_deref(), Some(images[0].as_str()));
}

#[tokio::test]
async fn persisted_jobs_reproduce_their_results() {
    let h = harness(1);
    let (ids, _) = h.sample(31, 2).await;
    let job = h
        .run_job("/v1/blend", json!({"style_a": ids[0], "style_b": ids[1], "constant_alpha": 0.3, "layer_set": [2, 3]}))
        .await;
    let project = h.studio.project();
    let record: Job =
        serde_json::from_slice(&std::fs::read(project.job_path(job.id)).unwrap()).unwrap();
    assert_eq!(record, job);
    assert_eq!(record.checkpoint_hash, project.checkpoint_hash());
    let req = JobRequest::from_parts(record.kind, record.request.clone()).unwrap();
    let (_, out) = run_inline(project, &req).unwrap();
    assert_eq!(Some(out.result_uri), record.result_uri);

    // Records outlive the queue.
    let reopened = Studio::new(Project::open(project.root()).unwrap(), 1);
    assert_eq!(reopened.job(job.id).unwrap(), job);
}

#[tokio::test]
async fn submission_returns_before_slow_jobs_finish() {
    let h = harness(1);
    let (_, images) = h.sample(41, 2).await;
    let started = std::time::Instant::now();
    let (s, v) = h
        .post(
            "/v1/finetune",
            json!({"dataset": images, "config": {"steps": 40, "batch_size": 4}}),
        )
        .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["state"], "queued");
    let (s, b) = h
        .call(
            "GET",
            &format!("/v1/jobs/{}", v["id"].as_str().unwrap()),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let job: Job = serde_json::from_slice(&b).unwrap();
    assert!(
        !job.state.is_terminal(),
        "{:?} after {:?}",
        job.state,
        started.elapsed()
    );
}

#[test]
fn queue_runs_jobs_in_submission_order() {
    let dir = tempfile::tempdir().unwrap();
    let project = Arc::new(Project::open_or_init(dir.path(), None).unwrap());
    let queue = JobQueue::start(Arc::clone(&project), 1);
    let order = Arc::new(Mutex::new(Vec::new()));
    let mut ids = Vec::new();
    for i in 0..6 {
        let order = Arc::clone(&order);
        let task: Task = Box::new(move |p: &Project| {
            std::thread::sleep(Duration::from_millis(5));
            order.lock().unwrap().push(i);
            if i == 3 {
                return Err(styleweave_studio::StudioError::bad("job three fails"));
            }
            let uri = p
                .assets()
                .put(AssetKind::Traces, format!("{i}").as_bytes())?;
            Ok(JobOutput {
                result_uri: uri.to_string(),
                artifacts: Default::default(),
            })
        });
        ids.push(
            queue
                .submit(Job::new(JobKind::Render, Value::Null, "h"), task)
                .id,
        );
    }
    let jobs: Vec<Job> = ids
        .iter()
        .map(|&id| queue.wait(id, Duration::from_secs(30)).unwrap())
        .collect();
    assert_eq!(*order.lock().unwrap(), vec![0, 1, 2, 3, 4, 5]);
    for (i, j) in jobs.iter().enumerate() {
        assert_eq!(j.state == JobState::Done, j.result_uri.is_some());
        if i == 3 {
            assert_eq!(j.state, JobState::Failed);
            assert!(j.error.as_deref().unwrap().contains("job three fails"));
        } else {
            assert_eq!(j.state, JobState::Done);
        }
    }
}

#[test]
fn tampered_checkpoints_are_rejected_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let project = Project::open_or_init(dir.path(), None).unwrap();
    let path = project.root().join(&project.manifest().checkpoint);
    drop(project);
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let err = Project::open(dir.path()).unwrap_err();
    assert_eq!(err.status(), 409, "{err}");

    let other = tempfile::NamedTempFile::new().unwrap();
    let gen = styleweave::Generator::new(styleweave::GeneratorConfig::desk(5)).unwrap();
    styleweave::checkpoint::save_checkpoint(&gen, other.path()).unwrap();
    let fresh = tempfile::tempdir().unwrap();
    let p = Project::open_or_init(fresh.path(), Some(other.path())).unwrap();
    assert_eq!(p.manifest().config.rng_seed, 5);
    let img = p
        .generator()
        .render(&p.generator().expand_to_stack(&p.generator().mean_style()))
        .unwrap();
    assert!(!encode_image_png(&img).unwrap().is_empty());
    drop(p);
    let mismatch = Project::open_or_init(fresh.path(), Some(&path)).unwrap_err();
    assert_eq!(mismatch.status(), 409);
}
