mod common;

use axum::http::{Method, StatusCode};
use common::TestApp;
use serde_json::{json, Value};

fn app() -> (TestApp, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    (TestApp::new(common::config(dir.path())), dir)
}

fn error_of(v: &Value) -> (&str, Option<&str>) {
    let e = &v["error"];
    assert!(
        e["message"].as_str().is_some_and(|m| !m.is_empty()),
        "error without message: {v}"
    );
    (e["kind"].as_str().unwrap(), e["field"].as_str())
}

#[tokio::test]
async fn default_session_reports_parameter_counts() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let v = app
        .get(&format!("/session/{sid}"))
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(v["param_count"], 31);
    assert_eq!(v["bias_count"], 8);
    assert_eq!(v["weight_count"], 23);
    assert_eq!(v["arch"]["layers"], json!([2, 4, 3, 1]));
    assert_eq!(v["arch"]["activation"], "sigmoid");
    assert_eq!(v["data"]["expr"], "sin(x)+sin(y)");
    assert_eq!(v["data"]["n_train"], 256);
    assert_eq!(v["labels"].as_array().unwrap().len(), 31);
    assert_eq!(v["labels"][0], "w0-2");
}

#[tokio::test]
async fn invalid_view_configs_name_the_field() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "zero"})).await;
    let url = format!("/session/{sid}/views/slices");

    let r = app
        .post(&url, &json!({"target_id": tp, "resolution": 80}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(
        error_of(&r.json()),
        ("invalid_argument", Some("resolution"))
    );

    let r = app
        .post(&url, &json!({"target_id": tp, "range": -1.0}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()), ("invalid_argument", Some("range")));

    let r = app
        .post(&url, &json!({"target_id": tp, "resolution": "many"}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()), ("invalid_body", Some("resolution")));

    let r = app
        .post(&url, &json!({"target_id": tp, "colour": 1}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()).0, "invalid_body");

    let r = app
        .post(
            &format!("/session/{sid}/views/plane"),
            &json!({"target_id": tp, "extent": 0.0}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()), ("invalid_argument", Some("extent")));

    let r = app
        .post(
            &format!("/session/{sid}/views/eigen"),
            &json!({"target_id": tp, "k": 0}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()), ("invalid_argument", Some("k")));

    let r = app
        .post(
            &format!("/session/{sid}/views/interpolation"),
            &json!({"theta0_id": tp, "theta1_id": tp, "nodes": 1}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()).0, "invalid_argument");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let (app, _dir) = app();
    let r = app.get("/session/s99").await.expect(StatusCode::NOT_FOUND);
    assert_eq!(error_of(&r.json()).0, "not_found");
    app.get("/jobs/job42").await.expect(StatusCode::NOT_FOUND);
    app.delete("/jobs/job42")
        .await
        .expect(StatusCode::NOT_FOUND);

    let sid = app.session().await;
    app.get(&format!("/session/{sid}/targetpoints/tp7"))
        .await
        .expect(StatusCode::NOT_FOUND);
    app.get(&format!("/session/{sid}/runs/run3"))
        .await
        .expect(StatusCode::NOT_FOUND);
    app.get(&format!("/session/{sid}/focuspoints/fs1"))
        .await
        .expect(StatusCode::NOT_FOUND);
    let r = app
        .post(
            &format!("/session/{sid}/views/plane"),
            &json!({"target_id": "tp9", "seed": 1}),
        )
        .await
        .expect(StatusCode::NOT_FOUND);
    assert_eq!(error_of(&r.json()), ("not_found", Some("target_id")));
    let r = app
        .post(&format!("/session/{sid}/train"), &json!({"start_id": "tp1", "config": {"algorithm": "adam", "learning_rate": 0.01, "epochs": 10}}))
        .await
        .expect(StatusCode::NOT_FOUND);
    assert_eq!(error_of(&r.json()), ("not_found", Some("start_id")));

    app.delete(&format!("/session/{sid}"))
        .await
        .expect(StatusCode::NO_CONTENT);
    app.get(&format!("/session/{sid}"))
        .await
        .expect(StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn identical_view_requests_return_identical_bytes() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "random", "seed": 3})).await;
    let requests = [
        (
            "slices",
            json!({"target_id": tp, "range": 2.0, "resolution": 21}),
        ),
        (
            "plane",
            json!({"target_id": tp, "seed": 11, "resolution": 9}),
        ),
        ("eigen", json!({"target_id": tp, "k": 2})),
        (
            "evslices",
            json!({"target_id": tp, "k": 2, "resolution": 11}),
        ),
        (
            "interpolation",
            json!({"theta0_id": tp, "theta1_id": tp, "nodes": 11}),
        ),
    ];
    for (view, body) in &requests {
        let url = format!("/session/{sid}/views/{view}");
        let first = app.post(&url, body).await.expect(StatusCode::OK);
        assert_eq!(first.header("x-view-cache"), Some("miss"), "{view}");
        let second = app.post(&url, body).await.expect(StatusCode::OK);
        assert_eq!(second.header("x-view-cache"), Some("hit"), "{view}");
        assert_eq!(first.body, second.body, "{view}");
        assert_eq!(first.json()["view"], *view);
    }

    // A mutation invalidates the cache; recomputation gives the same bytes.
    let url = format!("/session/{sid}/views/slices");
    let before = app.post(&url, &requests[0].1).await.body;
    app.target(&sid, json!({"kind": "zero"})).await;
    let after = app.post(&url, &requests[0].1).await.expect(StatusCode::OK);
    assert_eq!(after.header("x-view-cache"), Some("miss"));
    assert_eq!(before, after.body);
}

#[tokio::test]
async fn unseeded_plane_reports_its_seed() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "random", "seed": 1})).await;
    let url = format!("/session/{sid}/views/plane");
    let a = app
        .post(&url, &json!({"target_id": tp, "resolution": 7}))
        .await
        .expect(StatusCode::OK)
        .json();
    let seed = a["seed"].as_u64().unwrap();
    let b = app
        .post(
            &url,
            &json!({"target_id": tp, "resolution": 7, "seed": seed}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(a["losses"], b["losses"]);
    assert_eq!(a["delta"], b["delta"]);
    let c = &a["losses"][3][3];
    assert_eq!(c, &a["origin_loss"]);
}

#[tokio::test]
async fn idempotency_key_replays_and_rejects_reuse() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let url = format!("/session/{sid}/targetpoints");
    let body = json!({"kind": "random", "seed": 5});
    let key = [("idempotency-key", "abc-1")];
    let first = app
        .send(Method::POST, &url, Some(&body), &key)
        .await
        .expect(StatusCode::CREATED);
    let again = app
        .send(Method::POST, &url, Some(&body), &key)
        .await
        .expect(StatusCode::CREATED);
    assert_eq!(again.header("idempotent-replayed"), Some("true"));
    assert_eq!(first.body, again.body);
    let points = app.get(&url).await.expect(StatusCode::OK).json();
    assert_eq!(points["target_points"].as_array().unwrap().len(), 1);

    let other = json!({"kind": "zero"});
    let r = app
        .send(Method::POST, &url, Some(&other), &key)
        .await
        .expect(StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_of(&r.json()).0, "idempotency_mismatch");

    // Without a key the same request creates a second point.
    app.post(&url, &body).await.expect(StatusCode::CREATED);
    let points = app.get(&url).await.expect(StatusCode::OK).json();
    assert_eq!(points["target_points"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn training_job_creates_checkpoint_points() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let start = app
        .target(&sid, json!({"kind": "random", "seed": 2, "range": 1.0}))
        .await;
    let r = app
        .post(
            &format!("/session/{sid}/train"),
            &json!({"start_id": start, "config": {"algorithm": "adam", "learning_rate": 0.01, "epochs": 2000, "checkpoint_count": 5}}),
        )
        .await
        .expect(StatusCode::ACCEPTED)
        .json();
    let (run_id, job_id) = (r["run_id"].as_str().unwrap(), r["job_id"].as_str().unwrap());
    let job = app.wait_job(job_id).await;
    assert_eq!(job["status"], "succeeded", "{job}");
    assert_eq!(job["kind"], "train");
    assert_eq!(job["progress"]["done"], 2000);

    let run = app
        .get(&format!("/session/{sid}/runs/{run_id}"))
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(run["state"], "finished");
    assert_eq!(run["loss_curve"].as_array().unwrap().len(), 2000);
    let outcome = &run["outcome"];
    assert_eq!(
        outcome["checkpoint_epochs"],
        json!([0, 500, 1000, 1500, 2000])
    );
    let ids = outcome["checkpoint_ids"].as_array().unwrap();
    assert_eq!(ids.len(), 5);
    assert!(outcome["final_loss"].as_f64().unwrap() < outcome["initial_loss"].as_f64().unwrap());

    let first = app
        .get(&format!(
            "/session/{sid}/targetpoints/{}",
            ids[0].as_str().unwrap()
        ))
        .await
        .expect(StatusCode::OK)
        .json();
    let origin = app
        .get(&format!("/session/{sid}/targetpoints/{start}"))
        .await
        .json();
    assert_eq!(first["weights"], origin["weights"]);
    assert_eq!(
        first["provenance"],
        json!({"kind": "training", "run_id": run_id, "epoch": 0})
    );
    let last = app
        .get(&format!(
            "/session/{sid}/targetpoints/{}",
            ids[4].as_str().unwrap()
        ))
        .await
        .json();
    assert_eq!(last["train_loss"], outcome["final_loss"]);

    let result = app
        .get(&format!("/jobs/{job_id}/result"))
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(result["id"], run_id);
}

#[tokio::test]
async fn training_job_can_be_cancelled() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let start = app.target(&sid, json!({"kind": "zero"})).await;
    let r = app
        .post(
            &format!("/session/{sid}/train"),
            &json!({"start_id": start, "config": {"algorithm": "gd", "learning_rate": 0.001, "epochs": 50_000_000}}),
        )
        .await
        .expect(StatusCode::ACCEPTED)
        .json();
    let job_id = r["job_id"].as_str().unwrap();
    let c = app
        .delete(&format!("/jobs/{job_id}"))
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(c["id"], job_id);
    let job = app.wait_job(job_id).await;
    assert_eq!(job["status"], "cancelled", "{job}");
    let run = app
        .get(&format!(
            "/session/{sid}/runs/{}",
            r["run_id"].as_str().unwrap()
        ))
        .await
        .json();
    let outcome = &run["outcome"];
    assert!(
        outcome.is_null() || outcome["termination"] == "cancelled",
        "{run}"
    );
}

#[tokio::test]
async fn invalid_training_config_is_rejected_up_front() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let start = app.target(&sid, json!({"kind": "zero"})).await;
    let url = format!("/session/{sid}/train");
    let r = app
        .post(&url, &json!({"start_id": start, "config": {"algorithm": "sgd", "learning_rate": 0.1, "epochs": 5, "batch_size": 0}}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(
        error_of(&r.json()),
        ("invalid_argument", Some("batch_size"))
    );
    let r = app
        .post(&url, &json!({"start_id": start, "config": {"algorithm": "adam", "learning_rate": -1.0, "epochs": 5}}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(
        error_of(&r.json()),
        ("invalid_argument", Some("learning_rate"))
    );
    let r = app
        .post(&url, &json!({"start_id": start, "config": {"algorithm": "newton", "learning_rate": 1.0, "epochs": 5}}))
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(
        error_of(&r.json()),
        ("invalid_body", Some("config.algorithm"))
    );
}

#[tokio::test]
async fn background_view_matches_inline_view() {
    let (app, _dir) = app();
    let mut bodies = Vec::new();
    for background in [true, false] {
        let sid = app.session().await;
        let tp = app.target(&sid, json!({"kind": "zero"})).await;
        let fs = app
            .post(
                &format!("/session/{sid}/focuspoints"),
                &json!({"target_id": tp, "count": 8}),
            )
            .await
            .expect(StatusCode::CREATED)
            .json();
        let body = json!({
            "target_id": tp, "focus_set_id": fs["id"], "resolution": 11, "background": background
        });
        let r = app
            .post(&format!("/session/{sid}/views/slices"), &body)
            .await;
        if background {
            let r = r.expect(StatusCode::ACCEPTED).json();
            let job = app.wait_job(r["job_id"].as_str().unwrap()).await;
            assert_eq!(job["status"], "succeeded", "{job}");
            assert_eq!(job["result"]["view"], "slices");
            let res = app
                .get(&format!("/jobs/{}/result", r["job_id"].as_str().unwrap()))
                .await;
            bodies.push(res.expect(StatusCode::OK).body);
        } else {
            bodies.push(r.expect(StatusCode::OK).body);
        }
    }
    assert_eq!(bodies[0], bodies[1]);
    let v: Value = serde_json::from_slice(&bodies[0]).unwrap();
    let charts = v["charts"].as_array().unwrap();
    assert_eq!(charts.len(), 31);
    assert_eq!(charts[0]["slices"].as_array().unwrap().len(), 9);
    assert_eq!(charts[30]["name"], "b9");
    assert_eq!(charts[30]["label"]["kind"], "bias");
}

#[tokio::test]
async fn focus_points_include_a_projection() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "zero"})).await;
    let v = app
        .post(
            &format!("/session/{sid}/focuspoints"),
            &json!({"target_id": tp, "count": 16, "range": 5.0, "dims": [3, 7]}),
        )
        .await
        .expect(StatusCode::CREATED)
        .json();
    let points = v["points"].as_array().unwrap();
    let projection = v["projection"].as_array().unwrap();
    assert_eq!(points.len(), 16);
    assert_eq!(v["config"]["algorithm"], "sobol");
    for (p, xy) in points.iter().zip(projection) {
        assert_eq!(p["weights"][3], xy[0]);
        assert_eq!(p["weights"][7], xy[1]);
        assert!(p["weights"]
            .as_array()
            .unwrap()
            .iter()
            .all(|w| w.as_f64().unwrap().abs() <= 5.0));
    }
    // The first Sobol point is the unit-cube origin, i.e. the lower corner.
    assert_eq!(projection[0], json!([-5.0, -5.0]));

    let r = app
        .post(
            &format!("/session/{sid}/focuspoints"),
            &json!({"target_id": tp, "dims": [0, 31]}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()), ("invalid_argument", Some("dims")));
    let got = app
        .get(&format!(
            "/session/{sid}/focuspoints/{}",
            v["id"].as_str().unwrap()
        ))
        .await
        .json();
    assert_eq!(got["points"], v["points"]);
}

#[tokio::test]
async fn export_then_import_is_lossless() {
    let (app, dir) = app();
    let sid = app.session().await;
    let a = app
        .target(&sid, json!({"kind": "random", "seed": 8, "range": 3.0}))
        .await;
    let b = app
        .target(&sid, json!({"kind": "zero", "name": "origin"}))
        .await;
    let r = app
        .post(
            &format!("/session/{sid}/export"),
            &json!({"file": "pair", "target_ids": [a, b]}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(r["count"], 2);
    assert!(dir.path().join("pair.ftp.json").exists());

    let other = app.session().await;
    let imported = app
        .post(
            &format!("/session/{other}/import"),
            &json!({"file": "pair.ftp.json"}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    let imported = imported["imported"].as_array().unwrap();
    assert_eq!(imported.len(), 2);
    for (src, got) in [a, b].iter().zip(imported) {
        let orig = app
            .get(&format!("/session/{sid}/targetpoints/{src}"))
            .await
            .json();
        assert_eq!(orig["weights"], got["weights"]);
        assert_eq!(orig["train_loss"], got["train_loss"]);
        assert_eq!(got["provenance"]["kind"], "loaded");
        assert_eq!(got["provenance"]["original"], orig["provenance"]);
    }
    assert_eq!(imported[1]["name"], "origin");

    for bad in ["../escape", "", ".hidden", "a/b"] {
        let r = app
            .post(&format!("/session/{sid}/export"), &json!({"file": bad}))
            .await
            .expect(StatusCode::BAD_REQUEST);
        assert_eq!(error_of(&r.json()), ("invalid_argument", Some("file")));
    }
    app.post(
        &format!("/session/{sid}/import"),
        &json!({"file": "missing"}),
    )
    .await
    .expect(StatusCode::NOT_FOUND);

    app.put(
        &format!("/session/{other}/arch"),
        &json!({"layers": [2, 3, 1]}),
    )
    .await
    .expect(StatusCode::OK);
    let r = app
        .post(
            &format!("/session/{other}/import"),
            &json!({"file": "pair"}),
        )
        .await
        .expect(StatusCode::CONFLICT);
    assert_eq!(error_of(&r.json()).0, "incompatible_architecture");
}

#[tokio::test]
async fn changing_the_architecture_clears_points() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "zero"})).await;
    let v = app
        .put(
            &format!("/session/{sid}/arch"),
            &json!({"layers": [2, 5, 1], "activation": "tanh"}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(v["param_count"], 21);
    assert_eq!(v["arch"]["activation"], "tanh");
    app.get(&format!("/session/{sid}/targetpoints/{tp}"))
        .await
        .expect(StatusCode::NOT_FOUND);

    let r = app
        .put(
            &format!("/session/{sid}/arch"),
            &json!({"layers": [2, 0, 1]}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&r.json()).0, "invalid_argument");
}

#[tokio::test]
async fn data_endpoint_reports_grid_and_syntax_errors() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let v = app
        .get(&format!("/session/{sid}/data"))
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(v["target_grid"]["resolution"], 32);
    assert_eq!(
        v["target_grid"]["values"].as_array().unwrap().len(),
        32 * 32
    );
    assert_eq!(v["target_grid"]["values"][0], 0.0);

    let r = app
        .put(
            &format!("/session/{sid}/data"),
            &json!({"expr": "sin(x) + * y"}),
        )
        .await
        .expect(StatusCode::BAD_REQUEST)
        .json();
    assert_eq!(error_of(&r), ("syntax", Some("expr")));
    assert!(r["error"]["details"]["position"].is_u64());

    let tp = app.target(&sid, json!({"kind": "zero"})).await;
    let v = app
        .put(
            &format!("/session/{sid}/data"),
            &json!({"expr": "x*y", "range": [0.0, 1.0]}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    assert_eq!(v["data"]["expr"], "x*y");
    let p = app
        .get(&format!("/session/{sid}/targetpoints/{tp}"))
        .await
        .json();
    let loss = p["train_loss"].as_f64().unwrap();
    assert!(
        loss > 0.0 && loss < 0.5,
        "zero predictor on x*y over the unit square: {loss}"
    );
}

#[tokio::test]
async fn prediction_grid_defaults_to_32() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "zero"})).await;
    let v = app
        .get(&format!("/session/{sid}/prediction/{tp}"))
        .await
        .expect(StatusCode::OK)
        .json();
    let values = v["grid"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 32 * 32);
    assert!(values.iter().all(|x| x == &json!(0.0)));
    let v = app
        .get(&format!("/session/{sid}/prediction/{tp}?resolution=5"))
        .await
        .json();
    assert_eq!(v["grid"]["values"].as_array().unwrap().len(), 25);
}

#[tokio::test]
async fn evslices_pass_through_the_origin() {
    let (app, _dir) = app();
    let sid = app.session().await;
    let tp = app.target(&sid, json!({"kind": "random", "seed": 4})).await;
    let v = app
        .post(
            &format!("/session/{sid}/views/evslices"),
            &json!({"target_id": tp, "k": 3, "resolution": 21}),
        )
        .await
        .expect(StatusCode::OK)
        .json();
    let point = app
        .get(&format!("/session/{sid}/targetpoints/{tp}"))
        .await
        .json();
    let slices = v["slices"].as_array().unwrap();
    assert_eq!(slices.len(), 3);
    for s in slices {
        assert_eq!(s["losses"][10], point["train_loss"]);
        assert_eq!(s["offsets"][10], 0.0);
    }
    let ev = v["eigenvalues"].as_array().unwrap();
    assert!(ev[0].as_f64().unwrap().abs() >= ev[2].as_f64().unwrap().abs());
}
