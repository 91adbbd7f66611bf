from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request

import pytest

from wildlearn.annotate import SessionStore
from wildlearn.data import write_dataset
from wildlearn.selection import SelectionResult
from wildlearn.service import make_server


@pytest.fixture
def live(tmp_path, wild, bundle):
    store = SessionStore(tmp_path / "sessions")
    server = make_server("127.0.0.1:0", store)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    base = f"http://{host}:{port}"
    write_dataset(wild, tmp_path / "wild.wds")
    write_dataset(bundle["id_train"], tmp_path / "id_train.wds")
    yield base, store, tmp_path
    server.shutdown()


def request(method, url, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read().decode())


def create_session(base, tmp_path, k=5, session_id="s1"):
    sel = SelectionResult(tuple(range(k)), "top_k", k)
    return request("POST", f"{base}/api/sessions", {
        "selection": sel.to_json_dict(),
        "wild_path": str(tmp_path / "wild.wds"),
        "id_train_path": str(tmp_path / "id_train.wds"),
        "session_id": session_id,
    })


def test_unknown_session_is_404_with_json_body(live):
    base, _, _ = live
    status, body = request("GET", f"{base}/api/sessions/nope")
    assert status == 404
    assert "error" in body


def test_create_submit_get_export(live):
    base, _, tmp_path = live
    status, created = create_session(base, tmp_path)
    assert status == 201
    assert created["status"] == "open" and created["total"] == 5
    assert all("x" in item and "features" in item for item in created["items"])

    status, _ = request("POST", f"{base}/api/sessions/s1/labels",
                        [{"sample_id": 0, "label": 2}, {"sample_id": 1, "label": "BOTTOM"}])
    assert status == 200
    status, state = request("GET", f"{base}/api/sessions/s1")
    assert state["labeled"] == 2
    assert state["received"]["0"] == 2 and state["received"]["1"] == "BOTTOM"

    for i in (2, 3, 4):
        request("POST", f"{base}/api/sessions/s1/labels", [{"sample_id": i, "label": 0}])
    status, listing = request("GET", f"{base}/api/sessions")
    assert status == 200 and listing[0]["status"] == "complete"

    status, export = request("GET", f"{base}/api/sessions/s1/export")
    assert status == 200
    assert len(export["class_pool"]["features"]) == 4
    assert len(export["semantic_pool"]["features"]) == 1


def test_export_before_completion_needs_partial(live):
    base, _, tmp_path = live
    create_session(base, tmp_path, session_id="s2")
    status, body = request("GET", f"{base}/api/sessions/s2/export")
    assert status == 409
    status, body = request("GET", f"{base}/api/sessions/s2/export?partial=1")
    assert status == 200


def test_invalid_labels_rejected_with_item_list(live):
    base, _, tmp_path = live
    create_session(base, tmp_path, session_id="s3")
    status, body = request("POST", f"{base}/api/sessions/s3/labels",
                           [{"sample_id": 0, "label": 42}])
    assert status == 400
    assert body["items"][0]["sample_id"] == 0


def test_malformed_body_is_400(live):
    base, _, tmp_path = live
    req = urllib.request.Request(f"{base}/api/sessions", data=b"{nope", method="POST",
                                 headers={"Content-Type": "application/json"})
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req)
    assert err.value.code == 400


def test_concurrent_disjoint_submissions_both_persist(live):
    base, store, tmp_path = live
    create_session(base, tmp_path, k=40, session_id="s4")
    barrier = threading.Barrier(2)
    errors = []

    def submit(ids, label):
        barrier.wait()
        for i in ids:
            status, _ = request("POST", f"{base}/api/sessions/s4/labels",
                                [{"sample_id": i, "label": label}])
            if status != 200:
                errors.append(status)

    t1 = threading.Thread(target=submit, args=(range(0, 20), 0))
    t2 = threading.Thread(target=submit, args=(range(20, 40), "BOTTOM"))
    t1.start(); t2.start(); t1.join(); t2.join()
    assert not errors
    session = store.get("s4")
    assert len(session.received) == 40
    assert session.status == "complete"


def test_port_in_use_raises(live, tmp_path):
    base, _, _ = live
    port = int(base.rsplit(":", 1)[1])
    with pytest.raises(OSError):
        make_server(f"127.0.0.1:{port}", SessionStore(tmp_path / "other"))
