import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gbrs.checkpoint import save_checkpoint
from gbrs.engine import RefinementConfig, create_session
from gbrs.losses import Click
from gbrs.networks import build_network
from gbrs.server import create_app, decode_image, encode_prediction
from gbrs.shapes import generate_dataset

SIZE = 32
FAST = {"iterations": 2}


@pytest.fixture(scope="module")
def sample():
    return generate_dataset(1, 64, seed=5)[0]


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    ckpt_dir = tmp_path_factory.mktemp("ckpts")
    for task in ("interactive_seg", "semantic_seg", "matting", "depth"):
        save_checkpoint(str(ckpt_dir / f"{task}.gbrs"), build_network(task, seed=4))
    app = create_app(str(ckpt_dir), session_ttl=3600.0)
    return TestClient(app)


def image_b64(sample):
    arr = (sample.image[:, :SIZE, :SIZE] * 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def make_session(client, sample, task="interactive_seg", **kw):
    body = {"image": image_b64(sample), "task": task, "config": FAST, **kw}
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 200, resp.text
    return resp.json()


def test_create_returns_prediction(client, sample):
    data = make_session(client, sample)
    assert data["prediction"]["format"] == "png_palette"
    png = base64.b64decode(data["prediction"]["data"])
    img = Image.open(io.BytesIO(png))
    assert img.size == (SIZE, SIZE)


def test_click_undo_info_flow(client, sample):
    sid = make_session(client, sample)["session_id"]
    r = client.post(f"/sessions/{sid}/click", json={"u": 4, "v": 5, "r": 2.0, "label": 1})
    assert r.status_code == 200
    assert "report" in r.json()
    r = client.post(f"/sessions/{sid}/undo")
    assert r.status_code == 200
    info = client.get(f"/sessions/{sid}").json()
    assert info["clicks"] == []
    assert info["reports"] == []


def test_click_out_of_bounds_400(client, sample):
    sid = make_session(client, sample)["session_id"]
    r = client.post(f"/sessions/{sid}/click", json={"u": 500, "v": 0, "r": 2.0, "label": 1})
    assert r.status_code == 400


def test_push_on_semantic_422(client, sample):
    sid = make_session(client, sample, task="semantic_seg")["session_id"]
    r = client.post(f"/sessions/{sid}/push", json={"u": 3, "v": 3, "direction": "up"})
    assert r.status_code == 422


def test_unknown_session_404(client):
    assert client.get("/sessions/nope").status_code == 404
    assert client.post("/sessions/nope/undo").status_code == 404


def test_undo_fresh_session_400(client, sample):
    sid = make_session(client, sample, task="depth")["session_id"]
    assert client.post(f"/sessions/{sid}/undo").status_code == 400


def test_malformed_create_400(client):
    assert client.post("/sessions", json={"task": "depth"}).status_code == 400
    assert client.post("/sessions", json={"task": "bogus", "image": "aGk="}).status_code == 400


def test_delete(client, sample):
    sid = make_session(client, sample, task="matting")["session_id"]
    assert client.delete(f"/sessions/{sid}").status_code == 200
    assert client.get(f"/sessions/{sid}").status_code == 404


def test_stroke_flow(client, sample):
    sid = make_session(client, sample, task="semantic_seg")["session_id"]
    r = client.post(
        f"/sessions/{sid}/stroke",
        json={"points": [{"u": 5, "v": 5, "r": 2.0, "class": 2},
                          {"u": 7, "v": 7, "r": 2.0, "class": 2}]},
    )
    assert r.status_code == 200


def test_regression_prediction_dequantizes(client, sample):
    data = make_session(client, sample, task="depth")
    pred = data["prediction"]
    assert pred["format"] == "png_u16"
    png = Image.open(io.BytesIO(base64.b64decode(pred["data"])))
    arr = np.asarray(png, dtype=np.float64)
    restored = pred["min"] + arr / 65535.0 * (pred["max"] - pred["min"])
    assert restored.shape == (SIZE, SIZE)
    assert pred["max"] >= restored.max() >= restored.min() >= pred["min"]


def test_server_matches_direct_engine(client, sample):
    """The service must produce exactly the library's predictions."""
    data = make_session(client, sample, task="depth", kind="sb")
    sid = data["session_id"]
    clicks = [(4, 4, 2.0, 2.0), (10, 12, 3.0, 1.5)]
    for u, v, r, label in clicks:
        resp = client.post(f"/sessions/{sid}/click",
                           json={"u": u, "v": v, "r": r, "label": label})
        assert resp.status_code == 200
    final = resp.json()["prediction"]

    net = build_network("depth", seed=4)
    image = decode_image(image_b64(sample))
    session = create_session(net, image, kind="sb",
                             config=RefinementConfig(**FAST))
    for u, v, r, label in clicks:
        session.add_click_and_refine(Click(u, v, r, label))
    expected = encode_prediction("depth", session.pred_current)
    assert expected == final
