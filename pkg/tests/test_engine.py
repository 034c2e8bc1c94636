import numpy as np
import pytest

from gbrs.engine import (
    RefinementConfig,
    create_session,
    restore_session,
    snapshot_session,
)
from gbrs.errors import ContractError, InputError, LoadError, ModeError, NumericError
from gbrs.losses import Click
from gbrs.networks import build_network
from gbrs.shapes import generate_dataset


SIZE = 64


@pytest.fixture(scope="module")
def sample():
    return generate_dataset(1, SIZE, seed=77)[0]


def make_session(task, sample, mode="gbrs", kind="bmconv", placements=("enc8",),
                 config=None, lr=None, seed=3):
    net = build_network(task, seed=seed)
    trimap = sample.trimap if task == "matting" else None
    return create_session(net, sample.image, mode=mode, kind=kind,
                          placements=placements, config=config, trimap=trimap, lr=lr)


def state_fingerprint(s):
    parts = [t.data.tobytes() for t in s.trainables]
    parts += [m.tobytes() for m in s.adam.m] + [v.tobytes() for v in s.adam.v]
    parts += [s.pred_current.tobytes(), s.pred_prev.tobytes(),
              str([(c.u, c.v, c.r, c.label) for c in s.clicks]).encode(),
              s.finetune_mask.tobytes(), str(s.adam.t).encode()]
    return b"".join(parts)


# -- creation ---------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["sb", "bmsb", "bmsb_m", "bmconv"])
def test_initial_prediction_equals_bare_network(sample, kind):
    net = build_network("depth", seed=1)
    bare = net.forward(
        __import__("gbrs.tensor", fromlist=["Tensor"]).Tensor(sample.image[None])
    ).data[0]
    s = create_session(net, sample.image, kind=kind, placements=("enc8", "dec4", "dec2"))
    assert np.max(np.abs(s.pred_current - bare)) <= 1e-12


def test_rgb_brs_residual_allocated_zero(sample):
    s = make_session("depth", sample, mode="rgb_brs")
    assert s.image_residual is not None
    assert np.all(s.image_residual.data == 0.0)
    assert s.trainables == [s.image_residual]


def test_identical_sessions_identical_predictions(sample):
    a = make_session("matting", sample)
    b = make_session("matting", sample)
    assert np.array_equal(a.pred_current, b.pred_current)


def test_task_mismatch_raises(sample):
    net = build_network("depth", seed=0)
    with pytest.raises(LoadError):
        create_session(net, sample.image, task="matting")


def test_distmap_on_wrong_task(sample):
    net = build_network("depth", seed=0)
    with pytest.raises(ModeError):
        create_session(net, sample.image, mode="distmap_brs")


def test_tcs_configured(sample):
    cfg = RefinementConfig(tcs_k=16)
    s = make_session("depth", sample, config=cfg)
    subset = s.placements[0].params.channel_subset
    assert len(subset) == 16
    assert subset == sorted(subset)


# -- refinement ---------------------------------------------------------------------


def test_refine_reduces_click_loss(sample):
    s = make_session("depth", sample, lr=0.01)
    click = Click(SIZE // 2, SIZE // 2, 4.0, 2.5)
    report = s.add_click_and_refine(click)
    assert report.iterations_executed == s.config.iterations
    assert report.loss_refine[-1] <= report.loss_refine[0]
    assert s.verify_frozen_weights()


def test_pred_current_matches_forward(sample):
    s = make_session("matting", sample, lr=0.005)
    s.add_click_and_refine(Click(10, 10, 3.0, 0.8))
    refreshed = s._forward().data[0]
    assert np.array_equal(refreshed, s.pred_current)


def test_out_of_bounds_click(sample):
    s = make_session("depth", sample)
    with pytest.raises(InputError):
        s.add_click_and_refine(Click(SIZE + 5, 0, 1.0, 1.0))


def test_bad_label_for_task(sample):
    s = make_session("interactive_seg", sample)
    with pytest.raises(InputError):
        s.add_click_and_refine(Click(5, 5, 1.0, 3))


def test_early_stop_before_first_iteration(sample):
    # bias the head so every logit sits within 0.8 of a +1 label
    net = build_network("interactive_seg", seed=2)
    net.params["head.bias"].data[:] = 1.0
    s = create_session(net, sample.image, kind="sb")
    report = s.add_click_and_refine(Click(8, 8, 2.0, 1))
    assert report.early_stopped
    assert report.iterations_executed == 0


def test_no_early_stop_while_violated(sample):
    net = build_network("interactive_seg", seed=2)
    net.params["head.bias"].data[:] = -5.0  # positive click badly violated
    s = create_session(net, sample.image, kind="sb", lr=1e-4)
    report = s.add_click_and_refine(Click(8, 8, 2.0, 1))
    assert report.iterations_executed >= 1


def test_determinism_replay(sample):
    clicks = [Click(10, 12, 3.0, 2.0), Click(40, 30, 5.0, 1.0), Click(20, 50, 2.0, 3.0)]

    def run():
        s = make_session("depth", sample, lr=0.01)
        for c in clicks:
            s.add_click_and_refine(c)
        return s.pred_current

    assert np.array_equal(run(), run())


# -- undo -----------------------------------------------------------------------------


def test_undo_restores_bitwise(sample):
    s = make_session("matting", sample, lr=0.005)
    before = state_fingerprint(s)
    s.add_click_and_refine(Click(5, 5, 2.0, 0.9))
    assert state_fingerprint(s) != before
    s.undo()
    assert state_fingerprint(s) == before


def test_double_undo(sample):
    s = make_session("depth", sample, lr=0.01)
    initial = state_fingerprint(s)
    s.add_click_and_refine(Click(5, 5, 2.0, 1.0))
    s.add_click_and_refine(Click(20, 20, 2.0, 2.0))
    assert len(s.history) == 2
    s.undo()
    s.undo()
    assert state_fingerprint(s) == initial


def test_undo_fresh_session_errors(sample):
    s = make_session("depth", sample)
    with pytest.raises(ContractError):
        s.undo()


# -- push -----------------------------------------------------------------------------


def test_push_moves_value_up(sample):
    moved = 0
    s = make_session("matting", sample, lr=0.01)
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, v = int(rng.integers(4, SIZE - 4)), int(rng.integers(4, SIZE - 4))
        before = s.pred_current[0, u, v]
        s.push_click(Click(u, v, 2.0, "up"))
        after = s.pred_current[0, u, v]
        if after > before:
            moved += 1
        s.undo()
    assert moved >= 9


def test_push_single_iteration_no_memory(sample):
    s = make_session("depth", sample, lr=0.01)
    report = s.push_click(Click(10, 10, 2.0, "down"))
    assert report.iterations_executed == 1
    assert s.clicks == []  # push mode keeps no click memory
    assert len(s.history) == 1  # but undo still works


def test_push_then_undo_bitwise(sample):
    s = make_session("matting", sample, lr=0.01)
    before = state_fingerprint(s)
    s.push_click(Click(7, 9, 2.0, "up"))
    s.undo()
    assert state_fingerprint(s) == before


def test_push_wrong_task(sample):
    s = make_session("semantic_seg", sample, lr=0.005)
    with pytest.raises(ModeError):
        s.push_click(Click(5, 5, 2.0, "up"))


# -- strokes ---------------------------------------------------------------------------


def test_stroke_overwrite_order(sample):
    s = make_session("semantic_seg", sample, lr=0.005, config=RefinementConfig(iterations=1))
    stroke = [Click(10, 10, 4.0, 1), Click(12, 12, 4.0, 2)]
    s.apply_stroke(stroke)
    assert s.finetune_mask[12, 12] == 2
    assert s.finetune_mask[10, 10] in (1, 2)
    overlap = s.finetune_mask[11, 11]
    assert overlap == 2  # later stroke point wins


def test_stroke_empty_errors(sample):
    s = make_session("semantic_seg", sample)
    with pytest.raises(ContractError):
        s.apply_stroke([])


def test_single_pixel_stroke_equals_click_at_same_lambda(sample):
    cfg = RefinementConfig(iterations=5, lambda_c=1.0)
    a = make_session("semantic_seg", sample, kind="sb", config=cfg, lr=0.01)
    b = make_session("semantic_seg", sample, kind="sb", config=cfg, lr=0.01)
    point = Click(16, 16, 0.5, 4)
    a.apply_stroke([point])
    b.add_click_and_refine(point)
    assert np.array_equal(a.pred_current, b.pred_current)


# -- inertial / numeric safety -------------------------------------------------------------


def test_rgb_brs_inertial_infinite_lambda_pins_input(sample):
    cfg = RefinementConfig(consistency_kind="inertial", lambda_inertial=1e9)
    s = make_session("depth", sample, mode="rgb_brs", config=cfg, lr=1e-5)
    initial = s.pred_current.copy()
    s.add_click_and_refine(Click(30, 30, 4.0, 1.5))
    assert np.max(np.abs(s.pred_current - initial)) < 1e-3


def test_nan_rolls_back_to_preclick(sample):
    s = make_session("interactive_seg", sample, lr=1e200)
    before = state_fingerprint(s)
    u, v = np.unravel_index(np.argmin(s.pred_current[0]), s.pred_current[0].shape)
    with pytest.raises(NumericError):
        s.add_click_and_refine(Click(int(u), int(v), 2.0, 1))
    assert state_fingerprint(s) == before
    assert len(s.history) == 0


# -- snapshots ---------------------------------------------------------------------------


def test_snapshot_restore_then_refine_bitwise(sample):
    net = build_network("depth", seed=9)
    a = create_session(net, sample.image, lr=0.01)
    a.add_click_and_refine(Click(12, 12, 3.0, 2.0))
    blob = snapshot_session(a)
    b = restore_session(blob, net)
    click = Click(40, 40, 3.0, 1.0)
    ra = a.add_click_and_refine(click)
    rb = b.add_click_and_refine(click)
    assert np.array_equal(a.pred_current, b.pred_current)
    assert ra.loss_total == rb.loss_total


def test_snapshot_corrupt_blob(sample):
    net = build_network("depth", seed=9)
    s = create_session(net, sample.image)
    blob = bytearray(snapshot_session(s))
    blob[:4] = b"XXXX"
    with pytest.raises(LoadError):
        restore_session(bytes(blob), net)
    truncated = bytes(snapshot_session(s)[: 40])
    with pytest.raises(LoadError):
        restore_session(truncated, net)


def test_snapshot_wrong_checkpoint(sample):
    net = build_network("depth", seed=9)
    other = build_network("depth", seed=10)
    s = create_session(net, sample.image)
    with pytest.raises(LoadError):
        restore_session(snapshot_session(s), other)


def test_snapshot_size_scales_with_params_not_network(sample):
    net = build_network("depth", seed=9)
    network_bytes = sum(t.data.nbytes for t in net.params.values())
    sb = create_session(net, sample.image, kind="sb")
    bmconv = create_session(net, sample.image, kind="bmconv")
    sb_blob = snapshot_session(sb)
    bm_blob = snapshot_session(bmconv)
    fixed = 3 * (sb.pred_current.nbytes + 1) + sample.image.nbytes + SIZE * SIZE * 8
    assert len(sb_blob) < network_bytes + fixed  # no network payload inside
    sb_params = sum(t.data.nbytes for t in sb.trainables)
    bm_params = sum(t.data.nbytes for t in bmconv.trainables)
    grown = len(bm_blob) - len(sb_blob)
    # params are stored 4x: values, both Adam moments, and the initial values
    assert abs(grown - 4 * (bm_params - sb_params)) < 4096
