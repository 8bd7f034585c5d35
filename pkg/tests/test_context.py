import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rplusx.context import (
    ContextExample,
    EchoNearestBackend,
    GenerationConfig,
    HttpLlmBackend,
    augment,
    format_trajectory,
    generate_trajectory,
    nearest_context_warp,
    normalize_frame,
    parse_prompt,
    parse_trajectory,
    quantize,
    rank_examples,
    serialize_context,
)
from rplusx.descriptors import KeypointSet
from rplusx.errors import (
    DegenerateKeypointsError,
    EmptyContextError,
    GenerationFailedError,
    KMismatchError,
    MalformedOutputError,
    TransportError,
    WrongArityError,
)
from rplusx.hands import HandTrajectory
from rplusx.synthetic import random_transform

NAMES = ("index_tip", "thumb_tip", "index_mcp", "thumb_dip")


def example(rng, k=5, steps=6, scale=0.3):
    kps = KeypointSet(rng.uniform(-scale, scale, size=(k, 3)))
    traj = HandTrajectory.from_array(rng.uniform(-scale, scale, size=(steps, len(NAMES), 3)), NAMES)
    return ContextExample(kps, traj)


class ScriptedBackend:
    name = "scripted"
    deterministic = True

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.replies.pop(0)


def test_quantize_rounds_half_away_from_zero():
    assert quantize([0.0005, -0.0005, 0.0015, -0.0025, 0.0004], 0.001).tolist() == [1, -1, 2, -3, 0]


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.001, 0.0005, 0.01]))
def test_format_parse_round_trip(seed, q):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-2, 2, size=(rng.integers(1, 8), 4, 3))
    back = parse_trajectory(format_trajectory(P, q), 4, q).positions()
    assert np.abs(back - P).max() <= q / 2 + 1e-12


def test_parse_accepts_whitespace_and_reports_trailing(caplog):
    traj = parse_trajectory(" < 1, 2,3 ; -4,5,6 |7,8,9;1,1,1 > trailing", 2, 0.001, names=("a", "b"))
    assert traj.names == ("a", "b") and np.allclose(traj.positions()[0, 1], [-0.004, 0.005, 0.006])
    assert "ignoring" in caplog.text


@pytest.mark.parametrize("raw, offset", [
    ("", 0), ("hello", 0), ("<1,2", 4), ("<1,2,3", 6), ("<1,2,3|", 7), ("<1,2,x>", 5), ("<é1,2,3>", 1),
])
def test_parse_errors_carry_byte_offsets(raw, offset):
    with pytest.raises(MalformedOutputError) as info:
        parse_trajectory(raw, 1)
    assert info.value.offset == offset
    assert "byte offset" in str(info.value)


def test_parse_wrong_arity():
    with pytest.raises(WrongArityError):
        parse_trajectory("<1,2,3;4,5,6|1,2,3>", 2)


def test_prompt_round_trip():
    rng = np.random.default_rng(0)
    exs = [example(rng), example(rng, steps=3)]
    live = KeypointSet(rng.uniform(-0.3, 0.3, size=(5, 3)))
    prompt = serialize_context(exs, live, 0.001)
    assert prompt.text.endswith("out:") and prompt.metadata["lengths"] == [6, 3]
    doc = parse_prompt(prompt.text)
    assert doc["names"] == NAMES and len(doc["examples"]) == 2
    assert np.abs(doc["live"] - live.points).max() <= 0.0005 + 1e-12
    assert np.abs(doc["examples"][1][1] - exs[1].trajectory.positions()).max() <= 0.0005 + 1e-12


def test_serialize_validation():
    rng = np.random.default_rng(1)
    with pytest.raises(EmptyContextError):
        serialize_context([], KeypointSet(np.zeros((5, 3))))
    with pytest.raises(KMismatchError):
        serialize_context([example(rng)], KeypointSet(np.zeros((4, 3))))


def test_normalize_centres_each_set():
    rng = np.random.default_rng(2)
    exs, live, denorm = normalize_frame([example(rng)], KeypointSet(rng.normal(size=(5, 3))))
    assert np.allclose(exs[0].keypoints.points.mean(0), 0) and np.allclose(live.points.mean(0), 0)
    t = HandTrajectory.from_array(np.zeros((1, 1, 3)), ("wrist",))
    assert np.allclose(denorm(t).positions()[0, 0], denorm.offset)


def test_augment():
    rng = np.random.default_rng(3)
    ex = example(rng)
    same = augment(ex, 7)
    assert np.array_equal(same.keypoints.points, ex.keypoints.points)
    moved = augment(ex, 7, 0.1, 0.5)
    again = augment(ex, 7, 0.1, 0.5)
    assert np.array_equal(moved.keypoints.points, again.keypoints.points)
    # one rigid motion for keypoints and trajectory: the warp sends the trajectory back exactly
    warped = nearest_context_warp([moved], ex.keypoints)
    assert np.abs(warped.positions() - ex.trajectory.positions()).max() < 1e-9


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_warp_equivariance(seed):
    rng = np.random.default_rng(seed)
    exs = [example(rng) for _ in range(3)]
    live = KeypointSet(rng.uniform(-0.3, 0.3, size=(5, 3)))
    g = random_transform(rng)
    a = nearest_context_warp(exs, live).positions()
    b = nearest_context_warp(exs, KeypointSet(g.apply(live.points))).positions()
    assert np.abs(g.apply(a) - b).max() < 1e-9


def test_rank_prefers_exact_match_and_lowest_index():
    rng = np.random.default_rng(4)
    ex = example(rng)
    g = random_transform(rng)
    live = KeypointSet(g.apply(ex.keypoints.points))
    best, _, rms = rank_examples([example(rng), ex, ex], live)
    assert best == 1 and rms[1] < 1e-12


def test_rank_degenerate_live():
    rng = np.random.default_rng(5)
    with pytest.raises(DegenerateKeypointsError):
        rank_examples([example(rng)], KeypointSet(np.zeros((5, 3))))


def test_echo_backend_matches_baseline_within_quantum():
    rng = np.random.default_rng(6)
    exs = [example(rng) for _ in range(2)]
    live = KeypointSet(random_transform(rng, 0.2).apply(exs[1].keypoints.points))
    res = generate_trajectory(EchoNearestBackend(), exs, live, GenerationConfig(quantum=0.0001))
    assert not res.fallback_used and res.attempts == 1 and res.backend == "echo-nearest"
    ref = nearest_context_warp(exs, live).positions()
    assert np.abs(res.trajectory.positions() - ref).max() < 0.0005


def test_garbage_backend_falls_back():
    rng = np.random.default_rng(7)
    exs = [example(rng)]
    live = KeypointSet(exs[0].keypoints.points + 0.1)
    backend = ScriptedBackend(["no", "<1,2", "<<<"])
    res = generate_trajectory(backend, exs, live, GenerationConfig(retries=2))
    assert res.fallback_used and res.attempts == 3 and len(backend.prompts) == 3
    assert np.allclose(res.trajectory.positions(), exs[0].trajectory.positions() + 0.1)


def test_retry_then_success_and_truncation():
    rng = np.random.default_rng(8)
    exs = [example(rng)]
    live = KeypointSet(exs[0].keypoints.points)
    good = "<" + "|".join(["0,0,0;1,1,1;2,2,2;3,3,3"] * 5) + ">"
    res = generate_trajectory(ScriptedBackend(["bad", good]), exs, live, GenerationConfig(max_steps=3))
    assert not res.fallback_used and res.attempts == 2 and len(res.trajectory) == 3
    centre = live.points.mean(0)
    assert np.allclose(res.trajectory.positions()[0, 1], centre + 0.001)


def test_fallback_without_usable_baseline():
    ex = example(np.random.default_rng(9))
    flat = ContextExample(KeypointSet(np.zeros((5, 3))), ex.trajectory)
    with pytest.raises(GenerationFailedError):
        generate_trajectory(ScriptedBackend(["x"]), [flat], ex.keypoints, GenerationConfig(retries=0))


def test_context_budget_caps_examples():
    rng = np.random.default_rng(10)
    exs = [example(rng) for _ in range(4)]
    backend = ScriptedBackend(["<0,0,0;0,0,0;0,0,0;0,0,0>"])
    generate_trajectory(backend, exs, exs[0].keypoints, GenerationConfig(context_budget=2))
    assert backend.prompts[0].metadata["Z"] == 2


class FakeResponse:
    def __init__(self, status, body):
        self.status_code, self._body = status, body

    def json(self):
        return self._body


class FakeSession:
    def __init__(self, responses):
        self.responses, self.calls = list(responses), []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append(json)
        return self.responses.pop(0)


def test_http_llm_backend(monkeypatch):
    monkeypatch.delenv("RX_LLM_API_KEY", raising=False)
    monkeypatch.setenv("RX_VLM_API_KEY", "shared")
    rng = np.random.default_rng(11)
    exs = [example(rng)]
    session = FakeSession([FakeResponse(200, {"text": "<0,0,0;0,0,0;0,0,0;0,0,0>"})])
    backend = HttpLlmBackend("http://llm", session=session, model="m")
    assert backend.api_key == "shared"
    res = generate_trajectory(backend, exs, exs[0].keypoints)
    assert res.backend == "llm" and session.calls[0]["temperature"] == 0.0
    backend.session = FakeSession([FakeResponse(502, {})] * 4)
    backend._sleep = lambda s: None
    with pytest.raises(TransportError):
        generate_trajectory(backend, exs, exs[0].keypoints)
