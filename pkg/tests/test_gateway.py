import threading
import time

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idea23d.assets import ImageAsset, MeshAsset
from idea23d.backends import Gateway, ListSink, ScriptedLMM
from idea23d.backends import wire
from idea23d.backends.gateway import BackendPolicy, ImagePart, LmmRequest, TextPart, count_calls
from idea23d.backends.http import HttpEmbedder, HttpI23D, HttpLMM, HttpMatting, HttpT2I
from idea23d.backends.mock import EMBED_DIM, HueLMM, MockEmbedder, MockI23D, MockT2I, decode_words, words_in
from idea23d.backends.server import BackendServer
from idea23d.errors import (BackendContractViolation, ConfigError, EmptyResponse, PreconditionError,
                            TransportError)
from idea23d.primitives import box
from idea23d.render import RenderConfig, cm2i, silhouette
from conftest import gateway, hue_image
from oracles import disk_mask


def req(text="hi", n_images=0, role="gen"):
    img = hue_image("hat", size=16)
    return LmmRequest("sys", (TextPart(text),) + tuple(ImagePart(img) for _ in range(n_images)), role=role)


# ------------------------------------------------------------------ requests

def test_request_bounds():
    with pytest.raises(PreconditionError):
        LmmRequest("sys", ())
    assert len(req(n_images=16).images) == 16
    with pytest.raises(PreconditionError, match="17 images"):
        req(n_images=17)
    with pytest.raises(PreconditionError):
        LmmRequest("sys", (TextPart("x"),), temperature=-0.1)


def test_policy_bounds_and_backoff():
    for bad in ({"timeout_s": 0}, {"max_retries": -1}, {"parallel_limit": 0}):
        with pytest.raises(PreconditionError):
            BackendPolicy(**bad)
    p = BackendPolicy()
    assert [p.delay(k) for k in (1, 2, 3)] == [2.0, 4.0, 8.0]


# ----------------------------------------------------------------------- LMM

def test_scripted_echo_and_one_record_per_call():
    sink = ListSink()
    gw = gateway(ScriptedLMM({"gen": ["PROMPT: a white rabbit"]}), sink=sink)
    assert gw.lmm_complete(req()) == "PROMPT: a white rabbit"
    assert len(sink) == 1
    rec = sink[0]
    assert rec["role"] == "lmm" and rec["ok"] and rec["retries"] == 0 and rec["attempts"] == 1
    assert rec["response"] == "PROMPT: a white rabbit" and rec["latency_s"] >= 0


def test_scripted_lmm_repeats_last_reply_and_falls_back():
    lmm = ScriptedLMM({"select": ["BEST: 1", "BEST: 2"]}, fallback=ScriptedLMM({"gen": ["1. x"]}))
    gw = gateway(lmm)
    assert [gw.lmm_complete(req(role="select")) for _ in range(3)] == ["BEST: 1", "BEST: 2", "BEST: 2"]
    assert gw.lmm_complete(req(role="gen")) == "1. x"
    assert len(lmm.requests) == 4


def test_empty_completion_is_empty_response():
    sink = ListSink()
    gw = gateway(ScriptedLMM({"gen": ["   "]}), sink=sink)
    with pytest.raises(EmptyResponse):
        gw.lmm_complete(req())
    assert sink[0]["ok"] is False and sink[0]["error"].startswith("EmptyResponse")


def test_output_truncated_to_max_chars():
    gw = gateway(ScriptedLMM({"gen": ["x" * 50]}))
    r = LmmRequest("s", (TextPart("t"),), max_output_chars=10)
    assert gw.lmm_complete(r) == "x" * 10


class Flaky:
    def __init__(self, failures, retryable=True):
        self.failures, self.retryable, self.calls = failures, retryable, 0

    def complete(self, r):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom", retryable=self.retryable)
        return "ok"


def test_retry_backoff_and_exhaustion():
    delays, sink = [], ListSink()
    gw = Gateway(lmm=Flaky(2), sink=sink, sleep=delays.append)
    assert gw.lmm_complete(req()) == "ok"
    assert delays == [2.0, 4.0] and sink[-1]["retries"] == 2
    gw = Gateway(lmm=Flaky(3), sink=sink, sleep=delays.append)
    with pytest.raises(TransportError, match="after 3 attempt"):
        gw.lmm_complete(req())
    assert sink[-1]["ok"] is False and sink[-1]["attempts"] == 3


def test_non_retryable_transport_error_fails_fast():
    backend = Flaky(1, retryable=False)
    gw = Gateway(lmm=backend, sleep=lambda s: None)
    with pytest.raises(TransportError):
        gw.lmm_complete(req())
    assert backend.calls == 1


# -------------------------------------------------------------------- HTTP

def fast_http_gateway(url, sink=None, max_retries=2):
    pol = {r: BackendPolicy(backoff_s=0.001, max_retries=max_retries, timeout_s=10)
           for r in ("lmm", "t2i", "matting", "i23d", "embed")}
    return Gateway(HttpLMM(url), HttpT2I(url), HttpI23D(url), HttpEmbedder(url), HttpMatting(url),
                   policies=pol, sink=sink)


def test_transient_500_then_200_records_one_retry():
    sink = ListSink()
    with BackendServer(lmm=ScriptedLMM({"gen": ["PROMPT: a white rabbit"]}), faults={"lmm": [500]}) as srv:
        gw = fast_http_gateway(srv.url, sink)
        assert gw.lmm_complete(req()) == "PROMPT: a white rabbit"
        assert srv.hits["lmm"] == 2
    assert sink[0]["retries"] == 1 and sink[0]["ok"]


def test_client_error_is_not_retried():
    with BackendServer(lmm=HueLMM(), faults={"lmm": [400]}) as srv:
        with pytest.raises(TransportError, match="HTTP 400"):
            fast_http_gateway(srv.url).lmm_complete(req())
        assert srv.hits["lmm"] == 1


def test_429_is_retried_and_exhaustion_reports_attempts():
    with BackendServer(lmm=HueLMM(), faults={"lmm": [429, 503, 502]}) as srv:
        with pytest.raises(TransportError, match="after 3 attempt"):
            fast_http_gateway(srv.url).lmm_complete(req())
        assert srv.hits["lmm"] == 3


def test_full_mock_stack_over_http_matches_in_process():
    local = gateway()
    t2i, i23d, emb = MockT2I(), MockI23D(), MockEmbedder()
    with BackendServer(HueLMM(), t2i, i23d, emb) as srv:
        gw = fast_http_gateway(srv.url)
        [img] = gw.t2i_generate("a red hat", 1, 3)
        assert img == local.t2i_generate("a red hat", 1, 3)[0].with_id(img.id)
        fg = gw.remove_background(img)
        assert np.array_equal(fg.pixels, local.remove_background(img).pixels)
        mesh = gw.i23d_generate(fg, 5)
        assert mesh.digest() == local.i23d_generate(fg, 5).digest()
        np.testing.assert_allclose(gw.embed_text("hat"), local.embed_text("hat"), atol=1e-12)
        np.testing.assert_allclose(gw.embed_image(img), local.embed_image(img), atol=1e-12)
        np.testing.assert_allclose(gw.embed_mesh(mesh), local.embed_mesh(mesh), atol=1e-12)


def test_http_timeout_and_connection_errors_are_transport_errors():
    def raise_timeout(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = httpx.Client(transport=httpx.MockTransport(raise_timeout))
    with pytest.raises(TransportError, match="timeout"):
        HttpLMM("http://x", client=client).complete(req())
    with pytest.raises(TransportError):
        HttpLMM("http://127.0.0.1:9", timeout_s=1).complete(req())


def test_http_non_json_body_is_contract_violation():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(200, text="<html>")))
    with pytest.raises(BackendContractViolation):
        HttpLMM("http://x", client=client).complete(req())


def test_api_key_from_environment(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"text": "ok"})

    monkeypatch.setenv("TEST_LMM_KEY", "s3cret")
    client = httpx.Client(transport=httpx.MockTransport(handler))
    assert HttpLMM("http://x", api_key_env="TEST_LMM_KEY", client=client).complete(req()) == "ok"
    assert seen["auth"] == "Bearer s3cret"
    monkeypatch.delenv("TEST_LMM_KEY")
    with pytest.raises(ConfigError):
        HttpLMM("http://x", api_key_env="TEST_LMM_KEY")


def test_wire_round_trips(tmp_path):
    r = LmmRequest("sys", (TextPart("a", "l1"), ImagePart(hue_image("owl", size=16), "idea:x")),
                   temperature=0.7, role="select", meta={"n": 3})
    assert wire.decode_request(wire.encode_request(r)) == r
    mesh = box("b")
    assert wire.decode_mesh(wire.encode_mesh(mesh)) == mesh
    from idea23d.meshio import write_obj
    obj = write_obj(mesh, tmp_path / "b.obj").read_bytes()
    import base64
    doc = {"id": "b", "media_type": "model/obj", "data": base64.b64encode(obj).decode()}
    assert wire.decode_mesh(doc).digest() == mesh.digest()
    with pytest.raises(BackendContractViolation):
        wire.decode_image({"media_type": "image/jpeg", "data": ""})


# ----------------------------------------------------------------------- T2I

def test_t2i_determinism_count_and_precondition():
    gw = gateway()
    a, b = gw.t2i_generate("cube", 1, 7), gw.t2i_generate("cube", 1, 7)
    assert a[0].to_png() == b[0].to_png()
    three = gw.t2i_generate("cube", 3, 7)
    assert len(three) == 3 and len({i.digest() for i in three}) == 3
    assert gw.t2i_generate("cube", 1, 8)[0] != a[0]
    for bad in ("", "   "):
        with pytest.raises(PreconditionError):
            gw.t2i_generate(bad, 1, 0)


def test_t2i_paints_prompt_words():
    img = MockT2I(256).render("a frog with a crown", 0)
    assert set(decode_words(img)) == {"frog", "crown"}


class BadT2I:
    def __init__(self, n):
        self.n = n

    def generate(self, prompt, n_images, seed):
        return [hue_image("hat", size=16)] * self.n


def test_t2i_contract_violations():
    with pytest.raises(BackendContractViolation, match="no images"):
        Gateway(t2i=BadT2I(0)).t2i_generate("x", 1, 0)
    with pytest.raises(BackendContractViolation, match="expected 2"):
        Gateway(t2i=BadT2I(1)).t2i_generate("x", 2, 0)


# ---------------------------------------------------------------------- I23D

def white_disk(n=256):
    mask = disk_mask(n, n, n / 2, n / 2, 0.45 * n)
    px = np.zeros((n, n, 4), np.uint8)
    px[mask] = 255
    return ImageAsset("disk", px), mask


def test_white_disk_extrusion_silhouette_iou():
    img, mask = white_disk()
    mesh = Gateway(i23d=MockI23D(("extrusion",))).i23d_generate(img, 0)
    front = silhouette(cm2i(mesh, RenderConfig((256, 256), 0.05))["front"])
    iou = (front & mask).sum() / (front | mask).sum()
    assert iou >= 0.95


@pytest.mark.parametrize("prim", ["sphere", "box", "extrusion"])
def test_i23d_determinism_and_validity(prim):
    gw = Gateway(i23d=MockI23D((prim,)))
    fg = gateway().remove_background(MockT2I(128).render("an owl", 2))
    a, b = gw.i23d_generate(fg, 4), gw.i23d_generate(fg, 4)
    assert a.violations() == [] and a.texture is not None
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.faces, b.faces)


def test_i23d_rejects_transparent_input_and_bad_meshes():
    empty = ImageAsset("e", np.zeros((8, 8, 4), np.uint8))
    with pytest.raises(PreconditionError):
        gateway().i23d_generate(empty, 0)

    class Broken:
        def generate(self, img, seed):
            return MeshAsset("m", np.zeros((3, 3)), [[0, 1, 7]])

    with pytest.raises(BackendContractViolation, match="out of range"):
        Gateway(i23d=Broken()).i23d_generate(white_disk(32)[0], 0)


def test_matting_contract_violation_on_resize():
    class Shrink:
        def remove(self, img):
            return ImageAsset(img.id, img.pixels[:-1])

    with pytest.raises(BackendContractViolation):
        Gateway(matting=Shrink()).remove_background(white_disk(32)[0])


# ---------------------------------------------------------------- embedding

def test_embedding_determinism_and_dimension():
    gw = gateway()
    a, b = gw.embed_text("x"), gw.embed_text("x")
    np.testing.assert_array_equal(a, b)
    assert a.shape == (EMBED_DIM,)


def test_embedding_prefers_matching_image():
    gw = gateway()
    t = gw.embed_text("rabbit")
    rabbit, car = MockT2I().render("a rabbit", 0), MockT2I().render("a car", 0)
    assert t @ gw.embed_image(rabbit) > t @ gw.embed_image(car)


def test_embedding_affinities_override():
    img = hue_image("car", size=32)
    gw = Gateway(embedder=MockEmbedder({img.digest(): "rabbit"}))
    np.testing.assert_allclose(gw.embed_image(img), gw.embed_text("rabbit"))


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=40), st.integers(0, 2 ** 16), st.sampled_from(["text", "image"]))
def test_embedding_norm_is_one(text, seed, kind):
    gw = gateway()
    vec = gw.embed_text(text) if kind == "text" else gw.embed_image(MockT2I(32).render(text, seed))
    assert np.all(np.isfinite(vec))
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


def test_mesh_embedding_is_unit_and_reflects_texture():
    gw = gateway()
    fg = gw.remove_background(MockT2I(128).render("a frog", 1))
    v = gw.embed_mesh(gw.i23d_generate(fg, 0))
    assert abs(np.linalg.norm(v) - 1) <= 1e-6
    assert v @ gw.embed_text("frog") > v @ gw.embed_text("rocket")


class BadEmbedder:
    def __init__(self):
        self.calls = 0

    def embed_text(self, text):
        self.calls += 1
        return {"nan": [np.nan, 1.0], "zero": [0.0, 0.0], "short": [1.0]}.get(text, [1.0, 2.0])


def test_embedding_contract_violations():
    gw = Gateway(embedder=BadEmbedder())
    np.testing.assert_allclose(gw.embed_text("ok"), np.array([1, 2]) / np.sqrt(5))
    for bad in ("nan", "zero", "short"):
        with pytest.raises(BackendContractViolation):
            gw.embed_text(bad)


def test_missing_backend_is_precondition():
    with pytest.raises(PreconditionError, match="no lmm backend"):
        Gateway().lmm_complete(req())


# -------------------------------------------------------------- concurrency

class Slow:
    def __init__(self):
        self.lock = threading.Lock()
        self.active = self.peak = 0

    def complete(self, r):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.01)
        with self.lock:
            self.active -= 1
        return "ok"


@pytest.mark.parametrize("limit", [1, 3])
def test_parallel_limit_never_exceeded(limit):
    backend, sink = Slow(), ListSink()
    gw = Gateway(lmm=backend, policies={"lmm": BackendPolicy(parallel_limit=limit)}, sink=sink)
    threads = [threading.Thread(target=gw.lmm_complete, args=(req(),)) for _ in range(24)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert backend.peak <= limit and gw.peak["lmm"] <= limit
    assert gw.peak["lmm"] == limit  # the limit is actually reached under load
    assert gw.active["lmm"] == 0 and count_calls(sink, "lmm") == 24


def test_with_sink_shares_limits_but_redirects_records():
    a, b = ListSink(), ListSink()
    gw = gateway(sink=a)
    view = gw.with_sink(b)
    view.embed_text("hat")
    assert not a and len(b) == 1
    assert view._sems is gw._sems


def test_hue_lmm_gen_uses_feedback_words():
    r = LmmRequest("s", (TextPart("x"),), role="gen",
                   meta={"n": 2, "idea_text": "a rabbit", "feedback": "missing the hat"})
    lines = HueLMM().complete(r).splitlines()
    assert len(lines) == 2 and all(words_in(l) == ["rabbit", "hat"] for l in lines)
