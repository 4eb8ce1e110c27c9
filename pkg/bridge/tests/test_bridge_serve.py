import base64
import importlib
import io
import json

import pytest

from signpipe_bridge import cli

# The package re-exports the serve() function under the module's own
# name, so the module object has to come from the import system.
serve_module = importlib.import_module("signpipe_bridge.serve")
from signpipe_bridge.backends import BACKENDS
from signpipe_bridge.config import BridgeConfig
from signpipe_bridge.errors import ProtocolViolation, ToolkitUnavailable
from signpipe_bridge.serve import serve


def inline_payload(pixels: bytes) -> str:
    return base64.b64encode(pixels).decode("ascii")


def request_lines(*messages) -> io.StringIO:
    return io.StringIO("".join(json.dumps(m, separators=(",", ":")) + "\n" for m in messages))


def init_message(keypoints=5, channels=3, backend="echo"):
    return {
        "type": "init",
        "backend": backend,
        "params": {},
        "expected_keypoints": keypoints,
        "channels": channels,
    }


def frame_message(index, *, width=2, height=2, pixels=None, bbox=None):
    if pixels is None:
        pixels = bytes(range(width * height * 3))
    return {
        "type": "frame",
        "index": index,
        "width": width,
        "height": height,
        "bbox": bbox,
        "transport": "inline_rgb",
        "payload": inline_payload(pixels),
    }


def run_mock(*messages):
    stdout = io.StringIO()
    code = serve(request_lines(*messages), stdout, mock=True)
    responses = [json.loads(line) for line in stdout.getvalue().splitlines()]
    return code, responses


class FakeSession:
    def __init__(self, rows_by_index=None):
        self.info = BACKENDS["holistic"]
        self.rows_by_index = rows_by_index or {}
        self.seen = []
        self.closed = False

    def infer(self, frame):
        self.seen.append(frame.index)
        return self.rows_by_index.get(frame.index, [[0.0] * 4 for _ in range(532)])

    def close(self):
        self.closed = True


def test_mock_session_echoes_init_shape_and_answers_everything():
    code, responses = run_mock(
        init_message(keypoints=5, channels=3),
        frame_message(0),
        frame_message(1),
        {"type": "end"},
    )

    assert code == 0
    assert responses[0] == {
        "type": "ready",
        "backend": "echo",
        "num_keypoints": 5,
        "channels": 3,
    }
    assert responses[-1] == {"type": "done"}
    landmarks = [r for r in responses if r["type"] == "landmarks"]
    assert [r["index"] for r in landmarks] == [0, 1]
    for response in landmarks:
        assert len(response["keypoints"]) == 5
        assert all(row == [0.0, 0.0, 0.0] for row in response["keypoints"])


def test_mock_blank_frame_is_no_detection():
    blank = bytes(12)
    code, responses = run_mock(
        init_message(),
        frame_message(0, pixels=blank),
        frame_message(1),
        {"type": "end"},
    )

    assert code == 0
    by_index = {r["index"]: r["type"] for r in responses if "index" in r}
    assert by_index == {0: "no_detection", 1: "landmarks"}


def test_mock_answers_file_ref_with_zeros():
    frame = {
        "type": "frame",
        "index": 0,
        "width": 640,
        "height": 480,
        "bbox": [0.0, 0.0, 320.0, 240.0],
        "transport": "file_ref",
        "payload": {"path": "clips/clip-000.mp4", "frame_index": 7},
    }
    code, responses = run_mock(init_message(keypoints=2, channels=4), frame, {"type": "end"})

    assert code == 0
    assert responses[1]["type"] == "landmarks"
    assert responses[1]["keypoints"] == [[0.0] * 4, [0.0] * 4]


def test_first_message_must_be_init():
    with pytest.raises(ProtocolViolation, match="expected init"):
        serve(request_lines({"type": "frame", "index": 0}), io.StringIO(), mock=True)


def test_eof_before_end_is_a_violation():
    with pytest.raises(ProtocolViolation, match="before end"):
        serve(request_lines(init_message(), frame_message(0)), io.StringIO(), mock=True)


def test_duplicate_index_is_a_violation():
    with pytest.raises(ProtocolViolation, match="duplicate frame index 3"):
        serve(
            request_lines(init_message(), frame_message(3), frame_message(3)),
            io.StringIO(),
            mock=True,
        )


def test_bad_inline_length_is_a_violation():
    bad = frame_message(0)
    bad["payload"] = inline_payload(b"\x00\x01\x02")
    with pytest.raises(ProtocolViolation, match="payload is 3 bytes"):
        serve(request_lines(init_message(), bad), io.StringIO(), mock=True)


def test_real_session_reports_its_own_shape_not_the_requested_one():
    session = FakeSession()
    stdout = io.StringIO()
    stderr = io.StringIO()
    code = serve(
        request_lines(init_message(keypoints=5, channels=3), {"type": "end"}),
        stdout,
        config=BridgeConfig(backend="holistic"),
        session_factory=lambda config: session,
        stderr=stderr,
    )

    assert code == 0
    ready = json.loads(stdout.getvalue().splitlines()[0])
    assert ready["num_keypoints"] == 532
    assert ready["channels"] == 4
    assert ready["backend"] == "holistic"
    assert "init names backend 'echo'" in stderr.getvalue()
    assert session.closed


def test_real_session_answers_through_infer():
    session = FakeSession()
    stdout = io.StringIO()
    code = serve(
        request_lines(
            init_message(keypoints=532, channels=4, backend="holistic"),
            frame_message(0),
            frame_message(4),
            {"type": "end"},
        ),
        stdout,
        config=BridgeConfig(backend="holistic"),
        session_factory=lambda config: session,
        stderr=io.StringIO(),
    )

    assert code == 0
    assert session.seen == [0, 4]
    assert session.closed


def test_session_closed_even_when_the_stream_breaks():
    session = FakeSession()
    with pytest.raises(ProtocolViolation):
        serve(
            request_lines(init_message(backend="holistic"), frame_message(0)),
            io.StringIO(),
            config=BridgeConfig(backend="holistic"),
            session_factory=lambda config: session,
            stderr=io.StringIO(),
        )
    assert session.closed


def test_cli_mock_runs_a_session_over_real_streams(monkeypatch, capsys):
    stdin = request_lines(init_message(), frame_message(0), {"type": "end"})
    monkeypatch.setattr("sys.stdin", stdin)
    code = cli.main(["--mock"])

    assert code == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [m["type"] for m in lines] == ["ready", "landmarks", "done"]


def test_cli_without_backend_or_mock_is_a_usage_error(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", request_lines(init_message()))
    code = cli.main([])

    assert code == 2
    err = capsys.readouterr().err
    assert err.strip().splitlines()[-1].startswith("signpipe-bridge: error:")


def test_cli_reports_toolkit_failure_with_final_error_line(monkeypatch, capsys):
    def explode(config):
        raise ToolkitUnavailable("backend 'holistic' needs mediapipe and numpy")

    monkeypatch.setattr(serve_module, "open_session", explode)
    monkeypatch.setattr("sys.stdin", request_lines(init_message(backend="holistic")))
    code = cli.main(["--backend", "holistic"])

    assert code == 1
    err = capsys.readouterr().err
    assert err.strip().splitlines()[-1] == (
        "signpipe-bridge: error: backend 'holistic' needs mediapipe and numpy"
    )


def test_cli_model_param_parsing(monkeypatch, capsys):
    captured = {}

    def grab(config):
        captured["config"] = config
        raise ToolkitUnavailable("stop here")

    monkeypatch.setattr(serve_module, "open_session", grab)
    monkeypatch.setattr("sys.stdin", request_lines(init_message(backend="topdown_pose")))
    code = cli.main(
        [
            "--backend",
            "topdown_pose",
            "--device",
            "cuda:1",
            "--model-param",
            "model=human",
            "--model-param",
            "score_threshold=0.3",
        ]
    )

    assert code == 1
    config = captured["config"]
    assert config.device == "cuda:1"
    assert config.model_params == {"model": "human", "score_threshold": 0.3}


def test_cli_bad_model_param_is_usage_error(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", request_lines(init_message()))
    code = cli.main(["--backend", "holistic", "--model-param", "not-a-pair"])
    assert code == 2
    assert "key=value" in capsys.readouterr().err
