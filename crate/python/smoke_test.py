"""Smoke test for the attnracer Python bindings.

Builds the extension with cargo (unless ATTNRACER_PY_LIB points at a built
library), imports it, drives the environment with an untrained policy and
checks a checkpoint round trip.

    python3 python/smoke_test.py
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def build_library() -> Path:
    override = os.environ.get("ATTNRACER_PY_LIB")
    if override:
        return Path(override)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "attnracer-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    return ROOT / "target" / "release" / f"libattnracer_py.{suffix}"


def load(lib: Path, workdir: Path):
    # Python only imports extensions whose file name matches the module
    target = workdir / ("attnracer_py.pyd" if sys.platform == "win32" else "attnracer_py.so")
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("attnracer_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ar = load(build_library(), tmp)

        assert abs(ar.slip_angle(0.2) - math.atan(0.5 * math.tan(0.2))) < 1e-15
        assert "dacnn-shallow" in ar.network_presets()

        env = ar.RacingEnv("loop-A", "concrete", seed=3)
        c, h, w = env.observation_shape
        assert (c, h, w) == (3, 48, 64)
        obs = env.reset()
        assert len(obs) == c * h * w and all(0.0 <= v <= 1.0 for v in obs)

        policy = ar.Policy.preset("dacnn-shallow", seed=1)
        assert policy.param_count == 33777
        total, statuses = 0.0, []
        for _ in range(200):
            action, value = policy.act(env.observation())
            assert 0 <= action < env.num_actions and math.isfinite(value)
            reward, done, status = env.step(action)
            total += reward
            if done:
                statuses.append(status)
        alpha = policy.attention(env.observation())
        assert len(alpha) == 35 and abs(sum(alpha) - 1.0) < 1e-12

        ckpt = tmp / "ckpt.dacn"
        policy.save(str(ckpt))
        again = ar.Policy.load(str(ckpt))
        assert again.act(env.observation()) == policy.act(env.observation())
        try:
            ar.Policy.load(str(tmp / "missing.dacn"))
        except OSError as e:
            assert "missing.dacn" in str(e)
        else:
            raise AssertionError("loading a missing checkpoint should fail")

        summary = policy.evaluate("oval", "carpet", episodes=2, seed=0)
        assert summary["episodes"] == 2 and 0.0 <= summary["completion_rate"] <= 1.0

        print(f"ok: 200 steps, reward {total:.2f}, episode ends {statuses}, eval {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
