"""Shared fixtures and the acceptance-criteria reporting hook."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from radar_mrf import FeatureSchema, PointCloud, Roi3D

settings.register_profile(
    "suite", deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

#: Filled by tests/test_acceptance.py; printed one line per criterion at the
#: end of the run so the verdicts are visible in plain pytest output.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        verdict = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        tr.write_line(f"{verdict} - {name}{suffix}")


@pytest.fixture
def acceptance_log():
    """Recorder used by the acceptance tests: log(name, ok, detail)."""
    def record(name: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
        assert ok, f"acceptance criterion failed: {name} {detail}"
    return record


@pytest.fixture
def vod_schema() -> FeatureSchema:
    return FeatureSchema.from_names(["x", "y", "z", "rcs", "v_r", "v_rc", "t"])


@pytest.fixture
def tj4d_schema() -> FeatureSchema:
    return FeatureSchema.from_names(["x", "y", "z", "v_r", "snr"])


@pytest.fixture
def xyz_schema() -> FeatureSchema:
    return FeatureSchema.from_names(["x", "y", "z"])


@pytest.fixture
def small_roi() -> Roi3D:
    return Roi3D(0.0, 6.4, -3.2, 3.2, -2.0, 2.0)


def make_cloud(schema: FeatureSchema, rng: np.random.Generator, n: int,
               cluster_at=None, cluster_n: int = 0, cluster_std: float = 0.3,
               span=((0.0, 30.0), (-15.0, 15.0), (-3.0, 2.0))) -> PointCloud:
    """Random cloud, optionally with a dense Gaussian cluster prepended."""
    cols = []
    for name in schema.names:
        if name == "x":
            cols.append(rng.uniform(*span[0], n))
        elif name == "y":
            cols.append(rng.uniform(*span[1], n))
        elif name == "z":
            cols.append(rng.uniform(*span[2], n))
        elif name in ("v_r", "v_rc"):
            cols.append(rng.normal(0.0, 3.0, n))
        elif name == "t":
            cols.append(np.zeros(n))
        else:
            cols.append(rng.normal(5.0, 2.0, n))
    values = np.column_stack(cols)
    if cluster_n:
        center = np.asarray(cluster_at, dtype=np.float64)
        values[:cluster_n, :3] = center + rng.normal(
            0.0, cluster_std, (cluster_n, 3))
    return PointCloud(schema, values)


@pytest.fixture
def clustered_cloud(vod_schema) -> PointCloud:
    rng = np.random.default_rng(42)
    return make_cloud(vod_schema, rng, 400,
                      cluster_at=(10.0, 0.0, -1.0), cluster_n=80)
