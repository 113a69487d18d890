import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

sys.path.insert(0, str(Path(__file__).parent))

from softspot.dataio import SyntheticConfig, generate_synthetic  # noqa: E402

SMALL_SYNTH = {
    "videos": 4,
    "frames": 90,
    "subjects": 2,
    "events": {"macro": 1, "micro": 1},
    "length": {"macro": (20, 24), "micro": (8, 10)},
}


def textured(size=64, seed=0, sigma=1.5):
    """Smooth random texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((size, size)), sigma)
    return (img - img.min()) / (img.max() - img.min())


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth_small")
    generate_synthetic(SyntheticConfig(seed=3, **SMALL_SYNTH), root)
    return root


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props:
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                             props.get("title", rep.nodeid), props.get("measured", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, title, measured in sorted(rows):
        line = f"[{status}] {num:2d}. {title}"
        if measured:
            line += f"  ({measured})"
        terminalreporter.write_line(line)
