"""Smoke test for the sgbm_py extension.

Builds the extension with cargo if needed, loads it from a scratch
directory and exercises the main entry points.

    python3 python/smoke_test.py
"""

import importlib
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_extension():
    subprocess.run(["cargo", "build", "--release", "-p", "sgbm-py", "--features", "extension-module"], cwd=ROOT, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    for name in ("libsgbm_py.so", "libsgbm_py.dylib", "sgbm_py.dll"):
        lib = target / name
        if lib.exists():
            break
    else:
        sys.exit(f"extension library not found in {target}")
    scratch = Path(tempfile.mkdtemp())
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, scratch / f"sgbm_py{suffix}")
    sys.path.insert(0, str(scratch))
    return importlib.import_module("sgbm_py"), scratch


def main():
    sgbm, scratch = load_extension()

    names = [n for n, _ in sgbm.preset_list()]
    assert "TestA" in names, names

    run = sgbm.Run.preset("TestA", paths=5000, bundles=4, seeds=[1, 2], output_dir=str(scratch / "out"))
    direct, path = run.run_seed(1)
    assert direct.estimator == "direct" and path.estimator == "path"
    assert len(direct.ee) == len(run.dates) == 11
    assert 5.0 < direct.v0 < 6.2, direct.v0
    assert direct.delta[0] < 0 < direct.gamma[0]
    assert direct.ee[-1] == 0.0
    gaps = sgbm.compare(direct.to_csv(), path.to_csv())
    assert 0.0 < gaps["EE"] < 0.2, gaps

    again, _ = run.run_seed(1)
    assert again.to_csv() == direct.to_csv()

    summary = run.run()
    assert "[[aggregates]]" in summary
    assert (scratch / "out" / "seed-2" / "direct.csv").exists()

    cfg = sgbm.Run.from_toml('preset = "TestA"\npaths = 3000\nbundles = 4\nestimator = "direct"\n')
    d, p = cfg.run_seed(7)
    assert p is None and d.seed == 7
    try:
        sgbm.Run.from_toml('preset = "TestA"\nbundels = 4\n')
    except ValueError as e:
        assert "bundels" in str(e), e
    else:
        raise AssertionError("unknown field accepted")

    price = sgbm.bs_price("put", 100.0, 100.0, 1.0, 0.04, 0.2)
    assert abs(sgbm.implied_vol("put", price, 100.0, 100.0, 1.0, 0.04) - 0.2) < 1e-8
    slope = sgbm.projection_slope(1, [2, 4, 8, 16, 32, 64])
    assert abs(slope + 2.0) < 0.3, slope

    print(f"ok: TestA V0 direct {direct.v0:.4f}, path {path.v0:.4f}")


if __name__ == "__main__":
    main()
