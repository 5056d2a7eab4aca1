"""Smoke test for the beampinn_py extension.

Build first:
    cargo build --release -p beampinn-py --features extension-module
then run `python3 python/smoke_test.py`. $BEAMPINN_PY_LIB names the shared
library to load; without it an installed `beampinn_py` (e.g. via maturin) is
used if present, otherwise the library under target/.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_from(lib):
    dst = Path(tempfile.mkdtemp()) / "beampinn_py.so"
    shutil.copy(lib, dst)
    spec = importlib.util.spec_from_file_location("beampinn_py", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def load():
    if os.environ.get("BEAMPINN_PY_LIB"):
        return load_from(os.environ["BEAMPINN_PY_LIB"])
    try:
        import beampinn_py

        return beampinn_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libbeampinn_py.so"
        if lib.exists():
            return load_from(lib)
    sys.exit("beampinn_py not found; build it with "
             "`cargo build --release -p beampinn-py --features extension-module`")


def main():
    bp = load()

    w = bp.causal_weights([0.1, 0.2, 0.3], 5.0)
    assert abs(w[1] - math.exp(-0.5)) < 1e-12 and abs(w[2] - math.exp(-1.5)) < 1e-12, w

    u = [math.sin(0.01 * i) + 0.5 for i in range(500)]
    assert bp.relative_l2_percent(u, u) == 0.0
    assert bp.relative_l2_percent([0.0] * len(u), u) == 100.0

    for pid in ("eb_base", "eb_variant", "timoshenko"):
        prob = bp.Problem(pid)
        pts = bp.halton_points(prob.domain, 200)
        assert max(prob.max_exact_residuals(pts)) < 1e-8, pid
    timo = bp.Problem("timoshenko")
    assert timo.channels == ["u", "theta"]

    net = bp.Checkpoint.xavier([2, 8, 8, 1], seed=3)
    assert bp.derivative_check(net.widths, net.params, [(0.3, 0.2), (1.1, 0.7)]) < 1e-6

    cfg = bp.RunConfig('{"problem": {"id": "eb_base"}}', [
        "epochs=5", "arch.hidden=[8,8]", "causal.n_t=4",
        "counts.n_int=32", "counts.n_i=8", "counts.n_b=8", "eval.n_x=50",
    ])
    ckpt, rec = bp.train(cfg)
    assert rec.epochs == 5 and len(rec.losses) == 5
    assert rec.final_loss <= rec.losses[0]
    assert rec.final_r is not None and len(rec.final_r) == 1

    again, _ = bp.train(cfg)
    assert again.to_bytes() == ckpt.to_bytes(), "runs are not deterministic"

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "parent.bin")
        ckpt.save(path)
        back = bp.Checkpoint.load(path)
        assert back.to_bytes() == ckpt.to_bytes()
        assert bp.Checkpoint.from_bytes(ckpt.to_bytes()).params == ckpt.params

    child, crec = bp.transfer_train(ckpt, cfg)
    assert abs(crec.losses[0] - rec.final_loss) <= 1e-9 * max(1.0, rec.final_loss)
    assert crec.parent == ckpt.id()
    _, ctrl = bp.control_train(ckpt, cfg)
    assert ctrl.parent is None

    r = ckpt.relative_error(cfg.problem(), 1.0, 100)
    assert r is not None and r[0] > 0.0
    assert ckpt.field_csv(cfg.problem(), 5, 3).startswith("x,t,u_pred,u_exact,abs_err\n")

    try:
        bp.RunConfig('{"epochz": 3}')
    except bp.BeamPinnError as e:
        assert str(e).startswith("config error:"), e
    else:
        raise AssertionError("unknown key accepted")

    print(f"beampinn_py smoke test passed (child R = {crec.final_r[0]:.3f}%)")


if __name__ == "__main__":
    main()
