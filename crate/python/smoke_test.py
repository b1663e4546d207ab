"""Smoke test for the impdelay_py extension.

Build it first:

    cargo build -p impdelay-python --features extension-module --release

then run `python3 python/smoke_test.py`. Set IMPDELAY_LIB to load a
different build of the shared library.
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    candidates = [os.environ.get("IMPDELAY_LIB")] + [
        str(ROOT / "target" / profile / "libimpdelay_py.so") for profile in ("release", "debug")
    ]
    for path in filter(None, candidates):
        if Path(path).exists():
            loader = importlib.machinery.ExtensionFileLoader("impdelay_py", path)
            spec = importlib.util.spec_from_loader("impdelay_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("impdelay_py not built; see the module docstring")


def main():
    imp = load()
    example = imp.Scenario.from_file(str(ROOT / "scenarios" / "example1.scn"))
    assert example.segments == 2 and example.delay == 1.0, example
    assert sorted(example.family_names()) == ["first", "simultaneous", "tilde"]

    # The two orderings of simultaneous jumps reach different endpoints.
    ends = {}
    for fam in ("first", "tilde"):
        control = example.control(fam)
        assert control.validate(example) == []
        assert control.roundtrip_residual(example) <= 1e-10
        ends[fam] = imp.simulate(example, control)["endpoint"][0]
    assert abs(ends["first"] - math.e**2) < 1e-9, ends
    assert abs(ends["tilde"] - math.exp(1 + math.e)) < 1e-8, ends

    closed = imp.Scenario.from_file(str(ROOT / "scenarios" / "closed_form.scn"))
    best, info = imp.optimize(closed, grid=4)
    assert abs(info["cost"] + math.e) < 1e-6, info["cost"]
    cert = imp.check_pmp(closed, best)
    assert cert["pass"], cert

    # Documents round trip through text.
    again = imp.Control.parse(best.to_document(["smoke"]), closed)
    assert abs(again.tv_norm - best.tv_norm) < 1e-12

    try:
        imp.Scenario.from_str("[system]\nn = 0\n")
    except imp.ImpdelayError as e:
        assert "SchemaError" in str(e), e
    else:
        raise AssertionError("bad scenario accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
