import numpy as np
import pytest
from hypothesis import settings
from skimage import color, data

from hybridvc.codec.frame import Frame

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def yuv_from_rgb(rgb, h, w, y0=0, x0=0):
    ycc = color.rgb2ycbcr(rgb[y0 : y0 + h, x0 : x0 + w]).round().clip(0, 255).astype(np.int32)
    return Frame(ycc[..., 0], ycc[::2, ::2, 1], ycc[::2, ::2, 2])


def natural_frame(h=288, w=352):
    return yuv_from_rgb(data.astronaut(), h, w, 40, 60)


def gradient_frame(h=288, w=352):
    yy, xx = np.mgrid[0:h, 0:w]
    y = (xx * 200 // w + yy * 50 // h + 3).astype(np.int32)
    return Frame(y, y[::2, ::2] // 2 + 60, 200 - y[::2, ::2] // 2)


def noise_frame(h=288, w=352, seed=7):
    rng = np.random.default_rng(seed)
    return Frame(
        rng.integers(0, 256, (h, w)), rng.integers(0, 256, (h // 2, w // 2)), rng.integers(0, 256, (h // 2, w // 2))
    )


def grey_images():
    """Natural 8-bit grey images shipped with scikit-image."""
    out = [data.camera(), data.moon(), data.coins(), data.page(), data.text(), data.brick(), data.grass(),
           data.gravel()]
    out += [(color.rgb2gray(f()) * 255).round().astype(np.uint8)
            for f in (data.astronaut, data.coffee, data.chelsea, data.rocket, data.hubble_deep_field, data.retina)]
    return [np.asarray(im, dtype=np.uint8) for im in out]


@pytest.fixture(scope="session")
def nat_frame():
    return natural_frame()


@pytest.fixture(scope="session")
def small_nat():
    return natural_frame(64, 96)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, tagged through ``record_property``."""
    lines = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props:
                continue
            if rep.when == "call" or rep.outcome != "passed":
                ok = lines.get(props["criterion"], (True, ""))[0] and rep.outcome == "passed"
                lines[props["criterion"]] = (ok, props.get("detail", ""))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(lines, key=lambda s: int(s.split()[0])):
        ok, detail = lines[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
