import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from relurep import svg


def parse(text):
    return ET.fromstring(text)


def test_render_is_valid_and_deterministic():
    x = np.linspace(0, 1, 5)
    series = [svg.Series(x, x**2, label="a<b"), svg.Series(x, -x, style="points")]
    a = svg.render(series, title="t & u")
    assert a == svg.render(series, title="t & u")
    root = parse(a)
    tags = [el.tag.split("}")[1] for el in root.iter()]
    assert tags.count("polyline") == 1 and tags.count("circle") == 5
    assert "a&lt;b" in a and "t &amp; u" in a


def test_empty_input_still_renders():
    root = parse(svg.render([]))
    assert root.attrib["width"] == str(svg.WIDTH)
    root = parse(svg.render([svg.Series([np.nan], [1.0])]))
    assert root is not None


def test_constant_series_has_nonzero_range():
    text = svg.render([svg.Series([0.0, 1.0], [2.0, 2.0])])
    assert not re.search(r"\b(nan|inf)\b", text)


def test_line_points_sorted_by_x():
    text = svg.render([svg.Series([1.0, 0.0, 0.5], [0.0, 0.0, 1.0])])
    pts = parse(text).find("{http://www.w3.org/2000/svg}polyline").attrib["points"].split()
    xs = [float(p.split(",")[0]) for p in pts]
    assert xs == sorted(xs)


def test_series_validation():
    with pytest.raises(ValueError):
        svg.Series([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        svg.Series([0.0], [0.0], style="bars")


def test_emit_writes_file(tmp_path):
    path = svg.emit_svg([svg.Series([0, 1], [1, 0])], tmp_path / "p.svg", title="x")
    assert path.read_text().startswith("<svg")
