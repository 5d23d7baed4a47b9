import csv

import pytest

from randcon.errors import FormatError
from randcon.report import write_report

HEADER = "sweep_param,sweep_value,noise_sigma,group,method,metric,value\n"


def fake_results(path, param="noise_sigma", groups=8):
    lines = [HEADER]
    for value in (0.4, 0.5):
        for g in range(groups):
            noise = value if param == "noise_sigma" else 0.6
            lines.append(f"{param},{value},{noise},{g},randcon,ari,{0.5 + 0.01 * g}\n")
            lines.append(f"{param},{value},{noise},{g},sliding-window,ari,{0.3 + 0.011 * g}\n")
    path.write_text("".join(lines))
    return path


def test_noise_table_layout(tmp_path):
    write_report(fake_results(tmp_path / "r.csv"), tmp_path / "out")
    with open(tmp_path / "out" / "ari.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0][:4] == ["sweep_value", "randcon_mean", "randcon_sd", "randcon_n"]
    assert [row[0] for row in table[1:]] == ["0.4", "0.5"]
    assert float(table[1][1]) == pytest.approx(0.535)
    stars = table[1][table[0].index("sliding-window_stars")]
    assert stars == "**"  # 8 unanimous pairs: exact p = 2/256
    assert (tmp_path / "out" / "ari.svg").read_text().startswith("<?xml")


def test_per_noise_tables_for_other_sweeps(tmp_path):
    write_report(fake_results(tmp_path / "r.csv", param="kernel_count"), tmp_path / "out", plots=False)
    assert (tmp_path / "out" / "ari_noise0.6.csv").exists()
    assert not list((tmp_path / "out").glob("*.svg"))


def test_few_groups_have_no_stars(tmp_path):
    write_report(fake_results(tmp_path / "r.csv", groups=3), tmp_path / "out", plots=False)
    with open(tmp_path / "out" / "ari.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[1][table[0].index("sliding-window_p")] == ""


def test_report_is_pure(tmp_path):
    src = fake_results(tmp_path / "r.csv")
    write_report(src, tmp_path / "a")
    write_report(src, tmp_path / "a2")
    write_report(src, tmp_path / "a2")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "a2" / f.name).read_bytes()


def test_schema_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(FormatError):
        write_report(empty, tmp_path / "o")
    header_only = tmp_path / "h.csv"
    header_only.write_text(HEADER)
    with pytest.raises(FormatError, match="no result rows"):
        write_report(header_only, tmp_path / "o")
    partial = tmp_path / "p.csv"
    partial.write_text("sweep_param,method,value\nx,randcon,1\n")
    with pytest.raises(FormatError, match="sweep_value, noise_sigma, group, metric"):
        write_report(partial, tmp_path / "o")
