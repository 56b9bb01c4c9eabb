import json

import numpy as np
import pytest

from gazealign import attention, grids, toy
from gazealign.cli import run
from gazealign.gaze import Fixation, write_fixations_csv


@pytest.fixture
def fix_csv(tmp_path):
    path = tmp_path / "fix.csv"
    write_fixations_csv(path, [Fixation(30.0, 20.0, 0.0, 400.0), Fixation(31.0, 21.0, 5e5, 100.0)])
    return path


def test_help_lists_defaults(capsys):
    assert run(["gazemap", "--help"]) == 0
    out = capsys.readouterr().out
    assert "default 40.0" in out and "default 100.0" in out


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["metrics", "--g", "x.gam", "--a", "y.gam", "--bogus"]) == 1
    assert run(["nope"]) == 1
    assert run(["attnmap", "--tensor", "t", "--layers", "1", "--grid", "3by3",
                "--out-size", "4x4", "--out", "o.gam"]) == 1
    assert capsys.readouterr().err.count("gazealign") >= 4


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.gam"
    bad.write_bytes(b"XXXX" + bytes(8))
    assert run(["metrics", "--g", str(bad), "--a", str(bad)]) == 2
    assert run(["metrics", "--g", str(tmp_path / "missing.gam"), "--a", str(bad)]) == 2
    csvp = tmp_path / "f.csv"
    csvp.write_text("x,y\n1,2\n")
    assert run(["gazemap", "--fixations", str(csvp), "--size", "8x8", "--out", str(tmp_path / "o.gam")]) == 2
    assert "error" in capsys.readouterr().err


def test_gazemap_and_render_peak(tmp_path, fix_csv):
    gam = tmp_path / "g.gam"
    assert run(["gazemap", "--fixations", str(fix_csv), "--size", "48x64",
                "--sigma", "4", "--out", str(gam)]) == 0
    g = grids.read_gam(gam)
    assert g.shape == (48, 64) and g.max() == pytest.approx(1.0, abs=1e-6)
    assert np.unravel_index(np.argmax(g), g.shape) == (20, 30)
    png = tmp_path / "g.png"
    assert run(["render", "--in", str(gam), "--out", str(png)]) == 0
    rgb = grids.read_png(png)
    assert rgb.shape == (48, 64, 3)
    assert tuple(rgb[20, 30]) == (255, 0, 0)
    over = tmp_path / "o.png"
    chart = tmp_path / "c.pgm"
    grids.write_pgm(chart, np.full((48, 64), 100.0), normalize=False)
    assert run(["render", "--in", str(gam), "--overlay", str(chart), "--alpha", "0", "--out", str(over)]) == 0
    assert np.all(grids.read_png(over) == 100)


def test_gazemap_from_samples(tmp_path):
    path = tmp_path / "s.csv"
    rows = ["t_us,x_px,y_px,valid"] + [f"{k * 4000},{10 + k % 2},{12},1" for k in range(60)]
    rows.append("240000,nan,3,0")
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "g.gam"
    assert run(["gazemap", "--samples", str(path), "--size", "24x24", "--sigma", "2", "--out", str(out)]) == 0
    g = grids.read_gam(out)
    r, c = np.unravel_index(np.argmax(g), g.shape)
    assert r == 12 and c in (10, 11)


def test_filter_sessions(tmp_path, capsys):
    table = tmp_path / "t.csv"
    table.write_text("id,total_view_ms\n" + "".join(f"s{k:03d},{1000 + k}\n" for k in range(100)))
    assert run(["filter-sessions", "--table", str(table)]) == 0
    kept = capsys.readouterr().out.split()
    assert len(kept) == 97 and kept[0] == "s003"
    assert run(["filter-sessions"]) == 1


def test_attnmap_and_keep_axis(tmp_path, rng):
    t = rng.random((3, 2, 2, 6)).astype(np.float32)
    t /= t.sum(axis=-1, keepdims=True) * 1.5
    path = tmp_path / "t.atn"
    grids.write_atn(path, t)
    out = tmp_path / "a.gam"
    assert run(["attnmap", "--tensor", str(path), "--layers", "2", "--grid", "2x3",
                "--out-size", "4x6", "--out", str(out)]) == 0
    t64 = grids.read_atn(path)
    want = attention.attention_map(t64, 2, attention.PatchGrid(2, 3), 4, 6)
    np.testing.assert_allclose(grids.read_gam(out), want, atol=1e-6)
    assert run(["attnmap", "--tensor", str(path), "--layers", "2", "--grid", "2x3",
                "--out-size", "4x6", "--keep-axis", "head", "--out", str(out)]) == 0
    assert (tmp_path / "a_head0.gam").exists() and (tmp_path / "a_head1.gam").exists()
    assert run(["attnmap", "--tensor", str(path), "--layers", "2", "--grid", "2x2",
                "--out-size", "4x6", "--out", str(out)]) == 2


def test_metrics_self_comparison(tmp_path, rng, capsys):
    path = tmp_path / "m.gam"
    grids.write_gam(path, rng.random((9, 7)))
    assert run(["metrics", "--g", str(path), "--a", str(path), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert list(rep) == ["cc", "kl", "sim"]
    assert rep["cc"] == pytest.approx(1) and abs(rep["kl"]) < 1e-6 and rep["sim"] == pytest.approx(1)
    assert run(["metrics", "--g", str(path), "--a", str(path)]) == 0
    assert capsys.readouterr().out.startswith("cc=1.000000 kl=")


def test_loss_and_grad_check(tmp_path, capsys):
    g, a = tmp_path / "g.gam", tmp_path / "a.gam"
    grids.write_gam(g, np.array([[1.0, 0.0], [0.0, 0.0]]))
    grids.write_gam(a, np.array([[0.0, 0.0], [0.0, 1.0]]))
    grad = tmp_path / "d.gam"
    assert run(["loss", "--kind", "wmse", "--g", str(g), "--a", str(a), "--grad-out", str(grad)]) == 0
    # minmax leaves both maps unchanged: (1/0.1 + 1/1.1) / 4
    assert float(capsys.readouterr().out.split("=")[1]) == pytest.approx((10 + 1 / 1.1) / 4, rel=1e-8)
    assert grids.read_gam(grad).shape == (2, 2)
    for kind in ("wmse", "kld", "focal", "dicebce"):
        assert run(["grad-check", "--kind", kind, "--seed", "3"]) == 0
        err = float(capsys.readouterr().out.split("=")[1])
        assert err < 1e-3
    grids.write_gam(a, np.zeros((3, 2)))
    assert run(["loss", "--kind", "wmse", "--g", str(g), "--a", str(a)]) == 2


def test_perturb_modes(tmp_path):
    img = np.arange(64, dtype=np.float64).reshape(8, 8) * 3
    gz = np.zeros((8, 8))
    gz[2:5, 2:5] = 1.0
    ip, gp = tmp_path / "i.pgm", tmp_path / "g.gam"
    grids.write_pgm(ip, img, normalize=False)
    grids.write_gam(gp, gz)
    out = tmp_path / "o.pgm"
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "mask", "--out", str(out)]) == 0
    got = grids.read_pgm(out)
    assert not got[2:5, 2:5].any() and np.array_equal(got[gz == 0], img[gz == 0])
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "mask", "--invert", "--out", str(out)]) == 0
    got = grids.read_pgm(out)
    assert np.array_equal(got[2:5, 2:5], img[2:5, 2:5]) and not got[gz == 0].any()
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "blur",
                "--kernel", "3", "--sigma", "1", "--out", str(out)]) == 0
    got = grids.read_pgm(out)
    # a linear ramp is a fixed point of a symmetric blur; use a checkerboard here
    assert np.array_equal(got, img)
    checker = (np.indices((8, 8)).sum(axis=0) % 2) * 200.0
    grids.write_pgm(ip, checker, normalize=False)
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "blur",
                "--kernel", "3", "--sigma", "1", "--out", str(out)]) == 0
    got = grids.read_pgm(out)
    assert np.array_equal(got[gz == 0], checker[gz == 0])
    assert np.all(np.abs(got[2:5, 2:5] - 100) < 60)
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "blur",
                "--kernel", "4", "--out", str(out)]) == 2
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "smear", "--out", str(out)]) == 1


def test_perturb_color_png(tmp_path):
    rgb = np.random.default_rng(2).integers(0, 256, (6, 6, 3)).astype(np.uint8)
    ip, gp, out = tmp_path / "i.png", tmp_path / "g.gam", tmp_path / "o.png"
    grids.write_png(ip, rgb)
    gz = np.zeros((6, 6))
    gz[0, 0] = 1
    grids.write_gam(gp, gz)
    assert run(["perturb", "--img", str(ip), "--gaze", str(gp), "--mode", "mask", "--out", str(out)]) == 0
    got = grids.read_png(out)
    assert not got[0, 0].any() and np.array_equal(got[1:], rgb[1:])


def test_synth_and_train(tmp_path, capsys):
    data = tmp_path / "d"
    assert run(["synth", "--n", "30", "--grid", "4", "--seed", "1", "--out", str(data)]) == 0
    assert len(toy.read_dataset(data)) == 30
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs = 2\nbatch_size = 10\nseed = 3\n")
    model, hist = tmp_path / "m.bin", tmp_path / "h.csv"
    assert run(["train-toy", "--config", str(cfg), "--data", str(data), "--out", str(model),
                "--history", str(hist)]) == 0
    assert capsys.readouterr().out.startswith("epochs=2 accuracy=")
    assert toy.ToyModel.load(model).grid == 4
    assert len(hist.read_text().splitlines()) == 3
    cfg.write_text("epochz = 2\n")
    assert run(["train-toy", "--config", str(cfg), "--data", str(data), "--out", str(model)]) == 2
