import numpy as np

from polymix import report

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _check_png(path):
    blob = path.read_bytes()
    assert blob[:8] == PNG_MAGIC
    assert len(blob) > 1000


def test_plot_threshold_curve(tmp_path):
    curve = [(t, 0.5 + 0.4 * t) for t in np.linspace(0.05, 0.95, 19)]
    out = report.plot_threshold_curve(curve, tmp_path / "curve.png")
    assert out == tmp_path / "curve.png"
    _check_png(out)


def test_plot_per_label_accuracy_default_names(tmp_path):
    out = report.plot_per_label_accuracy([0.9] * 10, tmp_path / "acc.png")
    _check_png(out)


def test_plot_per_label_accuracy_custom_names(tmp_path):
    out = report.plot_per_label_accuracy([0.2, 0.9], tmp_path / "two.png",
                                         names=["a", "b"])
    _check_png(out)


def test_plot_loss_curve_creates_parent_dirs(tmp_path):
    out = report.plot_loss_curve([0.7, 0.5, 0.4],
                                 tmp_path / "deep" / "nested" / "loss.png")
    assert out.parent.is_dir()
    _check_png(out)
