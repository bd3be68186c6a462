import re

import codenoise
import jax.random as jr
import pytest

from .helpers import blob, make_sched, scene_conditions, scene_denoiser


def _sample(progress_meter):
    sched = make_sched(30)
    layout = codenoise.make_layout(12, 8, 4)
    return codenoise.sample_long(
        scene_denoiser(sched),
        layout,
        scene_conditions(layout, blob()),
        sched,
        codenoise.GuidanceConfig(),
        steps=10,
        progress_meter=progress_meter,
    )


def test_text_progress_meter(capfd):
    capfd.readouterr()
    _sample(codenoise.TextProgressMeter(minimum_increase=0.15))
    captured = capfd.readouterr()
    assert captured.out == "0.00%\n20.00%\n40.00%\n60.00%\n80.00%\n100.00%\n"

    _sample(codenoise.TextProgressMeter())
    lines = capfd.readouterr().out.splitlines()
    assert lines == [f"{10 * i}.00%" for i in range(11)]


def test_text_progress_meter_training(capfd, getkey):
    layout = codenoise.make_layout(8, 4, 2)
    spec = blob("linear", frame_shape=(4, 4))
    denoiser = codenoise.TinyLearnedDenoiser(
        4, (4, 4), codenoise.CONDITION_DIM, 10, width=8, key=getkey()
    )
    capfd.readouterr()
    codenoise.train_one_shot(
        denoiser,
        codenoise.render_scene(spec, 8),
        layout,
        scene_conditions(layout, spec),
        None,
        make_sched(10),
        epochs=4,
        key=jr.PRNGKey(0),
        progress_meter=codenoise.TextProgressMeter(),
    )
    captured = capfd.readouterr()
    assert captured.out == "0.00%\n25.00%\n50.00%\n75.00%\n100.00%\n"


def test_tqdm_progress_meter(capfd):
    pytest.importorskip("tqdm")
    capfd.readouterr()
    _sample(codenoise.TqdmProgressMeter(refresh_steps=5))
    err = capfd.readouterr().err.strip()
    assert re.match("0.00%|[ ]+|", err.split("\r", 1)[0])
    assert re.match("100.00%|█+|", err.rsplit("\r", 1)[1])


def test_no_progress_meter(capfd):
    capfd.readouterr()
    _sample(codenoise.NoProgressMeter())
    captured = capfd.readouterr()
    assert captured.out == ""
