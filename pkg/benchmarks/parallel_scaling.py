import time

import codenoise
import jax.numpy as jnp


def timed(fn):
    def _fn(*args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        end = time.perf_counter()
        return out, end - start

    return _fn


@timed
def _sample(denoiser, layout, conditions, sched, workers):
    return codenoise.sample_long(
        denoiser,
        layout,
        conditions,
        sched,
        codenoise.GuidanceConfig(scale=2.0),
        steps=20,
        workers=workers,
    )


def run(total_frames, window=16, stride=4, frame_shape=(16, 16)):
    sched = codenoise.make_linear_schedule(100, 1e-4, 0.02)
    spec = codenoise.SceneSpec(
        motion="sinusoidal",
        velocity=1.5,
        blob_center0=(frame_shape[0] / 2, frame_shape[1] / 2),
        blob_width=2.0,
        frame_shape=frame_shape,
        period=24.0,
    )
    denoiser = codenoise.AnalyticGaussianDenoiser(
        codenoise.SceneGaussians(frame_shape), sched
    )
    layout = codenoise.make_layout(total_frames, window, stride)
    conditions = [codenoise.spec_to_condition(spec).vector] * layout.clip_count

    # Compile once before timing.
    _sample(denoiser, layout, conditions, sched, 1)
    reference, serial_time = _sample(denoiser, layout, conditions, sched, 1)
    times = []
    for workers in (2, 4, 8):
        v, t = _sample(denoiser, layout, conditions, sched, workers)
        assert jnp.array_equal(v.frames, reference.frames)
        times.append(f"workers={workers}: {t:.3f}s")
    print(
        f"total_frames={total_frames} clips={layout.clip_count} "
        f"serial={serial_time:.3f}s " + " ".join(times)
    )


if __name__ == "__main__":
    run(64)
    run(256)
    run(1024)
