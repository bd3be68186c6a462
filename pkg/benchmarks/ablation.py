"""Co-denoising against independently sampled clips, on a synthetic moving blob.

Run `python ablation.py`. Prints the per-method means and the paired differences
over seeds, as `codenoise report` would.
"""

import codenoise


def _rows(method, seeds, sample, frame_conditions, emb):
    rows = []
    for seed in seeds:
        v = sample(seed)
        align_mean, align_var = codenoise.textual_alignment(v, frame_conditions, emb)
        rows.append(
            codenoise.MetricsRow(
                f"{method}-{seed}",
                method,
                codenoise.frame_consistency(v, emb),
                align_mean,
                align_var,
                seed,
            )
        )
    return rows


def run(total_frames=64, window=16, stride=4, steps=25, num_seeds=8):
    sched = codenoise.make_linear_schedule(100, 1e-4, 0.02)
    spec = codenoise.SceneSpec(
        motion="linear",
        velocity=0.25,
        blob_center0=(4.0, 2.0),
        blob_width=1.5,
        frame_shape=(8, 8),
    )
    condition = codenoise.spec_to_condition(spec)
    family = codenoise.SceneGaussians((8, 8), variance=0.01, shared_variance=0.01)
    denoiser = codenoise.AnalyticGaussianDenoiser(family, sched)
    cfg = codenoise.GuidanceConfig(scale=2.0)
    emb = codenoise.EmbedderSpec("random_projection", output_dim=32)
    frame_conditions = [condition] * total_frames

    overlapping = codenoise.make_layout(total_frames, window, stride)
    disjoint = codenoise.make_layout(total_frames, window, window)

    def co_denoise(seed):
        conditions = [condition.vector] * overlapping.clip_count
        return codenoise.sample_long(
            denoiser, overlapping, conditions, sched, cfg, steps, seed
        )

    def isolated(seed):
        conditions = [condition.vector] * disjoint.clip_count
        return codenoise.sample_isolated(
            denoiser, disjoint, conditions, sched, cfg, steps, seed
        )

    seeds = range(num_seeds)
    rows = _rows("co_denoise", seeds, co_denoise, frame_conditions, emb)
    rows += _rows("isolated", seeds, isolated, frame_conditions, emb)
    for method, summary in codenoise.summarise(rows).items():
        print(f"{method}: {summary.means}")
    comparison = codenoise.compare(rows, "co_denoise", "isolated")
    for metric, p in comparison.p_values.items():
        print(
            f"isolated - co_denoise {metric}: "
            f"mean={comparison.mean_difference(metric):.4f} p={p:.3g}"
        )


if __name__ == "__main__":
    run()
    run(stride=8)
