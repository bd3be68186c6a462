"""One-shot tuning with and without clip identifiers, and with sparse-causal
attention. Run `python identifier_ablation.py`; slow on CPU.
"""

import codenoise
import jax.random as jr


def run(identifier_dim, mode, total_frames=32, window=8, stride=4, epochs=200):
    sched = codenoise.make_linear_schedule(50, 1e-4, 0.02)
    frame_shape = (8, 8)
    spec = codenoise.SceneSpec(
        motion="linear",
        velocity=0.2,
        blob_center0=(4.0, 1.0),
        blob_width=1.5,
        frame_shape=frame_shape,
    )
    video = codenoise.render_scene(spec, total_frames)
    layout = codenoise.make_layout(total_frames, window, stride)
    conditions = [codenoise.spec_to_condition(spec).vector] * layout.clip_count
    model_key, id_key, train_key = jr.split(jr.PRNGKey(0), 3)
    denoiser = codenoise.TinyLearnedDenoiser(
        window,
        frame_shape,
        codenoise.CONDITION_DIM,
        sched.num_steps,
        identifier_dim=identifier_dim,
        mode=mode,
        key=model_key,
    )
    identifiers = None
    if identifier_dim is not None:
        identifiers = codenoise.make_identifiers(
            layout.clip_count, identifier_dim, key=id_key
        )
    sol = codenoise.train_one_shot(
        denoiser,
        video,
        layout,
        conditions,
        identifiers,
        sched,
        epochs=epochs,
        lr=1e-3,
        batch=4,
        key=train_key,
    )
    converged = codenoise.convergence_epoch(sol.losses)
    v = codenoise.sample_long(
        sol.denoiser,
        layout,
        conditions,
        sched,
        codenoise.GuidanceConfig(scale=2.0),
        steps=25,
        identifiers=sol.identifiers,
    )
    emb = codenoise.EmbedderSpec("flatten")
    error = float(abs(v.frames - video.frames).mean())
    print(
        f"identifier_dim={identifier_dim}, mode={mode}, "
        f"final_loss={float(sol.losses[-1]):.4f}, converged_epoch={converged}, "
        f"consistency={codenoise.frame_consistency(v, emb):.4f}, "
        f"reconstruction_error={error:.4f}"
    )


if __name__ == "__main__":
    run(identifier_dim=None, mode="bidirectional")
    run(identifier_dim=8, mode="bidirectional")
    run(identifier_dim=8, mode="sparse_causal")
