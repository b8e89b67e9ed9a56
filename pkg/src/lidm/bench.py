"""Throughput harness: kernel backends, autoencoder and diffusion sampling.

Numbers are hardware-bound; the harness only measures and reports them.
"""

from __future__ import annotations

import time

import numpy as np
import torch

from lidm import kernels
from lidm.codec import SensorConfig, pixel_centers, ray_directions
from lidm.synth import _pack, make_random_scene


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_timings(sensor: SensorConfig, repeat: int = 3, seed: int = 0) -> list[tuple[str, str]]:
    """Seconds per call for every available kernel backend."""
    rng = np.random.default_rng(seed)
    rows, cols = np.indices(sensor.shape)
    dirs = ray_directions(*pixel_centers(rows.ravel(), cols.ravel(), sensor), sensor)
    scene = _pack(make_random_scene(seed))
    mask = rng.random(sensor.shape) < 0.7
    queries = rng.normal(size=(4000, 3)) * 10
    refs = rng.normal(size=(4000, 3)) * 10
    flat = rng.integers(0, sensor.height * sensor.width, size=100_000)
    vals = rng.random(100_000)
    out = []
    for name, mod in kernels.backends().items():
        timings = {
            "raycast": _best_of(lambda: mod.raycast(dirs, *scene, sensor.max_range), repeat),
            "row_runs": _best_of(lambda: mod.row_runs(mask), repeat),
            "nearest_sqdist": _best_of(lambda: mod.nearest_sqdist(queries, refs), repeat),
            "scatter_min": _best_of(lambda: mod.scatter_min(flat, vals, sensor.height * sensor.width), repeat),
        }
        out += [(f"kernel_{k}_{name}_s", f"{v:.6f}") for k, v in timings.items()]
    return out


def model_timings(trainer=None, count: int = 4, steps: int = 10, quick: bool = False) -> list[tuple[str, str]]:
    """Autoencoder round trips and DDIM sampling rates.

    Without a trained diffusion trainer a small untrained pair is built on a
    16 x 128 sensor, which measures the code path rather than model quality.
    """
    from lidm.compression import CompressionConfig
    from lidm.compression.train import AETrainer, images_to_tensor
    from lidm.diffusion import DiffusionConfig
    from lidm.diffusion.train import DMTrainer
    from lidm.synth import synthesize

    if trainer is None:
        sensor = SensorConfig.preset(64).resized(16, 128)
        ae = AETrainer(CompressionConfig(codebook_size=256, base_channels=16 if quick else 32), sensor)
        dm_cfg = DiffusionConfig(base_channels=32 if quick else 64)
        trainer = DMTrainer(ae.state(), dm_cfg)
    sensor = trainer.sensor
    images = synthesize(count, sensor, seed=0).images
    x = images_to_tensor(images)
    with torch.no_grad():
        ae_s = _best_of(lambda: trainer.ae.decode(trainer.ae.encode(x)), 2)
    t0 = time.perf_counter()
    latents = trainer.sample_latents(count, steps=steps, eta=0.0, seed=0, sampler="ddim")
    sample_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    trainer.decode(latents)
    decode_s = time.perf_counter() - t0
    return [
        ("sensor", f"{sensor.height}x{sensor.width}"),
        ("ae_roundtrip_samples_per_s", f"{count / ae_s:.3f}"),
        ("ddim_steps", steps),
        ("diffusion_steps_per_s", f"{steps / sample_s:.3f}"),
        ("samples_per_s", f"{count / (sample_s + decode_s):.3f}"),
        ("torch_threads", torch.get_num_threads()),
    ]


def run_benchmarks(quick: bool = False, checkpoint=None, count: int = 4, steps: int = 10):
    trainer = None
    if checkpoint:
        from lidm.diffusion.train import DMTrainer

        trainer = DMTrainer.load(checkpoint)
    sensor = SensorConfig.preset(64).resized(16, 256) if quick else SensorConfig.preset(64)
    return ([("kernel_backend", kernels.BACKEND)] + kernel_timings(sensor, 1 if quick else 3)
            + model_timings(trainer, count, steps, quick))
