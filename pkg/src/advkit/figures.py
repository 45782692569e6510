"""PGM figure export: benign/noise/adversarial triptychs, gradient sign maps,
and binarized saliency maps."""

from pathlib import Path

import numpy as np

from .attacks import sign_noise_map
from .pgm import write_pgm


def emit_triptych(out_dir, stem: str, original, adversarial) -> list:
    """Write benign, noise and adversarial images; noise is the three-level
    sign map of the realized perturbation (dark deducted, gray unchanged,
    light added)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = sign_noise_map(np.asarray(adversarial) - np.asarray(original))
    paths = []
    for suffix, image in (("benign", original), ("noise", noise),
                          ("adversarial", adversarial)):
        path = out_dir / f"{stem}-{suffix}.pgm"
        write_pgm(path, image)
        paths.append(path)
    return paths


def emit_sign_map(out_dir, stem: str, grad) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}-signmap.pgm"
    write_pgm(path, sign_noise_map(grad))
    return path


def emit_saliency(out_dir, stem: str, saliency) -> Path:
    """Binarized saliency visualization: nonzero scores render white."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}-saliency.pgm"
    write_pgm(path, (np.asarray(saliency) != 0).astype(np.float64))
    return path


def emit_campaign_figures(out_dir, records, dataset, limit: int = 8) -> list:
    """Triptychs for the first successful outcomes of a campaign."""
    out_dir = Path(out_dir)
    paths = []
    done = 0
    shape = dataset.image_shape
    for r in records:
        if not (r.attacked and r.success):
            continue
        stem = f"input{r.input_index:05d}-{r.source_class}to{r.destination_class}"
        paths.extend(emit_triptych(out_dir, stem,
                                   dataset.images[r.input_index],
                                   r.adversarial.reshape(shape)))
        done += 1
        if done >= limit:
            break
    return paths
