"""Batch inference and CSV emission.

Output follows the probability-table interchange format
(``sample_id,true_label,p_0,...,p_{C-1}``): rows renormalized in float64
and serialized at 9 significant digits, so they re-load without
normalization warnings. Coarse aggregation mirrors the consumer's
superclass fold operation-for-operation (ascending-index gather, axis-1
sum, row-total renormalize), so both sides produce bit-identical
float64 vectors on the same input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

SUPPORTED_MODELS = ("resnet18", "vgg11_bn", "densenet161")

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

_PREPROCESS = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ]
)


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportSpec:
    model_name: str
    input_dir: Path
    output_path: Path
    mapping_file: Path | None = None
    labels_file: Path | None = None
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.model_name not in SUPPORTED_MODELS:
            raise ExportError(
                f"unsupported model {self.model_name!r} (choices: {', '.join(SUPPORTED_MODELS)})"
            )
        if self.batch_size < 1:
            raise ExportError("batch size must be >= 1")


def build_model(model_name: str) -> torch.nn.Module:
    """Default factory: torchvision architecture with pretrained weights."""
    try:
        return models.get_model(model_name, weights="DEFAULT")
    except Exception as exc:
        raise ExportError(
            f"pretrained weights for {model_name!r} unavailable: {exc}"
        ) from exc


def discover_samples(
    input_dir: Path, labels_file: Path | None = None
) -> list[tuple[str, Path, int]]:
    """(sample_id, image_path, label) triples.

    Two layouts: ``<class_index>/<image>`` subdirectories, or a sidecar
    CSV (``filename,label``) with paths relative to the input directory.
    Sample ids are the relative paths. Labels are indices in the model's
    class space; a mapping, when given, folds them later.
    """
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise ExportError(f"input directory not found: {input_dir}")
    samples: list[tuple[str, Path, int]] = []
    if labels_file is not None:
        with Path(labels_file).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["filename", "label"]:
                raise ExportError(f"{labels_file}: expected header filename,label")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise ExportError(f"{labels_file}: line {lineno}: expected 2 fields")
                path = input_dir / row[0]
                if not path.is_file():
                    raise ExportError(f"{labels_file}: line {lineno}: no such image {row[0]!r}")
                try:
                    label = int(row[1])
                except ValueError as exc:
                    raise ExportError(f"{labels_file}: line {lineno}: {exc}") from exc
                samples.append((row[0], path, label))
    else:
        for class_dir in sorted(p for p in input_dir.iterdir() if p.is_dir()):
            try:
                label = int(class_dir.name)
            except ValueError:
                raise ExportError(
                    f"directory {class_dir.name!r} is not a class index; "
                    "use <class_index>/<image> layout or --labels"
                )
            for image in sorted(class_dir.iterdir()):
                if image.suffix.lower() in IMAGE_EXTENSIONS:
                    samples.append((f"{class_dir.name}/{image.name}", image, label))
    if not samples:
        raise ExportError(f"no images found under {input_dir}")
    return samples


def load_mapping_file(path: Path) -> np.ndarray:
    """Fine-to-coarse assignment from a ``fine_label,coarse_label`` CSV."""
    entries: dict[int, int] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["fine_label", "coarse_label"]:
            raise ExportError(f"{path}: expected header fine_label,coarse_label")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ExportError(f"{path}: line {lineno}: expected 2 fields")
            try:
                fine, coarse = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ExportError(f"{path}: line {lineno}: {exc}") from exc
            if fine in entries:
                raise ExportError(f"{path}: line {lineno}: fine_label {fine} mapped twice")
            entries[fine] = coarse
    if sorted(entries) != list(range(len(entries))):
        raise ExportError(f"{path}: fine labels must cover 0..{len(entries) - 1}")
    mapping = np.array([entries[i] for i in range(len(entries))], dtype=np.int64)
    coarse_ids = np.unique(mapping)
    if coarse_ids[0] != 0 or coarse_ids[-1] != coarse_ids.size - 1:
        raise ExportError(f"{path}: coarse labels must be contiguous from 0")
    return mapping


def aggregate_coarse(fine: np.ndarray, fine_to_coarse: np.ndarray) -> np.ndarray:
    """Fold fine probabilities into coarse classes and renormalize.

    Must stay operation-identical to the consumer's aggregation so both
    produce the same float64 bits: per coarse class, sum the fine columns
    in ascending index order along axis 1, then divide by the row total.
    """
    n_coarse = int(fine_to_coarse.max()) + 1
    coarse = np.empty((fine.shape[0], n_coarse), dtype=np.float64)
    for j in range(n_coarse):
        cols = np.nonzero(fine_to_coarse == j)[0]
        coarse[:, j] = fine[:, cols].sum(axis=1)
    return coarse / coarse.sum(axis=1, keepdims=True)


def _load_image(path: Path) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            return _PREPROCESS(img.convert("RGB"))
    except ExportError:
        raise
    except Exception as exc:
        raise ExportError(f"unreadable image {path}: {exc}") from exc


def export(
    spec: ExportSpec,
    model_factory: Callable[[str], torch.nn.Module] | None = None,
) -> Path:
    """Run the classifier over the images and write the probability table.

    Softmax outputs are renormalized row-wise in float64 (mapping or not)
    and written at 9 significant digits.
    """
    factory = model_factory if model_factory is not None else build_model
    samples = discover_samples(spec.input_dir, spec.labels_file)
    mapping = None
    if spec.mapping_file is not None:
        mapping = load_mapping_file(spec.mapping_file)

    model = factory(spec.model_name)
    model.eval()

    prob_rows: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(samples), spec.batch_size):
            batch = samples[start : start + spec.batch_size]
            tensors = torch.stack([_load_image(path) for _, path, _ in batch])
            logits = model(tensors)
            probs = torch.softmax(logits, dim=1)
            prob_rows.append(probs.cpu().numpy().astype(np.float64))
    fine = np.concatenate(prob_rows, axis=0)
    n_model_classes = fine.shape[1]

    labels = np.array([label for _, _, label in samples], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= n_model_classes:
        raise ExportError(
            f"ground-truth labels must lie in [0, {n_model_classes}); "
            f"got range [{labels.min()}, {labels.max()}]"
        )

    if mapping is not None:
        if mapping.size != n_model_classes:
            raise ExportError(
                f"mapping covers {mapping.size} fine classes, model outputs {n_model_classes}"
            )
        table = aggregate_coarse(fine, mapping)
        labels = mapping[labels]
    else:
        table = fine / fine.sum(axis=1, keepdims=True)

    out = Path(spec.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_classes = table.shape[1]
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "true_label"] + [f"p_{i}" for i in range(n_classes)])
        for (sample_id, _, _), label, row in zip(samples, labels, table):
            writer.writerow([sample_id, int(label)] + [f"{v:.8e}" for v in row])
    return out
