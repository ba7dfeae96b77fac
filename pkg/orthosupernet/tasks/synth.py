"""Synthetic sequence-labeling corpus.

Each label emits its Gaussian class prototype for a few frames. Prototype
``0`` is silence: it separates repeated labels and pads sequences that are
too short for CTC after the frontend halves the frame rate.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from orthosupernet.exceptions import ConfigError, FormatError
from orthosupernet.schemas import SynthConfig


logger = logging.getLogger(__name__)

CORPUS_MAGIC = b"ORSC"
CORPUS_VERSION = 1
SPLIT_STREAMS = {"train": 1, "dev": 2}


@dataclass(frozen=True)
class Sample:
    """One utterance.

    Attributes
    ----------
    features : np.ndarray
        ``T x d_in`` 32-bit frames
    labels : tuple[int, ...]
        Label ids in ``1..V``
    alignment : np.ndarray or None
        Prototype id of every frame; not kept in the cache file
    """

    features: np.ndarray
    labels: tuple[int, ...]
    alignment: np.ndarray | None = None


@dataclass
class Corpus:
    config_hash: str
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)


def subsampled_frames(frames: int) -> int:
    """Frames left after the stride-2 frontend."""
    return (frames - 1) // 2 + 1


def required_frames(labels: tuple[int, ...] | list[int]) -> int:
    """Shortest CTC-feasible output: one frame per label plus a blank
    between every pair of equal neighbours."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def check_config(config: SynthConfig) -> None:
    if config.min_label_len > config.max_label_len:
        raise ConfigError(
            f"min_label_len={config.min_label_len} exceeds max_label_len={config.max_label_len}"
        )
    if config.min_frames_per_label > config.max_frames_per_label:
        raise ConfigError(
            f"min_frames_per_label={config.min_frames_per_label} exceeds "
            f"max_frames_per_label={config.max_frames_per_label}"
        )


def prototypes(config: SynthConfig) -> np.ndarray:
    """Fixed class prototypes, silence first."""
    generator = np.random.default_rng([config.seed, 0])
    return generator.standard_normal((config.vocab + 1, config.d_in))


def make_sample(config: SynthConfig, table: np.ndarray, split: str, index: int) -> Sample:
    generator = np.random.default_rng([config.seed, SPLIT_STREAMS[split], index])
    length = int(generator.integers(config.min_label_len, config.max_label_len + 1))
    labels = tuple(int(label) for label in generator.integers(1, config.vocab + 1, size=length))
    durations = generator.integers(
        config.min_frames_per_label, config.max_frames_per_label + 1, size=length
    )

    alignment: list[int] = []
    for position, (label, duration) in enumerate(zip(labels, durations)):
        if position > 0 and labels[position - 1] == label:
            alignment.append(0)
        alignment.extend([label] * int(duration))
    while subsampled_frames(len(alignment)) < required_frames(labels):
        alignment.append(0)

    path = np.asarray(alignment, dtype=np.int64)
    noise = generator.standard_normal((len(path), config.d_in))
    features = (table[path] + config.noise * noise).astype(np.float32)
    return Sample(features, labels, path)


def generate(
    config: SynthConfig,
    split: Literal["train", "dev"] = "train",
    *,
    threads: int = 1,
) -> Corpus:
    """Build the ``split`` corpus; sample ``i`` depends only on
    ``(seed, split, i)``, so the thread count does not change the output.

    Raises
    ------
    ConfigError
        Label-length or duration bounds are inverted
    """
    check_config(config)
    table = prototypes(config)
    count = config.train_size if split == "train" else config.dev_size
    if threads <= 1:
        samples = [make_sample(config, table, split, index) for index in range(count)]
    else:
        futures: list[Future[Sample]] = []
        with ThreadPoolExecutor(max_workers=threads) as executor:
            for index in range(count):
                futures.append(executor.submit(make_sample, config, table, split, index))
        samples = [future.result() for future in futures]
    logger.debug("Generated %d %s samples with %d threads", count, split, threads)
    return Corpus(config.digest(), samples)


def save_corpus(corpus: Corpus, path: Path) -> None:
    """Write the little-endian cache: magic, version, config hash, count,
    then per sample ``T``, label count, labels and 32-bit features."""
    path = Path(path)
    chunks = [
        CORPUS_MAGIC,
        struct.pack("<I", CORPUS_VERSION),
        corpus.config_hash.encode("ascii").ljust(64, b"\0"),
        struct.pack("<I", len(corpus.samples)),
    ]
    for sample in corpus.samples:
        frames, width = sample.features.shape
        chunks.append(struct.pack("<III", frames, width, len(sample.labels)))
        chunks.append(np.asarray(sample.labels, dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(sample.features, dtype="<f4").tobytes())

    descriptor, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(descriptor, "wb") as handle:
        handle.write(b"".join(chunks))
    os.replace(temporary, path)
    logger.info("Cached %d samples to %s", len(corpus.samples), path)


def load_corpus(path: Path) -> Corpus:
    """Read a cache written by :func:`save_corpus`.

    Raises
    ------
    FormatError
        Wrong magic or version, or a truncated file
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as error:
        raise FormatError(str(path), error.strerror or "cannot open") from None
    if data[:4] != CORPUS_MAGIC:
        raise FormatError(str(path), "not a corpus cache")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != CORPUS_VERSION:
            raise FormatError(str(path), f"unsupported corpus version {version}")
        config_hash = data[8:72].rstrip(b"\0").decode("ascii")
        (count,) = struct.unpack_from("<I", data, 72)
        offset = 76
        samples = []
        for _ in range(count):
            frames, width, length = struct.unpack_from("<III", data, offset)
            offset += 12
            labels = np.frombuffer(data, dtype="<u4", count=length, offset=offset)
            offset += 4 * length
            features = np.frombuffer(data, dtype="<f4", count=frames * width, offset=offset)
            offset += 4 * frames * width
            samples.append(
                Sample(
                    features.reshape(frames, width).astype(np.float32),
                    tuple(int(label) for label in labels),
                )
            )
    except (struct.error, ValueError):
        raise FormatError(str(path), "truncated corpus cache") from None
    return Corpus(config_hash, samples)
