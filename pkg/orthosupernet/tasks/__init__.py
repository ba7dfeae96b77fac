from orthosupernet.tasks.ctc import collapse, ctc_brute_force, ctc_loss, greedy_decode
from orthosupernet.tasks.metrics import edit_distance, label_error_rate
from orthosupernet.tasks.synth import (
    Corpus,
    Sample,
    generate,
    load_corpus,
    required_frames,
    save_corpus,
    subsampled_frames,
)


__all__ = [
    "collapse",
    "ctc_brute_force",
    "ctc_loss",
    "edit_distance",
    "generate",
    "greedy_decode",
    "label_error_rate",
    "load_corpus",
    "required_frames",
    "save_corpus",
    "subsampled_frames",
    "Corpus",
    "Sample",
]
