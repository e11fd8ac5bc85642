"""Synthetic multi-speaker sequence data.

Each speaker is a random center in feature space; each utterance is that
center plus i.i.d. per-frame noise. The last ``eval_utts_per_speaker``
utterances of every speaker are held out and turned into a balanced
target/nontarget trial list. Everything is deterministic per seed.

On disk a dataset is a directory:
    meta.json      spec echo, utterance ids/speakers/split, format version
    features.bin   binary header (magic, version, n, frames, dim) + float64 data
    trials.txt     `<label 0|1> <enroll-id> <test-id>` per line
"""

import json
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError
from .metrics import TrialList, read_trials, write_trials

_MAGIC = b"MASV"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    num_speakers: int
    utts_per_speaker: int
    frames: int
    feat_dim: int
    center_scale: float = 1.0
    noise_scale: float = 0.5
    eval_utts_per_speaker: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 2:
            raise InputError("need at least 2 speakers")
        for name in ("utts_per_speaker", "frames", "feat_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 1 <= self.eval_utts_per_speaker < self.utts_per_speaker:
            raise ConfigError("eval_utts_per_speaker must be in [1, utts_per_speaker)")
        if self.center_scale <= 0 or self.noise_scale < 0:
            raise ConfigError("center_scale must be > 0 and noise_scale >= 0")


@dataclass
class Dataset:
    spec: SyntheticSpeakerSpec
    features: np.ndarray  # (n_utts, frames, feat_dim) float64
    speakers: np.ndarray  # (n_utts,) int64
    ids: list[str]
    is_train: np.ndarray  # (n_utts,) bool
    trials: TrialList

    def features_by_id(self) -> dict[str, np.ndarray]:
        return {uid: self.features[i] for i, uid in enumerate(self.ids)}

    @property
    def train_indices(self) -> np.ndarray:
        return np.nonzero(self.is_train)[0]

    @property
    def eval_indices(self) -> np.ndarray:
        return np.nonzero(~self.is_train)[0]


def generate_dataset(spec: SyntheticSpeakerSpec) -> Dataset:
    """Sample speakers, utterances and a balanced held-out trial list."""
    rng = np.random.default_rng(spec.seed)
    centers = spec.center_scale * rng.standard_normal((spec.num_speakers, spec.feat_dim))

    n = spec.num_speakers * spec.utts_per_speaker
    features = np.empty((n, spec.frames, spec.feat_dim))
    speakers = np.empty(n, dtype=np.int64)
    ids = []
    is_train = np.empty(n, dtype=bool)
    i = 0
    for s in range(spec.num_speakers):
        for u in range(spec.utts_per_speaker):
            noise = rng.standard_normal((spec.frames, spec.feat_dim))
            features[i] = centers[s] + spec.noise_scale * noise
            speakers[i] = s
            ids.append(f"spk{s:03d}_utt{u:03d}")
            is_train[i] = u < spec.utts_per_speaker - spec.eval_utts_per_speaker
            i += 1

    trials = _build_trials(spec, speakers, ids, is_train, rng)
    return Dataset(
        spec=spec, features=features, speakers=speakers, ids=ids,
        is_train=is_train, trials=trials,
    )


def _build_trials(spec, speakers, ids, is_train, rng) -> TrialList:
    """All within-speaker held-out pairs as targets, equally many sampled
    cross-speaker pairs as nontargets."""
    eval_idx = np.nonzero(~is_train)[0]
    by_speaker: dict[int, list[int]] = {}
    for i in eval_idx:
        by_speaker.setdefault(int(speakers[i]), []).append(int(i))

    target_pairs = [
        pair for utts in by_speaker.values() for pair in combinations(utts, 2)
    ]
    num_targets = len(target_pairs)

    cross = [
        (int(a), int(b))
        for a, b in combinations(eval_idx, 2)
        if speakers[a] != speakers[b]
    ]
    if len(cross) < num_targets:
        raise ConfigError("not enough cross-speaker pairs for a balanced trial list")
    chosen = rng.choice(len(cross), size=num_targets, replace=False)
    nontarget_pairs = [cross[int(c)] for c in sorted(chosen)]

    labels, enroll, test = [], [], []
    for a, b in target_pairs:
        labels.append(True)
        enroll.append(ids[a])
        test.append(ids[b])
    for a, b in nontarget_pairs:
        labels.append(False)
        enroll.append(ids[a])
        test.append(ids[b])
    return TrialList(labels=np.asarray(labels, dtype=bool), enroll=enroll, test=test)


def nearest_centroid_accuracy(dataset: Dataset) -> float:
    """Fraction of held-out utterances whose mean frame is closest to its own
    speaker's train-split centroid. A learnability floor for the dataset."""
    means = dataset.features.mean(axis=1)  # (n, feat_dim)
    train, eval_ = dataset.train_indices, dataset.eval_indices
    num_speakers = dataset.spec.num_speakers
    centroids = np.stack([
        means[train[dataset.speakers[train] == s]].mean(axis=0)
        for s in range(num_speakers)
    ])
    dists = np.linalg.norm(means[eval_][:, None, :] - centroids[None, :, :], axis=2)
    pred = dists.argmin(axis=1)
    return float(np.mean(pred == dataset.speakers[eval_]))


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": _FORMAT_VERSION,
        "spec": asdict(dataset.spec),
        "ids": dataset.ids,
        "speakers": dataset.speakers.tolist(),
        "is_train": dataset.is_train.astype(int).tolist(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    n, frames, dim = dataset.features.shape
    header = _MAGIC + np.asarray([_FORMAT_VERSION, n, frames, dim], dtype="<u4").tobytes()
    (out / "features.bin").write_bytes(header + dataset.features.astype("<f8").tobytes())
    write_trials(dataset.trials, out / "trials.txt")


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    if not (src / "meta.json").is_file():
        raise InputError(f"not a dataset directory (no meta.json): {src}")
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    if meta.get("format_version") != _FORMAT_VERSION:
        raise InputError(f"unsupported dataset format version {meta.get('format_version')}")

    raw = (src / "features.bin").read_bytes()
    if raw[:4] != _MAGIC:
        raise InputError("features.bin has a bad magic header")
    version, n, frames, dim = np.frombuffer(raw[4:20], dtype="<u4")
    if version != _FORMAT_VERSION:
        raise InputError(f"unsupported features format version {version}")
    features = np.frombuffer(raw[20:], dtype="<f8").reshape(int(n), int(frames), int(dim)).copy()

    return Dataset(
        spec=SyntheticSpeakerSpec(**meta["spec"]),
        features=features,
        speakers=np.asarray(meta["speakers"], dtype=np.int64),
        ids=list(meta["ids"]),
        is_train=np.asarray(meta["is_train"], dtype=bool),
        trials=read_trials(src / "trials.txt"),
    )
