"""Synthetic labelled scenarios: region grids with an implanted abnormality.

Each sample picks a task and an abnormality class, marks one or two interior
regions as the culprit, paints them with the class signature (background
elsewhere, occasional distractor clutter on the rim), adds Gaussian noise and
writes a templated verbal reminder. The baseline attention is uniform over
the culprit regions.
"""

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from h2rat import binio
from h2rat.attention import ABNORMALITIES, CorrectionTable
from h2rat.errors import ChecksumError, DimensionError, FormatError, TemplateError, TruncatedError
from h2rat.rng import RngStream
from h2rat.textenc import MAX_LEN, Vocabulary, normalize
from h2rat.vision import RegionGrid, rim_mask, zone_of

TASKS = ("kitchen_serve_water", "factory_pick_gear")

CORPUS_MAGIC = b"H2RC"
CORPUS_VERSION = 1

ACTIONS = (
    "switch_to_grasp",
    "stop_and_retract",
    "regrasp_object",
    "rotate_wrist",
    "align_gripper",
    "lower_gripper",
    "move_left",
    "move_right",
    "move_up",
    "move_down",
    "place_beside_target",
    "place_on_target",
)

_CLASS_TEMPLATES = {
    "wrong_action": [
        "you are {push} the {obj} instead of grasping it",
        "do not {push} the {obj}",
        "that is the wrong action for the {obj}",
    ],
    "wrong_pose": [
        "your gripper is {tilted} near the {obj}",
        "the hand pose is wrong for the {obj}",
        "turn your wrist before holding the {obj}",
    ],
    "wrong_region": [
        "you are reaching into the wrong area",
        "the {obj} is not over there",
        "go to the other side to find the {obj}",
    ],
    "wrong_spatial_relation": [
        "the {obj} should be {rel} the {target}",
        "put the {obj} closer to the {target}",
        "the {obj} is too far from the {target}",
    ],
}

_SLOT = re.compile(r"\{[^}]*\}")

_VAGUE_TEMPLATES = ["something is wrong with the {obj}", "please check the {obj}", "that does not look right"]

_TASK_SLOTS = {
    "kitchen_serve_water": {"obj": ["cup", "glass", "mug"], "target": ["person", "table", "tray"]},
    "factory_pick_gear": {"obj": ["gear", "part", "cog"], "target": ["bin", "tray", "conveyor"]},
}

_SHARED_SLOTS = {
    "push": ["pushing", "knocking", "tipping"],
    "tilted": ["tilted", "rotated", "twisted"],
    "rel": ["next to", "on top of", "in front of"],
    "prefix": ["stop", "wait", "hey", "careful"],
    "locprep": ["on", "near", "at"],
    "zone0": ["top left", "upper left"],
    "zone1": ["top right", "upper right"],
    "zone2": ["bottom left", "lower left"],
    "zone3": ["bottom right", "lower right"],
}


def default_templates():
    """Per-(task, abnormality) template lists plus slot fillers."""
    templates = {}
    for task in TASKS:
        for abn in ABNORMALITIES:
            templates[f"{task}/{abn}"] = list(_CLASS_TEMPLATES[abn])
    slots = {f"{task}/{k}": v for task, s in _TASK_SLOTS.items() for k, v in s.items()}
    slots.update(_SHARED_SLOTS)
    return templates, slots


def default_correction_table():
    """Hand-set P(action | class, attention zone) for the four quadrants."""
    a = {name: i for i, name in enumerate(ACTIONS)}
    table = CorrectionTable()
    for zone in range(4):
        left, top = zone in (0, 2), zone in (0, 1)
        table.set(0, zone, [(a["switch_to_grasp"], 0.6), (a["stop_and_retract"], 0.3), (a["regrasp_object"], 0.1)])
        first, second = ("rotate_wrist", "align_gripper") if left else ("align_gripper", "rotate_wrist")
        table.set(1, zone, [(a[first], 0.5), (a[second], 0.3), (a["lower_gripper"], 0.2)])
        horiz = "move_right" if left else "move_left"
        vert = "move_down" if top else "move_up"
        table.set(2, zone, [(a[horiz], 0.5), (a[vert], 0.3), (a["stop_and_retract"], 0.2)])
        near, far = ("place_beside_target", "place_on_target") if top else ("place_on_target", "place_beside_target")
        table.set(3, zone, [(a[near], 0.6), (a[far], 0.4)])
    return table


def _unit(v):
    return v / np.linalg.norm(v)


@dataclass
class CorpusDefinition:
    rows: int = 4
    cols: int = 4
    f: int = 16
    sigma: float = 0.3
    definition_seed: int = 20190
    split_ratio: float = 0.5
    location_ambiguous_rate: float = 0.3
    vague_rate: float = 0.0
    distractor_rate: float = 0.1
    second_culprit_rate: float = 0.5
    signatures: dict = field(default_factory=dict)  # "task/abnormality" or "task/bg_*" -> tuple
    templates: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)
    table: CorrectionTable = field(default_factory=default_correction_table)
    actions: tuple = ACTIONS

    def __post_init__(self):
        if not self.signatures:
            self.signatures = self._make_signatures()
        if not self.templates and not self.slots:
            self.templates, self.slots = default_templates()

    def _make_signatures(self):
        rng = RngStream(self.definition_seed)
        sigs = {}
        for task in TASKS:
            for name in ABNORMALITIES + ("bg_interior", "bg_rim"):
                sigs[f"{task}/{name}"] = tuple(binio.to_f32(_unit(rng.normal(self.f))).tolist())
        return sigs

    @property
    def d(self):
        return self.rows * self.cols

    def signature(self, task, name):
        return np.array(self.signatures[f"{task}/{name}"])

    def check_templates(self):
        for task in TASKS:
            for abn in ABNORMALITIES:
                if not self.templates.get(f"{task}/{abn}"):
                    raise TemplateError(f"no reminder template for ({task}, {abn})")

    def to_dict(self):
        return {
            "rows": self.rows,
            "cols": self.cols,
            "f": self.f,
            "sigma": self.sigma,
            "definition_seed": self.definition_seed,
            "split_ratio": self.split_ratio,
            "location_ambiguous_rate": self.location_ambiguous_rate,
            "vague_rate": self.vague_rate,
            "distractor_rate": self.distractor_rate,
            "second_culprit_rate": self.second_culprit_rate,
            "signatures": {k: list(v) for k, v in self.signatures.items()},
            "templates": self.templates,
            "slots": self.slots,
            "table": self.table.to_list(),
            "actions": list(self.actions),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["signatures"] = {k: tuple(v) for k, v in d["signatures"].items()}
        d["table"] = CorrectionTable.from_list(d["table"])
        d["actions"] = tuple(d["actions"])
        return cls(**d)

    def vocabulary_words(self):
        """Every word the templates and slot fillers can produce."""
        words = set()
        for values in self.slots.values():
            for v in values:
                words.update(normalize(v))
        for tpls in list(self.templates.values()) + [_VAGUE_TEMPLATES]:
            for t in tpls:
                words.update(normalize(_SLOT.sub(" ", t)))
        return sorted(words)


@dataclass(frozen=True)
class ScenarioSpec:
    task: str
    abnormality: str
    culprit_regions: tuple
    correction_action: int

    @property
    def label(self):
        return ABNORMALITIES.index(self.abnormality)


@dataclass
class Scenario:
    spec: ScenarioSpec
    grid: RegionGrid
    reminder_text: str
    baseline_attention: np.ndarray  # d x 1
    location_stated: bool = True

    def __eq__(self, other):
        return (
            isinstance(other, Scenario)
            and self.spec == other.spec
            and self.grid == other.grid
            and self.reminder_text == other.reminder_text
            and self.location_stated == other.location_stated
            and np.array_equal(self.baseline_attention, other.baseline_attention)
        )


@dataclass
class Corpus:
    definition: CorpusDefinition
    seed: int
    vocab: Vocabulary
    train: list
    test: list

    def __eq__(self, other):
        return (
            isinstance(other, Corpus)
            and self.definition.to_dict() == other.definition.to_dict()
            and self.seed == other.seed
            and self.vocab == other.vocab
            and self.train == other.train
            and self.test == other.test
        )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _pick(rng, options):
    return options[rng.randint(len(options))]


def _interior_regions(rows, cols):
    return [i for i, rim in enumerate(rim_mask(rows, cols)) if not rim]


def _place_culprits(defn, rng):
    interior = _interior_regions(defn.rows, defn.cols)
    first = _pick(rng, interior)
    regions = [first]
    if rng.uniform(1)[0] < defn.second_culprit_rate:
        r, c = divmod(first, defn.cols)
        neighbours = [
            (r + dr) * defn.cols + (c + dc)
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
            if 0 <= r + dr < defn.rows and 0 <= c + dc < defn.cols
        ]
        neighbours = [n for n in neighbours if n in interior]
        if neighbours:
            regions.append(_pick(rng, neighbours))
    return first, tuple(sorted(regions))


def _fill(template, slots, task, rng):
    out = template
    while "{" in out:
        start = out.index("{")
        name = out[start + 1 : out.index("}", start)]
        options = slots.get(f"{task}/{name}") or slots.get(name)
        if not options:
            raise TemplateError(f"template slot {{{name}}} has no fillers for task {task}")
        out = out[:start] + _pick(rng, options) + out[out.index("}", start) + 1 :]
    return out


def make_reminder(defn, task, abnormality, zone, rng):
    """Returns (text, location_stated)."""
    key = f"{task}/{abnormality}"
    if not defn.templates.get(key):
        raise TemplateError(f"no reminder template for ({task}, {abnormality})")
    if defn.vague_rate > 0 and rng.uniform(1)[0] < defn.vague_rate:
        body = _fill(_pick(rng, _VAGUE_TEMPLATES), defn.slots, task, rng)
    else:
        body = _fill(_pick(rng, defn.templates[key]), defn.slots, task, rng)
    parts = [_pick(rng, defn.slots["prefix"]), body]
    located = rng.uniform(1)[0] >= defn.location_ambiguous_rate
    if located:
        parts.append(f"{_pick(rng, defn.slots['locprep'])} the {_pick(rng, defn.slots[f'zone{zone}'])}")
    return " ".join(parts), located


def make_scenario(defn, task, abnormality, rng):
    d = defn.d
    primary, culprits = _place_culprits(defn, rng)
    rim = rim_mask(defn.rows, defn.cols)
    feats = np.empty((defn.f, d))
    for region in range(d):
        if region in culprits:
            sig = defn.signature(task, abnormality)
        elif rim[region]:
            if defn.distractor_rate > 0 and rng.uniform(1)[0] < defn.distractor_rate:
                sig = defn.signature(task, _pick(rng, ABNORMALITIES))
            else:
                sig = defn.signature(task, "bg_rim")
        else:
            sig = defn.signature(task, "bg_interior")
        feats[:, region] = sig
    if defn.sigma > 0:
        feats = feats + defn.sigma * rng.normal(defn.f * d).reshape(defn.f, d)
    grid = RegionGrid(defn.rows, defn.cols, binio.to_f32(feats), source="synthetic")

    zone = zone_of(primary, defn.rows, defn.cols)
    text, located = make_reminder(defn, task, abnormality, zone, rng)
    baseline = np.zeros((d, 1))
    baseline[list(culprits), 0] = 1.0 / len(culprits)
    action = defn.table.best(ABNORMALITIES.index(abnormality), zone)
    spec = ScenarioSpec(task, abnormality, culprits, action)
    return Scenario(spec, grid, text, binio.to_f32(baseline), located)


def _split_flags(labels, ratio):
    """Stratified split: walk samples grouped by class and deal them out at ``ratio``."""
    order = sorted(range(len(labels)), key=lambda i: (labels[i], i))
    to_train = [False] * len(labels)
    for j, i in enumerate(order):
        to_train[i] = math.ceil((j + 1) * ratio) > math.ceil(j * ratio)
    return to_train


def generate_corpus(defn, n, rng):
    """``n`` scenarios split into (train, test), balanced over the classes."""
    if n < 2:
        raise ValueError("a corpus needs at least two samples")
    if not 0.0 <= defn.split_ratio <= 1.0:
        raise ValueError(f"split ratio {defn.split_ratio} outside [0, 1]")
    defn.check_templates()
    if isinstance(rng, int):
        rng = RngStream(rng)
    seed = rng.seed
    C = len(ABNORMALITIES)
    labels = [i % C for i in range(n)]
    labels = [labels[j] for j in rng.permutation(n)]
    samples = []
    for lab in labels:
        task = TASKS[rng.randint(len(TASKS))]
        samples.append(make_scenario(defn, task, ABNORMALITIES[lab], rng))
    flags = _split_flags(labels, defn.split_ratio)
    train = [s for s, t in zip(samples, flags) if t]
    test = [s for s, t in zip(samples, flags) if not t]
    vocab = Vocabulary(defn.vocabulary_words())
    return Corpus(defn, seed, vocab, train, test)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _write_sample(w, s, defn):
    w.u8(TASKS.index(s.spec.task))
    w.u8(ABNORMALITIES.index(s.spec.abnormality))
    w.u8(len(s.spec.culprit_regions))
    for r in s.spec.culprit_regions:
        w.u16(r)
    w.u16(s.spec.correction_action)
    w.u8(int(s.location_stated))
    w.text(s.reminder_text)
    w.f32(s.grid.features.T.reshape(-1))
    w.f32(s.baseline_attention.reshape(-1))


def _read_sample(r, defn):
    task_i, abn_i = r.u8(), r.u8()
    if task_i >= len(TASKS) or abn_i >= len(ABNORMALITIES):
        raise FormatError(f"corpus: bad task/abnormality code ({task_i}, {abn_i})")
    culprits = tuple(r.u16() for _ in range(r.u8()))
    action = r.u16()
    located = bool(r.u8())
    text = r.text()
    d, f = defn.d, defn.f
    feats = r.f32(d * f).reshape(d, f).T.copy()
    baseline = r.f32(d).reshape(d, 1)
    spec = ScenarioSpec(TASKS[task_i], ABNORMALITIES[abn_i], culprits, action)
    return Scenario(spec, RegionGrid(defn.rows, defn.cols, feats, "synthetic"), text, baseline, located)


def encode_corpus(corpus):
    meta = {
        "definition": corpus.definition.to_dict(),
        "seed": corpus.seed,
        "vocab": corpus.vocab.to_list(),
        "n_train": len(corpus.train),
        "n_test": len(corpus.test),
        "max_len": MAX_LEN,
    }
    w = binio.Writer()
    w.raw(CORPUS_MAGIC)
    w.u32(CORPUS_VERSION)
    w.text(binio.dump_manifest(meta))
    for s in corpus.train + corpus.test:
        _write_sample(w, s, corpus.definition)
    return binio.seal(w.getvalue())


def decode_corpus(buf):
    r = binio.open_header(buf, CORPUS_MAGIC, CORPUS_VERSION, "corpus")
    try:
        meta = binio.read_manifest(r)
        defn = CorpusDefinition.from_dict(meta["definition"])
        vocab = Vocabulary.from_list(meta["vocab"])
        samples = [_read_sample(r, defn) for _ in range(meta["n_train"] + meta["n_test"])]
    except TruncatedError:
        raise
    except (FormatError, KeyError, TypeError, ValueError, DimensionError) as exc:
        if not binio.crc_ok(buf):
            raise ChecksumError(f"corpus: CRC32 mismatch ({exc})") from exc
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corpus: malformed metadata: {exc}") from exc
    binio.check_seal(r)
    n_train = meta["n_train"]
    return Corpus(defn, meta["seed"], vocab, samples[:n_train], samples[n_train:])


def save_corpus(corpus, path):
    Path(path).write_bytes(encode_corpus(corpus))


def load_corpus(path):
    return decode_corpus(Path(path).read_bytes())
