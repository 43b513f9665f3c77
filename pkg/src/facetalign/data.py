"""Preference-instance and rating-corpus data model.

Two record families, both stored as line-delimited JSON so corpora stream
without full loads:

* instance records -- one prompt with a reference response and
  dimension-tagged negatives under an active-dimension mask;
* rating records -- binary rubric scores indexed by
  (model, question, judge, rubric item, dimension).

The module also contains the synthetic generators used as recovery and
training oracles.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import FacetParams, sigmoid

#: The four behavioral dimensions: anti-sycophancy, trustworthiness,
#: empathy, creativity.  Every dimension-keyed map uses these labels only.
DIMENSIONS = ("A", "T", "E", "C")

PARADIGMS = ("selection", "generation")


class ParseError(ValueError):
    """Malformed record; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownFieldWarning(UserWarning):
    """A record carried fields outside the documented schema."""


def _check_dims(dims) -> tuple[str, ...]:
    out = []
    for d in dims:
        if d not in DIMENSIONS:
            raise ValueError(f"unknown dimension label {d!r}")
        out.append(d)
    return tuple(sorted(set(out), key=DIMENSIONS.index))


# ---------------------------------------------------------------------------
# Preference instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PersonaInstance:
    """One training instance: a reference response plus one negative per
    active dimension."""

    id: str
    context: str
    question: str
    active_dims: frozenset
    reference: str
    negatives: dict
    paradigm: str = "generation"


INSTANCE_FIELDS = (
    "id",
    "context",
    "question",
    "active_dims",
    "reference",
    "negatives",
    "paradigm",
)


def validate_instance(inst: PersonaInstance) -> str | None:
    """Return None when the instance is well-formed, else a reject reason.

    Never raises: every invariant violation maps to a reason string.
    """
    if not inst.active_dims:
        return "empty active_dims"
    bad = sorted(set(inst.active_dims) - set(DIMENSIONS))
    if bad:
        return f"unknown dimension labels {bad}"
    if set(inst.negatives) != set(inst.active_dims):
        return "negative keys != active mask"
    if not inst.reference:
        return "empty reference"
    for d in sorted(inst.negatives):
        if not inst.negatives[d]:
            return f"empty negative for dimension {d}"
    if inst.paradigm not in PARADIGMS:
        return f"unknown paradigm {inst.paradigm!r}"
    if not inst.id:
        return "empty id"
    return None


def instance_to_record(inst: PersonaInstance) -> dict:
    return {
        "id": inst.id,
        "context": inst.context,
        "question": inst.question,
        "active_dims": sorted(inst.active_dims, key=DIMENSIONS.index),
        "reference": inst.reference,
        "negatives": {d: inst.negatives[d] for d in sorted(inst.negatives)},
        "paradigm": inst.paradigm,
    }


def _instance_from_record(rec: dict, line_no: int) -> PersonaInstance:
    missing = [f for f in INSTANCE_FIELDS if f not in rec and f != "paradigm"]
    if missing:
        raise ParseError(line_no, f"missing fields {missing}")
    extra = sorted(set(rec) - set(INSTANCE_FIELDS))
    if extra:
        warnings.warn(
            f"line {line_no}: ignoring unknown instance fields {extra}",
            UnknownFieldWarning,
            stacklevel=3,
        )
    if not isinstance(rec.get("active_dims"), list):
        raise ParseError(line_no, "active_dims must be an array")
    if not isinstance(rec.get("negatives"), dict):
        raise ParseError(line_no, "negatives must be an object")
    return PersonaInstance(
        id=str(rec["id"]),
        context=str(rec["context"]),
        question=str(rec["question"]),
        active_dims=frozenset(str(d) for d in rec["active_dims"]),
        reference=str(rec["reference"]),
        negatives={str(k): str(v) for k, v in rec["negatives"].items()},
        paradigm=str(rec.get("paradigm", "generation")),
    )


@dataclass(frozen=True)
class InstanceParseResult:
    """Accepted instances plus (line, reason) entries for rejected records."""

    instances: tuple
    rejects: tuple

    def __iter__(self):
        return iter(self.instances)

    def __len__(self):
        return len(self.instances)


def parse_instances(lines) -> InstanceParseResult:
    """Parse line-delimited instance records.

    Malformed records (bad JSON, wrong field types) raise :class:`ParseError`
    with the line number.  Records that parse but violate an instance
    invariant are collected as rejects with a structured reason.
    """
    instances = []
    rejects = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ParseError(line_no, "record is not an object")
        inst = _instance_from_record(rec, line_no)
        reason = validate_instance(inst)
        if reason is None:
            instances.append(inst)
        else:
            rejects.append((line_no, reason))
    return InstanceParseResult(tuple(instances), tuple(rejects))


def write_instances(instances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Rating corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatingObservation:
    """One binary rubric score."""

    model_id: str
    question_id: str
    judge_id: str
    rubric_id: str
    dimension: str
    score: int


RATING_FIELDS = ("model", "question", "judge", "rubric", "dim", "score")


def rating_to_record(obs: RatingObservation) -> dict:
    return {
        "model": obs.model_id,
        "question": obs.question_id,
        "judge": obs.judge_id,
        "rubric": obs.rubric_id,
        "dim": obs.dimension,
        "score": obs.score,
    }


@dataclass(frozen=True)
class RatingCorpus:
    """A pooled tensor of binary rubric ratings with its index sets.

    ``equating_warning`` is set when the per-dimension slices do not share
    the same judge and question sets; single-dimension calibration remains
    valid in that case, but cross-dimension averages are not comparable.
    """

    observations: tuple
    models: tuple = field(default=())
    questions: tuple = field(default=())
    judges: tuple = field(default=())
    dimensions: tuple = field(default=())
    rubrics_by_dim: dict = field(default_factory=dict)
    equating_warning: bool = False

    @classmethod
    def from_observations(cls, observations) -> "RatingCorpus":
        observations = tuple(observations)
        models, questions, judges = set(), set(), set()
        rubric_dim: dict[str, str] = {}
        rubrics_by_dim: dict[str, set] = {}
        judges_by_dim: dict[str, set] = {}
        questions_by_dim: dict[str, set] = {}
        for obs in observations:
            if obs.dimension not in DIMENSIONS:
                raise ValueError(f"unknown dimension label {obs.dimension!r}")
            if obs.score not in (0, 1):
                raise ValueError(f"non-binary score {obs.score!r}")
            seen = rubric_dim.setdefault(obs.rubric_id, obs.dimension)
            if seen != obs.dimension:
                raise ValueError(
                    f"rubric {obs.rubric_id!r} appears under dimensions "
                    f"{seen!r} and {obs.dimension!r}"
                )
            models.add(obs.model_id)
            questions.add(obs.question_id)
            judges.add(obs.judge_id)
            rubrics_by_dim.setdefault(obs.dimension, set()).add(obs.rubric_id)
            judges_by_dim.setdefault(obs.dimension, set()).add(obs.judge_id)
            questions_by_dim.setdefault(obs.dimension, set()).add(obs.question_id)
        dims = tuple(d for d in DIMENSIONS if d in rubrics_by_dim)
        equating_warning = False
        if len(dims) > 1:
            jsets = [judges_by_dim[d] for d in dims]
            qsets = [questions_by_dim[d] for d in dims]
            equating_warning = any(s != jsets[0] for s in jsets[1:]) or any(
                s != qsets[0] for s in qsets[1:]
            )
        return cls(
            observations=observations,
            models=tuple(sorted(models)),
            questions=tuple(sorted(questions)),
            judges=tuple(sorted(judges)),
            dimensions=dims,
            rubrics_by_dim={d: tuple(sorted(rubrics_by_dim[d])) for d in dims},
            equating_warning=equating_warning,
        )

    def __len__(self):
        return len(self.observations)

    def slice_dimension(self, dimension: str) -> "RatingCorpus":
        if dimension not in self.dimensions:
            raise KeyError(f"corpus has no dimension {dimension!r}")
        return RatingCorpus.from_observations(
            o for o in self.observations if o.dimension == dimension
        )

    def mean_score(self) -> float:
        if not self.observations:
            raise ValueError("empty corpus")
        return float(np.mean([o.score for o in self.observations]))


def parse_ratings(lines) -> RatingCorpus:
    """Parse line-delimited rating records into a corpus.

    Non-binary scores and unknown dimension labels are parse errors; extra
    fields are ignored with a warning.
    """
    observations = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ParseError(line_no, "record is not an object")
        missing = [f for f in RATING_FIELDS if f not in rec]
        if missing:
            raise ParseError(line_no, f"missing fields {missing}")
        extra = sorted(set(rec) - set(RATING_FIELDS))
        if extra:
            warnings.warn(
                f"line {line_no}: ignoring unknown rating fields {extra}",
                UnknownFieldWarning,
                stacklevel=2,
            )
        if rec["score"] not in (0, 1):
            raise ParseError(line_no, f"non-binary score {rec['score']!r}")
        if rec["dim"] not in DIMENSIONS:
            raise ParseError(line_no, f"unknown dimension label {rec['dim']!r}")
        observations.append(
            RatingObservation(
                model_id=str(rec["model"]),
                question_id=str(rec["question"]),
                judge_id=str(rec["judge"]),
                rubric_id=str(rec["rubric"]),
                dimension=rec["dim"],
                score=int(rec["score"]),
            )
        )
    return RatingCorpus.from_observations(observations)


def write_ratings(corpus: RatingCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obs in corpus.observations:
            fh.write(json.dumps(rating_to_record(obs), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Synthetic rating corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Blueprint for one dimension's synthetic rating corpus.

    When ``truth`` is omitted the ground-truth parameters are sampled:
    nuisance facets i.i.d. normal with ``nuisance_scale`` then centered (the
    zero-mean anchoring makes centered draws the identifiable truth), and
    theta normal with ``theta_scale`` then centered per question so the
    question-mean ability lives in phi, matching what the fitted
    decomposition can attribute.
    """

    n_models: int
    n_questions: int
    n_judges: int
    n_rubrics: int
    seed: int
    dimension: str = "A"
    truth: FacetParams | None = None
    theta_scale: float = 2.0
    nuisance_scale: float = 1.0
    theta_law: str = "normal"  # normal | uniform (same standard deviation)

    def __post_init__(self):
        for name in ("n_models", "n_questions", "n_judges", "n_rubrics"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension label {self.dimension!r}")
        if self.theta_scale < 0 or self.nuisance_scale < 0:
            raise ValueError("scales must be non-negative")
        if self.theta_law not in ("normal", "uniform"):
            raise ValueError(f"unknown theta_law {self.theta_law!r}")


def _default_ids(spec: SyntheticSpec):
    models = tuple(f"m{i:03d}" for i in range(spec.n_models))
    questions = tuple(f"q{i:03d}" for i in range(spec.n_questions))
    judges = tuple(f"j{i}" for i in range(spec.n_judges))
    rubrics = tuple(f"{spec.dimension}{i + 1}" for i in range(spec.n_rubrics))
    return models, questions, judges, rubrics


def _sample_truth(spec: SyntheticSpec, rng: np.random.Generator) -> FacetParams:
    models, questions, judges, rubrics = _default_ids(spec)

    def centered(n: int, scale: float) -> np.ndarray:
        x = scale * rng.standard_normal(n)
        return x - x.mean() if n else x

    gamma = centered(spec.n_judges, spec.nuisance_scale)
    delta = centered(spec.n_rubrics, spec.nuisance_scale)
    phi = centered(spec.n_questions, spec.nuisance_scale)
    shape = (spec.n_models, spec.n_questions)
    if spec.theta_law == "uniform":
        half_width = spec.theta_scale * np.sqrt(3.0)
        theta = rng.uniform(-half_width, half_width, shape)
    else:
        theta = spec.theta_scale * rng.standard_normal(shape)
    theta = theta - theta.mean(axis=0, keepdims=True)
    return FacetParams(
        models=models,
        questions=questions,
        judges=judges,
        rubrics=rubrics,
        theta=theta,
        gamma=gamma,
        delta=delta,
        phi=phi,
    )


def gen_synthetic_ratings(spec: SyntheticSpec) -> tuple[RatingCorpus, FacetParams]:
    """Sample a rating corpus from ground-truth parameters.

    Each observation is an independent Bernoulli draw with success
    probability sigmoid(theta - gamma - delta - phi).  Returns the corpus
    together with the truth so recovery tests can compare against it.
    The same SyntheticSpec (seed included) always yields the same corpus.
    """
    rng = np.random.default_rng(spec.seed)
    truth = spec.truth if spec.truth is not None else _sample_truth(spec, rng)
    if spec.truth is not None:
        shape_ok = (
            len(truth.models) == spec.n_models
            and len(truth.questions) == spec.n_questions
            and len(truth.judges) == spec.n_judges
            and len(truth.rubrics) == spec.n_rubrics
        )
        if not shape_ok:
            raise ValueError("explicit truth does not match spec counts")

    eta = (
        truth.theta[:, :, None, None]
        - truth.gamma[None, None, :, None]
        - truth.delta[None, None, None, :]
        - truth.phi[None, :, None, None]
    )
    probs = sigmoid(eta)
    draws = rng.random(probs.shape) < probs

    observations = []
    for mi, m in enumerate(truth.models):
        for qi, q in enumerate(truth.questions):
            if np.isnan(truth.theta[mi, qi]):
                continue
            for ji, j in enumerate(truth.judges):
                for ri, r in enumerate(truth.rubrics):
                    observations.append(
                        RatingObservation(
                            model_id=m,
                            question_id=q,
                            judge_id=j,
                            rubric_id=r,
                            dimension=spec.dimension,
                            score=int(draws[mi, qi, ji, ri]),
                        )
                    )
    return RatingCorpus.from_observations(observations), truth


def merge_corpora(*corpora: RatingCorpus) -> RatingCorpus:
    """Pool several corpora (typically one per dimension) into one."""
    obs = []
    for c in corpora:
        obs.extend(c.observations)
    return RatingCorpus.from_observations(obs)


def extend_with_judge(
    corpus: RatingCorpus,
    truth: FacetParams,
    gamma_new: float,
    seed: int,
    judge_id: str | None = None,
) -> tuple[RatingCorpus, FacetParams]:
    """Append a new judge's scores to a single-dimension corpus.

    Existing observations are kept verbatim; the new judge scores every
    (model, question, rubric) cell with severity ``gamma_new`` on the raw
    scale of ``truth`` (re-anchoring to zero mean is left to the caller or
    the refit).  Returns the extended corpus and the extended raw truth.
    """
    if len(corpus.dimensions) != 1:
        raise ValueError("extend_with_judge expects a single-dimension corpus")
    dim = corpus.dimensions[0]
    if judge_id is None:
        judge_id = f"j{len(truth.judges)}"
    if judge_id in truth.judges:
        raise ValueError(f"judge id {judge_id!r} already present")
    rng = np.random.default_rng(seed)
    eta = (
        truth.theta
        - gamma_new
        - truth.phi[None, :]
    )
    new_obs = []
    for ri, r in enumerate(truth.rubrics):
        probs = sigmoid(eta - truth.delta[ri])
        draws = rng.random(probs.shape) < probs
        for mi, m in enumerate(truth.models):
            for qi, q in enumerate(truth.questions):
                if np.isnan(truth.theta[mi, qi]):
                    continue
                new_obs.append(
                    RatingObservation(
                        model_id=m,
                        question_id=q,
                        judge_id=judge_id,
                        rubric_id=r,
                        dimension=dim,
                        score=int(draws[mi, qi]),
                    )
                )
    extended = RatingCorpus.from_observations(corpus.observations + tuple(new_obs))
    new_truth = FacetParams(
        models=truth.models,
        questions=truth.questions,
        judges=truth.judges + (judge_id,),
        rubrics=truth.rubrics,
        theta=truth.theta,
        gamma=np.append(truth.gamma, gamma_new),
        delta=truth.delta,
        phi=truth.phi,
    )
    return extended, new_truth


# ---------------------------------------------------------------------------
# Synthetic preference corpora
# ---------------------------------------------------------------------------

def gen_synthetic_preferences(
    dims,
    conflict_target: float,
    size: int,
    seed: int,
    easy_fraction: float = 0.25,
) -> tuple:
    """Generate training items over a shared token vocabulary with a
    prescribed initial gradient conflict between the first two dimensions.

    The construction uses three prompt pools:

    * conflict prompts carry two items whose preferences oppose: the
      reference of the first dimension's item is the negative of the second
      dimension's item, and vice versa;
    * solo prompts carry one single-dimension item;
    * an extra pool of solo prompts for the second dimension
      (``easy_fraction`` of the budget) makes the first dimension the
      scarcer, harder objective.

    At a fresh uniform policy the measured conflict coefficient between the
    two per-dimension gradients is k / sqrt(N1 * N2) with k conflict
    prompts and N1 <= N2 per-dimension item counts, so the counts are
    solved in closed form from ``conflict_target``.  Texts are opaque token
    identifiers; only identity matters for the tabular policy.
    """
    dims = _check_dims(dims)
    if not 0.0 <= conflict_target < 1.0:
        raise ValueError("conflict_target must be in [0, 1)")
    if size < 0:
        raise ValueError("size must be >= 0")
    if size == 0:
        return ()
    if conflict_target > 0 and len(dims) < 2:
        raise ValueError("need at least two dimensions for nonzero conflict")
    rng = np.random.default_rng(seed)
    vocab = tuple(f"v{i:02d}" for i in range(max(4, min(64, 2 * size))))
    if len(dims) == 1:
        d = dims[0]
        items = [
            _mk_item(i, f"p{i:04d}", {d: _pick_pair(vocab, rng)})
            for i in range(size)
        ]
        return tuple(items)

    d1, d2 = dims[0], dims[1]
    extra_dims = dims[2:]
    extra_budget = int(round(0.2 * size)) if extra_dims else 0
    budget = size - extra_budget

    n_easy = int(round(easy_fraction * budget))
    if (budget - n_easy) % 2 == 1:
        n_easy += 1
    s1 = (budget - n_easy) // 2  # items per dimension outside the easy pool
    if s1 < 1:
        raise ValueError(f"size {size} too small for the requested pools")
    n2 = s1 + n_easy
    k = int(round(conflict_target * np.sqrt(s1 * n2)))
    if k > s1:
        raise ValueError(
            f"conflict_target {conflict_target} infeasible for size {size}: "
            f"max achievable is {s1 / np.sqrt(s1 * n2):.3f}"
        )
    c1 = s1 - k
    c2 = n2 - k
    achieved = k / np.sqrt(s1 * n2)
    if abs(achieved - conflict_target) > 0.15:
        raise ValueError(
            f"conflict_target {conflict_target} infeasible for size {size}: "
            f"closest achievable is {achieved:.3f}"
        )

    items = []
    prompt_no = 0

    def next_prompt() -> str:
        nonlocal prompt_no
        p = f"p{prompt_no:04d}"
        prompt_no += 1
        return p

    for _ in range(k):
        p = next_prompt()
        a, b = _pick_pair(vocab, rng)
        items.append(_mk_item(len(items), p, {d1: (a, b)}))
        items.append(_mk_item(len(items), p, {d2: (b, a)}))
    for _ in range(c1):
        p = next_prompt()
        items.append(_mk_item(len(items), p, {d1: _pick_pair(vocab, rng)}))
    for _ in range(c2):
        p = next_prompt()
        items.append(_mk_item(len(items), p, {d2: _pick_pair(vocab, rng)}))
    for i in range(extra_budget):
        d = extra_dims[i % len(extra_dims)]
        p = next_prompt()
        items.append(_mk_item(len(items), p, {d: _pick_pair(vocab, rng)}))

    order = rng.permutation(len(items))
    return tuple(items[i] for i in order)


def _pick_pair(vocab, rng) -> tuple[str, str]:
    i, j = rng.choice(len(vocab), size=2, replace=False)
    return vocab[i], vocab[j]


def _mk_item(idx: int, prompt: str, prefs: dict) -> PersonaInstance:
    """Build an item from {dim: (reference, negative)} preferences.

    All dims of one item must share the same reference.
    """
    refs = {ref for ref, _ in prefs.values()}
    if len(refs) != 1:
        raise ValueError("conflicting references within one item")
    reference = refs.pop()
    return PersonaInstance(
        id=f"syn-{idx:05d}",
        context="synthetic",
        question=prompt,
        active_dims=frozenset(prefs),
        reference=reference,
        negatives={d: neg for d, (_, neg) in prefs.items()},
        paradigm="selection",
    )
