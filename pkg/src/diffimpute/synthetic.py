"""Fully controlled mixed-type synthetic data for ablations and tests.

Every row shares one latent Gaussian vector z; continuous columns are
noisy nonlinear projections of z and categorical columns are sampled from
softmax logits of z, so cross-type dependence is built in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tabular import CATEGORICAL, CONTINUOUS, ColumnSpec, FeatureSchema, MaskedTable

# each feature reads a random subset of this many latent coordinates
PROJECTION_DIM = 4


@dataclass
class SynthConfig:
    n: int = 10_000
    d_cont: int = 15
    d_cat: int = 15
    latent_dim: int = 15
    cardinalities: tuple[int, ...] = (3, 4, 5)
    noise_cont: float = 0.1    # sd of additive noise on continuous columns
    noise_cat: float = 0.5     # sd of the categorical logit offsets
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d_cont < 0 or self.d_cat < 0:
            raise ValueError("invalid synthetic config")
        if self.latent_dim < PROJECTION_DIM:
            raise ValueError(f"latent_dim must be >= {PROJECTION_DIM}")


@dataclass
class SynthCoefficients:
    """Draws that define the generator; reuse them to regenerate exactly."""

    cont_subsets: np.ndarray   # (d_cont, PROJECTION_DIM) latent indices
    cont_linear: np.ndarray    # (d_cont, PROJECTION_DIM) a_k
    cont_gain: np.ndarray      # (d_cont,) b_k
    cont_inner: np.ndarray     # (d_cont, PROJECTION_DIM) c_k
    cat_subsets: np.ndarray    # (d_cat, PROJECTION_DIM)
    cat_weights: list[np.ndarray] = field(default_factory=list)  # (K_j, PROJECTION_DIM)
    cat_offsets: list[np.ndarray] = field(default_factory=list)  # (K_j,)
    cards: list[int] = field(default_factory=list)

    def save(self, path) -> None:
        arrays = {
            "cont_subsets": self.cont_subsets,
            "cont_linear": self.cont_linear,
            "cont_gain": self.cont_gain,
            "cont_inner": self.cont_inner,
            "cat_subsets": self.cat_subsets,
            "cards": np.array(self.cards, dtype=int),
        }
        for j, (w, o) in enumerate(zip(self.cat_weights, self.cat_offsets)):
            arrays[f"cat_w_{j}"] = w
            arrays[f"cat_o_{j}"] = o
        with open(path, "wb") as fh:  # file handle keeps savez from appending ".npz"
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "SynthCoefficients":
        with np.load(path) as data:
            cards = data["cards"].tolist()
            return cls(
                cont_subsets=data["cont_subsets"],
                cont_linear=data["cont_linear"],
                cont_gain=data["cont_gain"],
                cont_inner=data["cont_inner"],
                cat_subsets=data["cat_subsets"],
                cat_weights=[data[f"cat_w_{j}"] for j in range(len(cards))],
                cat_offsets=[data[f"cat_o_{j}"] for j in range(len(cards))],
                cards=cards,
            )


def draw_coefficients(config: SynthConfig, rng: np.random.Generator) -> SynthCoefficients:
    p = PROJECTION_DIM
    cont_subsets = np.stack([
        rng.choice(config.latent_dim, size=p, replace=False) for _ in range(config.d_cont)
    ]) if config.d_cont else np.zeros((0, p), dtype=int)
    cat_subsets = np.stack([
        rng.choice(config.latent_dim, size=p, replace=False) for _ in range(config.d_cat)
    ]) if config.d_cat else np.zeros((0, p), dtype=int)
    cards = [int(rng.choice(config.cardinalities)) for _ in range(config.d_cat)]
    return SynthCoefficients(
        cont_subsets=cont_subsets.astype(int),
        cont_linear=rng.standard_normal((config.d_cont, p)),
        cont_gain=rng.uniform(0.5, 1.5, size=config.d_cont),
        cont_inner=rng.standard_normal((config.d_cont, p)),
        cat_subsets=cat_subsets.astype(int),
        cat_weights=[rng.standard_normal((k, p)) for k in cards],
        cat_offsets=[config.noise_cat * rng.standard_normal(k) for k in cards],
        cards=cards,
    )


def schema_for(coeffs: SynthCoefficients, d_cont: int) -> FeatureSchema:
    cols = [ColumnSpec(f"x{k}", CONTINUOUS) for k in range(d_cont)]
    cols += [ColumnSpec(f"c{j}", CATEGORICAL, k) for j, k in enumerate(coeffs.cards)]
    return FeatureSchema(tuple(cols))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def generate_dataset(config: SynthConfig,
                     coefficients: SynthCoefficients | None = None,
                     ) -> tuple[MaskedTable, SynthCoefficients]:
    """Draw a fully observed table plus the coefficients that produced it.

    Coefficients and rows come from separate seeded streams, so passing the
    returned (or reloaded) coefficients back in regenerates the table exactly.
    """
    if coefficients is None:
        coefficients = draw_coefficients(config, np.random.default_rng([config.seed, 0]))
    coeffs = coefficients
    schema = schema_for(coeffs, config.d_cont)

    rng = np.random.default_rng([config.seed, 1])
    z = rng.standard_normal((config.n, config.latent_dim))
    values = np.empty((config.n, schema.d))

    for k in range(config.d_cont):
        zk = z[:, coeffs.cont_subsets[k]]
        lin = zk @ coeffs.cont_linear[k]
        nonlin = coeffs.cont_gain[k] * np.tanh(zk @ coeffs.cont_inner[k])
        values[:, k] = lin + nonlin + config.noise_cont * rng.standard_normal(config.n)

    for j in range(config.d_cat):
        zj = z[:, coeffs.cat_subsets[j]]
        logits = zj @ coeffs.cat_weights[j].T + coeffs.cat_offsets[j]
        probs = _softmax(logits)
        u = rng.random(config.n)
        # inverse-CDF draw keeps the sample a pure function of (u, probs)
        cdf = np.cumsum(probs, axis=1)
        values[:, config.d_cont + j] = np.argmax(u[:, None] < cdf, axis=1) + 1.0

    table = MaskedTable(values, np.zeros_like(values, dtype=bool), schema)
    return table, coeffs
