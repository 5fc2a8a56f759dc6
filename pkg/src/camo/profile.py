"""Obfuscation profiles: which techniques to run and their parameter ranges."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from camo.errors import ProfileError
from camo.header import TechniqueId

T = TechniqueId

BODY_TECHNIQUES = (T.PADDING, T.PAD_XOR, T.PAD_SHIFT, T.CONST_PAD)

# header ids each body transform contributes, outermost first
_EXPANSION = {
    T.PADDING: (T.PADDING,),
    T.PAD_XOR: (T.PAD_XOR, T.PADDING),
    T.PAD_SHIFT: (T.PAD_SHIFT, T.PADDING),
    T.CONST_PAD: (T.CONST_PAD,),
}

PROFILE_KEYS = ("technique_chain", "pad_min", "pad_max", "delay_min_us", "delay_max_us", "seed")


def parse_technique(name: str) -> TechniqueId:
    key = name.strip().lower().replace("-", "_")
    try:
        return T[key.upper()]
    except KeyError:
        raise ProfileError(f"unknown technique {name!r}") from None


def parse_chain(text: str) -> tuple[TechniqueId, ...]:
    parts = [p for p in text.replace("+", ",").split(",") if p.strip()]
    if not parts:
        raise ProfileError("technique chain is empty")
    return tuple(parse_technique(p) for p in parts)


@dataclass(frozen=True)
class ObfuscationProfile:
    techniques: tuple[TechniqueId, ...] = (T.PADDING,)
    pad_min: int = 1
    pad_max: int = 256
    delay_min_us: int = 10_000
    delay_max_us: int = 100_000
    seed: int = 0
    _shapes: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        techs = tuple(T(t) for t in self.techniques)
        object.__setattr__(self, "techniques", techs)
        if not techs:
            raise ProfileError("profile needs at least one technique")
        if not 1 <= self.pad_min <= self.pad_max <= 0xFFFF:
            raise ProfileError(f"need 1 <= pad_min <= pad_max <= 65535, got "
                               f"{self.pad_min}..{self.pad_max}")
        if not 0 <= self.delay_min_us <= self.delay_max_us:
            raise ProfileError(f"need 0 <= delay_min_us <= delay_max_us, got "
                               f"{self.delay_min_us}..{self.delay_max_us}")
        if not 0 <= self.seed < 1 << 64:
            raise ProfileError("seed must be a 64-bit unsigned integer")
        stage = 0  # 0 body transforms, 1 fragment, 2 delay
        for t in techs:
            want = 0 if t in BODY_TECHNIQUES else 1 if t is T.FRAGMENT else 2
            if want < stage or (want > 0 and want == stage):
                raise ProfileError(
                    "chain must be body transforms, then at most one fragment, "
                    f"then at most one delay: {self.label}")
            stage = want
        object.__setattr__(self, "_shapes", self._compute_shapes())

    @property
    def label(self) -> str:
        return "+".join(t.slug for t in self.techniques)

    @property
    def body(self) -> tuple[TechniqueId, ...]:
        return tuple(t for t in self.techniques if t in BODY_TECHNIQUES)

    @property
    def fragments(self) -> bool:
        return T.FRAGMENT in self.techniques

    @property
    def delays(self) -> bool:
        return T.DELAY in self.techniques

    def body_shape(self) -> tuple[TechniqueId, ...]:
        shape: list[TechniqueId] = []
        for t in reversed(self.body):
            shape.extend(_EXPANSION[t])
        return tuple(shape)

    def _compute_shapes(self):
        body = self.body_shape()
        if not self.fragments:
            return (body,)
        # payloads too short to split travel with only the body headers
        return tuple(dict.fromkeys([(T.FRAGMENT, *body), (T.FRAGMENT,), body]))

    def chain_shapes(self) -> tuple[tuple[TechniqueId, ...], ...]:
        """Every header-id sequence a packet of this profile can carry."""
        return self._shapes

    def with_seed(self, seed: int) -> "ObfuscationProfile":
        return replace(self, seed=seed)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in (
            ("technique_chain", ",".join(t.slug for t in self.techniques)),
            ("pad_min", self.pad_min), ("pad_max", self.pad_max),
            ("delay_min_us", self.delay_min_us), ("delay_max_us", self.delay_max_us),
            ("seed", self.seed)))


def parse_profile(text: str) -> ObfuscationProfile:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ProfileError(f"line {lineno}: expected 'key = value'")
        if key not in PROFILE_KEYS:
            raise ProfileError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    if "technique_chain" not in values:
        raise ProfileError("profile is missing technique_chain")
    kwargs: dict = {"techniques": parse_chain(values.pop("technique_chain"))}
    for key, value in values.items():
        try:
            kwargs[key] = int(value, 0)
        except ValueError:
            raise ProfileError(f"{key}: not an integer: {value!r}") from None
    return ObfuscationProfile(**kwargs)


def load_profile(spec: str, seed: int | None = None) -> ObfuscationProfile:
    """Load a profile from a file path, or treat ``spec`` as an inline chain."""
    path = Path(spec)
    if path.is_file():
        profile = parse_profile(path.read_text())
    else:
        profile = ObfuscationProfile(parse_chain(spec))
    return profile if seed is None else profile.with_seed(seed)


def adaptive_pair(technique: TechniqueId, seed: int = 0) -> tuple[ObfuscationProfile, ObfuscationProfile]:
    """Training (A) and test (B) profiles for the retraining experiments.

    Padding variants shrink the pad range to 1..128 for B; constant-size
    padding and fragmentation gain a 10-100 ms delay; delay widens to 200 ms.
    """
    technique = T(technique)
    base = ObfuscationProfile((technique,), seed=seed)
    if technique in (T.PADDING, T.PAD_XOR, T.PAD_SHIFT):
        return base, replace(base, pad_max=128, seed=seed + 1)
    if technique in (T.CONST_PAD, T.FRAGMENT):
        return base, ObfuscationProfile((technique, T.DELAY), seed=seed + 1)
    return base, replace(base, delay_max_us=200_000, seed=seed + 1)
