"""
Pydantic schemas for run configuration
"""
import json
from typing import Optional, Dict, Any, Union, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from ldqn.config import settings

# ==================== DATASET SCHEMAS ====================

class DatasetSpec(BaseModel):
    """LIBSVM dataset on disk"""
    kind: Literal["libsvm"] = "libsvm"
    path: str
    normalize: bool = Field(True, description="Min-max scale every feature to [0, 1]")
    n_features: Optional[int] = Field(None, ge=1)
    lam: float = Field(0.01, ge=0.0, description="Regularization weight carried by every shard")


class SynthConfig(BaseModel):
    """Synthetic logistic data: rows ~ N(0, diag(i^-1.2)), all-ones true weights"""
    kind: Literal["synthetic"] = "synthetic"
    N: int = Field(2000, gt=0)
    d: int = Field(50, gt=0)
    noise_sigma2: float = Field(0.09, ge=0.0)
    sparsity: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = 0
    lam: float = Field(0.01, ge=0.0)


class QuadraticSpec(BaseModel):
    """Random quadratic shards sharing one minimizer"""
    kind: Literal["quadratic"] = "quadratic"
    d: int = Field(10, gt=0)
    eig_lo: float = Field(1.0, gt=0.0)
    eig_hi: float = Field(2.0, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def validate_range(self):
        if self.eig_hi < self.eig_lo:
            raise ValueError("eig_hi must be >= eig_lo")
        return self


# ==================== EXECUTION SCHEMAS ====================

DELAY_KINDS = ("constant", "uniform-integer", "per-worker-constant", "heterogeneous-random")


class DelaySpec(BaseModel):
    """Worker latency model"""
    kind: Literal["constant", "uniform-integer", "per-worker-constant", "heterogeneous-random"] = "constant"
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class StopRuleSpec(BaseModel):
    """Stopping criteria; the run ends when any of them fires"""
    max_updates: Optional[int] = Field(settings.DEFAULT_MAX_UPDATES, ge=1)
    max_epochs: Optional[int] = Field(None, ge=1)
    grad_tol: Optional[float] = Field(None, gt=0.0)
    subopt_tol: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def validate_terminates(self):
        if self.max_updates is None and self.max_epochs is None:
            raise ValueError("either max_updates or max_epochs must be set")
        return self


class RunConfig(BaseModel):
    """One experiment"""
    solver: Literal["ldqn", "daveqn", "gd"] = "ldqn"
    dataset: Union[DatasetSpec, SynthConfig, QuadraticSpec] = Field(
        default_factory=SynthConfig, discriminator="kind"
    )
    workers: int = Field(4, ge=1)
    memory: int = Field(settings.DEFAULT_MEMORY, ge=1)
    eta: Optional[float] = Field(None, gt=0.0, description="Stepsize; solver default when unset")
    gamma0: Optional[float] = Field(None, gt=0.0, description="Initial scale; L estimate when unset")
    delay: DelaySpec = Field(default_factory=DelaySpec)
    seed: int = 0
    stop: StopRuleSpec = Field(default_factory=StopRuleSpec)
    output_dir: Optional[str] = None
    snapshot_interval: int = Field(settings.SNAPSHOT_INTERVAL, ge=0)
    observe_every: int = Field(1, ge=1, description="Memory accounting cadence in master updates")
    fixed_gamma: bool = False
    exact_hessian: bool = Field(False, description="Quadratic test mode: workers hold their exact shard Hessian")
    runtime: Literal["simulated", "threaded"] = "simulated"

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v):
        if v is not None and not v < float("inf"):
            raise ValueError("eta must be finite")
        return v

    def resolved_eta(self, L: float) -> float:
        """Stepsize default: 0.8 for the quasi-Newton solvers, 1/L for gradient descent"""
        if self.eta is not None:
            return self.eta
        return 1.0 / L if self.solver == "gd" else settings.DEFAULT_ETA

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


# ==================== CONFIG FILE PARSING ====================

def _coerce(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def parse_key_values(text: str) -> Dict[str, Any]:
    """Parse `key=value` lines; dotted keys nest, values are JSON when they parse"""
    data: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        target = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = _coerce(value.strip())
    return data


def parse_config_text(text: str) -> Dict[str, Any]:
    """Config files are JSON objects or key=value lines"""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    return parse_key_values(text)


def parse_inline_spec(spec: str) -> Dict[str, Any]:
    """`d=50,N=2000` -> {"d": 50, "N": 2000}"""
    result: Dict[str, Any] = {}
    if not spec:
        return result
    for item in spec.split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value in {spec!r}")
        result[key.strip()] = _coerce(value.strip())
    return result


def parse_delay_spec(spec: str) -> Dict[str, Any]:
    """`uniform-integer:low=1,high=4,seed=3` -> DelaySpec fields"""
    kind, _, rest = spec.partition(":")
    params = parse_inline_spec(rest)
    seed = params.pop("seed", 0)
    if "latencies" in params and isinstance(params["latencies"], str):
        params["latencies"] = [float(v) for v in params["latencies"].split("/")]
    return {"kind": kind.strip(), "params": params, "seed": seed}


def merge_config(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; override values win"""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged
