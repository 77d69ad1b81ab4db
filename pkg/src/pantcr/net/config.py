"""Network configuration and the ablation switchboard."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

BRANCH_TOPOLOGIES = ("parallel", "series")
SE_MODES = ("swt", "channel_attention", "off")
FDR_MODES = ("fdr", "spatial_attention", "off")
IFC_MODES = ("ifc", "channel_attention", "off")


@dataclass(frozen=True)
class Ablation:
    use_dam: bool = True
    use_pan_prompt: bool = True
    use_nir_prompt: bool = True
    use_highpass: bool = True
    use_phase_branch: bool = True
    use_amp_branch: bool = True
    use_mafg: bool = True
    ifc_mode: str = "ifc"
    branch_topology: str = "parallel"
    se_mode: str = "swt"
    fdr_mode: str = "fdr"

    def __post_init__(self):
        for name, allowed in (
            ("ifc_mode", IFC_MODES),
            ("branch_topology", BRANCH_TOPOLOGIES),
            ("se_mode", SE_MODES),
            ("fdr_mode", FDR_MODES),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def use_ifc(self) -> bool:
        return self.ifc_mode == "ifc"


@dataclass(frozen=True)
class NetworkConfig:
    base_width: int = 16
    stage_widths: tuple = (16, 24, 48)
    dam_depth: int = 3
    pool_radius: int = 3
    se_heads: int = 2
    scale_ratio: int = 4
    bands: int = 4
    nir_band: int = 3
    zero_init_residuals: bool = False
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.stage_widths)
        object.__setattr__(self, "stage_widths", widths)
        if isinstance(self.ablation, dict):
            object.__setattr__(self, "ablation", Ablation(**self.ablation))
        if len(widths) != 3 or min(widths) < 1:
            raise ValueError(f"stage_widths must be three positive ints, got {widths}")
        if self.base_width != widths[0]:
            raise ValueError("base_width must equal stage_widths[0]")
        if self.dam_depth != 3:
            raise ValueError("DAM has exactly three convolutions")
        if any(w % self.se_heads for w in widths):
            raise ValueError(f"stage widths {widths} must be divisible by se_heads={self.se_heads}")
        if self.pool_radius < 1 or self.scale_ratio < 1 or self.bands < 1:
            raise ValueError("pool_radius, scale_ratio and bands must be positive")
        if not 0 <= self.nir_band < self.bands:
            raise ValueError(f"nir_band {self.nir_band} out of range for {self.bands} bands")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys {sorted(unknown)}")
        if "ablation" in d and isinstance(d["ablation"], dict):
            ab_known = {f.name for f in fields(Ablation)}
            bad = set(d["ablation"]) - ab_known
            if bad:
                raise ValueError(f"unknown ablation keys {sorted(bad)}")
            d["ablation"] = Ablation(**d["ablation"])
        if "stage_widths" in d:
            d["stage_widths"] = tuple(d["stage_widths"])
            d.setdefault("base_width", d["stage_widths"][0])
        return cls(**d)

    def with_ablation(self, **flags) -> "NetworkConfig":
        return replace(self, ablation=replace(self.ablation, **flags))


def tiny_config(**kw) -> NetworkConfig:
    """Small widths for gradient checks and smoke training."""
    kw.setdefault("stage_widths", (4, 6, 8))
    kw.setdefault("base_width", kw["stage_widths"][0])
    return NetworkConfig(**kw)


# Row name -> ablation overrides.  "full" is the unmodified model.
ABLATION_ROWS = {
    "full": {},
    "w/o-Deg-Aware": {"use_dam": False},
    "w/o-Pan": {"use_pan_prompt": False},
    "w/o-NIR": {"use_nir_prompt": False},
    "w/o-Pan&NIR": {"use_pan_prompt": False, "use_nir_prompt": False},
    "w/o-H": {"use_highpass": False},
    "w/o-Pha-Branch": {"use_phase_branch": False},
    "w/o-Amp-Branch": {"use_amp_branch": False},
    "FDR->Spa-Atten": {"fdr_mode": "spatial_attention"},
    "w/o-FDR": {"fdr_mode": "off"},
    "w/o-MAFG": {"use_mafg": False},
    "w/o-IFC": {"ifc_mode": "off"},
    "IFC->Cha-Atten": {"ifc_mode": "channel_attention"},
    "Parallel->Series": {"branch_topology": "series"},
    "w/o-SE": {"se_mode": "off"},
    "SE->Cha-Atten": {"se_mode": "channel_attention"},
}

OUT_OF_SCOPE_ROWS = {
    "Unified->Two-stage": "out of scope: requires external decloud model",
}


def ablation_config(row: str, base: NetworkConfig | None = None) -> NetworkConfig:
    base = base or NetworkConfig()
    if row in OUT_OF_SCOPE_ROWS:
        raise NotImplementedError(OUT_OF_SCOPE_ROWS[row])
    if row not in ABLATION_ROWS:
        raise ValueError(f"unknown ablation row {row!r}; known: {sorted(ABLATION_ROWS)}")
    return base.with_ablation(**ABLATION_ROWS[row])
