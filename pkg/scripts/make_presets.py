"""Regenerate the bundled ``.cfg`` presets from the dataclass defaults."""

from pathlib import Path

from avdit.config import RunConfig, serialize
from avdit.trainer import ABLATIONS

OUT = Path(__file__).resolve().parents[1] / "src" / "avdit" / "presets"

XL2 = {
    "model.hidden": 1152, "model.heads": 16, "model.depth": 28, "model.patch": 2,
    "model.frames": 16, "model.video_height": 32, "model.video_width": 32, "model.video_channels": 4,
    "model.audio_time": 40, "model.audio_freq": 16, "model.audio_channels": 8,
    "model.ratio_temporal": 8, "model.ratio_audio": 2, "model.ratio_fusion": 2,
    "model.freq_dim": 256, "model.variance": "learned", "model.backbone": "random",
    "train.steps": 100000,
}

RATIOS = [(8, 2, 2), (4, 2, 2), (2, 2, 2), (4, 4, 2), (4, 8, 2), (4, 2, 4), (4, 2, 8)]


def presets() -> dict[str, tuple[str, RunConfig]]:
    base = RunConfig()
    out = {
        "desk": ("desk-scale defaults (single CPU core)", base),
        "desk-crossattn": ("desk scale, two new cross-attention blocks in place of pooled self-attention fusion",
                           base.replace(**{"model.fusion_mode": "cross"})),
        "xl2-paper": ("XL/2-sized architecture; parameter reporting only", base.replace(**XL2)),
        "xl2-paper-crossattn": ("XL/2-sized architecture with cross-attention fusion; parameter reporting only",
                                base.replace(**XL2, **{"model.fusion_mode": "cross"})),
    }
    for name, over in ABLATIONS.items():
        if name != "full":
            out[f"ablate-{name.replace('_', '-')}"] = (f"desk scale, ablation variant {name}", base.replace(**over))
    for rt, ra, rf in RATIOS:
        over = {"model.ratio_temporal": rt, "model.ratio_audio": ra, "model.ratio_fusion": rf}
        out[f"ratios-{rt}-{ra}-{rf}"] = (f"desk scale, adapter ratios temporal {rt}, audio {ra}, fusion {rf}",
                                         base.replace(**over))
    return out


def main() -> None:
    for name, (title, cfg) in presets().items():
        (OUT / f"{name}.cfg").write_text(f"# {title}\n" + serialize(cfg))
        print(f"wrote {name}.cfg")


if __name__ == "__main__":
    main()
