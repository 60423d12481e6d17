from avdit.config import RunConfig

TINY_RUN = {
    "model.hidden": 16, "model.heads": 2, "model.depth": 1, "model.patch": 2, "model.frames": 2,
    "model.video_height": 4, "model.video_width": 4, "model.video_channels": 2,
    "model.audio_time": 4, "model.audio_freq": 2, "model.audio_channels": 2,
    "model.ratio_temporal": 2, "model.ratio_audio": 2, "model.ratio_fusion": 2,
    "model.freq_dim": 16, "model.backbone": "random", "data.factors": 3,
    "train.steps": 40, "train.batch": 4, "train.eval_every": 20, "train.eval_samples": 32,
}


def tiny_run(**over) -> RunConfig:
    return RunConfig().replace(**{**TINY_RUN, **over})
