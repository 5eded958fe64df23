"""Small synthetic training protocol shared by the trainer and acceptance tests."""

import functools

from vibneedle import dataio, sim, trainer

SHAPE = (96, 96)
FRAMES = 74          # 74 - (30 + 5) + 1 = 40 pairs per video


def video(seed, angle, contrast=0.1, amplitude=1.0, n_frames=FRAMES):
    prof = sim.InsertionProfile(entry_point=(4.0, 6.0), shaft_angle_deg=angle, initial_depth=30.0,
                                velocity=sim.advance_retract_velocity(n_frames, 0.4, 30, 10),
                                needle_contrast=contrast)
    frames, truths = sim.generate_sequence(prof, sim.VibrationSpec(amplitude=amplitude), seed, n_frames,
                                           shape=SHAPE)
    return dataio.video_from_sim(f"syn{seed:03d}", frames, truths, 30.0, angle)


@functools.lru_cache(maxsize=None)
def protocol(cfg=trainer.TrainConfig()):
    """(train, val, test) pair lists; 200 training pairs from 5 videos."""
    angles = (15.0, 30.0)

    def pairs(seeds):
        out = []
        for s in seeds:
            out.extend(trainer.pairs_from_video(video(s, angles[s % 2]), cfg))
        return out

    return pairs(range(5)), pairs([10]), pairs([20, 21])
