"""
End-to-end operations shared by the CLI and the tests: training from a
corpus, keyword-cued enhancement of one mixture, and per-scene evaluation.
"""

import logging

import numpy as np

from .audio_io import AudioBuffer, region_to_frames, require_sample_rate
from .beamformer import apply_filter, estimate_filter, extend_mask, oracle_masks
from .errors import ValidationError
from .features import accumulate_stats, splice
from .masknet import forward, init_model, train
from .metrics import output_sir, sdri
from .simulator import build_training_set
from .stft import istft, magnitude, stft_multichannel

logger = logging.getLogger(__name__)

__all__ = ["train_model", "keyword_masks", "enhance", "evaluate_scene"]


def train_model(keywords, backgrounds, cfg, count=None, on_epoch=None):
    """
    Mix, compute stats, initialise and train a mask net.

    Arguments:
        keywords, backgrounds: lists of (mono samples, speaker label)
        cfg: PipelineConfig
    Return:
        model, per-epoch losses, training examples
    """
    count = cfg.simulate.mixtures if count is None else count
    examples = build_training_set(
        keywords, backgrounds, count, cfg.simulate.snr_mean,
        cfg.simulate.snr_std, cfg.train.seed, cfg.stft, cfg.feature.base_dim)
    stats = accumulate_stats(splice(ex.magnitude, cfg.feature)
                             for ex in examples)
    model = init_model(cfg.model_dims, cfg.train.seed, stats)
    logger.info("training on %d mixtures, %d frames", len(examples),
                sum(ex.magnitude.shape[0] for ex in examples))
    model, losses = train(model, [(ex.magnitude, ex.ibm) for ex in examples],
                          cfg.train, cfg.feature, on_epoch=on_epoch)
    return model, losses, examples


def keyword_masks(model, Y, frames, feature_cfg):
    """Per-channel mask net outputs over the region: two C x R x K arrays."""
    kw, nk = [], []
    for ch in range(Y.shape[0]):
        pair = forward(model, magnitude(Y[ch, frames]), feature_cfg)
        kw.append(pair.keyword)
        nk.append(pair.non_keyword)
    return np.stack(kw), np.stack(nk)


def enhance(mixture, region, cfg, model=None, oracle=None):
    """
    Estimate the MVDR filter once over the keyword region and apply it from
    the keyword onset to the end; earlier frames pass channel 1 through.

    Arguments:
        mixture: AudioBuffer with >= 2 channels
        region: KeywordRegion
        model: MaskNetModel (ignored when oracle is given)
        oracle: (target AudioBuffer, interference AudioBuffer) clean
            components; masks become per-channel IBMs
    Return:
        (mono AudioBuffer, BeamformerFilter, diagnostics dict)
    """
    require_sample_rate(mixture, cfg.stft.sample_rate)
    if mixture.channels < 2:
        raise ValidationError("beamforming requires a multichannel mixture")
    region.check_within(mixture.duration_s)
    Y = stft_multichannel(mixture.samples, cfg.stft)
    frames = region_to_frames(region, cfg.stft.frame_len, cfg.stft.frame_shift,
                              Y.shape[1], cfg.stft.sample_rate)
    if oracle is not None:
        target, interf = oracle
        km, nm = oracle_masks(stft_multichannel(target.samples, cfg.stft),
                              stft_multichannel(interf.samples, cfg.stft),
                              frames, cfg.feature.base_dim)
    elif model is not None:
        km, nm = keyword_masks(model, Y, frames, cfg.feature)
    else:
        raise ValidationError("enhance needs a model or oracle references")

    gamma, diagnostics = estimate_filter(
        Y, km, nm, frames, delta=cfg.beamform.delta_loading,
        power_iter_tol=cfg.beamform.power_iter_tol)
    out = Y[0].copy()
    onset = int(frames[0])
    out[onset:] = apply_filter(gamma, Y[:, onset:])
    samples = istft(out, cfg.stft)
    n = mixture.num_samples
    samples = np.pad(samples, (0, max(0, n - samples.size)))[:n]
    diagnostics["mode"] = "oracle" if oracle is not None else "model"
    diagnostics["filter_onset_frame"] = onset
    return AudioBuffer(samples, mixture.sample_rate_hz), gamma, diagnostics


def evaluate_scene(render, model, cfg, scene_id="scene"):
    """
    SDRi of the estimated and ideal masks (channel 1, keyword region) and
    output SIR of the estimated-mask and IBM filters over the frames after
    the keyword.
    Return:
        (list of four CSV rows, detail dict)
    """
    stft_cfg = cfg.stft
    Y = stft_multichannel(render.mixture.samples, stft_cfg)
    Yt = stft_multichannel(render.target.samples, stft_cfg)
    Yi = stft_multichannel(render.interference.samples, stft_cfg)
    frames = region_to_frames(render.keyword_region, stft_cfg.frame_len,
                              stft_cfg.frame_shift, Y.shape[1],
                              stft_cfg.sample_rate)
    post = np.arange(frames[-1] + 1, Y.shape[1])
    if post.size == 0:
        raise ValidationError(f"{scene_id}: no frames after the keyword")
    num_bins = Y.shape[2]

    km, nm = keyword_masks(model, Y, frames, cfg.feature)
    ik, inn = oracle_masks(Yt, Yi, frames, cfg.feature.base_dim)

    def score(mask, desired, undesired):
        return sdri(extend_mask(mask, num_bins), desired[0, frames],
                    undesired[0, frames])

    reports = {
        "m_k": score(km[0], Yt, Yi),
        "ibm_k": score(ik[0], Yt, Yi),
        "m_n": score(nm[0], Yi, Yt),
        "ibm_n": score(inn[0], Yi, Yt),
    }
    bf_kwargs = dict(delta=cfg.beamform.delta_loading,
                     power_iter_tol=cfg.beamform.power_iter_tol)
    est_filter, est_diag = estimate_filter(Y, km, nm, frames, **bf_kwargs)
    ibm_filter, _ = estimate_filter(Y, ik, inn, frames, **bf_kwargs)
    sir_est = output_sir(est_filter, Yt, Yi, post)
    sir_ibm = output_sir(ibm_filter, Yt, Yi, post)

    rows = []
    for mask_type, rep in reports.items():
        sir = sir_ibm if mask_type.startswith("ibm") else sir_est
        rows.append({"scene_id": scene_id, "mask_type": mask_type,
                     "sdri_db": rep.sdri_db, "xi_db": rep.xi_db,
                     "sir_improvement_db": sir.improvement_db})
    detail = {
        "scene_id": scene_id,
        "sdri": {k: {"sdri_db": r.sdri_db, "xi_db": r.xi_db,
                     "excluded_bins": r.excluded_bins}
                 for k, r in reports.items()},
        "sir_estimated": vars(sir_est),
        "sir_ibm": vars(sir_ibm),
        "filter_diagnostics": est_diag,
        "example": {"mixture_mag": np.abs(Y[0, frames]),
                    "m_k": km[0], "m_n": nm[0], "ibm_k": ik[0],
                    "ibm_n": inn[0]},
    }
    return rows, detail
