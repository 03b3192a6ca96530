"""The full three-stage network: decomposition, per-component encoders
with self-reconstruction decoders, and the bilinear quality head."""

import torch
import torch.nn as nn

from .decomposition import DecompositionNet, PenaltyParams, decomposition_loss
from .encoding import ColorLossParams, FeatureDecoder, FeatureEncoder, feature_loss
from .head import QualityHead, quality_loss


class FullModel(nn.Module):
    def __init__(self):
        super().__init__()
        self.decomp = DecompositionNet()
        self.encoder_r = FeatureEncoder(3)
        self.encoder_l = FeatureEncoder(1)
        self.decoder_r = FeatureDecoder(3)
        self.decoder_l = FeatureDecoder(1)
        self.head = QualityHead()

    def losses(self, i_n, i_e, targets, penalty=PenaltyParams(), color=ColorLossParams()):
        """Component losses for one training batch of (NTI, EAI) pairs.

        The pair goes through the shared decomposition network; the
        feature and quality paths use only the NTI components, matching
        the EAI-free test-time path.
        """
        batch = torch.cat([i_n, i_e], dim=0)
        reflectance, illumination = self.decomp(batch)
        n = i_n.shape[0]
        r_n, r_e = reflectance[:n], reflectance[n:]
        l_n, l_e = illumination[:n], illumination[n:]
        idm = decomposition_loss(i_n, i_e, (r_n, l_n), (r_e, l_e), penalty)

        pyr_r = self.encoder_r(r_n)
        pyr_l = self.encoder_l(l_n)
        feat = feature_loss(
            r_n, self.decoder_r(pyr_r[-1]), l_n, self.decoder_l(pyr_l[-1]), color
        )

        predictions = self.head(pyr_r, pyr_l)
        quality = quality_loss(predictions, targets)
        return idm, feat, quality, predictions

    def predict_score(self, i_n):
        """Quality score for a batch of night-time images; no EAI used."""
        r, l = self.decomp(i_n)
        return self.head(self.encoder_r(r), self.encoder_l(l))
