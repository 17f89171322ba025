#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lgs/tensor.hpp"

namespace lgs {

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), summed over all pixels.
Tensor dice_loss(const Tensor& probs, const Tensor& target, float eps = 1.0f);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
/// The clamp passes no gradient outside its range.
Tensor bce_loss(const Tensor& probs, const Tensor& target);

/// dice_loss + bce_loss with unit weights.
Tensor combined_loss(const Tensor& probs, const Tensor& target);

using BinaryMask = std::vector<std::uint8_t>;

struct SegMetrics {
    double accuracy = 0.0;
    double dice = 0.0;
    double jaccard = 0.0;
};

/// Pixel accuracy, Dice and Jaccard of a predicted mask. Two empty masks
/// score dice = jaccard = 1.
SegMetrics segmentation_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

/// 1 where prob > threshold.
BinaryMask threshold_mask(std::span<const float> probs, float threshold = 0.5f);

}  // namespace lgs
