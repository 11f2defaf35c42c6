#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mspa/data.hpp"
#include "mspa/grid.hpp"
#include "mspa/net.hpp"

namespace mspa {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
    double dsc = 0, iou = 0, sen = 0, spe = 0, acc = 0;
};

struct MetricsRecord {
    std::vector<std::string> ids;
    std::vector<Metrics> per_image;
    Metrics mean;
};

// Foreground (1) is the positive class.
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

// Ratios with a zero denominator (e.g. no foreground in prediction nor
// truth for Dsc/IoU) are vacuously perfect: 1.0.
Metrics metrics(const ConfusionCounts& counts);

Metrics mean_metrics(const std::vector<Metrics>& items);

BinaryMask predict_mask(const SegNetParams& params, const Tensor& image);

// Per-image metrics of argmax predictions, plus their unweighted mean.
MetricsRecord evaluate(const SegNetParams& params, const std::vector<LabeledSample>& samples);
// Throws DataError if any sample lacks a mask.
MetricsRecord evaluate(const SegNetParams& params, const std::vector<Sample>& samples);

}  // namespace mspa
