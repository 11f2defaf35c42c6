#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.
// Nothing here calls into the code under test to produce an expected value.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mspa/eval.hpp"
#include "mspa/grid.hpp"
#include "mspa/tensor.hpp"

namespace mspa::checks {

struct CheckResult {
    bool passed = true;
    std::string detail;
};

// ---- finite differences ----------------------------------------------------

struct GradCase {
    std::string name;
    std::vector<Tensor> inputs;  // all requires_grad
    std::function<Tensor(const std::vector<Tensor>&)> loss;
};

struct GradReport {
    double worst_ratio = 0.0;  // max |analytic - numeric| / tolerance
    std::size_t checked = 0;
    std::string worst_where;
};

inline constexpr double kGradAbsTol = 1e-3;
inline constexpr double kGradRelTol = 1e-2;
inline constexpr float kGradStep = 2e-3f;

GradReport grad_check(const GradCase& c, float step = kGradStep);

// One random instance of every differentiable operation family.
std::vector<GradCase> gradient_cases(std::uint64_t seed);

// ≥ `instances` random instances per family, 4x4 to 8x8 spatial.
CheckResult gradient_suite(int instances, std::uint64_t seed);

// ---- brute-force oracles -------------------------------------------------

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts brute_counts(const BinaryMask& pred, const BinaryMask& truth);

struct BruteMetrics {
    double dsc, iou, sen, spe, acc;
};
BruteMetrics brute_metrics(const Counts& c);

// Pixel-loop mean of the feature columns labelled c; empty when none.
std::vector<double> brute_class_mean(const Tensor& feature, const BinaryMask& mask, int c);

CheckResult oracle_suite(int instances, std::uint64_t seed);

// Every combination of four prototype votes and one plain vote.
CheckResult voting_table();

CheckResult ramp_curve();

// dsc = 2 iou / (1 + iou) and dsc >= iou for every image of every record.
CheckResult metric_identities(const std::vector<MetricsRecord>& records);

}  // namespace mspa::checks
