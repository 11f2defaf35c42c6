#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mspa/grid.hpp"
#include "mspa/random.hpp"
#include "mspa/tensor.hpp"

namespace mspa {

// Image is 1 x H x W with values in [0, 1]; mask is absent for unlabeled data.
struct Sample {
    Tensor image;
    std::optional<BinaryMask> mask;
    std::string id;
};

struct LabeledSample {
    Tensor image;
    BinaryMask mask;
    std::string id;
};

// No mask field: unlabeled images cannot leak labels into training.
struct UnlabeledSample {
    Tensor image;
    std::string id;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- synthetic generator -------------------------------------------------

struct SyntheticParams {
    int size = 64;
    float contrast = 0.25f;
    float noise_sigma = 0.1f;
    float texture_amplitude = 0.06f;
    float min_foreground = 0.02f;
    float max_foreground = 0.40f;
};

// Sample `index` of the stream for `seed`; independent of other indices.
Sample generate_synthetic_sample(const SyntheticParams& params, std::uint64_t seed, std::uint64_t index);
std::vector<Sample> generate_synthetic(int count, const SyntheticParams& params, std::uint64_t seed);
inline std::vector<Sample> generate_synthetic(int count, int size, std::uint64_t seed) {
    SyntheticParams p;
    p.size = size;
    return generate_synthetic(count, p, seed);
}

// ---- PGM I/O -------------------------------------------------------------

struct GrayImage {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint8_t> pixels;
};

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

GrayImage to_gray(const Tensor& image);
GrayImage to_gray(const BinaryMask& mask);

// Writes images/<id>.pgm and, when present, masks/<id>.pgm under `dir`.
void write_sample(const std::filesystem::path& dir, const Sample& sample);

// Reads dir/images/*.pgm with optional dir/masks/<stem>.pgm, sorted by stem.
// Image bytes map to value / maxval; mask bytes >= 128 map to foreground.
std::vector<Sample> load_pair_dir(const std::filesystem::path& dir);

// ---- split ---------------------------------------------------------------

struct SplitSpec {
    double labeled_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<LabeledSample> labeled;
    std::vector<UnlabeledSample> unlabeled;
    // Ground truth of the unlabeled part, kept only for evaluation.
    std::vector<std::pair<std::string, BinaryMask>> held_back_masks;
};

// Seeded shuffle of the id-sorted samples, then a prefix of
// round(fraction * total) labeled samples. Samples without a mask are
// always unlabeled. Throws DataError when fewer than `min_labeled` result.
SplitResult split(std::vector<Sample> samples, const SplitSpec& spec, int min_labeled = 1);

LabeledSample as_labeled(const Sample& s);

// ---- augmentation --------------------------------------------------------

struct AugmentParams {
    bool flip_horizontal = false;
    bool flip_vertical = false;
    float brightness = 0.0f;  // additive, in [-0.1, 0.1]
    float contrast = 1.0f;    // scale about the image mean, in [0.9, 1.1]
};

AugmentParams draw_augment(Rng& rng);
Tensor augment_image(const Tensor& image, const AugmentParams& p);
BinaryMask augment_mask(const BinaryMask& mask, const AugmentParams& p);

Sample augment(const Sample& sample, Rng& rng);
LabeledSample augment(const LabeledSample& sample, Rng& rng);
UnlabeledSample augment(const UnlabeledSample& sample, Rng& rng);

}  // namespace mspa
