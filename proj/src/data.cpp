#include "mspa/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>

namespace mspa {

namespace fs = std::filesystem;

// ---- synthetic generator -------------------------------------------------

namespace {

struct Blob {
    double cx, cy, radius, aspect, angle;
    double harm2, phase2, harm3, phase3;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / aspect;
        const double v = (-dx * s + dy * c) * aspect;
        const double rho = std::sqrt(u * u + v * v);
        const double phi = std::atan2(v, u);
        const double r = radius * (1.0 + harm2 * std::sin(2.0 * phi + phase2) + harm3 * std::sin(3.0 * phi + phase3));
        return rho <= r;
    }
};

struct Wave {
    double amplitude, fx, fy, phase;
};

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

}  // namespace

Sample generate_synthetic_sample(const SyntheticParams& params, std::uint64_t seed, std::uint64_t index) {
    const int n = params.size;
    if (n <= 0 || n % 4 != 0) throw std::invalid_argument("synthetic size must be a positive multiple of 4, got " + std::to_string(n));
    Rng rng(derive_seed(seed, "synthetic", index));
    const double two_pi = 2.0 * std::numbers::pi;

    BinaryMask mask(n, n, 0);
    bool accepted = false;
    for (int attempt = 0; attempt < 256 && !accepted; ++attempt) {
        const int blobs = uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 2;
        std::vector<Blob> shapes;
        for (int b = 0; b < blobs; ++b) {
            shapes.push_back(Blob{uniform(rng, 0.2, 0.8) * n, uniform(rng, 0.2, 0.8) * n, uniform(rng, 0.09, 0.22) * n,
                                  uniform(rng, 0.7, 1.3), uniform(rng, 0.0, two_pi), uniform(rng, 0.0, 0.15),
                                  uniform(rng, 0.0, two_pi), uniform(rng, 0.0, 0.15), uniform(rng, 0.0, two_pi)});
        }
        std::size_t fg = 0;
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                bool inside = false;
                for (const auto& s : shapes) inside = inside || s.contains(x + 0.5, y + 0.5);
                mask.at(y, x) = inside ? 1 : 0;
                fg += inside ? 1 : 0;
            }
        }
        const double frac = static_cast<double>(fg) / static_cast<double>(mask.size());
        accepted = frac >= params.min_foreground && frac <= params.max_foreground;
    }
    if (!accepted) throw std::logic_error("synthetic generator failed to place a blob within the area bounds");

    const double base = uniform(rng, 0.35, 0.65);
    const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    const double fg_mean = base + sign * params.contrast;
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k) {
        const double cycles = uniform(rng, 0.5, 2.5);
        const double dir = uniform(rng, 0.0, two_pi);
        waves.push_back(Wave{params.texture_amplitude / 3.0 * uniform(rng, 0.5, 1.5), cycles * std::cos(dir) / n,
                             cycles * std::sin(dir) / n, uniform(rng, 0.0, two_pi)});
    }
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    std::vector<float> pixels(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double v = mask.at(y, x) ? fg_mean : base;
            for (const auto& w : waves) v += w.amplitude * std::sin(two_pi * (w.fx * x + w.fy * y) + w.phase);
            v += noise(rng);
            pixels[static_cast<std::size_t>(y) * n + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    char id[32];
    std::snprintf(id, sizeof id, "img_%05llu", static_cast<unsigned long long>(index));
    return Sample{Tensor::from({1, n, n}, std::move(pixels)), std::move(mask), id};
}

std::vector<Sample> generate_synthetic(int count, const SyntheticParams& params, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("synthetic count must be >= 1, got " + std::to_string(count));
    std::vector<Sample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(generate_synthetic_sample(params, seed, static_cast<std::uint64_t>(i)));
    return out;
}

// ---- PGM I/O -------------------------------------------------------------

namespace {

[[noreturn]] void pgm_fail(const fs::path& path, const std::string& why) {
    throw DataError(path.string() + ": " + why);
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) pgm_fail(path, "cannot open file");
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    const auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    const auto read_int = [&](const char* field) {
        skip_space();
        long value = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + (bytes[pos] - '0');
            if (value > (1L << 24)) pgm_fail(path, std::string("malformed PGM header: ") + field + " too large");
            ++pos;
            ++digits;
        }
        if (digits == 0) pgm_fail(path, std::string("malformed PGM header: missing ") + field);
        return static_cast<int>(value);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') pgm_fail(path, "malformed PGM header: expected magic P5");
    pos = 2;
    GrayImage img;
    img.width = read_int("width");
    img.height = read_int("height");
    img.maxval = read_int("maxval");
    if (img.width <= 0 || img.height <= 0) pgm_fail(path, "malformed PGM header: zero extent");
    if (img.maxval <= 0 || img.maxval > 255) pgm_fail(path, "unsupported PGM maxval " + std::to_string(img.maxval) + " (need 1..255)");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        pgm_fail(path, "malformed PGM header: no separator before pixel data");
    }
    ++pos;
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
    if (bytes.size() - pos < count) {
        pgm_fail(path, "truncated pixel data: need " + std::to_string(count) + " bytes, have " + std::to_string(bytes.size() - pos));
    }
    img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + pos,
                      reinterpret_cast<const std::uint8_t*>(bytes.data()) + pos + count);
    return img;
}

void write_pgm(const fs::path& path, const GrayImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << "P5\n" << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

GrayImage to_gray(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("to_gray: expected 1 x H x W, got " + shape_str(image.shape()));
    GrayImage g{image.dim(2), image.dim(1), 255, {}};
    g.pixels.reserve(image.numel());
    for (float v : image.data()) g.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    return g;
}

GrayImage to_gray(const BinaryMask& mask) {
    GrayImage g{mask.width, mask.height, 255, {}};
    g.pixels.reserve(mask.size());
    for (auto v : mask.values) g.pixels.push_back(v ? 255 : 0);
    return g;
}

void write_sample(const fs::path& dir, const Sample& sample) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw DataError((dir / "images").string() + ": " + ec.message());
    write_pgm(dir / "images" / (sample.id + ".pgm"), to_gray(sample.image));
    if (sample.mask) {
        fs::create_directories(dir / "masks", ec);
        if (ec) throw DataError((dir / "masks").string() + ": " + ec.message());
        write_pgm(dir / "masks" / (sample.id + ".pgm"), to_gray(*sample.mask));
    }
}

std::vector<Sample> load_pair_dir(const fs::path& dir) {
    const fs::path images = dir / "images";
    const fs::path masks = dir / "masks";
    if (!fs::is_directory(images)) throw DataError(images.string() + ": not a directory");
    std::vector<fs::path> image_files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".pgm") image_files.push_back(e.path());
    std::sort(image_files.begin(), image_files.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

    std::set<std::string> stems;
    std::vector<Sample> out;
    out.reserve(image_files.size());
    for (const auto& file : image_files) {
        const std::string stem = file.stem().string();
        stems.insert(stem);
        const GrayImage g = read_pgm(file);
        std::vector<float> values(g.pixels.size());
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(g.pixels[i]) / static_cast<float>(g.maxval);
        Sample s{Tensor::from({1, g.height, g.width}, std::move(values)), std::nullopt, stem};
        const fs::path mask_file = masks / (stem + ".pgm");
        if (fs::exists(mask_file)) {
            const GrayImage m = read_pgm(mask_file);
            if (m.width != g.width || m.height != g.height) {
                throw DataError(mask_file.string() + ": mask is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                                " but image is " + std::to_string(g.width) + "x" + std::to_string(g.height));
            }
            BinaryMask mask(m.height, m.width, 0);
            for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (m.pixels[i] * 255 >= 128 * m.maxval) ? 1 : 0;
            s.mask = std::move(mask);
        }
        out.push_back(std::move(s));
    }
    if (fs::is_directory(masks)) {
        for (const auto& e : fs::directory_iterator(masks)) {
            if (e.is_regular_file() && e.path().extension() == ".pgm" && !stems.contains(e.path().stem().string())) {
                throw DataError(e.path().string() + ": mask has no matching image");
            }
        }
    }
    return out;
}

// ---- split ---------------------------------------------------------------

LabeledSample as_labeled(const Sample& s) {
    if (!s.mask) throw DataError("sample '" + s.id + "' has no mask");
    return LabeledSample{s.image, *s.mask, s.id};
}

SplitResult split(std::vector<Sample> samples, const SplitSpec& spec, int min_labeled) {
    if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0)) {
        throw DataError("labeled_fraction must be in (0, 1], got " + std::to_string(spec.labeled_fraction));
    }
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (samples[i].id == samples[i - 1].id) throw DataError("duplicate sample id '" + samples[i].id + "'");
    Rng rng(derive_seed(spec.seed, "split"));
    std::shuffle(samples.begin(), samples.end(), rng);

    const auto wanted = static_cast<std::size_t>(std::llround(spec.labeled_fraction * static_cast<double>(samples.size())));
    if (wanted < static_cast<std::size_t>(std::max(min_labeled, 1))) {
        throw DataError("split yields " + std::to_string(wanted) + " labeled samples; at least " +
                        std::to_string(std::max(min_labeled, 1)) + " required");
    }
    SplitResult r;
    for (auto& s : samples) {
        if (s.mask && r.labeled.size() < wanted) {
            r.labeled.push_back(LabeledSample{s.image, std::move(*s.mask), s.id});
        } else {
            if (s.mask) r.held_back_masks.emplace_back(s.id, std::move(*s.mask));
            r.unlabeled.push_back(UnlabeledSample{s.image, s.id});
        }
    }
    if (r.labeled.size() < wanted) {
        throw DataError("only " + std::to_string(r.labeled.size()) + " samples carry masks; " + std::to_string(wanted) +
                        " labeled samples requested");
    }
    return r;
}

// ---- augmentation --------------------------------------------------------

AugmentParams draw_augment(Rng& rng) {
    std::uniform_real_distribution<float> coin(0.0f, 1.0f);
    AugmentParams p;
    p.flip_horizontal = coin(rng) < 0.5f;
    p.flip_vertical = coin(rng) < 0.5f;
    p.brightness = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
    p.contrast = std::uniform_real_distribution<float>(0.9f, 1.1f)(rng);
    return p;
}

namespace {

template <typename T>
void flip_plane(T* v, int h, int w, bool horizontal, bool vertical) {
    if (horizontal)
        for (int y = 0; y < h; ++y) std::reverse(v + static_cast<std::size_t>(y) * w, v + static_cast<std::size_t>(y + 1) * w);
    if (vertical)
        for (int y = 0; y < h / 2; ++y)
            std::swap_ranges(v + static_cast<std::size_t>(y) * w, v + static_cast<std::size_t>(y + 1) * w,
                             v + static_cast<std::size_t>(h - 1 - y) * w);
}

}  // namespace

Tensor augment_image(const Tensor& image, const AugmentParams& p) {
    if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("augment: expected 1 x H x W, got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    std::vector<float> v(image.data().begin(), image.data().end());
    flip_plane(v.data(), h, w, p.flip_horizontal, p.flip_vertical);
    if (p.contrast == 1.0f && p.brightness == 0.0f) return Tensor::from(image.shape(), std::move(v));
    double m = 0.0;
    for (float x : v) m += x;
    const float mu = static_cast<float>(m / static_cast<double>(v.size()));
    for (auto& x : v) x = std::clamp((x - mu) * p.contrast + mu + p.brightness, 0.0f, 1.0f);
    return Tensor::from(image.shape(), std::move(v));
}

BinaryMask augment_mask(const BinaryMask& mask, const AugmentParams& p) {
    BinaryMask out = mask;
    flip_plane(out.values.data(), out.height, out.width, p.flip_horizontal, p.flip_vertical);
    return out;
}

Sample augment(const Sample& sample, Rng& rng) {
    const AugmentParams p = draw_augment(rng);
    Sample out{augment_image(sample.image, p), std::nullopt, sample.id};
    if (sample.mask) out.mask = augment_mask(*sample.mask, p);
    return out;
}

LabeledSample augment(const LabeledSample& sample, Rng& rng) {
    const AugmentParams p = draw_augment(rng);
    return LabeledSample{augment_image(sample.image, p), augment_mask(sample.mask, p), sample.id};
}

UnlabeledSample augment(const UnlabeledSample& sample, Rng& rng) {
    const AugmentParams p = draw_augment(rng);
    return UnlabeledSample{augment_image(sample.image, p), sample.id};
}

}  // namespace mspa
