#ifndef CAPARENA_DATASET_HPP
#define CAPARENA_DATASET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "caparena/errors.hpp"

namespace caparena::data {

// 36-symbol alphabet: A-Z uppercase, then 0-9. Index = class id.
inline constexpr int kNumClasses = 36;
inline constexpr int kLabelLength = 4;

char class_to_char(int class_id);
int char_to_class(char c);

// Four class indices, each in [0, 36).
struct CaptchaLabel {
    std::array<std::uint8_t, kLabelLength> chars{};

    std::string to_string() const;
    static CaptchaLabel from_string(const std::string& s);

    bool operator==(const CaptchaLabel&) const = default;
};

// Dense pixel grid, values in [0, 1], channel-major (c, y, x).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> values;

    static Image zeros(int h, int w, int c = 1);

    double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    bool operator==(const Image&) const = default;
};

struct Sample {
    Image image;
    CaptchaLabel label;
    std::uint64_t render_seed = 0;

    bool operator==(const Sample&) const = default;
};

struct Distortion {
    double rotation_deg = 0.0;  // per-glyph rotation drawn from [-r, r]
    int jitter_px = 0;          // per-glyph integer offset from [-j, j]
    double noise = 0.0;         // additive noise amplitude, per channel
};

struct GenConfig {
    int count = 0;
    int image_height = 24;
    int image_width = 72;
    int channels = 1;
    Distortion distortion{10.0, 2, 0.06};

    void validate() const;
};

struct Dataset {
    std::vector<Sample> samples;
    GenConfig generator_config;
    std::uint64_t master_seed = 0;

    std::size_t size() const { return samples.size(); }
};

// Glyph geometry of the built-in bitmap font after the fixed 2x upscale.
int glyph_height();
int glyph_width();

// Deterministic render of a 4-character label. Pure in (label, seed, cfg).
Image render_captcha(const CaptchaLabel& label, std::uint64_t seed, const GenConfig& cfg);

// cfg.count unique-label samples, labels drawn uniformly without replacement
// (rejection on duplicate label strings), per-sample render seeds derived
// from master_seed.
Dataset generate_dataset(const GenConfig& cfg, std::uint64_t master_seed);

// Deterministic shuffle keyed by the dataset seed, then an exact partition
// with |test| = round(test_fraction * |ds|).
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction);

// Versioned binary container; round-trip is bit-exact.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// UTF-8 manifest, one "label,seed" line per sample.
void write_manifest(const Dataset& ds, const std::string& path);

// 8-bit portable graymap for inspection (channel mean when channels > 1).
void write_pgm(const Image& img, const std::string& path);

}  // namespace caparena::data

#endif
