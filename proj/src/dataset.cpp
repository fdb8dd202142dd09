#include "caparena/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "caparena/binio.hpp"
#include "caparena/parallel.hpp"
#include "caparena/rng.hpp"

namespace caparena::data {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

// 5x7 bitmap font, one row string per scanline, '#' = ink.
constexpr int kFontW = 5;
constexpr int kFontH = 7;
constexpr int kScale = 2;

const char* const kFont[kNumClasses][kFontH] = {
    {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // A
    {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."},  // B
    {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."},  // C
    {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."},  // D
    {"#####", "#....", "#....", "####.", "#....", "#....", "#####"},  // E
    {"#####", "#....", "#....", "####.", "#....", "#....", "#...."},  // F
    {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"},  // G
    {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // H
    {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},  // I
    {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."},  // J
    {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"},  // K
    {"#....", "#....", "#....", "#....", "#....", "#....", "#####"},  // L
    {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"},  // M
    {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"},  // N
    {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // O
    {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."},  // P
    {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"},  // Q
    {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"},  // R
    {".####", "#....", "#....", ".###.", "....#", "....#", "####."},  // S
    {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."},  // T
    {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // U
    {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."},  // V
    {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"},  // W
    {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"},  // X
    {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."},  // Y
    {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"},  // Z
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},  // 0
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},  // 1
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},  // 2
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},  // 3
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},  // 4
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},  // 5
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},  // 6
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},  // 7
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},  // 8
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},  // 9
};

double glyph_value(int cls, int gy, int gx) {
    // Fixed kScale upscale; outside the box reads as background.
    if (gy < 0 || gx < 0 || gy >= kFontH * kScale || gx >= kFontW * kScale) return 0.0;
    return kFont[cls][gy / kScale][gx / kScale] == '#' ? 1.0 : 0.0;
}

// Bilinear sample of the upscaled glyph at continuous coordinates.
double glyph_sample(int cls, double y, double x) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0;
    const double fx = x - x0;
    const double v00 = glyph_value(cls, y0, x0);
    const double v01 = glyph_value(cls, y0, x0 + 1);
    const double v10 = glyph_value(cls, y0 + 1, x0);
    const double v11 = glyph_value(cls, y0 + 1, x0 + 1);
    return v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) + v11 * fy * fx;
}

int clamp_int(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

void draw_glyph(Image& img, int cls, int top, int left, double angle_deg) {
    const int gh = kFontH * kScale;
    const int gw = kFontW * kScale;
    if (angle_deg == 0.0) {
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                const double v = glyph_value(cls, gy, gx);
                if (v <= 0.0) continue;
                for (int c = 0; c < img.channels; ++c)
                    img.at(c, top + gy, left + gx) = std::max(img.at(c, top + gy, left + gx), v);
            }
        return;
    }
    // Rotate around the glyph center by inverse-mapping each canvas pixel in
    // an expanded box back into glyph space.
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double cy = (gh - 1) / 2.0;
    const double cx = (gw - 1) / 2.0;
    const int margin = 4;
    for (int dy = -margin; dy < gh + margin; ++dy)
        for (int dx = -margin; dx < gw + margin; ++dx) {
            const int py = top + dy;
            const int px = left + dx;
            if (py < 0 || px < 0 || py >= img.height || px >= img.width) continue;
            const double ry = dy - cy;
            const double rx = dx - cx;
            const double sy = cy + (cs * ry + sn * rx);
            const double sx = cx + (-sn * ry + cs * rx);
            const double v = glyph_sample(cls, sy, sx);
            if (v <= 0.0) continue;
            for (int c = 0; c < img.channels; ++c)
                img.at(c, py, px) = std::max(img.at(c, py, px), std::min(1.0, v));
        }
}

constexpr std::uint64_t kLabelSpace = 36ULL * 36ULL * 36ULL * 36ULL;  // 1679616

constexpr char kDatasetMagic[4] = {'A', 'C', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

char class_to_char(int class_id) {
    if (class_id < 0 || class_id >= kNumClasses)
        throw DomainError("class index out of range: " + std::to_string(class_id));
    return kAlphabet[class_id];
}

int char_to_class(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= '0' && c <= '9') return 26 + (c - '0');
    throw DomainError(std::string("character outside alphabet: '") + c + "'");
}

std::string CaptchaLabel::to_string() const {
    std::string s(kLabelLength, '?');
    for (int i = 0; i < kLabelLength; ++i) s[i] = class_to_char(chars[i]);
    return s;
}

CaptchaLabel CaptchaLabel::from_string(const std::string& s) {
    if (s.size() != kLabelLength)
        throw DomainError("label must have exactly 4 characters, got \"" + s + "\"");
    CaptchaLabel l;
    for (int i = 0; i < kLabelLength; ++i) l.chars[i] = static_cast<std::uint8_t>(char_to_class(s[i]));
    return l;
}

Image Image::zeros(int h, int w, int c) {
    Image img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.values.assign(static_cast<std::size_t>(h) * w * c, 0.0);
    return img;
}

int glyph_height() { return kFontH * kScale; }
int glyph_width() { return kFontW * kScale; }

void GenConfig::validate() const {
    if (count <= 0) throw ConfigError("count must be positive");
    if (static_cast<std::uint64_t>(count) > kLabelSpace)
        throw ConfigError("count " + std::to_string(count) + " exceeds the label space limit of " +
                          std::to_string(kLabelSpace) + " duplicate-free labels");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (image_height < glyph_height() + 2 || image_width < kLabelLength * (glyph_width() + 2))
        throw ConfigError("image too small for 4 glyphs: need at least " +
                          std::to_string(glyph_height() + 2) + "x" +
                          std::to_string(kLabelLength * (glyph_width() + 2)));
    if (distortion.rotation_deg < 0 || distortion.jitter_px < 0 || distortion.noise < 0)
        throw ConfigError("distortion ranges must be non-negative");
    if (distortion.noise > 1.0) throw ConfigError("noise amplitude must be in [0,1]");
}

Image render_captcha(const CaptchaLabel& label, std::uint64_t seed, const GenConfig& cfg) {
    Image img = Image::zeros(cfg.image_height, cfg.image_width, cfg.channels);
    Rng rng(seed);

    const int gh = glyph_height();
    const int gw = glyph_width();
    const int slot_w = cfg.image_width / kLabelLength;
    const int base_top = (cfg.image_height - gh) / 2;

    for (int i = 0; i < kLabelLength; ++i) {
        const double angle = cfg.distortion.rotation_deg == 0.0
                                 ? 0.0
                                 : rng.uniform(-cfg.distortion.rotation_deg, cfg.distortion.rotation_deg);
        const int j = cfg.distortion.jitter_px;
        const int dx = j == 0 ? 0 : static_cast<int>(rng.uniform_int(-j, j));
        const int dy = j == 0 ? 0 : static_cast<int>(rng.uniform_int(-j, j));
        const int left = clamp_int(i * slot_w + (slot_w - gw) / 2 + dx, 0, cfg.image_width - gw);
        const int top = clamp_int(base_top + dy, 0, cfg.image_height - gh);
        draw_glyph(img, label.chars[i], top, left, angle);
    }

    if (cfg.distortion.noise > 0.0) {
        const double a = cfg.distortion.noise;
        for (double& v : img.values) v += rng.uniform(-a, a);
    }
    for (double& v : img.values) v = std::max(0.0, std::min(1.0, v));
    return img;
}

Dataset generate_dataset(const GenConfig& cfg, std::uint64_t master_seed) {
    cfg.validate();

    // Label selection is serial (rejection sampling against the seen set);
    // rendering is pure per sample and safe to parallelize.
    Rng label_rng(derive_seed(master_seed, "labels"));
    std::unordered_set<std::string> seen;
    seen.reserve(static_cast<std::size_t>(cfg.count) * 2);
    std::vector<CaptchaLabel> labels;
    labels.reserve(cfg.count);
    while (labels.size() < static_cast<std::size_t>(cfg.count)) {
        CaptchaLabel l;
        for (int i = 0; i < kLabelLength; ++i)
            l.chars[i] = static_cast<std::uint8_t>(label_rng.index(kNumClasses));
        if (seen.insert(l.to_string()).second) labels.push_back(l);
    }

    Dataset ds;
    ds.generator_config = cfg;
    ds.master_seed = master_seed;
    ds.samples.resize(cfg.count);
    parallel_for(static_cast<std::size_t>(cfg.count), [&](std::size_t i) {
        Sample& s = ds.samples[i];
        s.label = labels[i];
        s.render_seed = derive_seed(master_seed, 0x52454E44ULL + i);
        s.image = render_captcha(s.label, s.render_seed, cfg);
    });
    return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in [0,1), got " + std::to_string(test_fraction));

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(ds.master_seed, "split"));
    rng.shuffle(order);

    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));

    Dataset train, test;
    train.generator_config = test.generator_config = ds.generator_config;
    train.master_seed = test.master_seed = ds.master_seed;
    test.samples.reserve(n_test);
    train.samples.reserve(ds.size() - n_test);
    for (std::size_t k = 0; k < order.size(); ++k)
        (k < n_test ? test : train).samples.push_back(ds.samples[order[k]]);
    return {std::move(train), std::move(test)};
}

namespace {

void write_gen_config(BinWriter& w, const GenConfig& cfg) {
    w.u32(static_cast<std::uint32_t>(cfg.count));
    w.u32(static_cast<std::uint32_t>(cfg.image_height));
    w.u32(static_cast<std::uint32_t>(cfg.image_width));
    w.u32(static_cast<std::uint32_t>(cfg.channels));
    w.f64(cfg.distortion.rotation_deg);
    w.u32(static_cast<std::uint32_t>(cfg.distortion.jitter_px));
    w.f64(cfg.distortion.noise);
}

GenConfig read_gen_config(BinReader& r) {
    GenConfig cfg;
    cfg.count = static_cast<int>(r.u32());
    cfg.image_height = static_cast<int>(r.u32());
    cfg.image_width = static_cast<int>(r.u32());
    cfg.channels = static_cast<int>(r.u32());
    cfg.distortion.rotation_deg = r.f64();
    cfg.distortion.jitter_px = static_cast<int>(r.u32());
    cfg.distortion.noise = r.f64();
    return cfg;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    BinWriter w(path);
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    write_gen_config(w, ds.generator_config);
    w.u64(ds.master_seed);
    w.u64(ds.size());
    for (const Sample& s : ds.samples) {
        for (int i = 0; i < kLabelLength; ++i) w.u8(s.label.chars[i]);
        w.u64(s.render_seed);
        w.f64_block(s.image.values);
    }
    w.close();
}

Dataset load_dataset(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kDatasetMagic, "dataset");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError("unsupported dataset format version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kDatasetVersion) + "): " + path);
    Dataset ds;
    ds.generator_config = read_gen_config(r);
    ds.master_seed = r.u64();
    const std::uint64_t n = r.u64();
    if (n > kLabelSpace) throw FormatError("sample count out of range in " + path);
    const auto& cfg = ds.generator_config;
    const std::size_t expected = static_cast<std::size_t>(cfg.image_height) * cfg.image_width * cfg.channels;
    ds.samples.resize(n);
    for (Sample& s : ds.samples) {
        for (int i = 0; i < kLabelLength; ++i) {
            const std::uint8_t c = r.u8();
            if (c >= kNumClasses) throw FormatError("class index out of range in " + path);
            s.label.chars[i] = c;
        }
        s.render_seed = r.u64();
        s.image.height = cfg.image_height;
        s.image.width = cfg.image_width;
        s.image.channels = cfg.channels;
        s.image.values = r.f64_block();
        if (s.image.values.size() != expected)
            throw FormatError("pixel block size mismatch in " + path);
    }
    r.expect_eof();
    return ds;
}

void write_manifest(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const Sample& s : ds.samples)
        out << s.label.to_string() << ',' << s.render_seed << '\n';
    if (!out) throw IoError("write failed: " + path);
}

void write_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double v = 0;
            for (int c = 0; c < img.channels; ++c) v += img.at(c, y, x);
            v /= img.channels;
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace caparena::data
