#include "caparena/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "caparena/binio.hpp"

namespace caparena::net {

namespace {

void require_shape(bool ok, const std::string& what, const Tensor& t) {
    if (!ok) throw ShapeError(what + ", got " + t.shape_str());
}

// Output extent of a strided window sweep with zero padding.
int conv_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Inclusive output-index range [lo, hi] such that every tap
// o*s - p + koff lands inside [0, in). Empty when lo > hi.
std::pair<int, int> tap_range(int in, int out, int s, int p, int koff) {
    const int shift = p - koff;
    int lo = shift <= 0 ? 0 : (shift + s - 1) / s;
    int hi = in - 1 + shift;
    hi = hi < 0 ? -1 : std::min(out - 1, hi / s);
    return {lo, hi};
}

}  // namespace

Conv2D::Conv2D(int in_channels, int out_channels, int kernel, int stride, int padding)
    : in_c_(in_channels), out_c_(out_channels), k_(kernel), s_(stride), p_(padding) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0)
        throw ConfigError("conv needs positive channels/kernel/stride and non-negative padding");
    weight = Tensor(out_c_, in_c_, k_, k_);
    bias = Tensor(out_c_, 1, 1, 1);
    dweight = Tensor(out_c_, in_c_, k_, k_);
    dbias = Tensor(out_c_, 1, 1, 1);
}

void Conv2D::init_params(Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in_c_) * k_ * k_);
    for (double& v : weight.v) v = rng.uniform(-b, b);
    std::fill(bias.v.begin(), bias.v.end(), 0.0);
}

std::vector<ParamRef> Conv2D::params() {
    return {{"weight", &weight, &dweight}, {"bias", &bias, &dbias}};
}

Tensor Conv2D::forward(const Tensor& x, bool) {
    require_shape(x.c == in_c_, "conv expects " + std::to_string(in_c_) + " input channels", x);
    const int oh = conv_extent(x.h, k_, s_, p_);
    const int ow = conv_extent(x.w, k_, s_, p_);
    require_shape(oh >= 1 && ow >= 1, "conv input smaller than kernel", x);
    x_ = x;

    Tensor y(x.n, out_c_, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < out_c_; ++oc) {
            double* ybase = &y.v[y.offset(n, oc, 0, 0)];
            std::fill(ybase, ybase + static_cast<std::size_t>(oh) * ow, bias.v[oc]);
            for (int ic = 0; ic < in_c_; ++ic)
                for (int ky = 0; ky < k_; ++ky) {
                    const auto [oy_lo, oy_hi] = tap_range(x.h, oh, s_, p_, ky);
                    for (int kx = 0; kx < k_; ++kx) {
                        const auto [ox_lo, ox_hi] = tap_range(x.w, ow, s_, p_, kx);
                        if (ox_lo > ox_hi) continue;
                        const double wv = weight.at(oc, ic, ky, kx);
                        const int xoff = kx - p_;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const double* xrow = &x.v[x.offset(n, ic, oy * s_ - p_ + ky, 0)];
                            double* yrow = ybase + static_cast<std::size_t>(oy) * ow;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                yrow[ox] += wv * xrow[ox * s_ + xoff];
                        }
                    }
                }
        }
    return y;
}

Tensor Conv2D::backward(const Tensor& dy) {
    const int oh = dy.h, ow = dy.w;
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    std::fill(dweight.v.begin(), dweight.v.end(), 0.0);
    std::fill(dbias.v.begin(), dbias.v.end(), 0.0);

    for (int n = 0; n < x_.n; ++n)
        for (int oc = 0; oc < out_c_; ++oc) {
            const double* gybase = &dy.v[dy.offset(n, oc, 0, 0)];
            double bsum = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) bsum += gybase[i];
            dbias.v[oc] += bsum;
            for (int ic = 0; ic < in_c_; ++ic)
                for (int ky = 0; ky < k_; ++ky) {
                    const auto [oy_lo, oy_hi] = tap_range(x_.h, oh, s_, p_, ky);
                    for (int kx = 0; kx < k_; ++kx) {
                        const auto [ox_lo, ox_hi] = tap_range(x_.w, ow, s_, p_, kx);
                        if (ox_lo > ox_hi) continue;
                        const int xoff = kx - p_;
                        const double wv = weight.at(oc, ic, ky, kx);
                        double wacc = 0.0;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * s_ - p_ + ky;
                            const double* xrow = &x_.v[x_.offset(n, ic, iy, 0)];
                            double* dxrow = &dx.v[dx.offset(n, ic, iy, 0)];
                            const double* gyrow = gybase + static_cast<std::size_t>(oy) * ow;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                const double g = gyrow[ox];
                                wacc += g * xrow[ox * s_ + xoff];
                                dxrow[ox * s_ + xoff] += wv * g;
                            }
                        }
                        dweight.at(oc, ic, ky, kx) += wacc;
                    }
                }
        }
    return dx;
}

BatchNorm2D::BatchNorm2D(int channels, double momentum, double eps)
    : c_(channels), momentum_(momentum), eps_(eps) {
    if (channels <= 0) throw ConfigError("batchnorm needs positive channel count");
    gamma = Tensor(c_, 1, 1, 1);
    beta = Tensor(c_, 1, 1, 1);
    dgamma = Tensor(c_, 1, 1, 1);
    dbeta = Tensor(c_, 1, 1, 1);
    running_mean = Tensor(c_, 1, 1, 1);
    running_var = Tensor(c_, 1, 1, 1);
    Rng unused(0);
    init_params(unused);
}

void BatchNorm2D::init_params(Rng&) {
    std::fill(gamma.v.begin(), gamma.v.end(), 1.0);
    std::fill(beta.v.begin(), beta.v.end(), 0.0);
    std::fill(running_mean.v.begin(), running_mean.v.end(), 0.0);
    std::fill(running_var.v.begin(), running_var.v.end(), 1.0);
}

std::vector<ParamRef> BatchNorm2D::params() {
    return {{"gamma", &gamma, &dgamma}, {"beta", &beta, &dbeta}};
}

std::vector<StateRef> BatchNorm2D::state() {
    return {{"running_mean", &running_mean}, {"running_var", &running_var}};
}

Tensor BatchNorm2D::forward(const Tensor& x, bool training) {
    require_shape(x.c == c_, "batchnorm expects " + std::to_string(c_) + " channels", x);
    trained_mode_ = training;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * static_cast<double>(plane);

    xhat_ = Tensor(x.n, x.c, x.h, x.w);
    inv_std_.assign(c_, 0.0);
    Tensor y(x.n, x.c, x.h, x.w);

    for (int c = 0; c < c_; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = &x.v[x.offset(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = s / m;
            double sq = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = &x.v[x.offset(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / m;
            running_mean.v[c] = momentum_ * running_mean.v[c] + (1.0 - momentum_) * mean;
            running_var.v[c] = momentum_ * running_var.v[c] + (1.0 - momentum_) * var;
        } else {
            mean = running_mean.v[c];
            var = running_var.v[c];
        }
        const double istd = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = istd;
        const double g = gamma.v[c];
        const double b = beta.v[c];
        for (int n = 0; n < x.n; ++n) {
            const double* p = &x.v[x.offset(n, c, 0, 0)];
            double* xh = &xhat_.v[xhat_.offset(n, c, 0, 0)];
            double* yo = &y.v[y.offset(n, c, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean) * istd;
                yo[i] = g * xh[i] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2D::backward(const Tensor& dy) {
    const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
    const double m = static_cast<double>(dy.n) * static_cast<double>(plane);
    Tensor dx(dy.n, dy.c, dy.h, dy.w);

    for (int c = 0; c < c_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.n; ++n) {
            const double* g = &dy.v[dy.offset(n, c, 0, 0)];
            const double* xh = &xhat_.v[xhat_.offset(n, c, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xh[i];
            }
        }
        dbeta.v[c] = sum_dy;
        dgamma.v[c] = sum_dy_xhat;
        const double k = gamma.v[c] * inv_std_[c];
        for (int n = 0; n < dy.n; ++n) {
            const double* g = &dy.v[dy.offset(n, c, 0, 0)];
            const double* xh = &xhat_.v[xhat_.offset(n, c, 0, 0)];
            double* out = &dx.v[dx.offset(n, c, 0, 0)];
            if (trained_mode_) {
                for (std::size_t i = 0; i < plane; ++i)
                    out[i] = k * (g[i] - sum_dy / m - xh[i] * sum_dy_xhat / m);
            } else {
                for (std::size_t i = 0; i < plane; ++i) out[i] = k * g[i];
            }
        }
    }
    return dx;
}

Tensor ReLU::forward(const Tensor& x, bool) {
    n_ = x.n;
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    mask_.resize(x.size());
    Tensor y(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = x.v[i] > 0.0;
        y.v[i] = mask_[i] ? x.v[i] : 0.0;
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx(n_, c_, h_, w_);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] = mask_[i] ? dy.v[i] : 0.0;
    return dx;
}

MaxPool2D::MaxPool2D(int kernel, int stride) : k_(kernel), s_(stride) {
    if (kernel <= 0 || stride <= 0) throw ConfigError("maxpool needs positive kernel and stride");
}

Tensor MaxPool2D::forward(const Tensor& x, bool) {
    require_shape(x.h >= k_ && x.w >= k_, "maxpool input smaller than kernel", x);
    in_n_ = x.n;
    in_c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    out_h_ = (x.h - k_) / s_ + 1;
    out_w_ = (x.w - k_) / s_ + 1;
    Tensor y(x.n, x.c, out_h_, out_w_);
    argmax_.assign(y.size(), 0);

    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < out_h_; ++oy)
                for (int ox = 0; ox < out_w_; ++ox) {
                    double best = -1e300;
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) {
                            const std::size_t idx = x.offset(n, c, oy * s_ + ky, ox * s_ + kx);
                            if (x.v[idx] > best) {
                                best = x.v[idx];
                                best_idx = idx;
                            }
                        }
                    const std::size_t o = y.offset(n, c, oy, ox);
                    y.v[o] = best;
                    argmax_[o] = best_idx;
                }
    return y;
}

Tensor MaxPool2D::backward(const Tensor& dy) {
    Tensor dx(in_n_, in_c_, in_h_, in_w_);
    for (std::size_t o = 0; o < dy.size(); ++o) dx.v[argmax_[o]] += dy.v[o];
    return dx;
}

Tensor Flatten::forward(const Tensor& x, bool) {
    in_c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor y(x.n, x.c * x.h * x.w, 1, 1);
    y.v = x.v;
    return y;
}

Tensor Flatten::backward(const Tensor& dy) {
    Tensor dx(dy.n, in_c_, in_h_, in_w_);
    dx.v = dy.v;
    return dx;
}

Dense::Dense(int in_features, int out_features) : in_f_(in_features), out_f_(out_features) {
    if (in_features <= 0 || out_features <= 0) throw ConfigError("dense needs positive feature counts");
    weight = Tensor(out_f_, in_f_, 1, 1);
    bias = Tensor(out_f_, 1, 1, 1);
    dweight = Tensor(out_f_, in_f_, 1, 1);
    dbias = Tensor(out_f_, 1, 1, 1);
}

void Dense::init_params(Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in_f_));
    for (double& v : weight.v) v = rng.uniform(-b, b);
    std::fill(bias.v.begin(), bias.v.end(), 0.0);
}

std::vector<ParamRef> Dense::params() {
    return {{"weight", &weight, &dweight}, {"bias", &bias, &dbias}};
}

Tensor Dense::forward(const Tensor& x, bool) {
    require_shape(x.c == in_f_ && x.h == 1 && x.w == 1,
                  "dense expects [N," + std::to_string(in_f_) + ",1,1]", x);
    x_ = x;
    Tensor y(x.n, out_f_, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        const double* xr = &x.v[static_cast<std::size_t>(n) * in_f_];
        double* yr = &y.v[static_cast<std::size_t>(n) * out_f_];
        for (int o = 0; o < out_f_; ++o) {
            const double* wr = &weight.v[static_cast<std::size_t>(o) * in_f_];
            double acc = bias.v[o];
            for (int i = 0; i < in_f_; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

Tensor Dense::backward(const Tensor& dy) {
    Tensor dx(x_.n, in_f_, 1, 1);
    std::fill(dweight.v.begin(), dweight.v.end(), 0.0);
    std::fill(dbias.v.begin(), dbias.v.end(), 0.0);
    for (int n = 0; n < x_.n; ++n) {
        const double* xr = &x_.v[static_cast<std::size_t>(n) * in_f_];
        const double* gr = &dy.v[static_cast<std::size_t>(n) * out_f_];
        double* dxr = &dx.v[static_cast<std::size_t>(n) * in_f_];
        for (int o = 0; o < out_f_; ++o) {
            const double g = gr[o];
            dbias.v[o] += g;
            const double* wr = &weight.v[static_cast<std::size_t>(o) * in_f_];
            double* dwr = &dweight.v[static_cast<std::size_t>(o) * in_f_];
            for (int i = 0; i < in_f_; ++i) {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    return dx;
}

std::vector<double> softmax(const std::vector<double>& z) {
    if (z.empty()) throw DomainError("softmax of an empty vector");
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> softmax_backward(const std::vector<double>& p, const std::vector<double>& dp) {
    if (p.size() != dp.size()) throw ShapeError("softmax_backward size mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
    std::vector<double> dz(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - dot);
    return dz;
}

namespace {

struct TrunkSpec {
    std::vector<std::unique_ptr<Layer>> layers;
    int features = 0;  // trunk output feature count
};

void push_conv_block(std::vector<std::unique_ptr<Layer>>& ls, int in_c, int out_c, int stride,
                     int padding) {
    ls.push_back(std::make_unique<Conv2D>(in_c, out_c, 3, stride, padding));
    ls.push_back(std::make_unique<BatchNorm2D>(out_c));
    ls.push_back(std::make_unique<ReLU>());
}

TrunkSpec build_trunk(const ModelConfig& cfg) {
    TrunkSpec t;
    int c = cfg.input_channels, h = cfg.input_height, w = cfg.input_width;
    auto conv = [&](int out_c, int stride, int padding) {
        push_conv_block(t.layers, c, out_c, stride, padding);
        c = out_c;
        h = conv_extent(h, 3, stride, padding);
        w = conv_extent(w, 3, stride, padding);
        if (h < 1 || w < 1) throw ConfigError("input too small for preset '" + cfg.preset + "'");
    };
    auto pool = [&] {
        t.layers.push_back(std::make_unique<MaxPool2D>(2, 2));
        if (h < 2 || w < 2) throw ConfigError("input too small for preset '" + cfg.preset + "'");
        h = (h - 2) / 2 + 1;
        w = (w - 2) / 2 + 1;
    };
    auto dense = [&](int out_f) {
        t.layers.push_back(std::make_unique<Dense>(c * h * w, out_f));
        c = out_f;
        h = w = 1;
    };
    auto flatten = [&] { t.layers.push_back(std::make_unique<Flatten>()); };
    auto relu = [&] { t.layers.push_back(std::make_unique<ReLU>()); };

    if (cfg.preset == "desk") {
        conv(16, 1, 0);
        pool();
        conv(32, 1, 0);
        pool();
        conv(32, 1, 1);
        pool();
        conv(64, 1, 1);
        flatten();
        c = c * h * w;
        h = w = 1;
        dense(128);
        relu();
    } else if (cfg.preset == "compact") {
        conv(8, 1, 0);
        pool();
        conv(16, 1, 0);
        pool();
        flatten();
        c = c * h * w;
        h = w = 1;
        dense(64);
        relu();
    } else if (cfg.preset == "deep") {
        conv(32, 1, 1);
        conv(32, 1, 1);
        conv(64, 2, 1);
        conv(64, 1, 1);
        conv(128, 1, 1);
        conv(128, 2, 1);
        conv(256, 1, 1);
        conv(64, 1, 1);
        conv(32, 2, 1);
        pool();
        flatten();
        c = c * h * w;
        h = w = 1;
        dense(1024);
        relu();
        dense(512);
        relu();
        dense(128);
        relu();
    } else {
        throw ConfigError("unknown model preset '" + cfg.preset + "'");
    }
    t.features = c;
    return t;
}

std::string layer_prefix(const std::string& group, std::size_t idx, const Layer& l) {
    return group + "." + std::to_string(idx) + "." + l.kind();
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    TrunkSpec spec = build_trunk(cfg);
    trunk_ = std::move(spec.layers);
    for (int hHead = 0; hHead < data::kLabelLength; ++hHead)
        heads_.push_back(std::make_unique<Dense>(spec.features, data::kNumClasses));

    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        Rng rng(derive_seed(seed, layer_prefix("trunk", i, *trunk_[i])));
        trunk_[i]->init_params(rng);
    }
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        Rng rng(derive_seed(seed, layer_prefix("head", i, *heads_[i])));
        heads_[i]->init_params(rng);
    }
}

Model::Model(const Model& other) : cfg_(other.cfg_) {
    trunk_.reserve(other.trunk_.size());
    for (const auto& l : other.trunk_) trunk_.push_back(l->clone());
    heads_.reserve(other.heads_.size());
    for (const auto& l : other.heads_) heads_.push_back(l->clone());
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

Tensor Model::forward(const Tensor& x, bool training) {
    require_shape(x.c == cfg_.input_channels && x.h == cfg_.input_height && x.w == cfg_.input_width,
                  "model expects [N," + std::to_string(cfg_.input_channels) + "," +
                      std::to_string(cfg_.input_height) + "," + std::to_string(cfg_.input_width) + "]",
                  x);
    Tensor t = x;
    for (auto& l : trunk_) t = l->forward(t, training);

    Tensor probs(x.n, data::kLabelLength, data::kNumClasses, 1);
    std::vector<double> row(data::kNumClasses);
    for (std::size_t hI = 0; hI < heads_.size(); ++hI) {
        Tensor logits = heads_[hI]->forward(t, training);
        for (int n = 0; n < x.n; ++n) {
            for (int k = 0; k < data::kNumClasses; ++k) row[k] = logits.at(n, k, 0, 0);
            const std::vector<double> p = softmax(row);
            for (int k = 0; k < data::kNumClasses; ++k)
                probs.at(n, static_cast<int>(hI), k, 0) = p[k];
        }
    }
    return probs;
}

Tensor Model::backward(const Tensor& dlogits) {
    require_shape(dlogits.c == data::kLabelLength && dlogits.h == data::kNumClasses && dlogits.w == 1,
                  "model backward expects [N,4,36,1]", dlogits);
    Tensor dtrunk;
    for (std::size_t hI = 0; hI < heads_.size(); ++hI) {
        Tensor dy(dlogits.n, data::kNumClasses, 1, 1);
        for (int n = 0; n < dlogits.n; ++n)
            for (int k = 0; k < data::kNumClasses; ++k)
                dy.at(n, k, 0, 0) = dlogits.at(n, static_cast<int>(hI), k, 0);
        Tensor dh = heads_[hI]->backward(dy);
        if (hI == 0) {
            dtrunk = std::move(dh);
        } else {
            for (std::size_t i = 0; i < dtrunk.size(); ++i) dtrunk.v[i] += dh.v[i];
        }
    }
    for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) dtrunk = (*it)->backward(dtrunk);
    return dtrunk;
}

std::vector<ParamRef> Model::params() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < trunk_.size(); ++i)
        for (ParamRef p : trunk_[i]->params())
            out.push_back({layer_prefix("trunk", i, *trunk_[i]) + "." + p.name, p.value, p.grad});
    for (std::size_t i = 0; i < heads_.size(); ++i)
        for (ParamRef p : heads_[i]->params())
            out.push_back({layer_prefix("head", i, *heads_[i]) + "." + p.name, p.value, p.grad});
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_layer = [&](const std::string& group, std::size_t i, Layer& l) {
        for (ParamRef p : l.params()) out.emplace_back(layer_prefix(group, i, l) + "." + p.name, p.value);
        for (StateRef s : l.state()) out.emplace_back(layer_prefix(group, i, l) + "." + s.name, s.value);
    };
    for (std::size_t i = 0; i < trunk_.size(); ++i) add_layer("trunk", i, *trunk_[i]);
    for (std::size_t i = 0; i < heads_.size(); ++i) add_layer("head", i, *heads_[i]);
    return out;
}

std::size_t Model::param_count() {
    std::size_t n = 0;
    for (const ParamRef& p : params()) n += p.value->size();
    return n;
}

void Adam::step(const std::vector<ParamRef>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const ParamRef& p : params) {
        auto& [m, v] = slots_[p.name];
        if (m.empty()) {
            m.assign(p.value->size(), 0.0);
            v.assign(p.value->size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value->size(); ++i) {
            const double g = p.grad->v[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value->v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

Tensor to_tensor(const data::Image& img) {
    Tensor t(1, img.channels, img.height, img.width);
    t.v = img.values;
    return t;
}

Tensor batch_tensor(const std::vector<data::Sample>& samples, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ShapeError("empty batch");
    for (std::size_t k : idx)
        if (k >= samples.size())
            throw BoundsError("batch index " + std::to_string(k) + " out of range for " +
                              std::to_string(samples.size()) + " samples");
    const data::Image& first = samples[idx[0]].image;
    Tensor t(static_cast<int>(idx.size()), first.channels, first.height, first.width);
    const std::size_t stride = first.values.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const data::Image& img = samples[idx[k]].image;
        if (img.values.size() != stride) throw ShapeError("mixed image shapes in one batch");
        std::copy(img.values.begin(), img.values.end(), t.v.begin() + k * stride);
    }
    return t;
}

std::vector<data::CaptchaLabel> batch_labels(const std::vector<data::Sample>& samples,
                                             const std::vector<std::size_t>& idx) {
    std::vector<data::CaptchaLabel> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        if (i >= samples.size())
            throw BoundsError("batch index " + std::to_string(i) + " out of range for " +
                              std::to_string(samples.size()) + " samples");
        out.push_back(samples[i].label);
    }
    return out;
}

double cross_entropy(const Tensor& probs, const std::vector<data::CaptchaLabel>& labels) {
    if (static_cast<std::size_t>(probs.n) != labels.size())
        throw ShapeError("probability batch and label count differ");
    double total = 0.0;
    for (int n = 0; n < probs.n; ++n)
        for (int hI = 0; hI < data::kLabelLength; ++hI) {
            const double p = probs.at(n, hI, labels[n].chars[hI], 0);
            total += -std::log(std::max(p, 1e-12));
        }
    return total / probs.n;
}

Tensor ce_logit_grad(const Tensor& probs, const std::vector<data::CaptchaLabel>& labels) {
    if (static_cast<std::size_t>(probs.n) != labels.size())
        throw ShapeError("probability batch and label count differ");
    Tensor d(probs.n, probs.c, probs.h, probs.w);
    const double invn = 1.0 / probs.n;
    for (int n = 0; n < probs.n; ++n)
        for (int hI = 0; hI < data::kLabelLength; ++hI)
            for (int k = 0; k < data::kNumClasses; ++k) {
                const double onehot = labels[n].chars[hI] == k ? 1.0 : 0.0;
                d.at(n, hI, k, 0) = (probs.at(n, hI, k, 0) - onehot) * invn;
            }
    return d;
}

double uniform_guess_loss() {
    return data::kLabelLength * std::log(static_cast<double>(data::kNumClasses));
}

std::array<int, data::kLabelLength> argmax_heads(const Tensor& probs, int n) {
    std::array<int, data::kLabelLength> out{};
    for (int hI = 0; hI < data::kLabelLength; ++hI) {
        int best = 0;
        double bv = probs.at(n, hI, 0, 0);
        for (int k = 1; k < data::kNumClasses; ++k)
            if (probs.at(n, hI, k, 0) > bv) {
                bv = probs.at(n, hI, k, 0);
                best = k;
            }
        out[hI] = best;
    }
    return out;
}

data::CaptchaLabel predict_label(Model& model, const data::Image& img) {
    const Tensor probs = model.forward(to_tensor(img), false);
    const auto heads = argmax_heads(probs, 0);
    data::CaptchaLabel l;
    for (int i = 0; i < data::kLabelLength; ++i) l.chars[i] = static_cast<std::uint8_t>(heads[i]);
    return l;
}

TrainStats train(Model& model, const std::vector<data::Sample>& samples, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_epoch) {
    if (samples.empty()) throw ConfigError("cannot train on an empty sample set");
    if (cfg.epochs < 0 || cfg.batch_size <= 0) throw ConfigError("bad train config");

    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    const std::vector<ParamRef> params = model.params();

    TrainStats stats;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0x45504F43ULL + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
            const Tensor x = batch_tensor(samples, idx);
            const auto labels = batch_labels(samples, idx);

            const Tensor probs = model.forward(x, true);
            const double loss = cross_entropy(probs, labels);
            loss_sum += loss * static_cast<double>(idx.size());
            model.backward(ce_logit_grad(probs, labels));
            opt.step(params);
        }
        const double epoch_loss = loss_sum / static_cast<double>(samples.size());
        stats.epoch_losses.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    return stats;
}

EvalResult evaluate(Model& model, const std::vector<data::Sample>& samples, int batch_size) {
    if (samples.empty()) throw ShapeError("cannot evaluate on an empty sample set");
    if (batch_size <= 0) throw ConfigError("bad eval batch size");

    EvalResult r;
    std::array<std::size_t, data::kLabelLength> head_hits{};
    std::size_t captcha_hits = 0;
    double loss_sum = 0.0;

    std::vector<std::size_t> idx;
    for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
        const std::size_t hi = std::min(samples.size(), lo + batch_size);
        idx.resize(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const Tensor x = batch_tensor(samples, idx);
        const auto labels = batch_labels(samples, idx);
        const Tensor probs = model.forward(x, false);
        loss_sum += cross_entropy(probs, labels) * static_cast<double>(idx.size());

        for (int n = 0; n < probs.n; ++n) {
            const auto pred = argmax_heads(probs, n);
            bool all = true;
            for (int hI = 0; hI < data::kLabelLength; ++hI) {
                if (pred[hI] == labels[n].chars[hI])
                    ++head_hits[hI];
                else
                    all = false;
            }
            if (all) ++captcha_hits;
        }
    }

    const double n = static_cast<double>(samples.size());
    std::size_t total_hits = 0;
    for (int hI = 0; hI < data::kLabelLength; ++hI) {
        r.head_accuracy[hI] = static_cast<double>(head_hits[hI]) / n;
        total_hits += head_hits[hI];
    }
    r.per_char_accuracy = static_cast<double>(total_hits) / (n * data::kLabelLength);
    r.captcha_accuracy = static_cast<double>(captcha_hits) / n;
    r.mean_loss = loss_sum / n;
    return r;
}

namespace {
constexpr char kModelMagic[4] = {'A', 'C', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(Model& model, const std::string& path) {
    nlohmann::json j;
    j["preset"] = model.config().preset;
    j["input_height"] = model.config().input_height;
    j["input_width"] = model.config().input_width;
    j["input_channels"] = model.config().input_channels;

    BinWriter w(path);
    w.magic(kModelMagic);
    w.u32(kModelVersion);
    w.str(j.dump());
    const auto tensors = model.named_tensors();
    w.u64(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.f64_block(t->v);
    }
    w.close();
}

Model load_model(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kModelMagic, "model checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kModelVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kModelVersion) + "): " + path);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint config block in " + path + ": " + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.preset = j.at("preset").get<std::string>();
        cfg.input_height = j.at("input_height").get<int>();
        cfg.input_width = j.at("input_width").get<int>();
        cfg.input_channels = j.at("input_channels").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint config block in " + path + ": " + e.what());
    }

    Model model(cfg, 0);
    std::unordered_map<std::string, std::vector<double>> blocks;
    const std::uint64_t count = r.u64();
    if (count > 1'000'000) throw FormatError("tensor count out of range in " + path);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str(1 << 12);
        if (!blocks.emplace(std::move(name), r.f64_block()).second)
            throw FormatError("duplicate tensor block in " + path);
    }
    r.expect_eof();

    auto tensors = model.named_tensors();
    if (tensors.size() != blocks.size())
        throw FormatError("checkpoint holds " + std::to_string(blocks.size()) + " tensors, model needs " +
                          std::to_string(tensors.size()) + ": " + path);
    for (auto& [name, t] : tensors) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw FormatError("checkpoint missing tensor '" + name + "': " + path);
        if (it->second.size() != t->size())
            throw FormatError("tensor '" + name + "' has wrong size in " + path);
        t->v = std::move(it->second);
    }
    return model;
}

}  // namespace caparena::net
