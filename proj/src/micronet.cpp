// SPDX-License-Identifier: Apache-2.0
#include "mspt/micronet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "mspt/errors.hpp"

namespace mspt {

ArchConfig ArchConfig::desk_default() {
    ArchConfig arch;
    arch.blocks = {
        {8, 16, 2, 2, true},
        {16, 24, 3, 2, true},
        {24, 24, 3, 1, true},
    };
    return arch;
}

void ArchConfig::validate() const {
    if (in_channels == 0 || stem_channels == 0 || head_channels == 0 || hidden_width == 0) {
        throw ConfigError("arch: channel counts must be positive");
    }
    std::size_t prev = stem_channels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string where = "arch.blocks[" + std::to_string(i) + "]";
        if (b.in_channels != prev) {
            throw ConfigError(where + ": in_channels " + std::to_string(b.in_channels) + " != previous width " +
                              std::to_string(prev));
        }
        if (b.out_channels == 0) throw ConfigError(where + ": out_channels must be positive");
        if (b.expansion == 0) throw ConfigError(where + ": expansion must be positive");
        if (b.stride != 1 && b.stride != 2) throw ConfigError(where + ": stride must be 1 or 2");
        if (b.use_se && b.hidden_channels() < 4) throw ConfigError(where + ": squeeze-excite needs >= 4 channels");
        prev = b.out_channels;
    }
}

std::string ArchConfig::canonical() const {
    std::ostringstream os;
    os << "mspt-arch/1;in=" << in_channels << ";stem=" << stem_channels;
    for (const auto& b : blocks) {
        os << ";block=" << b.in_channels << ',' << b.out_channels << ',' << b.expansion << ',' << b.stride << ','
           << (b.use_se ? 1 : 0);
    }
    os << ";head=" << head_channels << ',' << hidden_width << ";out=" << activation_name(output);
    return os.str();
}

Digest ArchConfig::fingerprint() const { return sha256(canonical()); }

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) { return (in + 2 * p - k) / s + 1; }

struct LedgerBuilder {
    std::vector<LayerInfo> layers;
    std::size_t h, w;

    void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t s,
              std::size_t groups) {
        LayerInfo l;
        l.name = name;
        l.kind = LayerKind::conv;
        l.in_channels = cin;
        l.out_channels = cout;
        l.kernel = k;
        l.stride = s;
        l.padding = k / 2;
        l.groups = groups;
        l.in_h = h;
        l.in_w = w;
        h = conv_out(h, k, s, l.padding);
        w = conv_out(w, k, s, l.padding);
        l.out_h = h;
        l.out_w = w;
        layers.push_back(l);
    }
    void bn(const std::string& name, std::size_t c) {
        LayerInfo l;
        l.name = name;
        l.kind = LayerKind::batch_norm;
        l.in_channels = l.out_channels = c;
        l.in_h = l.out_h = h;
        l.in_w = l.out_w = w;
        layers.push_back(l);
    }
    void fc(const std::string& name, std::size_t fin, std::size_t fout) {
        LayerInfo l;
        l.name = name;
        l.kind = LayerKind::linear;
        l.in_channels = fin;
        l.out_channels = fout;
        l.bias = true;
        layers.push_back(l);
    }
};

std::size_t se_width(std::size_t c) { return c / 4; }

} // namespace

std::vector<LayerInfo> describe_layers(const ArchConfig& arch, std::size_t resolution) {
    arch.validate();
    LedgerBuilder lb{{}, resolution, resolution};
    lb.conv("stem.conv", arch.in_channels, arch.stem_channels, 3, 2, 1);
    lb.bn("stem.bn", arch.stem_channels);
    for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
        const auto& b = arch.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        const std::size_t hid = b.hidden_channels();
        lb.conv(p + "expand.conv", b.in_channels, hid, 1, 1, 1);
        lb.bn(p + "expand.bn", hid);
        lb.conv(p + "dw.conv", hid, hid, 3, b.stride, hid);
        lb.bn(p + "dw.bn", hid);
        if (b.use_se) {
            lb.fc(p + "se.reduce", hid, se_width(hid));
            lb.fc(p + "se.expand", se_width(hid), hid);
        }
        lb.conv(p + "project.conv", hid, b.out_channels, 1, 1, 1);
        lb.bn(p + "project.bn", b.out_channels);
    }
    const std::size_t last = arch.blocks.empty() ? arch.stem_channels : arch.blocks.back().out_channels;
    lb.conv("head.conv", last, arch.head_channels, 1, 1, 1);
    lb.bn("head.bn", arch.head_channels);
    lb.fc("head.fc1", arch.head_channels, arch.hidden_width);
    lb.fc("head.fc2", arch.hidden_width, 1);
    return lb.layers;
}

// ---------------------------------------------------------------------------

std::size_t ModelState::num_learnable() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
}

const Tensor& ModelState::param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    throw InvalidArgument("no parameter named " + name);
}

void ModelState::zero_grad() {
    for (auto& p : params) p.value.zero_grad();
}

ModelState ModelState::clone() const {
    ModelState out = *this;
    for (auto& p : out.params) {
        const bool rg = p.value.requires_grad();
        p.value = p.value.detach();
        p.value.set_requires_grad(rg);
    }
    return out;
}

bool ModelState::same_params(const ModelState& other) const {
    if (fingerprint != other.fingerprint || params.size() != other.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto a = params[i].value.values();
        const auto b = other.params[i].value.values();
        if (params[i].name != other.params[i].name || a.size() != b.size()) return false;
        if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

bool ModelState::identical_to(const ModelState& other) const {
    if (!same_params(other) || step != other.step || bn_stale != other.bn_stale) return false;
    if (bn_stats.size() != other.bn_stats.size()) return false;
    for (std::size_t i = 0; i < bn_stats.size(); ++i) {
        const auto& a = bn_stats[i].stats;
        const auto& b = other.bn_stats[i].stats;
        if (a.initialized != b.initialized || a.mean.size() != b.mean.size()) return false;
        if (std::memcmp(a.mean.data(), b.mean.data(), a.mean.size() * sizeof(double)) != 0) return false;
        if (std::memcmp(a.var.data(), b.var.data(), a.var.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

ModelState build_model(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    ModelState model;
    model.arch = arch;
    model.fingerprint = arch.fingerprint();

    std::mt19937_64 rng(seed);
    auto he_uniform = [&](Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = dist(rng);
        return Tensor::from(std::move(shape), std::move(v), true);
    };

    for (const auto& l : describe_layers(arch, 64)) {
        switch (l.kind) {
        case LayerKind::conv: {
            const std::size_t cin_g = l.in_channels / l.groups;
            model.params.push_back({l.name + ".weight",
                                    he_uniform({l.out_channels, cin_g, l.kernel, l.kernel}, cin_g * l.kernel * l.kernel)});
            if (l.bias) model.params.push_back({l.name + ".bias", Tensor::zeros({l.out_channels}, true)});
            break;
        }
        case LayerKind::batch_norm:
            model.params.push_back({l.name + ".gamma", Tensor::full({l.out_channels}, 1.0, true)});
            model.params.push_back({l.name + ".beta", Tensor::zeros({l.out_channels}, true)});
            model.bn_stats.push_back({l.name, RunningStats::fresh(l.out_channels)});
            break;
        case LayerKind::linear:
            model.params.push_back({l.name + ".weight", he_uniform({l.out_channels, l.in_channels}, l.in_channels)});
            model.params.push_back({l.name + ".bias", Tensor::zeros({l.out_channels}, true)});
            break;
        }
    }
    return model;
}

// ---------------------------------------------------------------------------

namespace {

// Walks parameters and running stats in build order.
class ForwardPass {
public:
    ForwardPass(const ModelState& model, std::vector<NamedStats>* stats, const ForwardOptions& opts)
        : model_(model), stats_(stats), opts_(opts) {}

    Tensor run(const Tensor& batch) {
        const auto& arch = model_.arch;
        if (batch.rank() != 4) throw InvalidArgument("forward: batch must be NCHW, got " + shape_str(batch.shape()));
        if (batch.dim(1) != arch.in_channels) {
            throw InvalidArgument("forward: channel dim 1 is " + std::to_string(batch.dim(1)) + ", model expects " +
                                  std::to_string(arch.in_channels));
        }
        if (batch.dim(2) < 16 || batch.dim(3) < 16) {
            throw InvalidArgument("forward: spatial dims must be >= 16, got " + shape_str(batch.shape()));
        }
        if (opts_.mode == BnMode::eval && model_.bn_stale) {
            throw StateError("forward: batch-norm running stats are stale; recompute them first");
        }

        Tensor x = conv_bn_act(batch, 2, 1, Activation::hard_swish);
        for (const auto& b : arch.blocks) {
            Tensor in = x;
            const std::size_t hid = b.hidden_channels();
            x = conv_bn_act(x, 1, 1, Activation::hard_swish);
            x = conv_bn_act(x, b.stride, hid, Activation::hard_swish);
            if (b.use_se) x = squeeze_excite(x);
            x = conv_bn_act(x, 1, 1, Activation::identity);
            if (b.has_residual()) x = add(x, in);
        }
        x = conv_bn_act(x, 1, 1, Activation::hard_swish);
        x = global_avg_pool(x);
        x = reshape(x, {x.dim(0), x.dim(1)});
        x = apply_activation(Activation::hard_swish, dense(x));
        x = dense(x);
        return apply_activation(arch.output, x);
    }

private:
    const Tensor& next_param() { return model_.params.at(cursor_++).value; }

    Tensor conv_bn_act(const Tensor& x, std::size_t stride, std::size_t groups, Activation act) {
        const Tensor& w = next_param();
        Tensor y = conv2d(x, w, Tensor{}, {stride, w.dim(2) / 2, groups});
        const Tensor& gamma = next_param();
        const Tensor& beta = next_param();
        BatchNormOptions bo{opts_.mode, opts_.bn_momentum, opts_.bn_epsilon, true};
        if (opts_.mode == BnMode::train) {
            y = batch_norm(y, gamma, beta, (*stats_)[bn_cursor_++].stats, bo);
        } else {
            RunningStats s = model_.bn_stats.at(bn_cursor_++).stats;
            y = batch_norm(y, gamma, beta, s, bo);
        }
        return act == Activation::identity ? y : apply_activation(act, y);
    }

    Tensor dense(const Tensor& x) {
        const Tensor& w = next_param();
        const Tensor& b = next_param();
        return linear(x, w, b);
    }

    Tensor squeeze_excite(const Tensor& x) {
        Tensor s = global_avg_pool(x);
        s = reshape(s, {x.dim(0), x.dim(1)});
        s = apply_activation(Activation::relu, dense(s));
        s = apply_activation(Activation::hard_sigmoid, dense(s));
        return channel_scale(x, s);
    }

    const ModelState& model_;
    std::vector<NamedStats>* stats_;
    ForwardOptions opts_;
    std::size_t cursor_ = 0;
    std::size_t bn_cursor_ = 0;
};

} // namespace

Tensor forward(ModelState& model, const Tensor& batch, const ForwardOptions& opts) {
    ForwardPass pass(model, &model.bn_stats, opts);
    return pass.run(batch);
}

Tensor predict(const ModelState& model, const Tensor& batch) {
    NoGradGuard guard;
    ForwardPass pass(model, nullptr, ForwardOptions{BnMode::eval});
    return pass.run(batch);
}

// ---------------------------------------------------------------------------
// Checkpoint file: "MSPT" | u32 version | 32-byte fingerprint | u64 step |
// u32 flags | u32 record count | records. A record is u32 name length, UTF-8
// name, u32 rank, u64 dims, little-endian f64 payload.

namespace {

constexpr char kMagic[4] = {'M', 'S', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kFlagBnStale = 1u;

class Writer {
public:
    explicit Writer(std::ofstream& out) : out_(out) {}
    template <typename T>
    void put(T v) {
        static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

private:
    std::ofstream& out_;
};

class Reader {
public:
    Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
    template <typename T>
    T get() {
        unsigned char buf[sizeof(T)];
        take(buf, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }
    void take(void* dst, std::size_t n) {
        if (n > data_.size() - pos_) throw FormatError(path_ + ": truncated checkpoint at byte " + std::to_string(pos_));
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    std::vector<char> data_;
    std::size_t pos_ = 0;
    std::string path_;
};

void write_record(Writer& w, const std::string& name, const Shape& shape, std::span<const double> values) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put<std::uint64_t>(d);
    for (double v : values) w.put<double>(v);
}

} // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    Writer w(out);
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kFormatVersion);
    w.bytes(model.fingerprint.data(), model.fingerprint.size());
    w.put<std::uint64_t>(model.step);
    w.put<std::uint32_t>(model.bn_stale ? kFlagBnStale : 0u);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.params.size() + 2 * model.bn_stats.size()));
    for (const auto& p : model.params) write_record(w, p.name, p.value.shape(), p.value.values());
    for (const auto& s : model.bn_stats) {
        const Shape shape{s.stats.mean.size()};
        write_record(w, s.name + ".running_mean", shape, s.stats.mean);
        write_record(w, s.name + ".running_var", shape, s.stats.var);
    }
    out.flush();
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path.string());

    char magic[4];
    r.take(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not an MSPT checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    Digest fp{};
    r.take(fp.data(), fp.size());
    if (fp != arch.fingerprint()) {
        throw IncompatibleArchitecture(path.string() + ": fingerprint " + to_hex(fp) + " does not match architecture " +
                                       to_hex(arch.fingerprint()));
    }

    ModelState model = build_model(arch, 0);
    model.step = r.get<std::uint64_t>();
    model.bn_stale = (r.get<std::uint32_t>() & kFlagBnStale) != 0;
    const auto count = r.get<std::uint32_t>();
    if (count != model.params.size() + 2 * model.bn_stats.size()) {
        throw FormatError(path.string() + ": expected " +
                          std::to_string(model.params.size() + 2 * model.bn_stats.size()) + " records, found " +
                          std::to_string(count));
    }

    auto read_into = [&](const std::string& expected_name, const Shape& expected_shape, std::span<double> dst) {
        const auto name_len = r.get<std::uint32_t>();
        if (name_len > 4096) throw FormatError(path.string() + ": implausible record name length");
        std::string name(name_len, '\0');
        r.take(name.data(), name_len);
        if (name != expected_name) {
            throw FormatError(path.string() + ": expected record " + expected_name + ", found " + name);
        }
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        if (shape != expected_shape) {
            throw FormatError(path.string() + ": record " + name + " has shape " + shape_str(shape) + ", expected " +
                              shape_str(expected_shape));
        }
        for (auto& v : dst) v = r.get<double>();
    };

    for (auto& p : model.params) read_into(p.name, p.value.shape(), p.value.mutable_values());
    for (auto& s : model.bn_stats) {
        const Shape shape{s.stats.mean.size()};
        read_into(s.name + ".running_mean", shape, s.stats.mean);
        read_into(s.name + ".running_var", shape, s.stats.var);
        s.stats.initialized = true;
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last record");
    return model;
}

// ---------------------------------------------------------------------------

ModelState average_weights(const std::vector<ModelState>& checkpoints) {
    if (checkpoints.empty()) throw InvalidArgument("average_weights: empty checkpoint list");
    const auto& first = checkpoints.front();
    for (std::size_t k = 1; k < checkpoints.size(); ++k) {
        if (checkpoints[k].fingerprint != first.fingerprint) {
            throw IncompatibleArchitecture("average_weights: checkpoint " + std::to_string(k) +
                                           " has a different architecture fingerprint");
        }
    }

    ModelState out = first.clone();
    const double k_count = static_cast<double>(checkpoints.size());
    for (std::size_t i = 0; i < out.params.size(); ++i) {
        auto acc = out.params[i].value.mutable_values();
        for (std::size_t k = 1; k < checkpoints.size(); ++k) {
            const auto src = checkpoints[k].params[i].value.values();
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += src[j];
        }
        for (auto& v : acc) v /= k_count;
    }
    out.step = checkpoints.back().step;
    out.bn_stale = true;
    return out;
}

ModelState recompute_bn_stats(const ModelState& model, const std::vector<Tensor>& batches) {
    if (batches.empty()) throw InvalidArgument("recompute_bn_stats: empty batch stream");
    ModelState out = model.clone();
    for (auto& s : out.bn_stats) s.stats = RunningStats::fresh(s.stats.mean.size());
    NoGradGuard guard;
    for (std::size_t k = 0; k < batches.size(); ++k) {
        // momentum 1/(k+1) turns the exponential update into a running mean.
        ForwardOptions opts{BnMode::train, 1.0 / static_cast<double>(k + 1)};
        forward(out, batches[k], opts);
    }
    out.bn_stale = false;
    return out;
}

} // namespace mspt
